//! The MSDG weight container: a flat binary file of named float arrays.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes   "MSDG"
//! version u32       currently 1
//! count   u32       number of arrays
//! per array:
//!   name_len u32
//!   name     UTF-8 bytes
//!   rank     u32
//!   dims     u32 each
//!   data     f32 little-endian IEEE-754, row-major, prod(dims) values
//! ```
//!
//! Array order is preserved on read and write, so a load/store cycle is
//! byte-identical.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"MSDG";
pub const VERSION: u32 = 1;

/// One named array: shape plus flat row-major data.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedArray {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Container(format!(
                "array data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(NamedArray { shape, data })
    }

    pub fn scalar(v: f32) -> Self {
        NamedArray {
            shape: vec![1],
            data: vec![v],
        }
    }
}

/// Read-only-after-load store of named arrays, insertion-ordered.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    arrays: IndexMap<String, NamedArray>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, array: NamedArray) {
        self.arrays.insert(name.into(), array);
    }

    pub fn insert_values<T: Real>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        values: &[T],
    ) -> Result<()> {
        let data = values
            .iter()
            .map(|v| v.to_f32().unwrap_or(f32::NAN))
            .collect();
        self.insert(name, NamedArray::new(shape, data)?);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(|s| s.as_str())
    }

    /// Looks up an array and checks its shape against the caller's
    /// expectation. Each lookup either matches exactly or fails loudly.
    pub fn get(&self, name: &str, expected_shape: &[usize]) -> Result<&NamedArray> {
        let arr = self
            .arrays
            .get(name)
            .ok_or_else(|| Error::MissingWeights(name.to_string()))?;
        if arr.shape != expected_shape {
            return Err(Error::ShapeMismatch {
                layer: name.to_string(),
                detail: format!("stored shape {:?}, requested {:?}", arr.shape, expected_shape),
            });
        }
        Ok(arr)
    }

    /// Shape-checked lookup converted into the working scalar type.
    pub fn get_values<T: Real>(&self, name: &str, expected_shape: &[usize]) -> Result<Vec<T>> {
        let arr = self.get(name, expected_shape)?;
        Ok(arr.data.iter().map(|&v| T::of(v as f64)).collect())
    }

    /// Lookup without a shape expectation; used when the shape itself is the
    /// information being recovered.
    pub fn get_any(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::MissingWeights(name.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, arr) in &self.arrays {
            let name_bytes = name.as_bytes();
            out.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
            out.extend_from_slice(name_bytes);
            out.extend_from_slice(&(arr.shape.len() as u32).to_le_bytes());
            for &d in &arr.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &arr.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor { bytes, pos: 0 };
        let magic = cursor.take(4)?;
        if magic != MAGIC {
            return Err(Error::Container(format!(
                "bad magic {:?}, expected {:?}",
                &magic[..magic.len().min(4)],
                MAGIC
            )));
        }
        let version = cursor.read_u32()?;
        if version != VERSION {
            return Err(Error::Container(format!(
                "unsupported container version {version}"
            )));
        }
        let count = cursor.read_u32()? as usize;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let name_len = cursor.read_u32()? as usize;
            let name_bytes = cursor.take(name_len)?;
            let name = std::str::from_utf8(name_bytes)
                .map_err(|_| Error::Container("array name is not valid UTF-8".into()))?
                .to_string();
            let rank = cursor.read_u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cursor.read_u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f32::from_le_bytes(cursor.take(4)?.try_into().unwrap()));
            }
            if store.arrays.insert(name.clone(), NamedArray { shape, data }).is_some() {
                return Err(Error::Container(format!("duplicate array name `{name}`")));
            }
        }
        if cursor.pos != bytes.len() {
            return Err(Error::Container(format!(
                "{} trailing bytes after last array",
                bytes.len() - cursor.pos
            )));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Container(msg) => {
                Error::Container(format!("{}: {msg}", path.as_ref().display()))
            }
            other => other,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Container("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn read_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
