//! Feature-graph construction: node localization on a feature map, feature
//! sampling at the localized coordinates, and the Gaussian-kernel spatial
//! adjacency.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::container::WeightStore;
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Real};
use crate::tensor::{forward_network, sln_spec, Tensor3};

/// Which convolutional block a graph came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScaleId {
    Small,
    Medium,
    Large,
}

impl ScaleId {
    pub fn index(self) -> usize {
        match self {
            ScaleId::Small => 0,
            ScaleId::Medium => 1,
            ScaleId::Large => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(ScaleId::Small),
            1 => Ok(ScaleId::Medium),
            2 => Ok(ScaleId::Large),
            _ => Err(Error::Parameter(format!("unknown scale index {i}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScaleId::Small => "small",
            ScaleId::Medium => "medium",
            ScaleId::Large => "large",
        }
    }
}

/// Node locations in feature-map pixel units, each inside
/// `[0, H-1] x [0, W-1]` of the source map.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeCoords<T> {
    coords: Vec<(T, T)>,
}

impl<T: Real> NodeCoords<T> {
    pub fn new(coords: Vec<(T, T)>, height: usize, width: usize) -> Result<Self> {
        let max_i = T::of((height - 1) as f64);
        let max_j = T::of((width - 1) as f64);
        for &(i, j) in &coords {
            if !(i >= T::zero() && i <= max_i && j >= T::zero() && j <= max_j) {
                return Err(Error::OutOfBounds {
                    i: i.to_f64_lossy(),
                    j: j.to_f64_lossy(),
                    max_i: max_i.to_f64_lossy(),
                    max_j: max_j.to_f64_lossy(),
                });
            }
        }
        Ok(NodeCoords { coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(T, T)> {
        self.coords.iter()
    }

    pub fn get(&self, idx: usize) -> (T, T) {
        self.coords[idx]
    }

    pub fn as_slice(&self) -> &[(T, T)] {
        &self.coords
    }
}

/// How nodes are localized on a feature map.
pub enum Localizer<'a> {
    /// Regression network producing `2n` coordinates; weights are looked up
    /// under `"<prefix><layer>.weight"`.
    Sln {
        weights: &'a WeightStore,
        prefix: String,
    },
    /// Centers of a `ceil(sqrt(n))`-regular lattice, truncated to `n`.
    Grid,
    /// The `n` strongest channel-norm responses under 3x3 non-maximum
    /// suppression.
    EnergyPeak,
    /// Coordinates supplied by the caller, e.g. read from a CSV file.
    External { coords: &'a [(f64, f64)] },
}

/// Exactly `n` in-bounds node coordinates for `map`, by the chosen mode.
pub fn localize_nodes<T: Real>(
    map: &Tensor3<T>,
    localizer: &Localizer<'_>,
    n: usize,
) -> Result<NodeCoords<T>> {
    if n == 0 {
        return Err(Error::Parameter("node count must be at least 1".into()));
    }
    let (c, h, w) = map.shape();
    if n > h * w {
        return Err(Error::Infeasible(format!(
            "requested {n} nodes on a {h}x{w} map"
        )));
    }
    match localizer {
        Localizer::Grid => {
            let m = (n as f64).sqrt().ceil() as usize;
            let mut coords = Vec::with_capacity(n);
            'outer: for row in 0..m {
                for col in 0..m {
                    if coords.len() == n {
                        break 'outer;
                    }
                    let i = T::of((row as f64 + 0.5) / m as f64 * (h - 1) as f64);
                    let j = T::of((col as f64 + 0.5) / m as f64 * (w - 1) as f64);
                    coords.push((i, j));
                }
            }
            NodeCoords::new(coords, h, w)
        }
        Localizer::EnergyPeak => {
            let norms = map.channel_norms();
            let is_peak = |y: usize, x: usize| -> bool {
                let v = norms[[y, x]];
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let ny = y as i64 + dy;
                        let nx = x as i64 + dx;
                        if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                            continue;
                        }
                        if norms[[ny as usize, nx as usize]] > v {
                            return false;
                        }
                    }
                }
                true
            };
            let mut peaks: Vec<(usize, usize)> = Vec::new();
            let mut rest: Vec<(usize, usize)> = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    if is_peak(y, x) {
                        peaks.push((y, x));
                    } else {
                        rest.push((y, x));
                    }
                }
            }
            let by_norm_desc = |a: &(usize, usize), b: &(usize, usize)| {
                norms[[b.0, b.1]]
                    .partial_cmp(&norms[[a.0, a.1]])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(b))
            };
            peaks.sort_by(by_norm_desc);
            // Suppressed pixels fill in when fewer than n peaks survive NMS.
            if peaks.len() < n {
                rest.sort_by(by_norm_desc);
                peaks.extend(rest);
            }
            let coords = peaks[..n]
                .iter()
                .map(|&(y, x)| (T::of(y as f64), T::of(x as f64)))
                .collect();
            NodeCoords::new(coords, h, w)
        }
        Localizer::Sln { weights, prefix } => {
            let spec = sln_spec(c, h, w, n)?.with_prefix(prefix);
            let raw = forward_network(&spec, weights, map)?.into_vector()?;
            let max_i = T::of((h - 1) as f64);
            let max_j = T::of((w - 1) as f64);
            let coords = raw
                .chunks_exact(2)
                .map(|p| (sigmoid(p[0]) * max_i, sigmoid(p[1]) * max_j))
                .collect();
            NodeCoords::new(coords, h, w)
        }
        Localizer::External { coords } => {
            if coords.len() < n {
                return Err(Error::Data(format!(
                    "external coordinates provide {} rows, {n} nodes requested",
                    coords.len()
                )));
            }
            let coords = coords[..n]
                .iter()
                .map(|&(i, j)| (T::of(i), T::of(j)))
                .collect();
            NodeCoords::new(coords, h, w)
        }
    }
}

impl<'a> Localizer<'a> {
    pub fn sln(weights: &'a WeightStore, prefix: &str) -> Self {
        Localizer::Sln {
            weights,
            prefix: prefix.to_string(),
        }
    }
}

/// N x N spatial adjacency: `exp(-d^2 / (2 r^2))` for pair distance `d < r`,
/// zero at `d >= r`, ones on the diagonal.
pub fn build_adjacency<T: Real>(coords: &NodeCoords<T>, radius: T) -> Result<Array2<T>> {
    if radius <= T::zero() {
        return Err(Error::Parameter("receptive radius must be positive".into()));
    }
    let n = coords.len();
    let two = T::of(2.0);
    let mut adj = Array2::zeros((n, n));
    for a in 0..n {
        adj[[a, a]] = T::one();
        let (ia, ja) = coords.get(a);
        for b in (a + 1)..n {
            let (ib, jb) = coords.get(b);
            let d2 = (ia - ib) * (ia - ib) + (ja - jb) * (ja - jb);
            let d = d2.sqrt();
            let v = if d < radius {
                (-(d2) / (two * radius * radius)).exp()
            } else {
                T::zero()
            };
            adj[[a, b]] = v;
            adj[[b, a]] = v;
        }
    }
    Ok(adj)
}

/// Default receptive radius: `2 * sqrt(H*W / N)`, a few-neighbor radius on a
/// near-uniform layout.
pub fn default_radius(height: usize, width: usize, n: usize) -> f64 {
    2.0 * ((height * width) as f64 / n as f64).sqrt()
}

/// A feature graph: per-node feature vectors, their map coordinates, the
/// spatial adjacency, the receptive radius, and the scale tag.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGraph<T> {
    pub nodes: Array2<T>,
    pub coords: NodeCoords<T>,
    pub adjacency: Array2<T>,
    pub radius: T,
    pub scale: ScaleId,
}

impl<T: Real> FeatureGraph<T> {
    pub fn node_count(&self) -> usize {
        self.nodes.nrows()
    }

    pub fn node_dim(&self) -> usize {
        self.nodes.ncols()
    }

    /// Rebuilds this graph with a new node matrix, keeping coordinates,
    /// adjacency, radius and scale. Layers that only transform node features
    /// go through here.
    pub fn with_nodes(&self, nodes: Array2<T>) -> Result<Self> {
        if nodes.nrows() != self.node_count() {
            return Err(Error::DimensionMismatch(format!(
                "node matrix has {} rows, graph has {} nodes",
                nodes.nrows(),
                self.node_count()
            )));
        }
        Ok(FeatureGraph {
            nodes,
            coords: self.coords.clone(),
            adjacency: self.adjacency.clone(),
            radius: self.radius,
            scale: self.scale,
        })
    }

    /// Serializes under `"<prefix>nodes"`, `"<prefix>coords"`,
    /// `"<prefix>adjacency"`, `"<prefix>radius"`, `"<prefix>scale_id"`.
    pub fn write_to_store(&self, store: &mut WeightStore, prefix: &str) -> Result<()> {
        let n = self.node_count();
        let c = self.node_dim();
        store.insert_values(
            format!("{prefix}nodes"),
            vec![n, c],
            self.nodes.as_slice().expect("standard layout"),
        )?;
        let mut coord_flat = Vec::with_capacity(2 * n);
        for &(i, j) in self.coords.iter() {
            coord_flat.push(i);
            coord_flat.push(j);
        }
        store.insert_values(format!("{prefix}coords"), vec![n, 2], &coord_flat)?;
        store.insert_values(
            format!("{prefix}adjacency"),
            vec![n, n],
            self.adjacency.as_slice().expect("standard layout"),
        )?;
        store.insert_values(format!("{prefix}radius"), vec![1], &[self.radius])?;
        store.insert_values(
            format!("{prefix}scale_id"),
            vec![1],
            &[T::of(self.scale.index() as f64)],
        )?;
        Ok(())
    }

    pub fn read_from_store(store: &WeightStore, prefix: &str) -> Result<Self> {
        let nodes_arr = store.get_any(&format!("{prefix}nodes"))?;
        if nodes_arr.shape.len() != 2 {
            return Err(Error::Container(format!(
                "{prefix}nodes must be rank 2, got {:?}",
                nodes_arr.shape
            )));
        }
        let (n, c) = (nodes_arr.shape[0], nodes_arr.shape[1]);
        let nodes = Array2::from_shape_vec(
            (n, c),
            nodes_arr.data.iter().map(|&v| T::of(v as f64)).collect(),
        )
        .expect("shape checked");
        let coord_flat: Vec<T> = store.get_values(&format!("{prefix}coords"), &[n, 2])?;
        let coords: Vec<(T, T)> = coord_flat.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        let adjacency = Array2::from_shape_vec(
            (n, n),
            store.get_values(&format!("{prefix}adjacency"), &[n, n])?,
        )
        .expect("shape checked");
        let radius = store.get_values::<T>(&format!("{prefix}radius"), &[1])?[0];
        let scale_raw = store.get_values::<T>(&format!("{prefix}scale_id"), &[1])?[0];
        Ok(FeatureGraph {
            nodes,
            coords: NodeCoords { coords },
            adjacency,
            radius,
            scale: ScaleId::from_index(scale_raw.to_f64_lossy() as usize)?,
        })
    }
}

/// Localizes `n` nodes, samples their feature vectors bilinearly, and builds
/// the Gaussian adjacency.
pub fn make_feature_graph<T: Real>(
    map: &Tensor3<T>,
    localizer: &Localizer<'_>,
    n: usize,
    radius: T,
    scale: ScaleId,
) -> Result<FeatureGraph<T>> {
    let coords = localize_nodes(map, localizer, n)?;
    let c = map.channels();
    let mut nodes = Array2::zeros((n, c));
    for (idx, &(i, j)) in coords.iter().enumerate() {
        let feat = map.bilinear_sample(i, j)?;
        for (k, v) in feat.into_iter().enumerate() {
            nodes[[idx, k]] = v;
        }
    }
    let adjacency = build_adjacency(&coords, radius)?;
    Ok(FeatureGraph {
        nodes,
        coords,
        adjacency,
        radius,
        scale,
    })
}

/// Reads a two-column CSV of `(i, j)` coordinates in pixel units. Lines
/// starting with `#` and a `i,j` header line are skipped.
pub fn read_coords_csv(path: impl AsRef<Path>) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if lineno == 0 && line.chars().any(|c| c.is_alphabetic()) {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |s: Option<&str>| -> Result<f64> {
            s.map(str::trim)
                .and_then(|s| s.parse().ok())
                .ok_or(Error::Parse {
                    line: lineno + 1,
                    message: "expected two comma-separated numbers".into(),
                })
        };
        let i = parse(parts.next())?;
        let j = parse(parts.next())?;
        if parts.next().is_some() {
            return Err(Error::Parse {
                line: lineno + 1,
                message: "expected exactly two columns".into(),
            });
        }
        out.push((i, j));
    }
    Ok(out)
}
