//! Handcrafted frontend: a bank of 2-D Gabor filters turns an image into a
//! binary-feature tensor (sign of real and imaginary responses plus the
//! response energy per filter); local patches around node locations become
//! feature-graph nodes.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{build_adjacency, FeatureGraph, NodeCoords, ScaleId};
use crate::scalar::Real;
use crate::tensor::Tensor3;

/// One filter: orientation (radians), wavelength and envelope sigma in
/// pixels, the envelope aspect ratio, and the carrier phase offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaborFilterSpec {
    pub orientation: f64,
    pub wavelength: f64,
    pub sigma: f64,
    pub aspect: f64,
    pub phase: f64,
}

/// Default 40-filter bank: 8 orientations crossed with 5 log-spaced
/// wavelengths, sigma at 0.56 of the wavelength, isotropic envelope.
pub fn default_bank_specs() -> Vec<GaborFilterSpec> {
    let orientations = 8;
    let wavelengths: Vec<f64> = (0..5).map(|k| 4.0 * 2.0f64.powf(k as f64 / 2.0)).collect();
    let mut specs = Vec::with_capacity(40);
    for o in 0..orientations {
        let theta = o as f64 * std::f64::consts::PI / orientations as f64;
        for &lambda in &wavelengths {
            specs.push(GaborFilterSpec {
                orientation: theta,
                wavelength: lambda,
                sigma: 0.56 * lambda,
                aspect: 1.0,
                phase: 0.0,
            });
        }
    }
    specs
}

/// Complex kernel of one filter, mean-subtracted so both parts are DC-free.
#[derive(Debug, Clone)]
pub struct GaborKernel<T> {
    pub real: Array2<T>,
    pub imag: Array2<T>,
    pub size: usize,
}

/// The filter bank: parameter records plus their realized kernels.
#[derive(Debug, Clone)]
pub struct GaborBank<T> {
    pub specs: Vec<GaborFilterSpec>,
    pub kernels: Vec<GaborKernel<T>>,
}

impl<T: Real> GaborBank<T> {
    pub fn filter_count(&self) -> usize {
        self.kernels.len()
    }

    /// Three channels per filter: binarized real part, binarized imaginary
    /// part, energy.
    pub fn channel_count(&self) -> usize {
        3 * self.kernels.len()
    }

    pub fn max_kernel_size(&self) -> usize {
        self.kernels.iter().map(|k| k.size).max().unwrap_or(0)
    }
}

fn build_kernel<T: Real>(spec: &GaborFilterSpec) -> GaborKernel<T> {
    // Cover the envelope out to 2.5 sigma along its wider axis.
    let extent = spec.sigma * 2.5 / spec.aspect.min(1.0);
    let half = (extent.ceil() as usize).max(1);
    let size = 2 * half + 1;
    let (sin_t, cos_t) = spec.orientation.sin_cos();
    let mut real = Array2::zeros((size, size));
    let mut imag = Array2::zeros((size, size));
    let mut sum_re = 0.0;
    let mut sum_im = 0.0;
    for y in 0..size {
        for x in 0..size {
            let dy = y as f64 - half as f64;
            let dx = x as f64 - half as f64;
            let u = dx * cos_t + dy * sin_t;
            let v = -dx * sin_t + dy * cos_t;
            let env = (-(u * u + spec.aspect * spec.aspect * v * v)
                / (2.0 * spec.sigma * spec.sigma))
                .exp();
            let arg = 2.0 * std::f64::consts::PI * u / spec.wavelength + spec.phase;
            let re = env * arg.cos();
            let im = env * arg.sin();
            real[[y, x]] = T::of(re);
            imag[[y, x]] = T::of(im);
            sum_re += re;
            sum_im += im;
        }
    }
    let n = (size * size) as f64;
    let mean_re = T::of(sum_re / n);
    let mean_im = T::of(sum_im / n);
    real.mapv_inplace(|v| v - mean_re);
    imag.mapv_inplace(|v| v - mean_im);
    GaborKernel { real, imag, size }
}

/// Builds DC-free complex kernels from the parameter records.
pub fn build_bank<T: Real>(specs: &[GaborFilterSpec]) -> Result<GaborBank<T>> {
    if specs.is_empty() {
        return Err(Error::Parameter("filter bank cannot be empty".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.wavelength <= 0.0 || s.sigma <= 0.0 || s.aspect <= 0.0 {
            return Err(Error::Parameter(format!(
                "filter {i}: wavelength, sigma and aspect must be positive"
            )));
        }
    }
    let kernels = specs.iter().map(build_kernel).collect();
    Ok(GaborBank {
        specs: specs.to_vec(),
        kernels,
    })
}

/// Parses a bank config: one filter per line,
/// `orientation wavelength sigma aspect phase`, `#` comments allowed.
pub fn parse_bank_config(text: &str) -> Result<Vec<GaborFilterSpec>> {
    let mut specs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse {
                line: lineno + 1,
                message: "expected five numbers".into(),
            })?;
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected five fields, got {}", fields.len()),
            });
        }
        specs.push(GaborFilterSpec {
            orientation: fields[0],
            wavelength: fields[1],
            sigma: fields[2],
            aspect: fields[3],
            phase: fields[4],
        });
    }
    Ok(specs)
}

pub fn read_bank_config(path: impl AsRef<Path>) -> Result<Vec<GaborFilterSpec>> {
    parse_bank_config(&fs::read_to_string(path)?)
}

/// Binary-feature tensor: channel triplets `(sign of real, sign of
/// imaginary, energy)` per filter, same spatial size as the image.
#[derive(Debug, Clone)]
pub struct GaborFeatureTensor<T> {
    pub tensor: Tensor3<T>,
    pub filter_count: usize,
}

/// Reflected index for same-size filtering (mirror about the edge pixel).
#[inline]
fn reflect(idx: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = idx;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * n - 2 - i;
    }
    i as usize
}

/// Convolves (correlation convention, reflect padding) the image with every
/// filter and assembles the binary-feature tensor. The sign rule maps zero
/// to +1; responses within `1000 * epsilon` of zero count as zero, so flat
/// regions binarize deterministically instead of on rounding noise. The
/// energy channel is the complex magnitude before binarization.
pub fn extract<T: Real>(bank: &GaborBank<T>, image: &Array2<T>) -> Result<GaborFeatureTensor<T>> {
    let (h, w) = image.dim();
    let k = bank.max_kernel_size();
    if h < k || w < k {
        return Err(Error::Parameter(format!(
            "image {h}x{w} smaller than the largest kernel ({k}x{k})"
        )));
    }
    let one = T::one();
    let dead_zone = T::of(1000.0) * T::epsilon();
    let binarize = move |v: T| if v >= -dead_zone { one } else { -one };
    let planes: Vec<(Vec<T>, Vec<T>, Vec<T>)> = bank
        .kernels
        .par_iter()
        .map(|kernel| {
            let half = (kernel.size / 2) as isize;
            let mut re_plane = vec![T::zero(); h * w];
            let mut im_plane = vec![T::zero(); h * w];
            let mut en_plane = vec![T::zero(); h * w];
            for y in 0..h {
                for x in 0..w {
                    let mut re = T::zero();
                    let mut im = T::zero();
                    for ky in 0..kernel.size {
                        let iy = reflect(y as isize + ky as isize - half, h);
                        for kx in 0..kernel.size {
                            let ix = reflect(x as isize + kx as isize - half, w);
                            let px = image[[iy, ix]];
                            re = re + kernel.real[[ky, kx]] * px;
                            im = im + kernel.imag[[ky, kx]] * px;
                        }
                    }
                    let idx = y * w + x;
                    re_plane[idx] = binarize(re);
                    im_plane[idx] = binarize(im);
                    en_plane[idx] = (re * re + im * im).sqrt();
                }
            }
            (re_plane, im_plane, en_plane)
        })
        .collect();
    let mut data = Vec::with_capacity(3 * bank.filter_count() * h * w);
    for (re, im, en) in planes {
        data.extend(re);
        data.extend(im);
        data.extend(en);
    }
    Ok(GaborFeatureTensor {
        tensor: Tensor3::new(3 * bank.filter_count(), h, w, data)?,
        filter_count: bank.filter_count(),
    })
}

/// Builds a feature graph whose nodes are flattened `C x S x S` patches
/// centered at the given coordinates (snapped to the pixel grid and clamped
/// so the patch stays inside), with a Gaussian adjacency of radius `S`.
pub fn graph_from_gabor<T: Real>(
    features: &GaborFeatureTensor<T>,
    coords: &NodeCoords<T>,
    patch: usize,
) -> Result<FeatureGraph<T>> {
    if patch % 2 == 0 || patch == 0 {
        return Err(Error::Parameter(format!(
            "patch scale must be odd and positive, got {patch}"
        )));
    }
    let (c, h, w) = features.tensor.shape();
    if h < patch || w < patch {
        return Err(Error::Parameter(format!(
            "feature tensor {h}x{w} smaller than patch {patch}"
        )));
    }
    let half = patch / 2;
    let snapped: Vec<(usize, usize)> = coords
        .iter()
        .map(|&(i, j)| {
            let y = (i.to_f64_lossy().round() as usize).clamp(half, h - 1 - half);
            let x = (j.to_f64_lossy().round() as usize).clamp(half, w - 1 - half);
            (y, x)
        })
        .collect();
    let n = snapped.len();
    let dim = c * patch * patch;
    let mut nodes = Array2::zeros((n, dim));
    for (row, &(cy, cx)) in snapped.iter().enumerate() {
        let mut col = 0;
        for ch in 0..c {
            for dy in 0..patch {
                for dx in 0..patch {
                    nodes[[row, col]] =
                        features.tensor.get(ch, cy - half + dy, cx - half + dx);
                    col += 1;
                }
            }
        }
    }
    let centers = NodeCoords::new(
        snapped
            .iter()
            .map(|&(y, x)| (T::of(y as f64), T::of(x as f64)))
            .collect(),
        h,
        w,
    )?;
    let radius = T::of(patch as f64);
    let adjacency = build_adjacency(&centers, radius)?;
    Ok(FeatureGraph {
        nodes,
        coords: centers,
        adjacency,
        radius,
        scale: ScaleId::Medium,
    })
}
