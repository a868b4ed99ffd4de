//! Synthetic occlusions: side-anchored rectangular bands, randomly placed
//! rectangles, and unions of random elliptical shapes, each grown to a
//! target area fraction and filled with seeded noise or a constant.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Tolerance on the realized occluded fraction, in absolute terms.
pub const FRACTION_TOLERANCE: f64 = 0.02;

/// Which side a rectangle-region band is anchored to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Right,
    Left,
    Upper,
    Bottom,
}

impl Region {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "right" => Ok(Region::Right),
            "left" => Ok(Region::Left),
            "upper" => Ok(Region::Upper),
            "bottom" => Ok(Region::Bottom),
            other => Err(Error::Parameter(format!("unknown region `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Right => "right",
            Region::Left => "left",
            Region::Upper => "upper",
            Region::Bottom => "bottom",
        }
    }
}

/// Shape family of the occluder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OcclusionKind {
    /// A contiguous band on the named side sized to the area fraction.
    RectangleRegion(Region),
    /// A rectangle of random aspect and position.
    RandomRectangle,
    /// A union of one to four random ellipses grown to the area fraction.
    RandomShape,
}

/// What the occluded pixels are replaced with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    /// I.i.d. uniform values over the image's own value range (over `[0, 1]`
    /// when the image is constant).
    Noise,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionSpec {
    pub kind: OcclusionKind,
    pub area_fraction: f64,
    pub fill: Fill,
    pub seed: u64,
}

/// The occluded image, the exact set of masked pixels, and the realized
/// fraction (mask count over total pixels, exactly).
#[derive(Debug, Clone)]
pub struct OcclusionRecord<T> {
    pub image: Array2<T>,
    pub mask: Array2<bool>,
    pub realized_fraction: f64,
}

/// Band thickness for a side-anchored occlusion: the ceiling of
/// `fraction * dim`, falling back to the floor when the ceiling overshoots
/// the fraction tolerance (possible on small images where one row or column
/// is a large fraction step).
fn band_size(dim: usize, fraction: f64) -> usize {
    let ceil = ((fraction * dim as f64).ceil() as usize).clamp(1, dim);
    if (ceil as f64 / dim as f64 - fraction).abs() <= FRACTION_TOLERANCE {
        return ceil;
    }
    (ceil - 1).max(1)
}

fn band_mask(h: usize, w: usize, region: Region, fraction: f64) -> Array2<bool> {
    let mut mask = Array2::from_elem((h, w), false);
    match region {
        Region::Upper | Region::Bottom => {
            let rows = band_size(h, fraction);
            let range = if region == Region::Upper {
                0..rows
            } else {
                h - rows..h
            };
            for r in range {
                for c in 0..w {
                    mask[[r, c]] = true;
                }
            }
        }
        Region::Left | Region::Right => {
            let cols = band_size(w, fraction);
            let range = if region == Region::Left {
                0..cols
            } else {
                w - cols..w
            };
            for r in 0..h {
                for c in range.clone() {
                    mask[[r, c]] = true;
                }
            }
        }
    }
    mask
}

fn random_rectangle_mask(
    h: usize,
    w: usize,
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<bool>> {
    let target = fraction * (h * w) as f64;
    let aspect = 0.5 + rng.gen::<f64>() * 1.5;
    let mut rh = ((target / aspect).sqrt().round() as usize).clamp(1, h);
    let mut rw = ((target / rh as f64).round() as usize).clamp(1, w);
    // Nudge the free dimension until the realized fraction is in tolerance.
    for _ in 0..(h + w) {
        let realized = (rh * rw) as f64 / (h * w) as f64;
        if (realized - fraction).abs() <= FRACTION_TOLERANCE {
            break;
        }
        if realized < fraction {
            if rw < w {
                rw += 1;
            } else if rh < h {
                rh += 1;
            } else {
                break;
            }
        } else if rw > 1 && ((rh * (rw - 1)) as f64 / (h * w) as f64 - fraction).abs()
            < (realized - fraction).abs()
        {
            rw -= 1;
        } else if rh > 1 {
            rh -= 1;
        } else {
            break;
        }
    }
    let realized = (rh * rw) as f64 / (h * w) as f64;
    if (realized - fraction).abs() > FRACTION_TOLERANCE {
        return Err(Error::Parameter(format!(
            "cannot realize area fraction {fraction} on a {h}x{w} image"
        )));
    }
    let top = rng.gen_range(0..=h - rh);
    let left = rng.gen_range(0..=w - rw);
    let mut mask = Array2::from_elem((h, w), false);
    for r in top..top + rh {
        for c in left..left + rw {
            mask[[r, c]] = true;
        }
    }
    Ok(mask)
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
}

impl Ellipse {
    fn covers(&self, y: f64, x: f64, scale: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.angle.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        let ry = self.ry * scale;
        let rx = self.rx * scale;
        (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
    }
}

fn shapes_mask(
    h: usize,
    w: usize,
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<bool>> {
    let count = rng.gen_range(1..=4usize);
    let base = (h.min(w)) as f64 * 0.2;
    let ellipses: Vec<Ellipse> = (0..count)
        .map(|_| Ellipse {
            cy: rng.gen::<f64>() * h as f64,
            cx: rng.gen::<f64>() * w as f64,
            ry: base * (0.5 + rng.gen::<f64>()),
            rx: base * (0.5 + rng.gen::<f64>()),
            angle: rng.gen::<f64>() * std::f64::consts::PI,
        })
        .collect();
    let realize = |scale: f64| -> Array2<bool> {
        Array2::from_shape_fn((h, w), |(y, x)| {
            ellipses
                .iter()
                .any(|e| e.covers(y as f64 + 0.5, x as f64 + 0.5, scale))
        })
    };
    let frac_of = |m: &Array2<bool>| m.iter().filter(|&&b| b).count() as f64 / (h * w) as f64;
    // Coverage grows monotonically with the shared scale factor; bisect it.
    let mut lo = 0.0;
    let mut hi = 1.0;
    while frac_of(&realize(hi)) < fraction && hi < 64.0 {
        hi *= 2.0;
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let f = frac_of(&realize(mid));
        if (f - fraction).abs() <= FRACTION_TOLERANCE * 0.5 {
            return Ok(realize(mid));
        }
        if f < fraction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mask = realize(hi);
    if (frac_of(&mask) - fraction).abs() > FRACTION_TOLERANCE {
        return Err(Error::Parameter(format!(
            "cannot realize area fraction {fraction} with random shapes on a {h}x{w} image"
        )));
    }
    Ok(mask)
}

/// Applies the occlusion described by `spec` to `image`. Deterministic for a
/// fixed seed; the realized fraction lies within 2 percentage points of the
/// request.
pub fn occlude<T: Real>(image: &Array2<T>, spec: &OcclusionSpec) -> Result<OcclusionRecord<T>> {
    if !(spec.area_fraction > 0.0 && spec.area_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "area fraction must lie in (0, 1), got {}",
            spec.area_fraction
        )));
    }
    let (h, w) = image.dim();
    if h == 0 || w == 0 {
        return Err(Error::Parameter("cannot occlude an empty image".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mask = match spec.kind {
        OcclusionKind::RectangleRegion(region) => band_mask(h, w, region, spec.area_fraction),
        OcclusionKind::RandomRectangle => {
            random_rectangle_mask(h, w, spec.area_fraction, &mut rng)?
        }
        OcclusionKind::RandomShape => shapes_mask(h, w, spec.area_fraction, &mut rng)?,
    };
    let occluded = mask.iter().filter(|&&b| b).count();
    let realized_fraction = occluded as f64 / (h * w) as f64;
    if (realized_fraction - spec.area_fraction).abs() > FRACTION_TOLERANCE {
        return Err(Error::Parameter(format!(
            "realized fraction {realized_fraction:.4} misses target {} by more than {}",
            spec.area_fraction, FRACTION_TOLERANCE
        )));
    }
    let (lo, hi) = {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in image.iter() {
            let v = v.to_f64_lossy();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo < hi {
            (lo, hi)
        } else {
            (0.0, 1.0)
        }
    };
    let mut out = image.clone();
    for ((idx, m), v) in mask.indexed_iter().zip(out.iter_mut()) {
        let _ = idx;
        if *m {
            *v = match spec.fill {
                Fill::Noise => T::of(lo + rng.gen::<f64>() * (hi - lo)),
                Fill::Constant(c) => T::of(c),
            };
        }
    }
    Ok(OcclusionRecord {
        image: out,
        mask,
        realized_fraction,
    })
}

/// Usable-area percentage: `(1 - occluded / iris_area) * 100`.
pub fn usable_area(mask: &Array2<bool>, iris_area: usize) -> Result<f64> {
    if iris_area == 0 {
        return Err(Error::Parameter("iris area must be positive".into()));
    }
    let occluded = mask.iter().filter(|&&b| b).count();
    if occluded > iris_area {
        return Err(Error::Parameter(format!(
            "occluded count {occluded} exceeds iris area {iris_area}"
        )));
    }
    Ok((1.0 - occluded as f64 / iris_area as f64) * 100.0)
}
