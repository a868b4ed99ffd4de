//! Verification and identification metrics: FAR/FRR at a threshold, the
//! equal error rate, FRR at a FAR target, DET curve export, and rank-N
//! identification accuracy.
//!
//! The accept rule is `score >= threshold` everywhere. The threshold sweep
//! runs over all distinct scores in ascending order plus one sentinel above
//! the maximum (where FAR is 0 and FRR is 1), so FAR is non-increasing and
//! FRR non-decreasing along the sweep.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Genuine (same identity) and imposter (different identity) score lists.
#[derive(Debug, Clone)]
pub struct ScoreSet<T> {
    pub genuine: Vec<T>,
    pub imposter: Vec<T>,
}

impl<T: Real> ScoreSet<T> {
    pub fn new(genuine: Vec<T>, imposter: Vec<T>) -> Result<Self> {
        if genuine.is_empty() || imposter.is_empty() {
            return Err(Error::Metric(
                "both genuine and imposter score lists must be nonempty".into(),
            ));
        }
        if genuine
            .iter()
            .chain(imposter.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Metric("scores must be finite".into()));
        }
        Ok(ScoreSet { genuine, imposter })
    }
}

/// One point of the DET curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint<T> {
    pub threshold: T,
    pub far: T,
    pub frr: T,
}

/// False accept and false reject rates at a threshold: accepted imposters
/// over imposters, rejected genuines over genuines. Exact integer counts
/// divided once.
pub fn far_frr<T: Real>(scores: &ScoreSet<T>, threshold: T) -> Result<(T, T)> {
    let accepted_imposters = scores.imposter.iter().filter(|&&s| s >= threshold).count();
    let rejected_genuines = scores.genuine.iter().filter(|&&s| s < threshold).count();
    let far = T::of(accepted_imposters as f64) / T::of(scores.imposter.len() as f64);
    let frr = T::of(rejected_genuines as f64) / T::of(scores.genuine.len() as f64);
    Ok((far, frr))
}

/// Ascending distinct scores followed by a sentinel strictly above the
/// maximum.
fn sweep_thresholds<T: Real>(scores: &ScoreSet<T>) -> Vec<T> {
    let mut all: Vec<T> = scores
        .genuine
        .iter()
        .chain(scores.imposter.iter())
        .copied()
        .collect();
    all.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    all.dedup();
    let top = *all.last().expect("nonempty");
    all.push(top + T::one());
    all
}

/// The full DET curve over the sweep.
pub fn det_curve<T: Real>(scores: &ScoreSet<T>) -> Result<Vec<DetPoint<T>>> {
    sweep_thresholds(scores)
        .into_iter()
        .map(|t| {
            let (far, frr) = far_frr(scores, t)?;
            Ok(DetPoint {
                threshold: t,
                far,
                frr,
            })
        })
        .collect()
}

/// Equal error rate and the threshold it occurs at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerResult<T> {
    pub eer: T,
    pub threshold: T,
}

/// The working point where FAR meets FRR. The sweep visits every distinct
/// score; when no sweep point has exact equality the crossing is found by
/// linear interpolation between the two adjacent points and the rate is the
/// mean of the interpolated FAR and FRR.
pub fn eer<T: Real>(scores: &ScoreSet<T>) -> Result<EerResult<T>> {
    let points = det_curve(scores)?;
    let mut prev = points[0];
    // FAR - FRR starts at a positive value and ends at -1.
    for p in points.iter().copied() {
        let diff = p.far - p.frr;
        if diff == T::zero() {
            return Ok(EerResult {
                eer: (p.far + p.frr) / T::of(2.0),
                threshold: p.threshold,
            });
        }
        if diff < T::zero() {
            let d_prev = prev.far - prev.frr;
            let lambda = d_prev / (d_prev - diff);
            let far = prev.far + lambda * (p.far - prev.far);
            let frr = prev.frr + lambda * (p.frr - prev.frr);
            return Ok(EerResult {
                eer: (far + frr) / T::of(2.0),
                threshold: prev.threshold + lambda * (p.threshold - prev.threshold),
            });
        }
        prev = p;
    }
    unreachable!("sentinel point has FAR 0 and FRR 1");
}

/// FRR at a FAR budget, with the threshold used and a resolution flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrrAtFar<T> {
    pub frr: T,
    pub threshold: T,
    /// Set when the imposter list is too small to resolve the target.
    pub resolution_warning: bool,
}

/// Smallest sweep threshold achieving `far <= far_target`, reporting the FRR
/// there.
pub fn frr_at_far<T: Real>(scores: &ScoreSet<T>, far_target: T) -> Result<FrrAtFar<T>> {
    if !(far_target > T::zero() && far_target <= T::one()) {
        return Err(Error::Parameter(format!(
            "far target must lie in (0, 1], got {far_target}"
        )));
    }
    let resolution_warning =
        T::of(scores.imposter.len() as f64) < T::one() / far_target;
    for p in det_curve(scores)? {
        if p.far <= far_target {
            return Ok(FrrAtFar {
                frr: p.frr,
                threshold: p.threshold,
                resolution_warning,
            });
        }
    }
    unreachable!("sentinel point has FAR 0");
}

/// Rank-N identification accuracy from a probes-by-gallery score matrix.
///
/// A probe counts as a rank-`n` hit when its best same-label gallery entry
/// ranks within the top `n` by score; ties are broken by gallery index.
pub fn rank_n<T: Real>(
    probe_scores: &Array2<T>,
    probe_labels: &[String],
    gallery_labels: &[String],
    ns: &[usize],
) -> Result<Vec<T>> {
    let (p, g) = probe_scores.dim();
    if probe_labels.len() != p || gallery_labels.len() != g {
        return Err(Error::DimensionMismatch(format!(
            "score matrix {p}x{g} vs {} probe and {} gallery labels",
            probe_labels.len(),
            gallery_labels.len()
        )));
    }
    let mut hits = vec![0usize; ns.len()];
    for (pi, plabel) in probe_labels.iter().enumerate() {
        if !gallery_labels.iter().any(|gl| gl == plabel) {
            return Err(Error::Protocol(format!(
                "probe label `{plabel}` has no gallery entry"
            )));
        }
        let mut order: Vec<usize> = (0..g).collect();
        order.sort_by(|&a, &b| {
            probe_scores[[pi, b]]
                .partial_cmp(&probe_scores[[pi, a]])
                .expect("finite scores")
                .then(a.cmp(&b))
        });
        let rank = order
            .iter()
            .position(|&gi| &gallery_labels[gi] == plabel)
            .expect("label checked above")
            + 1;
        for (k, &n) in ns.iter().enumerate() {
            if rank <= n {
                hits[k] += 1;
            }
        }
    }
    Ok(hits
        .into_iter()
        .map(|h| T::of(h as f64) / T::of(p as f64))
        .collect())
}
