//! Composite graph similarity, the graph triplet loss, and dynamic graph
//! matching that prunes index-corresponding node pairs below the pair-mean
//! cosine gate before scoring.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::graph::FeatureGraph;
use crate::scalar::Real;

/// Whether the structural term is added to or subtracted from the feature
/// similarity. The structural term is a distance, so subtracting is the
/// default; adding reproduces the composite score exactly as printed in the
/// formulation this follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjSign {
    Plus,
    Minus,
}

impl AdjSign {
    pub fn factor<T: Real>(self) -> T {
        match self {
            AdjSign::Plus => T::one(),
            AdjSign::Minus => -T::one(),
        }
    }

    pub fn from_i32(v: i32) -> Result<Self> {
        match v {
            1 => Ok(AdjSign::Plus),
            -1 => Ok(AdjSign::Minus),
            _ => Err(Error::Parameter(format!("adj_sign must be +1 or -1, got {v}"))),
        }
    }
}

impl Default for AdjSign {
    fn default() -> Self {
        AdjSign::Minus
    }
}

/// Static scoring over full graphs or dynamic scoring with node-pair pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    Static,
    Dynamic,
}

/// One sample's representation: its feature graphs in scale order plus the
/// backbone's global feature vector (empty for pipelines without one).
#[derive(Debug, Clone)]
pub struct MultiscaleRepresentation<T> {
    graphs: Vec<FeatureGraph<T>>,
    global: Vec<T>,
}

impl<T: Real> MultiscaleRepresentation<T> {
    pub fn new(graphs: Vec<FeatureGraph<T>>, global: Vec<T>) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::Parameter(
                "a representation needs at least one graph".into(),
            ));
        }
        for (i, a) in graphs.iter().enumerate() {
            for b in graphs.iter().skip(i + 1) {
                if a.scale == b.scale {
                    return Err(Error::Parameter(format!(
                        "duplicate scale `{}` in representation",
                        a.scale.name()
                    )));
                }
            }
        }
        Ok(MultiscaleRepresentation { graphs, global })
    }

    pub fn graphs(&self) -> &[FeatureGraph<T>] {
        &self.graphs
    }

    pub fn global(&self) -> &[T] {
        &self.global
    }

    pub fn num_scales(&self) -> usize {
        self.graphs.len()
    }

    /// Replaces the node matrices, keeping structure; used when the graph
    /// layers transform features.
    pub fn with_graphs(&self, graphs: Vec<FeatureGraph<T>>) -> Result<Self> {
        MultiscaleRepresentation::new(graphs, self.global.clone())
    }
}

/// Index sets retained per scale. Static matching retains everything.
pub fn full_retained<T: Real>(rep: &MultiscaleRepresentation<T>) -> Vec<Vec<usize>> {
    rep.graphs
        .iter()
        .map(|g| (0..g.node_count()).collect())
        .collect()
}

fn check_compatible<T: Real>(
    a: &MultiscaleRepresentation<T>,
    b: &MultiscaleRepresentation<T>,
) -> Result<()> {
    if a.num_scales() != b.num_scales() {
        return Err(Error::DimensionMismatch(format!(
            "representations have {} and {} scales",
            a.num_scales(),
            b.num_scales()
        )));
    }
    for (i, (ga, gb)) in a.graphs.iter().zip(b.graphs.iter()).enumerate() {
        if ga.scale != gb.scale {
            return Err(Error::DimensionMismatch(format!(
                "scale {i} tags differ: {} vs {}",
                ga.scale.name(),
                gb.scale.name()
            )));
        }
        if ga.node_count() != gb.node_count() || ga.node_dim() != gb.node_dim() {
            return Err(Error::DimensionMismatch(format!(
                "scale `{}` shapes differ: {}x{} vs {}x{}",
                ga.scale.name(),
                ga.node_count(),
                ga.node_dim(),
                gb.node_count(),
                gb.node_dim()
            )));
        }
    }
    if a.global.len() != b.global.len() {
        return Err(Error::DimensionMismatch(format!(
            "global feature lengths differ: {} vs {}",
            a.global.len(),
            b.global.len()
        )));
    }
    Ok(())
}

/// Cosine similarity of two equal-length slices. When the two squared norms
/// compare equal the denominator uses the norm product in its squared form,
/// which keeps the self-similarity of a vector exactly 1.
pub fn cosine<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    let mut dot = T::zero();
    let mut na = T::zero();
    let mut nb = T::zero();
    for (&x, &y) in a.iter().zip(b.iter()) {
        dot = dot + x * y;
        na = na + x * x;
        nb = nb + y * y;
    }
    if na == T::zero() || nb == T::zero() {
        return Err(Error::UndefinedSimilarity(
            "cosine of a zero vector".into(),
        ));
    }
    let denom = if na == nb { na } else { na.sqrt() * nb.sqrt() };
    Ok(dot / denom)
}

/// Cosine with the gating convention that a zero vector scores 0 against
/// anything.
pub fn cosine_or_zero<T: Real>(a: &[T], b: &[T]) -> T {
    cosine(a, b).unwrap_or_else(|_| T::zero())
}

fn concatenate<T: Real>(
    rep: &MultiscaleRepresentation<T>,
    retained: &[Vec<usize>],
) -> Vec<T> {
    let mut out = Vec::new();
    for (g, keep) in rep.graphs.iter().zip(retained.iter()) {
        for &idx in keep {
            out.extend(g.nodes.row(idx).iter().copied());
        }
    }
    out.extend(rep.global.iter().copied());
    out
}

/// Feature-similarity term: cosine of the two concatenations of retained
/// node vectors (scale by scale, in index order) and the global feature.
pub fn s_fea<T: Real>(
    a: &MultiscaleRepresentation<T>,
    b: &MultiscaleRepresentation<T>,
    retained: &[Vec<usize>],
) -> Result<T> {
    check_compatible(a, b)?;
    let fa = concatenate(a, retained);
    let fb = concatenate(b, retained);
    if fa.is_empty() {
        return Err(Error::UndefinedSimilarity(
            "empty concatenation: no retained nodes and no global feature".into(),
        ));
    }
    cosine(&fa, &fb)
}

/// Structural term: mean over scales of the Frobenius distance between the
/// retained principal submatrices of the two adjacencies, each normalized by
/// the squared retained count. An empty scale contributes zero.
pub fn s_adj<T: Real>(
    a: &MultiscaleRepresentation<T>,
    b: &MultiscaleRepresentation<T>,
    retained: &[Vec<usize>],
) -> Result<T> {
    check_compatible(a, b)?;
    if retained.len() != a.num_scales() {
        return Err(Error::DimensionMismatch(format!(
            "{} retained sets for {} scales",
            retained.len(),
            a.num_scales()
        )));
    }
    let n_g = T::of(a.num_scales() as f64);
    let mut total = T::zero();
    for ((ga, gb), keep) in a.graphs.iter().zip(b.graphs.iter()).zip(retained.iter()) {
        let n_i = keep.len();
        if n_i == 0 {
            continue;
        }
        let mut sq = T::zero();
        for &r in keep {
            for &c in keep {
                let d = ga.adjacency[[r, c]] - gb.adjacency[[r, c]];
                sq = sq + d * d;
            }
        }
        total = total + sq.sqrt() / T::of((n_i * n_i) as f64);
    }
    Ok(total / n_g)
}

/// Composite similarity: the feature term plus the signed structural term.
pub fn similarity<T: Real>(
    a: &MultiscaleRepresentation<T>,
    b: &MultiscaleRepresentation<T>,
    retained: &[Vec<usize>],
    adj_sign: AdjSign,
) -> Result<T> {
    Ok(s_fea(a, b, retained)? + adj_sign.factor::<T>() * s_adj(a, b, retained)?)
}

/// Outcome of dynamic matching: the composite similarity on the retained
/// sets plus everything needed to audit the pruning.
#[derive(Debug, Clone)]
pub struct MatchResult<T> {
    pub similarity: T,
    pub s_fea: T,
    pub s_adj: T,
    /// Pair-mean cosine gate per scale.
    pub gates: Vec<T>,
    /// Indices kept at each scale, identical for both graphs of the pair.
    pub retained: Vec<Vec<usize>>,
    /// Per-node cosine of corresponding pairs, per scale.
    pub pair_scores: Vec<Vec<T>>,
}

impl<T: Real> MatchResult<T> {
    /// CSV rows `scale,index,cosine,retained`, one per node pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scale,index,cosine,retained\n");
        for (scale_idx, scores) in self.pair_scores.iter().enumerate() {
            let kept: std::collections::HashSet<usize> =
                self.retained[scale_idx].iter().copied().collect();
            for (i, s) in scores.iter().enumerate() {
                out.push_str(&format!(
                    "{scale_idx},{i},{},{}\n",
                    s.to_f64_lossy(),
                    u8::from(kept.contains(&i))
                ));
            }
        }
        out
    }
}

/// Dynamic matching: per scale, gate on the mean cosine of corresponding
/// node pairs, drop pairs strictly below the gate, then score the retained
/// sets with the composite similarity. Fails only when every scale prunes
/// everything and there is no global feature to compare.
pub fn dynamic_match<T: Real>(
    a: &MultiscaleRepresentation<T>,
    b: &MultiscaleRepresentation<T>,
    adj_sign: AdjSign,
) -> Result<MatchResult<T>> {
    check_compatible(a, b)?;
    let mut gates = Vec::with_capacity(a.num_scales());
    let mut retained = Vec::with_capacity(a.num_scales());
    let mut pair_scores = Vec::with_capacity(a.num_scales());
    for (ga, gb) in a.graphs.iter().zip(b.graphs.iter()) {
        let n = ga.node_count();
        let scores: Vec<T> = (0..n)
            .map(|i| {
                cosine_or_zero(
                    ga.nodes.row(i).as_slice().expect("layout"),
                    gb.nodes.row(i).as_slice().expect("layout"),
                )
            })
            .collect();
        let gate = scores.iter().fold(T::zero(), |s, &x| s + x) / T::of(n as f64);
        let keep: Vec<usize> = (0..n).filter(|&i| !(scores[i] < gate)).collect();
        gates.push(gate);
        retained.push(keep);
        pair_scores.push(scores);
    }
    if retained.iter().all(|k| k.is_empty()) && a.global.is_empty() {
        return Err(Error::EmptyMatch);
    }
    let fea = s_fea(a, b, &retained)?;
    let adj = s_adj(a, b, &retained)?;
    Ok(MatchResult {
        similarity: fea + adj_sign.factor::<T>() * adj,
        s_fea: fea,
        s_adj: adj,
        gates,
        retained,
        pair_scores,
    })
}

/// Single-number match score in either mode.
pub fn match_score<T: Real>(
    a: &MultiscaleRepresentation<T>,
    b: &MultiscaleRepresentation<T>,
    mode: MatchMode,
    adj_sign: AdjSign,
) -> Result<T> {
    match mode {
        MatchMode::Static => similarity(a, b, &full_retained(a), adj_sign),
        MatchMode::Dynamic => Ok(dynamic_match(a, b, adj_sign)?.similarity),
    }
}

// ---------------------------------------------------------------------------
// Graph triplet loss
// ---------------------------------------------------------------------------

/// An anchor/positive/negative triple with the hinge margin.
pub struct TripletBatch<'a, T> {
    pub anchor: &'a MultiscaleRepresentation<T>,
    pub positive: &'a MultiscaleRepresentation<T>,
    pub negative: &'a MultiscaleRepresentation<T>,
    pub margin: T,
}

impl<'a, T: Real> TripletBatch<'a, T> {
    pub fn new(
        anchor: &'a MultiscaleRepresentation<T>,
        positive: &'a MultiscaleRepresentation<T>,
        negative: &'a MultiscaleRepresentation<T>,
        margin: T,
    ) -> Result<Self> {
        if margin <= T::zero() {
            return Err(Error::Parameter("triplet margin must be positive".into()));
        }
        Ok(TripletBatch {
            anchor,
            positive,
            negative,
            margin,
        })
    }
}

/// Gradients with respect to one representation's node matrices (per scale)
/// and its global feature.
#[derive(Debug, Clone)]
pub struct RepresentationGrads<T> {
    pub nodes: Vec<Array2<T>>,
    pub global: Array1<T>,
}

impl<T: Real> RepresentationGrads<T> {
    fn zeros_like(rep: &MultiscaleRepresentation<T>) -> Self {
        RepresentationGrads {
            nodes: rep
                .graphs
                .iter()
                .map(|g| Array2::zeros((g.node_count(), g.node_dim())))
                .collect(),
            global: Array1::zeros(rep.global.len()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TripletGrads<T> {
    pub anchor: RepresentationGrads<T>,
    pub positive: RepresentationGrads<T>,
    pub negative: RepresentationGrads<T>,
}

/// Gradient of `cosine(fa, fb)` with respect to both concatenations,
/// scattered back onto per-scale node matrices and the global feature.
fn add_cosine_grads<T: Real>(
    rep_a: &MultiscaleRepresentation<T>,
    rep_b: &MultiscaleRepresentation<T>,
    scale: T,
    out_a: &mut RepresentationGrads<T>,
    out_b: &mut RepresentationGrads<T>,
) -> Result<()> {
    let retained = full_retained(rep_a);
    let fa = concatenate(rep_a, &retained);
    let fb = concatenate(rep_b, &retained);
    let mut dot = T::zero();
    let mut na2 = T::zero();
    let mut nb2 = T::zero();
    for (&x, &y) in fa.iter().zip(fb.iter()) {
        dot = dot + x * y;
        na2 = na2 + x * x;
        nb2 = nb2 + y * y;
    }
    if na2 == T::zero() || nb2 == T::zero() {
        return Err(Error::UndefinedSimilarity("cosine of a zero vector".into()));
    }
    let na = na2.sqrt();
    let nb = nb2.sqrt();
    let c = dot / (na * nb);
    // d cos / d fa = fb / (|fa||fb|) - cos * fa / |fa|^2, and symmetrically.
    let inv = T::one() / (na * nb);
    let ga: Vec<T> = fa
        .iter()
        .zip(fb.iter())
        .map(|(&x, &y)| scale * (y * inv - c * x / na2))
        .collect();
    let gb: Vec<T> = fa
        .iter()
        .zip(fb.iter())
        .map(|(&x, &y)| scale * (x * inv - c * y / nb2))
        .collect();
    let scatter = |rep: &MultiscaleRepresentation<T>,
                   flat: &[T],
                   grads: &mut RepresentationGrads<T>| {
        let mut pos = 0;
        for (gi, g) in rep.graphs.iter().enumerate() {
            for i in 0..g.node_count() {
                for k in 0..g.node_dim() {
                    grads.nodes[gi][[i, k]] = grads.nodes[gi][[i, k]] + flat[pos];
                    pos += 1;
                }
            }
        }
        for k in 0..rep.global.len() {
            grads.global[k] = grads.global[k] + flat[pos];
            pos += 1;
        }
    };
    scatter(rep_a, &ga, out_a);
    scatter(rep_b, &gb, out_b);
    Ok(())
}

fn full_similarity<T: Real>(
    a: &MultiscaleRepresentation<T>,
    b: &MultiscaleRepresentation<T>,
    adj_sign: AdjSign,
) -> Result<T> {
    similarity(a, b, &full_retained(a), adj_sign)
}

/// Hinge loss on the composite-similarity margin between the anchor-negative
/// and anchor-positive pairs, over full (unpruned) graphs.
pub fn triplet_loss<T: Real>(batch: &TripletBatch<'_, T>, adj_sign: AdjSign) -> Result<T> {
    let s_an = full_similarity(batch.anchor, batch.negative, adj_sign)?;
    let s_ap = full_similarity(batch.anchor, batch.positive, adj_sign)?;
    Ok((batch.margin + s_an - s_ap).max(T::zero()))
}

/// Loss plus gradients with respect to every node feature and global
/// feature of the three representations. The structural term carries no
/// feature dependence, so only the cosine terms contribute. On an inactive
/// hinge all gradients are zero; at the kink the active branch is taken.
pub fn triplet_loss_with_grads<T: Real>(
    batch: &TripletBatch<'_, T>,
    adj_sign: AdjSign,
) -> Result<(T, TripletGrads<T>)> {
    let s_an = full_similarity(batch.anchor, batch.negative, adj_sign)?;
    let s_ap = full_similarity(batch.anchor, batch.positive, adj_sign)?;
    let arg = batch.margin + s_an - s_ap;
    let mut grads = TripletGrads {
        anchor: RepresentationGrads::zeros_like(batch.anchor),
        positive: RepresentationGrads::zeros_like(batch.positive),
        negative: RepresentationGrads::zeros_like(batch.negative),
    };
    if arg < T::zero() {
        return Ok((T::zero(), grads));
    }
    // d loss / d s_an = +1, d loss / d s_ap = -1.
    add_cosine_grads(
        batch.anchor,
        batch.negative,
        T::one(),
        &mut grads.anchor,
        &mut grads.negative,
    )?;
    add_cosine_grads(
        batch.anchor,
        batch.positive,
        -T::one(),
        &mut grads.anchor,
        &mut grads.positive,
    )?;
    Ok((arg.max(T::zero()), grads))
}
