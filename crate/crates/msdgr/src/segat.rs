//! Graph feature extraction layers: channel squeeze-and-excitation, an
//! edge-weighted graph attention layer, and the four-layer residual block
//! with a final dimension reduction. Every layer has a hand-derived backward
//! pass; `gradcheck` verifies them against central finite differences.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::container::WeightStore;
use crate::error::{Error, Result};
use crate::graph::FeatureGraph;
use crate::scalar::{
    elu, elu_derivative, leaky_relu, leaky_relu_derivative, relu, relu_derivative, sigmoid,
    sigmoid_derivative_from_output, Real,
};

pub const DEFAULT_REDUCTION_RATIO: usize = 4;
pub const DEFAULT_ATTENTION_SLOPE: f64 = 0.2;

/// Activation applied to the aggregated attention output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Elu,
    Relu,
}

impl OutputActivation {
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            OutputActivation::Elu => elu(x),
            OutputActivation::Relu => relu(x),
        }
    }

    fn derivative<T: Real>(self, x: T) -> T {
        match self {
            OutputActivation::Elu => elu_derivative(x),
            OutputActivation::Relu => relu_derivative(x),
        }
    }
}

fn xavier<T: Real>(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<T> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| T::of(rng.gen::<f64>() * 2.0 * bound - bound))
}

fn store_matrix<T: Real>(store: &mut WeightStore, name: String, m: &Array2<T>) -> Result<()> {
    store.insert_values(name, vec![m.nrows(), m.ncols()], m.as_slice().expect("layout"))
}

fn load_matrix<T: Real>(store: &WeightStore, name: &str) -> Result<Array2<T>> {
    let arr = store.get_any(name)?;
    if arr.shape.len() != 2 {
        return Err(Error::Container(format!(
            "{name} must be rank 2, got {:?}",
            arr.shape
        )));
    }
    Ok(Array2::from_shape_vec(
        (arr.shape[0], arr.shape[1]),
        arr.data.iter().map(|&v| T::of(v as f64)).collect(),
    )
    .expect("shape checked"))
}

// ---------------------------------------------------------------------------
// Squeeze-and-excitation layer
// ---------------------------------------------------------------------------

/// Parameters of the channel excitation layer: a bottleneck of two linear
/// maps, `(C/rho) x C` and `C x (C/rho)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeParams<T> {
    pub w1: Array2<T>,
    pub w2: Array2<T>,
}

impl<T: Real> SeParams<T> {
    pub fn new(w1: Array2<T>, w2: Array2<T>) -> Result<Self> {
        let (mid, c) = (w1.nrows(), w1.ncols());
        if w2.nrows() != c || w2.ncols() != mid {
            return Err(Error::DimensionMismatch(format!(
                "excitation shapes inconsistent: w1 {}x{}, w2 {}x{}",
                mid,
                c,
                w2.nrows(),
                w2.ncols()
            )));
        }
        Ok(SeParams { w1, w2 })
    }

    pub fn init(channels: usize, reduction_ratio: usize, rng: &mut impl Rng) -> Result<Self> {
        if reduction_ratio == 0 || channels % reduction_ratio != 0 {
            return Err(Error::Parameter(format!(
                "channel count {channels} not divisible by reduction ratio {reduction_ratio}"
            )));
        }
        let mid = channels / reduction_ratio;
        Ok(SeParams {
            w1: xavier(mid, channels, rng),
            w2: xavier(channels, mid, rng),
        })
    }

    pub fn channels(&self) -> usize {
        self.w1.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct SeCache<T> {
    input: Array2<T>,
    z: Array1<T>,
    v: Array1<T>,
    h: Array1<T>,
    s: Array1<T>,
}

impl<T: Real> SeCache<T> {
    /// Rectifier input of the bottleneck; the only kink in this layer.
    pub fn bottleneck_preactivation(&self) -> &Array1<T> {
        &self.v
    }
}

#[derive(Debug, Clone)]
pub struct SeGrads<T> {
    pub w1: Array2<T>,
    pub w2: Array2<T>,
    pub input: Array2<T>,
}

/// Channel excitation on a node matrix: squeeze to the per-channel mean,
/// excite through the bottleneck (rectifier, then logistic), rescale every
/// node channel by the excitation vector.
pub fn se_forward_nodes<T: Real>(
    nodes: &Array2<T>,
    params: &SeParams<T>,
) -> Result<(Array2<T>, SeCache<T>)> {
    let c = nodes.ncols();
    if c != params.channels() {
        return Err(Error::DimensionMismatch(format!(
            "node dim {c} does not match excitation channels {}",
            params.channels()
        )));
    }
    let z = nodes
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::DimensionMismatch("empty node matrix".into()))?;
    let v = params.w1.dot(&z);
    let h = v.mapv(relu);
    let u = params.w2.dot(&h);
    let s = u.mapv(sigmoid);
    let mut out = nodes.clone();
    for mut row in out.rows_mut() {
        for (x, &sc) in row.iter_mut().zip(s.iter()) {
            *x = *x * sc;
        }
    }
    Ok((
        out,
        SeCache {
            input: nodes.clone(),
            z,
            v,
            h,
            s,
        },
    ))
}

pub fn se_backward_nodes<T: Real>(
    cache: &SeCache<T>,
    params: &SeParams<T>,
    upstream: &Array2<T>,
) -> SeGrads<T> {
    let n = cache.input.nrows();
    let c = cache.input.ncols();
    // d/ds through the rescale: ds[c] = sum_i up[i,c] * x[i,c]
    let mut ds: Array1<T> = Array1::zeros(c);
    for i in 0..n {
        for k in 0..c {
            ds[k] = ds[k] + upstream[[i, k]] * cache.input[[i, k]];
        }
    }
    let du = Array1::from_shape_fn(c, |k| ds[k] * sigmoid_derivative_from_output(cache.s[k]));
    let mid = cache.h.len();
    let mut dw2 = Array2::zeros((c, mid));
    for k in 0..c {
        for m in 0..mid {
            dw2[[k, m]] = du[k] * cache.h[m];
        }
    }
    let dh = params.w2.t().dot(&du);
    let dv = Array1::from_shape_fn(mid, |m| dh[m] * relu_derivative(cache.v[m]));
    let mut dw1 = Array2::zeros((mid, c));
    for m in 0..mid {
        for k in 0..c {
            dw1[[m, k]] = dv[m] * cache.z[k];
        }
    }
    let dz = params.w1.t().dot(&dv);
    let inv_n = T::one() / T::of(n as f64);
    let mut dinput = Array2::zeros((n, c));
    for i in 0..n {
        for k in 0..c {
            dinput[[i, k]] = upstream[[i, k]] * cache.s[k] + dz[k] * inv_n;
        }
    }
    SeGrads {
        w1: dw1,
        w2: dw2,
        input: dinput,
    }
}

/// Graph-level wrapper: adjacency and coordinates pass through untouched.
pub fn se_forward<T: Real>(g: &FeatureGraph<T>, params: &SeParams<T>) -> Result<FeatureGraph<T>> {
    let (nodes, _) = se_forward_nodes(&g.nodes, params)?;
    g.with_nodes(nodes)
}

// ---------------------------------------------------------------------------
// Edge-weighted graph attention layer
// ---------------------------------------------------------------------------

/// Parameters of the attention layer: the shared linear map `W` (C x C) and
/// attention vector (2C), plus the two activation choices that the
/// formulation leaves open.
#[derive(Debug, Clone, PartialEq)]
pub struct GatParams<T> {
    pub w: Array2<T>,
    pub w_att: Array1<T>,
    pub attention_slope: T,
    pub output_activation: OutputActivation,
}

impl<T: Real> GatParams<T> {
    pub fn new(w: Array2<T>, w_att: Array1<T>) -> Result<Self> {
        if w.nrows() != w.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "attention weight matrix must be square, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        if w_att.len() != 2 * w.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "attention vector length {} != 2*{}",
                w_att.len(),
                w.nrows()
            )));
        }
        Ok(GatParams {
            w,
            w_att,
            attention_slope: T::of(DEFAULT_ATTENTION_SLOPE),
            output_activation: OutputActivation::Elu,
        })
    }

    pub fn init(channels: usize, rng: &mut impl Rng) -> Self {
        let w = xavier(channels, channels, rng);
        let bound = (6.0 / (2 * channels + 1) as f64).sqrt();
        let w_att =
            Array1::from_shape_fn(2 * channels, |_| T::of(rng.gen::<f64>() * 2.0 * bound - bound));
        GatParams {
            w,
            w_att,
            attention_slope: T::of(DEFAULT_ATTENTION_SLOPE),
            output_activation: OutputActivation::Elu,
        }
    }

    pub fn channels(&self) -> usize {
        self.w.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct GatCache<T> {
    input: Array2<T>,
    /// Transformed nodes, row i = W f_i.
    g: Array2<T>,
    /// First-order neighborhoods including self: indices with adjacency > 0.
    neighbors: Vec<Vec<usize>>,
    /// Attention weights aligned with `neighbors`.
    alpha: Vec<Vec<T>>,
    /// Raw pre-activation attention logits `adj * e`, aligned with `neighbors`.
    raw: Vec<Vec<T>>,
    /// Aggregated pre-activation output rows.
    m: Array2<T>,
    adjacency: Array2<T>,
}

impl<T: Real> GatCache<T> {
    /// Leaky-rectifier inputs of the attention logits; the kinks of this
    /// layer (the output activation is continuously differentiable).
    pub fn attention_preactivation(&self) -> &[Vec<T>] {
        &self.raw
    }

    /// Normalized attention weights per node, aligned with
    /// [`GatCache::neighborhoods`].
    pub fn attention_weights(&self) -> &[Vec<T>] {
        &self.alpha
    }

    /// First-order neighborhoods (adjacency > 0 plus self) per node.
    pub fn neighborhoods(&self) -> &[Vec<usize>] {
        &self.neighbors
    }
}

#[derive(Debug, Clone)]
pub struct GatGrads<T> {
    pub w: Array2<T>,
    pub w_att: Array1<T>,
    pub input: Array2<T>,
}

/// Attention forward pass over the weighted graph. For each node the
/// attention logits are the shared-vector scores of transformed feature
/// pairs, scaled by the adjacency entry, passed through a leaky rectifier
/// and softmax-normalized over the node's first-order neighborhood
/// (adjacency > 0, which always includes the node itself).
pub fn gat_forward_nodes<T: Real>(
    nodes: &Array2<T>,
    adjacency: &Array2<T>,
    params: &GatParams<T>,
) -> Result<(Array2<T>, GatCache<T>)> {
    let n = nodes.nrows();
    let c = nodes.ncols();
    if c != params.channels() {
        return Err(Error::DimensionMismatch(format!(
            "node dim {c} does not match attention channels {}",
            params.channels()
        )));
    }
    if adjacency.nrows() != n || adjacency.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "adjacency {}x{} does not match {n} nodes",
            adjacency.nrows(),
            adjacency.ncols()
        )));
    }
    let g = nodes.dot(&params.w.t());
    // e_ab = u . g_a + v . g_b with w_att = [u ; v]
    let u = params.w_att.slice(ndarray::s![..c]);
    let v = params.w_att.slice(ndarray::s![c..]);
    let pu: Array1<T> = g.dot(&u);
    let pv: Array1<T> = g.dot(&v);

    let mut neighbors = Vec::with_capacity(n);
    let mut alpha = Vec::with_capacity(n);
    let mut raw_all = Vec::with_capacity(n);
    let mut m = Array2::zeros((n, c));
    for a in 0..n {
        let mut nbrs: Vec<usize> = (0..n)
            .filter(|&b| b == a || adjacency[[a, b]] > T::zero())
            .collect();
        nbrs.sort_unstable();
        let raw: Vec<T> = nbrs
            .iter()
            .map(|&b| adjacency[[a, b]] * (pu[a] + pv[b]))
            .collect();
        let acts: Vec<T> = raw
            .iter()
            .map(|&x| leaky_relu(x, params.attention_slope))
            .collect();
        let max = acts.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        let exps: Vec<T> = acts.iter().map(|&x| (x - max).exp()).collect();
        let denom = exps.iter().fold(T::zero(), |s, &e| s + e);
        let al: Vec<T> = exps.iter().map(|&e| e / denom).collect();
        for (&b, &a_ab) in nbrs.iter().zip(al.iter()) {
            for k in 0..c {
                m[[a, k]] = m[[a, k]] + a_ab * g[[b, k]];
            }
        }
        neighbors.push(nbrs);
        alpha.push(al);
        raw_all.push(raw);
    }
    let out = m.mapv(|x| params.output_activation.apply(x));
    Ok((
        out,
        GatCache {
            input: nodes.clone(),
            g,
            neighbors,
            alpha,
            raw: raw_all,
            m,
            adjacency: adjacency.clone(),
        },
    ))
}

pub fn gat_backward_nodes<T: Real>(
    cache: &GatCache<T>,
    params: &GatParams<T>,
    upstream: &Array2<T>,
) -> GatGrads<T> {
    let n = cache.input.nrows();
    let c = cache.input.ncols();
    let u = params.w_att.slice(ndarray::s![..c]);
    let v = params.w_att.slice(ndarray::s![c..]);

    // Through the output activation.
    let mut dm = Array2::zeros((n, c));
    for a in 0..n {
        for k in 0..c {
            dm[[a, k]] =
                upstream[[a, k]] * params.output_activation.derivative(cache.m[[a, k]]);
        }
    }

    let mut dg = Array2::<T>::zeros((n, c));
    let mut du_att = Array1::<T>::zeros(c);
    let mut dv_att = Array1::<T>::zeros(c);

    for a in 0..n {
        let nbrs = &cache.neighbors[a];
        let al = &cache.alpha[a];
        // dalpha_ab = dm_a . g_b
        let dalpha: Vec<T> = nbrs
            .iter()
            .map(|&b| {
                let mut acc = T::zero();
                for k in 0..c {
                    acc = acc + dm[[a, k]] * cache.g[[b, k]];
                }
                acc
            })
            .collect();
        // dg_b += alpha_ab * dm_a
        for (idx, &b) in nbrs.iter().enumerate() {
            for k in 0..c {
                dg[[b, k]] = dg[[b, k]] + al[idx] * dm[[a, k]];
            }
        }
        // Softmax backward: dl_j = alpha_j * (dalpha_j - sum_k alpha_k dalpha_k)
        let dot = al
            .iter()
            .zip(dalpha.iter())
            .fold(T::zero(), |s, (&a_k, &d_k)| s + a_k * d_k);
        for (idx, &b) in nbrs.iter().enumerate() {
            let dl = al[idx] * (dalpha[idx] - dot);
            let draw = dl * leaky_relu_derivative(cache.raw[a][idx], params.attention_slope);
            let de = draw * cache.adjacency[[a, b]];
            // e_ab = u.g_a + v.g_b
            for k in 0..c {
                du_att[k] = du_att[k] + de * cache.g[[a, k]];
                dv_att[k] = dv_att[k] + de * cache.g[[b, k]];
                dg[[a, k]] = dg[[a, k]] + de * u[k];
                dg[[b, k]] = dg[[b, k]] + de * v[k];
            }
        }
    }

    // g = X W^T  =>  dW = dg^T X, dX = dg W
    let dw = dg.t().dot(&cache.input);
    let dinput = dg.dot(&params.w);
    let mut w_att = Array1::zeros(2 * c);
    for k in 0..c {
        w_att[k] = du_att[k];
        w_att[c + k] = dv_att[k];
    }
    GatGrads {
        w: dw,
        w_att,
        input: dinput,
    }
}

/// Graph-level wrapper: adjacency and coordinates pass through untouched.
pub fn gat_forward<T: Real>(g: &FeatureGraph<T>, params: &GatParams<T>) -> Result<FeatureGraph<T>> {
    let (nodes, _) = gat_forward_nodes(&g.nodes, &g.adjacency, params)?;
    g.with_nodes(nodes)
}

// ---------------------------------------------------------------------------
// Residual block with dimension reduction
// ---------------------------------------------------------------------------

/// The four-layer residual block (excitation, attention, excitation,
/// attention), a residual add, and a rectified linear dimension reduction
/// from `C` to `C' < C`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBlockParams<T> {
    pub se1: SeParams<T>,
    pub gat1: GatParams<T>,
    pub se2: SeParams<T>,
    pub gat2: GatParams<T>,
    /// Reduction matrix, `C' x C`.
    pub reduce: Array2<T>,
}

impl<T: Real> GraphBlockParams<T> {
    pub fn new(
        se1: SeParams<T>,
        gat1: GatParams<T>,
        se2: SeParams<T>,
        gat2: GatParams<T>,
        reduce: Array2<T>,
    ) -> Result<Self> {
        let c = se1.channels();
        for (name, got) in [
            ("gat1", gat1.channels()),
            ("se2", se2.channels()),
            ("gat2", gat2.channels()),
            ("reduce", reduce.ncols()),
        ] {
            if got != c {
                return Err(Error::DimensionMismatch(format!(
                    "block layer {name} works on {got} channels, block input has {c}"
                )));
            }
        }
        if reduce.nrows() >= c {
            return Err(Error::DimensionMismatch(format!(
                "reduction must lower the dimension: {} >= {c}",
                reduce.nrows()
            )));
        }
        Ok(GraphBlockParams {
            se1,
            gat1,
            se2,
            gat2,
            reduce,
        })
    }

    pub fn init(
        channels: usize,
        reduced_dim: usize,
        reduction_ratio: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        GraphBlockParams::new(
            SeParams::init(channels, reduction_ratio, rng)?,
            GatParams::init(channels, rng),
            SeParams::init(channels, reduction_ratio, rng)?,
            GatParams::init(channels, rng),
            xavier(reduced_dim, channels, rng),
        )
    }

    pub fn channels(&self) -> usize {
        self.se1.channels()
    }

    pub fn reduced_dim(&self) -> usize {
        self.reduce.nrows()
    }

    /// Serializes under `"<prefix>se1.W1"`, `"<prefix>gat1.W"`,
    /// `"<prefix>gat1.w_att"`, ..., `"<prefix>reduce.W"`.
    pub fn write_to_store(&self, store: &mut WeightStore, prefix: &str) -> Result<()> {
        store_matrix(store, format!("{prefix}se1.W1"), &self.se1.w1)?;
        store_matrix(store, format!("{prefix}se1.W2"), &self.se1.w2)?;
        store_matrix(store, format!("{prefix}gat1.W"), &self.gat1.w)?;
        store.insert_values(
            format!("{prefix}gat1.w_att"),
            vec![self.gat1.w_att.len()],
            self.gat1.w_att.as_slice().expect("layout"),
        )?;
        store_matrix(store, format!("{prefix}se2.W1"), &self.se2.w1)?;
        store_matrix(store, format!("{prefix}se2.W2"), &self.se2.w2)?;
        store_matrix(store, format!("{prefix}gat2.W"), &self.gat2.w)?;
        store.insert_values(
            format!("{prefix}gat2.w_att"),
            vec![self.gat2.w_att.len()],
            self.gat2.w_att.as_slice().expect("layout"),
        )?;
        store_matrix(store, format!("{prefix}reduce.W"), &self.reduce)?;
        Ok(())
    }

    pub fn read_from_store(store: &WeightStore, prefix: &str) -> Result<Self> {
        let load_gat = |tag: &str| -> Result<GatParams<T>> {
            let w = load_matrix(store, &format!("{prefix}{tag}.W"))?;
            let len = 2 * w.nrows();
            let w_att = Array1::from_vec(store.get_values(&format!("{prefix}{tag}.w_att"), &[len])?);
            GatParams::new(w, w_att)
        };
        GraphBlockParams::new(
            SeParams::new(
                load_matrix(store, &format!("{prefix}se1.W1"))?,
                load_matrix(store, &format!("{prefix}se1.W2"))?,
            )?,
            load_gat("gat1")?,
            SeParams::new(
                load_matrix(store, &format!("{prefix}se2.W1"))?,
                load_matrix(store, &format!("{prefix}se2.W2"))?,
            )?,
            load_gat("gat2")?,
            load_matrix(store, &format!("{prefix}reduce.W"))?,
        )
    }

    /// Visits every parameter array as a flat slice, in a fixed order shared
    /// with [`GraphBlockGrads::visit`]. The optimizer walks both in step.
    pub fn visit_mut(&mut self, mut f: impl FnMut(&mut [T])) {
        f(self.se1.w1.as_slice_mut().expect("layout"));
        f(self.se1.w2.as_slice_mut().expect("layout"));
        f(self.gat1.w.as_slice_mut().expect("layout"));
        f(self.gat1.w_att.as_slice_mut().expect("layout"));
        f(self.se2.w1.as_slice_mut().expect("layout"));
        f(self.se2.w2.as_slice_mut().expect("layout"));
        f(self.gat2.w.as_slice_mut().expect("layout"));
        f(self.gat2.w_att.as_slice_mut().expect("layout"));
        f(self.reduce.as_slice_mut().expect("layout"));
    }
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    se1: SeCache<T>,
    gat1: GatCache<T>,
    se2: SeCache<T>,
    gat2: GatCache<T>,
    /// Residual sum before reduction.
    residual: Array2<T>,
    /// Pre-activation reduced output.
    pre: Array2<T>,
}

impl<T: Real> BlockCache<T> {
    /// Every rectifier or leaky-rectifier input inside the block.
    pub fn kink_preactivations(&self) -> impl Iterator<Item = T> + '_ {
        self.se1
            .v
            .iter()
            .chain(self.se2.v.iter())
            .copied()
            .chain(self.gat1.raw.iter().flatten().copied())
            .chain(self.gat2.raw.iter().flatten().copied())
            .chain(self.pre.iter().copied())
    }
}

#[derive(Debug, Clone)]
pub struct GraphBlockGrads<T> {
    pub se1: SeGrads<T>,
    pub gat1: GatGrads<T>,
    pub se2: SeGrads<T>,
    pub gat2: GatGrads<T>,
    pub reduce: Array2<T>,
    pub input: Array2<T>,
}

impl<T: Real> GraphBlockGrads<T> {
    /// Flat parameter gradients in the same order as
    /// [`GraphBlockParams::visit_mut`].
    pub fn visit(&self, mut f: impl FnMut(&[T])) {
        f(self.se1.w1.as_slice().expect("layout"));
        f(self.se1.w2.as_slice().expect("layout"));
        f(self.gat1.w.as_slice().expect("layout"));
        f(self.gat1.w_att.as_slice().expect("layout"));
        f(self.se2.w1.as_slice().expect("layout"));
        f(self.se2.w2.as_slice().expect("layout"));
        f(self.gat2.w.as_slice().expect("layout"));
        f(self.gat2.w_att.as_slice().expect("layout"));
        f(self.reduce.as_slice().expect("layout"));
    }
}

pub fn graph_block_forward_nodes<T: Real>(
    nodes: &Array2<T>,
    adjacency: &Array2<T>,
    params: &GraphBlockParams<T>,
) -> Result<(Array2<T>, BlockCache<T>)> {
    let (x1, se1) = se_forward_nodes(nodes, &params.se1)?;
    let (x2, gat1) = gat_forward_nodes(&x1, adjacency, &params.gat1)?;
    let (x3, se2) = se_forward_nodes(&x2, &params.se2)?;
    let (x4, gat2) = gat_forward_nodes(&x3, adjacency, &params.gat2)?;
    let residual = &x4 + nodes;
    let pre = residual.dot(&params.reduce.t());
    let out = pre.mapv(relu);
    Ok((
        out,
        BlockCache {
            se1,
            gat1,
            se2,
            gat2,
            residual,
            pre,
        },
    ))
}

pub fn graph_block_backward_nodes<T: Real>(
    cache: &BlockCache<T>,
    params: &GraphBlockParams<T>,
    upstream: &Array2<T>,
) -> GraphBlockGrads<T> {
    let mut dpre = upstream.clone();
    for (d, &p) in dpre.iter_mut().zip(cache.pre.iter()) {
        *d = *d * relu_derivative(p);
    }
    let dreduce = dpre.t().dot(&cache.residual);
    let dresidual = dpre.dot(&params.reduce);

    let gat2 = gat_backward_nodes(&cache.gat2, &params.gat2, &dresidual);
    let se2 = se_backward_nodes(&cache.se2, &params.se2, &gat2.input);
    let gat1 = gat_backward_nodes(&cache.gat1, &params.gat1, &se2.input);
    let se1 = se_backward_nodes(&cache.se1, &params.se1, &gat1.input);

    let dinput = &se1.input + &dresidual;
    GraphBlockGrads {
        se1,
        gat1,
        se2,
        gat2,
        reduce: dreduce,
        input: dinput,
    }
}

/// Graph-level wrapper: the output graph keeps coordinates, adjacency,
/// radius and scale, with node dimension reduced to `C'`.
pub fn graph_block_forward<T: Real>(
    g: &FeatureGraph<T>,
    params: &GraphBlockParams<T>,
) -> Result<FeatureGraph<T>> {
    let (nodes, _) = graph_block_forward_nodes(&g.nodes, &g.adjacency, params)?;
    g.with_nodes(nodes)
}
