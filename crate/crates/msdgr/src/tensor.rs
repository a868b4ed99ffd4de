//! Dense `C x H x W` tensors, bilinear sampling, and forward passes of the
//! small fixed-architecture networks (coordinate-regression net and the
//! recognition backbone) with externally loaded weights.

use ndarray::Array2;
use rand::Rng;

use crate::container::WeightStore;
use crate::error::{Error, Result};
use crate::scalar::{relu, Real};

/// Dense rank-3 tensor in `(channel, row, col)` row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor3<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Parameter("tensor dimensions must be positive".into()));
        }
        if data.len() != channels * height * width {
            return Err(Error::DimensionMismatch(format!(
                "tensor data length {} != {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor construction".into()));
        }
        Ok(Tensor3 {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor3 {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for h in 0..height {
                for w in 0..width {
                    data.push(f(c, h, w));
                }
            }
        }
        Tensor3 {
            channels,
            height,
            width,
            data,
        }
    }

    /// Single-channel tensor from a 2-D array of pixel values.
    pub fn from_image(image: &Array2<T>) -> Self {
        let (h, w) = image.dim();
        Tensor3 {
            channels: 1,
            height: h,
            width: w,
            data: image.iter().copied().collect(),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn get(&self, c: usize, h: usize, w: usize) -> T {
        self.data[(c * self.height + h) * self.width + w]
    }

    #[inline]
    pub fn set(&mut self, c: usize, h: usize, w: usize, v: T) {
        self.data[(c * self.height + h) * self.width + w] = v;
    }

    /// Per-pixel L2 norm across channels.
    pub fn channel_norms(&self) -> Array2<T> {
        let mut out: Array2<T> = Array2::zeros((self.height, self.width));
        for c in 0..self.channels {
            for h in 0..self.height {
                for w in 0..self.width {
                    let v = self.get(c, h, w);
                    out[[h, w]] = out[[h, w]] + v * v;
                }
            }
        }
        out.mapv_inplace(|v| v.sqrt());
        out
    }

    /// Channel vector at fractional coordinates `(i, j)` by bilinear
    /// interpolation over the four surrounding grid points. At integer
    /// coordinates this reduces to direct indexing.
    pub fn bilinear_sample(&self, i: T, j: T) -> Result<Vec<T>> {
        let max_i = T::of((self.height - 1) as f64);
        let max_j = T::of((self.width - 1) as f64);
        if !(i >= T::zero() && i <= max_i && j >= T::zero() && j <= max_j) {
            return Err(Error::OutOfBounds {
                i: i.to_f64_lossy(),
                j: j.to_f64_lossy(),
                max_i: max_i.to_f64_lossy(),
                max_j: max_j.to_f64_lossy(),
            });
        }
        let i0 = i.floor();
        let j0 = j.floor();
        let di = i - i0;
        let dj = j - j0;
        let i0 = i0.to_f64_lossy() as usize;
        let j0 = j0.to_f64_lossy() as usize;
        let i1 = (i0 + 1).min(self.height - 1);
        let j1 = (j0 + 1).min(self.width - 1);
        let one = T::one();
        let w00 = (one - di) * (one - dj);
        let w01 = (one - di) * dj;
        let w10 = di * (one - dj);
        let w11 = di * dj;
        let mut out = Vec::with_capacity(self.channels);
        for c in 0..self.channels {
            out.push(
                w00 * self.get(c, i0, j0)
                    + w01 * self.get(c, i0, j1)
                    + w10 * self.get(c, i1, j0)
                    + w11 * self.get(c, i1, j1),
            );
        }
        Ok(out)
    }
}

/// Layer kinds the table-driven networks are made of.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Pool,
    FullyConnected,
}

/// One table row: a named layer with its geometry.
///
/// Convolutions and fully-connected layers carry weights under
/// `"<name>.weight"` / `"<name>.bias"` in the [`WeightStore`]; pooling is
/// 2x2 max-pooling with stride 2 in both networks used here but the kernel
/// and stride stay explicit.
#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub in_channels: usize,
    pub out_channels: usize,
    /// Rectifier after the layer. Final regression layers leave this off.
    pub relu: bool,
}

impl LayerSpec {
    pub fn conv(
        name: &str,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Conv,
            kernel,
            stride,
            padding,
            in_channels,
            out_channels,
            relu: true,
        }
    }

    pub fn pool(name: &str, kernel: usize, stride: usize) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Pool,
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: (0, 0),
            in_channels: 0,
            out_channels: 0,
            relu: false,
        }
    }

    pub fn fully_connected(name: &str, in_features: usize, out_features: usize) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::FullyConnected,
            kernel: (0, 0),
            stride: (0, 0),
            padding: (0, 0),
            in_channels: in_features,
            out_channels: out_features,
            relu: true,
        }
    }

    pub fn no_relu(mut self) -> Self {
        self.relu = false;
        self
    }
}

/// A full network: expected input shape plus the layer table.
#[derive(Debug, Clone)]
pub struct NetworkSpec {
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Prepends `prefix` to every layer name, namespacing the weight lookups.
    pub fn with_prefix(mut self, prefix: &str) -> Self {
        for layer in &mut self.layers {
            layer.name = format!("{prefix}{}", layer.name);
        }
        self
    }
}

/// Output of a network: spatial maps until the first fully-connected layer,
/// a flat vector from there on.
#[derive(Debug, Clone)]
pub enum NetworkOutput<T> {
    Map(Tensor3<T>),
    Vector(Vec<T>),
}

impl<T: Real> NetworkOutput<T> {
    pub fn as_map(&self) -> Result<&Tensor3<T>> {
        match self {
            NetworkOutput::Map(t) => Ok(t),
            NetworkOutput::Vector(_) => Err(Error::DimensionMismatch(
                "expected a spatial map, found a flat vector".into(),
            )),
        }
    }

    pub fn into_vector(self) -> Result<Vec<T>> {
        match self {
            NetworkOutput::Vector(v) => Ok(v),
            NetworkOutput::Map(_) => Err(Error::DimensionMismatch(
                "expected a flat vector, found a spatial map".into(),
            )),
        }
    }
}

fn conv_output_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

fn conv_forward<T: Real>(
    spec: &LayerSpec,
    weights: &WeightStore,
    input: &Tensor3<T>,
) -> Result<Tensor3<T>> {
    let (c_in, h, w) = input.shape();
    if c_in != spec.in_channels {
        return Err(Error::ShapeMismatch {
            layer: spec.name.clone(),
            detail: format!("input has {c_in} channels, layer expects {}", spec.in_channels),
        });
    }
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    if h + 2 * ph < kh || w + 2 * pw < kw {
        return Err(Error::ShapeMismatch {
            layer: spec.name.clone(),
            detail: format!("input {h}x{w} smaller than kernel {kh}x{kw}"),
        });
    }
    let kernel: Vec<T> = weights.get_values(
        &format!("{}.weight", spec.name),
        &[spec.out_channels, spec.in_channels, kh, kw],
    )?;
    let bias: Vec<T> = weights.get_values(&format!("{}.bias", spec.name), &[spec.out_channels])?;

    let oh = conv_output_dim(h, kh, sh, ph);
    let ow = conv_output_dim(w, kw, sw, pw);
    let mut out = Tensor3::zeros(spec.out_channels, oh, ow);
    for o in 0..spec.out_channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = bias[o];
                for i in 0..c_in {
                    for ky in 0..kh {
                        let iy = (y * sh + ky) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (x * sw + kx) as isize - pw as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let wv = kernel[((o * c_in + i) * kh + ky) * kw + kx];
                            acc = acc + wv * input.get(i, iy as usize, ix as usize);
                        }
                    }
                }
                out.set(o, y, x, if spec.relu { relu(acc) } else { acc });
            }
        }
    }
    Ok(out)
}

fn pool_forward<T: Real>(spec: &LayerSpec, input: &Tensor3<T>) -> Result<Tensor3<T>> {
    let (c, h, w) = input.shape();
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    if h < kh || w < kw {
        return Err(Error::ShapeMismatch {
            layer: spec.name.clone(),
            detail: format!("input {h}x{w} smaller than pooling window {kh}x{kw}"),
        });
    }
    let oh = (h - kh) / sh + 1;
    let ow = (w - kw) / sw + 1;
    let mut out = Tensor3::zeros(c, oh, ow);
    for ci in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut m = input.get(ci, y * sh, x * sw);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let v = input.get(ci, y * sh + ky, x * sw + kx);
                        if v > m {
                            m = v;
                        }
                    }
                }
                out.set(ci, y, x, m);
            }
        }
    }
    Ok(out)
}

fn fc_forward<T: Real>(spec: &LayerSpec, weights: &WeightStore, input: &[T]) -> Result<Vec<T>> {
    if input.len() != spec.in_channels {
        return Err(Error::ShapeMismatch {
            layer: spec.name.clone(),
            detail: format!(
                "flattened input length {}, layer expects {}",
                input.len(),
                spec.in_channels
            ),
        });
    }
    let w: Vec<T> = weights.get_values(
        &format!("{}.weight", spec.name),
        &[spec.out_channels, spec.in_channels],
    )?;
    let bias: Vec<T> = weights.get_values(&format!("{}.bias", spec.name), &[spec.out_channels])?;
    let mut out = Vec::with_capacity(spec.out_channels);
    for o in 0..spec.out_channels {
        let mut acc = bias[o];
        let row = &w[o * spec.in_channels..(o + 1) * spec.in_channels];
        for (wv, xv) in row.iter().zip(input) {
            acc = acc + *wv * *xv;
        }
        out.push(if spec.relu { relu(acc) } else { acc });
    }
    Ok(out)
}

fn check_finite<T: Real>(name: &str, values: &[T]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("layer `{name}`")));
    }
    Ok(())
}

/// Runs the layer table on `input`, returning every intermediate output
/// alongside its layer name. Spatial maps flatten in `(c, h, w)` row-major
/// order when the first fully-connected layer is reached.
pub fn forward_network_traced<T: Real>(
    spec: &NetworkSpec,
    weights: &WeightStore,
    input: &Tensor3<T>,
) -> Result<Vec<(String, NetworkOutput<T>)>> {
    if input.shape() != spec.input {
        return Err(Error::ShapeMismatch {
            layer: "input".into(),
            detail: format!("got {:?}, network expects {:?}", input.shape(), spec.input),
        });
    }
    let mut trace = Vec::with_capacity(spec.layers.len());
    let mut current = NetworkOutput::Map(input.clone());
    for layer in &spec.layers {
        let next = match (&current, layer.kind) {
            (NetworkOutput::Map(t), LayerKind::Conv) => {
                NetworkOutput::Map(conv_forward(layer, weights, t)?)
            }
            (NetworkOutput::Map(t), LayerKind::Pool) => NetworkOutput::Map(pool_forward(layer, t)?),
            (NetworkOutput::Map(t), LayerKind::FullyConnected) => {
                NetworkOutput::Vector(fc_forward(layer, weights, t.data())?)
            }
            (NetworkOutput::Vector(v), LayerKind::FullyConnected) => {
                NetworkOutput::Vector(fc_forward(layer, weights, v)?)
            }
            (NetworkOutput::Vector(_), _) => {
                return Err(Error::ShapeMismatch {
                    layer: layer.name.clone(),
                    detail: "spatial layer after flattening".into(),
                })
            }
        };
        match &next {
            NetworkOutput::Map(t) => check_finite(&layer.name, t.data())?,
            NetworkOutput::Vector(v) => check_finite(&layer.name, v)?,
        }
        trace.push((layer.name.clone(), next.clone()));
        current = next;
    }
    Ok(trace)
}

/// Runs the layer table and returns the final output only.
pub fn forward_network<T: Real>(
    spec: &NetworkSpec,
    weights: &WeightStore,
    input: &Tensor3<T>,
) -> Result<NetworkOutput<T>> {
    let mut trace = forward_network_traced(spec, weights, input)?;
    trace
        .pop()
        .map(|(_, out)| out)
        .ok_or_else(|| Error::Parameter("network has no layers".into()))
}

/// Layer table of the coordinate-regression network that maps a feature map
/// to `2n` node coordinates. Requires `h`, `w` divisible by 4 and `c`
/// divisible by 4. The final layer has no rectifier; callers squash its
/// output through a logistic map.
pub fn sln_spec(channels: usize, height: usize, width: usize, n: usize) -> Result<NetworkSpec> {
    if height % 4 != 0 || width % 4 != 0 || channels % 4 != 0 {
        return Err(Error::Parameter(format!(
            "localizer network needs H, W, C divisible by 4, got {height}x{width}x{channels}"
        )));
    }
    let flat = (height / 4) * (width / 4) * (channels / 4);
    debug_assert_eq!(flat, height * width * channels / 64);
    let layers = vec![
        LayerSpec::pool("pool1", 2, 2),
        LayerSpec::conv("conv1", (5, 5), (1, 1), (2, 2), channels, channels / 2),
        LayerSpec::pool("pool2", 2, 2),
        LayerSpec::conv("conv2", (5, 5), (1, 1), (2, 2), channels / 2, channels / 4),
        LayerSpec::fully_connected("fc1", flat, 128),
        LayerSpec::fully_connected("fc2", 128, 2 * n).no_relu(),
    ];
    Ok(NetworkSpec {
        input: (channels, height, width),
        layers,
    })
}

/// Layer table of the lightweight recognition backbone for 128x256
/// single-channel inputs. The three convolutional blocks end at `conv3`,
/// `conv4` and `conv5`; `fc1` produces the 256-dimensional global feature
/// and `fc2` is the classification head.
pub fn iris_backbone_spec(num_classes: usize) -> NetworkSpec {
    let layers = vec![
        LayerSpec::conv("conv1", (5, 9), (1, 1), (2, 4), 1, 24),
        LayerSpec::pool("pool1", 2, 2),
        LayerSpec::conv("conv2", (5, 7), (1, 1), (2, 3), 24, 48),
        LayerSpec::pool("pool2", 2, 2),
        LayerSpec::conv("conv3", (5, 5), (1, 1), (2, 2), 48, 64),
        LayerSpec::pool("pool3", 2, 2),
        LayerSpec::conv("conv4", (5, 5), (1, 1), (2, 2), 64, 96),
        LayerSpec::pool("pool4", 2, 2),
        LayerSpec::conv("conv5", (5, 5), (1, 1), (2, 2), 96, 96),
        LayerSpec::pool("pool5", 2, 2),
        LayerSpec::fully_connected("fc1", 4 * 8 * 96, 256),
        LayerSpec::fully_connected("fc2", 256, num_classes).no_relu(),
    ];
    NetworkSpec {
        input: (1, 128, 256),
        layers,
    }
}

/// Declared output shapes of each layer, propagated from the input shape.
/// Used to validate that a table encodes the sizes it claims.
pub fn propagate_shapes(spec: &NetworkSpec) -> Result<Vec<(String, Vec<usize>)>> {
    let mut out = Vec::new();
    let (mut c, mut h, mut w) = spec.input;
    let mut flat: Option<usize> = None;
    for layer in &spec.layers {
        match layer.kind {
            LayerKind::Conv => {
                if flat.is_some() {
                    return Err(Error::ShapeMismatch {
                        layer: layer.name.clone(),
                        detail: "conv after flattening".into(),
                    });
                }
                h = conv_output_dim(h, layer.kernel.0, layer.stride.0, layer.padding.0);
                w = conv_output_dim(w, layer.kernel.1, layer.stride.1, layer.padding.1);
                c = layer.out_channels;
                out.push((layer.name.clone(), vec![c, h, w]));
            }
            LayerKind::Pool => {
                if flat.is_some() {
                    return Err(Error::ShapeMismatch {
                        layer: layer.name.clone(),
                        detail: "pool after flattening".into(),
                    });
                }
                h = (h - layer.kernel.0) / layer.stride.0 + 1;
                w = (w - layer.kernel.1) / layer.stride.1 + 1;
                out.push((layer.name.clone(), vec![c, h, w]));
            }
            LayerKind::FullyConnected => {
                let in_features = flat.unwrap_or(c * h * w);
                if in_features != layer.in_channels {
                    return Err(Error::ShapeMismatch {
                        layer: layer.name.clone(),
                        detail: format!(
                            "table declares {} input features, shape propagation gives {}",
                            layer.in_channels, in_features
                        ),
                    });
                }
                flat = Some(layer.out_channels);
                out.push((layer.name.clone(), vec![layer.out_channels]));
            }
        }
    }
    Ok(out)
}

/// Fills a weight store with scaled-uniform random weights and zero biases
/// for every parametric layer of a network, under an optional name prefix.
pub fn init_network_weights(
    spec: &NetworkSpec,
    prefix: &str,
    rng: &mut impl Rng,
) -> Result<WeightStore> {
    let mut store = WeightStore::new();
    init_network_weights_into(&mut store, spec, prefix, rng)?;
    Ok(store)
}

pub fn init_network_weights_into(
    store: &mut WeightStore,
    spec: &NetworkSpec,
    prefix: &str,
    rng: &mut impl Rng,
) -> Result<()> {
    for layer in &spec.layers {
        let (shape, fan_in, fan_out) = match layer.kind {
            LayerKind::Conv => {
                let k = layer.kernel.0 * layer.kernel.1;
                (
                    vec![layer.out_channels, layer.in_channels, layer.kernel.0, layer.kernel.1],
                    layer.in_channels * k,
                    layer.out_channels * k,
                )
            }
            LayerKind::FullyConnected => (
                vec![layer.out_channels, layer.in_channels],
                layer.in_channels,
                layer.out_channels,
            ),
            LayerKind::Pool => continue,
        };
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n)
            .map(|_| (rng.gen::<f64>() * 2.0 * bound - bound) as f32)
            .collect();
        store.insert(
            format!("{prefix}{}.weight", layer.name),
            crate::container::NamedArray::new(shape, data)?,
        );
        store.insert(
            format!("{prefix}{}.bias", layer.name),
            crate::container::NamedArray::new(vec![layer.out_channels], vec![0.0; layer.out_channels])?,
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::container::NamedArray;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp_map(c: usize, h: usize, w: usize) -> Tensor3<f64> {
        Tensor3::from_fn(c, h, w, |ci, hi, wi| (ci * 100 + hi * 10 + wi) as f64)
    }

    #[test]
    fn bilinear_at_integer_coords_is_direct_indexing() {
        let map = Tensor3::from_fn(4, 5, 6, |c, h, w| {
            if (h, w) == (2, 3) {
                c as f64
            } else {
                -1.0
            }
        });
        let v = map.bilinear_sample(2.0, 3.0).unwrap();
        assert_eq!(v, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn bilinear_of_constant_map_is_constant() {
        let map = Tensor3::from_fn(3, 4, 4, |_, _, _| 7.25f64);
        for &(i, j) in &[(0.3, 2.7), (1.5, 1.5), (3.0, 0.0), (2.999, 2.999)] {
            let v = map.bilinear_sample(i, j).unwrap();
            assert!(v.iter().all(|&x| (x - 7.25).abs() < 1e-12));
        }
    }

    #[test]
    fn bilinear_hand_example() {
        let map = Tensor3::new(1, 2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let v = map.bilinear_sample(0.5, 0.5).unwrap();
        assert_eq!(v, vec![1.5]);
    }

    #[test]
    fn bilinear_rejects_out_of_bounds() {
        let map = ramp_map(1, 3, 3);
        assert!(matches!(
            map.bilinear_sample(-0.1, 0.0),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(matches!(
            map.bilinear_sample(0.0, 2.01),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn bilinear_is_lipschitz_in_each_coordinate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let map = Tensor3::from_fn(2, 8, 9, |_, _, _| rng.gen::<f64>() * 4.0 - 2.0);
        let bound = map.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let eps = 1e-3;
        for _ in 0..200 {
            let i = rng.gen::<f64>() * (8.0 - 1.0 - eps);
            let j = rng.gen::<f64>() * (9.0 - 1.0 - eps);
            let base = map.bilinear_sample(i, j).unwrap();
            let di = map.bilinear_sample(i + eps, j).unwrap();
            let dj = map.bilinear_sample(i, j + eps).unwrap();
            for c in 0..2 {
                assert!((di[c] - base[c]).abs() <= eps * 2.0 * bound + 1e-12);
                assert!((dj[c] - base[c]).abs() <= eps * 2.0 * bound + 1e-12);
            }
        }
    }

    #[test]
    fn identity_conv_preserves_input() {
        let map = ramp_map(1, 4, 5);
        let spec = NetworkSpec {
            input: (1, 4, 5),
            layers: vec![LayerSpec::conv("id", (1, 1), (1, 1), (0, 0), 1, 1)],
        };
        let mut weights = WeightStore::new();
        weights.insert("id.weight", NamedArray::new(vec![1, 1, 1, 1], vec![1.0]).unwrap());
        weights.insert("id.bias", NamedArray::new(vec![1], vec![0.0]).unwrap());
        let out = forward_network(&spec, &weights, &map).unwrap();
        assert_eq!(out.as_map().unwrap(), &map);
    }

    #[test]
    fn max_pool_outputs_come_from_their_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let map = Tensor3::from_fn(3, 6, 8, |_, _, _| rng.gen::<f64>());
        let spec = LayerSpec::pool("pool", 2, 2);
        let out = pool_forward(&spec, &map).unwrap();
        assert_eq!(out.shape(), (3, 3, 4));
        for c in 0..3 {
            for y in 0..3 {
                for x in 0..4 {
                    let window = [
                        map.get(c, 2 * y, 2 * x),
                        map.get(c, 2 * y, 2 * x + 1),
                        map.get(c, 2 * y + 1, 2 * x),
                        map.get(c, 2 * y + 1, 2 * x + 1),
                    ];
                    let v = out.get(c, y, x);
                    assert!(window.contains(&v));
                    assert!(window.iter().all(|&w| w <= v));
                }
            }
        }
    }

    #[test]
    fn sln_table_shapes_match_declarations() {
        // The 64-node configuration on a 32x64x64 feature map ends in a
        // 128-long coordinate vector.
        let spec = sln_spec(64, 32, 64, 64).unwrap();
        let shapes = propagate_shapes(&spec).unwrap();
        assert_eq!(shapes.last().unwrap().1, vec![128]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let weights = init_network_weights(&spec, "", &mut rng).unwrap();
        let input = Tensor3::from_fn(64, 32, 64, |_, _, _| rng.gen::<f64>() - 0.5);
        let out = forward_network(&spec, &weights, &input).unwrap();
        assert_eq!(out.into_vector().unwrap().len(), 128);
    }

    #[test]
    fn backbone_table_shapes_match_declarations() {
        let spec = iris_backbone_spec(10);
        let shapes = propagate_shapes(&spec).unwrap();
        let get = |name: &str| {
            shapes
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, s)| s.clone())
                .unwrap()
        };
        assert_eq!(get("conv3"), vec![64, 32, 64]);
        assert_eq!(get("conv4"), vec![96, 16, 32]);
        assert_eq!(get("conv5"), vec![96, 8, 16]);
        assert_eq!(get("fc1"), vec![256]);
        assert_eq!(get("fc2"), vec![10]);
    }

    #[test]
    fn backbone_forward_matches_table_at_each_tap() {
        let spec = iris_backbone_spec(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let weights = init_network_weights(&spec, "", &mut rng).unwrap();
        let input = Tensor3::from_fn(1, 128, 256, |_, _, _| rng.gen::<f64>());
        let trace = forward_network_traced(&spec, &weights, &input).unwrap();
        let shape_of = |name: &str| {
            trace
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, o)| o.as_map().unwrap().shape())
                .unwrap()
        };
        assert_eq!(shape_of("conv3"), (64, 32, 64));
        assert_eq!(shape_of("conv4"), (96, 16, 32));
        assert_eq!(shape_of("conv5"), (96, 8, 16));
        let (_, fc1) = trace.iter().find(|(n, _)| n == "fc1").unwrap();
        match fc1 {
            NetworkOutput::Vector(v) => assert_eq!(v.len(), 256),
            _ => panic!("fc1 should be a vector"),
        }
    }

    #[test]
    fn shape_mismatch_names_the_layer() {
        let spec = NetworkSpec {
            input: (1, 4, 4),
            layers: vec![LayerSpec::conv("convX", (3, 3), (1, 1), (1, 1), 2, 1)],
        };
        let map = ramp_map(1, 4, 4);
        let err = forward_network(&spec, &WeightStore::new(), &map).unwrap_err();
        match err {
            Error::ShapeMismatch { layer, .. } => assert_eq!(layer, "convX"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn missing_weights_are_reported_by_name() {
        let spec = NetworkSpec {
            input: (1, 4, 4),
            layers: vec![LayerSpec::conv("conv1", (3, 3), (1, 1), (1, 1), 1, 1)],
        };
        let err = forward_network(&spec, &WeightStore::new(), &ramp_map(1, 4, 4)).unwrap_err();
        assert!(matches!(err, Error::MissingWeights(name) if name == "conv1.weight"));
    }
}
