//! Extraction pipelines: images to multiscale representations, either
//! through the Gabor filter bank or through the CNN backbone with loaded
//! weights, with optional trained graph blocks on top. Also the per-sample
//! representation container files.

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, LocalizerMode, PipelineKind};
use crate::container::WeightStore;
use crate::error::{Error, Result};
use crate::gabor::{self, GaborBank};
use crate::graph::{
    default_radius, make_feature_graph, read_coords_csv, FeatureGraph, Localizer, NodeCoords,
    ScaleId,
};
use crate::matcher::MultiscaleRepresentation;
use crate::scalar::Real;
use crate::segat::{graph_block_forward, GraphBlockParams};
use crate::tensor::{
    forward_network_traced, init_network_weights_into, iris_backbone_spec, sln_spec, NetworkOutput,
    Tensor3,
};

/// Backbone taps feeding the three scales, finest first.
const BACKBONE_TAPS: [&str; 3] = ["conv3", "conv4", "conv5"];

/// A ready-to-run extractor built from an experiment config.
pub struct Extractor<T> {
    config: ExperimentConfig,
    bank: Option<GaborBank<T>>,
    weights: Option<WeightStore>,
    blocks: Option<Vec<GraphBlockParams<T>>>,
    external_coords: Option<Vec<(f64, f64)>>,
}

impl<T: Real> Extractor<T> {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let bank = match config.pipeline {
            PipelineKind::Gabor => {
                let specs = match &config.gabor.bank {
                    Some(path) => gabor::read_bank_config(path)?,
                    None => gabor::default_bank_specs(),
                };
                Some(gabor::build_bank(&specs)?)
            }
            PipelineKind::CnnWeights => None,
        };
        let weights = match (&config.pipeline, &config.weights) {
            (PipelineKind::CnnWeights, Some(path)) => Some(WeightStore::load(path)?),
            (PipelineKind::CnnWeights, None) => {
                return Err(Error::MissingWeights(
                    "the cnn-weights pipeline needs a weights file (`weights = <path>`)".into(),
                ))
            }
            (PipelineKind::Gabor, Some(path)) => Some(WeightStore::load(path)?),
            (PipelineKind::Gabor, None) => None,
        };
        let blocks = match &config.segat.weights {
            Some(path) => {
                let store = WeightStore::load(path)?;
                Some(load_blocks(&store)?)
            }
            None => None,
        };
        let external_coords = match &config.localizer_csv {
            Some(path) => Some(read_coords_csv(path)?),
            None => {
                if config.localizer == LocalizerMode::External {
                    return Err(Error::Parameter(
                        "localizer.mode = external needs localizer.csv".into(),
                    ));
                }
                None
            }
        };
        Ok(Extractor {
            config: config.clone(),
            bank,
            weights,
            blocks,
            external_coords,
        })
    }

    fn localizer(&self, scale_idx: usize) -> Result<Localizer<'_>> {
        Ok(match self.config.localizer {
            LocalizerMode::Grid => Localizer::Grid,
            LocalizerMode::EnergyPeak => Localizer::EnergyPeak,
            LocalizerMode::External => Localizer::External {
                coords: self
                    .external_coords
                    .as_deref()
                    .expect("checked at construction"),
            },
            LocalizerMode::Sln => {
                let weights = self.weights.as_ref().ok_or_else(|| {
                    Error::MissingWeights("localizer.mode = sln needs a weights file".into())
                })?;
                Localizer::Sln {
                    weights,
                    prefix: format!("sln{scale_idx}."),
                }
            }
        })
    }

    fn apply_blocks(&self, graphs: Vec<FeatureGraph<T>>) -> Result<Vec<FeatureGraph<T>>> {
        match &self.blocks {
            None => Ok(graphs),
            Some(blocks) => {
                if blocks.len() != graphs.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "{} graph blocks for {} scales",
                        blocks.len(),
                        graphs.len()
                    )));
                }
                graphs
                    .into_iter()
                    .zip(blocks.iter())
                    .map(|(g, b)| graph_block_forward(&g, b))
                    .collect()
            }
        }
    }

    /// Extracts one image into a multiscale representation.
    pub fn extract_image(&self, image: &Array2<T>) -> Result<MultiscaleRepresentation<T>> {
        match self.config.pipeline {
            PipelineKind::Gabor => self.extract_gabor(image),
            PipelineKind::CnnWeights => self.extract_cnn(image),
        }
    }

    fn extract_gabor(&self, image: &Array2<T>) -> Result<MultiscaleRepresentation<T>> {
        let bank = self.bank.as_ref().expect("gabor pipeline has a bank");
        let features = gabor::extract(bank, image)?;
        let n = self.config.gabor.nodes;
        let localizer = self.localizer(0)?;
        let coords: NodeCoords<T> = crate::graph::localize_nodes(&features.tensor, &localizer, n)?;
        let graph = gabor::graph_from_gabor(&features, &coords, self.config.gabor.patch)?;
        let graphs = self.apply_blocks(vec![graph])?;
        MultiscaleRepresentation::new(graphs, Vec::new())
    }

    fn extract_cnn(&self, image: &Array2<T>) -> Result<MultiscaleRepresentation<T>> {
        let weights = self.weights.as_ref().expect("checked at construction");
        let (h, w) = image.dim();
        // Representation forward stops at fc1; the classification head is
        // training-only.
        let mut spec = iris_backbone_spec(1);
        spec.layers.pop();
        if (1, h, w) != spec.input {
            return Err(Error::ShapeMismatch {
                layer: "input".into(),
                detail: format!(
                    "backbone expects {}x{} images, got {h}x{w}",
                    spec.input.1, spec.input.2
                ),
            });
        }
        let input = Tensor3::from_image(image);
        let trace = forward_network_traced(&spec, weights, &input)?;
        let find = |name: &str| -> Result<&NetworkOutput<T>> {
            trace
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, o)| o)
                .ok_or_else(|| Error::Parameter(format!("layer `{name}` missing from backbone")))
        };
        let scales = &self.config.scales;
        let mut graphs = Vec::with_capacity(scales.node_counts.len());
        for (k, &n) in scales.node_counts.iter().enumerate() {
            let map = find(BACKBONE_TAPS[k])?.as_map()?;
            let (_, mh, mw) = map.shape();
            let radius = match &scales.radii {
                Some(r) => r[k],
                None => default_radius(mh, mw, n),
            };
            let localizer = self.localizer(k)?;
            graphs.push(make_feature_graph(
                map,
                &localizer,
                n,
                T::of(radius),
                ScaleId::from_index(k)?,
            )?);
        }
        let global = find("fc1")?.clone().into_vector()?;
        let graphs = self.apply_blocks(graphs)?;
        MultiscaleRepresentation::new(graphs, global)
    }
}

/// Loads per-scale graph blocks stored under `block<k>.` prefixes.
pub fn load_blocks<T: Real>(store: &WeightStore) -> Result<Vec<GraphBlockParams<T>>> {
    let mut blocks = Vec::new();
    loop {
        let prefix = format!("block{}.", blocks.len());
        if !store.contains(&format!("{prefix}se1.W1")) {
            break;
        }
        blocks.push(GraphBlockParams::read_from_store(store, &prefix)?);
    }
    if blocks.is_empty() {
        return Err(Error::MissingWeights(
            "no graph blocks found (expected arrays under `block0.`)".into(),
        ));
    }
    Ok(blocks)
}

/// Saves per-scale graph blocks under `block<k>.` prefixes.
pub fn save_blocks<T: Real>(blocks: &[GraphBlockParams<T>]) -> Result<WeightStore> {
    let mut store = WeightStore::new();
    for (k, b) in blocks.iter().enumerate() {
        b.write_to_store(&mut store, &format!("block{k}."))?;
    }
    Ok(store)
}

/// Serializes a representation into a container: `num_scales`, per-scale
/// graphs under `scale<i>.`, and `global` when nonempty.
pub fn representation_to_store<T: Real>(rep: &MultiscaleRepresentation<T>) -> Result<WeightStore> {
    let mut store = WeightStore::new();
    store.insert_values(
        "num_scales",
        vec![1],
        &[T::of(rep.num_scales() as f64)],
    )?;
    for (i, g) in rep.graphs().iter().enumerate() {
        g.write_to_store(&mut store, &format!("scale{i}."))?;
    }
    if !rep.global().is_empty() {
        store.insert_values("global", vec![rep.global().len()], rep.global())?;
    }
    Ok(store)
}

pub fn representation_from_store<T: Real>(
    store: &WeightStore,
) -> Result<MultiscaleRepresentation<T>> {
    let num_scales = store.get_values::<T>("num_scales", &[1])?[0].to_f64_lossy() as usize;
    let mut graphs = Vec::with_capacity(num_scales);
    for i in 0..num_scales {
        graphs.push(FeatureGraph::read_from_store(store, &format!("scale{i}."))?);
    }
    let global = if store.contains("global") {
        let arr = store.get_any("global")?;
        arr.data.iter().map(|&v| T::of(v as f64)).collect()
    } else {
        Vec::new()
    };
    MultiscaleRepresentation::new(graphs, global)
}

pub fn save_representation<T: Real>(
    path: impl AsRef<Path>,
    rep: &MultiscaleRepresentation<T>,
) -> Result<()> {
    representation_to_store(rep)?.save(path)
}

pub fn load_representation<T: Real>(path: impl AsRef<Path>) -> Result<MultiscaleRepresentation<T>> {
    representation_from_store(&WeightStore::load(path)?)
}

/// Synthesizes scaled-uniform random weights for the backbone and the
/// per-scale localizer networks. Lets the CNN pipeline run end to end
/// without trained weights, for smoke tests and format checks.
pub fn synthesize_cnn_weights(seed: u64, node_counts: &[usize]) -> Result<WeightStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    let backbone = iris_backbone_spec(2);
    init_network_weights_into(&mut store, &backbone, "", &mut rng)?;
    let tap_shapes = [(64usize, 32usize, 64usize), (96, 16, 32), (96, 8, 16)];
    for (k, &n) in node_counts.iter().enumerate() {
        let (c, h, w) = tap_shapes[k];
        let spec = sln_spec(c, h, w, n)?.with_prefix(&format!("sln{k}."));
        init_network_weights_into(&mut store, &spec, "", &mut rng)?;
    }
    Ok(store)
}
