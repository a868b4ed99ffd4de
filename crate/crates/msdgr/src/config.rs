//! Experiment configuration (line-based `key = value` with dotted sections)
//! and dataset manifests (CSV of `path,label`).
//!
//! Every key has a validated default; unknown keys are rejected with the
//! offending line number. `MSDGR_SEED` in the environment overrides the
//! configured seed.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::matcher::{AdjSign, MatchMode};
use crate::occlusion::{Fill, OcclusionKind, Region};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineKind {
    Gabor,
    CnnWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalizerMode {
    Grid,
    EnergyPeak,
    Sln,
    External,
}

/// Node counts and receptive radii per scale. `radii: None` derives each
/// radius from the map geometry (`2 * sqrt(H*W/N)`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleConfig {
    pub node_counts: Vec<usize>,
    pub radii: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaborConfig {
    /// Path to a bank config file; the built-in 40-filter bank when absent.
    pub bank: Option<PathBuf>,
    pub patch: usize,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionConfig {
    pub kind: Option<OcclusionKind>,
    pub area_fraction: f64,
    pub fill: Fill,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    /// Epoch interval after which the learning rate halves.
    pub halve_every: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub margin: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.001,
            halve_every: 10,
            momentum: 0.9,
            weight_decay: 0.0001,
            batch_size: 64,
            epochs: 40,
            margin: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegatConfig {
    /// Bottleneck ratio of the excitation layers.
    pub reduction_ratio: usize,
    /// Output node dimension of each graph block.
    pub reduced_dim: usize,
    /// Path to trained graph-block weights applied during extraction.
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub pipeline: PipelineKind,
    /// Backbone (and localizer network) weights for the CNN pipeline.
    pub weights: Option<PathBuf>,
    pub localizer: LocalizerMode,
    /// Coordinate CSV for the external localizer.
    pub localizer_csv: Option<PathBuf>,
    pub scales: ScaleConfig,
    pub match_mode: MatchMode,
    pub adj_sign: AdjSign,
    pub gabor: GaborConfig,
    pub occlusion: OcclusionConfig,
    pub optimizer: OptimizerConfig,
    pub segat: SegatConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            pipeline: PipelineKind::Gabor,
            weights: None,
            localizer: LocalizerMode::EnergyPeak,
            localizer_csv: None,
            scales: ScaleConfig {
                node_counts: vec![64, 32, 16],
                radii: None,
            },
            match_mode: MatchMode::Dynamic,
            adj_sign: AdjSign::Minus,
            gabor: GaborConfig {
                bank: None,
                patch: 9,
                nodes: 32,
            },
            occlusion: OcclusionConfig {
                kind: None,
                area_fraction: 0.3,
                fill: Fill::Noise,
            },
            optimizer: OptimizerConfig::default(),
            segat: SegatConfig {
                reduction_ratio: 4,
                reduced_dim: 32,
                weights: None,
            },
        }
    }
}

fn parse_usize(key: &str, value: &str, line: usize) -> Result<usize> {
    value.parse().map_err(|_| Error::Parse {
        line,
        message: format!("{key}: expected a non-negative integer, got `{value}`"),
    })
}

fn parse_f64(key: &str, value: &str, line: usize) -> Result<f64> {
    value.parse().map_err(|_| Error::Parse {
        line,
        message: format!("{key}: expected a number, got `{value}`"),
    })
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: lineno,
                message: "expected `key = value`".into(),
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("duplicate key `{key}`"),
                });
            }
            cfg.apply(key, value, lineno)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut cfg = Self::parse(&fs::read_to_string(path)?)?;
        if let Ok(seed) = std::env::var("MSDGR_SEED") {
            cfg.seed = seed.parse().map_err(|_| {
                Error::Parameter(format!("MSDGR_SEED must be an integer, got `{seed}`"))
            })?;
        }
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "seed" => self.seed = parse_usize(key, value, line)? as u64,
            "pipeline" => {
                self.pipeline = match value {
                    "gabor" => PipelineKind::Gabor,
                    "cnn-weights" => PipelineKind::CnnWeights,
                    other => {
                        return Err(Error::Parse {
                            line,
                            message: format!("pipeline must be gabor|cnn-weights, got `{other}`"),
                        })
                    }
                }
            }
            "weights" => self.weights = Some(PathBuf::from(value)),
            "localizer.mode" => {
                self.localizer = match value {
                    "grid" => LocalizerMode::Grid,
                    "energy-peak" => LocalizerMode::EnergyPeak,
                    "sln" => LocalizerMode::Sln,
                    "external" => LocalizerMode::External,
                    other => {
                        return Err(Error::Parse {
                            line,
                            message: format!(
                                "localizer.mode must be grid|energy-peak|sln|external, got `{other}`"
                            ),
                        })
                    }
                }
            }
            "localizer.csv" => self.localizer_csv = Some(PathBuf::from(value)),
            "scales.node_counts" => {
                let counts: Result<Vec<usize>> = value
                    .split(',')
                    .map(|t| parse_usize(key, t.trim(), line))
                    .collect();
                self.scales.node_counts = counts?;
            }
            "scales.radii" => {
                if value == "auto" {
                    self.scales.radii = None;
                } else {
                    let radii: Result<Vec<f64>> = value
                        .split(',')
                        .map(|t| parse_f64(key, t.trim(), line))
                        .collect();
                    self.scales.radii = Some(radii?);
                }
            }
            "matching.mode" => {
                self.match_mode = match value {
                    "static" => MatchMode::Static,
                    "dynamic" => MatchMode::Dynamic,
                    other => {
                        return Err(Error::Parse {
                            line,
                            message: format!("matching.mode must be static|dynamic, got `{other}`"),
                        })
                    }
                }
            }
            "matching.adj_sign" => {
                let v: i32 = value.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("matching.adj_sign must be 1 or -1, got `{value}`"),
                })?;
                self.adj_sign = AdjSign::from_i32(v).map_err(|e| Error::Parse {
                    line,
                    message: e.to_string(),
                })?;
            }
            "gabor.bank" => {
                self.gabor.bank = if value == "default" {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            "gabor.patch" => self.gabor.patch = parse_usize(key, value, line)?,
            "gabor.nodes" => self.gabor.nodes = parse_usize(key, value, line)?,
            "occlusion.kind" => {
                self.occlusion.kind = match value {
                    "none" => None,
                    "random-rectangle" => Some(OcclusionKind::RandomRectangle),
                    "random-shape" => Some(OcclusionKind::RandomShape),
                    other => match other.strip_prefix("rectangle-region:") {
                        Some(region) => Some(OcclusionKind::RectangleRegion(
                            Region::parse(region.trim()).map_err(|e| Error::Parse {
                                line,
                                message: e.to_string(),
                            })?,
                        )),
                        None => {
                            return Err(Error::Parse {
                                line,
                                message: format!(
                                    "occlusion.kind must be none|random-rectangle|random-shape|rectangle-region:<side>, got `{other}`"
                                ),
                            })
                        }
                    },
                }
            }
            "occlusion.area" => self.occlusion.area_fraction = parse_f64(key, value, line)?,
            "occlusion.fill" => {
                self.occlusion.fill = if value == "noise" {
                    Fill::Noise
                } else {
                    match value.strip_prefix("constant:") {
                        Some(v) => Fill::Constant(parse_f64(key, v.trim(), line)?),
                        None => {
                            return Err(Error::Parse {
                                line,
                                message: format!(
                                    "occlusion.fill must be noise|constant:<v>, got `{value}`"
                                ),
                            })
                        }
                    }
                }
            }
            "optimizer.learning_rate" => {
                self.optimizer.learning_rate = parse_f64(key, value, line)?
            }
            "optimizer.lr_halve_every" => {
                self.optimizer.halve_every = parse_usize(key, value, line)?
            }
            "optimizer.momentum" => self.optimizer.momentum = parse_f64(key, value, line)?,
            "optimizer.weight_decay" => self.optimizer.weight_decay = parse_f64(key, value, line)?,
            "optimizer.batch_size" => self.optimizer.batch_size = parse_usize(key, value, line)?,
            "optimizer.epochs" => self.optimizer.epochs = parse_usize(key, value, line)?,
            "optimizer.margin" => self.optimizer.margin = parse_f64(key, value, line)?,
            "segat.reduction_ratio" => {
                self.segat.reduction_ratio = parse_usize(key, value, line)?
            }
            "segat.reduced_dim" => self.segat.reduced_dim = parse_usize(key, value, line)?,
            "segat.weights" => self.segat.weights = Some(PathBuf::from(value)),
            unknown => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown key `{unknown}`"),
                })
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.scales.node_counts.is_empty() || self.scales.node_counts.len() > 3 {
            return Err(Error::Parameter(
                "scales.node_counts must list one to three scales".into(),
            ));
        }
        if self.scales.node_counts.iter().any(|&n| n == 0) {
            return Err(Error::Parameter("node counts must be positive".into()));
        }
        if let Some(radii) = &self.scales.radii {
            if radii.len() != self.scales.node_counts.len() {
                return Err(Error::Parameter(format!(
                    "{} radii for {} scales",
                    radii.len(),
                    self.scales.node_counts.len()
                )));
            }
            if radii.iter().any(|&r| r <= 0.0) {
                return Err(Error::Parameter("radii must be positive".into()));
            }
        }
        if self.gabor.patch % 2 == 0 || self.gabor.patch == 0 {
            return Err(Error::Parameter(format!(
                "gabor.patch must be odd and positive, got {}",
                self.gabor.patch
            )));
        }
        if self.gabor.nodes == 0 {
            return Err(Error::Parameter("gabor.nodes must be positive".into()));
        }
        if !(self.occlusion.area_fraction > 0.0 && self.occlusion.area_fraction < 1.0) {
            return Err(Error::Parameter(format!(
                "occlusion.area must lie in (0, 1), got {}",
                self.occlusion.area_fraction
            )));
        }
        let o = &self.optimizer;
        if o.learning_rate <= 0.0 || o.margin <= 0.0 {
            return Err(Error::Parameter(
                "learning rate and margin must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(Error::Parameter(format!(
                "momentum must lie in [0, 1), got {}",
                o.momentum
            )));
        }
        if o.weight_decay < 0.0 {
            return Err(Error::Parameter("weight decay cannot be negative".into()));
        }
        if o.batch_size == 0 || o.halve_every == 0 {
            return Err(Error::Parameter(
                "batch size and lr halving interval must be positive".into(),
            ));
        }
        if self.segat.reduction_ratio == 0 || self.segat.reduced_dim == 0 {
            return Err(Error::Parameter(
                "graph-block dimensions must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Dataset manifest: image paths with identity labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(PathBuf, String)>,
}

impl Manifest {
    /// Parses CSV lines `path,label`, skipping `#` comments and an optional
    /// `path,label` header. Labels must be nonempty; paths must exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let text = fs::read_to_string(path)?;
        let mut entries = Vec::new();
        let mut seen_data = false;
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !seen_data && (line == "path,label" || line == "file,label") {
                continue;
            }
            seen_data = true;
            let (file, label) = line.rsplit_once(',').ok_or(Error::Parse {
                line: lineno,
                message: "expected `path,label`".into(),
            })?;
            let label = label.trim();
            if label.is_empty() {
                return Err(Error::Parse {
                    line: lineno,
                    message: "empty label".into(),
                });
            }
            let file = file.trim();
            let resolved = if Path::new(file).is_absolute() {
                PathBuf::from(file)
            } else {
                base.join(file)
            };
            if !resolved.exists() {
                return Err(Error::Data(format!(
                    "manifest line {lineno}: `{}` does not exist",
                    resolved.display()
                )));
            }
            entries.push((resolved, label.to_string()));
        }
        if entries.is_empty() {
            return Err(Error::Data("manifest lists no samples".into()));
        }
        Ok(Manifest { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct labels in first-appearance order.
    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (_, l) in &self.entries {
            if !out.contains(l) {
                out.push(l.clone());
            }
        }
        out
    }
}
