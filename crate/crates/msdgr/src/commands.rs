//! The operation layer behind the CLI subcommands. Every command is
//! deterministic given its config and seed; the seed is recorded in a `#`
//! comment line at the top of each CSV output. Commands run the pipelines in
//! `f32`, matching the 32-bit container format, so a round trip through
//! files reproduces in-memory results bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Manifest};
use crate::error::{Error, Result};
use crate::eval::{det_curve, eer, frr_at_far, rank_n, ScoreSet};
use crate::gradcheck::{self, GradcheckReport};
use crate::matcher::{dynamic_match, match_score, AdjSign, MatchMode, MultiscaleRepresentation};
use crate::occlusion::{occlude, OcclusionSpec};
use crate::pgm::{read_gray, write_mask_pgm, write_pgm, GrayImage};
use crate::pipeline::{load_representation, save_blocks, save_representation, Extractor};
use crate::train::{train_blocks, TrainReport, TrainSample};

/// Pipeline scalar used by all commands.
type S = f32;

pub struct ExtractOutput {
    pub index: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Extracts every manifest image into a per-sample representation container
/// plus an `index.csv` listing `file,label`.
pub fn cmd_extract(
    config: &ExperimentConfig,
    manifest: &Manifest,
    out_dir: &Path,
) -> Result<ExtractOutput> {
    fs::create_dir_all(out_dir)?;
    let extractor = Extractor::<S>::new(config)?;
    let reps: Vec<(usize, MultiscaleRepresentation<S>)> = manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(idx, (path, _))| {
            let image = read_gray(path)?.to_array::<S>();
            Ok((idx, extractor.extract_image(&image)?))
        })
        .collect::<Result<_>>()?;
    let mut files = Vec::with_capacity(reps.len());
    let mut index = format!("# seed={}\nfile,label\n", config.seed);
    for (idx, rep) in &reps {
        let name = format!("rep_{idx:05}.msdg");
        save_representation(out_dir.join(&name), rep)?;
        let label = &manifest.entries[*idx].1;
        writeln!(index, "{name},{label}").expect("string write");
        files.push(out_dir.join(name));
    }
    let index_path = out_dir.join("index.csv");
    fs::write(&index_path, index)?;
    Ok(ExtractOutput {
        index: index_path,
        files,
    })
}

pub struct OccludeOutput {
    pub index: PathBuf,
    pub images: Vec<PathBuf>,
    pub masks: Vec<PathBuf>,
    pub realized_fractions: Vec<f64>,
}

/// Applies the configured occlusion to every manifest image, writing
/// occluded PGMs, 0/255 mask PGMs, and an `index.csv`. Sample `k` uses seed
/// `config.seed + k`, so the noise differs per sample but the whole dataset
/// is reproducible.
pub fn cmd_occlude(
    config: &ExperimentConfig,
    manifest: &Manifest,
    out_dir: &Path,
) -> Result<OccludeOutput> {
    let kind = config.occlusion.kind.ok_or_else(|| {
        Error::Parameter("occlusion.kind = none; nothing to generate".into())
    })?;
    fs::create_dir_all(out_dir)?;
    let mut index = format!("# seed={}\nfile,label\n", config.seed);
    let mut images = Vec::new();
    let mut masks = Vec::new();
    let mut realized = Vec::new();
    for (idx, (path, label)) in manifest.entries.iter().enumerate() {
        let image = read_gray(path)?.to_array::<f64>();
        let spec = OcclusionSpec {
            kind,
            area_fraction: config.occlusion.area_fraction,
            fill: config.occlusion.fill,
            seed: config.seed.wrapping_add(idx as u64),
        };
        let record = occlude(&image, &spec)?;
        let img_name = format!("occ_{idx:05}.pgm");
        let mask_name = format!("mask_{idx:05}.pgm");
        write_pgm(out_dir.join(&img_name), &GrayImage::from_array(&record.image))?;
        write_mask_pgm(out_dir.join(&mask_name), &record.mask)?;
        writeln!(index, "{img_name},{label}").expect("string write");
        images.push(out_dir.join(img_name));
        masks.push(out_dir.join(mask_name));
        realized.push(record.realized_fraction);
    }
    let index_path = out_dir.join("index.csv");
    fs::write(&index_path, index)?;
    Ok(OccludeOutput {
        index: index_path,
        images,
        masks,
        realized_fractions: realized,
    })
}

/// Reads an extraction `index.csv`: the recorded seed and the labeled
/// representation files (relative names resolved against the index's
/// directory).
pub fn read_index(path: &Path) -> Result<(u64, Vec<(PathBuf, String)>)> {
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let text = fs::read_to_string(path)?;
    let mut seed = 0u64;
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('#') {
            for token in rest.split_whitespace() {
                if let Some(v) = token.strip_prefix("seed=") {
                    seed = v.parse().map_err(|_| Error::Parse {
                        line: idx + 1,
                        message: format!("bad seed `{v}`"),
                    })?;
                }
            }
            continue;
        }
        if line.is_empty() || line == "file,label" {
            continue;
        }
        let (file, label) = line.rsplit_once(',').ok_or(Error::Parse {
            line: idx + 1,
            message: "expected `file,label`".into(),
        })?;
        entries.push((base.join(file.trim()), label.trim().to_string()));
    }
    if entries.is_empty() {
        return Err(Error::Data(format!("{}: empty index", path.display())));
    }
    Ok((seed, entries))
}

fn load_set(index: &Path) -> Result<(u64, Vec<(String, MultiscaleRepresentation<S>)>)> {
    let (seed, entries) = read_index(index)?;
    let reps = entries
        .par_iter()
        .map(|(path, label)| Ok((label.clone(), load_representation::<S>(path)?)))
        .collect::<Result<_>>()?;
    Ok((seed, reps))
}

/// Scoring modes a match run can emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreColumns {
    Static,
    Dynamic,
    Both,
}

impl ScoreColumns {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(ScoreColumns::Static),
            "dynamic" => Ok(ScoreColumns::Dynamic),
            "both" => Ok(ScoreColumns::Both),
            other => Err(Error::Parameter(format!(
                "mode must be static|dynamic|both, got `{other}`"
            ))),
        }
    }
}

pub struct MatchSummary {
    pub pairs: usize,
    pub score_csv: PathBuf,
}

/// All-pairs scores between two extracted sets, written as CSV. With
/// `ScoreColumns::Both` the file carries `score_static` and `score_dynamic`
/// columns; otherwise a single `score` column. The header comment records
/// the pair-matrix shape so identification metrics can be recovered
/// downstream.
pub fn cmd_match(
    index_a: &Path,
    index_b: &Path,
    columns: ScoreColumns,
    adj_sign: AdjSign,
    out_csv: &Path,
    dump_csv: Option<&Path>,
) -> Result<MatchSummary> {
    let (seed, set_a) = load_set(index_a)?;
    let (_, set_b) = load_set(index_b)?;
    let pair_list: Vec<(usize, usize)> = (0..set_a.len())
        .flat_map(|a| (0..set_b.len()).map(move |b| (a, b)))
        .collect();
    struct Row {
        a: usize,
        b: usize,
        static_score: Option<S>,
        dynamic_score: Option<S>,
        dump: Option<String>,
    }
    let rows: Vec<Row> = pair_list
        .par_iter()
        .map(|&(a, b)| {
            let ra = &set_a[a].1;
            let rb = &set_b[b].1;
            let static_score = match columns {
                ScoreColumns::Dynamic => None,
                _ => Some(match_score(ra, rb, MatchMode::Static, adj_sign)?),
            };
            let (dynamic_score, dump) = match columns {
                ScoreColumns::Static => (None, None),
                _ => {
                    let m = dynamic_match(ra, rb, adj_sign)?;
                    let dump = dump_csv.map(|_| {
                        let mut s = String::new();
                        for (scale_idx, scores) in m.pair_scores.iter().enumerate() {
                            let kept: std::collections::HashSet<usize> =
                                m.retained[scale_idx].iter().copied().collect();
                            for (i, sc) in scores.iter().enumerate() {
                                let _ = writeln!(
                                    s,
                                    "{a},{b},{scale_idx},{i},{sc},{}",
                                    u8::from(kept.contains(&i))
                                );
                            }
                        }
                        s
                    });
                    (Some(m.similarity), dump)
                }
            };
            Ok(Row {
                a,
                b,
                static_score,
                dynamic_score,
                dump,
            })
        })
        .collect::<Result<_>>()?;

    let adj = match adj_sign {
        AdjSign::Plus => 1,
        AdjSign::Minus => -1,
    };
    let mut csv = format!(
        "# seed={seed} probes={} gallery={} adj_sign={adj}\n",
        set_a.len(),
        set_b.len()
    );
    csv.push_str(match columns {
        ScoreColumns::Static | ScoreColumns::Dynamic => "label_a,label_b,score,genuine_flag\n",
        ScoreColumns::Both => "label_a,label_b,score_static,score_dynamic,genuine_flag\n",
    });
    for row in &rows {
        let la = &set_a[row.a].0;
        let lb = &set_b[row.b].0;
        let genuine = u8::from(la == lb);
        match columns {
            ScoreColumns::Static => {
                writeln!(csv, "{la},{lb},{},{genuine}", row.static_score.unwrap())
            }
            ScoreColumns::Dynamic => {
                writeln!(csv, "{la},{lb},{},{genuine}", row.dynamic_score.unwrap())
            }
            ScoreColumns::Both => writeln!(
                csv,
                "{la},{lb},{},{},{genuine}",
                row.static_score.unwrap(),
                row.dynamic_score.unwrap()
            ),
        }
        .expect("string write");
    }
    if let Some(parent) = out_csv.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(out_csv, &csv)?;
    if let Some(dump_path) = dump_csv {
        let mut dump = format!("# seed={seed}\na_index,b_index,scale,node,cosine,retained\n");
        for row in &rows {
            if let Some(d) = &row.dump {
                dump.push_str(d);
            }
        }
        fs::write(dump_path, dump)?;
    }
    Ok(MatchSummary {
        pairs: rows.len(),
        score_csv: out_csv.to_path_buf(),
    })
}

/// Parsed score file: named score columns over labeled pairs.
struct ScoreFile {
    probes: Option<usize>,
    gallery: Option<usize>,
    labels: Vec<(String, String)>,
    columns: Vec<(String, Vec<f64>)>,
}

fn parse_score_csv(path: &Path) -> Result<ScoreFile> {
    let text = fs::read_to_string(path)?;
    let mut probes = None;
    let mut gallery = None;
    let mut header: Option<Vec<String>> = None;
    let mut labels = Vec::new();
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    let mut genuine_col: usize = 0;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('#') {
            for token in rest.split_whitespace() {
                if let Some(v) = token.strip_prefix("probes=") {
                    probes = v.parse().ok();
                }
                if let Some(v) = token.strip_prefix("gallery=") {
                    gallery = v.parse().ok();
                }
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match &header {
            None => {
                if fields.len() < 4
                    || fields[0] != "label_a"
                    || fields[1] != "label_b"
                    || fields[fields.len() - 1] != "genuine_flag"
                {
                    return Err(Error::Parse {
                        line: lineno,
                        message:
                            "expected header `label_a,label_b,<score columns>,genuine_flag`"
                                .into(),
                    });
                }
                genuine_col = fields.len() - 1;
                for name in &fields[2..genuine_col] {
                    columns.push((name.to_string(), Vec::new()));
                }
                header = Some(fields.iter().map(|s| s.to_string()).collect());
            }
            Some(h) => {
                if fields.len() != h.len() {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("expected {} fields, got {}", h.len(), fields.len()),
                    });
                }
                let genuine = match fields[genuine_col] {
                    "0" => false,
                    "1" => true,
                    other => {
                        return Err(Error::Parse {
                            line: lineno,
                            message: format!("genuine_flag must be 0 or 1, got `{other}`"),
                        })
                    }
                };
                let _ = genuine;
                labels.push((fields[0].to_string(), fields[1].to_string()));
                for (k, (_, values)) in columns.iter_mut().enumerate() {
                    let v: f64 = fields[2 + k].parse().map_err(|_| Error::Parse {
                        line: lineno,
                        message: format!("bad score `{}`", fields[2 + k]),
                    })?;
                    values.push(v);
                }
            }
        }
    }
    if header.is_none() || labels.is_empty() {
        return Err(Error::Data(format!(
            "{}: no score rows found",
            path.display()
        )));
    }
    Ok(ScoreFile {
        probes,
        gallery,
        labels,
        columns,
    })
}

#[derive(Debug)]
pub struct ColumnReport {
    pub name: String,
    pub genuine: usize,
    pub imposter: usize,
    pub eer: f64,
    pub eer_threshold: f64,
    /// `(far target, frr, resolution warning)` per requested target.
    pub frr_at_far: Vec<(f64, f64, bool)>,
    /// `(n, accuracy)` when the pair matrix could be reconstructed.
    pub rank_accuracy: Option<Vec<(usize, f64)>>,
}

#[derive(Debug)]
pub struct EvalReport {
    pub seed_comment: String,
    pub columns: Vec<ColumnReport>,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.columns {
            let _ = writeln!(
                out,
                "[{}] genuine={} imposter={}",
                c.name, c.genuine, c.imposter
            );
            let _ = writeln!(
                out,
                "  eer={:.6} ({:.4}%) at threshold {:.6}",
                c.eer,
                c.eer * 100.0,
                c.eer_threshold
            );
            for (target, frr, warn) in &c.frr_at_far {
                let _ = writeln!(
                    out,
                    "  frr@far<={:.6}: {:.6}{}",
                    target,
                    frr,
                    if *warn { "  (low imposter resolution)" } else { "" }
                );
            }
            if let Some(ranks) = &c.rank_accuracy {
                for (n, acc) in ranks {
                    let _ = writeln!(out, "  rank-{n}: {:.4}", acc);
                }
            }
        }
        out
    }
}

/// Verification metrics (and identification metrics when the file carries a
/// complete pair matrix) for every score column of a score CSV. DET curves
/// are written as `threshold,far,frr` CSVs next to the requested stem, one
/// per column.
pub fn cmd_evaluate(
    scores_csv: &Path,
    far_targets: &[f64],
    det_out: Option<&Path>,
) -> Result<EvalReport> {
    let file = parse_score_csv(scores_csv)?;
    let genuine_flags: Vec<bool> = file.labels.iter().map(|(a, b)| a == b).collect();
    let mut reports = Vec::new();
    for (name, values) in &file.columns {
        let genuine: Vec<f64> = values
            .iter()
            .zip(&genuine_flags)
            .filter(|(_, &g)| g)
            .map(|(&v, _)| v)
            .collect();
        let imposter: Vec<f64> = values
            .iter()
            .zip(&genuine_flags)
            .filter(|(_, &g)| !g)
            .map(|(&v, _)| v)
            .collect();
        let set = ScoreSet::new(genuine, imposter)?;
        let e = eer(&set)?;
        let mut targets = Vec::new();
        for &t in far_targets {
            let r = frr_at_far(&set, t)?;
            targets.push((t, r.frr, r.resolution_warning));
        }
        let rank_accuracy = match (file.probes, file.gallery) {
            (Some(p), Some(g)) if p * g == file.labels.len() => {
                let probe_labels: Vec<String> =
                    (0..p).map(|i| file.labels[i * g].0.clone()).collect();
                let gallery_labels: Vec<String> =
                    (0..g).map(|j| file.labels[j].1.clone()).collect();
                let matrix = Array2::from_shape_vec((p, g), values.clone())
                    .expect("shape follows from the check above");
                let ns = [1usize, 5, 10];
                match rank_n(&matrix, &probe_labels, &gallery_labels, &ns) {
                    Ok(acc) => Some(ns.iter().copied().zip(acc).collect()),
                    // Verification-only files need not cover every probe.
                    Err(Error::Protocol(_)) => None,
                    Err(e) => return Err(e),
                }
            }
            _ => None,
        };
        if let Some(det_path) = det_out {
            let mut csv = String::from("threshold,far,frr\n");
            for p in det_curve(&set)? {
                let _ = writeln!(csv, "{},{},{}", p.threshold, p.far, p.frr);
            }
            let path = if file.columns.len() == 1 {
                det_path.to_path_buf()
            } else {
                let stem = det_path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("det");
                det_path.with_file_name(format!("{stem}_{name}.csv"))
            };
            fs::write(path, csv)?;
        }
        reports.push(ColumnReport {
            name: name.clone(),
            genuine: set.genuine.len(),
            imposter: set.imposter.len(),
            eer: e.eer,
            eer_threshold: e.threshold,
            frr_at_far: targets,
            rank_accuracy,
        });
    }
    Ok(EvalReport {
        seed_comment: String::new(),
        columns: reports,
    })
}

/// Trains graph blocks on the manifest with the configured optimizer and
/// writes them to a weight container. Extraction runs without any
/// pre-existing graph blocks; training always starts from fresh
/// initialization.
pub fn cmd_train_graph(
    config: &ExperimentConfig,
    manifest: &Manifest,
    weights_out: &Path,
    loss_log: Option<&Path>,
) -> Result<TrainReport> {
    let mut raw_config = config.clone();
    raw_config.segat.weights = None;
    let extractor = Extractor::<S>::new(&raw_config)?;
    let class_names = manifest.labels();
    let samples: Vec<TrainSample<S>> = manifest
        .entries
        .par_iter()
        .map(|(path, label)| {
            let image = read_gray(path)?.to_array::<S>();
            let rep = extractor.extract_image(&image)?;
            let class = class_names.iter().position(|l| l == label).unwrap();
            Ok(TrainSample { class, rep })
        })
        .collect::<Result<_>>()?;
    let (blocks, report) = train_blocks(
        &samples,
        config.segat.reduction_ratio,
        config.segat.reduced_dim,
        &config.optimizer,
        config.adj_sign,
        config.seed,
    )?;
    save_blocks(&blocks)?.save(weights_out)?;
    if let Some(log_path) = loss_log {
        let mut csv = format!("# seed={}\nepoch,learning_rate,mean_batch_loss\n", config.seed);
        for e in &report.epochs {
            let _ = writeln!(csv, "{},{},{}", e.epoch, e.learning_rate, e.mean_batch_loss);
        }
        fs::write(log_path, csv)?;
    }
    Ok(report)
}

/// Runs every finite-difference gradient check.
pub fn cmd_gradcheck(seed: u64, instances: usize) -> GradcheckReport {
    gradcheck::run(seed, instances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occlusion::{OcclusionKind, Region};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn write_texture_pgm(path: &Path, seed: u64, h: usize, w: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels: Vec<u8> = (0..h * w).map(|_| rng.gen()).collect();
        write_pgm(path, &GrayImage::new(h, w, pixels).unwrap()).unwrap();
    }

    fn small_setup(dir: &Path, classes: usize, per_class: usize) -> (PathBuf, PathBuf) {
        let mut manifest = String::from("path,label\n");
        for c in 0..classes {
            for s in 0..per_class {
                let name = format!("img_{c}_{s}.pgm");
                write_texture_pgm(&dir.join(&name), (c * 100) as u64, 24, 24);
                manifest.push_str(&format!("{name},class{c}\n"));
            }
        }
        let manifest_path = dir.join("manifest.csv");
        fs::write(&manifest_path, manifest).unwrap();
        let bank_path = dir.join("bank.txt");
        let mut bank = String::new();
        for o in 0..4 {
            let theta = o as f64 * std::f64::consts::PI / 4.0;
            bank.push_str(&format!("{theta} 4.0 2.24 1.0 0.0\n"));
        }
        fs::write(&bank_path, bank).unwrap();
        let config_path = dir.join("exp.cfg");
        fs::write(
            &config_path,
            format!(
                "seed = 11\npipeline = gabor\ngabor.bank = {}\ngabor.patch = 3\ngabor.nodes = 4\n",
                bank_path.display()
            ),
        )
        .unwrap();
        (config_path, manifest_path)
    }

    #[test]
    fn extract_is_byte_identical_across_runs() {
        let dir = tempfile::tempdir().unwrap();
        let (config_path, manifest_path) = small_setup(dir.path(), 2, 2);
        let config = ExperimentConfig::load(&config_path).unwrap();
        let manifest = Manifest::load(&manifest_path).unwrap();
        let out1 = dir.path().join("out1");
        let out2 = dir.path().join("out2");
        cmd_extract(&config, &manifest, &out1).unwrap();
        cmd_extract(&config, &manifest, &out2).unwrap();
        for name in ["index.csv", "rep_00000.msdg", "rep_00003.msdg"] {
            assert_eq!(
                fs::read(out1.join(name)).unwrap(),
                fs::read(out2.join(name)).unwrap(),
                "{name} differs between runs"
            );
        }
    }

    #[test]
    fn match_of_a_set_with_itself_has_unit_diagonal() {
        let dir = tempfile::tempdir().unwrap();
        let (config_path, manifest_path) = small_setup(dir.path(), 2, 2);
        let config = ExperimentConfig::load(&config_path).unwrap();
        let manifest = Manifest::load(&manifest_path).unwrap();
        let out = dir.path().join("reps");
        let extracted = cmd_extract(&config, &manifest, &out).unwrap();
        let scores = dir.path().join("scores.csv");
        let summary = cmd_match(
            &extracted.index,
            &extracted.index,
            ScoreColumns::Both,
            AdjSign::Minus,
            &scores,
            None,
        )
        .unwrap();
        assert_eq!(summary.pairs, 16);
        let parsed = parse_score_csv(&scores).unwrap();
        assert_eq!(parsed.columns.len(), 2);
        assert_eq!(parsed.probes, Some(4));
        for i in 0..4 {
            let diag = i * 4 + i;
            for (_, values) in &parsed.columns {
                assert_eq!(values[diag], 1.0, "diagonal pair {i}");
            }
        }
    }

    #[test]
    fn evaluate_reports_metrics_and_ranks() {
        let dir = tempfile::tempdir().unwrap();
        let scores = dir.path().join("scores.csv");
        // Two probes, two gallery entries, separable scores.
        fs::write(
            &scores,
            "# seed=5 probes=2 gallery=2\n\
             label_a,label_b,score,genuine_flag\n\
             a,a,0.9,1\n\
             a,b,0.1,0\n\
             b,a,0.2,0\n\
             b,b,0.8,1\n",
        )
        .unwrap();
        let det = dir.path().join("det.csv");
        let report = cmd_evaluate(&scores, &[0.5], Some(&det)).unwrap();
        assert_eq!(report.columns.len(), 1);
        let c = &report.columns[0];
        assert_eq!(c.eer, 0.0);
        assert_eq!(c.frr_at_far[0].1, 0.0);
        assert_eq!(c.rank_accuracy.as_ref().unwrap()[0], (1, 1.0));
        let det_text = fs::read_to_string(&det).unwrap();
        assert!(det_text.starts_with("threshold,far,frr\n"));
        assert!(report.to_text().contains("eer"));
    }

    #[test]
    fn evaluate_rejects_malformed_rows_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let scores = dir.path().join("bad.csv");
        fs::write(
            &scores,
            "label_a,label_b,score,genuine_flag\na,a,not_a_number,1\n",
        )
        .unwrap();
        match cmd_evaluate(&scores, &[], None).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn occlude_writes_masks_and_hits_fraction() {
        let dir = tempfile::tempdir().unwrap();
        let (_, manifest_path) = small_setup(dir.path(), 1, 2);
        let manifest = Manifest::load(&manifest_path).unwrap();
        let mut config = ExperimentConfig::default();
        config.seed = 3;
        config.occlusion.kind = Some(OcclusionKind::RectangleRegion(Region::Upper));
        config.occlusion.area_fraction = 0.25;
        let out = dir.path().join("occ");
        let result = cmd_occlude(&config, &manifest, &out).unwrap();
        assert_eq!(result.images.len(), 2);
        for f in &result.realized_fractions {
            assert!((f - 0.25).abs() <= 0.02);
        }
        let mask = read_gray(&result.masks[0]).unwrap();
        assert!(mask.pixels.iter().all(|&p| p == 0 || p == 255));
    }

    #[test]
    fn train_command_learns_and_persists_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let (config_path, manifest_path) = small_setup(dir.path(), 3, 3);
        let mut config = ExperimentConfig::load(&config_path).unwrap();
        config.optimizer.epochs = 6;
        config.optimizer.batch_size = 4;
        config.segat.reduction_ratio = 4;
        config.segat.reduced_dim = 8;
        let manifest = Manifest::load(&manifest_path).unwrap();
        let weights_out = dir.path().join("blocks.msdg");
        let log = dir.path().join("loss.csv");
        let report = cmd_train_graph(&config, &manifest, &weights_out, Some(&log)).unwrap();
        assert_eq!(report.epochs.len(), 6);
        assert!(weights_out.exists());
        let log_text = fs::read_to_string(&log).unwrap();
        assert!(log_text.starts_with("# seed=11\nepoch,learning_rate,mean_batch_loss\n"));

        // The persisted blocks load back and apply during extraction.
        let mut apply_config = config.clone();
        apply_config.segat.weights = Some(weights_out.clone());
        let extractor = Extractor::<S>::new(&apply_config).unwrap();
        let image = read_gray(&manifest.entries[0].0).unwrap().to_array::<S>();
        let rep = extractor.extract_image(&image).unwrap();
        assert_eq!(rep.graphs()[0].node_dim(), 8);
    }

    #[test]
    fn gradcheck_command_reports_all_layers() {
        let report = cmd_gradcheck(123, 3);
        assert!(report.all_pass(), "{}", report.to_text());
        assert_eq!(report.checks.len(), 4);
    }
}
