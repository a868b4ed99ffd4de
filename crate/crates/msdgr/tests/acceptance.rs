//! Acceptance suite: one test per release criterion, each printing a
//! PASS line when it holds. Run with
//! `cargo test -p msdgr --test acceptance -- --nocapture`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use msdgr::commands::{self, ScoreColumns};
use msdgr::config::{ExperimentConfig, Manifest};
use msdgr::container::{NamedArray, WeightStore};
use msdgr::eval::{self, ScoreSet};
use msdgr::graph::{build_adjacency, FeatureGraph, NodeCoords, ScaleId};
use msdgr::matcher::{dynamic_match, AdjSign, MultiscaleRepresentation};
use msdgr::pgm::{write_pgm, GrayImage};
use msdgr::segat::{gat_forward_nodes, graph_block_forward_nodes, GatParams, GraphBlockParams};

fn random_nodes(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, c), |_| rng.gen::<f64>() * 2.0 - 1.0)
}

fn random_adjacency(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let span = (n as f64).sqrt() * 2.0 + 2.0;
    let coords: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.gen::<f64>() * span, rng.gen::<f64>() * span))
        .collect();
    let coords = NodeCoords::new(coords, span.ceil() as usize + 1, span.ceil() as usize + 1).unwrap();
    build_adjacency(&coords, span / 2.0).unwrap()
}

// -------------------------------------------------------------------------
// 1. Gradient verification
// -------------------------------------------------------------------------

#[test]
fn criterion_1_gradient_verification() {
    let start = Instant::now();
    let report = commands::cmd_gradcheck(0x5EED, 100);
    let elapsed = start.elapsed();
    assert!(report.all_pass(), "{}", report.to_text());
    assert!(
        elapsed.as_secs() < 60,
        "gradient checks took {elapsed:?}, budget is one minute"
    );
    println!(
        "ACCEPTANCE 1 gradient-verification: PASS ({} checks x 100 instances in {elapsed:?})",
        report.checks.len()
    );
}

// -------------------------------------------------------------------------
// 2. Layer invariants
// -------------------------------------------------------------------------

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for slot in 0..n {
            let mut q: Vec<usize> = p.iter().map(|&v| if v >= slot { v + 1 } else { v }).collect();
            q.insert(0, slot);
            out.push(q);
        }
    }
    out
}

fn assert_equivariant(
    nodes: &Array2<f64>,
    adjacency: &Array2<f64>,
    params: &GraphBlockParams<f64>,
    perm: &[usize],
) {
    let n = nodes.nrows();
    let permuted_nodes = Array2::from_shape_fn((n, nodes.ncols()), |(i, c)| nodes[[perm[i], c]]);
    let permuted_adj = Array2::from_shape_fn((n, n), |(i, j)| adjacency[[perm[i], perm[j]]]);
    let (out, _) = graph_block_forward_nodes(nodes, adjacency, params).unwrap();
    let (out_p, _) = graph_block_forward_nodes(&permuted_nodes, &permuted_adj, params).unwrap();
    for i in 0..n {
        for c in 0..out.ncols() {
            let a = out_p[[i, c]];
            let b = out[[perm[i], c]];
            assert!(
                (a - b).abs() <= 1e-9 * (1.0 + b.abs()),
                "equivariance broken at node {i} channel {c}: {a} vs {b}"
            );
        }
    }
}

#[test]
fn criterion_2_layer_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);

    // Attention rows sum to one and mass stays inside the neighborhood.
    for &n in &[3usize, 6, 16, 32, 64] {
        let c = 8;
        let nodes = random_nodes(&mut rng, n, c);
        let adjacency = random_adjacency(&mut rng, n);
        let params = GatParams::<f64>::init(c, &mut rng);
        let (_, cache) = gat_forward_nodes(&nodes, &adjacency, &params).unwrap();
        for (a, (alphas, nbrs)) in cache
            .attention_weights()
            .iter()
            .zip(cache.neighborhoods())
            .enumerate()
        {
            let sum: f64 = alphas.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-6, "row {a} sums to {sum}");
            assert!(alphas.iter().all(|&v| v >= 0.0));
            let inside = (0..n)
                .filter(|&b| b == a || adjacency[[a, b]] > 0.0)
                .count();
            assert_eq!(nbrs.len(), inside);
        }
    }

    // Adjacency: symmetric, unit diagonal, exactly zero at and beyond the
    // radius.
    for trial in 0..50 {
        let n = 2 + (trial % 12);
        let coords: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.gen::<f64>() * 9.0, rng.gen::<f64>() * 9.0))
            .collect();
        let coords = NodeCoords::new(coords, 10, 10).unwrap();
        let r = 0.5 + rng.gen::<f64>() * 6.0;
        let adj = build_adjacency(&coords, r).unwrap();
        for a in 0..n {
            assert_eq!(adj[[a, a]], 1.0);
            for b in 0..n {
                assert_eq!(adj[[a, b]], adj[[b, a]]);
                let (ia, ja) = coords.get(a);
                let (ib, jb) = coords.get(b);
                let d = ((ia - ib).powi(2) + (ja - jb).powi(2)).sqrt();
                if a != b && d >= r {
                    assert_eq!(adj[[a, b]], 0.0, "nonzero entry beyond the radius");
                }
            }
        }
    }

    // Permutation equivariance: exhaustive for N <= 6.
    for n in 2..=6usize {
        let c = 8;
        let nodes = random_nodes(&mut rng, n, c);
        let adjacency = random_adjacency(&mut rng, n);
        let params = GraphBlockParams::<f64>::init(c, 3, 4, &mut rng).unwrap();
        for perm in permutations(n) {
            assert_equivariant(&nodes, &adjacency, &params, &perm);
        }
    }
    // Randomized for the production node counts.
    for &n in &[16usize, 32, 64] {
        let c = 8;
        let nodes = random_nodes(&mut rng, n, c);
        let adjacency = random_adjacency(&mut rng, n);
        let params = GraphBlockParams::<f64>::init(c, 3, 4, &mut rng).unwrap();
        for _ in 0..5 {
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            assert_equivariant(&nodes, &adjacency, &params, &perm);
        }
    }
    println!("ACCEPTANCE 2 layer-invariants: PASS");
}

// -------------------------------------------------------------------------
// 3. Dynamic-matching pruning statistics
// -------------------------------------------------------------------------

fn one_scale_rep(nodes: Array2<f64>, rng: &mut ChaCha8Rng) -> MultiscaleRepresentation<f64> {
    let n = nodes.nrows();
    let coords: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.gen::<f64>() * 9.0, rng.gen::<f64>() * 9.0))
        .collect();
    let coords = NodeCoords::new(coords, 10, 10).unwrap();
    let adjacency = build_adjacency(&coords, 5.0).unwrap();
    let graph = FeatureGraph {
        nodes,
        coords,
        adjacency,
        radius: 5.0,
        scale: ScaleId::Medium,
    };
    MultiscaleRepresentation::new(vec![graph], Vec::new()).unwrap()
}

#[test]
fn criterion_3_pruning_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let dim = 32;

    // Half identical, half independent: corrupted pairs go, clean pairs stay.
    let n = 32;
    let mut corrupted_removed = 0usize;
    let mut corrupted_total = 0usize;
    let mut clean_retained = 0usize;
    let mut clean_total = 0usize;
    for _ in 0..100 {
        let base = random_nodes(&mut rng, n, dim);
        let mut other = base.clone();
        for i in n / 2..n {
            for k in 0..dim {
                other[[i, k]] = rng.gen::<f64>() * 2.0 - 1.0;
            }
        }
        let a = one_scale_rep(base, &mut rng);
        let b = a.graphs()[0].with_nodes(other).unwrap();
        let b = MultiscaleRepresentation::new(vec![b], Vec::new()).unwrap();
        let m = dynamic_match(&a, &b, AdjSign::Minus).unwrap();
        for i in 0..n / 2 {
            clean_total += 1;
            if m.retained[0].contains(&i) {
                clean_retained += 1;
            }
        }
        for i in n / 2..n {
            corrupted_total += 1;
            if !m.retained[0].contains(&i) {
                corrupted_removed += 1;
            }
        }
    }
    let removed_rate = corrupted_removed as f64 / corrupted_total as f64;
    let retained_rate = clean_retained as f64 / clean_total as f64;
    assert!(
        removed_rate >= 0.95,
        "only {removed_rate:.3} of corrupted pairs removed"
    );
    assert!(
        retained_rate >= 0.95,
        "only {retained_rate:.3} of clean pairs retained"
    );

    // Fully random pairs: about half the nodes go.
    let mut removed = 0usize;
    let mut total = 0usize;
    for _ in 0..1000 {
        let a = one_scale_rep(random_nodes(&mut rng, 16, dim), &mut rng);
        let b = a.graphs()[0]
            .with_nodes(random_nodes(&mut rng, 16, dim))
            .unwrap();
        let b = MultiscaleRepresentation::new(vec![b], Vec::new()).unwrap();
        let m = dynamic_match(&a, &b, AdjSign::Minus).unwrap();
        removed += 16 - m.retained[0].len();
        total += 16;
    }
    let frac = removed as f64 / total as f64;
    assert!(
        (0.40..=0.60).contains(&frac),
        "random-pair removal fraction {frac:.3} outside 50% +/- 10%"
    );
    println!(
        "ACCEPTANCE 3 pruning-statistics: PASS (removed {removed_rate:.3}, retained {retained_rate:.3}, random {frac:.3})"
    );
}

// -------------------------------------------------------------------------
// 4. Occlusion-robustness trend
// -------------------------------------------------------------------------

/// Class textures: smoothed white noise blended with a population-wide
/// background so imposters share structure, plus per-sample pixel noise.
struct TextureSet {
    common: Array2<f64>,
    height: usize,
    width: usize,
    /// Weight of the shared background; the class field gets the rest.
    common_weight: f64,
    /// Peak-to-peak amplitude of the per-sample pixel noise.
    noise: f64,
}

impl TextureSet {
    fn new(height: usize, width: usize, seed: u64, common_weight: f64, noise: f64) -> Self {
        TextureSet {
            common: smooth_noise(height, width, seed),
            height,
            width,
            common_weight,
            noise,
        }
    }

    fn sample(&self, class: u64, sample_seed: u64) -> Array2<f64> {
        let class_field = smooth_noise(self.height, self.width, 0x9000 + class);
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        Array2::from_shape_fn((self.height, self.width), |(y, x)| {
            let v = 0.5
                + self.common_weight * self.common[[y, x]]
                + (1.0 - self.common_weight) * class_field[[y, x]]
                + self.noise * (rng.gen::<f64>() - 0.5);
            v.clamp(0.0, 1.0)
        })
    }
}

fn smooth_noise(h: usize, w: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = Array2::from_shape_fn((h, w), |_| rng.gen::<f64>() - 0.5);
    // Two box-blur passes give a correlation length near the filter
    // wavelengths.
    let mut out = raw.clone();
    for _ in 0..2 {
        let src = out.clone();
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                let mut count = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let ny = y as i64 + dy;
                        let nx = x as i64 + dx;
                        if ny >= 0 && nx >= 0 && ny < h as i64 && nx < w as i64 {
                            acc += src[[ny as usize, nx as usize]];
                            count += 1.0;
                        }
                    }
                }
                out[[y, x]] = acc / count;
            }
        }
    }
    // Rescale to roughly [-0.5, 0.5].
    let max = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    out.mapv(|v| v / (2.0 * max))
}

fn write_image(path: &Path, image: &Array2<f64>) {
    write_pgm(path, &GrayImage::from_array(image)).unwrap();
}

struct TrendSetup {
    dir: tempfile::TempDir,
    config_path: PathBuf,
    gallery_index: PathBuf,
    probe_manifest: PathBuf,
}

fn trend_setup(classes: usize, gallery_per_class: usize) -> TrendSetup {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let textures = TextureSet::new(48, 64, 4242);

    // A compact bank: 8 orientations x 2 wavelengths tuned to the texture
    // correlation length keeps the sweep inside the runtime budget.
    let bank_path = root.join("bank.txt");
    let mut bank = String::new();
    for o in 0..8 {
        let theta = o as f64 * std::f64::consts::PI / 8.0;
        for lambda in [4.0, 6.0] {
            bank.push_str(&format!("{theta} {lambda} {} 1.0 0.0\n", 0.56 * lambda));
        }
    }
    fs::write(&bank_path, bank).unwrap();

    let config_path = root.join("exp.cfg");
    fs::write(
        &config_path,
        format!(
            "seed = 77\npipeline = gabor\ngabor.bank = {}\ngabor.patch = 9\ngabor.nodes = 24\n\
             localizer.mode = grid\n\
             occlusion.kind = random-rectangle\nocclusion.fill = noise\n",
            bank_path.display()
        ),
    )
    .unwrap();

    // Gallery: clean samples.
    let mut gallery_manifest = String::from("path,label\n");
    for c in 0..classes {
        for s in 0..gallery_per_class {
            let name = format!("gal_{c}_{s}.pgm");
            write_image(
                &root.join(&name),
                &textures.sample(c as u64, 10_000 + (c * 10 + s) as u64),
            );
            gallery_manifest.push_str(&format!("{name},id{c}\n"));
        }
    }
    let gallery_manifest_path = root.join("gallery.csv");
    fs::write(&gallery_manifest_path, gallery_manifest).unwrap();

    // Probes: one further sample per class, occluded later per level.
    let mut probe_manifest = String::from("path,label\n");
    for c in 0..classes {
        let name = format!("probe_{c}.pgm");
        write_image(
            &root.join(&name),
            &textures.sample(c as u64, 20_000 + c as u64),
        );
        probe_manifest.push_str(&format!("{name},id{c}\n"));
    }
    let probe_manifest_path = root.join("probes.csv");
    fs::write(&probe_manifest_path, probe_manifest).unwrap();

    let config = ExperimentConfig::load(&config_path).unwrap();
    let gallery = Manifest::load(&gallery_manifest_path).unwrap();
    let gallery_out = root.join("gallery_reps");
    let extracted = commands::cmd_extract(&config, &gallery, &gallery_out).unwrap();

    TrendSetup {
        dir,
        config_path,
        gallery_index: extracted.index,
        probe_manifest: probe_manifest_path,
    }
}

/// EERs (static, dynamic) of occluded probes against the clean gallery.
fn eer_at_level(setup: &TrendSetup, fraction: f64) -> (f64, f64) {
    let root = setup.dir.path();
    let tag = format!("{:02}", (fraction * 100.0) as usize);
    let mut config = ExperimentConfig::load(&setup.config_path).unwrap();
    config.occlusion.area_fraction = fraction;
    config.seed = 500 + (fraction * 100.0) as u64;
    let probes = Manifest::load(&setup.probe_manifest).unwrap();
    let occ_dir = root.join(format!("occ_{tag}"));
    let occluded = commands::cmd_occlude(&config, &probes, &occ_dir).unwrap();
    let occ_manifest = Manifest::load(&occluded.index).unwrap();
    let probe_reps = root.join(format!("reps_{tag}"));
    let extracted = commands::cmd_extract(&config, &occ_manifest, &probe_reps).unwrap();
    let scores = root.join(format!("scores_{tag}.csv"));
    commands::cmd_match(
        &extracted.index,
        &setup.gallery_index,
        ScoreColumns::Both,
        AdjSign::Minus,
        &scores,
        None,
    )
    .unwrap();
    let report = commands::cmd_evaluate(&scores, &[], None).unwrap();
    let col = |name: &str| {
        report
            .columns
            .iter()
            .find(|c| c.name == name)
            .unwrap_or_else(|| panic!("missing column {name}"))
            .eer
    };
    (col("score_static"), col("score_dynamic"))
}

#[test]
fn criterion_4_occlusion_robustness_trend() {
    let start = Instant::now();
    let setup = trend_setup(24, 2);
    let levels = [0.1, 0.2, 0.3, 0.4, 0.5];
    let mut static_eers = Vec::new();
    let mut dynamic_eers = Vec::new();
    for &f in &levels {
        let (s, d) = eer_at_level(&setup, f);
        println!("  occlusion {:.0}%: static eer {s:.4}, dynamic eer {d:.4}", f * 100.0);
        static_eers.push(s);
        dynamic_eers.push(d);
    }
    // At 30% occlusion dynamic matching must beat static matching outright.
    assert!(
        dynamic_eers[2] < static_eers[2],
        "at 30%: dynamic {} vs static {}",
        dynamic_eers[2],
        static_eers[2]
    );
    // Degradation is monotone across the sweep, with at most one inversion.
    let inversions = dynamic_eers
        .windows(2)
        .filter(|w| w[1] < w[0] - 1e-12)
        .count();
    assert!(
        inversions <= 1,
        "dynamic EER sweep {dynamic_eers:?} has {inversions} inversions"
    );
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs() < 600,
        "trend experiment took {elapsed:?}, budget is ten minutes"
    );
    println!(
        "ACCEPTANCE 4 occlusion-robustness-trend: PASS (static {static_eers:?}, dynamic {dynamic_eers:?}, {elapsed:?})"
    );
}

// -------------------------------------------------------------------------
// 5. Metric correctness against a brute-force oracle
// -------------------------------------------------------------------------

mod oracle {
    //! Independent brute-force implementations of the verification metrics:
    //! rates are recounted from scratch at every candidate threshold.

    pub fn far(imposter: &[f64], t: f64) -> f64 {
        let mut n = 0usize;
        for &s in imposter {
            if s >= t {
                n += 1;
            }
        }
        n as f64 / imposter.len() as f64
    }

    pub fn frr(genuine: &[f64], t: f64) -> f64 {
        let mut n = 0usize;
        for &s in genuine {
            if s < t {
                n += 1;
            }
        }
        n as f64 / genuine.len() as f64
    }

    fn sweep(genuine: &[f64], imposter: &[f64]) -> Vec<f64> {
        let mut all: Vec<f64> = genuine.iter().chain(imposter.iter()).copied().collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all.dedup();
        let top = *all.last().unwrap();
        all.push(top + 1.0);
        all
    }

    /// Threshold sweep; at the first sign change of FAR - FRR the crossing
    /// is interpolated linearly and the rate is the mean of the two
    /// interpolated rates.
    pub fn eer(genuine: &[f64], imposter: &[f64]) -> (f64, f64) {
        let ts = sweep(genuine, imposter);
        let mut prev: Option<(f64, f64, f64)> = None;
        for &t in &ts {
            let fa = far(imposter, t);
            let fr = frr(genuine, t);
            let d = fa - fr;
            if d == 0.0 {
                return ((fa + fr) / 2.0, t);
            }
            if d < 0.0 {
                let (pt, pfa, pfr) = prev.expect("diff starts positive");
                let dp = pfa - pfr;
                let lambda = dp / (dp - d);
                let far_x = pfa + lambda * (fa - pfa);
                let frr_x = pfr + lambda * (fr - pfr);
                return ((far_x + frr_x) / 2.0, pt + lambda * (t - pt));
            }
            prev = Some((t, fa, fr));
        }
        unreachable!("sentinel crosses");
    }

    pub fn frr_at_far(genuine: &[f64], imposter: &[f64], target: f64) -> (f64, f64) {
        for &t in &sweep(genuine, imposter) {
            if far(imposter, t) <= target {
                return (frr(genuine, t), t);
            }
        }
        unreachable!("sentinel has far 0");
    }

    /// Rank-n hit counting by explicit comparison: an entry outranks the
    /// best same-label candidate when its score is higher, or equal with a
    /// smaller index.
    pub fn rank_hits(
        scores: &ndarray::Array2<f64>,
        probe_labels: &[String],
        gallery_labels: &[String],
        n: usize,
    ) -> f64 {
        let (p, g) = scores.dim();
        let mut hits = 0usize;
        for pi in 0..p {
            let mut best_rank = usize::MAX;
            for j in 0..g {
                if gallery_labels[j] != probe_labels[pi] {
                    continue;
                }
                let mut rank = 1usize;
                for k in 0..g {
                    if k == j {
                        continue;
                    }
                    if scores[[pi, k]] > scores[[pi, j]]
                        || (scores[[pi, k]] == scores[[pi, j]] && k < j)
                    {
                        rank += 1;
                    }
                }
                best_rank = best_rank.min(rank);
            }
            if best_rank <= n {
                hits += 1;
            }
        }
        hits as f64 / p as f64
    }
}

#[test]
fn criterion_5_metric_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for case in 0..1000 {
        let ng = rng.gen_range(1..=25);
        let ni = rng.gen_range(1..=25);
        // Quantized scores provoke ties; continuous scores cover the rest.
        let quantize = case % 3 == 0;
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let v = rng.gen::<f64>();
                    if quantize {
                        (v * 8.0).round() / 8.0
                    } else {
                        v
                    }
                })
                .collect()
        };
        let genuine = draw(ng);
        let imposter = draw(ni);
        let set = ScoreSet::new(genuine.clone(), imposter.clone()).unwrap();

        let t = rng.gen::<f64>();
        let (far_impl, frr_impl) = eval::far_frr(&set, t).unwrap();
        assert_eq!(far_impl, oracle::far(&imposter, t), "far at case {case}");
        assert_eq!(frr_impl, oracle::frr(&genuine, t), "frr at case {case}");

        let e = eval::eer(&set).unwrap();
        let (eer_oracle, thr_oracle) = oracle::eer(&genuine, &imposter);
        assert_eq!(e.eer, eer_oracle, "eer at case {case}");
        assert_eq!(e.threshold, thr_oracle, "eer threshold at case {case}");

        let target = rng.gen::<f64>().max(1e-3);
        let r = eval::frr_at_far(&set, target).unwrap();
        let (frr_oracle, t_oracle) = oracle::frr_at_far(&genuine, &imposter, target);
        assert_eq!(r.frr, frr_oracle, "frr@far at case {case}");
        assert_eq!(r.threshold, t_oracle, "frr@far threshold at case {case}");
    }

    // Rank-N against the counting oracle.
    for case in 0..200 {
        let p = rng.gen_range(2..=8);
        let g = rng.gen_range(2..=6);
        let gallery_labels: Vec<String> = (0..g).map(|j| format!("c{j}")).collect();
        let probe_labels: Vec<String> = (0..p)
            .map(|_| format!("c{}", rng.gen_range(0..g)))
            .collect();
        let quantized = case % 2 == 0;
        let scores = Array2::from_shape_fn((p, g), |_| {
            let v = rng.gen::<f64>();
            if quantized {
                (v * 4.0).round() / 4.0
            } else {
                v
            }
        });
        for n in [1usize, 2, 5] {
            let acc = eval::rank_n(&scores, &probe_labels, &gallery_labels, &[n]).unwrap()[0];
            let want = oracle::rank_hits(&scores, &probe_labels, &gallery_labels, n);
            assert_eq!(acc, want, "rank-{n} at case {case}");
        }
    }
    println!("ACCEPTANCE 5 metric-correctness: PASS (1000 verification cases, 200 rank cases)");
}

// -------------------------------------------------------------------------
// 6. Toy training
// -------------------------------------------------------------------------

#[test]
fn criterion_6_toy_training() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let textures = TextureSet::new(24, 24, 66);

    let bank_path = root.join("bank.txt");
    let mut bank = String::new();
    for o in 0..4 {
        let theta = o as f64 * std::f64::consts::PI / 4.0;
        bank.push_str(&format!("{theta} 4.0 2.24 1.0 0.0\n"));
    }
    fs::write(&bank_path, bank).unwrap();

    let mut manifest = String::from("path,label\n");
    for c in 0..8 {
        for s in 0..4 {
            let name = format!("t_{c}_{s}.pgm");
            write_image(
                &root.join(&name),
                &textures.sample(c as u64, (c * 100 + s) as u64),
            );
            manifest.push_str(&format!("{name},class{c}\n"));
        }
    }
    let manifest_path = root.join("train.csv");
    fs::write(&manifest_path, manifest).unwrap();

    // Optimizer block: the published settings (rate 0.001 halved every 10
    // epochs, weight decay 0.0001, 40 epochs); batch size shrunk to the toy
    // set.
    let config_path = root.join("train.cfg");
    fs::write(
        &config_path,
        format!(
            "seed = 6\npipeline = gabor\ngabor.bank = {}\ngabor.patch = 3\ngabor.nodes = 6\n\
             localizer.mode = grid\n\
             optimizer.learning_rate = 0.001\noptimizer.lr_halve_every = 10\n\
             optimizer.weight_decay = 0.0001\noptimizer.epochs = 40\noptimizer.batch_size = 8\n\
             segat.reduction_ratio = 4\nsegat.reduced_dim = 16\n",
            bank_path.display()
        ),
    )
    .unwrap();

    let config = ExperimentConfig::load(&config_path).unwrap();
    let manifest = Manifest::load(&manifest_path).unwrap();
    let weights_out = root.join("blocks.msdg");
    let report = commands::cmd_train_graph(&config, &manifest, &weights_out, None).unwrap();
    assert!(weights_out.exists());
    assert!(
        report.final_loss <= 0.5 * report.initial_loss,
        "loss only moved from {} to {}",
        report.initial_loss,
        report.final_loss
    );
    // The schedule halves at epochs 10, 20 and 30.
    let lr_of = |e: usize| report.epochs[e].learning_rate;
    assert_eq!(lr_of(0), 0.001);
    assert_eq!(lr_of(10), 0.0005);
    assert_eq!(lr_of(20), 0.00025);
    assert_eq!(lr_of(30), 0.000125);
    println!(
        "ACCEPTANCE 6 toy-training: PASS (eval loss {:.4} -> {:.4})",
        report.initial_loss, report.final_loss
    );
}

// -------------------------------------------------------------------------
// 7. Bit-exactness
// -------------------------------------------------------------------------

#[test]
fn criterion_7_bit_exactness() {
    // Container round trip on adversarial float payloads.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..50 {
        let mut store = WeightStore::new();
        let arrays = rng.gen_range(1..6);
        for k in 0..arrays {
            let n = rng.gen_range(0..40);
            let data: Vec<f32> = (0..n)
                .map(|_| f32::from_bits(rng.gen::<u32>()))
                .map(|v| if v.is_nan() { 0.0 } else { v })
                .collect();
            store.insert(
                format!("arr{k}"),
                NamedArray::new(vec![data.len()], data).unwrap(),
            );
        }
        let bytes = store.to_bytes();
        let reread = WeightStore::from_bytes(&bytes).unwrap();
        assert_eq!(bytes, reread.to_bytes());
    }

    // Repeated extraction with a fixed seed produces identical files.
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let textures = TextureSet::new(32, 32, 7777);
    let bank_path = root.join("bank.txt");
    fs::write(&bank_path, "0.0 4.0 2.24 1.0 0.0\n1.5707963 4.0 2.24 1.0 0.0\n").unwrap();
    let mut manifest = String::from("path,label\n");
    for c in 0..2 {
        let name = format!("s_{c}.pgm");
        write_image(&root.join(&name), &textures.sample(c as u64, c as u64));
        manifest.push_str(&format!("{name},id{c}\n"));
    }
    let manifest_path = root.join("m.csv");
    fs::write(&manifest_path, manifest).unwrap();
    let config_path = root.join("c.cfg");
    fs::write(
        &config_path,
        format!(
            "seed = 123\npipeline = gabor\ngabor.bank = {}\ngabor.patch = 5\ngabor.nodes = 6\n",
            bank_path.display()
        ),
    )
    .unwrap();
    let config = ExperimentConfig::load(&config_path).unwrap();
    let manifest = Manifest::load(&manifest_path).unwrap();
    let out1 = root.join("r1");
    let out2 = root.join("r2");
    let e1 = commands::cmd_extract(&config, &manifest, &out1).unwrap();
    let e2 = commands::cmd_extract(&config, &manifest, &out2).unwrap();
    assert_eq!(
        fs::read(&e1.index).unwrap(),
        fs::read(&e2.index).unwrap()
    );
    for (a, b) in e1.files.iter().zip(e2.files.iter()) {
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{a:?} differs");
    }
    println!("ACCEPTANCE 7 bit-exactness: PASS");
}

// -------------------------------------------------------------------------
// 8. Handcrafted-pipeline identity
// -------------------------------------------------------------------------

#[test]
fn criterion_8_handcrafted_identity() {
    use msdgr::matcher::{match_score, MatchMode};
    use msdgr::pipeline::Extractor;

    // Default 40-filter bank, energy-peak localization, no learned weights.
    let cfg = ExperimentConfig::default();
    let extractor = Extractor::<f32>::new(&cfg).unwrap();
    let textures = TextureSet::new(64, 64, 88);
    let image = textures.sample(0, 1).mapv(|v| v as f32);
    let rep_a = extractor.extract_image(&image).unwrap();
    let rep_b = extractor.extract_image(&image).unwrap();
    let s_static = match_score(&rep_a, &rep_b, MatchMode::Static, AdjSign::Minus).unwrap();
    let s_dynamic = match_score(&rep_a, &rep_b, MatchMode::Dynamic, AdjSign::Minus).unwrap();
    assert_eq!(s_static, 1.0, "static self-match must be exactly one");
    assert_eq!(s_dynamic, 1.0, "dynamic self-match must be exactly one");

    // The same holds through the file-based command path.
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let img_path = root.join("same.pgm");
    write_image(&root.join("same.pgm"), &textures.sample(0, 1));
    let _ = img_path;
    let manifest_path = root.join("m.csv");
    fs::write(&manifest_path, "path,label\nsame.pgm,x\nsame.pgm,x\n").unwrap();
    let bank_path = root.join("bank.txt");
    fs::write(&bank_path, "0.0 4.0 2.24 1.0 0.0\n0.7853981 6.0 3.36 1.0 0.0\n").unwrap();
    let config_path = root.join("c.cfg");
    fs::write(
        &config_path,
        format!(
            "seed = 1\npipeline = gabor\ngabor.bank = {}\ngabor.patch = 7\ngabor.nodes = 8\n",
            bank_path.display()
        ),
    )
    .unwrap();
    let config = ExperimentConfig::load(&config_path).unwrap();
    let manifest = Manifest::load(&manifest_path).unwrap();
    let reps = root.join("reps");
    let extracted = commands::cmd_extract(&config, &manifest, &reps).unwrap();
    let scores = root.join("scores.csv");
    commands::cmd_match(
        &extracted.index,
        &extracted.index,
        ScoreColumns::Both,
        AdjSign::Minus,
        &scores,
        None,
    )
    .unwrap();
    let text = fs::read_to_string(&scores).unwrap();
    for line in text.lines().skip(2) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[2], "1", "static score row `{line}`");
        assert_eq!(fields[3], "1", "dynamic score row `{line}`");
    }
    println!("ACCEPTANCE 8 handcrafted-identity: PASS");
}
