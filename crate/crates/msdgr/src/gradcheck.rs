//! Finite-difference verification of every analytic gradient: the graph
//! layers (excitation, attention, residual block) and the triplet loss.
//!
//! Checks run in `f64`. Each randomized instance is screened so that no
//! rectifier pre-activation sits within reach of the finite-difference step;
//! at those points the analytic derivative is one-sided and the comparison
//! would be meaningless.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{build_adjacency, FeatureGraph, NodeCoords, ScaleId};
use crate::matcher::{triplet_loss, triplet_loss_with_grads, AdjSign, MultiscaleRepresentation, TripletBatch};
use crate::segat::{
    gat_backward_nodes, gat_forward_nodes, graph_block_backward_nodes, graph_block_forward_nodes,
    se_backward_nodes, se_forward_nodes, GatParams, GraphBlockParams, SeParams,
};

pub const TOLERANCE: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-4;
/// Minimum distance of any kinked pre-activation from zero for an instance
/// to be admissible.
const KINK_MARGIN: f64 = 5e-3;

/// Relative error with a floor that absorbs finite-difference roundoff.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// One verified gradient path.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

impl CheckResult {
    pub fn from_error(name: &str, max_rel_err: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            max_rel_err,
            pass: max_rel_err < TOLERANCE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub seed: u64,
    pub instances: usize,
    pub tolerance: f64,
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "gradient check: seed={} instances={} tolerance={:e}\n",
            self.seed, self.instances, self.tolerance
        );
        for c in &self.checks {
            out.push_str(&format!(
                "  {:<32} max_rel_err={:.3e}  {}\n",
                c.name,
                c.max_rel_err,
                if c.pass { "pass" } else { "FAIL" }
            ));
        }
        out.push_str(if self.all_pass() {
            "result: PASS\n"
        } else {
            "result: FAIL\n"
        });
        out
    }
}

fn central_diff(mut loss_at: impl FnMut(f64) -> f64) -> f64 {
    (loss_at(FD_STEP) - loss_at(-FD_STEP)) / (2.0 * FD_STEP)
}

fn random_nodes(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, c), |_| rng.gen::<f64>() * 2.0 - 1.0)
}

fn random_adjacency(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let coords: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.gen::<f64>() * 5.0, rng.gen::<f64>() * 5.0))
        .collect();
    let coords = NodeCoords::new(coords, 6, 6).unwrap();
    build_adjacency(&coords, 3.0).unwrap()
}

fn weighted_sum(out: &Array2<f64>, u: &Array2<f64>) -> f64 {
    out.iter().zip(u.iter()).map(|(a, b)| a * b).sum()
}

/// Max relative error of the excitation-layer gradients on one instance.
/// Returns `None` when the instance is inadmissible (a rectifier sits on its
/// kink).
fn check_se_instance(seed: u64) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, rho) = (2 + (seed as usize % 5), 8, 4);
    let x = random_nodes(&mut rng, n, c);
    let params = SeParams::<f64>::init(c, rho, &mut rng).unwrap();
    let upstream = random_nodes(&mut rng, n, c);

    let (out, cache) = se_forward_nodes(&x, &params).unwrap();
    if cache.bottleneck_preactivation().iter().any(|v| v.abs() < KINK_MARGIN) {
        return None;
    }
    let base = weighted_sum(&out, &upstream);
    debug_assert!(base.is_finite());
    let grads = se_backward_nodes(&cache, &params, &upstream);

    let mut max_err = 0.0f64;
    let mut probe = |analytic: f64, loss_at: &mut dyn FnMut(f64) -> f64| {
        let numeric = central_diff(loss_at);
        max_err = max_err.max(relative_error(analytic, numeric));
    };
    for i in 0..params.w1.nrows() {
        for j in 0..params.w1.ncols() {
            probe(grads.w1[[i, j]], &mut |d| {
                let mut p = params.clone();
                p.w1[[i, j]] += d;
                weighted_sum(&se_forward_nodes(&x, &p).unwrap().0, &upstream)
            });
        }
    }
    for i in 0..params.w2.nrows() {
        for j in 0..params.w2.ncols() {
            probe(grads.w2[[i, j]], &mut |d| {
                let mut p = params.clone();
                p.w2[[i, j]] += d;
                weighted_sum(&se_forward_nodes(&x, &p).unwrap().0, &upstream)
            });
        }
    }
    for i in 0..n {
        for k in 0..c {
            probe(grads.input[[i, k]], &mut |d| {
                let mut xx = x.clone();
                xx[[i, k]] += d;
                weighted_sum(&se_forward_nodes(&xx, &params).unwrap().0, &upstream)
            });
        }
    }
    Some(max_err)
}

fn check_gat_instance(seed: u64) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c) = (2 + (seed as usize % 5), 6);
    let x = random_nodes(&mut rng, n, c);
    let adjacency = random_adjacency(&mut rng, n);
    let params = GatParams::<f64>::init(c, &mut rng);
    let upstream = random_nodes(&mut rng, n, c);

    let (out, cache) = gat_forward_nodes(&x, &adjacency, &params).unwrap();
    if cache
        .attention_preactivation()
        .iter()
        .flatten()
        .any(|v| v.abs() < KINK_MARGIN)
    {
        return None;
    }
    let grads = gat_backward_nodes(&cache, &params, &upstream);
    let _ = weighted_sum(&out, &upstream);

    let mut max_err = 0.0f64;
    let mut probe = |analytic: f64, loss_at: &mut dyn FnMut(f64) -> f64| {
        let numeric = central_diff(loss_at);
        max_err = max_err.max(relative_error(analytic, numeric));
    };
    for i in 0..c {
        for j in 0..c {
            probe(grads.w[[i, j]], &mut |d| {
                let mut p = params.clone();
                p.w[[i, j]] += d;
                weighted_sum(&gat_forward_nodes(&x, &adjacency, &p).unwrap().0, &upstream)
            });
        }
    }
    for k in 0..2 * c {
        probe(grads.w_att[k], &mut |d| {
            let mut p = params.clone();
            p.w_att[k] += d;
            weighted_sum(&gat_forward_nodes(&x, &adjacency, &p).unwrap().0, &upstream)
        });
    }
    for i in 0..n {
        for k in 0..c {
            probe(grads.input[[i, k]], &mut |d| {
                let mut xx = x.clone();
                xx[[i, k]] += d;
                weighted_sum(&gat_forward_nodes(&xx, &adjacency, &params).unwrap().0, &upstream)
            });
        }
    }
    Some(max_err)
}

fn check_block_instance(seed: u64) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, cr, rho) = (2 + (seed as usize % 4), 8, 3, 4);
    let x = random_nodes(&mut rng, n, c);
    let adjacency = random_adjacency(&mut rng, n);
    let params = GraphBlockParams::<f64>::init(c, cr, rho, &mut rng).unwrap();
    let upstream = random_nodes(&mut rng, n, cr);

    let (_, cache) = graph_block_forward_nodes(&x, &adjacency, &params).unwrap();
    if cache.kink_preactivations().any(|v| v.abs() < KINK_MARGIN) {
        return None;
    }
    let grads = graph_block_backward_nodes(&cache, &params, &upstream);

    // Flatten analytic parameter gradients in visit order.
    let mut analytic: Vec<f64> = Vec::new();
    grads.visit(|s| analytic.extend_from_slice(s));

    let loss_with = |params: &GraphBlockParams<f64>, x: &Array2<f64>| -> f64 {
        let (out, _) = graph_block_forward_nodes(x, &adjacency, params).unwrap();
        weighted_sum(&out, &upstream)
    };

    let mut max_err = 0.0f64;
    // Parameter count in visit order, to map a flat index back into a slot.
    let mut flat_idx = 0usize;
    let mut slot_sizes = Vec::new();
    {
        let mut p = params.clone();
        p.visit_mut(|s| slot_sizes.push(s.len()));
    }
    for (slot, &len) in slot_sizes.iter().enumerate() {
        for offset in 0..len {
            let a = analytic[flat_idx];
            let numeric = central_diff(|d| {
                let mut p = params.clone();
                let mut cur = 0usize;
                p.visit_mut(|s| {
                    if cur == slot {
                        s[offset] += d;
                    }
                    cur += 1;
                });
                loss_with(&p, &x)
            });
            max_err = max_err.max(relative_error(a, numeric));
            flat_idx += 1;
        }
    }
    for i in 0..n {
        for k in 0..c {
            let numeric = central_diff(|d| {
                let mut xx = x.clone();
                xx[[i, k]] += d;
                loss_with(&params, &xx)
            });
            max_err = max_err.max(relative_error(grads.input[[i, k]], numeric));
        }
    }
    Some(max_err)
}

fn random_representation(rng: &mut ChaCha8Rng, shapes: &[(usize, usize)]) -> MultiscaleRepresentation<f64> {
    let tags = [ScaleId::Small, ScaleId::Medium, ScaleId::Large];
    let graphs: Vec<FeatureGraph<f64>> = shapes
        .iter()
        .enumerate()
        .map(|(k, &(n, c))| {
            let nodes = random_nodes(rng, n, c);
            let coords: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.gen::<f64>() * 4.0, rng.gen::<f64>() * 4.0))
                .collect();
            let coords = NodeCoords::new(coords, 5, 5).unwrap();
            let adjacency = build_adjacency(&coords, 3.0).unwrap();
            FeatureGraph {
                nodes,
                coords,
                adjacency,
                radius: 3.0,
                scale: tags[k],
            }
        })
        .collect();
    let global: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() - 0.5).collect();
    MultiscaleRepresentation::new(graphs, global).unwrap()
}

fn check_triplet_instance(seed: u64) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = [(3usize, 6usize), (2, 6)];
    let anchor = random_representation(&mut rng, &shapes);
    let positive = random_representation(&mut rng, &shapes);
    let negative = random_representation(&mut rng, &shapes);
    let margin = 1.0;
    let adj_sign = AdjSign::Minus;

    let batch = TripletBatch::new(&anchor, &positive, &negative, margin).unwrap();
    let (loss, grads) = triplet_loss_with_grads(&batch, adj_sign).unwrap();
    // Keep a safe distance from the hinge kink.
    if (loss - 0.0).abs() < KINK_MARGIN || loss < KINK_MARGIN {
        return None;
    }

    let eval = |a: &MultiscaleRepresentation<f64>,
                p: &MultiscaleRepresentation<f64>,
                n: &MultiscaleRepresentation<f64>| {
        let b = TripletBatch::new(a, p, n, margin).unwrap();
        triplet_loss(&b, adj_sign).unwrap()
    };

    let mut max_err = 0.0f64;
    let reps = [&anchor, &positive, &negative];
    let rep_grads = [&grads.anchor, &grads.positive, &grads.negative];
    for (which, (rep, rg)) in reps.iter().zip(rep_grads.iter()).enumerate() {
        for (gi, g) in rep.graphs().iter().enumerate() {
            for i in 0..g.node_count() {
                for k in 0..g.node_dim() {
                    let numeric = central_diff(|d| {
                        let mut graphs: Vec<FeatureGraph<f64>> = rep.graphs().to_vec();
                        graphs[gi].nodes[[i, k]] += d;
                        let perturbed = rep.with_graphs(graphs).unwrap();
                        match which {
                            0 => eval(&perturbed, &positive, &negative),
                            1 => eval(&anchor, &perturbed, &negative),
                            _ => eval(&anchor, &positive, &perturbed),
                        }
                    });
                    max_err = max_err.max(relative_error(rg.nodes[gi][[i, k]], numeric));
                }
            }
        }
        for k in 0..rep.global().len() {
            let numeric = central_diff(|d| {
                let mut global = rep.global().to_vec();
                global[k] += d;
                let perturbed =
                    MultiscaleRepresentation::new(rep.graphs().to_vec(), global).unwrap();
                match which {
                    0 => eval(&perturbed, &positive, &negative),
                    1 => eval(&anchor, &perturbed, &negative),
                    _ => eval(&anchor, &positive, &perturbed),
                }
            });
            max_err = max_err.max(relative_error(rg.global[k], numeric));
        }
    }
    Some(max_err)
}

fn run_check(name: &str, base_seed: u64, instances: usize, f: impl Fn(u64) -> Option<f64>) -> CheckResult {
    let mut max_err = 0.0f64;
    let mut done = 0usize;
    let mut sub = 0u64;
    while done < instances {
        // Inadmissible instances (a kink within the step) are redrawn.
        match f(base_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(sub)) {
            Some(err) => {
                max_err = max_err.max(err);
                done += 1;
            }
            None => {}
        }
        sub += 1;
        if sub > 20 * instances as u64 {
            return CheckResult {
                name: format!("{name} (instance generation stalled)"),
                max_rel_err: f64::INFINITY,
                pass: false,
            };
        }
    }
    CheckResult::from_error(name, max_err)
}

/// Runs every gradient check over `instances` random instances each.
pub fn run(seed: u64, instances: usize) -> GradcheckReport {
    let checks = vec![
        run_check("se_forward", seed ^ 0x5E, instances, check_se_instance),
        run_check("gat_forward", seed ^ 0x6A7, instances, check_gat_instance),
        run_check("graph_block_forward", seed ^ 0xB10C, instances, check_block_instance),
        run_check("triplet_loss", seed ^ 0x731, instances, check_triplet_instance),
    ];
    GradcheckReport {
        seed,
        instances,
        tolerance: TOLERANCE,
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn first_admissible(f: impl Fn(u64) -> Option<f64>, start: u64) -> f64 {
        (start..start + 100)
            .find_map(f)
            .expect("an admissible instance exists within 100 draws")
    }

    #[test]
    fn single_instances_pass() {
        assert!(first_admissible(check_se_instance, 1) < TOLERANCE);
        assert!(first_admissible(check_gat_instance, 2) < TOLERANCE);
        assert!(first_admissible(check_block_instance, 3) < TOLERANCE);
        assert!(first_admissible(check_triplet_instance, 4) < TOLERANCE);
    }

    #[test]
    fn fifteen_instances_per_layer_pass() {
        let report = run(0xFEED, 15);
        assert!(report.all_pass(), "{}", report.to_text());
    }

    #[test]
    fn corrupted_gradients_are_reported_as_failures() {
        // Negative control: an analytic gradient that is off by 10% must trip
        // the tolerance.
        let analytic = 1.0;
        let corrupted = analytic * 1.1;
        let result = CheckResult::from_error("corrupted", relative_error(corrupted, analytic));
        assert!(!result.pass);
        let report = GradcheckReport {
            seed: 0,
            instances: 1,
            tolerance: TOLERANCE,
            checks: vec![result],
        };
        assert!(!report.all_pass());
        assert!(report.to_text().contains("FAIL"));
    }

    #[test]
    fn zero_weight_excitation_has_matching_zero_gradient() {
        // With both bottleneck maps zero, perturbing one element of the first
        // map cannot change the output, and the analytic gradient is zero.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_nodes(&mut rng, 4, 8);
        let params = SeParams::new(Array2::zeros((2, 8)), Array2::zeros((8, 2))).unwrap();
        let upstream = random_nodes(&mut rng, 4, 8);
        let (_, cache) = se_forward_nodes(&x, &params).unwrap();
        let grads = se_backward_nodes(&cache, &params, &upstream);
        for i in 0..2 {
            for j in 0..8 {
                let numeric = central_diff(|d| {
                    let mut p = params.clone();
                    p.w1[[i, j]] += d;
                    weighted_sum(&se_forward_nodes(&x, &p).unwrap().0, &upstream)
                });
                assert_eq!(grads.w1[[i, j]], 0.0);
                assert!(relative_error(grads.w1[[i, j]], numeric) < TOLERANCE);
            }
        }
    }

    #[test]
    fn report_text_lists_every_layer() {
        let report = run(7, 2);
        let text = report.to_text();
        for name in ["se_forward", "gat_forward", "graph_block_forward", "triplet_loss"] {
            assert!(text.contains(name));
        }
    }
}
