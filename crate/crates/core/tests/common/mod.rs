#![allow(dead_code)]

use ccrf_depth::crf::{CrfInstance, PairwiseWeights};
use rand::Rng;

/// Random graph with Erdős–Rényi edges (at least a spanning path when
/// `connected`), similarities in [0, 1], unit-scale depths.
pub fn random_instance(
    rng: &mut impl Rng,
    n: usize,
    k: usize,
    edge_prob: f64,
    connected: bool,
) -> CrfInstance<f64> {
    let mut edges = Vec::new();
    for p in 0..n {
        for q in (p + 1)..n {
            if (connected && q == p + 1) || rng.random_bool(edge_prob) {
                edges.push((p, q));
            }
        }
    }
    let sim = (0..edges.len() * k).map(|_| rng.random::<f64>()).collect();
    let z = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    CrfInstance::new(n, k, edges, sim, z, Some(y)).unwrap()
}

pub fn random_weights(rng: &mut impl Rng, k: usize, scale: f64) -> PairwiseWeights<f64> {
    // Kept away from zero so finite-difference probes stay feasible.
    PairwiseWeights::new((0..k).map(|_| 0.01 + rng.random::<f64>() * scale).collect()).unwrap()
}

/// `|a − b| ≤ tol · max(|a|, |b|, floor)`.
pub fn close_rel(a: f64, b: f64, tol: f64, floor: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(floor)
}
