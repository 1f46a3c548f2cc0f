//! Shared fixtures for the criterion benchmarks.

use jssp_core::{build_graph, generate_taillard, random_dispatch, GraphView, Instance};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `count` disjunctive graphs of random `jobs x machines` instances under
/// random dispatch orders.
pub fn random_graphs(jobs: usize, machines: usize, count: usize, seed: u64) -> Vec<GraphView> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let inst = generate_taillard(jobs, machines, seed.wrapping_add(i as u64));
            build_graph(&inst, &random_dispatch(&inst, &mut rng))
        })
        .collect()
}

pub fn instance(jobs: usize, machines: usize) -> Instance {
    generate_taillard(jobs, machines, 7)
}
