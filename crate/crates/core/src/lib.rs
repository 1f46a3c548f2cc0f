//! Improvement search for the job-shop scheduling problem.
//!
//! A complete solution is kept as one operation order per machine and viewed
//! as a directed disjunctive graph. [`eval`] computes schedules on that graph
//! by message passing, [`n5`] enumerates critical-block swaps, [`policy`]
//! scores those swaps with a graph neural network trained by [`rl`], and
//! [`search`] holds the classical improvement rules used as baselines.

pub mod eval;
pub mod exact;
pub mod graph;
pub mod harness;
pub mod instance;
pub mod n5;
pub mod nn;
pub mod policy;
pub mod rl;
pub mod search;
pub mod seed;

pub use eval::{
    backward_pass, batch_evaluate, cpm_oracle, evaluate, extract_critical, forward_pass,
    CriticalBlock, CriticalBlocks, EvalError, Schedule,
};
pub use graph::{
    apply_move, build_graph, context_subgraphs, is_acyclic, GraphView, Move, Solution,
};
pub use instance::{
    generate_taillard, initial_solution_fdd_mwkr, parse_standard, parse_taillard, random_dispatch,
    serialize_standard, serialize_taillard, Instance, OpId, Time,
};
pub use n5::{build_mask, enumerate_moves, MoveSet};
pub use policy::{
    Checkpoint, CheckpointError, NodeEmbedding, PolicyConfig, PolicyInput, PolicyNet,
};
pub use rl::{rollout, train, Driver, Rollout, Selection, TrainConfig, TrainError};
pub use search::{
    run_best_improvement, run_first_improvement, run_greedy, run_tabu_n5, RestartMemory,
    SearchResult,
};
