//! Schedule evaluation on the disjunctive graph.
//!
//! The primary evaluator is a synchronous max-pooling message-passing scheme:
//! every node carries a message `(d, c)` where `d` accumulates a start time and
//! `c` flags whether some predecessor is still unresolved. Once every flag has
//! dropped to zero the accumulators hold the earliest start times. A mirrored
//! pass over the reversed graph yields latest start times. [`cpm_oracle`] is
//! the classical topological-order recursion and serves as the reference.

use rand::Rng;
use thiserror::Error;

use crate::graph::GraphView;
use crate::instance::{OpId, Time};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("graph contains a cycle")]
    Cycle,
    #[error("graph {index} of the batch contains a cycle")]
    CycleInBatch { index: usize },
}

/// Earliest/latest start per node (indexed like the graph) and the makespan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub est: Vec<Time>,
    pub lst: Vec<Time>,
    pub makespan: Time,
}

impl Schedule {
    pub fn is_critical(&self, node: usize) -> bool {
        self.est[node] == self.lst[node]
    }
}

/// Per-node message of the evaluator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Message {
    pub d: Time,
    pub c: u8,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub est: Vec<Time>,
    pub makespan: Time,
    pub passes: usize,
    /// Number of nodes with `c = 1` after each pass (index 0 is the initial state).
    pub unready: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct BackwardPass {
    pub lst: Vec<Time>,
    pub passes: usize,
    pub unready: Vec<usize>,
}

/// Runs synchronous sweeps until every readiness flag is zero.
///
/// `preds(v)` lists the nodes whose messages flow into `v`; `weight(v, u)`
/// is the amount added to the message of `u` when it enters `v`. Nodes with
/// no incoming messages keep their current message.
fn propagate<'a, P, W>(
    mut msgs: Vec<Message>,
    preds: P,
    weight: W,
    max_passes: usize,
) -> Result<(Vec<Message>, usize, Vec<usize>), EvalError>
where
    P: Fn(usize) -> &'a [usize],
    W: Fn(usize, usize) -> Time,
{
    let n = msgs.len();
    let mut next = msgs.clone();
    let mut unready = msgs.iter().filter(|m| m.c == 1).count();
    let mut trace = vec![unready];
    let mut passes = 0;
    while unready > 0 {
        if passes >= max_passes {
            return Err(EvalError::Cycle);
        }
        unready = 0;
        for v in 0..n {
            let incoming = preds(v);
            if incoming.is_empty() {
                next[v] = msgs[v];
            } else {
                let mut d = Time::MIN;
                let mut c = 0u8;
                for &u in incoming {
                    let mu = msgs[u];
                    d = d.max(weight(v, u) + (1 - mu.c as Time) * mu.d);
                    c = c.max(mu.c);
                }
                next[v] = Message { d, c };
            }
            unready += next[v].c as usize;
        }
        std::mem::swap(&mut msgs, &mut next);
        passes += 1;
        trace.push(unready);
    }
    Ok((msgs, passes, trace))
}

/// Earliest start times by forward message passing.
pub fn forward_pass(g: &GraphView) -> Result<ForwardPass, EvalError> {
    let n = g.num_nodes();
    let mut msgs = vec![Message { d: 0, c: 1 }; n];
    msgs[g.source()].c = 0;
    let (msgs, passes, unready) = propagate(msgs, |v| g.in_neighbors(v), |_, u| g.duration(u), n)?;
    let est: Vec<Time> = msgs.iter().map(|m| m.d).collect();
    Ok(ForwardPass {
        makespan: est[g.sink()],
        est,
        passes,
        unready,
    })
}

/// Latest start times by message passing over the reversed graph. The
/// accumulator holds `-lst`: entering `v` from successor `u` adds the
/// duration of `v` itself, so `-lst_v = p_v + max_u(-lst_u)`.
pub fn backward_pass(g: &GraphView, makespan: Time) -> Result<BackwardPass, EvalError> {
    let n = g.num_nodes();
    let mut msgs = vec![Message { d: 0, c: 1 }; n];
    msgs[g.sink()] = Message { d: -makespan, c: 0 };
    let (msgs, passes, unready) = propagate(msgs, |v| g.out_neighbors(v), |v, _| g.duration(v), n)?;
    Ok(BackwardPass {
        lst: msgs.iter().map(|m| -m.d).collect(),
        passes,
        unready,
    })
}

/// Forward then backward message passing.
pub fn evaluate(g: &GraphView) -> Result<Schedule, EvalError> {
    let fwd = forward_pass(g)?;
    let bwd = backward_pass(g, fwd.makespan)?;
    Ok(Schedule {
        est: fwd.est,
        lst: bwd.lst,
        makespan: fwd.makespan,
    })
}

/// Critical-path method by topological-order recursion.
pub fn cpm_oracle(g: &GraphView) -> Result<Schedule, EvalError> {
    let order = g.topological_order().ok_or(EvalError::Cycle)?;
    let n = g.num_nodes();
    let mut est = vec![0; n];
    for &v in &order {
        est[v] = g
            .in_neighbors(v)
            .iter()
            .map(|&u| est[u] + g.duration(u))
            .max()
            .unwrap_or(0);
    }
    let makespan = est[g.sink()];
    let mut lst = vec![makespan; n];
    for &v in order.iter().rev() {
        if let Some(min_succ) = g.out_neighbors(v).iter().map(|&u| lst[u]).min() {
            lst[v] = min_succ - g.duration(v);
        }
    }
    Ok(Schedule { est, lst, makespan })
}

/// Evaluates a batch as one disjoint union: all graphs share each
/// synchronous sweep. Results equal per-graph [`evaluate`] exactly.
pub fn batch_evaluate(graphs: &[GraphView]) -> Result<Vec<Schedule>, EvalError> {
    if graphs.is_empty() {
        return Ok(Vec::new());
    }
    let mut offsets = Vec::with_capacity(graphs.len() + 1);
    offsets.push(0usize);
    for g in graphs {
        offsets.push(offsets.last().unwrap() + g.num_nodes());
    }
    let total = *offsets.last().unwrap();
    let max_nodes = graphs.iter().map(|g| g.num_nodes()).max().unwrap_or(0);

    let mut in_off = vec![0usize];
    let mut in_idx = Vec::new();
    let mut out_off = vec![0usize];
    let mut out_idx = Vec::new();
    let mut durations = Vec::with_capacity(total);
    for (g, &base) in graphs.iter().zip(&offsets) {
        for v in 0..g.num_nodes() {
            in_idx.extend(g.in_neighbors(v).iter().map(|&u| u + base));
            in_off.push(in_idx.len());
            out_idx.extend(g.out_neighbors(v).iter().map(|&u| u + base));
            out_off.push(out_idx.len());
            durations.push(g.duration(v));
        }
    }

    let mut msgs = vec![Message { d: 0, c: 1 }; total];
    for (g, &base) in graphs.iter().zip(&offsets) {
        msgs[base + g.source()].c = 0;
    }
    let fwd = propagate(
        msgs,
        |v| &in_idx[in_off[v]..in_off[v + 1]],
        |_, u| durations[u],
        max_nodes,
    );
    let (fwd_msgs, _, _) = match fwd {
        Ok(r) => r,
        Err(_) => {
            let index = graphs
                .iter()
                .position(|g| g.topological_order().is_none())
                .unwrap_or(0);
            return Err(EvalError::CycleInBatch { index });
        }
    };

    let mut back = vec![Message { d: 0, c: 1 }; total];
    let mut makespans = Vec::with_capacity(graphs.len());
    for (g, &base) in graphs.iter().zip(&offsets) {
        let makespan = fwd_msgs[base + g.sink()].d;
        makespans.push(makespan);
        back[base + g.sink()] = Message { d: -makespan, c: 0 };
    }
    let (bwd_msgs, _, _) = propagate(
        back,
        |v| &out_idx[out_off[v]..out_off[v + 1]],
        |v, _| durations[v],
        max_nodes,
    )?;

    Ok(graphs
        .iter()
        .zip(offsets.windows(2))
        .zip(makespans)
        .map(|((_, w), makespan)| Schedule {
            est: fwd_msgs[w[0]..w[1]].iter().map(|m| m.d).collect(),
            lst: bwd_msgs[w[0]..w[1]].iter().map(|m| -m.d).collect(),
            makespan,
        })
        .collect())
}

/// Maximal run of consecutive same-machine operations on a critical path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CriticalBlock {
    pub machine: usize,
    pub ops: Vec<OpId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CriticalBlocks {
    /// Node indices from source to sink.
    pub path: Vec<usize>,
    pub blocks: Vec<CriticalBlock>,
    pub num_machines: usize,
    pub node_count: usize,
}

/// Walks back from the sink, picking uniformly among critical predecessors
/// whenever several tie, and splits the path into critical blocks.
pub fn extract_critical<R: Rng + ?Sized>(
    g: &GraphView,
    sched: &Schedule,
    rng: &mut R,
) -> CriticalBlocks {
    let mut path = vec![g.sink()];
    let mut v = g.sink();
    let mut candidates = Vec::with_capacity(2);
    while v != g.source() {
        candidates.clear();
        candidates.extend(g.in_neighbors(v).iter().copied().filter(|&u| {
            sched.est[u] + g.duration(u) == sched.est[v] && sched.est[u] == sched.lst[u]
        }));
        v = match candidates.len() {
            0 => panic!("no critical predecessor for node {v}; schedule does not match graph"),
            1 => candidates[0],
            k => candidates[rng.gen_range(0..k)],
        };
        path.push(v);
    }
    path.reverse();

    let mut blocks: Vec<CriticalBlock> = Vec::new();
    for &node in &path[1..path.len() - 1] {
        let machine = g.machine(node).expect("interior path nodes are operations");
        let op = g.op_of(node).expect("interior path nodes are operations");
        match blocks.last_mut() {
            Some(b) if b.machine == machine => b.ops.push(op),
            _ => blocks.push(CriticalBlock {
                machine,
                ops: vec![op],
            }),
        }
    }
    CriticalBlocks {
        path,
        blocks,
        num_machines: g.num_machines(),
        node_count: g.num_nodes(),
    }
}
