//! Complete solutions as machine permutations and the directed disjunctive
//! graph they induce.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{Instance, OpId, Time};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("solution has {found} machine orders, instance has {expected} machines")]
    MachineCount { expected: usize, found: usize },
    #[error("machine {machine} order does not match the operations routed to it")]
    WrongOperations { machine: usize },
    #[error("operations {first} and {second} are not adjacent on machine {machine}")]
    NotAdjacent {
        machine: usize,
        first: OpId,
        second: OpId,
    },
    #[error("malformed operation token '{0}'")]
    BadToken(String),
}

/// One machine-order per machine. Together with an [`Instance`] this fixes
/// the orientation of every disjunction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Solution {
    orders: Vec<Vec<OpId>>,
}

/// Transposition of two operations that are adjacent on `machine`,
/// `first` currently immediately before `second`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Move {
    pub machine: usize,
    pub first: OpId,
    pub second: OpId,
}

impl Move {
    /// The move that undoes this one once applied.
    pub fn reversed(self) -> Move {
        Move {
            machine: self.machine,
            first: self.second,
            second: self.first,
        }
    }
}

impl Solution {
    /// Validates that every machine order is a permutation of the
    /// operations routed to that machine. Acyclicity is not checked here.
    pub fn new(inst: &Instance, orders: Vec<Vec<OpId>>) -> Result<Self, GraphError> {
        if orders.len() != inst.num_machines() {
            return Err(GraphError::MachineCount {
                expected: inst.num_machines(),
                found: orders.len(),
            });
        }
        let expected = inst.ops_on_machines();
        for (machine, (order, want)) in orders.iter().zip(&expected).enumerate() {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if &sorted != want {
                return Err(GraphError::WrongOperations { machine });
            }
        }
        Ok(Self { orders })
    }

    pub(crate) fn from_orders_unchecked(orders: Vec<Vec<OpId>>) -> Self {
        Self { orders }
    }

    pub fn machine_orders(&self) -> &[Vec<OpId>] {
        &self.orders
    }

    /// Swaps an adjacent pair in place.
    pub fn apply_move_in_place(&mut self, mv: Move) -> Result<(), GraphError> {
        let err = GraphError::NotAdjacent {
            machine: mv.machine,
            first: mv.first,
            second: mv.second,
        };
        let order = self.orders.get_mut(mv.machine).ok_or(err.clone())?;
        let idx = order
            .iter()
            .position(|&o| o == mv.first)
            .ok_or(err.clone())?;
        if order.get(idx + 1) != Some(&mv.second) {
            return Err(err);
        }
        order.swap(idx, idx + 1);
        Ok(())
    }

    /// One line per machine of space-separated `job.pos` tokens.
    pub fn to_lines(&self) -> Vec<String> {
        self.orders
            .iter()
            .map(|order| {
                order
                    .iter()
                    .map(|op| op.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    }

    pub fn from_lines<S: AsRef<str>>(inst: &Instance, lines: &[S]) -> Result<Self, GraphError> {
        let orders = lines
            .iter()
            .map(|line| {
                line.as_ref()
                    .split_whitespace()
                    .map(|tok| {
                        let bad = || GraphError::BadToken(tok.to_string());
                        let (j, p) = tok.split_once('.').ok_or_else(bad)?;
                        Ok(OpId::new(
                            j.parse().map_err(|_| bad())?,
                            p.parse().map_err(|_| bad())?,
                        ))
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(inst, orders)
    }
}

/// Returns a new solution with the pair transposed. On the graph this
/// reverses `first -> second` and reconnects the machine predecessor of
/// `first` and the machine successor of `second`.
pub fn apply_move(sol: &Solution, mv: Move) -> Result<Solution, GraphError> {
    let mut next = sol.clone();
    next.apply_move_in_place(mv)?;
    Ok(next)
}

/// Arc type. Arcs from the source and into the sink count as conjunctive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArcKind {
    Conjunctive,
    Disjunctive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Arc {
    pub from: usize,
    pub to: usize,
    pub kind: ArcKind,
}

/// Directed disjunctive graph with adjacency in compressed form. Arc weight
/// is the processing time of the arc's tail, so only node durations are
/// stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphView {
    num_machines: usize,
    durations: Vec<Time>,
    machines: Vec<Option<usize>>,
    arcs: Vec<Arc>,
    in_offsets: Vec<usize>,
    in_nodes: Vec<usize>,
    out_offsets: Vec<usize>,
    out_nodes: Vec<usize>,
}

fn compress(
    n: usize,
    pairs: impl Iterator<Item = (usize, usize)> + Clone,
) -> (Vec<usize>, Vec<usize>) {
    let mut offsets = vec![0usize; n + 1];
    for (key, _) in pairs.clone() {
        offsets[key + 1] += 1;
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    let mut fill = offsets.clone();
    let mut nodes = vec![0usize; offsets[n]];
    for (key, val) in pairs {
        nodes[fill[key]] = val;
        fill[key] += 1;
    }
    (offsets, nodes)
}

impl GraphView {
    fn from_parts(
        num_machines: usize,
        durations: Vec<Time>,
        machines: Vec<Option<usize>>,
        arcs: Vec<Arc>,
    ) -> Self {
        let n = durations.len();
        let (in_offsets, in_nodes) = compress(n, arcs.iter().map(|a| (a.to, a.from)));
        let (out_offsets, out_nodes) = compress(n, arcs.iter().map(|a| (a.from, a.to)));
        Self {
            num_machines,
            durations,
            machines,
            arcs,
            in_offsets,
            in_nodes,
            out_offsets,
            out_nodes,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.durations.len()
    }

    pub fn num_ops(&self) -> usize {
        self.durations.len() - 2
    }

    pub fn num_machines(&self) -> usize {
        self.num_machines
    }

    pub fn source(&self) -> usize {
        self.num_ops()
    }

    pub fn sink(&self) -> usize {
        self.num_ops() + 1
    }

    pub fn durations(&self) -> &[Time] {
        &self.durations
    }

    #[inline]
    pub fn duration(&self, node: usize) -> Time {
        self.durations[node]
    }

    /// Machine of a node, `None` for the dummies.
    pub fn machine(&self, node: usize) -> Option<usize> {
        self.machines[node]
    }

    pub fn op_of(&self, node: usize) -> Option<OpId> {
        (node < self.num_ops())
            .then(|| OpId::new(node / self.num_machines, node % self.num_machines))
    }

    pub fn node_of(&self, op: OpId) -> usize {
        op.node(self.num_machines)
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    #[inline]
    pub fn in_neighbors(&self, node: usize) -> &[usize] {
        &self.in_nodes[self.in_offsets[node]..self.in_offsets[node + 1]]
    }

    #[inline]
    pub fn out_neighbors(&self, node: usize) -> &[usize] {
        &self.out_nodes[self.out_offsets[node]..self.out_offsets[node + 1]]
    }

    pub fn has_arc(&self, from: usize, to: usize) -> bool {
        self.out_neighbors(from).contains(&to)
    }

    /// Subgraph with the same nodes and only the arcs of `kind`.
    pub fn filtered(&self, kind: ArcKind) -> GraphView {
        let arcs = self
            .arcs
            .iter()
            .copied()
            .filter(|a| a.kind == kind)
            .collect();
        Self::from_parts(
            self.num_machines,
            self.durations.clone(),
            self.machines.clone(),
            arcs,
        )
    }

    /// Kahn order, `None` when the graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.num_nodes();
        let mut indeg: Vec<usize> = (0..n).map(|v| self.in_neighbors(v).len()).collect();
        let mut order: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut head = 0;
        while head < order.len() {
            let u = order[head];
            head += 1;
            for &w in self.out_neighbors(u) {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    order.push(w);
                }
            }
        }
        (order.len() == n).then_some(order)
    }
}

/// Builds the oriented disjunctive graph: source arcs, job (conjunctive)
/// arcs, machine arcs between consecutive operations of each machine order,
/// then sink arcs.
pub fn build_graph(inst: &Instance, sol: &Solution) -> GraphView {
    let m = inst.num_machines();
    let (source, sink) = (inst.source(), inst.sink());
    let mut arcs = Vec::with_capacity(2 * inst.num_ops() + inst.num_jobs());
    let conj = |from, to| Arc {
        from,
        to,
        kind: ArcKind::Conjunctive,
    };
    for job in 0..inst.num_jobs() {
        arcs.push(conj(source, job * m));
    }
    for job in 0..inst.num_jobs() {
        for pos in 1..m {
            arcs.push(conj(job * m + pos - 1, job * m + pos));
        }
    }
    for order in sol.machine_orders() {
        for pair in order.windows(2) {
            arcs.push(Arc {
                from: pair[0].node(m),
                to: pair[1].node(m),
                kind: ArcKind::Disjunctive,
            });
        }
    }
    for job in 0..inst.num_jobs() {
        if m > 0 {
            arcs.push(conj(job * m + m - 1, sink));
        }
    }
    if inst.num_ops() == 0 {
        arcs.push(conj(source, sink));
    }
    let mut machines: Vec<Option<usize>> = inst
        .routes()
        .iter()
        .flat_map(|r| r.iter().map(|t| Some(t.machine)))
        .collect();
    machines.extend([None, None]);
    GraphView::from_parts(m, inst.node_durations(), machines, arcs)
}

pub fn is_acyclic(g: &GraphView) -> bool {
    g.topological_order().is_some()
}

/// Splits `g` into the job-context graph (conjunctive and dummy arcs) and
/// the machine-context graph (directed disjunctive arcs only).
pub fn context_subgraphs(g: &GraphView) -> (GraphView, GraphView) {
    (
        g.filtered(ArcKind::Conjunctive),
        g.filtered(ArcKind::Disjunctive),
    )
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::instance::{generate_taillard, initial_solution_fdd_mwkr};
    use std::collections::HashSet;

    pub(crate) fn d1() -> Instance {
        Instance::from_pairs(2, &[&[(0, 2), (1, 3)], &[(1, 2), (0, 4)]]).unwrap()
    }

    fn op(j: usize, p: usize) -> OpId {
        OpId::new(j, p)
    }

    /// Solution A of D1: M0 [O11, O22], M1 [O21, O12] (1-based in the names).
    pub(crate) fn d1_solution_a(inst: &Instance) -> Solution {
        Solution::new(
            inst,
            vec![vec![op(0, 0), op(1, 1)], vec![op(1, 0), op(0, 1)]],
        )
        .unwrap()
    }

    pub(crate) fn d2() -> (Instance, Solution) {
        let inst = Instance::from_pairs(
            2,
            &[&[(0, 3), (1, 1)], &[(0, 2), (1, 3)], &[(0, 1), (1, 2)]],
        )
        .unwrap();
        let sol = Solution::new(
            &inst,
            vec![
                vec![op(0, 0), op(1, 0), op(2, 0)],
                vec![op(0, 1), op(1, 1), op(2, 1)],
            ],
        )
        .unwrap();
        (inst, sol)
    }

    #[test]
    fn d1_arcs() {
        let inst = d1();
        let g = build_graph(&inst, &d1_solution_a(&inst));
        let n = |j, p| op(j, p).node(2);
        assert!(g.has_arc(n(0, 0), n(0, 1)));
        assert!(g.has_arc(n(0, 0), n(1, 1)));
        assert!(g.has_arc(n(1, 0), n(1, 1)));
        assert!(g.has_arc(n(1, 0), n(0, 1)));
        assert!(g.has_arc(g.source(), n(0, 0)));
        assert!(g.has_arc(g.source(), n(1, 0)));
        assert!(g.has_arc(n(0, 1), g.sink()));
        assert!(g.has_arc(n(1, 1), g.sink()));
        assert_eq!(g.arcs().len(), 2 * 4 + 2 - 2);
        assert!(is_acyclic(&g));
    }

    #[test]
    fn single_op_graph() {
        let inst = Instance::from_pairs(1, &[&[(0, 5)]]).unwrap();
        let sol = initial_solution_fdd_mwkr(&inst);
        let g = build_graph(&inst, &sol);
        assert_eq!(g.arcs().len(), 2);
        assert_eq!(g.out_neighbors(g.source()), &[0]);
        assert_eq!(g.out_neighbors(0), &[g.sink()]);
        let (_, gm) = context_subgraphs(&g);
        assert!(gm.arcs().is_empty());
    }

    #[test]
    fn empty_graph_is_acyclic() {
        let inst = Instance::new(0, vec![]).unwrap();
        let sol = Solution::new(&inst, vec![]).unwrap();
        let g = build_graph(&inst, &sol);
        assert_eq!(g.num_nodes(), 2);
        assert!(g.has_arc(g.source(), g.sink()));
        assert!(is_acyclic(&g));
    }

    #[test]
    fn reversed_d1_orientation_is_cyclic() {
        let inst = d1();
        let sol = Solution::new(
            &inst,
            vec![vec![op(1, 1), op(0, 0)], vec![op(0, 1), op(1, 0)]],
        )
        .unwrap();
        assert!(!is_acyclic(&build_graph(&inst, &sol)));
    }

    #[test]
    fn solution_validation() {
        let inst = d1();
        assert_eq!(
            Solution::new(&inst, vec![vec![op(0, 0), op(1, 1)]]),
            Err(GraphError::MachineCount {
                expected: 2,
                found: 1
            })
        );
        assert_eq!(
            Solution::new(
                &inst,
                vec![vec![op(0, 0), op(0, 1)], vec![op(1, 0), op(1, 1)]]
            ),
            Err(GraphError::WrongOperations { machine: 0 })
        );
    }

    #[test]
    fn apply_move_transposes_and_is_involution() {
        let (_, sol) = d2();
        let mv = Move {
            machine: 0,
            first: op(0, 0),
            second: op(1, 0),
        };
        let next = apply_move(&sol, mv).unwrap();
        assert_eq!(next.machine_orders()[0], vec![op(1, 0), op(0, 0), op(2, 0)]);
        assert_eq!(next.machine_orders()[1], sol.machine_orders()[1]);
        assert_eq!(apply_move(&next, mv.reversed()).unwrap(), sol);
    }

    #[test]
    fn apply_move_rejects_non_adjacent() {
        let (_, sol) = d2();
        let mv = Move {
            machine: 0,
            first: op(0, 0),
            second: op(2, 0),
        };
        assert!(matches!(
            apply_move(&sol, mv),
            Err(GraphError::NotAdjacent { .. })
        ));
        let wrong_order = Move {
            machine: 0,
            first: op(1, 0),
            second: op(0, 0),
        };
        assert!(apply_move(&sol, wrong_order).is_err());
    }

    #[test]
    fn apply_move_rewires_neighbours() {
        // O1 -> O2 -> O3 -> O4 on one machine; swapping (O2, O3) must yield
        // O1 -> O3 -> O2 -> O4.
        let inst = Instance::from_pairs(1, &[&[(0, 1)], &[(0, 1)], &[(0, 1)], &[(0, 1)]]).unwrap();
        let sol = Solution::new(&inst, vec![vec![op(0, 0), op(1, 0), op(2, 0), op(3, 0)]]).unwrap();
        let next = apply_move(
            &sol,
            Move {
                machine: 0,
                first: op(1, 0),
                second: op(2, 0),
            },
        )
        .unwrap();
        let g = build_graph(&inst, &next);
        assert!(g.has_arc(0, 2) && g.has_arc(2, 1) && g.has_arc(1, 3));
        assert!(!g.has_arc(0, 1) && !g.has_arc(1, 2) && !g.has_arc(2, 3));
    }

    #[test]
    fn context_subgraphs_partition_arcs() {
        let inst = d1();
        let g = build_graph(&inst, &d1_solution_a(&inst));
        let (_, gm) = context_subgraphs(&g);
        let gm_arcs: HashSet<(usize, usize)> = gm.arcs().iter().map(|a| (a.from, a.to)).collect();
        assert_eq!(gm_arcs, HashSet::from([(0, 3), (2, 1)]));
        assert!(gm.in_neighbors(g.source()).is_empty() && gm.out_neighbors(g.source()).is_empty());
        assert!(gm.in_neighbors(g.sink()).is_empty());

        let big = generate_taillard(5, 4, 9);
        let g = build_graph(&big, &initial_solution_fdd_mwkr(&big));
        let (gj, gm) = context_subgraphs(&g);
        let all: HashSet<Arc> = g.arcs().iter().copied().collect();
        let j: HashSet<Arc> = gj.arcs().iter().copied().collect();
        let m: HashSet<Arc> = gm.arcs().iter().copied().collect();
        assert!(j.is_disjoint(&m));
        assert_eq!(&j | &m, all);
        assert_eq!(gj.num_nodes(), g.num_nodes());
        assert_eq!(g.arcs().len(), 2 * 20 + 5 - 4);
    }

    #[test]
    fn solution_lines_round_trip() {
        let inst = d1();
        let sol = d1_solution_a(&inst);
        let lines = sol.to_lines();
        assert_eq!(lines, vec!["0.0 1.1".to_string(), "1.0 0.1".to_string()]);
        assert_eq!(Solution::from_lines(&inst, &lines).unwrap(), sol);
        assert!(Solution::from_lines(&inst, &["0-0 1.1", "1.0 0.1"]).is_err());
    }
}
