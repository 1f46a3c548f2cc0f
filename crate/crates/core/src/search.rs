//! Classical improvement rules over the N5 neighbourhood: greedy descent,
//! best and first improvement with restarts from recently visited
//! solutions, and a tabu search.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::eval::{batch_evaluate, evaluate, extract_critical, Schedule};
use crate::graph::{apply_move, build_graph, GraphView, Move, Solution};
use crate::instance::{Instance, OpId, Time};
use crate::n5::{enumerate_moves, MoveSet};

pub const DEFAULT_MEMORY: usize = 100;
pub const DEFAULT_TENURE: (usize, usize) = (5, 15);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub current_makespan: Time,
    pub incumbent: Time,
    pub restarted: bool,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub initial_makespan: Time,
    pub incumbent: Time,
    pub incumbent_solution: Solution,
    pub trace: Vec<TraceRow>,
}

/// The `capacity` most recently evaluated solutions.
#[derive(Debug, Clone)]
pub struct RestartMemory {
    capacity: usize,
    items: VecDeque<Solution>,
}

impl RestartMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "restart memory needs room for one solution");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, sol: Solution) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(sol);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, sol: &Solution) -> bool {
        self.items.contains(sol)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &Solution {
        &self.items[rng.gen_range(0..self.items.len())]
    }
}

struct Current {
    solution: Solution,
    schedule: Schedule,
    moves: MoveSet,
}

impl Current {
    fn new<R: Rng + ?Sized>(inst: &Instance, solution: Solution, rng: &mut R) -> Self {
        let g = build_graph(inst, &solution);
        let schedule = evaluate(&g).expect("search only visits acyclic solutions");
        Self::with_schedule(&g, solution, schedule, rng)
    }

    fn with_schedule<R: Rng + ?Sized>(
        g: &GraphView,
        solution: Solution,
        schedule: Schedule,
        rng: &mut R,
    ) -> Self {
        let moves = enumerate_moves(&extract_critical(g, &schedule, rng));
        Self {
            solution,
            schedule,
            moves,
        }
    }

    fn makespan(&self) -> Time {
        self.schedule.makespan
    }
}

struct Tracker {
    initial: Time,
    incumbent: Time,
    incumbent_solution: Solution,
    trace: Vec<TraceRow>,
}

impl Tracker {
    fn new(start: &Current) -> Self {
        Self {
            initial: start.makespan(),
            incumbent: start.makespan(),
            incumbent_solution: start.solution.clone(),
            trace: Vec::new(),
        }
    }

    fn record(&mut self, cur: &Current, restarted: bool) {
        if cur.makespan() < self.incumbent {
            self.incumbent = cur.makespan();
            self.incumbent_solution = cur.solution.clone();
        }
        self.trace.push(TraceRow {
            step: self.trace.len() + 1,
            current_makespan: cur.makespan(),
            incumbent: self.incumbent,
            restarted,
        });
    }

    fn finish(self) -> SearchResult {
        SearchResult {
            initial_makespan: self.initial,
            incumbent: self.incumbent,
            incumbent_solution: self.incumbent_solution,
            trace: self.trace,
        }
    }
}

/// All neighbours of `cur` with their graphs and schedules, in move order.
fn neighbours(inst: &Instance, cur: &Current) -> Vec<(Solution, GraphView, Schedule)> {
    let sols: Vec<Solution> = cur
        .moves
        .moves
        .iter()
        .map(|&mv| apply_move(&cur.solution, mv).expect("enumerated moves are valid"))
        .collect();
    let graphs: Vec<GraphView> = sols.iter().map(|s| build_graph(inst, s)).collect();
    let schedules = batch_evaluate(&graphs).expect("N5 moves keep solutions acyclic");
    sols.into_iter()
        .zip(graphs)
        .zip(schedules)
        .map(|((s, g), c)| (s, g, c))
        .collect()
}

/// Index of the smallest makespan among `candidates`; ties to the first.
fn argmin(candidates: impl Iterator<Item = (usize, Time)>) -> Option<(usize, Time)> {
    candidates.fold(None, |best, (i, m)| match best {
        Some((_, bm)) if bm <= m => best,
        _ => Some((i, m)),
    })
}

/// Moves to the best neighbour at every step, improving or not. Stops
/// early in an absorbing state.
pub fn run_greedy<R: Rng + ?Sized>(
    inst: &Instance,
    start: Solution,
    steps: usize,
    rng: &mut R,
) -> SearchResult {
    let mut cur = Current::new(inst, start, rng);
    let mut tracker = Tracker::new(&cur);
    for _ in 0..steps {
        if cur.moves.is_empty() {
            break;
        }
        let mut nbrs = neighbours(inst, &cur);
        let (i, _) =
            argmin(nbrs.iter().map(|n| n.2.makespan).enumerate()).expect("non-empty neighbourhood");
        let (sol, g, sched) = nbrs.swap_remove(i);
        cur = Current::with_schedule(&g, sol, sched, rng);
        tracker.record(&cur, false);
    }
    tracker.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Acceptance {
    Best,
    First,
}

fn run_with_restarts<R: Rng + ?Sized>(
    inst: &Instance,
    start: Solution,
    steps: usize,
    memory: usize,
    rule: Acceptance,
    rng: &mut R,
) -> SearchResult {
    let mut cur = Current::new(inst, start, rng);
    let mut tracker = Tracker::new(&cur);
    let mut omega = RestartMemory::new(memory);
    omega.push(cur.solution.clone());
    for _ in 0..steps {
        let mut nbrs = neighbours(inst, &cur);
        for n in &nbrs {
            omega.push(n.0.clone());
        }
        let makespans = nbrs.iter().map(|n| n.2.makespan).enumerate();
        let pick = match rule {
            Acceptance::Best => argmin(makespans),
            Acceptance::First => makespans.into_iter().find(|&(_, m)| m < cur.makespan()),
        };
        let improving = pick
            .filter(|&(_, m)| m < cur.makespan())
            .map(|(i, _)| nbrs.swap_remove(i));
        let restarted = improving.is_none();
        cur = match improving {
            Some((sol, g, sched)) => Current::with_schedule(&g, sol, sched, rng),
            None => {
                let from = omega.sample(rng).clone();
                Current::new(inst, from, rng)
            }
        };
        tracker.record(&cur, restarted);
    }
    tracker.finish()
}

/// Moves to the best strictly improving neighbour; with none, restarts from
/// a uniformly drawn member of the last `memory` evaluated solutions.
pub fn run_best_improvement<R: Rng + ?Sized>(
    inst: &Instance,
    start: Solution,
    steps: usize,
    memory: usize,
    rng: &mut R,
) -> SearchResult {
    run_with_restarts(inst, start, steps, memory, Acceptance::Best, rng)
}

/// Like [`run_best_improvement`] but accepts the first improving neighbour
/// in enumeration order.
pub fn run_first_improvement<R: Rng + ?Sized>(
    inst: &Instance,
    start: Solution,
    steps: usize,
    memory: usize,
    rng: &mut R,
) -> SearchResult {
    run_with_restarts(inst, start, steps, memory, Acceptance::First, rng)
}

/// Forbidden moves, keyed by `(machine, first, second)`, with the step at
/// which each expires.
#[derive(Debug, Clone, Default)]
pub struct TabuList {
    expiry: HashMap<(usize, OpId, OpId), usize>,
}

impl TabuList {
    pub fn forbid(&mut self, mv: Move, until: usize) {
        self.expiry.insert((mv.machine, mv.first, mv.second), until);
    }

    pub fn is_tabu(&self, mv: Move, step: usize) -> bool {
        self.expiry
            .get(&(mv.machine, mv.first, mv.second))
            .is_some_and(|&e| step < e)
    }

    pub fn purge(&mut self, step: usize) {
        self.expiry.retain(|_, &mut e| step < e);
    }

    pub fn len(&self) -> usize {
        self.expiry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.expiry.is_empty()
    }
}

/// Index of the best admissible neighbour: non-tabu, or tabu but better
/// than `incumbent`. With none admissible, the best neighbour overall.
pub fn select_tabu(
    moves: &[Move],
    makespans: &[Time],
    tabu: &TabuList,
    step: usize,
    incumbent: Time,
) -> usize {
    let allowed = moves
        .iter()
        .zip(makespans)
        .enumerate()
        .filter(|(_, (&mv, &m))| !tabu.is_tabu(mv, step) || m < incumbent)
        .map(|(i, (_, &m))| (i, m));
    argmin(allowed)
        .or_else(|| argmin(makespans.iter().copied().enumerate()))
        .expect("non-empty neighbourhood")
        .0
}

/// Tabu search: moves to the best non-tabu neighbour, where a tabu move is
/// allowed if it beats the incumbent. After each move its reversal is tabu
/// for a tenure drawn uniformly from `tenure` (inclusive). When every
/// neighbour is tabu, the best one is taken anyway. Stops in an absorbing
/// state.
pub fn run_tabu_n5<R: Rng + ?Sized>(
    inst: &Instance,
    start: Solution,
    steps: usize,
    tenure: (usize, usize),
    rng: &mut R,
) -> SearchResult {
    assert!(tenure.0 <= tenure.1, "empty tenure range");
    let mut cur = Current::new(inst, start, rng);
    let mut tracker = Tracker::new(&cur);
    let mut tabu = TabuList::default();
    for step in 0..steps {
        tabu.purge(step);
        if cur.moves.is_empty() {
            break;
        }
        let mut nbrs = neighbours(inst, &cur);
        let makespans: Vec<Time> = nbrs.iter().map(|n| n.2.makespan).collect();
        let i = select_tabu(&cur.moves.moves, &makespans, &tabu, step, tracker.incumbent);
        let mv = cur.moves.moves[i];
        tabu.forbid(mv.reversed(), step + 1 + rng.gen_range(tenure.0..=tenure.1));
        let (sol, g, sched) = nbrs.swap_remove(i);
        cur = Current::with_schedule(&g, sol, sched, rng);
        tracker.record(&cur, false);
    }
    tracker.finish()
}
