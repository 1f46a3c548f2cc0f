//! Exact makespan minimisation for small instances, used to establish
//! best-known values. Depth-first branch and bound over active schedules
//! (Giffler-Thompson branching), plus exhaustive enumeration of machine
//! permutations as an independent check on tiny instances.

use crate::eval::evaluate;
use crate::graph::{build_graph, Solution};
use crate::instance::{Instance, OpId, Time};
use crate::search::{run_tabu_n5, DEFAULT_TENURE};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactResult {
    pub makespan: Time,
    pub solution: Solution,
    pub nodes: u64,
}

struct Search<'a> {
    inst: &'a Instance,
    next: Vec<usize>,
    job_ready: Vec<Time>,
    machine_ready: Vec<Time>,
    job_left: Vec<Time>,
    machine_left: Vec<Time>,
    starts: Vec<Vec<Time>>,
    best: Time,
    best_starts: Option<Vec<Vec<Time>>>,
    nodes: u64,
    node_limit: u64,
}

impl Search<'_> {
    fn lower_bound(&self) -> Time {
        let jobs = (0..self.inst.num_jobs()).map(|j| self.job_ready[j] + self.job_left[j]);
        let machines = (0..self.inst.num_machines()).map(|m| {
            if self.machine_left[m] == 0 {
                return self.machine_ready[m];
            }
            // Earliest moment any unscheduled operation of `m` could start.
            let head = (0..self.inst.num_jobs())
                .filter_map(|j| {
                    let route = &self.inst.routes()[j];
                    let mut t = self.job_ready[j];
                    for task in &route[self.next[j]..] {
                        if task.machine == m {
                            return Some(t);
                        }
                        t += task.duration;
                    }
                    None
                })
                .min()
                .unwrap_or(0);
            self.machine_ready[m].max(head) + self.machine_left[m]
        });
        jobs.chain(machines).max().unwrap_or(0)
    }

    fn dfs(&mut self, scheduled: usize) -> bool {
        self.nodes += 1;
        if self.nodes > self.node_limit {
            return false;
        }
        if scheduled == self.inst.num_ops() {
            let makespan = self.job_ready.iter().copied().max().unwrap_or(0);
            if makespan < self.best {
                self.best = makespan;
                self.best_starts = Some(self.starts.clone());
            }
            return true;
        }
        if self.lower_bound() >= self.best {
            return true;
        }
        let jobs = self.inst.num_jobs();
        let head = |s: &Self, j: usize| {
            let t = s.inst.routes()[j][s.next[j]];
            let es = s.job_ready[j].max(s.machine_ready[t.machine]);
            (t, es)
        };
        let (mut star_m, mut star_ect) = (0, Time::MAX);
        for j in (0..jobs).filter(|&j| self.next[j] < self.inst.num_machines()) {
            let (t, es) = head(self, j);
            if es + t.duration < star_ect {
                star_ect = es + t.duration;
                star_m = t.machine;
            }
        }
        let mut conflict: Vec<(Time, usize)> = (0..jobs)
            .filter(|&j| self.next[j] < self.inst.num_machines())
            .filter_map(|j| {
                let (t, es) = head(self, j);
                (t.machine == star_m && es < star_ect).then_some((es, j))
            })
            .collect();
        conflict.sort();
        for (es, j) in conflict {
            let t = self.inst.routes()[j][self.next[j]];
            let saved = (self.job_ready[j], self.machine_ready[t.machine]);
            self.starts[j][self.next[j]] = es;
            self.job_ready[j] = es + t.duration;
            self.machine_ready[t.machine] = es + t.duration;
            self.job_left[j] -= t.duration;
            self.machine_left[t.machine] -= t.duration;
            self.next[j] += 1;
            let finished = self.dfs(scheduled + 1);
            self.next[j] -= 1;
            self.job_left[j] += t.duration;
            self.machine_left[t.machine] += t.duration;
            (self.job_ready[j], self.machine_ready[t.machine]) = saved;
            if !finished {
                return false;
            }
        }
        true
    }
}

fn solution_from_starts(inst: &Instance, starts: &[Vec<Time>]) -> Solution {
    let mut orders: Vec<Vec<(Time, OpId)>> = vec![Vec::new(); inst.num_machines()];
    for (j, route) in inst.routes().iter().enumerate() {
        for (i, task) in route.iter().enumerate() {
            orders[task.machine].push((starts[j][i], OpId::new(j, i)));
        }
    }
    let orders = orders
        .into_iter()
        .map(|mut o| {
            o.sort();
            o.into_iter().map(|(_, op)| op).collect()
        })
        .collect();
    Solution::new(inst, orders).expect("schedule orders form a solution")
}

/// Proven optimum, or `None` if the search exceeds `node_limit` nodes.
pub fn solve_exact(inst: &Instance, node_limit: u64) -> Option<ExactResult> {
    let start = crate::instance::initial_solution_fdd_mwkr(inst);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let warm = run_tabu_n5(inst, start, 2000, DEFAULT_TENURE, &mut rng);
    let mut machine_left = vec![0; inst.num_machines()];
    for route in inst.routes() {
        for t in route {
            machine_left[t.machine] += t.duration;
        }
    }
    let mut s = Search {
        inst,
        next: vec![0; inst.num_jobs()],
        job_ready: vec![0; inst.num_jobs()],
        machine_ready: vec![0; inst.num_machines()],
        job_left: (0..inst.num_jobs()).map(|j| inst.job_work(j)).collect(),
        machine_left,
        starts: vec![vec![0; inst.num_machines()]; inst.num_jobs()],
        best: warm.incumbent,
        best_starts: None,
        nodes: 0,
        node_limit,
    };
    if !s.dfs(0) {
        return None;
    }
    let solution = match &s.best_starts {
        Some(starts) => solution_from_starts(inst, starts),
        None => warm.incumbent_solution,
    };
    Some(ExactResult {
        makespan: s.best,
        solution,
        nodes: s.nodes,
    })
}

fn permutations(items: &[OpId]) -> Vec<Vec<OpId>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Minimum makespan over every combination of machine orders. Exponential;
/// meant for instances with a handful of operations per machine.
pub fn brute_force(inst: &Instance) -> Time {
    let per_machine: Vec<Vec<Vec<OpId>>> = inst
        .ops_on_machines()
        .iter()
        .map(|ops| permutations(ops))
        .collect();
    let mut choice = vec![0usize; per_machine.len()];
    let mut best = Time::MAX;
    loop {
        let orders = choice
            .iter()
            .zip(&per_machine)
            .map(|(&c, p)| p[c].clone())
            .collect();
        let sol = Solution::new(inst, orders).expect("permutations are valid orders");
        if let Ok(s) = evaluate(&build_graph(inst, &sol)) {
            best = best.min(s.makespan);
        }
        let mut k = 0;
        loop {
            if k == choice.len() {
                return best;
            }
            choice[k] += 1;
            if choice[k] < per_machine[k].len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
    }
}
