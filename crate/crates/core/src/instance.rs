//! Problem instances: parsing, serialization, random generation and the
//! FDD/MWKR dispatching rule used to build starting solutions.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Solution;

/// Integral time unit shared by the whole crate.
pub type Time = i64;

/// Largest processing time drawn by [`generate_taillard`].
pub const MAX_GENERATED_TIME: Time = 99;

/// One step of a job route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Task {
    pub machine: usize,
    pub duration: Time,
}

/// A real (non-dummy) operation: the `pos`-th step of job `job`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OpId {
    pub job: usize,
    pub pos: usize,
}

impl OpId {
    pub fn new(job: usize, pos: usize) -> Self {
        Self { job, pos }
    }

    /// Row-major node index for an instance with `num_machines` machines.
    #[inline]
    pub fn node(self, num_machines: usize) -> usize {
        self.job * num_machines + self.pos
    }
}

impl std::fmt::Display for OpId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}", self.job, self.pos)
    }
}

/// Any node of the disjunctive graph, including the two dummies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    Source,
    Sink,
    Op(OpId),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("missing 'J M' header")]
    MissingHeader,
    #[error("line {line}: malformed token '{token}'")]
    MalformedToken { line: usize, token: String },
    #[error("line {line}: expected {expected} values, found {found}")]
    WrongCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: machine {machine} out of range (instance has {machines} machines)")]
    MachineOutOfRange {
        line: usize,
        machine: i64,
        machines: usize,
    },
    #[error("line {line}: duplicate machine {machine} in job {job}")]
    DuplicateMachine {
        line: usize,
        machine: usize,
        job: usize,
    },
    #[error("line {line}: negative processing time {value}")]
    NegativeTime { line: usize, value: i64 },
    #[error("line {line}: machine row is not a permutation")]
    NotPermutation { line: usize },
    #[error("expected {expected} rows, found {found}")]
    MissingRows { expected: usize, found: usize },
    #[error("line {line}: unexpected trailing content")]
    TrailingContent { line: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InstanceError {
    #[error("job {job} has {len} operations, expected {expected}")]
    RouteLength {
        job: usize,
        len: usize,
        expected: usize,
    },
    #[error("job {job} route is not a permutation of the machines")]
    NotPermutation { job: usize },
    #[error("job {job} has a negative processing time")]
    NegativeTime { job: usize },
}

/// Static job-shop problem: every job visits every machine exactly once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    num_jobs: usize,
    num_machines: usize,
    routes: Vec<Vec<Task>>,
}

impl Instance {
    pub fn new(num_machines: usize, routes: Vec<Vec<Task>>) -> Result<Self, InstanceError> {
        for (job, route) in routes.iter().enumerate() {
            if route.len() != num_machines {
                return Err(InstanceError::RouteLength {
                    job,
                    len: route.len(),
                    expected: num_machines,
                });
            }
            let mut seen = vec![false; num_machines];
            for task in route {
                if task.machine >= num_machines || seen[task.machine] {
                    return Err(InstanceError::NotPermutation { job });
                }
                seen[task.machine] = true;
                if task.duration < 0 {
                    return Err(InstanceError::NegativeTime { job });
                }
            }
        }
        Ok(Self {
            num_jobs: routes.len(),
            num_machines,
            routes,
        })
    }

    /// Convenience constructor from `(machine, duration)` pairs.
    pub fn from_pairs(
        num_machines: usize,
        jobs: &[&[(usize, Time)]],
    ) -> Result<Self, InstanceError> {
        let routes = jobs
            .iter()
            .map(|r| {
                r.iter()
                    .map(|&(machine, duration)| Task { machine, duration })
                    .collect()
            })
            .collect();
        Self::new(num_machines, routes)
    }

    pub fn num_jobs(&self) -> usize {
        self.num_jobs
    }

    pub fn num_machines(&self) -> usize {
        self.num_machines
    }

    pub fn num_ops(&self) -> usize {
        self.num_jobs * self.num_machines
    }

    /// Operations plus the two dummies.
    pub fn num_nodes(&self) -> usize {
        self.num_ops() + 2
    }

    pub fn source(&self) -> usize {
        self.num_ops()
    }

    pub fn sink(&self) -> usize {
        self.num_ops() + 1
    }

    pub fn routes(&self) -> &[Vec<Task>] {
        &self.routes
    }

    pub fn task(&self, op: OpId) -> Task {
        self.routes[op.job][op.pos]
    }

    pub fn duration(&self, op: OpId) -> Time {
        self.task(op).duration
    }

    pub fn machine(&self, op: OpId) -> usize {
        self.task(op).machine
    }

    pub fn node_of(&self, op: OpId) -> usize {
        op.node(self.num_machines)
    }

    pub fn node_kind(&self, node: usize) -> Node {
        if node == self.source() {
            Node::Source
        } else if node == self.sink() {
            Node::Sink
        } else {
            Node::Op(OpId::new(
                node / self.num_machines,
                node % self.num_machines,
            ))
        }
    }

    pub fn op_of(&self, node: usize) -> Option<OpId> {
        match self.node_kind(node) {
            Node::Op(op) => Some(op),
            _ => None,
        }
    }

    /// Processing time per node in node order; dummies carry 0.
    pub fn node_durations(&self) -> Vec<Time> {
        let mut out: Vec<Time> = self
            .routes
            .iter()
            .flat_map(|r| r.iter().map(|t| t.duration))
            .collect();
        out.extend([0, 0]);
        out
    }

    pub fn job_work(&self, job: usize) -> Time {
        self.routes[job].iter().map(|t| t.duration).sum()
    }

    pub fn total_work(&self) -> Time {
        (0..self.num_jobs).map(|j| self.job_work(j)).sum()
    }

    /// Operations routed to each machine, in (job, pos) order.
    pub fn ops_on_machines(&self) -> Vec<Vec<OpId>> {
        let mut out = vec![Vec::with_capacity(self.num_jobs); self.num_machines];
        for (job, route) in self.routes.iter().enumerate() {
            for (pos, task) in route.iter().enumerate() {
                out[task.machine].push(OpId::new(job, pos));
            }
        }
        out
    }

    /// Cumulative route work up to and including `op`.
    pub fn flow_due_date(&self, op: OpId) -> Time {
        self.routes[op.job][..=op.pos]
            .iter()
            .map(|t| t.duration)
            .sum()
    }

    /// Route work remaining from `op` onwards, `op` included.
    pub fn most_work_remaining(&self, op: OpId) -> Time {
        self.routes[op.job][op.pos..]
            .iter()
            .map(|t| t.duration)
            .sum()
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            None
        } else {
            Some((i + 1, line))
        }
    })
}

fn parse_ints(line_no: usize, line: &str) -> Result<Vec<i64>, ParseError> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<i64>().map_err(|_| ParseError::MalformedToken {
                line: line_no,
                token: tok.to_string(),
            })
        })
        .collect()
}

fn parse_header(line_no: usize, line: &str) -> Result<(usize, usize), ParseError> {
    let vals = parse_ints(line_no, line)?;
    if vals.len() < 2 {
        return Err(ParseError::WrongCount {
            line: line_no,
            expected: 2,
            found: vals.len(),
        });
    }
    let conv = |v: i64| {
        usize::try_from(v).map_err(|_| ParseError::MalformedToken {
            line: line_no,
            token: v.to_string(),
        })
    };
    Ok((conv(vals[0])?, conv(vals[1])?))
}

/// Parses the OR-Library "standard" layout: a `J M` header followed by one
/// line per job holding `machine time` pairs with 0-based machines.
pub fn parse_standard(text: &str) -> Result<Instance, ParseError> {
    let mut lines = content_lines(text);
    let (header_line, header) = lines.next().ok_or(ParseError::MissingHeader)?;
    let (jobs, machines) = parse_header(header_line, header)?;
    let mut routes = Vec::with_capacity(jobs);
    for job in 0..jobs {
        let (line_no, line) = lines.next().ok_or(ParseError::MissingRows {
            expected: jobs,
            found: job,
        })?;
        let vals = parse_ints(line_no, line)?;
        if vals.len() != 2 * machines {
            return Err(ParseError::WrongCount {
                line: line_no,
                expected: 2 * machines,
                found: vals.len(),
            });
        }
        let mut seen = vec![false; machines];
        let mut route = Vec::with_capacity(machines);
        for pair in vals.chunks_exact(2) {
            let (m, p) = (pair[0], pair[1]);
            if m < 0 || m as usize >= machines {
                return Err(ParseError::MachineOutOfRange {
                    line: line_no,
                    machine: m,
                    machines,
                });
            }
            let m = m as usize;
            if seen[m] {
                return Err(ParseError::DuplicateMachine {
                    line: line_no,
                    machine: m,
                    job,
                });
            }
            seen[m] = true;
            if p < 0 {
                return Err(ParseError::NegativeTime {
                    line: line_no,
                    value: p,
                });
            }
            route.push(Task {
                machine: m,
                duration: p,
            });
        }
        routes.push(route);
    }
    if let Some((line_no, _)) = lines.next() {
        return Err(ParseError::TrailingContent { line: line_no });
    }
    Ok(Instance {
        num_jobs: jobs,
        num_machines: machines,
        routes,
    })
}

/// Parses the Taillard layout: `J M` header (extra header fields such as
/// seeds and bounds are ignored), a `J x M` matrix of processing times and a
/// `J x M` matrix of 1-based machine indices. Optional `Times`/`Machines`
/// label lines are skipped.
pub fn parse_taillard(text: &str) -> Result<Instance, ParseError> {
    let mut lines = content_lines(text).filter(|(_, l)| {
        let lower = l.to_ascii_lowercase();
        !(lower.starts_with("times") || lower.starts_with("machines") || lower.starts_with("nb of"))
    });
    let (header_line, header) = lines.next().ok_or(ParseError::MissingHeader)?;
    let (jobs, machines) = parse_header(header_line, header)?;

    let mut read_matrix = |found_before: usize| -> Result<Vec<(usize, Vec<i64>)>, ParseError> {
        let mut rows = Vec::with_capacity(jobs);
        for j in 0..jobs {
            let (line_no, line) = lines.next().ok_or(ParseError::MissingRows {
                expected: 2 * jobs,
                found: found_before + j,
            })?;
            let vals = parse_ints(line_no, line)?;
            if vals.len() != machines {
                return Err(ParseError::WrongCount {
                    line: line_no,
                    expected: machines,
                    found: vals.len(),
                });
            }
            rows.push((line_no, vals));
        }
        Ok(rows)
    };
    let times = read_matrix(0)?;
    let orders = read_matrix(jobs)?;
    if let Some((line_no, _)) = lines.next() {
        return Err(ParseError::TrailingContent { line: line_no });
    }

    let mut routes = Vec::with_capacity(jobs);
    for ((t_line, t_row), (m_line, m_row)) in times.into_iter().zip(orders) {
        let mut seen = vec![false; machines];
        let mut route = Vec::with_capacity(machines);
        for (&p, &m) in t_row.iter().zip(&m_row) {
            if m < 1 || m as usize > machines || seen[(m - 1) as usize] {
                return Err(ParseError::NotPermutation { line: m_line });
            }
            seen[(m - 1) as usize] = true;
            if p < 0 {
                return Err(ParseError::NegativeTime {
                    line: t_line,
                    value: p,
                });
            }
            route.push(Task {
                machine: (m - 1) as usize,
                duration: p,
            });
        }
        routes.push(route);
    }
    Ok(Instance {
        num_jobs: jobs,
        num_machines: machines,
        routes,
    })
}

pub fn serialize_standard(inst: &Instance) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", inst.num_jobs, inst.num_machines);
    for route in &inst.routes {
        let line: Vec<String> = route
            .iter()
            .map(|t| format!("{} {}", t.machine, t.duration))
            .collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn serialize_taillard(inst: &Instance) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", inst.num_jobs, inst.num_machines);
    for route in &inst.routes {
        let row: Vec<String> = route.iter().map(|t| t.duration.to_string()).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    for route in &inst.routes {
        let row: Vec<String> = route.iter().map(|t| (t.machine + 1).to_string()).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

/// Random instance following the Taillard convention: processing times
/// uniform on `1..=99`, each job's machine order a uniform permutation.
///
/// All times are drawn first (job-major), then the machine orders.
pub fn generate_taillard(num_jobs: usize, num_machines: usize, seed: u64) -> Instance {
    assert!(
        num_jobs >= 1 && num_machines >= 1,
        "instance must be non-empty"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times: Vec<Vec<Time>> = (0..num_jobs)
        .map(|_| {
            (0..num_machines)
                .map(|_| rng.gen_range(1..=MAX_GENERATED_TIME))
                .collect()
        })
        .collect();
    let routes = times
        .into_iter()
        .map(|row| {
            let mut order: Vec<usize> = (0..num_machines).collect();
            order.shuffle(&mut rng);
            order
                .into_iter()
                .zip(row)
                .map(|(machine, duration)| Task { machine, duration })
                .collect()
        })
        .collect();
    Instance {
        num_jobs,
        num_machines,
        routes,
    }
}

/// Compares `a_num / a_den` with `b_num / b_den` exactly. A zero denominator
/// ranks after every finite ratio.
fn cmp_ratio(a_num: Time, a_den: Time, b_num: Time, b_den: Time) -> Ordering {
    match (a_den == 0, b_den == 0) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        (false, false) => (a_num as i128 * b_den as i128).cmp(&(b_num as i128 * a_den as i128)),
    }
}

/// List-scheduling dispatch with the minimum FDD/MWKR priority: among the
/// first unscheduled operation of every unfinished job, append the one with
/// the smallest ratio to its machine order. Ties go to the lowest job index.
pub fn initial_solution_fdd_mwkr(inst: &Instance) -> Solution {
    let mut next_pos = vec![0usize; inst.num_jobs];
    let mut orders: Vec<Vec<OpId>> = vec![Vec::with_capacity(inst.num_jobs); inst.num_machines];
    for _ in 0..inst.num_ops() {
        let mut best: Option<(OpId, Time, Time)> = None;
        for (job, &pos) in next_pos.iter().enumerate() {
            if pos == inst.num_machines {
                continue;
            }
            let op = OpId::new(job, pos);
            let fdd = inst.flow_due_date(op);
            let mwkr = inst.most_work_remaining(op);
            let better = match best {
                None => true,
                Some((_, bf, bm)) => cmp_ratio(fdd, mwkr, bf, bm) == Ordering::Less,
            };
            if better {
                best = Some((op, fdd, mwkr));
            }
        }
        let (op, _, _) = best.expect("an unfinished job always exists here");
        orders[inst.machine(op)].push(op);
        next_pos[op.job] += 1;
    }
    Solution::from_orders_unchecked(orders)
}

/// List scheduling that appends the next operation of a uniformly drawn
/// unfinished job. Every orientation it produces is acyclic.
pub fn random_dispatch<R: Rng + ?Sized>(inst: &Instance, rng: &mut R) -> Solution {
    let mut next_pos = vec![0usize; inst.num_jobs];
    let mut open: Vec<usize> = (0..inst.num_jobs).collect();
    let mut orders: Vec<Vec<OpId>> = vec![Vec::with_capacity(inst.num_jobs); inst.num_machines];
    while !open.is_empty() {
        let k = rng.gen_range(0..open.len());
        let job = open[k];
        let op = OpId::new(job, next_pos[job]);
        orders[inst.machine(op)].push(op);
        next_pos[job] += 1;
        if next_pos[job] == inst.num_machines {
            open.swap_remove(k);
        }
    }
    Solution::from_orders_unchecked(orders)
}
