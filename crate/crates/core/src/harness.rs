//! Benchmark plumbing shared by the command-line tool and the acceptance
//! suite: running a method on an instance, gaps against best-known values,
//! directory benchmarks, timing sweeps and instance generation.
//!
//! Frozen output schemas:
//!
//! * results CSV: `instance,method,steps,initial_makespan,incumbent,gap,wall_ms,seed`
//!   (`gap` is empty when no best-known value exists)
//! * scaling CSV: `jobs,machines,repetitions,steps,mean_wall_ms`
//! * best-known CSV: `name,makespan`
//! * solve JSON: `{ "result": <results row as object>, "solution": [machine order lines], "start_times": [[per job]] }`

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::evaluate;
use crate::graph::{build_graph, Solution};
use crate::instance::{
    generate_taillard, initial_solution_fdd_mwkr, parse_standard, parse_taillard,
    serialize_standard, serialize_taillard, Instance, ParseError, Time,
};
use crate::policy::PolicyNet;
use crate::rl::{rollout, Driver, Selection};
use crate::search::{
    run_best_improvement, run_first_improvement, run_greedy, run_tabu_n5, DEFAULT_MEMORY,
    DEFAULT_TENURE,
};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Policy,
    Gd,
    Bi,
    Fi,
    Tabu,
    Random,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Policy,
        Method::Gd,
        Method::Bi,
        Method::Fi,
        Method::Tabu,
        Method::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Policy => "policy",
            Method::Gd => "gd",
            Method::Bi => "bi",
            Method::Fi => "fi",
            Method::Tabu => "tabu",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                format!("unknown method '{s}' (expected policy, gd, bi, fi, tabu or random)")
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Standard,
    Taillard,
}

impl Format {
    pub fn parse(self, text: &str) -> Result<Instance, ParseError> {
        match self {
            Format::Standard => parse_standard(text),
            Format::Taillard => parse_taillard(text),
        }
    }

    pub fn serialize(self, inst: &Instance) -> String {
        match self {
            Format::Standard => serialize_standard(inst),
            Format::Taillard => serialize_taillard(inst),
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error("{path}: {message}")]
    BestKnown { path: PathBuf, message: String },
    #[error("method '{0}' needs a policy checkpoint")]
    MissingPolicy(Method),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub fn read_instance(path: &Path, format: Format) -> Result<Instance, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.into(),
        source,
    })?;
    format.parse(&text).map_err(|source| HarnessError::Parse {
        path: path.into(),
        source,
    })
}

/// One method run on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub instance: String,
    pub method: Method,
    pub steps: usize,
    pub initial_makespan: Time,
    pub incumbent: Time,
    pub gap: Option<f64>,
    pub wall_ms: f64,
    pub seed: u64,
}

/// `(incumbent - best) / best`; negative when the incumbent beats the table.
pub fn gap(incumbent: Time, best: Time) -> f64 {
    (incumbent - best) as f64 / best as f64
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub initial_makespan: Time,
    pub incumbent: Time,
    pub solution: Solution,
}

/// Runs `steps` improvement steps of `method` from the FDD/MWKR solution.
pub fn run_method(
    inst: &Instance,
    method: Method,
    steps: usize,
    seed: u64,
    net: Option<&PolicyNet>,
) -> Result<MethodRun, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s0 = initial_solution_fdd_mwkr(inst);
    let from_search = |r: crate::search::SearchResult| MethodRun {
        initial_makespan: r.initial_makespan,
        incumbent: r.incumbent,
        solution: r.incumbent_solution,
    };
    let from_rollout = |r: crate::rl::Rollout| MethodRun {
        initial_makespan: r.initial_makespan,
        incumbent: r.incumbent,
        solution: r.incumbent_solution,
    };
    Ok(match method {
        Method::Policy => {
            let net = net.ok_or(HarnessError::MissingPolicy(method))?;
            let driver = Driver::Policy {
                net,
                selection: Selection::Sample,
            };
            from_rollout(rollout(inst, driver, steps, &mut rng))
        }
        Method::Random => from_rollout(rollout(inst, Driver::Random, steps, &mut rng)),
        Method::Gd => from_search(run_greedy(inst, s0, steps, &mut rng)),
        Method::Bi => from_search(run_best_improvement(
            inst,
            s0,
            steps,
            DEFAULT_MEMORY,
            &mut rng,
        )),
        Method::Fi => from_search(run_first_improvement(
            inst,
            s0,
            steps,
            DEFAULT_MEMORY,
            &mut rng,
        )),
        Method::Tabu => from_search(run_tabu_n5(inst, s0, steps, DEFAULT_TENURE, &mut rng)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutput {
    pub result: BenchResult,
    /// One line per machine: the operations in processing order, as `job.pos`.
    pub solution: Vec<String>,
    /// Start time of every operation, indexed `[job][pos]`.
    pub start_times: Vec<Vec<Time>>,
}

#[allow(clippy::too_many_arguments)]
pub fn solve_output(
    inst: &Instance,
    name: &str,
    method: Method,
    steps: usize,
    seed: u64,
    best: Option<Time>,
    run: &MethodRun,
    wall_ms: f64,
) -> SolveOutput {
    let sched = evaluate(&build_graph(inst, &run.solution)).expect("incumbents are acyclic");
    let start_times = inst
        .routes()
        .iter()
        .enumerate()
        .map(|(j, route)| {
            (0..route.len())
                .map(|i| sched.est[inst.node_of(crate::instance::OpId::new(j, i))])
                .collect()
        })
        .collect();
    SolveOutput {
        result: BenchResult {
            instance: name.into(),
            method,
            steps,
            initial_makespan: run.initial_makespan,
            incumbent: run.incumbent,
            gap: best.map(|b| gap(run.incumbent, b)),
            wall_ms,
            seed,
        },
        solution: run.solution.to_lines(),
        start_times,
    }
}

/// Runs one policy per checkpoint with the same seed and keeps the best.
pub fn solve_ensemble(
    inst: &Instance,
    nets: &[PolicyNet],
    steps: usize,
    seed: u64,
) -> Option<MethodRun> {
    nets.iter()
        .map(|net| {
            run_method(inst, Method::Policy, steps, seed, Some(net)).expect("policy supplied")
        })
        .min_by_key(|r| r.incumbent)
}

pub fn read_best_known(path: &Path) -> Result<BTreeMap<String, Time>, HarnessError> {
    #[derive(Deserialize)]
    struct Row {
        name: String,
        makespan: Time,
    }
    let mut out = BTreeMap::new();
    let mut reader = csv::Reader::from_path(path)?;
    for row in reader.deserialize::<Row>() {
        let row = row?;
        if row.makespan <= 0 {
            return Err(HarnessError::BestKnown {
                path: path.into(),
                message: format!("non-positive makespan for '{}'", row.name),
            });
        }
        out.insert(row.name, row.makespan);
    }
    Ok(out)
}

pub fn write_best_known(path: &Path, values: &BTreeMap<String, Time>) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["name", "makespan"])?;
    for (name, m) in values {
        w.write_record([name.as_str(), &m.to_string()])?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.into(),
        source,
    })?;
    Ok(())
}

/// Instance files in `dir` (non-recursive, sorted by name), skipping
/// hidden files and `.csv` tables.
pub fn instance_files(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let io = |source| HarnessError::Io {
        path: dir.into(),
        source,
    };
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        let hidden = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_none_or(|n| n.starts_with('.'));
        let table = path.extension().is_some_and(|e| e == "csv");
        if path.is_file() && !hidden && !table {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn instance_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSummary {
    pub results: Vec<BenchResult>,
    /// Over instances with a best-known value.
    pub mean_gap: Option<f64>,
    pub mean_wall_ms: Option<f64>,
}

/// Runs `method` on every instance of `dir`, one at a time so wall times
/// reflect single-instance solving. Instance `i` (in file-name order) uses
/// seed `derive_seed(seed, [i])`.
pub fn bench_dir(
    dir: &Path,
    format: Format,
    method: Method,
    steps: usize,
    best_known: &BTreeMap<String, Time>,
    seed: u64,
    net: Option<&PolicyNet>,
) -> Result<BenchSummary, HarnessError> {
    let mut results = Vec::new();
    for (i, path) in instance_files(dir)?.iter().enumerate() {
        let inst = read_instance(path, format)?;
        let name = instance_name(path);
        let run_seed = derive_seed(seed, &[i as u64]);
        let start = Instant::now();
        let run = run_method(&inst, method, steps, run_seed, net)?;
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        results.push(BenchResult {
            gap: best_known.get(&name).map(|&b| gap(run.incumbent, b)),
            instance: name,
            method,
            steps,
            initial_makespan: run.initial_makespan,
            incumbent: run.incumbent,
            wall_ms,
            seed: run_seed,
        });
    }
    let gaps: Vec<f64> = results.iter().filter_map(|r| r.gap).collect();
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let walls: Vec<f64> = results.iter().map(|r| r.wall_ms).collect();
    Ok(BenchSummary {
        mean_gap: mean(&gaps),
        mean_wall_ms: mean(&walls),
        results,
    })
}

pub fn write_results_csv<W: std::io::Write>(
    out: W,
    results: &[BenchResult],
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "instance",
        "method",
        "steps",
        "initial_makespan",
        "incumbent",
        "gap",
        "wall_ms",
        "seed",
    ])?;
    for r in results {
        w.write_record([
            r.instance.clone(),
            r.method.to_string(),
            r.steps.to_string(),
            r.initial_makespan.to_string(),
            r.incumbent.to_string(),
            r.gap.map(|g| g.to_string()).unwrap_or_default(),
            format!("{:.3}", r.wall_ms),
            r.seed.to_string(),
        ])?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: PathBuf::from("<results>"),
        source,
    })?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub jobs: usize,
    pub machines: usize,
    pub repetitions: usize,
    pub steps: usize,
    pub mean_wall_ms: f64,
}

/// Mean wall time of `steps`-step policy rollouts on `repetitions` random
/// instances per size. Sizes are interleaved within each repetition so a
/// burst of machine load is spread over all sizes.
pub fn scaling(
    net: &PolicyNet,
    sizes: &[(usize, usize)],
    repetitions: usize,
    steps: usize,
    seed: u64,
) -> Vec<ScalingRow> {
    let mut total = vec![0.0; sizes.len()];
    for r in 0..repetitions {
        for (&(j, m), t) in sizes.iter().zip(total.iter_mut()) {
            let inst = generate_taillard(j, m, derive_seed(seed, &[j as u64, m as u64, r as u64]));
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[r as u64]));
            let driver = Driver::Policy {
                net,
                selection: Selection::Sample,
            };
            let start = Instant::now();
            std::hint::black_box(rollout(&inst, driver, steps, &mut rng));
            *t += start.elapsed().as_secs_f64() * 1e3;
        }
    }
    sizes
        .iter()
        .zip(total)
        .map(|(&(j, m), t)| ScalingRow {
            jobs: j,
            machines: m,
            repetitions,
            steps,
            mean_wall_ms: t / repetitions.max(1) as f64,
        })
        .collect()
}

pub fn write_scaling_csv<W: std::io::Write>(
    out: W,
    rows: &[ScalingRow],
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: PathBuf::from("<scaling>"),
        source,
    })?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "need two points");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    LinearFit {
        slope,
        intercept,
        r_squared,
    }
}

/// File name of the `index`-th generated instance.
pub fn generated_name(jobs: usize, machines: usize, seed: u64, index: usize) -> String {
    format!("tai_{jobs}x{machines}_s{seed}_{index:03}.txt")
}

/// Writes `count` random instances to `out_dir`; instance `i` is generated
/// from `derive_seed(seed, [i])`.
pub fn generate_instances(
    jobs: usize,
    machines: usize,
    count: usize,
    seed: u64,
    out_dir: &Path,
    format: Format,
) -> Result<Vec<PathBuf>, HarnessError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| HarnessError::Io { path, source }
    };
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    (0..count)
        .map(|i| {
            let inst = generate_taillard(jobs, machines, derive_seed(seed, &[i as u64]));
            let path = out_dir.join(generated_name(jobs, machines, seed, i));
            std::fs::write(&path, format.serialize(&inst)).map_err(io(&path))?;
            Ok(path)
        })
        .collect()
}
