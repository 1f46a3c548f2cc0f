use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::eval::{evaluate, extract_critical, Schedule};
use crate::graph::{build_graph, GraphView, Solution};
use crate::instance::{initial_solution_fdd_mwkr, Instance, Time};
use crate::n5::{enumerate_moves, MoveSet};
use crate::nn::Mode;
use crate::policy::{greedy_action, sample_action, Action, PolicyInput, PolicyNet};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("move index {index} out of range for {available} moves")]
    NoSuchMove { index: usize, available: usize },
    #[error("the dummy action is only valid in an absorbing state")]
    DummyNotAllowed,
}

/// One state of the improvement process.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub solution: Solution,
    pub graph: GraphView,
    pub schedule: Schedule,
    pub moves: MoveSet,
    pub incumbent: Time,
    pub incumbent_solution: Solution,
    pub initial_makespan: Time,
    pub step: usize,
    pub absorbing: bool,
}

impl EnvState {
    pub fn makespan(&self) -> Time {
        self.schedule.makespan
    }

    /// Sum of rewards so far; always `initial_makespan - incumbent`.
    pub fn improvement(&self) -> Time {
        self.initial_makespan - self.incumbent
    }

    pub fn policy_input(&self) -> PolicyInput {
        PolicyInput::new(&self.graph, &self.schedule)
    }
}

fn analyse<R: Rng + ?Sized>(
    inst: &Instance,
    solution: &Solution,
    rng: &mut R,
) -> (GraphView, Schedule, MoveSet) {
    let graph = build_graph(inst, solution);
    let schedule = evaluate(&graph).expect("solutions reached by N5 moves are acyclic");
    let moves = enumerate_moves(&extract_critical(&graph, &schedule, rng));
    (graph, schedule, moves)
}

/// Starts from the FDD/MWKR dispatching solution.
pub fn env_reset<R: Rng + ?Sized>(inst: &Instance, rng: &mut R) -> EnvState {
    env_reset_from(inst, initial_solution_fdd_mwkr(inst), rng)
}

pub fn env_reset_from<R: Rng + ?Sized>(
    inst: &Instance,
    solution: Solution,
    rng: &mut R,
) -> EnvState {
    let (graph, schedule, moves) = analyse(inst, &solution, rng);
    let makespan = schedule.makespan;
    EnvState {
        incumbent_solution: solution.clone(),
        solution,
        graph,
        schedule,
        absorbing: moves.is_empty(),
        moves,
        incumbent: makespan,
        initial_makespan: makespan,
        step: 0,
    }
}

/// Applies `action` and returns the reward `max(incumbent - new makespan, 0)`.
pub fn env_step<R: Rng + ?Sized>(
    inst: &Instance,
    state: &mut EnvState,
    action: Action,
    rng: &mut R,
) -> Result<Time, EnvError> {
    let index = match action {
        Action::Dummy if state.absorbing => {
            state.step += 1;
            return Ok(0);
        }
        Action::Dummy => return Err(EnvError::DummyNotAllowed),
        Action::Move(i) if i < state.moves.len() => i,
        Action::Move(index) => {
            return Err(EnvError::NoSuchMove {
                index,
                available: state.moves.len(),
            })
        }
    };
    let mv = state.moves.moves[index];
    state
        .solution
        .apply_move_in_place(mv)
        .expect("enumerated moves swap adjacent operations");
    let (graph, schedule, moves) = analyse(inst, &state.solution, rng);
    let makespan = schedule.makespan;
    let reward = (state.incumbent - makespan).max(0);
    if makespan < state.incumbent {
        state.incumbent = makespan;
        state.incumbent_solution = state.solution.clone();
    }
    state.graph = graph;
    state.schedule = schedule;
    state.absorbing = moves.is_empty();
    state.moves = moves;
    state.step += 1;
    Ok(reward)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    Sample,
    Greedy,
}

/// Who picks the moves of a rollout.
#[derive(Debug, Clone, Copy)]
pub enum Driver<'a> {
    Policy {
        net: &'a PolicyNet,
        selection: Selection,
    },
    /// Uniformly random N5 move.
    Random,
}

impl Driver<'_> {
    pub fn choose<R: Rng + ?Sized>(&self, state: &EnvState, rng: &mut R) -> Action {
        match *self {
            Driver::Random if state.absorbing => Action::Dummy,
            Driver::Random => {
                let all: Vec<usize> = (0..state.moves.len()).collect();
                Action::Move(*all.choose(rng).expect("non-absorbing states have moves"))
            }
            // Absorbing states still query the network; the distribution
            // then puts all mass on the dummy action.
            Driver::Policy { net, selection } => {
                let fwd = net.forward(Mode::Eval, &state.policy_input());
                let probs = net.move_probabilities(&fwd, &state.moves);
                match selection {
                    Selection::Sample => sample_action(&probs, rng),
                    Selection::Greedy => greedy_action(&probs),
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub initial_makespan: Time,
    pub incumbent: Time,
    pub incumbent_solution: Solution,
    pub rewards: Vec<Time>,
    /// Makespan of the current solution after each step.
    pub makespans: Vec<Time>,
    pub incumbents: Vec<Time>,
}

/// Runs `steps` transitions from the FDD/MWKR solution.
pub fn rollout<R: Rng + ?Sized>(
    inst: &Instance,
    driver: Driver,
    steps: usize,
    rng: &mut R,
) -> Rollout {
    let mut state = env_reset(inst, rng);
    let mut out = Rollout {
        initial_makespan: state.initial_makespan,
        incumbent: state.incumbent,
        incumbent_solution: state.incumbent_solution.clone(),
        rewards: Vec::with_capacity(steps),
        makespans: Vec::with_capacity(steps),
        incumbents: Vec::with_capacity(steps),
    };
    for _ in 0..steps {
        let action = driver.choose(&state, rng);
        let r = env_step(inst, &mut state, action, rng).expect("drivers pick feasible actions");
        out.rewards.push(r);
        out.makespans.push(state.makespan());
        out.incumbents.push(state.incumbent);
    }
    out.incumbent = state.incumbent;
    out.incumbent_solution = state.incumbent_solution;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::{d1, d2};
    use crate::graph::Move;
    use crate::instance::{generate_taillard, OpId};
    use crate::policy::PolicyConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reset_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = env_reset(&d1(), &mut rng);
        assert_eq!(s.incumbent, 6);
        assert_eq!(s.incumbent, s.makespan());
        assert_eq!(s.step, 0);
        let one = Instance::from_pairs(1, &[&[(0, 5)]]).unwrap();
        let s = env_reset(&one, &mut rng);
        assert!(s.absorbing);
        assert!(s.moves.is_empty());
    }

    #[test]
    fn d2_move_is_not_rewarded() {
        let (inst, sol) = d2();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = env_reset_from(&inst, sol, &mut rng);
        assert_eq!(s.incumbent, 10);
        let target = Move {
            machine: 0,
            first: OpId::new(0, 0),
            second: OpId::new(1, 0),
        };
        let k = s.moves.moves.iter().position(|m| *m == target).unwrap();
        let r = env_step(&inst, &mut s, Action::Move(k), &mut rng).unwrap();
        assert_eq!(s.makespan(), 11);
        assert_eq!(r, 0);
        assert_eq!(s.incumbent, 10);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn absorbing_dummy_is_a_no_op() {
        let one = Instance::from_pairs(1, &[&[(0, 5)]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = env_reset(&one, &mut rng);
        let before = s.solution.clone();
        assert_eq!(env_step(&one, &mut s, Action::Dummy, &mut rng), Ok(0));
        assert_eq!(s.solution, before);
        assert!(s.absorbing);
        assert_eq!(
            env_step(&one, &mut s, Action::Move(0), &mut rng),
            Err(EnvError::NoSuchMove {
                index: 0,
                available: 0
            })
        );

        let (inst, sol) = d2();
        let mut s = env_reset_from(&inst, sol, &mut rng);
        assert_eq!(
            env_step(&inst, &mut s, Action::Dummy, &mut rng),
            Err(EnvError::DummyNotAllowed)
        );
    }

    #[test]
    fn reward_identity_along_rollouts() {
        let net = PolicyNet::new(PolicyConfig::small(2, 8), 0);
        for seed in 0..6 {
            let inst = generate_taillard(4, 3, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let driver = if seed % 2 == 0 {
                Driver::Random
            } else {
                Driver::Policy {
                    net: &net,
                    selection: Selection::Sample,
                }
            };
            let r = rollout(&inst, driver, 60, &mut rng);
            let mut total = 0;
            let mut prev = r.initial_makespan;
            for (t, &rew) in r.rewards.iter().enumerate() {
                assert!(rew >= 0);
                total += rew;
                assert_eq!(total, r.initial_makespan - r.incumbents[t]);
                assert!(r.incumbents[t] <= prev);
                prev = r.incumbents[t];
            }
        }
    }
}
