//! One run of the social-learning protocol: initial samples, then `T`
//! myopic agents who each pick an arm and reveal its next tape reward.

use rand::Rng;
use serde::Serialize;

use crate::behaviors::{check_containment, choose_arm, compute_indices, PopulationSpec};
use crate::error::{Error, Result};
use crate::model::{stream_rng, Arm, ArmStats, Instance, Lane, LazyTape, TapeSource};

/// What a run records and when it may stop early.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Stop as soon as the good arm has been pulled more than this many
    /// times past its initial samples. Only sound when the caller needs
    /// nothing beyond the failure indicator for that threshold.
    pub stop_after_good_pulls: Option<u64>,
    pub record_choices: bool,
    /// Verify every index against its confidence interval.
    pub check_containment: bool,
}

impl RunOptions {
    pub fn full() -> Self {
        RunOptions {
            stop_after_good_pulls: None,
            record_choices: true,
            check_containment: cfg!(debug_assertions),
        }
    }

    pub fn failure_only(n: u64) -> Self {
        RunOptions {
            stop_after_good_pulls: Some(n),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    /// Choice of agent `t` at position `t - 1`; empty unless recorded.
    pub chosen_arms: Vec<Arm>,
    pub good_arm_pulls_beyond_init: u64,
    pub bad_arm_pulls_beyond_init: u64,
    pub pseudo_regret: f64,
    /// First round (1-based) in which the good arm was chosen.
    pub first_good_pull_round: Option<u64>,
    /// Rounds actually simulated; below the horizon after an early stop.
    pub rounds_played: u64,
    pub horizon: u64,
}

impl Trajectory {
    pub fn truncated(&self) -> bool {
        self.rounds_played < self.horizon
    }
}

/// Runs the protocol on `tape`. Agent randomness (mixture draws, randomized
/// indices, tie-breaks) comes from `rng`.
pub fn run_trajectory<S: TapeSource, R: Rng + ?Sized>(
    instance: &Instance,
    population: &PopulationSpec,
    tape: &mut S,
    rng: &mut R,
    options: RunOptions,
) -> Result<Trajectory> {
    instance.validate()?;
    let good = instance.good_arm();
    let keep_history = population.needs_history();
    let mut history: [Vec<u8>; 2] = [Vec::new(), Vec::new()];
    let mut stats = [ArmStats::default(); 2];
    for arm in Arm::BOTH {
        for _ in 0..instance.n0 {
            let r = tape.next_reward(arm)?;
            stats[arm.index()].record(r);
            if keep_history {
                history[arm.index()].push(r);
            }
        }
    }
    let mut chosen = if options.record_choices {
        Vec::with_capacity(instance.horizon as usize)
    } else {
        Vec::new()
    };
    let mut good_pulls = 0u64;
    let mut first_good = None;
    let mut rounds = 0u64;
    for t in 1..=instance.horizon {
        let behavior = population.draw(rng);
        let recent = if keep_history {
            Some([history[0].as_slice(), history[1].as_slice()])
        } else {
            None
        };
        let idx = compute_indices(behavior, &stats[0], &stats[1], recent, rng)?;
        if options.check_containment {
            check_containment(behavior, [&stats[0], &stats[1]], idx)?;
        }
        let arm = choose_arm(idx.0, idx.1, rng)?;
        let r = tape.next_reward(arm)?;
        stats[arm.index()].record(r);
        if keep_history {
            history[arm.index()].push(r);
        }
        if options.record_choices {
            chosen.push(arm);
        }
        rounds = t;
        if arm == good {
            good_pulls += 1;
            first_good.get_or_insert(t);
            if options.stop_after_good_pulls.is_some_and(|n| good_pulls > n) {
                break;
            }
        }
    }
    let bad = rounds - good_pulls;
    Ok(Trajectory {
        chosen_arms: chosen,
        good_arm_pulls_beyond_init: good_pulls,
        bad_arm_pulls_beyond_init: bad,
        pseudo_regret: instance.gap() * bad as f64,
        first_good_pull_round: first_good,
        rounds_played: rounds,
        horizon: instance.horizon,
    })
}

/// Trial `trial` under `master_seed`, with a lazily drawn tape.
pub fn simulate_trial(
    instance: &Instance,
    population: &PopulationSpec,
    master_seed: u64,
    trial: u64,
    options: RunOptions,
) -> Result<Trajectory> {
    let mut tape = LazyTape::for_trial(instance, master_seed, trial);
    let mut rng = stream_rng(master_seed, trial, Lane::Agents);
    run_trajectory(instance, population, &mut tape, &mut rng, options)
}

/// True iff the good arm got at most `n` pulls beyond its initial samples.
pub fn detect_sampling_failure(traj: &Trajectory, n: u64) -> Result<bool> {
    let failed = traj.good_arm_pulls_beyond_init <= n;
    if failed && traj.truncated() {
        return Err(Error::Undetermined {
            stopped: traj.good_arm_pulls_beyond_init,
        });
    }
    Ok(failed)
}
