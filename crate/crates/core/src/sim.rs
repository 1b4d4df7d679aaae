//! Slot-level Monte-Carlo simulation of the multi-user system.
//!
//! Randomness comes from ChaCha8, one generator per user and purpose: stream
//! `3·i` drives user `i`'s channel, `3·i + 1` its arrivals and `3·i + 2` its
//! action draws. All streams share the configured seed, so adding users never
//! changes the draws of existing ones.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;

use crate::cmdp::{
    avg_power, avg_queue, extract_policy, sensitive_reward, OccupationMeasure, PolicyTable,
    SnrWeight,
};
use crate::error::{invalid, Error, Result};
use crate::game::{Game, GameProfile};
use crate::model::{queue_after_service, Action, Scenario, State};

pub const DEFAULT_BURN_IN: u64 = 10_000;
pub const BATCHES: usize = 100;
/// Width of every pass/fail band, in standard errors.
pub const SE_BAND: f64 = 3.0;
/// Absolute slack added to each band so exact agreement with a zero standard
/// error survives floating-point rounding.
pub const BAND_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimConfig {
    /// Measured slots, after the burn-in.
    pub horizon: u64,
    pub seed: u64,
    pub burn_in: u64,
}

impl SimConfig {
    pub fn new(horizon: u64, seed: u64) -> Self {
        SimConfig {
            horizon,
            seed,
            burn_in: DEFAULT_BURN_IN,
        }
    }
}

/// A time average and its batch-means standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

impl Estimate {
    fn from_batches(batches: &[f64]) -> Self {
        let b = batches.len() as f64;
        let mean = batches.iter().sum::<f64>() / b;
        let std_err = if batches.len() < 2 {
            0.0
        } else {
            let var = batches.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1.0);
            (var / b).sqrt()
        };
        Estimate { mean, std_err }
    }

    /// Whether `target` lies inside the `SE_BAND` standard-error band.
    pub fn covers(&self, target: f64) -> bool {
        (self.mean - target).abs() <= SE_BAND * self.std_err + BAND_FLOOR
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserStats {
    /// Bits per slot.
    pub throughput: Estimate,
    pub power: Estimate,
    pub queue: Estimate,
    /// Time-average `h·p·1{q>0}`.
    pub snr: Estimate,
    /// Packets lost per slot, rejected or overflowing.
    pub dropped: Estimate,
    /// Empirical state-action frequencies, laid out like an occupation vector.
    pub occupation: Vec<Estimate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimStats {
    pub config: SimConfig,
    pub users: Vec<UserStats>,
}

struct UserRun {
    policy_draws: Vec<Option<WeightedIndex<f64>>>,
    channel_draws: Vec<WeightedIndex<f64>>,
    arrivals: Poisson<f64>,
    rng_channel: ChaCha8Rng,
    rng_arrivals: ChaCha8Rng,
    rng_action: ChaCha8Rng,
    state: State,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Default, Clone)]
struct Sums {
    rate: f64,
    power: f64,
    queue: f64,
    snr: f64,
    dropped: f64,
    visits: Vec<f64>,
}

/// Runs the system with user `i` following `policies[i]`, starting every user
/// at `(h = 0, q = 0)`.
pub fn simulate(
    scenario: &Scenario,
    policies: &[PolicyTable],
    cfg: &SimConfig,
) -> Result<SimStats> {
    let n = scenario.num_users();
    if policies.len() != n {
        return Err(Error::ProfileSize {
            expected: n,
            got: policies.len(),
        });
    }
    if cfg.horizon == 0 {
        return Err(invalid("horizon", "must be at least 1"));
    }
    let mut runs = Vec::with_capacity(n);
    for (i, (spec, policy)) in scenario.users.iter().zip(policies).enumerate() {
        let space = spec.space();
        if policy.space() != space {
            return Err(invalid(
                "policy",
                format!("user {i} policy does not match its spec"),
            ));
        }
        let policy_draws = (0..space.num_states())
            .map(|x| WeightedIndex::new(policy.action_probs(x)).ok())
            .collect();
        let channel_draws = spec
            .channel_chain
            .iter()
            .map(|row| WeightedIndex::new(row).map_err(|e| invalid("channel_chain", e.to_string())))
            .collect::<Result<_>>()?;
        let arrivals =
            Poisson::new(spec.arrival_rate).map_err(|e| invalid("lambda", e.to_string()))?;
        let base = 3 * i as u64;
        runs.push(UserRun {
            policy_draws,
            channel_draws,
            arrivals,
            rng_channel: stream(cfg.seed, base),
            rng_arrivals: stream(cfg.seed, base + 1),
            rng_action: stream(cfg.seed, base + 2),
            state: State {
                channel: 0,
                queue: 0,
            },
        });
    }

    let batches = BATCHES.min(cfg.horizon as usize);
    let batch_len = cfg.horizon / batches as u64;
    // trailing slots that do not fill a batch are simulated but not counted
    let counted = batch_len * batches as u64;
    let n0 = scenario.noise_variance;
    let mut per_user: Vec<Vec<Sums>> = scenario
        .users
        .iter()
        .map(|s| {
            let zero = Sums {
                visits: vec![0.0; s.space().num_pairs()],
                ..Sums::default()
            };
            vec![zero; batches]
        })
        .collect();
    let mut actions = vec![
        Action {
            admit: false,
            power: 0
        };
        n
    ];
    let mut pairs = vec![0usize; n];
    let mut snr = vec![0.0; n];

    for t in 0..cfg.burn_in + cfg.horizon {
        for (i, run) in runs.iter_mut().enumerate() {
            let space = scenario.users[i].space();
            let x = space.state_index(run.state);
            let a = match &run.policy_draws[x] {
                Some(d) => d.sample(&mut run.rng_action),
                None => 0,
            };
            actions[i] = space.action(a);
            pairs[i] = space.pair_index(x, a);
            snr[i] = space.effective_snr(run.state, actions[i]);
        }
        let measured = t >= cfg.burn_in && t - cfg.burn_in < counted;
        let batch = if measured {
            ((t - cfg.burn_in) / batch_len) as usize
        } else {
            0
        };
        for (i, run) in runs.iter_mut().enumerate() {
            let spec = &scenario.users[i];
            let space = spec.space();
            let q = run.state.queue;
            assert!(
                q <= spec.buffer_size,
                "queue {q} exceeds buffer {}",
                spec.buffer_size
            );
            let interference: f64 = snr
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, v)| v)
                .sum();
            let rate = (1.0 + snr[i] / (n0 + interference)).log2();
            assert!(
                q > 0 || rate == 0.0,
                "user {i} earned rate {rate} from an empty queue"
            );

            let mid = queue_after_service(q, actions[i]);
            let arrived = run.arrivals.sample(&mut run.rng_arrivals) as usize;
            let admitted = if actions[i].admit {
                arrived.min(spec.buffer_size - mid)
            } else {
                0
            };
            if measured {
                let s = &mut per_user[i][batch];
                s.rate += rate;
                s.power += space.power_value(actions[i].power);
                s.queue += q as f64;
                s.snr += snr[i];
                s.dropped += (arrived - admitted) as f64;
                s.visits[pairs[i]] += 1.0;
            }
            let next_channel = run.channel_draws[run.state.channel].sample(&mut run.rng_channel);
            run.state = State {
                channel: next_channel,
                queue: mid + admitted,
            };
        }
    }

    let scale = batch_len as f64;
    let users = per_user
        .into_iter()
        .map(|sums| {
            let est = |f: &dyn Fn(&Sums) -> f64| {
                Estimate::from_batches(&sums.iter().map(|s| f(s) / scale).collect::<Vec<_>>())
            };
            let pairs = sums[0].visits.len();
            UserStats {
                throughput: est(&|s| s.rate),
                power: est(&|s| s.power),
                queue: est(&|s| s.queue),
                snr: est(&|s| s.snr),
                dropped: est(&|s| s.dropped),
                occupation: (0..pairs).map(|k| est(&|s| s.visits[k])).collect(),
            }
        })
        .collect();
    Ok(SimStats {
        config: *cfg,
        users,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantityCheck {
    pub name: &'static str,
    pub predicted: f64,
    pub estimate: Estimate,
    pub pass: bool,
}

impl QuantityCheck {
    fn new(name: &'static str, predicted: f64, estimate: Estimate) -> Self {
        QuantityCheck {
            name,
            predicted,
            estimate,
            pass: estimate.covers(predicted),
        }
    }

    pub fn abs_error(&self) -> f64 {
        (self.estimate.mean - self.predicted).abs()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserValidation {
    /// Throughput, power, queue and time-average SNR, in that order.
    pub checks: Vec<QuantityCheck>,
    /// Largest `|frequency − z| − 3·SE` over all pairs; nonpositive passes.
    pub occupation_excess: f64,
    pub occupation_linf: f64,
}

impl UserValidation {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass) && self.occupation_excess <= BAND_FLOOR
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub stats: SimStats,
    pub users: Vec<UserValidation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.users.iter().all(UserValidation::passed)
    }
}

/// Simulates `policies` and compares the time averages with the values that
/// `predicted` implies.
pub fn validate_policies(
    game: &Game,
    policies: &[PolicyTable],
    predicted: &GameProfile,
    cfg: &SimConfig,
) -> Result<ValidationReport> {
    let stats = simulate(game.scenario(), policies, cfg)?;
    let rewards = game.rewards(predicted);
    let users = stats
        .users
        .iter()
        .zip(&predicted.measures)
        .zip(rewards)
        .map(|((u, z), reward)| user_validation(u, z, reward))
        .collect();
    Ok(ValidationReport { stats, users })
}

fn user_validation(u: &UserStats, z: &OccupationMeasure, reward: f64) -> UserValidation {
    let checks = vec![
        QuantityCheck::new("throughput", reward, u.throughput),
        QuantityCheck::new("power", avg_power(z), u.power),
        QuantityCheck::new("queue", avg_queue(z), u.queue),
        QuantityCheck::new("snr", sensitive_reward(z, 1, SnrWeight::QueueGated), u.snr),
    ];
    let mut excess = f64::NEG_INFINITY;
    let mut linf = 0.0f64;
    for (e, &target) in u.occupation.iter().zip(z.as_slice()) {
        let d = (e.mean - target).abs();
        linf = linf.max(d);
        excess = excess.max(d - SE_BAND * e.std_err);
    }
    UserValidation {
        checks,
        occupation_excess: excess,
        occupation_linf: linf,
    }
}

/// Extracts each user's policy from `profile`, simulates, and compares.
pub fn validate_profile(
    game: &Game,
    profile: &GameProfile,
    cfg: &SimConfig,
) -> Result<ValidationReport> {
    let policies: Vec<PolicyTable> = profile.measures.iter().map(extract_policy).collect();
    validate_policies(game, &policies, profile, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::induced_occupation;
    use crate::model::{build_transition_kernel, UserSpec};

    fn spec() -> UserSpec {
        UserSpec::new(2, 2, 1, 0.5, 0.5, 0.49).unwrap()
    }

    #[test]
    fn never_transmitting_earns_and_spends_nothing() {
        let s = spec();
        let silent = PolicyTable::deterministic(s.space(), |_| Action {
            admit: true,
            power: 0,
        });
        let scenario = Scenario::symmetric(s, 2, 1.0).unwrap();
        let stats = simulate(
            &scenario,
            &[silent.clone(), silent],
            &SimConfig::new(5_000, 1),
        )
        .unwrap();
        for u in &stats.users {
            assert_eq!(u.throughput.mean, 0.0);
            assert_eq!(u.power.mean, 0.0);
            assert_eq!(u.snr.mean, 0.0);
        }
    }

    #[test]
    fn same_seed_same_stats() {
        let s = spec();
        let p = extract_policy(&crate::cmdp::feasible_seed_measure(&s).unwrap());
        let scenario = Scenario::symmetric(s, 2, 1.0).unwrap();
        let cfg = SimConfig::new(20_000, 42);
        let a = simulate(&scenario, &[p.clone(), p.clone()], &cfg).unwrap();
        let b = simulate(&scenario, &[p.clone(), p.clone()], &cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate(&scenario, &[p.clone(), p], &SimConfig::new(20_000, 43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn adding_a_user_keeps_existing_streams() {
        // a user that never transmits does not change others' rates, so with
        // stream splitting user 0's statistics are bit-identical
        let s = spec();
        let p = extract_policy(&crate::cmdp::feasible_seed_measure(&s).unwrap());
        let silent = PolicyTable::deterministic(s.space(), |_| Action {
            admit: false,
            power: 0,
        });
        let cfg = SimConfig::new(10_000, 9);
        let one = simulate(
            &Scenario::symmetric(s.clone(), 1, 1.0).unwrap(),
            std::slice::from_ref(&p),
            &cfg,
        )
        .unwrap();
        let two = simulate(&Scenario::symmetric(s, 2, 1.0).unwrap(), &[p, silent], &cfg).unwrap();
        assert_eq!(one.users[0], two.users[0]);
    }

    #[test]
    fn rejecting_everything_drops_every_arrival() {
        let s = spec();
        let reject = PolicyTable::deterministic(s.space(), |_| Action {
            admit: false,
            power: 1,
        });
        let scenario = Scenario::symmetric(s, 1, 1.0).unwrap();
        let stats = simulate(&scenario, &[reject], &SimConfig::new(100_000, 3)).unwrap();
        let d = stats.users[0].dropped;
        assert!((d.mean - 0.49).abs() <= 3.0 * d.std_err, "{d:?}");
        assert_eq!(stats.users[0].queue.mean, 0.0);
    }

    #[test]
    fn seed_policy_matches_its_measure() {
        let s = spec();
        let kernel = build_transition_kernel(&s);
        let z = crate::cmdp::feasible_seed_measure(&s).unwrap();
        let again = induced_occupation(&extract_policy(&z), &kernel).unwrap();
        assert!(again.linf_distance(&z) < 1e-10);
        let game = Game::new(Scenario::symmetric(s, 1, 1.0).unwrap());
        let report = validate_profile(
            &game,
            &GameProfile::new(vec![z]),
            &SimConfig::new(200_000, 5),
        )
        .unwrap();
        assert!(report.passed(), "{report:#?}");
    }

    #[test]
    fn rejects_zero_horizon() {
        let s = spec();
        let p = PolicyTable::deterministic(s.space(), |_| Action {
            admit: false,
            power: 0,
        });
        let scenario = Scenario::symmetric(s, 1, 1.0).unwrap();
        assert!(simulate(&scenario, &[p], &SimConfig::new(0, 1)).is_err());
    }
}
