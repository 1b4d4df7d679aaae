//! Multi-user coupling through interference: expected-rate coefficients,
//! best-response LPs, iterated best response and the potential function.

mod snr;

pub use snr::{convolve, snr_distribution, SnrDistribution, MERGE_TOL};

use crate::cmdp::{build_polytope, feasible_seed_measure, OccupationMeasure};
use crate::error::{Error, Result};
use crate::lp::{solve_with, LinearProgram, SolverOptions};
use crate::model::{build_transition_kernel, Scenario, TransitionKernel, UserSpec};

/// Largest game the naive product-measure expectation accepts.
pub const NAIVE_USER_LIMIT: usize = 4;

/// Per-user data that never changes during a game.
#[derive(Clone, Debug)]
pub struct UserModel {
    pub spec: UserSpec,
    pub kernel: TransitionKernel,
    pub polytope: LinearProgram,
}

impl UserModel {
    pub fn new(spec: UserSpec) -> Self {
        let kernel = build_transition_kernel(&spec);
        let polytope = build_polytope(&spec, &kernel);
        UserModel {
            spec,
            kernel,
            polytope,
        }
    }
}

/// One occupation measure per user.
#[derive(Clone, Debug, PartialEq)]
pub struct GameProfile {
    pub measures: Vec<OccupationMeasure>,
}

impl GameProfile {
    pub fn new(measures: Vec<OccupationMeasure>) -> Self {
        GameProfile { measures }
    }

    /// Every user plays `measure`.
    pub fn uniform(measure: OccupationMeasure, users: usize) -> Self {
        GameProfile {
            measures: vec![measure; users],
        }
    }

    fn concat_diff(&self, other: &GameProfile) -> (f64, f64) {
        let mut l2 = 0.0f64;
        let mut linf = 0.0f64;
        for (a, b) in self.measures.iter().zip(&other.measures) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                let d = (x - y).abs();
                l2 += d * d;
                linf = linf.max(d);
            }
        }
        (l2.sqrt(), linf)
    }
}

#[derive(Clone, Debug)]
pub struct BestResponse {
    pub measure: OccupationMeasure,
    pub value: f64,
}

/// When iterated best response stops.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StopRule {
    /// Stop as soon as either the profile change or the reward change falls
    /// below ε (the loop runs while both are at least ε).
    #[default]
    Either,
    /// Stop only when both changes fall below ε.
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationConfig {
    pub epsilon: f64,
    pub max_sweeps: usize,
    pub stop_rule: StopRule,
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig {
            epsilon: 1e-9,
            max_sweeps: 500,
            stop_rule: StopRule::Either,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    /// 0 is the initial profile.
    pub sweep: usize,
    pub rewards: Vec<f64>,
    pub potential: f64,
    pub delta_linf: f64,
    pub delta_l2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<SweepRecord>,
    pub converged: bool,
}

impl IterationTrace {
    pub fn sweeps(&self) -> usize {
        self.records.last().map_or(0, |r| r.sweep)
    }

    /// Whether the potential never drops by more than `slack` between sweeps.
    pub fn potential_is_monotone(&self, slack: f64) -> bool {
        self.records
            .windows(2)
            .all(|w| w[1].potential >= w[0].potential - slack)
    }
}

#[derive(Clone, Debug)]
pub struct Game {
    scenario: Scenario,
    users: Vec<UserModel>,
    solver: SolverOptions,
}

impl Game {
    pub fn new(scenario: Scenario) -> Self {
        let users = scenario.users.iter().cloned().map(UserModel::new).collect();
        Game {
            scenario,
            users,
            solver: SolverOptions::default(),
        }
    }

    pub fn with_solver(mut self, solver: SolverOptions) -> Self {
        self.solver = solver;
        self
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn user(&self, i: usize) -> &UserModel {
        &self.users[i]
    }

    fn check(&self, profile: &GameProfile) -> Result<()> {
        if profile.measures.len() != self.num_users() {
            return Err(Error::ProfileSize {
                expected: self.num_users(),
                got: profile.measures.len(),
            });
        }
        Ok(())
    }

    /// Every user plays the explicit seed policy, which is feasible and has a
    /// positive time-average SNR.
    pub fn seed_profile(&self) -> Result<GameProfile> {
        self.users
            .iter()
            .map(|u| feasible_seed_measure(&u.spec))
            .collect::<Result<Vec<_>>>()
            .map(GameProfile::new)
    }

    /// Distribution of the interference `Σ_{j≠i} h_j p_j 1{q_j>0}` seen by `i`.
    pub fn interference(&self, i: usize, profile: &GameProfile) -> SnrDistribution {
        let others: Vec<SnrDistribution> = profile
            .measures
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, z)| snr_distribution(z))
            .collect();
        convolve(&others)
    }

    /// `R_i(x_i, a_i)`: user `i`'s rate at each of its state-action pairs,
    /// averaged over the other users' stationary behaviour.
    pub fn expected_rate_coefficients(&self, i: usize, profile: &GameProfile) -> Vec<f64> {
        let interference = self.interference(i, profile);
        let n0 = self.scenario.noise_variance;
        let space = self.users[i].kernel.space();
        space
            .iter_pairs()
            .map(|(_, s, a)| {
                let snr = space.effective_snr(s, a);
                if snr == 0.0 {
                    0.0
                } else {
                    interference.expect(|noise| (1.0 + snr / (n0 + noise)).log2())
                }
            })
            .collect()
    }

    /// The same coefficients by summing over every joint state-action of the
    /// other users. Exponential in the number of users.
    pub fn naive_expected_rate(&self, i: usize, profile: &GameProfile) -> Result<Vec<f64>> {
        self.check(profile)?;
        let n = self.num_users();
        if n > NAIVE_USER_LIMIT {
            return Err(Error::TooManyUsers {
                users: n,
                limit: NAIVE_USER_LIMIT,
            });
        }
        let n0 = self.scenario.noise_variance;
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        // (probability, interference) of every joint outcome of the others
        let mut joint = vec![(1.0, 0.0)];
        for &j in &others {
            let z = &profile.measures[j];
            let space = z.space();
            let mut next = Vec::with_capacity(joint.len() * space.num_pairs());
            for &(p, noise) in &joint {
                for (idx, s, a) in space.iter_pairs() {
                    next.push((p * z.as_slice()[idx], noise + space.effective_snr(s, a)));
                }
            }
            joint = next;
        }
        let space = self.users[i].kernel.space();
        Ok(space
            .iter_pairs()
            .map(|(_, s, a)| {
                let snr = space.effective_snr(s, a);
                joint
                    .iter()
                    .map(|&(p, noise)| p * (1.0 + snr / (n0 + noise)).log2())
                    .sum()
            })
            .collect())
    }

    /// `T_i(z) = Σ R_i(x_i,a_i) z_i(x_i,a_i)`.
    pub fn average_rate(&self, i: usize, profile: &GameProfile) -> f64 {
        profile.measures[i].linear(&self.expected_rate_coefficients(i, profile))
    }

    pub fn rewards(&self, profile: &GameProfile) -> Vec<f64> {
        (0..self.num_users())
            .map(|i| self.average_rate(i, profile))
            .collect()
    }

    /// `E[log2(1 + Σ_j h_j p_j 1{q_j>0} / N0)]` under the product of all measures.
    pub fn potential(&self, profile: &GameProfile) -> f64 {
        let all: Vec<SnrDistribution> = profile.measures.iter().map(snr_distribution).collect();
        let n0 = self.scenario.noise_variance;
        convolve(&all).expect(|s| (1.0 + s / n0).log2())
    }

    pub fn best_response(&self, i: usize, profile: &GameProfile) -> Result<BestResponse> {
        self.check(profile)?;
        let user = &self.users[i];
        let lp = user
            .polytope
            .clone()
            .with_objective(self.expected_rate_coefficients(i, profile));
        let sol = solve_with(&lp, &self.solver);
        match (sol.x, sol.value) {
            (Some(x), Some(value)) => Ok(BestResponse {
                measure: OccupationMeasure::new(user.kernel.space(), x)?,
                value,
            }),
            _ if sol.status == crate::lp::LpStatus::Infeasible => {
                Err(Error::InfeasiblePolytope { user: i })
            }
            _ => Err(Error::Lp(sol.status)),
        }
    }

    /// Gauss-Seidel best-response sweeps over users `0..N`. Returns the last
    /// profile even when `max_sweeps` runs out; check `trace.converged`.
    pub fn iterate_best_response(
        &self,
        initial: GameProfile,
        cfg: &IterationConfig,
    ) -> Result<(GameProfile, IterationTrace)> {
        self.check(&initial)?;
        let mut profile = initial;
        let mut rewards = self.rewards(&profile);
        let mut records = vec![SweepRecord {
            sweep: 0,
            rewards: rewards.clone(),
            potential: self.potential(&profile),
            delta_linf: 0.0,
            delta_l2: 0.0,
        }];
        let mut converged = false;
        for sweep in 1..=cfg.max_sweeps {
            let previous = profile.clone();
            for j in 0..self.num_users() {
                profile.measures[j] = self.best_response(j, &profile)?.measure;
            }
            let next_rewards = self.rewards(&profile);
            let (delta_l2, delta_linf) = profile.concat_diff(&previous);
            let reward_change = next_rewards
                .iter()
                .zip(&rewards)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            records.push(SweepRecord {
                sweep,
                rewards: next_rewards.clone(),
                potential: self.potential(&profile),
                delta_linf,
                delta_l2,
            });
            rewards = next_rewards;
            let small_z = delta_l2 < cfg.epsilon;
            let small_t = reward_change < cfg.epsilon;
            let stop = match cfg.stop_rule {
                StopRule::Either => small_z || small_t,
                StopRule::Both => small_z && small_t,
            };
            if stop {
                converged = true;
                break;
            }
        }
        Ok((profile, IterationTrace { records, converged }))
    }

    /// Per-user gain from the best unilateral deviation. The profile is an
    /// ε-equilibrium iff every gap is at most ε.
    pub fn verify_epsilon_ne(&self, profile: &GameProfile) -> Result<Vec<f64>> {
        self.check(profile)?;
        (0..self.num_users())
            .map(|i| Ok(self.best_response(i, profile)?.value - self.average_rate(i, profile)))
            .collect()
    }
}
