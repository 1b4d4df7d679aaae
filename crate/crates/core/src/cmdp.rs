//! Per-user constrained MDP: the occupation-measure polytope, policy
//! extraction and re-induction, cost and sensitive-reward functionals, and the
//! explicit feasible seed policy.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lp::LinearProgram;
use crate::model::{
    build_transition_kernel, Action, State, StateActionSpace, TransitionKernel, UserSpec,
};

/// Entries above `-CLAMP_TOL` are clamped to zero when a measure is built.
pub const CLAMP_TOL: f64 = 1e-12;
/// Normalization tolerance of an occupation measure.
pub const MASS_TOL: f64 = 1e-9;
/// Balance-equation residual tolerance of an occupation measure.
pub const BALANCE_TOL: f64 = 1e-8;
/// Time-average SNR at or below this counts as zero.
pub const POSITIVE_SNR_TOL: f64 = 1e-12;
/// State marginals at or below this are treated as unvisited.
pub const VISIT_TOL: f64 = 1e-13;

/// Which SNR weight the sensitive rewards use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SnrWeight {
    /// `h·p·1{q>0}`: transmitting from an empty queue earns nothing.
    #[default]
    QueueGated,
    /// `h·p` regardless of the queue.
    Literal,
}

impl SnrWeight {
    pub fn value(self, space: &StateActionSpace, s: State, a: Action) -> f64 {
        match self {
            SnrWeight::QueueGated => space.effective_snr(s, a),
            SnrWeight::Literal => space.channel_gain(s.channel) * space.power_value(a.power),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OccupationMeasure {
    space: StateActionSpace,
    z: Vec<f64>,
}

impl OccupationMeasure {
    /// Wraps a raw vector, clamping round-off negatives to zero.
    pub fn new(space: StateActionSpace, mut z: Vec<f64>) -> Result<Self> {
        if z.len() != space.num_pairs() {
            return Err(crate::error::invalid(
                "occupation",
                format!("expected {} entries, got {}", space.num_pairs(), z.len()),
            ));
        }
        for v in &mut z {
            if !v.is_finite() || *v < -CLAMP_TOL {
                return Err(crate::error::invalid(
                    "occupation",
                    format!("entry {v} is negative"),
                ));
            }
            *v = v.max(0.0);
        }
        let mass: f64 = z.iter().sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(crate::error::invalid(
                "occupation",
                format!("total mass {mass}"),
            ));
        }
        Ok(OccupationMeasure { space, z })
    }

    pub fn space(&self) -> StateActionSpace {
        self.space
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.z
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.z[self.space.pair_index(state, action)]
    }

    pub fn state_marginal(&self, state: usize) -> f64 {
        let na = self.space.num_actions();
        self.z[state * na..(state + 1) * na].iter().sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.z.iter().sum()
    }

    /// `max_y |Σ_{x,a} (1{y=x} - P(y|x,a)) z(x,a)|`.
    pub fn balance_residual(&self, kernel: &TransitionKernel) -> f64 {
        let space = self.space;
        let ns = space.num_states();
        let mut flow = vec![0.0; ns];
        for x in 0..ns {
            for a in 0..space.num_actions() {
                let v = self.get(x, a);
                if v == 0.0 {
                    continue;
                }
                flow[x] += v;
                for (y, p) in kernel.row(x, a).iter().enumerate() {
                    flow[y] -= p * v;
                }
            }
        }
        flow.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn linear(&self, weights: &[f64]) -> f64 {
        crate::lp::dot(weights, &self.z)
    }

    pub fn l2_distance(&self, other: &OccupationMeasure) -> f64 {
        self.z
            .iter()
            .zip(&other.z)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn linf_distance(&self, other: &OccupationMeasure) -> f64 {
        self.z
            .iter()
            .zip(&other.z)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// The constraint skeleton of the feasible set: normalization, one balance row
/// per state, then the power and queue rows. The objective is zero.
pub fn build_polytope(spec: &UserSpec, kernel: &TransitionKernel) -> LinearProgram {
    let space = kernel.space();
    let n = space.num_pairs();
    let ns = space.num_states();
    let na = space.num_actions();
    let mut lp = LinearProgram::new(n);
    lp.add_eq(vec![1.0; n], 1.0);
    for y in 0..ns {
        let mut row = vec![0.0; n];
        for x in 0..ns {
            for a in 0..na {
                let idx = space.pair_index(x, a);
                row[idx] = f64::from(u8::from(x == y)) - kernel.prob(x, a, y);
            }
        }
        lp.add_eq(row, 0.0);
    }
    lp.add_le(power_weights(&space), spec.power_cap);
    lp.add_le(queue_weights(&space), spec.queue_cap);
    lp
}

pub fn power_weights(space: &StateActionSpace) -> Vec<f64> {
    space
        .iter_pairs()
        .map(|(_, _, a)| space.power_value(a.power))
        .collect()
}

pub fn queue_weights(space: &StateActionSpace) -> Vec<f64> {
    space.iter_pairs().map(|(_, s, _)| s.queue as f64).collect()
}

pub fn avg_power(z: &OccupationMeasure) -> f64 {
    z.linear(&power_weights(&z.space))
}

pub fn avg_queue(z: &OccupationMeasure) -> f64 {
    z.linear(&queue_weights(&z.space))
}

/// Coefficients of the k-th sensitive reward `Σ (-1)^{k+1} w^k z`.
pub fn sensitive_weights(space: &StateActionSpace, k: u32, weight: SnrWeight) -> Vec<f64> {
    assert!(k >= 1, "sensitive rewards start at k = 1");
    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
    space
        .iter_pairs()
        .map(|(_, s, a)| sign * weight.value(space, s, a).powi(k as i32))
        .collect()
}

pub fn sensitive_reward(z: &OccupationMeasure, k: u32, weight: SnrWeight) -> f64 {
    z.linear(&sensitive_weights(&z.space, k, weight))
}

/// Stationary randomized policy `u(a | x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTable {
    space: StateActionSpace,
    probs: Vec<f64>,
    unvisited: Vec<bool>,
}

impl PolicyTable {
    /// Builds a policy from `u(a|x)` laid out like an occupation vector.
    pub fn new(space: StateActionSpace, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != space.num_pairs() {
            return Err(crate::error::invalid("policy", "wrong length"));
        }
        let na = space.num_actions();
        for (x, row) in probs.chunks(na).enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (s - 1.0).abs() > 1e-9 {
                return Err(crate::error::invalid(
                    "policy",
                    format!("state {x} is not a distribution"),
                ));
            }
        }
        Ok(PolicyTable {
            space,
            probs,
            unvisited: vec![false; space.num_states()],
        })
    }

    /// Picks one action per state.
    pub fn deterministic(space: StateActionSpace, choose: impl Fn(State) -> Action) -> Self {
        let na = space.num_actions();
        let mut probs = vec![0.0; space.num_pairs()];
        for x in 0..space.num_states() {
            let a = space.action_index(choose(space.state(x)));
            probs[x * na + a] = 1.0;
        }
        PolicyTable {
            space,
            probs,
            unvisited: vec![false; space.num_states()],
        }
    }

    pub fn space(&self) -> StateActionSpace {
        self.space
    }

    pub fn action_probs(&self, state: usize) -> &[f64] {
        let na = self.space.num_actions();
        &self.probs[state * na..(state + 1) * na]
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.action_probs(state)[action]
    }

    /// Whether `state` had zero mass in the measure this policy came from.
    pub fn is_unvisited(&self, state: usize) -> bool {
        self.unvisited[state]
    }

    pub fn is_deterministic(&self) -> bool {
        self.probs.iter().all(|&p| p == 0.0 || p == 1.0)
    }
}

/// `u(a|x) = z(x,a) / Σ_a z(x,a)`; unvisited states get the uniform action
/// distribution and are flagged.
pub fn extract_policy(z: &OccupationMeasure) -> PolicyTable {
    let space = z.space;
    let na = space.num_actions();
    let mut probs = vec![0.0; space.num_pairs()];
    let mut unvisited = vec![false; space.num_states()];
    for x in 0..space.num_states() {
        let mass = z.state_marginal(x);
        let row = &mut probs[x * na..(x + 1) * na];
        if mass > VISIT_TOL {
            for (a, p) in row.iter_mut().enumerate() {
                *p = z.get(x, a) / mass;
            }
        } else {
            row.fill(1.0 / na as f64);
            unvisited[x] = true;
        }
    }
    PolicyTable {
        space,
        probs,
        unvisited,
    }
}

/// Stationary distribution of a row-stochastic matrix with a single
/// recurrent class.
pub fn stationary_distribution(chain: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = chain.nrows();
    let mut a = chain.transpose() - DMatrix::<f64>::identity(n, n);
    let sv = a.singular_values();
    let scale = sv.max().max(1.0);
    let nullity = sv.iter().filter(|&&s| s <= 1e-9 * scale).count();
    if nullity != 1 {
        return Err(Error::NotUnichain { classes: nullity });
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&rhs)
        .ok_or(Error::NotUnichain { classes: 0 })?;
    let mut pi: Vec<f64> = pi.iter().map(|v| v.max(0.0)).collect();
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= s);
    Ok(pi)
}

/// Occupation measure of a stationary policy: `z(x,a) = π(x) u(a|x)` with `π`
/// the stationary law of the state chain the policy induces.
pub fn induced_occupation(
    policy: &PolicyTable,
    kernel: &TransitionKernel,
) -> Result<OccupationMeasure> {
    let space = policy.space;
    let ns = space.num_states();
    let na = space.num_actions();
    let mut chain = DMatrix::zeros(ns, ns);
    for x in 0..ns {
        for a in 0..na {
            let u = policy.prob(x, a);
            if u == 0.0 {
                continue;
            }
            for (y, p) in kernel.row(x, a).iter().enumerate() {
                chain[(x, y)] += u * p;
            }
        }
    }
    let pi = stationary_distribution(&chain)?;
    let z = (0..space.num_pairs())
        .map(|i| pi[i / na] * policy.probs[i])
        .collect();
    OccupationMeasure::new(space, z)
}

/// The admission-randomized seed policy: transmit one packet at the smallest
/// positive power whenever the queue is non-empty, and at an empty queue admit
/// arrivals with probability `s`.
pub fn seed_policy(space: StateActionSpace, admit_probability: f64) -> PolicyTable {
    let na = space.num_actions();
    let mut probs = vec![0.0; space.num_pairs()];
    let transmit = space.action_index(Action {
        admit: false,
        power: 1,
    });
    let idle = space.action_index(Action {
        admit: false,
        power: 0,
    });
    let admit = space.action_index(Action {
        admit: true,
        power: 0,
    });
    for x in 0..space.num_states() {
        let row = &mut probs[x * na..(x + 1) * na];
        if space.state(x).queue > 0 {
            row[transmit] = 1.0;
        } else {
            row[idle] = 1.0 - admit_probability;
            row[admit] = admit_probability;
        }
    }
    PolicyTable {
        space,
        probs,
        unvisited: vec![false; space.num_states()],
    }
}

#[derive(Clone, Debug)]
pub struct SeedPolicy {
    pub admit_probability: f64,
    pub measure: OccupationMeasure,
}

/// Finds an admission probability at which the seed policy meets both
/// average constraints and has positive time-average SNR.
///
/// Starts from 90% of `min{Q̄/Q, P̄/(Q p¹), 1}` and halves `s` until both
/// constraints hold (the queue bound behind that starting point is not tight
/// for heavy arrivals). Requires `P(w = 0) < 1`, which every positive Poisson
/// rate satisfies.
pub fn feasible_seed(spec: &UserSpec) -> Result<SeedPolicy> {
    let chain = DMatrix::from_fn(spec.channel_levels + 1, spec.channel_levels + 1, |i, j| {
        spec.channel_chain[i][j]
    });
    if let Ok(pi) = stationary_distribution(&chain) {
        if pi[1..].iter().sum::<f64>() <= POSITIVE_SNR_TOL {
            return Err(Error::NoPositiveSnrPolicy);
        }
    }
    let kernel = build_transition_kernel(spec);
    let space = kernel.space();
    let q = spec.buffer_size as f64;
    let p1 = space.power_value(1);
    let mut s = 0.9 * (spec.queue_cap / q).min(spec.power_cap / (q * p1)).min(1.0);
    for _ in 0..64 {
        let measure = induced_occupation(&seed_policy(space, s), &kernel)?;
        if avg_power(&measure) <= spec.power_cap && avg_queue(&measure) <= spec.queue_cap {
            if sensitive_reward(&measure, 1, SnrWeight::QueueGated) <= POSITIVE_SNR_TOL {
                return Err(Error::NoPositiveSnrPolicy);
            }
            return Ok(SeedPolicy {
                admit_probability: s,
                measure,
            });
        }
        s *= 0.5;
    }
    Err(Error::InfeasiblePolytope { user: 0 })
}

pub fn feasible_seed_measure(spec: &UserSpec) -> Result<OccupationMeasure> {
    feasible_seed(spec).map(|s| s.measure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{solve, FEAS_TOL};
    use crate::model::truncated_arrival_pmf;
    use approx::assert_abs_diff_eq;

    fn small() -> UserSpec {
        UserSpec::new(1, 1, 1, 1.0, 1.0, 0.49).unwrap()
    }

    fn point_mass(space: StateActionSpace, s: State, a: Action) -> OccupationMeasure {
        let mut z = vec![0.0; space.num_pairs()];
        z[space.pair_index(space.state_index(s), space.action_index(a))] = 1.0;
        OccupationMeasure::new(space, z).unwrap()
    }

    #[test]
    fn polytope_sizes() {
        let spec = small();
        let k = build_transition_kernel(&spec);
        let lp = build_polytope(&spec, &k);
        assert_eq!(spec.space().num_states(), 4);
        assert_eq!(spec.space().num_actions(), 4);
        assert_eq!(lp.num_vars(), 16);
        assert_eq!(lp.eq_constraints().len(), 5);
        assert_eq!(lp.le_constraints().len(), 2);
    }

    #[test]
    fn uniform_vector_breaks_balance() {
        let spec = UserSpec::new(2, 2, 1, 0.5, 0.5, 0.49).unwrap();
        let k = build_transition_kernel(&spec);
        let n = spec.space().num_pairs();
        let z = OccupationMeasure::new(spec.space(), vec![1.0 / n as f64; n]).unwrap();
        assert!(z.balance_residual(&k) > 1e-3);
    }

    #[test]
    fn cost_functionals_on_point_masses() {
        let space = StateActionSpace::new(2, 3, 2);
        let idle = point_mass(
            space,
            State {
                channel: 1,
                queue: 0,
            },
            Action {
                admit: false,
                power: 0,
            },
        );
        assert_eq!((avg_power(&idle), avg_queue(&idle)), (0.0, 0.0));
        let busy = point_mass(
            space,
            State {
                channel: 0,
                queue: 2,
            },
            Action {
                admit: true,
                power: 3,
            },
        );
        assert_eq!((avg_power(&busy), avg_queue(&busy)), (3.0, 2.0));
    }

    #[test]
    fn sensitive_reward_signs_and_linearity() {
        let space = StateActionSpace::new(1, 2, 1);
        let z = point_mass(
            space,
            State {
                channel: 1,
                queue: 1,
            },
            Action {
                admit: false,
                power: 2,
            },
        );
        assert_eq!(sensitive_reward(&z, 1, SnrWeight::QueueGated), 2.0);
        assert_eq!(sensitive_reward(&z, 2, SnrWeight::QueueGated), -4.0);
        let mut mix = vec![0.0; space.num_pairs()];
        let s = space.state_index(State {
            channel: 1,
            queue: 1,
        });
        mix[space.pair_index(
            s,
            space.action_index(Action {
                admit: false,
                power: 1,
            }),
        )] = 0.5;
        mix[space.pair_index(
            s,
            space.action_index(Action {
                admit: false,
                power: 2,
            }),
        )] = 0.5;
        let mix = OccupationMeasure::new(space, mix).unwrap();
        assert_eq!(sensitive_reward(&mix, 3, SnrWeight::QueueGated), 4.5);
        // the gate only matters at q = 0
        let empty = point_mass(
            space,
            State {
                channel: 1,
                queue: 0,
            },
            Action {
                admit: false,
                power: 2,
            },
        );
        assert_eq!(sensitive_reward(&empty, 1, SnrWeight::QueueGated), 0.0);
        assert_eq!(sensitive_reward(&empty, 1, SnrWeight::Literal), 2.0);
    }

    #[test]
    fn extract_uniform_and_deterministic() {
        let space = StateActionSpace::new(1, 1, 1);
        let na = space.num_actions();
        let mut z = vec![0.0; space.num_pairs()];
        z[..na].fill(1.0 / na as f64);
        let p = extract_policy(&OccupationMeasure::new(space, z).unwrap());
        assert!(p.action_probs(0).iter().all(|&u| u == 0.25));
        assert!(p.is_unvisited(1) && !p.is_unvisited(0));

        let det = PolicyTable::deterministic(space, |_| Action {
            admit: true,
            power: 1,
        });
        let kernel = build_transition_kernel(&small());
        let z = induced_occupation(&det, &kernel).unwrap();
        let back = extract_policy(&z);
        for x in 0..space.num_states() {
            if !back.is_unvisited(x) {
                assert_eq!(back.action_probs(x), det.action_probs(x));
            }
        }
    }

    #[test]
    fn frozen_queue_is_not_unichain() {
        // never transmitting and never admitting keeps every queue length forever
        let spec = small();
        let kernel = build_transition_kernel(&spec);
        let silent = PolicyTable::deterministic(spec.space(), |_| Action {
            admit: false,
            power: 0,
        });
        assert!(matches!(
            induced_occupation(&silent, &kernel),
            Err(Error::NotUnichain { classes: 2 })
        ));
    }

    #[test]
    fn never_admit_drains_to_empty() {
        let spec = small();
        let kernel = build_transition_kernel(&spec);
        let drain = PolicyTable::deterministic(spec.space(), |_| Action {
            admit: false,
            power: 1,
        });
        let z = induced_occupation(&drain, &kernel).unwrap();
        let space = spec.space();
        // two-state chain [[.5,.5],[.5,.5]] has stationary law (1/2, 1/2)
        for h in 0..2 {
            let x = space.state_index(State {
                channel: h,
                queue: 0,
            });
            assert_abs_diff_eq!(z.state_marginal(x), 0.5, epsilon = 1e-12);
            let x1 = space.state_index(State {
                channel: h,
                queue: 1,
            });
            assert_eq!(z.state_marginal(x1), 0.0);
        }
        assert!(z.balance_residual(&kernel) <= 1e-10);
    }

    #[test]
    fn seed_policy_matches_closed_form() {
        let spec = small();
        let kernel = build_transition_kernel(&spec);
        let s = 0.37;
        let z = induced_occupation(&seed_policy(spec.space(), s), &kernel).unwrap();
        let f0 = truncated_arrival_pmf(spec.arrival_rate, 1)[0];
        let c = 1.0 - f0;
        let pi0 = 1.0 / (1.0 + s * c);
        let space = spec.space();
        let q_marginal = |q| {
            (0..=1)
                .map(|h| {
                    z.state_marginal(space.state_index(State {
                        channel: h,
                        queue: q,
                    }))
                })
                .sum::<f64>()
        };
        assert_abs_diff_eq!(q_marginal(0), pi0, epsilon = 1e-12);
        assert_abs_diff_eq!(q_marginal(1), s * pi0 * (1.0 - f0), epsilon = 1e-12);
        assert!(z.balance_residual(&kernel) <= 1e-10);
    }

    #[test]
    fn seed_measure_is_feasible_with_positive_snr() {
        let spec = UserSpec::new(3, 3, 3, 2.1, 1.6, 1.5).unwrap();
        let seed = feasible_seed(&spec).unwrap();
        let kernel = build_transition_kernel(&spec);
        let lp = build_polytope(&spec, &kernel);
        assert!(lp.max_violation(seed.measure.as_slice()) <= BALANCE_TOL);
        assert!(sensitive_reward(&seed.measure, 1, SnrWeight::QueueGated) > 0.0);
    }

    #[test]
    fn heavy_arrivals_force_smaller_admission() {
        // the starting s violates the queue cap here; halving must recover
        let spec = UserSpec::new(1, 1, 3, 10.0, 0.1, 5.0).unwrap();
        let seed = feasible_seed(&spec).unwrap();
        assert!(seed.admit_probability < 0.9 * 0.1 / 3.0);
        assert!(avg_queue(&seed.measure) <= 0.1);
    }

    #[test]
    fn zero_gain_channel_has_no_positive_snr_policy() {
        let chain = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let spec = UserSpec::with_channel_chain(1, 1, 1, 1.0, 1.0, 1.0, chain).unwrap();
        assert!(matches!(
            feasible_seed(&spec),
            Err(Error::NoPositiveSnrPolicy)
        ));
    }

    #[test]
    fn reducible_chain_is_not_unichain() {
        let chain = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.5, 0.0, 0.5]);
        assert!(matches!(
            stationary_distribution(&chain),
            Err(Error::NotUnichain { classes: 2 })
        ));
    }

    #[test]
    fn lp_optimum_round_trips_through_policy() {
        let spec = UserSpec::new(2, 3, 2, 1.55, 0.9, 1.0).unwrap();
        let kernel = build_transition_kernel(&spec);
        let lp = build_polytope(&spec, &kernel).with_objective(sensitive_weights(
            &spec.space(),
            1,
            SnrWeight::QueueGated,
        ));
        let sol = solve(&lp);
        let z = OccupationMeasure::new(spec.space(), sol.x.unwrap()).unwrap();
        assert!(z.balance_residual(&kernel) <= BALANCE_TOL);
        assert!(avg_power(&z) <= spec.power_cap + FEAS_TOL);
        let back = induced_occupation(&extract_policy(&z), &kernel).unwrap();
        assert!(z.linf_distance(&back) <= 1e-8);
    }
}
