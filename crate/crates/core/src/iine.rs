//! Infinitely invariant equilibria: the policy reached by maximizing the
//! signed SNR moments of one user in lexicographic order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cmdp::{
    build_polytope, sensitive_reward, sensitive_weights, OccupationMeasure, SnrWeight,
    POSITIVE_SNR_TOL,
};
use crate::error::{Error, Result};
use crate::game::{snr_distribution, Game, GameProfile, IterationConfig, SnrDistribution};
use crate::lp::{solve_lexicographic, LexRealization, SolverOptions};
use crate::model::{Scenario, TransitionKernel, UserSpec};

/// Default equilibrium-gap tolerance when locating the invariance threshold.
pub const THRESHOLD_GAP_TOL: f64 = 1e-6;

/// Sorted distinct values of `h·p` over channel gains `{0, 1/K, …, 1}` and
/// power levels `{0, …, L}`, zero included.
pub fn distinct_snr_values(spec: &UserSpec) -> Vec<f64> {
    // products are k·p / K with integer k·p, so dedupe on the integers
    let mut numerators: Vec<usize> = (0..=spec.channel_levels)
        .flat_map(|k| (0..=spec.power_levels).map(move |p| k * p))
        .collect();
    numerators.sort_unstable();
    numerators.dedup();
    let k = spec.channel_levels as f64;
    numerators.into_iter().map(|n| n as f64 / k).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IineOptions {
    pub realization: LexRealization,
    pub weight: SnrWeight,
    pub solver: SolverOptions,
}

impl Default for IineOptions {
    fn default() -> Self {
        IineOptions {
            realization: LexRealization::face(),
            weight: SnrWeight::default(),
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LexStageRecord {
    /// One-based moment order.
    pub k: u32,
    pub value: f64,
    pub restrictions: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IineResult {
    pub measure: OccupationMeasure,
    pub stages: Vec<LexStageRecord>,
    pub m: usize,
    pub snr_marginal: SnrDistribution,
}

fn stage_objectives(spec: &UserSpec, m: usize, weight: SnrWeight) -> Vec<Vec<f64>> {
    let space = spec.space();
    (1..=m as u32)
        .map(|k| sensitive_weights(&space, k, weight))
        .collect()
}

fn run_stages(
    spec: &UserSpec,
    kernel: &TransitionKernel,
    objectives: &[Vec<f64>],
    opts: &IineOptions,
) -> Result<(OccupationMeasure, Vec<f64>, Vec<usize>)> {
    let lp = build_polytope(spec, kernel);
    let out = solve_lexicographic(&lp, objectives, opts.realization, &opts.solver).map_err(
        |(stage, status)| Error::StageFailed {
            stage: stage + 1,
            status,
        },
    )?;
    let measure = OccupationMeasure::new(kernel.space(), out.x)?;
    let values = out.stages.iter().map(|s| s.value).collect();
    let restrictions = out.stages.iter().map(|s| s.restrictions).collect();
    Ok((measure, values, restrictions))
}

/// Solves the `M` lexicographic stages for one user. Depends on nothing but
/// that user's spec and kernel.
pub fn compute_iine(
    spec: &UserSpec,
    kernel: &TransitionKernel,
    opts: &IineOptions,
) -> Result<IineResult> {
    let m = distinct_snr_values(spec).len();
    let objectives = stage_objectives(spec, m, opts.weight);
    let (measure, values, restrictions) = run_stages(spec, kernel, &objectives, opts)?;
    if values[0] <= POSITIVE_SNR_TOL {
        return Err(Error::IinePremiseViolated { value: values[0] });
    }
    let stages = values
        .iter()
        .zip(&restrictions)
        .enumerate()
        .map(|(i, (&value, &restrictions))| LexStageRecord {
            k: i as u32 + 1,
            value,
            restrictions,
        })
        .collect();
    Ok(IineResult {
        snr_marginal: snr_distribution(&measure),
        measure,
        stages,
        m,
    })
}

#[derive(Clone, Debug)]
pub struct UniquenessReport {
    /// Largest pairwise l∞ distance between the trial SNR marginals.
    pub max_distance: f64,
    /// Largest pairwise l∞ distance between the trial measures themselves.
    pub max_measure_distance: f64,
    pub measures: Vec<OccupationMeasure>,
}

/// Re-solves the lexicographic sequence with `trials` random tie-breaking
/// objectives appended after the last stage, then compares the resulting
/// SNR marginals.
pub fn snr_marginal_uniqueness_check(
    spec: &UserSpec,
    kernel: &TransitionKernel,
    trials: usize,
    seed: u64,
    opts: &IineOptions,
) -> Result<UniquenessReport> {
    let m = distinct_snr_values(spec).len();
    let base = stage_objectives(spec, m, opts.weight);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.space().num_pairs();
    let mut measures = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut objectives = base.clone();
        objectives.push((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        measures.push(run_stages(spec, kernel, &objectives, opts)?.0);
    }
    let marginals: Vec<SnrDistribution> = measures.iter().map(snr_distribution).collect();
    let mut max_distance = 0.0f64;
    let mut max_measure_distance = 0.0f64;
    for i in 0..measures.len() {
        for j in i + 1..measures.len() {
            max_distance = max_distance.max(marginals[i].linf_distance(&marginals[j]));
            max_measure_distance =
                max_measure_distance.max(measures[i].linf_distance(&measures[j]));
        }
    }
    Ok(UniquenessReport {
        max_distance,
        max_measure_distance,
        measures,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdConfig {
    pub gap_tol: f64,
    pub iteration: IterationConfig,
    pub iine: IineOptions,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            gap_tol: THRESHOLD_GAP_TOL,
            iteration: IterationConfig::default(),
            iine: IineOptions::default(),
        }
    }
}

/// Figures for one game size `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdRow {
    pub n: usize,
    /// Largest unilateral gain against the all-IINE profile.
    pub max_gap: f64,
    pub is_equilibrium: bool,
    /// `‖z₁(N) − z₁*‖₂` with `z(N)` from iterated best response.
    pub l2_distance: f64,
    /// `|T₁(z(N)) − T₁(z*(N))|`.
    pub reward_diff: f64,
    /// `|l¹(z₁(N)) − l¹(z₁*)|`.
    pub l1_diff: f64,
    pub ne_converged: bool,
    pub sweeps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdReport {
    pub iine: IineResult,
    pub rows: Vec<ThresholdRow>,
    /// Smallest `N` such that the all-IINE profile is an equilibrium for
    /// every size from `N` to `n_max`; `None` when not reached.
    pub threshold: Option<usize>,
}

/// Evaluates the symmetric game for `N = 1…n_max`.
pub fn find_invariance_threshold(
    spec: &UserSpec,
    noise_variance: f64,
    n_max: usize,
    cfg: &ThresholdConfig,
) -> Result<ThresholdReport> {
    let kernel = crate::model::build_transition_kernel(spec);
    let iine = compute_iine(spec, &kernel, &cfg.iine)?;
    let rows = (1..=n_max)
        .into_par_iter()
        .map(|n| threshold_row(spec, noise_variance, n, &iine, cfg))
        .collect::<Result<Vec<_>>>()?;
    let threshold = rows
        .iter()
        .rposition(|r| !r.is_equilibrium)
        .map_or(Some(1), |last_bad| {
            (last_bad + 1 < rows.len()).then(|| rows[last_bad + 1].n)
        })
        .filter(|_| !rows.is_empty());
    Ok(ThresholdReport {
        iine,
        rows,
        threshold,
    })
}

fn threshold_row(
    spec: &UserSpec,
    noise_variance: f64,
    n: usize,
    iine: &IineResult,
    cfg: &ThresholdConfig,
) -> Result<ThresholdRow> {
    let game = Game::new(Scenario::symmetric(spec.clone(), n, noise_variance)?)
        .with_solver(cfg.iine.solver);
    let invariant = GameProfile::uniform(iine.measure.clone(), n);
    let max_gap = game
        .verify_epsilon_ne(&invariant)?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let (ne, trace) = game.iterate_best_response(game.seed_profile()?, &cfg.iteration)?;
    let z1 = &ne.measures[0];
    Ok(ThresholdRow {
        n,
        max_gap,
        is_equilibrium: max_gap <= cfg.gap_tol,
        l2_distance: z1.l2_distance(&iine.measure),
        reward_diff: (game.average_rate(0, &ne) - game.average_rate(0, &invariant)).abs(),
        l1_diff: (sensitive_reward(z1, 1, cfg.iine.weight)
            - sensitive_reward(&iine.measure, 1, cfg.iine.weight))
        .abs(),
        ne_converged: trace.converged,
        sweeps: trace.sweeps(),
    })
}
