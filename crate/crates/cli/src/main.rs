//! Command-line runner for the equilibrium solvers and the simulator.
//!
//! Exit codes: 0 success, 1 a `--check` or validation comparison failed,
//! 2 best-response iteration did not converge, 3 bad input.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use macgame::config::{read_scenario, ScenarioFile};
use macgame::experiment::{
    find_preset, run_table1, write_table1_csv, Entry, DEFAULT_N_MAX, PRESETS,
};
use macgame::game::{Game, GameProfile, IterationConfig};
use macgame::iine::{
    compute_iine, find_invariance_threshold, snr_marginal_uniqueness_check, IineOptions,
    ThresholdConfig,
};
use macgame::io;
use macgame::model::build_transition_kernel;
use macgame::sim::{validate_profile, SimConfig};

#[derive(Parser)]
#[command(
    name = "macgame",
    version,
    about = "Power/admission games on a multiple-access channel"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file or preset name (s1 … s7).
    #[arg(long)]
    scenario: String,
    /// Number of users when the scenario is a preset.
    #[arg(long, default_value_t = 2)]
    users: usize,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// M and N* for presets or scenario files, written to table1.csv.
    Table1 {
        /// Scenario files or preset names; all presets when omitted.
        #[arg(long)]
        scenario: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_N_MAX)]
        nmax: usize,
        #[arg(long, default_value_t = 1e-9)]
        eps: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Compare against the reference M and N* of each preset.
        #[arg(long)]
        check: bool,
    },
    /// Per-N distances between best-response equilibria and the invariant profile.
    Sweep {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = DEFAULT_N_MAX)]
        nmax: usize,
        #[arg(long, default_value_t = 1e-9)]
        eps: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Iterated best response from the feasible seed profile.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-9)]
        eps: f64,
        #[arg(long, default_value_t = 500)]
        max_sweeps: usize,
    },
    /// Lexicographic invariant policy of every user.
    Iine {
        #[command(flatten)]
        common: Common,
        /// Random tie-breaks for the SNR-marginal uniqueness check.
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Simulates the invariant (default) or best-response profile and compares
    /// with the predicted averages.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1_000_000)]
        horizon: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = macgame::sim::DEFAULT_BURN_IN)]
        burn_in: u64,
        /// Simulate the best-response equilibrium instead of the invariant profile.
        #[arg(long)]
        ne: bool,
        #[arg(long, default_value_t = 1e-9)]
        eps: f64,
    },
}

enum Failure {
    Input(anyhow::Error),
    Mismatch(String),
    NotConverged(String),
    Other(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Mismatch(_) => 1,
            Failure::NotConverged(_) => 2,
            Failure::Input(_) => 3,
            Failure::Other(_) => 1,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn input(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Input(e.into())
}

fn load(arg: &str, users: usize) -> Result<ScenarioFile, Failure> {
    if let Some(p) = find_preset(arg) {
        if users == 0 {
            return Err(input(anyhow::anyhow!("--users must be at least 1")));
        }
        return Ok(p.scenario(users));
    }
    read_scenario(Path::new(arg))
        .with_context(|| format!("reading scenario `{arg}`"))
        .map_err(input)
}

fn entry(arg: &str) -> Result<Entry, Failure> {
    match find_preset(arg) {
        Some(p) => Ok(Entry::from_preset(p)),
        None => {
            let file = load(arg, 1)?;
            if !file.scenario.symmetric {
                return Err(input(anyhow::anyhow!(
                    "`{arg}` is not a symmetric scenario"
                )));
            }
            let stem = Path::new(arg)
                .file_stem()
                .map_or(arg.to_string(), |s| s.to_string_lossy().into_owned());
            Ok(Entry::from_file(&file, &stem))
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(input)?;
    let path = dir.join(name);
    let f = File::create(&path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(input)?;
    Ok(BufWriter::new(f))
}

fn check_eps(eps: f64) -> Result<(), Failure> {
    if eps.is_finite() && eps > 0.0 {
        Ok(())
    } else {
        Err(input(anyhow::anyhow!("--eps must be positive")))
    }
}

fn threshold_config(eps: f64) -> ThresholdConfig {
    let mut cfg = ThresholdConfig::default();
    cfg.iteration.epsilon = eps;
    cfg
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Table1 {
            scenario,
            nmax,
            eps,
            out,
            check,
        } => {
            check_eps(eps)?;
            let entries = if scenario.is_empty() {
                PRESETS.iter().map(Entry::from_preset).collect()
            } else {
                scenario
                    .iter()
                    .map(|s| entry(s))
                    .collect::<Result<Vec<_>, _>>()?
            };
            let rows = run_table1(&entries, nmax, &threshold_config(eps));
            write_table1_csv(create(&out, "table1.csv")?, &rows).map_err(anyhow::Error::from)?;
            println!("scenario  M  N*    expected");
            let mut mismatches = Vec::new();
            for r in &rows {
                let n = r.threshold().map_or("none".to_string(), |n| n.to_string());
                let expected = r
                    .entry
                    .expected
                    .map_or(String::new(), |(m, n)| format!("{m} {n}"));
                println!("{:<8} {:>2} {:>4}    {expected}", r.entry.name, r.m, n);
                if let Err(e) = &r.outcome {
                    eprintln!("{}: {e}", r.entry.name);
                }
                if check && r.matches_expected() == Some(false) {
                    mismatches.push(r.entry.name.clone());
                }
            }
            if !mismatches.is_empty() {
                return Err(Failure::Mismatch(format!(
                    "differs from reference: {}",
                    mismatches.join(", ")
                )));
            }
            if rows.iter().any(|r| r.outcome.is_ok() && !r.converged()) {
                return Err(Failure::NotConverged(
                    "best response did not converge for some N".into(),
                ));
            }
            Ok(())
        }
        Command::Sweep {
            scenario,
            nmax,
            eps,
            out,
        } => {
            check_eps(eps)?;
            let e = entry(&scenario)?;
            let report =
                find_invariance_threshold(&e.spec, e.noise_variance, nmax, &threshold_config(eps))
                    .map_err(anyhow::Error::from)?;
            io::write_sweep_csv(create(&out, "sweep.csv")?, &report.rows)
                .map_err(anyhow::Error::from)?;
            println!("N  l2_distance  reward_diff  l1_diff  max_gap");
            for r in &report.rows {
                println!(
                    "{}  {:.3e}  {:.3e}  {:.3e}  {:.3e}",
                    r.n, r.l2_distance, r.reward_diff, r.l1_diff, r.max_gap
                );
            }
            match report.threshold {
                Some(n) => println!("N* = {n}"),
                None => println!("N* not reached by N = {nmax}"),
            }
            if report.rows.iter().any(|r| !r.ne_converged) {
                return Err(Failure::NotConverged(
                    "best response did not converge for some N".into(),
                ));
            }
            Ok(())
        }
        Command::Solve {
            common,
            eps,
            max_sweeps,
        } => {
            check_eps(eps)?;
            let file = load(&common.scenario, common.users)?;
            let game = Game::new(file.scenario);
            let cfg = IterationConfig {
                epsilon: eps,
                max_sweeps,
                ..IterationConfig::default()
            };
            let seed = game.seed_profile().map_err(input)?;
            let (profile, trace) = game
                .iterate_best_response(seed, &cfg)
                .map_err(anyhow::Error::from)?;
            io::write_trace_csv(create(&common.out, "trace.csv")?, &trace)
                .map_err(anyhow::Error::from)?;
            for (i, z) in profile.measures.iter().enumerate() {
                io::write_measure_csv(create(&common.out, &format!("measure_user{i}.csv"))?, z)
                    .map_err(anyhow::Error::from)?;
            }
            let gaps = game
                .verify_epsilon_ne(&profile)
                .map_err(anyhow::Error::from)?;
            println!("sweeps {}  converged {}", trace.sweeps(), trace.converged);
            for (i, (t, g)) in game.rewards(&profile).iter().zip(&gaps).enumerate() {
                println!("user {i}: reward {t:.9}  gap {g:.3e}");
            }
            if !trace.converged {
                return Err(Failure::NotConverged(format!(
                    "no convergence in {max_sweeps} sweeps"
                )));
            }
            Ok(())
        }
        Command::Iine {
            common,
            trials,
            seed,
        } => {
            let file = load(&common.scenario, common.users)?;
            let opts = IineOptions::default();
            // identical users share one invariant policy
            let count = if file.scenario.symmetric {
                1
            } else {
                file.scenario.num_users()
            };
            for (i, spec) in file.scenario.users.iter().take(count).enumerate() {
                let kernel = build_transition_kernel(spec);
                let r = compute_iine(spec, &kernel, &opts).map_err(input)?;
                let u = snr_marginal_uniqueness_check(spec, &kernel, trials, seed, &opts)
                    .map_err(anyhow::Error::from)?;
                io::write_stages_csv(create(&common.out, &format!("stages_user{i}.csv"))?, &r)
                    .map_err(anyhow::Error::from)?;
                io::write_measure_csv(
                    create(&common.out, &format!("iine_user{i}.csv"))?,
                    &r.measure,
                )
                .map_err(anyhow::Error::from)?;
                println!("user {i}: M = {}", r.m);
                for s in &r.stages {
                    println!("  stage {}: {:.12}", s.k, s.value);
                }
                println!(
                    "  SNR-marginal spread over {trials} tie-breaks: {:.3e}",
                    u.max_distance
                );
            }
            Ok(())
        }
        Command::Simulate {
            common,
            horizon,
            seed,
            burn_in,
            ne,
            eps,
        } => {
            check_eps(eps)?;
            if horizon == 0 {
                return Err(input(anyhow::anyhow!("--horizon must be at least 1")));
            }
            let file = load(&common.scenario, common.users)?;
            let game = Game::new(file.scenario.clone());
            let profile = if ne {
                let cfg = IterationConfig {
                    epsilon: eps,
                    ..IterationConfig::default()
                };
                let (p, trace) = game
                    .iterate_best_response(game.seed_profile().map_err(input)?, &cfg)
                    .map_err(anyhow::Error::from)?;
                if !trace.converged {
                    return Err(Failure::NotConverged(
                        "best response did not converge".into(),
                    ));
                }
                p
            } else {
                let opts = IineOptions::default();
                GameProfile::new(
                    file.scenario
                        .users
                        .iter()
                        .map(|s| {
                            compute_iine(s, &build_transition_kernel(s), &opts).map(|r| r.measure)
                        })
                        .collect::<Result<_, _>>()
                        .map_err(input)?,
                )
            };
            let cfg = SimConfig {
                horizon,
                seed,
                burn_in,
            };
            let report = validate_profile(&game, &profile, &cfg).map_err(anyhow::Error::from)?;
            io::write_sim_csv(create(&common.out, "sim.csv")?, &report.stats)
                .map_err(anyhow::Error::from)?;
            io::write_validation_csv(create(&common.out, "validation.csv")?, &report)
                .map_err(anyhow::Error::from)?;
            for (i, u) in report.users.iter().enumerate() {
                for c in &u.checks {
                    println!(
                        "user {i} {:<10} predicted {:.6}  simulated {:.6} ± {:.2e}  {}",
                        c.name,
                        c.predicted,
                        c.estimate.mean,
                        c.estimate.std_err,
                        if c.pass { "ok" } else { "FAIL" }
                    );
                }
            }
            if !report.passed() {
                return Err(Failure::Mismatch(
                    "simulation disagrees with prediction".into(),
                ));
            }
            Ok(())
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
fn execute<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 3 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(f) => {
            match &f {
                Failure::Input(e) | Failure::Other(e) => eprintln!("error: {e:#}"),
                Failure::Mismatch(m) | Failure::NotConverged(m) => eprintln!("error: {m}"),
            }
            f.code()
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(execute(std::env::args_os()))
}

#[cfg(test)]
mod tests {
    use std::fs;
    use std::path::Path;

    use macgame::experiment::find_preset;
    use macgame::io::read_measure_csv;

    use super::execute;

    fn macgame(args: &[&str], out: &Path) -> u8 {
        let mut argv = vec!["macgame"];
        argv.extend_from_slice(args);
        argv.extend_from_slice(&["--out", out.to_str().unwrap()]);
        execute(argv)
    }

    fn rows(path: &Path) -> Vec<Vec<String>> {
        let mut rdr = csv::Reader::from_path(path).unwrap();
        let mut all = vec![rdr.headers().unwrap().iter().map(String::from).collect()];
        all.extend(
            rdr.records()
                .map(|r| r.unwrap().iter().map(String::from).collect()),
        );
        all
    }

    #[test]
    fn table1_writes_one_row_per_scenario() {
        let dir = tempfile::tempdir().unwrap();
        let out = macgame(
            &[
                "table1",
                "--scenario",
                "s7",
                "--scenario",
                "s6",
                "--nmax",
                "3",
                "--check",
            ],
            dir.path(),
        );
        assert_eq!(out, 0);
        let table = rows(&dir.path().join("table1.csv"));
        assert_eq!(
            table[0][..9],
            [
                "scenario",
                "K",
                "L",
                "Q",
                "power_cap",
                "queue_cap",
                "lambda",
                "M",
                "N_star"
            ]
        );
        assert_eq!(table.len(), 3);
        assert_eq!(
            (
                table[1][0].as_str(),
                table[1][7].as_str(),
                table[1][8].as_str()
            ),
            ("s7", "6", "1")
        );
        assert_eq!(
            (
                table[2][0].as_str(),
                table[2][7].as_str(),
                table[2][8].as_str()
            ),
            ("s6", "6", "2")
        );
    }

    #[test]
    fn check_mismatch_exits_one() {
        let dir = tempfile::tempdir().unwrap();
        // with N_max = 1 the reference N* = 2 cannot be reached
        let out = macgame(
            &["table1", "--scenario", "s6", "--nmax", "1", "--check"],
            dir.path(),
        );
        assert_eq!(out, 1);
        let table = rows(&dir.path().join("table1.csv"));
        assert_eq!(table[1][8], "none");
        assert_eq!(table[1][12], "false");
    }

    #[test]
    fn solve_measures_parse_back() {
        let dir = tempfile::tempdir().unwrap();
        let out = macgame(&["solve", "--scenario", "s1", "--users", "2"], dir.path());
        assert_eq!(out, 0);
        let space = find_preset("s1").unwrap().spec().space();
        for i in 0..2 {
            let file = fs::File::open(dir.path().join(format!("measure_user{i}.csv"))).unwrap();
            let z = read_measure_csv(file, space).unwrap();
            assert!((z.total_mass() - 1.0).abs() <= 1e-9);
        }
        let trace = rows(&dir.path().join("trace.csv"));
        assert_eq!(
            trace[0],
            [
                "sweep",
                "user",
                "reward",
                "potential",
                "delta_linf",
                "delta_l2"
            ]
        );
        assert!(trace.len() > 2);
    }

    #[test]
    fn non_convergence_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let out = macgame(
            &[
                "solve",
                "--scenario",
                "s5",
                "--users",
                "3",
                "--max-sweeps",
                "1",
            ],
            dir.path(),
        );
        assert_eq!(out, 2);
    }

    #[test]
    fn iine_writes_stages_and_measures() {
        let dir = tempfile::tempdir().unwrap();
        let out = macgame(
            &["iine", "--scenario", "s4", "--users", "1", "--trials", "3"],
            dir.path(),
        );
        assert_eq!(out, 0);
        let stages = rows(&dir.path().join("stages_user0.csv"));
        assert_eq!(stages[0], ["k", "value", "restrictions"]);
        assert_eq!(stages.len(), 1 + 7);
        let space = find_preset("s4").unwrap().spec().space();
        read_measure_csv(
            fs::File::open(dir.path().join("iine_user0.csv")).unwrap(),
            space,
        )
        .unwrap();
    }

    #[test]
    fn simulate_is_seed_deterministic() {
        let run = |seed: &str| {
            let dir = tempfile::tempdir().unwrap();
            let out = macgame(
                &[
                    "simulate",
                    "--scenario",
                    "s1",
                    "--horizon",
                    "200000",
                    "--seed",
                    seed,
                ],
                dir.path(),
            );
            // a 3 SE band misses now and then at this horizon, which exits 1
            assert!(matches!(out, 0 | 1));
            let v = rows(&dir.path().join("validation.csv"));
            assert_eq!(
                v[0],
                ["user", "quantity", "predicted", "mean", "std_err", "pass"]
            );
            (
                fs::read(dir.path().join("sim.csv")).unwrap(),
                fs::read(dir.path().join("validation.csv")).unwrap(),
            )
        };
        let a = run("5");
        assert_eq!(a, run("5"));
        assert_ne!(a.0, run("6").0);
    }

    #[test]
    fn scenario_files_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("two.toml");
        fs::write(
            &path,
            "name = \"two\"\nnoise_variance = 1.0\nK = 2\nL = 2\nQ = 1\npower_cap = 0.5\nqueue_cap = 0.5\nlambda = 0.49\n\
             [[users]]\n[[users]]\nL = 3\npower_cap = 0.95\n",
        )
        .unwrap();
        let out = macgame(&["solve", "--scenario", path.to_str().unwrap()], dir.path());
        assert_eq!(out, 0);
        assert!(dir.path().join("measure_user1.csv").exists());
    }

    #[test]
    fn input_errors_exit_three() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.toml");
        fs::write(&bad, "users = 1\nnoise_variance = 1.0\nK = 2\n").unwrap();
        for args in [
            vec!["solve", "--scenario", "no-such-scenario"],
            vec!["solve", "--scenario", bad.to_str().unwrap()],
            vec!["solve", "--scenario", "s1", "--users", "0"],
            vec!["sweep", "--scenario", "s1", "--eps", "-1"],
            vec!["frobnicate"],
        ] {
            let out = macgame(&args, dir.path());
            assert_eq!(out, 3, "{args:?}");
        }
    }
}
