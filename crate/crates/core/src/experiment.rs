//! The seven reference scenarios and the batch experiments run over them.

use std::io::Write;

use rayon::prelude::*;

use crate::config::ScenarioFile;
use crate::error::Result;
use crate::iine::{
    distinct_snr_values, find_invariance_threshold, ThresholdConfig, ThresholdReport,
};
use crate::io::fmt_f64;
use crate::model::{Scenario, UserSpec};

/// Number of game sizes examined for the invariance threshold.
pub const DEFAULT_N_MAX: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub channel_levels: usize,
    pub power_levels: usize,
    pub buffer_size: usize,
    pub power_cap: f64,
    pub queue_cap: f64,
    pub arrival_rate: f64,
    pub expected_m: usize,
    pub expected_threshold: usize,
}

impl Preset {
    pub fn spec(&self) -> UserSpec {
        UserSpec::new(
            self.channel_levels,
            self.power_levels,
            self.buffer_size,
            self.power_cap,
            self.queue_cap,
            self.arrival_rate,
        )
        .expect("preset parameters are valid")
    }

    /// `users` copies of the preset user with unit noise.
    pub fn scenario(&self, users: usize) -> ScenarioFile {
        ScenarioFile {
            name: Some(self.name.to_string()),
            scenario: Scenario::symmetric(self.spec(), users, PRESET_NOISE).expect("valid preset"),
        }
    }
}

pub const PRESET_NOISE: f64 = 1.0;

#[allow(clippy::too_many_arguments)]
const fn preset(
    name: &'static str,
    k: usize,
    l: usize,
    q: usize,
    power_cap: f64,
    queue_cap: f64,
    lambda: f64,
    m: usize,
    threshold: usize,
) -> Preset {
    Preset {
        name,
        channel_levels: k,
        power_levels: l,
        buffer_size: q,
        power_cap,
        queue_cap,
        arrival_rate: lambda,
        expected_m: m,
        expected_threshold: threshold,
    }
}

pub const PRESETS: [Preset; 7] = [
    preset("s1", 2, 2, 1, 0.5, 0.5, 0.49, 4, 3),
    preset("s2", 2, 3, 1, 0.95, 0.5, 0.49, 6, 3),
    preset("s3", 2, 3, 2, 1.55, 1.0, 0.9, 6, 3),
    preset("s4", 3, 3, 2, 1.28, 0.65, 0.6, 7, 3),
    preset("s5", 3, 3, 3, 2.1, 1.6, 1.5, 7, 4),
    preset("s6", 2, 3, 2, 1.55, 0.9, 1.0, 6, 2),
    preset("s7", 2, 3, 2, 1.7, 0.9, 1.0, 6, 1),
];

/// Looks a preset up by name (`s1` … `s7`).
pub fn find_preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

/// One batch item: a named symmetric user type.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub spec: UserSpec,
    pub noise_variance: f64,
    /// Reference `(M, N*)` when the entry is a preset.
    pub expected: Option<(usize, usize)>,
}

impl Entry {
    pub fn from_preset(p: &Preset) -> Self {
        Entry {
            name: p.name.to_string(),
            spec: p.spec(),
            noise_variance: PRESET_NOISE,
            expected: Some((p.expected_m, p.expected_threshold)),
        }
    }

    /// Uses the first user of a scenario file.
    pub fn from_file(file: &ScenarioFile, fallback_name: &str) -> Self {
        Entry {
            name: file
                .name
                .clone()
                .unwrap_or_else(|| fallback_name.to_string()),
            spec: file.scenario.users[0].clone(),
            noise_variance: file.scenario.noise_variance,
            expected: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Table1Row {
    pub entry: Entry,
    pub m: usize,
    /// The threshold report, or the error message when the entry failed.
    pub outcome: std::result::Result<ThresholdReport, String>,
}

impl Table1Row {
    pub fn threshold(&self) -> Option<usize> {
        self.outcome.as_ref().ok().and_then(|r| r.threshold)
    }

    pub fn converged(&self) -> bool {
        self.outcome
            .as_ref()
            .is_ok_and(|r| r.rows.iter().all(|row| row.ne_converged))
    }

    /// `Some(true)` when both columns match the reference values.
    pub fn matches_expected(&self) -> Option<bool> {
        self.entry
            .expected
            .map(|(m, n)| self.m == m && self.threshold() == Some(n))
    }
}

/// M and N* for every entry, in parallel. Failures are recorded per row.
pub fn run_table1(entries: &[Entry], n_max: usize, cfg: &ThresholdConfig) -> Vec<Table1Row> {
    entries
        .par_iter()
        .map(|e| Table1Row {
            entry: e.clone(),
            m: distinct_snr_values(&e.spec).len(),
            outcome: find_invariance_threshold(&e.spec, e.noise_variance, n_max, cfg)
                .map_err(|err| err.to_string()),
        })
        .collect()
}

pub const TABLE1_HEADER: [&str; 14] = [
    "scenario",
    "K",
    "L",
    "Q",
    "power_cap",
    "queue_cap",
    "lambda",
    "M",
    "N_star",
    "converged",
    "expected_M",
    "expected_N_star",
    "matches",
    "error",
];

/// `N_star` is `none` when the threshold is not reached; the expected and
/// match columns are empty for non-preset entries.
pub fn write_table1_csv<W: Write>(w: W, rows: &[Table1Row]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TABLE1_HEADER)?;
    for r in rows {
        let s = &r.entry.spec;
        let (em, en) = r
            .entry
            .expected
            .map_or((String::new(), String::new()), |(m, n)| {
                (m.to_string(), n.to_string())
            });
        out.write_record([
            r.entry.name.clone(),
            s.channel_levels.to_string(),
            s.power_levels.to_string(),
            s.buffer_size.to_string(),
            fmt_f64(s.power_cap),
            fmt_f64(s.queue_cap),
            fmt_f64(s.arrival_rate),
            r.m.to_string(),
            r.threshold().map_or("none".into(), |n| n.to_string()),
            r.converged().to_string(),
            em,
            en,
            r.matches_expected()
                .map_or(String::new(), |b| b.to_string()),
            r.outcome.as_ref().err().cloned().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_lookup() {
        assert_eq!(find_preset("s5").unwrap().expected_threshold, 4);
        assert!(find_preset("s8").is_none());
        for p in &PRESETS {
            assert_eq!(
                distinct_snr_values(&p.spec()).len(),
                p.expected_m,
                "{}",
                p.name
            );
        }
    }

    #[test]
    fn empty_batch_is_empty() {
        assert!(run_table1(&[], DEFAULT_N_MAX, &ThresholdConfig::default()).is_empty());
        let mut buf = Vec::new();
        write_table1_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }

    #[test]
    fn single_entry_row() {
        let rows = run_table1(
            &[Entry::from_preset(&PRESETS[6])],
            2,
            &ThresholdConfig::default(),
        );
        assert_eq!(rows[0].m, 6);
        assert_eq!(rows[0].threshold(), Some(1));
        assert!(rows[0].converged());
    }
}
