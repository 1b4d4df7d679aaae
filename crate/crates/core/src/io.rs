//! CSV output. Floats are written in Rust's shortest round-trip form, so a
//! value read back parses to the identical `f64` and equal inputs always give
//! byte-identical files.

use std::io::{Read, Write};

use crate::cmdp::OccupationMeasure;
use crate::error::{invalid, Result};
use crate::game::IterationTrace;
use crate::iine::{IineResult, ThresholdRow};
use crate::model::StateActionSpace;
use crate::sim::{SimStats, ValidationReport};

pub const MEASURE_HEADER: [&str; 7] = [
    "state_index",
    "h",
    "q",
    "action_index",
    "admit",
    "power",
    "z",
];
pub const TRACE_HEADER: [&str; 6] = [
    "sweep",
    "user",
    "reward",
    "potential",
    "delta_linf",
    "delta_l2",
];
pub const STAGES_HEADER: [&str; 3] = ["k", "value", "restrictions"];
pub const SIM_HEADER: [&str; 4] = ["user", "quantity", "mean", "std_err"];
pub const VALIDATION_HEADER: [&str; 6] =
    ["user", "quantity", "predicted", "mean", "std_err", "pass"];
pub const SWEEP_HEADER: [&str; 7] = [
    "N",
    "l2_distance",
    "reward_diff",
    "l1_diff",
    "max_gap",
    "is_equilibrium",
    "converged",
];

pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn writer<W: Write>(w: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    Ok(out)
}

/// One row per state-action pair: `state_index, h, q, action_index, admit, power, z`.
pub fn write_measure_csv<W: Write>(w: W, z: &OccupationMeasure) -> Result<()> {
    let mut out = writer(w, &MEASURE_HEADER)?;
    let space = z.space();
    for (idx, s, a) in space.iter_pairs() {
        let x = space.state_index(s);
        out.write_record([
            x.to_string(),
            fmt_f64(space.channel_gain(s.channel)),
            s.queue.to_string(),
            space.action_index(a).to_string(),
            u8::from(a.admit).to_string(),
            a.power.to_string(),
            fmt_f64(z.as_slice()[idx]),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_measure_csv<R: Read>(r: R, space: StateActionSpace) -> Result<OccupationMeasure> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().ne(MEASURE_HEADER) {
        return Err(invalid("measure", "unexpected CSV header"));
    }
    let mut z = vec![0.0; space.num_pairs()];
    let mut seen = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let x: usize = field(0)
            .parse()
            .map_err(|_| invalid("measure", "bad state_index"))?;
        let a: usize = field(3)
            .parse()
            .map_err(|_| invalid("measure", "bad action_index"))?;
        if x >= space.num_states() || a >= space.num_actions() {
            return Err(invalid("measure", "index out of range"));
        }
        z[space.pair_index(x, a)] = field(6).parse().map_err(|_| invalid("measure", "bad z"))?;
        seen += 1;
    }
    if seen != space.num_pairs() {
        return Err(invalid(
            "measure",
            format!("expected {} rows, got {seen}", space.num_pairs()),
        ));
    }
    OccupationMeasure::new(space, z)
}

/// One row per sweep and user.
pub fn write_trace_csv<W: Write>(w: W, trace: &IterationTrace) -> Result<()> {
    let mut out = writer(w, &TRACE_HEADER)?;
    for r in &trace.records {
        for (user, reward) in r.rewards.iter().enumerate() {
            out.write_record([
                r.sweep.to_string(),
                user.to_string(),
                fmt_f64(*reward),
                fmt_f64(r.potential),
                fmt_f64(r.delta_linf),
                fmt_f64(r.delta_l2),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_stages_csv<W: Write>(w: W, result: &IineResult) -> Result<()> {
    let mut out = writer(w, &STAGES_HEADER)?;
    for s in &result.stages {
        out.write_record([
            s.k.to_string(),
            fmt_f64(s.value),
            s.restrictions.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sim_csv<W: Write>(w: W, stats: &SimStats) -> Result<()> {
    let mut out = writer(w, &SIM_HEADER)?;
    for (i, u) in stats.users.iter().enumerate() {
        for (name, e) in [
            ("throughput", u.throughput),
            ("power", u.power),
            ("queue", u.queue),
            ("snr", u.snr),
            ("dropped", u.dropped),
        ] {
            out.write_record([
                i.to_string(),
                name.into(),
                fmt_f64(e.mean),
                fmt_f64(e.std_err),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_validation_csv<W: Write>(w: W, report: &ValidationReport) -> Result<()> {
    let mut out = writer(w, &VALIDATION_HEADER)?;
    for (i, u) in report.users.iter().enumerate() {
        for c in &u.checks {
            out.write_record([
                i.to_string(),
                c.name.into(),
                fmt_f64(c.predicted),
                fmt_f64(c.estimate.mean),
                fmt_f64(c.estimate.std_err),
                c.pass.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(w: W, rows: &[ThresholdRow]) -> Result<()> {
    let mut out = writer(w, &SWEEP_HEADER)?;
    for r in rows {
        out.write_record([
            r.n.to_string(),
            fmt_f64(r.l2_distance),
            fmt_f64(r.reward_diff),
            fmt_f64(r.l1_diff),
            fmt_f64(r.max_gap),
            r.is_equilibrium.to_string(),
            r.ne_converged.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::feasible_seed_measure;
    use crate::model::UserSpec;

    #[test]
    fn measure_round_trip_is_exact() {
        let spec = UserSpec::new(2, 3, 2, 1.55, 1.0, 0.9).unwrap();
        let z = feasible_seed_measure(&spec).unwrap();
        let mut buf = Vec::new();
        write_measure_csv(&mut buf, &z).unwrap();
        let back = read_measure_csv(buf.as_slice(), spec.space()).unwrap();
        assert_eq!(back, z);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("state_index,h,q,action_index,admit,power,z\n"));
    }

    #[test]
    fn rejects_foreign_header() {
        let spec = UserSpec::new(1, 1, 1, 1.0, 1.0, 0.5).unwrap();
        assert!(read_measure_csv("a,b\n1,2\n".as_bytes(), spec.space()).is_err());
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.0, 1.0 / 3.0, 1e-300, 2.5e17, -0.1] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
