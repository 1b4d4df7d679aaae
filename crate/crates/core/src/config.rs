//! Scenario files.
//!
//! A scenario is a TOML document. Per-user keys may sit at the top level, where
//! they apply to every user, or inside `[[users]]` tables, which override the
//! top level for one user:
//!
//! ```toml
//! users = 3              # or a list of [[users]] tables
//! K = 2                  # channel levels: gains {0, 1/K, ..., 1}
//! L = 2                  # power levels {0, ..., L}
//! Q = 1                  # buffer size
//! power_cap = 0.5
//! queue_cap = 0.5
//! lambda = 0.49          # Poisson arrival rate
//! noise_variance = 1.0
//! channel_chain = [[0.5, 0.5, 0.0], [0.25, 0.5, 0.25], [0.0, 0.5, 0.5]]  # optional
//! ```
//!
//! Unknown keys are rejected and every error names the offending key.

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::model::{default_channel_chain, Scenario, UserSpec};

const USER_KEYS: [&str; 7] = [
    "K",
    "L",
    "Q",
    "power_cap",
    "queue_cap",
    "lambda",
    "channel_chain",
];
const TOP_KEYS: [&str; 3] = ["name", "users", "noise_variance"];

fn parse_err(key: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Parse {
        key: key.into(),
        reason: reason.into(),
    }
}

struct Lookup<'a> {
    local: Option<&'a Table>,
    global: &'a Table,
    prefix: String,
}

impl Lookup<'_> {
    fn get(&self, key: &str) -> Option<&Value> {
        self.local
            .and_then(|t| t.get(key))
            .or_else(|| self.global.get(key))
    }

    fn path(&self, key: &str) -> String {
        format!("{}{key}", self.prefix)
    }

    fn required(&self, key: &str) -> Result<&Value> {
        self.get(key)
            .ok_or_else(|| parse_err(self.path(key), "missing required key"))
    }

    fn count(&self, key: &str) -> Result<usize> {
        match self.required(key)? {
            Value::Integer(v) if *v >= 0 => Ok(*v as usize),
            other => Err(parse_err(
                self.path(key),
                format!("expected a nonnegative integer, got {other}"),
            )),
        }
    }

    fn real(&self, key: &str) -> Result<f64> {
        as_real(self.required(key)?).ok_or_else(|| parse_err(self.path(key), "expected a number"))
    }

    fn chain(&self, k: usize) -> Result<Vec<Vec<f64>>> {
        let Some(v) = self.get("channel_chain") else {
            return default_channel_chain(k).map_err(|e| parse_err(self.path("K"), e.to_string()));
        };
        let bad = || parse_err(self.path("channel_chain"), "expected a matrix of numbers");
        let rows = v.as_array().ok_or_else(bad)?;
        rows.iter()
            .map(|row| {
                row.as_array()
                    .ok_or_else(bad)?
                    .iter()
                    .map(|x| as_real(x).ok_or_else(bad))
                    .collect()
            })
            .collect()
    }

    fn spec(&self) -> Result<UserSpec> {
        let k = self.count("K")?;
        let chain = self.chain(k)?;
        UserSpec::with_channel_chain(
            k,
            self.count("L")?,
            self.count("Q")?,
            self.real("power_cap")?,
            self.real("queue_cap")?,
            self.real("lambda")?,
            chain,
        )
        .map_err(|e| match e {
            Error::InvalidParameter { name, reason } => parse_err(self.path(name), reason),
            other => other,
        })
    }
}

fn as_real(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn reject_unknown(table: &Table, allowed: &[&str], prefix: &str) -> Result<()> {
    match table.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(parse_err(format!("{prefix}{k}"), "unknown key")),
        None => Ok(()),
    }
}

/// A parsed scenario file.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioFile {
    pub name: Option<String>,
    pub scenario: Scenario,
}

pub fn parse_scenario(text: &str) -> Result<ScenarioFile> {
    let root: Table =
        toml::from_str(text).map_err(|e| parse_err("<document>", e.message().to_string()))?;
    let allowed: Vec<&str> = TOP_KEYS.iter().chain(&USER_KEYS).copied().collect();
    reject_unknown(&root, &allowed, "")?;
    let name = match root.get("name") {
        None => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(parse_err("name", "expected a string")),
    };
    let noise = root
        .get("noise_variance")
        .ok_or_else(|| parse_err("noise_variance", "missing required key"))
        .and_then(|v| as_real(v).ok_or_else(|| parse_err("noise_variance", "expected a number")))?;
    let users = match root.get("users") {
        None => return Err(parse_err("users", "missing required key")),
        Some(Value::Integer(n)) if *n >= 1 => {
            let spec = Lookup {
                local: None,
                global: &root,
                prefix: String::new(),
            }
            .spec()?;
            vec![spec; *n as usize]
        }
        Some(Value::Array(list)) if !list.is_empty() => list
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let prefix = format!("users[{i}].");
                let table = item
                    .as_table()
                    .ok_or_else(|| parse_err(format!("users[{i}]"), "expected a table"))?;
                reject_unknown(table, &USER_KEYS, &prefix)?;
                Lookup {
                    local: Some(table),
                    global: &root,
                    prefix,
                }
                .spec()
            })
            .collect::<Result<_>>()?,
        Some(_) => {
            return Err(parse_err(
                "users",
                "expected a positive integer or a list of tables",
            ))
        }
    };
    let scenario = Scenario::new(users, noise).map_err(|e| match e {
        Error::InvalidParameter { name, reason } => parse_err(name, reason),
        other => other,
    })?;
    Ok(ScenarioFile { name, scenario })
}

pub fn read_scenario(path: &std::path::Path) -> Result<ScenarioFile> {
    parse_scenario(&std::fs::read_to_string(path)?)
}

fn user_toml(spec: &UserSpec, out: &mut String) {
    use std::fmt::Write as _;
    let _ = writeln!(out, "K = {}", spec.channel_levels);
    let _ = writeln!(out, "L = {}", spec.power_levels);
    let _ = writeln!(out, "Q = {}", spec.buffer_size);
    let _ = writeln!(out, "power_cap = {:?}", spec.power_cap);
    let _ = writeln!(out, "queue_cap = {:?}", spec.queue_cap);
    let _ = writeln!(out, "lambda = {:?}", spec.arrival_rate);
    let rows: Vec<String> = spec
        .channel_chain
        .iter()
        .map(|r| {
            format!(
                "[{}]",
                r.iter()
                    .map(|v| format!("{v:?}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            )
        })
        .collect();
    let _ = writeln!(out, "channel_chain = [{}]", rows.join(", "));
}

/// Writes a document that [`parse_scenario`] reads back to an equal scenario.
pub fn scenario_to_toml(file: &ScenarioFile) -> String {
    use std::fmt::Write as _;
    let sc = &file.scenario;
    let mut out = String::new();
    if let Some(name) = &file.name {
        let _ = writeln!(out, "name = {}", Value::String(name.clone()));
    }
    let _ = writeln!(out, "noise_variance = {:?}", sc.noise_variance);
    let first = &sc.users[0];
    if sc.users.iter().all(|u| u == first) {
        let _ = writeln!(out, "users = {}", sc.users.len());
        user_toml(first, &mut out);
    } else {
        for u in &sc.users {
            out.push_str("\n[[users]]\n");
            user_toml(u, &mut out);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "users = 2\nK = 2\nL = 2\nQ = 1\npower_cap = 0.5\nqueue_cap = 0.5\nlambda = 0.49\nnoise_variance = 1.0\n";

    #[test]
    fn parses_symmetric_count() {
        let f = parse_scenario(BASIC).unwrap();
        assert_eq!(f.scenario.num_users(), 2);
        assert_eq!(
            f.scenario.users[0],
            UserSpec::new(2, 2, 1, 0.5, 0.5, 0.49).unwrap()
        );
    }

    #[test]
    fn per_user_tables_override_top_level() {
        let text = "noise_variance = 1\nK = 2\nL = 2\nQ = 1\npower_cap = 0.5\nqueue_cap = 0.5\nlambda = 0.49\n\
                    [[users]]\n[[users]]\nL = 3\npower_cap = 0.95\n";
        let f = parse_scenario(text).unwrap();
        assert_eq!(f.scenario.users[0].power_levels, 2);
        assert_eq!(f.scenario.users[1].power_levels, 3);
        assert_eq!(f.scenario.users[1].power_cap, 0.95);
    }

    #[test]
    fn errors_name_the_key() {
        let key = |text: &str| match parse_scenario(text) {
            Err(Error::Parse { key, .. }) => key,
            other => panic!("{other:?}"),
        };
        assert_eq!(key(&format!("{BASIC}colour = 3\n")), "colour");
        assert_eq!(key(&BASIC.replace("lambda = 0.49\n", "")), "lambda");
        assert_eq!(key(&BASIC.replace("K = 2", "K = \"two\"")), "K");
        assert_eq!(
            key(&BASIC.replace("lambda = 0.49", "lambda = -1.0")),
            "lambda"
        );
        assert_eq!(
            key(&format!(
                "{BASIC}channel_chain = [[0.5, 0.5, 0.0], [0.3, 0.3, 0.3], [0.0, 0.5, 0.5]]\n"
            )),
            "channel_chain"
        );
        assert_eq!(
            key(&format!(
                "{}[[users]]\nwidth = 1\n",
                BASIC.replace("users = 2\n", "")
            )),
            "users[0].width"
        );
        assert_eq!(key("users = ["), "<document>");
    }

    #[test]
    fn custom_chain_is_used() {
        let text = format!(
            "{BASIC}channel_chain = [[0.5, 0.5, 0.0], [0.25, 0.5, 0.25], [0.0, 0.5, 0.5]]\n"
        );
        let f = parse_scenario(&text).unwrap();
        assert_eq!(f.scenario.users[0].channel_chain[1], vec![0.25, 0.5, 0.25]);
    }

    #[test]
    fn toml_round_trip() {
        let mut f = parse_scenario(BASIC).unwrap();
        f.name = Some("basic".into());
        assert_eq!(parse_scenario(&scenario_to_toml(&f)).unwrap(), f);
        let mixed = ScenarioFile {
            name: None,
            scenario: Scenario::new(
                vec![
                    UserSpec::new(2, 2, 1, 0.5, 0.5, 0.49).unwrap(),
                    UserSpec::new(3, 3, 2, 1.28, 0.65, 0.6).unwrap(),
                ],
                0.5,
            )
            .unwrap(),
        };
        assert_eq!(parse_scenario(&scenario_to_toml(&mixed)).unwrap(), mixed);
    }
}
