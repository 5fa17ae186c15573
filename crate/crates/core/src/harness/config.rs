//! `key = value` run configuration files. Keys are the long command line
//! flags without the leading dashes; `#` starts a comment.

use std::path::PathBuf;

use super::RunSpec;
use crate::error::{Error, Result};

/// Parses a configuration file into `(key, value)` pairs in file order.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected 'key = value'", lineno + 1)))?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| v.trim())
        .filter(|v| !v.is_empty())
        .map(|v| scalar(key, v))
        .collect()
}

fn scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parse(format!("invalid value '{value}' for '{key}'")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Parse(format!("invalid value '{value}' for '{key}'"))),
    }
}

/// Applies one option to the spec. `command` is handled by the caller since
/// it selects the spec's defaults.
pub fn apply_option(spec: &mut RunSpec, key: &str, value: &str) -> Result<()> {
    match key {
        "command" => {
            let command: super::Command = value.parse()?;
            if command != spec.command {
                return Err(Error::invalid(format!(
                    "command '{value}' conflicts with '{}'",
                    spec.command.name()
                )));
            }
        }
        "setting" => spec.settings = list(key, value)?,
        "n" => spec.n_list = list(key, value)?,
        "reps" => spec.reps = scalar(key, value)?,
        "seed" => spec.base_seed = scalar(key, value)?,
        "L" => spec.cells = scalar(key, value)?,
        "folds" => spec.folds = if value == "auto" { None } else { Some(scalar(key, value)?) },
        "hidden-width" => {
            let width: usize = scalar(key, value)?;
            spec.gca = spec.gca.clone().with_hidden_width(width);
        }
        "lr" => spec.gca.learning_rate = scalar(key, value)?,
        "epochs" => spec.gca.epochs = scalar(key, value)?,
        "workers" => spec.workers = scalar(key, value)?,
        "out" => spec.out = Some(PathBuf::from(value)),
        "aggregation" => spec.aggregation = value.parse()?,
        "weighting" => spec.weighting = value.parse()?,
        "exposure-propensity" => spec.exposure_propensity = value.parse()?,
        "alternative" => spec.alternative = value.parse()?,
        "controls" => {
            spec.own_feature_controls = match value {
                "own" => true,
                "none" => false,
                _ => return Err(Error::Parse(format!("invalid value '{value}' for 'controls' (own or none)"))),
            }
        }
        "check" => spec.check = boolean(key, value)?,
        other => return Err(Error::Parse(format!("unknown option '{other}'"))),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::Setting;
    use crate::harness::Command;

    #[test]
    fn parses_pairs_and_comments() {
        let pairs = parse_config("# header\nreps = 10\n\nsetting=S1,S2 # two\n").unwrap();
        assert_eq!(
            pairs,
            vec![("reps".into(), "10".into()), ("setting".into(), "S1,S2".into())]
        );
        assert!(parse_config("reps 10").is_err());
    }

    #[test]
    fn applies_every_option() {
        let mut spec = RunSpec::for_command(Command::ReproduceTable1);
        let text = "command = reproduce-table1\nsetting = S2\nn = 100,200\nreps = 3\nseed = 9\nL = 3\nfolds = 4\n\
                    hidden-width = 8\nlr = 0.05\nepochs = 7\nworkers = 2\nout = res\naggregation = dml1\n\
                    weighting = ht\nexposure-propensity = simulated\nalternative = two-sided\ncontrols = none\ncheck = true";
        for (k, v) in parse_config(text).unwrap() {
            apply_option(&mut spec, &k, &v).unwrap();
        }
        assert_eq!(spec.settings, vec![Setting::S2]);
        assert_eq!(spec.n_list, vec![100, 200]);
        assert_eq!((spec.reps, spec.base_seed, spec.cells, spec.folds), (3, 9, 3, Some(4)));
        assert_eq!(spec.gca.encoder_layer_dims, vec![8, 1]);
        assert_eq!((spec.gca.learning_rate, spec.gca.epochs, spec.workers), (0.05, 7, 2));
        assert_eq!(spec.out, Some(PathBuf::from("res")));
        assert!(spec.check);
        assert_eq!(spec.alternative, crate::validity_test::Alternative::TwoSided);
        assert!(!spec.own_feature_controls);
        assert_eq!(spec.exposure_propensity, crate::harness::ExposurePropensity::Simulated);
        assert!(apply_option(&mut spec, "command", "simulate").is_err());
        assert!(apply_option(&mut spec, "bogus", "1").is_err());
    }
}
