//! Flat `key = value` experiment files.
//!
//! One assignment per line, `#` starts a comment. `preset` selects the base
//! experiment (`lorenz63` or `pendulum`); every other key overrides one field of
//! it. Vectors are comma separated, `obs_components` is one-based, `u_max` and
//! `fd_step` accept `none` / `dt`, and `alpha` accepts `dt`.
//!
//! ```text
//! preset = lorenz63
//! m = 4            # small ensemble
//! u_max = 50
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::controller::Alpha;
use crate::error::{Result, TwinError};
use crate::harness::{ExperimentPreset, ModelSpec};
use crate::observation::ObsMode;

/// Every key accepted by [`parse_config`], in echo order.
pub const KEYS: &[&str] = &[
    "preset",
    "sigma",
    "r",
    "b",
    "sigma_friction",
    "rho",
    "gamma",
    "epsilon",
    "sigma_digital",
    "sigma_true",
    "delta",
    "sigma_infl",
    "alpha",
    "dt",
    "m",
    "u_max",
    "x0",
    "init_mean",
    "init_var",
    "obs_components",
    "obs_noise",
    "obs_mode",
    "obs_interval",
    "n_pseudo",
    "n_steps",
    "seed",
    "fd_step",
    "sinkhorn_tol",
    "sinkhorn_max_iter",
    "zero_control",
];

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| TwinError::config(key, format!("cannot parse `{value}`")))
}

fn number(key: &str, value: &str) -> Result<f64> {
    let v: f64 = scalar(key, value)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TwinError::config(
            key,
            format!("must be finite (got `{value}`)"),
        ))
    }
}

fn vector(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| number(key, v.trim())).collect()
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(TwinError::config(
            key,
            format!("expected true or false, got `{value}`"),
        )),
    }
}

/// Splits `text` into `(line number, key, value)` triples.
fn assignments(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(TwinError::Usage(format!(
                "line {}: expected `key = value`, got `{line}`",
                n + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(TwinError::config(
                key,
                format!("unknown key on line {}", n + 1),
            ));
        }
        if !seen.insert(key.clone()) {
            return Err(TwinError::config(
                key,
                format!("assigned twice (line {})", n + 1),
            ));
        }
        out.push((n + 1, key, value));
    }
    Ok(out)
}

/// Parses a config file and validates the resulting preset.
pub fn parse_config(text: &str) -> Result<ExperimentPreset> {
    let entries = assignments(text)?;
    let base = entries
        .iter()
        .find(|(_, k, _)| k == "preset")
        .map(|(_, _, v)| v.as_str())
        .ok_or_else(|| TwinError::config("preset", "missing (expected lorenz63 or pendulum)"))?;
    let mut preset = ExperimentPreset::by_name(base)?;
    let mut interval = None;
    let mut discrete = None;
    for (_, key, value) in &entries {
        apply(&mut preset, key, value, &mut interval, &mut discrete)?;
    }
    match (discrete, interval) {
        (Some(true), Some(dt)) => preset.obs_mode = ObsMode::Discrete { interval: dt },
        (Some(true), None) => {
            return Err(TwinError::config(
                "obs_interval",
                "required when obs_mode = discrete",
            ));
        }
        (Some(false), Some(_)) => {
            return Err(TwinError::config(
                "obs_interval",
                "only allowed when obs_mode = discrete",
            ));
        }
        (None, Some(dt)) if matches!(preset.obs_mode, ObsMode::Discrete { .. }) => {
            preset.obs_mode = ObsMode::Discrete { interval: dt };
        }
        (None, Some(_)) => {
            return Err(TwinError::config(
                "obs_interval",
                "only allowed when obs_mode = discrete",
            ));
        }
        (Some(false), None) => preset.obs_mode = ObsMode::Continuous,
        (None, None) => {}
    }
    preset.validate()?;
    Ok(preset)
}

fn apply(
    preset: &mut ExperimentPreset,
    key: &str,
    value: &str,
    interval: &mut Option<f64>,
    discrete: &mut Option<bool>,
) -> Result<()> {
    let twin = &mut preset.twin;
    match key {
        "preset" => {}
        "sigma" | "r" | "b" => {
            let v = number(key, value)?;
            match &mut preset.model {
                ModelSpec::Lorenz63 { sigma, r, b, .. } => {
                    *match key {
                        "sigma" => sigma,
                        "r" => r,
                        _ => b,
                    } = v;
                }
                ModelSpec::Pendulum { .. } => {
                    return Err(TwinError::config(key, "only applies to preset lorenz63"));
                }
            }
        }
        "sigma_friction" => match &mut preset.model {
            ModelSpec::Pendulum { friction, .. } => *friction = number(key, value)?,
            ModelSpec::Lorenz63 { .. } => {
                return Err(TwinError::config(key, "only applies to preset pendulum"));
            }
        },
        "rho" => {
            let v = number(key, value)?;
            match &mut preset.model {
                ModelSpec::Lorenz63 { rho, .. } | ModelSpec::Pendulum { rho, .. } => *rho = v,
            }
        }
        "gamma" => twin.gamma = number(key, value)?,
        "epsilon" => twin.epsilon = number(key, value)?,
        "sigma_digital" => preset.sigma_digital = number(key, value)?,
        "sigma_true" => preset.sigma_true = number(key, value)?,
        "delta" => twin.bandwidth = number(key, value)?,
        "sigma_infl" => twin.sigma_infl = number(key, value)?,
        "alpha" => {
            twin.alpha = if value == "dt" {
                Alpha::StepSize
            } else {
                Alpha::Fixed(number(key, value)?)
            }
        }
        "dt" => twin.dt = number(key, value)?,
        "m" => twin.m = scalar(key, value)?,
        "u_max" => {
            twin.u_max = if value == "none" {
                None
            } else {
                Some(number(key, value)?)
            }
        }
        "x0" => preset.x0 = vector(key, value)?,
        "init_mean" => preset.init_mean = vector(key, value)?,
        "init_var" => preset.init_var = number(key, value)?,
        "obs_components" => {
            let d = preset.model.state_dim();
            preset.obs_components = value
                .split(',')
                .map(|v| {
                    let c: usize = scalar(key, v.trim())?;
                    if (1..=d).contains(&c) {
                        Ok(c - 1)
                    } else {
                        Err(TwinError::config(
                            key,
                            format!("component {c} outside 1..={d}"),
                        ))
                    }
                })
                .collect::<Result<_>>()?;
        }
        "obs_noise" => preset.obs_noise = number(key, value)?,
        "obs_mode" => {
            *discrete = Some(match value {
                "continuous" => false,
                "discrete" => true,
                _ => {
                    return Err(TwinError::config(
                        key,
                        format!("expected continuous or discrete, got `{value}`"),
                    ))
                }
            })
        }
        "obs_interval" => *interval = Some(number(key, value)?),
        "n_pseudo" => twin.n_pseudo = scalar(key, value)?,
        "n_steps" => twin.n_steps = scalar(key, value)?,
        "seed" => twin.seed = scalar(key, value)?,
        "fd_step" => {
            twin.fd_step = if value == "dt" {
                None
            } else {
                Some(number(key, value)?)
            }
        }
        "sinkhorn_tol" => twin.sinkhorn.tol = number(key, value)?,
        "sinkhorn_max_iter" => twin.sinkhorn.max_iter = scalar(key, value)?,
        "zero_control" => preset.zero_control = flag(key, value)?,
        _ => return Err(TwinError::config(key, "unknown key")),
    }
    Ok(())
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Writes every setting of `preset`; `parse_config` reads it back unchanged.
pub fn echo_config(preset: &ExperimentPreset) -> String {
    let mut out = String::new();
    let twin = &preset.twin;
    let mut put = |key: &str, value: String| {
        let _ = writeln!(out, "{key} = {value}");
    };
    put("preset", preset.model.name().into());
    match preset.model {
        ModelSpec::Lorenz63 { sigma, r, b, rho } => {
            put("sigma", sigma.to_string());
            put("r", r.to_string());
            put("b", b.to_string());
            put("rho", rho.to_string());
        }
        ModelSpec::Pendulum { friction, rho } => {
            put("sigma_friction", friction.to_string());
            put("rho", rho.to_string());
        }
    }
    put("gamma", twin.gamma.to_string());
    put("epsilon", twin.epsilon.to_string());
    put("sigma_digital", preset.sigma_digital.to_string());
    put("sigma_true", preset.sigma_true.to_string());
    put("delta", twin.bandwidth.to_string());
    put("sigma_infl", twin.sigma_infl.to_string());
    put(
        "alpha",
        match twin.alpha {
            Alpha::Fixed(a) => a.to_string(),
            Alpha::StepSize => "dt".into(),
        },
    );
    put("dt", twin.dt.to_string());
    put("m", twin.m.to_string());
    put("u_max", twin.u_max.map_or("none".into(), |u| u.to_string()));
    put("x0", join(&preset.x0));
    put("init_mean", join(&preset.init_mean));
    put("init_var", preset.init_var.to_string());
    put(
        "obs_components",
        preset
            .obs_components
            .iter()
            .map(|c| (c + 1).to_string())
            .collect::<Vec<_>>()
            .join(", "),
    );
    put("obs_noise", preset.obs_noise.to_string());
    match preset.obs_mode {
        ObsMode::Continuous => put("obs_mode", "continuous".into()),
        ObsMode::Discrete { interval } => {
            put("obs_mode", "discrete".into());
            put("obs_interval", interval.to_string());
        }
    }
    put("n_pseudo", twin.n_pseudo.to_string());
    put("n_steps", twin.n_steps.to_string());
    put("seed", twin.seed.to_string());
    put(
        "fd_step",
        twin.fd_step.map_or("dt".into(), |h| h.to_string()),
    );
    put("sinkhorn_tol", twin.sinkhorn.tol.to_string());
    put("sinkhorn_max_iter", twin.sinkhorn.max_iter.to_string());
    put("zero_control", preset.zero_control.to_string());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(err: TwinError) -> String {
        match err {
            TwinError::Config { key, .. } => key,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn presets_round_trip() {
        for name in ["lorenz63", "pendulum"] {
            let preset = ExperimentPreset::by_name(name).unwrap();
            assert_eq!(parse_config(&echo_config(&preset)).unwrap(), preset);
        }
    }

    #[test]
    fn overrides_and_comments() {
        let text = "# small run\npreset = lorenz63\nm = 4 # tiny\nu_max = none\nalpha = dt\nobs_components = 1\n\n";
        let p = parse_config(text).unwrap();
        assert_eq!(p.twin.m, 4);
        assert_eq!(p.twin.u_max, None);
        assert_eq!(p.twin.alpha, Alpha::StepSize);
        assert_eq!(p.obs_components, vec![0]);
    }

    #[test]
    fn discrete_mode_round_trips() {
        let p =
            parse_config("preset = pendulum\nobs_mode = discrete\nobs_interval = 0.01\n").unwrap();
        assert_eq!(p.obs_mode, ObsMode::Discrete { interval: 0.01 });
        assert_eq!(parse_config(&echo_config(&p)).unwrap(), p);
        assert_eq!(
            key_of(parse_config("preset = pendulum\nobs_mode = discrete\n").unwrap_err()),
            "obs_interval"
        );
        assert_eq!(
            key_of(parse_config("preset = pendulum\nobs_interval = 0.01\n").unwrap_err()),
            "obs_interval"
        );
    }

    #[test]
    fn errors_name_the_key() {
        let cases = [
            ("preset = lorenz63\nm = 0\n", "m"),
            ("preset = lorenz63\nm = -3\n", "m"),
            ("preset = lorenz63\ngamma = abc\n", "gamma"),
            ("preset = lorenz63\nwhatever = 1\n", "whatever"),
            ("preset = lorenz63\nsigma_friction = 1\n", "sigma_friction"),
            ("preset = pendulum\nr = 1\n", "r"),
            ("preset = lorenz63\nx0 = 1, 2\n", "x0"),
            ("preset = lorenz63\nobs_components = 0\n", "obs_components"),
            ("preset = lorenz63\ndt = 0\n", "dt"),
            ("preset = lorenz63\ndt = 1\ndt = 2\n", "dt"),
            ("preset = nope\n", "preset"),
            ("m = 3\n", "preset"),
            ("preset = lorenz63\nzero_control = maybe\n", "zero_control"),
            ("preset = lorenz63\nobs_noise = nan\n", "obs_noise"),
        ];
        for (text, key) in cases {
            assert_eq!(key_of(parse_config(text).unwrap_err()), key, "{text}");
        }
        assert!(matches!(
            parse_config("preset lorenz63"),
            Err(TwinError::Usage(_))
        ));
    }

    #[test]
    fn echo_lists_every_key_once() {
        let mut p = ExperimentPreset::lorenz63();
        p.obs_mode = ObsMode::Discrete { interval: 0.1 };
        let text = echo_config(&p);
        for key in KEYS.iter().filter(|k| !matches!(**k, "sigma_friction")) {
            assert_eq!(
                text.lines()
                    .filter(|l| l.starts_with(&format!("{key} =")))
                    .count(),
                1,
                "{key}"
            );
        }
    }
}
