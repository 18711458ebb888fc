//! Flat `key = value` simulation config files.

use smc_core::experiments::SimConfig;
use smc_core::panel::parse_methods;
use smc_core::{Result, SmcError};

fn value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| SmcError::InvalidConfig(format!("bad value for `{key}`: `{raw}`")))
}

/// Parses a config file over the defaults. Blank lines and `#` comments are
/// skipped; unknown or repeated keys are errors.
pub fn parse_sim_config(text: &str) -> Result<SimConfig> {
    let mut cfg = SimConfig::default();
    let mut seen = std::collections::HashSet::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, raw) = line
            .split_once('=')
            .ok_or_else(|| SmcError::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
        let (key, raw) = (key.trim(), raw.trim());
        if !seen.insert(key.to_string()) {
            return Err(SmcError::InvalidConfig(format!("duplicate key `{key}`")));
        }
        match key {
            "dgp" => cfg.dgp = raw.parse()?,
            "T" | "periods" => cfg.periods = value(key, raw)?,
            "T0" | "t0" => cfg.t0 = value(key, raw)?,
            "J" | "controls" => cfg.controls = value(key, raw)?,
            "lambda" => cfg.lambda = raw.parse()?,
            "sigma" => cfg.sigma = value(key, raw)?,
            "c" => cfg.c = value(key, raw)?,
            "r2" => cfg.r2 = value(key, raw)?,
            "rho" => cfg.rho = value(key, raw)?,
            "reps" => cfg.reps = value(key, raw)?,
            "seed" => cfg.seed = value(key, raw)?,
            "methods" => cfg.methods = parse_methods(raw)?,
            "variance_variant" => cfg.smc.variance_variant = raw.parse()?,
            "screen" => cfg.smc.screen = raw.parse()?,
            "sirs_variant" => cfg.smc.sirs_variant = raw.parse()?,
            "qp_tol" => cfg.smc.qp_tol = value(key, raw)?,
            "qp_max_iter" => cfg.smc.qp_max_iter = value(key, raw)?,
            other => return Err(SmcError::InvalidConfig(format!("unknown key `{other}`"))),
        }
    }
    Ok(cfg)
}
