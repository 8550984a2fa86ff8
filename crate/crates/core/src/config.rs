//! Run configuration as a flat `key = value` text file.
//!
//! Lines starting with `#` and blank lines are ignored. Every tracker, filter
//! and refinement constant has a key; unknown keys are errors.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::metrics::GtAlignment;
use crate::tracker::{OutputMode, TrackerConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub tracker: TrackerConfig,
    /// Keep every k-th event.
    pub stride: usize,
    pub seed: u64,
    pub gt_align: GtAlignment,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tracker: TrackerConfig::default(),
            stride: 1,
            seed: 0,
            gt_align: GtAlignment::ZeroOrderHold,
        }
    }
}

macro_rules! float_keys {
    ($m:ident) => {
        $m! {
            "q_jerk" => tracker.ekf.q_jerk,
            "sigma0" => tracker.ekf.sigma0,
            "kappa" => tracker.ekf.kappa,
            "sigma_ring" => tracker.ekf.sigma_ring,
            "eps_floor" => tracker.ekf.eps_floor,
            "lambda_phi" => tracker.gn.lambda_phi,
            "lambda_r" => tracker.gn.lambda_r,
            "lambda_pol" => tracker.gn.lambda_pol,
            "lambda_band" => tracker.gn.lambda_band,
            "lambda_bto" => tracker.gn.lambda_bto,
            "lambda_reg" => tracker.gn.lambda_reg,
            "c_phi" => tracker.gn.c_phi,
            "c_r" => tracker.gn.c_r,
            "c_pol" => tracker.gn.c_pol,
            "c_plus" => tracker.gn.c_plus,
            "c_minus" => tracker.gn.c_minus,
            "c_b" => tracker.gn.c_b,
            "tau" => tracker.gn.tau,
            "r_in" => tracker.gn.r_in,
            "r_out" => tracker.gn.r_out,
            "tau_occ" => tracker.gn.tau_occ,
            "delta_band" => tracker.gn.delta_band,
            "p_out_max" => tracker.gn.p_out_max,
            "p_in_min" => tracker.gn.p_in_min,
            "p_in_max" => tracker.gn.p_in_max,
            "p_out_min" => tracker.gn.p_out_min,
            "admit_r_min" => tracker.gn.admit_r_min,
            "admit_r_max" => tracker.gn.admit_r_max,
            "gamma_scale" => tracker.gamma.gamma_scale,
            "gamma_rot" => tracker.gamma.gamma_rot,
            "gamma_tx" => tracker.gamma.gamma_tx,
            "gamma_ty" => tracker.gamma.gamma_ty,
            "gamma_persp" => tracker.gamma.gamma_persp,
            "prefix_r_in" => tracker.prefix_r_in,
            "prefix_r_out" => tracker.prefix_r_out,
        }
    };
}

macro_rules! int_keys {
    ($m:ident) => {
        $m! {
            "gn_iterations" => tracker.gn_iterations,
            "warmup_us" => tracker.warmup_us,
            "sign_prefix" => tracker.sign_prefix,
            "phase_prefix" => tracker.phase_prefix,
            "stride" => stride,
            "seed" => seed,
        }
    };
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        macro_rules! set_float {
            ($($k:literal => $($f:ident).+,)*) => {
                match key {
                    $($k => { self.$($f).+ = value.parse().map_err(|_| bad())?; return Ok(()); })*
                    _ => {}
                }
            };
        }
        macro_rules! set_int {
            ($($k:literal => $($f:ident).+,)*) => {
                match key {
                    $($k => { self.$($f).+ = value.parse().map_err(|_| bad())?; return Ok(()); })*
                    _ => {}
                }
            };
        }
        float_keys!(set_float);
        int_keys!(set_int);
        match key {
            "refine_pose" => self.tracker.refine_pose = parse_bool(value).ok_or_else(bad)?,
            "output" => {
                self.tracker.output = match value {
                    "per_event" => OutputMode::PerEvent,
                    "compact" => OutputMode::Compact,
                    _ => return Err(bad()),
                }
            }
            "gt_align" => {
                self.gt_align = match value {
                    "zoh" => GtAlignment::ZeroOrderHold,
                    "linear" => GtAlignment::Linear,
                    _ => return Err(bad()),
                }
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.stride == 0 {
            return Err(ConfigError::Invalid("stride must be >= 1".into()));
        }
        for g in self.tracker.gamma.diagonal().iter() {
            if !(*g >= 0.0) {
                return Err(ConfigError::Invalid("step scalings must be >= 0".into()));
            }
        }
        self.tracker
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Full dump of every key; `from_text(to_text())` is the identity.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        macro_rules! dump {
            ($($k:literal => $($f:ident).+,)*) => {
                $( let _ = writeln!(s, "{} = {}", $k, self.$($f).+); )*
            };
        }
        float_keys!(dump);
        int_keys!(dump);
        let _ = writeln!(s, "refine_pose = {}", self.tracker.refine_pose);
        let _ = writeln!(
            s,
            "output = {}",
            match self.tracker.output {
                OutputMode::PerEvent => "per_event",
                OutputMode::Compact => "compact",
            }
        );
        let _ = writeln!(
            s,
            "gt_align = {}",
            match self.gt_align {
                GtAlignment::ZeroOrderHold => "zoh",
                GtAlignment::Linear => "linear",
            }
        );
        s
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let mut c = RunConfig::default();
        c.set("lambda_r", "0").unwrap();
        c.set("output", "compact").unwrap();
        c.set("p_in_max", "inf").unwrap();
        c.set("stride", "3").unwrap();
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn comments_and_errors() {
        let c = RunConfig::from_text("# header\n\nkappa = 3.5 # trailing\n").unwrap();
        assert_eq!(c.tracker.ekf.kappa, 3.5);
        assert!(matches!(
            RunConfig::from_text("nope = 1"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            RunConfig::from_text("kappa 3"),
            Err(ConfigError::Syntax { line: 1 })
        ));
        assert!(matches!(
            RunConfig::from_text("kappa = x"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            RunConfig::from_text("stride = 0"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            RunConfig::from_text("lambda_r = -1"),
            Err(ConfigError::Invalid(_))
        ));
    }
}
