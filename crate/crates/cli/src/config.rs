//! Flat `key = value` run configuration: `#` comments, unknown keys
//! rejected, every key defaulted, canonical echo for provenance.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use pjrm_core::poststack::PoststackOperator;
use pjrm_core::scenario::{build_layered_background, EarthModel, PlumeSchedule};
use pjrm_core::solver::{Formulation, Mode, SolverConfig};
use pjrm_core::{Real, StreamRng};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("key `{key}`: {why}")]
    BadValue { key: &'static str, why: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AutoF64 {
    Auto,
    Value(f64),
}

impl AutoF64 {
    pub fn resolve(self, auto: f64) -> f64 {
        match self {
            AutoF64::Auto => auto,
            AutoF64::Value(v) => v,
        }
    }

    pub fn as_option(self) -> Option<f64> {
        match self {
            AutoF64::Auto => None,
            AutoF64::Value(v) => Some(v),
        }
    }
}

impl std::fmt::Display for AutoF64 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AutoF64::Auto => write!(f, "auto"),
            AutoF64::Value(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}",
            match self {
                Precision::F32 => "f32",
                Precision::F64 => "f64",
            }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,

    pub grid_nz: usize,
    pub grid_nx: usize,
    pub extent_z_km: f64,
    pub extent_x_km: f64,
    pub property_min: f64,
    pub property_max: f64,
    pub num_layers: usize,

    pub num_surveys: usize,
    pub plume_center_z: f64,
    pub plume_center_x: f64,
    pub plume_radius_z0: f64,
    pub plume_radius_z1: f64,
    pub plume_radius_x0: f64,
    pub plume_radius_x1: f64,
    pub plume_amp0: f64,
    pub plume_amp1: f64,
    pub plume_drift: f64,
    pub plume_power: f64,
    pub plume_mask_threshold: f64,

    pub wavelet_freq_hz: f64,
    pub velocity_mps: f64,
    pub op_scale: f64,
    pub noise_sigma: f64,

    pub mode: Mode,
    pub formulation: Formulation,
    pub sigma: AutoF64,
    pub gamma: AutoF64,
    pub tau: AutoF64,
    pub maxiter1: usize,
    pub maxiter2: usize,
    pub lr: f64,
    pub posterior_samples: usize,
    pub decoder_layers: usize,
    pub decoder_channels: usize,
    pub gmm_components: usize,
    pub frozen_z: bool,
    pub paired_latents: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            precision: Precision::F32,
            grid_nz: 100,
            grid_nx: 50,
            extent_z_km: 3.2,
            extent_x_km: 5.9,
            property_min: 2.0,
            property_max: 6.0,
            num_layers: 6,
            num_surveys: 2,
            plume_center_z: 60.0,
            plume_center_x: 25.0,
            plume_radius_z0: 5.0,
            plume_radius_z1: 9.0,
            plume_radius_x0: 6.0,
            plume_radius_x1: 9.0,
            plume_amp0: -0.25,
            plume_amp1: -0.4,
            plume_drift: 0.5,
            plume_power: 1.5,
            plume_mask_threshold: 0.05,
            wavelet_freq_hz: 15.0,
            velocity_mps: 3000.0,
            op_scale: 1.0,
            noise_sigma: 2e-4,
            mode: Mode::Joint,
            formulation: Formulation::Weak,
            sigma: AutoF64::Auto,
            gamma: AutoF64::Auto,
            tau: AutoF64::Auto,
            maxiter1: 200,
            maxiter2: 500,
            lr: 1e-2,
            posterior_samples: 64,
            decoder_layers: 4,
            decoder_channels: 32,
            gmm_components: 3,
            frozen_z: false,
            paired_latents: false,
        }
    }
}

macro_rules! for_each_key {
    ($m:ident) => {
        $m!(seed);
        $m!(precision);
        $m!(grid_nz);
        $m!(grid_nx);
        $m!(extent_z_km);
        $m!(extent_x_km);
        $m!(property_min);
        $m!(property_max);
        $m!(num_layers);
        $m!(num_surveys);
        $m!(plume_center_z);
        $m!(plume_center_x);
        $m!(plume_radius_z0);
        $m!(plume_radius_z1);
        $m!(plume_radius_x0);
        $m!(plume_radius_x1);
        $m!(plume_amp0);
        $m!(plume_amp1);
        $m!(plume_drift);
        $m!(plume_power);
        $m!(plume_mask_threshold);
        $m!(wavelet_freq_hz);
        $m!(velocity_mps);
        $m!(op_scale);
        $m!(noise_sigma);
        $m!(mode);
        $m!(formulation);
        $m!(sigma);
        $m!(gamma);
        $m!(tau);
        $m!(maxiter1);
        $m!(maxiter2);
        $m!(lr);
        $m!(posterior_samples);
        $m!(decoder_layers);
        $m!(decoder_channels);
        $m!(gmm_components);
        $m!(frozen_z);
        $m!(paired_latents);
    };
}

trait FromValue: Sized {
    fn from_value(key: &'static str, v: &str) -> Result<Self, ConfigError>;
    fn to_value(&self) -> String;
}

fn bad(key: &'static str, why: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key,
        why: why.into(),
    }
}

impl FromValue for u64 {
    fn from_value(key: &'static str, v: &str) -> Result<Self, ConfigError> {
        v.parse().map_err(|_| bad(key, "expected an unsigned integer"))
    }
    fn to_value(&self) -> String {
        self.to_string()
    }
}

impl FromValue for usize {
    fn from_value(key: &'static str, v: &str) -> Result<Self, ConfigError> {
        v.parse().map_err(|_| bad(key, "expected an unsigned integer"))
    }
    fn to_value(&self) -> String {
        self.to_string()
    }
}

impl FromValue for f64 {
    fn from_value(key: &'static str, v: &str) -> Result<Self, ConfigError> {
        let x: f64 = v.parse().map_err(|_| bad(key, "expected a number"))?;
        if !x.is_finite() {
            return Err(bad(key, "must be finite"));
        }
        Ok(x)
    }
    fn to_value(&self) -> String {
        format!("{self}")
    }
}

impl FromValue for bool {
    fn from_value(key: &'static str, v: &str) -> Result<Self, ConfigError> {
        match v {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(bad(key, "expected true or false")),
        }
    }
    fn to_value(&self) -> String {
        self.to_string()
    }
}

impl FromValue for AutoF64 {
    fn from_value(key: &'static str, v: &str) -> Result<Self, ConfigError> {
        if v == "auto" {
            Ok(AutoF64::Auto)
        } else {
            f64::from_value(key, v).map(AutoF64::Value)
        }
    }
    fn to_value(&self) -> String {
        format!("{self}")
    }
}

impl FromValue for Precision {
    fn from_value(key: &'static str, v: &str) -> Result<Self, ConfigError> {
        match v {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(bad(key, "expected f32 or f64")),
        }
    }
    fn to_value(&self) -> String {
        format!("{self}")
    }
}

impl FromValue for Mode {
    fn from_value(key: &'static str, v: &str) -> Result<Self, ConfigError> {
        match v {
            "joint" => Ok(Mode::Joint),
            "independent" => Ok(Mode::Independent),
            _ => Err(bad(key, "expected joint or independent")),
        }
    }
    fn to_value(&self) -> String {
        match self {
            Mode::Joint => "joint".into(),
            Mode::Independent => "independent".into(),
        }
    }
}

impl FromValue for Formulation {
    fn from_value(key: &'static str, v: &str) -> Result<Self, ConfigError> {
        match v {
            "weak" => Ok(Formulation::Weak),
            "strong" => Ok(Formulation::Strong),
            _ => Err(bad(key, "expected weak or strong")),
        }
    }
    fn to_value(&self) -> String {
        match self {
            Formulation::Weak => "weak".into(),
            Formulation::Strong => "strong".into(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let body = match line.find('#') {
                Some(p) => &line[..p],
                None => line,
            };
            let body = body.trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: line_no })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if value.is_empty() {
                return Err(ConfigError::Syntax { line: line_no });
            }
            if raw.contains_key(&key) {
                return Err(ConfigError::DuplicateKey { line: line_no, key });
            }
            raw.insert(key, (line_no, value));
        }

        let mut cfg = RunConfig::default();
        macro_rules! take {
            ($field:ident) => {
                if let Some((_line, value)) = raw.remove(stringify!($field)) {
                    cfg.$field = FromValue::from_value(stringify!($field), &value)?;
                }
            };
        }
        for_each_key!(take);

        if let Some((key, (line, _))) = raw.into_iter().next() {
            return Err(ConfigError::UnknownKey { line, key });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical echo: every key in fixed order, parseable back to an equal
    /// config; byte-stable across runs.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        macro_rules! emit {
            ($field:ident) => {
                let _ = writeln!(
                    out,
                    "{} = {}",
                    stringify!($field),
                    FromValue::to_value(&self.$field)
                );
            };
        }
        for_each_key!(emit);
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.grid_nz < 2 || self.grid_nx < 1 {
            return Err(ConfigError::Invalid(
                "grid must be at least 2x1".to_string(),
            ));
        }
        if !(self.property_min < self.property_max) {
            return Err(ConfigError::Invalid(
                "property_min must be below property_max".to_string(),
            ));
        }
        if self.noise_sigma < 0.0 {
            return Err(ConfigError::Invalid(
                "noise_sigma must be non-negative".to_string(),
            ));
        }
        if matches!(self.sigma, AutoF64::Auto) && self.noise_sigma == 0.0 {
            return Err(ConfigError::Invalid(
                "sigma = auto needs a positive noise_sigma".to_string(),
            ));
        }
        let (lo, hi) = self.background_value_range()?;
        if !(lo < hi) {
            return Err(ConfigError::Invalid(
                "plume amplitude leaves no room inside the property range".to_string(),
            ));
        }
        Ok(())
    }

    /// Layer-value range that keeps `background + anomaly` inside the
    /// property range for the strongest plume.
    pub fn background_value_range(&self) -> Result<(f64, f64), ConfigError> {
        let amp_min = self.plume_amp0.min(self.plume_amp1).min(0.0);
        let amp_max = self.plume_amp0.max(self.plume_amp1).max(0.0);
        let lo = self.property_min - amp_min;
        let hi = self.property_max - amp_max;
        if !(lo < hi) {
            return Err(ConfigError::Invalid(
                "plume amplitude exceeds the property range".to_string(),
            ));
        }
        Ok((lo, hi))
    }

    pub fn dz_m(&self) -> f64 {
        self.extent_z_km * 1000.0 / self.grid_nz as f64
    }

    pub fn schedule(&self) -> PlumeSchedule {
        PlumeSchedule {
            num_surveys: self.num_surveys,
            center_z: self.plume_center_z,
            center_x: self.plume_center_x,
            radius_z: (self.plume_radius_z0, self.plume_radius_z1),
            radius_x: (self.plume_radius_x0, self.plume_radius_x1),
            amplitude: (self.plume_amp0, self.plume_amp1),
            drift_per_survey: self.plume_drift,
            profile_power: self.plume_power,
        }
    }

    pub fn operator(&self) -> Result<PoststackOperator, pjrm_core::CoreError> {
        PoststackOperator::for_grid(
            self.grid_nz,
            self.grid_nx,
            self.dz_m(),
            self.wavelet_freq_hz,
            self.velocity_mps,
            self.op_scale,
        )
    }

    pub fn operators(&self) -> Result<Vec<PoststackOperator>, pjrm_core::CoreError> {
        (0..self.num_surveys).map(|_| self.operator()).collect()
    }

    pub fn earth_model<T: Real>(&self, rng: &mut StreamRng) -> Result<EarthModel<T>, ConfigError> {
        let range = self.background_value_range()?;
        build_layered_background(
            self.grid_nz,
            self.grid_nx,
            self.num_layers,
            range,
            self.extent_z_km,
            self.extent_x_km,
            (self.property_min, self.property_max),
            rng,
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            mode: self.mode,
            formulation: self.formulation,
            num_surveys: self.num_surveys,
            sigma: self.sigma.resolve(self.noise_sigma),
            gamma: self.gamma.as_option(),
            tau: self.tau.as_option(),
            maxiter1: self.maxiter1,
            maxiter2: self.maxiter2,
            lr: self.lr,
            posterior_samples: self.posterior_samples,
            seed: self.seed,
            decoder_layers: self.decoder_layers,
            decoder_channels: self.decoder_channels,
            gmm_components: self.gmm_components,
            out_shift: self.property_min,
            out_scale: self.property_max - self.property_min,
            frozen_z: self.frozen_z,
            paired_latents: self.paired_latents,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_canonical_echo() {
        let cfg = RunConfig::default();
        let text = cfg.canonical_text();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::parse("# a comment\n\nseed = 42 # trailing\n").unwrap();
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("sigme = 0.1\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { .. }), "{err}");
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let err = RunConfig::parse("seed = 1\nseed = 2\n").unwrap_err();
        assert!(matches!(err, ConfigError::DuplicateKey { .. }));
    }

    #[test]
    fn auto_and_numeric_scales_parse() {
        let cfg = RunConfig::parse("gamma = auto\ntau = 0.25\nsigma = 0.01\n").unwrap();
        assert_eq!(cfg.gamma, AutoF64::Auto);
        assert_eq!(cfg.tau, AutoF64::Value(0.25));
        assert_eq!(cfg.sigma, AutoF64::Value(0.01));
    }

    #[test]
    fn bad_values_name_the_key() {
        let err = RunConfig::parse("maxiter1 = many\n").unwrap_err();
        assert!(err.to_string().contains("maxiter1"));
    }

    #[test]
    fn background_range_budgets_the_plume() {
        let cfg = RunConfig::default();
        let (lo, hi) = cfg.background_value_range().unwrap();
        assert_eq!(lo, 2.4); // property_min - (-0.4)
        assert_eq!(hi, 6.0);
    }
}
