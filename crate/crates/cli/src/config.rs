//! Run configuration: defaults, a JSON file, and command-line overrides.

use std::path::{Path, PathBuf};

use phforge_core::collar::{collar_threshold, CollarParams, TwistMode};
use phforge_core::conecert::{CertifyOptions, Cone};
use phforge_core::flowbox::{
    CoverModel, TiltedSection, ToralAuto, DEFAULT_K_CAP, DEFAULT_N_CANDIDATES, FLOWBOX_CONE_HALF_ANGLE,
};
use phforge_core::surface::{FNData, MAX_PINCHED_LENGTH};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Flags shared by all subcommands; each wins over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub ell_list: Option<Vec<f64>>,
    pub grid: Option<usize>,
    pub mode: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

fn default_out() -> PathBuf {
    PathBuf::from("phforge-out")
}

/// Cone and margin settings shared by the certifying commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertSettings {
    pub cone_half_angle: f64,
    pub angle_margin: f64,
    pub growth_margin: f64,
    pub boundary_samples: usize,
    pub rings: usize,
    /// Jitter grid nodes with a seeded offset instead of a regular grid.
    pub jitter: bool,
}

impl Default for CertSettings {
    fn default() -> Self {
        let o = CertifyOptions::default();
        Self {
            cone_half_angle: std::f64::consts::FRAC_PI_4,
            angle_margin: o.angle_margin,
            growth_margin: o.growth_margin,
            boundary_samples: o.boundary_samples,
            rings: o.rings,
            jitter: false,
        }
    }
}

impl CertSettings {
    pub fn options(&self) -> CertifyOptions {
        CertifyOptions {
            boundary_samples: self.boundary_samples,
            rings: self.rings,
            angle_margin: self.angle_margin,
            growth_margin: self.growth_margin,
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        Cone::unstable(self.cone_half_angle).map_err(ConfigError::core)?;
        self.options().validate().map_err(ConfigError::core)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollarConfig {
    pub ell_list: Vec<f64>,
    pub modes: Vec<TwistMode>,
    /// Nodes per axis of the collar grid.
    pub grid: usize,
    pub winding: u32,
    pub seed: u64,
    pub cert: CertSettings,
    pub out: PathBuf,
}

impl Default for CollarConfig {
    fn default() -> Self {
        Self {
            ell_list: vec![0.4, 0.2, 0.1, 0.05, 0.025],
            modes: vec![TwistMode::Dehn, TwistMode::Vp],
            grid: 32,
            winding: 1,
            seed: 0,
            cert: CertSettings::default(),
            out: default_out(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowboxConfig {
    pub matrix: [[i64; 2]; 2],
    pub n_candidates: Vec<f64>,
    pub k_cap: usize,
    /// Nodes per axis of the straightened-block grid.
    pub grid: usize,
    pub winding: u32,
    pub section: TiltedSection,
    pub slope_n_list: Vec<f64>,
    pub slope_resolution: usize,
    pub power_segments: usize,
    /// Leaf slope amplitude of the slope-bounded foliation model.
    pub slope_amplitude: f64,
    pub seed: u64,
    pub cert: CertSettings,
    pub out: PathBuf,
}

impl Default for FlowboxConfig {
    fn default() -> Self {
        Self {
            matrix: [[2, 1], [1, 1]],
            n_candidates: DEFAULT_N_CANDIDATES.to_vec(),
            k_cap: DEFAULT_K_CAP,
            grid: 16,
            winding: 1,
            section: TiltedSection::default(),
            slope_n_list: vec![4.0, 8.0, 16.0, 32.0],
            slope_resolution: 64,
            power_segments: 200,
            slope_amplitude: phforge_core::flowbox::SLOPE_BOUND,
            seed: 0,
            cert: CertSettings {
                cone_half_angle: FLOWBOX_CONE_HALF_ANGLE,
                ..CertSettings::default()
            },
            out: default_out(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentsConfig {
    pub ell_list: Vec<f64>,
    pub modes: Vec<TwistMode>,
    /// Orbits per transitivity probe; `0` skips all orbit experiments.
    pub n_orbits: usize,
    pub n_steps: usize,
    pub cells: usize,
    pub lyapunov_steps: usize,
    pub volume_samples: usize,
    pub winding: u32,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for ExperimentsConfig {
    fn default() -> Self {
        Self {
            ell_list: vec![0.1],
            modes: vec![TwistMode::Identity, TwistMode::Vp, TwistMode::Dehn],
            n_orbits: 32,
            n_steps: 100_000,
            cells: 4096,
            lyapunov_steps: 10_000,
            volume_samples: 100_000,
            winding: 1,
            seed: 1,
            out: default_out(),
        }
    }
}

/// Read a config file, or the defaults when no file is given.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, ConfigError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ConfigError::new(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| ConfigError::new(format!("invalid config {}: {e}", p.display())))
        }
    }
}

fn parse_modes(mode: &str) -> Result<Vec<TwistMode>, ConfigError> {
    match mode {
        "both" => Ok(vec![TwistMode::Dehn, TwistMode::Vp]),
        m => Ok(vec![m.parse().map_err(ConfigError::core)?]),
    }
}

fn not_applicable(flag: &str, command: &str) -> ConfigError {
    ConfigError::new(format!("--{flag} does not apply to {command}"))
}

fn validate_ells(ells: &[f64], max: f64) -> Result<(), ConfigError> {
    if ells.is_empty() {
        return Err(ConfigError::new("the ell list is empty"));
    }
    for &ell in ells {
        CollarParams::new(ell).map_err(ConfigError::core)?;
        if ell > max {
            return Err(ConfigError::new(format!(
                "ell = {ell} exceeds the supported maximum {max}"
            )));
        }
    }
    Ok(())
}

fn validate_modes(modes: &[TwistMode]) -> Result<(), ConfigError> {
    if modes.is_empty() {
        return Err(ConfigError::new("no twist modes requested"));
    }
    Ok(())
}

impl CollarConfig {
    pub fn apply(mut self, o: &Overrides) -> Result<Self, ConfigError> {
        if let Some(l) = &o.ell_list {
            self.ell_list = l.clone();
        }
        if let Some(g) = o.grid {
            self.grid = g;
        }
        if let Some(m) = &o.mode {
            self.modes = parse_modes(m)?;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        validate_ells(&self.ell_list, collar_threshold())?;
        validate_modes(&self.modes)?;
        if self.grid < 16 {
            return Err(ConfigError::new(format!(
                "collar grid {} is below 16 nodes per axis",
                self.grid
            )));
        }
        if self.winding == 0 {
            return Err(ConfigError::new("collar twist winding must be positive"));
        }
        self.cert.validate()
    }
}

impl FlowboxConfig {
    pub fn apply(mut self, o: &Overrides) -> Result<Self, ConfigError> {
        if o.ell_list.is_some() {
            return Err(not_applicable("ell-list", "certify-flowbox"));
        }
        if o.mode.is_some() {
            return Err(not_applicable("mode", "certify-flowbox"));
        }
        if let Some(g) = o.grid {
            self.grid = g;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        self.validate()?;
        Ok(self)
    }

    pub fn auto(&self) -> Result<ToralAuto, ConfigError> {
        ToralAuto::new(self.matrix).map_err(ConfigError::core)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let auto = self.auto()?;
        if self.n_candidates.is_empty() {
            return Err(ConfigError::new("the N candidate list is empty"));
        }
        if self
            .n_candidates
            .windows(2)
            .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
        {
            return Err(ConfigError::new("N candidates must be strictly increasing"));
        }
        for &n in self.n_candidates.iter().chain(&self.slope_n_list) {
            CoverModel::with_section(auto, n, 2, self.section).map_err(ConfigError::core)?;
        }
        if self.slope_n_list.is_empty() {
            return Err(ConfigError::new("the slope N list is empty"));
        }
        if self.k_cap < 2 {
            return Err(ConfigError::new(format!("k_cap = {} is below 2", self.k_cap)));
        }
        if self.grid < 2 || self.slope_resolution < 2 {
            return Err(ConfigError::new("grids need at least 2 nodes per axis"));
        }
        if self.power_segments == 0 {
            return Err(ConfigError::new("power_segments must be positive"));
        }
        phforge_core::flowbox::BoxFoliations::slope_bounded(self.slope_amplitude, self.slope_amplitude)
            .map_err(ConfigError::core)?;
        self.cert.validate()
    }
}

impl ExperimentsConfig {
    pub fn apply(mut self, o: &Overrides) -> Result<Self, ConfigError> {
        if let Some(l) = &o.ell_list {
            self.ell_list = l.clone();
        }
        if let Some(g) = o.grid {
            self.cells = g;
        }
        if let Some(m) = &o.mode {
            self.modes = parse_modes(m)?;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        validate_ells(&self.ell_list, MAX_PINCHED_LENGTH)?;
        for &ell in &self.ell_list {
            FNData::pinched(ell).validate().map_err(ConfigError::core)?;
        }
        validate_modes(&self.modes)?;
        if self.cells == 0 || !self.cells.is_multiple_of(phforge_core::surface::ANGLE_BINS) {
            return Err(ConfigError::new(format!(
                "cells = {} must be a positive multiple of {}",
                self.cells,
                phforge_core::surface::ANGLE_BINS
            )));
        }
        if self.n_orbits > 0 && self.lyapunov_steps < 1000 {
            return Err(ConfigError::new("lyapunov_steps must be at least 1000"));
        }
        if self.n_orbits > 0 && self.volume_samples == 0 {
            return Err(ConfigError::new("volume_samples must be positive"));
        }
        if self.winding == 0 {
            return Err(ConfigError::new("twist winding must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        CollarConfig::default().validate().unwrap();
        FlowboxConfig::default().validate().unwrap();
        ExperimentsConfig::default().validate().unwrap();
    }

    #[test]
    fn flags_win_over_file_values() {
        let file: CollarConfig = serde_json::from_str(r#"{"ell_list": [0.3], "grid": 20, "seed": 4}"#).unwrap();
        assert_eq!(file.modes, CollarConfig::default().modes);
        let o = Overrides {
            ell_list: Some(vec![0.2, 0.1]),
            mode: Some("vp".into()),
            ..Default::default()
        };
        let c = file.apply(&o).unwrap();
        assert_eq!(c.ell_list, vec![0.2, 0.1]);
        assert_eq!(c.grid, 20);
        assert_eq!(c.seed, 4);
        assert_eq!(c.modes, vec![TwistMode::Vp]);
    }

    #[test]
    fn rejects_bad_values() {
        let empty = Overrides {
            ell_list: Some(vec![]),
            ..Default::default()
        };
        assert!(CollarConfig::default().apply(&empty).is_err());
        let big = Overrides {
            ell_list: Some(vec![1.6]),
            ..Default::default()
        };
        assert!(CollarConfig::default().apply(&big).is_err());
        assert!(ExperimentsConfig::default()
            .apply(&Overrides {
                ell_list: Some(vec![1.2]),
                ..Default::default()
            })
            .is_err());
        let parabolic = FlowboxConfig {
            matrix: [[1, 1], [0, 1]],
            ..Default::default()
        };
        let e = parabolic.validate().unwrap_err();
        assert!(e.to_string().contains("trace"), "{e}");
        assert!(FlowboxConfig::default().apply(&empty).is_err());
        assert!(serde_json::from_str::<CollarConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
