use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaptivity::{Band, InterfaceCriterion, MmsCriterion};
use crate::error::{AmrError, Result};
use crate::fem::{NewtonSettings, SolverSettings};
use crate::models::{CahnHilliardProblem, DiffusionProblem, FreeEnergy};
use crate::transfer::TransferMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Demo1d,
    Mms,
    Spinodal,
}

/// Transfer operator used on coarsening, per field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    pub phi: TransferMode,
    pub mu: TransferMode,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self { phi: TransferMode::Conservative, mu: TransferMode::Injection }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// See `NewtonSettings::refresh_ratio`.
    pub newton_refresh_ratio: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let lin = SolverSettings::default();
        let nl = NewtonSettings::default();
        Self {
            rel_tol: lin.rel_tol,
            max_iter: lin.max_iter,
            newton_tol: nl.tol,
            newton_max_iter: nl.max_iter,
            newton_refresh_ratio: 0.1,
        }
    }
}

impl SolverConfig {
    pub fn linear(&self) -> SolverSettings {
        SolverSettings { rel_tol: self.rel_tol, max_iter: self.max_iter }
    }

    pub fn newton(&self) -> NewtonSettings {
        NewtonSettings { tol: self.newton_tol, max_iter: self.newton_max_iter, refresh_ratio: self.newton_refresh_ratio }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmsConfig {
    pub amplitude: f64,
    pub kappa: f64,
    pub dt: f64,
    pub t_final: f64,
    pub theta: f64,
    /// Finest level `l`; leaves stay within `{l − 1, l}`.
    pub level: u8,
    /// Defaults to a threshold proportional to the finest element width.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub fraction: f64,
    /// Adapt after every this many steps.
    #[serde(default = "every_step")]
    pub adapt_every: usize,
}

fn every_step() -> usize {
    1
}

impl Default for MmsConfig {
    fn default() -> Self {
        let p = DiffusionProblem::default();
        Self {
            amplitude: p.amplitude,
            kappa: p.kappa,
            dt: p.dt,
            t_final: p.t_final,
            theta: p.theta,
            level: 5,
            tau: None,
            fraction: 0.1,
            adapt_every: 1,
        }
    }
}

impl MmsConfig {
    pub fn problem(&self) -> DiffusionProblem {
        DiffusionProblem {
            amplitude: self.amplitude,
            kappa: self.kappa,
            dt: self.dt,
            t_final: self.t_final,
            theta: self.theta,
        }
    }

    pub fn criterion(&self) -> MmsCriterion {
        let tau = self.tau.unwrap_or_else(|| MmsCriterion::scaled_tau(self.level));
        MmsCriterion { tau, fraction: self.fraction, level: self.level }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinodalConfig {
    pub free_energy: FreeEnergy,
    pub eps2: f64,
    pub mobility: f64,
    pub dt: f64,
    pub t_final: f64,
    pub mean: f64,
    pub amplitude: f64,
    pub bulk_level: u8,
    pub fine_level: u8,
    pub band: Band,
    /// Adapt after every this many steps.
    #[serde(default = "every_step")]
    pub adapt_every: usize,
}

impl Default for SpinodalConfig {
    fn default() -> Self {
        let p = CahnHilliardProblem::default();
        Self {
            free_energy: p.free_energy,
            eps2: p.eps2,
            mobility: p.mobility,
            dt: p.dt,
            t_final: p.t_final,
            mean: p.mean,
            amplitude: p.amplitude,
            bulk_level: 3,
            fine_level: 6,
            band: Band::Symmetric { delta: 0.9 },
            adapt_every: 1,
        }
    }
}

impl SpinodalConfig {
    /// The logarithmic-energy variant: mean 0.5, amplitude 0.01, band (0.30, 0.70).
    pub fn flory_huggins() -> Self {
        Self {
            free_energy: FreeEnergy::flory_huggins_default(),
            mean: 0.5,
            amplitude: 0.01,
            band: Band::Interval { lo: 0.30, hi: 0.70 },
            ..Self::default()
        }
    }

    pub fn problem(&self, seed: u64) -> CahnHilliardProblem {
        CahnHilliardProblem {
            free_energy: self.free_energy,
            eps2: self.eps2,
            mobility: self.mobility,
            dt: self.dt,
            t_final: self.t_final,
            mean: self.mean,
            amplitude: self.amplitude,
            seed,
        }
    }

    pub fn criterion(&self) -> InterfaceCriterion {
        InterfaceCriterion { band: self.band, bulk_level: self.bulk_level, fine_level: self.fine_level }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Write a VTK snapshot every this many steps; 0 disables snapshots.
    pub snapshot_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { snapshot_every: 0 }
    }
}

/// One experiment, read from TOML. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub degree: usize,
    /// Gauss points per axis; defaults to `degree + 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature_points: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub transfer: TransferConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mms: Option<MmsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spinodal: Option<SpinodalConfig>,
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment, degree: usize) -> Self {
        Self {
            experiment,
            degree,
            quadrature_points: None,
            seed: 0,
            transfer: TransferConfig::default(),
            solver: SolverConfig::default(),
            output: OutputConfig::default(),
            mms: (experiment == Experiment::Mms).then(MmsConfig::default),
            spinodal: (experiment == Experiment::Spinodal).then(SpinodalConfig::default),
        }
    }

    pub fn quadrature(&self) -> usize {
        self.quadrature_points.unwrap_or(self.degree + 1)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| AmrError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| AmrError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AmrError::Config(m));
        if !(1..=2).contains(&self.degree) && self.experiment == Experiment::Demo1d {
            return bad(format!("demo1d supports degree 1 or 2, got {}", self.degree));
        }
        if self.degree == 0 {
            return bad("degree must be at least 1".into());
        }
        if self.quadrature() < self.degree + 1 {
            return bad(format!("quadrature_points must be at least degree + 1 = {}", self.degree + 1));
        }
        match self.experiment {
            Experiment::Demo1d => Ok(()),
            Experiment::Mms => {
                let Some(m) = &self.mms else { return bad("missing [mms] section".into()) };
                if m.adapt_every == 0 {
                    return bad("adapt_every must be at least 1".into());
                }
                m.problem().validate()?;
                m.criterion().validate()
            }
            Experiment::Spinodal => {
                let Some(s) = &self.spinodal else { return bad("missing [spinodal] section".into()) };
                if s.adapt_every == 0 {
                    return bad("adapt_every must be at least 1".into());
                }
                s.problem(self.seed).validate()?;
                s.criterion().validate()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        for exp in [Experiment::Demo1d, Experiment::Mms, Experiment::Spinodal] {
            let mut cfg = ExperimentConfig::new(exp, 2);
            cfg.seed = 42;
            let text = cfg.to_toml().unwrap();
            let back = ExperimentConfig::from_toml(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_toml().unwrap(), text);
        }
        let mut cfg = ExperimentConfig::new(Experiment::Spinodal, 1);
        cfg.spinodal = Some(SpinodalConfig::flory_huggins());
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let err = ExperimentConfig::from_toml("experiment = \"demo1d\"\ndegree = 1\ndegre = 2\n");
        assert!(matches!(err, Err(AmrError::Config(_))));
        let err = ExperimentConfig::from_toml(
            "experiment = \"mms\"\ndegree = 1\n[mms]\namplitude=0.1\nkappa=0.03\ndt=0.01\nt_final=1.0\ntheta=0.5\nlevel=5\ntau=0.01\nfraction=0.1\nextra=1\n",
        );
        assert!(matches!(err, Err(AmrError::Config(_))));
    }

    #[test]
    fn minimal_demo_config_parses() {
        let cfg = ExperimentConfig::from_toml("experiment = \"demo1d\"\ndegree = 1\n").unwrap();
        assert_eq!(cfg.transfer.phi, TransferMode::Conservative);
        assert!(ExperimentConfig::from_toml("experiment = \"mms\"\ndegree = 1\n").is_err());
    }
}
