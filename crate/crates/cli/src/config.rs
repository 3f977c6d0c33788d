//! Experiment configuration: one JSON document shared by every subcommand.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::ValueEnum;
use lcapa_core::quadrature::Basis;
use lcapa_core::scene::{ApertureSpec, SceneParams};
use lcapa_core::train::{LrSchedule, TrainHyper};
use lcapa_core::wmmse::WmmseOptions;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SweepNtr,
    SweepSnr,
    SweepAperture,
    SweepM,
    Timing,
    #[default]
    Single,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::SweepNtr => "sweep-ntr",
            Self::SweepSnr => "sweep-snr",
            Self::SweepAperture => "sweep-aperture",
            Self::SweepM => "sweep-m",
            Self::Timing => "timing",
            Self::Single => "single",
        }
    }

    /// Header of the swept column in result tables.
    pub fn axis(self) -> &'static str {
        match self {
            Self::SweepNtr => "n_tr",
            Self::SweepSnr => "zeta",
            Self::SweepAperture => "aperture_area",
            Self::SweepM | Self::Single | Self::Timing => "m",
        }
    }

    pub fn is_sweep(self) -> bool {
        matches!(self, Self::SweepNtr | Self::SweepSnr | Self::SweepAperture | Self::SweepM)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Policy trained through the power and coupling networks.
    LcapaGnn,
    /// Policy trained through the exact Gram chain.
    LcapaAnalytic,
    Wmmse,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::LcapaGnn => "lcapa-gnn",
            Self::LcapaAnalytic => "lcapa-analytic",
            Self::Wmmse => "wmmse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub test_scenes: u64,
    pub policy_scenes: u64,
    pub validation_scenes: u64,
    pub data: u64,
    pub data_validation: u64,
    /// Held-out supervised samples used only for reporting surrogate fidelity.
    pub data_test: u64,
    pub init: u64,
    pub shuffle: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            test_scenes: 1000,
            policy_scenes: 1,
            validation_scenes: 2,
            data: 10,
            data_validation: 11,
            data_test: 12,
            init: 3,
            shuffle: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub n_train: usize,
    /// Epoch selection set.
    pub n_validation: usize,
    pub n_holdout: usize,
    pub grid_m: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    /// Random per-user phase of the weight columns, redrawn every epoch.
    pub phase_augment: bool,
    pub batch_size: usize,
    pub levels: usize,
    pub hidden: usize,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_validation: 500,
            n_holdout: 500,
            grid_m: 256,
            epochs: TrainHyper::supervised().epochs,
            learning_rate: 1e-3,
            schedule: TrainHyper::supervised().schedule,
            phase_augment: TrainHyper::supervised().phase_augment,
            batch_size: 64,
            levels: 4,
            hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub n_train: usize,
    pub n_validation: usize,
    /// Grid for the Grams of the analytic chain.
    pub grid_m: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub levels: usize,
    pub hidden: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_validation: 100,
            grid_m: 256,
            epochs: 200,
            learning_rate: 1e-4,
            schedule: TrainHyper::policy().schedule,
            batch_size: 64,
            levels: 4,
            hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub n_scenes: usize,
    pub runs: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self { n_scenes: 50, runs: 3 }
    }
}

/// Pre-trained networks; any that are absent are trained inline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckpointPaths {
    pub proj: Option<PathBuf>,
    pub value: Option<PathBuf>,
    pub policy_gnn: Option<PathBuf>,
    pub policy_analytic: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub num_users: usize,
    pub zeta: f64,
    /// Aperture area in m² (square, centred at the origin in the x–z plane).
    pub aperture_area: f64,
    /// WMMSE grid size.
    pub m: usize,
    /// Evaluation grid size.
    pub m_eval: usize,
    /// Values of the swept quantity (sweep kinds only).
    pub sweep: Vec<f64>,
    pub n_test: usize,
    pub methods: Vec<Method>,
    pub basis: Basis,
    pub seeds: Seeds,
    pub surrogate: SurrogateConfig,
    pub policy: PolicyConfig,
    pub wmmse: WmmseOptions,
    pub timing: TimingConfig,
    pub checkpoints: CheckpointPaths,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Single,
            num_users: 4,
            zeta: 1e6,
            aperture_area: 4.0,
            m: 256,
            m_eval: 1024,
            sweep: Vec::new(),
            n_test: 100,
            methods: vec![Method::LcapaGnn, Method::LcapaAnalytic, Method::Wmmse],
            basis: Basis::default(),
            seeds: Seeds::default(),
            surrogate: SurrogateConfig::default(),
            policy: PolicyConfig::default(),
            wmmse: WmmseOptions::default(),
            timing: TimingConfig::default(),
            checkpoints: CheckpointPaths::default(),
            out_dir: None,
        }
    }
}

/// Scene-level settings at one point of an experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub value: f64,
    pub zeta: f64,
    pub aperture_area: f64,
    pub m: usize,
    pub n_tr: usize,
}

fn as_count(v: f64, what: &str) -> anyhow::Result<usize> {
    if v < 1.0 || v.fract() != 0.0 || v > 1e9 {
        bail!("{what} must be a positive integer, got {v}");
    }
    Ok(v as usize)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.kind.is_sweep() && self.sweep.is_empty() {
            bail!("{} needs a non-empty `sweep` list", self.kind.name());
        }
        if !self.kind.is_sweep() && !self.sweep.is_empty() {
            bail!("`sweep` is only valid for sweep kinds, not {}", self.kind.name());
        }
        if self.num_users == 0 || self.n_test == 0 || self.methods.is_empty() {
            bail!("num_users, n_test and methods must be non-empty");
        }
        if self.kind == ExperimentKind::Timing && self.timing.n_scenes == 0 {
            bail!("timing needs at least one scene");
        }
        self.wmmse.validate()?;
        for p in self.points()? {
            let params = self.scene_params(&p)?;
            for m in [p.m, self.m_eval, self.surrogate.grid_m, self.policy.grid_m] {
                lcapa_core::quadrature::build_grid(&params.aperture, m)?;
            }
        }
        Ok(())
    }

    /// Resolved points in sweep order.
    pub fn points(&self) -> anyhow::Result<Vec<Point>> {
        let base = Point {
            value: self.m as f64,
            zeta: self.zeta,
            aperture_area: self.aperture_area,
            m: self.m,
            n_tr: self.policy.n_train,
        };
        if !self.kind.is_sweep() {
            return Ok(vec![base]);
        }
        self.sweep
            .iter()
            .map(|&v| {
                let mut p = Point { value: v, ..base };
                match self.kind {
                    ExperimentKind::SweepNtr => p.n_tr = as_count(v, "N_tr")?,
                    ExperimentKind::SweepSnr => p.zeta = v,
                    ExperimentKind::SweepAperture => p.aperture_area = v,
                    ExperimentKind::SweepM => p.m = as_count(v, "M")?,
                    _ => unreachable!("not a sweep"),
                }
                Ok(p)
            })
            .collect()
    }

    pub fn scene_params(&self, p: &Point) -> anyhow::Result<SceneParams> {
        Ok(SceneParams {
            num_users: self.num_users,
            aperture: ApertureSpec::square(p.aperture_area)?,
            zeta: p.zeta,
            ..SceneParams::default()
        })
    }

    pub fn has(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }

    /// Output directory: flag or config, then `$LCAPA_OUT`, then `results/`.
    pub fn resolved_out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os("LCAPA_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("results"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn sweep_lists_only_on_sweeps() {
        let mut cfg = ExperimentConfig {
            sweep: vec![16.0, 64.0],
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.kind = ExperimentKind::SweepM;
        cfg.validate().unwrap();
        assert_eq!(cfg.points().unwrap().iter().map(|p| p.m).collect::<Vec<_>>(), vec![16, 64]);
        cfg.sweep = vec![250.0];
        assert!(cfg.validate().is_err(), "250 is not a square grid");
        cfg.kind = ExperimentKind::SweepNtr;
        cfg.sweep = vec![10.5];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"kind":"single","bogus":1}"#).is_err());
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"kind":"sweep-snr","sweep":[1e4,1e5]}"#).unwrap();
        assert_eq!(cfg.points().unwrap()[1].zeta, 1e5);
    }
}
