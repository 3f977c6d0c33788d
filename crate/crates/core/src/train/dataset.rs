//! Supervised samples for the power and coupling surrogates.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::nets::{NetKind, Normalization};
use crate::objective::{project_weights, scene_gram};
use crate::par::{self, Execution};
use crate::quadrature::{complex_rows, from_complex_rows, integral_couplings, integral_power, Basis, WeightMatrix};
use crate::scene::{sample_scene, Scene, SceneParams, SceneRecord};
use crate::seeds;
use crate::CMat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetMode {
    /// Raw weights with per-user power targets.
    Proj,
    /// Projected weights with coupling targets.
    Value,
}

impl DatasetMode {
    pub fn net_kind(self) -> NetKind {
        match self {
            DatasetMode::Proj => NetKind::Proj,
            DatasetMode::Value => NetKind::Value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Powers(Vec<f64>),
    Couplings(CMat),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedSample {
    pub scene: Scene,
    pub weights: WeightMatrix,
    pub target: Target,
    pub seed: u64,
}

impl SupervisedSample {
    /// Target entries as a real vector: powers, or (Re, Im) of every coupling in row-major order.
    /// Multiplies user k's weight column by `e^{iθ_k}`. Powers are unchanged and
    /// coupling column k picks up the same phase, so the result is again an exact sample.
    pub fn phase_rotated(&self, phases: &[f64]) -> SupervisedSample {
        let rot: Vec<crate::Complex64> = phases.iter().map(|&t| crate::Complex64::from_polar(1.0, t)).collect();
        let mut weights = self.weights.clone();
        for (k, mut col) in weights.0.column_iter_mut().enumerate() {
            col *= rot[k];
        }
        let target = match &self.target {
            Target::Powers(p) => Target::Powers(p.clone()),
            Target::Couplings(g) => {
                let mut g = g.clone();
                for (k, mut col) in g.column_iter_mut().enumerate() {
                    col *= rot[k];
                }
                Target::Couplings(g)
            }
        };
        SupervisedSample {
            scene: self.scene.clone(),
            weights,
            target,
            seed: self.seed,
        }
    }

    pub fn target_vec(&self) -> Vec<f64> {
        match &self.target {
            Target::Powers(p) => p.clone(),
            Target::Couplings(g) => flatten_complex(g),
        }
    }
}

pub fn flatten_complex(g: &CMat) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * g.len());
    for r in 0..g.nrows() {
        for c in 0..g.ncols() {
            out.push(g[(r, c)].re);
            out.push(g[(r, c)].im);
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SampleRecord {
    mode: DatasetMode,
    seed: u64,
    grid_m: usize,
    basis: Basis,
    scene: SceneRecord,
    weights: Vec<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    powers: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    couplings: Option<Vec<Vec<[f64; 2]>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub seed: u64,
    pub n: usize,
    pub grid_m: usize,
    pub mode: DatasetMode,
    pub basis: Basis,
    pub scene: SceneParams,
    /// Total raw power is log-uniform in `[P_max/spread, P_max·spread]` (proj mode).
    pub power_spread: f64,
}

impl DatasetSpec {
    pub fn new(seed: u64, n: usize, grid_m: usize, mode: DatasetMode, scene: SceneParams) -> Self {
        Self {
            seed,
            n,
            grid_m,
            mode,
            basis: Basis::default(),
            scene,
            power_spread: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub samples: Vec<SupervisedSample>,
}

/// Sample `index` of the stream defined by `spec`.
pub fn generate_sample(spec: &DatasetSpec, index: usize) -> Result<SupervisedSample> {
    let seed = seeds::derive(spec.seed, seeds::stream::SCENE, index as u64);
    let scene = sample_scene(seed, &spec.scene)?;
    let gram = scene_gram(&scene, spec.grid_m, spec.basis, Execution::Sequential)?;
    let k = scene.num_users();
    let mut rng = seeds::rng(spec.seed, seeds::stream::WEIGHTS, index as u64);
    let raw = WeightMatrix(CMat::from_fn(k, k, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        crate::Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }));
    let p0 = integral_power(&raw, &gram.c)?;
    let (weights, target) = match spec.mode {
        DatasetMode::Proj => {
            let log_spread = spec.power_spread.ln();
            let total = scene.p_max * (rng.random_range(-log_spread..=log_spread)).exp();
            let a = project_weights(&raw, &p0, total)?;
            let p = integral_power(&a, &gram.c)?;
            (a, Target::Powers(p.0))
        }
        DatasetMode::Value => {
            let a = project_weights(&raw, &p0, scene.p_max)?;
            let g = integral_couplings(&a, &gram.b)?;
            (a, Target::Couplings(g.0))
        }
    };
    Ok(SupervisedSample {
        scene,
        weights,
        target,
        seed,
    })
}

pub fn gen_supervised_dataset(spec: &DatasetSpec, exec: Execution) -> Result<Dataset> {
    if spec.n == 0 {
        return Err(Error::InvalidInput("dataset needs at least one sample".into()));
    }
    if !(spec.power_spread >= 1.0) {
        return Err(Error::InvalidInput(format!("power spread must be ≥ 1, got {}", spec.power_spread)));
    }
    let samples = par::try_map_indexed(spec.n, exec, |i| generate_sample(spec, i))?;
    Ok(Dataset {
        spec: spec.clone(),
        samples,
    })
}

/// Recomputes a sample's target from its stored scene and weights.
pub fn recompute_target(sample: &SupervisedSample, grid_m: usize, basis: Basis) -> Result<Target> {
    let gram = scene_gram(&sample.scene, grid_m, basis, Execution::Sequential)?;
    Ok(match sample.target {
        Target::Powers(_) => Target::Powers(integral_power(&sample.weights, &gram.c)?.0),
        Target::Couplings(_) => Target::Couplings(integral_couplings(&sample.weights, &gram.b)?.0),
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Input and output scales fitted on this set: RMS weight entry, and the mean power or RMS coupling.
    pub fn normalization(&self) -> Normalization {
        let mut a_sq = 0.0;
        let mut a_n = 0usize;
        let mut t_acc = 0.0;
        let mut t_n = 0usize;
        for s in &self.samples {
            for z in s.weights.0.iter() {
                a_sq += z.norm_sqr();
                a_n += 1;
            }
            match &s.target {
                Target::Powers(p) => {
                    t_acc += p.iter().sum::<f64>();
                    t_n += p.len();
                }
                Target::Couplings(g) => {
                    t_acc += g.iter().map(|z| z.norm_sqr()).sum::<f64>();
                    t_n += g.len();
                }
            }
        }
        let input_scale = (a_sq / a_n.max(1) as f64).sqrt();
        let output_scale = match self.spec.mode {
            DatasetMode::Proj => t_acc / t_n.max(1) as f64,
            DatasetMode::Value => (t_acc / t_n.max(1) as f64).sqrt(),
        };
        Normalization {
            input_scale,
            output_scale,
            ..Normalization::default()
        }
    }

    /// JSON lines: one header line with the spec, then one sample per line.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let mut w = BufWriter::new(fs::File::create(path)?);
        serde_json::to_writer(&mut w, &self.spec)?;
        w.write_all(b"\n")?;
        for s in &self.samples {
            let (powers, couplings) = match &s.target {
                Target::Powers(p) => (Some(p.clone()), None),
                Target::Couplings(g) => (None, Some(complex_rows(g))),
            };
            let rec = SampleRecord {
                mode: self.spec.mode,
                seed: s.seed,
                grid_m: self.spec.grid_m,
                basis: self.spec.basis,
                scene: s.scene.to_record(),
                weights: complex_rows(&s.weights.0),
                powers,
                couplings,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidInput(format!("{} is empty", path.display())))??;
        let spec: DatasetSpec = serde_json::from_str(&header)?;
        let mut samples = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SampleRecord = serde_json::from_str(&line)
                .map_err(|e| Error::InvalidInput(format!("{} line {}: {e}", path.display(), i + 2)))?;
            if rec.mode != spec.mode {
                return Err(Error::InvalidInput(format!("line {} has mode {:?}", i + 2, rec.mode)));
            }
            let target = match (rec.powers, rec.couplings) {
                (Some(p), None) => Target::Powers(p),
                (None, Some(g)) => Target::Couplings(from_complex_rows(&g)?),
                _ => return Err(Error::InvalidInput(format!("line {} needs exactly one target", i + 2))),
            };
            samples.push(SupervisedSample {
                scene: rec.scene.into_scene()?,
                weights: WeightMatrix(from_complex_rows(&rec.weights)?),
                target,
                seed: rec.seed,
            });
        }
        Ok(Self { spec, samples })
    }
}
