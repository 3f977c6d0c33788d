//! Unsupervised policy training through the projection and coupling stages.
//!
//! Forward chain for one scene: `S → A → p → Ā = A·sqrt(P_max/Σp) → G → −SE`.
//! In surrogate mode `p` and `G` come from the frozen power and coupling
//! networks; in analytic mode from the scene's Gram matrices (`p_k = a_kᴴCa_k`,
//! `G = B·Ā`). Only the policy parameters are updated.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::supervised::batch_grad;
use super::{EpochRecord, TrainHyper, TrainReport};
use crate::error::{Error, Result};
use crate::gnn::nets::{NetKind, Network, Normalization};
use crate::gnn::GnnParams;
use crate::objective::{exact_sum_se, scene_gram, SeReport};
use crate::optim::Adam;
use crate::par::{self, Execution};
use crate::quadrature::{integral_couplings, integral_power, Basis, GramPair, WeightMatrix};
use crate::scene::{sample_scene, Scene, SceneParams};
use crate::{seeds, CMat, Complex64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ChainMode {
    #[default]
    Surrogate,
    Analytic,
}

/// `−Σ_k log2(1 + γ_k)` for one coupling matrix.
pub fn policy_loss(g: &CMat, areas: &[f64], noise: &[f64]) -> f64 {
    loss_and_grad(g, areas, noise).0
}

/// Mean of [`policy_loss`] over a batch.
pub fn batch_policy_loss(gs: &[CMat], areas: &[f64], noise: &[f64]) -> f64 {
    gs.iter().map(|g| policy_loss(g, areas, noise)).sum::<f64>() / gs.len().max(1) as f64
}

/// Loss and `∂ℓ/∂Re g + i ∂ℓ/∂Im g` for every coupling.
///
/// With `T_k = Σ_j |A_j||g_kj|² + σ_k²` and `D_k = T_k − |A_k||g_kk|²`,
/// `ℓ = −Σ_k (ln T_k − ln D_k)/ln 2`.
pub fn loss_and_grad(g: &CMat, areas: &[f64], noise: &[f64]) -> (f64, CMat) {
    let k = g.nrows();
    let mut grad = CMat::zeros(k, k);
    let mut loss = 0.0;
    for row in 0..k {
        let mut t = noise[row];
        for col in 0..k {
            t += areas[col] * g[(row, col)].norm_sqr();
        }
        let signal = areas[row] * g[(row, row)].norm_sqr();
        let d = t - signal;
        loss -= (signal / d).ln_1p() / LN_2;
        for col in 0..k {
            let w = 2.0 * areas[col] / LN_2;
            let coef = if col == row { -w / t } else { -w / t + w / d };
            grad[(row, col)] = g[(row, col)] * coef;
        }
    }
    (loss, grad)
}

/// Frozen power and coupling networks.
#[derive(Debug, Clone, Copy)]
pub struct Surrogates<'a> {
    pub proj: &'a Network,
    pub value: &'a Network,
}

/// One training scene with whatever the chain needs precomputed.
#[derive(Debug, Clone)]
pub struct ChainSample {
    pub scene: Scene,
    pub gram: Option<GramPair>,
}

#[derive(Debug, Clone)]
pub struct ChainOutcome {
    pub loss: f64,
    pub grad: Option<GnnParams>,
    /// Activation signs of every network evaluated, in chain order.
    pub pattern: Vec<bool>,
    pub power_estimate: f64,
}

fn inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

/// Chain loss for one scene and, if requested, the policy parameter gradient.
/// `Ok(None)` marks a degenerate projection (non-positive total power).
pub fn chain_step(
    policy: &Network,
    mode: ChainMode,
    surrogates: Option<Surrogates<'_>>,
    sample: &ChainSample,
    want_grad: bool,
) -> Result<Option<ChainOutcome>> {
    let scene = &sample.scene;
    let p_max = scene.p_max;
    let (a, pcache) = policy.policy_forward(&scene.positions)?;
    let mut pattern = pcache.activation_pattern();
    match mode {
        ChainMode::Surrogate => {
            let s = surrogates.ok_or_else(|| Error::InvalidInput("surrogate mode needs trained surrogates".into()))?;
            let (p_hat, proj_cache) = s.proj.proj_forward(&scene.positions, &a)?;
            let total = p_hat.total();
            if !(total > 0.0) || !total.is_finite() {
                return Ok(None);
            }
            let scale = (p_max / total).sqrt();
            let a_bar = a.scaled(scale);
            let (g, value_cache) = s.value.value_forward(&scene.positions, &a_bar)?;
            let (loss, g_g) = loss_and_grad(&g, &scene.user_areas, &scene.noise);
            pattern.extend(proj_cache.activation_pattern());
            pattern.extend(value_cache.activation_pattern());
            if !want_grad {
                return Ok(Some(ChainOutcome {
                    loss,
                    grad: None,
                    pattern,
                    power_estimate: total,
                }));
            }
            let (_, g_abar) = s.value.value_backward(&value_cache, &g_g, false)?;
            let g_scale = inner(&g_abar, &a.0);
            let g_total = -g_scale * scale / (2.0 * total);
            let (_, g_a_proj) = s.proj.proj_backward(&proj_cache, &vec![g_total; a.dim()], false)?;
            let g_a = &g_abar * Complex64::new(scale, 0.0) + g_a_proj;
            let grad = policy.policy_backward(&pcache, &g_a)?;
            Ok(Some(ChainOutcome {
                loss,
                grad: Some(grad),
                pattern,
                power_estimate: total,
            }))
        }
        ChainMode::Analytic => {
            let gram = sample
                .gram
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("analytic mode needs the scene Grams".into()))?;
            let total = integral_power(&a, &gram.c)?.total();
            if !(total > 0.0) {
                return Ok(None);
            }
            let scale = (p_max / total).sqrt();
            let a_bar = a.scaled(scale);
            let g = integral_couplings(&a_bar, &gram.b)?.0;
            let (loss, g_g) = loss_and_grad(&g, &scene.user_areas, &scene.noise);
            if !want_grad {
                return Ok(Some(ChainOutcome {
                    loss,
                    grad: None,
                    pattern,
                    power_estimate: total,
                }));
            }
            let g_abar = gram.b.adjoint() * g_g;
            let g_scale = inner(&g_abar, &a.0);
            // ∂P/∂A = 2CA in the (Re + i·Im) convention
            let ca = &gram.c * &a.0;
            let g_a = &g_abar * Complex64::new(scale, 0.0) - ca * Complex64::new(scale / total * g_scale, 0.0);
            let grad = policy.policy_backward(&pcache, &g_a)?;
            Ok(Some(ChainOutcome {
                loss,
                grad: Some(grad),
                pattern,
                power_estimate: total,
            }))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySetup {
    pub mode: ChainMode,
    pub scene: SceneParams,
    pub train_seed: u64,
    pub validation_seed: u64,
    pub n_validation: usize,
    pub m_eval: usize,
    pub basis: Basis,
    pub levels: usize,
    pub hidden: usize,
    pub init_seed: u64,
    /// Policy output scale; defaults to the power network's input scale, else a Gram-based estimate.
    pub output_scale: Option<f64>,
}

impl Default for PolicySetup {
    fn default() -> Self {
        Self {
            mode: ChainMode::Surrogate,
            scene: SceneParams::default(),
            train_seed: 1,
            validation_seed: 2,
            n_validation: 100,
            m_eval: 1024,
            basis: Basis::default(),
            levels: 4,
            hidden: 64,
            init_seed: 3,
            output_scale: None,
        }
    }
}

/// Scene `i` of a seeded stream.
pub fn stream_scene(seed: u64, i: usize, params: &SceneParams) -> Result<Scene> {
    sample_scene(seeds::derive(seed, seeds::stream::SCENE, i as u64), params)
}

/// Scenes with Grams on an `m`-node grid.
pub fn scenes_with_grams(
    seed: u64,
    n: usize,
    params: &SceneParams,
    m: usize,
    basis: Basis,
    exec: Execution,
) -> Result<Vec<ChainSample>> {
    par::try_map_indexed(n, exec, |i| {
        let scene = stream_scene(seed, i, params)?;
        let gram = scene_gram(&scene, m, basis, Execution::Sequential)?;
        Ok(ChainSample {
            scene,
            gram: Some(gram),
        })
    })
}

/// Exact sum SE of the policy on each scene (exact projection on the scene's Gram).
pub fn evaluate_policy(policy: &Network, scenes: &[ChainSample], exec: Execution) -> Result<Vec<SeReport>> {
    par::try_map_indexed(scenes.len(), exec, |i| {
        let s = &scenes[i];
        let gram = s
            .gram
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("evaluation scenes need Grams".into()))?;
        let (a, _) = policy.policy_forward(&s.scene.positions)?;
        Ok(exact_sum_se(&s.scene, gram, &a)?.1)
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

/// Mean ratio of estimated to exact total power over the scenes (1 is a perfect power surrogate).
pub fn power_ratio(policy: &Network, proj: &Network, scenes: &[ChainSample], exec: Execution) -> Result<f64> {
    let ratios = par::try_map_indexed(scenes.len(), exec, |i| {
        let s = &scenes[i];
        let gram = s.gram.as_ref().ok_or_else(|| Error::InvalidInput("scene needs Grams".into()))?;
        let (a, _) = policy.policy_forward(&s.scene.positions)?;
        let est = proj.proj_forward(&s.scene.positions, &a)?.0.total();
        Ok::<_, Error>(est / integral_power(&a, &gram.c)?.total())
    })?;
    Ok(mean(ratios.into_iter()))
}

fn gram_output_scale(samples: &[ChainSample], p_max: f64) -> f64 {
    let vals = samples.iter().filter_map(|s| {
        s.gram.as_ref().map(|g| {
            let tr: f64 = (0..g.c.nrows()).map(|i| g.c[(i, i)].re).sum();
            (p_max / tr).sqrt()
        })
    });
    mean(vals)
}

/// Trains a fresh policy; returns the epoch with the best validation exact SE.
pub fn train_policy(
    setup: &PolicySetup,
    surrogates: Option<Surrogates<'_>>,
    hyper: &TrainHyper,
    exec: Execution,
) -> Result<(Network, TrainReport)> {
    hyper.validate()?;
    if setup.mode == ChainMode::Surrogate {
        let s = surrogates.ok_or_else(|| Error::InvalidInput("surrogate mode needs trained surrogates".into()))?;
        if s.proj.kind != NetKind::Proj || s.value.kind != NetKind::Value {
            return Err(Error::InvalidInput("surrogates must be a power and a coupling network".into()));
        }
    }
    let start = Instant::now();
    let frozen = surrogates.map(|s| (s.proj.params.fingerprint(), s.value.params.fingerprint()));
    let train_m = hyper.grid_m;
    let train: Vec<ChainSample> = match setup.mode {
        ChainMode::Analytic => scenes_with_grams(setup.train_seed, hyper.n_train, &setup.scene, train_m, setup.basis, exec)?,
        ChainMode::Surrogate => par::try_map_indexed(hyper.n_train, exec, |i| {
            Ok::<_, Error>(ChainSample {
                scene: stream_scene(setup.train_seed, i, &setup.scene)?,
                gram: None,
            })
        })?,
    };
    let validation = scenes_with_grams(
        setup.validation_seed,
        setup.n_validation,
        &setup.scene,
        setup.m_eval,
        setup.basis,
        exec,
    )?;
    let output_scale = match (setup.output_scale, surrogates) {
        (Some(s), _) => s,
        (None, Some(s)) => s.proj.norm.input_scale,
        (None, None) => gram_output_scale(&validation, setup.scene.p_max),
    };
    let norm = Normalization {
        output_scale,
        ..Normalization::default()
    };
    let mut policy = Network::new(NetKind::Policy, NetKind::Policy.spec(setup.levels, setup.hidden), norm, setup.init_seed)?;
    let mut flat = policy.params.to_flat();
    let mut opt = Adam::new(hyper.adam(), flat.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let val_se = |p: &Network| -> Result<f64> { Ok(mean(evaluate_policy(p, &validation, exec)?.iter().map(|r| r.sum))) };
    let mut best = (val_se(&policy)?, 0usize, policy.params.clone());
    let mut records = Vec::with_capacity(hyper.epochs);
    let mut total_skipped = 0usize;
    for epoch in 1..=hyper.epochs {
        let mut rng = seeds::rng(hyper.shuffle_seed, seeds::stream::SHUFFLE, epoch as u64);
        order.shuffle(&mut rng);
        opt.config.learning_rate = hyper.learning_rate * hyper.schedule.factor(epoch, hyper.epochs);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        let mut skipped = 0usize;
        for chunk in order.chunks(hyper.batch_size) {
            let (loss, grad, skip) = batch_grad(flat.len(), chunk, exec, |i| {
                Ok(chain_step(&policy, setup.mode, surrogates, &train[i], true)?
                    .map(|o| (o.loss, o.grad.expect("requested").to_flat())))
            })?;
            skipped += skip;
            if skip == chunk.len() {
                log::warn!("epoch {epoch}: every scene in a batch had a degenerate projection");
                continue;
            }
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence(format!("policy training diverged at epoch {epoch} (loss {loss})")));
            }
            opt.step(&mut flat, &grad);
            policy.params.set_flat(&flat)?;
            epoch_loss += loss;
            batches += 1;
        }
        if skipped > 0 {
            log::warn!("epoch {epoch}: skipped {skipped} scenes with degenerate projections");
        }
        total_skipped += skipped;
        let val = val_se(&policy)?;
        log::debug!("policy epoch {epoch}: loss {:.4} val SE {val:.4}", epoch_loss / batches.max(1) as f64);
        records.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / batches.max(1) as f64,
            validation: val,
            skipped,
        });
        if val > best.0 {
            best = (val, epoch, policy.params.clone());
        }
    }
    policy.params = best.2;
    if let (Some(s), Some((fp, fv))) = (surrogates, frozen) {
        if s.proj.params.fingerprint() != fp || s.value.params.fingerprint() != fv {
            return Err(Error::Internal("surrogate parameters changed during policy training".into()));
        }
    }
    let mut seeds_used = BTreeMap::new();
    seeds_used.insert("init".to_string(), setup.init_seed);
    seeds_used.insert("train_scenes".to_string(), setup.train_seed);
    seeds_used.insert("validation_scenes".to_string(), setup.validation_seed);
    seeds_used.insert("shuffle".to_string(), hyper.shuffle_seed);
    let mut extra = BTreeMap::new();
    extra.insert("skipped_scenes".to_string(), total_skipped as f64);
    extra.insert("output_scale".to_string(), output_scale);
    if let Some(s) = surrogates {
        extra.insert("power_ratio".to_string(), power_ratio(&policy, s.proj, &validation, exec)?);
    }
    let report = TrainReport {
        network: match setup.mode {
            ChainMode::Surrogate => "policy-surrogate".into(),
            ChainMode::Analytic => "policy-analytic".into(),
        },
        hyper: hyper.clone(),
        epochs: records,
        best_epoch: best.1,
        best_validation: best.0,
        wall_clock_s: start.elapsed().as_secs_f64(),
        seeds: seeds_used,
        extra,
    };
    Ok((policy, report))
}

/// Convenience wrapper for evaluating a weight matrix exactly on scene Grams.
pub fn exact_se_of(sample: &ChainSample, a: &WeightMatrix) -> Result<f64> {
    let gram = sample.gram.as_ref().ok_or_else(|| Error::InvalidInput("scene needs Grams".into()))?;
    Ok(exact_sum_se(&sample.scene, gram, a)?.1.sum)
}
