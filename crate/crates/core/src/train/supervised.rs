//! Mean-squared-error training of the power and coupling surrogates.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use super::dataset::{flatten_complex, Dataset, DatasetMode, SupervisedSample, Target};
use super::{EpochRecord, TrainHyper, TrainReport};
use crate::error::{Error, Result};
use crate::gnn::nets::{NetKind, Network};
use crate::gnn::GnnParams;
use crate::optim::Adam;
use crate::par::{self, Execution};
use crate::{seeds, CMat, Complex64};

fn predict(net: &Network, s: &SupervisedSample) -> Result<Vec<f64>> {
    Ok(match net.kind {
        NetKind::Proj => net.proj_forward(&s.scene.positions, &s.weights)?.0 .0,
        NetKind::Value => flatten_complex(&net.value_forward(&s.scene.positions, &s.weights)?.0),
        NetKind::Policy => return Err(Error::InvalidInput("the policy has no supervised targets".into())),
    })
}

/// Squared error in output-scale units and its parameter gradient for one sample.
fn sample_loss_grad(net: &Network, s: &SupervisedSample) -> Result<(f64, GnnParams)> {
    let scale = net.norm.output_scale;
    let inv2 = 1.0 / (scale * scale);
    match (&s.target, net.kind) {
        (Target::Powers(p), NetKind::Proj) => {
            let (pred, cache) = net.proj_forward(&s.scene.positions, &s.weights)?;
            let mut loss = 0.0;
            let g: Vec<f64> = pred
                .0
                .iter()
                .zip(p)
                .map(|(a, b)| {
                    loss += (a - b) * (a - b) * inv2;
                    2.0 * (a - b) * inv2
                })
                .collect();
            let (grads, _) = net.proj_backward(&cache, &g, true)?;
            Ok((loss, grads.expect("requested")))
        }
        (Target::Couplings(t), NetKind::Value) => {
            let (pred, cache) = net.value_forward(&s.scene.positions, &s.weights)?;
            let diff = &pred - t;
            let loss = diff.iter().map(|z| z.norm_sqr()).sum::<f64>() * inv2;
            let g: CMat = diff.map(|z| z * Complex64::new(2.0 * inv2, 0.0));
            let (grads, _) = net.value_backward(&cache, &g, true)?;
            Ok((loss, grads.expect("requested")))
        }
        _ => Err(Error::InvalidInput(format!(
            "a {} network cannot train on this target",
            net.kind.name()
        ))),
    }
}

/// `Σ‖ŷ − y‖² / Σ‖y‖²` over a set.
pub fn normalized_mse(net: &Network, samples: &[SupervisedSample], exec: Execution) -> Result<f64> {
    let parts = par::try_map_indexed(samples.len(), exec, |i| {
        let pred = predict(net, &samples[i])?;
        let tgt = samples[i].target_vec();
        let err: f64 = pred.iter().zip(&tgt).map(|(a, b)| (a - b) * (a - b)).sum();
        let norm: f64 = tgt.iter().map(|b| b * b).sum();
        Ok::<_, Error>((err, norm))
    })?;
    let (mut err, mut norm) = (0.0, 0.0);
    for (e, n) in parts {
        err += e;
        norm += n;
    }
    Ok(err / norm.max(1e-300))
}

/// Mean loss and summed-then-averaged gradient over a batch; per-sample work may run in parallel.
pub(crate) fn batch_grad(
    n_params: usize,
    batch: &[usize],
    exec: Execution,
    f: impl Fn(usize) -> Result<Option<(f64, Vec<f64>)>> + Sync,
) -> Result<(f64, Vec<f64>, usize)> {
    let parts = par::try_map_indexed(batch.len(), exec, |i| f(batch[i]))?;
    let mut grad = vec![0.0; n_params];
    let mut loss = 0.0;
    let mut used = 0usize;
    for (l, g) in parts.into_iter().flatten() {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        used += 1;
    }
    if used > 0 {
        let inv = 1.0 / used as f64;
        loss *= inv;
        for a in &mut grad {
            *a *= inv;
        }
    }
    Ok((loss, grad, batch.len() - used))
}

/// Adam on the per-sample squared error; returns the parameters with the best validation NMSE.
pub fn train_supervised(
    mut net: Network,
    train: &Dataset,
    validation: &Dataset,
    hyper: &TrainHyper,
    exec: Execution,
) -> Result<(Network, TrainReport)> {
    hyper.validate()?;
    let expected = match train.spec.mode {
        DatasetMode::Proj => NetKind::Proj,
        DatasetMode::Value => NetKind::Value,
    };
    if net.kind != expected || validation.spec.mode != train.spec.mode {
        return Err(Error::InvalidInput(format!(
            "{} network cannot train on a {:?} dataset (validation {:?})",
            net.kind.name(),
            train.spec.mode,
            validation.spec.mode
        )));
    }
    if train.is_empty() || validation.is_empty() {
        return Err(Error::InvalidInput("training and validation sets must be non-empty".into()));
    }
    let start = Instant::now();
    let mut flat = net.params.to_flat();
    let mut opt = Adam::new(hyper.adam(), flat.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::with_capacity(hyper.epochs);
    let mut best = (normalized_mse(&net, &validation.samples, exec)?, 0usize, net.params.clone());
    for epoch in 1..=hyper.epochs {
        let mut rng = seeds::rng(hyper.shuffle_seed, seeds::stream::SHUFFLE, epoch as u64);
        order.shuffle(&mut rng);
        opt.config.learning_rate = hyper.learning_rate * hyper.schedule.factor(epoch, hyper.epochs);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(hyper.batch_size) {
            let (loss, grad, _) = batch_grad(flat.len(), chunk, exec, |i| {
                let s = &train.samples[i];
                let (l, g) = if hyper.phase_augment {
                    let index = ((epoch as u64) << 32) | i as u64;
                    let mut rng = seeds::rng(hyper.shuffle_seed, seeds::stream::AUGMENT, index);
                    let phases: Vec<f64> =
                        (0..s.weights.dim()).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
                    sample_loss_grad(&net, &s.phase_rotated(&phases))?
                } else {
                    sample_loss_grad(&net, s)?
                };
                Ok(Some((l, g.to_flat())))
            })?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence(format!(
                    "{} training diverged at epoch {epoch} batch {batches} (loss {loss})",
                    net.kind.name()
                )));
            }
            opt.step(&mut flat, &grad);
            net.params.set_flat(&flat)?;
            epoch_loss += loss;
            batches += 1;
        }
        let val = normalized_mse(&net, &validation.samples, exec)?;
        if !val.is_finite() {
            return Err(Error::Divergence(format!("validation error is {val} at epoch {epoch}")));
        }
        log::debug!("{} epoch {epoch}: train {:.4e} val nmse {val:.4e}", net.kind.name(), epoch_loss / batches as f64);
        records.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / batches as f64,
            validation: val,
            skipped: 0,
        });
        if val < best.0 {
            best = (val, epoch, net.params.clone());
        }
    }
    net.params = best.2;
    let mut seeds_used = BTreeMap::new();
    seeds_used.insert("init".to_string(), net.init_seed);
    seeds_used.insert("data".to_string(), train.spec.seed);
    seeds_used.insert("validation".to_string(), validation.spec.seed);
    seeds_used.insert("shuffle".to_string(), hyper.shuffle_seed);
    let report = TrainReport {
        network: net.kind.name().to_string(),
        hyper: hyper.clone(),
        epochs: records,
        best_epoch: best.1,
        best_validation: best.0,
        wall_clock_s: start.elapsed().as_secs_f64(),
        seeds: seeds_used,
        extra: BTreeMap::new(),
    };
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneParams;
    use crate::train::dataset::{gen_supervised_dataset, DatasetSpec};

    fn tiny(mode: DatasetMode, seed: u64, n: usize) -> Dataset {
        gen_supervised_dataset(&DatasetSpec::new(seed, n, 16, mode, SceneParams::default()), Execution::Parallel)
            .unwrap()
    }

    #[test]
    fn overfits_a_handful_of_samples() {
        let ds = tiny(DatasetMode::Proj, 3, 10);
        let net = Network::new(NetKind::Proj, NetKind::Proj.spec(4, 32), ds.normalization(), 1).unwrap();
        let initial = normalized_mse(&net, &ds.samples, Execution::Parallel).unwrap();
        let hyper = TrainHyper {
            epochs: 2000,
            batch_size: 10,
            learning_rate: 3e-3,
            phase_augment: false,
            ..TrainHyper::supervised()
        };
        let (trained, report) = train_supervised(net, &ds, &ds, &hyper, Execution::Parallel).unwrap();
        let fin = normalized_mse(&trained, &ds.samples, Execution::Parallel).unwrap();
        assert!(fin < 1e-4 * initial, "{initial} -> {fin}");
        assert_eq!(report.epochs.len(), 2000);
        assert_eq!(report.best_validation, fin);
    }

    #[test]
    fn loss_ignores_user_order() {
        let ds = tiny(DatasetMode::Value, 4, 3);
        let net = Network::new(NetKind::Value, NetKind::Value.spec(4, 16), ds.normalization(), 2).unwrap();
        for s in &ds.samples {
            let (base, _) = sample_loss_grad(&net, s).unwrap();
            for perm in crate::linalg::all_permutations(4) {
                let target = match &s.target {
                    Target::Couplings(g) => Target::Couplings(crate::linalg::permute_square(g, &perm)),
                    Target::Powers(_) => unreachable!(),
                };
                let ps = SupervisedSample {
                    scene: s.scene.permuted(&perm),
                    weights: s.weights.permuted(&perm),
                    target,
                    seed: s.seed,
                };
                let (l, _) = sample_loss_grad(&net, &ps).unwrap();
                assert!((l - base).abs() <= 1e-9 * base);
            }
        }
    }

    #[test]
    fn phase_rotation_yields_exact_samples() {
        for mode in [DatasetMode::Proj, DatasetMode::Value] {
            let ds = tiny(mode, 7, 3);
            for s in &ds.samples {
                let r = s.phase_rotated(&[0.3, -1.2, 2.5, 4.0]);
                let oracle = crate::train::dataset::recompute_target(&r, 16, ds.spec.basis).unwrap();
                let (a, b) = (r.target_vec(), SupervisedSample { target: oracle, ..r.clone() }.target_vec());
                let err: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                let scale = b.iter().fold(0.0f64, |m, y| m.max(y.abs()));
                assert!(err <= 1e-12 * scale, "{mode:?}: {err} vs {scale}");
            }
        }
    }

    #[test]
    fn mismatched_mode_is_refused() {
        let ds = tiny(DatasetMode::Proj, 5, 2);
        let net = Network::new(NetKind::Value, NetKind::Value.spec(3, 8), ds.normalization(), 2).unwrap();
        assert!(train_supervised(net, &ds, &ds, &TrainHyper::supervised(), Execution::Sequential).is_err());
    }

    #[test]
    fn validation_matches_direct_oracle_targets() {
        let ds = tiny(DatasetMode::Value, 6, 4);
        for s in &ds.samples {
            let grid = crate::quadrature::build_grid(&s.scene.aperture, 16).unwrap();
            let (_, g) =
                crate::quadrature::direct_integral_check(&s.scene, &grid, &s.weights, Default::default()).unwrap();
            let t = match &s.target {
                Target::Couplings(t) => t,
                _ => unreachable!(),
            };
            assert!(crate::linalg::rel_diff(&g.0, t) < 1e-10);
        }
    }
}
