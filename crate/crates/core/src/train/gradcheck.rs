//! Central finite-difference checks of analytic parameter gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::policy::{chain_step, ChainMode, ChainOutcome, ChainSample, Surrogates};
use crate::error::{Error, Result};
use crate::gnn::nets::{NetKind, Network};
use crate::quadrature::WeightMatrix;
use crate::scene::Point;
use crate::{seeds, CMat, Complex64};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: usize,
    /// Draws replaced because an activation flipped within the step.
    pub skipped_kinks: usize,
    /// Draws replaced because both derivatives sit below the difference quotient's rounding floor.
    pub below_resolution: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.probes > 0 && self.max_rel_error <= tolerance
    }
}

/// Checks `analytic` against central differences of `loss` at randomly probed coordinates.
///
/// `loss` returns the value and an activation pattern; a probe whose pattern
/// differs at either side of the step straddles a kink and is redrawn. The step
/// is `1e-6·max(1, |x_i|)` and the error `|a − n| / max(|a|, |n|, 1e-12)`.
pub fn finite_diff_check(
    x0: &[f64],
    analytic: &[f64],
    mut loss: impl FnMut(&[f64]) -> Result<(f64, Vec<bool>)>,
    probe_seed: u64,
    n_probes: usize,
) -> Result<GradCheckReport> {
    if x0.len() != analytic.len() || x0.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} parameters but {} gradient entries",
            x0.len(),
            analytic.len()
        )));
    }
    let (l0, pattern0) = loss(x0)?;
    let mut rng = seeds::rng(probe_seed, seeds::stream::PROBE, 0);
    let order = sample(&mut rng, x0.len(), x0.len());
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        probes: 0,
        skipped_kinks: 0,
        below_resolution: 0,
    };
    let mut x = x0.to_vec();
    for idx in order.iter() {
        if report.probes >= n_probes {
            break;
        }
        let h = 1e-6 * x0[idx].abs().max(1.0);
        x[idx] = x0[idx] + h;
        let (lp, pp) = loss(&x)?;
        x[idx] = x0[idx] - h;
        let (lm, pm) = loss(&x)?;
        x[idx] = x0[idx];
        if pp != pattern0 || pm != pattern0 {
            report.skipped_kinks += 1;
            continue;
        }
        let num = (lp - lm) / (2.0 * h);
        let a = analytic[idx];
        let scale = a.abs().max(num.abs());
        // the quotient carries rounding of order 1e-15·|ℓ|/h; below 1e5 times that it cannot resolve 1e-5
        if scale < 1e-10 * l0.abs().max(1.0) / h {
            report.below_resolution += 1;
            continue;
        }
        let err = (a - num).abs() / scale.max(1e-12);
        report.max_rel_error = report.max_rel_error.max(err);
        report.probes += 1;
    }
    Ok(report)
}

fn random_complex(rng: &mut impl Rng, k: usize) -> CMat {
    CMat::from_fn(k, k, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn re_inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

/// Gradient check of one network under a random linear readout of its output.
/// `weights` feeds the power and coupling networks and is ignored by the policy.
pub fn network_grad_check(
    net: &Network,
    positions: &[Point],
    weights: &WeightMatrix,
    probe_seed: u64,
    n_probes: usize,
) -> Result<GradCheckReport> {
    let k = positions.len();
    let mut rng = seeds::rng(probe_seed, seeds::stream::PROBE, 1);
    // O(1) loss keeps the difference quotient well above rounding
    let gain = 1.0 / net.norm.output_scale;
    let readout = random_complex(&mut rng, k).scale(gain);
    let readout_real: Vec<f64> = (0..k).map(|_| gain * rng.random_range(-1.0..1.0)).collect();
    let eval = |n: &Network, want: bool| -> Result<(f64, Vec<bool>, Option<Vec<f64>>)> {
        match n.kind {
            NetKind::Policy => {
                let (a, cache) = n.policy_forward(positions)?;
                let g = want.then(|| n.policy_backward(&cache, &readout)).transpose()?;
                Ok((re_inner(&a.0, &readout), cache.activation_pattern(), g.map(|g| g.to_flat())))
            }
            NetKind::Proj => {
                let (p, cache) = n.proj_forward(positions, weights)?;
                let l = p.0.iter().zip(&readout_real).map(|(a, b)| a * b).sum();
                let g = if want { n.proj_backward(&cache, &readout_real, true)?.0 } else { None };
                Ok((l, cache.activation_pattern(), g.map(|g| g.to_flat())))
            }
            NetKind::Value => {
                let (g_out, cache) = n.value_forward(positions, weights)?;
                let g = if want { n.value_backward(&cache, &readout, true)?.0 } else { None };
                Ok((re_inner(&g_out, &readout), cache.activation_pattern(), g.map(|g| g.to_flat())))
            }
        }
    };
    let (_, _, grad) = eval(net, true)?;
    let grad = grad.ok_or_else(|| Error::Internal("backward pass returned no parameter gradient".into()))?;
    let mut probe = net.clone();
    finite_diff_check(
        &net.params.to_flat(),
        &grad,
        |x| {
            probe.params.set_flat(x)?;
            let (l, pat, _) = eval(&probe, false)?;
            Ok((l, pat))
        },
        probe_seed,
        n_probes,
    )
}

/// Gradient check of the policy parameters through the full chain.
pub fn chain_grad_check(
    policy: &Network,
    mode: ChainMode,
    surrogates: Option<Surrogates<'_>>,
    sample_scene: &ChainSample,
    probe_seed: u64,
    n_probes: usize,
) -> Result<GradCheckReport> {
    let degenerate = || Error::InvalidInput("degenerate projection at the probe point".into());
    let ChainOutcome { grad, .. } = chain_step(policy, mode, surrogates, sample_scene, true)?.ok_or_else(degenerate)?;
    let grad = grad.expect("requested").to_flat();
    let mut probe = policy.clone();
    finite_diff_check(
        &policy.params.to_flat(),
        &grad,
        |x| {
            probe.params.set_flat(x)?;
            let out = chain_step(&probe, mode, surrogates, sample_scene, false)?.ok_or_else(degenerate)?;
            Ok((out.loss, out.pattern))
        },
        probe_seed,
        n_probes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::nets::Normalization;
    use crate::quadrature::Basis;
    use crate::scene::SceneParams;
    use crate::train::policy::scenes_with_grams;
    use crate::par::Execution;
    use crate::train::dataset::{gen_supervised_dataset, DatasetMode, DatasetSpec};

    fn scene_and_weights(seed: u64) -> (ChainSample, WeightMatrix) {
        let s = scenes_with_grams(seed, 1, &SceneParams::default(), 64, Basis::default(), Execution::Sequential)
            .unwrap()
            .remove(0);
        let mut rng = seeds::rng(seed, seeds::stream::PROBE, 9);
        let a = WeightMatrix(random_complex(&mut rng, 4).scale(scaled(DatasetMode::Proj).input_scale));
        (s, a)
    }

    fn scaled(mode: DatasetMode) -> Normalization {
        gen_supervised_dataset(&DatasetSpec::new(3, 4, 16, mode, SceneParams::default()), Execution::Sequential)
            .unwrap()
            .normalization()
    }

    fn small(kind: NetKind, seed: u64) -> Network {
        let norm = match kind {
            NetKind::Proj => scaled(DatasetMode::Proj),
            NetKind::Value => scaled(DatasetMode::Value),
            NetKind::Policy => Normalization {
                output_scale: scaled(DatasetMode::Proj).input_scale,
                ..Normalization::default()
            },
        };
        Network::new(kind, kind.spec(4, 16), norm, seed).unwrap()
    }

    #[test]
    fn quadratic_oracle() {
        let x0 = vec![0.5, -1.5, 2.0];
        let loss = |x: &[f64]| Ok((x.iter().map(|v| v * v * v).sum(), vec![]));
        let g: Vec<f64> = x0.iter().map(|v| 3.0 * v * v).collect();
        let r = finite_diff_check(&x0, &g, loss, 1, 10).unwrap();
        assert_eq!(r.probes, 3);
        assert!(r.max_rel_error < 1e-8);
        let mut bad = g.clone();
        bad[1] *= 1.1;
        assert!(finite_diff_check(&x0, &bad, loss, 1, 10).unwrap().max_rel_error > 1e-2);
    }

    #[test]
    fn each_network_alone() {
        let (s, a) = scene_and_weights(21);
        for (i, kind) in [NetKind::Policy, NetKind::Proj, NetKind::Value].into_iter().enumerate() {
            let net = small(kind, 30 + i as u64);
            let r = network_grad_check(&net, &s.scene.positions, &a, 5, 200).unwrap();
            assert!(r.probes >= 200, "{kind:?}: {r:?}");
            assert!(r.passes(1e-5), "{kind:?}: {r:?}");
        }
    }

    #[test]
    fn surrogate_and_analytic_chains() {
        let (s, _) = scene_and_weights(22);
        let policy = small(NetKind::Policy, 40);
        let proj = small(NetKind::Proj, 41);
        let value = small(NetKind::Value, 42);
        let sur = Surrogates {
            proj: &proj,
            value: &value,
        };
        let r = chain_grad_check(&policy, ChainMode::Surrogate, Some(sur), &s, 6, 200).unwrap();
        eprintln!("{r:?}");
        assert!(r.probes >= 200 && r.passes(1e-5), "{r:?}");
        let r = chain_grad_check(&policy, ChainMode::Analytic, None, &s, 7, 200).unwrap();
        eprintln!("{r:?}");
        assert!(r.probes >= 200 && r.passes(1e-5), "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let (s, a) = scene_and_weights(23);
        let net = small(NetKind::Value, 50);
        let (g_out, cache) = net.value_forward(&s.scene.positions, &a).unwrap();
        let readout = g_out.map(|z| z.conj());
        let mut g = net.value_backward(&cache, &readout, true).unwrap().0.unwrap().to_flat();
        for v in g.iter_mut().step_by(3) {
            *v *= 1.05;
        }
        let mut probe = net.clone();
        let r = finite_diff_check(
            &net.params.to_flat(),
            &g,
            |x| {
                probe.params.set_flat(x)?;
                let (o, c) = probe.value_forward(&s.scene.positions, &a)?;
                Ok((re_inner(&o, &readout), c.activation_pattern()))
            },
            8,
            200,
        )
        .unwrap();
        assert!(r.max_rel_error > 1e-2, "{r:?}");
    }
}
