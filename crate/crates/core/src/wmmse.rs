//! WMMSE sum-rate precoding on the discretised aperture, and the lift of its
//! solution back onto the continuous basis.
//!
//! The couplings `g_kj = Δ·h_kᵀ v_j` carry no conjugate, so the algorithm runs on
//! the conjugated effective channels `f_k = Δ·conj(h_k)` (then `f_kᴴ v = Δ·h_kᵀ v`)
//! and the per-stream aperture weights are folded in as `ṽ_j = sqrt(|A_j|)·v_j`.
//!
//! [`WmmseSolver::Direct`] performs the precoder update on the M nodes: one
//! eigendecomposition of `R = FΛFᴴ` per iteration, then bisection on the
//! multiplier over the eigenvalues. [`WmmseSolver::Reduced`] uses the fact that
//! every iterate lies in the column span of `F = [f_1 … f_K]` and carries out
//! the same update in K coordinates (`ṽ_j = F y_j`) through
//! `(FΛFᴴ + cI)⁻¹F = F(ΛΓ + cI)⁻¹` with `Γ = FᴴF`. Both produce the same iterates.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::objective::{self, SeReport};
use crate::par::Execution;
use crate::quadrature::{self, ApertureGrid, Basis, ChannelMatrix, GramPair, WeightMatrix};
use crate::scene::Scene;
use crate::{CMat, Complex64};

/// Effective per-user channels on a grid: `h_k[m] = H_k(r_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannels {
    pub channels: ChannelMatrix,
    pub areas: Vec<f64>,
    pub noise: Vec<f64>,
    pub p_max: f64,
}

impl EffectiveChannels {
    pub fn num_users(&self) -> usize {
        self.channels.num_users()
    }

    pub fn num_nodes(&self) -> usize {
        self.channels.num_nodes()
    }

    /// Discrete couplings `G[k][j] = Δ·Σ_m h_k[m]·V[m][j]`.
    pub fn couplings(&self, v: &CMat) -> CMat {
        let h = &self.channels.h;
        let delta = self.channels.cell_area;
        CMat::from_fn(h.nrows(), v.ncols(), |k, j| {
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..h.ncols() {
                acc += h[(k, m)] * v[(m, j)];
            }
            acc * delta
        })
    }

    pub fn se(&self, v: &CMat) -> Result<SeReport> {
        let g = quadrature::CouplingMatrix(self.couplings(v));
        Ok(objective::sum_se(&objective::sinr_vector(&g, &self.areas, &self.noise)?))
    }
}

pub fn discretize_channels(scene: &Scene, grid: &ApertureGrid, exec: Execution) -> Result<EffectiveChannels> {
    Ok(EffectiveChannels {
        channels: quadrature::channel_matrix(scene, grid, exec)?,
        areas: scene.user_areas.clone(),
        noise: scene.noise.clone(),
        p_max: scene.p_max,
    })
}

/// Precoders at grid nodes; column k drives user k, and `Δ·Σ|V|²` is the transmit power.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePrecoder {
    pub v: CMat,
    pub cell_area: f64,
}

impl DiscretePrecoder {
    pub fn power(&self) -> f64 {
        self.v.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.cell_area
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WmmseInit {
    /// `v_k ∝ conj(h_k)` with the budget split equally.
    #[default]
    MatchedFilter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WmmseSolver {
    /// M-dimensional regularised least squares per iteration.
    #[default]
    Direct,
    /// The same update restricted to the K-dimensional channel span.
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WmmseOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub init: WmmseInit,
    #[serde(default)]
    pub solver: WmmseSolver,
}

impl Default for WmmseOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-6,
            init: WmmseInit::MatchedFilter,
            solver: WmmseSolver::Direct,
        }
    }
}

impl WmmseOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidInput("WMMSE needs at least one iteration".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidInput(format!("WMMSE tolerance must be positive, got {}", self.tolerance)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WmmseSolution {
    pub precoder: DiscretePrecoder,
    /// Sum SE of the initial point followed by one entry per iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const BRACKET_TOL: f64 = 1e-10;

/// Sum SE from couplings `f_kᴴ ṽ_j` (aperture weights already folded in).
fn se_of_couplings(g: &CMat, noise: &[f64]) -> f64 {
    let k = g.nrows();
    let mut total = 0.0;
    for row in 0..k {
        let signal = g[(row, row)].norm_sqr();
        let mut t = noise[row];
        for col in 0..k {
            t += g[(row, col)].norm_sqr();
        }
        total += (t / (t - signal)).ln();
    }
    total / std::f64::consts::LN_2
}

/// Receive scalars and MSE weights for the current couplings: `Λ_k = w_k|u_k|²`, `rhs_k = w_k u_k`.
fn receiver_update(g: &CMat, noise: &[f64]) -> (Vec<f64>, Vec<Complex64>) {
    let k = g.nrows();
    let mut lambda = vec![0.0; k];
    let mut rhs = vec![Complex64::new(0.0, 0.0); k];
    for row in 0..k {
        let mut t = noise[row];
        for col in 0..k {
            t += g[(row, col)].norm_sqr();
        }
        let u = g[(row, row)] / t;
        let mse = 1.0 - (u.conj() * g[(row, row)]).re;
        let w = 1.0 / mse;
        lambda[row] = w * u.norm_sqr();
        rhs[row] = u * w;
    }
    (lambda, rhs)
}

/// Smallest multiplier in `[0, ∞)` whose solution meets the budget: zero if the
/// unconstrained solution is feasible, else a doubled bracket refined by bisection.
fn bisect_multiplier(power: impl Fn(f64) -> Option<f64>, p_max: f64) -> Result<f64> {
    if power(0.0).is_some_and(|p| p <= p_max) {
        return Ok(0.0);
    }
    let feasible = |mu: f64| power(mu).is_some_and(|p| p <= p_max);
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut doublings = 0;
    while !feasible(hi) {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 2000 {
            return Err(Error::BisectionFailed {
                lo,
                hi,
                power_hi: power(hi).unwrap_or(f64::NAN),
                budget: p_max,
            });
        }
    }
    while hi - lo > BRACKET_TOL * hi {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Precoders `ṽ_j` (M×K) in node coordinates.
struct Direct<'a> {
    /// Columns `f_k = Δ·conj(h_k)`.
    f: CMat,
    power_weight: &'a [f64],
    noise: &'a [f64],
}

impl Direct<'_> {
    fn power(&self, vt: &CMat) -> f64 {
        (0..vt.ncols())
            .map(|j| vt.column(j).iter().map(|z| z.norm_sqr()).sum::<f64>() * self.power_weight[j])
            .sum()
    }

    /// `ṽ_j = (R + c_j I)⁻¹ f_j rhs_j` with `c_j = μ·Δ/|A_j|`, solved on the eigenbasis of `R = FΛFᴴ`.
    fn update(&self, lambda: &[f64], rhs: &[Complex64], p_max: f64) -> Result<CMat> {
        let (m, k) = self.f.shape();
        let mut fl = self.f.clone();
        let mut fr = self.f.clone();
        for j in 0..k {
            fl.column_mut(j).scale_mut(lambda[j]);
            fr.column_mut(j).iter_mut().for_each(|z| *z *= rhs[j]);
        }
        let r = &fl * self.f.adjoint();
        let eig = r.symmetric_eigen();
        let top = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
        let floor = 1e-12 * top;
        let mut b = eig.eigenvectors.adjoint() * fr;
        for (node, &ev) in eig.eigenvalues.iter().enumerate() {
            if ev <= floor {
                b.row_mut(node).fill(Complex64::new(0.0, 0.0));
            }
        }
        let ev: Vec<f64> = eig.eigenvalues.iter().map(|&e| if e <= floor { 0.0 } else { e }).collect();
        let power = |mu: f64| -> Option<f64> {
            let mut total = 0.0;
            for j in 0..k {
                let c = mu * self.power_weight[j];
                let mut acc = 0.0;
                for node in 0..m {
                    let num = b[(node, j)].norm_sqr();
                    if num > 0.0 {
                        let d = ev[node] + c;
                        if !(d > 0.0) {
                            return None;
                        }
                        acc += num / (d * d);
                    }
                }
                total += acc * self.power_weight[j];
            }
            total.is_finite().then_some(total)
        };
        let mu = bisect_multiplier(power, p_max)?;
        let mut scaled = b;
        for j in 0..k {
            let c = mu * self.power_weight[j];
            for node in 0..m {
                if ev[node] + c > 0.0 {
                    scaled[(node, j)] /= ev[node] + c;
                }
            }
        }
        Ok(&eig.eigenvectors * scaled)
    }
}

struct Reduced<'a> {
    gamma: &'a CMat,
    /// Δ/|A_j|: converts ‖ṽ_j‖² into transmit power.
    power_weight: Vec<f64>,
    noise: &'a [f64],
}

impl Reduced<'_> {
    fn k(&self) -> usize {
        self.gamma.nrows()
    }

    /// `f_kᴴ ṽ_j = (Γ Y)[k][j]`.
    fn couplings(&self, y: &CMat) -> CMat {
        self.gamma * y
    }

    fn power(&self, y: &CMat) -> f64 {
        let gy = self.gamma * y;
        (0..self.k())
            .map(|j| {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..self.k() {
                    acc += y[(i, j)].conj() * gy[(i, j)];
                }
                acc.re * self.power_weight[j]
            })
            .sum()
    }

    fn sum_se(&self, y: &CMat) -> f64 {
        se_of_couplings(&self.couplings(y), self.noise)
    }

    /// Precoder coordinates for multiplier `mu`, given `Λ` and the right-hand weights `w_j u_j`.
    fn solve(&self, lambda: &[f64], rhs: &[Complex64], mu: f64) -> Option<CMat> {
        let k = self.k();
        let mut y = CMat::zeros(k, k);
        for j in 0..k {
            let c = mu * self.power_weight[j];
            let mut m = CMat::from_fn(k, k, |r, s| self.gamma[(r, s)] * lambda[r]);
            for d in 0..k {
                m[(d, d)] += Complex64::new(c, 0.0);
            }
            let mut e = DVector::from_element(k, Complex64::new(0.0, 0.0));
            e[j] = rhs[j];
            let x = m.lu().solve(&e)?;
            if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return None;
            }
            y.set_column(j, &x);
        }
        Some(y)
    }
}

/// Sum-rate WMMSE with the sum-power constraint enforced by bisection on its multiplier.
pub fn wmmse_precoding(eff: &EffectiveChannels, options: &WmmseOptions) -> Result<WmmseSolution> {
    options.validate()?;
    let k = eff.num_users();
    let m = eff.num_nodes();
    if k == 0 || m == 0 {
        return Err(Error::InvalidInput("WMMSE needs at least one user and one node".into()));
    }
    if eff.areas.len() != k || eff.noise.len() != k {
        return Err(Error::Shape("per-user areas and noise must have one entry per user".into()));
    }
    let delta = eff.channels.cell_area;
    let h = &eff.channels.h;
    // Γ[k][i] = f_kᴴ f_i = Δ²·Σ_m h_k[m]·conj(h_i[m])
    let gamma = CMat::from_fn(k, k, |r, s| {
        let mut acc = Complex64::new(0.0, 0.0);
        for node in 0..m {
            acc += h[(r, node)] * h[(s, node)].conj();
        }
        acc * (delta * delta)
    });
    let power_weight: Vec<f64> = eff.areas.iter().map(|a| delta / a).collect();
    let sqrt_area: Vec<f64> = eff.areas.iter().map(|a| a.sqrt()).collect();
    let mut init = CMat::zeros(k, k);
    for j in 0..k {
        let norm = (gamma[(j, j)].re * power_weight[j]).sqrt();
        if !(norm > 0.0) {
            return Err(Error::InvalidInput(format!("user {j} has a zero channel on the grid")));
        }
        init[(j, j)] = Complex64::new((eff.p_max / k as f64).sqrt() / norm, 0.0);
    }
    let f = CMat::from_fn(m, k, |node, j| h[(j, node)].conj() * delta);

    let (vt, trace, iterations, converged) = match options.solver {
        WmmseSolver::Reduced => {
            let red = Reduced {
                gamma: &gamma,
                power_weight: power_weight.clone(),
                noise: &eff.noise,
            };
            let mut y = init;
            let run = iterate(
                options,
                red.sum_se(&y),
                |_| {
                    let (lambda, rhs) = receiver_update(&red.couplings(&y), &eff.noise);
                    y = solve_power_constrained(&red, &lambda, &rhs, eff.p_max)?;
                    Ok(red.sum_se(&y))
                },
            )?;
            let scale = (eff.p_max / red.power(&y)).sqrt();
            (&f * (&y * Complex64::new(scale, 0.0)), run.0, run.1, run.2)
        }
        WmmseSolver::Direct => {
            let dir = Direct {
                f: f.clone(),
                power_weight: &power_weight,
                noise: &eff.noise,
            };
            let mut vt = &f * init;
            let se = |vt: &CMat| se_of_couplings(&(dir.f.adjoint() * vt), dir.noise);
            let run = iterate(options, se(&vt), |_| {
                let (lambda, rhs) = receiver_update(&(dir.f.adjoint() * &vt), dir.noise);
                vt = dir.update(&lambda, &rhs, eff.p_max)?;
                Ok(se(&vt))
            })?;
            let scale = (eff.p_max / dir.power(&vt)).sqrt();
            (&vt * Complex64::new(scale, 0.0), run.0, run.1, run.2)
        }
    };
    // V_j = ṽ_j / sqrt(|A_j|)
    let v = CMat::from_fn(m, k, |node, j| vt[(node, j)] / sqrt_area[j]);
    Ok(WmmseSolution {
        precoder: DiscretePrecoder { v, cell_area: delta },
        trace,
        iterations,
        converged,
    })
}

/// Runs `step` until the relative SE change drops to the tolerance; returns (trace, iterations, converged).
fn iterate(
    options: &WmmseOptions,
    initial_se: f64,
    mut step: impl FnMut(usize) -> Result<f64>,
) -> Result<(Vec<f64>, usize, bool)> {
    let mut trace = vec![initial_se];
    let mut iterations = 0;
    while iterations < options.max_iterations {
        let se = step(iterations)?;
        iterations += 1;
        let prev = *trace.last().unwrap_or(&se);
        trace.push(se);
        if (se - prev).abs() <= options.tolerance * prev.abs() {
            return Ok((trace, iterations, true));
        }
    }
    Ok((trace, iterations, false))
}

fn solve_power_constrained(red: &Reduced<'_>, lambda: &[f64], rhs: &[Complex64], p_max: f64) -> Result<CMat> {
    let mu = bisect_multiplier(|mu| red.solve(lambda, rhs, mu).map(|y| red.power(&y)), p_max)?;
    red.solve(lambda, rhs, mu)
        .ok_or_else(|| Error::Internal(format!("precoder solve failed at the accepted multiplier {mu}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedPrecoder {
    pub weights: WeightMatrix,
    /// `sqrt(Σ|V − ΦA|²Δ)`.
    pub residual: f64,
    /// Residual relative to `sqrt(Σ|V|²Δ)` (0 for a zero precoder).
    pub relative_residual: f64,
    pub condition: f64,
}

pub const LIFT_CONDITION_LIMIT: f64 = 1e12;

/// Least-squares coordinates of a grid precoder in the basis, via the normal equations
/// `(ΦᴴΦ)A = ΦᴴV` with `ΦᴴΦ = C/Δ`.
pub fn lift_precoder(precoder: &DiscretePrecoder, channels: &ChannelMatrix, basis: Basis) -> Result<LiftedPrecoder> {
    let (k, m) = (channels.num_users(), channels.num_nodes());
    if precoder.v.nrows() != m || precoder.v.ncols() != k {
        return Err(Error::Shape(format!(
            "precoder is {}x{}, grid has {m} nodes and {k} users",
            precoder.v.nrows(),
            precoder.v.ncols()
        )));
    }
    let delta = channels.cell_area;
    let gram = quadrature::gram_pair(channels, basis);
    let condition = linalg::hermitian_condition(&gram.c);
    if !(condition <= LIFT_CONDITION_LIMIT) {
        return Err(Error::IllConditionedLift {
            condition,
            limit: LIFT_CONDITION_LIMIT,
        });
    }
    let normal = &gram.c / Complex64::new(delta, 0.0);
    // (ΦᴴV)[i][k] = Σ_m conj(Φ_i(r_m))·V[m][k]
    let rhs = CMat::from_fn(k, k, |i, col| {
        let mut acc = Complex64::new(0.0, 0.0);
        for node in 0..m {
            acc += basis.apply(channels.h[(i, node)]).conj() * precoder.v[(node, col)];
        }
        acc
    });
    let a = match normal.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => normal
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Internal("lift normal equations are singular".into()))?,
    };
    let weights = WeightMatrix(a);
    let fitted = quadrature::sample_currents(channels, &weights, basis);
    let resid_sq: f64 = (&precoder.v - &fitted).iter().map(|z| z.norm_sqr()).sum::<f64>() * delta;
    let total_sq: f64 = precoder.power();
    let residual = resid_sq.sqrt();
    Ok(LiftedPrecoder {
        weights,
        residual,
        relative_residual: if total_sq > 0.0 { residual / total_sq.sqrt() } else { 0.0 },
        condition,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub m: usize,
    pub m_eval: usize,
    pub iterations: usize,
    pub converged: bool,
    /// SE of the lifted solution on the evaluation grid at exactly P_max.
    pub report: SeReport,
    /// SE of the grid precoder on its own grid.
    pub discrete_se: f64,
    pub lift_residual: f64,
    /// Grid setup, channel sampling, WMMSE and lift.
    pub runtime_s: f64,
}

/// Lifted WMMSE weights for one scene on an `m`-node grid.
pub fn baseline_weights(
    scene: &Scene,
    m: usize,
    options: &WmmseOptions,
    basis: Basis,
    exec: Execution,
) -> Result<(LiftedPrecoder, WmmseSolution)> {
    let grid = quadrature::build_grid(&scene.aperture, m)?;
    let eff = discretize_channels(scene, &grid, exec)?;
    let sol = wmmse_precoding(&eff, options)?;
    let lifted = lift_precoder(&sol.precoder, &eff.channels, basis)?;
    Ok((lifted, sol))
}

/// Full baseline pipeline evaluated against a precomputed evaluation Gram.
pub fn baseline_on_gram(
    scene: &Scene,
    m: usize,
    m_eval: usize,
    eval_gram: &GramPair,
    options: &WmmseOptions,
    exec: Execution,
) -> Result<BaselineOutcome> {
    let start = Instant::now();
    let (lifted, sol) = baseline_weights(scene, m, options, eval_gram.basis, exec)?;
    let runtime_s = start.elapsed().as_secs_f64();
    let (_, report) = objective::exact_sum_se(scene, eval_gram, &lifted.weights)?;
    let discrete_se = *sol.trace.last().unwrap_or(&0.0);
    Ok(BaselineOutcome {
        m,
        m_eval,
        iterations: sol.iterations,
        converged: sol.converged,
        report,
        discrete_se,
        lift_residual: lifted.relative_residual,
        runtime_s,
    })
}

pub fn baseline_se(
    scene: &Scene,
    m: usize,
    m_eval: usize,
    options: &WmmseOptions,
    basis: Basis,
    exec: Execution,
) -> Result<BaselineOutcome> {
    let eval_gram = objective::scene_gram(scene, m_eval, basis, exec)?;
    baseline_on_gram(scene, m, m_eval, &eval_gram, options, exec)
}

/// Baseline results CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub scene_id: u64,
    pub m: usize,
    pub m_eval: usize,
    pub iterations: usize,
    pub converged: bool,
    pub sum_se: f64,
    pub runtime_s: f64,
}

impl BaselineRow {
    pub fn new(scene_id: u64, outcome: &BaselineOutcome) -> Self {
        Self {
            scene_id,
            m: outcome.m,
            m_eval: outcome.m_eval,
            iterations: outcome.iterations,
            converged: outcome.converged,
            sum_se: outcome.report.sum,
            runtime_s: outcome.runtime_s,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{build_grid, channel_matrix};
    use crate::scene::{sample_scene, SceneParams};
    use crate::seeds;
    use rand::Rng;

    fn eff_for(seed: u64, k: usize, m: usize) -> (Scene, EffectiveChannels) {
        let params = SceneParams {
            num_users: k,
            ..SceneParams::default()
        };
        let scene = sample_scene(seed, &params).unwrap();
        let grid = build_grid(&scene.aperture, m).unwrap();
        let eff = discretize_channels(&scene, &grid, Execution::Parallel).unwrap();
        (scene, eff)
    }

    fn mrt_se(eff: &EffectiveChannels) -> f64 {
        let delta = eff.channels.cell_area;
        let hh: f64 = eff.channels.h.iter().map(|z| z.norm_sqr()).sum();
        (1.0 + eff.areas[0] * delta * hh * eff.p_max / eff.noise[0]).log2()
    }

    #[test]
    fn single_user_is_mrt() {
        for seed in 0..5 {
            let (_, eff) = eff_for(seed, 1, 256);
            let sol = wmmse_precoding(&eff, &WmmseOptions::default()).unwrap();
            let se = eff.se(&sol.precoder.v).unwrap().sum;
            let expect = mrt_se(&eff);
            assert!((se - expect).abs() <= 1e-8 * expect, "{se} vs {expect}");
            assert!((sol.precoder.power() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn direct_and_reduced_agree() {
        for seed in 0..4 {
            let (_, eff) = eff_for(seed, 4, 64);
            let direct = wmmse_precoding(&eff, &WmmseOptions::default()).unwrap();
            let reduced = wmmse_precoding(
                &eff,
                &WmmseOptions {
                    solver: WmmseSolver::Reduced,
                    ..WmmseOptions::default()
                },
            )
            .unwrap();
            assert_eq!(direct.iterations, reduced.iterations);
            for (a, b) in direct.trace.iter().zip(&reduced.trace) {
                assert!((a - b).abs() <= 1e-8 * a, "{a} vs {b}");
            }
            assert!(linalg::rel_diff(&direct.precoder.v, &reduced.precoder.v) < 1e-6);
        }
    }

    #[test]
    fn single_node_single_user() {
        let (_, eff) = eff_for(3, 1, 1);
        let sol = wmmse_precoding(&eff, &WmmseOptions::default()).unwrap();
        let se = eff.se(&sol.precoder.v).unwrap().sum;
        let expect = mrt_se(&eff);
        assert!((se - expect).abs() <= 1e-10 * expect);
    }

    #[test]
    fn trace_non_decreasing_and_power_exact() {
        for seed in 0..10 {
            let (_, eff) = eff_for(seed, 4, 64);
            let sol = wmmse_precoding(&eff, &WmmseOptions::default()).unwrap();
            for w in sol.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-8, "seed {seed}: {:?}", w);
            }
            assert!((sol.precoder.power() - 1.0).abs() < 1e-6);
            let final_se = eff.se(&sol.precoder.v).unwrap().sum;
            assert!(final_se >= *sol.trace.last().unwrap() - 1e-8);
        }
    }

    #[test]
    fn discrete_se_matches_quadrature_couplings() {
        let (scene, eff) = eff_for(1, 4, 64);
        let mut rng = seeds::rng(1, seeds::stream::WEIGHTS, 0);
        let v = CMat::from_fn(64, 4, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let (_, g) = quadrature::integrals_of_samples(&eff.channels, &v);
        let via_quad = objective::sum_se(&objective::sinr_vector(&g, &scene.user_areas, &scene.noise).unwrap()).sum;
        assert!((eff.se(&v).unwrap().sum - via_quad).abs() <= 1e-12 * via_quad);
    }

    #[test]
    fn options_validation() {
        let (_, eff) = eff_for(1, 2, 16);
        let bad = WmmseOptions {
            max_iterations: 0,
            ..WmmseOptions::default()
        };
        assert!(wmmse_precoding(&eff, &bad).is_err());
        let bad = WmmseOptions {
            tolerance: 0.0,
            ..WmmseOptions::default()
        };
        assert!(wmmse_precoding(&eff, &bad).is_err());
    }

    #[test]
    fn lift_recovers_in_subspace_weights() {
        let scene = sample_scene(6, &SceneParams::default()).unwrap();
        let grid = build_grid(&scene.aperture, 256).unwrap();
        let ch = channel_matrix(&scene, &grid, Execution::Parallel).unwrap();
        let mut rng = seeds::rng(6, seeds::stream::WEIGHTS, 0);
        let a0 = WeightMatrix(CMat::from_fn(4, 4, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        }));
        for basis in [Basis::ConjugateChannel, Basis::Channel] {
            let v = quadrature::sample_currents(&ch, &a0, basis);
            let lifted = lift_precoder(&DiscretePrecoder { v, cell_area: ch.cell_area }, &ch, basis).unwrap();
            let err = lifted.weights.0.iter().zip(a0.0.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            assert!(err < 1e-8, "{basis:?}: {err}");
            assert!(lifted.relative_residual < 1e-9);
        }
        let zero = DiscretePrecoder {
            v: CMat::zeros(256, 4),
            cell_area: ch.cell_area,
        };
        let lifted = lift_precoder(&zero, &ch, Basis::default()).unwrap();
        assert!(lifted.weights.0.iter().all(|z| z.norm() == 0.0));
        assert_eq!(lifted.residual, 0.0);
    }

    #[test]
    fn wmmse_solution_lifts_exactly_and_keeps_se() {
        let (scene, eff) = eff_for(1, 4, 256);
        let sol = wmmse_precoding(&eff, &WmmseOptions::default()).unwrap();
        let lifted = lift_precoder(&sol.precoder, &eff.channels, Basis::ConjugateChannel).unwrap();
        assert!(lifted.relative_residual <= 1e-9, "{}", lifted.relative_residual);
        let gram = quadrature::gram_pair(&eff.channels, Basis::ConjugateChannel);
        let lifted_se = objective::se_of_weights(&scene, &gram, &lifted.weights).unwrap().sum;
        let pointwise = eff.se(&sol.precoder.v).unwrap().sum;
        assert!(lifted_se >= pointwise - 1e-6);
    }

    #[test]
    fn channel_basis_lift_loses_the_solution() {
        let (_, eff) = eff_for(1, 4, 256);
        let sol = wmmse_precoding(&eff, &WmmseOptions::default()).unwrap();
        let lifted = lift_precoder(&sol.precoder, &eff.channels, Basis::Channel).unwrap();
        assert!(lifted.relative_residual > 0.5);
    }

    #[test]
    fn lift_rejects_duplicate_users() {
        let base = sample_scene(2, &SceneParams::default()).unwrap();
        let mut positions = base.positions.clone();
        positions[1] = positions[0];
        let scene = Scene::new(base.aperture, base.constants, positions, base.zeta, base.p_max).unwrap();
        let grid = build_grid(&scene.aperture, 64).unwrap();
        let ch = channel_matrix(&scene, &grid, Execution::Sequential).unwrap();
        let p = DiscretePrecoder {
            v: CMat::zeros(64, 4),
            cell_area: ch.cell_area,
        };
        assert!(matches!(
            lift_precoder(&p, &ch, Basis::default()),
            Err(Error::IllConditionedLift { .. })
        ));
    }

    #[test]
    fn baseline_pipeline_runs() {
        let scene = sample_scene(1, &SceneParams::default()).unwrap();
        let out = baseline_se(&scene, 64, 256, &WmmseOptions::default(), Basis::default(), Execution::Parallel).unwrap();
        assert!(out.report.sum > 0.0 && out.runtime_s > 0.0);
        assert_eq!((out.m, out.m_eval), (64, 256));
        let row = BaselineRow::new(1, &out);
        assert_eq!(row.sum_se, out.report.sum);
    }
}
