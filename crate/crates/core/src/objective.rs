//! SINR and spectral efficiency, the power projection, and current reconstruction.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{
    self, gram_pair, integral_couplings, integral_power, integrals_of_samples, ApertureGrid, Basis, ChannelMatrix,
    CouplingMatrix, GramPair, PowerVector, WeightMatrix,
};
use crate::scene::{channel_response_at, Point, Scene};
use crate::seeds;
use crate::{CMat, Complex64};

#[derive(Debug, Clone, PartialEq)]
pub struct SinrVector(pub Vec<f64>);

/// `γ_k = |A_k||g_kk|² / (Σ_{j≠k} |A_j||g_kj|² + σ_k²)`.
pub fn sinr_vector(g: &CouplingMatrix, areas: &[f64], noise: &[f64]) -> Result<SinrVector> {
    let k = g.0.nrows();
    if g.0.ncols() != k || areas.len() != k || noise.len() != k {
        return Err(Error::Shape(format!(
            "couplings {}x{}, {} areas, {} noise variances",
            g.0.nrows(),
            g.0.ncols(),
            areas.len(),
            noise.len()
        )));
    }
    if let Some((user, s)) = noise.iter().enumerate().find(|(_, s)| !(**s > 0.0)) {
        return Err(Error::InvalidInput(format!("noise variance of user {user} must be positive, got {s}")));
    }
    let gamma = (0..k)
        .map(|row| {
            let interference: f64 = areas
                .iter()
                .enumerate()
                .filter(|&(col, _)| col != row)
                .map(|(col, area)| area * g.0[(row, col)].norm_sqr())
                .sum();
            areas[row] * g.0[(row, row)].norm_sqr() / (interference + noise[row])
        })
        .collect();
    Ok(SinrVector(gamma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeReport {
    /// log2(1 + γ_k), bit/s/Hz.
    pub per_user: Vec<f64>,
    pub sum: f64,
}

pub fn sum_se(gamma: &SinrVector) -> SeReport {
    let per_user: Vec<f64> = gamma.0.iter().map(|g| g.ln_1p() / std::f64::consts::LN_2).collect();
    let sum = per_user.iter().sum();
    SeReport { per_user, sum }
}

/// One evaluated (scene, method) pair, flattened for CSV output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeRow {
    pub scene_id: u64,
    pub method: String,
    pub m_eval: usize,
    pub per_user: Vec<f64>,
    pub sum_se: f64,
}

impl SeRow {
    pub fn new(scene_id: u64, method: &str, m_eval: usize, report: &SeReport) -> Self {
        Self {
            scene_id,
            method: method.to_string(),
            m_eval,
            per_user: report.per_user.clone(),
            sum_se: report.sum,
        }
    }

    pub fn header(k: usize) -> Vec<String> {
        let mut h = vec!["scene_id".to_string(), "method".into(), "m_eval".into()];
        h.extend((0..k).map(|i| format!("se_user{i}")));
        h.push("sum_se".into());
        h
    }

    pub fn fields(&self) -> Vec<String> {
        let mut f = vec![self.scene_id.to_string(), self.method.clone(), self.m_eval.to_string()];
        f.extend(self.per_user.iter().map(|x| format!("{x:.17e}")));
        f.push(format!("{:.17e}", self.sum_se));
        f
    }
}

/// `Ā = A·sqrt(P_max / Σ_j p_j)`.
pub fn project_weights(a: &WeightMatrix, p: &PowerVector, p_max: f64) -> Result<WeightMatrix> {
    let total = p.total();
    if !(total > 0.0) {
        return Err(Error::ProjectionDegenerate { total });
    }
    Ok(a.scaled((p_max / total).sqrt()))
}

/// Exact evaluation of a weight matrix: project with exact powers, then SE from `G = B·Ā`.
pub fn exact_sum_se(scene: &Scene, gram: &GramPair, a: &WeightMatrix) -> Result<(WeightMatrix, SeReport)> {
    let p = integral_power(a, &gram.c)?;
    let projected = project_weights(a, &p, scene.p_max)?;
    let report = se_of_weights(scene, gram, &projected)?;
    Ok((projected, report))
}

/// SE of already-projected weights.
pub fn se_of_weights(scene: &Scene, gram: &GramPair, a: &WeightMatrix) -> Result<SeReport> {
    let g = integral_couplings(a, &gram.b)?;
    Ok(sum_se(&sinr_vector(&g, &scene.user_areas, &scene.noise)?))
}

/// One scene's Grams on a fresh grid of `m` nodes.
pub fn scene_gram(scene: &Scene, m: usize, basis: Basis, exec: crate::par::Execution) -> Result<GramPair> {
    let grid = quadrature::build_grid(&scene.aperture, m)?;
    let ch = quadrature::channel_matrix(scene, &grid, exec)?;
    Ok(gram_pair(&ch, basis))
}

/// `V̄_k(r) = Σ_j ā_jk Φ_j(r)`, evaluable anywhere on the aperture.
#[derive(Debug, Clone)]
pub struct CurrentField {
    scene: Scene,
    weights: WeightMatrix,
    basis: Basis,
    normal: Point,
}

pub fn reconstruct_current(a: &WeightMatrix, scene: &Scene, basis: Basis) -> Result<CurrentField> {
    if a.dim() != scene.num_users() || a.0.ncols() != scene.num_users() {
        return Err(Error::Shape(format!(
            "weights are {}x{} for {} users",
            a.0.nrows(),
            a.0.ncols(),
            scene.num_users()
        )));
    }
    Ok(CurrentField {
        scene: scene.clone(),
        weights: a.clone(),
        basis,
        normal: scene.aperture.normal_vec(),
    })
}

impl CurrentField {
    pub fn eval(&self, r: &Point) -> Result<Vec<Complex64>> {
        if !self.scene.aperture.contains(r, 1e-9) {
            return Err(Error::OutsideAperture(r.x, r.y, r.z));
        }
        let k = self.scene.num_users();
        let phi = (0..k)
            .map(|j| {
                channel_response_at(&self.scene.positions[j], &self.normal, &self.scene.constants, r)
                    .map(|h| self.basis.apply(h))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((0..k)
            .map(|user| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, f) in phi.iter().enumerate() {
                    acc += self.weights.0[(j, user)] * f;
                }
                acc
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppendixOutcome {
    pub user: usize,
    /// SE of the solution carrying the orthogonal component, at total power P_max.
    pub r0: f64,
    /// SE after dropping that component and rescaling back to P_max.
    pub r1: f64,
    pub c: f64,
    /// Largest |∫ H_j V⊥| relative to the largest |∫ H_j V_k|.
    pub coupling_leak: f64,
    /// ∫|V⊥|² / ∫|V_k|² of the mixed solution.
    pub perp_share: f64,
}

fn hermitian_dot(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        acc += a.conj() * b;
    }
    acc
}

fn remove_components(v: &mut [Complex64], against: &[Vec<Complex64>]) {
    for _ in 0..2 {
        for u in against {
            let nn = hermitian_dot(u, u).re;
            if nn > 0.0 {
                let coeff = hermitian_dot(u, v) / nn;
                for (x, y) in v.iter_mut().zip(u) {
                    *x -= coeff * y;
                }
            }
        }
    }
}

fn orthonormal_set(vectors: Vec<Vec<Complex64>>) -> Vec<Vec<Complex64>> {
    let mut out: Vec<Vec<Complex64>> = Vec::new();
    for mut v in vectors {
        let before = hermitian_dot(&v, &v).re.sqrt();
        remove_components(&mut v, &out);
        let n = hermitian_dot(&v, &v).re.sqrt();
        if n > 1e-10 * before {
            for x in v.iter_mut() {
                *x /= n;
            }
            out.push(v);
        }
    }
    out
}

/// Builds a solution with a component outside the channel span and checks that removing
/// it and rescaling to full power raises the sum SE.
///
/// `perp_scale` is ‖V⊥‖/‖V_k‖ before the final normalisation; zero reproduces the boundary case
/// with `C = 1`.
pub fn appendix_improvement_check(
    scene: &Scene,
    grid: &ApertureGrid,
    a: &WeightMatrix,
    perp_seed: u64,
    perp_scale: f64,
    basis: Basis,
) -> Result<AppendixOutcome> {
    let channels = quadrature::channel_matrix(scene, grid, crate::par::Execution::Sequential)?;
    appendix_on_channels(scene, &channels, a, perp_seed, perp_scale, basis)
}

pub fn appendix_on_channels(
    scene: &Scene,
    channels: &ChannelMatrix,
    a: &WeightMatrix,
    perp_seed: u64,
    perp_scale: f64,
    basis: Basis,
) -> Result<AppendixOutcome> {
    let k = scene.num_users();
    let m = channels.num_nodes();
    let mut rng = seeds::rng(perp_seed, seeds::stream::PERP, 0);
    let user = rng.random_range(0..k);
    let v_in = quadrature::sample_currents(channels, a, basis);
    let base_power: f64 = (0..m).map(|i| v_in[(i, user)].norm_sqr()).sum();
    if !(base_power > 0.0) {
        return Err(Error::InvalidInput(format!("user {user} carries no power")));
    }

    let mut against: Vec<Vec<Complex64>> = (0..k)
        .map(|j| (0..m).map(|i| channels.h[(j, i)].conj()).collect())
        .collect();
    against.push((0..m).map(|i| v_in[(i, user)]).collect());
    let basis_set = orthonormal_set(against);

    let mut perp = vec![Complex64::new(0.0, 0.0); m];
    if perp_scale > 0.0 {
        let mut found = false;
        for _ in 0..16 {
            let mut noise: Vec<Complex64> = (0..m)
                .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            let raw = hermitian_dot(&noise, &noise).re.sqrt();
            remove_components(&mut noise, &basis_set);
            let n = hermitian_dot(&noise, &noise).re.sqrt();
            if n > 1e-12 * raw {
                let s = perp_scale * base_power.sqrt() / n;
                perp = noise.into_iter().map(|z| z * s).collect();
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::DegeneratePerp { attempts: 16 });
        }
    }

    let mut mixed = v_in.clone();
    for i in 0..m {
        mixed[(i, user)] += perp[i];
    }
    let (p_mixed, _) = integrals_of_samples(channels, &mixed);
    let s = (scene.p_max / p_mixed.total()).sqrt();
    let mixed = &mixed * Complex64::new(s, 0.0);
    let mut in_span = mixed.clone();
    for i in 0..m {
        in_span[(i, user)] -= perp[i] * s;
    }

    let (p0, g0) = integrals_of_samples(channels, &mixed);
    let (p1, g1) = integrals_of_samples(channels, &in_span);
    let c = (p0.total() / p1.total()).sqrt();
    let r0 = sum_se(&sinr_vector(&g0, &scene.user_areas, &scene.noise)?).sum;
    let scaled = CouplingMatrix(&g1.0 * Complex64::new(c, 0.0));
    let r1 = sum_se(&sinr_vector(&scaled, &scene.user_areas, &scene.noise)?).sum;

    let v_perp = CMat::from_fn(m, 1, |i, _| perp[i] * s);
    let (pp, gp) = integrals_of_samples(channels, &v_perp);
    let leak = gp.0.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let signal = g0.0.column(user).iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(AppendixOutcome {
        user,
        r0,
        r1,
        c,
        coupling_leak: leak / signal.max(1e-300),
        perp_share: pp.0[0] / p0.0[user],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par::Execution;
    use crate::quadrature::{build_grid, channel_matrix};
    use crate::scene::{sample_scene, SceneParams};

    fn random_weights(k: usize, seed: u64) -> WeightMatrix {
        let mut rng = seeds::rng(seed, seeds::stream::WEIGHTS, 0);
        WeightMatrix(CMat::from_fn(k, k, |_, _| {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        }))
    }

    #[test]
    fn sinr_single_user_and_diagonal() {
        let g = CouplingMatrix(CMat::from_element(1, 1, Complex64::new(3.0, 4.0)));
        assert_eq!(sinr_vector(&g, &[2.0], &[5.0]).unwrap().0, vec![10.0]);
        let mut d = CMat::zeros(3, 3);
        for i in 0..3 {
            d[(i, i)] = Complex64::new(i as f64 + 1.0, 0.0);
        }
        let s = sinr_vector(&CouplingMatrix(d), &[0.5; 3], &[2.0; 3]).unwrap();
        assert_eq!(s.0, vec![0.25, 1.0, 2.25]);
        assert!(sinr_vector(&CouplingMatrix(CMat::zeros(3, 3)), &[1.0; 3], &[0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn sinr_interference_weights_follow_transmit_index() {
        let g = CouplingMatrix(CMat::from_row_slice(
            2,
            2,
            &[Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0), Complex64::new(2.0, 0.0), Complex64::new(1.0, 0.0)],
        ));
        let s = sinr_vector(&g, &[1.0, 3.0], &[1.0, 1.0]).unwrap();
        assert_eq!(s.0, vec![1.0 / 4.0, 3.0 / 5.0]);
    }

    #[test]
    fn sum_se_values() {
        assert_eq!(sum_se(&SinrVector(vec![1.0; 4])).sum, 4.0);
        assert_eq!(sum_se(&SinrVector(vec![0.0; 4])).sum, 0.0);
        let lo = sum_se(&SinrVector(vec![1.0, 2.0])).sum;
        let hi = sum_se(&SinrVector(vec![1.0, 2.0 + 1e-9])).sum;
        assert!(hi > lo);
    }

    #[test]
    fn projection_properties() {
        let scene = sample_scene(3, &SceneParams::default()).unwrap();
        let gram = scene_gram(&scene, 64, Basis::default(), Execution::Parallel).unwrap();
        let a = random_weights(4, 7);
        let p = integral_power(&a, &gram.c).unwrap();
        let ab = project_weights(&a, &p, 1.0).unwrap();
        let total = integral_power(&ab, &gram.c).unwrap().total();
        assert!((total - 1.0).abs() < 1e-9);
        let again = project_weights(&ab, &integral_power(&ab, &gram.c).unwrap(), 1.0).unwrap();
        assert!(crate::linalg::rel_diff(&again.0, &ab.0) < 1e-14);
        let scaled = a.scaled(37.0);
        let ab2 = project_weights(&scaled, &integral_power(&scaled, &gram.c).unwrap(), 1.0).unwrap();
        assert!(crate::linalg::rel_diff(&ab2.0, &ab.0) < 1e-13);
        assert!(matches!(
            project_weights(&a, &PowerVector(vec![0.0; 4]), 1.0),
            Err(Error::ProjectionDegenerate { .. })
        ));
    }

    #[test]
    fn se_permutation_invariant() {
        let scene = sample_scene(5, &SceneParams::default()).unwrap();
        let gram = scene_gram(&scene, 64, Basis::default(), Execution::Parallel).unwrap();
        let a = random_weights(4, 1);
        let g = integral_couplings(&a, &gram.b).unwrap();
        let base = sum_se(&sinr_vector(&g, &scene.user_areas, &scene.noise).unwrap()).sum;
        for perm in crate::linalg::all_permutations(4) {
            let gp = CouplingMatrix(crate::linalg::permute_square(&g.0, &perm));
            let areas: Vec<f64> = perm.iter().map(|&i| scene.user_areas[i]).collect();
            let noise: Vec<f64> = perm.iter().map(|&i| scene.noise[i]).collect();
            let s = sum_se(&sinr_vector(&gp, &areas, &noise).unwrap()).sum;
            assert!((s - base).abs() <= 1e-12 * base);
        }
    }

    #[test]
    fn current_field_matches_grid_samples() {
        let scene = sample_scene(2, &SceneParams::default()).unwrap();
        let grid = build_grid(&scene.aperture, 16).unwrap();
        let ch = channel_matrix(&scene, &grid, Execution::Sequential).unwrap();
        let a = random_weights(4, 2);
        for basis in [Basis::ConjugateChannel, Basis::Channel] {
            let field = reconstruct_current(&a, &scene, basis).unwrap();
            let v = quadrature::sample_currents(&ch, &a, basis);
            for (m, r) in grid.nodes.iter().enumerate() {
                let got = field.eval(r).unwrap();
                for k in 0..4 {
                    assert_eq!(got[k], v[(m, k)]);
                }
            }
        }
        let mut e1 = WeightMatrix::zeros(4);
        e1.0[(0, 0)] = Complex64::new(1.0, 0.0);
        let field = reconstruct_current(&e1, &scene, Basis::Channel).unwrap();
        let r = grid.nodes[3];
        assert_eq!(field.eval(&r).unwrap()[0], crate::scene::channel_response(&scene, 0, &r).unwrap());
        assert!(matches!(field.eval(&Point::new(1.5, 0.0, 0.0)), Err(Error::OutsideAperture(..))));
    }

    #[test]
    fn current_field_line_scan_is_continuous() {
        let scene = sample_scene(4, &SceneParams::default()).unwrap();
        let field = reconstruct_current(&random_weights(4, 4), &scene, Basis::default()).unwrap();
        let n = 4000;
        let pts: Vec<Vec<Complex64>> = (0..=n)
            .map(|i| {
                let u = -0.999 + 1.998 * i as f64 / n as f64;
                field.eval(&scene.aperture.point_at(u, 0.123)).unwrap()
            })
            .collect();
        let peak = pts.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max);
        for w in pts.windows(2) {
            for (a, b) in w[0].iter().zip(&w[1]) {
                assert!(a.re.is_finite() && a.im.is_finite());
                // spacing 0.5 mm is well under a wavelength, so neighbours stay close
                assert!((b - a).norm() < 0.5 * peak);
            }
        }
    }

    #[test]
    fn appendix_boundary_and_strict_improvement() {
        let scene = sample_scene(11, &SceneParams::default()).unwrap();
        let grid = build_grid(&scene.aperture, 64).unwrap();
        let a = random_weights(4, 11);
        let zero = appendix_improvement_check(&scene, &grid, &a, 3, 0.0, Basis::default()).unwrap();
        assert!((zero.c - 1.0).abs() < 1e-12);
        assert!((zero.r1 - zero.r0).abs() <= 1e-12 * zero.r0);
        for basis in [Basis::ConjugateChannel, Basis::Channel] {
            let out = appendix_improvement_check(&scene, &grid, &a, 3, 0.5, basis).unwrap();
            assert!(out.c > 1.0);
            assert!(out.r1 > out.r0, "{out:?}");
            assert!(out.coupling_leak < 1e-9);
        }
    }
}
