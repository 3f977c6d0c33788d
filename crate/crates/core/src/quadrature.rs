//! Midpoint discretisation of the aperture and the integrals built on it.
//!
//! A current distribution is represented by a weight matrix `A` over `K`
//! basis functions, `V_k(r) = Σ_j a_jk Φ_j(r)`. With the sampled channel
//! `H[k][m] = H_k(r_m)` and cell area `Δ`, two Gram matrices capture every
//! integral the rest of the crate needs:
//!
//! * `B[k][i] = Σ_m H_k(r_m) Φ_i(r_m) Δ` gives the couplings `G = B·A`,
//!   `g_kj = ∫ H_k V_j`;
//! * `C[i][j] = Σ_m conj(Φ_i(r_m)) Φ_j(r_m) Δ` gives the powers
//!   `p_k = a_kᴴ C a_k = ∫ |V_k|²`.
//!
//! The pointwise route in [`pointwise_integrals`] evaluates the same sums
//! directly from sampled `V` and serves as the oracle for the Gram route.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::par::{self, Execution};
use crate::scene::{channel_response_at, ApertureSpec, Point, Scene};
use crate::{CMat, Complex64};

/// Which functions span the current distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Basis {
    /// `Φ_j = conj(H_j)`: the subspace in which the bilinear couplings
    /// `∫H_k V_j` are maximised; WMMSE solutions lie here exactly.
    #[default]
    ConjugateChannel,
    /// `Φ_j = H_j` taken literally.
    Channel,
}

impl Basis {
    #[inline]
    pub fn apply(self, h: Complex64) -> Complex64 {
        match self {
            Basis::ConjugateChannel => h.conj(),
            Basis::Channel => h,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApertureGrid {
    pub aperture: ApertureSpec,
    pub nodes: Vec<Point>,
    /// In-plane (u, w) coordinates of each node relative to the centre.
    pub local: Vec<(f64, f64)>,
    pub cell_area: f64,
    pub n_u: usize,
    pub n_w: usize,
}

impl ApertureGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Midpoint rule for a real function of the in-plane coordinates.
    pub fn integrate<F: Fn(f64, f64) -> f64>(&self, f: F) -> f64 {
        let mut acc = 0.0;
        for &(u, w) in &self.local {
            acc += f(u, w) * self.cell_area;
        }
        acc
    }
}

fn valid_node_counts(aperture: &ApertureSpec, limit: usize) -> Vec<usize> {
    let ratio = aperture.side_u / aperture.side_w;
    let mut out = Vec::new();
    for n_w in 1..=limit {
        let nu = ratio * n_w as f64;
        let n_u = nu.round();
        if n_u >= 1.0 && (n_u - nu).abs() <= 1e-9 * nu {
            let m = n_u as usize * n_w;
            if m > limit {
                break;
            }
            out.push(m);
        }
    }
    out
}

/// Uniform `n_u × n_w` midpoint grid with `n_u·n_w = m` and `n_u : n_w` equal to
/// the side ratio.
pub fn build_grid(aperture: &ApertureSpec, m: usize) -> Result<ApertureGrid> {
    let ratio = aperture.side_u / aperture.side_w;
    let n_w_f = (m as f64 / ratio).sqrt();
    let n_w = n_w_f.round() as usize;
    let n_u = m.checked_div(n_w).unwrap_or(0);
    let realizable = m > 0
        && n_w > 0
        && n_u * n_w == m
        && ((n_u as f64) - ratio * n_w as f64).abs() <= 1e-9 * ratio * n_w as f64;
    if !realizable {
        let valid = valid_node_counts(aperture, 4 * m.max(4));
        let below = valid.iter().rev().find(|&&v| v < m).copied();
        let above = valid.iter().find(|&&v| v > m).copied();
        return Err(Error::GridNotRealizable {
            requested: m,
            nearest: below.into_iter().chain(above).collect(),
        });
    }
    let du = aperture.side_u / n_u as f64;
    let dw = aperture.side_w / n_w as f64;
    let mut nodes = Vec::with_capacity(m);
    let mut local = Vec::with_capacity(m);
    for iu in 0..n_u {
        let u = -aperture.side_u / 2.0 + (iu as f64 + 0.5) * du;
        for iw in 0..n_w {
            let w = -aperture.side_w / 2.0 + (iw as f64 + 0.5) * dw;
            nodes.push(aperture.point_at(u, w));
            local.push((u, w));
        }
    }
    Ok(ApertureGrid {
        aperture: *aperture,
        nodes,
        local,
        cell_area: aperture.area() / m as f64,
        n_u,
        n_w,
    })
}

/// `H[k][m] = H_k(r_m)` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    pub h: CMat,
    pub cell_area: f64,
}

impl ChannelMatrix {
    pub fn num_users(&self) -> usize {
        self.h.nrows()
    }

    pub fn num_nodes(&self) -> usize {
        self.h.ncols()
    }
}

/// Samples every user's channel at every node; nodes fan out over workers.
pub fn channel_matrix(scene: &Scene, grid: &ApertureGrid, exec: Execution) -> Result<ChannelMatrix> {
    let k = scene.num_users();
    let normal = scene.aperture.normal_vec();
    let columns = par::try_map_indexed(grid.len(), exec, |m| {
        let r = &grid.nodes[m];
        (0..k)
            .map(|user| {
                channel_response_at(&scene.positions[user], &normal, &scene.constants, r).map_err(|e| {
                    Error::ChannelSample {
                        user,
                        node: m,
                        source: Box::new(match e {
                            Error::UserBehindAperture { projection, .. } => {
                                Error::UserBehindAperture { user, projection }
                            }
                            other => other,
                        }),
                    }
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let h = CMat::from_fn(k, grid.len(), |user, m| columns[m][user]);
    Ok(ChannelMatrix {
        h,
        cell_area: grid.cell_area,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramPair {
    pub b: CMat,
    pub c: CMat,
    pub basis: Basis,
}

impl GramPair {
    pub fn num_users(&self) -> usize {
        self.b.nrows()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            b: linalg::permute_square(&self.b, perm),
            c: linalg::permute_square(&self.c, perm),
            basis: self.basis,
        }
    }
}

/// Both Gram matrices, summed over nodes in ascending order.
pub fn gram_pair(channels: &ChannelMatrix, basis: Basis) -> GramPair {
    let h = &channels.h;
    let (k, m) = (h.nrows(), h.ncols());
    let delta = channels.cell_area;
    let zero = Complex64::new(0.0, 0.0);
    let mut b = CMat::from_element(k, k, zero);
    let mut c = CMat::from_element(k, k, zero);
    for row in 0..k {
        for col in 0..k {
            let mut sb = zero;
            let mut sc = zero;
            for node in 0..m {
                let phi_col = basis.apply(h[(col, node)]);
                sb += h[(row, node)] * phi_col;
                sc += basis.apply(h[(row, node)]).conj() * phi_col;
            }
            b[(row, col)] = sb * delta;
            c[(row, col)] = sc * delta;
        }
    }
    GramPair { b, c, basis }
}

/// Finite-dimensional coordinates of K current distributions; column k is user k's weighting vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(pub CMat);

/// `G[k][j] = ∫ H_k V_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix(pub CMat);

/// `p_k = ∫ |V_k|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerVector(pub Vec<f64>);

impl WeightMatrix {
    pub fn zeros(k: usize) -> Self {
        Self(CMat::from_element(k, k, Complex64::new(0.0, 0.0)))
    }

    pub fn identity(k: usize) -> Self {
        Self(CMat::identity(k, k))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self(linalg::permute_square(&self.0, perm))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(&self.0 * Complex64::new(s, 0.0))
    }
}

impl PowerVector {
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

fn check_square(name: &str, m: &CMat, k: usize) -> Result<()> {
    if m.nrows() != k || m.ncols() != k {
        return Err(Error::Shape(format!(
            "{name} is {}x{}, expected {k}x{k}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

const HERMITIAN_TOL: f64 = 1e-10;
const IMAG_TOL: f64 = 1e-9;

/// `p_k = a_kᴴ C a_k`.
pub fn integral_power(a: &WeightMatrix, c: &CMat) -> Result<PowerVector> {
    let k = a.dim();
    check_square("weight matrix", &a.0, a.0.nrows())?;
    check_square("power Gram", c, k)?;
    let defect = linalg::hermitian_defect(c);
    if defect > HERMITIAN_TOL {
        return Err(Error::Internal(format!("power Gram is not Hermitian (defect {defect:.3e})")));
    }
    let zero = Complex64::new(0.0, 0.0);
    let mut p = Vec::with_capacity(k);
    for user in 0..k {
        let mut acc = zero;
        for i in 0..k {
            let mut ci = zero;
            for j in 0..k {
                ci += c[(i, j)] * a.0[(j, user)];
            }
            acc += a.0[(i, user)].conj() * ci;
        }
        if acc.im.abs() > IMAG_TOL * acc.re.abs() + 1e-300 {
            return Err(Error::Internal(format!(
                "power of user {user} has a non-negligible imaginary part ({:.3e} vs {:.3e})",
                acc.im, acc.re
            )));
        }
        p.push(acc.re);
    }
    Ok(PowerVector(p))
}

/// `G = B·A`, summing in ascending index order.
pub fn integral_couplings(a: &WeightMatrix, b: &CMat) -> Result<CouplingMatrix> {
    let k = a.dim();
    check_square("weight matrix", &a.0, a.0.nrows())?;
    check_square("coupling Gram", b, k)?;
    let zero = Complex64::new(0.0, 0.0);
    Ok(CouplingMatrix(CMat::from_fn(k, k, |row, col| {
        let mut acc = zero;
        for i in 0..k {
            acc += b[(row, i)] * a.0[(i, col)];
        }
        acc
    })))
}

/// Samples `V_k(r_m) = Σ_j a_jk Φ_j(r_m)`; the result is M×K.
pub fn sample_currents(channels: &ChannelMatrix, a: &WeightMatrix, basis: Basis) -> CMat {
    let (k, m) = (channels.num_users(), channels.num_nodes());
    CMat::from_fn(m, k, |node, user| {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..k {
            acc += a.0[(j, user)] * basis.apply(channels.h[(j, node)]);
        }
        acc
    })
}

/// Powers and couplings of pointwise-sampled currents `v` (M×K), summed directly.
pub fn integrals_of_samples(channels: &ChannelMatrix, v: &CMat) -> (PowerVector, CouplingMatrix) {
    let (k, m) = (channels.num_users(), channels.num_nodes());
    let delta = channels.cell_area;
    let streams = v.ncols();
    let p = (0..streams)
        .map(|user| (0..m).map(|node| v[(node, user)].norm_sqr()).sum::<f64>() * delta)
        .collect();
    let g = CMat::from_fn(k, streams, |row, col| {
        let mut acc = Complex64::new(0.0, 0.0);
        for node in 0..m {
            acc += channels.h[(row, node)] * v[(node, col)];
        }
        acc * delta
    });
    (PowerVector(p), CouplingMatrix(g))
}

/// Pointwise oracle: builds V on the grid and sums `|V_k|²Δ` and `H_k V_j Δ` directly.
pub fn pointwise_integrals(
    channels: &ChannelMatrix,
    a: &WeightMatrix,
    basis: Basis,
) -> Result<(PowerVector, CouplingMatrix)> {
    check_square("weight matrix", &a.0, channels.num_users())?;
    let v = sample_currents(channels, a, basis);
    Ok(integrals_of_samples(channels, &v))
}

/// [`pointwise_integrals`] starting from the scene and grid.
pub fn direct_integral_check(
    scene: &Scene,
    grid: &ApertureGrid,
    a: &WeightMatrix,
    basis: Basis,
) -> Result<(PowerVector, CouplingMatrix)> {
    let channels = channel_matrix(scene, grid, Execution::Sequential)?;
    pointwise_integrals(&channels, a, basis)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub m: usize,
    pub powers: Vec<f64>,
    /// Row-major `[re, im]` pairs.
    pub couplings: Vec<[f64; 2]>,
    /// ‖G_M − G_prev‖/‖G_prev‖ against the previous row (0 for the first).
    pub coupling_drift: f64,
    pub power_drift: f64,
}

/// Per-M integrals of one fixed weight matrix, for convergence reporting.
pub fn quadrature_convergence(
    scene: &Scene,
    a: &WeightMatrix,
    m_values: &[usize],
    basis: Basis,
) -> Result<Vec<ConvergenceRow>> {
    if m_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("grid sizes must be strictly increasing".into()));
    }
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(m_values.len());
    let mut prev: Option<(PowerVector, CouplingMatrix)> = None;
    for &m in m_values {
        let grid = build_grid(&scene.aperture, m)?;
        let ch = channel_matrix(scene, &grid, Execution::Parallel)?;
        let gram = gram_pair(&ch, basis);
        let p = integral_power(a, &gram.c)?;
        let g = integral_couplings(a, &gram.b)?;
        let (coupling_drift, power_drift) = match &prev {
            Some((pp, pg)) => {
                let dp: f64 = p.0.iter().zip(&pp.0).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                let np: f64 = pp.0.iter().map(|x| x * x).sum::<f64>().sqrt();
                (linalg::rel_diff(&g.0, &pg.0), dp / np.max(1e-300))
            }
            None => (0.0, 0.0),
        };
        let k = g.0.nrows();
        let mut flat = Vec::with_capacity(k * k);
        for r in 0..k {
            for c in 0..k {
                flat.push([g.0[(r, c)].re, g.0[(r, c)].im]);
            }
        }
        rows.push(ConvergenceRow {
            m,
            powers: p.0.clone(),
            couplings: flat,
            coupling_drift,
            power_drift,
        });
        prev = Some((p, g));
    }
    Ok(rows)
}

/// JSON dump of a Gram pair: complex entries as `[re, im]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramDump {
    pub basis: Basis,
    pub k: usize,
    pub b: Vec<Vec<[f64; 2]>>,
    pub c: Vec<Vec<[f64; 2]>>,
}

pub fn complex_rows(m: &CMat) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
        .collect()
}

pub fn from_complex_rows(rows: &[Vec<[f64; 2]>]) -> Result<CMat> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Shape("ragged complex matrix".into()));
    }
    Ok(CMat::from_fn(nr, nc, |r, c| Complex64::new(rows[r][c][0], rows[r][c][1])))
}

impl From<&GramPair> for GramDump {
    fn from(g: &GramPair) -> Self {
        Self {
            basis: g.basis,
            k: g.num_users(),
            b: complex_rows(&g.b),
            c: complex_rows(&g.c),
        }
    }
}

impl GramDump {
    pub fn into_pair(self) -> Result<GramPair> {
        let b = from_complex_rows(&self.b)?;
        let c = from_complex_rows(&self.c)?;
        if b.nrows() != self.k || c.nrows() != self.k || b.ncols() != self.k || c.ncols() != self.k {
            return Err(Error::Shape("Gram dump dimensions disagree with k".into()));
        }
        Ok(GramPair { b, c, basis: self.basis })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{sample_scene, SceneParams};
    use crate::seeds;
    use rand::Rng;

    pub(crate) fn random_weights(k: usize, seed: u64) -> WeightMatrix {
        let mut rng = seeds::rng(seed, seeds::stream::WEIGHTS, 0);
        WeightMatrix(CMat::from_fn(k, k, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 1e-3
        }))
    }

    #[test]
    fn grid_four_nodes() {
        let ap = ApertureSpec::square(4.0).unwrap();
        let g = build_grid(&ap, 4).unwrap();
        assert_eq!(g.cell_area, 1.0);
        let mut pts: Vec<_> = g.nodes.iter().map(|p| (p.x, p.y, p.z)).collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(pts, vec![(-0.5, 0.0, -0.5), (-0.5, 0.0, 0.5), (0.5, 0.0, -0.5), (0.5, 0.0, 0.5)]);
    }

    #[test]
    fn grid_256_and_partition() {
        let ap = ApertureSpec::square(4.0).unwrap();
        let g = build_grid(&ap, 256).unwrap();
        assert_eq!((g.n_u, g.n_w), (16, 16));
        assert_eq!(g.cell_area, 4.0 / 256.0);
        for m in [1, 4, 9, 64, 100, 1024] {
            let g = build_grid(&ap, m).unwrap();
            let total: f64 = (0..g.len()).map(|_| g.cell_area).sum();
            assert!((total - 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_rejects_non_square_counts() {
        let ap = ApertureSpec::square(4.0).unwrap();
        match build_grid(&ap, 250) {
            Err(Error::GridNotRealizable { nearest, .. }) => assert_eq!(nearest, vec![225, 256]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(build_grid(&ap, 0).is_err());
    }

    #[test]
    fn grid_rectangular_ratio() {
        let ap = ApertureSpec::new([0.0; 3], [0.0, 1.0, 0.0], 4.0, 1.0).unwrap();
        let g = build_grid(&ap, 16).unwrap();
        assert_eq!((g.n_u, g.n_w), (8, 2));
        assert!(build_grid(&ap, 9).is_err());
    }

    #[test]
    fn midpoint_rule_second_order() {
        let ap = ApertureSpec::square(4.0).unwrap();
        let exact = 4.0 / 9.0;
        let f = |u: f64, w: f64| u * u * w * w;
        let mut errs = Vec::new();
        for m in [16, 64, 256, 1024] {
            let g = build_grid(&ap, m).unwrap();
            errs.push((g.integrate(f) - exact).abs());
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
        }
        assert!(errs[3] < 1e-3);
    }

    #[test]
    fn single_user_single_node() {
        let params = SceneParams {
            num_users: 1,
            ..SceneParams::default()
        };
        let scene = sample_scene(5, &params).unwrap();
        let grid = build_grid(&scene.aperture, 1).unwrap();
        let ch = channel_matrix(&scene, &grid, Execution::Sequential).unwrap();
        let direct = crate::scene::channel_response(&scene, 0, &grid.nodes[0]).unwrap();
        assert_eq!(ch.h[(0, 0)], direct);
        let gp = gram_pair(&ch, Basis::Channel);
        assert_eq!(gp.b[(0, 0)], direct * direct * 4.0);
        assert!(gp.c[(0, 0)].im == 0.0 && gp.c[(0, 0)].re > 0.0);
    }

    #[test]
    fn channel_rows_permute_with_users() {
        let scene = sample_scene(2, &SceneParams::default()).unwrap();
        let grid = build_grid(&scene.aperture, 16).unwrap();
        let ch = channel_matrix(&scene, &grid, Execution::Parallel).unwrap();
        let perm = [2, 0, 3, 1];
        let chp = channel_matrix(&scene.permuted(&perm), &grid, Execution::Sequential).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for m in 0..16 {
                assert_eq!(chp.h[(i, m)], ch.h[(p, m)]);
            }
        }
    }

    #[test]
    fn gram_structure() {
        let scene = sample_scene(9, &SceneParams::default()).unwrap();
        let grid = build_grid(&scene.aperture, 256).unwrap();
        let ch = channel_matrix(&scene, &grid, Execution::Parallel).unwrap();
        for basis in [Basis::ConjugateChannel, Basis::Channel] {
            let gp = gram_pair(&ch, basis);
            assert_eq!(linalg::hermitian_defect(&gp.c), 0.0);
            let tr: f64 = (0..4).map(|i| gp.c[(i, i)].re).sum();
            for i in 0..4 {
                assert_eq!(gp.c[(i, i)].im, 0.0);
                assert!(gp.c[(i, i)].re > 0.0);
            }
            let ev = linalg::hermitian_eigenvalues(&gp.c);
            assert!(ev[0] >= -1e-10 * tr);
            match basis {
                Basis::Channel => assert_eq!(gp.b, gp.b.transpose()),
                Basis::ConjugateChannel => assert_eq!(gp.b, gp.c),
            }
        }
    }

    #[test]
    fn power_and_coupling_edge_cases() {
        let scene = sample_scene(4, &SceneParams::default()).unwrap();
        let grid = build_grid(&scene.aperture, 64).unwrap();
        let ch = channel_matrix(&scene, &grid, Execution::Parallel).unwrap();
        let gp = gram_pair(&ch, Basis::default());
        let zero = WeightMatrix::zeros(4);
        assert!(integral_power(&zero, &gp.c).unwrap().0.iter().all(|&p| p == 0.0));
        let eye = WeightMatrix::identity(4);
        let p = integral_power(&eye, &gp.c).unwrap();
        for k in 0..4 {
            assert_eq!(p.0[k], gp.c[(k, k)].re);
        }
        assert_eq!(integral_couplings(&eye, &gp.b).unwrap().0, gp.b);
        let mut a = random_weights(4, 3);
        a.0.set_column(2, &nalgebra::DVector::from_element(4, Complex64::new(0.0, 0.0)));
        let g = integral_couplings(&a, &gp.b).unwrap();
        assert!(g.0.column(2).iter().all(|z| z.norm() == 0.0));
        let (pz, gz) = pointwise_integrals(&ch, &zero, Basis::default()).unwrap();
        assert!(pz.0.iter().all(|&x| x == 0.0) && gz.0.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn power_rejects_non_hermitian() {
        let mut c = CMat::identity(2, 2);
        c[(0, 1)] = Complex64::new(0.5, 0.0);
        assert!(matches!(
            integral_power(&WeightMatrix::identity(2), &c),
            Err(Error::Internal(_))
        ));
        assert!(matches!(
            integral_power(&WeightMatrix::identity(3), &CMat::identity(2, 2)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn single_user_unit_weight_matches_gram() {
        let params = SceneParams {
            num_users: 1,
            ..SceneParams::default()
        };
        let scene = sample_scene(8, &params).unwrap();
        let grid = build_grid(&scene.aperture, 64).unwrap();
        let ch = channel_matrix(&scene, &grid, Execution::Sequential).unwrap();
        for basis in [Basis::ConjugateChannel, Basis::Channel] {
            let gp = gram_pair(&ch, basis);
            let (p, g) = pointwise_integrals(&ch, &WeightMatrix::identity(1), basis).unwrap();
            assert!((p.0[0] - gp.c[(0, 0)].re).abs() <= 1e-12 * p.0[0]);
            assert!((g.0[(0, 0)] - gp.b[(0, 0)]).norm() <= 1e-12 * gp.b[(0, 0)].norm());
        }
    }

    #[test]
    fn gram_dump_round_trip() {
        let scene = sample_scene(1, &SceneParams::default()).unwrap();
        let grid = build_grid(&scene.aperture, 16).unwrap();
        let gp = gram_pair(&channel_matrix(&scene, &grid, Execution::Sequential).unwrap(), Basis::Channel);
        let json = serde_json::to_string(&GramDump::from(&gp)).unwrap();
        let back: GramDump = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_pair().unwrap(), gp);
    }

    #[test]
    fn convergence_table_rows() {
        let scene = sample_scene(1, &SceneParams::default()).unwrap();
        let a = random_weights(4, 1);
        let rows = quadrature_convergence(&scene, &a, &[64, 256, 1024], Basis::default()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].coupling_drift, 0.0);
        assert!(rows[1].coupling_drift.is_finite() && rows[2].coupling_drift.is_finite());
        assert!(quadrature_convergence(&scene, &a, &[256, 64], Basis::default()).is_err());
    }
}
