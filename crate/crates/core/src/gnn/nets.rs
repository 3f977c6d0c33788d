//! The three network roles: weights from positions, powers from weights, and
//! couplings from projected weights.
//!
//! Complex scalars cross the real networks as (Re, Im) feature pairs. Gradients
//! of a real loss with respect to a complex quantity `z` use `∂ℓ/∂Re z + i·∂ℓ/∂Im z`.

use serde::{Deserialize, Serialize};

use super::{edge_index, edge_pairs, gnn_backward, gnn_forward, gnn_infer, init_params, ForwardCache, GnnParams, GnnSpec, GraphFeatures, Head};
use crate::error::{Error, Result};
use crate::quadrature::{PowerVector, WeightMatrix};
use crate::scene::{Point, POSITION_SCALE};
use crate::{CMat, Complex64, RMat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetKind {
    /// Positions → weight matrix.
    Policy,
    /// (positions, raw weights) → per-user power.
    Proj,
    /// (positions, projected weights) → coupling matrix.
    Value,
}

impl NetKind {
    pub fn name(self) -> &'static str {
        match self {
            NetKind::Policy => "policy",
            NetKind::Proj => "proj",
            NetKind::Value => "value",
        }
    }

    /// Default architecture: `levels` representation levels, `hidden` units each.
    pub fn spec(self, levels: usize, hidden: usize) -> GnnSpec {
        match self {
            NetKind::Policy => GnnSpec::uniform(levels, hidden, (3, 2), (0, 2), Head::Identity, Head::Identity),
            NetKind::Proj => GnnSpec::uniform(levels, hidden, (5, 1), (2, 0), Head::Softplus, Head::Identity),
            NetKind::Value => GnnSpec::uniform(levels, hidden, (5, 2), (2, 2), Head::Identity, Head::Identity),
        }
    }
}

/// Fixed affine maps between physical quantities and network features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub position_scale: f64,
    /// Divides weight-matrix entries on the way in (unused by the policy).
    pub input_scale: f64,
    /// Multiplies network outputs on the way out.
    pub output_scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            position_scale: POSITION_SCALE,
            input_scale: 1.0,
            output_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub kind: NetKind,
    pub spec: GnnSpec,
    pub params: GnnParams,
    pub norm: Normalization,
    pub init_seed: u64,
}

/// Cache of one role-level forward pass.
#[derive(Debug, Clone)]
pub struct NetCache {
    inner: ForwardCache,
    k: usize,
}

impl NetCache {
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.inner.activation_pattern()
    }
}

fn position_rows(positions: &[Point], scale: f64) -> RMat {
    RMat::from_fn(positions.len(), 3, |k, c| positions[k][c] / scale)
}

/// Vertex rows `[s_k/scale, Re a_kk, Im a_kk]`, edge rows `[Re a_kj, Im a_kj]`, weights divided by `a_scale`.
fn weight_features(positions: &[Point], a: &CMat, norm: &Normalization) -> Result<GraphFeatures> {
    let k = positions.len();
    if a.nrows() != k || a.ncols() != k {
        return Err(Error::Shape(format!("weights are {}x{} for {k} users", a.nrows(), a.ncols())));
    }
    let pos = position_rows(positions, norm.position_scale);
    let inv = 1.0 / norm.input_scale;
    let vertices = RMat::from_fn(k, 5, |r, c| match c {
        0..=2 => pos[(r, c)],
        3 => a[(r, r)].re * inv,
        _ => a[(r, r)].im * inv,
    });
    let pairs = edge_pairs(k);
    let edges = RMat::from_fn(pairs.len(), 2, |row, c| {
        let (i, j) = pairs[row];
        if c == 0 {
            a[(i, j)].re * inv
        } else {
            a[(i, j)].im * inv
        }
    });
    Ok(GraphFeatures { vertices, edges })
}

/// Reads a K×K complex matrix from vertex (diagonal) and edge (off-diagonal) (Re, Im) pairs.
fn complex_from_graph(out: &GraphFeatures, scale: f64) -> CMat {
    let k = out.vertices.nrows();
    CMat::from_fn(k, k, |i, j| {
        if i == j {
            Complex64::new(out.vertices[(i, 0)], out.vertices[(i, 1)]) * scale
        } else {
            let r = edge_index(i, j, k);
            Complex64::new(out.edges[(r, 0)], out.edges[(r, 1)]) * scale
        }
    })
}

/// Inverse of [`complex_from_graph`] for gradients.
fn complex_to_graph(g: &CMat, scale: f64) -> GraphFeatures {
    let k = g.nrows();
    let vertices = RMat::from_fn(k, 2, |i, c| if c == 0 { g[(i, i)].re * scale } else { g[(i, i)].im * scale });
    let pairs = edge_pairs(k);
    let edges = RMat::from_fn(pairs.len(), 2, |row, c| {
        let (i, j) = pairs[row];
        if c == 0 {
            g[(i, j)].re * scale
        } else {
            g[(i, j)].im * scale
        }
    });
    GraphFeatures { vertices, edges }
}

/// Gradient with respect to the weight matrix from gradients on [`weight_features`].
fn weight_grad_from_features(gx: &super::InputGrads, k: usize, norm: &Normalization) -> CMat {
    let inv = 1.0 / norm.input_scale;
    CMat::from_fn(k, k, |i, j| {
        if i == j {
            Complex64::new(gx.vertices[(i, 3)], gx.vertices[(i, 4)]) * inv
        } else {
            let r = edge_index(i, j, k);
            Complex64::new(gx.edges[(r, 0)], gx.edges[(r, 1)]) * inv
        }
    })
}

impl Network {
    pub fn new(kind: NetKind, spec: GnnSpec, norm: Normalization, seed: u64) -> Result<Self> {
        let params = init_params(&spec, seed)?;
        let net = Self {
            kind,
            spec,
            params,
            norm,
            init_seed: seed,
        };
        net.check_io()?;
        Ok(net)
    }

    fn check_io(&self) -> Result<()> {
        let expect = self.kind.spec(self.spec.levels(), 1);
        let v = &self.spec.vertex_widths;
        let e = &self.spec.edge_widths;
        let ok = v[0] == expect.vertex_widths[0]
            && e[0] == expect.edge_widths[0]
            && v.last() == expect.vertex_widths.last()
            && e.last() == expect.edge_widths.last()
            && self.spec.vertex_head == expect.vertex_head;
        if !ok {
            return Err(Error::Shape(format!(
                "{} network needs io widths {:?}/{:?}, spec has {:?}/{:?}",
                self.kind.name(),
                (expect.vertex_widths[0], expect.vertex_widths.last()),
                (expect.edge_widths[0], expect.edge_widths.last()),
                (v[0], v.last()),
                (e[0], e.last())
            )));
        }
        Ok(())
    }

    fn expect(&self, kind: NetKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::InvalidInput(format!(
                "expected a {} network, got {}",
                kind.name(),
                self.kind.name()
            )));
        }
        Ok(())
    }

    fn forward_features(&self, x: &GraphFeatures) -> Result<NetCache> {
        let k = x.num_vertices();
        Ok(NetCache {
            inner: gnn_forward(&self.spec, &self.params, x)?,
            k,
        })
    }

    pub fn policy_features(&self, positions: &[Point]) -> GraphFeatures {
        GraphFeatures::vertices_only(position_rows(positions, self.norm.position_scale))
    }

    pub fn policy_forward(&self, positions: &[Point]) -> Result<(WeightMatrix, NetCache)> {
        self.expect(NetKind::Policy)?;
        let cache = self.forward_features(&self.policy_features(positions))?;
        let a = complex_from_graph(&cache.inner.output, self.norm.output_scale);
        Ok((WeightMatrix(a), cache))
    }

    pub fn policy_infer(&self, positions: &[Point]) -> Result<WeightMatrix> {
        self.expect(NetKind::Policy)?;
        let out = gnn_infer(&self.spec, &self.params, &self.policy_features(positions))?;
        Ok(WeightMatrix(complex_from_graph(&out, self.norm.output_scale)))
    }

    /// Parameter gradients from a gradient on the emitted weight matrix.
    pub fn policy_backward(&self, cache: &NetCache, grad_a: &CMat) -> Result<GnnParams> {
        self.expect(NetKind::Policy)?;
        let g = complex_to_graph(grad_a, self.norm.output_scale);
        let (grads, _) = gnn_backward(&self.spec, &self.params, &cache.inner, &g, true)?;
        Ok(grads.expect("parameter gradients requested"))
    }

    pub fn proj_forward(&self, positions: &[Point], a: &WeightMatrix) -> Result<(PowerVector, NetCache)> {
        self.expect(NetKind::Proj)?;
        let cache = self.forward_features(&weight_features(positions, &a.0, &self.norm)?)?;
        let out = &cache.inner.output.vertices;
        let p = (0..cache.k).map(|r| out[(r, 0)] * self.norm.output_scale).collect();
        Ok((PowerVector(p), cache))
    }

    pub fn proj_infer(&self, positions: &[Point], a: &WeightMatrix) -> Result<PowerVector> {
        self.expect(NetKind::Proj)?;
        let out = gnn_infer(&self.spec, &self.params, &weight_features(positions, &a.0, &self.norm)?)?;
        Ok(PowerVector(out.vertices.iter().map(|p| p * self.norm.output_scale).collect()))
    }

    /// Gradients from `∂ℓ/∂p̂`: parameters (if requested) and the weight matrix.
    pub fn proj_backward(
        &self,
        cache: &NetCache,
        grad_p: &[f64],
        want_param_grads: bool,
    ) -> Result<(Option<GnnParams>, CMat)> {
        self.expect(NetKind::Proj)?;
        let k = cache.k;
        if grad_p.len() != k {
            return Err(Error::Shape(format!("{} power gradients for {k} users", grad_p.len())));
        }
        let g = GraphFeatures {
            vertices: RMat::from_fn(k, 1, |r, _| grad_p[r] * self.norm.output_scale),
            edges: RMat::zeros(k * (k - 1), 0),
        };
        let (grads, gx) = gnn_backward(&self.spec, &self.params, &cache.inner, &g, want_param_grads)?;
        Ok((grads, weight_grad_from_features(&gx, k, &self.norm)))
    }

    pub fn value_forward(&self, positions: &[Point], a_bar: &WeightMatrix) -> Result<(CMat, NetCache)> {
        self.expect(NetKind::Value)?;
        let cache = self.forward_features(&weight_features(positions, &a_bar.0, &self.norm)?)?;
        let g = complex_from_graph(&cache.inner.output, self.norm.output_scale);
        Ok((g, cache))
    }

    pub fn value_infer(&self, positions: &[Point], a_bar: &WeightMatrix) -> Result<CMat> {
        self.expect(NetKind::Value)?;
        let out = gnn_infer(&self.spec, &self.params, &weight_features(positions, &a_bar.0, &self.norm)?)?;
        Ok(complex_from_graph(&out, self.norm.output_scale))
    }

    /// Gradients from `∂ℓ/∂Ĝ`: parameters (if requested) and the projected weights.
    pub fn value_backward(
        &self,
        cache: &NetCache,
        grad_g: &CMat,
        want_param_grads: bool,
    ) -> Result<(Option<GnnParams>, CMat)> {
        self.expect(NetKind::Value)?;
        let g = complex_to_graph(grad_g, self.norm.output_scale);
        let (grads, gx) = gnn_backward(&self.spec, &self.params, &cache.inner, &g, want_param_grads)?;
        Ok((grads, weight_grad_from_features(&gx, cache.k, &self.norm)))
    }
}

/// Worst relative deviation from equivariance over every permutation of the users.
pub fn equivariance_defect(net: &Network, positions: &[Point], a: Option<&WeightMatrix>) -> Result<f64> {
    let k = positions.len();
    let eval = |pos: &[Point], a: Option<&WeightMatrix>| -> Result<CMat> {
        Ok(match net.kind {
            NetKind::Policy => net.policy_forward(pos)?.0 .0,
            NetKind::Proj => {
                let (p, _) = net.proj_forward(pos, a.ok_or_else(|| Error::InvalidInput("proj needs weights".into()))?)?;
                CMat::from_fn(k, 1, |r, _| Complex64::new(p.0[r], 0.0))
            }
            NetKind::Value => {
                net.value_forward(pos, a.ok_or_else(|| Error::InvalidInput("value needs weights".into()))?)?
                    .0
            }
        })
    };
    let base = eval(positions, a)?;
    let scale = crate::linalg::fro(&base).max(1e-300);
    let mut worst: f64 = 0.0;
    for perm in crate::linalg::all_permutations(k) {
        let pos: Vec<Point> = perm.iter().map(|&i| positions[i]).collect();
        let pa = a.map(|w| w.permuted(&perm));
        let out = eval(&pos, pa.as_ref())?;
        let expect = if base.ncols() == 1 {
            CMat::from_fn(k, 1, |r, _| base[(perm[r], 0)])
        } else {
            crate::linalg::permute_square(&base, &perm)
        };
        worst = worst.max(crate::linalg::fro(&(out - expect)) / scale);
    }
    Ok(worst)
}
