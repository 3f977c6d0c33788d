//! Vertex/edge graph network over a complete directed graph on K users.
//!
//! One update maps representation level ℓ to ℓ+1:
//!
//! ```text
//! d_k' = σ(W_self d_k + W_other Σ_{i≠k} d_i + W_ein Σ_{i≠k} e_ik + W_eout Σ_{i≠k} e_ki + b)
//! e_kj' = σ(U_edge e_kj + U_src d_k + U_dst d_j [+ U_nbr (Σ_{i≠j} e_ij + Σ_{i≠k} e_ki − 2 e_kj)] + c)
//! ```
//!
//! Weights are shared across vertices and across edges, so relabelling users
//! permutes outputs the same way it permutes inputs. The bracketed edge term is
//! optional (`GnnSpec::neighbor_edges`).
//!
//! Vertex features are stored one row per user; edge features one row per
//! ordered pair `(k, j)`, `k ≠ j`, in lexicographic order (see [`edge_index`]).

pub mod checkpoint;
pub mod nets;


use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;
use crate::RMat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    Identity,
    Softplus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnSpec {
    /// Vertex widths per representation level, input first and output last.
    pub vertex_widths: Vec<usize>,
    /// Edge widths per level; 0 means no edge channel at that level.
    pub edge_widths: Vec<usize>,
    pub leaky_slope: f64,
    pub vertex_head: Head,
    pub edge_head: Head,
    #[serde(default)]
    pub neighbor_edges: bool,
}

impl GnnSpec {
    /// `levels` representation levels with `hidden` units in every interior level.
    pub fn uniform(
        levels: usize,
        hidden: usize,
        vertex_io: (usize, usize),
        edge_io: (usize, usize),
        vertex_head: Head,
        edge_head: Head,
    ) -> Self {
        let mut vertex_widths = vec![hidden; levels.max(2)];
        let mut edge_widths = vec![hidden; levels.max(2)];
        vertex_widths[0] = vertex_io.0;
        edge_widths[0] = edge_io.0;
        *vertex_widths.last_mut().unwrap() = vertex_io.1;
        *edge_widths.last_mut().unwrap() = edge_io.1;
        Self {
            vertex_widths,
            edge_widths,
            leaky_slope: 0.2,
            vertex_head,
            edge_head,
            neighbor_edges: false,
        }
    }

    pub fn levels(&self) -> usize {
        self.vertex_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertex_widths.len() < 2 || self.edge_widths.len() != self.vertex_widths.len() {
            return Err(Error::InvalidInput(format!(
                "network needs at least two levels with matching vertex/edge lists, got {} and {}",
                self.vertex_widths.len(),
                self.edge_widths.len()
            )));
        }
        let last = self.levels() - 1;
        if self.vertex_widths[1..last].contains(&0) {
            return Err(Error::InvalidInput("hidden vertex widths must be at least 1".into()));
        }
        if self.edge_widths[1..last].contains(&0) {
            return Err(Error::InvalidInput("hidden edge widths must be at least 1".into()));
        }
        if self.vertex_widths[0] == 0 || self.vertex_widths[last] == 0 {
            return Err(Error::InvalidInput("vertex input and output widths must be at least 1".into()));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidInput(format!("leaky slope {} outside [0, 1)", self.leaky_slope)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w_self: RMat,
    pub w_other: RMat,
    pub w_ein: RMat,
    pub w_eout: RMat,
    pub b_vertex: RMat,
    pub u_edge: RMat,
    pub u_src: RMat,
    pub u_dst: RMat,
    pub u_nbr: Option<RMat>,
    pub b_edge: RMat,
}

impl LayerParams {
    fn zeros(dv: usize, de: usize, dv_out: usize, de_out: usize, nbr: bool) -> Self {
        Self {
            w_self: RMat::zeros(dv_out, dv),
            w_other: RMat::zeros(dv_out, dv),
            w_ein: RMat::zeros(dv_out, de),
            w_eout: RMat::zeros(dv_out, de),
            b_vertex: RMat::zeros(dv_out, 1),
            u_edge: RMat::zeros(de_out, de),
            u_src: RMat::zeros(de_out, dv),
            u_dst: RMat::zeros(de_out, dv),
            u_nbr: nbr.then(|| RMat::zeros(de_out, de)),
            b_edge: RMat::zeros(de_out, 1),
        }
    }

    fn blocks(&self) -> Vec<(&'static str, &RMat)> {
        let mut v = vec![
            ("w_self", &self.w_self),
            ("w_other", &self.w_other),
            ("w_ein", &self.w_ein),
            ("w_eout", &self.w_eout),
            ("b_vertex", &self.b_vertex),
            ("u_edge", &self.u_edge),
            ("u_src", &self.u_src),
            ("u_dst", &self.u_dst),
        ];
        if let Some(u) = &self.u_nbr {
            v.push(("u_nbr", u));
        }
        v.push(("b_edge", &self.b_edge));
        v
    }

    fn blocks_mut(&mut self) -> Vec<(&'static str, &mut RMat)> {
        let mut v = vec![
            ("w_self", &mut self.w_self),
            ("w_other", &mut self.w_other),
            ("w_ein", &mut self.w_ein),
            ("w_eout", &mut self.w_eout),
            ("b_vertex", &mut self.b_vertex),
            ("u_edge", &mut self.u_edge),
            ("u_src", &mut self.u_src),
            ("u_dst", &mut self.u_dst),
        ];
        if let Some(u) = &mut self.u_nbr {
            v.push(("u_nbr", u));
        }
        v.push(("b_edge", &mut self.b_edge));
        v
    }
}

/// Parameters for every update; also used for their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    pub layers: Vec<LayerParams>,
}

impl GnnParams {
    pub fn zeros(spec: &GnnSpec) -> Self {
        let layers = (0..spec.levels() - 1)
            .map(|l| {
                LayerParams::zeros(
                    spec.vertex_widths[l],
                    spec.edge_widths[l],
                    spec.vertex_widths[l + 1],
                    spec.edge_widths[l + 1],
                    spec.neighbor_edges,
                )
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for l in &mut z.layers {
            for (_, m) in l.blocks_mut() {
                m.fill(0.0);
            }
        }
        z
    }

    /// `(layer, block name, matrix)` for every parameter block in a fixed order.
    pub fn blocks(&self) -> Vec<(usize, &'static str, &RMat)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.blocks().into_iter().map(move |(n, m)| (i, n, m)))
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<(usize, &'static str, &mut RMat)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| l.blocks_mut().into_iter().map(move |(n, m)| (i, n, m)))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, _, m)| m.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, _, m) in self.blocks() {
            out.extend_from_slice(m.as_slice());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} entries, network has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for (_, _, m) in self.blocks_mut() {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// `self += s·other`.
    pub fn axpy(&mut self, s: f64, other: &GnnParams) {
        for ((_, _, a), (_, _, b)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            *a += b * s;
        }
    }

    /// Hash of the exact parameter bits (four-lane multiply-xor, not cryptographic).
    pub fn fingerprint(&self) -> u64 {
        const MUL: u64 = 0x9E37_79B9_7F4A_7C15;
        let mut lanes = [0x243F_6A88_85A3_08D3u64, 0x1319_8A2E_0370_7344, 0xA409_3822_299F_31D0, 0x082E_FA98_EC4E_6C89];
        for (_, _, m) in self.blocks() {
            lanes[0] = (lanes[0] ^ (m.nrows() as u64) << 32 ^ m.ncols() as u64).wrapping_mul(MUL);
            let data = m.as_slice();
            let mut chunks = data.chunks_exact(4);
            for c in &mut chunks {
                for (lane, x) in lanes.iter_mut().zip(c) {
                    *lane = (*lane ^ x.to_bits()).wrapping_mul(MUL).rotate_left(29);
                }
            }
            for x in chunks.remainder() {
                lanes[1] = (lanes[1] ^ x.to_bits()).wrapping_mul(MUL).rotate_left(29);
            }
        }
        lanes.iter().fold(0u64, |h, l| (h ^ l).wrapping_mul(MUL).rotate_left(31))
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, _, m)| m.iter().all(|x| x.is_finite()))
    }

    pub fn check_shapes(&self, spec: &GnnSpec) -> Result<()> {
        let expect = GnnParams::zeros(spec);
        if expect.layers.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "expected {} layers, found {}",
                expect.layers.len(),
                self.layers.len()
            )));
        }
        let lhs = expect.blocks();
        let rhs = self.blocks();
        if lhs.len() != rhs.len() {
            return Err(Error::Shape("parameter blocks do not match the network spec".into()));
        }
        for ((l, n, a), (_, n2, b)) in lhs.into_iter().zip(rhs) {
            if n != n2 || a.shape() != b.shape() {
                return Err(Error::Shape(format!(
                    "layer {l} block {n}: expected {:?}, found {n2} {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Weight entries uniform in ±1/sqrt(fan-in) of each block; biases start at zero.
pub fn init_params(spec: &GnnSpec, seed: u64) -> Result<GnnParams> {
    spec.validate()?;
    let mut params = GnnParams::zeros(spec);
    let mut rng = seeds::rng(seed, seeds::stream::INIT, 0);
    for (_, name, m) in params.blocks_mut() {
        let fan_in = match name {
            "b_vertex" | "b_edge" => 0,
            _ => m.ncols(),
        };
        let bound = if fan_in > 0 { 1.0 / (fan_in as f64).sqrt() } else { 0.0 };
        for x in m.iter_mut() {
            *x = if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 };
        }
    }
    Ok(params)
}

/// Row of ordered pair `(k, j)`, `k ≠ j`, in the edge matrix.
pub fn edge_index(k: usize, j: usize, n: usize) -> usize {
    debug_assert!(k != j && k < n && j < n);
    k * (n - 1) + if j > k { j - 1 } else { j }
}

/// Ordered pairs in row order.
pub fn edge_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::with_capacity(n * n.saturating_sub(1));
    for k in 0..n {
        for j in 0..n {
            if j != k {
                v.push((k, j));
            }
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphFeatures {
    /// K × F_v.
    pub vertices: RMat,
    /// K(K−1) × F_e.
    pub edges: RMat,
}

impl GraphFeatures {
    pub fn num_vertices(&self) -> usize {
        self.vertices.nrows()
    }

    /// Zero-width edge channel.
    pub fn vertices_only(vertices: RMat) -> Self {
        let n = vertices.nrows();
        Self {
            vertices,
            edges: RMat::zeros(n * n.saturating_sub(1), 0),
        }
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.num_vertices();
        let vertices = RMat::from_fn(n, self.vertices.ncols(), |i, f| self.vertices[(perm[i], f)]);
        let pairs = edge_pairs(n);
        let edges = RMat::from_fn(pairs.len(), self.edges.ncols(), |row, f| {
            let (k, j) = pairs[row];
            self.edges[(edge_index(perm[k], perm[j], n), f)]
        });
        Self { vertices, edges }
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    d: RMat,
    e: RMat,
    others: RMat,
    e_in: RMat,
    e_out: RMat,
    nbr: Option<RMat>,
    zv: RMat,
    ze: RMat,
}

/// Everything the reverse pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    fingerprint: u64,
    pub output: GraphFeatures,
}

impl ForwardCache {
    /// Signs of every hidden pre-activation, for detecting kinks between two evaluations.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let n = self.layers.len();
        self.layers[..n.saturating_sub(1)]
            .iter()
            .flat_map(|l| l.zv.iter().chain(l.ze.iter()).map(|&z| z > 0.0))
            .collect()
    }
}

fn leaky(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        slope * z
    }
}

fn leaky_grad(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        slope
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn apply_head(head: Head, z: &RMat) -> RMat {
    match head {
        Head::Identity => z.clone(),
        Head::Softplus => z.map(softplus),
    }
}

fn head_grad(head: Head, z: &RMat, g: &RMat) -> RMat {
    match head {
        Head::Identity => g.clone(),
        Head::Softplus => z.zip_map(g, |z, g| sigmoid(z) * g),
    }
}

/// `c ← α·op(a)·op(b) + β·c` on column-major storage, `op` optionally transposing.
fn gemm(alpha: f64, a: &RMat, ta: bool, b: &RMat, tb: bool, beta: f64, c: &mut RMat) {
    let (m, k) = if ta { (a.ncols(), a.nrows()) } else { a.shape() };
    let (kb, n) = if tb { (b.ncols(), b.nrows()) } else { b.shape() };
    assert!(k == kb && c.shape() == (m, n), "gemm shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        *c *= beta;
        return;
    }
    let strides = |x: &RMat, t: bool| {
        let (rs, cs) = (1isize, x.nrows() as isize);
        if t {
            (cs, rs)
        } else {
            (rs, cs)
        }
    };
    let (rsa, csa) = strides(a, ta);
    let (rsb, csb) = strides(b, tb);
    let rsc = 1isize;
    let csc = m as isize;
    // SAFETY: the pointers address column-major buffers whose shapes were checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// `op(a)·op(b)`.
fn mul(a: &RMat, ta: bool, b: &RMat, tb: bool) -> RMat {
    let m = if ta { a.ncols() } else { a.nrows() };
    let n = if tb { b.nrows() } else { b.ncols() };
    let mut c = RMat::zeros(m, n);
    gemm(1.0, a, ta, b, tb, 0.0, &mut c);
    c
}

/// `c += op(a)·op(b)`.
fn mul_acc(c: &mut RMat, a: &RMat, ta: bool, b: &RMat, tb: bool) {
    gemm(1.0, a, ta, b, tb, 1.0, c);
}

/// Adds `bias` (n × 1) to every row of `z`.
fn add_bias(z: &mut RMat, bias: &RMat) {
    for c in 0..z.ncols() {
        let b = bias[(c, 0)];
        for r in 0..z.nrows() {
            z[(r, c)] += b;
        }
    }
}

fn column_sums(g: &RMat) -> RMat {
    RMat::from_fn(g.ncols(), 1, |c, _| {
        let mut acc = 0.0;
        for r in 0..g.nrows() {
            acc += g[(r, c)];
        }
        acc
    })
}

/// Rows `Σ_{i≠k} x_i`, summed in ascending i.
fn sum_others(x: &RMat) -> RMat {
    let n = x.nrows();
    let mut out = RMat::zeros(n, x.ncols());
    for k in 0..n {
        for i in 0..n {
            if i != k {
                for f in 0..x.ncols() {
                    out[(k, f)] += x[(i, f)];
                }
            }
        }
    }
    out
}

/// (incoming, outgoing) edge sums per vertex: `Σ_{i≠k} e_ik` and `Σ_{i≠k} e_ki`.
fn edge_sums(e: &RMat, n: usize) -> (RMat, RMat) {
    let w = e.ncols();
    let mut e_in = RMat::zeros(n, w);
    let mut e_out = RMat::zeros(n, w);
    for k in 0..n {
        for i in 0..n {
            if i != k {
                let rin = edge_index(i, k, n);
                let rout = edge_index(k, i, n);
                for f in 0..w {
                    e_in[(k, f)] += e[(rin, f)];
                    e_out[(k, f)] += e[(rout, f)];
                }
            }
        }
    }
    (e_in, e_out)
}

fn neighbor_edges(e: &RMat, e_in: &RMat, e_out: &RMat, n: usize) -> RMat {
    let pairs = edge_pairs(n);
    RMat::from_fn(pairs.len(), e.ncols(), |row, f| {
        let (k, j) = pairs[row];
        e_in[(j, f)] + e_out[(k, f)] - 2.0 * e[(row, f)]
    })
}

fn check_features(spec: &GnnSpec, x: &GraphFeatures) -> Result<()> {
    let n = x.num_vertices();
    if n == 0 {
        return Err(Error::Shape("graph has no vertices".into()));
    }
    if x.vertices.ncols() != spec.vertex_widths[0] {
        return Err(Error::Shape(format!(
            "vertex features have width {}, network expects {}",
            x.vertices.ncols(),
            spec.vertex_widths[0]
        )));
    }
    if x.edges.nrows() != n * (n - 1) || x.edges.ncols() != spec.edge_widths[0] {
        return Err(Error::Shape(format!(
            "edge features are {}x{}, network expects {}x{}",
            x.edges.nrows(),
            x.edges.ncols(),
            n * (n - 1),
            spec.edge_widths[0]
        )));
    }
    Ok(())
}

pub fn gnn_forward(spec: &GnnSpec, params: &GnnParams, x: &GraphFeatures) -> Result<ForwardCache> {
    forward_impl(spec, params, x, params.fingerprint())
}

/// Forward pass without a usable cache, for inference.
pub fn gnn_infer(spec: &GnnSpec, params: &GnnParams, x: &GraphFeatures) -> Result<GraphFeatures> {
    Ok(forward_impl(spec, params, x, 0)?.output)
}

fn forward_impl(spec: &GnnSpec, params: &GnnParams, x: &GraphFeatures, fingerprint: u64) -> Result<ForwardCache> {
    check_features(spec, x)?;
    let n = x.num_vertices();
    let last = params.layers.len() - 1;
    let mut d = x.vertices.clone();
    let mut e = x.edges.clone();
    let mut caches = Vec::with_capacity(params.layers.len());
    for (l, p) in params.layers.iter().enumerate() {
        let others = sum_others(&d);
        let (e_in, e_out) = edge_sums(&e, n);
        let mut zv = mul(&d, false, &p.w_self, true);
        mul_acc(&mut zv, &others, false, &p.w_other, true);
        if e.ncols() > 0 {
            mul_acc(&mut zv, &e_in, false, &p.w_ein, true);
            mul_acc(&mut zv, &e_out, false, &p.w_eout, true);
        }
        add_bias(&mut zv, &p.b_vertex);

        let de_out = p.u_edge.nrows();
        let src = mul(&d, false, &p.u_src, true);
        let dst = mul(&d, false, &p.u_dst, true);
        let mut ze = if e.ncols() > 0 {
            mul(&e, false, &p.u_edge, true)
        } else {
            RMat::zeros(e.nrows(), de_out)
        };
        for (row, (k, j)) in edge_pairs(n).into_iter().enumerate() {
            for f in 0..de_out {
                ze[(row, f)] += src[(k, f)] + dst[(j, f)];
            }
        }
        let nbr = match &p.u_nbr {
            Some(u) if e.ncols() > 0 => {
                let nb = neighbor_edges(&e, &e_in, &e_out, n);
                mul_acc(&mut ze, &nb, false, u, true);
                Some(nb)
            }
            _ => None,
        };
        add_bias(&mut ze, &p.b_edge);

        let (d_next, e_next) = if l == last {
            (apply_head(spec.vertex_head, &zv), apply_head(spec.edge_head, &ze))
        } else {
            let s = spec.leaky_slope;
            (zv.map(|z| leaky(z, s)), ze.map(|z| leaky(z, s)))
        };
        caches.push(LayerCache {
            d,
            e,
            others,
            e_in,
            e_out,
            nbr,
            zv,
            ze,
        });
        d = d_next;
        e = e_next;
    }
    Ok(ForwardCache {
        layers: caches,
        fingerprint,
        output: GraphFeatures { vertices: d, edges: e },
    })
}

/// Gradients with respect to the raw input features.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrads {
    pub vertices: RMat,
    pub edges: RMat,
}

/// Reverse pass. Parameter gradients are skipped when `want_param_grads` is false.
pub fn gnn_backward(
    spec: &GnnSpec,
    params: &GnnParams,
    cache: &ForwardCache,
    grad_out: &GraphFeatures,
    want_param_grads: bool,
) -> Result<(Option<GnnParams>, InputGrads)> {
    if cache.fingerprint != params.fingerprint() || cache.layers.len() != params.layers.len() {
        return Err(Error::StaleCache);
    }
    if grad_out.vertices.shape() != cache.output.vertices.shape()
        || grad_out.edges.shape() != cache.output.edges.shape()
    {
        return Err(Error::Shape(format!(
            "output gradient shapes {:?}/{:?} do not match outputs {:?}/{:?}",
            grad_out.vertices.shape(),
            grad_out.edges.shape(),
            cache.output.vertices.shape(),
            cache.output.edges.shape()
        )));
    }
    let n = grad_out.vertices.nrows();
    let pairs = edge_pairs(n);
    let last = params.layers.len() - 1;
    let mut grads = want_param_grads.then(|| params.zeros_like());
    let mut gd = grad_out.vertices.clone();
    let mut ge = grad_out.edges.clone();
    for l in (0..params.layers.len()).rev() {
        let p = &params.layers[l];
        let c = &cache.layers[l];
        let (gzv, gze) = if l == last {
            (head_grad(spec.vertex_head, &c.zv, &gd), head_grad(spec.edge_head, &c.ze, &ge))
        } else {
            let s = spec.leaky_slope;
            (
                c.zv.zip_map(&gd, |z, g| leaky_grad(z, s) * g),
                c.ze.zip_map(&ge, |z, g| leaky_grad(z, s) * g),
            )
        };

        let has_edges = c.e.ncols() > 0;
        let mut g_src = RMat::zeros(n, gze.ncols());
        let mut g_dst = RMat::zeros(n, gze.ncols());
        for (row, &(k, j)) in pairs.iter().enumerate() {
            for f in 0..gze.ncols() {
                g_src[(k, f)] += gze[(row, f)];
                g_dst[(j, f)] += gze[(row, f)];
            }
        }

        if let Some(g) = grads.as_mut() {
            let gl = &mut g.layers[l];
            gl.w_self = mul(&gzv, true, &c.d, false);
            gl.w_other = mul(&gzv, true, &c.others, false);
            if has_edges {
                gl.w_ein = mul(&gzv, true, &c.e_in, false);
                gl.w_eout = mul(&gzv, true, &c.e_out, false);
                gl.u_edge = mul(&gze, true, &c.e, false);
            }
            gl.b_vertex = column_sums(&gzv);
            gl.u_src = mul(&g_src, true, &c.d, false);
            gl.u_dst = mul(&g_dst, true, &c.d, false);
            if let (Some(gu), Some(nb)) = (gl.u_nbr.as_mut(), c.nbr.as_ref()) {
                *gu = mul(&gze, true, nb, false);
            }
            gl.b_edge = column_sums(&gze);
        }

        let g_others = mul(&gzv, false, &p.w_other, false);
        let mut gd_prev = sum_others(&g_others);
        mul_acc(&mut gd_prev, &gzv, false, &p.w_self, false);
        mul_acc(&mut gd_prev, &g_src, false, &p.u_src, false);
        mul_acc(&mut gd_prev, &g_dst, false, &p.u_dst, false);
        let mut ge_prev = RMat::zeros(c.e.nrows(), c.e.ncols());
        if has_edges {
            let g_in = mul(&gzv, false, &p.w_ein, false);
            let g_out = mul(&gzv, false, &p.w_eout, false);
            ge_prev = mul(&gze, false, &p.u_edge, false);
            for (row, &(k, j)) in pairs.iter().enumerate() {
                // e_kj feeds vertex j's incoming sum and vertex k's outgoing sum
                for f in 0..c.e.ncols() {
                    ge_prev[(row, f)] += g_in[(j, f)] + g_out[(k, f)];
                }
            }
            if let (Some(u), Some(_)) = (p.u_nbr.as_ref(), c.nbr.as_ref()) {
                let g_nbr = mul(&gze, false, u, false);
                let mut into = RMat::zeros(n, c.e.ncols());
                let mut from = RMat::zeros(n, c.e.ncols());
                for (row, &(k, j)) in pairs.iter().enumerate() {
                    for f in 0..c.e.ncols() {
                        into[(j, f)] += g_nbr[(row, f)];
                        from[(k, f)] += g_nbr[(row, f)];
                    }
                }
                for (row, &(k, j)) in pairs.iter().enumerate() {
                    for f in 0..c.e.ncols() {
                        ge_prev[(row, f)] += into[(j, f)] + from[(k, f)] - 2.0 * g_nbr[(row, f)];
                    }
                }
            }
        }
        gd = gd_prev;
        ge = ge_prev;
    }
    Ok((grads, InputGrads { vertices: gd, edges: ge }))
}
