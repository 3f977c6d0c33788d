//! Problem instances: aperture geometry, users, constants and the LoS channel.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;
use crate::Complex64;

pub type Point = Vector3<f64>;

/// Default carrier wavelength in metres.
pub const DEFAULT_WAVELENGTH: f64 = 0.0107;
/// Free-space impedance, 120π Ω.
pub const FREE_SPACE_IMPEDANCE: f64 = 120.0 * PI;
/// Positions are divided by this before entering a network.
pub const POSITION_SCALE: f64 = 30.0;

const NORMAL_TOL: f64 = 1e-12;

/// A planar rectangular aperture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApertureSpec {
    pub center: [f64; 3],
    pub normal: [f64; 3],
    /// Side along the first in-plane axis (x for the default orientation).
    pub side_u: f64,
    /// Side along the second in-plane axis (z for the default orientation).
    pub side_w: f64,
}

impl ApertureSpec {
    pub fn new(center: [f64; 3], normal: [f64; 3], side_u: f64, side_w: f64) -> Result<Self> {
        let n = Vector3::from(normal);
        if (n.norm() - 1.0).abs() > NORMAL_TOL {
            return Err(Error::InvalidInput(format!(
                "aperture normal must be a unit vector, got norm {}",
                n.norm()
            )));
        }
        if !(side_u > 0.0 && side_w > 0.0) || !side_u.is_finite() || !side_w.is_finite() {
            return Err(Error::InvalidInput(format!(
                "aperture sides must be positive, got {side_u} x {side_w}"
            )));
        }
        Ok(Self {
            center,
            normal,
            side_u,
            side_w,
        })
    }

    /// Square aperture of the given area centred at the origin in the x–z plane,
    /// facing +y.
    pub fn square(area: f64) -> Result<Self> {
        if !(area > 0.0) {
            return Err(Error::InvalidInput(format!("aperture area must be positive, got {area}")));
        }
        let side = area.sqrt();
        Self::new([0.0; 3], [0.0, 1.0, 0.0], side, side)
    }

    pub fn area(&self) -> f64 {
        self.side_u * self.side_w
    }

    pub fn center_point(&self) -> Point {
        Vector3::from(self.center)
    }

    pub fn normal_vec(&self) -> Point {
        Vector3::from(self.normal)
    }

    /// Orthonormal in-plane axes (u, w) with u = n × w.
    pub fn axes(&self) -> (Point, Point) {
        let n = self.normal_vec();
        let z = Vector3::z();
        let w = if (z.dot(&n)).abs() > 1.0 - 1e-9 {
            let x = Vector3::x();
            (x - n * x.dot(&n)).normalize()
        } else {
            (z - n * z.dot(&n)).normalize()
        };
        (n.cross(&w), w)
    }

    /// Point at in-plane coordinates (u, w) relative to the centre.
    pub fn point_at(&self, u: f64, w: f64) -> Point {
        let (eu, ew) = self.axes();
        self.center_point() + eu * u + ew * w
    }

    pub fn corners(&self) -> [Point; 4] {
        let (hu, hw) = (self.side_u / 2.0, self.side_w / 2.0);
        [
            self.point_at(-hu, -hw),
            self.point_at(hu, -hw),
            self.point_at(-hu, hw),
            self.point_at(hu, hw),
        ]
    }

    /// Whether `p` lies on the aperture (within `tol` metres of the plane and
    /// inside the rectangle, edges included).
    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        let d = p - self.center_point();
        let (eu, ew) = self.axes();
        d.dot(&self.normal_vec()).abs() <= tol
            && d.dot(&eu).abs() <= self.side_u / 2.0 + tol
            && d.dot(&ew).abs() <= self.side_w / 2.0 + tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub wavelength: f64,
    pub wavenumber: f64,
    pub impedance: f64,
}

impl PhysicalConstants {
    pub fn new(wavelength: f64) -> Result<Self> {
        if !(wavelength > 0.0) || !wavelength.is_finite() {
            return Err(Error::InvalidInput(format!("wavelength must be positive, got {wavelength}")));
        }
        Ok(Self {
            wavelength,
            wavenumber: 2.0 * PI / wavelength,
            impedance: FREE_SPACE_IMPEDANCE,
        })
    }

    /// Effective area λ²/(4π) of an isotropic receive aperture.
    pub fn isotropic_area(&self) -> f64 {
        self.wavelength * self.wavelength / (4.0 * PI)
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::new(DEFAULT_WAVELENGTH).expect("default wavelength is valid")
    }
}

/// `σ₀² = |A_k| k0² η² / (4π ζ)`.
pub fn noise_variance(zeta: f64, constants: &PhysicalConstants, user_area: f64) -> Result<f64> {
    if !(zeta > 0.0) || !zeta.is_finite() {
        return Err(Error::InvalidInput(format!("zeta must be positive, got {zeta}")));
    }
    let k0 = constants.wavenumber;
    let eta = constants.impedance;
    Ok(user_area * k0 * k0 * eta * eta / (4.0 * PI * zeta))
}

/// SNR in dB ↔ ζ, with SNR_dB = 10·log10(ζ).
pub fn zeta_from_snr_db(snr_db: f64) -> f64 {
    10f64.powf(snr_db / 10.0)
}

/// Physics convention: θ is the polar angle from +z, φ the azimuth from +x.
pub fn spherical_to_cartesian(r: f64, theta: f64, phi: f64) -> Result<Point> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidInput(format!("radius must be positive, got {r}")));
    }
    if !(0.0..=PI).contains(&theta) {
        return Err(Error::InvalidInput(format!("polar angle must lie in [0, π], got {theta}")));
    }
    if !(0.0..2.0 * PI).contains(&phi) {
        return Err(Error::InvalidInput(format!("azimuth must lie in [0, 2π), got {phi}")));
    }
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Ok(Vector3::new(r * st * cp, r * st * sp, r * ct))
}

/// Box in spherical coordinates from which users are drawn uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub r: (f64, f64),
    pub theta: (f64, f64),
    pub phi: (f64, f64),
}

impl Default for Region {
    fn default() -> Self {
        Self {
            r: (20.0, 30.0),
            theta: (PI / 6.0, PI / 3.0),
            phi: (PI / 6.0, PI / 3.0),
        }
    }
}

impl Region {
    fn validate(&self) -> Result<()> {
        let ok = self.r.0 > 0.0
            && self.r.0 < self.r.1
            && self.theta.0 >= 0.0
            && self.theta.0 < self.theta.1
            && self.theta.1 <= PI
            && self.phi.0 >= 0.0
            && self.phi.0 < self.phi.1
            && self.phi.1 <= 2.0 * PI;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid user region {self:?}")))
        }
    }
}

/// Everything needed to draw a scene apart from the seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub num_users: usize,
    pub region: Region,
    pub aperture: ApertureSpec,
    pub zeta: f64,
    pub p_max: f64,
    pub wavelength: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            num_users: 4,
            region: Region::default(),
            aperture: ApertureSpec::square(4.0).expect("4 m² is a valid aperture"),
            zeta: 1e6,
            p_max: 1.0,
            wavelength: DEFAULT_WAVELENGTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub name: String,
    pub seed: u64,
}

/// One problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub aperture: ApertureSpec,
    pub constants: PhysicalConstants,
    pub positions: Vec<Point>,
    /// |A_k| per user.
    pub user_areas: Vec<f64>,
    /// σ_k² per user.
    pub noise: Vec<f64>,
    pub p_max: f64,
    pub zeta: f64,
    pub generator: Option<GeneratorInfo>,
}

impl Scene {
    /// Builds a scene with shared user apertures λ²/(4π) and the noise implied by ζ.
    pub fn new(
        aperture: ApertureSpec,
        constants: PhysicalConstants,
        positions: Vec<Point>,
        zeta: f64,
        p_max: f64,
    ) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidInput("a scene needs at least one user".into()));
        }
        if !(p_max > 0.0) {
            return Err(Error::InvalidInput(format!("power budget must be positive, got {p_max}")));
        }
        let area = constants.isotropic_area();
        let sigma2 = noise_variance(zeta, &constants, area)?;
        let k = positions.len();
        let scene = Self {
            aperture,
            constants,
            positions,
            user_areas: vec![area; k],
            noise: vec![sigma2; k],
            p_max,
            zeta,
            generator: None,
        };
        scene.check_in_front()?;
        Ok(scene)
    }

    pub fn num_users(&self) -> usize {
        self.positions.len()
    }

    /// Checks e_r·(s_k − c) > 0 at every aperture corner, hence at every point.
    pub fn check_in_front(&self) -> Result<()> {
        let n = self.aperture.normal_vec();
        for (k, s) in self.positions.iter().enumerate() {
            for c in self.aperture.corners() {
                let proj = n.dot(&(s - c));
                if !(proj > 0.0) {
                    return Err(Error::UserBehindAperture {
                        user: k,
                        projection: proj,
                    });
                }
            }
        }
        Ok(())
    }

    /// Applies a user permutation: user `i` of the result is user `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let pick = |v: &Vec<f64>| perm.iter().map(|&p| v[p]).collect::<Vec<_>>();
        Self {
            positions: perm.iter().map(|&p| self.positions[p]).collect(),
            user_areas: pick(&self.user_areas),
            noise: pick(&self.noise),
            ..self.clone()
        }
    }

    /// Rigid translation of the aperture and all users.
    pub fn translated(&self, offset: Point) -> Self {
        let mut out = self.clone();
        let c = self.aperture.center_point() + offset;
        out.aperture.center = [c.x, c.y, c.z];
        for s in out.positions.iter_mut() {
            *s += offset;
        }
        out
    }

    pub fn to_record(&self) -> SceneRecord {
        SceneRecord {
            constants: self.constants,
            aperture: self.aperture,
            positions: self
                .positions
                .iter()
                .map(|p| [round_sig(p.x, 15), round_sig(p.y, 15), round_sig(p.z, 15)])
                .collect(),
            user_areas: self.user_areas.clone(),
            noise: self.noise.clone(),
            zeta: self.zeta,
            p_max: self.p_max,
            generator: self.generator.clone(),
        }
    }
}

/// Self-describing JSON form of a [`Scene`]; positions carry 15 significant digits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub constants: PhysicalConstants,
    pub aperture: ApertureSpec,
    pub positions: Vec<[f64; 3]>,
    pub user_areas: Vec<f64>,
    pub noise: Vec<f64>,
    pub zeta: f64,
    pub p_max: f64,
    pub generator: Option<GeneratorInfo>,
}

impl SceneRecord {
    pub fn into_scene(self) -> Result<Scene> {
        let k = self.positions.len();
        if k == 0 || self.user_areas.len() != k || self.noise.len() != k {
            return Err(Error::Shape(format!(
                "scene record with {k} positions, {} areas and {} noise entries",
                self.user_areas.len(),
                self.noise.len()
            )));
        }
        let scene = Scene {
            aperture: self.aperture,
            constants: self.constants,
            positions: self.positions.into_iter().map(Vector3::from).collect(),
            user_areas: self.user_areas,
            noise: self.noise,
            p_max: self.p_max,
            zeta: self.zeta,
            generator: self.generator,
        };
        scene.check_in_front()?;
        Ok(scene)
    }
}

/// Rounds to `digits` significant decimal digits.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits - 1, x).parse().unwrap_or(x)
}

const MAX_RESAMPLE: usize = 1000;

/// Draws `num_users` users uniformly in (r, θ, φ) over the region.
pub fn sample_scene(seed: u64, params: &SceneParams) -> Result<Scene> {
    if params.num_users == 0 {
        return Err(Error::InvalidInput("a scene needs at least one user".into()));
    }
    params.region.validate()?;
    let constants = PhysicalConstants::new(params.wavelength)?;
    let mut rng = seeds::rng(seed, seeds::stream::SCENE, 0);
    let n = params.aperture.normal_vec();
    let corners = params.aperture.corners();
    let reg = params.region;
    let mut positions = Vec::with_capacity(params.num_users);
    for user in 0..params.num_users {
        let mut attempt = 0;
        loop {
            let r = rng.random_range(reg.r.0..reg.r.1);
            let theta = rng.random_range(reg.theta.0..reg.theta.1);
            let phi = rng.random_range(reg.phi.0..reg.phi.1);
            let p = spherical_to_cartesian(r, theta, phi)?;
            if corners.iter().all(|c| n.dot(&(p - c)) > 0.0) {
                positions.push(p);
                break;
            }
            attempt += 1;
            if attempt >= MAX_RESAMPLE {
                return Err(Error::UserBehindAperture {
                    user,
                    projection: n.dot(&(p - params.aperture.center_point())),
                });
            }
        }
    }
    let mut scene = Scene::new(params.aperture, constants, positions, params.zeta, params.p_max)?;
    scene.generator = Some(GeneratorInfo {
        name: "uniform-spherical-box".into(),
        seed,
    });
    Ok(scene)
}

/// LoS channel from aperture point `r` to the centre of user `k`'s aperture:
///
/// `H_k(r) = sqrt(e_r·(s_k−r)/d) · j k0 η e^{−j k0 d}/(4π d) · (1 + j/(k0 d) − 1/(k0 d)²)`, d = ‖r − s_k‖.
pub fn channel_response(scene: &Scene, k: usize, r: &Point) -> Result<Complex64> {
    let s = scene
        .positions
        .get(k)
        .ok_or_else(|| Error::InvalidInput(format!("user index {k} out of range")))?;
    let n = scene.aperture.normal_vec();
    channel_response_at(s, &n, &scene.constants, r).map_err(|e| match e {
        Error::UserBehindAperture { projection, .. } => Error::UserBehindAperture { user: k, projection },
        other => other,
    })
}

pub(crate) fn channel_response_at(
    s: &Point,
    normal: &Point,
    constants: &PhysicalConstants,
    r: &Point,
) -> Result<Complex64> {
    let diff = s - r;
    let d = diff.norm();
    let proj = normal.dot(&diff);
    if !(proj > 0.0) || !(d > 0.0) {
        return Err(Error::UserBehindAperture {
            user: usize::MAX,
            projection: proj,
        });
    }
    let k0 = constants.wavenumber;
    let eta = constants.impedance;
    let kd = k0 * d;
    let amplitude = (proj / d).sqrt() * k0 * eta / (4.0 * PI * d);
    // j·e^{−j k0 d}
    let carrier = Complex64::from_polar(1.0, -kd) * Complex64::i();
    let correction = Complex64::new(1.0 - 1.0 / (kd * kd), 1.0 / kd);
    Ok(carrier * correction * amplitude)
}
