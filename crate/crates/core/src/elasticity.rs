//! Elastic tensors, the frame-indifferent energy density `W` and the rotation
//! utilities used by the rigidity diagnostics.
//!
//! The default energy is the prototype `W(F) = dist²(F, SO(3))`, evaluated in
//! closed form through a sign-corrected SVD. Its Hessian at the identity is the
//! isotropic tensor with `μ = 1`, `λ = 0`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat9 = SMatrix<f64, 9, 9>;

const ORTHO_TOL: f64 = 1e-12;

/// Flattened index of the entry `(i, j)` of a 3×3 matrix in row-major order.
#[inline]
pub fn flat(i: usize, j: usize) -> usize {
    3 * i + j
}

/// Matrix with a single unit entry at `(i, j)`.
pub fn unit_matrix(i: usize, j: usize) -> Mat3 {
    let mut m = Mat3::zeros();
    m[(i, j)] = 1.0;
    m
}

/// Row-major view of a 3×3 matrix as a 9-vector.
pub fn to_flat(m: &Mat3) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[flat(i, j)] = m[(i, j)];
        }
    }
    out
}

pub fn from_flat(v: &[f64]) -> Mat3 {
    Mat3::from_row_slice(&v[..9])
}

/// Frobenius inner product `A : B`.
#[inline]
pub fn ddot(a: &Mat3, b: &Mat3) -> f64 {
    a.component_mul(b).sum()
}

pub fn sym(m: &Mat3) -> Mat3 {
    (m + m.transpose()) * 0.5
}

pub fn skew(m: &Mat3) -> Mat3 {
    (m - m.transpose()) * 0.5
}

/// A proper rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    /// Validates `RᵀR = I` and `det R = 1` to `1e-12`.
    pub fn new(m: Mat3) -> Result<Self> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("rotation entries".into()));
        }
        let defect = (m.transpose() * m - Mat3::identity()).abs().max();
        let det = m.determinant();
        if defect > ORTHO_TOL * 10.0 || (det - 1.0).abs() > ORTHO_TOL * 10.0 {
            return Err(Error::InvalidArgument(format!(
                "not a rotation: |RᵀR - I| = {defect:.3e}, det = {det}"
            )));
        }
        Ok(Self(m))
    }

    pub(crate) fn new_unchecked(m: Mat3) -> Self {
        Self(m)
    }

    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Right-handed rotation by `angle` about `axis` (Rodrigues).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0) || !angle.is_finite() {
            return Err(Error::InvalidArgument("axis must be nonzero and angle finite".into()));
        }
        let k = axis / n;
        let kx = Mat3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
        let m = Mat3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos());
        Ok(Self(m))
    }

    /// Rotation vector form: direction is the axis, norm the angle.
    pub fn from_rotation_vector(v: &Vec3) -> Self {
        let angle = v.norm();
        if angle == 0.0 {
            return Self::identity();
        }
        Self::from_axis_angle(v, angle).expect("nonzero axis")
    }

    /// Uniformly distributed rotation (Shoemake's quaternion construction).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
        let u3: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
        let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
        let (w, x, y, z) = (a * u2.sin(), a * u2.cos(), b * u3.sin(), b * u3.cos());
        let m = Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        );
        Self(m)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Self(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }
}

/// Sign-corrected SVD `F = U diag(s) Vᵀ` with `U, V ∈ SO(3)`.
///
/// Singular values are sorted in decreasing order; when `det F < 0` the last
/// one carries the negative sign.
#[derive(Clone, Copy, Debug)]
pub struct SignedSvd {
    pub u: Mat3,
    pub s: Vec3,
    pub v: Mat3,
}

impl SignedSvd {
    pub fn new(f: &Mat3) -> Self {
        let svd = f.svd(true, true);
        let u0 = svd.u.expect("u requested");
        let v0 = svd.v_t.expect("v_t requested").transpose();
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let mut u = Mat3::zeros();
        let mut v = Mat3::zeros();
        let mut s = Vec3::zeros();
        for (dst, &src) in idx.iter().enumerate() {
            u.set_column(dst, &u0.column(src));
            v.set_column(dst, &v0.column(src));
            s[dst] = svd.singular_values[src];
        }
        if u.determinant() < 0.0 {
            let c = -u.column(2);
            u.set_column(2, &c);
            s[2] = -s[2];
        }
        if v.determinant() < 0.0 {
            let c = -v.column(2);
            v.set_column(2, &c);
            s[2] = -s[2];
        }
        Self { u, s, v }
    }

    pub fn rotation(&self) -> Mat3 {
        self.u * self.v.transpose()
    }
}

/// `min_{R ∈ SO(3)} |F − R|` in the Frobenius norm.
pub fn distance_to_rotations(f: &Mat3) -> f64 {
    dist_sq(f).sqrt()
}

fn dist_sq(f: &Mat3) -> f64 {
    let svd = SignedSvd::new(f);
    svd.s.iter().map(|s| (s - 1.0).powi(2)).sum()
}

/// Nearest rotation to `F`.
///
/// Fails when `det F ≤ 0` and the two smallest singular values coincide, in
/// which case a whole circle of rotations attains the distance.
pub fn project_to_rotations(f: &Mat3) -> Result<Rotation> {
    if !f.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("matrix to project".into()));
    }
    let svd = SignedSvd::new(f);
    let scale = svd.s[0].abs().max(1.0);
    if f.determinant() <= 0.0 && (svd.s[1].abs() - svd.s[2].abs()).abs() <= 1e-12 * scale {
        return Err(Error::DegenerateProjection(format!(
            "det F = {:.3e}, singular values {:?}",
            f.determinant(),
            svd.s.as_slice()
        )));
    }
    Ok(Rotation::new_unchecked(svd.rotation()))
}

/// Fourth-order tensor acting on 3×3 matrices, `(ℂE)_ij = C_ijkl E_kl`.
#[derive(Clone, PartialEq)]
pub struct ElasticTensor {
    c: [f64; 81],
}

impl fmt::Debug for ElasticTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ElasticTensor").field("voigt", &self.to_voigt()).finish()
    }
}

#[inline]
fn idx4(i: usize, j: usize, k: usize, l: usize) -> usize {
    27 * i + 9 * j + 3 * k + l
}

const VOIGT: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

impl ElasticTensor {
    pub fn zeros() -> Self {
        Self { c: [0.0; 81] }
    }

    /// `C_ijkl = λ δ_ij δ_kl + μ (δ_ik δ_jl + δ_il δ_jk)`.
    pub fn isotropic(mu: f64, lambda: f64) -> Self {
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        let mut t = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        t.c[idx4(i, j, k, l)] =
                            lambda * d(i, j) * d(k, l) + mu * (d(i, k) * d(j, l) + d(i, l) * d(j, k));
                    }
                }
            }
        }
        t
    }

    /// Isotropic tensor from shear modulus and Poisson ratio.
    pub fn isotropic_poisson(mu: f64, nu: f64) -> Self {
        Self::isotropic(mu, 2.0 * mu * nu / (1.0 - 2.0 * nu))
    }

    /// Cubic-symmetry tensor in the crystal frame.
    pub fn cubic(c11: f64, c12: f64, c44: f64) -> Self {
        let mut v = [[0.0; 6]; 6];
        for a in 0..3 {
            for b in 0..3 {
                v[a][b] = if a == b { c11 } else { c12 };
            }
            v[a + 3][a + 3] = c44;
        }
        Self::from_voigt(&v)
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.c[idx4(i, j, k, l)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, value: f64) {
        self.c[idx4(i, j, k, l)] = value;
    }

    pub fn apply(&self, e: &Mat3) -> Mat3 {
        let mut out = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    for l in 0..3 {
                        acc += self.c[idx4(i, j, k, l)] * e[(k, l)];
                    }
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    /// `ℂE : F`.
    pub fn contract(&self, e: &Mat3, f: &Mat3) -> f64 {
        ddot(&self.apply(e), f)
    }

    /// `K_ik = C_ijkl v_j w_l`, so that `ℂ(x⊗v):(y⊗w) = x·K(v,w)y`.
    pub fn acoustic(&self, v: &Vec3, w: &Vec3) -> Mat3 {
        let mut out = Mat3::zeros();
        for i in 0..3 {
            for k in 0..3 {
                let mut acc = 0.0;
                for j in 0..3 {
                    for l in 0..3 {
                        acc += self.c[idx4(i, j, k, l)] * v[j] * w[l];
                    }
                }
                out[(i, k)] = acc;
            }
        }
        out
    }

    /// `C'_ijkl = R_ia R_jb R_kc R_ld C_abcd`.
    pub fn rotated(&self, r: &Rotation) -> Self {
        let m = r.matrix();
        let mut out = Self::zeros();
        // two-stage contraction keeps this at 4·3⁵ multiply-adds
        let mut tmp = [0.0; 81];
        for i in 0..3 {
            for j in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        let mut acc = 0.0;
                        for a in 0..3 {
                            for b in 0..3 {
                                acc += m[(i, a)] * m[(j, b)] * self.c[idx4(a, b, c, d)];
                            }
                        }
                        tmp[idx4(i, j, c, d)] = acc;
                    }
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        let mut acc = 0.0;
                        for c in 0..3 {
                            for d in 0..3 {
                                acc += m[(k, c)] * m[(l, d)] * tmp[idx4(i, j, c, d)];
                            }
                        }
                        out.c[idx4(i, j, k, l)] = acc;
                    }
                }
            }
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.c.iter_mut().for_each(|x| *x *= factor);
        out
    }

    /// Largest `|C_ijkl − C_klij|`.
    pub fn major_symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        worst = worst.max((self.get(i, j, k, l) - self.get(k, l, i, j)).abs());
                    }
                }
            }
        }
        worst
    }

    /// Largest `|ℂW|` over unit skew matrices `W`.
    pub fn skew_defect(&self) -> f64 {
        [(0, 1), (0, 2), (1, 2)]
            .iter()
            .map(|&(a, b)| {
                let w = (unit_matrix(a, b) - unit_matrix(b, a)) / 2f64.sqrt();
                self.apply(&w).norm()
            })
            .fold(0.0, f64::max)
    }

    /// 6×6 Voigt matrix with tensorial shear components (no factor 2).
    pub fn to_voigt(&self) -> [[f64; 6]; 6] {
        let mut v = [[0.0; 6]; 6];
        for (a, &(i, j)) in VOIGT.iter().enumerate() {
            for (b, &(k, l)) in VOIGT.iter().enumerate() {
                v[a][b] = self.get(i, j, k, l);
            }
        }
        v
    }

    /// Inverse of [`to_voigt`](Self::to_voigt); fills all minor-symmetric slots.
    pub fn from_voigt(v: &[[f64; 6]; 6]) -> Self {
        let mut t = Self::zeros();
        for (a, &(i, j)) in VOIGT.iter().enumerate() {
            for (b, &(k, l)) in VOIGT.iter().enumerate() {
                for (p, q) in [(i, j), (j, i)] {
                    for (r, s) in [(k, l), (l, k)] {
                        t.set(p, q, r, s, v[a][b]);
                    }
                }
            }
        }
        t
    }

    /// Quadratic form on symmetric matrices in an orthonormal 6-basis.
    pub fn mandel(&self) -> Matrix6<f64> {
        let v = self.to_voigt();
        let w = |a: usize| if a < 3 { 1.0 } else { 2f64.sqrt() };
        Matrix6::from_fn(|a, b| w(a) * w(b) * 0.5 * (v[a][b] + v[b][a]))
    }

    /// Smallest eigenvalue of the quadratic form on symmetric matrices.
    pub fn min_symmetric_eigenvalue(&self) -> f64 {
        self.mandel().symmetric_eigen().eigenvalues.min()
    }

    pub fn ensure_positive_definite(&self) -> Result<()> {
        let m = self.min_symmetric_eigenvalue();
        if m > 0.0 && m.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "elastic tensor is not positive definite on symmetric matrices (min eigenvalue {m:.3e})"
            )))
        }
    }
}

/// JSON representation of an elastic tensor.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TensorFile {
    Voigt { voigt: [[f64; 6]; 6], convention: String },
    Isotropic { mu: f64, lambda: f64 },
}

pub const VOIGT_CONVENTION: &str = "strain-engineering-off";

impl From<&ElasticTensor> for TensorFile {
    fn from(t: &ElasticTensor) -> Self {
        TensorFile::Voigt { voigt: t.to_voigt(), convention: VOIGT_CONVENTION.to_string() }
    }
}

impl TryFrom<TensorFile> for ElasticTensor {
    type Error = Error;

    fn try_from(file: TensorFile) -> Result<Self> {
        match file {
            TensorFile::Voigt { voigt, convention } => {
                if convention != VOIGT_CONVENTION {
                    return Err(Error::Parse(format!("unsupported Voigt convention {convention:?}")));
                }
                Ok(ElasticTensor::from_voigt(&voigt))
            }
            TensorFile::Isotropic { mu, lambda } => Ok(ElasticTensor::isotropic(mu, lambda)),
        }
    }
}

impl Serialize for ElasticTensor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TensorFile::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ElasticTensor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = TensorFile::deserialize(d)?;
        ElasticTensor::try_from(file).map_err(serde::de::Error::custom)
    }
}

type ValueFn = dyn Fn(&Mat3) -> f64 + Send + Sync;
type GradientFn = dyn Fn(&Mat3) -> Mat3 + Send + Sync;

/// User-supplied energy density with optional analytic gradient.
#[derive(Clone)]
pub struct CustomEnergy {
    pub name: String,
    pub value: Arc<ValueFn>,
    pub gradient: Option<Arc<GradientFn>>,
}

/// Stored-energy density `W`.
#[derive(Clone)]
pub enum EnergyModel {
    /// `W(F) = scale · dist²(F, SO(3))`.
    DistSquared { scale: f64 },
    Custom(CustomEnergy),
}

impl fmt::Debug for EnergyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnergyModel::DistSquared { scale } => write!(f, "DistSquared({scale})"),
            EnergyModel::Custom(c) => write!(f, "Custom({})", c.name),
        }
    }
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self::prototype()
    }
}

const FD_GRAD_STEP: f64 = 1e-6;
const FD_HESS_STEP: f64 = 1e-5;

impl EnergyModel {
    pub fn prototype() -> Self {
        EnergyModel::DistSquared { scale: 1.0 }
    }

    pub fn custom<V>(name: &str, value: V) -> Self
    where
        V: Fn(&Mat3) -> f64 + Send + Sync + 'static,
    {
        EnergyModel::Custom(CustomEnergy { name: name.to_string(), value: Arc::new(value), gradient: None })
    }

    pub fn value(&self, f: &Mat3) -> f64 {
        match self {
            EnergyModel::DistSquared { scale } => scale * dist_sq(f),
            EnergyModel::Custom(c) => (c.value)(f),
        }
    }

    /// `∂W/∂F`; analytic for the prototype, central differences otherwise.
    pub fn gradient(&self, f: &Mat3) -> Mat3 {
        match self {
            EnergyModel::DistSquared { scale } => {
                let r = SignedSvd::new(f).rotation();
                (f - r) * (2.0 * scale)
            }
            EnergyModel::Custom(c) => match &c.gradient {
                Some(g) => g(f),
                None => fd_gradient(&*c.value, f, FD_GRAD_STEP),
            },
        }
    }

    /// Value, gradient and positive-semidefinite Hessian surrogate at `F`.
    ///
    /// For the prototype the Hessian is exact except that the twist-mode
    /// eigenvalues `2(1 − 2/(σᵢ+σⱼ))` are clamped at zero.
    pub fn local_quadratic(&self, f: &Mat3) -> (f64, Mat3, Mat9) {
        match self {
            EnergyModel::DistSquared { scale } => {
                let svd = SignedSvd::new(f);
                let r = svd.rotation();
                let value = scale * svd.s.iter().map(|s| (s - 1.0).powi(2)).sum::<f64>();
                let grad = (f - r) * (2.0 * scale);
                let hess = dist_sq_hessian(&svd, true) * *scale;
                (value, grad, hess)
            }
            EnergyModel::Custom(c) => {
                let value = (c.value)(f);
                let grad = self.gradient(f);
                let mut h = Mat9::zeros();
                for a in 0..9 {
                    let mut e = [0.0; 9];
                    e[a] = FD_HESS_STEP;
                    let d = from_flat(&e);
                    let gp = self.gradient(&(f + d));
                    let gm = self.gradient(&(f - d));
                    let col = to_flat(&((gp - gm) / (2.0 * FD_HESS_STEP)));
                    for b in 0..9 {
                        h[(b, a)] = col[b];
                    }
                }
                let h = (h + h.transpose()) * 0.5;
                let eig = h.symmetric_eigen();
                let clamped = eig.eigenvalues.map(|x| x.max(0.0));
                let h = eig.eigenvectors * Mat9::from_diagonal(&clamped) * eig.eigenvectors.transpose();
                (value, grad, h)
            }
        }
    }
}

/// Hessian of `dist²(·, SO(3))` at a point with signed SVD `svd`, as a 9×9
/// matrix in row-major flattening.
pub fn dist_sq_hessian(svd: &SignedSvd, project_psd: bool) -> Mat9 {
    let (u, v, s) = (&svd.u, &svd.v, &svd.s);
    let mut h = Mat9::zeros();
    for a in 0..9 {
        let mut e = [0.0; 9];
        e[a] = 1.0;
        let d = from_flat(&e);
        let m = u.transpose() * d * v;
        let mut omega = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let denom = s[i] + s[j];
                let mut coef = if denom.abs() > 1e-14 { 2.0 / denom } else { f64::INFINITY };
                if project_psd {
                    coef = if denom > 0.0 { coef.min(1.0) } else { 1.0 };
                }
                omega[(i, j)] = coef * 0.5 * (m[(i, j)] - m[(j, i)]);
            }
        }
        let dr = u * omega * v.transpose();
        let col = to_flat(&((d - dr) * 2.0));
        for b in 0..9 {
            h[(b, a)] = col[b];
        }
    }
    (h + h.transpose()) * 0.5
}

fn fd_gradient(w: &ValueFn, f: &Mat3, step: f64) -> Mat3 {
    let mut g = Mat3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let e = unit_matrix(i, j) * step;
            g[(i, j)] = (w(&(f + e)) - w(&(f - e))) / (2.0 * step);
        }
    }
    g
}

/// Energy density `W` evaluated at `F`.
pub fn energy_density(model: &EnergyModel, f: &Mat3) -> f64 {
    model.value(f)
}

/// `ℂ = ∂²W/∂F²(I)` by central second differences with spacing `step`.
pub fn hessian_at_identity(model: &EnergyModel, step: f64) -> Result<ElasticTensor> {
    if !(1e-6..=1e-2).contains(&step) {
        return Err(Error::InvalidArgument(format!("difference step {step} outside [1e-6, 1e-2]")));
    }
    let id = Mat3::identity();
    let w = |m: &Mat3| model.value(m);
    let mut t = ElasticTensor::zeros();
    for a in 0..9 {
        let ea = unit_matrix(a / 3, a % 3) * step;
        for b in 0..9 {
            let eb = unit_matrix(b / 3, b % 3) * step;
            let v = (w(&(id + ea + eb)) - w(&(id + ea - eb)) - w(&(id - ea + eb)) + w(&(id - ea - eb)))
                / (4.0 * step * step);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("second difference at ({a}, {b})")));
            }
            t.set(a / 3, a % 3, b / 3, b % 3, v);
        }
    }
    Ok(t)
}

/// Empirical constants for the growth and frame-indifference assumptions.
#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    /// Smallest observed `W / dist²`.
    pub c1: f64,
    /// Largest observed `W / dist²`.
    pub c2: f64,
    /// Largest observed `|∂W/∂F| / dist`.
    pub jacobian_constant: f64,
    pub max_frame_violation: f64,
    pub value_at_identity: f64,
}

/// Samples `F = R + Y` with `R` uniform on SO(3) and `|Y| ≤ 3`, and measures
/// the constants of the quadratic-growth and Jacobian bounds.
pub fn validate_energy_assumptions(model: &EnergyModel, samples: usize, seed: u64) -> Result<ValidationReport> {
    use rand::SeedableRng;
    if samples < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 samples, got {samples}")));
    }
    let w_id = model.value(&Mat3::identity());
    if !w_id.is_finite() || w_id.abs() > 1e-12 {
        return Err(Error::AssumptionViolation { clause: "ii", detail: format!("W(I) = {w_id}") });
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut c1 = f64::INFINITY;
    let mut c2: f64 = 0.0;
    let mut jac: f64 = 0.0;
    let mut frame: f64 = 0.0;
    for _ in 0..samples {
        let r = Rotation::random(&mut rng);
        let mut y = Mat3::from_fn(|_, _| {
            // Box-Muller keeps the direction isotropic in R^9
            let (u1, u2): (f64, f64) = (rng.gen::<f64>().max(1e-300), rng.gen());
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        });
        let radius = 3.0 * rng.gen::<f64>().powf(1.0 / 9.0);
        y *= radius / y.norm();
        let f = r.matrix() + y;
        let w = model.value(&f);
        if !w.is_finite() || w < 0.0 {
            return Err(Error::AssumptionViolation { clause: "iv", detail: format!("W(F) = {w} < 0") });
        }
        let d = distance_to_rotations(&f);
        if d > 1e-8 {
            c1 = c1.min(w / (d * d));
            c2 = c2.max(w / (d * d));
            jac = jac.max(model.gradient(&f).norm() / d);
        }
        let q = Rotation::random(&mut rng);
        let wq = model.value(&(q.matrix() * f));
        frame = frame.max((wq - w).abs());
    }
    if frame > 1e-8 {
        return Err(Error::AssumptionViolation {
            clause: "iii",
            detail: format!("frame-indifference violation {frame:.3e}"),
        });
    }
    if !(c1 > 0.0) {
        return Err(Error::AssumptionViolation { clause: "iv", detail: format!("lower growth constant {c1}") });
    }
    Ok(ValidationReport {
        samples,
        c1,
        c2,
        jacobian_constant: jac,
        max_frame_violation: frame,
        value_at_identity: w_id,
    })
}

/// Matrix field sampled at quadrature points with volume weights.
#[derive(Clone, Debug, Default)]
pub struct SampledField {
    pub values: Vec<Mat3>,
    pub weights: Vec<f64>,
}

impl SampledField {
    pub fn push(&mut self, value: Mat3, weight: f64) {
        self.values.push(value);
        self.weights.push(weight);
    }

    pub fn left_multiplied(&self, r: &Rotation) -> Self {
        Self {
            values: self.values.iter().map(|v| r.matrix() * v).collect(),
            weights: self.weights.clone(),
        }
    }
}

/// Average-then-project rotation fit and the ratio
/// `‖F − Q‖_{L²} / ‖dist(F, SO(3))‖_{L²}` (zero when the denominator vanishes).
pub fn best_fit_rotation_ratio(field: &SampledField) -> Result<(Rotation, f64)> {
    if field.values.is_empty() || field.values.len() != field.weights.len() {
        return Err(Error::InvalidArgument("field must be nonempty with one weight per sample".into()));
    }
    if field.values.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
        return Err(Error::NonFinite("field sample".into()));
    }
    let total: f64 = field.weights.iter().sum();
    let mean = field
        .values
        .iter()
        .zip(&field.weights)
        .fold(Mat3::zeros(), |acc, (v, w)| acc + v * *w)
        / total;
    let q = project_to_rotations(&mean)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (v, w) in field.values.iter().zip(&field.weights) {
        num += w * (v - q.matrix()).norm_squared();
        den += w * dist_sq(v);
    }
    // dist below ~1e-12 RMS is round-off of an exact rotation field
    let ratio = if den > 1e-24 * total { (num / den).sqrt() } else { 0.0 };
    Ok((q, ratio))
}
