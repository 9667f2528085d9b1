//! Self-energy `Ψ₀(b, t)` of an infinite straight dislocation.
//!
//! In cylindrical coordinates around the line the singular strain has the
//! form `η = r⁻¹ (f(θ) ⊗ Q_t e_θ + g ⊗ Q_t e_r)` with `∫₀^{2π} f = b`. The
//! angular energy `∫ ½ ℂG:G dθ` is a quadratic form in `(f, g)` subject to a
//! linear constraint. On a uniform θ-grid the node values of `f` decouple once
//! the multiplier `Λ` and `g` are known, so the optimality system reduces to a
//! 6×6 symmetric system; [`solve_self_energy_dense`] solves the same system
//! without the reduction.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use rayon::prelude::*;
use serde::Serialize;

use crate::elasticity::{ddot, ElasticTensor, Mat3, Rotation, Vec3};
use crate::error::{Error, Result};
use crate::quadrature::gauss_interval;

/// Rotation `Q_t` with `Q_t e₃ = t`: the minimal-angle rotation about
/// `e₃ × t`; for `t = −e₃` the rotation by π about `e₁`.
pub fn frame_for_direction(t: &Vec3) -> Result<Rotation> {
    let n = t.norm();
    if !n.is_finite() || (n - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(format!("direction must be a unit vector (|t| = {n})")));
    }
    let t = t / n;
    let c = t.z;
    if 1.0 + c < 1e-12 {
        return Ok(Rotation::new_unchecked(Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0))));
    }
    let v = Vec3::z().cross(&t);
    let vx = Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0);
    let m = Mat3::identity() + vx + vx * vx / (1.0 + c);
    Ok(Rotation::new_unchecked(m))
}

/// Local radial and azimuthal unit vectors `Q_t e_r(θ)`, `Q_t e_θ(θ)`.
#[inline]
fn frame_vectors(frame: &Rotation, theta: f64) -> (Vec3, Vec3) {
    let (s, c) = theta.sin_cos();
    let m = frame.matrix();
    let e1 = m.column(0).into_owned();
    let e2 = m.column(1).into_owned();
    (e1 * c + e2 * s, e2 * c - e1 * s)
}

/// Sampled angular profile `(f, g)` of the straight-dislocation strain.
#[derive(Clone, Debug, Serialize)]
pub struct AngularProfile {
    /// Node values of `f` at `θ_k = 2πk/N`.
    pub f: Vec<Vec3>,
    pub g: Vec3,
    #[serde(skip)]
    pub frame: Rotation,
    pub burgers: Vec3,
    pub direction: Vec3,
    /// Antiderivative of the interpolant of `f` at the nodes, `F(θ_0) = 0`.
    #[serde(skip)]
    cumulative: Vec<Vec3>,
}

// cubic Lagrange weights on nodes k-1..k+2 and their integrals from 0 to s
#[inline]
fn lagrange_weights(s: f64) -> [f64; 4] {
    [
        -s * (s - 1.0) * (s - 2.0) / 6.0,
        (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
        -(s + 1.0) * s * (s - 2.0) / 2.0,
        (s + 1.0) * s * (s - 1.0) / 6.0,
    ]
}

#[inline]
fn lagrange_integrals(s: f64) -> [f64; 4] {
    let (s2, s3, s4) = (s * s, s * s * s, s * s * s * s);
    [
        -(s4 / 4.0 - s3 + s2) / 6.0,
        (s4 / 4.0 - 2.0 * s3 / 3.0 - s2 / 2.0 + 2.0 * s) / 2.0,
        -(s4 / 4.0 - s3 / 3.0 - s2) / 2.0,
        (s4 / 4.0 - s2 / 2.0) / 6.0,
    ]
}

impl AngularProfile {
    pub fn new(f: Vec<Vec3>, g: Vec3, frame: Rotation, burgers: Vec3, direction: Vec3) -> Self {
        let n = f.len();
        let h = TAU / n as f64;
        let mut cumulative = Vec::with_capacity(n + 1);
        let mut acc = Vec3::zeros();
        cumulative.push(acc);
        let w = lagrange_integrals(1.0);
        for k in 0..n {
            let idx = |o: isize| (k as isize + o).rem_euclid(n as isize) as usize;
            acc += (f[idx(-1)] * w[0] + f[idx(0)] * w[1] + f[idx(1)] * w[2] + f[idx(2)] * w[3]) * h;
            cumulative.push(acc);
        }
        Self { f, g, frame, burgers, direction, cumulative }
    }

    pub fn zero(n: usize, frame: Rotation, direction: Vec3) -> Self {
        Self::new(vec![Vec3::zeros(); n], Vec3::zeros(), frame, Vec3::zeros(), direction)
    }

    pub fn n_theta(&self) -> usize {
        self.f.len()
    }

    fn locate(&self, theta: f64) -> (usize, f64) {
        let n = self.f.len();
        let h = TAU / n as f64;
        let x = theta.rem_euclid(TAU) / h;
        let k = (x.floor() as usize).min(n - 1);
        (k, x - k as f64)
    }

    /// Periodic cubic interpolant of `f`.
    pub fn f_at(&self, theta: f64) -> Vec3 {
        let n = self.f.len() as isize;
        let (k, s) = self.locate(theta);
        let w = lagrange_weights(s);
        let idx = |o: isize| (k as isize + o).rem_euclid(n) as usize;
        self.f[idx(-1)] * w[0] + self.f[idx(0)] * w[1] + self.f[idx(1)] * w[2] + self.f[idx(2)] * w[3]
    }

    /// `∫₀^θ f` of the interpolant for `θ ∈ [0, 2π)`; increases by `∫f` per period.
    pub fn antiderivative(&self, theta: f64) -> Vec3 {
        let n = self.f.len() as isize;
        let h = TAU / n as f64;
        let (k, s) = self.locate(theta);
        let w = lagrange_integrals(s);
        let idx = |o: isize| (k as isize + o).rem_euclid(n) as usize;
        self.cumulative[k]
            + (self.f[idx(-1)] * w[0] + self.f[idx(0)] * w[1] + self.f[idx(1)] * w[2] + self.f[idx(2)] * w[3]) * h
    }

    /// Integral of `f` by the periodic trapezoidal rule.
    pub fn circulation(&self) -> Vec3 {
        self.f.iter().sum::<Vec3>() * (TAU / self.f.len() as f64)
    }

    /// Angular matrix `G(θ) = f(θ) ⊗ Q_t e_θ + g ⊗ Q_t e_r`.
    pub fn angular_matrix(&self, theta: f64) -> Mat3 {
        let (er, et) = frame_vectors(&self.frame, theta);
        self.f_at(theta) * et.transpose() + self.g * er.transpose()
    }

    /// Local cylindrical coordinates `(r, θ, z)` of `x` around the line `ℝt`.
    pub fn cylindrical(&self, x: &Vec3) -> (f64, f64, f64) {
        let y = self.frame.matrix().transpose() * x;
        (y.x.hypot(y.y), y.y.atan2(y.x).rem_euclid(TAU), y.z)
    }

    /// Strain `η_{b,t}(x)`; homogeneous of degree −1 in the distance to the axis.
    pub fn eval_eta(&self, x: &Vec3) -> Result<Mat3> {
        let (r, theta, _) = self.cylindrical(x);
        if !(r > 1e-12 * x.norm()) || !r.is_finite() {
            return Err(Error::OnLine(format!("eval_eta at distance {r} from the axis")));
        }
        Ok(self.angular_matrix(theta) / r)
    }

    /// Loop integral `∮ η(Q_t e_θ) ρ dθ` on the circle of radius `rho`, by the
    /// trapezoidal rule with `n` points.
    pub fn loop_circulation(&self, rho: f64, n: usize) -> Result<Vec3> {
        let mut acc = Vec3::zeros();
        for k in 0..n {
            let th = TAU * k as f64 / n as f64;
            let (er, et) = frame_vectors(&self.frame, th);
            let eta = self.eval_eta(&(er * rho))?;
            acc += eta * et * rho;
        }
        Ok(acc * (TAU / n as f64))
    }

    /// Same profile with `f` replaced.
    pub fn with_f(&self, f: Vec<Vec3>) -> Self {
        Self::new(f, self.g, self.frame, self.burgers, self.direction)
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SolveResiduals {
    pub constraint: f64,
    pub equilibrium: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SelfEnergyResult {
    pub value: f64,
    pub profile: AngularProfile,
    pub residuals: SolveResiduals,
}

/// Angular integrals of the reduced optimality system for one direction.
struct Reduced {
    /// `Σ w K_aa⁻¹`
    m: Mat3,
    /// `Σ w K_aa⁻¹ K_ac`
    n: Mat3,
    /// `Σ w (K_cc − K_ca K_aa⁻¹ K_ac)`
    s: Mat3,
    kaa_inv: Vec<Mat3>,
    kac: Vec<Mat3>,
    frame: Rotation,
}

fn check_n_theta(n: usize) -> Result<()> {
    if n < 16 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!("n_theta must be even and at least 16, got {n}")));
    }
    Ok(())
}

fn reduce(c: &ElasticTensor, t: &Vec3, n_theta: usize) -> Result<Reduced> {
    check_n_theta(n_theta)?;
    let frame = frame_for_direction(t)?;
    let w = TAU / n_theta as f64;
    let (mut m, mut n, mut s) = (Mat3::zeros(), Mat3::zeros(), Mat3::zeros());
    let mut kaa_inv = Vec::with_capacity(n_theta);
    let mut kac = Vec::with_capacity(n_theta);
    for k in 0..n_theta {
        let th = TAU * k as f64 / n_theta as f64;
        let (er, et) = frame_vectors(&frame, th);
        let kaa = c.acoustic(&et, &et);
        let ka_c = c.acoustic(&et, &er);
        let kcc = c.acoustic(&er, &er);
        let inv = kaa.try_inverse().filter(|m| m.iter().all(|x| x.is_finite())).ok_or_else(|| {
            Error::SingularSystem(format!("acoustic tensor singular at θ = {th:.4}"))
        })?;
        m += inv * w;
        n += inv * ka_c * w;
        s += (kcc - ka_c.transpose() * inv * ka_c) * w;
        kaa_inv.push(inv);
        kac.push(ka_c);
    }
    Ok(Reduced { m, n, s, kaa_inv, kac, frame })
}

/// Solves the 6×6 system for `(Λ, g)`; the columns of the returned pair are
/// linear in `b`.
fn multiplier_maps(red: &Reduced) -> Result<(Mat3, Mat3)> {
    let mut a = Matrix6::zeros();
    a.fixed_view_mut::<3, 3>(0, 0).copy_from(&red.m);
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-red.n));
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-red.n.transpose()));
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-red.s));
    let lu = a.lu();
    let mut lam = Mat3::zeros();
    let mut gmap = Mat3::zeros();
    for j in 0..3 {
        let mut rhs = Vector6::zeros();
        rhs[j] = 1.0;
        let x = lu
            .solve(&rhs)
            .filter(|x| x.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::SingularSystem("reduced KKT system".into()))?;
        for i in 0..3 {
            lam[(i, j)] = x[i];
            gmap[(i, j)] = x[i + 3];
        }
    }
    Ok((lam, gmap))
}

/// Symmetric matrix `Z(t)` with `Ψ₀(b, t) = ½ bᵀ Z(t) b` at resolution `n_theta`.
pub fn prelog_matrix(c: &ElasticTensor, t: &Vec3, n_theta: usize) -> Result<Mat3> {
    let red = reduce(c, t, n_theta)?;
    let (lam, _) = multiplier_maps(&red)?;
    Ok((lam + lam.transpose()) * 0.5)
}

/// Minimizes the angular energy for Burgers vector `b` and line direction `t`.
pub fn solve_self_energy(c: &ElasticTensor, b: &Vec3, t: &Vec3, n_theta: usize) -> Result<SelfEnergyResult> {
    let red = reduce(c, t, n_theta)?;
    let (lam_map, g_map) = multiplier_maps(&red)?;
    let lam = lam_map * b;
    let g = g_map * b;
    let f: Vec<Vec3> = red.kaa_inv.iter().zip(&red.kac).map(|(inv, kac)| inv * (lam - kac * g)).collect();
    let profile = AngularProfile::new(f, g, red.frame, *b, t.normalize());
    let value = if b.norm() == 0.0 { 0.0 } else { 0.5 * lam.dot(b) };
    let constraint = (profile.circulation() - b).norm();
    let equilibrium = check_equilibrium(&profile, c);
    Ok(SelfEnergyResult { value, profile, residuals: SolveResiduals { constraint, equilibrium } })
}

/// Discrete angular energy `Σ w ½ ℂG_k:G_k` of a profile at its own nodes.
pub fn profile_energy(profile: &AngularProfile, c: &ElasticTensor) -> f64 {
    let n = profile.n_theta();
    let w = TAU / n as f64;
    (0..n)
        .map(|k| {
            let th = TAU * k as f64 / n as f64;
            let (er, et) = frame_vectors(&profile.frame, th);
            let g = profile.f[k] * et.transpose() + profile.g * er.transpose();
            0.5 * c.contract(&g, &g) * w
        })
        .sum()
}

/// Same discrete problem assembled as one dense KKT system in all `3N + 6`
/// unknowns and solved by LU. Returns the energy.
pub fn solve_self_energy_dense(c: &ElasticTensor, b: &Vec3, t: &Vec3, n_theta: usize) -> Result<f64> {
    check_n_theta(n_theta)?;
    let frame = frame_for_direction(t)?;
    let nf = 3 * n_theta;
    let dim = nf + 6;
    let w = TAU / n_theta as f64;
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for k in 0..n_theta {
        let th = TAU * k as f64 / n_theta as f64;
        let (er, et) = frame_vectors(&frame, th);
        let kaa = c.acoustic(&et, &et) * w;
        let kac = c.acoustic(&et, &er) * w;
        let kcc = c.acoustic(&er, &er) * w;
        for i in 0..3 {
            for j in 0..3 {
                a[(3 * k + i, 3 * k + j)] += kaa[(i, j)];
                a[(3 * k + i, nf + j)] += kac[(i, j)];
                a[(nf + j, 3 * k + i)] += kac[(i, j)];
                a[(nf + i, nf + j)] += kcc[(i, j)];
            }
            a[(3 * k + i, nf + 3 + i)] = w;
            a[(nf + 3 + i, 3 * k + i)] = w;
        }
    }
    for i in 0..3 {
        rhs[nf + 3 + i] = b[i];
    }
    let x = a.clone().lu().solve(&rhs).ok_or_else(|| Error::SingularSystem("dense KKT".into()))?;
    let h = a.view((0, 0), (nf + 3, nf + 3));
    let xv = x.rows(0, nf + 3);
    Ok(0.5 * xv.dot(&(h * xv)))
}

/// Doubles `n_theta` from `start` until successive values differ by less than
/// `rel_tol` (relative) or `max_n` is exceeded.
pub fn converged_self_energy(
    c: &ElasticTensor,
    b: &Vec3,
    t: &Vec3,
    start: usize,
    rel_tol: f64,
    max_n: usize,
) -> Result<SelfEnergyResult> {
    let mut n = start;
    let mut prev = solve_self_energy(c, b, t, n)?;
    while n * 2 <= max_n {
        n *= 2;
        let next = solve_self_energy(c, b, t, n)?;
        if (next.value - prev.value).abs() <= rel_tol * next.value.abs().max(f64::MIN_POSITIVE) {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::NonConvergence(format!("self-energy not converged up to n_theta = {max_n}")))
}

const EQ_R_INNER: f64 = 0.5;
const EQ_R_OUTER: f64 = 2.0;

fn bump(s: f64) -> (f64, f64) {
    if s.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let q = 1.0 - s * s;
    let v = (-1.0 / q).exp();
    (v, v * (-2.0 * s / (q * q)))
}

/// Weak-form residual of `div ℂη = 0` against test fields
/// `v ψ(r) m(θ)` supported in the annulus `0.5 < r < 2`, normalized by
/// `‖ℂη‖ ‖∇φ‖` and maximized over the test family (modes `m ≤ 3`).
pub fn check_equilibrium(profile: &AngularProfile, c: &ElasticTensor) -> f64 {
    let n_ang = (4 * profile.n_theta()).max(256);
    let radial = gauss_interval(40, EQ_R_INNER, EQ_R_OUTER);
    let mid = 0.5 * (EQ_R_INNER + EQ_R_OUTER);
    let half = 0.5 * (EQ_R_OUTER - EQ_R_INNER);
    let dth = TAU / n_ang as f64;
    let angles: Vec<(f64, Vec3, Vec3, Mat3)> = (0..n_ang)
        .map(|k| {
            let th = TAU * k as f64 / n_ang as f64;
            let (er, et) = frame_vectors(&profile.frame, th);
            let g = profile.angular_matrix(th);
            (th, er, et, c.apply(&g))
        })
        .collect();
    // ‖ℂη‖² over the annulus
    let mut stress_sq = 0.0;
    for &(r, wr) in &radial {
        for (_, _, _, cg) in &angles {
            stress_sq += cg.norm_squared() / (r * r) * r * wr * dth;
        }
    }
    if stress_sq == 0.0 {
        return 0.0;
    }
    let basis = [Vec3::x(), Vec3::y(), Vec3::z()];
    let modes: Vec<(usize, bool)> = (0..=3).flat_map(|m| [(m, false), (m, true)]).filter(|&(m, s)| !(m == 0 && s)).collect();
    let mut worst: f64 = 0.0;
    for v in &basis {
        for &(m, is_sin) in &modes {
            let (mut res, mut grad_sq) = (0.0, 0.0);
            for &(r, wr) in &radial {
                let (psi, dpsi) = bump((r - mid) / half);
                let dpsi = dpsi / half;
                for (th, er, et, cg) in &angles {
                    let mf = m as f64;
                    let (mv, dmv) = if is_sin {
                        ((mf * th).sin(), mf * (mf * th).cos())
                    } else {
                        ((mf * th).cos(), -mf * (mf * th).sin())
                    };
                    let grad = v * (er * (dpsi * mv) + et * (psi * dmv / r)).transpose();
                    res += ddot(cg, &grad) / r * r * wr * dth;
                    grad_sq += grad.norm_squared() * r * wr * dth;
                }
            }
            worst = worst.max(res.abs() / (stress_sq.sqrt() * grad_sq.sqrt()));
        }
    }
    worst
}

/// One row of a self-energy scan.
#[derive(Clone, Debug, Serialize)]
pub struct ScanRow {
    pub direction: Vec3,
    pub value: f64,
    pub constraint_residual: f64,
    pub equilibrium_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SelfEnergyScan {
    pub burgers: Vec3,
    pub n_theta: usize,
    pub rows: Vec<ScanRow>,
    /// Smallest `c` with `Ψ₀(b,t) ≤ (1 + c|t − t'|) Ψ₀(b,t')` over scanned pairs.
    pub continuity_constant: f64,
    /// Bounds `c₀|b|² ≤ Ψ₀ ≤ c₁|b|²` over all `b` at the scanned directions.
    pub c0: f64,
    pub c1: f64,
}

/// `Ψ₀(b, t)` over a list of directions with the fitted constants of the
/// continuity and quadratic-growth bounds.
pub fn self_energy_scan(c: &ElasticTensor, b: &Vec3, directions: &[Vec3], n_theta: usize) -> Result<SelfEnergyScan> {
    let rows: Vec<Result<(ScanRow, Mat3)>> = directions
        .par_iter()
        .map(|t| {
            let res = solve_self_energy(c, b, t, n_theta)?;
            let z = prelog_matrix(c, t, n_theta)?;
            Ok((
                ScanRow {
                    direction: *t,
                    value: res.value,
                    constraint_residual: res.residuals.constraint,
                    equilibrium_residual: res.residuals.equilibrium,
                },
                z,
            ))
        })
        .collect();
    let mut out = Vec::with_capacity(rows.len());
    let (mut c0, mut c1) = (f64::INFINITY, 0.0f64);
    for r in rows {
        let (row, z) = r?;
        let eig = z.symmetric_eigen().eigenvalues;
        c0 = c0.min(0.5 * eig.min());
        c1 = c1.max(0.5 * eig.max());
        out.push(row);
    }
    let mut cont: f64 = 0.0;
    for a in &out {
        for bb in &out {
            let d = (a.direction - bb.direction).norm();
            if d > 1e-12 && bb.value > 0.0 {
                cont = cont.max((a.value / bb.value - 1.0) / d);
            }
        }
    }
    Ok(SelfEnergyScan { burgers: *b, n_theta, rows: out, continuity_constant: cont, c0, c1 })
}

/// Classical isotropic prelogarithmic factors `μ/(4π)` (screw) and
/// `μ/(4π(1−ν))` (edge) per unit `|b|²`.
pub fn isotropic_prelog(mu: f64, nu: f64) -> (f64, f64) {
    (mu / (4.0 * PI), mu / (4.0 * PI * (1.0 - nu)))
}
