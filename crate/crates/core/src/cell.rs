//! Linear and geometrically nonlinear cell problems on hollow cylinders.
//!
//! Both problems are solved in the class of strains that are invariant along
//! the cylinder axis. In logarithmic polar coordinates `s = log(ρ/r)`, `θ`
//! on the annulus, a strain with circulation `b` is written as
//!
//! ```text
//! ρ η = (g + ∂_s u) ⊗ e_r + (f(θ) + ∂_θ u) ⊗ e_θ + e^{s−L} c ⊗ t,   L = log(R/r),
//! ```
//!
//! where `(f, g)` is the straight-dislocation profile, `u` is a single-valued
//! potential discretized by bilinear elements on `[0, L] × [0, 2π)` and `c`
//! is a constant. The linear energy per unit length and unit logarithm is
//! then `L⁻¹ ∫∫ ½ℂH:H ds dθ`, independent of `r`, `R` and `h` separately.
//! For the nonlinear problem `β = Q + e^{−s} H` and the normalized energy is
//! `L⁻¹ ∫∫ e^{2s} W(β) + λ|H|² ds dθ`. Because the end faces of a finite
//! cylinder are free, the axially invariant value is an upper bound for the
//! three-dimensional one at finite `h`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::banded::{solve_bordered, SymBanded};
use crate::elasticity::{
    best_fit_rotation_ratio, dist_sq_hessian, flat, ElasticTensor, EnergyModel, Mat3, Mat9, Rotation, SampledField,
    SignedSvd, Vec3,
};
use crate::error::{Error, Result};
use crate::quadrature::pairwise_sum;
use crate::selfenergy::{solve_self_energy, AngularProfile};

/// Resolution of the annulus: `n_rho` cells in `log ρ`, `n_theta` in `θ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellMesh {
    pub n_rho: usize,
    pub n_theta: usize,
}

impl CellMesh {
    /// `cells_per_decade` radial cells per decade of `R/r`, at least 8.
    pub fn per_decade(cells_per_decade: usize, r_over_big_r: f64, n_theta: usize) -> Self {
        let decades = (1.0 / r_over_big_r).log10();
        let n_rho = ((cells_per_decade as f64 * decades).ceil() as usize).max(8);
        Self { n_rho, n_theta }
    }
}

#[allow(non_snake_case)]
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub b: Vec3,
    pub t: Vec3,
    pub h: f64,
    pub r: f64,
    pub R: f64,
    pub mesh: CellMesh,
}

impl CellSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.r > 0.0 && self.r < self.R && self.R <= self.h && self.h.is_finite();
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "need 0 < r < R <= h, got r = {}, R = {}, h = {}",
                self.r, self.R, self.h
            )));
        }
        if self.mesh.n_rho < 8 || self.mesh.n_theta < 8 {
            return Err(Error::InvalidArgument(format!("mesh resolutions must be at least 8, got {:?}", self.mesh)));
        }
        if (self.t.norm() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument("direction must be a unit vector".into()));
        }
        if !self.b.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("Burgers vector".into()));
        }
        Ok(())
    }

    pub fn log_ratio(&self) -> f64 {
        (self.R / self.r).ln()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { h: self.h * k, r: self.r * k, R: self.R * k, ..*self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Relative reduction of the gradient norm that counts as converged.
    pub grad_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iter: 60, grad_tol: 1e-9 }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct NonlinearCellSpec {
    pub base: CellSpec,
    #[serde(skip)]
    pub q: Rotation,
    pub lambda: f64,
    pub solver: SolverOptions,
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct CellDiagnostics {
    pub constraint_residual: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Observed `|value − Ψ₀|` at this `(r/R, h/R)`.
    pub modulus: f64,
    pub rigidity_ratio: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct CellSolution {
    /// Nodal potential, ring-major (`i * n_theta + j`).
    pub u: Vec<Vec3>,
    pub c: Vec3,
    /// Strain samples with area weights (nonlinear problems only).
    pub field: Option<SampledField>,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub value: f64,
    /// `Ψ₀` of the same Burgers vector (`Qᵀb` for the nonlinear problem).
    pub psi0: f64,
    pub diagnostics: CellDiagnostics,
    pub solution: CellSolution,
}

/// Elastic tensor `ℂ = D²W(I)`; exact for the prototype energy.
pub fn linearized_tensor(model: &EnergyModel) -> Result<ElasticTensor> {
    match model {
        EnergyModel::DistSquared { scale } => Ok(ElasticTensor::isotropic(*scale, 0.0)),
        _ => crate::elasticity::hessian_at_identity(model, 1e-4),
    }
}

fn tensor_to_mat9(c: &ElasticTensor) -> Mat9 {
    let mut m = Mat9::zeros();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    m[(flat(i, j), flat(k, l))] = c.get(i, j, k, l);
                }
            }
        }
    }
    m
}

const GAUSS2: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

struct GaussPoint {
    s: f64,
    weight: f64,
    a: Mat3,
    /// Gradient vectors of the four bilinear shape functions.
    d: [Vec3; 4],
    /// Gradient vector of the axial constant.
    dc: Vec3,
}

struct Discretization {
    n_s: usize,
    n_t: usize,
    /// Gauss points grouped by cell in ring-major cell order.
    gauss: Vec<GaussPoint>,
    perm: Vec<usize>,
}

impl Discretization {
    fn new(spec: &CellSpec, profile: &AngularProfile, lift: &Mat3) -> Self {
        let (n_s, n_t) = (spec.mesh.n_rho, spec.mesh.n_theta);
        let l = spec.log_ratio();
        let (ds, dt) = (l / n_s as f64, std::f64::consts::TAU / n_t as f64);
        let m = profile.frame.matrix();
        let (e1, e2, t): (Vec3, Vec3, Vec3) = (m.column(0).into(), m.column(1).into(), m.column(2).into());
        let mut gauss = Vec::with_capacity(4 * n_s * n_t);
        for i in 0..n_s {
            for j in 0..n_t {
                for &xi in &GAUSS2 {
                    for &et in &GAUSS2 {
                        let s = (i as f64 + xi) * ds;
                        let theta = (j as f64 + et) * dt;
                        let (sn, cs) = theta.sin_cos();
                        let er = e1 * cs + e2 * sn;
                        let eth = e2 * cs - e1 * sn;
                        let a = lift * (profile.g * er.transpose() + profile.f_at(theta) * eth.transpose());
                        // local nodes: (i,j), (i+1,j), (i,j+1), (i+1,j+1)
                        let dn = |dxi: f64, deta: f64| er * (dxi / ds) + eth * (deta / dt);
                        let d = [
                            dn(-(1.0 - et), -(1.0 - xi)),
                            dn(1.0 - et, -xi),
                            dn(-et, 1.0 - xi),
                            dn(et, xi),
                        ];
                        gauss.push(GaussPoint {
                            s,
                            weight: 0.25 * ds * dt / l,
                            a,
                            d,
                            dc: t * (s - l).exp(),
                        });
                    }
                }
            }
        }
        let perm = (0..n_t).map(|j| if 2 * j < n_t { 2 * j } else { 2 * (n_t - j) - 1 }).collect();
        Self { n_s, n_t, gauss, perm }
    }

    fn n_nodes(&self) -> usize {
        (self.n_s + 1) * self.n_t
    }

    /// Ring-major storage index of node `(i, j)`.
    fn node(&self, i: usize, j: usize) -> usize {
        i * self.n_t + (j % self.n_t)
    }

    /// Position of node `(i, j)` in the banded ordering; node 0 is pinned.
    fn band_index(&self, node: usize) -> Option<usize> {
        let (i, j) = (node / self.n_t, node % self.n_t);
        let k = i * self.n_t + self.perm[j];
        if k == 0 {
            None
        } else {
            Some(k - 1)
        }
    }

    fn cell_nodes(&self, cell: usize) -> [usize; 4] {
        let (i, j) = (cell / self.n_t, cell % self.n_t);
        [self.node(i, j), self.node(i + 1, j), self.node(i, j + 1), self.node(i + 1, j + 1)]
    }

    fn strain(&self, gp: &GaussPoint, nodes: &[usize; 4], u: &[Vec3], c: &Vec3) -> Mat3 {
        let mut h = gp.a + c * gp.dc.transpose();
        for k in 0..4 {
            h += u[nodes[k]] * gp.d[k].transpose();
        }
        h
    }
}

enum Integrand<'a> {
    Quadratic(Mat9),
    Nonlinear { model: &'a EnergyModel, q: Mat3, lambda: f64 },
}

impl Integrand<'_> {
    /// Value, gradient and Hessian of the integrand in `H` at log-radius `s`.
    fn eval(&self, h: &Mat3, s: f64, project: bool) -> (f64, Mat3, Mat9) {
        match self {
            Integrand::Quadratic(c) => {
                let hv = nalgebra::SVector::<f64, 9>::from_row_slice(&crate::elasticity::to_flat(h));
                let ch = c * hv;
                (0.5 * hv.dot(&ch), Mat3::from_row_slice(ch.as_slice()), *c)
            }
            Integrand::Nonlinear { model, q, lambda } => {
                let es = (-s).exp();
                let beta = q + h * es;
                let (w, dw, d2w) = match (model, project) {
                    (EnergyModel::DistSquared { scale }, false) => {
                        let svd = SignedSvd::new(&beta);
                        let r = svd.rotation();
                        let value = scale * svd.s.iter().map(|x| (x - 1.0).powi(2)).sum::<f64>();
                        (value, (beta - r) * (2.0 * scale), dist_sq_hessian(&svd, false) * *scale)
                    }
                    _ => model.local_quadratic(&beta),
                };
                let value = w / (es * es) + lambda * h.norm_squared();
                let grad = dw / es + h * (2.0 * lambda);
                let hess = d2w + Mat9::identity() * (2.0 * lambda);
                (value, grad, hess)
            }
        }
    }

    fn value(&self, h: &Mat3, s: f64) -> f64 {
        match self {
            Integrand::Quadratic(_) => self.eval(h, s, false).0,
            Integrand::Nonlinear { model, q, lambda } => {
                let es = (-s).exp();
                model.value(&(q + h * es)) / (es * es) + lambda * h.norm_squared()
            }
        }
    }
}

/// Local 15×15 block: four nodes then the axial constant.
type CellBlock = nalgebra::SMatrix<f64, 15, 15>;
type CellVec = nalgebra::SVector<f64, 15>;

struct Assembled {
    energy: f64,
    grad: Vec<f64>,
    grad_c: Vec3,
    system: Option<(SymBanded, Vec<Vec<f64>>, DMatrix<f64>)>,
}

fn cell_contribution(
    disc: &Discretization,
    integrand: &Integrand,
    cell: usize,
    u: &[Vec3],
    c: &Vec3,
    want_hessian: bool,
    project: bool,
) -> (f64, CellVec, Option<CellBlock>) {
    let nodes = disc.cell_nodes(cell);
    let mut e = 0.0;
    let mut g = CellVec::zeros();
    let mut k = if want_hessian { Some(CellBlock::zeros()) } else { None };
    for gp in &disc.gauss[4 * cell..4 * cell + 4] {
        let h = disc.strain(gp, &nodes, u, c);
        let (phi, dphi, d2phi) = if want_hessian {
            integrand.eval(&h, gp.s, project)
        } else {
            let (v, gr, _) = integrand.eval(&h, gp.s, true);
            (v, gr, Mat9::zeros())
        };
        e += gp.weight * phi;
        let ds: [Vec3; 5] = [gp.d[0], gp.d[1], gp.d[2], gp.d[3], gp.dc];
        for a in 0..5 {
            let ga = dphi * ds[a] * gp.weight;
            for i in 0..3 {
                g[3 * a + i] += ga[i];
            }
        }
        if let Some(k) = k.as_mut() {
            // T_a[i][(k,l)] = Σ_j D²φ[(i,j),(k,l)] d_a[j]
            for a in 0..5 {
                let mut ta = [[0.0; 9]; 3];
                for i in 0..3 {
                    for kl in 0..9 {
                        ta[i][kl] = (0..3).map(|j| d2phi[(flat(i, j), kl)] * ds[a][j]).sum();
                    }
                }
                for b in 0..5 {
                    for i in 0..3 {
                        for kk in 0..3 {
                            let v: f64 = (0..3).map(|l| ta[i][flat(kk, l)] * ds[b][l]).sum();
                            k[(3 * a + i, 3 * b + kk)] += gp.weight * v;
                        }
                    }
                }
            }
        }
    }
    (e, g, k)
}

fn assemble(
    disc: &Discretization,
    integrand: &Integrand,
    u: &[Vec3],
    c: &Vec3,
    want_hessian: bool,
    project: bool,
) -> Assembled {
    let n_cells = disc.n_s * disc.n_t;
    let parts: Vec<(f64, CellVec, Option<CellBlock>)> = (0..n_cells)
        .into_par_iter()
        .map(|cell| cell_contribution(disc, integrand, cell, u, c, want_hessian, project))
        .collect();
    let n = 3 * (disc.n_nodes() - 1);
    let bw = 3 * (disc.n_t + 2) + 2;
    let mut grad = vec![0.0; n];
    let mut grad_c = Vec3::zeros();
    let mut system = want_hessian.then(|| (SymBanded::new(n, bw), vec![vec![0.0; n]; 3], DMatrix::zeros(3, 3)));
    let energies: Vec<f64> = parts.iter().map(|p| p.0).collect();
    for (cell, (_, g, k)) in parts.into_iter().enumerate() {
        let nodes = disc.cell_nodes(cell);
        let idx: [Option<usize>; 4] = nodes.map(|nd| disc.band_index(nd));
        for a in 0..4 {
            if let Some(p) = idx[a] {
                for i in 0..3 {
                    grad[3 * p + i] += g[3 * a + i];
                }
            }
        }
        for i in 0..3 {
            grad_c[i] += g[12 + i];
        }
        if let (Some(k), Some((band, border, corner))) = (k, system.as_mut()) {
            for a in 0..4 {
                let Some(p) = idx[a] else { continue };
                for b in 0..4 {
                    let Some(q) = idx[b] else { continue };
                    if q > p {
                        continue;
                    }
                    for i in 0..3 {
                        for kk in 0..3 {
                            let (ri, ci) = (3 * p + i, 3 * q + kk);
                            if ci <= ri {
                                band.add(ri, ci, k[(3 * a + i, 3 * b + kk)]);
                            }
                        }
                    }
                }
                for i in 0..3 {
                    for kk in 0..3 {
                        border[kk][3 * p + i] += k[(3 * a + i, 12 + kk)];
                    }
                }
            }
            for i in 0..3 {
                for kk in 0..3 {
                    corner[(i, kk)] += k[(12 + i, 12 + kk)];
                }
            }
        }
    }
    Assembled { energy: pairwise_sum(&energies), grad, grad_c, system }
}

fn energy_only(disc: &Discretization, integrand: &Integrand, u: &[Vec3], c: &Vec3) -> f64 {
    let n_cells = disc.n_s * disc.n_t;
    let parts: Vec<f64> = (0..n_cells)
        .into_par_iter()
        .map(|cell| {
            let nodes = disc.cell_nodes(cell);
            disc.gauss[4 * cell..4 * cell + 4]
                .iter()
                .map(|gp| gp.weight * integrand.value(&disc.strain(gp, &nodes, u, c), gp.s))
                .sum()
        })
        .collect();
    pairwise_sum(&parts)
}

struct NewtonOutcome {
    u: Vec<Vec3>,
    c: Vec3,
    energy: f64,
    iterations: usize,
    gradient_norm: f64,
}

fn newton(
    disc: &Discretization,
    integrand: &Integrand,
    mut u: Vec<Vec3>,
    mut c: Vec3,
    opts: &SolverOptions,
) -> Result<NewtonOutcome> {
    let mut g0: Option<f64> = None;
    for it in 0..=opts.max_iter {
        let mut asm = assemble(disc, integrand, &u, &c, true, false);
        let gnorm = (asm.grad.iter().map(|x| x * x).sum::<f64>() + asm.grad_c.norm_squared()).sqrt();
        if !gnorm.is_finite() || !asm.energy.is_finite() {
            return Err(Error::NonFinite("cell energy or gradient".into()));
        }
        let g0v = *g0.get_or_insert(gnorm);
        if gnorm == 0.0 || gnorm <= opts.grad_tol * g0v && it > 0 {
            return Ok(NewtonOutcome { u, c, energy: asm.energy, iterations: it, gradient_norm: gnorm });
        }
        if it == opts.max_iter {
            break;
        }
        let neg_g: Vec<f64> = asm.grad.iter().map(|x| -x).collect();
        let neg_gc = [-asm.grad_c.x, -asm.grad_c.y, -asm.grad_c.z];
        let (band, border, corner) = asm.system.take().expect("hessian requested");
        let step = match solve_bordered(band.clone(), &border, &corner, &neg_g, &neg_gc) {
            Ok(s) => s,
            Err(_) => {
                // fall back to positive semidefinite element Hessians plus a small shift
                let asm_p = assemble(disc, integrand, &u, &c, true, true);
                let (mut band, border, mut corner) = asm_p.system.expect("hessian requested");
                let shift = 1e-10 * band.max_diagonal().max(1e-300);
                band.shift_diagonal(shift);
                for i in 0..3 {
                    corner[(i, i)] += shift;
                }
                solve_bordered(band, &border, &corner, &neg_g, &neg_gc)?
            }
        };
        let (du, dc) = step;
        let slope: f64 = du.iter().zip(&asm.grad).map(|(a, b)| a * b).sum::<f64>()
            + (0..3).map(|i| dc[i] * asm.grad_c[i]).sum::<f64>();
        if slope >= 0.0 {
            return Err(Error::LineSearch(format!("non-descent Newton direction (slope {slope:e})")));
        }
        // Newton decrement at round-off level: nothing left to gain
        if -slope <= 1e-15 * asm.energy.abs().max(f64::MIN_POSITIVE) {
            return Ok(NewtonOutcome { u, c, energy: asm.energy, iterations: it, gradient_norm: gnorm });
        }
        let trial = |alpha: f64| {
            let mut ut = u.clone();
            for (node, val) in ut.iter_mut().enumerate() {
                if let Some(p) = disc.band_index(node) {
                    *val += Vec3::new(du[3 * p], du[3 * p + 1], du[3 * p + 2]) * alpha;
                }
            }
            let ct = c + Vec3::new(dc[0], dc[1], dc[2]) * alpha;
            (ut, ct)
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let (ut, ct) = trial(alpha);
            let e = energy_only(disc, integrand, &ut, &ct);
            if e.is_finite() && e <= asm.energy + 1e-4 * alpha * slope {
                u = ut;
                c = ct;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::LineSearch(format!("Armijo backtracking failed at iteration {it}")));
        }
    }
    Err(Error::NonConvergence(format!("Newton did not converge in {} iterations", opts.max_iter)))
}

fn profile_resolution(mesh: &CellMesh) -> usize {
    let n = (4 * mesh.n_theta).max(256);
    n + n % 2
}

fn ring_circulation_residual(disc: &Discretization, u: &[Vec3], profile: &AngularProfile, target: &Vec3) -> f64 {
    let base = (profile.circulation() - target).norm();
    (0..=disc.n_s)
        .map(|i| {
            let tele: Vec3 = (0..disc.n_t).map(|j| u[disc.node(i, j + 1)] - u[disc.node(i, j)]).sum();
            base + tele.norm()
        })
        .fold(0.0, f64::max)
}

/// Linear cell problem `Ψ(b, t, h, r, R)`.
pub fn solve_linear_cell(spec: &CellSpec, c: &ElasticTensor) -> Result<CellResult> {
    spec.validate()?;
    c.ensure_positive_definite()?;
    let se = solve_self_energy(c, &spec.b, &spec.t, profile_resolution(&spec.mesh))?;
    let disc = Discretization::new(spec, &se.profile, &Mat3::identity());
    let integrand = Integrand::Quadratic(tensor_to_mat9(c));
    let opts = SolverOptions { max_iter: 3, grad_tol: 1e-9 };
    let out = newton(&disc, &integrand, vec![Vec3::zeros(); disc.n_nodes()], Vec3::zeros(), &opts)?;
    let residual = ring_circulation_residual(&disc, &out.u, &se.profile, &spec.b);
    let value = out.energy.max(0.0);
    Ok(CellResult {
        value,
        psi0: se.value,
        diagnostics: CellDiagnostics {
            constraint_residual: residual,
            iterations: out.iterations,
            gradient_norm: out.gradient_norm,
            modulus: (value - se.value).abs(),
            rigidity_ratio: None,
        },
        solution: CellSolution { u: out.u, c: out.c, field: None },
    })
}

/// Nonlinear cell problem `Ψ_λ^{nl}(Q, b, t, h, r, R)` over axially
/// invariant competitors, starting from the minimizer of its linearization
/// at `Q`.
pub fn solve_nonlinear_cell(spec: &NonlinearCellSpec, model: &EnergyModel) -> Result<CellResult> {
    let base = &spec.base;
    base.validate()?;
    if !(spec.lambda >= 0.0) || !spec.lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("penalty weight must be nonnegative, got {}", spec.lambda)));
    }
    let c = linearized_tensor(model)?;
    let q = *spec.q.matrix();
    let b_local = q.transpose() * base.b;
    let se = solve_self_energy(&c, &b_local, &base.t, profile_resolution(&base.mesh))?;
    let disc = Discretization::new(base, &se.profile, &q);
    let (_, _, hq) = model.local_quadratic(&q);
    let lin = Integrand::Quadratic(hq + Mat9::identity() * (2.0 * spec.lambda));
    let start = newton(&disc, &lin, vec![Vec3::zeros(); disc.n_nodes()], Vec3::zeros(), &SolverOptions { max_iter: 3, grad_tol: 1e-9 })?;
    let integrand = Integrand::Nonlinear { model, q, lambda: spec.lambda };
    let out = newton(&disc, &integrand, start.u, start.c, &spec.solver)?;
    let residual = ring_circulation_residual(&disc, &out.u, &se.profile, &b_local);
    // physical strain samples with area weights ρ² ds dθ (up to the factor r²)
    let mut field = SampledField::default();
    for cell in 0..disc.n_s * disc.n_t {
        let nodes = disc.cell_nodes(cell);
        for gp in &disc.gauss[4 * cell..4 * cell + 4] {
            let h = disc.strain(gp, &nodes, &out.u, &out.c);
            field.push(q + h * (-gp.s).exp(), gp.weight * (2.0 * gp.s).exp());
        }
    }
    let rigidity = best_fit_rotation_ratio(&field).ok().map(|(_, r)| r);
    let value = out.energy.max(0.0);
    Ok(CellResult {
        value,
        psi0: se.value,
        diagnostics: CellDiagnostics {
            constraint_residual: residual,
            iterations: out.iterations,
            gradient_norm: out.gradient_norm,
            modulus: (value - se.value).abs(),
            rigidity_ratio: rigidity,
        },
        solution: CellSolution { u: out.u, c: out.c, field: Some(field) },
    })
}

/// Energy density `½ℂH:H` summed over the fixed profile alone (`u = 0`, `c = 0`).
pub fn profile_cell_energy(spec: &CellSpec, c: &ElasticTensor) -> Result<f64> {
    spec.validate()?;
    let se = solve_self_energy(c, &spec.b, &spec.t, profile_resolution(&spec.mesh))?;
    let disc = Discretization::new(spec, &se.profile, &Mat3::identity());
    Ok(energy_only(&disc, &Integrand::Quadratic(tensor_to_mat9(c)), &vec![Vec3::zeros(); disc.n_nodes()], &Vec3::zeros()))
}

#[allow(non_snake_case)]
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub r_over_R: f64,
    pub h_over_R: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug)]
pub struct CellScanConfig {
    pub b: Vec3,
    pub t: Vec3,
    pub q: Rotation,
    pub tensor: ElasticTensor,
    pub model: EnergyModel,
    /// Nested schedule: `r/R` decreasing, `h/R` increasing, `λ` decreasing.
    pub points: Vec<ScanPoint>,
    pub cells_per_decade: usize,
    pub n_theta: usize,
    pub solver: SolverOptions,
    pub nonlinear: bool,
}

#[allow(non_snake_case)]
#[derive(Clone, Debug, Serialize)]
pub struct CellScanRow {
    pub kind: String,
    pub r_over_R: f64,
    pub h_over_R: f64,
    pub lambda: f64,
    pub value: f64,
    pub gap_to_psi0: f64,
    pub constraint_residual: f64,
    pub iterations: usize,
    pub rigidity_ratio: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CellScanReport {
    pub rows: Vec<CellScanRow>,
    pub psi0_linear: f64,
    pub psi0_nonlinear: f64,
    /// Last gap below the first, for each problem kind.
    pub linear_gap_decreasing: bool,
    pub nonlinear_gap_decreasing: bool,
    /// `c∗ = min Ψ / |b|²` over the linear rows.
    pub c_star: f64,
    /// Observed moduli `ω_M(r/R)` as `(h/R, r/R, gap)` of the linear rows.
    pub moduli: Vec<(f64, f64, f64)>,
}

fn nonincreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

/// Runs the linear (and optionally nonlinear) cell problem along a nested schedule.
pub fn cell_convergence_scan(cfg: &CellScanConfig) -> Result<CellScanReport> {
    let rs: Vec<f64> = cfg.points.iter().map(|p| p.r_over_R).collect();
    let hs: Vec<f64> = cfg.points.iter().map(|p| p.h_over_R).collect();
    let ls: Vec<f64> = cfg.points.iter().map(|p| p.lambda).collect();
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
    if !nonincreasing(&rs) || !nonincreasing(&neg(&hs)) || !nonincreasing(&ls) {
        return Err(Error::InvalidArgument("schedule must have r decreasing, h increasing, lambda decreasing".into()));
    }
    let spec_for = |p: &ScanPoint| CellSpec {
        b: cfg.b,
        t: cfg.t,
        h: p.h_over_R,
        r: p.r_over_R,
        R: 1.0,
        mesh: CellMesh::per_decade(cfg.cells_per_decade, p.r_over_R, cfg.n_theta),
    };
    let linear: Vec<Result<CellResult>> = cfg.points.par_iter().map(|p| solve_linear_cell(&spec_for(p), &cfg.tensor)).collect();
    let nonlinear: Vec<Result<CellResult>> = if cfg.nonlinear {
        cfg.points
            .par_iter()
            .map(|p| {
                solve_nonlinear_cell(
                    &NonlinearCellSpec { base: spec_for(p), q: cfg.q, lambda: p.lambda, solver: cfg.solver },
                    &cfg.model,
                )
            })
            .collect()
    } else {
        Vec::new()
    };
    let mut rows = Vec::new();
    let (mut psi0_lin, mut psi0_nl) = (f64::NAN, f64::NAN);
    let mut lin_gaps = Vec::new();
    let mut nl_gaps = Vec::new();
    let mut c_star = f64::INFINITY;
    let mut moduli = Vec::new();
    let b2 = cfg.b.norm_squared();
    for (p, res) in cfg.points.iter().zip(linear) {
        let res = res?;
        psi0_lin = res.psi0;
        let gap = (res.value - res.psi0).abs();
        lin_gaps.push(gap);
        moduli.push((p.h_over_R, p.r_over_R, gap));
        if b2 > 0.0 {
            c_star = c_star.min(res.value / b2);
        }
        rows.push(CellScanRow {
            kind: "linear".into(),
            r_over_R: p.r_over_R,
            h_over_R: p.h_over_R,
            lambda: 0.0,
            value: res.value,
            gap_to_psi0: gap,
            constraint_residual: res.diagnostics.constraint_residual,
            iterations: res.diagnostics.iterations,
            rigidity_ratio: None,
        });
    }
    for (p, res) in cfg.points.iter().zip(nonlinear) {
        let res = res?;
        psi0_nl = res.psi0;
        let gap = (res.value - res.psi0).abs();
        nl_gaps.push(gap);
        rows.push(CellScanRow {
            kind: "nonlinear".into(),
            r_over_R: p.r_over_R,
            h_over_R: p.h_over_R,
            lambda: p.lambda,
            value: res.value,
            gap_to_psi0: gap,
            constraint_residual: res.diagnostics.constraint_residual,
            iterations: res.diagnostics.iterations,
            rigidity_ratio: res.diagnostics.rigidity_ratio,
        });
    }
    let trend = |g: &[f64]| g.len() < 2 || g.iter().all(|x| *x == 0.0) || g[g.len() - 1] < g[0];
    Ok(CellScanReport {
        linear_gap_decreasing: trend(&lin_gaps),
        nonlinear_gap_decreasing: trend(&nl_gaps),
        rows,
        psi0_linear: psi0_lin,
        psi0_nonlinear: psi0_nl,
        c_star: if c_star.is_finite() { c_star } else { 0.0 },
        moduli,
    })
}

/// Inputs of the uniform lower bounds: fitted `c∗`, constant `C`, modulus `ω`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LowerBoundInputs {
    pub c_star: f64,
    pub big_c: f64,
    pub omega: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BoundReport {
    /// `(1 − R/h) c∗ |b|²`.
    pub growth_bound: f64,
    pub growth_margin: f64,
    /// `Ψ₀ − C K²/M − ω`.
    pub limit_bound: f64,
    pub limit_margin: f64,
    pub ok: bool,
}

/// Checks `value ≥ (1 − R/h) c∗ |b|²` and `value ≥ Ψ₀ − CK²/M − ω`.
pub fn lower_bound_certificates(
    result: &CellResult,
    spec: &CellSpec,
    k: f64,
    m: f64,
    inputs: &LowerBoundInputs,
) -> BoundReport {
    let growth_bound = (1.0 - spec.R / spec.h) * inputs.c_star * spec.b.norm_squared();
    let limit_bound = result.psi0 - inputs.big_c * k * k / m - inputs.omega;
    let growth_margin = result.value - growth_bound;
    let limit_margin = result.value - limit_bound;
    BoundReport {
        growth_bound,
        growth_margin,
        limit_bound,
        limit_margin,
        ok: growth_margin >= -1e-12 && limit_margin >= -1e-12,
    }
}

/// Rigidity ratio `‖β − Q̄‖ / ‖dist(β, SO(3))‖` of a converged nonlinear minimizer.
pub fn rigidity_diagnostic(result: &CellResult) -> Option<f64> {
    result.diagnostics.rigidity_ratio
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(b: Vec3, r: f64, mesh: CellMesh) -> CellSpec {
        CellSpec { b, t: Vec3::z(), h: 8.0, r, R: 1.0, mesh }
    }

    #[test]
    fn zero_burgers_is_zero() {
        let c = ElasticTensor::isotropic_poisson(1.0, 0.3);
        let r = solve_linear_cell(&spec(Vec3::zeros(), 0.1, CellMesh { n_rho: 8, n_theta: 16 }), &c).unwrap();
        assert_eq!(r.value, 0.0);
        let nl = solve_nonlinear_cell(
            &NonlinearCellSpec { base: spec(Vec3::zeros(), 0.1, CellMesh { n_rho: 8, n_theta: 16 }), q: Rotation::identity(), lambda: 0.0, solver: SolverOptions::default() },
            &EnergyModel::prototype(),
        )
        .unwrap();
        assert_eq!(nl.value, 0.0);
        let field = nl.solution.field.unwrap();
        assert!(field.values.iter().all(|b| (b - Mat3::identity()).norm() < 1e-14));
    }

    #[test]
    fn linear_cell_below_profile_energy_and_psi0() {
        let c = ElasticTensor::isotropic_poisson(1.0, 0.3);
        let s = spec(Vec3::x(), 1e-2, CellMesh { n_rho: 24, n_theta: 32 });
        let r = solve_linear_cell(&s, &c).unwrap();
        let fixed = profile_cell_energy(&s, &c).unwrap();
        assert!(r.value <= fixed);
        assert!(r.value <= r.psi0 * 1.02);
        assert!(r.value > 0.5 * r.psi0);
        assert!(r.diagnostics.constraint_residual < 1e-8);
        assert_relative_eq!(fixed, r.psi0, max_relative = 1e-6);
    }

    #[test]
    fn linear_scaling_invariance() {
        let c = ElasticTensor::cubic(1.7, 1.2, 0.75);
        let s = CellSpec { b: Vec3::new(1.0, 0.0, 1.0), t: Vec3::new(0.0, 0.6, 0.8), h: 4.0, r: 0.05, R: 1.0, mesh: CellMesh { n_rho: 12, n_theta: 16 } };
        let a = solve_linear_cell(&s, &c).unwrap().value;
        let b = solve_linear_cell(&s.scaled(5.0), &c).unwrap().value;
        assert!((a - b).abs() <= 1e-9 * a);
    }

    #[test]
    fn linear_refinement_lowers_energy() {
        let c = ElasticTensor::isotropic_poisson(1.0, 0.3);
        let coarse = solve_linear_cell(&spec(Vec3::x(), 0.1, CellMesh { n_rho: 8, n_theta: 16 }), &c).unwrap().value;
        let fine = solve_linear_cell(&spec(Vec3::x(), 0.1, CellMesh { n_rho: 16, n_theta: 32 }), &c).unwrap().value;
        assert!(fine <= coarse + 1e-12, "{fine} > {coarse}");
    }

    #[test]
    fn nonlinear_identities() {
        let model = EnergyModel::prototype();
        let mesh = CellMesh { n_rho: 8, n_theta: 16 };
        let b = Vec3::new(1.0, 0.0, 0.0);
        let q = Rotation::from_axis_angle(&Vec3::new(1.0, 2.0, 3.0), 0.7).unwrap();
        let base = CellSpec { b, t: Vec3::z(), h: 8.0, r: 0.1, R: 1.0, mesh };
        let s = NonlinearCellSpec { base, q, lambda: 0.1, solver: SolverOptions::default() };
        let v = solve_nonlinear_cell(&s, &model).unwrap();
        let rotated = NonlinearCellSpec { base: CellSpec { b: q.matrix().transpose() * b, ..base }, q: Rotation::identity(), ..s };
        let vi = solve_nonlinear_cell(&rotated, &model).unwrap();
        assert!((v.value - vi.value).abs() <= 1e-8 * v.value, "{} vs {}", v.value, vi.value);
        let scaled = NonlinearCellSpec { base: base.scaled(3.0), ..s };
        let vs = solve_nonlinear_cell(&scaled, &model).unwrap();
        assert!((v.value - vs.value).abs() <= 1e-8 * v.value);
        let more = NonlinearCellSpec { lambda: 1.0, ..s };
        assert!(solve_nonlinear_cell(&more, &model).unwrap().value >= v.value);
        assert!(v.diagnostics.constraint_residual < 1e-8);
    }

    #[test]
    fn invalid_specs() {
        let c = ElasticTensor::isotropic_poisson(1.0, 0.3);
        let bad = CellSpec { b: Vec3::x(), t: Vec3::z(), h: 0.5, r: 0.1, R: 1.0, mesh: CellMesh { n_rho: 8, n_theta: 8 } };
        assert!(solve_linear_cell(&bad, &c).is_err());
        let coarse = CellSpec { h: 2.0, mesh: CellMesh { n_rho: 4, n_theta: 8 }, ..bad };
        assert!(solve_linear_cell(&coarse, &c).is_err());
    }
}
