//! Kernel strain fields of polyhedral dislocation measures, recovery strains
//! and the rescaled energies `F_ε` and `F₀`.
//!
//! The incompatible field of a measure `μ = Σ b ⊗ t H¹⌞γ` is the solution of
//! `div η = 0`, `curl η = μ`; for a straight segment it is `b ⊗ B` with the
//! Biot–Savart field `B(x) = (4π)⁻¹ ∫_γ t × (x − y) / |x − y|³ dy`, which has
//! a closed form. Recovery strains glue this far field to the optimal
//! straight-dislocation profile inside thin tubes around every segment.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dislocations::{
    check_dilute, frank_rule_residual, schedule_admissible, BurgersLattice, Domain, Mollifier, PolyhedralMeasure,
    ScaleSchedule, Segment,
};
use crate::elasticity::{sym, ElasticTensor, EnergyModel, Mat3, Rotation, Vec3};
use crate::envelope::{relax_envelope, DirectionGrid, EnvelopeTable, Psi0Table};
use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre, pairwise_sum};
use crate::selfenergy::{solve_self_energy, AngularProfile};

/// Straight line piece with a Cartesian Burgers vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub start: Vec3,
    pub end: Vec3,
    pub b: Vec3,
}

impl Line {
    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    pub fn tangent(&self) -> Vec3 {
        (self.end - self.start) / self.length()
    }

    fn as_segment(&self) -> Segment {
        Segment { start: self.start, end: self.end, burgers: Vec3::zeros() }
    }
}

/// Lines of a measure with Cartesian Burgers vectors; segments with zero
/// Burgers vector are dropped.
pub fn measure_lines(measure: &PolyhedralMeasure) -> Vec<Line> {
    measure
        .segments
        .iter()
        .map(|s| Line { start: s.start, end: s.end, b: measure.burgers_of(s) })
        .filter(|l| l.b.norm() > 0.0)
        .collect()
}

/// Biot–Savart vector of a unit-strength segment at `x`, regularized by the
/// core parameter `a` (`a = 0` gives the exact field).
fn biot_savart(start: &Vec3, end: &Vec3, x: &Vec3, a: f64) -> Result<Vec3> {
    let d = end - start;
    let len = d.norm();
    let t = d / len;
    let p = x - start;
    let e = t.cross(&p);
    let perp2 = e.norm_squared();
    let s0 = p.dot(&t);
    let (u1, u2) = (s0 - len, s0);
    let scale = len.max(p.norm());
    if a == 0.0 && perp2 <= (1e-12 * scale).powi(2) && u1 <= 0.0 && u2 >= 0.0 {
        return Err(Error::OnLine(format!("kernel field evaluated on a segment at {:?}", x.as_slice())));
    }
    let dd = perp2 + a * a;
    let (r1, r2) = ((dd + u1 * u1).sqrt(), (dd + u2 * u2).sqrt());
    // u2/r2 − u1/r1 without cancellation when u1 and u2 share a sign
    let bracket_over_dd = if u1 * u2 > 0.0 {
        (u2 * u2 - u1 * u1) / (r1 * r2 * (u2 * r1 + u1 * r2))
    } else {
        (u2 / r2 - u1 / r1) / dd
    };
    Ok(e * (bracket_over_dd / (4.0 * PI)))
}

/// Closed-form kernel field `η = b ⊗ B` of one segment with Cartesian
/// Burgers vector `b`; its circulation around the segment is `+b`.
pub fn segment_kernel_field(seg: &Segment, b: &Vec3, x: &Vec3) -> Result<Mat3> {
    Ok(b * biot_savart(&seg.start, &seg.end, x, 0.0)?.transpose())
}

/// Kernel field `η = (−Δ)⁻¹ curl μ` of a polyhedral measure.
#[derive(Clone, Debug)]
pub struct KernelField {
    pub lines: Vec<Line>,
}

impl KernelField {
    pub fn new(measure: &PolyhedralMeasure) -> Self {
        Self { lines: measure_lines(measure) }
    }

    pub fn from_lines(lines: Vec<Line>) -> Self {
        Self { lines }
    }

    pub fn eval(&self, x: &Vec3) -> Result<Mat3> {
        let mut out = Mat3::zeros();
        for l in &self.lines {
            out += l.b * biot_savart(&l.start, &l.end, x, 0.0)?.transpose();
        }
        Ok(out)
    }

    pub fn eval_many(&self, points: &[Vec3]) -> Result<Vec<Mat3>> {
        points.par_iter().map(|x| self.eval(x)).collect()
    }

    /// Smallest distance from `x` to the support.
    pub fn distance(&self, x: &Vec3) -> f64 {
        self.lines.iter().map(|l| l.as_segment().distance_to_point(x)).fold(f64::INFINITY, f64::min)
    }

    /// `|μ|(ℝ³) = Σ |b| H¹(γ)`.
    pub fn total_variation(&self) -> f64 {
        self.lines.iter().map(|l| l.b.norm() * l.length()).sum()
    }
}

/// Line integral `∮ η dx` along a closed polygonal path, Gauss–Legendre of
/// order `order` on each edge.
pub fn path_circulation<F>(field: F, path: &[Vec3], order: usize) -> Result<Vec3>
where
    F: Fn(&Vec3) -> Result<Mat3>,
{
    let (xs, ws) = gauss_legendre(order);
    let mut acc = Vec3::zeros();
    for k in 0..path.len() {
        let (a, b) = (path[k], path[(k + 1) % path.len()]);
        let d = b - a;
        for (x, w) in xs.iter().zip(&ws) {
            let p = a + d * (0.5 * (x + 1.0));
            acc += field(&p)? * d * (0.5 * w);
        }
    }
    Ok(acc)
}

/// Shapes of probe loops around a line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopShape {
    Circle,
    Square,
    /// Ellipse with axis ratio 2, rotated and tilted out of the normal plane.
    TiltedEllipse,
}

/// Closed path of `n` vertices encircling the line through `center` along
/// `t` once, counterclockwise about `t`.
pub fn probe_loop(center: &Vec3, t: &Vec3, radius: f64, shape: LoopShape, n: usize) -> Vec<Vec3> {
    let frame = crate::selfenergy::frame_for_direction(&t.normalize()).expect("unit direction");
    let m = frame.matrix();
    let (e1, e2, e3): (Vec3, Vec3, Vec3) = (m.column(0).into(), m.column(1).into(), m.column(2).into());
    match shape {
        LoopShape::Circle => (0..n)
            .map(|k| {
                let th = 2.0 * PI * k as f64 / n as f64;
                center + (e1 * th.cos() + e2 * th.sin()) * radius
            })
            .collect(),
        LoopShape::Square => vec![
            center + (e1 + e2) * radius,
            center + (e2 - e1) * radius,
            center - (e1 + e2) * radius,
            center + (e1 - e2) * radius,
        ],
        LoopShape::TiltedEllipse => (0..n)
            .map(|k| {
                let th = 2.0 * PI * k as f64 / n as f64;
                let (s, c) = th.sin_cos();
                let u = e1 * (0.6 * c) - e2 * (0.8 * c);
                let v = e1 * (0.8 * s) + e2 * (0.6 * s);
                center + (u * 2.0 + v + e3 * (0.7 * c + 0.3 * s)) * radius
            })
            .collect(),
    }
}

/// `C₁ = sup |η|·dist²/|μ|(ℝ³)` and `C₂ = sup |η| / Σ|bᵢ|/dist(x, γᵢ)` over probes.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct KernelEstimates {
    pub far: f64,
    pub near: f64,
    pub probes: usize,
}

pub fn kernel_estimates(field: &KernelField, probes: &[Vec3]) -> Result<KernelEstimates> {
    let mass = field.total_variation();
    let rows: Vec<(f64, f64)> = probes
        .par_iter()
        .map(|x| {
            let eta = field.eval(x)?.norm();
            let d = field.distance(x);
            let near: f64 = field.lines.iter().map(|l| l.b.norm() / l.as_segment().distance_to_point(x)).sum();
            Ok((eta * d * d / mass, eta / near))
        })
        .collect::<Result<_>>()?;
    let far = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let near = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    if !far.is_finite() || !near.is_finite() {
        return Err(Error::NonFinite("kernel estimate constants".into()));
    }
    Ok(KernelEstimates { far, near, probes: probes.len() })
}

/// Uniform probe grid of `n³` points in the box, skipping points within
/// `min_dist` of the support.
pub fn probe_grid(field: &KernelField, domain: &BoxDomain, n: usize, min_dist: f64) -> Vec<Vec3> {
    let mut out = Vec::new();
    let ext = domain.hi - domain.lo;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let f = |m: usize| (m as f64 + 0.5) / n as f64;
                let x = domain.lo + Vec3::new(ext.x * f(i), ext.y * f(j), ext.z * f(k));
                if field.distance(&x) > min_dist {
                    out.push(x);
                }
            }
        }
    }
    out
}

/// Affine strain `β(x) = β₀ + Σ_k x_k B_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothStrain {
    pub constant: Mat3,
    #[serde(default = "zero_gradient")]
    pub gradient: [Mat3; 3],
}

fn zero_gradient() -> [Mat3; 3] {
    [Mat3::zeros(); 3]
}

impl SmoothStrain {
    pub fn zero() -> Self {
        Self::constant(Mat3::zeros())
    }

    pub fn constant(m: Mat3) -> Self {
        Self { constant: m, gradient: zero_gradient() }
    }

    pub fn eval(&self, x: &Vec3) -> Mat3 {
        self.constant + self.gradient[0] * x.x + self.gradient[1] * x.y + self.gradient[2] * x.z
    }

    /// `|curl β|`, constant for an affine field.
    pub fn curl_norm(&self) -> f64 {
        let mut c = Mat3::zeros();
        for i in 0..3 {
            for m in 0..3 {
                let (j, k) = ((m + 1) % 3, (m + 2) % 3);
                c[(i, m)] = self.gradient[j][(i, k)] - self.gradient[k][(i, j)];
            }
        }
        c.norm()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Input {
            Full { constant: [[f64; 3]; 3], #[serde(default)] gradient: Option<[[[f64; 3]; 3]; 3]> },
            Bare([[f64; 3]; 3]),
        }
        let to_mat = |r: [[f64; 3]; 3]| Mat3::from_fn(|i, j| r[i][j]);
        let input: Input = serde_json::from_str(text)
            .map_err(|e| Error::Parse(format!("strain JSON at line {}, column {}: {e}", e.line(), e.column())))?;
        let out = match input {
            Input::Bare(c) => Self::constant(to_mat(c)),
            Input::Full { constant, gradient } => Self {
                constant: to_mat(constant),
                gradient: gradient.map(|g| g.map(to_mat)).unwrap_or_else(zero_gradient),
            },
        };
        if out.curl_norm() > 1e-12 {
            return Err(Error::InvalidArgument(format!("strain is not curl-free (|curl| = {:e})", out.curl_norm())));
        }
        Ok(out)
    }
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec3,
    pub hi: Vec3,
}

impl BoxDomain {
    pub fn new(lo: Vec3, hi: Vec3) -> Result<Self> {
        if !(0..3).all(|k| lo[k] < hi[k]) {
            return Err(Error::InvalidArgument("box corners must satisfy lo < hi".into()));
        }
        Ok(Self { lo, hi })
    }

    /// Box around a measure with margin `pad`.
    pub fn around(measure: &PolyhedralMeasure, pad: f64) -> Self {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for s in &measure.segments {
            for p in [s.start, s.end] {
                lo = lo.inf(&p);
                hi = hi.sup(&p);
            }
        }
        if measure.segments.is_empty() {
            lo = Vec3::zeros();
            hi = Vec3::zeros();
        }
        Self { lo: lo.add_scalar(-pad), hi: hi.add_scalar(pad) }
    }

    /// Box shrunk by `d` on every side (boundary-layer exclusion).
    pub fn inset(&self, d: f64) -> Result<Self> {
        Self::new(self.lo.add_scalar(d), self.hi.add_scalar(-d))
    }

    pub fn volume(&self) -> f64 {
        (self.hi - self.lo).product()
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        (0..3).all(|k| x[k] >= self.lo[k] && x[k] <= self.hi[k])
    }
}

struct Core {
    line: Line,
    tangent: Vec3,
    /// Slopes of the conical tube ends at the start and end node.
    slopes: [f64; 2],
    profile: AngularProfile,
}

/// `β_ε = Q (I + ε√|log ε| β + ε θ̂_ε)`, where `θ̂_ε` is the kernel field of
/// the lines (mollified at scale ε) glued inside tubes of radius `ρ` to the
/// mollified straight-dislocation profiles of `Qᵀb`.
pub struct RecoveryStrain {
    pub q: Rotation,
    pub beta: SmoothStrain,
    pub eps: f64,
    pub rho: f64,
    cores: Vec<Core>,
    mollifier: Mollifier,
    /// Fitted `C` in `|θ̂_ε(x)| ≤ C/(dist(x, γ) + ε)`.
    pub bound_constant: f64,
}

fn smooth_cutoff(q: f64) -> f64 {
    if q <= 0.5 {
        1.0
    } else if q >= 1.0 {
        0.0
    } else {
        let u = 2.0 * (q - 0.5);
        1.0 - u * u * (3.0 - 2.0 * u)
    }
}

/// Options shared by recovery assembly.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RecoveryOptions {
    /// Angular resolution of the straight-dislocation profiles.
    pub n_theta: usize,
    /// Near a node the tube radius is `min(ρ, κ s)` at distance `s` from the
    /// node, with `κ = cone_fraction · sin(θ/2)` and `θ` the smallest angle
    /// to another line at that node.
    pub cone_fraction: f64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self { n_theta: 128, cone_fraction: 0.5 }
    }
}

// smallest angle between the outgoing direction `dir` at node `p` and the
// other lines meeting there; π if the node is free
fn junction_angle(lines: &[Line], skip: usize, p: &Vec3, dir: &Vec3, tol: f64) -> f64 {
    let mut angle = PI;
    for (k, l) in lines.iter().enumerate() {
        if k == skip {
            continue;
        }
        for (q, out) in [(l.start, l.tangent()), (l.end, -l.tangent())] {
            if (q - p).norm() <= tol {
                angle = angle.min(dir.dot(&out).clamp(-1.0, 1.0).acos());
            }
        }
    }
    angle
}

/// Recovery strain of a closed measure, with the profiles computed for `ℂ`.
#[allow(clippy::too_many_arguments)]
pub fn assemble_recovery(
    measure: &PolyhedralMeasure,
    q: &Rotation,
    beta: &SmoothStrain,
    eps: f64,
    rho: f64,
    c: &ElasticTensor,
    options: &RecoveryOptions,
) -> Result<RecoveryStrain> {
    let residual = frank_rule_residual(measure);
    if residual > 1e-9 {
        return Err(Error::InvalidArgument(format!("measure is not closed (Frank residual {residual:e})")));
    }
    let qt = q.matrix().transpose();
    let lines: Vec<Line> = measure_lines(measure).into_iter().map(|l| Line { b: qt * l.b, ..l }).collect();
    assemble_recovery_lines(&lines, q, beta, eps, rho, c, options)
}

/// Same as [`assemble_recovery`] with lines given in the reference frame
/// (Burgers vectors already pulled back by `Qᵀ`).
#[allow(clippy::too_many_arguments)]
pub fn assemble_recovery_lines(
    lines: &[Line],
    q: &Rotation,
    beta: &SmoothStrain,
    eps: f64,
    rho: f64,
    c: &ElasticTensor,
    options: &RecoveryOptions,
) -> Result<RecoveryStrain> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("core scale must lie in (0, 1), got {eps}")));
    }
    if beta.curl_norm() > 1e-12 {
        return Err(Error::InvalidArgument("smooth strain is not curl-free".into()));
    }
    if !lines.is_empty() && !(rho >= 2.0 * eps) {
        return Err(Error::InvalidArgument(format!("gluing radius {rho} is below twice the core scale {eps}")));
    }
    let tol = 1e-9 * lines.iter().map(|l| l.start.norm().max(l.end.norm())).fold(1.0, f64::max);
    let mut cores = Vec::with_capacity(lines.len());
    for (i, l) in lines.iter().enumerate() {
        let t = l.tangent();
        let mut slopes = [0.0; 2];
        for (k, (p, dir)) in [(l.start, t), (l.end, -t)].into_iter().enumerate() {
            let angle = junction_angle(lines, i, &p, &dir, tol);
            if angle <= 1e-9 {
                return Err(Error::OverlappingCores(format!("line {i} is coincident with another line at a node")));
            }
            slopes[k] = options.cone_fraction * (0.5 * angle).sin();
        }
        let profile = solve_self_energy(c, &l.b, &t, options.n_theta)?.profile;
        cores.push(Core { line: *l, tangent: t, slopes, profile });
    }
    for i in 0..lines.len() {
        for j in 0..i {
            let (a, b) = (&lines[i], &lines[j]);
            let adjacent = [a.start, a.end].iter().any(|p| (p - b.start).norm() <= tol || (p - b.end).norm() <= tol);
            if adjacent {
                continue;
            }
            let d = a.as_segment().distance_to_segment(&b.as_segment());
            if d < 2.0 * rho {
                return Err(Error::OverlappingCores(format!("lines {i} and {j} are {d} apart, tube radius {rho}")));
            }
        }
    }
    let mut strain = RecoveryStrain {
        q: *q,
        beta: *beta,
        eps,
        rho,
        cores,
        mollifier: Mollifier::new(eps)?,
        bound_constant: 0.0,
    };
    strain.bound_constant = strain.fit_bound(&strain.bound_probes())?;
    Ok(strain)
}

impl RecoveryStrain {
    /// Glued singular field `θ̂_ε(x)`.
    pub fn theta_hat(&self, x: &Vec3) -> Mat3 {
        let mut out = Mat3::zeros();
        for core in &self.cores {
            let y = x - core.line.start;
            let s = y.dot(&core.tangent);
            let len = core.line.length();
            let radius = self.rho.min(core.slopes[0] * s).min(core.slopes[1] * (len - s));
            let (r, theta, _) = core.profile.cylindrical(&y);
            let chi = if radius > 0.0 { smooth_cutoff(r / radius) } else { 0.0 };
            if chi > 0.0 {
                if r > 0.0 {
                    let m = self.mollifier.cylinder_mass(r);
                    out += core.profile.angular_matrix(theta) * (chi * m / r);
                }
            }
            if chi < 1.0 {
                // mollified kernel: exact for an infinite line, where convolution
                // with φ_ε scales the field by the enclosed cylinder mass
                let m = self.mollifier.cylinder_mass(core.line.as_segment().distance_to_point(x));
                if m > 0.0 {
                    let bs = biot_savart(&core.line.start, &core.line.end, x, 0.0).unwrap_or_else(|_| Vec3::zeros());
                    out += core.line.b * bs.transpose() * ((1.0 - chi) * m);
                }
            }
        }
        out
    }

    /// Full strain `β_ε(x)`.
    pub fn eval(&self, x: &Vec3) -> Mat3 {
        let delta = self.eps * self.eps.ln().abs().sqrt();
        self.q.matrix() * (Mat3::identity() + self.beta.eval(x) * delta + self.theta_hat(x) * self.eps)
    }

    pub fn lines(&self) -> Vec<Line> {
        self.cores.iter().map(|c| c.line).collect()
    }

    /// Distance from `x` to the nearest line.
    pub fn distance(&self, x: &Vec3) -> f64 {
        self.cores.iter().map(|c| c.line.as_segment().distance_to_point(x)).fold(f64::INFINITY, f64::min)
    }

    fn bound_probes(&self) -> Vec<Vec3> {
        let mut out = Vec::new();
        for c in &self.cores {
            let t = c.line.tangent();
            let frame = crate::selfenergy::frame_for_direction(&t).expect("unit tangent");
            let m = frame.matrix();
            let (e1, e2): (Vec3, Vec3) = (m.column(0).into(), m.column(1).into());
            for along in [0.0, 0.1, 0.25, 0.5, 0.9, 1.0] {
                let base = c.line.start + (c.line.end - c.line.start) * along;
                for k in 0..12 {
                    let r = self.eps * 0.25 * 2f64.powi(k);
                    for j in 0..6 {
                        let th = PI * j as f64 / 3.0 + 0.1;
                        out.push(base + (e1 * th.cos() + e2 * th.sin()) * r);
                    }
                }
            }
        }
        out
    }

    /// `max |θ̂_ε(x)|·(dist(x, γ) + ε)` over `probes`.
    pub fn fit_bound(&self, probes: &[Vec3]) -> Result<f64> {
        let c = probes
            .par_iter()
            .map(|x| self.theta_hat(x).norm() * (self.distance(x) + self.eps))
            .reduce(|| 0.0, f64::max);
        if !c.is_finite() {
            return Err(Error::NonFinite("recovery bound constant".into()));
        }
        Ok(c)
    }
}

/// Octree resolution for [`energy_of_strain`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct QuadratureOptions {
    /// A cell is refined while its size exceeds `kappa` times the distance of
    /// its center to the lines.
    pub kappa: f64,
    /// Smallest cell size in units of ε.
    pub min_cell: f64,
    /// Gauss points per direction in each leaf.
    pub order: usize,
    /// Initial cell size.
    pub root_cell: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { kappa: 1.0, min_cell: 1.0, order: 2, root_cell: 0.25 }
    }
}

impl QuadratureOptions {
    /// Twice the resolution in every refinement parameter.
    pub fn refined(&self) -> Self {
        Self { kappa: self.kappa / 2.0, min_cell: self.min_cell / 2.0, ..*self }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EnergyReport {
    /// `F_ε` at the refined resolution.
    pub value: f64,
    /// `F_ε` at the base resolution.
    pub coarse: f64,
    pub relative_change: f64,
    pub leaves: usize,
}

struct Integrator<'a> {
    strain: &'a RecoveryStrain,
    model: &'a EnergyModel,
    opts: QuadratureOptions,
    nodes: Vec<(f64, f64)>,
}

impl Integrator<'_> {
    fn cell(&self, lo: Vec3, hi: Vec3, depth: usize) -> (f64, usize) {
        let size = (hi - lo).max();
        let center = (lo + hi) * 0.5;
        let dist = self.strain.distance(&center);
        let min = self.opts.min_cell * self.strain.eps;
        if size > min && size > self.opts.kappa * dist && depth < 40 {
            let mid = center;
            let children: Vec<(Vec3, Vec3)> = (0..8)
                .map(|k| {
                    let pick = |bit: usize, axis: usize| {
                        if k >> bit & 1 == 0 {
                            (lo[axis], mid[axis])
                        } else {
                            (mid[axis], hi[axis])
                        }
                    };
                    let (x, y, z) = (pick(0, 0), pick(1, 1), pick(2, 2));
                    (Vec3::new(x.0, y.0, z.0), Vec3::new(x.1, y.1, z.1))
                })
                .collect();
            let parts: Vec<(f64, usize)> = if depth < 6 {
                children.par_iter().map(|(a, b)| self.cell(*a, *b, depth + 1)).collect()
            } else {
                children.iter().map(|(a, b)| self.cell(*a, *b, depth + 1)).collect()
            };
            let values: Vec<f64> = parts.iter().map(|p| p.0).collect();
            return (pairwise_sum(&values), parts.iter().map(|p| p.1).sum());
        }
        let ext = hi - lo;
        let mut acc = 0.0;
        for &(x, wx) in &self.nodes {
            for &(y, wy) in &self.nodes {
                for &(z, wz) in &self.nodes {
                    let p = lo + Vec3::new(ext.x * x, ext.y * y, ext.z * z);
                    acc += wx * wy * wz * self.model.value(&self.strain.eval(&p));
                }
            }
        }
        (acc * ext.product(), 1)
    }

    fn run(&self, domain: &BoxDomain) -> (f64, usize) {
        let ext = domain.hi - domain.lo;
        let n = ext.map(|e| (e / self.opts.root_cell).ceil().max(1.0) as usize);
        let roots: Vec<(Vec3, Vec3)> = (0..n.x * n.y * n.z)
            .map(|k| {
                let (i, j, l) = (k % n.x, (k / n.x) % n.y, k / (n.x * n.y));
                let step = ext.component_div(&n.map(|v| v as f64));
                let lo = domain.lo + Vec3::new(i as f64 * step.x, j as f64 * step.y, l as f64 * step.z);
                (lo, lo + step)
            })
            .collect();
        let parts: Vec<(f64, usize)> = roots.par_iter().map(|(a, b)| self.cell(*a, *b, 0)).collect();
        let values: Vec<f64> = parts.iter().map(|p| p.0).collect();
        (pairwise_sum(&values), parts.iter().map(|p| p.1).sum())
    }
}

/// `F_ε = ∫_Ω W(β_ε) / (ε²|log ε|)` on an adaptive octree.
fn integrate_energy(strain: &RecoveryStrain, model: &EnergyModel, domain: &BoxDomain, opts: &QuadratureOptions) -> (f64, usize) {
    let (xs, ws) = gauss_legendre(opts.order);
    let nodes = xs.iter().zip(&ws).map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect();
    let integ = Integrator { strain, model, opts: *opts, nodes };
    let (e, leaves) = integ.run(domain);
    (e / (strain.eps * strain.eps * strain.eps.ln().abs()), leaves)
}

/// Rescaled energy at the given resolution and at twice that resolution;
/// fails when the two differ by more than 2%.
pub fn energy_of_strain(
    strain: &RecoveryStrain,
    model: &EnergyModel,
    domain: &BoxDomain,
    opts: &QuadratureOptions,
) -> Result<EnergyReport> {
    let (coarse, _) = integrate_energy(strain, model, domain, opts);
    let (value, leaves) = integrate_energy(strain, model, domain, &opts.refined());
    let relative_change = if value == 0.0 { (coarse - value).abs() } else { ((coarse - value) / value).abs() };
    if !value.is_finite() {
        return Err(Error::NonFinite("rescaled energy".into()));
    }
    if relative_change > 0.02 {
        return Err(Error::UnresolvedCore(format!(
            "energy changed by {:.2}% under refinement at eps = {}",
            100.0 * relative_change,
            strain.eps
        )));
    }
    Ok(EnergyReport { value, coarse, relative_change, leaves })
}

/// `∫_Ω ½ℂβ:β` of an affine strain, exact by tensor Gauss quadrature.
pub fn bulk_energy(beta: &SmoothStrain, c: &ElasticTensor, domain: &BoxDomain) -> f64 {
    let (xs, ws) = gauss_legendre(2);
    let ext = domain.hi - domain.lo;
    let mut acc = 0.0;
    for (x, wx) in xs.iter().zip(&ws) {
        for (y, wy) in xs.iter().zip(&ws) {
            for (z, wz) in xs.iter().zip(&ws) {
                let p = domain.lo + Vec3::new(ext.x * 0.5 * (x + 1.0), ext.y * 0.5 * (y + 1.0), ext.z * 0.5 * (z + 1.0));
                let b = beta.eval(&p);
                acc += wx * wy * wz * 0.5 * c.contract(&b, &b);
            }
        }
    }
    acc * domain.volume() / 8.0
}

/// `F₀ = ∫_Ω ½ℂβ:β + Σ Ψ̃₀(Qᵀbⱼ, tⱼ) H¹(γⱼ)`. The envelope must be
/// tabulated on the pulled-back lattice `Qᵀℬ` (see [`envelope_for`]).
pub fn limit_functional(
    measure: &PolyhedralMeasure,
    beta: &SmoothStrain,
    q: &Rotation,
    c: &ElasticTensor,
    envelope: &EnvelopeTable,
    domain: &BoxDomain,
) -> Result<f64> {
    if beta.curl_norm() > 1e-12 {
        return Err(Error::InvalidArgument("smooth strain is not curl-free".into()));
    }
    let qt = q.matrix().transpose();
    let mut line = Vec::new();
    for l in measure_lines(measure) {
        line.push(envelope.lookup(&(qt * l.b), &l.tangent())? * l.length());
    }
    Ok(bulk_energy(beta, c, domain) + pairwise_sum(&line))
}

/// Envelope table on the lattice `Qᵀℬ` covering the Burgers vectors and the
/// tangent directions of `measure`.
pub fn envelope_for(
    measure: &PolyhedralMeasure,
    q: &Rotation,
    c: &ElasticTensor,
    grid_level: usize,
    n_theta: usize,
) -> Result<EnvelopeTable> {
    let qt = q.matrix().transpose();
    let g = measure.lattice.generators();
    let lattice = BurgersLattice::new([qt * g[0], qt * g[1], qt * g[2]])?;
    let lines = measure_lines(measure);
    let b_max = lines.iter().map(|l| l.b.norm()).fold(1.0, f64::max) + 1e-9;
    let extra: Vec<Vec3> = lines.iter().flat_map(|l| [l.tangent(), -l.tangent()]).collect();
    let grid = DirectionGrid::icosphere(grid_level).with_extra(&extra);
    let psi0 = Psi0Table::from_tensor(c, lattice, b_max, grid, n_theta)?;
    relax_envelope(&psi0, 500)
}

/// Inputs of a Γ-scan besides the measure.
#[derive(Clone, Debug)]
pub struct GammaScanConfig {
    pub beta: SmoothStrain,
    pub q: Rotation,
    pub model: EnergyModel,
    pub eps: Vec<f64>,
    pub schedule: ScaleSchedule,
    pub domain: BoxDomain,
    pub quadrature: QuadratureOptions,
    pub recovery: RecoveryOptions,
    pub grid_level: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GammaScanReport {
    pub eps: Vec<f64>,
    #[serde(rename = "F_eps")]
    pub f_eps: Vec<f64>,
    #[serde(rename = "F0")]
    pub f0: f64,
    pub gaps: Vec<f64>,
    pub monotone_tail: bool,
    pub schedule: ScaleSchedule,
    /// Relative change of each `F_ε` under quadrature refinement.
    pub quadrature_change: Vec<f64>,
}

/// `F_ε` along `eps` on recovery strains of `measure`, compared with `F₀`.
pub fn gamma_scan(measure: &PolyhedralMeasure, cfg: &GammaScanConfig) -> Result<GammaScanReport> {
    let adm = schedule_admissible(&cfg.schedule);
    if !adm.admissible {
        return Err(Error::InvalidArgument(format!("scale schedule is not admissible: {}", adm.detail)));
    }
    let mut eps = cfg.eps.clone();
    if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(Error::InvalidArgument("eps values must lie in (0, 1)".into()));
    }
    eps.sort_by(|a, b| b.partial_cmp(a).expect("finite eps"));
    let lines = measure_lines(measure);
    let active = PolyhedralMeasure::new(
        measure.lattice.clone(),
        measure.segments.iter().copied().filter(|s| s.burgers.norm() > 0.0).collect(),
    )?;
    let c = crate::cell::linearized_tensor(&cfg.model)?;
    let f0 = if lines.is_empty() {
        bulk_energy(&cfg.beta, &c, &cfg.domain)
    } else {
        let env = envelope_for(&active, &cfg.q, &c, cfg.grid_level, cfg.recovery.n_theta)?;
        limit_functional(&active, &cfg.beta, &cfg.q, &c, &env, &cfg.domain)?
    };
    let mut f_eps = Vec::with_capacity(eps.len());
    let mut quadrature_change = Vec::with_capacity(eps.len());
    for &e in &eps {
        if !lines.is_empty() {
            let report = check_dilute(&active, &cfg.schedule.params(e)?, &Domain::Whole);
            if !report.ok {
                let detail = report.first_violation.map(|v| format!("{v:?}")).unwrap_or_default();
                return Err(Error::DilutenessViolation { eps: e, detail });
            }
        }
        let strain = assemble_recovery(&active, &cfg.q, &cfg.beta, e, cfg.schedule.rho(e), &c, &cfg.recovery)?;
        let r = energy_of_strain(&strain, &cfg.model, &cfg.domain, &cfg.quadrature)?;
        f_eps.push(r.value);
        quadrature_change.push(r.relative_change);
    }
    let gaps: Vec<f64> = f_eps.iter().map(|f| (f - f0).abs()).collect();
    let tail = &gaps[gaps.len().saturating_sub(3)..];
    let monotone_tail = tail.windows(2).all(|w| w[1] <= w[0]);
    Ok(GammaScanReport { eps, f_eps, f0, gaps, monotone_tail, schedule: cfg.schedule, quadrature_change })
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

/// `|sym E|²` — the prototype bulk density `½ℂE:E`.
pub fn prototype_bulk_density(e: &Mat3) -> f64 {
    sym(e).norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dislocations::BurgersLattice;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // direct Gauss quadrature of the Biot–Savart line integral
    fn numeric_field(seg: &Segment, b: &Vec3, x: &Vec3) -> Mat3 {
        let t = seg.tangent();
        let mut acc = Vec3::zeros();
        let pieces = 400;
        for k in 0..pieces {
            let (a, c) = (k as f64 / pieces as f64, (k + 1) as f64 / pieces as f64);
            for (s, w) in crate::quadrature::gauss_interval(8, a * seg.length(), c * seg.length()) {
                let z = x - (seg.start + t * s);
                acc += t.cross(&z) * (w / (4.0 * PI * z.norm().powi(3)));
            }
        }
        b * acc.transpose()
    }

    fn seg(a: [f64; 3], b: [f64; 3]) -> Segment {
        Segment { start: Vec3::from(a), end: Vec3::from(b), burgers: Vec3::x() }
    }

    #[test]
    fn closed_form_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = seg([0.1, -0.2, 0.3], [1.0, 0.5, -0.4]);
        let b = Vec3::new(1.0, -2.0, 0.5);
        for _ in 0..20 {
            let x = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let exact = segment_kernel_field(&s, &b, &x).unwrap();
            let num = numeric_field(&s, &b, &x);
            assert!((exact - num).norm() <= 1e-9 * (1.0 + num.norm()), "{exact} vs {num}");
        }
        // points on the line extension: finite, and matching the limit
        let t = s.tangent();
        let x = s.end + t * 0.5;
        let f = segment_kernel_field(&s, &b, &x).unwrap();
        assert!(f.norm() < 1e-12);
        assert!(matches!(segment_kernel_field(&s, &b, &s.midpoint()), Err(Error::OnLine(_))));
    }

    #[test]
    fn superposition_and_linearity() {
        let b = Vec3::new(0.0, 1.0, 1.0);
        let whole = seg([0.0, 0.0, 0.0], [2.0, 0.0, 0.0]);
        let a = seg([0.0, 0.0, 0.0], [0.7, 0.0, 0.0]);
        let c = seg([0.7, 0.0, 0.0], [2.0, 0.0, 0.0]);
        let x = Vec3::new(0.3, 0.4, -0.2);
        let sum = segment_kernel_field(&a, &b, &x).unwrap() + segment_kernel_field(&c, &b, &x).unwrap();
        assert!((sum - segment_kernel_field(&whole, &b, &x).unwrap()).norm() < 1e-12);

        let m1 = PolyhedralMeasure::unit_square_loop();
        let m2 = PolyhedralMeasure::polygon(
            BurgersLattice::cubic(),
            &[Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 2.0, 1.0), Vec3::new(0.0, 1.0, 3.0)],
            Vec3::new(0.0, 1.0, -1.0),
        )
        .unwrap();
        let mut both = m1.clone();
        both.segments.extend(m2.segments.iter().copied());
        let (k1, k2, k12) = (KernelField::new(&m1), KernelField::new(&m2), KernelField::new(&both));
        for x in [Vec3::new(0.5, 0.5, 0.5), Vec3::new(-1.0, 2.0, 0.3), Vec3::new(3.0, -1.0, 2.0)] {
            let d = k12.eval(&x).unwrap() - k1.eval(&x).unwrap() - k2.eval(&x).unwrap();
            assert!(d.norm() <= 1e-12);
        }
    }

    #[test]
    fn long_segment_circulation() {
        let s = seg([-50.0, 0.0, 0.0], [50.0, 0.0, 0.0]);
        let b = Vec3::new(0.3, 1.0, -0.4);
        let path = probe_loop(&Vec3::zeros(), &Vec3::x(), 0.01, LoopShape::Circle, 64);
        let circ = path_circulation(|x| segment_kernel_field(&s, &b, x), &path, 4).unwrap();
        assert!((circ - b).norm() <= 1e-3 * b.norm(), "{circ}");
    }

    #[test]
    fn closed_loop_circulation_is_quantized() {
        let m = PolyhedralMeasure::unit_square_loop();
        let k = KernelField::new(&m);
        for s in &m.segments {
            let b = m.burgers_of(s);
            for shape in [LoopShape::Circle, LoopShape::Square, LoopShape::TiltedEllipse] {
                let path = probe_loop(&s.midpoint(), &s.tangent(), 0.05, shape, 96);
                let circ = path_circulation(|x| k.eval(x), &path, 12).unwrap();
                assert!((circ - b).norm() <= 1e-3 * b.norm(), "{shape:?}: {circ}");
            }
        }
    }

    #[test]
    fn estimate_constants_are_stable() {
        let m = PolyhedralMeasure::unit_square_loop();
        let k = KernelField::new(&m);
        let dom = BoxDomain::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(2.0, 2.0, 1.0)).unwrap();
        let est: Vec<KernelEstimates> =
            [24, 48, 96].iter().map(|&n| kernel_estimates(&k, &probe_grid(&k, &dom, n, 1e-3)).unwrap()).collect();
        for w in est.windows(2) {
            assert!((w[1].far / w[0].far - 1.0).abs() < 0.2);
            assert!((w[1].near / w[0].near - 1.0).abs() < 0.2);
        }
    }

    #[test]
    fn recovery_without_measure_is_affine() {
        let beta = SmoothStrain::constant(Mat3::new(0.1, 0.2, 0.0, 0.2, -0.3, 0.1, 0.0, 0.1, 0.4));
        let q = Rotation::from_axis_angle(&Vec3::new(1.0, 2.0, 0.5), 0.7).unwrap();
        let s = assemble_recovery(&PolyhedralMeasure::empty(), &q, &beta, 1e-2, 0.1, &ElasticTensor::isotropic(1.0, 0.0), &RecoveryOptions::default())
            .unwrap();
        let x = Vec3::new(0.3, 0.1, 0.2);
        let delta = 1e-2 * (1e-2f64).ln().abs().sqrt();
        let expect = q.matrix() * (Mat3::identity() + beta.constant * delta);
        assert!((s.eval(&x) - expect).norm() < 1e-15);
    }

    #[test]
    fn recovery_circulation_and_bound() {
        let m = PolyhedralMeasure::unit_square_loop();
        let c = ElasticTensor::isotropic(1.0, 0.0);
        let mut bounds = Vec::new();
        for eps in [1e-2, 1e-3] {
            let s = assemble_recovery(&m, &Rotation::identity(), &SmoothStrain::zero(), eps, 0.05, &c, &RecoveryOptions::default())
                .unwrap();
            for seg in &m.segments {
                let b = m.burgers_of(seg);
                let path = probe_loop(&seg.midpoint(), &seg.tangent(), 2.0 * eps, LoopShape::Circle, 128);
                let circ = path_circulation(|x| Ok(s.eval(x)), &path, 4).unwrap();
                assert!((circ - b * eps).norm() <= 1e-3 * eps, "{circ}");
            }
            bounds.push(s.bound_constant);
        }
        assert!(bounds.iter().all(|b| b.is_finite() && *b > 0.0));
        assert!((bounds[1] / bounds[0] - 1.0).abs() < 0.2, "{bounds:?}");
    }

    #[test]
    fn overlapping_tubes_are_rejected() {
        let m = PolyhedralMeasure::polygon(
            BurgersLattice::cubic(),
            &[Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 0.05, 0.0), Vec3::new(0.0, 0.05, 0.0)],
            Vec3::z(),
        )
        .unwrap();
        let r = assemble_recovery(&m, &Rotation::identity(), &SmoothStrain::zero(), 1e-3, 0.03, &ElasticTensor::isotropic(1.0, 0.0), &RecoveryOptions::default());
        assert!(matches!(r, Err(Error::OverlappingCores(_))));
    }

    #[test]
    fn constant_rotation_has_zero_energy() {
        let q = Rotation::from_axis_angle(&Vec3::new(0.0, 1.0, 1.0), 1.1).unwrap();
        let s = assemble_recovery(&PolyhedralMeasure::empty(), &q, &SmoothStrain::zero(), 1e-2, 0.1, &ElasticTensor::isotropic(1.0, 0.0), &RecoveryOptions::default())
            .unwrap();
        let dom = BoxDomain::new(Vec3::zeros(), Vec3::repeat(1.0)).unwrap();
        let e = energy_of_strain(&s, &EnergyModel::prototype(), &dom, &QuadratureOptions::default()).unwrap();
        assert!(e.value.abs() < 1e-20);
    }

    #[test]
    fn affine_limit_and_bulk_term() {
        let e = Mat3::new(0.3, 0.1, 0.0, 0.1, -0.2, 0.05, 0.0, 0.05, 0.1);
        let w = Mat3::new(0.0, 0.4, -0.2, -0.4, 0.0, 0.3, 0.2, -0.3, 0.0);
        let dom = BoxDomain::new(Vec3::zeros(), Vec3::new(1.0, 2.0, 0.5)).unwrap();
        let c = ElasticTensor::isotropic(1.0, 0.0);
        let expect = prototype_bulk_density(&e) * dom.volume();
        let bulk = bulk_energy(&SmoothStrain::constant(e + w), &c, &dom);
        assert!((bulk - expect).abs() < 1e-14);
        // dist²(I + δ(E + W), SO(3)) = δ²|E|² − δ³ E:W² + O(δ⁴)
        let cubic = -(e * w * w).trace() * dom.volume();
        let mut deltas = Vec::new();
        let mut gaps = Vec::new();
        for eps in [1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
            let s = assemble_recovery(
                &PolyhedralMeasure::empty(),
                &Rotation::identity(),
                &SmoothStrain::constant(e + w),
                eps,
                0.1,
                &c,
                &RecoveryOptions::default(),
            )
            .unwrap();
            let f = energy_of_strain(&s, &EnergyModel::prototype(), &dom, &QuadratureOptions::default()).unwrap().value;
            let delta = eps * eps.ln().abs().sqrt();
            deltas.push(delta);
            gaps.push((f - expect).abs());
            if eps <= 1e-5 {
                assert!(((f - expect) / delta / cubic - 1.0).abs() < 0.01, "{} vs {cubic}", (f - expect) / delta);
            }
        }
        let slope = log_log_slope(&deltas, &gaps);
        assert!((slope - 1.0).abs() < 0.05, "{slope}");
    }

    #[test]
    fn smooth_strain_json_and_curl() {
        let s = SmoothStrain::from_json_str("[[0.1,0,0],[0,0.2,0],[0,0,0.3]]").unwrap();
        assert_eq!(s.constant[(1, 1)], 0.2);
        // gradient of a displacement field: curl-free
        let ok = r#"{"constant": [[0,0,0],[0,0,0],[0,0,0]], "gradient": [[[1,0,0],[0,0,0],[0,0,0]], [[0,0,0],[0,0,0],[0,0,0]], [[0,0,0],[0,0,0],[0,0,0]]]}"#;
        assert!(SmoothStrain::from_json_str(ok).is_ok());
        let bad = r#"{"constant": [[0,0,0],[0,0,0],[0,0,0]], "gradient": [[[0,1,0],[0,0,0],[0,0,0]], [[0,0,0],[0,0,0],[0,0,0]], [[0,0,0],[0,0,0],[0,0,0]]]}"#;
        assert!(matches!(SmoothStrain::from_json_str(bad), Err(Error::InvalidArgument(_))));
        assert!(matches!(SmoothStrain::from_json_str("[[1,2]"), Err(Error::Parse(_))));
    }
}
