//! Polyhedral dislocation measures `μ = Σ b_j ⊗ t_j H¹⌞γ_j` over a Burgers
//! lattice: Frank's rule, diluteness, half-space extension and mollification.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::elasticity::{Mat3, Vec3};
use crate::error::{Error, Result};
use crate::quadrature::{adaptive, gauss_interval};

/// Lattice `ℬ = G ℤ³` of admissible Burgers vectors, normalized so its
/// shortest nonzero vector has unit length.
#[derive(Clone, Debug, PartialEq)]
pub struct BurgersLattice {
    generators: Matrix3<f64>,
    inverse: Matrix3<f64>,
}

impl BurgersLattice {
    /// Generators are the lattice basis vectors (columns of `G`).
    pub fn new(generators: [Vec3; 3]) -> Result<Self> {
        let g = Matrix3::from_columns(&generators);
        let det = g.determinant();
        let scale = generators.iter().map(|v| v.norm()).product::<f64>();
        if !det.is_finite() || det.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidArgument("lattice generators are linearly dependent".into()));
        }
        let inverse = g.try_inverse().ok_or_else(|| Error::SingularSystem("lattice basis".into()))?;
        let lattice = Self { generators: g, inverse };
        let min = lattice.minimal_norm();
        if (min - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("shortest lattice vector has length {min}, expected 1")));
        }
        Ok(lattice)
    }

    /// Simple cubic lattice `ℤ³`.
    pub fn cubic() -> Self {
        Self { generators: Matrix3::identity(), inverse: Matrix3::identity() }
    }

    pub fn generators(&self) -> [Vec3; 3] {
        [self.generators.column(0).into(), self.generators.column(1).into(), self.generators.column(2).into()]
    }

    /// Cartesian vector of lattice coordinates `n`.
    pub fn to_cartesian(&self, coords: &Vec3) -> Vec3 {
        self.generators * coords
    }

    pub fn coordinates(&self, v: &Vec3) -> Vec3 {
        self.inverse * v
    }

    pub fn contains_coordinates(coords: &Vec3) -> bool {
        coords.iter().all(|c| (c - c.round()).abs() <= 1e-9)
    }

    pub fn contains(&self, v: &Vec3) -> bool {
        Self::contains_coordinates(&self.coordinates(v))
    }

    // coefficient bound so that |G n| ≤ radius implies |n_i| ≤ bound
    fn coefficient_bound(&self, radius: f64) -> i64 {
        let rows = self.inverse.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        (radius * rows).floor() as i64 + 1
    }

    fn minimal_norm(&self) -> f64 {
        let longest = self.generators.column_iter().map(|c| c.norm()).fold(f64::INFINITY, f64::min);
        let k = self.coefficient_bound(longest);
        let mut best = f64::INFINITY;
        for i in -k..=k {
            for j in -k..=k {
                for l in -k..=k {
                    if (i, j, l) != (0, 0, 0) {
                        best = best.min(self.to_cartesian(&Vec3::new(i as f64, j as f64, l as f64)).norm());
                    }
                }
            }
        }
        best
    }

    /// All lattice vectors with `|b| ≤ b_max` (including 0), in a fixed order.
    pub fn ball(&self, b_max: f64) -> Vec<Vec3> {
        let k = self.coefficient_bound(b_max);
        let mut out = Vec::new();
        for i in -k..=k {
            for j in -k..=k {
                for l in -k..=k {
                    let v = self.to_cartesian(&Vec3::new(i as f64, j as f64, l as f64));
                    if v.norm() <= b_max + 1e-12 {
                        out.push(v);
                    }
                }
            }
        }
        out
    }
}

/// Straight segment carrying a lattice Burgers vector (lattice coordinates).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: Vec3,
    pub end: Vec3,
    pub burgers: Vec3,
}

impl Segment {
    pub fn new(start: Vec3, end: Vec3, burgers: Vec3) -> Result<Self> {
        let s = Self { start, end, burgers };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        let finite = self.start.iter().chain(self.end.iter()).chain(self.burgers.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("segment coordinates".into()));
        }
        if !(self.length() > 0.0) {
            return Err(Error::InvalidArgument(format!("degenerate segment at {:?}", self.start.as_slice())));
        }
        if !BurgersLattice::contains_coordinates(&self.burgers) {
            return Err(Error::InvalidArgument(format!(
                "Burgers coordinates {:?} are not integers",
                self.burgers.as_slice()
            )));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    pub fn tangent(&self) -> Vec3 {
        (self.end - self.start) / self.length()
    }

    pub fn midpoint(&self) -> Vec3 {
        (self.start + self.end) * 0.5
    }

    /// Closest point parameter `s ∈ [0, length]` and distance from `x`.
    pub fn project(&self, x: &Vec3) -> (f64, f64) {
        let t = self.tangent();
        let s = (x - self.start).dot(&t).clamp(0.0, self.length());
        (s, (self.start + t * s - x).norm())
    }

    pub fn distance_to_point(&self, x: &Vec3) -> f64 {
        self.project(x).1
    }

    /// Distance between two closed segments.
    pub fn distance_to_segment(&self, other: &Segment) -> f64 {
        let d1 = self.end - self.start;
        let d2 = other.end - other.start;
        let r = self.start - other.start;
        let (a, e, f) = (d1.dot(&d1), d2.dot(&d2), d2.dot(&r));
        let c = d1.dot(&r);
        let b = d1.dot(&d2);
        let denom = a * e - b * b;
        let mut s = if denom > 1e-14 * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
        let mut t = (b * s + f) / e;
        if t < 0.0 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else if t > 1.0 {
            t = 1.0;
            s = ((b - c) / a).clamp(0.0, 1.0);
        }
        ((self.start + d1 * s) - (other.start + d2 * t)).norm()
    }

    fn reversed(&self) -> Self {
        Self { start: self.end, end: self.start, burgers: self.burgers }
    }
}

#[derive(Serialize, Deserialize)]
struct MeasureFile {
    lattice: [[f64; 3]; 3],
    #[serde(default = "default_unit")]
    unit: String,
    segments: Vec<Segment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_tolerance: Option<f64>,
}

fn default_unit() -> String {
    "normalized".into()
}

/// Finite sum of straight segments.
#[derive(Clone, Debug)]
pub struct PolyhedralMeasure {
    pub lattice: BurgersLattice,
    pub segments: Vec<Segment>,
    pub node_tolerance: f64,
}

impl PolyhedralMeasure {
    pub fn new(lattice: BurgersLattice, segments: Vec<Segment>) -> Result<Self> {
        for s in &segments {
            s.validate()?;
        }
        let node_tolerance = 1e-9 * bounding_diameter(&segments).max(1.0);
        Ok(Self { lattice, segments, node_tolerance })
    }

    pub fn empty() -> Self {
        Self { lattice: BurgersLattice::cubic(), segments: Vec::new(), node_tolerance: 1e-9 }
    }

    /// Closed polygon through `vertices` with one Burgers vector.
    pub fn polygon(lattice: BurgersLattice, vertices: &[Vec3], burgers: Vec3) -> Result<Self> {
        let n = vertices.len();
        let segs = (0..n)
            .map(|i| Segment::new(vertices[i], vertices[(i + 1) % n], burgers))
            .collect::<Result<Vec<_>>>()?;
        Self::new(lattice, segs)
    }

    /// Unit square `[0,1]² × {0}` traversed counterclockwise about `e₃` with `b = e₁`.
    pub fn unit_square_loop() -> Self {
        let v = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        Self::polygon(BurgersLattice::cubic(), &v, Vec3::x()).expect("valid square loop")
    }

    pub fn burgers_of(&self, seg: &Segment) -> Vec3 {
        self.lattice.to_cartesian(&seg.burgers)
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Same segments with all Burgers vectors multiplied by an integer.
    pub fn scaled_burgers(&self, k: i32) -> Self {
        let mut out = self.clone();
        for s in &mut out.segments {
            s.burgers *= k as f64;
        }
        out.segments.retain(|s| s.burgers.norm() > 0.0);
        out
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        let file: MeasureFile = if value.is_array() {
            MeasureFile {
                lattice: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                unit: default_unit(),
                segments: serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?,
                node_tolerance: None,
            }
        } else {
            serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?
        };
        if file.unit != "normalized" {
            return Err(Error::Parse(format!("unsupported unit {:?}", file.unit)));
        }
        let lattice = BurgersLattice::new(file.lattice.map(Vec3::from))?;
        let mut m = Self::new(lattice, file.segments)?;
        if let Some(t) = file.node_tolerance {
            m.node_tolerance = t;
        }
        Ok(m)
    }

    pub fn to_json_string(&self) -> String {
        let g = self.lattice.generators();
        let file = MeasureFile {
            lattice: g.map(|v| [v.x, v.y, v.z]),
            unit: default_unit(),
            segments: self.segments.clone(),
            node_tolerance: Some(self.node_tolerance),
        };
        serde_json::to_string_pretty(&file).expect("measure serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    /// Matrix `Σ_j b_j ⊗ t_j H¹(γ_j)`, the total mass of the measure.
    pub fn total_matrix(&self) -> Mat3 {
        self.segments.iter().map(|s| self.burgers_of(s) * (s.end - s.start).transpose()).sum()
    }

    /// Node clusters of segment endpoints: `(position, outgoing − incoming b)`.
    pub fn nodes(&self) -> Vec<(Vec3, Vec3)> {
        let mut nodes: Vec<(Vec3, Vec3)> = Vec::new();
        let mut add = |p: Vec3, flux: Vec3| {
            if let Some(n) = nodes.iter_mut().find(|(q, _)| (q - p).norm() <= self.node_tolerance) {
                n.1 += flux;
            } else {
                nodes.push((p, flux));
            }
        };
        for s in &self.segments {
            let b = self.burgers_of(s);
            add(s.start, b);
            add(s.end, -b);
        }
        nodes
    }
}

fn bounding_diameter(segments: &[Segment]) -> f64 {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for s in segments {
        for p in [s.start, s.end] {
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
    }
    if segments.is_empty() {
        0.0
    } else {
        (hi - lo).norm()
    }
}

/// Maximum Frank imbalance `|Σ b_out − Σ b_in|` over all nodes.
pub fn frank_rule_residual(measure: &PolyhedralMeasure) -> f64 {
    measure.nodes().iter().map(|(_, f)| f.norm()).fold(0.0, f64::max)
}

/// Frank imbalance over nodes in the interior of `domain` (boundary nodes exempt).
pub fn frank_rule_residual_in(measure: &PolyhedralMeasure, domain: &Domain) -> f64 {
    measure
        .nodes()
        .iter()
        .filter(|(p, _)| domain.signed_distance(p) < -measure.node_tolerance)
        .map(|(_, f)| f.norm())
        .fold(0.0, f64::max)
}

/// Reference domain for diluteness and extension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Whole,
    /// `{x : (x − point)·normal < 0}`; `normal` is the outward unit normal.
    HalfSpace { point: Vec3, normal: Vec3 },
    Ball { center: Vec3, radius: f64 },
}

impl Domain {
    pub fn half_space(point: Vec3, outward: Vec3) -> Self {
        Domain::HalfSpace { point, normal: outward.normalize() }
    }

    /// Negative inside, positive outside, zero on the boundary.
    pub fn signed_distance(&self, x: &Vec3) -> f64 {
        match self {
            Domain::Whole => f64::NEG_INFINITY,
            Domain::HalfSpace { point, normal } => (x - point).dot(normal),
            Domain::Ball { center, radius } => (x - center).norm() - radius,
        }
    }

    fn normal_at(&self, x: &Vec3) -> Vec3 {
        match self {
            Domain::Whole => Vec3::zeros(),
            Domain::HalfSpace { normal, .. } => *normal,
            Domain::Ball { center, .. } => (x - center).normalize(),
        }
    }

    /// Boundary crossing parameters of a segment, in `(0, 1)` or at endpoints.
    fn crossings(&self, s: &Segment) -> Vec<f64> {
        let d = s.end - s.start;
        match self {
            Domain::Whole => vec![],
            Domain::HalfSpace { point, normal } => {
                let den = d.dot(normal);
                if den.abs() < 1e-300 {
                    return vec![];
                }
                let u = (point - s.start).dot(normal) / den;
                if (0.0..=1.0).contains(&u) {
                    vec![u]
                } else {
                    vec![]
                }
            }
            Domain::Ball { center, radius } => {
                let r = s.start - center;
                let (a, b, c) = (d.dot(&d), 2.0 * d.dot(&r), r.dot(&r) - radius * radius);
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return vec![];
                }
                let q = disc.sqrt();
                [(-b - q) / (2.0 * a), (-b + q) / (2.0 * a)].into_iter().filter(|u| (0.0..=1.0).contains(u)).collect()
            }
        }
    }

    fn segment_distance(&self, s: &Segment) -> f64 {
        match self {
            Domain::Whole => f64::INFINITY,
            Domain::HalfSpace { .. } => self.signed_distance(&s.start).abs().min(self.signed_distance(&s.end).abs()),
            Domain::Ball { center, radius } => {
                let (_, dmin) = s.project(center);
                let dmax = (s.start - center).norm().max((s.end - center).norm());
                (radius - dmax).abs().min((dmin - radius).abs()).min(if dmin < *radius && dmax > *radius {
                    0.0
                } else {
                    f64::INFINITY
                })
            }
        }
    }
}

/// Diluteness parameters `(h, α)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiluteParams {
    pub h: f64,
    pub alpha: f64,
}

impl DiluteParams {
    pub fn new(h: f64, alpha: f64) -> Result<Self> {
        if !(h > 0.0) || !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("need h > 0 and 0 < alpha < 1, got h = {h}, alpha = {alpha}")));
        }
        Ok(Self { h, alpha })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiluteViolation {
    /// One of `'a'` (length), `'b'` (separation), `'c'` (junction angle), `'d'` (boundary).
    pub clause: char,
    pub segments: Vec<usize>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiluteReport {
    pub ok: bool,
    pub first_violation: Option<DiluteViolation>,
}

fn angle_between(u: &Vec3, v: &Vec3) -> f64 {
    u.cross(v).norm().atan2(u.dot(v))
}

/// Checks the `(h, α)`-diluteness conditions; violations are reported, not thrown.
pub fn check_dilute(measure: &PolyhedralMeasure, params: &DiluteParams, domain: &Domain) -> DiluteReport {
    let violation = |clause, segments, detail| DiluteReport {
        ok: false,
        first_violation: Some(DiluteViolation { clause, segments, detail }),
    };
    let (h, alpha) = (params.h, params.alpha);
    let tol = measure.node_tolerance;
    let segs = &measure.segments;
    for (i, s) in segs.iter().enumerate() {
        if s.length() < h * (1.0 - 1e-12) {
            return violation('a', vec![i], format!("length {} < h = {h}", s.length()));
        }
    }
    for i in 0..segs.len() {
        for j in i + 1..segs.len() {
            let (a, b) = (&segs[i], &segs[j]);
            let shared: Vec<(Vec3, Vec3, Vec3)> = [(a.start, a.end), (a.end, a.start)]
                .iter()
                .flat_map(|&(pa, qa)| {
                    [(b.start, b.end), (b.end, b.start)]
                        .into_iter()
                        .filter(move |(pb, _)| (pa - pb).norm() <= tol)
                        .map(move |(_, qb)| (pa, qa, qb))
                })
                .collect();
            if shared.is_empty() {
                let d = a.distance_to_segment(b);
                if d < alpha * h * (1.0 - 1e-12) {
                    return violation('b', vec![i, j], format!("distance {d} < alpha h = {}", alpha * h));
                }
            } else {
                for (p, qa, qb) in shared {
                    let ang = angle_between(&(qa - p), &(qb - p));
                    if ang < alpha * (1.0 - 1e-12) {
                        return violation('c', vec![i, j], format!("junction angle {ang} < alpha = {alpha}"));
                    }
                }
            }
        }
    }
    if !matches!(domain, Domain::Whole) {
        for (i, s) in segs.iter().enumerate() {
            let crossings = domain.crossings(s);
            if crossings.is_empty() {
                let d = domain.segment_distance(s);
                if d < alpha * h * (1.0 - 1e-12) {
                    return violation('d', vec![i], format!("distance {d} to the boundary < alpha h"));
                }
                continue;
            }
            let on_boundary = [s.start, s.end].iter().filter(|p| domain.signed_distance(p).abs() <= tol).count();
            if on_boundary == 2 || crossings.len() > 1 && on_boundary == 0 {
                return violation('d', vec![i], "segment meets the boundary in more than one point".into());
            }
            for u in crossings {
                let p = s.start + (s.end - s.start) * u;
                let incidence = s.tangent().dot(&domain.normal_at(&p)).abs().clamp(0.0, 1.0).asin();
                if incidence < alpha * (1.0 - 1e-12) {
                    return violation('d', vec![i], format!("incidence angle {incidence} < alpha = {alpha}"));
                }
            }
        }
    }
    DiluteReport { ok: true, first_violation: None }
}

/// Logarithmic-power scale schedule `h_ε = H|log ε|^{−a}`, `α_ε = A|log ε|^{−c}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ScaleSchedule {
    pub H: f64,
    pub A: f64,
    pub a: f64,
    pub c: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    /// `1 − 4c − 6a`: exponent of `|log ε|` in `α_ε⁴ h_ε⁶ |log ε|`.
    pub margin: f64,
    /// Below this ε both diluteness limits are in their eventual regime
    /// (`α⁴h⁶|log ε| > 1` and `log(1/(αh))/|log ε|` decreasing).
    pub eps_threshold: Option<f64>,
    pub detail: String,
}

impl ScaleSchedule {
    #[allow(non_snake_case)]
    pub fn new(H: f64, A: f64, a: f64, c: f64) -> Self {
        Self { H, A, a, c }
    }

    pub fn h(&self, eps: f64) -> f64 {
        self.H * eps.ln().abs().powf(-self.a)
    }

    pub fn alpha(&self, eps: f64) -> f64 {
        self.A * eps.ln().abs().powf(-self.c)
    }

    pub fn params(&self, eps: f64) -> Result<DiluteParams> {
        DiluteParams::new(self.h(eps), self.alpha(eps))
    }

    /// Gluing radius `ρ_ε = (α_ε h_ε)²`.
    pub fn rho(&self, eps: f64) -> f64 {
        (self.alpha(eps) * self.h(eps)).powi(2)
    }

    /// `α_ε⁴ h_ε⁶ |log ε|`.
    pub fn strong_dilute_quantity(&self, eps: f64) -> f64 {
        self.alpha(eps).powi(4) * self.h(eps).powi(6) * eps.ln().abs()
    }

    /// `log(1/(α_ε h_ε)) / |log ε|`.
    pub fn log_ratio(&self, eps: f64) -> f64 {
        (1.0 / (self.alpha(eps) * self.h(eps))).ln() / eps.ln().abs()
    }
}

/// Decides admissibility of a schedule in closed form.
pub fn schedule_admissible(s: &ScaleSchedule) -> AdmissibilityReport {
    let finite = [s.H, s.A, s.a, s.c].iter().all(|v| v.is_finite());
    if !finite || !(s.H > 0.0 && s.A > 0.0) || !(s.a > 0.0 && s.c > 0.0) {
        return AdmissibilityReport {
            admissible: false,
            margin: f64::NAN,
            eps_threshold: None,
            detail: "amplitudes and exponents must be positive".into(),
        };
    }
    let exponent = 1.0 - 4.0 * s.c - 6.0 * s.a;
    let amp = s.A.powi(4) * s.H.powi(6);
    let (admissible, x_strong) = if exponent > 1e-14 {
        (true, amp.powf(-1.0 / exponent).max(1.0))
    } else if exponent.abs() <= 1e-14 {
        (amp > 1.0, 1.0)
    } else {
        (false, f64::INFINITY)
    };
    // (k + m ln x)/x is decreasing once ln x > 1 − k/m, with k = −ln(AH), m = a + c
    let (k, m) = (-(s.A * s.H).ln(), s.a + s.c);
    let x_mono = (1.0 - k / m).exp().max(1.0);
    let x = x_strong.max(x_mono);
    let eps_threshold = if admissible && x.is_finite() { Some((-x).exp()) } else { None };
    AdmissibilityReport {
        admissible,
        margin: exponent,
        eps_threshold,
        detail: format!("4c + 6a = {:.6}, A^4 H^6 = {amp:.6e}", 4.0 * s.c + 6.0 * s.a),
    }
}

/// Result of extending a measure across a planar boundary.
#[derive(Clone, Debug)]
pub struct Extension {
    pub measure: PolyhedralMeasure,
    /// `|μ̃|(ℝ³) / |μ|(Ω)`.
    pub mass_ratio: f64,
}

fn mirror(x: &Vec3, point: &Vec3, normal: &Vec3) -> Vec3 {
    x - normal * (2.0 * (x - point).dot(normal))
}

/// Extends a measure on the half-space `Ω` to a divergence-free measure on
/// `ℝ³`. Segments are clipped to `Ω̄`; every connected strand that reaches
/// `∂Ω` is mirrored (with reversed orientation) so that boundary endpoints
/// close against their images. Strands not touching `∂Ω` are kept as is.
pub fn extend_by_reflection(measure: &PolyhedralMeasure, domain: &Domain, min_angle: f64) -> Result<Extension> {
    let Domain::HalfSpace { point, normal } = *domain else {
        return Err(Error::InvalidArgument("extension is implemented for half-spaces only".into()));
    };
    let tol = measure.node_tolerance;
    let mut clipped = Vec::new();
    for s in &measure.segments {
        let (da, db) = ((s.start - point).dot(&normal), (s.end - point).dot(&normal));
        if da.abs() <= tol && db.abs() <= tol {
            return Err(Error::TangentialCrossing("segment lies in the boundary plane".into()));
        }
        if da >= -tol && db >= -tol {
            continue;
        }
        let mut c = *s;
        if da > tol || db > tol {
            let u = da / (da - db);
            let p = s.start + (s.end - s.start) * u;
            if da > 0.0 {
                c.start = p;
            } else {
                c.end = p;
            }
        }
        if c.length() > tol {
            let incidence = c.tangent().dot(&normal).abs().clamp(0.0, 1.0).asin();
            let touches = (c.start - point).dot(&normal).abs() <= tol || (c.end - point).dot(&normal).abs() <= tol;
            if touches && incidence < min_angle {
                return Err(Error::TangentialCrossing(format!("incidence angle {incidence} below {min_angle}")));
            }
            clipped.push(c);
        }
    }
    let inside = PolyhedralMeasure { lattice: measure.lattice.clone(), segments: clipped, node_tolerance: tol };
    let interior = frank_rule_residual_in(&inside, domain);
    if interior > tol {
        return Err(Error::InvalidArgument(format!("interior Frank imbalance {interior}")));
    }
    // connected components through shared endpoints
    let n = inside.segments.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut i = i;
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&inside.segments[i], &inside.segments[j]);
            let touch = [a.start, a.end].iter().any(|p| [b.start, b.end].iter().any(|q| (p - q).norm() <= tol));
            if touch {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri] = rj;
            }
        }
    }
    let on_boundary = |p: &Vec3| (p - point).dot(&normal).abs() <= tol;
    let mut touching = vec![false; n];
    for i in 0..n {
        let s = &inside.segments[i];
        if on_boundary(&s.start) || on_boundary(&s.end) {
            let r = find(&mut parent, i);
            touching[r] = true;
        }
    }
    let mut segments = inside.segments.clone();
    for i in 0..n {
        if touching[find(&mut parent, i)] {
            let s = inside.segments[i].reversed();
            segments.push(Segment { start: mirror(&s.start, &point, &normal), end: mirror(&s.end, &point, &normal), burgers: s.burgers });
        }
    }
    let out = PolyhedralMeasure { lattice: measure.lattice.clone(), segments, node_tolerance: tol };
    let mass_in = weighted_length(&inside, 1);
    let mass_out = weighted_length(&out, 1);
    let mass_ratio = if mass_in > 0.0 { mass_out / mass_in } else { 1.0 };
    Ok(Extension { measure: out, mass_ratio })
}

/// `Σ_j |b_j|^power H¹(γ_j)`.
pub fn weighted_length(measure: &PolyhedralMeasure, power: i32) -> f64 {
    measure.segments.iter().map(|s| measure.burgers_of(s).norm().powi(power) * s.length()).sum()
}

/// Normalized radial bump `φ(x) = c exp(−1/(1−|x|²))` on the unit ball,
/// rescaled as `φ_ε(x) = ε⁻³ φ(x/ε)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mollifier {
    pub scale: f64,
}

struct BumpTables {
    constant: f64,
    /// Fraction of the unit-ball mass within cylinder radius `r`, sampled
    /// uniformly on `[0, 1]`.
    cylinder: Vec<f64>,
}

const CYLINDER_SAMPLES: usize = 2001;

fn bump_raw(s2: f64) -> f64 {
    if s2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s2)).exp()
    }
}

fn tables() -> &'static BumpTables {
    static T: OnceLock<BumpTables> = OnceLock::new();
    T.get_or_init(|| {
        let mass = 4.0 * PI * adaptive(&|s: f64| s * s * bump_raw(s * s), 0.0, 1.0, 1e-15);
        let constant = 1.0 / mass;
        // planar density of the unit bump: ∫ φ(ρ, z) dz, then cumulative 2π∫ρ φ̄ dρ
        let planar = |rho: f64| {
            let zmax = (1.0 - rho * rho).max(0.0).sqrt();
            if zmax == 0.0 {
                return 0.0;
            }
            2.0 * constant * adaptive(&|z: f64| bump_raw(rho * rho + z * z), 0.0, zmax, 1e-16)
        };
        let h = 1.0 / (CYLINDER_SAMPLES - 1) as f64;
        let mut cylinder = vec![0.0; CYLINDER_SAMPLES];
        for i in 1..CYLINDER_SAMPLES {
            let (a, b) = ((i - 1) as f64 * h, i as f64 * h);
            let inc: f64 = gauss_interval(6, a, b).iter().map(|&(r, w)| 2.0 * PI * r * planar(r) * w).sum();
            cylinder[i] = cylinder[i - 1] + inc;
        }
        BumpTables { constant, cylinder }
    })
}

impl Mollifier {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("mollifier scale must be positive, got {scale}")));
        }
        Ok(Self { scale })
    }

    /// Normalization constant of the unit-scale bump.
    pub fn unit_constant() -> f64 {
        tables().constant
    }

    /// `φ_ε(z)`.
    pub fn value(&self, z: &Vec3) -> f64 {
        let e = self.scale;
        tables().constant * bump_raw(z.norm_squared() / (e * e)) / (e * e * e)
    }

    /// Mass of `φ_ε` inside the infinite cylinder of radius `r` about any
    /// line through the origin.
    pub fn cylinder_mass(&self, r: f64) -> f64 {
        let x = r / self.scale;
        if x >= 1.0 {
            return 1.0;
        }
        if x <= 0.0 {
            return 0.0;
        }
        let t = tables();
        let u = x * (CYLINDER_SAMPLES - 1) as f64;
        let i = (u.floor() as usize).min(CYLINDER_SAMPLES - 2);
        let f = u - i as f64;
        t.cylinder[i] * (1.0 - f) + t.cylinder[i + 1] * f
    }

    /// `∫_γ φ_ε(x − y) dH¹(y)` over a segment.
    pub fn line_integral(&self, seg: &Segment, x: &Vec3) -> f64 {
        let t = seg.tangent();
        let s0 = (x - seg.start).dot(&t);
        let perp2 = (x - seg.start - t * s0).norm_squared();
        let e2 = self.scale * self.scale;
        if perp2 >= e2 {
            return 0.0;
        }
        let half = (e2 - perp2).sqrt();
        let (lo, hi) = ((s0 - half).max(0.0), (s0 + half).min(seg.length()));
        if hi <= lo {
            return 0.0;
        }
        let f = |s: f64| self.value(&(x - seg.start - t * s));
        let peak = tables().constant / (self.scale.powi(3) * std::f64::consts::E);
        adaptive(&f, lo, hi, 1e-13 * peak * self.scale)
    }
}

/// `(μ * φ_ε)(x) = Σ_j b_j ⊗ t_j ∫_{γ_j} φ_ε(x − y) dH¹(y)`.
pub fn mollified_curl_density(measure: &PolyhedralMeasure, moll: &Mollifier, x: &Vec3) -> Mat3 {
    measure
        .segments
        .iter()
        .map(|s| {
            let w = moll.line_integral(s, x);
            if w == 0.0 {
                Mat3::zeros()
            } else {
                measure.burgers_of(s) * s.tangent().transpose() * w
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lattice_validation() {
        assert!(BurgersLattice::new([Vec3::x(), Vec3::y(), Vec3::z()]).is_ok());
        assert!(BurgersLattice::new([Vec3::x(), Vec3::y(), Vec3::x() + Vec3::y()]).is_err());
        assert!(BurgersLattice::new([Vec3::x() * 2.0, Vec3::y() * 2.0, Vec3::z() * 2.0]).is_err());
        // fcc normalized to nearest-neighbour distance 1
        let s = 1.0 / 2f64.sqrt();
        let fcc = BurgersLattice::new([Vec3::new(s, s, 0.0), Vec3::new(0.0, s, s), Vec3::new(s, 0.0, s)]).unwrap();
        assert!(fcc.contains(&Vec3::new(2.0 * s, 0.0, 0.0)));
        assert_eq!(BurgersLattice::cubic().ball(3.0).len(), 123);
        assert_eq!(fcc.ball(1.0).len(), 13);
    }

    #[test]
    fn frank_examples() {
        let sq = PolyhedralMeasure::unit_square_loop();
        assert_eq!(frank_rule_residual(&sq), 0.0);
        let c = BurgersLattice::cubic();
        let o = Vec3::zeros();
        let y = PolyhedralMeasure::new(
            c.clone(),
            vec![
                Segment::new(Vec3::new(-1.0, -1.0, 0.0), o, Vec3::x()).unwrap(),
                Segment::new(Vec3::new(1.0, -1.0, 0.0), o, Vec3::y()).unwrap(),
                Segment::new(o, Vec3::new(0.0, 1.0, 0.0), Vec3::new(1.0, 1.0, 0.0)).unwrap(),
            ],
        )
        .unwrap();
        let junction = y.nodes().into_iter().find(|(p, _)| p.norm() < 1e-12).unwrap();
        assert!(junction.1.norm() < 1e-15);
        let open = PolyhedralMeasure::new(c, vec![Segment::new(o, Vec3::x(), Vec3::z()).unwrap()]).unwrap();
        assert_relative_eq!(frank_rule_residual(&open), 1.0);
    }

    #[test]
    fn segment_validation() {
        assert!(Segment::new(Vec3::zeros(), Vec3::zeros(), Vec3::x()).is_err());
        assert!(Segment::new(Vec3::zeros(), Vec3::x(), Vec3::new(0.5, 0.0, 0.0)).is_err());
    }

    #[test]
    fn measure_json_roundtrip_and_errors() {
        let sq = PolyhedralMeasure::unit_square_loop();
        let back = PolyhedralMeasure::from_json_str(&sq.to_json_string()).unwrap();
        assert_eq!(back.segments, sq.segments);
        let bare = r#"[{"start":[0,0,0],"end":[1,0,0],"burgers":[0,0,1]}]"#;
        assert_eq!(PolyhedralMeasure::from_json_str(bare).unwrap().segments.len(), 1);
        let err = PolyhedralMeasure::from_json_str("{\n \"lattice\": [1,2,\n").unwrap_err();
        assert!(matches!(err, Error::Parse(ref m) if m.contains("line")), "{err}");
    }

    #[test]
    fn dilute_examples() {
        let (h, alpha) = (0.5, 0.2);
        let p = DiluteParams::new(h, alpha).unwrap();
        let c = BurgersLattice::cubic();
        let plane = Domain::half_space(Vec3::zeros(), Vec3::z());
        let z0 = -2.0 * h * alpha;
        let one = PolyhedralMeasure::new(c.clone(), vec![Segment::new(Vec3::new(0.0, 0.0, z0), Vec3::new(h, 0.0, z0), Vec3::x()).unwrap()]).unwrap();
        assert!(check_dilute(&one, &p, &plane).ok);

        let d = alpha * h / 2.0;
        let par = PolyhedralMeasure::new(
            c.clone(),
            vec![
                Segment::new(Vec3::zeros(), Vec3::x(), Vec3::x()).unwrap(),
                Segment::new(Vec3::new(0.0, d, 0.0), Vec3::new(1.0, d, 0.0), Vec3::x()).unwrap(),
            ],
        )
        .unwrap();
        assert_eq!(check_dilute(&par, &p, &Domain::Whole).first_violation.unwrap().clause, 'b');

        let a = alpha / 2.0;
        let wedge = PolyhedralMeasure::new(
            c,
            vec![
                Segment::new(Vec3::zeros(), Vec3::x(), Vec3::x()).unwrap(),
                Segment::new(Vec3::zeros(), Vec3::new(a.cos(), a.sin(), 0.0), Vec3::x()).unwrap(),
            ],
        )
        .unwrap();
        assert_eq!(check_dilute(&wedge, &p, &Domain::Whole).first_violation.unwrap().clause, 'c');

        let short = PolyhedralMeasure::unit_square_loop();
        assert_eq!(check_dilute(&short, &DiluteParams::new(2.0, 0.1).unwrap(), &Domain::Whole).first_violation.unwrap().clause, 'a');
        assert!(check_dilute(&short, &DiluteParams::new(1.0, 0.5).unwrap(), &Domain::Whole).ok);
    }

    #[test]
    fn dilute_is_rigid_motion_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sq = PolyhedralMeasure::unit_square_loop();
        let plane = Domain::half_space(Vec3::new(0.0, 0.0, 0.3), Vec3::z());
        for (h, a) in [(1.0, 0.2), (1.0, 0.4), (0.9, 0.35)] {
            let p = DiluteParams::new(h, a).unwrap();
            let base = check_dilute(&sq, &p, &plane);
            let r = crate::elasticity::Rotation::random(&mut rng);
            let shift = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            let mv = |x: &Vec3| r.matrix() * x + shift;
            let mut moved = sq.clone();
            for s in &mut moved.segments {
                s.start = mv(&s.start);
                s.end = mv(&s.end);
            }
            let Domain::HalfSpace { point, normal } = plane else { unreachable!() };
            let moved_plane = Domain::half_space(mv(&point), r.matrix() * normal);
            let other = check_dilute(&moved, &p, &moved_plane);
            assert_eq!(base.ok, other.ok);
            assert_eq!(base.first_violation.map(|v| v.clause), other.first_violation.map(|v| v.clause));
        }
    }

    #[test]
    fn schedule_examples() {
        assert!(schedule_admissible(&ScaleSchedule::new(1.0, 1.0, 0.05, 0.05)).admissible);
        assert!(!schedule_admissible(&ScaleSchedule::new(1.0, 1.0, 0.2, 0.2)).admissible);
        assert!(!schedule_admissible(&ScaleSchedule::new(2.0, 2.0, 0.0, 0.0)).admissible);
        // boundary case decided by the amplitudes
        assert!(schedule_admissible(&ScaleSchedule::new(2.0, 1.0, 0.1, 0.1)).admissible);
        assert!(!schedule_admissible(&ScaleSchedule::new(0.5, 1.0, 0.1, 0.1)).admissible);
    }

    #[test]
    fn schedule_eventual_regime() {
        let s = ScaleSchedule::new(1.0, 1.0, 0.05, 0.05);
        let rep = schedule_admissible(&s);
        let thr = rep.eps_threshold.unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..30 {
            let eps = thr * 10f64.powi(-k);
            assert!(s.strong_dilute_quantity(eps) > 1.0);
            let r = s.log_ratio(eps);
            assert!(r <= prev);
            prev = r;
        }
    }

    #[test]
    fn weighted_length_examples() {
        assert_eq!(weighted_length(&PolyhedralMeasure::empty(), 1), 0.0);
        let m = PolyhedralMeasure::new(BurgersLattice::cubic(), vec![Segment::new(Vec3::zeros(), Vec3::x(), Vec3::new(2.0, 0.0, 0.0)).unwrap()]).unwrap();
        assert_relative_eq!(weighted_length(&m, 2), 4.0);
        assert_relative_eq!(weighted_length(&PolyhedralMeasure::unit_square_loop(), 1), 4.0);
    }

    #[test]
    fn extension_interior_is_identity() {
        let sq = PolyhedralMeasure::unit_square_loop();
        let plane = Domain::half_space(Vec3::new(0.0, 0.0, 1.0), Vec3::z());
        let ext = extend_by_reflection(&sq, &plane, 0.1).unwrap();
        assert_eq!(ext.measure.segments, sq.segments);
        assert_eq!(ext.mass_ratio, 1.0);
    }

    fn straddling_loop(angle: f64) -> PolyhedralMeasure {
        // triangle whose lower edges cross z = 0 at the given incidence angle
        let (s, c) = angle.sin_cos();
        let v = [Vec3::new(-c, 0.0, -s) * 2.0, Vec3::new(c, 0.0, s) * 2.0, Vec3::new(0.0, 3.0, -1.0)];
        PolyhedralMeasure::polygon(BurgersLattice::cubic(), &v, Vec3::y()).unwrap()
    }

    #[test]
    fn extension_closes_crossing_strands() {
        let plane = Domain::half_space(Vec3::zeros(), Vec3::z());
        // orthogonal crossing: a segment along e3 through the plane, closed inside Ω
        let v = [Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 1.0), Vec3::new(1.0, 0.0, -1.0)];
        let m = PolyhedralMeasure::polygon(BurgersLattice::cubic(), &v, Vec3::x()).unwrap();
        let ext = extend_by_reflection(&m, &plane, 0.1).unwrap();
        assert!(frank_rule_residual(&ext.measure) < 1e-12);
        assert!(frank_rule_residual(&m) < 1e-12);
        let mut worst: f64 = 0.0;
        for k in 1..=8 {
            let angle = 0.1 + (PI / 2.0 - 0.1) * k as f64 / 8.0;
            let ext = extend_by_reflection(&straddling_loop(angle), &plane, 0.1).unwrap();
            assert!(frank_rule_residual(&ext.measure) < 1e-12);
            worst = worst.max(ext.mass_ratio);
        }
        assert!(worst <= 2.0 + 1e-12);
        assert!(matches!(extend_by_reflection(&straddling_loop(0.05), &plane, 0.1), Err(Error::TangentialCrossing(_))));
    }

    #[test]
    fn mollifier_normalization() {
        let m = Mollifier::new(0.3).unwrap();
        // radial quadrature of φ_ε over its support
        let total = 4.0 * PI * adaptive(&|r: f64| r * r * m.value(&Vec3::new(r, 0.0, 0.0)), 0.0, 0.3, 1e-14);
        assert_relative_eq!(total, 1.0, epsilon = 1e-8);
        assert_relative_eq!(m.cylinder_mass(0.3), 1.0);
        assert!(m.cylinder_mass(0.15) > 0.5 && m.cylinder_mass(0.15) < 1.0);
        assert!(m.value(&Vec3::new(0.31, 0.0, 0.0)) == 0.0);
    }

    #[test]
    fn mollified_density_properties() {
        let eps = 0.1;
        let moll = Mollifier::new(eps).unwrap();
        let sq = PolyhedralMeasure::unit_square_loop();
        assert_eq!(mollified_curl_density(&sq, &moll, &Vec3::new(0.5, 0.5, 2.0 * eps)), Mat3::zeros());
        // axial oracle: ∫ φ_ε along the axis through the center equals 1D integral
        let seg = PolyhedralMeasure::new(BurgersLattice::cubic(), vec![Segment::new(Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.0, 0.0, 1.0), Vec3::x()).unwrap()]).unwrap();
        let d = mollified_curl_density(&seg, &moll, &Vec3::zeros());
        let oracle = 2.0 * adaptive(&|z: f64| moll.value(&Vec3::new(0.0, 0.0, z)), 0.0, eps, 1e-14);
        assert_relative_eq!(d[(0, 2)], oracle, max_relative = 1e-10);
        assert_eq!(d[(1, 2)], 0.0);
    }

    #[test]
    fn mollified_mass_conservation() {
        let eps = 0.2;
        let moll = Mollifier::new(eps).unwrap();
        let seg = Segment::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.5, 0.0), Vec3::new(1.0, 0.0, 1.0)).unwrap();
        let m = PolyhedralMeasure::new(BurgersLattice::cubic(), vec![seg]).unwrap();
        // integrate over the box in coordinates aligned with the segment
        let t = seg.tangent();
        let u = t.cross(&Vec3::z()).normalize();
        let w = t.cross(&u);
        let gp: Vec<(f64, f64)> = (0..4)
            .flat_map(|k| gauss_interval(12, -eps + 0.5 * eps * k as f64, -eps + 0.5 * eps * (k + 1) as f64))
            .collect();
        let mut total = Mat3::zeros();
        let pieces = 8;
        for pi in 0..pieces {
            let lo = -eps + (seg.length() + 2.0 * eps) * pi as f64 / pieces as f64;
            let hi = lo + (seg.length() + 2.0 * eps) / pieces as f64;
            for &(s, ws) in &gauss_interval(16, lo, hi) {
                for &(a, wa) in &gp {
                    for &(b, wb) in &gp {
                        let x = seg.start + t * s + u * a + w * b;
                        total += mollified_curl_density(&m, &moll, &x) * ws * wa * wb;
                    }
                }
            }
        }
        assert!((total - m.total_matrix()).norm() < 1e-6 * m.total_matrix().norm(), "{total} vs {}", m.total_matrix());
    }

    #[test]
    fn mollified_density_is_linear_and_local() {
        let eps = 0.15;
        let moll = Mollifier::new(eps).unwrap();
        let sq = PolyhedralMeasure::unit_square_loop();
        let doubled = sq.scaled_burgers(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x = Vec3::new(rng.gen_range(-0.5..1.5), rng.gen_range(-0.5..1.5), rng.gen_range(-0.5..0.5));
            let d = mollified_curl_density(&sq, &moll, &x);
            assert!((mollified_curl_density(&doubled, &moll, &x) - d * 2.0).norm() <= 1e-12 * d.norm().max(1.0));
            let dist = sq.segments.iter().map(|s| s.distance_to_point(&x)).fold(f64::INFINITY, f64::min);
            if dist > eps {
                assert_eq!(d, Mat3::zeros());
            }
        }
    }

    #[test]
    fn segment_distance_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..100 {
            let mut p = || Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let a = Segment::new(p(), p(), Vec3::x()).unwrap();
            let b = Segment::new(p(), p(), Vec3::x()).unwrap();
            let mut brute = f64::INFINITY;
            for i in 0..=400 {
                let x = a.start + (a.end - a.start) * (i as f64 / 400.0);
                brute = brute.min(b.distance_to_point(&x));
            }
            let d = a.distance_to_segment(&b);
            assert!(d <= brute + 1e-12 && brute - d < 1e-2, "{d} {brute}");
        }
    }
}
