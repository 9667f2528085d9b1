//! Bundled acceptance checks.
//!
//! Each check compares a computed quantity against an independent oracle or
//! an identity with a pinned tolerance. Checks never abort a run: solver
//! errors become failed entries. Wall-clock timings are collected separately
//! so that the payload ([`SuiteReport`]) is reproducible byte for byte.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cell::{
    cell_convergence_scan, solve_linear_cell, solve_nonlinear_cell, CellMesh, CellScanConfig, CellSpec, NonlinearCellSpec,
    ScanPoint, SolverOptions,
};
use crate::dislocations::{BurgersLattice, PolyhedralMeasure, ScaleSchedule};
use crate::elasticity::{sym, ElasticTensor, EnergyModel, Mat3, Rotation, Vec3};
use crate::envelope::{relax_envelope, verify_growth, DirectionGrid, Psi0Table};
use crate::error::{Error, Result};
use crate::fields::{
    gamma_scan, kernel_estimates, log_log_slope, path_circulation, probe_grid, probe_loop, BoxDomain, GammaScanConfig,
    KernelField, LoopShape, QuadratureOptions, RecoveryOptions, SmoothStrain,
};
use crate::selfenergy::solve_self_energy;

/// One pass/fail entry.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub criterion: u8,
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] criterion {} {}: measured {:.6e}, tolerance {:.3e}{}",
            if self.passed { "PASS" } else { "FAIL" },
            self.criterion,
            self.name,
            self.measured,
            self.tolerance,
            if self.detail.is_empty() { String::new() } else { format!(" ({})", self.detail) }
        )
    }
}

/// Wall-clock time of one stage against its budget.
#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub criterion: u8,
    pub label: String,
    pub seconds: f64,
    pub budget: f64,
}

impl Timing {
    pub fn within_budget(&self) -> bool {
        self.seconds < self.budget
    }
}

/// Deterministic part of a suite run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl SuiteReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Checks of one criterion.
    pub fn criterion(&self, k: u8) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| c.criterion == k).collect()
    }
}

#[derive(Clone, Debug)]
pub struct SuiteRun {
    pub report: SuiteReport,
    pub timings: Vec<Timing>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Selfenergy,
    Identities,
    Envelope,
    Cell,
    Nonlinear,
    Kernel,
    Rigidity,
    Gamma,
    Determinism,
    Convergence,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 11] = [
        "selfenergy",
        "identities",
        "envelope",
        "cell",
        "nonlinear",
        "kernel",
        "rigidity",
        "gamma",
        "determinism",
        "convergence",
        "all",
    ];

    pub fn name(&self) -> &'static str {
        Self::NAMES[*self as usize]
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use Suite::*;
        let all = [Selfenergy, Identities, Envelope, Cell, Nonlinear, Kernel, Rigidity, Gamma, Determinism, Convergence, All];
        all.into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite '{s}' (expected one of {})", Self::NAMES.join(", "))))
    }
}

/// Deliberate defects for exercising the failure paths of the suites.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Couples skew strains into the stress of the fixture tensor.
    BrokenMinorSymmetry,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AcceptanceOptions {
    pub seed: u64,
    pub fault: Option<Fault>,
}

struct Runner {
    opts: AcceptanceOptions,
    checks: Vec<CheckResult>,
    timings: Vec<Timing>,
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(", ")
}

fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

impl Runner {
    fn push(&mut self, criterion: u8, name: &str, measured: f64, tolerance: f64, passed: bool, detail: String) {
        self.checks.push(CheckResult { criterion, name: name.into(), passed: passed && measured.is_finite(), measured, tolerance, detail });
    }

    /// `measured ≤ tolerance`.
    fn below(&mut self, criterion: u8, name: &str, measured: f64, tolerance: f64, detail: String) {
        self.push(criterion, name, measured, tolerance, measured <= tolerance, detail);
    }

    fn failed(&mut self, criterion: u8, name: &str, err: &Error) {
        self.push(criterion, name, f64::NAN, f64::NAN, false, format!("error: {err}"));
    }

    fn time<T>(&mut self, criterion: u8, label: &str, budget: f64, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(Timing { criterion, label: label.into(), seconds: start.elapsed().as_secs_f64(), budget });
        out
    }

    fn fixture_tensor(&self) -> ElasticTensor {
        let mut c = ElasticTensor::cubic(1.7, 1.2, 0.75);
        if self.opts.fault == Some(Fault::BrokenMinorSymmetry) {
            let v = c.get(0, 0, 0, 1);
            c.set(0, 0, 0, 1, v + 0.3);
        }
        c
    }

    // 1. isotropic screw/edge against the classical prelogarithmic factors
    fn isotropic_oracle(&mut self) {
        let nu = 0.3;
        let c = ElasticTensor::isotropic_poisson(1.0, nu);
        let cases = [("screw", Vec3::z(), 1.0 / (4.0 * PI)), ("edge", Vec3::x(), 1.0 / (4.0 * PI * (1.0 - nu)))];
        for (name, b, oracle) in cases {
            let label = format!("isotropic_{name}_prefactor");
            match self.time(1, &label, 1.0, || solve_self_energy(&c, &b, &Vec3::z(), 256)) {
                Ok(r) => self.below(1, &label, rel(r.value, oracle), 1e-2, format!("psi0 = {:.6}, oracle = {oracle:.6}", r.value)),
                Err(e) => self.failed(1, &label, &e),
            }
        }
    }

    // 2. Ψ₀(λb, t) = λ²Ψ₀(b, t)
    fn homogeneity(&mut self) {
        let c = self.fixture_tensor();
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed);
        let mut worst: f64 = 0.0;
        let mut err = None;
        for _ in 0..20 {
            let b = random_unit(&mut rng) * rng.gen_range(0.5..2.0);
            let t = random_unit(&mut rng);
            let base = match solve_self_energy(&c, &b, &t, 64) {
                Ok(r) => r.value,
                Err(e) => {
                    err = Some(e);
                    break;
                }
            };
            for lambda in [2.0, 3.0, 0.5] {
                match solve_self_energy(&c, &(b * lambda), &t, 64) {
                    Ok(r) => worst = worst.max(rel(r.value, lambda * lambda * base)),
                    Err(e) => err = Some(e),
                }
            }
        }
        match err {
            Some(e) => self.failed(2, "quadratic_homogeneity", &e),
            None => self.below(2, "quadratic_homogeneity", worst, 1e-8, "20 random (b, t), lambda in {2, 3, 1/2}".into()),
        }
    }

    // 3. growth of Ψ₀ and its envelope on the ball |b| ≤ 3 × 642 directions
    fn growth(&mut self) {
        let c = ElasticTensor::isotropic_poisson(1.0, 0.3);
        let grid = DirectionGrid::icosphere(3);
        let n_dir = grid.directions.len();
        let run = self.time(3, "growth_and_envelope", 300.0, || -> Result<_> {
            let psi0 = Psi0Table::from_tensor(&c, BurgersLattice::cubic(), 3.0, grid, 64)?;
            let env = relax_envelope(&psi0, 500)?;
            let growth = verify_growth(&env)?;
            Ok((psi0, env, growth))
        });
        let (psi0, env, growth) = match run {
            Ok(x) => x,
            Err(e) => return self.failed(3, "growth_and_envelope", &e),
        };
        self.push(3, "direction_count", n_dir as f64, 642.0, n_dir == 642, String::new());
        let (mut q0, mut q1) = (f64::INFINITY, 0.0f64);
        for (k, v) in psi0.values.iter().enumerate() {
            let b2 = psi0.burgers[k / n_dir].norm_squared();
            if b2 > 0.0 {
                q0 = q0.min(v / b2);
                q1 = q1.max(v / b2);
            }
        }
        self.push(3, "quadratic_growth_constants", q0, 0.0, q0 > 0.0 && q0 <= q1, format!("c0 = {q0:.6}, c1 = {q1:.6}"));
        self.push(
            3,
            "envelope_linear_growth_constants",
            growth.c0,
            0.0,
            growth.c0 > 0.0 && growth.c0 <= growth.c1,
            format!("c0 = {:.6}, c1 = {:.6}", growth.c0, growth.c1),
        );
        let excess = env.values.iter().zip(&psi0.values).map(|(e, p)| e - p).fold(f64::NEG_INFINITY, f64::max);
        self.below(3, "envelope_below_psi0", excess, 0.0, "max(psi_tilde - psi0)".into());
        let b0 = Vec3::x();
        let gain = psi0.burgers_index(&(b0 * 2.0)).map(|ib| {
            (0..n_dir).map(|it| 1.0 - env.value(ib, it) / psi0.get(ib, it)).fold(f64::INFINITY, f64::min)
        });
        match gain {
            Some(g) => self.push(3, "doubled_burgers_gain", g, 0.4, g >= 0.4, "min over directions of 1 - psi_tilde/psi0 at 2b0".into()),
            None => self.failed(3, "doubled_burgers_gain", &Error::InvalidArgument("2b0 outside the table".into())),
        }
    }

    fn linear_spec(r: f64) -> CellSpec {
        CellSpec { b: Vec3::x(), t: Vec3::z(), h: 8.0, r, R: 1.0, mesh: CellMesh::per_decade(16, r, 32) }
    }

    // 4. linear cell asymptotics at h/R = 8
    fn linear_cell(&mut self) {
        let c = ElasticTensor::isotropic_poisson(1.0, 0.3);
        let mut values = Vec::new();
        let mut psi0 = f64::NAN;
        for r in [1e-1, 1e-2, 1e-3] {
            match self.time(4, &format!("linear_cell_r{r:e}"), 120.0, || solve_linear_cell(&Self::linear_spec(r), &c)) {
                Ok(res) => {
                    psi0 = res.psi0;
                    values.push(res.value);
                }
                Err(e) => return self.failed(4, "linear_cell", &e),
            }
        }
        let ratio = values.iter().fold(0.0f64, |m, v| m.max(v / psi0));
        self.below(4, "linear_cell_below_psi0", ratio, 1.02, "max Psi/Psi0 over r/R in {1e-1, 1e-2, 1e-3}".into());
        let gaps: Vec<f64> = values.iter().map(|v| psi0 - v).collect();
        let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
        self.push(4, "linear_gap_monotone", gaps[gaps.len() - 1], gaps[0], decreasing, format!("gaps {}", list(&gaps)));
        let cub = self.fixture_tensor();
        let s = CellSpec { b: Vec3::new(1.0, 0.0, 1.0), t: Vec3::new(0.0, 0.6, 0.8), h: 8.0, r: 0.05, R: 1.0, mesh: CellMesh { n_rho: 16, n_theta: 16 } };
        match solve_linear_cell(&s, &cub).and_then(|a| Ok((a.value, solve_linear_cell(&s.scaled(5.0), &cub)?.value))) {
            Ok((a, b)) => self.below(4, "linear_scaling_k5", rel(a, b), 1e-9, String::new()),
            Err(e) => self.failed(4, "linear_scaling_k5", &e),
        }
    }

    // 5. nonlinear identities; `nested` adds the schedule scan
    fn nonlinear_identities(&mut self, nested: bool) {
        let c = self.fixture_tensor();
        // the linearization of a frame-indifferent energy annihilates skew strains
        let defect = c.skew_defect() / c.mandel().norm();
        self.below(5, "tensor_frame_indifference", defect, 1e-12, "max |C W| over unit skew W, relative".into());

        let model = EnergyModel::prototype();
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed.wrapping_add(1));
        let base = CellSpec { b: Vec3::x(), t: Vec3::z(), h: 8.0, r: 0.1, R: 1.0, mesh: CellMesh { n_rho: 8, n_theta: 16 } };
        let solve = |s: &NonlinearCellSpec| solve_nonlinear_cell(s, &model).map(|r| r.value);
        let (mut frame, mut scaling) = (0.0f64, 0.0f64);
        let start = Instant::now();
        for _ in 0..5 {
            let q = Rotation::random(&mut rng);
            let b = random_unit(&mut rng);
            let s = NonlinearCellSpec { base: CellSpec { b, ..base }, q, lambda: 0.1, solver: SolverOptions::default() };
            let pulled = NonlinearCellSpec { base: CellSpec { b: q.matrix().transpose() * b, ..base }, q: Rotation::identity(), ..s };
            let scaled = NonlinearCellSpec { base: s.base.scaled(3.0), ..s };
            match (solve(&s), solve(&pulled), solve(&scaled)) {
                (Ok(v), Ok(vp), Ok(vs)) => {
                    frame = frame.max(rel(v, vp));
                    scaling = scaling.max(rel(v, vs));
                }
                (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => return self.failed(5, "nonlinear_cell", &e),
            }
        }
        self.below(5, "nonlinear_frame_indifference", frame, 1e-8, "5 random rotations".into());
        self.below(5, "nonlinear_scaling_k3", scaling, 1e-8, "5 random rotations".into());

        let q = Rotation::from_axis_angle(&Vec3::new(1.0, 1.0, 0.0), 0.4).expect("axis");
        let lambdas = [0.0, 1e-2, 1e-1, 1.0, 10.0];
        let mut vals = Vec::new();
        for l in lambdas {
            match solve(&NonlinearCellSpec { base, q, lambda: l, solver: SolverOptions::default() }) {
                Ok(v) => vals.push(v),
                Err(e) => return self.failed(5, "nonlinear_lambda_monotone", &e),
            }
        }
        let drop = vals.windows(2).map(|w| (w[0] - w[1]) / w[0].abs().max(1e-300)).fold(f64::NEG_INFINITY, f64::max);
        self.below(5, "nonlinear_lambda_monotone", drop, 1e-12, format!("values {}", list(&vals)));

        if nested {
            let cfg = CellScanConfig {
                b: Vec3::x(),
                t: Vec3::z(),
                q,
                tensor: ElasticTensor::isotropic_poisson(1.0, 0.3),
                model: model.clone(),
                points: vec![
                    ScanPoint { r_over_R: 1e-1, h_over_R: 8.0, lambda: 1.0 },
                    ScanPoint { r_over_R: 1e-2, h_over_R: 8.0, lambda: 1e-1 },
                    ScanPoint { r_over_R: 1e-3, h_over_R: 8.0, lambda: 1e-2 },
                ],
                cells_per_decade: 16,
                n_theta: 32,
                solver: SolverOptions::default(),
                nonlinear: true,
            };
            match cell_convergence_scan(&cfg) {
                Ok(rep) => {
                    let gaps: Vec<f64> = rep.rows.iter().filter(|r| r.kind == "nonlinear").map(|r| r.gap_to_psi0).collect();
                    let ok = gaps.windows(2).all(|w| w[1] < w[0]);
                    self.push(5, "nonlinear_nested_gap_decreasing", gaps[gaps.len() - 1], gaps[0], ok, format!("gaps {}", list(&gaps)));
                }
                Err(e) => self.failed(5, "nonlinear_nested_gap_decreasing", &e),
            }
        }
        self.timings.push(Timing { criterion: 5, label: "nonlinear_identities".into(), seconds: start.elapsed().as_secs_f64(), budget: 600.0 });
    }

    // 6. kernel-field estimates and circulation quantization
    fn kernel(&mut self) {
        let m = PolyhedralMeasure::unit_square_loop();
        let k = KernelField::new(&m);
        let dom = BoxDomain::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(2.0, 2.0, 1.0)).expect("box");
        let est: Result<Vec<_>> = [24, 48, 96].iter().map(|&n| kernel_estimates(&k, &probe_grid(&k, &dom, n, 1e-3))).collect();
        match est {
            Ok(est) => {
                let var = |f: &dyn Fn(usize) -> f64| est.windows(2).enumerate().map(|(i, _)| rel(f(i + 1), f(i))).fold(0.0, f64::max);
                let far = var(&|i| est[i].far);
                let near = var(&|i| est[i].near);
                self.below(6, "far_estimate_stability", far, 0.2, format!("C = {:.4}", est[2].far));
                self.below(6, "near_estimate_stability", near, 0.2, format!("C = {:.4}", est[2].near));
            }
            Err(e) => self.failed(6, "kernel_estimates", &e),
        }
        let mut worst: f64 = 0.0;
        for s in &m.segments {
            let b = m.burgers_of(s);
            for shape in [LoopShape::Circle, LoopShape::Square, LoopShape::TiltedEllipse] {
                let path = probe_loop(&s.midpoint(), &s.tangent(), 0.05, shape, 96);
                match path_circulation(|x| k.eval(x), &path, 12) {
                    Ok(circ) => worst = worst.max((circ - b).norm() / b.norm()),
                    Err(e) => return self.failed(6, "circulation_quantization", &e),
                }
            }
        }
        self.below(6, "circulation_quantization", worst, 1e-3, "three loop shapes around each side".into());
    }

    // 7. rigidity ratio of nonlinear minimizers across core radii
    fn rigidity(&mut self) {
        let model = EnergyModel::prototype();
        let q = Rotation::from_axis_angle(&Vec3::new(1.0, 1.0, 0.0), 0.4).expect("axis");
        let mut ratios = Vec::new();
        for r in [0.1, 0.05, 0.025] {
            let spec = NonlinearCellSpec { base: Self::linear_spec(r), q, lambda: 0.1, solver: SolverOptions::default() };
            match solve_nonlinear_cell(&spec, &model) {
                Ok(res) => match res.diagnostics.rigidity_ratio {
                    Some(x) => ratios.push(x),
                    None => return self.failed(7, "rigidity_ratio_spread", &Error::NonFinite("rigidity ratio".into())),
                },
                Err(e) => return self.failed(7, "rigidity_ratio_spread", &e),
            }
        }
        let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), x| (a.min(*x), b.max(*x)));
        self.push(7, "rigidity_ratio_spread", hi / lo, 3.0, lo > 0.0 && hi / lo < 3.0, format!("ratios {}", list(&ratios)));
    }

    // 8. Γ-scan trend and the μ = 0 affine rate
    fn gamma(&mut self) {
        let measure = PolyhedralMeasure::unit_square_loop();
        let cfg = GammaScanConfig {
            beta: SmoothStrain::zero(),
            q: Rotation::identity(),
            model: EnergyModel::prototype(),
            eps: vec![1e-2, 3e-3, 1e-3],
            schedule: ScaleSchedule::new(0.5, 0.5, 0.05, 0.05),
            domain: BoxDomain::new(Vec3::new(-0.5, -0.5, -1.0), Vec3::new(1.5, 1.5, 1.0)).expect("box"),
            quadrature: QuadratureOptions::default(),
            recovery: RecoveryOptions::default(),
            grid_level: 2,
        };
        match self.time(8, "gamma_scan_square_loop", 900.0, || gamma_scan(&measure, &cfg)) {
            Ok(rep) => {
                let mono = rep.gaps.windows(2).all(|w| w[1] <= w[0]);
                self.push(8, "gamma_gaps_nonincreasing", rep.gaps[rep.gaps.len() - 1], rep.gaps[0], mono, format!("gaps {}", list(&rep.gaps)));
                let ratio = rep.f_eps[rep.f_eps.len() - 1] / rep.f0;
                self.push(8, "gamma_ratio_finest", ratio, 1.5, (0.5..=1.5).contains(&ratio), format!("F0 = {:.6}", rep.f0));
            }
            Err(e) => self.failed(8, "gamma_scan_square_loop", &e),
        }

        let e = Mat3::new(0.3, 0.1, 0.0, 0.1, -0.2, 0.05, 0.0, 0.05, 0.1);
        let w = Mat3::new(0.0, 0.4, -0.2, -0.4, 0.0, 0.3, 0.2, -0.3, 0.0);
        let domain = BoxDomain::new(Vec3::zeros(), Vec3::new(1.0, 2.0, 0.5)).expect("box");
        let oracle = sym(&e).norm_squared() * domain.volume();
        let affine = GammaScanConfig {
            beta: SmoothStrain::constant(e + w),
            eps: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            domain,
            ..cfg
        };
        match gamma_scan(&PolyhedralMeasure::empty(), &affine) {
            Ok(rep) => {
                self.below(8, "affine_limit_bulk_term", rel(rep.f0, oracle), 1e-12, String::new());
                let deltas: Vec<f64> = rep.eps.iter().map(|x| x * x.ln().abs().sqrt()).collect();
                let gaps: Vec<f64> = rep.f_eps.iter().map(|f| (f - oracle).abs()).collect();
                let slope = log_log_slope(&deltas, &gaps);
                self.push(8, "affine_gap_rate", slope, 1.2, (0.8..=1.2).contains(&slope), "log-log slope against eps sqrt|log eps|".into());
            }
            Err(e) => self.failed(8, "affine_gap_rate", &e),
        }
    }

    // 9. identical payloads on repeated runs and across thread counts
    fn determinism(&mut self) {
        let probe = |threads: usize, opts: AcceptanceOptions| -> Result<String> {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(|| {
                let mut r = Runner { opts, checks: Vec::new(), timings: Vec::new() };
                r.isotropic_oracle();
                r.homogeneity();
                r.kernel();
                r.nonlinear_identities(false);
                r.finish("determinism-probe").report.to_json()
            }))
        };
        let runs: Result<Vec<String>> = [1, 1, 2].iter().map(|&n| probe(n, self.opts)).collect();
        match runs {
            Ok(p) => {
                let same = p[0] == p[1] && p[1] == p[2];
                let differing = p.windows(2).filter(|w| w[0] != w[1]).count();
                self.push(9, "byte_identical_payloads", differing as f64, 0.0, same, "two runs on 1 thread, one on 2 threads".into());
            }
            Err(e) => self.failed(9, "byte_identical_payloads", &e),
        }
    }

    fn finish(self, suite: &str) -> SuiteRun {
        let passed = self.checks.iter().all(|c| c.passed);
        SuiteRun { report: SuiteReport { suite: suite.into(), seed: self.opts.seed, checks: self.checks, passed }, timings: self.timings }
    }
}

/// Runs a named suite. Failures are report entries, never errors.
pub fn run_suite(suite: Suite, opts: &AcceptanceOptions) -> SuiteRun {
    let mut r = Runner { opts: *opts, checks: Vec::new(), timings: Vec::new() };
    match suite {
        Suite::Selfenergy => {
            r.isotropic_oracle();
            r.homogeneity();
        }
        Suite::Identities => {
            r.homogeneity();
            r.nonlinear_identities(false);
        }
        Suite::Envelope => r.growth(),
        Suite::Cell => r.linear_cell(),
        Suite::Nonlinear => r.nonlinear_identities(true),
        Suite::Kernel => r.kernel(),
        Suite::Rigidity => r.rigidity(),
        Suite::Gamma => r.gamma(),
        Suite::Determinism => r.determinism(),
        Suite::Convergence => {
            r.linear_cell();
            r.nonlinear_identities(true);
            r.rigidity();
            r.gamma();
        }
        Suite::All => {
            r.isotropic_oracle();
            r.homogeneity();
            r.growth();
            r.linear_cell();
            r.nonlinear_identities(true);
            r.kernel();
            r.rigidity();
            r.gamma();
            r.determinism();
        }
    }
    r.finish(suite.name())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for name in Suite::NAMES {
            assert_eq!(name.parse::<Suite>().unwrap().name(), name);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn fault_breaks_frame_indifference_only_there() {
        let run = run_suite(Suite::Identities, &AcceptanceOptions { seed: 0, fault: Some(Fault::BrokenMinorSymmetry) });
        let failed: Vec<&str> = run.report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        assert!(failed.contains(&"tensor_frame_indifference"), "{failed:?}");
        let clean = run_suite(Suite::Identities, &AcceptanceOptions::default());
        assert!(clean.report.passed, "{:#?}", clean.report.checks);
    }
}
