//! Command-line front end.
//!
//! Payloads are deterministic: the same arguments and seed give the same
//! bytes. The wall-clock timestamp lives only in the [`ResultEnvelope`]
//! header and is excluded from the checksum.
//!
//! Exit codes: 0 success, 1 failed acceptance checks, 2 usage error,
//! 3 invalid input, 4 solver failure (with a JSON diagnostic on stderr).

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::acceptance::{run_suite, AcceptanceOptions, Fault, Suite};
use crate::cell::{solve_linear_cell, solve_nonlinear_cell, CellMesh, CellSpec, NonlinearCellSpec, SolverOptions};
use crate::dislocations::{check_dilute, frank_rule_residual, BurgersLattice, DiluteParams, Domain, PolyhedralMeasure, ScaleSchedule};
use crate::elasticity::{ElasticTensor, EnergyModel, Rotation, Vec3};
use crate::envelope::{relax_envelope, DirectionGrid, Psi0Table};
use crate::error::{Error, Result};
use crate::fields::{gamma_scan, BoxDomain, GammaScanConfig, QuadratureOptions, RecoveryOptions, SmoothStrain};
use crate::selfenergy::solve_self_energy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser, Serialize)]
#[command(name = "linetension", version, about = "Dislocation line-tension energies and their cell problems")]
pub struct Cli {
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Seed for randomized checks.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file (stdout when absent). `csv` or `json` select the format instead.
    #[arg(long, global = true)]
    pub out: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Straight-dislocation self-energy Ψ₀(b, t).
    Selfenergy(SelfenergyArgs),
    /// H¹-elliptic envelope of a tabulated Ψ₀.
    Envelope(EnvelopeArgs),
    /// Hollow-cylinder cell problems.
    #[command(subcommand)]
    Cell(CellCommand),
    /// Rescaled energies of recovery strains against the limit functional.
    GammaScan(GammaArgs),
    /// Frank's rule and diluteness of a measure file.
    CheckMeasure(CheckArgs),
    /// Bundled acceptance suites.
    Accept(AcceptArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SelfenergyArgs {
    /// Elastic tensor JSON (`{"mu":..,"lambda":..}` or Voigt); isotropic μ = 1, λ = 0 by default.
    #[arg(long)]
    pub tensor: Option<PathBuf>,
    /// Burgers vector in lattice coordinates `m,n,p`.
    #[arg(long, default_value = "1,0,0")]
    pub burgers: String,
    /// Line direction `x,y,z`; without it the icosphere of `--level` is scanned.
    #[arg(long)]
    pub direction: Option<String>,
    #[arg(long, default_value_t = 128)]
    pub ntheta: usize,
    #[arg(long, default_value_t = 1)]
    pub level: usize,
    /// Scan every lattice vector with |b| ≤ BMAX instead of `--burgers`.
    #[arg(long)]
    pub bmax: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct EnvelopeArgs {
    /// CSV from a `selfenergy` scan.
    #[arg(long)]
    pub psi0: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub bmax: f64,
    /// Icosphere level of the direction grid.
    #[arg(long, default_value_t = 2)]
    pub level: usize,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
}

#[allow(non_snake_case)]
#[derive(Debug, Args, Serialize)]
pub struct CellArgs {
    #[arg(long, default_value = "1,0,0")]
    pub burgers: String,
    #[arg(long, default_value = "0,0,1")]
    pub direction: String,
    #[arg(long, default_value_t = 8.0)]
    pub h: f64,
    /// Inner radii, comma separated; one row per value.
    #[arg(long, default_value = "0.1")]
    pub r: String,
    #[arg(long = "R", default_value_t = 1.0)]
    pub R: f64,
    /// Penalty weights (nonlinear), one value or one per radius.
    #[arg(long, default_value = "0")]
    pub lambda: String,
    /// Rotation `ax,ay,az,angle` (nonlinear).
    #[arg(long)]
    pub rotation: Option<String>,
    /// Mesh `nr,nt`; defaults to 16 radial cells per decade and 32 angular cells.
    #[arg(long)]
    pub mesh: Option<String>,
    /// Elastic tensor JSON for the linear problem; isotropic μ = 1, ν = 0.3 by default.
    #[arg(long)]
    pub tensor: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellCommand {
    Linear(CellArgs),
    Nonlinear(CellArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GammaArgs {
    #[arg(long)]
    pub measure: PathBuf,
    /// Affine curl-free strain JSON; zero by default.
    #[arg(long)]
    pub beta: Option<PathBuf>,
    #[arg(long)]
    pub rotation: Option<String>,
    #[arg(long, default_value = "1e-2,3e-3,1e-3")]
    pub eps: String,
    /// `H,A,a,c` of `h = H|log ε|^-a`, `α = A|log ε|^-c`.
    #[arg(long, default_value = "0.5,0.5,0.05,0.05")]
    pub schedule: String,
    /// Integration box `x0,y0,z0,x1,y1,z1`; the measure's bounding box padded by `--pad` otherwise.
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    pub pad: f64,
    #[arg(long, default_value_t = 2)]
    pub grid_level: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct CheckArgs {
    #[arg(long)]
    pub measure: PathBuf,
    /// Diluteness parameters `h,alpha`.
    #[arg(long)]
    pub dilute: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct AcceptArgs {
    /// One of selfenergy, identities, envelope, cell, nonlinear, kernel, rigidity, gamma, determinism, convergence, all.
    pub suite: String,
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

/// Command output with its provenance header.
#[derive(Clone, Debug, Serialize)]
pub struct ResultEnvelope {
    pub tool: String,
    pub version: String,
    pub config: serde_json::Value,
    pub timestamp: String,
    pub format: Format,
    pub payload: serde_json::Value,
    pub checksums: Checksums,
}

#[derive(Clone, Debug, Serialize)]
pub struct Checksums {
    /// SHA-256 of the payload bytes as emitted.
    pub payload_sha256: String,
}

/// Deterministic result of a subcommand.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Csv(String),
    Json(serde_json::Value),
}

impl Payload {
    /// Bytes written for the payload; JSON is pretty-printed with sorted keys.
    pub fn render(&self) -> String {
        match self {
            Payload::Csv(s) => s.clone(),
            Payload::Json(v) => serde_json::to_string_pretty(v).expect("payload serializes") + "\n",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub payload: Payload,
    /// Nonzero when the command ran but its checks failed.
    pub status: i32,
    /// Human-readable notes for stderr (not part of the payload).
    pub notes: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn num(x: f64) -> String {
    format!("{x:.17e}")
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{what}: '{p}': {e}"))))
        .collect()
}

fn parse_fixed<const N: usize>(s: &str, what: &str) -> Result<[f64; N]> {
    let v = parse_list(s, what)?;
    v.try_into().map_err(|v: Vec<f64>| Error::Parse(format!("{what}: expected {N} comma-separated numbers, got {}", v.len())))
}

fn parse_vec3(s: &str, what: &str) -> Result<Vec3> {
    Ok(Vec3::from(parse_fixed::<3>(s, what)?))
}

fn parse_rotation(s: Option<&str>) -> Result<Rotation> {
    match s {
        None => Ok(Rotation::identity()),
        Some(s) => {
            let [x, y, z, angle] = parse_fixed::<4>(s, "rotation")?;
            Rotation::from_axis_angle(&Vec3::new(x, y, z), angle)
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn load_tensor(path: &Path) -> Result<ElasticTensor> {
    let text = read_text(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{} at line {}, column {}: {e}", path.display(), e.line(), e.column())))
}

fn load_measure(path: &Path) -> Result<PolyhedralMeasure> {
    PolyhedralMeasure::from_json_str(&read_text(path)?).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Parsed CSV payload.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn float(&self, row: usize, name: &str) -> Result<f64> {
        let c = self.column(name).ok_or_else(|| Error::Parse(format!("missing column {name}")))?;
        self.rows[row][c].parse().map_err(|e| Error::Parse(format!("row {}, column {name}: {e}", row + 1)))
    }
}

/// Documented column sets of the CSV payloads.
pub const SELFENERGY_COLUMNS: [&str; 10] =
    ["bx", "by", "bz", "tx", "ty", "tz", "ntheta", "psi0", "constraint_residual", "equilibrium_residual"];
pub const ENVELOPE_COLUMNS: [&str; 9] = ["bx", "by", "bz", "tx", "ty", "tz", "psi0", "psi_tilde", "cert_depth"];
pub const CELL_COLUMNS: [&str; 7] = ["r_over_R", "h_over_R", "lambda", "value", "gap_to_psi0", "constraint_residual", "iterations"];
pub const GAMMA_COLUMNS: [&str; 5] = ["eps", "F_eps", "F0", "gap", "quadrature_change"];
pub const ACCEPT_COLUMNS: [&str; 6] = ["criterion", "name", "passed", "measured", "tolerance", "detail"];

/// Parses a CSV payload and checks it against `columns`.
pub fn parse_csv(text: &str, columns: &[&str]) -> Result<CsvTable> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.iter().map(String::from).collect();
    if header != columns {
        return Err(Error::Parse(format!("unexpected columns {header:?}, expected {columns:?}")));
    }
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(String::from).collect()).map_err(|e| Error::Parse(e.to_string())))
        .collect::<Result<Vec<Vec<String>>>>()?;
    Ok(CsvTable { header, rows })
}

fn write_csv(columns: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(columns).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

fn selfenergy(a: &SelfenergyArgs) -> Result<Outcome> {
    let c = match &a.tensor {
        Some(p) => load_tensor(p)?,
        None => ElasticTensor::isotropic(1.0, 0.0),
    };
    let lattice = BurgersLattice::cubic();
    let burgers = match a.bmax {
        Some(b) => lattice.ball(b).into_iter().filter(|v| v.norm() > 0.0).collect(),
        None => vec![lattice.to_cartesian(&parse_vec3(&a.burgers, "burgers")?)],
    };
    let directions = match &a.direction {
        Some(d) => vec![parse_vec3(d, "direction")?],
        None => DirectionGrid::icosphere(a.level).directions,
    };
    let jobs: Vec<(Vec3, Vec3)> = burgers.iter().flat_map(|b| directions.iter().map(move |t| (*b, *t))).collect();
    use rayon::prelude::*;
    let rows: Vec<Vec<String>> = jobs
        .par_iter()
        .map(|(b, t)| {
            let r = solve_self_energy(&c, b, t, a.ntheta)?;
            let t = t.normalize();
            Ok(vec![
                num(b.x),
                num(b.y),
                num(b.z),
                num(t.x),
                num(t.y),
                num(t.z),
                a.ntheta.to_string(),
                num(r.value),
                num(r.residuals.constraint),
                num(r.residuals.equilibrium),
            ])
        })
        .collect::<Result<_>>()?;
    Ok(Outcome { payload: Payload::Csv(write_csv(&SELFENERGY_COLUMNS, &rows)?), status: 0, notes: Vec::new() })
}

fn envelope(a: &EnvelopeArgs) -> Result<Outcome> {
    let file = std::fs::File::open(&a.psi0).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", a.psi0.display()))))?;
    let table = Psi0Table::from_csv(file, BurgersLattice::cubic(), a.bmax, DirectionGrid::icosphere(a.level))?;
    let env = relax_envelope(&table, a.max_iter)?;
    let mut buf = Vec::new();
    env.write_csv(&mut buf)?;
    let notes = vec![format!("relaxed in {} sweeps (converged: {})", env.iterations, env.converged)];
    Ok(Outcome { payload: Payload::Csv(String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))?), status: 0, notes })
}

fn cell(cmd: &CellCommand) -> Result<Outcome> {
    let (a, nonlinear) = match cmd {
        CellCommand::Linear(a) => (a, false),
        CellCommand::Nonlinear(a) => (a, true),
    };
    let b = BurgersLattice::cubic().to_cartesian(&parse_vec3(&a.burgers, "burgers")?);
    let t = parse_vec3(&a.direction, "direction")?;
    let radii = parse_list(&a.r, "r")?;
    let lambdas = parse_list(&a.lambda, "lambda")?;
    if lambdas.len() != 1 && lambdas.len() != radii.len() {
        return Err(Error::InvalidArgument("--lambda takes one value or one per radius".into()));
    }
    let fixed_mesh = a.mesh.as_deref().map(|m| parse_fixed::<2>(m, "mesh")).transpose()?;
    let q = parse_rotation(a.rotation.as_deref())?;
    let tensor = match &a.tensor {
        Some(p) => load_tensor(p)?,
        None => ElasticTensor::isotropic_poisson(1.0, 0.3),
    };
    let model = EnergyModel::prototype();
    let mut rows = Vec::new();
    for (k, &r) in radii.iter().enumerate() {
        let lambda = if nonlinear { lambdas[k.min(lambdas.len() - 1)] } else { 0.0 };
        let mesh = match fixed_mesh {
            Some([nr, nt]) => CellMesh { n_rho: nr as usize, n_theta: nt as usize },
            None => CellMesh::per_decade(16, r / a.R, 32),
        };
        let base = CellSpec { b, t, h: a.h, r, R: a.R, mesh };
        let res = if nonlinear {
            solve_nonlinear_cell(&NonlinearCellSpec { base, q, lambda, solver: SolverOptions::default() }, &model)?
        } else {
            solve_linear_cell(&base, &tensor)?
        };
        rows.push(vec![
            num(r / a.R),
            num(a.h / a.R),
            num(lambda),
            num(res.value),
            num(res.value - res.psi0),
            num(res.diagnostics.constraint_residual),
            res.diagnostics.iterations.to_string(),
        ]);
    }
    Ok(Outcome { payload: Payload::Csv(write_csv(&CELL_COLUMNS, &rows)?), status: 0, notes: Vec::new() })
}

fn gamma(a: &GammaArgs, format: Format) -> Result<Outcome> {
    let measure = load_measure(&a.measure)?;
    let beta = match &a.beta {
        Some(p) => SmoothStrain::from_json_str(&read_text(p)?)?,
        None => SmoothStrain::zero(),
    };
    let [h, big_a, sa, sc] = parse_fixed::<4>(&a.schedule, "schedule")?;
    let domain = match &a.domain {
        Some(d) => {
            let [x0, y0, z0, x1, y1, z1] = parse_fixed::<6>(d, "domain")?;
            BoxDomain::new(Vec3::new(x0, y0, z0), Vec3::new(x1, y1, z1))?
        }
        None if measure.is_empty() => return Err(Error::InvalidArgument("an empty measure needs --domain".into())),
        None => BoxDomain::around(&measure, a.pad),
    };
    let cfg = GammaScanConfig {
        beta,
        q: parse_rotation(a.rotation.as_deref())?,
        model: EnergyModel::prototype(),
        eps: parse_list(&a.eps, "eps")?,
        schedule: ScaleSchedule::new(h, big_a, sa, sc),
        domain,
        quadrature: QuadratureOptions::default(),
        recovery: RecoveryOptions::default(),
        grid_level: a.grid_level,
    };
    let rep = gamma_scan(&measure, &cfg)?;
    let payload = match format {
        Format::Json => Payload::Json(serde_json::to_value(&rep).expect("report serializes")),
        Format::Csv => {
            let rows: Vec<Vec<String>> = (0..rep.eps.len())
                .map(|k| vec![num(rep.eps[k]), num(rep.f_eps[k]), num(rep.f0), num(rep.gaps[k]), num(rep.quadrature_change[k])])
                .collect();
            Payload::Csv(write_csv(&GAMMA_COLUMNS, &rows)?)
        }
    };
    let notes = vec![format!("monotone tail: {}", rep.monotone_tail)];
    Ok(Outcome { payload, status: 0, notes })
}

fn check_measure(a: &CheckArgs) -> Result<Outcome> {
    let measure = load_measure(&a.measure)?;
    let residual = frank_rule_residual(&measure);
    let mut out = serde_json::json!({
        "segments": measure.segments.len(),
        "frank_residual": residual,
        "closed": residual <= 1e-9,
    });
    let mut ok = residual <= 1e-9;
    if let Some(d) = &a.dilute {
        let [h, alpha] = parse_fixed::<2>(d, "dilute")?;
        let rep = check_dilute(&measure, &DiluteParams::new(h, alpha)?, &Domain::Whole);
        ok &= rep.ok;
        out["dilute"] = serde_json::to_value(&rep).expect("report serializes");
    }
    Ok(Outcome { payload: Payload::Json(out), status: if ok { 0 } else { 3 }, notes: Vec::new() })
}

fn accept(a: &AcceptArgs, seed: u64, format: Format) -> Result<Outcome> {
    let suite = Suite::from_str(&a.suite)?;
    let fault = match a.inject_fault.as_deref() {
        None => None,
        Some("broken-minor-symmetry") => Some(Fault::BrokenMinorSymmetry),
        Some(other) => return Err(Error::InvalidArgument(format!("unknown fault '{other}'"))),
    };
    let run = run_suite(suite, &AcceptanceOptions { seed, fault });
    let notes = run
        .timings
        .iter()
        .map(|t| format!("criterion {} {}: {:.2} s (budget {} s)", t.criterion, t.label, t.seconds, t.budget))
        .collect();
    let payload = match format {
        Format::Json => Payload::Json(serde_json::to_value(&run.report).expect("report serializes")),
        Format::Csv => {
            let rows: Vec<Vec<String>> = run
                .report
                .checks
                .iter()
                .map(|c| vec![c.criterion.to_string(), c.name.clone(), c.passed.to_string(), num(c.measured), num(c.tolerance), c.detail.clone()])
                .collect();
            Payload::Csv(write_csv(&ACCEPT_COLUMNS, &rows)?)
        }
    };
    Ok(Outcome { payload, status: if run.report.passed { 0 } else { 1 }, notes })
}

impl Cli {
    /// Output format: `--format`, else `--out csv|json`, else the subcommand's native format.
    pub fn format(&self) -> Format {
        if let Some(f) = self.format {
            return f;
        }
        match self.out.as_deref() {
            Some("csv") => Format::Csv,
            Some("json") => Format::Json,
            _ => match self.command {
                Command::GammaScan(_) | Command::CheckMeasure(_) | Command::Accept(_) => Format::Json,
                _ => Format::Csv,
            },
        }
    }

    /// Output path, if `--out` names one.
    pub fn out_path(&self) -> Option<PathBuf> {
        self.out.as_deref().filter(|o| *o != "csv" && *o != "json").map(PathBuf::from)
    }
}

/// Runs the subcommand on a pool of `cli.threads` workers.
pub fn dispatch(cli: &Cli) -> Result<Outcome> {
    if cli.threads == 0 {
        return Err(Error::InvalidArgument("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let format = cli.format();
    pool.install(|| match &cli.command {
        Command::Selfenergy(a) => selfenergy(a),
        Command::Envelope(a) => envelope(a),
        Command::Cell(c) => cell(c),
        Command::GammaScan(a) => gamma(a, format),
        Command::CheckMeasure(a) => check_measure(a),
        Command::Accept(a) => accept(a, cli.seed, format),
    })
}

/// Wraps a payload in its envelope.
pub fn envelope_for(cli: &Cli, payload: &Payload) -> ResultEnvelope {
    let rendered = payload.render();
    let mut config = serde_json::to_value(cli).expect("config serializes");
    config["format"] = serde_json::to_value(cli.format()).expect("format serializes");
    ResultEnvelope {
        tool: "linetension".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config,
        timestamp: chrono::Utc::now().to_rfc3339(),
        format: cli.format(),
        payload: match payload {
            Payload::Json(v) => v.clone(),
            Payload::Csv(s) => serde_json::Value::String(s.clone()),
        },
        checksums: Checksums { payload_sha256: sha256_hex(rendered.as_bytes()) },
    }
}

/// Exit code of an error: 3 for invalid input, 4 for solver failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_)
        | Error::Parse(_)
        | Error::Io(_)
        | Error::AssumptionViolation { .. }
        | Error::TangentialCrossing(_)
        | Error::OverlappingCores(_)
        | Error::DilutenessViolation { .. } => 3,
        _ => 4,
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::DegenerateProjection(_) => "degenerate_projection",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::AssumptionViolation { .. } => "assumption_violation",
        Error::NonFinite(_) => "non_finite",
        Error::SingularSystem(_) => "singular_system",
        Error::NonConvergence(_) => "non_convergence",
        Error::LineSearch(_) => "line_search",
        Error::OnLine(_) => "on_line",
        Error::TangentialCrossing(_) => "tangential_crossing",
        Error::OverlappingCores(_) => "overlapping_cores",
        Error::DilutenessViolation { .. } => "diluteness_violation",
        Error::GrowthViolation(_) => "growth_violation",
        Error::NonMonotone(_) => "non_monotone",
        Error::CertificateCycle(_) => "certificate_cycle",
        Error::UnresolvedCore(_) => "unresolved_core",
        Error::Parse(_) => "parse",
        Error::Io(_) => "io",
    }
}

/// JSON diagnostic written to stderr on failure.
pub fn diagnostic(err: &Error) -> String {
    serde_json::json!({ "error": error_kind(err), "message": err.to_string(), "exit_code": exit_code(err) }).to_string()
}

/// Parses `args`, runs the command and writes its output; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match dispatch(&cli) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{}", diagnostic(&e));
            return exit_code(&e);
        }
    };
    for n in &outcome.notes {
        eprintln!("{n}");
    }
    let format = cli.format();
    let text = match format {
        Format::Json => {
            let env = envelope_for(&cli, &outcome.payload);
            serde_json::to_string_pretty(&env).expect("envelope serializes") + "\n"
        }
        Format::Csv => outcome.payload.render(),
    };
    let written = match cli.out_path() {
        Some(path) => std::fs::write(&path, &text).and_then(|_| {
            if format == Format::Csv {
                // provenance header next to the bare CSV
                let env = envelope_for(&cli, &outcome.payload);
                let mut side = path.clone().into_os_string();
                side.push(".envelope.json");
                std::fs::write(side, serde_json::to_string_pretty(&env).expect("envelope serializes"))
            } else {
                Ok(())
            }
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    };
    if let Err(e) = written {
        let e = Error::Io(e);
        eprintln!("{}", diagnostic(&e));
        return exit_code(&e);
    }
    outcome.status
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_lossless() {
        let xs = [0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.079577471545947673];
        let rows: Vec<Vec<String>> = xs.iter().map(|x| vec![num(*x), "7".into()]).collect();
        let text = write_csv(&["value", "n"], &rows).unwrap();
        let table = parse_csv(&text, &["value", "n"]).unwrap();
        for (k, x) in xs.iter().enumerate() {
            assert_eq!(table.float(k, "value").unwrap().to_bits(), x.to_bits());
        }
        assert!(parse_csv(&text, &["n", "value"]).is_err());
    }

    #[test]
    fn parses_lists_and_rotations() {
        assert_eq!(parse_vec3("1, 0,2", "b").unwrap(), Vec3::new(1.0, 0.0, 2.0));
        assert!(matches!(parse_vec3("1,2", "b"), Err(Error::Parse(_))));
        assert!(matches!(parse_vec3("1,x,2", "b"), Err(Error::Parse(_))));
        let q = parse_rotation(Some("0,0,1,1.5707963267948966")).unwrap();
        assert!((q.apply(&Vec3::x()) - Vec3::y()).norm() < 1e-15);
        assert!(parse_rotation(Some("0,0,0,1")).is_err());
    }

    #[test]
    fn format_selection() {
        let cli = Cli::try_parse_from(["linetension", "--out", "json", "selfenergy", "--direction", "0,0,1"]).unwrap();
        assert_eq!(cli.format(), Format::Json);
        assert_eq!(cli.out_path(), None);
        let cli = Cli::try_parse_from(["linetension", "check-measure", "--measure", "m.json"]).unwrap();
        assert_eq!(cli.format(), Format::Json);
        let cli = Cli::try_parse_from(["linetension", "--out", "x.csv", "cell", "linear"]).unwrap();
        assert_eq!(cli.format(), Format::Csv);
        assert_eq!(cli.out_path(), Some(PathBuf::from("x.csv")));
    }

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&Error::Parse("x".into())), 3);
        assert_eq!(exit_code(&Error::NonConvergence("x".into())), 4);
        let d: serde_json::Value = serde_json::from_str(&diagnostic(&Error::SingularSystem("k".into()))).unwrap();
        assert_eq!(d["exit_code"], 4);
        assert_eq!(d["error"], "singular_system");
    }
}
