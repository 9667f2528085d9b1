//! Upper approximation of the H¹-elliptic envelope `Ψ̃₀` by iterated
//! splitting relaxation on a lattice ball × geodesic direction grid.
//!
//! Two moves generate the competitor microstructures: replacing one line of
//! Burgers vector `b` by two coincident lines `b₁ + b₂ = b`, and replacing a
//! unit step along `t` by a two-leg path `ℓ₁t₁ + ℓ₂t₂ = t`. The iteration
//! starts from `Ψ₀` and is nonincreasing; its fixed point is subadditive in
//! `b` and satisfies the two-leg triangle inequality on the grid.

use std::collections::HashMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dislocations::{BurgersLattice, PolyhedralMeasure, Segment};
use crate::elasticity::{ElasticTensor, Mat3, Vec3};
use crate::error::{Error, Result};
use crate::selfenergy::prelog_matrix;

/// Geodesic icosphere: vertices of level `L` are the first vertices of level `L+1`.
#[derive(Clone, Debug)]
pub struct DirectionGrid {
    pub directions: Vec<Vec3>,
    /// Triangles of the finest level; indices into `directions`.
    pub faces: Vec<[usize; 3]>,
    pub level: usize,
}

impl DirectionGrid {
    pub fn icosphere(level: usize) -> Self {
        let p = (1.0 + 5f64.sqrt()) / 2.0;
        let mut v: Vec<Vec3> = [
            (-1.0, p, 0.0),
            (1.0, p, 0.0),
            (-1.0, -p, 0.0),
            (1.0, -p, 0.0),
            (0.0, -1.0, p),
            (0.0, 1.0, p),
            (0.0, -1.0, -p),
            (0.0, 1.0, -p),
            (p, 0.0, -1.0),
            (p, 0.0, 1.0),
            (-p, 0.0, -1.0),
            (-p, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
        .collect();
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..level {
            let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
            let mut next = Vec::with_capacity(faces.len() * 4);
            let mut midpoint = |a: usize, b: usize, v: &mut Vec<Vec3>| {
                let key = (a.min(b), a.max(b));
                *mid.entry(key).or_insert_with(|| {
                    v.push(((v[a] + v[b]) * 0.5).normalize());
                    v.len() - 1
                })
            };
            for f in &faces {
                let a = midpoint(f[0], f[1], &mut v);
                let b = midpoint(f[1], f[2], &mut v);
                let c = midpoint(f[2], f[0], &mut v);
                next.extend_from_slice(&[[f[0], a, c], [f[1], b, a], [f[2], c, b], [a, b, c]]);
            }
            faces = next;
        }
        Self { directions: v, faces, level }
    }

    /// Appends directions not already present (within 1e-12).
    pub fn with_extra(mut self, extra: &[Vec3]) -> Self {
        for t in extra {
            let t = t.normalize();
            if self.find(&t).is_none() {
                self.directions.push(t);
            }
        }
        self
    }

    pub fn find(&self, t: &Vec3) -> Option<usize> {
        self.directions.iter().position(|d| (d - t).norm() <= 1e-12)
    }

    /// Containing face and barycentric weights of the ray through `t`.
    pub fn locate(&self, t: &Vec3) -> Option<([usize; 3], [f64; 3])> {
        for f in &self.faces {
            let m = Mat3::from_columns(&[self.directions[f[0]], self.directions[f[1]], self.directions[f[2]]]);
            if let Some(inv) = m.try_inverse() {
                let w = inv * t;
                if w.iter().all(|x| *x >= -1e-12) {
                    let s = w.sum();
                    return Some((*f, [w[0] / s, w[1] / s, w[2] / s]));
                }
            }
        }
        None
    }
}

/// `Ψ₀` (or any line-tension density) sampled on lattice ball × directions.
#[derive(Clone, Debug)]
pub struct Psi0Table {
    pub lattice: BurgersLattice,
    pub b_max: f64,
    pub burgers: Vec<Vec3>,
    pub grid: DirectionGrid,
    /// `values[ib * n_dir + it]`.
    pub values: Vec<f64>,
    index: HashMap<[i64; 3], usize>,
}

fn key(coords: &Vec3) -> [i64; 3] {
    [coords.x.round() as i64, coords.y.round() as i64, coords.z.round() as i64]
}

impl Psi0Table {
    pub fn from_fn<F>(lattice: BurgersLattice, b_max: f64, grid: DirectionGrid, f: F) -> Self
    where
        F: Fn(&Vec3, &Vec3) -> f64 + Sync,
    {
        let burgers = lattice.ball(b_max);
        let nd = grid.directions.len();
        let values: Vec<f64> = (0..burgers.len() * nd)
            .into_par_iter()
            .map(|k| f(&burgers[k / nd], &grid.directions[k % nd]))
            .collect();
        let index = burgers.iter().enumerate().map(|(i, b)| (key(&lattice.coordinates(b)), i)).collect();
        Self { lattice, b_max, burgers, grid, values, index }
    }

    /// `Ψ₀(b, t) = ½ bᵀ Z(t) b` with `Z` from the self-energy solver at `n_theta`.
    pub fn from_tensor(c: &ElasticTensor, lattice: BurgersLattice, b_max: f64, grid: DirectionGrid, n_theta: usize) -> Result<Self> {
        let zs: Vec<Mat3> = grid.directions.par_iter().map(|t| prelog_matrix(c, t, n_theta)).collect::<Result<_>>()?;
        let nd = grid.directions.len();
        let mut table = Self::from_fn(lattice, b_max, grid, |_, _| 0.0);
        for ib in 0..table.burgers.len() {
            let b = table.burgers[ib];
            for it in 0..nd {
                table.values[ib * nd + it] = 0.5 * b.dot(&(zs[it] * b));
            }
        }
        Ok(table)
    }

    pub fn n_dir(&self) -> usize {
        self.grid.directions.len()
    }

    pub fn burgers_index(&self, b: &Vec3) -> Option<usize> {
        let c = self.lattice.coordinates(b);
        if !BurgersLattice::contains_coordinates(&c) {
            return None;
        }
        self.index.get(&key(&c)).copied()
    }

    pub fn get(&self, ib: usize, it: usize) -> f64 {
        self.values[ib * self.n_dir() + it]
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= k);
        out
    }

    /// Reads rows `bx,by,bz,tx,ty,tz,...,psi0,...` (self-energy scan CSV) for
    /// the given lattice ball and grid. Directions are matched to the grid;
    /// entries missing from the file are filled from the quadratic form fitted
    /// per direction (at least six independent Burgers vectors required).
    pub fn from_csv<R: Read>(reader: R, lattice: BurgersLattice, b_max: f64, grid: DirectionGrid) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse(format!("missing CSV column {name}")))
        };
        let cols = ["bx", "by", "bz", "tx", "ty", "tz", "psi0"].map(col);
        let cols: Vec<usize> = cols.into_iter().collect::<Result<_>>()?;
        let nd = grid.directions.len();
        let mut rows_per_dir: Vec<Vec<(Vec3, f64)>> = vec![Vec::new(); nd];
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let num = |k: usize| -> Result<f64> {
                rec.get(cols[k])
                    .unwrap_or("")
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {e}", line + 2)))
            };
            let b = Vec3::new(num(0)?, num(1)?, num(2)?);
            let t = Vec3::new(num(3)?, num(4)?, num(5)?);
            let psi = num(6)?;
            if let Some(it) = grid.directions.iter().position(|d| (d - t.normalize()).norm() <= 1e-9) {
                rows_per_dir[it].push((b, psi));
            }
        }
        let mut table = Self::from_fn(lattice, b_max, grid, |_, _| f64::NAN);
        for it in 0..nd {
            let rows = &rows_per_dir[it];
            let mut z: Option<Mat3> = None;
            for ib in 0..table.burgers.len() {
                let b = table.burgers[ib];
                if let Some((_, v)) = rows.iter().find(|(bb, _)| (bb - b).norm() <= 1e-9) {
                    table.values[ib * nd + it] = *v;
                    continue;
                }
                if z.is_none() {
                    z = Some(fit_quadratic(rows).ok_or_else(|| {
                        Error::Parse(format!("direction {it}: fewer than six independent Burgers vectors"))
                    })?);
                }
                table.values[ib * nd + it] = 0.5 * b.dot(&(z.unwrap() * b));
            }
        }
        Ok(table)
    }
}

/// Least-squares fit of a symmetric `Z` with `ψ = ½ bᵀZb`.
fn fit_quadratic(rows: &[(Vec3, f64)]) -> Option<Mat3> {
    if rows.len() < 6 {
        return None;
    }
    let mut a = nalgebra::DMatrix::zeros(rows.len(), 6);
    let mut y = nalgebra::DVector::zeros(rows.len());
    for (k, (b, v)) in rows.iter().enumerate() {
        let feats = [
            0.5 * b.x * b.x,
            0.5 * b.y * b.y,
            0.5 * b.z * b.z,
            b.x * b.y,
            b.x * b.z,
            b.y * b.z,
        ];
        for (j, f) in feats.iter().enumerate() {
            a[(k, j)] = *f;
        }
        y[k] = *v;
    }
    let svd = a.svd(true, true);
    if svd.singular_values.iter().any(|s| *s < 1e-10) {
        return None;
    }
    let p = svd.solve(&y, 1e-14).ok()?;
    Some(Mat3::new(p[0], p[3], p[4], p[3], p[1], p[5], p[4], p[5], p[2]))
}

/// Best splitting move of an entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SplitMove {
    /// Entry equals the input density: one straight line.
    Leaf,
    BurgersSplit { b1: usize, b2: usize },
    DirectionSplit { t1: usize, t2: usize, l1: f64, l2: f64 },
}

#[derive(Clone, Debug)]
pub struct EnvelopeTable {
    pub psi0: Psi0Table,
    pub values: Vec<f64>,
    pub certificates: Vec<SplitMove>,
    pub depth: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug)]
struct DirSplit {
    t1: usize,
    t2: usize,
    l1: f64,
    l2: f64,
}

/// Pairs `(t₁, t₂)` of grid directions with `t = ℓ₁t₁ + ℓ₂t₂`, `ℓ₁, ℓ₂ > 0`.
fn direction_splits(dirs: &[Vec3]) -> Vec<Vec<DirSplit>> {
    dirs.par_iter()
        .enumerate()
        .map(|(it, t)| {
            let mut out = Vec::new();
            for i in 0..dirs.len() {
                if i == it {
                    continue;
                }
                for j in i + 1..dirs.len() {
                    if j == it {
                        continue;
                    }
                    let (a, b) = (&dirs[i], &dirs[j]);
                    let n = a.cross(b);
                    let nn = n.norm();
                    if nn < 1e-9 || t.dot(&n).abs() > 1e-9 * nn.max(1.0) {
                        continue;
                    }
                    // t = l1 a + l2 b in the plane of a and b
                    let l1 = t.cross(b).dot(&n) / (nn * nn);
                    let l2 = a.cross(t).dot(&n) / (nn * nn);
                    if l1 > 1e-12 && l2 > 1e-12 {
                        out.push(DirSplit { t1: i, t2: j, l1, l2 });
                    }
                }
            }
            out
        })
        .collect()
}

fn burgers_splits(psi0: &Psi0Table) -> Vec<Vec<(usize, usize)>> {
    (0..psi0.burgers.len())
        .map(|ib| {
            let b = psi0.burgers[ib];
            let mut out = Vec::new();
            for (i1, b1) in psi0.burgers.iter().enumerate() {
                if b1.norm() == 0.0 || (b - b1).norm() == 0.0 {
                    continue;
                }
                if let Some(i2) = psi0.burgers_index(&(b - b1)) {
                    if i1 <= i2 {
                        out.push((i1, i2));
                    }
                }
            }
            out
        })
        .collect()
}

const FIXED_POINT_TOL: f64 = 1e-10;

/// Iterates the splitting relaxation from `psi0` to a fixed point (change
/// below 1e−10) or `max_iter` sweeps.
pub fn relax_envelope(psi0: &Psi0Table, max_iter: usize) -> Result<EnvelopeTable> {
    if psi0.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument("input densities must be finite and nonnegative".into()));
    }
    let nd = psi0.n_dir();
    let zero = psi0.burgers_index(&Vec3::zeros()).expect("ball contains 0");
    if (0..nd).any(|it| psi0.get(zero, it) != 0.0) {
        return Err(Error::InvalidArgument("input must vanish at b = 0".into()));
    }
    let bsplits = burgers_splits(psi0);
    let dsplits = direction_splits(&psi0.grid.directions);
    let mut values = psi0.values.clone();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let old = &values;
        let next: Vec<f64> = (0..old.len())
            .into_par_iter()
            .map(|k| {
                let (ib, it) = (k / nd, k % nd);
                let mut best = old[k];
                for &(i1, i2) in &bsplits[ib] {
                    best = best.min(old[i1 * nd + it] + old[i2 * nd + it]);
                }
                for s in &dsplits[it] {
                    best = best.min(s.l1 * old[ib * nd + s.t1] + s.l2 * old[ib * nd + s.t2]);
                }
                best
            })
            .collect();
        iterations += 1;
        let mut change: f64 = 0.0;
        for (n, o) in next.iter().zip(old) {
            if *n > *o {
                return Err(Error::NonMonotone(format!("entry increased from {o} to {n}")));
            }
            change = change.max(o - n);
        }
        values = next;
        if change < FIXED_POINT_TOL {
            converged = true;
            break;
        }
    }
    let (certificates, depth) = derive_certificates(psi0, &values, &bsplits, &dsplits)?;
    Ok(EnvelopeTable { psi0: psi0.clone(), values, certificates, depth, iterations, converged })
}

/// Assigns to every entry a move reproducing its value from entries that
/// already carry certificates, so the certificate graph is acyclic.
fn derive_certificates(
    psi0: &Psi0Table,
    values: &[f64],
    bsplits: &[Vec<(usize, usize)>],
    dsplits: &[Vec<DirSplit>],
) -> Result<(Vec<SplitMove>, Vec<usize>)> {
    let nd = psi0.n_dir();
    let n = values.len();
    let tol = |v: f64| 1e-9 * (1.0 + v.abs());
    let mut cert: Vec<Option<SplitMove>> = vec![None; n];
    let mut depth = vec![0usize; n];
    for k in 0..n {
        if (values[k] - psi0.values[k]).abs() <= tol(values[k]) {
            cert[k] = Some(SplitMove::Leaf);
        }
    }
    let mut pending: Vec<usize> = (0..n).filter(|&k| cert[k].is_none()).collect();
    while !pending.is_empty() {
        let mut progress = false;
        let mut still = Vec::new();
        for &k in &pending {
            let (ib, it) = (k / nd, k % nd);
            let mut found = None;
            for &(i1, i2) in &bsplits[ib] {
                let (k1, k2) = (i1 * nd + it, i2 * nd + it);
                if cert[k1].is_some() && cert[k2].is_some() && (values[k1] + values[k2] - values[k]).abs() <= tol(values[k]) {
                    found = Some((SplitMove::BurgersSplit { b1: i1, b2: i2 }, 1 + depth[k1].max(depth[k2])));
                    break;
                }
            }
            if found.is_none() {
                for s in &dsplits[it] {
                    let (k1, k2) = (ib * nd + s.t1, ib * nd + s.t2);
                    if cert[k1].is_some()
                        && cert[k2].is_some()
                        && (s.l1 * values[k1] + s.l2 * values[k2] - values[k]).abs() <= tol(values[k])
                    {
                        found = Some((
                            SplitMove::DirectionSplit { t1: s.t1, t2: s.t2, l1: s.l1, l2: s.l2 },
                            1 + depth[k1].max(depth[k2]),
                        ));
                        break;
                    }
                }
            }
            match found {
                Some((m, d)) => {
                    cert[k] = Some(m);
                    depth[k] = d;
                    progress = true;
                }
                None => still.push(k),
            }
        }
        if !progress {
            let k = still[0];
            return Err(Error::CertificateCycle(format!(
                "entry b = {:?}, direction {}",
                psi0.burgers[k / nd].as_slice(),
                k % nd
            )));
        }
        pending = still;
    }
    Ok((cert.into_iter().map(|c| c.expect("assigned")).collect(), depth))
}

impl EnvelopeTable {
    pub fn n_dir(&self) -> usize {
        self.psi0.n_dir()
    }

    pub fn value(&self, ib: usize, it: usize) -> f64 {
        self.values[ib * self.n_dir() + it]
    }

    /// `Ψ̃₀(b, t)`: exact grid match, otherwise barycentric interpolation on
    /// the containing face of the icosphere.
    pub fn lookup(&self, b: &Vec3, t: &Vec3) -> Result<f64> {
        let ib = self
            .psi0
            .burgers_index(b)
            .ok_or_else(|| Error::InvalidArgument(format!("Burgers vector {:?} outside the table", b.as_slice())))?;
        let t = t.normalize();
        if let Some(it) = self.psi0.grid.find(&t) {
            return Ok(self.value(ib, it));
        }
        let (f, w) = self
            .psi0
            .grid
            .locate(&t)
            .ok_or_else(|| Error::InvalidArgument("direction outside the interpolation range".into()))?;
        Ok((0..3).map(|k| w[k] * self.value(ib, f[k])).sum())
    }

    /// Rows `bx,by,bz,tx,ty,tz,psi0,psi_tilde,cert_depth`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["bx", "by", "bz", "tx", "ty", "tz", "psi0", "psi_tilde", "cert_depth"])
            .map_err(|e| Error::Io(e.into()))?;
        let nd = self.n_dir();
        for (k, v) in self.values.iter().enumerate() {
            let (b, t) = (self.psi0.burgers[k / nd], self.psi0.grid.directions[k % nd]);
            wtr.write_record(&[
                fmt(b.x),
                fmt(b.y),
                fmt(b.z),
                fmt(t.x),
                fmt(t.y),
                fmt(t.z),
                fmt(self.psi0.values[k]),
                fmt(*v),
                self.depth[k].to_string(),
            ])
            .map_err(|e| Error::Io(e.into()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.17e}")
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct GrowthConstants {
    pub c0: f64,
    pub c1: f64,
}

/// Largest `c̃₀` and smallest `c̃₁` with `c̃₀|b| ≤ Ψ̃₀(b,t) ≤ c̃₁|b|`.
pub fn verify_growth(table: &EnvelopeTable) -> Result<GrowthConstants> {
    let nd = table.n_dir();
    let (mut c0, mut c1) = (f64::INFINITY, 0.0f64);
    for (k, v) in table.values.iter().enumerate() {
        let nb = table.psi0.burgers[k / nd].norm();
        if nb > 0.0 {
            c0 = c0.min(v / nb);
            c1 = c1.max(v / nb);
        }
    }
    if !(c0 > 0.0) {
        return Err(Error::GrowthViolation(format!("fitted lower constant {c0} is not positive")));
    }
    Ok(GrowthConstants { c0, c1 })
}

/// Finite network realizing a certificate, with its line-tension energy.
#[derive(Clone, Debug)]
pub struct Microstructure {
    pub measure: PolyhedralMeasure,
    /// `Σ Ψ₀(bᵢ, tᵢ) H¹(γᵢ)` with the input density.
    pub energy: f64,
    /// Endpoints `∓t/2` of the network.
    pub ends: [Vec3; 2],
}

impl Microstructure {
    /// Largest Frank imbalance away from the two endpoints.
    pub fn interior_residual(&self) -> f64 {
        let tol = self.measure.node_tolerance;
        self.measure
            .nodes()
            .iter()
            .filter(|(p, _)| self.ends.iter().all(|e| (p - e).norm() > tol))
            .map(|(_, f)| f.norm())
            .fold(0.0, f64::max)
    }

    /// Net Burgers vector leaving the start point (equals `b` when balanced).
    pub fn end_flux(&self) -> Vec3 {
        let tol = self.measure.node_tolerance;
        self.measure
            .nodes()
            .iter()
            .filter(|(p, _)| (p - self.ends[0]).norm() <= tol)
            .map(|(_, f)| *f)
            .sum()
    }
}

/// Expands the certificate of `(b, t)` into a segment network from `−t/2`
/// to `t/2`: Burgers splits become coincident lines, direction splits
/// two-leg paths.
pub fn expand_certificate(table: &EnvelopeTable, b: &Vec3, t: &Vec3) -> Result<Microstructure> {
    let ib = table
        .psi0
        .burgers_index(b)
        .ok_or_else(|| Error::InvalidArgument("Burgers vector outside the table".into()))?;
    let it = table
        .psi0
        .grid
        .find(&t.normalize())
        .ok_or_else(|| Error::InvalidArgument("direction is not a grid direction".into()))?;
    let mut segments = Vec::new();
    let mut energy = 0.0;
    let mut path = Vec::new();
    let start = -table.psi0.grid.directions[it] * 0.5;
    expand(table, ib, it, start, 1.0, &mut path, &mut segments, &mut energy)?;
    let measure = PolyhedralMeasure::new(table.psi0.lattice.clone(), segments)?;
    Ok(Microstructure { measure, energy, ends: [start, -start] })
}

#[allow(clippy::too_many_arguments)]
fn expand(
    table: &EnvelopeTable,
    ib: usize,
    it: usize,
    start: Vec3,
    length: f64,
    path: &mut Vec<(usize, usize)>,
    out: &mut Vec<Segment>,
    energy: &mut f64,
) -> Result<()> {
    if path.contains(&(ib, it)) {
        return Err(Error::CertificateCycle(format!("entry ({ib}, {it})")));
    }
    let b = table.psi0.burgers[ib];
    if b.norm() == 0.0 {
        return Ok(());
    }
    path.push((ib, it));
    let t = table.psi0.grid.directions[it];
    match table.certificates[ib * table.n_dir() + it] {
        SplitMove::Leaf => {
            let coords = table.psi0.lattice.coordinates(&b).map(|x| x.round());
            out.push(Segment::new(start, start + t * length, coords)?);
            *energy += table.psi0.get(ib, it) * length;
        }
        SplitMove::BurgersSplit { b1, b2 } => {
            expand(table, b1, it, start, length, path, out, energy)?;
            expand(table, b2, it, start, length, path, out, energy)?;
        }
        SplitMove::DirectionSplit { t1, t2, l1, l2 } => {
            let mid = start + table.psi0.grid.directions[t1] * (l1 * length);
            expand(table, ib, t1, start, l1 * length, path, out, energy)?;
            expand(table, ib, t2, mid, l2 * length, path, out, energy)?;
        }
    }
    path.pop();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn icosphere_counts_and_nesting() {
        for (l, n) in [(0, 12), (1, 42), (2, 162), (3, 642)] {
            let g = DirectionGrid::icosphere(l);
            assert_eq!(g.directions.len(), n);
            assert_eq!(g.faces.len(), 20 * 4usize.pow(l as u32));
        }
        let (g2, g3) = (DirectionGrid::icosphere(2), DirectionGrid::icosphere(3));
        for (a, b) in g2.directions.iter().zip(&g3.directions) {
            assert_eq!(a, b);
        }
        let t = Vec3::new(0.3, -0.2, 0.9).normalize();
        let (f, w) = g3.locate(&t).unwrap();
        let p: Vec3 = (0..3).map(|k| g3.directions[f[k]] * w[k]).sum();
        assert!(p.normalize().dot(&t) > 1.0 - 1e-12);
    }

    fn small_table(level: usize) -> Psi0Table {
        let c = ElasticTensor::isotropic(1.0, 0.0);
        Psi0Table::from_tensor(&c, BurgersLattice::cubic(), 2.0, DirectionGrid::icosphere(level), 32).unwrap()
    }

    #[test]
    fn envelope_basic_properties() {
        let psi0 = small_table(1);
        let env = relax_envelope(&psi0, 200).unwrap();
        assert!(env.converged);
        let nd = psi0.n_dir();
        let zero = psi0.burgers_index(&Vec3::zeros()).unwrap();
        for it in 0..nd {
            assert_eq!(env.value(zero, it), 0.0);
        }
        for (v, p) in env.values.iter().zip(&psi0.values) {
            assert!(v <= p);
        }
        let b0 = Vec3::x();
        let (i1, i2) = (psi0.burgers_index(&b0).unwrap(), psi0.burgers_index(&(b0 * 2.0)).unwrap());
        for it in 0..nd {
            assert!(env.value(i2, it) <= 2.0 * psi0.get(i1, it) + 1e-12);
            assert_relative_eq!(psi0.get(i2, it), 4.0 * psi0.get(i1, it), max_relative = 1e-12);
        }
        let g = verify_growth(&env).unwrap();
        assert!(g.c0 > 0.0 && g.c0 <= g.c1);
    }

    #[test]
    fn subadditive_fixed_point() {
        let psi0 = small_table(1);
        let env = relax_envelope(&psi0, 200).unwrap();
        let nd = psi0.n_dir();
        for (i1, b1) in psi0.burgers.iter().enumerate() {
            for (i2, b2) in psi0.burgers.iter().enumerate() {
                if let Some(i3) = psi0.burgers_index(&(b1 + b2)) {
                    for it in 0..nd {
                        assert!(env.value(i3, it) <= env.value(i1, it) + env.value(i2, it) + 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn one_homogeneous_input_is_fixed() {
        let grid = DirectionGrid::icosphere(1);
        let psi0 = Psi0Table::from_fn(BurgersLattice::cubic(), 2.0, grid, |b, _| b.norm());
        let env = relax_envelope(&psi0, 50).unwrap();
        assert_eq!(env.iterations, 1);
        assert_eq!(env.values, psi0.values);
        let g = verify_growth(&env).unwrap();
        assert_relative_eq!(g.c0, 1.0);
        assert_relative_eq!(g.c1, 1.0);
    }

    #[test]
    fn scaling_doubles() {
        let psi0 = small_table(1);
        let a = relax_envelope(&psi0, 200).unwrap();
        let b = relax_envelope(&psi0.scaled(2.0), 200).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((2.0 * x - y).abs() <= 1e-12 * y.max(1.0));
        }
        let (ga, gb) = (verify_growth(&a).unwrap(), verify_growth(&b).unwrap());
        assert_relative_eq!(gb.c0, 2.0 * ga.c0, max_relative = 1e-12);
        assert_relative_eq!(gb.c1, 2.0 * ga.c1, max_relative = 1e-12);
    }

    #[test]
    fn certificates_reproduce_values() {
        let psi0 = small_table(1);
        let env = relax_envelope(&psi0, 200).unwrap();
        let nd = psi0.n_dir();
        for ib in (0..psi0.burgers.len()).step_by(3) {
            for it in (0..nd).step_by(5) {
                let (b, t) = (psi0.burgers[ib], psi0.grid.directions[it]);
                let m = expand_certificate(&env, &b, &t).unwrap();
                assert!((m.energy - env.value(ib, it)).abs() <= 1e-8, "{} vs {}", m.energy, env.value(ib, it));
                assert!(m.interior_residual() <= 1e-12);
                if b.norm() > 0.0 {
                    assert!((m.end_flux() - b).norm() <= 1e-12);
                }
            }
        }
        let b0 = Vec3::x();
        let t = psi0.grid.directions[0];
        let m = expand_certificate(&env, &(b0 * 2.0), &t).unwrap();
        assert!(m.measure.segments.len() >= 2);
        // a leaf entry expands to one straight line
        let unit = expand_certificate(&env, &b0, &t).unwrap();
        if env.certificates[psi0.burgers_index(&b0).unwrap() * nd] == SplitMove::Leaf {
            assert_eq!(unit.measure.segments.len(), 1);
        }
    }

    #[test]
    fn grid_refinement_never_increases() {
        let coarse = relax_envelope(&small_table(1), 200).unwrap();
        let fine = relax_envelope(&small_table(2), 200).unwrap();
        let (nc, nf) = (coarse.n_dir(), fine.n_dir());
        for ib in 0..coarse.psi0.burgers.len() {
            for it in 0..nc {
                assert!(fine.values[ib * nf + it] <= coarse.values[ib * nc + it] + 1e-10);
            }
        }
    }

    #[test]
    fn csv_input_roundtrip() {
        let psi0 = small_table(0);
        let mut buf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(["bx", "by", "bz", "tx", "ty", "tz", "psi0"]).unwrap();
            let nd = psi0.n_dir();
            // only six Burgers vectors per direction; the rest is reconstructed
            let basis = [Vec3::x(), Vec3::y(), Vec3::z(), Vec3::new(1.0, 1.0, 0.0), Vec3::new(1.0, 0.0, 1.0), Vec3::new(0.0, 1.0, 1.0)];
            for it in 0..nd {
                for b in &basis {
                    let ib = psi0.burgers_index(b).unwrap();
                    let t = psi0.grid.directions[it];
                    let rec: Vec<String> = [b.x, b.y, b.z, t.x, t.y, t.z, psi0.get(ib, it)].iter().map(|v| fmt(*v)).collect();
                    w.write_record(&rec).unwrap();
                }
            }
        }
        let back = Psi0Table::from_csv(&buf[..], BurgersLattice::cubic(), 2.0, DirectionGrid::icosphere(0)).unwrap();
        for (a, b) in back.values.iter().zip(&psi0.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
