//! Γ-scan of the unit square loop: `F_ε` on recovery strains against `F₀`.

use std::time::Instant;

use linetension::dislocations::{PolyhedralMeasure, ScaleSchedule};
use linetension::fields::{gamma_scan, BoxDomain, GammaScanConfig, QuadratureOptions, RecoveryOptions, SmoothStrain};
use linetension::{EnergyModel, Rotation, Vec3};

fn main() -> linetension::Result<()> {
    let measure = PolyhedralMeasure::unit_square_loop();
    let cfg = GammaScanConfig {
        beta: SmoothStrain::zero(),
        q: Rotation::identity(),
        model: EnergyModel::prototype(),
        eps: vec![1e-2, 3e-3, 1e-3],
        schedule: ScaleSchedule::new(0.5, 0.5, 0.05, 0.05),
        domain: BoxDomain::new(Vec3::new(-0.5, -0.5, -1.0), Vec3::new(1.5, 1.5, 1.0))?,
        quadrature: QuadratureOptions::default(),
        recovery: RecoveryOptions::default(),
        grid_level: 2,
    };
    let start = Instant::now();
    let report = gamma_scan(&measure, &cfg)?;
    println!("F0 = {:.6}", report.f0);
    for k in 0..report.eps.len() {
        println!(
            "eps = {:8.1e}  F_eps = {:.6}  gap = {:.6}  ratio = {:.4}  refinement change = {:.3}%",
            report.eps[k],
            report.f_eps[k],
            report.gaps[k],
            report.f_eps[k] / report.f0,
            100.0 * report.quadrature_change[k]
        );
    }
    println!("monotone tail: {}  ({:.1} s)", report.monotone_tail, start.elapsed().as_secs_f64());
    Ok(())
}
