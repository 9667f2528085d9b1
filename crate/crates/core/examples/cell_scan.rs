//! Linear and nonlinear cell problems along a nested schedule `r/R → 0`,
//! `λ → 0`, compared with the straight-dislocation self-energy.

use std::time::Instant;

use linetension::cell::{cell_convergence_scan, CellScanConfig, ScanPoint, SolverOptions};
use linetension::{ElasticTensor, EnergyModel, Rotation, Vec3};

fn main() -> linetension::Result<()> {
    let model = EnergyModel::prototype();
    let cfg = CellScanConfig {
        b: Vec3::x(),
        t: Vec3::z(),
        q: Rotation::from_axis_angle(&Vec3::new(1.0, 1.0, 0.0), 0.4)?,
        tensor: ElasticTensor::isotropic_poisson(1.0, 0.3),
        model,
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
    let start = Instant::now();
    let report = cell_convergence_scan(&cfg)?;
    println!("kind,r_over_R,h_over_R,lambda,value,gap_to_psi0,constraint_residual,iterations,rigidity");
    for r in &report.rows {
        println!(
            "{},{:e},{},{:e},{:.8},{:.3e},{:.1e},{},{:?}",
            r.kind, r.r_over_R, r.h_over_R, r.lambda, r.value, r.gap_to_psi0, r.constraint_residual, r.iterations, r.rigidity_ratio
        );
    }
    println!("psi0 linear = {:.6}, psi0 nonlinear = {:.6}", report.psi0_linear, report.psi0_nonlinear);
    println!("gaps decreasing: linear {}, nonlinear {}", report.linear_gap_decreasing, report.nonlinear_gap_decreasing);
    println!("c* = {:.6}; elapsed {:.1?}", report.c_star, start.elapsed());
    Ok(())
}
