//! Nonlinear cell problem for the prototype energy dist²(F, SO(3)):
//! frame indifference, the penalty dependence, and the rigidity ratio of the
//! minimizers as the core radius shrinks.

use linetension::cell::{solve_nonlinear_cell, CellMesh, CellSpec, NonlinearCellSpec, SolverOptions};
use linetension::elasticity::validate_energy_assumptions;
use linetension::{EnergyModel, Rotation, Vec3};

fn main() -> linetension::Result<()> {
    let model = EnergyModel::prototype();
    let report = validate_energy_assumptions(&model, 2000, 0)?;
    println!("energy check: {:.3} <= W/dist^2 <= {:.3}, frame violation {:.1e}", report.c1, report.c2, report.max_frame_violation);

    let q = Rotation::from_axis_angle(&Vec3::new(1.0, 1.0, 0.0), 0.4)?;
    let b = Vec3::x();
    for r in [0.1, 0.05, 0.025] {
        let base = CellSpec { b, t: Vec3::z(), h: 8.0, r, R: 1.0, mesh: CellMesh::per_decade(16, r, 32) };
        let spec = NonlinearCellSpec { base, q, lambda: 0.1, solver: SolverOptions::default() };
        let res = solve_nonlinear_cell(&spec, &model)?;
        let pulled = NonlinearCellSpec { base: CellSpec { b: q.matrix().transpose() * b, ..base }, q: Rotation::identity(), ..spec };
        let same = solve_nonlinear_cell(&pulled, &model)?.value;
        println!(
            "r/R = {r:<5}: value {:.6} (psi0 {:.6}), frame-indifference defect {:.1e}, rigidity ratio {:.3}, Newton steps {}",
            res.value,
            res.psi0,
            (res.value - same).abs() / res.value,
            res.diagnostics.rigidity_ratio.unwrap_or(f64::NAN),
            res.diagnostics.iterations
        );
    }
    for lambda in [0.0, 0.1, 1.0, 10.0] {
        let base = CellSpec { b, t: Vec3::z(), h: 8.0, r: 0.1, R: 1.0, mesh: CellMesh { n_rho: 16, n_theta: 32 } };
        let v = solve_nonlinear_cell(&NonlinearCellSpec { base, q, lambda, solver: SolverOptions::default() }, &model)?.value;
        println!("lambda = {lambda:<4}: value {v:.6}");
    }
    Ok(())
}
