//! Self-energy of straight dislocations: isotropic screw and edge against the
//! classical prefactors, then the orientation dependence in a cubic crystal.

use linetension::selfenergy::{isotropic_prelog, self_energy_scan, solve_self_energy};
use linetension::envelope::DirectionGrid;
use linetension::{ElasticTensor, Vec3};

fn main() -> linetension::Result<()> {
    let nu = 0.3;
    let iso = ElasticTensor::isotropic_poisson(1.0, nu);
    let (screw, edge) = isotropic_prelog(1.0, nu);
    for (name, b, expect) in [("screw", Vec3::z(), screw), ("edge", Vec3::x(), edge)] {
        let r = solve_self_energy(&iso, &b, &Vec3::z(), 256)?;
        println!(
            "{name:5}: psi0 = {:.8}  classical = {expect:.8}  constraint residual = {:.1e}  equilibrium residual = {:.1e}",
            r.value, r.residuals.constraint, r.residuals.equilibrium
        );
    }

    // copper-like cubic anisotropy, b = [110]/√2 over 162 directions
    let cubic = ElasticTensor::cubic(1.68, 1.21, 0.75);
    let b = Vec3::new(1.0, 1.0, 0.0) / 2f64.sqrt();
    let scan = self_energy_scan(&cubic, &b, &DirectionGrid::icosphere(2).directions, 64)?;
    let (lo, hi) = scan.rows.iter().fold((f64::INFINITY, 0.0f64), |(a, c), r| (a.min(r.value), c.max(r.value)));
    println!("cubic scan over {} directions: {lo:.5} <= psi0 <= {hi:.5}", scan.rows.len());
    println!("quadratic growth c0 = {:.5}, c1 = {:.5}; continuity constant {:.3}", scan.c0, scan.c1, scan.continuity_constant);
    Ok(())
}
