//! Relaxes `Ψ₀` of an isotropic crystal to its H¹-elliptic envelope on the
//! lattice ball `|b| ≤ 3` and a level-3 icosphere, then reports the growth
//! constants and the gain from splitting a doubled Burgers vector.

use std::time::Instant;

use linetension::dislocations::BurgersLattice;
use linetension::envelope::{expand_certificate, relax_envelope, verify_growth, DirectionGrid, Psi0Table};
use linetension::{ElasticTensor, Vec3};

fn main() -> linetension::Result<()> {
    let c = ElasticTensor::isotropic_poisson(1.0, 0.3);
    let start = Instant::now();
    let psi0 = Psi0Table::from_tensor(&c, BurgersLattice::cubic(), 3.0, DirectionGrid::icosphere(3), 64)?;
    println!(
        "tabulated {} Burgers vectors x {} directions in {:.2} s",
        psi0.burgers.len(),
        psi0.n_dir(),
        start.elapsed().as_secs_f64()
    );
    let env = relax_envelope(&psi0, 500)?;
    println!("relaxed in {} sweeps (converged: {}), {:.2} s total", env.iterations, env.converged, start.elapsed().as_secs_f64());

    let growth = verify_growth(&env)?;
    println!("envelope growth: {:.5} |b| <= psi_tilde <= {:.5} |b|", growth.c0, growth.c1);

    let b0 = Vec3::x();
    let t = psi0.grid.directions[0];
    let single = env.lookup(&b0, &t)?;
    let doubled = env.lookup(&(b0 * 2.0), &t)?;
    let quad = psi0.get(psi0.burgers_index(&(b0 * 2.0)).unwrap(), 0);
    println!("psi0(2b0) = {quad:.5}, psi_tilde(2b0) = {doubled:.5} (= 2 psi_tilde(b0) = {:.5}), gain {:.1}%", 2.0 * single, 100.0 * (1.0 - doubled / quad));

    let micro = expand_certificate(&env, &(b0 * 2.0), &t)?;
    println!("certificate of 2b0 expands to {} segments, energy {:.5}", micro.measure.segments.len(), micro.energy);
    Ok(())
}
