//! Kernel strain field of the unit square loop: circulation around each side
//! for three loop shapes, and the fitted near/far decay constants.

use linetension::dislocations::PolyhedralMeasure;
use linetension::fields::{kernel_estimates, path_circulation, probe_grid, probe_loop, BoxDomain, KernelField, LoopShape};
use linetension::Vec3;

fn main() -> linetension::Result<()> {
    let m = PolyhedralMeasure::unit_square_loop();
    let field = KernelField::new(&m);
    for (k, s) in m.segments.iter().enumerate() {
        let b = m.burgers_of(s);
        let errs: Vec<String> = [LoopShape::Circle, LoopShape::Square, LoopShape::TiltedEllipse]
            .iter()
            .map(|&shape| {
                let path = probe_loop(&s.midpoint(), &s.tangent(), 0.05, shape, 96);
                path_circulation(|x| field.eval(x), &path, 12).map(|c| format!("{shape:?} {:.1e}", (c - b).norm()))
            })
            .collect::<linetension::Result<_>>()?;
        println!("side {k}: circulation error {}", errs.join(", "));
    }
    let dom = BoxDomain::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(2.0, 2.0, 1.0))?;
    for n in [24, 48, 96] {
        let est = kernel_estimates(&field, &probe_grid(&field, &dom, n, 1e-3))?;
        println!("{n:3}^3 probes ({} used): far constant {:.4}, near constant {:.4}", est.probes, est.far, est.near);
    }
    Ok(())
}
