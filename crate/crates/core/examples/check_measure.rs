//! Polyhedral dislocation measures: Frank's rule, diluteness along a scale
//! schedule, and the reflection extension across a planar boundary.

use linetension::dislocations::{
    check_dilute, extend_by_reflection, frank_rule_residual, schedule_admissible, Domain, PolyhedralMeasure, ScaleSchedule,
};
use linetension::Vec3;

fn main() -> linetension::Result<()> {
    let square = PolyhedralMeasure::unit_square_loop();
    println!("square loop: {} segments, Frank residual {:e}", square.segments.len(), frank_rule_residual(&square));

    let schedule = ScaleSchedule::new(0.5, 0.5, 0.05, 0.05);
    let adm = schedule_admissible(&schedule);
    println!("schedule admissible: {} (margin {:.2})", adm.admissible, adm.margin);
    for eps in [1e-2, 1e-3, 1e-4] {
        let p = schedule.params(eps)?;
        let rep = check_dilute(&square, &p, &Domain::Whole);
        println!("eps = {eps:.0e}: h = {:.4}, alpha = {:.4}, core radius = {:.2e}, dilute: {}", p.h, p.alpha, schedule.rho(eps), rep.ok);
    }

    // the loop cut by the plane x = 0.5 keeps only its right half
    let half = Domain::half_space(Vec3::new(0.5, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0));
    let ext = extend_by_reflection(&square, &half, 0.1)?;
    println!(
        "reflection extension: {} segments, mass ratio {:.3}, Frank residual {:e}",
        ext.measure.segments.len(),
        ext.mass_ratio,
        frank_rule_residual(&ext.measure)
    );
    Ok(())
}
