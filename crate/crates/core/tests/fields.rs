use linetension::dislocations::{PolyhedralMeasure, ScaleSchedule};
use linetension::fields::{
    assemble_recovery, assemble_recovery_lines, energy_of_strain, gamma_scan, measure_lines, BoxDomain, GammaScanConfig,
    Line, QuadratureOptions, RecoveryOptions, SmoothStrain,
};
use linetension::{ElasticTensor, EnergyModel, Mat3, Rotation, Vec3};

#[test]
fn rescaled_energy_is_frame_indifferent() {
    let m = PolyhedralMeasure::unit_square_loop();
    let q = Rotation::from_axis_angle(&Vec3::new(0.3, -1.0, 0.6), 0.9).unwrap();
    let c = ElasticTensor::isotropic(1.0, 0.0);
    let opts = RecoveryOptions::default();
    let (eps, rho) = (1e-2, 0.05);
    let domain = BoxDomain::new(Vec3::new(-0.25, -0.25, -0.25), Vec3::new(1.25, 1.25, 0.25)).unwrap();
    let rotated = assemble_recovery(&m, &q, &SmoothStrain::zero(), eps, rho, &c, &opts).unwrap();
    let pulled: Vec<Line> = measure_lines(&m).into_iter().map(|l| Line { b: q.matrix().transpose() * l.b, ..l }).collect();
    let plain = assemble_recovery_lines(&pulled, &Rotation::identity(), &SmoothStrain::zero(), eps, rho, &c, &opts).unwrap();
    let model = EnergyModel::prototype();
    let quad = QuadratureOptions::default();
    let a = energy_of_strain(&rotated, &model, &domain, &quad).unwrap().value;
    let b = energy_of_strain(&plain, &model, &domain, &quad).unwrap().value;
    assert!((a - b).abs() <= 1e-10 * a, "{a} vs {b}");
}

#[test]
fn zero_burgers_scan_matches_empty_measure() {
    let e = Mat3::new(0.2, 0.1, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0, -0.1);
    let cfg = GammaScanConfig {
        beta: SmoothStrain::constant(e),
        q: Rotation::identity(),
        model: EnergyModel::prototype(),
        eps: vec![1e-2, 1e-3],
        schedule: ScaleSchedule::new(0.5, 0.5, 0.05, 0.05),
        domain: BoxDomain::new(Vec3::repeat(-0.5), Vec3::repeat(1.5)).unwrap(),
        quadrature: QuadratureOptions::default(),
        recovery: RecoveryOptions::default(),
        grid_level: 1,
    };
    let zeroed = gamma_scan(&PolyhedralMeasure::unit_square_loop().scaled_burgers(0), &cfg).unwrap();
    let empty = gamma_scan(&PolyhedralMeasure::empty(), &cfg).unwrap();
    assert_eq!(serde_json::to_string(&zeroed).unwrap(), serde_json::to_string(&empty).unwrap());
    // symmetric constant strain: F_ε equals the bulk term exactly
    for (f, g) in zeroed.f_eps.iter().zip(&zeroed.gaps) {
        assert!(*g <= 1e-12 * f, "{g}");
    }
}
