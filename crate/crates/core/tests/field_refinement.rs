use std::f64::consts::PI;
use std::sync::Arc;

use liouflow::field::{field_from_bumps, BumpSpec};
use liouflow::lattice::Lattice;
use liouflow::mobius::{bolza_atlas, DiskPoint};

fn gauss_bonnet_defect(spacing: f64) -> f64 {
    let atlas = bolza_atlas();
    let lattice = Arc::new(Lattice::new(atlas.clone(), spacing).unwrap());
    let spec = BumpSpec::new(&atlas, vec![DiskPoint::new(0.2, 0.1).unwrap()], vec![0.1], 0.5).unwrap();
    let field = field_from_bumps(lattice, &spec).unwrap();
    let total = field.area_integral(&field.curvature().values);
    (total + 4.0 * PI).abs()
}

#[test]
fn gauss_bonnet_defect_shrinks_under_refinement() {
    let coarse = gauss_bonnet_defect(2.0 / 256.0);
    let fine = gauss_bonnet_defect(2.0 / 512.0);
    assert!(coarse / (4.0 * PI) < 1e-3);
    assert!(coarse / fine >= 3.0, "defects {coarse:e} -> {fine:e}");
}

#[test]
fn octagon_area_quadrature_converges_to_four_pi() {
    for spacing in [2.0 / 64.0, 2.0 / 256.0] {
        let lattice = Lattice::new(bolza_atlas(), spacing).unwrap();
        assert!((lattice.reference_area() - 4.0 * PI).abs() < 1e-8);
    }
}
