//! Browser bindings for a few small computations on the Bolza surface.
//!
//! Fields live on a coarser lattice than the command-line tool so that each
//! call stays interactive.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use liouflow::field::{field_from_bumps, BumpSpec, ConformalField};
use liouflow::flow::{cfl_limit, FlowStepper};
use liouflow::geodesic::{integrate_geodesic, UnitTangent};
use liouflow::lattice::Lattice;
use liouflow::mobius::{bolza_atlas, Complex, DiskPoint};
use wasm_bindgen::prelude::*;

/// Lattice spacing of the demo.
pub const SPACING: f64 = 2.0 / 96.0;

const CENTER: (f64, f64) = (0.2, 0.1);
const WIDTH: f64 = 0.5;

thread_local! {
    static CACHE: RefCell<Option<(f64, ConformalField)>> = const { RefCell::new(None) };
}

fn err(e: liouflow::Error) -> String {
    e.to_string()
}

/// Single-bump field of the given amplitude, rebuilt only when it changes.
pub fn bump_field(amplitude: f64) -> Result<ConformalField, String> {
    CACHE.with(|c| {
        if let Some((a, f)) = c.borrow().as_ref() {
            if *a == amplitude {
                return Ok(f.clone());
            }
        }
        let atlas = bolza_atlas();
        let lattice = Arc::new(Lattice::new(atlas.clone(), SPACING).map_err(err)?);
        let field = if amplitude == 0.0 {
            ConformalField::hyperbolic(lattice)
        } else {
            let center = DiskPoint::new(CENTER.0, CENTER.1).map_err(err)?;
            let spec = BumpSpec::new(&atlas, vec![center], vec![amplitude], WIDTH).map_err(err)?;
            field_from_bumps(lattice, &spec)
        }
        .map_err(err)?;
        *c.borrow_mut() = Some((amplitude, field.clone()));
        Ok(field)
    })
}

/// Blue for curvature below −1, red above, white at −1.
fn colour(k: f64, spread: f64) -> [u8; 3] {
    let t = ((k + 1.0) / spread).clamp(-1.0, 1.0);
    let fade = (255.0 * (1.0 - t.abs())) as u8;
    if t < 0.0 {
        [fade, fade, 255]
    } else {
        [255, fade, fade]
    }
}

/// RGBA image of the curvature over the disk, `size × size` pixels.
pub fn curvature_rgba(amplitude: f64, size: usize) -> Result<Vec<u8>, String> {
    let field = bump_field(amplitude)?;
    let k = field.curvature();
    // a floor keeps discretization noise of a constant field white
    let spread = (k.k_max + 1.0).abs().max((k.k_min + 1.0).abs()).max(0.05);
    let atlas = field.atlas();
    let mut px = vec![0u8; 4 * size * size];
    for row in 0..size {
        for col in 0..size {
            let z = Complex::new(
                2.0 * (col as f64 + 0.5) / size as f64 - 1.0,
                1.0 - 2.0 * (row as f64 + 0.5) / size as f64,
            );
            if z.norm() >= 1.0 || !atlas.contains_complex(z) {
                continue;
            }
            let p = DiskPoint::from_complex(z).map_err(err)?;
            let s = field.evaluate(p).map_err(err)?;
            let [r, g, b] = colour(s.curvature, spread);
            px[4 * (row * size + col)..4 * (row * size + col + 1)].copy_from_slice(&[r, g, b, 255]);
        }
    }
    Ok(px)
}

/// Chart positions `x₀, y₀, x₁, y₁, …` of a unit-speed geodesic.
///
/// The chart is the fundamental octagon, so the path jumps across it each
/// time it leaves through a side.
pub fn geodesic_points(amplitude: f64, x: f64, y: f64, angle: f64, duration: f64) -> Result<Vec<f64>, String> {
    let field = bump_field(amplitude)?;
    let z = DiskPoint::new(x, y).map_err(err)?;
    if !field.atlas().contains(z) {
        return Err(format!("({x}, {y}) is outside the octagon"));
    }
    let traj = integrate_geodesic(&field, UnitTangent::new(z, angle), duration, 1e-2).map_err(err)?;
    Ok(traj.nodes().iter().flat_map(|n| [n.z.re, n.z.im]).collect())
}

/// `ε, κ, sup|K + 1|` triples at `checkpoints + 1` equally spaced times of the
/// normalized Ricci flow up to `duration`.
pub fn kappa_series(amplitude: f64, duration: f64, checkpoints: usize) -> Result<Vec<f64>, String> {
    if checkpoints == 0 || duration.is_nan() || duration <= 0.0 {
        return Err("need a positive duration and at least one checkpoint".into());
    }
    let field = bump_field(amplitude)?;
    let dt = 0.8 * cfl_limit(&field);
    let mut stepper = FlowStepper::new(&field);
    let mut out = Vec::with_capacity(3 * (checkpoints + 1));
    for i in 0..=checkpoints {
        if i > 0 {
            stepper.advance(duration / checkpoints as f64, dt).map_err(err)?;
        }
        let f = stepper.field().map_err(err)?;
        let k = f.curvature();
        out.extend([
            stepper.elapsed(),
            f.mean_root_curvature(),
            (k.k_min + 1.0).abs().max((k.k_max + 1.0).abs()),
        ]);
    }
    Ok(out)
}

#[wasm_bindgen(js_name = curvatureImage)]
pub fn curvature_image(amplitude: f64, size: usize) -> Result<Vec<u8>, JsError> {
    curvature_rgba(amplitude, size).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = geodesicTrace)]
pub fn geodesic_trace(amplitude: f64, x: f64, y: f64, angle_deg: f64, duration: f64) -> Result<Vec<f64>, JsError> {
    geodesic_points(amplitude, x, y, angle_deg * PI / 180.0, duration).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = kappaAlongFlow)]
pub fn kappa_along_flow(amplitude: f64, duration: f64, checkpoints: usize) -> Result<Vec<f64>, JsError> {
    kappa_series(amplitude, duration, checkpoints).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyperbolic_image_is_white_inside_the_octagon() {
        let px = curvature_rgba(0.0, 32).unwrap();
        let centre = 4 * (16 * 32 + 16);
        assert_eq!(&px[centre..centre + 4], &[255, 255, 255, 255]);
        // corners lie outside the disk
        assert_eq!(px[3], 0);
    }

    #[test]
    fn geodesic_stays_in_the_chart() {
        let pts = geodesic_points(0.1, 0.0, 0.0, 0.3, 5.0).unwrap();
        assert!(pts.len() > 2 * 400);
        assert!(pts.chunks(2).all(|p| p[0].hypot(p[1]) < 1.0));
        assert!(geodesic_points(0.1, 0.95, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn kappa_rises_along_the_flow() {
        let s = kappa_series(0.1, 0.05, 2).unwrap();
        assert_eq!(s.len(), 9);
        assert!(s[4] > s[1] && s[7] > s[4]);
        assert!(s[8] < s[5] && s[5] < s[2]);
    }
}
