//! Poincaré-disk primitives and the Bolza surface group.
//!
//! Disk automorphisms are stored in SU(1,1) form `z ↦ (a z + b) / (b̄ z + ā)`
//! with `|a|² − |b|² = 1`. The Bolza surface is the quotient of the disk by the
//! group generated by four hyperbolic translations pairing opposite sides of a
//! regular octagon with interior angles π/4.

use std::f64::consts::{FRAC_PI_4, FRAC_PI_8, SQRT_2};
use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Complex = Complex64;

/// Points this close to the unit circle are rejected.
pub const DISK_EDGE_TOL: f64 = 1e-12;

/// Maximum number of generator applications in [`SurfaceAtlas::reduce`].
pub const MAX_REDUCTION_STEPS: usize = 16;

/// Default width of the supported neighbourhood beyond the octagon's vertex
/// radius, in Euclidean units.
pub const DEFAULT_MARGIN: f64 = 0.15;

/// A point of the open unit disk.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiskPoint {
    z: Complex,
}

impl DiskPoint {
    pub fn new(re: f64, im: f64) -> Result<Self> {
        Self::from_complex(Complex::new(re, im))
    }

    pub fn from_complex(z: Complex) -> Result<Self> {
        if !(z.norm_sqr().sqrt() < 1.0 - DISK_EDGE_TOL) {
            return Err(Error::OutsideDisk { re: z.re, im: z.im });
        }
        Ok(Self { z })
    }

    pub const fn origin() -> Self {
        Self { z: Complex::new(0.0, 0.0) }
    }

    /// The point at hyperbolic distance `distance` from the origin in direction `angle`.
    pub fn from_polar_hyperbolic(distance: f64, angle: f64) -> Result<Self> {
        Self::from_complex(Complex::from_polar((0.5 * distance).tanh(), angle))
    }

    pub fn re(&self) -> f64 {
        self.z.re
    }

    pub fn im(&self) -> f64 {
        self.z.im
    }

    pub fn to_complex(self) -> Complex {
        self.z
    }

    pub fn norm_sqr(&self) -> f64 {
        self.z.norm_sqr()
    }
}

impl fmt::Display for DiskPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.z.re, self.z.im)
    }
}

/// Hyperbolic distance in the curvature −1 normalization.
pub fn hyperbolic_distance(z1: DiskPoint, z2: DiskPoint) -> f64 {
    distance_complex(z1.z, z2.z)
}

pub(crate) fn distance_complex(z1: Complex, z2: Complex) -> f64 {
    let num = (z1 - z2).norm();
    let den = (Complex::new(1.0, 0.0) - z2.conj() * z1).norm();
    2.0 * (num / den).min(1.0).atanh()
}

/// Distance from the origin, computed without a Möbius quotient.
pub(crate) fn distance_from_origin(z: Complex) -> f64 {
    2.0 * z.norm().atanh()
}

/// An orientation-preserving isometry of the disk.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MobiusMap {
    pub a: Complex,
    pub b: Complex,
}

impl MobiusMap {
    pub const IDENTITY: Self = Self {
        a: Complex::new(1.0, 0.0),
        b: Complex::new(0.0, 0.0),
    };

    pub fn new(a: Complex, b: Complex) -> Self {
        Self { a, b }
    }

    /// Rotation by `angle` about the origin.
    pub fn rotation(angle: f64) -> Self {
        Self {
            a: Complex::from_polar(1.0, 0.5 * angle),
            b: Complex::new(0.0, 0.0),
        }
    }

    /// Hyperbolic translation of length `length` along the diameter in direction `angle`.
    pub fn translation(length: f64, angle: f64) -> Self {
        let half = 0.5 * length;
        Self {
            a: Complex::new(half.cosh(), 0.0),
            b: Complex::from_polar(half.sinh(), angle),
        }
    }

    pub fn determinant(&self) -> f64 {
        self.a.norm_sqr() - self.b.norm_sqr()
    }

    pub fn inverse(&self) -> Self {
        Self {
            a: self.a.conj(),
            b: -self.b,
        }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            a: self.a * other.a + self.b * other.b.conj(),
            b: self.a * other.b + self.b * other.a.conj(),
        }
    }

    pub fn apply(&self, z: DiskPoint) -> Result<DiskPoint> {
        DiskPoint::from_complex(self.apply_complex(z.z))
    }

    #[inline]
    pub fn apply_complex(&self, z: Complex) -> Complex {
        (self.a * z + self.b) / (self.b.conj() * z + self.a.conj())
    }

    /// Complex derivative at `z`; its argument rotates tangent directions.
    #[inline]
    pub fn derivative(&self, z: Complex) -> Complex {
        let d = self.b.conj() * z + self.a.conj();
        (d * d).inv()
    }

    /// Translation length of a hyperbolic element, zero otherwise.
    pub fn translation_length(&self) -> f64 {
        let tr = self.a.re.abs();
        if tr <= 1.0 {
            0.0
        } else {
            2.0 * tr.acosh()
        }
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        // ±1 represent the same map
        let same = (self.a - other.a).norm() <= tol && (self.b - other.b).norm() <= tol;
        let flipped = (self.a + other.a).norm() <= tol && (self.b + other.b).norm() <= tol;
        same || flipped
    }
}

impl Default for MobiusMap {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Fuchsian side pairings and the fundamental octagon of the Bolza surface.
#[derive(Clone, Debug)]
pub struct SurfaceAtlas {
    /// `generators[j]` translates in direction `j·π/4`; `generators[(j + 4) % 8]` is its inverse.
    pub generators: [MobiusMap; 8],
    pub octagon_vertices: [DiskPoint; 8],
    pub vertex_radius: f64,
    pub margin: f64,
    /// Hyperbolic distance from the origin to a vertex.
    pub vertex_distance: f64,
    half_width: f64,
}

/// Builds the regular-octagon atlas of the Bolza surface.
pub fn bolza_atlas() -> SurfaceAtlas {
    SurfaceAtlas::bolza(DEFAULT_MARGIN)
}

impl SurfaceAtlas {
    pub fn bolza(margin: f64) -> Self {
        let a = Complex::new(1.0 + SQRT_2, 0.0);
        let modulus = (2.0 + 2.0 * SQRT_2).sqrt();
        let generators: [MobiusMap; 8] = std::array::from_fn(|j| MobiusMap {
            a,
            b: Complex::from_polar(modulus, j as f64 * FRAC_PI_4),
        });
        // adjacent isometric circles |z − c| = 1/|b| with |c|² − 1/|b|² = 1 meet at
        // radius r solving r² − 2 r |c| cos(π/8) + 1 = 0
        let centre = a.re / modulus;
        let proj = centre * FRAC_PI_8.cos();
        let vertex_radius = proj - (proj * proj - 1.0).sqrt();
        let octagon_vertices: [DiskPoint; 8] = std::array::from_fn(|k| DiskPoint {
            z: Complex::from_polar(vertex_radius, (2 * k + 1) as f64 * FRAC_PI_8),
        });
        Self {
            generators,
            octagon_vertices,
            vertex_radius,
            margin,
            vertex_distance: distance_from_origin(Complex::new(vertex_radius, 0.0)),
            half_width: vertex_radius * FRAC_PI_8.cos(),
        }
    }

    /// Half side of the axis-aligned square circumscribing the octagon.
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Signed violation of side `j`: positive iff `z` lies strictly beyond that side,
    /// i.e. closer to `generators[j](0)` than to the origin.
    #[inline]
    pub fn side_excess(&self, j: usize, z: Complex) -> f64 {
        let g = &self.generators[j];
        1.0 - (g.a - g.b.conj() * z).norm()
    }

    /// Largest side violation over all eight sides.
    #[inline]
    pub fn max_side_excess(&self, z: Complex) -> f64 {
        (0..8).map(|j| self.side_excess(j, z)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Membership in the closed octagon.
    #[inline]
    pub fn contains_complex(&self, z: Complex) -> bool {
        z.norm_sqr() < 1.0 && self.max_side_excess(z) <= 0.0
    }

    pub fn contains(&self, z: DiskPoint) -> bool {
        self.contains_complex(z.z)
    }

    /// Greedy reduction: returns `(w, γ)` with `w` in the closed octagon and `γ(w) = z`.
    pub fn reduce(&self, z: DiskPoint) -> Result<(DiskPoint, MobiusMap)> {
        if z.z.norm() > self.vertex_radius + self.margin {
            return Err(Error::NotReducible {
                re: z.z.re,
                im: z.z.im,
                steps: 0,
            });
        }
        let (w, gamma) = self.reduce_complex(z.z)?;
        Ok((DiskPoint { z: w }, gamma))
    }

    /// Same as [`reduce`](Self::reduce) without the neighbourhood precondition.
    pub(crate) fn reduce_complex(&self, z: Complex) -> Result<(Complex, MobiusMap)> {
        let mut w = z;
        let mut word = MobiusMap::IDENTITY;
        for _ in 0..=MAX_REDUCTION_STEPS {
            if self.max_side_excess(w) <= 0.0 {
                return Ok((w, word));
            }
            // apply the inverse pairing of the side that brings w closest to the origin;
            // ties resolve to the lowest index
            let mut best: Option<(usize, Complex, f64)> = None;
            let current = w.norm_sqr();
            for j in 0..8 {
                let candidate = self.generators[(j + 4) % 8].apply_complex(w);
                let r2 = candidate.norm_sqr();
                if r2 <= current && best.map_or(true, |(_, _, b)| r2 < b) {
                    best = Some((j, candidate, r2));
                }
            }
            let Some((j, candidate, _)) = best else {
                break;
            };
            w = candidate;
            word = word.compose(&self.generators[j]);
        }
        Err(Error::NotReducible {
            re: z.re,
            im: z.im,
            steps: MAX_REDUCTION_STEPS,
        })
    }

    /// All reduced words of length at most `max_len`, as `(letters, map)`.
    pub fn words(&self, max_len: usize) -> Vec<(Vec<u8>, MobiusMap)> {
        let mut out = vec![(Vec::new(), MobiusMap::IDENTITY)];
        let mut frontier = vec![(Vec::<u8>::new(), MobiusMap::IDENTITY)];
        for _ in 0..max_len {
            let mut next = Vec::with_capacity(frontier.len() * 7);
            for (letters, map) in &frontier {
                for j in 0..8u8 {
                    if let Some(&last) = letters.last() {
                        if (last + 4) % 8 == j {
                            continue;
                        }
                    }
                    let mut l = letters.clone();
                    l.push(j);
                    next.push((l, map.compose(&self.generators[j as usize])));
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    /// The surface-group relation `g0 g1⁻¹ g2 g3⁻¹ g0⁻¹ g1 g2⁻¹ g3` for this labelling.
    pub fn relator(&self) -> MobiusMap {
        let g = &self.generators;
        let inv = |j: usize| g[(j + 4) % 8];
        [g[0], inv(1), g[2], inv(3), inv(0), g[1], inv(2), g[3]]
            .iter()
            .fold(MobiusMap::IDENTITY, |acc, m| acc.compose(m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng, radius: f64) -> DiskPoint {
        loop {
            let z = Complex::new(rng.gen_range(-radius..radius), rng.gen_range(-radius..radius));
            if z.norm() < radius {
                return DiskPoint::from_complex(z).unwrap();
            }
        }
    }

    #[test]
    fn identity_fixes_points() {
        let z = DiskPoint::new(0.3, 0.1).unwrap();
        let w = MobiusMap::IDENTITY.apply(z).unwrap();
        assert_eq!(w, z);
    }

    #[test]
    fn rejects_boundary_points() {
        assert!(DiskPoint::new(1.0, 0.0).is_err());
        assert!(DiskPoint::new(0.6, 0.8).is_err());
        assert!(DiskPoint::new(f64::NAN, 0.0).is_err());
        let m = bolza_atlas().generators[0];
        assert!(m.apply(DiskPoint::new(0.999_999_999, 0.0).unwrap()).is_ok());
    }

    #[test]
    fn generator_determinants_are_one() {
        let atlas = bolza_atlas();
        // (1+√2)² − (2+2√2) = 1
        let det = (1.0 + SQRT_2).powi(2) - (2.0 + 2.0 * SQRT_2);
        assert!((det - 1.0).abs() < 1e-14);
        for g in &atlas.generators {
            assert!((g.determinant() - 1.0).abs() < 1e-12);
        }
        for g in &atlas.generators {
            for h in &atlas.generators {
                assert!((g.compose(h).determinant() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_round_trip() {
        let atlas = bolza_atlas();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for j in 0..8 {
            let m = atlas.generators[j];
            for _ in 0..100 {
                let z = random_point(&mut rng, 0.5);
                let back = m.inverse().apply(m.apply(z).unwrap()).unwrap();
                assert!((back.to_complex() - z.to_complex()).norm() < 1e-12);
            }
            assert!(atlas.generators[(j + 4) % 8].approx_eq(&m.inverse(), 1e-14));
        }
    }

    #[test]
    fn translation_moves_axis_points_by_translation_length() {
        // oracle: diagonalise through the conjugating rotation and compare with 2·artanh
        let atlas = bolza_atlas();
        for (j, g) in atlas.generators.iter().enumerate() {
            let length = g.translation_length();
            let expected = 2.0 * (2.0 * (1.0 + SQRT_2)).ln(); // 2·arccosh(1+√2)
            let acosh = 2.0 * (1.0 + SQRT_2).acosh();
            assert!((length - acosh).abs() < 1e-12);
            assert!(expected > 0.0);
            let axis = j as f64 * FRAC_PI_4;
            for s in [-0.4, 0.0, 0.3] {
                let z = DiskPoint::from_complex(Complex::from_polar(s, axis)).unwrap();
                let w = g.apply(z).unwrap();
                // w stays on the axis
                let rotated = w.to_complex() * Complex::from_polar(1.0, -axis);
                assert!(rotated.im.abs() < 1e-12);
                let shift = 2.0 * rotated.re.atanh() - 2.0 * s.atanh();
                assert!((shift - length).abs() < 1e-10, "{shift} vs {length}");
            }
        }
    }

    #[test]
    fn distance_closed_forms() {
        let o = DiskPoint::origin();
        assert_eq!(hyperbolic_distance(o, o), 0.0);
        for r in [0.1, 0.5, 0.9] {
            let z = DiskPoint::new(r, 0.0).unwrap();
            let expected = ((1.0 + r) / (1.0 - r)).ln();
            assert!((hyperbolic_distance(o, z) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn generators_are_isometries() {
        let atlas = bolza_atlas();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let z1 = random_point(&mut rng, 0.8);
            let z2 = random_point(&mut rng, 0.8);
            let d = hyperbolic_distance(z1, z2);
            for g in &atlas.generators {
                let dg = hyperbolic_distance(g.apply(z1).unwrap(), g.apply(z2).unwrap());
                assert!((d - dg).abs() < 1e-12 * d.max(1.0), "{d} vs {dg}");
            }
        }
    }

    #[test]
    fn vertex_radius_from_isometric_circle_intersection() {
        // oracle: bisect along the ray at angle π/8 for the point equidistant from
        // the origin and g0(0); it must coincide with the closed-form radius 2^(-1/4)
        let atlas = bolza_atlas();
        let g0 = atlas.generators[0];
        let target = g0.apply_complex(Complex::new(0.0, 0.0));
        let f = |r: f64| {
            let z = Complex::from_polar(r, FRAC_PI_8);
            distance_from_origin(z) - distance_complex(z, target)
        };
        let (mut lo, mut hi) = (0.1, 0.99);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((0.5 * (lo + hi) - atlas.vertex_radius).abs() < 1e-12);
        assert!((atlas.vertex_radius - 2f64.powf(-0.25)).abs() < 1e-12);
        // the angle-sum condition: cosh(R) = cot²(π/8)
        let cot = 1.0 / FRAC_PI_8.tan();
        assert!((atlas.vertex_distance.cosh() - cot * cot).abs() < 1e-9);
    }

    #[test]
    fn vertices_lie_on_two_sides() {
        let atlas = bolza_atlas();
        for (k, v) in atlas.octagon_vertices.iter().enumerate() {
            assert!(atlas.side_excess(k, v.to_complex()).abs() < 1e-12);
            assert!(atlas.side_excess((k + 1) % 8, v.to_complex()).abs() < 1e-12);
        }
    }

    #[test]
    fn generators_pair_opposite_sides() {
        let atlas = bolza_atlas();
        for j in 0..8 {
            // midpoint of side j+4 maps to the midpoint of side j
            let opposite = (j + 4) % 8;
            let mid_dist = 0.5 * atlas.generators[0].translation_length();
            let m = Complex::from_polar((0.5 * mid_dist).tanh(), opposite as f64 * FRAC_PI_4);
            assert!(atlas.side_excess(opposite, m).abs() < 1e-12);
            let image = atlas.generators[j].apply_complex(m);
            assert!(atlas.side_excess(j, image).abs() < 1e-12);
        }
    }

    #[test]
    fn surface_group_relation_holds() {
        let atlas = bolza_atlas();
        let rel = atlas.relator();
        assert!(rel.approx_eq(&MobiusMap::IDENTITY, 1e-10), "{rel:?}");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let z = random_point(&mut rng, 0.9);
            assert!((rel.apply_complex(z.to_complex()) - z.to_complex()).norm() < 1e-10);
        }
    }

    #[test]
    fn octagon_copies_do_not_overlap() {
        // sample the octagon; no image under a generator may land strictly inside it,
        // and no two generator images may share an interior point
        let atlas = bolza_atlas();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut samples = Vec::new();
        while samples.len() < 1000 {
            let z = random_point(&mut rng, atlas.vertex_radius);
            if atlas.max_side_excess(z.to_complex()) < -1e-9 {
                samples.push(z.to_complex());
            }
        }
        for z in &samples {
            for (j, g) in atlas.generators.iter().enumerate() {
                let w = g.apply_complex(*z);
                assert!(atlas.max_side_excess(w) > 1e-12);
                for (k, h) in atlas.generators.iter().enumerate() {
                    if k == j {
                        continue;
                    }
                    // w inside h(octagon) ⇔ h⁻¹(w) inside the octagon
                    let back = h.inverse().apply_complex(w);
                    assert!(atlas.max_side_excess(back) > -1e-12);
                }
            }
        }
    }

    #[test]
    fn reduction_of_interior_points_is_trivial() {
        let atlas = bolza_atlas();
        let z = DiskPoint::new(0.2, -0.3).unwrap();
        let (w, g) = atlas.reduce(z).unwrap();
        assert_eq!(w, z);
        assert_eq!(g, MobiusMap::IDENTITY);
    }

    #[test]
    fn reduction_undoes_a_generator() {
        let atlas = bolza_atlas();
        let p = DiskPoint::new(0.25, 0.1).unwrap();
        let z = atlas.generators[0].apply(p).unwrap();
        let (w, g) = atlas.reduce(z).unwrap();
        assert!((w.to_complex() - p.to_complex()).norm() < 1e-10);
        assert!(g.approx_eq(&atlas.generators[0], 1e-10));
    }

    #[test]
    fn margin_ring_points_reduce_and_round_trip() {
        let atlas = bolza_atlas();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let outer = atlas.vertex_radius + atlas.margin;
        let mut count = 0;
        while count < 10_000 {
            let z = random_point(&mut rng, outer);
            if atlas.contains(z) {
                continue;
            }
            count += 1;
            let (w, g) = atlas.reduce(z).unwrap();
            assert!(atlas.contains(w));
            assert!((g.apply_complex(w.to_complex()) - z.to_complex()).norm() < 1e-10);
            // idempotence
            let (w2, g2) = atlas.reduce(w).unwrap();
            assert_eq!(w2, w);
            assert_eq!(g2, MobiusMap::IDENTITY);
        }
    }

    #[test]
    fn far_points_are_not_reducible() {
        let atlas = bolza_atlas();
        let z = DiskPoint::new(0.999, 0.0).unwrap();
        assert!(matches!(atlas.reduce(z), Err(Error::NotReducible { .. })));
    }

    #[test]
    fn reduced_words_are_distinct_group_elements() {
        let atlas = bolza_atlas();
        let words = atlas.words(2);
        assert_eq!(words.len(), 1 + 8 + 8 * 7);
        let images: Vec<Complex> = words
            .iter()
            .map(|(_, m)| m.apply_complex(Complex::new(0.05, 0.02)))
            .collect();
        for i in 0..images.len() {
            for j in 0..i {
                assert!((images[i] - images[j]).norm() > 1e-6);
            }
        }
    }
}
