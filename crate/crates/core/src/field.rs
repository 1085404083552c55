//! Γ-invariant conformal metrics `e^{2ρ} g_hyp` sampled on the octagon lattice.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::{conformal_scale, Lattice, NodeKind, DEFAULT_SPACING};
use crate::mobius::{distance_complex, distance_from_origin, Complex, DiskPoint, MobiusMap, SurfaceAtlas};

/// Bump profile with compact support of radius `width`.
///
/// `b(d) = a·(w²/2)·(1 − (d/w)²)³`. The `w²/2` factor makes the hyperbolic
/// Laplacian at the centre equal to `6a` regardless of width, so amplitudes
/// around 0.1 give mildly pinched negative curvature.
pub fn bump_profile(amplitude: f64, width: f64, d: f64) -> f64 {
    if d >= width {
        return 0.0;
    }
    let s = 1.0 - (d / width).powi(2);
    amplitude * 0.5 * width * width * s * s * s
}

/// Specification of a bump field, kept for direct (lattice-free) evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct BumpSpec {
    pub centers: Vec<DiskPoint>,
    pub amplitudes: Vec<f64>,
    pub width: f64,
}

/// Pointwise data of a field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldSample {
    pub rho: f64,
    /// Euclidean gradient `(∂ₓρ, ∂ᵧρ)` in the disk chart.
    pub gradient: (f64, f64),
    /// Hyperbolic Laplacian `Δ_hyp ρ`.
    pub laplacian: f64,
    pub curvature: f64,
}

#[derive(Clone, Debug)]
pub struct CurvatureField {
    /// Curvature at lattice nodes; NaN where unused.
    pub values: Vec<f64>,
    pub kbar: f64,
    pub k_min: f64,
    pub k_max: f64,
}

impl CurvatureField {
    /// Ratio `K_min / K_max` of the most to least negative curvature.
    pub fn pinching(&self) -> f64 {
        self.k_min / self.k_max
    }
}

#[derive(Clone, Debug)]
pub struct ConformalField {
    lattice: Arc<Lattice>,
    rho: Vec<f64>,
    laplacian: Vec<f64>,
    curvature: CurvatureField,
    area: f64,
    // spline coefficients for point evaluation
    rho_spline: Vec<f64>,
    laplacian_spline: Vec<f64>,
    curvature_spline: Vec<f64>,
}

impl ConformalField {
    /// Builds a field from lattice values. Interior nodes are authoritative;
    /// ghost values are recomputed and tables derived.
    pub fn from_values(lattice: Arc<Lattice>, mut rho: Vec<f64>) -> Result<Self> {
        if rho.len() != lattice.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} lattice values, got {}",
                lattice.len(),
                rho.len()
            )));
        }
        for (idx, v) in rho.iter_mut().enumerate() {
            match lattice.kind(idx) {
                NodeKind::Unused => *v = f64::NAN,
                NodeKind::Interior if !v.is_finite() => {
                    return Err(Error::InvalidArgument(format!("non-finite ρ at node {idx}")))
                }
                _ => {}
            }
        }
        lattice.fill_ghosts(&mut rho);

        let mut laplacian = vec![f64::NAN; lattice.len()];
        for &idx in lattice.interior() {
            laplacian[idx] = 0.0;
        }
        lattice.hyperbolic_laplacian_interior(&rho, &mut laplacian);
        lattice.fill_ghosts(&mut laplacian);

        let mut k = vec![f64::NAN; lattice.len()];
        for idx in 0..lattice.len() {
            if lattice.kind(idx) == NodeKind::Interior {
                k[idx] = (-2.0 * rho[idx]).exp() * (-laplacian[idx] - 1.0);
            }
        }
        lattice.fill_ghosts(&mut k);

        let mut area = 0.0;
        let mut total_k = 0.0;
        for &(idx, w) in lattice.area_weights() {
            let dens = w * (2.0 * rho[idx]).exp();
            area += dens;
            total_k += dens * k[idx];
        }
        let (mut k_min, mut k_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &idx in lattice.interior() {
            k_min = k_min.min(k[idx]);
            k_max = k_max.max(k[idx]);
        }
        Ok(Self {
            rho_spline: lattice.spline_coefficients(&rho),
            laplacian_spline: lattice.spline_coefficients(&laplacian),
            curvature_spline: lattice.spline_coefficients(&k),
            lattice,
            rho,
            laplacian,
            curvature: CurvatureField {
                values: k,
                kbar: total_k / area,
                k_min,
                k_max,
            },
            area,
        })
    }

    /// Constant field `ρ ≡ c`.
    pub fn constant(lattice: Arc<Lattice>, c: f64) -> Result<Self> {
        let rho = vec![c; lattice.len()];
        Self::from_values(lattice, rho)
    }

    /// Hyperbolic metric: `ρ ≡ 0`.
    pub fn hyperbolic(lattice: Arc<Lattice>) -> Result<Self> {
        Self::constant(lattice, 0.0)
    }

    /// Returns a copy shifted by a constant so that the area matches the
    /// lattice's quadrature of the hyperbolic octagon.
    pub fn area_normalized(&self) -> Result<Self> {
        let shift = 0.5 * (self.lattice.reference_area() / self.area).ln();
        let rho = self
            .rho
            .iter()
            .enumerate()
            .map(|(idx, &v)| match self.lattice.kind(idx) {
                NodeKind::Interior => v + shift,
                _ => v,
            })
            .collect();
        Self::from_values(Arc::clone(&self.lattice), rho)
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    pub fn atlas(&self) -> &SurfaceAtlas {
        self.lattice.atlas()
    }

    pub fn grid_spacing(&self) -> f64 {
        self.lattice.spacing()
    }

    /// ρ at lattice nodes (NaN at unused nodes).
    pub fn values(&self) -> &[f64] {
        &self.rho
    }

    /// `Δ_hyp ρ` at lattice nodes.
    pub fn laplacian_values(&self) -> &[f64] {
        &self.laplacian
    }

    pub fn curvature(&self) -> &CurvatureField {
        &self.curvature
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn sup_norm(&self) -> f64 {
        self.lattice
            .interior()
            .iter()
            .map(|&i| self.rho[i].abs())
            .fold(0.0, f64::max)
    }

    /// `∫ f dA_g` with `f` sampled on the lattice.
    pub fn area_integral(&self, f: &[f64]) -> f64 {
        self.lattice
            .area_weights()
            .iter()
            .map(|&(idx, w)| f[idx] * w * (2.0 * self.rho[idx]).exp())
            .sum()
    }

    /// `∫ f dA_g` for a function of the disk point.
    pub fn area_integral_with(&self, f: impl Fn(Complex) -> f64) -> f64 {
        self.lattice
            .area_weights()
            .iter()
            .map(|&(idx, w)| f(self.lattice.node_position(idx)) * w * (2.0 * self.rho[idx]).exp())
            .sum()
    }

    /// Mean root curvature `κ = (1/A) ∫ √(−K) dA`.
    pub fn mean_root_curvature(&self) -> f64 {
        let roots: Vec<f64> = self.curvature.values.iter().map(|&k| (-k).max(0.0).sqrt()).collect();
        self.area_integral(&roots) / self.area
    }

    /// Interpolated field data at a point of the octagon or its margin.
    pub fn evaluate(&self, z: DiskPoint) -> Result<FieldSample> {
        let atlas = self.lattice.atlas();
        let zc = z.to_complex();
        if zc.norm() > atlas.vertex_radius + atlas.margin {
            return Err(Error::OutOfRange { re: zc.re, im: zc.im });
        }
        let (w, gamma) = atlas
            .reduce_complex(zc)
            .map_err(|_| Error::OutOfRange { re: zc.re, im: zc.im })?;
        let mut s = self
            .sample_chart(w)
            .ok_or(Error::OutOfRange { re: zc.re, im: zc.im })?;
        // ρ(z) = ρ(m z) with m = γ⁻¹, so ∇ρ(z) = conj(m'(z))·∇ρ(m z) as complex numbers
        let m: MobiusMap = gamma.inverse();
        let g = Complex::new(s.gradient.0, s.gradient.1) * m.derivative(zc).conj();
        s.gradient = (g.re, g.im);
        Ok(s)
    }

    /// Interpolation at a chart point covered by the lattice, without reduction.
    #[inline]
    pub(crate) fn sample_chart(&self, z: Complex) -> Option<FieldSample> {
        let (rho, gx, gy) = self.lattice.spline_value_gradient(&self.rho_spline, z)?;
        let laplacian = self.lattice.spline_value(&self.laplacian_spline, z)?;
        let curvature = self.lattice.spline_value(&self.curvature_spline, z)?;
        Some(FieldSample {
            rho,
            gradient: (gx, gy),
            laplacian,
            curvature,
        })
    }

    /// ρ and its gradient only; the geodesic integrator's hot path.
    #[inline]
    pub(crate) fn rho_gradient_chart(&self, z: Complex) -> Option<(f64, f64, f64)> {
        self.lattice.spline_value_gradient(&self.rho_spline, z)
    }

    /// Interpolated lattice curvature and its Euclidean gradient at a chart point.
    #[inline]
    pub(crate) fn curvature_gradient_chart(&self, z: Complex) -> Option<(f64, f64, f64)> {
        self.lattice.spline_value_gradient(&self.curvature_spline, z)
    }

    /// Writes the field as a plain-text snapshot.
    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.snapshot_string())?;
        Ok(())
    }

    pub fn snapshot_string(&self) -> String {
        let l = &self.lattice;
        let mut s = String::with_capacity(24 * l.len());
        let _ = writeln!(s, "grid_spacing = {}", l.spacing());
        let _ = writeln!(s, "nodes_per_axis = {}", l.size());
        let _ = writeln!(s, "extent_min = {}", l.extent());
        let _ = writeln!(s, "margin = {}", l.atlas().margin);
        let _ = writeln!(s, "area = {}", self.area);
        let _ = writeln!(s, "kbar = {}", self.curvature.kbar);
        let _ = writeln!(s, "values");
        for &v in &self.rho {
            let _ = writeln!(s, "{}", if v.is_nan() { 0.0 } else { v });
        }
        s
    }

    pub fn read_snapshot(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_snapshot(&text)
    }

    pub fn parse_snapshot(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut spacing = None;
        let mut size = None;
        let mut margin = crate::mobius::DEFAULT_MARGIN;
        for line in lines.by_ref() {
            let line = line.trim();
            if line == "values" {
                break;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Snapshot(format!("malformed header line `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = || {
                value
                    .parse::<f64>()
                    .map_err(|e| Error::Snapshot(format!("{key}: {e}")))
            };
            match key {
                "grid_spacing" => spacing = Some(num()?),
                "nodes_per_axis" => {
                    size = Some(
                        value
                            .parse::<usize>()
                            .map_err(|e| Error::Snapshot(format!("{key}: {e}")))?,
                    )
                }
                "margin" => margin = num()?,
                "extent_min" | "area" | "kbar" => {
                    num()?;
                }
                other => return Err(Error::Snapshot(format!("unknown header key `{other}`"))),
            }
        }
        let spacing = spacing.ok_or_else(|| Error::Snapshot("missing grid_spacing".into()))?;
        let lattice = Lattice::new(SurfaceAtlas::bolza(margin), spacing)?;
        if Some(lattice.size()) != size {
            return Err(Error::Snapshot(format!(
                "nodes_per_axis {size:?} does not match lattice size {}",
                lattice.size()
            )));
        }
        let values = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Snapshot(format!("value `{l}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_values(Arc::new(lattice), values)
    }
}

/// Group elements whose bump copies can reach the octagon: all words of length ≤ 2.
fn short_orbit(atlas: &SurfaceAtlas) -> Vec<MobiusMap> {
    atlas.words(2).into_iter().map(|(_, g)| g).collect()
}

/// Checks that no word of length 3 or 4 carries a bump support into the octagon.
fn check_orbit_truncation(atlas: &SurfaceAtlas, center: Complex, width: f64) -> Result<()> {
    let short = short_orbit(atlas);
    for (word, g) in atlas.words(4) {
        if word.len() < 3 || short.iter().any(|s| s.approx_eq(&g, 1e-9)) {
            continue;
        }
        if distance_from_origin(g.apply_complex(center)) < atlas.vertex_distance + width {
            return Err(Error::OrbitTruncated {
                re: center.re,
                im: center.im,
                width,
            });
        }
    }
    Ok(())
}

impl BumpSpec {
    /// Reduces centres to the octagon and validates the specification.
    pub fn new(atlas: &SurfaceAtlas, centers: Vec<DiskPoint>, amplitudes: Vec<f64>, width: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::InvalidArgument(format!("bump width {width} must be positive")));
        }
        if centers.len() != amplitudes.len() {
            return Err(Error::InvalidArgument(format!(
                "{} centres but {} amplitudes",
                centers.len(),
                amplitudes.len()
            )));
        }
        let mut reduced = Vec::with_capacity(centers.len());
        for c in centers {
            let (w, _) = atlas.reduce(c)?;
            check_orbit_truncation(atlas, w.to_complex(), width)?;
            reduced.push(w);
        }
        Ok(Self {
            centers: reduced,
            amplitudes,
            width,
        })
    }

    /// Direct orbit-sum value at a point of the octagon (no area normalization).
    pub fn orbit_sum(&self, atlas: &SurfaceAtlas, z: Complex) -> f64 {
        let orbit = short_orbit(atlas);
        self.orbit_sum_with(&orbit, z)
    }

    /// Euclidean gradient `(∂_x, ∂_y)` of [`BumpSpec::orbit_sum`], in closed form.
    pub fn orbit_sum_gradient(&self, atlas: &SurfaceAtlas, z: Complex) -> (f64, f64) {
        let orbit = short_orbit(atlas);
        let w = self.width;
        let mut acc = Complex::new(0.0, 0.0);
        for (c, &a) in self.centers.iter().zip(&self.amplitudes) {
            for g in &orbit {
                let p = g.apply_complex(c.to_complex());
                let d = distance_complex(z, p);
                if d >= w || d < 1e-12 {
                    continue;
                }
                // cosh d = 1 + 2|z−p|²/((1−|z|²)(1−|p|²))
                let (qz, qp) = (1.0 - z.norm_sqr(), 1.0 - p.norm_sqr());
                let dz = z - p;
                let grad_cosh = (dz * 2.0 / qz + z * (2.0 * dz.norm_sqr() / (qz * qz))) * (2.0 / qp);
                let s = 1.0 - (d / w).powi(2);
                let db = a * 0.5 * w * w * 3.0 * s * s * (-2.0 * d / (w * w));
                acc += grad_cosh * (db / d.sinh());
            }
        }
        (acc.re, acc.im)
    }

    fn orbit_sum_with(&self, orbit: &[MobiusMap], z: Complex) -> f64 {
        let mut acc = 0.0;
        for (c, &a) in self.centers.iter().zip(&self.amplitudes) {
            for g in orbit {
                let d = distance_complex(z, g.apply_complex(c.to_complex()));
                acc += bump_profile(a, self.width, d);
            }
        }
        acc
    }
}

/// Field `Σ_j a_j Σ_γ b(d(z, γc_j))` shifted to the reference area.
///
/// Fails with `CurvaturePositive` if the curvature is not negative everywhere.
pub fn field_from_bumps(lattice: Arc<Lattice>, spec: &BumpSpec) -> Result<ConformalField> {
    let orbit = short_orbit(lattice.atlas());
    let mut rho = vec![0.0; lattice.len()];
    for &idx in lattice.interior() {
        rho[idx] = spec.orbit_sum_with(&orbit, lattice.node_position(idx));
    }
    let field = ConformalField::from_values(lattice, rho)?.area_normalized()?;
    if field.curvature.k_max >= 0.0 {
        return Err(Error::CurvaturePositive {
            k_max: field.curvature.k_max,
        });
    }
    Ok(field)
}

/// Default lattice over the Bolza octagon.
pub fn default_lattice() -> Result<Arc<Lattice>> {
    Ok(Arc::new(Lattice::new(crate::mobius::bolza_atlas(), DEFAULT_SPACING)?))
}

/// Euclidean Laplacian factor used by the flow: `Δ_hyp = scale(z)·Δ_eucl`.
pub fn laplacian_scale(z: Complex) -> f64 {
    conformal_scale(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mobius::bolza_atlas;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::OnceLock;

    fn lattice() -> Arc<Lattice> {
        static L: OnceLock<Arc<Lattice>> = OnceLock::new();
        Arc::clone(L.get_or_init(|| default_lattice().unwrap()))
    }

    fn single_bump() -> (BumpSpec, ConformalField) {
        let atlas = bolza_atlas();
        let spec = BumpSpec::new(&atlas, vec![DiskPoint::new(0.2, 0.1).unwrap()], vec![0.1], 0.5).unwrap();
        let field = field_from_bumps(lattice(), &spec).unwrap();
        (spec, field)
    }

    fn random_octagon_point(rng: &mut ChaCha8Rng, atlas: &SurfaceAtlas) -> Complex {
        loop {
            let h = atlas.half_width();
            let z = Complex::new(rng.gen_range(-h..h), rng.gen_range(-h..h));
            if atlas.contains_complex(z) {
                return z;
            }
        }
    }

    #[test]
    fn bump_profile_is_c2_at_support_edge() {
        let (a, w) = (0.1, 0.5);
        let e = 1e-4;
        assert_eq!(bump_profile(a, w, w), 0.0);
        let f = |d| bump_profile(a, w, d);
        let d1 = (f(w - e) - f(w - 2.0 * e)) / e;
        let d2 = (f(w - e) - 2.0 * f(w - 2.0 * e) + f(w - 3.0 * e)) / (e * e);
        assert!(d1.abs() < 1e-6 && d2.abs() < 1e-3);
    }

    #[test]
    fn zero_amplitudes_give_the_hyperbolic_metric() {
        let atlas = bolza_atlas();
        let spec = BumpSpec::new(&atlas, vec![DiskPoint::origin()], vec![0.0], 0.5).unwrap();
        let f = field_from_bumps(lattice(), &spec).unwrap();
        assert!(f.sup_norm() == 0.0);
        let k = f.curvature();
        assert_eq!((k.k_min, k.k_max), (-1.0, -1.0));
    }

    #[test]
    fn constant_field_has_constant_curvature() {
        let c = 0.3;
        let f = ConformalField::constant(lattice(), c).unwrap();
        let k = f.curvature();
        // ghost weights sum to one only up to rounding, which the 1/h² stencil amplifies
        assert!((k.k_min + (-2.0 * c).exp()).abs() < 1e-9);
        assert!((k.k_max + (-2.0 * c).exp()).abs() < 1e-9);
        let s = f.evaluate(DiskPoint::new(0.5, -0.2).unwrap()).unwrap();
        assert!((s.rho - c).abs() < 1e-14 && s.gradient.0.abs() < 1e-12 && s.laplacian.abs() < 1e-12);
    }

    #[test]
    fn hyperbolic_field_integrals() {
        let f = ConformalField::hyperbolic(lattice()).unwrap();
        assert!((f.area() - 4.0 * PI).abs() / (4.0 * PI) < 1e-4);
        assert!((f.mean_root_curvature() - 1.0).abs() < 1e-14);
        let s = f.evaluate(DiskPoint::new(-0.3, 0.4).unwrap()).unwrap();
        assert_eq!((s.rho, s.gradient, s.laplacian), (0.0, (0.0, 0.0), 0.0));
    }

    #[test]
    fn single_bump_gauss_bonnet_and_pinching() {
        let (_, f) = single_bump();
        let k = f.curvature();
        assert!(k.k_max > -1.0 && k.k_min < -1.0, "{} {}", k.k_min, k.k_max);
        assert!((k.kbar + 1.0).abs() < 1e-4, "kbar {}", k.kbar);
        let total = f.area_integral(&k.values);
        assert!((total + 4.0 * PI).abs() / (4.0 * PI) < 1e-3);
        assert!((f.area() - f.lattice().reference_area()).abs() < 1e-12);
    }

    #[test]
    fn evaluation_matches_orbit_sum_at_bump_centre() {
        let (spec, f) = single_bump();
        let c = spec.centers[0];
        let raw = f.evaluate(c).unwrap().rho;
        // the normalizing shift is read off a node far from any bump support
        let far = Complex::new(-0.5, -0.3);
        let shift = f.evaluate(DiskPoint::from_complex(far).unwrap()).unwrap().rho - spec.orbit_sum(f.atlas(), far);
        let direct = spec.orbit_sum(f.atlas(), c.to_complex()) + shift;
        assert!((raw - direct).abs() < 1e-6, "{raw} vs {direct}");
    }

    #[test]
    fn evaluation_is_group_invariant() {
        let (_, f) = single_bump();
        let atlas = f.atlas().clone();
        let words = atlas.words(2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tested = 0;
        while tested < 1000 {
            let z = random_octagon_point(&mut rng, &atlas);
            let (_, g) = &words[rng.gen_range(0..words.len())];
            let gz = g.apply_complex(z);
            if gz.norm() > atlas.vertex_radius + atlas.margin {
                continue;
            }
            let a = f.evaluate(DiskPoint::from_complex(z).unwrap()).unwrap();
            let b = f.evaluate(DiskPoint::from_complex(gz).unwrap()).unwrap();
            assert!((a.rho - b.rho).abs() < 1e-8);
            assert!((a.curvature - b.curvature).abs() < 1e-6);
            tested += 1;
        }
    }

    #[test]
    fn ghost_nodes_match_the_orbit_sum() {
        let (spec, f) = single_bump();
        let l = f.lattice();
        let far = Complex::new(-0.5, -0.3);
        let shift = f.evaluate(DiskPoint::from_complex(far).unwrap()).unwrap().rho - spec.orbit_sum(f.atlas(), far);
        let mut worst: f64 = 0.0;
        for idx in 0..l.len() {
            if l.kind(idx) == NodeKind::Ghost {
                let (w, _) = l.atlas().reduce_complex(l.node_position(idx)).unwrap();
                let direct = spec.orbit_sum(f.atlas(), w) + shift;
                worst = worst.max((direct - f.values()[idx]).abs());
            }
        }
        assert!(worst < 1e-7, "worst ghost deviation {worst}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (_, f) = single_bump();
        let e = 1e-6;
        for z in [Complex::new(0.25, 0.05), Complex::new(0.1, 0.3), Complex::new(0.7, 0.1)] {
            let ev = |z: Complex| f.evaluate(DiskPoint::from_complex(z).unwrap()).unwrap();
            let s = ev(z);
            let gx = (ev(z + e).rho - ev(z - e).rho) / (2.0 * e);
            let gy = (ev(z + Complex::new(0.0, e)).rho - ev(z - Complex::new(0.0, e)).rho) / (2.0 * e);
            assert!((gx - s.gradient.0).abs() < 1e-6 && (gy - s.gradient.1).abs() < 1e-6);
        }
    }

    #[test]
    fn closed_form_orbit_gradient_matches_differences() {
        let (spec, f) = single_bump();
        let e = 1e-6;
        for z in [Complex::new(0.25, 0.05), Complex::new(-0.1, 0.3), Complex::new(0.75, 0.2)] {
            let (gx, gy) = spec.orbit_sum_gradient(f.atlas(), z);
            let o = |z: Complex| spec.orbit_sum(f.atlas(), z);
            let fx = (o(z + e) - o(z - e)) / (2.0 * e);
            let fy = (o(z + Complex::new(0.0, e)) - o(z - Complex::new(0.0, e))) / (2.0 * e);
            assert!((gx - fx).abs() < 1e-8 && (gy - fy).abs() < 1e-8, "{gx} {fx} {gy} {fy}");
        }
    }

    #[test]
    fn out_of_range_points_are_rejected() {
        let f = ConformalField::hyperbolic(lattice()).unwrap();
        assert!(matches!(
            f.evaluate(DiskPoint::new(0.999, 0.0).unwrap()),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn oversized_bump_reports_positive_curvature() {
        let atlas = bolza_atlas();
        let spec = BumpSpec::new(&atlas, vec![DiskPoint::origin()], vec![2.0], 0.5).unwrap();
        assert!(matches!(
            field_from_bumps(lattice(), &spec),
            Err(Error::CurvaturePositive { .. })
        ));
    }

    #[test]
    fn wide_bump_is_rejected_as_truncated() {
        let atlas = bolza_atlas();
        let r = BumpSpec::new(&atlas, vec![DiskPoint::origin()], vec![0.1], 3.0);
        assert!(matches!(r, Err(Error::OrbitTruncated { .. })));
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let (_, f) = single_bump();
        let text = f.snapshot_string();
        let g = ConformalField::parse_snapshot(&text).unwrap();
        for &idx in f.lattice().interior() {
            assert_eq!(f.values()[idx].to_bits(), g.values()[idx].to_bits());
        }
        assert_eq!(f.curvature().kbar.to_bits(), g.curvature().kbar.to_bits());
    }

    #[test]
    fn snapshot_rejects_unknown_keys() {
        let r = ConformalField::parse_snapshot("grid_spacing = 0.0078125\nbogus = 1\nvalues\n");
        assert!(matches!(r, Err(Error::Snapshot(_))));
    }
}
