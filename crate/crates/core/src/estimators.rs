//! Liouville-measure sampling and Monte Carlo estimators of entropy-type functionals.
//!
//! Every estimator draws its samples with [`sample_liouville`], computes one
//! value per sample (in parallel, collected in sample order) and reduces with
//! a fixed pairwise tree, so results do not depend on the worker count.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{BumpSpec, ConformalField};
use crate::geodesic::{
    half_orbit_integral, half_orbit_integrals_on, integrate_geodesic, riccati_stable, riccati_unstable,
    stable_derivative, vertical_derivative, vertical_difference_floor, Curvature, CurvatureBounds, GeodesicParams,
    LatticeFunction, PhaseFunction, StableOrbit, StableSolution, UnitTangent,
};
use crate::lattice::{hyperbolic_density, NodeKind};
use crate::mobius::{Complex, DiskPoint};

/// Header of the estimator CSV report.
pub const CSV_HEADER: &str = "quantity,mean,stderr,n,seed,burn_in,dt,tail_bound";

/// Largest admissible `|∫ψ dA|` after projection.
pub const MEAN_ZERO_TOL: f64 = 1e-8;

/// Mean and standard error of a per-sample quantity.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorReport {
    pub quantity: String,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub seed: u64,
    pub burn_in: f64,
    pub dt: f64,
    pub tail_bound: f64,
}

impl EstimatorReport {
    pub fn from_samples(quantity: &str, values: &[f64], seed: u64, params: &GeodesicParams) -> Result<Self> {
        let (mean, stderr) = mean_stderr(values)?;
        Ok(Self {
            quantity: quantity.to_string(),
            mean,
            stderr,
            n: values.len(),
            seed,
            burn_in: params.burn_in,
            dt: params.dt,
            tail_bound: 0.0,
        })
    }

    fn with_tail(mut self, tail_bound: f64) -> Self {
        self.tail_bound = tail_bound;
        self
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.quantity, self.mean, self.stderr, self.n, self.seed, self.burn_in, self.dt, self.tail_bound
        )
    }

    /// `√(σ₁² + σ₂²)`.
    pub fn combined_stderr(&self, other: &Self) -> f64 {
        self.stderr.hypot(other.stderr)
    }
}

/// Sum in a fixed binary tree, independent of how the values were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Sample mean and `s/√n`.
pub fn mean_stderr(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {n}")));
    }
    let mean = pairwise_sum(values) / n as f64;
    let dev: Vec<f64> = values.iter().map(|x| (x - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    Ok((mean, (var / n as f64).sqrt()))
}

/// Per-sample random stream keyed by `(seed, index)`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// ρ at a point of the octagon.
fn rho_at(field: &ConformalField, z: Complex) -> Result<f64> {
    field
        .rho_gradient_chart(z)
        .map(|r| r.0)
        .ok_or(Error::OutOfRange { re: z.re, im: z.im })
}

/// Unnormalized Liouville base density `e^{2ρ}·4/(1−|z|²)²`.
fn base_density(field: &ConformalField, z: Complex) -> Result<f64> {
    let rho = rho_at(field, z)?;
    Ok((2.0 * rho).exp() * hyperbolic_density(z))
}

/// Draws `n` unit tangent vectors from the Liouville measure of `field`.
///
/// Base points are rejection-sampled from the octagon's bounding box against
/// `e^{2ρ}·dA_hyp`; angles are uniform. Sample `i` uses its own stream.
pub fn sample_liouville(field: &ConformalField, n: usize, seed: u64) -> Result<Vec<UnitTangent>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let atlas = field.atlas();
    let half = atlas.half_width();
    // the density peaks at the vertices; lattice nodes cover the rest
    let mut sup: f64 = 0.0;
    for v in &atlas.octagon_vertices {
        sup = sup.max(base_density(field, v.to_complex() * (1.0 - 1e-9))?);
    }
    let l = field.lattice();
    for &idx in l.interior() {
        sup = sup.max((2.0 * field.values()[idx]).exp() * hyperbolic_density(l.node_position(idx)));
    }
    sup *= 1.1;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i as u64);
            loop {
                let z = Complex::new(rng.gen_range(-half..half), rng.gen_range(-half..half));
                let u: f64 = rng.gen();
                if !atlas.contains_complex(z) {
                    continue;
                }
                let d = base_density(field, z)?;
                debug_assert!(d <= sup, "density {d} above bound {sup}");
                if u * sup < d {
                    let theta = rng.gen_range(0.0..TAU);
                    return Ok(UnitTangent::new(DiskPoint::from_complex(z)?, theta));
                }
            }
        })
        .collect()
}

/// A conformal perturbation direction, mean-zero with respect to `dA_g`.
#[derive(Clone, Debug)]
pub struct Perturbation {
    values: Vec<f64>,
    function: LatticeFunction,
}

impl Perturbation {
    /// Projects lattice values (interior nodes are used) to mean zero.
    pub fn new(field: &ConformalField, mut values: Vec<f64>) -> Result<Self> {
        let l = field.lattice();
        if values.len() != l.len() {
            return Err(Error::InvalidArgument("perturbation has the wrong length".into()));
        }
        for (idx, v) in values.iter_mut().enumerate() {
            if !matches!(l.kind(idx), NodeKind::Interior) {
                *v = 0.0;
            }
        }
        l.fill_ghosts(&mut values);
        let shift = field.area_integral(&values) / field.area();
        for &idx in l.interior() {
            values[idx] -= shift;
        }
        l.fill_ghosts(&mut values);
        let residual = field.area_integral(&values);
        if residual.abs() > MEAN_ZERO_TOL {
            return Err(Error::InvalidArgument(format!("projection left mean {residual}")));
        }
        let function = LatticeFunction::new(field, values.clone())?;
        Ok(Self { values, function })
    }

    /// `ψ = −(K − K̄)`, the normalized Ricci flow direction.
    pub fn curvature_deviation(field: &ConformalField) -> Result<Self> {
        let k = field.curvature();
        Self::new(field, k.values.iter().map(|x| -(x - k.kbar)).collect())
    }

    /// A single bump of the given amplitude and width, projected to mean zero.
    pub fn bump(field: &ConformalField, center: DiskPoint, amplitude: f64, width: f64) -> Result<Self> {
        let spec = BumpSpec::new(field.atlas(), vec![center], vec![amplitude], width)?;
        let l = field.lattice();
        let mut values = vec![0.0; l.len()];
        for &idx in l.interior() {
            values[idx] = spec.orbit_sum(field.atlas(), l.node_position(idx));
        }
        Self::new(field, values)
    }

    pub fn scaled(&self, field: &ConformalField, c: f64) -> Result<Self> {
        Self::new(field, self.values.iter().map(|x| c * x).collect())
    }

    pub fn sum(&self, field: &ConformalField, other: &Self) -> Result<Self> {
        Self::new(field, self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, field: &ConformalField, z: Complex) -> Result<f64> {
        self.function.at(field, z)
    }

    pub fn function(&self) -> &LatticeFunction {
        &self.function
    }

    /// The field `ρ + εψ`, shifted back to the reference area.
    pub fn perturb(&self, field: &ConformalField, eps: f64) -> Result<ConformalField> {
        let rho: Vec<f64> = field.values().iter().zip(&self.values).map(|(r, p)| r + eps * p).collect();
        ConformalField::from_values(field.lattice().clone(), rho)?.area_normalized()
    }
}

/// `√(−K̄)`, the entropy of the constant-curvature metric of the same area.
fn root_kbar(field: &ConformalField) -> f64 {
    (-field.curvature().kbar).max(0.0).sqrt()
}

/// Both Riccati branches at each sample.
fn riccati_pairs(field: &ConformalField, vs: &[UnitTangent], params: &GeodesicParams) -> Result<Vec<(f64, f64)>> {
    vs.par_iter()
        .map(|&v| {
            let s = riccati_stable(field, v, params.burn_in, params.dt)?.value;
            let u = riccati_unstable(field, v, params.burn_in, params.dt)?.value;
            Ok((s, u))
        })
        .collect()
}

fn stable_values(field: &ConformalField, vs: &[UnitTangent], params: &GeodesicParams) -> Result<Vec<f64>> {
    vs.par_iter()
        .map(|&v| Ok(riccati_stable(field, v, params.burn_in, params.dt)?.value))
        .collect()
}

fn curvature_at_samples(field: &ConformalField, vs: &[UnitTangent]) -> Result<Vec<f64>> {
    let k = Curvature::new();
    vs.iter().map(|&v| k.value(field, v)).collect()
}

/// Entropy estimates from the stable and the unstable Riccati solutions.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyEstimate {
    /// Mean of `−w^s`.
    pub stable: EstimatorReport,
    /// Mean of `w^u`, the dual estimate.
    pub unstable: EstimatorReport,
    /// `s − (w^s + s)²/(2s)` with `s = √(−K̄)`: same mean as `−w^s`, because
    /// `∫(w^s)² dm = −K̄`, and far smaller variance.
    pub reduced: EstimatorReport,
}

/// Liouville entropy `h = ∫ −w^s dm` on `n` fresh samples.
pub fn entropy_estimate(field: &ConformalField, n: usize, params: &GeodesicParams, seed: u64) -> Result<EntropyEstimate> {
    let vs = sample_liouville(field, n, seed)?;
    let pairs = riccati_pairs(field, &vs, params)?;
    let s = root_kbar(field);
    let stable: Vec<f64> = pairs.iter().map(|p| -p.0).collect();
    let unstable: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let reduced: Vec<f64> = pairs.iter().map(|p| reduced_entropy_term(p.0, s)).collect();
    let bound = CurvatureBounds::envelope(field).riccati_error_bound(params.burn_in, params.dt);
    Ok(EntropyEstimate {
        stable: EstimatorReport::from_samples("entropy_stable", &stable, seed, params)?.with_tail(bound),
        unstable: EstimatorReport::from_samples("entropy_unstable", &unstable, seed, params)?.with_tail(bound),
        reduced: EstimatorReport::from_samples("entropy_reduced", &reduced, seed, params)?.with_tail(bound),
    })
}

#[inline]
fn reduced_entropy_term(ws: f64, s: f64) -> f64 {
    s - (ws + s).powi(2) / (2.0 * s)
}

/// Mean root curvature `κ = (1/A) ∫ √(−K) dA`.
pub fn mean_root_curvature(field: &ConformalField) -> Result<f64> {
    let k = field.curvature();
    if !(k.k_max < 0.0) {
        return Err(Error::CurvaturePositive { k_max: k.k_max });
    }
    Ok(field.mean_root_curvature())
}

/// Per-sample terms of `dh/dε = −½ ∫ ψ w^s dm`.
///
/// The constant `−√(−K̄)` is subtracted from `w^s` first; since `ψ` has mean
/// zero this leaves the mean unchanged and removes most of the variance.
fn derivative_terms(
    field: &ConformalField,
    psi: &Perturbation,
    vs: &[UnitTangent],
    ws: &[f64],
) -> Result<Vec<f64>> {
    let s = root_kbar(field);
    let terms = vs
        .iter()
        .zip(ws)
        .map(|(v, w)| Ok(-0.5 * psi.at(field, v.z.to_complex())? * (w + s)))
        .collect::<Result<_>>()?;
    Ok(terms)
}

fn derivative_report(
    field: &ConformalField,
    psi: &Perturbation,
    vs: &[UnitTangent],
    ws: &[f64],
    seed: u64,
    params: &GeodesicParams,
) -> Result<EstimatorReport> {
    EstimatorReport::from_samples("dh_formula", &derivative_terms(field, psi, vs, ws)?, seed, params)
}

/// Entropy derivative along `ψ` from the stable solution alone.
pub fn entropy_derivative_formula(
    field: &ConformalField,
    psi: &Perturbation,
    n: usize,
    params: &GeodesicParams,
    seed: u64,
) -> Result<EstimatorReport> {
    Ok(entropy_derivative_formulas(field, &[psi], n, params, seed)?.remove(0))
}

/// The formula for several directions on the same samples; per-sample terms
/// are linear in `ψ`, so the reports are additive across directions.
pub fn entropy_derivative_formulas(
    field: &ConformalField,
    psis: &[&Perturbation],
    n: usize,
    params: &GeodesicParams,
    seed: u64,
) -> Result<Vec<EstimatorReport>> {
    let vs = sample_liouville(field, n, seed)?;
    let ws = stable_values(field, &vs, params)?;
    psis.iter()
        .map(|psi| derivative_report(field, psi, &vs, &ws, seed, params))
        .collect()
}

/// Formula value and centred finite difference of the entropy on common samples.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeComparison {
    /// Reduced entropy estimate of the base field on the same samples.
    pub entropy: EstimatorReport,
    pub formula: EstimatorReport,
    pub finite_difference: EstimatorReport,
    pub eps: f64,
}

impl DerivativeComparison {
    pub fn gap(&self) -> f64 {
        (self.formula.mean - self.finite_difference.mean).abs()
    }
}

/// Compares the formula with `(h(ε) − h(−ε))/(2ε)`.
///
/// One sample of the base Liouville measure serves all three fields: the
/// measure of `ρ ± εψ` (renormalized) has density `e^{2(ρ_ε − ρ)}` against the
/// base one, since both have the same area and the fibre measure is the same
/// in the conformal chart. Each side uses the reduced entropy term; its
/// constant part integrates to the same value on both sides and is dropped.
pub fn entropy_derivative_check(
    field: &ConformalField,
    psi: &Perturbation,
    eps: f64,
    n: usize,
    params: &GeodesicParams,
    seed: u64,
) -> Result<DerivativeComparison> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("step {eps} must be positive")));
    }
    let vs = sample_liouville(field, n, seed)?;
    let ws = stable_values(field, &vs, params)?;
    let formula = derivative_report(field, psi, &vs, &ws, seed, params)?;
    let s0 = root_kbar(field);
    let h0: Vec<f64> = ws.iter().map(|&w| reduced_entropy_term(w, s0)).collect();
    let bound = CurvatureBounds::envelope(field).riccati_error_bound(params.burn_in, params.dt);
    let entropy = EstimatorReport::from_samples("entropy_reduced", &h0, seed, params)?.with_tail(bound);
    let plus = psi.perturb(field, eps)?;
    let minus = psi.perturb(field, -eps)?;
    let side = |g: &ConformalField| -> Result<Vec<f64>> {
        let s = root_kbar(g);
        let w = stable_values(g, &vs, params)?;
        vs.iter()
            .zip(w)
            .map(|(v, w)| {
                let z = v.z.to_complex();
                let weight = (2.0 * (rho_at(g, z)? - rho_at(field, z)?)).exp();
                Ok(-weight * (w + s).powi(2) / (2.0 * s))
            })
            .collect()
    };
    let (hp, hm) = (side(&plus)?, side(&minus)?);
    // the dropped constants s± differ at second order in ε only
    let shift = (root_kbar(&plus) - root_kbar(&minus)) / (2.0 * eps);
    let fd: Vec<f64> = hp.iter().zip(&hm).map(|(a, b)| (a - b) / (2.0 * eps) + shift).collect();
    Ok(DerivativeComparison {
        entropy,
        formula,
        finite_difference: EstimatorReport::from_samples("dh_fd", &fd, seed, params)?,
        eps,
    })
}

/// `dκ/dε = (1/A)[∫ Δ₀ψ/(2√(−K)) dA₀ + ∫ ψ √(−K) dA₀]`.
pub fn mrc_derivative_formula(field: &ConformalField, psi: &Perturbation) -> Result<f64> {
    let k = field.curvature();
    if !(k.k_max < 0.0) {
        return Err(Error::CurvaturePositive { k_max: k.k_max });
    }
    let l = field.lattice();
    let mut lap = vec![0.0; l.len()];
    l.hyperbolic_laplacian_interior(psi.values(), &mut lap);
    // boundary cells carry quadrature weight on ghost nodes
    l.fill_ghosts(&mut lap);
    // Δ₀ψ dA₀ = Δ_hyp ψ dA_hyp
    let first: f64 = l
        .area_weights()
        .iter()
        .map(|&(idx, w)| w * lap[idx] / (2.0 * (-k.values[idx]).sqrt()))
        .sum();
    let roots: Vec<f64> = k.values.iter().zip(psi.values()).map(|(k, p)| p * (-k).sqrt()).collect();
    Ok((first + field.area_integral(&roots)) / field.area())
}

/// Centred difference of κ across `ρ ± εψ`.
pub fn mrc_derivative_fd(field: &ConformalField, psi: &Perturbation, eps: f64) -> Result<f64> {
    let plus = mean_root_curvature(&psi.perturb(field, eps)?)?;
    let minus = mean_root_curvature(&psi.perturb(field, -eps)?)?;
    Ok((plus - minus) / (2.0 * eps))
}

/// Both sides of `∫ V(w^s)·I_ψ dm = −½ ∫ ψ w^s dm`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityComparison {
    pub lhs: EstimatorReport,
    pub rhs: EstimatorReport,
}

impl IdentityComparison {
    pub fn gap(&self) -> f64 {
        (self.lhs.mean - self.rhs.mean).abs()
    }

    pub fn combined_stderr(&self) -> f64 {
        self.lhs.combined_stderr(&self.rhs)
    }
}

pub fn verify_integration_by_parts(
    field: &ConformalField,
    psi: &Perturbation,
    n: usize,
    params: &GeodesicParams,
    seed: u64,
) -> Result<IdentityComparison> {
    let vs = sample_liouville(field, n, seed)?;
    let fine = params.fine_steps();
    let ws_fn = StableSolution::new(params);
    let rows: Vec<(f64, f64, f64, f64)> = vs
        .par_iter()
        .map(|&v| {
            let orbit = StableOrbit::new(field, v, params.horizon, params.burn_in, params.dt)?;
            let ip = half_orbit_integrals_on(field, &orbit, &[psi.function()], params, 0.05)?[0];
            let vw = vertical_derivative(field, &ws_fn, v, fine.h_theta)?;
            let floor = vertical_difference_floor(&orbit.bounds, fine.h_theta);
            let tail = vw.abs() * ip.tail_bound + ip.value.abs() * floor;
            Ok((vw * ip.value, orbit.ws0(), tail, psi.at(field, v.z.to_complex())?))
        })
        .collect::<Result<_>>()?;
    let lhs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let tail = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let ws: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let mut rhs = derivative_report(field, psi, &vs, &ws, seed, params)?;
    rhs.quantity = "ibp_rhs".into();
    Ok(IdentityComparison {
        lhs: EstimatorReport::from_samples("ibp_lhs", &lhs, seed, params)?.with_tail(tail),
        rhs,
    })
}

/// Mean of `(w^s)² + K`, which vanishes: `K̄ = −∫ (w^s)² dm`.
pub fn riccati_mean_check(field: &ConformalField, n: usize, params: &GeodesicParams, seed: u64) -> Result<EstimatorReport> {
    let vs = sample_liouville(field, n, seed)?;
    let ws = stable_values(field, &vs, params)?;
    let ks = curvature_at_samples(field, &vs)?;
    let vals: Vec<f64> = ws.iter().zip(&ks).map(|(w, k)| w * w + k).collect();
    EstimatorReport::from_samples("riccati_mean", &vals, seed, params)
}

/// Mean of `(K − K̄)·w^s`, non-negative with equality only in constant curvature.
///
/// `w^s + √(−K̄)` replaces `w^s`; `K − K̄` has mean zero, so the mean is unchanged.
pub fn ricci_direction_sign(field: &ConformalField, n: usize, params: &GeodesicParams, seed: u64) -> Result<EstimatorReport> {
    let vs = sample_liouville(field, n, seed)?;
    let ws = stable_values(field, &vs, params)?;
    let ks = curvature_at_samples(field, &vs)?;
    let kbar = field.curvature().kbar;
    let s = root_kbar(field);
    let vals: Vec<f64> = ws.iter().zip(&ks).map(|(w, k)| (k - kbar) * (w + s)).collect();
    EstimatorReport::from_samples("ricci_direction", &vals, seed, params)
}

/// Residuals of the pointwise identities at one unit vector.
///
/// The first three are relative, after subtracting reported truncation and
/// difference floors; `coboundary` is absolute.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointwiseResiduals {
    /// `(X + w^s) I_ψ + e^s ψ = 0`.
    pub transport: f64,
    /// `I_{w^s} = V(w^s)`.
    pub vertical: f64,
    /// `I_{−K} + e^s(w^s) = I_{(w^s)²}`.
    pub ws_derivative: f64,
    /// `w^u + w^s + X ln(w^u − w^s) = 0`.
    pub coboundary: f64,
    /// Error budget over the scale of the terms, for transport, vertical and
    /// the stable derivative of w^s in that order. Above one the identity is
    /// only confirmed to within its budget.
    pub budget: [f64; 3],
}

impl PointwiseResiduals {
    /// Whether each relative identity was resolved above its budget.
    pub fn resolved(&self) -> [bool; 3] {
        self.budget.map(|b| b < 1.0)
    }
}

fn relative(residual: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        residual / scale
    } else {
        residual
    }
}

/// Evaluates every identity of [`PointwiseResiduals`] at `v`. Flow derivatives
/// are centred differences over `±h_t`.
pub fn pointwise_identities(
    field: &ConformalField,
    psi: &Perturbation,
    v: UnitTangent,
    params: &GeodesicParams,
) -> Result<PointwiseResiduals> {
    let p = &params.transport_steps();
    let fine = p.fine_steps();
    let fwd = integrate_geodesic(field, v, p.h_t, p.dt)?.end()?;
    let bwd = integrate_geodesic(field, v, -p.h_t, p.dt)?.end()?;
    let ricc = |u: UnitTangent| -> Result<(f64, f64)> {
        Ok((
            riccati_stable(field, u, p.burn_in, p.dt)?.value,
            riccati_unstable(field, u, p.burn_in, p.dt)?.value,
        ))
    };
    let (s0, u0) = ricc(v)?;
    let (sf, uf) = ricc(fwd)?;
    let (sb, ub) = ricc(bwd)?;
    let x_log = ((uf - sf).ln() - (ub - sb).ln()) / (2.0 * p.h_t);
    let coboundary = (u0 + s0 + x_log).abs();

    let f = psi.function();
    let i0 = half_orbit_integral(field, f, v, p)?;
    let xi = (half_orbit_integral(field, f, fwd, p)?.value - half_orbit_integral(field, f, bwd, p)?.value)
        / (2.0 * p.h_t);
    let es = stable_derivative(field, f, v, p)?;
    // the integral is only known to its tail bound; far from the bumps every
    // term sits below it
    let scale = xi.abs().max((s0 * i0.value).abs()).max(es.abs()).max(i0.tail_bound);
    let transport = relative((xi + s0 * i0.value + es).abs(), scale);

    let ws = StableSolution::new(p);
    let ws2 = StableSolution::squared(p);
    let negk = Curvature::negated();
    let orbit = StableOrbit::new(field, v, p.horizon, p.burn_in, p.dt)?;
    let fs: [&dyn PhaseFunction; 3] = [&ws, &ws2, &negk];
    let ints = half_orbit_integrals_on(field, &orbit, &fs, p, 0.05)?;
    let (i_ws, i_ws2, i_negk) = (ints[0].value, ints[1].value, ints[2].value);
    let vws = vertical_derivative(field, &ws, v, fine.h_theta)?;
    let es_ws = stable_derivative(field, &ws, v, &fine)?;
    let floor = vertical_difference_floor(&orbit.bounds, fine.h_theta);
    let v_slack = ints[0].tail_bound + floor;
    let v_scale = vws.abs().max(i_ws.abs());
    let vertical = relative(((i_ws - vws).abs() - v_slack).max(0.0), v_scale);
    let sd_slack = ints[1].tail_bound + ints[2].tail_bound + floor;
    let sd_scale = i_negk.abs().max(es_ws.abs()).max(i_ws2.abs());
    let ws_derivative = relative(((i_negk + es_ws - i_ws2).abs() - sd_slack).max(0.0), sd_scale);
    Ok(PointwiseResiduals {
        transport,
        vertical,
        ws_derivative,
        coboundary,
        budget: [
            relative(i0.tail_bound, scale),
            relative(v_slack, v_scale),
            relative(sd_slack, sd_scale),
        ],
    })
}

/// [`pointwise_identities`] at `n` Liouville samples, in sample order.
pub fn identity_sweep(
    field: &ConformalField,
    psi: &Perturbation,
    n: usize,
    params: &GeodesicParams,
    seed: u64,
) -> Result<Vec<(UnitTangent, PointwiseResiduals)>> {
    sample_liouville(field, n, seed)?
        .into_par_iter()
        .map(|v| Ok((v, pointwise_identities(field, psi, v, params)?)))
        .collect()
}

/// `Σ wᵢ Fᵢ² (Fᵢ − Σ wⱼ Fⱼ)`, non-negative for non-negative `F`.
pub fn jensen_check(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.len() != weights.len() || values.is_empty() {
        return Err(Error::InvalidArgument("values and weights must be non-empty and of equal length".into()));
    }
    for (index, &value) in values.iter().chain(weights).enumerate() {
        if !(value >= 0.0) {
            return Err(Error::NegativeInput { index: index % values.len(), value });
        }
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
    }
    // Σᵢ wᵢ Fᵢ² Σⱼ wⱼ (Fᵢ − Fⱼ): equal to the above since Σ w = 1, and
    // exactly zero on constant input
    Ok(values
        .iter()
        .zip(weights)
        .map(|(fi, wi)| {
            let spread: f64 = values.iter().zip(weights).map(|(fj, wj)| wj * (fi - fj)).sum();
            wi * fi * fi * spread
        })
        .sum())
}

/// Outcome of [`jensen_sweep`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JensenSweep {
    pub trials: usize,
    /// Smallest value over random non-negative inputs.
    pub min: f64,
    /// Largest `|value|` over constant inputs.
    pub constant_max: f64,
}

/// [`jensen_check`] on `trials` random non-negative vectors (lengths 1 to 16,
/// entries spread over several decades) and as many constant ones.
pub fn jensen_sweep(trials: usize, seed: u64) -> Result<JensenSweep> {
    let rows: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i as u64);
            let len = rng.gen_range(1..=16);
            let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
            let values: Vec<f64> = (0..len).map(|_| scale * rng.gen::<f64>()).collect();
            let raw: Vec<f64> = (0..len).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
            let constant = vec![values[0]; len];
            Ok((jensen_check(&values, &weights)?, jensen_check(&constant, &weights)?.abs()))
        })
        .collect::<Result<_>>()?;
    Ok(JensenSweep {
        trials,
        min: rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min),
        constant_max: rows.iter().map(|r| r.1).fold(0.0, f64::max),
    })
}

/// Terms of the 1/6-pinched positivity argument.
#[derive(Clone, Debug, PartialEq)]
pub struct PinchedReport {
    /// `K₂/K₁` of the field.
    pub pinching: f64,
    /// `∫ K/(2(w^s)³)·(I_{(w^s)²} − w^s I_{w^s})² dm`.
    pub curvature_term: EstimatorReport,
    /// `∫ −w^s (I_{w^s})²·(3 + K/(2(w^s)²)) dm`.
    pub cubic_term: EstimatorReport,
    /// `−∫ I_{w^s}·I_{−K} dm`.
    pub direct: EstimatorReport,
    /// Per-sample sum of the two terms.
    pub sum: EstimatorReport,
    /// Largest excess of `|w^s|` outside `[√K₁, √K₂]` beyond the reported
    /// Riccati error bound (non-positive when the bound holds everywhere).
    pub band_excess: f64,
}

pub fn pinched_positivity_check(field: &ConformalField, n: usize, params: &GeodesicParams, seed: u64) -> Result<PinchedReport> {
    let vs = sample_liouville(field, n, seed)?;
    let ws_fn = StableSolution::new(params);
    let ws2_fn = StableSolution::squared(params);
    let negk = Curvature::negated();
    let k_fn = Curvature::new();
    let bounds = CurvatureBounds::of(field)?;
    let eb = bounds.riccati_error_bound(params.burn_in, params.dt);
    let (r1, r2) = (bounds.k1.sqrt(), bounds.k2.sqrt());
    let rows: Vec<([f64; 5], f64)> = vs
        .par_iter()
        .map(|&v| {
            let orbit = StableOrbit::new(field, v, params.horizon, params.burn_in, params.dt)?;
            let fs: [&dyn PhaseFunction; 3] = [&ws_fn, &ws2_fn, &negk];
            let ints = half_orbit_integrals_on(field, &orbit, &fs, params, 0.05)?;
            let (iw, iw2, ink) = (ints[0].value, ints[1].value, ints[2].value);
            let w = orbit.ws0();
            let k = k_fn.value(field, v)?;
            let t1 = k / (2.0 * w.powi(3)) * (iw2 - w * iw).powi(2);
            let t2 = -w * iw * iw * (3.0 + k / (2.0 * w * w));
            let direct = -iw * ink;
            let tail = ints.iter().map(|i| i.tail_bound).fold(0.0, f64::max);
            let excess = (r1 - w.abs()).max(w.abs() - r2) - eb;
            Ok(([t1, t2, direct, t1 + t2, excess], tail))
        })
        .collect::<Result<_>>()?;
    let col = |j: usize| rows.iter().map(|r| r.0[j]).collect::<Vec<_>>();
    let tail = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let k = field.curvature();
    Ok(PinchedReport {
        pinching: k.pinching(),
        curvature_term: EstimatorReport::from_samples("pinched_curvature_term", &col(0), seed, params)?.with_tail(tail),
        cubic_term: EstimatorReport::from_samples("pinched_cubic_term", &col(1), seed, params)?.with_tail(tail),
        direct: EstimatorReport::from_samples("pinched_direct", &col(2), seed, params)?.with_tail(tail),
        sum: EstimatorReport::from_samples("pinched_sum", &col(3), seed, params)?.with_tail(tail),
        band_excess: col(4).into_iter().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::default_lattice;
    use crate::lattice::Lattice;
    use std::sync::{Arc, OnceLock};

    fn lattice() -> Arc<Lattice> {
        static L: OnceLock<Arc<Lattice>> = OnceLock::new();
        Arc::clone(L.get_or_init(|| default_lattice().unwrap()))
    }

    #[test]
    fn pairwise_sum_matches_plain_sum() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        assert!((pairwise_sum(&v) - v.iter().sum::<f64>()).abs() < 1e-12);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn report_needs_two_samples() {
        let p = GeodesicParams::default();
        assert!(EstimatorReport::from_samples("x", &[1.0], 0, &p).is_err());
        let r = EstimatorReport::from_samples("x", &[1.0, 3.0], 7, &p).unwrap();
        assert_eq!(r.mean, 2.0);
        assert!((r.stderr - 1.0).abs() < 1e-15);
        assert_eq!(r.csv_row(), "x,2,1,2,7,20,0.005,0");
    }

    #[test]
    fn jensen_examples() {
        assert_eq!(jensen_check(&[7.0, 7.0, 7.0], &[0.2, 0.3, 0.5]).unwrap(), 0.0);
        assert_eq!(jensen_check(&[0.0, 2.0], &[0.5, 0.5]).unwrap(), 2.0);
        assert!(matches!(
            jensen_check(&[1.0, -1.0], &[0.5, 0.5]),
            Err(Error::NegativeInput { index: 1, .. })
        ));
    }

    #[test]
    fn samples_are_reproducible_and_inside() {
        let f = ConformalField::hyperbolic(lattice()).unwrap();
        let a = sample_liouville(&f, 200, 5).unwrap();
        let b = sample_liouville(&f, 200, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| f.atlas().contains(v.z) && (0.0..TAU).contains(&v.theta)));
        assert_ne!(a, sample_liouville(&f, 200, 6).unwrap());
    }

    #[test]
    fn perturbations_are_mean_zero() {
        let f = ConformalField::hyperbolic(lattice()).unwrap();
        let p = Perturbation::bump(&f, DiskPoint::new(0.1, 0.2).unwrap(), 0.3, 0.5).unwrap();
        assert!(f.area_integral(p.values()).abs() < MEAN_ZERO_TOL);
        assert!(p.values().iter().any(|x| x.abs() > 1e-3));
    }

    #[test]
    fn hyperbolic_closed_forms() {
        let f = ConformalField::hyperbolic(lattice()).unwrap();
        assert!((mean_root_curvature(&f).unwrap() - 1.0).abs() < 1e-6);
        let p = GeodesicParams::default();
        let e = entropy_estimate(&f, 20, &p, 1).unwrap();
        assert!((e.stable.mean - 1.0).abs() < 1e-4 && (e.unstable.mean - 1.0).abs() < 1e-4);
        let psi = Perturbation::bump(&f, DiskPoint::new(0.1, 0.2).unwrap(), 0.3, 0.5).unwrap();
        assert!(mrc_derivative_formula(&f, &psi).unwrap().abs() < 1e-6);
    }
}
