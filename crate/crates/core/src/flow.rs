//! Normalized Ricci flow `∂ρ/∂ε = e^{−2ρ}(Δ_hyp ρ + 1) − 1` on the lattice,
//! with checkpoints that estimate entropy and curvature functionals.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::FlowConfig;
use crate::error::{Error, Result};
use crate::estimators::{
    entropy_derivative_check, mean_root_curvature, mrc_derivative_fd, mrc_derivative_formula, EstimatorReport,
    Perturbation,
};
use crate::field::ConformalField;
use crate::lattice::{conformal_scale, hyperbolic_density, Lattice};

/// Header of the flow CSV report.
pub const FLOW_CSV_HEADER: &str =
    "epsilon,h_mean,h_stderr,kappa,k_min,k_max,kbar,pinch,dh_formula,dh_fd,dkappa_formula,dkappa_fd,area_defect";

/// Largest tolerated `|K̄ + 1|` after a step.
pub const KBAR_TOL: f64 = 1e-3;

/// Stability bound `0.2·h²·min 4e^{2ρ}/(1 − |z|²)²` of the explicit step.
pub fn cfl_limit(field: &ConformalField) -> f64 {
    let l = field.lattice();
    let h = l.spacing();
    let min = l
        .interior()
        .iter()
        .map(|&idx| (2.0 * field.values()[idx]).exp() * hyperbolic_density(l.node_position(idx)))
        .fold(f64::INFINITY, f64::min);
    0.2 * h * h * min
}

/// Explicit fourth-order stepper over raw lattice values.
///
/// Fields (splines, curvature tables) are only built on demand, so a long
/// run costs one Laplacian per stage.
pub struct FlowStepper {
    lattice: Arc<Lattice>,
    rho: Vec<f64>,
    scale: Vec<f64>,
    stage: Vec<f64>,
    rates: [Vec<f64>; 4],
    elapsed: f64,
}

impl FlowStepper {
    pub fn new(field: &ConformalField) -> Self {
        let lattice = Arc::clone(field.lattice());
        let n = lattice.len();
        let mut scale = vec![0.0; n];
        for &idx in lattice.interior() {
            scale[idx] = conformal_scale(lattice.node_position(idx));
        }
        let mut rho = field.values().to_vec();
        for v in rho.iter_mut().filter(|v| !v.is_finite()) {
            *v = 0.0;
        }
        Self {
            lattice,
            rho,
            scale,
            stage: vec![0.0; n],
            rates: std::array::from_fn(|_| vec![0.0; n]),
            elapsed: 0.0,
        }
    }

    /// Flow time advanced so far.
    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    pub fn values(&self) -> &[f64] {
        &self.rho
    }

    pub fn field(&self) -> Result<ConformalField> {
        ConformalField::from_values(Arc::clone(&self.lattice), self.rho.clone())
    }

    /// `e^{−2ρ}(Δ_hyp ρ + 1) − 1` at interior nodes; ghosts of `rho` must be current.
    fn rate(lattice: &Lattice, scale: &[f64], rho: &[f64], out: &mut [f64]) {
        let n = lattice.size();
        let h2 = lattice.spacing() * lattice.spacing();
        for &idx in lattice.interior() {
            let lap = (rho[idx - 1] + rho[idx + 1] + rho[idx - n] + rho[idx + n] - 4.0 * rho[idx]) / h2;
            out[idx] = (-2.0 * rho[idx]).exp() * (scale[idx] * lap + 1.0) - 1.0;
        }
    }

    /// One RK4 step of length `dt`, then the constant shift restoring the area.
    ///
    /// Returns the largest change of ρ over interior nodes.
    pub fn step(&mut self, dt: f64) -> Result<f64> {
        let l = Arc::clone(&self.lattice);
        Self::rate(&l, &self.scale, &self.rho, &mut self.rates[0]);
        // ghosts carry quadrature weight in the mean-curvature check
        l.fill_ghosts(&mut self.rates[0]);
        self.check_curvature(&self.rates[0])?;
        for (j, coef) in [0.5 * dt, 0.5 * dt, dt].into_iter().enumerate() {
            let (done, todo) = self.rates.split_at_mut(j + 1);
            for &idx in l.interior() {
                self.stage[idx] = self.rho[idx] + coef * done[j][idx];
            }
            l.fill_ghosts(&mut self.stage);
            Self::rate(&l, &self.scale, &self.stage, &mut todo[0]);
        }
        let [k1, k2, k3, k4] = &self.rates;
        for &idx in l.interior() {
            self.rho[idx] += dt / 6.0 * (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]);
        }
        let area: f64 = l.area_weights().iter().map(|&(idx, w)| w * (2.0 * self.rho[idx]).exp()).sum();
        let shift = 0.5 * (l.reference_area() / area).ln();
        let mut change: f64 = 0.0;
        for &idx in l.interior() {
            self.rho[idx] += shift;
            change = change.max((dt / 6.0 * (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]) + shift).abs());
        }
        l.fill_ghosts(&mut self.rho);
        self.elapsed += dt;
        Ok(change)
    }

    /// Uses `K = −1 − rate` at the start of a step.
    fn check_curvature(&self, rate: &[f64]) -> Result<()> {
        let l = &*self.lattice;
        let (mut total, mut area) = (0.0, 0.0);
        for &(idx, w) in l.area_weights() {
            let dens = w * (2.0 * self.rho[idx]).exp();
            total += dens * (-1.0 - rate[idx]);
            area += dens;
        }
        let kbar = total / area;
        if (kbar + 1.0).abs() > KBAR_TOL {
            return Err(Error::InvalidArgument(format!("mean curvature drifted to {kbar}")));
        }
        let k_max = l.interior().iter().map(|&i| -1.0 - rate[i]).fold(f64::NEG_INFINITY, f64::max);
        if !(k_max < 0.0) {
            return Err(Error::CurvaturePositive { k_max });
        }
        Ok(())
    }

    /// Advances by `duration` in equal steps no longer than `max_dt`.
    pub fn advance(&mut self, duration: f64, max_dt: f64) -> Result<()> {
        let steps = (duration / max_dt).ceil().max(1.0) as usize;
        let dt = duration / steps as f64;
        for _ in 0..steps {
            self.step(dt)?;
        }
        Ok(())
    }
}

/// One step of the normalized Ricci flow.
pub fn ricci_step(field: &ConformalField, dt_flow: f64) -> Result<ConformalField> {
    let limit = cfl_limit(field);
    if !(dt_flow > 0.0 && dt_flow <= limit) {
        return Err(Error::CflViolation { dt: dt_flow, limit });
    }
    let mut stepper = FlowStepper::new(field);
    stepper.step(dt_flow)?;
    let next = stepper.field()?;
    let k = next.curvature();
    if (k.kbar + 1.0).abs() > KBAR_TOL {
        return Err(Error::InvalidArgument(format!("mean curvature drifted to {}", k.kbar)));
    }
    if !(k.k_max < 0.0) {
        return Err(Error::CurvaturePositive { k_max: k.k_max });
    }
    Ok(next)
}

/// Entropy and κ derivatives along `ψ = −(K − K̄)`, formula against difference.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeRecord {
    pub dh_formula: EstimatorReport,
    pub dh_fd: EstimatorReport,
    pub dkappa_formula: f64,
    pub dkappa_fd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowCheckpoint {
    pub epsilon: f64,
    pub entropy: EstimatorReport,
    pub kappa: f64,
    pub k_min: f64,
    pub k_max: f64,
    pub kbar: f64,
    /// `K₂/K₁`.
    pub pinching_ratio: f64,
    /// `|A − 4π|`.
    pub area_defect: f64,
    pub formula_vs_fd: DerivativeRecord,
}

impl FlowCheckpoint {
    /// `sup |K + 1|` over the lattice.
    pub fn curvature_deviation(&self) -> f64 {
        (self.k_min + 1.0).abs().max((self.k_max + 1.0).abs())
    }

    pub fn csv_row(&self) -> String {
        let d = &self.formula_vs_fd;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epsilon,
            self.entropy.mean,
            self.entropy.stderr,
            self.kappa,
            self.k_min,
            self.k_max,
            self.kbar,
            self.pinching_ratio,
            d.dh_formula.mean,
            d.dh_fd.mean,
            d.dkappa_formula,
            d.dkappa_fd,
            self.area_defect
        )
    }
}

/// Seed of checkpoint `index`, independent across indices.
pub fn checkpoint_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1) << 32);
    rng.next_u64()
}

/// Estimates every checkpoint quantity on `field`.
pub fn checkpoint(field: &ConformalField, epsilon: f64, config: &FlowConfig, seed: u64) -> Result<FlowCheckpoint> {
    let params = config.geodesic_params();
    let k = field.curvature();
    let psi = Perturbation::curvature_deviation(field)?;
    let cmp = entropy_derivative_check(field, &psi, config.fd_eps_entropy, config.n_samples, &params, seed)?;
    Ok(FlowCheckpoint {
        epsilon,
        entropy: cmp.entropy,
        kappa: mean_root_curvature(field)?,
        k_min: k.k_min,
        k_max: k.k_max,
        kbar: k.kbar,
        pinching_ratio: k.pinching(),
        area_defect: (field.area() - 4.0 * PI).abs(),
        formula_vs_fd: DerivativeRecord {
            dh_formula: cmp.formula,
            dh_fd: cmp.finite_difference,
            dkappa_formula: mrc_derivative_formula(field, &psi)?,
            dkappa_fd: mrc_derivative_fd(field, &psi, config.fd_eps_kappa)?,
        },
    })
}

/// Runs the flow of `config`, writing the CSV to `out` one row per checkpoint
/// (rows already written survive a later failure).
pub fn run_flow(
    config: &FlowConfig,
    out: &mut dyn Write,
    mut on_checkpoint: impl FnMut(&FlowCheckpoint),
) -> Result<Vec<FlowCheckpoint>> {
    let field = config.initial_field()?;
    let limit = cfl_limit(&field);
    if config.dt_flow > limit {
        return Err(Error::CflViolation {
            dt: config.dt_flow,
            limit,
        });
    }
    writeln!(out, "{FLOW_CSV_HEADER}")?;
    let count = (config.total_flow_time / config.checkpoint_interval).round() as usize;
    let mut stepper = FlowStepper::new(&field);
    let mut current = field;
    let mut results = Vec::with_capacity(count + 1);
    for index in 0..=count {
        if index > 0 {
            stepper.advance(config.checkpoint_interval, config.dt_flow)?;
            current = stepper.field()?;
        }
        let epsilon = index as f64 * config.checkpoint_interval;
        let cp = checkpoint(&current, epsilon, config, checkpoint_seed(config.seed, index as u64))?;
        writeln!(out, "{}", cp.csv_row())?;
        out.flush()?;
        on_checkpoint(&cp);
        results.push(cp);
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{default_lattice, field_from_bumps, BumpSpec};
    use crate::mobius::{bolza_atlas, DiskPoint};

    fn bump() -> ConformalField {
        let spec = BumpSpec::new(&bolza_atlas(), vec![DiskPoint::new(0.2, 0.1).unwrap()], vec![0.1], 0.5).unwrap();
        field_from_bumps(default_lattice().unwrap(), &spec).unwrap()
    }

    #[test]
    fn hyperbolic_metric_is_a_fixed_point() {
        let f = ConformalField::hyperbolic(default_lattice().unwrap()).unwrap();
        let mut s = FlowStepper::new(&f);
        let dt = cfl_limit(&f);
        for _ in 0..3 {
            assert!(s.step(dt).unwrap() <= 1e-12);
        }
        assert!(s.values().iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn step_beyond_the_limit_is_rejected() {
        let f = bump();
        let limit = cfl_limit(&f);
        assert!(limit > 1e-5 && limit < 1e-4, "{limit}");
        assert!(matches!(ricci_step(&f, 2.0 * limit), Err(Error::CflViolation { .. })));
    }

    #[test]
    fn step_keeps_area_and_mean_curvature() {
        let f = bump();
        let g = ricci_step(&f, cfl_limit(&f)).unwrap();
        assert!((g.area() - 4.0 * PI).abs() < 1e-6);
        assert!((g.curvature().kbar + 1.0).abs() < KBAR_TOL);
    }

    #[test]
    fn checkpoint_seeds_differ() {
        assert_ne!(checkpoint_seed(1, 0), checkpoint_seed(1, 1));
        assert_eq!(checkpoint_seed(1, 3), checkpoint_seed(1, 3));
    }
}
