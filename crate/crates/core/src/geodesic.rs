//! Geodesic flow of `e^{2ρ} g_hyp`, Riccati solutions and half-orbit integrals.
//!
//! Tangent vectors live in the disk chart: a base point in (or near) the
//! octagon and the Euclidean angle of the direction. Trajectories are reduced
//! back into the octagon whenever they leave it.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::field::ConformalField;
use crate::lattice::Lattice;
use crate::mobius::{Complex, DiskPoint, MobiusMap};

/// Largest admissible speed correction per step.
pub const MAX_SPEED_CORRECTION: f64 = 1e-3;

/// Longest trajectory the integrator accepts.
pub const MAX_DURATION: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeodesicParams {
    pub dt: f64,
    pub burn_in: f64,
    /// Base step for horizontal differences.
    pub h_s: f64,
    /// Fibre step for vertical differences.
    pub h_theta: f64,
    /// Flow step for differences along X.
    pub h_t: f64,
    /// Truncation time of half-orbit integrals.
    pub horizon: f64,
}

impl Default for GeodesicParams {
    fn default() -> Self {
        Self {
            dt: 5e-3,
            burn_in: 20.0,
            h_s: 1e-3,
            h_theta: 1e-3,
            h_t: 1e-2,
            horizon: 20.0,
        }
    }
}

impl GeodesicParams {
    /// Difference steps small enough for `w^s` itself.
    ///
    /// `w^s` varies across the fibre on scales that shrink like `e^{−t}` with
    /// the time `t` at which the orbit meets curvature variation, so steps of
    /// `10⁻³` straddle features from encounters after `t ≈ 7`. Steps of `10⁻⁵`
    /// push that horizon past the point where the features are negligible.
    pub fn fine_steps(self) -> Self {
        Self {
            h_s: 1e-5,
            h_theta: 1e-5,
            ..self
        }
    }

    /// Steps for differences of half-orbit integrals along the flow.
    ///
    /// The curvature of a bump field is only continuous on the support
    /// boundary of the bumps, and its spline ripples within a few lattice
    /// cells of it. Resolving `X I_f` there needs flow and quadrature steps
    /// well below the lattice spacing.
    pub fn transport_steps(self) -> Self {
        Self {
            dt: self.dt.min(1e-3),
            h_t: self.h_t.min(1e-3),
            ..self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitTangent {
    pub z: DiskPoint,
    pub theta: f64,
}

impl UnitTangent {
    pub fn new(z: DiskPoint, theta: f64) -> Self {
        Self { z, theta }
    }

    pub(crate) fn from_chart(z: Complex, theta: f64) -> Result<Self> {
        Ok(Self {
            z: DiskPoint::from_complex(z)?,
            theta,
        })
    }

    /// Rotation in the fibre by `angle`.
    pub fn rotated(self, angle: f64) -> Self {
        Self {
            z: self.z,
            theta: self.theta + angle,
        }
    }

    /// The opposite vector `(z, θ + π)`.
    pub fn reversed(self) -> Self {
        self.rotated(std::f64::consts::PI)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeodesicState {
    pub z: DiskPoint,
    pub theta: f64,
    pub t: f64,
    /// Deck transformation taking the chart point to the lifted trajectory.
    pub accumulated_word: MobiusMap,
}

/// A sampled chart point of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Node {
    pub z: Complex,
    pub theta: f64,
    pub curvature: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    step: f64,
    nodes: Vec<Node>,
    /// Hermite midpoints of each step, in the chart of the step's start.
    mids: Vec<Node>,
    /// `(node index, accumulated word)` at every reduction.
    words: Vec<(usize, MobiusMap)>,
    max_correction: f64,
}

impl Trajectory {
    /// Signed time step.
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn midpoints(&self) -> &[Node] {
        &self.mids
    }

    /// Largest relative speed correction applied by renormalization.
    pub fn max_correction(&self) -> f64 {
        self.max_correction
    }

    pub fn tangent(&self, i: usize) -> Result<UnitTangent> {
        let n = self.nodes[i];
        UnitTangent::from_chart(n.z, n.theta)
    }

    pub fn end(&self) -> Result<UnitTangent> {
        self.tangent(self.nodes.len() - 1)
    }

    pub fn state(&self, i: usize) -> Result<GeodesicState> {
        let word = self
            .words
            .iter()
            .take_while(|(j, _)| *j <= i)
            .last()
            .map_or(MobiusMap::IDENTITY, |(_, w)| *w);
        let n = self.nodes[i];
        Ok(GeodesicState {
            z: DiskPoint::from_complex(n.z)?,
            theta: n.theta,
            t: i as f64 * self.step,
            accumulated_word: word,
        })
    }

    /// Position of node `i` on the universal cover.
    pub fn lifted_position(&self, i: usize) -> Result<Complex> {
        let s = self.state(i)?;
        Ok(s.accumulated_word.apply_complex(s.z.to_complex()))
    }
}

/// `(φ, φ_x, φ_y)` for `φ = ρ + ln(2/(1−|z|²))`.
#[inline]
fn metric(field: &ConformalField, z: Complex) -> Result<(f64, f64, f64)> {
    let atlas = field.atlas();
    let (rho, rx, ry) = if atlas.max_side_excess(z) > 0.0 {
        // read ρ at the reduced point so the force is exactly Γ-equivariant
        let (w, word) = atlas.reduce_complex(z)?;
        let (rho, gx, gy) = field
            .rho_gradient_chart(w)
            .ok_or(Error::OutOfRange { re: z.re, im: z.im })?;
        let g = Complex::new(gx, gy) * word.inverse().derivative(z).conj();
        (rho, g.re, g.im)
    } else {
        field
            .rho_gradient_chart(z)
            .ok_or(Error::OutOfRange { re: z.re, im: z.im })?
    };
    let s = 1.0 - z.norm_sqr();
    Ok((rho + (2.0 / s).ln(), rx + 2.0 * z.re / s, ry + 2.0 * z.im / s))
}

#[inline]
fn acceleration(m: (f64, f64, f64), v: Complex) -> Complex {
    let (_, px, py) = m;
    let (vx, vy) = (v.re, v.im);
    Complex::new(
        -px * (vx * vx - vy * vy) - 2.0 * py * vx * vy,
        -py * (vy * vy - vx * vx) - 2.0 * px * vx * vy,
    )
}

#[inline]
fn curvature_at(field: &ConformalField, z: Complex) -> Result<f64> {
    field
        .curvature_gradient_chart(z)
        .map(|k| k.0)
        .ok_or(Error::OutOfRange { re: z.re, im: z.im })
}

/// Moves a chart point into the octagon, transporting the direction.
fn reduce_tangent(lattice: &Lattice, z: Complex, v: Complex) -> Result<(Complex, Complex, MobiusMap)> {
    let (w, word) = lattice.atlas().reduce_complex(z)?;
    let m = word.inverse();
    Ok((w, v * m.derivative(z), word))
}

/// Integrates the unit-speed geodesic from `start` for `duration` (negative runs backward).
///
/// Uses classical RK4 on the second-order geodesic equations with the speed
/// renormalized after every step.
pub fn integrate_geodesic(field: &ConformalField, start: UnitTangent, duration: f64, dt: f64) -> Result<Trajectory> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step {dt} must be positive")));
    }
    if !(duration.abs() <= MAX_DURATION) {
        return Err(Error::InvalidArgument(format!(
            "duration {duration} exceeds the limit {MAX_DURATION}"
        )));
    }
    let steps = (duration.abs() / dt).ceil().max(1.0) as usize;
    let h = duration / steps as f64;
    if duration == 0.0 {
        let z = start.z.to_complex();
        return Ok(Trajectory {
            step: 0.0,
            nodes: vec![Node {
                z,
                theta: start.theta,
                curvature: curvature_at(field, z)?,
            }],
            mids: Vec::new(),
            words: Vec::new(),
            max_correction: 0.0,
        });
    }
    let lattice = field.lattice();
    let atlas = lattice.atlas();

    let mut z = start.z.to_complex();
    let mut v = Complex::from_polar(1.0, start.theta);
    let mut accumulated = MobiusMap::IDENTITY;
    let mut words = Vec::new();
    if atlas.max_side_excess(z) > 0.0 {
        let (w, u, word) = reduce_tangent(lattice, z, v)?;
        z = w;
        v = u;
        accumulated = word;
        words.push((0, accumulated));
    }
    let mut m = metric(field, z)?;
    v = v / v.norm() * (-m.0).exp();

    let mut nodes = Vec::with_capacity(steps + 1);
    let mut mids = Vec::with_capacity(steps);
    nodes.push(Node {
        z,
        theta: v.arg(),
        curvature: curvature_at(field, z)?,
    });
    let mut max_correction: f64 = 0.0;

    for i in 0..steps {
        let a1 = acceleration(m, v);
        let z2 = z + v * (0.5 * h);
        let v2 = v + a1 * (0.5 * h);
        let a2 = acceleration(metric(field, z2)?, v2);
        let z3 = z + v2 * (0.5 * h);
        let v3 = v + a2 * (0.5 * h);
        let a3 = acceleration(metric(field, z3)?, v3);
        let z4 = z + v3 * h;
        let v4 = v + a3 * h;
        let a4 = acceleration(metric(field, z4)?, v4);
        let mut z1 = z + (v + v2 * 2.0 + v3 * 2.0 + v4) * (h / 6.0);
        let mut v1 = v + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (h / 6.0);

        m = metric(field, z1)?;
        let speed = m.0.exp() * v1.norm();
        let correction = (speed - 1.0).abs();
        if !(correction <= MAX_SPEED_CORRECTION) {
            return Err(Error::StepFailure { correction });
        }
        max_correction = max_correction.max(correction);
        v1 /= speed;

        let zm = (z + z1) * 0.5 + (v - v1) * (h / 8.0);
        let vm = (z1 - z) * (1.5 / h) - (v + v1) * 0.25;
        mids.push(Node {
            z: zm,
            theta: vm.arg(),
            curvature: curvature_at(field, zm)?,
        });

        if atlas.max_side_excess(z1) > 0.0 {
            let (w, u, word) = reduce_tangent(lattice, z1, v1)?;
            z1 = w;
            v1 = u;
            accumulated = accumulated.compose(&word);
            words.push((i + 1, accumulated));
            m = metric(field, z1)?;
        }
        z = z1;
        v = v1;
        nodes.push(Node {
            z,
            theta: v.arg(),
            curvature: curvature_at(field, z)?,
        });
    }
    Ok(Trajectory {
        step: h,
        nodes,
        mids,
        words,
        max_correction,
    })
}

/// `√K₁ ≤ √(−K) ≤ √K₂` over the field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvatureBounds {
    pub k1: f64,
    pub k2: f64,
}

impl CurvatureBounds {
    pub fn of(field: &ConformalField) -> Result<Self> {
        let k = field.curvature();
        if !(k.k_max < 0.0) {
            return Err(Error::CurvaturePositive { k_max: k.k_max });
        }
        Ok(Self {
            k1: -k.k_max,
            k2: -k.k_min,
        })
    }

    /// Like [`CurvatureBounds::of`], but accepts curvature touching zero
    /// (isolated grid-scale spikes of perturbed fields). `k1` is then 0 and
    /// the error bound carries no contraction.
    pub fn envelope(field: &ConformalField) -> Self {
        let k = field.curvature();
        Self {
            k1: (-k.k_max).max(0.0),
            k2: (-k.k_min).max(0.0),
        }
    }

    /// Contraction of the seed error plus an RK4 discretization allowance.
    pub fn riccati_error_bound(&self, burn_in: f64, dt: f64) -> f64 {
        let (s1, s2) = (self.k1.sqrt(), self.k2.sqrt());
        (-2.0 * s1 * burn_in).exp() * (s2 - s1) + dt.powi(4) * self.k2.powf(2.5)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Stable,
    Unstable,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiccatiEstimate {
    pub value: f64,
    pub burn_in: f64,
    pub kind: Branch,
    pub error_bound: f64,
}

#[inline]
fn riccati_rhs(w: f64, k: f64) -> f64 {
    -w * w - k
}

/// Solves `w' = −w² − K` from the last node back to node 0 along the trajectory.
fn solve_riccati(traj: &Trajectory, seed: f64, bounds: &CurvatureBounds, kind: Branch) -> Result<Vec<f64>> {
    let n = traj.nodes.len();
    let h = -traj.step;
    let limit = 2.0 * bounds.k2.sqrt();
    let mut w = vec![0.0; n];
    w[n - 1] = seed;
    let mut cur = seed;
    for i in (0..n - 1).rev() {
        let (k_hi, k_mid, k_lo) = (traj.nodes[i + 1].curvature, traj.mids[i].curvature, traj.nodes[i].curvature);
        let k1 = riccati_rhs(cur, k_hi);
        let k2 = riccati_rhs(cur + 0.5 * h * k1, k_mid);
        let k3 = riccati_rhs(cur + 0.5 * h * k2, k_mid);
        let k4 = riccati_rhs(cur + h * k3, k_lo);
        cur += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let ok = match kind {
            Branch::Stable => (-limit..=0.0).contains(&cur),
            Branch::Unstable => (0.0..=limit).contains(&cur),
        };
        if !ok {
            return Err(Error::RiccatiBlowup {
                value: cur,
                time: i as f64 * traj.step,
            });
        }
        w[i] = cur;
    }
    Ok(w)
}

fn check_burn_in(burn_in: f64) -> Result<()> {
    if !(burn_in >= 5.0) {
        return Err(Error::InvalidArgument(format!("burn-in {burn_in} must be at least 5")));
    }
    Ok(())
}

/// `√(−K)` at the far end of an orbit, or `√(−K̄)` where `K` is not negative.
fn far_seed(field: &ConformalField, k: f64) -> f64 {
    if k < 0.0 {
        (-k).sqrt()
    } else {
        (-field.curvature().kbar).max(0.0).sqrt()
    }
}

/// Stable Riccati solution `w^s(v)` with the seed `−√(−K)` at the far end.
pub fn riccati_stable(field: &ConformalField, v: UnitTangent, burn_in: f64, dt: f64) -> Result<RiccatiEstimate> {
    riccati_stable_seeded(field, v, burn_in, dt, None)
}

/// As [`riccati_stable`], with an explicit seed at the far end.
pub fn riccati_stable_seeded(
    field: &ConformalField,
    v: UnitTangent,
    burn_in: f64,
    dt: f64,
    seed: Option<f64>,
) -> Result<RiccatiEstimate> {
    check_burn_in(burn_in)?;
    let bounds = CurvatureBounds::envelope(field);
    let traj = integrate_geodesic(field, v, burn_in, dt)?;
    let seed = seed.unwrap_or_else(|| -far_seed(field, traj.nodes.last().unwrap().curvature));
    let w = solve_riccati(&traj, seed, &bounds, Branch::Stable)?;
    Ok(RiccatiEstimate {
        value: w[0],
        burn_in,
        kind: Branch::Stable,
        error_bound: bounds.riccati_error_bound(burn_in, dt),
    })
}

/// Unstable Riccati solution `w^u(v)`: backward trajectory, forward solve.
pub fn riccati_unstable(field: &ConformalField, v: UnitTangent, burn_in: f64, dt: f64) -> Result<RiccatiEstimate> {
    check_burn_in(burn_in)?;
    let bounds = CurvatureBounds::envelope(field);
    let traj = integrate_geodesic(field, v, -burn_in, dt)?;
    let seed = far_seed(field, traj.nodes.last().unwrap().curvature);
    let w = solve_riccati(&traj, seed, &bounds, Branch::Unstable)?;
    Ok(RiccatiEstimate {
        value: w[0],
        burn_in,
        kind: Branch::Unstable,
        error_bound: bounds.riccati_error_bound(burn_in, dt),
    })
}

/// A forward orbit with `w^s` cached at every node of its first `horizon` time units.
#[derive(Clone, Debug)]
pub struct StableOrbit {
    pub trajectory: Trajectory,
    /// `w^s` at every node (the last `burn_in` worth of nodes are only seeded).
    pub ws: Vec<f64>,
    /// Number of steps covering `[0, horizon]`.
    pub horizon_steps: usize,
    pub bounds: CurvatureBounds,
    pub burn_in: f64,
}

impl StableOrbit {
    pub fn new(field: &ConformalField, v: UnitTangent, horizon: f64, burn_in: f64, dt: f64) -> Result<Self> {
        check_burn_in(burn_in)?;
        if !(horizon >= 0.0) {
            return Err(Error::InvalidArgument(format!("horizon {horizon} must be non-negative")));
        }
        let bounds = CurvatureBounds::of(field)?;
        let steps_h = (horizon / dt).round() as usize;
        let steps_b = (burn_in / dt).ceil() as usize;
        let total = (steps_h + steps_b) as f64 * dt;
        let trajectory = integrate_geodesic(field, v, total, dt)?;
        let seed = -(-trajectory.nodes.last().unwrap().curvature).max(0.0).sqrt();
        let ws = solve_riccati(&trajectory, seed, &bounds, Branch::Stable)?;
        Ok(Self {
            trajectory,
            ws,
            horizon_steps: steps_h,
            bounds,
            burn_in,
        })
    }

    pub fn dt(&self) -> f64 {
        self.trajectory.step
    }

    pub fn ws0(&self) -> f64 {
        self.ws[0]
    }

    /// `exp(∫₀^{t_i} w^s)` at the nodes of `[0, horizon]` (composite trapezoid).
    pub fn jacobi_weights(&self) -> Vec<f64> {
        let h = self.dt();
        let mut out = Vec::with_capacity(self.horizon_steps + 1);
        let mut acc = 0.0;
        out.push(1.0);
        for i in 0..self.horizon_steps {
            acc += 0.5 * h * (self.ws[i] + self.ws[i + 1]);
            out.push(acc.exp());
        }
        out
    }

    /// `w^s` at the Hermite midpoint of step `i`.
    fn ws_mid(&self, i: usize) -> f64 {
        let n = &self.trajectory.nodes;
        let h = self.dt();
        let (w0, w1) = (self.ws[i], self.ws[i + 1]);
        let d0 = riccati_rhs(w0, n[i].curvature);
        let d1 = riccati_rhs(w1, n[i + 1].curvature);
        0.5 * (w0 + w1) + h / 8.0 * (d0 - d1)
    }

    /// `e^s(w^s)` at the nodes of `[0, horizon]`.
    ///
    /// Along the orbit `E = e^s(w^s)` solves the linearized Riccati equation
    /// `E' = −3 w^s E − K_n`, with `K_n` the derivative of `K` along the unit
    /// normal `Jγ̇`; it is integrated backward from the far end where `E = 0`.
    pub fn stable_derivative_of_ws(&self, field: &ConformalField) -> Result<Vec<f64>> {
        let traj = &self.trajectory;
        let n = traj.nodes.len();
        let kn_nodes = traj
            .nodes
            .iter()
            .map(|p| curvature_normal_derivative(field, p.z, p.theta))
            .collect::<Result<Vec<_>>>()?;
        let h = -self.dt();
        let mut e = vec![0.0; n];
        let mut cur = 0.0;
        for i in (0..n - 1).rev() {
            let mid = traj.mids[i];
            let kn_mid = curvature_normal_derivative(field, mid.z, mid.theta)?;
            let wm = self.ws_mid(i);
            let f = |e: f64, w: f64, kn: f64| -3.0 * w * e - kn;
            let k1 = f(cur, self.ws[i + 1], kn_nodes[i + 1]);
            let k2 = f(cur + 0.5 * h * k1, wm, kn_mid);
            let k3 = f(cur + 0.5 * h * k2, wm, kn_mid);
            let k4 = f(cur + h * k3, self.ws[i], kn_nodes[i]);
            cur += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            e[i] = cur;
        }
        e.truncate(self.horizon_steps + 1);
        Ok(e)
    }
}

/// Derivative of a lattice function along the g-unit normal `Jv` at a chart point.
pub(crate) fn normal_derivative(
    field: &ConformalField,
    coeffs: &[f64],
    z: Complex,
    theta: f64,
) -> Result<f64> {
    let (_, fx, fy) = field
        .lattice()
        .spline_value_gradient(coeffs, z)
        .ok_or(Error::OutOfRange { re: z.re, im: z.im })?;
    let (phi, _, _) = metric(field, z)?;
    let (s, c) = theta.sin_cos();
    Ok((-phi).exp() * (-fx * s + fy * c))
}

/// `dK(Jv)` for the interpolated curvature.
fn curvature_normal_derivative(field: &ConformalField, z: Complex, theta: f64) -> Result<f64> {
    let (_, kx, ky) = field
        .curvature_gradient_chart(z)
        .ok_or(Error::OutOfRange { re: z.re, im: z.im })?;
    let (phi, _, _) = metric(field, z)?;
    let (s, c) = theta.sin_cos();
    Ok((-phi).exp() * (-kx * s + ky * c))
}

/// `j^s(φ_t v)/j^s(v) = exp(∫₀^t w^s)`.
pub fn jacobi_ratio(field: &ConformalField, v: UnitTangent, t: f64, dt: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("time {t} must be non-negative")));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    let orbit = StableOrbit::new(field, v, t, GeodesicParams::default().burn_in, dt)?;
    Ok(*orbit.jacobi_weights().last().unwrap())
}

/// A function on the unit tangent bundle.
pub trait PhaseFunction: Sync {
    fn value(&self, field: &ConformalField, v: UnitTangent) -> Result<f64>;

    /// True for functions of the base point only.
    fn is_base(&self) -> bool {
        false
    }

    /// `e^s f` at the nodes of `[0, horizon]` of an orbit, when it can be
    /// produced in one pass along the orbit.
    fn stable_derivative_along(&self, _field: &ConformalField, _orbit: &StableOrbit) -> Option<Result<Vec<f64>>> {
        None
    }
}

/// A constant function.
#[derive(Clone, Copy, Debug)]
pub struct Constant(pub f64);

impl PhaseFunction for Constant {
    fn value(&self, _: &ConformalField, _: UnitTangent) -> Result<f64> {
        Ok(self.0)
    }

    fn is_base(&self) -> bool {
        true
    }

    fn stable_derivative_along(&self, _: &ConformalField, orbit: &StableOrbit) -> Option<Result<Vec<f64>>> {
        Some(Ok(vec![0.0; orbit.horizon_steps + 1]))
    }
}

/// A function on the surface sampled on the field's lattice.
#[derive(Clone, Debug)]
pub struct LatticeFunction {
    values: Vec<f64>,
    spline: Vec<f64>,
}

impl LatticeFunction {
    /// Takes interior values and fills the ghost band.
    pub fn new(field: &ConformalField, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != field.lattice().len() {
            return Err(Error::InvalidArgument("lattice function has the wrong length".into()));
        }
        field.lattice().fill_ghosts(&mut values);
        let spline = field.lattice().spline_coefficients(&values);
        Ok(Self { values, spline })
    }

    pub fn from_fn(field: &ConformalField, f: impl Fn(Complex) -> f64) -> Result<Self> {
        let l = field.lattice();
        let mut values = vec![f64::NAN; l.len()];
        for &idx in l.interior() {
            values[idx] = f(l.node_position(idx));
        }
        Self::new(field, values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, field: &ConformalField, z: Complex) -> Result<f64> {
        let l = field.lattice();
        if let Some(v) = l.spline_value(&self.spline, z) {
            return Ok(v);
        }
        let (w, _) = l.atlas().reduce_complex(z)?;
        l.spline_value(&self.spline, w).ok_or(Error::OutOfRange { re: z.re, im: z.im })
    }
}

impl PhaseFunction for LatticeFunction {
    fn value(&self, field: &ConformalField, v: UnitTangent) -> Result<f64> {
        self.at(field, v.z.to_complex())
    }

    fn is_base(&self) -> bool {
        true
    }

    fn stable_derivative_along(&self, field: &ConformalField, orbit: &StableOrbit) -> Option<Result<Vec<f64>>> {
        let nodes = &orbit.trajectory.nodes()[..=orbit.horizon_steps];
        Some(
            nodes
                .iter()
                .map(|p| normal_derivative(field, &self.spline, p.z, p.theta))
                .collect(),
        )
    }
}

/// `scale·K` for the interpolated curvature of the field.
#[derive(Clone, Copy, Debug)]
pub struct Curvature {
    pub scale: f64,
}

impl Curvature {
    pub fn new() -> Self {
        Self { scale: 1.0 }
    }

    pub fn negated() -> Self {
        Self { scale: -1.0 }
    }
}

impl Default for Curvature {
    fn default() -> Self {
        Self::new()
    }
}

impl PhaseFunction for Curvature {
    fn value(&self, field: &ConformalField, v: UnitTangent) -> Result<f64> {
        let z = v.z.to_complex();
        let (w, _) = field.atlas().reduce_complex(z)?;
        Ok(self.scale * curvature_at(field, w)?)
    }

    fn is_base(&self) -> bool {
        true
    }

    fn stable_derivative_along(&self, field: &ConformalField, orbit: &StableOrbit) -> Option<Result<Vec<f64>>> {
        let nodes = &orbit.trajectory.nodes()[..=orbit.horizon_steps];
        Some(
            nodes
                .iter()
                .map(|p| curvature_normal_derivative(field, p.z, p.theta).map(|k| self.scale * k))
                .collect(),
        )
    }
}

/// The stable Riccati solution `w^s` (or its square) as a phase function.
#[derive(Clone, Copy, Debug)]
pub struct StableSolution {
    pub burn_in: f64,
    pub dt: f64,
    pub squared: bool,
}

impl StableSolution {
    pub fn new(params: &GeodesicParams) -> Self {
        Self {
            burn_in: params.burn_in,
            dt: params.dt,
            squared: false,
        }
    }

    pub fn squared(params: &GeodesicParams) -> Self {
        Self {
            squared: true,
            ..Self::new(params)
        }
    }
}

impl PhaseFunction for StableSolution {
    fn value(&self, field: &ConformalField, v: UnitTangent) -> Result<f64> {
        let w = riccati_stable(field, v, self.burn_in, self.dt)?.value;
        Ok(if self.squared { w * w } else { w })
    }

    fn stable_derivative_along(&self, field: &ConformalField, orbit: &StableOrbit) -> Option<Result<Vec<f64>>> {
        Some(orbit.stable_derivative_of_ws(field).map(|mut e| {
            if self.squared {
                for (x, w) in e.iter_mut().zip(&orbit.ws) {
                    *x *= 2.0 * w;
                }
            }
            e
        }))
    }
}

/// Endpoints of the horizontal lift through `v` at parameters `±h`.
///
/// The base moves along the geodesic with initial direction `Jv`; since that
/// geodesic's tangent is parallel, `v` transports to the tangent rotated by `−π/2`.
fn horizontal_neighbours(field: &ConformalField, v: UnitTangent, h: f64) -> Result<[UnitTangent; 2]> {
    let jv = v.rotated(FRAC_PI_2);
    let fwd = integrate_geodesic(field, jv, h, h)?.end()?;
    let bwd = integrate_geodesic(field, jv, -h, h)?.end()?;
    Ok([fwd.rotated(-FRAC_PI_2), bwd.rotated(-FRAC_PI_2)])
}

/// `V f` by a centred difference in the fibre.
pub fn vertical_derivative(field: &ConformalField, f: &dyn PhaseFunction, v: UnitTangent, h_theta: f64) -> Result<f64> {
    if f.is_base() {
        return Ok(0.0);
    }
    let plus = f.value(field, v.rotated(h_theta))?;
    let minus = f.value(field, v.rotated(-h_theta))?;
    Ok((plus - minus) / (2.0 * h_theta))
}

/// Absolute resolution of a centred fibre difference of `w^s` with step `h`.
///
/// Curvature met after time `t* ≈ ln(ℓ/h)` leaves features in `w^s` narrower
/// than the step, of height about `e^{−2t*}·(K₂−K₁)`; divided by `h` they
/// contribute `h·(K₂−K₁)/ℓ²`. `ℓ = 1/2` is the scale of curvature features.
pub fn vertical_difference_floor(bounds: &CurvatureBounds, h: f64) -> f64 {
    4.0 * h * (bounds.k2 - bounds.k1)
}

/// `H f` by a centred difference along the horizontal lift.
pub fn horizontal_derivative(field: &ConformalField, f: &dyn PhaseFunction, v: UnitTangent, h_s: f64) -> Result<f64> {
    let [plus, minus] = horizontal_neighbours(field, v, h_s)?;
    Ok((f.value(field, plus)? - f.value(field, minus)?) / (2.0 * h_s))
}

/// `e^s f = H f + w^s V f` by centred differences.
pub fn stable_derivative(
    field: &ConformalField,
    f: &dyn PhaseFunction,
    v: UnitTangent,
    params: &GeodesicParams,
) -> Result<f64> {
    let h = horizontal_derivative(field, f, v, params.h_s)?;
    if f.is_base() {
        return Ok(h);
    }
    let w = riccati_stable(field, v, params.burn_in, params.dt)?.value;
    Ok(h + w * vertical_derivative(field, f, v, params.h_theta)?)
}

/// `X f` by a centred difference along the flow.
pub fn flow_derivative(
    field: &ConformalField,
    f: &dyn PhaseFunction,
    v: UnitTangent,
    params: &GeodesicParams,
) -> Result<f64> {
    let fwd = integrate_geodesic(field, v, params.h_t, params.dt)?.end()?;
    let bwd = integrate_geodesic(field, v, -params.h_t, params.dt)?.end()?;
    Ok((f.value(field, fwd)? - f.value(field, bwd)?) / (2.0 * params.h_t))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfOrbitIntegral {
    pub value: f64,
    /// Bound on the part of the integral beyond the horizon.
    pub tail_bound: f64,
}

/// Half-orbit integral for several functions along one stable orbit.
///
/// Functions without a one-pass stable derivative fall back to centred
/// differences at every node spaced `fallback_step` apart.
pub fn half_orbit_integrals_on(
    field: &ConformalField,
    orbit: &StableOrbit,
    fs: &[&dyn PhaseFunction],
    params: &GeodesicParams,
    fallback_step: f64,
) -> Result<Vec<HalfOrbitIntegral>> {
    let weights = orbit.jacobi_weights();
    let h = orbit.dt();
    let s1 = orbit.bounds.k1.sqrt();
    let horizon = orbit.horizon_steps as f64 * h;
    let tail_factor = (-s1 * horizon).exp() / s1;
    fs.iter()
        .map(|f| {
            let (g, stride) = match f.stable_derivative_along(field, orbit) {
                Some(g) => (g?, 1),
                None => {
                    let stride = ((fallback_step / h).round() as usize).max(1);
                    let g = (0..=orbit.horizon_steps)
                        .step_by(stride)
                        .map(|i| stable_derivative(field, *f, orbit.trajectory.tangent(i)?, params))
                        .collect::<Result<Vec<_>>>()?;
                    (g, stride)
                }
            };
            let mut value = 0.0;
            let last = g.len() - 1;
            for (k, gk) in g.iter().enumerate() {
                let c = if k == 0 || k == last { 0.5 } else { 1.0 };
                value += c * weights[k * stride] * gk;
            }
            value *= h * stride as f64;
            let sup = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            Ok(HalfOrbitIntegral {
                value,
                tail_bound: sup * tail_factor,
            })
        })
        .collect()
}

/// `I_f(v) = ∫₀^∞ (j^s(φ_t v)/j^s(v)) e^s f(φ_t v) dt`, truncated at the horizon.
pub fn half_orbit_integral(
    field: &ConformalField,
    f: &dyn PhaseFunction,
    v: UnitTangent,
    params: &GeodesicParams,
) -> Result<HalfOrbitIntegral> {
    let orbit = StableOrbit::new(field, v, params.horizon, params.burn_in, params.dt)?;
    Ok(half_orbit_integrals_on(field, &orbit, &[f], params, 0.05)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{default_lattice, field_from_bumps, BumpSpec};
    use crate::mobius::bolza_atlas;
    use std::sync::{Arc, OnceLock};

    fn lattice() -> Arc<Lattice> {
        static L: OnceLock<Arc<Lattice>> = OnceLock::new();
        Arc::clone(L.get_or_init(|| default_lattice().unwrap()))
    }

    fn hyperbolic() -> ConformalField {
        ConformalField::hyperbolic(lattice()).unwrap()
    }

    fn bump() -> &'static ConformalField {
        static F: OnceLock<ConformalField> = OnceLock::new();
        F.get_or_init(|| {
            let spec = BumpSpec::new(&bolza_atlas(), vec![DiskPoint::new(0.2, 0.1).unwrap()], vec![0.1], 0.5).unwrap();
            field_from_bumps(lattice(), &spec).unwrap()
        })
    }

    fn tangent(x: f64, y: f64, theta: f64) -> UnitTangent {
        UnitTangent::new(DiskPoint::new(x, y).unwrap(), theta)
    }

    #[test]
    fn diameter_from_origin_reaches_tanh_half() {
        let f = hyperbolic();
        let traj = integrate_geodesic(&f, tangent(0.0, 0.0, 0.0), 1.0, 5e-3).unwrap();
        let end = traj.nodes().last().unwrap();
        assert!((end.z.re - 0.5f64.tanh()).abs() < 1e-10 && end.z.im.abs() < 1e-14);
        assert!(end.theta.abs() < 1e-14);
    }

    #[test]
    fn forward_then_backward_returns() {
        let f = bump();
        let v = tangent(0.1, -0.2, 0.7);
        let traj = integrate_geodesic(f, v, 10.0, 5e-3).unwrap();
        let back = integrate_geodesic(f, traj.end().unwrap(), -10.0, 5e-3).unwrap();
        let end = back.nodes().last().unwrap();
        assert!((end.z - v.z.to_complex()).norm() < 1e-6, "{}", end.z);
        assert!((end.theta - v.theta).abs() < 1e-6);
    }

    #[test]
    fn lifted_trajectory_keeps_hyperbolic_distance_for_hyperbolic_metric() {
        let f = hyperbolic();
        let traj = integrate_geodesic(&f, tangent(0.0, 0.0, 0.3), 6.0, 5e-3).unwrap();
        let end = traj.lifted_position(traj.len() - 1).unwrap();
        let d = crate::mobius::distance_from_origin(end);
        assert!((d - 6.0).abs() < 1e-7, "{d}");
    }

    #[test]
    fn constant_curvature_riccati_values() {
        let f = hyperbolic();
        let v = tangent(0.3, 0.2, 1.0);
        let s = riccati_stable(&f, v, 20.0, 5e-3).unwrap();
        let u = riccati_unstable(&f, v, 20.0, 5e-3).unwrap();
        assert!((s.value + 1.0).abs() < 1e-6 && (u.value - 1.0).abs() < 1e-6);
        let c = 0.2;
        let g = ConformalField::constant(lattice(), c).unwrap();
        let s = riccati_stable(&g, v, 20.0, 5e-3).unwrap();
        assert!((s.value + (-c).exp()).abs() < 1e-6);
    }

    #[test]
    fn stable_values_lie_in_pinching_band_and_forget_their_seed() {
        let f = bump();
        let b = CurvatureBounds::of(f).unwrap();
        for v in [tangent(0.2, 0.1, 0.0), tangent(-0.4, 0.3, 2.0)] {
            let a = riccati_stable_seeded(f, v, 20.0, 5e-3, Some(-b.k1.sqrt())).unwrap();
            let c = riccati_stable_seeded(f, v, 20.0, 5e-3, Some(-b.k2.sqrt())).unwrap();
            assert!((a.value - c.value).abs() <= 2.0 * a.error_bound);
            assert!(a.value <= -b.k1.sqrt() + a.error_bound && a.value >= -b.k2.sqrt() - a.error_bound);
        }
    }

    #[test]
    fn jacobi_ratio_in_constant_curvature() {
        let f = hyperbolic();
        let v = tangent(0.1, 0.1, 0.5);
        assert_eq!(jacobi_ratio(&f, v, 0.0, 5e-3).unwrap(), 1.0);
        assert!((jacobi_ratio(&f, v, 1.0, 5e-3).unwrap() - (-1.0f64).exp()).abs() < 1e-5);
    }

    #[test]
    fn vertical_derivative_of_base_function_is_zero() {
        let f = bump();
        assert_eq!(vertical_derivative(f, &Curvature::new(), tangent(0.1, 0.0, 0.0), 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn curvature_normal_derivative_matches_horizontal_differences() {
        let f = bump();
        let p = GeodesicParams::default();
        let v = tangent(0.3, 0.2, 1.1);
        let orbit = StableOrbit::new(f, v, 0.0, p.burn_in, p.dt).unwrap();
        let along = Curvature::negated().stable_derivative_along(f, &orbit).unwrap().unwrap()[0];
        let fd = stable_derivative(f, &Curvature::negated(), v, &p).unwrap();
        assert!((along - fd).abs() < 1e-5 * (1.0 + fd.abs()), "{along} vs {fd}");
    }

    #[test]
    fn one_pass_stable_derivative_matches_finite_differences() {
        let f = bump();
        let p = GeodesicParams::default();
        let w = StableSolution::new(&p);
        let v = tangent(0.15, 0.05, 2.5);
        let orbit = StableOrbit::new(f, v, 0.0, p.burn_in, p.dt).unwrap();
        let along = orbit.stable_derivative_of_ws(f).unwrap()[0];
        let fd = stable_derivative(f, &w, v, &p).unwrap();
        assert!((along - fd).abs() < 1e-3 * (1.0 + fd.abs()), "{along} vs {fd}");
    }
}
