//! Cartesian lattice over the fundamental octagon with a group-wrapped ghost band.
//!
//! Nodes inside the closed octagon carry independent values. Nodes in a band
//! around it are ghosts: their values are read back from the interior through
//! the side pairings, so stencils and interpolants near the walls see a
//! Γ-invariant function.

use crate::error::{Error, Result};
use crate::mobius::{Complex, SurfaceAtlas};

/// Ghost band width in cells (Chebyshev dilation of the interior node set).
pub const GHOST_CELLS: usize = 6;

const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Default lattice spacing: 1/256 of the disk diameter.
pub const DEFAULT_SPACING: f64 = 2.0 / 256.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Ghost,
    Unused,
}

/// Catmull–Rom weights (C¹ cubic convolution) for the four nodes `i-1..=i+2`.
#[inline]
pub(crate) fn cubic_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Uniform cubic B-spline weights for the four nodes `i-1..=i+2`.
#[inline]
fn bspline_weights(t: f64) -> [f64; 4] {
    let u = 1.0 - t;
    let t2 = t * t;
    let t3 = t2 * t;
    [
        u * u * u / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}

#[inline]
fn bspline_weight_derivatives(t: f64) -> [f64; 4] {
    let u = 1.0 - t;
    [
        -0.5 * u * u,
        0.5 * (3.0 * t * t - 4.0 * t),
        0.5 * (-3.0 * t * t + 2.0 * t + 1.0),
        0.5 * t * t,
    ]
}

/// Interpolation stencil of a point: lower-left node `(i-1, j-1)` plus weights.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Stencil {
    pub base: usize,
    pub wx: [f64; 4],
    pub wy: [f64; 4],
}

/// A ghost value as a fixed combination of interior values.
#[derive(Clone, Debug)]
struct GhostLink {
    node: usize,
    sources: Vec<(usize, f64)>,
}

/// Interior nodes used by the least-squares fallback.
const FIT_NODES: usize = 24;

#[derive(Clone, Debug)]
pub struct Lattice {
    atlas: SurfaceAtlas,
    spacing: f64,
    n: usize,
    origin: f64,
    kind: Vec<NodeKind>,
    interior: Vec<usize>,
    ghosts: Vec<GhostLink>,
    /// Hyperbolic area of each node's cell clipped to the octagon.
    area_weights: Vec<(usize, f64)>,
    reference_area: f64,
}

impl Lattice {
    pub fn new(atlas: SurfaceAtlas, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0 && spacing <= 0.05) {
            return Err(Error::InvalidArgument(format!(
                "grid spacing {spacing} must lie in (0, 0.05]"
            )));
        }
        let half = atlas.half_width() + (GHOST_CELLS as f64 + 3.0) * spacing;
        let cells = (half / spacing).ceil() as usize;
        let n = 2 * cells + 1;
        let origin = -(cells as f64) * spacing;

        let mut kind = vec![NodeKind::Unused; n * n];
        let mut interior = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let z = Complex::new(origin + i as f64 * spacing, origin + j as f64 * spacing);
                if atlas.contains_complex(z) {
                    kind[j * n + i] = NodeKind::Interior;
                    interior.push(j * n + i);
                }
            }
        }
        // dilate the interior set to obtain the ghost band
        let g = GHOST_CELLS as isize;
        let mut ghost_nodes = Vec::new();
        for j in 0..n as isize {
            for i in 0..n as isize {
                let idx = (j as usize) * n + i as usize;
                if kind[idx] != NodeKind::Unused {
                    continue;
                }
                let near = (-g..=g).any(|dj| {
                    (-g..=g).any(|di| {
                        let (ii, jj) = (i + di, j + dj);
                        ii >= 0
                            && jj >= 0
                            && (ii as usize) < n
                            && (jj as usize) < n
                            && kind[jj as usize * n + ii as usize] == NodeKind::Interior
                    })
                });
                let z = Complex::new(origin + i as f64 * spacing, origin + j as f64 * spacing);
                if near && z.norm() <= atlas.vertex_radius + atlas.margin {
                    ghost_nodes.push(idx);
                }
            }
        }
        for &idx in &ghost_nodes {
            kind[idx] = NodeKind::Ghost;
        }

        let mut lattice = Self {
            atlas,
            spacing,
            n,
            origin,
            kind,
            interior,
            ghosts: Vec::new(),
            area_weights: Vec::new(),
            reference_area: 0.0,
        };

        let mut ghosts = Vec::with_capacity(ghost_nodes.len());
        for idx in ghost_nodes {
            let z = lattice.node_position(idx);
            let (w, _) = lattice.atlas.reduce_complex(z)?;
            let sources = lattice.interior_weights(w)?;
            ghosts.push(GhostLink { node: idx, sources });
        }
        lattice.ghosts = ghosts;
        lattice.area_weights = lattice.compute_area_weights();
        lattice.reference_area = lattice.area_weights.iter().map(|&(_, w)| w).sum();
        Ok(lattice)
    }

    pub fn atlas(&self) -> &SurfaceAtlas {
        &self.atlas
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Nodes per axis.
    pub fn size(&self) -> usize {
        self.n
    }

    /// Coordinate of node 0 along either axis.
    pub fn extent(&self) -> f64 {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn kind(&self, idx: usize) -> NodeKind {
        self.kind[idx]
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn ghost_count(&self) -> usize {
        self.ghosts.len()
    }

    pub fn area_weights(&self) -> &[(usize, f64)] {
        &self.area_weights
    }

    /// Quadrature value of the hyperbolic area of the octagon (4π up to quadrature error).
    pub fn reference_area(&self) -> f64 {
        self.reference_area
    }

    pub fn node_position(&self, idx: usize) -> Complex {
        let (i, j) = (idx % self.n, idx / self.n);
        Complex::new(
            self.origin + i as f64 * self.spacing,
            self.origin + j as f64 * self.spacing,
        )
    }

    /// Stencil for a point, or `None` if any of its 16 nodes is unused.
    pub(crate) fn stencil(&self, z: Complex) -> Option<Stencil> {
        let fx = (z.re - self.origin) / self.spacing;
        let fy = (z.im - self.origin) / self.spacing;
        let (i, j) = (fx.floor(), fy.floor());
        if !(i >= 1.0 && j >= 1.0 && i + 2.0 < self.n as f64 && j + 2.0 < self.n as f64) {
            return None;
        }
        let (i, j) = (i as usize, j as usize);
        let base = (j - 1) * self.n + (i - 1);
        for r in 0..4 {
            let row = base + r * self.n;
            if self.kind[row..row + 4].contains(&NodeKind::Unused) {
                return None;
            }
        }
        Some(Stencil {
            base,
            wx: cubic_weights(fx - i as f64),
            wy: cubic_weights(fy - j as f64),
        })
    }

    /// Coefficients of the cubic B-spline quasi-interpolant of lattice values.
    ///
    /// The prefilter `(−1, 8, −1)/6` along each axis makes the spline exact for
    /// cubics, so it is fourth-order accurate and, unlike Catmull–Rom, C².
    /// Coefficients whose 3×3 neighbourhood is incomplete are NaN.
    pub fn spline_coefficients(&self, values: &[f64]) -> Vec<f64> {
        let n = self.n;
        let get = |idx: usize| if self.kind[idx] == NodeKind::Unused { f64::NAN } else { values[idx] };
        let mut tmp = vec![f64::NAN; n * n];
        for j in 0..n {
            for i in 1..n - 1 {
                let idx = j * n + i;
                tmp[idx] = (8.0 * get(idx) - get(idx - 1) - get(idx + 1)) / 6.0;
            }
        }
        let mut out = vec![f64::NAN; n * n];
        for j in 1..n - 1 {
            for i in 0..n {
                let idx = j * n + i;
                out[idx] = (8.0 * tmp[idx] - tmp[idx - n] - tmp[idx + n]) / 6.0;
            }
        }
        out
    }

    #[inline]
    fn spline_cell(&self, z: Complex) -> Option<(usize, f64, f64)> {
        let fx = (z.re - self.origin) / self.spacing;
        let fy = (z.im - self.origin) / self.spacing;
        let (i, j) = (fx.floor(), fy.floor());
        if !(i >= 1.0 && j >= 1.0 && i + 2.0 < self.n as f64 && j + 2.0 < self.n as f64) {
            return None;
        }
        Some(((j as usize - 1) * self.n + (i as usize - 1), fx - i, fy - j))
    }

    /// Spline value and Euclidean gradient from coefficients.
    #[inline]
    pub(crate) fn spline_value_gradient(&self, coeffs: &[f64], z: Complex) -> Option<(f64, f64, f64)> {
        let (base, tx, ty) = self.spline_cell(z)?;
        let wx = bspline_weights(tx);
        let dx = bspline_weight_derivatives(tx);
        let wy = bspline_weights(ty);
        let dy = bspline_weight_derivatives(ty);
        let (mut v, mut gx, mut gy) = (0.0, 0.0, 0.0);
        for r in 0..4 {
            let row = &coeffs[base + r * self.n..base + r * self.n + 4];
            let sx = wx[0] * row[0] + wx[1] * row[1] + wx[2] * row[2] + wx[3] * row[3];
            let sdx = dx[0] * row[0] + dx[1] * row[1] + dx[2] * row[2] + dx[3] * row[3];
            v += wy[r] * sx;
            gx += wy[r] * sdx;
            gy += dy[r] * sx;
        }
        if !(v.is_finite() && gx.is_finite() && gy.is_finite()) {
            return None;
        }
        Some((v, gx / self.spacing, gy / self.spacing))
    }

    /// Spline value from coefficients.
    #[inline]
    pub(crate) fn spline_value(&self, coeffs: &[f64], z: Complex) -> Option<f64> {
        let (base, tx, ty) = self.spline_cell(z)?;
        let wx = bspline_weights(tx);
        let wy = bspline_weights(ty);
        let mut v = 0.0;
        for r in 0..4 {
            let row = &coeffs[base + r * self.n..base + r * self.n + 4];
            v += wy[r] * (wx[0] * row[0] + wx[1] * row[1] + wx[2] * row[2] + wx[3] * row[3]);
        }
        v.is_finite().then_some(v)
    }

    /// Refills ghost nodes from the interior through the side pairings.
    pub fn fill_ghosts(&self, values: &mut [f64]) {
        for g in &self.ghosts {
            values[g.node] = g.sources.iter().map(|&(i, c)| c * values[i]).sum();
        }
    }

    /// Weights expressing the value at an octagon point through interior nodes only.
    ///
    /// Uses the Catmull–Rom stencil when all 16 of its nodes are interior,
    /// otherwise a least-squares cubic fit to the nearest interior nodes.
    /// Poorly conditioned fits fall back to quadratic, then linear; the last
    /// is only reached at a few octagon vertices for some spacings.
    fn interior_weights(&self, w: Complex) -> Result<Vec<(usize, f64)>> {
        if let Some(s) = self.stencil(w) {
            let mut out = Vec::with_capacity(16);
            let mut all_interior = true;
            for r in 0..4 {
                for c in 0..4 {
                    let idx = s.base + r * self.n + c;
                    all_interior &= self.kind[idx] == NodeKind::Interior;
                    out.push((idx, s.wy[r] * s.wx[c]));
                }
            }
            if all_interior {
                return Ok(out);
            }
        }
        let h = self.spacing;
        let fx = ((w.re - self.origin) / h).round() as isize;
        let fy = ((w.im - self.origin) / h).round() as isize;
        let mut near: Vec<(f64, usize)> = Vec::new();
        let reach = 6isize;
        for dj in -reach..=reach {
            for di in -reach..=reach {
                let (i, j) = (fx + di, fy + dj);
                if i < 0 || j < 0 || i as usize >= self.n || j as usize >= self.n {
                    continue;
                }
                let idx = j as usize * self.n + i as usize;
                if self.kind[idx] == NodeKind::Interior {
                    near.push(((self.node_position(idx) - w).norm_sqr(), idx));
                }
            }
        }
        near.sort_by(|a, b| a.0.total_cmp(&b.0));
        near.truncate(FIT_NODES);
        for degree in [3usize, 2, 1] {
            let terms = (degree + 1) * (degree + 2) / 2;
            if near.len() < terms + 2 {
                continue;
            }
            let p = nalgebra::DMatrix::from_fn(near.len(), terms, |r, c| {
                let d = (self.node_position(near[r].1) - w) / h;
                monomial(d, c)
            });
            let Ok(pinv) = p.pseudo_inverse(1e-10) else {
                continue;
            };
            // the constant coefficient of the local fit is the value at w
            let weights: Vec<(usize, f64)> = near.iter().enumerate().map(|(k, &(_, idx))| (idx, pinv[(0, k)])).collect();
            let lebesgue: f64 = weights.iter().map(|&(_, c)| c.abs()).sum();
            if lebesgue < 4.0 {
                return Ok(weights);
            }
        }
        Err(Error::OutOfRange { re: w.re, im: w.im })
    }

    /// Five-point Euclidean Laplacian scaled to the hyperbolic metric, at interior nodes.
    pub(crate) fn hyperbolic_laplacian_interior(&self, values: &[f64], out: &mut [f64]) {
        let h2 = self.spacing * self.spacing;
        let n = self.n;
        for &idx in &self.interior {
            let lap = (values[idx - 1] + values[idx + 1] + values[idx - n] + values[idx + n]
                - 4.0 * values[idx])
                / h2;
            out[idx] = conformal_scale(self.node_position(idx)) * lap;
        }
    }

    fn compute_area_weights(&self) -> Vec<(usize, f64)> {
        let h = self.spacing;
        let half_diag = 0.5 * h * std::f64::consts::SQRT_2;
        // Euclidean radius of the isometric circles
        let side_radius = 1.0 / self.atlas.generators[0].b.norm();
        let gauss = [(-(0.6f64).sqrt(), 5.0 / 9.0), (0.0, 8.0 / 9.0), ((0.6f64).sqrt(), 5.0 / 9.0)];
        let circles: Vec<(Complex, f64)> = self
            .atlas
            .generators
            .iter()
            .map(|g| (g.a / g.b.conj(), 1.0 / g.b.norm()))
            .collect();
        let mut out = Vec::new();
        for idx in 0..self.len() {
            if self.kind[idx] == NodeKind::Unused {
                continue;
            }
            let c = self.node_position(idx);
            // signed Euclidean distance to the nearest side circle (positive inside)
            let clearance = (0..8)
                .map(|j| -side_radius * self.atlas.side_excess(j, c))
                .fold(f64::INFINITY, f64::min);
            let w = if clearance > half_diag + 1e-12 {
                let mut acc = 0.0;
                for &(gx, wx) in &gauss {
                    for &(gy, wy) in &gauss {
                        let p = c + Complex::new(0.5 * h * gx, 0.5 * h * gy);
                        acc += wx * wy * hyperbolic_density(p);
                    }
                }
                acc * 0.25 * h * h
            } else if clearance < -half_diag - 1e-12 {
                0.0
            } else {
                self.clipped_cell_area(c, &circles)
            };
            if w > 0.0 {
                out.push((idx, w));
            }
        }
        out
    }
}

/// Integrates `f` over `[lo, hi]` with a composite five-point Gauss rule.
fn gauss_integrate(lo: f64, hi: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
    let step = (hi - lo) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let mid = lo + (p as f64 + 0.5) * step;
        for &(x, w) in &GAUSS5 {
            acc += w * f(mid + 0.5 * step * x);
        }
    }
    0.5 * step * acc
}

impl Lattice {
    /// Hyperbolic area of the cell centred at `c` that lies inside the octagon.
    ///
    /// Each vertical line through the cell is clipped exactly against the side
    /// circles; the remaining intervals are integrated with Gauss rules.
    fn clipped_cell_area(&self, c: Complex, circles: &[(Complex, f64)]) -> f64 {
        let h = self.spacing;
        let (x0, x1) = (c.re - 0.5 * h, c.re + 0.5 * h);
        // the clipped length has square-root behaviour at vertical tangents and
        // kinks at vertices and edge crossings, so split there and refine adaptively
        let mut breaks = vec![x0, x1];
        for &(centre, r) in circles {
            breaks.extend([centre.re - r, centre.re + r]);
            // crossings of the cell's top and bottom edges
            for y in [c.im - 0.5 * h, c.im + 0.5 * h] {
                let s2 = r * r - (y - centre.im).powi(2);
                if s2 > 0.0 {
                    breaks.extend([centre.re - s2.sqrt(), centre.re + s2.sqrt()]);
                }
            }
        }
        breaks.extend(self.atlas.octagon_vertices.iter().map(|v| v.re()));
        breaks.retain(|&x| x >= x0 && x <= x1);
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let line = |x: f64| {
            let mut pieces = vec![(c.im - 0.5 * h, c.im + 0.5 * h)];
            for &(centre, r) in circles {
                let dx = x - centre.re;
                let s2 = r * r - dx * dx;
                if s2 <= 0.0 {
                    continue;
                }
                let s = s2.sqrt();
                let (cut_lo, cut_hi) = (centre.im - s, centre.im + s);
                let mut next = Vec::with_capacity(pieces.len() + 1);
                for (lo, hi) in pieces {
                    if cut_lo > lo {
                        next.push((lo, hi.min(cut_lo)));
                    }
                    if cut_hi < hi {
                        next.push((lo.max(cut_hi), hi));
                    }
                }
                pieces = next.into_iter().filter(|(lo, hi)| hi > lo).collect();
            }
            pieces
                .iter()
                .map(|&(lo, hi)| gauss_integrate(lo, hi, 1, |y| hyperbolic_density(Complex::new(x, y))))
                .sum::<f64>()
        };
        breaks
            .windows(2)
            .map(|ab| adaptive_gauss(ab[0], ab[1], &line, 1e-10 * h * h, 0))
            .sum()
    }
}

/// Adaptive five-point Gauss quadrature by interval bisection.
fn adaptive_gauss(lo: f64, hi: f64, f: &impl Fn(f64) -> f64, tol: f64, depth: usize) -> f64 {
    let whole = gauss_integrate(lo, hi, 1, f);
    let mid = 0.5 * (lo + hi);
    let left = gauss_integrate(lo, mid, 1, f);
    let right = gauss_integrate(mid, hi, 1, f);
    if depth >= 14 || (left + right - whole).abs() <= tol {
        return left + right;
    }
    adaptive_gauss(lo, mid, f, 0.5 * tol, depth + 1) + adaptive_gauss(mid, hi, f, 0.5 * tol, depth + 1)
}

/// Monomials `xᵃyᵇ` in graded order: 1, x, y, x², xy, y², x³, ...
fn monomial(d: Complex, k: usize) -> f64 {
    let mut total = 0;
    let mut k = k;
    while k > total {
        k -= total + 1;
        total += 1;
    }
    d.re.powi((total - k) as i32) * d.im.powi(k as i32)
}

/// Hyperbolic area density `4 / (1 − |z|²)²` relative to Euclidean area.
#[inline]
pub fn hyperbolic_density(z: Complex) -> f64 {
    let s = 1.0 - z.norm_sqr();
    4.0 / (s * s)
}

/// `(1 − |z|²)² / 4`: converts the Euclidean Laplacian to the hyperbolic one.
#[inline]
pub fn conformal_scale(z: Complex) -> f64 {
    let s = 1.0 - z.norm_sqr();
    0.25 * s * s
}
