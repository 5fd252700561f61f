//! Discretised calculus on the Riemann sphere.
//!
//! The sphere is covered by two stereographic charts, `z` and `w = 1/z`,
//! each meshed by a polar grid on `|ζ| ≤ 1.2`. Ring radii are graded,
//! `r_i = R((i + ½)/n_r)²`, so the chart centres are finely resolved; the
//! charts are glued by the partition of unity
//! `χ₀(r) = ½(1 − sin(π log r / (2 log R)))`, which satisfies
//! `χ₀(|z|) + χ₀(|1/z|) = 1` and lets both charts share one weight table.
//!
//! Two normalisations coexist:
//! * functions are integrated against `ω_FS` of total mass 1;
//! * `(1,0)`-forms are measured with the raw density `i dζ∧dζ̄ = 2 dx dy`,
//!   which is conformally invariant. For the form norm of `∂θ_g` with
//!   `g = diag(λ, 1/λ)` this gives `¼ · 2π ∫₀^∞ (β−1)² s / ((βs+1)²(s+1)²) ds`
//!   with `β = λ⁴`; see [`theta_energy_radial`].

use std::f64::consts::PI;
use std::io::{self, Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobius::{spherical_distance, GroupElement, ProjPoint};
use crate::transfer::EmpiricalMeasure;

pub const CHART_RADIUS: f64 = 1.2;
pub const DEFAULT_NR: usize = 128;
pub const DEFAULT_NT: usize = 256;
/// `ε` of the bump functions unless stated otherwise.
pub const DEFAULT_EPS: f64 = 0.25;
/// Bump radii must be at least this many local mesh cells.
pub const RESOLVE_CELLS: f64 = 4.0;

const LUX_LO: f64 = 1e-12;
const LUX_HI: f64 = 1e6;
const LUX_ITERS: usize = 80;
const GL_POINTS: usize = 8;

fn czero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut x = (PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for m in 2..=n {
                let m = m as f64;
                let p2 = ((2.0 * m - 1.0) * x * p1 - (m - 1.0) * p0) / m;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            dp = n as f64 * (x * p - p0) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Partition weight of the `z`-chart at radius `r`.
pub fn partition(r: f64) -> f64 {
    let l = CHART_RADIUS.ln();
    if r <= 1.0 / CHART_RADIUS {
        1.0
    } else if r >= CHART_RADIUS {
        0.0
    } else {
        0.5 * (1.0 - (0.5 * PI * r.ln() / l).sin())
    }
}

/// Interpolation stencil: up to four nodes with weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stencil {
    pub idx: [u32; 4],
    pub w: [f64; 4],
}

/// Sixteen-node stencil of [`SphereGrid::stencil_cubic`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubicStencil {
    pub idx: [u32; 16],
    pub w: [f64; 16],
}

/// Lagrange weights of the cubic through `xs`, evaluated at `x`.
fn lagrange4(xs: [f64; 4], x: f64) -> [f64; 4] {
    let mut w = [1.0; 4];
    for a in 0..4 {
        for b in 0..4 {
            if a != b {
                w[a] *= (x - xs[b]) / (xs[a] - xs[b]);
            }
        }
    }
    w
}

/// Two-chart polar mesh with quadrature tables. Immutable once built.
#[derive(Debug, PartialEq)]
pub struct SphereGrid {
    pub n_r: usize,
    pub n_t: usize,
    pub radius: f64,
    r: Vec<f64>,
    chi: Vec<f64>,
    fs_w: Vec<f64>,
    area_w: Vec<f64>,
    cos_t: Vec<f64>,
    sin_t: Vec<f64>,
}

impl SphereGrid {
    pub fn new(n_r: usize, n_t: usize) -> Result<Arc<Self>> {
        if n_r < 4 || n_t < 8 || n_t % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "mesh {n_r}x{n_t}: need n_r >= 4 and even n_t >= 8"
            )));
        }
        let radius = CHART_RADIUS;
        let nf = n_r as f64;
        let r: Vec<f64> = (0..n_r).map(|i| radius * ((i as f64 + 0.5) / nf).powi(2)).collect();
        let edges: Vec<f64> = (0..=n_r).map(|i| radius * (i as f64 / nf).powi(2)).collect();
        let gl = gauss_legendre(GL_POINTS);
        let cell = |i: usize, density: &dyn Fn(f64) -> f64| -> f64 {
            // split at the ramp ends so each piece is smooth
            let (a, b) = (edges[i], edges[i + 1]);
            let mut cuts = vec![a];
            for k in [1.0 / radius, radius] {
                if k > a && k < b {
                    cuts.push(k);
                }
            }
            cuts.push(b);
            cuts.windows(2)
                .map(|ab| {
                    let (lo, hi) = (ab[0], ab[1]);
                    let (m, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
                    gl.iter().map(|(x, w)| w * h * density(m + h * x)).sum::<f64>()
                })
                .sum()
        };
        let ntf = n_t as f64;
        let fs_w = (0..n_r)
            .map(|i| cell(i, &|s| partition(s) * 2.0 * s / (1.0 + s * s).powi(2)) / ntf)
            .collect();
        let area_w = (0..n_r)
            .map(|i| cell(i, &|s| partition(s) * 2.0 * s) * 2.0 * PI / ntf)
            .collect();
        let chi = r.iter().map(|&x| partition(x)).collect();
        let dt = 2.0 * PI / ntf;
        Ok(Arc::new(SphereGrid {
            n_r,
            n_t,
            radius,
            r,
            chi,
            fs_w,
            area_w,
            cos_t: (0..n_t).map(|j| (j as f64 * dt).cos()).collect(),
            sin_t: (0..n_t).map(|j| (j as f64 * dt).sin()).collect(),
        }))
    }

    pub fn default_mesh() -> Arc<Self> {
        Self::new(DEFAULT_NR, DEFAULT_NT).expect("default mesh is valid")
    }

    /// Nodes over both charts.
    pub fn len(&self) -> usize {
        2 * self.n_r * self.n_t
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn ring_len(&self) -> usize {
        self.n_t
    }

    pub fn dtheta(&self) -> f64 {
        2.0 * PI / self.n_t as f64
    }

    pub fn radii(&self) -> &[f64] {
        &self.r
    }

    #[inline]
    pub fn idx(&self, chart: usize, i: usize, j: usize) -> usize {
        (chart * self.n_r + i) * self.n_t + j
    }

    /// `(chart, ring, angle)` of a flat index.
    #[inline]
    pub fn split(&self, k: usize) -> (usize, usize, usize) {
        let j = k % self.n_t;
        let ring = k / self.n_t;
        (ring / self.n_r, ring % self.n_r, j)
    }

    /// Chart coordinate of a node.
    #[inline]
    pub fn node(&self, chart: usize, i: usize, j: usize) -> Complex64 {
        let _ = chart;
        Complex64::new(self.r[i] * self.cos_t[j], self.r[i] * self.sin_t[j])
    }

    pub fn node_point(&self, k: usize) -> ProjPoint {
        let (c, i, j) = self.split(k);
        chart_point(c, self.node(c, i, j))
    }

    /// Partition weight of ring `i` (same in both charts).
    pub fn chi(&self, i: usize) -> f64 {
        self.chi[i]
    }

    /// `ω_FS` weight of a node on ring `i`.
    pub fn fs_weight(&self, i: usize) -> f64 {
        self.fs_w[i]
    }

    /// Weight of `i dζ∧dζ̄` (times the partition) of a node on ring `i`.
    pub fn area_weight(&self, i: usize) -> f64 {
        self.area_w[i]
    }

    pub fn total_fs_weight(&self) -> f64 {
        2.0 * self.n_t as f64 * self.fs_w.iter().sum::<f64>()
    }

    /// Chart in which `p` lies in the closed unit disc, with its coordinate.
    pub fn locate(p: &ProjPoint) -> (usize, Complex64) {
        let (z0, z1) = p.coords();
        if z0.norm_sqr() <= z1.norm_sqr() {
            (0, z0 / z1)
        } else {
            (1, z1 / z0)
        }
    }

    /// Bilinear stencil (linear in `r`, periodic linear in `θ`) at chart
    /// coordinate `zeta` of `chart`. Inside the first ring it interpolates
    /// across the centre.
    pub fn stencil(&self, chart: usize, zeta: Complex64) -> Stencil {
        let n_t = self.n_t;
        let rho = zeta.norm();
        let mut phi = zeta.im.atan2(zeta.re);
        if phi < 0.0 {
            phi += 2.0 * PI;
        }
        let t = phi / self.dtheta();
        let j0 = (t.floor() as usize) % n_t;
        let j1 = (j0 + 1) % n_t;
        let wt = t - t.floor();
        let u = (rho / self.radius).sqrt() * self.n_r as f64 - 0.5;
        if u < 0.0 {
            let r0 = self.r[0];
            let jo0 = (j0 + n_t / 2) % n_t;
            let jo1 = (j1 + n_t / 2) % n_t;
            let s = (rho + r0) / (2.0 * r0);
            return Stencil {
                idx: [
                    self.idx(chart, 0, j0) as u32,
                    self.idx(chart, 0, j1) as u32,
                    self.idx(chart, 0, jo0) as u32,
                    self.idx(chart, 0, jo1) as u32,
                ],
                w: [s * (1.0 - wt), s * wt, (1.0 - s) * (1.0 - wt), (1.0 - s) * wt],
            };
        }
        let i0 = (u.floor() as usize).min(self.n_r - 2);
        let s = ((rho - self.r[i0]) / (self.r[i0 + 1] - self.r[i0])).clamp(0.0, 1.0);
        Stencil {
            idx: [
                self.idx(chart, i0, j0) as u32,
                self.idx(chart, i0, j1) as u32,
                self.idx(chart, i0 + 1, j0) as u32,
                self.idx(chart, i0 + 1, j1) as u32,
            ],
            w: [(1.0 - s) * (1.0 - wt), (1.0 - s) * wt, s * (1.0 - wt), s * wt],
        }
    }

    /// Tensor cubic Lagrange stencil (four rings by four angles). Rings
    /// missing near the centre are taken from the opposite side at negative
    /// radius; near the rim the radial window shifts inwards.
    pub fn stencil_cubic(&self, chart: usize, zeta: Complex64) -> CubicStencil {
        let n_t = self.n_t;
        let rho = zeta.norm();
        let mut phi = zeta.im.atan2(zeta.re);
        if phi < 0.0 {
            phi += 2.0 * PI;
        }
        let t = phi / self.dtheta();
        let jb = t.floor() as i64;
        let ft = t - t.floor();
        let wt = lagrange4([-1.0, 0.0, 1.0, 2.0], ft);
        let u = (rho / self.radius).sqrt() * self.n_r as f64 - 0.5;
        // signed ring positions: negative entries are rings seen across the centre
        let base = if u < 0.0 { -1 } else { (u.floor() as i64).min(self.n_r as i64 - 2) };
        let lo = (base - 1).min(self.n_r as i64 - 4);
        let rings: [i64; 4] = [lo, lo + 1, lo + 2, lo + 3];
        let pos = |k: i64| if k >= 0 { self.r[k as usize] } else { -self.r[(-k - 1) as usize] };
        let wr = lagrange4(rings.map(pos), rho);
        let mut out = CubicStencil {
            idx: [0; 16],
            w: [0.0; 16],
        };
        for (a, &k) in rings.iter().enumerate() {
            let (ring, shift) = if k >= 0 { (k as usize, 0) } else { ((-k - 1) as usize, n_t as i64 / 2) };
            for b in 0..4 {
                let j = (jb - 1 + b as i64 + shift).rem_euclid(n_t as i64) as usize;
                out.idx[4 * a + b] = self.idx(chart, ring, j) as u32;
                out.w[4 * a + b] = wr[a] * wt[b];
            }
        }
        out
    }

    pub fn stencil_point(&self, p: &ProjPoint) -> Stencil {
        let (c, z) = Self::locate(p);
        self.stencil(c, z)
    }

    /// Chordal size of the mesh cell containing `p`.
    pub fn local_mesh_size(&self, p: &ProjPoint) -> f64 {
        let (_, z) = Self::locate(p);
        let rho = z.norm();
        let u = ((rho / self.radius).sqrt() * self.n_r as f64 - 0.5).max(0.0);
        let i = (u.floor() as usize).min(self.n_r - 2);
        let dr = self.r[i + 1] - self.r[i];
        let arc = self.r[i + 1] * self.dtheta();
        dr.max(arc) / (1.0 + rho * rho)
    }

    fn ring_sum<F: Fn(usize, usize) -> f64 + Sync>(&self, f: F) -> f64 {
        // one partial per ring, reduced in ring order
        let partials: Vec<f64> = (0..2 * self.n_r)
            .into_par_iter()
            .map(|ring| f(ring / self.n_r, ring % self.n_r))
            .collect();
        partials.iter().sum()
    }
}

/// Point with chart coordinate `zeta`.
pub fn chart_point(chart: usize, zeta: Complex64) -> ProjPoint {
    let one = Complex64::new(1.0, 0.0);
    let (z0, z1) = if chart == 0 { (zeta, one) } else { (one, zeta) };
    ProjPoint::from_vec(z0, z1).expect("chart vectors are nonzero")
}

/// `g*ω_FS / ω_FS` at `p`, equal to `(∥v∥ / ∥g v∥)⁴`.
pub fn fs_jacobian(g: &GroupElement, p: &ProjPoint) -> f64 {
    let v = p.vec();
    let gv = g.act_vec(v);
    let nv = v[0].norm_sqr() + v[1].norm_sqr();
    let ngv = gv[0].norm_sqr() + gv[1].norm_sqr();
    (nv / ngv).powi(2)
}

/// Real function sampled at every node of both charts.
#[derive(Clone, Debug)]
pub struct GridFunction {
    grid: Arc<SphereGrid>,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn constant(grid: &Arc<SphereGrid>, c: f64) -> Self {
        GridFunction {
            grid: grid.clone(),
            values: vec![c; grid.len()],
        }
    }

    pub fn from_values(grid: &Arc<SphereGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(GridFunction {
            grid: grid.clone(),
            values,
        })
    }

    pub fn from_fn<F: Fn(&ProjPoint) -> f64 + Sync>(grid: &Arc<SphereGrid>, f: F) -> Self {
        let values = (0..grid.len()).into_par_iter().map(|k| f(&grid.node_point(k))).collect();
        GridFunction {
            grid: grid.clone(),
            values,
        }
    }

    /// Built from chart coordinates: `f(chart, ζ)`.
    pub fn from_chart_fn<F: Fn(usize, Complex64) -> f64 + Sync>(grid: &Arc<SphereGrid>, f: F) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|k| {
                let (c, i, j) = grid.split(k);
                f(c, grid.node(c, i, j))
            })
            .collect();
        GridFunction {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<SphereGrid> {
        &self.grid
    }

    pub fn map<F: Fn(f64) -> f64 + Sync>(&self, f: F) -> Self {
        GridFunction {
            grid: self.grid.clone(),
            values: self.values.par_iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_with<F: Fn(f64, f64) -> f64 + Sync>(&self, other: &Self, f: F) -> Result<Self> {
        if !Arc::ptr_eq(&self.grid, &other.grid) && self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(GridFunction {
            grid: self.grid.clone(),
            values: self.values.par_iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| c * x)
    }

    pub fn add_constant(&self, c: f64) -> Self {
        self.map(|x| x + c)
    }

    pub fn at(&self, s: &Stencil) -> f64 {
        (0..4).map(|k| s.w[k] * self.values[s.idx[k] as usize]).sum()
    }

    /// Interpolated value at a point.
    pub fn eval(&self, p: &ProjPoint) -> f64 {
        self.at(&self.grid.stencil_point(p))
    }

    /// Maximum of `|f|` over nodes that carry partition weight.
    pub fn sup_norm(&self) -> f64 {
        let g = &self.grid;
        (0..g.len())
            .filter(|&k| g.chi(g.split(k).1) > 0.0)
            .map(|k| self.values[k].abs())
            .fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest disagreement between the charts on the overlap, relative to
    /// the oscillation of `f`.
    pub fn chart_mismatch(&self) -> f64 {
        let g = &self.grid;
        let osc = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let mut worst: f64 = 0.0;
        for i in 0..g.n_r {
            if !(g.r[i] >= 1.0 / g.radius && g.r[i] <= 1.0) {
                continue;
            }
            for j in 0..g.n_t {
                let w = g.node(1, i, j);
                let other = g.stencil(0, w.inv());
                worst = worst.max((self.values[g.idx(1, i, j)] - self.at(&other)).abs());
            }
        }
        if osc > 0.0 {
            worst / osc
        } else {
            worst
        }
    }

    /// Flat binary layout: little-endian `u32` `n_r`, `n_t`, then `f64`
    /// values row-major (chart, ring, angle).
    pub fn write_binary<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(&(self.grid.n_r as u32).to_le_bytes())?;
        out.write_all(&(self.grid.n_t as u32).to_le_bytes())?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(grid: &Arc<SphereGrid>, mut input: R) -> Result<Self> {
        let values = read_payload(grid, &mut input, 1)?;
        Self::from_values(grid, values)
    }

    /// CSV with columns `chart,ring,angle,re,im,value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "chart,ring,angle,re,im,value")?;
        for (k, v) in self.values.iter().enumerate() {
            let (c, i, j) = self.grid.split(k);
            let z = self.grid.node(c, i, j);
            writeln!(out, "{c},{i},{j},{},{},{}", z.re, z.im, v)?;
        }
        Ok(())
    }
}

fn read_payload<R: Read>(grid: &SphereGrid, input: &mut R, per_node: usize) -> Result<Vec<f64>> {
    let io_err = |e: io::Error| Error::InvalidArgument(format!("binary grid data: {e}"));
    let mut word = [0u8; 4];
    input.read_exact(&mut word).map_err(io_err)?;
    let n_r = u32::from_le_bytes(word) as usize;
    input.read_exact(&mut word).map_err(io_err)?;
    let n_t = u32::from_le_bytes(word) as usize;
    if n_r != grid.n_r || n_t != grid.n_t {
        return Err(Error::GridMismatch);
    }
    let mut values = Vec::with_capacity(grid.len() * per_node);
    let mut buf = [0u8; 8];
    for _ in 0..grid.len() * per_node {
        input.read_exact(&mut buf).map_err(io_err)?;
        values.push(f64::from_le_bytes(buf));
    }
    Ok(values)
}

/// `(1,0)`-form: coefficient of `dζ` at every node of each chart.
#[derive(Clone, Debug)]
pub struct OneForm {
    grid: Arc<SphereGrid>,
    pub coef: Vec<Complex64>,
}

impl OneForm {
    pub fn zero(grid: &Arc<SphereGrid>) -> Self {
        OneForm {
            grid: grid.clone(),
            coef: vec![czero(); grid.len()],
        }
    }

    pub fn from_coefs(grid: &Arc<SphereGrid>, coef: Vec<Complex64>) -> Result<Self> {
        if coef.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(OneForm {
            grid: grid.clone(),
            coef,
        })
    }

    /// Built from chart coefficients `φ(chart, ζ)`.
    pub fn from_chart_fn<F: Fn(usize, Complex64) -> Complex64 + Sync>(grid: &Arc<SphereGrid>, f: F) -> Self {
        let coef = (0..grid.len())
            .into_par_iter()
            .map(|k| {
                let (c, i, j) = grid.split(k);
                f(c, grid.node(c, i, j))
            })
            .collect();
        OneForm {
            grid: grid.clone(),
            coef,
        }
    }

    pub fn grid(&self) -> &Arc<SphereGrid> {
        &self.grid
    }

    pub fn scale(&self, c: Complex64) -> Self {
        OneForm {
            grid: self.grid.clone(),
            coef: self.coef.par_iter().map(|&x| c * x).collect(),
        }
    }

    /// `self + c · other`.
    pub fn axpy(&self, c: Complex64, other: &OneForm) -> Self {
        OneForm {
            grid: self.grid.clone(),
            coef: self.coef.par_iter().zip(&other.coef).map(|(&a, &b)| a + c * b).collect(),
        }
    }

    pub fn at(&self, s: &Stencil) -> Complex64 {
        (0..4).map(|k| self.coef[s.idx[k] as usize] * s.w[k]).sum()
    }

    /// `∫ i φ∧ψ̄`, the inner product behind [`l2_form_norm`].
    pub fn inner(&self, other: &OneForm) -> Complex64 {
        let g = &self.grid;
        let partials: Vec<Complex64> = (0..2 * g.n_r)
            .into_par_iter()
            .map(|ring| {
                let w = g.area_weight(ring % g.n_r);
                let lo = ring * g.n_t;
                let s: Complex64 = (lo..lo + g.n_t).map(|k| self.coef[k] * other.coef[k].conj()).sum();
                s * w
            })
            .collect();
        partials.iter().sum()
    }

    /// Worst violation of `φ_w = −φ_z / w²` on the overlap, relative to the
    /// largest coefficient there.
    pub fn chart_mismatch(&self) -> f64 {
        let g = &self.grid;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..g.n_r {
            if !(g.r[i] >= 1.0 / g.radius && g.r[i] <= 1.0) {
                continue;
            }
            for j in 0..g.n_t {
                let w = g.node(1, i, j);
                let from_z = -self.at(&g.stencil(0, w.inv())) / (w * w);
                let here = self.coef[g.idx(1, i, j)];
                worst = worst.max((here - from_z).norm());
                scale = scale.max(here.norm());
            }
        }
        if scale > 0.0 {
            worst / scale
        } else {
            worst
        }
    }

    /// Same layout as [`GridFunction::write_binary`], two `f64` (re, im)
    /// per node.
    pub fn write_binary<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(&(self.grid.n_r as u32).to_le_bytes())?;
        out.write_all(&(self.grid.n_t as u32).to_le_bytes())?;
        for v in &self.coef {
            out.write_all(&v.re.to_le_bytes())?;
            out.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(grid: &Arc<SphereGrid>, mut input: R) -> Result<Self> {
        let raw = read_payload(grid, &mut input, 2)?;
        let coef = raw.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
        Self::from_coefs(grid, coef)
    }

    /// CSV with columns `chart,ring,angle,re,im,coef_re,coef_im`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "chart,ring,angle,re,im,coef_re,coef_im")?;
        for (k, v) in self.coef.iter().enumerate() {
            let (c, i, j) = self.grid.split(k);
            let z = self.grid.node(c, i, j);
            writeln!(out, "{c},{i},{j},{},{},{},{}", z.re, z.im, v.re, v.im)?;
        }
        Ok(())
    }
}

/// `∫ f ω_FS`.
pub fn integrate(f: &GridFunction) -> f64 {
    let g = &f.grid;
    g.ring_sum(|c, i| {
        let lo = g.idx(c, i, 0);
        g.fs_weight(i) * f.values[lo..lo + g.n_t].iter().sum::<f64>()
    })
}

/// `∫ f ω_FS` restricted to a spherical cap.
pub fn integrate_cap(f: &GridFunction, cap: &Cap) -> f64 {
    let g = &f.grid;
    g.ring_sum(|c, i| {
        (0..g.n_t)
            .map(|j| {
                let k = g.idx(c, i, j);
                if cap.contains(&g.node_point(k)) {
                    g.fs_weight(i) * f.values[k]
                } else {
                    0.0
                }
            })
            .sum()
    })
}

/// Quadratic through three points, differentiated at `x`.
#[inline]
fn deriv3(xs: [f64; 3], fs: [f64; 3], x: f64) -> f64 {
    let [a, b, c] = xs;
    fs[0] * ((x - b) + (x - c)) / ((a - b) * (a - c))
        + fs[1] * ((x - a) + (x - c)) / ((b - a) * (b - c))
        + fs[2] * ((x - a) + (x - b)) / ((c - a) * (c - b))
}

/// `∂f = ½ e^{−iθ}(f_r − i f_θ / r) dζ` by second-order differences in each
/// chart; the first ring reaches across the centre, the rim ring is
/// one-sided.
pub fn del(f: &GridFunction) -> OneForm {
    let g = &f.grid;
    let (n_r, n_t) = (g.n_r, g.n_t);
    let dt = g.dtheta();
    let v = &f.values;
    let mut coef = vec![czero(); g.len()];
    coef.par_chunks_mut(n_t).enumerate().for_each(|(ring, out)| {
        let (c, i) = (ring / n_r, ring % n_r);
        let r = &g.r;
        for j in 0..n_t {
            let at = |ii: usize, jj: usize| v[g.idx(c, ii, jj)];
            let fr = if i == 0 {
                let opposite = at(0, (j + n_t / 2) % n_t);
                deriv3([-r[0], r[0], r[1]], [opposite, at(0, j), at(1, j)], r[0])
            } else if i + 1 < n_r {
                deriv3([r[i - 1], r[i], r[i + 1]], [at(i - 1, j), at(i, j), at(i + 1, j)], r[i])
            } else {
                deriv3([r[i - 2], r[i - 1], r[i]], [at(i - 2, j), at(i - 1, j), at(i, j)], r[i])
            };
            // exact on the first angular harmonics
            let ft = (at(i, (j + 1) % n_t) - at(i, (j + n_t - 1) % n_t)) / (2.0 * dt.sin());
            let rot = Complex64::new(g.cos_t[j], -g.sin_t[j]);
            out[j] = 0.5 * rot * Complex64::new(fr, -ft / r[i]);
        }
    });
    OneForm {
        grid: g.clone(),
        coef,
    }
}

/// `(∫ i φ∧φ̄)^{1/2}` with the raw density `i dζ∧dζ̄`.
pub fn l2_form_norm(phi: &OneForm) -> f64 {
    phi.inner(phi).re.max(0.0).sqrt()
}

/// Spherical cap `{x : dist(x, center) < radius}` in the chordal metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cap {
    pub center: ProjPoint,
    pub radius: f64,
}

impl Cap {
    pub fn contains(&self, p: &ProjPoint) -> bool {
        spherical_distance(&self.center, p) < self.radius
    }
}

/// Mass term of a `W^{1,2}` norm.
#[derive(Clone, Debug)]
pub enum W12Variant {
    FS,
    L1,
    L2,
    SubsetU(Cap),
    Nu(EmpiricalMeasure),
}

/// `|mass term| + ∥∂f∥_{L²}`.
pub fn w12_norm(f: &GridFunction, variant: &W12Variant) -> Result<f64> {
    let mass = match variant {
        W12Variant::FS => integrate(f).abs(),
        W12Variant::L1 => integrate(&f.map(f64::abs)),
        W12Variant::L2 => integrate(&f.map(|x| x * x)).max(0.0).sqrt(),
        W12Variant::SubsetU(cap) => {
            let m = integrate_cap(&GridFunction::constant(&f.grid, 1.0), cap);
            if m <= 0.0 {
                return Err(Error::EmptyRegion);
            }
            integrate_cap(f, cap).abs()
        }
        W12Variant::Nu(nu) => nu.pair(f).abs(),
    };
    Ok(mass + l2_form_norm(&del(f)))
}

/// Polynomial in the ambient coordinates `(X, Y, Z)` of the unit sphere,
/// with its exact `∂` in either chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpherePoly {
    pub terms: Vec<([u32; 3], f64)>,
}

fn ambient(chart: usize, zeta: Complex64) -> ([f64; 3], [Complex64; 3]) {
    let s = zeta.norm_sqr();
    let d = (1.0 + s) * (1.0 + s);
    let zb = zeta.conj();
    let one = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    if chart == 0 {
        let xy = 2.0 * zeta / (1.0 + s);
        (
            [xy.re, xy.im, (s - 1.0) / (1.0 + s)],
            [(one - zb * zb) / d, (one + zb * zb) / (i * d), 2.0 * zb / d],
        )
    } else {
        let xy = 2.0 * zb / (1.0 + s);
        (
            [xy.re, xy.im, (1.0 - s) / (1.0 + s)],
            [(one - zb * zb) / d, -(one + zb * zb) / (i * d), -2.0 * zb / d],
        )
    }
}

impl SpherePoly {
    /// Gaussian coefficients on all monomials of degree `1..=degree`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, degree: u32) -> Self {
        let mut terms = Vec::new();
        for a in 0..=degree {
            for b in 0..=degree - a {
                for c in 0..=degree - a - b {
                    if a + b + c > 0 {
                        terms.push(([a, b, c], rng.sample(StandardNormal)));
                    }
                }
            }
        }
        SpherePoly { terms }
    }

    pub fn eval_xyz(&self, x: [f64; 3]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * x[0].powi(e[0] as i32) * x[1].powi(e[1] as i32) * x[2].powi(e[2] as i32))
            .sum()
    }

    pub fn eval(&self, p: &ProjPoint) -> f64 {
        self.eval_xyz(p.to_sphere())
    }

    /// Exact `∂`-coefficient in `chart` at `zeta`.
    pub fn del_at(&self, chart: usize, zeta: Complex64) -> Complex64 {
        let (x, dx) = ambient(chart, zeta);
        let pw = |v: f64, e: u32| if e == 0 { 1.0 } else { v.powi(e as i32) };
        let mut out = czero();
        for (e, c) in &self.terms {
            for k in 0..3 {
                if e[k] == 0 {
                    continue;
                }
                let mut prod = c * e[k] as f64;
                for m in 0..3 {
                    let exp = if m == k { e[m] - 1 } else { e[m] };
                    prod *= pw(x[m], exp);
                }
                out += dx[k] * prod;
            }
        }
        out
    }

    pub fn sample(&self, grid: &Arc<SphereGrid>) -> GridFunction {
        GridFunction::from_chart_fn(grid, |c, z| self.eval_xyz(ambient(c, z).0))
    }

    pub fn del_form(&self, grid: &Arc<SphereGrid>) -> OneForm {
        OneForm::from_chart_fn(grid, |c, z| self.del_at(c, z))
    }
}

/// Random smooth form `∂(h₁ + i h₂)` with `h₁, h₂` random polynomials.
pub fn random_form<R: Rng + ?Sized>(grid: &Arc<SphereGrid>, rng: &mut R, degree: u32) -> OneForm {
    let h1 = SpherePoly::random(rng, degree);
    let h2 = SpherePoly::random(rng, degree);
    let i = Complex64::new(0.0, 1.0);
    OneForm::from_chart_fn(grid, |c, z| h1.del_at(c, z) + i * h2.del_at(c, z))
}

/// Exact `∂θ_g` coefficient in `chart` at `zeta`:
/// `θ_g = ½ log(∥g v∥² / ∥v∥²)` for the chart lift `v`.
pub fn theta_del_at(g: &GroupElement, chart: usize, zeta: Complex64) -> Complex64 {
    let one = Complex64::new(1.0, 0.0);
    // lift v(ζ) and its holomorphic derivative
    let (v, dv) = if chart == 0 {
        ([zeta, one], [one, czero()])
    } else {
        ([one, zeta], [czero(), one])
    };
    let gv = g.act_vec(v);
    let gdv = g.act_vec(dv);
    let ngv = gv[0].norm_sqr() + gv[1].norm_sqr();
    let nv = v[0].norm_sqr() + v[1].norm_sqr();
    let dngv = gdv[0] * gv[0].conj() + gdv[1] * gv[1].conj();
    let dnv = dv[0] * v[0].conj() + dv[1] * v[1].conj();
    0.5 * (dngv / ngv - dnv / nv)
}

/// `2π ∫₀^∞ (β−1)² s / ((βs+1)²(s+1)²) ds`, the energy integral of the
/// θ-cocycle of a matrix with `β = λ⁴`. With the raw form density the
/// squared norm of `∂θ_g` is a quarter of this.
pub fn theta_energy_radial(beta: f64) -> f64 {
    // s = e^t, substitution spreads the mass over log-scales
    let f = |t: f64| {
        let s = t.exp();
        (beta - 1.0).powi(2) * s * s / ((beta * s + 1.0).powi(2) * (s + 1.0).powi(2))
    };
    let (lo, hi, n) = (-60.0, 60.0, 24000);
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for k in 1..n {
        acc += f(lo + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    2.0 * PI * acc * h / 3.0
}

/// `2π (β−1)/(β+1) log β`.
pub fn theta_energy_bound(beta: f64) -> f64 {
    2.0 * PI * (beta - 1.0) / (beta + 1.0) * beta.ln()
}

/// `u^ε_{a,r}(x) = max(−log(dist(x,a) / 2r), 0)^{½−ε}`, supported by the
/// disc of radius `2r` about `a`.
pub fn bump_value(dist: f64, r: f64, eps: f64) -> f64 {
    let t = -(dist.max(1e-300) / (2.0 * r)).ln();
    if t > 0.0 {
        t.powf(0.5 - eps)
    } else {
        0.0
    }
}

pub fn bump_u(grid: &Arc<SphereGrid>, a: &ProjPoint, r: f64, eps: f64) -> Result<GridFunction> {
    if !(r > 0.0 && r <= 1.0) || !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidArgument(format!("bump radius {r}, eps {eps}")));
    }
    let mesh = grid.local_mesh_size(a);
    if r < RESOLVE_CELLS * mesh {
        return Err(Error::UnresolvedRadius { radius: r, mesh });
    }
    Ok(GridFunction::from_fn(grid, |x| bump_value(spherical_distance(x, a), r, eps)))
}

/// Young function `Φ`.
#[derive(Clone)]
pub enum YoungFunction {
    PowerQ(f64),
    /// `e^{−t^{−3}}` up to its inflection point `t₀ = (3/4)^{1/3}`, then the
    /// chord tangent to `e^{t²}`, then `e^{t²}`.
    HybridExpCube,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for YoungFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            YoungFunction::PowerQ(q) => write!(f, "PowerQ({q})"),
            YoungFunction::HybridExpCube => write!(f, "HybridExpCube"),
            YoungFunction::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Knots `(t₀, t₁)` of [`YoungFunction::HybridExpCube`].
pub fn hybrid_knots() -> (f64, f64) {
    let t0 = 0.75f64.cbrt();
    let f0 = (-1.0 / (t0 * t0 * t0)).exp();
    let h = |t: f64| (t * t).exp() * (1.0 + 2.0 * t * (t0 - t)) - f0;
    let (mut lo, mut hi) = (t0, 2.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (t0, 0.5 * (lo + hi))
}

impl YoungFunction {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            YoungFunction::PowerQ(q) => t.powf(*q),
            YoungFunction::HybridExpCube => {
                if t <= 0.0 {
                    return 0.0;
                }
                let (t0, t1) = hybrid_knots_cached();
                if t <= t0 {
                    (-1.0 / (t * t * t)).exp()
                } else if t < t1 {
                    let f0 = (-1.0 / (t0 * t0 * t0)).exp();
                    f0 + 2.0 * t1 * (t1 * t1).exp() * (t - t0)
                } else {
                    (t * t).exp()
                }
            }
            YoungFunction::Custom(f) => f(t),
        }
    }

    /// `Φ(0) = 0`, and increasing and convex on a logarithmic sample.
    pub fn validate(&self) -> Result<()> {
        if let YoungFunction::PowerQ(q) = self {
            if !(*q >= 1.0) {
                return Err(Error::InvalidYoung(format!("PowerQ needs q >= 1, got {q}")));
            }
        }
        if self.eval(0.0).abs() > 1e-15 {
            return Err(Error::InvalidYoung("Φ(0) must vanish".into()));
        }
        let ts: Vec<f64> = (0..400).map(|k| 10f64.powf(-2.0 + 3.0 * k as f64 / 399.0)).collect();
        let vals: Vec<f64> = ts.iter().map(|&t| self.eval(t)).collect();
        for k in 1..ts.len() {
            if vals[k] < vals[k - 1] * (1.0 - 1e-12) || !vals[k].is_finite() {
                return Err(Error::InvalidYoung(format!("not increasing near {}", ts[k])));
            }
        }
        for k in 1..ts.len() - 1 {
            let s1 = (vals[k] - vals[k - 1]) / (ts[k] - ts[k - 1]);
            let s2 = (vals[k + 1] - vals[k]) / (ts[k + 1] - ts[k]);
            if s2 < s1 - 1e-9 * s1.abs().max(1e-300) {
                return Err(Error::InvalidYoung(format!("not convex near {}", ts[k])));
            }
        }
        Ok(())
    }
}

fn hybrid_knots_cached() -> (f64, f64) {
    static KNOTS: std::sync::OnceLock<(f64, f64)> = std::sync::OnceLock::new();
    *KNOTS.get_or_init(hybrid_knots)
}

/// Luxemburg norm `inf{A : ∫ Φ(|f|/A) ω_FS ≤ 1}` by bisection in `log A`.
pub fn luxemburg_norm(f: &GridFunction, phi: &YoungFunction) -> Result<f64> {
    if f.values.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let g = &f.grid;
    let constraint = |a: f64| -> f64 {
        g.ring_sum(|c, i| {
            let lo = g.idx(c, i, 0);
            let w = g.fs_weight(i);
            if w == 0.0 {
                return 0.0;
            }
            w * f.values[lo..lo + g.n_t].iter().map(|&x| phi.eval(x.abs() / a)).sum::<f64>()
        })
    };
    let hi_val = constraint(LUX_HI);
    if !(hi_val <= 1.0) {
        return Err(Error::Diverged);
    }
    let (mut lo, mut hi) = (LUX_LO.ln(), LUX_HI.ln());
    for _ in 0..LUX_ITERS {
        let mid = 0.5 * (lo + hi);
        let v = constraint(mid.exp());
        if (v - 1.0).abs() < 1e-8 {
            return Ok(mid.exp());
        }
        if v > 1.0 || !v.is_finite() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi.exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoserTrudinger {
    /// `max ∫ e^{αφ²} ω_FS` over the family.
    pub value: f64,
    /// Largest `W^{1,2}` norm in the family.
    pub max_w12: f64,
}

pub fn moser_trudinger_probe(family: &[GridFunction], alpha: f64) -> Result<MoserTrudinger> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument("alpha must be positive".into()));
    }
    let mut out = MoserTrudinger {
        value: 0.0,
        max_w12: 0.0,
    };
    for f in family {
        let v = integrate(&f.map(|x| (alpha * x * x).exp()));
        if !v.is_finite() {
            return Err(Error::Overflow);
        }
        out.value = out.value.max(v);
        out.max_w12 = out.max_w12.max(w12_norm(f, &W12Variant::FS)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mobius::{operator_norm, random_element, random_unitary, theta};
    use crate::rng::stream;

    fn grid() -> Arc<SphereGrid> {
        SphereGrid::default_mesh()
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let rule = gauss_legendre(8);
        for deg in 0..16 {
            let got: f64 = rule.iter().map(|(x, w)| w * x.powi(deg)).sum();
            let want = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((got - want).abs() < 1e-13, "deg {deg}");
        }
    }

    #[test]
    fn partition_of_unity() {
        for k in 0..200 {
            let r = 0.5 + k as f64 * 0.01;
            assert!((partition(r) + partition(1.0 / r) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn integrate_basic() {
        let g = grid();
        assert!((g.total_fs_weight() - 1.0).abs() < 1e-10);
        assert!((integrate(&GridFunction::constant(&g, 1.0)) - 1.0).abs() < 1e-10);
        let f = GridFunction::from_fn(&g, |p| {
            let (_, z1) = p.coords();
            z1.norm_sqr() // 1/(1+|z|²)
        });
        assert!((integrate(&f) - 0.5).abs() < 1e-4);
        // smoothed hemisphere indicator
        let h = GridFunction::from_fn(&g, |p| 0.5 * (1.0 + (20.0 * p.to_sphere()[2]).tanh()));
        assert!((integrate(&h) - 0.5).abs() < 1e-3);
    }

    #[test]
    fn quadrature_error_is_second_order() {
        let exact = |x: [f64; 3]| (3.0 * x[0]).sin() * x[2] + x[1] * x[1];
        // ∫ Y² = 1/3, the odd part integrates to zero
        let err = |n_r: usize, n_t: usize| {
            let g = SphereGrid::new(n_r, n_t).unwrap();
            (integrate(&GridFunction::from_fn(&g, |p| exact(p.to_sphere()))) - 1.0 / 3.0).abs()
        };
        let (coarse, fine) = (err(32, 64), err(64, 128));
        assert!(fine < coarse / 3.0, "{coarse} {fine}");
    }

    #[test]
    fn del_of_linear_and_constant() {
        let g = grid();
        let c = del(&GridFunction::constant(&g, 3.0));
        assert!(c.coef.iter().all(|x| x.norm() < 1e-9));
        assert!(l2_form_norm(&c) < 1e-9);
        let re = GridFunction::from_chart_fn(&g, |c, z| if c == 0 { z.re } else { z.inv().re });
        let d = del(&re);
        for i in 0..g.n_r {
            for j in 0..g.n_t {
                let k = g.idx(0, i, j);
                assert!((d.coef[k] - Complex64::new(0.5, 0.0)).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn del_matches_exact_polynomial_derivative() {
        let g = grid();
        let mut rng = stream(4, 0);
        let p = SpherePoly::random(&mut rng, 3);
        let fd = del(&p.sample(&g));
        let exact = p.del_form(&g);
        let diff = fd.axpy(Complex64::new(-1.0, 0.0), &exact);
        assert!(l2_form_norm(&diff) < 1e-3 * l2_form_norm(&exact));
        assert!(exact.chart_mismatch() < 1e-3);
        assert!(p.sample(&g).chart_mismatch() < 1e-3);
    }

    #[test]
    fn theta_del_matches_difference_quotient() {
        let mut rng = stream(5, 0);
        let g = random_element(&mut rng, 0.7);
        for chart in 0..2 {
            let z = Complex64::new(0.3, -0.4);
            let th = |z: Complex64| theta(&g, &chart_point(chart, z));
            let h = 1e-6;
            let dx = (th(z + h) - th(z - h)) / (2.0 * h);
            let dy = (th(z + Complex64::new(0.0, h)) - th(z - Complex64::new(0.0, h))) / (2.0 * h);
            let want = 0.5 * Complex64::new(dx, -dy);
            assert!((theta_del_at(&g, chart, z) - want).norm() < 1e-7);
        }
    }

    #[test]
    fn theta_energy_matches_radial_oracle() {
        let g = grid();
        for lambda in [2f64.sqrt(), 2.0, 4.0, 10.0] {
            let m = GroupElement::diag(Complex64::new(lambda, 0.0));
            let beta = lambda.powi(4);
            let th = GridFunction::from_fn(&g, |p| theta(&m, p));
            let energy = l2_form_norm(&del(&th)).powi(2);
            let oracle = 0.25 * theta_energy_radial(beta);
            assert!((energy / oracle - 1.0).abs() < 0.01, "λ={lambda}: {energy} vs {oracle}");
            assert!(energy <= theta_energy_bound(beta));
        }
    }

    #[test]
    fn radial_oracle_closed_form_limits() {
        // β → 1: integrand vanishes
        assert!(theta_energy_radial(1.0).abs() < 1e-12);
        // the bound dominates the integral
        for beta in [2.0, 4.0, 16.0, 256.0, 1e4] {
            assert!(theta_energy_radial(beta) <= theta_energy_bound(beta) * (1.0 + 1e-9));
        }
    }

    #[test]
    fn form_norm_is_unitarily_invariant_under_relabelling() {
        // the same smooth form sampled after a rotation of the sphere
        let g = grid();
        let mut rng = stream(6, 0);
        let p = SpherePoly::random(&mut rng, 3);
        let k = random_unitary(&mut rng);
        let a = l2_form_norm(&p.del_form(&g));
        // the pulled-back function is again a polynomial in (X, Y, Z)
        let rotated = GridFunction::from_fn(&g, |x| p.eval(&crate::mobius::apply(&k, x)));
        let b = l2_form_norm(&del(&rotated));
        assert!((a - b).abs() < 2e-3 * a, "{a} {b}");
    }

    #[test]
    fn jacobian_bound() {
        let g = grid();
        let mut rng = stream(7, 0);
        for _ in 0..10 {
            let m = random_element(&mut rng, 1.0);
            let bound = operator_norm(&m).powi(4) * (1.0 + 1e-6);
            assert!((0..g.len()).step_by(97).all(|k| fs_jacobian(&m, &g.node_point(k)) <= bound));
        }
    }

    #[test]
    fn w12_variants() {
        let g = grid();
        let c = GridFunction::constant(&g, -2.5);
        assert!((w12_norm(&c, &W12Variant::FS).unwrap() - 2.5).abs() < 1e-8);
        let z = GridFunction::constant(&g, 0.0);
        let cap = Cap {
            center: ProjPoint::ZERO,
            radius: 0.5,
        };
        for v in [W12Variant::FS, W12Variant::L1, W12Variant::L2, W12Variant::SubsetU(cap)] {
            assert_eq!(w12_norm(&z, &v).unwrap(), 0.0);
        }
        let empty = Cap {
            center: ProjPoint::ZERO,
            radius: 0.0,
        };
        assert!(matches!(w12_norm(&c, &W12Variant::SubsetU(empty)), Err(Error::EmptyRegion)));
    }

    #[test]
    fn bump_values_and_resolution() {
        let g = grid();
        let a = ProjPoint::ZERO;
        let r = 0.125;
        let eps = DEFAULT_EPS;
        let u = bump_u(&g, &a, r, eps).unwrap();
        for k in 0..g.len() {
            let p = g.node_point(k);
            if spherical_distance(&p, &a) >= 2.0 * r {
                assert_eq!(u.values[k], 0.0);
            }
        }
        assert!((bump_value(r, r, eps) - 2f64.ln().powf(0.5 - eps)).abs() < 1e-15);
        let generic = ProjPoint::affine(Complex64::new(0.6, 0.3));
        assert!(matches!(bump_u(&g, &generic, 1e-3, eps), Err(Error::UnresolvedRadius { .. })));
    }

    #[test]
    fn young_functions() {
        assert!(YoungFunction::PowerQ(2.0).validate().is_ok());
        assert!(YoungFunction::PowerQ(0.5).validate().is_err());
        let h = YoungFunction::HybridExpCube;
        h.validate().unwrap();
        let (t0, t1) = hybrid_knots();
        // continuity and tangency at t1
        let e = 1e-7;
        assert!((h.eval(t1 - e) - h.eval(t1 + e)).abs() < 1e-5);
        assert!((h.eval(t0 - e) - h.eval(t0 + e)).abs() < 1e-5);
        for t in [2.0, 3.0, 5.0] {
            assert!((h.eval(t) * (-t * t).exp() - 1.0).abs() < 1e-12);
        }
        assert!(h.eval(0.2) < 1e-50);
    }

    #[test]
    fn luxemburg_cases() {
        let g = SphereGrid::new(32, 64).unwrap();
        let q = YoungFunction::PowerQ(3.0);
        assert_eq!(luxemburg_norm(&GridFunction::constant(&g, 0.0), &q).unwrap(), 0.0);
        let c = luxemburg_norm(&GridFunction::constant(&g, -1.7), &q).unwrap();
        assert!((c - 1.7).abs() < 1e-6);
        let mut rng = stream(8, 0);
        let f = SpherePoly::random(&mut rng, 2).sample(&g);
        for phi in [q.clone(), YoungFunction::HybridExpCube] {
            let a = luxemburg_norm(&f, &phi).unwrap();
            let b = luxemburg_norm(&f.scale(2.0), &phi).unwrap();
            assert!((b / a - 2.0).abs() < 1e-6);
        }
        let blow = YoungFunction::Custom(Arc::new(|t| if t > 0.0 { f64::INFINITY } else { 0.0 }));
        assert!(matches!(luxemburg_norm(&f, &blow), Err(Error::Diverged)));
    }

    #[test]
    fn moser_trudinger_trivial() {
        let g = SphereGrid::new(32, 64).unwrap();
        let z = moser_trudinger_probe(&[GridFunction::constant(&g, 0.0)], 3.0).unwrap();
        assert!((z.value - 1.0).abs() < 1e-10);
        let c = moser_trudinger_probe(&[GridFunction::constant(&g, 0.5)], 2.0).unwrap();
        assert!((c.value - 0.5f64.exp()).abs() < 1e-9);
        let big = moser_trudinger_probe(&[GridFunction::constant(&g, 1e3)], 1e3);
        assert!(matches!(big, Err(Error::Overflow)));
    }

    #[test]
    fn binary_round_trip() {
        let g = SphereGrid::new(8, 16).unwrap();
        let mut rng = stream(9, 0);
        let f = SpherePoly::random(&mut rng, 2).sample(&g);
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 8 * g.len());
        let back = GridFunction::read_binary(&g, buf.as_slice()).unwrap();
        assert_eq!(back.values, f.values);
        let phi = random_form(&g, &mut rng, 2);
        let mut buf = Vec::new();
        phi.write_binary(&mut buf).unwrap();
        assert_eq!(OneForm::read_binary(&g, buf.as_slice()).unwrap().coef, phi.coef);
        let other = SphereGrid::new(8, 32).unwrap();
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert!(matches!(GridFunction::read_binary(&other, buf.as_slice()), Err(Error::GridMismatch)));
    }
}
