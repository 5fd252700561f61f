//! Limit theorems for the norm cocycle: the Lyapunov exponent by two
//! routes, the Furstenberg boundary map, the ψ-function and its Gordin
//! tail, the Green–Kubo variance, the CLT experiment and the norm
//! comparison check.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{moment, AtomicMeasure, MatrixMeasure, MomentSpec};
use crate::mobius::{apply, raw_operator_norm, spherical_distance, theta, GroupElement, ProjPoint};
use crate::rng::{par_trials, StreamRng};
use crate::sphere::{GridFunction, SphereGrid};
use crate::stats::{ks_normal, linear_fit, mean_var, LinearFit};
use crate::transfer::{EmpiricalMeasure, FunctionPullback, DISTANCE_FLOOR};

/// Default truncation of the boundary map.
pub const BOUNDARY_T: usize = 60;
/// The truncation is doubled at most this many times.
pub const BOUNDARY_DOUBLINGS: u32 = 6;
/// Extension shift below which a boundary sample counts as stable.
pub const STABLE_SHIFT: f64 = 1e-6;
/// Extension shift above which a boundary sample is rejected.
pub const UNSTABLE_SHIFT: f64 = 1e-4;
/// Tolerance on the Green–Kubo partial sums.
pub const GK_TOL: f64 = 1e-3;
/// Trailing partial sums that must agree within [`GK_TOL`].
pub const GK_WINDOW: usize = 5;

/// Base point `[1:1]/√2` of the boundary map.
pub fn boundary_base() -> ProjPoint {
    ProjPoint::affine(Complex64::new(1.0, 0.0))
}

/// Product of matrices kept at unit Frobenius norm, with the discarded
/// scale accumulated in log form.
#[derive(Clone, Copy, Debug)]
pub struct RescaledProduct {
    m: [Complex64; 4],
    log_scale: f64,
}

impl Default for RescaledProduct {
    fn default() -> Self {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        RescaledProduct {
            m: [one, zero, zero, one],
            log_scale: 0.0,
        }
    }
}

impl RescaledProduct {
    /// Replaces the product `P` by `g P`.
    pub fn left_mul(&mut self, g: &GroupElement) {
        let [a, b, c, d] = g.entries();
        let [p, q, r, s] = self.m;
        let m = [a * p + b * r, a * q + b * s, c * p + d * r, c * q + d * s];
        let f = m.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        self.m = m.map(|x| x / f);
        self.log_scale += f.ln();
    }

    /// `log ∥P∥`.
    pub fn log_norm(&self) -> f64 {
        self.log_scale + raw_operator_norm(&self.m).ln()
    }

    /// `log ∥P v∥ / ∥v∥`.
    pub fn log_norm_vec(&self, v: &ProjPoint) -> f64 {
        let [p, q, r, s] = self.m;
        let (z0, z1) = v.coords();
        let w0 = p * z0 + q * z1;
        let w1 = r * z0 + s * z1;
        self.log_scale + 0.5 * (w0.norm_sqr() + w1.norm_sqr()).ln()
    }

    /// `∥P v∥ / (∥P∥ ∥v∥)`.
    pub fn norm_ratio(&self, v: &ProjPoint) -> f64 {
        let [p, q, r, s] = self.m;
        let (z0, z1) = v.coords();
        let w0 = p * z0 + q * z1;
        let w1 = r * z0 + s * z1;
        (w0.norm_sqr() + w1.norm_sqr()).sqrt() / raw_operator_norm(&self.m)
    }
}

/// Vector `g_k ⋯ g_1 v` kept at unit length; `log_len` is `log ∥g_k ⋯ g_1 v∥`.
#[derive(Clone, Copy, Debug)]
struct RescaledVector {
    v: [Complex64; 2],
    log_len: f64,
}

impl RescaledVector {
    fn new(p: &ProjPoint) -> Self {
        RescaledVector { v: p.vec(), log_len: 0.0 }
    }

    fn left_mul(&mut self, g: &GroupElement) {
        let w = g.act_vec(self.v);
        let n = (w[0].norm_sqr() + w[1].norm_sqr()).sqrt();
        self.v = [w[0] / n, w[1] / n];
        self.log_len += n.ln();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LyapunovRoute {
    Kingman,
    FurstenbergFormula,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub gamma_hat: f64,
    pub stderr: f64,
    pub n: usize,
    pub trials: usize,
    pub route: LyapunovRoute,
}

impl LyapunovReport {
    /// `gamma_hat − k·stderr > 0`.
    pub fn positive_at(&self, k: f64) -> bool {
        self.gamma_hat - k * self.stderr > 0.0
    }
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let (mean, var) = mean_var(xs);
    (mean, (var / xs.len() as f64).sqrt())
}

/// `(1/n) E log ∥g_n ⋯ g_1∥` over `trials` independent products.
pub fn lyapunov_kingman(mu: &MatrixMeasure, n: usize, trials: usize, seed: u64) -> Result<LyapunovReport> {
    if n == 0 || trials < 2 {
        return Err(Error::InvalidArgument("need n ≥ 1 and at least two trials".into()));
    }
    let xs = par_trials(trials, seed, |rng, _| {
        let mut p = RescaledProduct::default();
        for _ in 0..n {
            p.left_mul(&mu.draw(rng));
        }
        p.log_norm() / n as f64
    });
    let (gamma_hat, stderr) = mean_stderr(&xs);
    Ok(LyapunovReport {
        gamma_hat,
        stderr,
        n,
        trials,
        route: LyapunovRoute::Kingman,
    })
}

/// `∫∫ θ(g, x) dμ(g) dν(x)` over the support of `nu`. Atomic measures are
/// summed exactly at each point; sampler measures use `trials` draws per
/// point. The standard error treats the points as independent.
pub fn lyapunov_furstenberg(mu: &MatrixMeasure, nu: &EmpiricalMeasure, trials: usize, seed: u64) -> Result<LyapunovReport> {
    let pts = nu.points();
    let vals: Vec<f64> = match mu {
        MatrixMeasure::Atomic(m) => pts
            .iter()
            .map(|(x, _)| m.atoms().iter().map(|(g, w)| w * theta(g, x)).sum())
            .collect(),
        MatrixMeasure::Sampler(_) => {
            let per = trials.max(1);
            par_trials(pts.len(), seed, |rng, k| {
                (0..per).map(|_| theta(&mu.draw(rng), &pts[k].0)).sum::<f64>() / per as f64
            })
        }
    };
    let gamma_hat: f64 = vals.iter().zip(pts).map(|(v, (_, w))| v * w).sum();
    let var: f64 = vals.iter().zip(pts).map(|(v, (_, w))| w * (v - gamma_hat).powi(2)).sum();
    let ess = 1.0 / pts.iter().map(|(_, w)| w * w).sum::<f64>();
    Ok(LyapunovReport {
        gamma_hat,
        stderr: (var / ess).sqrt(),
        n: 1,
        trials: pts.len(),
        route: LyapunovRoute::FurstenbergFormula,
    })
}

/// A finite prefix of a random sequence with its boundary point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewSample {
    /// `g_1, …, g_T`.
    pub prefix: Vec<GroupElement>,
    /// `g_1 ⋯ g_T · x₀`.
    pub z_point: ProjPoint,
    /// Distance moved when the prefix is extended to `2T`.
    pub shift: f64,
    /// `shift < 1e−6`.
    pub stable: bool,
}

impl SkewSample {
    pub fn t(&self) -> usize {
        self.prefix.len()
    }
}

fn push_back(prefix: &[GroupElement], x: ProjPoint) -> ProjPoint {
    prefix.iter().rev().fold(x, |y, g| apply(g, &y))
}

/// `g_1 ⋯ g_T · x₀` with `T` doubled from `t` until extending the prefix to
/// `2T` moves the point by at most `1e−4`.
pub fn boundary_map(mu: &MatrixMeasure, t: usize, rng: &mut StreamRng) -> Result<SkewSample> {
    if t == 0 {
        return Err(Error::InvalidArgument("boundary truncation must be positive".into()));
    }
    let x0 = boundary_base();
    let mut prefix: Vec<GroupElement> = (0..t).map(|_| mu.draw(rng)).collect();
    let mut z = push_back(&prefix, x0);
    let mut doublings = 0;
    loop {
        let tail: Vec<GroupElement> = (0..prefix.len()).map(|_| mu.draw(rng)).collect();
        let z2 = push_back(&prefix, push_back(&tail, x0));
        let shift = spherical_distance(&z, &z2);
        if shift <= UNSTABLE_SHIFT {
            return Ok(SkewSample {
                prefix,
                z_point: z,
                shift,
                stable: shift < STABLE_SHIFT,
            });
        }
        if doublings == BOUNDARY_DOUBLINGS {
            return Err(Error::Unstable(shift));
        }
        doublings += 1;
        prefix.extend(tail);
        z = z2;
    }
}

/// Boundary points of `count` independent sequences, as an equally weighted
/// empirical measure (an approximation of the stationary measure), together
/// with the fraction of stable samples.
pub fn boundary_empirical(mu: &MatrixMeasure, count: usize, t: usize, seed: u64) -> Result<(EmpiricalMeasure, f64)> {
    let samples: Vec<Result<(ProjPoint, bool)>> =
        par_trials(count, seed, |rng, _| boundary_map(mu, t, rng).map(|s| (s.z_point, s.stable)));
    let samples: Vec<(ProjPoint, bool)> = samples.into_iter().collect::<Result<_>>()?;
    let stable = samples.iter().filter(|s| s.1).count() as f64 / count as f64;
    Ok((EmpiricalMeasure::uniform(samples.into_iter().map(|s| s.0).collect())?, stable))
}

/// `ψ(x) = γ − Σ wᵢ θ(gᵢ, x)` at the grid nodes.
pub fn psi_function(mu: &AtomicMeasure, gamma: f64, grid: &Arc<SphereGrid>) -> GridFunction {
    GridFunction::from_fn(grid, |x| gamma - mu.atoms().iter().map(|(g, w)| w * theta(g, x)).sum::<f64>())
}

/// Iterates `(f_μ*)^k ψ` for `k = 0..K`.
pub fn psi_iterates(mu: &AtomicMeasure, psi: &GridFunction, k: usize) -> Result<Vec<GridFunction>> {
    let op = FunctionPullback::new(mu, psi.grid());
    let mut out = Vec::with_capacity(k);
    let mut u = psi.clone();
    for _ in 0..k {
        let next = op.apply(&u)?;
        out.push(std::mem::replace(&mut u, next));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GordinTail {
    /// `∥(f_μ*)^{n−1} ψ∥_{L²(ν)}` for `n = 1..=K`.
    pub norms: Vec<f64>,
    /// `⟨ν, (f_μ*)^{K−1} ψ⟩`, the constant the iterates settle on. It is
    /// zero in exact arithmetic; here it carries the error of `γ` and `ν`.
    pub offset: f64,
    /// `∥(f_μ*)^{n−1} ψ − offset∥_{L²(ν)}`.
    pub centred: Vec<f64>,
    /// Fit of `log centred` against `n`, over the terms above the floor.
    pub fit: Option<LinearFit>,
}

impl GordinTail {
    /// Fitted geometric ratio `exp(slope)`.
    pub fn ratio(&self) -> Option<f64> {
        self.fit.map(|f| f.slope.exp())
    }
}

fn l2_nu(nu: &EmpiricalMeasure, f: &GridFunction, shift: f64) -> f64 {
    nu.pair_fn(|x| (f.eval(x) - shift).powi(2)).sqrt()
}

/// Norms of `(f_μ*)^{n−1} ψ` in `L²(ν)` for `n = 1..=K`.
pub fn gordin_tail(mu: &AtomicMeasure, gamma: f64, k: usize, grid: &Arc<SphereGrid>, nu: &EmpiricalMeasure) -> Result<GordinTail> {
    let iterates = psi_iterates(mu, &psi_function(mu, gamma, grid), k)?;
    Ok(tail_from_iterates(&iterates, nu))
}

fn tail_from_iterates(iterates: &[GridFunction], nu: &EmpiricalMeasure) -> GordinTail {
    let offset = iterates.last().map_or(0.0, |u| nu.pair(u));
    let norms: Vec<f64> = iterates.iter().map(|u| l2_nu(nu, u, 0.0)).collect();
    let centred: Vec<f64> = iterates.iter().map(|u| l2_nu(nu, u, offset)).collect();
    let pts: Vec<(f64, f64)> = centred
        .iter()
        .enumerate()
        .take(centred.len().saturating_sub(1))
        .filter(|(_, c)| **c > DISTANCE_FLOOR)
        .map(|(i, c)| ((i + 1) as f64, c.ln()))
        .collect();
    GordinTail {
        norms,
        offset,
        centred,
        fit: linear_fit(&pts),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenKubo {
    pub sigma2: f64,
    /// Monte Carlo standard error of `sigma2`.
    pub stderr: f64,
    /// `⟨𝔪, φ̃²⟩`.
    pub diagonal: f64,
    /// `⟨𝔪, φ̃ · (φ̃∘Fⁿ)⟩` for `n = 1..=K`.
    pub correlations: Vec<f64>,
    /// `⟨𝔪, φ̃⟩`, zero up to Monte Carlo error.
    pub mean_phi: f64,
    pub mean_phi_stderr: f64,
    pub tail: GordinTail,
}

/// `σ² = ⟨𝔪, φ̃²⟩ + 2 Σ_{n≥1} ⟨𝔪, φ̃ · (f_μ*)^{n−1}ψ⟩`, with
/// `φ̃(g, x) = θ(g_1⁻¹, x) + γ` sampled at `x = Z(g)` and the iterates of
/// `ψ` interpolated there.
#[allow(clippy::too_many_arguments)]
pub fn green_kubo_variance(
    mu: &AtomicMeasure,
    gamma: f64,
    k: usize,
    mc_samples: usize,
    t: usize,
    seed: u64,
    grid: &Arc<SphereGrid>,
    nu: &EmpiricalMeasure,
) -> Result<GreenKubo> {
    if mc_samples < 2 || k == 0 {
        return Err(Error::InvalidArgument("need K ≥ 1 and at least two samples".into()));
    }
    let mm = MatrixMeasure::Atomic(mu.clone());
    let iterates = psi_iterates(mu, &psi_function(mu, gamma, grid), k)?;
    let rows: Vec<Result<Vec<f64>>> = par_trials(mc_samples, seed, |rng, _| {
        let s = boundary_map(&mm, t, rng)?;
        let x = s.z_point;
        let phi = theta(&s.prefix[0].inverse(), &x) + gamma;
        let mut row = Vec::with_capacity(k + 1);
        row.push(phi);
        row.extend(iterates.iter().map(|u| phi * u.eval(&x)));
        Ok(row)
    });
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
    let column = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<f64>>();
    let (mean_phi, mean_phi_stderr) = mean_stderr(&column(0));
    let diag: Vec<f64> = rows.iter().map(|r| r[0] * r[0]).collect();
    let diagonal = mean_var(&diag).0;
    let correlations: Vec<f64> = (1..=k).map(|c| mean_var(&column(c)).0).collect();
    let mut partial = Vec::with_capacity(k);
    let mut acc = diagonal;
    for c in &correlations {
        acc += 2.0 * c;
        partial.push(acc);
    }
    let last = *partial.last().expect("K ≥ 1");
    let window = &partial[partial.len().saturating_sub(GK_WINDOW)..];
    let drift = window.iter().map(|s| (s - last).abs()).fold(0.0, f64::max);
    if partial.len() < GK_WINDOW || drift > GK_TOL {
        return Err(Error::NotConverged(drift));
    }
    let per_sample: Vec<f64> = rows
        .iter()
        .map(|r| r[0] * r[0] + 2.0 * r[1..].iter().sum::<f64>())
        .collect();
    let (sigma2, stderr) = mean_stderr(&per_sample);
    Ok(GreenKubo {
        sigma2,
        stderr,
        diagonal,
        correlations,
        mean_phi,
        mean_phi_stderr,
        tail: tail_from_iterates(&iterates, nu),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub n: usize,
    pub trials: usize,
    pub gamma: f64,
    /// `Yₙ = (log ∥g_n ⋯ g_1 v∥/∥v∥ − nγ)/√n`, one per trial.
    pub sample: Vec<f64>,
    pub mean: f64,
    /// Kolmogorov–Smirnov distance to the Gaussian with the sample mean and
    /// variance.
    pub ks_statistic: f64,
    pub sigma2_empirical: f64,
    pub sigma2_green_kubo: Option<f64>,
}

impl CltReport {
    /// Samples, one per line, under a `y` header.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "y")?;
        for y in &self.sample {
            writeln!(out, "{y:e}")?;
        }
        Ok(())
    }
}

/// Raw `log ∥g_n ⋯ g_1 v∥/∥v∥` over `trials` products.
pub fn log_norm_sample(mu: &MatrixMeasure, v: &ProjPoint, n: usize, trials: usize, seed: u64) -> Vec<f64> {
    par_trials(trials, seed, |rng, _| {
        let mut x = RescaledVector::new(v);
        for _ in 0..n {
            x.left_mul(&mu.draw(rng));
        }
        x.log_len
    })
}

/// The normalised sample `Yₙ` and its Gaussian fit.
pub fn clt_experiment(mu: &MatrixMeasure, v: &ProjPoint, gamma: f64, n: usize, trials: usize, seed: u64) -> Result<CltReport> {
    if n == 0 || trials < 2 {
        return Err(Error::InvalidArgument("need n ≥ 1 and at least two trials".into()));
    }
    match moment(mu, &MomentSpec::Power(2.0), trials, seed) {
        Ok(m) if m.value.is_finite() => {}
        _ => return Err(Error::MomentViolation),
    }
    let root = (n as f64).sqrt();
    let sample: Vec<f64> = log_norm_sample(mu, v, n, trials, seed)
        .into_iter()
        .map(|l| (l - n as f64 * gamma) / root)
        .collect();
    let (mean, var) = mean_var(&sample);
    let ks_statistic = if var > 0.0 { ks_normal(&sample, mean, var) } else { 0.0 };
    Ok(CltReport {
        n,
        trials,
        gamma,
        sample,
        mean,
        ks_statistic,
        sigma2_empirical: var,
        sigma2_green_kubo: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormComparisonRow {
    pub delta: f64,
    /// Fraction of trajectories with `δ ≤ ∥P_k v∥/(∥P_k∥∥v∥)` for all `k ≤ n`.
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormComparison {
    pub rows: Vec<NormComparisonRow>,
    /// Largest ratio seen; at most 1 by definition of the operator norm.
    pub max_ratio: f64,
}

/// Fractions of trajectories whose norm ratio stays in `[δ, 1]` up to `n`.
pub fn norm_comparison_check(
    mu: &MatrixMeasure,
    v: &ProjPoint,
    n: usize,
    trials: usize,
    deltas: &[f64],
    seed: u64,
) -> Result<NormComparison> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let extremes = par_trials(trials, seed, |rng, _| {
        let mut p = RescaledProduct::default();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for _ in 0..n {
            p.left_mul(&mu.draw(rng));
            let r = p.norm_ratio(v);
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (lo, hi)
    });
    let rows = deltas
        .iter()
        .map(|&delta| NormComparisonRow {
            delta,
            fraction: extremes.iter().filter(|(lo, _)| *lo >= delta).count() as f64 / trials as f64,
        })
        .collect();
    Ok(NormComparison {
        rows,
        max_ratio: extremes.iter().map(|e| e.1).fold(0.0, f64::max),
    })
}
