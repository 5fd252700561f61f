//! The transfer operator of a measure: pull-back on functions and
//! `(1,0)`-forms, push-forward of empirical measures, the form-norm gap
//! and the convergence experiments it drives.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{convolution_power, elementarity_check, AtomicMeasure, MatrixMeasure};
use crate::mobius::{apply, GroupElement, ProjPoint};
use crate::rng::{par_trials, stream, StreamRng};
use crate::sphere::{del, l2_form_norm, w12_norm, GridFunction, OneForm, SphereGrid, SpherePoly, W12Variant};
use crate::stats::{linear_fit, LinearFit};

/// Atom bound for the convolution power inside [`gap_estimate`].
pub const GAP_MAX_ATOMS: usize = 4096;
/// Polynomial degree of the trial space in [`gap_estimate`].
pub const GAP_DEGREE: u32 = 8;
/// Power iterations on the compressed operator; each one costs a product
/// with an `m × m` matrix, so clustered top eigenvalues can afford many.
pub const GAP_ITERS: usize = 20_000;
/// Relative residual at which the power iteration stops early.
pub const GAP_RESIDUAL: f64 = 1e-10;
/// Exact push-forwards larger than this are resampled.
pub const PUSH_CAP: usize = 2_000_000;
pub const PUSH_RESAMPLE: usize = 100_000;
/// Depth of the elementarity check guarding the experiments.
pub const VERDICT_DEPTH: usize = 6;

/// Finitely supported probability measure on the sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    points: Vec<(ProjPoint, f64)>,
}

impl EmpiricalMeasure {
    /// Normalises the weights to total mass 1.
    pub fn new(points: Vec<(ProjPoint, f64)>) -> Result<Self> {
        let total: f64 = points.iter().map(|(_, w)| *w).sum();
        if points.is_empty() || points.iter().any(|(_, w)| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidMeasure("empirical weights must be positive".into()));
        }
        Ok(EmpiricalMeasure {
            points: points.into_iter().map(|(p, w)| (p, w / total)).collect(),
        })
    }

    /// Equal weights.
    pub fn uniform(points: Vec<ProjPoint>) -> Result<Self> {
        Self::new(points.into_iter().map(|p| (p, 1.0)).collect())
    }

    pub fn dirac(p: ProjPoint) -> Self {
        EmpiricalMeasure { points: vec![(p, 1.0)] }
    }

    pub fn points(&self) -> &[(ProjPoint, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `⟨m, f⟩` with `f` interpolated at the support points.
    pub fn pair(&self, f: &GridFunction) -> f64 {
        self.pair_fn(|p| f.eval(p))
    }

    /// `⟨m, f⟩` for a pointwise function.
    pub fn pair_fn<F: Fn(&ProjPoint) -> f64 + Sync>(&self, f: F) -> f64 {
        let partials: Vec<f64> = self
            .points
            .par_chunks(4096)
            .map(|c| c.iter().map(|(p, w)| w * f(p)).sum::<f64>())
            .collect();
        partials.iter().sum()
    }

    /// Weighted mean and standard error of `f` (the latter treating the
    /// support points as independent draws).
    pub fn mean_stderr<F: Fn(&ProjPoint) -> f64 + Sync>(&self, f: F) -> (f64, f64) {
        let mean = self.pair_fn(&f);
        let var = self.pair_fn(|p| (f(p) - mean).powi(2));
        let ess = 1.0 / self.points.iter().map(|(_, w)| w * w).sum::<f64>();
        (mean, (var / ess).sqrt())
    }

    /// Systematic resampling down to `n` equally weighted points.
    pub fn resample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Self {
        let u0: f64 = rng.random::<f64>() / n as f64;
        let mut out = Vec::with_capacity(n);
        let mut acc = 0.0;
        let mut k = 0;
        for (p, w) in &self.points {
            acc += w;
            while k < n && u0 + k as f64 / n as f64 <= acc {
                out.push((*p, 1.0));
                k += 1;
            }
        }
        while out.len() < n {
            out.push((self.points[self.points.len() - 1].0, 1.0));
        }
        EmpiricalMeasure::new(out).expect("resampled weights are positive")
    }
}

/// Where the image of a chart node lands: chart, coordinate, and the
/// derivative of the chart map `η(ζ)`. The image stays in the source chart
/// while it is inside that chart's mesh, otherwise it is handed to the
/// chart where it lies in the unit disc.
fn image_in_chart(g: &GroupElement, chart: usize, zeta: Complex64, rim: f64) -> (usize, Complex64, Complex64) {
    let one = Complex64::new(1.0, 0.0);
    let v = if chart == 0 { [zeta, one] } else { [one, zeta] };
    let y = g.act_vec(v);
    let same = if chart == 0 { y } else { [y[1], y[0]] };
    let c2 = if same[0].norm_sqr() <= rim * rim * same[1].norm_sqr() {
        chart
    } else if y[0].norm_sqr() <= y[1].norm_sqr() {
        0
    } else {
        1
    };
    let v = if c2 == 0 { y } else { [y[1], y[0]] };
    let det = if chart == c2 { 1.0 } else { -1.0 };
    (c2, v[0] / v[1], Complex64::new(det, 0.0) / (v[1] * v[1]))
}

/// Rows of the pull-back by an atomic measure: for every node, the
/// stencils of its images under the atoms, pre-multiplied by the weights
/// (and, for forms, by the derivative cocycle). Functions use the bilinear
/// stencil, forms the cubic one: the form norms are compared at the `1e−4`
/// level, which bilinear smoothing does not reach at the default mesh.
struct PullbackRows<T> {
    stride: usize,
    entries: Vec<(u32, T)>,
}

fn function_rows(mu: &AtomicMeasure, grid: &SphereGrid) -> PullbackRows<f64> {
    let stride = 4 * mu.len();
    let mut entries = vec![(0u32, 0.0); grid.len() * stride];
    entries.par_chunks_mut(stride).enumerate().for_each(|(k, row)| {
        let (c, i, j) = grid.split(k);
        let zeta = grid.node(c, i, j);
        let rim = grid.radii()[grid.n_r - 1] * (1.0 + 1e-12);
        for (a, (g, w)) in mu.atoms().iter().enumerate() {
            let (c2, eta, _) = image_in_chart(g, c, zeta, rim);
            let s = grid.stencil(c2, eta);
            for m in 0..4 {
                row[4 * a + m] = (s.idx[m], w * s.w[m]);
            }
        }
    });
    PullbackRows { stride, entries }
}

fn form_rows(mu: &AtomicMeasure, grid: &SphereGrid) -> PullbackRows<Complex64> {
    let stride = 16 * mu.len();
    let mut entries = vec![(0u32, Complex64::new(0.0, 0.0)); grid.len() * stride];
    entries.par_chunks_mut(stride).enumerate().for_each(|(k, row)| {
        let (c, i, j) = grid.split(k);
        let zeta = grid.node(c, i, j);
        let rim = grid.radii()[grid.n_r - 1] * (1.0 + 1e-12);
        for (a, (g, w)) in mu.atoms().iter().enumerate() {
            let (c2, eta, deta) = image_in_chart(g, c, zeta, rim);
            let s = grid.stencil_cubic(c2, eta);
            for m in 0..16 {
                row[16 * a + m] = (s.idx[m], deta * (w * s.w[m]));
            }
        }
    });
    PullbackRows { stride, entries }
}

/// Pull-back operator `f ↦ Σ wᵢ f∘gᵢ` on grid functions, assembled once.
pub struct FunctionPullback {
    grid: Arc<SphereGrid>,
    rows: PullbackRows<f64>,
}

impl FunctionPullback {
    pub fn new(mu: &AtomicMeasure, grid: &Arc<SphereGrid>) -> Self {
        FunctionPullback {
            grid: grid.clone(),
            rows: function_rows(mu, grid),
        }
    }

    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        if f.grid().as_ref() != self.grid.as_ref() {
            return Err(Error::GridMismatch);
        }
        let values = self
            .rows
            .entries
            .par_chunks(self.rows.stride)
            .map(|row| row.iter().map(|(k, w)| w * f.values[*k as usize]).sum())
            .collect();
        GridFunction::from_values(&self.grid, values)
    }
}

/// Pull-back operator `φ ↦ Σ wᵢ gᵢ*φ` on `(1,0)`-forms, assembled once.
pub struct FormPullback {
    grid: Arc<SphereGrid>,
    rows: PullbackRows<Complex64>,
}

impl FormPullback {
    pub fn new(mu: &AtomicMeasure, grid: &Arc<SphereGrid>) -> Self {
        FormPullback {
            grid: grid.clone(),
            rows: form_rows(mu, grid),
        }
    }

    pub fn apply(&self, phi: &OneForm) -> Result<OneForm> {
        if phi.grid().as_ref() != self.grid.as_ref() {
            return Err(Error::GridMismatch);
        }
        let coef = self
            .rows
            .entries
            .par_chunks(self.rows.stride)
            .map(|row| row.iter().map(|(k, w)| w * phi.coef[*k as usize]).sum())
            .collect();
        OneForm::from_coefs(&self.grid, coef)
    }
}

/// `Σ wᵢ f∘gᵢ` with bilinear interpolation.
pub fn pullback_function(mu: &AtomicMeasure, f: &GridFunction) -> Result<GridFunction> {
    FunctionPullback::new(mu, f.grid()).apply(f)
}

/// `Σ wᵢ gᵢ*φ`.
pub fn pullback_form(mu: &AtomicMeasure, phi: &OneForm) -> Result<OneForm> {
    FormPullback::new(mu, phi.grid()).apply(phi)
}

/// Pull-back of a batch of forms without storing the operator.
pub fn pullback_forms(mu: &AtomicMeasure, forms: &[OneForm]) -> Result<Vec<OneForm>> {
    let Some(first) = forms.first() else {
        return Ok(Vec::new());
    };
    let grid = first.grid().clone();
    if forms.iter().any(|f| f.grid().as_ref() != grid.as_ref()) {
        return Err(Error::GridMismatch);
    }
    let b = forms.len();
    let mut out = vec![Complex64::new(0.0, 0.0); grid.len() * b];
    out.par_chunks_mut(b).enumerate().for_each(|(k, dst)| {
        let (c, i, j) = grid.split(k);
        let zeta = grid.node(c, i, j);
        let rim = grid.radii()[grid.n_r - 1] * (1.0 + 1e-12);
        for (g, w) in mu.atoms() {
            let (c2, eta, deta) = image_in_chart(g, c, zeta, rim);
            let s = grid.stencil_cubic(c2, eta);
            for m in 0..16 {
                let wt = deta * (w * s.w[m]);
                let src = s.idx[m] as usize;
                for (d, f) in dst.iter_mut().zip(forms) {
                    *d += wt * f.coef[src];
                }
            }
        }
    });
    (0..b)
        .map(|q| OneForm::from_coefs(&grid, (0..grid.len()).map(|k| out[k * b + q]).collect()))
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub enum PushMode {
    Exact,
    /// One draw per point from the stream seed.
    Sampled(u64),
}

/// `μ ∗ m`.
pub fn pushforward_empirical(mu: &MatrixMeasure, m: &EmpiricalMeasure, mode: PushMode) -> Result<EmpiricalMeasure> {
    match mode {
        PushMode::Exact => {
            let atomic = mu.as_atomic()?;
            let count = atomic.len() * m.len();
            let pts: Vec<(ProjPoint, f64)> = m
                .points()
                .par_iter()
                .flat_map_iter(|(x, v)| atomic.atoms().iter().map(move |(g, w)| (apply(g, x), w * v)))
                .collect();
            let out = EmpiricalMeasure::new(pts)?;
            if count > PUSH_CAP {
                let mut rng = stream(count as u64, 0);
                return Ok(out.resample(PUSH_RESAMPLE, &mut rng));
            }
            Ok(out)
        }
        PushMode::Sampled(seed) => {
            let pts = m.points();
            let moved = par_trials(pts.len(), seed, |rng, k| {
                let g = mu.draw(rng);
                (apply(&g, &pts[k].0), pts[k].1)
            });
            EmpiricalMeasure::new(moved)
        }
    }
}

/// Pushes `δ_a` forward `n` times exactly, resampling when the support
/// grows past the cap.
pub fn iterate_pushforward(mu: &AtomicMeasure, a: &ProjPoint, n: usize) -> Result<EmpiricalMeasure> {
    let mm = MatrixMeasure::Atomic(mu.clone());
    let mut m = EmpiricalMeasure::dirac(*a);
    for _ in 0..n {
        m = pushforward_empirical(&mm, &m, PushMode::Exact)?;
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub n_power: usize,
    pub norm_estimate: f64,
    pub iterations: usize,
    pub residual: f64,
    /// Dimension of the trial space.
    pub dimension: usize,
}

/// Orthonormal basis (for `∫ i φ∧ψ̄`) of `∂` of the polynomials of degree
/// `≤ degree` on the sphere, from the monomials `XᵃYᵇZᶜ`, `c ≤ 1`.
pub fn smooth_form_basis(grid: &Arc<SphereGrid>, degree: u32) -> Vec<OneForm> {
    let mut raw = Vec::new();
    for total in 1..=degree {
        for c in 0..=1u32.min(total) {
            for a in 0..=total - c {
                let b = total - c - a;
                raw.push(SpherePoly { terms: vec![([a, b, c], 1.0)] }.del_form(grid));
            }
        }
    }
    let mut basis: Vec<OneForm> = Vec::new();
    for mut v in raw {
        let n0 = l2_form_norm(&v);
        for _ in 0..2 {
            for e in &basis {
                let p = v.inner(e);
                v = v.axpy(-p, e);
            }
        }
        let n = l2_form_norm(&v);
        if n > 1e-8 * n0 {
            basis.push(v.scale(Complex64::new(1.0 / n, 0.0)));
        }
    }
    basis
}

/// Norm of `(f_μᴺ)*` on `(1,0)`-forms, estimated on the trial space of
/// [`smooth_form_basis`]: power iteration on the Gram matrix
/// `⟨Pφᵢ, Pφⱼ⟩` of the pulled-back basis, which is `P*P` compressed to
/// the trial space. Returns the square root of the Rayleigh quotient.
pub fn gap_estimate(mu: &AtomicMeasure, n: usize, iters: usize, seed: u64, grid: &Arc<SphereGrid>) -> Result<GapEstimate> {
    gap_estimate_with(mu, n, iters, seed, grid, GAP_DEGREE)
}

pub fn gap_estimate_with(
    mu: &AtomicMeasure,
    n: usize,
    iters: usize,
    seed: u64,
    grid: &Arc<SphereGrid>,
    degree: u32,
) -> Result<GapEstimate> {
    let power = convolution_power(mu, n.max(1), GAP_MAX_ATOMS)?;
    let basis = smooth_form_basis(grid, degree);
    let images = pullback_forms(&power, &basis)?;
    let m = basis.len();
    let gram: Vec<Vec<Complex64>> = (0..m)
        .into_par_iter()
        .map(|i| (0..m).map(|j| images[j].inner(&images[i])).collect())
        .collect();
    let mut rng = stream(seed, 0);
    let mut x: Vec<Complex64> = (0..m)
        .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    let matvec = |x: &[Complex64]| -> Vec<Complex64> {
        (0..m).map(|i| (0..m).map(|j| gram[i][j] * x[j]).sum()).collect()
    };
    let norm = |x: &[Complex64]| x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let mut rayleigh = 0.0;
    let mut residual = f64::INFINITY;
    let mut done = 0;
    for it in 0..iters.max(1) {
        if residual <= GAP_RESIDUAL * rayleigh {
            break;
        }
        let nx = norm(&x);
        x.iter_mut().for_each(|c| *c /= nx);
        let ax = matvec(&x);
        rayleigh = x.iter().zip(&ax).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
        residual = x
            .iter()
            .zip(&ax)
            .map(|(a, b)| (b - a * rayleigh).norm_sqr())
            .sum::<f64>()
            .sqrt();
        x = ax;
        done = it + 1;
    }
    Ok(GapEstimate {
        n_power: n,
        norm_estimate: rayleigh.max(0.0).sqrt(),
        iterations: done,
        residual,
        dimension: m,
    })
}

/// `∥Pφ∥ / ∥φ∥` for a single form.
pub fn form_norm_ratio(pullback: &FormPullback, phi: &OneForm) -> Result<f64> {
    Ok(l2_form_norm(&pullback.apply(phi)?) / l2_form_norm(phi))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterateRow {
    pub n: usize,
    /// `c_n = ∫ h_n ω_FS`.
    pub mean: f64,
    pub w12_distance: f64,
    pub sup_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterateReport {
    pub rows: Vec<IterateRow>,
    /// Limit constant, the last `c_n`.
    pub limit: f64,
    /// Fit of `log w12_distance` against `n`.
    pub fit: Option<LinearFit>,
}

/// Distances below this are treated as converged and left out of fits.
pub const DISTANCE_FLOOR: f64 = 1e-12;

fn guard_elementary(mu: &AtomicMeasure) -> Result<()> {
    let verdict = elementarity_check(mu, VERDICT_DEPTH);
    if verdict.is_elementary() {
        return Err(Error::ElementaryMeasure(verdict.label().into()));
    }
    Ok(())
}

/// Iterates `h_n = f_μ* h_{n−1}` and records the decay of `h_n` towards
/// its limit constant in `W^{1,2}` and in sup norm.
pub fn iterate_pullback_experiment(mu: &AtomicMeasure, h: &GridFunction, n_max: usize) -> Result<IterateReport> {
    guard_elementary(mu)?;
    let op = FunctionPullback::new(mu, h.grid());
    let mut iterates = vec![h.clone()];
    for _ in 0..n_max {
        let next = op.apply(iterates.last().expect("nonempty"))?;
        iterates.push(next);
    }
    let limit = crate::sphere::integrate(iterates.last().expect("nonempty"));
    let rows: Vec<IterateRow> = iterates
        .par_iter()
        .enumerate()
        .map(|(n, hn)| {
            let shifted = hn.add_constant(-limit);
            Ok(IterateRow {
                n,
                mean: crate::sphere::integrate(hn),
                w12_distance: w12_norm(&shifted, &W12Variant::FS)?,
                sup_distance: shifted.sup_norm(),
            })
        })
        .collect::<Result<_>>()?;
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.n >= 1 && r.w12_distance > DISTANCE_FLOOR)
        .map(|r| (r.n as f64, r.w12_distance.ln()))
        .collect();
    Ok(IterateReport {
        rows,
        limit,
        fit: linear_fit(&pts),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquidistRow {
    pub n: usize,
    /// `|⟨(f_μⁿ)_*δ_a, φ⟩ − ⟨ν, φ⟩|`.
    pub value: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquidistReport {
    pub rows: Vec<EquidistRow>,
    /// Fit of `log value` against `n` over the points above the noise floor.
    pub fit: Option<LinearFit>,
}

/// Rows are kept in the fit while the signal exceeds this many standard
/// errors.
pub const NOISE_SIGMAS: f64 = 3.0;

/// Monte Carlo estimate of `⟨(f_μⁿ)_*δ_a, φ⟩ − ⟨ν, φ⟩` along forward
/// trajectories, one trajectory per trial, for `n = 1..=n_max`.
pub fn equidistribution_experiment<F>(
    mu: &MatrixMeasure,
    a: &ProjPoint,
    phi: F,
    reference: f64,
    n_max: usize,
    trials: usize,
    seed: u64,
) -> Result<EquidistReport>
where
    F: Fn(&ProjPoint) -> f64 + Sync,
{
    if let MatrixMeasure::Atomic(m) = mu {
        guard_elementary(m)?;
    }
    if trials < 2 {
        return Err(Error::InvalidArgument("need at least two trials".into()));
    }
    let paths: Vec<Vec<f64>> = par_trials(trials, seed, |rng: &mut StreamRng, _| {
        let mut x = *a;
        (0..n_max)
            .map(|_| {
                x = apply(&mu.draw(rng), &x);
                phi(&x)
            })
            .collect()
    });
    let nf = trials as f64;
    let rows: Vec<EquidistRow> = (0..n_max)
        .map(|k| {
            let mean = paths.iter().map(|p| p[k]).sum::<f64>() / nf;
            let var = paths.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            EquidistRow {
                n: k + 1,
                value: (mean - reference).abs(),
                stderr: (var / nf).sqrt(),
            }
        })
        .collect();
    let mut pts = Vec::new();
    for r in &rows {
        if r.value <= NOISE_SIGMAS * r.stderr {
            break;
        }
        pts.push((r.n as f64, r.value.ln()));
    }
    Ok(EquidistReport {
        rows,
        fit: linear_fit(&pts),
    })
}

/// `∥∂f∥` of the pull-back over `∥∂f∥`, a Sobolev-boundedness sample.
pub fn sobolev_ratio(op: &FunctionPullback, f: &GridFunction) -> Result<f64> {
    Ok(w12_norm(&op.apply(f)?, &W12Variant::FS)? / w12_norm(f, &W12Variant::FS)?)
}

/// `∥∂(f_μ* f)∥ / ∥∂f∥` computed through [`del`].
pub fn del_ratio(op: &FunctionPullback, f: &GridFunction) -> Result<f64> {
    Ok(l2_form_norm(&del(&op.apply(f)?)) / l2_form_norm(&del(f)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::fixture;
    use crate::mobius::{random_element, random_unitary, spherical_distance};
    use crate::sphere::{integrate, random_form};

    fn coarse() -> Arc<SphereGrid> {
        SphereGrid::new(48, 96).unwrap()
    }

    #[test]
    fn identity_pullbacks() {
        let g = coarse();
        let id = AtomicMeasure::dirac(GroupElement::IDENTITY);
        let mut rng = stream(1, 0);
        let f = SpherePoly::random(&mut rng, 3).sample(&g);
        let pf = pullback_function(&id, &f).unwrap();
        for (a, b) in pf.values.iter().zip(&f.values) {
            assert!((a - b).abs() < 1e-12);
        }
        let phi = random_form(&g, &mut rng, 3);
        let pphi = pullback_form(&id, &phi).unwrap();
        for (a, b) in pphi.coef.iter().zip(&phi.coef) {
            assert!((a - b).norm() < 1e-9 * (1.0 + b.norm()));
        }
    }

    #[test]
    fn markov_property() {
        let g = coarse();
        for name in crate::measures::FIXTURE_NAMES {
            let mu = fixture(name).unwrap();
            let one = pullback_function(&mu, &GridFunction::constant(&g, 2.5)).unwrap();
            assert!(one.values.iter().all(|v| (v - 2.5).abs() < 1e-12));
            let mut rng = stream(2, 0);
            let f = SpherePoly::random(&mut rng, 2).sample(&g);
            let pf = pullback_function(&mu, &f).unwrap();
            assert!(pf.min() >= f.min() - 1e-12);
        }
    }

    #[test]
    fn pullback_matches_composition() {
        let g = SphereGrid::default_mesh();
        let mut rng = stream(3, 0);
        let m = random_element(&mut rng, 0.4);
        let p = SpherePoly::random(&mut rng, 2);
        let f = p.sample(&g);
        let pf = pullback_function(&AtomicMeasure::dirac(m), &f).unwrap();
        let exact = GridFunction::from_fn(&g, |x| p.eval(&apply(&m, x)));
        let scale = f.sup_norm();
        let err = pf.values.iter().zip(&exact.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-4 * scale.max(1.0) * 10.0, "{err}");
        let l2: f64 = integrate(&pf.zip_with(&exact, |a, b| (a - b).powi(2)).unwrap()).sqrt();
        assert!(l2 < 1e-4 * scale.max(1.0), "{l2}");
    }

    #[test]
    fn unitary_pullback_preserves_form_norm() {
        let g = SphereGrid::default_mesh();
        let mut rng = stream(4, 0);
        let k = random_unitary(&mut rng);
        let phi = random_form(&g, &mut rng, 3);
        let pk = pullback_form(&AtomicMeasure::dirac(k), &phi).unwrap();
        let (a, b) = (l2_form_norm(&phi), l2_form_norm(&pk));
        assert!((a - b).abs() < 1e-4 * a, "{a} {b}");
    }

    #[test]
    fn pullback_of_del_is_del_of_pullback() {
        let g = SphereGrid::default_mesh();
        let mu = fixture("schottky2").unwrap();
        let mut rng = stream(5, 0);
        let p = SpherePoly::random(&mut rng, 2);
        let lhs = pullback_form(&mu, &p.del_form(&g)).unwrap();
        let rhs = del(&pullback_function(&mu, &p.sample(&g)).unwrap());
        let diff = lhs.axpy(Complex64::new(-1.0, 0.0), &rhs);
        assert!(l2_form_norm(&diff) < 2e-2 * l2_form_norm(&lhs));
    }

    #[test]
    fn batch_pullback_matches_single() {
        let g = coarse();
        let mu = fixture("parabolic_pair").unwrap();
        let mut rng = stream(6, 0);
        let forms: Vec<OneForm> = (0..3).map(|_| random_form(&g, &mut rng, 2)).collect();
        let batch = pullback_forms(&mu, &forms).unwrap();
        let op = FormPullback::new(&mu, &g);
        for (f, b) in forms.iter().zip(&batch) {
            let s = op.apply(f).unwrap();
            for (x, y) in s.coef.iter().zip(&b.coef) {
                assert!((x - y).norm() < 1e-10 * (1.0 + x.norm()));
            }
        }
    }

    #[test]
    fn pushforward_cases() {
        let x = ProjPoint::affine(Complex64::new(0.3, 0.1));
        let id: MatrixMeasure = AtomicMeasure::dirac(GroupElement::IDENTITY).into();
        let m = EmpiricalMeasure::dirac(x);
        let same = pushforward_empirical(&id, &m, PushMode::Exact).unwrap();
        assert!(spherical_distance(&same.points()[0].0, &x) < 1e-15);
        let mu = fixture("schottky2").unwrap();
        let pushed = pushforward_empirical(&mu.clone().into(), &m, PushMode::Exact).unwrap();
        assert_eq!(pushed.len(), 2);
        for ((p, w), (g, v)) in pushed.points().iter().zip(mu.atoms()) {
            assert!(spherical_distance(p, &apply(g, &x)) < 1e-15);
            assert_eq!(w, v);
        }
    }

    #[test]
    fn pushforward_and_pullback_are_dual() {
        let g = SphereGrid::default_mesh();
        let mu = fixture("schottky2").unwrap();
        let mut rng = stream(7, 0);
        let m = EmpiricalMeasure::uniform((0..50).map(|_| ProjPoint::random(&mut rng)).collect()).unwrap();
        let f = SpherePoly::random(&mut rng, 2).sample(&g);
        let lhs = pushforward_empirical(&mu.clone().into(), &m, PushMode::Exact).unwrap().pair(&f);
        let rhs = m.pair(&pullback_function(&mu, &f).unwrap());
        assert!((lhs - rhs).abs() < 1e-3 * f.sup_norm(), "{lhs} {rhs}");
    }

    #[test]
    fn resampling_keeps_means() {
        let mut rng = stream(8, 0);
        let pts: Vec<(ProjPoint, f64)> = (0..5000).map(|k| (ProjPoint::random(&mut rng), 1.0 + (k % 7) as f64)).collect();
        let m = EmpiricalMeasure::new(pts).unwrap();
        let r = m.resample(1000, &mut rng);
        assert_eq!(r.len(), 1000);
        let z = |p: &ProjPoint| p.to_sphere()[2];
        assert!((m.pair_fn(z) - r.pair_fn(z)).abs() < 0.05);
    }

    #[test]
    fn unitary_gap_is_one() {
        let g = SphereGrid::default_mesh();
        let mut rng = stream(9, 0);
        let k = random_unitary(&mut rng);
        let est = gap_estimate_with(&AtomicMeasure::dirac(k), 2, 40, 1, &g, 4).unwrap();
        assert!((est.norm_estimate - 1.0).abs() < 1e-3, "{est:?}");
        assert_eq!(est.dimension, 24);
    }

    #[test]
    fn two_step_gap_is_submultiplicative() {
        // the trial space is not invariant, so only the first step is checked
        let g = SphereGrid::default_mesh();
        let mu = fixture("schottky2").unwrap();
        let one = gap_estimate_with(&mu, 1, GAP_ITERS, 3, &g, 4).unwrap().norm_estimate;
        let two = gap_estimate_with(&mu, 2, GAP_ITERS, 3, &g, 4).unwrap().norm_estimate;
        assert!(one <= 1.0 + 2e-3);
        assert!(two <= one * one + 1e-3, "{one} {two}");
    }

    #[test]
    fn experiments_refuse_elementary_measures() {
        let g = coarse();
        let mu = fixture("elementary_diag").unwrap();
        let h = GridFunction::constant(&g, 1.0);
        assert!(matches!(iterate_pullback_experiment(&mu, &h, 3), Err(Error::ElementaryMeasure(_))));
        let r = equidistribution_experiment(&mu.into(), &ProjPoint::ZERO, |_| 0.0, 0.0, 3, 10, 0);
        assert!(matches!(r, Err(Error::ElementaryMeasure(_))));
    }

    #[test]
    fn constant_observables_do_not_move() {
        let g = coarse();
        let mu = fixture("schottky2").unwrap();
        let rep = iterate_pullback_experiment(&mu, &GridFunction::constant(&g, 0.7), 4).unwrap();
        assert!(rep.rows.iter().all(|r| r.w12_distance < 1e-12 && r.sup_distance < 1e-12));
        let eq = equidistribution_experiment(&mu.into(), &ProjPoint::ZERO, |_| 0.7, 0.7, 5, 100, 3).unwrap();
        assert!(eq.rows.iter().all(|r| r.value < 1e-12));
    }
}
