//! Regularity of the stationary measure: disc masses, Hölder and
//! log-Hölder fits, the capacity profile `V_ε(r)` and an exponential
//! integrability probe.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobius::{spherical_distance, ProjPoint};
use crate::sphere::{bump_u, luxemburg_norm, GridFunction, SphereGrid, YoungFunction};
use crate::stats::linear_fit;
use crate::transfer::EmpiricalMeasure;

/// Smallest expected point count in the smallest disc of a fit.
pub const MIN_COUNT: f64 = 30.0;
/// Smallest worst-center count kept by [`radius_grid`].
pub const GRID_COUNT: f64 = 300.0;
/// Well-spread centers used by [`default_centers`].
pub const SPREAD_CENTERS: usize = 64;
/// Heaviest cluster modes added by [`default_centers`].
pub const MODE_CENTERS: usize = 16;
/// Largest radius of the default radius grid.
pub const R_MAX: f64 = 0.25;
/// Relative spread allowed between centers in [`v_eps`].
pub const CENTER_SPREAD: f64 = 1e-3;
/// Doublings tried by [`exp_integrability_probe`].
pub const THETA_DOUBLINGS: u32 = 60;

/// `ν(𝔻(a, r))`: weight of the points at chordal distance at most `r`.
pub fn disc_mass(nu: &EmpiricalMeasure, a: &ProjPoint, r: f64) -> f64 {
    nu.pair_fn(|x| if spherical_distance(x, a) <= r { 1.0 } else { 0.0 })
}

/// `n` points of a Fibonacci lattice on the sphere.
pub fn fibonacci_centers(n: usize) -> Vec<ProjPoint> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let z = 1.0 - (2 * k + 1) as f64 / n as f64;
            let s = (1.0 - z * z).sqrt();
            let phi = golden * k as f64;
            ProjPoint::from_sphere([s * phi.cos(), s * phi.sin(), z])
        })
        .collect()
}

/// Centroids of the `k` heaviest cells of a 64 × 128 latitude–longitude
/// binning of the support.
pub fn heaviest_modes(nu: &EmpiricalMeasure, k: usize) -> Vec<ProjPoint> {
    const BANDS: usize = 64;
    const SECTORS: usize = 128;
    let mut mass = vec![0.0; BANDS * SECTORS];
    let mut sum = vec![[0.0; 3]; BANDS * SECTORS];
    for (p, w) in nu.points() {
        let x = p.to_sphere();
        let band = (((x[2] + 1.0) / 2.0 * BANDS as f64) as usize).min(BANDS - 1);
        let angle = x[1].atan2(x[0]) + std::f64::consts::PI;
        let sector = ((angle / std::f64::consts::TAU * SECTORS as f64) as usize).min(SECTORS - 1);
        let cell = band * SECTORS + sector;
        mass[cell] += w;
        for d in 0..3 {
            sum[cell][d] += w * x[d];
        }
    }
    let mut order: Vec<usize> = (0..mass.len()).filter(|&c| mass[c] > 0.0).collect();
    order.sort_by(|a, b| mass[*b].total_cmp(&mass[*a]).then(a.cmp(b)));
    order
        .into_iter()
        .take(k)
        .map(|c| {
            let s = sum[c];
            let n = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
            ProjPoint::from_sphere([s[0] / n, s[1] / n, s[2] / n])
        })
        .collect()
}

/// 64 Fibonacci centers plus the 16 heaviest modes of `nu`.
pub fn default_centers(nu: &EmpiricalMeasure) -> Vec<ProjPoint> {
    let mut c = fibonacci_centers(SPREAD_CENTERS);
    c.extend(heaviest_modes(nu, MODE_CENTERS));
    c
}

/// `masses[c][k] = ν(𝔻(centers[c], radii[k]))`, one pass over the support
/// per center.
pub fn disc_masses(nu: &EmpiricalMeasure, centers: &[ProjPoint], radii: &[f64]) -> Vec<Vec<f64>> {
    let mut order: Vec<usize> = (0..radii.len()).collect();
    order.sort_by(|a, b| radii[*b].total_cmp(&radii[*a]));
    centers
        .par_iter()
        .map(|a| {
            // bucket[j]: weight inside exactly the j largest discs
            let mut bucket = vec![0.0; radii.len() + 1];
            for (x, w) in nu.points() {
                let d = spherical_distance(x, a);
                let j = order.iter().take_while(|&&k| d <= radii[k]).count();
                bucket[j] += w;
            }
            let mut out = vec![0.0; radii.len()];
            let mut acc = 0.0;
            for j in (1..=radii.len()).rev() {
                acc += bucket[j];
                out[order[j - 1]] = acc;
            }
            out
        })
        .collect()
}

fn count_of(nu: &EmpiricalMeasure, mass: f64) -> f64 {
    mass * nu.len() as f64
}

/// Radii `2⁻², 2⁻³, …` down to the last one whose worst-center disc still
/// holds [`GRID_COUNT`] points. The maximum over many centers of small
/// Poisson counts is biased upwards, which flattens the fitted exponent, so
/// the default grid stops well above the [`MIN_COUNT`] floor.
pub fn radius_grid(nu: &EmpiricalMeasure, centers: &[ProjPoint]) -> Vec<f64> {
    let candidates: Vec<f64> = (0..40).map(|k| R_MAX * 0.5f64.powi(k)).collect();
    let masses = disc_masses(nu, centers, &candidates);
    let mut out = Vec::new();
    for (k, r) in candidates.iter().enumerate() {
        let worst = masses.iter().map(|m| m[k]).fold(0.0, f64::max);
        if count_of(nu, worst) < GRID_COUNT {
            break;
        }
        out.push(*r);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegularityModel {
    /// `ν(𝔻(a,r)) ≤ c r^α`.
    PowerLaw,
    /// `ν(𝔻(a,r)) ≤ c |log r|^{−α}`.
    LogPower,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityFit {
    pub model: RegularityModel,
    pub alpha_hat: f64,
    pub c_hat: f64,
    pub r_grid: Vec<f64>,
    /// Largest disc mass over the centers, per radius.
    pub worst_center_masses: Vec<f64>,
    pub r_squared: f64,
}

impl RegularityFit {
    /// A usable fit: positive exponent with `R² > 0.9`.
    pub fn accepted(&self) -> bool {
        self.alpha_hat > 0.0 && self.r_squared > 0.9
    }

    /// `r, worst mass` rows under a header.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "r,worst_mass")?;
        for (r, m) in self.r_grid.iter().zip(&self.worst_center_masses) {
            writeln!(out, "{r:e},{m:e}")?;
        }
        Ok(())
    }
}

/// Least-squares fit of the worst-center disc mass against the radius.
pub fn regularity_fit(nu: &EmpiricalMeasure, centers: &[ProjPoint], radii: &[f64], model: RegularityModel) -> Result<RegularityFit> {
    if radii.len() < 2 || centers.is_empty() {
        return Err(Error::InvalidArgument("need two radii and a center".into()));
    }
    if radii.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
        return Err(Error::InvalidArgument("radii must lie in (0, 1)".into()));
    }
    let masses = disc_masses(nu, centers, radii);
    let worst: Vec<f64> = (0..radii.len())
        .map(|k| masses.iter().map(|m| m[k]).fold(0.0, f64::max))
        .collect();
    let (k_min, r_min) = radii
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, r)| (k, *r))
        .expect("nonempty");
    let count = count_of(nu, worst[k_min]);
    if count < MIN_COUNT {
        return Err(Error::Underresolved(format!(
            "expected count {count:.1} in the disc of radius {r_min:e} is below {MIN_COUNT}"
        )));
    }
    let x = |r: f64| match model {
        RegularityModel::PowerLaw => r.ln(),
        RegularityModel::LogPower => (-r.ln()).ln(),
    };
    let pts: Vec<(f64, f64)> = radii.iter().zip(&worst).map(|(r, m)| (x(*r), m.ln())).collect();
    let fit = linear_fit(&pts).ok_or_else(|| Error::InvalidArgument("degenerate radius grid".into()))?;
    let alpha_hat = match model {
        RegularityModel::PowerLaw => fit.slope,
        RegularityModel::LogPower => -fit.slope,
    };
    Ok(RegularityFit {
        model,
        alpha_hat,
        c_hat: fit.intercept.exp(),
        r_grid: radii.to_vec(),
        worst_center_masses: worst,
        r_squared: fit.r_squared,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VEps {
    pub r: f64,
    /// `∥u^ε_{a,r}∥_Φ` at the canonical center `[0:1]`.
    pub value: f64,
    /// Relative spread over the spot-check centers, when they resolve `r`.
    pub spread: Option<f64>,
}

/// Spot-check centers for [`v_eps`], inside the finely meshed part of the
/// first chart.
pub fn spot_centers() -> [ProjPoint; 3] {
    [
        ProjPoint::affine(Complex64::new(0.25, 0.0)),
        ProjPoint::affine(Complex64::new(0.0, 0.3)),
        ProjPoint::affine(Complex64::new(-0.2, -0.2)),
    ]
}

/// `V_ε(r) = max_a ∥u^ε_{a,r}∥_Φ`, evaluated at `[0:1]` since the norm does
/// not depend on `a`; the independence is spot-checked at
/// [`spot_centers`] whenever the mesh resolves `r` there.
pub fn v_eps(r: f64, eps: f64, phi: &YoungFunction, grid: &Arc<SphereGrid>) -> Result<VEps> {
    let value = luxemburg_norm(&bump_u(grid, &ProjPoint::ZERO, r, eps)?, phi)?;
    let mut spot = Vec::new();
    for a in spot_centers() {
        match bump_u(grid, &a, r, eps) {
            Ok(u) => spot.push(luxemburg_norm(&u, phi)?),
            Err(Error::UnresolvedRadius { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let spread = (!spot.is_empty()).then(|| spot.iter().map(|v| (v - value).abs() / value).fold(0.0, f64::max));
    Ok(VEps { r, value, spread })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpProbe {
    pub theta: f64,
    /// `max_φ ⟨ν, e^{θφ²}⟩`.
    pub a_value: f64,
    /// Largest `θ·2ᵏ` for which the integrals stay finite.
    pub max_stable_theta: f64,
}

/// `max_φ ∫ e^{θφ²} dν` over the family, and a doubling search for the
/// largest `θ` keeping every integral finite. A weighted mean of finite
/// terms is finite, so the search only needs `max φ²` on the support.
pub fn exp_integrability_probe(nu: &EmpiricalMeasure, family: &[GridFunction], theta: f64) -> Result<ExpProbe> {
    if !(theta > 0.0) {
        return Err(Error::InvalidArgument("theta must be positive".into()));
    }
    let mut a_value = 0.0f64;
    let mut peak = 0.0f64;
    for f in family {
        let vals: Vec<f64> = nu.points().par_iter().map(|(x, _)| f.eval(x).powi(2)).collect();
        let integral: f64 = vals.iter().zip(nu.points()).map(|(v, (_, w))| w * (theta * v).exp()).sum();
        a_value = a_value.max(integral);
        peak = vals.iter().fold(peak, |m, v| m.max(*v));
    }
    if !a_value.is_finite() {
        return Err(Error::Overflow);
    }
    let finite = |t: f64| (t * peak).exp().is_finite();
    let mut max_stable_theta = theta;
    for _ in 0..THETA_DOUBLINGS {
        if !finite(2.0 * max_stable_theta) {
            break;
        }
        max_stable_theta *= 2.0;
    }
    Ok(ExpProbe {
        theta,
        a_value,
        max_stable_theta,
    })
}
