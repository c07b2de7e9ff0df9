//! Support detection, singularity classification and shape diagnostics.

use crate::dyson::{DensityProfile, DysonSolver, SolverOptions, StieltjesSolution};
use crate::linalg;
use crate::model::{ModelSpec, SecondMoment};
use crate::optim::{bisect_predicate, log_log_slope, logspace, scan_then_golden};
use crate::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Anything that can report a density value at an energy.
pub trait DensityFn: Sync {
    fn density_at(&self, tau: f64) -> Result<f64>;
}

impl DensityFn for DensityProfile {
    fn density_at(&self, tau: f64) -> Result<f64> {
        Ok(self.interpolate(tau))
    }
}

/// Extrapolated model density at a fixed evaluation `eta`.
pub struct ModelDensity<'a> {
    pub solver: &'a DysonSolver,
    pub eta: f64,
}

impl DensityFn for ModelDensity<'_> {
    fn density_at(&self, tau: f64) -> Result<f64> {
        self.solver.density(tau, self.eta)
    }
}

impl<F: Fn(f64) -> Result<f64> + Sync> DensityFn for F {
    fn density_at(&self, tau: f64) -> Result<f64> {
        self(tau)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportMap {
    pub intervals: Vec<(f64, f64)>,
    pub gaps: Vec<(f64, f64)>,
}

impl SupportMap {
    pub fn contains(&self, tau: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| a <= tau && tau <= b)
    }

    pub fn hull(&self) -> (f64, f64) {
        (
            self.intervals[0].0,
            self.intervals[self.intervals.len() - 1].1,
        )
    }

    /// Distance from `tau` to the support.
    pub fn distance(&self, tau: f64) -> f64 {
        self.intervals
            .iter()
            .map(|&(a, b)| {
                if tau < a {
                    a - tau
                } else if tau > b {
                    tau - b
                } else {
                    0.0
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// The maximal open interval of the complement containing `tau`, if any.
    pub fn complement_interval(&self, tau: f64) -> Option<(f64, f64)> {
        if self.contains(tau) {
            return None;
        }
        let (lo, hi) = self.hull();
        if tau < lo {
            return Some((f64::NEG_INFINITY, lo));
        }
        if tau > hi {
            return Some((hi, f64::INFINITY));
        }
        self.gaps.iter().copied().find(|&(a, b)| a < tau && tau < b)
    }
}

/// Support components of `profile` above `threshold`, with endpoints refined
/// on the profile's own interpolant.
pub fn find_support(profile: &DensityProfile, threshold: f64) -> Result<SupportMap> {
    find_support_with(profile, threshold, profile)
}

/// As [`find_support`], refining endpoints by bisection on `density`.
pub fn find_support_with(
    profile: &DensityProfile,
    threshold: f64,
    density: &dyn DensityFn,
) -> Result<SupportMap> {
    let max = profile.max_density();
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter(
            "support threshold must be positive".into(),
        ));
    }
    if threshold >= max {
        return Err(Error::EmptySupport { threshold, max });
    }
    let g = &profile.grid;
    let r = &profile.rho;
    let above = |i: usize| r[i] > threshold;
    let refine = |lo: f64, hi: f64, rising: bool| -> Result<f64> {
        // predicate false at lo, true at hi
        if rising {
            bisect_predicate(|t| Ok(density.density_at(t)? > threshold), lo, hi, 1e-8)
        } else {
            bisect_predicate(|t| Ok(density.density_at(t)? <= threshold), lo, hi, 1e-8)
        }
    };
    let mut intervals = Vec::new();
    let mut start: Option<f64> = if above(0) { Some(g[0]) } else { None };
    for i in 1..g.len() {
        match (above(i - 1), above(i)) {
            (false, true) => start = Some(refine(g[i - 1], g[i], true).unwrap_or(g[i])),
            (true, false) => {
                let end = refine(g[i - 1], g[i], false).unwrap_or(g[i - 1]);
                intervals.push((start.take().unwrap_or(g[0]), end));
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        intervals.push((s, g[g.len() - 1]));
    }
    let gaps = intervals.windows(2).map(|w| (w[0].1, w[1].0)).collect();
    Ok(SupportMap { intervals, gaps })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SingularityKind {
    Edge,
    Cusp,
    Minimum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularityReport {
    pub kind: SingularityKind,
    pub location: f64,
    /// Gap length for edges, zero otherwise.
    pub gap: f64,
    /// Density at the minimum for minima, zero otherwise.
    pub rho_min: f64,
    pub gamma: f64,
    pub base_point: f64,
    pub t_rho: f64,
    pub fit_residual: f64,
    /// Log-log slope of the density next to the singular point.
    pub exponent: f64,
    /// Both edges for gaps.
    pub edges: Option<(f64, f64)>,
    /// Sampled `(x, observed, fitted)` triples used in the fit.
    #[serde(skip)]
    pub fit_samples: Vec<(f64, f64, f64)>,
}

/// Knobs of [`classify`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    /// Search radius around `near`.
    pub kappa: f64,
    /// Evaluation `eta` for the fits (the smaller of this and the profile's).
    pub fit_eta: f64,
    /// Largest accepted relative L² misfit.
    pub acceptance: f64,
    /// Samples per side of the fit window.
    pub samples: usize,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            kappa: 0.1,
            fit_eta: 1e-12,
            acceptance: 0.25,
            samples: 24,
        }
    }
}

/// Largest density at an interior minimum still called a cusp.
pub fn cusp_threshold(eta_eval: f64) -> f64 {
    10.0 * eta_eval.cbrt()
}

/// Edge shape function.
pub fn psi_edge(lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!(
            "psi_edge needs lambda >= 0, got {lambda}"
        )));
    }
    Ok(psi_edge_unchecked(lambda))
}

pub(crate) fn psi_edge_unchecked(lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    // 1 + 2λ ± 2√(λ(1+λ)) = p^{±2} with p = √(1+λ) + √λ
    let p = (1.0 + lambda).sqrt() + lambda.sqrt();
    let q = p.powf(4.0 / 3.0);
    (lambda * (1.0 + lambda)).sqrt() / (q + 1.0 / q + 1.0)
}

/// Shape function at a local minimum; even in `lambda`.
pub fn psi_min(lambda: f64) -> f64 {
    let l = lambda.abs();
    let r = (1.0 + l * l).sqrt();
    let sh = (l.asinh() / 3.0).sinh();
    let spread = 4.0 * sh * sh;
    (l * l / (r + 1.0) - spread) / (spread + 1.0)
}

/// Cusp law `√3 γ^{4/3} x^{1/3} / (2π)`.
pub fn cusp_law(gamma: f64, x: f64) -> f64 {
    3f64.sqrt() * gamma.powf(4.0 / 3.0) * x.abs().cbrt() / (2.0 * PI)
}

/// Edge law `√3 (2γ)^{4/3} Δ^{1/3} Ψ_edge(x/Δ) / (2π)` for `x >= 0` outside the gap.
pub fn edge_law(gamma: f64, gap: f64, x: f64) -> f64 {
    3f64.sqrt() * (2.0 * gamma).powf(4.0 / 3.0) * gap.cbrt() * psi_edge_unchecked(x / gap)
        / (2.0 * PI)
}

/// Minimum law `ρ_m + ρ_m Ψ_min(3√3 γ^4 x / (2 (π ρ_m)^3))`.
pub fn minimum_law(gamma: f64, rho_min: f64, x: f64) -> f64 {
    rho_min
        + rho_min * psi_min(3.0 * 3f64.sqrt() * gamma.powi(4) * x / (2.0 * (PI * rho_min).powi(3)))
}

/// Classifies the singularity of `model` nearest to `near`.
pub fn classify(
    model: &ModelSpec,
    profile: &DensityProfile,
    support: &SupportMap,
    near: f64,
) -> Result<SingularityReport> {
    let solver = DysonSolver::new(model, SolverOptions::default());
    classify_with(&solver, profile, support, near, ClassifyOptions::default())
}

pub fn classify_with(
    solver: &DysonSolver,
    profile: &DensityProfile,
    support: &SupportMap,
    near: f64,
    opts: ClassifyOptions,
) -> Result<SingularityReport> {
    let eta = opts.fit_eta.min(profile.eta_eval);
    let dens = |t: f64| solver.density(t, eta);
    let threshold = cusp_threshold(profile.eta_eval);
    let gap_floor = threshold.powi(3);
    let kappa = opts.kappa;
    if support.intervals.is_empty() {
        return Err(Error::Unclassifiable("empty support".into()));
    }

    let internal = support
        .gaps
        .iter()
        .copied()
        .filter(|&(a, b)| b - a > gap_floor)
        .map(|(a, b)| {
            let d = if near < a {
                a - near
            } else if near > b {
                near - b
            } else {
                0.0
            };
            (d, (a, b))
        })
        .filter(|&(d, _)| d <= kappa)
        .min_by(|x, y| x.0.total_cmp(&y.0));
    if let Some((_, gap)) = internal {
        let (lo, hi) = refine_gap(&dens, gap, kappa)?;
        return finish(
            edge_report(&dens, solver, (lo, hi), near, support, opts)?,
            opts,
        );
    }

    let (s_lo, s_hi) = support.hull();
    if near >= s_hi - kappa || near <= s_lo + kappa {
        let right = (near - s_hi).abs() <= (near - s_lo).abs();
        return finish(
            exterior_edge_report(&dens, support, right, kappa, opts)?,
            opts,
        );
    }

    let lo = (near - kappa).max(s_lo);
    let hi = (near + kappa).min(s_hi);
    let (xm, rm) = scan_then_golden(dens, lo, hi, 81, 1e-14)?;
    if rm <= 1e-10 {
        // the minimum sits in a gap the support map did not resolve
        let (a, b) = refine_gap(&dens, (xm, xm), kappa)?;
        if b - a > gap_floor {
            return finish(
                edge_report(&dens, solver, (a, b), near, support, opts)?,
                opts,
            );
        }
    }
    if rm < threshold {
        finish(cusp_report(&dens, profile, xm, opts)?, opts)
    } else {
        finish(minimum_report(&dens, xm, rm, opts)?, opts)
    }
}

fn finish(report: SingularityReport, opts: ClassifyOptions) -> Result<SingularityReport> {
    if !(report.fit_residual <= opts.acceptance) || !(report.gamma > 0.0) {
        let json = serde_json::to_string(&report).unwrap_or_default();
        return Err(Error::Unclassifiable(format!(
            "fit residual {:.3e} exceeds {:.3e}; report {json}",
            report.fit_residual, opts.acceptance
        )));
    }
    Ok(report)
}

const EDGE_LEVEL: f64 = 1e-10;

/// Expands a zero-density interval to the points where the density rises above a tiny level.
fn refine_gap(
    dens: &dyn Fn(f64) -> Result<f64>,
    gap: (f64, f64),
    kappa: f64,
) -> Result<(f64, f64)> {
    let mid = 0.5 * (gap.0 + gap.1);
    if dens(mid)? > EDGE_LEVEL {
        return Ok(gap);
    }
    let width = (gap.1 - gap.0).max(1e-12);
    let mut reach = (2.0 * width).min(kappa).max(1e-12);
    let mut left = mid - reach;
    while dens(left)? <= EDGE_LEVEL {
        reach *= 2.0;
        if reach > 4.0 * kappa {
            return Err(Error::Unclassifiable(
                "gap extends beyond the search radius".into(),
            ));
        }
        left = mid - reach;
    }
    let mut reach_r = (2.0 * width).min(kappa).max(1e-12);
    let mut right = mid + reach_r;
    while dens(right)? <= EDGE_LEVEL {
        reach_r *= 2.0;
        if reach_r > 4.0 * kappa {
            return Err(Error::Unclassifiable(
                "gap extends beyond the search radius".into(),
            ));
        }
        right = mid + reach_r;
    }
    let tol = (1e-12 * width).max(1e-16);
    let lo = bisect_predicate(|t| Ok(dens(t)? <= EDGE_LEVEL), left, mid, tol)?;
    let hi = bisect_predicate(|t| Ok(dens(t)? > EDGE_LEVEL), mid, right, tol)?;
    Ok((lo, hi))
}

/// Least-squares prefactor `A` minimising `Σ (A f_j / ρ_j - 1)^2`, and the misfit.
fn prefactor_fit(shape: &[f64], observed: &[f64]) -> (f64, f64) {
    let ratios: Vec<f64> = shape.iter().zip(observed).map(|(f, r)| f / r).collect();
    let a = ratios.iter().sum::<f64>() / ratios.iter().map(|x| x * x).sum::<f64>();
    let misfit =
        (ratios.iter().map(|x| (a * x - 1.0).powi(2)).sum::<f64>() / ratios.len() as f64).sqrt();
    (a, misfit)
}

fn edge_report(
    dens: &dyn Fn(f64) -> Result<f64>,
    _solver: &DysonSolver,
    (lo, hi): (f64, f64),
    near: f64,
    support: &SupportMap,
    opts: ClassifyOptions,
) -> Result<SingularityReport> {
    let gap = hi - lo;
    let reach_left = support
        .intervals
        .iter()
        .filter(|i| i.1 <= lo + 1e-6)
        .map(|i| lo - i.0)
        .fold(0.0, f64::max);
    let reach_right = support
        .intervals
        .iter()
        .filter(|i| i.0 >= hi - 1e-6)
        .map(|i| i.1 - hi)
        .fold(0.0, f64::max);
    let cap_l = if reach_left > 0.0 {
        0.5 * reach_left
    } else {
        10.0 * gap
    };
    let cap_r = if reach_right > 0.0 {
        0.5 * reach_right
    } else {
        10.0 * gap
    };
    let lambdas = logspace(0.1, 10.0, opts.samples);
    let mut shape = Vec::new();
    let mut obs = Vec::new();
    let mut xs = Vec::new();
    for &l in &lambdas {
        let x = l * gap;
        if x <= cap_l {
            shape.push(psi_edge_unchecked(l));
            obs.push(dens(lo - x)?);
            xs.push(lo - x);
        }
        if x <= cap_r {
            shape.push(psi_edge_unchecked(l));
            obs.push(dens(hi + x)?);
            xs.push(hi + x);
        }
    }
    if obs.len() < 4 || obs.iter().any(|&r| r <= 0.0) {
        return Err(Error::Unclassifiable(
            "edge fit window has no usable samples".into(),
        ));
    }
    let (a, misfit) = prefactor_fit(&shape, &obs);
    let gamma = edge_gamma(a, gap);
    let small = logspace(1e-4 * gap, 1e-2 * gap, 8);
    let side: Vec<f64> = small.iter().map(|&x| dens(hi + x)).collect::<Result<_>>()?;
    let exponent = if side.iter().all(|&v| v > 0.0) {
        log_log_slope(&small, &side)
    } else {
        f64::NAN
    };
    let location = if near >= 0.5 * (lo + hi) { hi } else { lo };
    let fit_samples = xs
        .iter()
        .zip(&obs)
        .zip(&shape)
        .map(|((x, o), f)| (*x, *o, a * f))
        .collect();
    Ok(SingularityReport {
        kind: SingularityKind::Edge,
        location,
        gap,
        rho_min: 0.0,
        gamma,
        base_point: 0.5 * (lo + hi),
        t_rho: 3.0 * gap.powf(2.0 / 3.0) / (2.0 * gamma).powf(4.0 / 3.0),
        fit_residual: misfit,
        exponent,
        edges: Some((lo, hi)),
        fit_samples,
    })
}

fn edge_gamma(prefactor_of_psi: f64, gap: f64) -> f64 {
    // A = √3 (2γ)^{4/3} Δ^{1/3} / (2π)
    let two_gamma_43 = prefactor_of_psi * 2.0 * PI / (3f64.sqrt() * gap.cbrt());
    0.5 * two_gamma_43.powf(0.75)
}

fn exterior_edge_report(
    dens: &dyn Fn(f64) -> Result<f64>,
    support: &SupportMap,
    right: bool,
    kappa: f64,
    opts: ClassifyOptions,
) -> Result<SingularityReport> {
    let (comp, e0) = if right {
        let c = support.intervals[support.intervals.len() - 1];
        (c, c.1)
    } else {
        let c = support.intervals[0];
        (c, c.0)
    };
    let width = comp.1 - comp.0;
    let inside = (0.05 * width).min(kappa);
    let edge = if right {
        bisect_predicate(
            |t| Ok(dens(t)? <= EDGE_LEVEL),
            e0 - inside,
            e0 + kappa,
            1e-15,
        )?
    } else {
        bisect_predicate(
            |t| Ok(dens(t)? > EDGE_LEVEL),
            e0 - kappa,
            e0 + inside,
            1e-15,
        )?
    };
    // a gap to infinity is capped at unit length, as in the fluctuation scale
    let gap = 1.0;
    let lambdas = logspace(1e-4, 1e-2 * width.min(1.0), opts.samples);
    let mut shape = Vec::new();
    let mut obs = Vec::new();
    let mut xs = Vec::new();
    for &l in &lambdas {
        let x = l * gap;
        let t = if right { edge - x } else { edge + x };
        shape.push(psi_edge_unchecked(l));
        obs.push(dens(t)?);
        xs.push(t);
    }
    if obs.iter().any(|&r| r <= 0.0) {
        return Err(Error::Unclassifiable(
            "edge fit window has no usable samples".into(),
        ));
    }
    let (a, misfit) = prefactor_fit(&shape, &obs);
    let gamma = edge_gamma(a, gap);
    let exponent = log_log_slope(&lambdas, &obs);
    let fit_samples = xs
        .iter()
        .zip(&obs)
        .zip(&shape)
        .map(|((x, o), f)| (*x, *o, a * f))
        .collect();
    Ok(SingularityReport {
        kind: SingularityKind::Edge,
        location: edge,
        gap,
        rho_min: 0.0,
        gamma,
        base_point: edge,
        t_rho: 3.0 * gap.powf(2.0 / 3.0) / (2.0 * gamma).powf(4.0 / 3.0),
        fit_residual: misfit,
        exponent,
        edges: None,
        fit_samples,
    })
}

fn cusp_report(
    dens: &dyn Fn(f64) -> Result<f64>,
    profile: &DensityProfile,
    location: f64,
    opts: ClassifyOptions,
) -> Result<SingularityReport> {
    let spacing = profile.spacing_near(location);
    let x_lo = (10.0 * spacing)
        .min(1e-4)
        .max(1e3 * opts.fit_eta.min(profile.eta_eval));
    let x_hi = 1e-2;
    let xs = logspace(x_lo, x_hi, opts.samples);
    let mut shape = Vec::new();
    let mut obs = Vec::new();
    let mut pts = Vec::new();
    let mut avg = Vec::new();
    for &x in &xs {
        let l = dens(location - x)?;
        let r = dens(location + x)?;
        for (t, v) in [(location - x, l), (location + x, r)] {
            shape.push(x.cbrt());
            obs.push(v);
            pts.push(t);
        }
        avg.push(0.5 * (l + r));
    }
    if obs.iter().any(|&r| r <= 0.0) {
        return Err(Error::Unclassifiable(
            "cusp fit window contains zero density".into(),
        ));
    }
    let (a, misfit) = prefactor_fit(&shape, &obs);
    let gamma = (2.0 * PI * a / 3f64.sqrt()).powf(0.75);
    let exponent = log_log_slope(&xs, &avg);
    let fit_samples = pts
        .iter()
        .zip(&obs)
        .zip(&shape)
        .map(|((x, o), f)| (*x, *o, a * f))
        .collect();
    Ok(SingularityReport {
        kind: SingularityKind::Cusp,
        location,
        gap: 0.0,
        rho_min: 0.0,
        gamma,
        base_point: location,
        t_rho: 0.0,
        fit_residual: misfit,
        exponent,
        edges: None,
        fit_samples,
    })
}

fn minimum_report(
    dens: &dyn Fn(f64) -> Result<f64>,
    location: f64,
    rho_min: f64,
    opts: ClassifyOptions,
) -> Result<SingularityReport> {
    let scale = rho_min.powi(3);
    let xs = logspace(0.1 * scale, 10.0 * scale, opts.samples);
    let mut pts = Vec::new();
    let mut excess = Vec::new();
    for &x in &xs {
        for t in [location - x, location + x] {
            pts.push((t - location, t));
            excess.push(dens(t)? - rho_min);
        }
    }
    if excess.iter().any(|&e| e <= 0.0) {
        return Err(Error::Unclassifiable(
            "minimum fit window is not above the minimum".into(),
        ));
    }
    let misfit_for = |g: f64| -> f64 {
        let s: f64 = pts
            .iter()
            .zip(&excess)
            .map(|(&(x, _), &e)| ((minimum_law(g, rho_min, x) - rho_min) / e - 1.0).powi(2))
            .sum();
        (s / excess.len() as f64).sqrt()
    };
    let (lg, misfit) = scan_then_golden(
        |lg: f64| Ok(misfit_for(lg.exp())),
        (1e-3f64).ln(),
        (1e3f64).ln(),
        121,
        1e-10,
    )?;
    let gamma = lg.exp();
    let fit_samples = pts
        .iter()
        .zip(&excess)
        .map(|(&(x, t), &e)| (t, e + rho_min, minimum_law(gamma, rho_min, x)))
        .collect();
    let right: Vec<f64> = excess.iter().skip(1).step_by(2).copied().collect();
    let exponent = log_log_slope(&xs, &right);
    Ok(SingularityReport {
        kind: SingularityKind::Minimum,
        location,
        gap: 0.0,
        rho_min,
        gamma,
        base_point: location,
        t_rho: -PI * PI * rho_min * rho_min / gamma.powi(4),
        fit_residual: misfit,
        exponent,
        edges: None,
        fit_samples,
    })
}

/// Cusp diagnostics `f = Im m / (ρ |m|)`, `p = sgn Re m`, `σ = <p f^3>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaDiagnostics {
    pub f: Vec<f64>,
    pub p: Vec<i8>,
    pub sigma: f64,
}

pub fn compute_sigma(sol: &StieltjesSolution) -> Result<SigmaDiagnostics> {
    let rho = sol.density();
    if !(rho > 1e-14) {
        return Err(Error::Domain(format!(
            "density {rho:.3e} too small for the cusp diagnostic"
        )));
    }
    let f: Vec<f64> = sol.m.iter().map(|m| m.im / (rho * m.norm())).collect();
    let p: Vec<i8> = sol
        .m
        .iter()
        .map(|m| {
            if m.re > 0.0 {
                1
            } else if m.re < 0.0 {
                -1
            } else {
                0
            }
        })
        .collect();
    let sigma = f
        .iter()
        .zip(&p)
        .map(|(f, &p)| p as f64 * f.powi(3))
        .sum::<f64>()
        / f.len() as f64;
    Ok(SigmaDiagnostics { f, p, sigma })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Bulk,
    CuspOrMinimum,
    EdgeInsideGap,
    EdgeSmallGap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuationScale {
    pub eta_f: f64,
    pub regime: Regime,
}

/// Fluctuation scale inside a gap of (capped) length `delta`.
pub fn eta_f_in_gap(delta: f64, n: usize) -> FluctuationScale {
    let nf = n as f64;
    let floor = nf.powf(-0.75);
    let delta = delta.min(1.0);
    if delta > floor {
        FluctuationScale {
            eta_f: delta.powf(1.0 / 9.0) / nf.powf(2.0 / 3.0),
            regime: Regime::EdgeInsideGap,
        }
    } else {
        FluctuationScale {
            eta_f: floor,
            regime: Regime::EdgeSmallGap,
        }
    }
}

/// Fluctuation scale at `tau` for dimension `n`.
pub fn compute_eta_f(
    profile: &DensityProfile,
    support: &SupportMap,
    tau: f64,
    n: usize,
) -> Result<FluctuationScale> {
    let (lo, hi) = profile.window();
    if !(lo..=hi).contains(&tau) {
        return Err(Error::Domain(format!(
            "tau = {tau} lies outside the profile window [{lo}, {hi}]"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    if let Some((a, b)) = support.complement_interval(tau) {
        return Ok(eta_f_in_gap(b - a, n));
    }
    let nf = n as f64;
    let target = 1.0 / nf;
    let mass = |w: f64| window_mass(profile, tau - w, tau + w);
    let eta_f = if mass(1.0) <= target {
        1.0
    } else {
        let mut a = 0.0;
        let mut b = 1.0;
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mass(mid) < target {
                a = mid;
            } else {
                b = mid;
            }
            if b - a <= 1e-12 * b {
                break;
            }
        }
        0.5 * (a + b)
    };
    let eta_f = eta_f.clamp(1.0 / nf, 1.0);
    let regime = if eta_f < nf.powf(-0.875) {
        Regime::Bulk
    } else {
        Regime::CuspOrMinimum
    };
    Ok(FluctuationScale { eta_f, regime })
}

/// Integral of the piecewise-linear profile over `[a, b]`.
pub fn window_mass(profile: &DensityProfile, a: f64, b: f64) -> f64 {
    let g = &profile.grid;
    let mut total = 0.0;
    let mut x0 = a.max(g[0]);
    let end = b.min(g[g.len() - 1]);
    if x0 >= end {
        return 0.0;
    }
    let mut idx = g.partition_point(|&x| x <= x0);
    while x0 < end {
        let x1 = if idx < g.len() { g[idx].min(end) } else { end };
        total += 0.5 * (x1 - x0) * (profile.interpolate(x0) + profile.interpolate(x1));
        x0 = x1;
        idx += 1;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "kebab-case")]
pub enum Prefactor {
    /// `|m|^2`
    AbsSquared,
    /// `m^2`
    Squared,
    /// `conj(m)^2`
    ConjSquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "kebab-case")]
pub enum Operator {
    S,
    T,
    TTransposed,
}

/// One of the nine operators `1 - diag(m^# m^#) R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
pub struct StabilityVariant {
    pub prefactor: Prefactor,
    pub operator: Operator,
}

impl StabilityVariant {
    pub const STANDARD: Self = Self {
        prefactor: Prefactor::Squared,
        operator: Operator::S,
    };

    pub fn all() -> Vec<Self> {
        let mut v = Vec::with_capacity(9);
        for prefactor in [
            Prefactor::AbsSquared,
            Prefactor::Squared,
            Prefactor::ConjSquared,
        ] {
            for operator in [Operator::S, Operator::T, Operator::TTransposed] {
                v.push(Self {
                    prefactor,
                    operator,
                });
            }
        }
        v
    }

    fn weight(&self, m: Complex64) -> Complex64 {
        match self.prefactor {
            Prefactor::AbsSquared => Complex64::new(m.norm_sqr(), 0.0),
            Prefactor::Squared => m * m,
            Prefactor::ConjSquared => (m * m).conj(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub beta: Complex64,
    pub right_vec: Vec<Complex64>,
    pub left_vec: Vec<Complex64>,
    pub variant: StabilityVariant,
    pub comparison_ratio: f64,
}

/// Dense `N × N` stability operator.
pub fn stability_matrix(
    model: &ModelSpec,
    m: &[Complex64],
    variant: StabilityVariant,
) -> Vec<Complex64> {
    let n = model.n();
    let mut b = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        let w = variant.weight(m[i]);
        for j in 0..n {
            let r = match variant.operator {
                Operator::S => Complex64::new(model.s_at(i, j), 0.0),
                Operator::T => model.t_at(i, j),
                Operator::TTransposed => model.t_at(j, i),
            };
            b[i * n + j] = -w * r;
        }
        b[i * n + i] += 1.0;
    }
    b
}

/// Smallest-modulus eigenvalue of the requested stability operator.
pub fn stability_spectrum(
    model: &ModelSpec,
    sol: &StieltjesSolution,
    variant: StabilityVariant,
) -> Result<StabilityReport> {
    let (beta, right, left) = match model.second_moment() {
        SecondMoment::Explicit(_) => full_spectrum(model, &sol.m, variant)?,
        _ => reduced_spectrum(model, &sol.m, variant)?,
    };
    let rho = sol.density();
    let sigma = compute_sigma(sol).map(|s| s.sigma.abs()).unwrap_or(0.0);
    let denom = sol.z.eta / rho + rho * (rho + sigma);
    Ok(StabilityReport {
        beta,
        right_vec: right,
        left_vec: left,
        variant,
        comparison_ratio: beta.norm() / denom,
    })
}

type Eigentriple = (Complex64, Vec<Complex64>, Vec<Complex64>);

fn normalise(
    mut right: Vec<Complex64>,
    mut left: Vec<Complex64>,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let nr = right.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    right.iter_mut().for_each(|x| *x /= nr);
    let ip: Complex64 = left.iter().zip(&right).map(|(l, r)| l.conj() * r).sum();
    if ip.norm() < 1e-300 {
        return Err(Error::NearSingular(
            "left and right eigenvectors are orthogonal".into(),
        ));
    }
    let c = ip.conj().inv();
    left.iter_mut().for_each(|x| *x *= c);
    Ok((right, left))
}

fn pick_smallest(vals: &[Complex64]) -> usize {
    (0..vals.len())
        .min_by(|&a, &b| vals[a].norm().total_cmp(&vals[b].norm()))
        .expect("non-empty spectrum")
}

fn closest(vals: &[Complex64], target: Complex64) -> usize {
    (0..vals.len())
        .min_by(|&a, &b| {
            (vals[a] - target)
                .norm()
                .total_cmp(&(vals[b] - target).norm())
        })
        .expect("non-empty spectrum")
}

fn conj_transpose(a: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            out[j * n + i] = a[i * n + j].conj();
        }
    }
    out
}

fn full_spectrum(
    model: &ModelSpec,
    m: &[Complex64],
    variant: StabilityVariant,
) -> Result<Eigentriple> {
    let n = model.n();
    if n > 2048 {
        return Err(Error::InvalidParameter(format!(
            "dense stability spectrum limited to N <= 2048, got {n}"
        )));
    }
    let b = stability_matrix(model, m, variant);
    let (vals, vecs) = linalg::eigen_general(&b, n)?;
    let k = pick_smallest(&vals);
    let beta = vals[k];
    let right: Vec<Complex64> = (0..n).map(|i| vecs[(i, k)]).collect();
    let (lvals, lvecs) = linalg::eigen_general(&conj_transpose(&b, n), n)?;
    let kl = closest(&lvals, beta.conj());
    let left: Vec<Complex64> = (0..n).map(|i| lvecs[(i, kl)]).collect();
    let (right, left) = normalise(right, left)?;
    Ok((beta, right, left))
}

fn reduced_spectrum(
    model: &ModelSpec,
    m: &[Complex64],
    variant: StabilityVariant,
) -> Result<Eigentriple> {
    let red = model.reduce();
    let k = red.classes();
    let n = model.n();
    let mc = red.compress(m);
    let zero_t = matches!(model.second_moment(), SecondMoment::Zero);
    // kernel of R restricted to class-constant vectors, and its action inside classes
    let mut kernel = red.kernel.clone();
    let mut inner = vec![0.0; k];
    match variant.operator {
        Operator::S => {}
        Operator::T | Operator::TTransposed => {
            if zero_t {
                kernel.iter_mut().for_each(|x| *x = 0.0);
            } else {
                for c in 0..k {
                    kernel[c * k + c] -= red.self_variance[c];
                    inner[c] = -red.self_variance[c];
                }
            }
        }
    }
    let mut b = vec![Complex64::new(0.0, 0.0); k * k];
    for i in 0..k {
        let w = variant.weight(mc[i]);
        for j in 0..k {
            b[i * k + j] = -w * kernel[i * k + j];
        }
        b[i * k + i] += 1.0;
    }
    let (vals, vecs) = linalg::eigen_general(&b, k)?;
    let kr = pick_smallest(&vals);
    let mut beta = vals[kr];
    let mut best_inner: Option<usize> = None;
    for c in 0..k {
        if red.sizes[c] > 1 {
            let v = Complex64::new(1.0, 0.0) - variant.weight(mc[c]) * inner[c];
            if v.norm() < beta.norm() {
                beta = v;
                best_inner = Some(c);
            }
        }
    }
    if let Some(c) = best_inner {
        let members: Vec<usize> = (0..n).filter(|&i| red.class_of[i] == c).take(2).collect();
        let mut right = vec![Complex64::new(0.0, 0.0); n];
        right[members[0]] = Complex64::new(1.0, 0.0);
        right[members[1]] = Complex64::new(-1.0, 0.0);
        let left = right.clone();
        let (right, left) = normalise(right, left)?;
        return Ok((beta, right, left));
    }
    let right_red: Vec<Complex64> = (0..k).map(|i| vecs[(i, kr)]).collect();
    let (lvals, lvecs) = linalg::eigen_general(&conj_transpose(&b, k), k)?;
    let kl = closest(&lvals, beta.conj());
    // a left eigenvector of the reduced matrix carries the class sizes as weights
    let left_red: Vec<Complex64> = (0..k)
        .map(|i| lvecs[(i, kl)] / red.sizes[i] as f64)
        .collect();
    let (right, left) = normalise(red.expand(&right_red), red.expand(&left_red))?;
    Ok((beta, right, left))
}

/// Tunes the shift `delta` of the two-block family `(-delta, +delta)`-type
/// models so the gap near `near` just closes; `build(delta)` constructs the model.
///
/// `bracket = (closed, open)`: the gap must be closed at the first value and
/// open at the second. Returns the critical parameter.
pub fn tune_cusp<F>(build: F, bracket: (f64, f64), near: f64, radius: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<ModelSpec>,
{
    let open = |d: f64| -> Result<bool> {
        let model = build(d)?;
        let solver = DysonSolver::new(&model, SolverOptions::default());
        gap_is_open(&solver, near, radius)
    };
    let (closed, opened) = bracket;
    if open(closed)? || !open(opened)? {
        return Err(Error::Bracketing(format!(
            "gap must be closed at {closed} and open at {opened}"
        )));
    }
    // predicate flips from false to true along the bracket, in either orientation
    if closed < opened {
        bisect_predicate(open, closed, opened, tol)
    } else {
        bisect_predicate(|d| Ok(!open(d)?), opened, closed, tol)
    }
}

/// True when the extrapolated density vanishes somewhere within `radius` of `near`.
pub fn gap_is_open(solver: &DysonSolver, near: f64, radius: f64) -> Result<bool> {
    let (_, rmin) = local_minimum(solver, near, radius, 1e-13)?;
    Ok(rmin <= 1e-9)
}

/// Location and value of the smallest extrapolated density within `radius` of `near`.
pub fn local_minimum(solver: &DysonSolver, near: f64, radius: f64, eta: f64) -> Result<(f64, f64)> {
    scan_then_golden(
        |t| solver.density(t, eta),
        near - radius,
        near + radius,
        41,
        1e-15,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyson::{density_grid, solve_point, SpectralPoint};
    use crate::model::{instantiate_two_block, ModelSpec};
    use crate::quad::adaptive_to_infinity;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn psi_edge_values() {
        assert_eq!(psi_edge(0.0).unwrap(), 0.0);
        // high-precision evaluation of the closed form
        assert_abs_diff_eq!(
            psi_edge(1.0).unwrap(),
            0.310_990_823_173_968_7,
            epsilon = 1e-14
        );
        let big = 1e6;
        assert_abs_diff_eq!(
            psi_edge(big).unwrap() / big.cbrt(),
            2f64.powf(-4.0 / 3.0),
            epsilon = 1e-3
        );
        assert!(matches!(psi_edge(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn psi_min_values() {
        assert_eq!(psi_min(0.0), 0.0);
        assert_abs_diff_eq!(psi_min(1.0), 0.043_467_943_638_916_96, epsilon = 1e-14);
        assert_abs_diff_eq!(psi_min(0.1), 0.000_553_764_618_865_823, epsilon = 1e-15);
        assert_abs_diff_eq!(psi_min(1e-3), 5.555_553_755_144_986e-8, epsilon = 1e-21);
        for l in logspace(1e-3, 1e3, 40) {
            let r = psi_min(l) / (l * l).min(l.cbrt());
            assert!((0.04..=1.0).contains(&r), "ratio {r} at {l}");
        }
    }

    #[test]
    fn psi_edge_integral_identities() {
        let c = 3.0 * 3f64.sqrt() / (2.0 * PI);
        let (a, _) =
            adaptive_to_infinity(|x| psi_edge_unchecked(x) / (x + 0.5).powi(2), 0.0, 1e-11)
                .unwrap();
        assert_abs_diff_eq!(c * a, 0.5, epsilon = 1e-8);
        let (b, _) =
            adaptive_to_infinity(|x| psi_edge_unchecked(x) / (x + 0.5).powi(4), 0.0, 1e-11)
                .unwrap();
        assert_abs_diff_eq!(c * b, 8.0 / 27.0, epsilon = 1e-8);
    }

    #[test]
    fn flat_support_is_semicircle() {
        let m = ModelSpec::flat(2).unwrap();
        let p = density_grid(&m, (-3.0, 3.0), 1e-3, 1e-8).unwrap();
        let s = find_support(&p, 1e-4).unwrap();
        assert_eq!(s.intervals.len(), 1);
        assert_abs_diff_eq!(s.intervals[0].0, -2.0, epsilon = 1e-3);
        assert_abs_diff_eq!(s.intervals[0].1, 2.0, epsilon = 1e-3);
        assert!(matches!(
            find_support(&p, 1.0),
            Err(Error::EmptySupport { .. })
        ));
    }

    #[test]
    fn flat_edge_classification() {
        let m = ModelSpec::flat(2).unwrap();
        let p = density_grid(&m, (-3.0, 3.0), 1e-3, 1e-8).unwrap();
        let s = find_support(&p, 1e-4).unwrap();
        let r = classify(&m, &p, &s, 2.0).unwrap();
        assert_eq!(r.kind, SingularityKind::Edge);
        assert_abs_diff_eq!(r.location, 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(r.exponent, 0.5, epsilon = 0.02);
    }

    #[test]
    fn sigma_vanishes_in_symmetric_bulk() {
        let m = ModelSpec::flat(3).unwrap();
        let sol = solve_point(
            &m,
            SpectralPoint::new(0.0, 1e-6),
            SolverOptions::default(),
            None,
        )
        .unwrap();
        let s = compute_sigma(&sol).unwrap();
        assert_eq!(s.sigma, 0.0);
        for f in &s.f {
            assert_abs_diff_eq!(*f, PI, epsilon = 1e-4);
        }
    }

    #[test]
    fn eta_f_gap_cases() {
        let a = eta_f_in_gap(1e-2, 1_000_000);
        assert_abs_diff_eq!(a.eta_f, 5.994_842_503_189_409e-5, epsilon = 1e-12);
        assert_eq!(a.regime, Regime::EdgeInsideGap);
        let b = eta_f_in_gap(1e-5, 10_000);
        assert_abs_diff_eq!(b.eta_f, 1e-3, epsilon = 1e-15);
        assert_eq!(b.regime, Regime::EdgeSmallGap);
    }

    #[test]
    fn eta_f_for_constant_density() {
        let grid: Vec<f64> = (0..=200).map(|i| -1.0 + i as f64 * 0.01).collect();
        let rho = vec![0.4; grid.len()];
        let p = DensityProfile {
            grid,
            rho,
            eta_eval: 1e-8,
        };
        let s = SupportMap {
            intervals: vec![(-1.0, 1.0)],
            gaps: vec![],
        };
        let n = 1000;
        let f = compute_eta_f(&p, &s, 0.0, n).unwrap();
        assert_abs_diff_eq!(f.eta_f, 1.0 / (2.0 * n as f64 * 0.4), epsilon = 1e-12);
        assert!(matches!(
            compute_eta_f(&p, &s, 5.0, n),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn flat_stability_on_constants() {
        let m = ModelSpec::flat(4).unwrap();
        let sol = solve_point(
            &m,
            SpectralPoint::new(0.0, 1e-9),
            SolverOptions::default(),
            None,
        )
        .unwrap();
        let abs = StabilityVariant {
            prefactor: Prefactor::AbsSquared,
            operator: Operator::S,
        };
        let r = stability_spectrum(&m, &sol, abs).unwrap();
        assert!(r.beta.norm() < 1e-6, "{}", r.beta);
        let sol = solve_point(
            &m,
            SpectralPoint::new(2.0, 1e-12),
            SolverOptions::default(),
            None,
        )
        .unwrap();
        let r = stability_spectrum(&m, &sol, StabilityVariant::STANDARD).unwrap();
        assert!(r.beta.norm() < 1e-5, "{}", r.beta);
    }

    #[test]
    fn reduced_and_full_spectra_agree() {
        let model = instantiate_two_block((2, 3), (1.0, 0.6, 1.4), (-0.5, 0.8)).unwrap();
        let sol = solve_point(
            &model,
            SpectralPoint::new(0.2, 0.05),
            SolverOptions::default(),
            None,
        )
        .unwrap();
        for v in StabilityVariant::all() {
            let (b1, r1, l1) = reduced_spectrum(&model, &sol.m, v).unwrap();
            let (b2, _, _) = full_spectrum(&model, &sol.m, v).unwrap();
            assert!((b1 - b2).norm() < 1e-10, "{v:?}: {b1} vs {b2}");
            let b = stability_matrix(&model, &sol.m, v);
            let n = model.n();
            for i in 0..n {
                let br: Complex64 = (0..n).map(|j| b[i * n + j] * r1[j]).sum();
                assert!((br - b1 * r1[i]).norm() < 1e-8);
                let bl: Complex64 = (0..n).map(|j| b[j * n + i].conj() * l1[j]).sum();
                assert!((bl - b1.conj() * l1[i]).norm() < 1e-8);
            }
            let ip: Complex64 = l1.iter().zip(&r1).map(|(l, r)| l.conj() * r).sum();
            assert!((ip - 1.0).norm() < 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn psi_min_is_even(l in -100.0f64..100.0) {
            prop_assert!((psi_min(l) - psi_min(-l)).abs() <= 1e-15 * (1.0 + psi_min(l)));
            prop_assert!(psi_min(l) >= 0.0);
        }

        #[test]
        fn psi_edge_is_increasing(a in 0.0f64..50.0, d in 1e-3f64..10.0) {
            prop_assert!(psi_edge(a + d).unwrap() > psi_edge(a).unwrap());
        }
    }
}
