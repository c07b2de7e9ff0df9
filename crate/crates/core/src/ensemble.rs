//! Monte-Carlo sampling of deformed Wigner-type matrices and empirical checks.

use crate::dyson::{ward_check, DensityProfile, DysonSolver, SolverOptions, SpectralPoint};
use crate::linalg::{hermitian_eigen, hermitian_eigenvalues};
use crate::model::{ModelSpec, Symmetry};
use crate::optim::{bisect_predicate, log_log_slope};
use crate::pearcey::{ContourSpec, FiniteKernel, FiniteKernelInput, PearceyKernel};
use crate::quad::GaussLegendre;
use crate::shape::{compute_eta_f, SingularityReport, SupportMap};
use crate::{invalid, Error, Result};
use faer::Mat;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

/// Distribution of the centred entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EntryLaw {
    #[default]
    Gaussian,
    /// `±√s_ij`, with a uniform complex phase when `t_ij = 0`.
    RademacherLike,
}

/// Sampling parameters shared by all trials.
#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub model: ModelSpec,
    pub trials: usize,
    pub base_seed: u64,
    pub entry_law: EntryLaw,
    /// Gaussian time `ct` of the GUE component.
    pub gue_time: f64,
    /// `ε` in `t = N^{-1/2+ε}`.
    pub epsilon_exp: f64,
}

impl EnsembleConfig {
    pub fn new(
        model: ModelSpec,
        trials: usize,
        base_seed: u64,
        entry_law: EntryLaw,
    ) -> Result<Self> {
        Self::with_gue(model, trials, base_seed, entry_law, 0.0, 0.1)
    }

    pub fn with_gue(
        model: ModelSpec,
        trials: usize,
        base_seed: u64,
        entry_law: EntryLaw,
        gue_time: f64,
        epsilon_exp: f64,
    ) -> Result<Self> {
        if trials == 0 {
            return invalid("at least one trial is required");
        }
        if !(gue_time >= 0.0) || !epsilon_exp.is_finite() {
            return invalid(format!("gue_time must be nonnegative, got {gue_time}"));
        }
        if gue_time > 0.0 {
            if model.symmetry() != Symmetry::ComplexHermitian {
                return Err(Error::UnsupportedLaw(
                    "a GUE component requires the complex Hermitian class".into(),
                ));
            }
            let cap = gue_capacity(&model);
            if gue_time >= cap {
                return invalid(format!(
                    "gue_time {gue_time} must stay below the fullness bound {cap}"
                ));
            }
        }
        check_law(&model, entry_law)?;
        Ok(Self {
            model,
            trials,
            base_seed,
            entry_law,
            gue_time,
            epsilon_exp,
        })
    }

    /// `t = N^{-1/2+ε}`.
    pub fn flow_time(&self) -> f64 {
        (self.model.n() as f64).powf(-0.5 + self.epsilon_exp)
    }

    /// Model of `H_t`, whose variance leaves room for the GUE component.
    pub fn reduced_model(&self) -> Result<ModelSpec> {
        if self.gue_time == 0.0 {
            Ok(self.model.clone())
        } else {
            self.model.with_added_variance(-self.gue_time)
        }
    }
}

/// Largest `ct` for which `S - ct/N` remains a valid covariance profile.
pub fn gue_capacity(model: &ModelSpec) -> f64 {
    let n = model.n();
    let nf = n as f64;
    let mut cap = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            let room = if i == j {
                model.s_at(i, j)
            } else {
                model.s_at(i, j) - model.t_at(i, j).norm()
            };
            cap = cap.min(room * nf);
        }
    }
    cap
}

fn check_law(model: &ModelSpec, law: EntryLaw) -> Result<()> {
    if law == EntryLaw::Gaussian {
        return Ok(());
    }
    let n = model.n();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let t = model.t_at(i, j);
            let real_entries =
                (t - model.s_at(i, j)).norm() <= 1e-14 * model.s_at(i, j).max(1e-300);
            if t.norm() > 0.0 && !real_entries {
                return Err(Error::UnsupportedLaw(format!(
                    "rademacher-like entries cannot realise t = {t} at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// SplitMix64 finaliser.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trial seed derived from the base seed and the trial index.
pub fn trial_seed(base_seed: u64, trial: usize) -> u64 {
    splitmix64(splitmix64(base_seed) ^ trial as u64)
}

const GUE_STREAM: u64 = 0x6755_4553_5452_4D31;

fn entry(rng: &mut ChaCha8Rng, law: EntryLaw, s: f64, t: Complex64, diagonal: bool) -> Complex64 {
    match law {
        EntryLaw::Gaussian => {
            if diagonal {
                return Complex64::new(s.sqrt() * rng.sample::<f64, _>(StandardNormal), 0.0);
            }
            // covariance of (Re w, Im w): [[s + Re t, Im t], [Im t, s - Re t]] / 2
            let cxx = 0.5 * (s + t.re);
            let cxy = 0.5 * t.im;
            let cyy = 0.5 * (s - t.re);
            let l11 = cxx.max(0.0).sqrt();
            let l21 = if l11 > 0.0 { cxy / l11 } else { 0.0 };
            let l22 = (cyy - l21 * l21).max(0.0).sqrt();
            let g1: f64 = rng.sample(StandardNormal);
            let g2: f64 = rng.sample(StandardNormal);
            Complex64::new(l11 * g1, l21 * g1 + l22 * g2)
        }
        EntryLaw::RademacherLike => {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let r = s.sqrt();
            if diagonal || t.norm() > 0.0 {
                Complex64::new(sign * r, 0.0)
            } else {
                Complex64::from_polar(r, 2.0 * PI * rng.random::<f64>())
            }
        }
    }
}

fn sample_from(model: &ModelSpec, law: EntryLaw, seed: u64) -> Mat<Complex64> {
    let n = model.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = Mat::<Complex64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let w = entry(&mut rng, law, model.s_at(i, j), model.t_at(i, j), i == j);
            if i == j {
                h[(i, i)] = Complex64::new(model.a()[i] + w.re, 0.0);
            } else {
                h[(i, j)] = w;
                h[(j, i)] = w.conj();
            }
        }
    }
    h
}

/// `H = A + W` for the given trial, deterministic in `(base_seed, trial)`.
pub fn sample_matrix(config: &EnsembleConfig, trial: usize) -> Result<Mat<Complex64>> {
    check_law(&config.model, config.entry_law)?;
    Ok(sample_from(
        &config.model,
        config.entry_law,
        trial_seed(config.base_seed, trial),
    ))
}

/// `H + √ct U` with `U` a standard GUE matrix (`E|u_ij|² = 1/N`).
pub fn add_gue(
    h: &Mat<Complex64>,
    ct: f64,
    seed: u64,
    symmetry: Symmetry,
) -> Result<Mat<Complex64>> {
    if symmetry != Symmetry::ComplexHermitian {
        return Err(Error::UnsupportedLaw(
            "GUE perturbations apply to the complex Hermitian class only".into(),
        ));
    }
    if !(ct >= 0.0) {
        return invalid(format!("ct must be nonnegative, got {ct}"));
    }
    let mut out = h.clone();
    if ct == 0.0 {
        return Ok(out);
    }
    let n = h.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let diag = (ct / n as f64).sqrt();
    let off = (ct / (2.0 * n as f64)).sqrt();
    for i in 0..n {
        for j in i..n {
            if i == j {
                let g: f64 = rng.sample(StandardNormal);
                out[(i, i)] += Complex64::new(diag * g, 0.0);
            } else {
                let (g1, g2): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                let u = Complex64::new(off * g1, off * g2);
                out[(i, j)] += u;
                out[(j, i)] += u.conj();
            }
        }
    }
    Ok(out)
}

/// What to keep from each trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SampleOptions {
    pub eigenvectors: bool,
    /// Also diagonalise `H_t` before the GUE component is added.
    pub pre_gue_spectrum: bool,
    /// Skip the spectrum of the full matrix (only meaningful with `pre_gue_spectrum`).
    pub skip_final_spectrum: bool,
}

/// Spectrum of one trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumSample {
    pub eigenvalues: Vec<f64>,
    #[serde(skip)]
    pub eigenvectors: Option<Mat<Complex64>>,
    /// Spectrum of `H_t` when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_gue: Option<Vec<f64>>,
    pub trial: usize,
    pub trial_seed: u64,
}

/// Samples and diagonalises one trial.
pub fn sample_spectrum(
    config: &EnsembleConfig,
    trial: usize,
    opts: SampleOptions,
) -> Result<SpectrumSample> {
    let seed = trial_seed(config.base_seed, trial);
    let reduced = config.reduced_model()?;
    let ht = sample_from(&reduced, config.entry_law, seed);
    let pre_gue = if opts.pre_gue_spectrum {
        Some(hermitian_eigenvalues(&ht)?)
    } else {
        None
    };
    let mut eigenvalues = Vec::new();
    let mut eigenvectors = None;
    if !opts.skip_final_spectrum || !opts.pre_gue_spectrum {
        let h = add_gue(
            &ht,
            config.gue_time,
            trial_seed(config.base_seed ^ GUE_STREAM, trial),
            config.model.symmetry(),
        )
        .or_else(|e| {
            if config.gue_time == 0.0 {
                Ok(ht.clone())
            } else {
                Err(e)
            }
        })?;
        if opts.eigenvectors {
            let (vals, vecs) = hermitian_eigen(&h)?;
            check_residual(&h, &vals, &vecs)?;
            eigenvalues = vals;
            eigenvectors = Some(vecs);
        } else {
            eigenvalues = hermitian_eigenvalues(&h)?;
        }
    }
    Ok(SpectrumSample {
        eigenvalues,
        eigenvectors,
        pre_gue,
        trial,
        trial_seed: seed,
    })
}

fn check_residual(h: &Mat<Complex64>, vals: &[f64], vecs: &Mat<Complex64>) -> Result<()> {
    let n = h.nrows();
    let hu = h * vecs;
    let norm = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut worst = 0.0_f64;
    for k in 0..n {
        let mut r = 0.0;
        for i in 0..n {
            r += (hu[(i, k)] - vecs[(i, k)] * vals[k]).norm_sqr();
        }
        worst = worst.max(r.sqrt());
    }
    if worst > 1e-8 * norm {
        return Err(Error::Accuracy {
            target: 1e-8 * norm,
            estimate: worst,
        });
    }
    Ok(())
}

/// All trials of a configuration, ordered by trial index.
pub fn run_trials(config: &EnsembleConfig, opts: SampleOptions) -> Result<Vec<SpectrumSample>> {
    (0..config.trials)
        .into_par_iter()
        .map(|t| sample_spectrum(config, t, opts))
        .collect()
}

/// Cumulative distribution of a piecewise-linear density.
#[derive(Debug, Clone)]
pub struct CumulativeDensity {
    grid: Vec<f64>,
    rho: Vec<f64>,
    cum: Vec<f64>,
    mass: f64,
}

impl CumulativeDensity {
    /// Requires unit mass within `tolerance`; the distribution is renormalised.
    pub fn new(profile: &DensityProfile, tolerance: f64) -> Result<Self> {
        let g = &profile.grid;
        let r = &profile.rho;
        let mut cum = vec![0.0; g.len()];
        for i in 1..g.len() {
            cum[i] = cum[i - 1] + 0.5 * (r[i] + r[i - 1]) * (g[i] - g[i - 1]);
        }
        let mass = *cum.last().unwrap_or(&0.0);
        if !((mass - 1.0).abs() <= tolerance) {
            return invalid(format!(
                "density has mass {mass}, expected 1 within {tolerance}"
            ));
        }
        Ok(Self {
            grid: g.clone(),
            rho: r.clone(),
            cum,
            mass,
        })
    }

    /// `ρ((-∞, τ))`.
    pub fn cdf(&self, tau: f64) -> f64 {
        let g = &self.grid;
        if tau <= g[0] {
            return 0.0;
        }
        if tau >= g[g.len() - 1] {
            return 1.0;
        }
        let i = g.partition_point(|&x| x <= tau) - 1;
        let h = tau - g[i];
        let slope = (self.rho[i + 1] - self.rho[i]) / (g[i + 1] - g[i]);
        (self.cum[i] + self.rho[i] * h + 0.5 * slope * h * h) / self.mass
    }

    /// Smallest `τ` with `cdf(τ) >= p`.
    pub fn inverse(&self, p: f64) -> Result<f64> {
        let (lo, hi) = (self.grid[0], self.grid[self.grid.len() - 1]);
        if p <= 0.0 {
            return Ok(lo);
        }
        if p >= 1.0 {
            let last = self
                .rho
                .iter()
                .rposition(|&r| r > 0.0)
                .map(|i| (i + 1).min(self.grid.len() - 1));
            return Ok(last.map(|i| self.grid[i]).unwrap_or(hi));
        }
        bisect_predicate(|t| Ok(self.cdf(t) >= p), lo, hi, 1e-14 * (hi - lo))
    }
}

/// Classical locations `γ_k`, `k = 1..=n`, with `nρ((-∞, γ_k)) = k`.
pub fn quantiles(profile: &DensityProfile, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return invalid("n must be positive");
    }
    let cdf = CumulativeDensity::new(profile, 1e-3)?;
    (1..=n).map(|k| cdf.inverse(k as f64 / n as f64)).collect()
}

/// `k(τ) = ⌈Nρ((-∞, τ))⌉`.
pub fn eigenvalue_index(profile: &DensityProfile, n: usize, tau: f64) -> Result<usize> {
    let cdf = CumulativeDensity::new(profile, 1e-3)?;
    Ok((n as f64 * cdf.cdf(tau)).ceil() as usize)
}

/// Normalised histogram: `density` is counts per trial per unit length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn new(edges: Vec<f64>, values: impl IntoIterator<Item = f64>, trials: usize) -> Self {
        let mut counts = vec![0u64; edges.len() - 1];
        for v in values {
            if v < edges[0] || v >= edges[edges.len() - 1] {
                continue;
            }
            let i = edges.partition_point(|&e| e <= v) - 1;
            counts[i] += 1;
        }
        let density = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 / (trials as f64 * (edges[i + 1] - edges[i])))
            .collect();
        Self {
            edges,
            counts,
            density,
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lo,hi,count,density\n");
        for i in 0..self.counts.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.edges[i],
                self.edges[i + 1],
                self.counts[i],
                self.density[i]
            ));
        }
        out
    }
}

/// Aggregated outcome of one verification suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationStats {
    pub suite: String,
    /// Number of tested units (trials, pairs or entries, as documented per suite).
    pub samples: usize,
    pub max_deviation: f64,
    pub mean_deviation: f64,
    pub threshold: f64,
    pub pass_fraction: f64,
    #[serde(default)]
    pub exponent: Option<f64>,
    #[serde(default)]
    pub histogram: Option<Histogram>,
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

impl VerificationStats {
    fn from_deviations(suite: &str, devs: &[f64], threshold: f64) -> Self {
        let n = devs.len();
        let max = devs.iter().copied().fold(0.0_f64, f64::max);
        let mean = if n > 0 {
            devs.iter().sum::<f64>() / n as f64
        } else {
            0.0
        };
        let pass = if n > 0 {
            devs.iter().filter(|&&d| d <= threshold).count() as f64 / n as f64
        } else {
            0.0
        };
        Self {
            suite: suite.into(),
            samples: n,
            max_deviation: max,
            mean_deviation: mean,
            threshold,
            pass_fraction: pass,
            exponent: None,
            histogram: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn passes(&self, required: f64) -> bool {
        self.pass_fraction >= required
    }
}

/// Index half-width `c` around `k_𝔠` in the cusp rigidity check.
pub const CUSP_INDEX_FRACTION: f64 = 0.05;

/// Rigidity of the sorted spectra against the classical locations.
///
/// Without a singularity every index is tested with
/// `|λ_k - γ_k| / η_f(γ_k)` against `N^{0.25}`. With a singularity the
/// indices `|k - k_𝔠| <= cN` are tested with
/// `|λ_k - γ_k| (1 + |k - k_𝔠|)^{1/4} N^{3/4}` against `N^{0.2}`. One unit per `(trial, k)`.
pub fn verify_rigidity(
    samples: &[SpectrumSample],
    profile: &DensityProfile,
    singularity: Option<&SingularityReport>,
) -> Result<VerificationStats> {
    if samples.len() < 20 {
        return Err(Error::InsufficientStatistics(format!(
            "rigidity needs 20 trials, got {}",
            samples.len()
        )));
    }
    let n = samples[0].eigenvalues.len();
    if samples.iter().any(|s| s.eigenvalues.len() != n) {
        return invalid("all samples must have the same dimension");
    }
    let nf = n as f64;
    let gamma = quantiles(profile, n)?;
    let mut devs = Vec::new();
    let stats = match singularity {
        None => {
            let whole = SupportMap {
                intervals: vec![profile.window()],
                gaps: Vec::new(),
            };
            let scale: Vec<f64> = gamma
                .par_iter()
                .map(|&g| compute_eta_f(profile, &whole, g, n).map(|f| f.eta_f))
                .collect::<Result<_>>()?;
            for s in samples {
                devs.extend((0..n).map(|k| (s.eigenvalues[k] - gamma[k]).abs() / scale[k]));
            }
            VerificationStats::from_deviations("rigidity-bulk", &devs, nf.powf(0.25))
        }
        Some(rep) => {
            let cdf = CumulativeDensity::new(profile, 1e-3)?;
            let kc = nf * cdf.cdf(rep.location);
            let half = CUSP_INDEX_FRACTION * nf;
            let k_lo = (kc - half).max(1.0).ceil() as usize;
            let k_hi = ((kc + half).min(nf)).floor() as usize;
            for s in samples {
                for k in k_lo..=k_hi {
                    let d = (s.eigenvalues[k - 1] - gamma[k - 1]).abs()
                        * (1.0 + (k as f64 - kc).abs()).powf(0.25)
                        * nf.powf(0.75);
                    devs.push(d);
                }
            }
            let mut st = VerificationStats::from_deviations("rigidity-cusp", &devs, nf.powf(0.2));
            st.extra.insert("k_c".into(), kc);
            st
        }
    };
    Ok(stats)
}

/// Negative control: eigenvalues randomly permuted within each trial.
pub fn shuffled(samples: &[SpectrumSample], seed: u64) -> Vec<SpectrumSample> {
    samples
        .iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ s.trial_seed));
            let mut ev = s.eigenvalues.clone();
            ev.shuffle(&mut rng);
            SpectrumSample {
                eigenvalues: ev,
                eigenvectors: None,
                pre_gue: None,
                trial: s.trial,
                trial_seed: s.trial_seed,
            }
        })
        .collect()
}

/// Averaged and isotropic local-law ratios at the given spectral points.
///
/// Averaged: `|<G - M>| N dist(z, supp ρ)` per `(trial, z)`, with
/// `dist(z, supp ρ) = η` for `τ` inside the support. Isotropic:
/// `|<x, (G - M) y>| / √(ρ(z)/(Nη))` per `(trial, z, pair)` for random unit
/// vectors. The full resolvent is assembled at the first point of every
/// trial and passed through the Ward identity check.
pub fn verify_local_law(
    samples: &[SpectrumSample],
    model: &ModelSpec,
    points: &[SpectralPoint],
    distances: &[f64],
    pairs: usize,
    seed: u64,
) -> Result<(VerificationStats, VerificationStats)> {
    if points.is_empty() || points.len() != distances.len() {
        return invalid("one support distance per spectral point is required");
    }
    let n = model.n();
    let nf = n as f64;
    let solver = DysonSolver::new(model, SolverOptions::default());
    let ms: Vec<Vec<Complex64>> = points
        .iter()
        .map(|&z| solver.solve(z, None).map(|s| s.m))
        .collect::<Result<_>>()?;
    let per_trial: Vec<(Vec<f64>, Vec<f64>, f64)> = samples
        .par_iter()
        .map(|s| -> Result<(Vec<f64>, Vec<f64>, f64)> {
            let u = s
                .eigenvectors
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("local law needs eigenvectors".into()))?;
            if u.nrows() != n {
                return invalid("sample dimension does not match the model");
            }
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ s.trial_seed));
            let mut avg = Vec::new();
            let mut iso = Vec::new();
            let vectors: Vec<(Vec<Complex64>, Vec<Complex64>)> = (0..pairs)
                .map(|_| (unit_vector(&mut rng, n), unit_vector(&mut rng, n)))
                .collect();
            let projected: Vec<(Vec<Complex64>, Vec<Complex64>)> = vectors
                .iter()
                .map(|(x, y)| (project(u, x), project(u, y)))
                .collect();
            let mut ward = 0.0_f64;
            for (p, (z, m)) in points.iter().zip(&ms).enumerate() {
                let zc = z.z();
                let inv: Vec<Complex64> = s.eigenvalues.iter().map(|&l| (l - zc).inv()).collect();
                let g_avg: Complex64 = inv.iter().sum::<Complex64>() / nf;
                let m_avg: Complex64 = m.iter().sum::<Complex64>() / nf;
                avg.push((g_avg - m_avg).norm() * nf * distances[p]);
                let rho = m_avg.im / PI;
                let scale = (rho / (nf * z.eta)).sqrt();
                for ((x, y), (px, py)) in vectors.iter().zip(&projected) {
                    let gxy: Complex64 = px
                        .iter()
                        .zip(py)
                        .zip(&inv)
                        .map(|((a, b), r)| a.conj() * b * r)
                        .sum();
                    let mxy: Complex64 = x
                        .iter()
                        .zip(y)
                        .zip(m)
                        .map(|((a, b), mi)| a.conj() * b * mi)
                        .sum();
                    iso.push((gxy - mxy).norm() / scale);
                }
                if p == 0 {
                    let scaled = Mat::<Complex64>::from_fn(n, n, |i, k| u[(i, k)] * inv[k]);
                    let g = &scaled * u.adjoint();
                    ward = ward.max(ward_check(&g, z.eta));
                }
            }
            Ok((avg, iso, ward))
        })
        .collect::<Result<_>>()?;
    let threshold = nf.powf(0.15);
    let avg: Vec<f64> = per_trial.iter().flat_map(|t| t.0.iter().copied()).collect();
    let iso: Vec<f64> = per_trial.iter().flat_map(|t| t.1.iter().copied()).collect();
    let ward = per_trial.iter().map(|t| t.2).fold(0.0, f64::max);
    let mut a = VerificationStats::from_deviations("locallaw-averaged", &avg, threshold);
    let mut b = VerificationStats::from_deviations("locallaw-isotropic", &iso, threshold);
    a.extra.insert("ward_max".into(), ward);
    b.extra.insert("ward_max".into(), ward);
    Ok((a, b))
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    let v: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|c| c / norm).collect()
}

/// `U* x`.
fn project(u: &Mat<Complex64>, x: &[Complex64]) -> Vec<Complex64> {
    let n = u.nrows();
    (0..u.ncols())
        .map(|k| (0..n).map(|i| u[(i, k)].conj() * x[i]).sum())
        .collect()
}

/// Delocalisation of the eigenvectors with eigenvalues in `window`.
///
/// Units are the entries `N |u_λ(i)|²` of all eigenvectors in the window; the
/// fraction below `N^{0.2}` is reported together with the overall maximum,
/// which is compared with `N^{1/2}` in `extra["max_threshold"]`.
pub fn verify_delocalization(
    samples: &[SpectrumSample],
    window: (f64, f64),
) -> Result<VerificationStats> {
    let mut values = Vec::new();
    let mut n = 0usize;
    for s in samples {
        let u = s
            .eigenvectors
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("delocalisation needs eigenvectors".into()))?;
        n = u.nrows();
        let nf = n as f64;
        for (k, &l) in s.eigenvalues.iter().enumerate() {
            if l < window.0 || l > window.1 {
                continue;
            }
            for i in 0..n {
                values.push(nf * u[(i, k)].norm_sqr());
            }
        }
    }
    if values.is_empty() {
        return Err(Error::InsufficientStatistics(format!(
            "no eigenvalues in {window:?}"
        )));
    }
    let nf = n as f64;
    let mut st = VerificationStats::from_deviations("delocalization", &values, nf.powf(0.2));
    st.extra.insert("max_threshold".into(), nf.sqrt());
    st.extra.insert("vectors".into(), (values.len() / n) as f64);
    Ok(st)
}

/// Verdict used by the suites: entry fraction and maximum both within bounds.
pub fn delocalization_passes(stats: &VerificationStats, required: f64) -> bool {
    let cap = stats
        .extra
        .get("max_threshold")
        .copied()
        .unwrap_or(f64::INFINITY);
    stats.passes(required) && stats.max_deviation <= cap
}

/// Almost-cusp data needed to rescale spectra.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CuspSetup {
    pub base_point: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub n: usize,
    /// Gaussian time of the GUE component.
    pub ct: f64,
    /// Crossing point `ξ = 𝔟 + ct Re<M(𝔟)>` of the vertical contour.
    pub xi: f64,
}

impl CuspSetup {
    /// `γ N^{3/4}`.
    pub fn scale(&self) -> f64 {
        self.gamma * (self.n as f64).powf(0.75)
    }

    pub fn rescale(&self, lambda: f64) -> f64 {
        self.scale() * (lambda - self.base_point)
    }
}

/// Binning and comparison windows for [`cusp_statistics`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CuspStatOptions {
    /// Comparison window `[-R, R]` in rescaled units.
    pub radius: f64,
    pub bins: usize,
    /// Half-width of the central window used for the dip statistic.
    pub center: f64,
    /// Rescaled range used for the tail slope and the statistics floor.
    pub tail: (f64, f64),
    /// Gauss-Legendre nodes per bin for kernel integrals.
    pub nodes_per_bin: usize,
}

impl Default for CuspStatOptions {
    fn default() -> Self {
        Self {
            radius: 4.0,
            bins: 4,
            center: 1.0,
            tail: (5.0, 20.0),
            nodes_per_bin: 12,
        }
    }
}

/// Minimal average number of eigenvalues per trial inside the tail range.
pub const MIN_EIGENVALUES_PER_TRIAL: f64 = 5.0;

/// Empirical rescaled one-point density near the almost-cusp point versus `K_α(x, x)`.
///
/// Histogram statistics use the spectra of the full matrices. When the
/// samples also carry the spectra of `H_t`, the conditional density given
/// `H_t` (the Brézin–Hikami kernel) is averaged over trials as a
/// lower-variance estimator of the same one-point function; its statistics
/// are stored with the `conditional_` prefix.
pub fn cusp_statistics(
    samples: &[SpectrumSample],
    setup: &CuspSetup,
    kernel: &PearceyKernel,
    opts: &CuspStatOptions,
) -> Result<VerificationStats> {
    let trials = samples.len();
    if trials == 0 {
        return Err(Error::InsufficientStatistics("no samples".into()));
    }
    let r = opts.radius;
    let edges: Vec<f64> = (0..=opts.bins)
        .map(|i| -r + 2.0 * r * i as f64 / opts.bins as f64)
        .collect();
    let gl = GaussLegendre::new(opts.nodes_per_bin);
    let nodes: Vec<(f64, f64)> = edges
        .windows(2)
        .flat_map(|w| gl.mapped(w[0], w[1]).collect::<Vec<_>>())
        .collect();
    let pearcey: Vec<f64> = nodes.iter().map(|&(x, _)| kernel.value(x, x)).collect();
    let bin_mass: Vec<f64> = (0..opts.bins)
        .map(|b| {
            let k = opts.nodes_per_bin;
            (b * k..(b + 1) * k).map(|i| nodes[i].1 * pearcey[i]).sum()
        })
        .collect();
    let center_mass: f64 = nodes
        .iter()
        .zip(&pearcey)
        .filter(|(n, _)| n.0.abs() <= opts.center)
        .map(|(n, k)| n.1 * k)
        .sum();

    let mut stats = VerificationStats::from_deviations("cusp", &[], 0.0);
    stats.samples = trials;
    let have_final = samples.iter().all(|s| !s.eigenvalues.is_empty());
    if have_final {
        let rescaled: Vec<f64> = samples
            .iter()
            .flat_map(|s| s.eigenvalues.iter().map(|&l| setup.rescale(l)))
            .collect();
        let (t_lo, t_hi) = opts.tail;
        let in_tail = rescaled.iter().filter(|x| x.abs() <= t_hi).count() as f64 / trials as f64;
        if in_tail < MIN_EIGENVALUES_PER_TRIAL {
            return Err(Error::InsufficientStatistics(format!(
                "{in_tail:.2} eigenvalues per trial within |x| <= {t_hi}"
            )));
        }
        let hist = Histogram::new(edges.clone(), rescaled.iter().copied(), trials);
        let mut l1 = 0.0;
        let mut sup = 0.0_f64;
        for b in 0..opts.bins {
            let width = edges[b + 1] - edges[b];
            let observed = hist.counts[b] as f64 / trials as f64;
            l1 += (observed - bin_mass[b]).abs();
            sup = sup.max((observed - bin_mass[b]).abs() / width);
        }
        let central =
            rescaled.iter().filter(|x| x.abs() <= opts.center).count() as f64 / trials as f64;
        let tail_edges = crate::optim::logspace(t_lo, t_hi, 9);
        let tail = Histogram::new(tail_edges, rescaled.iter().map(|x| x.abs()), trials);
        let (xs, ys): (Vec<f64>, Vec<f64>) = tail
            .centers()
            .into_iter()
            .zip(tail.density.iter().copied())
            .filter(|(_, d)| *d > 0.0)
            .unzip();
        if xs.len() >= 3 {
            stats.exponent = Some(log_log_slope(&xs, &ys));
        }
        stats.max_deviation = sup;
        stats.mean_deviation = l1;
        stats.extra.insert("l1".into(), l1);
        stats.extra.insert("sup".into(), sup);
        stats.extra.insert("central_mass".into(), central);
        stats.extra.insert("eigenvalues_per_trial".into(), in_tail);
        stats.histogram = Some(hist);
    }
    stats
        .extra
        .insert("pearcey_central_mass".into(), center_mass);
    stats.extra.insert("alpha".into(), setup.alpha);

    if samples.iter().all(|s| s.pre_gue.is_some()) {
        let mut us: Vec<f64> = nodes
            .iter()
            .map(|&(x, _)| setup.base_point + x / setup.scale())
            .collect();
        let window = (us[0], us[us.len() - 1]);
        us.push(setup.base_point);
        let per_trial: Vec<Vec<f64>> = samples
            .par_iter()
            .map(|s| conditional_density(s.pre_gue.as_deref().unwrap_or(&[]), setup, &us, window))
            .collect::<Result<_>>()?;
        let mean: Vec<f64> = (0..us.len())
            .map(|i| per_trial.iter().map(|t| t[i]).sum::<f64>() / trials as f64)
            .collect();
        let l1: f64 = nodes
            .iter()
            .zip(&mean)
            .zip(&pearcey)
            .map(|((n, m), k)| n.1 * (m - k).abs())
            .sum();
        let sup = mean
            .iter()
            .zip(&pearcey)
            .map(|(m, k)| (m - k).abs())
            .fold(0.0, f64::max);
        let central_of = |t: &[f64]| -> f64 {
            nodes
                .iter()
                .zip(t)
                .filter(|(n, _)| n.0.abs() <= opts.center)
                .map(|(n, m)| n.1 * m)
                .sum()
        };
        let per_central: Vec<f64> = per_trial.iter().map(|t| central_of(t)).collect();
        let center: Vec<f64> = per_trial.iter().map(|t| t[t.len() - 1]).collect();
        let (center_mean, center_se) = mean_and_se(&center);
        stats.extra.insert("conditional_l1".into(), l1);
        stats.extra.insert("conditional_sup".into(), sup);
        stats
            .extra
            .insert("conditional_central_mass".into(), central_of(&mean));
        stats
            .extra
            .insert("conditional_center_density".into(), center_mean);
        stats
            .extra
            .insert("conditional_center_se".into(), center_se);
        stats
            .extra
            .insert("pearcey_center_density".into(), kernel.value(0.0, 0.0));
        if trials >= 4 {
            stats
                .extra
                .insert("half_split_z".into(), half_split_z(&per_central));
        }
        if !have_final {
            stats.mean_deviation = l1;
            stats.max_deviation = sup;
        }
    }
    Ok(stats)
}

/// Sample mean and its standard error.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Difference of the means of the two trial halves in units of its standard error.
pub fn half_split_z(values: &[f64]) -> f64 {
    let (a, b) = values.split_at(values.len() / 2);
    let (ma, sa) = mean_and_se(a);
    let (mb, sb) = mean_and_se(b);
    let se = (sa * sa + sb * sb).sqrt();
    if se > 0.0 {
        (ma - mb).abs() / se
    } else if ma == mb {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Rescaled density `K_N^t(u, u) / (γN^{3/4})` of `H_t + √ct U` given the spectrum of `H_t`.
pub fn conditional_density(
    pre_gue: &[f64],
    setup: &CuspSetup,
    us: &[f64],
    window: (f64, f64),
) -> Result<Vec<f64>> {
    let mut xi = setup.xi;
    let mut eig = pre_gue.to_vec();
    eig.sort_by(f64::total_cmp);
    // the diagonal of the kernel does not depend on ξ; move it off nearby eigenvalues
    let spacing = if eig.len() > 1 {
        (eig[eig.len() - 1] - eig[0]) / (eig.len() - 1) as f64
    } else {
        1.0
    };
    let i = eig.partition_point(|&l| l < xi);
    let near = |x: f64| {
        eig.iter()
            .map(|l| (l - x).abs())
            .fold(f64::INFINITY, f64::min)
    };
    if near(xi) < 0.25 * spacing && i > 0 && i < eig.len() {
        let left = 0.5 * (eig[i - 1] + xi.min(eig[i]));
        let right = 0.5 * (eig[i] + xi.max(eig[i - 1]));
        xi = if near(left) >= near(right) {
            left
        } else {
            right
        };
        if near(xi) < 0.25 * spacing {
            xi = 0.5 * (eig[i - 1] + eig[i]);
        }
    }
    let input = FiniteKernelInput::new(eig, setup.ct, xi, setup.base_point, setup.gamma)?;
    let kernel = FiniteKernel::with_window(input, ContourSpec::default(), window)?;
    Ok(us
        .iter()
        .map(|&u| kernel.value(u, u) / setup.scale())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyson::density_grid;
    use crate::model::{instantiate_two_block, SecondMoment};
    use approx::assert_abs_diff_eq;

    fn flat(n: usize, trials: usize) -> EnsembleConfig {
        EnsembleConfig::new(ModelSpec::flat(n).unwrap(), trials, 7, EntryLaw::Gaussian).unwrap()
    }

    #[test]
    fn splitmix_reference_values() {
        // reference stream of SplitMix64 seeded with 0
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_ne!(trial_seed(1, 0), trial_seed(1, 1));
    }

    #[test]
    fn sampling_is_hermitian_and_deterministic() {
        let cfg = flat(6, 1);
        let a = sample_matrix(&cfg, 3).unwrap();
        let b = sample_matrix(&cfg, 3).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(a[(i, j)], b[(i, j)]);
                assert_eq!(a[(i, j)], a[(j, i)].conj());
            }
        }
        assert_ne!(a[(0, 1)], sample_matrix(&cfg, 4).unwrap()[(0, 1)]);
    }

    #[test]
    fn entry_moments() {
        let model = instantiate_two_block((1, 1), (0.6, 1.4, 2.0), (0.0, 0.0)).unwrap();
        for law in [EntryLaw::Gaussian, EntryLaw::RademacherLike] {
            let cfg = EnsembleConfig::new(model.clone(), 1, 11, law).unwrap();
            let draws = 10_000;
            let xs: Vec<Complex64> = (0..draws)
                .map(|t| sample_matrix(&cfg, t).unwrap()[(0, 1)])
                .collect();
            let s = model.s_at(0, 1);
            let mean: Complex64 = xs.iter().sum::<Complex64>() / draws as f64;
            let var = xs.iter().map(|x| x.norm_sqr()).sum::<f64>() / draws as f64;
            let se_mean = (s / draws as f64).sqrt();
            assert!(mean.norm() <= 4.0 * se_mean, "{law:?} mean {mean}");
            let fourth = xs.iter().map(|x| x.norm_sqr().powi(2)).sum::<f64>() / draws as f64;
            let se_var = ((fourth - var * var) / draws as f64).sqrt().max(1e-12);
            assert!(
                (var - s).abs() <= 4.0 * se_var + 1e-12,
                "{law:?} variance {var} vs {s}"
            );
        }
    }

    #[test]
    fn rademacher_rejects_general_second_moment() {
        let n = 2;
        let t = vec![
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.1),
            Complex64::new(0.0, 0.1),
            Complex64::new(0.0, 0.0),
        ];
        let model = ModelSpec::new(
            vec![0.0; n],
            vec![0.5; 4],
            SecondMoment::Explicit(t),
            Symmetry::ComplexHermitian,
        )
        .unwrap();
        let e = EnsembleConfig::new(model, 1, 0, EntryLaw::RademacherLike).unwrap_err();
        assert!(matches!(e, Error::UnsupportedLaw(_)));
    }

    #[test]
    fn gue_increases_entry_variance() {
        let cfg = flat(2, 1);
        let zero = Mat::<Complex64>::zeros(2, 2);
        assert_eq!(
            add_gue(&zero, 0.0, 1, Symmetry::ComplexHermitian).unwrap(),
            zero
        );
        assert!(add_gue(&zero, 0.3, 1, Symmetry::RealSymmetric).is_err());
        let draws = 10_000;
        let ct = 0.3;
        let xs: Vec<f64> = (0..draws)
            .map(|t| {
                add_gue(
                    &sample_matrix(&cfg, t).unwrap(),
                    ct,
                    t as u64,
                    Symmetry::ComplexHermitian,
                )
                .unwrap()[(0, 1)]
                    .norm_sqr()
            })
            .collect();
        let var = xs.iter().sum::<f64>() / draws as f64;
        let sd = (xs.iter().map(|x| (x - var).powi(2)).sum::<f64>() / draws as f64).sqrt();
        let expected = 0.5 + ct / 2.0;
        assert!((var - expected).abs() <= 4.0 * sd / (draws as f64).sqrt());
    }

    #[test]
    fn gue_capacity_guards_config() {
        let model = ModelSpec::flat(4).unwrap();
        assert_abs_diff_eq!(gue_capacity(&model), 1.0, epsilon = 1e-12);
        assert!(
            EnsembleConfig::with_gue(model.clone(), 1, 0, EntryLaw::Gaussian, 0.5, 0.1).is_ok()
        );
        assert!(EnsembleConfig::with_gue(model, 1, 0, EntryLaw::Gaussian, 1.0, 0.1).is_err());
    }

    #[test]
    fn semicircle_quantiles_are_symmetric() {
        let profile = density_grid(&ModelSpec::flat(1).unwrap(), (-2.2, 2.2), 1e-3, 1e-9).unwrap();
        let g2 = quantiles(&profile, 2).unwrap();
        assert_abs_diff_eq!(g2[0], 0.0, epsilon = 1e-6);
        let g4 = quantiles(&profile, 4).unwrap();
        assert_abs_diff_eq!(g4[1], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(g4[0], -g4[2], epsilon = 1e-6);
        assert_eq!(eigenvalue_index(&profile, 4, 0.1).unwrap(), 3);
    }

    #[test]
    fn flat_rigidity_and_shuffled_control() {
        let n = 128;
        let cfg = flat(n, 20);
        let samples = run_trials(&cfg, SampleOptions::default()).unwrap();
        let profile = density_grid(&ModelSpec::flat(1).unwrap(), (-2.2, 2.2), 1e-3, 1e-9).unwrap();
        let st = verify_rigidity(&samples, &profile, None).unwrap();
        assert!(st.pass_fraction >= 0.95, "{st:?}");
        let bad = verify_rigidity(&shuffled(&samples, 5), &profile, None).unwrap();
        assert!(bad.pass_fraction <= 0.2, "{bad:?}");
    }

    #[test]
    fn local_law_and_delocalization_on_small_gue() {
        let n = 256;
        let cfg = flat(n, 4);
        let opts = SampleOptions {
            eigenvectors: true,
            ..SampleOptions::default()
        };
        let samples = run_trials(&cfg, opts).unwrap();
        let pts = [SpectralPoint::new(0.0, 0.2), SpectralPoint::new(1.0, 0.2)];
        let (avg, iso) = verify_local_law(&samples, &cfg.model, &pts, &[0.2, 0.2], 3, 1).unwrap();
        assert!(avg.extra["ward_max"] < 1e-9);
        assert_eq!(avg.samples, 8);
        assert_eq!(iso.samples, 24);
        let deloc = verify_delocalization(&samples, (-0.5, 0.5)).unwrap();
        assert!(deloc.pass_fraction > 0.85);
        assert!(delocalization_passes(&deloc, 0.85));
    }

    #[test]
    fn diagonal_matrix_is_localised() {
        let n = 32;
        let vecs = Mat::<Complex64>::identity(n, n);
        let s = SpectrumSample {
            eigenvalues: (0..n).map(|i| i as f64 / n as f64).collect(),
            eigenvectors: Some(vecs),
            pre_gue: None,
            trial: 0,
            trial_seed: 0,
        };
        let st = verify_delocalization(&[s], (-1.0, 2.0)).unwrap();
        assert_eq!(st.max_deviation, n as f64);
        assert!(!delocalization_passes(&st, 0.95));
    }

    #[test]
    fn histogram_normalisation() {
        let h = Histogram::new(vec![0.0, 0.5, 1.0], [0.1, 0.2, 0.7, 1.5], 2);
        assert_eq!(h.counts, vec![2, 1]);
        assert_abs_diff_eq!(h.density[0], 2.0, epsilon = 1e-15);
    }
}
