//! Subcommand implementations.

use crate::manifest::RunRecord;
use crate::{Cli, Command, EnsembleCommand, KernelCommand, Scale, Suite, VerifyArgs};
use anyhow::{anyhow, Context, Result};
use cusp_core::dyson::{density_grid, DensityProfile, DysonSolver, SolverOptions, SpectralPoint};
use cusp_core::ensemble::{
    cusp_statistics, delocalization_passes, quantiles, run_trials, verify_delocalization,
    verify_local_law, verify_rigidity, CuspSetup, CuspStatOptions, EnsembleConfig, EntryLaw,
    Histogram, SampleOptions, SpectrumSample, VerificationStats,
};
use cusp_core::flow::{find_cusp_time, flow_state, DysonBase};
use cusp_core::io::{read_csv_column, write_csv, write_json, write_svg, Series};
use cusp_core::model::{ModelFile, ModelSpec};
use cusp_core::optim::linear_fit;
use cusp_core::pearcey::{ContourSpec, FiniteKernel, FiniteKernelInput, PearceyKernel};
use cusp_core::shape::{
    classify, classify_with, compute_eta_f, compute_sigma, find_support, stability_spectrum,
    ClassifyOptions, SingularityReport, StabilityVariant, SupportMap,
};
use cusp_core::verify::{pearcey_alpha, run_suite, SuiteScale, CRITERIA, QUICK, TOLERANCES};
use cusp_core::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::Path;
use std::process::ExitCode;

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    /// A check ran but did not pass.
    Failed,
}

impl From<Status> for ExitCode {
    fn from(status: Status) -> Self {
        match status {
            Status::Success => ExitCode::SUCCESS,
            Status::Failed => ExitCode::from(3),
        }
    }
}

/// 2 for bad input, 3 for numerical failures.
pub fn exit_code(error: &anyhow::Error) -> u8 {
    match error.downcast_ref::<Error>() {
        Some(e) if e.is_validation() => 2,
        Some(Error::Io(_)) => 2,
        Some(_) => 3,
        None => 2,
    }
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidParameter(msg.into()).into()
}

fn number(text: &str) -> Result<f64> {
    text.trim()
        .parse()
        .map_err(|_| invalid(format!("'{text}' is not a number")))
}

/// Parses `lo:hi` with `lo < hi`.
pub fn parse_range(text: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 2 {
        return Err(invalid(format!("expected lo:hi, got '{text}'")));
    }
    let (lo, hi) = (number(parts[0])?, number(parts[1])?);
    if !(lo < hi) {
        return Err(invalid(format!("range '{text}' is empty")));
    }
    Ok((lo, hi))
}

/// Parses `lo:hi:n` with `n ≥ 2`.
pub fn parse_grid(text: &str) -> Result<(f64, f64, usize)> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(invalid(format!("expected lo:hi:n, got '{text}'")));
    }
    let (lo, hi) = parse_range(&format!("{}:{}", parts[0], parts[1]))?;
    let n: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| invalid(format!("'{}' is not a count", parts[2])))?;
    if n < 2 {
        return Err(invalid("grids need at least two points"));
    }
    Ok((lo, hi, n))
}

fn grid_points((lo, hi, n): (f64, f64, usize)) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn load_model(path: &Path) -> Result<(ModelFile, ModelSpec)> {
    let file =
        ModelFile::load(path).with_context(|| format!("cannot load model {}", path.display()))?;
    let model = file.instantiate()?;
    Ok((file, model))
}

pub fn run(cli: &Cli) -> Result<Status> {
    match &cli.command {
        Command::Solve(args) => solve(cli, args),
        Command::Classify(args) => classify_cmd(cli, args),
        Command::Flow(args) => flow_cmd(cli, args),
        Command::Kernel(KernelCommand::Pearcey { alpha, grid, svg }) => {
            pearcey_cmd(cli, *alpha, grid, *svg)
        }
        Command::Kernel(KernelCommand::Finite {
            spectrum,
            ct,
            xi,
            grid,
            svg,
        }) => finite_cmd(cli, spectrum, *ct, *xi, grid.as_deref(), *svg),
        Command::Ensemble(EnsembleCommand::Run { config }) => ensemble_run(cli, config),
        Command::Ensemble(EnsembleCommand::Verify { config, suite }) => {
            ensemble_verify(cli, config, *suite)
        }
        Command::Verify(args) => verify_cmd(cli, args),
    }
}

fn solve(cli: &Cli, args: &crate::SolveArgs) -> Result<Status> {
    let (file, model) = load_model(&args.model)?;
    let window = parse_range(&args.tau_range)?;
    let profile = density_grid(&model, window, args.resolution, args.eta)?;
    let mut record = RunRecord::new(&cli.out)?;
    let csv = record.path("density.csv");
    write_csv(
        &csv,
        &["tau", "rho", "eta_eval"],
        profile
            .grid
            .iter()
            .zip(&profile.rho)
            .map(|(&t, &r)| vec![t, r, profile.eta_eval]),
    )?;
    record.add(csv);
    let svg = record.path("density.svg");
    write_svg(
        &svg,
        "self-consistent density",
        "tau",
        "rho",
        &[Series::line("rho", points(&profile))],
    )?;
    record.add(svg);
    println!(
        "{} grid points on [{}, {}], total mass {:.9}",
        profile.grid.len(),
        window.0,
        window.1,
        profile.integral()
    );
    record.finish(
        cli.seed,
        json!({"command": "solve", "model": file, "tau_range": window, "eta": args.eta, "resolution": args.resolution}),
    )?;
    Ok(Status::Success)
}

fn points(profile: &DensityProfile) -> Vec<(f64, f64)> {
    profile
        .grid
        .iter()
        .copied()
        .zip(profile.rho.iter().copied())
        .collect()
}

/// JSON form of a classification.
#[derive(Debug, Serialize)]
pub struct ClassifyReport {
    #[serde(flatten)]
    pub report: SingularityReport,
    /// Cubic cusp diagnostic; absent where the density vanishes.
    pub sigma: Option<f64>,
    pub eta_f: f64,
    pub regime: cusp_core::shape::Regime,
    /// Modulus of the smallest eigenvalue of the stability operator.
    pub beta: Option<f64>,
}

fn classify_cmd(cli: &Cli, args: &crate::ClassifyArgs) -> Result<Status> {
    let (file, model) = load_model(&args.model)?;
    let window = parse_range(&args.window)?;
    let profile = density_grid(&model, window, 1e-3, 1e-9)?;
    let support = find_support(&profile, 1e-6)?;
    let solver = DysonSolver::new(&model, SolverOptions::default());
    let opts = ClassifyOptions {
        kappa: args.radius,
        ..ClassifyOptions::default()
    };
    let report = classify_with(&solver, &profile, &support, args.near, opts)?;
    let sol = solver.solve(SpectralPoint::new(report.location, 1e-9), None)?;
    let sigma = compute_sigma(&sol).ok().map(|d| d.sigma);
    let beta = stability_spectrum(&model, &sol, StabilityVariant::STANDARD)
        .ok()
        .map(|s| s.beta.norm());
    let scale = compute_eta_f(&profile, &support, report.location, model.n())?;
    let out = ClassifyReport {
        report: report.clone(),
        sigma,
        eta_f: scale.eta_f,
        regime: scale.regime,
        beta,
    };
    let mut record = RunRecord::new(&cli.out)?;
    let json_path = record.path("classify.json");
    write_json(&json_path, &out)?;
    record.add(json_path);
    let csv = record.path("fit.csv");
    write_csv(
        &csv,
        &["x", "observed", "fitted"],
        report.fit_samples.iter().map(|&(x, o, f)| vec![x, o, f]),
    )?;
    record.add(csv);
    println!("{}", serde_json::to_string_pretty(&out)?);
    record.finish(cli.seed, json!({"command": "classify", "model": file, "near": args.near, "window": window, "radius": args.radius}))?;
    Ok(Status::Success)
}

/// Summary of a flow run.
#[derive(Debug, Serialize)]
pub struct FlowSummary {
    pub t_star: Option<f64>,
    /// Fitted exponent and prefactor of the gap against `t* - s`.
    pub gap_exponent: Option<f64>,
    pub gap_prefactor: Option<f64>,
    /// Fitted exponent of the minimal density against `s - t*`.
    pub minimum_exponent: Option<f64>,
    pub steps: usize,
}

fn power_fit(pairs: &[(f64, f64)]) -> Option<(f64, f64)> {
    let usable: Vec<(f64, f64)> = pairs
        .iter()
        .copied()
        .filter(|&(x, y)| x > 0.0 && y > 0.0)
        .collect();
    if usable.len() < 3 {
        return None;
    }
    let lx: Vec<f64> = usable.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = usable.iter().map(|p| p.1.ln()).collect();
    let (intercept, slope) = linear_fit(&lx, &ly);
    Some((slope, intercept.exp()))
}

fn flow_cmd(cli: &Cli, args: &crate::FlowArgs) -> Result<Status> {
    let (file, model) = load_model(&args.model)?;
    let (start, end, steps) = parse_grid(&args.s_range)?;
    if start < 0.0 {
        return Err(invalid("flow times must be nonnegative"));
    }
    let window = match &args.window {
        Some(w) => parse_range(w)?,
        None => (args.near - 1.0, args.near + 1.0),
    };
    let base = DysonBase::new(&model);
    let t_star = find_cusp_time(&base, (0.0, end.max(1e-12)), window).ok();
    let mut rows = Vec::with_capacity(steps);
    let mut states = Vec::with_capacity(steps);
    for s in grid_points((start, end, steps)) {
        let state = flow_state(&base, s, window, t_star, &[])?;
        let (e_minus, e_plus) = state.edges.unwrap_or((f64::NAN, f64::NAN));
        let (m_min, rho_min) = state.minimum.unwrap_or((f64::NAN, f64::NAN));
        rows.push(vec![
            s,
            e_minus,
            e_plus,
            state.gap.unwrap_or(f64::NAN),
            m_min,
            rho_min,
        ]);
        states.push(state);
        if cli.verbose {
            eprintln!("s = {s:.6}");
        }
    }
    let (gap_exponent, gap_prefactor, minimum_exponent) = match t_star {
        Some(t) => {
            let gaps: Vec<(f64, f64)> = states
                .iter()
                .filter_map(|st| st.gap.map(|g| (t - st.s, g)))
                .collect();
            let minima: Vec<(f64, f64)> = states
                .iter()
                .filter_map(|st| st.minimum.map(|m| (st.s - t, m.1)))
                .collect();
            let gap_fit = power_fit(&gaps);
            (
                gap_fit.map(|f| f.0),
                gap_fit.map(|f| f.1),
                power_fit(&minima).map(|f| f.0),
            )
        }
        None => (None, None, None),
    };
    let summary = FlowSummary {
        t_star,
        gap_exponent,
        gap_prefactor,
        minimum_exponent,
        steps,
    };
    let mut record = RunRecord::new(&cli.out)?;
    let csv = record.path("flow.csv");
    write_csv(
        &csv,
        &["s", "e_minus", "e_plus", "gap", "m_min", "rho_min"],
        rows.clone(),
    )?;
    record.add(csv);
    let json_path = record.path("flow_summary.json");
    write_json(&json_path, &summary)?;
    record.add(json_path);
    let svg = record.path("flow.svg");
    write_svg(
        &svg,
        "semicircular flow",
        "s",
        "gap / minimal density",
        &[
            Series::line("gap", rows.iter().map(|r| (r[0], r[3])).collect()),
            Series::line("rho_min", rows.iter().map(|r| (r[0], r[5])).collect()),
        ],
    )?;
    record.add(svg);
    println!("{}", serde_json::to_string_pretty(&summary)?);
    record.finish(
        cli.seed,
        json!({"command": "flow", "model": file, "s_range": [start, end, steps], "window": window}),
    )?;
    Ok(Status::Success)
}

fn pearcey_cmd(cli: &Cli, alpha: f64, grid: &str, svg: bool) -> Result<Status> {
    let grid = parse_grid(grid)?;
    let xs = grid_points(grid);
    let config = ContourSpec::default();
    let kernel = PearceyKernel::new(alpha, config)?;
    let pairs: Vec<(f64, f64)> = xs
        .iter()
        .flat_map(|&x| xs.iter().map(move |&y| (x, y)))
        .collect();
    let rows: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|&(x, y)| {
            kernel
                .evaluate(x, y)
                .map(|k| vec![x, y, k.value, k.abs_error_estimate])
        })
        .collect::<cusp_core::Result<_>>()?;
    let mut record = RunRecord::new(&cli.out)?;
    let csv = record.path("pearcey.csv");
    write_csv(&csv, &["x", "y", "kernel", "abs_error"], rows.clone())?;
    record.add(csv);
    if svg {
        let diagonal: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r[0] == r[1])
            .map(|r| (r[0], r[2]))
            .collect();
        let path = record.path("pearcey_density.svg");
        write_svg(
            &path,
            &format!("Pearcey density, alpha = {alpha}"),
            "x",
            "K(x, x)",
            &[Series::line("K(x, x)", diagonal)],
        )?;
        record.add(path);
    }
    println!("{} kernel values written", rows.len());
    record.finish(
        cli.seed,
        json!({"command": "kernel pearcey", "alpha": alpha, "grid": grid, "contour": config}),
    )?;
    Ok(Status::Success)
}

fn finite_cmd(
    cli: &Cli,
    spectrum: &Path,
    ct: f64,
    xi: f64,
    grid: Option<&str>,
    svg: bool,
) -> Result<Status> {
    let eigenvalues = read_csv_column(spectrum, Some("eigenvalue"))
        .or_else(|_| read_csv_column(spectrum, None))
        .with_context(|| format!("cannot read spectrum {}", spectrum.display()))?;
    let input = FiniteKernelInput::new(eigenvalues.clone(), ct, xi, 0.0, 1.0)?;
    let spacing = input.mean_spacing();
    let grid = match grid {
        Some(g) => parse_grid(g)?,
        None => (xi - 5.0 * spacing, xi + 5.0 * spacing, 21),
    };
    let xs = grid_points(grid);
    let config = ContourSpec::default();
    let kernel = FiniteKernel::with_window(input, config, (grid.0, grid.1))?;
    let mut rows = Vec::with_capacity(xs.len() * xs.len());
    for &u in &xs {
        for &v in &xs {
            let k = kernel.evaluate(u, v)?;
            rows.push(vec![u, v, k.value, k.abs_error_estimate]);
        }
    }
    let mut record = RunRecord::new(&cli.out)?;
    let csv = record.path("finite_kernel.csv");
    write_csv(&csv, &["u", "v", "kernel", "abs_error"], rows.clone())?;
    record.add(csv);
    if svg {
        let n = eigenvalues.len() as f64;
        let diagonal: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r[0] == r[1])
            .map(|r| (r[0], r[2] / n))
            .collect();
        let path = record.path("finite_density.svg");
        write_svg(
            &path,
            "finite-N one-point density",
            "u",
            "K(u, u) / N",
            &[Series::line("K(u, u) / N", diagonal)],
        )?;
        record.add(path);
    }
    println!("{} kernel values written", rows.len());
    record.finish(
        cli.seed,
        json!({"command": "kernel finite", "eigenvalues": eigenvalues, "ct": ct, "xi": xi, "grid": grid, "contour": config}),
    )?;
    Ok(Status::Success)
}

/// Histogram settings of an ensemble run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSpec {
    pub window: (f64, f64),
    pub bins: usize,
}

/// Settings of `ensemble verify`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    /// Location of the singularity for cusp-normalised rigidity and the cusp suite.
    #[serde(default)]
    pub near: Option<f64>,
    /// Spectral window of the delocalisation suite.
    #[serde(default)]
    pub window: Option<(f64, f64)>,
    /// Real parts of the local-law probes.
    #[serde(default)]
    pub points: Option<Vec<f64>>,
    /// Resolvent entries sampled per probe in the isotropic law.
    #[serde(default = "default_pairs")]
    pub pairs: usize,
}

fn default_pairs() -> usize {
    10
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            near: None,
            window: None,
            points: None,
            pairs: default_pairs(),
        }
    }
}

/// `ensemble run --config` file.
///
/// ```toml
/// trials = 20
/// entry_law = "gaussian"
/// epsilon_exp = 0.1        # optional: ct = N^(-1/2 + epsilon_exp)
/// gue_time = 0.05          # optional: explicit ct (overrides epsilon_exp)
/// eigenvectors = false
///
/// [model]
/// n = 400
/// [model.family]
/// kind = "flat-semicircle"
///
/// [histogram]
/// window = [-2.5, 2.5]
/// bins = 50
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleFile {
    pub trials: usize,
    #[serde(default = "default_law")]
    pub entry_law: EntryLaw,
    #[serde(default)]
    pub gue_time: Option<f64>,
    #[serde(default)]
    pub epsilon_exp: Option<f64>,
    #[serde(default)]
    pub eigenvectors: bool,
    pub model: ModelFile,
    #[serde(default)]
    pub histogram: Option<HistogramSpec>,
    #[serde(default)]
    pub verify: VerifySpec,
}

fn default_law() -> EntryLaw {
    EntryLaw::Gaussian
}

impl EnsembleFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())).into())
    }

    pub fn config(&self, seed: u64) -> Result<EnsembleConfig> {
        let model = self.model.instantiate()?;
        let n = model.n() as f64;
        let config = match (self.gue_time, self.epsilon_exp) {
            (Some(ct), eps) => EnsembleConfig::with_gue(
                model,
                self.trials,
                seed,
                self.entry_law,
                ct,
                eps.unwrap_or(0.0),
            )?,
            (None, Some(eps)) => EnsembleConfig::with_gue(
                model,
                self.trials,
                seed,
                self.entry_law,
                n.powf(-0.5 + eps),
                eps,
            )?,
            (None, None) => EnsembleConfig::new(model, self.trials, seed, self.entry_law)?,
        };
        Ok(config)
    }
}

/// Density profile and support of the (unscaled) model over its spectrum.
fn model_profile(model: &ModelSpec) -> Result<(DensityProfile, SupportMap)> {
    let wide = density_grid(model, (-12.0, 12.0), 1e-2, 1e-6)?;
    let hull = find_support(&wide, 1e-6)?.hull();
    let profile = density_grid(model, (hull.0 - 0.5, hull.1 + 0.5), 1e-3, 1e-9)?;
    let support = find_support(&profile, 1e-6)?;
    Ok((profile, support))
}

fn write_spectra(record: &mut RunRecord, samples: &[SpectrumSample]) -> Result<()> {
    for sample in samples {
        let path = record.path(&format!("spectra/trial_{:04}.csv", sample.trial));
        match &sample.pre_gue {
            Some(pre) if pre.len() == sample.eigenvalues.len() => write_csv(
                &path,
                &["index", "eigenvalue", "pre_gue"],
                sample
                    .eigenvalues
                    .iter()
                    .zip(pre)
                    .enumerate()
                    .map(|(i, (&l, &p))| vec![i as f64, l, p]),
            )?,
            _ => write_csv(
                &path,
                &["index", "eigenvalue"],
                sample
                    .eigenvalues
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| vec![i as f64, l]),
            )?,
        }
        record.add(path);
    }
    Ok(())
}

fn ensemble_run(cli: &Cli, path: &Path) -> Result<Status> {
    let file = EnsembleFile::load(path)?;
    let config = file.config(cli.seed)?;
    let opts = SampleOptions {
        eigenvectors: file.eigenvectors,
        pre_gue_spectrum: config.gue_time > 0.0,
        ..Default::default()
    };
    let samples = run_trials(&config, opts)?;
    let mut record = RunRecord::new(&cli.out)?;
    write_spectra(&mut record, &samples)?;
    let flowed = config.model.with_added_variance(0.0)?;
    let (profile, support) = model_profile(&flowed)?;
    let spec = file.histogram.clone().unwrap_or(HistogramSpec {
        window: profile.window(),
        bins: 60,
    });
    if spec.bins == 0 || !(spec.window.0 < spec.window.1) {
        return Err(invalid(
            "histogram needs a nonempty window and at least one bin",
        ));
    }
    let edges = grid_points((spec.window.0, spec.window.1, spec.bins + 1));
    let histogram = Histogram::new(
        edges,
        samples.iter().flat_map(|s| s.eigenvalues.iter().copied()),
        samples.len(),
    );
    let hist_csv = record.path("histogram.csv");
    std::fs::write(&hist_csv, histogram.to_csv())?;
    record.add(hist_csv);
    let n = config.model.n() as f64;
    let centers = histogram.centers();
    let model_density: Vec<(f64, f64)> = if config.gue_time > 0.0 {
        let reduced = DysonSolver::new(
            &config.model.with_added_variance(config.gue_time)?,
            SolverOptions::default(),
        );
        centers
            .iter()
            .map(|&x| (x, reduced.density(x, 1e-9).unwrap_or(f64::NAN)))
            .collect()
    } else {
        centers
            .iter()
            .map(|&x| (x, profile.interpolate(x)))
            .collect()
    };
    let svg = record.path("histogram.svg");
    write_svg(
        &svg,
        "empirical eigenvalue density",
        "eigenvalue",
        "density",
        &[
            Series::steps(
                "empirical",
                centers
                    .iter()
                    .copied()
                    .zip(histogram.density.iter().map(|d| d / n))
                    .collect(),
            ),
            Series::line("self-consistent", model_density),
        ],
    )?;
    record.add(svg);
    let mut stats = serde_json::Map::new();
    stats.insert("trials".into(), json!(samples.len()));
    stats.insert("n".into(), json!(config.model.n()));
    stats.insert("ct".into(), json!(config.gue_time));
    let extremes: Vec<(f64, f64)> = samples
        .iter()
        .map(|s| (s.eigenvalues[0], s.eigenvalues[s.eigenvalues.len() - 1]))
        .collect();
    stats.insert(
        "smallest_eigenvalue".into(),
        json!(extremes.iter().map(|e| e.0).fold(f64::INFINITY, f64::min)),
    );
    stats.insert(
        "largest_eigenvalue".into(),
        json!(extremes
            .iter()
            .map(|e| e.1)
            .fold(f64::NEG_INFINITY, f64::max)),
    );
    if config.gue_time == 0.0 {
        stats.insert(
            "rigidity".into(),
            serde_json::to_value(verify_rigidity(&samples, &profile, None)?)?,
        );
    }
    if file.eigenvectors {
        let window = file.verify.window.unwrap_or(support.hull());
        stats.insert(
            "delocalization".into(),
            serde_json::to_value(verify_delocalization(&samples, window)?)?,
        );
    }
    let stats_path = record.path("stats.json");
    write_json(&stats_path, &stats)?;
    record.add(stats_path);
    println!(
        "{} trials of dimension {} written to {}",
        samples.len(),
        config.model.n(),
        cli.out.display()
    );
    record.finish(cli.seed, json!({"command": "ensemble run", "config": file}))?;
    Ok(Status::Success)
}

fn ensemble_verify(cli: &Cli, path: &Path, suite: Suite) -> Result<Status> {
    let file = EnsembleFile::load(path)?;
    let config = file.config(cli.seed)?;
    let model = config.model.clone();
    let n = model.n();
    let required = TOLERANCES.pass_fraction;
    let near = file.verify.near;
    let vectors = matches!(suite, Suite::Locallaw | Suite::Deloc);
    if suite != Suite::Cusp && config.gue_time > 0.0 {
        return Err(invalid(
            "the rigidity, local-law and delocalisation suites need gue_time = 0",
        ));
    }
    let opts = SampleOptions {
        eigenvectors: vectors,
        pre_gue_spectrum: suite == Suite::Cusp,
        skip_final_spectrum: false,
    };
    let samples = run_trials(&config, opts)?;
    let (profile, support) = model_profile(&model)?;
    let report = match near {
        Some(x) => Some(classify(&model, &profile, &support, x)?),
        None => None,
    };
    let mut output = serde_json::Map::new();
    output.insert("suite".into(), serde_json::to_value(suite)?);
    let passed = match suite {
        Suite::Rigidity => {
            let stats = verify_rigidity(&samples, &profile, report.as_ref())?;
            output.insert("rigidity".into(), serde_json::to_value(&stats)?);
            stats.passes(required)
        }
        Suite::Deloc => {
            let window = file.verify.window.unwrap_or(support.hull());
            let stats = verify_delocalization(&samples, window)?;
            output.insert("delocalization".into(), serde_json::to_value(&stats)?);
            delocalization_passes(&stats, required)
        }
        Suite::Locallaw => {
            let taus = match (&file.verify.points, &report) {
                (Some(p), _) => p.clone(),
                (None, Some(r)) => vec![r.location],
                (None, None) => {
                    let q = quantiles(&profile, 10)?;
                    q[1..q.len() - 1].to_vec()
                }
            };
            let points = taus
                .iter()
                .map(|&t| {
                    let eta = match &report {
                        Some(_) => (n as f64).powf(-0.6),
                        None => {
                            (n as f64).powf(0.1) * compute_eta_f(&profile, &support, t, n)?.eta_f
                        }
                    };
                    Ok(SpectralPoint::new(t, eta))
                })
                .collect::<cusp_core::Result<Vec<_>>>()?;
            let distances: Vec<f64> = points.iter().map(|p| p.eta).collect();
            let (averaged, isotropic) = verify_local_law(
                &samples,
                &model,
                &points,
                &distances,
                file.verify.pairs,
                cli.seed,
            )?;
            output.insert("averaged".into(), serde_json::to_value(&averaged)?);
            output.insert("isotropic".into(), serde_json::to_value(&isotropic)?);
            averaged.passes(required) && (report.is_none() || isotropic.passes(required))
        }
        Suite::Cusp => {
            let report = report.ok_or_else(|| invalid("the cusp suite needs verify.near"))?;
            if config.gue_time <= 0.0 {
                return Err(invalid("the cusp suite needs gue_time or epsilon_exp"));
            }
            let ct = config.gue_time;
            let reduced = DysonSolver::new(&config.reduced_model()?, SolverOptions::default());
            let xi = report.base_point
                + ct * reduced
                    .average(num_complex::Complex64::new(report.base_point, 1e-12))?
                    .re;
            let setup = CuspSetup {
                base_point: report.base_point,
                gamma: report.gamma,
                alpha: pearcey_alpha(&report, n),
                n,
                ct,
                xi,
            };
            let kernel = PearceyKernel::new(setup.alpha, ContourSpec::default())?;
            let stats: VerificationStats =
                cusp_statistics(&samples, &setup, &kernel, &CuspStatOptions::default())?;
            output.insert("setup".into(), serde_json::to_value(setup)?);
            output.insert("cusp".into(), serde_json::to_value(&stats)?);
            let l1 = stats
                .extra
                .get("conditional_l1")
                .copied()
                .unwrap_or(f64::NAN);
            l1 <= TOLERANCES.universality_l1
        }
    };
    output.insert("passed".into(), json!(passed));
    let mut record = RunRecord::new(&cli.out)?;
    let stats_path = record.path("verify.json");
    write_json(&stats_path, &output)?;
    record.add(stats_path);
    println!("{}", serde_json::to_string_pretty(&output)?);
    record.finish(
        cli.seed,
        json!({"command": "ensemble verify", "suite": suite, "config": file}),
    )?;
    Ok(if passed {
        Status::Success
    } else {
        Status::Failed
    })
}

fn verify_cmd(cli: &Cli, args: &VerifyArgs) -> Result<Status> {
    let ids: Vec<u8> = if !args.criteria.is_empty() {
        args.criteria.clone()
    } else if args.quick {
        QUICK.to_vec()
    } else {
        CRITERIA.iter().map(|c| c.0).collect()
    };
    if let Some(bad) = ids.iter().find(|id| !CRITERIA.iter().any(|c| c.0 == **id)) {
        return Err(invalid(format!("unknown criterion {bad}")));
    }
    let mut scale = match args.scale {
        Scale::Full => SuiteScale::full(),
        Scale::Reduced => SuiteScale::reduced(),
    };
    scale.seed = cli.seed;
    let outcomes = run_suite(&ids, scale, |o| println!("{}", o.line()));
    let all_passed = outcomes.iter().all(|o| o.passed);
    let mut record = RunRecord::new(&cli.out)?;
    let report = record.path("verify_report.json");
    write_json(
        &report,
        &json!({"all_passed": all_passed, "criteria": outcomes, "scale": scale, "tolerances": TOLERANCES}),
    )?;
    record.add(report);
    println!(
        "{} of {} criteria passed",
        outcomes.iter().filter(|o| o.passed).count(),
        outcomes.len()
    );
    record
        .finish(
            cli.seed,
            json!({"command": "verify", "criteria": ids, "scale": scale}),
        )
        .map_err(|e| anyhow!(e))?;
    Ok(if all_passed {
        Status::Success
    } else {
        Status::Failed
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_and_grids() {
        assert_eq!(parse_range("-3:3").unwrap(), (-3.0, 3.0));
        assert!(parse_range("3:-3").is_err());
        assert!(parse_range("1").is_err());
        assert_eq!(parse_grid("0:1:5").unwrap(), (0.0, 1.0, 5));
        assert!(parse_grid("0:1:1").is_err());
        assert_eq!(grid_points((0.0, 1.0, 3)), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn validation_errors_map_to_exit_code_two() {
        assert_eq!(exit_code(&parse_range("x:1").unwrap_err()), 2);
        let numeric: anyhow::Error = Error::Divergence {
            iterations: 3,
            residual: 1.0,
        }
        .into();
        assert_eq!(exit_code(&numeric), 3);
    }

    #[test]
    fn ensemble_file_parses_documented_example() {
        let text = r#"
            trials = 4
            entry_law = "rademacher-like"
            [model]
            n = 10
            [model.family]
            kind = "flat-semicircle"
            [histogram]
            window = [-2.5, 2.5]
            bins = 10
        "#;
        let file: EnsembleFile = toml::from_str(text).unwrap();
        let config = file.config(1).unwrap();
        assert_eq!(config.trials, 4);
        assert_eq!(config.gue_time, 0.0);
        assert!(toml::from_str::<EnsembleFile>(
            "trials = 1\nbogus = 2\n[model]\nn = 2\n[model.family]\nkind = \"flat-semicircle\""
        )
        .is_err());
    }
}
