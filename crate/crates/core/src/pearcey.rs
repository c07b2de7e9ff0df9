//! Pearcey kernel and the finite-N Brézin–Hikami kernel by contour quadrature.

use crate::linalg::determinant;
use crate::quad::GaussLegendre;
use crate::{invalid, Error, Result};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_4, PI};

const NODES_PER_PANEL: usize = 16;

/// Truncation and discretisation of the integration contours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourSpec {
    pub truncation_radius: f64,
    pub panels_per_unit: usize,
    pub deformation_offset: f64,
}

impl Default for ContourSpec {
    fn default() -> Self {
        Self {
            truncation_radius: 8.0,
            panels_per_unit: 3,
            deformation_offset: 0.5,
        }
    }
}

impl ContourSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.deformation_offset > 0.0) {
            return invalid(format!(
                "deformation offset must be positive, got {}",
                self.deformation_offset
            ));
        }
        if !(self.truncation_radius >= 6.0) {
            return invalid(format!(
                "truncation radius must be at least 6, got {}",
                self.truncation_radius
            ));
        }
        if self.panels_per_unit == 0 {
            return invalid("panels_per_unit must be positive");
        }
        Ok(())
    }

    fn panel_length(&self) -> f64 {
        1.0 / self.panels_per_unit as f64
    }
}

/// Kernel value with a refinement-based error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelEvaluation {
    pub value: f64,
    pub abs_error_estimate: f64,
    /// Imaginary part of the assembled integral (zero in exact arithmetic).
    pub imaginary_part: f64,
    pub config: ContourSpec,
}

fn check_convergence(
    fine: Complex64,
    coarse: Complex64,
    config: ContourSpec,
) -> Result<KernelEvaluation> {
    let est = (fine - coarse).norm();
    if est > 0.5 * fine.norm().max(1e-12) && est > 1e-10 {
        return Err(Error::Accuracy {
            target: 0.5 * fine.norm(),
            estimate: est,
        });
    }
    Ok(KernelEvaluation {
        value: fine.re,
        abs_error_estimate: est,
        imaginary_part: fine.im,
        config,
    })
}

/// Quadrature nodes `(point, weight)` with the orientation folded into the weight.
#[derive(Debug, Clone, Default)]
struct Path {
    points: Vec<Complex64>,
    weights: Vec<Complex64>,
}

impl Path {
    /// Straight segment from `start` of the given length along the unit direction `dir`.
    fn segment(
        &mut self,
        gl: &GaussLegendre,
        start: Complex64,
        dir: Complex64,
        length: f64,
        panel: f64,
    ) {
        let panels = (length / panel).ceil().max(1.0) as usize;
        let h = length / panels as f64;
        for p in 0..panels {
            for (r, w) in gl.mapped(p as f64 * h, (p + 1) as f64 * h) {
                self.points.push(start + dir * r);
                self.weights.push(dir * w);
            }
        }
    }

    /// Segment from `a` to `b`.
    fn line(&mut self, gl: &GaussLegendre, a: Complex64, b: Complex64, panel: f64) {
        let d = b - a;
        self.segment(gl, a, d / d.norm(), d.norm(), panel);
    }

    /// Segment traversed towards `end`: from `end + dir·length` back to `end`.
    fn inbound(
        &mut self,
        gl: &GaussLegendre,
        end: Complex64,
        dir: Complex64,
        length: f64,
        panel: f64,
    ) {
        let start = end + dir * length;
        self.segment(gl, start, -dir, length, panel);
    }

    /// Nodes whose log-magnitude lies within `depth` of the largest one.
    fn keep_above(self, log_magnitude: &[f64], depth: f64) -> Self {
        let top = log_magnitude
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut out = Path::default();
        for ((p, w), &m) in self.points.into_iter().zip(self.weights).zip(log_magnitude) {
            if m >= top - depth {
                out.points.push(p);
                out.weights.push(w);
            }
        }
        out
    }
}

/// Precomputed quadrature for `K_α` at fixed `α` and contour.
#[derive(Debug, Clone)]
pub struct PearceyKernel {
    alpha: f64,
    config: ContourSpec,
    fine: PearceyRule,
    coarse: PearceyRule,
}

#[derive(Debug, Clone)]
struct PearceyRule {
    z: Vec<Complex64>,
    zf: Vec<Complex64>,
    w: Vec<Complex64>,
    wf: Vec<Complex64>,
}

impl PearceyRule {
    fn new(alpha: f64, config: &ContourSpec, panel: f64) -> Self {
        let gl = GaussLegendre::new(NODES_PER_PANEL);
        let r = config.truncation_radius;
        let d = config.deformation_offset;
        let ray = |angle: f64| Complex64::from_polar(1.0, angle);
        let mut xi = Path::default();
        // right branch: in from ∞e^{iπ/4} to +δ, out to ∞e^{-iπ/4}
        xi.inbound(&gl, Complex64::new(d, 0.0), ray(FRAC_PI_4), r, panel);
        xi.segment(&gl, Complex64::new(d, 0.0), ray(-FRAC_PI_4), r, panel);
        // left branch: in from ∞e^{5iπ/4} to -δ, out to ∞e^{3iπ/4}
        xi.inbound(&gl, Complex64::new(-d, 0.0), ray(5.0 * FRAC_PI_4), r, panel);
        xi.segment(&gl, Complex64::new(-d, 0.0), ray(3.0 * FRAC_PI_4), r, panel);
        let mut phi = Path::default();
        phi.line(&gl, Complex64::new(0.0, -r), Complex64::new(0.0, r), panel);
        Self::from_paths(alpha, xi, phi)
    }

    fn from_paths(alpha: f64, xi: Path, phi: Path) -> Self {
        let zf = xi
            .points
            .iter()
            .zip(&xi.weights)
            .map(|(&z, &wt)| wt * (z.powi(4) / 4.0 - alpha * z * z / 2.0).exp())
            .collect();
        let wf = phi
            .points
            .iter()
            .zip(&phi.weights)
            .map(|(&w, &wt)| wt * (-w.powi(4) / 4.0 + alpha * w * w / 2.0).exp())
            .collect();
        Self {
            z: xi.points,
            zf,
            w: phi.points,
            wf,
        }
    }

    fn eval(&self, x: f64, y: f64) -> Complex64 {
        let za: Vec<Complex64> = self
            .z
            .iter()
            .zip(&self.zf)
            .map(|(&z, &f)| f * (x * z).exp())
            .collect();
        let sum: Complex64 = self
            .w
            .par_iter()
            .zip(&self.wf)
            .map(|(&w, &f)| {
                let inner: Complex64 = self.z.iter().zip(&za).map(|(&z, &a)| a / (w - z)).sum();
                f * (-y * w).exp() * inner
            })
            .collect::<Vec<_>>()
            .iter()
            .sum();
        sum / (Complex64::new(0.0, 2.0 * PI).powi(2))
    }
}

impl PearceyKernel {
    pub fn new(alpha: f64, config: ContourSpec) -> Result<Self> {
        config.validate()?;
        if !alpha.is_finite() {
            return invalid("alpha must be finite");
        }
        let panel = config.panel_length();
        Ok(Self {
            alpha,
            config,
            fine: PearceyRule::new(alpha, &config, panel),
            coarse: PearceyRule::new(alpha, &config, 2.0 * panel),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Number of `(z, w)` nodes of the fine rule.
    pub fn node_counts(&self) -> (usize, usize) {
        (self.fine.z.len(), self.fine.w.len())
    }

    pub fn evaluate(&self, x: f64, y: f64) -> Result<KernelEvaluation> {
        let half = self.config.truncation_radius / 2.0;
        if x.abs() > half || y.abs() > half {
            return invalid(format!("arguments ({x}, {y}) exceed R/2 = {half}"));
        }
        check_convergence(self.fine.eval(x, y), self.coarse.eval(x, y), self.config)
    }

    /// Fine-rule value only (no error estimate).
    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.fine.eval(x, y).re
    }

    /// `det(K_α(x_i, x_j))`.
    pub fn correlation(&self, points: &[f64]) -> Result<f64> {
        check_points(points)?;
        let k = points.len();
        let mut m = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                m[i * k + j] = self.evaluate(points[i], points[j])?.value;
            }
        }
        Ok(determinant(&m, k))
    }
}

fn check_points(points: &[f64]) -> Result<()> {
    if points.is_empty() || points.len() > 8 {
        return invalid(format!(
            "between 1 and 8 points required, got {}",
            points.len()
        ));
    }
    for i in 0..points.len() {
        for j in 0..i {
            if points[i] == points[j] {
                return invalid(format!("points must be distinct, {} repeats", points[i]));
            }
        }
    }
    Ok(())
}

/// `K_α(x, y)` on the δ-shifted contours.
pub fn pearcey_kernel(
    x: f64,
    y: f64,
    alpha: f64,
    contour: ContourSpec,
) -> Result<KernelEvaluation> {
    PearceyKernel::new(alpha, contour)?.evaluate(x, y)
}

/// `det(K_α(x_i, x_j))_{i,j}` for up to eight distinct points.
pub fn pearcey_correlation(points: &[f64], alpha: f64, contour: ContourSpec) -> Result<f64> {
    PearceyKernel::new(alpha, contour)?.correlation(points)
}

/// Independent evaluation of `K_α` for cross-checks.
///
/// Trapezoidal rule with ten times the node count of `contour`, on smooth
/// hyperbolic branches through `±2δ` asymptotic to the same rays.
pub fn pearcey_kernel_oracle(
    x: f64,
    y: f64,
    alpha: f64,
    contour: ContourSpec,
) -> Result<Complex64> {
    contour.validate()?;
    let r = contour.truncation_radius;
    let d = 2.0 * contour.deformation_offset;
    let per_branch =
        10 * 2 * (r * contour.panels_per_unit as f64).ceil() as usize * NODES_PER_PANEL;
    let t_max = (r / d).asinh();
    let dt = 2.0 * t_max / (per_branch - 1) as f64;
    let mut xi = Path::default();
    for k in 0..per_branch {
        let t = -t_max + k as f64 * dt;
        let end = if k == 0 || k == per_branch - 1 {
            0.5
        } else {
            1.0
        };
        // right branch runs downwards, left branch upwards
        let right = Complex64::new(d * t.cosh(), -d * t.sinh());
        let dright = Complex64::new(d * t.sinh(), -d * t.cosh());
        let left = Complex64::new(-d * t.cosh(), d * t.sinh());
        let dleft = Complex64::new(-d * t.sinh(), d * t.cosh());
        xi.points.push(right);
        xi.weights.push(dright * dt * end);
        xi.points.push(left);
        xi.weights.push(dleft * dt * end);
    }
    let per_phi = 10 * (2.0 * r * contour.panels_per_unit as f64).ceil() as usize * NODES_PER_PANEL;
    let dy = 2.0 * r / (per_phi - 1) as f64;
    let mut phi = Path::default();
    for k in 0..per_phi {
        let end = if k == 0 || k == per_phi - 1 { 0.5 } else { 1.0 };
        phi.points.push(Complex64::new(0.0, -r + k as f64 * dy));
        phi.weights.push(Complex64::new(0.0, dy * end));
    }
    Ok(PearceyRule::from_paths(alpha, xi, phi).eval(x, y))
}

/// Spectrum and scaling data for the Brézin–Hikami kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteKernelInput {
    pub eigenvalues: Vec<f64>,
    pub ct: f64,
    pub xi: f64,
    pub base_point: f64,
    pub gamma: f64,
    pub n: usize,
}

/// Smallest admissible distance between `ξ` and the spectrum, in mean level spacings.
pub const MIN_SEPARATION: f64 = 0.05;

impl FiniteKernelInput {
    pub fn new(
        mut eigenvalues: Vec<f64>,
        ct: f64,
        xi: f64,
        base_point: f64,
        gamma: f64,
    ) -> Result<Self> {
        if eigenvalues.is_empty() || eigenvalues.iter().any(|v| !v.is_finite()) {
            return invalid("eigenvalues must be a nonempty list of finite numbers");
        }
        if !(ct > 0.0) || !(gamma > 0.0) || !xi.is_finite() || !base_point.is_finite() {
            return invalid(format!("ct = {ct} and gamma = {gamma} must be positive"));
        }
        eigenvalues.sort_by(f64::total_cmp);
        let n = eigenvalues.len();
        let input = Self {
            eigenvalues,
            ct,
            xi,
            base_point,
            gamma,
            n,
        };
        let gap = input.distance_to_spectrum();
        if gap < MIN_SEPARATION * input.mean_spacing() {
            return Err(Error::ContourConflict(format!(
                "xi = {xi} lies within {gap:.3e} of an eigenvalue (mean spacing {:.3e})",
                input.mean_spacing()
            )));
        }
        Ok(input)
    }

    /// Mean level spacing; for a single eigenvalue the Gaussian scale `√ct`.
    pub fn mean_spacing(&self) -> f64 {
        let l = &self.eigenvalues;
        if l.len() > 1 && l[l.len() - 1] > l[0] {
            (l[l.len() - 1] - l[0]) / (l.len() - 1) as f64
        } else {
            self.ct.sqrt()
        }
    }

    pub fn distance_to_spectrum(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|l| (l - self.xi).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Half-width of the rectangles around the eigenvalue clusters.
    pub fn margin(&self) -> f64 {
        (3.0 * self.mean_spacing()).min(0.5 * self.distance_to_spectrum())
    }

    fn log_modulus(&self, z: Complex64) -> f64 {
        let y2 = z.im * z.im;
        0.5 * self
            .eigenvalues
            .iter()
            .map(|&l| ((z.re - l).powi(2) + y2).ln())
            .sum::<f64>()
    }

    fn log_product(&self, z: Complex64) -> Complex64 {
        self.eigenvalues.iter().map(|&l| (z - l).ln()).sum()
    }
}

/// Nodes whose integrand bound lies this far below the largest one are dropped.
const PRUNE_DEPTH: f64 = 50.0;

/// Precomputed Brézin–Hikami quadrature for one spectrum.
#[derive(Debug, Clone)]
pub struct FiniteKernel {
    input: FiniteKernelInput,
    config: ContourSpec,
    fine: FiniteRule,
    coarse: FiniteRule,
}

#[derive(Debug, Clone)]
struct FiniteRule {
    z: Vec<Complex64>,
    /// weight · exp(-N z²/2ct - Σ log(z - λ))
    zlog: Vec<Complex64>,
    zw: Vec<Complex64>,
    w: Vec<Complex64>,
    wlog: Vec<Complex64>,
    ww: Vec<Complex64>,
}

impl FiniteRule {
    fn new(input: &FiniteKernelInput, panel_scale: f64, window: Option<(f64, f64)>) -> Self {
        let gl = GaussLegendre::new(NODES_PER_PANEL);
        let h = input.margin();
        let panel = 1.5 * h / panel_scale;
        let nf = input.n as f64;
        let ct = input.ct;
        let xi = input.xi;
        let mut ups = Path::default();
        let left: Vec<f64> = input
            .eigenvalues
            .iter()
            .copied()
            .filter(|&l| l < xi)
            .collect();
        let right: Vec<f64> = input
            .eigenvalues
            .iter()
            .copied()
            .filter(|&l| l > xi)
            .collect();
        for cluster in [left, right] {
            if cluster.is_empty() {
                continue;
            }
            let lo = cluster[0] - h;
            let hi = cluster[cluster.len() - 1] + h;
            // counterclockwise rectangle
            let c = [
                Complex64::new(lo, -h),
                Complex64::new(hi, -h),
                Complex64::new(hi, h),
                Complex64::new(lo, h),
            ];
            for k in 0..4 {
                ups.line(&gl, c[k], c[(k + 1) % 4], panel);
            }
        }
        let growth = |y: f64| -> f64 {
            let w = Complex64::new(xi, y);
            (nf * w * w / (2.0 * ct) + input.log_product(w)).re
        };
        let top = growth(0.0);
        let mut extent = h;
        while growth(extent) > top - 60.0 && extent < 1e6 {
            extent *= 1.5;
        }
        let mut gamma = Path::default();
        gamma.line(
            &gl,
            Complex64::new(xi, -extent),
            Complex64::new(xi, extent),
            panel,
        );
        if let Some((lo, hi)) = window {
            let zmag: Vec<f64> = ups
                .points
                .par_iter()
                .map(|&z| {
                    let shift = (z.re - xi) * nf / ct;
                    (-nf * z * z / (2.0 * ct)).re - input.log_modulus(z)
                        + (lo * shift).max(hi * shift)
                })
                .collect();
            let wmag: Vec<f64> = gamma
                .points
                .par_iter()
                .map(|&w| (nf * w * w / (2.0 * ct)).re + input.log_modulus(w))
                .collect();
            ups = ups.keep_above(&zmag, PRUNE_DEPTH);
            gamma = gamma.keep_above(&wmag, PRUNE_DEPTH);
        }
        let zlog = ups
            .points
            .par_iter()
            .map(|&z| -nf * z * z / (2.0 * ct) - input.log_product(z))
            .collect();
        let wlog = gamma
            .points
            .par_iter()
            .map(|&w| nf * w * w / (2.0 * ct) + input.log_product(w))
            .collect();
        Self {
            z: ups.points,
            zlog,
            zw: ups.weights,
            w: gamma.points,
            wlog,
            ww: gamma.weights,
        }
    }

    /// Double integral with the `u`/`v` dependent exponents supplied by the caller.
    fn eval<U, V>(&self, input: &FiniteKernelInput, zexp: U, wexp: V) -> Complex64
    where
        U: Fn(Complex64) -> Complex64,
        V: Fn(Complex64) -> Complex64,
    {
        let a: Vec<Complex64> = self
            .z
            .iter()
            .zip(&self.zlog)
            .map(|(&z, &l)| l + zexp(z))
            .collect();
        let b: Vec<Complex64> = self
            .w
            .iter()
            .zip(&self.wlog)
            .map(|(&w, &l)| l + wexp(w))
            .collect();
        let sa = a.iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max);
        let sb = b.iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max);
        let za: Vec<Complex64> = a
            .iter()
            .zip(&self.zw)
            .map(|(&l, &wt)| wt * (l - sa).exp())
            .collect();
        let sum: Complex64 = self
            .w
            .par_iter()
            .zip(&b)
            .zip(&self.ww)
            .map(|((&w, &l), &wt)| {
                let inner: Complex64 = self.z.iter().zip(&za).map(|(&z, &f)| f / (w - z)).sum();
                wt * (l - sb).exp() * inner
            })
            .collect::<Vec<_>>()
            .iter()
            .sum();
        let nf = input.n as f64;
        sum * (sa + sb).exp() * nf / (Complex64::new(0.0, 2.0 * PI).powi(2) * input.ct)
    }
}

impl FiniteKernel {
    pub fn new(input: FiniteKernelInput, config: ContourSpec) -> Result<Self> {
        config.validate()?;
        let p = config.panels_per_unit as f64;
        let fine = FiniteRule::new(&input, p, None);
        let coarse = FiniteRule::new(&input, p / 2.0, None);
        Ok(Self {
            input,
            config,
            fine,
            coarse,
        })
    }

    /// Kernel restricted to arguments in `window`: quadrature nodes whose
    /// contribution is negligible for every argument in the window are dropped.
    pub fn with_window(
        input: FiniteKernelInput,
        config: ContourSpec,
        window: (f64, f64),
    ) -> Result<Self> {
        config.validate()?;
        if !(window.0 <= window.1) {
            return invalid(format!("window {window:?} is empty"));
        }
        let p = config.panels_per_unit as f64;
        let fine = FiniteRule::new(&input, p, Some(window));
        let coarse = FiniteRule::new(&input, p / 2.0, Some(window));
        Ok(Self {
            input,
            config,
            fine,
            coarse,
        })
    }

    /// Quadrature nodes of the fine rule on the two contours.
    pub fn node_counts(&self) -> (usize, usize) {
        (self.fine.z.len(), self.fine.w.len())
    }

    pub fn input(&self) -> &FiniteKernelInput {
        &self.input
    }

    /// `K_N^t(u, v)` in the ξ-conjugated form.
    pub fn evaluate(&self, u: f64, v: f64) -> Result<KernelEvaluation> {
        let nf = self.input.n as f64;
        let (ct, xi) = (self.input.ct, self.input.xi);
        let zexp = |z: Complex64| nf * u * (z - xi) / ct;
        let wexp = |w: Complex64| -nf * v * (w - xi) / ct;
        let fine = self.fine.eval(&self.input, zexp, wexp);
        let coarse = self.coarse.eval(&self.input, zexp, wexp);
        check_convergence(fine, coarse, self.config)
    }

    /// Fine-rule value of `K_N^t(u, v)` (no error estimate).
    pub fn value(&self, u: f64, v: f64) -> f64 {
        let nf = self.input.n as f64;
        let (ct, xi) = (self.input.ct, self.input.xi);
        let zexp = |z: Complex64| nf * u * (z - xi) / ct;
        let wexp = |w: Complex64| -nf * v * (w - xi) / ct;
        self.fine.eval(&self.input, zexp, wexp).re
    }

    /// `K̂_N^t(u, v)`, the kernel before the ξ-conjugation.
    pub fn evaluate_unconjugated(&self, u: f64, v: f64) -> Result<KernelEvaluation> {
        let nf = self.input.n as f64;
        let ct = self.input.ct;
        let zexp = |z: Complex64| nf * (2.0 * u * z - u * u) / (2.0 * ct);
        let wexp = |w: Complex64| nf * (v * v - 2.0 * v * w) / (2.0 * ct);
        let fine = self.fine.eval(&self.input, zexp, wexp);
        let coarse = self.coarse.eval(&self.input, zexp, wexp);
        check_convergence(fine, coarse, self.config)
    }

    /// One-point density `K(u, u) / N`.
    pub fn density(&self, u: f64) -> Result<f64> {
        Ok(self.evaluate(u, u)?.value / self.input.n as f64)
    }

    /// `det(K(x_i, x_j) / N)`; `conjugated = false` uses the original kernel.
    pub fn correlation(&self, points: &[f64], conjugated: bool) -> Result<f64> {
        check_points(points)?;
        let k = points.len();
        let nf = self.input.n as f64;
        let mut m = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                let e = if conjugated {
                    self.evaluate(points[i], points[j])?
                } else {
                    self.evaluate_unconjugated(points[i], points[j])?
                };
                m[i * k + j] = e.value / nf;
            }
        }
        Ok(determinant(&m, k))
    }

    /// `N^{-3/4} γ^{-1} K_N^t(b + x/(γN^{3/4}), b + y/(γN^{3/4}))`.
    pub fn rescaled(&self, x: f64, y: f64) -> Result<f64> {
        let scale = self.input.gamma * (self.input.n as f64).powf(0.75);
        let b = self.input.base_point;
        Ok(self.evaluate(b + x / scale, b + y / scale)?.value / scale)
    }
}

/// `K_N^t(u, v)` for a single pair of arguments.
pub fn finite_kernel(
    input: FiniteKernelInput,
    u: f64,
    v: f64,
    contour: ContourSpec,
) -> Result<KernelEvaluation> {
    FiniteKernel::new(input, contour)?.evaluate(u, v)
}

/// Rescaled kernel around the base point.
pub fn rescale_kernel(input: FiniteKernelInput, x: f64, y: f64) -> Result<f64> {
    FiniteKernel::new(input, ContourSpec::default())?.rescaled(x, y)
}

/// Pearcey parameter for a gap of length `gap`: `3(γΔ/4)^{2/3} N^{1/2}`.
pub fn alpha_for_gap(gamma: f64, gap: f64, n: usize) -> f64 {
    3.0 * (gamma * gap / 4.0).powf(2.0 / 3.0) * (n as f64).sqrt()
}

/// Pearcey parameter for a local minimum of height `rho_min`: `-(πρ(𝔪)/γ)² N^{1/2}`.
pub fn alpha_for_minimum(gamma: f64, rho_min: f64, n: usize) -> f64 {
    -(PI * rho_min / gamma).powi(2) * (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::GaussLegendre;
    use approx::assert_abs_diff_eq;

    fn small() -> ContourSpec {
        ContourSpec {
            truncation_radius: 6.0,
            panels_per_unit: 2,
            deformation_offset: 0.5,
        }
    }

    #[test]
    fn contour_spec_validation() {
        assert!(ContourSpec::default().validate().is_ok());
        assert!(ContourSpec {
            truncation_radius: 5.0,
            ..ContourSpec::default()
        }
        .validate()
        .is_err());
        assert!(ContourSpec {
            deformation_offset: 0.0,
            ..ContourSpec::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn kernel_is_real_and_deformation_invariant() {
        let k = PearceyKernel::new(0.0, ContourSpec::default()).unwrap();
        let e = k.evaluate(1.0, -1.0).unwrap();
        assert!(e.imaginary_part.abs() < 1e-10);
        let other = ContourSpec {
            truncation_radius: 12.0,
            deformation_offset: 1.0,
            ..ContourSpec::default()
        };
        let f = pearcey_kernel(1.0, -1.0, 0.0, other).unwrap();
        assert_abs_diff_eq!(e.value, f.value, epsilon = 1e-8);
    }

    #[test]
    fn density_is_positive_and_dips_with_alpha() {
        let at_zero: Vec<f64> = [0.0, 1.0, 2.0]
            .iter()
            .map(|&a| PearceyKernel::new(a, small()).unwrap().value(0.0, 0.0))
            .collect();
        assert!(at_zero[0] > 0.0);
        assert!(at_zero[0] > at_zero[1] && at_zero[1] > at_zero[2]);
    }

    #[test]
    fn repulsion_at_close_points() {
        let k = PearceyKernel::new(0.0, small()).unwrap();
        let d = k.correlation(&[0.3, 0.301]).unwrap();
        let kxx = k.value(0.3, 0.3);
        assert!(d.abs() <= 1e-4 * kxx * kxx);
        assert!(k.correlation(&[0.3, 0.3]).is_err());
    }

    #[test]
    fn single_eigenvalue_gives_gaussian() {
        let input = FiniteKernelInput::new(vec![0.0], 1.0, 2.0, 0.0, 1.0).unwrap();
        let k = FiniteKernel::new(input, ContourSpec::default()).unwrap();
        for u in [-2.0f64, -0.5, 0.0, 1.0, 3.0] {
            let exact = (-u * u / 2.0).exp() / (2.0 * PI).sqrt();
            assert_abs_diff_eq!(k.density(u).unwrap(), exact, epsilon = 1e-8);
        }
    }

    #[test]
    fn conjugation_preserves_determinants() {
        let eig = vec![-1.3, -0.9, -0.2, 0.4, 0.8, 1.5];
        let input = FiniteKernelInput::new(eig, 0.3, 0.1, 0.1, 1.0).unwrap();
        let k = FiniteKernel::new(input, ContourSpec::default()).unwrap();
        let pts = [-0.4, 0.2, 0.9];
        for m in 1..=3 {
            let a = k.correlation(&pts[..m], true).unwrap();
            let b = k.correlation(&pts[..m], false).unwrap();
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn trace_of_small_spectrum() {
        let eig = vec![-1.0, -0.5, 0.3, 1.1];
        let input = FiniteKernelInput::new(eig, 0.5, 0.0, 0.0, 1.0).unwrap();
        let k = FiniteKernel::new(input, ContourSpec::default()).unwrap();
        let gl = GaussLegendre::new(40);
        let mut total = 0.0;
        for p in 0..12 {
            let a = -3.0 + 0.5 * p as f64;
            total += gl.integrate(a, a + 0.5, |u| k.value(u, u) / 4.0);
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn windowed_kernel_matches_full_rule() {
        let n = 120;
        let eig: Vec<f64> = (0..n)
            .map(|k| 2.0 * ((k as f64 + 0.5) / n as f64 * PI).cos())
            .collect();
        let input = FiniteKernelInput::new(eig, 0.2, 0.013, 0.0, 1.0).unwrap();
        let full = FiniteKernel::new(input.clone(), ContourSpec::default()).unwrap();
        let part = FiniteKernel::with_window(input, ContourSpec::default(), (-0.05, 0.05)).unwrap();
        assert!(part.node_counts().0 < full.node_counts().0);
        for u in [-0.05, 0.0, 0.03] {
            let a = full.evaluate(u, u).unwrap().value;
            let b = part.evaluate(u, u).unwrap().value;
            assert!((a - b).abs() <= 1e-9 * a.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn xi_on_an_eigenvalue_is_a_conflict() {
        let e = FiniteKernelInput::new(vec![-1.0, 0.0, 1.0], 1.0, 0.0, 0.0, 1.0).unwrap_err();
        assert!(matches!(e, Error::ContourConflict(_)));
    }
}
