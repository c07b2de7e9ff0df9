//! Vector Dyson equation `-1/m_i = z - a_i + (S m)_i` and the
//! self-consistent density of states.

use crate::linalg;
use crate::model::{ModelSpec, Reduction};
use crate::{Error, Result};
use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// A point `z = tau + i eta` of the upper half-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralPoint {
    pub tau: f64,
    pub eta: f64,
}

impl SpectralPoint {
    pub fn new(tau: f64, eta: f64) -> Self {
        Self { tau, eta }
    }

    pub fn z(&self) -> Complex64 {
        Complex64::new(self.tau, self.eta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Damped Newton with a damped fixed-point fallback.
    #[default]
    Newton,
    /// Damped fixed-point iteration only.
    FixedPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub theta0: f64,
    pub method: Method,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 100_000,
            theta0: 0.5,
            method: Method::Newton,
        }
    }
}

/// Solution of the Dyson equation at one spectral point.
#[derive(Debug, Clone, PartialEq)]
pub struct StieltjesSolution {
    pub m: Vec<Complex64>,
    pub z: SpectralPoint,
    pub residual: f64,
    pub iterations: usize,
    pub m_prime: Option<Vec<Complex64>>,
}

impl StieltjesSolution {
    /// `<m>`, the Stieltjes transform of the density.
    pub fn average(&self) -> Complex64 {
        self.m.iter().sum::<Complex64>() / self.m.len() as f64
    }

    /// Harmonic extension `rho(z) = <Im m>/pi`.
    pub fn density(&self) -> f64 {
        self.average().im / PI
    }
}

/// Per-class solution of the reduced equation.
#[derive(Debug, Clone)]
pub struct ReducedSolution {
    pub values: Vec<Complex64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Dyson solver bound to one model; the model is reduced once on construction.
#[derive(Debug, Clone)]
pub struct DysonSolver {
    red: Reduction,
    weights: Vec<f64>,
    opts: SolverOptions,
    kernel_norm: f64,
}

impl DysonSolver {
    pub fn new(model: &ModelSpec, opts: SolverOptions) -> Self {
        let red = model.reduce();
        let weights = red.weights();
        let k = red.classes();
        let kernel_norm = (0..k)
            .map(|i| red.kernel[i * k..(i + 1) * k].iter().sum::<f64>())
            .fold(0.0, f64::max);
        Self {
            red,
            weights,
            opts,
            kernel_norm,
        }
    }

    pub fn reduction(&self) -> &Reduction {
        &self.red
    }

    pub fn options(&self) -> SolverOptions {
        self.opts
    }

    pub fn classes(&self) -> usize {
        self.red.classes()
    }

    /// Defect `max_k |1/m_k + z - a_k + (R m)_k|`.
    pub fn residual(&self, z: Complex64, m: &[Complex64]) -> f64 {
        let k = self.classes();
        let mut worst = 0.0_f64;
        for i in 0..k {
            let acc = m[i].inv() + z - self.red.shifts[i] + self.coupling(i, m);
            let r = acc.norm();
            if !r.is_finite() {
                return f64::INFINITY;
            }
            worst = worst.max(r);
        }
        worst
    }

    /// Row `i` of the reduced kernel applied to `m`.
    fn coupling(&self, i: usize, m: &[Complex64]) -> Complex64 {
        let k = self.classes();
        self.red.kernel[i * k..(i + 1) * k]
            .iter()
            .zip(m)
            .map(|(&r, &x)| r * x)
            .sum()
    }

    fn map(&self, z: Complex64, m: &[Complex64]) -> Vec<Complex64> {
        let k = self.classes();
        (0..k)
            .map(|i| {
                let acc = z - self.red.shifts[i] + self.coupling(i, m);
                -acc.inv()
            })
            .collect()
    }

    fn jacobian(&self, m: &[Complex64]) -> Vec<Complex64> {
        let k = self.classes();
        let mut jac: Vec<Complex64> = self
            .red
            .kernel
            .iter()
            .map(|&x| Complex64::new(x, 0.0))
            .collect();
        for i in 0..k {
            jac[i * k + i] -= (m[i] * m[i]).inv();
        }
        jac
    }

    fn defect(&self, z: Complex64, m: &[Complex64]) -> Vec<Complex64> {
        let k = self.classes();
        (0..k)
            .map(|i| m[i].inv() + z - self.red.shifts[i] + self.coupling(i, m))
            .collect()
    }

    /// Damped fixed-point iteration with step halving and restarts on loss of positivity.
    fn fixed_point(
        &self,
        z: Complex64,
        start: &[Complex64],
        budget: usize,
    ) -> (Vec<Complex64>, f64, usize, bool) {
        let k = self.classes();
        let mut theta = self.opts.theta0;
        let mut m = start.to_vec();
        let mut res = self.residual(z, &m);
        let mut it = 0;
        while it < budget {
            if res <= self.opts.tolerance {
                return (m, res, it, true);
            }
            it += 1;
            let phi = self.map(z, &m);
            let next: Vec<Complex64> = m
                .iter()
                .zip(&phi)
                .map(|(a, b)| (1.0 - theta) * a + theta * b)
                .collect();
            if next.iter().any(|x| x.im <= 0.0 || !x.re.is_finite()) {
                theta *= 0.5;
                m = vec![I; k];
                res = self.residual(z, &m);
                if theta < 1e-12 {
                    break;
                }
                continue;
            }
            let r = self.residual(z, &next);
            if r > res {
                theta = (theta * 0.5).max(1e-6);
            }
            m = next;
            res = r;
        }
        let ok = res <= self.opts.tolerance;
        (m, res, it, ok)
    }

    /// Damped Newton iteration; returns `None` when it stalls.
    fn newton(
        &self,
        z: Complex64,
        start: &[Complex64],
        budget: usize,
    ) -> Option<(Vec<Complex64>, f64, usize)> {
        let k = self.classes();
        let mut m = start.to_vec();
        if m.iter().any(|x| x.im <= 0.0) {
            return None;
        }
        let mut res = self.residual(z, &m);
        for it in 0..budget {
            if res <= self.opts.tolerance * 1e-3 || (res <= self.opts.tolerance && it > 0) {
                return Some((m, res, it));
            }
            let mut jac = self.jacobian(&m);
            let mut step = self.defect(z, &m);
            linalg::solve_in_place(&mut jac, k, &mut step, 1e-15).ok()?;
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial: Vec<Complex64> =
                    m.iter().zip(&step).map(|(a, d)| a - lambda * d).collect();
                if trial.iter().all(|x| x.im > 0.0) {
                    let r = self.residual(z, &trial);
                    if r < res * (1.0 - 1e-4 * lambda) || r <= self.opts.tolerance * 1e-3 {
                        m = trial;
                        res = r;
                        accepted = true;
                        break;
                    }
                }
                lambda *= 0.5;
            }
            if !accepted {
                return if res <= self.opts.tolerance {
                    Some((m, res, it))
                } else {
                    None
                };
            }
        }
        (res <= self.opts.tolerance).then_some((m, res, budget))
    }

    fn solve_at(
        &self,
        z: Complex64,
        start: &[Complex64],
        budget: usize,
    ) -> Option<(Vec<Complex64>, f64, usize)> {
        if self.opts.method == Method::Newton {
            if let Some(r) = self.newton(z, start, 300.min(budget)) {
                return Some(r);
            }
        }
        let (m, res, it, ok) = self.fixed_point(z, start, budget);
        if ok && self.opts.method == Method::Newton {
            // polish to well below tolerance
            if let Some((m2, r2, it2)) = self.newton(z, &m, 5) {
                return Some((m2, r2, it + it2));
            }
        }
        ok.then_some((m, res, it))
    }

    /// Solves the reduced equation at `z`, optionally from a warm start.
    pub fn solve_reduced(
        &self,
        z: Complex64,
        warm: Option<&[Complex64]>,
    ) -> Result<ReducedSolution> {
        if !(z.im > 0.0) || !z.re.is_finite() {
            return Err(Error::Domain(format!("Im z must be positive, got z = {z}")));
        }
        let budget = self.opts.max_iterations;
        if let Some(w) = warm {
            if w.len() == self.classes() {
                if let Some((values, residual, iterations)) = self.solve_at(z, w, budget.min(2000))
                {
                    return Ok(ReducedSolution {
                        values,
                        residual,
                        iterations,
                    });
                }
            }
        }
        self.cold_solve(z)
    }

    fn cold_solve(&self, z: Complex64) -> Result<ReducedSolution> {
        let k = self.classes();
        let target = z.im;
        let mut eta = target.max(2.0 * self.kernel_norm.sqrt()).max(1.0);
        let mut total = 0usize;
        let mut m = vec![I; k];
        let mut last_res = f64::INFINITY;
        let mut zc = Complex64::new(z.re, eta);
        loop {
            let remaining = self.opts.max_iterations.saturating_sub(total);
            match self.solve_at(zc, &m, remaining) {
                Some((mm, res, it)) => {
                    m = mm;
                    last_res = res;
                    total += it;
                }
                None => {
                    if self.opts.method == Method::FixedPoint || remaining == 0 {
                        return Err(Error::Divergence {
                            iterations: total,
                            residual: last_res,
                        });
                    }
                    let (_, res, it, _) = self.fixed_point(zc, &m, remaining);
                    return Err(Error::Divergence {
                        iterations: total + it,
                        residual: res,
                    });
                }
            }
            if eta <= target {
                break;
            }
            let next = (eta / 4.0).max(target);
            // first-order predictor along the continuation path
            let znext = Complex64::new(z.re, next);
            if self.opts.method == Method::Newton {
                if let Ok(d) = self.derivative_reduced(&m) {
                    let pred: Vec<Complex64> = m
                        .iter()
                        .zip(&d)
                        .map(|(a, b)| a + (znext - zc) * b)
                        .collect();
                    if pred.iter().all(|x| x.im > 0.0)
                        && self.residual(znext, &pred) < self.residual(znext, &m)
                    {
                        m = pred;
                    }
                }
            }
            eta = next;
            zc = znext;
        }
        Ok(ReducedSolution {
            values: m,
            residual: last_res,
            iterations: total,
        })
    }

    /// `dm/dz` per class, from `(1 - diag(m^2) R) m' = m^2`.
    pub fn derivative_reduced(&self, m: &[Complex64]) -> Result<Vec<Complex64>> {
        let k = self.classes();
        let mut a = vec![Complex64::new(0.0, 0.0); k * k];
        for i in 0..k {
            let m2 = m[i] * m[i];
            for j in 0..k {
                a[i * k + j] = -m2 * self.red.kernel[i * k + j];
            }
            a[i * k + i] += 1.0;
        }
        let mut rhs: Vec<Complex64> = m.iter().map(|x| x * x).collect();
        linalg::solve_in_place(&mut a, k, &mut rhs, 1e-15).map_err(|_| {
            Error::NearSingular(
                "stability operator 1 - m^2 S is near-singular; increase eta".into(),
            )
        })?;
        Ok(rhs)
    }

    /// `<m(z)>`.
    pub fn average(&self, z: Complex64) -> Result<Complex64> {
        let r = self.solve_reduced(z, None)?;
        Ok(self.weighted(&r.values))
    }

    pub fn weighted(&self, values: &[Complex64]) -> Complex64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Solves at `z` and expands to a full solution.
    pub fn solve(&self, z: SpectralPoint, warm: Option<&[Complex64]>) -> Result<StieltjesSolution> {
        let warm_red = warm.map(|w| self.red.compress(w));
        let r = self.solve_reduced(z.z(), warm_red.as_deref())?;
        Ok(StieltjesSolution {
            m: self.red.expand(&r.values),
            z,
            residual: r.residual,
            iterations: r.iterations,
            m_prime: None,
        })
    }

    /// Density extrapolated to `eta -> 0` with one Richardson step:
    /// `2 rho(eta) - rho(2 eta)`, clamped at zero.
    pub fn density(&self, tau: f64, eta: f64) -> Result<f64> {
        let (r, _) = self.density_with_state(tau, eta, None)?;
        Ok(r)
    }

    /// As [`density`](Self::density), returning the solution at `eta` for warm starts.
    pub fn density_with_state(
        &self,
        tau: f64,
        eta: f64,
        warm: Option<&[Complex64]>,
    ) -> Result<(f64, Vec<Complex64>)> {
        let lo = self.solve_reduced(Complex64::new(tau, eta), warm)?;
        let hi = self.solve_reduced(Complex64::new(tau, 2.0 * eta), Some(&lo.values))?;
        let rho = richardson(
            self.weighted(&lo.values).im / PI,
            self.weighted(&hi.values).im / PI,
        );
        Ok((rho, lo.values))
    }
}

/// Two-point Richardson extrapolation to `eta = 0` from values at `eta` and `2 eta`.
pub fn richardson(at_eta: f64, at_2eta: f64) -> f64 {
    (2.0 * at_eta - at_2eta).max(0.0)
}

/// Solves the Dyson equation of `model` at `z`.
pub fn solve_point(
    model: &ModelSpec,
    z: SpectralPoint,
    opts: SolverOptions,
    warm_start: Option<&[Complex64]>,
) -> Result<StieltjesSolution> {
    if !(z.eta > 0.0) {
        return Err(Error::Domain(format!(
            "eta must be positive, got {}",
            z.eta
        )));
    }
    DysonSolver::new(model, opts).solve(z, warm_start)
}

/// `dm/dz` at a converged solution.
pub fn solve_derivative(model: &ModelSpec, sol: &StieltjesSolution) -> Result<Vec<Complex64>> {
    let solver = DysonSolver::new(model, SolverOptions::default());
    let red = solver.reduction();
    let d = solver.derivative_reduced(&red.compress(&sol.m))?;
    Ok(red.expand(&d))
}

/// Sampled density of states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub grid: Vec<f64>,
    pub rho: Vec<f64>,
    pub eta_eval: f64,
}

impl DensityProfile {
    /// Trapezoidal integral of the density.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.rho.windows(2))
            .map(|(x, r)| 0.5 * (x[1] - x[0]) * (r[0] + r[1]))
            .sum()
    }

    /// Linear interpolation; zero outside the grid.
    pub fn interpolate(&self, tau: f64) -> f64 {
        let g = &self.grid;
        if g.is_empty() || tau < g[0] || tau > g[g.len() - 1] {
            return 0.0;
        }
        let idx = g.partition_point(|&x| x <= tau);
        if idx == 0 {
            return self.rho[0];
        }
        if idx >= g.len() {
            return self.rho[g.len() - 1];
        }
        let (x0, x1) = (g[idx - 1], g[idx]);
        let w = (tau - x0) / (x1 - x0);
        self.rho[idx - 1] * (1.0 - w) + self.rho[idx] * w
    }

    /// Local grid spacing around `tau`.
    pub fn spacing_near(&self, tau: f64) -> f64 {
        let g = &self.grid;
        let idx = g.partition_point(|&x| x <= tau).clamp(1, g.len() - 1);
        g[idx] - g[idx - 1]
    }

    pub fn max_density(&self) -> f64 {
        self.rho.iter().copied().fold(0.0, f64::max)
    }

    pub fn window(&self) -> (f64, f64) {
        (self.grid[0], self.grid[self.grid.len() - 1])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("tau,rho,eta_eval\n");
        for (t, r) in self.grid.iter().zip(&self.rho) {
            out.push_str(&format!("{t:.12e},{r:.12e},{:.3e}\n", self.eta_eval));
        }
        out
    }
}

/// Options controlling the adaptive density grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    pub initial_points: usize,
    pub max_points: usize,
    pub min_spacing: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            initial_points: 201,
            max_points: 40_000,
            min_spacing: 1e-9,
        }
    }
}

/// Density on an adaptively refined grid over `window`.
pub fn density_grid(
    model: &ModelSpec,
    window: (f64, f64),
    resolution: f64,
    eta_floor: f64,
) -> Result<DensityProfile> {
    let solver = DysonSolver::new(model, SolverOptions::default());
    density_grid_with(
        &solver,
        window,
        resolution,
        eta_floor,
        GridOptions::default(),
    )
}

pub fn density_grid_with(
    solver: &DysonSolver,
    window: (f64, f64),
    resolution: f64,
    eta_floor: f64,
    grid_opts: GridOptions,
) -> Result<DensityProfile> {
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(Error::InvalidParameter(format!(
            "empty window [{lo}, {hi}]"
        )));
    }
    if !(resolution > 0.0 && eta_floor > 0.0) {
        return Err(Error::InvalidParameter(
            "resolution and eta_floor must be positive".into(),
        ));
    }
    let n0 = grid_opts.initial_points.max(3);
    let mut grid: Vec<f64> = (0..n0)
        .map(|i| lo + (hi - lo) * i as f64 / (n0 - 1) as f64)
        .collect();
    let mut rho = eval_many(solver, &grid, eta_floor)?;
    let min_dx = grid_opts.min_spacing * (hi - lo);
    loop {
        let mut new_pts = Vec::new();
        for i in 0..grid.len() - 1 {
            if (rho[i + 1] - rho[i]).abs() > resolution && grid[i + 1] - grid[i] > 2.0 * min_dx {
                new_pts.push(0.5 * (grid[i] + grid[i + 1]));
            }
        }
        if new_pts.is_empty() || grid.len() + new_pts.len() > grid_opts.max_points {
            break;
        }
        let vals = eval_many(solver, &new_pts, eta_floor)?;
        let mut merged: Vec<(f64, f64)> = grid
            .into_iter()
            .zip(rho)
            .chain(new_pts.into_iter().zip(vals))
            .collect();
        merged.sort_by(|a, b| a.0.total_cmp(&b.0));
        (grid, rho) = merged.into_iter().unzip();
    }
    Ok(DensityProfile {
        grid,
        rho,
        eta_eval: eta_floor,
    })
}

fn eval_many(solver: &DysonSolver, taus: &[f64], eta: f64) -> Result<Vec<f64>> {
    taus.par_iter().map(|&t| solver.density(t, eta)).collect()
}

/// Largest deviation `max_b |sum_a |G_ab|^2 - Im G_bb / eta|` of the Ward identity.
pub fn ward_check(g: &Mat<Complex64>, eta: f64) -> f64 {
    let n = g.nrows();
    (0..n)
        .map(|b| {
            let col: f64 = (0..n).map(|a| g[(a, b)].norm_sqr()).sum();
            (col - g[(b, b)].im / eta).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::instantiate_two_block;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn semicircle_m(z: Complex64) -> Complex64 {
        // root of m^2 + z m + 1 = 0 in the upper half-plane
        let d = (z * z - 4.0).sqrt();
        let r1 = (-z + d) / 2.0;
        let r2 = (-z - d) / 2.0;
        if r1.im > 0.0 {
            r1
        } else {
            r2
        }
    }

    #[test]
    fn flat_model_at_i() {
        let m = ModelSpec::flat(8).unwrap();
        let sol = solve_point(
            &m,
            SpectralPoint::new(0.0, 1.0),
            SolverOptions::default(),
            None,
        )
        .unwrap();
        let golden = (5f64.sqrt() - 1.0) / 2.0;
        for v in &sol.m {
            assert_abs_diff_eq!(v.re, 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(v.im, golden, epsilon = 1e-10);
        }
        assert!(sol.residual <= 1e-10);
        let d = solve_derivative(&m, &sol).unwrap();
        assert_abs_diff_eq!(
            d[0].re,
            -0.381_966_011_250_105 / 1.381_966_011_250_105,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(d[0].im, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn flat_model_outside_support() {
        let m = ModelSpec::flat(4).unwrap();
        let sol = solve_point(
            &m,
            SpectralPoint::new(3.0, 1e-6),
            SolverOptions::default(),
            None,
        )
        .unwrap();
        assert_abs_diff_eq!(sol.m[0].re, (-3.0 + 5f64.sqrt()) / 2.0, epsilon = 1e-6);
        assert!(sol.m[0].im > 0.0 && sol.m[0].im < 1e-5);
    }

    #[test]
    fn fixed_point_method_agrees_with_newton() {
        let model = instantiate_two_block((3, 5), (1.0, 0.4, 2.0), (-0.7, 0.9)).unwrap();
        let z = SpectralPoint::new(0.3, 0.05);
        let a = solve_point(&model, z, SolverOptions::default(), None).unwrap();
        let fp = SolverOptions {
            method: Method::FixedPoint,
            tolerance: 1e-13,
            ..Default::default()
        };
        let b = solve_point(&model, z, fp, None).unwrap();
        for (x, y) in a.m.iter().zip(&b.m) {
            assert!((x - y).norm() < 1e-11);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let m = ModelSpec::flat(3).unwrap();
        let z = SpectralPoint::new(3.0, 0.01);
        let sol = solve_point(&m, z, SolverOptions::default(), None).unwrap();
        let d = solve_derivative(&m, &sol).unwrap();
        let h = 1e-5;
        let opts = SolverOptions {
            tolerance: 1e-14,
            ..Default::default()
        };
        let p = solve_point(&m, SpectralPoint::new(3.0 + h, 0.01), opts, None).unwrap();
        let q = solve_point(&m, SpectralPoint::new(3.0 - h, 0.01), opts, None).unwrap();
        let fd = (p.m[0] - q.m[0]) / (2.0 * h);
        assert!((fd - d[0]).norm() < 1e-6, "{fd} vs {}", d[0]);
    }

    #[test]
    fn nonpositive_eta_is_domain_error() {
        let m = ModelSpec::flat(2).unwrap();
        let e = solve_point(
            &m,
            SpectralPoint::new(0.0, 0.0),
            SolverOptions::default(),
            None,
        )
        .unwrap_err();
        assert!(matches!(e, Error::Domain(_)));
    }

    #[test]
    fn iteration_budget_is_enforced() {
        let m = ModelSpec::flat(2).unwrap();
        let opts = SolverOptions {
            method: Method::FixedPoint,
            max_iterations: 3,
            ..Default::default()
        };
        let e = solve_point(&m, SpectralPoint::new(0.0, 1e-3), opts, None).unwrap_err();
        assert!(matches!(e, Error::Divergence { .. }));
    }

    #[test]
    fn semicircle_density_grid() {
        let m = ModelSpec::flat(4).unwrap();
        let p = density_grid(&m, (-3.0, 3.0), 1e-3, 1e-7).unwrap();
        let solver = DysonSolver::new(&m, SolverOptions::default());
        assert_abs_diff_eq!(solver.density(0.0, 1e-7).unwrap(), 1.0 / PI, epsilon = 1e-6);
        assert!(solver.density(2.5, 1e-7).unwrap() <= 1e-6);
        assert_abs_diff_eq!(p.integral(), 1.0, epsilon = 1e-4);
        assert!(p.grid.windows(2).all(|w| w[0] < w[1]));
        assert!(p.rho.iter().all(|&r| r >= 0.0));
    }

    #[test]
    fn ward_identity_for_diagonal_resolvent() {
        let n = 5;
        let z = Complex64::new(0.1, 0.01);
        let g = Mat::from_fn(n, n, |i, j| {
            if i == j {
                (Complex64::new(i as f64 - 2.0, 0.0) - z).inv()
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        assert!(ward_check(&g, 0.01) <= 1e-12 * 1e4);
        let mut bad = g.clone();
        bad[(0, 1)] += 1e-1;
        assert!(ward_check(&bad, 0.01) >= 1e-4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn flat_solution_is_semicircle(tau in -3.0f64..3.0, eta in 1e-3f64..5.0) {
            let m = ModelSpec::flat(3).unwrap();
            let z = SpectralPoint::new(tau, eta);
            let sol = solve_point(&m, z, SolverOptions::default(), None).unwrap();
            let exact = semicircle_m(z.z());
            for v in &sol.m {
                prop_assert!((v - exact).norm() < 1e-8);
                prop_assert!(v.im > 0.0);
                prop_assert!(v.norm() <= 1.0 / eta + 1e-12);
            }
        }

        #[test]
        fn herglotz_and_monotone(tau in -2.5f64..2.5, eta in 1e-3f64..1.0, a in 0.2f64..1.5) {
            let model = instantiate_two_block((2, 3), (1.0, 0.7, 1.2), (-a, a)).unwrap();
            let solver = DysonSolver::new(&model, SolverOptions::default());
            let m1 = solver.average(Complex64::new(tau, eta)).unwrap();
            let m2 = solver.average(Complex64::new(tau, 2.0 * eta)).unwrap();
            prop_assert!(m1.im > 0.0 && m2.im > 0.0);
            prop_assert!(eta * m1.norm() <= 2.0 * eta * m2.norm() + 1e-9);
        }

        #[test]
        fn warm_start_agrees_with_cold(tau in -2.0f64..2.0, a in 0.2f64..1.5) {
            let model = instantiate_two_block((2, 2), (1.0, 1.0, 1.0), (-a, a)).unwrap();
            let solver = DysonSolver::new(&model, SolverOptions { tolerance: 1e-13, ..SolverOptions::default() });
            let mut warm = solver.solve_reduced(Complex64::new(tau, 1.0), None).unwrap().values;
            let mut eta = 1.0;
            while eta > 1e-4 {
                eta /= 3.0;
                warm = solver.solve_reduced(Complex64::new(tau, eta), Some(&warm)).unwrap().values;
            }
            let cold = solver.solve_reduced(Complex64::new(tau, eta), None).unwrap().values;
            for (x, y) in warm.iter().zip(&cold) {
                prop_assert!((x - y).norm() <= 1e-9, "{} vs {}", x, y);
            }
        }

        #[test]
        fn large_z_asymptotics(y in 1e3f64..1e5) {
            let model = instantiate_two_block((2, 3), (1.0, 0.5, 2.0), (-0.5, 1.0)).unwrap();
            let solver = DysonSolver::new(&model, SolverOptions::default());
            let z = Complex64::new(0.0, y);
            let m = solver.average(z).unwrap();
            prop_assert!((m + z.inv()).norm() <= 10.0 / (y * y));
        }
    }
}
