//! Bayesian hyperparameter optimization: Gaussian-process surrogate with a
//! squared-exponential kernel plus expected-improvement acquisition over a
//! seeded candidate pool.
//!
//! Parameters live on the unit cube internally; `ParamSpace` handles the
//! encoding (linear, log, or rounded-integer) per dimension. Objectives are
//! minimized — negate accuracies before handing them in.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// How a dimension maps between the unit cube and its native range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Real,
    LogReal,
    Int,
}

/// One search dimension.
#[derive(Debug, Clone)]
pub struct ParamDim {
    pub name: String,
    pub kind: ParamKind,
    pub lower: f64,
    pub upper: f64,
}

/// Box-constrained search space.
#[derive(Debug, Clone, Default)]
pub struct ParamSpace {
    pub dims: Vec<ParamDim>,
}

impl ParamSpace {
    pub fn new(dims: Vec<ParamDim>) -> Result<Self> {
        for d in &dims {
            if !(d.lower < d.upper) {
                return Err(Error::Parameter(format!(
                    "dim {}: lower {} must be below upper {}",
                    d.name, d.lower, d.upper
                )));
            }
            if d.kind == ParamKind::LogReal && !(d.lower > 0.0) {
                return Err(Error::Parameter(format!(
                    "dim {}: log scale needs a positive lower bound",
                    d.name
                )));
            }
        }
        Ok(ParamSpace { dims })
    }

    pub fn n_dims(&self) -> usize {
        self.dims.len()
    }

    /// Decodes a unit-cube point into native parameter values; INT dims are
    /// rounded to the nearest integer.
    pub fn decode(&self, x: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(x)
            .map(|(d, &u)| {
                let u = u.clamp(0.0, 1.0);
                match d.kind {
                    ParamKind::Real => d.lower + u * (d.upper - d.lower),
                    ParamKind::LogReal => {
                        (d.lower.ln() + u * (d.upper.ln() - d.lower.ln())).exp()
                    }
                    ParamKind::Int => (d.lower + u * (d.upper - d.lower)).round(),
                }
            })
            .collect()
    }

    /// Encodes native values back onto the unit cube.
    pub fn encode(&self, values: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(values)
            .map(|(d, &v)| match d.kind {
                ParamKind::Real | ParamKind::Int => (v - d.lower) / (d.upper - d.lower),
                ParamKind::LogReal => (v.ln() - d.lower.ln()) / (d.upper.ln() - d.lower.ln()),
            })
            .collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }
}

/// Decoded parameter assignment with name lookup.
#[derive(Debug, Clone)]
pub struct ParamValues<'a> {
    space: &'a ParamSpace,
    pub values: Vec<f64>,
}

impl ParamValues<'_> {
    pub fn get(&self, name: &str) -> f64 {
        let i = self
            .space
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"));
        self.values[i]
    }

    pub fn get_usize(&self, name: &str) -> usize {
        self.get(name).round() as usize
    }
}

/// One evaluated point: unit-cube location and objective value (minimized).
#[derive(Debug, Clone)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
}

/// Fixed kernel settings of the GP surrogate.
#[derive(Debug, Clone)]
pub struct KernelConfig {
    pub signal_variance: f64,
    /// One lengthscale per dimension (unit-cube scale).
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelConfig {
    /// Defaults used by `tune`: l = 0.2 per dim, sigma^2 = 1, noise 1e-6.
    pub fn default_for(n_dims: usize) -> Self {
        KernelConfig {
            signal_variance: 1.0,
            lengthscales: vec![0.2; n_dims],
            noise_variance: 1e-6,
        }
    }
}

const JITTER_FLOOR: f64 = 1e-9;
const JITTER_CEIL: f64 = 1e-4;

/// GP posterior over standardized targets with a Cholesky-factored kernel
/// matrix.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    kernel: KernelConfig,
    xs: Vec<Vec<f64>>,
    /// Lower-triangular Cholesky factor of K + noise I (row-major).
    chol: Vec<f64>,
    /// alpha = (K + noise I)^-1 y_std.
    alpha: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
}

fn kernel_value(cfg: &KernelConfig, a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((&x, &y), &l) in a.iter().zip(b).zip(&cfg.lengthscales) {
        let d = (x - y) / l;
        s += d * d;
    }
    cfg.signal_variance * (-0.5 * s).exp()
}

/// In-place Cholesky of a row-major symmetric matrix; returns false if a
/// pivot goes non-positive.
fn cholesky(a: &mut [f64], n: usize) -> bool {
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return false;
                }
                a[i * n + i] = s.sqrt();
            } else {
                a[i * n + j] = s / a[j * n + j];
            }
        }
        for j in i + 1..n {
            a[i * n + j] = 0.0;
        }
    }
    true
}

fn forward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

fn backward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Fits the GP posterior. Targets are standardized internally; the noise
/// variance escalates from its configured value (floored at 1e-9) by factors
/// of 10 up to 1e-4 until the Cholesky succeeds.
pub fn gp_fit(observations: &[Observation], kernel: &KernelConfig) -> Result<GpPosterior> {
    if observations.is_empty() {
        return Err(Error::Data("gp_fit needs at least one observation".into()));
    }
    let n = observations.len();
    for o in observations {
        if !o.y.is_finite() {
            return Err(Error::Domain("observation target must be finite".into()));
        }
        if o.x.len() != kernel.lengthscales.len() {
            return Err(Error::Shape(format!(
                "observation has {} dims, kernel has {}",
                o.x.len(),
                kernel.lengthscales.len()
            )));
        }
    }

    let y_mean = observations.iter().map(|o| o.y).sum::<f64>() / n as f64;
    let var = observations
        .iter()
        .map(|o| (o.y - y_mean).powi(2))
        .sum::<f64>()
        / n as f64;
    let y_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    let y_std: Vec<f64> = observations
        .iter()
        .map(|o| (o.y - y_mean) / y_scale)
        .collect();

    let base = vec![0.0; n * n];
    let mut k_matrix = base;
    for i in 0..n {
        for j in 0..=i {
            let v = kernel_value(kernel, &observations[i].x, &observations[j].x);
            k_matrix[i * n + j] = v;
            k_matrix[j * n + i] = v;
        }
    }

    let mut noise = kernel.noise_variance.max(JITTER_FLOOR);
    loop {
        let mut a = k_matrix.clone();
        for i in 0..n {
            a[i * n + i] += noise;
        }
        if cholesky(&mut a, n) {
            let mut alpha = y_std.clone();
            forward_solve(&a, n, &mut alpha);
            backward_solve(&a, n, &mut alpha);
            return Ok(GpPosterior {
                kernel: KernelConfig {
                    noise_variance: noise,
                    ..kernel.clone()
                },
                xs: observations.iter().map(|o| o.x.clone()).collect(),
                chol: a,
                alpha,
                y_mean,
                y_scale,
            });
        }
        if noise >= JITTER_CEIL {
            return Err(Error::Conditioning(format!(
                "kernel matrix stayed non positive definite at jitter {noise}"
            )));
        }
        noise *= 10.0;
    }
}

impl GpPosterior {
    /// Posterior mean and standard deviation at a query point, on the
    /// original (de-standardized) target scale.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let n = self.xs.len();
        let mut k_star: Vec<f64> = self
            .xs
            .iter()
            .map(|xi| kernel_value(&self.kernel, xi, x))
            .collect();
        let mean_std: f64 = k_star.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        forward_solve(&self.chol, n, &mut k_star);
        let reduction: f64 = k_star.iter().map(|v| v * v).sum();
        let var_std = (self.kernel.signal_variance - reduction).max(0.0);
        (
            self.y_mean + self.y_scale * mean_std,
            self.y_scale * var_std.sqrt(),
        )
    }

    /// Prior variance on the de-standardized scale, for variance-bound checks.
    pub fn prior_variance(&self) -> f64 {
        self.kernel.signal_variance * self.y_scale * self.y_scale
    }
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF via the Abramowitz-Stegun 7.1.26 erf approximation
/// (|error| < 1.5e-7).
pub fn normal_cdf(z: f64) -> f64 {
    let x = z / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.3275911 * x.abs());
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf_abs = 1.0 - poly * (-x * x).exp();
    let erf = if x < 0.0 { -erf_abs } else { erf_abs };
    0.5 * (1.0 + erf)
}

/// Expected improvement below `best` for a minimized objective:
/// `(best - mean) Phi(z) + stdev phi(z)` with `z = (best - mean)/stdev`;
/// at zero stdev it degenerates to `max(best - mean, 0)`.
pub fn expected_improvement(mean: f64, stdev: f64, best: f64) -> f64 {
    debug_assert!(stdev >= 0.0);
    if stdev <= 0.0 {
        return (best - mean).max(0.0);
    }
    let z = (best - mean) / stdev;
    ((best - mean) * normal_cdf(z) + stdev * normal_pdf(z)).max(0.0)
}

/// One evaluated trial in a tuning trace.
#[derive(Debug, Clone)]
pub struct Trial {
    pub index: usize,
    pub x: Vec<f64>,
    /// Decoded native parameter values.
    pub params: Vec<f64>,
    /// Objective value; `INFINITY` for failed trials.
    pub objective: f64,
    /// Best objective value seen so far (monotone non-increasing).
    pub incumbent: f64,
    pub cached: bool,
    pub failed: bool,
}

/// Result of `tune`: incumbent parameters and the full trace.
#[derive(Debug, Clone)]
pub struct TuneResult {
    pub best_params: Vec<f64>,
    pub best_objective: f64,
    pub trials: Vec<Trial>,
}

const EI_CANDIDATES: usize = 1024;

/// Bayesian optimization loop.
///
/// The first `max(5, budget/4)` points come from seeded Latin-hypercube
/// sampling; afterwards each trial fits the GP and evaluates the point with
/// the highest expected improvement among 1024 seeded uniform candidates.
/// Duplicate configurations (after INT rounding) are served from a cache
/// instead of re-evaluating. A failing objective records +inf and the loop
/// continues. Deterministic for a fixed seed.
pub fn tune<F>(
    mut objective: F,
    space: &ParamSpace,
    budget: usize,
    seed: u64,
) -> Result<TuneResult>
where
    F: FnMut(&ParamValues<'_>) -> Result<f64>,
{
    if budget < 2 {
        return Err(Error::Parameter("tuning budget must be at least 2".into()));
    }
    if space.n_dims() == 0 {
        return Err(Error::Parameter("parameter space has no dimensions".into()));
    }
    let d = space.n_dims();
    let kernel = KernelConfig::default_for(d);
    let mut rng = stream_rng(seed, 0);

    let n_init = (budget / 4).max(5).min(budget);
    // Latin hypercube: one sample per stratum per dimension.
    let mut init_points: Vec<Vec<f64>> = vec![vec![0.0; d]; n_init];
    for dim in 0..d {
        let mut strata: Vec<usize> = (0..n_init).collect();
        for i in (1..n_init).rev() {
            let j = rng.random_range(0..=i);
            strata.swap(i, j);
        }
        for (i, point) in init_points.iter_mut().enumerate() {
            point[dim] = (strata[i] as f64 + rng.random::<f64>()) / n_init as f64;
        }
    }

    let mut observations: Vec<Observation> = Vec::with_capacity(budget);
    let mut trials: Vec<Trial> = Vec::with_capacity(budget);
    let mut cache: HashMap<Vec<u64>, f64> = HashMap::new();
    let mut incumbent = f64::INFINITY;
    let mut best_params: Vec<f64> = Vec::new();

    let run_trial = |x: Vec<f64>,
                         objective: &mut F,
                         observations: &mut Vec<Observation>,
                         trials: &mut Vec<Trial>,
                         cache: &mut HashMap<Vec<u64>, f64>,
                         incumbent: &mut f64,
                         best_params: &mut Vec<f64>|
     -> Result<()> {
        let params = space.decode(&x);
        let key: Vec<u64> = params.iter().map(|v| v.to_bits()).collect();
        let (y, cached, failed) = match cache.get(&key) {
            Some(&y) => (y, true, !y.is_finite()),
            None => {
                let values = ParamValues {
                    space,
                    values: params.clone(),
                };
                match objective(&values) {
                    Ok(y) if y.is_finite() => {
                        cache.insert(key, y);
                        (y, false, false)
                    }
                    Ok(_) | Err(_) => {
                        cache.insert(key, f64::INFINITY);
                        (f64::INFINITY, false, true)
                    }
                }
            }
        };
        if y < *incumbent {
            *incumbent = y;
            *best_params = params.clone();
        }
        observations.push(Observation { x: x.clone(), y });
        trials.push(Trial {
            index: trials.len(),
            x,
            params,
            objective: y,
            incumbent: *incumbent,
            cached,
            failed,
        });
        Ok(())
    };

    for x in init_points {
        run_trial(
            x,
            &mut objective,
            &mut observations,
            &mut trials,
            &mut cache,
            &mut incumbent,
            &mut best_params,
        )?;
    }

    while trials.len() < budget {
        // GP observations substitute the worst finite value for failures.
        let finite: Vec<f64> = observations
            .iter()
            .map(|o| o.y)
            .filter(|y| y.is_finite())
            .collect();
        let x_next = if finite.is_empty() {
            (0..d).map(|_| rng.random::<f64>()).collect::<Vec<f64>>()
        } else {
            let worst = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let gp_obs: Vec<Observation> = observations
                .iter()
                .map(|o| Observation {
                    x: o.x.clone(),
                    y: if o.y.is_finite() { o.y } else { worst },
                })
                .collect();
            let gp = gp_fit(&gp_obs, &kernel)?;
            let best_finite = incumbent.min(worst);
            let mut best_ei = f64::NEG_INFINITY;
            let mut best_x: Vec<f64> = Vec::new();
            for _ in 0..EI_CANDIDATES {
                let cand: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                let (mean, stdev) = gp.predict(&cand);
                let ei = expected_improvement(mean, stdev, best_finite);
                if ei > best_ei {
                    best_ei = ei;
                    best_x = cand;
                }
            }
            best_x
        };
        run_trial(
            x_next,
            &mut objective,
            &mut observations,
            &mut trials,
            &mut cache,
            &mut incumbent,
            &mut best_params,
        )?;
    }

    Ok(TuneResult {
        best_params,
        best_objective: incumbent,
        trials,
    })
}

/// Writes a tuning trace as CSV: trial, params..., objective, incumbent.
pub fn write_trace_csv(result: &TuneResult, space: &ParamSpace, path: &Path) -> Result<()> {
    let mut out = String::new();
    let names: Vec<&str> = space.dims.iter().map(|d| d.name.as_str()).collect();
    writeln!(out, "trial,{},objective,incumbent,cached,failed", names.join(",")).unwrap();
    for t in &result.trials {
        let params: Vec<String> = t.params.iter().map(|v| format!("{v}")).collect();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            t.index,
            params.join(","),
            t.objective,
            t.incumbent,
            t.cached,
            t.failed
        )
        .unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Documented default space for GBM tuning.
pub fn gbm_default_space() -> ParamSpace {
    ParamSpace::new(vec![
        ParamDim {
            name: "learning_rate".into(),
            kind: ParamKind::LogReal,
            lower: 0.01,
            upper: 0.3,
        },
        ParamDim {
            name: "max_depth".into(),
            kind: ParamKind::Int,
            lower: 3.0,
            upper: 8.0,
        },
        ParamDim {
            name: "n_rounds".into(),
            kind: ParamKind::Int,
            lower: 50.0,
            upper: 300.0,
        },
    ])
    .expect("static space is valid")
}

/// Documented default space for random-forest tuning.
pub fn forest_default_space() -> ParamSpace {
    ParamSpace::new(vec![
        ParamDim {
            name: "n_trees".into(),
            kind: ParamKind::Int,
            lower: 50.0,
            upper: 400.0,
        },
        ParamDim {
            name: "max_depth".into(),
            kind: ParamKind::Int,
            lower: 4.0,
            upper: 16.0,
        },
    ])
    .expect("static space is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_observation_interpolates() {
        let obs = vec![Observation {
            x: vec![0.4],
            y: 2.5,
        }];
        let kernel = KernelConfig {
            noise_variance: JITTER_FLOOR,
            ..KernelConfig::default_for(1)
        };
        let gp = gp_fit(&obs, &kernel).unwrap();
        let (mean, stdev) = gp.predict(&[0.4]);
        assert!((mean - 2.5).abs() < 1e-6);
        assert!(stdev * stdev < 1e-6);
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let obs = vec![
            Observation { x: vec![0.0], y: 1.0 },
            Observation { x: vec![0.02], y: 1.1 },
        ];
        let mut kernel = KernelConfig::default_for(1);
        kernel.lengthscales = vec![0.01];
        let gp = gp_fit(&obs, &kernel).unwrap();
        let (mean, stdev) = gp.predict(&[1.0]);
        // Prior mean is the target mean; prior stdev the target scale.
        assert!((mean - 1.05).abs() < 1e-6);
        assert!((stdev * stdev - gp.prior_variance()).abs() < 1e-6);
    }

    #[test]
    fn linear_function_is_reconstructed_midpoint() {
        // Independent oracle: dense solve of the same GP equations by
        // Gauss-Jordan elimination.
        let f = |x: f64| 2.0 * x - 0.5;
        let xs = [0.1, 0.3, 0.5, 0.7, 0.9];
        let obs: Vec<Observation> = xs
            .iter()
            .map(|&x| Observation {
                x: vec![x],
                y: f(x),
            })
            .collect();
        let kernel = KernelConfig::default_for(1);
        let gp = gp_fit(&obs, &kernel).unwrap();
        let q = 0.4;
        let (mean, _) = gp.predict(&[q]);
        assert!((mean - f(q)).abs() < 0.05, "gp mean {mean} vs {}", f(q));

        // Dense-solver oracle on the unstandardized system.
        let n = xs.len();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = kernel_value(&kernel, &obs[i].x, &obs[j].x);
                if i == j {
                    a[i * n + j] += kernel.noise_variance;
                }
            }
        }
        let ym: f64 = obs.iter().map(|o| o.y).sum::<f64>() / n as f64;
        let ysd = (obs.iter().map(|o| (o.y - ym).powi(2)).sum::<f64>() / n as f64).sqrt();
        let mut rhs: Vec<f64> = obs.iter().map(|o| (o.y - ym) / ysd).collect();
        // Gauss-Jordan with partial pivoting.
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i * n + col].abs().partial_cmp(&a[j * n + col].abs()).unwrap())
                .unwrap();
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            rhs.swap(col, piv);
            let p = a[col * n + col];
            for c in 0..n {
                a[col * n + c] /= p;
            }
            rhs[col] /= p;
            for r in 0..n {
                if r != col {
                    let factor = a[r * n + col];
                    for c in 0..n {
                        a[r * n + c] -= factor * a[col * n + c];
                    }
                    rhs[r] -= factor * rhs[col];
                }
            }
        }
        let k_star: Vec<f64> = obs
            .iter()
            .map(|o| kernel_value(&kernel, &o.x, &[q]))
            .collect();
        let oracle_mean = ym + ysd * k_star.iter().zip(&rhs).map(|(a, b)| a * b).sum::<f64>();
        assert!(
            (mean - oracle_mean).abs() < 1e-8,
            "cholesky {mean} vs dense {oracle_mean}"
        );
    }

    #[test]
    fn ei_reference_points() {
        assert_eq!(expected_improvement(1.0, 0.0, 1.0), 0.0);
        assert_eq!(expected_improvement(11.0, 0.0, 1.0), 0.0);
        assert_eq!(expected_improvement(0.5, 0.0, 1.0), 0.5);
        // Hopeless point: mean far above best with tiny stdev.
        assert!(expected_improvement(11.0, 0.01, 1.0) < 1e-12);
        // mean == best, unit stdev -> phi(0).
        let ei = expected_improvement(1.0, 1.0, 1.0);
        assert!((ei - 0.3989422804014327).abs() < 1e-7);
    }

    #[test]
    fn ei_monte_carlo_oracle() {
        // E[max(best - Y, 0)], Y ~ N(mean, 1), 10^6 draws.
        use rand_distr::Distribution;
        let (mean, stdev, best) = (0.3, 1.0, 0.5);
        let mut rng = stream_rng(99, 0);
        let normal = rand_distr::StandardNormal;
        let mut sum = 0.0;
        let n = 1_000_000;
        for _ in 0..n {
            let z: f64 = normal.sample(&mut rng);
            let y = mean + stdev * z;
            sum += (best - y).max(0.0);
        }
        let mc = sum / f64::from(n);
        let ei = expected_improvement(mean, stdev, best);
        assert!((ei - mc).abs() < 1e-3, "ei {ei} vs mc {mc}");
    }

    #[test]
    fn ei_nonnegative_and_monotone_in_stdev() {
        let mut rng = stream_rng(3, 0);
        for _ in 0..10_000 {
            let mean = rng.random::<f64>() * 4.0 - 2.0;
            let best = rng.random::<f64>() * 4.0 - 2.0;
            let s1 = rng.random::<f64>() * 2.0;
            let s2 = s1 + rng.random::<f64>();
            let e1 = expected_improvement(mean, s1, best);
            let e2 = expected_improvement(mean, s2, best);
            assert!(e1 >= 0.0);
            if mean <= best {
                assert!(e2 >= e1 - 1e-12, "EI fell with stdev: {e1} -> {e2}");
            }
        }
    }

    #[test]
    fn quadratic_is_minimized() {
        let space = ParamSpace::new(vec![ParamDim {
            name: "x".into(),
            kind: ParamKind::Real,
            lower: 0.0,
            upper: 1.0,
        }])
        .unwrap();
        let result = tune(
            |p| Ok((p.get("x") - 0.3).powi(2)),
            &space,
            25,
            42,
        )
        .unwrap();
        assert!((result.best_params[0] - 0.3).abs() <= 0.05);
        // Incumbent trace is monotone non-increasing.
        for w in result.trials.windows(2) {
            assert!(w[1].incumbent <= w[0].incumbent);
        }
    }

    #[test]
    fn budget_two_returns_better_seed_point() {
        let space = ParamSpace::new(vec![ParamDim {
            name: "x".into(),
            kind: ParamKind::Real,
            lower: 0.0,
            upper: 1.0,
        }])
        .unwrap();
        let result = tune(|p| Ok(p.get("x")), &space, 2, 7).unwrap();
        assert_eq!(result.trials.len(), 2);
        let min_seen = result
            .trials
            .iter()
            .map(|t| t.objective)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(result.best_objective, min_seen);
    }

    #[test]
    fn constant_objective_keeps_constant_incumbent() {
        let space = ParamSpace::new(vec![ParamDim {
            name: "x".into(),
            kind: ParamKind::Real,
            lower: -1.0,
            upper: 1.0,
        }])
        .unwrap();
        let result = tune(|_| Ok(4.25), &space, 8, 1).unwrap();
        assert_eq!(result.best_objective, 4.25);
        for t in &result.trials {
            assert_eq!(t.incumbent, 4.25);
        }
    }

    #[test]
    fn failing_objective_is_recorded_and_skipped() {
        let space = ParamSpace::new(vec![ParamDim {
            name: "x".into(),
            kind: ParamKind::Real,
            lower: 0.0,
            upper: 1.0,
        }])
        .unwrap();
        let mut calls = 0;
        let result = tune(
            |p| {
                calls += 1;
                if p.get("x") < 0.5 {
                    Err(crate::Error::Data("left half fails".into()))
                } else {
                    Ok(p.get("x"))
                }
            },
            &space,
            10,
            5,
        )
        .unwrap();
        assert!(calls <= 10);
        assert!(result.trials.iter().any(|t| t.failed));
        assert!(result.best_objective >= 0.5);
        assert!(result.best_objective.is_finite());
    }

    #[test]
    fn int_dims_round_trip_and_cache() {
        let space = ParamSpace::new(vec![ParamDim {
            name: "n".into(),
            kind: ParamKind::Int,
            lower: 1.0,
            upper: 4.0,
        }])
        .unwrap();
        let mut evals = 0usize;
        let result = tune(
            |p| {
                evals += 1;
                Ok(p.get("n"))
            },
            &space,
            16,
            3,
        )
        .unwrap();
        // Only 4 distinct integer configs exist; everything else is cached.
        assert!(evals <= 4, "{evals} evaluations for 4 configs");
        assert_eq!(result.trials.len(), 16);
        assert!(result.trials.iter().any(|t| t.cached));
        assert_eq!(result.best_objective, 1.0);
    }

    #[test]
    fn log_real_round_trip() {
        let space = ParamSpace::new(vec![ParamDim {
            name: "lr".into(),
            kind: ParamKind::LogReal,
            lower: 0.01,
            upper: 0.3,
        }])
        .unwrap();
        let mut rng = stream_rng(8, 0);
        for _ in 0..1000 {
            let v = 0.01 * 30f64.powf(rng.random::<f64>());
            let x = space.encode(&[v]);
            let back = space.decode(&x);
            assert!((back[0] - v).abs() <= 1e-12 * v.abs());
        }
    }

    #[test]
    fn posterior_variance_bounded_by_prior() {
        let mut rng = stream_rng(12, 0);
        let obs: Vec<Observation> = (0..12)
            .map(|_| Observation {
                x: vec![rng.random(), rng.random()],
                y: rng.random::<f64>() * 3.0,
            })
            .collect();
        let gp = gp_fit(&obs, &KernelConfig::default_for(2)).unwrap();
        for _ in 0..200 {
            let q = [rng.random::<f64>(), rng.random::<f64>()];
            let (_, stdev) = gp.predict(&q);
            assert!(stdev * stdev <= gp.prior_variance() + 1e-9);
        }
    }
}
