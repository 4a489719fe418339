//! Additive-noise-model fitting, causal direction inference, and the
//! shared-mechanism conditional ANM over several datasets.
//!
//! A fit regresses the effect on the cause and attaches an HSIC permutation
//! test between causes and residuals: the fit itself never rejects, the
//! caller decides through the attached p-value. Direction inference fits both
//! ways and requires one side to pass and the other to fail, abstaining
//! otherwise (the linear-Gaussian family is genuinely unidentifiable, so an
//! `Undecided` state is part of the contract, not a failure mode).

use thiserror::Error;

use crate::density::{kde, Bandwidth, DensityError, Grid, GridDensity};
use crate::dependence::{hsic_test, median_bandwidth, DependenceError, HsicResult};
use crate::regress::{fit_krr, RegressError, RegressionModel, Ridge};
use crate::sample::{PairedSample, SampleError, SampleSet};
use crate::util::{derive_seed, fmt17, mean};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnmError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("need at least 2 datasets, got {0}")]
    TooFewDatasets(usize),
    #[error("objective became non-finite")]
    NonFiniteObjective,
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Dependence(#[from] DependenceError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Knobs shared by every ANM fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnmConfig {
    pub bandwidth: Bandwidth,
    pub ridge: Ridge,
    pub n_permutations: usize,
    pub seed: u64,
    /// Bin count of the residual noise-density grid.
    pub density_m: usize,
    /// Significance level used by diagnostics that need one.
    pub alpha: f64,
}

impl Default for AnmConfig {
    fn default() -> Self {
        AnmConfig {
            bandwidth: Bandwidth::Auto,
            ridge: Ridge::Auto,
            n_permutations: 499,
            seed: 0,
            density_m: 512,
            alpha: 0.05,
        }
    }
}

/// A fitted additive noise model: mechanism, zero-mean residuals, their
/// independence diagnostic, and the residual density.
#[derive(Debug, Clone)]
pub struct AnmFit {
    pub model: RegressionModel,
    pub residuals: SampleSet,
    pub independence: HsicResult,
    pub noise_density: GridDensity,
}

/// KDE of a residual sample on an auto-sized grid, recentered so the
/// density's mean is exactly zero.
pub(crate) fn residual_density(residuals: &[f64], m: usize) -> Result<GridDensity, DensityError> {
    let sample = SampleSet::new(residuals.to_vec()).expect("finite residuals");
    let bw = crate::density::silverman_bandwidth(&sample);
    let grid = Grid::covering(&sample, 3.0 * bw + 1e-9, m)?;
    Ok(kde(&sample, &grid, Bandwidth::Fixed(bw))?.recentered_to_zero_mean())
}

/// Fit an ANM by kernel ridge regression plus an HSIC permutation test of
/// residual independence. Rejection is the caller's decision via
/// `independence.p_value`.
pub fn fit_anm(pairs: &PairedSample, config: &AnmConfig) -> Result<AnmFit, AnmError> {
    if pairs.n() < 20 {
        return Err(AnmError::TooFewSamples { need: 20, got: pairs.n() });
    }
    let model = fit_krr(pairs, config.bandwidth, config.ridge)?;
    let residuals: Vec<f64> = pairs
        .xs()
        .iter()
        .zip(pairs.ys())
        .map(|(&x, &y)| y - model.evaluate(x))
        .collect();
    let independence = hsic_test(pairs.xs(), &residuals, config.n_permutations, config.seed)?;
    let noise_density = residual_density(&residuals, config.density_m)?;
    Ok(AnmFit { model, residuals: SampleSet::new(residuals)?, independence, noise_density })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    XToY,
    YToX,
    Undecided,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::XToY => "x-to-y",
            Direction::YToX => "y-to-x",
            Direction::Undecided => "undecided",
        }
    }
}

/// Both directional fits plus the decision at level `alpha`.
#[derive(Debug, Clone)]
pub struct DirectionVerdict {
    pub direction: Direction,
    pub forward: AnmFit,
    pub backward: AnmFit,
    pub alpha: f64,
}

/// The direction decision rule: accept a direction only when its residuals
/// pass at `alpha` and the opposite direction's fail.
pub(crate) fn decide_direction(p_forward: f64, p_backward: f64, alpha: f64) -> Direction {
    match (p_forward > alpha, p_backward > alpha) {
        (true, false) => Direction::XToY,
        (false, true) => Direction::YToX,
        _ => Direction::Undecided,
    }
}

/// Fit ANMs in both directions and apply the dual-threshold decision rule.
pub fn infer_direction(
    pairs: &PairedSample,
    alpha: f64,
    config: &AnmConfig,
) -> Result<DirectionVerdict, AnmError> {
    let forward = fit_anm(pairs, config)?;
    let backward_config = AnmConfig { seed: derive_seed(config.seed, 0xB0C4), ..*config };
    let backward = fit_anm(&pairs.swapped(), &backward_config)?;
    let direction =
        decide_direction(forward.independence.p_value, backward.independence.p_value, alpha);
    Ok(DirectionVerdict { direction, forward, backward, alpha })
}

/// When the conditional ANM runs its HSIC descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolishMode {
    /// Descend only when some dataset's initial residuals already fail the
    /// independence test at `alpha`; a passing pooled fit is left untouched.
    WhenDependent,
    Always,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalAnmConfig {
    pub bandwidth: Bandwidth,
    pub ridge: Ridge,
    pub n_permutations: usize,
    pub seed: u64,
    pub density_m: usize,
    pub alpha: f64,
    pub max_iterations: usize,
    /// Early stop when the relative objective decrease falls below this.
    pub rel_tol: f64,
    /// Weight of the RKHS-norm penalty anchoring the descent at the pooled
    /// squared-error fit.
    pub objective_ridge: f64,
    pub polish: PolishMode,
}

impl Default for ConditionalAnmConfig {
    fn default() -> Self {
        ConditionalAnmConfig {
            bandwidth: Bandwidth::Auto,
            ridge: Ridge::Auto,
            n_permutations: 499,
            seed: 0,
            density_m: 512,
            alpha: 0.05,
            max_iterations: 500,
            rel_tol: 1e-6,
            objective_ridge: 1e-3,
            polish: PolishMode::WhenDependent,
        }
    }
}

/// Per-dataset diagnostics of a conditional ANM fit.
#[derive(Debug, Clone)]
pub struct DatasetDiagnostics {
    /// Constant added to the shared mechanism for this dataset; the first
    /// dataset's offset is pinned to zero.
    pub offset: f64,
    pub residuals: SampleSet,
    pub independence: HsicResult,
    pub noise_density: GridDensity,
}

/// One shared mechanism over several datasets, with residual independence
/// enforced separately per dataset.
#[derive(Debug, Clone)]
pub struct ConditionalAnmFit {
    pub model: RegressionModel,
    pub per_dataset: Vec<DatasetDiagnostics>,
    pub objective_trace: Vec<f64>,
}

/// The conditional-ANM objective: sum of per-dataset HSIC terms between
/// causes and centered residuals, plus an RKHS-norm penalty anchored at the
/// initial coefficients. Kernel bandwidths are frozen at construction so the
/// surface is smooth and the analytic gradient exact.
pub struct HsicObjective {
    pooled_x: Vec<f64>,
    kernel_bandwidth: f64,
    /// Pooled Gram matrix, row-major.
    k_pool: Vec<f64>,
    /// Dataset boundaries as index ranges into the pooled arrays.
    ranges: Vec<(usize, usize)>,
    ys: Vec<f64>,
    /// Per-dataset centered Gram matrices of the causes.
    centered_x_grams: Vec<Vec<f64>>,
    /// Per-dataset frozen residual-kernel bandwidths.
    residual_bandwidths: Vec<f64>,
    anchor: Vec<f64>,
    penalty_weight: f64,
}

impl HsicObjective {
    fn new(
        datasets: &[PairedSample],
        kernel_bandwidth: f64,
        anchor: Vec<f64>,
        penalty_weight: f64,
    ) -> Self {
        let pooled_x: Vec<f64> =
            datasets.iter().flat_map(|d| d.xs().iter().copied()).collect();
        let ys: Vec<f64> = datasets.iter().flat_map(|d| d.ys().iter().copied()).collect();
        let n = pooled_x.len();
        let inv = 1.0 / (2.0 * kernel_bandwidth * kernel_bandwidth);
        let mut k_pool = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let d = pooled_x[i] - pooled_x[j];
                k_pool[i * n + j] = (-d * d * inv).exp();
            }
        }
        let mut ranges = Vec::new();
        let mut start = 0;
        for d in datasets {
            ranges.push((start, start + d.n()));
            start += d.n();
        }
        let centered_x_grams = datasets
            .iter()
            .map(|d| centered_gram_of(d.xs(), median_bandwidth(d.xs())))
            .collect();
        let mut obj = HsicObjective {
            pooled_x,
            kernel_bandwidth,
            k_pool,
            ranges,
            ys,
            centered_x_grams,
            residual_bandwidths: Vec::new(),
            anchor: anchor.clone(),
            penalty_weight,
        };
        obj.residual_bandwidths = obj
            .ranges
            .clone()
            .into_iter()
            .map(|(lo, hi)| median_bandwidth(&obj.centered_residuals(&anchor, lo, hi)))
            .collect();
        obj
    }

    /// Build the objective for a set of datasets: pooled squared-error KRR
    /// initialization with frozen kernel bandwidths. Returns the objective
    /// together with the pooled initial model.
    pub fn from_datasets(
        datasets: &[PairedSample],
        config: &ConditionalAnmConfig,
    ) -> Result<(Self, RegressionModel), AnmError> {
        let pooled_x: Vec<f64> =
            datasets.iter().flat_map(|d| d.xs().iter().copied()).collect();
        let pooled_y: Vec<f64> =
            datasets.iter().flat_map(|d| d.ys().iter().copied()).collect();
        let pooled = PairedSample::new(pooled_x, pooled_y)?;
        let model0 = fit_krr(&pooled, config.bandwidth, config.ridge)?;
        let objective = HsicObjective::new(
            datasets,
            model0.bandwidth(),
            model0.coefficients().to_vec(),
            config.objective_ridge,
        );
        Ok((objective, model0))
    }

    pub fn n_coefficients(&self) -> usize {
        self.pooled_x.len()
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    fn centered_residuals(&self, alpha: &[f64], lo: usize, hi: usize) -> Vec<f64> {
        let n = self.pooled_x.len();
        let mut r: Vec<f64> = (lo..hi)
            .map(|i| {
                let row = &self.k_pool[i * n..(i + 1) * n];
                let f: f64 = row.iter().zip(alpha).map(|(k, a)| k * a).sum();
                self.ys[i] - f
            })
            .collect();
        let m = mean(&r);
        for v in r.iter_mut() {
            *v -= m;
        }
        r
    }

    /// Sum of per-dataset HSIC terms plus the anchored RKHS penalty.
    pub fn value(&self, alpha: &[f64]) -> f64 {
        let mut total = 0.0;
        for (d, &(lo, hi)) in self.ranges.iter().enumerate() {
            let r = self.centered_residuals(alpha, lo, hi);
            let nd = hi - lo;
            let s = self.residual_bandwidths[d];
            let inv = 1.0 / (2.0 * s * s);
            let kx = &self.centered_x_grams[d];
            let mut acc = 0.0;
            for i in 0..nd {
                for j in 0..nd {
                    let dr = r[i] - r[j];
                    acc += kx[i * nd + j] * (-dr * dr * inv).exp();
                }
            }
            total += acc / (nd * nd) as f64;
        }
        total + self.penalty(alpha)
    }

    fn penalty(&self, alpha: &[f64]) -> f64 {
        let n = self.pooled_x.len();
        let mut quad = 0.0;
        for i in 0..n {
            let di = alpha[i] - self.anchor[i];
            let row = &self.k_pool[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * (alpha[j] - self.anchor[j]);
            }
            quad += di * acc;
        }
        self.penalty_weight * quad / n as f64
    }

    /// Analytic gradient of [`Self::value`].
    pub fn gradient(&self, alpha: &[f64]) -> Vec<f64> {
        let n = self.pooled_x.len();
        let mut grad = vec![0.0; n];
        for (d, &(lo, hi)) in self.ranges.iter().enumerate() {
            let r = self.centered_residuals(alpha, lo, hi);
            let nd = hi - lo;
            let s = self.residual_bandwidths[d];
            let inv = 1.0 / (2.0 * s * s);
            let kx = &self.centered_x_grams[d];
            // dHSIC/dr_k = -2/(n^2 s^2) sum_j Kx[k,j] L[k,j] (r_k - r_j)
            let mut gr = vec![0.0; nd];
            let scale = -2.0 / ((nd * nd) as f64 * s * s);
            for k in 0..nd {
                let mut acc = 0.0;
                for j in 0..nd {
                    let dr = r[k] - r[j];
                    acc += kx[k * nd + j] * (-dr * dr * inv).exp() * dr;
                }
                gr[k] = scale * acc;
            }
            // Chain rule through r = H (y - K alpha): grad -= K^T (gr - mean).
            let gm = mean(&gr);
            for (k, g) in gr.iter().enumerate() {
                let coef = g - gm;
                let row = &self.k_pool[(lo + k) * n..(lo + k + 1) * n];
                for (gj, kj) in grad.iter_mut().zip(row) {
                    *gj -= coef * kj;
                }
            }
        }
        // Penalty gradient: (2 w / n) K (alpha - anchor).
        let w = 2.0 * self.penalty_weight / n as f64;
        for i in 0..n {
            let row = &self.k_pool[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * (alpha[j] - self.anchor[j]);
            }
            grad[i] += w * acc;
        }
        grad
    }
}

fn centered_gram_of(v: &[f64], bandwidth: f64) -> Vec<f64> {
    let n = v.len();
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d = v[i] - v[j];
            k[i * n + j] = (-d * d * inv).exp();
        }
    }
    let mut row_means = vec![0.0; n];
    for i in 0..n {
        row_means[i] = k[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64;
    }
    let grand = row_means.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            k[i * n + j] += grand - row_means[i] - row_means[j];
        }
    }
    k
}

/// Gradient descent with backtracking line search; every accepted step
/// decreases the objective, so the returned trace is non-increasing.
fn descend(
    objective: &HsicObjective,
    start: Vec<f64>,
    config: &ConditionalAnmConfig,
) -> Result<(Vec<f64>, Vec<f64>), AnmError> {
    let mut alpha = start;
    let mut value = objective.value(&alpha);
    if !value.is_finite() {
        return Err(AnmError::NonFiniteObjective);
    }
    let mut trace = vec![value];
    let mut step = 1.0;
    for _ in 0..config.max_iterations {
        let grad = objective.gradient(&alpha);
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm2 <= 1e-30 {
            break;
        }
        let mut accepted = false;
        let mut t = step;
        for _ in 0..40 {
            let candidate: Vec<f64> =
                alpha.iter().zip(&grad).map(|(a, g)| a - t * g).collect();
            let cv = objective.value(&candidate);
            if cv.is_finite() && cv <= value - 1e-4 * t * gnorm2 {
                let relative_drop = (value - cv) / value.abs().max(1e-300);
                alpha = candidate;
                value = cv;
                trace.push(cv);
                step = t * 2.0;
                accepted = true;
                if relative_drop < config.rel_tol {
                    return Ok((alpha, trace));
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((alpha, trace))
}

/// Fit one shared mechanism over several datasets, enforcing residual
/// independence separately per dataset.
///
/// The shared function is a KRR coefficient vector over the pooled causes
/// plus per-dataset intercept offsets (the first pinned to zero, the rest
/// absorbing differing noise means). Coefficients start at the pooled
/// squared-error fit; when the initial residuals already pass their
/// independence tests (`PolishMode::WhenDependent`, the default) that fit is
/// final, otherwise gradient descent on the HSIC objective refines it.
pub fn fit_conditional_anm(
    datasets: &[PairedSample],
    config: &ConditionalAnmConfig,
) -> Result<ConditionalAnmFit, AnmError> {
    if datasets.len() < 2 {
        return Err(AnmError::TooFewDatasets(datasets.len()));
    }
    for d in datasets {
        if d.n() < 20 {
            return Err(AnmError::TooFewSamples { need: 20, got: d.n() });
        }
    }
    let (objective, model0) = HsicObjective::from_datasets(datasets, config)?;
    let alpha0 = model0.coefficients().to_vec();

    let initial_tests: Vec<HsicResult> = datasets
        .iter()
        .enumerate()
        .map(|(d, pairs)| {
            let (lo, hi) = objective.ranges[d];
            let r = objective.centered_residuals(&alpha0, lo, hi);
            hsic_test(pairs.xs(), &r, config.n_permutations, derive_seed(config.seed, d as u64))
        })
        .collect::<Result<_, _>>()?;

    let needs_polish = match config.polish {
        PolishMode::Always => true,
        PolishMode::Never => false,
        PolishMode::WhenDependent => initial_tests.iter().any(|t| t.p_value <= config.alpha),
    };

    let (alpha, trace) = if needs_polish {
        descend(&objective, alpha0, config)?
    } else {
        (alpha0.clone(), vec![objective.value(&alpha0)])
    };

    // Assemble the shared model: intercept = first dataset's residual mean,
    // remaining datasets get offsets relative to it.
    let raw_means: Vec<f64> = objective
        .ranges
        .iter()
        .map(|&(lo, hi)| {
            let n = objective.pooled_x.len();
            let sum: f64 = (lo..hi)
                .map(|i| {
                    let row = &objective.k_pool[i * n..(i + 1) * n];
                    let f: f64 = row.iter().zip(&alpha).map(|(k, a)| k * a).sum();
                    objective.ys[i] - f
                })
                .sum();
            sum / (hi - lo) as f64
        })
        .collect();
    let model = RegressionModel::from_parts(
        objective.pooled_x.clone(),
        alpha.clone(),
        objective.kernel_bandwidth,
        model0.ridge(),
        raw_means[0],
    );

    let mut per_dataset = Vec::with_capacity(datasets.len());
    for (d, pairs) in datasets.iter().enumerate() {
        let (lo, hi) = objective.ranges[d];
        let residuals = objective.centered_residuals(&alpha, lo, hi);
        let independence = if needs_polish {
            hsic_test(
                pairs.xs(),
                &residuals,
                config.n_permutations,
                derive_seed(config.seed, d as u64),
            )?
        } else {
            initial_tests[d].clone()
        };
        let noise_density = residual_density(&residuals, config.density_m)?;
        per_dataset.push(DatasetDiagnostics {
            offset: raw_means[d] - raw_means[0],
            residuals: SampleSet::new(residuals)?,
            independence,
            noise_density,
        });
    }
    Ok(ConditionalAnmFit { model, per_dataset, objective_trace: trace })
}

/// Serialize an [`AnmFit`] as versioned structured text.
pub fn anm_fit_to_text(fit: &AnmFit) -> String {
    let mut s = String::new();
    s.push_str("anm-fit 1\n");
    s.push_str("model-begin\n");
    s.push_str(&fit.model.to_text());
    s.push_str("model-end\n");
    s.push_str(&format!("residuals {}\n", fit.residuals.len()));
    for v in fit.residuals.iter() {
        s.push_str(&fmt17(*v));
        s.push('\n');
    }
    s.push_str(&format!(
        "hsic {} {} {} {}\n",
        fmt17(fit.independence.statistic),
        fmt17(fit.independence.p_value),
        fit.independence.n_permutations,
        fit.independence.seed
    ));
    s.push_str("noise-begin\n");
    s.push_str(&fit.noise_density.to_text());
    s.push_str("noise-end\n");
    s
}

/// Parse the output of [`anm_fit_to_text`].
pub fn anm_fit_from_text(text: &str) -> Result<AnmFit, AnmError> {
    let mut lines = text.lines();
    let mut expect = |what: &str| -> Result<String, AnmError> {
        lines.next().map(str::to_string).ok_or_else(|| AnmError::Parse(format!("missing {what}")))
    };
    if expect("header")? != "anm-fit 1" {
        return Err(AnmError::Parse("bad header".into()));
    }
    if expect("model-begin")? != "model-begin" {
        return Err(AnmError::Parse("expected model-begin".into()));
    }
    let mut model_text = String::new();
    loop {
        let l = expect("model body")?;
        if l == "model-end" {
            break;
        }
        model_text.push_str(&l);
        model_text.push('\n');
    }
    let model = RegressionModel::from_text(&model_text)?;
    let res_header = expect("residuals header")?;
    let count: usize = res_header
        .strip_prefix("residuals ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| AnmError::Parse(format!("bad residuals header {res_header:?}")))?;
    let mut residuals = Vec::with_capacity(count);
    for _ in 0..count {
        let l = expect("residual value")?;
        residuals.push(
            l.trim().parse::<f64>().map_err(|e| AnmError::Parse(format!("bad residual: {e}")))?,
        );
    }
    let hsic_line = expect("hsic line")?;
    let parts: Vec<&str> = hsic_line.split_whitespace().collect();
    if parts.len() != 5 || parts[0] != "hsic" {
        return Err(AnmError::Parse(format!("bad hsic line {hsic_line:?}")));
    }
    let independence = HsicResult {
        statistic: parts[1].parse().map_err(|_| AnmError::Parse("bad stat".into()))?,
        p_value: parts[2].parse().map_err(|_| AnmError::Parse("bad p".into()))?,
        n_permutations: parts[3].parse().map_err(|_| AnmError::Parse("bad nperm".into()))?,
        seed: parts[4].parse().map_err(|_| AnmError::Parse("bad seed".into()))?,
    };
    if expect("noise-begin")? != "noise-begin" {
        return Err(AnmError::Parse("expected noise-begin".into()));
    }
    let mut noise_text = String::new();
    loop {
        let l = expect("noise body")?;
        if l == "noise-end" {
            break;
        }
        noise_text.push_str(&l);
        noise_text.push('\n');
    }
    let noise_density = GridDensity::from_text(&noise_text)?;
    Ok(AnmFit { model, residuals: SampleSet::new(residuals)?, independence, noise_density })
}
