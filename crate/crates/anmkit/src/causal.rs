//! Inverting injective conditionals, localizing which factor of a joint
//! distribution changed, re-estimating causal conditionals after a shift, and
//! checking model-implied marginals against fresh data.
//!
//! Localization works on the additive decomposition of the effect: the effect
//! density is the convolution of the mechanism push-forward with the noise
//! density, so deconvolving new effect data by the trained noise probes "did
//! the cause change?" while deconvolving by the trained push-forward probes
//! "did the mechanism change?". Each branch is certified by a validity check
//! whose tolerance is calibrated by a bootstrap under the no-change null;
//! when both branches certify, the verdict is `Ambiguous` by design rather
//! than broken by a tie-break.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::anm::{fit_anm, AnmConfig, AnmError, AnmFit};
use crate::density::{
    convolve, deconvolve, kde, l1_distance, silverman_bandwidth, validity, Bandwidth,
    DensityError, Grid, GridDensity, SignedGridFn, ValidityReport, DECONV_REG_DEFAULT,
};
use crate::regress::RegressionModel;
use crate::sample::{PairedSample, SampleError, SampleSet};
use crate::util::{derive_seed, quantile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CausalError {
    #[error("matrix is rank deficient (sigma_min/sigma_max = {ratio:.3e})")]
    RankDeficient { ratio: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("not a probability vector: {0}")]
    InvalidVector(String),
    #[error("psi table is not strictly monotone")]
    NonInvertiblePsi,
    #[error("phi table is not strictly monotone")]
    NonInjectivePhi,
    #[error("density support outside the invertible range: {0}")]
    SupportMismatch(String),
    #[error("deconvolution is not a valid distribution (negative mass {}, mass error {})", .0.negative_mass, .0.total_mass_error)]
    InvalidDeconvolution(ValidityReport),
    #[error("train data does not fit an ANM (independence p = {p_value})")]
    AnmMisfit { p_value: f64 },
    #[error("model and data types do not match: {0}")]
    TypeMismatch(String),
    #[error(transparent)]
    Anm(#[from] AnmError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error("parse error: {0}")]
    Parse(String),
}

/// A column-stochastic matrix: column j holds P(output | input = j).
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    n_out: usize,
    n_in: usize,
    /// Row-major entries.
    entries: Vec<f64>,
}

impl StochasticMatrix {
    pub fn new(n_out: usize, n_in: usize, entries: Vec<f64>) -> Result<Self, CausalError> {
        if entries.len() != n_out * n_in {
            return Err(CausalError::DimensionMismatch {
                expected: n_out * n_in,
                got: entries.len(),
            });
        }
        for j in 0..n_in {
            let mut col_sum = 0.0;
            for i in 0..n_out {
                let v = entries[i * n_in + j];
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(CausalError::InvalidVector(format!(
                        "entry ({i}, {j}) = {v} is not a probability"
                    )));
                }
                col_sum += v;
            }
            if (col_sum - 1.0).abs() > 1e-9 {
                return Err(CausalError::InvalidVector(format!(
                    "column {j} sums to {col_sum}, expected 1"
                )));
            }
        }
        Ok(StochasticMatrix { n_out, n_in, entries })
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n_in + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_out).map(|i| self.entry(i, j)).collect()
    }

    /// The implied output marginal `M p` for an input marginal `p`.
    pub fn apply(&self, p: &[f64]) -> Result<Vec<f64>, CausalError> {
        if p.len() != self.n_in {
            return Err(CausalError::DimensionMismatch { expected: self.n_in, got: p.len() });
        }
        Ok((0..self.n_out)
            .map(|i| (0..self.n_in).map(|j| self.entry(i, j) * p[j]).sum())
            .collect())
    }

    /// File format: header line "n_out n_in", then `n_out` rows of entries.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.n_out, self.n_in);
        for i in 0..self.n_out {
            let row: Vec<String> =
                (0..self.n_in).map(|j| crate::util::fmt17(self.entry(i, j))).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CausalError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| CausalError::Parse("empty input".into()))?;
        let dims: Vec<usize> =
            header.split_whitespace().filter_map(|t| t.parse().ok()).collect();
        if dims.len() != 2 {
            return Err(CausalError::Parse(format!("bad header {header:?}")));
        }
        let (n_out, n_in) = (dims[0], dims[1]);
        let mut entries = Vec::with_capacity(n_out * n_in);
        for _ in 0..n_out {
            let line = lines.next().ok_or_else(|| CausalError::Parse("truncated rows".into()))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| CausalError::Parse(format!("{e}"))))
                .collect::<Result<_, _>>()?;
            if row.len() != n_in {
                return Err(CausalError::Parse(format!(
                    "row has {} entries, expected {n_in}",
                    row.len()
                )));
            }
            entries.extend(row);
        }
        StochasticMatrix::new(n_out, n_in, entries)
    }
}

/// Result of inverting a discrete conditional.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixInversion {
    /// Recovered input marginal on the simplex.
    pub p: Vec<f64>,
    /// L1 residual of `M p - q`.
    pub residual_l1: f64,
}

fn check_probability_vector(q: &[f64]) -> Result<(), CausalError> {
    if q.iter().any(|v| !v.is_finite() || *v < -1e-12) {
        return Err(CausalError::InvalidVector("negative or non-finite entry".into()));
    }
    let sum: f64 = q.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(CausalError::InvalidVector(format!("sums to {sum}, expected 1")));
    }
    Ok(())
}

/// Recover the input marginal from an output marginal through a full-rank
/// column-stochastic matrix, as least squares constrained to the simplex.
/// Exact when `q` lies in the column cone of `M`.
pub fn invert_matrix_conditional(
    m: &StochasticMatrix,
    q: &[f64],
) -> Result<MatrixInversion, CausalError> {
    if q.len() != m.n_out {
        return Err(CausalError::DimensionMismatch { expected: m.n_out, got: q.len() });
    }
    check_probability_vector(q)?;
    let mat = DMatrix::from_fn(m.n_out, m.n_in, |i, j| m.entry(i, j));
    let svd = mat.clone().svd(false, false);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if m.n_in > m.n_out || s_min <= 1e-10 * s_max {
        return Err(CausalError::RankDeficient { ratio: s_min / s_max });
    }
    let qv = DVector::from_column_slice(q);
    let p = simplex_least_squares(&mat, &qv)?;
    let residual = &mat * DVector::from_column_slice(&p) - &qv;
    Ok(MatrixInversion { p, residual_l1: residual.iter().map(|v| v.abs()).sum() })
}

/// Active-set solver for `min ||M p - q||^2` subject to `sum p = 1, p >= 0`.
fn simplex_least_squares(m: &DMatrix<f64>, q: &DVector<f64>) -> Result<Vec<f64>, CausalError> {
    let n = m.ncols();
    let mtm = m.transpose() * m;
    let mtq = m.transpose() * q;

    // Equality-constrained solve restricted to the free set.
    let solve_eq = |free: &[usize]| -> Option<Vec<f64>> {
        let k = free.len();
        let mut kkt = DMatrix::zeros(k + 1, k + 1);
        let mut rhs = DVector::zeros(k + 1);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                kkt[(a, b)] = 2.0 * mtm[(i, j)];
            }
            kkt[(a, k)] = 1.0;
            kkt[(k, a)] = 1.0;
            rhs[a] = 2.0 * mtq[i];
        }
        rhs[k] = 1.0;
        kkt.lu().solve(&rhs).map(|sol| sol.iter().take(k).copied().collect())
    };

    let mut free: Vec<usize> = (0..n).collect();
    let mut p = vec![1.0 / n as f64; n];
    for _ in 0..(50 * (n + 1)) {
        let z_free = solve_eq(&free).ok_or(CausalError::RankDeficient { ratio: 0.0 })?;
        let mut z = vec![0.0; n];
        for (a, &i) in free.iter().enumerate() {
            z[i] = z_free[a];
        }
        if free.iter().all(|&i| z[i] >= -1e-12) {
            for (i, v) in z.iter().enumerate() {
                p[i] = v.max(0.0);
            }
            // Dual feasibility for the pinned coordinates.
            let pv = DVector::from_column_slice(&p);
            let grad = 2.0 * (&mtm * &pv - &mtq);
            let mu = if free.is_empty() {
                0.0
            } else {
                -free.iter().map(|&i| grad[i]).sum::<f64>() / free.len() as f64
            };
            let mut worst: Option<(usize, f64)> = None;
            for i in 0..n {
                if !free.contains(&i) {
                    let nu = grad[i] + mu;
                    if nu < -1e-10 && worst.map(|(_, w)| nu < w).unwrap_or(true) {
                        worst = Some((i, nu));
                    }
                }
            }
            match worst {
                None => return Ok(p),
                Some((i, _)) => free.push(i),
            }
        } else {
            // Step toward z until the first free coordinate hits zero.
            let mut t = 1.0f64;
            for &i in &free {
                if z[i] < 0.0 && p[i] > z[i] {
                    t = t.min(p[i] / (p[i] - z[i]));
                }
            }
            for &i in &free {
                p[i] += t * (z[i] - p[i]);
            }
            free.retain(|&i| p[i] > 1e-12);
        }
    }
    Ok(p)
}

/// A scalar map tabulated at the bin centers of a grid, evaluated by linear
/// interpolation and clamped outside the table.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFn {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFn {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, CausalError> {
        if values.len() != grid.m() {
            return Err(CausalError::DimensionMismatch {
                expected: grid.m(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CausalError::InvalidVector("non-finite table value".into()));
        }
        Ok(GridFn { grid, values })
    }

    /// Tabulate a closure at the grid's bin centers.
    pub fn tabulate(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self, CausalError> {
        let values = (0..grid.m()).map(|k| f(grid.center(k))).collect();
        GridFn::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, t: f64) -> f64 {
        let c0 = self.grid.center(0);
        let u = (t - c0) / self.grid.step();
        if u <= 0.0 {
            return self.values[0];
        }
        let last = self.values.len() - 1;
        if u >= last as f64 {
            return self.values[last];
        }
        let k = u.floor() as usize;
        let frac = u - k as f64;
        self.values[k] * (1.0 - frac) + self.values[k + 1] * frac
    }

    pub fn is_strictly_monotone(&self) -> bool {
        let increasing = self.values[1] > self.values[0];
        self.values.windows(2).all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] })
    }

    /// Derivative by interpolating centered node slopes, so the result is
    /// continuous in `t` (a piecewise-constant slope injects staircase
    /// artifacts into change-of-variable densities).
    pub fn derivative(&self, t: f64) -> f64 {
        let step = self.grid.step();
        let last = self.values.len() - 1;
        let node_slope = |k: usize| -> f64 {
            if k == 0 {
                (self.values[1] - self.values[0]) / step
            } else if k == last {
                (self.values[last] - self.values[last - 1]) / step
            } else {
                (self.values[k + 1] - self.values[k - 1]) / (2.0 * step)
            }
        };
        let c0 = self.grid.center(0);
        let u = ((t - c0) / step).clamp(0.0, last as f64);
        let k = (u.floor() as usize).min(last - 1);
        let frac = u - k as f64;
        node_slope(k) * (1.0 - frac) + node_slope(k + 1) * frac
    }

    /// Inverse of a strictly monotone table by bisection plus interpolation.
    pub fn inverse_eval(&self, y: f64) -> f64 {
        let increasing = self.values[1] > self.values[0];
        let cmp = |v: f64| if increasing { v < y } else { v > y };
        let (mut lo, mut hi) = (0usize, self.values.len() - 1);
        if !cmp(self.values[lo]) {
            return self.grid.center(lo);
        }
        if cmp(self.values[hi]) {
            return self.grid.center(hi);
        }
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if cmp(self.values[mid]) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (vl, vh) = (self.values[lo], self.values[hi]);
        let frac = if (vh - vl).abs() < 1e-300 { 0.5 } else { (y - vl) / (vh - vl) };
        self.grid.center(lo) + frac * self.grid.step()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A post-nonlinear conditional `Y = psi(phi(X) + N)` with invertible `psi`,
/// supplied as tabulated maps plus a zero-mean noise density.
#[derive(Debug, Clone)]
pub struct PnlConditional {
    pub psi: GridFn,
    pub phi: GridFn,
    pub noise: GridDensity,
}

impl PnlConditional {
    pub fn new(psi: GridFn, phi: GridFn, noise: GridDensity) -> Result<Self, CausalError> {
        if !psi.is_strictly_monotone() {
            return Err(CausalError::NonInvertiblePsi);
        }
        Ok(PnlConditional { psi, phi, noise: noise.recentered_to_zero_mean() })
    }
}

/// Recover the input marginal from an output marginal through a PNL
/// conditional: change variables through `psi^-1`, deconvolve the noise
/// (certified at `tolerance`), change variables through `phi^-1`.
pub fn invert_pnl_conditional(
    cond: &PnlConditional,
    q: &GridDensity,
    tolerance: f64,
) -> Result<GridDensity, CausalError> {
    if !cond.psi.is_strictly_monotone() {
        return Err(CausalError::NonInvertiblePsi);
    }
    if !cond.phi.is_strictly_monotone() {
        return Err(CausalError::NonInjectivePhi);
    }
    // q must live inside psi's range.
    let (psi_lo, psi_hi) = (cond.psi.min_value(), cond.psi.max_value());
    let outside = 1.0 - q.mass_between(psi_lo, psi_hi);
    if outside > 1e-6 {
        return Err(CausalError::SupportMismatch(format!(
            "{outside:.3e} of the output mass lies outside psi's range [{psi_lo}, {psi_hi}]"
        )));
    }

    // (i) density of T = psi^-1(Y) on a grid sharing the noise step.
    let step = cond.noise.grid().step();
    let t_span = [cond.psi.grid().lo(), cond.psi.grid().hi()];
    let t_grid = Grid::covering_with_step(&t_span, 0.0, step)?;
    let t_values: Vec<f64> = (0..t_grid.m())
        .map(|k| {
            let t = t_grid.center(k);
            q.eval(cond.psi.eval(t)) * cond.psi.derivative(t).abs()
        })
        .collect();
    let p_t = GridDensity::from_unnormalized(t_grid, t_values)?;

    // (ii) deconvolve the noise and certify the result. Supplied PNL
    // conditionals are exact tabulated densities, so a much lighter
    // regularization than the sampled-data default is appropriate.
    const PNL_DECONV_REG: f64 = 1e-7;
    let rec = deconvolve(&p_t, &cond.noise, PNL_DECONV_REG)?;
    let report = validity(&rec, tolerance);
    if !report.is_valid {
        return Err(CausalError::InvalidDeconvolution(report));
    }
    let (p_phi_x, _) = rec.clipped_density()?;

    // (iii) change of variables through phi^-1 onto phi's own grid.
    let x_grid = cond.phi.grid().clone();
    let x_values: Vec<f64> = (0..x_grid.m())
        .map(|k| {
            let x = x_grid.center(k);
            p_phi_x.eval(cond.phi.eval(x)) * cond.phi.derivative(x).abs()
        })
        .collect();
    Ok(GridDensity::from_unnormalized(x_grid, x_values)?)
}

/// The localization verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftVerdict {
    CauseChanged,
    MechanismChanged,
    Ambiguous,
    NoFit,
}

impl ShiftVerdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            ShiftVerdict::CauseChanged => "cause-changed",
            ShiftVerdict::MechanismChanged => "mechanism-changed",
            ShiftVerdict::Ambiguous => "ambiguous",
            ShiftVerdict::NoFit => "no-fit",
        }
    }
}

/// Outcome of localizing a distribution change.
#[derive(Debug, Clone)]
pub struct ShiftDiagnosis {
    pub verdict: ShiftVerdict,
    /// Validity of deconvolving new effects by the trained noise (recovers a
    /// candidate cause push-forward; valid means the cause may have changed).
    pub cause_branch: ValidityReport,
    /// Validity of deconvolving by the trained push-forward (recovers a
    /// candidate noise; valid means the mechanism may have changed).
    pub mechanism_branch: ValidityReport,
    /// The density recovered by the uniquely valid branch.
    pub recovered: Option<GridDensity>,
}

pub(crate) fn verdict_from_validity(cause_valid: bool, mechanism_valid: bool) -> ShiftVerdict {
    match (cause_valid, mechanism_valid) {
        (true, false) => ShiftVerdict::CauseChanged,
        (false, true) => ShiftVerdict::MechanismChanged,
        (true, true) => ShiftVerdict::Ambiguous,
        (false, false) => ShiftVerdict::NoFit,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizeConfig {
    pub anm: AnmConfig,
    /// Bin count of the new-effect grid; the other densities share its step.
    pub grid_m: usize,
    /// Resamples for the null calibration of the validity tolerance.
    pub bootstrap_resamples: usize,
    pub validity_quantile: f64,
    pub deconv_reg: f64,
    /// Floor under the calibrated tolerance.
    pub min_tolerance: f64,
    pub seed: u64,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            anm: AnmConfig::default(),
            grid_m: 512,
            bootstrap_resamples: 200,
            validity_quantile: 0.95,
            deconv_reg: DECONV_REG_DEFAULT,
            min_tolerance: 1e-3,
            seed: 0,
        }
    }
}

/// The shared-step density triple used by localization.
struct LocalizedDensities {
    p_effect_new: GridDensity,
    p_phi: GridDensity,
    p_noise: GridDensity,
    effect_bandwidth: f64,
    phi_values: Vec<f64>,
    residuals: Vec<f64>,
}

fn build_densities(
    fit: &AnmFit,
    train: &PairedSample,
    new_effects: &SampleSet,
    grid_m: usize,
) -> Result<LocalizedDensities, CausalError> {
    // One bandwidth for all three estimates: the smoothing kernel then
    // cancels exactly in each deconvolution ratio (the effect estimate
    // carries phi * noise * kernel, the factor estimates carry factor *
    // kernel), so neither branch inherits a bandwidth mismatch. The smallest
    // of the three rule-of-thumb bandwidths keeps the kernels' spectral
    // structure alive; the extra roughness of the undersmoothed estimates is
    // absorbed by the bootstrap-calibrated tolerance.
    let phi_values_pre = fit.model.evaluate_all(train.xs());
    let effect_bandwidth = silverman_bandwidth(new_effects)
        .min(silverman_bandwidth(&phi_values_pre))
        .min(silverman_bandwidth(&fit.residuals));
    let e_grid = Grid::covering(new_effects, 3.0 * effect_bandwidth + 1e-9, grid_m)?;
    let step = e_grid.step();
    let p_effect_new = kde(new_effects, &e_grid, Bandwidth::Fixed(effect_bandwidth))?;

    let phi_values = phi_values_pre;
    let phi_sample = SampleSet::new(phi_values.clone())?;
    let phi_grid = Grid::covering_with_step(&phi_values, 3.0 * effect_bandwidth + 1e-9, step)?;
    let p_phi = kde(&phi_sample, &phi_grid, Bandwidth::Fixed(effect_bandwidth))?;

    let residuals = fit.residuals.as_slice().to_vec();
    let r_grid = Grid::covering_with_step(&residuals, 3.0 * effect_bandwidth + 1e-9, step)?;
    let p_noise = kde(&fit.residuals, &r_grid, Bandwidth::Fixed(effect_bandwidth))?;

    Ok(LocalizedDensities { p_effect_new, p_phi, p_noise, effect_bandwidth, phi_values, residuals })
}

/// Validity statistic of one deconvolution branch: infinite when the branch
/// cannot even be computed.
fn branch_statistic(target: &GridDensity, kernel: &GridDensity, reg: f64) -> f64 {
    match deconvolve(target, kernel, reg) {
        Ok(f) => {
            let rep = validity(&f, f64::INFINITY);
            rep.negative_mass.max(rep.total_mass_error)
        }
        Err(_) => f64::INFINITY,
    }
}

struct Calibration {
    tol_cause: f64,
    tol_mechanism: f64,
    reconvolution_threshold: f64,
}

/// Bootstrap the validity statistic under the no-change null: resample
/// effects from the fitted model (independent cause and residual draws),
/// re-estimate their density with the frozen bandwidth, deconvolve by each
/// trained factor, and take an upper quantile of the statistics.
fn calibrate(
    dens: &LocalizedDensities,
    n_new: usize,
    config: &LocalizeConfig,
) -> Result<Calibration, CausalError> {
    let b = config.bootstrap_resamples.max(1);
    let mut stats_cause = Vec::with_capacity(b);
    let mut stats_mech = Vec::with_capacity(b);
    let mut stats_recon = Vec::with_capacity(b);
    let n_phi = dens.phi_values.len();
    let n_res = dens.residuals.len();
    let step = dens.p_effect_new.grid().step();
    for i in 0..b {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0xB000 + i as u64));
        let resample: Vec<f64> = (0..n_new)
            .map(|_| {
                dens.phi_values[rng.random_range(0..n_phi)]
                    + dens.residuals[rng.random_range(0..n_res)]
            })
            .collect();
        let sample = SampleSet::new(resample)?;
        let grid =
            Grid::covering_with_step(&sample, 3.0 * dens.effect_bandwidth + 1e-9, step)?;
        let d = kde(&sample, &grid, Bandwidth::Fixed(dens.effect_bandwidth))?;
        stats_cause.push(branch_statistic(&d, &dens.p_noise, config.deconv_reg));
        stats_mech.push(branch_statistic(&d, &dens.p_phi, config.deconv_reg));
        // Reconvolution error of the mechanism branch under the null.
        let recon = deconvolve(&d, &dens.p_phi, config.deconv_reg)
            .ok()
            .and_then(|f| f.clipped_density().ok())
            .and_then(|(noise, _)| convolve(&dens.p_phi, &noise).ok())
            .map(|model| l1_distance(&model, &d))
            .unwrap_or(f64::INFINITY);
        stats_recon.push(recon);
    }
    let q = config.validity_quantile;
    Ok(Calibration {
        tol_cause: quantile(&stats_cause, q).max(config.min_tolerance),
        tol_mechanism: quantile(&stats_mech, q).max(config.min_tolerance),
        reconvolution_threshold: quantile(&stats_recon, q).max(config.min_tolerance),
    })
}

fn fit_train(train: &PairedSample, config: &LocalizeConfig) -> Result<AnmFit, CausalError> {
    let fit = fit_anm(train, &config.anm)?;
    if fit.independence.p_value <= config.anm.alpha {
        return Err(CausalError::AnmMisfit { p_value: fit.independence.p_value });
    }
    Ok(fit)
}

/// Probe hook: branch statistics and calibrated tolerances for diagnostics.
#[doc(hidden)]
pub fn localize_probe(
    train: &PairedSample,
    new_effects: &SampleSet,
    config: &LocalizeConfig,
) -> Result<(f64, f64, f64, f64), CausalError> {
    let fit = fit_train(train, config)?;
    let dens = build_densities(&fit, train, new_effects, config.grid_m)?;
    let cal = calibrate(&dens, new_effects.len(), config)?;
    let stat_cause = branch_statistic(&dens.p_effect_new, &dens.p_noise, config.deconv_reg);
    let stat_mech = branch_statistic(&dens.p_effect_new, &dens.p_phi, config.deconv_reg);
    Ok((stat_cause, cal.tol_cause, stat_mech, cal.tol_mechanism))
}

/// Decide whether the cause marginal or the mechanism changed, given trained
/// pairs and a new sample of effects.
pub fn localize_shift(
    train: &PairedSample,
    new_effects: &SampleSet,
    config: &LocalizeConfig,
) -> Result<ShiftDiagnosis, CausalError> {
    if new_effects.len() < 20 {
        return Err(AnmError::TooFewSamples { need: 20, got: new_effects.len() }.into());
    }
    let fit = fit_train(train, config)?;
    let dens = build_densities(&fit, train, new_effects, config.grid_m)?;
    let cal = calibrate(&dens, new_effects.len(), config)?;
    diagnose(&dens, &cal, config)
}

/// [`localize_shift`] with the ANM fit supplied by the caller; used by
/// pipelines that already fitted the train data.
pub fn localize_shift_with_fit(
    fit: &AnmFit,
    train: &PairedSample,
    new_effects: &SampleSet,
    config: &LocalizeConfig,
) -> Result<ShiftDiagnosis, CausalError> {
    if fit.independence.p_value <= config.anm.alpha {
        return Err(CausalError::AnmMisfit { p_value: fit.independence.p_value });
    }
    let dens = build_densities(fit, train, new_effects, config.grid_m)?;
    let cal = calibrate(&dens, new_effects.len(), config)?;
    diagnose(&dens, &cal, config)
}

fn diagnose(
    dens: &LocalizedDensities,
    cal: &Calibration,
    config: &LocalizeConfig,
) -> Result<ShiftDiagnosis, CausalError> {
    let validity_of = |kernel: &GridDensity, tol: f64| -> (ValidityReport, Option<SignedGridFn>) {
        match deconvolve(&dens.p_effect_new, kernel, config.deconv_reg) {
            Ok(f) => (validity(&f, tol), Some(f)),
            Err(_) => (ValidityReport::infeasible(tol), None),
        }
    };
    let (cause_branch, cause_fn) = validity_of(&dens.p_noise, cal.tol_cause);
    let (mechanism_branch, mech_fn) = validity_of(&dens.p_phi, cal.tol_mechanism);
    let verdict = verdict_from_validity(cause_branch.is_valid, mechanism_branch.is_valid);
    let recovered = match verdict {
        ShiftVerdict::CauseChanged => cause_fn.and_then(|f| f.clipped_density().ok()).map(|d| d.0),
        ShiftVerdict::MechanismChanged => {
            mech_fn.and_then(|f| f.clipped_density().ok()).map(|d| d.0)
        }
        _ => None,
    };
    Ok(ShiftDiagnosis { verdict, cause_branch, mechanism_branch, recovered })
}

/// An adapted causal conditional: the trained mechanism with a re-estimated
/// noise density.
#[derive(Debug, Clone)]
pub struct CausalConditionalEstimate {
    pub model: RegressionModel,
    /// Recovered new noise density, clipped, renormalized, zero-mean.
    pub new_noise: GridDensity,
    pub validity: ValidityReport,
    /// Negative mass removed when clipping the deconvolution.
    pub clipped_mass: f64,
    /// L1 distance between the reconvolved model and the new-effect density.
    pub reconvolution_l1: f64,
    pub reconvolution_threshold: f64,
    /// Whether the reconvolution error stays within the calibrated null.
    pub consistent: bool,
}

/// Re-estimate the conditional after an output shift, assuming the cause
/// marginal stayed fixed: deconvolve the new effect density by the trained
/// mechanism push-forward to recover the new noise.
pub fn estimate_causal_conditional(
    train: &PairedSample,
    new_effects: &SampleSet,
    config: &LocalizeConfig,
) -> Result<CausalConditionalEstimate, CausalError> {
    if new_effects.len() < 20 {
        return Err(AnmError::TooFewSamples { need: 20, got: new_effects.len() }.into());
    }
    let fit = fit_train(train, config)?;
    estimate_causal_conditional_with_fit(&fit, train, new_effects, config)
}

/// [`estimate_causal_conditional`] reusing an existing train fit.
pub fn estimate_causal_conditional_with_fit(
    fit: &AnmFit,
    train: &PairedSample,
    new_effects: &SampleSet,
    config: &LocalizeConfig,
) -> Result<CausalConditionalEstimate, CausalError> {
    let dens = build_densities(fit, train, new_effects, config.grid_m)?;
    let cal = calibrate(&dens, new_effects.len(), config)?;
    // A target narrower than the kernel cannot have a factor at all; report
    // that as an invalid deconvolution rather than a grid error.
    let rec = match deconvolve(&dens.p_effect_new, &dens.p_phi, config.deconv_reg) {
        Ok(f) => f,
        Err(DensityError::SupportTooNarrow { .. }) | Err(DensityError::DegenerateKernel) => {
            return Err(CausalError::InvalidDeconvolution(ValidityReport::infeasible(
                cal.tol_mechanism,
            )))
        }
        Err(e) => return Err(e.into()),
    };
    let report = validity(&rec, cal.tol_mechanism);
    if !report.is_valid {
        return Err(CausalError::InvalidDeconvolution(report));
    }
    let (clipped, clipped_mass) = rec.clipped_density()?;
    let new_noise = clipped.recentered_to_zero_mean();
    let recon = convolve(&dens.p_phi, &new_noise)?;
    let reconvolution_l1 = l1_distance(&recon, &dens.p_effect_new);
    Ok(CausalConditionalEstimate {
        model: fit.model.clone(),
        new_noise,
        validity: report,
        clipped_mass,
        reconvolution_l1,
        reconvolution_threshold: cal.reconvolution_threshold,
        consistent: reconvolution_l1 <= cal.reconvolution_threshold,
    })
}

/// A generative model of the ML input, for checking against fresh inputs.
pub enum MarginalModel<'a> {
    /// Discrete conditional (column-stochastic matrix) with a prior over its
    /// input categories.
    Discrete { conditional: &'a StochasticMatrix, prior: &'a [f64] },
    /// Continuous additive-noise conditional with a prior density over the
    /// cause.
    Continuous {
        model: &'a RegressionModel,
        noise: &'a GridDensity,
        prior: &'a GridDensity,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyConfig {
    pub grid_m: usize,
    pub bootstrap_resamples: usize,
    pub quantile: f64,
    pub seed: u64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig { grid_m: 512, bootstrap_resamples: 200, quantile: 0.95, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyCheck {
    pub distance: f64,
    pub threshold: f64,
    pub consistent: bool,
}

/// Model-implied marginal of the effect for a continuous conditional: a
/// mixture of the noise density shifted by the mechanism, integrated against
/// the prior.
pub fn implied_marginal_continuous(
    model: &RegressionModel,
    noise: &GridDensity,
    prior: &GridDensity,
    x_grid: &Grid,
) -> Result<GridDensity, CausalError> {
    let step_y = prior.grid().step();
    let step_x = x_grid.step();
    let phi: Vec<f64> = (0..prior.grid().m())
        .map(|j| model.evaluate(prior.grid().center(j)))
        .collect();
    let values: Vec<f64> = (0..x_grid.m())
        .map(|k| {
            let lo = x_grid.lo() + k as f64 * step_x;
            let hi = lo + step_x;
            let mass: f64 = (0..prior.grid().m())
                .map(|j| {
                    prior.values()[j] * step_y * noise.mass_between(lo - phi[j], hi - phi[j])
                })
                .sum();
            mass / step_x
        })
        .collect();
    Ok(GridDensity::from_unnormalized(x_grid.clone(), values)?)
}

/// Check whether fresh inputs are consistent with the model-implied input
/// marginal; the threshold is calibrated by resampling from the implied
/// marginal itself.
pub fn marginal_consistency_check(
    model: &MarginalModel,
    extra_inputs: &SampleSet,
    config: &ConsistencyConfig,
) -> Result<ConsistencyCheck, CausalError> {
    match model {
        MarginalModel::Discrete { conditional, prior } => {
            check_probability_vector(prior)?;
            if prior.len() != conditional.n_in() {
                return Err(CausalError::DimensionMismatch {
                    expected: conditional.n_in(),
                    got: prior.len(),
                });
            }
            let implied = conditional.apply(prior)?;
            let k = implied.len();
            let mut counts = vec![0usize; k];
            for &v in extra_inputs.iter() {
                if (v - v.round()).abs() > 1e-9 || v < -0.5 || v.round() >= k as f64 {
                    return Err(CausalError::TypeMismatch(format!(
                        "value {v} is not a category index in 0..{k}"
                    )));
                }
                counts[v.round() as usize] += 1;
            }
            let n = extra_inputs.len();
            let freq: Vec<f64> = counts.iter().map(|c| *c as f64 / n as f64).collect();
            let distance: f64 = freq.iter().zip(&implied).map(|(a, b)| (a - b).abs()).sum();
            // Null: multinomial draws from the implied marginal.
            let cum: Vec<f64> = implied
                .iter()
                .scan(0.0, |acc, v| {
                    *acc += v;
                    Some(*acc)
                })
                .collect();
            let b = config.bootstrap_resamples.max(1);
            let mut stats = Vec::with_capacity(b);
            for i in 0..b {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0xC000 + i as u64));
                let mut boot = vec![0usize; k];
                for _ in 0..n {
                    let u: f64 = rng.random();
                    let idx = cum.iter().position(|c| u <= *c).unwrap_or(k - 1);
                    boot[idx] += 1;
                }
                stats.push(
                    boot.iter()
                        .zip(&implied)
                        .map(|(c, p)| (*c as f64 / n as f64 - p).abs())
                        .sum(),
                );
            }
            let threshold = quantile(&stats, config.quantile);
            Ok(ConsistencyCheck { distance, threshold, consistent: distance <= threshold })
        }
        MarginalModel::Continuous { model, noise, prior } => {
            // Grid covering both the implied support and the fresh inputs.
            let phi: Vec<f64> = (0..prior.grid().m())
                .map(|j| model.evaluate(prior.grid().center(j)))
                .collect();
            let bw = silverman_bandwidth(extra_inputs);
            let lo = (phi.iter().copied().fold(f64::INFINITY, f64::min) + noise.grid().lo())
                .min(extra_inputs.min());
            let hi = (phi.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                + noise.grid().hi())
            .max(extra_inputs.max());
            let pad = 4.0 * bw;
            let x_grid = Grid::new(lo - pad, hi + pad, config.grid_m)?;
            let implied = implied_marginal_continuous(model, noise, prior, &x_grid)?;
            let observed = kde(extra_inputs, &x_grid, Bandwidth::Fixed(bw))?;
            let distance = l1_distance(&implied, &observed);
            // Null: resample same-size input sets from the implied marginal.
            let n = extra_inputs.len();
            let b = config.bootstrap_resamples.max(1);
            let mut stats = Vec::with_capacity(b);
            for i in 0..b {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0xC100 + i as u64));
                let draws: Vec<f64> =
                    (0..n).map(|_| implied.inverse_cdf(rng.random())).collect();
                let sample = SampleSet::new(draws)?;
                let boot = kde(&sample, &x_grid, Bandwidth::Fixed(bw))?;
                stats.push(l1_distance(&implied, &boot));
            }
            let threshold = quantile(&stats, config.quantile);
            Ok(ConsistencyCheck { distance, threshold, consistent: distance <= threshold })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, CauseDist, GeneratorSpec, Mechanism, NoiseDist};
    use crate::density::{gaussian_density, spike_density, uniform_density};
    use crate::regress::{fit_krr, Ridge};

    #[test]
    fn identity_matrix_inverts_trivially() {
        let m = StochasticMatrix::new(
            3,
            3,
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let inv = invert_matrix_conditional(&m, &[0.2, 0.3, 0.5]).unwrap();
        for (a, b) in inv.p.iter().zip(&[0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(inv.residual_l1 < 1e-10);
    }

    #[test]
    fn forward_multiply_then_invert() {
        let m = StochasticMatrix::new(2, 2, vec![0.9, 0.2, 0.1, 0.8]).unwrap();
        let p = [0.4, 0.6];
        let q = m.apply(&p).unwrap();
        let inv = invert_matrix_conditional(&m, &q).unwrap();
        for (a, b) in inv.p.iter().zip(&p) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn duplicate_columns_are_rank_deficient() {
        let m = StochasticMatrix::new(3, 2, vec![0.5, 0.5, 0.2, 0.2, 0.3, 0.3]).unwrap();
        assert!(matches!(
            invert_matrix_conditional(&m, &[0.5, 0.2, 0.3]),
            Err(CausalError::RankDeficient { .. })
        ));
    }

    #[test]
    fn random_full_rank_matrices_recover_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let n = 5;
            let mut entries = vec![0.0; n * n];
            for j in 0..n {
                let col: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
                let s: f64 = col.iter().sum();
                for (i, v) in col.iter().enumerate() {
                    entries[i * n + j] = v / s;
                }
            }
            let m = StochasticMatrix::new(n, n, entries).unwrap();
            let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.01).collect();
            let sum: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let q = m.apply(&p).unwrap();
            let inv = invert_matrix_conditional(&m, &q).unwrap();
            let err: f64 = inv.p.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
            assert!(err <= 1e-6, "recovery error {err}");
        }
    }

    #[test]
    fn matrix_file_round_trips() {
        let m = StochasticMatrix::new(3, 2, vec![0.7, 0.1, 0.2, 0.5, 0.1, 0.4]).unwrap();
        let back = StochasticMatrix::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn pnl_identity_maps_through() {
        let grid = Grid::new(-3.0, 3.0, 256).unwrap();
        let psi = GridFn::tabulate(grid.clone(), |t| t).unwrap();
        let phi = GridFn::tabulate(grid.clone(), |t| t).unwrap();
        let step = grid.step();
        let noise_grid = Grid::new(-4.5 * step, 4.5 * step, 9).unwrap();
        let noise = spike_density(&noise_grid, 0.0).unwrap();
        let cond = PnlConditional::new(psi, phi, noise).unwrap();
        let q = gaussian_density(&grid, 0.3, 0.5).unwrap();
        let rec = invert_pnl_conditional(&cond, &q, 0.05).unwrap();
        assert!(l1_distance(&rec, &q) <= 0.02, "L1 {}", l1_distance(&rec, &q));
    }

    /// Bisection inverse of a strictly increasing scalar map, independent of
    /// the GridFn machinery.
    fn invert_monotone(f: impl Fn(f64) -> f64, y: f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn pnl_inversion_recovers_uniform_input() {
        // X ~ U(0,1), phi(x) = 2x, N ~ N(0, 0.3^2), psi(t) = t^3 + t.
        let psi_fn = |t: f64| t * t * t + t;
        let phi_fn = |x: f64| 2.0 * x;
        let sigma = 0.3;
        // Analytic density of T = 2X + N.
        let p_t = |t: f64| {
            (crate::datagen::normal_cdf(t, 0.0, sigma)
                - crate::datagen::normal_cdf(t - 2.0, 0.0, sigma))
                / 2.0
        };
        // Output density via the monotone change of variables y = psi(t).
        let y_lo = psi_fn(-1.5);
        let y_hi = psi_fn(3.5);
        let y_grid = Grid::new(y_lo, y_hi, 1024).unwrap();
        let q_values: Vec<f64> = (0..y_grid.m())
            .map(|k| {
                let y = y_grid.center(k);
                let t = invert_monotone(psi_fn, y, -5.0, 5.0);
                p_t(t) / (3.0 * t * t + 1.0)
            })
            .collect();
        let q = GridDensity::from_unnormalized(y_grid, q_values).unwrap();

        let t_grid = Grid::new(-1.5, 3.5, 1024).unwrap();
        let psi = GridFn::tabulate(t_grid.clone(), psi_fn).unwrap();
        let x_grid = Grid::new(-0.4, 1.4, 512).unwrap();
        let phi = GridFn::tabulate(x_grid, phi_fn).unwrap();
        let noise_grid = Grid::covering_with_step(&[-1.5, 1.5], 0.0, t_grid.step()).unwrap();
        let noise = gaussian_density(&noise_grid, 0.0, sigma).unwrap();
        let cond = PnlConditional::new(psi, phi, noise).unwrap();

        let rec = invert_pnl_conditional(&cond, &q, 0.05).unwrap();
        let u_ref = uniform_density(rec.grid(), 0.0, 1.0).unwrap();
        let err = l1_distance(&rec, &u_ref);
        assert!(err <= 0.08, "L1 {err}");
    }

    #[test]
    fn pnl_inversion_rejects_mismatched_noise() {
        // Declared noise wider than the one in the data: invalid deconvolution.
        let sigma_true = 0.5;
        let t_grid = Grid::new(-4.0, 6.0, 1024).unwrap();
        let q_values: Vec<f64> = (0..t_grid.m())
            .map(|k| {
                let t = t_grid.center(k);
                (crate::datagen::normal_cdf(t, 0.0, sigma_true)
                    - crate::datagen::normal_cdf(t - 2.0, 0.0, sigma_true))
                    / 2.0
            })
            .collect();
        let q = GridDensity::from_unnormalized(t_grid.clone(), q_values).unwrap();
        let psi = GridFn::tabulate(t_grid.clone(), |t| t).unwrap();
        let x_grid = Grid::new(-0.4, 1.4, 256).unwrap();
        let phi = GridFn::tabulate(x_grid, |x| 2.0 * x).unwrap();
        let noise_grid = Grid::covering_with_step(&[-4.0, 4.0], 0.0, t_grid.step()).unwrap();
        let noise = gaussian_density(&noise_grid, 0.0, 1.0).unwrap();
        let cond = PnlConditional::new(psi, phi, noise).unwrap();
        assert!(matches!(
            invert_pnl_conditional(&cond, &q, 0.05),
            Err(CausalError::InvalidDeconvolution(_))
        ));
    }

    #[test]
    fn pnl_rejects_non_monotone_tables() {
        let grid = Grid::new(-1.0, 1.0, 64).unwrap();
        let psi_bad = GridFn::tabulate(grid.clone(), |t| t * t).unwrap();
        let phi = GridFn::tabulate(grid.clone(), |t| t).unwrap();
        let step = grid.step();
        let ng = Grid::new(-4.5 * step, 4.5 * step, 9).unwrap();
        let noise = spike_density(&ng, 0.0).unwrap();
        assert!(matches!(
            PnlConditional::new(psi_bad, phi.clone(), noise.clone()),
            Err(CausalError::NonInvertiblePsi)
        ));
        let psi = GridFn::tabulate(grid.clone(), |t| t).unwrap();
        let phi_bad = GridFn::tabulate(grid, |t| t * t).unwrap();
        let cond = PnlConditional::new(psi, phi_bad, noise).unwrap();
        let qg = Grid::new(-1.0, 1.0, 64).unwrap();
        let q = gaussian_density(&qg, 0.0, 0.2).unwrap();
        assert!(matches!(
            invert_pnl_conditional(&cond, &q, 0.05),
            Err(CausalError::NonInjectivePhi)
        ));
    }

    #[test]
    fn verdict_mapping_is_exact() {
        assert_eq!(verdict_from_validity(true, false), ShiftVerdict::CauseChanged);
        assert_eq!(verdict_from_validity(false, true), ShiftVerdict::MechanismChanged);
        assert_eq!(verdict_from_validity(true, true), ShiftVerdict::Ambiguous);
        assert_eq!(verdict_from_validity(false, false), ShiftVerdict::NoFit);
    }

    fn localize_config(seed: u64) -> LocalizeConfig {
        LocalizeConfig {
            anm: AnmConfig {
                ridge: Ridge::Fixed(1.0),
                n_permutations: 199,
                density_m: 256,
                ..AnmConfig::default()
            },
            grid_m: 512,
            bootstrap_resamples: 60,
            seed,
            ..LocalizeConfig::default()
        }
    }

    fn effects_only(spec: &GeneratorSpec) -> SampleSet {
        SampleSet::new(generate(spec).unwrap().ys().to_vec()).unwrap()
    }

    #[test]
    fn narrowed_cause_is_localized_as_cause_change() {
        let mut hits = 0;
        for seed in 0..5u64 {
            let base = GeneratorSpec {
                mechanism: Mechanism::Identity,
                cause: CauseDist::Uniform { a: -3.0, b: 3.0 },
                noise: NoiseDist::Gaussian { sd: 1.0 },
                n: 800,
                seed: 300 + seed,
            };
            let train = generate(&base).unwrap();
            let new_effects = effects_only(&GeneratorSpec {
                cause: CauseDist::Uniform { a: -1.5, b: 1.5 },
                seed: 900 + seed,
                ..base
            });
            let d = localize_shift(&train, &new_effects, &localize_config(seed)).unwrap();
            if d.verdict == ShiftVerdict::CauseChanged {
                hits += 1;
            }
        }
        assert!(hits >= 4, "cause change found in only {hits}/5 runs");
    }

    #[test]
    fn narrowed_noise_is_localized_as_mechanism_change() {
        // Train noise wide, new noise narrow: deconvolving by the wide train
        // noise cannot give a distribution, so only the mechanism branch
        // certifies.
        let mut hits = 0;
        for seed in 0..5u64 {
            let base = GeneratorSpec {
                mechanism: Mechanism::Identity,
                cause: CauseDist::Uniform { a: -3.0, b: 3.0 },
                noise: NoiseDist::Gaussian { sd: std::f64::consts::SQRT_2 },
                n: 800,
                seed: 400 + seed,
            };
            let train = generate(&base).unwrap();
            let new_effects = effects_only(&GeneratorSpec {
                noise: NoiseDist::Gaussian { sd: 1.0 },
                seed: 800 + seed,
                ..base
            });
            let d = localize_shift(&train, &new_effects, &localize_config(seed)).unwrap();
            if d.verdict == ShiftVerdict::MechanismChanged {
                hits += 1;
            }
        }
        assert!(hits >= 4, "mechanism change found in only {hits}/5 runs");
    }

    #[test]
    fn widened_noise_is_ambiguous() {
        let mut hits = 0;
        for seed in 0..5u64 {
            let base = GeneratorSpec {
                mechanism: Mechanism::Identity,
                cause: CauseDist::Uniform { a: -3.0, b: 3.0 },
                noise: NoiseDist::Gaussian { sd: 1.0 },
                n: 800,
                seed: 500 + seed,
            };
            let train = generate(&base).unwrap();
            let new_effects = effects_only(&GeneratorSpec {
                noise: NoiseDist::Gaussian { sd: std::f64::consts::SQRT_2 },
                seed: 700 + seed,
                ..base
            });
            let d = localize_shift(&train, &new_effects, &localize_config(seed)).unwrap();
            if d.verdict == ShiftVerdict::Ambiguous {
                hits += 1;
            }
        }
        assert!(hits >= 4, "ambiguous in only {hits}/5 runs");
    }

    #[test]
    fn conditional_reestimation_recovers_new_noise() {
        let base = GeneratorSpec {
            mechanism: Mechanism::Square,
            cause: CauseDist::Uniform { a: -1.0, b: 1.0 },
            noise: NoiseDist::Gaussian { sd: 0.3 },
            n: 1000,
            seed: 13,
        };
        let train = generate(&base).unwrap();
        let new_effects = effects_only(&GeneratorSpec {
            noise: NoiseDist::Gaussian { sd: 0.6 },
            seed: 14,
            ..base
        });
        let est = estimate_causal_conditional(&train, &new_effects, &localize_config(1)).unwrap();
        let ref_grid = est.new_noise.grid().clone();
        let truth = gaussian_density(&ref_grid, 0.0, 0.6).unwrap();
        let err = l1_distance(&est.new_noise, &truth);
        assert!(err <= 0.1, "noise recovery L1 {err}");
        assert!(est.consistent, "reconvolution inconsistent: {}", est.reconvolution_l1);
    }

    #[test]
    fn unchanged_effects_recover_the_train_noise() {
        let base = GeneratorSpec {
            mechanism: Mechanism::Square,
            cause: CauseDist::Uniform { a: -1.0, b: 1.0 },
            noise: NoiseDist::Gaussian { sd: 0.4 },
            n: 1000,
            seed: 21,
        };
        let train = generate(&base).unwrap();
        let new_effects = effects_only(&GeneratorSpec { seed: 22, ..base });
        let est = estimate_causal_conditional(&train, &new_effects, &localize_config(2)).unwrap();
        let ref_grid = est.new_noise.grid().clone();
        let truth = gaussian_density(&ref_grid, 0.0, 0.4).unwrap();
        assert!(l1_distance(&est.new_noise, &truth) <= 0.1);
    }

    #[test]
    fn cause_shift_violates_the_fixed_cause_assumption() {
        let base = GeneratorSpec {
            mechanism: Mechanism::Identity,
            cause: CauseDist::Uniform { a: -3.0, b: 3.0 },
            noise: NoiseDist::Gaussian { sd: 0.5 },
            n: 1000,
            seed: 31,
        };
        let train = generate(&base).unwrap();
        let new_effects = effects_only(&GeneratorSpec {
            cause: CauseDist::Uniform { a: -1.5, b: 1.5 },
            seed: 32,
            ..base
        });
        match estimate_causal_conditional(&train, &new_effects, &localize_config(3)) {
            Err(CausalError::InvalidDeconvolution(_)) => {}
            Ok(est) => assert!(!est.consistent, "assumption violation went unflagged"),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn point_mass_prior_selects_a_column() {
        let m = StochasticMatrix::new(3, 3, vec![0.7, 0.2, 0.1, 0.2, 0.6, 0.2, 0.1, 0.2, 0.7])
            .unwrap();
        let implied = m.apply(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(implied, m.column(1));
    }

    #[test]
    fn consistency_check_passes_on_model_draws_and_fails_on_shifted() {
        let train = generate(&GeneratorSpec {
            mechanism: Mechanism::Tanh3,
            cause: CauseDist::Gaussian { mean: 0.0, sd: 1.0 },
            noise: NoiseDist::Gaussian { sd: 0.3 },
            n: 400,
            seed: 41,
        })
        .unwrap();
        let model = fit_krr(&train, Bandwidth::Auto, Ridge::Fixed(1.0)).unwrap();
        let residuals: Vec<f64> = train
            .xs()
            .iter()
            .zip(train.ys())
            .map(|(&x, &y)| y - model.evaluate(x))
            .collect();
        let noise = crate::anm::residual_density(&residuals, 256).unwrap();
        let prior_grid = Grid::new(-4.0, 4.0, 256).unwrap();
        let prior = gaussian_density(&prior_grid, 0.0, 1.0).unwrap();
        let x_grid = Grid::new(-2.5, 2.5, 256).unwrap();
        let implied = implied_marginal_continuous(&model, &noise, &prior, &x_grid).unwrap();

        let cfg = ConsistencyConfig { bootstrap_resamples: 60, seed: 5, ..Default::default() };
        // Fresh draws from the implied marginal itself: consistent.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let good: Vec<f64> = (0..1500).map(|_| implied.inverse_cdf(rng.random())).collect();
        let check = marginal_consistency_check(
            &MarginalModel::Continuous { model: &model, noise: &noise, prior: &prior },
            &SampleSet::new(good).unwrap(),
            &cfg,
        )
        .unwrap();
        assert!(check.consistent, "null draw flagged: {} > {}", check.distance, check.threshold);

        // Mean-shifted inputs: inconsistent.
        let bad: Vec<f64> = (0..1500).map(|_| implied.inverse_cdf(rng.random()) + 2.0).collect();
        let check = marginal_consistency_check(
            &MarginalModel::Continuous { model: &model, noise: &noise, prior: &prior },
            &SampleSet::new(bad).unwrap(),
            &cfg,
        )
        .unwrap();
        assert!(!check.consistent, "shifted draw passed");
    }

    #[test]
    fn discrete_consistency_check() {
        let m = StochasticMatrix::new(3, 3, vec![0.7, 0.2, 0.1, 0.2, 0.6, 0.2, 0.1, 0.2, 0.7])
            .unwrap();
        let prior = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        let implied = m.apply(&prior).unwrap();
        let cfg = ConsistencyConfig { bootstrap_resamples: 60, seed: 9, ..Default::default() };
        // Draws matching the implied marginal.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cum: Vec<f64> = implied
            .iter()
            .scan(0.0, |a, v| {
                *a += v;
                Some(*a)
            })
            .collect();
        let good: Vec<f64> = (0..2000)
            .map(|_| {
                let u: f64 = rng.random();
                cum.iter().position(|c| u <= *c).unwrap_or(2) as f64
            })
            .collect();
        let check = marginal_consistency_check(
            &MarginalModel::Discrete { conditional: &m, prior: &prior },
            &SampleSet::new(good).unwrap(),
            &cfg,
        )
        .unwrap();
        assert!(check.consistent);
        // All mass on one category: inconsistent.
        let bad = vec![0.0; 2000];
        let check = marginal_consistency_check(
            &MarginalModel::Discrete { conditional: &m, prior: &prior },
            &SampleSet::new(bad).unwrap(),
            &cfg,
        )
        .unwrap();
        assert!(!check.consistent);
        // Non-integer values are a type mismatch.
        assert!(matches!(
            marginal_consistency_check(
                &MarginalModel::Discrete { conditional: &m, prior: &prior },
                &SampleSet::new(vec![0.5; 100]).unwrap(),
                &cfg,
            ),
            Err(CausalError::TypeMismatch(_))
        ));
    }
}
