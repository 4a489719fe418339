//! Nonparametric mechanism estimation by Gaussian-kernel ridge regression.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::density::Bandwidth;
use crate::dependence::median_bandwidth;
use crate::sample::PairedSample;
use crate::util::fmt17;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("degenerate input: all causes identical")]
    DegenerateInput,
    #[error("kernel system could not be solved (ridge {0})")]
    SingularSystem(f64),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Ridge selection for [`fit_krr`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge {
    /// Pick from `{1e-4, 1e-3, 1e-2, 1e-1} * n` by 5-fold cross-validation.
    Auto,
    Fixed(f64),
}

/// A fitted Gaussian-kernel ridge regressor: one coefficient per training
/// input plus an intercept that absorbs the residual mean, so training
/// residuals average to exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel {
    inputs: Vec<f64>,
    coefficients: Vec<f64>,
    bandwidth: f64,
    ridge: f64,
    intercept: f64,
}

impl RegressionModel {
    /// Assemble a model from explicit parts (coefficients found by an
    /// external optimizer, e.g. the conditional ANM's HSIC descent).
    pub fn from_parts(
        inputs: Vec<f64>,
        coefficients: Vec<f64>,
        bandwidth: f64,
        ridge: f64,
        intercept: f64,
    ) -> Self {
        assert_eq!(inputs.len(), coefficients.len());
        RegressionModel { inputs, coefficients, bandwidth, ridge, intercept }
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let mut acc = self.intercept;
        for (x, a) in self.inputs.iter().zip(&self.coefficients) {
            let d = t - x;
            acc += a * (-d * d * inv).exp();
        }
        acc
    }

    pub fn evaluate_all(&self, points: &[f64]) -> Vec<f64> {
        points.iter().map(|&t| self.evaluate(t)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("krr-model 1\n");
        s.push_str(&format!("bandwidth {}\n", fmt17(self.bandwidth)));
        s.push_str(&format!("ridge {}\n", fmt17(self.ridge)));
        s.push_str(&format!("intercept {}\n", fmt17(self.intercept)));
        s.push_str(&format!("n {}\n", self.inputs.len()));
        s.push_str("inputs\n");
        for v in &self.inputs {
            s.push_str(&fmt17(*v));
            s.push('\n');
        }
        s.push_str("coefficients\n");
        for v in &self.coefficients {
            s.push_str(&fmt17(*v));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, RegressError> {
        let mut lines = text.lines();
        let expect = |lines: &mut std::str::Lines, what: &str| -> Result<String, RegressError> {
            lines
                .next()
                .map(|l| l.trim().to_string())
                .ok_or_else(|| RegressError::Parse(format!("missing {what}")))
        };
        let header = expect(&mut lines, "header")?;
        if header != "krr-model 1" {
            return Err(RegressError::Parse(format!("unexpected header {header:?}")));
        }
        let field = |line: String, key: &str| -> Result<f64, RegressError> {
            line.strip_prefix(key)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| RegressError::Parse(format!("bad {key} line {line:?}")))
        };
        let bandwidth = field(expect(&mut lines, "bandwidth")?, "bandwidth")?;
        let ridge = field(expect(&mut lines, "ridge")?, "ridge")?;
        let intercept = field(expect(&mut lines, "intercept")?, "intercept")?;
        let n_line = expect(&mut lines, "n")?;
        let n: usize = n_line
            .strip_prefix("n ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| RegressError::Parse(format!("bad n line {n_line:?}")))?;
        let mut read_block = |name: &str| -> Result<Vec<f64>, RegressError> {
            let head = expect(&mut lines, name)?;
            if head != name {
                return Err(RegressError::Parse(format!("expected {name:?}, got {head:?}")));
            }
            (0..n)
                .map(|_| {
                    expect(&mut lines, "value").and_then(|l| {
                        l.parse::<f64>()
                            .map_err(|e| RegressError::Parse(format!("bad value {l:?}: {e}")))
                    })
                })
                .collect()
        };
        let inputs = read_block("inputs")?;
        let coefficients = read_block("coefficients")?;
        Ok(RegressionModel { inputs, coefficients, bandwidth, ridge, intercept })
    }
}

fn gram(xs: &[f64], bandwidth: f64) -> DMatrix<f64> {
    let n = xs.len();
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    DMatrix::from_fn(n, n, |i, j| {
        let d = xs[i] - xs[j];
        (-d * d * inv).exp()
    })
}

/// Solve `(K + ridge I) alpha = target`; Cholesky first, LU as fallback for
/// the unregularized interpolation case.
fn solve_kernel_system(
    k: &DMatrix<f64>,
    ridge: f64,
    target: &DVector<f64>,
) -> Result<DVector<f64>, RegressError> {
    let n = k.nrows();
    let mut reg = k.clone();
    for i in 0..n {
        reg[(i, i)] += ridge;
    }
    if let Some(chol) = Cholesky::new(reg.clone()) {
        return Ok(chol.solve(target));
    }
    reg.lu()
        .solve(target)
        .ok_or(RegressError::SingularSystem(ridge))
}

const RIDGE_LADDER: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];

fn cross_validate_ridge(xs: &[f64], ys: &[f64], bandwidth: f64) -> Result<f64, RegressError> {
    let n = xs.len();
    let folds = 5usize;
    // Canonical x-stratified folds: sort by (x, y) and stride. Fold choice is
    // then independent of input order, so fits over concatenated datasets do
    // not depend on how the datasets were arranged.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        (xs[a], ys[a]).partial_cmp(&(xs[b], ys[b])).expect("finite inputs")
    });
    let fold_of: Vec<usize> = {
        let mut f = vec![0usize; n];
        for (rank, &i) in order.iter().enumerate() {
            f[i] = rank % folds;
        }
        f
    };
    let mut best = (f64::INFINITY, RIDGE_LADDER[0] * n as f64);
    for &scale in &RIDGE_LADDER {
        let ridge = scale * n as f64;
        let mut sse = 0.0;
        for fold in 0..folds {
            let (train_x, train_y): (Vec<f64>, Vec<f64>) = order
                .iter()
                .filter(|&&i| fold_of[i] != fold)
                .map(|&i| (xs[i], ys[i]))
                .unzip();
            if train_x.is_empty() {
                continue;
            }
            let y_mean = crate::util::mean(&train_y);
            let k = gram(&train_x, bandwidth);
            let target = DVector::from_iterator(train_x.len(), train_y.iter().map(|y| y - y_mean));
            let alpha = solve_kernel_system(&k, ridge, &target)?;
            let inv = 1.0 / (2.0 * bandwidth * bandwidth);
            for &i in order.iter().filter(|&&i| fold_of[i] == fold) {
                let mut pred = y_mean;
                for (j, &xj) in train_x.iter().enumerate() {
                    let d = xs[i] - xj;
                    pred += alpha[j] * (-d * d * inv).exp();
                }
                let r = ys[i] - pred;
                sse += r * r;
            }
        }
        if sse < best.0 {
            best = (sse, ridge);
        }
    }
    Ok(best.1)
}

/// Fit the mechanism by kernel ridge regression of the effect on the cause.
///
/// `Bandwidth::Auto` uses the median pairwise distance of the causes;
/// `Ridge::Auto` cross-validates over `{1e-4..1e-1} * n`. The intercept
/// re-absorbs the residual mean so that residuals are exactly zero-mean.
pub fn fit_krr(
    pairs: &PairedSample,
    bandwidth: Bandwidth,
    ridge: Ridge,
) -> Result<RegressionModel, RegressError> {
    let n = pairs.n();
    if n < 10 {
        return Err(RegressError::TooFewSamples { need: 10, got: n });
    }
    let xs = pairs.xs();
    let ys = pairs.ys();
    let spread = pairs.x_set().max() - pairs.x_set().min();
    if !(spread > 0.0) {
        return Err(RegressError::DegenerateInput);
    }
    let bw = match bandwidth {
        Bandwidth::Auto => median_bandwidth(xs),
        Bandwidth::Fixed(b) => b,
    };
    if !(bw > 0.0) || !bw.is_finite() {
        return Err(RegressError::DegenerateInput);
    }
    let lambda = match ridge {
        Ridge::Auto => cross_validate_ridge(xs, ys, bw)?,
        Ridge::Fixed(l) => l,
    };
    let y_mean = crate::util::mean(ys);
    let k = gram(xs, bw);
    let target = DVector::from_iterator(n, ys.iter().map(|y| y - y_mean));
    let alpha = solve_kernel_system(&k, lambda, &target)?;
    let fitted = &k * &alpha;
    let resid_mean = (0..n).map(|i| ys[i] - y_mean - fitted[i]).sum::<f64>() / n as f64;
    Ok(RegressionModel {
        inputs: xs.to_vec(),
        coefficients: alpha.iter().copied().collect(),
        bandwidth: bw,
        ridge: lambda,
        intercept: y_mean + resid_mean,
    })
}

/// Training residuals `y - model(x)`; zero-mean by construction of the fit.
pub fn residuals(model: &RegressionModel, pairs: &PairedSample) -> Vec<f64> {
    pairs
        .xs()
        .iter()
        .zip(pairs.ys())
        .map(|(&x, &y)| y - model.evaluate(x))
        .collect()
}
