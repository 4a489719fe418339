//! Seeded synthetic generators for the adaptation scenarios.
//!
//! Generators are specified from a fixed catalog of mechanisms and
//! distributions so that every experiment is replayable from a flat config
//! file. All distributions expose their analytic pdf (and cdf, for the noise
//! laws), which is what the benchmark oracles integrate against.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use thiserror::Error;

use crate::sample::{PairedSample, SampleError};
use crate::util::derive_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatagenError {
    #[error("unknown mechanism {0:?}")]
    UnknownMechanism(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

/// Scalar mechanism catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    Identity,
    Square,
    Cube,
    /// `tanh(3x)`
    Tanh3,
    /// `x^3 + x`
    CubePlus,
}

impl Mechanism {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Mechanism::Identity => x,
            Mechanism::Square => x * x,
            Mechanism::Cube => x * x * x,
            Mechanism::Tanh3 => (3.0 * x).tanh(),
            Mechanism::CubePlus => x * x * x + x,
        }
    }

    /// Strictly monotone on all of R?
    pub fn is_monotone(&self) -> bool {
        !matches!(self, Mechanism::Square)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::Identity => "identity",
            Mechanism::Square => "square",
            Mechanism::Cube => "cube",
            Mechanism::Tanh3 => "tanh3",
            Mechanism::CubePlus => "cube_plus",
        }
    }

    pub fn parse(name: &str) -> Result<Self, DatagenError> {
        match name.trim() {
            "identity" => Ok(Mechanism::Identity),
            "square" => Ok(Mechanism::Square),
            "cube" => Ok(Mechanism::Cube),
            "tanh3" => Ok(Mechanism::Tanh3),
            "cube_plus" => Ok(Mechanism::CubePlus),
            other => Err(DatagenError::UnknownMechanism(other.to_string())),
        }
    }
}

/// Cause marginal catalog.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CauseDist {
    Uniform { a: f64, b: f64 },
    Gaussian { mean: f64, sd: f64 },
    Mixture2 { m1: f64, s1: f64, m2: f64, s2: f64, w: f64 },
}

impl CauseDist {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |msg: &str| Err(DatagenError::InvalidParameter(msg.to_string()));
        match *self {
            CauseDist::Uniform { a, b } if !(b > a) => bad("uniform needs b > a"),
            CauseDist::Gaussian { sd, .. } if !(sd > 0.0) => bad("gaussian needs sd > 0"),
            CauseDist::Mixture2 { s1, s2, .. } if !(s1 > 0.0 && s2 > 0.0) => {
                bad("mixture needs positive scales")
            }
            CauseDist::Mixture2 { w, .. } if !(w > 0.0 && w < 1.0) => {
                bad("mixture weight must lie in (0, 1)")
            }
            _ => Ok(()),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            CauseDist::Uniform { a, b } => Uniform::new(a, b).unwrap().sample(rng),
            CauseDist::Gaussian { mean, sd } => Normal::new(mean, sd).unwrap().sample(rng),
            CauseDist::Mixture2 { m1, s1, m2, s2, w } => {
                if rng.random::<f64>() < w {
                    Normal::new(m1, s1).unwrap().sample(rng)
                } else {
                    Normal::new(m2, s2).unwrap().sample(rng)
                }
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            CauseDist::Uniform { a, b } => {
                if x >= a && x <= b {
                    1.0 / (b - a)
                } else {
                    0.0
                }
            }
            CauseDist::Gaussian { mean, sd } => normal_pdf(x, mean, sd),
            CauseDist::Mixture2 { m1, s1, m2, s2, w } => {
                w * normal_pdf(x, m1, s1) + (1.0 - w) * normal_pdf(x, m2, s2)
            }
        }
    }

    pub fn format(&self) -> String {
        match *self {
            CauseDist::Uniform { a, b } => format!("uniform:{a}:{b}"),
            CauseDist::Gaussian { mean, sd } => format!("gaussian:{mean}:{sd}"),
            CauseDist::Mixture2 { m1, s1, m2, s2, w } => {
                format!("mixture2:{m1}:{s1}:{m2}:{s2}:{w}")
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self, DatagenError> {
        let parts: Vec<&str> = text.trim().split(':').collect();
        let num = |s: &str| -> Result<f64, DatagenError> {
            s.parse().map_err(|_| DatagenError::Parse(format!("bad number {s:?} in {text:?}")))
        };
        let dist = match parts.as_slice() {
            ["uniform", a, b] => CauseDist::Uniform { a: num(a)?, b: num(b)? },
            ["gaussian", m, s] => CauseDist::Gaussian { mean: num(m)?, sd: num(s)? },
            ["mixture2", m1, s1, m2, s2, w] => CauseDist::Mixture2 {
                m1: num(m1)?,
                s1: num(s1)?,
                m2: num(m2)?,
                s2: num(s2)?,
                w: num(w)?,
            },
            _ => return Err(DatagenError::Parse(format!("unrecognized cause dist {text:?}"))),
        };
        dist.validate()?;
        Ok(dist)
    }
}

/// Zero-mean noise catalog.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseDist {
    Gaussian { sd: f64 },
    Laplace { scale: f64 },
    Uniform { half_width: f64 },
}

impl NoiseDist {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let ok = match *self {
            NoiseDist::Gaussian { sd } => sd > 0.0,
            NoiseDist::Laplace { scale } => scale > 0.0,
            NoiseDist::Uniform { half_width } => half_width > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(DatagenError::InvalidParameter("noise scale must be positive".into()))
        }
    }

    /// Distribution mean; zero for the whole catalog, subtracted anyway at
    /// generation time so the zero-mean noise convention holds uniformly.
    pub fn mean(&self) -> f64 {
        0.0
    }

    pub fn std(&self) -> f64 {
        match *self {
            NoiseDist::Gaussian { sd } => sd,
            NoiseDist::Laplace { scale } => scale * std::f64::consts::SQRT_2,
            NoiseDist::Uniform { half_width } => half_width / 3.0f64.sqrt(),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            NoiseDist::Gaussian { sd } => Normal::new(0.0, sd).unwrap().sample(rng),
            NoiseDist::Laplace { scale } => {
                let u: f64 = rng.random::<f64>() - 0.5;
                -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            NoiseDist::Uniform { half_width } => {
                Uniform::new(-half_width, half_width).unwrap().sample(rng)
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            NoiseDist::Gaussian { sd } => normal_pdf(x, 0.0, sd),
            NoiseDist::Laplace { scale } => (-x.abs() / scale).exp() / (2.0 * scale),
            NoiseDist::Uniform { half_width } => {
                if x.abs() <= half_width {
                    0.5 / half_width
                } else {
                    0.0
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            NoiseDist::Gaussian { sd } => normal_cdf(x, 0.0, sd),
            NoiseDist::Laplace { scale } => {
                if x < 0.0 {
                    0.5 * (x / scale).exp()
                } else {
                    1.0 - 0.5 * (-x / scale).exp()
                }
            }
            NoiseDist::Uniform { half_width } => {
                ((x + half_width) / (2.0 * half_width)).clamp(0.0, 1.0)
            }
        }
    }

    pub fn format(&self) -> String {
        match *self {
            NoiseDist::Gaussian { sd } => format!("gaussian:{sd}"),
            NoiseDist::Laplace { scale } => format!("laplace:{scale}"),
            NoiseDist::Uniform { half_width } => format!("uniform:{half_width}"),
        }
    }

    pub fn parse(text: &str) -> Result<Self, DatagenError> {
        let parts: Vec<&str> = text.trim().split(':').collect();
        let num = |s: &str| -> Result<f64, DatagenError> {
            s.parse().map_err(|_| DatagenError::Parse(format!("bad number {s:?} in {text:?}")))
        };
        let dist = match parts.as_slice() {
            ["gaussian", s] => NoiseDist::Gaussian { sd: num(s)? },
            ["laplace", s] => NoiseDist::Laplace { scale: num(s)? },
            ["uniform", s] => NoiseDist::Uniform { half_width: num(s)? },
            _ => return Err(DatagenError::Parse(format!("unrecognized noise dist {text:?}"))),
        };
        dist.validate()?;
        Ok(dist)
    }
}

pub(crate) fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Normal cdf via an Abramowitz-Stegun erf approximation (|error| < 1.5e-7).
pub(crate) fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / (sd * std::f64::consts::SQRT_2);
    0.5 * (1.0 + erf(z))
}

fn erf(x: f64) -> f64 {
    let sign = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// A fully specified generator: `e = mechanism(c) + noise`, with `c` drawn
/// from the cause marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub mechanism: Mechanism,
    pub cause: CauseDist,
    pub noise: NoiseDist,
    pub n: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<(), DatagenError> {
        self.cause.validate()?;
        self.noise.validate()?;
        if self.n == 0 {
            return Err(DatagenError::InvalidParameter("n must be positive".into()));
        }
        Ok(())
    }
}

/// Draw pairs `(c, mechanism(c) + noise)`; deterministic given the seed.
pub fn generate(spec: &GeneratorSpec) -> Result<PairedSample, DatagenError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut xs = Vec::with_capacity(spec.n);
    let mut ys = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let c = spec.cause.sample(&mut rng);
        let noise = spec.noise.sample(&mut rng) - spec.noise.mean();
        xs.push(c);
        ys.push(spec.mechanism.apply(c) + noise);
    }
    Ok(PairedSample::new(xs, ys)?)
}

/// A single-component substitution of the generator.
#[derive(Debug, Clone, PartialEq)]
pub enum Shift {
    CauseShift(CauseDist),
    NoiseShift(NoiseDist),
    MechanismShift(Mechanism),
}

impl Shift {
    pub fn kind(&self) -> ShiftKind {
        match self {
            Shift::CauseShift(_) => ShiftKind::Cause,
            Shift::NoiseShift(_) => ShiftKind::Noise,
            Shift::MechanismShift(_) => ShiftKind::Mechanism,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftKind {
    Cause,
    Noise,
    Mechanism,
}

impl ShiftKind {
    pub fn name(&self) -> &'static str {
        match self {
            ShiftKind::Cause => "cause",
            ShiftKind::Noise => "noise",
            ShiftKind::Mechanism => "mechanism",
        }
    }
}

/// Train/extra datasets differing in exactly one generator component, with
/// the ground truth of both domains attached for oracle checks.
#[derive(Debug, Clone)]
pub struct ShiftPair {
    pub train: PairedSample,
    pub extra: PairedSample,
    pub base: GeneratorSpec,
    pub shifted: GeneratorSpec,
    pub kind: ShiftKind,
}

pub fn generate_shift_pair(
    base: &GeneratorSpec,
    shift: &Shift,
    n_extra: usize,
) -> Result<ShiftPair, DatagenError> {
    let mut shifted = base.clone();
    shifted.n = n_extra;
    shifted.seed = derive_seed(base.seed, 0xE57A);
    match shift {
        Shift::CauseShift(c) => shifted.cause = *c,
        Shift::NoiseShift(n) => shifted.noise = *n,
        Shift::MechanismShift(m) => shifted.mechanism = *m,
    }
    let train = generate(base)?;
    let extra = generate(&shifted)?;
    Ok(ShiftPair { train, extra, base: base.clone(), shifted, kind: shift.kind() })
}
