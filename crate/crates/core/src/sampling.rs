//! Seeded generators for the simulation models and the inlier/outlier
//! contamination mechanism.
//!
//! Every model is written as a deterministic transform of a block of base
//! noise. Holding the noise fixed while moving a parameter gives common
//! random numbers, which the estimators rely on.
//!
//! # Stable parameterization
//!
//! [`GenerativeModel::AlphaStable`] uses the `S1` convention: with
//! `X ~ S(α, β, 1, 0)` the draw is `scale·X + loc` for `α ≠ 1`, and
//! `scale·X + (2/π)·β·scale·ln(scale) + loc` for `α = 1`. Under this
//! convention `(1, 0, 1, 0)` is the standard Cauchy law, `α = 2` gives
//! `N(loc, 2·scale²)` and, for symmetric laws, `loc` is the centre of
//! symmetry. Draws use the Chambers–Mallows–Stuck transform.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RobotError};

/// Reproducible source of random streams.
///
/// A stream is identified by a 64-bit key. Children are derived from the
/// parent key and a label (plus an optional index), so replicate `i` of an
/// experiment sees the same numbers whatever order replicates run in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedStream {
    key: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream { key: seed }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Child stream named by `label`.
    pub fn child(&self, label: &str) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        SeedStream {
            key: mix(self.key ^ mix(h)),
        }
    }

    /// Child stream named by `label` and an index, e.g. a replicate number.
    pub fn child_indexed(&self, label: &str, index: u64) -> Self {
        let base = self.child(label);
        SeedStream {
            key: mix(base.key ^ mix(index.wrapping_add(0x9e37_79b9_7f4a_7c15))),
        }
    }

    /// ChaCha generator keyed by this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key)
    }
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Parametric scalar model that can be simulated from frozen noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum GenerativeModel {
    /// `Σ_{l=1}^{L} exp(γ + σ·ε_l)` with standard normal `ε_l`.
    LognormalSum {
        gamma: f64,
        sigma: f64,
        #[serde(rename = "L")]
        l: usize,
    },
    /// Stable law in the `S1` parameterization (see module docs).
    AlphaStable { alpha: f64, beta: f64, scale: f64, loc: f64 },
    Gaussian { mean: f64, sd: f64 },
    Uniform { a: f64, b: f64 },
}

/// Frozen base noise for `rows` draws of one model family.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseNoise {
    kind: NoiseKind,
    width: usize,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NoiseKind {
    Normal,
    // (U on (−π/2, π/2), W ~ Exp(1)) pairs
    Stable,
    Unit,
}

impl BaseNoise {
    pub fn rows(&self) -> usize {
        self.values.len() / self.width
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    /// Noise for the rows in `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> BaseNoise {
        BaseNoise {
            kind: self.kind,
            width: self.width,
            values: self.values[range.start * self.width..range.end * self.width].to_vec(),
        }
    }
}

impl GenerativeModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            GenerativeModel::LognormalSum { gamma, sigma, l } => {
                gamma.is_finite() && sigma > 0.0 && sigma.is_finite() && l >= 1
            }
            GenerativeModel::AlphaStable { alpha, beta, scale, loc } => {
                alpha > 0.0
                    && alpha <= 2.0
                    && (-1.0..=1.0).contains(&beta)
                    && scale > 0.0
                    && scale.is_finite()
                    && loc.is_finite()
            }
            GenerativeModel::Gaussian { mean, sd } => mean.is_finite() && sd > 0.0 && sd.is_finite(),
            GenerativeModel::Uniform { a, b } => a.is_finite() && b.is_finite() && a < b,
        };
        if ok {
            Ok(())
        } else {
            Err(RobotError::invalid(format!("model parameters out of domain: {self:?}")))
        }
    }

    /// Short family name as used on the command line.
    pub fn family(&self) -> &'static str {
        match self {
            GenerativeModel::LognormalSum { .. } => "lognormal-sum",
            GenerativeModel::AlphaStable { .. } => "stable",
            GenerativeModel::Gaussian { .. } => "gaussian",
            GenerativeModel::Uniform { .. } => "uniform",
        }
    }

    /// Names accepted by [`parameter`](Self::parameter) and
    /// [`with_parameter`](Self::with_parameter).
    pub fn parameter_names(&self) -> &'static [&'static str] {
        match self {
            GenerativeModel::LognormalSum { .. } => &["gamma", "sigma"],
            GenerativeModel::AlphaStable { .. } => &["alpha", "beta", "scale", "loc"],
            GenerativeModel::Gaussian { .. } => &["mean", "sd"],
            GenerativeModel::Uniform { .. } => &["a", "b"],
        }
    }

    /// Name of the location-type parameter estimated by default.
    pub fn location_name(&self) -> &'static str {
        match self {
            GenerativeModel::LognormalSum { .. } => "gamma",
            GenerativeModel::AlphaStable { .. } => "loc",
            GenerativeModel::Gaussian { .. } => "mean",
            GenerativeModel::Uniform { .. } => "a",
        }
    }

    pub fn parameter(&self, name: &str) -> Result<f64> {
        let v = match (*self, name) {
            (GenerativeModel::LognormalSum { gamma, .. }, "gamma") => gamma,
            (GenerativeModel::LognormalSum { sigma, .. }, "sigma") => sigma,
            (GenerativeModel::AlphaStable { alpha, .. }, "alpha") => alpha,
            (GenerativeModel::AlphaStable { beta, .. }, "beta") => beta,
            (GenerativeModel::AlphaStable { scale, .. }, "scale") => scale,
            (GenerativeModel::AlphaStable { loc, .. }, "loc") => loc,
            (GenerativeModel::Gaussian { mean, .. }, "mean") => mean,
            (GenerativeModel::Gaussian { sd, .. }, "sd") => sd,
            (GenerativeModel::Uniform { a, .. }, "a") => a,
            (GenerativeModel::Uniform { b, .. }, "b") => b,
            _ => return Err(self.unknown(name)),
        };
        Ok(v)
    }

    /// Copy with one parameter replaced. The result is not validated.
    pub fn with_parameter(&self, name: &str, value: f64) -> Result<Self> {
        let mut out = *self;
        match (&mut out, name) {
            (GenerativeModel::LognormalSum { gamma, .. }, "gamma") => *gamma = value,
            (GenerativeModel::LognormalSum { sigma, .. }, "sigma") => *sigma = value,
            (GenerativeModel::AlphaStable { alpha, .. }, "alpha") => *alpha = value,
            (GenerativeModel::AlphaStable { beta, .. }, "beta") => *beta = value,
            (GenerativeModel::AlphaStable { scale, .. }, "scale") => *scale = value,
            (GenerativeModel::AlphaStable { loc, .. }, "loc") => *loc = value,
            (GenerativeModel::Gaussian { mean, .. }, "mean") => *mean = value,
            (GenerativeModel::Gaussian { sd, .. }, "sd") => *sd = value,
            (GenerativeModel::Uniform { a, .. }, "a") => *a = value,
            (GenerativeModel::Uniform { b, .. }, "b") => *b = value,
            _ => return Err(self.unknown(name)),
        }
        Ok(out)
    }

    fn unknown(&self, name: &str) -> RobotError {
        RobotError::invalid(format!(
            "unknown parameter '{name}' for family {} (expected one of {:?})",
            self.family(),
            self.parameter_names()
        ))
    }

    /// The model with its location moved by `eta`.
    pub fn shifted(&self, eta: f64) -> Self {
        match *self {
            GenerativeModel::LognormalSum { gamma, sigma, l } => GenerativeModel::LognormalSum {
                gamma: gamma + eta,
                sigma,
                l,
            },
            GenerativeModel::AlphaStable { alpha, beta, scale, loc } => GenerativeModel::AlphaStable {
                alpha,
                beta,
                scale,
                loc: loc + eta,
            },
            GenerativeModel::Gaussian { mean, sd } => GenerativeModel::Gaussian { mean: mean + eta, sd },
            GenerativeModel::Uniform { a, b } => GenerativeModel::Uniform { a: a + eta, b: b + eta },
        }
    }

    fn noise_shape(&self) -> (NoiseKind, usize) {
        match *self {
            GenerativeModel::LognormalSum { l, .. } => (NoiseKind::Normal, l),
            GenerativeModel::AlphaStable { .. } => (NoiseKind::Stable, 2),
            GenerativeModel::Gaussian { .. } => (NoiseKind::Normal, 1),
            GenerativeModel::Uniform { .. } => (NoiseKind::Unit, 1),
        }
    }

    /// Draws base noise for `n` samples from `rng`.
    pub fn draw_noise<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> BaseNoise {
        let (kind, width) = self.noise_shape();
        let mut values = Vec::with_capacity(n * width);
        for _ in 0..n {
            match kind {
                NoiseKind::Normal => {
                    for _ in 0..width {
                        values.push(rng.sample::<f64, _>(StandardNormal));
                    }
                }
                NoiseKind::Stable => {
                    // open interval keeps cos(U) away from zero
                    let u = loop {
                        let u = PI * (rng.random::<f64>() - 0.5);
                        if u.abs() < FRAC_PI_2 {
                            break u;
                        }
                    };
                    values.push(u);
                    values.push(rng.sample::<f64, _>(Exp1));
                }
                NoiseKind::Unit => values.push(rng.random::<f64>()),
            }
        }
        BaseNoise { kind, width, values }
    }

    /// Maps frozen noise to samples from this model.
    pub fn transform(&self, noise: &BaseNoise) -> Result<Vec<f64>> {
        let mut out = vec![0.0; noise.rows()];
        self.transform_into(noise, &mut out)?;
        Ok(out)
    }

    /// As [`transform`](Self::transform), writing into `out`.
    pub fn transform_into(&self, noise: &BaseNoise, out: &mut [f64]) -> Result<()> {
        self.validate()?;
        if (noise.kind, noise.width) != self.noise_shape() {
            return Err(RobotError::invalid(format!(
                "noise block does not fit the {} family",
                self.family()
            )));
        }
        if out.len() != noise.rows() {
            return Err(RobotError::invalid("output length differs from noise rows"));
        }
        match *self {
            GenerativeModel::LognormalSum { gamma, sigma, .. } => {
                let g = gamma.exp();
                for (i, o) in out.iter_mut().enumerate() {
                    *o = g * noise.row(i).iter().map(|e| (sigma * e).exp()).sum::<f64>();
                }
            }
            GenerativeModel::AlphaStable { alpha, beta, scale, loc } => {
                let cms = Cms::new(alpha, beta, scale, loc);
                for (i, o) in out.iter_mut().enumerate() {
                    let r = noise.row(i);
                    *o = cms.draw(r[0], r[1]);
                }
            }
            GenerativeModel::Gaussian { mean, sd } => {
                for (o, z) in out.iter_mut().zip(&noise.values) {
                    *o = mean + sd * z;
                }
            }
            GenerativeModel::Uniform { a, b } => {
                for (o, u) in out.iter_mut().zip(&noise.values) {
                    *o = a + (b - a) * u;
                }
            }
        }
        Ok(())
    }

    /// `n` draws together with the noise that produced them.
    pub fn sample_with_noise(&self, n: usize, seed: SeedStream) -> Result<(Vec<f64>, BaseNoise)> {
        self.validate()?;
        let noise = self.draw_noise(n, &mut seed.rng());
        let xs = self.transform(&noise)?;
        Ok((xs, noise))
    }

    pub fn sample(&self, n: usize, seed: SeedStream) -> Result<Vec<f64>> {
        Ok(self.sample_with_noise(n, seed)?.0)
    }
}

struct Cms {
    alpha: f64,
    beta: f64,
    scale: f64,
    loc: f64,
    b: f64,
    s: f64,
}

impl Cms {
    fn new(alpha: f64, beta: f64, scale: f64, loc: f64) -> Self {
        let (b, s) = if alpha == 1.0 {
            (0.0, 1.0)
        } else {
            let t = beta * (PI * alpha / 2.0).tan();
            (t.atan() / alpha, (1.0 + t * t).powf(1.0 / (2.0 * alpha)))
        };
        Cms { alpha, beta, scale, loc, b, s }
    }

    fn draw(&self, u: f64, w: f64) -> f64 {
        let a = self.alpha;
        if a == 1.0 {
            let h = FRAC_PI_2 + self.beta * u;
            let x = (h * u.tan() - self.beta * ((FRAC_PI_2 * w * u.cos()) / h).ln()) / FRAC_PI_2;
            self.scale * x + self.beta * self.scale * self.scale.ln() / FRAC_PI_2 + self.loc
        } else {
            let v = a * (u + self.b);
            let x = self.s * v.sin() / u.cos().powf(1.0 / a) * ((u - v).cos() / w).powf((1.0 - a) / a);
            self.scale * x + self.loc
        }
    }
}

/// Sum-of-log-normals draws and their frozen noise.
///
/// `noise` re-evaluates the sample at another `γ` through
/// `GenerativeModel::LognormalSum { gamma, sigma, l }.transform(&noise)`.
pub fn sample_lognormal_sum(
    gamma: f64,
    sigma: f64,
    l: usize,
    n: usize,
    seed: SeedStream,
) -> Result<(Vec<f64>, BaseNoise)> {
    GenerativeModel::LognormalSum { gamma, sigma, l }.sample_with_noise(n, seed)
}

pub fn sample_alpha_stable(
    alpha: f64,
    beta: f64,
    scale: f64,
    loc: f64,
    n: usize,
    seed: SeedStream,
) -> Result<Vec<f64>> {
    GenerativeModel::AlphaStable { alpha, beta, scale, loc }.sample(n, seed)
}

/// How the outlier block is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    /// Same family with its location moved by η.
    #[default]
    LocationShift,
    /// Every outlier sits at η.
    PointMass,
    /// Stable law with `loc + η`; only valid for the stable family.
    StableShift,
}

impl std::str::FromStr for Mechanism {
    type Err = RobotError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "location-shift" => Ok(Mechanism::LocationShift),
            "point-mass" => Ok(Mechanism::PointMass),
            "stable-shift" => Ok(Mechanism::StableShift),
            _ => Err(RobotError::invalid(format!("unknown contamination mechanism '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub epsilon: f64,
    pub eta: f64,
    #[serde(default)]
    pub mechanism: Mechanism,
}

impl ContaminationSpec {
    pub fn clean() -> Self {
        ContaminationSpec {
            epsilon: 0.0,
            eta: 0.0,
            mechanism: Mechanism::LocationShift,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(RobotError::invalid(format!(
                "epsilon must lie in [0, 1), got {}",
                self.epsilon
            )));
        }
        if !self.eta.is_finite() {
            return Err(RobotError::invalid("eta must be finite"));
        }
        Ok(())
    }

    /// `round(ε·n)`.
    pub fn outlier_count(&self, n: usize) -> usize {
        ((self.epsilon * n as f64).round() as usize).min(n)
    }
}

/// Sample split into inliers `I` and outliers `O`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContaminatedSample {
    pub values: Vec<f64>,
    pub inliers: Vec<usize>,
    pub outliers: Vec<usize>,
}

/// First `n − |O|` draws from `model`, the last `|O|` from the contaminating law.
pub fn contaminate(
    model: &GenerativeModel,
    spec: &ContaminationSpec,
    n: usize,
    seed: SeedStream,
) -> Result<ContaminatedSample> {
    model.validate()?;
    spec.validate()?;
    let n_out = spec.outlier_count(n);
    let n_in = n - n_out;
    let noise = model.draw_noise(n, &mut seed.rng());
    let mut values = vec![0.0; n];
    model.transform_into(&noise.slice(0..n_in), &mut values[..n_in])?;
    if n_out > 0 {
        let tail = &mut values[n_in..];
        match spec.mechanism {
            Mechanism::PointMass => tail.fill(spec.eta),
            Mechanism::LocationShift => model.shifted(spec.eta).transform_into(&noise.slice(n_in..n), tail)?,
            Mechanism::StableShift => {
                if !matches!(model, GenerativeModel::AlphaStable { .. }) {
                    return Err(RobotError::invalid("stable-shift needs the stable family"));
                }
                model.shifted(spec.eta).transform_into(&noise.slice(n_in..n), tail)?
            }
        }
    }
    Ok(ContaminatedSample {
        values,
        inliers: (0..n_in).collect(),
        outliers: (n_in..n).collect(),
    })
}
