//! Minimum expected robust Wasserstein estimation and its untrimmed baseline.
//!
//! The loss at `θ` is the average of `W^(λ)(data, synthetic_i(θ))` over `k`
//! synthetic samples of size `m`. The synthetic samples are transforms of
//! base noise frozen at construction, so the loss is a deterministic
//! function of `θ` for a given seed.

use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RobotError};
use crate::measure::DiscreteMeasure;
use crate::optimize::{golden_section, nelder_mead, Minimum, TracePoint};
use crate::ot::line;
use crate::sampling::{BaseNoise, GenerativeModel, SeedStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Optimizer {
    /// Scalar search on `[lo, hi]`; assumes the loss is unimodal near the
    /// best point of a coarse pre-scan.
    GoldenSection {
        lo: f64,
        hi: f64,
        #[serde(default = "default_prescan")]
        prescan: usize,
    },
    NelderMead { start: Vec<f64>, radius: f64 },
}

fn default_prescan() -> usize {
    21
}

impl Optimizer {
    pub fn golden(lo: f64, hi: f64) -> Self {
        Optimizer::GoldenSection {
            lo,
            hi,
            prescan: default_prescan(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    /// Trimming level; `f64::INFINITY` gives the untrimmed estimator.
    #[serde(with = "lambda_serde")]
    pub lambda: f64,
    pub m: usize,
    pub k: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    #[serde(default = "default_max_evals")]
    pub max_evals: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Parameters being estimated; empty means the model's location.
    #[serde(default)]
    pub params: Vec<String>,
    /// Freeze the synthetic noise across evaluations. When false every
    /// evaluation draws fresh noise from a per-evaluation child stream.
    #[serde(default = "default_crn")]
    pub common_random_numbers: bool,
}

fn default_crn() -> bool {
    true
}

fn default_max_evals() -> usize {
    200
}

fn default_tol() -> f64 {
    1e-4
}

impl EstimationConfig {
    /// Golden-section config on `[lo, hi]` with the default tolerance and budget.
    pub fn new(lambda: f64, m: usize, k: usize, lo: f64, hi: f64, seed: u64) -> Self {
        EstimationConfig {
            lambda,
            m,
            k,
            optimizer: Optimizer::golden(lo, hi),
            seed,
            max_evals: default_max_evals(),
            tol: default_tol(),
            params: Vec::new(),
            common_random_numbers: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(RobotError::invalid("lambda must be positive or infinite"));
        }
        if self.m == 0 || self.k == 0 {
            return Err(RobotError::invalid("m and k must be at least 1"));
        }
        if self.max_evals == 0 || !(self.tol > 0.0) {
            return Err(RobotError::invalid("max_evals and tol must be positive"));
        }
        match &self.optimizer {
            Optimizer::GoldenSection { lo, hi, .. } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(RobotError::invalid("golden-section bounds must be finite with lo < hi"));
                }
            }
            Optimizer::NelderMead { start, radius } => {
                if start.is_empty() || !(*radius > 0.0) {
                    return Err(RobotError::invalid("Nelder-Mead needs a start point and positive radius"));
                }
            }
        }
        Ok(())
    }
}

mod lambda_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("infinite")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) if matches!(t.as_str(), "infinite" | "inf" | "infinity") => Ok(f64::INFINITY),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateResult {
    pub params: Vec<String>,
    pub theta_hat: Vec<f64>,
    pub objective_at_opt: f64,
    pub evals: usize,
    pub converged: bool,
    pub warning: Option<String>,
    pub trace: Vec<TracePoint>,
}

/// Frozen-noise loss `θ ↦ k⁻¹ Σ_i W^(λ)(data, synthetic_i(θ))`.
#[derive(Debug)]
pub struct MerweObjective {
    xs: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    model: GenerativeModel,
    params: Vec<String>,
    noises: Vec<BaseNoise>,
    cap: f64,
    // Some(seed) when noise is redrawn at every evaluation
    fresh: Option<(SeedStream, usize)>,
    evals: AtomicU64,
}

impl MerweObjective {
    pub fn new(data: &DiscreteMeasure<f64>, model: &GenerativeModel, config: &EstimationConfig) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        if data.dim() != 1 {
            return Err(RobotError::invalid("estimation supports one-dimensional data only"));
        }
        let params = if config.params.is_empty() {
            vec![model.location_name().to_string()]
        } else {
            config.params.clone()
        };
        for p in &params {
            model.parameter(p)?;
        }
        let root = SeedStream::new(config.seed);
        let noises = (0..config.k)
            .map(|i| model.draw_noise(config.m, &mut root.child_indexed("replicate", i as u64).rng()))
            .collect();
        Ok(MerweObjective {
            xs: data.coords().to_vec(),
            a: data.weights().to_vec(),
            b: vec![1.0 / config.m as f64; config.m],
            model: *model,
            params,
            noises,
            cap: 2.0 * config.lambda,
            fresh: (!config.common_random_numbers).then_some((root, config.m)),
            evals: AtomicU64::new(0),
        })
    }

    pub fn params(&self) -> &[String] {
        &self.params
    }

    /// Model with the estimated parameters set to `theta`.
    pub fn model_at(&self, theta: &[f64]) -> Result<GenerativeModel> {
        if theta.len() != self.params.len() {
            return Err(RobotError::invalid(format!(
                "expected {} parameter values, got {}",
                self.params.len(),
                theta.len()
            )));
        }
        let mut model = self.model;
        for (name, &v) in self.params.iter().zip(theta) {
            model = model.with_parameter(name, v)?;
        }
        model.validate()?;
        Ok(model)
    }

    pub fn eval(&self, theta: &[f64]) -> Result<f64> {
        let model = self.model_at(theta)?;
        let count = self.evals.fetch_add(1, AtomicOrdering::Relaxed);
        let redrawn;
        let noises = match self.fresh {
            None => &self.noises,
            Some((root, m)) => {
                let stream = root.child_indexed("evaluation", count);
                redrawn = (0..self.noises.len())
                    .map(|i| self.model.draw_noise(m, &mut stream.child_indexed("replicate", i as u64).rng()))
                    .collect::<Vec<_>>();
                &redrawn
            }
        };
        let values: Vec<Result<f64>> = noises
            .par_iter()
            .enumerate()
            .map(|(i, noise)| {
                let ys = model.transform(noise)?;
                line::capped_value(&self.xs, &self.a, &ys, &self.b, self.cap)
                    .map_err(|e| RobotError::solver(format!("replicate {i}: {e}")))
            })
            .collect();
        // summed in replicate order so the value does not depend on scheduling
        let mut total = 0.0;
        for v in values {
            total += v?;
        }
        let loss = total / self.noises.len() as f64;
        debug_assert!(loss >= 0.0 && loss <= self.cap + 1e-9);
        Ok(loss)
    }
}

/// One evaluation of the loss; builds the frozen noise from `config.seed`.
pub fn merwe_objective(
    theta: &[f64],
    data: &DiscreteMeasure<f64>,
    model: &GenerativeModel,
    config: &EstimationConfig,
) -> Result<f64> {
    MerweObjective::new(data, model, config)?.eval(theta)
}

/// Minimises the trimmed loss with the configured optimizer.
pub fn fit_merwe(data: &DiscreteMeasure<f64>, model: &GenerativeModel, config: &EstimationConfig) -> Result<EstimateResult> {
    let objective = MerweObjective::new(data, model, config)?;
    // parameter values outside the model's domain are treated as infinitely bad
    let loss = |theta: &[f64]| match objective.model_at(theta) {
        Ok(_) => objective.eval(theta),
        Err(RobotError::InvalidArgument(_)) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    };
    let min: Minimum = match &config.optimizer {
        Optimizer::GoldenSection { lo, hi, prescan } => {
            if objective.params().len() != 1 {
                return Err(RobotError::invalid("golden-section search needs exactly one parameter"));
            }
            golden_section(|t| loss(&[t]), *lo, *hi, *prescan, config.tol, config.max_evals)?
        }
        Optimizer::NelderMead { start, radius } => {
            if start.len() != objective.params().len() {
                return Err(RobotError::invalid("start point length differs from parameter count"));
            }
            nelder_mead(loss, start, *radius, config.tol, config.max_evals)?
        }
    };
    let warning = (!min.converged).then(|| {
        format!(
            "evaluation budget of {} exhausted before convergence; returning best point found",
            config.max_evals
        )
    });
    Ok(EstimateResult {
        params: objective.params().to_vec(),
        theta_hat: min.theta,
        objective_at_opt: min.loss,
        evals: min.evals,
        converged: min.converged,
        warning,
        trace: min.trace,
    })
}

/// [`fit_merwe`] with the untrimmed cost.
pub fn fit_mewe(data: &DiscreteMeasure<f64>, model: &GenerativeModel, config: &EstimationConfig) -> Result<EstimateResult> {
    let mut cfg = config.clone();
    cfg.lambda = f64::INFINITY;
    fit_merwe(data, model, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian() -> GenerativeModel {
        GenerativeModel::Gaussian { mean: 0.0, sd: 1.0 }
    }

    #[test]
    fn objective_vanishes_on_identical_noise() {
        let model = gaussian();
        let cfg = EstimationConfig::new(2.0, 50, 1, -3.0, 3.0, 11);
        let noise = model.draw_noise(50, &mut SeedStream::new(11).child_indexed("replicate", 0).rng());
        let xs = model.with_parameter("mean", 0.4).unwrap().transform(&noise).unwrap();
        let data = DiscreteMeasure::uniform_1d(&xs).unwrap();
        let v = merwe_objective(&[0.4], &data, &model, &cfg).unwrap();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn infinite_lambda_matches_untrimmed_loss_once_cap_is_inactive() {
        let model = gaussian();
        let data = DiscreteMeasure::uniform_1d(&model.sample(40, SeedStream::new(1)).unwrap()).unwrap();
        let trimmed = EstimationConfig::new(1e6, 60, 3, -3.0, 3.0, 5);
        let mut plain = trimmed.clone();
        plain.lambda = f64::INFINITY;
        for th in [-1.0, 0.0, 0.7] {
            let a = merwe_objective(&[th], &data, &model, &trimmed).unwrap();
            let b = merwe_objective(&[th], &data, &model, &plain).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn objective_saturates_far_away() {
        let model = gaussian();
        let data = DiscreteMeasure::uniform_1d(&model.sample(40, SeedStream::new(2)).unwrap()).unwrap();
        let cfg = EstimationConfig::new(0.5, 40, 2, -3.0, 3.0, 5);
        let v = merwe_objective(&[1e4], &data, &model, &cfg).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn objective_nondecreasing_in_lambda() {
        let model = gaussian();
        let data = DiscreteMeasure::uniform_1d(&model.sample(30, SeedStream::new(3)).unwrap()).unwrap();
        let mut last = 0.0;
        for lambda in [0.1, 0.3, 1.0, 3.0, f64::INFINITY] {
            let cfg = EstimationConfig::new(lambda, 30, 2, -3.0, 3.0, 9);
            let v = merwe_objective(&[0.5], &data, &model, &cfg).unwrap();
            assert!(v + 1e-12 >= last);
            last = v;
        }
    }

    #[test]
    fn mewe_recovers_gaussian_location() {
        let model = gaussian();
        let xs = model.with_parameter("mean", 1.5).unwrap().sample(1000, SeedStream::new(4)).unwrap();
        let data = DiscreteMeasure::uniform_1d(&xs).unwrap();
        let cfg = EstimationConfig::new(5.0, 1000, 2, -5.0, 5.0, 21);
        let fit = fit_mewe(&data, &model, &cfg).unwrap();
        assert!(fit.converged);
        assert!((fit.theta_hat[0] - 1.5).abs() < 0.1);
        let best = fit.trace.iter().map(|t| t.loss).fold(f64::INFINITY, f64::min);
        assert_eq!(best, fit.objective_at_opt);
    }

    #[test]
    fn nelder_mead_fits_two_parameters() {
        let model = gaussian();
        let truth = GenerativeModel::Gaussian { mean: -0.5, sd: 2.0 };
        let data = DiscreteMeasure::uniform_1d(&truth.sample(400, SeedStream::new(5)).unwrap()).unwrap();
        let mut cfg = EstimationConfig::new(10.0, 400, 2, -1.0, 1.0, 8);
        cfg.params = vec!["mean".into(), "sd".into()];
        cfg.optimizer = Optimizer::NelderMead {
            start: vec![0.0, 1.0],
            radius: 0.5,
        };
        let fit = fit_merwe(&data, &model, &cfg).unwrap();
        assert!((fit.theta_hat[0] + 0.5).abs() < 0.3 && (fit.theta_hat[1] - 2.0).abs() < 0.3, "{:?}", fit.theta_hat);
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut cfg = EstimationConfig::new(f64::INFINITY, 10, 2, -1.0, 1.0, 3);
        cfg.params = vec!["loc".into()];
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"infinite\""));
        let back: EstimationConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_validation() {
        assert!(EstimationConfig::new(1.0, 0, 1, -1.0, 1.0, 0).validate().is_err());
        assert!(EstimationConfig::new(1.0, 1, 1, 1.0, -1.0, 0).validate().is_err());
        assert!(EstimationConfig::new(0.0, 1, 1, -1.0, 1.0, 0).validate().is_err());
    }
}
