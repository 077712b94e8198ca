//! JSON experiment configuration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::integer_dist::IntegerPmf;
use crate::membrane::AnalyzerOptions;
use crate::walk::{ModelError, WalkModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid experiment: {0}")]
    Experiment(String),
}

/// `{m, start, center?, xi: [[v, p], ...], eta: {"-m": [[v, p], ...], ...}}`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub m: u32,
    #[serde(default)]
    pub start: i64,
    /// Membrane centre; the membrane is `{center - m, ..., center + m}` and
    /// `eta` keys are offsets from it.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub center: i64,
    pub xi: IntegerPmf,
    pub eta: BTreeMap<String, IntegerPmf>,
}

fn is_zero(v: &i64) -> bool {
    *v == 0
}

impl ModelSpec {
    pub fn build(&self) -> Result<WalkModel, ConfigError> {
        let mut laws = BTreeMap::new();
        for (key, law) in &self.eta {
            let j: i64 = key
                .trim()
                .parse()
                .map_err(|_| ModelError::BadMembraneKey(key.clone()))?;
            laws.insert(j, law.clone());
        }
        Ok(
            WalkModel::from_map(self.m, self.xi.clone(), &laws, self.start)?
                .with_center(self.center),
        )
    }

    pub fn from_model(model: &WalkModel) -> Self {
        Self {
            m: model.m(),
            start: model.start(),
            center: model.center(),
            xi: model.step_law().pmf().clone(),
            eta: model
                .membrane_laws()
                .map(|(j, law)| (j.to_string(), law.clone()))
                .collect(),
        }
    }
}

/// Every pass/fail threshold used by the experiment runner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Max KS distance of `X(nt) / (sigma sqrt n)` to the limit marginal.
    pub ks: f64,
    /// Standard errors allowed for mean-type checks.
    pub z: f64,
    /// Relative band for the median `L+/L-` ratio.
    pub l_ratio_rel: f64,
    /// Max spread factor of mean `nu(n) / sqrt n` across scales.
    pub nu_spread: f64,
    pub analyzer_tol: f64,
    pub eta_eps: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            ks: 0.03,
            z: 3.0,
            l_ratio_rel: 0.10,
            nu_spread: 1.5,
            analyzer_tol: 1e-12,
            eta_eps: 1e-8,
        }
    }
}

impl Tolerances {
    pub fn analyzer(&self) -> AnalyzerOptions {
        AnalyzerOptions {
            tol: self.analyzer_tol,
            eta_eps: self.eta_eps,
            ..AnalyzerOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    /// Scales `n` for the marginal KS comparison.
    pub scales: Vec<u64>,
    /// Paths per scale.
    pub paths: usize,
    /// Evaluation times `t`.
    pub times: Vec<f64>,
    /// Each seed reruns the marginal comparison; the first one drives the
    /// remaining checks.
    pub seeds: Vec<u64>,
    pub tolerances: Tolerances,
    /// Horizon and path count for the cycle LLN, sign and `L` ratio checks.
    pub long_steps: u64,
    pub lln_paths: usize,
    pub lln_batches: usize,
    pub sign_paths: usize,
    pub l_ratio_paths: usize,
    pub nu_scales: Vec<u64>,
    pub nu_paths: usize,
    /// Scale and path count of the martingale diagnostics.
    pub diag_scale: u64,
    pub diag_paths: usize,
    pub diag_times: Vec<f64>,
    pub output_dir: Option<String>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            scales: vec![10_000],
            paths: 20_000,
            times: vec![0.5, 1.0, 2.0],
            seeds: vec![20_240_601],
            tolerances: Tolerances::default(),
            long_steps: 1_000_000,
            lln_paths: 20,
            lln_batches: 20,
            sign_paths: 20,
            l_ratio_paths: 50,
            nu_scales: vec![1_000, 10_000, 100_000, 1_000_000],
            nu_paths: 1000,
            diag_scale: 10_000,
            diag_paths: 5000,
            diag_times: vec![0.5, 1.0],
            output_dir: None,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError::Experiment(msg.to_string()));
        if self.scales.is_empty()
            || self.scales[0] == 0
            || self.scales.windows(2).any(|w| w[1] <= w[0])
        {
            return bad("scales must be positive and strictly increasing");
        }
        if self.nu_scales.is_empty()
            || self.nu_scales[0] == 0
            || self.nu_scales.windows(2).any(|w| w[1] <= w[0])
        {
            return bad("nu_scales must be positive and strictly increasing");
        }
        if self.paths < 100 {
            return bad("paths must be at least 100");
        }
        let good_time = |t: &f64| *t > 0.0 && t.is_finite();
        if self.times.is_empty() || !self.times.iter().all(good_time) {
            return bad("times must be positive and finite");
        }
        if self.diag_times.is_empty() || !self.diag_times.iter().all(good_time) {
            return bad("diag_times must be positive and finite");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.lln_batches < 2 {
            return bad("lln_batches must be at least 2");
        }
        Ok(())
    }

    pub fn master_seed(&self) -> u64 {
        self.seeds[0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub experiment: ExperimentSpec,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text)?;
        config.experiment.validate()?;
        Ok(config)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const C1: &str = r#"{
        "model": {"m": 0, "start": 0, "xi": [[-1, 0.5], [1, 0.5]],
                  "eta": {"0": [[1, 0.75], [-1, 0.25]]}},
        "experiment": {"scales": [100, 1000], "paths": 200, "times": [1.0], "seeds": [7]}
    }"#;

    #[test]
    fn parses_c1() {
        let config = ExperimentConfig::from_json(C1).unwrap();
        let model = config.model.build().unwrap();
        assert_eq!(model.m(), 0);
        assert_eq!(model.membrane_law(0).prob(1), 0.75);
        assert_eq!(config.experiment.nu_paths, 1000);
        assert_eq!(config.experiment.tolerances.ks, 0.03);
        assert_eq!(ModelSpec::from_model(&model), config.model);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::from_json(C1).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.experiment.seeds = vec![8];
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn rejects_bad_experiments() {
        let with = |patch: &str| C1.replace(r#""paths": 200"#, patch);
        assert!(ExperimentConfig::from_json(&with(r#""paths": 20"#)).is_err());
        let decreasing = C1.replace("[100, 1000]", "[1000, 100]");
        assert!(ExperimentConfig::from_json(&decreasing).is_err());
        let bad_time = C1.replace(r#""times": [1.0]"#, r#""times": [0.0]"#);
        assert!(ExperimentConfig::from_json(&bad_time).is_err());
    }

    #[test]
    fn rejects_bad_model_keys() {
        let spec: ModelSpec = serde_json::from_str(
            r#"{"m": 1, "xi": [[-1, 0.5], [1, 0.5]],
                "eta": {"-1": [[1, 1.0]], "0": [[1, 1.0]], "x": [[1, 1.0]]}}"#,
        )
        .unwrap();
        assert!(matches!(
            spec.build(),
            Err(ConfigError::Model(ModelError::BadMembraneKey(_)))
        ));
        let short: ModelSpec = serde_json::from_str(
            r#"{"m": 1, "xi": [[-1, 0.5], [1, 0.5]], "eta": {"0": [[1, 1.0]]}}"#,
        )
        .unwrap();
        assert!(matches!(
            short.build(),
            Err(ConfigError::Model(ModelError::MissingMembraneLaw(-1)))
        ));
    }
}
