//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Keys not listed in
//! [`KEYS`] are rejected, except `env.<constant>` overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversary::{PgdConfig, DEFAULT_PGD_RESTARTS, DEFAULT_PGD_STEPS};
use crate::certificate::ClbfParams;
use crate::envs::EnvSpec;
use crate::error::{ClbfError, Result};
use crate::losses::{LossWeights, Method};
use crate::verifier::BnbConfig;

/// Recognised keys.
pub const KEYS: &[&str] = &[
    "method",
    "beta",
    "epsilon",
    "delta",
    "tau",
    "lambda_init",
    "lambda_dec",
    "lambda_dec_adv",
    "lambda_dec_neighbor",
    "lambda_lip_global",
    "ce_weight",
    "pgd_steps",
    "pgd_restarts",
    "seed",
    "max_iters",
    "timeout_hours",
    "epochs",
    "batch_size",
    "init_batch_size",
    "ce_batch_size",
    "learning_rate",
    "resample_m",
    "resample_radius",
    "min_width",
    "max_boxes",
    "max_counterexamples",
    "verify_epsilon",
    "init_margin",
    "warm_policy_epochs",
    "warm_cert_epochs",
    "zero_streak",
    "deterministic",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: Method,
    pub params: ClbfParams,
    pub weights: LossWeights,
    pub pgd_steps: usize,
    pub pgd_restarts: usize,
    pub seed: u64,
    /// CEGIS iteration cap.
    pub max_iters: usize,
    pub timeout_hours: f64,
    /// Adam steps per CEGIS iteration (cap).
    pub epochs: usize,
    pub batch_size: usize,
    pub init_batch_size: usize,
    /// Counterexample points drawn per step (all of them if fewer).
    pub ce_batch_size: usize,
    pub learning_rate: f64,
    /// Points resampled around each counterexample.
    pub resample_m: usize,
    /// l∞ radius of the resampling ball; `None` means 10 × `min_width`.
    pub resample_radius: Option<f64>,
    pub bnb: BnbConfig,
    /// Descent margin the verifier checks inside the loop.
    pub verify_epsilon: f64,
    /// Training target on the initial set is `β − init_margin`.
    pub init_margin: f64,
    pub warm_policy_epochs: usize,
    pub warm_cert_epochs: usize,
    /// Consecutive zero-loss steps that end a training phase.
    pub zero_streak: usize,
    pub env_overrides: BTreeMap<String, f64>,
}

impl RunConfig {
    pub fn defaults(env: &EnvSpec, method: Method) -> Self {
        let mut bnb = BnbConfig::for_env(env);
        bnb.max_counterexamples = 32;
        RunConfig {
            method,
            params: ClbfParams::for_env(env),
            weights: LossWeights::default(),
            pgd_steps: DEFAULT_PGD_STEPS,
            pgd_restarts: DEFAULT_PGD_RESTARTS,
            seed: 0,
            max_iters: 50,
            timeout_hours: 12.0,
            epochs: 2000,
            batch_size: 512,
            init_batch_size: 128,
            ce_batch_size: 1024,
            learning_rate: 1e-3,
            resample_m: 64,
            resample_radius: None,
            bnb,
            verify_epsilon: 1e-6,
            init_margin: 0.02,
            warm_policy_epochs: 3000,
            warm_cert_epochs: 500,
            zero_streak: 3,
            env_overrides: BTreeMap::new(),
        }
    }

    pub fn resample_radius(&self) -> f64 {
        self.resample_radius.unwrap_or(10.0 * self.bnb.min_width)
    }

    pub fn pgd(&self) -> PgdConfig {
        PgdConfig {
            steps: self.pgd_steps,
            restarts: self.pgd_restarts,
            ..PgdConfig::with_delta(self.params.delta)
        }
    }

    /// Applies `key = value` text on top of the current values.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                ClbfError::Config(format!("line {}: expected key = value", n + 1))
            })?;
            self.set(k.trim(), v.trim())
                .map_err(|e| ClbfError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_str(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace("lambda.", "lambda_");
        let f = || -> Result<f64> {
            value
                .parse::<f64>()
                .map_err(|_| ClbfError::Config(format!("{key}: '{value}' is not a number")))
        };
        let u = || -> Result<usize> {
            value
                .parse::<usize>()
                .map_err(|_| ClbfError::Config(format!("{key}: '{value}' is not a count")))
        };
        if let Some(name) = key.strip_prefix("env.") {
            if name.is_empty() {
                return Err(ClbfError::Config("empty env override".into()));
            }
            self.env_overrides.insert(key.clone(), f()?);
            return Ok(());
        }
        match key.as_str() {
            "method" => self.method = value.parse()?,
            "beta" => self.params.beta = f()?,
            "epsilon" => self.params.epsilon = f()?,
            "delta" => self.params.delta = f()?,
            "tau" => self.weights.tau = f()?,
            "lambda_init" => self.weights.lambda_init = f()?,
            "lambda_dec" => self.weights.lambda_dec = f()?,
            "lambda_dec_adv" => self.weights.lambda_dec_adv = f()?,
            "lambda_dec_neighbor" => self.weights.lambda_dec_neighbor = f()?,
            "lambda_lip_global" => self.weights.lambda_lip_global = f()?,
            "ce_weight" => self.weights.ce_weight = f()?,
            "pgd_steps" => self.pgd_steps = u()?,
            "pgd_restarts" => self.pgd_restarts = u()?,
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| ClbfError::Config(format!("seed: '{value}' is not an integer")))?
            }
            "max_iters" => self.max_iters = u()?,
            "timeout_hours" => self.timeout_hours = f()?,
            "epochs" => self.epochs = u()?,
            "batch_size" => self.batch_size = u()?,
            "init_batch_size" => self.init_batch_size = u()?,
            "ce_batch_size" => self.ce_batch_size = u()?,
            "learning_rate" => self.learning_rate = f()?,
            "resample_m" => self.resample_m = u()?,
            "resample_radius" => self.resample_radius = Some(f()?),
            "min_width" => self.bnb.min_width = f()?,
            "max_boxes" => self.bnb.max_boxes = u()?,
            "max_counterexamples" => self.bnb.max_counterexamples = u()?,
            "verify_epsilon" => self.verify_epsilon = f()?,
            "init_margin" => self.init_margin = f()?,
            "warm_policy_epochs" => self.warm_policy_epochs = u()?,
            "warm_cert_epochs" => self.warm_cert_epochs = u()?,
            "zero_streak" => self.zero_streak = u()?,
            "deterministic" => {
                self.bnb.deterministic = value.parse().map_err(|_| {
                    ClbfError::Config(format!("deterministic: '{value}' is not true/false"))
                })?
            }
            other => return Err(ClbfError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.weights.validate(self.method)?;
        self.pgd().validate()?;
        self.bnb.validate()?;
        let positive_counts = [
            ("max_iters", self.max_iters),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("init_batch_size", self.init_batch_size),
            ("ce_batch_size", self.ce_batch_size),
            ("resample_m", self.resample_m),
            ("zero_streak", self.zero_streak),
        ];
        for (k, v) in positive_counts {
            if v == 0 {
                return Err(ClbfError::Config(format!("{k} must be at least 1")));
            }
        }
        let positive = [
            ("timeout_hours", self.timeout_hours),
            ("learning_rate", self.learning_rate),
            ("resample_radius", self.resample_radius()),
            ("verify_epsilon", self.verify_epsilon),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ClbfError::Config(format!("{k} must be a positive number")));
            }
        }
        if !(self.init_margin >= 0.0 && self.init_margin < self.params.beta - self.params.c) {
            return Err(ClbfError::Config(
                "init_margin must lie in [0, beta - c)".into(),
            ));
        }
        if self.method.trains_robustly() && self.params.delta == 0.0 {
            log::warn!("method {} with delta = 0 trains like vanilla", self.method);
        }
        Ok(())
    }
}
