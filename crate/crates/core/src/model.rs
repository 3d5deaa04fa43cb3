//! The `.clbf` model document: a versioned JSON file holding the policy,
//! the certificate network, its parameters and the environment constants.
//!
//! Floats are written with shortest round-trip formatting, so loading a
//! saved model reproduces every weight bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::certificate::{ClbfParams, FilteredCertificate};
use crate::envs::EnvSpec;
use crate::error::{ClbfError, Result};
use crate::losses::Method;
use crate::nn::{Activation, Layer, Mlp};

pub const FORMAT_TAG: &str = "clbf-model";
pub const FORMAT_VERSION: u32 = 1;
pub const MODEL_EXTENSION: &str = "clbf";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetDoc {
    /// Layer widths, input first.
    dims: Vec<usize>,
    activations: Vec<Activation>,
    /// Row-major weight matrices, one per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl NetDoc {
    fn from_mlp(net: &Mlp) -> Self {
        NetDoc {
            dims: net.widths(),
            activations: net.activations().to_vec(),
            weights: net.layers().iter().map(|l| l.weights.clone()).collect(),
            biases: net.layers().iter().map(|l| l.bias.clone()).collect(),
        }
    }

    fn to_mlp(&self, what: &str) -> Result<Mlp> {
        let bad = |m: &str| ClbfError::Format(format!("{what}: {m}"));
        if self.dims.len() < 2 {
            return Err(bad("need at least two layer widths"));
        }
        let n = self.dims.len() - 1;
        if self.weights.len() != n || self.biases.len() != n {
            return Err(bad("weight and bias counts do not match the widths"));
        }
        let mut layers = Vec::with_capacity(n);
        for k in 0..n {
            let l = Layer::new(
                self.dims[k + 1],
                self.dims[k],
                self.weights[k].clone(),
                self.biases[k].clone(),
            )
            .map_err(|e| bad(&format!("layer {k}: {e}")))?;
            layers.push(l);
        }
        let net = Mlp::new(layers, self.activations.clone()).map_err(|e| bad(&e.to_string()))?;
        if !net.all_finite() {
            return Err(bad("non-finite parameter"));
        }
        Ok(net)
    }
}

/// Training provenance kept alongside the networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub method: Method,
    pub seed: u64,
    /// Whether the last verification in training proved all conditions.
    pub certified: bool,
    /// Radius the decrease condition was verified at during training.
    pub verified_delta: f64,
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    env: String,
    env_constants: BTreeMap<String, f64>,
    meta: ModelMeta,
    params: ClbfParams,
    policy: NetDoc,
    certificate: NetDoc,
}

/// A trained controller with its certificate.
#[derive(Debug, Clone)]
pub struct Model {
    pub env: EnvSpec,
    pub policy: Mlp,
    pub cert: FilteredCertificate,
    pub meta: ModelMeta,
}

impl Model {
    pub fn new(policy: Mlp, cert: FilteredCertificate, meta: ModelMeta) -> Result<Self> {
        let env = cert.env.clone();
        ClbfError::check_dim(env.state_dim(), policy.input_dim())?;
        ClbfError::check_dim(env.control_dim(), policy.output_dim())?;
        Ok(Model {
            env,
            policy,
            cert,
            meta,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = Document {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            env: self.env.name().to_string(),
            env_constants: self
                .env
                .constants()
                .into_iter()
                .map(|(k, v)| (format!("env.{k}"), v))
                .collect(),
            meta: self.meta.clone(),
            params: self.cert.params,
            policy: NetDoc::from_mlp(&self.policy),
            certificate: NetDoc::from_mlp(&self.cert.net),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: Document =
            serde_json::from_str(s).map_err(|e| ClbfError::Format(e.to_string()))?;
        if doc.format != FORMAT_TAG {
            return Err(ClbfError::Format(format!(
                "unexpected format tag '{}'",
                doc.format
            )));
        }
        if doc.version != FORMAT_VERSION {
            return Err(ClbfError::Format(format!(
                "unsupported version {}",
                doc.version
            )));
        }
        let env = EnvSpec::from_name(&doc.env, &doc.env_constants)
            .map_err(|e| ClbfError::Format(e.to_string()))?;
        doc.params
            .validate()
            .map_err(|e| ClbfError::Format(e.to_string()))?;
        let policy = doc.policy.to_mlp("policy")?;
        let net = doc.certificate.to_mlp("certificate")?;
        let cert = FilteredCertificate::new(net, doc.params, env)
            .map_err(|e| ClbfError::Format(e.to_string()))?;
        Model::new(policy, cert, doc.meta).map_err(|e| ClbfError::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Model::from_json(&fs::read_to_string(path)?)
    }

    /// Loads and checks that the model was trained for `env_name`.
    pub fn load_for(path: &Path, env_name: &str) -> Result<Self> {
        let m = Model::load(path)?;
        if m.env.name() != env_name {
            return Err(ClbfError::Config(format!(
                "model was trained for '{}', not '{env_name}'",
                m.env.name()
            )));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_model(env: EnvSpec, seed: u64) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = env.state_dim();
        let policy = Mlp::glorot(&[d, 8, env.control_dim()], &mut rng).unwrap();
        let net = Mlp::glorot(&[d, 6, 4, 1], &mut rng).unwrap();
        let cert = FilteredCertificate::new(net, ClbfParams::for_env(&env), env).unwrap();
        let meta = ModelMeta {
            method: Method::LipReg,
            seed,
            certified: false,
            verified_delta: 0.0,
            tau: Some(2.5),
        };
        Model::new(policy, cert, meta).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for env in [EnvSpec::pendulum(), EnvSpec::docking2d()] {
            let m = sample_model(env, 3);
            let s = m.to_json().unwrap();
            let back = Model::from_json(&s).unwrap();
            assert_eq!(back.policy, m.policy);
            assert_eq!(back.cert.net, m.cert.net);
            assert_eq!(back.cert.params, m.cert.params);
            assert_eq!(back.meta, m.meta);
            assert_eq!(back.env, m.env);
            assert_eq!(back.to_json().unwrap(), s);
        }
    }

    #[test]
    fn rejects_bad_documents() {
        let s = sample_model(EnvSpec::pendulum(), 1).to_json().unwrap();
        let tag = s.replace(FORMAT_TAG, "something-else");
        assert!(matches!(Model::from_json(&tag), Err(ClbfError::Format(_))));
        let ver = s.replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(Model::from_json(&ver), Err(ClbfError::Format(_))));
        let env = s.replace("\"pendulum\"", "\"cartpole\"");
        assert!(matches!(Model::from_json(&env), Err(ClbfError::Format(_))));
        assert!(Model::from_json("{").is_err());
        // policy built for the wrong environment
        let wrong = s.replace("\"env\": \"pendulum\"", "\"env\": \"docking2d\"");
        assert!(Model::from_json(&wrong).is_err());
    }

    #[test]
    fn env_mismatch_on_load() {
        let dir = std::env::temp_dir().join(format!("clbf-model-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("m.clbf");
        sample_model(EnvSpec::docking2d(), 2).save(&p).unwrap();
        assert!(Model::load_for(&p, "docking2d").is_ok());
        assert!(matches!(
            Model::load_for(&p, "pendulum"),
            Err(ClbfError::Config(_))
        ));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn constants_survive() {
        let mut o = BTreeMap::new();
        o.insert("env.b".to_string(), 0.2);
        let env = EnvSpec::from_name("pendulum", &o).unwrap();
        let m = sample_model(env.clone(), 4);
        let back = Model::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.env, env);
    }
}
