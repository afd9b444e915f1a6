use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pruner::{self, FactorKind, FactorMethod, LinearSchedule, SparsityBoundary};

/// Model variant: the plain DNN or one of the three factor formulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    None,
    Binarization,
    Scaling,
    #[default]
    Fusion,
}

impl Method {
    pub fn factor_kind(self) -> Option<FactorKind> {
        match self {
            Method::None => None,
            Method::Binarization => Some(FactorKind::Binarization),
            Method::Scaling => Some(FactorKind::Scaling),
            Method::Fusion => Some(FactorKind::Fusion),
        }
    }

    pub const ALL: [Method; 4] = [Method::None, Method::Binarization, Method::Scaling, Method::Fusion];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::None => "none",
            Method::Binarization => "binarization",
            Method::Scaling => "scaling",
            Method::Fusion => "fusion",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}; expected none, binarization, scaling or fusion")))
    }
}

/// Training hyperparameters. Defaults follow the public-dataset setup:
/// Adam at lr 0.001, β = 2, ε = 0.25, α from 0.1 to 5, λ̂ from 0.01,
/// sparsity boundary [0.15, 0.25].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub beta: f64,
    pub epsilon: f64,
    pub alpha_init: f64,
    pub alpha_max: f64,
    pub lambda_init: f64,
    pub lambda_max: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Steps over which α and λ̂ ramp; 0 means the whole run.
    pub anneal_steps: usize,
    /// Half-width of the uniform embedding init.
    pub embed_init: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Fusion,
            hidden: vec![128, 64, 32],
            embed_dim: 8,
            beta: pruner::BETA,
            epsilon: pruner::EPSILON,
            alpha_init: pruner::ALPHA_INIT,
            alpha_max: pruner::ALPHA_MAX,
            lambda_init: pruner::LAMBDA_INIT,
            lambda_max: pruner::LAMBDA_MAX,
            r_min: pruner::R_MIN,
            r_max: pruner::R_MAX,
            lr: 0.001,
            batch_size: 256,
            epochs: 10,
            seed: 0,
            anneal_steps: 0,
            embed_init: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be >= 1".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.alpha_init > 0.0 && self.alpha_max >= self.alpha_init) {
            return Err(Error::Config("need 0 < alpha_init <= alpha_max".into()));
        }
        if !(self.lambda_init >= 0.0 && self.lambda_max >= self.lambda_init) {
            return Err(Error::Config("need 0 <= lambda_init <= lambda_max".into()));
        }
        if !(self.embed_init >= 0.0 && self.embed_init.is_finite()) {
            return Err(Error::Config("embed_init must be >= 0".into()));
        }
        self.boundary()?;
        if let Some(kind) = self.method.factor_kind() {
            FactorMethod::new(kind, self.alpha_init, self.beta, self.epsilon)?;
        }
        Ok(())
    }

    pub fn boundary(&self) -> Result<SparsityBoundary> {
        SparsityBoundary::new(self.r_min, self.r_max)
    }

    pub fn alpha(&self) -> LinearSchedule {
        LinearSchedule {
            start: self.alpha_init,
            end: self.alpha_max,
        }
    }

    pub fn lambda(&self) -> LinearSchedule {
        LinearSchedule {
            start: self.lambda_init,
            end: self.lambda_max,
        }
    }

    /// Factor method at schedule position `step` of `span`, `None` for the plain DNN.
    pub fn method_at(&self, step: usize, span: usize) -> Result<Option<FactorMethod>> {
        self.method
            .factor_kind()
            .map(|k| FactorMethod::new(k, self.alpha().at(step, span), self.beta, self.epsilon))
            .transpose()
    }

    /// Canonical text form, used in checkpoints and echoed next to outputs.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_reported_setup() {
        let c = TrainConfig::default();
        assert_eq!(c.lr, 0.001);
        assert_eq!((c.r_min, c.r_max), (0.15, 0.25));
        assert_eq!((c.beta, c.epsilon), (2.0, 0.25));
        assert_eq!((c.alpha_init, c.alpha_max), (0.1, 5.0));
        assert_eq!(c.lambda_init, 0.01);
        c.validate().unwrap();
    }

    #[test]
    fn toml_roundtrip() {
        let c = TrainConfig {
            method: Method::Binarization,
            hidden: vec![8, 4],
            seed: 42,
            ..TrainConfig::default()
        };
        let text = c.to_toml();
        assert_eq!(TrainConfig::from_toml(&text).unwrap(), c);
        assert!(text.contains("method = \"binarization\""));
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = TrainConfig::from_toml("epochs = 3\nmethod = \"none\"\n").unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.method, Method::None);
        assert_eq!(c.hidden, vec![128, 64, 32]);
        assert!(TrainConfig::from_toml("bogus = 1").is_err());
        assert!(TrainConfig::from_toml("r_min = 0.5").is_err());
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("dnn".parse::<Method>().is_err());
    }
}
