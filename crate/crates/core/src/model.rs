//! Uniform handling of every OOD method: a serializable [`MethodSpec`]
//! naming a method and its hyperparameters, and a [`FittedModel`] that can
//! score and classify queries.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    head_train, logit_scores, mds_fit, mds_score, GaussianModel, HeadConfig, KnnModel, LinearHead, LogitMethod,
    MdsConfig, DEFAULT_K,
};
use crate::data::{EmbeddingSet, ScoreVector};
use crate::error::{Error, Result};
use crate::sprod::{
    classify, fit_converged, fit_kmeans, fit_stage1, fit_stage2, fit_stage3, score_distance, score_softmax,
    DistanceMetric, PrototypeBank, DEFAULT_MAX_ITERS,
};

/// How prototype banks turn distances into scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scoring {
    #[default]
    Distance,
    Softmax,
}

impl fmt::Display for Scoring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scoring::Distance => "distance",
            Scoring::Softmax => "softmax",
        })
    }
}

impl FromStr for Scoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "distance" => Ok(Scoring::Distance),
            "softmax" => Ok(Scoring::Softmax),
            other => Err(Error::Config(format!("unknown scoring {other:?}"))),
        }
    }
}

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

fn default_ridge() -> f64 {
    MdsConfig::default().ridge_scale
}

fn default_k() -> usize {
    DEFAULT_K
}

/// A method and its hyperparameters.
///
/// In JSON either a bare name (`"stage3"`) or an object with a `name` field
/// and optional hyperparameters (`{"name": "knn", "k": 10}`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum MethodSpec {
    Stage1,
    Stage2,
    Stage3,
    /// Per-class k-means with k taken from the Stage-3 prototype counts.
    Kmeans,
    Converged {
        #[serde(default = "default_max_iters")]
        max_iters: usize,
    },
    Mds {
        #[serde(default = "default_ridge")]
        ridge_scale: f64,
    },
    Knn {
        #[serde(default = "default_k")]
        k: usize,
    },
    Msp {
        #[serde(default)]
        head: HeadConfig,
    },
    Energy {
        #[serde(default)]
        head: HeadConfig,
    },
    Mls {
        #[serde(default)]
        head: HeadConfig,
    },
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Stage1 => "stage1",
            MethodSpec::Stage2 => "stage2",
            MethodSpec::Stage3 => "stage3",
            MethodSpec::Kmeans => "kmeans",
            MethodSpec::Converged { .. } => "converged",
            MethodSpec::Mds { .. } => "mds",
            MethodSpec::Knn { .. } => "knn",
            MethodSpec::Msp { .. } => "msp",
            MethodSpec::Energy { .. } => "energy",
            MethodSpec::Mls { .. } => "mls",
        }
    }

    /// Report label: the name, plus any hyperparameter that differs from its
    /// default.
    pub fn label(&self) -> String {
        match self {
            MethodSpec::Converged { max_iters } if *max_iters != DEFAULT_MAX_ITERS => {
                format!("converged(max_iters={max_iters})")
            }
            MethodSpec::Mds { ridge_scale } if *ridge_scale != default_ridge() => {
                format!("mds(ridge_scale={ridge_scale})")
            }
            MethodSpec::Knn { k } if *k != DEFAULT_K => format!("knn(k={k})"),
            MethodSpec::Msp { head } | MethodSpec::Energy { head } | MethodSpec::Mls { head }
                if *head != HeadConfig::default() =>
            {
                format!(
                    "{}(lr={},l2={},iters={})",
                    self.name(),
                    head.learning_rate,
                    head.l2,
                    head.iterations
                )
            }
            _ => self.name().to_string(),
        }
    }

    pub fn is_prototype(&self) -> bool {
        matches!(
            self,
            MethodSpec::Stage1 | MethodSpec::Stage2 | MethodSpec::Stage3 | MethodSpec::Kmeans | MethodSpec::Converged { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MethodSpec::Knn { k: 0 } => Err(Error::BadK("k must be at least 1".into())),
            MethodSpec::Converged { max_iters: 0 } => Err(Error::Config("max_iters must be at least 1".into())),
            MethodSpec::Mds { ridge_scale } if !(*ridge_scale >= 0.0 && ridge_scale.is_finite()) => {
                Err(Error::Config(format!("ridge_scale must be finite and >= 0, got {ridge_scale}")))
            }
            MethodSpec::Msp { head } | MethodSpec::Energy { head } | MethodSpec::Mls { head }
                if !(head.learning_rate > 0.0 && head.l2 >= 0.0) =>
            {
                Err(Error::Config("head needs learning_rate > 0 and l2 >= 0".into()))
            }
            _ => Ok(()),
        }
    }

    /// Fits on normalized, labeled training data. `seed` only affects
    /// k-means seeding.
    pub fn fit(&self, train: &EmbeddingSet, metric: DistanceMetric, seed: u64) -> Result<FittedModel> {
        self.validate()?;
        let stage3 = || -> Result<PrototypeBank> {
            let bank1 = fit_stage1(train, metric)?;
            let (bank2, assign2) = fit_stage2(train, &bank1)?;
            Ok(fit_stage3(train, &bank2, &assign2)?.0)
        };
        let model = match self {
            MethodSpec::Stage1 => FittedModel::Prototypes {
                bank: fit_stage1(train, metric)?,
            },
            MethodSpec::Stage2 => FittedModel::Prototypes {
                bank: fit_stage2(train, &fit_stage1(train, metric)?)?.0,
            },
            MethodSpec::Stage3 => FittedModel::Prototypes { bank: stage3()? },
            MethodSpec::Kmeans => {
                let k = stage3()?.counts_per_class();
                FittedModel::Prototypes {
                    bank: fit_kmeans(train, &k, seed, metric)?,
                }
            }
            MethodSpec::Converged { max_iters } => {
                let bank2 = fit_stage2(train, &fit_stage1(train, metric)?)?.0;
                FittedModel::Prototypes {
                    bank: fit_converged(train, &bank2, *max_iters)?.bank,
                }
            }
            MethodSpec::Mds { ridge_scale } => FittedModel::Gaussian {
                gaussian: mds_fit(
                    train,
                    MdsConfig {
                        ridge_scale: *ridge_scale,
                    },
                )?,
            },
            MethodSpec::Knn { k } => FittedModel::Knn {
                knn: KnnModel::new(train, *k)?,
            },
            MethodSpec::Msp { head } => FittedModel::head(train, *head, LogitMethod::Msp)?,
            MethodSpec::Energy { head } => FittedModel::head(train, *head, LogitMethod::Energy)?,
            MethodSpec::Mls { head } => FittedModel::head(train, *head, LogitMethod::Mls)?,
        };
        Ok(model)
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for MethodSpec {
    type Err = Error;

    /// Bare method names with default hyperparameters.
    fn from_str(s: &str) -> Result<Self> {
        let spec = match s.to_ascii_lowercase().as_str() {
            "stage1" => MethodSpec::Stage1,
            "stage2" => MethodSpec::Stage2,
            "stage3" | "sprod" => MethodSpec::Stage3,
            "kmeans" => MethodSpec::Kmeans,
            "converged" => MethodSpec::Converged {
                max_iters: DEFAULT_MAX_ITERS,
            },
            "mds" => MethodSpec::Mds {
                ridge_scale: default_ridge(),
            },
            "knn" => MethodSpec::Knn { k: DEFAULT_K },
            "msp" => MethodSpec::Msp {
                head: HeadConfig::default(),
            },
            "energy" => MethodSpec::Energy {
                head: HeadConfig::default(),
            },
            "mls" => MethodSpec::Mls {
                head: HeadConfig::default(),
            },
            other => return Err(Error::Config(format!("unknown method {other:?}"))),
        };
        Ok(spec)
    }
}

/// Accepts either a bare name or the tagged object form.
pub(crate) fn deserialize_methods<'de, D>(deserializer: D) -> std::result::Result<Vec<MethodSpec>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Name(String),
        Full(MethodSpec),
    }
    Vec::<Repr>::deserialize(deserializer)?
        .into_iter()
        .map(|r| match r {
            Repr::Name(name) => name.parse().map_err(serde::de::Error::custom),
            Repr::Full(spec) => Ok(spec),
        })
        .collect()
}

/// Output of fitting any method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum FittedModel {
    Prototypes { bank: PrototypeBank },
    Gaussian { gaussian: GaussianModel },
    Knn { knn: KnnModel },
    Head { head: LinearHead, method: LogitMethod },
}

impl FittedModel {
    fn head(train: &EmbeddingSet, config: HeadConfig, method: LogitMethod) -> Result<Self> {
        Ok(FittedModel::Head {
            head: head_train(train, config)?,
            method,
        })
    }

    /// Larger means more in-distribution. `scoring` and `temperature` only
    /// apply to prototype banks.
    pub fn score(&self, query: &EmbeddingSet, scoring: Scoring, temperature: f64) -> Result<ScoreVector> {
        match self {
            FittedModel::Prototypes { bank } => match scoring {
                Scoring::Distance => score_distance(bank, query),
                Scoring::Softmax => score_softmax(bank, query, temperature),
            },
            FittedModel::Gaussian { gaussian } => mds_score(gaussian, query),
            FittedModel::Knn { knn } => knn.score(query),
            FittedModel::Head { head, method } => logit_scores(head, query, *method),
        }
    }

    /// Predicted classes, or `None` for KNN, which has no classifier.
    pub fn predict(&self, query: &EmbeddingSet) -> Result<Option<Vec<u32>>> {
        match self {
            FittedModel::Prototypes { bank } => classify(bank, query).map(Some),
            FittedModel::Gaussian { gaussian } => {
                query.require_dim(gaussian.dim())?;
                Ok(Some(query.iter_rows().map(|z| gaussian.nearest_class(z).0).collect()))
            }
            FittedModel::Knn { .. } => Ok(None),
            FittedModel::Head { head, .. } => head.predict(query).map(Some),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
