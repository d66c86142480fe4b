//! Flat `key = value` experiment configuration.
//!
//! One entry per line, `#` starts a comment, lists are comma-separated.
//! Unknown or repeated keys are rejected so typos cannot silently fall back
//! to defaults.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::BlobParams;
use crate::error::{Error, Result};
use crate::losses::{AlsConfig, AlsStrategy, LsConfig};
use crate::scores::{ScoreFn, ScorerConfig, DEFAULT_GEN_GAMMA, DEFAULT_REACT_PERCENTILE};

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Blobs {
        params: BlobParams,
        /// First `train_per_class` samples of each class train, the rest test.
        train_per_class: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossRegime {
    CrossEntropy,
    LabelSmoothing(LsConfig),
    Adaptive(AlsConfig),
}

impl LossRegime {
    pub fn name(&self) -> &'static str {
        match self {
            LossRegime::CrossEntropy => "ce",
            LossRegime::LabelSmoothing(_) => "ls",
            LossRegime::Adaptive(_) => "als",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub hidden_dims: Vec<usize>,
    pub loss: LossRegime,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: DataSource,
    pub train: TrainSettings,
    pub n_known: usize,
    pub seeds: Vec<u64>,
    pub score_fns: Vec<ScoreFn>,
    pub scorer: ScorerConfig,
    pub out_dir: PathBuf,
}

const KEYS: &[&str] = &[
    "name",
    "dataset",
    "blobs.classes",
    "blobs.dims",
    "blobs.train_per_class",
    "blobs.test_per_class",
    "blobs.separation",
    "blobs.noise",
    "blobs.seed",
    "idx.train_images",
    "idx.train_labels",
    "idx.test_images",
    "idx.test_labels",
    "hidden",
    "loss",
    "alpha",
    "lambda",
    "strategy",
    "ramp_epochs",
    "epochs",
    "batch_size",
    "lr0",
    "lr_min",
    "momentum",
    "weight_decay",
    "n_known",
    "seeds",
    "scores",
    "gen_gamma",
    "react_percentile",
    "vim_dim",
    "out_dir",
];

struct Entries {
    map: HashMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Config {
                    line,
                    reason: format!("expected `key = value`, got {content:?}"),
                });
            };
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(Error::Config {
                    line,
                    reason: format!("unknown key {key:?}"),
                });
            }
            if let Some((prev, _)) = map.insert(key.to_string(), (line, value.trim().to_string())) {
                return Err(Error::Config {
                    line,
                    reason: format!("duplicate key {key:?} (first set on line {prev})"),
                });
            }
        }
        Ok(Entries { map })
    }

    fn line(&self, key: &str) -> usize {
        self.map.get(key).map_or(0, |(l, _)| *l)
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|(_, v)| v.as_str())
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.raw(key).ok_or_else(|| Error::Config {
            line: 0,
            reason: format!("missing required key {key:?}"),
        })
    }

    fn parse_value<T: FromStr>(&self, key: &str, value: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        value.parse().map_err(|e: T::Err| Error::Config {
            line: self.line(key),
            reason: format!("bad value {value:?} for {key}: {e}"),
        })
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            Some(v) => self.parse_value(key, v),
            None => Ok(default),
        }
    }

    fn need<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.required(key)?;
        self.parse_value(key, v)
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| self.parse_value(key, s))
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    fn invalid(&self, key: &str, reason: impl Into<String>) -> Error {
        Error::Config {
            line: self.line(key),
            reason: reason.into(),
        }
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = PathBuf::from(p);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    /// Parses config text. Relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let e = Entries::parse(text)?;

        let data = match e.get("dataset", "blobs".to_string())?.as_str() {
            "blobs" => {
                let train_per_class: usize = e.get("blobs.train_per_class", 200)?;
                let test_per_class: usize = e.get("blobs.test_per_class", 100)?;
                let params = BlobParams {
                    classes: e.get("blobs.classes", 10)?,
                    dims: e.get("blobs.dims", 16)?,
                    n_per_class: train_per_class + test_per_class,
                    separation: e.get("blobs.separation", 6.0)?,
                    noise: e.get("blobs.noise", 1.0)?,
                    seed: e.get("blobs.seed", 0)?,
                };
                if params.classes < 2 || params.dims < 2 {
                    return Err(e.invalid("blobs.classes", "blobs need >= 2 classes and >= 2 dims"));
                }
                if !(params.noise >= 0.0 && params.separation.is_finite()) {
                    return Err(e.invalid("blobs.noise", "noise must be >= 0 and separation finite"));
                }
                if train_per_class == 0 || test_per_class == 0 {
                    return Err(e.invalid("blobs.train_per_class", "per-class sample counts must be >= 1"));
                }
                DataSource::Blobs {
                    params,
                    train_per_class,
                }
            }
            "idx" => DataSource::Idx {
                train_images: resolve(base_dir, e.required("idx.train_images")?),
                train_labels: resolve(base_dir, e.required("idx.train_labels")?),
                test_images: resolve(base_dir, e.required("idx.test_images")?),
                test_labels: resolve(base_dir, e.required("idx.test_labels")?),
            },
            other => return Err(e.invalid("dataset", format!("unknown dataset {other:?} (blobs or idx)"))),
        };

        let loss = match e.get("loss", "ce".to_string())?.as_str() {
            "ce" => LossRegime::CrossEntropy,
            "ls" => LossRegime::LabelSmoothing(
                LsConfig::new(e.need("alpha")?).map_err(|err| e.invalid("alpha", err.to_string()))?,
            ),
            "als" => {
                let strategy: AlsStrategy = e.get("strategy", AlsStrategy::OnlyCorr)?;
                let cfg = AlsConfig::new(e.need("lambda")?, strategy, e.get("ramp_epochs", 0)?)
                    .map_err(|err| e.invalid("lambda", err.to_string()))?;
                LossRegime::Adaptive(cfg)
            }
            other => return Err(e.invalid("loss", format!("unknown loss {other:?} (ce, ls or als)"))),
        };

        let train = TrainSettings {
            hidden_dims: e.list("hidden")?.unwrap_or_else(|| vec![64, 64]),
            loss,
            epochs: e.get("epochs", 100)?,
            batch_size: e.get("batch_size", 64)?,
            lr0: e.get("lr0", 0.1)?,
            lr_min: e.get("lr_min", 0.0)?,
            momentum: e.get("momentum", 0.0)?,
            weight_decay: e.get("weight_decay", 0.0)?,
        };
        if train.hidden_dims.contains(&0) {
            return Err(e.invalid("hidden", "hidden widths must be >= 1"));
        }
        if train.batch_size == 0 {
            return Err(e.invalid("batch_size", "batch_size must be >= 1"));
        }
        if !(train.lr0 >= train.lr_min && train.lr_min >= 0.0) {
            return Err(e.invalid("lr0", "need lr0 >= lr_min >= 0"));
        }
        if !(0.0..1.0).contains(&train.momentum) || !(train.weight_decay >= 0.0) {
            return Err(e.invalid("momentum", "need 0 <= momentum < 1 and weight_decay >= 0"));
        }

        let seeds: Vec<u64> = e.list("seeds")?.unwrap_or_else(|| vec![0]);
        if seeds.is_empty() {
            return Err(e.invalid("seeds", "seeds list must be nonempty"));
        }
        let score_fns = e.list("scores")?.unwrap_or_else(|| ScoreFn::ALL.to_vec());
        if score_fns.is_empty() {
            return Err(e.invalid("scores", "scores list must be nonempty"));
        }

        let scorer = ScorerConfig {
            gamma: e.get("gen_gamma", DEFAULT_GEN_GAMMA)?,
            react_percentile: e.get("react_percentile", DEFAULT_REACT_PERCENTILE)?,
            vim_dim: e.raw("vim_dim").map(|v| e.parse_value("vim_dim", v)).transpose()?,
        };
        if !(scorer.gamma > 0.0 && scorer.gamma < 1.0) {
            return Err(e.invalid("gen_gamma", "gen_gamma must be in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&scorer.react_percentile) {
            return Err(e.invalid("react_percentile", "react_percentile must be in [0, 1]"));
        }

        let n_known: usize = e.need("n_known")?;
        if let DataSource::Blobs { params, .. } = &data {
            if n_known == 0 || n_known >= params.classes {
                return Err(e.invalid("n_known", format!("need 1 <= n_known < {}", params.classes)));
            }
        }

        Ok(ExperimentConfig {
            name: e.get("name", "experiment".to_string())?,
            data,
            train,
            n_known,
            seeds,
            score_fns,
            scorer,
            out_dir: resolve(base_dir, &e.get("out_dir", "out".to_string())?),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        ExperimentConfig::parse(&text, base)
    }
}
