//! Run manifests: flat `key = value` files.
//!
//! Blank lines and text after `#` are ignored. Unknown and repeated keys are
//! errors, and every missing required key is reported at once. Relative paths
//! resolve against the manifest's directory. [`RunConfig::render`] writes every
//! key with defaults filled in, so the rendered file reproduces the run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::corpus::{read_dataset, read_dataset_with_schema, stratified_split, DatasetFormat, SplitSpec};
use crate::error::{Error, Result};
use crate::selection::DistributionSource;
use crate::trainer::{Experiment, PromotionMode, TrainConfig};

/// Keys that must appear in every manifest.
pub const REQUIRED_KEYS: [&str; 2] = ["train_file", "test_file"];

/// Every accepted key with a one-line description, in rendering order.
pub const KEYS: &[(&str, &str)] = &[
    ("train_file", "labeled training data; dev, labeled and unlabeled parts are split from it"),
    ("test_file", "held-out evaluation data"),
    ("dev_file", "optional separate dev data; when set, nothing is carved from train_file for dev"),
    ("labeled_fraction", "share of the non-dev training data kept labeled"),
    ("unlabeled_fraction", "share of the non-dev training data whose labels are withheld"),
    ("dev_fraction", "share of training data carved out as dev first"),
    ("seed", "governs the split and every model; --seed overrides it"),
    ("word_dim", "word embedding width"),
    ("position_dim", "position embedding width"),
    ("hidden_dim", "encoder output width"),
    ("max_distance", "position distances are clipped to this magnitude"),
    ("predictor_learning_rate", "SGD step size of the prediction module"),
    ("predictor_batch_size", "mini-batch size of the prediction module"),
    ("predictor_epochs", "maximum epochs per fit of the prediction module"),
    ("predictor_patience", "epochs without dev improvement before a fit stops; 0 disables"),
    ("retriever_learning_rate", "SGD step size of the retrieval module"),
    ("retriever_batch_size", "mini-batch size of the retrieval module"),
    ("retriever_epochs", "maximum epochs per fit of the retrieval module"),
    ("retriever_patience", "epochs without dev improvement before a fit stops; 0 disables"),
    ("retriever_dropout", "accepted for compatibility; the encoder has no dropout"),
    ("negatives", "sampled negatives per positive in the pointwise loss, or auto"),
    ("promotion", "equal or weighted"),
    ("alpha", "exponent on the predictor confidence weighting promoted examples"),
    ("beta", "exponent on the retriever relevance weighting promoted examples"),
    ("k", "instances promoted per iteration, or auto for 10% of the unlabeled pool"),
    ("iterations_cap", "maximum selection iterations"),
    ("convergence_patience", "iterations without dev improvement before the loop stops; 0 disables"),
    ("expansion_factor", "growth factor of the candidate bound while the intersection is short"),
    ("max_expansions", "maximum growth steps of the candidate bound"),
    ("distribution", "reference label distribution: true, top-k, top-2k ... top-7k"),
    ("second_seed", "seed of the ensemble's second predictor, or auto"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train_file: PathBuf,
    pub test_file: PathBuf,
    pub dev_file: Option<PathBuf>,
    pub labeled_fraction: f64,
    pub unlabeled_fraction: f64,
    pub dev_fraction: f64,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn new(train_file: impl Into<PathBuf>, test_file: impl Into<PathBuf>) -> Self {
        RunConfig {
            train_file: train_file.into(),
            test_file: test_file.into(),
            dev_file: None,
            labeled_fraction: 0.1,
            unlabeled_fraction: 0.5,
            dev_fraction: 0.1,
            train: TrainConfig::default(),
        }
    }

    /// Parses manifest text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.iter().any(|(k, _)| *k == key) {
                return Err(Error::Config(format!("line {}: unknown key {key:?}", n + 1)));
            }
            if pairs.iter().any(|(k, _)| k == key) {
                return Err(Error::Config(format!("line {}: key {key:?} repeated", n + 1)));
            }
            pairs.push((key.to_owned(), value.to_owned()));
        }
        let missing: Vec<String> = REQUIRED_KEYS
            .iter()
            .filter(|r| !pairs.iter().any(|(k, _)| k == *r))
            .map(|r| r.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingConfigKeys(missing));
        }
        let mut config = RunConfig::new(PathBuf::new(), PathBuf::new());
        for (key, value) in &pairs {
            config.set(key, value)?;
        }
        for p in [Some(&mut config.train_file), Some(&mut config.test_file), config.dev_file.as_mut()]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "train_file" => self.train_file = PathBuf::from(value),
            "test_file" => self.test_file = PathBuf::from(value),
            "dev_file" => self.dev_file = (!value.is_empty()).then(|| PathBuf::from(value)),
            "labeled_fraction" => self.labeled_fraction = parse(key, value)?,
            "unlabeled_fraction" => self.unlabeled_fraction = parse(key, value)?,
            "dev_fraction" => self.dev_fraction = parse(key, value)?,
            _ => set_train_key(&mut self.train, key, value)?,
        }
        Ok(())
    }

    /// Every key, defaults filled, with absolute paths.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (key, doc) in KEYS {
            let value = match *key {
                "train_file" => absolute(&self.train_file),
                "test_file" => absolute(&self.test_file),
                "dev_file" => self.dev_file.as_deref().map(absolute).unwrap_or_default(),
                "labeled_fraction" => self.labeled_fraction.to_string(),
                "unlabeled_fraction" => self.unlabeled_fraction.to_string(),
                "dev_fraction" => self.dev_fraction.to_string(),
                _ => train_key_value(&self.train, key).expect("every listed key renders"),
            };
            writeln!(out, "# {doc}\n{key} = {value}").expect("write to String");
        }
        out
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            labeled_fraction: self.labeled_fraction,
            unlabeled_fraction: self.unlabeled_fraction,
            dev_fraction: if self.dev_file.is_some() { 0.0 } else { self.dev_fraction },
            seed: self.train.seed,
        }
    }

    /// Reads the data files and splits the training file.
    pub fn load_experiment(&self) -> Result<Experiment> {
        let (schema, data) = read_dataset(&self.train_file, DatasetFormat::from_path(&self.train_file))?;
        let split = stratified_split(&data, schema.len(), &self.split_spec())?;
        let dev = match &self.dev_file {
            Some(p) => read_dataset_with_schema(p, DatasetFormat::from_path(p), &schema)?,
            None => split.dev,
        };
        let test = read_dataset_with_schema(&self.test_file, DatasetFormat::from_path(&self.test_file), &schema)?;
        Ok(Experiment {
            schema,
            labeled: split.labeled,
            unlabeled: split.unlabeled,
            dev,
            test,
            truth: Some(split.truth),
        })
    }
}

fn absolute(p: &Path) -> String {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_auto<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn auto<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| "auto".into())
}

/// Sets a model or loop hyperparameter; the keys a grid may vary.
pub fn set_train_key(c: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "seed" => c.seed = parse(key, value)?,
        "word_dim" => c.word_dim = parse(key, value)?,
        "position_dim" => c.position_dim = parse(key, value)?,
        "hidden_dim" => c.hidden_dim = parse(key, value)?,
        "max_distance" => c.max_distance = parse(key, value)?,
        "predictor_learning_rate" => c.predictor.learning_rate = parse(key, value)?,
        "predictor_batch_size" => c.predictor.batch_size = parse(key, value)?,
        "predictor_epochs" => c.predictor.epochs = parse(key, value)?,
        "predictor_patience" => c.predictor.patience = parse(key, value)?,
        "retriever_learning_rate" => c.retriever.learning_rate = parse(key, value)?,
        "retriever_batch_size" => c.retriever.batch_size = parse(key, value)?,
        "retriever_epochs" => c.retriever.epochs = parse(key, value)?,
        "retriever_patience" => c.retriever.patience = parse(key, value)?,
        "retriever_dropout" => c.retriever_dropout = parse(key, value)?,
        "negatives" => c.negatives = parse_auto(key, value)?,
        "promotion" => c.promotion = PromotionMode::from_str(value)?,
        "alpha" => c.alpha = parse(key, value)?,
        "beta" => c.beta = parse(key, value)?,
        "k" => c.k = parse_auto(key, value)?,
        "iterations_cap" => c.iterations_cap = parse(key, value)?,
        "convergence_patience" => c.convergence_patience = parse(key, value)?,
        "expansion_factor" => c.expansion_factor = parse(key, value)?,
        "max_expansions" => c.max_expansions = parse(key, value)?,
        "distribution" => c.distribution = DistributionSource::from_str(value)?,
        "second_seed" => c.second_seed = parse_auto(key, value)?,
        _ => return Err(Error::Config(format!("unknown key {key:?}"))),
    }
    Ok(())
}

/// Textual value of a hyperparameter key, as [`set_train_key`] reads it.
pub fn train_key_value(c: &TrainConfig, key: &str) -> Option<String> {
    Some(match key {
        "seed" => c.seed.to_string(),
        "word_dim" => c.word_dim.to_string(),
        "position_dim" => c.position_dim.to_string(),
        "hidden_dim" => c.hidden_dim.to_string(),
        "max_distance" => c.max_distance.to_string(),
        "predictor_learning_rate" => c.predictor.learning_rate.to_string(),
        "predictor_batch_size" => c.predictor.batch_size.to_string(),
        "predictor_epochs" => c.predictor.epochs.to_string(),
        "predictor_patience" => c.predictor.patience.to_string(),
        "retriever_learning_rate" => c.retriever.learning_rate.to_string(),
        "retriever_batch_size" => c.retriever.batch_size.to_string(),
        "retriever_epochs" => c.retriever.epochs.to_string(),
        "retriever_patience" => c.retriever.patience.to_string(),
        "retriever_dropout" => c.retriever_dropout.to_string(),
        "negatives" => auto(c.negatives),
        "promotion" => c.promotion.to_string(),
        "alpha" => c.alpha.to_string(),
        "beta" => c.beta.to_string(),
        "k" => auto(c.k),
        "iterations_cap" => c.iterations_cap.to_string(),
        "convergence_patience" => c.convergence_patience.to_string(),
        "expansion_factor" => c.expansion_factor.to_string(),
        "max_expansions" => c.max_expansions.to_string(),
        "distribution" => c.distribution.to_string(),
        "second_seed" => auto(c.second_seed),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_manifest_takes_defaults() {
        let c = RunConfig::parse("train_file = a.tsv\ntest_file = /data/b.tsv # held out\n", Path::new("/runs")).unwrap();
        assert_eq!(c.train_file, Path::new("/runs/a.tsv"));
        assert_eq!(c.test_file, Path::new("/data/b.tsv"));
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.labeled_fraction, 0.1);
    }

    #[test]
    fn all_missing_keys_reported_together() {
        match RunConfig::parse("# nothing\nalpha = 1\n", Path::new(".")) {
            Err(Error::MissingConfigKeys(keys)) => assert_eq!(keys, vec!["train_file", "test_file"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_repeated_and_malformed_lines_are_errors() {
        let base = "train_file = a\ntest_file = b\n";
        for extra in ["learning_rate = 1", "alpha = 1\nalpha = 2", "alpha", "alpha = x", "k = 0.5", "promotion = some"] {
            let text = format!("{base}{extra}\n");
            assert!(RunConfig::parse(&text, Path::new(".")).is_err(), "{extra}");
        }
    }

    #[test]
    fn rendered_manifest_parses_back_to_the_same_config() {
        let text = "train_file = a.tsv\ntest_file = b.json\ndev_file = d.tsv\nalpha = 0.5\nk = 7\n\
                    distribution = top-3k\npromotion = equal\nnegatives = 4\nseed = 11\npredictor_learning_rate = 0.25\n";
        let c = RunConfig::parse(text, Path::new("/x")).unwrap();
        assert_eq!(c.train.k, Some(7));
        assert_eq!(c.train.distribution, DistributionSource::TopNk(3));
        let rendered = c.render();
        for (key, _) in KEYS {
            assert!(rendered.contains(&format!("\n{key} = ")), "{key}");
        }
        assert_eq!(RunConfig::parse(&rendered, Path::new("/elsewhere")).unwrap(), c);
    }

    #[test]
    fn every_train_key_round_trips() {
        let c = TrainConfig::default();
        for (key, _) in KEYS.iter().skip(6) {
            let v = train_key_value(&c, key).unwrap();
            let mut d = c.clone();
            set_train_key(&mut d, key, &v).unwrap();
            assert_eq!(d, c, "{key}");
        }
    }
}
