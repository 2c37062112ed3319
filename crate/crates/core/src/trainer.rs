//! The alternating training loop and its baselines.
//!
//! Each iteration selects a batch from the unlabeled pool, promotes it with
//! frozen weights, then retrains the predictor (weights `p^α`) and the
//! retriever (weights `q^β`) on the labeled plus promoted data.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    CorpusState, IndexedMention, LabeledExample, Promotion, RelationMention, RelationSchema,
    SealedTruth, Vocabulary,
};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::evaluation::{score, selection_precision, IterationRecord, ScoreReport};
use crate::predictor::{PredictorModel, WeightedExample};
use crate::retriever::{sample_pairs, Negatives, RetrieverModel};
use crate::selection::{
    select_ensemble, select_joint, select_single, top_nk_distribution, true_distribution,
    DistributionSource, PromotedBatch, ReferenceDistribution, SelectionConfig,
    DEFAULT_EXPANSION_FACTOR, DEFAULT_MAX_EXPANSIONS,
};

const STREAM_PREDICTOR_INIT: u64 = 1;
const STREAM_PREDICTOR_SHUFFLE: u64 = 2;
const STREAM_RETRIEVER_INIT: u64 = 3;
const STREAM_RETRIEVER_SHUFFLE: u64 = 4;

/// Share of the initial pool promoted per iteration when `k` is unset.
pub const DEFAULT_K_FRACTION: f64 = 0.1;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    DualRe,
    DualRePairwise,
    SelfTraining,
    Ensemble,
    Gold,
    Supervised,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::DualRe,
        Method::DualRePairwise,
        Method::SelfTraining,
        Method::Ensemble,
        Method::Gold,
        Method::Supervised,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::DualRe => "dualre",
            Method::DualRePairwise => "dualre-pairwise",
            Method::SelfTraining => "self",
            Method::Ensemble => "ensemble",
            Method::Gold => "gold",
            Method::Supervised => "supervised",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromotionMode {
    Equal,
    Weighted,
}

impl FromStr for PromotionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" => Ok(PromotionMode::Equal),
            "weighted" => Ok(PromotionMode::Weighted),
            _ => Err(Error::Config(format!("unknown promotion mode {s:?}"))),
        }
    }
}

impl fmt::Display for PromotionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromotionMode::Equal => "equal",
            PromotionMode::Weighted => "weighted",
        })
    }
}

/// Mini-batch SGD with early stopping on dev F1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without dev improvement before stopping; 0 disables early stopping.
    pub patience: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 0.5,
            batch_size: 32,
            epochs: 30,
            patience: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub word_dim: usize,
    pub position_dim: usize,
    pub hidden_dim: usize,
    pub max_distance: usize,
    pub predictor: OptimConfig,
    pub retriever: OptimConfig,
    pub promotion: PromotionMode,
    pub alpha: f64,
    pub beta: f64,
    /// Instances promoted per iteration; `None` means 10% of the initial pool.
    pub k: Option<usize>,
    pub iterations_cap: usize,
    pub expansion_factor: f64,
    pub max_expansions: usize,
    pub distribution: DistributionSource,
    /// Sampled negatives per positive in the pointwise loss; `None` picks by schema size.
    pub negatives: Option<usize>,
    /// Iterations without dev improvement before the loop stops; 0 disables the test.
    pub convergence_patience: usize,
    /// Accepted for configuration compatibility; the encoder has no dropout.
    pub retriever_dropout: f64,
    pub seed: u64,
    /// Seed of the ensemble's second predictor; `None` derives one from `seed`.
    pub second_seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            word_dim: 50,
            position_dim: 10,
            hidden_dim: 64,
            max_distance: 30,
            predictor: OptimConfig::default(),
            retriever: OptimConfig::default(),
            promotion: PromotionMode::Weighted,
            alpha: 0.0,
            beta: 0.0,
            k: None,
            iterations_cap: 10,
            expansion_factor: DEFAULT_EXPANSION_FACTOR,
            max_expansions: DEFAULT_MAX_EXPANSIONS,
            distribution: DistributionSource::True,
            negatives: None,
            convergence_patience: 2,
            retriever_dropout: 0.0,
            seed: 0,
            second_seed: None,
        }
    }
}

impl TrainConfig {
    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            word_dim: self.word_dim,
            position_dim: self.position_dim,
            hidden_dim: self.hidden_dim,
            max_distance: self.max_distance,
        }
    }

    pub fn second_predictor_seed(&self) -> u64 {
        self.second_seed
            .unwrap_or_else(|| self.seed.wrapping_add(0x9E37_79B9_7F4A_7C15))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, o) in [("predictor", &self.predictor), ("retriever", &self.retriever)] {
            if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) || o.batch_size == 0 {
                return Err(Error::Config(format!(
                    "{name} optimizer needs a positive learning rate and batch size"
                )));
            }
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        if self.k == Some(0) {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.expansion_factor.is_nan() || self.expansion_factor <= 1.0 {
            return Err(Error::Config("expansion_factor must exceed 1".into()));
        }
        Ok(())
    }

    fn weight(&self, score: f64, exponent: f64) -> f64 {
        match self.promotion {
            PromotionMode::Equal => 1.0,
            PromotionMode::Weighted => score.powf(exponent),
        }
    }
}

/// Everything a run consumes: the split and the held-out evaluation data.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub schema: RelationSchema,
    pub labeled: Vec<LabeledExample>,
    pub unlabeled: Vec<RelationMention>,
    pub dev: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    /// True labels of `unlabeled`; needed by the gold bound and precision tracking.
    pub truth: Option<SealedTruth>,
}

impl Experiment {
    /// Vocabulary over the training-side text: labeled, unlabeled and dev.
    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::build(
            self.labeled
                .iter()
                .map(|e| &e.mention)
                .chain(&self.unlabeled)
                .chain(self.dev.iter().map(|e| &e.mention)),
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub method: Method,
    pub vocabulary: Vocabulary,
    pub predictor: PredictorModel,
    pub retriever: Option<RetrieverModel>,
    pub second_predictor: Option<PredictorModel>,
    pub records: Vec<IterationRecord>,
    pub state: CorpusState,
}

/// Indexed labeled data with per-example weights.
struct TrainSet {
    mentions: Vec<IndexedMention>,
    labels: Vec<usize>,
    weights: Vec<f64>,
}

impl TrainSet {
    fn examples(&self) -> Vec<WeightedExample<'_>> {
        self.mentions
            .iter()
            .zip(&self.labels)
            .zip(&self.weights)
            .map(|((mention, &label), &weight)| WeightedExample {
                mention,
                label,
                weight,
            })
            .collect()
    }
}

struct Evaluator {
    mentions: Vec<IndexedMention>,
    labels: Vec<usize>,
    no_relation: usize,
}

impl Evaluator {
    fn new(vocab: &Vocabulary, data: &[LabeledExample], no_relation: usize) -> Self {
        Evaluator {
            mentions: data.iter().map(|e| vocab.index(&e.mention)).collect(),
            labels: data.iter().map(|e| e.label).collect(),
            no_relation,
        }
    }

    fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn predictor(&self, m: &PredictorModel) -> Result<ScoreReport> {
        score(&self.labels, &m.predict_labels(&self.mentions)?, self.no_relation)
    }

    fn retriever(&self, m: &RetrieverModel) -> Result<ScoreReport> {
        score(&self.labels, &m.predict_labels(&self.mentions)?, self.no_relation)
    }
}

type DevScore<'a, M> = &'a dyn Fn(&M) -> Result<f64>;

/// Runs `epoch` up to `optim.epochs` times. With a dev set, keeps the latest
/// epoch with the best dev F1 (the starting point is not a candidate) and
/// stops after `patience` epochs without strict improvement.
fn fit<M: Clone>(
    model: &mut M,
    optim: &OptimConfig,
    mut epoch: impl FnMut(&mut M) -> Result<()>,
    dev_f1: Option<DevScore<'_, M>>,
) -> Result<()> {
    let mut best: Option<(f64, M)> = None;
    let mut stale = 0;
    for _ in 0..optim.epochs {
        epoch(model)?;
        let Some(dev_f1) = dev_f1 else { continue };
        let f1 = dev_f1(model)?;
        let improved = best.as_ref().is_none_or(|(b, _)| f1 > *b);
        // a tie keeps the later, longer-trained parameters
        if best.as_ref().is_none_or(|(b, _)| f1 >= *b) {
            best = Some((f1, model.clone()));
        }
        if improved {
            stale = 0;
        } else {
            stale += 1;
            if optim.patience > 0 && stale >= optim.patience {
                break;
            }
        }
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    Ok(())
}

fn shuffled_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn fit_predictor(
    model: &mut PredictorModel,
    data: &TrainSet,
    dev: &Evaluator,
    optim: &OptimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let examples = data.examples();
    let epoch = |m: &mut PredictorModel| -> Result<()> {
        for batch in shuffled_batches(examples.len(), optim.batch_size, rng) {
            let chunk: Vec<WeightedExample> = batch.iter().map(|&i| examples[i]).collect();
            match m.nll_loss_and_grad(&chunk) {
                Ok((_, g)) => m.sgd_step(&g, optim.learning_rate)?,
                Err(Error::ZeroWeight) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(())
    };
    let f1 = |m: &PredictorModel| Ok(dev.predictor(m)?.f1);
    fit(model, optim, epoch, (!dev.is_empty()).then_some(&f1 as DevScore<PredictorModel>))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RetrieverLoss {
    Pointwise(Negatives),
    Pairwise,
}

fn fit_retriever(
    model: &mut RetrieverModel,
    data: &TrainSet,
    dev: &Evaluator,
    optim: &OptimConfig,
    loss: RetrieverLoss,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let examples = data.examples();
    let epoch = |m: &mut RetrieverModel| -> Result<()> {
        match loss {
            RetrieverLoss::Pointwise(negatives) => {
                for batch in shuffled_batches(examples.len(), optim.batch_size, rng) {
                    let chunk: Vec<WeightedExample> = batch.iter().map(|&i| examples[i]).collect();
                    match m.pointwise_loss_and_grad(&chunk, negatives, rng) {
                        Ok((_, g)) => m.sgd_step(&g, optim.learning_rate)?,
                        Err(Error::ZeroWeight) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
            RetrieverLoss::Pairwise => {
                let pairs = sample_pairs(&examples, rng);
                for batch in shuffled_batches(pairs.len(), optim.batch_size, rng) {
                    let chunk: Vec<_> = batch.iter().map(|&i| pairs[i]).collect();
                    match m.pairwise_loss_and_grad(&chunk) {
                        Ok((_, g)) => m.sgd_step(&g, optim.learning_rate)?,
                        Err(Error::ZeroWeight) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        Ok(())
    };
    let f1 = |m: &RetrieverModel| Ok(dev.retriever(m)?.f1);
    fit(model, optim, epoch, (!dev.is_empty()).then_some(&f1 as DevScore<RetrieverModel>))
}

/// Shared state of one run.
struct Run<'a> {
    config: &'a TrainConfig,
    experiment: &'a Experiment,
    vocab: Vocabulary,
    encoder: EncoderConfig,
    dev: Evaluator,
    test: Evaluator,
    state: CorpusState,
    /// Indexed unlabeled mentions by id.
    pool_index: HashMap<String, IndexedMention>,
    k: usize,
}

/// Which weight of a pseudo-example applies to a module.
#[derive(Clone, Copy)]
enum Side {
    P,
    Q,
}

impl<'a> Run<'a> {
    fn new(experiment: &'a Experiment, config: &'a TrainConfig) -> Result<Self> {
        config.validate()?;
        if experiment.labeled.is_empty() {
            return Err(Error::EmptyLabeled);
        }
        let vocab = experiment.vocabulary();
        let no_relation = experiment.schema.no_relation_index();
        let state = CorpusState::new(
            experiment.schema.clone(),
            experiment.labeled.clone(),
            experiment.unlabeled.clone(),
        )?;
        let pool_index = experiment
            .unlabeled
            .iter()
            .map(|m| (m.id.clone(), vocab.index(m)))
            .collect();
        let k = config.k.unwrap_or_else(|| {
            ((experiment.unlabeled.len() as f64 * DEFAULT_K_FRACTION).round() as usize).max(1)
        });
        Ok(Run {
            config,
            experiment,
            encoder: config.encoder_config(vocab.len()),
            dev: Evaluator::new(&vocab, &experiment.dev, no_relation),
            test: Evaluator::new(&vocab, &experiment.test, no_relation),
            vocab,
            state,
            pool_index,
            k,
        })
    }

    fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            k: self.k,
            expansion_factor: self.config.expansion_factor,
            max_expansions: self.config.max_expansions,
        }
    }

    /// L with weight 1 plus L_U with its frozen weight for `side`.
    fn train_set(&self, side: Side) -> TrainSet {
        let mut set = TrainSet {
            mentions: Vec::new(),
            labels: Vec::new(),
            weights: Vec::new(),
        };
        for e in self.state.labeled() {
            set.mentions.push(self.vocab.index(&e.mention));
            set.labels.push(e.label);
            set.weights.push(1.0);
        }
        for p in self.state.pseudo() {
            set.mentions.push(self.pool_index[p.example.id()].clone());
            set.labels.push(p.example.label);
            set.weights.push(match side {
                Side::P => p.weight_p,
                Side::Q => p.weight_q,
            });
        }
        set
    }

    fn pool(&self) -> Vec<IndexedMention> {
        self.state
            .unlabeled()
            .iter()
            .map(|m| self.pool_index[&m.id].clone())
            .collect()
    }

    fn new_predictor(&self, seed: u64) -> Result<PredictorModel> {
        PredictorModel::random(
            &self.encoder,
            self.experiment.schema.len(),
            &mut stream(seed, STREAM_PREDICTOR_INIT),
        )
    }

    fn new_retriever(&self) -> Result<RetrieverModel> {
        RetrieverModel::random(
            &self.encoder,
            self.experiment.schema.len(),
            &mut stream(self.config.seed, STREAM_RETRIEVER_INIT),
        )
    }

    fn reference_distribution(&self, predictor: &PredictorModel, pool: &[IndexedMention]) -> Result<ReferenceDistribution> {
        let num_labels = self.experiment.schema.len();
        match self.config.distribution {
            DistributionSource::True => {
                let labels: Vec<usize> = self.state.labeled().iter().map(|e| e.label).collect();
                true_distribution(&labels, num_labels)
            }
            DistributionSource::TopNk(n) => {
                let ranked = predictor.rank_unlabeled_by_confidence(pool)?;
                top_nk_distribution(&ranked, n, self.k, num_labels)
            }
        }
    }

    fn promote(&mut self, batch: &PromotedBatch) -> Result<Option<f64>> {
        let precision = match &self.experiment.truth {
            Some(t) => selection_precision(batch, t)?,
            None => None,
        };
        let promotions: Vec<Promotion> = batch
            .items
            .iter()
            .map(|i| Promotion {
                id: i.id.clone(),
                label: i.label,
                weight_p: self.config.weight(i.p_confidence, self.config.alpha),
                weight_q: self.config.weight(i.q_score, self.config.beta),
            })
            .collect();
        self.state.promote(&promotions)?;
        Ok(precision)
    }

    fn record(&self, iteration: usize, sel_precision: Option<f64>, predictor: &PredictorModel) -> Result<IterationRecord> {
        Ok(IterationRecord {
            iteration,
            n_pseudo: self.state.pseudo().len(),
            sel_precision,
            dev: self.dev.predictor(predictor)?,
            test: self.test.predictor(predictor)?,
        })
    }

    fn retriever_loss(&self, pairwise: bool) -> RetrieverLoss {
        if pairwise {
            RetrieverLoss::Pairwise
        } else {
            let n = self.experiment.schema.len();
            RetrieverLoss::Pointwise(match self.config.negatives {
                Some(k) => Negatives::Sample(k),
                None => Negatives::default_for(n),
            })
        }
    }
}

/// Convergence bookkeeping for the outer loop.
struct Convergence {
    best: f64,
    stale: usize,
    patience: usize,
}

impl Convergence {
    fn new(initial: f64, patience: usize) -> Self {
        Convergence {
            best: initial,
            stale: 0,
            patience,
        }
    }

    /// True when the loop should stop after this dev F1.
    fn update(&mut self, f1: f64) -> bool {
        if f1 > self.best {
            self.best = f1;
            self.stale = 0;
            false
        } else {
            self.stale += 1;
            self.patience > 0 && self.stale >= self.patience
        }
    }
}

/// Pretrains on L, then alternates joint selection and retraining of both modules.
pub fn train_dualre(experiment: &Experiment, config: &TrainConfig, pairwise: bool) -> Result<TrainOutcome> {
    let mut run = Run::new(experiment, config)?;
    let mut p_rng = stream(config.seed, STREAM_PREDICTOR_SHUFFLE);
    let mut q_rng = stream(config.seed, STREAM_RETRIEVER_SHUFFLE);
    let loss = run.retriever_loss(pairwise);

    let mut predictor = run.new_predictor(config.seed)?;
    let mut retriever = run.new_retriever()?;
    fit_predictor(&mut predictor, &run.train_set(Side::P), &run.dev, &config.predictor, &mut p_rng)?;
    fit_retriever(&mut retriever, &run.train_set(Side::Q), &run.dev, &config.retriever, loss, &mut q_rng)?;

    let mut records = vec![run.record(0, None, &predictor)?];
    let mut convergence = Convergence::new(records[0].dev.f1, config.convergence_patience);
    for iteration in 1..=config.iterations_cap {
        if run.state.unlabeled().is_empty() {
            break;
        }
        let pool = run.pool();
        let dist = run.reference_distribution(&predictor, &pool)?;
        let batch = select_joint(&predictor, &retriever, &pool, &dist, &run.selection())?;
        if batch.items.is_empty() {
            break;
        }
        let precision = run.promote(&batch)?;
        fit_predictor(&mut predictor, &run.train_set(Side::P), &run.dev, &config.predictor, &mut p_rng)?;
        fit_retriever(&mut retriever, &run.train_set(Side::Q), &run.dev, &config.retriever, loss, &mut q_rng)?;
        let record = run.record(iteration, precision, &predictor)?;
        let stop = convergence.update(record.dev.f1);
        records.push(record);
        if stop {
            break;
        }
    }
    Ok(TrainOutcome {
        method: if pairwise { Method::DualRePairwise } else { Method::DualRe },
        vocabulary: run.vocab,
        predictor,
        retriever: Some(retriever),
        second_predictor: None,
        records,
        state: run.state,
    })
}

/// Self-training: the predictor's own top-k predictions are promoted.
pub fn train_self(experiment: &Experiment, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut run = Run::new(experiment, config)?;
    let mut p_rng = stream(config.seed, STREAM_PREDICTOR_SHUFFLE);
    let mut predictor = run.new_predictor(config.seed)?;
    fit_predictor(&mut predictor, &run.train_set(Side::P), &run.dev, &config.predictor, &mut p_rng)?;

    let mut records = vec![run.record(0, None, &predictor)?];
    let mut convergence = Convergence::new(records[0].dev.f1, config.convergence_patience);
    for iteration in 1..=config.iterations_cap {
        if run.state.unlabeled().is_empty() {
            break;
        }
        let batch = select_single(&predictor, &run.pool(), run.k)?;
        if batch.items.is_empty() {
            break;
        }
        let precision = run.promote(&batch)?;
        fit_predictor(&mut predictor, &run.train_set(Side::P), &run.dev, &config.predictor, &mut p_rng)?;
        let record = run.record(iteration, precision, &predictor)?;
        let stop = convergence.update(record.dev.f1);
        records.push(record);
        if stop {
            break;
        }
    }
    Ok(TrainOutcome {
        method: Method::SelfTraining,
        vocabulary: run.vocab,
        predictor,
        retriever: None,
        second_predictor: None,
        records,
        state: run.state,
    })
}

/// Two independently initialized predictors promote what they agree on.
/// The first predictor is trained with `p^α` weights and is the one evaluated;
/// the second, whose confidence plays the retriever's part, uses `q^β`.
pub fn train_ensemble(experiment: &Experiment, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut run = Run::new(experiment, config)?;
    let second_seed = config.second_predictor_seed();
    let mut rng1 = stream(config.seed, STREAM_PREDICTOR_SHUFFLE);
    let mut rng2 = stream(second_seed, STREAM_PREDICTOR_SHUFFLE);
    let mut first = run.new_predictor(config.seed)?;
    let mut second = run.new_predictor(second_seed)?;
    fit_predictor(&mut first, &run.train_set(Side::P), &run.dev, &config.predictor, &mut rng1)?;
    fit_predictor(&mut second, &run.train_set(Side::Q), &run.dev, &config.predictor, &mut rng2)?;

    let mut records = vec![run.record(0, None, &first)?];
    let mut convergence = Convergence::new(records[0].dev.f1, config.convergence_patience);
    for iteration in 1..=config.iterations_cap {
        if run.state.unlabeled().is_empty() {
            break;
        }
        let batch = select_ensemble(&first, &second, &run.pool(), &run.selection())?;
        if batch.items.is_empty() {
            break;
        }
        let precision = run.promote(&batch)?;
        fit_predictor(&mut first, &run.train_set(Side::P), &run.dev, &config.predictor, &mut rng1)?;
        fit_predictor(&mut second, &run.train_set(Side::Q), &run.dev, &config.predictor, &mut rng2)?;
        let record = run.record(iteration, precision, &first)?;
        let stop = convergence.update(record.dev.f1);
        records.push(record);
        if stop {
            break;
        }
    }
    Ok(TrainOutcome {
        method: Method::Ensemble,
        vocabulary: run.vocab,
        predictor: first,
        retriever: None,
        second_predictor: Some(second),
        records,
        state: run.state,
    })
}

/// Predictor trained on L alone; the shared starting point of every method.
pub fn train_supervised(experiment: &Experiment, config: &TrainConfig) -> Result<TrainOutcome> {
    let run = Run::new(experiment, config)?;
    let mut p_rng = stream(config.seed, STREAM_PREDICTOR_SHUFFLE);
    let mut predictor = run.new_predictor(config.seed)?;
    fit_predictor(&mut predictor, &run.train_set(Side::P), &run.dev, &config.predictor, &mut p_rng)?;
    let records = vec![run.record(0, None, &predictor)?];
    Ok(TrainOutcome {
        method: Method::Supervised,
        vocabulary: run.vocab,
        predictor,
        retriever: None,
        second_predictor: None,
        records,
        state: run.state,
    })
}

/// Upper bound: L plus the true labels of the whole pool, all with weight 1.
pub fn train_gold(experiment: &Experiment, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut run = Run::new(experiment, config)?;
    if !run.state.unlabeled().is_empty() {
        let truth = experiment
            .truth
            .as_ref()
            .ok_or_else(|| Error::MissingGold("no sealed labels for the unlabeled pool".into()))?;
        let promotions = run
            .state
            .unlabeled()
            .iter()
            .map(|m| {
                let label = truth.get(&m.id).ok_or_else(|| Error::MissingGold(m.id.clone()))?;
                Ok(Promotion {
                    id: m.id.clone(),
                    label,
                    weight_p: 1.0,
                    weight_q: 1.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        run.state.promote(&promotions)?;
    }
    let mut p_rng = stream(config.seed, STREAM_PREDICTOR_SHUFFLE);
    let mut predictor = run.new_predictor(config.seed)?;
    fit_predictor(&mut predictor, &run.train_set(Side::P), &run.dev, &config.predictor, &mut p_rng)?;
    let records = vec![run.record(0, None, &predictor)?];
    Ok(TrainOutcome {
        method: Method::Gold,
        vocabulary: run.vocab,
        predictor,
        retriever: None,
        second_predictor: None,
        records,
        state: run.state,
    })
}

/// Pretrains the modules `method` selects with and returns the batch its first
/// iteration would promote.
pub fn first_batch(method: Method, experiment: &Experiment, config: &TrainConfig) -> Result<PromotedBatch> {
    let run = Run::new(experiment, config)?;
    let mut p_rng = stream(config.seed, STREAM_PREDICTOR_SHUFFLE);
    let mut predictor = run.new_predictor(config.seed)?;
    fit_predictor(&mut predictor, &run.train_set(Side::P), &run.dev, &config.predictor, &mut p_rng)?;
    let pool = run.pool();
    match method {
        Method::DualRe | Method::DualRePairwise => {
            let mut q_rng = stream(config.seed, STREAM_RETRIEVER_SHUFFLE);
            let loss = run.retriever_loss(method == Method::DualRePairwise);
            let mut retriever = run.new_retriever()?;
            fit_retriever(&mut retriever, &run.train_set(Side::Q), &run.dev, &config.retriever, loss, &mut q_rng)?;
            let dist = run.reference_distribution(&predictor, &pool)?;
            select_joint(&predictor, &retriever, &pool, &dist, &run.selection())
        }
        Method::SelfTraining => select_single(&predictor, &pool, run.k),
        Method::Ensemble => {
            let second_seed = config.second_predictor_seed();
            let mut rng2 = stream(second_seed, STREAM_PREDICTOR_SHUFFLE);
            let mut second = run.new_predictor(second_seed)?;
            fit_predictor(&mut second, &run.train_set(Side::Q), &run.dev, &config.predictor, &mut rng2)?;
            select_ensemble(&predictor, &second, &pool, &run.selection())
        }
        Method::Gold | Method::Supervised => {
            Err(Error::Config(format!("method {method} has no selection step")))
        }
    }
}

pub fn train(method: Method, experiment: &Experiment, config: &TrainConfig) -> Result<TrainOutcome> {
    match method {
        Method::DualRe => train_dualre(experiment, config, false),
        Method::DualRePairwise => train_dualre(experiment, config, true),
        Method::SelfTraining => train_self(experiment, config),
        Method::Ensemble => train_ensemble(experiment, config),
        Method::Gold => train_gold(experiment, config),
        Method::Supervised => train_supervised(experiment, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, stratified_split, SplitSpec, SyntheticConfig};

    fn experiment(noise: f64, per: usize, seed: u64) -> Experiment {
        let corpus = generate_synthetic(&SyntheticConfig {
            num_relations: 3,
            vocab_size: 120,
            examples_per_relation: per,
            trigger_noise: noise,
            negative_fraction: 0.25,
            seed,
        })
        .unwrap();
        let test = generate_synthetic(&SyntheticConfig {
            num_relations: 3,
            vocab_size: 120,
            examples_per_relation: 30,
            trigger_noise: 0.0,
            negative_fraction: 0.25,
            seed: seed + 1000,
        })
        .unwrap();
        let split = stratified_split(
            &corpus.examples,
            corpus.schema.len(),
            &SplitSpec { labeled_fraction: 0.2, unlabeled_fraction: 0.6, dev_fraction: 0.1, seed },
        )
        .unwrap();
        Experiment {
            schema: corpus.schema,
            labeled: split.labeled,
            unlabeled: split.unlabeled,
            dev: split.dev,
            test: test.examples,
            truth: Some(split.truth),
        }
    }

    fn small_config(seed: u64) -> TrainConfig {
        TrainConfig {
            word_dim: 8,
            position_dim: 3,
            hidden_dim: 8,
            max_distance: 10,
            predictor: OptimConfig { epochs: 8, ..OptimConfig::default() },
            retriever: OptimConfig { epochs: 8, ..OptimConfig::default() },
            iterations_cap: 3,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("mean-teacher".parse::<Method>().is_err());
    }

    #[test]
    fn zero_cap_returns_pretrained_models() {
        let e = experiment(0.0, 20, 1);
        let cfg = TrainConfig { iterations_cap: 0, ..small_config(1) };
        let out = train_dualre(&e, &cfg, false).unwrap();
        assert!(out.state.pseudo().is_empty());
        assert_eq!(out.records.len(), 1);
        let sup = train_supervised(&e, &cfg).unwrap();
        assert_eq!(out.predictor, sup.predictor);
    }

    #[test]
    fn iterations_preserve_the_corpus_invariants() {
        let e = experiment(0.1, 20, 2);
        let cfg = TrainConfig { convergence_patience: 0, promotion: PromotionMode::Weighted, alpha: 1.0, beta: 1.0, ..small_config(2) };
        let out = train_dualre(&e, &cfg, false).unwrap();
        assert_eq!(out.state.labeled(), e.labeled.as_slice());
        assert!(out.state.ids_disjoint());
        assert_eq!(
            out.state.pseudo().len() + out.state.unlabeled().len(),
            e.unlabeled.len()
        );
        let mut last = 0;
        for r in &out.records[1..] {
            assert!(r.n_pseudo > last);
            last = r.n_pseudo;
        }
        for p in out.state.pseudo() {
            assert!(p.weight_p > 0.0 && p.weight_p <= 1.0);
            assert!(p.weight_q > 0.0 && p.weight_q < 1.0);
        }
    }

    #[test]
    fn zero_exponents_match_equal_promotion_bitwise() {
        let e = experiment(0.15, 20, 3);
        let weighted = TrainConfig { promotion: PromotionMode::Weighted, alpha: 0.0, beta: 0.0, ..small_config(3) };
        let equal = TrainConfig { promotion: PromotionMode::Equal, alpha: 2.0, beta: 0.5, ..small_config(3) };
        let a = train_dualre(&e, &weighted, false).unwrap();
        let b = train_dualre(&e, &equal, false).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.predictor, b.predictor);
    }

    #[test]
    fn self_training_consumes_the_pool_in_steps_of_k() {
        let e = experiment(0.0, 20, 4);
        let n = e.unlabeled.len();
        let k = 13;
        let cfg = TrainConfig { k: Some(k), iterations_cap: 100, convergence_patience: 0, ..small_config(4) };
        let out = train_self(&e, &cfg).unwrap();
        assert!(out.state.unlabeled().is_empty());
        assert_eq!(out.records.len() - 1, n.div_ceil(k));
    }

    #[test]
    fn identical_ensemble_seeds_reduce_to_self_training() {
        let e = experiment(0.15, 20, 5);
        let cfg = TrainConfig { promotion: PromotionMode::Equal, second_seed: Some(5), ..small_config(5) };
        let ens = train_ensemble(&e, &cfg).unwrap();
        let st = train_self(&e, &cfg).unwrap();
        assert_eq!(ens.records, st.records);
    }

    #[test]
    fn gold_with_empty_pool_is_supervised() {
        let mut e = experiment(0.0, 20, 6);
        e.unlabeled.clear();
        e.truth = None;
        let cfg = small_config(6);
        let g = train_gold(&e, &cfg).unwrap();
        let s = train_supervised(&e, &cfg).unwrap();
        assert_eq!(g.predictor, s.predictor);
        assert_eq!(g.records, s.records);
    }

    #[test]
    fn gold_requires_sealed_labels() {
        let mut e = experiment(0.0, 20, 7);
        e.truth = None;
        assert!(matches!(train_gold(&e, &small_config(7)), Err(Error::MissingGold(_))));
    }

    #[test]
    fn runs_are_deterministic() {
        let e = experiment(0.15, 20, 8);
        let cfg = TrainConfig { distribution: DistributionSource::TopNk(3), ..small_config(8) };
        for pairwise in [false, true] {
            let a = train_dualre(&e, &cfg, pairwise).unwrap();
            let b = train_dualre(&e, &cfg, pairwise).unwrap();
            assert_eq!(a.records, b.records);
            assert_eq!(a.retriever, b.retriever);
        }
    }
}
