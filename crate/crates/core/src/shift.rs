//! Emotion-shift component: polarity bookkeeping, shift labels, the Siamese
//! shift network and its standalone pretraining.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split_train_val, Corpus, Modality, Utterance};
use crate::error::{Error, Result};
use crate::graph::{Bound, Graph, Var};
use crate::metrics::{classification_report, ClassMetrics};
use crate::optim::{AdamConfig, OptimState};
use crate::tensor::{ParamId, ParamStore, Precision, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

/// Label name to polarity.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolarityMap(BTreeMap<String, Polarity>);

impl PolarityMap {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, Polarity)>) -> Self {
        PolarityMap(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }

    pub fn polarity(&self, label: &str) -> Result<Polarity> {
        self.0
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnmappedLabel(label.to_string()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Scores `>= 0` are positive, `< 0` negative.
pub fn sentiment_polarity(score: f64) -> Polarity {
    if score >= 0.0 {
        Polarity::Positive
    } else {
        Polarity::Negative
    }
}

/// True for a positive/negative flip in either direction; neutral never shifts.
pub fn is_shift(prev: Polarity, cur: Polarity) -> bool {
    matches!(
        (prev, cur),
        (Polarity::Positive, Polarity::Negative) | (Polarity::Negative, Polarity::Positive)
    )
}

pub fn shift_labels_from_polarities(pols: &[Polarity]) -> Vec<bool> {
    pols.windows(2).map(|w| is_shift(w[0], w[1])).collect()
}

/// Shift labels for the `n - 1` consecutive pairs of a label sequence.
pub fn derive_shift_labels<S: AsRef<str>>(labels: &[S], pm: &PolarityMap) -> Result<Vec<bool>> {
    if labels.is_empty() {
        return Err(Error::Empty("label sequence".into()));
    }
    let pols = labels
        .iter()
        .map(|l| pm.polarity(l.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(shift_labels_from_polarities(&pols))
}

/// Which utterance features feed the shift network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShiftInput {
    #[default]
    Text,
    /// Early fusion `l ⊕ a ⊕ v`.
    Trimodal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    #[default]
    Tanh,
    /// No nonlinearity: the network collapses to one affine score of `z`.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftNetConfig {
    /// Length of one utterance's input vector.
    pub input_dim: usize,
    pub hidden: usize,
    pub activation: HiddenActivation,
    pub input: ShiftInput,
}

impl ShiftNetConfig {
    /// Width 1 selects the identity activation, i.e. a single linear score.
    pub fn for_corpus(corpus: &Corpus, hidden: usize, input: ShiftInput) -> Self {
        let d = corpus.dims;
        let input_dim = match input {
            ShiftInput::Text => d.text,
            ShiftInput::Trimodal => d.text + d.audio + d.video,
        };
        ShiftNetConfig {
            input_dim,
            hidden,
            activation: if hidden == 1 {
                HiddenActivation::Identity
            } else {
                HiddenActivation::Tanh
            },
            input,
        }
    }
}

/// Siamese shift network: `z = l_prev ⊕ l_cur ⊕ |l_cur - l_prev|`,
/// `H = tanh(W1 z + b1)`, `p_inertia = σ(w2·H + b2)`, `p_shift = 1 - p_inertia`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftNet {
    pub config: ShiftNetConfig,
    pub store: ParamStore,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct ShiftOutput {
    pub p_shift: Var,
    pub p_inertia: Var,
}

impl ShiftNet {
    pub fn new<R: Rng>(config: ShiftNetConfig, rng: &mut R) -> Result<Self> {
        if config.hidden == 0 || config.input_dim == 0 {
            return Err(Error::Invalid(
                "shift network needs positive input and hidden dims".into(),
            ));
        }
        let (d, h) = (config.input_dim, config.hidden);
        let b_in = 1.0 / ((3 * d) as f64).sqrt();
        let b_out = 1.0 / (h as f64).sqrt();
        let mut store = ParamStore::new();
        let w1 = store.insert_uniform("shift.w1", vec![h, 3 * d], b_in, rng)?;
        let b1 = store.insert_uniform("shift.b1", vec![h], b_in, rng)?;
        let w2 = store.insert_uniform("shift.w2", vec![h], b_out, rng)?;
        let b2 = store.insert_uniform("shift.b2", vec![1], b_out, rng)?;
        Ok(ShiftNet {
            config,
            store,
            w1,
            b1,
            w2,
            b2,
        })
    }

    /// Input vector of one utterance.
    pub fn input_features(&self, u: &Utterance) -> Vec<f64> {
        match self.config.input {
            ShiftInput::Text => u.text_features.clone(),
            ShiftInput::Trimodal => Modality::ALL
                .iter()
                .flat_map(|&m| u.features(m).iter().copied())
                .collect(),
        }
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        prev: Var,
        cur: Var,
    ) -> Result<ShiftOutput> {
        for v in [prev, cur] {
            if g.shape(v) != [self.config.input_dim] {
                return Err(Error::shape(
                    "shift_probability",
                    format!(
                        "expected [{}], got {:?}",
                        self.config.input_dim,
                        g.shape(v)
                    ),
                ));
            }
        }
        let diff = g.abs_diff(cur, prev)?;
        let z = g.concat(&[prev, cur, diff])?;
        let pre = g.matvec(b[self.w1], z)?;
        let pre = g.add(pre, b[self.b1])?;
        let hidden = match self.config.activation {
            HiddenActivation::Identity => pre,
            HiddenActivation::Tanh => g.tanh(pre)?,
        };
        let score = g.dot(b[self.w2], hidden)?;
        let score = g.add(score, b[self.b2])?;
        let p_inertia = g.sigmoid(score)?;
        let p_shift = g.one_minus(p_inertia)?;
        Ok(ShiftOutput { p_shift, p_inertia })
    }

    /// `(p_shift, p_inertia)` for one pair of input vectors.
    pub fn shift_probability(&self, prev: &[f64], cur: &[f64]) -> Result<(f64, f64)> {
        let mut g = Graph::<f64>::new();
        let b = g.bind(&self.store, false);
        let pv = g.constant(prev)?;
        let cv = g.constant(cur)?;
        let out = self.forward(&mut g, &b, pv, cv)?;
        Ok((g.scalar_value(out.p_shift), g.scalar_value(out.p_inertia)))
    }

    pub fn shift_probability_utterances(&self, prev: &Utterance, cur: &Utterance) -> Result<f64> {
        self.shift_probability(&self.input_features(prev), &self.input_features(cur))
            .map(|(p, _)| p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub val_fraction: f64,
    #[serde(skip)]
    pub precision: Precision,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            batch_size: 8,
            epochs: 5,
            seed: 42,
            adam: AdamConfig::default(),
            val_fraction: 0.8,
            precision: Precision::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_shift_f1: f64,
    pub val_weighted_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub best_epoch: usize,
    pub accuracy: f64,
    /// F1 of the shift class on the validation pairs.
    pub shift_f1: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub history: Vec<PretrainEpoch>,
}

#[derive(Debug, Clone)]
struct Pair {
    prev: Vec<f64>,
    cur: Vec<f64>,
    shift: bool,
}

fn collect_pairs(net: &ShiftNet, corpus: &Corpus) -> Result<Vec<Pair>> {
    let mut pairs = Vec::new();
    for conv in &corpus.conversations {
        let labels = corpus.shift_labels(conv)?;
        for (w, &shift) in conv.utterances.windows(2).zip(&labels) {
            pairs.push(Pair {
                prev: net.input_features(&w[0]),
                cur: net.input_features(&w[1]),
                shift,
            });
        }
    }
    Ok(pairs)
}

fn batch_step<T: Real>(net: &ShiftNet, batch: &[&Pair]) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::<T>::new();
    let b = g.bind(&net.store, true);
    let mut losses = Vec::with_capacity(batch.len());
    for p in batch {
        let prev = g.constant(&p.prev)?;
        let cur = g.constant(&p.cur)?;
        let out = net.forward(&mut g, &b, prev, cur)?;
        losses.push(g.bce(out.p_shift, p.shift)?);
    }
    let total = g.sum(&losses)?;
    let mean = g.scale(total, 1.0 / batch.len() as f64)?;
    g.backward(mean)?;
    Ok((g.scalar_value(mean), b.grads(&g)))
}

fn predict_pairs(net: &ShiftNet, pairs: &[Pair]) -> Result<Vec<usize>> {
    pairs
        .iter()
        .map(|p| {
            net.shift_probability(&p.prev, &p.cur)
                .map(|(ps, _)| (ps >= 0.5) as usize)
        })
        .collect()
}

/// Trains the shift network on its own BCE loss and keeps the epoch with
/// the best validation shift-class F1.
pub fn pretrain(
    mut net: ShiftNet,
    corpus: &Corpus,
    cfg: &PretrainConfig,
) -> Result<(ShiftNet, PretrainReport, OptimState)> {
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Invalid("batch size and epochs must be positive".into()));
    }
    let all_pairs = collect_pairs(&net, corpus)?;
    if all_pairs.is_empty() {
        return Err(Error::NoPairs);
    }
    let (train, val) = if corpus.conversations.len() >= 2 {
        let (tr, va) = split_train_val(corpus, cfg.val_fraction, cfg.seed)?;
        (collect_pairs(&net, &tr)?, collect_pairs(&net, &va)?)
    } else {
        (all_pairs.clone(), all_pairs)
    };
    if train.is_empty() {
        return Err(Error::NoPairs);
    }
    let val = if val.is_empty() { train.clone() } else { val };
    let truth: Vec<usize> = val.iter().map(|p| p.shift as usize).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = OptimState::new(cfg.adam, &net.store);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(ShiftNet, OptimState, usize, crate::metrics::MetricsReport)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Pair> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = match cfg.precision {
                Precision::F64 => batch_step::<f64>(&net, &batch)?,
                Precision::F32 => batch_step::<f32>(&net, &batch)?,
            };
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("pretraining loss at epoch {epoch}")));
            }
            opt.adam_step(&mut net.store, &grads)?;
            loss_sum += loss;
            n_batches += 1;
        }
        let pred = predict_pairs(&net, &val)?;
        let report = classification_report(&truth, &pred, 2)?;
        let shift_f1 = report.per_class[1].f1;
        log::info!(
            "pretrain epoch {epoch}: loss {:.5} val acc {:.4} shift F1 {:.4}",
            loss_sum / n_batches as f64,
            report.accuracy,
            shift_f1
        );
        history.push(PretrainEpoch {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            val_accuracy: report.accuracy,
            val_shift_f1: shift_f1,
            val_weighted_f1: report.weighted_f1,
        });
        if best
            .as_ref()
            .is_none_or(|(_, _, _, b)| shift_f1 > b.per_class[1].f1)
        {
            best = Some((net.clone(), opt.clone(), epoch, report));
        }
    }
    let (best_net, best_opt, best_epoch, report) = best.expect("at least one epoch");
    Ok((
        best_net,
        PretrainReport {
            best_epoch,
            accuracy: report.accuracy,
            shift_f1: report.per_class[1].f1,
            weighted_f1: report.weighted_f1,
            per_class: report.per_class,
            train_pairs: train.len(),
            val_pairs: val.len(),
            history,
        },
        best_opt,
    ))
}
