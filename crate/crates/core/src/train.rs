//! Joint training of the dialogue model and the shift network, and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split_train_val, Conversation, Corpus, Target, Task};
use crate::error::{Error, Result};
use crate::graph::{Bound, Graph, Var};
use crate::metrics::{argmax, classification_report, MetricsReport, ShiftSubsetReport};
use crate::model::{forward_conversation, ArcModel, ConversationTrace, ForwardOptions, ShiftMode};
use crate::optim::{AdamConfig, OptimState};
use crate::shift::{is_shift, Polarity, ShiftNet};
use crate::tensor::{Precision, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Conversations per batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Weight of the shift BCE term in the joint loss.
    pub lambda: f64,
    /// Keep the shift network's weights fixed.
    pub freeze_shift: bool,
    pub adam: AdamConfig,
    /// Fraction of conversations used for training. At 1.0 (or with a
    /// single conversation) validation runs on the training set.
    pub val_fraction: f64,
    pub target: Target,
    #[serde(skip)]
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 50,
            seed: 42,
            lambda: 1.0,
            freeze_shift: false,
            adam: AdamConfig::default(),
            val_fraction: 0.8,
            target: Target::Class,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be at least 1".into()));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Invalid(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction <= 1.0) {
            return Err(Error::Invalid(format!(
                "train fraction {} not in (0, 1]",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean joint loss per conversation.
    pub train_loss: f64,
    /// Accuracy of the predictions made during the epoch's forward passes.
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub val_weighted_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: ShiftMode,
    pub target: Target,
    pub best_epoch: usize,
    pub best_val_weighted_f1: f64,
    pub train_conversations: usize,
    pub val_conversations: usize,
    pub history: Vec<EpochRecord>,
    /// Validation metrics of the returned parameters.
    pub validation: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ArcModel,
    pub shift: Option<ShiftNet>,
    pub model_optim: OptimState,
    pub shift_optim: Option<OptimState>,
    pub report: TrainReport,
}

/// `Σ_t CE(o_t, y_t) + λ Σ_{t≥2} BCE(p_shift_t, shift_t)` for one conversation.
///
/// The BCE term is skipped when `lambda` is zero or the model has no shift path.
#[allow(clippy::too_many_arguments)]
pub fn joint_loss<T: Real>(
    g: &mut Graph<T>,
    model: &ArcModel,
    mb: &Bound,
    shift: Option<(&ShiftNet, &Bound)>,
    conv: &Conversation,
    targets: &[usize],
    shift_labels: Option<&[bool]>,
    lambda: f64,
) -> Result<(Var, ConversationTrace)> {
    if targets.len() != conv.utterances.len() {
        return Err(Error::shape(
            "joint_loss",
            format!("{} targets for {} utterances", targets.len(), conv.utterances.len()),
        ));
    }
    let trace = forward_conversation(g, model, mb, shift, conv, &ForwardOptions::default())?;
    let mut terms = Vec::with_capacity(2 * targets.len());
    for (&p, &y) in trace.probs.iter().zip(targets) {
        terms.push(g.cross_entropy(p, y)?);
    }
    if lambda > 0.0 {
        if let Some(labels) = shift_labels {
            for (ps, &y) in trace.shift_probs.iter().skip(1).zip(labels) {
                if let Some(ps) = ps {
                    let bce = g.bce(*ps, y)?;
                    terms.push(g.scale(bce, lambda)?);
                }
            }
        }
    }
    let loss = g.sum(&terms)?;
    Ok((loss, trace))
}

struct Prepared<'a> {
    conv: &'a Conversation,
    targets: Vec<usize>,
    shift_labels: Option<Vec<bool>>,
}

struct BatchResult {
    loss: f64,
    model_grads: Vec<Vec<f64>>,
    shift_grads: Option<Vec<Vec<f64>>>,
    correct: usize,
    total: usize,
}

fn add_into(acc: &mut [Vec<f64>], g: &[Vec<f64>]) {
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

fn scale_all(acc: &mut [Vec<f64>], s: f64) {
    for a in acc {
        for x in a {
            *x *= s;
        }
    }
}

/// Gradients summed over conversations in batch order, then divided by the
/// batch size.
fn batch_gradients<T: Real>(
    model: &ArcModel,
    shift: Option<&ShiftNet>,
    shift_trainable: bool,
    batch: &[&Prepared],
    lambda: f64,
) -> Result<BatchResult> {
    let mut model_grads: Vec<Vec<f64>> = model.store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
    let mut shift_grads: Option<Vec<Vec<f64>>> = shift
        .filter(|_| shift_trainable)
        .map(|s| s.store.iter().map(|(_, t)| vec![0.0; t.len()]).collect());
    let mut loss_sum = 0.0;
    let (mut correct, mut total) = (0, 0);
    for item in batch {
        let mut g = Graph::<T>::new();
        let mb = g.bind(&model.store, true);
        let sb = shift.map(|s| g.bind(&s.store, shift_trainable));
        let sh = shift.zip(sb.as_ref());
        let (loss, trace) = joint_loss(
            &mut g,
            model,
            &mb,
            sh,
            item.conv,
            &item.targets,
            item.shift_labels.as_deref(),
            lambda,
        )?;
        let lv = g.scalar_value(loss);
        if !lv.is_finite() {
            return Err(Error::NonFinite(format!("loss on conversation {}", item.conv.id)));
        }
        g.backward(loss)?;
        add_into(&mut model_grads, &mb.grads(&g));
        if let (Some(acc), Some(sb)) = (shift_grads.as_mut(), sb.as_ref()) {
            add_into(acc, &sb.grads(&g));
        }
        loss_sum += lv;
        for (&p, &y) in trace.probs.iter().zip(&item.targets) {
            correct += (argmax(&g.value_f64(p)) == y) as usize;
            total += 1;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    scale_all(&mut model_grads, inv);
    if let Some(acc) = shift_grads.as_mut() {
        scale_all(acc, inv);
    }
    Ok(BatchResult {
        loss: loss_sum,
        model_grads,
        shift_grads,
        correct,
        total,
    })
}

fn check_compatible(model: &ArcModel, shift: Option<&ShiftNet>, corpus: &Corpus, target: Target) -> Result<()> {
    let cfg = &model.config;
    for &m in &cfg.modalities {
        if cfg.dims.get(m) != corpus.dims.get(m) {
            return Err(Error::Invalid(format!(
                "model expects {} {m} dims, corpus has {}",
                cfg.dims.get(m),
                corpus.dims.get(m)
            )));
        }
    }
    let k = corpus.num_classes(target);
    if cfg.n_classes != k {
        return Err(Error::Invalid(format!(
            "model has {} classes, target needs {k}",
            cfg.n_classes
        )));
    }
    if let Target::Binary(j) = target {
        if j >= corpus.label_set.len() {
            return Err(Error::Invalid(format!("label index {j} outside the label set")));
        }
    }
    if cfg.mode == ShiftMode::WithShift {
        let net = shift.ok_or_else(|| Error::Invalid("with_shift mode needs a shift network".into()))?;
        let want = net.config.input_dim;
        let have = net.input_features(&corpus.conversations[0].utterances[0]).len();
        if want != have {
            return Err(Error::Invalid(format!(
                "shift network expects {want} input dims, corpus gives {have}"
            )));
        }
    }
    Ok(())
}

/// Trains for `cfg.epochs` epochs and returns the parameters with the best
/// validation weighted F1. Ties keep the earlier epoch.
pub fn train(
    mut model: ArcModel,
    mut shift: Option<ShiftNet>,
    corpus: &Corpus,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.conversations.is_empty() || corpus.num_utterances() == 0 {
        return Err(Error::Empty("training corpus has no utterances".into()));
    }
    if model.config.mode == ShiftMode::WithoutShift {
        shift = None;
    }
    check_compatible(&model, shift.as_ref(), corpus, cfg.target)?;

    let (train_set, val_set) = if corpus.conversations.len() >= 2 && cfg.val_fraction < 1.0 {
        split_train_val(corpus, cfg.val_fraction, cfg.seed)?
    } else {
        (corpus.clone(), corpus.clone())
    };
    let shift_trainable = shift.is_some() && !cfg.freeze_shift;
    let need_labels = shift_trainable && cfg.lambda > 0.0;
    let prepared: Vec<Prepared> = train_set
        .conversations
        .iter()
        .map(|conv| {
            Ok(Prepared {
                conv,
                targets: train_set.targets(conv, cfg.target)?,
                shift_labels: if need_labels {
                    Some(train_set.shift_labels(conv)?)
                } else {
                    None
                },
            })
        })
        .collect::<Result<_>>()?;

    let mut model_optim = OptimState::new(cfg.adam, &model.store);
    let mut shift_optim = shift.as_ref().filter(|_| shift_trainable).map(|s| OptimState::new(cfg.adam, &s.store));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(TrainOutcome, f64)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut total) = (0.0, 0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &prepared[i]).collect();
            let res = match cfg.precision {
                Precision::F64 => {
                    batch_gradients::<f64>(&model, shift.as_ref(), shift_trainable, &batch, cfg.lambda)?
                }
                Precision::F32 => {
                    batch_gradients::<f32>(&model, shift.as_ref(), shift_trainable, &batch, cfg.lambda)?
                }
            };
            model_optim.adam_step(&mut model.store, &res.model_grads)?;
            if let (Some(opt), Some(net), Some(grads)) =
                (shift_optim.as_mut(), shift.as_mut(), res.shift_grads.as_ref())
            {
                opt.adam_step(&mut net.store, grads)?;
            }
            loss_sum += res.loss;
            correct += res.correct;
            total += res.total;
        }
        let eval = evaluate(&model, shift.as_ref(), &val_set, cfg.target, cfg.precision)?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / prepared.len() as f64,
            train_accuracy: correct as f64 / total as f64,
            val_accuracy: eval.report.accuracy,
            val_weighted_f1: eval.report.weighted_f1,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} train acc {:.4} val acc {:.4} val wF1 {:.4}",
            rec.train_loss,
            rec.train_accuracy,
            rec.val_accuracy,
            rec.val_weighted_f1
        );
        let f1 = rec.val_weighted_f1;
        history.push(rec);
        if best.as_ref().is_none_or(|(_, b)| f1 > *b) {
            best = Some((
                TrainOutcome {
                    model: model.clone(),
                    shift: shift.clone(),
                    model_optim: model_optim.clone(),
                    shift_optim: shift_optim.clone(),
                    report: TrainReport {
                        mode: model.config.mode,
                        target: cfg.target,
                        best_epoch: epoch,
                        best_val_weighted_f1: f1,
                        train_conversations: train_set.conversations.len(),
                        val_conversations: val_set.conversations.len(),
                        history: Vec::new(),
                        validation: eval.report,
                    },
                },
                f1,
            ));
        }
    }
    let (mut out, _) = best.expect("at least one epoch");
    out.report.history = history;
    Ok(out)
}

/// One per-utterance prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub conversation_id: String,
    /// 1-based position within the conversation.
    pub t: usize,
    pub truth: usize,
    pub pred: usize,
    pub p_shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub predictions: Vec<PredictionRow>,
}

fn forward_probs<T: Real>(
    model: &ArcModel,
    shift: Option<&ShiftNet>,
    conv: &Conversation,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut g = Graph::<T>::new();
    let mb = g.bind(&model.store, false);
    let sb = shift.map(|s| g.bind(&s.store, false));
    let tr = forward_conversation(&mut g, model, &mb, shift.zip(sb.as_ref()), conv, &ForwardOptions::default())?;
    let probs = tr.probs.iter().map(|&p| g.value_f64(p)).collect();
    Ok((probs, tr.gates.iter().map(|r| r.p_shift).collect()))
}

/// Accuracy on utterances that follow a polarity flip, split by direction.
/// `None` when the corpus cannot assign polarities.
fn shift_subsets(corpus: &Corpus, rows: &[PredictionRow]) -> Option<ShiftSubsetReport> {
    let mut out = ShiftSubsetReport::default();
    let (mut pn_ok, mut np_ok) = (0usize, 0usize);
    let mut i = 0;
    for conv in &corpus.conversations {
        let pols = match corpus.polarities(conv) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("no shift subsets: {e}");
                return None;
            }
        };
        for t in 1..pols.len() {
            if !is_shift(pols[t - 1], pols[t]) {
                continue;
            }
            let ok = rows[i + t].truth == rows[i + t].pred;
            if pols[t - 1] == Polarity::Positive {
                out.pos_to_neg_count += 1;
                pn_ok += ok as usize;
            } else {
                out.neg_to_pos_count += 1;
                np_ok += ok as usize;
            }
        }
        i += pols.len();
    }
    let rate = |ok: usize, n: usize| (n > 0).then(|| ok as f64 / n as f64);
    out.pos_to_neg_accuracy = rate(pn_ok, out.pos_to_neg_count);
    out.neg_to_pos_accuracy = rate(np_ok, out.neg_to_pos_count);
    Some(out)
}

/// Predicts every utterance of `corpus` and scores the predictions.
pub fn evaluate(
    model: &ArcModel,
    shift: Option<&ShiftNet>,
    corpus: &Corpus,
    target: Target,
    precision: Precision,
) -> Result<Evaluation> {
    if corpus.num_utterances() == 0 {
        return Err(Error::Empty("evaluation corpus has no utterances".into()));
    }
    let shift = shift.filter(|_| model.config.mode == ShiftMode::WithShift);
    check_compatible(model, shift, corpus, target)?;
    let mut rows = Vec::with_capacity(corpus.num_utterances());
    for conv in &corpus.conversations {
        let truth = corpus.targets(conv, target)?;
        let (probs, gates) = match precision {
            Precision::F64 => forward_probs::<f64>(model, shift, conv)?,
            Precision::F32 => forward_probs::<f32>(model, shift, conv)?,
        };
        for (t, ((p, y), ps)) in probs.iter().zip(truth).zip(gates).enumerate() {
            rows.push(PredictionRow {
                conversation_id: conv.id.clone(),
                t: t + 1,
                truth: y,
                pred: argmax(p),
                p_shift: ps,
            });
        }
    }
    let truth: Vec<usize> = rows.iter().map(|r| r.truth).collect();
    let pred: Vec<usize> = rows.iter().map(|r| r.pred).collect();
    let mut report = classification_report(&truth, &pred, model.config.n_classes)?;
    report.shift = shift_subsets(corpus, &rows);
    Ok(Evaluation {
        report,
        predictions: rows,
    })
}

/// Targets a model is trained on for `corpus`: one per label for
/// multilabel corpora, otherwise the corpus task itself.
pub fn training_targets(corpus: &Corpus) -> Vec<Target> {
    match corpus.task {
        Task::EmotionMultilabel => (0..corpus.label_set.len()).map(Target::Binary).collect(),
        _ => vec![Target::Class],
    }
}
