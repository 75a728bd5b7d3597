//! Conversation-level model: per-modality party, context and emotion states,
//! attention over the context history, late fusion and classification.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{arc_step, gru_step_traced, ArcParams, GruParams};
use crate::data::{Conversation, Dims, Modality};
use crate::error::{Error, Result};
use crate::graph::{Bound, Graph, Var};
use crate::shift::ShiftNet;
use crate::tensor::{ParamId, ParamStore, Real};

/// Whether the emotion-state cell is gated by the shift network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    WithShift,
    /// Standard GRU over the party state; its gates are learned from the
    /// classification loss alone.
    WithoutShift,
}

impl ShiftMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ShiftMode::WithShift => "with_shift",
            ShiftMode::WithoutShift => "without_shift",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dims: Dims,
    pub party_dim: usize,
    pub context_dim: usize,
    pub emotion_dim: usize,
    pub n_classes: usize,
    /// Active modalities in canonical `l, a, v` order.
    pub modalities: Vec<Modality>,
    pub mode: ShiftMode,
    /// Bias inside the candidate of the shift-gated cell.
    pub arc_bias: bool,
    /// Let the classification loss reach the shift network through the gate.
    /// When false the gate is a constant for the classification loss.
    pub gate_grad: bool,
}

impl ModelConfig {
    pub fn new(dims: Dims, n_classes: usize) -> Self {
        ModelConfig {
            dims,
            party_dim: 150,
            context_dim: 150,
            emotion_dim: 100,
            n_classes,
            modalities: Modality::ALL.to_vec(),
            mode: ShiftMode::WithShift,
            arc_bias: false,
            gate_grad: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::Invalid("modality set must be nonempty".into()));
        }
        let mut sorted = self.modalities.clone();
        sorted.sort();
        sorted.dedup();
        if sorted != self.modalities {
            return Err(Error::Invalid(
                "modalities must be distinct and in l, a, v order".into(),
            ));
        }
        if self.party_dim == 0 || self.context_dim == 0 || self.emotion_dim == 0 {
            return Err(Error::Invalid("state dims must be positive".into()));
        }
        if self.n_classes == 0 {
            return Err(Error::Invalid("need at least one class".into()));
        }
        for &m in &self.modalities {
            if self.dims.get(m) == 0 {
                return Err(Error::Invalid(format!("modality {m} has zero dims")));
            }
        }
        Ok(())
    }
}

/// Parses a modality list such as `l,a` or `lav`.
pub fn parse_modalities(s: &str) -> Result<Vec<Modality>> {
    let mut out = Vec::new();
    for c in s.chars().filter(|c| !matches!(c, ',' | ' ' | '+')) {
        out.push(match c.to_ascii_lowercase() {
            'l' | 't' => Modality::Text,
            'a' => Modality::Audio,
            'v' => Modality::Video,
            _ => return Err(Error::Invalid(format!("unknown modality {c:?} in {s:?}"))),
        });
    }
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(Error::Invalid("modality set must be nonempty".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmotionCell {
    Arc(ArcParams),
    Gru(GruParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityParams {
    pub modality: Modality,
    pub party: GruParams,
    pub context: GruParams,
    /// `d_m×d_c` attention matrix.
    pub attention: ParamId,
    pub emotion: EmotionCell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairGate {
    pub first: Modality,
    pub second: Modality,
    /// `d_e×2d_e`
    pub w: ParamId,
    pub b: ParamId,
}

/// Gated pairwise fusion. With one active modality there are no gates and
/// `proj` is a `d_e×d_e` projection of that modality's emotion state.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub gates: Vec<PairGate>,
    pub proj: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArcModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub modalities: Vec<ModalityParams>,
    pub fusion: FusionParams,
    /// `d_e×K`; logits are `W_cᵀ e`.
    pub classifier: ParamId,
}

fn fan_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

impl ArcModel {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (ds, dc, de) = (config.party_dim, config.context_dim, config.emotion_dim);
        let mut store = ParamStore::new();
        let mut modalities = Vec::new();
        for &m in &config.modalities {
            let dm = config.dims.get(m);
            let party = GruParams::register(&mut store, &format!("{m}.party"), dm + dc, ds, rng)?;
            let context =
                GruParams::register(&mut store, &format!("{m}.context"), dm + ds, dc, rng)?;
            let attention =
                store.insert_uniform(format!("{m}.attention"), vec![dm, dc], fan_bound(dc), rng)?;
            let emotion = match config.mode {
                ShiftMode::WithShift => EmotionCell::Arc(ArcParams::register(
                    &mut store,
                    &format!("{m}.emotion"),
                    ds,
                    de,
                    config.arc_bias,
                    rng,
                )?),
                ShiftMode::WithoutShift => EmotionCell::Gru(GruParams::register(
                    &mut store,
                    &format!("{m}.emotion"),
                    ds,
                    de,
                    rng,
                )?),
            };
            modalities.push(ModalityParams {
                modality: m,
                party,
                context,
                attention,
                emotion,
            });
        }
        let mut gates = Vec::new();
        let ms = &config.modalities;
        for i in 0..ms.len() {
            for j in i + 1..ms.len() {
                let key = format!("fusion.{}{}", ms[i], ms[j]);
                let bound = fan_bound(2 * de);
                gates.push(PairGate {
                    first: ms[i],
                    second: ms[j],
                    w: store.insert_uniform(format!("{key}.w"), vec![de, 2 * de], bound, rng)?,
                    b: store.insert_uniform(format!("{key}.b"), vec![de], bound, rng)?,
                });
            }
        }
        let fused_in = de * gates.len().max(1);
        let proj = store.insert_uniform("fusion.proj", vec![de, fused_in], fan_bound(fused_in), rng)?;
        let classifier =
            store.insert_uniform("classifier", vec![de, config.n_classes], fan_bound(de), rng)?;
        Ok(ArcModel {
            config,
            store,
            modalities,
            fusion: FusionParams { gates, proj },
            classifier,
        })
    }
}

/// Recurrent state of one conversation, as graph nodes.
#[derive(Debug, Clone, Default)]
pub struct DialogueState {
    /// Speaker to per-modality party states.
    pub party_states: BTreeMap<String, Vec<Var>>,
    /// Per modality, the context state after every processed utterance.
    pub context_history: Vec<Vec<Var>>,
    /// Per modality emotion state.
    pub emotion_states: Vec<Var>,
    pub steps: usize,
}

impl DialogueState {
    pub fn new<T: Real>(g: &mut Graph<T>, model: &ArcModel) -> Result<Self> {
        let n = model.modalities.len();
        let zeros = vec![0.0; model.config.emotion_dim];
        let emotion_states = (0..n)
            .map(|_| g.constant(&zeros))
            .collect::<Result<Vec<_>>>()?;
        Ok(DialogueState {
            party_states: BTreeMap::new(),
            context_history: vec![Vec::new(); n],
            emotion_states,
            steps: 0,
        })
    }
}

/// Attention over previous context states:
/// `α = softmax(m_tᵀ W_α [c_1 … c_{t-1}])`, `x = Σ α_i c_i`.
/// An empty history yields the zero vector and no weights.
pub fn attend<T: Real>(
    g: &mut Graph<T>,
    w_alpha: Var,
    m_t: Var,
    history: &[Var],
    context_dim: usize,
) -> Result<(Var, Option<Var>)> {
    if history.is_empty() {
        return Ok((g.constant(&vec![0.0; context_dim])?, None));
    }
    let query = g.matvec_t(w_alpha, m_t)?;
    let memory = g.stack(history)?;
    if g.shape(memory)[1] != context_dim {
        return Err(Error::shape(
            "attend",
            format!("history vectors of length {} vs {context_dim}", g.shape(memory)[1]),
        ));
    }
    let scores = g.matvec(memory, query)?;
    let alpha = g.softmax(scores)?;
    let x = g.matvec_t(memory, alpha)?;
    Ok((x, Some(alpha)))
}

/// Fuses per-modality emotion states given in the model's modality order.
pub fn fuse<T: Real>(
    g: &mut Graph<T>,
    b: &Bound,
    fp: &FusionParams,
    modalities: &[Modality],
    emotions: &[Var],
) -> Result<Var> {
    if emotions.len() != modalities.len() || emotions.is_empty() {
        return Err(Error::shape(
            "fuse",
            format!("{} states for {} modalities", emotions.len(), modalities.len()),
        ));
    }
    let d = g.shape(emotions[0]).to_vec();
    for &e in emotions {
        if g.shape(e) != d.as_slice() {
            return Err(Error::shape("fuse", format!("{:?} vs {:?}", g.shape(e), d)));
        }
    }
    if fp.gates.is_empty() {
        return g.matvec(b[fp.proj], emotions[0]);
    }
    let find = |m: Modality| modalities.iter().position(|&x| x == m).expect("active modality");
    let mut mixed = Vec::with_capacity(fp.gates.len());
    for pair in &fp.gates {
        let (ei, ej) = (emotions[find(pair.first)], emotions[find(pair.second)]);
        let both = g.concat(&[ei, ej])?;
        let pre = g.matvec(b[pair.w], both)?;
        let pre = g.add(pre, b[pair.b])?;
        let gate = g.sigmoid(pre)?;
        let a = g.mul(gate, ei)?;
        let rest = g.one_minus(gate)?;
        let c = g.mul(rest, ej)?;
        mixed.push(g.add(a, c)?);
    }
    let all = g.concat(&mixed)?;
    g.matvec(b[fp.proj], all)
}

/// `(W_cᵀ e, softmax(W_cᵀ e))`
pub fn classify<T: Real>(g: &mut Graph<T>, w_c: Var, e: Var) -> Result<(Var, Var)> {
    let logits = g.matvec_t(w_c, e)?;
    let probs = g.softmax(logits)?;
    Ok((logits, probs))
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logits: Var,
    pub probs: Var,
    pub fused: Var,
    /// Attention weights per modality; `None` at the first utterance.
    pub attention: Vec<Option<Var>>,
    /// Mean reset-gate activation of a learned emotion GRU.
    pub reset_gate_mean: Option<f64>,
}

/// Processes one utterance. Only `speaker`'s party states change.
///
/// `inputs` holds one feature vector per active modality. `p_shift` is
/// required for the shift-gated cell and ignored otherwise.
pub fn step_utterance<T: Real>(
    g: &mut Graph<T>,
    model: &ArcModel,
    b: &Bound,
    state: &mut DialogueState,
    inputs: &[Var],
    speaker: &str,
    p_shift: Option<Var>,
) -> Result<StepOutput> {
    let cfg = &model.config;
    if inputs.len() != model.modalities.len() {
        return Err(Error::shape(
            "step_utterance",
            format!("{} inputs for {} modalities", inputs.len(), model.modalities.len()),
        ));
    }
    if !state.party_states.contains_key(speaker) {
        let zeros = vec![0.0; cfg.party_dim];
        let init = (0..model.modalities.len())
            .map(|_| g.constant(&zeros))
            .collect::<Result<Vec<_>>>()?;
        state.party_states.insert(speaker.to_string(), init);
    }
    let mut emotions = Vec::with_capacity(inputs.len());
    let mut attention = Vec::with_capacity(inputs.len());
    let mut reset_sum = 0.0;
    let mut reset_n = 0usize;
    for (i, mp) in model.modalities.iter().enumerate() {
        let m_t = inputs[i];
        let (x, alpha) = attend(g, b[mp.attention], m_t, &state.context_history[i], cfg.context_dim)?;
        attention.push(alpha);
        let s_prev = state.party_states[speaker][i];
        let party_in = g.concat(&[m_t, x])?;
        let s = gru_step_traced(g, b, &mp.party, s_prev, party_in)?.h;
        let c_prev = match state.context_history[i].last() {
            Some(&c) => c,
            None => g.constant(&vec![0.0; cfg.context_dim])?,
        };
        let context_in = g.concat(&[m_t, s])?;
        let c = gru_step_traced(g, b, &mp.context, c_prev, context_in)?.h;
        let e_prev = state.emotion_states[i];
        let e = match &mp.emotion {
            EmotionCell::Arc(arc) => {
                let p = p_shift.ok_or_else(|| {
                    Error::Invalid("shift-gated emotion cell needs p_shift".into())
                })?;
                arc_step(g, b, arc, e_prev, s, p)?
            }
            EmotionCell::Gru(gru) => {
                let tr = gru_step_traced(g, b, gru, e_prev, s)?;
                let r = g.value(tr.reset_gate);
                reset_sum += r.iter().map(|v| v.to_f64_lossy()).sum::<f64>();
                reset_n += r.len();
                tr.h
            }
        };
        state
            .party_states
            .get_mut(speaker)
            .expect("inserted above")[i] = s;
        state.context_history[i].push(c);
        state.emotion_states[i] = e;
        emotions.push(e);
    }
    state.steps += 1;
    let fused = fuse(g, b, &model.fusion, &cfg.modalities, &emotions)?;
    let (logits, probs) = classify(g, b[model.classifier], fused)?;
    Ok(StepOutput {
        logits,
        probs,
        fused,
        attention,
        reset_gate_mean: (reset_n > 0).then(|| reset_sum / reset_n as f64),
    })
}

/// Effective gate value at one timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    /// 1-based utterance index.
    pub t: usize,
    pub p_shift: f64,
    /// `1 - p_shift`; for the learned GRU, its mean reset-gate activation.
    pub gate: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ForwardOptions {
    /// Per-utterance gate values used instead of the shift network.
    pub p_shift_override: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ConversationTrace {
    pub logits: Vec<Var>,
    pub probs: Vec<Var>,
    /// Raw shift-network outputs, `None` at the first utterance.
    pub shift_probs: Vec<Option<Var>>,
    pub gates: Vec<GateRecord>,
    pub state: DialogueState,
}

/// Unrolls the model over a whole conversation.
///
/// In shift mode the first utterance uses `p_shift = 1`; later ones use the
/// shift network on consecutive utterances, detached from the gate unless
/// the model config enables gate gradients.
pub fn forward_conversation<T: Real>(
    g: &mut Graph<T>,
    model: &ArcModel,
    mb: &Bound,
    shift: Option<(&ShiftNet, &Bound)>,
    conv: &Conversation,
    opts: &ForwardOptions,
) -> Result<ConversationTrace> {
    let n = conv.utterances.len();
    if n == 0 {
        return Err(Error::Empty(format!("conversation {}", conv.id)));
    }
    let cfg = &model.config;
    if let Some(ov) = &opts.p_shift_override {
        if ov.len() != n {
            return Err(Error::Invalid(format!(
                "gate override has {} values for {n} utterances",
                ov.len()
            )));
        }
    }
    let with_shift = cfg.mode == ShiftMode::WithShift;
    if with_shift && shift.is_none() && opts.p_shift_override.is_none() {
        return Err(Error::Invalid("with_shift mode needs a shift network".into()));
    }
    let mut state = DialogueState::new(g, model)?;
    let mut trace = ConversationTrace {
        logits: Vec::with_capacity(n),
        probs: Vec::with_capacity(n),
        shift_probs: Vec::with_capacity(n),
        gates: Vec::with_capacity(n),
        state: DialogueState::default(),
    };
    let mut prev_shift_input: Option<Var> = None;
    for (t, u) in conv.utterances.iter().enumerate() {
        let mut inputs = Vec::with_capacity(cfg.modalities.len());
        for &m in &cfg.modalities {
            let f = u.features(m);
            if f.len() != cfg.dims.get(m) {
                return Err(Error::Utterance {
                    utterance_id: u.utterance_id.clone(),
                    msg: format!("{m} features have {} dims, model expects {}", f.len(), cfg.dims.get(m)),
                });
            }
            inputs.push(g.constant(f)?);
        }

        let mut raw_shift = None;
        if let Some((net, sb)) = shift.filter(|_| with_shift) {
            let cur = g.constant(&net.input_features(u))?;
            if let Some(prev) = prev_shift_input {
                raw_shift = Some(net.forward(g, sb, prev, cur)?.p_shift);
            }
            prev_shift_input = Some(cur);
        }
        let gate_var = if with_shift {
            Some(match (&opts.p_shift_override, raw_shift) {
                (Some(ov), _) => g.scalar(ov[t]),
                (None, Some(p)) if cfg.gate_grad => p,
                (None, Some(p)) => g.detach(p),
                (None, None) => g.scalar(1.0),
            })
        } else {
            None
        };

        let out = step_utterance(g, model, mb, &mut state, &inputs, &u.speaker, gate_var)?;
        let record = match gate_var {
            Some(p) => {
                let p = g.scalar_value(p);
                GateRecord {
                    t: t + 1,
                    p_shift: p,
                    gate: 1.0 - p,
                }
            }
            None => {
                let r = out.reset_gate_mean.unwrap_or(1.0);
                GateRecord {
                    t: t + 1,
                    p_shift: 1.0 - r,
                    gate: r,
                }
            }
        };
        trace.logits.push(out.logits);
        trace.probs.push(out.probs);
        trace.shift_probs.push(raw_shift);
        trace.gates.push(record);
    }
    trace.state = state;
    Ok(trace)
}
