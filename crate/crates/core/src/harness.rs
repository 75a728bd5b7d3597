//! Finite-difference check of the full model's gradients on a toy dialogue.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Conversation, Dims, EmotionLabel, Modality, Utterance};
use crate::error::Result;
use crate::gradcheck::grad_check;
use crate::graph::Graph;
use crate::model::{ArcModel, ModelConfig, ShiftMode};
use crate::shift::{sentiment_polarity, shift_labels_from_polarities, HiddenActivation, ShiftInput, ShiftNet, ShiftNetConfig};
use crate::tensor::ParamId;
use crate::train::joint_loss;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub mode: ShiftMode,
    pub group: String,
    pub parameters: usize,
    pub max_rel_error: f64,
    /// Parameter holding the worst entry.
    pub worst: Option<String>,
    /// Analytic and numeric derivative at the worst entry.
    pub worst_pair: Option<(f64, f64)>,
}

/// Two speakers, three utterances, every width 2.
pub struct ToyProblem {
    pub model: ArcModel,
    pub shift: ShiftNet,
    pub conversation: Conversation,
    pub targets: Vec<usize>,
    pub shift_labels: Vec<bool>,
    pub lambda: f64,
}

pub fn toy_problem(seed: u64, mode: ShiftMode) -> Result<ToyProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims {
        text: 2,
        audio: 2,
        video: 2,
    };
    let mut cfg = ModelConfig::new(dims, 3);
    cfg.party_dim = 2;
    cfg.context_dim = 2;
    cfg.emotion_dim = 2;
    cfg.mode = mode;
    cfg.arc_bias = true;
    cfg.gate_grad = true;
    let model = ArcModel::new(cfg, &mut rng)?;
    let shift = ShiftNet::new(
        ShiftNetConfig {
            input_dim: 2,
            hidden: 2,
            activation: HiddenActivation::Tanh,
            input: ShiftInput::Text,
        },
        &mut rng,
    )?;
    let scores = [1.5, -0.8, 2.0];
    let utterances: Vec<Utterance> = ["A", "B", "A"]
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(i, (s, score))| {
            let mut v = || (0..2).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
            Utterance {
                utterance_id: format!("toy{i}"),
                speaker: s.to_string(),
                text_features: v(),
                audio_features: v(),
                video_features: v(),
                emotion_label: Some(EmotionLabel::Single([0, 2, 1][i])),
                sentiment_score: Some(score),
            }
        })
        .collect();
    let pols: Vec<_> = scores.iter().map(|&s| sentiment_polarity(s)).collect();
    Ok(ToyProblem {
        model,
        shift,
        conversation: Conversation {
            id: "toy".into(),
            utterances,
        },
        targets: vec![0, 2, 1],
        shift_labels: shift_labels_from_polarities(&pols),
        lambda: 1.0,
    })
}

/// Which parameters of the model and shift network a check perturbs.
struct Group {
    name: &'static str,
    model: Vec<ParamId>,
    shift: Vec<ParamId>,
}

fn groups(p: &ToyProblem) -> Vec<Group> {
    let store = &p.model.store;
    let pick = |f: &dyn Fn(&str) -> bool| -> Vec<ParamId> { store.ids().filter(|&id| f(store.name(id))).collect() };
    let modal = |part: &'static str| {
        move |n: &str| Modality::ALL.iter().any(|m| n.starts_with(&format!("{m}.{part}")))
    };
    let emotion_name = match p.model.config.mode {
        ShiftMode::WithShift => "shift-gated emotion cell",
        ShiftMode::WithoutShift => "emotion GRU",
    };
    let mut out = vec![
        Group {
            name: "party GRU",
            model: pick(&modal("party.")),
            shift: vec![],
        },
        Group {
            name: "context GRU",
            model: pick(&modal("context.")),
            shift: vec![],
        },
        Group {
            name: "attention",
            model: pick(&modal("attention")),
            shift: vec![],
        },
        Group {
            name: emotion_name,
            model: pick(&modal("emotion.")),
            shift: vec![],
        },
        Group {
            name: "fusion",
            model: pick(&|n| n.starts_with("fusion.")),
            shift: vec![],
        },
        Group {
            name: "classifier",
            model: pick(&|n| n == "classifier"),
            shift: vec![],
        },
    ];
    let shift_ids: Vec<ParamId> = p.shift.store.ids().collect();
    if p.model.config.mode == ShiftMode::WithShift {
        out.push(Group {
            name: "shift network",
            model: vec![],
            shift: shift_ids.clone(),
        });
    }
    out.push(Group {
        name: "end-to-end",
        model: store.ids().collect(),
        shift: if p.model.config.mode == ShiftMode::WithShift {
            shift_ids
        } else {
            vec![]
        },
    });
    out
}

fn check_group(p: &ToyProblem, grp: &Group, h: f64) -> Result<GroupCheck> {
    let n_model = p.model.store.flatten(&grp.model).len();
    let mut theta = p.model.store.flatten(&grp.model);
    theta.extend(p.shift.store.flatten(&grp.shift));
    let with_shift = p.model.config.mode == ShiftMode::WithShift;
    let report = grad_check(&theta, h, |t| {
        let mut model = p.model.clone();
        let mut shift = p.shift.clone();
        model.store.unflatten(&grp.model, &t[..n_model])?;
        shift.store.unflatten(&grp.shift, &t[n_model..])?;
        let mut g = Graph::<f64>::new();
        let mb = g.bind(&model.store, true);
        let sb = g.bind(&shift.store, true);
        let sh = with_shift.then_some((&shift, &sb));
        let (loss, _) = joint_loss(
            &mut g,
            &model,
            &mb,
            sh,
            &p.conversation,
            &p.targets,
            Some(&p.shift_labels),
            p.lambda,
        )?;
        g.backward(loss)?;
        let mg = mb.grads(&g);
        let sg = sb.grads(&g);
        let mut grad: Vec<f64> = grp.model.iter().flat_map(|id| mg[id.index()].iter().copied()).collect();
        grad.extend(grp.shift.iter().flat_map(|id| sg[id.index()].iter().copied()));
        Ok((g.scalar_value(loss), grad))
    })?;
    let worst = report.worst_index.map(|mut i| {
        for &id in &grp.model {
            let len = p.model.store.get(id).len();
            if i < len {
                return p.model.store.name(id).to_string();
            }
            i -= len;
        }
        for &id in &grp.shift {
            let len = p.shift.store.get(id).len();
            if i < len {
                return p.shift.store.name(id).to_string();
            }
            i -= len;
        }
        unreachable!("worst index within the checked vector")
    });
    Ok(GroupCheck {
        mode: p.model.config.mode,
        group: grp.name.to_string(),
        parameters: theta.len(),
        max_rel_error: report.max_rel_error,
        worst,
        worst_pair: report.worst_index.map(|i| (report.analytic[i], report.numeric[i])),
    })
}

/// Checks every parameter group of both model variants against central
/// differences of the joint loss.
pub fn check_model_gradients(seed: u64, h: f64) -> Result<Vec<GroupCheck>> {
    let mut out = Vec::new();
    for mode in [ShiftMode::WithShift, ShiftMode::WithoutShift] {
        let p = toy_problem(seed, mode)?;
        for grp in groups(&p) {
            out.push(check_group(&p, &grp, h)?);
        }
    }
    Ok(out)
}
