//! Gate series and CSV export.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Conversation;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{forward_conversation, ArcModel, ForwardOptions, GateRecord};
use crate::shift::ShiftNet;
use crate::train::PredictionRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRow {
    pub conversation_id: String,
    pub t: usize,
    pub p_shift: f64,
    pub one_minus_p_shift: f64,
    pub mode: String,
}

impl GateRow {
    pub fn from_records(conversation_id: &str, mode: &str, records: &[GateRecord]) -> Vec<GateRow> {
        records
            .iter()
            .map(|r| GateRow {
                conversation_id: conversation_id.to_string(),
                t: r.t,
                p_shift: r.p_shift,
                one_minus_p_shift: r.gate,
                mode: mode.to_string(),
            })
            .collect()
    }
}

/// Gate values of the shift network alone: `p_1 = 1`, then one value per
/// consecutive pair.
pub fn shift_gate_series(net: &ShiftNet, conv: &Conversation) -> Result<Vec<GateRecord>> {
    if conv.utterances.is_empty() {
        return Err(Error::Empty(format!("conversation {}", conv.id)));
    }
    let mut out = vec![GateRecord {
        t: 1,
        p_shift: 1.0,
        gate: 0.0,
    }];
    for (i, w) in conv.utterances.windows(2).enumerate() {
        let p = net.shift_probability_utterances(&w[0], &w[1])?;
        out.push(GateRecord {
            t: i + 2,
            p_shift: p,
            gate: 1.0 - p,
        });
    }
    Ok(out)
}

/// Effective gate values of a trained dialogue model on one conversation.
pub fn model_gate_series(model: &ArcModel, shift: Option<&ShiftNet>, conv: &Conversation) -> Result<Vec<GateRecord>> {
    let mut g = Graph::<f64>::new();
    let mb = g.bind(&model.store, false);
    let sb = shift.map(|s| g.bind(&s.store, false));
    let tr = forward_conversation(&mut g, model, &mb, shift.zip(sb.as_ref()), conv, &ForwardOptions::default())?;
    Ok(tr.gates)
}

fn write_rows<S: Serialize>(path: impl AsRef<Path>, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_gates_csv(path: impl AsRef<Path>, rows: &[GateRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn write_predictions_csv(path: impl AsRef<Path>, rows: &[PredictionRow]) -> Result<()> {
    write_rows(path, rows)
}
