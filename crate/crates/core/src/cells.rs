//! Recurrent cells: the standard GRU and the shift-gated emotion cell.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Bound, Graph, Var};
use crate::tensor::{ParamId, ParamStore, Real};

/// Standard GRU weights. `w_*` are `d_h×d_in`, `u_*` are `d_h×d_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub d_in: usize,
    pub d_h: usize,
}

/// Intermediate values of one GRU step.
#[derive(Debug, Clone, Copy)]
pub struct GruTrace {
    pub h: Var,
    pub update_gate: Var,
    pub reset_gate: Var,
}

fn bound_for(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

impl GruParams {
    /// Registers freshly initialized weights under `prefix`.
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (bx, bh) = (bound_for(d_in), bound_for(d_h));
        let mut ids = Vec::with_capacity(9);
        for gate in ["z", "r", "h"] {
            ids.push(store.insert_uniform(format!("{prefix}.w_{gate}"), vec![d_h, d_in], bx, rng)?);
            ids.push(store.insert_uniform(format!("{prefix}.u_{gate}"), vec![d_h, d_h], bh, rng)?);
            ids.push(store.insert_uniform(format!("{prefix}.b_{gate}"), vec![d_h], bx, rng)?);
        }
        Ok(GruParams {
            w_z: ids[0],
            u_z: ids[1],
            b_z: ids[2],
            w_r: ids[3],
            u_r: ids[4],
            b_r: ids[5],
            w_h: ids[6],
            u_h: ids[7],
            b_h: ids[8],
            d_in,
            d_h,
        })
    }

    pub fn ids(&self) -> [ParamId; 9] {
        [
            self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_h, self.u_h,
            self.b_h,
        ]
    }
}

fn gate<T: Real>(g: &mut Graph<T>, w: Var, u: Var, b: Var, x: Var, h: Var) -> Result<Var> {
    let wx = g.matvec(w, x)?;
    let uh = g.matvec(u, h)?;
    g.sum(&[wx, uh, b])
}

fn expect_len<T: Real>(g: &Graph<T>, op: &'static str, v: Var, n: usize) -> Result<()> {
    if g.shape(v) != [n] {
        return Err(Error::shape(
            op,
            format!("expected [{n}], got {:?}", g.shape(v)),
        ));
    }
    Ok(())
}

/// One GRU step, returning the new hidden state and both gates.
pub fn gru_step_traced<T: Real>(
    g: &mut Graph<T>,
    b: &Bound,
    p: &GruParams,
    h_prev: Var,
    x: Var,
) -> Result<GruTrace> {
    expect_len(g, "gru_step", h_prev, p.d_h)?;
    expect_len(g, "gru_step", x, p.d_in)?;
    let z = gate(g, b[p.w_z], b[p.u_z], b[p.b_z], x, h_prev)?;
    let z = g.sigmoid(z)?;
    let r = gate(g, b[p.w_r], b[p.u_r], b[p.b_r], x, h_prev)?;
    let r = g.sigmoid(r)?;
    let rh = g.mul(r, h_prev)?;
    let cand = gate(g, b[p.w_h], b[p.u_h], b[p.b_h], x, rh)?;
    let cand = g.tanh(cand)?;
    let keep = g.one_minus(z)?;
    let kept = g.mul(keep, h_prev)?;
    let fresh = g.mul(z, cand)?;
    let h = g.add(kept, fresh)?;
    Ok(GruTrace {
        h,
        update_gate: z,
        reset_gate: r,
    })
}

/// `h' = (1-z)⊙h + z⊙tanh(W_h x + U_h (r⊙h) + b_h)`
pub fn gru_step<T: Real>(
    g: &mut Graph<T>,
    b: &Bound,
    p: &GruParams,
    h_prev: Var,
    x: Var,
) -> Result<Var> {
    gru_step_traced(g, b, p, h_prev, x).map(|t| t.h)
}

/// Weights of the shift-gated emotion cell: `w` is `d_e×d_s`, `u` is `d_e×d_e`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcParams {
    pub w: ParamId,
    pub u: ParamId,
    pub bias: Option<ParamId>,
    pub d_s: usize,
    pub d_e: usize,
}

impl ArcParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_s: usize,
        d_e: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.insert_uniform(format!("{prefix}.w"), vec![d_e, d_s], bound_for(d_s), rng)?;
        let u = store.insert_uniform(format!("{prefix}.u"), vec![d_e, d_e], bound_for(d_e), rng)?;
        let bias = if with_bias {
            Some(store.insert_uniform(format!("{prefix}.b"), vec![d_e], bound_for(d_s), rng)?)
        } else {
            None
        };
        Ok(ArcParams {
            w,
            u,
            bias,
            d_s,
            d_e,
        })
    }
}

/// Shift-gated update:
/// `ẽ = tanh(W s + (1-p)⊙(U e_prev))`, `e = (1-p)⊙e_prev + p⊙ẽ`.
///
/// `p_shift` is a scalar node whose value must lie in `[0, 1]`.
pub fn arc_step<T: Real>(
    g: &mut Graph<T>,
    b: &Bound,
    p: &ArcParams,
    e_prev: Var,
    s: Var,
    p_shift: Var,
) -> Result<Var> {
    expect_len(g, "arc_step", e_prev, p.d_e)?;
    expect_len(g, "arc_step", s, p.d_s)?;
    expect_len(g, "arc_step", p_shift, 1)?;
    let pv = g.scalar_value(p_shift);
    if !(0.0..=1.0).contains(&pv) {
        return Err(Error::GateOutOfRange(pv));
    }
    let keep = g.one_minus(p_shift)?;
    let ws = g.matvec(b[p.w], s)?;
    let ue = g.matvec(b[p.u], e_prev)?;
    let gated = g.scale_by(ue, keep)?;
    let pre = match p.bias {
        Some(bias) => g.sum(&[ws, gated, b[bias]])?,
        None => g.add(ws, gated)?,
    };
    let cand = g.tanh(pre)?;
    let kept = g.scale_by(e_prev, keep)?;
    let fresh = g.scale_by(cand, p_shift)?;
    g.add(kept, fresh)
}
