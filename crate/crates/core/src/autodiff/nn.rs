//! Composite layers built from tape primitives.


use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// `(SiLU(x·w_gate) ⊙ (x·w_up))·w_down`.
pub fn swiglu_ffn(tape: &mut Tape, x: Var, w_gate: Var, w_up: Var, w_down: Var) -> Result<Var> {
    let gate = tape.matmul(x, w_gate)?;
    let gate = tape.silu(gate)?;
    let up = tape.matmul(x, w_up)?;
    let hidden = tape.mul(gate, up)?;
    tape.matmul(hidden, w_down)
}

/// `softmax(q·kᵀ/√d + mask)·v` for a single head.
pub fn scaled_dot_attention(tape: &mut Tape, q: Var, k: Var, v: Var, causal: bool) -> Result<Var> {
    let (_, dq) = tape.value(q).dims2()?;
    let (_, dk) = tape.value(k).dims2()?;
    if dq != dk {
        return Err(Error::Shape {
            op: "scaled_dot_attention",
            lhs: tape.value(q).shape().into(),
            rhs: tape.value(k).shape().into(),
        });
    }
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let mut scores = tape.scale(scores, 1.0 / libm::sqrt(dq as f64))?;
    if causal {
        scores = tape.causal_mask(scores)?;
    }
    let weights = tape.softmax_row(scores)?;
    tape.matmul(weights, v)
}
