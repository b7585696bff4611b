//! Dual-head cross-entropy: one term per head against the same one-hot
//! target.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

/// Probabilities are clamped to `[PROB_CLAMP, 1]` before the log.
pub const PROB_CLAMP: f64 = 1e-7;

/// How the two head terms combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossForm {
    /// `(cls + agg) / 2`
    #[default]
    Average,
    /// `cls + agg`
    Sum,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("target {0:?} is not one-hot")]
    NotOneHot([f64; 2]),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub cls_term: f64,
    pub agg_term: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub cls_term: Var,
    pub agg_term: Var,
}

fn check_one_hot(y: [f64; 2]) -> Result<(), LossError> {
    if y == [1.0, 0.0] || y == [0.0, 1.0] {
        Ok(())
    } else {
        Err(LossError::NotOneHot(y))
    }
}

/// One-hot target for a binary label: negative `(1, 0)`, positive `(0, 1)`.
pub fn one_hot(positive: bool) -> [f64; 2] {
    if positive {
        [0.0, 1.0]
    } else {
        [1.0, 0.0]
    }
}

fn term<T: Scalar>(tape: &mut Tape<T>, y: Var, p: Var) -> Result<Var, TensorError> {
    let clamped = tape.clamp(p, T::of(PROB_CLAMP), T::one())?;
    let logs = tape.log(clamped)?;
    let picked = tape.mul(y, logs)?;
    let s = tape.sum(picked)?;
    tape.scale(s, -T::one())
}

/// Records the loss on `tape`. `p_cls` and `p_agg` hold two probabilities
/// each (any shape with two elements).
pub fn dual_bce_loss<T: Scalar>(
    tape: &mut Tape<T>,
    y: [f64; 2],
    p_cls: Var,
    p_agg: Var,
    form: LossForm,
) -> Result<LossVars, LossError> {
    check_one_hot(y)?;
    let shape = tape.value(p_cls).shape().to_vec();
    let target = tape.constant(Tensor::new(shape, vec![T::of(y[0]), T::of(y[1])])?);
    let cls_term = term(tape, target, p_cls)?;
    let agg_term = term(tape, target, p_agg)?;
    let both = tape.add(cls_term, agg_term)?;
    let total = match form {
        LossForm::Average => tape.scale(both, T::of(0.5))?,
        LossForm::Sum => both,
    };
    Ok(LossVars {
        total,
        cls_term,
        agg_term,
    })
}

/// Loss value without a tape.
pub fn dual_bce_value(y: [f64; 2], p_cls: [f64; 2], p_agg: [f64; 2], form: LossForm) -> Result<LossValue, LossError> {
    check_one_hot(y)?;
    let term = |p: [f64; 2]| -> f64 {
        -(0..2)
            .map(|i| y[i] * p[i].clamp(PROB_CLAMP, 1.0).ln())
            .sum::<f64>()
    };
    let (cls_term, agg_term) = (term(p_cls), term(p_agg));
    let total = match form {
        LossForm::Average => (cls_term + agg_term) / 2.0,
        LossForm::Sum => cls_term + agg_term,
    };
    Ok(LossValue {
        total,
        cls_term,
        agg_term,
    })
}
