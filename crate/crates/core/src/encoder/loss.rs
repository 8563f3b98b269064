//! Cross-entropy losses on head outputs.
//!
//! Split heads (all variants except span & type together):
//! a positive instance costs `CE(is-entity, entity) + CE(which-type, type)`,
//! a negative one only `CE(is-entity, not-entity)`. The joint head scores a
//! single `|C| + 1`-way cross-entropy whose last class means "no entity".

use super::{EncoderError, HeadOutput};
use crate::formulate::Label;

pub const ENTITY: usize = 0;
pub const NOT_ENTITY: usize = 1;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut p = logits.to_vec();
    super::kernels::softmax_in_place(&mut p);
    p
}

/// Loss and gradient with respect to the logits.
pub fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let mut grad: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
    grad[target] -= 1.0;
    (lse - logits[target], grad)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HeadGrad {
    pub is_entity: Option<[f64; 2]>,
    pub which_type: Option<Vec<f64>>,
}

pub fn head_loss(out: &HeadOutput, label: Label, joint: bool) -> Result<(f64, HeadGrad), EncoderError> {
    let width = out.which_type_logits.len();
    let mismatch = |m: String| Err(EncoderError::LabelMismatch(m));
    if joint {
        if width < 2 {
            return mismatch(format!("joint head needs at least 2 classes, has {width}"));
        }
        let target = match label {
            Label::Positive(t) if t + 1 < width => t,
            Label::Positive(t) => return mismatch(format!("type {t} does not fit {width}-way joint head")),
            Label::Negative => width - 1,
        };
        let (l, g) = cross_entropy(&out.which_type_logits, target);
        return Ok((l, HeadGrad { is_entity: None, which_type: Some(g) }));
    }
    let Some(ent) = out.is_entity_logits else {
        return mismatch("split loss needs is-entity logits".into());
    };
    match label {
        Label::Positive(t) => {
            if t >= width {
                return mismatch(format!("type {t} does not fit {width}-way head"));
            }
            let (le, ge) = cross_entropy(&ent, ENTITY);
            let (lt, gt) = cross_entropy(&out.which_type_logits, t);
            Ok((le + lt, HeadGrad { is_entity: Some([ge[0], ge[1]]), which_type: Some(gt) }))
        }
        Label::Negative => {
            let (le, ge) = cross_entropy(&ent, NOT_ENTITY);
            Ok((le, HeadGrad { is_entity: Some([ge[0], ge[1]]), which_type: None }))
        }
    }
}
