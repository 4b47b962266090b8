//! Knockoff and knockoff+ thresholds, and the leave-one-out thresholds `T_j`.

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{KnockoffError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterVariant {
    #[serde(rename = "knockoff")]
    Knockoff,
    #[serde(rename = "knockoff+")]
    KnockoffPlus,
}

impl FilterVariant {
    fn offset(self) -> usize {
        match self {
            FilterVariant::Knockoff => 0,
            FilterVariant::KnockoffPlus => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FilterVariant::Knockoff => "knockoff",
            FilterVariant::KnockoffPlus => "knockoff+",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionResult {
    /// `+inf` means nothing was selected; serialized as `"inf"`.
    #[serde(serialize_with = "serialize_threshold")]
    pub threshold: f64,
    /// Zero-based feature indices, ascending.
    pub selected: Vec<usize>,
    pub variant: FilterVariant,
    pub q: f64,
}

pub fn serialize_threshold<S: Serializer>(t: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if t.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*t)
    }
}

fn validate(w: &[f64], q: f64) -> Result<()> {
    if !(q > 0.0 && q < 1.0) {
        return Err(KnockoffError::Invalid(format!("q = {q} outside (0,1)")));
    }
    if let Some(j) = w.iter().position(|v| !v.is_finite()) {
        return Err(KnockoffError::Invalid(format!("W[{j}] = {} is not finite", w[j])));
    }
    Ok(())
}

/// Smallest `t` among the nonzero `|W_j|` with
/// `(offset + #{W_j <= -t}) / #{W_j >= t} <= q`, or `+inf` if there is none.
fn threshold_unchecked(w: &[f64], q: f64, variant: FilterVariant) -> f64 {
    let mut pos: Vec<f64> = w.iter().copied().filter(|&v| v > 0.0).collect();
    let mut neg: Vec<f64> = w.iter().filter(|&&v| v < 0.0).map(|v| -v).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut candidates: Vec<f64> = pos.iter().chain(neg.iter()).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let offset = variant.offset() as f64;
    for t in candidates {
        let n_pos = (pos.len() - pos.partition_point(|&v| v < t)) as f64;
        let n_neg = (neg.len() - neg.partition_point(|&v| v < t)) as f64;
        let num = offset + n_neg;
        // 0/0 counts as 0; anything positive over 0 is infeasible
        let feasible = if n_pos == 0.0 { num == 0.0 } else { num / n_pos <= q };
        if feasible {
            return t;
        }
    }
    f64::INFINITY
}

fn select(w: &[f64], threshold: f64) -> Vec<usize> {
    if threshold.is_infinite() {
        return Vec::new();
    }
    (0..w.len()).filter(|&j| w[j] >= threshold).collect()
}

pub fn threshold(w: &[f64], q: f64, variant: FilterVariant) -> Result<SelectionResult> {
    validate(w, q)?;
    let t = threshold_unchecked(w, q, variant);
    Ok(SelectionResult { threshold: t, selected: select(w, t), variant, q })
}

pub fn knockoff_threshold(w: &[f64], q: f64) -> Result<SelectionResult> {
    threshold(w, q, FilterVariant::Knockoff)
}

pub fn knockoff_plus_threshold(w: &[f64], q: f64) -> Result<SelectionResult> {
    threshold(w, q, FilterVariant::KnockoffPlus)
}

/// `T_j`: the threshold obtained after replacing `W_j` by `|W_j|`.
pub fn leave_one_out_thresholds(w: &[f64], q: f64, variant: FilterVariant) -> Result<Vec<f64>> {
    validate(w, q)?;
    let mut flipped = w.to_vec();
    Ok((0..w.len())
        .map(|j| {
            flipped[j] = w[j].abs();
            let t = threshold_unchecked(&flipped, q, variant);
            flipped[j] = w[j];
            t
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TjPropertyCheck {
    pub holds: bool,
    /// A pair `(j, k)` meeting the hypothesis but with `T_j != T_k`.
    pub counterexample: Option<(usize, usize)>,
}

/// Whenever `W_j <= -min(T_j, T_k)` and `W_k <= -min(T_j, T_k)`, requires `T_j = T_k`.
pub fn check_tj_property(w: &[f64], q: f64, variant: FilterVariant) -> Result<TjPropertyCheck> {
    let t = leave_one_out_thresholds(w, q, variant)?;
    for j in 0..w.len() {
        for k in j + 1..w.len() {
            let m = t[j].min(t[k]);
            if w[j] <= -m && w[k] <= -m && t[j] != t[k] {
                return Ok(TjPropertyCheck { holds: false, counterexample: Some((j, k)) });
            }
        }
    }
    Ok(TjPropertyCheck { holds: true, counterexample: None })
}
