//! Marking strategies. Every rule returns a sorted, nonempty set that
//! contains an element of maximal estimate.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MarkingError {
    #[error("unknown marking `{0}`; expected global, max:THETA or doerfler:THETA")]
    Syntax(String),
    #[error("theta must lie in (0, 1], got {0}")]
    Theta(f64),
    #[error("cannot mark an empty estimate vector")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarkingRule {
    Global,
    /// `{T : eta(T) >= theta max eta}`
    Maximum(f64),
    /// Smallest greedy set with `sum_M eta^2 >= theta^2 sum eta^2`.
    Doerfler(f64),
}

impl MarkingRule {
    pub fn maximum(theta: f64) -> Result<Self, MarkingError> {
        check_theta(theta).map(MarkingRule::Maximum)
    }

    pub fn doerfler(theta: f64) -> Result<Self, MarkingError> {
        check_theta(theta).map(MarkingRule::Doerfler)
    }

    pub fn theta(&self) -> Option<f64> {
        match *self {
            MarkingRule::Global => None,
            MarkingRule::Maximum(t) | MarkingRule::Doerfler(t) => Some(t),
        }
    }
}

fn check_theta(theta: f64) -> Result<f64, MarkingError> {
    if theta > 0.0 && theta <= 1.0 {
        Ok(theta)
    } else {
        Err(MarkingError::Theta(theta))
    }
}

impl FromStr for MarkingRule {
    type Err = MarkingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "global" {
            return Ok(MarkingRule::Global);
        }
        let (kind, value) = s.split_once(':').ok_or_else(|| MarkingError::Syntax(s.into()))?;
        let theta: f64 = value.parse().map_err(|_| MarkingError::Syntax(s.into()))?;
        match kind {
            "max" | "maximum" => MarkingRule::maximum(theta),
            "doerfler" | "dorfler" => MarkingRule::doerfler(theta),
            _ => Err(MarkingError::Syntax(s.into())),
        }
    }
}

impl fmt::Display for MarkingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarkingRule::Global => write!(f, "global"),
            MarkingRule::Maximum(t) => write!(f, "max:{t}"),
            MarkingRule::Doerfler(t) => write!(f, "doerfler:{t}"),
        }
    }
}

/// Indices of the marked elements in ascending order.
pub fn mark(eta: &[f64], rule: MarkingRule) -> Result<Vec<usize>, MarkingError> {
    if eta.is_empty() {
        return Err(MarkingError::Empty);
    }
    if let MarkingRule::Global = rule {
        return Ok((0..eta.len()).collect());
    }
    let max = eta.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Ok(vec![0]);
    }
    match rule {
        MarkingRule::Global => unreachable!(),
        MarkingRule::Maximum(theta) => {
            let threshold = theta * max;
            Ok((0..eta.len()).filter(|&t| eta[t] >= threshold).collect())
        }
        MarkingRule::Doerfler(theta) => {
            let mut order: Vec<usize> = (0..eta.len()).collect();
            order.sort_by(|&a, &b| eta[b].total_cmp(&eta[a]).then(a.cmp(&b)));
            let total: f64 = order.iter().map(|&t| eta[t] * eta[t]).sum();
            let target = theta * theta * total;
            let mut acc = 0.0;
            let mut marked = Vec::new();
            for &t in &order {
                marked.push(t);
                acc += eta[t] * eta[t];
                if acc >= target {
                    break;
                }
            }
            marked.sort_unstable();
            Ok(marked)
        }
    }
}
