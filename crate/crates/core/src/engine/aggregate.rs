use std::collections::BTreeMap;

use num_rational::Rational64;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::model::{PointGrid, Points, Snap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MajorityVote {
    pub value: Points,
    /// Several values shared the top frequency; the lowest was taken.
    pub tie: bool,
}

/// Most frequent value; frequency ties go to the lowest tied value.
pub fn aggregate_majority(points: &[Points]) -> Option<MajorityVote> {
    let mut counts: BTreeMap<Points, usize> = BTreeMap::new();
    for p in points {
        *counts.entry(*p).or_default() += 1;
    }
    let top = *counts.values().max()?;
    let mut winners = counts.iter().filter(|(_, &c)| c == top).map(|(v, _)| *v);
    let value = winners.next()?;
    Some(MajorityVote {
        value,
        tie: winners.next().is_some(),
    })
}

/// Exact sample mean and sample variance (divisor `n - 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Spread {
    pub mean: Points,
    pub variance: Rational64,
    pub n: usize,
}

impl Spread {
    pub fn mean_f64(&self) -> f64 {
        self.mean.to_f64()
    }

    pub fn sigma_f64(&self) -> f64 {
        self.variance.to_f64().unwrap_or(f64::NAN).sqrt()
    }
}

pub fn aggregate_mean(points: &[Points]) -> Result<Spread, EngineError> {
    let n = points.len();
    if n < 2 {
        return Err(EngineError::DegenerateSampleSet { valid: n });
    }
    let mean = points.iter().copied().sum::<Points>() / n as i64;
    let ss = points
        .iter()
        .map(|p| {
            let d = (*p - mean).ratio();
            d * d
        })
        .fold(Rational64::zero(), |a, b| a + b);
    Ok(Spread {
        mean,
        variance: ss / (n as i64 - 1),
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CannotDecideReason {
    /// Two or more assignable values lie within one standard deviation.
    Spread,
    /// The mean sits exactly between two assignable values.
    SnapTie,
    /// Too many samples were dropped for unparseable replies.
    ParseDrops,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum Decision {
    CanDecide { value: Points },
    CannotDecide { reason: CannotDecideReason },
    Unanswered,
}

/// σ-confidence criterion with an exact variance.
///
/// Counts grid values `g` with `|g - mean| <= sigma` (closed interval,
/// compared as `(g - mean)^2 <= variance`). At most one such value means the
/// grade can be decided as the grid value nearest the mean, unless the mean
/// is an exact midpoint.
pub fn sigma_decision(mean: Points, variance: Rational64, grid: &PointGrid) -> Decision {
    let within = grid
        .values()
        .iter()
        .filter(|g| {
            let d = (**g - mean).ratio();
            d * d <= variance
        })
        .count();
    if within >= 2 {
        return Decision::CannotDecide {
            reason: CannotDecideReason::Spread,
        };
    }
    match grid.snap(mean) {
        Snap::Value(value) => Decision::CanDecide { value },
        Snap::Tie(..) => Decision::CannotDecide {
            reason: CannotDecideReason::SnapTie,
        },
    }
}

/// σ-confidence criterion from a standard deviation given as an exact value.
pub fn sigma_decision_sd(mean: Points, sigma: Points, grid: &PointGrid) -> Decision {
    let s = sigma.ratio();
    sigma_decision(mean, s * s, grid)
}
