use std::collections::BTreeMap;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::model::Points;

type Exact = Ratio<i128>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlphaScale {
    Nominal,
    #[default]
    Interval,
}

impl std::fmt::Display for AlphaScale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AlphaScale::Nominal => "nominal",
            AlphaScale::Interval => "interval",
        })
    }
}

/// Paired (predicted, truth) grades for one set of items.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradePairSeries {
    pub pairs: Vec<(Points, Points)>,
    pub scale: AlphaScale,
}

impl GradePairSeries {
    pub fn new(pairs: Vec<(Points, Points)>, scale: AlphaScale) -> Self {
        GradePairSeries { pairs, scale }
    }
}

/// Fraction of pairs that agree exactly.
pub fn accuracy(series: &GradePairSeries) -> Result<f64, MetricsError> {
    if series.pairs.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    let hits = series.pairs.iter().filter(|(p, t)| p == t).count();
    Ok(hits as f64 / series.pairs.len() as f64)
}

fn exact(p: Points) -> Exact {
    let r = p.ratio();
    Exact::new(i128::from(*r.numer()), i128::from(*r.denom()))
}

fn delta(scale: AlphaScale, c: Exact, k: Exact) -> Exact {
    match scale {
        AlphaScale::Nominal if c == k => Exact::zero(),
        AlphaScale::Nominal => Exact::from_integer(1),
        AlphaScale::Interval => (c - k) * (c - k),
    }
}

/// Coincidence matrix over the distinct values of a set of units.
///
/// Every unit with `m >= 2` values contributes each ordered pair of its
/// values with weight `1 / (m - 1)`; units with fewer values are not
/// pairable and contribute nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceMatrix {
    values: Vec<Exact>,
    cells: BTreeMap<(usize, usize), Exact>,
}

impl CoincidenceMatrix {
    pub fn from_units(units: &[Vec<Points>]) -> Self {
        let mut values: Vec<Exact> = units.iter().flatten().map(|p| exact(*p)).collect();
        values.sort();
        values.dedup();
        let index = |v: Exact| values.binary_search(&v).expect("value collected above");
        let mut cells: BTreeMap<(usize, usize), Exact> = BTreeMap::new();
        for unit in units.iter().filter(|u| u.len() >= 2) {
            let weight = Exact::new(1, unit.len() as i128 - 1);
            for (i, a) in unit.iter().enumerate() {
                for (j, b) in unit.iter().enumerate() {
                    if i != j {
                        *cells.entry((index(exact(*a)), index(exact(*b)))).or_insert_with(Exact::zero) += weight;
                    }
                }
            }
        }
        CoincidenceMatrix { values, cells }
    }

    /// `o_ck`.
    pub fn get(&self, c: Points, k: Points) -> f64 {
        let (Ok(ci), Ok(ki)) = (self.values.binary_search(&exact(c)), self.values.binary_search(&exact(k))) else {
            return 0.0;
        };
        self.cells.get(&(ci, ki)).and_then(|v| v.to_f64()).unwrap_or(0.0)
    }

    /// Marginal totals `n_c`, indexed like `values`.
    fn marginals(&self) -> Vec<Exact> {
        let mut n = vec![Exact::zero(); self.values.len()];
        for ((c, _), v) in &self.cells {
            n[*c] += *v;
        }
        n
    }

    /// Total number of pairable values `n`.
    pub fn total(&self) -> f64 {
        self.marginals().iter().fold(Exact::zero(), |a, b| a + b).to_f64().unwrap_or(0.0)
    }

    pub fn alpha(&self, scale: AlphaScale) -> Result<f64, MetricsError> {
        let marginals = self.marginals();
        let n: Exact = marginals.iter().fold(Exact::zero(), |a, b| a + b);
        if n < Exact::from_integer(2) {
            return Err(MetricsError::InsufficientData(
                "fewer than two pairable values".into(),
            ));
        }
        let observed = self
            .cells
            .iter()
            .map(|((c, k), o)| *o * delta(scale, self.values[*c], self.values[*k]))
            .fold(Exact::zero(), |a, b| a + b);
        let mut expected = Exact::zero();
        for (c, nc) in marginals.iter().enumerate() {
            for (k, nk) in marginals.iter().enumerate() {
                if c != k {
                    expected += *nc * *nk * delta(scale, self.values[c], self.values[k]);
                }
            }
        }
        if expected.is_zero() {
            return Err(MetricsError::UndefinedAlpha);
        }
        // alpha = 1 - (D_o / n) / (D_e / (n (n - 1))) = 1 - (n - 1) D_o / D_e
        let alpha = Exact::from_integer(1) - (n - Exact::from_integer(1)) * observed / expected;
        alpha
            .to_f64()
            .ok_or_else(|| MetricsError::InsufficientData("alpha not representable".into()))
    }
}

/// Two-rater Krippendorff's alpha on (predicted, truth) pairs.
pub fn krippendorff_alpha(series: &GradePairSeries) -> Result<f64, MetricsError> {
    if series.pairs.len() < 2 {
        return Err(MetricsError::InsufficientData(format!(
            "alpha needs at least 2 pairs, got {}",
            series.pairs.len()
        )));
    }
    let units: Vec<Vec<Points>> = series.pairs.iter().map(|(a, b)| vec![*a, *b]).collect();
    CoincidenceMatrix::from_units(&units).alpha(series.scale)
}

/// Multi-rater alpha across grading variants. `grade_matrix[v][i]` is the
/// grade variant `v` gave item `i`.
pub fn robustness_alpha(grade_matrix: &[Vec<Points>], scale: AlphaScale) -> Result<f64, MetricsError> {
    if grade_matrix.len() < 2 {
        return Err(MetricsError::InsufficientData(format!(
            "robustness needs at least 2 variants, got {}",
            grade_matrix.len()
        )));
    }
    let items = grade_matrix[0].len();
    if let Some(bad) = grade_matrix.iter().find(|v| v.len() != items) {
        return Err(MetricsError::LengthMismatch {
            expected: items,
            found: bad.len(),
        });
    }
    if items == 0 {
        return Err(MetricsError::EmptySeries);
    }
    let units: Vec<Vec<Points>> = (0..items).map(|i| grade_matrix.iter().map(|v| v[i]).collect()).collect();
    CoincidenceMatrix::from_units(&units).alpha(scale)
}
