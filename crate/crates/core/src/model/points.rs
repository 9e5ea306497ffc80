//! Exact point values and assignable point grids.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Div, Mul, Sub};
use std::str::FromStr;

use num_rational::Rational64;
use num_traits::{Signed, ToPrimitive};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A point value held as an exact rational.
///
/// Grids such as `0, 0.5, 1, 1.5, 2` compare exactly, so membership and
/// midpoint ties never depend on floating point rounding.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Points(Rational64);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid point value `{0}`")]
pub struct PointsParseError(pub String);

impl Points {
    pub const ZERO: Points = Points(Rational64::new_raw(0, 1));

    pub fn new(numer: i64, denom: i64) -> Self {
        Points(Rational64::new(numer, denom))
    }

    pub fn from_integer(value: i64) -> Self {
        Points(Rational64::from_integer(value))
    }

    pub fn ratio(self) -> Rational64 {
        self.0
    }

    pub fn from_ratio(r: Rational64) -> Self {
        Points(r)
    }

    pub fn to_f64(self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn is_negative(self) -> bool {
        self.0.is_negative()
    }

    pub fn is_integer(self) -> bool {
        self.0.is_integer()
    }

    /// Integer value, if this is a whole number.
    pub fn as_integer(self) -> Option<i64> {
        self.0.is_integer().then(|| self.0.to_integer())
    }

    pub fn abs_diff(self, other: Points) -> Points {
        Points((self.0 - other.0).abs())
    }

    /// Parse a decimal literal (`"1.25"`, `"-3"`, `"2."`) exactly.
    fn parse_decimal(s: &str) -> Option<Rational64> {
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
            || int_part.len() + frac_part.len() > 18
        {
            return None;
        }
        let digits = format!("{int_part}{frac_part}");
        let numer: i64 = if digits.is_empty() { 0 } else { digits.parse().ok()? };
        let denom = 10i64.checked_pow(frac_part.len() as u32)?;
        let r = Rational64::new(numer, denom);
        Some(if neg { -r } else { r })
    }

    /// Decimal rendering when the value has a terminating expansion.
    fn decimal_string(self) -> Option<String> {
        let mut denom = *self.0.denom();
        let mut twos = 0u32;
        let mut fives = 0u32;
        while denom % 2 == 0 {
            denom /= 2;
            twos += 1;
        }
        while denom % 5 == 0 {
            denom /= 5;
            fives += 1;
        }
        if denom != 1 {
            return None;
        }
        let places = twos.max(fives);
        let scale = 10i128.checked_pow(places)?;
        let scaled =
            (*self.0.numer() as i128) * (scale / (*self.0.denom() as i128));
        let sign = if scaled < 0 { "-" } else { "" };
        let abs = scaled.unsigned_abs();
        if places == 0 {
            return Some(format!("{sign}{abs}"));
        }
        let scale = scale as u128;
        let frac = format!("{:0width$}", abs % scale, width = places as usize);
        Some(format!("{sign}{}.{frac}", abs / scale))
    }
}

impl fmt::Display for Points {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.decimal_string() {
            Some(s) => f.write_str(&s),
            None => write!(f, "{}/{}", self.0.numer(), self.0.denom()),
        }
    }
}

impl fmt::Debug for Points {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Points({self})")
    }
}

impl FromStr for Points {
    type Err = PointsParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if let Some((n, d)) = t.split_once('/') {
            let n: i64 = n.trim().parse().map_err(|_| PointsParseError(s.into()))?;
            let d: i64 = d.trim().parse().map_err(|_| PointsParseError(s.into()))?;
            if d == 0 {
                return Err(PointsParseError(s.into()));
            }
            return Ok(Points(Rational64::new(n, d)));
        }
        Self::parse_decimal(t)
            .map(Points)
            .ok_or_else(|| PointsParseError(s.into()))
    }
}

impl From<i64> for Points {
    fn from(v: i64) -> Self {
        Points::from_integer(v)
    }
}

impl Add for Points {
    type Output = Points;
    fn add(self, rhs: Points) -> Points {
        Points(self.0 + rhs.0)
    }
}

impl Sub for Points {
    type Output = Points;
    fn sub(self, rhs: Points) -> Points {
        Points(self.0 - rhs.0)
    }
}

impl Mul for Points {
    type Output = Points;
    fn mul(self, rhs: Points) -> Points {
        Points(self.0 * rhs.0)
    }
}

impl Div<i64> for Points {
    type Output = Points;
    fn div(self, rhs: i64) -> Points {
        Points(self.0 / rhs)
    }
}

impl Sum for Points {
    fn sum<I: Iterator<Item = Points>>(iter: I) -> Points {
        iter.fold(Points::ZERO, |a, b| a + b)
    }
}

impl Serialize for Points {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if let Some(i) = self.as_integer() {
            return serializer.serialize_i64(i);
        }
        // Emit a JSON number only when it reads back to the same rational.
        let f = self.to_f64();
        if Self::parse_decimal(&f.to_string()) == Some(self.0) {
            serializer.serialize_f64(f)
        } else {
            serializer.serialize_str(&self.to_string())
        }
    }
}

impl<'de> Deserialize<'de> for Points {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct PointsVisitor;

        impl Visitor<'_> for PointsVisitor {
            type Value = Points;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or a string such as \"1.5\" or \"3/2\"")
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Points, E> {
                Ok(Points::from_integer(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Points, E> {
                i64::try_from(v)
                    .map(Points::from_integer)
                    .map_err(|_| E::custom("point value out of range"))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Points, E> {
                if !v.is_finite() {
                    return Err(E::custom("point value must be finite"));
                }
                Points::parse_decimal(&v.to_string())
                    .map(Points)
                    .ok_or_else(|| E::custom(format!("point value {v} is not representable")))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Points, E> {
                v.parse().map_err(E::custom)
            }
        }

        deserializer.deserialize_any(PointsVisitor)
    }
}

/// Result of snapping a value onto a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Snap {
    Value(Points),
    /// The value sits exactly halfway between two grid members.
    Tie(Points, Points),
}

impl Snap {
    pub fn value(self) -> Option<Points> {
        match self {
            Snap::Value(v) => Some(v),
            Snap::Tie(..) => None,
        }
    }
}

/// Sorted, strictly ascending set of assignable point values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct PointGrid(Vec<Points>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GridError {
    #[error("assignable points must not be empty")]
    Empty,
    #[error("assignable points must be strictly ascending (at position {0})")]
    NotAscending(usize),
    #[error("assignable points must not be negative")]
    Negative,
}

impl PointGrid {
    pub fn new(values: Vec<Points>) -> Result<Self, GridError> {
        if values.is_empty() {
            return Err(GridError::Empty);
        }
        if values.iter().any(|v| v.is_negative()) {
            return Err(GridError::Negative);
        }
        if let Some(i) = values.windows(2).position(|w| w[0] >= w[1]) {
            return Err(GridError::NotAscending(i + 1));
        }
        Ok(PointGrid(values))
    }

    /// Evenly spaced grid `0, step, 2*step, ..., max`.
    pub fn uniform(max: Points, step: Points) -> Result<Self, GridError> {
        let mut values = vec![Points::ZERO];
        let mut next = step;
        while next <= max && step > Points::ZERO {
            values.push(next);
            next = next + step;
        }
        Self::new(values)
    }

    pub fn values(&self) -> &[Points] {
        &self.0
    }

    pub fn contains(&self, v: Points) -> bool {
        self.0.binary_search(&v).is_ok()
    }

    pub fn min(&self) -> Points {
        self.0[0]
    }

    pub fn max(&self) -> Points {
        self.0[self.0.len() - 1]
    }

    pub fn largest_gap(&self) -> Points {
        self.0
            .windows(2)
            .map(|w| w[1] - w[0])
            .max()
            .unwrap_or(Points::ZERO)
    }

    /// Nearest grid member, or an explicit tie when equidistant.
    pub fn snap(&self, value: Points) -> Snap {
        snap_to_assignable(value, self)
    }
}

impl<'de> Deserialize<'de> for PointGrid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<Points>::deserialize(deserializer)?;
        PointGrid::new(values).map_err(de::Error::custom)
    }
}

/// Nearest assignable value to `value`; exact midpoints produce [`Snap::Tie`].
pub fn snap_to_assignable(value: Points, grid: &PointGrid) -> Snap {
    let values = grid.values();
    match values.binary_search(&value) {
        Ok(i) => Snap::Value(values[i]),
        Err(0) => Snap::Value(values[0]),
        Err(i) if i == values.len() => Snap::Value(values[i - 1]),
        Err(i) => {
            let lo = values[i - 1];
            let hi = values[i];
            match (value - lo).cmp(&(hi - value)) {
                Ordering::Less => Snap::Value(lo),
                Ordering::Greater => Snap::Value(hi),
                Ordering::Equal => Snap::Tie(lo, hi),
            }
        }
    }
}
