//! Exact rational numbers used for scores, thresholds and profile traits.
//!
//! Values are stored as reduced `i128` fractions. On the wire and on disk they
//! are written as `"n/d"` strings; readers also accept plain integers, decimal
//! strings (`"0.25"`) and JSON/TOML numbers, which are converted through their
//! shortest decimal representation so `0.7` becomes exactly `7/10`.

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{One, ToPrimitive, Zero};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Maximum number of fractional decimal digits accepted when parsing.
const MAX_DECIMALS: usize = 12;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("invalid rational literal {literal:?}: {reason}")]
pub struct ParseRationalError {
    literal: String,
    reason: &'static str,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rational(Ratio<i128>);

impl Rational {
    pub fn new(numer: i128, denom: i128) -> Self {
        assert!(denom != 0, "zero denominator");
        Rational(Ratio::new(numer, denom))
    }

    pub fn from_integer(n: i128) -> Self {
        Rational(Ratio::from_integer(n))
    }

    pub fn zero() -> Self {
        Rational(Ratio::zero())
    }

    pub fn one() -> Self {
        Rational(Ratio::one())
    }

    pub fn numer(&self) -> i128 {
        *self.0.numer()
    }

    pub fn denom(&self) -> i128 {
        *self.0.denom()
    }

    /// Smallest integer not less than `self`.
    pub fn ceil_integer(&self) -> i128 {
        self.0.ceil().to_integer()
    }

    pub fn is_unit_interval(&self) -> bool {
        *self >= Rational::zero() && *self <= Rational::one()
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Converts a finite float through its shortest round-trip decimal form.
    pub fn from_f64_decimal(value: f64) -> Result<Self, ParseRationalError> {
        if !value.is_finite() {
            return Err(ParseRationalError {
                literal: value.to_string(),
                reason: "not finite",
            });
        }
        // `{}` on f64 never uses exponent notation and is the shortest round-trip form.
        format!("{value}").parse()
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer(), self.denom())
    }
}

impl FromStr for Rational {
    type Err = ParseRationalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason| ParseRationalError {
            literal: s.to_string(),
            reason,
        };
        let t = s.trim();
        if t.is_empty() {
            return Err(err("empty"));
        }
        if let Some((n, d)) = t.split_once('/') {
            let n: i128 = n.trim().parse().map_err(|_| err("bad numerator"))?;
            let d: i128 = d.trim().parse().map_err(|_| err("bad denominator"))?;
            if d == 0 {
                return Err(err("zero denominator"));
            }
            return Ok(Rational::new(n, d));
        }
        let (negative, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err("no digits"));
        }
        if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
            return Err(err("not a decimal"));
        }
        if frac_part.len() > MAX_DECIMALS {
            return Err(err("too many decimal places"));
        }
        let digits = format!("{int_part}{frac_part}");
        let magnitude: i128 = if digits.is_empty() {
            0
        } else {
            digits.parse().map_err(|_| err("overflow"))?
        };
        let denom = 10i128.pow(frac_part.len() as u32);
        let numer = if negative { -magnitude } else { magnitude };
        Ok(Rational::new(numer, denom))
    }
}

impl Add for Rational {
    type Output = Rational;
    fn add(self, rhs: Rational) -> Rational {
        Rational(self.0 + rhs.0)
    }
}

impl Sub for Rational {
    type Output = Rational;
    fn sub(self, rhs: Rational) -> Rational {
        Rational(self.0 - rhs.0)
    }
}

impl Mul for Rational {
    type Output = Rational;
    fn mul(self, rhs: Rational) -> Rational {
        Rational(self.0 * rhs.0)
    }
}

impl std::iter::Sum for Rational {
    fn sum<I: Iterator<Item = Rational>>(iter: I) -> Rational {
        iter.fold(Rational::zero(), |a, b| a + b)
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct RationalVisitor;

        impl Visitor<'_> for RationalVisitor {
            type Value = Rational;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a rational as \"n/d\", a decimal string, or a number")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Rational, E> {
                v.parse().map_err(E::custom)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Rational, E> {
                Ok(Rational::from_integer(v as i128))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Rational, E> {
                Ok(Rational::from_integer(v as i128))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Rational, E> {
                Rational::from_f64_decimal(v).map_err(E::custom)
            }
        }

        deserializer.deserialize_any(RationalVisitor)
    }
}
