//! Transmission rate with an exact rational form.
//!
//! The diversity formulas take floors and ceilings of `B(N_t - R/M)`, which jump exactly at the
//! rates where `BR/M` is an integer. Rates read from text (`"7/2"`, `"3.5"`) are kept as exact
//! ratios so those jumps land where they should; rates built from an `f64` fall back to an
//! epsilon-guarded evaluation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when a floating rate has to be floored or ceiled.
pub const FLOAT_GUARD: f64 = 1e-9;

/// Rate in bits per channel use.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Rate {
    value: f64,
    ratio: Option<(i64, i64)>,
}

fn gcd(mut a: i64, mut b: i64) -> i64 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.max(1)
}

impl Rate {
    /// Exact rate `num/den`.
    pub fn ratio(num: i64, den: i64) -> Result<Self> {
        if den <= 0 {
            return Err(Error::invalid(format!("rate denominator must be positive, got {den}")));
        }
        let g = gcd(num, den);
        let (num, den) = (num / g, den / g);
        Ok(Rate {
            value: num as f64 / den as f64,
            ratio: Some((num, den)),
        })
    }

    /// Rate from a float; floors and ceilings use [`FLOAT_GUARD`].
    pub fn from_f64(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::invalid("rate must be finite"));
        }
        Ok(Rate { value, ratio: None })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn as_ratio(&self) -> Option<(i64, i64)> {
        self.ratio
    }

    /// Floor of `a + b * rate / c` for integers `a, b, c` with `c > 0`.
    pub(crate) fn floor_affine(&self, a: i64, b: i64, c: i64) -> i64 {
        match self.ratio {
            Some((p, q)) => {
                let num = a as i128 * c as i128 * q as i128 + b as i128 * p as i128;
                let den = c as i128 * q as i128;
                num.div_euclid(den) as i64
            }
            None => guarded_floor(a as f64 + b as f64 * self.value / c as f64),
        }
    }

    /// Ceiling of `a + b * rate / c` for integers `a, b, c` with `c > 0`.
    pub(crate) fn ceil_affine(&self, a: i64, b: i64, c: i64) -> i64 {
        match self.ratio {
            Some(_) => -Rate::floor_affine(self, -a, -b, c),
            None => guarded_ceil(a as f64 + b as f64 * self.value / c as f64),
        }
    }

    /// Whether `b * rate / c` is an integer.
    pub(crate) fn is_integer_multiple(&self, b: i64, c: i64) -> bool {
        match self.ratio {
            Some((p, q)) => (b as i128 * p as i128) % (c as i128 * q as i128) == 0,
            None => {
                let x = b as f64 * self.value / c as f64;
                (x - x.round()).abs() < FLOAT_GUARD
            }
        }
    }
}

pub(crate) fn guarded_floor(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() < FLOAT_GUARD {
        r as i64
    } else {
        x.floor() as i64
    }
}

pub(crate) fn guarded_ceil(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() < FLOAT_GUARD {
        r as i64
    } else {
        x.ceil() as i64
    }
}

impl FromStr for Rate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n: i64 = n.trim().parse().map_err(|_| Error::parse("rate", s))?;
            let d: i64 = d.trim().parse().map_err(|_| Error::parse("rate", s))?;
            return Rate::ratio(n, d);
        }
        // plain decimals are exact ratios over a power of ten
        let (int_part, frac_part) = s.split_once('.').unwrap_or((s, ""));
        let digits_ok = !int_part.is_empty()
            && int_part.trim_start_matches('-').chars().all(|c| c.is_ascii_digit())
            && frac_part.chars().all(|c| c.is_ascii_digit())
            && frac_part.len() <= 12;
        if digits_ok {
            let den = 10i64.pow(frac_part.len() as u32);
            let joined = format!("{int_part}{frac_part}");
            let num: i64 = joined.parse().map_err(|_| Error::parse("rate", s))?;
            return Rate::ratio(num, den);
        }
        let v: f64 = s.parse().map_err(|_| Error::parse("rate", s))?;
        Rate::from_f64(v)
    }
}

impl TryFrom<String> for Rate {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Rate> for String {
    fn from(r: Rate) -> String {
        r.to_string()
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ratio {
            Some((n, 1)) => write!(f, "{n}"),
            Some((n, d)) => write!(f, "{n}/{d}"),
            None => write!(f, "{}", self.value),
        }
    }
}
