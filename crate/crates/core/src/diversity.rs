//! Closed-form outage diversities and SNR exponents, and the rate-diversity-delay staircases.
//!
//! All formulas take floors or ceilings of `B(N_t - R/M)`-type arguments. They are evaluated in
//! exact rational arithmetic when the rate is a ratio (see [`Rate`]). At rates where `BR/M` is an
//! integer the results are still returned, flagged [`Validity::BoundaryExcluded`].

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rate::Rate;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiversityQuery {
    pub n_t: u32,
    pub n_r: u32,
    pub blocks: u32,
    pub bits: u32,
    pub rate: Rate,
    pub delay: u32,
    pub feedback_levels: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Validity {
    Exact,
    BoundaryExcluded,
}

impl fmt::Display for Validity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Validity::Exact => "exact",
            Validity::BoundaryExcluded => "boundary-excluded",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DiversityValue {
    pub value: u64,
    pub validity: Validity,
}

impl DiversityQuery {
    pub fn new(
        n_t: u32,
        n_r: u32,
        blocks: u32,
        bits: u32,
        rate: Rate,
        delay: u32,
        feedback_levels: u32,
    ) -> Result<Self> {
        let q = DiversityQuery {
            n_t,
            n_r,
            blocks,
            bits,
            rate,
            delay,
            feedback_levels,
        };
        if n_t == 0 || n_r == 0 || blocks == 0 || bits == 0 || delay == 0 {
            return Err(Error::invalid("n_t, n_r, b, m and L must all be >= 1"));
        }
        if feedback_levels < 2 {
            return Err(Error::invalid("K must be >= 2"));
        }
        let r = rate.value();
        if !(r > 0.0 && r < (bits * n_t) as f64) {
            return Err(Error::invalid(format!("rate {rate} must lie in (0, {})", bits * n_t)));
        }
        Ok(q)
    }

    pub fn with_rate(&self, rate: Rate) -> Result<Self> {
        DiversityQuery::new(self.n_t, self.n_r, self.blocks, self.bits, rate, self.delay, self.feedback_levels)
    }

    /// `BR/M` is an integer: the closed forms are not proven at these rates.
    pub fn is_integer_case(&self) -> bool {
        self.rate.is_integer_multiple(self.blocks as i64, self.bits as i64)
    }

    /// `ceil(BR/M) + 1`.
    pub fn sufficient_levels(&self) -> u32 {
        (self.rate.ceil_affine(0, self.blocks as i64, self.bits as i64) + 1) as u32
    }

    fn boundary(&self) -> Validity {
        if self.is_integer_case() {
            Validity::BoundaryExcluded
        } else {
            Validity::Exact
        }
    }

    fn diversity_per_block(&self) -> u64 {
        (self.blocks * self.n_t * self.n_r) as u64
    }

    fn check_round(&self, round: u32) -> Result<()> {
        if round == 0 || round > self.delay {
            return Err(Error::Precondition(format!("round {round} outside 1..={}", self.delay)));
        }
        Ok(())
    }
}

fn nonneg(v: i64) -> u64 {
    v.max(0) as u64
}

/// `d_dagger(R) = N_r (1 + floor(B (N_t - R/M)))`, the Singleton bound.
pub fn d_dagger(q: &DiversityQuery) -> DiversityValue {
    let fl = q.rate.floor_affine((q.blocks * q.n_t) as i64, -(q.blocks as i64), q.bits as i64);
    DiversityValue {
        value: q.n_r as u64 * nonneg(1 + fl),
        validity: Validity::Exact,
    }
}

/// `d_ddagger(R) = N_r ceil(B (N_t - R/M))`, the random-coding SNR exponent.
pub fn d_ddagger(q: &DiversityQuery) -> DiversityValue {
    let cl = q.rate.ceil_affine((q.blocks * q.n_t) as i64, -(q.blocks as i64), q.bits as i64);
    DiversityValue {
        value: q.n_r as u64 * nonneg(cl),
        validity: Validity::Exact,
    }
}

fn geometric_shape(q: &DiversityQuery, round: u32, base: u64) -> Result<u64> {
    let growth = (1 + q.diversity_per_block())
        .checked_pow(round - 1)
        .and_then(|g| g.checked_mul(base + 1))
        .ok_or_else(|| Error::invalid(format!("diversity at round {round} overflows u64")))?;
    Ok(growth - 1)
}

fn check_levels(q: &DiversityQuery) -> Result<()> {
    let need = q.sufficient_levels();
    if q.feedback_levels < need {
        return Err(Error::Precondition(format!(
            "K = {} < ceil(BR/M) + 1 = {need}; use one_bit_diversity for K = 2, other K are not covered",
            q.feedback_levels
        )));
    }
    Ok(())
}

/// Optimal outage diversity with multi-bit feedback:
/// `d_l(R) = (1 + B N_t N_r)^(l-1) (d_dagger(R) + 1) - 1`.
pub fn multi_bit_diversity(q: &DiversityQuery, round: u32) -> Result<DiversityValue> {
    q.check_round(round)?;
    check_levels(q)?;
    Ok(DiversityValue {
        value: geometric_shape(q, round, d_dagger(q).value)?,
        validity: q.boundary(),
    })
}

/// Achievable SNR exponent of random codes with multi-bit feedback (same shape with `d_ddagger`).
pub fn random_coding_exponent(q: &DiversityQuery, round: u32) -> Result<DiversityValue> {
    q.check_round(round)?;
    check_levels(q)?;
    Ok(DiversityValue {
        value: geometric_shape(q, round, d_ddagger(q).value)?,
        validity: q.boundary(),
    })
}

/// Optimal diversity with one-bit (ACK/NACK) feedback:
/// `d_1 = d_dagger`,
/// `d_l = B N_t N_r (l - 1 + sum_{j=1}^{l-2} d_j) + (1 + d_{l-1}) d_1`.
pub fn one_bit_diversity(q: &DiversityQuery, round: u32) -> Result<DiversityValue> {
    if round == 0 {
        return Err(Error::Precondition("round must be >= 1".into()));
    }
    let d1 = d_dagger(q).value;
    let per_block = q.diversity_per_block();
    let overflow = || Error::invalid(format!("one-bit diversity at round {round} overflows u64"));
    let mut memo = vec![d1];
    let mut prefix = 0u64; // sum of d_1..d_{l-2}
    for l in 2..=round as u64 {
        if l >= 3 {
            prefix = prefix.checked_add(memo[(l - 3) as usize]).ok_or_else(overflow)?;
        }
        let prev = memo[(l - 2) as usize];
        let v = (l - 1)
            .checked_add(prefix)
            .and_then(|s| s.checked_mul(per_block))
            .and_then(|s| (1 + prev).checked_mul(d1).and_then(|t| s.checked_add(t)))
            .ok_or_else(overflow)?;
        memo.push(v);
    }
    Ok(DiversityValue {
        value: memo[round as usize - 1],
        validity: q.boundary(),
    })
}

/// Optimal diversity with constant power over `L = q.delay` rounds:
/// `N_r (1 + floor(B L (N_t - R/(L M))))`.
pub fn constant_power_diversity(q: &DiversityQuery) -> DiversityValue {
    let fl = q
        .rate
        .floor_affine((q.blocks * q.delay * q.n_t) as i64, -(q.blocks as i64), q.bits as i64);
    DiversityValue {
        value: q.n_r as u64 * nonneg(1 + fl),
        validity: q.boundary(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    MultiBit,
    OneBit,
    ConstantPower,
    RandomCoding,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::ConstantPower,
        Scheme::OneBit,
        Scheme::MultiBit,
        Scheme::RandomCoding,
    ];
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::MultiBit => "multi_bit",
            Scheme::OneBit => "one_bit",
            Scheme::ConstantPower => "constant",
            Scheme::RandomCoding => "random_coding",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi_bit" | "multi-bit" => Ok(Scheme::MultiBit),
            "one_bit" | "one-bit" => Ok(Scheme::OneBit),
            "constant" | "constant_power" | "constant-power" => Ok(Scheme::ConstantPower),
            "random_coding" | "random-coding" => Ok(Scheme::RandomCoding),
            other => Err(Error::invalid(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Diversity of `scheme` at `round` for the query as given. Multi-bit schemes need
/// `round <= L` and enough levels; constant power is evaluated with `L = round`.
pub fn scheme_diversity(q: &DiversityQuery, scheme: Scheme, round: u32) -> Result<DiversityValue> {
    match scheme {
        Scheme::MultiBit => multi_bit_diversity(q, round),
        Scheme::RandomCoding => random_coding_exponent(q, round),
        Scheme::OneBit => one_bit_diversity(q, round),
        Scheme::ConstantPower => {
            if round == 0 {
                return Err(Error::Precondition("round must be >= 1".into()));
            }
            Ok(constant_power_diversity(&DiversityQuery { delay: round, ..*q }))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub rate: f64,
    pub value: DiversityValue,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TradeoffCurve {
    pub scheme: Scheme,
    pub round: u32,
    pub points: Vec<CurvePoint>,
    /// Rates inside the grid span where the staircase jumps (`BR/M` integer).
    pub discontinuities: Vec<f64>,
}

/// Staircase of `scheme` over `rates`.
///
/// Multi-bit curves describe systems with `K >= ceil(BR/M) + 1`, so the feedback levels of the
/// template are raised to that bound at each rate.
pub fn tradeoff_curve(template: &DiversityQuery, rates: &[f64], scheme: Scheme, round: u32) -> Result<TradeoffCurve> {
    let mut points = Vec::with_capacity(rates.len());
    for &r in rates {
        let mut q = template.with_rate(Rate::from_f64(r)?)?;
        q.delay = q.delay.max(round);
        q.feedback_levels = q.feedback_levels.max(q.sufficient_levels());
        points.push(CurvePoint {
            rate: r,
            value: scheme_diversity(&q, scheme, round)?,
        });
    }
    let (lo, hi) = rates
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
    let step = template.bits as f64 / template.blocks as f64;
    let discontinuities = (1..(template.blocks * template.n_t))
        .map(|t| t as f64 * step)
        .filter(|&r| r >= lo && r <= hi)
        .collect();
    Ok(TradeoffCurve {
        scheme,
        round,
        points,
        discontinuities,
    })
}
