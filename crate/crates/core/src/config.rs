//! One ARQ scenario: antennas, blocks, constellation, rate, delay and feedback levels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::mutual_info::{fmt17, sha256_hex};
use crate::rate::Rate;

/// When the receiver declares success.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AckConvention {
    /// ACK iff accumulated MI `>= R` (outage analysis).
    #[default]
    Outage,
    /// ACK iff accumulated MI `> R` (random-coding analysis).
    RandomCoding,
}

impl FromStr for AckConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "outage" | ">=" => Ok(AckConvention::Outage),
            "random-coding" | "random_coding" | ">" => Ok(AckConvention::RandomCoding),
            other => Err(Error::invalid(format!(
                "ack convention must be 'outage' or 'random-coding', got '{other}'"
            ))),
        }
    }
}

impl fmt::Display for AckConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AckConvention::Outage => "outage",
            AckConvention::RandomCoding => "random-coding",
        })
    }
}

impl AckConvention {
    pub fn is_ack(self, acc_mi: f64, rate: f64) -> bool {
        match self {
            AckConvention::Outage => acc_mi >= rate,
            AckConvention::RandomCoding => acc_mi > rate,
        }
    }
}

/// `(N_t, N_r, B, M, R, L, K, X)`.
///
/// `block_length` (channel uses per block) is kept for bookkeeping only: every quantity here
/// is per channel use and outage does not depend on it.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelConfig {
    pub n_t: usize,
    pub n_r: usize,
    pub blocks: usize,
    pub constellation: Constellation,
    pub rate: Rate,
    pub rounds: usize,
    pub levels: usize,
    pub block_length: Option<usize>,
}

impl ChannelConfig {
    pub fn new(
        n_t: usize,
        n_r: usize,
        blocks: usize,
        constellation: Constellation,
        rate: Rate,
        rounds: usize,
        levels: usize,
    ) -> Result<Self> {
        let cfg = ChannelConfig {
            n_t,
            n_r,
            blocks,
            constellation,
            rate,
            rounds,
            levels,
            block_length: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The 16-QAM SISO scenario with `B = 2`, `R = 7/2`, `L = 2`.
    pub fn siso_fig5(levels: usize) -> Self {
        ChannelConfig::new(1, 1, 2, Constellation::qam(4).unwrap(), Rate::ratio(7, 2).unwrap(), 2, levels)
            .expect("preset is valid")
    }

    /// The 16-QAM `2 x 1` scenario with `B = 1`, `R = 15/2`, `L = 2`.
    pub fn mimo_fig6(levels: usize) -> Self {
        ChannelConfig::new(2, 1, 1, Constellation::qam(4).unwrap(), Rate::ratio(15, 2).unwrap(), 2, levels)
            .expect("preset is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let errors = self.violations();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }

    pub(crate) fn violations(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if self.n_t == 0 {
            errors.push("nt: must be >= 1".to_string());
        }
        if self.n_r == 0 {
            errors.push("nr: must be >= 1".to_string());
        }
        if self.blocks == 0 {
            errors.push("b: must be >= 1".to_string());
        }
        if self.rounds == 0 {
            errors.push("L: must be >= 1".to_string());
        }
        if self.levels < 2 {
            errors.push("K: K >= 2 required (one ACK level plus at least one NACK level)".to_string());
        }
        let r = self.rate.value();
        if !(r > 0.0 && r < self.max_rate()) {
            errors.push(format!("rate: must lie in (0, M*nt) = (0, {})", self.max_rate()));
        }
        if let Err(e) = self.constellation.joint_alphabet(self.n_t.max(1)) {
            errors.push(format!("nt: {e}"));
        }
        errors
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.constellation.bits_per_symbol()
    }

    /// `M * N_t`, the largest per-round mutual information.
    pub fn max_rate(&self) -> f64 {
        (self.bits_per_symbol() as usize * self.n_t) as f64
    }

    /// `tau = floor(B R / M)`.
    pub fn tau(&self) -> i64 {
        self.rate.floor_affine(0, self.blocks as i64, self.bits_per_symbol() as i64)
    }

    /// `ceil(B R / M) + 1`, the smallest K for which multi-bit feedback reaches full diversity.
    pub fn sufficient_levels(&self) -> usize {
        (self.rate.ceil_affine(0, self.blocks as i64, self.bits_per_symbol() as i64) + 1) as usize
    }

    /// Grid level `M t / B`.
    pub fn grid_level(&self, t: i64) -> f64 {
        (self.bits_per_symbol() as i64 * t) as f64 / self.blocks as f64
    }

    /// SHA-256 over every field, constellation points included.
    pub fn fingerprint(&self) -> String {
        let points: Vec<String> = self
            .constellation
            .points()
            .iter()
            .map(|p| format!("{}:{}", fmt17(p.re), fmt17(p.im)))
            .collect();
        let text = format!(
            "nt={};nr={};b={};constellation={};points={};rate={};L={};K={};block_length={:?}",
            self.n_t,
            self.n_r,
            self.blocks,
            self.constellation.name(),
            points.join(","),
            self.rate,
            self.rounds,
            self.levels,
            self.block_length
        );
        sha256_hex(text.as_bytes())
    }

    pub fn with_levels(&self, levels: usize) -> Self {
        ChannelConfig {
            levels,
            ..self.clone()
        }
    }

    pub fn with_rounds(&self, rounds: usize) -> Self {
        ChannelConfig {
            rounds,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        let s = ChannelConfig::siso_fig5(4);
        assert_eq!(s.tau(), 1);
        assert_eq!(s.sufficient_levels(), 3);
        assert_eq!(s.grid_level(1), 2.0);
        let m = ChannelConfig::mimo_fig6(3);
        assert_eq!(m.tau(), 1);
        assert_eq!(m.sufficient_levels(), 3);
    }

    #[test]
    fn collects_every_violation() {
        let err = ChannelConfig::new(1, 0, 0, Constellation::qam(4).unwrap(), Rate::ratio(9, 1).unwrap(), 1, 1)
            .unwrap_err();
        match err {
            Error::Validation(v) => assert_eq!(v.len(), 4, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ack_conventions() {
        assert!(AckConvention::Outage.is_ack(3.5, 3.5));
        assert!(!AckConvention::RandomCoding.is_ack(3.5, 3.5));
        assert_eq!("random-coding".parse::<AckConvention>().unwrap(), AckConvention::RandomCoding);
    }
}
