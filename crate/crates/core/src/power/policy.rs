use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{FeedbackVector, ThresholdTree};
use crate::mutual_info::sha256_hex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyScheme {
    Constant,
    AppendixB,
    Eq28,
}

impl fmt::Display for PolicyScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyScheme::Constant => "constant",
            PolicyScheme::AppendixB => "appendix_b",
            PolicyScheme::Eq28 => "eq28",
        })
    }
}

impl FromStr for PolicyScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(PolicyScheme::Constant),
            "appendix_b" => Ok(PolicyScheme::AppendixB),
            "eq28" => Ok(PolicyScheme::Eq28),
            other => Err(Error::invalid(format!(
                "power scheme must be constant, appendix_b or eq28, got '{other}'"
            ))),
        }
    }
}

/// Power `P_l(f)` for every non-ACK branch of a threshold tree (linear SNR units).
///
/// Branches that end in an ACK transmit nothing and are not stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerPolicy {
    pub scheme: PolicyScheme,
    /// Long-term budget `P`.
    pub budget: f64,
    pub rounds: usize,
    pub levels: usize,
    /// Candidate powers the optimizer chose from (empty for closed-form rules).
    pub grid: Vec<f64>,
    pub table_fingerprint: Option<String>,
    /// Approximate outage `p(l)` per round, where the scheme computes it.
    pub objective: Vec<f64>,
    /// Unused per-round budget `P/L - sum q(f) P_l(f)`, where the scheme has per-round budgets.
    pub slack: Vec<f64>,
    /// Branches whose power hit a cap, with the reason.
    pub warnings: Vec<String>,
    #[serde(with = "branch_map")]
    powers: BTreeMap<FeedbackVector, f64>,
}

mod branch_map {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<FeedbackVector, f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        let text: BTreeMap<String, f64> = m.iter().map(|(f, p)| (f.to_string(), *p)).collect();
        text.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<FeedbackVector, f64>, D::Error> {
        use serde::de::Error as _;
        BTreeMap::<String, f64>::deserialize(d)?
            .into_iter()
            .map(|(k, p)| {
                let f = k.parse::<FeedbackVector>().map_err(D::Error::custom)?;
                if !(p >= 0.0 && p.is_finite()) {
                    return Err(D::Error::custom(format!("power of branch {k} must be finite and >= 0")));
                }
                Ok((f, p))
            })
            .collect()
    }
}

impl PowerPolicy {
    pub(crate) fn new(scheme: PolicyScheme, budget: f64, tree: &ThresholdTree) -> Self {
        PowerPolicy {
            scheme,
            budget,
            rounds: tree.rounds(),
            levels: tree.levels(),
            grid: Vec::new(),
            table_fingerprint: None,
            objective: Vec::new(),
            slack: Vec::new(),
            warnings: Vec::new(),
            powers: BTreeMap::new(),
        }
    }

    pub(crate) fn set(&mut self, f: FeedbackVector, power: f64) {
        self.powers.insert(f, power);
    }

    pub(crate) fn get(&self, f: &FeedbackVector) -> Option<f64> {
        self.powers.get(f).copied()
    }

    /// `P_l(f)` for a branch of length `l - 1`; 0 after an ACK.
    pub fn power(&self, f: &FeedbackVector) -> Result<f64> {
        if let Some(p) = self.get(f) {
            return Ok(p);
        }
        if f.indices().iter().any(|&k| k as usize + 1 == self.levels) {
            return Ok(0.0);
        }
        Err(Error::Configuration(format!("power policy has no entry for branch {f}")))
    }

    pub fn branches(&self) -> impl Iterator<Item = (&FeedbackVector, f64)> {
        self.powers.iter().map(|(f, p)| (f, *p))
    }

    /// Checks that the policy was made for `tree` and covers each of its branches.
    pub fn check_covers(&self, tree: &ThresholdTree) -> Result<()> {
        if self.rounds != tree.rounds() || self.levels != tree.levels() {
            return Err(Error::Configuration(format!(
                "policy is for L = {}, K = {} but the tree has L = {}, K = {}",
                self.rounds,
                self.levels,
                tree.rounds(),
                tree.levels()
            )));
        }
        let missing: Vec<String> = tree
            .branches()
            .filter(|(f, _)| !self.powers.contains_key(*f))
            .map(|(f, _)| f.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Configuration(format!(
                "power policy misses branches {}",
                missing.join(" ")
            )));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: PowerPolicy = serde_json::from_str(text).map_err(|e| Error::parse("power policy", e.to_string()))?;
        if !(p.budget > 0.0 && p.budget.is_finite()) || p.rounds == 0 || p.levels < 2 {
            return Err(Error::parse("power policy", "needs budget > 0, rounds >= 1 and levels >= 2"));
        }
        Ok(p)
    }
}

/// Every branch transmits at `P` in every round (short-term constraint).
pub fn constant_policy(tree: &ThresholdTree, budget: f64) -> Result<PowerPolicy> {
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::invalid(format!("budget must be finite and > 0, got {budget}")));
    }
    let mut p = PowerPolicy::new(PolicyScheme::Constant, budget, tree);
    for (f, _) in tree.branches() {
        p.set(f.clone(), budget);
    }
    Ok(p)
}
