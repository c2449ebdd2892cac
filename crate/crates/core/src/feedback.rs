//! Feedback vectors, quantization threshold trees and the receiver's quantizer.
//!
//! A branch is a feedback history `f = [k_1, ..., k_{l-1}]` without ACKs. Each branch stores the
//! ascending NACK thresholds `I([f,0]) < ... < I([f,K-2])`; the ACK threshold `I([f,K-1])` is the
//! rate `R` and is implicit. The entry threshold of a branch `[g,k]` is `I([g,k])`, the lower
//! edge of the cell that led to it, and the root's entry is 0.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{AckConvention, ChannelConfig};
use crate::error::{Error, Result};
use crate::rate::guarded_floor;

/// Feedback history `[k_1, ..., k_l]`.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FeedbackVector(Vec<u16>);

impl FeedbackVector {
    pub fn root() -> Self {
        FeedbackVector(Vec::new())
    }

    pub fn new(indices: Vec<u16>) -> Self {
        FeedbackVector(indices)
    }

    pub fn indices(&self) -> &[u16] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> Option<u16> {
        self.0.last().copied()
    }

    pub fn child(&self, k: u16) -> Self {
        let mut v = self.0.clone();
        v.push(k);
        FeedbackVector(v)
    }

    pub fn parent(&self) -> Option<Self> {
        if self.0.is_empty() {
            None
        } else {
            Some(FeedbackVector(self.0[..self.0.len() - 1].to_vec()))
        }
    }
}

impl fmt::Display for FeedbackVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, k) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}")?;
        }
        f.write_str("]")
    }
}

impl FromStr for FeedbackVector {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let inner = s
            .trim()
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| Error::parse("feedback vector", s))?;
        if inner.trim().is_empty() {
            return Ok(FeedbackVector::root());
        }
        inner
            .split(',')
            .map(|k| k.trim().parse::<u16>().map_err(|_| Error::parse("feedback vector", s)))
            .collect::<Result<Vec<_>>>()
            .map(FeedbackVector)
    }
}

/// How a tree was produced; only designed trees nest their thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeKind {
    Designed,
    CanonicalGrid,
}

/// Quantization thresholds for every non-ACK branch of depth `0..L`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdTree {
    rate: f64,
    levels: usize,
    rounds: usize,
    kind: TreeKind,
    branches: BTreeMap<FeedbackVector, Vec<f64>>,
}

fn tolerance(rate: f64) -> f64 {
    1e-12 * rate.abs().max(1.0)
}

impl ThresholdTree {
    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// K, including the ACK level.
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn kind(&self) -> TreeKind {
        self.kind
    }

    pub fn ack_index(&self) -> u16 {
        (self.levels - 1) as u16
    }

    pub fn branches(&self) -> impl Iterator<Item = (&FeedbackVector, &[f64])> {
        self.branches.iter().map(|(f, t)| (f, t.as_slice()))
    }

    /// Branches whose history has length `depth` (the ones transmitting in round `depth + 1`).
    pub fn branches_at(&self, depth: usize) -> impl Iterator<Item = &FeedbackVector> {
        self.branches.keys().filter(move |f| f.len() == depth)
    }

    pub fn contains(&self, f: &FeedbackVector) -> bool {
        self.branches.contains_key(f)
    }

    pub fn thresholds(&self, f: &FeedbackVector) -> Result<&[f64]> {
        self.branches
            .get(f)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Configuration(format!("branch {f} is not part of the threshold tree")))
    }

    /// `I(f)`: the lower edge of the cell that produced `f` (0 at the root).
    pub fn entry(&self, f: &FeedbackVector) -> Result<f64> {
        match (f.parent(), f.last()) {
            (Some(parent), Some(k)) => {
                let th = self.thresholds(&parent)?;
                th.get(k as usize).copied().ok_or_else(|| {
                    Error::Configuration(format!("branch {f} follows an ACK or out-of-range index"))
                })
            }
            _ => Ok(0.0),
        }
    }

    /// Feedback index for accumulated MI `acc_mi` after history `f_prev`.
    pub fn quantize(&self, f_prev: &FeedbackVector, acc_mi: f64, convention: AckConvention) -> Result<u16> {
        let th = self.thresholds(f_prev)?;
        let floor = self.entry(f_prev)?;
        quantize_cell(th, floor, self.rate, acc_mi, convention).ok_or_else(|| {
            Error::ProtocolViolation(format!(
                "accumulated MI {acc_mi} below the floor {floor} of branch {f_prev}"
            ))
        })
    }

    fn check(&self) -> Result<()> {
        let tol = tolerance(self.rate);
        for (f, th) in &self.branches {
            let fail = |reason: String| Error::DesignInfeasible {
                branch: f.to_string(),
                reason,
            };
            if th.len() != self.levels - 1 {
                return Err(fail(format!("{} thresholds for K = {}", th.len(), self.levels)));
            }
            if th[0] < 0.0 || th.iter().any(|t| !t.is_finite()) {
                return Err(fail("thresholds must be finite and >= 0".into()));
            }
            if th.windows(2).any(|w| w[1] - w[0] <= tol) || *th.last().unwrap() >= self.rate - tol {
                return Err(fail(format!(
                    "cannot place {} strictly ascending thresholds below R = {}",
                    th.len(),
                    self.rate
                )));
            }
            if self.kind == TreeKind::Designed && th[0] != self.entry(f)? {
                return Err(fail("lowest threshold differs from the branch entry".into()));
            }
        }
        Ok(())
    }

    fn build(
        cfg: &ChannelConfig,
        levels: usize,
        kind: TreeKind,
        mut thresholds_for: impl FnMut(&FeedbackVector, f64) -> Result<Vec<f64>>,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut branches = BTreeMap::new();
        let mut frontier = vec![(FeedbackVector::root(), 0.0)];
        for depth in 0..cfg.rounds {
            let mut next = Vec::new();
            for (f, entry) in frontier {
                let th = thresholds_for(&f, entry)?;
                if depth + 1 < cfg.rounds {
                    for (k, &t) in th.iter().enumerate() {
                        next.push((f.child(k as u16), t));
                    }
                }
                branches.insert(f, th);
            }
            frontier = next;
        }
        let tree = ThresholdTree {
            rate: cfg.rate.value(),
            levels,
            rounds: cfg.rounds,
            kind,
            branches,
        };
        tree.check()?;
        Ok(tree)
    }
}

/// Index of the cell of `th` (ACK = `th.len()`) holding `acc_mi`; `None` below `floor`.
pub(crate) fn quantize_cell(th: &[f64], floor: f64, rate: f64, acc_mi: f64, convention: AckConvention) -> Option<u16> {
    if !(acc_mi >= floor - 1e-12) {
        return None;
    }
    if convention.is_ack(acc_mi, rate) {
        return Some(th.len() as u16);
    }
    Some(th.partition_point(|&t| t <= acc_mi).saturating_sub(1) as u16)
}

/// Thresholds of one branch with entry threshold `entry`.
fn design_branch(cfg: &ChannelConfig, f: &FeedbackVector, entry: f64) -> Result<Vec<f64>> {
    let rate = cfg.rate.value();
    let slots = cfg.levels - 2;
    let tau = cfg.tau();
    let t_entry = guarded_floor(cfg.blocks as f64 * entry / cfg.bits_per_symbol() as f64);

    let grid: Vec<f64> = (t_entry + 1..=tau)
        .map(|t| cfg.grid_level(t))
        .filter(|&v| v > entry && v < rate)
        .collect();
    let placed: Vec<f64> = if grid.len() <= slots {
        grid
    } else {
        // not enough levels for every grid point: keep them from both ends inwards, top first
        let mut keep: Vec<f64> = alternate(grid.len()).take(slots).map(|i| grid[i]).collect();
        keep.sort_by(f64::total_cmp);
        keep
    };

    let mut bounds = Vec::with_capacity(placed.len() + 2);
    bounds.push(entry);
    bounds.extend_from_slice(&placed);
    bounds.push(rate);
    let cells = bounds.len() - 1;
    let mut counts = vec![0usize; cells];
    let order: Vec<usize> = alternate(cells).collect();
    for i in 0..slots - placed.len() {
        counts[order[i % cells]] += 1;
    }

    let mut th = Vec::with_capacity(slots + 1);
    th.push(entry);
    th.extend_from_slice(&placed);
    for (c, &n) in counts.iter().enumerate() {
        let (lo, hi) = (bounds[c], bounds[c + 1]);
        th.extend((1..=n).map(|j| lo + (hi - lo) * j as f64 / (n + 1) as f64));
    }
    th.sort_by(f64::total_cmp);

    let tol = tolerance(rate);
    if th.windows(2).any(|w| w[1] - w[0] <= tol) || *th.last().unwrap() >= rate - tol {
        return Err(Error::DesignInfeasible {
            branch: f.to_string(),
            reason: format!("K = {} leaves no room between {entry} and R = {rate}", cfg.levels),
        });
    }
    Ok(th)
}

/// Indices `n-1, 0, n-2, 1, ...`: alternately the highest and lowest not yet taken.
fn alternate(n: usize) -> impl Iterator<Item = usize> {
    (0..n).map(move |i| if i % 2 == 0 { n - 1 - i / 2 } else { i / 2 })
}

/// Builds the threshold tree of `cfg` (K levels, depth `L - 1`).
///
/// For a branch with entry `e`, with `t' = floor(B e / M)` and `tau = floor(B R / M)`:
/// the lowest threshold is `e`; the grid levels `M t / B`, `t = t'+1..=tau`, strictly inside
/// `(e, R)` come next; the remaining thresholds go round-robin into the cells those levels cut
/// out of `(e, R)`, taken top cell first, then bottom, then second from the top, and so on, and
/// split each cell into equal parts.
pub fn design_thresholds(cfg: &ChannelConfig) -> Result<ThresholdTree> {
    ThresholdTree::build(cfg, cfg.levels, TreeKind::Designed, |f, entry| design_branch(cfg, f, entry))
}

/// Fixed-grid tree with `K = ceil(BR/M) + 1`: every branch quantizes against `M t / B < R`.
pub fn canonical_grid_tree(cfg: &ChannelConfig) -> Result<ThresholdTree> {
    let levels = cfg.sufficient_levels();
    let rate = cfg.rate.value();
    let grid: Vec<f64> = (0..=cfg.tau()).map(|t| cfg.grid_level(t)).filter(|&v| v < rate).collect();
    debug_assert_eq!(grid.len(), levels - 1);
    ThresholdTree::build(cfg, levels, TreeKind::CanonicalGrid, |_, _| Ok(grid.clone()))
}

#[derive(Serialize, Deserialize)]
struct TreeFile {
    rate: f64,
    levels: usize,
    rounds: usize,
    kind: TreeKind,
    branches: BTreeMap<String, Vec<f64>>,
}

impl Serialize for ThresholdTree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TreeFile {
            rate: self.rate,
            levels: self.levels,
            rounds: self.rounds,
            kind: self.kind,
            branches: self.branches.iter().map(|(f, t)| (f.to_string(), t.clone())).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ThresholdTree {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let file = TreeFile::deserialize(d)?;
        let branches = file
            .branches
            .into_iter()
            .map(|(k, v)| k.parse::<FeedbackVector>().map(|f| (f, v)))
            .collect::<Result<BTreeMap<_, _>>>()
            .map_err(D::Error::custom)?;
        let tree = ThresholdTree {
            rate: file.rate,
            levels: file.levels,
            rounds: file.rounds,
            kind: file.kind,
            branches,
        };
        if tree.levels < 2 || !tree.contains(&FeedbackVector::root()) {
            return Err(D::Error::custom("threshold tree needs K >= 2 and a root branch"));
        }
        tree.check().map_err(D::Error::custom)?;
        Ok(tree)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::Constellation;
    use crate::rate::Rate;

    fn fv(v: &[u16]) -> FeedbackVector {
        FeedbackVector::new(v.to_vec())
    }

    fn siso_tree() -> ThresholdTree {
        design_thresholds(&ChannelConfig::siso_fig5(4)).unwrap()
    }

    #[test]
    fn reproduces_siso_thresholds() {
        let t = siso_tree();
        assert_eq!(t.thresholds(&fv(&[])).unwrap(), &[0.0, 2.0, 2.75]);
        assert_eq!(t.thresholds(&fv(&[0])).unwrap(), &[0.0, 2.0, 2.75]);
        assert_eq!(t.thresholds(&fv(&[1])).unwrap(), &[2.0, 2.5, 3.0]);
        assert_eq!(t.thresholds(&fv(&[2])).unwrap(), &[2.75, 3.0, 3.25]);
        assert_eq!(t.branches().count(), 4);
    }

    #[test]
    fn quantizer_cells() {
        let t = siso_tree();
        let root = FeedbackVector::root();
        let conv = AckConvention::Outage;
        assert_eq!(t.quantize(&root, 2.1, conv).unwrap(), 1);
        assert_eq!(t.quantize(&root, 0.0, conv).unwrap(), 0);
        assert_eq!(t.quantize(&root, 3.5, conv).unwrap(), 3);
        assert_eq!(t.quantize(&root, 3.5, AckConvention::RandomCoding).unwrap(), 2);
        assert_eq!(t.quantize(&fv(&[1]), 2.0, conv).unwrap(), 0);
        assert_eq!(t.quantize(&fv(&[1]), 2.0 - 1e-13, conv).unwrap(), 0);
        assert!(matches!(t.quantize(&fv(&[1]), 1.9, conv), Err(Error::ProtocolViolation(_))));
        assert!(t.quantize(&fv(&[3]), 3.6, conv).is_err());
    }

    #[test]
    fn canonical_grid_for_siso() {
        let t = canonical_grid_tree(&ChannelConfig::siso_fig5(4)).unwrap();
        assert_eq!(t.levels(), 3);
        for (_, th) in t.branches() {
            assert_eq!(th, &[0.0, 2.0]);
        }
        // entries follow the grid, so [1] quantizes from 2 upwards
        assert_eq!(t.entry(&fv(&[1])).unwrap(), 2.0);
        assert_eq!(t.quantize(&fv(&[1]), 2.5, AckConvention::Outage).unwrap(), 1);
    }

    #[test]
    fn canonical_levels_near_full_rate() {
        // R = 4 - 0.1 with B = 2, M = 4: ceil(2 - 0.05) + 1 = 3 levels
        let cfg = ChannelConfig::new(1, 1, 2, Constellation::qam(4).unwrap(), Rate::ratio(39, 10).unwrap(), 2, 2)
            .unwrap();
        assert_eq!(canonical_grid_tree(&cfg).unwrap().levels(), 3);
        // integer BR/M: the grid stops below R
        let cfg = cfg.with_levels(2);
        let cfg = ChannelConfig {
            rate: Rate::ratio(2, 1).unwrap(),
            ..cfg
        };
        let t = canonical_grid_tree(&cfg).unwrap();
        assert_eq!(t.levels(), 2);
        assert_eq!(t.thresholds(&FeedbackVector::root()).unwrap(), &[0.0]);
    }

    #[test]
    fn one_bit_tree_is_zero_and_rate() {
        let t = design_thresholds(&ChannelConfig::siso_fig5(2)).unwrap();
        for (_, th) in t.branches() {
            assert_eq!(th, &[0.0]);
        }
    }

    #[test]
    fn scarce_levels_keep_top_grid_point_first() {
        // tau = 3 grid points 1, 2, 3 below R = 3.5 (B = 4, M = 4) but only K - 2 = 1 free slot
        let cfg = ChannelConfig::new(1, 1, 4, Constellation::qam(4).unwrap(), Rate::ratio(7, 2).unwrap(), 1, 3)
            .unwrap();
        let t = design_thresholds(&cfg).unwrap();
        assert_eq!(t.thresholds(&FeedbackVector::root()).unwrap(), &[0.0, 3.0]);
        let cfg = cfg.with_levels(4);
        let t = design_thresholds(&cfg).unwrap();
        assert_eq!(t.thresholds(&FeedbackVector::root()).unwrap(), &[0.0, 1.0, 3.0]);
    }

    #[test]
    fn leftovers_fill_top_then_bottom() {
        // K = 6 on the SISO config: grid point 2, three leftovers -> (2,3.5) gets 2, (0,2) gets 1
        let t = design_thresholds(&ChannelConfig::siso_fig5(6)).unwrap();
        assert_eq!(t.thresholds(&FeedbackVector::root()).unwrap(), &[0.0, 1.0, 2.0, 2.5, 3.0]);
    }

    #[test]
    fn infeasible_when_levels_exhaust_resolution() {
        let cfg = ChannelConfig::siso_fig5(4);
        let bad = ChannelConfig {
            rate: Rate::from_f64(1e-13).unwrap(),
            ..cfg
        };
        assert!(matches!(design_thresholds(&bad), Err(Error::DesignInfeasible { .. })));
    }

    #[test]
    fn json_round_trip() {
        let t = siso_tree();
        let s = serde_json::to_string(&t).unwrap();
        let back: ThresholdTree = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        let broken = s.replace("2.5", "3.5");
        assert!(serde_json::from_str::<ThresholdTree>(&broken).is_err());
    }

    #[test]
    fn feedback_vector_text() {
        assert_eq!(fv(&[0, 2]).to_string(), "[0,2]");
        assert_eq!("[0,2]".parse::<FeedbackVector>().unwrap(), fv(&[0, 2]));
        assert_eq!("[]".parse::<FeedbackVector>().unwrap(), FeedbackVector::root());
        assert!("0,2".parse::<FeedbackVector>().is_err());
    }
}
