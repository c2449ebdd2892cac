use crate::error::{Error, Result};
use crate::feedback::{FeedbackVector, ThresholdTree};
use crate::mutual_info::MiCdfTable;

use super::PowerPolicy;

/// One branch `f` transmitting in round `l = |f| + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchRow {
    pub branch: FeedbackVector,
    /// Approximate probability `q(f)` of reaching the branch.
    pub q: f64,
    /// Entry threshold `I(f)`.
    pub entry: f64,
    /// Outage bound on each candidate power, nonincreasing (filled by `fill_curves`).
    pub curve: Vec<f64>,
}

/// Branches of one round with their approximate probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchTable {
    pub round: usize,
    pub rows: Vec<BranchRow>,
    /// Probability of having been acknowledged before this round.
    pub ack_mass: f64,
}

fn in_branch(f: &FeedbackVector, e: Error) -> Error {
    match e {
        Error::OutOfRange(m) => Error::OutOfRange(format!("branch {f}: {m}")),
        other => other,
    }
}

/// `Pr[I <= x]` with the empty event below zero.
fn round_cdf(table: &MiCdfTable, power: f64, x: f64) -> Result<f64> {
    if x <= 0.0 {
        Ok(0.0)
    } else {
        table.cdf_at(power, x)
    }
}

/// Upper bound `Pr[I_l + I(f) < R]` on the outage of a branch entered at `entry`.
pub fn outage_bound(table: &MiCdfTable, entry: f64, power: f64, rate: f64) -> Result<f64> {
    if rate - entry <= 0.0 {
        table.cdf_at(power, 0.0)?;
        return Ok(table.floor());
    }
    table.cdf_at(power, rate - entry)
}

/// Conditional probabilities of the `K` feedback indices after branch `f` at `power`, with the
/// accumulated MI replaced by the entry threshold of `f`.
pub fn branch_split(tree: &ThresholdTree, table: &MiCdfTable, f: &FeedbackVector, power: f64) -> Result<Vec<f64>> {
    let th = tree.thresholds(f)?;
    let entry = tree.entry(f)?;
    let rate = tree.rate();
    let mut upper: Vec<f64> = th[1..].to_vec();
    upper.push(rate);
    let mut probs = Vec::with_capacity(th.len() + 1);
    let mut below = round_cdf(table, power, th[0] - entry).map_err(|e| in_branch(f, e))?;
    for hi in upper {
        let next = round_cdf(table, power, hi - entry).map_err(|e| in_branch(f, e))?;
        probs.push((next - below).max(0.0));
        below = next;
    }
    probs.push(1.0 - below);
    Ok(probs)
}

/// Approximate branch probabilities for the branches transmitting in `round` (1-based).
///
/// Needs the powers of every earlier round in `policy`.
pub fn approx_branch_probs(
    tree: &ThresholdTree,
    policy: &PowerPolicy,
    table: &MiCdfTable,
    round: usize,
) -> Result<BranchTable> {
    if round == 0 || round > tree.rounds() {
        return Err(Error::invalid(format!("round must be in 1..={}, got {round}", tree.rounds())));
    }
    let mut level = vec![(FeedbackVector::root(), 1.0)];
    let mut ack_mass = 0.0;
    for _ in 1..round {
        let mut next = Vec::new();
        for (f, q) in level {
            let probs = branch_split(tree, table, &f, policy.power(&f)?)?;
            let (ack, nack) = probs.split_last().unwrap();
            ack_mass += q * ack;
            next.extend(nack.iter().enumerate().map(|(k, p)| (f.child(k as u16), q * p)));
        }
        level = next;
    }
    let rows = level
        .into_iter()
        .map(|(branch, q)| {
            let entry = tree.entry(&branch)?;
            Ok(BranchRow {
                branch,
                q,
                entry,
                curve: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BranchTable { round, rows, ack_mass })
}

impl BranchTable {
    /// Fills each row's outage-bound curve over `grid`, repaired to be nonincreasing in power.
    pub fn fill_curves(&mut self, table: &MiCdfTable, rate: f64, grid: &[f64]) -> Result<()> {
        for row in &mut self.rows {
            let mut curve = grid
                .iter()
                .map(|&p| outage_bound(table, row.entry, p, rate))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| in_branch(&row.branch, e))?;
            for j in (0..curve.len().saturating_sub(1)).rev() {
                curve[j] = curve[j].max(curve[j + 1]);
            }
            row.curve = curve;
        }
        Ok(())
    }
}

/// 64 log-spaced powers across the positive part of the table's SNR grid, plus 0 when the
/// table covers it.
pub fn default_power_grid(table: &MiCdfTable) -> Vec<f64> {
    const POINTS: usize = 64;
    let grid = table.snr_grid();
    let positive: Vec<f64> = grid.iter().copied().filter(|&g| g > 0.0).collect();
    let mut out = Vec::with_capacity(POINTS + 1);
    if grid[0] == 0.0 {
        out.push(0.0);
    }
    if let (Some(&lo), Some(&hi)) = (positive.first(), positive.last()) {
        if lo == hi {
            out.push(lo);
        } else {
            let (a, b) = (lo.ln(), hi.ln());
            out.extend((0..POINTS).map(|i| match i {
                0 => lo,
                i if i == POINTS - 1 => hi,
                i => (a + (b - a) * i as f64 / (POINTS - 1) as f64).exp(),
            }));
        }
    }
    out
}
