use crate::error::{Error, Result};
use crate::feedback::{FeedbackVector, ThresholdTree, TreeKind};
use crate::mutual_info::MiCdfTable;

use super::probs::{approx_branch_probs, outage_bound};
use super::{PolicyScheme, PowerPolicy};

const BISECTION_STEPS: usize = 50;

/// A branch competing for one round's budget: its probability and its outage bound on each
/// grid power (nonincreasing).
#[derive(Clone, Debug, PartialEq)]
pub struct RoundBranch {
    pub q: f64,
    pub curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Allocation {
    /// Chosen grid index per branch.
    pub indices: Vec<usize>,
    pub powers: Vec<f64>,
    /// `sum q p(P)`.
    pub objective: f64,
    /// `sum q P`.
    pub spent: f64,
}

fn totals(branches: &[RoundBranch], grid: &[f64], idx: &[usize]) -> (f64, f64) {
    branches.iter().zip(idx).fold((0.0, 0.0), |(obj, spent), (b, &j)| {
        (obj + b.q * b.curve[j], spent + b.q * grid[j])
    })
}

fn pick(b: &RoundBranch, grid: &[f64], lambda: f64) -> usize {
    if b.q == 0.0 {
        return 0;
    }
    let mut best = 0;
    let mut best_val = b.curve[0] + lambda * grid[0];
    for j in 1..grid.len() {
        let v = b.curve[j] + lambda * grid[j];
        if v < best_val {
            best = j;
            best_val = v;
        }
    }
    best
}

/// Spends leftover budget on the single-branch upgrade with the best outage reduction per unit
/// of power, until none fits.
fn fill_slack(branches: &[RoundBranch], grid: &[f64], limit: f64, idx: &mut [usize]) {
    loop {
        let (_, spent) = totals(branches, grid, idx);
        let slack = limit - spent;
        let mut best: Option<(usize, usize, f64)> = None;
        for (i, b) in branches.iter().enumerate() {
            if b.q == 0.0 {
                continue;
            }
            let cur = idx[i];
            for j in cur + 1..grid.len() {
                let cost = b.q * (grid[j] - grid[cur]);
                let gain = b.q * (b.curve[cur] - b.curve[j]);
                if cost > slack {
                    break;
                }
                if gain > 0.0 && best.is_none_or(|(_, _, r)| gain / cost > r) {
                    best = Some((i, j, gain / cost));
                }
            }
        }
        match best {
            Some((i, j, _)) => idx[i] = j,
            None => return,
        }
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid[0] < 0.0 || grid.iter().any(|g| !g.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("power grid must be nonempty, finite, >= 0 and strictly ascending"));
    }
    Ok(())
}

/// Minimizes `sum q_f p_f(P_f)` subject to `sum q_f P_f <= budget` over grid powers.
///
/// Dual bisection: for a multiplier `lambda` every branch independently minimizes
/// `p_f(P) + lambda P` (ties toward lower power); the smallest feasible `lambda` found by 50
/// bisection steps is kept. The uniform split `budget / sum q`, snapped down to the grid and
/// topped up greedily with the leftover budget, replaces it if it is better.
pub fn allocate_round(branches: &[RoundBranch], grid: &[f64], budget: f64) -> Result<Allocation> {
    check_grid(grid)?;
    if !(budget >= 0.0 && budget.is_finite()) {
        return Err(Error::invalid(format!("round budget must be finite and >= 0, got {budget}")));
    }
    for (i, b) in branches.iter().enumerate() {
        if b.curve.len() != grid.len() || !(b.q >= 0.0 && b.q.is_finite()) {
            return Err(Error::invalid(format!(
                "branch {i}: needs q >= 0 and one outage value per grid power"
            )));
        }
    }
    let limit = budget * (1.0 + 1e-12);
    let floor: Vec<usize> = vec![0; branches.len()];
    let (_, min_spent) = totals(branches, grid, &floor);
    if min_spent > limit {
        let minima: Vec<String> = branches
            .iter()
            .enumerate()
            .map(|(i, b)| format!("branch {i}: q {:.3e} x {:.3e}", b.q, grid[0]))
            .collect();
        return Err(Error::Infeasible(format!(
            "minimum grid powers need {min_spent:.6e} > budget {budget:.6e} ({})",
            minima.join(", ")
        )));
    }

    let at = |lambda: f64| -> Vec<usize> { branches.iter().map(|b| pick(b, grid, lambda)).collect() };
    let spent_at = |idx: &[usize]| totals(branches, grid, idx).1;

    let mut dual = at(0.0);
    if spent_at(&dual) > limit {
        let mut hi = 0.0f64;
        for b in branches.iter().filter(|b| b.q > 0.0) {
            for j in 1..grid.len() {
                hi = hi.max((b.curve[0] - b.curve[j]) / (grid[j] - grid[0]));
            }
        }
        hi = hi * (1.0 + 1e-9) + f64::MIN_POSITIVE;
        let mut lo = 0.0;
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if spent_at(&at(mid)) <= limit {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        dual = at(hi);
        if spent_at(&dual) > limit {
            dual = floor.clone();
        }
    }

    let mass: f64 = branches.iter().map(|b| b.q).sum();
    let mut uniform = floor;
    if mass > 0.0 {
        let level = budget / mass;
        let j = grid.partition_point(|&g| g <= level).saturating_sub(1);
        for (u, b) in uniform.iter_mut().zip(branches) {
            if b.q > 0.0 {
                *u = j;
            }
        }
        if spent_at(&uniform) > limit {
            uniform.iter_mut().for_each(|u| *u = 0);
        }
    }
    fill_slack(branches, grid, limit, &mut uniform);

    let best = if totals(branches, grid, &uniform).0 < totals(branches, grid, &dual).0 {
        uniform
    } else {
        dual
    };
    let (objective, spent) = totals(branches, grid, &best);
    Ok(Allocation {
        powers: best.iter().map(|&j| grid[j]).collect(),
        indices: best,
        objective,
        spent,
    })
}

fn first_round_power(table: &MiCdfTable, budget: f64, rounds: usize) -> Result<f64> {
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::invalid(format!("budget must be finite and > 0, got {budget}")));
    }
    let p1 = budget / rounds as f64;
    table
        .cdf_at(p1, 0.0)
        .map_err(|e| Error::OutOfRange(format!("round-1 power P/L: {e}")))?;
    Ok(p1)
}

/// Sequential per-round power optimization under the per-round budget `P/L`.
///
/// Round 1 transmits `P/L`. Each later round minimizes its approximate outage
/// `sum_f q(f) p(l|f)(P_l(f))` with [`allocate_round`], using branch probabilities computed from
/// the powers already fixed.
pub fn solve_eq28(tree: &ThresholdTree, table: &MiCdfTable, budget: f64, grid: &[f64]) -> Result<PowerPolicy> {
    check_grid(grid)?;
    let (lo, hi) = table.snr_range();
    if grid[0] < lo || *grid.last().unwrap() > hi * (1.0 + 1e-12) {
        return Err(Error::OutOfRange(format!(
            "power grid [{}, {}] leaves the MI table grid [{lo}, {hi}]",
            grid[0],
            grid.last().unwrap()
        )));
    }
    let rounds = tree.rounds();
    let p1 = first_round_power(table, budget, rounds)?;
    let round_budget = budget / rounds as f64;
    let rate = tree.rate();

    let mut policy = PowerPolicy::new(PolicyScheme::Eq28, budget, tree);
    policy.grid = grid.to_vec();
    policy.table_fingerprint = Some(table.fingerprint());
    policy.set(FeedbackVector::root(), p1);
    policy.objective.push(outage_bound(table, 0.0, p1, rate)?);
    policy.slack.push(0.0);

    for round in 2..=rounds {
        let mut bt = approx_branch_probs(tree, &policy, table, round)?;
        bt.fill_curves(table, rate, grid)?;
        let branches: Vec<RoundBranch> = bt
            .rows
            .iter()
            .map(|r| RoundBranch {
                q: r.q,
                curve: r.curve.clone(),
            })
            .collect();
        let alloc = allocate_round(&branches, grid, round_budget)
            .map_err(|e| match e {
                Error::Infeasible(m) => Error::Infeasible(format!("round {round}: {m}")),
                other => other,
            })?;
        for (row, p) in bt.rows.iter().zip(&alloc.powers) {
            policy.set(row.branch.clone(), *p);
        }
        policy.objective.push(alloc.objective);
        policy.slack.push(round_budget - alloc.spent);
    }
    Ok(policy)
}

/// Reciprocal-probability rule on the canonical grid tree:
/// `P_1 = P/L` and `P_l(f) = P / (K L Pr[k_{l-1} = last index of f])`.
///
/// The cell probability aggregates the approximate probabilities of all branches ending in that
/// index. Powers are capped at the top of the table grid (and, in rounds whose successors still
/// need table lookups, raised to its bottom); capped branches are listed in `warnings`.
pub fn appendix_b_policy(tree: &ThresholdTree, table: &MiCdfTable, budget: f64) -> Result<PowerPolicy> {
    if tree.kind() != TreeKind::CanonicalGrid {
        return Err(Error::Precondition(
            "the reciprocal-probability rule needs the canonical grid tree".into(),
        ));
    }
    let rounds = tree.rounds();
    let levels = tree.levels();
    let p1 = first_round_power(table, budget, rounds)?;
    let (lo, hi) = table.snr_range();
    let rate = tree.rate();

    let mut policy = PowerPolicy::new(PolicyScheme::AppendixB, budget, tree);
    policy.table_fingerprint = Some(table.fingerprint());
    policy.set(FeedbackVector::root(), p1);
    policy.objective.push(outage_bound(table, 0.0, p1, rate)?);

    for round in 2..=rounds {
        let bt = approx_branch_probs(tree, &policy, table, round)?;
        let mut cells = vec![0.0; levels];
        for r in &bt.rows {
            cells[r.branch.last().unwrap() as usize] += r.q;
        }
        let mut objective = 0.0;
        for r in &bt.rows {
            let k = r.branch.last().unwrap() as usize;
            let raw = budget / (levels as f64 * rounds as f64 * cells[k]);
            let mut p = raw;
            if !(raw <= hi) {
                p = hi;
                policy.warnings.push(format!(
                    "branch {}: cell probability {:.3e}, power capped at {hi:.6e}",
                    r.branch, cells[k]
                ));
            } else if round < rounds && raw < lo {
                p = lo;
                policy.warnings.push(format!("branch {}: power raised to the table minimum {lo:.6e}", r.branch));
            }
            policy.set(r.branch.clone(), p);
            if p >= lo {
                objective += r.q * outage_bound(table, r.entry, p, rate)?;
            } else {
                objective = f64::NAN;
            }
        }
        policy.objective.push(objective);
    }
    Ok(policy)
}

/// Expected power spent in each round, `sum_f q(f) P_l(f)`, under the approximate branch
/// probabilities.
pub fn expected_round_power(tree: &ThresholdTree, policy: &PowerPolicy, table: &MiCdfTable) -> Result<Vec<f64>> {
    (1..=tree.rounds())
        .map(|round| {
            let bt = approx_branch_probs(tree, policy, table, round)?;
            bt.rows
                .iter()
                .map(|r| policy.power(&r.branch).map(|p| r.q * p))
                .sum::<Result<f64>>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ChannelConfig;
    use crate::feedback::{canonical_grid_tree, design_thresholds};
    use crate::mutual_info::build_mi_table;
    use crate::power::{default_power_grid, BranchTable};
    use proptest::prelude::*;

    fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
    }

    fn power_law(q: f64, c: f64, d: f64, grid: &[f64]) -> RoundBranch {
        RoundBranch {
            q,
            curve: grid.iter().map(|p| c * p.powf(-d)).collect(),
        }
    }

    #[test]
    fn symmetric_branches_get_equal_power() {
        let grid = log_grid(0.1, 100.0, 40);
        let b = power_law(0.3, 2.0, 1.0, &grid);
        let a = allocate_round(&[b.clone(), b], &grid, 3.0).unwrap();
        assert_eq!(a.indices[0], a.indices[1]);
        assert!(a.spent <= 3.0 * (1.0 + 1e-9));
    }

    #[test]
    fn power_law_matches_lagrangian_optimum() {
        // minimizing sum q c P^-d under sum q P = B gives P_f = B c_f^(1/(d+1)) / sum q c^(1/(d+1))
        let grid = log_grid(0.01, 1000.0, 200);
        for d in [1.0, 2.0] {
            let qs = [0.2, 0.05, 0.01];
            let cs = [1.0, 4.0, 0.3];
            let budget = 2.0;
            let branches: Vec<_> = qs.iter().zip(cs).map(|(&q, c)| power_law(q, c, d, &grid)).collect();
            let a = allocate_round(&branches, &grid, budget).unwrap();
            let norm: f64 = qs.iter().zip(cs).map(|(q, c)| q * c.powf(1.0 / (d + 1.0))).sum();
            for (i, c) in cs.iter().enumerate() {
                let opt = budget * c.powf(1.0 / (d + 1.0)) / norm;
                // fractional grid position of the continuous optimum
                let pos = (opt / grid[0]).ln() / (grid[1] / grid[0]).ln();
                assert!((a.indices[i] as f64 - pos).abs() <= 1.0, "d={d} branch {i}: {} vs {pos}", a.indices[i]);
            }
        }
    }

    #[test]
    fn infeasible_grid_is_reported() {
        let grid = vec![1.0, 2.0];
        let b = power_law(0.5, 1.0, 1.0, &grid);
        assert!(matches!(allocate_round(&[b.clone(), b], &grid, 0.5), Err(Error::Infeasible(_))));
    }

    #[test]
    fn zero_probability_branches_take_minimum() {
        let grid = log_grid(0.1, 10.0, 10);
        let a = allocate_round(&[power_law(0.0, 1.0, 1.0, &grid), power_law(1.0, 1.0, 1.0, &grid)], &grid, 10.0)
            .unwrap();
        assert_eq!(a.indices, vec![0, 9]);
    }

    proptest! {
        #[test]
        fn never_worse_than_uniform(
            qs in prop::collection::vec(0.001f64..1.0, 1..8),
            seed in prop::collection::vec((0.01f64..10.0, 0.5f64..3.0), 8),
            budget in 0.5f64..20.0,
        ) {
            let grid = log_grid(0.05, 200.0, 48);
            let branches: Vec<_> = qs.iter().zip(&seed).map(|(&q, &(c, d))| power_law(q, c, d, &grid)).collect();
            let a = allocate_round(&branches, &grid, budget).unwrap();
            let mass: f64 = qs.iter().sum();
            let j = grid.partition_point(|&g| g <= budget / mass).saturating_sub(1);
            let uniform: f64 = branches.iter().map(|b| b.q * b.curve[j]).sum();
            prop_assert!(a.spent <= budget * (1.0 + 1e-9));
            prop_assert!(a.objective <= uniform + 1e-15);
        }
    }

    fn siso_table(cfg: &ChannelConfig) -> MiCdfTable {
        let grid = log_grid(0.1, 1e4, 21);
        build_mi_table(cfg, &grid, 4000, 8, 5).unwrap()
    }

    #[test]
    fn eq28_respects_round_budgets() {
        let cfg = ChannelConfig::siso_fig5(4);
        let table = siso_table(&cfg);
        let tree = design_thresholds(&cfg).unwrap();
        let grid = default_power_grid(&table);
        let policy = solve_eq28(&tree, &table, 100.0, &grid).unwrap();
        policy.check_covers(&tree).unwrap();
        let spent = expected_round_power(&tree, &policy, &table).unwrap();
        for s in spent {
            assert!(s <= 50.0 * (1.0 + 1e-9));
        }
        assert_eq!(policy.power(&FeedbackVector::root()).unwrap(), 50.0);
    }

    #[test]
    fn single_nack_branch_takes_the_whole_round() {
        // K = 2: after round 1 only branch [0] remains, so it may spend (P/L) / q
        let cfg = ChannelConfig::siso_fig5(2);
        let table = siso_table(&cfg);
        let tree = design_thresholds(&cfg).unwrap();
        let grid = default_power_grid(&table);
        let policy = solve_eq28(&tree, &table, 20.0, &grid).unwrap();
        let q = table.cdf_at(10.0, 3.5).unwrap();
        let cap = 10.0 / q;
        let j = grid.partition_point(|&g| g <= cap) - 1;
        let chosen = policy.power(&FeedbackVector::new(vec![0])).unwrap();
        let mut bt: BranchTable = approx_branch_probs(&tree, &policy, &table, 2).unwrap();
        bt.fill_curves(&table, 3.5, &grid).unwrap();
        let k = grid.iter().position(|&g| g == chosen).unwrap();
        assert!(k <= j);
        assert_eq!(bt.rows[0].curve[k], bt.rows[0].curve[j]);
    }

    #[test]
    fn appendix_b_structure() {
        let cfg = ChannelConfig::siso_fig5(3);
        let table = siso_table(&cfg);
        let tree = canonical_grid_tree(&cfg).unwrap();
        let policy = appendix_b_policy(&tree, &table, 100.0).unwrap();
        let p0 = policy.power(&FeedbackVector::new(vec![0])).unwrap();
        let p1 = policy.power(&FeedbackVector::new(vec![1])).unwrap();
        // the upper cell is more likely at high SNR, so it gets less power
        assert!(p1 <= p0, "{p1} > {p0}");
        let total: f64 = expected_round_power(&tree, &policy, &table).unwrap().iter().sum();
        assert!(total <= 100.0 * (1.0 + 1e-9));
        assert!(appendix_b_policy(&design_thresholds(&cfg).unwrap(), &table, 100.0).is_err());
    }

    #[test]
    fn appendix_b_cell_at_reciprocal_probability_gets_budget() {
        let cfg = ChannelConfig::siso_fig5(3);
        let table = siso_table(&cfg);
        let tree = canonical_grid_tree(&cfg).unwrap();
        let policy = appendix_b_policy(&tree, &table, 100.0).unwrap();
        let bt = approx_branch_probs(&tree, &policy, &table, 2).unwrap();
        for r in &bt.rows {
            let p = policy.power(&r.branch).unwrap();
            if policy.warnings.is_empty() {
                assert!((p * 3.0 * 2.0 * r.q - 100.0).abs() < 1e-9 * 100.0);
            }
        }
    }
}
