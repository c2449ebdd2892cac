use std::sync::OnceLock;

use proptest::prelude::*;

use inr_arq::mutual_info::{build_mi_table, MiCdfTable};
use inr_arq::power::{branch_split, constant_policy};
use inr_arq::sim::{estimate_outage, SimOptions};
use inr_arq::{
    canonical_grid_tree, design_thresholds, AckConvention, ChannelConfig, Constellation, FeedbackVector, Rate,
    ThresholdTree,
};

fn scenario() -> impl Strategy<Value = ChannelConfig> {
    (1usize..=2, 1usize..=2, 1usize..=3, prop_oneof![Just(1u32), Just(2), Just(4)], 1usize..=3, 2usize..=6)
        .prop_flat_map(|(n_t, n_r, blocks, bits, rounds, levels)| {
            let cap = (bits as usize * n_t) as i64;
            // rates on a 1/8 grid strictly inside (0, cap)
            (1i64..cap * 8).prop_map(move |num| {
                let c = if bits == 1 {
                    Constellation::psk(1).unwrap()
                } else {
                    Constellation::qam(bits).unwrap()
                };
                ChannelConfig::new(n_t, n_r, blocks, c, Rate::ratio(num, 8).unwrap(), rounds, levels).unwrap()
            })
        })
}

fn grid_levels_inside(cfg: &ChannelConfig, lo: f64, hi: f64) -> Vec<f64> {
    (0..)
        .map(|t| cfg.grid_level(t))
        .take_while(|g| *g < hi)
        .filter(|g| *g > lo)
        .collect()
}

fn is_grid_level(cfg: &ChannelConfig, x: f64) -> bool {
    let t = x * cfg.blocks as f64 / cfg.bits_per_symbol() as f64;
    (t - t.round()).abs() < 1e-9
}

/// Children enter at their parent's threshold; designed trees also start each list at the entry.
fn check_nesting(tree: &ThresholdTree, designed: bool) -> Result<(), TestCaseError> {
    let r = tree.rate();
    for (f, ts) in tree.branches() {
        prop_assert_eq!(ts.len(), tree.levels() - 1);
        if designed {
            prop_assert_eq!(ts[0], tree.entry(f).unwrap());
        }
        prop_assert!(ts.windows(2).all(|w| w[0] < w[1]), "{f}: {ts:?}");
        prop_assert!(*ts.last().unwrap() < r);
        if f.len() + 1 < tree.rounds() {
            for (k, t) in ts.iter().enumerate() {
                prop_assert_eq!(tree.entry(&f.child(k as u16)).unwrap(), *t);
            }
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn designed_trees_nest_and_keep_the_grid(cfg in scenario()) {
        let tree = match design_thresholds(&cfg) {
            Ok(t) => t,
            Err(inr_arq::Error::DesignInfeasible { .. }) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        check_nesting(&tree, true)?;
        let r = cfg.rate.value();
        for (f, ts) in tree.branches() {
            let inside = grid_levels_inside(&cfg, ts[0], r);
            if inside.len() < ts.len() {
                for g in inside {
                    prop_assert!(ts.iter().any(|t| (t - g).abs() < 1e-12), "{f}: grid level {g} missing from {ts:?}");
                }
            }
        }
    }

    #[test]
    fn canonical_trees_use_grid_levels(cfg in scenario()) {
        let cfg = cfg.with_levels(cfg.sufficient_levels());
        let tree = canonical_grid_tree(&cfg).unwrap();
        check_nesting(&tree, false)?;
        let root = tree.thresholds(&FeedbackVector::root()).unwrap().to_vec();
        prop_assert_eq!(root.clone(), grid_levels_inside(&cfg, -1.0, cfg.rate.value()));
        for (_, ts) in tree.branches() {
            prop_assert!(ts.iter().all(|t| is_grid_level(&cfg, *t)), "{ts:?}");
            prop_assert_eq!(ts, root.as_slice());
        }
    }

    #[test]
    fn quantizer_returns_the_enclosing_cell(cfg in scenario(), pick in 0usize..64, u in 0.0f64..1.0, outage in any::<bool>()) {
        let Ok(tree) = design_thresholds(&cfg) else { return Ok(()) };
        let branches: Vec<FeedbackVector> = tree.branches().map(|(f, _)| f.clone()).collect();
        let f = &branches[pick % branches.len()];
        let ts = tree.thresholds(f).unwrap();
        let conv = if outage { AckConvention::Outage } else { AckConvention::RandomCoding };
        let acc = ts[0] + u * (cfg.max_rate() * cfg.rounds as f64 - ts[0]);
        let k = tree.quantize(f, acc, conv).unwrap();
        if conv.is_ack(acc, tree.rate()) {
            prop_assert_eq!(k, tree.ack_index());
        } else {
            let k = k as usize;
            prop_assert!(k < ts.len());
            prop_assert!(ts[k] <= acc);
            prop_assert!(k + 1 == ts.len() || acc < ts[k + 1]);
        }
        // at the floor, just under it within rounding, and clearly under it
        prop_assert_eq!(tree.quantize(f, ts[0], conv).unwrap(), 0);
        prop_assert_eq!(tree.quantize(f, ts[0] - 1e-13, conv).unwrap(), 0);
        if ts[0] > 0.0 {
            prop_assert!(tree.quantize(f, ts[0] - 1e-6, conv).is_err());
        }
    }
}

fn qpsk(rate: Rate, rounds: usize, levels: usize) -> ChannelConfig {
    ChannelConfig::new(1, 1, 2, Constellation::qam(2).unwrap(), rate, rounds, levels).unwrap()
}

fn table() -> &'static MiCdfTable {
    static TABLE: OnceLock<MiCdfTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let grid: Vec<f64> = (0..=12).map(|i| 10f64.powf((-4.0 + 2.0 * i as f64) / 10.0)).collect();
        build_mi_table(&qpsk(Rate::ratio(1, 1).unwrap(), 1, 2), &grid, 4000, 32, 13).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn branch_split_conserves_probability(
        num in 1i64..16,
        rounds in 1usize..=3,
        levels in 2usize..=5,
        pick in 0usize..64,
        db in -4.0f64..20.0,
    ) {
        let cfg = qpsk(Rate::ratio(num, 8).unwrap(), rounds, levels);
        let Ok(tree) = design_thresholds(&cfg) else { return Ok(()) };
        let branches: Vec<FeedbackVector> = tree.branches().map(|(f, _)| f.clone()).collect();
        let f = &branches[pick % branches.len()];
        let p = branch_split(&tree, table(), f, 10f64.powf(db / 10.0)).unwrap();
        prop_assert_eq!(p.len(), levels);
        prop_assert!(p.iter().all(|x| (-1e-12..=1.0 + 1e-12).contains(x)), "{p:?}");
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9, "{p:?}");
    }

    #[test]
    fn simulated_outage_is_monotone_and_counts_add_up(
        cfg in scenario(),
        db in 0.0f64..20.0,
        seed in 0u64..1000,
    ) {
        prop_assume!(cfg.n_t == 1 || cfg.bits_per_symbol() <= 2);
        let Ok(tree) = design_thresholds(&cfg) else { return Ok(()) };
        let policy = constant_policy(&tree, 10f64.powf(db / 10.0)).unwrap();
        let res = estimate_outage(&cfg, &tree, &policy, SimOptions::default(), 1000, seed, 1).unwrap();
        prop_assert!(res.rounds.windows(2).all(|w| w[1].p_out <= w[0].p_out));
        for r in &res.rounds {
            prop_assert!(r.ci_lo <= r.p_out && r.p_out <= r.ci_hi);
        }
        let total = |f: &FeedbackVector| -> u64 {
            (0..cfg.levels as u16).map(|k| res.branch_counts.get(&f.child(k)).copied().unwrap_or(0)).sum()
        };
        prop_assert_eq!(total(&FeedbackVector::root()), res.trials);
        for (f, _) in tree.branches() {
            if f.is_empty() {
                continue;
            }
            prop_assert_eq!(total(f), res.branch_counts.get(f).copied().unwrap_or(0), "{}", f);
        }
        // outage after the last round is exactly the NACK mass at depth L
        let nack_last: u64 = res
            .branch_counts
            .iter()
            .filter(|(f, _)| f.len() == cfg.rounds && f.last() != Some(tree.ack_index()))
            .map(|(_, c)| *c)
            .sum();
        prop_assert_eq!(nack_last, res.rounds[cfg.rounds - 1].failures);
    }
}
