//! Monte-Carlo simulation of the L-round protocol.
//!
//! Outage replaces decoding: round `l` fails iff the accumulated MI is still short of `R`.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use crate::config::{AckConvention, ChannelConfig};
use crate::error::{Error, Result};
use crate::feedback::{quantize_cell, FeedbackVector, ThresholdTree};
use crate::mutual_info::{EstimatorKind, MiEvaluator};
use crate::power::PowerPolicy;
use crate::seeding::{stream_rng, with_workers, CHUNK};
use crate::stats::{mean_ci, wilson};

pub const MIN_TRIALS: u64 = 1000;

/// Knobs that do not change the protocol itself.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimOptions {
    pub convention: AckConvention,
    pub noise_draws: usize,
    /// `None` picks quadrature for one transmit antenna and Monte Carlo otherwise.
    pub estimator: Option<EstimatorKind>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            convention: AckConvention::Outage,
            noise_draws: 32,
            estimator: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundRecord {
    pub power: f64,
    pub mi: f64,
    pub acc_mi: f64,
    pub feedback: u16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Terminal {
    /// Acknowledged in this round (1-based).
    Ack(usize),
    Outage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub rounds: Vec<RoundRecord>,
    pub terminal: Terminal,
}

impl EpisodeTrace {
    pub fn total_power(&self) -> f64 {
        self.rounds.iter().map(|r| r.power).sum()
    }
}

struct Node {
    branch: FeedbackVector,
    thresholds: Vec<f64>,
    floor: f64,
    power: f64,
    /// Tree node reached on each NACK index, if the protocol continues.
    children: Vec<Option<usize>>,
}

/// A threshold tree and power policy, cross-checked and flattened for fast episodes.
pub struct Simulator {
    cfg: ChannelConfig,
    evaluator: MiEvaluator,
    convention: AckConvention,
    rate: f64,
    levels: usize,
    nodes: Vec<Node>,
    config_fingerprint: String,
    policy_fingerprint: String,
}

impl Simulator {
    pub fn new(cfg: &ChannelConfig, tree: &ThresholdTree, policy: &PowerPolicy, options: SimOptions) -> Result<Self> {
        cfg.validate()?;
        if tree.rounds() != cfg.rounds || (tree.rate() - cfg.rate.value()).abs() > 1e-12 {
            return Err(Error::Configuration(format!(
                "threshold tree is for L = {}, R = {} but the channel has L = {}, R = {}",
                tree.rounds(),
                tree.rate(),
                cfg.rounds,
                cfg.rate
            )));
        }
        policy.check_covers(tree)?;
        let evaluator = match options.estimator {
            Some(kind) => MiEvaluator::with_kind(cfg, options.noise_draws, kind)?,
            None => MiEvaluator::for_config(cfg, options.noise_draws)?,
        };

        let index: BTreeMap<&FeedbackVector, usize> = tree.branches().enumerate().map(|(i, (f, _))| (f, i)).collect();
        let mut nodes = Vec::with_capacity(index.len());
        for (f, th) in tree.branches() {
            let children = (0..th.len())
                .map(|k| index.get(&f.child(k as u16)).copied())
                .collect();
            nodes.push(Node {
                branch: f.clone(),
                thresholds: th.to_vec(),
                floor: tree.entry(f)?,
                power: policy.power(f)?,
                children,
            });
        }
        Ok(Simulator {
            cfg: cfg.clone(),
            evaluator,
            convention: options.convention,
            rate: tree.rate(),
            levels: tree.levels(),
            nodes,
            config_fingerprint: cfg.fingerprint(),
            policy_fingerprint: policy.fingerprint(),
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn estimator(&self) -> EstimatorKind {
        self.evaluator.kind()
    }

    /// Runs one codeword, calling `visit(node, record, mi_std_error)` after every round.
    fn episode<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        mut visit: impl FnMut(usize, &RoundRecord, f64),
    ) -> Result<Terminal> {
        let root = self
            .nodes
            .iter()
            .position(|n| n.branch.is_empty())
            .expect("tree has a root");
        let mut node = root;
        let mut acc = 0.0;
        for round in 1..=self.cfg.rounds {
            let n = &self.nodes[node];
            let draw = self.evaluator.sample_round(n.power, rng)?;
            acc += draw.mi;
            let k = quantize_cell(&n.thresholds, n.floor, self.rate, acc, self.convention).ok_or_else(|| {
                Error::ProtocolViolation(format!(
                    "accumulated MI {acc} below the floor {} of branch {}",
                    n.floor, n.branch
                ))
            })?;
            let record = RoundRecord {
                power: n.power,
                mi: draw.mi,
                acc_mi: acc,
                feedback: k,
            };
            visit(node, &record, draw.std_error);
            if k as usize + 1 == self.levels {
                return Ok(Terminal::Ack(round));
            }
            match n.children[k as usize] {
                Some(next) => node = next,
                None => break,
            }
        }
        Ok(Terminal::Outage)
    }

    pub fn run_episode<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<EpisodeTrace> {
        let mut rounds = Vec::with_capacity(self.cfg.rounds);
        let terminal = self.episode(rng, |_, r, _| rounds.push(*r))?;
        Ok(EpisodeTrace { rounds, terminal })
    }

    fn run_chunk(&self, seed: u64, chunk: u64, trials: u64) -> Result<Tally> {
        let mut rng = stream_rng(seed, chunk);
        let mut t = Tally::new(self.cfg.rounds, self.nodes.len() * self.levels);
        for _ in 0..trials {
            let mut power = 0.0;
            let levels = self.levels;
            let counts = &mut t.branch_counts;
            let (se_sum, se_n) = (&mut t.se_sum, &mut t.se_n);
            let terminal = self.episode(&mut rng, |node, r, se| {
                power += r.power;
                counts[node * levels + r.feedback as usize] += 1;
                if se > 0.0 {
                    *se_sum += se;
                    *se_n += 1;
                }
            })?;
            let acked = match terminal {
                Terminal::Ack(l) => l,
                Terminal::Outage => self.cfg.rounds + 1,
            };
            for c in &mut t.not_acked[..acked - 1] {
                *c += 1;
            }
            t.trials += 1;
            t.power_sum += power;
            t.power_sq += power * power;
        }
        Ok(t)
    }

    /// Runs `trials` independent codewords. Chunk `c` of `CHUNK` episodes draws from stream `c`
    /// of `seed`, and chunk tallies merge in chunk order, so the result does not depend on
    /// `workers` (0 = current rayon pool).
    pub fn estimate_outage(&self, trials: u64, seed: u64, workers: usize) -> Result<SimResult> {
        if trials < MIN_TRIALS {
            return Err(Error::invalid(format!("trials must be >= {MIN_TRIALS}, got {trials}")));
        }
        let chunk = CHUNK as u64;
        let chunks = trials.div_ceil(chunk);
        let tallies = with_workers(workers, || {
            (0..chunks)
                .into_par_iter()
                .map(|c| self.run_chunk(seed, c, chunk.min(trials - c * chunk)))
                .collect::<Result<Vec<_>>>()
        })?;
        let mut total = Tally::new(self.cfg.rounds, self.nodes.len() * self.levels);
        for t in &tallies {
            total.merge(t);
        }
        Ok(self.summarize(total, seed))
    }

    fn summarize(&self, t: Tally, seed: u64) -> SimResult {
        let n = t.trials;
        let rounds = t
            .not_acked
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let (lo, hi) = wilson(c, n);
                RoundOutage {
                    round: i + 1,
                    failures: c,
                    p_out: c as f64 / n as f64,
                    ci_lo: lo,
                    ci_hi: hi,
                }
            })
            .collect();
        let mut branches = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            for k in 0..self.levels {
                let c = t.branch_counts[i * self.levels + k];
                if c > 0 {
                    branches.insert(node.branch.child(k as u16), c);
                }
            }
        }
        let (mean, half) = mean_ci(t.power_sum, t.power_sq, n);
        SimResult {
            trials: n,
            seed,
            rounds,
            branch_counts: branches,
            mean_total_power: mean,
            power_ci_half_width: half,
            mi_std_error: if t.se_n > 0 { t.se_sum / t.se_n as f64 } else { 0.0 },
            estimator: self.evaluator.kind(),
            config_fingerprint: self.config_fingerprint.clone(),
            policy_fingerprint: self.policy_fingerprint.clone(),
        }
    }
}

struct Tally {
    trials: u64,
    /// Episodes without an ACK after round `l` (index `l - 1`).
    not_acked: Vec<u64>,
    /// Episodes that sent feedback `k` from tree node `i`, at `i * K + k`.
    branch_counts: Vec<u64>,
    power_sum: f64,
    power_sq: f64,
    se_sum: f64,
    se_n: u64,
}

impl Tally {
    fn new(rounds: usize, cells: usize) -> Self {
        Tally {
            trials: 0,
            not_acked: vec![0; rounds],
            branch_counts: vec![0; cells],
            power_sum: 0.0,
            power_sq: 0.0,
            se_sum: 0.0,
            se_n: 0,
        }
    }

    fn merge(&mut self, o: &Tally) {
        self.trials += o.trials;
        for (a, b) in self.not_acked.iter_mut().zip(&o.not_acked) {
            *a += b;
        }
        for (a, b) in self.branch_counts.iter_mut().zip(&o.branch_counts) {
            *a += b;
        }
        self.power_sum += o.power_sum;
        self.power_sq += o.power_sq;
        self.se_sum += o.se_sum;
        self.se_n += o.se_n;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundOutage {
    pub round: usize,
    pub failures: u64,
    pub p_out: f64,
    /// Wilson 95% interval.
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult {
    pub trials: u64,
    pub seed: u64,
    pub rounds: Vec<RoundOutage>,
    /// Episodes that produced each feedback history (ACK-terminated ones included).
    pub branch_counts: BTreeMap<FeedbackVector, u64>,
    pub mean_total_power: f64,
    /// 95% half-width of the mean total power.
    pub power_ci_half_width: f64,
    /// Mean per-round standard error of the MI estimator (0 for the quadrature curve).
    pub mi_std_error: f64,
    pub estimator: EstimatorKind,
    pub config_fingerprint: String,
    pub policy_fingerprint: String,
}

impl SimResult {
    /// Empirical probability of the history `f`.
    pub fn branch_frequency(&self, f: &FeedbackVector) -> f64 {
        if f.is_empty() {
            return 1.0;
        }
        self.branch_counts.get(f).copied().unwrap_or(0) as f64 / self.trials as f64
    }

    pub fn p_out(&self, round: usize) -> f64 {
        self.rounds[round - 1].p_out
    }
}

/// Convenience wrapper around [`Simulator`].
pub fn estimate_outage(
    cfg: &ChannelConfig,
    tree: &ThresholdTree,
    policy: &PowerPolicy,
    options: SimOptions,
    trials: u64,
    seed: u64,
    workers: usize,
) -> Result<SimResult> {
    Simulator::new(cfg, tree, policy, options)?.estimate_outage(trials, seed, workers)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub snr: f64,
    pub round: usize,
    pub p_out: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub trials: u64,
    pub mean_total_power: f64,
    /// `-d log p / d log P` to the next SNR of the same round.
    pub slope_to_next: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutageCurve {
    pub rows: Vec<CurveRow>,
    pub results: Vec<SimResult>,
}

impl OutageCurve {
    /// Slope of `p(round)` between the two highest SNRs.
    pub fn top_slope(&self, round: usize) -> Option<f64> {
        let rows: Vec<&CurveRow> = self.rows.iter().filter(|r| r.round == round).collect();
        rows.len().checked_sub(2).and_then(|i| rows[i].slope_to_next)
    }
}

/// `-(ln p1 - ln p0) / (ln P1 - ln P0)`, undefined when either probability is 0.
pub fn loglog_slope(snr0: f64, p0: f64, snr1: f64, p1: f64) -> Option<f64> {
    if p0 > 0.0 && p1 > 0.0 && snr0 > 0.0 && snr1 > snr0 {
        Some(-(p1.ln() - p0.ln()) / (snr1.ln() - snr0.ln()))
    } else {
        None
    }
}

/// Simulates each SNR in `snrs` (linear, ascending) with its own tree and policy; every point
/// reuses `seed`, so neighbouring points share their fading draws.
pub fn sweep_snr(
    cfg: &ChannelConfig,
    build_tree: &dyn Fn(&ChannelConfig) -> Result<ThresholdTree>,
    build_policy: &dyn Fn(&ThresholdTree, f64) -> Result<PowerPolicy>,
    snrs: &[f64],
    options: SimOptions,
    trials: u64,
    seed: u64,
    workers: usize,
) -> Result<OutageCurve> {
    if snrs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("SNR list must be strictly ascending"));
    }
    let tree = build_tree(cfg)?;
    let mut results = Vec::with_capacity(snrs.len());
    for &snr in snrs {
        let policy = build_policy(&tree, snr)?;
        results.push(estimate_outage(cfg, &tree, &policy, options, trials, seed, workers)?);
    }
    let mut rows = Vec::new();
    for round in 1..=cfg.rounds {
        for (i, (&snr, r)) in snrs.iter().zip(&results).enumerate() {
            let o = r.rounds[round - 1];
            let slope = snrs
                .get(i + 1)
                .and_then(|&next| loglog_slope(snr, o.p_out, next, results[i + 1].p_out(round)));
            rows.push(CurveRow {
                snr,
                round,
                p_out: o.p_out,
                ci_lo: o.ci_lo,
                ci_hi: o.ci_hi,
                trials: r.trials,
                mean_total_power: r.mean_total_power,
                slope_to_next: slope,
            });
        }
    }
    rows.sort_by(|a, b| a.snr.total_cmp(&b.snr).then(a.round.cmp(&b.round)));
    Ok(OutageCurve { rows, results })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::{canonical_grid_tree, design_thresholds};
    use crate::power::constant_policy;
    use crate::rate::Rate;

    fn zero_policy(tree: &ThresholdTree) -> PowerPolicy {
        let mut p = constant_policy(tree, 1.0).unwrap();
        let branches: Vec<_> = p.branches().map(|(f, _)| f.clone()).collect();
        for f in branches {
            p.set(f, 0.0);
        }
        p
    }

    #[test]
    fn zero_power_is_outage_with_zero_feedback() {
        let cfg = ChannelConfig::siso_fig5(4);
        let tree = design_thresholds(&cfg).unwrap();
        let sim = Simulator::new(&cfg, &tree, &zero_policy(&tree), SimOptions::default()).unwrap();
        let trace = sim.run_episode(&mut stream_rng(3, 0)).unwrap();
        assert_eq!(trace.terminal, Terminal::Outage);
        assert_eq!(trace.rounds.len(), 2);
        assert!(trace.rounds.iter().all(|r| r.acc_mi == 0.0 && r.feedback == 0));
    }

    #[test]
    fn tiny_rate_acks_in_round_one() {
        let cfg = ChannelConfig {
            rate: Rate::ratio(1, 1000).unwrap(),
            ..ChannelConfig::siso_fig5(2)
        };
        let tree = design_thresholds(&cfg).unwrap();
        let policy = constant_policy(&tree, 100.0).unwrap();
        let r = estimate_outage(&cfg, &tree, &policy, SimOptions::default(), 2000, 1, 1).unwrap();
        assert_eq!(r.rounds[0].failures, 0);
    }

    #[test]
    fn traces_repeat_for_equal_seeds() {
        let cfg = ChannelConfig::siso_fig5(4);
        let tree = design_thresholds(&cfg).unwrap();
        let policy = constant_policy(&tree, 10.0).unwrap();
        let sim = Simulator::new(&cfg, &tree, &policy, SimOptions::default()).unwrap();
        let a = sim.run_episode(&mut stream_rng(9, 4)).unwrap();
        let b = sim.run_episode(&mut stream_rng(9, 4)).unwrap();
        assert_eq!(a, b);
        assert!(a.rounds.windows(2).all(|w| w[1].acc_mi >= w[0].acc_mi));
    }

    #[test]
    fn counts_conserve_and_outage_decreases() {
        let cfg = ChannelConfig::siso_fig5(3);
        let tree = canonical_grid_tree(&cfg).unwrap();
        let policy = constant_policy(&tree, 20.0).unwrap();
        let r = estimate_outage(&cfg, &tree, &policy, SimOptions::default(), 5000, 2, 2).unwrap();
        assert!(r.p_out(2) <= r.p_out(1));
        for (f, _) in tree.branches() {
            let parent = if f.is_empty() { r.trials } else { r.branch_counts[f] };
            let children: u64 = (0..3).map(|k| r.branch_counts.get(&f.child(k)).copied().unwrap_or(0)).sum();
            if f.len() < 2 {
                assert_eq!(children, parent, "branch {f}");
            }
        }
        // round 2 is sent exactly when round 1 was not acknowledged
        assert!((r.mean_total_power - 20.0 * (1.0 + r.p_out(1))).abs() < 1e-9);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let cfg = ChannelConfig::siso_fig5(4);
        let tree = design_thresholds(&cfg).unwrap();
        let policy = constant_policy(&tree, 10.0).unwrap();
        let a = estimate_outage(&cfg, &tree, &policy, SimOptions::default(), 5000, 7, 1).unwrap();
        let b = estimate_outage(&cfg, &tree, &policy, SimOptions::default(), 5000, 7, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_policy_is_rejected_up_front() {
        let cfg = ChannelConfig::siso_fig5(4);
        let tree = design_thresholds(&cfg).unwrap();
        let other = design_thresholds(&ChannelConfig::siso_fig5(3)).unwrap();
        let policy = constant_policy(&other, 10.0).unwrap();
        assert!(matches!(
            Simulator::new(&cfg, &tree, &policy, SimOptions::default()),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn slope_of_power_law() {
        let s = loglog_slope(10.0, 1e-2, 100.0, 1e-4).unwrap();
        assert!((s - 2.0).abs() < 1e-12);
        assert!(loglog_slope(10.0, 0.0, 100.0, 1e-4).is_none());
    }
}
