//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{db_to_linear, load_config, load_preset, ExperimentConfig, TreeChoice};
use super::output::write_atomic;
use super::{Command, Common};
use crate::diversity::{scheme_diversity, tradeoff_curve, DiversityQuery, Scheme};
use crate::error::{Error, Result};
use crate::feedback::{canonical_grid_tree, design_thresholds, ThresholdTree};
use crate::mutual_info::{build_mi_table, fmt17, sha256_hex, EstimatorKind, MiCdfTable};
use crate::power::{appendix_b_policy, constant_policy, default_power_grid, solve_eq28, PolicyScheme, PowerPolicy};
use crate::seeding::with_workers;
use crate::sim::{sweep_snr, SimOptions};

/// Provenance embedded in every artifact. Worker counts and wall-clock times are left out on
/// purpose: they never change the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_fingerprint: String,
    pub seeds: BTreeMap<String, u64>,
    pub table_fingerprint: Option<String>,
    pub policy_fingerprints: Vec<String>,
}

impl Manifest {
    fn new(command: &str, exp: &ExperimentConfig) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_fingerprint: config_fingerprint(exp),
            seeds: BTreeMap::new(),
            table_fingerprint: None,
            policy_fingerprints: Vec::new(),
        }
    }

    fn csv_line(&self) -> String {
        format!("# manifest {}\n", serde_json::to_string(self).expect("manifest serializes"))
    }
}

/// Hash of everything that can change results (paths and worker counts excluded).
fn config_fingerprint(exp: &ExperimentConfig) -> String {
    let text = format!(
        "{}|ack={}|tree={}|trials={}|seed={}|draws={}|snr={:?}|scheme={}|table={:?}",
        exp.channel.fingerprint(),
        exp.ack,
        exp.tree().map(|t| t.to_string()).unwrap_or_default(),
        exp.simulation.trials,
        exp.simulation.seed,
        exp.simulation.noise_draws,
        exp.snr_db,
        exp.scheme,
        exp.table
    );
    sha256_hex(text.as_bytes())
}

#[derive(Serialize, Deserialize)]
struct Document<T> {
    manifest: Manifest,
    data: T,
}

fn load_experiment(common: &Common) -> Result<ExperimentConfig> {
    let mut exp = match (&common.config, &common.preset) {
        (Some(path), _) => load_config(path)?,
        (None, Some(name)) => load_preset(name)?,
        (None, None) => {
            return Err(Error::Validation(vec!["either --config or --preset is required".into()]));
        }
    };
    if let Some(k) = common.levels {
        exp.channel.levels = k;
        exp.channel.validate().map_err(|e| match e {
            Error::Validation(v) => Error::Validation(v.into_iter().map(|m| format!("--levels: {m}")).collect()),
            other => other,
        })?;
    }
    if let Some(t) = common.tree {
        exp.tree_choice = Some(t);
    }
    if let Some(dir) = &common.output_dir {
        exp.output_dir = dir.clone();
    }
    if let Some(w) = common.workers {
        exp.simulation.workers = w;
    }
    Ok(exp)
}

fn write_artifact(path: &Path, bytes: &[u8], what: &str) -> Result<()> {
    write_atomic(path, bytes)?;
    eprintln!("{what}: wrote {}", path.display());
    Ok(())
}

fn table_path(exp: &ExperimentConfig) -> PathBuf {
    let ch = &exp.channel;
    let estimator = if ch.n_t == 1 {
        EstimatorKind::ScalarQuadrature
    } else {
        EstimatorKind::MonteCarlo
    };
    let grid: Vec<String> = exp.table.grid().iter().map(|g| fmt17(*g)).collect();
    let key = format!(
        "{}|{}|{}|{}|{}|{}|{}|{}|{}",
        ch.constellation.name(),
        ch.n_t,
        ch.n_r,
        ch.blocks,
        exp.table.samples,
        exp.table.seed,
        exp.table.noise_draws,
        estimator,
        grid.join(",")
    );
    exp.cache_dir.join(format!("mi-{}.csv", &sha256_hex(key.as_bytes())[..16]))
}

fn table_fits(t: &MiCdfTable, exp: &ExperimentConfig) -> bool {
    t.matches(&exp.channel)
        && t.samples_per_point() == exp.table.samples
        && t.seed == exp.table.seed
        && t.noise_draws == exp.table.noise_draws
        && t.snr_grid() == exp.table.grid().as_slice()
}

/// Loads the MI table for `exp` from the cache, or builds and stores it.
/// Returns the table and whether it was rebuilt.
pub fn ensure_table(exp: &ExperimentConfig) -> Result<(MiCdfTable, bool)> {
    let path = table_path(exp);
    if path.exists() {
        match MiCdfTable::load(&path) {
            Ok(t) if table_fits(&t, exp) => return Ok((t, false)),
            Ok(_) => log::warn!("cached table {} does not match the configuration; rebuilding", path.display()),
            Err(e) => log::warn!("cached table {} unreadable ({e}); rebuilding", path.display()),
        }
    }
    let grid = exp.table.grid();
    let table = with_workers(exp.simulation.workers, || {
        build_mi_table(&exp.channel, &grid, exp.table.samples, exp.table.noise_draws, exp.table.seed)
    })?;
    table.save(&path)?;
    Ok((table, true))
}

fn build_tree(exp: &ExperimentConfig) -> Result<ThresholdTree> {
    match exp.tree()? {
        TreeChoice::Designed => design_thresholds(&exp.channel),
        TreeChoice::Canonical => canonical_grid_tree(&exp.channel),
    }
}

fn build_policy(scheme: PolicyScheme, tree: &ThresholdTree, table: Option<&MiCdfTable>, budget: f64) -> Result<PowerPolicy> {
    match (scheme, table) {
        (PolicyScheme::Constant, _) => constant_policy(tree, budget),
        (PolicyScheme::AppendixB, Some(t)) => appendix_b_policy(tree, t, budget),
        (PolicyScheme::Eq28, Some(t)) => solve_eq28(tree, t, budget, &default_power_grid(t)),
        _ => unreachable!("table is built for every adaptive scheme"),
    }
}

fn snr_name(db: f64) -> String {
    format!("{db}dB")
}

pub fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::MiTable { common } => {
            let exp = load_experiment(common)?;
            let (table, rebuilt) = ensure_table(&exp)?;
            eprintln!(
                "mi-table: {} {} ({} SNR points x {} samples, fingerprint {})",
                if rebuilt { "built" } else { "reused" },
                table_path(&exp).display(),
                table.snr_grid().len(),
                table.samples_per_point(),
                &table.fingerprint()[..16]
            );
            Ok(())
        }
        Command::Diversity { common } => diversity(&load_experiment(common)?),
        Command::Curve { common, points } => curve(&load_experiment(common)?, *points),
        Command::Thresholds { common } => thresholds(&load_experiment(common)?),
        Command::SolvePower { common, scheme, snr_db } => {
            let mut exp = load_experiment(common)?;
            if let Some(s) = scheme {
                exp.scheme = *s;
            }
            if let Some(db) = snr_db {
                exp.snr_db = vec![*db];
            }
            solve_power(&exp)
        }
        Command::Simulate {
            common,
            scheme,
            trials,
            seed,
            policy,
        } => {
            let mut exp = load_experiment(common)?;
            if let Some(s) = scheme {
                exp.scheme = *s;
            }
            if let Some(t) = trials {
                exp.simulation.trials = *t;
            }
            if let Some(s) = seed {
                exp.simulation.seed = *s;
            }
            simulate(&exp, policy.as_deref())
        }
    }
}

fn query(exp: &ExperimentConfig) -> Result<DiversityQuery> {
    let c = &exp.channel;
    DiversityQuery::new(
        c.n_t as u32,
        c.n_r as u32,
        c.blocks as u32,
        c.bits_per_symbol(),
        c.rate,
        c.rounds as u32,
        c.levels as u32,
    )
}

pub fn diversity_csv(exp: &ExperimentConfig) -> Result<String> {
    let q = query(exp)?;
    let round = exp.channel.rounds as u32;
    let mut out = Manifest::new("diversity", exp).csv_line();
    out.push_str("scheme,round,levels,diversity,validity\n");
    for scheme in Scheme::ALL {
        let q = match scheme {
            Scheme::MultiBit | Scheme::RandomCoding => DiversityQuery {
                feedback_levels: q.feedback_levels.max(q.sufficient_levels()),
                ..q
            },
            Scheme::OneBit => DiversityQuery { feedback_levels: 2, ..q },
            Scheme::ConstantPower => q,
        };
        let d = scheme_diversity(&q, scheme, round)?;
        writeln!(out, "{scheme},{round},{},{},{}", q.feedback_levels, d.value, d.validity).unwrap();
    }
    Ok(out)
}

fn diversity(exp: &ExperimentConfig) -> Result<()> {
    let csv = diversity_csv(exp)?;
    print!("{}", csv.lines().skip(1).map(|l| format!("{l}\n")).collect::<String>());
    write_artifact(&exp.output_dir.join("diversity.csv"), csv.as_bytes(), "diversity")
}

fn curve(exp: &ExperimentConfig, points: usize) -> Result<()> {
    if points == 0 {
        return Err(Error::invalid("--points must be >= 1"));
    }
    let q = query(exp)?;
    let top = exp.channel.max_rate();
    let rates: Vec<f64> = (0..points).map(|i| (i as f64 + 0.5) / points as f64 * top).collect();
    let mut out = Manifest::new("curve", exp).csv_line();
    out.push_str("rate,scheme,round,diversity,validity\n");
    for round in 1..=exp.channel.rounds as u32 {
        for scheme in Scheme::ALL {
            let c = tradeoff_curve(&q, &rates, scheme, round)?;
            for p in &c.points {
                writeln!(out, "{},{scheme},{round},{},{}", p.rate, p.value.value, p.value.validity).unwrap();
            }
        }
    }
    write_artifact(&exp.output_dir.join("tradeoff.csv"), out.as_bytes(), "curve")
}

/// `branch,k,threshold` rows, branches by depth then index.
pub fn thresholds_csv(tree: &ThresholdTree, manifest: &Manifest) -> String {
    let mut out = manifest.csv_line();
    out.push_str("branch,k,threshold\n");
    let mut branches: Vec<_> = tree.branches().collect();
    branches.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then(a.0.cmp(b.0)));
    for (f, th) in branches {
        for (k, t) in th.iter().enumerate() {
            writeln!(out, "\"{f}\",{k},{t}").unwrap();
        }
    }
    out
}

fn thresholds(exp: &ExperimentConfig) -> Result<()> {
    let tree = build_tree(exp)?;
    let manifest = Manifest::new("thresholds", exp);
    let csv = thresholds_csv(&tree, &manifest);
    print!("{}", csv.lines().skip(1).map(|l| format!("{l}\n")).collect::<String>());
    write_artifact(&exp.output_dir.join("thresholds.csv"), csv.as_bytes(), "thresholds")?;
    let doc = Document { manifest, data: &tree };
    let json = serde_json::to_string_pretty(&doc).expect("tree serializes");
    write_artifact(&exp.output_dir.join("thresholds.json"), json.as_bytes(), "thresholds")
}

fn adaptive_table(exp: &ExperimentConfig) -> Result<Option<MiCdfTable>> {
    if exp.scheme == PolicyScheme::Constant {
        return Ok(None);
    }
    let (table, rebuilt) = ensure_table(exp)?;
    if rebuilt {
        eprintln!("mi-table: built {}", table_path(exp).display());
    }
    Ok(Some(table))
}

fn solve_power(exp: &ExperimentConfig) -> Result<()> {
    let tree = build_tree(exp)?;
    let table = adaptive_table(exp)?;
    for &db in &exp.snr_db {
        let policy = build_policy(exp.scheme, &tree, table.as_ref(), db_to_linear(db))?;
        for w in &policy.warnings {
            log::warn!("{}dB: {w}", db);
        }
        let mut manifest = Manifest::new("solve-power", exp);
        manifest.table_fingerprint = table.as_ref().map(MiCdfTable::fingerprint);
        if let Some(t) = &table {
            manifest.seeds.insert("table".into(), t.seed);
        }
        manifest.policy_fingerprints.push(policy.fingerprint());
        let doc = Document { manifest, data: &policy };
        let json = serde_json::to_string_pretty(&doc).expect("policy serializes");
        let path = exp.output_dir.join(format!("policy-{}-{}.json", exp.scheme, snr_name(db)));
        write_artifact(&path, json.as_bytes(), "solve-power")?;
    }
    Ok(())
}

/// Reads a policy file written by `solve-power` (or a bare policy document).
pub fn read_policy(path: &Path) -> Result<PowerPolicy> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(doc) = serde_json::from_str::<Document<serde_json::Value>>(&text) {
        return PowerPolicy::from_json(&doc.data.to_string());
    }
    PowerPolicy::from_json(&text)
}

pub fn outage_csv(exp: &ExperimentConfig, policy_file: Option<&Path>) -> Result<(String, Manifest)> {
    let tree = build_tree(exp)?;
    let options = SimOptions {
        convention: exp.ack,
        noise_draws: exp.simulation.noise_draws,
        estimator: None,
    };
    let mut manifest = Manifest::new("simulate", exp);
    manifest.seeds.insert("simulation".into(), exp.simulation.seed);

    let (snrs, curve) = match policy_file {
        Some(path) => {
            let policy = read_policy(path)?;
            let p = policy.budget;
            manifest.policy_fingerprints.push(policy.fingerprint());
            let curve = sweep_snr(
                &exp.channel,
                &|_| Ok(tree.clone()),
                &|_, _| Ok(policy.clone()),
                &[p],
                options,
                exp.simulation.trials,
                exp.simulation.seed,
                exp.simulation.workers,
            )?;
            (vec![10.0 * p.log10()], curve)
        }
        None => {
            let table = adaptive_table(exp)?;
            if let Some(t) = &table {
                manifest.table_fingerprint = Some(t.fingerprint());
                manifest.seeds.insert("table".into(), t.seed);
            }
            let linear: Vec<f64> = exp.snr_db.iter().map(|&d| db_to_linear(d)).collect();
            let curve = sweep_snr(
                &exp.channel,
                &|_| Ok(tree.clone()),
                &|tree, p| build_policy(exp.scheme, tree, table.as_ref(), p),
                &linear,
                options,
                exp.simulation.trials,
                exp.simulation.seed,
                exp.simulation.workers,
            )?;
            manifest.policy_fingerprints = curve.results.iter().map(|r| r.policy_fingerprint.clone()).collect();
            (exp.snr_db.clone(), curve)
        }
    };

    let mut out = manifest.csv_line();
    out.push_str("snr_db,round,p_out,ci_lo,ci_hi,trials,mean_total_power,slope_to_next\n");
    for row in &curve.rows {
        let db = snrs[curve_index(&curve, row.snr)];
        let slope = row.slope_to_next.map(|s| s.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{db},{},{},{},{},{},{},{slope}",
            row.round, row.p_out, row.ci_lo, row.ci_hi, row.trials, row.mean_total_power
        )
        .unwrap();
    }
    Ok((out, manifest))
}

fn curve_index(curve: &crate::sim::OutageCurve, snr: f64) -> usize {
    let mut snrs: Vec<f64> = curve.rows.iter().map(|r| r.snr).collect();
    snrs.dedup();
    snrs.iter().position(|&s| s == snr).expect("row snr comes from the sweep")
}

fn simulate(exp: &ExperimentConfig, policy_file: Option<&Path>) -> Result<()> {
    let (csv, manifest) = outage_csv(exp, policy_file)?;
    let stem = format!("outage-{}", exp.scheme);
    write_artifact(&exp.output_dir.join(format!("{stem}.csv")), csv.as_bytes(), "simulate")?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_artifact(&exp.output_dir.join(format!("{stem}.manifest.json")), json.as_bytes(), "simulate")
}
