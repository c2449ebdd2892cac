//! Experiment configuration files (TOML) and the shipped presets.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use toml::{Table, Value};

use crate::config::{AckConvention, ChannelConfig};
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::power::PolicyScheme;
use crate::rate::Rate;

pub const CACHE_ENV: &str = "INRARQ_CACHE_DIR";

const PRESETS: [(&str, &str); 2] = [
    ("siso_fig5", include_str!("../../presets/siso_fig5.toml")),
    ("mimo_fig6", include_str!("../../presets/mimo_fig6.toml")),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeChoice {
    Designed,
    Canonical,
}

impl fmt::Display for TreeChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TreeChoice::Designed => "designed",
            TreeChoice::Canonical => "canonical",
        })
    }
}

impl FromStr for TreeChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "designed" => Ok(TreeChoice::Designed),
            "canonical" => Ok(TreeChoice::Canonical),
            other => Err(Error::invalid(format!("tree must be 'designed' or 'canonical', got '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationSettings {
    pub trials: u64,
    pub seed: u64,
    pub workers: usize,
    pub noise_draws: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableSettings {
    pub samples: usize,
    pub seed: u64,
    pub noise_draws: usize,
    pub db_min: f64,
    pub db_max: f64,
    pub db_step: f64,
}

impl TableSettings {
    /// Linear SNR grid from `db_min` to `db_max` in `db_step` steps.
    pub fn grid(&self) -> Vec<f64> {
        let n = ((self.db_max - self.db_min) / self.db_step + 1e-9).floor() as usize;
        (0..=n).map(|i| db_to_linear(self.db_min + i as f64 * self.db_step)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub channel: ChannelConfig,
    pub ack: AckConvention,
    /// Explicit tree choice; by default the scheme decides.
    pub tree_choice: Option<TreeChoice>,
    pub simulation: SimulationSettings,
    pub snr_db: Vec<f64>,
    pub scheme: PolicyScheme,
    pub table: TableSettings,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// The canonical grid tree for the reciprocal-probability rule, the designed tree otherwise.
    pub fn tree(&self) -> Result<TreeChoice> {
        match (self.tree_choice, self.scheme) {
            (Some(TreeChoice::Designed), PolicyScheme::AppendixB) => Err(Error::Validation(vec![
                "protocol.tree: the appendix_b scheme needs the canonical tree".into(),
            ])),
            (Some(t), _) => Ok(t),
            (None, PolicyScheme::AppendixB) => Ok(TreeChoice::Canonical),
            (None, _) => Ok(TreeChoice::Designed),
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn preset_text(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            Error::Validation(vec![format!(
                "preset: unknown '{name}' (available: {})",
                preset_names().collect::<Vec<_>>().join(", ")
            )])
        })
}

pub fn load_preset(name: &str) -> Result<ExperimentConfig> {
    parse_config(preset_text(name)?)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Reads one TOML section, collecting every problem instead of stopping at the first.
struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
    errors: &'a mut Vec<String>,
    known: Vec<&'static str>,
}

impl<'a> Section<'a> {
    fn new(root: &'a Table, name: &'static str, errors: &'a mut Vec<String>) -> Self {
        let table = match root.get(name) {
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                errors.push(format!("{name}: must be a table"));
                None
            }
            None => None,
        };
        Section {
            name,
            table,
            errors,
            known: Vec::new(),
        }
    }

    fn fail(&mut self, key: &str, msg: impl fmt::Display) {
        self.errors.push(format!("{}.{key}: {msg}", self.name));
    }

    fn raw(&mut self, key: &'static str, required: bool) -> Option<&'a Value> {
        self.known.push(key);
        let v = self.table.and_then(|t| t.get(key));
        if v.is_none() && required {
            self.fail(key, "missing");
        }
        v
    }

    fn int(&mut self, key: &'static str, min: i64, default: Option<i64>) -> Option<i64> {
        match self.raw(key, default.is_none()) {
            None => default,
            Some(Value::Integer(i)) if *i >= min => Some(*i),
            Some(Value::Integer(i)) => {
                self.fail(key, format!("must be >= {min}, got {i}"));
                None
            }
            Some(_) => {
                self.fail(key, "must be an integer");
                None
            }
        }
    }

    fn float(&mut self, key: &'static str, default: Option<f64>) -> Option<f64> {
        match self.raw(key, default.is_none()) {
            None => default,
            Some(Value::Float(f)) if f.is_finite() => Some(*f),
            Some(Value::Integer(i)) => Some(*i as f64),
            Some(_) => {
                self.fail(key, "must be a finite number");
                None
            }
        }
    }

    fn string(&mut self, key: &'static str, default: Option<&str>) -> Option<String> {
        match self.raw(key, default.is_none()) {
            None => default.map(str::to_string),
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                self.fail(key, "must be a string");
                None
            }
        }
    }

    fn parsed<T: FromStr<Err = Error>>(&mut self, key: &'static str, default: Option<&str>) -> Option<T> {
        let s = self.string(key, default)?;
        match s.parse() {
            Ok(v) => Some(v),
            Err(e) => {
                self.fail(key, e);
                None
            }
        }
    }

    fn float_list(&mut self, key: &'static str) -> Option<Vec<f64>> {
        match self.raw(key, true) {
            None => None,
            Some(Value::Array(items)) => {
                let vals: Option<Vec<f64>> = items
                    .iter()
                    .map(|v| match v {
                        Value::Float(f) if f.is_finite() => Some(*f),
                        Value::Integer(i) => Some(*i as f64),
                        _ => None,
                    })
                    .collect();
                if vals.is_none() {
                    self.fail(key, "must be a list of numbers");
                }
                vals
            }
            Some(_) => {
                self.fail(key, "must be a list of numbers");
                None
            }
        }
    }

    fn finish(self) {
        if let Some(t) = self.table {
            for k in t.keys() {
                if !self.known.contains(&k.as_str()) {
                    self.errors.push(format!("{}.{k}: unknown key", self.name));
                }
            }
        }
    }
}

fn rate_value(sec: &mut Section<'_>) -> Option<Rate> {
    let text = match sec.raw("rate", true)? {
        Value::String(s) => s.clone(),
        Value::Float(f) => f.to_string(),
        Value::Integer(i) => i.to_string(),
        _ => {
            sec.fail("rate", "must be a number or a ratio string like \"7/2\"");
            return None;
        }
    };
    match text.parse::<Rate>() {
        Ok(r) => Some(r),
        Err(e) => {
            sec.fail("rate", e);
            None
        }
    }
}

fn as_usize(v: Option<i64>) -> Option<usize> {
    v.map(|v| v as usize)
}

/// Parses and validates a configuration document, reporting every violation at once.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let root: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Validation(vec![format!("syntax: {}", e.message())]))?;
    let mut errors = Vec::new();
    const SECTIONS: [&str; 7] = ["channel", "protocol", "simulation", "snr", "power", "table", "paths"];
    for k in root.keys() {
        if !SECTIONS.contains(&k.as_str()) {
            errors.push(format!("{k}: unknown section"));
        }
    }

    let mut s = Section::new(&root, "channel", &mut errors);
    let nt = as_usize(s.int("nt", 1, None));
    let nr = as_usize(s.int("nr", 1, None));
    let b = as_usize(s.int("b", 1, None));
    let modulation = s.string("modulation", None);
    let constellation = modulation.and_then(|m| match Constellation::from_name(&m) {
        Ok(c) => Some(c),
        Err(e) => {
            s.fail("modulation", e);
            None
        }
    });
    let rate = rate_value(&mut s);
    // checked here too so that the rate is reported even when another channel key is invalid
    if let (Some(n_t), Some(c), Some(r)) = (nt, &constellation, &rate) {
        let cap = (c.bits_per_symbol() as usize * n_t) as f64;
        if !(r.value() > 0.0 && r.value() < cap) {
            s.fail("rate", format!("must lie in (0, M*nt) = (0, {cap})"));
        }
    }
    s.finish();

    let mut s = Section::new(&root, "protocol", &mut errors);
    let rounds = as_usize(s.int("L", 1, None));
    let levels = match s.raw("K", true) {
        Some(Value::Integer(k)) if *k >= 2 => Some(*k as usize),
        Some(Value::Integer(_)) => {
            s.fail("K", "K >= 2 required (one ACK level plus at least one NACK level)");
            None
        }
        Some(_) => {
            s.fail("K", "must be an integer");
            None
        }
        None => None,
    };
    let ack = s.parsed::<AckConvention>("ack_convention", Some("outage"));
    let tree_text = s.string("tree", Some(""));
    s.finish();

    let mut s = Section::new(&root, "simulation", &mut errors);
    let trials = s.int("trials", 1000, Some(100_000)).map(|v| v as u64);
    let seed = s.int("seed", 0, Some(1)).map(|v| v as u64);
    let workers = as_usize(s.int("workers", 0, Some(0)));
    let noise_draws = as_usize(s.int("noise_draws", 1, Some(32)));
    s.finish();

    let mut s = Section::new(&root, "snr", &mut errors);
    let snr_db = s.float_list("db");
    if let Some(list) = &snr_db {
        if list.is_empty() || list.windows(2).any(|w| w[1] <= w[0]) {
            s.fail("db", "must be a nonempty strictly ascending list");
        }
    }
    s.finish();

    let mut s = Section::new(&root, "power", &mut errors);
    let scheme = s.parsed::<PolicyScheme>("scheme", Some("constant"));
    s.finish();

    let mut s = Section::new(&root, "table", &mut errors);
    let samples = as_usize(s.int("samples", crate::mutual_info::MIN_SAMPLES as i64, Some(20_000)));
    let table_seed = s.int("seed", 0, Some(2)).map(|v| v as u64);
    let table_draws = as_usize(s.int("noise_draws", 1, Some(32)));
    let db_min = s.float("db_min", Some(-10.0));
    let db_max = s.float("db_max", Some(50.0));
    let db_step = s.float("db_step", Some(1.0));
    if let (Some(lo), Some(hi), Some(step)) = (db_min, db_max, db_step) {
        if !(step > 0.0) || hi < lo {
            s.fail("db_step", "needs db_step > 0 and db_max >= db_min");
        }
    }
    s.finish();

    let mut s = Section::new(&root, "paths", &mut errors);
    let cache_dir = s.string("cache_dir", Some("cache"));
    let output_dir = s.string("output_dir", Some("out"));
    s.finish();

    let tree_choice = match tree_text.as_deref() {
        Some("") | None => None,
        Some(t) => match t.parse::<TreeChoice>() {
            Ok(t) => Some(t),
            Err(e) => {
                errors.push(format!("protocol.tree: {e}"));
                None
            }
        },
    };
    if let (Some(TreeChoice::Designed), Some(PolicyScheme::AppendixB)) = (tree_choice, scheme) {
        errors.push("protocol.tree: the appendix_b scheme needs the canonical tree".into());
    }

    let channel = match (nt, nr, b, constellation, rate, rounds, levels) {
        (Some(n_t), Some(n_r), Some(blocks), Some(constellation), Some(rate), Some(rounds), Some(levels)) => {
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
            for m in cfg.violations() {
                let section = if m.starts_with("K:") || m.starts_with("L:") { "protocol" } else { "channel" };
                let m = format!("{section}.{m}");
                if !errors.contains(&m) {
                    errors.push(m);
                }
            }
            Some(cfg)
        }
        _ => None,
    };

    if !errors.is_empty() {
        return Err(Error::Validation(errors));
    }
    let cache_dir = std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(cache_dir.unwrap()));
    Ok(ExperimentConfig {
        channel: channel.unwrap(),
        ack: ack.unwrap(),
        tree_choice,
        simulation: SimulationSettings {
            trials: trials.unwrap(),
            seed: seed.unwrap(),
            workers: workers.unwrap(),
            noise_draws: noise_draws.unwrap(),
        },
        snr_db: snr_db.unwrap(),
        scheme: scheme.unwrap(),
        table: TableSettings {
            samples: samples.unwrap(),
            seed: table_seed.unwrap(),
            noise_draws: table_draws.unwrap(),
            db_min: db_min.unwrap(),
            db_max: db_max.unwrap(),
            db_step: db_step.unwrap(),
        },
        cache_dir,
        output_dir: PathBuf::from(output_dir.unwrap()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn violations(text: &str) -> Vec<String> {
        match parse_config(text) {
            Err(Error::Validation(v)) => v,
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn presets_load() {
        let s = load_preset("siso_fig5").unwrap();
        let c = &s.channel;
        assert_eq!((c.n_t, c.n_r, c.blocks, c.rounds), (1, 1, 2, 2));
        assert_eq!(c.constellation.name(), "qam16");
        assert_eq!(c.rate.as_ratio(), Some((7, 2)));
        assert_eq!(s.tree().unwrap(), TreeChoice::Designed);
        assert_eq!(s.channel.levels, 4);
        let m = load_preset("mimo_fig6").unwrap();
        let c = &m.channel;
        assert_eq!((c.n_t, c.n_r, c.blocks, c.rounds), (2, 1, 1, 2));
        assert_eq!(c.rate.as_ratio(), Some((15, 2)));
        assert!(load_preset("nope").is_err());
    }

    #[test]
    fn k_below_two_is_named() {
        let text = preset_text("siso_fig5").unwrap().replace("K = 4", "K = 1");
        let v = violations(&text);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("K >= 2"), "{v:?}");
    }

    #[test]
    fn every_violation_is_reported() {
        let text = preset_text("siso_fig5")
            .unwrap()
            .replace("nr = 1", "nr = 0")
            .replace("rate = \"7/2\"", "rate = \"9\"")
            .replace("trials = 1000000", "trials = 10\ncolour = 3")
            .replace("scheme = \"eq28\"", "scheme = \"greedy\"");
        let v = violations(&text);
        for needle in ["channel.nr", "simulation.trials", "simulation.colour: unknown key", "power.scheme", "channel.rate"] {
            assert!(v.iter().any(|m| m.contains(needle)), "{needle} missing from {v:?}");
        }
    }

    #[test]
    fn missing_keys_and_sections() {
        let v = violations("[channel]\nnt = 1\n[extra]\n");
        assert!(v.iter().any(|m| m == "extra: unknown section"));
        assert!(v.iter().any(|m| m == "channel.nr: missing"));
        assert!(v.iter().any(|m| m == "protocol.K: missing"));
    }

    #[test]
    fn decimal_rates_stay_exact() {
        let text = preset_text("siso_fig5").unwrap().replace("rate = \"7/2\"", "rate = 3.5");
        assert_eq!(parse_config(&text).unwrap().channel.rate.as_ratio(), Some((7, 2)));
    }

    #[test]
    fn table_grid_in_linear_units() {
        let s = load_preset("siso_fig5").unwrap();
        let g = s.table.grid();
        assert_eq!(g.len(), 61);
        assert!((g[10] - 1.0).abs() < 1e-12);
        assert!((g[60] - 1e5).abs() < 1e-6);
    }
}
