//! Empirical CDF tables of the per-round mutual information over an SNR grid.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::evaluator::{EstimatorKind, MiEvaluator};
use crate::config::ChannelConfig;
use crate::error::{Error, Result};
use crate::seeding::{stream_rng, CHUNK};

const MAGIC: &str = "# inr-arq mi-cdf-table v1";
pub const MIN_SAMPLES: usize = 1000;

/// Sorted samples of `I_l` at each SNR of an ascending grid.
///
/// Every grid point reuses the same per-chunk random streams, so the samples at different SNRs
/// come from the same fading (and noise) realizations.
#[derive(Clone, Debug, PartialEq)]
pub struct MiCdfTable {
    pub constellation: String,
    pub n_t: usize,
    pub n_r: usize,
    pub blocks: usize,
    pub bits: u32,
    pub seed: u64,
    pub noise_draws: usize,
    pub estimator: EstimatorKind,
    snr_grid: Vec<f64>,
    samples: Vec<Vec<f64>>,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("SNR grid is empty"));
    }
    if grid.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(Error::invalid("SNR grid values must be finite and >= 0"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("SNR grid must be strictly ascending"));
    }
    Ok(())
}

/// Tabulates `I_l` with the default estimator for `cfg`.
pub fn build_mi_table(
    cfg: &ChannelConfig,
    snr_grid: &[f64],
    samples_per_point: usize,
    noise_draws: usize,
    seed: u64,
) -> Result<MiCdfTable> {
    let ev = MiEvaluator::for_config(cfg, noise_draws)?;
    build_mi_table_with(&ev, cfg, snr_grid, samples_per_point, seed)
}

pub fn build_mi_table_with(
    ev: &MiEvaluator,
    cfg: &ChannelConfig,
    snr_grid: &[f64],
    samples_per_point: usize,
    seed: u64,
) -> Result<MiCdfTable> {
    check_grid(snr_grid)?;
    if samples_per_point < MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "samples_per_point must be >= {MIN_SAMPLES}, got {samples_per_point}"
        )));
    }
    let chunks = samples_per_point.div_ceil(CHUNK);
    let mut samples = Vec::with_capacity(snr_grid.len());
    for &snr in snr_grid {
        let parts = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = stream_rng(seed, c as u64);
                let len = CHUNK.min(samples_per_point - c * CHUNK);
                (0..len)
                    .map(|_| ev.sample_round(snr, &mut rng).map(|d| d.mi))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut row: Vec<f64> = parts.into_iter().flatten().collect();
        row.sort_by(f64::total_cmp);
        samples.push(row);
    }
    Ok(MiCdfTable {
        constellation: cfg.constellation.name().to_string(),
        n_t: cfg.n_t,
        n_r: cfg.n_r,
        blocks: cfg.blocks,
        bits: cfg.bits_per_symbol(),
        seed,
        noise_draws: ev.noise_draws(),
        estimator: ev.kind(),
        snr_grid: snr_grid.to_vec(),
        samples,
    })
}

impl MiCdfTable {
    pub fn snr_grid(&self) -> &[f64] {
        &self.snr_grid
    }

    pub fn samples(&self, grid_index: usize) -> &[f64] {
        &self.samples[grid_index]
    }

    pub fn samples_per_point(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn cap(&self) -> f64 {
        (self.bits as usize * self.n_t) as f64
    }

    /// Smallest probability the table can report: `1 / (n + 1)`.
    pub fn floor(&self) -> f64 {
        1.0 / (self.samples_per_point() as f64 + 1.0)
    }

    pub fn snr_range(&self) -> (f64, f64) {
        (self.snr_grid[0], *self.snr_grid.last().unwrap())
    }

    /// Whether the table describes the channel of `cfg`.
    pub fn matches(&self, cfg: &ChannelConfig) -> bool {
        self.constellation == cfg.constellation.name()
            && self.n_t == cfg.n_t
            && self.n_r == cfg.n_r
            && self.blocks == cfg.blocks
            && self.bits == cfg.bits_per_symbol()
    }

    fn point_cdf(&self, i: usize, threshold: f64) -> f64 {
        let row = &self.samples[i];
        let count = row.partition_point(|&x| x <= threshold);
        (count as f64 / row.len() as f64).max(self.floor())
    }

    /// `Pr[I <= threshold]` at `snr`, floored at `1/(n+1)`.
    ///
    /// Between grid points the probability is interpolated linearly in `(log P, log Pr)`; on a
    /// segment starting at `P = 0` the interpolation is linear in `P` instead.
    pub fn cdf_at(&self, snr: f64, threshold: f64) -> Result<f64> {
        if !threshold.is_finite() {
            return Err(Error::invalid("threshold must be finite"));
        }
        let (lo, hi) = self.snr_range();
        let tol = 1e-12 * hi.max(1.0);
        if !(snr >= lo - tol && snr <= hi + tol) {
            return Err(Error::OutOfRange(format!(
                "snr {snr} outside MI table grid [{lo}, {hi}]"
            )));
        }
        if threshold >= self.cap() {
            return Ok(1.0);
        }
        let snr = snr.clamp(lo, hi);
        let j = self.snr_grid.partition_point(|&g| g <= snr);
        let i = j - 1;
        if self.snr_grid[i] == snr || i + 1 == self.snr_grid.len() {
            return Ok(self.point_cdf(i, threshold));
        }
        let (g0, g1) = (self.snr_grid[i], self.snr_grid[i + 1]);
        let (p0, p1) = (self.point_cdf(i, threshold), self.point_cdf(i + 1, threshold));
        if g0 == 0.0 {
            let w = snr / g1;
            return Ok(p0 + w * (p1 - p0));
        }
        let w = (snr.ln() - g0.ln()) / (g1.ln() - g0.ln());
        Ok(((1.0 - w) * p0.ln() + w * p1.ln()).exp())
    }

    fn header(&self) -> String {
        let grid = self.snr_grid.iter().map(|g| fmt17(*g)).collect::<Vec<_>>().join(",");
        format!(
            "{MAGIC}\nconstellation={}\nnt={}\nnr={}\nb={}\nm={}\nn={}\nseed={}\nnoise_draws={}\nestimator={}\ngrid={}\n",
            self.constellation,
            self.n_t,
            self.n_r,
            self.blocks,
            self.bits,
            self.samples_per_point(),
            self.seed,
            self.noise_draws,
            self.estimator,
            grid
        )
    }

    /// SHA-256 of the header: identifies the table's inputs.
    pub fn fingerprint(&self) -> String {
        hex(&Sha256::digest(self.header().as_bytes()))
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(self.header().as_bytes())?;
        let mut line = String::new();
        for row in &self.samples {
            line.clear();
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                line.push_str(&fmt17(*v));
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        out.flush()
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let ctx = "mi table";
        let mut lines = reader.lines();
        let mut header = BTreeMap::new();
        let mut rows = Vec::new();
        match lines.next() {
            Some(Ok(l)) if l == MAGIC => {}
            _ => return Err(Error::parse(ctx, "missing table magic line")),
        }
        for line in lines {
            let line = line.map_err(|e| Error::parse(ctx, e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            if rows.is_empty() {
                if let Some((k, v)) = line.split_once('=') {
                    header.insert(k.to_string(), v.to_string());
                    continue;
                }
            }
            let row = line
                .split(',')
                .map(|s| s.parse::<f64>().map_err(|_| Error::parse(ctx, format!("bad sample '{s}'"))))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let get = |k: &str| header.get(k).ok_or_else(|| Error::parse(ctx, format!("missing header key '{k}'")));
        let num = |k: &str| -> Result<u64> {
            get(k)?.parse().map_err(|_| Error::parse(ctx, format!("bad value for '{k}'")))
        };
        let grid = get("grid")?
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|_| Error::parse(ctx, format!("bad grid value '{s}'"))))
            .collect::<Result<Vec<f64>>>()?;
        let table = MiCdfTable {
            constellation: get("constellation")?.clone(),
            n_t: num("nt")? as usize,
            n_r: num("nr")? as usize,
            blocks: num("b")? as usize,
            bits: num("m")? as u32,
            seed: num("seed")?,
            noise_draws: num("noise_draws")? as usize,
            estimator: get("estimator")?.parse()?,
            snr_grid: grid,
            samples: rows,
        };
        let n = num("n")? as usize;
        table.validate(n)?;
        Ok(table)
    }

    fn validate(&self, n: usize) -> Result<()> {
        check_grid(&self.snr_grid)?;
        if self.samples.len() != self.snr_grid.len() {
            return Err(Error::parse(
                "mi table",
                format!("{} rows for {} grid points", self.samples.len(), self.snr_grid.len()),
            ));
        }
        let cap = self.cap();
        for (i, row) in self.samples.iter().enumerate() {
            if row.len() != n {
                return Err(Error::parse("mi table", format!("row {i} has {} samples, expected {n}", row.len())));
            }
            if row.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::parse("mi table", format!("row {i} is not sorted")));
            }
            if row.iter().any(|&v| !(0.0..=cap).contains(&v)) {
                return Err(Error::parse("mi table", format!("row {i} has samples outside [0, {cap}]")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        crate::cli::output::write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        MiCdfTable::read_from(std::io::BufReader::new(file))
    }
}

/// Fixed 17-significant-digit scientific notation.
pub(crate) fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn siso() -> ChannelConfig {
        ChannelConfig::siso_fig5(4)
    }

    #[test]
    fn zero_grid_gives_zero_samples() {
        let t = build_mi_table(&siso(), &[0.0], 1000, 8, 1).unwrap();
        assert!(t.samples(0).iter().all(|&v| v == 0.0));
        assert_eq!(t.cdf_at(0.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_grids_and_sizes() {
        assert!(build_mi_table(&siso(), &[1.0, 0.5], 1000, 8, 1).is_err());
        assert!(build_mi_table(&siso(), &[], 1000, 8, 1).is_err());
        assert!(build_mi_table(&siso(), &[1.0], 999, 8, 1).is_err());
    }

    #[test]
    fn cdf_edges() {
        let t = build_mi_table(&siso(), &[1.0, 10.0, 100.0], 2000, 8, 3).unwrap();
        assert_eq!(t.cdf_at(10.0, 4.0).unwrap(), 1.0);
        assert_eq!(t.cdf_at(10.0, 9.0).unwrap(), 1.0);
        assert_eq!(t.cdf_at(10.0, -1.0).unwrap(), 1.0 / 2001.0);
        assert!(matches!(t.cdf_at(0.5, 1.0), Err(Error::OutOfRange(_))));
        assert!(matches!(t.cdf_at(101.0, 1.0), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn geometric_interpolation_between_grid_points() {
        let t = build_mi_table(&siso(), &[10.0, 40.0], 2000, 8, 5).unwrap();
        let thr = 3.0;
        // hand lookup of the two tabulated probabilities
        let count = |row: &[f64]| row.iter().filter(|&&v| v <= thr).count() as f64 / row.len() as f64;
        let p0 = count(t.samples(0)).max(t.floor());
        let p1 = count(t.samples(1)).max(t.floor());
        let mid = 20.0; // geometric midpoint of 10 and 40
        assert!((t.cdf_at(mid, thr).unwrap() - (p0 * p1).sqrt()).abs() < 1e-12);
        assert_eq!(t.cdf_at(10.0, thr).unwrap(), p0);
    }

    #[test]
    fn linear_segment_from_zero_snr() {
        let t = build_mi_table(&siso(), &[0.0, 2.0], 1000, 8, 5).unwrap();
        let p1 = t.cdf_at(2.0, 1.0).unwrap();
        assert!((t.cdf_at(1.0, 1.0).unwrap() - (1.0 + p1) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn cdf_monotone_in_threshold_and_snr() {
        let grid: Vec<f64> = (0..6).map(|i| 10f64.powf(i as f64 * 0.5)).collect();
        let t = build_mi_table(&siso(), &grid, 3000, 8, 11).unwrap();
        for &snr in &[1.0, 2.0, 7.0, 30.0, 100.0] {
            let mut prev = 0.0;
            for k in 0..=40 {
                let p = t.cdf_at(snr, k as f64 * 0.1).unwrap();
                assert!(p >= prev);
                prev = p;
            }
        }
        for k in 1..40 {
            let thr = k as f64 * 0.1;
            let mut prev = 1.0;
            for i in 0..=40 {
                let p = t.cdf_at(10f64.powf(i as f64 * 0.0625), thr).unwrap();
                assert!(p <= prev + 1e-15);
                prev = p;
            }
        }
    }

    #[test]
    fn same_seed_same_bytes_and_round_trip() {
        let grid = [0.5, 5.0, 50.0];
        let a = build_mi_table(&siso(), &grid, 1500, 8, 42).unwrap();
        let b = build_mi_table(&siso(), &grid, 1500, 8, 42).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write_to(&mut ba).unwrap();
        b.write_to(&mut bb).unwrap();
        assert_eq!(ba, bb);
        let back = MiCdfTable::read_from(ba.as_slice()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.fingerprint(), a.fingerprint());
    }

    #[test]
    fn loader_rejects_corrupt_tables() {
        let t = build_mi_table(&siso(), &[1.0, 2.0], 1000, 8, 1).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let unsorted = text.replacen("grid=1.0000000000000000e0,2.0000000000000000e0", "grid=2.0000000000000000e0,1.0000000000000000e0", 1);
        assert!(MiCdfTable::read_from(unsorted.as_bytes()).is_err());
        let mut lines: Vec<&str> = text.lines().collect();
        lines.pop();
        assert!(MiCdfTable::read_from(lines.join("\n").as_bytes()).is_err());
        assert!(MiCdfTable::read_from("garbage".as_bytes()).is_err());
    }
}
