//! Deterministic mutual information for single-transmit-antenna channels.
//!
//! With one transmit antenna the circular symmetry of the noise makes the block mutual
//! information a function of the effective SNR `g = P |h|^2` alone (for `N_r > 1`, matched
//! filtering reduces the block to a scalar channel with gain `|h|`). [`scalar_mi_quadrature`]
//! integrates the noise expectation with a tensor Gauss-Hermite rule, and [`ScalarMiCurve`]
//! tabulates it over `g` for fast lookups during simulation.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;

use super::kernel::MiSample;
use crate::constellation::Constellation;
use crate::error::{Error, Result};

/// Default quadrature order for the tabulated curve.
pub const CURVE_NODES: usize = 32;

/// Nodes and weights of the `n`-point Gauss-Hermite rule for `int f(x) exp(-x^2) dx`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (PIM4, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-14 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

struct Rule {
    // complex noise nodes and their weights, already divided by pi
    nodes: Vec<(Complex64, f64)>,
}

impl Rule {
    fn new(order: usize) -> Self {
        let (x, w) = gauss_hermite(order);
        let mut nodes = Vec::with_capacity(order * order);
        for (xi, wi) in x.iter().zip(&w) {
            for (xj, wj) in x.iter().zip(&w) {
                nodes.push((Complex64::new(*xi, *xj), wi * wj / std::f64::consts::PI));
            }
        }
        Rule { nodes }
    }

    fn mi(&self, points: &[Complex64], bits: u32, a: Complex64) -> f64 {
        let q = points.len();
        let mut exps = vec![0.0; q];
        let mut total = 0.0;
        for &x in points {
            for &(w, weight) in &self.nodes {
                let w_energy = w.norm_sqr();
                let mut max = f64::NEG_INFINITY;
                for (e, &xp) in exps.iter_mut().zip(points) {
                    *e = w_energy - (a * (x - xp) + w).norm_sqr();
                    max = max.max(*e);
                }
                let lse = max + exps.iter().map(|e| (e - max).exp()).sum::<f64>().ln();
                total += weight * lse;
            }
        }
        bits as f64 - total / (q as f64 * std::f64::consts::LN_2)
    }
}

/// Mutual information of `y = sqrt(P) g x + w` by 2-D Gauss-Hermite quadrature over the noise.
pub fn scalar_mi_quadrature(c: &Constellation, gain: Complex64, snr: f64, nodes: usize) -> Result<MiSample> {
    if nodes < 16 {
        return Err(Error::invalid(format!("quadrature order must be >= 16, got {nodes}")));
    }
    if !(snr >= 0.0 && snr.is_finite()) {
        return Err(Error::invalid(format!("snr must be finite and >= 0, got {snr}")));
    }
    if !gain.re.is_finite() || !gain.im.is_finite() {
        return Err(Error::invalid("gain must be finite"));
    }
    let cap = c.bits_per_symbol() as f64;
    if snr == 0.0 || gain.norm_sqr() == 0.0 {
        return Ok(MiSample::clamped(0.0, cap));
    }
    let value = Rule::new(nodes).mi(c.points(), c.bits_per_symbol(), snr.sqrt() * gain);
    debug_assert!(
        value > -1e-9 * cap && value < cap * (1.0 + 1e-9),
        "quadrature MI {value} outside [0, {cap}]"
    );
    Ok(MiSample::clamped(value, cap))
}

/// Scalar-channel mutual information tabulated on a uniform grid in `log10 g`.
#[derive(Debug)]
pub struct ScalarMiCurve {
    cap: f64,
    log_lo: f64,
    step: f64,
    values: Vec<f64>,
}

const POINTS_PER_DECADE: f64 = 100.0;
const LOG_G_LO: f64 = -4.0;

impl ScalarMiCurve {
    pub fn build(c: &Constellation, nodes: usize) -> Result<Self> {
        if nodes < 16 {
            return Err(Error::invalid(format!("quadrature order must be >= 16, got {nodes}")));
        }
        let pts = c.points();
        let mut d2min = f64::INFINITY;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                d2min = d2min.min((pts[i] - pts[j]).norm_sqr());
            }
        }
        // beyond g * d2min / 4 ~ 200 the deficit is below exp(-200)
        let log_hi = (800.0 / d2min).max(1e3).log10();
        let count = ((log_hi - LOG_G_LO) * POINTS_PER_DECADE).ceil() as usize + 1;
        let step = 1.0 / POINTS_PER_DECADE;
        let rule = Rule::new(nodes);
        let cap = c.bits_per_symbol() as f64;
        use rayon::prelude::*;
        let values = (0..count)
            .into_par_iter()
            .map(|i| {
                let g = 10f64.powf(LOG_G_LO + i as f64 * step);
                rule.mi(pts, c.bits_per_symbol(), Complex64::new(g.sqrt(), 0.0)).clamp(0.0, cap)
            })
            .collect();
        Ok(ScalarMiCurve {
            cap,
            log_lo: LOG_G_LO,
            step,
            values,
        })
    }

    /// Shared curve for `c`, built on first use.
    pub fn shared(c: &Constellation) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<String, Arc<ScalarMiCurve>>>> = OnceLock::new();
        let key = format!("{}:{:?}", c.name(), c.points());
        let cache = CACHE.get_or_init(Default::default);
        if let Some(curve) = cache.lock().unwrap().get(&key) {
            return Ok(curve.clone());
        }
        let curve = Arc::new(ScalarMiCurve::build(c, CURVE_NODES)?);
        cache.lock().unwrap().entry(key).or_insert(curve.clone());
        Ok(curve)
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    /// Mutual information at effective SNR `g = P |h|^2`.
    pub fn eval(&self, g: f64) -> f64 {
        if g <= 0.0 {
            return 0.0;
        }
        let g_lo = 10f64.powf(self.log_lo);
        if g < g_lo {
            // MI is linear in g near zero
            return self.values[0] * g / g_lo;
        }
        let pos = (g.log10() - self.log_lo) / self.step;
        let last = self.values.len() - 1;
        if pos >= last as f64 {
            return self.values[last];
        }
        let i = pos.floor() as usize;
        let t = pos - i as f64;
        let p1 = self.values[i];
        let p2 = self.values[i + 1];
        let p0 = if i > 0 { self.values[i - 1] } else { 2.0 * p1 - p2 };
        let p3 = if i + 2 <= last { self.values[i + 2] } else { 2.0 * p2 - p1 };
        // Catmull-Rom
        let v = p1
            + 0.5
                * t
                * (p2 - p0 + t * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + t * (3.0 * (p1 - p2) + p3 - p0)));
        v.clamp(0.0, self.cap)
    }
}
