//! Discrete input constellations with unit average energy.

use std::io::BufRead;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest joint transmit alphabet `|X|^{N_t}` the mutual-information kernel will enumerate.
pub const MAX_JOINT_ALPHABET: usize = 1 << 16;

/// A signal set of `2^M` distinct complex points with `E|x|^2 = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Constellation {
    name: String,
    points: Vec<Complex64>,
    bits_per_symbol: u32,
}

impl Constellation {
    /// Square `2^m`-QAM on the odd-integer grid, scaled to unit energy.
    ///
    /// Points are ordered row-major by grid coordinate: the real coordinate is the outer index,
    /// the imaginary coordinate the inner one, both ascending.
    pub fn qam(m: u32) -> Result<Self> {
        if !matches!(m, 2 | 4 | 6 | 8) {
            return Err(Error::invalid(format!(
                "QAM needs an even bits-per-symbol in {{2,4,6,8}}, got {m}"
            )));
        }
        let side = 1i64 << (m / 2);
        let coords: Vec<f64> = (0..side).map(|i| (2 * i - (side - 1)) as f64).collect();
        // mean of re^2 + im^2 over the square grid
        let scale = (2.0 * ((side * side - 1) as f64) / 3.0).sqrt().recip();
        let points = coords
            .iter()
            .flat_map(|&re| coords.iter().map(move |&im| Complex64::new(re * scale, im * scale)))
            .collect();
        let name = if m == 2 {
            "qpsk".to_string()
        } else {
            format!("qam{}", 1u32 << m)
        };
        Constellation::new(name, points)
    }

    /// `2^m` equally spaced points on the unit circle, starting at angle zero.
    pub fn psk(m: u32) -> Result<Self> {
        if !(1..=3).contains(&m) {
            return Err(Error::invalid(format!("PSK needs m in {{1,2,3}}, got {m}")));
        }
        let n = 1usize << m;
        let points = (0..n)
            .map(|k| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / n as f64))
            .map(snap)
            .collect();
        let name = match m {
            1 => "bpsk".to_string(),
            2 => "psk4".to_string(),
            _ => format!("psk{n}"),
        };
        Constellation::new(name, points)
    }

    /// Resolves the names used in configuration files.
    pub fn from_name(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "bpsk" => Constellation::psk(1),
            "qpsk" | "qam4" => Constellation::qam(2),
            "psk4" => Constellation::psk(2),
            "psk8" | "8psk" => Constellation::psk(3),
            "qam16" | "16qam" => Constellation::qam(4),
            "qam64" | "64qam" => Constellation::qam(6),
            "qam256" | "256qam" => Constellation::qam(8),
            other => Err(Error::invalid(format!("unknown constellation '{other}'"))),
        }
    }

    /// Reads `re,im` rows (blank lines and `#` comments skipped) and normalizes to unit energy.
    pub fn from_csv<R: BufRead>(name: &str, reader: R) -> Result<Self> {
        let mut raw = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::parse(name, e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',').map(str::trim);
            let (re, im) = match (fields.next(), fields.next(), fields.next()) {
                (Some(re), Some(im), None) => (re, im),
                _ => {
                    return Err(Error::parse(
                        format!("{name}:{}", lineno + 1),
                        "expected two comma-separated numbers",
                    ))
                }
            };
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::parse(format!("{name}:{}", lineno + 1), format!("bad number '{s}'")))
            };
            raw.push(Complex64::new(parse(re)?, parse(im)?));
        }
        let energy = raw.iter().map(|p| p.norm_sqr()).sum::<f64>() / raw.len().max(1) as f64;
        if !(energy > 0.0 && energy.is_finite()) {
            return Err(Error::invalid(format!("constellation '{name}' has no energy")));
        }
        let scale = energy.sqrt().recip();
        Constellation::new(name.to_string(), raw.into_iter().map(|p| p * scale).collect())
    }

    fn new(name: String, points: Vec<Complex64>) -> Result<Self> {
        let n = points.len();
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::invalid(format!(
                "constellation size must be a power of two >= 2, got {n}"
            )));
        }
        if points.iter().any(|p| !p.re.is_finite() || !p.im.is_finite()) {
            return Err(Error::invalid("constellation points must be finite"));
        }
        for i in 0..n {
            for j in i + 1..n {
                if (points[i] - points[j]).norm_sqr() < 1e-24 {
                    return Err(Error::invalid(format!("constellation points {i} and {j} coincide")));
                }
            }
        }
        let energy = points.iter().map(|p| p.norm_sqr()).sum::<f64>() / n as f64;
        if (energy - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("constellation energy {energy} is not unit")));
        }
        Ok(Constellation {
            name,
            points,
            bits_per_symbol: n.trailing_zeros(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.bits_per_symbol
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean_energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.points.len() as f64
    }

    /// Every transmit vector in `X^{n_t}`, lexicographic in the per-antenna point indices
    /// (antenna 0 is the most significant position).
    pub fn joint_alphabet(&self, n_t: usize) -> Result<Vec<Vec<Complex64>>> {
        if n_t == 0 {
            return Err(Error::invalid("n_t must be at least 1"));
        }
        let size = (self.points.len() as u128).checked_pow(n_t as u32).unwrap_or(u128::MAX);
        if size > MAX_JOINT_ALPHABET as u128 {
            return Err(Error::CapacityExceeded {
                what: "joint transmit alphabet",
                requested: size,
                limit: MAX_JOINT_ALPHABET as u128,
            });
        }
        let q = self.points.len();
        Ok((0..size as usize)
            .map(|mut idx| {
                let mut v = vec![Complex64::new(0.0, 0.0); n_t];
                for slot in v.iter_mut().rev() {
                    *slot = self.points[idx % q];
                    idx /= q;
                }
                v
            })
            .collect())
    }
}

// cos/sin of multiples of pi/2 leave 1e-16 residue; snap those to exact zeros
fn snap(p: Complex64) -> Complex64 {
    let fix = |x: f64| if x.abs() < 1e-15 { 0.0 } else { x };
    Complex64::new(fix(p.re), fix(p.im))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn qpsk_points() {
        let q = Constellation::qam(2).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let want = [c(-s, -s), c(-s, s), c(s, -s), c(s, s)];
        for (p, w) in q.points().iter().zip(want) {
            assert!((p - w).norm() < 1e-15);
        }
        assert_eq!(q.bits_per_symbol(), 2);
    }

    #[test]
    fn qam16_scale_matches_grid_power() {
        // enumerate the unscaled +-1,+-3 grid
        let grid = [-3.0, -1.0, 1.0, 3.0];
        let mean: f64 = grid
            .iter()
            .flat_map(|&a| grid.iter().map(move |&b| a * a + b * b))
            .sum::<f64>()
            / 16.0;
        assert_eq!(mean, 10.0);
        let q = Constellation::qam(4).unwrap();
        let s = 1.0 / 10f64.sqrt();
        assert!((q.points()[0] - c(-3.0 * s, -3.0 * s)).norm() < 1e-15);
        assert!((q.mean_energy() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn qam_rejects_odd_or_large() {
        for m in [0, 1, 3, 5, 10] {
            assert!(matches!(Constellation::qam(m), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn psk_points() {
        assert_eq!(Constellation::psk(1).unwrap().points(), &[c(1.0, 0.0), c(-1.0, 0.0)]);
        assert_eq!(
            Constellation::psk(2).unwrap().points(),
            &[c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0), c(0.0, -1.0)]
        );
        assert!(Constellation::psk(0).is_err());
        assert!(Constellation::psk(4).is_err());
    }

    #[test]
    fn psk8_chord_lengths() {
        let p = Constellation::psk(3).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let k = (i as i32 - j as i32).rem_euclid(8) as f64;
                let chord = 2.0 * (k * std::f64::consts::PI / 8.0).sin().abs();
                assert!(((p.points()[i] - p.points()[j]).norm() - chord).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn generators_are_normalized_and_deterministic() {
        for name in ["bpsk", "qpsk", "psk8", "qam16", "qam64", "qam256"] {
            let a = Constellation::from_name(name).unwrap();
            let b = Constellation::from_name(name).unwrap();
            assert_eq!(a, b);
            assert!((a.mean_energy() - 1.0).abs() < 1e-12, "{name}");
            assert_eq!(a.len(), 1 << a.bits_per_symbol());
        }
    }

    #[test]
    fn joint_alphabet_order_and_size() {
        let b = Constellation::psk(1).unwrap();
        assert_eq!(b.joint_alphabet(1).unwrap(), vec![vec![c(1.0, 0.0)], vec![c(-1.0, 0.0)]]);
        let two = b.joint_alphabet(2).unwrap();
        let expect = [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
        for (v, e) in two.iter().zip(expect) {
            assert_eq!(v, &vec![c(e[0], 0.0), c(e[1], 0.0)]);
        }
    }

    #[test]
    fn joint_alphabet_qam16_two_antennas_unique() {
        let q = Constellation::qam(4).unwrap();
        let a = q.joint_alphabet(2).unwrap();
        assert_eq!(a.len(), 256);
        for i in 0..a.len() {
            assert!(a[i].iter().all(|x| q.points().contains(x)));
            for j in i + 1..a.len() {
                assert_ne!(a[i], a[j]);
            }
        }
    }

    #[test]
    fn joint_alphabet_capacity_guard() {
        let q = Constellation::qam(8).unwrap();
        assert_eq!(q.joint_alphabet(2).unwrap().len(), 1 << 16);
        match q.joint_alphabet(3) {
            Err(Error::CapacityExceeded { limit, .. }) => assert_eq!(limit, 65536),
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn csv_points_are_normalized() {
        let text = "# custom\n2,0\n-2,0\n0,2\n0,-2\n";
        let c = Constellation::from_csv("custom", text.as_bytes()).unwrap();
        assert!((c.mean_energy() - 1.0).abs() < 1e-12);
        assert_eq!(c.bits_per_symbol(), 2);
        assert!(Constellation::from_csv("bad", "1,2,3\n".as_bytes()).is_err());
        assert!(Constellation::from_csv("dup", "1,0\n1,0\n".as_bytes()).is_err());
    }
}
