//! Monte-Carlo mutual information of a discrete-input MIMO AWGN block.
//!
//! For `y = A x + w` with `A = sqrt(P / N_t) H`, `x` uniform on `X^{N_t}` and `w ~ CN(0, I)`:
//!
//! ```text
//! I = M N_t - E_{x,w}[ log2 sum_{x'} exp(-|A(x - x') + w|^2 + |w|^2) ]
//! ```
//!
//! The inner sum runs over the whole joint alphabet. The outer expectation uses `noise_draws`
//! noise samples; transmitted vectors are assigned to the draws round-robin from a random
//! offset, so with `noise_draws` a multiple of `|X|^{N_t}` every vector gets the same number of
//! draws.
//!
//! Near saturation the loss `M N_t - I` comes from rare large noise excursions that plain
//! sampling almost never sees, which biases the estimate up and its standard error down. Half
//! of the draws (chosen by a fair coin) therefore come from a wider noise law `CN(0, WIDE_VAR I)`
//! and every draw is reweighted by the mixture density ratio. The weights are bounded by 2, so
//! the variance is never more than doubled elsewhere.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::constellation::Constellation;
use crate::error::{Error, Result};

/// Noise variance of the wide mixture component.
const WIDE_VAR: f64 = 8.0;

/// A channel matrix `H_{l,b}` of shape `N_r x N_t`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FadingBlock {
    n_r: usize,
    n_t: usize,
    gains: Vec<Complex64>,
}

impl FadingBlock {
    pub fn new(n_r: usize, n_t: usize, gains: Vec<Complex64>) -> Result<Self> {
        if n_r == 0 || n_t == 0 || gains.len() != n_r * n_t {
            return Err(Error::invalid(format!(
                "fading block needs {n_r}x{n_t} gains, got {}",
                gains.len()
            )));
        }
        if gains.iter().any(|g| !g.re.is_finite() || !g.im.is_finite()) {
            return Err(Error::invalid("fading gains must be finite"));
        }
        Ok(FadingBlock { n_r, n_t, gains })
    }

    pub fn scalar(gain: Complex64) -> Result<Self> {
        FadingBlock::new(1, 1, vec![gain])
    }

    pub fn zeros(n_r: usize, n_t: usize) -> Self {
        FadingBlock {
            n_r,
            n_t,
            gains: vec![Complex64::new(0.0, 0.0); n_r * n_t],
        }
    }

    /// I.i.d. `CN(0, 1)` entries.
    pub fn random<R: Rng + ?Sized>(n_r: usize, n_t: usize, rng: &mut R) -> Self {
        let gains = (0..n_r * n_t).map(|_| complex_normal(rng)).collect();
        FadingBlock { n_r, n_t, gains }
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn gain(&self, r: usize, t: usize) -> Complex64 {
        self.gains[r * self.n_t + t]
    }

    pub fn gains(&self) -> &[Complex64] {
        &self.gains
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.gains.iter().map(|g| g.norm_sqr()).sum()
    }
}

/// `CN(0, 1)`: real and imaginary parts are `N(0, 1/2)`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Mutual information in bits per channel use, within `[0, M N_t]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct MiSample(f64);

impl MiSample {
    pub(crate) fn clamped(value: f64, cap: f64) -> Self {
        MiSample(value.clamp(0.0, cap))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// A Monte-Carlo estimate together with its standard error (bits).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiEstimate {
    pub value: MiSample,
    pub std_error: f64,
}

/// Precomputed joint alphabet for repeated block evaluations.
#[derive(Clone, Debug)]
pub struct MiKernel {
    bits: u32,
    n_t: usize,
    alphabet: Vec<Complex64>,
}

impl MiKernel {
    pub fn new(constellation: &Constellation, n_t: usize) -> Result<Self> {
        let alphabet = constellation.joint_alphabet(n_t)?.into_iter().flatten().collect();
        Ok(MiKernel {
            bits: constellation.bits_per_symbol(),
            n_t,
            alphabet,
        })
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn alphabet_len(&self) -> usize {
        self.alphabet.len() / self.n_t
    }

    pub fn cap(&self) -> f64 {
        (self.bits as usize * self.n_t) as f64
    }

    pub fn block_mi<R: Rng + ?Sized>(
        &self,
        h: &FadingBlock,
        snr: f64,
        noise_draws: usize,
        rng: &mut R,
    ) -> Result<MiEstimate> {
        if h.n_t != self.n_t {
            return Err(Error::invalid(format!(
                "fading block has {} transmit antennas, kernel expects {}",
                h.n_t, self.n_t
            )));
        }
        if !(snr >= 0.0 && snr.is_finite()) {
            return Err(Error::invalid(format!("snr must be finite and >= 0, got {snr}")));
        }
        if noise_draws == 0 {
            return Err(Error::invalid("noise_draws must be >= 1"));
        }
        if h.gains.iter().any(|g| !g.re.is_finite() || !g.im.is_finite()) {
            return Err(Error::invalid("fading gains must be finite"));
        }
        let zero = MiEstimate {
            value: MiSample(0.0),
            std_error: 0.0,
        };
        if snr == 0.0 || h.frobenius_sq() == 0.0 {
            return Ok(zero);
        }

        let n_r = h.n_r;
        let q = self.alphabet_len();
        let amp = (snr / self.n_t as f64).sqrt();
        // noiseless receive points A x for every joint symbol
        let mut images = vec![Complex64::new(0.0, 0.0); q * n_r];
        for (xi, x) in self.alphabet.chunks_exact(self.n_t).enumerate() {
            for r in 0..n_r {
                let row = &h.gains[r * self.n_t..(r + 1) * self.n_t];
                images[xi * n_r + r] = amp * row.iter().zip(x).map(|(g, s)| g * s).sum::<Complex64>();
            }
        }

        let offset = rng.random_range(0..q);
        let mut w = vec![Complex64::new(0.0, 0.0); n_r];
        let mut exps = vec![0.0f64; q];
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for d in 0..noise_draws {
            let xi = (offset + d) % q;
            let wide = rng.random_bool(0.5);
            let scale = if wide { WIDE_VAR.sqrt() } else { 1.0 };
            for wr in w.iter_mut() {
                *wr = complex_normal(rng) * scale;
            }
            let sent = &images[xi * n_r..(xi + 1) * n_r];
            let w_energy: f64 = w.iter().map(|v| v.norm_sqr()).sum();
            let mut max = f64::NEG_INFINITY;
            for (xp, e) in exps.iter_mut().enumerate() {
                let cand = &images[xp * n_r..(xp + 1) * n_r];
                let mut dist = 0.0;
                for r in 0..n_r {
                    dist += (sent[r] - cand[r] + w[r]).norm_sqr();
                }
                *e = w_energy - dist;
                max = max.max(*e);
            }
            let lse = max + exps.iter().map(|e| (e - max).exp()).sum::<f64>().ln();
            // density ratio CN(0, I) / (half CN(0, I) + half CN(0, WIDE_VAR I)), at most 2
            let wide_ratio = WIDE_VAR.powi(-(n_r as i32)) * (w_energy * (1.0 - 1.0 / WIDE_VAR)).exp();
            let term = lse / std::f64::consts::LN_2 / (0.5 + 0.5 * wide_ratio);
            sum += term;
            sum_sq += term * term;
        }
        let n = noise_draws as f64;
        let mean = sum / n;
        let var = if noise_draws > 1 {
            ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        Ok(MiEstimate {
            value: MiSample::clamped(self.cap() - mean, self.cap()),
            std_error: (var / n).sqrt(),
        })
    }
}

/// Monte-Carlo estimate of `I_X(sqrt(P/N_t) H)` for one block.
pub fn block_mi<R: Rng + ?Sized>(
    c: &Constellation,
    h: &FadingBlock,
    snr: f64,
    noise_draws: usize,
    rng: &mut R,
) -> Result<MiSample> {
    Ok(MiKernel::new(c, h.n_t())?.block_mi(h, snr, noise_draws, rng)?.value)
}

/// Per-round mutual information: the mean of the block values.
pub fn round_mi<R: Rng + ?Sized>(
    c: &Constellation,
    blocks: &[FadingBlock],
    snr: f64,
    noise_draws: usize,
    rng: &mut R,
) -> Result<MiSample> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::invalid("a round needs at least one block"))?;
    let kernel = MiKernel::new(c, first.n_t())?;
    let mut total = 0.0;
    for h in blocks {
        total += kernel.block_mi(h, snr, noise_draws, rng)?.value.value();
    }
    Ok(MiSample::clamped(total / blocks.len() as f64, kernel.cap()))
}
