//! Per-round mutual information for simulation and tabulation.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use super::kernel::{complex_normal, FadingBlock, MiKernel};
use super::quadrature::ScalarMiCurve;
use crate::config::ChannelConfig;
use crate::error::{Error, Result};

/// How block mutual information is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorKind {
    /// Noise expectation by Monte Carlo, full enumeration of the joint alphabet.
    MonteCarlo,
    /// Tabulated Gauss-Hermite curve (single transmit antenna only).
    ScalarQuadrature,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::MonteCarlo => "monte-carlo",
            EstimatorKind::ScalarQuadrature => "scalar-quadrature",
        })
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monte-carlo" => Ok(EstimatorKind::MonteCarlo),
            "scalar-quadrature" => Ok(EstimatorKind::ScalarQuadrature),
            other => Err(Error::invalid(format!("unknown estimator '{other}'"))),
        }
    }
}

/// One round's mutual information and the estimator's standard error for it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundDraw {
    pub mi: f64,
    pub std_error: f64,
}

/// Draws `B` fresh fading blocks and evaluates `I_l` for them.
#[derive(Clone, Debug)]
pub struct MiEvaluator {
    n_r: usize,
    n_t: usize,
    blocks: usize,
    noise_draws: usize,
    inner: Inner,
}

#[derive(Clone, Debug)]
enum Inner {
    MonteCarlo(Arc<MiKernel>),
    Scalar(Arc<ScalarMiCurve>),
}

impl MiEvaluator {
    /// Quadrature curve for one transmit antenna, Monte Carlo otherwise.
    pub fn for_config(cfg: &ChannelConfig, noise_draws: usize) -> Result<Self> {
        if cfg.n_t == 1 {
            Self::with_kind(cfg, noise_draws, EstimatorKind::ScalarQuadrature)
        } else {
            Self::with_kind(cfg, noise_draws, EstimatorKind::MonteCarlo)
        }
    }

    pub fn with_kind(cfg: &ChannelConfig, noise_draws: usize, kind: EstimatorKind) -> Result<Self> {
        if noise_draws == 0 {
            return Err(Error::invalid("noise_draws must be >= 1"));
        }
        let inner = match kind {
            EstimatorKind::MonteCarlo => Inner::MonteCarlo(Arc::new(MiKernel::new(&cfg.constellation, cfg.n_t)?)),
            EstimatorKind::ScalarQuadrature => {
                if cfg.n_t != 1 {
                    return Err(Error::invalid("the quadrature estimator needs a single transmit antenna"));
                }
                Inner::Scalar(ScalarMiCurve::shared(&cfg.constellation)?)
            }
        };
        Ok(MiEvaluator {
            n_r: cfg.n_r,
            n_t: cfg.n_t,
            blocks: cfg.blocks,
            noise_draws,
            inner,
        })
    }

    pub fn kind(&self) -> EstimatorKind {
        match self.inner {
            Inner::MonteCarlo(_) => EstimatorKind::MonteCarlo,
            Inner::Scalar(_) => EstimatorKind::ScalarQuadrature,
        }
    }

    pub fn noise_draws(&self) -> usize {
        self.noise_draws
    }

    pub fn sample_round<R: Rng + ?Sized>(&self, snr: f64, rng: &mut R) -> Result<RoundDraw> {
        if !(snr >= 0.0 && snr.is_finite()) {
            return Err(Error::invalid(format!("snr must be finite and >= 0, got {snr}")));
        }
        let b = self.blocks as f64;
        match &self.inner {
            Inner::Scalar(curve) => {
                let mut total = 0.0;
                for _ in 0..self.blocks {
                    let gain: f64 = (0..self.n_r).map(|_| complex_normal(rng).norm_sqr()).sum();
                    total += curve.eval(snr * gain);
                }
                Ok(RoundDraw {
                    mi: (total / b).min(curve.cap()),
                    std_error: 0.0,
                })
            }
            Inner::MonteCarlo(kernel) => {
                let (mut total, mut var) = (0.0, 0.0);
                for _ in 0..self.blocks {
                    let h = FadingBlock::random(self.n_r, self.n_t, rng);
                    let est = kernel.block_mi(&h, snr, self.noise_draws, rng)?;
                    total += est.value.value();
                    var += est.std_error * est.std_error;
                }
                Ok(RoundDraw {
                    mi: (total / b).min(kernel.cap()),
                    std_error: var.sqrt() / b,
                })
            }
        }
    }
}
