//! Reference solutions.
//!
//! HJB uses the Cole–Hopf representation
//! `u(x,t) = −(1/μ) ln E_y[exp(−μ g(x − √(2(T−t)) y))]`, `y ~ N(0, I)`,
//! estimated with antithetic `y` in blocks until the delta-method standard
//! error of `u` reaches the target.

use ndarray::{s, Array1, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ProblemKind, ProblemSpec};
use crate::error::{ensure, Result};
use crate::rng::{self, domain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    ClosedForm,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceValue {
    pub value: f64,
    /// Zero for closed forms.
    pub standard_error: f64,
    pub kind: ReferenceKind,
    /// Number of `y` draws used (closed form: 0).
    pub mc_samples: usize,
    /// False when `max_samples` ran out before reaching `target_se`.
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSettings {
    pub target_se: f64,
    /// Antithetic pairs per block.
    pub block_pairs: usize,
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for ReferenceSettings {
    fn default() -> Self {
        ReferenceSettings {
            target_se: 1e-3,
            block_pairs: 4096,
            max_samples: 1 << 24,
            seed: 0,
        }
    }
}

impl ProblemSpec {
    pub fn reference_kind(&self) -> ReferenceKind {
        match self.kind {
            ProblemKind::Hjb => ReferenceKind::MonteCarlo,
            _ => ReferenceKind::ClosedForm,
        }
    }

    /// Reference solution at the input point `p` with default settings.
    pub fn reference_value(&self, p: ArrayView1<f64>) -> Result<ReferenceValue> {
        self.reference_value_with(p, &ReferenceSettings::default(), 0)
    }

    /// Reference at `p`; Monte Carlo draws come from the substream
    /// `(settings.seed, REFERENCE, stream)`.
    pub fn reference_value_with(
        &self,
        p: ArrayView1<f64>,
        settings: &ReferenceSettings,
        stream: u64,
    ) -> Result<ReferenceValue> {
        ensure(p.len() == self.input_dim(), || {
            format!("point has length {}, expected {}", p.len(), self.input_dim())
        })?;
        let n = self.dim;
        let closed = |value: f64| ReferenceValue {
            value,
            standard_error: 0.0,
            kind: ReferenceKind::ClosedForm,
            mc_samples: 0,
            converged: true,
        };
        match self.kind {
            ProblemKind::Poisson2d => Ok(closed(0.5 * (p[0] + p[1]).sin())),
            ProblemKind::Heat => {
                let x = p.slice(s![..n]);
                Ok(closed(p[n] + x.dot(&x) / (2.0 * n as f64)))
            }
            ProblemKind::Hjb => {
                ensure(settings.target_se > 0.0 && settings.block_pairs >= 2, || {
                    "reference needs target_se > 0 and block_pairs >= 2".to_string()
                })?;
                ensure(self.mu > 0.0, || "Monte Carlo reference needs mu > 0".to_string())?;
                Ok(self.hjb_reference(p.slice(s![..n]), p[n], settings, stream))
            }
        }
    }

    fn hjb_reference(&self, x: ArrayView1<f64>, t: f64, settings: &ReferenceSettings, stream: u64) -> ReferenceValue {
        let mu = self.mu;
        let n = self.dim;
        let scale = (2.0 * (self.horizon - t).max(0.0)).sqrt();
        if scale == 0.0 {
            return ReferenceValue {
                value: Self::terminal_cost(x),
                standard_error: 0.0,
                kind: ReferenceKind::MonteCarlo,
                mc_samples: 0,
                converged: true,
            };
        }
        // exp(−μ g(z)) = ((1 + ‖z‖²)/2)^(−μ)
        let kernel = |sq: f64| {
            let base = 0.5 * (1.0 + sq);
            if mu == 1.0 {
                1.0 / base
            } else {
                (-mu * base.ln()).exp()
            }
        };
        let mut r = rng::stream(settings.seed, &[domain::REFERENCE, stream]);
        let x2 = x.dot(&x);
        let mut y = Array1::<f64>::zeros(n);
        let (mut count, mut mean, mut m2) = (0usize, 0.0f64, 0.0f64);
        let mut converged = false;
        let mut se = f64::INFINITY;
        while 2 * count < settings.max_samples {
            for _ in 0..settings.block_pairs {
                for v in y.iter_mut() {
                    *v = r.sample::<f64, _>(StandardNormal);
                }
                let xy = x.dot(&y);
                let yy = y.dot(&y);
                let common = x2 + scale * scale * yy;
                let a = kernel(common - 2.0 * scale * xy);
                let b = kernel(common + 2.0 * scale * xy);
                let term = 0.5 * (a + b);
                count += 1;
                let delta = term - mean;
                mean += delta / count as f64;
                m2 += delta * (term - mean);
            }
            let var_mean = m2 / ((count - 1) as f64 * count as f64);
            se = var_mean.sqrt() / (mu * mean);
            if se <= settings.target_se {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!(
                "reference at t={t:.3} stopped at {} samples with standard error {se:.2e} > {:.1e}",
                2 * count,
                settings.target_se
            );
        }
        ReferenceValue {
            value: -mean.ln() / mu,
            standard_error: se,
            kind: ReferenceKind::MonteCarlo,
            mc_samples: 2 * count,
            converged,
        }
    }
}
