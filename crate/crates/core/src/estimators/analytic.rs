//! Test functions whose Gaussian convolutions have closed forms.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::{BaseFunction, CoordSet};
use crate::error::{ensure, Result};

/// Value, gradient and Hessian of a smoothed analytic base.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub gradient: Array1<f64>,
    pub hessian: Array2<f64>,
}

impl Jet2 {
    pub fn laplacian(&self) -> f64 {
        self.hessian.diag().sum()
    }

    pub fn partial_laplacian(&self, coords: &CoordSet) -> f64 {
        coords.iter().map(|i| self.hessian[[i, i]]).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AnalyticBase {
    /// `f(x) = c`.
    Constant { dim: usize, c: f64 },
    /// `f(x) = aᵀx + b`.
    Linear { a: Array1<f64>, b: f64 },
    /// `f(x) = ½ xᵀAx + bᵀx + c` with symmetric `A`.
    Quadratic {
        a: Array2<f64>,
        b: Array1<f64>,
        c: f64,
    },
    /// `f(x) = amplitude · sin(wᵀx)`.
    Sine { amplitude: f64, w: Array1<f64> },
}

impl AnalyticBase {
    pub fn constant(dim: usize, c: f64) -> Self {
        AnalyticBase::Constant { dim, c }
    }

    pub fn linear(a: Array1<f64>, b: f64) -> Self {
        AnalyticBase::Linear { a, b }
    }

    pub fn quadratic(a: Array2<f64>, b: Array1<f64>, c: f64) -> Result<Self> {
        let d = b.len();
        ensure(a.dim() == (d, d), || {
            format!("quadratic form must be {d}x{d}, got {:?}", a.dim())
        })?;
        ensure(a == a.t(), || "quadratic form must be symmetric".to_string())?;
        Ok(AnalyticBase::Quadratic { a, b, c })
    }

    /// `½‖x‖²` in `dim` dimensions.
    pub fn half_square_norm(dim: usize) -> Self {
        AnalyticBase::Quadratic {
            a: Array2::eye(dim),
            b: Array1::zeros(dim),
            c: 0.0,
        }
    }

    /// `sin(x₁)` in `dim` dimensions.
    pub fn sin_first(dim: usize) -> Self {
        let mut w = Array1::zeros(dim);
        w[0] = 1.0;
        AnalyticBase::Sine { amplitude: 1.0, w }
    }

    pub fn dim(&self) -> usize {
        match self {
            AnalyticBase::Constant { dim, .. } => *dim,
            AnalyticBase::Linear { a, .. } => a.len(),
            AnalyticBase::Quadratic { b, .. } => b.len(),
            AnalyticBase::Sine { w, .. } => w.len(),
        }
    }

    pub fn value(&self, x: ArrayView1<f64>) -> f64 {
        match self {
            AnalyticBase::Constant { c, .. } => *c,
            AnalyticBase::Linear { a, b } => a.dot(&x) + b,
            AnalyticBase::Quadratic { a, b, c } => 0.5 * x.dot(&a.dot(&x)) + b.dot(&x) + c,
            AnalyticBase::Sine { amplitude, w } => amplitude * w.dot(&x).sin(),
        }
    }

    /// Derivatives of `u = E f(x + δ)`, `δ ~ N(0, σ²I)`; `sigma = 0` gives
    /// the derivatives of `f` itself.
    pub fn smoothed(&self, x: ArrayView1<f64>, sigma: f64) -> Jet2 {
        let d = self.dim();
        let s2 = sigma * sigma;
        match self {
            AnalyticBase::Constant { c, .. } => Jet2 {
                value: *c,
                gradient: Array1::zeros(d),
                hessian: Array2::zeros((d, d)),
            },
            AnalyticBase::Linear { a, .. } => Jet2 {
                value: self.value(x),
                gradient: a.clone(),
                hessian: Array2::zeros((d, d)),
            },
            AnalyticBase::Quadratic { a, b, .. } => Jet2 {
                value: self.value(x) + 0.5 * s2 * a.diag().sum(),
                gradient: a.dot(&x) + b,
                hessian: a.clone(),
            },
            AnalyticBase::Sine { amplitude, w } => {
                // E sin(wᵀ(x+δ)) = exp(−σ²‖w‖²/2) sin(wᵀx).
                let damp = amplitude * (-0.5 * s2 * w.dot(w)).exp();
                let phase = w.dot(&x);
                let outer = Array2::from_shape_fn((d, d), |(i, j)| w[i] * w[j]);
                Jet2 {
                    value: damp * phase.sin(),
                    gradient: w * (damp * phase.cos()),
                    hessian: outer * (-damp * phase.sin()),
                }
            }
        }
    }
}

impl BaseFunction for AnalyticBase {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn eval_rows(&self, points: ArrayView2<f64>) -> Result<Array1<f64>> {
        ensure(points.ncols() == self.dim(), || {
            format!("points have {} columns, base expects {}", points.ncols(), self.dim())
        })?;
        Ok(points.rows().into_iter().map(|r| self.value(r)).collect())
    }
}
