//! PDE benchmarks: residual operators, boundary and initial conditions,
//! collocation samplers and reference solutions.
//!
//! Time-dependent problems use inputs `(x_1, …, x_N, t)` with `t` last.

mod reference;

pub use reference::{ReferenceKind, ReferenceSettings, ReferenceValue};

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::estimators::{
    estimate, BaseFunction, CoordSet, DerivativeEstimate, EstimateCotangent, EstimateOptions,
    SmoothingConfig, Variant,
};
use crate::rng::{self, domain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    /// `Δu = −sin(x₁+x₂)` on `[0,1]²`, `u = ½sin(x₁+x₂)` on the boundary.
    Poisson2d,
    /// `u_t = Δ_x u` on `B(0,1) × (0,1)`.
    Heat,
    /// `u_t + Δ_x u − μ‖∇_x u‖² = 0` on `ℝᴺ × [0,T]`, `u(x,T) = ln((1+‖x‖²)/2)`.
    Hjb,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Poisson2d => "poisson2d",
            ProblemKind::Heat => "heat",
            ProblemKind::Hjb => "hjb",
        }
    }
}

/// How `‖∇_x u‖²` is formed from estimates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SquaredGradient {
    /// `‖ĝ‖²` from one estimate (biased by the estimator variance).
    #[default]
    PlugIn,
    /// `ĝ₁·ĝ₂` from disjoint halves of the noise batch (unbiased).
    SplitSample,
}

/// Loss terms. For Poisson and HJB `Boundary` is the Dirichlet or terminal
/// condition; for Heat `Initial` is `t = 0` and `Boundary` is `‖x‖ = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Interior,
    Boundary,
    Initial,
}

impl Term {
    pub(crate) fn tag(self) -> u64 {
        match self {
            Term::Interior => 0,
            Term::Boundary => 1,
            Term::Initial => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    /// Spatial dimension `N`.
    pub dim: usize,
    /// Final time `T`.
    pub horizon: f64,
    /// Coefficient `μ` of the HJB gradient term.
    pub mu: f64,
    pub interior_points: usize,
    pub boundary_points: usize,
    pub boundary_weight: f64,
    /// Heat only.
    pub initial_points: usize,
    pub initial_weight: f64,
    #[serde(default)]
    pub squared_gradient: SquaredGradient,
}

impl ProblemSpec {
    pub fn poisson2d(n1: usize, n2: usize, lambda: f64) -> Self {
        ProblemSpec {
            kind: ProblemKind::Poisson2d,
            dim: 2,
            horizon: 0.0,
            mu: 0.0,
            interior_points: n1,
            boundary_points: n2,
            boundary_weight: lambda,
            initial_points: 0,
            initial_weight: 0.0,
            squared_gradient: SquaredGradient::PlugIn,
        }
    }

    /// `n2`/`lambda2` weight the initial condition, `n3`/`lambda3` the
    /// spatial boundary.
    pub fn heat(dim: usize, n1: usize, n2: usize, n3: usize, lambda2: f64, lambda3: f64) -> Self {
        ProblemSpec {
            kind: ProblemKind::Heat,
            dim,
            horizon: 1.0,
            mu: 0.0,
            interior_points: n1,
            boundary_points: n3,
            boundary_weight: lambda3,
            initial_points: n2,
            initial_weight: lambda2,
            squared_gradient: SquaredGradient::PlugIn,
        }
    }

    pub fn hjb(dim: usize, horizon: f64, mu: f64, n1: usize, n2: usize, lambda: f64) -> Self {
        ProblemSpec {
            kind: ProblemKind::Hjb,
            dim,
            horizon,
            mu,
            interior_points: n1,
            boundary_points: n2,
            boundary_weight: lambda,
            initial_points: 0,
            initial_weight: 0.0,
            squared_gradient: SquaredGradient::PlugIn,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.dim >= 1, || "problem dimension must be at least 1".to_string())?;
        ensure(self.kind != ProblemKind::Poisson2d || self.dim == 2, || {
            format!("poisson2d has dimension 2, got {}", self.dim)
        })?;
        ensure(self.interior_points >= 1 && self.boundary_points >= 1, || {
            "batch sizes must be at least 1".to_string()
        })?;
        ensure(self.boundary_weight.is_finite() && self.boundary_weight > 0.0, || {
            format!("boundary weight must be positive, got {}", self.boundary_weight)
        })?;
        if self.kind == ProblemKind::Heat {
            ensure(self.initial_points >= 1, || "heat needs initial points".to_string())?;
            ensure(self.initial_weight.is_finite() && self.initial_weight > 0.0, || {
                format!("initial weight must be positive, got {}", self.initial_weight)
            })?;
            ensure(self.horizon == 1.0, || "heat is posed on t in [0, 1]".to_string())?;
        }
        if self.has_time() {
            ensure(self.horizon.is_finite() && self.horizon > 0.0, || {
                format!("horizon must be positive, got {}", self.horizon)
            })?;
        }
        ensure(self.mu.is_finite() && self.mu >= 0.0, || {
            format!("mu must be nonnegative, got {}", self.mu)
        })?;
        ensure(
            self.kind == ProblemKind::Hjb || self.mu == 0.0 || self.squared_gradient == SquaredGradient::PlugIn,
            || "mu and squared_gradient only apply to hjb".to_string(),
        )
    }

    pub fn has_time(&self) -> bool {
        self.kind != ProblemKind::Poisson2d
    }

    /// Network input width.
    pub fn input_dim(&self) -> usize {
        self.dim + usize::from(self.has_time())
    }

    /// Loss terms in reporting order.
    pub fn terms(&self) -> Vec<Term> {
        match self.kind {
            ProblemKind::Heat => vec![Term::Interior, Term::Initial, Term::Boundary],
            _ => vec![Term::Interior, Term::Boundary],
        }
    }

    pub fn weight(&self, term: Term) -> f64 {
        match term {
            Term::Interior => 1.0,
            Term::Boundary => self.boundary_weight,
            Term::Initial => self.initial_weight,
        }
    }

    pub fn batch_size(&self, term: Term) -> usize {
        match term {
            Term::Interior => self.interior_points,
            Term::Boundary => self.boundary_points,
            Term::Initial => self.initial_points,
        }
    }

    /// Laplacian coordinates: the spatial block.
    pub fn laplacian_coords(&self) -> CoordSet {
        CoordSet::leading(self.dim, self.input_dim()).expect("dim >= 1")
    }

    pub fn estimate_options(&self) -> EstimateOptions {
        EstimateOptions {
            laplacian_coords: self.has_time().then(|| self.laplacian_coords()),
            hessian: false,
            split_gradient: self.kind == ProblemKind::Hjb && self.squared_gradient == SquaredGradient::SplitSample,
        }
    }

    /// Poisson source `g(x) = −sin(x₁+x₂)`.
    pub fn poisson_source(x: ArrayView1<f64>) -> f64 {
        -(x[0] + x[1]).sin()
    }

    /// HJB terminal cost `g(x) = ln((1+‖x‖²)/2)`.
    pub fn terminal_cost(x: ArrayView1<f64>) -> f64 {
        ((1.0 + x.dot(&x)) / 2.0).ln()
    }

    /// Target of a boundary-type term at `p`.
    pub fn boundary_target(&self, term: Term, p: ArrayView1<f64>) -> f64 {
        let n = self.dim as f64;
        match (self.kind, term) {
            (ProblemKind::Poisson2d, _) => 0.5 * (p[0] + p[1]).sin(),
            (ProblemKind::Heat, Term::Initial) => {
                let x = p.slice(s![..self.dim]);
                x.dot(&x) / (2.0 * n)
            }
            (ProblemKind::Heat, _) => p[self.dim] + 1.0 / (2.0 * n),
            (ProblemKind::Hjb, _) => Self::terminal_cost(p.slice(s![..self.dim])),
        }
    }

    /// PDE residual at an interior point from its estimate.
    pub fn interior_residual(&self, p: ArrayView1<f64>, e: &DerivativeEstimate) -> f64 {
        let t = self.dim;
        match self.kind {
            ProblemKind::Poisson2d => e.laplacian - Self::poisson_source(p),
            ProblemKind::Heat => e.gradient[t] - e.laplacian,
            ProblemKind::Hjb => {
                let sq = match &e.gradient_halves {
                    Some((a, b)) if self.squared_gradient == SquaredGradient::SplitSample => {
                        a.slice(s![..t]).dot(&b.slice(s![..t]))
                    }
                    _ => {
                        let g = e.gradient.slice(s![..t]);
                        g.dot(&g)
                    }
                };
                e.gradient[t] + e.laplacian - self.mu * sq
            }
        }
    }

    /// `upstream · ∂r/∂(estimate)` for the interior residual.
    pub fn interior_cotangent(&self, e: &DerivativeEstimate, upstream: f64) -> EstimateCotangent {
        let d = self.input_dim();
        let t = self.dim;
        let mut cot = EstimateCotangent::zeros(d);
        match self.kind {
            ProblemKind::Poisson2d => cot.laplacian = upstream,
            ProblemKind::Heat => {
                cot.gradient[t] = upstream;
                cot.laplacian = -upstream;
            }
            ProblemKind::Hjb => {
                cot.gradient[t] = upstream;
                cot.laplacian = upstream;
                match &e.gradient_halves {
                    Some((a, b)) if self.squared_gradient == SquaredGradient::SplitSample => {
                        let mut ca = Array1::zeros(d);
                        let mut cb = Array1::zeros(d);
                        for i in 0..t {
                            ca[i] = -self.mu * upstream * b[i];
                            cb[i] = -self.mu * upstream * a[i];
                        }
                        cot.gradient_halves = Some((ca, cb));
                    }
                    _ => {
                        for i in 0..t {
                            cot.gradient[i] = -2.0 * self.mu * upstream * e.gradient[i];
                        }
                    }
                }
            }
        }
        cot
    }

    /// Variant used for a term: boundary-type terms need only the value,
    /// which every variant estimates by the plain mean.
    pub fn term_variant(&self, term: Term, smoothing: &SmoothingConfig) -> Variant {
        match term {
            Term::Interior => smoothing.variant,
            _ => Variant::Vanilla,
        }
    }

    /// Noise for point `index` of `term` under `smoothing`.
    pub fn term_noise(
        &self,
        smoothing: &SmoothingConfig,
        term: Term,
        index: usize,
    ) -> Result<crate::estimators::NoiseBatch> {
        smoothing.draw(self.input_dim(), &[domain::NOISE, term.tag(), index as u64])
    }

    fn sample_unit_ball<R: Rng + ?Sized>(&self, rng: &mut R, on_sphere: bool) -> Array1<f64> {
        let n = self.dim;
        loop {
            let g: Array1<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = g.dot(&g).sqrt();
            if norm < 1e-300 {
                continue;
            }
            let radius = if on_sphere {
                1.0
            } else {
                rng.random::<f64>().powf(1.0 / n as f64)
            };
            return g * (radius / norm);
        }
    }

    fn sample_point<R: Rng + ?Sized>(&self, term: Term, rng: &mut R) -> Array1<f64> {
        let n = self.dim;
        let mut p = Array1::zeros(self.input_dim());
        match (self.kind, term) {
            (ProblemKind::Poisson2d, Term::Interior) => {
                p[0] = rng.random::<f64>();
                p[1] = rng.random::<f64>();
            }
            (ProblemKind::Poisson2d, _) => {
                // Four unit edges, equally likely.
                let edge = rng.random_range(0..4);
                let s: f64 = rng.random();
                let (a, b) = match edge {
                    0 => (s, 0.0),
                    1 => (1.0, s),
                    2 => (s, 1.0),
                    _ => (0.0, s),
                };
                p[0] = a;
                p[1] = b;
            }
            (ProblemKind::Heat, term) => {
                let x = self.sample_unit_ball(rng, term == Term::Boundary);
                p.slice_mut(s![..n]).assign(&x);
                p[n] = if term == Term::Initial { 0.0 } else { rng.random::<f64>() };
            }
            (ProblemKind::Hjb, term) => {
                for i in 0..n {
                    p[i] = rng.sample::<f64, _>(StandardNormal);
                }
                p[n] = if term == Term::Interior {
                    self.horizon * rng.random::<f64>()
                } else {
                    self.horizon
                };
            }
        }
        p
    }

    /// `count` i.i.d. points for `term`.
    pub fn sample_points<R: Rng + ?Sized>(&self, term: Term, count: usize, rng: &mut R) -> Array2<f64> {
        let mut out = Array2::zeros((count, self.input_dim()));
        for mut row in out.rows_mut() {
            row.assign(&self.sample_point(term, rng));
        }
        out
    }

    /// Fresh collocation batch from the substream `(seed, BATCH)`.
    pub fn sample_batch(&self, seed: u64) -> CollocationBatch {
        let mut r = rng::stream(seed, &[domain::BATCH]);
        self.sample_batch_from(&mut r)
    }

    pub fn sample_batch_from<R: Rng + ?Sized>(&self, rng: &mut R) -> CollocationBatch {
        let interior = self.sample_points(Term::Interior, self.interior_points, rng);
        let boundary = self.sample_points(Term::Boundary, self.boundary_points, rng);
        let initial = (self.kind == ProblemKind::Heat)
            .then(|| self.sample_points(Term::Initial, self.initial_points, rng));
        CollocationBatch {
            interior,
            boundary,
            initial,
        }
    }

    /// Whether `p` is an admissible interior point.
    pub fn contains(&self, p: ArrayView1<f64>) -> bool {
        let n = self.dim;
        match self.kind {
            ProblemKind::Poisson2d => p.iter().all(|&v| (0.0..=1.0).contains(&v)),
            ProblemKind::Heat => {
                let x = p.slice(s![..n]);
                x.dot(&x) <= 1.0 && (0.0..=1.0).contains(&p[n])
            }
            ProblemKind::Hjb => p.iter().all(|v| v.is_finite()) && (0.0..=self.horizon).contains(&p[n]),
        }
    }

    /// Nearest admissible interior point (in place).
    pub fn project_interior(&self, p: &mut Array1<f64>) {
        let n = self.dim;
        match self.kind {
            ProblemKind::Poisson2d => p.mapv_inplace(|v| v.clamp(0.0, 1.0)),
            ProblemKind::Heat => {
                let mut x = p.slice_mut(s![..n]);
                let norm = x.dot(&x).sqrt();
                if norm > 1.0 {
                    x /= norm;
                }
                p[n] = p[n].clamp(0.0, 1.0);
            }
            ProblemKind::Hjb => p[n] = p[n].clamp(0.0, self.horizon),
        }
    }

    /// `∂r/∂p` through the explicit dependence of the residual on `p`
    /// (the source term), holding the estimates fixed.
    pub fn residual_point_gradient(&self, p: ArrayView1<f64>) -> Array1<f64> {
        let mut g = Array1::zeros(self.input_dim());
        if self.kind == ProblemKind::Poisson2d {
            let c = (p[0] + p[1]).cos();
            g[0] = c;
            g[1] = c;
        }
        g
    }

    /// Per-point estimates for `term` at `points`.
    pub fn term_estimates<F: BaseFunction + ?Sized>(
        &self,
        f: &F,
        points: &Array2<f64>,
        term: Term,
        smoothing: &SmoothingConfig,
    ) -> Result<Vec<DerivativeEstimate>> {
        ensure(f.input_dim() == self.input_dim(), || {
            format!(
                "model input width {} does not match problem input width {}",
                f.input_dim(),
                self.input_dim()
            )
        })?;
        let variant = self.term_variant(term, smoothing);
        let opts = if term == Term::Interior {
            self.estimate_options()
        } else {
            EstimateOptions::default()
        };
        (0..points.nrows())
            .into_par_iter()
            .map(|i| {
                let noise = self.term_noise(smoothing, term, i)?;
                estimate(f, points.row(i), &noise, variant, &opts).map_err(|e| tag_point(e, term, i))
            })
            .collect()
    }

    /// Interior PDE residuals.
    pub fn residual<F: BaseFunction + ?Sized>(
        &self,
        f: &F,
        batch: &CollocationBatch,
        smoothing: &SmoothingConfig,
    ) -> Result<Vec<f64>> {
        let est = self.term_estimates(f, &batch.interior, Term::Interior, smoothing)?;
        est.iter()
            .enumerate()
            .map(|(i, e)| finite(self.interior_residual(batch.interior.row(i), e), Term::Interior, i))
            .collect()
    }

    /// `û(p) − target(p)` for the boundary-type terms.
    pub fn boundary_residual<F: BaseFunction + ?Sized>(
        &self,
        f: &F,
        batch: &CollocationBatch,
        smoothing: &SmoothingConfig,
    ) -> Result<BoundaryResiduals> {
        let term_res = |term: Term, pts: &Array2<f64>| -> Result<Vec<f64>> {
            let est = self.term_estimates(f, pts, term, smoothing)?;
            est.iter()
                .enumerate()
                .map(|(i, e)| finite(e.value - self.boundary_target(term, pts.row(i)), term, i))
                .collect()
        };
        let boundary = term_res(Term::Boundary, &batch.boundary)?;
        let initial = match (&batch.initial, self.kind) {
            (Some(pts), ProblemKind::Heat) => Some(term_res(Term::Initial, pts)?),
            (None, ProblemKind::Heat) => {
                return Err(Error::config("heat batch is missing initial points"))
            }
            _ => None,
        };
        Ok(BoundaryResiduals { boundary, initial })
    }

    /// Weighted loss from residual vectors.
    pub fn loss_from_residuals(&self, interior: &[f64], boundary: &BoundaryResiduals) -> LossBreakdown {
        let interior_ms = mean_square(interior);
        let boundary_ms = mean_square(&boundary.boundary);
        let initial_ms = boundary.initial.as_deref().map(mean_square);
        let total = interior_ms
            + self.boundary_weight * boundary_ms
            + initial_ms.map_or(0.0, |m| self.initial_weight * m);
        LossBreakdown {
            total,
            interior: interior_ms,
            boundary: boundary_ms,
            initial: initial_ms,
        }
    }

    /// `mean r² + λ mean b² (+ λ₂ mean i²)`.
    pub fn total_loss<F: BaseFunction + ?Sized>(
        &self,
        f: &F,
        batch: &CollocationBatch,
        smoothing: &SmoothingConfig,
    ) -> Result<LossBreakdown> {
        let r = self.residual(f, batch, smoothing)?;
        let b = self.boundary_residual(f, batch, smoothing)?;
        Ok(self.loss_from_residuals(&r, &b))
    }
}

pub(crate) fn tag_point(e: Error, term: Term, i: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("{term:?} point {i}: {m}")),
        other => other,
    }
}

fn finite(v: f64, term: Term, i: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numeric(format!("{term:?} point {i}: residual is not finite ({v})")))
    }
}

pub(crate) fn mean_square(v: &[f64]) -> f64 {
    let sq: Vec<f64> = v.iter().map(|r| r * r).collect();
    crate::estimators::pairwise_sum(&sq) / v.len().max(1) as f64
}

/// Collocation points for one training iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollocationBatch {
    pub interior: Array2<f64>,
    /// Dirichlet points (Poisson), terminal points (HJB) or `‖x‖ = 1` (Heat).
    pub boundary: Array2<f64>,
    /// `t = 0` points (Heat).
    pub initial: Option<Array2<f64>>,
}

impl CollocationBatch {
    pub fn points(&self, term: Term) -> Option<&Array2<f64>> {
        match term {
            Term::Interior => Some(&self.interior),
            Term::Boundary => Some(&self.boundary),
            Term::Initial => self.initial.as_ref(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryResiduals {
    pub boundary: Vec<f64>,
    pub initial: Option<Vec<f64>>,
}

/// Mean-square losses per term and their weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub interior: f64,
    pub boundary: f64,
    pub initial: Option<f64>,
}
