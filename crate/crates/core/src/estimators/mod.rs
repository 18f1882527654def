//! Gaussian smoothing and Stein-identity derivative estimators.
//!
//! For `u(x) = E f(x + δ)`, `δ ~ N(0, σ²I)`, every estimator here is an
//! average over displacements `e_k` of a weight times `f(x + e_k)`:
//!
//! | quantity | vanilla weight             | control variate / antithetic      |
//! |----------|----------------------------|-----------------------------------|
//! | `u`      | `1`                        | `1`                               |
//! | `∇u`     | `e / σ²`                   | `e / σ²` on `f(x+e) − f(x)`       |
//! | `Δu`     | `(‖e‖² − σ²d) / σ⁴`        | same, on `f(x+e) − f(x)`          |
//! | `Hu`     | `(eeᵀ − σ²I) / σ⁴`         | same, on `f(x+e) − f(x)`          |
//!
//! The antithetic variant stores `K/2` draws `δ_j` and uses the rows
//! `δ_1, −δ_1, δ_2, −δ_2, …`; averaging the control-variate form over such
//! a batch gives `δ (f⁺ − f⁻) / 2σ²` and
//! `(‖δ‖² − σ²d)(f⁺ + f⁻ − 2f(x)) / 2σ⁴` per pair.
//!
//! Because each estimate is linear in the evaluated values, [`pullback`]
//! maps a cotangent on the estimate to one cotangent per evaluated point,
//! which is what lets training use a single backward pass.

pub mod analytic;
mod stats;

pub use stats::{estimator_stats, estimator_stats_with_seeds, ComponentStats, EstimatorStats};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::netcore::Network;
use crate::rng;

/// Largest input dimension for which a full Hessian estimate is formed.
pub const MAX_HESSIAN_DIM: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Vanilla,
    ControlVariate,
    CvAntithetic,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Vanilla, Variant::ControlVariate, Variant::CvAntithetic];

    /// Whether `f(x)` itself is evaluated as a baseline.
    pub fn uses_center(self) -> bool {
        !matches!(self, Variant::Vanilla)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::ControlVariate => "control_variate",
            Variant::CvAntithetic => "cv_antithetic",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown estimator variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub sigma: f64,
    /// Number of perturbed evaluations `K` per point.
    pub samples: usize,
    pub variant: Variant,
    pub seed: u64,
}

impl SmoothingConfig {
    pub fn new(sigma: f64, samples: usize, variant: Variant, seed: u64) -> Result<Self> {
        let c = SmoothingConfig {
            sigma,
            samples,
            variant,
            seed,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.sigma.is_finite() && self.sigma > 0.0, || {
            format!("sigma must be positive and finite, got {}", self.sigma)
        })?;
        ensure(self.samples >= 1, || "samples must be at least 1".to_string())?;
        ensure(
            self.variant != Variant::CvAntithetic || self.samples.is_multiple_of(2),
            || {
                format!(
                    "cv_antithetic needs an even sample count, got {}",
                    self.samples
                )
            },
        )
    }

    /// A fresh noise batch for the substream `path` of this config's seed.
    pub fn draw(&self, dim: usize, path: &[u64]) -> Result<NoiseBatch> {
        self.validate()?;
        let mut r = rng::stream(self.seed, path);
        NoiseBatch::sample(
            &mut r,
            self.sigma,
            self.samples,
            dim,
            self.variant == Variant::CvAntithetic,
        )
    }
}

/// Gaussian displacements shared by all estimates at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseBatch {
    sigma: f64,
    /// Independent rows; with antithetic pairing each row stands for two.
    draws: Array2<f64>,
    antithetic: bool,
}

impl NoiseBatch {
    /// `samples` rows of `N(0, σ²I_dim)`; when `antithetic`, `samples / 2`
    /// draws paired with their negations.
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        sigma: f64,
        samples: usize,
        dim: usize,
        antithetic: bool,
    ) -> Result<Self> {
        ensure(!antithetic || samples.is_multiple_of(2), || {
            format!("antithetic batch needs an even sample count, got {samples}")
        })?;
        let stored = if antithetic { samples / 2 } else { samples };
        let draws = Array2::from_shape_simple_fn((stored, dim), || {
            sigma * rng.sample::<f64, _>(StandardNormal)
        });
        NoiseBatch::from_draws(sigma, draws, antithetic)
    }

    pub fn from_draws(sigma: f64, draws: Array2<f64>, antithetic: bool) -> Result<Self> {
        ensure(sigma.is_finite() && sigma > 0.0, || {
            format!("sigma must be positive and finite, got {sigma}")
        })?;
        ensure(draws.nrows() >= 1 && draws.ncols() >= 1, || {
            "noise batch must have at least one row and column".to_string()
        })?;
        ensure(draws.iter().all(|v| v.is_finite()), || {
            "noise draws must be finite".to_string()
        })?;
        Ok(NoiseBatch {
            sigma,
            draws,
            antithetic,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.draws.ncols()
    }

    pub fn is_antithetic(&self) -> bool {
        self.antithetic
    }

    /// Number of displacement rows `K`.
    pub fn len(&self) -> usize {
        if self.antithetic {
            2 * self.draws.nrows()
        } else {
            self.draws.nrows()
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Stored draws (one per pair when antithetic).
    pub fn draws(&self) -> ArrayView2<'_, f64> {
        self.draws.view()
    }

    /// Sign and stored row of displacement `k`.
    #[inline]
    fn source(&self, k: usize) -> (f64, usize) {
        if self.antithetic {
            (if k.is_multiple_of(2) { 1.0 } else { -1.0 }, k / 2)
        } else {
            (1.0, k)
        }
    }

    /// Displacement `e_k`.
    pub fn row(&self, k: usize) -> Array1<f64> {
        let (sign, j) = self.source(k);
        self.draws.row(j).mapv(|v| sign * v)
    }

    /// The first `samples` rows as a new batch (whole pairs when antithetic).
    pub fn prefix(&self, samples: usize) -> Result<NoiseBatch> {
        ensure(samples >= 1 && samples <= self.len(), || {
            format!("prefix {samples} outside 1..={}", self.len())
        })?;
        ensure(!self.antithetic || samples.is_multiple_of(2), || {
            format!("antithetic prefix needs an even length, got {samples}")
        })?;
        let stored = if self.antithetic { samples / 2 } else { samples };
        Ok(NoiseBatch {
            sigma: self.sigma,
            draws: self.draws.slice(ndarray::s![..stored, ..]).to_owned(),
            antithetic: self.antithetic,
        })
    }

    /// All `K` displacements as a `K × d` matrix.
    pub fn materialize(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.len(), self.dim()));
        for (k, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let (sign, j) = self.source(k);
            row.zip_mut_with(&self.draws.row(j), |o, &v| *o = sign * v);
        }
        out
    }

    /// Number of rows in the first half used for split-sample products.
    fn split_point(&self) -> usize {
        if self.antithetic {
            2 * self.draws.nrows().div_ceil(2)
        } else {
            self.draws.nrows().div_ceil(2)
        }
    }

    /// `‖e_S‖²` for every row.
    fn squared_norms(&self, coords: &CoordSet) -> Vec<f64> {
        self.draws
            .axis_iter(Axis(0))
            .map(|r| coords.iter().map(|i| r[i] * r[i]).sum())
            .collect()
    }
}

/// Points at which `f` is evaluated for one estimate: `x` first when the
/// variant uses a baseline, then `x + e_k` for every displacement.
pub fn evaluation_points(x: ArrayView1<f64>, noise: &NoiseBatch, variant: Variant) -> Array2<f64> {
    let offset = usize::from(variant.uses_center());
    let d = x.len();
    let mut pts = Array2::zeros((noise.len() + offset, d));
    if offset == 1 {
        pts.row_mut(0).assign(&x);
    }
    for k in 0..noise.len() {
        let (sign, j) = noise.source(k);
        let src = noise.draws.row(j);
        let mut dst = pts.row_mut(k + offset);
        for i in 0..d {
            dst[i] = x[i] + sign * src[i];
        }
    }
    pts
}

/// Coordinates a Laplacian is taken over.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoordSet {
    indices: Vec<usize>,
}

impl CoordSet {
    pub fn new(mut indices: Vec<usize>, dim: usize) -> Result<Self> {
        ensure(!indices.is_empty(), || "coordinate set must be nonempty".to_string())?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= dim) {
            return Err(Error::config(format!(
                "coordinate {bad} out of range for dimension {dim}"
            )));
        }
        indices.sort_unstable();
        indices.dedup();
        Ok(CoordSet { indices })
    }

    pub fn all(dim: usize) -> Self {
        CoordSet {
            indices: (0..dim).collect(),
        }
    }

    /// The first `n` coordinates, e.g. the spatial part of `(x, t)`.
    pub fn leading(n: usize, dim: usize) -> Result<Self> {
        CoordSet::new((0..n).collect(), dim)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    fn max_index(&self) -> usize {
        *self.indices.last().expect("nonempty")
    }
}

/// What to compute besides value, gradient and Laplacian.
#[derive(Clone, Debug, Default)]
pub struct EstimateOptions {
    /// Laplacian coordinates; all coordinates when `None`.
    pub laplacian_coords: Option<CoordSet>,
    pub hessian: bool,
    /// Also return gradient estimates from the two halves of the batch.
    pub split_gradient: bool,
}

/// Estimated variance of each reported component, i.e. the sample variance
/// of the averaged terms divided by their count.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentVariance {
    pub value: f64,
    pub gradient: Array1<f64>,
    pub laplacian: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeEstimate {
    pub value: f64,
    pub gradient: Array1<f64>,
    pub laplacian: f64,
    pub hessian: Option<Array2<f64>>,
    /// Gradient estimates from disjoint halves of the batch.
    pub gradient_halves: Option<(Array1<f64>, Array1<f64>)>,
    pub sample_count: usize,
    pub empirical_variance: ComponentVariance,
}

/// Scalar base function evaluated on batches of points.
pub trait BaseFunction: Sync {
    fn input_dim(&self) -> usize;
    fn eval_rows(&self, points: ArrayView2<f64>) -> Result<Array1<f64>>;
}

impl BaseFunction for Network {
    fn input_dim(&self) -> usize {
        Network::input_dim(self)
    }

    fn eval_rows(&self, points: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.forward(points)
    }
}

impl<F: BaseFunction + ?Sized> BaseFunction for &F {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }

    fn eval_rows(&self, points: ArrayView2<f64>) -> Result<Array1<f64>> {
        (**self).eval_rows(points)
    }
}

fn check_inputs(
    noise: &NoiseBatch,
    variant: Variant,
    center: Option<f64>,
    values: &[f64],
) -> Result<()> {
    ensure(values.len() == noise.len(), || {
        format!("expected {} values, got {}", noise.len(), values.len())
    })?;
    ensure(variant != Variant::CvAntithetic || noise.is_antithetic(), || {
        "cv_antithetic estimators need an antithetic noise batch".to_string()
    })?;
    if variant.uses_center() {
        match center {
            Some(c) if !c.is_finite() => {
                return Err(Error::numeric(format!(
                    "base function is not finite at the center point ({c})"
                )))
            }
            None => {
                return Err(Error::config(format!(
                    "{variant} estimators need f(x)"
                )))
            }
            _ => {}
        }
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::numeric(format!(
            "base function is not finite at noise sample {k} ({})",
            values[k]
        )));
    }
    Ok(())
}

/// Pairwise summation; fixed association order, error O(ε log n).
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Mean and variance of the mean for a sequence of terms.
fn mean_and_variance(terms: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut buf: Vec<f64> = terms.collect();
    let n = buf.len();
    let mean = pairwise_sum(&buf) / n as f64;
    if n < 2 {
        return (mean, f64::INFINITY);
    }
    for t in buf.iter_mut() {
        *t = (*t - mean) * (*t - mean);
    }
    (mean, pairwise_sum(&buf) / ((n - 1) as f64 * n as f64))
}

/// All estimates from already evaluated values.
///
/// `center` is `f(x)` (required by the baseline variants, ignored by
/// vanilla) and `values[k] = f(x + e_k)`.
pub fn estimate_from_values(
    noise: &NoiseBatch,
    variant: Variant,
    center: Option<f64>,
    values: &[f64],
    opts: &EstimateOptions,
) -> Result<DerivativeEstimate> {
    check_inputs(noise, variant, center, values)?;
    let d = noise.dim();
    let all = CoordSet::all(d);
    let coords = opts.laplacian_coords.as_ref().unwrap_or(&all);
    ensure(coords.max_index() < d, || {
        format!("coordinate {} out of range for dimension {d}", coords.max_index())
    })?;
    if opts.hessian && d > MAX_HESSIAN_DIM {
        return Err(Error::Capability(format!(
            "hessian estimate limited to d <= {MAX_HESSIAN_DIM} (got {d}); use the laplacian estimators"
        )));
    }
    let s2 = noise.sigma * noise.sigma;
    let s4 = s2 * s2;
    let base = if variant.uses_center() {
        center.expect("checked")
    } else {
        0.0
    };
    let norms = noise.squared_norms(coords);
    let shift = s2 * coords.len() as f64;
    let stored = noise.draws.nrows();

    // Per stored row: the averaged value term, the scalar multiplying the
    // stored draw in the gradient term, and the Laplacian term.
    let (value_terms, grad_scalars, lap_terms): (Vec<f64>, Vec<f64>, Vec<f64>) =
        if variant == Variant::CvAntithetic {
            (0..stored)
                .map(|j| {
                    let (p, m) = (values[2 * j], values[2 * j + 1]);
                    (
                        0.5 * (p + m),
                        (p - m) / (2.0 * s2),
                        (norms[j] - shift) * (p + m - 2.0 * base) / (2.0 * s4),
                    )
                })
                .fold((vec![], vec![], vec![]), push3)
        } else {
            (0..noise.len())
                .map(|k| {
                    let (sign, j) = noise.source(k);
                    let fk = values[k] - base;
                    (values[k], sign * fk / s2, (norms[j] - shift) * fk / s4)
                })
                .fold((vec![], vec![], vec![]), push3)
        };
    let row_of = |t: usize| if variant == Variant::CvAntithetic { t } else { noise.source(t).1 };

    let (value, value_var) = mean_and_variance(value_terms.iter().copied());
    let (laplacian, lap_var) = mean_and_variance(lap_terms.iter().copied());
    let mut gradient = Array1::zeros(d);
    let mut grad_var = Array1::zeros(d);
    for i in 0..d {
        let terms = grad_scalars
            .iter()
            .enumerate()
            .map(|(t, &c)| c * noise.draws[[row_of(t), i]]);
        let (m, v) = mean_and_variance(terms);
        gradient[i] = m;
        grad_var[i] = v;
    }

    let gradient_halves = opts
        .split_gradient
        .then(|| split_gradients(noise, base, values))
        .transpose()?;

    let hessian = opts
        .hessian
        .then(|| hessian_from_values(noise, base, values));

    Ok(DerivativeEstimate {
        value,
        gradient,
        laplacian,
        hessian,
        gradient_halves,
        sample_count: noise.len(),
        empirical_variance: ComponentVariance {
            value: value_var,
            gradient: grad_var,
            laplacian: lap_var,
        },
    })
}

fn push3(
    mut acc: (Vec<f64>, Vec<f64>, Vec<f64>),
    t: (f64, f64, f64),
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    acc.0.push(t.0);
    acc.1.push(t.1);
    acc.2.push(t.2);
    acc
}

fn split_gradients(
    noise: &NoiseBatch,
    base: f64,
    values: &[f64],
) -> Result<(Array1<f64>, Array1<f64>)> {
    ensure(noise.len() >= 2 && (!noise.antithetic || noise.draws.nrows() >= 2), || {
        "split-sample gradient needs at least two independent draws".to_string()
    })?;
    let s2 = noise.sigma * noise.sigma;
    let cut = noise.split_point();
    let half = |range: std::ops::Range<usize>| {
        let n = range.len() as f64;
        let mut g = Array1::<f64>::zeros(noise.dim());
        for k in range {
            let (sign, j) = noise.source(k);
            let c = sign * (values[k] - base) / (s2 * n);
            g.scaled_add(c, &noise.draws.row(j));
        }
        g
    };
    Ok((half(0..cut), half(cut..noise.len())))
}

fn hessian_from_values(noise: &NoiseBatch, base: f64, values: &[f64]) -> Array2<f64> {
    let d = noise.dim();
    let s2 = noise.sigma * noise.sigma;
    let s4 = s2 * s2;
    let k_total = noise.len() as f64;
    let mut h = Array2::<f64>::zeros((d, d));
    let mut diag_weight = 0.0;
    // Σ_k w_k e_k e_kᵀ; the sign of e_k drops out of the outer product.
    let mut weights = vec![0.0; noise.draws.nrows()];
    for (k, &v) in values.iter().enumerate().take(noise.len()) {
        let (_, j) = noise.source(k);
        let w = v - base;
        weights[j] += w;
        diag_weight += w;
    }
    for (j, &w) in weights.iter().enumerate() {
        let e = noise.draws.row(j);
        for a in 0..d {
            let wa = w * e[a];
            for b in a..d {
                h[[a, b]] += wa * e[b];
            }
        }
    }
    for a in 0..d {
        h[[a, a]] -= s2 * diag_weight;
        for b in a..d {
            let v = h[[a, b]] / (s4 * k_total);
            h[[a, b]] = v;
            h[[b, a]] = v;
        }
    }
    h
}

/// Cotangent of a scalar objective with respect to the components of a
/// [`DerivativeEstimate`].
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateCotangent {
    pub value: f64,
    pub gradient: Array1<f64>,
    /// Cotangents of the split-sample gradients, when they were used.
    pub gradient_halves: Option<(Array1<f64>, Array1<f64>)>,
    pub laplacian: f64,
}

impl EstimateCotangent {
    pub fn zeros(dim: usize) -> Self {
        EstimateCotangent {
            value: 0.0,
            gradient: Array1::zeros(dim),
            gradient_halves: None,
            laplacian: 0.0,
        }
    }
}

/// Derivative of the objective with respect to each evaluated value.
#[derive(Clone, Debug, PartialEq)]
pub struct RowCotangents {
    /// For `f(x)`; zero for the vanilla variant.
    pub center: f64,
    /// For `f(x + e_k)`.
    pub rows: Vec<f64>,
}

impl RowCotangents {
    /// Cotangents aligned with [`evaluation_points`].
    pub fn to_point_order(&self, variant: Variant) -> Array1<f64> {
        let mut out = Vec::with_capacity(self.rows.len() + 1);
        if variant.uses_center() {
            out.push(self.center);
        }
        out.extend_from_slice(&self.rows);
        Array1::from(out)
    }
}

/// Adjoint of [`estimate_from_values`] with respect to the evaluated values.
///
/// The Hessian is not part of the adjoint.
pub fn pullback(
    noise: &NoiseBatch,
    variant: Variant,
    laplacian_coords: Option<&CoordSet>,
    cot: &EstimateCotangent,
) -> Result<RowCotangents> {
    let d = noise.dim();
    ensure(cot.gradient.len() == d, || {
        format!("gradient cotangent has length {}, expected {d}", cot.gradient.len())
    })?;
    ensure(variant != Variant::CvAntithetic || noise.is_antithetic(), || {
        "cv_antithetic estimators need an antithetic noise batch".to_string()
    })?;
    let all = CoordSet::all(d);
    let coords = laplacian_coords.unwrap_or(&all);
    let s2 = noise.sigma * noise.sigma;
    let s4 = s2 * s2;
    let k_total = noise.len() as f64;
    let norms = noise.squared_norms(coords);
    let shift = s2 * coords.len() as f64;
    // Per-draw projections of the gradient cotangents.
    let project = |c: &Array1<f64>| -> Vec<f64> { noise.draws.dot(c).to_vec() };
    let g_proj = project(&cot.gradient);
    let halves = cot
        .gradient_halves
        .as_ref()
        .map(|(a, b)| (project(a), project(b)));
    let cut = noise.split_point();
    let (n1, n2) = (cut as f64, (noise.len() - cut) as f64);

    let mut rows = Vec::with_capacity(noise.len());
    let mut derived_sum = 0.0;
    for k in 0..noise.len() {
        let (sign, j) = noise.source(k);
        let mut w = sign * g_proj[j] / (s2 * k_total);
        w += cot.laplacian * (norms[j] - shift) / (s4 * k_total);
        if let Some((h1, h2)) = &halves {
            w += if k < cut {
                sign * h1[j] / (s2 * n1)
            } else {
                sign * h2[j] / (s2 * n2)
            };
        }
        derived_sum += w;
        rows.push(w + cot.value / k_total);
    }
    let center = if variant.uses_center() { -derived_sum } else { 0.0 };
    Ok(RowCotangents { center, rows })
}

fn evaluate_base<F: BaseFunction + ?Sized>(
    f: &F,
    x: ArrayView1<f64>,
    noise: &NoiseBatch,
    variant: Variant,
) -> Result<(Option<f64>, Vec<f64>)> {
    ensure(x.len() == f.input_dim() && noise.dim() == x.len(), || {
        format!(
            "point has dimension {}, base expects {}, noise has {}",
            x.len(),
            f.input_dim(),
            noise.dim()
        )
    })?;
    ensure(x.iter().all(|v| v.is_finite()), || "point must be finite".to_string())?;
    let pts = evaluation_points(x, noise, variant);
    let out = f.eval_rows(pts.view())?;
    let mut out = out.to_vec();
    if variant.uses_center() {
        let c = out.remove(0);
        Ok((Some(c), out))
    } else {
        Ok((None, out))
    }
}

/// Evaluate `f` on the batch and form every estimate.
pub fn estimate<F: BaseFunction + ?Sized>(
    f: &F,
    x: ArrayView1<f64>,
    noise: &NoiseBatch,
    variant: Variant,
    opts: &EstimateOptions,
) -> Result<DerivativeEstimate> {
    let (center, values) = evaluate_base(f, x, noise, variant)?;
    estimate_from_values(noise, variant, center, &values, opts)
}

fn plain<F: BaseFunction + ?Sized>(
    f: &F,
    x: ArrayView1<f64>,
    noise: &NoiseBatch,
    variant: Variant,
) -> Result<DerivativeEstimate> {
    estimate(f, x, noise, variant, &EstimateOptions::default())
}

/// `(1/K) Σ f(x + e_k)`.
pub fn smoothed_value<F: BaseFunction + ?Sized>(f: &F, x: ArrayView1<f64>, noise: &NoiseBatch) -> Result<f64> {
    Ok(plain(f, x, noise, Variant::Vanilla)?.value)
}

pub fn grad_vanilla<F: BaseFunction + ?Sized>(
    f: &F,
    x: ArrayView1<f64>,
    noise: &NoiseBatch,
) -> Result<Array1<f64>> {
    Ok(plain(f, x, noise, Variant::Vanilla)?.gradient)
}

pub fn laplacian_vanilla<F: BaseFunction + ?Sized>(f: &F, x: ArrayView1<f64>, noise: &NoiseBatch) -> Result<f64> {
    Ok(plain(f, x, noise, Variant::Vanilla)?.laplacian)
}

pub fn hessian_vanilla<F: BaseFunction + ?Sized>(
    f: &F,
    x: ArrayView1<f64>,
    noise: &NoiseBatch,
) -> Result<Array2<f64>> {
    if x.len() > MAX_HESSIAN_DIM {
        return Err(Error::Capability(format!(
            "hessian estimate limited to d <= {MAX_HESSIAN_DIM} (got {}); use the laplacian estimators",
            x.len()
        )));
    }
    let opts = EstimateOptions {
        hessian: true,
        ..Default::default()
    };
    Ok(estimate(f, x, noise, Variant::Vanilla, &opts)?
        .hessian
        .expect("requested"))
}

pub fn grad_cv<F: BaseFunction + ?Sized>(f: &F, x: ArrayView1<f64>, noise: &NoiseBatch) -> Result<Array1<f64>> {
    Ok(plain(f, x, noise, Variant::ControlVariate)?.gradient)
}

pub fn laplacian_cv<F: BaseFunction + ?Sized>(f: &F, x: ArrayView1<f64>, noise: &NoiseBatch) -> Result<f64> {
    Ok(plain(f, x, noise, Variant::ControlVariate)?.laplacian)
}

pub fn grad_anti<F: BaseFunction + ?Sized>(f: &F, x: ArrayView1<f64>, noise: &NoiseBatch) -> Result<Array1<f64>> {
    Ok(plain(f, x, noise, Variant::CvAntithetic)?.gradient)
}

pub fn laplacian_anti<F: BaseFunction + ?Sized>(f: &F, x: ArrayView1<f64>, noise: &NoiseBatch) -> Result<f64> {
    Ok(plain(f, x, noise, Variant::CvAntithetic)?.laplacian)
}

/// `Σ_{i∈S} ∂²u/∂x_i²` with the chosen variant.
pub fn partial_laplacian<F: BaseFunction + ?Sized>(
    f: &F,
    x: ArrayView1<f64>,
    noise: &NoiseBatch,
    coords: &CoordSet,
    variant: Variant,
) -> Result<f64> {
    let opts = EstimateOptions {
        laplacian_coords: Some(coords.clone()),
        ..Default::default()
    };
    Ok(estimate(f, x, noise, variant, &opts)?.laplacian)
}

/// Lipschitz constant `(F/σ)·√(2/π)` of the smoothed model of a base
/// bounded by `F` in absolute value.
pub fn lipschitz_bound(sup_f: f64, sigma: f64) -> Result<f64> {
    ensure(sup_f.is_finite() && sup_f >= 0.0, || {
        format!("sup |f| must be finite and nonnegative, got {sup_f}")
    })?;
    ensure(sigma.is_finite() && sigma > 0.0, || {
        format!("sigma must be positive, got {sigma}")
    })?;
    Ok(sup_f / sigma * (2.0 / std::f64::consts::PI).sqrt())
}

#[cfg(test)]
mod tests;
