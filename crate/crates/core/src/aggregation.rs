//! Aggregation functions mapping an `N × m` sample cube to `N` estimates.
//!
//! Missing samples are NaN and are ignored everywhere; a row without any
//! sample aggregates to NaN.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EsiError, Result};
use crate::geometry::GridSpec;
use crate::partition::EsiRng;

/// An aggregation `G` over the sample axis of a cube.
pub trait Aggregator: Send + Sync {
    fn name(&self) -> String;

    /// `grid` carries the target grid for spatially aware aggregations.
    fn aggregate(&self, samples: ArrayView2<'_, f64>, grid: Option<&GridSpec>) -> Result<Array1<f64>>;
}

fn present(row: ArrayView1<'_, f64>) -> Vec<f64> {
    row.iter().copied().filter(|v| !v.is_nan()).collect()
}

fn by_row<F>(samples: ArrayView2<'_, f64>, f: F) -> Array1<f64>
where
    F: Fn(ArrayView1<'_, f64>) -> f64 + Sync,
{
    let out: Vec<f64> = (0..samples.nrows()).into_par_iter().map(|i| f(samples.row(i))).collect();
    Array1::from(out)
}

/// Missing-ignoring arithmetic mean of each row.
pub fn mean(samples: ArrayView2<'_, f64>) -> Array1<f64> {
    by_row(samples, |row| {
        let (s, c) = row.iter().filter(|v| !v.is_nan()).fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        if c == 0 { f64::NAN } else { s / c as f64 }
    })
}

fn percentile_of_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = q / 100.0 * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = h - lo as f64;
            sorted[lo] + frac * (sorted[hi] - sorted[lo])
        }
    }
}

/// Per-row `q`-th percentile with linear interpolation between closest ranks.
pub fn percentile(samples: ArrayView2<'_, f64>, q: f64) -> Result<Array1<f64>> {
    if !(0.0..=100.0).contains(&q) {
        return Err(EsiError::InvalidInput(format!("percentile {q} outside [0, 100]")));
    }
    Ok(by_row(samples, |row| {
        let mut v = present(row);
        v.sort_by(f64::total_cmp);
        percentile_of_sorted(&v, q)
    }))
}

/// Per-row median, identical to the 50th percentile.
pub fn median(samples: ArrayView2<'_, f64>) -> Array1<f64> {
    percentile(samples, 50.0).expect("50 is a valid percentile")
}

/// Histogram mode of a set of values: `⌈√n⌉` equal bins over the value
/// range, densest bin (lowest on ties), mean of its members.
fn mode_of(values: &[f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return lo;
    }
    let bins = (n as f64).sqrt().ceil() as usize;
    let width = (hi - lo) / bins as f64;
    let bin_of = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
    let mut counts = vec![0usize; bins];
    for &v in values {
        counts[bin_of(v)] += 1;
    }
    let best = counts
        .iter()
        .enumerate()
        .fold(0, |best, (i, &c)| if c > counts[best] { i } else { best });
    let members: Vec<f64> = values.iter().copied().filter(|&v| bin_of(v) == best).collect();
    members.iter().sum::<f64>() / members.len() as f64
}

/// Per-row mode of the empirical distribution of samples.
pub fn map_mode(samples: ArrayView2<'_, f64>) -> Array1<f64> {
    by_row(samples, |row| mode_of(&present(row)))
}

/// Returns the cube unchanged.
pub fn identity(samples: ArrayView2<'_, f64>) -> Array2<f64> {
    samples.to_owned()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Mean;

impl Aggregator for Mean {
    fn name(&self) -> String {
        "mean".into()
    }

    fn aggregate(&self, samples: ArrayView2<'_, f64>, _: Option<&GridSpec>) -> Result<Array1<f64>> {
        Ok(mean(samples))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Median;

impl Aggregator for Median {
    fn name(&self) -> String {
        "median".into()
    }

    fn aggregate(&self, samples: ArrayView2<'_, f64>, _: Option<&GridSpec>) -> Result<Array1<f64>> {
        Ok(median(samples))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Percentile {
    q: f64,
}

impl Percentile {
    pub fn new(q: f64) -> Result<Self> {
        if (0.0..=100.0).contains(&q) {
            Ok(Self { q })
        } else {
            Err(EsiError::InvalidInput(format!("percentile {q} outside [0, 100]")))
        }
    }

    pub fn q(&self) -> f64 {
        self.q
    }
}

impl Aggregator for Percentile {
    fn name(&self) -> String {
        format!("p{}", self.q)
    }

    fn aggregate(&self, samples: ArrayView2<'_, f64>, _: Option<&GridSpec>) -> Result<Array1<f64>> {
        percentile(samples, self.q)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Map;

impl Aggregator for Map {
    fn name(&self) -> String {
        "map".into()
    }

    fn aggregate(&self, samples: ArrayView2<'_, f64>, _: Option<&GridSpec>) -> Result<Array1<f64>> {
        Ok(map_mode(samples))
    }
}

/// Weighted average over the sample axis.
///
/// Without explicit weights a symmetric Dirichlet(1, …, 1) draw is used; with
/// `force_resample` a fresh draw is made on every call, otherwise the first
/// draw is kept. The generator sits behind a mutex, so concurrent calls are
/// serialised.
#[derive(Debug)]
pub struct WeightedAverage {
    weights: Option<Vec<f64>>,
    normalize: bool,
    force_resample: bool,
    state: Mutex<(EsiRng, Option<Vec<f64>>)>,
}

impl WeightedAverage {
    pub fn new(weights: Option<Vec<f64>>, normalize: bool, force_resample: bool, seed: u64) -> Result<Self> {
        if let Some(w) = &weights {
            if w.is_empty() || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(EsiError::InvalidInput("weights must be finite and non-negative".into()));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(EsiError::InvalidInput(format!("weights sum to {s}, expected 1")));
            }
        }
        Ok(Self {
            weights,
            normalize,
            force_resample,
            state: Mutex::new((EsiRng::seed_from_u64(seed), None)),
        })
    }

    /// Random weights, resampled on every call, not normalised.
    pub fn random(seed: u64) -> Self {
        Self::new(None, false, true, seed).expect("no explicit weights")
    }

    fn draw(rng: &mut EsiRng, m: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..m).map(|_| Exp1.sample(rng)).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    fn weights_for(&self, m: usize) -> Result<Vec<f64>> {
        if let Some(w) = &self.weights {
            if w.len() != m {
                return Err(EsiError::DimensionMismatch { expected: m, got: w.len() });
            }
            return Ok(w.clone());
        }
        let mut state = self.state.lock().expect("weighted average state poisoned");
        let (rng, cached) = &mut *state;
        match cached {
            Some(w) if !self.force_resample && w.len() == m => Ok(w.clone()),
            _ => {
                let w = Self::draw(rng, m);
                *cached = Some(w.clone());
                Ok(w)
            }
        }
    }
}

impl Aggregator for WeightedAverage {
    fn name(&self) -> String {
        "wavg".into()
    }

    fn aggregate(&self, samples: ArrayView2<'_, f64>, _: Option<&GridSpec>) -> Result<Array1<f64>> {
        let w = self.weights_for(samples.ncols())?;
        let mut out = by_row(samples, |row| {
            let (num, den) = row
                .iter()
                .zip(&w)
                .filter(|(v, _)| !v.is_nan())
                .fold((0.0, 0.0), |(n, d), (v, w)| (n + w * v, d + w));
            if den > 0.0 { num / den } else { f64::NAN }
        });
        if self.normalize {
            let (clo, chi) = nan_range(samples.iter().copied());
            let (elo, ehi) = nan_range(out.iter().copied());
            if ehi > elo && chi.is_finite() {
                out.mapv_inplace(|e| clo + (e - elo) / (ehi - elo) * (chi - clo));
            }
        }
        Ok(out)
    }
}

/// Min and max over the non-missing values (infinite when all are missing).
pub(crate) fn nan_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| !v.is_nan())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Joint spatial/sample bilateral filter over a 2-axis grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilateralFilter {
    /// Spatial standard deviation in grid cells.
    pub sigma_spatial: f64,
    /// Range standard deviation; `None` uses 10% of the cube's dynamic range.
    pub sigma_range: Option<f64>,
}

impl Default for BilateralFilter {
    fn default() -> Self {
        Self { sigma_spatial: 1.5, sigma_range: None }
    }
}

impl Aggregator for BilateralFilter {
    fn name(&self) -> String {
        "bilateral".into()
    }

    fn aggregate(&self, samples: ArrayView2<'_, f64>, grid: Option<&GridSpec>) -> Result<Array1<f64>> {
        let grid = grid.ok_or_else(|| {
            EsiError::Unsupported("bilateral filter needs gridded targets".into())
        })?;
        let shape = grid.shape();
        if shape.len() != 2 {
            return Err(EsiError::Unsupported("bilateral filter needs a 2-axis grid".into()));
        }
        if grid.len() != samples.nrows() {
            return Err(EsiError::DimensionMismatch { expected: grid.len(), got: samples.nrows() });
        }
        if !(self.sigma_spatial > 0.0) {
            return Err(EsiError::InvalidInput("spatial sigma must be > 0".into()));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let sigma_r = match self.sigma_range {
            Some(s) => s,
            None => {
                let (lo, hi) = nan_range(samples.iter().copied());
                if hi > lo { 0.1 * (hi - lo) } else { 0.0 }
            }
        };
        let radius = (2.0 * self.sigma_spatial).ceil() as isize;
        let centre = mean(samples);
        let two_ss = 2.0 * self.sigma_spatial * self.sigma_spatial;
        let two_sr = 2.0 * sigma_r * sigma_r;
        let out: Vec<f64> = (0..rows * cols)
            .into_par_iter()
            .map(|idx| {
                let m_bar = centre[idx];
                if m_bar.is_nan() {
                    return f64::NAN;
                }
                let (i, j) = ((idx / cols) as isize, (idx % cols) as isize);
                let (mut num, mut den) = (0.0, 0.0);
                for di in -radius..=radius {
                    for dj in -radius..=radius {
                        let (y, x) = (i + di, j + dj);
                        if y < 0 || x < 0 || y >= rows as isize || x >= cols as isize {
                            continue;
                        }
                        let ws = (-((di * di + dj * dj) as f64) / two_ss).exp();
                        if ws == 0.0 {
                            continue;
                        }
                        for &v in samples.row(y as usize * cols + x as usize) {
                            if v.is_nan() {
                                continue;
                            }
                            let wr = if two_sr > 0.0 { (-(v - m_bar).powi(2) / two_sr).exp() } else { 1.0 };
                            num += ws * wr * v;
                            den += ws * wr;
                        }
                    }
                }
                if den > 0.0 { num / den } else { m_bar }
            })
            .collect();
        Ok(Array1::from(out))
    }
}

/// Aggregator backed by a user closure.
#[derive(Clone)]
pub struct FnAggregator {
    name: String,
    f: Arc<dyn Fn(ArrayView2<'_, f64>) -> Array1<f64> + Send + Sync>,
}

impl FnAggregator {
    pub fn new(name: impl Into<String>, f: impl Fn(ArrayView2<'_, f64>) -> Array1<f64> + Send + Sync + 'static) -> Self {
        Self { name: name.into(), f: Arc::new(f) }
    }
}

impl fmt::Debug for FnAggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnAggregator").field("name", &self.name).finish()
    }
}

impl Aggregator for FnAggregator {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn aggregate(&self, samples: ArrayView2<'_, f64>, _: Option<&GridSpec>) -> Result<Array1<f64>> {
        let out = (self.f)(samples);
        if out.len() != samples.nrows() {
            return Err(EsiError::DimensionMismatch { expected: samples.nrows(), got: out.len() });
        }
        Ok(out)
    }
}

/// Named aggregation, as written in configuration files and on the CLI:
/// `mean | median | map | p<q> | wavg | bilateral | identity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AggSelector {
    Mean,
    Median,
    Map,
    Percentile(f64),
    WeightedAverage,
    Bilateral,
    Identity,
}

impl Default for AggSelector {
    fn default() -> Self {
        AggSelector::Mean
    }
}

impl AggSelector {
    /// Builds the aggregator; `seed` feeds the weighted average's generator.
    pub fn build(&self, seed: u64) -> Result<Box<dyn Aggregator>> {
        Ok(match *self {
            AggSelector::Mean => Box::new(Mean),
            AggSelector::Median => Box::new(Median),
            AggSelector::Map => Box::new(Map),
            AggSelector::Percentile(q) => Box::new(Percentile::new(q)?),
            AggSelector::WeightedAverage => Box::new(WeightedAverage::random(seed)),
            AggSelector::Bilateral => Box::new(BilateralFilter::default()),
            AggSelector::Identity => {
                return Err(EsiError::Unsupported(
                    "identity yields a cube and cannot produce an estimate".into(),
                ))
            }
        })
    }
}

impl fmt::Display for AggSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggSelector::Mean => f.write_str("mean"),
            AggSelector::Median => f.write_str("median"),
            AggSelector::Map => f.write_str("map"),
            AggSelector::Percentile(q) => write!(f, "p{q}"),
            AggSelector::WeightedAverage => f.write_str("wavg"),
            AggSelector::Bilateral => f.write_str("bilateral"),
            AggSelector::Identity => f.write_str("identity"),
        }
    }
}

impl FromStr for AggSelector {
    type Err = EsiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(AggSelector::Mean),
            "median" => Ok(AggSelector::Median),
            "map" => Ok(AggSelector::Map),
            "wavg" => Ok(AggSelector::WeightedAverage),
            "bilateral" => Ok(AggSelector::Bilateral),
            "identity" => Ok(AggSelector::Identity),
            other => {
                let q = other
                    .strip_prefix('p')
                    .and_then(|q| q.parse::<f64>().ok())
                    .ok_or_else(|| EsiError::InvalidInput(format!("unknown aggregation `{other}`")))?;
                Percentile::new(q)?;
                Ok(AggSelector::Percentile(q))
            }
        }
    }
}

impl TryFrom<String> for AggSelector {
    type Error = EsiError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AggSelector> for String {
    fn from(a: AggSelector) -> String {
        a.to_string()
    }
}
