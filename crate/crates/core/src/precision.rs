//! Loss-based precision of an ESI estimate.
//!
//! A loss pairs an elementwise comparison of the estimate with each sample
//! and an aggregation over the sample axis.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::aggregation::{nan_range, Aggregator, Mean};
use crate::error::{EsiError, Result};
use crate::geometry::GridSpec;

type ElementFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

#[derive(Clone)]
pub enum Elementwise {
    /// `f(estimate, sample)`.
    Fixed(Arc<ElementFn>),
    /// `|sample − estimate| / d_r`; `d_r` defaults to the estimate's range.
    OperationalError { dyn_range: Option<f64> },
}

impl fmt::Debug for Elementwise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Elementwise::Fixed(_) => f.write_str("Fixed(..)"),
            Elementwise::OperationalError { dyn_range } => {
                f.debug_struct("OperationalError").field("dyn_range", dyn_range).finish()
            }
        }
    }
}

#[derive(Clone)]
pub enum LossAggregation {
    Reduce(Arc<dyn Aggregator>),
    /// Keep the full loss cube.
    Identity,
}

impl fmt::Debug for LossAggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossAggregation::Reduce(a) => write!(f, "Reduce({})", a.name()),
            LossAggregation::Identity => f.write_str("Identity"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossFunction {
    name: String,
    elementwise: Elementwise,
    aggregation: LossAggregation,
}

/// Composes an elementwise loss `f(estimate, sample)` with an aggregation.
pub fn make_loss(
    name: impl Into<String>,
    f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    aggregation: LossAggregation,
) -> LossFunction {
    LossFunction { name: name.into(), elementwise: Elementwise::Fixed(Arc::new(f)), aggregation }
}

fn mean_agg() -> LossAggregation {
    LossAggregation::Reduce(Arc::new(Mean))
}

pub fn mse_loss() -> LossFunction {
    make_loss("mse", |e, x| (x - e) * (x - e), mean_agg())
}

pub fn mae_loss() -> LossFunction {
    make_loss("mae", |e, x| (x - e).abs(), mean_agg())
}

pub fn mse_cube() -> LossFunction {
    make_loss("mse_cube", |e, x| (x - e) * (x - e), LossAggregation::Identity)
}

pub fn mae_cube() -> LossFunction {
    make_loss("mae_cube", |e, x| (x - e).abs(), LossAggregation::Identity)
}

/// Mean absolute error scaled by an expected dynamic range.
///
/// Without `dyn_range` the estimate's range is used, then the cube's; when
/// both are zero the loss is zero.
pub fn operational_error_loss(dyn_range: Option<f64>, use_cube: bool) -> Result<LossFunction> {
    if let Some(r) = dyn_range {
        if !(r > 0.0 && r.is_finite()) {
            return Err(EsiError::InvalidInput(format!("dynamic range {r} must be > 0")));
        }
    }
    let name = match (dyn_range, use_cube) {
        (Some(r), false) => format!("operr:{r}"),
        (None, false) => "operr".to_string(),
        (Some(r), true) => format!("operr_cube:{r}"),
        (None, true) => "operr_cube".to_string(),
    };
    let aggregation = if use_cube { LossAggregation::Identity } else { mean_agg() };
    Ok(LossFunction { name, elementwise: Elementwise::OperationalError { dyn_range }, aggregation })
}

impl LossFunction {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn aggregation(&self) -> &LossAggregation {
        &self.aggregation
    }

    pub fn is_cube(&self) -> bool {
        matches!(self.aggregation, LossAggregation::Identity)
    }

    /// Elementwise losses; NaN wherever the sample or the estimate is missing.
    pub fn loss_cube(&self, estimate: ArrayView1<'_, f64>, cube: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if estimate.len() != cube.nrows() {
            return Err(EsiError::DimensionMismatch { expected: cube.nrows(), got: estimate.len() });
        }
        let f: Box<dyn Fn(f64, f64) -> f64 + Send + Sync> = match &self.elementwise {
            Elementwise::Fixed(f) => {
                let f = Arc::clone(f);
                Box::new(move |e, x| f(e, x))
            }
            Elementwise::OperationalError { dyn_range } => {
                let range = dyn_range.unwrap_or_else(|| effective_range(estimate, cube));
                if range > 0.0 {
                    Box::new(move |e, x| (x - e).abs() / range)
                } else {
                    Box::new(|_, _| 0.0)
                }
            }
        };
        let mut out = cube.to_owned();
        out.axis_iter_mut(ndarray::Axis(0))
            .into_par_iter()
            .zip(estimate.to_vec())
            .for_each(|(mut row, e)| {
                row.mapv_inplace(|x| if x.is_nan() || e.is_nan() { f64::NAN } else { f(e, x) });
            });
        Ok(out)
    }

    /// Per-target precision; errors for cube-valued losses.
    pub fn evaluate(
        &self,
        estimate: ArrayView1<'_, f64>,
        cube: ArrayView2<'_, f64>,
        grid: Option<&GridSpec>,
    ) -> Result<Array1<f64>> {
        match &self.aggregation {
            LossAggregation::Reduce(agg) => agg.aggregate(self.loss_cube(estimate, cube)?.view(), grid),
            LossAggregation::Identity => Err(EsiError::Unsupported(format!(
                "loss `{}` keeps the cube; use the cube-valued precision",
                self.name
            ))),
        }
    }

    /// Full loss cube; errors unless the aggregation is the identity.
    pub fn evaluate_cube(&self, estimate: ArrayView1<'_, f64>, cube: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match &self.aggregation {
            LossAggregation::Identity => self.loss_cube(estimate, cube),
            LossAggregation::Reduce(_) => Err(EsiError::Unsupported(format!(
                "loss `{}` aggregates; cube-valued precision needs an identity aggregation",
                self.name
            ))),
        }
    }
}

fn effective_range(estimate: ArrayView1<'_, f64>, cube: ArrayView2<'_, f64>) -> f64 {
    let (lo, hi) = nan_range(estimate.iter().copied());
    if hi > lo {
        return hi - lo;
    }
    let (lo, hi) = nan_range(cube.iter().copied());
    if hi > lo { hi - lo } else { 0.0 }
}

/// Named loss, as written on the CLI: `mse | mae | mse_cube | mae_cube | operr[:range]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSelector {
    Mse,
    Mae,
    MseCube,
    MaeCube,
    OperationalError(Option<f64>),
}

impl LossSelector {
    pub fn build(&self) -> Result<LossFunction> {
        Ok(match *self {
            LossSelector::Mse => mse_loss(),
            LossSelector::Mae => mae_loss(),
            LossSelector::MseCube => mse_cube(),
            LossSelector::MaeCube => mae_cube(),
            LossSelector::OperationalError(r) => operational_error_loss(r, false)?,
        })
    }
}

impl fmt::Display for LossSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSelector::Mse => f.write_str("mse"),
            LossSelector::Mae => f.write_str("mae"),
            LossSelector::MseCube => f.write_str("mse_cube"),
            LossSelector::MaeCube => f.write_str("mae_cube"),
            LossSelector::OperationalError(None) => f.write_str("operr"),
            LossSelector::OperationalError(Some(r)) => write!(f, "operr:{r}"),
        }
    }
}

impl FromStr for LossSelector {
    type Err = EsiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossSelector::Mse),
            "mae" => Ok(LossSelector::Mae),
            "mse_cube" => Ok(LossSelector::MseCube),
            "mae_cube" => Ok(LossSelector::MaeCube),
            "operr" => Ok(LossSelector::OperationalError(None)),
            other => {
                let r = other
                    .strip_prefix("operr:")
                    .and_then(|r| r.parse::<f64>().ok())
                    .ok_or_else(|| EsiError::InvalidInput(format!("unknown loss `{other}`")))?;
                if !(r > 0.0 && r.is_finite()) {
                    return Err(EsiError::InvalidInput(format!("dynamic range {r} must be > 0")));
                }
                Ok(LossSelector::OperationalError(Some(r)))
            }
        }
    }
}
