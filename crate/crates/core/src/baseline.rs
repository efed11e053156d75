//! Global inverse distance weighting with a search radius, without any
//! partitioning. Serves as the reference estimator.

use ndarray::{Array1, ArrayD, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EsiError, Result};
use crate::geometry::{flatten_grid, ConditioningData, GridSpec, LocationSet};
use crate::local_interp::idw_at;
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalIdwParams {
    pub radius: f64,
    pub exponent: f64,
}

impl GlobalIdwParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(EsiError::InvalidInput(format!("radius {} must be > 0", self.radius)));
        }
        if !(self.exponent >= 0.0 && self.exponent.is_finite()) {
            return Err(EsiError::InvalidInput(format!("exponent {} must be >= 0", self.exponent)));
        }
        Ok(())
    }
}

/// Estimate of a baseline run; NaN where no sample lies within the radius.
#[derive(Debug, Clone, PartialEq)]
pub struct IdwResult {
    estimate: Array1<f64>,
    params: GlobalIdwParams,
    grid: Option<GridSpec>,
}

impl IdwResult {
    pub fn estimate(&self) -> &Array1<f64> {
        &self.estimate
    }

    pub fn params(&self) -> &GlobalIdwParams {
        &self.params
    }

    pub fn grid(&self) -> Option<&GridSpec> {
        self.grid.as_ref()
    }

    /// The estimate, shaped like the grid when there is one.
    pub fn estimation(&self) -> Result<ArrayD<f64>> {
        match &self.grid {
            Some(g) => g.reshape(self.estimate.clone()),
            None => Ok(self.estimate.clone().into_dyn()),
        }
    }
}

/// Baseline IDW at arbitrary targets.
pub fn idw_nongriddata(data: &ConditioningData, targets: &LocationSet, params: &GlobalIdwParams) -> Result<IdwResult> {
    params.validate()?;
    if data.is_empty() {
        return Err(EsiError::Empty("conditioning data"));
    }
    if targets.dim() != data.dim() {
        return Err(EsiError::DimensionMismatch { expected: data.dim(), got: targets.dim() });
    }
    let tree = KdTree::new(data.points().coords());
    let estimate: Vec<f64> = (0..targets.len())
        .into_par_iter()
        .map(|j| {
            let t = targets.row(j).to_vec();
            let near = tree.within_radius(&t, params.radius);
            if near.is_empty() {
                return f64::NAN;
            }
            let pts = data.points().coords().select(Axis(0), &near);
            let vals = data.values().select(Axis(0), &near);
            idw_at(&t, pts.view(), vals.view(), params.exponent)
        })
        .collect();
    Ok(IdwResult { estimate: Array1::from(estimate), params: *params, grid: None })
}

/// Baseline IDW on the nodes of a grid.
pub fn idw_griddata(data: &ConditioningData, grid: &GridSpec, params: &GlobalIdwParams) -> Result<IdwResult> {
    let mut res = idw_nongriddata(data, &flatten_grid(grid), params)?;
    res.grid = Some(grid.clone());
    Ok(res)
}
