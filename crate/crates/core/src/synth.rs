//! Synthetic benchmark: a smooth oscillating surface on the unit square.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use std::f64::consts::PI;

use crate::error::{EsiError, Result};
use crate::geometry::{flatten_grid, ConditioningData, GridSpec, LocationSet};
use crate::partition::EsiRng;

/// `x(1 − x) cos(4πx) sin(4πy²)²`.
pub fn cubic_surface(x: f64, y: f64) -> f64 {
    let s = (4.0 * PI * y * y).sin();
    x * (1.0 - x) * (4.0 * PI * x).cos() * s * s
}

/// `n` uniform samples of the surface on `[0, 1]²`.
pub fn sample_points(n: usize, seed: u64) -> Result<ConditioningData> {
    if n == 0 {
        return Err(EsiError::InvalidInput("sample count must be >= 1".into()));
    }
    let mut rng = EsiRng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
    let values = Array1::from_iter(rows.iter().map(|r| cubic_surface(r[0], r[1])));
    ConditioningData::new(LocationSet::from_rows(&rows)?, values)
}

/// The benchmark grid: 100 × 200 nodes spanning `[0, 1]²`.
pub fn benchmark_grid() -> GridSpec {
    GridSpec::linspace(&[0.0, 0.0], &[1.0, 1.0], &[100, 200]).expect("valid benchmark grid")
}

/// Surface values at the grid nodes in flatten order.
pub fn truth_on_grid(grid: &GridSpec) -> Result<Array1<f64>> {
    if grid.dim() != 2 {
        return Err(EsiError::DimensionMismatch { expected: 2, got: grid.dim() });
    }
    let nodes = flatten_grid(grid);
    Ok(nodes.coords().rows().into_iter().map(|r| cubic_surface(r[0], r[1])).collect())
}
