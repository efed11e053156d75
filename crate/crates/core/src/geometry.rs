//! Domains, grids and location sets.
//!
//! All matrices are row-major `N × d` arrays of `f64`. Gridded targets are
//! flattened in row-major (C) order, which is also the canonical row order
//! of every sample cube produced by the engine.

use ndarray::{Array1, Array2, ArrayD, ArrayView1, ArrayView2, Axis, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{EsiError, Result};

/// Padding applied to the enclosing box when none is requested explicitly.
pub const DEFAULT_PAD_FRACTION: f64 = 1e-9;

/// Axis-aligned box `[a₁,b₁] × … × [a_d,b_d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(EsiError::InvalidInput("domain needs at least one axis".into()));
        }
        if lower.len() != upper.len() {
            return Err(EsiError::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (a, b) in lower.iter().zip(&upper) {
            if !a.is_finite() || !b.is_finite() {
                return Err(EsiError::InvalidInput("domain bounds must be finite".into()));
            }
            if b < a {
                return Err(EsiError::InvalidInput(format!(
                    "domain upper bound {b} below lower bound {a}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn sides(&self) -> impl Iterator<Item = f64> + '_ {
        self.lower.iter().zip(&self.upper).map(|(a, b)| b - a)
    }

    /// Sum of side lengths, the rate of the Mondrian cut clock.
    pub fn measure(&self) -> f64 {
        self.sides().sum()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    /// Splits the box at `pos` along `axis` into the `<` and `≥` halves.
    pub fn split(&self, axis: usize, pos: f64) -> (Domain, Domain) {
        let mut low = self.clone();
        let mut high = self.clone();
        low.upper[axis] = pos;
        high.lower[axis] = pos;
        (low, high)
    }

    /// Smallest box containing the rows of `points` selected by `indices`.
    pub(crate) fn bounding(points: ArrayView2<'_, f64>, indices: &[usize]) -> Option<Domain> {
        let (&first, rest) = indices.split_first()?;
        let mut lower = points.row(first).to_vec();
        let mut upper = lower.clone();
        for &i in rest {
            for (j, &v) in points.row(i).iter().enumerate() {
                lower[j] = lower[j].min(v);
                upper[j] = upper[j].max(v);
            }
        }
        Some(Domain { lower, upper })
    }
}

/// Free-function form of [`Domain::measure`].
pub fn measure(domain: &Domain) -> f64 {
    domain.measure()
}

/// A set of `N` locations in `d` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationSet {
    coords: Array2<f64>,
}

impl LocationSet {
    pub fn new(coords: Array2<f64>) -> Result<Self> {
        if coords.ncols() == 0 {
            return Err(EsiError::InvalidInput("locations need at least one coordinate".into()));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(EsiError::InvalidInput("location coordinates must be finite".into()));
        }
        Ok(Self { coords })
    }

    /// Builds a set from row vectors, all of the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(EsiError::DimensionMismatch { expected: d, got: r.len() });
            }
            flat.extend_from_slice(r);
        }
        let coords = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| EsiError::InvalidInput(e.to_string()))?;
        Self::new(coords)
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    pub fn coords(&self) -> ArrayView2<'_, f64> {
        self.coords.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.coords.row(i)
    }

    /// Subset of rows in the given order.
    pub fn select(&self, indices: &[usize]) -> LocationSet {
        LocationSet { coords: self.coords.select(Axis(0), indices) }
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.coords
    }
}

/// Measured locations `P` with their values `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningData {
    points: LocationSet,
    values: Array1<f64>,
}

impl ConditioningData {
    pub fn new(points: LocationSet, values: Array1<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(EsiError::Empty("conditioning data"));
        }
        if points.len() != values.len() {
            return Err(EsiError::DimensionMismatch {
                expected: points.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EsiError::InvalidInput("conditioning values must be finite".into()));
        }
        Ok(Self { points, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn points(&self) -> &LocationSet {
        &self.points
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }

    pub fn select(&self, indices: &[usize]) -> ConditioningData {
        ConditioningData {
            points: self.points.select(indices),
            values: self.values.select(Axis(0), indices),
        }
    }
}

/// Regular (meshgrid-style) target grid given by one coordinate vector per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    axes: Vec<Vec<f64>>,
}

impl GridSpec {
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(EsiError::InvalidInput("grid needs at least one axis".into()));
        }
        for (i, axis) in axes.iter().enumerate() {
            if axis.is_empty() {
                return Err(EsiError::InvalidInput(format!("grid axis {i} is empty")));
            }
            if axis.iter().any(|v| !v.is_finite()) {
                return Err(EsiError::InvalidInput(format!("grid axis {i} is not finite")));
            }
            if axis.windows(2).any(|w| w[1] <= w[0]) {
                return Err(EsiError::InvalidInput(format!(
                    "grid axis {i} is not strictly increasing"
                )));
            }
        }
        Ok(Self { axes })
    }

    /// Grid with `count[i]` evenly spaced nodes from `start[i]` to `stop[i]`
    /// inclusive, like `numpy.mgrid[start:stop:count j]`.
    pub fn linspace(start: &[f64], stop: &[f64], count: &[usize]) -> Result<Self> {
        if start.len() != stop.len() || start.len() != count.len() {
            return Err(EsiError::InvalidInput("linspace arguments differ in length".into()));
        }
        let axes = start
            .iter()
            .zip(stop)
            .zip(count)
            .map(|((&a, &b), &n)| match n {
                0 => Vec::new(),
                1 => vec![a],
                _ => {
                    let step = (b - a) / (n - 1) as f64;
                    (0..n).map(|i| if i == n - 1 { b } else { a + step * i as f64 }).collect()
                }
            })
            .collect();
        Self::new(axes)
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reshapes a flat vector in flatten order to the grid shape.
    pub fn reshape(&self, flat: Array1<f64>) -> Result<ArrayD<f64>> {
        flat.into_shape_with_order(IxDyn(&self.shape()))
            .map_err(|e| EsiError::InvalidInput(e.to_string()))
    }

    /// Reshapes an `N × m` matrix to `d₁ × … × d_D × m`.
    pub fn reshape_cube(&self, cube: Array2<f64>) -> Result<ArrayD<f64>> {
        let mut shape = self.shape();
        shape.push(cube.ncols());
        let cube = if cube.is_standard_layout() { cube } else { cube.as_standard_layout().to_owned() };
        cube.into_shape_with_order(IxDyn(&shape))
            .map_err(|e| EsiError::InvalidInput(e.to_string()))
    }
}

/// Row-major cartesian product of the grid axes.
pub fn flatten_grid(grid: &GridSpec) -> LocationSet {
    let d = grid.dim();
    let n = grid.len();
    let shape = grid.shape();
    let mut coords = Array2::<f64>::zeros((n, d));
    for (row, mut out) in coords.rows_mut().into_iter().enumerate() {
        let mut rem = row;
        for axis in (0..d).rev() {
            let idx = rem % shape[axis];
            rem /= shape[axis];
            out[axis] = grid.axes[axis][idx];
        }
    }
    LocationSet { coords }
}

/// Smallest box containing all `points` and `targets`, each side inflated by
/// `pad_fraction` of its length (or by `pad_fraction` absolute when the side
/// is degenerate).
pub fn enclosing_domain(
    points: &LocationSet,
    targets: &LocationSet,
    pad_fraction: f64,
) -> Result<Domain> {
    if !(pad_fraction >= 0.0) || !pad_fraction.is_finite() {
        return Err(EsiError::InvalidInput(format!("pad fraction {pad_fraction} must be >= 0")));
    }
    if points.is_empty() && targets.is_empty() {
        return Err(EsiError::Empty("location set"));
    }
    let d = if points.is_empty() { targets.dim() } else { points.dim() };
    if !targets.is_empty() && targets.dim() != d {
        return Err(EsiError::DimensionMismatch { expected: d, got: targets.dim() });
    }
    let mut lower = vec![f64::INFINITY; d];
    let mut upper = vec![f64::NEG_INFINITY; d];
    for set in [points, targets] {
        for row in set.coords().rows() {
            for (j, &v) in row.iter().enumerate() {
                lower[j] = lower[j].min(v);
                upper[j] = upper[j].max(v);
            }
        }
    }
    for j in 0..d {
        let side = upper[j] - lower[j];
        let pad = if side > 0.0 { side * pad_fraction } else { pad_fraction };
        lower[j] -= pad;
        upper[j] += pad;
    }
    Domain::new(lower, upper)
}
