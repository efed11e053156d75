//! Base interpolators applied inside a single partition cell.

use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{EsiError, Result};

/// Distance below which a target is treated as coinciding with a sample.
pub const COINCIDENCE_EPS: f64 = 1e-12;

/// Smallest admissible pivot magnitude in the kriging factorisation.
pub const SINGULAR_PIVOT: f64 = 1e-12;

/// Largest admissible residual of the solved system, relative to `1 + max|z|`.
pub const SOLVE_RESIDUAL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdwParams {
    pub exponent: f64,
}

impl Default for IdwParams {
    fn default() -> Self {
        Self { exponent: 2.0 }
    }
}

impl IdwParams {
    pub fn validate(&self) -> Result<()> {
        if self.exponent.is_finite() && self.exponent >= 0.0 {
            Ok(())
        } else {
            Err(EsiError::InvalidInput(format!("idw exponent {} must be finite and >= 0", self.exponent)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariogramModel {
    Spherical,
    Exponential,
    Cubic,
    Gaussian,
}

impl VariogramModel {
    pub const ALL: [VariogramModel; 4] = [
        VariogramModel::Spherical,
        VariogramModel::Exponential,
        VariogramModel::Cubic,
        VariogramModel::Gaussian,
    ];

    /// Normalised structure function at reduced lag `u = h / r`.
    fn structure(self, u: f64) -> f64 {
        match self {
            VariogramModel::Spherical if u >= 1.0 => 1.0,
            VariogramModel::Spherical => 1.5 * u - 0.5 * u.powi(3),
            VariogramModel::Exponential => 1.0 - (-3.0 * u).exp(),
            VariogramModel::Cubic if u >= 1.0 => 1.0,
            VariogramModel::Cubic => {
                u * u * (7.0 - 8.75 * u + 3.5 * u.powi(3) - 0.75 * u.powi(5))
            }
            VariogramModel::Gaussian => 1.0 - (-3.0 * u * u).exp(),
        }
    }
}

impl fmt::Display for VariogramModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VariogramModel::Spherical => "spherical",
            VariogramModel::Exponential => "exponential",
            VariogramModel::Cubic => "cubic",
            VariogramModel::Gaussian => "gaussian",
        })
    }
}

impl FromStr for VariogramModel {
    type Err = EsiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spherical" => Ok(VariogramModel::Spherical),
            "exponential" => Ok(VariogramModel::Exponential),
            "cubic" => Ok(VariogramModel::Cubic),
            "gaussian" => Ok(VariogramModel::Gaussian),
            other => Err(EsiError::InvalidInput(format!("unknown variogram model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KrigingParams {
    pub model: VariogramModel,
    pub nugget: f64,
    pub range: f64,
    pub sill: f64,
}

impl Default for KrigingParams {
    fn default() -> Self {
        Self { model: VariogramModel::Spherical, nugget: 0.1, range: 5000.0, sill: 1.0 }
    }
}

impl KrigingParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.nugget) {
            return Err(EsiError::InvalidInput(format!("nugget {} outside [0, 1]", self.nugget)));
        }
        if !(self.range > 0.0 && self.range.is_finite()) {
            return Err(EsiError::InvalidInput(format!("range {} must be > 0", self.range)));
        }
        if !(self.sill > 0.0 && self.sill.is_finite()) {
            return Err(EsiError::InvalidInput(format!("sill {} must be > 0", self.sill)));
        }
        Ok(())
    }
}

/// Covariance `s · clamp((1 − n)(1 − model(h/r)), 0, 1)`.
pub fn covariance(h: f64, params: &KrigingParams) -> f64 {
    let m = (1.0 - params.nugget) * (1.0 - params.model.structure(h / params.range));
    params.sill * m.clamp(0.0, 1.0)
}

fn dist(a: &[f64], b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// IDW estimate at a single location; NaN when the cell is empty.
pub fn idw_at(
    target: &[f64],
    points: ArrayView2<'_, f64>,
    values: ArrayView1<'_, f64>,
    exponent: f64,
) -> f64 {
    if points.nrows() == 0 {
        return f64::NAN;
    }
    let mut dists = Vec::with_capacity(points.nrows());
    let mut dmin = f64::INFINITY;
    for (i, row) in points.rows().into_iter().enumerate() {
        let d = dist(target, row);
        if d < COINCIDENCE_EPS {
            return values[i];
        }
        dmin = dmin.min(d);
        dists.push(d);
    }
    if exponent == 0.0 {
        return values.mean().unwrap_or(f64::NAN);
    }
    // weights scaled by d_min^p: same ratios, no overflow for large p
    let (mut num, mut den) = (0.0, 0.0);
    for (d, v) in dists.iter().zip(values) {
        let w = (dmin / d).powf(exponent);
        num += w * v;
        den += w;
    }
    num / den
}

/// Inverse distance weighting of the cell samples at each target.
pub fn idw_estimate(
    targets: ArrayView2<'_, f64>,
    cell_points: ArrayView2<'_, f64>,
    cell_values: ArrayView1<'_, f64>,
    params: &IdwParams,
) -> Result<Vec<f64>> {
    params.validate()?;
    check_cell(targets, cell_points, cell_values)?;
    Ok(targets
        .rows()
        .into_iter()
        .map(|t| idw_at(t.as_slice().unwrap_or(&t.to_vec()), cell_points, cell_values, params.exponent))
        .collect())
}

fn check_cell(
    targets: ArrayView2<'_, f64>,
    cell_points: ArrayView2<'_, f64>,
    cell_values: ArrayView1<'_, f64>,
) -> Result<()> {
    if cell_points.nrows() != cell_values.len() {
        return Err(EsiError::DimensionMismatch { expected: cell_points.nrows(), got: cell_values.len() });
    }
    if cell_points.nrows() > 0 && targets.nrows() > 0 && targets.ncols() != cell_points.ncols() {
        return Err(EsiError::DimensionMismatch { expected: cell_points.ncols(), got: targets.ncols() });
    }
    Ok(())
}

/// Dense LU factorisation with partial pivoting.
#[derive(Debug, Clone)]
struct Lu {
    n: usize,
    a: Vec<f64>,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    /// `None` when a pivot falls below [`SINGULAR_PIVOT`].
    fn factor(a: Vec<f64>, n: usize) -> Option<Self> {
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| lu[i * n + k].abs().total_cmp(&lu[j * n + k].abs()))
                .unwrap_or(k);
            if !(lu[p * n + k].abs() >= SINGULAR_PIVOT) {
                return None;
            }
            if p != k {
                for c in 0..n {
                    lu.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / pivot;
                lu[i * n + k] = f;
                if f != 0.0 {
                    for c in k + 1..n {
                        lu[i * n + c] -= f * lu[k * n + c];
                    }
                }
            }
        }
        Some(Self { n, a, lu, perm })
    }

    fn solve_raw(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu[i * n + j] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.lu[i * n + j] * x[j]).sum();
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        x
    }

    /// Largest absolute entry of `A x − b`.
    fn residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let n = self.n;
        (0..n)
            .map(|i| ((0..n).map(|j| self.a[i * n + j] * x[j]).sum::<f64>() - b[i]).abs())
            .fold(0.0, f64::max)
    }

    /// Solve with one step of iterative refinement.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = self.solve_raw(b);
        let r: Vec<f64> = (0..n)
            .map(|i| b[i] - (0..n).map(|j| self.a[i * n + j] * x[j]).sum::<f64>())
            .collect();
        let dx = self.solve_raw(&r);
        for (xi, di) in x.iter_mut().zip(dx) {
            *xi += di;
        }
        x
    }
}

/// Ordinary kriging system fitted to one cell.
///
/// Coincident samples (closer than [`COINCIDENCE_EPS`]) are merged into one
/// location carrying their mean value before the system is built.
#[derive(Debug, Clone)]
pub struct OrdinaryKriging {
    params: KrigingParams,
    points: Vec<Vec<f64>>,
    lu: Option<Lu>,
    /// `A⁻¹ [z; 0]`, so that an estimate is `[c(x); 1] · dual`.
    dual: Vec<f64>,
}

impl OrdinaryKriging {
    /// Returns `Ok(None)` when the system is numerically singular: a pivot
    /// below [`SINGULAR_PIVOT`], or a solution that misses the values by more
    /// than [`SOLVE_RESIDUAL`].
    pub fn fit(
        cell_points: ArrayView2<'_, f64>,
        cell_values: ArrayView1<'_, f64>,
        params: &KrigingParams,
    ) -> Result<Option<Self>> {
        params.validate()?;
        if cell_points.nrows() == 0 {
            return Err(EsiError::Empty("kriging cell"));
        }
        if cell_points.nrows() != cell_values.len() {
            return Err(EsiError::DimensionMismatch { expected: cell_points.nrows(), got: cell_values.len() });
        }
        let (points, values) = dedup(cell_points, cell_values);
        let n = points.len();
        if n == 1 {
            return Ok(Some(Self { params: *params, points, dual: vec![0.0, values[0]], lu: None }));
        }
        let size = n + 1;
        let mut a = vec![0.0; size * size];
        for i in 0..n {
            for j in i..n {
                let h = points[i].iter().zip(&points[j]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                let c = covariance(h, params);
                a[i * size + j] = c;
                a[j * size + i] = c;
            }
            a[i * size + n] = 1.0;
            a[n * size + i] = 1.0;
        }
        let Some(lu) = Lu::factor(a, size) else {
            return Ok(None);
        };
        let mut rhs = values;
        rhs.push(0.0);
        let dual = lu.solve(&rhs);
        let scale = 1.0 + rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(lu.residual(&dual, &rhs) <= SOLVE_RESIDUAL * scale) {
            return Ok(None);
        }
        Ok(Some(Self { params: *params, points, lu: Some(lu), dual }))
    }

    /// Locations after merging coincident samples.
    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Kriging weights of the merged locations at `target`.
    pub fn weights(&self, target: &[f64]) -> Vec<f64> {
        let Some(lu) = &self.lu else {
            return vec![1.0];
        };
        let n = self.points.len();
        let mut rhs: Vec<f64> = self
            .points
            .iter()
            .map(|p| {
                let h = p.iter().zip(target).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                covariance(h, &self.params)
            })
            .collect();
        rhs.push(1.0);
        let mut w = lu.solve(&rhs);
        w.truncate(n);
        w
    }

    pub fn estimate(&self, target: &[f64]) -> f64 {
        let n = self.points.len();
        let structured: f64 = self
            .points
            .iter()
            .zip(&self.dual)
            .map(|(p, b)| {
                let h = p.iter().zip(target).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                covariance(h, &self.params) * b
            })
            .sum();
        structured + self.dual[n]
    }
}

fn dedup(points: ArrayView2<'_, f64>, values: ArrayView1<'_, f64>) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut out_pts: Vec<Vec<f64>> = Vec::new();
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for (row, &v) in points.rows().into_iter().zip(values) {
        let found = out_pts.iter().position(|p| dist(p, row) < COINCIDENCE_EPS);
        match found {
            Some(i) => {
                sums[i].0 += v;
                sums[i].1 += 1;
            }
            None => {
                out_pts.push(row.to_vec());
                sums.push((v, 1));
            }
        }
    }
    let vals = sums.into_iter().map(|(s, c)| s / c as f64).collect();
    (out_pts, vals)
}

/// Estimates of one cell plus a flag set when the singular fallback was used.
#[derive(Debug, Clone, PartialEq)]
pub struct KrigingEstimate {
    pub values: Vec<f64>,
    pub singular_fallback: bool,
}

/// Ordinary kriging of the cell samples at each target. A singular system
/// yields the arithmetic mean of `cell_values` at every target.
pub fn kriging_estimate(
    targets: ArrayView2<'_, f64>,
    cell_points: ArrayView2<'_, f64>,
    cell_values: ArrayView1<'_, f64>,
    params: &KrigingParams,
) -> Result<KrigingEstimate> {
    check_cell(targets, cell_points, cell_values)?;
    if cell_points.nrows() == 0 {
        return Ok(KrigingEstimate { values: vec![f64::NAN; targets.nrows()], singular_fallback: false });
    }
    match OrdinaryKriging::fit(cell_points, cell_values, params)? {
        Some(ok) => Ok(KrigingEstimate {
            values: targets.rows().into_iter().map(|t| ok.estimate(&t.to_vec())).collect(),
            singular_fallback: false,
        }),
        None => {
            let mean = cell_values.mean().unwrap_or(f64::NAN);
            Ok(KrigingEstimate { values: vec![mean; targets.nrows()], singular_fallback: true })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1, Array2};
    use proptest::prelude::*;

    fn kp(model: VariogramModel, nugget: f64, range: f64) -> KrigingParams {
        KrigingParams { model, nugget, range, sill: 1.0 }
    }

    #[test]
    fn idw_examples() {
        let pts = array![[0.0, 0.0], [2.0, 0.0]];
        let vals = array![0.0, 4.0];
        let p2 = IdwParams { exponent: 2.0 };
        let out = idw_estimate(array![[0.5, 0.0]].view(), pts.view(), vals.view(), &p2).unwrap();
        // (4·0 + (4/9)·4) / (4 + 4/9)
        let expect = (4.0 * 0.0 + (4.0 / 9.0) * 4.0) / (4.0 + 4.0 / 9.0);
        assert!((out[0] - expect).abs() < 1e-15);
        assert!((out[0] - 0.4).abs() < 1e-15);

        let flat = IdwParams { exponent: 0.0 };
        let vals = array![1.0, 3.0];
        let out = idw_estimate(array![[7.0, -3.0], [1.0, 0.0]].view(), pts.view(), vals.view(), &flat).unwrap();
        assert_eq!(out, vec![2.0, 2.0]);

        let out = idw_estimate(array![[2.0, 0.0]].view(), pts.view(), vals.view(), &p2).unwrap();
        assert_eq!(out, vec![3.0]);
    }

    #[test]
    fn idw_empty_cell_is_missing() {
        let out = idw_estimate(
            array![[0.0]].view(),
            Array2::zeros((0, 1)).view(),
            Array1::zeros(0).view(),
            &IdwParams::default(),
        )
        .unwrap();
        assert!(out[0].is_nan());
    }

    #[test]
    fn idw_rejects_negative_exponent() {
        let pts = array![[0.0]];
        assert!(idw_estimate(pts.view(), pts.view(), array![1.0].view(), &IdwParams { exponent: -1.0 }).is_err());
    }

    #[test]
    fn idw_large_exponent_is_nearest() {
        let pts = array![[0.0, 0.0], [1.0, 0.0], [0.0, 3.0]];
        let vals = array![5.0, -2.0, 9.0];
        let p = IdwParams { exponent: 50.0 };
        let out = idw_estimate(array![[0.6, 0.1], [0.1, 2.0], [1e-9, 1e-9]].view(), pts.view(), vals.view(), &p).unwrap();
        assert!((out[0] + 2.0).abs() < 1e-6);
        assert!((out[1] - 9.0).abs() < 1e-6);
        assert!((out[2] - 5.0).abs() < 1e-6);
    }

    #[test]
    fn covariance_examples() {
        let sph = kp(VariogramModel::Spherical, 0.1, 1.0);
        assert!((covariance(0.0, &sph) - 0.9).abs() < 1e-15);
        assert_eq!(covariance(1.0, &sph), 0.0);
        assert_eq!(covariance(1.7, &sph), 0.0);
        let exp = kp(VariogramModel::Exponential, 0.0, 2.0);
        assert!((covariance(2.0, &exp) - 0.049_787_068_367_863_94).abs() < 1e-15);
        let cub = kp(VariogramModel::Cubic, 0.0, 1.0);
        assert!(covariance(1.0, &cub).abs() < 1e-15);
        assert_eq!(covariance(3.0, &cub), 0.0);
        let gau = kp(VariogramModel::Gaussian, 0.0, 1.0);
        assert!((covariance(1.0, &gau) - (-3.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn covariance_scales_with_sill() {
        let mut p = kp(VariogramModel::Gaussian, 0.2, 3.0);
        let base = covariance(1.3, &p);
        p.sill = 2.5;
        assert!((covariance(1.3, &p) - 2.5 * base).abs() < 1e-15);
    }

    #[test]
    fn kriging_param_validation() {
        assert!(kp(VariogramModel::Cubic, 1.5, 1.0).validate().is_err());
        assert!(kp(VariogramModel::Cubic, 0.5, 0.0).validate().is_err());
        let mut p = kp(VariogramModel::Cubic, 0.5, 1.0);
        p.sill = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn kriging_trivial_cells() {
        let p = kp(VariogramModel::Spherical, 0.0, 1.0);
        let one = kriging_estimate(array![[0.3, 0.3]].view(), array![[0.1, 0.2]].view(), array![7.5].view(), &p).unwrap();
        assert_eq!(one.values, vec![7.5]);

        let pts = array![[0.0, 0.0], [0.4, 0.1], [0.2, 0.9]];
        let out = kriging_estimate(array![[0.5, 0.5], [0.1, 0.0]].view(), pts.view(), array![3.0, 3.0, 3.0].view(), &p).unwrap();
        for v in out.values {
            assert!((v - 3.0).abs() < 1e-12);
        }

        let vals = array![1.0, -2.0, 4.0];
        let out = kriging_estimate(pts.view(), pts.view(), vals.view(), &p).unwrap();
        for (a, b) in out.values.iter().zip(vals.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicates_are_merged() {
        let p = kp(VariogramModel::Exponential, 0.0, 1.0);
        let pts = array![[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]];
        let vals = array![1.0, 3.0, 10.0];
        let ok = OrdinaryKriging::fit(pts.view(), vals.view(), &p).unwrap().unwrap();
        assert_eq!(ok.points().len(), 2);
        assert!((ok.estimate(&[0.0, 0.0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn full_nugget_falls_back_to_mean() {
        let p = kp(VariogramModel::Spherical, 1.0, 1.0);
        let pts = array![[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]];
        let out = kriging_estimate(array![[0.2, 0.0]].view(), pts.view(), array![1.0, 2.0, 6.0].view(), &p).unwrap();
        assert!(out.singular_fallback);
        assert_eq!(out.values, vec![3.0]);
    }

    #[test]
    fn dual_estimate_matches_weights() {
        let p = kp(VariogramModel::Cubic, 0.2, 1.5);
        let pts = array![[0.1, 0.2], [0.8, 0.3], [0.4, 0.9], [0.6, 0.6]];
        let vals = array![1.0, -2.0, 0.5, 4.0];
        let ok = OrdinaryKriging::fit(pts.view(), vals.view(), &p).unwrap().unwrap();
        for t in [[0.3, 0.3], [0.9, 0.9], [0.0, 1.0]] {
            let by_weights: f64 = ok.weights(&t).iter().zip(&vals).map(|(w, z)| w * z).sum();
            assert!((ok.estimate(&t) - by_weights).abs() < 1e-12);
        }
    }

    #[test]
    fn unresolvable_system_is_singular() {
        // gaussian over points 1e-7 apart
        let p = kp(VariogramModel::Gaussian, 0.0, 1.0);
        let pts = array![[0.5], [0.5 + 1e-7], [0.5 + 2e-7], [0.9]];
        let vals = array![1.0, -1.0, 1.0, 0.0];
        let out = kriging_estimate(array![[0.7]].view(), pts.view(), vals.view(), &p).unwrap();
        assert!(out.singular_fallback);
        assert_eq!(out.values, vec![0.25]);
    }

    proptest! {
        #[test]
        fn idw_is_convex(
            pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..12),
            vals in prop::collection::vec(-5.0f64..5.0, 12),
            target in (-10.0f64..10.0, -10.0f64..10.0),
            exponent in 0.0f64..8.0,
        ) {
            let n = pts.len();
            let p = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { pts[i].0 } else { pts[i].1 });
            let v = Array1::from(vals[..n].to_vec());
            let t = [target.0, target.1];
            let e = idw_at(&t, p.view(), v.view(), exponent);
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(e >= lo - 1e-12 && e <= hi + 1e-12);
        }

        #[test]
        fn covariance_non_increasing_within_range(
            nugget in 0.0f64..0.99,
            range in 0.1f64..100.0,
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for model in VariogramModel::ALL {
                let p = KrigingParams { model, nugget, range, sill: 1.0 };
                prop_assert!(covariance(lo * range, &p) >= covariance(hi * range, &p) - 1e-15);
            }
        }
    }
}
