//! Sample-cube generation and estimation results.

use ndarray::{Array1, Array2, ArrayD, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{AggSelector, Aggregator};
use crate::error::{EsiError, Result};
use crate::geometry::{enclosing_domain, flatten_grid, ConditioningData, Domain, GridSpec, LocationSet, DEFAULT_PAD_FRACTION};
use crate::local_interp::{idw_at, IdwParams, KrigingParams, OrdinaryKriging};
use crate::partition::{mix_seed, Forest, ProcessKind};
use crate::precision::LossFunction;

/// Largest dimension accepted by the kriging voter.
pub const MAX_KRIGING_DIM: usize = 3;

const AGG_STREAM: u64 = u64::MAX;

/// The weak voter run inside each cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum LocalInterpolator {
    Idw(IdwParams),
    Kriging(KrigingParams),
}

impl Default for LocalInterpolator {
    fn default() -> Self {
        LocalInterpolator::Idw(IdwParams::default())
    }
}

impl LocalInterpolator {
    pub fn validate(&self) -> Result<()> {
        match self {
            LocalInterpolator::Idw(p) => p.validate(),
            LocalInterpolator::Kriging(p) => p.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LocalInterpolator::Idw(_) => "idw",
            LocalInterpolator::Kriging(_) => "kriging",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsiConfig {
    pub p_process: ProcessKind,
    pub n_partitions: usize,
    pub alpha: f64,
    pub data_cond: bool,
    pub local: LocalInterpolator,
    pub agg: AggSelector,
    pub seed: u64,
}

impl Default for EsiConfig {
    fn default() -> Self {
        Self {
            p_process: ProcessKind::Mondrian,
            n_partitions: 500,
            alpha: 0.8,
            data_cond: true,
            local: LocalInterpolator::default(),
            agg: AggSelector::Mean,
            seed: 0,
        }
    }
}

impl EsiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_partitions == 0 {
            return Err(EsiError::InvalidInput("n_partitions must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(EsiError::InvalidInput(format!("alpha {} outside [0, 1)", self.alpha)));
        }
        self.local.validate()?;
        check_voter(self.p_process, &self.local)?;
        if self.agg == AggSelector::Identity {
            return Err(EsiError::Unsupported("identity cannot aggregate an estimate".into()));
        }
        Ok(())
    }

    /// Aggregator described by `agg`, seeded from this configuration.
    pub fn aggregator(&self) -> Result<Box<dyn Aggregator>> {
        self.agg.build(mix_seed(self.seed, AGG_STREAM))
    }
}

fn check_voter(kind: ProcessKind, local: &LocalInterpolator) -> Result<()> {
    if kind == ProcessKind::Voronoi && matches!(local, LocalInterpolator::Kriging(_)) {
        return Err(EsiError::Unsupported("kriging cannot be combined with voronoi partitions".into()));
    }
    Ok(())
}

/// `N_targets × m` matrix of weak-voter estimates; NaN marks an empty cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCube {
    data: Array2<f64>,
    singular_fallbacks: usize,
}

impl SampleCube {
    pub fn new(data: Array2<f64>) -> Self {
        Self { data, singular_fallbacks: 0 }
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn n_targets(&self) -> usize {
        self.data.nrows()
    }

    pub fn m(&self) -> usize {
        self.data.ncols()
    }

    /// Number of kriging cells that fell back to the cell mean.
    pub fn singular_fallbacks(&self) -> usize {
        self.singular_fallbacks
    }

    /// Entries left missing because their cell held no data.
    pub fn missing(&self) -> usize {
        self.data.iter().filter(|v| v.is_nan()).count()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }
}

/// Per partition, the cells holding at least one target: data members and
/// target members of each.
pub(crate) struct CellAssignment {
    columns: Vec<Vec<(Vec<usize>, Vec<usize>)>>,
}

pub(crate) fn assign_cells(forest: &Forest, data: &ConditioningData, targets: &LocationSet) -> Result<CellAssignment> {
    let columns = forest
        .partitions()
        .par_iter()
        .map(|p| {
            let data_cells = p.cell_members(data.points())?;
            let target_cells = p.cell_members(targets)?;
            Ok(data_cells
                .into_iter()
                .zip(target_cells)
                .filter(|(_, t)| !t.is_empty())
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CellAssignment { columns })
}

pub(crate) fn fill_cube(
    assignment: &CellAssignment,
    data: &ConditioningData,
    targets: &LocationSet,
    local: &LocalInterpolator,
) -> Result<SampleCube> {
    local.validate()?;
    if let LocalInterpolator::Kriging(_) = local {
        if data.dim() > MAX_KRIGING_DIM {
            return Err(EsiError::Unsupported(format!("kriging supports up to {MAX_KRIGING_DIM} dimensions")));
        }
    }
    let mut cube = Array2::from_elem((targets.len(), assignment.columns.len()), f64::NAN);
    let fallbacks = cube
        .axis_iter_mut(Axis(1))
        .into_par_iter()
        .zip(assignment.columns.par_iter())
        .map(|(mut col, cells)| -> Result<usize> {
            let mut fallbacks = 0;
            let mut t = vec![0.0; targets.dim()];
            for (members, target_ids) in cells {
                if members.is_empty() {
                    continue;
                }
                let pts = data.points().coords().select(Axis(0), members);
                let vals = data.values().select(Axis(0), members);
                match local {
                    LocalInterpolator::Idw(p) => {
                        for &j in target_ids {
                            copy_row(targets.row(j), &mut t);
                            col[j] = idw_at(&t, pts.view(), vals.view(), p.exponent);
                        }
                    }
                    LocalInterpolator::Kriging(p) => match OrdinaryKriging::fit(pts.view(), vals.view(), p)? {
                        Some(ok) => {
                            for &j in target_ids {
                                copy_row(targets.row(j), &mut t);
                                col[j] = ok.estimate(&t);
                            }
                        }
                        None => {
                            fallbacks += 1;
                            let mean = vals.mean().unwrap_or(f64::NAN);
                            for &j in target_ids {
                                col[j] = mean;
                            }
                        }
                    },
                }
            }
            Ok(fallbacks)
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    Ok(SampleCube { data: cube, singular_fallbacks: fallbacks })
}

fn copy_row(row: ArrayView1<'_, f64>, out: &mut [f64]) {
    for (o, v) in out.iter_mut().zip(row) {
        *o = *v;
    }
}

/// Runs the local voter of every partition on the data falling in each
/// target's cell. Column `k` depends on partition `k` only.
pub fn generate_cube(
    forest: &Forest,
    data: &ConditioningData,
    targets: &LocationSet,
    local: &LocalInterpolator,
) -> Result<SampleCube> {
    check_voter(forest.kind(), local)?;
    if targets.dim() != forest.domain().dim() {
        return Err(EsiError::DimensionMismatch { expected: forest.domain().dim(), got: targets.dim() });
    }
    let assignment = assign_cells(forest, data, targets)?;
    fill_cube(&assignment, data, targets, local)
}

/// Cube, estimate and configuration of one ESI run.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    cube: SampleCube,
    estimate: Array1<f64>,
    config: EsiConfig,
    grid: Option<GridSpec>,
    agg_name: String,
    precision_cache: Option<(String, Array1<f64>)>,
}

impl EstimationResult {
    /// Wraps a cube, aggregating it with the configured aggregation.
    pub fn from_cube(cube: SampleCube, config: EsiConfig, grid: Option<GridSpec>) -> Result<Self> {
        config.validate()?;
        if let Some(g) = &grid {
            if g.len() != cube.n_targets() {
                return Err(EsiError::DimensionMismatch { expected: g.len(), got: cube.n_targets() });
            }
        }
        let agg = config.aggregator()?;
        let estimate = agg.aggregate(cube.view(), grid.as_ref())?;
        Ok(Self { cube, estimate, config, grid, agg_name: agg.name(), precision_cache: None })
    }

    pub fn config(&self) -> &EsiConfig {
        &self.config
    }

    pub fn grid(&self) -> Option<&GridSpec> {
        self.grid.as_ref()
    }

    pub fn cube(&self) -> &SampleCube {
        &self.cube
    }

    /// Name of the aggregation behind the current estimate.
    pub fn aggregation_name(&self) -> &str {
        &self.agg_name
    }

    /// Flat estimate, one value per target in flatten order.
    pub fn estimate(&self) -> ArrayView1<'_, f64> {
        self.estimate.view()
    }

    /// The estimate, shaped like the grid when there is one.
    pub fn estimation(&self) -> Result<ArrayD<f64>> {
        self.shape(self.estimate.clone())
    }

    /// The cube, shaped `d₁ × … × m` for gridded results and `N × m` otherwise.
    pub fn esi_samples(&self) -> Result<ArrayD<f64>> {
        self.shape_cube(self.cube.data.clone())
    }

    /// Reshapes a flat per-target vector like the estimate.
    pub fn shape(&self, flat: Array1<f64>) -> Result<ArrayD<f64>> {
        match &self.grid {
            Some(g) => g.reshape(flat),
            None => Ok(flat.into_dyn()),
        }
    }

    pub(crate) fn shape_cube(&self, cube: Array2<f64>) -> Result<ArrayD<f64>> {
        match &self.grid {
            Some(g) => g.reshape_cube(cube),
            None => Ok(cube.into_dyn()),
        }
    }

    /// Replaces the estimate with `agg` applied to the cube.
    pub fn re_estimate(&mut self, agg: &dyn Aggregator) -> Result<Array1<f64>> {
        let estimate = agg.aggregate(self.cube.view(), self.grid.as_ref())?;
        if estimate.len() != self.cube.n_targets() {
            return Err(EsiError::DimensionMismatch { expected: self.cube.n_targets(), got: estimate.len() });
        }
        self.estimate = estimate.clone();
        self.agg_name = agg.name();
        self.precision_cache = None;
        Ok(estimate)
    }

    /// Per-target aggregated loss between the estimate and the samples.
    /// Cached per loss name until the next [`re_estimate`](Self::re_estimate).
    pub fn precision(&mut self, loss: &LossFunction) -> Result<Array1<f64>> {
        if let Some((name, cached)) = &self.precision_cache {
            if name == loss.name() {
                return Ok(cached.clone());
            }
        }
        let p = loss.evaluate(self.estimate.view(), self.cube.view(), self.grid.as_ref())?;
        self.precision_cache = Some((loss.name().to_string(), p.clone()));
        Ok(p)
    }

    /// Unaggregated losses; `loss` must use the identity aggregation.
    pub fn precision_cube(&self, loss: &LossFunction) -> Result<ArrayD<f64>> {
        let cube = loss.evaluate_cube(self.estimate.view(), self.cube.view())?;
        self.shape_cube(cube)
    }
}

/// Samples a forest over `domain` and builds the cube for `targets`.
pub(crate) fn run(
    data: &ConditioningData,
    targets: &LocationSet,
    domain: &Domain,
    config: &EsiConfig,
) -> Result<SampleCube> {
    config.validate()?;
    let forest = Forest::sample(
        config.p_process,
        domain,
        config.alpha,
        config.n_partitions,
        data,
        config.data_cond,
        config.seed,
    )?;
    generate_cube(&forest, data, targets, &config.local)
}

/// ESI at arbitrary target locations.
pub fn esi_nongriddata(data: &ConditioningData, targets: &LocationSet, config: &EsiConfig) -> Result<EstimationResult> {
    if data.is_empty() {
        return Err(EsiError::Empty("conditioning data"));
    }
    if targets.dim() != data.dim() {
        return Err(EsiError::DimensionMismatch { expected: data.dim(), got: targets.dim() });
    }
    let domain = enclosing_domain(data.points(), targets, DEFAULT_PAD_FRACTION)?;
    let cube = run(data, targets, &domain, config)?;
    EstimationResult::from_cube(cube, *config, None)
}

/// ESI on the nodes of a regular grid; results reshape to the grid.
pub fn esi_griddata(data: &ConditioningData, grid: &GridSpec, config: &EsiConfig) -> Result<EstimationResult> {
    if grid.dim() != data.dim() {
        return Err(EsiError::DimensionMismatch { expected: data.dim(), got: grid.dim() });
    }
    let targets = flatten_grid(grid);
    let flat = esi_nongriddata(data, &targets, config)?;
    EstimationResult::from_cube(flat.cube, *config, Some(grid.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{Mean, Median, Percentile, WeightedAverage};
    use crate::partition::Partition;
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};

    fn random_data(n: usize, seed: u64) -> ConditioningData {
        let mut rng = crate::partition::EsiRng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        let vals = Array1::from_iter(rows.iter().map(|r| (3.0 * r[0]).sin() + r[1] * r[1]));
        ConditioningData::new(LocationSet::from_rows(&rows).unwrap(), vals).unwrap()
    }

    fn idw(p: f64) -> LocalInterpolator {
        LocalInterpolator::Idw(IdwParams { exponent: p })
    }

    #[test]
    fn single_cell_flat_idw_is_global_mean() {
        let data = random_data(30, 1);
        let targets = LocationSet::from_rows(&[vec![0.2, 0.3], vec![0.9, 0.1]]).unwrap();
        let cfg = EsiConfig { n_partitions: 1, alpha: 0.0, local: idw(0.0), ..Default::default() };
        let domain = enclosing_domain(data.points(), &targets, DEFAULT_PAD_FRACTION).unwrap();
        let forest = Forest::sample(ProcessKind::Mondrian, &domain, 0.0, 1, &data, false, 0).unwrap();
        // alpha 0 puts the first cut beyond the lifetime with high probability
        if forest.partitions()[0].n_cells() == 1 {
            let cube = generate_cube(&forest, &data, &targets, &cfg.local).unwrap();
            let mean = data.values().mean().unwrap();
            assert!(cube.view().iter().all(|v| (v - mean).abs() < 1e-12));
        }
        let res = esi_nongriddata(&data, &targets, &EsiConfig { alpha: 0.0, ..cfg }).unwrap();
        assert_eq!(res.cube().view().dim(), (2, 1));
    }

    #[test]
    fn empty_voronoi_cell_is_missing() {
        let data = ConditioningData::new(LocationSet::from_rows(&[vec![0.1, 0.1]]).unwrap(), Array1::from(vec![2.0])).unwrap();
        let domain = Domain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let vor = crate::partition::VoronoiPartition::new(domain.clone(), vec![vec![0.0, 0.0], vec![1.0, 1.0]], false).unwrap();
        let forest = Forest::from_partitions(ProcessKind::Voronoi, 0.5, 1.0, false, 0, domain, vec![Partition::Voronoi(vor)]).unwrap();
        let targets = LocationSet::from_rows(&[vec![0.2, 0.2], vec![0.9, 0.8]]).unwrap();
        let cube = generate_cube(&forest, &data, &targets, &idw(2.0)).unwrap();
        assert_eq!(cube.view()[[0, 0]], 2.0);
        assert!(cube.view()[[1, 0]].is_nan());
        assert_eq!(cube.missing(), 1);
    }

    #[test]
    fn kriging_with_voronoi_is_rejected() {
        let data = random_data(10, 2);
        let cfg = EsiConfig {
            p_process: ProcessKind::Voronoi,
            local: LocalInterpolator::Kriging(KrigingParams::default()),
            n_partitions: 2,
            ..Default::default()
        };
        assert!(matches!(esi_nongriddata(&data, data.points(), &cfg), Err(EsiError::Unsupported(_))));
    }

    #[test]
    fn config_validation() {
        assert!(EsiConfig { alpha: 1.0, ..Default::default() }.validate().is_err());
        assert!(EsiConfig { n_partitions: 0, ..Default::default() }.validate().is_err());
        assert!(EsiConfig { agg: AggSelector::Identity, ..Default::default() }.validate().is_err());
        assert!(EsiConfig::default().validate().is_ok());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = EsiConfig {
            local: LocalInterpolator::Kriging(KrigingParams::default()),
            agg: AggSelector::Percentile(75.0),
            ..Default::default()
        };
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<EsiConfig>(&s).unwrap(), cfg);
    }

    #[test]
    fn shapes_and_accessors() {
        let data = random_data(40, 3);
        let one = LocationSet::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let cfg = EsiConfig { n_partitions: 2, ..Default::default() };
        let r = esi_nongriddata(&data, &one, &cfg).unwrap();
        assert_eq!(r.cube().view().dim(), (1, 2));
        assert_eq!(r.esi_samples().unwrap().shape(), &[1, 2]);

        let grid = GridSpec::linspace(&[0.0, 0.0], &[1.0, 1.0], &[4, 6]).unwrap();
        let g = esi_griddata(&data, &grid, &EsiConfig { n_partitions: 3, ..Default::default() }).unwrap();
        assert_eq!(g.esi_samples().unwrap().shape(), &[4, 6, 3]);
        assert_eq!(g.estimation().unwrap().shape(), &[4, 6]);
    }

    #[test]
    fn re_estimate_contracts() {
        let data = random_data(60, 4);
        let grid = GridSpec::linspace(&[0.0, 0.0], &[1.0, 1.0], &[5, 5]).unwrap();
        let mut r = esi_griddata(&data, &grid, &EsiConfig { n_partitions: 20, ..Default::default() }).unwrap();
        let before = r.estimate().to_owned();
        let again = r.re_estimate(&Mean).unwrap();
        assert!(before.iter().zip(again.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));

        let p50 = r.re_estimate(&Percentile::new(50.0).unwrap()).unwrap();
        let med = r.re_estimate(&Median).unwrap();
        assert_eq!(p50, med);
        assert_eq!(r.aggregation_name(), "median");
        assert_eq!(r.estimation().unwrap().into_shape_with_order(25).unwrap(), med);

        let w = WeightedAverage::random(9);
        let e1 = r.re_estimate(&w).unwrap();
        let e2 = r.re_estimate(&w).unwrap();
        assert_ne!(e1, e2);
    }

    #[test]
    fn idw_entries_stay_in_cell_range() {
        let data = random_data(80, 5);
        let targets = LocationSet::from_rows(&(0..50).map(|i| vec![i as f64 / 49.0, 0.5]).collect::<Vec<_>>()).unwrap();
        let domain = enclosing_domain(data.points(), &targets, DEFAULT_PAD_FRACTION).unwrap();
        let forest = Forest::sample(ProcessKind::Mondrian, &domain, 0.7, 8, &data, true, 11).unwrap();
        let cube = generate_cube(&forest, &data, &targets, &idw(2.0)).unwrap();
        for (k, p) in forest.partitions().iter().enumerate() {
            let data_ids = p.cell_ids(data.points()).unwrap();
            for (j, &c) in p.cell_ids(&targets).unwrap().iter().enumerate() {
                let cell_vals: Vec<f64> = (0..data.len()).filter(|&i| data_ids[i] == c).map(|i| data.values()[i]).collect();
                let v = cube.view()[[j, k]];
                if cell_vals.is_empty() {
                    assert!(v.is_nan());
                } else {
                    let lo = cell_vals.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = cell_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn dropping_last_partition_drops_only_its_column() {
        let data = random_data(50, 6);
        let targets = data.points().clone();
        let full = esi_nongriddata(&data, &targets, &EsiConfig { n_partitions: 6, seed: 3, ..Default::default() }).unwrap();
        let short = esi_nongriddata(&data, &targets, &EsiConfig { n_partitions: 5, seed: 3, ..Default::default() }).unwrap();
        let a = full.cube().view();
        let b = short.cube().view();
        for k in 0..5 {
            for j in 0..targets.len() {
                assert_eq!(a[[j, k]].to_bits(), b[[j, k]].to_bits());
            }
        }
    }
}
