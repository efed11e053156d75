//! Cross-validated hyperparameter grid search.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::AggSelector;
use crate::baseline::{idw_nongriddata, GlobalIdwParams};
use crate::engine::{assign_cells, fill_cube, EsiConfig, LocalInterpolator};
use crate::error::{EsiError, Result};
use crate::geometry::{enclosing_domain, ConditioningData, LocationSet, DEFAULT_PAD_FRACTION};
use crate::local_interp::{IdwParams, KrigingParams, VariogramModel};
use crate::partition::{mix_seed, splitmix64, EsiRng, Forest, ProcessKind};

/// Share of missing held-out predictions above which a scenario is discarded.
pub const MAX_MISSING_FRACTION: f64 = 0.1;

const FOLD_STREAM: u64 = 0x5eed_f01d;

/// Error measure over held-out points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Mse,
    Mae,
}

impl Metric {
    fn point(self, predicted: f64, truth: f64) -> f64 {
        match self {
            Metric::Mse => (predicted - truth) * (predicted - truth),
            Metric::Mae => (predicted - truth).abs(),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = EsiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Metric::Mse),
            "mae" => Ok(Metric::Mae),
            other => Err(EsiError::InvalidInput(format!("unknown metric `{other}`"))),
        }
    }
}

/// Candidate values of the local interpolator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase", deny_unknown_fields)]
pub enum LocalGrid {
    Idw {
        exponent: Vec<f64>,
    },
    Kriging {
        model: Vec<VariogramModel>,
        nugget: Vec<f64>,
        range: Vec<f64>,
        #[serde(default = "default_sill")]
        sill: Vec<f64>,
    },
}

fn default_sill() -> Vec<f64> {
    vec![1.0]
}

impl LocalGrid {
    fn expand(&self) -> Vec<LocalInterpolator> {
        match self {
            LocalGrid::Idw { exponent } => {
                exponent.iter().map(|&e| LocalInterpolator::Idw(IdwParams { exponent: e })).collect()
            }
            LocalGrid::Kriging { model, nugget, range, sill } => {
                let mut out = Vec::new();
                for &model in model {
                    for &nugget in nugget {
                        for &range in range {
                            for &sill in sill {
                                out.push(LocalInterpolator::Kriging(KrigingParams { model, nugget, range, sill }));
                            }
                        }
                    }
                }
                out
            }
        }
    }

    fn list_sizes(&self) -> Vec<(&'static str, usize)> {
        match self {
            LocalGrid::Idw { exponent } => vec![("exponent", exponent.len())],
            LocalGrid::Kriging { model, nugget, range, sill } => vec![
                ("model", model.len()),
                ("nugget", nugget.len()),
                ("range", range.len()),
                ("sill", sill.len()),
            ],
        }
    }
}

fn default_partitions() -> Vec<usize> {
    vec![EsiConfig::default().n_partitions]
}

fn default_alpha() -> Vec<f64> {
    vec![EsiConfig::default().alpha]
}

fn default_data_cond() -> Vec<bool> {
    vec![true]
}

fn default_agg() -> Vec<AggSelector> {
    vec![AggSelector::Mean]
}

/// Candidate lists for an ESI search. Unset lists take the single default value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchGrid {
    pub p_process: ProcessKind,
    #[serde(default = "default_partitions")]
    pub n_partitions: Vec<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: Vec<f64>,
    #[serde(default = "default_data_cond")]
    pub data_cond: Vec<bool>,
    pub local: LocalGrid,
    #[serde(default = "default_agg")]
    pub agg: Vec<AggSelector>,
}

impl SearchGrid {
    /// A grid with default lists around the given local-parameter grid.
    pub fn new(p_process: ProcessKind, local: LocalGrid) -> Self {
        Self {
            p_process,
            n_partitions: default_partitions(),
            alpha: default_alpha(),
            data_cond: default_data_cond(),
            local,
            agg: default_agg(),
        }
    }

    /// Number of scenarios in the cartesian product.
    pub fn len(&self) -> usize {
        self.n_partitions.len()
            * self.alpha.len()
            * self.data_cond.len()
            * self.agg.len()
            * self.local.list_sizes().iter().map(|(_, n)| n).product::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All configurations, `agg` varying fastest, then the local parameters,
    /// `data_cond`, `alpha` and `n_partitions`.
    pub fn expand(&self, seed: u64) -> Result<Vec<EsiConfig>> {
        let mut sizes = vec![
            ("n_partitions", self.n_partitions.len()),
            ("alpha", self.alpha.len()),
            ("data_cond", self.data_cond.len()),
            ("agg", self.agg.len()),
        ];
        sizes.extend(self.local.list_sizes());
        if let Some((name, _)) = sizes.iter().find(|(_, n)| *n == 0) {
            return Err(EsiError::InvalidInput(format!("search list `{name}` is empty")));
        }
        let locals = self.local.expand();
        let mut out = Vec::with_capacity(self.len());
        for &n_partitions in &self.n_partitions {
            for &alpha in &self.alpha {
                for &data_cond in &self.data_cond {
                    for &local in &locals {
                        for &agg in &self.agg {
                            let cfg = EsiConfig { p_process: self.p_process, n_partitions, alpha, data_cond, local, agg, seed };
                            cfg.validate()?;
                            out.push(cfg);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Candidate lists for a baseline IDW search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdwSearchGrid {
    pub radius: Vec<f64>,
    pub exponent: Vec<f64>,
}

impl IdwSearchGrid {
    pub fn len(&self) -> usize {
        self.radius.len() * self.exponent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All parameter pairs, `exponent` varying fastest.
    pub fn expand(&self) -> Result<Vec<GlobalIdwParams>> {
        if self.is_empty() {
            return Err(EsiError::InvalidInput("search lists must be nonempty".into()));
        }
        let mut out = Vec::with_capacity(self.len());
        for &radius in &self.radius {
            for &exponent in &self.exponent {
                let p = GlobalIdwParams { radius, exponent };
                p.validate()?;
                out.push(p);
            }
        }
        Ok(out)
    }
}

/// Fold count, error metric and master seed of a search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvOptions {
    /// Number of folds; `-1` requests leave-one-out.
    pub k: i64,
    pub metric: Metric,
    pub seed: u64,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self { k: 10, metric: Metric::Mse, seed: 0 }
    }
}

/// Held-out index sets of a seeded k-fold split of `n` samples. `k = -1`
/// or `k = n` gives leave-one-out.
pub fn kfold(n: usize, k: i64, seed: u64) -> Result<Vec<Vec<usize>>> {
    let folds = match k {
        -1 => n,
        k if k >= 2 && (k as u64) <= n as u64 => k as usize,
        _ => return Err(EsiError::InvalidInput(format!("fold count {k} not in 2..={n} or -1"))),
    };
    if n < 2 {
        return Err(EsiError::InvalidInput("cross validation needs at least two samples".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut EsiRng::seed_from_u64(mix_seed(seed, FOLD_STREAM)));
    let (base, extra) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        out.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

fn complement(n: usize, held_out: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in held_out {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

#[derive(Debug, Clone, Copy, Default)]
struct FoldStats {
    error_sum: f64,
    predicted: usize,
    missing: usize,
}

impl FoldStats {
    fn score(metric: Metric, predictions: &Array1<f64>, truth: &[f64]) -> Self {
        let mut s = FoldStats::default();
        for (&p, &t) in predictions.iter().zip(truth) {
            if p.is_nan() {
                s.missing += 1;
            } else {
                s.error_sum += metric.point(p, t);
                s.predicted += 1;
            }
        }
        s
    }
}

/// Mean of per-fold errors, or `+∞` when too many predictions are missing.
fn cv_error(folds: &[FoldStats]) -> f64 {
    let missing: usize = folds.iter().map(|f| f.missing).sum();
    let total: usize = missing + folds.iter().map(|f| f.predicted).sum::<usize>();
    if total == 0 || missing as f64 > MAX_MISSING_FRACTION * total as f64 {
        return f64::INFINITY;
    }
    let scored: Vec<f64> = folds
        .iter()
        .filter(|f| f.predicted > 0)
        .map(|f| f.error_sum / f.predicted as f64)
        .collect();
    if scored.is_empty() {
        f64::INFINITY
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord<P> {
    pub params: P,
    pub cv_error: f64,
    pub result_data_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult<P> {
    pub records: Vec<SearchRecord<P>>,
    /// Number of folds actually used.
    pub k: usize,
    pub metric: Metric,
}

/// Histogram of the finite cv errors plus the per-scenario error series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvErrorReport {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Scenarios with an infinite error, left out of the histogram.
    pub non_finite: usize,
    pub series: Vec<(usize, f64)>,
}

/// Flat tabular view of a parameter set.
pub trait TableRow {
    fn headers() -> Vec<&'static str>;
    fn cells(&self) -> Vec<String>;
}

impl TableRow for EsiConfig {
    fn headers() -> Vec<&'static str> {
        vec![
            "p_process", "n_partitions", "alpha", "data_cond", "local", "exponent", "model", "nugget", "range",
            "sill", "agg",
        ]
    }

    fn cells(&self) -> Vec<String> {
        let mut row = vec![
            self.p_process.to_string(),
            self.n_partitions.to_string(),
            self.alpha.to_string(),
            self.data_cond.to_string(),
            self.local.name().to_string(),
        ];
        match self.local {
            LocalInterpolator::Idw(p) => {
                row.extend([p.exponent.to_string(), String::new(), String::new(), String::new(), String::new()])
            }
            LocalInterpolator::Kriging(p) => row.extend([
                String::new(),
                p.model.to_string(),
                p.nugget.to_string(),
                p.range.to_string(),
                p.sill.to_string(),
            ]),
        }
        row.push(self.agg.to_string());
        row
    }
}

impl TableRow for GlobalIdwParams {
    fn headers() -> Vec<&'static str> {
        vec!["radius", "exponent"]
    }

    fn cells(&self) -> Vec<String> {
        vec![self.radius.to_string(), self.exponent.to_string()]
    }
}

impl<P: Clone> SearchResult<P> {
    /// Record with the smallest cv error; ties go to the lowest index.
    pub fn best_record(&self) -> Result<&SearchRecord<P>> {
        self.records
            .iter()
            .reduce(|best, r| if r.cv_error < best.cv_error { r } else { best })
            .ok_or(EsiError::Empty("search records"))
    }

    /// Parameters of the best record, ready to feed an estimation call.
    pub fn best_result(&self) -> Result<P> {
        self.best_record().map(|r| r.params.clone())
    }

    pub fn cv_error_report(&self) -> Result<CvErrorReport> {
        if self.records.is_empty() {
            return Err(EsiError::Empty("search records"));
        }
        let series: Vec<(usize, f64)> = self.records.iter().map(|r| (r.result_data_index, r.cv_error)).collect();
        let finite: Vec<f64> = series.iter().map(|s| s.1).filter(|e| e.is_finite()).collect();
        let non_finite = series.len() - finite.len();
        if finite.is_empty() {
            return Ok(CvErrorReport { bin_edges: Vec::new(), counts: Vec::new(), non_finite, series });
        }
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bins = ((finite.len() as f64).sqrt().ceil() as usize).clamp(1, 50);
        let bins = if hi > lo { bins } else { 1 };
        let width = (hi - lo) / bins as f64;
        let bin_edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + i as f64 * width }).collect();
        let mut counts = vec![0; bins];
        for e in finite {
            let b = if width > 0.0 { (((e - lo) / width) as usize).min(bins - 1) } else { 0 };
            counts[b] += 1;
        }
        Ok(CvErrorReport { bin_edges, counts, non_finite, series })
    }
}

impl<P: Clone + TableRow> SearchResult<P> {
    /// CSV with the scenario index, parameters and cv error.
    pub fn write_table<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["result_data_index"];
        header.extend(P::headers());
        header.push("cv_error");
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.result_data_index.to_string()];
            row.extend(r.params.cells());
            row.push(r.cv_error.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn forest_key(cfg: &EsiConfig) -> (usize, u64, bool) {
    (cfg.n_partitions, cfg.alpha.to_bits(), cfg.data_cond)
}

fn forest_seed(master: u64, key: (usize, u64, bool), fold: usize) -> u64 {
    let stream = splitmix64(key.0 as u64 ^ splitmix64(key.1 ^ splitmix64(key.2 as u64)));
    mix_seed(mix_seed(master, stream), fold as u64)
}

/// Cross-validates every configuration of `grid`.
///
/// Forests depend only on `(n_partitions, alpha, data_cond)`, the fold and
/// the master seed, so scenarios that differ in the local parameters or the
/// aggregation are scored on identical partitions. The domain encloses the
/// data and `targets`.
pub fn esi_hparams_search(
    data: &ConditioningData,
    targets: &LocationSet,
    grid: &SearchGrid,
    opts: &CvOptions,
) -> Result<SearchResult<EsiConfig>> {
    let configs = grid.expand(opts.seed)?;
    if grid.agg.contains(&AggSelector::Bilateral) {
        return Err(EsiError::Unsupported("bilateral aggregation cannot score scattered held-out points".into()));
    }
    if targets.dim() != data.dim() {
        return Err(EsiError::DimensionMismatch { expected: data.dim(), got: targets.dim() });
    }
    let folds = kfold(data.len(), opts.k, opts.seed)?;
    let domain = enclosing_domain(data.points(), targets, DEFAULT_PAD_FRACTION)?;
    let aggs = configs.iter().map(EsiConfig::aggregator).collect::<Result<Vec<_>>>()?;

    let mut groups: BTreeMap<(usize, u64, bool), Vec<usize>> = BTreeMap::new();
    for (i, cfg) in configs.iter().enumerate() {
        groups.entry(forest_key(cfg)).or_default().push(i);
    }
    let tasks: Vec<(&(usize, u64, bool), &Vec<usize>, usize)> = groups
        .iter()
        .flat_map(|(key, members)| (0..folds.len()).map(move |f| (key, members, f)))
        .collect();

    let scored = tasks
        .par_iter()
        .map(|&(key, members, f)| -> Result<Vec<(usize, usize, FoldStats)>> {
            let held = &folds[f];
            let train = data.select(&complement(data.len(), held));
            let test = data.points().select(held);
            let truth: Vec<f64> = held.iter().map(|&i| data.values()[i]).collect();
            let lead = &configs[members[0]];
            let forest = Forest::sample(
                lead.p_process,
                &domain,
                lead.alpha,
                lead.n_partitions,
                &train,
                lead.data_cond,
                forest_seed(opts.seed, *key, f),
            )?;
            let assignment = assign_cells(&forest, &train, &test)?;
            let mut out = Vec::with_capacity(members.len());
            let mut done: Vec<LocalInterpolator> = Vec::new();
            for &i in members {
                let local = configs[i].local;
                if done.contains(&local) {
                    continue;
                }
                done.push(local);
                let cube = fill_cube(&assignment, &train, &test, &local)?;
                for &j in members.iter().filter(|&&j| configs[j].local == local) {
                    let predictions = aggs[j].aggregate(cube.view(), None)?;
                    out.push((j, f, FoldStats::score(opts.metric, &predictions, &truth)));
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut per_scenario = vec![vec![FoldStats::default(); folds.len()]; configs.len()];
    for (j, f, s) in scored.into_iter().flatten() {
        per_scenario[j][f] = s;
    }
    let records = configs
        .into_iter()
        .zip(per_scenario)
        .enumerate()
        .map(|(i, (params, stats))| SearchRecord { params, cv_error: cv_error(&stats), result_data_index: i })
        .collect();
    Ok(SearchResult { records, k: folds.len(), metric: opts.metric })
}

/// Cross-validates the baseline IDW over every `(radius, exponent)` pair.
pub fn idw_hparams_search(
    data: &ConditioningData,
    grid: &IdwSearchGrid,
    opts: &CvOptions,
) -> Result<SearchResult<GlobalIdwParams>> {
    let params = grid.expand()?;
    let folds = kfold(data.len(), opts.k, opts.seed)?;
    let splits: Vec<(ConditioningData, LocationSet, Vec<f64>)> = folds
        .iter()
        .map(|held| {
            let train = data.select(&complement(data.len(), held));
            let test = data.points().select(held);
            let truth = held.iter().map(|&i| data.values()[i]).collect();
            (train, test, truth)
        })
        .collect();
    let records = params
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let stats = splits
                .iter()
                .map(|(train, test, truth)| {
                    let r = idw_nongriddata(train, test, p)?;
                    Ok(FoldStats::score(opts.metric, r.estimate(), truth))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SearchRecord { params: *p, cv_error: cv_error(&stats), result_data_index: i })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SearchResult { records, k: folds.len(), metric: opts.metric })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn data(n: usize, seed: u64) -> ConditioningData {
        let mut rng = EsiRng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        let vals = Array1::from_iter(rows.iter().map(|r| (4.0 * r[0]).sin() * r[1]));
        ConditioningData::new(LocationSet::from_rows(&rows).unwrap(), vals).unwrap()
    }

    fn kriging_grid() -> SearchGrid {
        SearchGrid {
            n_partitions: vec![4],
            alpha: vec![0.5],
            ..SearchGrid::new(
                ProcessKind::Mondrian,
                LocalGrid::Kriging {
                    model: vec![VariogramModel::Spherical, VariogramModel::Exponential],
                    nugget: vec![0.0, 0.5],
                    range: vec![0.5],
                    sill: vec![1.0],
                },
            )
        }
    }

    #[test]
    fn folds_partition_the_indices() {
        for (n, k) in [(25, -1), (25, 25), (10, 3), (100, 10), (7, 2)] {
            let folds = kfold(n, k, 9).unwrap();
            let expected = if k == -1 { n } else { k as usize };
            assert_eq!(folds.len(), expected);
            let mut all: Vec<usize> = folds.concat();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
        assert!(kfold(10, 1, 0).is_err());
        assert!(kfold(10, 11, 0).is_err());
        assert!(kfold(10, -2, 0).is_err());
    }

    #[test]
    fn product_counts() {
        assert_eq!(kriging_grid().expand(0).unwrap().len(), 4);
        let voronoi = SearchGrid {
            n_partitions: vec![30, 50, 100],
            alpha: vec![0.95, 0.97, 0.98, 0.985],
            data_cond: vec![true, false],
            agg: vec![AggSelector::Mean, AggSelector::Median, AggSelector::Percentile(25.0), AggSelector::Percentile(75.0)],
            ..SearchGrid::new(ProcessKind::Voronoi, LocalGrid::Idw { exponent: vec![0.001, 0.01, 0.1, 1.0, 2.0] })
        };
        assert_eq!(voronoi.len(), 480);
        assert_eq!(voronoi.expand(0).unwrap().len(), 480);
        let idw = IdwSearchGrid { radius: vec![0.07, 0.08], exponent: vec![0.001, 0.01, 0.1, 1.0, 2.0] };
        assert_eq!(idw.expand().unwrap().len(), 10);
    }

    #[test]
    fn expansion_rejects_bad_grids() {
        let mut g = kriging_grid();
        g.p_process = ProcessKind::Voronoi;
        assert!(matches!(g.expand(0), Err(EsiError::Unsupported(_))));
        let mut g = kriging_grid();
        g.alpha = vec![];
        assert!(g.expand(0).is_err());
        let mut g = kriging_grid();
        g.alpha = vec![1.5];
        assert!(g.expand(0).is_err());
    }

    #[test]
    fn kriging_search_records_and_best() {
        let d = data(40, 1);
        let r = esi_hparams_search(&d, d.points(), &kriging_grid(), &CvOptions { k: 5, ..Default::default() }).unwrap();
        assert_eq!(r.records.len(), 4);
        assert_eq!(r.k, 5);
        let best = r.best_record().unwrap();
        assert!(r.records.iter().all(|x| x.cv_error >= best.cv_error));
        let report = r.cv_error_report().unwrap();
        assert_eq!(report.series.len(), 4);
        assert_eq!(report.counts.iter().sum::<usize>() + report.non_finite, 4);
        let min = report.series.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        assert_eq!(min, best.cv_error);
    }

    #[test]
    fn leave_one_out_runs() {
        let d = data(25, 2);
        let g = IdwSearchGrid { radius: vec![0.5], exponent: vec![1.0, 2.0] };
        let r = idw_hparams_search(&d, &g, &CvOptions { k: -1, ..Default::default() }).unwrap();
        assert_eq!(r.k, 25);
        assert_eq!(r.records.len(), 2);
    }

    #[test]
    fn search_is_deterministic() {
        let d = data(40, 3);
        let opts = CvOptions { k: 4, metric: Metric::Mae, seed: 17 };
        let a = esi_hparams_search(&d, d.points(), &kriging_grid(), &opts).unwrap();
        let b = esi_hparams_search(&d, d.points(), &kriging_grid(), &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_radius_is_discarded() {
        let d = data(60, 4);
        let g = IdwSearchGrid { radius: vec![1e-6, 0.5], exponent: vec![2.0] };
        let r = idw_hparams_search(&d, &g, &CvOptions::default()).unwrap();
        assert!(r.records[0].cv_error.is_infinite());
        assert_eq!(r.best_result().unwrap().radius, 0.5);
        let report = r.cv_error_report().unwrap();
        assert_eq!(report.non_finite, 1);
    }

    #[test]
    fn best_ties_go_to_lowest_index() {
        let rec = |i, e| SearchRecord { params: i, cv_error: e, result_data_index: i };
        let r = SearchResult { records: vec![rec(0, 2.0), rec(1, 1.0), rec(2, 1.0)], k: 2, metric: Metric::Mse };
        assert_eq!(r.best_result().unwrap(), 1);
        let empty: SearchResult<usize> = SearchResult { records: vec![], k: 2, metric: Metric::Mse };
        assert!(empty.best_result().is_err());
    }

    #[test]
    fn table_has_one_row_per_record() {
        let d = data(30, 5);
        let r = esi_hparams_search(&d, d.points(), &kriging_grid(), &CvOptions { k: 3, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        r.write_table(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("result_data_index,p_process"));
    }
}
