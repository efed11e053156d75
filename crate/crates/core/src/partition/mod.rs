//! Random partitions of the domain and forests of them.

mod mondrian;
mod voronoi;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use mondrian::{sample_mondrian, sample_trained_mondrian, MondrianNode, MondrianTree};
pub use voronoi::{sample_voronoi, VoronoiPartition};

use crate::error::{EsiError, Result};
use crate::geometry::{ConditioningData, Domain, LocationSet};

/// Generator used for every random draw in the crate.
pub type EsiRng = ChaCha8Rng;

/// Current version of the serialized forest document.
pub const FOREST_FORMAT_VERSION: u32 = 1;

/// Stochastic partition process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessKind {
    Mondrian,
    Voronoi,
}

impl fmt::Display for ProcessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProcessKind::Mondrian => "mondrian",
            ProcessKind::Voronoi => "voronoi",
        })
    }
}

impl FromStr for ProcessKind {
    type Err = EsiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mondrian" => Ok(ProcessKind::Mondrian),
            "voronoi" => Ok(ProcessKind::Voronoi),
            other => Err(EsiError::InvalidInput(format!("unknown partition process `{other}`"))),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(EsiError::InvalidInput(format!("alpha {alpha} outside [0, 1)")))
    }
}

/// Mondrian lifetime `λ(α) = 1 / (μ(Θ)(1 − α))`.
pub fn lambda_mondrian(alpha: f64, domain: &Domain) -> Result<f64> {
    check_alpha(alpha)?;
    let mu = domain.measure();
    if !(mu > 0.0) {
        return Err(EsiError::DegenerateDomain);
    }
    Ok(1.0 / (mu * (1.0 - alpha)))
}

/// Voronoi Poisson mean `λ(α) = N_s · α / 2`.
pub fn lambda_voronoi(alpha: f64, n_samples: usize) -> Result<f64> {
    check_alpha(alpha)?;
    if n_samples == 0 {
        return Err(EsiError::Empty("conditioning data"));
    }
    Ok(0.5 * n_samples as f64 * alpha)
}

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of stream `stream` from `master`.
pub fn mix_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream))
}

/// A single sampled partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Partition {
    Mondrian(MondrianTree),
    Voronoi(VoronoiPartition),
}

impl Partition {
    pub fn domain(&self) -> &Domain {
        match self {
            Partition::Mondrian(t) => t.domain(),
            Partition::Voronoi(v) => v.domain(),
        }
    }

    pub fn n_cells(&self) -> usize {
        match self {
            Partition::Mondrian(t) => t.n_leaves(),
            Partition::Voronoi(v) => v.k(),
        }
    }

    pub fn cell_id(&self, x: &[f64]) -> Result<usize> {
        match self {
            Partition::Mondrian(t) => t.cell_id(x),
            Partition::Voronoi(v) => v.cell_id(x),
        }
    }

    /// Cell of every row of `locations`.
    pub fn cell_ids(&self, locations: &LocationSet) -> Result<Vec<usize>> {
        let domain = self.domain();
        if locations.dim() != domain.dim() {
            return Err(EsiError::DimensionMismatch { expected: domain.dim(), got: locations.dim() });
        }
        let rows: Vec<Vec<f64>> = locations.coords().rows().into_iter().map(|r| r.to_vec()).collect();
        if let Some(bad) = rows.iter().find(|x| !domain.contains(x)) {
            return Err(EsiError::OutOfDomain(bad.clone()));
        }
        Ok(match self {
            Partition::Mondrian(t) => rows.iter().map(|x| t.descend(x)).collect(),
            Partition::Voronoi(v) => {
                let index = v.index();
                rows.iter().map(|x| index.nearest(x).map_or(0, |(i, _)| i)).collect()
            }
        })
    }

    /// Members of each cell, indexed by cell id (empty cells included).
    pub(crate) fn cell_members(&self, locations: &LocationSet) -> Result<Vec<Vec<usize>>> {
        let ids = self.cell_ids(locations)?;
        let mut groups = vec![Vec::new(); self.n_cells()];
        for (i, c) in ids.into_iter().enumerate() {
            groups[c].push(i);
        }
        Ok(groups)
    }
}

/// Indices of `points` grouped by the cell they fall into; empty cells are omitted.
pub fn group_by_cell(partition: &Partition, points: &LocationSet) -> Result<BTreeMap<usize, Vec<usize>>> {
    Ok(partition
        .cell_members(points)?
        .into_iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .collect())
}

/// Samples one partition of `kind` from its own seeded stream.
pub fn sample_partition(
    kind: ProcessKind,
    domain: &Domain,
    lambda: f64,
    data: Option<&ConditioningData>,
    data_cond: bool,
    seed: u64,
) -> Result<Partition> {
    let mut rng = EsiRng::seed_from_u64(seed);
    match kind {
        ProcessKind::Mondrian => {
            if data_cond {
                let data = data.ok_or_else(|| {
                    EsiError::InvalidInput("trained mondrian sampling needs conditioning data".into())
                })?;
                sample_trained_mondrian(domain, lambda, data.points(), &mut rng).map(Partition::Mondrian)
            } else {
                Ok(Partition::Mondrian(sample_mondrian(domain, lambda, &mut rng)))
            }
        }
        ProcessKind::Voronoi => {
            sample_voronoi(domain, lambda, data, data_cond, &mut rng).map(Partition::Voronoi)
        }
    }
}

/// `m` independent partitions of a common domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    version: u32,
    kind: ProcessKind,
    alpha: f64,
    lambda: f64,
    trained: bool,
    seed: u64,
    domain: Domain,
    partitions: Vec<Partition>,
}

impl Forest {
    /// Samples `m` partitions; partition `k` uses seed `mix_seed(seed, k)`.
    pub fn sample(
        kind: ProcessKind,
        domain: &Domain,
        alpha: f64,
        m: usize,
        data: &ConditioningData,
        data_cond: bool,
        seed: u64,
    ) -> Result<Self> {
        if m == 0 {
            return Err(EsiError::InvalidInput("a forest needs at least one partition".into()));
        }
        if data.dim() != domain.dim() {
            return Err(EsiError::DimensionMismatch { expected: domain.dim(), got: data.dim() });
        }
        let lambda = match kind {
            ProcessKind::Mondrian => lambda_mondrian(alpha, domain)?,
            ProcessKind::Voronoi => lambda_voronoi(alpha, data.len())?,
        };
        let partitions = (0..m as u64)
            .into_par_iter()
            .map(|k| sample_partition(kind, domain, lambda, Some(data), data_cond, mix_seed(seed, k)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            version: FOREST_FORMAT_VERSION,
            kind,
            alpha,
            lambda,
            trained: data_cond,
            seed,
            domain: domain.clone(),
            partitions,
        })
    }

    /// Assembles a forest from already built partitions of `domain`.
    pub fn from_partitions(
        kind: ProcessKind,
        alpha: f64,
        lambda: f64,
        trained: bool,
        seed: u64,
        domain: Domain,
        partitions: Vec<Partition>,
    ) -> Result<Self> {
        if partitions.is_empty() {
            return Err(EsiError::Empty("forest partitions"));
        }
        for p in &partitions {
            let same_kind = matches!(
                (kind, p),
                (ProcessKind::Mondrian, Partition::Mondrian(_)) | (ProcessKind::Voronoi, Partition::Voronoi(_))
            );
            if !same_kind {
                return Err(EsiError::InvalidInput(format!("forest of kind {kind} holds a foreign partition")));
            }
            if p.domain() != &domain {
                return Err(EsiError::InvalidInput("partition domain differs from forest domain".into()));
            }
        }
        Ok(Self { version: FOREST_FORMAT_VERSION, kind, alpha, lambda, trained, seed, domain, partitions })
    }

    pub fn kind(&self) -> ProcessKind {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    pub fn len(&self) -> usize {
        self.partitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partitions.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let forest: Forest = serde_json::from_str(s)?;
        if forest.version != FOREST_FORMAT_VERSION {
            return Err(EsiError::Format(format!(
                "unsupported forest format version {}",
                forest.version
            )));
        }
        Ok(forest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand::Rng;

    fn unit() -> Domain {
        Domain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
    }

    fn data(n: usize) -> ConditioningData {
        let mut rng = EsiRng::seed_from_u64(n as u64);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        ConditioningData::new(LocationSet::from_rows(&rows).unwrap(), Array1::zeros(n)).unwrap()
    }

    #[test]
    fn lambda_mondrian_examples() {
        assert!((lambda_mondrian(0.8, &unit()).unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(lambda_mondrian(0.0, &unit()).unwrap(), 0.5);
        assert!((lambda_mondrian(0.99, &unit()).unwrap() - 50.0).abs() < 1e-9);
        let flat = Domain::new(vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert!(matches!(lambda_mondrian(0.5, &flat), Err(EsiError::DegenerateDomain)));
        assert!(lambda_mondrian(1.0, &unit()).is_err());
        assert!(lambda_mondrian(-0.1, &unit()).is_err());
    }

    #[test]
    fn lambda_mondrian_increasing() {
        let mut prev = 0.0;
        for i in 0..100 {
            let l = lambda_mondrian(i as f64 / 100.0, &unit()).unwrap();
            assert!(l > prev);
            prev = l;
        }
    }

    #[test]
    fn lambda_voronoi_examples() {
        assert_eq!(lambda_voronoi(0.5, 400).unwrap(), 100.0);
        assert!((lambda_voronoi(0.985, 1000).unwrap() - 492.5).abs() < 1e-9);
        assert_eq!(lambda_voronoi(0.0, 10).unwrap(), 0.0);
    }

    #[test]
    fn forest_round_trips_through_json() {
        let d = data(30);
        for kind in [ProcessKind::Mondrian, ProcessKind::Voronoi] {
            let f = Forest::sample(kind, &unit(), 0.6, 4, &d, true, 77).unwrap();
            let text = f.to_json().unwrap();
            assert_eq!(Forest::from_json(&text).unwrap(), f);
        }
    }

    #[test]
    fn forest_prefix_shares_partitions() {
        let d = data(30);
        let big = Forest::sample(ProcessKind::Mondrian, &unit(), 0.7, 6, &d, false, 3).unwrap();
        let small = Forest::sample(ProcessKind::Mondrian, &unit(), 0.7, 5, &d, false, 3).unwrap();
        assert_eq!(&big.partitions()[..5], small.partitions());
    }

    #[test]
    fn single_leaf_groups_everything() {
        let d = data(5);
        let tree = Partition::Mondrian(sample_mondrian(&unit(), 0.0, &mut EsiRng::seed_from_u64(0)));
        let g = group_by_cell(&tree, d.points()).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[&0], vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn batch_lookup_matches_single_lookup() {
        let d = data(60);
        let probe = data(200);
        for kind in [ProcessKind::Mondrian, ProcessKind::Voronoi] {
            for trained in [true, false] {
                let f = Forest::sample(kind, &unit(), 0.8, 5, &d, trained, 19).unwrap();
                for p in f.partitions() {
                    let batch = p.cell_ids(probe.points()).unwrap();
                    for (i, row) in probe.points().coords().rows().into_iter().enumerate() {
                        assert_eq!(batch[i], p.cell_id(row.as_slice().unwrap()).unwrap());
                    }
                }
            }
        }
    }

    #[test]
    fn mix_seed_spreads_streams() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|k| mix_seed(42, k)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(mix_seed(1, 0), mix_seed(2, 0));
    }
}
