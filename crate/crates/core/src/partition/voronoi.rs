//! Voronoi partitions with a Poisson-distributed number of nuclei.

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{EsiError, Result};
use crate::geometry::{ConditioningData, Domain};
use crate::spatial::KdTree;

/// Nearest-nucleus partition of a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoronoiPartition {
    domain: Domain,
    trained: bool,
    nuclei: Vec<Vec<f64>>,
}

impl VoronoiPartition {
    pub fn new(domain: Domain, nuclei: Vec<Vec<f64>>, trained: bool) -> Result<Self> {
        if nuclei.is_empty() {
            return Err(EsiError::Empty("voronoi nuclei"));
        }
        if let Some(bad) = nuclei.iter().find(|c| !domain.contains(c)) {
            return Err(EsiError::OutOfDomain(bad.clone()));
        }
        Ok(Self { domain, trained, nuclei })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn nuclei(&self) -> &[Vec<f64>] {
        &self.nuclei
    }

    /// Number of nuclei `K`.
    pub fn k(&self) -> usize {
        self.nuclei.len()
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Nearest nucleus by Euclidean distance, ties to the lowest index.
    pub fn cell_id(&self, x: &[f64]) -> Result<usize> {
        if !self.domain.contains(x) {
            return Err(EsiError::OutOfDomain(x.to_vec()));
        }
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.nuclei.iter().enumerate() {
            let d: f64 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok(best.0)
    }

    pub(crate) fn index(&self) -> KdTree {
        let d = self.domain.dim();
        let flat: Vec<f64> = self.nuclei.iter().flatten().copied().collect();
        let arr = Array2::from_shape_vec((self.nuclei.len(), d), flat).expect("nuclei shape");
        KdTree::new(arr.view())
    }
}

/// Draws `K ~ Poisson(λ)` (zero when `λ ≤ 0`).
fn poisson_count<R: Rng>(lambda: f64, rng: &mut R) -> usize {
    if !(lambda > 0.0) {
        return 0;
    }
    match Poisson::new(lambda) {
        Ok(p) => p.sample(rng) as usize,
        Err(_) => lambda.round() as usize,
    }
}

/// Samples a Voronoi partition.
///
/// Trained partitions pick `K = clamp(Poisson(λ), 1, N_distinct)` nuclei
/// without replacement among the distinct conditioning locations; untrained
/// ones place `K = max(1, Poisson(λ))` nuclei uniformly in the domain.
pub fn sample_voronoi<R: Rng>(
    domain: &Domain,
    lambda: f64,
    data: Option<&ConditioningData>,
    data_cond: bool,
    rng: &mut R,
) -> Result<VoronoiPartition> {
    let draw = poisson_count(lambda, rng);
    if data_cond {
        let data = data.ok_or_else(|| {
            EsiError::InvalidInput("data-conditioned voronoi sampling needs conditioning data".into())
        })?;
        if data.dim() != domain.dim() {
            return Err(EsiError::DimensionMismatch { expected: domain.dim(), got: data.dim() });
        }
        let candidates = distinct_rows(data);
        let k = draw.clamp(1, candidates.len());
        let chosen = index::sample(rng, candidates.len(), k);
        let nuclei = chosen.iter().map(|i| candidates[i].clone()).collect();
        VoronoiPartition::new(domain.clone(), nuclei, true)
    } else {
        let k = draw.max(1);
        let nuclei = (0..k)
            .map(|_| {
                domain
                    .lower()
                    .iter()
                    .zip(domain.upper())
                    .map(|(&a, &b)| if b > a { rng.random_range(a..=b) } else { a })
                    .collect()
            })
            .collect();
        VoronoiPartition::new(domain.clone(), nuclei, false)
    }
}

/// Distinct point locations in first-occurrence order.
fn distinct_rows(data: &ConditioningData) -> Vec<Vec<f64>> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for row in data.points().coords().rows() {
        let key: Vec<u64> = row.iter().map(|v| (v + 0.0).to_bits()).collect();
        if seen.insert(key) {
            out.push(row.to_vec());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LocationSet;
    use ndarray::Array1;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, seed: u64) -> ConditioningData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        ConditioningData::new(LocationSet::from_rows(&rows).unwrap(), Array1::zeros(n)).unwrap()
    }

    fn unit() -> Domain {
        Domain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn zero_lambda_gives_one_cell() {
        let d = data(10, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_voronoi(&unit(), 0.0, Some(&d), true, &mut rng).unwrap().k(), 1);
        assert_eq!(sample_voronoi(&unit(), 0.0, None, false, &mut rng).unwrap().k(), 1);
    }

    #[test]
    fn huge_lambda_clamps_to_sample_count() {
        let d = data(25, 1);
        let v = sample_voronoi(&unit(), 1e6, Some(&d), true, &mut ChaCha8Rng::seed_from_u64(2))
            .unwrap();
        assert_eq!(v.k(), 25);
        // every data point is its own nucleus, so it maps to itself
        for row in d.points().coords().rows() {
            let cell = v.cell_id(row.as_slice().unwrap()).unwrap();
            assert_eq!(v.nuclei()[cell], row.to_vec());
        }
    }

    #[test]
    fn trained_requires_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_voronoi(&unit(), 3.0, None, true, &mut rng).is_err());
    }

    #[test]
    fn duplicate_locations_yield_distinct_nuclei() {
        let rows = vec![vec![0.1, 0.1], vec![0.1, 0.1], vec![0.9, 0.9]];
        let d = ConditioningData::new(LocationSet::from_rows(&rows).unwrap(), Array1::zeros(3))
            .unwrap();
        let v = sample_voronoi(&unit(), 1e3, Some(&d), true, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        assert_eq!(v.k(), 2);
    }

    #[test]
    fn equidistant_goes_to_first_nucleus() {
        let v = VoronoiPartition::new(unit(), vec![vec![0.25, 0.5], vec![0.75, 0.5]], false)
            .unwrap();
        assert_eq!(v.cell_id(&[0.5, 0.1]).unwrap(), 0);
        let v = VoronoiPartition::new(unit(), vec![vec![0.75, 0.5], vec![0.25, 0.5]], false)
            .unwrap();
        assert_eq!(v.cell_id(&[0.5, 0.1]).unwrap(), 0);
    }
}
