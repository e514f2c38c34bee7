use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{DataError, LabeledDataset};
use crate::config::{fork_rng, Hierarchy, PartitionMode, PartitionSpec, Purpose, StreamLabel};

/// How a partition was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub mode: PartitionMode,
    pub alpha: Option<f64>,
    pub rng_seed: Option<u64>,
    /// Dirichlet draws used (1 unless a degenerate draw was retried).
    pub attempts: usize,
    /// Samples left out so that every device of an edge holds the same
    /// number of samples.
    pub dropped: Vec<usize>,
}

/// Device shards (indices into a parent dataset), grouped by edge.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedData {
    shards: Vec<Vec<Vec<usize>>>,
    hierarchy: Hierarchy,
    provenance: Provenance,
}

impl PartitionedData {
    fn new(shards: Vec<Vec<Vec<usize>>>, provenance: Provenance) -> Result<Self, DataError> {
        let sizes = shards
            .iter()
            .map(|edge| edge.iter().map(Vec::len).collect())
            .collect();
        let hierarchy = Hierarchy::derive_weights(sizes)?;
        Ok(Self {
            shards,
            hierarchy,
            provenance,
        })
    }

    /// Assembles a partition from explicit shards (all must be nonempty).
    pub fn from_shards(shards: Vec<Vec<Vec<usize>>>, provenance: Provenance) -> Result<Self, DataError> {
        Self::new(shards, provenance)
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn shards(&self) -> &[Vec<Vec<usize>>] {
        &self.shards
    }

    pub fn shard(&self, edge: usize, device: usize) -> &[usize] {
        &self.shards[edge][device]
    }

    pub fn edge_indices(&self, edge: usize) -> impl Iterator<Item = &usize> + '_ {
        self.shards[edge].iter().flatten()
    }

    /// Every assigned sample index, edge-major.
    pub fn assigned(&self) -> impl Iterator<Item = &usize> + '_ {
        self.shards.iter().flatten().flatten()
    }

    /// Per-edge class counts.
    pub fn edge_histograms(&self, dataset: &LabeledDataset) -> Vec<Vec<usize>> {
        (0..self.shards.len())
            .map(|q| dataset.class_histogram(self.edge_indices(q)))
            .collect()
    }

    /// The same partition with the devices of `edge` reordered.
    pub fn with_device_order(&self, edge: usize, order: &[usize]) -> Self {
        let mut shards = self.shards.clone();
        shards[edge] = order.iter().map(|&k| self.shards[edge][k].clone()).collect();
        Self::new(shards, self.provenance.clone()).expect("reordering keeps shards valid")
    }
}

/// Partitions according to `spec`, forking the partition stream from
/// `spec.rng_seed`.
pub fn partition(
    dataset: &LabeledDataset,
    layout: &[usize],
    spec: &PartitionSpec,
    max_retries: usize,
) -> Result<PartitionedData, DataError> {
    spec.validate()?;
    let mut rng = fork_rng(spec.rng_seed, StreamLabel::new(Purpose::Partition));
    let mut out = match spec.mode {
        PartitionMode::Iid => partition_iid(dataset, layout, &mut rng)?,
        PartitionMode::Dirichlet => partition_dirichlet(dataset, layout, spec.alpha, max_retries, &mut rng)?,
    };
    out.provenance.rng_seed = Some(spec.rng_seed);
    Ok(out)
}

/// Global shuffle, then equal contiguous shards per device. Samples beyond
/// `devices * floor(n / devices)` are dropped.
pub fn partition_iid<R: Rng + ?Sized>(
    dataset: &LabeledDataset,
    layout: &[usize],
    rng: &mut R,
) -> Result<PartitionedData, DataError> {
    let devices: usize = layout.iter().sum();
    if devices == 0 {
        return Err(crate::config::ConfigError::NoEdges.into());
    }
    partition_iid_with_shard(dataset, layout, dataset.len() / devices, rng)
}

/// IID partition where every device gets exactly `shard_size` samples.
pub fn partition_iid_with_shard<R: Rng + ?Sized>(
    dataset: &LabeledDataset,
    layout: &[usize],
    shard_size: usize,
    rng: &mut R,
) -> Result<PartitionedData, DataError> {
    let devices: usize = layout.iter().sum();
    if shard_size == 0 || devices * shard_size > dataset.len() {
        return Err(DataError::TooFewSamples {
            samples: dataset.len(),
            devices,
        });
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(rng);
    let mut chunks = order.chunks_exact(shard_size);
    let shards = layout
        .iter()
        .map(|&m| (0..m).map(|_| chunks.next().unwrap().to_vec()).collect())
        .collect();
    let dropped = order[devices * shard_size..].to_vec();
    PartitionedData::new(
        shards,
        Provenance {
            mode: PartitionMode::Iid,
            alpha: None,
            rng_seed: None,
            attempts: 1,
            dropped,
        },
    )
}

/// A draw from the symmetric `Dirichlet(alpha * 1_q)`, via normalized
/// Gamma variates.
pub fn dirichlet_proportions<R: Rng + ?Sized>(alpha: f64, q: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    // Tiny alphas can underflow every variate to zero; redraw.
    for _ in 0..64 {
        let g: Vec<f64> = (0..q).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = g.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return g.into_iter().map(|x| x / sum).collect();
        }
    }
    let mut one_hot = vec![0.0; q];
    one_hot[rng.random_range(0..q)] = 1.0;
    one_hot
}

/// Integer counts summing exactly to `total` that follow `proportions`:
/// floors first, then the leftover units go to the largest fractional
/// parts (lower index wins ties).
pub fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Label-skewed partition across edges, IID within each edge.
///
/// For each class `m`, `p_m ~ Dirichlet(alpha * 1_Q)` decides which
/// fraction of the class goes to each edge (largest-remainder rounding).
/// Each edge's pool is then shuffled and split into equal device shards.
/// A draw that leaves any device without data is redrawn, up to
/// `max_retries` times.
pub fn partition_dirichlet<R: Rng + ?Sized>(
    dataset: &LabeledDataset,
    layout: &[usize],
    alpha: f64,
    max_retries: usize,
    rng: &mut R,
) -> Result<PartitionedData, DataError> {
    if dataset.is_empty() {
        return Err(DataError::Empty);
    }
    if layout.is_empty() {
        return Err(crate::config::ConfigError::NoEdges.into());
    }
    let q = layout.len();
    let classes = dataset.class_indices();
    for attempt in 1..=max_retries + 1 {
        let mut pools: Vec<Vec<usize>> = vec![Vec::new(); q];
        for members in &classes {
            let mut members = members.clone();
            members.shuffle(rng);
            let p = dirichlet_proportions(alpha, q, rng);
            let counts = largest_remainder(&p, members.len());
            let mut rest = members.as_slice();
            for (pool, &c) in pools.iter_mut().zip(&counts) {
                let (take, tail) = rest.split_at(c);
                pool.extend_from_slice(take);
                rest = tail;
            }
        }
        if pools.iter().zip(layout).any(|(pool, &m)| pool.len() < m) {
            continue;
        }
        let mut shards = Vec::with_capacity(q);
        let mut dropped = Vec::new();
        for (mut pool, &m) in pools.into_iter().zip(layout) {
            pool.shuffle(rng);
            let size = pool.len() / m;
            shards.push(pool.chunks_exact(size).take(m).map(<[usize]>::to_vec).collect());
            dropped.extend_from_slice(&pool[m * size..]);
        }
        return PartitionedData::new(
            shards,
            Provenance {
                mode: PartitionMode::Dirichlet,
                alpha: Some(alpha),
                rng_seed: None,
                attempts: attempt,
                dropped,
            },
        );
    }
    Err(DataError::DegenerateDraw {
        attempts: max_retries + 1,
    })
}

/// `batch_size` indices drawn uniformly with replacement from `shard`.
pub fn sample_batch<R: Rng + ?Sized>(shard: &[usize], batch_size: usize, rng: &mut R) -> Vec<usize> {
    assert!(!shard.is_empty(), "cannot sample from an empty shard");
    (0..batch_size)
        .map(|_| shard[rng.random_range(0..shard.len())])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::StreamRng;
    use std::collections::HashSet;

    fn rng(seed: u64) -> StreamRng {
        fork_rng(seed, StreamLabel::new(Purpose::Partition))
    }

    /// One-pixel images whose value encodes the index; `classes` labels
    /// assigned round-robin.
    fn toy(n: usize, classes: usize) -> LabeledDataset {
        let rows: Vec<Vec<f32>> = (0..n).map(|i| vec![(i % 256) as f32 / 255.0]).collect();
        let labels = (0..n).map(|i| (i % classes) as u8).collect();
        LabeledDataset::from_dense(&rows, labels, classes).unwrap()
    }

    fn assert_disjoint_cover(p: &PartitionedData, n: usize) {
        let mut seen = HashSet::new();
        for &i in p.assigned().chain(&p.provenance().dropped) {
            assert!(i < n);
            assert!(seen.insert(i), "index {i} assigned twice");
        }
        assert_eq!(seen.len(), n);
    }

    #[test]
    fn iid_even_split() {
        let ds = toy(200, 10);
        let p = partition_iid(&ds, &[5; 4], &mut rng(1)).unwrap();
        assert!(p.shards().iter().flatten().all(|s| s.len() == 10));
        assert_eq!(p.hierarchy().shard_sizes(), &vec![vec![10; 5]; 4][..]);
        assert_disjoint_cover(&p, 200);
        assert!(p.provenance().dropped.is_empty());
    }

    #[test]
    fn iid_seeds_differ_only_in_assignment() {
        let ds = toy(200, 10);
        let a = partition_iid(&ds, &[5; 4], &mut rng(1)).unwrap();
        let b = partition_iid(&ds, &[5; 4], &mut rng(2)).unwrap();
        assert_ne!(a.shards(), b.shards());
        assert_eq!(a.hierarchy(), b.hierarchy());
    }

    #[test]
    fn iid_remainder_is_dropped() {
        let ds = toy(203, 10);
        let p = partition_iid(&ds, &[5; 4], &mut rng(1)).unwrap();
        assert_eq!(p.provenance().dropped.len(), 3);
        assert_disjoint_cover(&p, 203);
    }

    #[test]
    fn iid_too_few_samples() {
        let ds = toy(19, 10);
        assert!(matches!(
            partition_iid(&ds, &[5; 4], &mut rng(1)),
            Err(DataError::TooFewSamples { samples: 19, devices: 20 })
        ));
    }

    #[test]
    fn iid_class_mix_is_multinomial() {
        let ds = toy(10_000, 10);
        let p = partition_iid(&ds, &[5; 4], &mut rng(3)).unwrap();
        let n: f64 = 500.0;
        let prob = 0.1;
        let sigma = (n * prob * (1.0 - prob)).sqrt();
        for edge in p.shards() {
            for shard in edge {
                for count in ds.class_histogram(shard) {
                    assert!((count as f64 - n * prob).abs() <= 3.0 * sigma, "count {count}");
                }
            }
        }
    }

    #[test]
    fn dirichlet_proportions_sum_to_one() {
        let mut r = rng(5);
        for alpha in [0.05, 0.3, 1.0, 1e6] {
            for _ in 0..200 {
                let p = dirichlet_proportions(alpha, 4, &mut r);
                assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                assert!(p.iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn largest_remainder_preserves_total() {
        assert_eq!(largest_remainder(&[0.5, 0.5], 3), vec![2, 1]);
        assert_eq!(largest_remainder(&[0.2, 0.3, 0.5], 10), vec![2, 3, 5]);
        assert_eq!(largest_remainder(&[0.34, 0.33, 0.33], 100), vec![34, 33, 33]);
        assert_eq!(largest_remainder(&[1.0], 0), vec![0]);
    }

    #[test]
    fn dirichlet_symmetric_limit() {
        let ds = toy(10_000, 10);
        let p = partition_dirichlet(&ds, &[1; 4], 1e6, 10, &mut rng(7)).unwrap();
        let totals = ds.class_histogram(&(0..ds.len()).collect::<Vec<_>>());
        for hist in p.edge_histograms(&ds) {
            for (m, &c) in hist.iter().enumerate() {
                let frac = c as f64 / totals[m] as f64;
                assert!((frac - 0.25).abs() < 0.01, "class {m}: {frac}");
            }
        }
    }

    #[test]
    fn dirichlet_conserves_every_class() {
        let ds = toy(5_003, 10);
        for seed in 0..5 {
            let p = partition_dirichlet(&ds, &[5, 3, 2, 7], 0.3, 100, &mut rng(seed)).unwrap();
            assert_disjoint_cover(&p, ds.len());
            let total = ds.class_histogram(&(0..ds.len()).collect::<Vec<_>>());
            let dropped = ds.class_histogram(&p.provenance().dropped);
            let hists = p.edge_histograms(&ds);
            for m in 0..10 {
                let assigned: usize = hists.iter().map(|h| h[m]).sum();
                assert_eq!(assigned + dropped[m], total[m]);
            }
            for (edge, &m) in p.shards().iter().zip(&[5, 3, 2, 7]) {
                assert_eq!(edge.len(), m);
                assert!(edge.iter().all(|s| s.len() == edge[0].len()));
            }
        }
    }

    #[test]
    fn dirichlet_small_alpha_is_skewed() {
        let ds = toy(10_000, 10);
        let p = partition_dirichlet(&ds, &[5; 4], 0.3, 100, &mut rng(2)).unwrap();
        let max_share = p
            .edge_histograms(&ds)
            .iter()
            .flat_map(|h| {
                let n: usize = h.iter().sum();
                h.iter().map(move |&c| c as f64 / n as f64)
            })
            .fold(0.0, f64::max);
        assert!(max_share >= 0.3, "max class share {max_share}");
    }

    #[test]
    fn dirichlet_degenerate_draw() {
        // Two samples cannot give four edges a device each.
        let ds = toy(2, 2);
        assert!(matches!(
            partition_dirichlet(&ds, &[1; 4], 0.3, 3, &mut rng(1)),
            Err(DataError::DegenerateDraw { attempts: 4 })
        ));
    }

    #[test]
    fn partition_is_deterministic() {
        let ds = toy(1_000, 10);
        let spec = PartitionSpec::dirichlet(0.3, 42);
        let a = partition(&ds, &[5; 4], &spec, 100).unwrap();
        let b = partition(&ds, &[5; 4], &spec, 100).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.provenance().rng_seed, Some(42));
    }

    #[test]
    fn batch_sampling() {
        let mut r = rng(9);
        assert_eq!(sample_batch(&[17], 1, &mut r), vec![17]);
        let shard: Vec<usize> = (100..110).collect();
        let a = sample_batch(&shard, 50, &mut rng(9));
        let b = sample_batch(&shard, 50, &mut rng(9));
        assert_eq!(a, b);
        assert!(a.iter().all(|i| shard.contains(i)));
    }

    #[test]
    fn batch_sampling_is_unbiased() {
        // Scalar feature = the index itself; shard mean is 104.5.
        let shard: Vec<usize> = (100..110).collect();
        let draws = 100_000;
        let batch = sample_batch(&shard, draws, &mut rng(4));
        let mean = batch.iter().sum::<usize>() as f64 / draws as f64;
        let var = shard.iter().map(|&i| (i as f64 - 104.5).powi(2)).sum::<f64>() / 10.0;
        assert!((mean - 104.5).abs() <= 3.0 * (var / draws as f64).sqrt());
    }
}
