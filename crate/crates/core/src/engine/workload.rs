use rand::seq::index;
use rand_distr::{Distribution, Normal};

use crate::config::{fork_rng, Hierarchy, Purpose, StreamLabel, StreamRng};
use crate::dataio::{sample_batch, LabeledDataset, PartitionedData};
use crate::model::{backward, evaluate, full_gradient, MlpShape, ModelParams, QuadraticObjective};

/// Metrics of one global model. Fields that do not apply are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub grad_l1: f64,
}

/// A distributed objective: who holds which data, how a device estimates
/// its gradient, and how a global model is scored.
pub trait Workload: Sync {
    fn dim(&self) -> usize;

    fn hierarchy(&self) -> &Hierarchy;

    /// Minibatch gradient of device `(edge, device)` at `params`.
    fn device_gradient(&self, params: &[f64], edge: usize, device: usize, batch_size: usize, rng: &mut StreamRng) -> Vec<f64>;

    fn evaluate(&self, params: &[f64]) -> Metrics;
}

/// Exact (full-data) edge gradients `grad F_q(w)`.
pub trait EdgeGradients: Sync {
    fn hierarchy(&self) -> &Hierarchy;

    fn edge_gradients(&self, params: &[f64]) -> Vec<Vec<f64>>;
}

/// The MLP classifier trained on a partitioned dataset.
pub struct MlpWorkload<'a> {
    train: &'a LabeledDataset,
    test: Option<&'a LabeledDataset>,
    partition: &'a PartitionedData,
    shape: MlpShape,
    train_eval: Vec<usize>,
    grad_eval: Vec<usize>,
}

impl<'a> MlpWorkload<'a> {
    /// `grad_batch` assigned samples (fixed for the whole run) estimate
    /// `||grad F||_1`; `train_samples` caps the samples scored for the train
    /// loss (all assigned samples by default).
    pub fn new(
        train: &'a LabeledDataset,
        test: Option<&'a LabeledDataset>,
        partition: &'a PartitionedData,
        shape: MlpShape,
        grad_batch: usize,
        train_samples: Option<usize>,
        eval_seed: u64,
    ) -> Self {
        let mut assigned: Vec<usize> = partition.assigned().copied().collect();
        assigned.sort_unstable();
        let mut rng = fork_rng(eval_seed, StreamLabel::new(Purpose::Eval));
        let pick = |n: Option<usize>, rng: &mut StreamRng| -> Vec<usize> {
            match n {
                Some(n) if n < assigned.len() => {
                    let mut idx: Vec<usize> = index::sample(rng, assigned.len(), n)
                        .into_iter()
                        .map(|i| assigned[i])
                        .collect();
                    idx.sort_unstable();
                    idx
                }
                _ => assigned.clone(),
            }
        };
        let grad_eval = pick(Some(grad_batch), &mut rng);
        let train_eval = pick(train_samples, &mut rng);
        Self {
            train,
            test,
            partition,
            shape,
            train_eval,
            grad_eval,
        }
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    fn params(&self, w: &[f64]) -> ModelParams {
        ModelParams {
            values: w.to_vec(),
            shape: self.shape,
        }
    }
}

impl Workload for MlpWorkload<'_> {
    fn dim(&self) -> usize {
        self.shape.num_params()
    }

    fn hierarchy(&self) -> &Hierarchy {
        self.partition.hierarchy()
    }

    fn device_gradient(&self, params: &[f64], edge: usize, device: usize, batch_size: usize, rng: &mut StreamRng) -> Vec<f64> {
        let batch = sample_batch(self.partition.shard(edge, device), batch_size, rng);
        backward(&self.params(params), self.train, &batch).values
    }

    fn evaluate(&self, w: &[f64]) -> Metrics {
        let p = self.params(w);
        let train = evaluate(&p, self.train, &self.train_eval);
        let test = self.test.map(|ds| {
            let all: Vec<usize> = (0..ds.len()).collect();
            evaluate(&p, ds, &all)
        });
        let grad = full_gradient(&p, self.train, &self.grad_eval);
        Metrics {
            train_loss: train.loss,
            test_loss: test.map_or(f64::NAN, |e| e.loss),
            train_accuracy: train.accuracy,
            test_accuracy: test.map_or(f64::NAN, |e| e.accuracy),
            grad_l1: grad.iter().map(|g| g.abs()).sum(),
        }
    }
}

impl EdgeGradients for MlpWorkload<'_> {
    fn hierarchy(&self) -> &Hierarchy {
        self.partition.hierarchy()
    }

    fn edge_gradients(&self, w: &[f64]) -> Vec<Vec<f64>> {
        let p = self.params(w);
        (0..self.partition.shards().len())
            .map(|q| {
                let idx: Vec<usize> = self.partition.edge_indices(q).copied().collect();
                full_gradient(&p, self.train, &idx)
            })
            .collect()
    }
}

/// Separable quadratic shared by all devices. A device's gradient is the
/// exact gradient plus a fixed per-device offset (the offsets average to
/// zero under the data weights, so they only create heterogeneity) plus
/// fresh Gaussian noise of std `noise_std / sqrt(B)`.
#[derive(Debug, Clone)]
pub struct SyntheticWorkload {
    objective: QuadraticObjective,
    hierarchy: Hierarchy,
    offsets: Vec<Vec<Vec<f64>>>,
}

impl SyntheticWorkload {
    pub fn new(objective: QuadraticObjective, hierarchy: Hierarchy) -> Self {
        let d = objective.dim();
        let offsets = hierarchy
            .devices_per_edge()
            .iter()
            .map(|&m| vec![vec![0.0; d]; m])
            .collect();
        Self {
            objective,
            hierarchy,
            offsets,
        }
    }

    /// Draws device offsets from `N(0, std^2)` per coordinate and removes
    /// their weighted mean.
    pub fn with_heterogeneity(mut self, std: f64, seed: u64) -> Self {
        if std == 0.0 {
            return self;
        }
        let normal = Normal::new(0.0, std).expect("finite std");
        let d = self.objective.dim();
        let mut mean = vec![0.0; d];
        for (q, edge) in self.offsets.iter_mut().enumerate() {
            let a = self.hierarchy.edge_weights()[q];
            for (k, off) in edge.iter_mut().enumerate() {
                let mut rng = fork_rng(seed, StreamLabel::new(Purpose::Synthetic).edge(q).device(k));
                let b = self.hierarchy.device_weights(q)[k];
                for (o, m) in off.iter_mut().zip(mean.iter_mut()) {
                    *o = normal.sample(&mut rng);
                    *m += a * b * *o;
                }
            }
        }
        for off in self.offsets.iter_mut().flatten() {
            for (o, m) in off.iter_mut().zip(&mean) {
                *o -= m;
            }
        }
        self
    }

    pub fn objective(&self) -> &QuadraticObjective {
        &self.objective
    }
}

impl Workload for SyntheticWorkload {
    fn dim(&self) -> usize {
        self.objective.dim()
    }

    fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    fn device_gradient(&self, params: &[f64], edge: usize, device: usize, batch_size: usize, rng: &mut StreamRng) -> Vec<f64> {
        let mut g = self.objective.gradient(params);
        for (x, o) in g.iter_mut().zip(&self.offsets[edge][device]) {
            *x += o;
        }
        let std = self.objective.noise_std / (batch_size as f64).sqrt();
        if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("finite std");
            for x in g.iter_mut() {
                *x += normal.sample(rng);
            }
        }
        g
    }

    fn evaluate(&self, w: &[f64]) -> Metrics {
        Metrics {
            train_loss: self.objective.value(w),
            test_loss: f64::NAN,
            train_accuracy: f64::NAN,
            test_accuracy: f64::NAN,
            grad_l1: self.objective.gradient(w).iter().map(|g| g.abs()).sum(),
        }
    }
}

impl EdgeGradients for SyntheticWorkload {
    fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    fn edge_gradients(&self, w: &[f64]) -> Vec<Vec<f64>> {
        let g = self.objective.gradient(w);
        self.offsets
            .iter()
            .enumerate()
            .map(|(q, edge)| {
                let mut out = g.clone();
                for (off, &b) in edge.iter().zip(self.hierarchy.device_weights(q)) {
                    for (x, o) in out.iter_mut().zip(off) {
                        *x += b * o;
                    }
                }
                out
            })
            .collect()
    }
}
