//! Training protocols over a two-tier hierarchy.
//!
//! All three protocols share one loop: per global round every edge starts
//! from the broadcast model, runs `T_E` edge steps with its devices, and the
//! cloud averages the edge models with weights `D_q / N`. They differ in
//! the per-step edge update (sign vote or weighted gradient average) and
//! in how the broadcast model reaches the devices (exact or sparsified
//! model difference).

mod workload;

pub use workload::{EdgeGradients, Metrics, MlpWorkload, SyntheticWorkload, Workload};

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{downlink_entry_bits, BitMode};
use crate::compress::{majority_vote, sign, sparsify, CompressError, SignVector, SparsifierSpec};
use crate::config::{fork_rng, ConfigError, DownlinkConfig, Purpose, Schedule, StreamLabel};
use crate::model::{save_params, CheckpointError, MlpShape, ModelParams};
use crate::par;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("non-finite {what} at round {t}, edge step {tau}, edge {edge}")]
    NonFinite {
        what: &'static str,
        t: usize,
        tau: usize,
        edge: usize,
    },
    #[error("non-finite metrics after round {t}")]
    NonFiniteMetrics { t: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Compress(#[from] CompressError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Per-step edge update rule and downlink mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Protocol {
    HierSignSgd,
    HierSgd,
    HierSignSgdQuantizedDownlink(DownlinkConfig),
}

impl Protocol {
    fn bit_mode(&self) -> BitMode {
        match self {
            Protocol::HierSignSgd => BitMode::Sign,
            Protocol::HierSgd => BitMode::Full32,
            Protocol::HierSignSgdQuantizedDownlink(dl) => BitMode::QuantizedDownlink(dl.active_components),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EngineOptions {
    /// Worker threads for device computations; results do not depend on it.
    pub workers: usize,
    /// Save `w^(t)` after every round as `round_<t>.bin` (MLP only).
    pub checkpoint_dir: Option<PathBuf>,
    /// Shape used for checkpoints.
    pub checkpoint_shape: Option<MlpShape>,
    /// Rounds `t` whose global model `w^(t)` is returned by [`run_protocol`].
    pub snapshot_rounds: Vec<usize>,
}

/// Round logs plus the requested model snapshots `(t, w^(t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub logs: Vec<RoundLog>,
    pub snapshots: Vec<(usize, Vec<f64>)>,
}

/// Metrics for the global model `w^(t)`. Record `t = 0` describes the
/// initial model; record `t >= 1` is taken after the `t`-th aggregation and
/// carries the bits spent during that round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundLog {
    pub t: usize,
    pub model_hash: String,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub global_grad_l1: f64,
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    /// Seconds since the run started. Not deterministic; kept out of CSV.
    pub wall_time: f64,
}

/// Replicated state of one edge cluster: the edge model, each device's
/// copy of it, and the reference model `v_q^(t,0)` used by the quantized
/// downlink.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeState {
    pub edge_id: usize,
    pub model: Vec<f64>,
    pub device_models: Vec<Vec<f64>>,
    pub device_reference_model: Vec<f64>,
}

impl EdgeState {
    fn new(edge_id: usize, w0: &[f64], devices: usize) -> Self {
        Self {
            edge_id,
            model: w0.to_vec(),
            device_models: vec![w0.to_vec(); devices],
            device_reference_model: w0.to_vec(),
        }
    }

    /// True when every device holds exactly the edge model.
    pub fn replicas_agree(&self) -> bool {
        self.device_models.iter().all(|m| *m == self.model)
    }

    /// `v <- v - mu * direction` on the edge and on every device replica.
    fn apply(&mut self, mu: f64, direction: &[f64]) {
        for m in std::iter::once(&mut self.model).chain(self.device_models.iter_mut()) {
            for (v, d) in m.iter_mut().zip(direction) {
                *v -= mu * d;
            }
        }
    }

    fn reset_to(&mut self, w: &[f64]) {
        for m in std::iter::once(&mut self.model).chain(self.device_models.iter_mut()) {
            m.copy_from_slice(w);
        }
    }
}

/// One edge step as seen by an observer: the update direction applied
/// (vote signs as `+-1/0`, or the averaged gradient) and the edge state
/// after applying it.
pub struct StepEvent<'a> {
    pub t: usize,
    pub tau: usize,
    pub direction: &'a [f64],
    pub state: &'a EdgeState,
}

/// `w = sum_q weight_q * v_q`.
pub fn cloud_aggregate(edge_models: &[&[f64]], edge_weights: &[f64]) -> Result<Vec<f64>, EngineError> {
    let d = edge_models.first().map_or(0, |m| m.len());
    if edge_models.len() != edge_weights.len() {
        return Err(EngineError::Dimension {
            expected: edge_models.len(),
            found: edge_weights.len(),
        });
    }
    // Skip the arithmetic when all edges agree so the result is exact.
    if edge_models.iter().all(|m| *m == edge_models[0]) {
        return Ok(edge_models[0].to_vec());
    }
    let mut w = vec![0.0; d];
    for (m, &a) in edge_models.iter().zip(edge_weights) {
        if m.len() != d {
            return Err(EngineError::Dimension {
                expected: d,
                found: m.len(),
            });
        }
        for (x, v) in w.iter_mut().zip(m.iter()) {
            *x += a * v;
        }
    }
    Ok(w)
}

/// Hex SHA-256 of the little-endian parameter bytes (first 16 hex digits).
pub fn model_hash(w: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in w {
        h.update(v.to_le_bytes());
    }
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run_hier_signsgd<W: Workload>(
    workload: &W,
    schedule: &Schedule,
    w0: &[f64],
    options: &EngineOptions,
) -> Result<Vec<RoundLog>, EngineError> {
    run_protocol(workload, schedule, Protocol::HierSignSgd, w0, options, &mut |_| {}).map(|o| o.logs)
}

pub fn run_hier_sgd<W: Workload>(
    workload: &W,
    schedule: &Schedule,
    w0: &[f64],
    options: &EngineOptions,
) -> Result<Vec<RoundLog>, EngineError> {
    run_protocol(workload, schedule, Protocol::HierSgd, w0, options, &mut |_| {}).map(|o| o.logs)
}

pub fn run_hier_signsgd_quantized_downlink<W: Workload>(
    workload: &W,
    schedule: &Schedule,
    w0: &[f64],
    downlink: DownlinkConfig,
    options: &EngineOptions,
) -> Result<Vec<RoundLog>, EngineError> {
    let protocol = if downlink.enabled {
        Protocol::HierSignSgdQuantizedDownlink(downlink)
    } else {
        Protocol::HierSignSgd
    };
    run_protocol(workload, schedule, protocol, w0, options, &mut |_| {}).map(|o| o.logs)
}

/// Runs `protocol` from `w0` and returns `T_G + 1` round logs. `observer`
/// sees every edge step in `(t, tau, q)` order.
pub fn run_protocol<W: Workload>(
    workload: &W,
    schedule: &Schedule,
    protocol: Protocol,
    w0: &[f64],
    options: &EngineOptions,
    observer: &mut (dyn FnMut(StepEvent<'_>) + Send),
) -> Result<RunOutput, EngineError> {
    schedule.validate()?;
    let d = workload.dim();
    if w0.len() != d {
        return Err(EngineError::Dimension {
            expected: d,
            found: w0.len(),
        });
    }
    let sparsifier = match protocol {
        Protocol::HierSignSgdQuantizedDownlink(dl) => {
            dl.validate(d)?;
            Some(SparsifierSpec::new(d, dl.active_components)?)
        }
        _ => None,
    };
    par::with_workers(options.workers, || {
        Runner {
            workload,
            schedule,
            protocol,
            sparsifier,
            options,
            started: Instant::now(),
        }
        .run(w0, observer)
    })
}

struct Runner<'a, W> {
    workload: &'a W,
    schedule: &'a Schedule,
    protocol: Protocol,
    sparsifier: Option<SparsifierSpec>,
    options: &'a EngineOptions,
    started: Instant,
}

/// What one device sends to its edge.
enum Upload {
    Signs(SignVector),
    Gradient(Vec<f64>),
}

impl<W: Workload> Runner<'_, W> {
    fn run(&self, w0: &[f64], observer: &mut (dyn FnMut(StepEvent<'_>) + Send)) -> Result<RunOutput, EngineError> {
        let h = self.workload.hierarchy();
        let d = self.workload.dim();
        let seed = self.schedule.rng_seed;
        let mu = self.schedule.step_size;
        let mode = self.protocol.bit_mode();
        let devices = h.devices_per_edge();

        let mut edges: Vec<EdgeState> = devices
            .iter()
            .enumerate()
            .map(|(q, &m)| EdgeState::new(q, w0, m))
            .collect();
        // (edge, device) pairs in fixed order.
        let slots: Vec<(usize, usize)> = devices
            .iter()
            .enumerate()
            .flat_map(|(q, &m)| (0..m).map(move |k| (q, k)))
            .collect();

        let mut w = w0.to_vec();
        let mut logs = vec![self.log(0, &w, 0, 0)?];
        let mut snapshots = Vec::new();
        self.checkpoint(0, &w, &mut snapshots)?;
        let mut direction = vec![0.0; d];

        for t in 0..self.schedule.global_rounds {
            let mut downlink: u64 = 0;
            let mut uplink: u64 = 0;
            for edge in edges.iter_mut() {
                downlink += self.broadcast(t, edge, &w)?;
            }
            for tau in 0..self.schedule.edge_rounds {
                let uploads = par::map_indexed(slots.len(), |i| {
                    let (q, k) = slots[i];
                    let mut rng = fork_rng(
                        seed,
                        StreamLabel::new(Purpose::Batch).round(t).step(tau).edge(q).device(k),
                    );
                    let params = &edges[q].device_models[k];
                    let g = self
                        .workload
                        .device_gradient(params, q, k, self.schedule.batch_size, &mut rng);
                    match self.protocol {
                        Protocol::HierSgd => Upload::Gradient(g),
                        _ => match sign(&g) {
                            Ok(s) => Upload::Signs(s),
                            Err(_) => Upload::Gradient(g),
                        },
                    }
                });
                let mut uploads = uploads.into_iter();
                for (q, edge) in edges.iter_mut().enumerate() {
                    let batch: Vec<Upload> = uploads.by_ref().take(devices[q]).collect();
                    uplink += devices[q] as u64 * mode.uplink_bits_per_device(d);
                    downlink += mode.step_downlink_bits(d);
                    self.edge_direction(t, tau, q, batch, &mut direction)?;
                    edge.apply(mu, &direction);
                    if edge.model.iter().any(|v| !v.is_finite()) {
                        return Err(EngineError::NonFinite {
                            what: "edge model",
                            t,
                            tau,
                            edge: q,
                        });
                    }
                    observer(StepEvent {
                        t,
                        tau,
                        direction: &direction,
                        state: edge,
                    });
                }
            }
            let models: Vec<&[f64]> = edges.iter().map(|e| e.model.as_slice()).collect();
            w = cloud_aggregate(&models, h.edge_weights())?;
            logs.push(self.log(t + 1, &w, uplink, downlink)?);
            self.checkpoint(t + 1, &w, &mut snapshots)?;
        }
        Ok(RunOutput { logs, snapshots })
    }

    /// Sets each edge's starting model for round `t` and returns the
    /// downlink bits spent on it. The initial model is shared through the
    /// seed, so round 0 is free.
    fn broadcast(&self, t: usize, edge: &mut EdgeState, w: &[f64]) -> Result<u64, EngineError> {
        let d = w.len();
        if t == 0 {
            edge.device_reference_model.copy_from_slice(w);
            edge.reset_to(w);
            return Ok(0);
        }
        let bits = match self.sparsifier {
            Some(spec) if !spec.is_identity() => {
                // One mask per round for every edge, so the edges keep a common
                // reference and the cloud average telescopes to v + chi.
                let mut rng = fork_rng(self.schedule.rng_seed, StreamLabel::new(Purpose::Sparsify).round(t));
                let diff: Vec<f64> = w
                    .iter()
                    .zip(&edge.device_reference_model)
                    .map(|(a, b)| a - b)
                    .collect();
                let update = sparsify(&diff, spec, &mut rng);
                for (&i, &v) in update.indices.iter().zip(&update.values) {
                    edge.device_reference_model[i] += v;
                }
                update.indices.len() as u64 * downlink_entry_bits(d)
            }
            Some(spec) => {
                // n = d: Z is the identity, the reference becomes w exactly.
                edge.device_reference_model.copy_from_slice(w);
                spec.dim() as u64 * downlink_entry_bits(d)
            }
            None => {
                edge.device_reference_model.copy_from_slice(w);
                32 * d as u64
            }
        };
        let start = edge.device_reference_model.clone();
        edge.reset_to(&start);
        Ok(bits)
    }

    /// Combines the uploads of edge `q` into the update direction.
    fn edge_direction(
        &self,
        t: usize,
        tau: usize,
        q: usize,
        uploads: Vec<Upload>,
        out: &mut [f64],
    ) -> Result<(), EngineError> {
        let nonfinite = EngineError::NonFinite {
            what: "device gradient",
            t,
            tau,
            edge: q,
        };
        match self.protocol {
            Protocol::HierSgd => {
                out.iter_mut().for_each(|x| *x = 0.0);
                let weights = self.workload.hierarchy().device_weights(q);
                for (u, &a) in uploads.iter().zip(weights) {
                    let Upload::Gradient(g) = u else { unreachable!() };
                    for (o, v) in out.iter_mut().zip(g) {
                        *o += a * v;
                    }
                }
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(nonfinite);
                }
            }
            _ => {
                let mut votes = Vec::with_capacity(uploads.len());
                for u in uploads {
                    match u {
                        Upload::Signs(s) => votes.push(s),
                        Upload::Gradient(_) => return Err(nonfinite),
                    }
                }
                let mut rng = fork_rng(
                    self.schedule.rng_seed,
                    StreamLabel::new(Purpose::Tie).round(t).step(tau).edge(q),
                );
                let s = majority_vote(&votes, self.schedule.tie_policy, &mut rng)?;
                for (o, &v) in out.iter_mut().zip(s.as_slice()) {
                    *o = v as f64;
                }
            }
        }
        Ok(())
    }

    fn log(&self, t: usize, w: &[f64], uplink_bits: u64, downlink_bits: u64) -> Result<RoundLog, EngineError> {
        let m = self.workload.evaluate(w);
        if m.train_loss.is_nan() {
            return Err(EngineError::NonFiniteMetrics { t });
        }
        Ok(RoundLog {
            t,
            model_hash: model_hash(w),
            train_loss: m.train_loss,
            test_loss: m.test_loss,
            train_accuracy: m.train_accuracy,
            test_accuracy: m.test_accuracy,
            global_grad_l1: m.grad_l1,
            uplink_bits,
            downlink_bits,
            wall_time: self.started.elapsed().as_secs_f64(),
        })
    }

    fn checkpoint(&self, t: usize, w: &[f64], snapshots: &mut Vec<(usize, Vec<f64>)>) -> Result<(), EngineError> {
        if self.options.snapshot_rounds.contains(&t) {
            snapshots.push((t, w.to_vec()));
        }
        if let (Some(dir), Some(shape)) = (&self.options.checkpoint_dir, self.options.checkpoint_shape) {
            let params = ModelParams {
                values: w.to_vec(),
                shape,
            };
            std::fs::create_dir_all(dir).map_err(|source| CheckpointError::Io {
                path: dir.clone(),
                source,
            })?;
            save_params(&dir.join(format!("round_{t}.bin")), &params)?;
        }
        Ok(())
    }
}
