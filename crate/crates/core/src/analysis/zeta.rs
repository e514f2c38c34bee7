use serde::Serialize;

use super::AnalysisError;
use crate::config::Hierarchy;
use crate::dataio::{partition_iid_with_shard, LabeledDataset};
use crate::engine::{EdgeGradients, MlpWorkload};
use crate::model::MlpShape;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZetaEstimate {
    pub value: f64,
    pub num_probe_points: usize,
    /// Samples behind each full gradient (all assigned samples).
    pub samples_per_gradient: usize,
    /// Standard error of `value` across probe points.
    pub standard_error: f64,
}

/// `sum_q (D_q/N) ||grad F_q(w) - grad F(w)||_1` at one point.
pub fn heterogeneity_at(edge_grads: &[Vec<f64>], hierarchy: &Hierarchy) -> f64 {
    let weights = hierarchy.edge_weights();
    let d = edge_grads.first().map_or(0, Vec::len);
    let mut global = vec![0.0; d];
    for (g, &a) in edge_grads.iter().zip(weights) {
        for (x, v) in global.iter_mut().zip(g) {
            *x += a * v;
        }
    }
    if edge_grads.len() == 1 {
        return 0.0;
    }
    edge_grads
        .iter()
        .zip(weights)
        .map(|(g, &a)| a * g.iter().zip(&global).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .sum()
}

/// Mean heterogeneity over the probe points.
pub fn estimate_zeta<S: EdgeGradients + ?Sized>(source: &S, probes: &[Vec<f64>]) -> Result<ZetaEstimate, AnalysisError> {
    if probes.is_empty() {
        return Err(AnalysisError::Empty("zeta needs at least one probe point"));
    }
    let h = source.hierarchy();
    let values = par::map_indexed(probes.len(), |i| heterogeneity_at(&source.edge_gradients(&probes[i]), h));
    let (mean, se) = mean_and_se(&values);
    Ok(ZetaEstimate {
        value: mean,
        num_probe_points: probes.len(),
        samples_per_gradient: h.total(),
        standard_error: se,
    })
}

pub(crate) fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZetaScaling {
    pub m_values: Vec<usize>,
    /// Mean zeta per `M`, averaged over seeds and probe points.
    pub zeta: Vec<f64>,
    pub slope: f64,
}

/// For each cluster size `M`, builds a source with `build(M, seed)` for
/// every seed, averages `zeta` over seeds and probes, and fits the log-log
/// slope.
pub fn zeta_scaling<S, F>(m_values: &[usize], seeds: &[u64], probes: &[Vec<f64>], build: F) -> Result<ZetaScaling, AnalysisError>
where
    S: EdgeGradients,
    F: Fn(usize, u64) -> Result<S, AnalysisError>,
{
    let mut distinct = m_values.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(AnalysisError::Empty("zeta scaling needs at least two distinct M values"));
    }
    if seeds.is_empty() {
        return Err(AnalysisError::Empty("zeta scaling needs at least one seed"));
    }
    let mut zeta = Vec::with_capacity(m_values.len());
    for &m in m_values {
        let mut sum = 0.0;
        for &seed in seeds {
            sum += estimate_zeta(&build(m, seed)?, probes)?.value;
        }
        zeta.push(sum / seeds.len() as f64);
    }
    let x: Vec<f64> = m_values.iter().map(|&m| m as f64).collect();
    Ok(ZetaScaling {
        m_values: m_values.to_vec(),
        slope: log_log_slope(&x, &zeta),
        zeta,
    })
}

/// The MLP version: `Q` edges of `M` IID devices, each holding
/// `shard_size` samples, so an edge gradient averages `M * shard_size`
/// samples.
pub fn zeta_scaling_experiment(
    dataset: &LabeledDataset,
    shape: MlpShape,
    num_edges: usize,
    m_values: &[usize],
    shard_size: usize,
    probes: &[Vec<f64>],
    seeds: &[u64],
) -> Result<ZetaScaling, AnalysisError> {
    let mut partitions = Vec::new();
    for &m in m_values {
        for &seed in seeds {
            let mut rng = crate::config::fork_rng(
                seed,
                crate::config::StreamLabel::new(crate::config::Purpose::Partition).device(m),
            );
            partitions.push(partition_iid_with_shard(dataset, &vec![m; num_edges], shard_size, &mut rng)?);
        }
    }
    let index = |m: usize, seed: u64| {
        let i = m_values.iter().position(|&x| x == m).unwrap();
        let j = seeds.iter().position(|&s| s == seed).unwrap();
        i * seeds.len() + j
    };
    zeta_scaling(m_values, seeds, probes, |m, seed| {
        Ok(MlpWorkload::new(dataset, None, &partitions[index(m, seed)], shape, 1, None, seed))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 4.0, 16.0, 64.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((log_log_slope(&x, &y) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_edge_is_zero() {
        let h = Hierarchy::uniform(1, 3, 5).unwrap();
        assert_eq!(heterogeneity_at(&[vec![1.0, -2.0]], &h), 0.0);
        let h = Hierarchy::uniform(2, 1, 5).unwrap();
        // edges at +-1 around a zero mean
        assert_eq!(heterogeneity_at(&[vec![1.0, 1.0], vec![-1.0, -1.0]], &h), 2.0);
    }

    #[test]
    fn standard_error() {
        let (m, se) = mean_and_se(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-12);
    }
}
