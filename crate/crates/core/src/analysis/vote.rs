use rand::Rng;
use serde::Serialize;

use super::AnalysisError;
use crate::compress::{majority_vote, SignVector, TiePolicy};
use crate::config::{fork_rng, Purpose, StreamLabel};
use crate::par;

const CHUNK: usize = 8192;

/// Exact error probability of an `M`-device majority vote when each vote
/// is flipped independently with probability `p`. A tie costs half its
/// mass under random tie-breaking, nothing under `PlusOne` (the true sign
/// is taken as `+1`) and all of it under `Zero`.
pub fn vote_error_oracle(p: f64, m: usize, policy: TiePolicy) -> f64 {
    let q = 1.0 - p;
    let pmf = |k: usize| binomial(m, k) * p.powi(k as i32) * q.powi((m - k) as i32);
    let wrong: f64 = (0..=m).filter(|&k| 2 * k > m).map(pmf).sum();
    let tie = if m.is_multiple_of(2) { pmf(m / 2) } else { 0.0 };
    wrong
        + match policy {
            TiePolicy::Random => 0.5 * tie,
            TiePolicy::PlusOne => 0.0,
            TiePolicy::Zero => tie,
        }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VoteErrorResult {
    pub rate: f64,
    pub trials: usize,
    /// Binomial standard error of `rate`.
    pub std_error: f64,
}

/// Monte Carlo estimate of the vote error: each trial casts `M` votes for
/// a true sign of `+1`, each flipped with probability `p`, and counts a
/// decoded sign other than `+1` as an error. Trials are vectorised as the
/// coordinates of one vote per chunk.
pub fn vote_error_experiment(p: f64, m: usize, trials: usize, policy: TiePolicy, seed: u64) -> Result<VoteErrorResult, AnalysisError> {
    if !(p > 0.0 && p < 0.5) {
        return Err(AnalysisError::FlipProbability(p));
    }
    if m == 0 || trials == 0 {
        return Err(AnalysisError::Empty("vote experiment needs M >= 1 and trials >= 1"));
    }
    let chunks = trials.div_ceil(CHUNK);
    let errors = par::map_indexed(chunks, |c| {
        let len = CHUNK.min(trials - c * CHUNK);
        let mut rng = fork_rng(seed, StreamLabel::new(Purpose::Trial).round(c));
        let votes: Vec<SignVector> = (0..m)
            .map(|_| {
                SignVector::from_entries((0..len).map(|_| if rng.random::<f64>() < p { -1 } else { 1 }).collect())
            })
            .collect();
        let mut tie_rng = fork_rng(seed, StreamLabel::new(Purpose::Tie).round(c));
        let decoded = majority_vote(&votes, policy, &mut tie_rng).expect("equal-length votes");
        decoded.as_slice().iter().filter(|&&s| s != 1).count()
    });
    let rate = errors.iter().sum::<usize>() as f64 / trials as f64;
    Ok(VoteErrorResult {
        rate,
        trials,
        std_error: (rate * (1.0 - rate) / trials as f64).sqrt(),
    })
}
