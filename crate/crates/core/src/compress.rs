//! Compression primitives: element-wise sign, majority vote, the unbiased
//! `n`-of-`d` random sparsifier, and the 1-bit sign wire format.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompressError {
    #[error("NaN at coordinate {index}")]
    NaN { index: usize },
    #[error("vote {vote} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        vote: usize,
        expected: usize,
        found: usize,
    },
    #[error("majority vote needs at least one vote")]
    NoVotes,
    #[error("payload is {found} bytes, expected {expected} for d = {dim}")]
    PayloadLength {
        dim: usize,
        expected: usize,
        found: usize,
    },
    #[error("coordinate {index} is 0; the binary wire format carries only +1/-1")]
    ZeroOnWire { index: usize },
    #[error("sparsifier needs 1 <= n <= d, got n = {n}, d = {d}")]
    Sparsifier { n: usize, d: usize },
}

/// How a zero vote sum (possible only for even `M`) is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Seeded fair coin.
    #[default]
    Random,
    PlusOne,
    /// Leave the coordinate at 0. The result can no longer be packed into
    /// the 1-bit wire format, so this is for in-memory simulation only.
    Zero,
}

/// Per-coordinate signs. Entries are `+1`/`-1`; a `0` can only appear in
/// the output of [`majority_vote`] under [`TiePolicy::Zero`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignVector(Vec<i8>);

impl SignVector {
    /// Wraps raw entries, which must lie in `{-1, 0, +1}`.
    pub fn from_entries(entries: Vec<i8>) -> Self {
        debug_assert!(entries.iter().all(|s| (-1..=1).contains(s)));
        Self(entries)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<i8> {
        self.0
    }

    pub fn is_binary(&self) -> bool {
        self.0.iter().all(|&s| s != 0)
    }
}

/// `sgn(v)` with the device convention `sgn(0) = +1`, so every coordinate
/// costs exactly one bit on the uplink.
pub fn sign(v: &[f64]) -> Result<SignVector, CompressError> {
    v.iter()
        .enumerate()
        .map(|(index, &x)| {
            if x.is_nan() {
                Err(CompressError::NaN { index })
            } else if x < 0.0 {
                Ok(-1)
            } else {
                Ok(1)
            }
        })
        .collect::<Result<Vec<_>, _>>()
        .map(SignVector)
}

/// `sgn(sum_k votes_k)` coordinate-wise. The tie policy is consulted only
/// for zero sums; `rng` is untouched when `M` is odd.
pub fn majority_vote<R: Rng + ?Sized>(
    votes: &[SignVector],
    policy: TiePolicy,
    rng: &mut R,
) -> Result<SignVector, CompressError> {
    let first = votes.first().ok_or(CompressError::NoVotes)?;
    let dim = first.len();
    for (i, v) in votes.iter().enumerate() {
        if v.len() != dim {
            return Err(CompressError::DimensionMismatch {
                vote: i,
                expected: dim,
                found: v.len(),
            });
        }
    }
    if votes.len() == 1 {
        return Ok(first.clone());
    }

    let mut tally = vec![0i32; dim];
    for v in votes {
        for (t, &s) in tally.iter_mut().zip(&v.0) {
            *t += s as i32;
        }
    }
    let out = tally
        .into_iter()
        .map(|t| match t.signum() {
            0 => match policy {
                TiePolicy::Random => {
                    if rng.random::<bool>() {
                        1
                    } else {
                        -1
                    }
                }
                TiePolicy::PlusOne => 1,
                TiePolicy::Zero => 0,
            },
            s => s as i8,
        })
        .collect();
    Ok(SignVector(out))
}

/// The `n`-active-component sparsifier `Z(x) = (d/n)(e ⊙ x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsifierSpec {
    dim: usize,
    active: usize,
}

impl SparsifierSpec {
    pub fn new(dim: usize, active: usize) -> Result<Self, CompressError> {
        if active == 0 || active > dim {
            return Err(CompressError::Sparsifier { n: active, d: dim });
        }
        Ok(Self { dim, active })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn active(&self) -> usize {
        self.active
    }

    pub fn is_identity(&self) -> bool {
        self.active == self.dim
    }

    /// `d / n`.
    pub fn scale(&self) -> f64 {
        self.dim as f64 / self.active as f64
    }

    /// `psi^2 = d/n - 1`, the exact variance factor of this sparsifier.
    pub fn psi_squared(&self) -> f64 {
        self.scale() - 1.0
    }

    pub fn psi(&self) -> f64 {
        self.psi_squared().sqrt()
    }
}

/// A sparsified vector as it travels on the downlink: `n` indices
/// (ascending) and their already-scaled values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseUpdate {
    pub dim: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseUpdate {
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] = v;
        }
        out
    }
}

/// Draws the mask (uniform, without replacement) and scales the kept
/// coordinates by `d/n`.
pub fn sparsify<R: Rng + ?Sized>(x: &[f64], spec: SparsifierSpec, rng: &mut R) -> SparseUpdate {
    assert_eq!(x.len(), spec.dim, "sparsifier dimension mismatch");
    let scale = spec.scale();
    let mut indices = index::sample(rng, spec.dim, spec.active).into_vec();
    indices.sort_unstable();
    let values = indices.iter().map(|&i| scale * x[i]).collect();
    SparseUpdate {
        dim: spec.dim,
        indices,
        values,
    }
}

/// Dense form of [`sparsify`]. With `n = d` the output equals `x` exactly.
pub fn random_sparsify<R: Rng + ?Sized>(x: &[f64], spec: SparsifierSpec, rng: &mut R) -> Vec<f64> {
    sparsify(x, spec, rng).to_dense()
}

/// Bytes needed for `d` packed signs.
pub fn packed_len(dim: usize) -> usize {
    dim.div_ceil(8)
}

/// Packs signs LSB-first: bit `i % 8` of byte `i / 8` is set iff sign `i`
/// is `+1`. Padding bits in the last byte are zero.
pub fn pack_signs(s: &SignVector) -> Result<Vec<u8>, CompressError> {
    let mut out = vec![0u8; packed_len(s.len())];
    for (i, &v) in s.0.iter().enumerate() {
        match v {
            1 => out[i / 8] |= 1 << (i % 8),
            -1 => {}
            _ => return Err(CompressError::ZeroOnWire { index: i }),
        }
    }
    Ok(out)
}

pub fn unpack_signs(payload: &[u8], dim: usize) -> Result<SignVector, CompressError> {
    let expected = packed_len(dim);
    if payload.len() != expected {
        return Err(CompressError::PayloadLength {
            dim,
            expected,
            found: payload.len(),
        });
    }
    let out = (0..dim)
        .map(|i| if payload[i / 8] >> (i % 8) & 1 == 1 { 1 } else { -1 })
        .collect();
    Ok(SignVector(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{fork_rng, Purpose, StreamLabel};

    fn rng() -> crate::config::StreamRng {
        fork_rng(11, StreamLabel::new(Purpose::Trial))
    }

    fn sv(v: &[i8]) -> SignVector {
        SignVector::from_entries(v.to_vec())
    }

    #[test]
    fn sign_maps_zero_to_plus_one() {
        assert_eq!(sign(&[-0.5, 0.0, 3.2]).unwrap(), sv(&[-1, 1, 1]));
        assert_eq!(sign(&[-0.0]).unwrap(), sv(&[1]));
    }

    #[test]
    fn sign_rejects_nan() {
        assert_eq!(sign(&[1.0, f64::NAN]), Err(CompressError::NaN { index: 1 }));
    }

    #[test]
    fn sign_handles_infinities() {
        assert_eq!(sign(&[f64::INFINITY, f64::NEG_INFINITY]).unwrap(), sv(&[1, -1]));
    }

    #[test]
    fn two_against_one() {
        let votes = [sv(&[1]), sv(&[1]), sv(&[-1])];
        assert_eq!(majority_vote(&votes, TiePolicy::Random, &mut rng()).unwrap(), sv(&[1]));
    }

    #[test]
    fn single_vote_is_identity() {
        let v = sv(&[1, -1, -1, 1]);
        assert_eq!(
            majority_vote(std::slice::from_ref(&v), TiePolicy::Zero, &mut rng()).unwrap(),
            v
        );
    }

    #[test]
    fn tie_policies() {
        let votes = [sv(&[1, 1]), sv(&[-1, 1])];
        let plus = majority_vote(&votes, TiePolicy::PlusOne, &mut rng()).unwrap();
        assert_eq!(plus, sv(&[1, 1]));
        let zero = majority_vote(&votes, TiePolicy::Zero, &mut rng()).unwrap();
        assert_eq!(zero, sv(&[0, 1]));
        assert!(!zero.is_binary());
        assert!(pack_signs(&zero).is_err());
        let random = majority_vote(&votes, TiePolicy::Random, &mut rng()).unwrap();
        assert!(random.is_binary());
        assert_eq!(random.as_slice()[1], 1);
    }

    #[test]
    fn random_ties_are_fair() {
        let votes = [sv(&vec![1; 20_000]), sv(&vec![-1; 20_000])];
        let out = majority_vote(&votes, TiePolicy::Random, &mut rng()).unwrap();
        let plus = out.as_slice().iter().filter(|&&s| s == 1).count() as f64 / 20_000.0;
        // 4 sigma of a fair coin over 20k draws
        assert!((plus - 0.5).abs() < 4.0 * (0.25f64 / 20_000.0).sqrt());
    }

    #[test]
    fn odd_votes_never_touch_the_rng() {
        use rand::RngCore;
        let votes = [sv(&[1, -1]), sv(&[-1, -1]), sv(&[1, 1])];
        let mut a = rng();
        majority_vote(&votes, TiePolicy::Random, &mut a).unwrap();
        assert_eq!(a.next_u64(), rng().next_u64());
    }

    #[test]
    fn vote_dimension_mismatch() {
        let votes = [sv(&[1, 1]), sv(&[1])];
        assert_eq!(
            majority_vote(&votes, TiePolicy::Random, &mut rng()),
            Err(CompressError::DimensionMismatch {
                vote: 1,
                expected: 2,
                found: 1
            })
        );
        assert_eq!(
            majority_vote(&[], TiePolicy::Random, &mut rng()),
            Err(CompressError::NoVotes)
        );
    }

    #[test]
    fn sparsifier_identity_case() {
        let x: Vec<f64> = (0..37).map(|i| (i as f64).sin()).collect();
        let spec = SparsifierSpec::new(37, 37).unwrap();
        assert!(spec.is_identity());
        assert_eq!(spec.psi_squared(), 0.0);
        assert_eq!(random_sparsify(&x, spec, &mut rng()), x);
    }

    #[test]
    fn sparsifier_keeps_exactly_n() {
        let x = vec![1.0; 100];
        let spec = SparsifierSpec::new(100, 6).unwrap();
        let z = sparsify(&x, spec, &mut rng());
        assert_eq!(z.indices.len(), 6);
        assert!(z.indices.windows(2).all(|w| w[0] < w[1]));
        let dense = z.to_dense();
        assert_eq!(dense.iter().filter(|&&v| v != 0.0).count(), 6);
        assert!(dense.iter().all(|&v| v == 0.0 || v == 100.0 / 6.0));
    }

    #[test]
    fn sparsifier_spec_bounds() {
        assert!(SparsifierSpec::new(10, 0).is_err());
        assert!(SparsifierSpec::new(10, 11).is_err());
        let s = SparsifierSpec::new(100, 6).unwrap();
        assert!((s.psi_squared() - (100.0 / 6.0 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn packed_size_of_the_mlp() {
        assert_eq!(packed_len(23_860), 2_983);
        let s = SignVector::from_entries(vec![1; 23_860]);
        assert_eq!(pack_signs(&s).unwrap().len(), 2_983);
    }

    #[test]
    fn bit_layout() {
        let s = SignVector::from_entries(vec![1; 9]);
        assert_eq!(pack_signs(&s).unwrap(), vec![0xFF, 0x01]);
        let s = sv(&[-1, 1, -1, -1, -1, -1, -1, -1, 1, -1]);
        assert_eq!(pack_signs(&s).unwrap(), vec![0b0000_0010, 0b0000_0001]);
    }

    #[test]
    fn unpack_rejects_wrong_length() {
        assert!(matches!(
            unpack_signs(&[0u8; 3], 9),
            Err(CompressError::PayloadLength { expected: 2, .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn finite() -> impl Strategy<Value = f64> {
            prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL
        }

        proptest! {
            #[test]
            fn sign_is_idempotent(v in prop::collection::vec(finite(), 0..64)) {
                let s = sign(&v).unwrap();
                let as_f64: Vec<f64> = s.as_slice().iter().map(|&x| x as f64).collect();
                prop_assert_eq!(sign(&as_f64).unwrap(), s);
            }

            #[test]
            fn sign_is_scale_invariant(v in prop::collection::vec(-1e6f64..1e6, 0..64), c in 1e-3f64..1e3) {
                let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
                prop_assert_eq!(sign(&scaled).unwrap(), sign(&v).unwrap());
            }

            #[test]
            fn sign_is_odd_away_from_zero(v in prop::collection::vec(prop::num::f64::NORMAL, 0..64)) {
                let neg: Vec<f64> = v.iter().map(|x| -x).collect();
                let a = sign(&v).unwrap();
                let b = sign(&neg).unwrap();
                for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                    prop_assert_eq!(*x, -*y);
                }
            }

            #[test]
            fn pack_unpack_is_a_bijection(bits in prop::collection::vec(any::<bool>(), 0..300)) {
                let s = SignVector::from_entries(bits.iter().map(|&b| if b { 1 } else { -1 }).collect());
                let payload = pack_signs(&s).unwrap();
                prop_assert_eq!(payload.len(), packed_len(s.len()));
                if !s.len().is_multiple_of(8) {
                    prop_assert_eq!(payload.last().unwrap() >> (s.len() % 8), 0);
                }
                prop_assert_eq!(unpack_signs(&payload, s.len()).unwrap(), s);
            }

            #[test]
            fn odd_vote_matches_tally(
                votes in prop::collection::vec(prop::collection::vec(any::<bool>(), 16), 1..8)
            ) {
                let votes: Vec<_> = votes
                    .iter()
                    .map(|v| SignVector::from_entries(v.iter().map(|&b| if b { 1 } else { -1 }).collect()))
                    .collect();
                let m = votes.len();
                let out = majority_vote(&votes, TiePolicy::Zero, &mut rng()).unwrap();
                for i in 0..16 {
                    let plus = votes.iter().filter(|v| v.as_slice()[i] == 1).count();
                    let expected = (2 * plus).cmp(&m) as i8;
                    prop_assert_eq!(out.as_slice()[i], expected);
                }
            }
        }
    }
}
