use serde::Serialize;

use crate::config::{Hierarchy, Schedule};

/// What travels on the device-edge links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BitMode {
    /// One bit per coordinate up and down each edge step.
    Sign,
    /// 32-bit floats per coordinate up and down each edge step.
    Full32,
    /// Sign steps plus a sparsified model broadcast with `n` entries.
    QuantizedDownlink(usize),
}

/// Bits for one sparse downlink entry: a `ceil(log2 d)`-bit index and a
/// 32-bit value.
pub fn downlink_entry_bits(dim: usize) -> u64 {
    let index_bits = if dim <= 1 { 0 } else { usize::BITS - (dim - 1).leading_zeros() };
    index_bits as u64 + 32
}

impl BitMode {
    pub fn uplink_bits_per_device(&self, dim: usize) -> u64 {
        match self {
            BitMode::Full32 => 32 * dim as u64,
            _ => dim as u64,
        }
    }

    /// Per-edge broadcast of the step result (vote or model update).
    pub fn step_downlink_bits(&self, dim: usize) -> u64 {
        self.uplink_bits_per_device(dim)
    }

    /// Per-edge broadcast of the new global model at the start of a round.
    pub fn round_broadcast_bits(&self, dim: usize) -> u64 {
        match *self {
            BitMode::QuantizedDownlink(n) if n < dim => n as u64 * downlink_entry_bits(dim),
            BitMode::QuantizedDownlink(_) => dim as u64 * downlink_entry_bits(dim),
            _ => 32 * dim as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BitReport {
    /// All devices, one global round.
    pub uplink_bits_per_round: u64,
    /// All edges, one global round after the first.
    pub downlink_bits_per_round: u64,
    /// One device's uplink payload per edge step.
    pub device_payload_bits: u64,
    /// `device_payload_bits / interval`, in bits per second.
    pub device_uplink_rate: f64,
}

/// Device-edge traffic of one global round.
pub fn bit_accounting(dim: usize, schedule: &Schedule, hierarchy: &Hierarchy, mode: BitMode, interval_s: f64) -> BitReport {
    assert!(interval_s > 0.0, "reporting interval must be positive");
    let te = schedule.edge_rounds as u64;
    let payload = mode.uplink_bits_per_device(dim);
    let edges = hierarchy.num_edges() as u64;
    BitReport {
        uplink_bits_per_round: te * hierarchy.num_devices() as u64 * payload,
        downlink_bits_per_round: edges * (te * mode.step_downlink_bits(dim) + mode.round_broadcast_bits(dim)),
        device_payload_bits: payload,
        device_uplink_rate: payload as f64 / interval_s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::TiePolicy;

    fn schedule() -> Schedule {
        Schedule {
            global_rounds: 1,
            edge_rounds: 30,
            step_size: 5e-3,
            batch_size: 400,
            tie_policy: TiePolicy::Random,
            rng_seed: 0,
        }
    }

    #[test]
    fn table_rates() {
        let h = Hierarchy::uniform(4, 5, 10).unwrap();
        let r = bit_accounting(23_860, &schedule(), &h, BitMode::Sign, 0.01);
        assert!((r.device_uplink_rate / 1e6 - 2.386).abs() < 1e-9);
        let r = bit_accounting(23_860, &schedule(), &h, BitMode::Full32, 0.01);
        assert!((r.device_uplink_rate / 1e6 - 76.352).abs() < 1e-9);
        let r = bit_accounting(421_642, &schedule(), &h, BitMode::Sign, 0.01);
        assert!((r.device_uplink_rate / 1e6 - 42.1642).abs() < 1e-9);
    }

    #[test]
    fn round_totals() {
        let h = Hierarchy::uniform(4, 5, 10).unwrap();
        let d = 100;
        let r = bit_accounting(d, &schedule(), &h, BitMode::Sign, 0.01);
        assert_eq!(r.uplink_bits_per_round, 30 * 20 * 100);
        assert_eq!(r.downlink_bits_per_round, 4 * (30 * 100 + 3200));
        let r = bit_accounting(d, &schedule(), &h, BitMode::QuantizedDownlink(6), 0.01);
        assert_eq!(r.downlink_bits_per_round, 4 * (30 * 100 + 6 * (7 + 32)));
    }

    #[test]
    fn index_width() {
        assert_eq!(downlink_entry_bits(1), 32);
        assert_eq!(downlink_entry_bits(2), 33);
        assert_eq!(downlink_entry_bits(100), 39);
        assert_eq!(downlink_entry_bits(128), 39);
        assert_eq!(downlink_entry_bits(129), 40);
        assert_eq!(downlink_entry_bits(23_860), 47);
    }
}
