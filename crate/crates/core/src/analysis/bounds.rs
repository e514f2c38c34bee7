use serde::Serialize;

/// Constants entering the convergence bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundInputs {
    /// `F(w^(0)) - F*`.
    pub initial_gap: f64,
    pub smoothness: f64,
    /// Per-coordinate standard deviation bound of a single-sample gradient.
    pub noise_bound: f64,
    pub heterogeneity: f64,
    pub dim: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub global_rounds: usize,
    pub edge_rounds: usize,
    /// Quantizer factor; 0 without downlink quantization.
    pub psi: f64,
}

/// `(C, rhs)` with `C = 2 zeta + 2 sigma d / sqrt(B) + (3 T_E / 2 - 1) L mu`
/// and `rhs = gap / (mu T_G T_E) + C`.
pub fn theorem1_bound(b: &BoundInputs) -> (f64, f64) {
    let c = 2.0 * b.heterogeneity
        + 2.0 * b.noise_bound * b.dim as f64 / (b.batch_size as f64).sqrt()
        + (1.5 * b.edge_rounds as f64 - 1.0) * b.smoothness * b.step_size;
    (c, optimization_term(b) + c)
}

/// `(C_Z, rhs)` with `C_Z = C + psi sqrt(d) (3 + psi sqrt(d) / 2) L mu T_E`.
pub fn theorem4_bound(b: &BoundInputs) -> (f64, f64) {
    let (c, _) = theorem1_bound(b);
    let r = b.psi * (b.dim as f64).sqrt();
    let cz = c + r * (3.0 + r / 2.0) * b.smoothness * b.step_size * b.edge_rounds as f64;
    (cz, optimization_term(b) + cz)
}

fn optimization_term(b: &BoundInputs) -> f64 {
    b.initial_gap / (b.step_size * b.global_rounds as f64 * b.edge_rounds as f64)
}

/// Bound under `mu = 1/sqrt(T_G)`, `B = T_G`, `zeta = 0`:
/// `(gap / T_E + 2 sigma d + (3 T_E / 2 - 1) L) / sqrt(T_G)`.
pub fn corollary2_bound(initial_gap: f64, sigma: f64, dim: usize, smoothness: f64, edge_rounds: usize, global_rounds: usize) -> f64 {
    let c_tilde = 2.0 * sigma * dim as f64 + (1.5 * edge_rounds as f64 - 1.0) * smoothness;
    (initial_gap / edge_rounds as f64 + c_tilde) / (global_rounds as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> BoundInputs {
        BoundInputs {
            initial_gap: 3.0,
            smoothness: 1.0,
            noise_bound: 1.0,
            heterogeneity: 0.0,
            dim: 2,
            batch_size: 4,
            step_size: 0.1,
            global_rounds: 10,
            edge_rounds: 2,
            psi: 0.0,
        }
    }

    #[test]
    fn uncompressed_bound_worked_example() {
        let (c, rhs) = theorem1_bound(&inputs());
        assert!((c - 2.2).abs() < 1e-12);
        assert!((rhs - (3.0 / (0.1 * 10.0 * 2.0) + 2.2)).abs() < 1e-12);
    }

    #[test]
    fn noise_free_single_step() {
        let b = BoundInputs {
            noise_bound: 0.0,
            smoothness: 0.0,
            edge_rounds: 1,
            ..inputs()
        };
        let (c, rhs) = theorem1_bound(&b);
        assert_eq!(c, 0.0);
        assert!((rhs - 3.0 / (0.1 * 10.0)).abs() < 1e-12);
    }

    #[test]
    fn doubling_rounds_halves_first_term() {
        let b = inputs();
        let (c1, r1) = theorem1_bound(&b);
        let (c2, r2) = theorem1_bound(&BoundInputs {
            global_rounds: 20,
            ..b
        });
        assert_eq!(c1, c2);
        assert!(((r1 - c1) / 2.0 - (r2 - c2)).abs() < 1e-12);
    }

    #[test]
    fn sparse_downlink_bound_worked_example() {
        let b = BoundInputs {
            dim: 4,
            psi: 1.0,
            ..inputs()
        };
        let (c, _) = theorem1_bound(&b);
        let (cz, _) = theorem4_bound(&b);
        // psi sqrt(d) = 2: 2 * (3 + 1) * L mu T_E = 1.6
        assert!((cz - c - 1.6).abs() < 1e-12);
        assert_eq!(theorem4_bound(&inputs()), theorem1_bound(&inputs()));
    }

    #[test]
    fn tuned_bound_matches_substitution() {
        for tg in [4usize, 16, 100] {
            let b = BoundInputs {
                step_size: 1.0 / (tg as f64).sqrt(),
                batch_size: tg,
                global_rounds: tg,
                heterogeneity: 0.0,
                edge_rounds: 3,
                smoothness: 2.0,
                noise_bound: 0.5,
                dim: 7,
                ..inputs()
            };
            let (_, rhs) = theorem1_bound(&b);
            let cor = corollary2_bound(b.initial_gap, 0.5, 7, 2.0, 3, tg);
            assert!((rhs - cor).abs() < 1e-12 * cor);
        }
        let v1 = corollary2_bound(5.0, 1.0, 3, 1.0, 2, 16);
        let v4 = corollary2_bound(5.0, 1.0, 3, 1.0, 2, 64);
        assert!((v1 / 2.0 - v4).abs() < 1e-12);
        assert!((corollary2_bound(6.0, 0.0, 3, 0.0, 2, 9) - 1.0).abs() < 1e-12);
    }
}
