//! Frozen accuracy bounds.
//!
//! The bounds below came from one measurement run against direct summation.
//! The worst case over uniform cubes (N = 2000, 4096 and 5000, three seeds,
//! depth 3) and a 32768-point sphere surface (depths 3 and 4) was rounded up
//! by roughly a factor of two. They are regression bounds, not theory.

/// Relative L2 bound against direct summation for 64-bit runs, by expansion order.
pub const EPSILON_F64: [(usize, f64); 7] = [
    (2, 5e-2),
    (3, 6e-4),
    (4, 1.2e-4),
    (5, 5e-6),
    (6, 7e-7),
    (7, 3e-8),
    (8, 1.2e-8),
];

/// The same for 32-bit runs. Single precision and the wider SVD cutoff flatten
/// the error near `1e-4` from order 4 upwards.
pub const EPSILON_F32: [(usize, f64); 7] = [
    (2, 5e-2),
    (3, 6e-4),
    (4, 2e-4),
    (5, 3e-4),
    (6, 4e-4),
    (7, 4e-4),
    (8, 8e-4),
];

/// Worst-case errors seen in the measurement run, kept for the record.
pub const MEASURED_F64: [(usize, f64); 7] = [
    (2, 2.30e-2),
    (3, 2.78e-4),
    (4, 5.85e-5),
    (5, 1.96e-6),
    (6, 3.33e-7),
    (7, 1.45e-8),
    (8, 5.34e-9),
];

/// Direct summation is only run as an oracle up to this many points.
pub const DIRECT_SUM_CAP: usize = 100_000;

fn lookup(table: &[(usize, f64)], order: usize) -> Option<f64> {
    table.iter().find(|(o, _)| *o == order).map(|(_, e)| *e)
}

/// Frozen bound for `order` at `bits` precision, if one was measured.
pub fn frozen_epsilon(order: usize, bits: u32) -> Option<f64> {
    match bits {
        64 => lookup(&EPSILON_F64, order),
        32 => lookup(&EPSILON_F32, order),
        _ => None,
    }
}

/// Allowed relative L2 difference between the distributed and reference pipelines.
pub fn distributed_tolerance(bits: u32) -> f64 {
    if bits == 64 {
        1e-10
    } else {
        1e-5
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_are_consistent() {
        for ((o, eps), (m, measured)) in EPSILON_F64.iter().zip(MEASURED_F64.iter()) {
            assert_eq!(o, m);
            assert!(eps > measured);
        }
        assert!(EPSILON_F64.windows(2).all(|w| w[0].1 > w[1].1));
        assert_eq!(frozen_epsilon(6, 64), Some(7e-7));
        assert_eq!(frozen_epsilon(9, 64), None);
        assert_eq!(frozen_epsilon(3, 16), None);
    }
}
