//! Hankel matrices and windowed data vectors assembled from trajectories.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numlin;

/// Block-Hankel matrix of a `T x d` signal: column `j` stacks the window of
/// `window` consecutive samples starting at sample `j`.
#[derive(Debug, Clone)]
pub struct HankelStack {
    pub signal_dim: usize,
    pub window: usize,
    pub matrix: DMatrix<f64>,
}

impl HankelStack {
    /// Number of windows (columns), `T - L + 1`.
    pub fn depth(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Build the Hankel matrix of `signal` with window length `window`.
pub fn hankel(signal: &DMatrix<f64>, window: usize) -> Result<HankelStack> {
    let t_len = signal.nrows();
    let dim = signal.ncols();
    if window == 0 {
        return Err(Error::HorizonTooShort("window must be at least 1".into()));
    }
    if window > t_len {
        return Err(Error::WindowTooLong { window, len: t_len });
    }
    let depth = t_len - window + 1;
    let mut m = DMatrix::zeros(window * dim, depth);
    for j in 0..depth {
        for i in 0..window {
            for s in 0..dim {
                m[(i * dim + s, j)] = signal[(j + i, s)];
            }
        }
    }
    Ok(HankelStack { signal_dim: dim, window, matrix: m })
}

/// Stacked window `[w_k; ...; w_{k+L-1}]` of a `T x d` signal.
pub fn window(signal: &DMatrix<f64>, k: usize, window: usize) -> Result<DVector<f64>> {
    let t_len = signal.nrows();
    let dim = signal.ncols();
    if window == 0 {
        return Err(Error::HorizonTooShort("window must be at least 1".into()));
    }
    if k + window > t_len {
        return Err(Error::OutOfRange(format!(
            "window [{k}, {}) exceeds signal length {t_len}",
            k + window
        )));
    }
    let mut v = DVector::zeros(window * dim);
    for i in 0..window {
        for s in 0..dim {
            v[i * dim + s] = signal[(k + i, s)];
        }
    }
    Ok(v)
}

/// Result of the data-rank condition `rank [X; U] = n + L n_u`.
#[derive(Debug, Clone)]
pub struct RankConditionReport {
    pub satisfied: bool,
    pub rank: usize,
    pub required: usize,
}

/// Check the stacked state/input data-rank condition. Available only where
/// states are known (simulation oracles); the data-driven path never needs it.
pub fn check_rank_condition(
    states: &DMatrix<f64>,
    u_hankel: &HankelStack,
) -> Result<RankConditionReport> {
    if states.ncols() != u_hankel.depth() {
        return Err(Error::DimensionMismatch(format!(
            "state depth {} vs Hankel depth {}",
            states.ncols(),
            u_hankel.depth()
        )));
    }
    let n = states.nrows();
    let required = n + u_hankel.matrix.nrows();
    let mut stacked = DMatrix::zeros(required, u_hankel.depth());
    stacked.rows_mut(0, n).copy_from(states);
    stacked.rows_mut(n, u_hankel.matrix.nrows()).copy_from(&u_hankel.matrix);
    let rank = numlin::numerical_rank(&stacked, numlin::DEFAULT_REL_TOL)?.numerical_rank;
    Ok(RankConditionReport { satisfied: rank == required, rank, required })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{self, presets, FaultScenario, InputKind, NoiseSetting};
    use proptest::prelude::*;

    #[test]
    fn hankel_scalar_expansion() {
        let signal = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let h = hankel(&signal, 2).unwrap();
        let expected = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0]);
        assert_eq!(h.matrix, expected);
    }

    #[test]
    fn hankel_degenerate_depth() {
        let signal = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let h = hankel(&signal, 3).unwrap();
        assert_eq!(h.depth(), 1);
        assert_eq!(h.matrix.column(0), window(&signal, 0, 3).unwrap().column(0));
    }

    #[test]
    fn hankel_rejects_long_window() {
        let signal = DMatrix::zeros(3, 1);
        assert!(matches!(
            hankel(&signal, 4),
            Err(Error::WindowTooLong { window: 4, len: 3 })
        ));
    }

    #[test]
    fn benchmark_prbs_hankel_shape() {
        let u = system::generate_input(&InputKind::Prbs { amplitude: 1.0, seed: 42 }, 1000, 1)
            .unwrap();
        let h = hankel(&u, 15).unwrap();
        assert_eq!((h.matrix.nrows(), h.depth()), (15, 986));
    }

    #[test]
    fn window_out_of_range() {
        let signal = DMatrix::zeros(5, 1);
        assert!(window(&signal, 5, 1).is_err());
        assert!(window(&signal, 3, 3).is_err());
        assert!(window(&signal, 4, 1).is_ok());
    }

    #[test]
    fn rank_condition_zero_data_fails() {
        let states = DMatrix::zeros(2, 5);
        let u = DMatrix::zeros(6, 1);
        let h = hankel(&u, 2).unwrap();
        let rep = check_rank_condition(&states, &h).unwrap();
        assert!(!rep.satisfied);
        assert_eq!(rep.rank, 0);
    }

    #[test]
    fn rank_condition_prbs_satisfied_sinusoid_not() {
        let model = presets::benchmark_plant();
        let horizon = 15;
        let u = system::generate_input(&InputKind::Prbs { amplitude: 1.0, seed: 42 }, 400, 1)
            .unwrap();
        let traj =
            system::simulate(&model, &u, &FaultScenario::empty(), NoiseSetting::Off, None).unwrap();
        let h = hankel(&traj.u, horizon).unwrap();
        let states = traj.states.as_ref().unwrap().rows(0, h.depth()).transpose();
        let rep = check_rank_condition(&states.clone_owned(), &h).unwrap();
        assert!(rep.satisfied, "PRBS should satisfy the rank condition");

        // A single sinusoid is persistently exciting of order 2 only.
        let t_len = 400;
        let u_sin = DMatrix::from_fn(t_len, 1, |k, _| (0.3 * k as f64).sin());
        let traj2 = system::simulate(&model, &u_sin, &FaultScenario::empty(), NoiseSetting::Off, None)
            .unwrap();
        let h2 = hankel(&traj2.u, horizon).unwrap();
        let states2 = traj2.states.as_ref().unwrap().rows(0, h2.depth()).transpose();
        let rep2 = check_rank_condition(&states2.clone_owned(), &h2).unwrap();
        assert!(!rep2.satisfied);
    }

    proptest! {
        #[test]
        fn hankel_columns_are_windows(t_len in 3usize..20, dim in 1usize..3, win in 1usize..4) {
            prop_assume!(win <= t_len);
            let signal = DMatrix::from_fn(t_len, dim, |i, j| (i * dim + j) as f64 * 0.37 - 1.0);
            let h = hankel(&signal, win).unwrap();
            for j in 0..h.depth() {
                let w = window(&signal, j, win).unwrap();
                prop_assert_eq!(h.matrix.column(j).clone_owned(), w);
            }
            // shift structure: top rows of column j+1 equal bottom rows of column j
            let d = signal.ncols();
            for j in 0..h.depth().saturating_sub(1) {
                let top = h.matrix.column(j + 1).rows(0, (win - 1) * d).clone_owned();
                let bottom = h.matrix.column(j).rows(d, (win - 1) * d).clone_owned();
                prop_assert_eq!(top, bottom);
            }
        }
    }
}
