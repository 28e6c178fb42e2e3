//! Kernel (parity-space) filter estimation from healthy input/output data,
//! residual generation, and the model-based bridge used for validation.
//!
//! The estimator LQ-factors the stacked input/output Hankel matrix, reads the
//! system order off the singular values of the `L22` block, and takes the
//! orthonormal left nullspace of the triangular factor as the filter rows.

use nalgebra::{DMatrix, DVector};

use crate::data;
use crate::error::{Error, Result};
use crate::numlin::{self, SubspaceBasis};
use crate::system::StateSpaceModel;

/// How the system order is decided from the singular values of `L22`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankPolicy {
    /// Trust a known order.
    FixedOrder(usize),
    /// Pick the index with the largest ratio between consecutive singular
    /// values; reject if the best ratio is below `min_ratio`.
    GapHeuristic { min_ratio: f64 },
    /// Count singular values above `rel_tol * sigma_1`.
    Threshold { rel_tol: f64 },
}

impl RankPolicy {
    /// Gap heuristic with the default acceptance factor of 10.
    pub fn default_gap() -> Self {
        RankPolicy::GapHeuristic { min_ratio: 10.0 }
    }
}

/// Estimated kernel representation: rows annihilate every healthy windowed
/// trajectory, split into the input part `K_u` and the output part `K_y`.
#[derive(Debug, Clone)]
pub struct KernelFilter {
    horizon: usize,
    n_u: usize,
    n_y: usize,
    k_u: DMatrix<f64>,
    k_y: DMatrix<f64>,
    estimated_order: usize,
    rank_policy: RankPolicy,
    l11: DMatrix<f64>,
    l21: DMatrix<f64>,
    l21_basis: SubspaceBasis,
    l22_basis: SubspaceBasis,
    l22_singular_values: Vec<f64>,
}

impl KernelFilter {
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn input_dim(&self) -> usize {
        self.n_u
    }
    pub fn output_dim(&self) -> usize {
        self.n_y
    }
    /// Number of residual rows, `L n_y - estimated_order`.
    pub fn residual_dim(&self) -> usize {
        self.k_y.nrows()
    }
    pub fn estimated_order(&self) -> usize {
        self.estimated_order
    }
    pub fn rank_policy(&self) -> RankPolicy {
        self.rank_policy
    }
    pub fn k_u(&self) -> &DMatrix<f64> {
        &self.k_u
    }
    pub fn k_y(&self) -> &DMatrix<f64> {
        &self.k_y
    }
    /// Triangular factor block mapping input windows into output windows.
    pub fn l21(&self) -> &DMatrix<f64> {
        &self.l21
    }
    pub fn l11(&self) -> &DMatrix<f64> {
        &self.l11
    }
    /// Orthonormal basis of the recovered range of the input Toeplitz map.
    pub fn l21_basis(&self) -> &SubspaceBasis {
        &self.l21_basis
    }
    /// Orthonormal basis of the recovered extended-observability range.
    pub fn l22_basis(&self) -> &SubspaceBasis {
        &self.l22_basis
    }
    /// Singular values of the `L22` block (descending), for order diagnostics.
    pub fn l22_singular_values(&self) -> &[f64] {
        &self.l22_singular_values
    }

    /// Reassemble a filter from stored parts (deserialization path); checks
    /// dimensions and row orthonormality.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        horizon: usize,
        n_u: usize,
        n_y: usize,
        k_u: DMatrix<f64>,
        k_y: DMatrix<f64>,
        estimated_order: usize,
        rank_policy: RankPolicy,
        l11: DMatrix<f64>,
        l21: DMatrix<f64>,
        l21_basis: SubspaceBasis,
        l22_basis: SubspaceBasis,
    ) -> Result<Self> {
        let r = horizon * n_y - estimated_order;
        if k_u.nrows() != r
            || k_y.nrows() != r
            || k_u.ncols() != horizon * n_u
            || k_y.ncols() != horizon * n_y
        {
            return Err(Error::DimensionMismatch("kernel block shapes are inconsistent".into()));
        }
        if l11.nrows() != horizon * n_u
            || l11.ncols() != horizon * n_u
            || l21.nrows() != horizon * n_y
            || l21.ncols() != horizon * n_u
        {
            return Err(Error::DimensionMismatch("LQ block shapes are inconsistent".into()));
        }
        let mut stacked = DMatrix::zeros(r, horizon * (n_u + n_y));
        stacked.columns_mut(0, horizon * n_u).copy_from(&k_u);
        stacked.columns_mut(horizon * n_u, horizon * n_y).copy_from(&k_y);
        let gram = &stacked * stacked.transpose();
        if (gram - DMatrix::identity(r, r)).amax() > 1e-8 {
            return Err(Error::InvalidMatrix("kernel rows are not orthonormal".into()));
        }
        Ok(Self {
            horizon,
            n_u,
            n_y,
            k_u,
            k_y,
            estimated_order,
            rank_policy,
            l11,
            l21,
            l21_basis,
            l22_basis,
            l22_singular_values: vec![],
        })
    }

    /// Apply the filter to one stacked window pair.
    pub fn apply_window(&self, u_win: &DVector<f64>, y_win: &DVector<f64>) -> Result<DVector<f64>> {
        if u_win.len() != self.horizon * self.n_u || y_win.len() != self.horizon * self.n_y {
            return Err(Error::DimensionMismatch(format!(
                "window lengths {}/{} vs expected {}/{}",
                u_win.len(),
                y_win.len(),
                self.horizon * self.n_u,
                self.horizon * self.n_y
            )));
        }
        Ok(&self.k_u * u_win + &self.k_y * y_win)
    }
}

fn decide_order(singular_values: &[f64], policy: RankPolicy, max_order: usize) -> Result<usize> {
    let order = match policy {
        RankPolicy::FixedOrder(n) => n,
        RankPolicy::Threshold { rel_tol } => {
            if rel_tol <= 0.0 {
                return Err(Error::RankToleranceAmbiguous("rel_tol must be positive".into()));
            }
            let sigma1 = singular_values.first().copied().unwrap_or(0.0);
            singular_values.iter().filter(|&&s| s > rel_tol * sigma1).count()
        }
        RankPolicy::GapHeuristic { min_ratio } => {
            // Ratios between trailing roundoff values are meaningless; clamp
            // everything below a floor tied to sigma_1.
            let sigma1 = singular_values.first().copied().unwrap_or(0.0);
            let floor = sigma1 * 1e-12;
            let mut best: Option<(usize, f64)> = None;
            for i in 0..singular_values.len().saturating_sub(1) {
                if singular_values[i] <= floor {
                    break;
                }
                let ratio = singular_values[i] / singular_values[i + 1].max(floor);
                if best.map(|(_, b)| ratio > b).unwrap_or(true) {
                    best = Some((i + 1, ratio));
                }
            }
            let (order, ratio) =
                best.ok_or_else(|| Error::OrderAmbiguous("no singular values to inspect".into()))?;
            if ratio < min_ratio {
                return Err(Error::OrderAmbiguous(format!(
                    "best singular-value gap ratio {ratio:.2} below the configured factor {min_ratio}"
                )));
            }
            order
        }
    };
    if order >= max_order {
        return Err(Error::HorizonTooShort(format!(
            "estimated order {order} leaves no residual rows (L n_y = {max_order}); increase the horizon"
        )));
    }
    Ok(order)
}

/// Estimate the kernel filter from healthy data.
///
/// Builds the stacked Hankel matrix `[U; Y]`, LQ-factors it, estimates the
/// order from `L22`, and returns the orthonormal basis of the left nullspace
/// of the triangular factor restricted to `L n_y - order` rows.
pub fn estimate_kernel(
    u: &DMatrix<f64>,
    y: &DMatrix<f64>,
    horizon: usize,
    policy: RankPolicy,
) -> Result<KernelFilter> {
    if u.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "input length {} vs output length {}",
            u.nrows(),
            y.nrows()
        )));
    }
    let n_u = u.ncols();
    let n_y = y.ncols();
    let u_h = data::hankel(u, horizon)?;
    let y_h = data::hankel(y, horizon)?;
    let rows = horizon * (n_u + n_y);
    if u_h.depth() < rows {
        return Err(Error::NotPersistentlyExciting(format!(
            "only {} windows for {} stacked rows",
            u_h.depth(),
            rows
        )));
    }
    let mut stacked = DMatrix::zeros(rows, u_h.depth());
    stacked.rows_mut(0, horizon * n_u).copy_from(&u_h.matrix);
    stacked.rows_mut(horizon * n_u, horizon * n_y).copy_from(&y_h.matrix);

    let (l_fac, _) = numlin::lq_decompose(&stacked)?;
    let iu = horizon * n_u;
    let iy = horizon * n_y;
    let l11 = l_fac.view((0, 0), (iu, iu)).clone_owned();
    let l21 = l_fac.view((iu, 0), (iy, iu)).clone_owned();
    let l22 = l_fac.view((iu, iu), (iy, iy)).clone_owned();

    let l11_rank = numlin::numerical_rank(&l11, numlin::DEFAULT_REL_TOL)?;
    if l11_rank.numerical_rank < iu {
        return Err(Error::NotPersistentlyExciting(format!(
            "L11 rank {} < {iu}; the input is not persistently exciting of order {horizon}",
            l11_rank.numerical_rank
        )));
    }

    let l22_decision = numlin::numerical_rank(&l22, numlin::DEFAULT_REL_TOL)?;
    let order = decide_order(&l22_decision.singular_values, policy, iy)?;
    let residual_dim = iy - order;

    // Left nullspace (smallest left singular directions) of the full factor.
    let (u_fac, _, _) = crate::numlin::sorted_svd(&l_fac);
    let k = u_fac.columns(rows - residual_dim, residual_dim).transpose();
    let k_u = k.columns(0, iu).clone_owned();
    let k_y = k.columns(iu, iy).clone_owned();

    let l21_basis = numlin::range_basis(&l21, numlin::DEFAULT_REL_TOL)?;
    // The observability-range estimate keeps exactly `order` directions.
    let (u22, _, _) = crate::numlin::sorted_svd(&l22);
    let l22_basis = SubspaceBasis::from_orthonormal(u22.columns(0, order).clone_owned())?;

    Ok(KernelFilter {
        horizon,
        n_u,
        n_y,
        k_u,
        k_y,
        estimated_order: order,
        rank_policy: policy,
        l11,
        l21,
        l21_basis,
        l22_basis,
        l22_singular_values: l22_decision.singular_values,
    })
}

/// Model-based ("nominal") kernel filter: the parity basis is the exact left
/// nullspace of the extended observability matrix and `K_u = -K_y T_u`.
/// The LQ-block fields are populated with their exact counterparts so the
/// dictionary builders work identically on both filter kinds.
pub fn exact_kernel(model: &StateSpaceModel, horizon: usize) -> Result<KernelFilter> {
    let n = model.order();
    let n_u = model.input_dim();
    let n_y = model.output_dim();
    if horizon * n_y <= n {
        return Err(Error::HorizonTooShort(format!(
            "L n_y = {} does not exceed the system order {n}",
            horizon * n_y
        )));
    }
    let o_l = model.extended_observability(horizon, None)?;
    let t_u = crate::system::toeplitz(model, &crate::system::ChannelSet::InputAll, horizon, None)?;
    let parity = numlin::left_nullspace(&o_l, numlin::DEFAULT_REL_TOL)?;
    let residual_dim = horizon * n_y - n;
    if parity.dim() != residual_dim {
        return Err(Error::RankToleranceAmbiguous(format!(
            "parity dimension {} differs from L n_y - n = {residual_dim}",
            parity.dim()
        )));
    }
    let k_y_raw = parity.matrix().transpose();
    let k_u_raw = -&k_y_raw * &t_u;

    // Orthonormalize the stacked rows; row combinations stay inside the kernel.
    let mut stacked = DMatrix::zeros(residual_dim, horizon * (n_u + n_y));
    stacked.columns_mut(0, horizon * n_u).copy_from(&k_u_raw);
    stacked.columns_mut(horizon * n_u, horizon * n_y).copy_from(&k_y_raw);
    let row_basis = numlin::range_basis(&stacked.transpose(), numlin::DEFAULT_REL_TOL)?;
    if row_basis.dim() != residual_dim {
        return Err(Error::RankToleranceAmbiguous(
            "kernel rows lost rank during orthonormalization".into(),
        ));
    }
    let k = row_basis.matrix().transpose();
    let k_u = k.columns(0, horizon * n_u).clone_owned();
    let k_y = k.columns(horizon * n_u, horizon * n_y).clone_owned();

    Ok(KernelFilter {
        horizon,
        n_u,
        n_y,
        k_u,
        k_y,
        estimated_order: n,
        rank_policy: RankPolicy::FixedOrder(n),
        l11: DMatrix::identity(horizon * n_u, horizon * n_u),
        l21: t_u.clone(),
        l21_basis: numlin::range_basis(&t_u, numlin::DEFAULT_REL_TOL)?,
        l22_basis: numlin::range_basis(&o_l, numlin::DEFAULT_REL_TOL)?,
        l22_singular_values: vec![],
    })
}

/// Residual signal over a trajectory; `times[i]` is the window-start sample
/// index of `vectors[i]`.
#[derive(Debug, Clone)]
pub struct ResidualTrace {
    pub times: Vec<usize>,
    pub vectors: Vec<DVector<f64>>,
}

impl ResidualTrace {
    pub fn dim(&self) -> usize {
        self.vectors.first().map(|v| v.len()).unwrap_or(0)
    }

    pub fn norms(&self) -> Vec<f64> {
        self.vectors.iter().map(|v| v.norm()).collect()
    }

    /// Restrict to window-start indices within `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> ResidualTrace {
        let mut times = Vec::new();
        let mut vectors = Vec::new();
        for (t, v) in self.times.iter().zip(&self.vectors) {
            if *t >= start && *t < end {
                times.push(*t);
                vectors.push(v.clone());
            }
        }
        ResidualTrace { times, vectors }
    }
}

/// Slide the filter over a trajectory; the residual at index `k` uses samples
/// `k .. k+L-1` and is attributed to the window start.
pub fn residual(filter: &KernelFilter, u: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<ResidualTrace> {
    if u.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "input length {} vs output length {}",
            u.nrows(),
            y.nrows()
        )));
    }
    if u.ncols() != filter.n_u || y.ncols() != filter.n_y {
        return Err(Error::DimensionMismatch(format!(
            "signal widths {}x{} vs filter {}x{}",
            u.ncols(),
            y.ncols(),
            filter.n_u,
            filter.n_y
        )));
    }
    let horizon = filter.horizon;
    if u.nrows() < horizon {
        return Err(Error::WindowTooLong { window: horizon, len: u.nrows() });
    }
    let count = u.nrows() - horizon + 1;
    let mut times = Vec::with_capacity(count);
    let mut vectors = Vec::with_capacity(count);
    for k in 0..count {
        let u_win = data::window(u, k, horizon)?;
        let y_win = data::window(y, k, horizon)?;
        times.push(k);
        vectors.push(filter.apply_window(&u_win, &y_win)?);
    }
    Ok(ResidualTrace { times, vectors })
}

/// Consistency of a filter against a ground-truth model.
#[derive(Debug, Clone)]
pub struct ParityReport {
    /// `max |K_y O_L|`
    pub max_observability_leak: f64,
    /// `max |K_u + K_y T_u|`
    pub max_toeplitz_mismatch: f64,
}

/// Bridge between the data-driven filter and a model oracle.
pub fn parity_check(filter: &KernelFilter, model: &StateSpaceModel) -> Result<ParityReport> {
    if model.input_dim() != filter.n_u || model.output_dim() != filter.n_y {
        return Err(Error::DimensionMismatch("model and filter dimensions differ".into()));
    }
    let o_l = model.extended_observability(filter.horizon, None)?;
    let t_u =
        crate::system::toeplitz(model, &crate::system::ChannelSet::InputAll, filter.horizon, None)?;
    Ok(ParityReport {
        max_observability_leak: (filter.k_y() * o_l).amax(),
        max_toeplitz_mismatch: (filter.k_u() + filter.k_y() * t_u).amax(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numlin::principal_angles;
    use crate::system::{
        self, presets, ChannelSet, FaultChannel, FaultScenario, FaultSegment, FaultSignal,
        InputKind, NoiseSetting,
    };

    fn healthy_prbs(t_len: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let model = presets::benchmark_plant();
        let u = system::generate_input(&InputKind::Prbs { amplitude: 1.0, seed }, t_len, 1).unwrap();
        let traj =
            system::simulate(&model, &u, &FaultScenario::empty(), NoiseSetting::Off, None).unwrap();
        (traj.u, traj.y)
    }

    /// Healthy data whose states are exactly sample-orthogonal to the input
    /// windows: flat-spectrum periodic input started at its cyclic fixed
    /// point, covering whole periods.
    fn healthy_decorrelated(
        model: &system::StateSpaceModel,
        period: usize,
        cycles: usize,
        horizon: usize,
        seed: u64,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let t_len = period * cycles + horizon - 1;
        let u = system::generate_input(
            &InputKind::FlatSpectrum { amplitude: 1.0, period, seed },
            t_len,
            model.input_dim(),
        )
        .unwrap();
        let one_period = u.rows(0, period).clone_owned();
        let x0 = system::cyclic_steady_state(model, &one_period).unwrap();
        let traj =
            system::simulate(model, &u, &FaultScenario::empty(), NoiseSetting::Off, Some(&x0))
                .unwrap();
        (traj.u, traj.y)
    }

    #[test]
    fn noise_free_estimation_dimensions_and_annihilation() {
        let (u, y) = healthy_prbs(500, 42);
        let filter = estimate_kernel(&u, &y, 5, RankPolicy::FixedOrder(4)).unwrap();
        assert_eq!(filter.residual_dim(), 11);
        assert_eq!(filter.estimated_order(), 4);

        let trace = residual(&filter, &u, &y).unwrap();
        assert_eq!(trace.vectors.len(), 496);
        let mut scale = 0.0f64;
        for k in 0..trace.times.len() {
            let u_win = data::window(&u, k, 5).unwrap();
            let y_win = data::window(&y, k, 5).unwrap();
            scale = scale.max((u_win.norm_squared() + y_win.norm_squared()).sqrt());
        }
        let max_norm = trace.norms().into_iter().fold(0.0f64, f64::max);
        assert!(max_norm <= 1e-8 * scale, "annihilation failed: {max_norm:.3e}");
    }

    #[test]
    fn gap_heuristic_recovers_order_noise_free() {
        let (u, y) = healthy_prbs(500, 42);
        let filter = estimate_kernel(&u, &y, 5, RankPolicy::default_gap()).unwrap();
        assert_eq!(filter.estimated_order(), 4);
        assert_eq!(filter.residual_dim(), 11);
        let by_threshold = estimate_kernel(&u, &y, 5, RankPolicy::Threshold { rel_tol: 1e-9 }).unwrap();
        assert_eq!(by_threshold.estimated_order(), 4);
    }

    #[test]
    fn first_order_siso_by_hand() {
        // x+ = 0.5 x + u, y = x: O_L = [1; 0.5; 0.25; ...]
        let model = StateSpaceModel::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.0),
            None,
        )
        .unwrap();
        let u = system::generate_input(&InputKind::Prbs { amplitude: 1.0, seed: 3 }, 200, 1).unwrap();
        let traj =
            system::simulate(&model, &u, &FaultScenario::empty(), NoiseSetting::Off, None).unwrap();
        let filter = estimate_kernel(&traj.u, &traj.y, 4, RankPolicy::default_gap()).unwrap();
        assert_eq!(filter.estimated_order(), 1);
        let o_l = DMatrix::from_column_slice(4, 1, &[1.0, 0.5, 0.25, 0.125]);
        assert!((filter.k_y() * o_l).amax() < 1e-10);
    }

    #[test]
    fn zero_input_is_not_persistently_exciting() {
        let model = presets::benchmark_plant();
        let u = DMatrix::zeros(300, 1);
        let traj =
            system::simulate(&model, &u, &FaultScenario::empty(), NoiseSetting::Off, None).unwrap();
        let err = estimate_kernel(&traj.u, &traj.y, 5, RankPolicy::FixedOrder(4));
        assert!(matches!(err, Err(Error::NotPersistentlyExciting(_))));
    }

    #[test]
    fn subspace_recovery_against_model() {
        let model = presets::benchmark_plant();
        let (u, y) = healthy_decorrelated(&model, 600, 2, 5, 11);
        let filter = estimate_kernel(&u, &y, 5, RankPolicy::FixedOrder(4)).unwrap();
        let t_u = system::toeplitz(&model, &ChannelSet::InputAll, 5, None).unwrap();
        let o_l = model.extended_observability(5, None).unwrap();
        let t_u_range = numlin::range_basis(&t_u, 1e-9).unwrap();
        let o_range = numlin::range_basis(&o_l, 1e-9).unwrap();
        let a1 = principal_angles(filter.l21_basis(), &t_u_range).unwrap();
        let a2 = principal_angles(filter.l22_basis(), &o_range).unwrap();
        assert_eq!(a1.len(), t_u_range.dim());
        assert_eq!(a2.len(), 4);
        assert!(a1.iter().all(|&a| a < 1e-8), "input-Toeplitz range mismatch: {a1:?}");
        assert!(a2.iter().all(|&a| a < 1e-8), "observability range mismatch: {a2:?}");
    }

    #[test]
    fn observability_range_is_exact_even_with_generic_input() {
        // the L22 block lives in the orthogonal complement of the input rows,
        // so its range equals the observability range for any noise-free data
        let model = presets::benchmark_plant();
        let (u, y) = healthy_prbs(600, 11);
        let filter = estimate_kernel(&u, &y, 5, RankPolicy::FixedOrder(4)).unwrap();
        let o_l = model.extended_observability(5, None).unwrap();
        let o_range = numlin::range_basis(&o_l, 1e-9).unwrap();
        let a2 = principal_angles(filter.l22_basis(), &o_range).unwrap();
        assert!(a2.iter().all(|&a| a < 1e-8), "observability range mismatch: {a2:?}");
    }

    #[test]
    fn faulty_residual_matches_model_oracle() {
        let model = presets::benchmark_plant();
        let horizon = 5;
        let u = system::generate_input(&InputKind::MultiStep { values: vec![1.0, 2.0, 1.5], dwell: 20 }, 200, 1)
            .unwrap();
        let scen = FaultScenario::new(vec![FaultSegment {
            start: 30,
            end: 170,
            channel: FaultChannel::actuator(1),
            signal: FaultSignal::Sinusoid { amplitude: 1.0, normalized_frequency: 0.2, phase: 0.0 },
        }])
        .unwrap();
        let traj = system::simulate(&model, &u, &scen, NoiseSetting::Off, None).unwrap();

        let (u_h, y_h) = healthy_prbs(500, 42);
        let filter = estimate_kernel(&u_h, &y_h, horizon, RankPolicy::FixedOrder(4)).unwrap();
        let trace = residual(&filter, &traj.u, &traj.y).unwrap();

        let t_f = system::toeplitz(&model, &ChannelSet::Fault(vec![FaultChannel::actuator(1)]), horizon, None)
            .unwrap();
        let truth = traj.fault_truth.as_ref().unwrap();
        let pi = filter.k_y() * &t_f;
        for (idx, k) in trace.times.iter().enumerate() {
            let f_win = DVector::from_fn(horizon, |i, _| {
                truth[k + i].map(|(_, v)| v).unwrap_or(0.0)
            });
            let expected = &pi * f_win;
            assert!(
                (&trace.vectors[idx] - expected).amax() < 1e-8,
                "residual disagrees with the fault oracle at k = {k}"
            );
        }
        // during the fault the residual is clearly nonzero
        let active: Vec<f64> = trace
            .slice(30, 166)
            .norms();
        assert!(active.iter().cloned().fold(f64::INFINITY, f64::min) > 1e-3);
    }

    #[test]
    fn parity_check_exact_and_negative_control() {
        let model = presets::benchmark_plant();
        let (u, y) = healthy_prbs(500, 42);
        let filter = estimate_kernel(&u, &y, 5, RankPolicy::FixedOrder(4)).unwrap();
        let report = parity_check(&filter, &model).unwrap();
        assert!(report.max_observability_leak < 1e-8);
        assert!(report.max_toeplitz_mismatch < 1e-8);

        // a random orthonormal "filter" is far from the kernel
        let mut fake = filter.clone();
        let random = DMatrix::from_fn(20, 20, |i, j| ((i * 7 + j * 13) as f64 * 0.7).sin());
        let q = random.qr().q();
        fake.k_u = q.view((0, 0), (11, 5)).clone_owned();
        fake.k_y = q.view((0, 5), (11, 15)).clone_owned();
        let bad = parity_check(&fake, &model).unwrap();
        assert!(bad.max_observability_leak > 0.05);
    }

    #[test]
    fn exact_kernel_matches_estimated_spans() {
        let model = presets::benchmark_plant();
        let nominal = exact_kernel(&model, 5).unwrap();
        assert_eq!(nominal.residual_dim(), 11);
        let report = parity_check(&nominal, &model).unwrap();
        assert!(report.max_observability_leak < 1e-10);
        assert!(report.max_toeplitz_mismatch < 1e-10);
        // rows of [K_u K_y] are orthonormal
        let mut stacked = DMatrix::zeros(11, 20);
        stacked.columns_mut(0, 5).copy_from(nominal.k_u());
        stacked.columns_mut(5, 15).copy_from(nominal.k_y());
        let gram = &stacked * stacked.transpose();
        assert!((gram - DMatrix::identity(11, 11)).amax() < 1e-10);
    }

    #[test]
    fn healthy_residual_with_nonzero_initial_state() {
        let model = presets::benchmark_plant();
        let (u_h, y_h) = healthy_prbs(500, 42);
        let filter = estimate_kernel(&u_h, &y_h, 5, RankPolicy::FixedOrder(4)).unwrap();
        let u = system::generate_input(&InputKind::Prbs { amplitude: 2.0, seed: 77 }, 120, 1).unwrap();
        let x0 = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let traj =
            system::simulate(&model, &u, &FaultScenario::empty(), NoiseSetting::Off, Some(&x0))
                .unwrap();
        let trace = residual(&filter, &traj.u, &traj.y).unwrap();
        let max_norm = trace.norms().into_iter().fold(0.0f64, f64::max);
        let scale = traj.y.amax().max(traj.u.amax());
        assert!(max_norm <= 1e-8 * scale);
    }

    #[test]
    fn noisy_estimation_keeps_dimension_bookkeeping() {
        let model = presets::benchmark_plant().with_scaled_noise(2.7e-4).unwrap();
        let u = system::generate_input(&InputKind::Prbs { amplitude: 1.0, seed: 5 }, 1000, 1).unwrap();
        let traj =
            system::simulate(&model, &u, &FaultScenario::empty(), NoiseSetting::On { seed: 9 }, None)
                .unwrap();
        let filter =
            estimate_kernel(&traj.u, &traj.y, 15, RankPolicy::GapHeuristic { min_ratio: 2.0 })
                .unwrap();
        assert_eq!(filter.residual_dim(), 15 * 3 - filter.estimated_order());
        assert!(filter.estimated_order() >= 1);
        // fixed-order keeps the textbook residual dimension
        let fixed = estimate_kernel(&traj.u, &traj.y, 15, RankPolicy::FixedOrder(4)).unwrap();
        assert_eq!(fixed.residual_dim(), 41);
        // the estimated filter still nearly annihilates fresh healthy data
        let u2 = system::generate_input(&InputKind::Prbs { amplitude: 1.0, seed: 6 }, 300, 1).unwrap();
        let clean =
            system::simulate(&model, &u2, &FaultScenario::empty(), NoiseSetting::Off, None).unwrap();
        let trace = residual(&filter, &clean.u, &clean.y).unwrap();
        let max_norm = trace.norms().into_iter().fold(0.0f64, f64::max);
        assert!(max_norm < 0.1, "noisy-data filter leaks {max_norm:.3e} on clean data");
    }
}
