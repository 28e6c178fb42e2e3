//! Ground-truth LTI machinery: innovation-form simulation with additive
//! actuator/sensor fault injection, input generators, and the model-based
//! constructions (extended observability, block-Toeplitz maps, Markov
//! parameters) used as oracles against the data-driven path.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numlin;

/// Innovation noise description: steady-state gain and innovation covariance.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub kalman_gain: DMatrix<f64>,
    pub sigma_e: DMatrix<f64>,
}

/// Discrete-time LTI system in innovation form:
///
/// ```text
/// x_{k+1} = A x_k + B_u u_k + B_f f_k + K e_k
/// y_k     = C x_k + D_u u_k + D_f f_k + e_k
/// ```
///
/// Fault channels are not stored; `(B_f, D_f)` columns are materialized per
/// channel by [`fault_matrices`].
#[derive(Debug, Clone)]
pub struct StateSpaceModel {
    a: DMatrix<f64>,
    b_u: DMatrix<f64>,
    c: DMatrix<f64>,
    d_u: DMatrix<f64>,
    noise: Option<NoiseModel>,
}

impl StateSpaceModel {
    pub fn new(
        a: DMatrix<f64>,
        b_u: DMatrix<f64>,
        c: DMatrix<f64>,
        d_u: DMatrix<f64>,
        noise: Option<NoiseModel>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch("A must be square".into()));
        }
        if b_u.nrows() != n || c.ncols() != n {
            return Err(Error::DimensionMismatch(
                "B_u rows and C columns must match the state dimension".into(),
            ));
        }
        if d_u.nrows() != c.nrows() || d_u.ncols() != b_u.ncols() {
            return Err(Error::DimensionMismatch("D_u must be n_y x n_u".into()));
        }
        for m in [&a, &b_u, &c, &d_u] {
            if !m.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidMatrix("non-finite system matrix entry".into()));
            }
        }
        if let Some(nm) = &noise {
            if nm.kalman_gain.nrows() != n || nm.kalman_gain.ncols() != c.nrows() {
                return Err(Error::DimensionMismatch("K must be n x n_y".into()));
            }
            if nm.sigma_e.nrows() != c.nrows() || nm.sigma_e.ncols() != c.nrows() {
                return Err(Error::DimensionMismatch("Sigma_e must be n_y x n_y".into()));
            }
            let asym = (&nm.sigma_e - nm.sigma_e.transpose()).amax();
            if asym > 1e-12 {
                return Err(Error::InvalidMatrix(format!(
                    "Sigma_e not symmetric (defect {asym:.3e})"
                )));
            }
            let eigs = nm.sigma_e.clone().symmetric_eigen().eigenvalues;
            if eigs.iter().any(|&l| l < -1e-12) {
                return Err(Error::InvalidMatrix("Sigma_e not positive semidefinite".into()));
            }
        }
        let model = Self { a, b_u, c, d_u, noise };
        if model.order() > 0 {
            let obs = model.extended_observability(model.order(), None)?;
            let rank = numlin::numerical_rank(&obs, numlin::DEFAULT_REL_TOL)?.numerical_rank;
            if rank < model.order() {
                return Err(Error::InvalidMatrix(format!(
                    "(A, C) not observable: rank O_n = {rank} < n = {}",
                    model.order()
                )));
            }
        }
        Ok(model)
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b_u.ncols()
    }
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b_u(&self) -> &DMatrix<f64> {
        &self.b_u
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d_u(&self) -> &DMatrix<f64> {
        &self.d_u
    }
    pub fn noise(&self) -> Option<&NoiseModel> {
        self.noise.as_ref()
    }

    /// Copy of the model with `Sigma_e` scaled by `alpha` (noise-power scaling).
    pub fn with_scaled_noise(&self, alpha: f64) -> Result<Self> {
        let nm = self.noise.as_ref().ok_or_else(|| {
            Error::InvalidMatrix("model carries no noise description".into())
        })?;
        Self::new(
            self.a.clone(),
            self.b_u.clone(),
            self.c.clone(),
            self.d_u.clone(),
            Some(NoiseModel {
                kalman_gain: nm.kalman_gain.clone(),
                sigma_e: &nm.sigma_e * alpha,
            }),
        )
    }

    /// Extended observability matrix over `horizon` block rows, optionally
    /// restricted to a 1-based output subset.
    pub fn extended_observability(
        &self,
        horizon: usize,
        output_subset: Option<&[usize]>,
    ) -> Result<DMatrix<f64>> {
        if horizon == 0 {
            return Err(Error::HorizonTooShort("horizon must be at least 1".into()));
        }
        let c_sub = self.restrict_outputs(&self.c, output_subset)?;
        let ny = c_sub.nrows();
        let n = self.order();
        let mut out = DMatrix::zeros(horizon * ny, n);
        let mut block = c_sub.clone();
        for i in 0..horizon {
            out.rows_mut(i * ny, ny).copy_from(&block);
            if i + 1 < horizon {
                block = &block * &self.a;
            }
        }
        Ok(out)
    }

    fn restrict_outputs(
        &self,
        m: &DMatrix<f64>,
        output_subset: Option<&[usize]>,
    ) -> Result<DMatrix<f64>> {
        match output_subset {
            None => Ok(m.clone()),
            Some(subset) => {
                if subset.is_empty() {
                    return Err(Error::InvalidSubset("output subset is empty".into()));
                }
                let ny = self.output_dim();
                let mut seen = vec![false; ny];
                for &idx in subset {
                    if idx == 0 || idx > ny {
                        return Err(Error::InvalidSubset(format!(
                            "output index {idx} outside 1..={ny}"
                        )));
                    }
                    if seen[idx - 1] {
                        return Err(Error::InvalidSubset(format!("duplicate output index {idx}")));
                    }
                    seen[idx - 1] = true;
                }
                let rows: Vec<usize> = subset.iter().map(|&i| i - 1).collect();
                Ok(DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)]))
            }
        }
    }
}

/// Which column set of the combined input map a Markov/Toeplitz construction
/// refers to.
#[derive(Debug, Clone)]
pub enum ChannelSet {
    /// All plant inputs (`B_u`, `D_u`).
    InputAll,
    /// Selected fault channels, materialized per the actuator/sensor rule.
    Fault(Vec<FaultChannel>),
    /// The innovation input (`K`, `I`).
    Innovation,
}

/// Kind of additive fault.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FaultKind {
    Actuator,
    Sensor,
}

/// A single fault channel, indexed 1-based within its kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FaultChannel {
    pub kind: FaultKind,
    pub index: usize,
}

impl FaultChannel {
    pub fn actuator(index: usize) -> Self {
        Self { kind: FaultKind::Actuator, index }
    }
    pub fn sensor(index: usize) -> Self {
        Self { kind: FaultKind::Sensor, index }
    }

    /// Short label: `a1`, `s2`, ...
    pub fn label(&self) -> String {
        match self.kind {
            FaultKind::Actuator => format!("a{}", self.index),
            FaultKind::Sensor => format!("s{}", self.index),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let (kind, rest) = match s.as_bytes().first() {
            Some(b'a') => (FaultKind::Actuator, &s[1..]),
            Some(b's') => (FaultKind::Sensor, &s[1..]),
            _ => return Err(Error::InvalidChannel(format!("cannot parse '{s}'"))),
        };
        let index: usize = rest
            .parse()
            .map_err(|_| Error::InvalidChannel(format!("cannot parse '{s}'")))?;
        if index == 0 {
            return Err(Error::InvalidChannel("channel index is 1-based".into()));
        }
        Ok(Self { kind, index })
    }

    pub fn validate(&self, model: &StateSpaceModel) -> Result<()> {
        let limit = match self.kind {
            FaultKind::Actuator => model.input_dim(),
            FaultKind::Sensor => model.output_dim(),
        };
        if self.index == 0 || self.index > limit {
            return Err(Error::InvalidChannel(format!(
                "{} outside the model's channel range",
                self.label()
            )));
        }
        Ok(())
    }
}

/// All channels of a model in canonical order: actuators 1..n_u, then
/// sensors 1..n_y.
pub fn all_channels(n_u: usize, n_y: usize) -> Vec<FaultChannel> {
    (1..=n_u)
        .map(FaultChannel::actuator)
        .chain((1..=n_y).map(FaultChannel::sensor))
        .collect()
}

/// Materialize `(B_f, D_f)` columns for the given channels: actuator j
/// contributes `(B_u^[j], D_u^[j])`, sensor j contributes `(0, I^[j])`.
pub fn fault_matrices(
    model: &StateSpaceModel,
    channels: &[FaultChannel],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = model.order();
    let ny = model.output_dim();
    let mut b_f = DMatrix::zeros(n, channels.len());
    let mut d_f = DMatrix::zeros(ny, channels.len());
    for (col, ch) in channels.iter().enumerate() {
        ch.validate(model)?;
        match ch.kind {
            FaultKind::Actuator => {
                b_f.set_column(col, &model.b_u().column(ch.index - 1));
                d_f.set_column(col, &model.d_u().column(ch.index - 1));
            }
            FaultKind::Sensor => {
                d_f[(ch.index - 1, col)] = 1.0;
            }
        }
    }
    Ok((b_f, d_f))
}

/// Markov parameters `M_0 .. M_{horizon-1}` of the selected channel set.
pub fn markov_parameters(
    model: &StateSpaceModel,
    channels: &ChannelSet,
    horizon: usize,
) -> Result<Vec<DMatrix<f64>>> {
    if horizon == 0 {
        return Err(Error::HorizonTooShort("horizon must be at least 1".into()));
    }
    let (b, d) = match channels {
        ChannelSet::InputAll => (model.b_u().clone(), model.d_u().clone()),
        ChannelSet::Fault(list) => fault_matrices(model, list)?,
        ChannelSet::Innovation => {
            let nm = model.noise().ok_or_else(|| {
                Error::InvalidMatrix("model carries no noise description".into())
            })?;
            (nm.kalman_gain.clone(), DMatrix::identity(model.output_dim(), model.output_dim()))
        }
    };
    let mut out = Vec::with_capacity(horizon);
    out.push(d);
    let mut ca = model.c().clone();
    for _ in 1..horizon {
        out.push(&ca * &b);
        ca = &ca * model.a();
    }
    Ok(out)
}

/// Lower block-triangular Toeplitz matrix of the selected channel set,
/// optionally restricted to a 1-based output subset.
pub fn toeplitz(
    model: &StateSpaceModel,
    channels: &ChannelSet,
    horizon: usize,
    output_subset: Option<&[usize]>,
) -> Result<DMatrix<f64>> {
    let params = markov_parameters(model, channels, horizon)?;
    let restricted: Vec<DMatrix<f64>> = params
        .iter()
        .map(|m| model.restrict_outputs(m, output_subset))
        .collect::<Result<_>>()?;
    let ny = restricted[0].nrows();
    let nin = restricted[0].ncols();
    let mut t = DMatrix::zeros(horizon * ny, horizon * nin);
    for i in 0..horizon {
        for j in 0..=i {
            t.view_mut((i * ny, j * nin), (ny, nin)).copy_from(&restricted[i - j]);
        }
    }
    Ok(t)
}

/// Time profile of a fault signal within a scenario segment. Sinusoid and
/// geometric descriptors are evaluated at the absolute sample index; explicit
/// series are indexed relative to the segment start.
#[derive(Debug, Clone)]
pub enum FaultSignal {
    Zero,
    Constant(f64),
    Sinusoid { amplitude: f64, normalized_frequency: f64, phase: f64 },
    GeometricDecay { base: f64, offset_time: usize },
    Step { level: f64 },
    Series(Vec<f64>),
}

impl FaultSignal {
    fn value(&self, k: usize, segment_start: usize) -> f64 {
        match self {
            FaultSignal::Zero => 0.0,
            FaultSignal::Constant(c) => *c,
            FaultSignal::Sinusoid { amplitude, normalized_frequency, phase } => {
                amplitude * (normalized_frequency * std::f64::consts::PI * k as f64 + phase).sin()
            }
            FaultSignal::GeometricDecay { base, offset_time } => {
                base.powi(k as i32 - *offset_time as i32)
            }
            FaultSignal::Step { level } => *level,
            FaultSignal::Series(values) => {
                values.get(k - segment_start).copied().unwrap_or(0.0)
            }
        }
    }
}

/// One fault episode on a half-open interval `[start, end)`.
#[derive(Debug, Clone)]
pub struct FaultSegment {
    pub start: usize,
    pub end: usize,
    pub channel: FaultChannel,
    pub signal: FaultSignal,
}

/// A time-indexed fault plan; at most one channel active at any instant.
#[derive(Debug, Clone, Default)]
pub struct FaultScenario {
    segments: Vec<FaultSegment>,
}

impl FaultScenario {
    pub fn empty() -> Self {
        Self { segments: vec![] }
    }

    pub fn new(segments: Vec<FaultSegment>) -> Result<Self> {
        for seg in &segments {
            if seg.start >= seg.end {
                return Err(Error::InvalidScenario(format!(
                    "segment [{}, {}) is empty or reversed",
                    seg.start, seg.end
                )));
            }
        }
        let mut spans: Vec<(usize, usize)> =
            segments.iter().map(|s| (s.start, s.end)).collect();
        spans.sort_unstable();
        for pair in spans.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(Error::InvalidScenario(format!(
                    "segments [{}, {}) and [{}, {}) overlap; only a single fault may be active",
                    pair[0].0, pair[0].1, pair[1].0, pair[1].1
                )));
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[FaultSegment] {
        &self.segments
    }

    /// Active channel and fault value at sample `k`, if any.
    pub fn active_at(&self, k: usize) -> Option<(FaultChannel, f64)> {
        self.segments
            .iter()
            .find(|s| s.start <= k && k < s.end)
            .map(|s| (s.channel, s.signal.value(k, s.start)))
    }

    pub fn last_end(&self) -> usize {
        self.segments.iter().map(|s| s.end).max().unwrap_or(0)
    }
}

/// Noise switch for simulation.
#[derive(Debug, Clone, Copy)]
pub enum NoiseSetting {
    Off,
    On { seed: u64 },
}

/// Simulated (or recorded) input/output data with optional ground-truth
/// annotations available only in simulation contexts.
#[derive(Debug, Clone)]
pub struct TrajectoryData {
    /// T x n_u input samples.
    pub u: DMatrix<f64>,
    /// T x n_y output samples.
    pub y: DMatrix<f64>,
    /// Per-sample active fault, if simulated with a scenario.
    pub fault_truth: Option<Vec<Option<(FaultChannel, f64)>>>,
    /// T x n_y innovation samples when simulated with noise on.
    pub innovations: Option<DMatrix<f64>>,
    /// T x n state trajectory (simulation oracle only).
    pub states: Option<DMatrix<f64>>,
}

impl TrajectoryData {
    pub fn sample_count(&self) -> usize {
        self.u.nrows()
    }

    pub fn from_io(u: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if u.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "input length {} vs output length {}",
                u.nrows(),
                y.nrows()
            )));
        }
        if !u.iter().all(|x| x.is_finite()) || !y.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite trajectory entry".into()));
        }
        Ok(Self { u, y, fault_truth: None, innovations: None, states: None })
    }
}

/// Lower-triangular square root of a symmetric PSD matrix: Cholesky when
/// positive definite, eigenvalue square root with negative clamp otherwise.
fn psd_sqrt(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = sigma.clone().cholesky() {
        return Ok(chol.l());
    }
    let eig = sigma.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -1e-12) {
        return Err(Error::InvalidMatrix("covariance not positive semidefinite".into()));
    }
    let sqrt_vals = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
    );
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals))
}

/// Run the innovation-form recursion over `input`, injecting faults per the
/// scenario. With noise on, innovations are i.i.d. `N(0, Sigma_e)` drawn from
/// a ChaCha stream seeded by the given seed.
pub fn simulate(
    model: &StateSpaceModel,
    input: &DMatrix<f64>,
    scenario: &FaultScenario,
    noise: NoiseSetting,
    x0: Option<&DVector<f64>>,
) -> Result<TrajectoryData> {
    let t_len = input.nrows();
    if t_len == 0 {
        return Err(Error::DimensionMismatch("input must contain at least one sample".into()));
    }
    if input.ncols() != model.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input width {} vs n_u = {}",
            input.ncols(),
            model.input_dim()
        )));
    }
    if scenario.last_end() > t_len {
        return Err(Error::InvalidScenario(format!(
            "scenario extends to {} beyond the input length {}",
            scenario.last_end(),
            t_len
        )));
    }
    for seg in scenario.segments() {
        seg.channel.validate(model)?;
    }
    let n = model.order();
    let ny = model.output_dim();
    let mut x = match x0 {
        Some(v) => {
            if v.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "x0 length {} vs state dimension {n}",
                    v.len()
                )));
            }
            v.clone()
        }
        None => DVector::zeros(n),
    };

    let mut noise_gen = match noise {
        NoiseSetting::Off => None,
        NoiseSetting::On { seed } => {
            let nm = model.noise().ok_or_else(|| {
                Error::InvalidMatrix("noise requested but the model carries no noise description".into())
            })?;
            let factor = psd_sqrt(&nm.sigma_e)?;
            Some((ChaCha12Rng::seed_from_u64(seed), factor, nm.kalman_gain.clone()))
        }
    };

    let mut y = DMatrix::zeros(t_len, ny);
    let mut states = DMatrix::zeros(t_len, n);
    let mut innovations = noise_gen.as_ref().map(|_| DMatrix::zeros(t_len, ny));
    let mut truth = Vec::with_capacity(t_len);

    for k in 0..t_len {
        let u_k = input.row(k).transpose();
        let active = scenario.active_at(k);
        truth.push(active);

        let e_k = match &mut noise_gen {
            Some((rng, factor, _)) => {
                let z = DVector::from_fn(ny, |_, _| rng.sample::<f64, _>(StandardNormal));
                &*factor * z
            }
            None => DVector::zeros(ny),
        };

        let mut y_k = model.c() * &x + model.d_u() * &u_k + &e_k;
        let mut x_next = model.a() * &x + model.b_u() * &u_k;
        if let Some((ch, value)) = active {
            let (b_f, d_f) = fault_matrices(model, &[ch])?;
            y_k += d_f.column(0) * value;
            x_next += b_f.column(0) * value;
        }
        if let Some((_, _, gain)) = &noise_gen {
            x_next += gain * &e_k;
        }

        states.row_mut(k).copy_from(&x.transpose());
        y.row_mut(k).copy_from(&y_k.transpose());
        if let Some(e_store) = innovations.as_mut() {
            e_store.row_mut(k).copy_from(&e_k.transpose());
        }
        x = x_next;
    }

    Ok(TrajectoryData {
        u: input.clone(),
        y,
        fault_truth: Some(truth),
        innovations,
        states: Some(states),
    })
}

/// Input signal generators.
#[derive(Debug, Clone)]
pub enum InputKind {
    /// Maximal-length shift-register sequence switching between +/- amplitude.
    Prbs { amplitude: f64, seed: u64 },
    /// Piecewise-constant signal cycling through the values, holding each for
    /// `dwell` samples.
    MultiStep { values: Vec<f64>, dwell: usize },
    /// Unit impulse at k = 0.
    Impulse,
    Zero,
    /// Periodic signal with random phases and a perfectly flat spectrum over
    /// its channel's frequency bins, tiled to the requested length. Its cyclic
    /// autocorrelation is an exact unit impulse (per period), and distinct
    /// channels occupy disjoint bins, so cross-correlations vanish exactly.
    /// `amplitude` is the per-channel RMS.
    FlatSpectrum { amplitude: f64, period: usize, seed: u64 },
}

/// Maximal-length taps for a 16-bit Fibonacci LFSR (period 65535).
const LFSR_BITS: u32 = 16;
const LFSR_TAPS: [u32; 4] = [16, 15, 13, 4];

fn lfsr_stream(seed: u64, len: usize) -> Vec<bool> {
    let mask = (1u32 << LFSR_BITS) - 1;
    // Any nonzero start state yields the same maximal-length cycle.
    let mut state = (seed as u32 & mask).max(1);
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(state & 1 == 1);
        let fb = LFSR_TAPS
            .iter()
            .fold(0u32, |acc, &t| acc ^ (state >> (LFSR_BITS - t)))
            & 1;
        state = ((state >> 1) | (fb << (LFSR_BITS - 1))) & mask;
    }
    out
}

/// Deterministic input generation; multi-input PRBS uses an independently
/// seeded register per column.
pub fn generate_input(kind: &InputKind, t_len: usize, n_u: usize) -> Result<DMatrix<f64>> {
    if t_len == 0 {
        return Err(Error::DimensionMismatch("signal length must be positive".into()));
    }
    let mut out = DMatrix::zeros(t_len, n_u);
    match kind {
        InputKind::Zero => {}
        InputKind::Impulse => {
            for j in 0..n_u {
                out[(0, j)] = 1.0;
            }
        }
        InputKind::MultiStep { values, dwell } => {
            if values.is_empty() || *dwell == 0 {
                return Err(Error::InvalidMatrix(
                    "multi-step input needs values and a positive dwell".into(),
                ));
            }
            for k in 0..t_len {
                let v = values[(k / dwell) % values.len()];
                for j in 0..n_u {
                    out[(k, j)] = v;
                }
            }
        }
        InputKind::Prbs { amplitude, seed } => {
            for j in 0..n_u {
                let bits = lfsr_stream(seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(j as u64 + 1)), t_len);
                for k in 0..t_len {
                    out[(k, j)] = if bits[k] { *amplitude } else { -*amplitude };
                }
            }
        }
        InputKind::FlatSpectrum { amplitude, period, seed } => {
            let base = flat_spectrum_period(*amplitude, *period, n_u, *seed)?;
            for k in 0..t_len {
                for j in 0..n_u {
                    out[(k, j)] = base[(k % period, j)];
                }
            }
        }
    }
    Ok(out)
}

/// One period of the flat-spectrum generator: channel `j` carries equal-power
/// cosines on the bins `f ≡ j (mod n_u)` with seeded random phases, rescaled
/// to the requested RMS.
pub fn flat_spectrum_period(
    amplitude: f64,
    period: usize,
    n_u: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if period < 2 * n_u.max(1) {
        return Err(Error::InvalidMatrix(format!(
            "flat-spectrum period {period} too short for {n_u} channels"
        )));
    }
    // Conjugate bin pairs must stay within one channel's bin class, which
    // only works out for one channel (all bins) or two (even/odd bins of an
    // even-length period).
    if n_u > 2 || (n_u == 2 && period % 2 != 0) {
        return Err(Error::InvalidMatrix(
            "exact flat-spectrum generation supports one channel, or two with an even period"
                .into(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(period, n_u);
    let half = period / 2;
    for ch in 0..n_u {
        for f in (ch..=half).step_by(n_u.max(1)) {
            let nyquist = period % 2 == 0 && f == half;
            let phase: f64 = if f == 0 || nyquist {
                if rng.random_bool(0.5) {
                    0.0
                } else {
                    std::f64::consts::PI
                }
            } else {
                rng.random_range(0.0..std::f64::consts::TAU)
            };
            let weight = if f == 0 || nyquist { 1.0 } else { 2.0 };
            for k in 0..period {
                let arg = std::f64::consts::TAU * (f * k) as f64 / period as f64 + phase;
                out[(k, ch)] += weight * arg.cos();
            }
        }
        let rms =
            (out.column(ch).iter().map(|v| v * v).sum::<f64>() / period as f64).sqrt();
        if rms > 0.0 {
            let scale = amplitude / rms;
            for k in 0..period {
                out[(k, ch)] *= scale;
            }
        }
    }
    Ok(out)
}

/// Fixed point of one period of the input: the initial state making the
/// noise-free response exactly periodic. Requires a Schur-stable `A`.
pub fn cyclic_steady_state(
    model: &StateSpaceModel,
    period_input: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let n = model.order();
    let period = period_input.nrows();
    if period == 0 || period_input.ncols() != model.input_dim() {
        return Err(Error::DimensionMismatch(
            "period input must be P x n_u with P >= 1".into(),
        ));
    }
    let radius = model
        .a()
        .complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0f64, f64::max);
    if radius >= 1.0 {
        return Err(Error::InvalidMatrix(format!(
            "cyclic steady state needs a stable plant (spectral radius {radius:.3})"
        )));
    }
    // state after one period from the origin
    let mut x = DVector::zeros(n);
    for k in 0..period {
        let u_k = period_input.row(k).transpose();
        x = model.a() * &x + model.b_u() * u_k;
    }
    // A^P by repeated squaring
    let mut a_pow = DMatrix::identity(n, n);
    let mut base = model.a().clone();
    let mut exp = period;
    while exp > 0 {
        if exp & 1 == 1 {
            a_pow = &a_pow * &base;
        }
        base = &base * &base;
        exp >>= 1;
    }
    let system = DMatrix::identity(n, n) - a_pow;
    system
        .lu()
        .solve(&x)
        .ok_or_else(|| Error::NumericallyIllConditioned("cyclic fixed point solve failed".into()))
}

/// Reference plants used by examples and tests.
pub mod presets {
    use super::*;

    /// Four-state, single-input, three-output plant whose input-to-{1,3}
    /// subsystem has a single transmission zero at z = 0.95, so a geometric
    /// 0.95^k actuator fault is indistinguishable from a fault on sensor 2.
    pub fn benchmark_plant() -> StateSpaceModel {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 1.0, 0.0, 0.0,
                0.0, 0.0, 1.0, 0.0,
                0.0, 0.0, 0.0, 1.0,
                -0.136, 0.956, -2.406, 2.580,
            ],
        );
        let b_u = DMatrix::from_column_slice(
            4,
            1,
            &[
                2.5202766760970605,
                3.1506311462496677,
                2.946484945879969,
                2.4557146189584804,
            ],
        );
        let c = DMatrix::from_row_slice(
            3,
            4,
            &[
                1.0, 0.0, 0.0, 0.0,
                -0.0215596734772005, 0.1016520650028961,
                -0.003094998833581122, 0.019814428399110906,
                0.20090461974246424, -0.8414093255160275,
                1.2826160864875282, -0.5016268616500997,
            ],
        );
        let d_u = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 1.0]);
        StateSpaceModel::new(a, b_u, c, d_u, Some(benchmark_noise()))
            .expect("benchmark plant is well formed")
    }

    /// Innovation description paired with [`benchmark_plant`].
    pub fn benchmark_noise() -> NoiseModel {
        let kalman_gain = DMatrix::from_row_slice(
            4,
            3,
            &[
                0.1760, 0.6259, 0.0686,
                -0.0815, 0.4654, -0.2711,
                -0.288, 0.2886, -0.1961,
                -0.3268, 0.1314, 0.3146,
            ],
        );
        let sigma_e = DMatrix::from_row_slice(
            3,
            3,
            &[
                5.25, 4.73, 3.96,
                4.73, 4.87, 3.68,
                3.96, 3.68, 3.59,
            ],
        );
        NoiseModel { kalman_gain, sigma_e }
    }
}
