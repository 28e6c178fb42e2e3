//! Geometric fault classifier: project each residual onto every dictionary
//! subspace, score channels by the cosine of the projection angle, and decide
//! by argmax. A direct-sum search over channel combinations covers the
//! simultaneous-fault extension.

use nalgebra::DVector;

use crate::dictionary::FaultDictionarySet;
use crate::error::{Error, Result};
use crate::kernel::ResidualTrace;
use crate::numlin;
use crate::system::FaultChannel;

/// Per-instant projection angles against every dictionary.
#[derive(Debug, Clone)]
pub struct AngleTrace {
    pub times: Vec<usize>,
    pub channels: Vec<FaultChannel>,
    /// `cosines[i][c]` is cos(theta) of residual `i` against channel `c`.
    pub cosines: Vec<Vec<f64>>,
    /// Angles in radians over [0, pi/2], same layout as `cosines`.
    pub angles: Vec<Vec<f64>>,
    pub residual_norms: Vec<f64>,
}

/// Classification outcome at one instant.
#[derive(Debug, Clone, PartialEq)]
pub enum DecisionStatus {
    Healthy,
    Fault(FaultChannel),
    /// Channels whose cosines tie with the maximum within the tie tolerance,
    /// listed in canonical channel order.
    Ambiguous(Vec<FaultChannel>),
}

#[derive(Debug, Clone)]
pub struct Decision {
    pub time: usize,
    pub status: DecisionStatus,
    pub winning_cos: f64,
    /// Gap between the best and second-best cosine (0 when fewer than two
    /// channels or healthy).
    pub margin: f64,
}

impl Decision {
    pub fn label(&self) -> String {
        match &self.status {
            DecisionStatus::Healthy => "healthy".to_string(),
            DecisionStatus::Fault(ch) => ch.label(),
            DecisionStatus::Ambiguous(set) => {
                set.iter().map(|c| c.label()).collect::<Vec<_>>().join("|")
            }
        }
    }
}

/// Cosine of the angle between `r` and the subspace spanned by `basis`:
/// `|proj r| / |r|`, defined as 0 when either norm vanishes.
fn cosine_against(basis: &numlin::SubspaceBasis, r: &DVector<f64>) -> Result<f64> {
    let r_norm = r.norm();
    if r_norm == 0.0 || basis.dim() == 0 {
        return Ok(0.0);
    }
    let coords = basis.coordinates(r)?;
    Ok((coords.norm() / r_norm).clamp(0.0, 1.0))
}

/// Evaluate the angle classifier over a residual trace.
pub fn angles(residuals: &ResidualTrace, dicts: &FaultDictionarySet) -> Result<AngleTrace> {
    if residuals.dim() != dicts.residual_dim && !residuals.vectors.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "residual dimension {} vs dictionary space {}",
            residuals.dim(),
            dicts.residual_dim
        )));
    }
    let channels = dicts.channels();
    let mut cosines = Vec::with_capacity(residuals.vectors.len());
    let mut angle_rows = Vec::with_capacity(residuals.vectors.len());
    let mut norms = Vec::with_capacity(residuals.vectors.len());
    for r in &residuals.vectors {
        let mut row = Vec::with_capacity(channels.len());
        for entry in &dicts.entries {
            row.push(cosine_against(&entry.basis, r)?);
        }
        angle_rows.push(row.iter().map(|c| c.acos()).collect());
        cosines.push(row);
        norms.push(r.norm());
    }
    Ok(AngleTrace {
        times: residuals.times.clone(),
        channels,
        cosines,
        angles: angle_rows,
        residual_norms: norms,
    })
}

/// Argmax decision rule with a detection threshold on the residual norm and a
/// tie tolerance on cosines. Decisions are made on cosines directly; arccos
/// is never round-tripped.
pub fn decide(trace: &AngleTrace, residual_norm_threshold: f64, tie_tol: f64) -> Vec<Decision> {
    let mut out = Vec::with_capacity(trace.times.len());
    for i in 0..trace.times.len() {
        let time = trace.times[i];
        if trace.residual_norms[i] <= residual_norm_threshold {
            out.push(Decision {
                time,
                status: DecisionStatus::Healthy,
                winning_cos: 0.0,
                margin: 0.0,
            });
            continue;
        }
        let row = &trace.cosines[i];
        let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<FaultChannel> = trace
            .channels
            .iter()
            .zip(row)
            .filter(|(_, &c)| best - c <= tie_tol)
            .map(|(ch, _)| *ch)
            .collect();
        let mut sorted = row.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let margin = if sorted.len() > 1 { sorted[0] - sorted[1] } else { 0.0 };
        let status = if tied.len() == 1 {
            DecisionStatus::Fault(tied[0])
        } else {
            DecisionStatus::Ambiguous(tied)
        };
        out.push(Decision { time, status, winning_cos: best, margin });
    }
    out
}

fn next_combination(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if subset[i] < n - k + i {
            subset[i] += 1;
            for j in (i + 1)..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Search channel subsets by increasing cardinality (then channel order) for
/// one whose direct-sum subspace contains every residual of the trace within
/// the angle tolerance. Intended for a trace sliced to a steady fault window.
pub fn combination_search(
    residuals: &ResidualTrace,
    dicts: &FaultDictionarySet,
    max_faults: usize,
    angle_tol: f64,
) -> Result<Vec<FaultChannel>> {
    let channels = dicts.channels();
    if max_faults == 0 || max_faults > channels.len() {
        return Err(Error::InvalidChannel(format!(
            "max_faults {max_faults} outside 1..={}",
            channels.len()
        )));
    }
    if residuals.vectors.is_empty() {
        return Err(Error::CombinationNotFound { max_faults });
    }
    for cardinality in 1..=max_faults {
        let mut subset: Vec<usize> = (0..cardinality).collect();
        loop {
            let total_cols: usize =
                subset.iter().map(|&i| dicts.entries[i].matrix.ncols()).sum();
            let mut joint = nalgebra::DMatrix::zeros(dicts.residual_dim, total_cols);
            let mut at = 0;
            for &i in &subset {
                let m = &dicts.entries[i].matrix;
                joint.columns_mut(at, m.ncols()).copy_from(m);
                at += m.ncols();
            }
            let basis = numlin::range_basis(&joint, numlin::DEFAULT_REL_TOL)?;
            let mut all_inside = true;
            for r in &residuals.vectors {
                if cosine_against(&basis, r)? < 1.0 - angle_tol {
                    all_inside = false;
                    break;
                }
            }
            if all_inside {
                return Ok(subset.iter().map(|&i| channels[i]).collect());
            }
            if !next_combination(&mut subset, channels.len()) {
                break;
            }
        }
    }
    Err(Error::CombinationNotFound { max_faults })
}
