//! Fault dictionaries: per-channel signature matrices (selected columns of
//! the learned input-Toeplitz range for actuators, identity column patterns
//! for sensors) pushed through the parity rows `K_y`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::KernelFilter;
use crate::numlin::{self, SubspaceBasis};
use crate::system::{all_channels, FaultChannel, FaultKind, StateSpaceModel};

/// Where actuator signatures come from.
#[derive(Debug, Clone, Copy)]
pub enum SignatureSource<'a> {
    /// Columns of the LQ factor learned from healthy data.
    DataDriven,
    /// Columns of the model-based input Toeplitz matrix.
    Oracle(&'a StateSpaceModel),
}

/// Block-Toeplitz signature of one fault channel.
#[derive(Debug, Clone)]
pub struct FaultSignature {
    pub channel: FaultChannel,
    /// `(L n_y) x L` matrix whose columns carry the channel's windowed response.
    pub matrix: DMatrix<f64>,
}

/// One dictionary: the image of a signature under `K_y`, with a cached
/// orthonormal range basis used for projections.
#[derive(Debug, Clone)]
pub struct DictionaryEntry {
    pub channel: FaultChannel,
    /// `(L n_y - n) x L` dictionary matrix.
    pub matrix: DMatrix<f64>,
    pub basis: SubspaceBasis,
    pub rank: usize,
}

/// The complete per-channel dictionary collection, ordered actuators first.
#[derive(Debug, Clone)]
pub struct FaultDictionarySet {
    pub horizon: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub residual_dim: usize,
    pub entries: Vec<DictionaryEntry>,
}

impl FaultDictionarySet {
    pub fn channels(&self) -> Vec<FaultChannel> {
        self.entries.iter().map(|e| e.channel).collect()
    }

    pub fn find(&self, channel: FaultChannel) -> Option<&DictionaryEntry> {
        self.entries.iter().find(|e| e.channel == channel)
    }
}

/// 0-based column indices selecting channel `i` of its kind out of a
/// block-interleaved window: `{(i-1) + t*width : t = 0..L-1}`.
pub fn column_selection(
    kind: FaultKind,
    index: usize,
    horizon: usize,
    n_u: usize,
    n_y: usize,
) -> Result<Vec<usize>> {
    let width = match kind {
        FaultKind::Actuator => n_u,
        FaultKind::Sensor => n_y,
    };
    if index == 0 || index > width {
        return Err(Error::InvalidChannel(format!(
            "channel index {index} outside 1..={width}"
        )));
    }
    Ok((0..horizon).map(|t| (index - 1) + t * width).collect())
}

fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |r, c| m[(r, cols[c])])
}

fn sensor_signature(index: usize, horizon: usize, n_y: usize) -> Result<DMatrix<f64>> {
    let cols = column_selection(FaultKind::Sensor, index, horizon, 0, n_y)?;
    let mut t = DMatrix::zeros(horizon * n_y, horizon);
    for (c, &row) in cols.iter().enumerate() {
        t[(row, c)] = 1.0;
    }
    Ok(t)
}

/// Build one signature per channel (actuators 1..n_u, then sensors 1..n_y).
///
/// Data-driven actuator signatures take columns of `L21` directly in the
/// single-input case; with several inputs the raw factor mixes channels
/// through `L11`, so the Toeplitz estimate `L21 L11^{-1}` is recovered first.
pub fn build_signatures(
    filter: &KernelFilter,
    source: SignatureSource<'_>,
) -> Result<Vec<FaultSignature>> {
    let horizon = filter.horizon();
    let n_u = filter.input_dim();
    let n_y = filter.output_dim();
    if let SignatureSource::Oracle(model) = source {
        if model.input_dim() != n_u || model.output_dim() != n_y {
            return Err(Error::DimensionMismatch(
                "oracle model dimensions differ from the filter".into(),
            ));
        }
    }

    let actuator_source: DMatrix<f64> = match source {
        SignatureSource::Oracle(model) => {
            crate::system::toeplitz(model, &crate::system::ChannelSet::InputAll, horizon, None)?
        }
        SignatureSource::DataDriven => {
            if n_u == 1 {
                filter.l21().clone()
            } else {
                let inv = filter.l11().clone().lu().try_inverse().ok_or_else(|| {
                    Error::NotPersistentlyExciting("L11 is not invertible".into())
                })?;
                filter.l21() * inv
            }
        }
    };

    let mut out = Vec::with_capacity(n_u + n_y);
    for ch in all_channels(n_u, n_y) {
        let matrix = match ch.kind {
            FaultKind::Actuator => {
                let cols = column_selection(FaultKind::Actuator, ch.index, horizon, n_u, n_y)?;
                select_columns(&actuator_source, &cols)
            }
            FaultKind::Sensor => sensor_signature(ch.index, horizon, n_y)?,
        };
        out.push(FaultSignature { channel: ch, matrix });
    }
    Ok(out)
}

/// Multiply each signature by `K_y` and cache an orthonormal range basis.
pub fn build_dictionaries(
    filter: &KernelFilter,
    signatures: &[FaultSignature],
) -> Result<FaultDictionarySet> {
    let mut entries = Vec::with_capacity(signatures.len());
    for sig in signatures {
        if sig.matrix.nrows() != filter.horizon() * filter.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "signature for {} has {} rows, expected {}",
                sig.channel.label(),
                sig.matrix.nrows(),
                filter.horizon() * filter.output_dim()
            )));
        }
        let matrix = filter.k_y() * &sig.matrix;
        let basis = numlin::range_basis(&matrix, numlin::DEFAULT_REL_TOL)?;
        let rank = basis.dim();
        entries.push(DictionaryEntry { channel: sig.channel, matrix, basis, rank });
    }
    Ok(FaultDictionarySet {
        horizon: filter.horizon(),
        n_u: filter.input_dim(),
        n_y: filter.output_dim(),
        residual_dim: filter.residual_dim(),
        entries,
    })
}
