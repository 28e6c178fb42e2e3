//! File formats: trajectory/residual/angle/decision CSVs and the JSON
//! documents for filters, dictionaries, and discernibility reports.

use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use fdi_core::classifier::{AngleTrace, Decision};
use fdi_core::dictionary::{DictionaryEntry, FaultDictionarySet};
use fdi_core::discern::DiscernibilityReport;
use fdi_core::kernel::{KernelFilter, RankPolicy, ResidualTrace};
use fdi_core::numlin::SubspaceBasis;
use fdi_core::system::{FaultChannel, TrajectoryData};

use crate::config::{matrix_to_rows, RankPolicySpec, SCHEMA_VERSION};

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != ncols) {
        bail!("'{what}': ragged rows");
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Trajectory CSV: `k,u_1..u_nu,y_1..y_ny[,f_channel,f_value]`.
pub fn write_trajectory_csv(path: &Path, traj: &TrajectoryData) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    let n_u = traj.u.ncols();
    let n_y = traj.y.ncols();
    let with_fault = traj.fault_truth.is_some();
    let mut header = vec!["k".to_string()];
    header.extend((1..=n_u).map(|i| format!("u_{i}")));
    header.extend((1..=n_y).map(|i| format!("y_{i}")));
    if with_fault {
        header.push("f_channel".into());
        header.push("f_value".into());
    }
    w.write_record(&header)?;
    for k in 0..traj.sample_count() {
        let mut record = vec![k.to_string()];
        record.extend((0..n_u).map(|j| traj.u[(k, j)].to_string()));
        record.extend((0..n_y).map(|j| traj.y[(k, j)].to_string()));
        if with_fault {
            match traj.fault_truth.as_ref().unwrap()[k] {
                Some((ch, value)) => {
                    record.push(ch.label());
                    record.push(value.to_string());
                }
                None => {
                    record.push(String::new());
                    record.push(String::new());
                }
            }
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path) -> Result<TrajectoryData> {
    let mut r = csv::Reader::from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let header = r.headers()?.clone();
    let n_u = header.iter().filter(|h| h.starts_with("u_")).count();
    let n_y = header.iter().filter(|h| h.starts_with("y_")).count();
    let with_fault = header.iter().any(|h| h == "f_channel");
    if n_u == 0 || n_y == 0 {
        bail!("'{}': header must contain u_* and y_* columns", path.display());
    }
    let mut u_rows: Vec<Vec<f64>> = Vec::new();
    let mut y_rows: Vec<Vec<f64>> = Vec::new();
    let mut truth: Vec<Option<(FaultChannel, f64)>> = Vec::new();
    for record in r.records() {
        let record = record?;
        let mut fields = record.iter();
        let _k = fields.next();
        let u_row: Vec<f64> = (0..n_u)
            .map(|_| fields.next().unwrap_or("").parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .context("parsing u columns")?;
        let y_row: Vec<f64> = (0..n_y)
            .map(|_| fields.next().unwrap_or("").parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .context("parsing y columns")?;
        if with_fault {
            let label = fields.next().unwrap_or("");
            let value = fields.next().unwrap_or("");
            if label.is_empty() {
                truth.push(None);
            } else {
                truth.push(Some((
                    FaultChannel::parse(label)?,
                    value.parse::<f64>().context("parsing f_value")?,
                )));
            }
        }
        u_rows.push(u_row);
        y_rows.push(y_row);
    }
    let mut traj = TrajectoryData::from_io(
        rows_to_matrix(&u_rows, "u")?,
        rows_to_matrix(&y_rows, "y")?,
    )?;
    if with_fault {
        traj.fault_truth = Some(truth);
    }
    Ok(traj)
}

/// Residual CSV: `k,r_norm,r_1..r_dim`.
pub fn write_residuals_csv(path: &Path, trace: &ResidualTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = trace.dim();
    let mut header = vec!["k".to_string(), "r_norm".to_string()];
    header.extend((1..=dim).map(|i| format!("r_{i}")));
    w.write_record(&header)?;
    for (t, v) in trace.times.iter().zip(&trace.vectors) {
        let mut record = vec![t.to_string(), v.norm().to_string()];
        record.extend(v.iter().map(|x| x.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Angle CSV: `k,r_norm,cos_<ch>...,theta_<ch>...`.
pub fn write_angles_csv(path: &Path, trace: &AngleTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["k".to_string(), "r_norm".to_string()];
    header.extend(trace.channels.iter().map(|c| format!("cos_{}", c.label())));
    header.extend(trace.channels.iter().map(|c| format!("theta_{}", c.label())));
    w.write_record(&header)?;
    for i in 0..trace.times.len() {
        let mut record = vec![trace.times[i].to_string(), trace.residual_norms[i].to_string()];
        record.extend(trace.cosines[i].iter().map(|x| x.to_string()));
        record.extend(trace.angles[i].iter().map(|x| x.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Decision CSV: `k,r_norm,cos_<ch>...,decision`.
pub fn write_decisions_csv(
    path: &Path,
    trace: &AngleTrace,
    decisions: &[Decision],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["k".to_string(), "r_norm".to_string()];
    header.extend(trace.channels.iter().map(|c| format!("cos_{}", c.label())));
    header.push("decision".into());
    w.write_record(&header)?;
    for (i, d) in decisions.iter().enumerate() {
        let mut record = vec![trace.times[i].to_string(), trace.residual_norms[i].to_string()];
        record.extend(trace.cosines[i].iter().map(|x| x.to_string()));
        record.push(d.label());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct BasisDoc {
    ambient_dim: usize,
    columns: Vec<Vec<f64>>,
}

impl BasisDoc {
    fn from_basis(b: &SubspaceBasis) -> Self {
        BasisDoc { ambient_dim: b.ambient_dim(), columns: matrix_to_rows(b.matrix()) }
    }

    fn to_basis(&self) -> Result<SubspaceBasis> {
        let m = rows_to_matrix(&self.columns, "basis")?;
        Ok(SubspaceBasis::from_orthonormal(m)?)
    }
}

fn policy_to_spec(policy: RankPolicy) -> RankPolicySpec {
    match policy {
        RankPolicy::FixedOrder(order) => RankPolicySpec::Fixed { order },
        RankPolicy::GapHeuristic { min_ratio } => RankPolicySpec::Gap { min_ratio },
        RankPolicy::Threshold { rel_tol } => RankPolicySpec::Threshold { rel_tol },
    }
}

#[derive(Serialize, Deserialize)]
pub struct FilterDoc {
    pub schema_version: u32,
    pub horizon: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub residual_dim: usize,
    pub estimated_order: usize,
    pub rank_policy: RankPolicySpec,
    pub k_u: Vec<Vec<f64>>,
    pub k_y: Vec<Vec<f64>>,
    pub l11: Vec<Vec<f64>>,
    pub l21: Vec<Vec<f64>>,
    l21_basis: BasisDoc,
    l22_basis: BasisDoc,
}

pub fn write_filter_json(path: &Path, filter: &KernelFilter) -> Result<()> {
    let doc = FilterDoc {
        schema_version: SCHEMA_VERSION,
        horizon: filter.horizon(),
        n_u: filter.input_dim(),
        n_y: filter.output_dim(),
        residual_dim: filter.residual_dim(),
        estimated_order: filter.estimated_order(),
        rank_policy: policy_to_spec(filter.rank_policy()),
        k_u: matrix_to_rows(filter.k_u()),
        k_y: matrix_to_rows(filter.k_y()),
        l11: matrix_to_rows(filter.l11()),
        l21: matrix_to_rows(filter.l21()),
        l21_basis: BasisDoc::from_basis(filter.l21_basis()),
        l22_basis: BasisDoc::from_basis(filter.l22_basis()),
    };
    std::fs::write(path, serde_json::to_string_pretty(&doc)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_filter_json(path: &Path) -> Result<KernelFilter> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let doc: FilterDoc = serde_json::from_str(&text).context("parsing filter json")?;
    if doc.schema_version != SCHEMA_VERSION {
        bail!("unsupported filter schema_version {}", doc.schema_version);
    }
    Ok(KernelFilter::from_parts(
        doc.horizon,
        doc.n_u,
        doc.n_y,
        rows_to_matrix(&doc.k_u, "k_u")?,
        rows_to_matrix(&doc.k_y, "k_y")?,
        doc.estimated_order,
        doc.rank_policy.to_policy(),
        rows_to_matrix(&doc.l11, "l11")?,
        rows_to_matrix(&doc.l21, "l21")?,
        doc.l21_basis.to_basis()?,
        doc.l22_basis.to_basis()?,
    )?)
}

#[derive(Serialize, Deserialize)]
struct DictionaryEntryDoc {
    channel: String,
    matrix: Vec<Vec<f64>>,
    basis: BasisDoc,
    rank: usize,
}

#[derive(Serialize, Deserialize)]
pub struct DictionaryDoc {
    pub schema_version: u32,
    pub horizon: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub residual_dim: usize,
    entries: Vec<DictionaryEntryDoc>,
}

pub fn write_dictionaries_json(path: &Path, dicts: &FaultDictionarySet) -> Result<()> {
    let doc = DictionaryDoc {
        schema_version: SCHEMA_VERSION,
        horizon: dicts.horizon,
        n_u: dicts.n_u,
        n_y: dicts.n_y,
        residual_dim: dicts.residual_dim,
        entries: dicts
            .entries
            .iter()
            .map(|e| DictionaryEntryDoc {
                channel: e.channel.label(),
                matrix: matrix_to_rows(&e.matrix),
                basis: BasisDoc::from_basis(&e.basis),
                rank: e.rank,
            })
            .collect(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&doc)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_dictionaries_json(path: &Path) -> Result<FaultDictionarySet> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let doc: DictionaryDoc = serde_json::from_str(&text).context("parsing dictionaries json")?;
    if doc.schema_version != SCHEMA_VERSION {
        bail!("unsupported dictionaries schema_version {}", doc.schema_version);
    }
    let entries = doc
        .entries
        .iter()
        .map(|e| {
            Ok(DictionaryEntry {
                channel: FaultChannel::parse(&e.channel)?,
                matrix: rows_to_matrix(&e.matrix, "dictionary matrix")?,
                basis: e.basis.to_basis()?,
                rank: e.rank,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FaultDictionarySet {
        horizon: doc.horizon,
        n_u: doc.n_u,
        n_y: doc.n_y,
        residual_dim: doc.residual_dim,
        entries,
    })
}

#[derive(Serialize)]
struct ZeroCountDoc {
    finite: usize,
    infinite: usize,
    total: usize,
    horizon_used: usize,
    minimal_delay: usize,
}

#[derive(Serialize)]
struct IntersectionRecordDoc {
    first: String,
    second: String,
    dimension: usize,
    nullity_dimension: Option<usize>,
    theorem_case: String,
    predicted: Option<usize>,
    prediction_matches: Option<bool>,
    basis: Vec<Vec<f64>>,
    zero_dynamic_fault_basis: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize)]
struct DiscernibilityDoc {
    schema_version: u32,
    horizon: usize,
    channels: Vec<String>,
    records: Vec<IntersectionRecordDoc>,
    channel_zeros: Vec<(String, ZeroCountDoc)>,
    subset_observability_ok: Option<bool>,
    warnings: Vec<String>,
}

pub fn write_discernibility_json(path: &Path, report: &DiscernibilityReport) -> Result<()> {
    let doc = DiscernibilityDoc {
        schema_version: SCHEMA_VERSION,
        horizon: report.horizon,
        channels: report.channels.iter().map(|c| c.label()).collect(),
        records: report
            .records
            .iter()
            .map(|r| IntersectionRecordDoc {
                first: r.first.label(),
                second: r.second.label(),
                dimension: r.dimension,
                nullity_dimension: r.nullity_dimension,
                theorem_case: format!("{:?}", r.theorem_case),
                predicted: r.predicted,
                prediction_matches: r.prediction_matches,
                basis: matrix_to_rows(r.basis.matrix()),
                zero_dynamic_fault_basis: r.zero_dynamic_fault_basis.as_ref().map(matrix_to_rows),
            })
            .collect(),
        channel_zeros: report
            .channel_zeros
            .iter()
            .map(|(c, z)| {
                (
                    c.label(),
                    ZeroCountDoc {
                        finite: z.finite,
                        infinite: z.infinite,
                        total: z.total,
                        horizon_used: z.horizon_used,
                        minimal_delay: z.minimal_delay,
                    },
                )
            })
            .collect(),
        subset_observability_ok: report.subset_observability_ok,
        warnings: report.warnings.clone(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&doc)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
