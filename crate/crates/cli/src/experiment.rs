//! Pipeline orchestration: scenario runs (data collection, filter fitting,
//! classification, discernibility, scoring) and the seeded Monte Carlo
//! harness with its accuracy metrics.

use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use fdi_core::classifier::{self, AngleTrace, Decision, DecisionStatus};
use fdi_core::dictionary::{
    build_dictionaries, build_signatures, FaultDictionarySet, SignatureSource,
};
use fdi_core::discern::{intersection_report, DiscernibilityReport};
use fdi_core::kernel::{estimate_kernel, exact_kernel, residual, KernelFilter, ResidualTrace};
use fdi_core::system::{
    generate_input, simulate, FaultChannel, FaultScenario, NoiseSetting, StateSpaceModel,
    TrajectoryData,
};

use crate::config::{ExperimentConfig, KernelSource, NoiseSpec};
use crate::io;

fn splitmix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean squared output entry of the noise-free healthy response, and the
/// stationary per-entry noise-contribution power at unit covariance scale.
pub fn snr_components(model: &StateSpaceModel, input: &DMatrix<f64>) -> Result<(f64, f64)> {
    let clean = simulate(model, input, &FaultScenario::empty(), NoiseSetting::Off, None)
        .context("simulating the noise-free reference")?;
    let p_sig = clean.y.iter().map(|v| v * v).sum::<f64>() / (clean.y.len() as f64);

    let nm = model
        .noise()
        .ok_or_else(|| anyhow::anyhow!("model carries no noise description"))?;
    let n = model.order();
    let q = &nm.kalman_gain * &nm.sigma_e * nm.kalman_gain.transpose();
    // stationary covariance: P = A P A' + Q via the Kronecker linear system
    let a = model.a();
    let eye = DMatrix::<f64>::identity(n * n, n * n);
    let system = eye - a.kronecker(a);
    let q_vec = nalgebra::DVector::from_iterator(n * n, q.iter().copied());
    let p_vec = system
        .lu()
        .solve(&q_vec)
        .ok_or_else(|| anyhow::anyhow!("stationary covariance solve failed (unstable A?)"))?;
    let p = DMatrix::from_iterator(n, n, p_vec.iter().copied());
    let output_cov = model.c() * p * model.c().transpose() + &nm.sigma_e;
    let p_noise = output_cov.trace() / model.output_dim() as f64;
    Ok((p_sig, p_noise))
}

/// Scale factor for the innovation covariance achieving the target SNR (dB):
/// `SNR = 10 log10(P_signal / P_noise)` with `P_signal` the mean squared
/// noise-free output entry under the given input and `P_noise` the stationary
/// per-entry noise contribution.
pub fn snr_to_noise_scale(
    model: &StateSpaceModel,
    input: &DMatrix<f64>,
    target_snr_db: f64,
) -> Result<f64> {
    if target_snr_db.is_infinite() && target_snr_db > 0.0 {
        return Ok(0.0);
    }
    let (p_sig, p_noise) = snr_components(model, input)?;
    if p_sig <= 0.0 {
        bail!("zero signal power: the reference trajectory has no output energy");
    }
    if p_noise <= 0.0 {
        bail!("zero noise power: the innovation covariance is zero");
    }
    Ok(p_sig / (p_noise * 10f64.powf(target_snr_db / 10.0)))
}

/// Classification quality over one test run. The primary score counts
/// fault-active instants whose residual exceeded the detection threshold;
/// a window is transient when the active channel changes inside it.
#[derive(Debug, Clone, Serialize)]
pub struct AccuracyReport {
    /// Correct / detected fault-active instants (transients included).
    pub fault_active: Option<f64>,
    /// Same, excluding windows that straddle a mode switch.
    pub fault_active_excl_transient: Option<f64>,
    /// Correct over every instant (healthy instants must decide Healthy).
    pub all_instants: f64,
    pub evaluated_fault_instants: usize,
    pub evaluated_steady_instants: usize,
    pub total_instants: usize,
    /// (truth label, decision label, count), sorted.
    pub confusion: Vec<(String, String, usize)>,
}

fn truth_channel_at(
    truth: &[Option<(FaultChannel, f64)>],
    k: usize,
) -> Option<FaultChannel> {
    truth[k].map(|(c, _)| c)
}

fn score(
    decisions: &[Decision],
    truth: &[Option<(FaultChannel, f64)>],
    horizon: usize,
) -> AccuracyReport {
    let mut fault_correct = 0usize;
    let mut fault_total = 0usize;
    let mut steady_correct = 0usize;
    let mut steady_total = 0usize;
    let mut all_correct = 0usize;
    let mut confusion: std::collections::BTreeMap<(String, String), usize> =
        std::collections::BTreeMap::new();

    for d in decisions {
        let k = d.time;
        let truth_k = truth_channel_at(truth, k);
        let transient = (k..k + horizon)
            .map(|j| truth_channel_at(truth, j))
            .any(|c| c != truth_k);

        let truth_label = truth_k.map(|c| c.label()).unwrap_or_else(|| "healthy".into());
        *confusion.entry((truth_label, d.label())).or_insert(0) += 1;

        let correct_all = match (truth_k, &d.status) {
            (None, DecisionStatus::Healthy) => true,
            (Some(c), DecisionStatus::Fault(dc)) => *dc == c,
            _ => false,
        };
        all_correct += correct_all as usize;

        if let Some(c) = truth_k {
            if !matches!(d.status, DecisionStatus::Healthy) {
                let correct = matches!(&d.status, DecisionStatus::Fault(dc) if *dc == c);
                fault_total += 1;
                fault_correct += correct as usize;
                if !transient {
                    steady_total += 1;
                    steady_correct += correct as usize;
                }
            }
        }
    }

    AccuracyReport {
        fault_active: (fault_total > 0).then(|| fault_correct as f64 / fault_total as f64),
        fault_active_excl_transient: (steady_total > 0)
            .then(|| steady_correct as f64 / steady_total as f64),
        all_instants: if decisions.is_empty() {
            1.0
        } else {
            all_correct as f64 / decisions.len() as f64
        },
        evaluated_fault_instants: fault_total,
        evaluated_steady_instants: steady_total,
        total_instants: decisions.len(),
        confusion: confusion.into_iter().map(|((t, d), n)| (t, d, n)).collect(),
    }
}

/// Everything a single pipeline run produces.
pub struct RunResult {
    pub model: StateSpaceModel,
    pub filter: KernelFilter,
    pub dictionaries: FaultDictionarySet,
    pub healthy: TrajectoryData,
    pub test: TrajectoryData,
    pub residuals: ResidualTrace,
    pub angles: AngleTrace,
    pub decisions: Vec<Decision>,
    pub report: DiscernibilityReport,
    pub accuracy: AccuracyReport,
    pub threshold_used: f64,
    pub noise_scale: Option<f64>,
}

/// Run the pipeline for one trial index (0 for single runs); deterministic
/// given the config and `monte_carlo.master_seed`.
pub fn run_trial(config: &ExperimentConfig, trial: usize) -> Result<RunResult> {
    config.validate().context("stage 'config'")?;
    let trial_seed = config.monte_carlo.master_seed.wrapping_add(trial as u64);

    let base_model = config.build_model().context("stage 'model'")?;
    let n_u = base_model.input_dim();

    let (model, noise_scale, noise_setting_for) = match &config.noise {
        NoiseSpec::Off => (base_model, None, None),
        NoiseSpec::Covariance => (base_model, Some(1.0), Some(())),
        NoiseSpec::SnrDb { snr_db } => {
            let calibration_input = generate_input(
                &config.healthy.input.kind_for_trial(trial as u64),
                config.healthy.samples,
                n_u,
            )
            .context("stage 'model'")?;
            let alpha = snr_to_noise_scale(&base_model, &calibration_input, *snr_db)
                .context("stage 'model'")?;
            let scaled = if alpha == 0.0 {
                base_model
            } else {
                base_model.with_scaled_noise(alpha).context("stage 'model'")?
            };
            (scaled, Some(alpha), (alpha > 0.0).then_some(()))
        }
    };
    let noise_at = |stream: u64| match noise_setting_for {
        Some(()) => NoiseSetting::On { seed: splitmix(trial_seed, stream) },
        None => NoiseSetting::Off,
    };

    // data collection
    let healthy_input = generate_input(
        &config.healthy.input.kind_for_trial(trial as u64),
        config.healthy.samples,
        n_u,
    )
    .context("stage 'data'")?;
    let healthy = simulate(&model, &healthy_input, &FaultScenario::empty(), noise_at(1), None)
        .context("stage 'data'")?;

    let validation_input = generate_input(
        &config.healthy.input.kind_for_trial(trial as u64 ^ 0x8000_0000),
        config.healthy.validation_samples.max(config.horizon + 1),
        n_u,
    )
    .context("stage 'data'")?;
    let validation =
        simulate(&model, &validation_input, &FaultScenario::empty(), noise_at(2), None)
            .context("stage 'data'")?;

    let scenario = config.build_scenario().context("stage 'data'")?;
    let test_input =
        generate_input(&config.test.input.kind_for_trial(trial as u64), config.test.samples, n_u)
            .context("stage 'data'")?;
    let test = simulate(&model, &test_input, &scenario, noise_at(3), None)
        .context("stage 'data'")?;

    // filter
    let filter = match config.kernel_source {
        KernelSource::Data => {
            estimate_kernel(&healthy.u, &healthy.y, config.horizon, config.rank_policy.to_policy())
                .context("stage 'kernel'")?
        }
        KernelSource::Model => exact_kernel(&model, config.horizon).context("stage 'kernel'")?,
    };

    // dictionaries
    let source = match config.kernel_source {
        KernelSource::Data => SignatureSource::DataDriven,
        KernelSource::Model => SignatureSource::Oracle(&model),
    };
    let signatures = build_signatures(&filter, source).context("stage 'dictionary'")?;
    let dictionaries = build_dictionaries(&filter, &signatures).context("stage 'dictionary'")?;

    // detection threshold
    let threshold_used = match config.thresholds.residual {
        Some(t) => t,
        None => {
            let val_res =
                residual(&filter, &validation.u, &validation.y).context("stage 'kernel'")?;
            let mut norms = val_res.norms();
            norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let idx = ((norms.len() as f64 * 0.99).ceil() as usize).clamp(1, norms.len()) - 1;
            5.0 * norms[idx]
        }
    };

    // classification
    let residuals = residual(&filter, &test.u, &test.y).context("stage 'classify'")?;
    let angles = classifier::angles(&residuals, &dictionaries).context("stage 'classify'")?;
    let decisions = classifier::decide(&angles, threshold_used, config.thresholds.tie);

    // discernibility; the strict model cross-check applies only when the
    // dictionaries are exact (nominal design or noise-free data) — noisy
    // estimated subspaces legitimately lose the exact intersections
    let exact_dictionaries = matches!(config.kernel_source, KernelSource::Model)
        || matches!(config.noise, NoiseSpec::Off);
    let oracle = exact_dictionaries.then_some(&model);
    let report =
        intersection_report(&dictionaries, oracle, config.horizon).context("stage 'discern'")?;

    // scoring
    let truth = test
        .fault_truth
        .clone()
        .ok_or_else(|| anyhow::anyhow!("stage 'score': simulated test run lost its truth"))?;
    let accuracy = score(&decisions, &truth, config.horizon);

    Ok(RunResult {
        model,
        filter,
        dictionaries,
        healthy,
        test,
        residuals,
        angles,
        decisions,
        report,
        accuracy,
        threshold_used,
        noise_scale,
    })
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    schema_version: u32,
    threshold_used: f64,
    noise_scale: Option<f64>,
    snr_convention: &'a str,
    estimated_order: usize,
    residual_dim: usize,
    accuracy: &'a AccuracyReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    monte_carlo: Option<&'a McSummary>,
}

const SNR_NOTE: &str = "SNR_dB = 10 log10(mean squared noise-free output entry / stationary per-entry noise power); innovation covariance scaled by noise_scale";

/// Run one scenario and write every artifact into `out_dir`.
pub fn run_scenario(config: &ExperimentConfig, out_dir: &Path, quiet: bool) -> Result<RunResult> {
    let result = run_trial(config, 0)?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("stage 'write': creating {}", out_dir.display()))?;
    io::write_filter_json(&out_dir.join("filter.json"), &result.filter)
        .context("stage 'write'")?;
    io::write_dictionaries_json(&out_dir.join("dictionaries.json"), &result.dictionaries)
        .context("stage 'write'")?;
    io::write_residuals_csv(&out_dir.join("residuals.csv"), &result.residuals)
        .context("stage 'write'")?;
    io::write_angles_csv(&out_dir.join("angles.csv"), &result.angles).context("stage 'write'")?;
    io::write_decisions_csv(&out_dir.join("decisions.csv"), &result.angles, &result.decisions)
        .context("stage 'write'")?;
    io::write_discernibility_json(&out_dir.join("discernibility.json"), &result.report)
        .context("stage 'write'")?;
    let summary = SummaryDoc {
        schema_version: crate::config::SCHEMA_VERSION,
        threshold_used: result.threshold_used,
        noise_scale: result.noise_scale,
        snr_convention: SNR_NOTE,
        estimated_order: result.filter.estimated_order(),
        residual_dim: result.filter.residual_dim(),
        accuracy: &result.accuracy,
        monte_carlo: None,
    };
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).context("stage 'write'")?,
    )
    .context("stage 'write'")?;
    if !quiet {
        eprintln!(
            "run: threshold {:.3e}, order {}, fault-active accuracy {:?}",
            result.threshold_used,
            result.filter.estimated_order(),
            result.accuracy.fault_active
        );
    }
    Ok(result)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub estimated_order: usize,
    pub threshold_used: f64,
    pub fault_active: Option<f64>,
    pub fault_active_excl_transient: Option<f64>,
    pub all_instants: f64,
    pub evaluated_fault_instants: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct McSummary {
    pub trials: Vec<TrialSummary>,
    /// Mean/stddev of the fault-active accuracy over trials that evaluated
    /// at least one fault instant.
    pub mean_fault_active: f64,
    pub std_fault_active: f64,
    pub mean_fault_active_excl_transient: f64,
    pub mean_all_instants: f64,
    /// Merged (truth, decision, count) table over all trials.
    pub confusion: Vec<(String, String, usize)>,
}

/// Seeded Monte Carlo over `monte_carlo.trials` runs; trial seeds are
/// `master_seed + trial`, evaluated in parallel, merged in trial order.
pub fn monte_carlo(config: &ExperimentConfig, quiet: bool) -> Result<McSummary> {
    let trials = config.monte_carlo.trials;
    let results: Vec<Result<RunResult>> =
        (0..trials).into_par_iter().map(|t| run_trial(config, t)).collect();

    let mut summaries = Vec::with_capacity(trials);
    let mut confusion: std::collections::BTreeMap<(String, String), usize> =
        std::collections::BTreeMap::new();
    for (t, res) in results.into_iter().enumerate() {
        let r = res.with_context(|| format!("trial {t}"))?;
        for (truth, decision, count) in &r.accuracy.confusion {
            *confusion.entry((truth.clone(), decision.clone())).or_insert(0) += count;
        }
        summaries.push(TrialSummary {
            trial: t,
            seed: config.monte_carlo.master_seed.wrapping_add(t as u64),
            estimated_order: r.filter.estimated_order(),
            threshold_used: r.threshold_used,
            fault_active: r.accuracy.fault_active,
            fault_active_excl_transient: r.accuracy.fault_active_excl_transient,
            all_instants: r.accuracy.all_instants,
            evaluated_fault_instants: r.accuracy.evaluated_fault_instants,
        });
        if !quiet {
            eprintln!("trial {t}: fault-active accuracy {:?}", summaries[t].fault_active);
        }
    }

    let scored: Vec<f64> = summaries.iter().filter_map(|s| s.fault_active).collect();
    let mean = if scored.is_empty() {
        0.0
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    };
    let std = if scored.is_empty() {
        0.0
    } else {
        (scored.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / scored.len() as f64).sqrt()
    };
    let steady: Vec<f64> =
        summaries.iter().filter_map(|s| s.fault_active_excl_transient).collect();
    let mean_steady = if steady.is_empty() {
        0.0
    } else {
        steady.iter().sum::<f64>() / steady.len() as f64
    };
    let mean_all =
        summaries.iter().map(|s| s.all_instants).sum::<f64>() / summaries.len().max(1) as f64;

    Ok(McSummary {
        trials: summaries,
        mean_fault_active: mean,
        std_fault_active: std,
        mean_fault_active_excl_transient: mean_steady,
        mean_all_instants: mean_all,
        confusion: confusion.into_iter().map(|((t, d), n)| (t, d, n)).collect(),
    })
}

/// Run the Monte Carlo harness and persist its summary.
pub fn monte_carlo_to_dir(
    config: &ExperimentConfig,
    out_dir: &Path,
    quiet: bool,
) -> Result<McSummary> {
    let mc = monte_carlo(config, quiet)?;
    std::fs::create_dir_all(out_dir)?;
    #[derive(Serialize)]
    struct Doc<'a> {
        schema_version: u32,
        snr_convention: &'a str,
        monte_carlo: &'a McSummary,
    }
    let doc = Doc {
        schema_version: crate::config::SCHEMA_VERSION,
        snr_convention: SNR_NOTE,
        monte_carlo: &mc,
    };
    std::fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&doc)?)?;
    if !quiet {
        eprintln!(
            "monte carlo: mean fault-active accuracy {:.4} (std {:.4}) over {} trials",
            mc.mean_fault_active,
            mc.std_fault_active,
            mc.trials.len()
        );
    }
    Ok(mc)
}
