//! JSON experiment configuration: model source, input generators, fault
//! schedule, noise mode, estimator knobs, thresholds, and Monte Carlo
//! parameters. All matrices are row-major nested arrays.

use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use fdi_core::kernel::RankPolicy;
use fdi_core::system::{
    presets, FaultChannel, FaultScenario, FaultSegment, FaultSignal, InputKind, NoiseModel,
    StateSpaceModel,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// The built-in four-state demonstration plant.
    Benchmark,
    Inline {
        a: Vec<Vec<f64>>,
        b_u: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        d_u: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kalman_gain: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma_e: Option<Vec<Vec<f64>>>,
    },
    File { path: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSpec {
    Prbs { amplitude: f64, seed: u64 },
    MultiStep { values: Vec<f64>, dwell: usize },
    Impulse,
    Zero,
    FlatSpectrum { amplitude: f64, period: usize, seed: u64 },
}

impl InputSpec {
    /// Input generator with per-trial seed offsetting; seedless kinds repeat.
    pub fn kind_for_trial(&self, trial: u64) -> InputKind {
        match self {
            InputSpec::Prbs { amplitude, seed } => {
                InputKind::Prbs { amplitude: *amplitude, seed: seed.wrapping_add(trial) }
            }
            InputSpec::MultiStep { values, dwell } => {
                InputKind::MultiStep { values: values.clone(), dwell: *dwell }
            }
            InputSpec::Impulse => InputKind::Impulse,
            InputSpec::Zero => InputKind::Zero,
            InputSpec::FlatSpectrum { amplitude, period, seed } => InputKind::FlatSpectrum {
                amplitude: *amplitude,
                period: *period,
                seed: seed.wrapping_add(trial),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalSpec {
    Zero,
    Constant { value: f64 },
    Sinusoid { amplitude: f64, normalized_frequency: f64, phase: f64 },
    GeometricDecay { base: f64, offset_time: usize },
    Step { level: f64 },
    Series { values: Vec<f64> },
}

impl SignalSpec {
    fn to_signal(&self) -> FaultSignal {
        match self {
            SignalSpec::Zero => FaultSignal::Zero,
            SignalSpec::Constant { value } => FaultSignal::Constant(*value),
            SignalSpec::Sinusoid { amplitude, normalized_frequency, phase } => {
                FaultSignal::Sinusoid {
                    amplitude: *amplitude,
                    normalized_frequency: *normalized_frequency,
                    phase: *phase,
                }
            }
            SignalSpec::GeometricDecay { base, offset_time } => {
                FaultSignal::GeometricDecay { base: *base, offset_time: *offset_time }
            }
            SignalSpec::Step { level } => FaultSignal::Step { level: *level },
            SignalSpec::Series { values } => FaultSignal::Series(values.clone()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub start: usize,
    pub end: usize,
    /// Channel label: `a<i>` for actuators, `s<j>` for sensors (1-based).
    pub channel: String,
    pub signal: SignalSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NoiseSpec {
    Off,
    /// Scale the model's innovation covariance to hit a target SNR in dB
    /// (output power over stationary noise-contribution power).
    SnrDb { snr_db: f64 },
    /// Use the model's innovation covariance exactly as given.
    Covariance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RankPolicySpec {
    Fixed { order: usize },
    Gap { min_ratio: f64 },
    Threshold { rel_tol: f64 },
}

impl RankPolicySpec {
    pub fn to_policy(&self) -> RankPolicy {
        match self {
            RankPolicySpec::Fixed { order } => RankPolicy::FixedOrder(*order),
            RankPolicySpec::Gap { min_ratio } => RankPolicy::GapHeuristic { min_ratio: *min_ratio },
            RankPolicySpec::Threshold { rel_tol } => RankPolicy::Threshold { rel_tol: *rel_tol },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSource {
    /// Estimate the kernel from healthy data (the data-driven pipeline).
    Data,
    /// Build the kernel and signatures from the model (nominal design).
    Model,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HealthySpec {
    pub input: InputSpec,
    pub samples: usize,
    /// Held-out healthy samples used to calibrate the detection threshold.
    pub validation_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestSpec {
    pub input: InputSpec,
    pub samples: usize,
    pub scenario: Vec<SegmentSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdSpec {
    /// Residual-norm detection threshold; when absent it is calibrated as
    /// 5x the 99th percentile of healthy validation residual norms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    pub tie: f64,
    pub angle: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloSpec {
    pub trials: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub model: ModelSpec,
    pub horizon: usize,
    pub kernel_source: KernelSource,
    pub rank_policy: RankPolicySpec,
    pub healthy: HealthySpec,
    pub test: TestSpec,
    pub noise: NoiseSpec,
    pub thresholds: ThresholdSpec,
    pub monte_carlo: MonteCarloSpec,
    pub output_dir: String,
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != ncols) {
        bail!("field '{what}': ragged rows");
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig = serde_json::from_str(&text).context("parsing config")?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version);
        }
        if self.horizon < 2 {
            bail!("field 'horizon': must be at least 2");
        }
        if self.monte_carlo.trials < 1 {
            bail!("field 'monte_carlo.trials': must be at least 1");
        }
        if self.healthy.samples == 0 || self.test.samples == 0 {
            bail!("field 'healthy.samples'/'test.samples': must be positive");
        }
        if self.thresholds.tie < 0.0 || self.thresholds.angle < 0.0 {
            bail!("field 'thresholds': tolerances must be non-negative");
        }
        if let Some(r) = self.thresholds.residual {
            if r < 0.0 {
                bail!("field 'thresholds.residual': must be non-negative");
            }
        }
        for (idx, seg) in self.test.scenario.iter().enumerate() {
            if seg.start >= seg.end {
                bail!("field 'test.scenario[{idx}]': empty interval [{}, {})", seg.start, seg.end);
            }
            if seg.end > self.test.samples {
                bail!(
                    "field 'test.scenario[{idx}]': end {} beyond test.samples {}",
                    seg.end,
                    self.test.samples
                );
            }
            FaultChannel::parse(&seg.channel)
                .map_err(|e| anyhow::anyhow!("field 'test.scenario[{idx}].channel': {e}"))?;
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<StateSpaceModel> {
        match &self.model {
            ModelSpec::Benchmark => Ok(presets::benchmark_plant()),
            ModelSpec::Inline { a, b_u, c, d_u, kalman_gain, sigma_e } => {
                let noise = match (kalman_gain, sigma_e) {
                    (Some(k), Some(s)) => Some(NoiseModel {
                        kalman_gain: to_matrix(k, "model.kalman_gain")?,
                        sigma_e: to_matrix(s, "model.sigma_e")?,
                    }),
                    (None, None) => None,
                    _ => bail!("field 'model': kalman_gain and sigma_e must come together"),
                };
                Ok(StateSpaceModel::new(
                    to_matrix(a, "model.a")?,
                    to_matrix(b_u, "model.b_u")?,
                    to_matrix(c, "model.c")?,
                    to_matrix(d_u, "model.d_u")?,
                    noise,
                )?)
            }
            ModelSpec::File { path } => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading model file {path}"))?;
                let spec: ModelSpec = serde_json::from_str(&text).context("parsing model file")?;
                match spec {
                    ModelSpec::File { .. } => bail!("model files cannot nest further files"),
                    other => {
                        let mut cfg = self.clone();
                        cfg.model = other;
                        cfg.build_model()
                    }
                }
            }
        }
    }

    pub fn build_scenario(&self) -> Result<FaultScenario> {
        let segments = self
            .test
            .scenario
            .iter()
            .map(|seg| {
                Ok(FaultSegment {
                    start: seg.start,
                    end: seg.end,
                    channel: FaultChannel::parse(&seg.channel)?,
                    signal: seg.signal.to_signal(),
                })
            })
            .collect::<fdi_core::Result<Vec<_>>>()?;
        Ok(FaultScenario::new(segments)?)
    }

    /// The noise-free single-fault demonstration: nominal (model-based)
    /// dictionaries, a multi-step input, and an actuator fault that walks
    /// through a sine, a geometric decay at the plant's shared zero, and a
    /// constant offset.
    pub fn scenario1() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            model: ModelSpec::Benchmark,
            horizon: 5,
            kernel_source: KernelSource::Model,
            rank_policy: RankPolicySpec::Fixed { order: 4 },
            healthy: HealthySpec {
                input: InputSpec::Prbs { amplitude: 1.0, seed: 42 },
                samples: 500,
                validation_samples: 300,
            },
            test: TestSpec {
                input: InputSpec::MultiStep { values: vec![1.0, 2.0, 1.5], dwell: 20 },
                samples: 200,
                scenario: vec![
                    SegmentSpec {
                        start: 10,
                        end: 70,
                        channel: "a1".into(),
                        signal: SignalSpec::Sinusoid {
                            amplitude: 1.0,
                            normalized_frequency: 0.2,
                            phase: 0.0,
                        },
                    },
                    SegmentSpec {
                        start: 70,
                        end: 130,
                        channel: "a1".into(),
                        signal: SignalSpec::GeometricDecay { base: 0.95, offset_time: 70 },
                    },
                    SegmentSpec {
                        start: 130,
                        end: 200,
                        channel: "a1".into(),
                        signal: SignalSpec::Constant { value: -0.5 },
                    },
                ],
            },
            noise: NoiseSpec::Off,
            thresholds: ThresholdSpec { residual: None, tie: 1e-6, angle: 1e-6 },
            monte_carlo: MonteCarloSpec { trials: 1, master_seed: 1 },
            output_dir: "runs/scenario1".into(),
        }
    }

    /// The noisy Monte Carlo experiment: data-driven dictionaries at SNR
    /// 25 dB, L = 15, N = 1000 healthy samples, and a test run that switches
    /// directly between fault modes on every channel.
    pub fn scenario2() -> Self {
        let seg = |start: usize, end: usize, channel: &str, signal: SignalSpec| SegmentSpec {
            start,
            end,
            channel: channel.into(),
            signal,
        };
        let sine = |amplitude: f64, normalized_frequency: f64| SignalSpec::Sinusoid {
            amplitude,
            normalized_frequency,
            phase: 0.0,
        };
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            model: ModelSpec::Benchmark,
            horizon: 15,
            kernel_source: KernelSource::Data,
            rank_policy: RankPolicySpec::Gap { min_ratio: 2.0 },
            healthy: HealthySpec {
                input: InputSpec::Prbs { amplitude: 1.0, seed: 42 },
                samples: 1000,
                validation_samples: 300,
            },
            test: TestSpec {
                input: InputSpec::Prbs { amplitude: 1.0, seed: 101 },
                samples: 800,
                scenario: vec![
                    seg(80, 170, "a1", sine(3.0, 0.1)),
                    seg(170, 260, "s1", SignalSpec::Step { level: 8.0 }),
                    seg(260, 350, "s2", sine(6.0, 0.05)),
                    seg(350, 440, "s3", SignalSpec::Step { level: -8.0 }),
                    seg(440, 530, "a1", SignalSpec::Constant { value: 2.0 }),
                    seg(530, 620, "s2", SignalSpec::Step { level: 5.0 }),
                    seg(620, 710, "s1", sine(6.0, 0.08)),
                    seg(710, 800, "s3", sine(6.0, 0.1)),
                ],
            },
            noise: NoiseSpec::SnrDb { snr_db: 25.0 },
            thresholds: ThresholdSpec { residual: None, tie: 1e-6, angle: 1e-6 },
            monte_carlo: MonteCarloSpec { trials: 50, master_seed: 7 },
            output_dir: "runs/scenario2".into(),
        }
    }

    /// The reference config written by `init-config`.
    pub fn reference() -> Self {
        Self::scenario2()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_roundtrip() {
        for config in [ExperimentConfig::scenario1(), ExperimentConfig::scenario2()] {
            config.validate().unwrap();
            let text = serde_json::to_string(&config).unwrap();
            let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
            back.validate().unwrap();
            back.build_model().unwrap();
            back.build_scenario().unwrap();
        }
    }

    #[test]
    fn validation_catches_bad_fields() {
        let mut config = ExperimentConfig::scenario1();
        config.horizon = 1;
        assert!(config.validate().unwrap_err().to_string().contains("horizon"));

        let mut config = ExperimentConfig::scenario1();
        config.monte_carlo.trials = 0;
        assert!(config.validate().unwrap_err().to_string().contains("trials"));

        let mut config = ExperimentConfig::scenario1();
        config.test.scenario[0].channel = "q3".into();
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::scenario1();
        config.test.scenario[0].end = 5000;
        assert!(config.validate().unwrap_err().to_string().contains("beyond"));
    }

    #[test]
    fn inline_model_requires_paired_noise_fields() {
        let config = ExperimentConfig {
            model: ModelSpec::Inline {
                a: vec![vec![0.5]],
                b_u: vec![vec![1.0]],
                c: vec![vec![1.0]],
                d_u: vec![vec![0.0]],
                kalman_gain: Some(vec![vec![0.1]]),
                sigma_e: None,
            },
            ..ExperimentConfig::scenario1()
        };
        assert!(config.build_model().is_err());
    }
}
