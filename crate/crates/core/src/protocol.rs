//! Two-phase minimum-gain ranging.
//!
//! A sounding packet at high gain gives a coarse estimate. The coarse
//! estimate picks the lowest gain known to reach that distance, and a second
//! packet at that gain, far from saturation, gives the refined estimate.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, DistanceKey, GainKey, GAIN_COUNT, MAX_GAIN_DB};
use crate::evaluation::{EvalError, TrainedPipeline};
use crate::features::FeatureSpec;
use crate::metrics::exact_sum;
use crate::regressors::{ModelConfig, RegressorError};
use crate::sim::{simulate_packet, EnvironmentProfile, ReceiverProfile, SimError};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("ranging needs AGC-off data and an AGC-off receiver")]
    AgcOn,
    #[error("calibration data lacks gains: {0:?}")]
    MissingGains(Vec<f64>),
    #[error("no delivered record at {0} m at any gain")]
    MissingGainCoverage(DistanceKey),
    #[error("sounding gain {0} dB is not on the gain grid")]
    InvalidSoundingGain(f64),
    #[error("sounding packet was lost")]
    SoundingLost,
    #[error("trial count must be >= 1")]
    NoTrials,
    #[error(transparent)]
    Dataset(DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Regressor(#[from] RegressorError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<DatasetError> for ProtocolError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::NoDeliveredAtDistance(d) => ProtocolError::MissingGainCoverage(d),
            other => ProtocolError::Dataset(other),
        }
    }
}

/// Features and model of one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub features: FeatureSpec,
    #[serde(default)]
    pub model: ModelConfig,
}

impl Default for PhaseConfig {
    /// KNN on FPPL and transmit gain.
    fn default() -> Self {
        Self {
            features: FeatureSpec::fppl_gain(),
            model: ModelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub coarse: PhaseConfig,
    pub fine: PhaseConfig,
    pub sounding_gain_db: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            coarse: PhaseConfig::default(),
            fine: PhaseConfig::default(),
            sounding_gain_db: MAX_GAIN_DB,
        }
    }
}

impl ProtocolConfig {
    /// Both phases use the same features and model.
    pub fn uniform(features: FeatureSpec, model: ModelConfig) -> Self {
        let phase = PhaseConfig { features, model };
        Self {
            coarse: phase.clone(),
            fine: phase,
            sounding_gain_db: MAX_GAIN_DB,
        }
    }
}

/// Calibrated ranging state; immutable once built.
#[derive(Debug)]
pub struct RangingSession {
    min_gain: BTreeMap<DistanceKey, f64>,
    coarse: TrainedPipeline,
    fine: TrainedPipeline,
    fine_training_records: usize,
    sounding_gain_db: f64,
}

/// Builds a session from AGC-off training data covering all 68 gains.
///
/// The coarse model sees every delivered record; the fine model only the
/// records sent at their distance's minimum gain.
pub fn calibrate(train: &Dataset, config: &ProtocolConfig) -> Result<RangingSession, ProtocolError> {
    if train.agc_on() != Some(false) {
        return Err(ProtocolError::AgcOn);
    }
    let sounding =
        GainKey::from_db(config.sounding_gain_db).ok_or(ProtocolError::InvalidSoundingGain(config.sounding_gain_db))?;
    let present: std::collections::BTreeSet<GainKey> = train.records().iter().map(|r| r.gain_key()).collect();
    if present.len() < GAIN_COUNT {
        let missing = (0..GAIN_COUNT)
            .filter_map(GainKey::from_index)
            .filter(|g| !present.contains(g))
            .map(GainKey::db)
            .collect();
        return Err(ProtocolError::MissingGains(missing));
    }
    let min_gain = train.min_gain_table()?;
    let fine_set = train.filter(|r| min_gain.get(&r.distance_key()) == Some(&r.tx_gain_db));

    let coarse_factory = config.coarse.model.factory()?;
    let fine_factory = config.fine.model.factory()?;
    let (coarse, fine) = rayon::join(
        || TrainedPipeline::fit(train, &config.coarse.features, &coarse_factory),
        || TrainedPipeline::fit(&fine_set, &config.fine.features, &fine_factory),
    );
    Ok(RangingSession {
        min_gain,
        coarse: coarse?,
        fine: fine?,
        fine_training_records: fine_set.delivered_count(),
        sounding_gain_db: sounding.db(),
    })
}

/// Outcome of one ranging attempt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub coarse_m: f64,
    /// Equals `coarse_m` when every phase-2 packet was lost.
    pub refined_m: f64,
    /// Gain of the last phase-2 transmission.
    pub gain_used_db: f64,
    /// Packets sent in both phases.
    pub transmissions: u32,
    pub refined_delivered: bool,
}

impl RangingSession {
    /// Distance to minimum delivering gain.
    pub fn min_gain_table(&self) -> &BTreeMap<DistanceKey, f64> {
        &self.min_gain
    }

    pub fn sounding_gain_db(&self) -> f64 {
        self.sounding_gain_db
    }

    /// Delivered records the fine model was trained on.
    pub fn fine_training_records(&self) -> usize {
        self.fine_training_records
    }

    pub fn coarse_model(&self) -> &TrainedPipeline {
        &self.coarse
    }

    pub fn fine_model(&self) -> &TrainedPipeline {
        &self.fine
    }

    /// Nearest calibration distance; ties go to the smaller distance.
    pub fn snap(&self, distance_m: f64) -> DistanceKey {
        let mut best: Option<(f64, DistanceKey)> = None;
        for &d in self.min_gain.keys() {
            let gap = (d.meters() - distance_m).abs();
            if best.is_none_or(|(g, _)| gap < g) {
                best = Some((gap, d));
            }
        }
        best.expect("calibration table is never empty").1
    }

    /// Runs both phases against the simulated link.
    pub fn estimate<R: Rng + ?Sized>(
        &self,
        env: &EnvironmentProfile,
        rx: &ReceiverProfile,
        true_distance_m: f64,
        rng: &mut R,
    ) -> Result<Estimate, ProtocolError> {
        if rx.agc_on {
            return Err(ProtocolError::AgcOn);
        }
        let sounding = simulate_packet(env, rx, true_distance_m, self.sounding_gain_db, rng)?;
        let coarse_m = self
            .coarse
            .predict_record(&sounding)?
            .ok_or(ProtocolError::SoundingLost)?;

        let table_gain = self.min_gain[&self.snap(coarse_m)];
        let mut gain = GainKey::from_db(table_gain).expect("table gains come from the grid");
        let mut transmissions = 1;
        loop {
            transmissions += 1;
            let packet = simulate_packet(env, rx, true_distance_m, gain.db(), rng)?;
            if let Some(refined_m) = self.fine.predict_record(&packet)? {
                return Ok(Estimate {
                    coarse_m,
                    refined_m,
                    gain_used_db: gain.db(),
                    transmissions,
                    refined_delivered: true,
                });
            }
            match gain.step_up() {
                Some(next) => gain = next,
                None => {
                    return Ok(Estimate {
                        coarse_m,
                        refined_m: coarse_m,
                        gain_used_db: gain.db(),
                        transmissions,
                        refined_delivered: false,
                    })
                }
            }
        }
    }
}

/// One benchmark trial; estimates are `None` when the sounding packet was lost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub true_distance_m: f64,
    pub estimate: Option<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub trials: usize,
    pub sounding_lost: usize,
    /// Trials whose first phase-2 packet was lost.
    pub fallbacks: usize,
    pub refined_lost: usize,
    pub transmissions: u64,
    /// Coarse (sounding-gain only) estimate.
    pub baseline_averaged_mae: f64,
    pub refined_averaged_mae: f64,
    pub baseline_overall_mae: f64,
    pub refined_overall_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bench {
    pub trials: Vec<Trial>,
    pub summary: BenchSummary,
}

/// Random stream of one benchmark trial. The top stream bit keeps these
/// disjoint from the simulator's per-packet streams under the same seed.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 63) | trial as u64);
    rng
}

/// Ranges `n_trials` distances drawn uniformly from the calibration grid.
///
/// Averaged MAE is the unweighted mean over grid distances of each
/// distance's MAE, for both the coarse and the refined estimate.
pub fn run_bench(
    session: &RangingSession,
    env: &EnvironmentProfile,
    rx: &ReceiverProfile,
    n_trials: usize,
    seed: u64,
) -> Result<Bench, ProtocolError> {
    if n_trials == 0 {
        return Err(ProtocolError::NoTrials);
    }
    let grid: Vec<f64> = session.min_gain.keys().map(|d| d.meters()).collect();
    let trials = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, i);
            let true_distance_m = grid[rng.random_range(0..grid.len())];
            let estimate = match session.estimate(env, rx, true_distance_m, &mut rng) {
                Ok(e) => Some(e),
                Err(ProtocolError::SoundingLost) => None,
                Err(e) => return Err(e),
            };
            Ok(Trial {
                true_distance_m,
                estimate,
            })
        })
        .collect::<Result<Vec<_>, ProtocolError>>()?;

    let mut baseline: BTreeMap<DistanceKey, Vec<f64>> = BTreeMap::new();
    let mut refined: BTreeMap<DistanceKey, Vec<f64>> = BTreeMap::new();
    let mut summary = BenchSummary {
        trials: n_trials,
        sounding_lost: 0,
        fallbacks: 0,
        refined_lost: 0,
        transmissions: 0,
        baseline_averaged_mae: f64::NAN,
        refined_averaged_mae: f64::NAN,
        baseline_overall_mae: f64::NAN,
        refined_overall_mae: f64::NAN,
    };
    for t in &trials {
        let Some(e) = t.estimate else {
            summary.sounding_lost += 1;
            summary.transmissions += 1;
            continue;
        };
        summary.transmissions += u64::from(e.transmissions);
        summary.fallbacks += usize::from(e.transmissions > 2);
        summary.refined_lost += usize::from(!e.refined_delivered);
        let bin = session.snap(t.true_distance_m);
        baseline
            .entry(bin)
            .or_default()
            .push((e.coarse_m - t.true_distance_m).abs());
        refined
            .entry(bin)
            .or_default()
            .push((e.refined_m - t.true_distance_m).abs());
    }
    if !baseline.is_empty() {
        let averaged = |bins: &BTreeMap<DistanceKey, Vec<f64>>| {
            let means: Vec<f64> = bins.values().map(|v| exact_sum(v) / v.len() as f64).collect();
            exact_sum(&means) / means.len() as f64
        };
        let overall = |bins: &BTreeMap<DistanceKey, Vec<f64>>| {
            let all: Vec<f64> = bins.values().flatten().copied().collect();
            exact_sum(&all) / all.len() as f64
        };
        summary.baseline_averaged_mae = averaged(&baseline);
        summary.refined_averaged_mae = averaged(&refined);
        summary.baseline_overall_mae = overall(&baseline);
        summary.refined_overall_mae = overall(&refined);
    }
    Ok(Bench { trials, summary })
}

impl Bench {
    /// One row per trial; estimate fields are empty for lost soundings.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ProtocolError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "true_distance_m",
            "coarse_m",
            "refined_m",
            "gain_used_db",
            "sounding_delivered",
            "refined_delivered",
        ])?;
        for t in &self.trials {
            let row = match t.estimate {
                Some(e) => [
                    t.true_distance_m.to_string(),
                    e.coarse_m.to_string(),
                    e.refined_m.to_string(),
                    e.gain_used_db.to_string(),
                    "true".to_string(),
                    e.refined_delivered.to_string(),
                ],
                None => [
                    t.true_distance_m.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    "false".to_string(),
                    "false".to_string(),
                ],
            };
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}
