//! Synthetic UWB channel and receiver front end.
//!
//! A packet's first path follows a log-distance path-loss law with Gaussian
//! shadowing. Echoes sit at fixed excess delays after it. The receiver adds
//! sample noise, optionally normalizes the peak with an AGC stage and finally
//! clips every sample magnitude. The result is reduced to the register
//! features a DW1000-class receiver reports.

mod presets;

pub use presets::{preset, Preset, PRESET_NAMES};

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{gain_grid, CirRecord, Dataset, DistanceKey, Measurement, Registers, CIR_LEN, FIRST_PATH_INDEX};
use crate::features::ScalarFeature;

/// Unit reference amplitude at 0 dB link budget.
pub const REFERENCE_AMPLITUDE: f64 = 1.0;
/// Largest echo delay that still fits after the first path in the window.
pub const MAX_EXCESS_DELAY: u32 = (CIR_LEN - 1 - FIRST_PATH_INDEX) as u32;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("distance must be > 0, got {0}")]
    NonPositiveDistance(f64),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("CIR is all zero")]
    AllZeroCir,
    #[error("need delivered records at >= 2 distances for gain {gain_db} dB, found {found}")]
    InsufficientDistances { gain_db: f64, found: usize },
    #[error("unknown preset `{name}`; available: {}", available.join(", "))]
    UnknownPreset { name: String, available: Vec<String> },
    #[error("reading config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultipathTap {
    pub excess_delay_ns: u32,
    pub relative_power_db: f64,
    pub jitter_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentProfile {
    pub name: String,
    pub pl_exponent: f64,
    /// Path loss at the 1 m reference distance.
    pub pl_ref_db: f64,
    pub shadowing_sigma_db: f64,
    pub taps: Vec<MultipathTap>,
    /// Standard deviation of the complex noise added to every sample.
    pub noise_floor_amp: f64,
}

impl EnvironmentProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidProfile(msg));
        if !(self.pl_exponent > 0.0) {
            return bad(format!("pl_exponent must be > 0, got {}", self.pl_exponent));
        }
        if !(self.shadowing_sigma_db >= 0.0) {
            return bad(format!(
                "shadowing_sigma_db must be >= 0, got {}",
                self.shadowing_sigma_db
            ));
        }
        if !(self.noise_floor_amp >= 0.0) {
            return bad(format!("noise_floor_amp must be >= 0, got {}", self.noise_floor_amp));
        }
        for tap in &self.taps {
            if tap.excess_delay_ns < 1 || tap.excess_delay_ns > MAX_EXCESS_DELAY {
                return bad(format!(
                    "tap delay {} outside 1..={MAX_EXCESS_DELAY}",
                    tap.excess_delay_ns
                ));
            }
            if !(tap.relative_power_db <= 0.0) || !(tap.jitter_db >= 0.0) {
                return bad(format!(
                    "tap at {} ns: power must be <= 0 dB and jitter >= 0",
                    tap.excess_delay_ns
                ));
            }
        }
        Ok(())
    }

    /// Same channel with shadowing, sample noise and echo jitter removed.
    pub fn noiseless(&self) -> Self {
        let mut env = self.clone();
        env.shadowing_sigma_db = 0.0;
        env.noise_floor_amp = 0.0;
        for tap in &mut env.taps {
            tap.jitter_db = 0.0;
        }
        env
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverProfile {
    pub agc_on: bool,
    pub agc_target_amp: f64,
    pub agc_gain_min_db: f64,
    pub agc_gain_max_db: f64,
    /// Saturation ceiling on every sample magnitude; `f64::INFINITY` disables it.
    pub clip_amp: f64,
    /// Minimum pre-AGC first-path amplitude for the packet to be received.
    pub sensitivity_amp: f64,
}

impl ReceiverProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::InvalidProfile(msg.to_string()));
        if !(self.agc_target_amp > 0.0) {
            return bad("agc_target_amp must be > 0");
        }
        if !(self.agc_gain_min_db <= self.agc_gain_max_db) {
            return bad("agc_gain_min_db must be <= agc_gain_max_db");
        }
        if !(self.clip_amp > 0.0) || self.clip_amp < self.agc_target_amp {
            return bad("clip_amp must be > 0 and >= agc_target_amp");
        }
        if !(self.sensitivity_amp > 0.0) {
            return bad("sensitivity_amp must be > 0");
        }
        Ok(())
    }
}

/// Measurement grid of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub distances_m: Vec<f64>,
    pub gains_db: Vec<f64>,
    pub packets_per_cell: u32,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    /// 0.5 m to 6.5 m in 0.5 m steps, all 68 gains, 16 packets per cell.
    fn default() -> Self {
        Self {
            distances_m: (1..=13).map(|i| i as f64 * 0.5).collect(),
            gains_db: gain_grid().collect(),
            packets_per_cell: 16,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.packets_per_cell < 1 || self.packets_per_cell > u16::MAX as u32 {
            return Err(SimError::InvalidProfile("packets_per_cell must be in 1..=65535".into()));
        }
        if let Some(d) = self.distances_m.iter().find(|d| !(**d > 0.0)) {
            return Err(SimError::NonPositiveDistance(*d));
        }
        if self.gains_db.len() > u16::MAX as usize {
            return Err(SimError::InvalidProfile("too many gains".into()));
        }
        Ok(())
    }
}

/// Channel, receiver and grid, as read from a JSON or TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub env: EnvironmentProfile,
    pub rx: ReceiverProfile,
    #[serde(default)]
    pub scenario: ScenarioConfig,
}

impl SimConfig {
    /// Parses TOML for `.toml` files and JSON otherwise.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        let cfg: SimConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| SimError::Config(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| SimError::Config(e.to_string()))?
        };
        cfg.env.validate()?;
        cfg.rx.validate()?;
        cfg.scenario.validate()?;
        Ok(cfg)
    }
}

/// Pre-AGC first-path amplitude for a given link.
pub fn first_path_amplitude(
    env: &EnvironmentProfile,
    distance_m: f64,
    gain_db: f64,
    shadow_draw_db: f64,
) -> Result<f64, SimError> {
    if !(distance_m > 0.0) {
        return Err(SimError::NonPositiveDistance(distance_m));
    }
    let budget_db = gain_db - env.pl_ref_db - 10.0 * env.pl_exponent * distance_m.log10() + shadow_draw_db;
    Ok(REFERENCE_AMPLITUDE * 10f64.powf(budget_db / 20.0))
}

/// Output of [`synth_cir`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedCir {
    pub cir: [Complex64; CIR_LEN],
    /// First-path amplitude before noise, AGC and clipping; decides delivery.
    pub pre_agc_fp_amp: f64,
    pub agc_gain_db: f64,
}

fn phasor<R: Rng + ?Sized>(rng: &mut R, magnitude: f64) -> Complex64 {
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    Complex64::from_polar(magnitude, phase)
}

/// Synthesizes the 32-sample CIR of one packet.
///
/// Echo amplitudes are referenced to the unshadowed first path and carry
/// their own jitter draw, so echoes fade independently of the first path.
pub fn synth_cir<R: Rng + ?Sized>(
    env: &EnvironmentProfile,
    rx: &ReceiverProfile,
    distance_m: f64,
    gain_db: f64,
    rng: &mut R,
) -> Result<SynthesizedCir, SimError> {
    let shadow: f64 = rng.sample::<f64, _>(StandardNormal) * env.shadowing_sigma_db;
    let first = first_path_amplitude(env, distance_m, gain_db, shadow)?;
    let mean_first = first_path_amplitude(env, distance_m, gain_db, 0.0)?;

    let mut cir = [Complex64::new(0.0, 0.0); CIR_LEN];
    cir[FIRST_PATH_INDEX] += phasor(rng, first);
    for tap in &env.taps {
        let jitter: f64 = rng.sample::<f64, _>(StandardNormal) * tap.jitter_db;
        let amp = mean_first * 10f64.powf((tap.relative_power_db + jitter) / 20.0);
        cir[FIRST_PATH_INDEX + tap.excess_delay_ns as usize] += phasor(rng, amp);
    }
    let per_component = env.noise_floor_amp / std::f64::consts::SQRT_2;
    for c in cir.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *c += Complex64::new(re, im) * per_component;
    }

    let mut agc_gain_db = 0.0;
    if rx.agc_on {
        let peak = cir.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if peak > 0.0 {
            agc_gain_db = (20.0 * (rx.agc_target_amp / peak).log10()).clamp(rx.agc_gain_min_db, rx.agc_gain_max_db);
            let scale = 10f64.powf(agc_gain_db / 20.0);
            for c in cir.iter_mut() {
                *c *= scale;
            }
        }
    }
    for c in cir.iter_mut() {
        let mag = c.norm();
        if mag > rx.clip_amp {
            *c *= rx.clip_amp / mag;
        }
    }
    Ok(SynthesizedCir {
        cir,
        pre_agc_fp_amp: first,
        agc_gain_db,
    })
}

/// Calibration offsets subtracted from the power registers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RegisterCalibration {
    pub fp_offset_db: f64,
    pub rx_offset_db: f64,
}

/// Derives the register features from a CIR with zero calibration offsets.
pub fn extract_registers(cir: &[Complex64; CIR_LEN]) -> Result<Registers, SimError> {
    extract_registers_with(cir, RegisterCalibration::default())
}

/// Leading edge is the first sample reaching half the peak magnitude.
pub fn extract_registers_with(
    cir: &[Complex64; CIR_LEN],
    calibration: RegisterCalibration,
) -> Result<Registers, SimError> {
    let mags: Vec<f64> = cir.iter().map(|c| c.norm()).collect();
    let (peak_idx, peak) = mags
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |best, (i, m)| if m > best.1 { (i, m) } else { best });
    if peak == 0.0 {
        return Err(SimError::AllZeroCir);
    }
    let fp_idx = mags
        .iter()
        .position(|&m| m >= 0.5 * peak)
        .expect("the peak itself passes the threshold");
    let at = |i: usize| mags.get(i).copied().unwrap_or(0.0);
    let (a1, a2, a3) = (at(fp_idx), at(fp_idx + 1), at(fp_idx + 2));
    let total: f64 = mags.iter().map(|m| m * m).sum();
    Ok(Registers {
        fppl_db: 10.0 * (a1 * a1 + a2 * a2 + a3 * a3).log10() - calibration.fp_offset_db,
        rssi_db: 10.0 * total.log10() - calibration.rx_offset_db,
        fp_idx: fp_idx as f64,
        lde_ppampl: peak,
        lde_ppindx: peak_idx as f64,
        fp_ampl1: a1,
        fp_ampl2: a2,
        fp_ampl3: a3,
    })
}

/// Simulates one packet and applies the delivery rule.
pub fn simulate_packet<R: Rng + ?Sized>(
    env: &EnvironmentProfile,
    rx: &ReceiverProfile,
    distance_m: f64,
    gain_db: f64,
    rng: &mut R,
) -> Result<CirRecord, SimError> {
    let synth = synth_cir(env, rx, distance_m, gain_db, rng)?;
    let measurement = if synth.pre_agc_fp_amp >= rx.sensitivity_amp {
        Some(Measurement {
            registers: extract_registers(&synth.cir)?,
            cir: synth.cir,
        })
    } else {
        None
    };
    Ok(CirRecord {
        env_id: env.name.clone(),
        rx_id: 0,
        true_distance_m: distance_m,
        tx_gain_db: gain_db,
        agc_on: rx.agc_on,
        measurement,
    })
}

/// Random stream of one packet, independent of generation order.
pub fn packet_rng(seed: u64, distance_index: usize, gain_index: usize, packet_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((distance_index as u64) << 32) | ((gain_index as u64) << 16) | packet_index as u64);
    rng
}

/// Generates `packets_per_cell` records for every (distance, gain) cell.
///
/// Records are ordered by distance, then gain, then packet.
pub fn simulate(
    env: &EnvironmentProfile,
    rx: &ReceiverProfile,
    scenario: &ScenarioConfig,
) -> Result<Dataset, SimError> {
    env.validate()?;
    rx.validate()?;
    scenario.validate()?;
    let cells: Vec<(usize, usize)> = (0..scenario.distances_m.len())
        .flat_map(|di| (0..scenario.gains_db.len()).map(move |gi| (di, gi)))
        .collect();
    let per_cell: Vec<Vec<CirRecord>> = {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|&(di, gi)| {
                (0..scenario.packets_per_cell as usize)
                    .map(|pi| {
                        let mut rng = packet_rng(scenario.seed, di, gi, pi);
                        simulate_packet(env, rx, scenario.distances_m[di], scenario.gains_db[gi], &mut rng)
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    let records: Vec<CirRecord> = per_cell.into_iter().flatten().collect();
    let delivered = records.iter().filter(|r| r.delivered()).count();
    log::info!(
        "simulated {} packets in `{}` (AGC {}), {} delivered",
        records.len(),
        env.name,
        if rx.agc_on { "on" } else { "off" },
        delivered
    );
    let metadata = BTreeMap::from([
        ("source".to_string(), "simulator".to_string()),
        ("env".to_string(), env.name.clone()),
        ("seed".to_string(), scenario.seed.to_string()),
    ]);
    Ok(Dataset::new(records, metadata)?)
}

/// How badly one scalar feature confuses distances at a fixed gain.
///
/// One minus the leave-one-out 1-nearest-neighbour accuracy of predicting
/// the distance label from the feature. Ties go to the earliest record.
pub fn ambiguity_score(dataset: &Dataset, feature: ScalarFeature, gain_db: f64) -> Result<f64, SimError> {
    let points: Vec<(f64, DistanceKey)> = dataset
        .records()
        .iter()
        .filter(|r| r.tx_gain_db == gain_db)
        .filter_map(|r| r.measurement.as_ref().map(|m| (feature.value(m), r.distance_key())))
        .collect();
    let distinct = points
        .iter()
        .map(|p| p.1)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    if distinct < 2 {
        return Err(SimError::InsufficientDistances {
            gain_db,
            found: distinct,
        });
    }
    let hits = (0..points.len())
        .filter(|&i| {
            let mut best: Option<(f64, usize)> = None;
            for (j, p) in points.iter().enumerate() {
                if j == i {
                    continue;
                }
                let d = (p.0 - points[i].0).abs();
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, j));
                }
            }
            best.is_some_and(|(_, j)| points[j].1 == points[i].1)
        })
        .count();
    Ok(1.0 - hits as f64 / points.len() as f64)
}
