use super::{EnvironmentProfile, MultipathTap, ReceiverProfile, SimError};

pub const PRESET_NAMES: [&str; 3] = ["hallway_agc_on", "hallway_agc_off", "hall_agc_off"];

/// Named channel + receiver pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub env: EnvironmentProfile,
    pub rx: ReceiverProfile,
}

pub fn preset(name: &str) -> Result<Preset, SimError> {
    let (env, rx) = match name {
        "hallway_agc_on" => (hallway(), agc_on()),
        "hallway_agc_off" => (hallway(), agc_off()),
        "hall_agc_off" => (hall(), agc_off()),
        _ => {
            return Err(SimError::UnknownPreset {
                name: name.to_string(),
                available: PRESET_NAMES.iter().map(|s| s.to_string()).collect(),
            })
        }
    };
    let name = PRESET_NAMES
        .iter()
        .copied()
        .find(|n| *n == name)
        .expect("matched above");
    Ok(Preset { name, env, rx })
}

fn db_to_amp(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

fn tap(excess_delay_ns: u32, relative_power_db: f64, jitter_db: f64) -> MultipathTap {
    MultipathTap {
        excess_delay_ns,
        relative_power_db,
        jitter_db,
    }
}

// Shared link budget: at 33.5 dB the first path sits 0.74 dB above the
// sensitivity floor at 6.5 m and reaches the clip level just below 2 m.
const PL_REF_DB: f64 = 40.0;
const PL_EXPONENT: f64 = 2.0;
// Per-packet first-path spread, matching the FPPL spread measured per
// (distance, gain) cell on real hardware.
const SHADOWING_SIGMA_DB: f64 = 0.636;
// Empty CIR bins stay exactly zero: standardized noise-only bins would
// otherwise weigh as much as the echoes in a Euclidean feature space.
const NOISE_FLOOR_AMP: f64 = 0.0;
const TAP_JITTER_DB: f64 = 0.3;

fn base_env(name: &str, taps: Vec<MultipathTap>) -> EnvironmentProfile {
    EnvironmentProfile {
        name: name.to_string(),
        pl_exponent: PL_EXPONENT,
        pl_ref_db: PL_REF_DB,
        shadowing_sigma_db: SHADOWING_SIGMA_DB,
        taps,
        noise_floor_amp: NOISE_FLOOR_AMP,
    }
}

/// Narrow corridor: strong, early wall echoes.
pub fn hallway() -> EnvironmentProfile {
    base_env(
        "hallway",
        vec![
            tap(3, -4.0, TAP_JITTER_DB),
            tap(6, -7.0, TAP_JITTER_DB),
            tap(9, -9.0, TAP_JITTER_DB),
            tap(13, -12.0, TAP_JITTER_DB),
            tap(18, -15.0, TAP_JITTER_DB),
        ],
    )
}

/// Wide furnished hall: shares the two earliest echo delays with the
/// hallway at different strengths, then later, weaker echoes.
pub fn hall() -> EnvironmentProfile {
    base_env(
        "hall",
        vec![
            tap(3, -7.0, TAP_JITTER_DB),
            tap(6, -5.0, TAP_JITTER_DB),
            tap(11, -9.0, TAP_JITTER_DB),
            tap(16, -11.0, TAP_JITTER_DB),
            tap(22, -14.0, TAP_JITTER_DB),
        ],
    )
}

pub fn agc_off() -> ReceiverProfile {
    ReceiverProfile {
        agc_on: false,
        agc_target_amp: 0.2,
        agc_gain_min_db: -20.0,
        agc_gain_max_db: 20.0,
        clip_amp: db_to_amp(-12.5),
        sensitivity_amp: db_to_amp(-23.5),
    }
}

/// AGC normalizes the peak to 0.2 and extends range well past 6.5 m.
pub fn agc_on() -> ReceiverProfile {
    ReceiverProfile {
        agc_on: true,
        sensitivity_amp: db_to_amp(-50.0),
        ..agc_off()
    }
}
