use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uwb_dess::dataset::{gain_grid, FIRST_PATH_INDEX};
use uwb_dess::sim::{
    extract_registers, first_path_amplitude, packet_rng, preset, simulate, simulate_packet, synth_cir, ScenarioConfig,
};

fn distances() -> Vec<f64> {
    ScenarioConfig::default().distances_m
}

#[test]
fn agc_normalizes_the_peak() {
    let p = preset("hallway_agc_on").unwrap();
    let env = p.env.noiseless();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for d in distances() {
        for g in gain_grid() {
            let s = synth_cir(&env, &p.rx, d, g, &mut rng).unwrap();
            if s.agc_gain_db <= p.rx.agc_gain_min_db || s.agc_gain_db >= p.rx.agc_gain_max_db {
                continue;
            }
            let peak = s.cir.iter().map(|c| c.norm()).fold(0.0, f64::max);
            assert!(
                (peak - p.rx.agc_target_amp).abs() <= 1e-9 * p.rx.agc_target_amp,
                "{d} m, {g} dB: {peak}"
            );
        }
    }
}

#[test]
fn first_path_power_falls_with_distance_and_tracks_gain() {
    let p = preset("hallway_agc_off").unwrap();
    let env = p.env.noiseless();
    let mut rx = p.rx.clone();
    rx.clip_amp = f64::INFINITY;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let fppl = |d: f64, g: f64, rng: &mut ChaCha8Rng| {
        let s = synth_cir(&env, &rx, d, g, rng).unwrap();
        20.0 * s.cir[FIRST_PATH_INDEX].norm().log10()
    };
    for g in gain_grid() {
        let series: Vec<f64> = distances().iter().map(|&d| fppl(d, g, &mut rng)).collect();
        assert!(series.windows(2).all(|w| w[1] < w[0]), "{g} dB: {series:?}");
    }
    for d in distances() {
        let series: Vec<f64> = gain_grid().map(|g| fppl(d, g, &mut rng)).collect();
        for w in series.windows(2) {
            assert!((w[1] - w[0] - 0.5).abs() < 1e-9);
        }
    }
}

#[test]
fn delivery_is_monotone_in_gain() {
    let p = preset("hallway_agc_off").unwrap();
    let env = p.env.noiseless();
    for d in distances() {
        let delivered: Vec<bool> = gain_grid()
            .map(|g| {
                simulate_packet(&env, &p.rx, d, g, &mut ChaCha8Rng::seed_from_u64(3))
                    .unwrap()
                    .delivered()
            })
            .collect();
        let first = delivered.iter().position(|x| *x).unwrap_or(delivered.len());
        assert!(delivered[first..].iter().all(|x| *x), "{d} m: {delivered:?}");
    }
}

#[test]
fn path_loss_reference_point() {
    let env = preset("hallway_agc_off").unwrap().env;
    let a = first_path_amplitude(&env, 1.0, env.pl_ref_db, 0.0).unwrap();
    assert!((a - 1.0).abs() < 1e-12);
    let a10 = first_path_amplitude(&env, 10.0, env.pl_ref_db, 0.0).unwrap();
    assert!((20.0 * a10.log10() + 10.0 * env.pl_exponent).abs() < 1e-9);
    assert!(first_path_amplitude(&env, 0.0, 0.0, 0.0).is_err());
}

#[test]
fn clipping_bounds_every_sample() {
    let p = preset("hallway_agc_off").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = synth_cir(&p.env, &p.rx, 0.5, 33.5, &mut rng).unwrap();
    assert!(s.cir.iter().all(|c| c.norm() <= p.rx.clip_amp * (1.0 + 1e-12)));
}

#[test]
fn registers_locate_the_first_path() {
    let p = preset("hall_agc_off").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = synth_cir(&p.env.noiseless(), &p.rx, 3.0, 20.0, &mut rng).unwrap();
    let regs = extract_registers(&s.cir).unwrap();
    assert_eq!(regs.fp_idx, FIRST_PATH_INDEX as f64);
    assert_eq!(regs.fp_ampl1, s.cir[FIRST_PATH_INDEX].norm());
}

#[test]
fn packets_do_not_depend_on_generation_order() {
    let p = preset("hallway_agc_off").unwrap();
    let scenario = ScenarioConfig {
        distances_m: vec![1.0, 2.0, 3.0],
        gains_db: vec![10.0, 20.0],
        packets_per_cell: 4,
        seed: 9,
    };
    let ds = simulate(&p.env, &p.rx, &scenario).unwrap();
    assert_eq!(ds.len(), 24);
    // record 2*8 + 1*4 + 3 is distance index 2, gain index 1, packet 3
    let direct = simulate_packet(&p.env, &p.rx, 3.0, 20.0, &mut packet_rng(9, 2, 1, 3)).unwrap();
    assert_eq!(ds.records()[23], direct);

    let again = simulate(&p.env, &p.rx, &scenario).unwrap();
    assert_eq!(ds, again);
    let other = simulate(&p.env, &p.rx, &scenario.clone().with_seed(10)).unwrap();
    assert_ne!(ds, other);
}

#[test]
fn agc_makes_first_path_power_ambiguous() {
    use uwb_dess::dataset::Register;
    use uwb_dess::features::ScalarFeature;
    use uwb_dess::sim::ambiguity_score;

    let scenario = ScenarioConfig {
        gains_db: vec![33.5],
        ..ScenarioConfig::default().with_seed(7)
    };
    let score = |name: &str| {
        let p = preset(name).unwrap();
        let ds = simulate(&p.env, &p.rx, &scenario).unwrap();
        ambiguity_score(&ds, ScalarFeature::Register(Register::Fppl), 33.5).unwrap()
    };
    let (on, off) = (score("hallway_agc_on"), score("hallway_agc_off"));
    assert!(on > off, "AGC on {on} vs off {off}");
}

#[test]
fn weak_links_lose_packets() {
    let p = preset("hallway_agc_off").unwrap();
    let ds = simulate(&p.env, &p.rx, &ScenarioConfig::default()).unwrap();
    let delivered = ds.filter(|r| r.delivered());
    assert!(delivered.len() < ds.len());
    let far_low = ds.filter(|r| r.true_distance_m == 6.5 && r.tx_gain_db == 0.0);
    assert_eq!(far_low.delivered_count(), 0);
}
