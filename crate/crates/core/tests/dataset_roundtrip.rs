use std::collections::BTreeMap;
use std::io::Cursor;

use uwb_dess::dataset::{read_csv, write_csv, ColumnMapping, Dataset, DatasetError};
use uwb_dess::sim::{preset, simulate, ScenarioConfig};

fn small() -> Dataset {
    let p = preset("hall_agc_off").unwrap();
    let scenario = ScenarioConfig {
        packets_per_cell: 2,
        ..ScenarioConfig::default()
    };
    simulate(&p.env, &p.rx, &scenario).unwrap()
}

#[test]
fn csv_roundtrip_is_exact() {
    let ds = small();
    assert!(ds.delivered_count() > 0 && ds.delivered_count() < ds.len());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    ds.save_csv(&path).unwrap();
    let back = Dataset::load_csv(&path).unwrap();
    assert_eq!(back.records(), ds.records());
}

#[test]
fn mapping_renames_columns() {
    let ds = small();
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let renamed = text.replacen("true_distance_m", "dist", 1);
    let mapping = ColumnMapping(BTreeMap::from([("dist".to_string(), "true_distance_m".to_string())]));
    let back = read_csv(Cursor::new(renamed.as_bytes()), &mapping).unwrap();
    assert_eq!(back.records(), ds.records());
}

#[test]
fn off_grid_gain_is_rejected() {
    let ds = small();
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let col = header.iter().position(|c| *c == "tx_gain_db").unwrap();
    let mut fields: Vec<String> = lines[1].split(',').map(String::from).collect();
    fields[col] = "0.25".into();
    lines[1] = fields.join(",");
    let err = read_csv(Cursor::new(lines.join("\n").into_bytes()), &ColumnMapping::default()).unwrap_err();
    assert!(!matches!(err, DatasetError::Io(_)), "{err}");
}

#[test]
fn split_is_stratified_and_reproducible() {
    let ds = small();
    let (a_train, a_test) = ds.split_train_test(0.5, 3).unwrap();
    let (b_train, _) = ds.split_train_test(0.5, 3).unwrap();
    assert_eq!(a_train, b_train);
    assert_eq!(a_train.len() + a_test.len(), ds.len());
    assert_eq!(a_train.distances(), ds.distances());
    assert_eq!(a_test.distances(), ds.distances());
}

#[test]
fn min_gain_table_is_monotone_in_distance() {
    let table = small().min_gain_table().unwrap();
    let gains: Vec<f64> = table.values().copied().collect();
    assert!(gains.windows(2).all(|w| w[0] <= w[1]), "{gains:?}");
}

#[test]
fn split_covers_every_gain_on_both_sides() {
    let p = preset("hallway_agc_off").unwrap();
    let scenario = ScenarioConfig {
        distances_m: vec![1.0],
        ..ScenarioConfig::default()
    };
    let ds = simulate(&p.env, &p.rx, &scenario).unwrap();
    assert_eq!(ds.len(), 1088);
    let (train, test) = ds.split_train_test(0.75, 0).unwrap();
    assert_eq!(train.len() + test.len(), 1088);
    for g in uwb_dess::dataset::gain_grid() {
        assert!(train.records().iter().any(|r| r.tx_gain_db == g), "{g} missing from train");
        assert!(test.records().iter().any(|r| r.tx_gain_db == g), "{g} missing from test");
    }
}
