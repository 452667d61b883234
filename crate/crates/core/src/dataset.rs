//! Ranging records, datasets and their canonical CSV form.
//!
//! A [`CirRecord`] is one packet sent at a given transmit gain over a known
//! distance. Packets that never reached the receiver are kept as records with
//! no [`Measurement`], so delivery ratios survive a save/load cycle.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of CIR samples kept per packet, starting four samples before the
/// detected first path.
pub const CIR_LEN: usize = 32;
/// Index of the first-path sample inside the 32-sample window.
pub const FIRST_PATH_INDEX: usize = 4;
/// Spacing of the programmable transmit gain grid.
pub const GAIN_STEP_DB: f64 = 0.5;
/// Number of programmable transmit gains.
pub const GAIN_COUNT: usize = 68;
/// Highest programmable transmit gain.
pub const MAX_GAIN_DB: f64 = 33.5;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column mapping: {0}")]
    Mapping(#[from] serde_json::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: malformed value in column `{column}`")]
    MalformedNumber { row: usize, column: String },
    #[error("row {row}: {rule}")]
    InvariantViolation { row: usize, rule: String },
    #[error("dataset mixes AGC-on and AGC-off records")]
    MixedAgcState,
    #[error("train fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("dataset has no delivered records")]
    NoDeliveredRecords,
    #[error("no delivered record at distance {0} m")]
    NoDeliveredAtDistance(DistanceKey),
}

/// Ground-truth distance rounded to the millimetre.
///
/// Distances come from a 0.5 m grid, so millimetre rounding makes equality
/// and map keys exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DistanceKey(i64);

impl DistanceKey {
    pub fn from_meters(meters: f64) -> Self {
        Self((meters * 1000.0).round() as i64)
    }

    pub fn meters(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn millimeters(self) -> i64 {
        self.0
    }
}

impl fmt::Display for DistanceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.meters())
    }
}

impl FromStr for DistanceKey {
    type Err = std::num::ParseFloatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<f64>().map(Self::from_meters)
    }
}

impl Serialize for DistanceKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DistanceKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A transmit gain on the 0.5 dB grid, stored as its grid index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GainKey(u8);

impl GainKey {
    /// Returns `None` unless `gain_db` is exactly one of the 68 grid values.
    pub fn from_db(gain_db: f64) -> Option<Self> {
        let steps = gain_db / GAIN_STEP_DB;
        if steps.fract() != 0.0 || !(0.0..GAIN_COUNT as f64).contains(&steps) {
            return None;
        }
        Some(Self(steps as u8))
    }

    pub fn from_index(index: usize) -> Option<Self> {
        (index < GAIN_COUNT).then_some(Self(index as u8))
    }

    pub fn db(self) -> f64 {
        self.0 as f64 * GAIN_STEP_DB
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn max() -> Self {
        Self((GAIN_COUNT - 1) as u8)
    }

    /// Next gain up the grid, if any.
    pub fn step_up(self) -> Option<Self> {
        Self::from_index(self.index() + 1)
    }
}

impl fmt::Display for GainKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.db())
    }
}

impl Serialize for GainKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GainKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let db: f64 = s.parse().map_err(serde::de::Error::custom)?;
        GainKey::from_db(db).ok_or_else(|| serde::de::Error::custom(format!("{db} dB is off the gain grid")))
    }
}

/// All 68 programmable gains in ascending order.
pub fn gain_grid() -> impl Iterator<Item = f64> {
    (0..GAIN_COUNT).map(|i| i as f64 * GAIN_STEP_DB)
}

/// Register-style received-signal features reported by the transceiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Registers {
    pub fppl_db: f64,
    pub rssi_db: f64,
    pub fp_idx: f64,
    pub lde_ppampl: f64,
    pub lde_ppindx: f64,
    pub fp_ampl1: f64,
    pub fp_ampl2: f64,
    pub fp_ampl3: f64,
}

/// Names of the register features, usable as model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Register {
    #[serde(rename = "fppl_db")]
    Fppl,
    #[serde(rename = "rssi_db")]
    Rssi,
    FpIdx,
    LdePpampl,
    LdePpindx,
    FpAmpl1,
    FpAmpl2,
    FpAmpl3,
}

impl Register {
    pub const ALL: [Register; 8] = [
        Register::Fppl,
        Register::Rssi,
        Register::FpIdx,
        Register::LdePpampl,
        Register::LdePpindx,
        Register::FpAmpl1,
        Register::FpAmpl2,
        Register::FpAmpl3,
    ];

    /// Column name in the canonical CSV schema.
    pub fn column(self) -> &'static str {
        match self {
            Register::Fppl => "fppl_db",
            Register::Rssi => "rssi_db",
            Register::FpIdx => "fp_idx",
            Register::LdePpampl => "lde_ppampl",
            Register::LdePpindx => "lde_ppindx",
            Register::FpAmpl1 => "fp_ampl1",
            Register::FpAmpl2 => "fp_ampl2",
            Register::FpAmpl3 => "fp_ampl3",
        }
    }

    pub fn from_column(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.column() == name)
    }

    pub fn value(self, regs: &Registers) -> f64 {
        match self {
            Register::Fppl => regs.fppl_db,
            Register::Rssi => regs.rssi_db,
            Register::FpIdx => regs.fp_idx,
            Register::LdePpampl => regs.lde_ppampl,
            Register::LdePpindx => regs.lde_ppindx,
            Register::FpAmpl1 => regs.fp_ampl1,
            Register::FpAmpl2 => regs.fp_ampl2,
            Register::FpAmpl3 => regs.fp_ampl3,
        }
    }

    fn value_mut(self, regs: &mut Registers) -> &mut f64 {
        match self {
            Register::Fppl => &mut regs.fppl_db,
            Register::Rssi => &mut regs.rssi_db,
            Register::FpIdx => &mut regs.fp_idx,
            Register::LdePpampl => &mut regs.lde_ppampl,
            Register::LdePpindx => &mut regs.lde_ppindx,
            Register::FpAmpl1 => &mut regs.fp_ampl1,
            Register::FpAmpl2 => &mut regs.fp_ampl2,
            Register::FpAmpl3 => &mut regs.fp_ampl3,
        }
    }
}

impl fmt::Display for Register {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

/// What the receiver reports for a delivered packet.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub cir: [Complex64; CIR_LEN],
    pub registers: Registers,
}

/// One transmitted packet.
#[derive(Debug, Clone, PartialEq)]
pub struct CirRecord {
    pub env_id: String,
    pub rx_id: u8,
    pub true_distance_m: f64,
    pub tx_gain_db: f64,
    pub agc_on: bool,
    /// `None` when the packet was lost.
    pub measurement: Option<Measurement>,
}

impl CirRecord {
    pub fn delivered(&self) -> bool {
        self.measurement.is_some()
    }

    pub fn distance_key(&self) -> DistanceKey {
        DistanceKey::from_meters(self.true_distance_m)
    }

    /// Panics if the record was not validated; datasets only hold valid records.
    pub fn gain_key(&self) -> GainKey {
        GainKey::from_db(self.tx_gain_db).expect("validated record has an on-grid gain")
    }

    fn check(&self) -> Result<(), String> {
        if !(self.true_distance_m.is_finite() && self.true_distance_m > 0.0) {
            return Err(format!("true_distance_m must be > 0, got {}", self.true_distance_m));
        }
        if GainKey::from_db(self.tx_gain_db).is_none() {
            return Err(format!(
                "tx_gain_db {} is not one of the 68 programmable gains",
                self.tx_gain_db
            ));
        }
        if let Some(m) = &self.measurement {
            let r = &m.registers;
            for (name, v) in [
                ("fp_ampl1", r.fp_ampl1),
                ("fp_ampl2", r.fp_ampl2),
                ("fp_ampl3", r.fp_ampl3),
                ("lde_ppampl", r.lde_ppampl),
            ] {
                if !(v >= 0.0) {
                    return Err(format!("{name} must be >= 0, got {v}"));
                }
            }
        }
        Ok(())
    }
}

/// An ordered, immutable collection of records sharing one AGC state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    records: Vec<CirRecord>,
    metadata: BTreeMap<String, String>,
}

impl Dataset {
    /// Validates every record and the single-AGC-state rule.
    pub fn new(records: Vec<CirRecord>, metadata: BTreeMap<String, String>) -> Result<Self, DatasetError> {
        for (i, rec) in records.iter().enumerate() {
            rec.check()
                .map_err(|rule| DatasetError::InvariantViolation { row: i + 1, rule })?;
        }
        if let Some(first) = records.first() {
            if records.iter().any(|r| r.agc_on != first.agc_on) {
                return Err(DatasetError::MixedAgcState);
            }
        }
        Ok(Self { records, metadata })
    }

    pub fn records(&self) -> &[CirRecord] {
        &self.records
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn delivered_count(&self) -> usize {
        self.records.iter().filter(|r| r.delivered()).count()
    }

    /// AGC state shared by all records, `None` for an empty dataset.
    pub fn agc_on(&self) -> Option<bool> {
        self.records.first().map(|r| r.agc_on)
    }

    pub fn distances(&self) -> BTreeSet<DistanceKey> {
        self.records.iter().map(CirRecord::distance_key).collect()
    }

    pub fn env_ids(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.env_id.clone()).collect()
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    /// Records satisfying `pred`, in their original order.
    pub fn filter(&self, pred: impl Fn(&CirRecord) -> bool) -> Dataset {
        Dataset {
            records: self.records.iter().filter(|r| pred(r)).cloned().collect(),
            metadata: self.metadata.clone(),
        }
    }

    /// Concatenates datasets that share one AGC state.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Dataset>) -> Result<Dataset, DatasetError> {
        let mut records = Vec::new();
        let mut metadata = BTreeMap::new();
        for part in parts {
            records.extend(part.records.iter().cloned());
            metadata.extend(part.metadata.clone());
        }
        Dataset::new(records, metadata)
    }

    /// Checks that every distance present has at least one delivered record.
    pub fn check_coverage(&self) -> Result<(), DatasetError> {
        let mut covered: BTreeMap<DistanceKey, bool> = BTreeMap::new();
        for r in &self.records {
            *covered.entry(r.distance_key()).or_default() |= r.delivered();
        }
        match covered.into_iter().find(|(_, ok)| !ok) {
            Some((d, _)) => Err(DatasetError::NoDeliveredAtDistance(d)),
            None => Ok(()),
        }
    }

    /// Stratified, seeded train/test partition.
    ///
    /// Strata are (distance, gain) cells. Inside each cell the delivered
    /// records are shuffled and `floor(fraction * n)` go to training, leaving
    /// at least one test record whenever the cell holds two or more. Lost
    /// packets are split by the same rule so the two halves cover the input.
    pub fn split_train_test(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DatasetError> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(DatasetError::InvalidFraction(train_fraction));
        }
        if self.delivered_count() == 0 {
            return Err(DatasetError::NoDeliveredRecords);
        }
        let mut strata: BTreeMap<(DistanceKey, GainKey, bool), Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            strata
                .entry((r.distance_key(), r.gain_key(), r.delivered()))
                .or_default()
                .push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_train = vec![false; self.records.len()];
        for members in strata.values_mut() {
            members.shuffle(&mut rng);
            let n = members.len();
            let mut n_train = (train_fraction * n as f64).floor() as usize;
            if n >= 2 && n_train == n {
                n_train = n - 1;
            }
            for &i in &members[..n_train] {
                in_train[i] = true;
            }
        }
        let pick = |want: bool| Dataset {
            records: self
                .records
                .iter()
                .zip(&in_train)
                .filter(|(_, &t)| t == want)
                .map(|(r, _)| r.clone())
                .collect(),
            metadata: self.metadata.clone(),
        };
        Ok((pick(true), pick(false)))
    }

    /// Lowest gain with at least one delivered record, per distance.
    pub fn min_gain_table(&self) -> Result<BTreeMap<DistanceKey, f64>, DatasetError> {
        if self.records.is_empty() {
            return Err(DatasetError::NoDeliveredRecords);
        }
        let mut table: BTreeMap<DistanceKey, Option<GainKey>> = BTreeMap::new();
        for r in &self.records {
            let slot = table.entry(r.distance_key()).or_default();
            if r.delivered() {
                let g = r.gain_key();
                *slot = Some(slot.map_or(g, |cur| cur.min(g)));
            }
        }
        table
            .into_iter()
            .map(|(d, g)| g.map(|g| (d, g.db())).ok_or(DatasetError::NoDeliveredAtDistance(d)))
            .collect()
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
        Self::load_csv_with_mapping(path, &ColumnMapping::default())
    }

    pub fn load_csv_with_mapping(path: impl AsRef<Path>, mapping: &ColumnMapping) -> Result<Dataset, DatasetError> {
        let path = path.as_ref();
        let ds = read_csv(File::open(path)?, mapping)?;
        Ok(ds.with_metadata("source", path.display().to_string()))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let file = File::create(path)?;
        write_csv(self, std::io::BufWriter::new(file))
    }
}

/// Renames foreign CSV headers onto the canonical schema.
///
/// Read from a JSON object `{"their_col": "our_col", ...}`; unmapped columns
/// pass through unchanged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ColumnMapping(pub BTreeMap<String, String>);

impl ColumnMapping {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    fn apply<'a>(&'a self, header: &'a str) -> &'a str {
        self.0.get(header).map(String::as_str).unwrap_or(header)
    }
}

/// Canonical header, in column order.
pub fn csv_header() -> Vec<String> {
    let mut cols: Vec<String> = [
        "env_id",
        "rx_id",
        "true_distance_m",
        "tx_gain_db",
        "agc_on",
        "delivered",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend(Register::ALL.iter().map(|r| r.column().to_string()));
    cols.extend((0..CIR_LEN).map(|k| format!("cir_re_{k}")));
    cols.extend((0..CIR_LEN).map(|k| format!("cir_im_{k}")));
    cols
}

fn fmt_bool(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Writes the canonical CSV. `f64` `Display` is the shortest string that
/// parses back to the same value, so the round trip is exact.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(csv_header())?;
    let mut row: Vec<String> = Vec::with_capacity(14 + 2 * CIR_LEN);
    for r in &dataset.records {
        row.clear();
        row.push(r.env_id.clone());
        row.push(r.rx_id.to_string());
        row.push(r.true_distance_m.to_string());
        row.push(r.tx_gain_db.to_string());
        row.push(fmt_bool(r.agc_on).into());
        row.push(fmt_bool(r.delivered()).into());
        match &r.measurement {
            Some(m) => {
                row.extend(Register::ALL.iter().map(|reg| reg.value(&m.registers).to_string()));
                row.extend(m.cir.iter().map(|c| c.re.to_string()));
                row.extend(m.cir.iter().map(|c| c.im.to_string()));
            }
            None => row.extend(std::iter::repeat_n(String::new(), Register::ALL.len() + 2 * CIR_LEN)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the canonical CSV, after renaming headers through `mapping`.
///
/// Row numbers in errors count data rows from 1.
pub fn read_csv<R: Read>(reader: R, mapping: &ColumnMapping) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| mapping.apply(h.trim()).to_string())
        .collect();
    let position: BTreeMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let canonical = csv_header();
    let mut index = Vec::with_capacity(canonical.len());
    for col in &canonical {
        match position.get(col.as_str()) {
            Some(&i) => index.push(i),
            None => return Err(DatasetError::MissingColumn(col.clone())),
        }
    }

    let mut records = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let row = row?;
        let row_no = n + 1;
        let field = |c: usize| row.get(index[c]).unwrap_or("").trim();
        let malformed = |c: usize| DatasetError::MalformedNumber {
            row: row_no,
            column: canonical[c].clone(),
        };
        let real = |c: usize| field(c).parse::<f64>().map_err(|_| malformed(c));
        let flag = |c: usize| match field(c) {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(malformed(c)),
        };

        let env_id = field(0).to_string();
        let rx_id = field(1).parse::<u8>().map_err(|_| malformed(1))?;
        let true_distance_m = real(2)?;
        let tx_gain_db = real(3)?;
        let agc_on = flag(4)?;
        let delivered = flag(5)?;
        let measurement = if delivered {
            let mut registers = Registers {
                fppl_db: 0.0,
                rssi_db: 0.0,
                fp_idx: 0.0,
                lde_ppampl: 0.0,
                lde_ppindx: 0.0,
                fp_ampl1: 0.0,
                fp_ampl2: 0.0,
                fp_ampl3: 0.0,
            };
            for (k, reg) in Register::ALL.iter().enumerate() {
                *reg.value_mut(&mut registers) = real(6 + k)?;
            }
            let base = 6 + Register::ALL.len();
            let mut cir = [Complex64::new(0.0, 0.0); CIR_LEN];
            for (k, c) in cir.iter_mut().enumerate() {
                *c = Complex64::new(real(base + k)?, real(base + CIR_LEN + k)?);
            }
            Some(Measurement { cir, registers })
        } else {
            None
        };
        let rec = CirRecord {
            env_id,
            rx_id,
            true_distance_m,
            tx_gain_db,
            agc_on,
            measurement,
        };
        rec.check()
            .map_err(|rule| DatasetError::InvariantViolation { row: row_no, rule })?;
        records.push(rec);
    }

    let ds = Dataset::new(records, BTreeMap::new())?;
    ds.check_coverage()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn regs(fppl: f64) -> Registers {
        Registers {
            fppl_db: fppl,
            rssi_db: fppl + 3.0,
            fp_idx: 4.0,
            lde_ppampl: 0.5,
            lde_ppindx: 4.0,
            fp_ampl1: 0.5,
            fp_ampl2: 0.01,
            fp_ampl3: 0.0,
        }
    }

    pub(crate) fn record(d: f64, g: f64, delivered: bool) -> CirRecord {
        let mut cir = [Complex64::new(0.0, 0.0); CIR_LEN];
        cir[FIRST_PATH_INDEX] = Complex64::new(0.3, -0.4);
        CirRecord {
            env_id: "hall".into(),
            rx_id: 0,
            true_distance_m: d,
            tx_gain_db: g,
            agc_on: false,
            measurement: delivered.then(|| Measurement {
                cir,
                registers: regs(-10.0 - d),
            }),
        }
    }

    fn ds(records: Vec<CirRecord>) -> Dataset {
        Dataset::new(records, BTreeMap::new()).unwrap()
    }

    fn to_string(d: &Dataset) -> String {
        let mut buf = Vec::new();
        write_csv(d, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn three_row_file_loads() {
        let d = ds(vec![
            record(0.5, 10.0, true),
            record(1.0, 10.0, true),
            record(1.0, 10.5, false),
        ]);
        let back = read_csv(to_string(&d).as_bytes(), &ColumnMapping::default()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.distances().len(), 2);
        assert_eq!(back.records(), d.records());
    }

    #[test]
    fn empty_dataset_writes_header_only() {
        let text = to_string(&Dataset::default());
        assert_eq!(text.lines().count(), 1);
        assert_eq!(text.trim_end(), csv_header().join(","));
    }

    #[test]
    fn missing_column_is_reported() {
        let text = to_string(&ds(vec![record(0.5, 10.0, true)]));
        let stripped = text.replacen("fppl_db", "something_else", 1);
        match read_csv(stripped.as_bytes(), &ColumnMapping::default()) {
            Err(DatasetError::MissingColumn(c)) => assert_eq!(c, "fppl_db"),
            other => panic!("expected MissingColumn, got {other:?}"),
        }
    }

    #[test]
    fn mapping_renames_foreign_columns() {
        let text = to_string(&ds(vec![record(0.5, 10.0, true)]));
        let foreign = text.replacen("fppl_db", "FP_POWER", 1);
        let mapping = ColumnMapping([("FP_POWER".to_string(), "fppl_db".to_string())].into());
        let back = read_csv(foreign.as_bytes(), &mapping).unwrap();
        assert_eq!(back.records()[0].measurement.as_ref().unwrap().registers.fppl_db, -10.5);
    }

    #[test]
    fn off_grid_gain_is_an_invariant_violation() {
        let text = to_string(&ds(vec![record(0.5, 10.0, true), record(0.5, 12.0, true)]));
        let bad = text.replace(",12,", ",0.25,");
        match read_csv(bad.as_bytes(), &ColumnMapping::default()) {
            Err(DatasetError::InvariantViolation { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected InvariantViolation, got {other:?}"),
        }
    }

    #[test]
    fn malformed_number_names_row_and_column() {
        let text = to_string(&ds(vec![record(0.5, 10.0, true)]));
        let bad = text.replacen("-10.5", "abc", 1);
        match read_csv(bad.as_bytes(), &ColumnMapping::default()) {
            Err(DatasetError::MalformedNumber { row, column }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "fppl_db");
            }
            other => panic!("expected MalformedNumber, got {other:?}"),
        }
    }

    #[test]
    fn mixed_agc_rejected() {
        let mut on = record(0.5, 10.0, true);
        on.agc_on = true;
        let err = Dataset::new(vec![record(0.5, 10.0, true), on], BTreeMap::new()).unwrap_err();
        assert!(matches!(err, DatasetError::MixedAgcState));
    }

    #[test]
    fn split_single_stratum() {
        let d = ds((0..16).map(|_| record(1.0, 20.0, true)).collect());
        let (train, test) = d.split_train_test(0.75, 3).unwrap();
        assert_eq!((train.len(), test.len()), (12, 4));
        let (train2, test2) = d.split_train_test(0.75, 3).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn split_keeps_a_test_record() {
        let d = ds(vec![record(1.0, 20.0, true), record(1.0, 20.0, true)]);
        let (train, test) = d.split_train_test(0.99, 0).unwrap();
        assert_eq!((train.len(), test.len()), (1, 1));
        assert!(matches!(
            d.split_train_test(1.0, 0),
            Err(DatasetError::InvalidFraction(_))
        ));
    }

    #[test]
    fn min_gain_picks_lowest_delivered() {
        let d = ds(vec![
            record(2.0, 33.5, true),
            record(2.0, 12.0, true),
            record(2.0, 20.0, true),
            record(2.0, 5.0, false),
        ]);
        let table = d.min_gain_table().unwrap();
        assert_eq!(table[&DistanceKey::from_meters(2.0)], 12.0);
    }

    #[test]
    fn min_gain_single_distance_all_gains() {
        let d = ds(gain_grid().map(|g| record(0.5, g, true)).collect());
        assert_eq!(d.min_gain_table().unwrap()[&DistanceKey::from_meters(0.5)], 0.0);
    }

    #[test]
    fn min_gain_needs_delivery() {
        let d = ds(vec![record(2.0, 12.0, true), record(3.0, 12.0, false)]);
        assert!(matches!(
            d.min_gain_table(),
            Err(DatasetError::NoDeliveredAtDistance(k)) if k == DistanceKey::from_meters(3.0)
        ));
    }

    #[test]
    fn filter_on_max_gain() {
        let d = ds(gain_grid().map(|g| record(1.5, g, true)).collect());
        let top = d.filter(|r| r.tx_gain_db == MAX_GAIN_DB);
        assert_eq!(top.len(), 1);
        assert_eq!(d.filter(|_| true), d);
    }

    #[test]
    fn gain_key_grid() {
        assert_eq!(GainKey::from_db(33.5), Some(GainKey::max()));
        assert_eq!(GainKey::from_db(0.25), None);
        assert_eq!(GainKey::from_db(34.0), None);
        assert_eq!(GainKey::from_db(-0.5), None);
        assert_eq!(gain_grid().count(), GAIN_COUNT);
    }

    #[test]
    fn distance_key_rounds_to_millimetres() {
        assert_eq!(DistanceKey::from_meters(2.5004), DistanceKey::from_meters(2.5));
        assert_ne!(DistanceKey::from_meters(2.501), DistanceKey::from_meters(2.5));
        assert_eq!(DistanceKey::from_meters(6.5).to_string(), "6.5");
    }
}
