//! End-to-end experiment runners shared by the command-line tool and tests.
//!
//! Every runner takes an [`ExperimentConfig`], produces a serializable
//! result and writes its output files into the configured directory. Output
//! depends only on the config, so repeated runs are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnMapping, Dataset, MAX_GAIN_DB};
use crate::evaluation::{loo_distance_cv, split_evaluate, transfer_study, EvalReport, SplitConfig, TransferMatrix};
use crate::features::FeatureSpec;
use crate::protocol::{calibrate, run_bench, BenchSummary, ProtocolConfig};
use crate::regressors::ModelConfig;
use crate::sim::{preset, simulate, EnvironmentProfile, ReceiverProfile, ScenarioConfig, SimConfig};

/// Where a dataset comes from: a bundled preset, a profile file, or a CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    /// Simulate a bundled channel + receiver preset.
    Preset(String),
    /// Simulate a JSON/TOML [`SimConfig`] file; its scenario grid is used.
    Profile(PathBuf),
    /// Load recorded data in the canonical CSV schema.
    Csv(PathBuf),
}

impl Source {
    fn preset(name: &str) -> Self {
        Source::Preset(name.to_string())
    }

    /// Simulator channel and receiver, if this source is simulated.
    pub fn link(&self) -> Result<(EnvironmentProfile, ReceiverProfile)> {
        match self {
            Source::Preset(name) => {
                let p = preset(name)?;
                Ok((p.env, p.rx))
            }
            Source::Profile(path) => {
                let cfg = SimConfig::from_file(path)?;
                Ok((cfg.env, cfg.rx))
            }
            Source::Csv(path) => bail!("{} is recorded data, not a simulator profile", path.display()),
        }
    }

    /// Produces the dataset; simulated sources use `scenario` with `seed`.
    pub fn load(&self, scenario: &ScenarioConfig, seed: u64) -> Result<Dataset> {
        let ds = match self {
            Source::Preset(name) => {
                let p = preset(name)?;
                simulate(&p.env, &p.rx, &scenario.clone().with_seed(seed))?
            }
            Source::Profile(path) => {
                let cfg = SimConfig::from_file(path)?;
                simulate(&cfg.env, &cfg.rx, &cfg.scenario.with_seed(seed))?
            }
            Source::Csv(path) => Dataset::load_csv(path)?,
        };
        Ok(ds)
    }

    pub fn describe(&self) -> String {
        match self {
            Source::Preset(n) => format!("preset {n}"),
            Source::Profile(p) => format!("profile {}", p.display()),
            Source::Csv(p) => format!("csv {}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgcStudyConfig {
    pub agc_on: Source,
    pub agc_off: Source,
    pub features: String,
}

impl Default for AgcStudyConfig {
    fn default() -> Self {
        Self {
            agc_on: Source::preset("hallway_agc_on"),
            agc_off: Source::preset("hallway_agc_off"),
            features: "fppl_gain".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub datasets: Vec<Source>,
    pub features: String,
    /// Feature preset used when the gain ablation is requested.
    pub ablation_features: String,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            datasets: vec![Source::preset("hallway_agc_off"), Source::preset("hall_agc_off")],
            features: "cir32_gain".into(),
            ablation_features: "cir32_nogain".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Calibration data and the simulated link ranged against.
    pub source: Source,
    pub trials: usize,
    #[serde(flatten)]
    pub protocol: ProtocolConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            source: Source::preset("hallway_agc_off"),
            trials: 1000,
            protocol: ProtocolConfig::default(),
        }
    }
}

/// Everything one run needs, read from TOML or JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds simulation, train/test splits and benchmark trials.
    pub seed: u64,
    pub out: PathBuf,
    pub train_fraction: f64,
    pub model: ModelConfig,
    /// Grid for preset sources.
    pub scenario: ScenarioConfig,
    pub agc_study: AgcStudyConfig,
    pub transfer: TransferConfig,
    pub protocol: BenchConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("results"),
            train_fraction: SplitConfig::default().train_fraction,
            model: ModelConfig::default(),
            scenario: ScenarioConfig::default(),
            agc_study: AgcStudyConfig::default(),
            transfer: TransferConfig::default(),
            protocol: BenchConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML for `.toml` files and JSON otherwise.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }

    pub fn split(&self) -> SplitConfig {
        SplitConfig {
            train_fraction: self.train_fraction,
            seed: self.seed,
        }
    }

    fn prepare_out(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Record and delivery counts of a written dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub path: PathBuf,
    pub records: usize,
    pub delivered: usize,
}

/// Simulates `source` and writes `<out>/<name>.csv`.
pub fn cmd_simulate(cfg: &ExperimentConfig, source: &Source, name: &str) -> Result<DatasetSummary> {
    let ds = source.load(&cfg.scenario, cfg.seed)?;
    let path = cfg.prepare_out()?.join(format!("{name}.csv"));
    ds.save_csv(&path)?;
    Ok(DatasetSummary {
        path,
        records: ds.len(),
        delivered: ds.delivered_count(),
    })
}

/// Validates a recorded CSV and rewrites it in the canonical schema.
pub fn cmd_ingest(cfg: &ExperimentConfig, input: &Path, mapping: Option<&Path>) -> Result<DatasetSummary> {
    let mapping = match mapping {
        Some(p) => ColumnMapping::from_json_file(p)?,
        None => ColumnMapping::default(),
    };
    let ds =
        Dataset::load_csv_with_mapping(input, &mapping).with_context(|| format!("ingesting {}", input.display()))?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("ingested");
    let path = cfg.prepare_out()?.join(format!("{stem}.canonical.csv"));
    ds.save_csv(&path)?;
    Ok(DatasetSummary {
        path,
        records: ds.len(),
        delivered: ds.delivered_count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainPolicy {
    MaxGain,
    AllGains,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgcCell {
    pub agc: String,
    pub gain_policy: GainPolicy,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgcStudy {
    pub features: String,
    pub model: String,
    pub cells: Vec<AgcCell>,
}

impl AgcStudy {
    pub fn get(&self, agc_on: bool, policy: GainPolicy) -> Option<&EvalReport> {
        let agc = if agc_on { "on" } else { "off" };
        self.cells
            .iter()
            .find(|c| c.agc == agc && c.gain_policy == policy)
            .map(|c| &c.report)
    }

    pub fn text_table(&self) -> String {
        let mut out = format!("{:<8} | {:>10} | {:>10}\n", "AGC", "max gain", "all gains");
        for on in [true, false] {
            let cell = |p| {
                self.get(on, p)
                    .map_or("-".to_string(), |r| format!("{:.3}", r.averaged_mae))
            };
            out.push_str(&format!(
                "{:<8} | {:>10} | {:>10}\n",
                if on { "on" } else { "off" },
                cell(GainPolicy::MaxGain),
                cell(GainPolicy::AllGains)
            ));
        }
        out
    }
}

/// Same-environment accuracy with AGC on and off, at maximum gain and over
/// all gains. Writes `agc_study.json` and `agc_study.txt`.
pub fn cmd_agc_study(cfg: &ExperimentConfig) -> Result<AgcStudy> {
    let spec = FeatureSpec::preset(&cfg.agc_study.features)?;
    let factory = cfg.model.factory()?;
    let on = cfg.agc_study.agc_on.load(&cfg.scenario, cfg.seed)?;
    let off = cfg.agc_study.agc_off.load(&cfg.scenario, cfg.seed)?;
    if on.agc_on() != Some(true) || off.agc_on() != Some(false) {
        bail!("agc_study sources must be AGC-on and AGC-off data respectively");
    }
    let jobs: Vec<(&str, &Dataset, GainPolicy)> = vec![
        ("on", &on, GainPolicy::MaxGain),
        ("on", &on, GainPolicy::AllGains),
        ("off", &off, GainPolicy::MaxGain),
        ("off", &off, GainPolicy::AllGains),
    ];
    use rayon::prelude::*;
    let cells = jobs
        .par_iter()
        .map(|&(agc, ds, policy)| {
            let subset = match policy {
                GainPolicy::MaxGain => ds.filter(|r| r.tx_gain_db == MAX_GAIN_DB),
                GainPolicy::AllGains => ds.clone(),
            };
            let report = split_evaluate(&subset, &spec, &factory, cfg.split())
                .with_context(|| format!("AGC {agc}, {policy:?}"))?;
            Ok(AgcCell {
                agc: agc.to_string(),
                gain_policy: policy,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let study = AgcStudy {
        features: cfg.agc_study.features.clone(),
        model: cfg.model.name().to_string(),
        cells,
    };
    let out = cfg.prepare_out()?;
    write_json(&out.join("agc_study.json"), &study)?;
    write_text(&out.join("agc_study.txt"), &study.text_table())?;
    Ok(study)
}

fn load_environments(cfg: &ExperimentConfig) -> Result<BTreeMap<String, Dataset>> {
    let mut sets = BTreeMap::new();
    for src in &cfg.transfer.datasets {
        let ds = src.load(&cfg.scenario, cfg.seed)?;
        let envs = ds.env_ids();
        if envs.len() != 1 {
            bail!("{} holds {} environments, expected one", src.describe(), envs.len());
        }
        let env = envs.into_iter().next().expect("one element");
        if sets.insert(env.clone(), ds).is_some() {
            bail!("environment `{env}` appears twice in transfer.datasets");
        }
    }
    Ok(sets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRun {
    pub features: String,
    pub model: String,
    pub matrix: TransferMatrix,
}

/// Train-in-one, test-in-every environment matrix. Writes
/// `transfer[_nogain].{json,csv,txt}`.
pub fn cmd_transfer(cfg: &ExperimentConfig, gain_ablation: bool) -> Result<TransferRun> {
    let features = if gain_ablation {
        &cfg.transfer.ablation_features
    } else {
        &cfg.transfer.features
    };
    let spec = FeatureSpec::preset(features)?;
    let factory = cfg.model.factory()?;
    let sets = load_environments(cfg)?;
    let matrix = transfer_study(&sets, &sets, &spec, &factory, cfg.split())?;
    let run = TransferRun {
        features: features.clone(),
        model: cfg.model.name().to_string(),
        matrix,
    };
    let stem = if gain_ablation { "transfer_nogain" } else { "transfer" };
    let out = cfg.prepare_out()?;
    write_json(&out.join(format!("{stem}.json")), &run)?;
    let mut csv = Vec::new();
    run.matrix.write_csv(&mut csv)?;
    fs::write(out.join(format!("{stem}.csv")), csv)?;
    write_text(&out.join(format!("{stem}.txt")), &run.matrix.text_table())?;
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooCell {
    pub env: String,
    pub split: EvalReport,
    pub loo: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooRun {
    pub features: String,
    pub model: String,
    pub cells: Vec<LooCell>,
}

impl LooRun {
    pub fn text_table(&self) -> String {
        let mut out = format!("{:<12} | {:>10} | {:>10}\n", "env", "split", "loo");
        for c in &self.cells {
            out.push_str(&format!(
                "{:<12} | {:>10.3} | {:>10.3}\n",
                c.env, c.split.averaged_mae, c.loo.averaged_mae
            ));
        }
        out
    }
}

/// Held-out split versus leave-one-distance-out, per environment. Writes
/// `loo[_nogain].{json,csv,txt}`.
pub fn cmd_loo(cfg: &ExperimentConfig, gain_ablation: bool) -> Result<LooRun> {
    let features = if gain_ablation {
        &cfg.transfer.ablation_features
    } else {
        &cfg.transfer.features
    };
    let spec = FeatureSpec::preset(features)?;
    let factory = cfg.model.factory()?;
    let sets = load_environments(cfg)?;
    let mut cells = Vec::new();
    for (env, ds) in &sets {
        let (split, loo) = rayon::join(
            || split_evaluate(ds, &spec, &factory, cfg.split()),
            || loo_distance_cv(ds, &spec, &factory),
        );
        cells.push(LooCell {
            env: env.clone(),
            split: split?,
            loo: loo?,
        });
    }
    let run = LooRun {
        features: features.clone(),
        model: cfg.model.name().to_string(),
        cells,
    };
    let stem = if gain_ablation { "loo_nogain" } else { "loo" };
    let out = cfg.prepare_out()?;
    write_json(&out.join(format!("{stem}.json")), &run)?;
    let mut w = csv::Writer::from_path(out.join(format!("{stem}.csv")))?;
    w.write_record(["env", "distance_m", "split_mae_m", "loo_mae_m"])?;
    for c in &run.cells {
        for (d, loo) in &c.loo.per_distance_mae {
            let split = c.split.per_distance_mae.get(d).map_or(String::new(), f64::to_string);
            w.write_record([c.env.clone(), d.to_string(), split, loo.to_string()])?;
        }
    }
    w.flush()?;
    write_text(&out.join(format!("{stem}.txt")), &run.text_table())?;
    Ok(run)
}

/// Calibrates the two-phase ranging protocol and benchmarks it. Writes
/// `protocol_trials.csv` and `protocol_summary.json`.
pub fn cmd_protocol_bench(cfg: &ExperimentConfig) -> Result<BenchSummary> {
    let bench_cfg = &cfg.protocol;
    if bench_cfg.trials == 0 {
        bail!("protocol.trials must be at least 1");
    }
    let (env, rx) = bench_cfg.source.link()?;
    let calibration = bench_cfg.source.load(&cfg.scenario, cfg.seed)?;
    let session = calibrate(&calibration, &bench_cfg.protocol)?;
    let bench = run_bench(&session, &env, &rx, bench_cfg.trials, cfg.seed)?;
    let out = cfg.prepare_out()?;
    let mut csv = Vec::new();
    bench.write_csv(&mut csv)?;
    fs::write(out.join("protocol_trials.csv"), csv)?;
    write_json(&out.join("protocol_summary.json"), &bench.summary)?;
    Ok(bench.summary)
}

/// Collects the text tables and summaries already present in the output
/// directory into `report.txt`.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<String> {
    let out = cfg.prepare_out()?;
    let mut report = String::new();
    let sections = [
        ("AGC study (averaged MAE, m)", "agc_study.txt"),
        ("Environment transfer (averaged MAE, m)", "transfer.txt"),
        (
            "Environment transfer without gain (averaged MAE, m)",
            "transfer_nogain.txt",
        ),
        ("Split vs leave-one-distance-out (averaged MAE, m)", "loo.txt"),
        (
            "Split vs leave-one-distance-out without gain (averaged MAE, m)",
            "loo_nogain.txt",
        ),
    ];
    for (title, file) in sections {
        if let Ok(text) = fs::read_to_string(out.join(file)) {
            report.push_str(&format!("## {title}\n\n{text}\n"));
        }
    }
    if let Ok(text) = fs::read_to_string(out.join("protocol_summary.json")) {
        let s: BenchSummary = serde_json::from_str(&text).context("parsing protocol_summary.json")?;
        report.push_str(&format!(
            "## Minimum-gain ranging ({} trials, {} soundings lost)\n\n\
             baseline averaged MAE: {:.3} m\nrefined averaged MAE:  {:.3} m\n\n",
            s.trials, s.sounding_lost, s.baseline_averaged_mae, s.refined_averaged_mae
        ));
    }
    if report.is_empty() {
        bail!("no results found in {}", out.display());
    }
    write_text(&out.join("report.txt"), &report)?;
    Ok(report)
}
