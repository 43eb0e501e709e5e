//! The `run`, `compare` and `sweep` commands.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xdiff_core::agent::median;
use xdiff_core::baselines::{percentile, ProviderKind};
use xdiff_core::env::trace::read_trace;
use xdiff_core::experiment::{self, read_metrics, write_file, RunOutput, RunSummary};

use crate::config::{Overrides, Resolved, RunConfig};
use crate::plot::{cdf, line_chart, smooth, Series};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const BATCH_SCHEMA_VERSION: u32 = 1;
pub const COMPARISON_SCHEMA_VERSION: u32 = 1;
pub const SWEEP_SCHEMA_VERSION: u32 = 1;
pub const LATENCY_SCHEMA_VERSION: u32 = 1;

/// Everything needed to reproduce a batch.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub schema_version: u32,
    pub tool_version: &'static str,
    pub run: &'a Resolved,
}

/// Seed-level summaries and their means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub schema_version: u32,
    pub preset: String,
    pub provider: ProviderKind,
    pub slots: usize,
    pub seeds: Vec<u64>,
    pub latency_coupling: bool,
    pub reward_mean: f64,
    pub final_third_reward_mean: f64,
    pub tp_mbps_mean: f64,
    pub delay_ms_mean: f64,
    pub bler_mean: f64,
    pub bytes_conserved: bool,
    pub runs: Vec<RunSummary>,
}

impl BatchSummary {
    fn new(resolved: &Resolved, runs: Vec<RunSummary>) -> Self {
        let mean = |f: &dyn Fn(&RunSummary) -> f64| runs.iter().map(f).sum::<f64>() / runs.len().max(1) as f64;
        Self {
            schema_version: BATCH_SCHEMA_VERSION,
            preset: resolved.scenario.name.clone(),
            provider: resolved.provider,
            slots: resolved.slots,
            seeds: resolved.seeds.clone(),
            latency_coupling: resolved.latency_coupling,
            reward_mean: mean(&|r| r.reward.mean),
            final_third_reward_mean: mean(&|r| r.final_third_reward),
            tp_mbps_mean: mean(&|r| r.tp_mbps.mean),
            delay_ms_mean: mean(&|r| r.delay_ms.mean),
            bler_mean: mean(&|r| r.bler_mean),
            bytes_conserved: runs.iter().all(|r| r.bytes_conserved),
            runs,
        }
    }
}

/// Wall-clock policy generation times, kept apart from the deterministic
/// summary.
#[derive(Debug, Serialize, Deserialize)]
pub struct LatencyReport {
    pub schema_version: u32,
    pub calls: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn write_seed(out: &Path, seed: u64, run: &RunOutput) -> Result<()> {
    let dir = seed_dir(out, seed);
    write_file(&dir.join("trace.csv"), &run.trace_csv()?)?;
    write_file(&dir.join("metrics.csv"), &run.metrics_csv()?)?;
    write_file(&dir.join("summary.json"), &json(&run.summary)?)?;
    let lat = &run.act_latencies_ms;
    let report = LatencyReport {
        schema_version: LATENCY_SCHEMA_VERSION,
        calls: lat.len(),
        mean_ms: lat.iter().sum::<f64>() / lat.len().max(1) as f64,
        p50_ms: percentile(lat, 0.5),
        p95_ms: percentile(lat, 0.95),
    };
    write_file(&dir.join("latency.json"), &json(&report)?)?;
    if let Some(ckpt) = &run.checkpoint {
        write_file(&dir.join("checkpoint.xdnn"), ckpt)?;
    }
    Ok(())
}

/// Runs every seed of `resolved` and writes the run directory `out`.
pub fn run(resolved: &Resolved, out: &Path) -> Result<BatchSummary> {
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        run: resolved,
    };
    write_file(&out.join("manifest.json"), &json(&manifest)?)?;
    let summaries = resolved
        .seeds
        .par_iter()
        .map(|&seed| -> Result<RunSummary> {
            log::info!("{} on {} seed {seed}: {} slots", resolved.provider, resolved.scenario.name, resolved.slots);
            let output = experiment::run(&resolved.spec(seed)).with_context(|| format!("seed {seed} failed"))?;
            write_seed(out, seed, &output)?;
            log::info!("seed {seed}: mean reward {:.3}", output.summary.reward.mean);
            Ok(output.summary)
        })
        .collect::<Result<Vec<_>>>()?;
    let batch = BatchSummary::new(resolved, summaries);
    write_file(&out.join("summary.json"), &json(&batch)?)?;
    Ok(batch)
}

pub fn load_batch(dir: &Path) -> Result<BatchSummary> {
    if !dir.is_dir() {
        bail!("run directory not found: {}", dir.display());
    }
    let path = dir.join("summary.json");
    let file = File::open(&path).with_context(|| format!("run summary not found: {}", path.display()))?;
    serde_json::from_reader(file).with_context(|| format!("malformed run summary {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    /// Competition rank: equal rewards share a rank.
    pub rank: usize,
    pub label: String,
    pub provider: ProviderKind,
    pub preset: String,
    pub dir: String,
    pub reward_mean: f64,
    pub final_third_reward_mean: f64,
    pub tp_mbps_mean: f64,
    pub delay_ms_mean: f64,
    pub bler_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema_version: u32,
    pub ranking: Vec<RankEntry>,
}

/// Orders by mean reward, best first; the label and directory only fix the
/// listing order among equal rewards, never their rank.
pub fn rank(mut entries: Vec<RankEntry>) -> Vec<RankEntry> {
    entries.sort_by(|a, b| {
        b.reward_mean
            .total_cmp(&a.reward_mean)
            .then_with(|| a.label.cmp(&b.label))
            .then_with(|| a.dir.cmp(&b.dir))
    });
    let mut rank = 0;
    for i in 0..entries.len() {
        if i == 0 || entries[i].reward_mean != entries[i - 1].reward_mean {
            rank = i + 1;
        }
        entries[i].rank = rank;
    }
    entries
}

/// Evenly spaced subset so large CDFs stay small on disk.
fn thin(points: Vec<(f64, f64)>, max: usize) -> Vec<(f64, f64)> {
    if points.len() <= max {
        return points;
    }
    let step = (points.len() - 1) as f64 / (max - 1) as f64;
    (0..max).map(|i| points[(i as f64 * step).round() as usize]).collect()
}

struct Loaded {
    batch: BatchSummary,
    label: String,
    dir: PathBuf,
}

/// Compares run directories: ranking JSON plus reward, throughput, delay
/// and BLER plots in `out`.
pub fn compare(dirs: &[PathBuf], out: &Path) -> Result<Comparison> {
    if dirs.is_empty() {
        bail!("compare needs at least one run directory");
    }
    let mut loaded = Vec::new();
    for dir in dirs {
        let batch = load_batch(dir)?;
        loaded.push(Loaded {
            label: format!("{}/{}", batch.provider, batch.preset),
            batch,
            dir: dir.clone(),
        });
    }
    // Disambiguate repeated labels by directory name.
    let labels: Vec<String> = loaded.iter().map(|l| l.label.clone()).collect();
    for l in &mut loaded {
        if labels.iter().filter(|x| **x == l.label).count() > 1 {
            let name = l.dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            l.label = format!("{} ({name})", l.label);
        }
    }
    loaded.sort_by(|a, b| a.label.cmp(&b.label).then_with(|| a.dir.cmp(&b.dir)));

    let entries = loaded
        .iter()
        .map(|l| RankEntry {
            rank: 0,
            label: l.label.clone(),
            provider: l.batch.provider,
            preset: l.batch.preset.clone(),
            dir: l.dir.display().to_string(),
            reward_mean: l.batch.reward_mean,
            final_third_reward_mean: l.batch.final_third_reward_mean,
            tp_mbps_mean: l.batch.tp_mbps_mean,
            delay_ms_mean: l.batch.delay_ms_mean,
            bler_mean: l.batch.bler_mean,
        })
        .collect();
    let comparison = Comparison {
        schema_version: COMPARISON_SCHEMA_VERSION,
        ranking: rank(entries),
    };

    let (mut reward, mut tp, mut delay, mut bler) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for l in &loaded {
        let mut per_slot = vec![0.0; l.batch.slots];
        let (mut tps, mut delays, mut blers) = (Vec::new(), Vec::new(), Vec::new());
        for &seed in &l.batch.seeds {
            let dir = seed_dir(&l.dir, seed);
            let metrics = read_metrics(File::open(dir.join("metrics.csv")).with_context(|| format!("missing metrics in {}", dir.display()))?)?;
            for (acc, m) in per_slot.iter_mut().zip(&metrics) {
                *acc += m.reward / l.batch.seeds.len() as f64;
            }
            for row in read_trace(File::open(dir.join("trace.csv")).with_context(|| format!("missing trace in {}", dir.display()))?)? {
                tps.push(row.tp_bps / 1e6);
                delays.push(row.delay_ms);
                blers.push(row.bler);
            }
        }
        let name = l.label.clone();
        reward.push(Series {
            name: name.clone(),
            points: smooth(&per_slot, 50),
        });
        tp.push(Series {
            name: name.clone(),
            points: thin(cdf(&tps), 500),
        });
        delay.push(Series {
            name: name.clone(),
            points: thin(cdf(&delays), 500),
        });
        bler.push(Series {
            name,
            points: thin(cdf(&blers), 500),
        });
    }
    std::fs::create_dir_all(out)?;
    write_file(&out.join("comparison.json"), &json(&comparison)?)?;
    write_file(&out.join("reward.svg"), line_chart("Slot reward (50-slot mean)", "slot", "reward", &reward)?.as_bytes())?;
    write_file(&out.join("throughput_cdf.svg"), line_chart("Throughput CDF", "Mbps", "CDF", &tp)?.as_bytes())?;
    write_file(&out.join("delay_cdf.svg"), line_chart("Delay CDF", "ms", "CDF", &delay)?.as_bytes())?;
    write_file(&out.join("bler_cdf.svg"), line_chart("BLER CDF", "BLER", "CDF", &bler)?.as_bytes())?;
    Ok(comparison)
}

/// Hyperparameters with a sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Denoising steps K.
    Steps,
    /// Loss-balancing weight eta.
    Eta,
}

impl SweepParam {
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepParam::Steps => vec![2.0, 5.0, 10.0, 20.0],
            SweepParam::Eta => vec![0.5, 1.0, 2.0],
        }
    }

    fn name(self) -> &'static str {
        match self {
            SweepParam::Steps => "steps",
            SweepParam::Eta => "eta",
        }
    }

    fn apply(self, cfg: &mut RunConfig, value: f64) -> Result<()> {
        match self {
            SweepParam::Steps => {
                if value < 1.0 || value.fract() != 0.0 {
                    bail!("steps must be a positive integer, got {value}");
                }
                cfg.learners.xdiff.diffusion.steps = value as usize;
            }
            SweepParam::Eta => {
                if !(value >= 0.0) {
                    bail!("eta must be non-negative, got {value}");
                }
                cfg.learners.xdiff.eta = value;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub dir: String,
    /// Final-third mean reward of each seed.
    pub rewards: Vec<f64>,
    pub median_reward: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub param: SweepParam,
    pub preset: String,
    pub provider: ProviderKind,
    pub seeds: Vec<u64>,
    pub slots: usize,
    pub latency_coupling: bool,
    pub points: Vec<SweepPoint>,
    /// Value with the highest median reward.
    pub best_value: f64,
}

pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let values = text
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().with_context(|| format!("bad sweep value {t:?}")))
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        bail!("sweep value list is empty");
    }
    Ok(values)
}

/// Runs the diffusion agent once per value and reports reward against it.
pub fn sweep(param: SweepParam, values: &[f64], base: &RunConfig, flags: &Overrides, out: &Path) -> Result<SweepReport> {
    if values.is_empty() {
        bail!("sweep value list is empty");
    }
    let mut runs = Vec::new();
    for &v in values {
        let mut cfg = base.clone();
        param.apply(&mut cfg, v)?;
        let resolved = Resolved::new(&cfg, flags)?;
        if !matches!(resolved.provider, ProviderKind::XDiff | ProviderKind::XDiffHard) {
            bail!("sweeps tune the diffusion agent; provider {} has no {}", resolved.provider, param.name());
        }
        runs.push((v, resolved));
    }
    let mut points = Vec::new();
    for (v, resolved) in &runs {
        let dir = out.join(format!("{}-{v}", param.name()));
        let batch = run(resolved, &dir)?;
        let rewards: Vec<f64> = batch.runs.iter().map(|r| r.final_third_reward).collect();
        points.push(SweepPoint {
            value: *v,
            dir: dir.display().to_string(),
            median_reward: median(&rewards).unwrap_or(f64::NAN),
            mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
            rewards,
        });
    }
    let best_value = points
        .iter()
        .max_by(|a, b| a.median_reward.total_cmp(&b.median_reward).then_with(|| b.value.total_cmp(&a.value)))
        .map(|p| p.value)
        .unwrap_or(f64::NAN);
    let first = &runs[0].1;
    let report = SweepReport {
        schema_version: SWEEP_SCHEMA_VERSION,
        param,
        preset: first.scenario.name.clone(),
        provider: first.provider,
        seeds: first.seeds.clone(),
        slots: first.slots,
        latency_coupling: first.latency_coupling,
        points,
        best_value,
    };
    write_file(&out.join("sweep.json"), &json(&report)?)?;
    let series = vec![Series {
        name: "median final-third reward".into(),
        points: report.points.iter().map(|p| (p.value, p.median_reward)).collect(),
    }];
    write_file(&out.join("sweep.svg"), line_chart(&format!("Reward vs {}", param.name()), param.name(), "reward", &series)?.as_bytes())?;
    Ok(report)
}
