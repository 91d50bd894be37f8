//! Timing harness for intermediate reuse and short-circuiting. Every
//! measured call is split into constant (setup and commit), combine (reading,
//! parsing and joining inputs, or loading the cached join) and compute
//! (training) time.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use escrow_core::contract::UseLimit;
use escrow_core::runtime::Enforcement;
use escrow_core::{AgentId, DataElementId};
use serde::{Deserialize, Serialize};
use serde_json::{Value, json};

use crate::ads::{self, AdsOptions, ModelKind};
use crate::fraud::{self, FraudOptions};
use crate::ml::TrainConfig;
use crate::stage::{Stage, exact, open_args};
use crate::{Probe, Result, ScenarioError, StepOutcome, synth};

/// One measured call. Times are milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub size: u64,
    pub variant: String,
    pub run: u32,
    pub constant_ms: f64,
    pub combine_ms: f64,
    pub compute_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReuseSummary {
    /// Rows per source table.
    pub size: u64,
    pub reuse_total_ms: f64,
    pub no_reuse_total_ms: f64,
    /// `no_reuse_total_ms / reuse_total_ms`.
    pub speedup: f64,
    pub reuse_joins: u64,
    pub no_reuse_joins: u64,
    /// Fastest single-call totals over fresh escrows. The minimum is the
    /// estimate least disturbed by other load on the machine.
    pub single_reuse_ms: f64,
    pub single_no_reuse_ms: f64,
    /// `|single_reuse - single_no_reuse| / max(...)`.
    pub single_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortCircuitSummary {
    /// Total bytes of training data, split evenly between the two banks.
    pub size: u64,
    pub baseline_ms: f64,
    pub short_circuit_ms: f64,
    /// `short_circuit_ms / baseline_ms`.
    pub ratio: f64,
    /// Share of the baseline spent training.
    pub train_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "benchmark", rename_all = "snake_case")]
pub enum Summary {
    Intermediates { model: ModelKind, sizes: Vec<ReuseSummary> },
    Shortcircuit { epochs: usize, sizes: Vec<ShortCircuitSummary> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub runs: u32,
    pub summary: Summary,
    pub measurements: Vec<Measurement>,
}

impl BenchmarkReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per measurement, header included, for plotting tools.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for m in &self.measurements {
            w.serialize(m)?;
        }
        w.flush()?;
        w.into_inner().map_err(|e| ScenarioError::Io(e.into_error()))
    }

    /// Writes `path` as JSON and the same path with a `.csv` extension.
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(self.to_json()?.as_bytes())?;
        std::fs::write(path.with_extension("csv"), self.to_csv()?)?;
        Ok(())
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn measure(st: &mut Stage, probe: &Probe, caller: AgentId, f: &str, args: Value) -> Result<(StepOutcome, Duration, Duration, Duration)> {
    probe.take_phases();
    let t0 = Instant::now();
    let out = st.call(caller, f, args)?;
    let total = t0.elapsed();
    let p = probe.take_phases();
    Ok((out, total, p.combine, p.compute))
}

fn record(size: u64, variant: &str, run: u32, total: Duration, combine: Duration, compute: Duration) -> Measurement {
    Measurement {
        size,
        variant: variant.into(),
        run,
        constant_ms: ms(total.saturating_sub(combine + compute)),
        combine_ms: ms(combine),
        compute_ms: ms(compute),
        total_ms: ms(total),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone)]
pub struct IntermediatesOptions {
    pub seed: u64,
    pub overlap: f64,
    /// Fresh escrows per variant for the single-call comparison.
    pub single_trials: u32,
}

impl Default for IntermediatesOptions {
    fn default() -> Self {
        IntermediatesOptions { seed: 11, overlap: 0.7, single_trials: 7 }
    }
}

struct AdsRig {
    _dir: tempfile::TempDir,
    stage: Stage,
    don: AgentId,
    probe: Arc<Probe>,
}

fn ads_rig(seed: u64, reuse: bool, fb_csv: &[u8], yt_csv: &[u8]) -> Result<AdsRig> {
    let dir = tempfile::tempdir()?;
    let probe = Arc::new(Probe::default());
    let sp = ads::program(AdsOptions { reuse, probe: probe.clone(), ..AdsOptions::default() })?;
    let mut st = Stage::open(dir.path(), sp.program, seed, |_| {})?;
    let don = st.agent("don")?;
    let (fb, yt) = (st.agent("facebook")?, st.agent("youtube")?);
    let fb_de = st.upload(fb, "csv", fb_csv)?;
    let yt_de = st.upload(yt, "csv", yt_csv)?;
    let p = open_args(
        "train_advertising_model",
        &[don],
        &[fb_de, yt_de],
        json!({ "label_name": "clicked", "query": null }),
        &["model_name"],
        UseLimit::Unlimited,
    );
    let c = st.propose(don, p)?;
    st.approve_all(c)?;
    Ok(AdsRig { _dir: dir, stage: st, don, probe })
}

fn train_call(rig: &mut AdsRig, model: ModelKind, run: u32) -> Result<(Duration, Duration, Duration)> {
    let name = match model {
        ModelKind::Lr => format!("lr_{run}"),
        ModelKind::Mlp => format!("mlp_{run}"),
    };
    let args = json!({ "model_name": name, "label_name": "clicked", "query": null });
    let (out, total, combine, compute) = measure(&mut rig.stage, &rig.probe, rig.don, "train_advertising_model", args)?;
    if out.released().is_none() {
        return Err(ScenarioError::Script(format!("benchmark call did not release: {}", out.summary())));
    }
    Ok((total, combine, compute))
}

/// Repeated training calls over the joined publisher tables, with and
/// without the cached join. `sizes` are rows per source table.
pub fn bench_intermediates(sizes: &[u64], runs: u32, model: ModelKind, o: &IntermediatesOptions) -> Result<BenchmarkReport> {
    let mut measurements = Vec::new();
    let mut summaries = Vec::new();
    for &size in sizes {
        let (fb_csv, yt_csv) = synth::ads_csv(o.seed, size as usize, o.overlap);
        let mut totals = [0.0; 2];
        let mut joins = [0; 2];
        let mut singles = [Vec::new(), Vec::new()];
        for (i, (reuse, variant)) in [(true, "reuse"), (false, "no_reuse")].into_iter().enumerate() {
            let mut rig = ads_rig(o.seed, reuse, &fb_csv, &yt_csv)?;
            for run in 0..runs {
                let (total, combine, compute) = train_call(&mut rig, model, run)?;
                totals[i] += ms(total);
                measurements.push(record(size, variant, run, total, combine, compute));
            }
            joins[i] = rig.probe.joins();
        }
        // Alternating trials so drift on a shared machine hits both variants.
        for trial in 0..o.single_trials {
            for (i, (reuse, variant)) in [(true, "reuse_single"), (false, "no_reuse_single")].into_iter().enumerate() {
                let mut rig = ads_rig(o.seed, reuse, &fb_csv, &yt_csv)?;
                let (total, combine, compute) = train_call(&mut rig, model, 0)?;
                singles[i].push(ms(total));
                measurements.push(record(size, variant, trial, total, combine, compute));
            }
        }
        let [sr, sn] = singles.map(|v| v.into_iter().fold(f64::INFINITY, f64::min));
        summaries.push(ReuseSummary {
            size,
            reuse_total_ms: totals[0],
            no_reuse_total_ms: totals[1],
            speedup: totals[1] / totals[0],
            reuse_joins: joins[0],
            no_reuse_joins: joins[1],
            single_reuse_ms: sr,
            single_no_reuse_ms: sn,
            single_gap: (sr - sn).abs() / sr.max(sn),
        });
    }
    Ok(BenchmarkReport { seed: o.seed, runs, summary: Summary::Intermediates { model, sizes: summaries }, measurements })
}

#[derive(Debug, Clone)]
pub struct ShortCircuitOptions {
    pub seed: u64,
    /// Full-batch gradient steps; high enough that training dominates.
    pub epochs: usize,
    pub test_rows: usize,
}

impl Default for ShortCircuitOptions {
    fn default() -> Self {
        ShortCircuitOptions { seed: 13, epochs: 600, test_rows: 2000 }
    }
}

/// Read-then-train over an approved bank's data followed by an unapproved
/// one. The baseline defers the check to the end of the run; the
/// short-circuited run stops at the first unapproved read. `sizes` are total
/// training bytes.
pub fn bench_shortcircuit(sizes: &[u64], runs: u32, o: &ShortCircuitOptions) -> Result<BenchmarkReport> {
    let mut measurements = Vec::new();
    let mut summaries = Vec::new();
    for &size in sizes {
        let dir = tempfile::tempdir()?;
        let probe = Arc::new(Probe::default());
        let train = TrainConfig { epochs: o.epochs, ..TrainConfig::default() };
        let sp = fraud::program(FraudOptions { train, probe: Some(probe.clone()) })?;
        let mut st = Stage::open(dir.path(), sp.program, o.seed, |_| {})?;
        let (a, c) = (st.agent("bank_a")?, st.agent("bank_c")?);
        let half = (size / 2) as usize;
        let a_de = st.upload(a, "csv", &synth::fraud_csv_of_size(o.seed, 0, half))?;
        let c_de = st.upload(c, "csv", &synth::fraud_csv_of_size(o.seed, 2, half))?;
        let test_de = st.upload(a, "csv", &synth::fraud_csv(o.seed, 9, o.test_rows))?;
        let args = sc_args(a_de, c_de, test_de);
        let cid = st.propose(a, exact("train_fraud_model", &[a], &[a_de, test_de], args.clone(), UseLimit::Unlimited))?;
        st.approve_all(cid)?;

        let (mut base, mut short, mut train_frac) = (Vec::new(), Vec::new(), Vec::new());
        for run in 0..runs {
            for (enforcement, variant) in [(Enforcement::DeferredCheck, "baseline"), (Enforcement::ShortCircuit, "short_circuit")] {
                st.escrow().set_enforcement(enforcement);
                let (out, total, combine, compute) = measure(&mut st, &probe, a, "train_fraud_model", args.clone())?;
                if out.error_code() != Some("ShortCircuited") {
                    return Err(ScenarioError::Script(format!("{variant} run was not refused: {}", out.summary())));
                }
                if enforcement == Enforcement::DeferredCheck {
                    base.push(ms(total));
                    train_frac.push(compute.as_secs_f64() / total.as_secs_f64());
                } else {
                    short.push(ms(total));
                }
                measurements.push(record(size, variant, run, total, combine, compute));
            }
        }
        let (b, s) = (median(base), median(short));
        summaries.push(ShortCircuitSummary { size, baseline_ms: b, short_circuit_ms: s, ratio: s / b, train_fraction: median(train_frac) });
    }
    Ok(BenchmarkReport { seed: o.seed, runs, summary: Summary::Shortcircuit { epochs: o.epochs, sizes: summaries }, measurements })
}

fn sc_args(a: DataElementId, c: DataElementId, test: DataElementId) -> Value {
    json!({
        "train_de_ids": [a, c],
        "size_constraint": 0,
        "test_de_ids": [test],
        "target_accuracy": 0.0,
        "label_name": "Class",
    })
}
