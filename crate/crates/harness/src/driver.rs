//! Mode drivers: generate, run, verify and bench.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use mknn_core::engine::{Engine, EngineConfig, TickMetrics};
use mknn_core::oracle::{brute_force_knn, compare_results, Verdict, REPORT_HEADER};
use mknn_core::workload::{Distribution, TickBatch, Workload, WorkloadSpec};

use crate::config::{RunConfig, Study};
use crate::dataset::{ingest, write_batch, write_header};
use crate::output::{fmt_sig9, write_results, RESULTS_HEADER};
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Generate,
    Run,
    Verify,
    Bench,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// `verify` found at least one mismatching query.
    Mismatch,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Mismatch => 2,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| HarnessError::io(path, e))
}

struct Sink<'a> {
    path: &'a Path,
    out: BufWriter<File>,
}

impl<'a> Sink<'a> {
    fn open(path: &'a Path) -> Result<Self, HarnessError> {
        Ok(Self { path, out: create(path)? })
    }

    fn write(&mut self, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), HarnessError> {
        f(&mut self.out).map_err(|e| HarnessError::io(self.path, e))
    }

    fn line(&mut self, s: &str) -> Result<(), HarnessError> {
        self.write(|o| writeln!(o, "{s}"))
    }

    fn finish(mut self) -> Result<(), HarnessError> {
        self.out.flush().map_err(|e| HarnessError::io(self.path, e))
    }
}

pub fn execute(mode: Mode, cfg: &RunConfig) -> Result<Outcome, HarnessError> {
    cfg.validate()?;
    match mode {
        Mode::Generate => generate(cfg).map(|_| Outcome::Success),
        Mode::Run => run(cfg, false),
        Mode::Verify => run(cfg, true),
        Mode::Bench => bench(cfg).map(|_| Outcome::Success),
    }
}

fn generate(cfg: &RunConfig) -> Result<(), HarnessError> {
    let path = cfg
        .dataset
        .as_deref()
        .ok_or_else(|| HarnessError::config(None, "`generate` needs `dataset` (output path)".into()))?;
    let workload = Workload::new(cfg.workload_spec()?)?;
    let mut sink = Sink::open(path)?;
    sink.write(|o| write_header(o, &cfg.workload_echo()))?;
    for batch in workload {
        sink.write(|o| write_batch(o, &batch))?;
    }
    sink.finish()
}

/// Tick batches from the dataset file, or generated if none is configured.
pub fn batches(cfg: &RunConfig) -> Result<Box<dyn Iterator<Item = TickBatch>>, HarnessError> {
    match &cfg.dataset {
        Some(path) => {
            let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
            Ok(Box::new(ingest(BufReader::new(f), path, cfg.k)?.batches.into_iter()))
        }
        None => Ok(Box::new(Workload::new(cfg.workload_spec()?)?)),
    }
}

fn run(cfg: &RunConfig, verify: bool) -> Result<Outcome, HarnessError> {
    let mut results = Sink::open(&cfg.results_out)?;
    let mut metrics = Sink::open(&cfg.metrics_out)?;
    let mut report = if verify { Some(Sink::open(&cfg.report_out)?) } else { None };
    let mut engine = Engine::new(cfg.engine_config())?;
    let oracle_pool = pool(cfg.threads)?;

    results.line(RESULTS_HEADER)?;
    metrics.line(TickMetrics::CSV_HEADER)?;
    if let Some(r) = report.as_mut() {
        r.line(REPORT_HEADER)?;
    }
    let mut counts = [0usize; 3];
    for batch in batches(cfg)? {
        let out = engine.process_tick(&batch.positions, &batch.queries)?;
        let mut m = out.metrics.clone();
        m.tick = batch.tick;
        results.write(|o| write_results(o, batch.tick, &out.result))?;
        metrics.line(&m.csv_row())?;
        if let Some(audit) = &out.audit {
            if !audit.wrongly_pruned.is_empty() {
                eprintln!("tick {}: audit: {audit}", batch.tick);
            }
        }
        if let Some(r) = report.as_mut() {
            let want = oracle_pool.install(|| brute_force_knn(&batch.positions, &batch.queries, cfg.k));
            for v in compare_results(&out.result, &want) {
                counts[v.verdict as usize] += 1;
                if v.verdict == Verdict::Mismatch {
                    eprintln!("tick {}: query {} mismatch", batch.tick, v.query_id);
                }
                r.line(&format!(
                    "{},{},{},{}",
                    v.query_id,
                    v.verdict.as_str(),
                    fmt_sig9(v.engine_maxdist),
                    fmt_sig9(v.oracle_maxdist)
                ))?;
            }
        }
    }
    results.finish()?;
    metrics.finish()?;
    if let Some(r) = report {
        r.finish()?;
        eprintln!("verify: {} exact, {} tie-equivalent, {} mismatch", counts[0], counts[1], counts[2]);
        if counts[Verdict::Mismatch as usize] > 0 {
            return Ok(Outcome::Mismatch);
        }
    }
    Ok(Outcome::Success)
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::config(None, format!("failed to start worker pool: {e}")))
}

/// One measured tick at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub study: Study,
    pub tick: u64,
    pub distribution: Distribution,
    pub n_objects: usize,
    pub k: usize,
    pub th_quad: usize,
    pub threads: usize,
    pub engine_us: u64,
    pub brute_us: Option<u64>,
    pub metrics: TickMetrics,
}

pub const BENCH_HEADER: &str = "study,tick,distribution,n_objects,k,th_quad,threads,engine_us,brute_us,distance_evals,iterations_left,iterations_right,rebuild_flag";

impl BenchRow {
    pub fn csv_row(&self) -> String {
        let study = match self.study {
            Study::S1 => "s1",
            Study::S2 => "s2",
            Study::S3 => "s3",
        };
        format!(
            "{study},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.tick,
            self.distribution,
            self.n_objects,
            self.k,
            self.th_quad,
            self.threads,
            self.engine_us,
            self.brute_us.map_or(String::new(), |b| b.to_string()),
            self.metrics.distance_evals,
            self.metrics.iterations_left,
            self.metrics.iterations_right,
            self.metrics.rebuild as u8
        )
    }
}

/// Runs one parameter point over every tick of `spec`.
fn measure(
    study: Study,
    spec: &WorkloadSpec,
    engine_cfg: EngineConfig,
    with_brute: bool,
    out: &mut Vec<BenchRow>,
) -> Result<(), HarnessError> {
    let brute_pool = pool(engine_cfg.threads)?;
    let mut engine = Engine::new(engine_cfg.clone())?;
    for batch in Workload::new(spec.clone())? {
        let t = Instant::now();
        let res = engine.process_tick(&batch.positions, &batch.queries)?;
        let engine_us = t.elapsed().as_micros() as u64;
        let brute_us = with_brute.then(|| {
            let t = Instant::now();
            let r = brute_pool.install(|| brute_force_knn(&batch.positions, &batch.queries, spec.k));
            std::hint::black_box(r);
            t.elapsed().as_micros() as u64
        });
        let mut metrics = res.metrics;
        metrics.tick = batch.tick;
        out.push(BenchRow {
            study,
            tick: batch.tick,
            distribution: spec.distribution,
            n_objects: spec.n_objects,
            k: spec.k,
            th_quad: engine_cfg.th_quad,
            threads: engine_cfg.threads,
            engine_us,
            brute_us,
            metrics,
        });
    }
    Ok(())
}

/// Runs the configured study; rows come out in sweep order, ticks innermost.
pub fn run_study(cfg: &RunConfig) -> Result<Vec<BenchRow>, HarnessError> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let base = cfg.engine_config();
    match cfg.study {
        Study::S1 => {
            for &k in &cfg.sweep_k {
                for &th_quad in &cfg.sweep_th_quad {
                    let mut c = cfg.clone();
                    c.k = k;
                    let spec = c.workload_spec()?;
                    measure(Study::S1, &spec, EngineConfig { k, th_quad, ..base.clone() }, false, &mut rows)?;
                }
            }
        }
        Study::S2 | Study::S3 => {
            let dists = if cfg.study == Study::S2 { vec![cfg.distribution] } else { cfg.sweep_distribution.clone() };
            for &d in &dists {
                for &n in &cfg.sweep_n {
                    for &k in &cfg.sweep_k {
                        let mut c = cfg.clone();
                        c.distribution = d;
                        c.n_objects = n;
                        c.k = k;
                        let spec = c.workload_spec()?;
                        let ec = EngineConfig { k, th_quad: cfg.th_quad_for(k), ..base.clone() };
                        measure(cfg.study, &spec, ec, true, &mut rows)?;
                    }
                }
            }
        }
    }
    Ok(rows)
}

fn bench(cfg: &RunConfig) -> Result<(), HarnessError> {
    // fail on an unwritable output before measuring anything
    let mut sink = Sink::open(&cfg.bench_out)?;
    let rows = run_study(cfg)?;
    sink.line(BENCH_HEADER)?;
    for r in &rows {
        sink.line(&r.csv_row())?;
    }
    sink.finish()
}
