//! Run configuration.
//!
//! A config file is plain text, one `key = value` pair per line. Blank
//! lines and lines whose first non-blank character is `#` are ignored.
//! Keys are matched exactly; unknown keys and malformed values are
//! errors. `--set key=value` overrides use the same grammar and are
//! applied after the file, in order. Lists are comma-separated.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mknn_core::engine::{auto_th_quad, EngineConfig};
use mknn_core::quadindex::RebuildPolicy;
use mknn_core::workload::{grid_network, Distribution, Segment, WorkloadSpec, DEFAULT_REGION_SIDE};
use mknn_core::{Point, Rect};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThQuad {
    Auto,
    Fixed(usize),
}

impl ThQuad {
    pub fn resolve(self, k: usize) -> usize {
        match self {
            ThQuad::Auto => auto_th_quad(k),
            ThQuad::Fixed(t) => t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    /// Tick time against th_quad, for each k.
    S1,
    /// Engine against brute force, over n and k.
    S2,
    /// Engine against brute force, over distribution, n and k.
    S3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n_objects: usize,
    pub distribution: Distribution,
    pub hotspots: usize,
    pub sigma: f64,
    /// Segment file (`x1,y1,x2,y2` per line); a street grid is used when absent.
    pub network_file: Option<PathBuf>,
    pub network_lines: usize,
    pub region_side: f64,
    pub max_speed: f64,
    pub ticks: usize,
    pub query_rate: f64,
    pub k: usize,
    pub seed: u64,

    pub th_quad: ThQuad,
    pub l_max: u32,
    pub num_bins: usize,
    pub max_refine_iters: u32,
    pub rebuild_window: usize,
    pub rebuild_factor: f64,
    pub threads: usize,
    pub audit: bool,

    /// Input for `run`/`verify` and output of `generate`. Without it,
    /// `run` and `verify` generate the workload in memory.
    pub dataset: Option<PathBuf>,
    pub results_out: PathBuf,
    pub metrics_out: PathBuf,
    pub report_out: PathBuf,
    pub bench_out: PathBuf,

    pub study: Study,
    pub sweep_th_quad: Vec<usize>,
    pub sweep_k: Vec<usize>,
    pub sweep_n: Vec<usize>,
    pub sweep_distribution: Vec<Distribution>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let w = WorkloadSpec::default();
        Self {
            n_objects: w.n_objects,
            distribution: w.distribution,
            hotspots: w.hotspots,
            sigma: w.sigma,
            network_file: None,
            network_lines: 16,
            region_side: DEFAULT_REGION_SIDE,
            max_speed: w.max_speed,
            ticks: w.ticks,
            query_rate: w.query_rate,
            k: w.k,
            seed: w.seed,
            th_quad: ThQuad::Auto,
            l_max: 10,
            num_bins: 32,
            max_refine_iters: 64,
            rebuild_window: RebuildPolicy::default().window,
            rebuild_factor: RebuildPolicy::default().factor,
            threads: 1,
            audit: false,
            dataset: None,
            results_out: "results.csv".into(),
            metrics_out: "metrics.csv".into(),
            report_out: "report.csv".into(),
            bench_out: "bench.csv".into(),
            study: Study::S1,
            sweep_th_quad: vec![4, 16, 64, 256, 1024, 4096],
            sweep_k: vec![32],
            sweep_n: vec![10_000, 50_000],
            sweep_distribution: vec![Distribution::Uniform, Distribution::Gaussian, Distribution::Network],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String> {
    let items: Vec<T> = value.split(',').map(|v| parse(key, v.trim())).collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(format!("`{key}` needs at least one value"));
    }
    Ok(items)
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("invalid value `{value}` for `{key}`")),
    }
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        let key = key.trim();
        match key {
            "n_objects" => self.n_objects = parse(key, v)?,
            "distribution" => self.distribution = v.parse().map_err(|e: mknn_core::workload::WorkloadError| e.to_string())?,
            "hotspots" => self.hotspots = parse(key, v)?,
            "sigma" => self.sigma = parse(key, v)?,
            "network_file" => self.network_file = (!v.is_empty()).then(|| v.into()),
            "network_lines" => self.network_lines = parse(key, v)?,
            "region_side" => self.region_side = parse(key, v)?,
            "max_speed" => self.max_speed = parse(key, v)?,
            "ticks" => self.ticks = parse(key, v)?,
            "query_rate" => self.query_rate = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "th_quad" => self.th_quad = if v == "auto" { ThQuad::Auto } else { ThQuad::Fixed(parse(key, v)?) },
            "l_max" => self.l_max = parse(key, v)?,
            "num_bins" => self.num_bins = parse(key, v)?,
            "max_refine_iters" => self.max_refine_iters = parse(key, v)?,
            "rebuild_window" => self.rebuild_window = parse(key, v)?,
            "rebuild_factor" => self.rebuild_factor = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "audit" => self.audit = parse_bool(key, v)?,
            "dataset" => self.dataset = (!v.is_empty()).then(|| v.into()),
            "results_out" => self.results_out = v.into(),
            "metrics_out" => self.metrics_out = v.into(),
            "report_out" => self.report_out = v.into(),
            "bench_out" => self.bench_out = v.into(),
            "study" => {
                self.study = match v {
                    "s1" => Study::S1,
                    "s2" => Study::S2,
                    "s3" => Study::S3,
                    _ => return Err(format!("unknown study `{v}` (expected s1, s2 or s3)")),
                }
            }
            "sweep_th_quad" => self.sweep_th_quad = parse_list(key, v)?,
            "sweep_k" => self.sweep_k = parse_list(key, v)?,
            "sweep_n" => self.sweep_n = parse_list(key, v)?,
            "sweep_distribution" => {
                self.sweep_distribution = v
                    .split(',')
                    .map(|d| d.trim().parse().map_err(|e: mknn_core::workload::WorkloadError| e.to_string()))
                    .collect::<Result<_, _>>()?
            }
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<(), HarnessError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::config(Some(i + 1), format!("expected `key = value`, got `{line}`")))?;
            self.set(key, value).map_err(|m| HarnessError::config(Some(i + 1), m))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides<'a>(&mut self, overrides: impl IntoIterator<Item = &'a str>) -> Result<(), HarnessError> {
        for o in overrides {
            let (key, value) =
                o.split_once('=').ok_or_else(|| HarnessError::config(None, format!("override `{o}` is not key=value")))?;
            self.set(key, value).map_err(|m| HarnessError::config(None, format!("--set {o}: {m}")))?;
        }
        Ok(())
    }

    pub fn region(&self) -> Rect {
        Rect::square(self.region_side)
    }

    pub fn th_quad_for(&self, k: usize) -> usize {
        self.th_quad.resolve(k)
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            mbr: self.region(),
            k: self.k,
            th_quad: self.th_quad_for(self.k),
            l_max: self.l_max,
            num_bins: self.num_bins,
            max_refine_iters: self.max_refine_iters,
            rebuild: RebuildPolicy { window: self.rebuild_window, factor: self.rebuild_factor },
            threads: self.threads,
            audit: self.audit,
        }
    }

    pub fn workload_spec(&self) -> Result<WorkloadSpec, HarnessError> {
        let region = self.region();
        let network_edges = match (self.distribution, &self.network_file) {
            (Distribution::Network, Some(path)) => load_network(path)?,
            (Distribution::Network, None) => grid_network(&region, self.network_lines),
            _ => Vec::new(),
        };
        Ok(WorkloadSpec {
            n_objects: self.n_objects,
            distribution: self.distribution,
            hotspots: self.hotspots,
            sigma: self.sigma,
            network_edges,
            region,
            max_speed: self.max_speed,
            ticks: self.ticks,
            query_rate: self.query_rate,
            k: self.k,
            seed: self.seed,
        })
    }

    /// Checks everything that can be checked before any work starts.
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.engine_config().validate()?;
        self.workload_spec()?.validate()?;
        for &k in &self.sweep_k {
            let cfg = EngineConfig { k, th_quad: self.th_quad_for(k), ..self.engine_config() };
            cfg.validate()?;
        }
        for &t in &self.sweep_th_quad {
            EngineConfig { th_quad: t, ..self.engine_config() }.validate()?;
        }
        if self.sweep_distribution.is_empty() {
            return Err(HarnessError::config(None, "`sweep_distribution` needs at least one value".into()));
        }
        Ok(())
    }

    /// `key = value` lines describing the workload, echoed into dataset headers.
    pub fn workload_echo(&self) -> Vec<(String, String)> {
        let mut v = vec![
            ("n_objects", self.n_objects.to_string()),
            ("distribution", self.distribution.to_string()),
            ("hotspots", self.hotspots.to_string()),
            ("sigma", self.sigma.to_string()),
            ("region_side", self.region_side.to_string()),
            ("max_speed", self.max_speed.to_string()),
            ("ticks", self.ticks.to_string()),
            ("query_rate", self.query_rate.to_string()),
            ("k", self.k.to_string()),
            ("seed", self.seed.to_string()),
        ];
        if self.distribution == Distribution::Network {
            match &self.network_file {
                Some(p) => v.push(("network_file", p.display().to_string())),
                None => v.push(("network_lines", self.network_lines.to_string())),
            }
        }
        v.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

/// Reads a segment list: one `x1,y1,x2,y2` per line, `#` comments.
pub fn load_network(path: &Path) -> Result<Vec<Segment>, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| HarnessError::dataset(path, i + 1, format!("malformed segment `{line}`")))?;
        if v.len() != 4 {
            return Err(HarnessError::dataset(path, i + 1, format!("expected 4 fields, got {}", v.len())));
        }
        edges.push(Segment { a: Point::new(v[0], v[1]), b: Point::new(v[2], v[3]) });
    }
    Ok(edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auto_rule() {
        assert_eq!(ThQuad::Auto.resolve(8), 192);
        assert_eq!(ThQuad::Auto.resolve(32), 384);
        assert_eq!(ThQuad::Auto.resolve(128), 1536);
        assert_eq!(ThQuad::Auto.resolve(129), 2048);
        assert_eq!(ThQuad::Fixed(7).resolve(129), 7);
    }

    #[test]
    fn file_grammar() {
        let cfg = RunConfig::parse_str("# comment\n\n k = 8\nth_quad=64\n distribution = gaussian \nsweep_k = 1, 4,32\naudit = true\n").unwrap();
        assert_eq!(cfg.k, 8);
        assert_eq!(cfg.th_quad, ThQuad::Fixed(64));
        assert_eq!(cfg.distribution, Distribution::Gaussian);
        assert_eq!(cfg.sweep_k, vec![1, 4, 32]);
        assert!(cfg.audit);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = RunConfig::parse_str("k = 8\nbogus = 1\n").unwrap_err();
        assert_eq!(e.to_string(), "config line 2: unknown key `bogus`");
        let e = RunConfig::parse_str("k = 8\n\nk\n").unwrap_err();
        assert!(e.to_string().starts_with("config line 3:"));
        let e = RunConfig::parse_str("k = eight\n").unwrap_err();
        assert_eq!(e.to_string(), "config line 1: invalid value `eight` for `k`");
    }

    #[test]
    fn overrides_apply_in_order() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(["k=4", "th_quad=auto", "k=64"]).unwrap();
        assert_eq!(cfg.k, 64);
        assert_eq!(cfg.engine_config().th_quad, 768);
        assert!(cfg.apply_overrides(["k"]).is_err());
    }

    #[test]
    fn validation_happens_up_front() {
        let mut cfg = RunConfig::default();
        cfg.set("k", "0").unwrap();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.set("distribution", "gaussian").unwrap();
        cfg.set("hotspots", "0").unwrap();
        assert!(cfg.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }
}
