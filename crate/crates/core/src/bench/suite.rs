//! Ablation matrices: every cell runs on the same per-seed scenes, so
//! cells can be compared seed by seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{generate_scene, GenerationError, Scenario, SceneParams};
use crate::orchestrator::{run_episode, OrchestratorConfig, Protocol, Termination};
use crate::planner::PlannerBackend;

/// Axes of an ablation; the suite runs their cross product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Matrix {
    pub protocols: Vec<Protocol>,
    pub t_delay: Vec<u64>,
    pub p_omit: Vec<f64>,
    pub p_corrupt: Vec<f64>,
    pub team_sizes: Vec<usize>,
    pub scene: SceneParams,
    /// Scene seeds are `seed_offset..seed_offset + n_seeds`.
    pub seed_offset: u64,
    pub orchestrator: OrchestratorConfig,
}

impl Default for Matrix {
    fn default() -> Self {
        Self {
            protocols: vec![Protocol::R2x],
            t_delay: vec![0],
            p_omit: vec![0.0],
            p_corrupt: vec![0.0],
            team_sizes: vec![SceneParams::default().team_size],
            scene: SceneParams::default(),
            seed_offset: 0,
            orchestrator: OrchestratorConfig::default(),
        }
    }
}

/// One configuration of the matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub protocol: Protocol,
    pub t_delay: u64,
    pub p_omit: f64,
    pub p_corrupt: f64,
    pub team_size: usize,
}

impl Default for Cell {
    fn default() -> Self {
        Self { protocol: Protocol::R2x, t_delay: 0, p_omit: 0.0, p_corrupt: 0.0, team_size: 3 }
    }
}

impl Cell {
    pub fn key(&self) -> String {
        format!("{}/d{}/o{}/c{}/n{}", self.protocol, self.t_delay, self.p_omit, self.p_corrupt, self.team_size)
    }
}

impl Matrix {
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &team_size in &self.team_sizes {
            for &protocol in &self.protocols {
                for &t_delay in &self.t_delay {
                    for &p_omit in &self.p_omit {
                        for &p_corrupt in &self.p_corrupt {
                            out.push(Cell { protocol, t_delay, p_omit, p_corrupt, team_size });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), SuiteError> {
        let bad = |m: &str| Err(SuiteError::BadMatrix(m.into()));
        if self.protocols.is_empty() || self.t_delay.is_empty() || self.p_omit.is_empty() || self.p_corrupt.is_empty() || self.team_sizes.is_empty() {
            return bad("every axis needs at least one value");
        }
        if self.p_omit.iter().chain(&self.p_corrupt).any(|p| !(0.0..=1.0).contains(p)) {
            return bad("probabilities must lie in [0, 1]");
        }
        for &n in &self.team_sizes {
            SceneParams { team_size: n, ..self.scene.clone() }.validate().map_err(|e| SuiteError::BadMatrix(e.to_string()))?;
        }
        self.orchestrator.validate().map_err(|e| SuiteError::BadMatrix(e.to_string()))
    }
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub cell: String,
    pub seed: u64,
    pub protocol: Protocol,
    pub t_delay: u64,
    pub p_omit: f64,
    pub p_corrupt: f64,
    pub team_size: usize,
    pub success_truth: bool,
    pub success_belief: bool,
    pub action_steps: u64,
    pub path_length_m: f64,
    pub planner_calls: u64,
    pub token_proxy: u64,
    pub ticks: u64,
    pub fail_count: u64,
    pub termination: String,
    pub safety_violations: usize,
    /// Empty unless the episode could not be run.
    pub error: String,
}

impl EpisodeRow {
    pub fn cell(&self) -> Cell {
        Cell { protocol: self.protocol, t_delay: self.t_delay, p_omit: self.p_omit, p_corrupt: self.p_corrupt, team_size: self.team_size }
    }

    pub fn ok(&self) -> bool {
        self.error.is_empty()
    }

    fn failed(cell: &Cell, seed: u64, error: String) -> Self {
        Self {
            cell: cell.key(),
            seed,
            protocol: cell.protocol,
            t_delay: cell.t_delay,
            p_omit: cell.p_omit,
            p_corrupt: cell.p_corrupt,
            team_size: cell.team_size,
            success_truth: false,
            success_belief: false,
            action_steps: 0,
            path_length_m: 0.0,
            planner_calls: 0,
            token_proxy: 0,
            ticks: 0,
            fail_count: 0,
            termination: String::new(),
            safety_violations: 0,
            error,
        }
    }
}

/// Per-cell summary. Success counts every episode (errored ones fail);
/// averages are over episodes that ran.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub cell: Cell,
    pub key: String,
    pub episodes: usize,
    pub errors: usize,
    pub success_rate: f64,
    pub success_belief_rate: f64,
    pub avg_action_steps: f64,
    pub avg_path_length_m: f64,
    pub avg_token_proxy: f64,
    pub avg_planner_calls: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub rows: Vec<EpisodeRow>,
    pub aggregates: Vec<CellAggregate>,
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("n_seeds must be at least 1")]
    NoSeeds,
    #[error("bad matrix: {0}")]
    BadMatrix(String),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Groups rows by cell in order of first appearance.
pub fn aggregate(rows: &[EpisodeRow]) -> Vec<CellAggregate> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&EpisodeRow>> = BTreeMap::new();
    for r in rows {
        if !groups.contains_key(&r.cell) {
            order.push(r.cell.clone());
        }
        groups.entry(r.cell.clone()).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let ran = || g.iter().filter(|r| r.ok());
            let n = g.len() as f64;
            CellAggregate {
                cell: g[0].cell(),
                key,
                episodes: g.len(),
                errors: g.iter().filter(|r| !r.ok()).count(),
                success_rate: g.iter().filter(|r| r.success_truth).count() as f64 / n,
                success_belief_rate: g.iter().filter(|r| r.success_belief).count() as f64 / n,
                avg_action_steps: mean(ran().map(|r| r.action_steps as f64)),
                avg_path_length_m: mean(ran().map(|r| r.path_length_m)),
                avg_token_proxy: mean(ran().map(|r| r.token_proxy as f64)),
                avg_planner_calls: mean(ran().map(|r| r.planner_calls as f64)),
            }
        })
        .collect()
}

fn termination_name(t: Termination) -> String {
    serde_json::to_value(t).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn run_cell(scene: &Result<Scenario, GenerationError>, cell: &Cell, seed: u64, cfg: &OrchestratorConfig, backend: &PlannerBackend) -> EpisodeRow {
    let scenario = match scene {
        Ok(s) => {
            let mut s = s.clone();
            s.failure.t_delay = cell.t_delay;
            s.failure.p_omit = cell.p_omit;
            s.failure.p_corrupt = cell.p_corrupt;
            s
        }
        Err(e) => return EpisodeRow::failed(cell, seed, e.to_string()),
    };
    let cfg = OrchestratorConfig { protocol: cell.protocol, ..cfg.clone() };
    match run_episode(&scenario, &cfg, backend) {
        Ok(run) => {
            let r = run.result;
            EpisodeRow {
                success_truth: r.success_truth,
                success_belief: r.success_belief,
                action_steps: r.action_steps,
                path_length_m: r.path_length_m,
                planner_calls: r.planner_calls,
                token_proxy: r.token_proxy,
                ticks: r.ticks,
                fail_count: r.fail_count,
                termination: termination_name(r.termination),
                safety_violations: r.safety_violations.len(),
                error: String::new(),
                ..EpisodeRow::failed(cell, seed, String::new())
            }
        }
        Err(e) => EpisodeRow::failed(cell, seed, e.to_string()),
    }
}

/// Runs every cell on every seed. `jobs = None` uses rayon's default pool.
pub fn run_suite(matrix: &Matrix, n_seeds: usize, backend: &PlannerBackend, jobs: Option<usize>) -> Result<SuiteResult, SuiteError> {
    if n_seeds == 0 {
        return Err(SuiteError::NoSeeds);
    }
    matrix.validate()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build()?;
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| matrix.seed_offset + i).collect();
    let rows = pool.install(|| {
        let scenes: BTreeMap<(usize, u64), Result<Scenario, GenerationError>> = matrix
            .team_sizes
            .par_iter()
            .flat_map(|&n| seeds.par_iter().map(move |&s| (n, s)))
            .map(|(n, s)| ((n, s), generate_scene(&SceneParams { team_size: n, ..matrix.scene.clone() }, s)))
            .collect();
        let cells = matrix.cells();
        let work: Vec<(usize, u64)> = (0..cells.len()).flat_map(|c| seeds.iter().map(move |&s| (c, s))).collect();
        // Indexed collection keeps (cell, seed) order whatever finishes first.
        work.par_iter()
            .map(|&(c, s)| {
                let cell = &cells[c];
                run_cell(&scenes[&(cell.team_size, s)], cell, s, &matrix.orchestrator, backend)
            })
            .collect::<Vec<_>>()
    });
    let aggregates = aggregate(&rows);
    Ok(SuiteResult { rows, aggregates })
}

pub const CSV_FILE: &str = "episodes.csv";
pub const AGGREGATES_FILE: &str = "aggregates.json";

pub fn rows_to_csv(rows: &[EpisodeRow]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<EpisodeRow>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

/// Writes `episodes.csv`, `aggregates.json` and, if asked, one SVG bar
/// chart per metric under `plots/`.
pub fn write_suite(result: &SuiteResult, dir: &Path, plots: bool) -> Result<(), SuiteError> {
    let io_err = |p: &Path| {
        let path = p.display().to_string();
        move |source| SuiteError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_path = dir.join(CSV_FILE);
    let csv = rows_to_csv(&result.rows).map_err(|source| SuiteError::Csv { path: csv_path.display().to_string(), source })?;
    fs::write(&csv_path, csv).map_err(io_err(&csv_path))?;
    let agg_path = dir.join(AGGREGATES_FILE);
    let mut json = serde_json::to_string_pretty(&result.aggregates).expect("aggregates serialize");
    json.push('\n');
    fs::write(&agg_path, json).map_err(io_err(&agg_path))?;
    if plots {
        let plot_dir = dir.join("plots");
        fs::create_dir_all(&plot_dir).map_err(io_err(&plot_dir))?;
        let metrics: [(&str, fn(&CellAggregate) -> f64); 4] = [
            ("success_rate", |a| a.success_rate),
            ("avg_path_length_m", |a| a.avg_path_length_m),
            ("avg_action_steps", |a| a.avg_action_steps),
            ("avg_token_proxy", |a| a.avg_token_proxy),
        ];
        for (name, f) in metrics {
            let bars: Vec<(String, f64)> = result.aggregates.iter().map(|a| (a.key.clone(), f(a))).collect();
            let p = plot_dir.join(format!("{name}.svg"));
            fs::write(&p, bar_chart(name, &bars)).map_err(io_err(&p))?;
        }
    }
    Ok(())
}

/// Minimal vertical bar chart.
pub fn bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let (bw, gap, h, top, bottom) = (48.0, 16.0, 240.0, 40.0, 140.0);
    let width = gap + bars.len() as f64 * (bw + gap);
    let max = bars.iter().map(|b| b.1).fold(0.0f64, f64::max).max(1e-9);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{}" font-family="sans-serif" font-size="11">"#,
        top + h + bottom
    );
    let _ = writeln!(s, r#"<text x="{gap}" y="20" font-size="14">{title}</text>"#);
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = gap + i as f64 * (bw + gap);
        let bh = h * v / max;
        let y = top + h - bh;
        let _ = writeln!(s, r##"<rect x="{x}" y="{y:.2}" width="{bw}" height="{bh:.2}" fill="#4a7ab5"/>"##);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.2}" text-anchor="middle">{v:.3}</text>"#, x + bw / 2.0, y - 4.0);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" transform="rotate(60 {:.1} {:.1})">{label}</text>"#,
            x + 4.0,
            top + h + 12.0,
            x + 4.0,
            top + h + 12.0
        );
    }
    s.push_str("</svg>\n");
    s
}
