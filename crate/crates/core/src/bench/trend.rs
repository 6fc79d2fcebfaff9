//! Directional hypotheses over suite results, checked with paired sign tests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use super::{Cell, EpisodeRow, SuiteResult};
use crate::orchestrator::Protocol;

pub const ALPHA: f64 = 0.05;
pub const MIN_SEEDS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    /// Pairs where the first value is smaller.
    pub better: usize,
    pub worse: usize,
    pub ties: usize,
    /// One-sided: P(at least `better` of the untied pairs favour the first | no effect).
    pub p_value: f64,
}

/// Paired sign test of "first < second".
pub fn sign_test(pairs: &[(f64, f64)]) -> SignTest {
    let better = pairs.iter().filter(|(a, b)| a < b).count();
    let worse = pairs.iter().filter(|(a, b)| a > b).count();
    let ties = pairs.len() - better - worse;
    let n = (better + worse) as u64;
    let p_value = if n == 0 || better == 0 {
        1.0
    } else {
        let bin = Binomial::new(0.5, n).expect("valid binomial");
        1.0 - bin.cdf(better as u64 - 1)
    };
    SignTest { better, worse, ties, p_value }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Success,
    PathLength,
    ActionSteps,
    TokenProxy,
}

impl Metric {
    pub fn of(self, r: &EpisodeRow) -> f64 {
        match self {
            Metric::Success => f64::from(u8::from(r.success_truth)),
            Metric::PathLength => r.path_length_m,
            Metric::ActionSteps => r.action_steps as f64,
            Metric::TokenProxy => r.token_proxy as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hypothesis {
    /// mean(lo) < mean(hi); with `paired`, also a sign test below alpha.
    Less { metric: Metric, lo: Cell, hi: Cell, paired: bool },
    /// |mean(a) − mean(b)| ≤ tol.
    Within { metric: Metric, a: Cell, b: Cell, tol: f64 },
    /// Means never decrease along `cells`; with `strict_ends`, the first is
    /// below the last with a significant sign test.
    NonDecreasing { metric: Metric, cells: Vec<Cell>, strict_ends: bool },
    /// Means never increase along `cells`, and the last is at least
    /// `min_drop` below the first.
    NonIncreasing { metric: Metric, cells: Vec<Cell>, min_drop: f64 },
    /// Every cell's mean is at least `fraction` of the reference mean.
    AtLeastFraction { metric: Metric, cells: Vec<Cell>, reference: Cell, fraction: f64 },
}

impl Hypothesis {
    fn cells(&self) -> Vec<&Cell> {
        match self {
            Hypothesis::Less { lo, hi, .. } => vec![lo, hi],
            Hypothesis::Within { a, b, .. } => vec![a, b],
            Hypothesis::NonDecreasing { cells, .. } | Hypothesis::NonIncreasing { cells, .. } => cells.iter().collect(),
            Hypothesis::AtLeastFraction { cells, reference, .. } => cells.iter().chain([reference]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub name: String,
    pub hypotheses: Vec<Hypothesis>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisOutcome {
    pub hypothesis: Hypothesis,
    pub pass: bool,
    /// Per-cell means in the hypothesis' cell order.
    pub means: Vec<f64>,
    /// Last mean minus first (the effect size).
    pub effect: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign_test: Option<SignTest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum TrendStatus {
    Pass,
    Fail,
    InsufficientData(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendOutcome {
    pub name: String,
    pub status: TrendStatus,
    pub hypotheses: Vec<HypothesisOutcome>,
}

/// Per-seed metric values of one cell (episodes that ran).
fn series(result: &SuiteResult, cell: &Cell, metric: Metric) -> BTreeMap<u64, f64> {
    let key = cell.key();
    result.rows.iter().filter(|r| r.cell == key && r.ok()).map(|r| (r.seed, metric.of(r))).collect()
}

fn mean(s: &BTreeMap<u64, f64>) -> f64 {
    if s.is_empty() {
        0.0
    } else {
        s.values().sum::<f64>() / s.len() as f64
    }
}

fn paired(a: &BTreeMap<u64, f64>, b: &BTreeMap<u64, f64>) -> SignTest {
    let pairs: Vec<(f64, f64)> = a.iter().filter_map(|(s, x)| b.get(s).map(|y| (*x, *y))).collect();
    sign_test(&pairs)
}

fn check(result: &SuiteResult, h: &Hypothesis) -> HypothesisOutcome {
    let (metric, cells) = match h {
        Hypothesis::Less { metric, .. }
        | Hypothesis::Within { metric, .. }
        | Hypothesis::NonDecreasing { metric, .. }
        | Hypothesis::NonIncreasing { metric, .. }
        | Hypothesis::AtLeastFraction { metric, .. } => (*metric, h.cells()),
    };
    let data: Vec<BTreeMap<u64, f64>> = cells.iter().map(|c| series(result, c, metric)).collect();
    let means: Vec<f64> = data.iter().map(mean).collect();
    let effect = means.last().copied().unwrap_or(0.0) - means.first().copied().unwrap_or(0.0);
    let mut sign = None;
    let pass = match h {
        Hypothesis::Less { paired: p, .. } => {
            let t = paired(&data[0], &data[1]);
            sign = Some(t);
            means[0] < means[1] && (!p || t.p_value < ALPHA)
        }
        Hypothesis::Within { tol, .. } => (means[0] - means[1]).abs() <= tol + 1e-12,
        Hypothesis::NonDecreasing { strict_ends, .. } => {
            let mono = means.windows(2).all(|w| w[0] <= w[1] + 1e-12);
            if *strict_ends {
                let t = paired(&data[0], &data[data.len() - 1]);
                sign = Some(t);
                mono && means[0] < means[means.len() - 1] && t.p_value < ALPHA
            } else {
                mono
            }
        }
        Hypothesis::NonIncreasing { min_drop, .. } => {
            means.windows(2).all(|w| w[0] + 1e-12 >= w[1]) && means[0] - means[means.len() - 1] >= min_drop - 1e-12
        }
        Hypothesis::AtLeastFraction { fraction, .. } => {
            let reference = means[means.len() - 1];
            means[..means.len() - 1].iter().all(|m| *m + 1e-12 >= fraction * reference)
        }
    };
    HypothesisOutcome { hypothesis: h.clone(), pass, means, effect, sign_test: sign }
}

/// Evaluates one trend; every referenced cell needs `min_seeds` episodes.
pub fn evaluate(result: &SuiteResult, trend: &Trend, min_seeds: usize) -> TrendOutcome {
    for h in &trend.hypotheses {
        for c in h.cells() {
            let n = series(result, c, Metric::Success).len();
            if n < min_seeds {
                return TrendOutcome {
                    name: trend.name.clone(),
                    status: TrendStatus::InsufficientData(format!("cell {} has {n} episodes, need {min_seeds}", c.key())),
                    hypotheses: Vec::new(),
                };
            }
        }
    }
    let hypotheses: Vec<HypothesisOutcome> = trend.hypotheses.iter().map(|h| check(result, h)).collect();
    let status = if hypotheses.iter().all(|h| h.pass) { TrendStatus::Pass } else { TrendStatus::Fail };
    TrendOutcome { name: trend.name.clone(), status, hypotheses }
}

fn at(protocol: Protocol) -> Cell {
    Cell { protocol, ..Cell::default() }
}

/// The trends the benchmark is expected to reproduce, over the default
/// cell (R2X, no delay or faults, three robots).
pub fn registered_trends() -> Vec<Trend> {
    let base = Cell::default();
    let t = |name: &str, hypotheses: Vec<Hypothesis>| Trend { name: name.into(), hypotheses };
    vec![
        t(
            "protocol_success",
            vec![
                Hypothesis::Less { metric: Metric::Success, lo: at(Protocol::Ir), hi: at(Protocol::R2r), paired: false },
                Hypothesis::Within { metric: Metric::Success, a: at(Protocol::R2r), b: at(Protocol::R2x), tol: 0.05 },
            ],
        ),
        t(
            "protocol_path",
            vec![
                Hypothesis::Less { metric: Metric::PathLength, lo: at(Protocol::R2x), hi: at(Protocol::R2r), paired: true },
                Hypothesis::Less { metric: Metric::PathLength, lo: at(Protocol::R2r), hi: at(Protocol::Ir), paired: true },
            ],
        ),
        t(
            "token_proxy",
            vec![Hypothesis::Less { metric: Metric::TokenProxy, lo: at(Protocol::R2x), hi: at(Protocol::R2r), paired: true }],
        ),
        t(
            "latency",
            vec![Hypothesis::NonDecreasing {
                metric: Metric::PathLength,
                cells: [0, 5, 10].map(|t_delay| Cell { t_delay, ..base }).to_vec(),
                strict_ends: true,
            }],
        ),
        t(
            "omission",
            vec![
                Hypothesis::Within { metric: Metric::Success, a: base, b: Cell { p_omit: 1.0, ..base }, tol: 0.05 },
                Hypothesis::Less { metric: Metric::PathLength, lo: base, hi: Cell { p_omit: 1.0, ..base }, paired: true },
            ],
        ),
        t(
            "corruption",
            vec![Hypothesis::NonIncreasing {
                metric: Metric::Success,
                cells: [0.0, 0.25, 0.5, 1.0].map(|p_corrupt| Cell { p_corrupt, ..base }).to_vec(),
                min_drop: 0.20,
            }],
        ),
        t(
            "team_size",
            vec![
                Hypothesis::NonDecreasing {
                    metric: Metric::PathLength,
                    cells: (2..=6).map(|team_size| Cell { team_size, ..base }).collect(),
                    strict_ends: false,
                },
                Hypothesis::AtLeastFraction {
                    metric: Metric::Success,
                    cells: (2..=5).map(|team_size| Cell { team_size, ..base }).collect(),
                    reference: Cell { team_size: 3, ..base },
                    fraction: 0.9,
                },
            ],
        ),
    ]
}

/// Every registered trend against `result`.
pub fn trend_report(result: &SuiteResult) -> Vec<TrendOutcome> {
    registered_trends().iter().map(|t| evaluate(result, t, MIN_SEEDS)).collect()
}
