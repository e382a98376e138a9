use serde::{Deserialize, Serialize};

use super::{EvalError, RolloutResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode_id: u64,
    pub success: bool,
    pub oracle: bool,
    pub ne: f64,
    pub spl: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sr: f64,
    pub osr: f64,
    pub spl: f64,
    pub ne: f64,
    pub n_episodes: usize,
    pub rows: Vec<EpisodeMetrics>,
}

/// Success rate, oracle success rate, path-length-weighted success and mean
/// navigation error over a set of rollouts.
pub fn compute_metrics(results: &[RolloutResult], success_radius: f64) -> Result<MetricsReport, EvalError> {
    if !(success_radius > 0.0) {
        return Err(EvalError::Config(format!("success_radius={success_radius} must be positive")));
    }
    if results.is_empty() {
        return Err(EvalError::Config("no rollouts to score".into()));
    }
    let rows: Vec<EpisodeMetrics> = results
        .iter()
        .map(|r| {
            let success = r.stopped && r.final_dist < success_radius;
            let spl = if success {
                r.gt_path_len / r.agent_path_len.max(r.gt_path_len)
            } else {
                0.0
            };
            EpisodeMetrics {
                episode_id: r.episode_id,
                success,
                oracle: r.min_dist < success_radius,
                ne: r.final_dist,
                spl,
                steps: r.steps_taken,
            }
        })
        .collect();
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&EpisodeMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let report = MetricsReport {
        sr: mean(&|r| f64::from(u8::from(r.success))),
        osr: mean(&|r| f64::from(u8::from(r.oracle))),
        spl: mean(&|r| r.spl),
        ne: mean(&|r| r.ne),
        n_episodes: rows.len(),
        rows,
    };
    debug_assert!(report.sr <= report.osr && report.spl <= report.sr + 1e-15);
    Ok(report)
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "episode_id,S,oracle,NE,SPL,steps";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.episode_id,
                u8::from(r.success),
                u8::from(r.oracle),
                r.ne,
                r.spl,
                r.steps
            ));
        }
        s
    }

    /// Aggregates without per-episode rows.
    pub fn summary_json(&self, header: &serde_json::Value) -> serde_json::Value {
        serde_json::json!({
            "config": header,
            "SR": self.sr,
            "OSR": self.osr,
            "NE": self.ne,
            "SPL": self.spl,
            "n_episodes": self.n_episodes,
        })
    }
}
