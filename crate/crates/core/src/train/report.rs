use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iter: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub gaussians: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainEvent {
    Init,
    Prune { removed: usize, quota: usize },
    Densify { added: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRecord {
    pub iter: usize,
    pub count: usize,
    pub event: TrainEvent,
}

/// Wall-clock seconds per phase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total: f64,
    pub forward: f64,
    pub backward: f64,
    pub adaptive: f64,
    pub eval: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub evals: Vec<EvalRecord>,
    /// Gaussian count after initialisation and after every event.
    pub counts: Vec<CountRecord>,
    /// Loss per iteration.
    pub losses: Vec<f64>,
    /// Display-space PSNR of each iteration's training view.
    pub train_psnr: Vec<f64>,
    pub timings: Timings,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine<'a> {
    Count(&'a CountRecord),
    Eval(&'a EvalRecord),
}

impl TrainReport {
    pub fn final_count(&self) -> Option<usize> {
        self.counts.last().map(|c| c.count)
    }

    pub fn last_eval(&self) -> Option<&EvalRecord> {
        self.evals.last()
    }

    /// Count and eval records as JSON lines, ordered by iteration.
    pub fn log_lines(&self) -> String {
        let mut items: Vec<(usize, u8, String)> = Vec::new();
        for c in &self.counts {
            items.push((c.iter, 0, serde_json::to_string(&LogLine::Count(c)).expect("serialisable")));
        }
        for e in &self.evals {
            items.push((e.iter, 1, serde_json::to_string(&LogLine::Eval(e)).expect("serialisable")));
        }
        items.sort_by_key(|(i, k, _)| (*i, *k));
        items.into_iter().map(|(_, _, s)| s + "\n").collect()
    }

    /// Summary document without the per-iteration series.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "iterations": self.losses.len(),
            "final_loss": self.losses.last(),
            "final_gaussians": self.final_count(),
            "final_eval": self.last_eval(),
            "counts": self.counts,
            "evals": self.evals,
            "timings": self.timings,
        })
    }
}
