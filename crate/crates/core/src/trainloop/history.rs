use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::DomainId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    /// Domain-weighted batch loss.
    pub loss: f64,
    /// Domain weights in force during the step.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightUpdate {
    pub step: u64,
    /// Windowed mean loss per domain that drove the update.
    pub losses: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    /// NDCG@10 per validated domain.
    pub per_domain: Vec<(DomainId, f64)>,
    /// The model-selection score; higher is better.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub epoch: usize,
    pub step: u64,
    pub validation: Validation,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub n_domains: usize,
    pub steps: Vec<StepRecord>,
    pub updates: Vec<WeightUpdate>,
    pub validations: Vec<ValidationRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: Option<usize>,
    pub best_score: Option<f64>,
}

/// Compact view written next to the CSV files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub stopped_epoch: usize,
    pub best_epoch: Option<usize>,
    pub best_score: Option<f64>,
    pub final_loss: Option<f64>,
    pub final_weights: Vec<f64>,
    pub validations: Vec<ValidationRecord>,
}

fn weight_header(prefix: &str, n: usize) -> String {
    (1..=n).map(|i| format!(",{prefix}_{i}")).collect()
}

fn cells(values: &[f64]) -> String {
    values.iter().map(|v| format!(",{v}")).collect()
}

impl TrainHistory {
    pub fn summary(&self) -> TrainSummary {
        TrainSummary {
            steps: self.steps.last().map_or(0, |s| s.step),
            stopped_epoch: self.stopped_epoch,
            best_epoch: self.best_epoch,
            best_score: self.best_score,
            final_loss: self.steps.last().map(|s| s.loss),
            final_weights: self.steps.last().map(|s| s.weights.clone()).unwrap_or_default(),
            validations: self.validations.clone(),
        }
    }

    /// `step,loss,w_1..w_N`, one row per optimizer step.
    pub fn steps_csv(&self) -> String {
        let mut out = format!("step,loss{}\n", weight_header("w", self.n_domains));
        for s in &self.steps {
            let _ = writeln!(out, "{},{}{}", s.step, s.loss, cells(&s.weights));
        }
        out
    }

    /// `step,w_1..w_N,loss_1..loss_N`, one row per weight update.
    pub fn updates_csv(&self) -> String {
        let mut out = format!(
            "step{}{}\n",
            weight_header("w", self.n_domains),
            weight_header("loss", self.n_domains)
        );
        for u in &self.updates {
            let _ = writeln!(out, "{}{}{}", u.step, cells(&u.weights), cells(&u.losses));
        }
        out
    }

    /// `epoch,step,score,domain,ndcg@10`, one row per validated domain.
    pub fn validations_csv(&self) -> String {
        let mut out = "epoch,step,score,domain,ndcg@10\n".to_string();
        for v in &self.validations {
            for (d, m) in &v.validation.per_domain {
                let _ = writeln!(out, "{},{},{},{},{}", v.epoch, v.step, v.validation.score, d.0, m);
            }
        }
        out
    }
}
