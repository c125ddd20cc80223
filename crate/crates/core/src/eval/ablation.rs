use serde::Serialize;

use crate::config::ModelConfig;
use crate::data::dataset::ClipSet;
use crate::error::Result;
use crate::eval::{evaluate, ConfusionMatrix};
use crate::model::{ablation_variant, init_params, AblationFlags};
use crate::training::{train_model, EpochMetrics, TrainConfig};

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub flags: AblationFlags,
    pub label: String,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

impl AblationRow {
    pub fn accuracy_on(&self, classes: &[usize]) -> f64 {
        self.confusion.accuracy_on(classes)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// One line per row, flags then test accuracy in percent.
    pub fn table(&self) -> String {
        let mut out = format!("{:<14} {:>8}\n", "method", "acc (%)");
        for r in &self.rows {
            out.push_str(&format!("{:<14} {:>8.2}\n", r.label, 100.0 * r.accuracy));
        }
        out
    }
}

/// Trains and tests one model per flag set. Every variant starts from weights
/// sliced out of the same full-model initialisation and sees the same data
/// order, so accuracy differences come from the architecture alone.
pub fn run_ablation(
    config: &ModelConfig,
    flag_sets: &[AblationFlags],
    train: &ClipSet,
    val: Option<&ClipSet>,
    test: &ClipSet,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(AblationFlags, &EpochMetrics),
) -> Result<AblationReport> {
    let full = init_params::<f32>(config, cfg.seed)?;
    let mut rows = Vec::with_capacity(flag_sets.len());
    for &flags in flag_sets {
        let start = ablation_variant(&full, flags)?;
        log::info!("ablation: training {flags}");
        let state = train_model(start, train, val, cfg, &mut |m| on_epoch(flags, m))?;
        let report = evaluate(&state.params, test)?;
        rows.push(AblationRow { flags, label: flags.label(), accuracy: report.accuracy, confusion: report.confusion });
    }
    Ok(AblationReport { rows })
}
