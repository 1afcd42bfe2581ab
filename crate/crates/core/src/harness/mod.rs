//! Training, evaluation and reporting entry points behind the command line.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod plot;
pub mod train;

use config::{LossKind, RunConfig};

use crate::error::{Error, Result};
use crate::siamese::Metric;

pub const GRID_MARGINS: [f64; 4] = [0.2, 0.5, 1.0, 2.0];

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub margin: f64,
    pub metric: Metric,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

/// Train one contrastive run per margin × metric under `base.output_dir`,
/// writing `gridsearch.csv` with each run's final test figures.
pub fn cmd_gridsearch(base: &RunConfig) -> Result<Vec<GridCell>> {
    let mut cells = Vec::new();
    let mut csv = String::from("margin,metric,test_loss,test_accuracy\n");
    for &margin in &GRID_MARGINS {
        for metric in Metric::ALL {
            let mut cfg = base.clone();
            cfg.loss = LossKind::Contrastive;
            cfg.margin = margin;
            cfg.metric = metric;
            cfg.output_dir = base.output_dir.join(format!("m{margin}_{metric}"));
            let out = train::cmd_train(&cfg)?;
            let last = out.rows.last().expect("at least one epoch");
            csv.push_str(&format!("{margin},{metric},{},{}\n", last.test_loss, last.test_accuracy));
            cells.push(GridCell {
                margin,
                metric,
                test_loss: last.test_loss,
                test_accuracy: last.test_accuracy,
            });
        }
    }
    let path = base.output_dir.join("gridsearch.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(cells)
}
