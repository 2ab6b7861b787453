use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square count matrix; rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    rows: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            rows: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Metrics("confusion matrix must be square and non-empty".into()));
        }
        Ok(ConfusionMatrix { rows })
    }

    pub fn n_classes(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.rows
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.rows[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.rows.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.rows.len()).map(|i| self.rows[i][i]).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n_classes() != self.n_classes() {
            return Err(Error::Metrics(format!(
                "cannot pool {}-class and {}-class matrices",
                self.n_classes(),
                other.n_classes()
            )));
        }
        for (a, b) in self.rows.iter_mut().zip(&other.rows) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub war: f64,
    pub uar: f64,
    /// Classes with no test samples, left out of the UAR mean.
    pub absent_classes: Vec<usize>,
}

/// WAR is overall accuracy; UAR is the mean per-class recall over classes
/// that occur in the matrix.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Metrics("confusion matrix is all zeros".into()));
    }
    let war = cm.correct() as f64 / total as f64;
    let mut recalls = Vec::new();
    let mut absent_classes = Vec::new();
    for (i, row) in cm.rows().iter().enumerate() {
        let n: u64 = row.iter().sum();
        if n == 0 {
            absent_classes.push(i);
        } else {
            recalls.push(row[i] as f64 / n as f64);
        }
    }
    if !absent_classes.is_empty() {
        log::warn!("classes {absent_classes:?} have no samples; excluded from UAR");
    }
    let uar = recalls.iter().sum::<f64>() / recalls.len() as f64;
    Ok(Metrics {
        war,
        uar,
        absent_classes,
    })
}
