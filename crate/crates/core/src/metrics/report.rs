use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean and standard error of the mean (sample standard deviation with an
/// `n - 1` denominator, divided by `sqrt(n)`; zero for a single value).
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("cannot aggregate an empty list"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("cannot aggregate non-finite values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub metric_name: String,
    pub per_item: Vec<(String, f64)>,
    pub mean: f64,
    pub stderr: f64,
}

impl ScoreReport {
    pub fn new(metric_name: impl Into<String>, per_item: Vec<(String, f64)>) -> Result<Self> {
        let values: Vec<f64> = per_item.iter().map(|(_, v)| *v).collect();
        let (mean, stderr) = aggregate(&values)?;
        Ok(ScoreReport {
            metric_name: metric_name.into(),
            per_item,
            mean,
            stderr,
        })
    }

    pub fn len(&self) -> usize {
        self.per_item.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_item.is_empty()
    }
}
