use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        Some(self.values[i][j])
    }
}

/// Pearson correlation between two equal-length series.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let m = pearson_matrix(&[("x".to_string(), x.to_vec()), ("y".to_string(), y.to_vec())])?;
    Ok(m.values[0][1])
}

/// Pairwise Pearson correlations between named columns of equal length.
pub fn pearson_matrix(columns: &[(String, Vec<f64>)]) -> Result<CorrelationMatrix> {
    if columns.is_empty() {
        return Err(Error::Empty("no columns to correlate"));
    }
    let n = columns[0].1.len();
    if n < 2 {
        return Err(Error::InvalidArgument("correlation needs at least two observations".into()));
    }
    let mut centered = Vec::with_capacity(columns.len());
    for (c, (name, col)) in columns.iter().enumerate() {
        if col.len() != n {
            return Err(Error::CountMismatch {
                left: n,
                right: col.len(),
            });
        }
        if let Some(row) = col.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row, col: c });
        }
        let mean = col.iter().sum::<f64>() / n as f64;
        let dev: Vec<f64> = col.iter().map(|v| v - mean).collect();
        let ss = dev.iter().map(|v| v * v).sum::<f64>();
        if ss == 0.0 {
            return Err(Error::Degenerate(format!("column {name:?} is constant")));
        }
        centered.push((dev, ss));
    }
    let k = columns.len();
    let mut values = vec![vec![0.0; k]; k];
    for i in 0..k {
        values[i][i] = 1.0;
        for j in i + 1..k {
            let (a, sa) = &centered[i];
            let (b, sb) = &centered[j];
            let r = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (sa * sb).sqrt();
            let r = r.clamp(-1.0, 1.0);
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        names: columns.iter().map(|(n, _)| n.clone()).collect(),
        values,
    })
}
