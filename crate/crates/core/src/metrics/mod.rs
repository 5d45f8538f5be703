//! Caption quality metrics and their correlation with human judgments.

mod clip_score;
mod files;
mod kendall;
mod metric;
mod pearson;
mod recall;
mod report;

pub use clip_score::{
    aclip_s, aclip_s_aligned, harmonic_mean, ref_aclip_s, ref_aclip_s_aligned, reference_similarity, ReferenceSet,
};
pub use files::{
    attach_metrics, metric_column, parse_judgments, parse_metric_csv, read_judgments, read_metric_csv, Judgment,
    MetricColumns,
};
pub use kendall::{kendall_tau_b, kendall_tau_c, pair_counts, PairCounts};
pub use metric::{builtin_metric, AClipS, CaptionMetric, ExternalScores, RefAClipS, ScoreInput};
pub use pearson::{pearson, pearson_matrix, CorrelationMatrix};
pub use recall::recall_at_k;
pub use report::{aggregate, ScoreReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauVariant {
    B,
    C,
}

impl std::str::FromStr for TauVariant {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "b" | "tau_b" | "tau-b" => Ok(TauVariant::B),
            "c" | "tau_c" | "tau-c" => Ok(TauVariant::C),
            other => Err(crate::Error::InvalidArgument(format!("unknown tau variant {other:?}"))),
        }
    }
}

pub fn kendall_tau(x: &[f64], y: &[f64], variant: TauVariant) -> crate::Result<f64> {
    match variant {
        TauVariant::B => kendall_tau_b(x, y),
        TauVariant::C => kendall_tau_c(x, y),
    }
}
