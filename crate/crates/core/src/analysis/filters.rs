use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Rng, Vector};
use crate::model::TrainedModel;
use crate::sparse_coding::Dictionary;

/// Statistic compared against the threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// Standard deviation of the activation across the test set.
    Std,
    /// Largest absolute activation over the test set.
    Max,
}

/// What counts as a unit's activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationSource {
    PosteriorMean,
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterGroup {
    Active,
    Noise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyOptions {
    pub threshold: f64,
    pub criterion: Criterion,
    pub source: ActivationSource,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            threshold: 0.5,
            criterion: Criterion::Std,
            source: ActivationSource::PosteriorMean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterStat {
    pub index: usize,
    pub l2_norm: f64,
    pub activation_std: f64,
    pub activation_max_abs: f64,
    pub group: FilterGroup,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub model: String,
    pub threshold: f64,
    pub criterion: Criterion,
    pub source: ActivationSource,
    pub test_samples: usize,
    pub active_count: usize,
    pub noise_count: usize,
    pub filters: Vec<FilterStat>,
}

impl FilterReport {
    pub fn indices(&self, group: FilterGroup) -> Vec<usize> {
        self.filters
            .iter()
            .filter(|f| f.group == group)
            .map(|f| f.index)
            .collect()
    }
}

/// Splits decoder columns into active and noise groups by thresholding a
/// per-unit activation statistic over the test set.
pub fn classify_filters(
    model: &TrainedModel,
    testset: &[Vector],
    opts: &ClassifyOptions,
    rng: &mut Rng,
) -> Result<FilterReport> {
    if testset.is_empty() {
        return Err(Error::invalid("classify_filters needs a nonempty test set"));
    }
    let codes: Vec<Vector> = match opts.source {
        ActivationSource::PosteriorMean => testset
            .par_iter()
            .map(|x| model.code_mean(x))
            .collect::<Result<_>>()?,
        ActivationSource::Sampled => testset
            .iter()
            .map(|x| model.code_sample(x, rng))
            .collect::<Result<_>>()?,
    };
    let norms = model.dict().column_norms();
    Ok(classify_codes(model.kind().as_str(), &codes, &norms, opts))
}

pub(crate) fn classify_codes(
    model: &str,
    codes: &[Vector],
    norms: &[f64],
    opts: &ClassifyOptions,
) -> FilterReport {
    let n = norms.len();
    let count = codes.len() as f64;
    let mut sum = vec![0.0; n];
    let mut max_abs = vec![0.0f64; n];
    for c in codes {
        for i in 0..n {
            sum[i] += c[i];
            max_abs[i] = max_abs[i].max(c[i].abs());
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let mut sq = vec![0.0; n];
    for c in codes {
        for i in 0..n {
            sq[i] += (c[i] - mean[i]).powi(2);
        }
    }
    let filters: Vec<FilterStat> = (0..n)
        .map(|i| {
            let std = (sq[i] / count).sqrt();
            let stat = match opts.criterion {
                Criterion::Std => std,
                Criterion::Max => max_abs[i],
            };
            FilterStat {
                index: i,
                l2_norm: norms[i],
                activation_std: std,
                activation_max_abs: max_abs[i],
                group: if stat < opts.threshold {
                    FilterGroup::Noise
                } else {
                    FilterGroup::Active
                },
            }
        })
        .collect();
    let active_count = filters.iter().filter(|f| f.group == FilterGroup::Active).count();
    FilterReport {
        model: model.to_string(),
        threshold: opts.threshold,
        criterion: opts.criterion,
        source: opts.source,
        test_samples: codes.len(),
        active_count,
        noise_count: n - active_count,
        filters,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub count: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl GroupSummary {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        let k = v.len();
        let median = if k % 2 == 1 {
            v[k / 2]
        } else {
            0.5 * (v[k / 2 - 1] + v[k / 2])
        };
        Some(GroupSummary {
            count: k,
            min: v[0],
            median,
            max: v[k - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub norms: Vec<f64>,
    pub all: Option<GroupSummary>,
    pub active: Option<GroupSummary>,
    pub noise: Option<GroupSummary>,
}

/// Column norms of the dictionary, summarized per group when a report is given.
pub fn filter_norm_stats(dict: &Dictionary, report: Option<&FilterReport>) -> NormStats {
    let norms = dict.column_norms();
    let group = |g: FilterGroup| {
        report.and_then(|r| {
            let vals: Vec<f64> = r
                .filters
                .iter()
                .filter(|f| f.group == g)
                .map(|f| norms[f.index])
                .collect();
            GroupSummary::of(&vals)
        })
    };
    NormStats {
        all: GroupSummary::of(&norms),
        active: group(FilterGroup::Active),
        noise: group(FilterGroup::Noise),
        norms,
    }
}
