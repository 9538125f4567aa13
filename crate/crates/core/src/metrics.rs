//! Imputation and prediction metrics, and rank aggregation.

use std::collections::BTreeMap;

use crate::data::Mask;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn missing_pairs(x: &Tensor, x_hat: &Tensor, m: &Mask) -> Result<Vec<(f64, f64)>> {
    if x.shape() != x_hat.shape() {
        return Err(Error::shape("metric", x.shape(), x_hat.shape()));
    }
    m.check_shape(x.rows(), x.cols())?;
    Ok(m.known()
        .iter()
        .enumerate()
        .filter(|(_, &k)| !k)
        .map(|(i, _)| (x.data()[i], x_hat.data()[i]))
        .collect())
}

/// Mean squared error over the missing entries only.
pub fn mse_missing(x: &Tensor, x_hat: &Tensor, m: &Mask) -> Result<f64> {
    let pairs = missing_pairs(x, x_hat, m)?;
    if pairs.is_empty() {
        return Err(Error::UndefinedMetric("MSE over an empty set of missing entries".into()));
    }
    Ok(pairs.iter().map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pairs.len() as f64)
}

/// Pearson correlation between true and imputed values over the missing entries.
pub fn pearson_missing(x: &Tensor, x_hat: &Tensor, m: &Mask) -> Result<f64> {
    let pairs = missing_pairs(x, x_hat, m)?;
    if pairs.len() < 2 {
        return Err(Error::UndefinedMetric("Pearson correlation needs two missing entries".into()));
    }
    let n = pairs.len() as f64;
    let (ma, mb) = (
        pairs.iter().map(|p| p.0).sum::<f64>() / n,
        pairs.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &(a, b) in &pairs {
        sab += (a - ma) * (b - mb);
        saa += (a - ma) * (a - ma);
        sbb += (b - mb) * (b - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedMetric("Pearson correlation with zero variance".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn check_lengths(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::shape("metric", &[y.len()], &[y_hat.len()]));
    }
    if y.is_empty() {
        return Err(Error::UndefinedMetric("metric of an empty input".into()));
    }
    Ok(())
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    Ok((y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64).sqrt())
}

/// Fraction of exactly matching labels.
pub fn accuracy(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    Ok(y.iter().zip(y_hat).filter(|(a, b)| a == b).count() as f64 / y.len() as f64)
}

/// Scores of every method under one setting.
#[derive(Clone, Debug, PartialEq)]
pub struct SettingScores {
    pub setting: String,
    pub scores: Vec<(String, f64)>,
}

/// Aggregate rank of one method.
#[derive(Clone, Debug, PartialEq)]
pub struct RankRow {
    pub method: String,
    pub mean: f64,
    pub std: f64,
}

/// Ranks 1..n within each setting (1 = best, ties share their average rank),
/// then the mean and population standard deviation per method across
/// settings. Rows are sorted by method name.
pub fn rank_table(settings: &[SettingScores], lower_is_better: bool) -> Result<Vec<RankRow>> {
    let Some(first) = settings.first() else {
        return Err(Error::InvalidArgument("rank table of no settings".into()));
    };
    let mut methods: Vec<&str> = first.scores.iter().map(|(m, _)| m.as_str()).collect();
    methods.sort_unstable();
    if methods.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(format!("duplicate method in setting {}", first.setting)));
    }
    let mut ranks: BTreeMap<&str, Vec<f64>> = methods.iter().map(|&m| (m, Vec::new())).collect();
    for s in settings {
        let mut these: Vec<&str> = s.scores.iter().map(|(m, _)| m.as_str()).collect();
        these.sort_unstable();
        if these != methods {
            return Err(Error::InvalidArgument(format!(
                "setting {} has methods {these:?}, expected {methods:?}",
                s.setting
            )));
        }
        if let Some((m, _)) = s.scores.iter().find(|(_, v)| v.is_nan()) {
            return Err(Error::InvalidArgument(format!("{m} has no score in setting {}", s.setting)));
        }
        let mut order: Vec<&(String, f64)> = s.scores.iter().collect();
        order.sort_by(|a, b| {
            let o = a.1.total_cmp(&b.1);
            if lower_is_better {
                o
            } else {
                o.reverse()
            }
        });
        let mut i = 0;
        while i < order.len() {
            let j = i + order[i..].iter().take_while(|p| p.1 == order[i].1).count();
            let rank = (i + 1 + j) as f64 / 2.0;
            for p in &order[i..j] {
                ranks.get_mut(p.0.as_str()).unwrap().push(rank);
            }
            i = j;
        }
    }
    Ok(ranks
        .into_iter()
        .map(|(m, r)| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            RankRow {
                method: m.to_string(),
                mean,
                std: var.sqrt(),
            }
        })
        .collect())
}
