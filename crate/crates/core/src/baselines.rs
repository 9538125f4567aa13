//! Non-learned column imputers.

use std::fmt;
use std::str::FromStr;

use crate::data::Mask;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    Mean,
    Median,
    Mode,
    Const0,
    Const1,
    Locf,
    Nocb,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 7] = [
        BaselineKind::Mean,
        BaselineKind::Median,
        BaselineKind::Mode,
        BaselineKind::Const0,
        BaselineKind::Const1,
        BaselineKind::Locf,
        BaselineKind::Nocb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Mean => "mean",
            BaselineKind::Median => "median",
            BaselineKind::Mode => "mode",
            BaselineKind::Const0 => "const0",
            BaselineKind::Const1 => "const1",
            BaselineKind::Locf => "locf",
            BaselineKind::Nocb => "nocb",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown baseline {s:?}")))
    }
}

fn column(x: &Tensor, c: usize) -> Vec<f64> {
    (0..x.rows()).map(|r| x.at(r, c)).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Most frequent exact value; the smallest wins ties.
fn mode(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let (mut best, mut best_n) = (s[0], 0);
    let mut i = 0;
    while i < s.len() {
        let j = i + s[i..].iter().take_while(|&&x| x == s[i]).count();
        if j - i > best_n {
            best = s[i];
            best_n = j - i;
        }
        i = j;
    }
    best
}

/// Fills the missing entries of `x_obs` column by column.
///
/// Mean, median and mode come from the complete `context` table (the
/// training split). LOCF carries the last observed value above downwards,
/// NOCB carries the next observed value below upwards; a gap with no such
/// value falls back to the context mean. NOCB fails on a column with no
/// observed value at all.
pub fn baseline_impute(kind: BaselineKind, x_obs: &Tensor, mask: &Mask, context: &Tensor) -> Result<Tensor> {
    if x_obs.rank() != 2 {
        return Err(Error::InvalidShape {
            shape: x_obs.shape().to_vec(),
            reason: "observations must be [rows, k]".into(),
        });
    }
    mask.check_shape(x_obs.rows(), x_obs.cols())?;
    if context.rank() != 2 || context.cols() != x_obs.cols() || context.rows() == 0 {
        return Err(Error::InvalidShape {
            shape: context.shape().to_vec(),
            reason: format!("context must be a non-empty table with {} columns", x_obs.cols()),
        });
    }
    context.ensure_finite("baseline context")?;
    let (n, k) = (x_obs.rows(), x_obs.cols());
    let mut out = x_obs.clone();
    for c in 0..k {
        let ctx = column(context, c);
        let known = |r: usize| mask.is_known(r, c);
        match kind {
            BaselineKind::Mean | BaselineKind::Median | BaselineKind::Mode | BaselineKind::Const0 | BaselineKind::Const1 => {
                let fill = match kind {
                    BaselineKind::Mean => mean(&ctx),
                    BaselineKind::Median => median(&ctx),
                    BaselineKind::Mode => mode(&ctx),
                    BaselineKind::Const0 => 0.0,
                    _ => 1.0,
                };
                for r in (0..n).filter(|&r| !known(r)) {
                    out.set(r, c, fill);
                }
            }
            BaselineKind::Locf => {
                let mut last = None;
                for r in 0..n {
                    if known(r) {
                        last = Some(x_obs.at(r, c));
                    } else {
                        out.set(r, c, last.unwrap_or_else(|| mean(&ctx)));
                    }
                }
            }
            BaselineKind::Nocb => {
                if (0..n).all(|r| !known(r)) {
                    return Err(Error::InvalidArgument(format!(
                        "nocb cannot fill column {c}: it has no observed value"
                    )));
                }
                let mut next = None;
                for r in (0..n).rev() {
                    if known(r) {
                        next = Some(x_obs.at(r, c));
                    } else {
                        out.set(r, c, next.unwrap_or_else(|| mean(&ctx)));
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_mar_mask, gen_mcar_mask};
    use crate::rng::{sample_gaussian, Rng};

    fn col(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()
    }

    fn mask(v: &[bool]) -> Mask {
        Mask::new(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn fixtures() {
        let ctx = col(&[1.0, 2.0, 3.0]);
        let x = col(&[9.0, f64::NAN]);
        let m = mask(&[true, false]);
        let fill = |k| baseline_impute(k, &x, &m, &ctx).unwrap().at(1, 0);
        assert_eq!(fill(BaselineKind::Mean), 2.0);
        assert_eq!(fill(BaselineKind::Median), 2.0);
        assert_eq!(fill(BaselineKind::Const0), 0.0);
        assert_eq!(fill(BaselineKind::Const1), 1.0);
        assert_eq!(fill(BaselineKind::Locf), 9.0);
        let locf = baseline_impute(BaselineKind::Locf, &col(&[5.0, 0.0, 0.0]), &mask(&[true, false, false]), &ctx).unwrap();
        assert_eq!(locf.data(), &[5.0, 5.0, 5.0]);
        let nocb = baseline_impute(BaselineKind::Nocb, &col(&[0.0, 0.0, 4.0]), &mask(&[false, false, true]), &ctx).unwrap();
        assert_eq!(nocb.data(), &[4.0, 4.0, 4.0]);
    }

    #[test]
    fn order_statistics() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(mode(&[3.0, 1.0, 3.0, 1.0, 2.0]), 1.0);
        assert_eq!(mode(&[0.5, 0.7, 0.7]), 0.7);
        assert_eq!(mode(&[2.0, 1.0]), 1.0);
    }

    #[test]
    fn fallbacks_and_failures() {
        let ctx = col(&[1.0, 3.0]);
        let locf = baseline_impute(BaselineKind::Locf, &col(&[0.0, 7.0]), &mask(&[false, true]), &ctx).unwrap();
        assert_eq!(locf.data(), &[2.0, 7.0]);
        let nocb = baseline_impute(BaselineKind::Nocb, &col(&[7.0, 0.0]), &mask(&[true, false]), &ctx).unwrap();
        assert_eq!(nocb.data(), &[7.0, 2.0]);
        assert!(baseline_impute(BaselineKind::Nocb, &col(&[0.0, 0.0]), &mask(&[false, false]), &ctx).is_err());
        assert!(baseline_impute(BaselineKind::Mean, &col(&[0.0]), &mask(&[false]), &Tensor::zeros(&[2, 2])).is_err());
        assert_eq!("locf".parse::<BaselineKind>().unwrap(), BaselineKind::Locf);
        assert!("mice".parse::<BaselineKind>().is_err());
    }

    #[test]
    fn known_entries_untouched_and_context_only() {
        let mut rng = Rng::new(1);
        let x: Tensor = sample_gaussian(&mut rng, &[30, 4]);
        let ctx: Tensor = sample_gaussian(&mut rng, &[50, 4]);
        for m in [gen_mcar_mask(30, 4, 0.4, 2).unwrap(), gen_mar_mask(30, 4, 2, 3).unwrap()] {
            for kind in BaselineKind::ALL {
                let Ok(out) = baseline_impute(kind, &x, &m, &ctx) else {
                    assert!(kind == BaselineKind::Nocb && m.n_missing() == 60);
                    continue;
                };
                for (i, &known) in m.known().iter().enumerate() {
                    if known {
                        assert_eq!(out.data()[i], x.data()[i]);
                    }
                }
                if matches!(kind, BaselineKind::Mean | BaselineKind::Median | BaselineKind::Mode) {
                    let shifted = x.map(|v| v + 100.0);
                    let other = baseline_impute(kind, &shifted, &m, &ctx).unwrap();
                    for (i, &known) in m.known().iter().enumerate() {
                        if !known {
                            assert_eq!(other.data()[i], out.data()[i]);
                        }
                    }
                }
            }
        }
    }
}
