//! Evaluation protocol: masks x seeds x methods, ensemble averaging,
//! downstream models and report tables.

use crate::autograd::Graph;
use crate::baselines::{baseline_impute, BaselineKind};
use crate::data::{MaskSpec, Task};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::metrics::{accuracy, mse_missing, pearson_missing, rank_table, rmse, RankRow, SettingScores};
use crate::optim::{AdamW, AdamWConfig};
use crate::params::ParamStore;
use crate::sampling::{impute, MaskedTable, SamplerOptions};
use crate::schedule::DiffusionSchedule;
use crate::tensor::Tensor;

/// A method under evaluation.
pub trait Imputer: Sync {
    fn name(&self) -> String;

    /// True if repeated calls give identical results regardless of seed.
    fn is_deterministic(&self) -> bool;

    /// Mean of `n_inferences` imputations, drawn from `seed`.
    fn impute(&self, table: &MaskedTable, n_inferences: usize, seed: u64) -> Result<Tensor>;

    /// False for settings the method cannot handle; they are left out of
    /// reports.
    fn supports(&self, _spec: &MaskSpec) -> bool {
        true
    }
}

pub struct BaselineImputer<'a> {
    pub kind: BaselineKind,
    /// Complete training table used for column statistics.
    pub context: &'a Tensor,
}

impl Imputer for BaselineImputer<'_> {
    fn name(&self) -> String {
        self.kind.name().to_string()
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn impute(&self, table: &MaskedTable, _n_inferences: usize, _seed: u64) -> Result<Tensor> {
        baseline_impute(self.kind, &table.x_obs, &table.mask, self.context)
    }

    /// NOCB has nothing to carry into a column that is missing entirely.
    fn supports(&self, spec: &MaskSpec) -> bool {
        !(self.kind == BaselineKind::Nocb && spec.is_mar())
    }
}

pub struct DiffusionImputer<'a> {
    pub name: String,
    pub model: &'a Denoiser,
    pub sched: DiffusionSchedule,
    pub opts: SamplerOptions,
}

impl<'a> DiffusionImputer<'a> {
    pub fn new(name: impl Into<String>, model: &'a Denoiser, opts: SamplerOptions) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            model,
            sched: DiffusionSchedule::cosine(opts.t_sampling)?,
            opts,
        })
    }
}

impl Imputer for DiffusionImputer<'_> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn is_deterministic(&self) -> bool {
        false
    }

    fn impute(&self, table: &MaskedTable, n_inferences: usize, seed: u64) -> Result<Tensor> {
        let opts = SamplerOptions {
            n_inferences,
            seed,
            ..self.opts.clone()
        };
        impute(self.model, table, &self.sched, &opts)
    }
}

/// Result for one (method, mask setting, mask seed).
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub method: String,
    pub spec: MaskSpec,
    pub seed: u64,
    pub mse: f64,
    /// `None` where the correlation is undefined (e.g. a constant fill).
    pub pearson: Option<f64>,
}

/// Seed of the `index`-th mask of a run seeded with `base`.
pub fn mask_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

/// Masks `x_true` with `spec` under `seed`, imputes (averaging
/// `n_inferences` runs; deterministic methods run once) and scores the
/// average. The sampler is seeded with the mask seed.
pub fn eval_cell(imputer: &dyn Imputer, x_true: &Tensor, spec: MaskSpec, seed: u64, n_inferences: usize) -> Result<EvalRow> {
    let mask = spec.generate(x_true.rows(), x_true.cols(), seed)?;
    let table = MaskedTable::new(mask.apply(x_true, f64::NAN)?, mask)?;
    let n = if imputer.is_deterministic() { 1 } else { n_inferences };
    let x_hat = imputer.impute(&table, n, seed)?;
    Ok(EvalRow {
        method: imputer.name(),
        spec,
        seed,
        mse: mse_missing(x_true, &x_hat, &table.mask)?,
        pearson: pearson_missing(x_true, &x_hat, &table.mask).ok(),
    })
}

/// [`eval_cell`] over every supported setting of `grid` and `n_mask_seeds`
/// masks each.
pub fn ensemble_eval(
    imputer: &dyn Imputer,
    x_true: &Tensor,
    grid: &[MaskSpec],
    n_mask_seeds: usize,
    n_inferences: usize,
    base_seed: u64,
) -> Result<Vec<EvalRow>> {
    if grid.is_empty() || n_mask_seeds == 0 || n_inferences == 0 {
        return Err(Error::InvalidArgument("empty evaluation grid".into()));
    }
    let mut rows = Vec::with_capacity(grid.len() * n_mask_seeds);
    for &spec in grid.iter().filter(|s| imputer.supports(s)) {
        for s in 0..n_mask_seeds {
            rows.push(eval_cell(imputer, x_true, spec, mask_seed(base_seed, s), n_inferences)?);
        }
    }
    Ok(rows)
}

/// Mean scores of one method under one setting.
#[derive(Clone, Debug, PartialEq)]
pub struct SettingSummary {
    pub method: String,
    pub spec: MaskSpec,
    pub mse: f64,
    pub pearson: Option<f64>,
    pub seeds: usize,
}

/// Collected rows of a benchmark.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Methods and settings in order of first appearance.
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    pub fn specs(&self) -> Vec<MaskSpec> {
        let mut out: Vec<MaskSpec> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.spec) {
                out.push(r.spec);
            }
        }
        out
    }

    /// Mean over seeds per (method, setting); Pearson is averaged over the
    /// seeds where it is defined.
    pub fn summary(&self) -> Vec<SettingSummary> {
        let mut out = Vec::new();
        for m in self.methods() {
            for spec in self.specs() {
                let rows: Vec<&EvalRow> = self.rows.iter().filter(|r| r.method == m && r.spec == spec).collect();
                if rows.is_empty() {
                    continue;
                }
                let p: Vec<f64> = rows.iter().filter_map(|r| r.pearson).collect();
                out.push(SettingSummary {
                    method: m.clone(),
                    spec,
                    mse: rows.iter().map(|r| r.mse).sum::<f64>() / rows.len() as f64,
                    pearson: (!p.is_empty()).then(|| p.iter().sum::<f64>() / p.len() as f64),
                    seeds: rows.len(),
                });
            }
        }
        out
    }

    /// One line per (method, setting, seed).
    pub fn rows_csv(&self) -> String {
        let mut s = String::from("method,setting,seed,mse,pearson\n");
        for r in &self.rows {
            let p = r.pearson.map_or(String::new(), |p| p.to_string());
            s.push_str(&format!("{},{},{},{},{}\n", r.method, r.spec, r.seed, r.mse, p));
        }
        s
    }

    /// Methods x settings grid of mean MSE; `/` where a method has no result.
    pub fn mse_table(&self) -> Table {
        let specs = self.specs();
        let summary = self.summary();
        let mut header = vec!["method".to_string()];
        header.extend(specs.iter().map(|s| s.to_string()));
        let rows = self
            .methods()
            .into_iter()
            .map(|m| {
                let mut row = vec![m.clone()];
                for spec in &specs {
                    row.push(
                        summary
                            .iter()
                            .find(|s| s.method == m && s.spec == *spec)
                            .map_or("/".to_string(), |s| format!("{:.4}", s.mse)),
                    );
                }
                row
            })
            .collect();
        Table { header, rows }
    }

    /// Ranks by mean MSE within each setting. Settings are grouped by
    /// mechanism; within a group only methods with a result in every
    /// setting take part.
    pub fn rank_rows(&self, mar: bool) -> Result<Vec<RankRow>> {
        let summary = self.summary();
        let specs: Vec<MaskSpec> = self.specs().into_iter().filter(|s| s.is_mar() == mar).collect();
        let methods: Vec<String> = self
            .methods()
            .into_iter()
            .filter(|m| specs.iter().all(|sp| summary.iter().any(|s| &s.method == m && s.spec == *sp)))
            .collect();
        let settings: Vec<SettingScores> = specs
            .iter()
            .map(|sp| SettingScores {
                setting: sp.to_string(),
                scores: summary
                    .iter()
                    .filter(|s| s.spec == *sp && methods.contains(&s.method))
                    .map(|s| (s.method.clone(), s.mse))
                    .collect(),
            })
            .collect();
        rank_table(&settings, true)
    }
}

/// Rank rows as a `method, Mean, Std` table.
pub fn rank_rows_table(rows: &[RankRow]) -> Table {
    Table {
        header: vec!["method".into(), "Mean".into(), "Std".into()],
        rows: rows
            .iter()
            .map(|r| vec![r.method.clone(), format!("{:.2}", r.mean), format!("{:.2}", r.std)])
            .collect(),
    }
}

/// A header row plus string cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    /// Columns padded to a common width: the first left-aligned, the rest right-aligned.
    pub fn to_aligned(&self) -> String {
        let n = self.header.len();
        let mut width = vec![0; n];
        for r in std::iter::once(&self.header).chain(&self.rows) {
            for (w, c) in width.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |r: &[String]| {
            let cells: Vec<String> = r
                .iter()
                .zip(&width)
                .enumerate()
                .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            cells.join("  ").trim_end().to_string() + "\n"
        };
        let mut s = line(&self.header);
        s.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * n.saturating_sub(1)));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&line(r));
        }
        s
    }
}

/// Fixed hyperparameters of the downstream linear model.
#[derive(Clone, Debug, PartialEq)]
pub struct DownstreamConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Ridge penalty on the weights.
    pub l2: f64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 0.05,
            l2: 1e-3,
        }
    }
}

/// Downstream score of a linear model fitted on the imputed training split:
/// RMSE (ridge regression on the standardized target) or accuracy
/// (multinomial logistic regression). Training is full-batch AdamW from
/// zero weights, so the result is deterministic.
pub fn downstream_eval(
    train_x: &Tensor,
    train_y: &[f64],
    test_x: &Tensor,
    test_y: &[f64],
    task: Task,
    cfg: &DownstreamConfig,
) -> Result<f64> {
    if train_x.rank() != 2 || test_x.rank() != 2 || train_x.cols() != test_x.cols() {
        return Err(Error::shape("downstream_eval", train_x.shape(), test_x.shape()));
    }
    if train_x.rows() != train_y.len() || test_x.rows() != test_y.len() || train_y.is_empty() {
        return Err(Error::InvalidArgument("feature and target row counts differ".into()));
    }
    train_x.ensure_finite("downstream features")?;
    test_x.ensure_finite("downstream features")?;
    let k = train_x.cols();
    let classes = if task.is_classification() {
        if train_y.iter().chain(test_y).any(|v| v.fract() != 0.0 || *v < 0.0) {
            return Err(Error::InvalidArgument("class labels must be non-negative integers".into()));
        }
        let first = train_y[0];
        if train_y.iter().all(|&v| v == first) {
            return Err(Error::InvalidArgument("degenerate labels: one class in the training split".into()));
        }
        train_y.iter().chain(test_y).fold(0.0f64, |a, &b| a.max(b)) as usize + 1
    } else {
        1
    };
    let (mu, sd) = if task.is_classification() {
        (0.0, 1.0)
    } else {
        let n = train_y.len() as f64;
        let mu = train_y.iter().sum::<f64>() / n;
        let sd = (train_y.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt();
        if sd == 0.0 {
            return Err(Error::InvalidArgument("degenerate labels: constant regression target".into()));
        }
        (mu, sd)
    };
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", Tensor::zeros(&[k, classes]))?;
    let b = store.add("b", Tensor::zeros(&[classes]))?;
    let mut opt = AdamW::new(
        &store,
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        },
    );
    let labels: Vec<usize> = train_y.iter().map(|&v| v as usize).collect();
    let target = Tensor::new(vec![train_y.len(), 1], train_y.iter().map(|v| (v - mu) / sd).collect())?;
    for _ in 0..cfg.epochs {
        let g = Graph::new();
        let (wv, bv) = (g.param(&store, w), g.param(&store, b));
        let out = g.constant(train_x.clone()).linear(wv, Some(bv));
        let fit = if task.is_classification() {
            out.cross_entropy(&labels)
        } else {
            out.sub(g.constant(target.clone())).square().mean_all()
        };
        let loss = fit.add(wv.square().sum_all().scale(cfg.l2));
        let grads = g.backward(loss)?;
        grads.accumulate_into(&mut store);
        opt.step(&mut store)?;
    }
    let pred = test_x.matmul(store.value(w))?;
    let bias = store.value(b).data();
    if task.is_classification() {
        let y_hat: Vec<f64> = (0..test_x.rows())
            .map(|r| {
                let row: Vec<f64> = (0..classes).map(|c| pred.at(r, c) + bias[c]).collect();
                let best = (0..classes).fold(0, |a, c| if row[c] > row[a] { c } else { a });
                best as f64
            })
            .collect();
        accuracy(test_y, &y_hat)
    } else {
        let y_hat: Vec<f64> = (0..test_x.rows()).map(|r| (pred.at(r, 0) + bias[0]) * sd + mu).collect();
        rmse(test_y, &y_hat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{sample_gaussian, Rng};

    struct Noisy;

    impl Imputer for Noisy {
        fn name(&self) -> String {
            "noisy".into()
        }

        fn is_deterministic(&self) -> bool {
            false
        }

        /// Observations with missing cells filled by `seed + i` for run `i`, averaged.
        fn impute(&self, table: &MaskedTable, n: usize, seed: u64) -> Result<Tensor> {
            let fill = (0..n).map(|i| (seed + i as u64) as f64 / n as f64).sum::<f64>();
            table.mask.apply(&table.x_obs, fill)
        }
    }

    #[test]
    fn averages_before_scoring() {
        let x = Tensor::new(vec![2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        // Runs fill with 7 and 8; the average 7.5 is scored, not the mean of the two MSEs.
        let row = eval_cell(&Noisy, &x, MaskSpec::Mcar(0.5), 7, 2).unwrap();
        let mask = MaskSpec::Mcar(0.5).generate(2, 2, 7).unwrap();
        let want: Vec<f64> = (0..4).filter(|&i| !mask.known()[i]).map(|i| (x.data()[i] - 7.5).powi(2)).collect();
        assert_eq!(row.mse, want.iter().sum::<f64>() / want.len() as f64);
        assert_eq!(eval_cell(&Noisy, &x, MaskSpec::Mcar(0.5), 7, 1).unwrap().mse, {
            let w: Vec<f64> = (0..4).filter(|&i| !mask.known()[i]).map(|i| (x.data()[i] - 7.0).powi(2)).collect();
            w.iter().sum::<f64>() / w.len() as f64
        });
    }

    fn data() -> Tensor {
        sample_gaussian(&mut Rng::new(1), &[60, 4])
    }

    #[test]
    fn deterministic_methods_ignore_inference_count() {
        let x = data();
        let ctx = data().map(|v| v + 0.1);
        let imp = BaselineImputer { kind: BaselineKind::Mean, context: &ctx };
        let grid = [MaskSpec::Mcar(0.3), MaskSpec::Mar(2)];
        let a = ensemble_eval(&imp, &x, &grid, 3, 1, 5).unwrap();
        let b = ensemble_eval(&imp, &x, &grid, 3, 5, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        assert!(a[0].mse != a[1].mse, "masks differ across seeds");
        assert!(ensemble_eval(&imp, &x, &[], 3, 1, 5).is_err());
    }

    #[test]
    fn nocb_skips_whole_column_masks() {
        let x = data();
        let imp = BaselineImputer { kind: BaselineKind::Nocb, context: &x };
        let rows = ensemble_eval(&imp, &x, &[MaskSpec::Mcar(0.3), MaskSpec::Mar(1)], 2, 1, 0).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.spec == MaskSpec::Mcar(0.3)));
        let report = EvalReport { rows };
        assert!(report.rank_rows(true).is_err(), "no MAR settings left to rank");
    }

    #[test]
    fn report_tables() {
        let x = data();
        let mut report = EvalReport::default();
        for kind in BaselineKind::ALL {
            let imp = BaselineImputer { kind, context: &x };
            for spec in [MaskSpec::Mcar(0.2), MaskSpec::Mcar(0.5), MaskSpec::Mar(1)] {
                for s in 0..2 {
                    if let Ok(r) = eval_cell(&imp, &x, spec, s, 1) {
                        report.rows.push(r);
                    }
                }
            }
        }
        let t = report.mse_table();
        assert_eq!(t.rows.len(), 7);
        assert_eq!(t.header, ["method", "mcar=0.2", "mcar=0.5", "mar=1"]);
        let nocb = t.rows.iter().find(|r| r[0] == "nocb").unwrap();
        assert_eq!(nocb[3], "/");
        let mcar = report.rank_rows(false).unwrap();
        assert_eq!(mcar.len(), 7);
        assert_eq!(report.rank_rows(true).unwrap().len(), 6);
        let means: f64 = mcar.iter().map(|r| r.mean).sum();
        assert_eq!(means, 28.0, "ranks of 7 methods sum to 28 per setting");
        let rt = rank_rows_table(&mcar);
        assert_eq!(rt.header, ["method", "Mean", "Std"]);
        let text = rt.to_aligned();
        assert!(text.lines().nth(1).unwrap().chars().all(|c| c == '-'));
        assert!(report.rows_csv().starts_with("method,setting,seed,mse,pearson\nmean,mcar=0.2,0,"));
        assert!(t.to_csv().contains("nocb,"));
    }

    #[test]
    fn downstream_regression_reaches_the_noise_floor() {
        let mut rng = Rng::new(3);
        let x: Tensor = sample_gaussian(&mut rng, &[400, 3]);
        let y: Vec<f64> = (0..400)
            .map(|r| 2.0 * x.at(r, 0) - x.at(r, 1) + 0.5 + 0.01 * rng.normal())
            .collect();
        let (xa, xb) = (crate::data::select_rows(&x, &(0..300).collect::<Vec<_>>()), crate::data::select_rows(&x, &(300..400).collect::<Vec<_>>()));
        let cfg = DownstreamConfig::default();
        let e = downstream_eval(&xa, &y[..300], &xb, &y[300..], Task::Regression, &cfg).unwrap();
        assert!(e < 0.05, "rmse {e}");
        assert_eq!(e, downstream_eval(&xa, &y[..300], &xb, &y[300..], Task::Regression, &cfg).unwrap());
        assert!(downstream_eval(&xa, &[1.0; 300], &xb, &y[300..], Task::Regression, &cfg).is_err());
    }

    #[test]
    fn downstream_classifier_beats_the_majority_class() {
        let mut rng = Rng::new(8);
        let x: Tensor = sample_gaussian(&mut rng, &[300, 2]);
        let y: Vec<f64> = (0..300)
            .map(|r| {
                let s = x.at(r, 0) + 0.5 * x.at(r, 1) + 0.3 * rng.normal();
                if s > 0.8 {
                    2.0
                } else if s > -0.2 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let cfg = DownstreamConfig::default();
        let acc = downstream_eval(&x, &y, &x, &y, Task::MultiClass, &cfg).unwrap();
        let majority = (0..3)
            .map(|c| y.iter().filter(|&&v| v == c as f64).count())
            .max()
            .unwrap() as f64
            / 300.0;
        assert!(acc >= majority, "{acc} < {majority}");
        assert!(acc > 0.7);
        assert!(downstream_eval(&x, &[1.0; 300], &x, &y, Task::BinClass, &cfg).is_err());
    }
}
