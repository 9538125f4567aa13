//! `tabimpute benchmark`: methods x mask settings x seeds on held-out rows.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::Args;
use log::{debug, info};
use tabimpute::eval::{downstream_eval, eval_cell, mask_seed, rank_rows_table, BaselineImputer, DownstreamConfig, EvalReport, EvalRow, Imputer, Table};
use tabimpute::sampling::combine;
use tabimpute::{BaselineKind, MaskSpec, MaskedTable, MinMaxScaler, Tensor};

use super::{path_str, CommonFlags, SamplerFlags};
use crate::common::{
    check_features, load_dataset, load_models, parse_grid, sampler_options, split_dataset, CheckpointImputer, Outputs,
    SAMPLER_KEYS,
};
use crate::config::Settings;
use crate::error::{CliError, CliResult};

pub const KEYS: [(&str, &str); 14] = [
    ("data", ""),
    ("target", ""),
    ("task", "regression"),
    ("split", "0.8"),
    ("split_seed", "0"),
    ("methods", ""),
    ("checkpoints", ""),
    ("grid", "default"),
    ("n_mask_seeds", "5"),
    ("seed", "0"),
    ("jobs", "1"),
    ("original_scale", "false"),
    ("downstream_mask", "mcar=0.3"),
    ("out_dir", ""),
];

#[derive(Args, Debug, Clone, Default)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub common: CommonFlags,
    #[command(flatten)]
    pub sampler: SamplerFlags,
    /// Complete CSV table; it is split into train and test rows.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub split: Option<f64>,
    /// Seed of the train/test split; keep it equal to the one used in training.
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Comma-separated method names: baselines and checkpoint labels.
    #[arg(long)]
    pub methods: Option<String>,
    /// Diffusion model as LABEL=PATH or PATH (labeled by architecture). Repeatable.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<String>,
    /// Mask settings, e.g. "mcar=10..90 mar=1..4".
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub n_mask_seeds: Option<usize>,
    /// Worker threads for grid cells.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Score in the original units instead of the scaled ones.
    #[arg(long)]
    pub original_scale: bool,
    #[arg(long)]
    pub downstream_mask: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn settings(args: &BenchmarkArgs) -> CliResult<Settings> {
    let keys: Vec<(&str, &str)> = KEYS.iter().chain(&SAMPLER_KEYS).copied().collect();
    let mut s = Settings::new("benchmark", &keys);
    args.common.apply(&mut s)?;
    args.sampler.apply(&mut s);
    s.set_opt("data", path_str(&args.data));
    s.set_opt("target", args.target.as_ref());
    s.set_opt("task", args.task.as_ref());
    s.set_opt("split", args.split);
    s.set_opt("split_seed", args.split_seed);
    s.set_opt("methods", args.methods.as_ref());
    if !args.checkpoints.is_empty() {
        s.set("checkpoints", args.checkpoints.join(","));
    }
    s.set_opt("grid", args.grid.as_ref());
    s.set_opt("n_mask_seeds", args.n_mask_seeds);
    s.set_opt("jobs", args.jobs);
    if args.original_scale {
        s.set("original_scale", true);
    }
    s.set_opt("downstream_mask", args.downstream_mask.as_ref());
    s.set_opt("out_dir", path_str(&args.out_dir));
    Ok(s)
}

/// Presents an imputer working on scaled data as one working in original units.
struct InUnits<'a> {
    inner: &'a dyn Imputer,
    scaler: &'a MinMaxScaler,
}

impl Imputer for InUnits<'_> {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }

    fn supports(&self, spec: &MaskSpec) -> bool {
        self.inner.supports(spec)
    }

    fn impute(&self, table: &MaskedTable, n_inferences: usize, seed: u64) -> tabimpute::Result<Tensor> {
        let scaled = MaskedTable::new(self.scaler.transform(&table.x_obs)?, table.mask.clone())?;
        let out = self.inner.impute(&scaled, n_inferences, seed)?;
        combine(&table.x_obs, &self.scaler.inverse_transform(&out)?, &table.mask)
    }
}

/// One grid cell: method index, setting, mask seed.
pub type Cell = (usize, MaskSpec, u64);

/// Evaluates cells on `jobs` worker threads; results come back in cell
/// order, so the output does not depend on scheduling.
pub fn run_cells(
    imputers: &[&dyn Imputer],
    cells: &[Cell],
    x_true: &Tensor,
    n_inferences: usize,
    jobs: usize,
) -> CliResult<Vec<EvalRow>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<tabimpute::Result<EvalRow>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(m, spec, seed)) = cells.get(i) else {
            break;
        };
        let r = eval_cell(imputers[m], x_true, spec, seed, n_inferences);
        if let Ok(row) = &r {
            debug!("{} {} seed {}: mse {:.6}", row.method, row.spec, row.seed, row.mse);
        }
        results.lock().unwrap()[i] = Some(r);
    };
    std::thread::scope(|scope| {
        for _ in 1..jobs.max(1) {
            scope.spawn(work);
        }
        work();
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| match r {
            Some(r) => r.map_err(CliError::from),
            None => Err(CliError::Internal("a grid cell was not evaluated".into())),
        })
        .collect()
}

pub fn run(args: &BenchmarkArgs) -> CliResult<()> {
    execute(&settings(args)?)
}

pub fn execute(s: &Settings) -> CliResult<()> {
    let seed: u64 = s.get("seed")?;
    let out_dir: PathBuf = s.get("out_dir")?;
    let grid = parse_grid(s.raw("grid"))?;
    let n_mask_seeds: usize = s.get("n_mask_seeds")?;
    let jobs: usize = s.get("jobs")?;
    if n_mask_seeds == 0 || jobs == 0 {
        return Err(CliError::usage("n_mask_seeds and jobs must be at least 1"));
    }
    let opts = sampler_options(s, seed)?;
    let data = load_dataset(s)?;
    let (train, test) = split_dataset(&data, s.get("split")?, s.get("split_seed")?)?;
    let test = test.ok_or_else(|| CliError::usage("benchmark needs split < 1 to hold out test rows"))?;
    let scaler = MinMaxScaler::fit(&train.features)?;
    let (train_x, test_x) = (scaler.transform(&train.features)?, scaler.transform(&test.features)?);

    let models = load_models(&s.get_list("checkpoints"))?;
    for m in &models {
        check_features(m, &data.feature_names)?;
    }
    let diffusion: Vec<CheckpointImputer> = models
        .iter()
        .map(|m| CheckpointImputer::new(m, &scaler, &opts))
        .collect::<CliResult<_>>()?;
    let baselines: Vec<BaselineImputer> = BaselineKind::ALL
        .iter()
        .map(|&kind| BaselineImputer { kind, context: &train_x })
        .collect();
    let mut methods = s.get_list("methods");
    if methods.is_empty() {
        methods = baselines.iter().map(|b| b.name()).chain(models.iter().map(|m| m.label.clone())).collect();
    }
    let mut scaled: Vec<&dyn Imputer> = Vec::new();
    for name in &methods {
        if let Some(b) = baselines.iter().find(|b| &b.name() == name) {
            scaled.push(b);
        } else if let Some(d) = diffusion.iter().find(|d| &d.name == name) {
            scaled.push(d);
        } else if name.parse::<tabimpute::Architecture>().is_ok() {
            return Err(CliError::usage(format!("no checkpoint given for diffusion method {name:?}")));
        } else {
            return Err(CliError::usage(format!(
                "unknown method {name:?} (baselines: {}; or a checkpoint label)",
                BaselineKind::ALL.map(|k| k.name()).join(", ")
            )));
        }
    }
    let original: bool = s.get("original_scale")?;
    let wrapped: Vec<InUnits> = scaled.iter().map(|&inner| InUnits { inner, scaler: &scaler }).collect();
    let imputers: Vec<&dyn Imputer> = if original {
        wrapped.iter().map(|w| w as &dyn Imputer).collect()
    } else {
        scaled.clone()
    };
    let x_true = if original { &test.features } else { &test_x };

    let mut cells: Vec<Cell> = Vec::new();
    for (m, imp) in imputers.iter().enumerate() {
        for spec in grid.iter().copied().filter(|g| imp.supports(g)) {
            for i in 0..n_mask_seeds {
                cells.push((m, spec, mask_seed(seed, i)));
            }
        }
    }
    info!(
        "{} methods x {} settings x {n_mask_seeds} masks on {} test rows, {jobs} jobs",
        imputers.len(),
        grid.len(),
        test_x.rows()
    );
    let report = EvalReport {
        rows: run_cells(&imputers, &cells, x_true, opts.n_inferences, jobs)?,
    };

    let out = Outputs::create(&out_dir, s.header(seed))?;
    out.settings(s)?;
    out.text("rows.csv", &report.rows_csv())?;
    let mse = report.mse_table();
    out.text("mse.csv", &mse.to_csv())?;
    out.text("mse.txt", &mse.to_aligned())?;
    for (mar, name) in [(false, "mcar"), (true, "mar")] {
        if !grid.iter().any(|g| g.is_mar() == mar) {
            continue;
        }
        let ranks = rank_rows_table(&report.rank_rows(mar)?);
        out.text(&format!("ranks_{name}.csv"), &ranks.to_csv())?;
        out.text(&format!("ranks_{name}.txt"), &ranks.to_aligned())?;
    }

    if let (Some(ytr), Some(yte)) = (&train.target, &test.target) {
        let spec: MaskSpec = s.get::<String>("downstream_mask")?.parse()?;
        let cfg = DownstreamConfig::default();
        let metric = if ytr.task.is_classification() { "accuracy" } else { "rmse" };
        let mut table = Table {
            header: vec!["method".into(), metric.into()],
            rows: Vec::new(),
        };
        let complete = downstream_eval(&train_x, &ytr.values, &test_x, &yte.values, ytr.task, &cfg)?;
        table.rows.push(vec!["complete".into(), format!("{complete:.4}")]);
        for imp in &scaled {
            let fill = |x: &Tensor, seed: u64| -> CliResult<Tensor> {
                let mask = spec.generate(x.rows(), x.cols(), seed)?;
                let masked = MaskedTable::new(mask.apply(x, f64::NAN)?, mask)?;
                let n = if imp.is_deterministic() { 1 } else { opts.n_inferences };
                Ok(imp.impute(&masked, n, seed)?)
            };
            let a = fill(&train_x, seed)?;
            let b = fill(&test_x, seed.wrapping_add(1))?;
            let score = downstream_eval(&a, &ytr.values, &b, &yte.values, ytr.task, &cfg)?;
            table.rows.push(vec![imp.name(), format!("{score:.4}")]);
        }
        out.text("downstream.csv", &table.to_csv())?;
        out.text("downstream.txt", &table.to_aligned())?;
    }
    info!("wrote reports to {}", out.dir.display());
    Ok(())
}
