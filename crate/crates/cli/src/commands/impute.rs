//! `tabimpute impute`: fill the missing cells of a table with a trained model.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use log::{info, warn};
use tabimpute::data::{read_table, write_csv};
use tabimpute::sampling::{combine, impute};
use tabimpute::{DiffusionSchedule, Mask, MaskSpec, MaskedTable, SamplerOptions};

use super::{path_str, CommonFlags, SamplerFlags};
use crate::common::{check_features, load_models, sampler_options, write_with_header, LoadedModel, SAMPLER_KEYS};
use crate::config::Settings;
use crate::error::{CliError, CliResult};

pub const KEYS: [(&str, &str); 7] = [
    ("checkpoint", ""),
    ("data", ""),
    ("mask", ""),
    ("mcar", ""),
    ("mar", ""),
    ("seed", "0"),
    ("out", ""),
];

#[derive(Args, Debug, Clone, Default)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub common: CommonFlags,
    #[command(flatten)]
    pub sampler: SamplerFlags,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// CSV table; empty, NA and NaN cells are missing.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Mask CSV (1 = known) applied on top of the missing cells.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Additionally hide each cell with this probability.
    #[arg(long)]
    pub mcar: Option<f64>,
    /// Additionally hide this many whole columns.
    #[arg(long)]
    pub mar: Option<usize>,
    /// Output CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn settings(args: &ImputeArgs) -> CliResult<Settings> {
    let keys: Vec<(&str, &str)> = KEYS.iter().chain(&SAMPLER_KEYS).copied().collect();
    let mut s = Settings::new("impute", &keys);
    args.common.apply(&mut s)?;
    args.sampler.apply(&mut s);
    s.set_opt("checkpoint", path_str(&args.checkpoint));
    s.set_opt("data", path_str(&args.data));
    s.set_opt("mask", path_str(&args.mask));
    s.set_opt("mcar", args.mcar);
    s.set_opt("mar", args.mar);
    s.set_opt("out", path_str(&args.out));
    Ok(s)
}

pub fn run(args: &ImputeArgs) -> CliResult<()> {
    execute(&settings(args)?)
}

fn extra_mask(s: &Settings, rows: usize, cols: usize, seed: u64) -> CliResult<Option<Mask>> {
    let mask: Option<PathBuf> = s.get_opt("mask")?;
    let mcar: Option<String> = s.get_opt("mcar")?;
    let mar: Option<String> = s.get_opt("mar")?;
    if [mask.is_some(), mcar.is_some(), mar.is_some()].iter().filter(|&&b| b).count() > 1 {
        return Err(CliError::usage("use at most one of mask, mcar and mar"));
    }
    if let Some(path) = mask {
        let m = Mask::read_csv(&path)?;
        m.check_shape(rows, cols)?;
        return Ok(Some(m));
    }
    let spec = match (mcar, mar) {
        (Some(p), _) => format!("mcar={p}").parse::<MaskSpec>()?,
        (_, Some(n)) => format!("mar={n}").parse::<MaskSpec>()?,
        _ => return Ok(None),
    };
    Ok(Some(spec.generate(rows, cols, seed)?))
}

/// Model evaluations per run for these options and for dense sampling.
fn evaluations(opts: &SamplerOptions) -> CliResult<(usize, usize)> {
    let plan = opts.plan()?;
    let dense = SamplerOptions { tau: None, jump_length: 1, jump_n_sample: 1, ..opts.clone() }.plan()?;
    Ok((plan.transitions() - plan.ascents(), dense.transitions()))
}

pub fn execute(s: &Settings) -> CliResult<()> {
    let seed: u64 = s.get("seed")?;
    let out_path: PathBuf = s.get("out")?;
    let data_path: PathBuf = s.get("data")?;
    let models = load_models(&[s.get::<String>("checkpoint")?])?;
    let model: &LoadedModel = &models[0];
    let ck = &model.checkpoint;
    let mut opts = sampler_options(s, seed)?;
    opts.t_training = ck.t_training;
    opts.validate()?;
    let table = read_table(&data_path)?;
    let k = ck.model.config().k;
    let columns: Vec<usize> = if ck.feature_names.is_empty() {
        if table.cols() != k {
            return Err(CliError::usage(format!(
                "checkpoint expects {k} features, {} has {}",
                data_path.display(),
                table.cols()
            )));
        }
        (0..k).collect()
    } else {
        ck.feature_names
            .iter()
            .map(|n| {
                table
                    .column_index(n)
                    .ok_or_else(|| CliError::usage(format!("{}: no column {n:?}", data_path.display())))
            })
            .collect::<CliResult<_>>()?
    };
    let names: Vec<String> = columns.iter().map(|&c| table.names[c].clone()).collect();
    check_features(model, &names)?;
    let (raw, present) = table.to_observed(&columns);
    let mask = match extra_mask(s, raw.rows(), k, seed)? {
        None => present,
        Some(m) => {
            let known = m.known().iter().zip(present.known()).map(|(a, b)| *a && *b).collect();
            Mask::new(raw.rows(), k, known)?
        }
    };
    if mask.n_missing() == 0 {
        warn!("no missing entries; the output equals the input");
    }
    let x_obs = mask.apply(&raw, f64::NAN)?;
    let scaled = match &ck.scaler {
        Some(sc) => sc.transform(&x_obs)?,
        None => x_obs.clone(),
    };
    let masked = MaskedTable::new(scaled, mask.clone())?;
    let sched = DiffusionSchedule::cosine(opts.t_sampling)?;
    let (evals, dense) = evaluations(&opts)?;
    let start = Instant::now();
    let filled = impute(&ck.model, &masked, &sched, &opts)?;
    let elapsed = start.elapsed().as_secs_f64();
    info!(
        "imputed {} of {} cells in {elapsed:.2} s; {evals} model evaluations per run vs {dense} dense (ratio {:.3})",
        mask.n_missing(),
        raw.len(),
        evals as f64 / dense as f64
    );
    let back = match &ck.scaler {
        Some(sc) => sc.inverse_transform(&filled)?,
        None => filled,
    };
    let result = combine(&x_obs, &back, &mask)?;
    let header = s.header(seed);
    write_csv(&out_path, &[header.clone()], &names, &result, None)?;
    let side = |ext: &str| {
        let mut p = out_path.clone().into_os_string();
        p.push(ext);
        PathBuf::from(p)
    };
    write_with_header(&side(".mask.csv"), &header, &mask.to_csv())?;
    write_with_header(&side(".conf"), &header, &s.render())?;
    info!("wrote {}", out_path.display());
    Ok(())
}
