//! `tabimpute ablate`: sampler and architecture ablations as settings x
//! models tables of mean MSE.

use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use log::info;
use tabimpute::eval::{mask_seed, EvalReport, Imputer, Table};
use tabimpute::{Architecture, MaskSpec, MinMaxScaler, SamplerOptions};

use super::benchmark::{run_cells, Cell};
use super::{path_str, CommonFlags, SamplerFlags};
use crate::common::{
    check_features, load_dataset, load_models, sampler_options, split_dataset, CheckpointImputer, LoadedModel, Outputs,
    SAMPLER_KEYS,
};
use crate::config::Settings;
use crate::error::{CliError, CliResult};

pub const KEYS: [(&str, &str); 14] = [
    ("preset", ""),
    ("data", ""),
    ("target", ""),
    ("task", "regression"),
    ("split", "0.8"),
    ("split_seed", "0"),
    ("checkpoints", ""),
    ("mask", "mcar=0.3"),
    ("n_mask_seeds", "5"),
    ("taus", "10,25,50,100,250,500"),
    ("jumps", "1,5"),
    ("seed", "0"),
    ("jobs", "1"),
    ("out_dir", ""),
];

/// Which comparison to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Models with and without the time-step tokenizer.
    NoTst,
    /// Resampling depth `j`: `jump_n_sample = j`, `jump_length = 1`.
    Harmonization,
    /// Shortened sequence lengths `tau` under the DDIM update.
    TauSweep,
}

impl FromStr for Preset {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "no-tst" => Ok(Preset::NoTst),
            "harmonization" => Ok(Preset::Harmonization),
            "tau-sweep" => Ok(Preset::TauSweep),
            _ => Err(CliError::usage(format!(
                "unknown preset {s:?} (no-tst, harmonization, tau-sweep)"
            ))),
        }
    }
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::NoTst => "no-tst",
            Preset::Harmonization => "harmonization",
            Preset::TauSweep => "tau-sweep",
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonFlags,
    #[command(flatten)]
    pub sampler: SamplerFlags,
    /// no-tst, harmonization or tau-sweep.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Diffusion model as LABEL=PATH or PATH. Repeatable.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<String>,
    /// Mask setting, e.g. mcar=0.3.
    #[arg(long)]
    pub mask: Option<String>,
    #[arg(long)]
    pub n_mask_seeds: Option<usize>,
    /// Sequence lengths for tau-sweep.
    #[arg(long)]
    pub taus: Option<String>,
    /// Resampling depths for harmonization.
    #[arg(long)]
    pub jumps: Option<String>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn settings(args: &AblateArgs) -> CliResult<Settings> {
    let keys: Vec<(&str, &str)> = KEYS.iter().chain(&SAMPLER_KEYS).copied().collect();
    let mut s = Settings::new("ablate", &keys);
    // The tau sweep is run with resampling unless configured otherwise.
    s.set("jump_n_sample", 5);
    args.common.apply(&mut s)?;
    args.sampler.apply(&mut s);
    s.set_opt("preset", args.preset.as_ref());
    s.set_opt("data", path_str(&args.data));
    s.set_opt("target", args.target.as_ref());
    s.set_opt("split", args.split);
    s.set_opt("split_seed", args.split_seed);
    if !args.checkpoints.is_empty() {
        s.set("checkpoints", args.checkpoints.join(","));
    }
    s.set_opt("mask", args.mask.as_ref());
    s.set_opt("n_mask_seeds", args.n_mask_seeds);
    s.set_opt("taus", args.taus.as_ref());
    s.set_opt("jumps", args.jumps.as_ref());
    s.set_opt("jobs", args.jobs);
    s.set_opt("out_dir", path_str(&args.out_dir));
    Ok(s)
}

fn numbers(s: &Settings, key: &str) -> CliResult<Vec<usize>> {
    let v = s
        .get_list(key)
        .iter()
        .map(|x| x.parse::<usize>().map_err(|_| CliError::usage(format!("bad value {x:?} in {key}"))))
        .collect::<CliResult<Vec<_>>>()?;
    if v.is_empty() {
        return Err(CliError::usage(format!("{key} is empty")));
    }
    Ok(v)
}

/// A table row: its label and the sampler options it runs with.
pub struct Row {
    pub label: String,
    pub opts: SamplerOptions,
}

/// Table rows of a sampler preset.
pub fn preset_rows(preset: Preset, base: &SamplerOptions, taus: &[usize], jumps: &[usize]) -> Vec<Row> {
    match preset {
        Preset::NoTst => vec![Row {
            label: "mse".into(),
            opts: base.clone(),
        }],
        Preset::Harmonization => jumps
            .iter()
            .map(|&j| Row {
                label: format!("j={j}"),
                opts: SamplerOptions {
                    jump_length: 1,
                    jump_n_sample: j,
                    ..base.clone()
                },
            })
            .collect(),
        Preset::TauSweep => taus
            .iter()
            .map(|&t| Row {
                label: format!("tau={t}"),
                opts: SamplerOptions {
                    tau: Some(t),
                    ..base.clone()
                },
            })
            .collect(),
    }
}

pub fn run(args: &AblateArgs) -> CliResult<()> {
    execute(&settings(args)?)
}

pub fn execute(s: &Settings) -> CliResult<()> {
    let preset: Preset = s.get::<String>("preset")?.parse()?;
    let seed: u64 = s.get("seed")?;
    let out_dir: PathBuf = s.get("out_dir")?;
    let spec: MaskSpec = s.get::<String>("mask")?.parse()?;
    let n_mask_seeds: usize = s.get("n_mask_seeds")?;
    let jobs: usize = s.get("jobs")?;
    if n_mask_seeds == 0 || jobs == 0 {
        return Err(CliError::usage("n_mask_seeds and jobs must be at least 1"));
    }
    let base = sampler_options(s, seed)?;
    let rows = preset_rows(preset, &base, &numbers(s, "taus")?, &numbers(s, "jumps")?);

    let models = load_models(&s.get_list("checkpoints"))?;
    if models.is_empty() {
        return Err(CliError::usage("ablate needs at least one checkpoint"));
    }
    if preset == Preset::NoTst && models.iter().all(|m| m.checkpoint.model.config().time_tokenizer) {
        return Err(CliError::usage(
            "the no-tst preset needs a checkpoint trained with --no-time-tokenizer",
        ));
    }
    let data = load_dataset(s)?;
    for m in &models {
        check_features(m, &data.feature_names)?;
    }
    let (train, test) = split_dataset(&data, s.get("split")?, s.get("split_seed")?)?;
    let test = test.ok_or_else(|| CliError::usage("ablate needs split < 1 to hold out test rows"))?;
    let scaler = MinMaxScaler::fit(&train.features)?;
    let x_true = scaler.transform(&test.features)?;

    // One imputer per (row, model), named "row|model".
    let mut imputers: Vec<CheckpointImputer> = Vec::new();
    for row in &rows {
        for m in &models {
            let mut imp = CheckpointImputer::new(m, &scaler, &row.opts)?;
            imp.name = format!("{}|{}", row.label, m.label);
            imputers.push(imp);
        }
    }
    let dyn_imputers: Vec<&dyn Imputer> = imputers.iter().map(|i| i as &dyn Imputer).collect();
    let cells: Vec<Cell> = (0..imputers.len())
        .flat_map(|m| (0..n_mask_seeds).map(move |i| (m, spec, mask_seed(seed, i))))
        .collect();
    info!(
        "{} preset: {} rows x {} models x {n_mask_seeds} masks at {spec}",
        preset.name(),
        rows.len(),
        models.len()
    );
    let report = EvalReport {
        rows: run_cells(&dyn_imputers, &cells, &x_true, base.n_inferences, jobs)?,
    };
    let summary = report.summary();
    let mean = |name: &str| summary.iter().find(|r| r.method == name).map(|r| r.mse);
    let fmt = |v: Option<f64>| v.map_or("/".to_string(), |v| format!("{v:.4}"));

    let table = if preset == Preset::NoTst {
        let arches: Vec<Architecture> = Architecture::ALL
            .into_iter()
            .filter(|a| models.iter().any(|m| m.checkpoint.model.config().arch == *a))
            .collect();
        let pick = |a: Architecture, tst: bool| -> Option<&LoadedModel> {
            models.iter().find(|m| {
                let c = m.checkpoint.model.config();
                c.arch == a && c.time_tokenizer == tst
            })
        };
        let mut header = vec!["setting".to_string()];
        header.extend(arches.iter().map(|a| a.to_string()));
        let rows = [(true, "with tokenizer"), (false, "without tokenizer")]
            .iter()
            .map(|&(tst, label)| {
                let mut r = vec![label.to_string()];
                r.extend(
                    arches
                        .iter()
                        .map(|&a| fmt(pick(a, tst).and_then(|m| mean(&format!("{}|{}", rows[0].label, m.label))))),
                );
                r
            })
            .collect();
        Table { header, rows }
    } else {
        let mut header = vec!["setting".to_string()];
        header.extend(models.iter().map(|m| m.label.clone()));
        let body = rows
            .iter()
            .map(|row| {
                let mut r = vec![row.label.clone()];
                r.extend(models.iter().map(|m| fmt(mean(&format!("{}|{}", row.label, m.label)))));
                r
            })
            .collect();
        Table { header, rows: body }
    };

    let out = Outputs::create(&out_dir, s.header(seed))?;
    out.settings(s)?;
    let name = preset.name();
    out.text(&format!("{name}.csv"), &table.to_csv())?;
    out.text(&format!("{name}.txt"), &table.to_aligned())?;
    out.text(&format!("{name}-rows.csv"), &report.rows_csv())?;
    info!("wrote {}", out.dir.join(format!("{name}.csv")).display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_mappings() {
        let base = SamplerOptions::default();
        let rows = preset_rows(Preset::TauSweep, &base, &[10, 25, 50, 100, 250, 500], &[1, 5]);
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.opts.tau.is_some()));
        let rows = preset_rows(Preset::Harmonization, &base, &[10], &[1, 5]);
        let j5 = &rows[1].opts;
        assert_eq!((rows[1].label.as_str(), j5.jump_n_sample, j5.jump_length), ("j=5", 5, 1));
        assert_eq!(preset_rows(Preset::NoTst, &base, &[1], &[1]).len(), 1);
        assert!("tau".parse::<Preset>().is_err());
    }
}
