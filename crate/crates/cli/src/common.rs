//! Pieces shared by several commands.

use std::path::{Path, PathBuf};

use tabimpute::data::{csv_string, load_csv};
use tabimpute::eval::Imputer;
use tabimpute::sampling::{combine, impute};
use tabimpute::{
    Checkpoint, Dataset, DiffusionSchedule, MaskSpec, MaskedTable, MinMaxScaler, SamplerOptions, SkipType, Task, Tensor,
};

use crate::config::Settings;
use crate::error::{CliError, CliResult};

/// Settings keys of the sampler, with defaults.
pub const SAMPLER_KEYS: [(&str, &str); 8] = [
    ("t_sampling", "500"),
    ("tau", ""),
    ("skip_type", "uniform"),
    ("eta", "0"),
    ("jump_length", "1"),
    ("jump_n_sample", "1"),
    ("n_inferences", "5"),
    ("clip", ""),
];

/// Sampler options from settings; `t_training` comes from the checkpoint.
pub fn sampler_options(s: &Settings, seed: u64) -> CliResult<SamplerOptions> {
    let clip = match s.get_opt::<String>("clip")? {
        None => None,
        Some(v) => {
            let parts: Vec<f64> = v
                .split(':')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| CliError::usage(format!("bad clip range {v:?} (expected LO:HI)")))?;
            match parts[..] {
                [lo, hi] => Some((lo, hi)),
                _ => return Err(CliError::usage(format!("bad clip range {v:?} (expected LO:HI)"))),
            }
        }
    };
    let opts = SamplerOptions {
        t_sampling: s.get("t_sampling")?,
        tau: s.get_opt("tau")?,
        skip_type: s.get::<String>("skip_type")?.parse::<SkipType>()?,
        eta: s.get("eta")?,
        jump_length: s.get("jump_length")?,
        jump_n_sample: s.get("jump_n_sample")?,
        n_inferences: s.get("n_inferences")?,
        seed,
        clip_x0: clip,
        ..SamplerOptions::default()
    };
    opts.validate()?;
    Ok(opts)
}

/// Parses a mask grid such as `mcar=10..90 mar=1..4`.
///
/// Tokens are separated by spaces or commas. `mcar=LO..HI[:STEP]` counts in
/// percent with a default step of 10; a single `mcar=` value is a fraction
/// when below 1 and a percentage otherwise. `mar=LO..HI` counts columns.
/// `default` expands to MCAR 10..90 and MAR 1..4.
pub fn parse_grid(text: &str) -> CliResult<Vec<MaskSpec>> {
    let bad = |t: &str| CliError::usage(format!("bad grid entry {t:?}"));
    let mut out = Vec::new();
    for tok in text.split([' ', ',']).map(str::trim).filter(|t| !t.is_empty()) {
        if tok == "default" {
            out.extend(MaskSpec::default_grid());
            continue;
        }
        let (kind, value) = tok.split_once('=').ok_or_else(|| bad(tok))?;
        let range = |v: &str| -> CliResult<Option<(u32, u32, u32)>> {
            let Some((lo, rest)) = v.split_once("..") else {
                return Ok(None);
            };
            let (hi, step) = rest.split_once(':').unwrap_or((rest, ""));
            let num = |x: &str| x.trim().parse::<u32>().map_err(|_| bad(tok));
            let step = if step.is_empty() { None } else { Some(num(step)?) };
            let (lo, hi) = (num(lo)?, num(hi)?);
            let step = step.unwrap_or(if kind == "mcar" { 10 } else { 1 });
            if lo > hi || step == 0 {
                return Err(bad(tok));
            }
            Ok(Some((lo, hi, step)))
        };
        match (kind, range(value)?) {
            ("mcar", Some((lo, hi, step))) => {
                for p in (lo..=hi).step_by(step as usize) {
                    out.push(format!("mcar={}", f64::from(p) / 100.0).parse()?);
                }
            }
            ("mar", Some((lo, hi, step))) => {
                for n in (lo..=hi).step_by(step as usize) {
                    out.push(MaskSpec::Mar(n as usize));
                }
            }
            ("mcar", None) => {
                let p: f64 = value.trim().parse().map_err(|_| bad(tok))?;
                let p = if p >= 1.0 { p / 100.0 } else { p };
                out.push(format!("mcar={p}").parse()?);
            }
            ("mar", None) => out.push(tok.parse()?),
            _ => return Err(bad(tok)),
        }
    }
    if out.is_empty() {
        return Err(CliError::usage("empty mask grid"));
    }
    let mut seen = Vec::new();
    out.retain(|s| {
        let new = !seen.contains(s);
        seen.push(*s);
        new
    });
    Ok(out)
}

/// A `label=path` or bare `path` checkpoint reference.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointRef {
    pub label: Option<String>,
    pub path: PathBuf,
}

impl CheckpointRef {
    pub fn parse(s: &str) -> Self {
        match s.split_once('=') {
            Some((l, p)) if !l.is_empty() && !l.contains(['/', '\\']) => Self {
                label: Some(l.trim().to_string()),
                path: PathBuf::from(p.trim()),
            },
            _ => Self {
                label: None,
                path: PathBuf::from(s.trim()),
            },
        }
    }
}

/// A checkpoint with the label it is reported under.
pub struct LoadedModel {
    pub label: String,
    pub checkpoint: Checkpoint,
}

/// Loads every reference; unlabeled models are named after their
/// architecture. Labels must be unique.
pub fn load_models(refs: &[String]) -> CliResult<Vec<LoadedModel>> {
    let mut out: Vec<LoadedModel> = Vec::new();
    for r in refs.iter().map(|r| CheckpointRef::parse(r)) {
        let checkpoint = Checkpoint::load(&r.path)?;
        let label = r.label.unwrap_or_else(|| checkpoint.model.config().arch.to_string());
        if out.iter().any(|m| m.label == label) {
            return Err(CliError::usage(format!("two checkpoints are labeled {label:?}")));
        }
        out.push(LoadedModel { label, checkpoint });
    }
    Ok(out)
}

/// Complete data set read from `data`, optionally with a target column.
pub fn load_dataset(s: &Settings) -> CliResult<Dataset> {
    let path: PathBuf = s.get("data")?;
    if !path.exists() {
        return Err(CliError::usage(format!("{}: no such file", path.display())));
    }
    let target: Option<String> = s.get_opt("target")?;
    let task: Task = s.get::<String>("task")?.parse()?;
    Ok(load_csv(&path, target.as_deref().map(|t| (t, task)))?)
}

/// Train/test rows by `split` and `seed`; a split of 1 keeps all rows for
/// training and leaves the test part empty.
pub fn split_dataset(d: &Dataset, fraction: f64, seed: u64) -> CliResult<(Dataset, Option<Dataset>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CliError::usage(format!("split = {fraction} must be in (0, 1]")));
    }
    if fraction == 1.0 {
        return Ok((d.clone(), None));
    }
    let (a, b) = d.split(fraction, seed)?;
    Ok((a, Some(b)))
}

/// Checks that a model was trained on these columns.
pub fn check_features(model: &LoadedModel, names: &[String]) -> CliResult<()> {
    let ck = &model.checkpoint;
    if ck.model.config().k != names.len() {
        return Err(CliError::usage(format!(
            "checkpoint {} expects {} features, the data has {}",
            model.label,
            ck.model.config().k,
            names.len()
        )));
    }
    if !ck.feature_names.is_empty() && ck.feature_names != names {
        return Err(CliError::usage(format!(
            "checkpoint {} was trained on columns {:?}, the data has {:?}",
            model.label, ck.feature_names, names
        )));
    }
    Ok(())
}

/// Diffusion imputer for data scaled by `scaler`, running a checkpoint that
/// may have been trained under a different scaling. Inputs are mapped to the
/// checkpoint's space and results mapped back; known entries are returned
/// unchanged.
pub struct CheckpointImputer<'a> {
    pub name: String,
    pub checkpoint: &'a Checkpoint,
    pub scaler: &'a MinMaxScaler,
    pub sched: DiffusionSchedule,
    pub opts: SamplerOptions,
}

impl<'a> CheckpointImputer<'a> {
    pub fn new(model: &'a LoadedModel, scaler: &'a MinMaxScaler, opts: &SamplerOptions) -> CliResult<Self> {
        let opts = SamplerOptions {
            t_training: model.checkpoint.t_training,
            ..opts.clone()
        };
        opts.validate()?;
        Ok(Self {
            name: model.label.clone(),
            checkpoint: &model.checkpoint,
            scaler,
            sched: DiffusionSchedule::cosine(opts.t_sampling)?,
            opts,
        })
    }
}

impl Imputer for CheckpointImputer<'_> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn is_deterministic(&self) -> bool {
        false
    }

    fn impute(&self, table: &MaskedTable, n_inferences: usize, seed: u64) -> tabimpute::Result<Tensor> {
        let opts = SamplerOptions {
            n_inferences,
            seed,
            ..self.opts.clone()
        };
        let model = &self.checkpoint.model;
        match &self.checkpoint.scaler {
            None => impute(model, table, &self.sched, &opts),
            Some(own) if own == self.scaler => impute(model, table, &self.sched, &opts),
            Some(own) => {
                let raw = self.scaler.inverse_transform(&table.x_obs)?;
                let inner = MaskedTable::new(own.transform(&raw)?, table.mask.clone())?;
                let out = impute(model, &inner, &self.sched, &opts)?;
                let back = self.scaler.transform(&own.inverse_transform(&out)?)?;
                combine(&table.x_obs, &back, &table.mask)
            }
        }
    }
}

/// Output file writer that stamps the run header on every file.
pub struct Outputs {
    pub dir: PathBuf,
    pub header: String,
}

impl Outputs {
    pub fn create(dir: &Path, header: String) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::usage(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            header,
        })
    }

    /// Writes `body` under a `# header` line.
    pub fn text(&self, name: &str, body: &str) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        write_with_header(&path, &self.header, body)?;
        Ok(path)
    }

    /// Writes the resolved settings.
    pub fn settings(&self, s: &Settings) -> CliResult<PathBuf> {
        self.text(&format!("{}.conf", s.command()), &s.render())
    }
}

pub fn write_with_header(path: &Path, header: &str, body: &str) -> CliResult<()> {
    std::fs::write(path, format!("# {header}\n{body}")).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

/// CSV of a table in original units with the run header.
pub fn table_csv(header: &str, names: &[String], x: &Tensor) -> CliResult<String> {
    Ok(csv_string(&[header.to_string()], names, x, None)?)
}
