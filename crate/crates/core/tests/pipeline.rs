use tabimpute::baselines::baseline_impute;
use tabimpute::data::{correlated_gaussian, split_indices, MaskSpec, MinMaxScaler};
use tabimpute::metrics::mse_missing;
use tabimpute::sampling::{impute, NoisePredictor};
use tabimpute::{
    Architecture, BaselineKind, Checkpoint, Denoiser, DenoiserConfig, DiffusionSchedule, MaskedTable, Result,
    SamplerOptions, Tensor, TrainingConfig,
};

fn rows(x: &Tensor, idx: &[usize]) -> Tensor {
    let mut d = Vec::new();
    for &i in idx {
        d.extend_from_slice(x.row(i));
    }
    Tensor::new(vec![idx.len(), x.cols()], d).unwrap()
}

fn scaled_split(n: usize) -> (Tensor, Tensor) {
    let x = correlated_gaussian(n, 0.95, 0).unwrap();
    let (a, b) = split_indices(n, 0.8, 0).unwrap();
    let (train, test) = (rows(&x, &a), rows(&x, &b));
    let s = MinMaxScaler::fit(&train).unwrap();
    (s.transform(&train).unwrap(), s.transform(&test).unwrap())
}

/// Exact conditional noise expectation for Gaussian data under the
/// training schedule.
struct GaussianOracle {
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
    sched: DiffusionSchedule,
}

impl GaussianOracle {
    fn fit(x: &Tensor, steps: usize) -> Self {
        let n = x.rows() as f64;
        let mean = [0, 1].map(|c| (0..x.rows()).map(|r| x.at(r, c)).sum::<f64>() / n);
        let mut cov = [[0.0; 2]; 2];
        for r in 0..x.rows() {
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += (x.at(r, i) - mean[i]) * (x.at(r, j) - mean[j]) / n;
                }
            }
        }
        Self { mean, cov, sched: DiffusionSchedule::cosine(steps).unwrap() }
    }
}

impl NoisePredictor<f64> for GaussianOracle {
    fn features(&self) -> usize {
        2
    }

    fn predict_noise(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        let ab = self.sched.alpha_bar(t[0].round() as usize)?;
        let c = &self.cov;
        let s = [[ab * c[0][0] + 1.0 - ab, ab * c[0][1]], [ab * c[1][0], ab * c[1][1] + 1.0 - ab]];
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let inv = [[s[1][1] / det, -s[0][1] / det], [-s[1][0] / det, s[0][0] / det]];
        let mut out = Vec::with_capacity(x.len());
        for r in 0..x.rows() {
            let d = [x.at(r, 0) - ab.sqrt() * self.mean[0], x.at(r, 1) - ab.sqrt() * self.mean[1]];
            for row in inv {
                out.push((1.0 - ab).sqrt() * (row[0] * d[0] + row[1] * d[1]));
            }
        }
        Tensor::new(x.shape().to_vec(), out)
    }
}

fn masked(x: &Tensor, spec: MaskSpec, seed: u64) -> MaskedTable {
    let m = spec.generate(x.rows(), x.cols(), seed).unwrap();
    MaskedTable::new(m.apply(x, f64::NAN).unwrap(), m).unwrap()
}

#[test]
fn optimal_noise_predictor_beats_mean_imputation() {
    let (train, test) = scaled_split(2000);
    let oracle = GaussianOracle::fit(&train, 200);
    let sched = DiffusionSchedule::cosine(100).unwrap();
    let opts = SamplerOptions { t_sampling: 100, t_training: 200, ..SamplerOptions::default() };
    for seed in 0..3 {
        let tab = masked(&test, MaskSpec::Mcar(0.3), seed);
        let ours = impute(&oracle, &tab, &sched, &SamplerOptions { seed, ..opts.clone() }).unwrap();
        let mean = baseline_impute(BaselineKind::Mean, &tab.x_obs, &tab.mask, &train).unwrap();
        let (a, b) = (mse_missing(&test, &ours, &tab.mask).unwrap(), mse_missing(&test, &mean, &tab.mask).unwrap());
        assert!(a < 0.8 * b, "seed {seed}: {a} vs mean {b}");
    }
}

#[test]
fn train_save_load_impute() {
    let (train, test) = scaled_split(600);
    let mut config = DenoiserConfig::new(Architecture::ResNet, 2);
    config.hidden = 16;
    config.blocks = 2;
    let mut model = Denoiser::new(config, 1).unwrap();
    let cfg = TrainingConfig { epochs: 2, steps: 100, seed: 1, ..TrainingConfig::default() };
    let history = tabimpute::train(&mut model, &train, &cfg).unwrap();
    assert_eq!(history.epoch_losses.len(), 2);
    let ck = Checkpoint { model, t_training: 100, scaler: MinMaxScaler::fit(&train).ok(), feature_names: vec!["a".into(), "b".into()], comment: None };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::<f64>::load(&path).unwrap();
    let tab = masked(&test, MaskSpec::Mar(1), 4);
    let opts = SamplerOptions { t_sampling: 50, t_training: 100, tau: Some(10), jump_n_sample: 2, n_inferences: 2, ..SamplerOptions::default() };
    let sched = DiffusionSchedule::cosine(50).unwrap();
    let a = impute(&ck.model, &tab, &sched, &opts).unwrap();
    let b = impute(&back.model, &tab, &sched, &opts).unwrap();
    assert_eq!(a, b);
    for (i, &known) in tab.mask.known().iter().enumerate() {
        if known {
            assert_eq!(a.data()[i].to_bits(), test.data()[i].to_bits());
        }
    }
}

#[test]
fn single_precision_pipeline() {
    let (train, test) = scaled_split(300);
    let mut config = DenoiserConfig::new(Architecture::Mlp, 2);
    config.hidden = 8;
    let mut model = Denoiser::<f32>::new(config, 2).unwrap();
    let cfg = TrainingConfig { epochs: 1, steps: 50, ..TrainingConfig::default() };
    tabimpute::train(&mut model, &train.cast(), &cfg).unwrap();
    let tab = masked(&test, MaskSpec::Mcar(0.4), 0);
    let tab32 = MaskedTable::new(tab.x_obs.cast::<f32>(), tab.mask.clone()).unwrap();
    let opts = SamplerOptions { t_sampling: 50, t_training: 50, n_inferences: 1, ..SamplerOptions::default() };
    let out = impute(&model, &tab32, &DiffusionSchedule::cosine(50).unwrap(), &opts).unwrap();
    assert!(out.is_finite());
    let xo = tab.x_obs.cast::<f32>();
    for (i, &known) in tab.mask.known().iter().enumerate() {
        if known {
            assert_eq!(out.data()[i].to_bits(), xo.data()[i].to_bits());
        }
    }
}
