use super::*;
use crate::autograd::Graph;
use crate::gradcheck::check_gradients;
use crate::params::ParamStore;
use crate::rng::sample_gaussian;

fn randn(seed: u64, shape: &[usize]) -> Tensor {
    sample_gaussian(&mut Rng::new(seed), shape)
}

fn weights(shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |i| (i as f64 * 0.618 + 0.3).sin())
}

#[test]
fn sinusoid_fixtures() {
    let (s, c) = sinusoid_embed(0.0, 5);
    assert!(s.iter().all(|&v| v == 0.0) && c.iter().all(|&v| v == 1.0));
    let (s, c) = sinusoid_embed(1.0, 1);
    assert!((s[0] - 0.8414709848078965).abs() < 1e-15 && (c[0] - 0.5403023058681398).abs() < 1e-15);
    // With t = 1 the phases are the frequencies themselves.
    let dim = 6;
    let (s, _) = sinusoid_embed(1e-3, dim);
    let ratio = (-(1e4f64.ln()) / dim as f64).exp();
    for i in 1..dim {
        let r = s[i].asin() / s[i - 1].asin();
        assert!((r - ratio).abs() < 1e-9, "{r} vs {ratio}");
    }
}

#[test]
fn tokenizer_shape_zero_and_distinctness() {
    let mut store = ParamStore::<f64>::new();
    let tok = TimeTokenizer::new(&mut store, "time", 4, &mut Rng::new(0)).unwrap();
    let g = Graph::inference();
    let e = tok.embed(&g, &store, &[3.0, 7.0, 3.0]).to_tensor();
    assert_eq!(e.shape(), &[3, 8]);
    assert_ne!(e.row(0), e.row(1));
    assert_eq!(e.row(0), e.row(2));
    let mut zero = store.clone();
    for id in zero.ids().collect::<Vec<_>>() {
        let shape = zero.value(id).shape().to_vec();
        zero.set_value(id, Tensor::zeros(&shape)).unwrap();
    }
    let g = Graph::inference();
    let e = tok.embed(&g, &zero, &[3.0, 7.0]).to_tensor();
    assert!(e.data().iter().all(|&v| v == 0.0));
}

#[test]
fn film_cases() {
    let g = Graph::inference();
    let x = randn(1, &[2, 3]);
    let xv = g.constant(x.clone());
    let zero = g.constant(Tensor::zeros(&[2, 3]));
    assert_eq!(film(xv, zero, zero).to_tensor(), x);
    let shift = randn(2, &[2, 3]);
    let out = film(xv, g.constant(Tensor::full(&[2, 3], -1.0)), g.constant(shift.clone())).to_tensor();
    assert_eq!(out, shift);
    let scale = randn(3, &[2, 3]);
    let out = film(xv, g.constant(scale.clone()), g.constant(shift.clone())).to_tensor();
    for i in 0..6 {
        let want = x.data()[i] * (scale.data()[i] + 1.0) + shift.data()[i];
        assert!((out.data()[i] - want).abs() < 1e-15);
    }
}

#[test]
fn dropout_eval_identity_and_train_expectation() {
    let g = Graph::<f64>::inference();
    let x = g.constant(Tensor::ones(&[100, 100]));
    let mut eval = ForwardCtx::eval();
    assert_eq!(eval.dropout(x, 0.3).to_tensor(), Tensor::ones(&[100, 100]));
    let mut train = ForwardCtx::train(Rng::new(5));
    let y = train.dropout(x, 0.3).to_tensor();
    let n = y.len() as f64;
    let mean = y.mean();
    // Each entry is 0 or 1/0.7: variance p / (1 - p).
    let sd = (0.3f64 / 0.7 / n).sqrt();
    assert!((mean - 1.0).abs() < 3.0 * sd, "mean {mean}");
    assert!(y.data().iter().all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-15));
}

#[test]
fn single_token_attention_is_linear() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = Rng::new(2);
    let attn = MultiHeadAttention::new(&mut store, "a", 4, 2, 0.0, Init::Uniform, &mut rng).unwrap();
    let g = Graph::inference();
    let x = randn(3, &[2, 1, 4]);
    let out = attn.forward(&g, &store, g.constant(x.clone()), &mut ForwardCtx::eval()).to_tensor();
    let v = store.find("a.v.weight").unwrap();
    let vb = store.find("a.v.bias").unwrap();
    let o = store.find("a.out.weight").unwrap();
    let ob = store.find("a.out.bias").unwrap();
    let x2 = x.clone().reshape(&[2, 4]).unwrap();
    let mut h = x2.matmul(store.value(v)).unwrap();
    for r in 0..2 {
        for c in 0..4 {
            h.set(r, c, h.at(r, c) + store.value(vb).data()[c]);
        }
    }
    let mut y = h.matmul(store.value(o)).unwrap();
    for r in 0..2 {
        for c in 0..4 {
            y.set(r, c, y.at(r, c) + store.value(ob).data()[c]);
        }
    }
    assert!(out.reshape(&[2, 4]).unwrap().max_abs_diff(&y).unwrap() < 1e-12);
}

#[test]
fn attention_rejects_indivisible_width() {
    let mut store = ParamStore::<f64>::new();
    assert!(MultiHeadAttention::new(&mut store, "a", 6, 4, 0.0, Init::Uniform, &mut Rng::new(0)).is_err());
}

#[test]
fn batch_norm_running_stats_and_batch_of_one() {
    let mut store = ParamStore::<f64>::new();
    let bn = BatchNorm1d::new(&mut store, "bn", 2).unwrap();
    let g = Graph::new();
    let x = Tensor::new(vec![3, 2], vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]).unwrap();
    let mut ctx = ForwardCtx::train(Rng::new(0));
    bn.forward(&g, &store, g.constant(x), &mut ctx).unwrap();
    let updates = ctx.take_updates();
    assert_eq!(updates.len(), 2);
    let (mean, var) = (&updates[0].1, &updates[1].1);
    assert!((mean.data()[0] - 0.2).abs() < 1e-15 && (mean.data()[1] - 2.0).abs() < 1e-12);
    // unbiased variances 1 and 100
    assert!((var.data()[0] - (0.9 + 0.1)).abs() < 1e-12 && (var.data()[1] - (0.9 + 10.0)).abs() < 1e-12);
    let one = g.constant(Tensor::ones(&[1, 2]));
    assert!(bn.forward(&g, &store, one, &mut ctx).is_err());
    assert!(bn.forward(&g, &store, one, &mut ForwardCtx::eval()).is_ok());
}

#[test]
fn timestep_mlp_fixtures() {
    use crate::denoiser::TimeStepMlp;
    let mut store = ParamStore::<f64>::new();
    let block = TimeStepMlp::new(&mut store, "b", 3, 3, 0.5, Init::Uniform, &mut Rng::new(0)).unwrap();
    let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
    store.set_value(block.linear.weight, eye).unwrap();
    store.set_value(block.linear.bias, Tensor::zeros(&[3])).unwrap();
    let g = Graph::inference();
    let x = Tensor::new(vec![2, 3], vec![0.0, 1.0, 2.0, -1.0, 0.5, -3.0]).unwrap();
    let zero = g.constant(Tensor::zeros(&[2, 3]));
    let emb = TimeEmbedding { scale: zero, shift: zero };
    let y = block
        .forward(&g, &store, g.constant(x.clone()), Some(&emb), &mut ForwardCtx::eval())
        .to_tensor();
    assert_eq!(y.data(), &[0.0, 1.0, 2.0, 0.0, 0.5, 0.0]);
}

fn gradcheck(store: &mut ParamStore, f: impl for<'g> Fn(&'g Graph, &ParamStore, &mut ForwardCtx) -> Var<'g>) {
    let report = check_gradients(store, 1e-5, 1e-5, |g, s| {
        let mut ctx = ForwardCtx::train(Rng::new(9));
        let y = f(g, s, &mut ctx);
        let w = weights(&y.shape());
        Ok(y.mul_const(w).sum_all())
    })
    .unwrap();
    assert!(report.max_rel_err < 1e-4, "{report:?}");
}

#[test]
fn layer_gradients() {
    let mut rng = Rng::new(4);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "lin", 3, 4, Init::Uniform, &mut rng).unwrap();
    let ln = LayerNorm::new(&mut store, "ln", 4).unwrap();
    let bn = BatchNorm1d::new(&mut store, "bn", 4).unwrap();
    let x = randn(5, &[5, 3]);
    gradcheck(&mut store, |g, s, ctx| {
        let h = lin.forward(g, s, g.constant(x.clone()));
        let h = ln.forward(g, s, h);
        let h = bn.forward(g, s, h, ctx).unwrap();
        ctx.dropout(h, 0.3)
    });

    let mut store = ParamStore::new();
    let conv = Conv1d::new(&mut store, "conv", 2, 4, 3, Init::Uniform, &mut rng).unwrap();
    let gn = GroupNorm::new(&mut store, "gn", 4, 2).unwrap();
    let x = randn(6, &[2, 2, 5]);
    gradcheck(&mut store, |g, s, _| gn.forward(g, s, conv.forward(g, s, g.constant(x.clone()))));

    let mut store = ParamStore::new();
    let attn = MultiHeadAttention::new(&mut store, "attn", 4, 2, 0.2, Init::KaimingNormal, &mut rng).unwrap();
    let x = randn(7, &[2, 3, 4]);
    gradcheck(&mut store, |g, s, ctx| attn.forward(g, s, g.constant(x.clone()), ctx));

    let mut store = ParamStore::new();
    let tok = TimeTokenizer::new(&mut store, "time", 3, &mut rng).unwrap();
    gradcheck(&mut store, |g, s, _| {
        let e = tok.forward(g, s, &[4.0, 1.0, 4.0]);
        g.concat(&[e.scale, e.shift], 0)
    });
}

#[test]
fn group_norm_picks_a_divisor() {
    let mut store = ParamStore::<f64>::new();
    assert_eq!(GroupNorm::new(&mut store, "a", 12, 8).unwrap().groups, 6);
    assert_eq!(GroupNorm::new(&mut store, "b", 1, 8).unwrap().groups, 1);
    assert_eq!(GroupNorm::new(&mut store, "c", 7, 8).unwrap().groups, 7);
    assert_eq!(GroupNorm::new(&mut store, "d", 32, 8).unwrap().groups, 8);
}
