use super::*;
use crate::gradcheck::check_gradients;
use crate::rng::{sample_gaussian, Rng};

const TOL: f64 = 1e-6;

fn randn(seed: u64, shape: &[usize]) -> Tensor {
    sample_gaussian(&mut Rng::new(seed), shape)
}

/// Checks `sum(w * f(inputs))` for a fixed pseudo-random `w`.
fn check(inputs: Vec<Tensor>, f: impl for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>) -> f64 {
    let mut store = ParamStore::new();
    let ids: Vec<_> = inputs
        .into_iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("in{i}"), t).unwrap())
        .collect();
    let report = check_gradients(&mut store, 1e-5, 1e-3, |g, s| {
        let vars: Vec<_> = ids.iter().map(|&id| g.param(s, id)).collect();
        let y = f(g, &vars);
        let w = Tensor::from_fn(&y.shape(), |i| (i as f64 * 0.618 + 0.3).sin());
        Ok(y.mul_const(w).sum_all())
    })
    .unwrap();
    assert!(report.max_rel_err < TOL, "{report:?}");
    report.max_rel_err
}

#[test]
fn linear_sum_gradient_is_the_input() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::from_rows(&[vec![0.5], vec![-1.0], vec![2.0]]).unwrap()).unwrap();
    let g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 3], vec![3.0, 4.0, 5.0]).unwrap());
    let loss = x.linear(g.param(&store, w), None).sum_all();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.param(w).unwrap().data(), &[3.0, 4.0, 5.0]);
}

#[test]
fn smooth_l1_gradient_sign() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::scalar(0.5)).unwrap();
    let g = Graph::new();
    let loss = g.param(&store, w).smooth_l1(&Tensor::scalar(0.0), 1.0);
    assert_eq!(loss.value().item(), 0.125);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.param(w).unwrap().item(), 0.5);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let g = Graph::<f64>::new();
    let x = g.variable(Tensor::zeros(&[2]));
    assert!(g.backward(x).is_err());
}

#[test]
fn inference_graph_records_no_closures() {
    let g = Graph::<f64>::inference();
    let x = g.variable(Tensor::ones(&[2]));
    let y = x.square().sum_all();
    assert_eq!(y.value().item(), 2.0);
    assert!(g.backward(y).unwrap().get(x).is_none());
}

#[test]
fn non_finite_values_are_reported() {
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::full(&[2], 1e200));
    let _ = x.square();
    assert!(g.check_finite().is_err());
}

#[test]
fn elementwise_ops() {
    check(vec![randn(1, &[3, 4])], |_, v| v[0].relu());
    check(vec![randn(2, &[3, 4])], |_, v| v[0].gelu());
    check(vec![randn(3, &[3, 4])], |_, v| v[0].silu());
    check(vec![randn(4, &[3, 4])], |_, v| v[0].scale(-1.7).add_scalar(0.3).square());
    check(vec![randn(5, &[2, 3]), randn(6, &[2, 3])], |_, v| v[0].add(v[1]).mul(v[0]).sub(v[1]));
    check(vec![randn(7, &[2, 3]), randn(8, &[3])], |_, v| v[0].add_bias(v[1]));
    check(vec![randn(9, &[2, 3])], |_, v| v[0].mul_const(Tensor::from_fn(&[2, 3], |i| i as f64)));
}

#[test]
fn linear_and_bmm() {
    check(vec![randn(10, &[2, 3, 4]), randn(11, &[4, 5]), randn(12, &[5])], |_, v| {
        v[0].linear(v[1], Some(v[2]))
    });
    check(vec![randn(13, &[2, 3, 4]), randn(14, &[2, 4, 5])], |_, v| v[0].bmm(v[1], false));
    check(vec![randn(15, &[2, 3, 4]), randn(16, &[2, 5, 4])], |_, v| v[0].bmm(v[1], true));
}

#[test]
fn softmax_and_losses() {
    check(vec![randn(17, &[3, 5])], |_, v| v[0].softmax());
    let target = randn(18, &[3, 4]).scale(2.0);
    check(vec![randn(19, &[3, 4])], move |_, v| v[0].smooth_l1(&target, 1.0));
    check(vec![randn(20, &[4, 3])], |_, v| v[0].cross_entropy(&[0, 2, 1, 2]));
    check(vec![randn(21, &[4, 3])], |_, v| v[0].mean_all());
}

#[test]
fn normalizations() {
    check(vec![randn(22, &[3, 5]), randn(23, &[5]), randn(24, &[5])], |_, v| {
        v[0].layer_norm(v[1], v[2], 1e-5)
    });
    check(vec![randn(25, &[2, 4, 3]), randn(26, &[4]), randn(27, &[4])], |_, v| {
        v[0].group_norm(2, v[1], v[2], 1e-5)
    });
    check(vec![randn(28, &[5, 3]), randn(29, &[3]), randn(30, &[3])], |_, v| {
        v[0].batch_norm_train(v[1], v[2], 1e-5).0
    });
    let mean = randn(31, &[3]);
    let var = randn(32, &[3]).map(|x| x * x + 0.5);
    check(vec![randn(33, &[4, 3]), randn(34, &[3]), randn(35, &[3])], move |_, v| {
        v[0].batch_norm_eval(&mean, &var, v[1], v[2], 1e-5)
    });
}

#[test]
fn shape_ops() {
    check(vec![randn(36, &[2, 3, 4])], |_, v| v[0].permute(&[2, 0, 1]));
    check(vec![randn(37, &[2, 6])], |_, v| v[0].reshape(&[3, 4]));
    check(vec![randn(38, &[2, 5, 3])], |_, v| v[0].narrow(1, 1, 3));
    check(vec![randn(39, &[2, 3])], |_, v| v[0].expand(1, 4));
    check(vec![randn(40, &[3, 2])], |_, v| v[0].gather_rows(&[2, 0, 2, 1]));
    check(vec![randn(41, &[2, 2, 3]), randn(42, &[2, 1, 3])], |g, v| g.concat(&[v[0], v[1]], 1));
}

#[test]
fn embedding_and_convolution() {
    check(vec![randn(43, &[2, 3]), randn(44, &[3, 4]), randn(45, &[3, 4])], |_, v| {
        v[0].feature_embed(v[1], v[2])
    });
    check(vec![randn(46, &[2, 3, 5]), randn(47, &[4, 3, 3]), randn(48, &[4])], |_, v| {
        v[0].conv1d(v[1], v[2])
    });
}

#[test]
fn conv1d_matches_direct_evaluation() {
    let x = randn(49, &[2, 2, 6]);
    let w = randn(50, &[3, 2, 3]);
    let b = randn(51, &[3]);
    let g = Graph::inference();
    let y = g.constant(x.clone()).conv1d(g.constant(w.clone()), g.constant(b.clone())).to_tensor();
    for bi in 0..2 {
        for co in 0..3 {
            for l in 0..6 {
                let mut acc = b.data()[co];
                for ci in 0..2 {
                    for kk in 0..3 {
                        let pos = l as isize + kk as isize - 1;
                        if (0..6).contains(&pos) {
                            acc += w.data()[(co * 2 + ci) * 3 + kk] * x.data()[(bi * 2 + ci) * 6 + pos as usize];
                        }
                    }
                }
                let got = y.data()[(bi * 3 + co) * 6 + l];
                assert!((got - acc).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn normalization_values() {
    let g = Graph::inference();
    let x = g.constant(randn(52, &[4, 6]));
    let y = x
        .layer_norm(g.constant(Tensor::ones(&[6])), g.constant(Tensor::zeros(&[6])), 0.0)
        .to_tensor();
    for row in y.data().chunks(6) {
        let m: f64 = row.iter().sum::<f64>() / 6.0;
        let v: f64 = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 6.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-10);
    }
    let (_, mean, var) = x.batch_norm_train(g.constant(Tensor::ones(&[6])), g.constant(Tensor::zeros(&[6])), 0.0);
    let xv = x.to_tensor();
    let m0 = (0..4).map(|r| xv.at(r, 0)).sum::<f64>() / 4.0;
    let v0 = (0..4).map(|r| (xv.at(r, 0) - m0).powi(2)).sum::<f64>() / 4.0;
    assert!((mean.data()[0] - m0).abs() < 1e-12 && (var.data()[0] - v0).abs() < 1e-12);
}

#[test]
fn softmax_rows_sum_to_one() {
    let g = Graph::inference();
    let y = g.constant(randn(53, &[3, 7])).softmax().to_tensor();
    for row in y.data().chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn shared_parameter_gradients_accumulate() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::scalar(3.0)).unwrap();
    let g = Graph::new();
    let a = g.param(&store, w);
    let b = g.param(&store, w);
    let loss = a.mul(b);
    let grads = g.backward(loss).unwrap();
    grads.accumulate_into(&mut store);
    assert_eq!(store.grad(w).item(), 6.0);
}
