//! Differentiable operations.

use crate::tensor::{Real, Tensor};

use super::{Graph, Var};

fn same_shape(op: &str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

/// Sums `grad` over all leading dimensions, leaving the last one.
fn sum_to_last<F: Real>(grad: &Tensor<F>, n: usize) -> Tensor<F> {
    let mut out = vec![F::zero(); n];
    for row in grad.data().chunks_exact(n) {
        for (o, &g) in out.iter_mut().zip(row) {
            *o += g;
        }
    }
    Tensor::from_parts(vec![n], out)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_tensor<F: Real>(x: &Tensor<F>, perm: &[usize]) -> Tensor<F> {
    let shape = x.shape();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let data = x.data();
    let rank = out_shape.len();
    let last = rank - 1;
    let inner = out_shape[last];
    let inner_stride = src_strides[last];
    let outer = n / inner;
    for _ in 0..outer {
        let base: usize = idx[..last].iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        for j in 0..inner {
            out.push(data[base + j * inner_stride]);
        }
        for d in (0..last).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::from_parts(out_shape, out)
}

/// Splits a shape around `axis` into (outer, axis, inner) extents.
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn gelu_exact(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

impl<'g, F: Real> Var<'g, F> {
    fn unary(
        self,
        op: &'static str,
        f: impl Fn(F) -> F,
        df: impl Fn(F) -> F + 'static,
    ) -> Var<'g, F> {
        let x = self.value();
        let y = x.map(f);
        self.graph.push(op, y, &[self.id], move |g| {
            let data = x.data().iter().zip(g.data()).map(|(&xi, &gi)| gi * df(xi)).collect();
            vec![Tensor::from_parts(x.shape().to_vec(), data)]
        })
    }

    pub fn relu(self) -> Var<'g, F> {
        self.unary(
            "relu",
            |x| if x > F::zero() { x } else { F::zero() },
            |x| if x > F::zero() { F::one() } else { F::zero() },
        )
    }

    /// GELU with the exact Gaussian CDF.
    pub fn gelu(self) -> Var<'g, F> {
        self.unary(
            "gelu",
            |x| F::lit(gelu_exact(x.as_f64())),
            |x| F::lit(gelu_grad(x.as_f64())),
        )
    }

    pub fn silu(self) -> Var<'g, F> {
        self.unary(
            "silu",
            |x| x * sigmoid(x),
            |x| {
                let s = sigmoid(x);
                s * (F::one() + x * (F::one() - s))
            },
        )
    }

    pub fn scale(self, c: F) -> Var<'g, F> {
        self.unary("scale", move |x| x * c, move |_| c)
    }

    pub fn add_scalar(self, c: F) -> Var<'g, F> {
        self.unary("add_scalar", move |x| x + c, |_| F::one())
    }

    pub fn square(self) -> Var<'g, F> {
        self.unary("square", |x| x * x, |x| x + x)
    }

    fn binary(
        self,
        other: Var<'g, F>,
        op: &'static str,
        f: impl Fn(F, F) -> F,
        grads: impl Fn(&Tensor<F>, &Tensor<F>, &Tensor<F>) -> (Tensor<F>, Tensor<F>) + 'static,
    ) -> Var<'g, F> {
        let a = self.value();
        let b = other.value();
        same_shape(op, &a, &b);
        let y = Tensor::from_parts(
            a.shape().to_vec(),
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        );
        self.graph.push(op, y, &[self.id, other.id], move |g| {
            let (ga, gb) = grads(&a, &b, g);
            vec![ga, gb]
        })
    }

    pub fn add(self, other: Var<'g, F>) -> Var<'g, F> {
        self.binary(other, "add", |a, b| a + b, |_, _, g| (g.clone(), g.clone()))
    }

    pub fn sub(self, other: Var<'g, F>) -> Var<'g, F> {
        self.binary(other, "sub", |a, b| a - b, |_, _, g| (g.clone(), g.scale(-F::one())))
    }

    pub fn mul(self, other: Var<'g, F>) -> Var<'g, F> {
        self.binary(
            other,
            "mul",
            |a, b| a * b,
            |a, b, g| (g.mul(b).expect("shape"), g.mul(a).expect("shape")),
        )
    }

    /// Adds a vector along the last dimension.
    pub fn add_bias(self, bias: Var<'g, F>) -> Var<'g, F> {
        let x = self.value();
        let b = bias.value();
        let n = *x.shape().last().expect("rank >= 1");
        assert_eq!(b.shape(), [n], "add_bias: bias shape");
        let mut y = (*x).clone();
        for row in y.data_mut().chunks_exact_mut(n) {
            for (v, &bb) in row.iter_mut().zip(b.data()) {
                *v += bb;
            }
        }
        self.graph.push("add_bias", y, &[self.id, bias.id], move |g| {
            vec![g.clone(), sum_to_last(g, n)]
        })
    }

    /// `x W + b` over the last dimension; `w` is `[in, out]`, `b` is `[out]`.
    pub fn linear(self, w: Var<'g, F>, b: Option<Var<'g, F>>) -> Var<'g, F> {
        let x = self.value();
        let wv = w.value();
        let xs = x.shape().to_vec();
        let (fan_in, fan_out) = (wv.shape()[0], wv.shape()[1]);
        assert_eq!(*xs.last().unwrap(), fan_in, "linear: input width {xs:?} vs weight {:?}", wv.shape());
        let rows = x.len() / fan_in;
        let mut out = vec![F::zero(); rows * fan_out];
        if let Some(b) = &b {
            let bv = b.value();
            for row in out.chunks_exact_mut(fan_out) {
                row.copy_from_slice(bv.data());
            }
        }
        F::gemm(rows, fan_in, fan_out, x.data(), false, wv.data(), false, F::one(), &mut out);
        let mut ys = xs.clone();
        *ys.last_mut().unwrap() = fan_out;
        let y = Tensor::from_parts(ys, out);
        let mut parents = vec![self.id, w.id];
        if let Some(b) = &b {
            parents.push(b.id);
        }
        let has_bias = b.is_some();
        self.graph.push("linear", y, &parents, move |g| {
            let mut dx = vec![F::zero(); rows * fan_in];
            F::gemm(rows, fan_out, fan_in, g.data(), false, wv.data(), true, F::zero(), &mut dx);
            let mut dw = vec![F::zero(); fan_in * fan_out];
            F::gemm(fan_in, rows, fan_out, x.data(), true, g.data(), false, F::zero(), &mut dw);
            let mut grads = vec![
                Tensor::from_parts(xs.clone(), dx),
                Tensor::from_parts(vec![fan_in, fan_out], dw),
            ];
            if has_bias {
                grads.push(sum_to_last(g, fan_out));
            }
            grads
        })
    }

    /// Batched matrix product over a shared leading dimension:
    /// `[n, m, k] x [n, k, p]`, or `[n, m, k] x [n, p, k]^T` when `trans_b`.
    pub fn bmm(self, other: Var<'g, F>, trans_b: bool) -> Var<'g, F> {
        let a = self.value();
        let b = other.value();
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        assert!(sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0], "bmm: {sa:?} x {sb:?}");
        let (n, m, k) = (sa[0], sa[1], sa[2]);
        let p = if trans_b { sb[1] } else { sb[2] };
        assert_eq!(if trans_b { sb[2] } else { sb[1] }, k, "bmm inner dims");
        let mut out = vec![F::zero(); n * m * p];
        for i in 0..n {
            F::gemm(
                m,
                k,
                p,
                &a.data()[i * m * k..],
                false,
                &b.data()[i * k * p..],
                trans_b,
                F::zero(),
                &mut out[i * m * p..(i + 1) * m * p],
            );
        }
        let y = Tensor::from_parts(vec![n, m, p], out);
        self.graph.push("bmm", y, &[self.id, other.id], move |g| {
            let gd = g.data();
            let mut da = vec![F::zero(); n * m * k];
            let mut db = vec![F::zero(); n * k * p];
            for i in 0..n {
                let gi = &gd[i * m * p..];
                // dA = dC op(B)^T
                F::gemm(
                    m,
                    p,
                    k,
                    gi,
                    false,
                    &b.data()[i * k * p..],
                    !trans_b,
                    F::zero(),
                    &mut da[i * m * k..(i + 1) * m * k],
                );
                if trans_b {
                    // B is p x k: dB = dC^T A
                    F::gemm(
                        p,
                        m,
                        k,
                        gi,
                        true,
                        &a.data()[i * m * k..],
                        false,
                        F::zero(),
                        &mut db[i * k * p..(i + 1) * k * p],
                    );
                } else {
                    // B is k x p: dB = A^T dC
                    F::gemm(
                        k,
                        m,
                        p,
                        &a.data()[i * m * k..],
                        true,
                        gi,
                        false,
                        F::zero(),
                        &mut db[i * k * p..(i + 1) * k * p],
                    );
                }
            }
            vec![
                Tensor::from_parts(sa.clone(), da),
                Tensor::from_parts(sb.clone(), db),
            ]
        })
    }

    /// Softmax over the last dimension.
    pub fn softmax(self) -> Var<'g, F> {
        let x = self.value();
        let n = x.cols();
        let mut y = (*x).clone();
        for row in y.data_mut().chunks_exact_mut(n) {
            let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
            let mut sum = F::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let y_saved = std::rc::Rc::new(y.clone());
        self.graph.push("softmax", y, &[self.id], move |g| {
            let mut dx = g.clone();
            for (drow, yrow) in dx.data_mut().chunks_exact_mut(n).zip(y_saved.data().chunks_exact(n)) {
                let dot: F = drow.iter().zip(yrow).map(|(&d, &y)| d * y).sum();
                for (d, &y) in drow.iter_mut().zip(yrow) {
                    *d = y * (*d - dot);
                }
            }
            vec![dx]
        })
    }


    /// Elementwise product with a constant tensor (dropout masks).
    pub fn mul_const(self, c: Tensor<F>) -> Var<'g, F> {
        let x = self.value();
        same_shape("mul_const", &x, &c);
        let y = x.mul(&c).expect("checked shape");
        self.graph.push("mul_const", y, &[self.id], move |g| {
            vec![g.mul(&c).expect("checked shape")]
        })
    }

    /// Normalizes `x.len() / group` contiguous segments of length `group`,
    /// then applies `gamma[c] * xhat + beta[c]` with `c = channel_of(segment, offset)`.
    fn normalize_segments(
        self,
        op: &'static str,
        group: usize,
        gamma: Var<'g, F>,
        beta: Var<'g, F>,
        channel_of: impl Fn(usize, usize) -> usize + 'static,
        eps: F,
    ) -> Var<'g, F> {
        let x = self.value();
        let gv = gamma.value();
        let bv = beta.value();
        let channels = gv.len();
        assert_eq!(bv.len(), channels, "{op}: gamma/beta length");
        let segments = x.len() / group;
        let gsize = F::lit(group as f64);
        let mut xhat = vec![F::zero(); x.len()];
        let mut inv_std = vec![F::zero(); segments];
        for (si, (seg, out)) in x
            .data()
            .chunks_exact(group)
            .zip(xhat.chunks_exact_mut(group))
            .enumerate()
        {
            let mean = seg.iter().copied().sum::<F>() / gsize;
            let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / gsize;
            let is = F::one() / (var + eps).sqrt();
            inv_std[si] = is;
            for (o, &v) in out.iter_mut().zip(seg) {
                *o = (v - mean) * is;
            }
        }
        let mut y = vec![F::zero(); x.len()];
        for si in 0..segments {
            for j in 0..group {
                let c = channel_of(si, j);
                let i = si * group + j;
                y[i] = xhat[i] * gv.data()[c] + bv.data()[c];
            }
        }
        let shape = x.shape().to_vec();
        let y = Tensor::from_parts(shape.clone(), y);
        self.graph.push(op, y, &[self.id, gamma.id, beta.id], move |g| {
            let mut dx = vec![F::zero(); xhat.len()];
            let mut dgamma = vec![F::zero(); channels];
            let mut dbeta = vec![F::zero(); channels];
            let gd = g.data();
            for si in 0..segments {
                let base = si * group;
                let mut mean_dh = F::zero();
                let mut mean_dh_h = F::zero();
                for j in 0..group {
                    let c = channel_of(si, j);
                    let gi = gd[base + j];
                    let h = xhat[base + j];
                    let dh = gi * gv.data()[c];
                    mean_dh += dh;
                    mean_dh_h += dh * h;
                    dgamma[c] += gi * h;
                    dbeta[c] += gi;
                }
                mean_dh /= gsize;
                mean_dh_h /= gsize;
                for j in 0..group {
                    let c = channel_of(si, j);
                    let dh = gd[base + j] * gv.data()[c];
                    dx[base + j] = inv_std[si] * (dh - mean_dh - xhat[base + j] * mean_dh_h);
                }
            }
            vec![
                Tensor::from_parts(shape.clone(), dx),
                Tensor::from_parts(vec![channels], dgamma),
                Tensor::from_parts(vec![channels], dbeta),
            ]
        })
    }

    /// Layer normalization over the last dimension.
    pub fn layer_norm(self, gamma: Var<'g, F>, beta: Var<'g, F>, eps: F) -> Var<'g, F> {
        let n = *self.shape().last().expect("rank >= 1");
        assert_eq!(gamma.shape(), [n], "layer_norm: gamma width");
        self.normalize_segments("layer_norm", n, gamma, beta, |_, j| j, eps)
    }

    /// Group normalization of `[batch, channels, length]`; each group spans
    /// `channels / groups` consecutive channels of one sample.
    pub fn group_norm(self, groups: usize, gamma: Var<'g, F>, beta: Var<'g, F>, eps: F) -> Var<'g, F> {
        let shape = self.shape();
        assert_eq!(shape.len(), 3, "group_norm expects [B, C, L]");
        let (c, l) = (shape[1], shape[2]);
        assert!(groups > 0 && c % groups == 0, "group_norm: {c} channels, {groups} groups");
        assert_eq!(gamma.shape(), [c], "group_norm: gamma width");
        let per = c / groups;
        self.normalize_segments(
            "group_norm",
            per * l,
            gamma,
            beta,
            move |si, j| (si % groups) * per + j / l,
            eps,
        )
    }

    /// Batch normalization of `[batch, features]` with batch statistics.
    /// Also returns the batch mean and biased variance per feature.
    pub fn batch_norm_train(
        self,
        gamma: Var<'g, F>,
        beta: Var<'g, F>,
        eps: F,
    ) -> (Var<'g, F>, Tensor<F>, Tensor<F>) {
        let x = self.value();
        assert_eq!(x.rank(), 2, "batch_norm expects [B, n]");
        let (b, n) = (x.shape()[0], x.shape()[1]);
        let bf = F::lit(b as f64);
        let mut mean = vec![F::zero(); n];
        for row in x.data().chunks_exact(n) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= bf);
        let mut var = vec![F::zero(); n];
        for row in x.data().chunks_exact(n) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= bf);
        let y = self
            .permute(&[1, 0])
            .normalize_segments("batch_norm", b, gamma, beta, |si, _| si, eps)
            .permute(&[1, 0]);
        (
            y,
            Tensor::from_parts(vec![n], mean),
            Tensor::from_parts(vec![n], var),
        )
    }

    /// Batch normalization of `[batch, features]` with fixed statistics.
    pub fn batch_norm_eval(
        self,
        mean: &Tensor<F>,
        var: &Tensor<F>,
        gamma: Var<'g, F>,
        beta: Var<'g, F>,
        eps: F,
    ) -> Var<'g, F> {
        let x = self.value();
        let n = x.cols();
        let gv = gamma.value();
        let bv = beta.value();
        let inv_std: Vec<F> = var.data().iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let xhat: Vec<F> = x
            .data()
            .chunks_exact(n)
            .flat_map(|row| {
                row.iter()
                    .zip(mean.data())
                    .zip(&inv_std)
                    .map(|((&v, &m), &s)| (v - m) * s)
                    .collect::<Vec<_>>()
            })
            .collect();
        let y: Vec<F> = xhat
            .chunks_exact(n)
            .flat_map(|row| {
                row.iter()
                    .zip(gv.data())
                    .zip(bv.data())
                    .map(|((&h, &g), &b)| h * g + b)
                    .collect::<Vec<_>>()
            })
            .collect();
        let shape = x.shape().to_vec();
        self.graph.push(
            "batch_norm_eval",
            Tensor::from_parts(shape.clone(), y),
            &[self.id, gamma.id, beta.id],
            move |g| {
                let mut dx = vec![F::zero(); xhat.len()];
                let mut dgamma = vec![F::zero(); n];
                let mut dbeta = vec![F::zero(); n];
                for (i, (&gi, &h)) in g.data().iter().zip(&xhat).enumerate() {
                    let c = i % n;
                    dx[i] = gi * gv.data()[c] * inv_std[c];
                    dgamma[c] += gi * h;
                    dbeta[c] += gi;
                }
                vec![
                    Tensor::from_parts(shape.clone(), dx),
                    Tensor::from_parts(vec![n], dgamma),
                    Tensor::from_parts(vec![n], dbeta),
                ]
            },
        )
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Var<'g, F> {
        let x = self.value();
        assert_eq!(perm.len(), x.rank(), "permute rank");
        let y = permute_tensor(&x, perm);
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        self.graph.push("permute", y, &[self.id], move |g| {
            vec![permute_tensor(g, &inverse)]
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g, F> {
        let x = self.value();
        let old = x.shape().to_vec();
        let y = (*x).clone().reshape(shape).expect("reshape: element count");
        self.graph.push("reshape", y, &[self.id], move |g| {
            vec![g.clone().reshape(&old).expect("reshape back")]
        })
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'g, F> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let (outer, extent, inner) = around(&shape, axis);
        assert!(start + len <= extent, "narrow out of range");
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * extent * inner + start * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut ys = shape.clone();
        ys[axis] = len;
        self.graph.push("narrow", Tensor::from_parts(ys, out), &[self.id], move |g| {
            let mut dx = vec![F::zero(); outer * extent * inner];
            for o in 0..outer {
                let base = o * extent * inner + start * inner;
                dx[base..base + len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Tensor::from_parts(shape.clone(), dx)]
        })
    }

    /// Inserts a new axis of size `n` at `axis`, repeating the input.
    pub fn expand(self, axis: usize, n: usize) -> Var<'g, F> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis..].iter().product();
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            let seg = &x.data()[o * inner..(o + 1) * inner];
            for _ in 0..n {
                out.extend_from_slice(seg);
            }
        }
        let mut ys = shape.clone();
        ys.insert(axis, n);
        self.graph.push("expand", Tensor::from_parts(ys, out), &[self.id], move |g| {
            let mut dx = vec![F::zero(); outer * inner];
            for o in 0..outer {
                for r in 0..n {
                    let src = &g.data()[(o * n + r) * inner..(o * n + r + 1) * inner];
                    for (d, &s) in dx[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            vec![Tensor::from_parts(shape.clone(), dx)]
        })
    }

    /// Selects rows of a `[rows, n]` tensor (repeats allowed).
    pub fn gather_rows(self, index: &[usize]) -> Var<'g, F> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let n = x.cols();
        let mut out = Vec::with_capacity(index.len() * n);
        for &i in index {
            out.extend_from_slice(x.row(i));
        }
        let index = index.to_vec();
        self.graph.push(
            "gather_rows",
            Tensor::from_parts(vec![index.len(), n], out),
            &[self.id],
            move |g| {
                let mut dx = vec![F::zero(); shape.iter().product()];
                for (r, &i) in index.iter().enumerate() {
                    for (d, &s) in dx[i * n..(i + 1) * n].iter_mut().zip(&g.data()[r * n..(r + 1) * n]) {
                        *d += s;
                    }
                }
                vec![Tensor::from_parts(shape.clone(), dx)]
            },
        )
    }

    /// Per-feature embedding: `[B, k] -> [B, k, d]`, `y[b, j] = b[j] + x[b, j] * w[j]`.
    pub fn feature_embed(self, w: Var<'g, F>, b: Var<'g, F>) -> Var<'g, F> {
        let x = self.value();
        let wv = w.value();
        let bv = b.value();
        let (batch, k) = (x.shape()[0], x.shape()[1]);
        assert_eq!(wv.shape()[0], k, "feature_embed: feature count");
        let d = wv.shape()[1];
        let mut out = Vec::with_capacity(batch * k * d);
        for bi in 0..batch {
            for j in 0..k {
                let xv = x.at(bi, j);
                for e in 0..d {
                    out.push(bv.data()[j * d + e] + xv * wv.data()[j * d + e]);
                }
            }
        }
        self.graph.push(
            "feature_embed",
            Tensor::from_parts(vec![batch, k, d], out),
            &[self.id, w.id, b.id],
            move |g| {
                let gd = g.data();
                let mut dx = vec![F::zero(); batch * k];
                let mut dw = vec![F::zero(); k * d];
                let mut db = vec![F::zero(); k * d];
                for bi in 0..batch {
                    for j in 0..k {
                        let xv = x.at(bi, j);
                        let base = (bi * k + j) * d;
                        let mut acc = F::zero();
                        for e in 0..d {
                            let ge = gd[base + e];
                            acc += ge * wv.data()[j * d + e];
                            dw[j * d + e] += ge * xv;
                            db[j * d + e] += ge;
                        }
                        dx[bi * k + j] = acc;
                    }
                }
                vec![
                    Tensor::from_parts(vec![batch, k], dx),
                    Tensor::from_parts(vec![k, d], dw),
                    Tensor::from_parts(vec![k, d], db),
                ]
            },
        )
    }

    /// 1-D convolution with stride 1 and "same" zero padding.
    /// `x` is `[B, C_in, L]`, `w` is `[C_out, C_in, K]` (odd `K`), `b` is `[C_out]`.
    pub fn conv1d(self, w: Var<'g, F>, b: Var<'g, F>) -> Var<'g, F> {
        let x = self.value();
        let wv = w.value();
        let bv = b.value();
        let (batch, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (cout, wcin, ksize) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        assert_eq!(cin, wcin, "conv1d: channel mismatch");
        assert!(ksize % 2 == 1, "conv1d: kernel size must be odd");
        let pad = ksize / 2;
        let ck = cin * ksize;
        let rows = batch * len;
        let mut cols = vec![F::zero(); rows * ck];
        for bi in 0..batch {
            for l in 0..len {
                let row = &mut cols[(bi * len + l) * ck..(bi * len + l + 1) * ck];
                for ci in 0..cin {
                    for kk in 0..ksize {
                        let pos = l + kk;
                        if pos >= pad && pos - pad < len {
                            row[ci * ksize + kk] = x.data()[(bi * cin + ci) * len + pos - pad];
                        }
                    }
                }
            }
        }
        let mut yrows = vec![F::zero(); rows * cout];
        for r in yrows.chunks_exact_mut(cout) {
            r.copy_from_slice(bv.data());
        }
        F::gemm(rows, ck, cout, &cols, false, wv.data(), true, F::one(), &mut yrows);
        let mut y = vec![F::zero(); batch * cout * len];
        for bi in 0..batch {
            for l in 0..len {
                for co in 0..cout {
                    y[(bi * cout + co) * len + l] = yrows[(bi * len + l) * cout + co];
                }
            }
        }
        let xshape = x.shape().to_vec();
        let wshape = wv.shape().to_vec();
        self.graph.push(
            "conv1d",
            Tensor::from_parts(vec![batch, cout, len], y),
            &[self.id, w.id, b.id],
            move |g| {
                let mut grows = vec![F::zero(); rows * cout];
                for bi in 0..batch {
                    for l in 0..len {
                        for co in 0..cout {
                            grows[(bi * len + l) * cout + co] = g.data()[(bi * cout + co) * len + l];
                        }
                    }
                }
                let mut dw = vec![F::zero(); cout * ck];
                F::gemm(cout, rows, ck, &grows, true, &cols, false, F::zero(), &mut dw);
                let db = sum_to_last(&Tensor::from_parts(vec![rows, cout], grows.clone()), cout);
                let mut dcols = vec![F::zero(); rows * ck];
                F::gemm(rows, cout, ck, &grows, false, wv.data(), false, F::zero(), &mut dcols);
                let mut dx = vec![F::zero(); batch * cin * len];
                for bi in 0..batch {
                    for l in 0..len {
                        let row = &dcols[(bi * len + l) * ck..(bi * len + l + 1) * ck];
                        for ci in 0..cin {
                            for kk in 0..ksize {
                                let pos = l + kk;
                                if pos >= pad && pos - pad < len {
                                    dx[(bi * cin + ci) * len + pos - pad] += row[ci * ksize + kk];
                                }
                            }
                        }
                    }
                }
                vec![
                    Tensor::from_parts(xshape.clone(), dx),
                    Tensor::from_parts(wshape.clone(), dw),
                    db,
                ]
            },
        )
    }

    pub fn sum_all(self) -> Var<'g, F> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.graph
            .push("sum", Tensor::scalar(x.sum()), &[self.id], move |g| {
                vec![Tensor::full(&shape, g.item())]
            })
    }

    pub fn mean_all(self) -> Var<'g, F> {
        let n = self.value().len();
        self.sum_all().scale(F::one() / F::lit(n as f64))
    }

    /// Mean smooth-L1 (Huber with threshold `beta`) between `self` and `target`.
    pub fn smooth_l1(self, target: &Tensor<F>, beta: F) -> Var<'g, F> {
        let x = self.value();
        same_shape("smooth_l1", &x, target);
        let n = F::lit(x.len() as f64);
        let loss = crate::loss::smooth_l1_sum(x.data(), target.data(), beta) / n;
        let target = target.clone();
        self.graph.push("smooth_l1", Tensor::scalar(loss), &[self.id], move |g| {
            let scale = g.item() / n;
            let dx = x
                .data()
                .iter()
                .zip(target.data())
                .map(|(&p, &t)| {
                    // d = target - pred; dL/dpred = -dL/dd
                    let d = t - p;
                    let dd = if d.abs() < beta { d / beta } else { d.signum() };
                    -dd * scale
                })
                .collect();
            vec![Tensor::from_parts(x.shape().to_vec(), dx)]
        })
    }

    /// Mean softmax cross-entropy of `[N, C]` logits against class indices.
    pub fn cross_entropy(self, labels: &[usize]) -> Var<'g, F> {
        let x = self.value();
        let (n, c) = (x.rows(), x.cols());
        assert_eq!(labels.len(), n, "cross_entropy: label count");
        let mut probs = vec![F::zero(); n * c];
        let mut loss = F::zero();
        for (i, row) in x.data().chunks_exact(c).enumerate() {
            let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
            let sum: F = row.iter().map(|&v| (v - max).exp()).sum();
            for (j, &v) in row.iter().enumerate() {
                probs[i * c + j] = (v - max).exp() / sum;
            }
            loss += sum.ln() + max - row[labels[i]];
        }
        let nf = F::lit(n as f64);
        let labels = labels.to_vec();
        self.graph.push("cross_entropy", Tensor::scalar(loss / nf), &[self.id], move |g| {
            let scale = g.item() / nf;
            let mut dx = probs.clone();
            for (i, &l) in labels.iter().enumerate() {
                dx[i * c + l] -= F::one();
            }
            dx.iter_mut().for_each(|v| *v *= scale);
            vec![Tensor::from_parts(vec![n, c], dx)]
        })
    }
}

impl<F: Real> Graph<F> {
    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat<'g>(&'g self, parts: &[Var<'g, F>], axis: usize) -> Var<'g, F> {
        assert!(!parts.is_empty(), "concat of nothing");
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let first = values[0].shape().to_vec();
        let (outer, _, inner) = around(&first, axis);
        let extents: Vec<usize> = values
            .iter()
            .map(|v| {
                let s = v.shape();
                assert_eq!(s.len(), first.len(), "concat rank");
                for (d, (&a, &b)) in s.iter().zip(&first).enumerate() {
                    assert!(d == axis || a == b, "concat: {s:?} vs {first:?}");
                }
                s[axis]
            })
            .collect();
        let total: usize = extents.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &e) in values.iter().zip(&extents) {
                out.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        self.push("concat", Tensor::from_parts(shape, out), &ids, move |g| {
            let mut grads: Vec<Vec<F>> = extents.iter().map(|&e| Vec::with_capacity(outer * e * inner)).collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (gv, &e) in grads.iter_mut().zip(&extents) {
                    gv.extend_from_slice(&g.data()[offset..offset + e * inner]);
                    offset += e * inner;
                }
            }
            grads
                .into_iter()
                .zip(&shapes)
                .map(|(d, s)| Tensor::from_parts(s.clone(), d))
                .collect()
        })
    }
}
