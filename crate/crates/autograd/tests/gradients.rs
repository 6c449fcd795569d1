use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regionmix_autograd::check::{finite_difference, relative_error};
use regionmix_autograd::{concat, Dual, Graph, Tensor, Var};

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Checks d/dx of `f(x)·probe` (summed) against central differences.
fn check_unary(shape: &[usize], seed: u64, f: impl for<'g> Fn(Var<'g, f64>) -> Var<'g, f64>) {
    let x0 = random(shape, seed);
    let loss = |x: &Tensor<f64>| {
        let g = Graph::new();
        let y = f(g.leaf(x.clone()));
        let probe = g.constant(random(&y.shape(), seed + 1000));
        y.mul(probe).sum().item()
    };
    let g = Graph::new();
    let x = g.leaf(x0.clone());
    let y = f(x);
    let probe = g.constant(random(&y.shape(), seed + 1000));
    let grads = g.backward(y.mul(probe).sum());
    let analytic = grads.get_or_zeros(x);
    let numeric = finite_difference(loss, &x0, 1e-6);
    let err = relative_error(&analytic, &numeric);
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn elementwise_ops() {
    check_unary(&[2, 3, 4], 1, |x| x.exp());
    check_unary(&[2, 3, 4], 2, |x| x.tanh());
    check_unary(&[2, 3, 4], 3, |x| x.sigmoid());
    check_unary(&[2, 3, 4], 4, |x| x.softplus());
    check_unary(&[2, 3, 4], 5, |x| x.square().add_scalar(1.0).sqrt().ln());
    check_unary(&[2, 3, 4], 6, |x| x.leaky_relu(0.2).scale(3.0));
    check_unary(&[2, 3, 4], 7, |x| x.abs());
}

#[test]
fn broadcasting_binary_ops() {
    let c = random(&[3, 1], 9);
    check_unary(&[2, 3, 4], 8, move |x| {
        let k = x.graph().constant(c.clone());
        x.mul(k).add(k).sub(x.div(k.add_scalar(3.0)))
    });
    // gradient flowing into the broadcast operand
    check_unary(&[3, 1], 10, |x| {
        let big = x.graph().constant(random(&[2, 3, 4], 11));
        big.mul(x).div(x.square().add_scalar(2.0)).sub(x)
    });
}

#[test]
fn reductions_and_shapes() {
    check_unary(&[2, 3, 4], 12, |x| x.sum_to(&[1, 3, 1]).square());
    check_unary(&[3, 1], 13, |x| x.broadcast_to(&[2, 3, 5]).tanh());
    check_unary(&[2, 6, 2], 14, |x| x.narrow(1, 2, 3).exp());
    check_unary(&[3, 2, 2], 15, |x| x.gather_rows(&[Some(2), None, Some(2), Some(0)]));
    check_unary(&[2, 3, 4], 16, |x| x.transpose_last2().reshape(&[8, 3]));
    check_unary(&[2, 2, 3], 17, |x| {
        let y = x.exp();
        concat(&[x, y, x.narrow(1, 0, 1)], 1)
    });
    check_unary(&[2, 3], 18, |x| x.mean().add(x.sum()));
}

#[test]
fn matmul_variants() {
    let b = random(&[4, 5], 20);
    check_unary(&[3, 4], 19, move |x| x.matmul(x.graph().constant(b.clone())));
    let bb = random(&[2, 4, 5], 21);
    check_unary(&[4, 4], 22, move |x| x.matmul(x.graph().constant(bb.clone())));
    let a = random(&[3, 2, 4], 23);
    check_unary(&[3, 4, 2], 24, move |x| x.graph().constant(a.clone()).matmul(x));
    check_unary(&[1, 3, 3], 25, |x| x.matmul(x.transpose_last2()));
}

#[test]
fn conv_input_weight_and_bias() {
    let w = random(&[3, 2, 3, 3], 30);
    let b = random(&[3], 31);
    check_unary(&[2, 2, 4, 5], 32, move |x| {
        let g = x.graph();
        x.conv2d(g.constant(w.clone()), Some(g.constant(b.clone())))
    });
    let x = random(&[2, 2, 4, 4], 33);
    check_unary(&[3, 2, 3, 3], 34, move |w| w.graph().constant(x.clone()).conv2d(w, None));
    let x = random(&[2, 2, 3, 3], 35);
    let w = random(&[4, 2, 1, 1], 36);
    check_unary(&[4], 37, move |b| {
        let g = b.graph();
        g.constant(x.clone()).conv2d(g.constant(w.clone()), Some(b))
    });
    // pointwise path
    let w1 = random(&[3, 2, 1, 1], 38);
    check_unary(&[1, 2, 3, 3], 39, move |x| x.conv2d(x.graph().constant(w1.clone()), None));
}

#[test]
fn conv_matches_direct_sum() {
    let x = random(&[1, 2, 4, 4], 40);
    let w = random(&[1, 2, 3, 3], 41);
    let g = Graph::new();
    let y = g.constant(x.clone()).conv2d(g.constant(w.clone()), None).value();
    for oy in 0..4 {
        for ox in 0..4 {
            let mut acc = 0.0;
            for c in 0..2 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (iy, ix) = (oy as isize + ky as isize - 1, ox as isize + kx as isize - 1);
                        if (0..4).contains(&iy) && (0..4).contains(&ix) {
                            acc += x.data()[c * 16 + iy as usize * 4 + ix as usize]
                                * w.data()[c * 9 + ky * 3 + kx];
                        }
                    }
                }
            }
            assert!((acc - y.data()[oy * 4 + ox]).abs() < 1e-12);
        }
    }
}

#[test]
fn resampling_and_normalization() {
    check_unary(&[2, 2, 4, 4], 50, |x| x.avg_pool2());
    check_unary(&[1, 2, 3, 4], 51, |x| x.upsample2());
    check_unary(&[1, 2, 8, 6], 52, |x| x.resize_bilinear(3, 4));
    check_unary(&[2, 3, 4, 4], 53, |x| x.instance_norm(1e-5));
    check_unary(&[2, 4, 3, 3], 54, |x| x.softmax_channels());
    check_unary(&[4, 2, 3, 3], 55, |w| w.spectral_normalize(&[0.5, 0.5, 0.5, 0.5], &[1.0 / 18f64.sqrt(); 18]));
}

#[test]
fn softmax_channels_sum_to_one() {
    let g = Graph::new();
    let y = g.constant(random(&[2, 5, 3, 3], 60).map(|v| v * 30.0)).softmax_channels().value();
    for b in 0..2 {
        for p in 0..9 {
            let s: f64 = (0..5).map(|c| y.data()[b * 45 + c * 9 + p]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn dual_forward_over_reverse_gives_hessian_vector_product() {
    // f(w, x) = Σ tanh(conv(x, w)); d/dw ⟨∇ₓf, v⟩ against finite differences.
    let w0 = random(&[2, 1, 3, 3], 70);
    let x0 = random(&[1, 1, 4, 4], 71);
    let v0 = random(&[1, 1, 4, 4], 72);

    let grad_x_dot_v = |w: &Tensor<f64>| {
        let g = Graph::new();
        let x = g.leaf(x0.clone());
        let y = x.conv2d(g.constant(w.clone()), None).tanh().sum();
        let gx = g.backward(y).get_or_zeros(x);
        gx.data().iter().zip(v0.data()).map(|(a, b)| a * b).sum::<f64>()
    };
    let numeric = finite_difference(grad_x_dot_v, &w0, 1e-5);

    let g = Graph::<Dual<f64>>::new();
    let xd = Tensor::new(
        x0.shape(),
        x0.data().iter().zip(v0.data()).map(|(&a, &b)| Dual::new(a, b)).collect(),
    );
    let w = g.leaf(w0.cast());
    let y = g.constant(xd).conv2d(w, None).tanh().sum();
    let gw = g.backward(y).get_or_zeros(w);
    let hvp = Tensor::new(gw.shape(), gw.data().iter().map(|d| d.du).collect());
    let err = relative_error(&hvp, &numeric);
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn constants_do_not_record_backward() {
    let g = Graph::<f64>::new();
    let a = g.constant(Tensor::full(&[2], 1.0));
    let b = a.exp().add(a);
    assert!(!b.requires_grad());
    let l = g.leaf(Tensor::full(&[2], 1.0));
    let c = b.mul(l).sum();
    let grads = g.backward(c);
    assert!(grads.get(a).is_none());
    let e = std::f64::consts::E + 1.0;
    assert_eq!(grads.get(l).unwrap().data(), &[e, e]);
}

#[test]
fn row_norms_with_safe_zero() {
    check_unary(&[3, 4], 40, |x| x.norm_last());
    let g = Graph::<f64>::new();
    let x = g.leaf(Tensor::zeros(&[2, 3]));
    let grads = g.backward(x.norm_last().sum());
    assert!(grads.get_or_zeros(x).data().iter().all(|&v| v == 0.0));
}
