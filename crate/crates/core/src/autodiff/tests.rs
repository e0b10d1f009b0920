//! Gradient checks: every op against central finite differences, plus the
//! training-loop plumbing (Adam, determinism, error paths).

use std::rc::Rc;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

#[cfg(not(feature = "f64"))]
const GRAD_TOL: Real = 1e-3;
#[cfg(feature = "f64")]
const GRAD_TOL: Real = 1e-6;

#[cfg(not(feature = "f64"))]
const FD_H: Real = 1e-3;
#[cfg(feature = "f64")]
const FD_H: Real = 1e-5;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Max scaled relative error between analytic and numerical gradients.
#[cfg(feature = "f64")]
fn grad_rel_error(analytic: &[Real], numeric: &[Real]) -> Real {
    let scale = analytic
        .iter()
        .chain(numeric.iter())
        .fold(0.0 as Real, |a, &v| a.max(v.abs()))
        .max(1e-6);
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(0.01 * scale))
        .fold(0.0, Real::max)
}

/// Central finite differences of a scalar-valued function of one tensor.
#[cfg(feature = "f64")]
fn numerical_grad(f: &dyn Fn(&Tensor) -> Real, x: &Tensor) -> Vec<Real> {
    let mut out = Vec::with_capacity(x.numel());
    let mut xp = x.clone();
    for i in 0..x.numel() {
        let orig = x.data[i];
        xp.data[i] = orig + FD_H;
        let fp = f(&xp);
        xp.data[i] = orig - FD_H;
        let fm = f(&xp);
        xp.data[i] = orig;
        out.push((fp - fm) / (2.0 * FD_H));
    }
    out
}

/// Check the analytic gradient against central finite differences. The f64
/// build compares every entry at 1e-6; the f32 build uses directional
/// derivatives along random unit vectors (the per-entry quotient drowns in
/// f32 evaluation noise for losses that sum hundreds of terms, while the
/// directional projection keeps the same Jacobian information).
fn check_grad_fn(f: &dyn Fn(&Tensor) -> Real, x: &Tensor, analytic: &[Real], label: &str) {
    #[cfg(feature = "f64")]
    {
        let numeric = numerical_grad(f, x);
        let err = grad_rel_error(analytic, &numeric);
        assert!(err <= GRAD_TOL, "{label}: per-entry gradient error {err}");
    }

    let grad_norm = analytic.iter().map(|a| a * a).sum::<Real>().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1CE);
    for trial in 0..6 {
        let norm = (x.numel() as Real).sqrt();
        let dir: Vec<Real> = (0..x.numel())
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 } / norm)
            .collect();
        let mut xp = x.clone();
        let mut xm = x.clone();
        for i in 0..x.numel() {
            xp.data[i] += FD_H * dir[i];
            xm.data[i] -= FD_H * dir[i];
        }
        let fd = (f(&xp) - f(&xm)) / (2.0 * FD_H);
        let proj: Real = analytic.iter().zip(dir.iter()).map(|(a, d)| a * d).sum();
        let denom = grad_norm.max(fd.abs()).max(1e-6);
        let err = (fd - proj).abs() / denom;
        assert!(
            err <= GRAD_TOL,
            "{label}: directional gradient error {err} on trial {trial} (fd {fd} vs {proj})"
        );
    }
}

/// Check the analytic gradient against central finite differences. The f64
/// build compares every entry at 1e-6; both builds run the directional
/// (dot-product) test, whose error is normalized by the gradient norm so
/// f32 evaluation noise does not swamp small projections.
fn check_grad(build: &dyn Fn(&mut Graph, Var) -> Var, x: &Tensor, label: &str) {
    let f = |t: &Tensor| -> Real {
        let mut g = Graph::new();
        let v = g.param(t.clone());
        let loss = build(&mut g, v);
        g.value(loss).item()
    };
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let loss = build(&mut g, v);
    g.backward(loss).unwrap();
    let analytic = g.grad(v).unwrap().to_vec();
    check_grad_fn(&f, x, &analytic, label);
}

#[test]
fn sum_gradient_is_ones() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(&[4], vec![1.0, -2.0, 3.0, 0.5]));
    let loss = g.sum_all(x);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
}

#[test]
fn norm_squared_gradient_is_2x() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(&[3], vec![1.0, -2.0, 3.0]));
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum_all(sq);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 6.0]);
}

#[test]
fn backward_twice_errors() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(2.0));
    let loss = g.sum_all(x);
    g.backward(loss).unwrap();
    assert!(matches!(g.backward(loss), Err(AutodiffError::BackwardTwice)));
}

#[test]
fn non_scalar_loss_rejected() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(&[2], vec![1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(AutodiffError::NotScalarLoss(_))));
}

#[test]
fn shape_mismatch_reports_both_shapes() {
    let mut g = Graph::new();
    let a = g.leaf(Tensor::zeros(&[2, 3]));
    let b = g.leaf(Tensor::zeros(&[3, 2]));
    let err = g.add(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("(2,3)") && msg.contains("(3,2)"), "message: {msg}");
}

#[test]
fn elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&[2, 3], &mut rng);
    let c = rand_tensor(&[2, 3], &mut rng);

    check_grad(
        &|g, v| {
            let cv = g.leaf(c.clone());
            let s = g.add(v, cv).unwrap();
            g.sum_all(s)
        },
        &x,
        "add",
    );
    check_grad(
        &|g, v| {
            let cv = g.leaf(c.clone());
            let s = g.sub(v, cv).unwrap();
            let sq = g.mul(s, s).unwrap();
            g.sum_all(sq)
        },
        &x,
        "sub+mul",
    );
    check_grad(
        &|g, v| {
            let s = g.scale(v, 2.5);
            let s = g.add_scalar(s, 0.75);
            let sq = g.mul(s, s).unwrap();
            g.mean_all(sq)
        },
        &x,
        "scale+add_scalar",
    );
}

#[test]
fn nonlinearity_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // keep values away from relu/clamp kinks
    let x = Tensor::from_vec(
        &[2, 4],
        (0..8)
            .map(|_| {
                let v: Real = rng.random_range(0.2..1.5);
                if rng.random_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect(),
    );
    let probe = rand_tensor(&[2, 4], &mut rng);
    check_grad(
        &|g, v| {
            let r = g.relu(v);
            let pv = g.leaf(probe.clone());
            let p = g.mul(r, pv).unwrap();
            g.sum_all(p)
        },
        &x,
        "relu",
    );
    check_grad(
        &|g, v| {
            let r = g.leaky_relu(v, 0.2);
            let pv = g.leaf(probe.clone());
            let p = g.mul(r, pv).unwrap();
            g.sum_all(p)
        },
        &x,
        "leaky_relu",
    );
    check_grad(
        &|g, v| {
            let s = g.sigmoid(v);
            let pv = g.leaf(probe.clone());
            let p = g.mul(s, pv).unwrap();
            g.sum_all(p)
        },
        &x,
        "sigmoid",
    );
    // log over strictly positive inputs
    let xp = Tensor::from_vec(&[8], (0..8).map(|i| 0.5 + 0.3 * i as Real).collect());
    check_grad(
        &|g, v| {
            let l = g.log(v);
            g.sum_all(l)
        },
        &xp,
        "log",
    );
    // clamp floor: half the entries below, half above; grads flow above only
    let xc = Tensor::from_vec(&[6], vec![0.05, 0.4, 0.9, 0.02, 1.4, 0.3]);
    check_grad(
        &|g, v| {
            let c = g.clamp_min(v, 0.1);
            let l = g.log(c);
            g.sum_all(l)
        },
        &xc,
        "clamp_min+log",
    );
}

#[test]
fn softmax_channel_gradients_and_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&[2, 2, 3, 3, 3], &mut rng);
    let x_small = rand_tensor(&[1, 2, 2, 2, 2], &mut rng);
    {
        let mut g = Graph::new();
        let v = g.leaf(x.clone());
        let s = g.softmax_channel(v).unwrap();
        let sv = g.value(s);
        // channels sum to 1 per voxel
        let inner = 27;
        for o in 0..2 {
            for i in 0..inner {
                let sum: Real = (0..2).map(|c| sv.data[(o * 2 + c) * inner + i]).sum();
                assert!((sum - 1.0).abs() < 1e-6);
                for c in 0..2 {
                    let p = sv.data[(o * 2 + c) * inner + i];
                    assert!(p > 0.0 && p < 1.0);
                }
            }
        }
    }
    let w = rand_tensor(&[1, 2, 2, 2, 2], &mut rng);
    check_grad(
        &|g, v| {
            let s = g.softmax_channel(v).unwrap();
            let wv = g.leaf(w.clone());
            let p = g.mul(s, wv).unwrap();
            g.sum_all(p)
        },
        &x_small,
        "softmax_channel",
    );
}

#[test]
fn batchnorm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&[2, 2, 2, 2, 2], &mut rng);
    let gamma = Tensor::from_vec(&[2], vec![1.1, 0.9]);
    let beta = Tensor::from_vec(&[2], vec![0.1, -0.2]);
    let probe = rand_tensor(&[2, 2, 2, 2, 2], &mut rng);

    // w.r.t. x
    check_grad(
        &|g, v| {
            let gm = g.leaf(gamma.clone());
            let bt = g.leaf(beta.clone());
            let y = g.batchnorm(v, gm, bt, 1e-5).unwrap();
            let pv = g.leaf(probe.clone());
            let p = g.mul(y, pv).unwrap();
            g.sum_all(p)
        },
        &x,
        "batchnorm x",
    );
    // w.r.t. gamma
    let f_gamma = |t: &Tensor| -> Real {
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let gm = g.param(t.clone());
        let bt = g.leaf(beta.clone());
        let y = g.batchnorm(xv, gm, bt, 1e-5).unwrap();
        let pv = g.leaf(probe.clone());
        let p = g.mul(y, pv).unwrap();
        let loss = g.sum_all(p);
        g.value(loss).item()
    };
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let gm = g.param(gamma.clone());
    let bt = g.param(beta.clone());
    let y = g.batchnorm(xv, gm, bt, 1e-5).unwrap();
    let pv = g.leaf(probe.clone());
    let p = g.mul(y, pv).unwrap();
    let loss = g.sum_all(p);
    g.backward(loss).unwrap();
    let analytic_gm = g.grad(gm).unwrap().to_vec();
    check_grad_fn(&f_gamma, &gamma, &analytic_gm, "batchnorm gamma");
    // beta gradient equals the probe sums per channel
    let bgrad = g.grad(bt).unwrap();
    for c in 0..2 {
        let mut want: Real = 0.0;
        for o in 0..2 {
            for i in 0..8 {
                want += probe.data[(o * 2 + c) * 8 + i];
            }
        }
        assert!((bgrad[c] - want).abs() <= 1e-4 * want.abs().max(1.0));
    }
}

#[test]
fn linear_and_bias_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&[2, 3], &mut rng);
    let w = rand_tensor(&[3, 2], &mut rng);
    let probe = rand_tensor(&[2, 2], &mut rng);
    check_grad(
        &|g, v| {
            let wv = g.leaf(w.clone());
            let y = g.linear(v, wv).unwrap();
            let pv = g.leaf(probe.clone());
            let p = g.mul(y, pv).unwrap();
            g.sum_all(p)
        },
        &x,
        "linear x",
    );
    let f_w = |t: &Tensor| -> Real {
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let wv = g.param(t.clone());
        let y = g.linear(xv, wv).unwrap();
        let pv = g.leaf(probe.clone());
        let p = g.mul(y, pv).unwrap();
        let loss = g.sum_all(p);
        g.value(loss).item()
    };
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let wv = g.param(w.clone());
    let y = g.linear(xv, wv).unwrap();
    let pv = g.leaf(probe.clone());
    let p = g.mul(y, pv).unwrap();
    let loss = g.sum_all(p);
    g.backward(loss).unwrap();
    let analytic_w = g.grad(wv).unwrap().to_vec();
    check_grad_fn(&f_w, &w, &analytic_w, "linear w");

    let xb = rand_tensor(&[1, 2, 2, 2, 2], &mut rng);
    let b = rand_tensor(&[2], &mut rng);
    let probe_b = rand_tensor(&[1, 2, 2, 2, 2], &mut rng);
    check_grad(
        &|g, v| {
            let bv = g.leaf(b.clone());
            let y = g.bias_add(v, bv).unwrap();
            let pv = g.leaf(probe_b.clone());
            let p = g.mul(y, pv).unwrap();
            g.sum_all(p)
        },
        &xb,
        "bias_add x",
    );
}

#[test]
fn conv3d_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&[1, 1, 4, 4, 4], &mut rng);
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let w = g.leaf(Tensor::from_vec(&[1, 1, 1, 1, 1], vec![1.0]));
    let y = g.conv3d(xv, w, 1, 0).unwrap();
    assert_eq!(g.value(y).shape, vec![1, 1, 4, 4, 4]);
    assert_eq!(g.value(y).data, x.data);
}

#[test]
fn conv3d_transpose_doubles_side() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [2usize, 3, 5] {
        let x = rand_tensor(&[1, 2, n, n, n], &mut rng);
        let w = rand_tensor(&[2, 3, 4, 4, 4], &mut rng);
        let mut g = Graph::new();
        let xv = g.leaf(x);
        let wv = g.leaf(w);
        let y = g.conv3d_transpose(xv, wv, 2, 1).unwrap();
        assert_eq!(g.value(y).shape, vec![1, 3, 2 * n, 2 * n, 2 * n]);
    }
}

#[test]
fn conv3d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (stride, pad) in [(1usize, 1usize), (2, 1)] {
        let x = rand_tensor(&[1, 2, 3, 3, 3], &mut rng);
        let w = rand_tensor(&[2, 2, 2, 2, 2], &mut rng);
        let out_side = (3 + 2 * pad - 2) / stride + 1;
        let probe = rand_tensor(&[1, 2, out_side, out_side, out_side], &mut rng);
        check_grad(
            &|g, v| {
                let wv = g.leaf(w.clone());
                let y = g.conv3d(v, wv, stride, pad).unwrap();
                let pv = g.leaf(probe.clone());
                let p = g.mul(y, pv).unwrap();
                g.sum_all(p)
            },
            &x,
            &format!("conv3d x s{stride}p{pad}"),
        );
        let f_w = |t: &Tensor| -> Real {
            let mut g = Graph::new();
            let xv = g.leaf(x.clone());
            let wv = g.param(t.clone());
            let y = g.conv3d(xv, wv, stride, pad).unwrap();
            let pv = g.leaf(probe.clone());
            let p = g.mul(y, pv).unwrap();
            let loss = g.sum_all(p);
            g.value(loss).item()
        };
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let wv = g.param(w.clone());
        let y = g.conv3d(xv, wv, stride, pad).unwrap();
        let pv = g.leaf(probe.clone());
        let p = g.mul(y, pv).unwrap();
        let loss = g.sum_all(p);
        g.backward(loss).unwrap();
        let analytic_w = g.grad(wv).unwrap().to_vec();
        check_grad_fn(&f_w, &w, &analytic_w, &format!("conv3d w s{stride}p{pad}"));
    }
}

#[test]
fn conv3d_transpose_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&[1, 2, 2, 2, 2], &mut rng);
    let w = rand_tensor(&[2, 2, 4, 4, 4], &mut rng);
    let probe = rand_tensor(&[1, 2, 4, 4, 4], &mut rng);
    check_grad(
        &|g, v| {
            let wv = g.leaf(w.clone());
            let y = g.conv3d_transpose(v, wv, 2, 1).unwrap();
            let pv = g.leaf(probe.clone());
            let p = g.mul(y, pv).unwrap();
            g.sum_all(p)
        },
        &x,
        "conv3d_transpose x",
    );
    let f_w = |t: &Tensor| -> Real {
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let wv = g.param(t.clone());
        let y = g.conv3d_transpose(xv, wv, 2, 1).unwrap();
        let pv = g.leaf(probe.clone());
        let p = g.mul(y, pv).unwrap();
        let loss = g.sum_all(p);
        g.value(loss).item()
    };
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let wv = g.param(w.clone());
    let y = g.conv3d_transpose(xv, wv, 2, 1).unwrap();
    let pv = g.leaf(probe.clone());
    let p = g.mul(y, pv).unwrap();
    let loss = g.sum_all(p);
    g.backward(loss).unwrap();
    let analytic_w = g.grad(wv).unwrap().to_vec();
    check_grad_fn(&f_w, &w, &analytic_w, "conv3d_transpose w");
}

#[test]
fn chained_conv_relu_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = rand_tensor(&[1, 1, 3, 3, 3], &mut rng);
    let w1 = {
        let mut t = rand_tensor(&[2, 1, 2, 2, 2], &mut rng);
        for v in t.data.iter_mut() {
            *v *= 0.5;
        }
        t
    };
    let w2 = {
        let mut t = rand_tensor(&[1, 2, 2, 2, 2], &mut rng);
        for v in t.data.iter_mut() {
            *v *= 0.5;
        }
        t
    };
    let probe = rand_tensor(&[1, 1, 5, 5, 5], &mut rng);
    check_grad(
        &|g, v| {
            let w1v = g.leaf(w1.clone());
            let w2v = g.leaf(w2.clone());
            let y1 = g.conv3d(v, w1v, 1, 1).unwrap();
            let a1 = g.leaky_relu(y1, 0.2);
            let y2 = g.conv3d(a1, w2v, 1, 1).unwrap();
            let s = g.sigmoid(y2);
            let pv = g.leaf(probe.clone());
            let p = g.mul(s, pv).unwrap();
            g.sum_all(p)
        },
        &x,
        "conv+relu chain",
    );
}

#[test]
fn reduction_and_shape_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&[2, 3, 2, 2], &mut rng);
    check_grad(
        &|g, v| {
            let m = g.mean_spatial(v).unwrap();
            let sq = g.mul(m, m).unwrap();
            g.sum_all(sq)
        },
        &x,
        "mean_spatial",
    );
    check_grad(
        &|g, v| {
            let r = g.reshape(v, &[6, 4]).unwrap();
            let m = g.mean_all(r);
            let sq = g.mul(m, m).unwrap();
            g.sum_all(sq)
        },
        &x,
        "reshape+mean_all",
    );
}

#[test]
fn stack_scalars_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = rand_tensor(&[5], &mut rng);
    check_grad(
        &|g, v| {
            let s = g.sum_all(v);
            let m = g.mean_all(v);
            let stacked = g.stack_scalars(&[s, m]).unwrap();
            let sq = g.mul(stacked, stacked).unwrap();
            g.sum_all(sq)
        },
        &x,
        "stack_scalars",
    );
}

fn test_filter(n: usize, seed: u64) -> Rc<Vec<Complex<Real>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Rc::new(
        (0..n * n)
            .map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect(),
    )
}

#[test]
fn fft_chain_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 8usize;
    let x = rand_tensor(&[n, n], &mut rng);
    let filt = test_filter(n, 99);
    let probe = rand_tensor(&[n, n], &mut rng);

    // fft2 -> freq_mul_ifft -> modulus -> weighted sum
    check_grad(
        &|g, v| {
            let xh = g.fft2(v).unwrap();
            let u = g.freq_mul_ifft(xh, filt.clone()).unwrap();
            let m = g.modulus(u).unwrap();
            let pv = g.leaf(probe.clone());
            let p = g.mul(m, pv).unwrap();
            g.sum_all(p)
        },
        &x,
        "fft2+freq_mul_ifft+modulus",
    );

    // circ shift composes
    let probe2 = rand_tensor(&[n, n], &mut rng);
    check_grad(
        &|g, v| {
            let s = g.circ_shift2d(v, 3, -2).unwrap();
            let xh = g.fft2(s).unwrap();
            let u = g.freq_mul_ifft(xh, filt.clone()).unwrap();
            let m = g.modulus(u).unwrap();
            let pv = g.leaf(probe2.clone());
            let p = g.mul(m, pv).unwrap();
            g.sum_all(p)
        },
        &x,
        "circ_shift+fft chain",
    );
}

#[test]
fn freq_subgrid_mean_matches_explicit_path_and_grads() {
    // weights emulate a low-pass at the alias lattice; compare against the
    // explicit smooth-then-subsample computed with plain FFT calls
    let n = 16usize;
    let d = 4usize; // subsample stride
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = rand_tensor(&[n, n], &mut rng);
    // smooth low-pass in frequency
    let phi: Vec<Real> = (0..n * n)
        .map(|i| {
            let kx = (i % n) as i64;
            let ky = (i / n) as i64;
            let fx = if kx <= n as i64 / 2 { kx } else { kx - n as i64 };
            let fy = if ky <= n as i64 / 2 { ky } else { ky - n as i64 };
            (-0.05 * ((fx * fx + fy * fy) as Real)).exp()
        })
        .collect();
    // lattice weights: value = (1/N^2) sum over lattice of X(k) phi(k)
    let mut weights = Vec::new();
    for a in 0..d {
        for b in 0..d {
            let kx = a * (n / d);
            let ky = b * (n / d);
            let idx = ky * n + kx;
            weights.push((idx, phi[idx] / (n * n) as Real));
        }
    }
    let weights = Rc::new(weights);

    // explicit oracle: ifft(X * phi) subsampled mean
    let explicit = |t: &Tensor| -> Real {
        let mut g = Graph::new();
        let v = g.leaf(t.clone());
        let xh = g.fft2(v).unwrap();
        let filt: Rc<Vec<Complex<Real>>> =
            Rc::new(phi.iter().map(|&p| Complex::new(p, 0.0)).collect());
        let u = g.freq_mul_ifft(xh, filt).unwrap();
        let uv = g.value(u);
        let m = n / d;
        let mut acc = 0.0;
        for r in 0..m {
            for c in 0..m {
                acc += uv.data[(r * d) * n + c * d]; // real plane
            }
        }
        acc / (m * m) as Real
    };

    let mut g = Graph::new();
    let v = g.param(x.clone());
    let xh = g.fft2(v).unwrap();
    let s = g.freq_subgrid_mean(xh, weights.clone()).unwrap();
    let got = g.value(s).item();
    let want = explicit(&x);
    assert!(
        (got - want).abs() <= 1e-4 * want.abs().max(1.0),
        "fused {got} vs explicit {want}"
    );

    check_grad(
        &|g, v| {
            let xh = g.fft2(v).unwrap();
            let s = g.freq_subgrid_mean(xh, weights.clone()).unwrap();
            g.scale(s, 3.0)
        },
        &x,
        "freq_subgrid_mean",
    );
}

#[test]
fn gram_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let d = 5usize;
    let x = rand_tensor(&[2 * d], &mut rng);
    let target: Rc<Vec<f64>> = {
        let raw: Vec<f64> = (0..d * d).map(|_| rng.random_range(-0.5..0.5)).collect();
        Rc::new(
            (0..d * d)
                .map(|i| {
                    let (r, c) = (i / d, i % d);
                    0.5 * (raw[r * d + c] + raw[c * d + r])
                })
                .collect(),
        )
    };
    check_grad(
        &|g, v| {
            // split one parameter vector into two ensemble members
            let mut members = Vec::new();
            for half in 0..2 {
                let mut scalars = Vec::new();
                for i in 0..d {
                    // extract scalar via mask multiply + sum
                    let mut mask = vec![0.0 as Real; 2 * d];
                    mask[half * d + i] = 1.0;
                    let mv = g.leaf(Tensor::from_vec(&[2 * d], mask));
                    let prod = g.mul(v, mv).unwrap();
                    scalars.push(g.sum_all(prod));
                }
                members.push(g.stack_scalars(&scalars).unwrap());
            }
            g.gram_frobenius_loss(&members, target.clone()).unwrap()
        },
        &x,
        "gram_frobenius_loss",
    );
}

#[test]
fn forward_backward_deterministic() {
    let run = || -> (Vec<Real>, Vec<Real>) {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = rand_tensor(&[1, 2, 4, 4, 4], &mut rng);
        let w = rand_tensor(&[2, 2, 3, 3, 3], &mut rng);
        let mut g = Graph::new();
        let xv = g.param(x);
        let wv = g.param(w);
        let y = g.conv3d(xv, wv, 1, 1).unwrap();
        let a = g.sigmoid(y);
        let loss = g.mean_all(a);
        g.backward(loss).unwrap();
        (g.value(loss).data.clone(), g.grad(wv).unwrap().to_vec())
    };
    let (l1, g1) = run();
    let (l2, g2) = run();
    assert_eq!(l1, l2);
    assert_eq!(g1, g2);
}

#[test]
fn adam_zero_grad_leaves_params() {
    let mut t = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]);
    let mut state = AdamState::new(AdamParams::default(), &[&t]);
    let zeros = vec![0.0 as Real; 3];
    state.step(&mut [&mut t], &[Some(&zeros)]);
    assert_eq!(t.data, vec![1.0, 2.0, 3.0]);
}

#[test]
fn adam_matches_scalar_recurrence_oracle() {
    let lr = 0.01 as Real;
    let mut t = Tensor::scalar(0.0);
    let mut state = AdamState::new(
        AdamParams { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 },
        &[&t],
    );
    let g = 0.5 as Real;
    // independent scalar recurrence
    let (mut m, mut v, mut x) = (0.0 as Real, 0.0 as Real, 0.0 as Real);
    for k in 1..=25 {
        state.step(&mut [&mut t], &[Some(&[g])]);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - (0.9 as Real).powi(k));
        let vh = v / (1.0 - (0.999 as Real).powi(k));
        x -= lr * mh / (vh.sqrt() + 1e-8);
        assert!((t.data[0] - x).abs() < 1e-5, "step {k}: {} vs {x}", t.data[0]);
    }
    // constant gradient drives steps toward lr * sign(g)
    assert!((x + 25.0 * lr).abs() < 25.0 * lr * 0.05, "total displacement {x}");
}

#[test]
fn adam_beta_zero_reduces_to_sign_steps() {
    let mut t = Tensor::scalar(1.0);
    let mut state = AdamState::new(
        AdamParams { lr: 0.1, beta1: 0.0, beta2: 0.0, eps: 1e-8 },
        &[&t],
    );
    state.step(&mut [&mut t], &[Some(&[0.04])]);
    // m = g, v = g^2 -> step = lr * g / (|g| + eps) ~= lr * sign(g)
    assert!((t.data[0] - (1.0 - 0.1)).abs() < 1e-5, "{}", t.data[0]);
}
