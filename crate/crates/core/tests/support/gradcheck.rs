//! Central finite-difference checks of every differentiable tape operation.
//!
//! Each op has an independent `f64` reference forward written with plain
//! loops. Numerical gradients come from that reference (h = 1e-3); analytic
//! gradients come from the tape. The loss is `mean((out - target)^2)` with a
//! random target, so upstream gradients are dense and non-uniform.

use fedstorm::tensor::{Padding, Tape, Tensor};
use fedstorm::unet::{UNetConfig, UNetParams};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const H: f64 = 1e-3;
const REL_TOL: f64 = 1e-3;

fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

fn random_vec(r: &mut Xoshiro256PlusPlus, n: usize) -> Vec<f32> {
    (0..n).map(|_| r.random_range(-1.0f32..1.0)).collect()
}

fn to64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn mse64(out: &[f64], target: &[f64]) -> f64 {
    out.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / out.len() as f64
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

/// Numerical gradient of `loss(inputs)` with respect to input `which`.
fn numeric_grad(inputs: &[Vec<f64>], which: usize, loss: &dyn Fn(&[Vec<f64>]) -> f64) -> Vec<f64> {
    let mut work = inputs.to_vec();
    (0..inputs[which].len())
        .map(|i| {
            let x0 = work[which][i];
            work[which][i] = x0 + H;
            let up = loss(&work);
            work[which][i] = x0 - H;
            let down = loss(&work);
            work[which][i] = x0;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn assert_grad_close(label: &str, analytic: &[f32], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "{label}: length");
    let mut worst = 0.0f64;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = rel_err(a as f64, n);
        assert!(e < REL_TOL, "{label}[{i}]: analytic {a} vs numeric {n} (rel {e:.2e})");
        worst = worst.max(e);
    }
    worst
}

fn assert_forward_close(label: &str, engine: &[f32], reference: &[f64]) {
    for (i, (&e, &r)) in engine.iter().zip(reference).enumerate() {
        assert!(
            (e as f64 - r).abs() < 1e-4 * (1.0 + r.abs()),
            "{label} forward[{i}]: {e} vs {r}"
        );
    }
}

fn conv_ref(
    x: &[f64],
    (cin, h, w): (usize, usize, usize),
    wt: &[f64],
    cout: usize,
    k: usize,
    b: &[f64],
    pad: usize,
) -> Vec<f64> {
    let ho = h + 2 * pad - k + 1;
    let wo = w + 2 * pad - k + 1;
    let mut out = vec![0.0; cout * ho * wo];
    for co in 0..cout {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = b[co];
                for ci in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = oy as isize + ky as isize - pad as isize;
                            let ix = ox as isize + kx as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc += wt[((co * cin + ci) * k + ky) * k + kx]
                                    * x[(ci * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                }
                out[(co * ho + oy) * wo + ox] = acc;
            }
        }
    }
    out
}

fn group_norm_ref(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    groups: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Vec<f64> {
    let per = c / groups * h * w;
    let plane = h * w;
    let mut out = vec![0.0; x.len()];
    for g in 0..groups {
        let xs = &x[g * per..(g + 1) * per];
        let mean = xs.iter().sum::<f64>() / per as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per as f64;
        for i in g * per..(g + 1) * per {
            let ch = i / plane;
            out[i] = (x[i] - mean) / (var + eps).sqrt() * gamma[ch] + beta[ch];
        }
    }
    out
}

fn silu_ref(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v / (1.0 + (-v).exp())).collect()
}

fn maxpool_ref(x: &[f64], (c, h, w): (usize, usize, usize)) -> Vec<f64> {
    let mut out = Vec::new();
    for ch in 0..c {
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x[(ch * h + 2 * oy + dy) * w + 2 * ox + dx]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

/// 1-D half-pixel bilinear interpolation matrix, `2n x n`.
fn interp_matrix_1d(n: usize) -> Vec<Vec<f64>> {
    (0..2 * n)
        .map(|o| {
            let mut row = vec![0.0; n];
            let src = ((o as f64 + 0.5) * 0.5 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let lam = src - i0 as f64;
            let i1 = (i0 + 1).min(n - 1);
            row[i0] += 1.0 - lam;
            row[i1] += lam;
            row
        })
        .collect()
}

/// Full 2-D interpolation matrix: `(2h*2w) x (h*w)`, the Kronecker product of the axis matrices.
fn interp_matrix_2d(h: usize, w: usize) -> Vec<Vec<f64>> {
    let ay = interp_matrix_1d(h);
    let ax = interp_matrix_1d(w);
    let mut m = vec![vec![0.0; h * w]; 4 * h * w];
    for oy in 0..2 * h {
        for ox in 0..2 * w {
            for iy in 0..h {
                for ix in 0..w {
                    m[oy * 2 * w + ox][iy * w + ix] = ay[oy][iy] * ax[ox][ix];
                }
            }
        }
    }
    m
}

pub fn conv2d_3x3_same_gradients() {
    let mut r = rng(1);
    let (cin, h, w, cout, k) = (2, 5, 5, 4, 3);
    let x = random_vec(&mut r, cin * h * w);
    let wt = random_vec(&mut r, cout * cin * k * k);
    let b = random_vec(&mut r, cout);
    let target = random_vec(&mut r, cout * h * w);

    let mut tape = Tape::new();
    let xv = tape.leaf(Tensor::new(vec![cin, h, w], x.clone()).unwrap(), true);
    let wv = tape.leaf(Tensor::new(vec![cout, cin, k, k], wt.clone()).unwrap(), true);
    let bv = tape.leaf(Tensor::new(vec![cout], b.clone()).unwrap(), true);
    let tv = tape.leaf(Tensor::new(vec![cout, h, w], target.clone()).unwrap(), false);
    let out = tape.conv2d(xv, wv, bv, Padding::Same).unwrap();
    let loss = tape.mse_loss(out, tv).unwrap();
    tape.backward(loss).unwrap();

    let inputs = vec![to64(&x), to64(&wt), to64(&b)];
    let t64 = to64(&target);
    let f = |v: &[Vec<f64>]| mse64(&conv_ref(&v[0], (cin, h, w), &v[1], cout, k, &v[2], 1), &t64);
    assert_forward_close(
        "conv2d",
        tape.value(out).unwrap().data(),
        &conv_ref(&inputs[0], (cin, h, w), &inputs[1], cout, k, &inputs[2], 1),
    );
    assert_grad_close("conv2d dW", tape.grad(wv).unwrap(), &numeric_grad(&inputs, 1, &f));
    assert_grad_close("conv2d dx", tape.grad(xv).unwrap(), &numeric_grad(&inputs, 0, &f));
    assert_grad_close("conv2d db", tape.grad(bv).unwrap(), &numeric_grad(&inputs, 2, &f));
}

pub fn conv2d_pointwise_and_valid_gradients() {
    for (k, padding, pad) in [(1usize, Padding::None, 0usize), (3, Padding::None, 0)] {
        let mut r = rng(2 + k as u64);
        let (cin, h, w, cout) = (3, 4, 6, 2);
        let (ho, wo) = (h + 2 * pad - k + 1, w + 2 * pad - k + 1);
        let x = random_vec(&mut r, cin * h * w);
        let wt = random_vec(&mut r, cout * cin * k * k);
        let b = random_vec(&mut r, cout);
        let target = random_vec(&mut r, cout * ho * wo);

        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::new(vec![cin, h, w], x.clone()).unwrap(), true);
        let wv = tape.leaf(Tensor::new(vec![cout, cin, k, k], wt.clone()).unwrap(), true);
        let bv = tape.leaf(Tensor::new(vec![cout], b.clone()).unwrap(), true);
        let tv = tape.leaf(Tensor::new(vec![cout, ho, wo], target.clone()).unwrap(), false);
        let out = tape.conv2d(xv, wv, bv, padding).unwrap();
        assert_eq!(tape.value(out).unwrap().shape(), &[cout, ho, wo]);
        let loss = tape.mse_loss(out, tv).unwrap();
        tape.backward(loss).unwrap();

        let inputs = vec![to64(&x), to64(&wt), to64(&b)];
        let t64 = to64(&target);
        let f = |v: &[Vec<f64>]| mse64(&conv_ref(&v[0], (cin, h, w), &v[1], cout, k, &v[2], pad), &t64);
        assert_grad_close("conv dW", tape.grad(wv).unwrap(), &numeric_grad(&inputs, 1, &f));
        assert_grad_close("conv dx", tape.grad(xv).unwrap(), &numeric_grad(&inputs, 0, &f));
        assert_grad_close("conv db", tape.grad(bv).unwrap(), &numeric_grad(&inputs, 2, &f));
    }
}

pub fn group_norm_gradients() {
    let mut r = rng(3);
    let (c, h, w, groups) = (8, 4, 4, 2);
    let x = random_vec(&mut r, c * h * w);
    let gamma: Vec<f32> = random_vec(&mut r, c).iter().map(|v| 1.0 + 0.5 * v).collect();
    let beta = random_vec(&mut r, c);
    let target = random_vec(&mut r, c * h * w);

    let mut tape = Tape::new();
    let xv = tape.leaf(Tensor::new(vec![c, h, w], x.clone()).unwrap(), true);
    let gv = tape.leaf(Tensor::new(vec![c], gamma.clone()).unwrap(), true);
    let bv = tape.leaf(Tensor::new(vec![c], beta.clone()).unwrap(), true);
    let tv = tape.leaf(Tensor::new(vec![c, h, w], target.clone()).unwrap(), false);
    let out = tape.group_norm(xv, groups, gv, bv, 1e-5).unwrap();
    let loss = tape.mse_loss(out, tv).unwrap();
    tape.backward(loss).unwrap();

    let inputs = vec![to64(&x), to64(&gamma), to64(&beta)];
    let t64 = to64(&target);
    let f = |v: &[Vec<f64>]| mse64(&group_norm_ref(&v[0], (c, h, w), groups, &v[1], &v[2], 1e-5), &t64);
    assert_forward_close(
        "group_norm",
        tape.value(out).unwrap().data(),
        &group_norm_ref(&inputs[0], (c, h, w), groups, &inputs[1], &inputs[2], 1e-5),
    );
    assert_grad_close("gn dx", tape.grad(xv).unwrap(), &numeric_grad(&inputs, 0, &f));
    assert_grad_close("gn dgamma", tape.grad(gv).unwrap(), &numeric_grad(&inputs, 1, &f));
    assert_grad_close("gn dbeta", tape.grad(bv).unwrap(), &numeric_grad(&inputs, 2, &f));
}

pub fn group_norm_output_statistics() {
    let mut r = rng(4);
    let (c, h, w, groups) = (8, 4, 4, 2);
    let x: Vec<f32> = (0..c * h * w).map(|_| r.random_range(-3.0f32..5.0)).collect();
    let mut tape = Tape::new();
    let xv = tape.leaf(Tensor::new(vec![c, h, w], x).unwrap(), false);
    let gv = tape.leaf(Tensor::full(&[c], 1.0), false);
    let bv = tape.leaf(Tensor::zeros(&[c]), false);
    let out = tape.group_norm(xv, groups, gv, bv, 1e-5).unwrap();
    let y = tape.value(out).unwrap().data();
    let per = c / groups * h * w;
    for g in 0..groups {
        let ys = to64(&y[g * per..(g + 1) * per]);
        let mean = ys.iter().sum::<f64>() / per as f64;
        let var = ys.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per as f64;
        assert!(mean.abs() < 1e-4, "group {g} mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "group {g} var {var}");
    }
}

pub fn silu_gradients() {
    let mut r = rng(5);
    let x: Vec<f32> = (0..32).map(|_| r.random_range(-4.0f32..4.0)).collect();
    let target = random_vec(&mut r, 32);
    let mut tape = Tape::new();
    let xv = tape.leaf(Tensor::new(vec![2, 4, 4], x.clone()).unwrap(), true);
    let tv = tape.leaf(Tensor::new(vec![2, 4, 4], target.clone()).unwrap(), false);
    let out = tape.silu(xv).unwrap();
    let loss = tape.mse_loss(out, tv).unwrap();
    tape.backward(loss).unwrap();
    let inputs = vec![to64(&x)];
    let t64 = to64(&target);
    let f = |v: &[Vec<f64>]| mse64(&silu_ref(&v[0]), &t64);
    assert_forward_close("silu", tape.value(out).unwrap().data(), &silu_ref(&inputs[0]));
    let worst = assert_grad_close("silu dx", tape.grad(xv).unwrap(), &numeric_grad(&inputs, 0, &f));
    assert!(worst < 1e-4, "silu worst relative error {worst}");
}

pub fn maxpool_gradients() {
    let mut r = rng(6);
    let (c, h, w) = (2, 4, 6);
    // Distinct values at least 0.01 apart so a 1e-3 probe never flips an argmax.
    let mut x: Vec<f32> = (0..c * h * w).map(|i| i as f32 * 0.05 - 1.0).collect();
    for i in (1..x.len()).rev() {
        let j = r.random_range(0..=i);
        x.swap(i, j);
    }
    let target = random_vec(&mut r, c * h * w / 4);
    let mut tape = Tape::new();
    let xv = tape.leaf(Tensor::new(vec![c, h, w], x.clone()).unwrap(), true);
    let tv = tape.leaf(Tensor::new(vec![c, h / 2, w / 2], target.clone()).unwrap(), false);
    let out = tape.maxpool2x2(xv).unwrap();
    let loss = tape.mse_loss(out, tv).unwrap();
    tape.backward(loss).unwrap();
    let inputs = vec![to64(&x)];
    let t64 = to64(&target);
    let f = |v: &[Vec<f64>]| mse64(&maxpool_ref(&v[0], (c, h, w)), &t64);
    assert_forward_close(
        "maxpool",
        tape.value(out).unwrap().data(),
        &maxpool_ref(&inputs[0], (c, h, w)),
    );
    assert_grad_close("maxpool dx", tape.grad(xv).unwrap(), &numeric_grad(&inputs, 0, &f));
}

pub fn upsample_matches_interpolation_matrix() {
    let (h, w) = (3, 3);
    let m = interp_matrix_2d(h, w);
    // Forward of each one-hot input is the matching matrix column.
    for j in 0..h * w {
        let mut onehot = vec![0.0f32; h * w];
        onehot[j] = 1.0;
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::new(vec![1, h, w], onehot).unwrap(), false);
        let out = tape.bilinear_upsample2x(xv).unwrap();
        let y = tape.value(out).unwrap().data();
        for (o, row) in m.iter().enumerate() {
            assert!(
                (y[o] as f64 - row[j]).abs() < 1e-7,
                "column {j} row {o}: {} vs {}",
                y[o],
                row[j]
            );
        }
    }
    // Backward equals the transpose applied to the upstream gradient.
    let mut r = rng(7);
    let x = random_vec(&mut r, h * w);
    let target = random_vec(&mut r, 4 * h * w);
    let mut tape = Tape::new();
    let xv = tape.leaf(Tensor::new(vec![1, h, w], x).unwrap(), true);
    let tv = tape.leaf(Tensor::new(vec![1, 2 * h, 2 * w], target.clone()).unwrap(), false);
    let out = tape.bilinear_upsample2x(xv).unwrap();
    let y: Vec<f64> = to64(tape.value(out).unwrap().data());
    let loss = tape.mse_loss(out, tv).unwrap();
    tape.backward(loss).unwrap();
    let n = y.len() as f64;
    let upstream: Vec<f64> = y.iter().zip(&target).map(|(a, &t)| 2.0 * (a - t as f64) / n).collect();
    let grad = tape.grad(xv).unwrap();
    for j in 0..h * w {
        let expect: f64 = (0..m.len()).map(|o| m[o][j] * upstream[o]).sum();
        assert!(
            (grad[j] as f64 - expect).abs() < 1e-6,
            "dx[{j}]: {} vs {expect}",
            grad[j]
        );
    }
}

pub fn upsample_gradients_non_square() {
    let mut r = rng(8);
    let (c, h, w) = (2, 2, 3);
    let x = random_vec(&mut r, c * h * w);
    let target = random_vec(&mut r, 4 * c * h * w);
    let mut tape = Tape::new();
    let xv = tape.leaf(Tensor::new(vec![c, h, w], x.clone()).unwrap(), true);
    let tv = tape.leaf(Tensor::new(vec![c, 2 * h, 2 * w], target.clone()).unwrap(), false);
    let out = tape.bilinear_upsample2x(xv).unwrap();
    let loss = tape.mse_loss(out, tv).unwrap();
    tape.backward(loss).unwrap();
    let mh = interp_matrix_2d(h, w);
    let reference = |v: &[f64]| -> Vec<f64> {
        let mut out = Vec::new();
        for ch in 0..c {
            for row in &mh {
                out.push((0..h * w).map(|j| row[j] * v[ch * h * w + j]).sum());
            }
        }
        out
    };
    let t64 = to64(&target);
    let f = |v: &[Vec<f64>]| mse64(&reference(&v[0]), &t64);
    let inputs = vec![to64(&x)];
    assert_forward_close("upsample", tape.value(out).unwrap().data(), &reference(&inputs[0]));
    assert_grad_close("upsample dx", tape.grad(xv).unwrap(), &numeric_grad(&inputs, 0, &f));
}

pub fn mse_gradients() {
    let mut r = rng(9);
    let p = random_vec(&mut r, 16);
    let t = random_vec(&mut r, 16);
    let mut tape = Tape::new();
    let pv = tape.leaf(Tensor::new(vec![16], p.clone()).unwrap(), true);
    let tv = tape.leaf(Tensor::new(vec![16], t.clone()).unwrap(), false);
    let loss = tape.mse_loss(pv, tv).unwrap();
    tape.backward(loss).unwrap();
    let t64 = to64(&t);
    let f = |v: &[Vec<f64>]| mse64(&v[0], &t64);
    let worst = assert_grad_close("mse", tape.grad(pv).unwrap(), &numeric_grad(&[to64(&p)], 0, &f));
    assert!(worst < 1e-4);
}

pub fn concat_and_add_gradients() {
    let mut r = rng(10);
    let a = random_vec(&mut r, 2 * 3 * 3);
    let b = random_vec(&mut r, 3 * 3);
    let c = random_vec(&mut r, 3 * 3 * 3);
    let target = random_vec(&mut r, 3 * 3 * 3);
    let mut tape = Tape::new();
    let av = tape.leaf(Tensor::new(vec![2, 3, 3], a.clone()).unwrap(), true);
    let bv = tape.leaf(Tensor::new(vec![1, 3, 3], b.clone()).unwrap(), true);
    let cv = tape.leaf(Tensor::new(vec![3, 3, 3], c.clone()).unwrap(), true);
    let tv = tape.leaf(Tensor::new(vec![3, 3, 3], target.clone()).unwrap(), false);
    let cat = tape.concat_channels(av, bv).unwrap();
    let sum = tape.add(cat, cv).unwrap();
    let loss = tape.mse_loss(sum, tv).unwrap();
    tape.backward(loss).unwrap();
    let t64 = to64(&target);
    let f = |v: &[Vec<f64>]| {
        let cat: Vec<f64> = v[0].iter().chain(&v[1]).copied().collect();
        let s: Vec<f64> = cat.iter().zip(&v[2]).map(|(x, y)| x + y).collect();
        mse64(&s, &t64)
    };
    let inputs = vec![to64(&a), to64(&b), to64(&c)];
    assert_grad_close("concat a", tape.grad(av).unwrap(), &numeric_grad(&inputs, 0, &f));
    assert_grad_close("concat b", tape.grad(bv).unwrap(), &numeric_grad(&inputs, 1, &f));
    assert_grad_close("add c", tape.grad(cv).unwrap(), &numeric_grad(&inputs, 2, &f));
}

pub fn sum_gradients() {
    let mut r = rng(11);
    let x = random_vec(&mut r, 12);
    let mut tape = Tape::new();
    let xv = tape.leaf(Tensor::new(vec![3, 4], x.clone()).unwrap(), true);
    let s = tape.sum(xv).unwrap();
    let s2 = tape.add(s, s).unwrap();
    tape.backward(s2).unwrap();
    let total: f64 = to64(&x).iter().sum();
    assert!((tape.value(s).unwrap().item().unwrap() as f64 - total).abs() < 1e-5);
    let f = |v: &[Vec<f64>]| 2.0 * v[0].iter().sum::<f64>();
    assert_grad_close("sum", tape.grad(xv).unwrap(), &numeric_grad(&[to64(&x)], 0, &f));
}

/// MSE computed outside the tape in f64 so the finite differences are not limited by f32 loss rounding.
fn unet_mse64(p: &UNetParams, x: &Tensor, y: &Tensor) -> f64 {
    let out = p.predict(x).unwrap();
    out.data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / y.len() as f64
}

/// Ten sampled parameters of the default U-Net on a 16x16 tile, tolerance 1e-2.
pub fn unet_end_to_end_gradients() {
    let p = UNetParams::init(&UNetConfig::default()).unwrap();
    let mut r = rng(21);
    let x = Tensor::new(vec![2, 16, 16], random_vec(&mut r, 512)).unwrap();
    let y = Tensor::new(vec![1, 16, 16], random_vec(&mut r, 256)).unwrap();
    let mut tape = Tape::new();
    let vars = p.register(&mut tape, true);
    let xv = tape.constant(&x);
    let yv = tape.constant(&y);
    let out = p.forward(&mut tape, &vars, xv).unwrap();
    let loss = tape.mse_loss(out, yv).unwrap();
    tape.backward(loss).unwrap();
    let grads: Vec<Tensor> = vars.iter().map(|&v| tape.take_grad(v).unwrap()).collect();
    let mut r = rng(23);
    let h = 1e-3f32;
    for _ in 0..10 {
        let ti = r.random_range(0..grads.len());
        // probe the coordinate with the largest gradient so the difference quotient is well above f32 noise
        let (ci, &g) = grads[ti]
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        let mut probe = p.clone();
        probe.tensors_mut()[ti].data_mut()[ci] += h;
        let up = unet_mse64(&probe, &x, &y);
        probe.tensors_mut()[ti].data_mut()[ci] -= 2.0 * h;
        let down = unet_mse64(&probe, &x, &y);
        let numeric = (up - down) / (2.0 * h as f64);
        let rel = (g as f64 - numeric).abs() / (g.abs() as f64).max(numeric.abs()).max(1e-4);
        assert!(rel < 1e-2, "{}[{ci}]: analytic {g} numeric {numeric}", p.names()[ti]);
    }
}

/// Every check with a display name, for the acceptance runner.
#[allow(dead_code)]
pub const CHECKS: &[(&str, fn())] = &[
    ("conv2d 3x3 same", conv2d_3x3_same_gradients),
    ("conv2d 1x1 and valid", conv2d_pointwise_and_valid_gradients),
    ("group norm", group_norm_gradients),
    ("group norm statistics", group_norm_output_statistics),
    ("silu", silu_gradients),
    ("maxpool", maxpool_gradients),
    ("upsample matrix", upsample_matches_interpolation_matrix),
    ("upsample non-square", upsample_gradients_non_square),
    ("mse", mse_gradients),
    ("concat and add", concat_and_add_gradients),
    ("sum", sum_gradients),
    ("u-net end to end", unet_end_to_end_gradients),
];
