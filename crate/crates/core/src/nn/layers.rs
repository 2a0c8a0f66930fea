//! Per-sample layer kernels plus batch-level convenience wrappers.
//!
//! Layouts: activations `[h][w][c]`, convolution weights
//! `[kh][kw][in][out]`, dense weights `[in][out]`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Activation, NnError, Real, Tensor4};

/// Row-wise 3x3 same convolution. `acc` is scratch of length `w * cout`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_fwd<T: Real>(
    x: &[T],
    h: usize,
    w: usize,
    cin: usize,
    weights: &[f64],
    bias: &[f64],
    cout: usize,
    act: Activation,
    out: &mut [T],
) {
    debug_assert_eq!(x.len(), h * w * cin);
    debug_assert_eq!(weights.len(), 9 * cin * cout);
    debug_assert_eq!(out.len(), h * w * cout);
    let mut acc = vec![0.0f64; w * cout];
    let mut xrow = vec![0.0f64; w * cin];
    for oy in 0..h {
        for a in acc.chunks_exact_mut(cout) {
            a.copy_from_slice(bias);
        }
        for ky in 0..3 {
            let Some(iy) = (oy + ky).checked_sub(1).filter(|&iy| iy < h) else {
                continue;
            };
            for (dst, src) in xrow.iter_mut().zip(&x[iy * w * cin..(iy + 1) * w * cin]) {
                *dst = src.f64();
            }
            for kx in 0..3 {
                let wk = &weights[(ky * 3 + kx) * cin * cout..(ky * 3 + kx + 1) * cin * cout];
                let ox_lo = usize::from(kx == 0);
                let ox_hi = if kx == 2 { w - 1 } else { w };
                for ox in ox_lo..ox_hi {
                    let ix = ox + kx - 1;
                    let xs = &xrow[ix * cin..(ix + 1) * cin];
                    let a = &mut acc[ox * cout..(ox + 1) * cout];
                    accumulate_row(a, xs, wk);
                }
            }
        }
        let orow = &mut out[oy * w * cout..(oy + 1) * w * cout];
        for (o, &z) in orow.iter_mut().zip(&acc) {
            *o = T::of(act.apply(z));
        }
    }
}

/// `acc[co] += sum_ci xs[ci] * wk[ci][co]`.
#[inline(always)]
fn accumulate_row(acc: &mut [f64], xs: &[f64], wk: &[f64]) {
    let cout = acc.len();
    match cout {
        4 => accumulate_fixed::<4>(acc, xs, wk),
        8 => accumulate_fixed::<8>(acc, xs, wk),
        16 => accumulate_fixed::<16>(acc, xs, wk),
        _ => {
            for (ci, &xv) in xs.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wr = &wk[ci * cout..(ci + 1) * cout];
                for (a, &wv) in acc.iter_mut().zip(wr) {
                    *a += xv * wv;
                }
            }
        }
    }
}

#[inline(always)]
fn accumulate_fixed<const N: usize>(acc: &mut [f64], xs: &[f64], wk: &[f64]) {
    let acc: &mut [f64; N] = acc.try_into().expect("width checked by caller");
    for (ci, &xv) in xs.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        let wr: &[f64; N] = wk[ci * N..(ci + 1) * N].try_into().expect("weight row");
        for k in 0..N {
            acc[k] += xv * wr[k];
        }
    }
}

/// Gradients of a 3x3 same convolution given `g` = dL/d(pre-activation).
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_bwd<T: Real>(
    x: &[T],
    h: usize,
    w: usize,
    cin: usize,
    weights: &[f64],
    cout: usize,
    g: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    debug_assert_eq!(g.len(), h * w * cout);
    let live: Vec<bool> = g.chunks_exact(cout).map(|c| c.iter().any(|&v| v != 0.0)).collect();
    for (p, gs) in g.chunks_exact(cout).enumerate() {
        if live[p] {
            for (d, &v) in db.iter_mut().zip(gs) {
                *d += v;
            }
        }
    }
    let mut xrow = vec![0.0f64; w * cin];
    for iy in 0..h {
        for (dst, src) in xrow.iter_mut().zip(&x[iy * w * cin..(iy + 1) * w * cin]) {
            *dst = src.f64();
        }
        // input row iy feeds output rows iy + 1 - ky
        for ky in 0..3 {
            let Some(oy) = (iy + 1).checked_sub(ky).filter(|&oy| oy < h) else {
                continue;
            };
            for kx in 0..3 {
                let k = ky * 3 + kx;
                let wk = &weights[k * cin * cout..(k + 1) * cin * cout];
                let dwk = &mut dw[k * cin * cout..(k + 1) * cin * cout];
                let ox_lo = usize::from(kx == 0);
                let ox_hi = if kx == 2 { w - 1 } else { w };
                for ox in ox_lo..ox_hi {
                    if !live[oy * w + ox] {
                        continue;
                    }
                    let ix = ox + kx - 1;
                    let gs = &g[(oy * w + ox) * cout..(oy * w + ox + 1) * cout];
                    let xs = &xrow[ix * cin..(ix + 1) * cin];
                    for (ci, &xv) in xs.iter().enumerate() {
                        let row = &mut dwk[ci * cout..(ci + 1) * cout];
                        for (d, &gv) in row.iter_mut().zip(gs) {
                            *d += xv * gv;
                        }
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let dxs = &mut dx[(iy * w + ix) * cin..(iy * w + ix + 1) * cin];
                        for (ci, d) in dxs.iter_mut().enumerate() {
                            let wr = &wk[ci * cout..(ci + 1) * cout];
                            let mut s = 0.0;
                            for (&wv, &gv) in wr.iter().zip(gs) {
                                s += wv * gv;
                            }
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 / stride 2 max pooling; `argmax` receives the flat input index of
/// each window's maximum (first in row-major window order on ties).
pub(crate) fn pool_fwd<T: Real>(x: &[T], h: usize, w: usize, c: usize, out: &mut [T], argmax: &mut [u32]) {
    let (oh, ow) = (h / 2, w / 2);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = (oy * 2 * w + ox * 2) * c + ch;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((oy * 2 + dy) * w + ox * 2 + dx) * c + ch;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                let o = (oy * ow + ox) * c + ch;
                out[o] = x[best];
                argmax[o] = best as u32;
            }
        }
    }
}

pub(crate) fn pool_bwd(g: &[f64], argmax: &[u32], dx: &mut [f64]) {
    for (&gv, &i) in g.iter().zip(argmax) {
        dx[i as usize] += gv;
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else `1 / (1 - rate)`.
pub(crate) fn dropout_mask(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let keep = (1.0 / (1.0 - rate)) as f32;
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_fwd<T: Real>(
    x: &[T],
    weights: &[f64],
    bias: &[f64],
    units: usize,
    act: Activation,
    out: &mut [T],
    pre: &mut [f64],
) {
    pre.copy_from_slice(bias);
    for (i, xv) in x.iter().enumerate() {
        let xv = xv.f64();
        if xv == 0.0 {
            continue;
        }
        for (p, &wv) in pre.iter_mut().zip(&weights[i * units..(i + 1) * units]) {
            *p += xv * wv;
        }
    }
    for (o, &z) in out.iter_mut().zip(pre.iter()) {
        *o = T::of(act.apply(z));
    }
}

pub(crate) fn dense_bwd<T: Real>(
    x: &[T],
    weights: &[f64],
    units: usize,
    g: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    for (d, &gv) in db.iter_mut().zip(g) {
        *d += gv;
    }
    for (i, xv) in x.iter().enumerate() {
        let xv = xv.f64();
        for (d, &gv) in dw[i * units..(i + 1) * units].iter_mut().zip(g) {
            *d += xv * gv;
        }
    }
    if let Some(dx) = dx {
        for (i, d) in dx.iter_mut().enumerate() {
            let wr = &weights[i * units..(i + 1) * units];
            *d += wr.iter().zip(g).map(|(&a, &b)| a * b).sum::<f64>();
        }
    }
}

fn to_f64<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.f64()).collect()
}

/// Batch 3x3 same convolution with weights `[3][3][in][out]` and bias `[out]`.
pub fn conv2d_forward<T: Real>(
    x: &Tensor4<T>,
    weights: &[T],
    bias: &[T],
    activation: Activation,
) -> Result<Tensor4<T>, NnError> {
    let cout = bias.len();
    if cout == 0 || weights.len() != 9 * x.c * cout {
        return Err(NnError::ChannelMismatch {
            layer: 0,
            expected: weights.len() / (9 * cout.max(1)),
            got: x.c,
        });
    }
    let (wf, bf) = (to_f64(weights), to_f64(bias));
    let mut out = Tensor4::zeros(x.n, x.h, x.w, cout);
    for i in 0..x.n {
        conv_fwd(x.item(i), x.h, x.w, x.c, &wf, &bf, cout, activation, out.item_mut(i));
    }
    Ok(out)
}

/// Batch 2x2 max pooling.
pub fn maxpool_forward<T: Real>(x: &Tensor4<T>) -> Result<Tensor4<T>, NnError> {
    if x.h % 2 != 0 || x.w % 2 != 0 {
        return Err(NnError::OddPool { layer: 0, h: x.h, w: x.w });
    }
    let mut out = Tensor4::zeros(x.n, x.h / 2, x.w / 2, x.c);
    let mut argmax = vec![0u32; out.item_len()];
    for i in 0..x.n {
        pool_fwd(x.item(i), x.h, x.w, x.c, out.item_mut(i), &mut argmax);
    }
    Ok(out)
}

/// Inverted dropout; `rng` is only consulted in training mode.
pub fn dropout_forward<T: Real>(
    x: &Tensor4<T>,
    rate: f64,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor4<T>, NnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::DropoutRate(rate));
    }
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.data.len(), rate, rng);
    let mut out = x.clone();
    for (v, &m) in out.data.iter_mut().zip(&mask) {
        *v = T::of(v.f64() * m as f64);
    }
    Ok(out)
}

/// `x [n, d] . w [d, u] + b`, then the activation. `x` is given row-major.
pub fn dense_forward<T: Real>(
    x: &[T],
    n: usize,
    weights: &[T],
    bias: &[T],
    activation: Activation,
) -> Result<Vec<T>, NnError> {
    let units = bias.len();
    if n == 0 || x.len() % n != 0 || units == 0 || weights.len() != (x.len() / n) * units {
        return Err(NnError::Shape(format!(
            "dense input of {} values over {n} rows against {} weights / {units} units",
            x.len(),
            weights.len()
        )));
    }
    let d = x.len() / n;
    let (wf, bf) = (to_f64(weights), to_f64(bias));
    let mut out = vec![T::zero(); n * units];
    let mut pre = vec![0.0; units];
    for r in 0..n {
        dense_fwd(&x[r * d..(r + 1) * d], &wf, &bf, units, activation, &mut out[r * units..(r + 1) * units], &mut pre);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn conv_shape_and_zero_weights() {
        let x = Tensor4::<f32>::from_vec(1, 6, 6, 3, (0..108).map(|v| v as f32 / 50.0).collect()).unwrap();
        let out = conv2d_forward(&x, &vec![0.0; 9 * 3 * 4], &[0.0; 4], Activation::Relu).unwrap();
        assert_eq!(out.dims(), (1, 6, 6, 4));
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor4::<f32>::zeros(1, 4, 4, 2);
        assert!(conv2d_forward(&x, &vec![0.0; 9 * 3 * 4], &[0.0; 4], Activation::Relu).is_err());
    }

    #[test]
    fn single_pixel_identity_kernel() {
        let x = Tensor4::<f64>::from_vec(1, 1, 1, 1, vec![0.37]).unwrap();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let out = conv2d_forward(&x, &k, &[0.0], Activation::Linear).unwrap();
        assert_eq!(out.data, vec![0.37]);
    }

    #[test]
    fn conv_matches_naive_definition() {
        let (h, w, cin, cout) = (5, 4, 3, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..h * w * cin).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..9 * cin * cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = Tensor4::from_vec(1, h, w, cin, x.clone()).unwrap();
        let out = conv2d_forward(&t, &k, &b, Activation::Linear).unwrap();
        for oy in 0..h as i64 {
            for ox in 0..w as i64 {
                for co in 0..cout {
                    let mut s = b[co];
                    for ky in 0..3i64 {
                        for kx in 0..3i64 {
                            let (iy, ix) = (oy + ky - 1, ox + kx - 1);
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            for ci in 0..cin {
                                let xv = x[((iy as usize) * w + ix as usize) * cin + ci];
                                s += xv * k[(((ky * 3 + kx) as usize) * cin + ci) * cout + co];
                            }
                        }
                    }
                    let got = out.data[((oy as usize) * w + ox as usize) * cout + co];
                    assert!((got - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pool_examples() {
        let x = Tensor4::<f32>::from_vec(1, 2, 2, 1, vec![1.0, 5.0, 3.0, 2.0]).unwrap();
        assert_eq!(maxpool_forward(&x).unwrap().data, vec![5.0]);
        let c = Tensor4::<f32>::from_vec(1, 4, 4, 2, vec![0.25; 32]).unwrap();
        let p = maxpool_forward(&c).unwrap();
        assert_eq!(p.dims(), (1, 2, 2, 2));
        assert!(p.data.iter().all(|&v| v == 0.25));
        assert!(maxpool_forward(&Tensor4::<f32>::zeros(1, 3, 4, 1)).is_err());
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor4::<f64>::from_vec(1, 1, 1, 100_000, vec![1.0; 100_000]).unwrap();
        assert_eq!(dropout_forward(&x, 0.2, false, &mut rng).unwrap(), x);
        assert_eq!(dropout_forward(&x, 0.0, true, &mut rng).unwrap(), x);
        let y = dropout_forward(&x, 0.2, true, &mut rng).unwrap();
        let mean = y.data.iter().sum::<f64>() / y.data.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!(y.data.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-6));
        assert!(dropout_forward(&x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn dense_zero_weights_sigmoid() {
        let out = dense_forward(&[0.3f32, -2.0, 4.0, 1.0], 2, &[0.0; 2], &[0.0], Activation::Sigmoid).unwrap();
        assert_eq!(out, vec![0.5, 0.5]);
        assert!(dense_forward(&[1.0f32; 3], 1, &[0.0; 4], &[0.0; 2], Activation::Relu).is_err());
    }
}
