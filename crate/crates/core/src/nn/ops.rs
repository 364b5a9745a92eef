//! Per-sample tensor kernels, forward and backward. Tensors are `(C, H, W)`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView3, Axis};

use super::Scalar;

/// Pixels per im2col band; bounds scratch memory at large resolutions.
const BAND_PIXELS: usize = 8192;

fn band_rows(width: usize) -> usize {
    (BAND_PIXELS / width.max(1)).max(1)
}

/// Fills `col` (shape `(C*9, rows*W)`) with the 3x3 neighbourhoods of rows `r0..r1`.
fn im2col<F: Scalar>(x: &ArrayView3<'_, F>, r0: usize, r1: usize, col: &mut Array2<F>) {
    let (c, h, w) = x.dim();
    col.fill(F::zero());
    for ci in 0..c {
        let plane = x.index_axis(Axis(0), ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let mut dst_row = col.row_mut(ci * 9 + ky * 3 + kx);
                let dst = dst_row.as_slice_mut().expect("col rows are contiguous");
                let (lo, hi) = tap_cols(kx, w);
                for r in r0..r1 {
                    let src_r = r as isize + ky as isize - 1;
                    if src_r < 0 || src_r >= h as isize {
                        continue;
                    }
                    let src = plane.row(src_r as usize);
                    let base = (r - r0) * w;
                    for cc in lo..hi {
                        dst[base + cc] = src[cc + kx - 1];
                    }
                }
            }
        }
    }
}

/// 3x3 same-padded convolution + bias + rectifier.
/// `weight` is `(out, in*9)` with column index `ci*9 + ky*3 + kx`.
pub fn conv3x3_forward<F: Scalar>(
    x: &Array3<F>,
    weight: &Array2<F>,
    bias: &Array1<F>,
) -> Array3<F> {
    let (c, h, w) = x.dim();
    let out_c = weight.nrows();
    debug_assert_eq!(weight.ncols(), c * 9);
    let mut y = Array3::<F>::zeros((out_c, h, w));
    let rows = band_rows(w);
    let xv = x.view();
    let mut r0 = 0;
    while r0 < h {
        let r1 = (r0 + rows).min(h);
        let p = (r1 - r0) * w;
        let mut col = Array2::<F>::zeros((c * 9, p));
        im2col(&xv, r0, r1, &mut col);
        let mut yb = Array2::<F>::zeros((out_c, p));
        general_mat_mul(F::one(), weight, &col, F::zero(), &mut yb);
        let ys = y.as_slice_mut().expect("fresh array");
        for o in 0..out_c {
            let b = bias[o];
            let dst = &mut ys[o * h * w + r0 * w..o * h * w + r1 * w];
            for (d, &v) in dst.iter_mut().zip(yb.row(o).iter()) {
                let z = v + b;
                *d = if z > F::zero() { z } else { F::zero() };
            }
        }
        r0 = r1;
    }
    y
}

/// Backward of [`conv3x3_forward`]. `y` is the forward output (for the
/// rectifier mask). Accumulates into `dweight`/`dbias`; returns the input
/// gradient when `need_input_grad` is set.
pub fn conv3x3_backward<F: Scalar>(
    x: &Array3<F>,
    y: &Array3<F>,
    dy: &Array3<F>,
    weight: &Array2<F>,
    dweight: &mut Array2<F>,
    dbias: &mut Array1<F>,
    need_input_grad: bool,
) -> Option<Array3<F>> {
    let (c, h, w) = x.dim();
    let out_c = weight.nrows();
    let mut dx = need_input_grad.then(|| Array3::<F>::zeros((c, h, w)));
    let rows = band_rows(w);
    let xv = x.view();
    let ys = y.as_slice().expect("standard layout");
    let dys = dy.as_slice().expect("standard layout");
    let mut r0 = 0;
    while r0 < h {
        let r1 = (r0 + rows).min(h);
        let p = (r1 - r0) * w;
        let mut dz = Array2::<F>::zeros((out_c, p));
        for o in 0..out_c {
            let off = o * h * w + r0 * w;
            let mut acc = F::zero();
            for (k, d) in dz.row_mut(o).iter_mut().enumerate() {
                if ys[off + k] > F::zero() {
                    *d = dys[off + k];
                    acc += *d;
                }
            }
            dbias[o] += acc;
        }
        let mut col = Array2::<F>::zeros((c * 9, p));
        im2col(&xv, r0, r1, &mut col);
        general_mat_mul(F::one(), &dz, &col.t(), F::one(), dweight);

        if let Some(dx) = dx.as_mut() {
            let mut dcol = Array2::<F>::zeros((c * 9, p));
            general_mat_mul(F::one(), &weight.t(), &dz, F::zero(), &mut dcol);
            for ci in 0..c {
                let mut plane = dx.index_axis_mut(Axis(0), ci);
                for ky in 0..3 {
                    for kx in 0..3 {
                        let src = dcol.row(ci * 9 + ky * 3 + kx);
                        for r in r0..r1 {
                            let dst_r = r as isize + ky as isize - 1;
                            if dst_r < 0 || dst_r >= h as isize {
                                continue;
                            }
                            let mut dst = plane.row_mut(dst_r as usize);
                            let base = (r - r0) * w;
                            let (lo, hi) = tap_cols(kx, w);
                            for cc in lo..hi {
                                dst[cc + kx - 1] += src[base + cc];
                            }
                        }
                    }
                }
            }
        }
        r0 = r1;
    }
    dx
}

/// Valid destination column range for a horizontal tap offset `kx`.
fn tap_cols(kx: usize, w: usize) -> (usize, usize) {
    match kx {
        0 => (1, w),
        1 => (0, w),
        _ => (0, w.saturating_sub(1)),
    }
}

/// Channel-wise 3x3 convolution (one kernel per channel) + bias + rectifier.
/// `weight` is `(C, 9)`.
pub fn depthwise3x3_forward<F: Scalar>(
    x: &Array3<F>,
    weight: &Array2<F>,
    bias: &Array1<F>,
) -> Array3<F> {
    let (c, h, w) = x.dim();
    let mut y = Array3::<F>::zeros((c, h, w));
    for ch in 0..c {
        let xp = x.index_axis(Axis(0), ch);
        let mut yp = y.index_axis_mut(Axis(0), ch);
        yp.fill(bias[ch]);
        for ky in 0..3 {
            for kx in 0..3 {
                let k = weight[[ch, ky * 3 + kx]];
                let (lo, hi) = tap_cols(kx, w);
                for r in 0..h {
                    let sr = r as isize + ky as isize - 1;
                    if sr < 0 || sr >= h as isize {
                        continue;
                    }
                    let src = xp.row(sr as usize);
                    let mut dst = yp.row_mut(r);
                    for cc in lo..hi {
                        dst[cc] += k * src[cc + kx - 1];
                    }
                }
            }
        }
        yp.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
    }
    y
}

pub fn depthwise3x3_backward<F: Scalar>(
    x: &Array3<F>,
    y: &Array3<F>,
    dy: &Array3<F>,
    weight: &Array2<F>,
    dweight: &mut Array2<F>,
    dbias: &mut Array1<F>,
) -> Array3<F> {
    let (c, h, w) = x.dim();
    let mut dx = Array3::<F>::zeros((c, h, w));
    for ch in 0..c {
        let yp = y.index_axis(Axis(0), ch);
        let mut dz = dy.index_axis(Axis(0), ch).to_owned();
        ndarray::Zip::from(&mut dz).and(&yp).for_each(|d, &v| {
            if v <= F::zero() {
                *d = F::zero();
            }
        });
        dbias[ch] += dz.sum();
        let xp = x.index_axis(Axis(0), ch);
        let mut dxp = dx.index_axis_mut(Axis(0), ch);
        for ky in 0..3 {
            for kx in 0..3 {
                let k = weight[[ch, ky * 3 + kx]];
                let (lo, hi) = tap_cols(kx, w);
                let mut acc = F::zero();
                for r in 0..h {
                    let sr = r as isize + ky as isize - 1;
                    if sr < 0 || sr >= h as isize {
                        continue;
                    }
                    let src = xp.row(sr as usize);
                    let g = dz.row(r);
                    let mut back = dxp.row_mut(sr as usize);
                    for cc in lo..hi {
                        acc += g[cc] * src[cc + kx - 1];
                        back[cc + kx - 1] += k * g[cc];
                    }
                }
                dweight[[ch, ky * 3 + kx]] += acc;
            }
        }
    }
    dx
}

/// Argmax positions of a 2x2 pooling, one byte per output element (`dy*2 + dx`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_dim: (usize, usize, usize),
    pub offsets: Vec<u8>,
}

/// 2x2 / stride 2 max pooling. Ties resolve to the first position in row-major order.
pub fn maxpool2_forward<F: Scalar>(x: &Array3<F>) -> (Array3<F>, PoolIndices) {
    let (c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Array3::<F>::zeros((c, oh, ow));
    let mut offsets = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for r in 0..oh {
            for cc in 0..ow {
                let mut best = x[[ch, 2 * r, 2 * cc]];
                let mut arg = 0u8;
                for k in 1..4u8 {
                    let v = x[[ch, 2 * r + (k / 2) as usize, 2 * cc + (k % 2) as usize]];
                    if v > best {
                        best = v;
                        arg = k;
                    }
                }
                y[[ch, r, cc]] = best;
                offsets.push(arg);
            }
        }
    }
    (
        y,
        PoolIndices {
            input_dim: (c, h, w),
            offsets,
        },
    )
}

/// Scatters `dy` back to the recorded argmax positions.
pub fn maxpool2_backward<F: Scalar>(dy: &Array3<F>, idx: &PoolIndices) -> Array3<F> {
    unpool2_forward(dy, idx)
}

/// Places each value at its pooling argmax position; zeros elsewhere.
pub fn unpool2_forward<F: Scalar>(x: &Array3<F>, idx: &PoolIndices) -> Array3<F> {
    let (c, oh, ow) = x.dim();
    assert_eq!(
        idx.offsets.len(),
        c * oh * ow,
        "indices do not match unpool input"
    );
    let mut y = Array3::<F>::zeros(idx.input_dim);
    for (i, (&v, &k)) in x.iter().zip(idx.offsets.iter()).enumerate() {
        let ch = i / (oh * ow);
        let r = (i / ow) % oh;
        let cc = i % ow;
        y[[ch, 2 * r + (k / 2) as usize, 2 * cc + (k % 2) as usize]] = v;
    }
    y
}

/// Gathers the gradient at the argmax positions.
pub fn unpool2_backward<F: Scalar>(dy: &Array3<F>, idx: &PoolIndices) -> Array3<F> {
    let (c, h, w) = idx.input_dim;
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = Array3::<F>::zeros((c, oh, ow));
    for (i, (d, &k)) in dx.iter_mut().zip(idx.offsets.iter()).enumerate() {
        let ch = i / (oh * ow);
        let r = (i / ow) % oh;
        let cc = i % ow;
        *d = dy[[ch, 2 * r + (k / 2) as usize, 2 * cc + (k % 2) as usize]];
    }
    dx
}

/// Mean over consecutive channel groups: `(C*r, H, W) -> (C, H, W)`.
pub fn fold_forward<F: Scalar>(x: &Array3<F>, out_channels: usize) -> Array3<F> {
    let (c, h, w) = x.dim();
    let r = c / out_channels;
    let scale = F::from(r).unwrap().recip();
    let mut y = Array3::<F>::zeros((out_channels, h, w));
    for o in 0..out_channels {
        let mut dst = y.index_axis_mut(Axis(0), o);
        for k in 0..r {
            dst += &x.index_axis(Axis(0), o * r + k);
        }
        dst.mapv_inplace(|v| v * scale);
    }
    y
}

pub fn fold_backward<F: Scalar>(dy: &Array3<F>, in_channels: usize) -> Array3<F> {
    let (c, h, w) = dy.dim();
    let r = in_channels / c;
    let scale = F::from(r).unwrap().recip();
    let mut dx = Array3::<F>::zeros((in_channels, h, w));
    for o in 0..c {
        let g = dy.index_axis(Axis(0), o).mapv(|v| v * scale);
        for k in 0..r {
            dx.index_axis_mut(Axis(0), o * r + k).assign(&g);
        }
    }
    dx
}

/// 1x1 convolution producing class logits. `weight` is `(K, C)`.
pub fn conv1x1_forward<F: Scalar>(
    x: &Array3<F>,
    weight: &Array2<F>,
    bias: &Array1<F>,
) -> Array3<F> {
    let (c, h, w) = x.dim();
    let k = weight.nrows();
    let xm = x
        .view()
        .into_shape_with_order((c, h * w))
        .expect("standard layout");
    let mut y = Array2::<F>::zeros((k, h * w));
    general_mat_mul(F::one(), weight, &xm, F::zero(), &mut y);
    for (mut row, &b) in y.rows_mut().into_iter().zip(bias.iter()) {
        row.mapv_inplace(|v| v + b);
    }
    y.into_shape_with_order((k, h, w)).expect("reshape")
}

pub fn conv1x1_backward<F: Scalar>(
    x: &Array3<F>,
    dy: &Array3<F>,
    weight: &Array2<F>,
    dweight: &mut Array2<F>,
    dbias: &mut Array1<F>,
) -> Array3<F> {
    let (c, h, w) = x.dim();
    let k = weight.nrows();
    let xm = x
        .view()
        .into_shape_with_order((c, h * w))
        .expect("standard layout");
    let dym = dy
        .view()
        .into_shape_with_order((k, h * w))
        .expect("standard layout");
    general_mat_mul(F::one(), &dym, &xm.t(), F::one(), dweight);
    for (o, row) in dym.rows().into_iter().enumerate() {
        dbias[o] += row.sum();
    }
    let mut dx = Array2::<F>::zeros((c, h * w));
    general_mat_mul(F::one(), &weight.t(), &dym, F::zero(), &mut dx);
    dx.into_shape_with_order((c, h, w)).expect("reshape")
}

/// Per-pixel softmax over the channel axis.
pub fn softmax_channels<F: Scalar>(logits: &Array3<F>) -> Array3<F> {
    let (k, h, w) = logits.dim();
    let mut out = Array3::<F>::zeros((k, h, w));
    for r in 0..h {
        for c in 0..w {
            let lane = logits.slice(s![.., r, c]);
            let m = lane.fold(F::neg_infinity(), |a, &b| a.max(b));
            let mut sum = F::zero();
            for ch in 0..k {
                let e = (lane[ch] - m).exp();
                out[[ch, r, c]] = e;
                sum += e;
            }
            for ch in 0..k {
                out[[ch, r, c]] = out[[ch, r, c]] / sum;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random3(rng: &mut ChaCha8Rng, dim: (usize, usize, usize)) -> Array3<f64> {
        Array3::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct sextuple loop, no im2col.
    fn naive_conv(x: &Array3<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array3<f64> {
        let (c, h, wd) = x.dim();
        let o = w.nrows();
        Array3::from_shape_fn((o, h, wd), |(oc, r, cc)| {
            let mut acc = b[oc];
            for ci in 0..c {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let rr = r as isize + ky as isize - 1;
                        let col = cc as isize + kx as isize - 1;
                        if rr >= 0 && col >= 0 && (rr as usize) < h && (col as usize) < wd {
                            acc +=
                                w[[oc, ci * 9 + ky * 3 + kx]] * x[[ci, rr as usize, col as usize]];
                        }
                    }
                }
            }
            acc.max(0.0)
        })
    }

    #[test]
    fn conv_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random3(&mut rng, (3, 7, 5));
        let w = Array2::from_shape_fn((4, 27), |_| rng.random_range(-1.0..1.0));
        let b = Array1::from_shape_fn(4, |_| rng.random_range(-0.5..0.5));
        let y = conv3x3_forward(&x, &w, &b);
        let oracle = naive_conv(&x, &w, &b);
        for (a, e) in y.iter().zip(oracle.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_band_split_is_seamless() {
        // width 4000 forces band_rows == 2, exercising band boundaries
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random3(&mut rng, (2, 5, 4000));
        let w = Array2::from_shape_fn((2, 18), |_| rng.random_range(-1.0..1.0));
        let b = Array1::zeros(2);
        let y = conv3x3_forward(&x, &w, &b);
        let oracle = naive_conv(&x, &w, &b);
        let max = y
            .iter()
            .zip(oracle.iter())
            .map(|(a, e)| (a - e).abs())
            .fold(0.0, f64::max);
        assert!(max < 1e-12);
    }

    #[test]
    fn depthwise_matches_single_channel_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random3(&mut rng, (3, 6, 6));
        let w = Array2::from_shape_fn((3, 9), |_| rng.random_range(-1.0..1.0));
        let b = Array1::from_shape_fn(3, |_| rng.random_range(-0.5..0.5));
        let y = depthwise3x3_forward(&x, &w, &b);
        for ch in 0..3 {
            let xc = x.slice(s![ch..ch + 1, .., ..]).to_owned();
            let wc = w.slice(s![ch..ch + 1, ..]).to_owned();
            let bc = b.slice(s![ch..ch + 1]).to_owned();
            let oracle = naive_conv(&xc, &wc, &bc);
            for (a, e) in y.slice(s![ch..ch + 1, .., ..]).iter().zip(oracle.iter()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unpool_of_pool_keeps_maxima_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x = random3(&mut rng, (2, 6, 8));
            let (p, idx) = maxpool2_forward(&x);
            let u = unpool2_forward(&p, &idx);
            // brute force: a position survives iff it holds its window's first maximum
            for ch in 0..2 {
                for r in 0..6 {
                    for c in 0..8 {
                        let (wr, wc) = (r / 2 * 2, c / 2 * 2);
                        let mut best = (wr, wc);
                        for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                            if x[[ch, wr + dr, wc + dc]] > x[[ch, best.0, best.1]] {
                                best = (wr + dr, wc + dc);
                            }
                        }
                        let expected = if (r, c) == best { x[[ch, r, c]] } else { 0.0 };
                        assert_eq!(u[[ch, r, c]], expected);
                    }
                }
            }
        }
    }

    #[test]
    fn fold_averages_groups() {
        let x = Array3::from_shape_fn((4, 1, 2), |(c, _, w)| (c * 10 + w) as f64);
        let y = fold_forward(&x, 2);
        assert_eq!(y[[0, 0, 0]], 5.0);
        assert_eq!(y[[1, 0, 1]], 26.0);
        let dx = fold_backward(&Array3::<f64>::ones((2, 1, 2)), 4);
        assert!(dx.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = random3(&mut rng, (3, 4, 4)).mapv(|v| v * 50.0);
        let p = softmax_channels(&z);
        for r in 0..4 {
            for c in 0..4 {
                let s: f64 = p.slice(s![.., r, c]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
