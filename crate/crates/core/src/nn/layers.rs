//! Forward and backward kernels for the fixed layer vocabulary.
//!
//! All tensors are NHWC. Convolution weights are laid out `(ky, kx, in, out)`
//! and biases `(out)`. Every kernel processes one batch element at a time so
//! batched and unbatched evaluation produce bit-identical results.

use crate::error::{Error, Result};

use super::scalar::{gemm, Op, Scalar};
use super::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

fn check_conv_shapes<T: Scalar>(
    input: &Tensor4<T>,
    weights: &[T],
    bias: &[T],
    kernel: usize,
) -> Result<(usize, usize)> {
    if kernel != 1 && kernel != 3 {
        return Err(Error::Shape(format!("unsupported kernel size {kernel}")));
    }
    let cin = input.channels();
    let cout = bias.len();
    if weights.len() != kernel * kernel * cin * cout {
        return Err(Error::Shape(format!(
            "conv{kernel}x{kernel} weights hold {} values; input has {cin} channels and bias {cout}, expected {}",
            weights.len(),
            kernel * kernel * cin * cout
        )));
    }
    Ok((cin, cout))
}

/// Gathers 3×3 same-padded neighbourhoods into rows of `9·cin` values.
fn im2col3<T: Scalar>(src: &[T], h: usize, w: usize, cin: usize, col: &mut [T]) {
    let row_len = 9 * cin;
    for y in 0..h {
        for x in 0..w {
            let row = &mut col[(y * w + x) * row_len..(y * w + x + 1) * row_len];
            for dy in 0..3 {
                let sy = y as isize + dy as isize - 1;
                for dx in 0..3 {
                    let sx = x as isize + dx as isize - 1;
                    let dst = &mut row[(dy * 3 + dx) * cin..(dy * 3 + dx + 1) * cin];
                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                        dst.fill(T::zero());
                    } else {
                        let off = (sy as usize * w + sx as usize) * cin;
                        dst.copy_from_slice(&src[off..off + cin]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col3`]: scatters rows back onto the image, accumulating.
fn col2im3<T: Scalar>(col: &[T], h: usize, w: usize, cin: usize, dst: &mut [T]) {
    let row_len = 9 * cin;
    for y in 0..h {
        for x in 0..w {
            let row = &col[(y * w + x) * row_len..(y * w + x + 1) * row_len];
            for dy in 0..3 {
                let sy = y as isize + dy as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for dx in 0..3 {
                    let sx = x as isize + dx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let off = (sy as usize * w + sx as usize) * cin;
                    let src = &row[(dy * 3 + dx) * cin..(dy * 3 + dx + 1) * cin];
                    for (d, &s) in dst[off..off + cin].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Same-padded convolution with a 1×1 or 3×3 kernel.
pub fn conv_forward<T: Scalar>(
    input: &Tensor4<T>,
    weights: &[T],
    bias: &[T],
    kernel: usize,
) -> Result<Tensor4<T>> {
    let (cin, cout) = check_conv_shapes(input, weights, bias, kernel)?;
    let [n, h, w, _] = input.dims();
    let mut out = Tensor4::zeros([n, h, w, cout]);
    let mut col = if kernel == 3 {
        vec![T::zero(); h * w * 9 * cin]
    } else {
        Vec::new()
    };
    for b in 0..n {
        let dst = out.sample_mut(b);
        for px in dst.chunks_exact_mut(cout) {
            px.copy_from_slice(bias);
        }
        let a: &[T] = if kernel == 3 {
            im2col3(input.sample(b), h, w, cin, &mut col);
            &col
        } else {
            input.sample(b)
        };
        gemm(h * w, kernel * kernel * cin, cout, a, Op::N, weights, Op::N, dst, true);
    }
    out.ensure_finite("conv")?;
    Ok(out)
}

/// Gradients of [`conv_forward`] with respect to input, weights and bias.
pub fn conv_backward<T: Scalar>(
    input: &Tensor4<T>,
    weights: &[T],
    grad_out: &Tensor4<T>,
    kernel: usize,
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    let cout = grad_out.channels();
    let bias_dummy = vec![T::zero(); cout];
    let (cin, _) = check_conv_shapes(input, weights, &bias_dummy, kernel)?;
    let [n, h, w, _] = input.dims();
    if grad_out.dims() != [n, h, w, cout] {
        return Err(Error::Shape(format!(
            "conv gradient dims {:?} do not match output dims {:?}",
            grad_out.dims(),
            [n, h, w, cout]
        )));
    }
    let kk = kernel * kernel * cin;
    let mut grad_in = Tensor4::zeros(input.dims());
    let mut grad_w = vec![T::zero(); weights.len()];
    let mut grad_b = vec![T::zero(); cout];
    let mut col = vec![T::zero(); if kernel == 3 { h * w * kk } else { 0 }];
    let mut dcol = vec![T::zero(); if kernel == 3 { h * w * kk } else { 0 }];
    for b in 0..n {
        let g = grad_out.sample(b);
        for px in g.chunks_exact(cout) {
            for (acc, &v) in grad_b.iter_mut().zip(px) {
                *acc += v;
            }
        }
        if kernel == 3 {
            im2col3(input.sample(b), h, w, cin, &mut col);
            gemm(kk, h * w, cout, &col, Op::T, g, Op::N, &mut grad_w, true);
            gemm(h * w, cout, kk, g, Op::N, weights, Op::T, &mut dcol, false);
            col2im3(&dcol, h, w, cin, grad_in.sample_mut(b));
        } else {
            gemm(cin, h * w, cout, input.sample(b), Op::T, g, Op::N, &mut grad_w, true);
            gemm(h * w, cout, cin, g, Op::N, weights, Op::T, grad_in.sample_mut(b), false);
        }
    }
    Ok((grad_in, grad_w, grad_b))
}

/// 2×2 max pooling with stride 2. Returns the pooled tensor and, per output
/// cell, the flat in-sample index of the winning input (ties go to the first
/// cell in row-major order).
pub fn maxpool2_forward<T: Scalar>(input: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<u32>)> {
    let [n, h, w, c] = input.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "max pooling needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros([n, oh, ow, c]);
    let mut argmax = vec![0u32; n * oh * ow * c];
    for b in 0..n {
        let src = input.sample(b);
        let base = b * oh * ow * c;
        let dst = out.sample_mut(b);
        for y in 0..oh {
            for x in 0..ow {
                for ch in 0..c {
                    let mut best_idx = ((2 * y) * w + 2 * x) * c + ch;
                    let mut best = src[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ((2 * y + dy) * w + 2 * x + dx) * c + ch;
                        if src[idx] > best {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                    let o = (y * ow + x) * c + ch;
                    dst[o] = best;
                    argmax[base + o] = best_idx as u32;
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    argmax: &[u32],
    input_dims: [usize; 4],
) -> Result<Tensor4<T>> {
    if argmax.len() != grad_out.len() {
        return Err(Error::Shape("pool argmax does not match gradient".into()));
    }
    let mut grad_in = Tensor4::zeros(input_dims);
    let per = grad_out.sample_len();
    for b in 0..grad_out.batch() {
        let g = grad_out.sample(b);
        let dst = grad_in.sample_mut(b);
        for (o, &gv) in g.iter().enumerate() {
            dst[argmax[b * per + o] as usize] += gv;
        }
    }
    Ok(grad_in)
}

fn check_upconv<T: Scalar>(input: &Tensor4<T>, weights: &[T], cout: usize) -> Result<usize> {
    let cin = input.channels();
    if weights.len() != 4 * cin * cout {
        return Err(Error::Shape(format!(
            "upconv weights hold {} values; expected 2x2x{cin}x{cout}",
            weights.len()
        )));
    }
    Ok(cin)
}

/// Stride-2 transposed convolution with a 2×2 kernel; doubles spatial dims.
pub fn upconv2_forward<T: Scalar>(
    input: &Tensor4<T>,
    weights: &[T],
    bias: &[T],
) -> Result<Tensor4<T>> {
    let cout = bias.len();
    let cin = check_upconv(input, weights, cout)?;
    let [n, h, w, _] = input.dims();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor4::zeros([n, oh, ow, cout]);
    let mut tmp = vec![T::zero(); h * w * cout];
    for b in 0..n {
        let src = input.sample(b);
        let dst = out.sample_mut(b);
        for (p, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            let wp = &weights[p * cin * cout..(p + 1) * cin * cout];
            gemm(h * w, cin, cout, src, Op::N, wp, Op::N, &mut tmp, false);
            for y in 0..h {
                for x in 0..w {
                    let o = ((2 * y + dy) * ow + 2 * x + dx) * cout;
                    let t = &tmp[(y * w + x) * cout..(y * w + x + 1) * cout];
                    for f in 0..cout {
                        dst[o + f] = bias[f] + t[f];
                    }
                }
            }
        }
    }
    out.ensure_finite("upconv")?;
    Ok(out)
}

pub fn upconv2_backward<T: Scalar>(
    input: &Tensor4<T>,
    weights: &[T],
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    let cout = grad_out.channels();
    let cin = check_upconv(input, weights, cout)?;
    let [n, h, w, _] = input.dims();
    let (oh, ow) = (2 * h, 2 * w);
    if grad_out.dims() != [n, oh, ow, cout] {
        return Err(Error::Shape("upconv gradient dims mismatch".into()));
    }
    let mut grad_in = Tensor4::zeros(input.dims());
    let mut grad_w = vec![T::zero(); weights.len()];
    let mut grad_b = vec![T::zero(); cout];
    let mut gp = vec![T::zero(); h * w * cout];
    for b in 0..n {
        let g = grad_out.sample(b);
        for px in g.chunks_exact(cout) {
            for (acc, &v) in grad_b.iter_mut().zip(px) {
                *acc += v;
            }
        }
        for (p, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let o = ((2 * y + dy) * ow + 2 * x + dx) * cout;
                    gp[(y * w + x) * cout..(y * w + x + 1) * cout]
                        .copy_from_slice(&g[o..o + cout]);
                }
            }
            let wp = &weights[p * cin * cout..(p + 1) * cin * cout];
            gemm(h * w, cout, cin, &gp, Op::N, wp, Op::T, grad_in.sample_mut(b), true);
            let gwp = &mut grad_w[p * cin * cout..(p + 1) * cin * cout];
            gemm(cin, h * w, cout, input.sample(b), Op::T, &gp, Op::N, gwp, true);
        }
    }
    Ok((grad_in, grad_w, grad_b))
}

/// Parameter-free 2× nearest-neighbour upsampling.
pub fn upsample2_forward<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    let [n, h, w, c] = input.dims();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor4::zeros([n, oh, ow, c]);
    for b in 0..n {
        let src = input.sample(b);
        let dst = out.sample_mut(b);
        for y in 0..oh {
            for x in 0..ow {
                let s = ((y / 2) * w + x / 2) * c;
                let d = (y * ow + x) * c;
                dst[d..d + c].copy_from_slice(&src[s..s + c]);
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Scalar>(grad_out: &Tensor4<T>) -> Tensor4<T> {
    let [n, oh, ow, c] = grad_out.dims();
    let (h, w) = (oh / 2, ow / 2);
    let mut grad_in = Tensor4::zeros([n, h, w, c]);
    for b in 0..n {
        let g = grad_out.sample(b);
        let dst = grad_in.sample_mut(b);
        for y in 0..oh {
            for x in 0..ow {
                let s = (y * ow + x) * c;
                let d = ((y / 2) * w + x / 2) * c;
                for ch in 0..c {
                    dst[d + ch] += g[s + ch];
                }
            }
        }
    }
    grad_in
}

pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

pub fn activation_forward<T: Scalar>(input: &Tensor4<T>, act: Activation) -> Tensor4<T> {
    match act {
        Activation::Relu => input.map(|v| v.max(T::zero())),
        Activation::Sigmoid => input.map(sigmoid),
    }
}

/// Backward through an activation given its *output*.
pub fn activation_backward<T: Scalar>(
    output: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    act: Activation,
) -> Tensor4<T> {
    let values = output
        .values()
        .iter()
        .zip(grad_out.values())
        .map(|(&y, &g)| match act {
            Activation::Relu => {
                if y > T::zero() {
                    g
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => g * y * (T::one() - y),
        })
        .collect();
    Tensor4::from_vec_unchecked(output.dims(), values)
}

/// Channel concatenation `[a, b]`; spatial dims must agree.
pub fn concat_forward<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [n, h, w, ca] = a.dims();
    let cb = b.channels();
    if [b.batch(), b.height(), b.width()] != [n, h, w] {
        return Err(Error::Shape(format!(
            "cannot concatenate {:?} with skip {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut values = Vec::with_capacity(n * h * w * (ca + cb));
    for (pa, pb) in a.values().chunks_exact(ca).zip(b.values().chunks_exact(cb)) {
        values.extend_from_slice(pa);
        values.extend_from_slice(pb);
    }
    Ok(Tensor4::from_vec_unchecked([n, h, w, ca + cb], values))
}

pub fn concat_backward<T: Scalar>(grad: &Tensor4<T>, ca: usize) -> (Tensor4<T>, Tensor4<T>) {
    let [n, h, w, c] = grad.dims();
    let cb = c - ca;
    let mut ga = Vec::with_capacity(n * h * w * ca);
    let mut gb = Vec::with_capacity(n * h * w * cb);
    for px in grad.values().chunks_exact(c) {
        ga.extend_from_slice(&px[..ca]);
        gb.extend_from_slice(&px[ca..]);
    }
    (
        Tensor4::from_vec_unchecked([n, h, w, ca], ga),
        Tensor4::from_vec_unchecked([n, h, w, cb], gb),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
        let n = dims.iter().product();
        Tensor4::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Six nested loops straight from the definition.
    fn naive_conv(x: &Tensor4<f64>, w: &[f64], bias: &[f64], k: usize) -> Vec<f64> {
        let [n, h, wd, cin] = x.dims();
        let cout = bias.len();
        let half = (k / 2) as isize;
        let mut out = vec![0.0; n * h * wd * cout];
        for b in 0..n {
            for y in 0..h {
                for xx in 0..wd {
                    for f in 0..cout {
                        let mut acc = bias[f];
                        for dy in 0..k {
                            for dx in 0..k {
                                for c in 0..cin {
                                    let sy = y as isize + dy as isize - half;
                                    let sx = xx as isize + dx as isize - half;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                        continue;
                                    }
                                    acc += x.at(b, sy as usize, sx as usize, c)
                                        * w[((dy * k + dx) * cin + c) * cout + f];
                                }
                            }
                        }
                        out[((b * h + y) * wd + xx) * cout + f] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn all_ones_conv_counts_overlap() {
        let x = Tensor4::<f32>::filled([1, 3, 3, 1], 1.0);
        let out = conv_forward(&x, &[1.0; 9], &[0.0], 3).unwrap();
        assert_eq!(out.values(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn identity_1x1_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random([2, 5, 4, 1], &mut rng);
        assert_eq!(conv_forward(&x, &[1.0], &[0.0], 1).unwrap(), x);
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random([1, 8, 8, 2], &mut rng);
        let w = rand_vec(3 * 3 * 2 * 4, &mut rng);
        let bias = rand_vec(4, &mut rng);
        let got = conv_forward(&x, &w, &bias, 3).unwrap();
        for (a, b) in got.values().iter().zip(naive_conv(&x, &w, &bias, 3)) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
        }
        let w1 = rand_vec(2 * 3, &mut rng);
        let got = conv_forward(&x, &w1, &bias[..3], 1).unwrap();
        for (a, b) in got.values().iter().zip(naive_conv(&x, &w1, &bias[..3], 1)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor4::<f32>::zeros([1, 4, 4, 2]);
        assert!(matches!(conv_forward(&x, &[0.0; 9], &[0.0], 3), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_keeps_spatial_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let (h, w) = (rng.random_range(1..12), rng.random_range(1..12));
            let x = random([1, h, w, 2], &mut rng);
            let out = conv_forward(&x, &rand_vec(36, &mut rng), &[0.0, 0.0], 3).unwrap();
            assert_eq!((out.height(), out.width()), (h, w));
        }
    }

    #[test]
    fn pool_basic_and_ties() {
        let x = Tensor4::<f32>::from_vec([1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, arg) = maxpool2_forward(&x).unwrap();
        assert_eq!(out.values(), &[4.0]);
        assert_eq!(arg, vec![3]);
        let c = Tensor4::<f32>::filled([1, 4, 4, 1], 0.7);
        let (out, arg) = maxpool2_forward(&c).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.7));
        assert_eq!(arg, vec![0, 2, 8, 10]);
        assert!(maxpool2_forward(&Tensor4::<f32>::zeros([1, 3, 4, 1])).is_err());
    }

    #[test]
    fn pool_matches_block_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random([2, 6, 8, 3], &mut rng);
        let (out, _) = maxpool2_forward(&x).unwrap();
        for b in 0..2 {
            for y in 0..3 {
                for xx in 0..4 {
                    for c in 0..3 {
                        let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                            .iter()
                            .map(|&(dy, dx)| x.at(b, 2 * y + dy, 2 * xx + dx, c))
                            .fold(f64::MIN, f64::max);
                        assert_eq!(out.at(b, y, xx, c), m);
                    }
                }
            }
        }
    }

    #[test]
    fn pool_after_repeat_is_identity_on_constants() {
        let x = Tensor4::<f32>::filled([1, 3, 5, 2], -0.25);
        let (back, _) = maxpool2_forward(&upsample2_forward(&x)).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn upconv_small_cases() {
        let x = Tensor4::<f32>::from_vec([1, 1, 1, 1], vec![0.3]).unwrap();
        let out = upconv2_forward(&x, &[1.0; 4], &[0.0]).unwrap();
        assert_eq!(out.dims(), [1, 2, 2, 1]);
        assert!(out.values().iter().all(|&v| v == 0.3));
        let z = Tensor4::<f32>::zeros([1, 3, 3, 2]);
        let out = upconv2_forward(&z, &[0.5; 4 * 2 * 3], &[0.0; 3]).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
        assert!(upconv2_forward(&z, &[0.5; 4], &[0.0]).is_err());
    }

    #[test]
    fn upconv_matches_scatter() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random([2, 3, 4, 3], &mut rng);
        let (cin, cout) = (3, 2);
        let w = rand_vec(4 * cin * cout, &mut rng);
        let bias = rand_vec(cout, &mut rng);
        let got = upconv2_forward(&x, &w, &bias).unwrap();
        let mut expect = vec![0.0; 2 * 6 * 8 * cout];
        for b in 0..2 {
            for y in 0..3 {
                for xx in 0..4 {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            for f in 0..cout {
                                let o = ((b * 6 + 2 * y + dy) * 8 + 2 * xx + dx) * cout + f;
                                for c in 0..cin {
                                    expect[o] += x.at(b, y, xx, c)
                                        * w[((dy * 2 + dx) * cin + c) * cout + f];
                                }
                            }
                        }
                    }
                }
            }
        }
        for (i, e) in expect.iter_mut().enumerate() {
            *e += bias[i % cout];
        }
        for (a, b) in got.values().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn activations() {
        let x = Tensor4::<f32>::from_vec([1, 1, 3, 1], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(
            activation_forward(&x, Activation::Relu).values(),
            &[0.0, 0.0, 2.0]
        );
        let z = Tensor4::<f32>::zeros([1, 1, 1, 1]);
        assert_eq!(activation_forward(&z, Activation::Sigmoid).values(), &[0.5]);
        let big = Tensor4::<f32>::from_vec([1, 1, 2, 1], vec![-10.0, 10.0]).unwrap();
        assert!(activation_forward(&big, Activation::Sigmoid).is_finite());
    }

    #[test]
    fn sigmoid_derivative_matches_central_difference() {
        let h = 1e-5;
        for i in -40..=40 {
            let z = f64::from(i) * 0.25;
            let y = Tensor4::<f64>::filled([1, 1, 1, 1], sigmoid(z));
            let analytic =
                activation_backward(&y, &Tensor4::filled([1, 1, 1, 1], 1.0), Activation::Sigmoid)
                    .values()[0];
            let numeric = (sigmoid(z + h) - sigmoid(z - h)) / (2.0 * h);
            assert!((analytic - numeric).abs() < 1e-6, "z={z}");
        }
    }

    #[test]
    fn concat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random([2, 3, 3, 2], &mut rng);
        let b = random([2, 3, 3, 3], &mut rng);
        let c = concat_forward(&a, &b).unwrap();
        assert_eq!(c.channels(), 5);
        assert_eq!(c.at(1, 2, 1, 3), b.at(1, 2, 1, 1));
        let (ga, gb) = concat_backward(&c, 2);
        assert_eq!((ga, gb), (a.clone(), b));
        assert!(concat_forward(&a, &random([2, 2, 3, 1], &mut rng)).is_err());
    }
}
