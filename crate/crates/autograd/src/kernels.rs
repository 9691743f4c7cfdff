//! Raw numeric kernels behind the graph ops: GEMM, 3D convolution,
//! trilinear 2x upsampling and z-axis quarter-turn permutations.

/// `c = beta * c + op(a) * op(b)` with row-major operands.
///
/// `op(a)` is `m x k` and `op(b)` is `k x n`; `trans_*` selects a transposed
/// view of the stored matrix.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above pin every buffer to the extents implied by
    // (m, k, n) and the strides describe in-bounds row/column-major views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a cubic-kernel 3D convolution over a `[C, D, H, W]` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_dims: [usize; 3],
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_dims(&self) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for (o, &i) in out.iter_mut().zip(&self.in_dims) {
            let padded = i + 2 * self.pad;
            if padded < self.kernel || self.stride == 0 {
                return None;
            }
            *o = (padded - self.kernel) / self.stride + 1;
        }
        Some(out)
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(x: &[f64], g: &ConvGeom, out: [usize; 3], col: &mut [f64]) {
    let [d, h, w] = g.in_dims;
    let [od, oh, ow] = out;
    let n_out = od * oh * ow;
    let k = g.kernel;
    let (s, p) = (g.stride as isize, g.pad as isize);
    let mut row = 0;
    for c in 0..g.in_channels {
        let xc = &x[c * d * h * w..(c + 1) * d * h * w];
        for kd in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    let dst = &mut col[row * n_out..(row + 1) * n_out];
                    let mut j = 0;
                    for zd in 0..od {
                        let id = zd as isize * s + kd as isize - p;
                        for zh in 0..oh {
                            let ih = zh as isize * s + kh as isize - p;
                            let plane_ok = id >= 0 && id < d as isize && ih >= 0 && ih < h as isize;
                            let base = if plane_ok {
                                (id as usize * h + ih as usize) * w
                            } else {
                                0
                            };
                            for zw in 0..ow {
                                let iw = zw as isize * s + kw as isize - p;
                                dst[j] = if plane_ok && iw >= 0 && iw < w as isize {
                                    xc[base + iw as usize]
                                } else {
                                    0.0
                                };
                                j += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &ConvGeom, out: [usize; 3], dx: &mut [f64]) {
    let [d, h, w] = g.in_dims;
    let [od, oh, ow] = out;
    let n_out = od * oh * ow;
    let k = g.kernel;
    let (s, p) = (g.stride as isize, g.pad as isize);
    let mut row = 0;
    for c in 0..g.in_channels {
        let dxc = &mut dx[c * d * h * w..(c + 1) * d * h * w];
        for kd in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    let src = &col[row * n_out..(row + 1) * n_out];
                    let mut j = 0;
                    for zd in 0..od {
                        let id = zd as isize * s + kd as isize - p;
                        for zh in 0..oh {
                            let ih = zh as isize * s + kh as isize - p;
                            if id < 0 || id >= d as isize || ih < 0 || ih >= h as isize {
                                j += ow;
                                continue;
                            }
                            let base = (id as usize * h + ih as usize) * w;
                            for zw in 0..ow {
                                let iw = zw as isize * s + kw as isize - p;
                                if iw >= 0 && iw < w as isize {
                                    dxc[base + iw as usize] += src[j];
                                }
                                j += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Forward convolution. `x` is `[C, D, H, W]`, `weight` is `[O, C, k, k, k]`,
/// `bias` is `[O]`; returns `[O, D', H', W']` flattened.
pub fn conv3d_forward(x: &[f64], weight: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    let out = g.out_dims().expect("conv geometry validated by caller");
    let n_out = out.iter().product::<usize>();
    let mut y = vec![0.0; g.out_channels * n_out];
    for (o, chunk) in y.chunks_mut(n_out).enumerate() {
        chunk.iter_mut().for_each(|v| *v = bias[o]);
    }
    let rows = g.col_rows();
    if g.is_pointwise() {
        gemm(g.out_channels, rows, n_out, weight, false, x, false, 1.0, &mut y);
    } else {
        let mut col = vec![0.0; rows * n_out];
        im2col(x, g, out, &mut col);
        gemm(g.out_channels, rows, n_out, weight, false, &col, false, 1.0, &mut y);
    }
    y
}

/// Gradients of a convolution given the upstream gradient `dy`.
/// Returns `(dx, dweight, dbias)`; `dx` is skipped when `need_dx` is false.
pub fn conv3d_backward(
    x: &[f64],
    weight: &[f64],
    dy: &[f64],
    g: &ConvGeom,
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let out = g.out_dims().expect("conv geometry validated by caller");
    let n_out = out.iter().product::<usize>();
    let rows = g.col_rows();
    let dbias: Vec<f64> = dy.chunks(n_out).map(|c| c.iter().sum()).collect();
    let mut dweight = vec![0.0; g.out_channels * rows];
    let n_in = g.in_channels * g.in_dims.iter().product::<usize>();
    if g.is_pointwise() {
        gemm(g.out_channels, n_out, rows, dy, false, x, true, 0.0, &mut dweight);
        let dx = need_dx.then(|| {
            let mut dx = vec![0.0; n_in];
            gemm(rows, g.out_channels, n_out, weight, true, dy, false, 0.0, &mut dx);
            dx
        });
        return (dx, dweight, dbias);
    }
    let mut col = vec![0.0; rows * n_out];
    im2col(x, g, out, &mut col);
    gemm(g.out_channels, n_out, rows, dy, false, &col, true, 0.0, &mut dweight);
    let dx = need_dx.then(|| {
        gemm(rows, g.out_channels, n_out, weight, true, dy, false, 0.0, &mut col);
        let mut dx = vec![0.0; n_in];
        col2im(&col, g, out, &mut dx);
        dx
    });
    (dx, dweight, dbias)
}

/// Linear 2x upsampling along one axis of a buffer viewed as
/// `[outer, n, inner]`, half-pixel centres with edge clamping.
fn upsample_axis(src: &[f64], outer: usize, n: usize, inner: usize) -> Vec<f64> {
    let mut dst = vec![0.0; outer * 2 * n * inner];
    for o in 0..outer {
        let s = &src[o * n * inner..(o + 1) * n * inner];
        let d = &mut dst[o * 2 * n * inner..(o + 1) * 2 * n * inner];
        for i in 0..n {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            for t in 0..inner {
                let c = s[i * inner + t];
                d[2 * i * inner + t] = 0.75 * c + 0.25 * s[lo * inner + t];
                d[(2 * i + 1) * inner + t] = 0.75 * c + 0.25 * s[hi * inner + t];
            }
        }
    }
    dst
}

/// Adjoint of [`upsample_axis`].
fn upsample_axis_adjoint(dsrc: &[f64], outer: usize, n: usize, inner: usize) -> Vec<f64> {
    let mut dst = vec![0.0; outer * n * inner];
    for o in 0..outer {
        let g = &dsrc[o * 2 * n * inner..(o + 1) * 2 * n * inner];
        let d = &mut dst[o * n * inner..(o + 1) * n * inner];
        for i in 0..n {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            for t in 0..inner {
                let even = g[2 * i * inner + t];
                let odd = g[(2 * i + 1) * inner + t];
                d[i * inner + t] += 0.75 * (even + odd);
                d[lo * inner + t] += 0.25 * even;
                d[hi * inner + t] += 0.25 * odd;
            }
        }
    }
    dst
}

/// Trilinear 2x upsampling of a `[C, D, H, W]` buffer.
pub fn upsample2_forward(x: &[f64], c: usize, dims: [usize; 3]) -> Vec<f64> {
    let [d, h, w] = dims;
    let a = upsample_axis(x, c, d, h * w);
    let b = upsample_axis(&a, c * 2 * d, h, w);
    upsample_axis(&b, c * 2 * d * 2 * h, w, 1)
}

pub fn upsample2_backward(dy: &[f64], c: usize, dims: [usize; 3]) -> Vec<f64> {
    let [d, h, w] = dims;
    let b = upsample_axis_adjoint(dy, c * 2 * d * 2 * h, w, 1);
    let a = upsample_axis_adjoint(&b, c * 2 * d, h, w);
    upsample_axis_adjoint(&a, c, d, h * w)
}

/// Rotate every `n x n` trailing plane of `src` by `quarter_turns`
/// counter-clockwise turns: one turn maps `out[h, w] = in[w, n-1-h]`.
pub fn rotate_planes<T: Copy>(src: &[T], n: usize, quarter_turns: u8) -> Vec<T> {
    let plane = n * n;
    assert_eq!(src.len() % plane.max(1), 0);
    let k = quarter_turns % 4;
    let mut dst = Vec::with_capacity(src.len());
    for p in src.chunks(plane) {
        for h in 0..n {
            for w in 0..n {
                let (sh, sw) = match k {
                    0 => (h, w),
                    1 => (w, n - 1 - h),
                    2 => (n - 1 - h, n - 1 - w),
                    _ => (n - 1 - w, h),
                };
                dst.push(p[sh * n + sw]);
            }
        }
    }
    dst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], wt: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
        let [d, h, w] = g.in_dims;
        let [od, oh, ow] = g.out_dims().unwrap();
        let k = g.kernel;
        let mut y = vec![0.0; g.out_channels * od * oh * ow];
        for o in 0..g.out_channels {
            for zd in 0..od {
                for zh in 0..oh {
                    for zw in 0..ow {
                        let mut acc = b[o];
                        for c in 0..g.in_channels {
                            for kd in 0..k {
                                for kh in 0..k {
                                    for kw in 0..k {
                                        let id = (zd * g.stride + kd) as isize - g.pad as isize;
                                        let ih = (zh * g.stride + kh) as isize - g.pad as isize;
                                        let iw = (zw * g.stride + kw) as isize - g.pad as isize;
                                        if id < 0 || ih < 0 || iw < 0 {
                                            continue;
                                        }
                                        let (id, ih, iw) = (id as usize, ih as usize, iw as usize);
                                        if id >= d || ih >= h || iw >= w {
                                            continue;
                                        }
                                        let wi = (((o * g.in_channels + c) * k + kd) * k + kh) * k + kw;
                                        acc += wt[wi] * x[((c * d + id) * h + ih) * w + iw];
                                    }
                                }
                            }
                        }
                        y[((o * od + zd) * oh + zh) * ow + zw] = acc;
                    }
                }
            }
        }
        y
    }

    fn ramp(n: usize, a: f64, b: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64) * a + b).sin()).collect()
    }

    #[test]
    fn conv_matches_naive_loops() {
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0), (2, 2, 0)] {
            let g = ConvGeom {
                in_channels: 2,
                out_channels: 3,
                in_dims: [5, 4, 6],
                kernel: k,
                stride: s,
                pad: p,
            };
            let x = ramp(2 * 5 * 4 * 6, 0.37, 0.1);
            let w = ramp(3 * 2 * k * k * k, 0.91, 0.3);
            let b = vec![0.1, -0.2, 0.3];
            let fast = conv3d_forward(&x, &w, &b, &g);
            let slow = naive_conv(&x, &w, &b, &g);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "k={k} s={s}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn upsample_adjoint_identity() {
        // <U x, y> == <x, U^T y>
        let dims = [2, 3, 2];
        let x = ramp(2 * 12, 0.7, 0.2);
        let y = ramp(2 * 96, 0.3, 1.1);
        let ux = upsample2_forward(&x, 2, dims);
        let uty = upsample2_backward(&y, 2, dims);
        let lhs: f64 = ux.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&uty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn upsample_preserves_constants() {
        let x = vec![2.5; 8];
        assert!(upsample2_forward(&x, 1, [2, 2, 2]).iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn quarter_turn_example() {
        assert_eq!(rotate_planes(&[1, 2, 3, 4], 2, 1), vec![2, 4, 1, 3]);
        assert_eq!(rotate_planes(&[1, 2, 3, 4], 2, 2), vec![4, 3, 2, 1]);
    }
}
