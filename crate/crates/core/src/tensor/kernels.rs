//! Raw f64 kernels behind the tape ops. All loops are written for the
//! autovectorizer: innermost dimension contiguous, accumulation into row
//! slices.

/// out[m,n] = sum_k a[m,k] * b[k,n]. `out` must be zeroed by the caller.
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// out[k,n] += sum_m a[m,k] * b[m,n] (i.e. aᵀ·b), accumulating.
pub fn matmul_at_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// out[m,k] += sum_n a[m,n] * b[k,n] (i.e. a·bᵀ), accumulating.
pub fn matmul_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row.iter()) {
                acc += av * bv;
            }
            out[i * k + p] += acc;
        }
    }
}

pub struct Conv2dDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Conv2dDims {
    pub fn compute(
        n: usize,
        c: usize,
        h: usize,
        w: usize,
        k: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        if stride == 0 || kh > h + 2 * pad || kw > w + 2 * pad {
            return None;
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Some(Conv2dDims { n, c, h, w, k, kh, kw, stride, pad, oh, ow })
    }
}

/// Unfold one sample [C,H,W] into columns [C*kh*kw, oh*ow] with zero padding.
fn im2col(x: &[f64], d: &Conv2dDims, cols: &mut [f64]) {
    let (c, h, w) = (d.c, d.h, d.w);
    let (oh, ow) = (d.oh, d.ow);
    cols.fill(0.0);
    let mut row = 0;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, slot) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *slot = src_row[ix as usize];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add columns back into one sample's gradient [C,H,W].
fn col2im_acc(cols: &[f64], d: &Conv2dDims, gx: &mut [f64]) {
    let (c, h, w) = (d.c, d.h, d.w);
    let (oh, ow) = (d.oh, d.ow);
    let mut row = 0;
    for ci in 0..c {
        let plane = &mut gx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let plane_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src_row = &src[oy * ow..(oy + 1) * ow];
                    for (ox, &v) in src_row.iter().enumerate() {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            plane_row[ix as usize] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Cross-correlation with zero padding: out[n,k,oy,ox].
pub fn conv2d_forward(x: &[f64], weight: &[f64], bias: &[f64], d: &Conv2dDims, out: &mut [f64]) {
    let ckk = d.c * d.kh * d.kw;
    let ohw = d.oh * d.ow;
    let mut cols = vec![0.0; ckk * ohw];
    for ni in 0..d.n {
        im2col(&x[ni * d.c * d.h * d.w..], d, &mut cols);
        let out_s = &mut out[ni * d.k * ohw..(ni + 1) * d.k * ohw];
        out_s.fill(0.0);
        matmul_acc(weight, &cols, out_s, d.k, ckk, ohw);
        for ki in 0..d.k {
            let b = bias[ki];
            for o in &mut out_s[ki * ohw..(ki + 1) * ohw] {
                *o += b;
            }
        }
    }
}

/// Gradients w.r.t. input, weight, bias. Accumulates into the g_* buffers.
pub fn conv2d_backward(
    x: &[f64],
    weight: &[f64],
    g_out: &[f64],
    d: &Conv2dDims,
    gx: &mut [f64],
    gw: &mut [f64],
    gb: &mut [f64],
) {
    let ckk = d.c * d.kh * d.kw;
    let ohw = d.oh * d.ow;
    let mut cols = vec![0.0; ckk * ohw];
    let mut gcols = vec![0.0; ckk * ohw];
    for ni in 0..d.n {
        im2col(&x[ni * d.c * d.h * d.w..], d, &mut cols);
        let go_s = &g_out[ni * d.k * ohw..(ni + 1) * d.k * ohw];
        // gw[k, ckk] += g_out[k, ohw] · colsᵀ[ohw, ckk]
        matmul_bt_acc(go_s, &cols, gw, d.k, ckk, ohw);
        for ki in 0..d.k {
            gb[ki] += go_s[ki * ohw..(ki + 1) * ohw].iter().sum::<f64>();
        }
        // gcols[ckk, ohw] = weightᵀ[ckk, k] · g_out[k, ohw]
        gcols.fill(0.0);
        matmul_at_acc(weight, go_s, &mut gcols, d.k, ckk, ohw);
        col2im_acc(&gcols, d, &mut gx[ni * d.c * d.h * d.w..(ni + 1) * d.c * d.h * d.w]);
    }
}

/// Interpolation source taps for one axis, align_corners = false,
/// edge-replicating. Returns (i0, i1, w0, w1) per output index.
pub fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let f = src.floor();
            let frac = src - f;
            let i0 = f.max(0.0) as usize;
            let i1 = (f + 1.0).min(in_len as f64 - 1.0).max(0.0) as usize;
            (i0.min(in_len - 1), i1, 1.0 - frac, frac)
        })
        .collect()
}

/// Bilinear resize of `planes` planes [h_in, w_in] -> [h_out, w_out].
pub fn bilinear_resize_forward(
    x: &[f64],
    planes: usize,
    h_in: usize,
    w_in: usize,
    h_out: usize,
    w_out: usize,
    out: &mut [f64],
) {
    let ty = bilinear_taps(h_in, h_out);
    let tx = bilinear_taps(w_in, w_out);
    for p in 0..planes {
        let src = &x[p * h_in * w_in..(p + 1) * h_in * w_in];
        let dst = &mut out[p * h_out * w_out..(p + 1) * h_out * w_out];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let r0 = &src[y0 * w_in..y0 * w_in + w_in];
            let r1 = &src[y1 * w_in..y1 * w_in + w_in];
            let dst_row = &mut dst[oy * w_out..(oy + 1) * w_out];
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                dst_row[ox] = wy0 * (wx0 * r0[x0] + wx1 * r0[x1])
                    + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
            }
        }
    }
}

/// Scatter-add the resize adjoint into gx.
pub fn bilinear_resize_backward(
    g_out: &[f64],
    planes: usize,
    h_in: usize,
    w_in: usize,
    h_out: usize,
    w_out: usize,
    gx: &mut [f64],
) {
    let ty = bilinear_taps(h_in, h_out);
    let tx = bilinear_taps(w_in, w_out);
    for p in 0..planes {
        let g = &g_out[p * h_out * w_out..(p + 1) * h_out * w_out];
        let dst = &mut gx[p * h_in * w_in..(p + 1) * h_in * w_in];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let g_row = &g[oy * w_out..(oy + 1) * w_out];
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let gv = g_row[ox];
                dst[y0 * w_in + x0] += wy0 * wx0 * gv;
                dst[y0 * w_in + x1] += wy0 * wx1 * gv;
                dst[y1 * w_in + x0] += wy1 * wx0 * gv;
                dst[y1 * w_in + x1] += wy1 * wx1 * gv;
            }
        }
    }
}

/// Average-pool [n, c, h, w] spatially until both dims are <= `max_side`.
/// Pools by the smallest integer factor that gets each dim under the cap;
/// used to bound probe cost on early layers. Returns (data, oh, ow).
pub fn avg_pool_to_max(
    x: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    max_side: usize,
) -> (Vec<f64>, usize, usize) {
    let fy = h.div_ceil(max_side).max(1);
    let fx = w.div_ceil(max_side).max(1);
    if fy == 1 && fx == 1 {
        return (x.to_vec(), h, w);
    }
    let oh = h / fy;
    let ow = w / fx;
    let mut out = vec![0.0; n * c * oh * ow];
    let inv = 1.0 / (fy * fx) as f64;
    for p in 0..n * c {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..fy {
                    for dx in 0..fx {
                        acc += src[(oy * fy + dy) * w + ox * fx + dx];
                    }
                }
                dst[oy * ow + ox] = acc * inv;
            }
        }
    }
    (out, oh, ow)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [[1,2],[3,4]] * [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut out = [0.0; 4];
        matmul_acc(&a, &b, &mut out, 2, 2, 2);
        assert_eq!(out, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transposed_variants_agree_with_materialized() {
        let m = 3;
        let k = 4;
        let n = 5;
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.3 - 1.0).collect();
        let b: Vec<f64> = (0..m * n).map(|i| (i as f64).sin()).collect();
        // at·b via kernel
        let mut out = vec![0.0; k * n];
        matmul_at_acc(&a, &b, &mut out, m, k, n);
        // reference: transpose a then plain matmul
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for j in 0..k {
                at[j * m + i] = a[i * k + j];
            }
        }
        let mut expect = vec![0.0; k * n];
        matmul_acc(&at, &b, &mut expect, k, m, n);
        for (x, y) in out.iter().zip(expect.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_caps_dims() {
        let x = vec![1.0; 2 * 3 * 32 * 32];
        let (y, oh, ow) = avg_pool_to_max(&x, 2, 3, 32, 32, 16);
        assert_eq!((oh, ow), (16, 16));
        assert_eq!(y.len(), 2 * 3 * 16 * 16);
        assert!(y.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }
}
