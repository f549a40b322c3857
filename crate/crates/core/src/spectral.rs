//! 2D Fourier analysis of feature planes: amplitude/phase decomposition,
//! conjugate-symmetric half-spectrum vectorization and its inverse, and polar
//! recombination. The forward transform is unnormalized, the inverse carries
//! the 1/(H·W) factor. Dimensions must be powers of two (radix-2 transform;
//! the resize upstream guarantees this in the pipeline).
//!
//! No fftshift anywhere: mirroring is done with modular indices, i.e.
//! `A(u,v) == A((H-u) % H, (W-v) % W)` for amplitudes of real planes.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bins with amplitude below this are treated as zero-magnitude: their phase
/// is ill-conditioned and phase gradients there are zeroed.
pub const EPS_MAG: f64 = 1e-12;

/// Max imaginary residue tolerated when inverting a supposedly
/// conjugate-symmetric spectrum.
pub const IM_RESIDUE_TOL: f64 = 1e-6;

/// Tolerance for the conjugate-symmetry precondition of [`vectorize_t`].
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Amplitude and phase planes of one channel's 2D DFT.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub h: usize,
    pub w: usize,
    pub amplitude: Tensor,
    pub phase: Tensor,
}

/// Half-spectrum amplitude vector: all H rows of columns 0..=W/2,
/// row-major. Length is H·(W/2+1), the minimal layout from which the full
/// conjugate-symmetric plane can be mirrored back exactly.
#[derive(Debug, Clone)]
pub struct HalfSpectrumVector {
    pub h: usize,
    pub w: usize,
    pub values: Tensor,
}

pub fn half_vector_len(h: usize, w: usize) -> usize {
    h * (w / 2 + 1)
}

fn check_pow2(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_power_of_two() || !w.is_power_of_two() {
        return Err(Error::Config(format!(
            "fft dimensions must be nonzero powers of two, got {h}x{w}"
        )));
    }
    Ok(())
}

// ── radix-2 core ─────────────────────────────────────────────────────

/// In-place iterative radix-2 transform, unnormalized in both directions.
fn fft_1d(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    if n <= 1 {
        return;
    }
    // Bit-reversal permutation over the log2(n) low bits.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = ((i as u64).reverse_bits() >> (64 - bits)) as usize;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        for start in (0..n).step_by(len) {
            let mut cr = 1.0;
            let mut ci = 0.0;
            for k in 0..len / 2 {
                let i0 = start + k;
                let i1 = start + k + len / 2;
                let tr = re[i1] * cr - im[i1] * ci;
                let ti = re[i1] * ci + im[i1] * cr;
                re[i1] = re[i0] - tr;
                im[i1] = im[i0] - ti;
                re[i0] += tr;
                im[i0] += ti;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
        len <<= 1;
    }
}

/// In-place 2D transform over one [h, w] plane, unnormalized.
pub(crate) fn fft2_raw(re: &mut [f64], im: &mut [f64], h: usize, w: usize, inverse: bool) {
    for y in 0..h {
        fft_1d(&mut re[y * w..(y + 1) * w], &mut im[y * w..(y + 1) * w], inverse);
    }
    let mut cr = vec![0.0; h];
    let mut ci = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            cr[y] = re[y * w + x];
            ci[y] = im[y * w + x];
        }
        fft_1d(&mut cr, &mut ci, inverse);
        for y in 0..h {
            re[y * w + x] = cr[y];
            im[y * w + x] = ci[y];
        }
    }
}

// ── plane-level kernels (shared by the public API and the tape ops) ──

/// Canonicalize a spectrum of a real plane: each bin above the canonical
/// half is replaced by the conjugate of its modular mirror, and
/// self-conjugate bins get their (mathematically zero) imaginary part
/// cleared. This removes the ~1 ulp rounding asymmetry of the radix-2
/// butterflies so the conjugate-symmetry invariants hold exactly.
fn conjugate_canonicalize(re: &mut [f64], im: &mut [f64], h: usize, w: usize) {
    for u in 0..h {
        let mu = (h - u) % h;
        for v in 0..w {
            let mv = (w - v) % w;
            let i = u * w + v;
            if (mu, mv) == (u, v) {
                im[i] = 0.0;
            } else if (mu, mv) < (u, v) {
                let m = mu * w + mv;
                re[i] = re[m];
                im[i] = -im[m];
            }
        }
    }
}

/// Forward DFT of a real plane: writes |X| and atan2(Im, Re).
pub(crate) fn fft2_polar_plane(plane: &[f64], h: usize, w: usize, amp: &mut [f64], phase: &mut [f64], re: &mut [f64], im: &mut [f64]) {
    re.copy_from_slice(plane);
    im.fill(0.0);
    fft2_raw(re, im, h, w, false);
    conjugate_canonicalize(re, im, h, w);
    for i in 0..h * w {
        amp[i] = re[i].hypot(im[i]);
        phase[i] = im[i].atan2(re[i]);
    }
}

/// Adjoint of the real-plane -> (amplitude, phase) map.
/// g_plane = Re(unnormalized inverse DFT of (gRe + i·gIm)) with
///   gRe = gA·Re/|X| - gP·Im/|X|², gIm = gA·Im/|X| + gP·Re/|X|².
/// Amplitude uses subgradient 0 at |X| = 0; phase gradients are zeroed at
/// bins with |X| < EPS_MAG.
pub(crate) fn fft2_polar_backward_plane(
    g_amp: &[f64],
    g_phase: &[f64],
    re: &[f64],
    im: &[f64],
    h: usize,
    w: usize,
    g_plane: &mut [f64],
) {
    let n = h * w;
    let mut gr = vec![0.0; n];
    let mut gi = vec![0.0; n];
    for i in 0..n {
        let a = re[i].hypot(im[i]);
        if a > 0.0 {
            gr[i] += g_amp[i] * re[i] / a;
            gi[i] += g_amp[i] * im[i] / a;
        }
        if a > EPS_MAG {
            let a2 = a * a;
            gr[i] -= g_phase[i] * im[i] / a2;
            gi[i] += g_phase[i] * re[i] / a2;
        }
    }
    fft2_raw(&mut gr, &mut gi, h, w, true);
    g_plane.copy_from_slice(&gr);
}

/// Polar recombination followed by normalized inverse DFT. The amplitude is
/// clamped at 0 from below. Returns the max imaginary residue so callers can
/// enforce the symmetry contract.
pub(crate) fn recombine_ifft2_plane(
    amp: &[f64],
    phase: &[f64],
    h: usize,
    w: usize,
    out: &mut [f64],
) -> f64 {
    let n = h * w;
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for i in 0..n {
        let a = amp[i].max(0.0);
        re[i] = a * phase[i].cos();
        im[i] = a * phase[i].sin();
    }
    fft2_raw(&mut re, &mut im, h, w, true);
    let norm = 1.0 / n as f64;
    let mut max_im = 0.0f64;
    for i in 0..n {
        out[i] = re[i] * norm;
        max_im = max_im.max((im[i] * norm).abs());
    }
    max_im
}

/// Adjoint of [`recombine_ifft2_plane`]: (gReX + i·gImX) = DFT(g_out)/(H·W),
/// then g_amp = (gReX·cosφ + gImX·sinφ)·[amp >= 0], and
/// g_phase = amp⁺·(gImX·cosφ - gReX·sinφ).
/// The clamp subgradient at exactly 0 is 1 (the clamp is inactive at the
/// boundary); a zero-initialized decoder starts exactly there and must
/// still receive gradient.
pub(crate) fn recombine_ifft2_backward_plane(
    g_out: &[f64],
    amp: &[f64],
    phase: &[f64],
    h: usize,
    w: usize,
    g_amp: &mut [f64],
    g_phase: &mut [f64],
) {
    let n = h * w;
    let norm = 1.0 / n as f64;
    let mut gr: Vec<f64> = g_out.to_vec();
    let mut gi = vec![0.0; n];
    fft2_raw(&mut gr, &mut gi, h, w, false);
    for i in 0..n {
        let (s, c) = phase[i].sin_cos();
        let grx = gr[i] * norm;
        let gix = gi[i] * norm;
        let a = amp[i].max(0.0);
        g_amp[i] = if amp[i] >= 0.0 { grx * c + gix * s } else { 0.0 };
        g_phase[i] = a * (gix * c - grx * s);
    }
}

pub(crate) fn max_asymmetry(amp: &[f64], h: usize, w: usize) -> f64 {
    let mut worst = 0.0f64;
    for u in 0..h {
        let mu = (h - u) % h;
        for v in 0..w {
            let mv = (w - v) % w;
            worst = worst.max((amp[u * w + v] - amp[mu * w + mv]).abs());
        }
    }
    worst
}

// ── public single-plane API ──────────────────────────────────────────

/// Unnormalized forward DFT of a real [H, W] plane.
pub fn fft2(plane: &Tensor) -> Result<Spectrum> {
    let s = plane.shape();
    if s.len() != 2 {
        return Err(Error::Config(format!("fft2 expects a rank-2 plane, got {s:?}")));
    }
    let (h, w) = (s[0], s[1]);
    check_pow2(h, w)?;
    let n = h * w;
    let mut amp = vec![0.0; n];
    let mut phase = vec![0.0; n];
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    fft2_polar_plane(plane.data(), h, w, &mut amp, &mut phase, &mut re, &mut im);
    Ok(Spectrum {
        h,
        w,
        amplitude: Tensor::new(&[h, w], amp)?,
        phase: Tensor::new(&[h, w], phase)?,
    })
}

/// Inverse DFT with 1/(H·W) normalization. The imaginary residue must stay
/// below [`IM_RESIDUE_TOL`]; a larger residue signals a corrupted
/// (asymmetric) amplitude reconstruction.
pub fn ifft2(spec: &Spectrum) -> Result<Tensor> {
    check_pow2(spec.h, spec.w)?;
    let n = spec.h * spec.w;
    let mut out = vec![0.0; n];
    let residue = recombine_ifft2_plane(
        spec.amplitude.data(),
        spec.phase.data(),
        spec.h,
        spec.w,
        &mut out,
    );
    if residue >= IM_RESIDUE_TOL {
        return Err(Error::Symmetry(format!(
            "ifft2 imaginary residue {residue:.3e} exceeds {IM_RESIDUE_TOL:.1e}"
        )));
    }
    Tensor::new(&[spec.h, spec.w], out)
}

/// Vectorize the non-redundant half of a conjugate-symmetric amplitude
/// plane: all rows of columns 0..=W/2, row-major.
pub fn vectorize_t(amplitude: &Tensor) -> Result<HalfSpectrumVector> {
    let s = amplitude.shape();
    if s.len() != 2 {
        return Err(Error::Config(format!("vectorize_t expects rank-2, got {s:?}")));
    }
    let (h, w) = (s[0], s[1]);
    let asym = max_asymmetry(amplitude.data(), h, w);
    if asym > SYMMETRY_TOL {
        return Err(Error::Symmetry(format!(
            "amplitude asymmetry {asym:.3e} exceeds {SYMMETRY_TOL:.1e}"
        )));
    }
    let half_w = w / 2 + 1;
    let a = amplitude.data();
    let mut values = Vec::with_capacity(h * half_w);
    for u in 0..h {
        values.extend_from_slice(&a[u * w..u * w + half_w]);
    }
    Ok(HalfSpectrumVector {
        h,
        w,
        values: Tensor::new(&[h * half_w], values)?,
    })
}

/// Mirror a half-spectrum vector back to the full [H, W] amplitude plane:
/// columns 0..=W/2 are copied, the rest filled with
/// A(u, v) = A((H-u) % H, W-v). The output is symmetric by construction.
pub fn devectorize_tinv(vec: &HalfSpectrumVector) -> Result<Tensor> {
    let (h, w) = (vec.h, vec.w);
    let half_w = w / 2 + 1;
    if vec.values.numel() != h * half_w {
        return Err(Error::Config(format!(
            "half-spectrum vector for {h}x{w} must have {} values, got {}",
            h * half_w,
            vec.values.numel()
        )));
    }
    let mut out = vec![0.0; h * w];
    devectorize_plane(vec.values.data(), h, w, &mut out);
    Tensor::new(&[h, w], out)
}

pub(crate) fn devectorize_plane(values: &[f64], h: usize, w: usize, out: &mut [f64]) {
    let half_w = w / 2 + 1;
    // Columns 0 and W/2 mirror onto themselves, so rows u and H-u within
    // them are redundant slots of the same bin; average the pair to land
    // exactly on the symmetric subspace for arbitrary (decoder) input.
    for u in 0..h {
        let mu = (h - u) % h;
        for v in 0..half_w {
            let self_col = v == 0 || 2 * v == w;
            out[u * w + v] = if self_col && mu != u {
                0.5 * (values[u * half_w + v] + values[mu * half_w + v])
            } else {
                values[u * half_w + v]
            };
        }
    }
    for u in 0..h {
        let mu = (h - u) % h;
        for v in half_w..w {
            out[u * w + v] = out[mu * w + (w - v)];
        }
    }
}

/// Pair amplitude and phase planes into a spectrum, clamping the amplitude
/// at 0 from below.
pub fn recombine(amplitude: &Tensor, phase: &Tensor) -> Result<Spectrum> {
    if amplitude.shape() != phase.shape() {
        return Err(Error::Config(format!(
            "recombine shape mismatch: amplitude {:?} vs phase {:?}",
            amplitude.shape(),
            phase.shape()
        )));
    }
    let s = amplitude.shape();
    if s.len() != 2 {
        return Err(Error::Config(format!("recombine expects rank-2 planes, got {s:?}")));
    }
    let clamped: Vec<f64> = amplitude.data().iter().map(|&a| a.max(0.0)).collect();
    Ok(Spectrum {
        h: s[0],
        w: s[1],
        amplitude: Tensor::new(s, clamped)?,
        phase: phase.clone(),
    })
}
