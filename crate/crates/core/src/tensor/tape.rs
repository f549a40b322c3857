//! Wengert tape: ops are recorded eagerly during the forward pass and
//! replayed in reverse by [`Tape::backward`].
//!
//! Parameters are registered by name with [`Tape::param`]; registering the
//! same name twice returns the same [`Var`] so gradient contributions from
//! every use accumulate. A tape can run backward exactly once.

use crate::error::{Error, Result};
use crate::spectral;
use crate::tensor::kernels::{self, Conv2dDims};
use crate::tensor::Tensor;

/// Row L2 norms at or below this are treated as degenerate by
/// `unit_normalize`: the row passes through unchanged and a flag is raised.
pub const EPS_NORM: f64 = 1e-12;

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

struct Slot {
    data: Vec<f64>,
    shape: Vec<usize>,
}

enum Op {
    Add { a: usize, b: usize, out: usize },
    Scale { x: usize, c: f64, out: usize },
    Conv2d { x: usize, w: usize, b: usize, out: usize, dims: Conv2dDims },
    Linear { x: usize, w: usize, b: usize, out: usize, n: usize, d: usize, e: usize },
    LeakyRelu { x: usize, out: usize, slope: f64 },
    SoftmaxCe { logits: usize, out: usize, probs: Vec<f64>, labels: Vec<i64>, count: usize, c: usize, hw: usize },
    Mse { a: usize, b: usize, out: usize },
    Resize { x: usize, out: usize, planes: usize, h_in: usize, w_in: usize, h_out: usize, w_out: usize },
    UnitNorm { x: usize, out: usize, norms: Vec<f64> },
    FftPolar { amp: usize, phase: usize, re: Vec<f64>, im: Vec<f64>, x: usize, planes: usize, h: usize, w: usize },
    RecombineIfft { amp: usize, phase: usize, out: usize, planes: usize, h: usize, w: usize },
    VectorizeHalf { x: usize, out: usize, planes: usize, h: usize, w: usize },
    DevectorizeMirror { x: usize, out: usize, planes: usize, h: usize, w: usize },
    MirrorAvg { x: usize, out: usize, planes: usize, h: usize, w: usize },
    Reshape { x: usize, out: usize },
    MeanHw { x: usize, out: usize, hw: usize },
}

/// Non-fatal conditions raised during the forward pass.
#[derive(Debug, Default, Clone)]
pub struct Warnings {
    /// unit_normalize saw a row with norm <= EPS_NORM.
    pub degenerate_norms: usize,
    /// softmax_cross_entropy saw a batch with every pixel ignored.
    pub all_pixels_ignored: usize,
}

pub struct Tape {
    slots: Vec<Slot>,
    ops: Vec<Op>,
    params: Vec<(String, usize, bool)>,
    grads: Vec<Option<Vec<f64>>>,
    recording: bool,
    spent: bool,
    pub warnings: Warnings,
}

impl Tape {
    /// Tape that records for backward.
    pub fn new() -> Self {
        Tape::with_recording(true)
    }

    /// Forward-only tape: ops run but nothing is saved for backward.
    pub fn inference() -> Self {
        Tape::with_recording(false)
    }

    fn with_recording(recording: bool) -> Self {
        Tape {
            slots: Vec::new(),
            ops: Vec::new(),
            params: Vec::new(),
            grads: Vec::new(),
            recording,
            spent: false,
            warnings: Warnings::default(),
        }
    }

    fn alloc(&mut self, data: Vec<f64>, shape: Vec<usize>) -> usize {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        self.slots.push(Slot { data, shape });
        self.grads.push(None);
        self.slots.len() - 1
    }

    fn record(&mut self, op: Op) {
        if self.recording {
            self.ops.push(op);
        }
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.slots[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.slots[v.0].shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(&self.slots[v.0].shape.clone(), self.slots[v.0].data.clone()).unwrap()
    }

    /// Unnamed leaf (input data, labels-as-values, frozen constants).
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        Var(self.alloc(t.data().to_vec(), t.shape().to_vec()))
    }

    /// Named parameter leaf. Registering a name twice returns the original
    /// Var so every use shares one gradient accumulator.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Result<Var> {
        if let Some((_, id, _)) = self.params.iter().find(|(n, _, _)| n == name) {
            if self.slots[*id].shape != t.shape() {
                return Err(Error::Config(format!(
                    "parameter {name} re-registered with shape {:?}, expected {:?}",
                    t.shape(),
                    self.slots[*id].shape
                )));
            }
            return Ok(Var(*id));
        }
        let id = self.alloc(t.data().to_vec(), t.shape().to_vec());
        self.params.push((name.to_string(), id, t.requires_grad));
        Ok(Var(id))
    }

    // ── ops ──────────────────────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.slots[a.0].shape != self.slots[b.0].shape {
            return Err(Error::Config(format!(
                "add shape mismatch: {:?} vs {:?}",
                self.slots[a.0].shape, self.slots[b.0].shape
            )));
        }
        let data: Vec<f64> = self.slots[a.0]
            .data
            .iter()
            .zip(self.slots[b.0].data.iter())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.slots[a.0].shape.clone();
        let out = self.alloc(data, shape);
        self.record(Op::Add { a: a.0, b: b.0, out });
        Ok(Var(out))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data: Vec<f64> = self.slots[x.0].data.iter().map(|v| v * c).collect();
        let shape = self.slots[x.0].shape.clone();
        let out = self.alloc(data, shape);
        self.record(Op::Scale { x: x.0, c, out });
        Var(out)
    }

    /// Standard cross-correlation with zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.slots[x.0].shape.clone();
        let ws = self.slots[w.0].shape.clone();
        let bs = self.slots[b.0].shape.clone();
        if xs.len() != 4 || ws.len() != 4 || bs.len() != 1 || ws[1] != xs[1] || bs[0] != ws[0] {
            return Err(Error::Config(format!(
                "conv2d shapes: input {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        let dims = Conv2dDims::compute(xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], stride, pad)
            .ok_or_else(|| {
                Error::Config(format!(
                    "conv2d kernel {}x{} does not fit input {}x{} with stride {stride} pad {pad}",
                    ws[2], ws[3], xs[2], xs[3]
                ))
            })?;
        let mut out = vec![0.0; dims.n * dims.k * dims.oh * dims.ow];
        kernels::conv2d_forward(
            &self.slots[x.0].data,
            &self.slots[w.0].data,
            &self.slots[b.0].data,
            &dims,
            &mut out,
        );
        let shape = vec![dims.n, dims.k, dims.oh, dims.ow];
        let out = self.alloc(out, shape);
        self.record(Op::Conv2d { x: x.0, w: w.0, b: b.0, out, dims });
        Ok(Var(out))
    }

    /// Affine map: [N, D] x [D, E] + [E].
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.slots[x.0].shape.clone();
        let ws = self.slots[w.0].shape.clone();
        let bs = self.slots[b.0].shape.clone();
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(Error::Config(format!(
                "linear shapes: input {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        let (n, d, e) = (xs[0], xs[1], ws[1]);
        let mut out = vec![0.0; n * e];
        kernels::matmul_acc(&self.slots[x.0].data, &self.slots[w.0].data, &mut out, n, d, e);
        for row in 0..n {
            for (o, &bv) in out[row * e..(row + 1) * e].iter_mut().zip(self.slots[b.0].data.iter()) {
                *o += bv;
            }
        }
        let out = self.alloc(out, vec![n, e]);
        self.record(Op::Linear { x: x.0, w: w.0, b: b.0, out, n, d, e });
        Ok(Var(out))
    }

    /// Elementwise max(x, slope·x). slope must be in [0, 1). The subgradient
    /// at exactly 0 uses the negative-side slope.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&slope) {
            return Err(Error::Config(format!("leaky_relu slope {slope} outside [0, 1)")));
        }
        let data: Vec<f64> = self.slots[x.0]
            .data
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let shape = self.slots[x.0].shape.clone();
        let out = self.alloc(data, shape);
        self.record(Op::LeakyRelu { x: x.0, out, slope });
        Ok(Var(out))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.leaky_relu(x, 0.0)
    }

    /// Mean over non-ignored pixels of -log softmax(logits)[label].
    /// logits: [N, C, H, W], labels: per-pixel class ids of length N·H·W.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[i64], ignore_index: i64) -> Result<Var> {
        let ls = self.slots[logits.0].shape.clone();
        if ls.len() != 4 {
            return Err(Error::Config(format!("softmax_ce expects [N,C,H,W], got {ls:?}")));
        }
        let (n, c, h, w) = (ls[0], ls[1], ls[2], ls[3]);
        if labels.len() != n * h * w {
            return Err(Error::Config(format!(
                "softmax_ce label count {} does not match {}x{}x{}",
                labels.len(),
                n,
                h,
                w
            )));
        }
        let hw = h * w;
        let x = &self.slots[logits.0].data;
        let mut probs = vec![0.0; n * c * hw];
        let mut loss = 0.0;
        let mut count = 0usize;
        for ni in 0..n {
            for pi in 0..hw {
                let lbl = labels[ni * hw + pi];
                if lbl == ignore_index {
                    continue;
                }
                if lbl < 0 || lbl >= c as i64 {
                    return Err(Error::Config(format!(
                        "label {lbl} outside [0, {c}) and not ignore_index {ignore_index}"
                    )));
                }
                let base = ni * c * hw + pi;
                let mut maxv = f64::NEG_INFINITY;
                for ci in 0..c {
                    maxv = maxv.max(x[base + ci * hw]);
                }
                let mut denom = 0.0;
                for ci in 0..c {
                    let e = (x[base + ci * hw] - maxv).exp();
                    probs[base + ci * hw] = e;
                    denom += e;
                }
                for ci in 0..c {
                    probs[base + ci * hw] /= denom;
                }
                loss -= probs[base + lbl as usize * hw].max(1e-300).ln();
                count += 1;
            }
        }
        if count == 0 {
            self.warnings.all_pixels_ignored += 1;
            loss = 0.0;
        } else {
            loss /= count as f64;
        }
        let out = self.alloc(vec![loss], vec![]);
        self.record(Op::SoftmaxCe {
            logits: logits.0,
            out,
            probs,
            labels: labels.to_vec(),
            count,
            c,
            hw,
        });
        Ok(Var(out))
    }

    /// Mean squared error (mean, not sum, so the magnitude is
    /// resolution-independent).
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.slots[a.0].shape != self.slots[b.0].shape {
            return Err(Error::Config(format!(
                "mse shape mismatch: {:?} vs {:?}",
                self.slots[a.0].shape, self.slots[b.0].shape
            )));
        }
        let n = self.slots[a.0].data.len();
        let loss = self.slots[a.0]
            .data
            .iter()
            .zip(self.slots[b.0].data.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n as f64;
        let out = self.alloc(vec![loss], vec![]);
        self.record(Op::Mse { a: a.0, b: b.0, out });
        Ok(Var(out))
    }

    /// Bilinear interpolation (align_corners = false) over the trailing two
    /// dims of a rank-3 or rank-4 tensor.
    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let xs = self.slots[x.0].shape.clone();
        if xs.len() < 2 || out_h == 0 || out_w == 0 {
            return Err(Error::Config(format!(
                "bilinear_resize: input {xs:?}, target {out_h}x{out_w}"
            )));
        }
        let (h_in, w_in) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        let planes: usize = xs[..xs.len() - 2].iter().product();
        let mut out = vec![0.0; planes * out_h * out_w];
        kernels::bilinear_resize_forward(&self.slots[x.0].data, planes, h_in, w_in, out_h, out_w, &mut out);
        let mut shape = xs[..xs.len() - 2].to_vec();
        shape.push(out_h);
        shape.push(out_w);
        let out = self.alloc(out, shape);
        self.record(Op::Resize { x: x.0, out, planes, h_in, w_in, h_out: out_h, w_out: out_w });
        Ok(Var(out))
    }

    /// Project each row of [N, D] onto the unit sphere. Rows with norm at or
    /// below EPS_NORM pass through unchanged and raise the degenerate flag.
    pub fn unit_normalize(&mut self, x: Var) -> Result<Var> {
        let xs = self.slots[x.0].shape.clone();
        if xs.len() != 2 {
            return Err(Error::Config(format!("unit_normalize expects [N,D], got {xs:?}")));
        }
        let (n, d) = (xs[0], xs[1]);
        let mut out = vec![0.0; n * d];
        let mut norms = vec![0.0; n];
        for r in 0..n {
            let row = &self.slots[x.0].data[r * d..(r + 1) * d];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms[r] = norm;
            if norm <= EPS_NORM {
                self.warnings.degenerate_norms += 1;
                out[r * d..(r + 1) * d].copy_from_slice(row);
            } else {
                for (o, &v) in out[r * d..(r + 1) * d].iter_mut().zip(row.iter()) {
                    *o = v / norm;
                }
            }
        }
        let out = self.alloc(out, xs);
        self.record(Op::UnitNorm { x: x.0, out, norms });
        Ok(Var(out))
    }

    /// Per-plane forward DFT of real planes [P, H, W], decomposed into
    /// (amplitude, phase). Differentiable through both outputs.
    pub fn fft2_polar(&mut self, x: Var) -> Result<(Var, Var)> {
        let xs = self.slots[x.0].shape.clone();
        if xs.len() != 3 {
            return Err(Error::Config(format!("fft2_polar expects [P,H,W], got {xs:?}")));
        }
        let (planes, h, w) = (xs[0], xs[1], xs[2]);
        if !h.is_power_of_two() || !w.is_power_of_two() {
            return Err(Error::Config(format!("fft dimensions must be powers of two, got {h}x{w}")));
        }
        let n = h * w;
        let mut amp = vec![0.0; planes * n];
        let mut phase = vec![0.0; planes * n];
        let mut re = vec![0.0; planes * n];
        let mut im = vec![0.0; planes * n];
        for p in 0..planes {
            let r = p * n..(p + 1) * n;
            spectral::fft2_polar_plane(
                &self.slots[x.0].data[r.clone()],
                h,
                w,
                &mut amp[r.clone()],
                &mut phase[r.clone()],
                &mut re[r.clone()],
                &mut im[r],
            );
        }
        let amp_id = self.alloc(amp, xs.clone());
        let phase_id = self.alloc(phase, xs);
        if self.recording {
            self.ops.push(Op::FftPolar { amp: amp_id, phase: phase_id, re, im, x: x.0, planes, h, w });
        }
        Ok((Var(amp_id), Var(phase_id)))
    }

    /// Polar recombination + normalized inverse DFT per plane. The amplitude
    /// is clamped at 0 from below; an imaginary residue at or above the
    /// tolerance means the amplitude lost its conjugate symmetry.
    pub fn recombine_ifft2(&mut self, amp: Var, phase: Var) -> Result<Var> {
        let ashape = self.slots[amp.0].shape.clone();
        if ashape != self.slots[phase.0].shape || ashape.len() != 3 {
            return Err(Error::Config(format!(
                "recombine_ifft2 shapes: amplitude {:?} vs phase {:?}",
                ashape, self.slots[phase.0].shape
            )));
        }
        let (planes, h, w) = (ashape[0], ashape[1], ashape[2]);
        let n = h * w;
        let mut out = vec![0.0; planes * n];
        for p in 0..planes {
            let residue = spectral::recombine_ifft2_plane(
                &self.slots[amp.0].data[p * n..(p + 1) * n],
                &self.slots[phase.0].data[p * n..(p + 1) * n],
                h,
                w,
                &mut out[p * n..(p + 1) * n],
            );
            if residue >= spectral::IM_RESIDUE_TOL {
                return Err(Error::Symmetry(format!(
                    "ifft2 imaginary residue {residue:.3e} in plane {p} exceeds {:.1e}",
                    spectral::IM_RESIDUE_TOL
                )));
            }
        }
        let out = self.alloc(out, ashape);
        self.record(Op::RecombineIfft { amp: amp.0, phase: phase.0, out, planes, h, w });
        Ok(Var(out))
    }

    /// Per-plane half-spectrum vectorization [P, H, W] -> [P, H·(W/2+1)].
    /// Requires conjugate-symmetric input.
    pub fn vectorize_half(&mut self, x: Var) -> Result<Var> {
        let xs = self.slots[x.0].shape.clone();
        if xs.len() != 3 {
            return Err(Error::Config(format!("vectorize_half expects [P,H,W], got {xs:?}")));
        }
        let (planes, h, w) = (xs[0], xs[1], xs[2]);
        let n = h * w;
        let half_w = w / 2 + 1;
        let mut out = vec![0.0; planes * h * half_w];
        for p in 0..planes {
            let plane = &self.slots[x.0].data[p * n..(p + 1) * n];
            let asym = spectral::max_asymmetry(plane, h, w);
            if asym > spectral::SYMMETRY_TOL {
                return Err(Error::Symmetry(format!(
                    "vectorize_half: amplitude asymmetry {asym:.3e} in plane {p}"
                )));
            }
            for u in 0..h {
                out[p * h * half_w + u * half_w..p * h * half_w + (u + 1) * half_w]
                    .copy_from_slice(&plane[u * w..u * w + half_w]);
            }
        }
        let out = self.alloc(out, vec![planes, h * half_w]);
        self.record(Op::VectorizeHalf { x: x.0, out, planes, h, w });
        Ok(Var(out))
    }

    /// Mirror [P, H·(W/2+1)] vectors back to full conjugate-symmetric
    /// [P, H, W] planes.
    pub fn devectorize_mirror(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let xs = self.slots[x.0].shape.clone();
        let half_w = w / 2 + 1;
        if xs.len() != 2 || xs[1] != h * half_w {
            return Err(Error::Config(format!(
                "devectorize_mirror expects [P, {}] for {h}x{w}, got {xs:?}",
                h * half_w
            )));
        }
        let planes = xs[0];
        let mut out = vec![0.0; planes * h * w];
        for p in 0..planes {
            spectral::devectorize_plane(
                &self.slots[x.0].data[p * h * half_w..(p + 1) * h * half_w],
                h,
                w,
                &mut out[p * h * w..(p + 1) * h * w],
            );
        }
        let out = self.alloc(out, vec![planes, h, w]);
        self.record(Op::DevectorizeMirror { x: x.0, out, planes, h, w });
        Ok(Var(out))
    }

    /// Average each bin with its modular mirror, projecting onto the
    /// conjugate-symmetric subspace. Needed after interpolating an amplitude
    /// plane, which does not preserve the mirror symmetry exactly.
    pub fn mirror_average(&mut self, x: Var) -> Result<Var> {
        let xs = self.slots[x.0].shape.clone();
        if xs.len() != 3 {
            return Err(Error::Config(format!("mirror_average expects [P,H,W], got {xs:?}")));
        }
        let (planes, h, w) = (xs[0], xs[1], xs[2]);
        let n = h * w;
        let mut out = vec![0.0; planes * n];
        for p in 0..planes {
            let src = &self.slots[x.0].data[p * n..(p + 1) * n];
            let dst = &mut out[p * n..(p + 1) * n];
            for u in 0..h {
                let mu = (h - u) % h;
                for v in 0..w {
                    let mv = (w - v) % w;
                    dst[u * w + v] = 0.5 * (src[u * w + v] + src[mu * w + mv]);
                }
            }
        }
        let out = self.alloc(out, xs);
        self.record(Op::MirrorAvg { x: x.0, out, planes, h, w });
        Ok(Var(out))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.slots[x.0].data.len() {
            return Err(Error::Config(format!(
                "reshape {:?} -> {shape:?} changes element count",
                self.slots[x.0].shape
            )));
        }
        let data = self.slots[x.0].data.clone();
        let out = self.alloc(data, shape.to_vec());
        self.record(Op::Reshape { x: x.0, out });
        Ok(Var(out))
    }

    /// Spatial mean: [N, C, H, W] -> [N, C].
    pub fn mean_hw(&mut self, x: Var) -> Result<Var> {
        let xs = self.slots[x.0].shape.clone();
        if xs.len() != 4 {
            return Err(Error::Config(format!("mean_hw expects [N,C,H,W], got {xs:?}")));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let hw = h * w;
        let mut out = vec![0.0; n * c];
        for i in 0..n * c {
            out[i] = self.slots[x.0].data[i * hw..(i + 1) * hw].iter().sum::<f64>() / hw as f64;
        }
        let out = self.alloc(out, vec![n, c]);
        self.record(Op::MeanHw { x: x.0, out, hw });
        Ok(Var(out))
    }

    // ── backward ─────────────────────────────────────────────────────

    fn accumulate(&mut self, id: usize, g: &[f64]) {
        match &mut self.grads[id] {
            Some(existing) => {
                for (e, &v) in existing.iter_mut().zip(g.iter()) {
                    *e += v;
                }
            }
            None => self.grads[id] = Some(g.to_vec()),
        }
    }

    /// Reverse sweep from a scalar loss. May be called once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.recording {
            return Err(Error::Invariant("backward on an inference tape".into()));
        }
        if self.spent {
            return Err(Error::Invariant(
                "backward called twice without re-running forward".into(),
            ));
        }
        self.spent = true;
        if self.slots[loss.0].data.len() != 1 {
            return Err(Error::Invariant(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.slots[loss.0].shape
            )));
        }
        self.grads[loss.0] = Some(vec![1.0]);

        for oi in (0..self.ops.len()).rev() {
            // Take the op out to appease the borrow checker; ops are not
            // revisited after their backward step.
            let op = std::mem::replace(&mut self.ops[oi], Op::Reshape { x: 0, out: 0 });
            self.backward_op(&op);
            self.ops[oi] = op;
        }
        Ok(())
    }

    fn backward_op(&mut self, op: &Op) {
        match op {
            Op::Add { a, b, out } => {
                if let Some(g) = self.grads[*out].clone() {
                    self.accumulate(*a, &g);
                    self.accumulate(*b, &g);
                }
            }
            Op::Scale { x, c, out } => {
                if let Some(g) = self.grads[*out].clone() {
                    let gx: Vec<f64> = g.iter().map(|v| v * c).collect();
                    self.accumulate(*x, &gx);
                }
            }
            Op::Conv2d { x, w, b, out, dims } => {
                if let Some(g) = self.grads[*out].clone() {
                    let mut gx = vec![0.0; self.slots[*x].data.len()];
                    let mut gw = vec![0.0; self.slots[*w].data.len()];
                    let mut gb = vec![0.0; self.slots[*b].data.len()];
                    kernels::conv2d_backward(
                        &self.slots[*x].data,
                        &self.slots[*w].data,
                        &g,
                        dims,
                        &mut gx,
                        &mut gw,
                        &mut gb,
                    );
                    self.accumulate(*x, &gx);
                    self.accumulate(*w, &gw);
                    self.accumulate(*b, &gb);
                }
            }
            Op::Linear { x, w, b, out, n, d, e } => {
                if let Some(g) = self.grads[*out].clone() {
                    let (n, d, e) = (*n, *d, *e);
                    let mut gx = vec![0.0; n * d];
                    kernels::matmul_bt_acc(&g, &self.slots[*w].data, &mut gx, n, d, e);
                    let mut gw = vec![0.0; d * e];
                    kernels::matmul_at_acc(&self.slots[*x].data, &g, &mut gw, n, d, e);
                    let mut gb = vec![0.0; e];
                    for row in 0..n {
                        for (gb_v, &gv) in gb.iter_mut().zip(g[row * e..(row + 1) * e].iter()) {
                            *gb_v += gv;
                        }
                    }
                    self.accumulate(*x, &gx);
                    self.accumulate(*w, &gw);
                    self.accumulate(*b, &gb);
                }
            }
            Op::LeakyRelu { x, out, slope } => {
                if let Some(g) = self.grads[*out].clone() {
                    let gx: Vec<f64> = self.slots[*x]
                        .data
                        .iter()
                        .zip(g.iter())
                        .map(|(&v, &gv)| if v > 0.0 { gv } else { slope * gv })
                        .collect();
                    self.accumulate(*x, &gx);
                }
            }
            Op::SoftmaxCe { logits, out, probs, labels, count, c, hw } => {
                if let Some(g) = self.grads[*out].clone() {
                    if *count == 0 {
                        return;
                    }
                    let scale = g[0] / *count as f64;
                    let mut gx = vec![0.0; self.slots[*logits].data.len()];
                    let n = labels.len() / hw;
                    for ni in 0..n {
                        for pi in 0..*hw {
                            let lbl = labels[ni * hw + pi];
                            if lbl < 0 || lbl >= *c as i64 {
                                continue;
                            }
                            let base = ni * c * hw + pi;
                            for ci in 0..*c {
                                let p = probs[base + ci * hw];
                                let t = if ci as i64 == lbl { 1.0 } else { 0.0 };
                                gx[base + ci * hw] = scale * (p - t);
                            }
                        }
                    }
                    self.accumulate(*logits, &gx);
                }
            }
            Op::Mse { a, b, out } => {
                if let Some(g) = self.grads[*out].clone() {
                    let n = self.slots[*a].data.len();
                    let scale = 2.0 * g[0] / n as f64;
                    let ga: Vec<f64> = self.slots[*a]
                        .data
                        .iter()
                        .zip(self.slots[*b].data.iter())
                        .map(|(x, y)| scale * (x - y))
                        .collect();
                    let gb: Vec<f64> = ga.iter().map(|v| -v).collect();
                    self.accumulate(*a, &ga);
                    self.accumulate(*b, &gb);
                }
            }
            Op::Resize { x, out, planes, h_in, w_in, h_out, w_out } => {
                if let Some(g) = self.grads[*out].clone() {
                    let mut gx = vec![0.0; self.slots[*x].data.len()];
                    kernels::bilinear_resize_backward(&g, *planes, *h_in, *w_in, *h_out, *w_out, &mut gx);
                    self.accumulate(*x, &gx);
                }
            }
            Op::UnitNorm { x, out, norms } => {
                if let Some(g) = self.grads[*out].clone() {
                    let d = self.slots[*x].shape[1];
                    let mut gx = vec![0.0; self.slots[*x].data.len()];
                    for (r, &norm) in norms.iter().enumerate() {
                        let grow = &g[r * d..(r + 1) * d];
                        if norm <= EPS_NORM {
                            gx[r * d..(r + 1) * d].copy_from_slice(grow);
                            continue;
                        }
                        let yrow = &self.slots[*out].data[r * d..(r + 1) * d];
                        let dot: f64 = grow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum();
                        for i in 0..d {
                            gx[r * d + i] = (grow[i] - dot * yrow[i]) / norm;
                        }
                    }
                    self.accumulate(*x, &gx);
                }
            }
            Op::FftPolar { amp, phase, re, im, x, planes, h, w } => {
                let ga = self.grads[*amp].clone();
                let gp = self.grads[*phase].clone();
                if ga.is_none() && gp.is_none() {
                    return;
                }
                let n = h * w;
                let zeros = vec![0.0; planes * n];
                let ga = ga.unwrap_or_else(|| zeros.clone());
                let gp = gp.unwrap_or(zeros);
                let mut gx = vec![0.0; planes * n];
                for p in 0..*planes {
                    let r = p * n..(p + 1) * n;
                    spectral::fft2_polar_backward_plane(
                        &ga[r.clone()],
                        &gp[r.clone()],
                        &re[r.clone()],
                        &im[r.clone()],
                        *h,
                        *w,
                        &mut gx[r],
                    );
                }
                self.accumulate(*x, &gx);
            }
            Op::RecombineIfft { amp, phase, out, planes, h, w } => {
                if let Some(g) = self.grads[*out].clone() {
                    let n = h * w;
                    let mut g_amp = vec![0.0; planes * n];
                    let mut g_phase = vec![0.0; planes * n];
                    for p in 0..*planes {
                        let r = p * n..(p + 1) * n;
                        spectral::recombine_ifft2_backward_plane(
                            &g[r.clone()],
                            &self.slots[*amp].data[r.clone()],
                            &self.slots[*phase].data[r.clone()],
                            *h,
                            *w,
                            &mut g_amp[r.clone()],
                            &mut g_phase[r],
                        );
                    }
                    self.accumulate(*amp, &g_amp);
                    self.accumulate(*phase, &g_phase);
                }
            }
            Op::VectorizeHalf { x, out, planes, h, w } => {
                if let Some(g) = self.grads[*out].clone() {
                    let half_w = w / 2 + 1;
                    let mut gx = vec![0.0; self.slots[*x].data.len()];
                    for p in 0..*planes {
                        for u in 0..*h {
                            for v in 0..half_w {
                                gx[p * h * w + u * w + v] = g[p * h * half_w + u * half_w + v];
                            }
                        }
                    }
                    self.accumulate(*x, &gx);
                }
            }
            Op::DevectorizeMirror { x, out, planes, h, w } => {
                if let Some(g) = self.grads[*out].clone() {
                    let half_w = w / 2 + 1;
                    let mut gx = vec![0.0; self.slots[*x].data.len()];
                    for p in 0..*planes {
                        let gplane = &g[p * h * w..(p + 1) * h * w];
                        let gvec = &mut gx[p * h * half_w..(p + 1) * h * half_w];
                        for u in 0..*h {
                            let mu = (h - u) % h;
                            for v in 0..half_w {
                                let gv = gplane[u * w + v];
                                let self_col = v == 0 || 2 * v == *w;
                                if self_col && mu != u {
                                    gvec[u * half_w + v] += 0.5 * gv;
                                    gvec[mu * half_w + v] += 0.5 * gv;
                                } else {
                                    gvec[u * half_w + v] += gv;
                                }
                            }
                        }
                        // Mirrored columns (W/2, W) read from column W-v of
                        // the mirrored row.
                        for u in 0..*h {
                            let mu = (h - u) % h;
                            for v in half_w..*w {
                                gvec[mu * half_w + (w - v)] += gplane[u * w + v];
                            }
                        }
                    }
                    self.accumulate(*x, &gx);
                }
            }
            Op::MirrorAvg { x, out, planes, h, w } => {
                if let Some(g) = self.grads[*out].clone() {
                    let n = h * w;
                    let mut gx = vec![0.0; self.slots[*x].data.len()];
                    for p in 0..*planes {
                        let gp = &g[p * n..(p + 1) * n];
                        let dst = &mut gx[p * n..(p + 1) * n];
                        for u in 0..*h {
                            let mu = (h - u) % h;
                            for v in 0..*w {
                                let mv = (w - v) % w;
                                dst[u * w + v] += 0.5 * (gp[u * w + v] + gp[mu * w + mv]);
                            }
                        }
                    }
                    self.accumulate(*x, &gx);
                }
            }
            Op::Reshape { x, out } => {
                if let Some(g) = self.grads[*out].clone() {
                    self.accumulate(*x, &g);
                }
            }
            Op::MeanHw { x, out, hw } => {
                if let Some(g) = self.grads[*out].clone() {
                    let inv = 1.0 / *hw as f64;
                    let mut gx = vec![0.0; self.slots[*x].data.len()];
                    for (i, &gv) in g.iter().enumerate() {
                        let v = gv * inv;
                        for slot in &mut gx[i * hw..(i + 1) * hw] {
                            *slot = v;
                        }
                    }
                    self.accumulate(*x, &gx);
                }
            }
        }
    }

    /// Gradient of any var after backward.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradients of all requires_grad parameters, in registration order.
    /// Parameters untouched by the loss get zeros.
    pub fn param_grads(&self) -> Vec<(String, Vec<f64>)> {
        self.params
            .iter()
            .filter(|(_, _, rg)| *rg)
            .map(|(name, id, _)| {
                let g = self.grads[*id]
                    .clone()
                    .unwrap_or_else(|| vec![0.0; self.slots[*id].data.len()]);
                (name.clone(), g)
            })
            .collect()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn conv_identity_like_kernel() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::full(&[1, 1, 3, 3], 1.0));
        let w = tape.leaf(&t(&[1, 1, 1, 1], vec![2.0]));
        let b = tape.leaf(&t(&[1], vec![0.0]));
        let y = tape.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 3, 3]);
        assert!(tape.value(y).iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv_full_sum_kernel() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let w = tape.leaf(&Tensor::full(&[1, 1, 2, 2], 1.0));
        let b = tape.leaf(&t(&[1], vec![0.0]));
        let y = tape.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y), &[10.0]);
    }

    #[test]
    fn conv_matches_quadruple_loop_oracle() {
        let mut rng = Rng::new(321);
        let (n, c, h, w, k, kh, kw, stride, pad) = (1usize, 2usize, 5usize, 5usize, 3usize, 3usize, 3usize, 1usize, 1usize);
        let x: Vec<f64> = (0..n * c * h * w).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let wt: Vec<f64> = (0..k * c * kh * kw).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let bias: Vec<f64> = (0..k).map(|_| rng.range_f64(-1.0, 1.0)).collect();

        let mut tape = Tape::new();
        let xv = tape.leaf(&t(&[n, c, h, w], x.clone()));
        let wv = tape.leaf(&t(&[k, c, kh, kw], wt.clone()));
        let bv = tape.leaf(&t(&[k], bias.clone()));
        let y = tape.conv2d(xv, wv, bv, stride, pad).unwrap();

        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        for ki in 0..k {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[ki];
                    for ci in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (oy * stride + dy) as isize - pad as isize;
                                let ix = (ox * stride + dx) as isize - pad as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    acc += x[ci * h * w + iy as usize * w + ix as usize]
                                        * wt[ki * c * kh * kw + ci * kh * kw + dy * kw + dx];
                                }
                            }
                        }
                    }
                    let got = tape.value(y)[ki * oh * ow + oy * ow + ox];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_shape_mismatch_is_config_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros(&[1, 2, 4, 4]));
        let w = tape.leaf(&Tensor::zeros(&[1, 3, 3, 3]));
        let b = tape.leaf(&Tensor::zeros(&[1]));
        assert!(matches!(tape.conv2d(x, w, b, 1, 1), Err(Error::Config(_))));
    }

    #[test]
    fn linear_identity_and_affine() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[1, 2], vec![1.0, 2.0]));
        let eye = tape.leaf(&t(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let zero_b = tape.leaf(&Tensor::zeros(&[2]));
        let y = tape.linear(x, eye, zero_b).unwrap();
        assert_eq!(tape.value(y), &[1.0, 2.0]);

        let ones_b = tape.leaf(&Tensor::full(&[2], 1.0));
        let y2 = tape.linear(x, eye, ones_b).unwrap();
        assert_eq!(tape.value(y2), &[2.0, 3.0]);
    }

    #[test]
    fn linear_matches_loop_oracle() {
        let mut rng = Rng::new(8);
        let x: Vec<f64> = (0..12).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let w: Vec<f64> = (0..8).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let b: Vec<f64> = (0..2).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let mut tape = Tape::new();
        let xv = tape.leaf(&t(&[3, 4], x.clone()));
        let wv = tape.leaf(&t(&[4, 2], w.clone()));
        let bv = tape.leaf(&t(&[2], b.clone()));
        let y = tape.linear(xv, wv, bv).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = b[j];
                for p in 0..4 {
                    acc += x[i * 4 + p] * w[p * 2 + j];
                }
                assert!((tape.value(y)[i * 2 + j] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relu_and_leaky_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[3], vec![-1.0, 0.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y), &[0.0, 0.0, 2.0]);

        let x2 = tape.leaf(&t(&[2], vec![-1.0, 2.0]));
        let y2 = tape.leaky_relu(x2, 0.2).unwrap();
        assert_eq!(tape.value(y2), &[-0.2, 2.0]);
    }

    #[test]
    fn leaky_gradient_on_negative_side() {
        let mut tape = Tape::new();
        let x = Tensor::new(&[1], vec![-3.0]).unwrap().with_grad();
        let xv = tape.param("x", &x).unwrap();
        let y = tape.leaky_relu(xv, 0.2).unwrap();
        // scalar loss = y
        let loss = tape.reshape(y, &[]).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(xv).unwrap(), &[0.2]);
    }

    #[test]
    fn softmax_ce_analytic_cases() {
        // Huge margin on the true class -> loss ~ 0.
        let mut tape = Tape::new();
        let mut logits = vec![0.0; 4];
        logits[1] = 50.0;
        let l = tape.leaf(&t(&[1, 4, 1, 1], logits));
        let loss = tape.softmax_cross_entropy(l, &[1], -1).unwrap();
        assert!(tape.value(loss)[0] < 1e-9);

        // Uniform logits, C=4 -> ln 4.
        let mut tape = Tape::new();
        let l = tape.leaf(&Tensor::zeros(&[1, 4, 1, 1]));
        let loss = tape.softmax_cross_entropy(l, &[2], -1).unwrap();
        assert!((tape.value(loss)[0] - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_ce_matches_per_pixel_oracle() {
        let mut rng = Rng::new(55);
        let (n, c, h, w) = (1usize, 3usize, 2usize, 2usize);
        let logits: Vec<f64> = (0..n * c * h * w).map(|_| rng.range_f64(-2.0, 2.0)).collect();
        let labels: Vec<i64> = (0..n * h * w).map(|_| rng.below(c) as i64).collect();
        let mut tape = Tape::new();
        let l = tape.leaf(&t(&[n, c, h, w], logits.clone()));
        let loss = tape.softmax_cross_entropy(l, &labels, -1).unwrap();

        let mut expect = 0.0;
        for pi in 0..h * w {
            let lbl = labels[pi] as usize;
            let mut denom = 0.0;
            for ci in 0..c {
                denom += logits[ci * h * w + pi].exp();
            }
            expect -= (logits[lbl * h * w + pi].exp() / denom).ln();
        }
        expect /= (h * w) as f64;
        assert!((tape.value(loss)[0] - expect).abs() < 1e-10);
    }

    #[test]
    fn softmax_ce_all_ignored_flags_warning() {
        let mut tape = Tape::new();
        let l = tape.leaf(&Tensor::zeros(&[1, 3, 1, 2]));
        let loss = tape.softmax_cross_entropy(l, &[255, 255], 255).unwrap();
        assert_eq!(tape.value(loss)[0], 0.0);
        assert_eq!(tape.warnings.all_pixels_ignored, 1);
        tape.backward(loss).unwrap();
        // zero loss, zero gradient
        assert!(tape.grad(l).is_none() || tape.grad(l).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mse_cases() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(&[2], vec![1.0, 2.0]));
        let same = tape.leaf(&t(&[2], vec![1.0, 2.0]));
        let zero = tape.mse(a, same).unwrap();
        assert_eq!(tape.value(zero)[0], 0.0);

        let b = tape.leaf(&t(&[2], vec![0.0, 0.0]));
        let c = tape.leaf(&t(&[2], vec![1.0, 1.0]));
        let one = tape.mse(b, c).unwrap();
        assert_eq!(tape.value(one)[0], 1.0);

        let mut rng = Rng::new(2);
        let xs: Vec<f64> = (0..10).map(|_| rng.range_f64(-2.0, 2.0)).collect();
        let ys: Vec<f64> = (0..10).map(|_| rng.range_f64(-2.0, 2.0)).collect();
        let xv = tape.leaf(&t(&[10], xs.clone()));
        let yv = tape.leaf(&t(&[10], ys.clone()));
        let got = tape.mse(xv, yv).unwrap();
        let expect = xs.iter().zip(&ys).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 10.0;
        assert!((tape.value(got)[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn resize_identity_and_constant() {
        let mut rng = Rng::new(6);
        let data: Vec<f64> = (0..2 * 4 * 4).map(|_| rng.next_f64()).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2, 4, 4], data.clone()));
        let same = tape.bilinear_resize(x, 4, 4).unwrap();
        assert_eq!(tape.value(same), &data[..]);

        let c = tape.leaf(&Tensor::full(&[1, 3, 3], 0.4));
        let up = tape.bilinear_resize(c, 7, 5).unwrap();
        assert!(tape.value(up).iter().all(|&v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn resize_2x2_to_4x4_closed_form() {
        // Input [[0,2],[4,6]]; align_corners=false doubling has taps at
        // src = -0.25, 0.25, 0.75, 1.25 per axis (edge-clamped).
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[1, 2, 2], vec![0.0, 2.0, 4.0, 6.0]));
        let y = tape.bilinear_resize(x, 4, 4).unwrap();
        let row_w = [0.0f64, 0.5, 1.5, 2.0]; // horizontal interp of [0, 2]
        let col_w = [0.0f64, 1.0, 3.0, 4.0]; // vertical interp of [0, 4]
        for i in 0..4 {
            for j in 0..4 {
                let expect = row_w[j] + col_w[i];
                assert!(
                    (tape.value(y)[i * 4 + j] - expect).abs() < 1e-12,
                    "({i},{j}): {} vs {expect}",
                    tape.value(y)[i * 4 + j]
                );
            }
        }
    }

    #[test]
    fn unit_normalize_rows() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[1, 2], vec![3.0, 4.0]));
        let y = tape.unit_normalize(x).unwrap();
        assert!((tape.value(y)[0] - 0.6).abs() < 1e-12);
        assert!((tape.value(y)[1] - 0.8).abs() < 1e-12);

        let u = tape.leaf(&t(&[1, 2], vec![0.6, 0.8]));
        let yu = tape.unit_normalize(u).unwrap();
        assert!((tape.value(yu)[0] - 0.6).abs() < 1e-12);

        // Degenerate row passes through and raises the flag.
        let z = tape.leaf(&Tensor::zeros(&[1, 3]));
        let yz = tape.unit_normalize(z).unwrap();
        assert_eq!(tape.value(yz), &[0.0, 0.0, 0.0]);
        assert_eq!(tape.warnings.degenerate_norms, 1);
    }

    #[test]
    fn backward_twice_rejected() {
        let mut tape = Tape::new();
        let x = Tensor::new(&[1], vec![2.0]).unwrap().with_grad();
        let xv = tape.param("x", &x).unwrap();
        let loss = tape.reshape(xv, &[]).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::Invariant(_))));
    }

    #[test]
    fn param_reuse_accumulates_gradient() {
        // loss = x + x -> dloss/dx = 2
        let mut tape = Tape::new();
        let x = Tensor::new(&[1], vec![3.0]).unwrap().with_grad();
        let a = tape.param("x", &x).unwrap();
        let b = tape.param("x", &x).unwrap();
        assert_eq!(a, b);
        let s = tape.add(a, b).unwrap();
        let loss = tape.reshape(s, &[]).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[2.0]);
    }

    #[test]
    fn phase_bypass_is_bit_exact() {
        // recombine_ifft2 consumes the phase var produced by fft2_polar;
        // the buffer is forwarded untouched.
        let mut rng = Rng::new(17);
        let data: Vec<f64> = (0..2 * 8 * 8).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2, 8, 8], data));
        let (amp, phase) = tape.fft2_polar(x).unwrap();
        let y = tape.recombine_ifft2(amp, phase).unwrap();
        // Roundtrip accuracy
        for (a, b) in tape.value(x).iter().zip(tape.value(y).iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn vectorize_devectorize_roundtrip_on_tape() {
        let mut rng = Rng::new(27);
        let data: Vec<f64> = (0..3 * 4 * 8).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[3, 4, 8], data));
        let (amp, _) = tape.fft2_polar(x).unwrap();
        let vec = tape.vectorize_half(amp).unwrap();
        assert_eq!(tape.shape(vec), &[3, 4 * 5]);
        let back = tape.devectorize_mirror(vec, 4, 8).unwrap();
        for (a, b) in tape.value(amp).iter().zip(tape.value(back).iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn mirror_average_produces_exact_symmetry() {
        let mut rng = Rng::new(37);
        let data: Vec<f64> = (0..2 * 4 * 4).map(|_| rng.range_f64(0.0, 1.0)).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2, 4, 4], data));
        let y = tape.mirror_average(x).unwrap();
        for p in 0..2 {
            let plane = &tape.value(y)[p * 16..(p + 1) * 16];
            assert_eq!(spectral::max_asymmetry(plane, 4, 4), 0.0);
        }
    }
}
