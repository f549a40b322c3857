//! Shared test support: central finite-difference gradient checking.
//! The numeric side rebuilds the forward pass from scratch for every probe,
//! so it stays independent of the reverse-mode path it validates.

use astseg_core::ast::{AstConfig, AstModule};
use astseg_core::rng::Rng;
use astseg_core::spectral::{devectorize_tinv, fft2, ifft2, recombine, HalfSpectrumVector};
use astseg_core::tensor::{Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;

/// One differentiable scenario: named inputs plus a forward closure mapping
/// them to a scalar loss on the given tape.
pub struct GradScenario {
    pub name: String,
    pub inputs: Vec<Tensor>,
    pub forward: Box<dyn Fn(&mut Tape, &[Var]) -> Var>,
}

/// rel = |a - n| / max(1, |a|, |n|); relative for large gradients, absolute
/// near zero, where central differences with h = 1e-6 are accurate to ~1e-10.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1.0f64.max(a.abs()).max(n.abs())
}

/// Run one scenario: reverse-mode gradients for every input element vs
/// central finite differences. Returns the worst relative error.
pub fn check_scenario(s: &GradScenario) -> f64 {
    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = s
        .inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut p = t.clone();
            p.requires_grad = true;
            tape.param(&format!("in{i}"), &p).unwrap()
        })
        .collect();
    let loss = (s.forward)(&mut tape, &vars);
    tape.backward(loss).expect("backward");
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; tape.value(v).len()]))
        .collect();

    // Numeric pass.
    let eval = |inputs: &[Tensor]| -> f64 {
        let mut t = Tape::inference();
        let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x)).collect();
        let loss = (s.forward)(&mut t, &vars);
        t.value(loss)[0]
    };

    let mut worst = 0.0f64;
    let mut work = s.inputs.clone();
    for (ti, tensor) in s.inputs.iter().enumerate() {
        for ei in 0..tensor.numel() {
            let orig = work[ti].data()[ei];
            work[ti].data_mut()[ei] = orig + FD_STEP;
            let plus = eval(&work);
            work[ti].data_mut()[ei] = orig - FD_STEP;
            let minus = eval(&work);
            work[ti].data_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = rel_err(analytic[ti][ei], numeric);
            if err > worst {
                worst = err;
            }
            assert!(
                err <= GRAD_TOL,
                "{}: input {ti} element {ei}: analytic {} vs numeric {} (rel {err:.3e})",
                s.name,
                analytic[ti][ei],
                numeric
            );
        }
    }
    worst
}

// ── scenario builders ────────────────────────────────────────────────

fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.range_f64(lo, hi)).collect()).unwrap()
}

/// Values bounded away from the ReLU kink.
fn rand_tensor_off_kink(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mut v = rng.range_f64(-1.0, 1.0);
            while v.abs() < 1e-3 {
                v = rng.range_f64(-1.0, 1.0);
            }
            v
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// A real plane whose spectrum has every amplitude in [0.5, 2]: safe ground
/// for phase-path finite differences.
fn bounded_spectrum_plane(h: usize, w: usize, rng: &mut Rng) -> Tensor {
    let half = h * (w / 2 + 1);
    let vec = HalfSpectrumVector {
        h,
        w,
        values: rand_tensor(&[half], 0.5, 2.0, rng),
    };
    let amp = devectorize_tinv(&vec).unwrap();
    // Antisymmetric phase from a random real plane's spectrum.
    let seed_plane = rand_tensor(&[h, w], -1.0, 1.0, rng);
    let phase = fft2(&seed_plane).unwrap().phase;
    ifft2(&recombine(&amp, &phase).unwrap()).unwrap()
}

fn stack_planes(planes: &[Tensor]) -> Tensor {
    let (h, w) = (planes[0].shape()[0], planes[0].shape()[1]);
    let mut data = Vec::with_capacity(planes.len() * h * w);
    for p in planes {
        data.extend_from_slice(p.data());
    }
    Tensor::new(&[planes.len(), h, w], data).unwrap()
}

/// Every differentiable primitive plus the spectral chains and the full
/// latent-replacement path, `instances` random cases each.
pub fn all_scenarios(seed: u64, instances: usize) -> Vec<GradScenario> {
    let mut rng = Rng::new(seed).derive("gradcheck");
    let mut out: Vec<GradScenario> = Vec::new();

    for i in 0..instances {
        // conv2d, both strides, gradients w.r.t. x, w, b.
        let x = rand_tensor(&[1, 2, 5, 5], -1.0, 1.0, &mut rng);
        let w = rand_tensor(&[3, 2, 3, 3], -1.0, 1.0, &mut rng);
        let b = rand_tensor(&[3], -0.5, 0.5, &mut rng);
        let target = rand_tensor(&[1, 3, 5, 5], -1.0, 1.0, &mut rng);
        out.push(GradScenario {
            name: format!("conv2d_s1/{i}"),
            inputs: vec![x, w, b],
            forward: Box::new(move |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], 1, 1).unwrap();
                let tgt = t.leaf(&target);
                t.mse(y, tgt).unwrap()
            }),
        });

        let x = rand_tensor(&[2, 2, 6, 6], -1.0, 1.0, &mut rng);
        let w = rand_tensor(&[2, 2, 4, 4], -1.0, 1.0, &mut rng);
        let b = rand_tensor(&[2], -0.5, 0.5, &mut rng);
        let target = rand_tensor(&[2, 2, 3, 3], -1.0, 1.0, &mut rng);
        out.push(GradScenario {
            name: format!("conv2d_s2/{i}"),
            inputs: vec![x, w, b],
            forward: Box::new(move |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], 2, 1).unwrap();
                let tgt = t.leaf(&target);
                t.mse(y, tgt).unwrap()
            }),
        });

        // linear
        let x = rand_tensor(&[3, 4], -1.0, 1.0, &mut rng);
        let w = rand_tensor(&[4, 2], -1.0, 1.0, &mut rng);
        let b = rand_tensor(&[2], -0.5, 0.5, &mut rng);
        let target = rand_tensor(&[3, 2], -1.0, 1.0, &mut rng);
        out.push(GradScenario {
            name: format!("linear/{i}"),
            inputs: vec![x, w, b],
            forward: Box::new(move |t, v| {
                let y = t.linear(v[0], v[1], v[2]).unwrap();
                let tgt = t.leaf(&target);
                t.mse(y, tgt).unwrap()
            }),
        });

        // relu / leaky_relu, inputs held off the kink
        let x = rand_tensor_off_kink(&[4, 5], &mut rng);
        let target = rand_tensor(&[4, 5], -1.0, 1.0, &mut rng);
        let slope = if i % 2 == 0 { 0.0 } else { 0.2 };
        out.push(GradScenario {
            name: format!("leaky_relu_{slope}/{i}"),
            inputs: vec![x],
            forward: Box::new(move |t, v| {
                let y = t.leaky_relu(v[0], slope).unwrap();
                let tgt = t.leaf(&target);
                t.mse(y, tgt).unwrap()
            }),
        });

        // softmax cross-entropy with scattered ignores
        let logits = rand_tensor(&[1, 3, 3, 3], -2.0, 2.0, &mut rng);
        let labels: Vec<i64> = (0..9)
            .map(|j| if j % 4 == 3 { 255 } else { rng.below(3) as i64 })
            .collect();
        out.push(GradScenario {
            name: format!("softmax_ce/{i}"),
            inputs: vec![logits],
            forward: Box::new(move |t, v| t.softmax_cross_entropy(v[0], &labels, 255).unwrap()),
        });

        // mse w.r.t. both sides
        let a = rand_tensor(&[3, 4], -1.0, 1.0, &mut rng);
        let b = rand_tensor(&[3, 4], -1.0, 1.0, &mut rng);
        out.push(GradScenario {
            name: format!("mse/{i}"),
            inputs: vec![a, b],
            forward: Box::new(move |t, v| t.mse(v[0], v[1]).unwrap()),
        });

        // bilinear resize up and down
        let x = rand_tensor(&[2, 4, 6], -1.0, 1.0, &mut rng);
        let target = rand_tensor(&[2, 7, 9], -1.0, 1.0, &mut rng);
        out.push(GradScenario {
            name: format!("resize_up/{i}"),
            inputs: vec![x],
            forward: Box::new(move |t, v| {
                let y = t.bilinear_resize(v[0], 7, 9).unwrap();
                let tgt = t.leaf(&target);
                t.mse(y, tgt).unwrap()
            }),
        });
        let x = rand_tensor(&[2, 6, 8], -1.0, 1.0, &mut rng);
        let target = rand_tensor(&[2, 3, 4], -1.0, 1.0, &mut rng);
        out.push(GradScenario {
            name: format!("resize_down/{i}"),
            inputs: vec![x],
            forward: Box::new(move |t, v| {
                let y = t.bilinear_resize(v[0], 3, 4).unwrap();
                let tgt = t.leaf(&target);
                t.mse(y, tgt).unwrap()
            }),
        });

        // unit_normalize
        let x = rand_tensor(&[3, 5], 0.2, 1.0, &mut rng);
        let target = rand_tensor(&[3, 5], -1.0, 1.0, &mut rng);
        out.push(GradScenario {
            name: format!("unit_normalize/{i}"),
            inputs: vec![x],
            forward: Box::new(move |t, v| {
                let y = t.unit_normalize(v[0]).unwrap();
                let tgt = t.leaf(&target);
                t.mse(y, tgt).unwrap()
            }),
        });

        // amplitude path of the decomposition
        let planes = stack_planes(&[
            bounded_spectrum_plane(4, 8, &mut rng),
            bounded_spectrum_plane(4, 8, &mut rng),
        ]);
        let target = rand_tensor(&[2, 4, 8], 0.0, 2.0, &mut rng);
        out.push(GradScenario {
            name: format!("fft_amplitude/{i}"),
            inputs: vec![planes],
            forward: Box::new(move |t, v| {
                let (amp, _) = t.fft2_polar(v[0]).unwrap();
                let tgt = t.leaf(&target);
                t.mse(amp, tgt).unwrap()
            }),
        });

        // full decomposition -> recombination chain (amplitude and phase)
        let planes = stack_planes(&[bounded_spectrum_plane(8, 8, &mut rng)]);
        let target = rand_tensor(&[1, 8, 8], -1.0, 1.0, &mut rng);
        out.push(GradScenario {
            name: format!("fft_roundtrip/{i}"),
            inputs: vec![planes],
            forward: Box::new(move |t, v| {
                let (amp, phase) = t.fft2_polar(v[0]).unwrap();
                let y = t.recombine_ifft2(amp, phase).unwrap();
                let tgt = t.leaf(&target);
                t.mse(y, tgt).unwrap()
            }),
        });

        // half-spectrum vectorize/mirror/average chain
        let planes = stack_planes(&[bounded_spectrum_plane(4, 8, &mut rng)]);
        let target = rand_tensor(&[1, 4, 8], -1.0, 1.0, &mut rng);
        out.push(GradScenario {
            name: format!("half_spectrum_chain/{i}"),
            inputs: vec![planes],
            forward: Box::new(move |t, v| {
                let (amp, phase) = t.fft2_polar(v[0]).unwrap();
                let vec = t.vectorize_half(amp).unwrap();
                let back = t.devectorize_mirror(vec, 4, 8).unwrap();
                let sym = t.mirror_average(back).unwrap();
                let y = t.recombine_ifft2(sym, phase).unwrap();
                let tgt = t.leaf(&target);
                t.mse(y, tgt).unwrap()
            }),
        });

        // mean over spatial dims
        let x = rand_tensor(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
        let target = rand_tensor(&[2, 3], -1.0, 1.0, &mut rng);
        out.push(GradScenario {
            name: format!("mean_hw/{i}"),
            inputs: vec![x],
            forward: Box::new(move |t, v| {
                let y = t.mean_hw(v[0]).unwrap();
                let tgt = t.leaf(&target);
                t.mse(y, tgt).unwrap()
            }),
        });

        // add + scale + reshape composite
        let a = rand_tensor(&[2, 6], -1.0, 1.0, &mut rng);
        let b = rand_tensor(&[2, 6], -1.0, 1.0, &mut rng);
        let target = rand_tensor(&[3, 4], -1.0, 1.0, &mut rng);
        out.push(GradScenario {
            name: format!("add_scale_reshape/{i}"),
            inputs: vec![a, b],
            forward: Box::new(move |t, v| {
                let s = t.add(v[0], v[1]).unwrap();
                let s = t.scale(s, 0.7);
                let s = t.reshape(s, &[3, 4]).unwrap();
                let tgt = t.leaf(&target);
                t.mse(s, tgt).unwrap()
            }),
        });

        // full latent-replacement path w.r.t. the input features: the
        // output keeps the input's phase while the amplitude comes from a
        // partner-encoded latent, so gradients must flow through the phase
        // branch of its own decomposition and the amplitude branch of the
        // partner's encoding.
        let cfg = AstConfig { resize_h: 4, resize_w: 8, d_latent: 6, d_hidden: 12 };
        let mut module = AstModule::new(&cfg, &mut rng).unwrap();
        // Give the zero-initialized decoder output layer signal.
        for (name, t) in module.params_mut("ast") {
            if name.contains("dec2") {
                for v in t.data_mut() {
                    *v = rng.range_f64(-0.3, 0.3);
                }
            }
        }
        let own = stack_planes(&[
            bounded_spectrum_plane(4, 8, &mut rng),
            bounded_spectrum_plane(4, 8, &mut rng),
        ]);
        let partner = stack_planes(&[
            bounded_spectrum_plane(4, 8, &mut rng),
            bounded_spectrum_plane(4, 8, &mut rng),
        ]);
        let target = rand_tensor(&[2, 4, 8], -1.0, 1.0, &mut rng);
        out.push(GradScenario {
            name: format!("ast_apply_path/{i}"),
            inputs: vec![own, partner],
            forward: Box::new(move |t, v| {
                let z = module.encode_planes(t, v[1], "ast").unwrap();
                let y = module.apply_planes(t, v[0], z, "ast").unwrap();
                let tgt = t.leaf(&target);
                t.mse(y, tgt).unwrap()
            }),
        });

        // auto-encoding path of the same module family (encoder included)
        let cfg = AstConfig { resize_h: 4, resize_w: 4, d_latent: 4, d_hidden: 8 };
        let mut module = AstModule::new(&cfg, &mut rng).unwrap();
        for (name, t) in module.params_mut("ast") {
            if name.contains("dec2") {
                for v in t.data_mut() {
                    *v = rng.range_f64(-0.3, 0.3);
                }
            }
        }
        let own = stack_planes(&[bounded_spectrum_plane(4, 4, &mut rng)]);
        let target = rand_tensor(&[1, 4, 4], -1.0, 1.0, &mut rng);
        out.push(GradScenario {
            name: format!("ast_autoencode_path/{i}"),
            inputs: vec![own],
            forward: Box::new(move |t, v| {
                let y = module.forward_ae(t, v[0], "ast").unwrap();
                let tgt = t.leaf(&target);
                t.mse(y, tgt).unwrap()
            }),
        });
    }
    out
}
