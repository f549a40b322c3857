// Dev driver: why does the latent MLP probe stay at chance?

use astseg_core::ast::AstConfig;
use astseg_core::ddm::*;
use astseg_core::rng::Rng;
use astseg_core::tensor::{SgdConfig, Tensor};

fn main() {
    let mut cfg = DdmConfig {
        disc_steps: 300,
        disc_batch: 8,
        disc_optim: SgdConfig { lr: 0.02, ..Default::default() },
        ast_steps: 40,
        ast: AstConfig { resize_h: 8, resize_w: 8, d_latent: 8, d_hidden: 32 },
        ..Default::default()
    };
    let mut rng = Rng::new(1);
    let mut samples = Vec::new();
    for d in 0..2usize {
        for i in 0..40 {
            let data: Vec<f64> = (0..4 * 8 * 8).map(|_| rng.range_f64(0.0, 1.0) + d as f64 * 0.3).collect();
            samples.push(ProbeSample {
                features: Tensor::new(&[4, 8, 8], data).unwrap(),
                domain: d,
                seed: (d * 40 + i) as u64,
            });
        }
    }
    let latents = throwaway_latents(&samples, &cfg, 11).unwrap();
    // Show latent spread
    let l0 = latents.iter().find(|p| p.domain == 0).unwrap();
    let l1 = latents.iter().find(|p| p.domain == 1).unwrap();
    println!("latent d0[0][..8]: {:?}", &l0.features.data()[..8].iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    println!("latent d1[0][..8]: {:?}", &l1.features.data()[..8].iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    let dist: f64 = l0.features.data().iter().zip(l1.features.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    println!("inter-domain latent distance (one pair): {dist:.4}");

    for (lr, steps) in [(0.02, 300), (0.1, 300), (0.1, 600), (0.5, 600), (1.0, 600)] {
        cfg.disc_optim.lr = lr;
        cfg.disc_steps = steps;
        let acc = probe_latent_vectors(&latents, &cfg, 13).unwrap();
        println!("mlp lr {lr} steps {steps}: acc {acc:.3}");
    }
}
