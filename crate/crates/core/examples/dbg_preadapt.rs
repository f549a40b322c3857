// Dev driver: gradient norms through the auto-encode path during preadapt.

use astseg_core::config::RunConfig;
use astseg_core::pipeline::*;
use astseg_core::rng::Rng;
use astseg_core::segmentor::{CsSite, DnSite};
use astseg_core::synthdata::{make_splits, DomainSample, IGNORE_INDEX};
use astseg_core::tensor::{SgdOptimizer, Tape, Tensor};

fn main() {
    let mut cfg = RunConfig::default();
    cfg.seed = 0;
    let ds = make_splits(&cfg.data, cfg.seed).unwrap();
    let (mut seg, mut cs, mut dn) = init_models(&cfg).unwrap();
    train_erm(&cfg, &ds, &mut seg).unwrap();
    train_ast_stage(&cfg, &ds, &seg, &mut cs, &mut dn).unwrap();

    let mut rng = Rng::new(7);
    let mut opt = SgdOptimizer::new(0.9, 5e-4);
    for step in 0..60 {
        let batch: Vec<&DomainSample> =
            (0..4).map(|_| &ds.source[rng.below(ds.source.len())]).collect();
        let mut data = Vec::new();
        for s in &batch {
            data.extend_from_slice(s.image.data());
        }
        let sh = batch[0].image.shape().to_vec();
        let images = Tensor::new(&[4, sh[0], sh[1], sh[2]], data).unwrap();
        let mut labels = Vec::new();
        for s in &batch {
            labels.extend_from_slice(s.label.as_ref().unwrap());
        }

        let mut tape = Tape::new();
        let x = tape.leaf(&images);
        let logits = seg
            .forward_full(&mut tape, x, CsSite::Ae, DnSite::Ae, Some(&cs), Some(&dn))
            .unwrap();
        let loss = tape.softmax_cross_entropy(logits, &labels, IGNORE_INDEX).unwrap();
        let lv = tape.value(loss)[0];
        tape.backward(loss).unwrap();
        let grads = tape.param_grads();
        let norm_of = |prefix: &str| -> f64 {
            grads
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .flat_map(|(_, g)| g.iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        };
        if step % 5 == 0 || norm_of("phi") > 100.0 {
            println!(
                "step {step}: loss {lv:.4} | grad norms phi {:.3e} psi {:.3e} head {:.3e}",
                norm_of("phi"),
                norm_of("psi"),
                norm_of("head")
            );
        }
        astseg_core::layers::assign_grads(&grads, seg.params_mut()).unwrap();
        opt.step(0.01, seg.params_mut().into_iter()).unwrap();
    }
}
