// Dev driver: where does performance go between the plain, auto-encode and
// normalized compositions?

use astseg_core::config::RunConfig;
use astseg_core::pipeline::*;
use astseg_core::segmentor::{CsSite, DnSite};
use astseg_core::synthdata::make_splits;
use astseg_core::tensor::Tape;

fn main() {
    let mut cfg = RunConfig::default();
    cfg.seed = 0;
    let ds = make_splits(&cfg.data, cfg.seed).unwrap();
    let (mut seg, mut cs, mut dn) = init_models(&cfg).unwrap();
    train_erm(&cfg, &ds, &mut seg).unwrap();
    train_ast_stage(&cfg, &ds, &seg, &mut cs, &mut dn).unwrap();

    let eval_mode = |seg: &astseg_core::segmentor::Segmentor,
                     cs: &astseg_core::ast::AstModule,
                     dn: &astseg_core::ast::AstModule,
                     proto: Option<&astseg_core::tensor::Tensor>,
                     samples: &[astseg_core::synthdata::DomainSample],
                     mode: &str|
     -> f64 {
        use astseg_core::metrics::ConfusionMatrix;
        let mut cm = ConfusionMatrix::new(seg.cfg.class_count);
        for chunk in samples.chunks(8) {
            let refs: Vec<&astseg_core::synthdata::DomainSample> = chunk.iter().collect();
            let mut data = Vec::new();
            for s in &refs {
                data.extend_from_slice(s.image.data());
            }
            let sh = refs[0].image.shape().to_vec();
            let images =
                astseg_core::tensor::Tensor::new(&[refs.len(), sh[0], sh[1], sh[2]], data).unwrap();
            let mut tape = Tape::inference();
            let x = tape.leaf(&images);
            let logits = match mode {
                "plain" => seg.forward_full(&mut tape, x, CsSite::Off, DnSite::Off, None, None),
                "ae" => seg.forward_full(&mut tape, x, CsSite::Ae, DnSite::Ae, Some(cs), Some(dn)),
                "ae_dn_only" => seg.forward_full(&mut tape, x, CsSite::Off, DnSite::Ae, None, Some(dn)),
                "norm" => seg.forward_full(
                    &mut tape,
                    x,
                    CsSite::Off,
                    DnSite::Prototype(proto.unwrap()),
                    None,
                    Some(dn),
                ),
                _ => unreachable!(),
            }
            .unwrap();
            let s = tape.shape(logits).to_vec();
            let (c, hw) = (s[1], s[2] * s[3]);
            let v = tape.value(logits);
            for (ni, smp) in refs.iter().enumerate() {
                let mut pred = Vec::with_capacity(hw);
                for pi in 0..hw {
                    let mut best = 0;
                    let mut bv = f64::NEG_INFINITY;
                    for ci in 0..c {
                        let x = v[ni * c * hw + ci * hw + pi];
                        if x > bv {
                            bv = x;
                            best = ci;
                        }
                    }
                    pred.push(best as i64);
                }
                cm.update(smp.label.as_ref().unwrap(), &pred, 255).unwrap();
            }
        }
        cm.mean_iou()
    };

    println!("after erm+ast pretraining:");
    for mode in ["plain", "ae", "ae_dn_only"] {
        println!(
            "  {mode}: source {:.3} compound {:.3}",
            eval_mode(&seg, &cs, &dn, None, &ds.source[..100], mode),
            eval_mode(&seg, &cs, &dn, None, &ds.compound, mode)
        );
    }

    // Latent geometry at both sites: mean distance of compound latents to
    // source latents, vs within-source spread.
    let src_refs: Vec<&astseg_core::synthdata::DomainSample> = ds.source.iter().take(60).collect();
    let cmp_refs: Vec<&astseg_core::synthdata::DomainSample> = ds.compound.iter().take(60).collect();
    let zs = mining_latents(&seg, &cs, &src_refs).unwrap();
    let zt = mining_latents(&seg, &cs, &cmp_refs).unwrap();
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let mut within = 0.0;
    let mut count_w = 0;
    for i in 0..zs.len() {
        for j in i + 1..zs.len() {
            within += dist(&zs[i], &zs[j]);
            count_w += 1;
        }
    }
    let mut across = 0.0;
    let mut count_a = 0;
    for zs_i in &zs {
        for zt_j in &zt {
            across += dist(zs_i, zt_j);
            count_a += 1;
        }
    }
    println!(
        "site-l latents: within-source {:.4}, source-to-compound {:.4}",
        within / count_w as f64,
        across / count_a as f64
    );

    preadapt_stage(&cfg, &ds, &mut seg, &mut cs, &mut dn).unwrap();
    println!("after preadapt:");
    for mode in ["plain", "ae", "ae_dn_only"] {
        println!(
            "  {mode}: source {:.3} compound {:.3}",
            eval_mode(&seg, &cs, &dn, None, &ds.source[..100], mode),
            eval_mode(&seg, &cs, &dn, None, &ds.compound, mode)
        );
    }
    // Prototype from the post-preadapt state.
    let pairs = compute_pairs(&cfg.adapt, cfg.seed, 1, &seg, &cs, &ds).unwrap();
    let (proto, _) = compute_epoch_prototype(&cfg.adapt, &seg, &cs, &dn, &ds, &pairs).unwrap();
    println!(
        "  norm: source {:.3} compound {:.3} open {:.3}",
        eval_mode(&seg, &cs, &dn, Some(&proto), &ds.source[..100], "norm"),
        eval_mode(&seg, &cs, &dn, Some(&proto), &ds.compound, "norm"),
        eval_mode(&seg, &cs, &dn, Some(&proto), &ds.open, "norm")
    );
}
