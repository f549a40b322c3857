// Dev driver: preadapt variants scored on the compositions that matter
// downstream (ae path now, normalized path during adaptation).

use astseg_core::config::RunConfig;
use astseg_core::metrics::ConfusionMatrix;
use astseg_core::pipeline::*;
use astseg_core::segmentor::{CsSite, DnSite};
use astseg_core::synthdata::{make_splits, DomainSample};
use astseg_core::tensor::{Tape, Tensor};

fn eval_mode(
    seg: &astseg_core::segmentor::Segmentor,
    cs: &astseg_core::ast::AstModule,
    dn: &astseg_core::ast::AstModule,
    proto: Option<&Tensor>,
    samples: &[DomainSample],
    mode: &str,
) -> f64 {
    let mut cm = ConfusionMatrix::new(seg.cfg.class_count);
    for chunk in samples.chunks(8) {
        let refs: Vec<&DomainSample> = chunk.iter().collect();
        let mut data = Vec::new();
        for s in &refs {
            data.extend_from_slice(s.image.data());
        }
        let sh = refs[0].image.shape().to_vec();
        let images = Tensor::new(&[refs.len(), sh[0], sh[1], sh[2]], data).unwrap();
        let mut tape = Tape::inference();
        let x = tape.leaf(&images);
        let logits = match mode {
            "plain" => seg.forward_full(&mut tape, x, CsSite::Off, DnSite::Off, None, None),
            "ae" => seg.forward_full(&mut tape, x, CsSite::Ae, DnSite::Ae, Some(cs), Some(dn)),
            "norm" => seg.forward_full(&mut tape, x, CsSite::Off, DnSite::Prototype(proto.unwrap()), None, Some(dn)),
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
                    let val = v[ni * c * hw + ci * hw + pi];
                    if val > bv {
                        bv = val;
                        best = ci;
                    }
                }
                pred.push(best as i64);
            }
            cm.update(smp.label.as_ref().unwrap(), &pred, 255).unwrap();
        }
    }
    cm.mean_iou()
}

fn main() {
    let mut base = RunConfig::default();
    base.seed = 0;
    let ds = make_splits(&base.data, base.seed).unwrap();
    let (mut seg0, mut cs0, mut dn0) = init_models(&base).unwrap();
    train_erm(&base, &ds, &mut seg0).unwrap();
    train_ast_stage(&base, &ds, &seg0, &mut cs0, &mut dn0).unwrap();
    let dir = std::env::temp_dir().join("astseg_dbg_pre3");
    std::fs::create_dir_all(&dir).unwrap();
    let ckpt = dir.join("state.astc");
    save_checkpoint(&ckpt, Some(&seg0), Some(&cs0), Some(&dn0), None).unwrap();

    for (name, ast_lr, seg_lr, iters) in [
        ("astlr1.0 lr.003 it200", 1.0, 0.003, 200usize),
        ("astlr1.0 lr.003 it400", 1.0, 0.003, 400),
        ("astlr0.2 lr.003 it400", 0.2, 0.003, 400),
        ("astlr1.0 lr.001 it400", 1.0, 0.001, 400),
    ] {
        let mut cfg = base.clone();
        cfg.preadapt.ast_lr = ast_lr;
        cfg.preadapt.optim.lr = seg_lr;
        cfg.preadapt.optim.iterations = iters;
        let (mut seg, mut cs, mut dn) = init_models(&cfg).unwrap();
        load_checkpoint(&ckpt, Some(&mut seg), Some(&mut cs), Some(&mut dn), None).unwrap();
        preadapt_stage(&cfg, &ds, &mut seg, &mut cs, &mut dn).unwrap();
        let pairs = compute_pairs(&cfg.adapt, cfg.seed, 1, &seg, &cs, &ds).unwrap();
        let (proto, _) = compute_epoch_prototype(&cfg.adapt, &seg, &cs, &dn, &ds, &pairs).unwrap();
        println!(
            "{name}: plain src {:.3} | ae src {:.3} cmp {:.3} | norm src {:.3} cmp {:.3} open {:.3}",
            eval_mode(&seg, &cs, &dn, None, &ds.source[..100], "plain"),
            eval_mode(&seg, &cs, &dn, None, &ds.source[..100], "ae"),
            eval_mode(&seg, &cs, &dn, None, &ds.compound, "ae"),
            eval_mode(&seg, &cs, &dn, Some(&proto), &ds.source[..100], "norm"),
            eval_mode(&seg, &cs, &dn, Some(&proto), &ds.compound, "norm"),
            eval_mode(&seg, &cs, &dn, Some(&proto), &ds.open, "norm"),
        );
    }
}
