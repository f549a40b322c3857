// Dev driver: per-class IoU of plain vs auto-encode vs normalized paths on
// the cached post-preadapt state.

use astseg_core::config::RunConfig;
use astseg_core::metrics::ConfusionMatrix;
use astseg_core::pipeline::*;
use astseg_core::segmentor::{CsSite, DnSite};
use astseg_core::synthdata::{make_splits, DomainSample};
use astseg_core::tensor::{Tape, Tensor};

fn per_class(
    seg: &astseg_core::segmentor::Segmentor,
    cs: &astseg_core::ast::AstModule,
    dn: &astseg_core::ast::AstModule,
    proto: Option<&Tensor>,
    samples: &[DomainSample],
    mode: &str,
) -> (f64, Vec<Option<f64>>) {
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
    (cm.mean_iou(), cm.per_class_iou())
}

fn main() {
    let mut cfg = RunConfig::default();
    cfg.seed = 0;
    let ds = make_splits(&cfg.data, cfg.seed).unwrap();
    let ckpt = std::env::temp_dir().join("astseg_preadapted_seed0.astc");
    let (mut seg, mut cs, mut dn) = init_models(&cfg).unwrap();
    load_checkpoint(&ckpt, Some(&mut seg), Some(&mut cs), Some(&mut dn), None).unwrap();
    let pairs = compute_pairs(&cfg.adapt, cfg.seed, 1, &seg, &cs, &ds).unwrap();
    let (proto, _) = compute_epoch_prototype(&cfg.adapt, &seg, &cs, &dn, &ds, &pairs).unwrap();

    let fmt = |v: &Vec<Option<f64>>| -> String {
        v.iter()
            .map(|x| x.map(|y| format!("{y:.2}")).unwrap_or("-".into()))
            .collect::<Vec<_>>()
            .join("/")
    };
    for split in ["source", "compound"] {
        let samples: &[DomainSample] = if split == "source" { &ds.source[..100] } else { &ds.compound };
        for mode in ["plain", "ae", "norm"] {
            let p = if mode == "norm" { Some(&proto) } else { None };
            let (miou, pc) = per_class(&seg, &cs, &dn, p, samples, mode);
            println!("{split:9} {mode:5}: mIoU {miou:.3} per-class {}", fmt(&pc));
        }
    }
}
