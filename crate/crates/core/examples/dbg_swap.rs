// Dev driver: how much does the latent swap actually change features and
// predictions? Caches the post-preadapt state for fast re-runs.

use astseg_core::config::RunConfig;
use astseg_core::pipeline::*;
use astseg_core::segmentor::{CsSite, DnSite};
use astseg_core::synthdata::make_splits;
use astseg_core::tensor::Tape;

fn main() {
    let mut cfg = RunConfig::default();
    cfg.seed = 0;
    cfg.preadapt.ast_lr = 0.2;
    cfg.preadapt.optim.lr = 0.003;
    cfg.preadapt.optim.iterations = 400;
    let ds = make_splits(&cfg.data, cfg.seed).unwrap();
    let ckpt = std::env::temp_dir().join("astseg_preadapted_seed0.astc");
    let (mut seg, mut cs, mut dn) = init_models(&cfg).unwrap();
    if ckpt.exists() {
        load_checkpoint(&ckpt, Some(&mut seg), Some(&mut cs), Some(&mut dn), None).unwrap();
        println!("loaded cached state");
    } else {
        train_erm(&cfg, &ds, &mut seg).unwrap();
        train_ast_stage(&cfg, &ds, &seg, &mut cs, &mut dn).unwrap();
        preadapt_stage(&cfg, &ds, &mut seg, &mut cs, &mut dn).unwrap();
        save_checkpoint(&ckpt, Some(&seg), Some(&cs), Some(&dn), None).unwrap();
        println!("built and cached state");
    }

    let pairs = compute_pairs(&cfg.adapt, cfg.seed, 1, &seg, &cs, &ds).unwrap();

    // Feature change from the swap, and prediction disagreement.
    let mut rel_change = 0.0;
    let mut disagree = 0.0;
    let mut count = 0usize;
    for j in (0..ds.compound.len()).step_by(25) {
        let t = &ds.compound[j];
        let s = &ds.source[pairs.source_for_target[j]];
        let mut tape = Tape::inference();
        let xt = tape.leaf(&t.image.reshaped(&[1, 3, 64, 64]).unwrap());
        let xs = tape.leaf(&s.image.reshaped(&[1, 3, 64, 64]).unwrap());
        let h_t = seg.forward_phi(&mut tape, xt).unwrap();
        let h_s = seg.forward_phi(&mut tape, xs).unwrap();
        let sh = tape.shape(h_t).to_vec();
        let pt = tape.reshape(h_t, &[sh[1], sh[2], sh[3]]).unwrap();
        let ps = tape.reshape(h_s, &[sh[1], sh[2], sh[3]]).unwrap();
        let z_s = cs.encode_planes(&mut tape, ps, "ast_cs").unwrap();
        let z_t = cs.encode_planes(&mut tape, pt, "ast_cs").unwrap();
        let swapped = cs.apply_planes(&mut tape, pt, z_s, "ast_cs").unwrap();
        let own = cs.apply_planes(&mut tape, pt, z_t, "ast_cs").unwrap();
        let ht_v = tape.value(pt);
        let sw_v = tape.value(swapped);
        let own_v = tape.value(own);
        let norm: f64 = ht_v.iter().map(|v| v * v).sum::<f64>().sqrt();
        let d_swap: f64 =
            sw_v.iter().zip(own_v.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        rel_change += d_swap / norm;

        // Prediction disagreement between norm'd plain and norm'd swapped.
        let (proto, _) = compute_epoch_prototype(&cfg.adapt, &seg, &cs, &dn, &ds, &pairs).unwrap();
        let y_a = seg
            .forward_full(&mut tape, xt, CsSite::Off, DnSite::Prototype(&proto), None, Some(&dn))
            .unwrap();
        let z_s2 = {
            let h_s = seg.forward_phi(&mut tape, xs).unwrap();
            let ps = tape.reshape(h_s, &[sh[1], sh[2], sh[3]]).unwrap();
            cs.encode_planes(&mut tape, ps, "ast_cs").unwrap()
        };
        let y_b = seg
            .forward_full(&mut tape, xt, CsSite::Swap(z_s2), DnSite::Prototype(&proto), Some(&cs), Some(&dn))
            .unwrap();
        let va = tape.value(y_a);
        let vb = tape.value(y_b);
        let hw = 64 * 64;
        let c = seg.cfg.class_count;
        let mut dis = 0;
        for pi in 0..hw {
            let am = (0..c).max_by(|&i, &j| va[i * hw + pi].partial_cmp(&va[j * hw + pi]).unwrap()).unwrap();
            let bm = (0..c).max_by(|&i, &j| vb[i * hw + pi].partial_cmp(&vb[j * hw + pi]).unwrap()).unwrap();
            if am != bm {
                dis += 1;
            }
        }
        disagree += dis as f64 / hw as f64;
        count += 1;
        if count >= 6 {
            break;
        }
    }
    println!(
        "swap feature change (rel to own-recon): {:.4}, argmax disagreement: {:.4}",
        rel_change / count as f64,
        disagree / count as f64
    );

    // Latent spread per channel between source and target.
    let src_refs: Vec<&astseg_core::synthdata::DomainSample> = ds.source.iter().take(40).collect();
    let tgt_refs: Vec<&astseg_core::synthdata::DomainSample> = ds.compound.iter().take(40).collect();
    let zs = mining_latents(&seg, &cs, &src_refs).unwrap();
    let zt = mining_latents(&seg, &cs, &tgt_refs).unwrap();
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut across = 0.0;
    for i in 0..40 {
        across += d(&zs[i], &zt[i]);
    }
    println!("mean source-target latent distance: {:.4}", across / 40.0);
}
