// Dev driver: times every stage of the full chain and prints the quantities
// the acceptance suite will assert. Not part of the shipped surface.

use std::time::Instant;

use astseg_core::config::{PairingMode, RunConfig};
use astseg_core::ddm;
use astseg_core::pipeline::*;
use astseg_core::synthdata::make_splits;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut cfg = RunConfig::default();
    cfg.seed = seed;

    let t0 = Instant::now();
    let ds = make_splits(&cfg.data, cfg.seed).unwrap();
    println!("[{:6.1}s] data: {} source / {} compound / {} open / {} ddm", t0.elapsed().as_secs_f64(), ds.source.len(), ds.compound.len(), ds.open.len(), ds.ddm.len());

    let (mut seg, mut cs, mut dn) = init_models(&cfg).unwrap();
    let t = Instant::now();
    let hist = train_erm(&cfg, &ds, &mut seg).unwrap();
    println!("[{:6.1}s] erm: {} steps, loss {:.4} -> {:.4} ({:.1}s)", t0.elapsed().as_secs_f64(), hist.len(), hist[0], hist.last().unwrap(), t.elapsed().as_secs_f64());

    let t = Instant::now();
    let base_compound = evaluate(&seg, &dn, None, &ds.compound, "compound").unwrap();
    let base_open = evaluate(&seg, &dn, None, &ds.open, "open").unwrap();
    let base_source = evaluate(&seg, &dn, None, &ds.source, "source").unwrap();
    println!(
        "[{:6.1}s] source-only: source {:.3} compound {:.3} open {:.3} (eval {:.1}s)",
        t0.elapsed().as_secs_f64(),
        base_source.miou,
        base_compound.miou,
        base_open.miou,
        t.elapsed().as_secs_f64()
    );

    let t = Instant::now();
    let (hist_cs, hist_dn) = train_ast_stage(&cfg, &ds, &seg, &mut cs, &mut dn).unwrap();
    let smooth = |h: &[f64]| -> (f64, f64) {
        let w = 50.min(h.len());
        let head: f64 = h[..w].iter().sum::<f64>() / w as f64;
        let tail: f64 = h[h.len() - w..].iter().sum::<f64>() / w as f64;
        (head, tail)
    };
    let (cs0, cs1) = smooth(&hist_cs);
    let (dn0, dn1) = smooth(&hist_dn);
    println!(
        "[{:6.1}s] ast: cs {:.4} -> {:.4} (ratio {:.3}), dn {:.4} -> {:.4} (ratio {:.3}) ({:.1}s)",
        t0.elapsed().as_secs_f64(), cs0, cs1, cs1 / cs0, dn0, dn1, dn1 / dn0, t.elapsed().as_secs_f64()
    );

    let t = Instant::now();
    preadapt_stage(&cfg, &ds, &mut seg, &mut cs, &mut dn).unwrap();
    println!("[{:6.1}s] preadapt done ({:.1}s)", t0.elapsed().as_secs_f64(), t.elapsed().as_secs_f64());

    let t = Instant::now();
    let stats = adapt_stage(&cfg, &ds, &mut seg, &mut cs, &mut dn, None).unwrap();
    for s in &stats {
        println!(
            "  epoch {}: losses sg {:.3} sg~ {:.3} tg {:.3} tg~ {:.3} | pgt cov {:.2} acc {:.3} raw {:.3} | mIoU C {:.3} O {:.3}",
            s.epoch, s.loss_sg, s.loss_sg_sim, s.loss_tg, s.loss_tg_sim, s.pgt_coverage, s.pgt_acc, s.raw_acc, s.miou_compound, s.miou_open
        );
    }
    let last = stats.last().unwrap();
    println!(
        "[{:6.1}s] adapt ({:.1}s): compound {:.3} (base {:.3}, gain {:+.1} pts), open {:.3} (base {:.3}, gain {:+.1} pts)",
        t0.elapsed().as_secs_f64(),
        t.elapsed().as_secs_f64(),
        last.miou_compound,
        base_compound.miou,
        100.0 * (last.miou_compound - base_compound.miou),
        last.miou_open,
        base_open.miou,
        100.0 * (last.miou_open - base_open.miou)
    );

    if args.iter().any(|a| a == "--ddm") {
        let t = Instant::now();
        // Probe the source-only net: retrain from the erm checkpoint state.
        let (mut seg_pre, _, _) = init_models(&cfg).unwrap();
        let h = train_erm(&cfg, &ds, &mut seg_pre).unwrap();
        let _ = h;
        let pre = ddm::run_study(&seg_pre, &ds.ddm, &cfg.ddm, "pre_adaptation", cfg.seed).unwrap();
        println!("[{:6.1}s] ddm pre ({:.1}s):", t0.elapsed().as_secs_f64(), t.elapsed().as_secs_f64());
        for l in &pre.layers {
            println!("  layer {}: spatial {:.3} latent {:.3}", l.layer, l.spatial, l.latent);
        }
        let t = Instant::now();
        let post = ddm::run_study(&seg, &ds.ddm, &cfg.ddm, "post_adaptation", cfg.seed).unwrap();
        println!("[{:6.1}s] ddm post ({:.1}s):", t0.elapsed().as_secs_f64(), t.elapsed().as_secs_f64());
        for l in &post.layers {
            println!("  layer {}: spatial {:.3} latent {:.3}", l.layer, l.spatial, l.latent);
        }
        let spatial: Vec<f64> = pre.layers.iter().map(|l| l.spatial).collect();
        println!("  spearman(pre spatial) = {:.3}", ddm::spearman_rho(&spatial));
    }

    if args.iter().any(|a| a == "--ablate") {
        for (name, pairing, sim_loss) in [
            ("random+all", PairingMode::Random, true),
            ("mined+simonly", PairingMode::Mined, false),
        ] {
            let mut cfg2 = cfg.clone();
            cfg2.adapt.pairing = pairing;
            if !sim_loss {
                cfg2.adapt.loss_gt_pathways = false;
            }
            let (mut seg2, mut cs2, mut dn2) = init_models(&cfg2).unwrap();
            let h = train_erm(&cfg2, &ds, &mut seg2).unwrap();
            let _ = h;
            train_ast_stage(&cfg2, &ds, &seg2, &mut cs2, &mut dn2).unwrap();
            preadapt_stage(&cfg2, &ds, &mut seg2, &mut cs2, &mut dn2).unwrap();
            let st = adapt_stage(&cfg2, &ds, &mut seg2, &mut cs2, &mut dn2, None).unwrap();
            let last = st.last().unwrap();
            println!("ablation {name}: compound {:.3} open {:.3}", last.miou_compound, last.miou_open);
        }
    }
}
