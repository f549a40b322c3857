// Dev driver: adaptation sweep from the cached post-preadapt state.
// usage: dbg_adapt adapt_lr epochs [loss_weight]

use astseg_core::config::RunConfig;
use astseg_core::pipeline::*;
use astseg_core::synthdata::make_splits;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let lr: f64 = args[0].parse().unwrap();
    let epochs: usize = args[1].parse().unwrap();
    let weight: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1.0);

    let mut cfg = RunConfig::default();
    cfg.seed = 0;
    cfg.adapt.optim.lr = lr;
    cfg.adapt.epochs = epochs;
    cfg.adapt.loss_weight = weight;
    let ds = make_splits(&cfg.data, cfg.seed).unwrap();
    let ckpt = std::env::temp_dir().join("astseg_preadapted_seed0.astc");
    let (mut seg, mut cs, mut dn) = init_models(&cfg).unwrap();
    load_checkpoint(&ckpt, Some(&mut seg), Some(&mut cs), Some(&mut dn), None).unwrap();

    let base_c = evaluate(&seg, &dn, None, &ds.compound, "compound").unwrap().miou;
    let base_o = evaluate(&seg, &dn, None, &ds.open, "open").unwrap().miou;
    println!("baselines (plain, pre-adaptation nets differ from erm): C {base_c:.3} O {base_o:.3}");
    let stats = adapt_stage(&cfg, &ds, &mut seg, &mut cs, &mut dn, None).unwrap();
    for s in &stats {
        println!(
            "  ep {}: C {:.3} O {:.3} | cov {:.2} acc {:.3} raw {:.3}",
            s.epoch, s.miou_compound, s.miou_open, s.pgt_coverage, s.pgt_acc, s.raw_acc
        );
    }
}
