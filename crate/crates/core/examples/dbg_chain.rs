// Dev driver: full chain with quick knob overrides from argv.
// usage: dbg_chain [seed] [key=value ...]
//   keys: erm_it, pre_it, pre_lr, pre_astlr, adapt_ep, adapt_lr, strong, cov_w

use astseg_core::config::RunConfig;
use astseg_core::pipeline::*;
use astseg_core::synthdata::make_splits;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut seed = 0u64;
    let mut cfg = RunConfig::default();
    cfg.preadapt.ast_lr = 0.2;
    cfg.preadapt.optim.lr = 0.003;
    cfg.preadapt.optim.iterations = 400;
    let mut strong = false;
    let mut strong2 = false;
    for a in &args {
        if let Ok(s) = a.parse::<u64>() {
            seed = s;
            continue;
        }
        let (k, v) = a.split_once('=').expect("key=value");
        match k {
            "erm_it" => cfg.erm.iterations = v.parse().unwrap(),
            "pre_it" => cfg.preadapt.optim.iterations = v.parse().unwrap(),
            "pre_lr" => cfg.preadapt.optim.lr = v.parse().unwrap(),
            "pre_astlr" => cfg.preadapt.ast_lr = v.parse().unwrap(),
            "adapt_ep" => cfg.adapt.epochs = v.parse().unwrap(),
            "adapt_lr" => cfg.adapt.optim.lr = v.parse().unwrap(),
            "ast_it" => cfg.ast_train.iterations = v.parse().unwrap(),
            "strong" => strong = v.parse().unwrap(),
            "strong2" => strong2 = v.parse().unwrap(),
            other => panic!("unknown key {other}"),
        }
    }
    cfg.seed = seed;
    if strong {
        let r = &mut cfg.data.style_ranges;
        r.compound[0].gain_r = [1.45, 1.65];
        r.compound[0].gain_b = [0.30, 0.45];
        r.compound[0].illum_amp = [0.15, 0.25];
        r.compound[1].gain_r = [0.30, 0.45];
        r.compound[1].gain_g = [0.38, 0.55];
        r.compound[1].illum_amp = [0.45, 0.58];
        r.compound[1].blur_radius = 2;
        r.compound[2].gain_r = [1.55, 1.80];
        r.compound[2].gain_g = [1.55, 1.80];
        r.compound[2].gain_b = [1.55, 1.80];
        r.compound[2].illum_amp = [0.28, 0.40];
        r.compound[2].blur_radius = 3;
        r.open.gain_r = [0.18, 0.30];
        r.open.gain_g = [1.85, 2.10];
        r.open.gain_b = [1.90, 2.20];
        r.open.illum_amp = [0.62, 0.75];
        r.open.blur_radius = 4;
    }

    if strong2 {
        let r = &mut cfg.data.style_ranges;
        r.compound[0].gain_r = [1.70, 1.90];
        r.compound[0].gain_g = [0.85, 1.00];
        r.compound[0].gain_b = [0.12, 0.25];
        r.compound[0].illum_amp = [0.15, 0.25];
        r.compound[0].noise_sigma = [0.010, 0.020];
        r.compound[1].gain_r = [0.15, 0.28];
        r.compound[1].gain_g = [0.20, 0.35];
        r.compound[1].gain_b = [0.75, 0.95];
        r.compound[1].illum_amp = [0.45, 0.58];
        r.compound[1].noise_sigma = [0.020, 0.030];
        r.compound[1].blur_radius = 2;
        r.compound[2].gain_r = [1.70, 1.95];
        r.compound[2].gain_g = [1.70, 1.95];
        r.compound[2].gain_b = [1.70, 1.95];
        r.compound[2].illum_amp = [0.28, 0.40];
        r.compound[2].blur_radius = 3;
        r.open.gain_r = [0.15, 0.26];
        r.open.gain_g = [1.70, 2.00];
        r.open.gain_b = [1.75, 2.05];
        r.open.illum_amp = [0.62, 0.75];
        r.open.noise_sigma = [0.030, 0.040];
        r.open.blur_radius = 3;
        r.validate().unwrap();
    }

    let t0 = std::time::Instant::now();
    let ds = make_splits(&cfg.data, cfg.seed).unwrap();
    let (mut seg, mut cs, mut dn) = init_models(&cfg).unwrap();
    train_erm(&cfg, &ds, &mut seg).unwrap();
    let base_c = evaluate(&seg, &dn, None, &ds.compound, "compound").unwrap().miou;
    let base_o = evaluate(&seg, &dn, None, &ds.open, "open").unwrap().miou;
    let base_s = evaluate(&seg, &dn, None, &ds.source[..100.min(ds.source.len())], "source").unwrap().miou;
    println!("[{:5.0}s] baseline: source {base_s:.3} compound {base_c:.3} open {base_o:.3}", t0.elapsed().as_secs_f64());
    train_ast_stage(&cfg, &ds, &seg, &mut cs, &mut dn).unwrap();
    preadapt_stage(&cfg, &ds, &mut seg, &mut cs, &mut dn).unwrap();
    println!("[{:5.0}s] preadapt done", t0.elapsed().as_secs_f64());
    let stats = adapt_stage(&cfg, &ds, &mut seg, &mut cs, &mut dn, None).unwrap();
    for s in &stats {
        println!(
            "  ep {}: mIoU C {:.3} O {:.3} | pgt cov {:.2} acc {:.3} raw {:.3}",
            s.epoch, s.miou_compound, s.miou_open, s.pgt_coverage, s.pgt_acc, s.raw_acc
        );
    }
    let last = stats.last().unwrap();
    println!(
        "[{:5.0}s] final: C {:.3} (base {base_c:.3}, {:+.1} pts) O {:.3} (base {base_o:.3}, {:+.1} pts)",
        t0.elapsed().as_secs_f64(),
        last.miou_compound,
        100.0 * (last.miou_compound - base_c),
        last.miou_open,
        100.0 * (last.miou_open - base_o)
    );
}
