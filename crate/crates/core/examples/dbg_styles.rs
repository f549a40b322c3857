// Dev driver: baseline collapse vs style harshness, one ERM net, re-rendered
// target splits.

use astseg_core::config::RunConfig;
use astseg_core::pipeline::*;
use astseg_core::synthdata::*;

fn harsh(cfg: &mut SynthConfig, level: usize) {
    let r = &mut cfg.style_ranges;
    match level {
        1 => {
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
        2 => {
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
            r.open.gain_r = [0.10, 0.20];
            r.open.gain_g = [2.00, 2.30];
            r.open.gain_b = [2.10, 2.40];
            r.open.illum_amp = [0.62, 0.75];
            r.open.noise_sigma = [0.030, 0.040];
            r.open.blur_radius = 4;
        }
        3 => {
            harsh(cfg, 2);
            let r = &mut cfg.style_ranges;
            r.compound[0].gain_b = [0.05, 0.15];
            r.compound[0].gain_r = [1.85, 2.05];
            r.compound[1].gain_r = [0.08, 0.18];
            r.compound[1].gain_g = [0.12, 0.25];
            r.compound[1].blur_radius = 3;
            r.compound[2].gain_r = [1.95, 2.25];
            r.compound[2].gain_g = [1.95, 2.25];
            r.compound[2].gain_b = [1.95, 2.25];
            r.compound[2].blur_radius = 4;
        }
        _ => {}
    }
}

fn main() {
    let mut cfg = RunConfig::default();
    cfg.seed = 0;
    let ds0 = make_splits(&cfg.data, cfg.seed).unwrap();
    let (mut seg, _, dn) = init_models(&cfg).unwrap();
    train_erm(&cfg, &ds0, &mut seg).unwrap();

    for level in 0..4usize {
        let mut data_cfg = cfg.data.clone();
        harsh(&mut data_cfg, level);
        data_cfg.style_ranges.validate().unwrap();
        let ds = make_splits(&data_cfg, cfg.seed).unwrap();
        let c = evaluate(&seg, &dn, None, &ds.compound, "compound").unwrap();
        let o = evaluate(&seg, &dn, None, &ds.open, "open").unwrap().miou;
        // Legibility proxy: plain pixel accuracy on compound.
        println!(
            "level {level}: baseline C {:.3} (per-family {:?}) O {o:.3}",
            c.miou,
            c.per_family.iter().map(|(n, m)| format!("{n}:{m:.2}")).collect::<Vec<_>>()
        );
    }
}
