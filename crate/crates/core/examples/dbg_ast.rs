// Dev driver: AST reconstruction training in isolation.

use astseg_core::ast::AstConfig;
use astseg_core::config::RunConfig;
use astseg_core::pipeline::{init_models, site_features, train_erm};
use astseg_core::rng::Rng;
use astseg_core::synthdata::{make_splits, SynthConfig};
use astseg_core::tensor::SgdConfig;

fn main() {
    let mut cfg = RunConfig::default();
    cfg.seed = 0;
    cfg.data = SynthConfig { source_count: 60, compound_count: 8, open_count: 8, ddm_count: 8, ..Default::default() };
    cfg.erm.iterations = 200;
    let ds = make_splits(&cfg.data, cfg.seed).unwrap();
    let (mut seg, _, _) = init_models(&cfg).unwrap();
    train_erm(&cfg, &ds, &mut seg).unwrap();
    let refs: Vec<_> = ds.source.iter().collect();
    let (feats_l, _) = site_features(&seg, &refs).unwrap();
    let stat = |h: &[f64]| (h[..20.min(h.len())].iter().sum::<f64>() / 20.0, h[h.len()-20..].iter().sum::<f64>() / 20.0);

    for (lr, wd, steps) in [(1.0, 0.0, 800), (5.0, 0.0, 800), (20.0, 0.0, 800), (50.0, 0.0, 800), (100.0, 0.0, 800), (50.0, 5e-4, 800)] {
        let mut ast = astseg_core::ast::AstModule::new(&AstConfig::default(), &mut Rng::new(7)).unwrap();
        let optim = SgdConfig { lr, momentum: 0.9, weight_decay: wd, poly_power: 0.9 };
        let hist = ast.train_autoencoder("ast", &feats_l, steps, 2, &optim, &mut Rng::new(9));
        match hist {
            Ok(h) => {
                let (head, tail) = stat(&h);
                println!("lr {lr} wd {wd}: loss {head:.4} -> {tail:.4} (ratio {:.3}) min {:.4} max {:.4}", tail / head,
                    h.iter().cloned().fold(f64::MAX, f64::min), h.iter().cloned().fold(f64::MIN, f64::max));
            }
            Err(e) => println!("lr {lr} wd {wd}: {e}"),
        }
    }
}
