// Dev driver: preadapt variants and their post-stage evals.

use astseg_core::config::RunConfig;
use astseg_core::pipeline::*;
use astseg_core::synthdata::make_splits;

fn main() {
    let mut base = RunConfig::default();
    base.seed = 0;
    let ds = make_splits(&base.data, base.seed).unwrap();
    let (mut seg0, mut cs0, mut dn0) = init_models(&base).unwrap();
    train_erm(&base, &ds, &mut seg0).unwrap();
    train_ast_stage(&base, &ds, &seg0, &mut cs0, &mut dn0).unwrap();
    let src_eval: Vec<astseg_core::synthdata::DomainSample> = ds.source[..100].to_vec();

    for (name, update_asts, ast_lr, seg_lr, iters) in [
        ("no-ast-updates lr.01", false, 0.0, 0.01, 200),
        ("ast_lr 1.0 lr.01", true, 1.0, 0.01, 200),
        ("ast_lr 0.2 lr.01", true, 0.2, 0.01, 200),
        ("ast_lr 1.0 lr.003", true, 1.0, 0.003, 200),
    ] {
        let mut cfg = base.clone();
        cfg.preadapt.update_asts = update_asts;
        cfg.preadapt.ast_lr = ast_lr;
        cfg.preadapt.optim.lr = seg_lr;
        cfg.preadapt.optim.iterations = iters;
        let mut seg = clone_via_ckpt(&seg0, &cs0, &dn0, &cfg).0;
        let (_, mut cs, mut dn) = clone_via_ckpt(&seg0, &cs0, &dn0, &cfg);
        preadapt_stage(&cfg, &ds, &mut seg, &mut cs, &mut dn).unwrap();
        let plain = evaluate(&seg, &dn, None, &src_eval, "source").unwrap();
        let cmp = evaluate(&seg, &dn, None, &ds.compound, "compound").unwrap();
        println!("{name}: plain source {:.3} compound {:.3}", plain.miou, cmp.miou);
    }
}

fn clone_via_ckpt(
    seg: &astseg_core::segmentor::Segmentor,
    cs: &astseg_core::ast::AstModule,
    dn: &astseg_core::ast::AstModule,
    cfg: &RunConfig,
) -> (
    astseg_core::segmentor::Segmentor,
    astseg_core::ast::AstModule,
    astseg_core::ast::AstModule,
) {
    let dir = std::env::temp_dir().join("astseg_dbg_preadapt2");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("state.astc");
    save_checkpoint(&path, Some(seg), Some(cs), Some(dn), None).unwrap();
    let (mut s, mut c, mut d) = init_models(cfg).unwrap();
    load_checkpoint(&path, Some(&mut s), Some(&mut c), Some(&mut d), None).unwrap();
    (s, c, d)
}
