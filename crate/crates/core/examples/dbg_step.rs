// Dev driver: one AST training step under the microscope.

use astseg_core::ast::{AstConfig, AstModule};
use astseg_core::rng::Rng;
use astseg_core::tensor::{SgdConfig, Tape, Tensor};

fn main() {
    let cfg = AstConfig { resize_h: 8, resize_w: 8, d_latent: 8, d_hidden: 16 };
    let mut ast = AstModule::new(&cfg, &mut Rng::new(7)).unwrap();
    let mut rng = Rng::new(3);
    let feats = Tensor::new(&[2, 8, 8], (0..128).map(|_| rng.range_f64(0.0, 1.0)).collect()).unwrap();

    let mut tape = Tape::new();
    let x = tape.leaf(&feats);
    let recon = ast.forward_ae(&mut tape, x, "ast").unwrap();
    let loss = tape.mse(x, recon).unwrap();
    println!("loss = {}", tape.value(loss)[0]);
    tape.backward(loss).unwrap();
    let grads = tape.param_grads();
    for (name, g) in &grads {
        let norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("grad {name}: norm {norm:.6e}");
    }
    let before: Vec<u64> = ast.params("ast").iter().map(|(_, t)| t.bit_checksum()).collect();
    astseg_core::layers::assign_grads(&grads, ast.params_mut("ast")).unwrap();
    let mut opt = astseg_core::tensor::SgdOptimizer::new(0.9, 0.0);
    opt.step(0.01, ast.params_mut("ast").into_iter()).unwrap();
    let after: Vec<u64> = ast.params("ast").iter().map(|(_, t)| t.bit_checksum()).collect();
    println!("params changed: {}", before.iter().zip(after.iter()).filter(|(a, b)| a != b).count());
    let _ = SgdConfig::default();
}
