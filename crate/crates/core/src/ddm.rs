//! Domain-discriminability probing: how accurately can a freshly trained
//! discriminator recover the (unexposed) domain label from frozen features
//! at each depth, and from the amplitude-spectrum latents of throwaway
//! auto-encoders trained on those same features?
//!
//! Reported numbers are always held-out accuracy, never train accuracy; the
//! train/held-out split is 80/20 keyed on the content seed so the same scene
//! never appears on both sides.

use serde::{Deserialize, Serialize};

use crate::ast::{AstConfig, AstModule};
use crate::error::{Error, Result};
use crate::layers::{assign_grads, ConvLayer, LinearLayer};
use crate::rng::Rng;
use crate::segmentor::Segmentor;
use crate::synthdata::{DomainSample, DomainTag};
use crate::tensor::{avg_pool_to_max, poly_lr, SgdConfig, SgdOptimizer, Tape, Tensor, Var};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdmConfig {
    /// Feature maps are average-pooled until both spatial dims fit this cap
    /// before the conv discriminator (bounds probe cost; mildly deflates
    /// spatial scores, which is the conservative direction here).
    pub pool_max_side: usize,
    /// Conv discriminator widths before the domain-count output layer.
    pub spatial_widths: [usize; 2],
    pub leaky_slope: f64,
    /// Hidden width of the latent MLP discriminator.
    pub latent_hidden: usize,
    pub disc_steps: usize,
    pub disc_batch: usize,
    /// Discriminator optimizer (cross-entropy scale).
    pub disc_optim: SgdConfig,
    /// Throwaway per-layer auto-encoder training budget.
    pub ast_steps: usize,
    pub ast_batch: usize,
    pub ast: AstConfig,
    /// Auto-encoder optimizer (mean-reconstruction scale).
    pub ast_optim: SgdConfig,
}

impl Default for DdmConfig {
    fn default() -> Self {
        DdmConfig {
            pool_max_side: 8,
            spatial_widths: [32, 64],
            leaky_slope: 0.2,
            latent_hidden: 256,
            disc_steps: 240,
            disc_batch: 8,
            disc_optim: SgdConfig { lr: 0.01, ..Default::default() },
            ast_steps: 200,
            ast_batch: 2,
            ast: AstConfig::default(),
            ast_optim: SgdConfig { lr: 5.0, weight_decay: 0.0, ..Default::default() },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerDdm {
    pub layer: usize,
    pub spatial: f64,
    pub latent: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DdmReport {
    /// "pre_adaptation" or "post_adaptation".
    pub phase: String,
    pub layers: Vec<LayerDdm>,
}

/// One probed sample: frozen features (or latents), domain id, content seed.
pub struct ProbeSample {
    pub features: Tensor,
    pub domain: usize,
    pub seed: u64,
}

fn holdout(seed: u64) -> bool {
    seed % 5 == 4
}

fn check_domains(samples: &[ProbeSample]) -> Result<usize> {
    let n_domains = samples.iter().map(|s| s.domain).max().map(|d| d + 1).unwrap_or(0);
    if n_domains < 2 {
        return Err(Error::Config(format!(
            "domain probing needs at least 2 domains, got {n_domains}"
        )));
    }
    Ok(n_domains)
}

trait ProbeNet {
    fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var>;
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)>;
}

struct ConvProbe {
    convs: Vec<ConvLayer>,
    slope: f64,
}

impl ProbeNet for ConvProbe {
    fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(tape, h, &format!("disc/{i}"))?;
            if i + 1 < self.convs.len() {
                h = tape.leaky_relu(h, self.slope)?;
            }
        }
        let pooled = tape.mean_hw(h)?;
        let s = tape.shape(pooled).to_vec();
        tape.reshape(pooled, &[s[0], s[1], 1, 1])
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter_mut().enumerate() {
            out.extend(c.params_mut(&format!("disc/{i}")));
        }
        out
    }
}

struct MlpProbe {
    l1: LinearLayer,
    l2: LinearLayer,
}

impl ProbeNet for MlpProbe {
    fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.l1.forward(tape, x, "disc/l1")?;
        let h = tape.relu(h)?;
        let logits = self.l2.forward(tape, h, "disc/l2")?;
        let s = tape.shape(logits).to_vec();
        tape.reshape(logits, &[s[0], s[1], 1, 1])
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.l1.params_mut("disc/l1");
        out.extend(self.l2.params_mut("disc/l2"));
        out
    }
}

/// Train a fresh classifier on the train split and return held-out accuracy.
fn train_and_score(
    net: &mut dyn ProbeNet,
    samples: &[ProbeSample],
    cfg: &DdmConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let train_idx: Vec<usize> =
        (0..samples.len()).filter(|&i| !holdout(samples[i].seed)).collect();
    let hold_idx: Vec<usize> = (0..samples.len()).filter(|&i| holdout(samples[i].seed)).collect();
    if train_idx.is_empty() || hold_idx.is_empty() {
        return Err(Error::Config("probe split produced an empty side".into()));
    }
    let feat_shape = samples[0].features.shape().to_vec();
    let feat_len = samples[0].features.numel();

    let mut opt = SgdOptimizer::new(cfg.disc_optim.momentum, cfg.disc_optim.weight_decay);
    for step in 0..cfg.disc_steps {
        let bs = cfg.disc_batch.min(train_idx.len());
        let mut data = Vec::with_capacity(bs * feat_len);
        let mut labels = Vec::with_capacity(bs);
        for _ in 0..bs {
            let i = train_idx[rng.below(train_idx.len())];
            data.extend_from_slice(samples[i].features.data());
            labels.push(samples[i].domain as i64);
        }
        let mut shape = vec![bs];
        shape.extend_from_slice(&feat_shape);
        let batch = Tensor::new(&shape, data)?;

        let mut tape = Tape::new();
        let x = tape.leaf(&batch);
        let logits = net.forward(&mut tape, x)?;
        let loss = tape.softmax_cross_entropy(logits, &labels, -1)?;
        if !tape.value(loss)[0].is_finite() {
            return Err(Error::Numeric(format!("probe loss non-finite at step {step}")));
        }
        tape.backward(loss)?;
        let grads = tape.param_grads();
        assign_grads(&grads, net.params_mut())?;
        let lr = poly_lr(cfg.disc_optim.lr, step, cfg.disc_steps, cfg.disc_optim.poly_power);
        opt.step(lr, net.params_mut().into_iter())?;
    }

    // Held-out accuracy, batched.
    let mut correct = 0usize;
    for chunk in hold_idx.chunks(16) {
        let bs = chunk.len();
        let mut data = Vec::with_capacity(bs * feat_len);
        for &i in chunk {
            data.extend_from_slice(samples[i].features.data());
        }
        let mut shape = vec![bs];
        shape.extend_from_slice(&feat_shape);
        let batch = Tensor::new(&shape, data)?;
        let mut tape = Tape::inference();
        let x = tape.leaf(&batch);
        let logits = net.forward(&mut tape, x)?;
        let v = tape.value(logits);
        let d = tape.shape(logits)[1];
        for (row, &i) in chunk.iter().enumerate() {
            let scores = &v[row * d..(row + 1) * d];
            let pred = scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if pred == samples[i].domain {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / hold_idx.len() as f64)
}

/// Held-out accuracy of a conv discriminator on spatial features.
/// Features are average-pooled to the configured cap first.
pub fn probe_spatial(samples: &[ProbeSample], cfg: &DdmConfig, seed: u64) -> Result<f64> {
    let n_domains = check_domains(samples)?;
    let s = samples[0].features.shape().to_vec();
    if s.len() != 3 {
        return Err(Error::Config(format!("spatial probe expects [C,H,W] features, got {s:?}")));
    }
    let pooled: Vec<ProbeSample> = samples
        .iter()
        .map(|p| {
            let (data, oh, ow) =
                avg_pool_to_max(p.features.data(), 1, s[0], s[1], s[2], cfg.pool_max_side);
            ProbeSample {
                features: Tensor::new(&[s[0], oh, ow], data).unwrap(),
                domain: p.domain,
                seed: p.seed,
            }
        })
        .collect();

    let mut rng = Rng::new(seed).derive("ddm:spatial");
    let mut net = ConvProbe {
        convs: vec![
            ConvLayer::new(s[0], cfg.spatial_widths[0], 4, 2, 1, &mut rng),
            ConvLayer::new(cfg.spatial_widths[0], cfg.spatial_widths[1], 4, 2, 1, &mut rng),
            ConvLayer::new(cfg.spatial_widths[1], n_domains, 4, 2, 1, &mut rng),
        ],
        slope: cfg.leaky_slope,
    };
    train_and_score(&mut net, &pooled, cfg, &mut rng)
}

/// Held-out accuracy of a 2-layer MLP on flat latent vectors. Inputs are
/// standardized per dimension on train-split statistics first: unit-sphere
/// latents cluster around a dominant shared direction, and the domain signal
/// lives in small consistent offsets the raw scale would bury.
pub fn probe_latent_vectors(samples: &[ProbeSample], cfg: &DdmConfig, seed: u64) -> Result<f64> {
    let n_domains = check_domains(samples)?;
    let s = samples[0].features.shape().to_vec();
    if s.len() != 1 {
        return Err(Error::Config(format!("latent probe expects flat vectors, got {s:?}")));
    }
    let dim = s[0];
    let train: Vec<&ProbeSample> = samples.iter().filter(|p| !holdout(p.seed)).collect();
    if train.is_empty() {
        return Err(Error::Config("latent probe needs train samples".into()));
    }
    let mut mean = vec![0.0; dim];
    for p in &train {
        for (m, v) in mean.iter_mut().zip(p.features.data()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= train.len() as f64;
    }
    let mut var = vec![0.0; dim];
    for p in &train {
        for ((s, v), m) in var.iter_mut().zip(p.features.data()).zip(mean.iter()) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / train.len() as f64).sqrt().max(1e-8)).collect();
    let standardized: Vec<ProbeSample> = samples
        .iter()
        .map(|p| {
            let data: Vec<f64> = p
                .features
                .data()
                .iter()
                .zip(mean.iter().zip(std.iter()))
                .map(|(v, (m, s))| (v - m) / s)
                .collect();
            ProbeSample {
                features: Tensor::new(&[dim], data).unwrap(),
                domain: p.domain,
                seed: p.seed,
            }
        })
        .collect();

    let mut rng = Rng::new(seed).derive("ddm:latent");
    let mut net = MlpProbe {
        l1: LinearLayer::new(dim, cfg.latent_hidden, &mut rng),
        l2: LinearLayer::new(cfg.latent_hidden, n_domains, &mut rng),
    };
    train_and_score(&mut net, &standardized, cfg, &mut rng)
}

/// Train a throwaway auto-encoder on the train-split features of one layer,
/// then encode every sample to its concatenated latent.
pub fn throwaway_latents(
    features: &[ProbeSample],
    cfg: &DdmConfig,
    seed: u64,
) -> Result<Vec<ProbeSample>> {
    let mut rng = Rng::new(seed).derive("ddm:ast");
    let mut ast = AstModule::new(&cfg.ast, &mut rng)?;
    let train_feats: Vec<Tensor> = features
        .iter()
        .filter(|p| !holdout(p.seed))
        .map(|p| p.features.clone())
        .collect();
    ast.train_autoencoder("ddm_ast", &train_feats, cfg.ast_steps, cfg.ast_batch, &cfg.ast_optim, &mut rng)?;

    let mut out = Vec::with_capacity(features.len());
    for chunk in features.chunks(16) {
        let s = chunk[0].features.shape().to_vec();
        let (c, h, w) = (s[0], s[1], s[2]);
        let mut data = Vec::with_capacity(chunk.len() * c * h * w);
        for p in chunk {
            data.extend_from_slice(p.features.data());
        }
        let batch = Tensor::new(&[chunk.len(), c, h, w], data)?;
        let z = ast.encode_batch(&batch, "ddm_ast")?;
        let width = c * cfg.ast.d_latent;
        for (row, p) in chunk.iter().enumerate() {
            out.push(ProbeSample {
                features: Tensor::new(&[width], z.data()[row * width..(row + 1) * width].to_vec())?,
                domain: p.domain,
                seed: p.seed,
            });
        }
    }
    Ok(out)
}

/// Extract per-layer plain-path features of the probe split.
/// Returns one sample list per conv block.
pub fn extract_layer_features(
    seg: &Segmentor,
    samples: &[DomainSample],
) -> Result<Vec<Vec<ProbeSample>>> {
    let n_layers = seg.cfg.layer_l_prime();
    let mut per_layer: Vec<Vec<ProbeSample>> = (0..n_layers).map(|_| Vec::new()).collect();
    for chunk in samples.chunks(8) {
        let s = chunk[0].image.shape().to_vec();
        let mut data = Vec::new();
        for smp in chunk {
            data.extend_from_slice(smp.image.data());
        }
        let batch = Tensor::new(&[chunk.len(), s[0], s[1], s[2]], data)?;
        let mut tape = Tape::inference();
        let x = tape.leaf(&batch);
        let feats = seg.forward_layerwise(&mut tape, x)?;
        for (k, &var) in feats.iter().enumerate() {
            let fs = tape.shape(var).to_vec();
            let per = fs[1] * fs[2] * fs[3];
            let v = tape.value(var);
            for (row, smp) in chunk.iter().enumerate() {
                let domain = match smp.domain {
                    DomainTag::Ddm(f) => f,
                    _ => {
                        return Err(Error::Config(
                            "layer feature extraction expects probe-split samples".into(),
                        ))
                    }
                };
                per_layer[k].push(ProbeSample {
                    features: Tensor::new(&[fs[1], fs[2], fs[3]], v[row * per..(row + 1) * per].to_vec())?,
                    domain,
                    seed: smp.seed,
                });
            }
        }
    }
    Ok(per_layer)
}

/// Full study over one frozen network: spatial and latent scores per layer.
pub fn run_study(
    seg: &Segmentor,
    samples: &[DomainSample],
    cfg: &DdmConfig,
    phase: &str,
    seed: u64,
) -> Result<DdmReport> {
    let per_layer = extract_layer_features(seg, samples)?;
    let mut layers = Vec::new();
    for (k, feats) in per_layer.iter().enumerate() {
        let layer = k + 1;
        let spatial = probe_spatial(feats, cfg, seed ^ (layer as u64))?;
        let latents = throwaway_latents(feats, cfg, seed ^ (layer as u64) << 8)?;
        let latent = probe_latent_vectors(&latents, cfg, seed ^ (layer as u64) << 16)?;
        layers.push(LayerDdm { layer, spatial, latent });
    }
    Ok(DdmReport { phase: phase.to_string(), layers })
}

// ── CSV ──────────────────────────────────────────────────────────────

pub const CSV_HEADER: &str = "phase,layer,spatial_ddm,latent_ddm";

pub fn to_csv(reports: &[DdmReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Config("emit_report needs at least one report".into()));
    }
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        for l in &r.layers {
            out.push_str(&format!("{},{},{:.6},{:.6}\n", r.phase, l.layer, l.spatial, l.latent));
        }
    }
    Ok(out)
}

pub fn from_csv(text: &str) -> Result<Vec<DdmReport>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Config("empty ddm csv".into()))?;
    if header != CSV_HEADER {
        return Err(Error::Config(format!("bad ddm csv header: {header}")));
    }
    let mut reports: Vec<DdmReport> = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Config(format!("bad ddm csv row: {line}")));
        }
        let phase = parts[0];
        let layer: usize = parts[1].parse().map_err(|_| Error::Config(format!("bad layer: {line}")))?;
        let spatial: f64 =
            parts[2].parse().map_err(|_| Error::Config(format!("bad spatial: {line}")))?;
        let latent: f64 =
            parts[3].parse().map_err(|_| Error::Config(format!("bad latent: {line}")))?;
        match reports.last_mut() {
            Some(r) if r.phase == phase => r.layers.push(LayerDdm { layer, spatial, latent }),
            _ => reports.push(DdmReport {
                phase: phase.to_string(),
                layers: vec![LayerDdm { layer, spatial, latent }],
            }),
        }
    }
    Ok(reports)
}

/// Spearman rank correlation between layer index and score.
pub fn spearman_rho(scores: &[f64]) -> f64 {
    let n = scores.len();
    if n < 2 {
        return 0.0;
    }
    let rank = |vals: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..vals.len()).collect();
        idx.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        let mut ranks = vec![0.0; vals.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && vals[idx[j + 1]] == vals[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                ranks[k] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let rx = rank(&xs);
    let ry = rank(scores);
    let mx = rx.iter().sum::<f64>() / n as f64;
    let my = ry.iter().sum::<f64>() / n as f64;
    let cov: f64 = rx.iter().zip(ry.iter()).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}
