//! Toy dense-prediction CNN split into early layers (phi), middle layers
//! (psi) and a classifier head, with latent-manipulation sites after phi and
//! after psi. No batch normalization anywhere: implicit normalization would
//! confound both the discriminability study and the prototype normalization.

use serde::{Deserialize, Serialize};

use crate::ast::AstModule;
use crate::error::{Error, Result};
use crate::layers::ConvLayer;
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentorConfig {
    pub in_channels: usize,
    pub class_count: usize,
    /// Channel widths of the phi blocks; the first two blocks use stride 2,
    /// the rest stride 1, all 3x3 convs with pad 1.
    pub phi_channels: Vec<usize>,
    /// Channel widths of the psi blocks; all stride 1 so the normalization
    /// site sees the same grid.
    pub psi_channels: Vec<usize>,
}

impl Default for SegmentorConfig {
    fn default() -> Self {
        SegmentorConfig {
            in_channels: 3,
            class_count: 4,
            phi_channels: vec![16, 24, 32],
            psi_channels: vec![48, 64],
        }
    }
}

impl SegmentorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phi_channels.is_empty() || self.psi_channels.is_empty() {
            return Err(Error::Config("segmentor needs at least one phi and one psi block".into()));
        }
        if self.phi_channels.iter().chain(self.psi_channels.iter()).any(|&c| c == 0) {
            return Err(Error::Config("segmentor channel widths must be positive".into()));
        }
        if self.class_count < 2 {
            return Err(Error::Config("segmentor needs at least two classes".into()));
        }
        Ok(())
    }

    /// Simulation site: index (1-based conv block) of the last phi block.
    pub fn layer_l(&self) -> usize {
        self.phi_channels.len()
    }

    /// Normalization site: index of the last psi block.
    pub fn layer_l_prime(&self) -> usize {
        self.phi_channels.len() + self.psi_channels.len()
    }

    pub fn channels_at_l(&self) -> usize {
        *self.phi_channels.last().unwrap()
    }

    pub fn channels_at_l_prime(&self) -> usize {
        *self.psi_channels.last().unwrap()
    }
}

/// Latent behavior at the simulation site (after phi).
pub enum CsSite {
    /// Feature passes straight through.
    Off,
    /// Auto-encode: own latent, no manipulation.
    Ae,
    /// Replace the latent with a partner's, per plane ([N·C, d_latent]).
    Swap(Var),
}

/// Latent behavior at the normalization site (after psi).
pub enum DnSite<'a> {
    Off,
    Ae,
    /// Replace every sample's latent with the fixed prototype [C, d_latent].
    Prototype(&'a Tensor),
}

pub struct Segmentor {
    pub cfg: SegmentorConfig,
    phi: Vec<ConvLayer>,
    psi: Vec<ConvLayer>,
    head: ConvLayer,
}

impl Segmentor {
    pub fn new(cfg: &SegmentorConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut phi = Vec::new();
        let mut c_in = cfg.in_channels;
        for (i, &c_out) in cfg.phi_channels.iter().enumerate() {
            let stride = if i < 2 { 2 } else { 1 };
            phi.push(ConvLayer::new(c_in, c_out, 3, stride, 1, rng));
            c_in = c_out;
        }
        let mut psi = Vec::new();
        for &c_out in &cfg.psi_channels {
            psi.push(ConvLayer::new(c_in, c_out, 3, 1, 1, rng));
            c_in = c_out;
        }
        let head = ConvLayer::new(c_in, cfg.class_count, 1, 1, 0, rng);
        Ok(Segmentor { cfg: cfg.clone(), phi, psi, head })
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.phi.iter().enumerate() {
            out.extend(layer.params(&format!("phi/{i}")));
        }
        for (i, layer) in self.psi.iter().enumerate() {
            out.extend(layer.params(&format!("psi/{i}")));
        }
        out.extend(self.head.params("head"));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.phi.iter_mut().enumerate() {
            out.extend(layer.params_mut(&format!("phi/{i}")));
        }
        for (i, layer) in self.psi.iter_mut().enumerate() {
            out.extend(layer.params_mut(&format!("psi/{i}")));
        }
        out.extend(self.head.params_mut("head"));
        out
    }

    pub fn set_requires_grad(&mut self, value: bool) {
        for (_, t) in self.params_mut() {
            t.requires_grad = value;
        }
    }

    /// Early stage: two stride-2 conv+ReLU blocks, then stride-1 blocks.
    pub fn forward_phi(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.phi.iter().enumerate() {
            h = layer.forward(tape, h, &format!("phi/{i}"))?;
            h = tape.relu(h)?;
        }
        Ok(h)
    }

    /// Middle stage, resolution preserving.
    pub fn forward_psi(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let mut h = h;
        for (i, layer) in self.psi.iter().enumerate() {
            h = layer.forward(tape, h, &format!("psi/{i}"))?;
            h = tape.relu(h)?;
        }
        Ok(h)
    }

    /// 1x1 conv to class logits, then upsample to the requested resolution.
    pub fn forward_head(&self, tape: &mut Tape, h: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let logits = self.head.forward(tape, h, "head")?;
        tape.bilinear_resize(logits, out_h, out_w)
    }

    fn site(
        tape: &mut Tape,
        h: Var,
        module: Option<&AstModule>,
        prefix: &str,
        swap: Option<Var>,
        proto: Option<&Tensor>,
        ae: bool,
    ) -> Result<Var> {
        let module = module.ok_or_else(|| {
            Error::Config(format!("{prefix}: AST module required for this mode"))
        })?;
        let shape = tape.shape(h).to_vec();
        let (n, c, hh, ww) = (shape[0], shape[1], shape[2], shape[3]);
        let planes = tape.reshape(h, &[n * c, hh, ww])?;
        let out = if let Some(z) = swap {
            let zs = tape.shape(z).to_vec();
            if zs != [n * c, module.cfg.d_latent] {
                return Err(Error::Config(format!(
                    "{prefix}: partner latent shape {zs:?}, expected [{}, {}]",
                    n * c,
                    module.cfg.d_latent
                )));
            }
            module.apply_planes(tape, planes, z, prefix)?
        } else if let Some(p) = proto {
            if p.shape() != [c, module.cfg.d_latent] {
                return Err(Error::Config(format!(
                    "{prefix}: prototype shape {:?}, expected [{c}, {}]",
                    p.shape(),
                    module.cfg.d_latent
                )));
            }
            // Tile the fixed prototype over the batch as a constant.
            let mut tiled = Vec::with_capacity(n * p.numel());
            for _ in 0..n {
                tiled.extend_from_slice(p.data());
            }
            let z = tape.leaf(&Tensor::new(&[n * c, module.cfg.d_latent], tiled)?);
            module.apply_planes(tape, planes, z, prefix)?
        } else if ae {
            module.forward_ae(tape, planes, prefix)?
        } else {
            planes
        };
        tape.reshape(out, &[n, c, hh, ww])
    }

    /// Full composition with the selected latent behavior at both sites.
    /// `Swap` needs a partner latent; `Prototype` needs the fixed latent;
    /// `Off` at both sites is the plain network.
    pub fn forward_full(
        &self,
        tape: &mut Tape,
        x: Var,
        cs: CsSite,
        dn: DnSite<'_>,
        ast_cs: Option<&AstModule>,
        ast_dn: Option<&AstModule>,
    ) -> Result<Var> {
        let xs = tape.shape(x).to_vec();
        let (img_h, img_w) = (xs[2], xs[3]);
        let h_l = self.forward_phi(tape, x)?;
        let h_l = match cs {
            CsSite::Off => h_l,
            CsSite::Ae => Self::site(tape, h_l, ast_cs, "ast_cs", None, None, true)?,
            CsSite::Swap(z) => Self::site(tape, h_l, ast_cs, "ast_cs", Some(z), None, false)?,
        };
        let h_lp = self.forward_psi(tape, h_l)?;
        let h_lp = match dn {
            DnSite::Off => h_lp,
            DnSite::Ae => Self::site(tape, h_lp, ast_dn, "ast_dn", None, None, true)?,
            DnSite::Prototype(p) => {
                Self::site(tape, h_lp, ast_dn, "ast_dn", None, Some(p), false)?
            }
        };
        self.forward_head(tape, h_lp, img_h, img_w)
    }

    /// Per-block features of the plain composition, for layer-wise probing.
    /// Returns one [N, C_k, H_k, W_k] var per conv block, phi then psi.
    pub fn forward_layerwise(&self, tape: &mut Tape, x: Var) -> Result<Vec<Var>> {
        let mut feats = Vec::new();
        let mut h = x;
        for (i, layer) in self.phi.iter().enumerate() {
            h = layer.forward(tape, h, &format!("phi/{i}"))?;
            h = tape.relu(h)?;
            feats.push(h);
        }
        for (i, layer) in self.psi.iter().enumerate() {
            h = layer.forward(tape, h, &format!("psi/{i}"))?;
            h = tape.relu(h)?;
            feats.push(h);
        }
        Ok(feats)
    }
}
