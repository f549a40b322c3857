//! Procedural multi-domain dense-labeling benchmark: labeled source split,
//! unlabeled compound target (three style families), a held-out open family,
//! and a four-family probe split over source-like content.
//!
//! Content (shape layout, i.e. phase structure) is drawn independently of
//! style: the same content seed renders identical labels under every style.
//! Styles act multiplicatively/additively at low frequencies — per-channel
//! gains, a smooth illumination field, blur, mild noise — so amplitude
//! carries style while phase carries content by construction.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: u32 = 1;
/// Label value for pixels excluded from cross-entropy.
pub const IGNORE_INDEX: i64 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainTag {
    Source,
    /// Compound sub-domain; the family id is retained for evaluation only
    /// and never shown to the adaptation pipeline.
    Compound(usize),
    Open,
    /// Probe split sample styled with family 0..=3 (0 = source style).
    Ddm(usize),
}

#[derive(Debug, Clone)]
pub struct DomainSample {
    /// [3, H, W] in [0, 1].
    pub image: Tensor,
    /// Dense class ids, row-major H·W. Present on source and on the labeled
    /// evaluation splits.
    pub label: Option<Vec<i64>>,
    pub domain: DomainTag,
    pub seed: u64,
}

/// One style draw.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StyleParams {
    pub gain: [f64; 3],
    pub illum_amp: f64,
    pub illum_fx: f64,
    pub illum_fy: f64,
    pub illum_px: f64,
    pub illum_py: f64,
    pub noise_sigma: f64,
    pub blur_radius: usize,
}

impl StyleParams {
    pub fn identity() -> Self {
        StyleParams {
            gain: [1.0; 3],
            illum_amp: 0.0,
            illum_fx: 1.0,
            illum_fy: 1.0,
            illum_px: 0.0,
            illum_py: 0.0,
            noise_sigma: 0.0,
            blur_radius: 0,
        }
    }
}

/// Closed parameter box one family draws from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleRange {
    pub name: String,
    pub gain_r: [f64; 2],
    pub gain_g: [f64; 2],
    pub gain_b: [f64; 2],
    pub illum_amp: [f64; 2],
    pub noise_sigma: [f64; 2],
    pub blur_radius: usize,
}

impl StyleRange {
    fn draw(&self, rng: &mut Rng) -> StyleParams {
        StyleParams {
            gain: [
                rng.range_f64(self.gain_r[0], self.gain_r[1]),
                rng.range_f64(self.gain_g[0], self.gain_g[1]),
                rng.range_f64(self.gain_b[0], self.gain_b[1]),
            ],
            illum_amp: rng.range_f64(self.illum_amp[0], self.illum_amp[1]),
            illum_fx: 1.0 + rng.below(2) as f64,
            illum_fy: 1.0 + rng.below(2) as f64,
            illum_px: rng.next_f64(),
            illum_py: rng.next_f64(),
            noise_sigma: rng.range_f64(self.noise_sigma[0], self.noise_sigma[1]),
            blur_radius: self.blur_radius,
        }
    }

    fn axis_ranges(&self) -> [[f64; 2]; 5] {
        [self.gain_r, self.gain_g, self.gain_b, self.illum_amp, self.noise_sigma]
    }

    /// True when at least one style axis is fully separated, i.e. the joint
    /// parameter boxes cannot overlap.
    pub fn disjoint_from(&self, other: &StyleRange) -> bool {
        self.axis_ranges()
            .iter()
            .zip(other.axis_ranges().iter())
            .any(|(a, b)| a[1] < b[0] || b[1] < a[0])
            || self.blur_radius != other.blur_radius
    }
}

/// The five family boxes: source, three compound families, one open family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleRanges {
    pub source: StyleRange,
    pub compound: Vec<StyleRange>,
    pub open: StyleRange,
}

impl Default for StyleRanges {
    fn default() -> Self {
        StyleRanges {
            source: StyleRange {
                name: "source".into(),
                gain_r: [0.95, 1.05],
                gain_g: [0.95, 1.05],
                gain_b: [0.95, 1.05],
                illum_amp: [0.00, 0.06],
                noise_sigma: [0.000, 0.006],
                blur_radius: 0,
            },
            compound: vec![
                StyleRange {
                    name: "warm".into(),
                    gain_r: [1.20, 1.40],
                    gain_g: [0.90, 1.05],
                    gain_b: [0.55, 0.75],
                    illum_amp: [0.10, 0.20],
                    noise_sigma: [0.006, 0.012],
                    blur_radius: 0,
                },
                StyleRange {
                    name: "dusk".into(),
                    gain_r: [0.50, 0.68],
                    gain_g: [0.55, 0.75],
                    gain_b: [0.85, 1.05],
                    illum_amp: [0.40, 0.52],
                    noise_sigma: [0.012, 0.020],
                    blur_radius: 1,
                },
                StyleRange {
                    name: "haze".into(),
                    gain_r: [1.30, 1.50],
                    gain_g: [1.30, 1.50],
                    gain_b: [1.30, 1.50],
                    illum_amp: [0.24, 0.34],
                    noise_sigma: [0.000, 0.006],
                    blur_radius: 2,
                },
            ],
            open: StyleRange {
                name: "alien".into(),
                gain_r: [0.30, 0.45],
                gain_g: [1.55, 1.75],
                gain_b: [1.60, 1.85],
                illum_amp: [0.58, 0.70],
                noise_sigma: [0.020, 0.030],
                blur_radius: 3,
            },
        }
    }
}

impl StyleRanges {
    pub fn validate(&self) -> Result<()> {
        let mut all: Vec<&StyleRange> = vec![&self.source];
        all.extend(self.compound.iter());
        all.push(&self.open);
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                if !all[i].disjoint_from(all[j]) {
                    return Err(Error::Config(format!(
                        "style families {} and {} have overlapping parameter boxes",
                        all[i].name, all[j].name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn family(&self, tag: DomainTag) -> &StyleRange {
        match tag {
            DomainTag::Source => &self.source,
            DomainTag::Compound(f) => &self.compound[f],
            DomainTag::Open => &self.open,
            DomainTag::Ddm(0) => &self.source,
            DomainTag::Ddm(f) => &self.compound[f - 1],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub image_size: usize,
    pub class_count: usize,
    pub source_count: usize,
    /// Per compound family.
    pub compound_count: usize,
    pub open_count: usize,
    /// Per probe family.
    pub ddm_count: usize,
    pub style_ranges: StyleRanges,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 64,
            class_count: 4,
            source_count: 400,
            compound_count: 100,
            open_count: 100,
            ddm_count: 64,
            style_ranges: StyleRanges::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 || !self.image_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "image_size {} must be a power of two >= 16",
                self.image_size
            )));
        }
        if !(2..=4).contains(&self.class_count) {
            return Err(Error::Config("class_count must be in 2..=4".into()));
        }
        if self.source_count == 0 || self.compound_count == 0 || self.open_count == 0 {
            return Err(Error::Config("split sizes must be positive".into()));
        }
        self.style_ranges.validate()
    }
}

// ── scene generation ─────────────────────────────────────────────────

fn rotated(px: f64, py: f64, cx: f64, cy: f64, cos_t: f64, sin_t: f64) -> (f64, f64) {
    let dx = px - cx;
    let dy = py - cy;
    (dx * cos_t + dy * sin_t, -dx * sin_t + dy * cos_t)
}

/// Compose the object classes over a textured background. Content only; no
/// style. Returns ([3, S, S] image, row-major labels).
pub fn generate_scene(seed: u64, size: usize, class_count: usize) -> (Tensor, Vec<i64>) {
    let mut rng = Rng::new(seed).derive("scene");
    let s = size as f64;
    let n = size * size;
    let mut img = vec![0.0; 3 * n];
    let mut label = vec![0i64; n];

    // Background: smooth sinusoid mix plus fine per-pixel grain.
    let base = [0.45, 0.50, 0.35];
    let mut waves = Vec::new();
    for _ in 0..4 {
        waves.push((
            rng.range_f64(0.5, 3.0),  // fx cycles
            rng.range_f64(0.5, 3.0),  // fy cycles
            rng.next_f64(),           // phase
            rng.range_f64(0.02, 0.06), // amplitude
        ));
    }
    let mut grain = Rng::new(seed).derive("grain");
    for y in 0..size {
        for x in 0..size {
            let mut v = 0.0;
            for &(fx, fy, ph, a) in &waves {
                v += a
                    * (2.0 * std::f64::consts::PI * (fx * x as f64 / s + fy * y as f64 / s + ph))
                        .sin();
            }
            let g = grain.range_f64(-0.02, 0.02);
            for c in 0..3 {
                img[c * n + y * size + x] = (base[c] + v + g).clamp(0.0, 1.0);
            }
        }
    }

    // One object per non-background class, in seeded z-order.
    let mut order: Vec<usize> = (1..class_count).collect();
    rng.shuffle(&mut order);
    for &cls in &order {
        let cx = rng.range_f64(0.2, 0.8) * s;
        let cy = rng.range_f64(0.2, 0.8) * s;
        let theta = rng.range_f64(0.0, std::f64::consts::PI);
        let (cos_t, sin_t) = (theta.cos(), theta.sin());
        let color_jitter = rng.range_f64(-0.08, 0.08);
        let (color, inside): ([f64; 3], Box<dyn Fn(f64, f64) -> bool>) = match cls {
            1 => {
                let r = rng.range_f64(0.10, 0.18) * s;
                (
                    [0.70, 0.25, 0.20],
                    Box::new(move |px, py| {
                        let dx = px - cx;
                        let dy = py - cy;
                        dx * dx + dy * dy <= r * r
                    }),
                )
            }
            2 => {
                let ex = rng.range_f64(0.08, 0.16) * s;
                let ey = rng.range_f64(0.08, 0.16) * s;
                (
                    [0.20, 0.30, 0.70],
                    Box::new(move |px, py| {
                        let (rx, ry) = rotated(px, py, cx, cy, cos_t, sin_t);
                        rx.abs() <= ex && ry.abs() <= ey
                    }),
                )
            }
            _ => {
                let r = rng.range_f64(0.12, 0.20) * s;
                // Equilateral triangle as three half-plane tests.
                let verts: Vec<(f64, f64)> = (0..3)
                    .map(|k| {
                        let a = theta + k as f64 * 2.0 * std::f64::consts::PI / 3.0;
                        (cx + r * a.cos(), cy + r * a.sin())
                    })
                    .collect();
                (
                    [0.75, 0.70, 0.20],
                    Box::new(move |px, py| {
                        let mut sign = 0.0;
                        for k in 0..3 {
                            let (x1, y1) = verts[k];
                            let (x2, y2) = verts[(k + 1) % 3];
                            let cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
                            if k == 0 {
                                sign = cross.signum();
                            } else if cross.signum() != sign && cross != 0.0 {
                                return false;
                            }
                        }
                        true
                    }),
                )
            }
        };
        for y in 0..size {
            for x in 0..size {
                if inside(x as f64 + 0.5, y as f64 + 0.5) {
                    label[y * size + x] = cls as i64;
                    for c in 0..3 {
                        img[c * n + y * size + x] = (color[c] + color_jitter).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }

    (Tensor::new(&[3, size, size], img).unwrap(), label)
}

// ── style application ────────────────────────────────────────────────

fn box_blur_plane(plane: &mut [f64], size: usize, radius: usize, scratch: &mut [f64]) {
    if radius == 0 {
        return;
    }
    let r = radius as isize;
    let norm = 1.0 / (2 * radius + 1) as f64;
    // Horizontal.
    for y in 0..size {
        for x in 0..size {
            let mut acc = 0.0;
            for d in -r..=r {
                let xi = (x as isize + d).clamp(0, size as isize - 1) as usize;
                acc += plane[y * size + xi];
            }
            scratch[y * size + x] = acc * norm;
        }
    }
    // Vertical.
    for y in 0..size {
        for x in 0..size {
            let mut acc = 0.0;
            for d in -r..=r {
                let yi = (y as isize + d).clamp(0, size as isize - 1) as usize;
                acc += scratch[yi * size + x];
            }
            plane[y * size + x] = acc * norm;
        }
    }
}

/// gain -> illumination -> blur -> noise -> clamp. Labels are never touched.
pub fn apply_style(image: &Tensor, style: &StyleParams, noise_rng: &mut Rng) -> Tensor {
    let shape = image.shape().to_vec();
    let size = shape[2];
    let n = size * size;
    let mut data = image.data().to_vec();
    // Per-channel gain.
    for c in 0..3 {
        for v in &mut data[c * n..(c + 1) * n] {
            *v *= style.gain[c];
        }
    }
    // Smooth dimming field in [1 - amp, 1]: strictly multiplicative at low
    // frequency so it shifts amplitude statistics without clipping content.
    if style.illum_amp > 0.0 {
        for y in 0..size {
            for x in 0..size {
                let sx = (2.0 * std::f64::consts::PI
                    * (style.illum_fx * x as f64 / size as f64 + style.illum_px))
                    .sin();
                let sy = (2.0 * std::f64::consts::PI
                    * (style.illum_fy * y as f64 / size as f64 + style.illum_py))
                    .sin();
                let field = 1.0 - style.illum_amp * (0.5 + 0.5 * sx * sy);
                for c in 0..3 {
                    data[c * n + y * size + x] *= field;
                }
            }
        }
    }
    if style.blur_radius > 0 {
        let mut scratch = vec![0.0; n];
        for c in 0..3 {
            box_blur_plane(&mut data[c * n..(c + 1) * n], size, style.blur_radius, &mut scratch);
        }
    }
    if style.noise_sigma > 0.0 {
        for v in data.iter_mut() {
            *v += style.noise_sigma * noise_rng.next_normal();
        }
    }
    for v in data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::new(&shape, data).unwrap()
}

/// Render one benchmark sample: content from the seed, style drawn from the
/// family box keyed by (seed, family name).
pub fn generate_sample(cfg: &SynthConfig, seed: u64, tag: DomainTag, labeled: bool) -> DomainSample {
    let (base, label) = generate_scene(seed, cfg.image_size, cfg.class_count);
    let family = cfg.style_ranges.family(tag);
    let mut style_rng = Rng::new(seed).derive(&format!("style:{}", family.name));
    let style = family.draw(&mut style_rng);
    let mut noise_rng = Rng::new(seed).derive(&format!("noise:{}", family.name));
    let image = apply_style(&base, &style, &mut noise_rng);
    DomainSample { image, label: labeled.then_some(label), domain: tag, seed }
}

// ── splits ───────────────────────────────────────────────────────────

#[derive(Debug)]
pub struct Dataset {
    pub image_size: usize,
    pub class_count: usize,
    pub source: Vec<DomainSample>,
    pub compound: Vec<DomainSample>,
    pub open: Vec<DomainSample>,
    pub ddm: Vec<DomainSample>,
}

fn split_seeds(root: u64, label: &str, count: usize) -> Vec<u64> {
    let base = Rng::new(root).derive(label);
    (0..count).map(|i| base.derive_u64(i as u64).next_u64_peek()).collect()
}

impl Rng {
    /// Peek the first draw without holding the generator.
    fn next_u64_peek(mut self) -> u64 {
        self.next_u64()
    }
}

/// Deterministic splits. Compound mixes its three families (family ids kept
/// only for evaluation); the probe split renders the same content seeds
/// under all four probe styles.
pub fn make_splits(cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let source_seeds = split_seeds(seed, "split:source", cfg.source_count);
    let open_seeds = split_seeds(seed, "split:open", cfg.open_count);
    let ddm_seeds = split_seeds(seed, "split:ddm", cfg.ddm_count);

    let source: Vec<DomainSample> = source_seeds
        .iter()
        .map(|&s| generate_sample(cfg, s, DomainTag::Source, true))
        .collect();

    let mut compound = Vec::with_capacity(3 * cfg.compound_count);
    for fam in 0..cfg.style_ranges.compound.len() {
        let seeds = split_seeds(seed, &format!("split:compound:{fam}"), cfg.compound_count);
        for s in seeds {
            // Labels retained for evaluation only.
            compound.push(generate_sample(cfg, s, DomainTag::Compound(fam), true));
        }
    }

    let open: Vec<DomainSample> = open_seeds
        .iter()
        .map(|&s| generate_sample(cfg, s, DomainTag::Open, true))
        .collect();

    let mut ddm = Vec::with_capacity(4 * cfg.ddm_count);
    for fam in 0..4 {
        for &s in &ddm_seeds {
            ddm.push(generate_sample(cfg, s, DomainTag::Ddm(fam), true));
        }
    }

    Ok(Dataset {
        image_size: cfg.image_size,
        class_count: cfg.class_count,
        source,
        compound,
        open,
        ddm,
    })
}

// ── persistence ──────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSplit {
    pub name: String,
    pub family: String,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub image_size: usize,
    pub class_count: usize,
    pub splits: Vec<ManifestSplit>,
    pub style_ranges: StyleRanges,
}

fn sample_file(split: &str, family: &str, seed: u64) -> String {
    format!("{split}_{family}_{seed:016x}.astc")
}

fn tag_of(split: &str, family: &str, ranges: &StyleRanges) -> Result<DomainTag> {
    match split {
        "source" => Ok(DomainTag::Source),
        "open" => Ok(DomainTag::Open),
        "compound" => {
            let fam = ranges
                .compound
                .iter()
                .position(|r| r.name == family)
                .ok_or_else(|| Error::Config(format!("unknown compound family {family}")))?;
            Ok(DomainTag::Compound(fam))
        }
        "ddm" => {
            if family == ranges.source.name {
                Ok(DomainTag::Ddm(0))
            } else {
                let fam = ranges
                    .compound
                    .iter()
                    .position(|r| r.name == family)
                    .ok_or_else(|| Error::Config(format!("unknown ddm family {family}")))?;
                Ok(DomainTag::Ddm(fam + 1))
            }
        }
        other => Err(Error::Config(format!("unknown split {other}"))),
    }
}

/// Write the dataset as one record per sample plus a JSON manifest.
pub fn write_dataset(dir: &Path, cfg: &SynthConfig, ds: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir.join("samples"))?;
    let mut splits: Vec<ManifestSplit> = Vec::new();
    let mut emit = |name: &str, family: &str, samples: &[&DomainSample]| -> Result<()> {
        splits.push(ManifestSplit {
            name: name.into(),
            family: family.into(),
            seeds: samples.iter().map(|s| s.seed).collect(),
        });
        for s in samples {
            let path = dir.join("samples").join(sample_file(name, family, s.seed));
            let mut tensors: Vec<(&str, &Tensor)> = vec![("image", &s.image)];
            let label_tensor = s.label.as_ref().map(|l| {
                Tensor::new(
                    &[ds.image_size, ds.image_size],
                    l.iter().map(|&v| v as f64).collect(),
                )
                .unwrap()
            });
            if let Some(lt) = label_tensor.as_ref() {
                tensors.push(("label", lt));
            }
            checkpoint::write_tensors(&path, tensors.into_iter())?;
        }
        Ok(())
    };

    emit("source", &cfg.style_ranges.source.name, &ds.source.iter().collect::<Vec<_>>())?;
    for (fam, range) in cfg.style_ranges.compound.iter().enumerate() {
        let members: Vec<&DomainSample> = ds
            .compound
            .iter()
            .filter(|s| s.domain == DomainTag::Compound(fam))
            .collect();
        emit("compound", &range.name, &members)?;
    }
    emit("open", &cfg.style_ranges.open.name, &ds.open.iter().collect::<Vec<_>>())?;
    for fam in 0..4 {
        let family = if fam == 0 {
            cfg.style_ranges.source.name.clone()
        } else {
            cfg.style_ranges.compound[fam - 1].name.clone()
        };
        let members: Vec<&DomainSample> =
            ds.ddm.iter().filter(|s| s.domain == DomainTag::Ddm(fam)).collect();
        emit("ddm", &family, &members)?;
    }

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        image_size: cfg.image_size,
        class_count: cfg.class_count,
        splits,
        style_ranges: cfg.style_ranges.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::Config(format!("unsupported manifest version {}", m.version)));
    }
    Ok(m)
}

/// Load a persisted dataset back into memory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let m = read_manifest(dir)?;
    let mut ds = Dataset {
        image_size: m.image_size,
        class_count: m.class_count,
        source: Vec::new(),
        compound: Vec::new(),
        open: Vec::new(),
        ddm: Vec::new(),
    };
    for split in &m.splits {
        let tag = tag_of(&split.name, &split.family, &m.style_ranges)?;
        for &seed in &split.seeds {
            let path = dir.join("samples").join(sample_file(&split.name, &split.family, seed));
            let tensors = checkpoint::read_tensors(&path)?;
            let mut image = None;
            let mut label = None;
            for (name, t) in tensors {
                match name.as_str() {
                    "image" => image = Some(t),
                    "label" => {
                        label = Some(t.data().iter().map(|&v| v as i64).collect::<Vec<i64>>())
                    }
                    other => {
                        return Err(Error::Config(format!(
                            "{}: unexpected tensor {other}",
                            path.display()
                        )))
                    }
                }
            }
            let image = image
                .ok_or_else(|| Error::Config(format!("{}: missing image", path.display())))?;
            let sample = DomainSample { image, label, domain: tag, seed };
            match tag {
                DomainTag::Source => ds.source.push(sample),
                DomainTag::Compound(_) => ds.compound.push(sample),
                DomainTag::Open => ds.open.push(sample),
                DomainTag::Ddm(_) => ds.ddm.push(sample),
            }
        }
    }
    Ok(ds)
}

/// FNV over image bits, for duplicate detection.
pub fn image_hash(t: &Tensor) -> u64 {
    t.bit_checksum()
}

/// All split contents must be pairwise distinct images.
pub fn assert_no_duplicates(ds: &Dataset) -> Result<()> {
    let mut seen = BTreeSet::new();
    for s in ds.source.iter().chain(ds.compound.iter()).chain(ds.open.iter()) {
        if !seen.insert(image_hash(&s.image)) {
            return Err(Error::Invariant(format!(
                "duplicate image across splits (seed {:#x})",
                s.seed
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> SynthConfig {
        SynthConfig {
            image_size: 32,
            source_count: 6,
            compound_count: 4,
            open_count: 4,
            ddm_count: 4,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_bit_identical() {
        let cfg = tiny_cfg();
        let a = generate_sample(&cfg, 12345, DomainTag::Compound(1), false);
        let b = generate_sample(&cfg, 12345, DomainTag::Compound(1), false);
        assert_eq!(a.image.bit_checksum(), b.image.bit_checksum());
    }

    #[test]
    fn labels_identical_across_styles() {
        let cfg = tiny_cfg();
        let src = generate_sample(&cfg, 777, DomainTag::Source, true);
        let warm = generate_sample(&cfg, 777, DomainTag::Compound(0), true);
        let open = generate_sample(&cfg, 777, DomainTag::Open, true);
        assert_eq!(src.label, warm.label);
        assert_eq!(src.label, open.label);
        // but the pixels differ
        assert_ne!(src.image.bit_checksum(), warm.image.bit_checksum());
    }

    #[test]
    fn background_is_exact_complement() {
        let (_, label) = generate_scene(9, 32, 4);
        let histogram = label.iter().fold([0usize; 4], |mut h, &l| {
            h[l as usize] += 1;
            h
        });
        assert_eq!(histogram.iter().sum::<usize>(), 32 * 32);
    }

    #[test]
    fn label_histogram_covers_classes() {
        // Default-size scenes must show at least 3 classes almost always.
        let mut covered = 0;
        let total = 200;
        for seed in 0..total {
            let (_, label) = generate_scene(seed as u64, 64, 4);
            let mut present = [false; 4];
            for &l in &label {
                present[l as usize] = true;
            }
            if present.iter().filter(|&&p| p).count() >= 3 {
                covered += 1;
            }
        }
        assert!(
            covered as f64 >= 0.95 * total as f64,
            "{covered}/{total} scenes with >= 3 classes"
        );
    }

    #[test]
    fn identity_style_is_noop() {
        let (img, _) = generate_scene(4, 32, 4);
        let styled = apply_style(&img, &StyleParams::identity(), &mut Rng::new(0));
        assert_eq!(img.bit_checksum(), styled.bit_checksum());
    }

    #[test]
    fn style_shifts_low_frequency_amplitude() {
        // Every compound family must shift the per-channel low-frequency
        // amplitude mass (DC + first harmonics) by more than 10% vs source.
        let cfg = tiny_cfg();
        let size = cfg.image_size;
        let low = |t: &Tensor, c: usize| -> f64 {
            let n = size * size;
            let p = Tensor::new(&[size, size], t.data()[c * n..(c + 1) * n].to_vec()).unwrap();
            let spec = crate::spectral::fft2(&p).unwrap();
            let mut acc = 0.0;
            for u in 0..size {
                for v in 0..size {
                    let fu = u.min(size - u);
                    let fv = v.min(size - v);
                    if fu <= 1 && fv <= 1 {
                        acc += spec.amplitude.data()[u * size + v];
                    }
                }
            }
            acc
        };
        for fam in 1..4usize {
            let mut shift_sum = 0.0;
            let count = 6;
            for seed in 0..count {
                let a = generate_sample(&cfg, seed, DomainTag::Ddm(0), false);
                let b = generate_sample(&cfg, seed, DomainTag::Ddm(fam), false);
                let mut per_chan = 0.0;
                for c in 0..3 {
                    let la = low(&a.image, c);
                    per_chan += (la - low(&b.image, c)).abs() / la;
                }
                shift_sum += per_chan / 3.0;
            }
            let mean_shift = shift_sum / count as f64;
            assert!(
                mean_shift > 0.10,
                "family {fam}: low-frequency amplitude shift {mean_shift:.3}"
            );
        }
    }

    #[test]
    fn family_boxes_are_disjoint() {
        StyleRanges::default().validate().unwrap();
    }

    #[test]
    fn open_family_outside_compound_ranges() {
        let ranges = StyleRanges::default();
        for fam in &ranges.compound {
            assert!(ranges.open.disjoint_from(fam), "open overlaps {}", fam.name);
        }
        assert!(ranges.open.disjoint_from(&ranges.source));
    }

    #[test]
    fn splits_have_no_duplicates_and_right_sizes() {
        let cfg = tiny_cfg();
        let ds = make_splits(&cfg, 99).unwrap();
        assert_eq!(ds.source.len(), 6);
        assert_eq!(ds.compound.len(), 12);
        assert_eq!(ds.open.len(), 4);
        assert_eq!(ds.ddm.len(), 16);
        assert_no_duplicates(&ds).unwrap();
        // ddm: same content seeds across the four families
        let seeds0: Vec<u64> = ds
            .ddm
            .iter()
            .filter(|s| s.domain == DomainTag::Ddm(0))
            .map(|s| s.seed)
            .collect();
        let seeds3: Vec<u64> = ds
            .ddm
            .iter()
            .filter(|s| s.domain == DomainTag::Ddm(3))
            .map(|s| s.seed)
            .collect();
        assert_eq!(seeds0, seeds3);
    }

    #[test]
    fn dataset_roundtrip_is_bit_identical() {
        let cfg = tiny_cfg();
        let ds = make_splits(&cfg, 7).unwrap();
        let dir = std::env::temp_dir().join("astseg_synthdata_roundtrip");
        std::fs::remove_dir_all(&dir).ok();
        write_dataset(&dir, &cfg, &ds).unwrap();
        let back = load_dataset(&dir).unwrap();
        assert_eq!(ds.source.len(), back.source.len());
        for (a, b) in ds.source.iter().zip(back.source.iter()) {
            assert_eq!(a.image.bit_checksum(), b.image.bit_checksum());
            assert_eq!(a.label, b.label);
            assert_eq!(a.domain, b.domain);
        }
        for (a, b) in ds.ddm.iter().zip(back.ddm.iter()) {
            assert_eq!(a.image.bit_checksum(), b.image.bit_checksum());
            assert_eq!(a.domain, b.domain);
        }
        // Regeneration from the manifest alone reproduces the same bits.
        let m = read_manifest(&dir).unwrap();
        let regen = generate_sample(
            &cfg,
            m.splits[0].seeds[0],
            DomainTag::Source,
            true,
        );
        assert_eq!(regen.image.bit_checksum(), ds.source[0].image.bit_checksum());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn channel_mean_linear_probe_separates_ddm_domains() {
        // Domain separability precondition: multinomial logistic regression
        // on raw-pixel channel means must distinguish the 4 probe domains.
        let cfg = SynthConfig { image_size: 32, ddm_count: 30, ..tiny_cfg() };
        let ds = make_splits(&cfg, 3).unwrap();
        let feats: Vec<([f64; 3], usize)> = ds
            .ddm
            .iter()
            .map(|s| {
                let n = cfg.image_size * cfg.image_size;
                let mut mean = [0.0; 3];
                for c in 0..3 {
                    mean[c] = s.image.data()[c * n..(c + 1) * n].iter().sum::<f64>() / n as f64;
                }
                let fam = match s.domain {
                    DomainTag::Ddm(f) => f,
                    _ => unreachable!(),
                };
                (mean, fam)
            })
            .collect();
        // 80/20 by position within each family block (seeded order).
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, f) in feats.iter().enumerate() {
            if i % 5 == 4 {
                test.push(*f);
            } else {
                train.push(*f);
            }
        }
        // Multinomial logistic regression, plain gradient descent.
        let mut w = [[0.0f64; 4]; 4]; // [feature+bias][class]
        for _ in 0..3000 {
            let mut gw = [[0.0f64; 4]; 4];
            for &(x, y) in &train {
                let xs = [x[0], x[1], x[2], 1.0];
                let mut logits = [0.0; 4];
                for cls in 0..4 {
                    for (f, &xv) in xs.iter().enumerate() {
                        logits[cls] += w[f][cls] * xv;
                    }
                }
                let maxv = logits.iter().cloned().fold(f64::MIN, f64::max);
                let exps: Vec<f64> = logits.iter().map(|v| (v - maxv).exp()).collect();
                let denom: f64 = exps.iter().sum();
                for cls in 0..4 {
                    let p = exps[cls] / denom;
                    let t = if cls == y { 1.0 } else { 0.0 };
                    for (f, &xv) in xs.iter().enumerate() {
                        gw[f][cls] += (p - t) * xv;
                    }
                }
            }
            for f in 0..4 {
                for cls in 0..4 {
                    w[f][cls] -= 0.5 / train.len() as f64 * gw[f][cls];
                }
            }
        }
        let mut correct = 0;
        for &(x, y) in &test {
            let xs = [x[0], x[1], x[2], 1.0];
            let mut logits = [0.0; 4];
            for cls in 0..4 {
                for (f, &xv) in xs.iter().enumerate() {
                    logits[cls] += w[f][cls] * xv;
                }
            }
            let pred = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if pred == y {
                correct += 1;
            }
        }
        let acc = correct as f64 / test.len() as f64;
        assert!(acc > 0.9, "channel-mean probe accuracy {acc:.3}");
    }
}
