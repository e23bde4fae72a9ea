//! Toy-scale panoramic distance model built around spherical cross-attention.
//!
//! Pipeline: patchify → linear patch embedding → `linear_blocks` residual
//! tanh blocks → `cross_blocks` residual cross-attention blocks (queries from
//! the image tokens, keys/values from the fixed spherical embedding) →
//! per-token scalar head → bilinear upsampling to pixels → softplus.
//!
//! Everything runs in `f64` with hand-written backward passes so that
//! analytic gradients can be checked against finite differences.

mod attention;
mod gradcheck;
mod train;

pub use attention::{cross_attention_backward, softmax_rows, sphere_cross_attention, AttentionCache, AttentionGrads};
pub use gradcheck::{finite_difference_gradient, gradient_check, GradCheckReport, GradLoss, GroupCheck};
pub use train::{train_sgd, SyntheticTask, TrainLog};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::{build_sphere_embedding, SphericalEmbedding};
use crate::error::{Error, Result};
use crate::geometry::ErpGrid;
use crate::numeric::{sigmoid, softplus};
use crate::raster::{ErpRaster, RasterKind};

/// Model hyper-parameters. Parsed from `key = value` text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub patch: usize,
    pub dim: usize,
    pub key_dim: usize,
    pub linear_blocks: usize,
    pub cross_blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch: 8,
            dim: 16,
            key_dim: 8,
            linear_blocks: 2,
            cross_blocks: 2,
        }
    }
}

impl ModelConfig {
    /// Parses `key = value` lines; `#` starts a comment. Missing keys keep
    /// their defaults; `key_dim` defaults to `dim / 2` when only `dim` is set.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut key_dim_set = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let value: usize = value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("line {}: `{}` is not a count", lineno + 1, value.trim())))?;
            match key.trim() {
                "patch" => cfg.patch = value,
                "dim" => cfg.dim = value,
                "key_dim" => {
                    cfg.key_dim = value;
                    key_dim_set = true;
                }
                "linear_blocks" => cfg.linear_blocks = value,
                "cross_blocks" => cfg.cross_blocks = value,
                other => return Err(Error::Config(format!("line {}: unknown key `{other}`", lineno + 1))),
            }
        }
        if !key_dim_set {
            cfg.key_dim = (cfg.dim / 2).max(1);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 {
            return Err(Error::Config("patch size must be positive".into()));
        }
        if self.dim == 0 || !self.dim.is_multiple_of(4) {
            return Err(Error::Config(format!("dim {} must be a positive multiple of 4", self.dim)));
        }
        if self.key_dim == 0 {
            return Err(Error::Config("key_dim must be at least 1".into()));
        }
        Ok(())
    }

    /// Patch grid `(H', W')` for an image, checking divisibility.
    pub fn patch_grid(&self, grid: &ErpGrid) -> Result<(usize, usize)> {
        let (h, w) = (grid.height_px(), grid.width_px());
        if h % self.patch != 0 || w % self.patch != 0 {
            return Err(Error::Config(format!(
                "image {w}x{h} is not divisible by patch size {}",
                self.patch
            )));
        }
        Ok((h / self.patch, w / self.patch))
    }
}

/// Image tokens, `N × D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap(pub DMatrix<f64>);

impl FeatureMap {
    pub fn tokens(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearBlockParams {
    pub w: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossBlockParams {
    pub w_q: DMatrix<f64>,
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
    pub w_o: DMatrix<f64>,
}

/// All learnable parameters. The same type carries gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyAttentionParams {
    /// `(P²·C) × D`
    pub patch_w: DMatrix<f64>,
    /// `1 × D`
    pub patch_b: DMatrix<f64>,
    pub linear: Vec<LinearBlockParams>,
    pub cross: Vec<CrossBlockParams>,
    /// `D × 1`
    pub head_w: DMatrix<f64>,
    /// `1 × 1`
    pub head_b: DMatrix<f64>,
}

fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
}

impl ToyAttentionParams {
    /// Seeded Xavier-uniform weights, zero biases.
    pub fn init(config: &ModelConfig, channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.dim;
        let dk = config.key_dim;
        let patch_in = config.patch * config.patch * channels;
        let patch_w = xavier(patch_in, d, &mut rng);
        let linear = (0..config.linear_blocks)
            .map(|_| LinearBlockParams {
                w: xavier(d, d, &mut rng),
                b: DMatrix::zeros(1, d),
            })
            .collect();
        let cross = (0..config.cross_blocks)
            .map(|_| CrossBlockParams {
                w_q: xavier(d, dk, &mut rng),
                w_k: xavier(d, dk, &mut rng),
                w_v: xavier(d, dk, &mut rng),
                w_o: xavier(dk, d, &mut rng),
            })
            .collect();
        let head_w = xavier(d, 1, &mut rng);
        Self {
            patch_w,
            patch_b: DMatrix::zeros(1, d),
            linear,
            cross,
            head_w,
            head_b: DMatrix::zeros(1, 1),
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let z = |m: &DMatrix<f64>| DMatrix::zeros(m.nrows(), m.ncols());
        Self {
            patch_w: z(&self.patch_w),
            patch_b: z(&self.patch_b),
            linear: self.linear.iter().map(|l| LinearBlockParams { w: z(&l.w), b: z(&l.b) }).collect(),
            cross: self
                .cross
                .iter()
                .map(|c| CrossBlockParams {
                    w_q: z(&c.w_q),
                    w_k: z(&c.w_k),
                    w_v: z(&c.w_v),
                    w_o: z(&c.w_o),
                })
                .collect(),
            head_w: z(&self.head_w),
            head_b: z(&self.head_b),
        }
    }

    /// Named parameter groups in a fixed order.
    pub fn groups(&self) -> Vec<(String, &DMatrix<f64>)> {
        let mut out = vec![("patch_w".to_string(), &self.patch_w), ("patch_b".to_string(), &self.patch_b)];
        for (i, l) in self.linear.iter().enumerate() {
            out.push((format!("linear{i}_w"), &l.w));
            out.push((format!("linear{i}_b"), &l.b));
        }
        for (i, c) in self.cross.iter().enumerate() {
            out.push((format!("cross{i}_wq"), &c.w_q));
            out.push((format!("cross{i}_wk"), &c.w_k));
            out.push((format!("cross{i}_wv"), &c.w_v));
            out.push((format!("cross{i}_wo"), &c.w_o));
        }
        out.push(("head_w".to_string(), &self.head_w));
        out.push(("head_b".to_string(), &self.head_b));
        out
    }

    /// Mutable view of the groups, same order as [`Self::groups`].
    pub fn groups_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        let mut out = vec![&mut self.patch_w, &mut self.patch_b];
        for l in &mut self.linear {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        for c in &mut self.cross {
            out.push(&mut c.w_q);
            out.push(&mut c.w_k);
            out.push(&mut c.w_v);
            out.push(&mut c.w_o);
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.groups().iter().map(|(_, m)| m.len()).sum()
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        let others: Vec<DMatrix<f64>> = other.groups().into_iter().map(|(_, m)| m.clone()).collect();
        for (mine, theirs) in self.groups_mut().into_iter().zip(others) {
            *mine += theirs * alpha;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|(_, m)| m.iter().all(|v| v.is_finite()))
    }
}

/// Flattens each `P×P×C` patch (row, column, channel order) into a row.
/// Tokens are ordered row-major over the patch grid.
pub fn patch_matrix(img: &ErpRaster, patch: usize) -> Result<DMatrix<f64>> {
    let grid = img.grid();
    let cfg = ModelConfig { patch, ..ModelConfig::default() };
    let (hp, wp) = cfg.patch_grid(&grid)?;
    let c = img.channels();
    let width = patch * patch * c;
    let mut x = DMatrix::zeros(hp * wp, width);
    for j in 0..hp {
        for i in 0..wp {
            let token = j * wp + i;
            let mut k = 0;
            for dy in 0..patch {
                for dx in 0..patch {
                    for v in img.pixel(i * patch + dx, j * patch + dy) {
                        x[(token, k)] = *v;
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(x)
}

/// Patch embedding: flattened patches times `patch_w` plus `patch_b`.
pub fn patchify(img: &ErpRaster, patch: usize, params: &ToyAttentionParams) -> Result<FeatureMap> {
    let x = patch_matrix(img, patch)?;
    if x.ncols() != params.patch_w.nrows() {
        return Err(Error::Config(format!(
            "patch width {} does not match patch_w rows {}",
            x.ncols(),
            params.patch_w.nrows()
        )));
    }
    Ok(FeatureMap(affine(&x, &params.patch_w, &params.patch_b)))
}

fn affine(x: &DMatrix<f64>, w: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x * w;
    for mut row in out.row_iter_mut() {
        row += b.row(0);
    }
    out
}

fn column_sums(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(1, m.ncols(), |_, c| m.column(c).sum())
}

/// Bilinear patch-grid → pixel-grid interpolation (azimuth wraps, polar
/// clamps), stored as four taps per pixel so the transpose is cheap.
#[derive(Debug, Clone)]
struct Upsampler {
    taps: Vec<[(usize, f64); 4]>,
    tokens: usize,
}

impl Upsampler {
    fn new(grid: &ErpGrid, patch: usize, hp: usize, wp: usize) -> Self {
        let mut taps = Vec::with_capacity(grid.pixel_count());
        for y in 0..grid.height_px() {
            let fy = ((y as f64 + 0.5) / patch as f64 - 0.5).clamp(0.0, (hp - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(hp - 1);
            let ty = fy - y0 as f64;
            for x in 0..grid.width_px() {
                let fx = (x as f64 + 0.5) / patch as f64 - 0.5;
                let x0f = fx.floor();
                let tx = fx - x0f;
                let x0 = (x0f as i64).rem_euclid(wp as i64) as usize;
                let x1 = (x0 + 1) % wp;
                taps.push([
                    (y0 * wp + x0, (1.0 - tx) * (1.0 - ty)),
                    (y0 * wp + x1, tx * (1.0 - ty)),
                    (y1 * wp + x0, (1.0 - tx) * ty),
                    (y1 * wp + x1, tx * ty),
                ]);
            }
        }
        Self { taps, tokens: hp * wp }
    }

    fn apply(&self, tokens: &[f64]) -> Vec<f64> {
        self.taps.iter().map(|t| t.iter().map(|(i, w)| tokens[*i] * w).sum()).collect()
    }

    fn transpose_apply(&self, pixels: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.tokens];
        for (t, g) in self.taps.iter().zip(pixels) {
            for (i, w) in t {
                out[*i] += w * g;
            }
        }
        out
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    patches: DMatrix<f64>,
    /// Input of each block (linear blocks first, then cross blocks) and the
    /// final features.
    block_inputs: Vec<DMatrix<f64>>,
    linear_act: Vec<DMatrix<f64>>,
    attention: Vec<AttentionCache>,
    logits: Vec<f64>,
}

impl ForwardTape {
    /// Attention caches of the cross blocks, in order.
    pub fn attention(&self) -> &[AttentionCache] {
        &self.attention
    }
}

/// The toy model bound to one image size.
#[derive(Debug, Clone)]
pub struct SphereVit {
    config: ModelConfig,
    grid: ErpGrid,
    channels: usize,
    params: ToyAttentionParams,
    embedding: SphericalEmbedding,
    upsampler: Upsampler,
}

impl SphereVit {
    /// Builds a seeded model for `channels`-channel images on `grid`.
    pub fn new(config: ModelConfig, grid: ErpGrid, channels: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ToyAttentionParams::init(&config, channels, seed);
        Self::with_params(config, grid, channels, params)
    }

    pub fn with_params(config: ModelConfig, grid: ErpGrid, channels: usize, params: ToyAttentionParams) -> Result<Self> {
        config.validate()?;
        let (hp, wp) = config.patch_grid(&grid)?;
        let embedding = build_sphere_embedding(hp, wp, config.dim)?;
        let expected = ToyAttentionParams::init(&config, channels, 0);
        let shapes = |p: &ToyAttentionParams| p.groups().iter().map(|(_, m)| m.shape()).collect::<Vec<_>>();
        if shapes(&params) != shapes(&expected) {
            return Err(Error::Config("parameter shapes do not match the configuration".into()));
        }
        Ok(Self {
            config,
            grid,
            channels,
            params,
            embedding,
            upsampler: Upsampler::new(&grid, config.patch, hp, wp),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn grid(&self) -> ErpGrid {
        self.grid
    }

    pub fn params(&self) -> &ToyAttentionParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ToyAttentionParams {
        &mut self.params
    }

    pub fn embedding(&self) -> &SphericalEmbedding {
        &self.embedding
    }

    fn check_input(&self, img: &ErpRaster) -> Result<()> {
        if img.grid() != self.grid || img.channels() != self.channels {
            return Err(Error::Config(format!(
                "model expects {}x{}x{} input, got {}x{}x{}",
                self.grid.width_px(),
                self.grid.height_px(),
                self.channels,
                img.width(),
                img.height(),
                img.channels()
            )));
        }
        Ok(())
    }

    /// Predicted distance per pixel (strictly positive) and the tape.
    pub fn forward_with_tape(&self, img: &ErpRaster) -> Result<(Vec<f64>, ForwardTape)> {
        self.check_input(img)?;
        let p = &self.params;
        let patches = patch_matrix(img, self.config.patch)?;
        let mut z = affine(&patches, &p.patch_w, &p.patch_b);
        let mut block_inputs = Vec::with_capacity(p.linear.len() + p.cross.len() + 1);
        let mut linear_act = Vec::with_capacity(p.linear.len());
        for block in &p.linear {
            let act = affine(&z, &block.w, &block.b).map(f64::tanh);
            block_inputs.push(z.clone());
            z += &act;
            linear_act.push(act);
        }
        let e = self.embedding.matrix();
        let mut attention = Vec::with_capacity(p.cross.len());
        for block in &p.cross {
            let cache = sphere_cross_attention(&z, e, &block.w_q, &block.w_k, &block.w_v)?;
            block_inputs.push(z.clone());
            z += &cache.output * &block.w_o;
            attention.push(cache);
        }
        let head = affine(&z, &p.head_w, &p.head_b);
        block_inputs.push(z);
        let logits = self.upsampler.apply(head.as_slice());
        let out = logits.iter().map(|v| softplus(*v)).collect();
        Ok((
            out,
            ForwardTape {
                patches,
                block_inputs,
                linear_act,
                attention,
                logits,
            },
        ))
    }

    /// Distance raster predicted for `img`.
    pub fn forward(&self, img: &ErpRaster) -> Result<ErpRaster> {
        let (out, _) = self.forward_with_tape(img)?;
        ErpRaster::new(self.grid, RasterKind::Distance, 1, out)
    }

    /// Parameter gradients given `∂L/∂output`.
    pub fn backward(&self, tape: &ForwardTape, grad_out: &[f64]) -> ToyAttentionParams {
        let p = &self.params;
        let mut g = p.zeros_like();
        let grad_logits: Vec<f64> = grad_out.iter().zip(&tape.logits).map(|(go, y)| go * sigmoid(*y)).collect();
        let grad_head = DMatrix::from_column_slice(self.upsampler.tokens, 1, &self.upsampler.transpose_apply(&grad_logits));

        let n_lin = p.linear.len();
        let z_final = tape.block_inputs.last().expect("final features");
        g.head_w = z_final.tr_mul(&grad_head);
        g.head_b = column_sums(&grad_head);
        let mut grad_z = &grad_head * p.head_w.transpose();

        let e = self.embedding.matrix();
        for (k, block) in p.cross.iter().enumerate().rev() {
            let cache = &tape.attention[k];
            let z_in = &tape.block_inputs[n_lin + k];
            g.cross[k].w_o = cache.output.tr_mul(&grad_z);
            let grad_out = &grad_z * block.w_o.transpose();
            let ag = cross_attention_backward(cache, z_in, e, &block.w_q, &grad_out);
            g.cross[k].w_q = ag.w_q;
            g.cross[k].w_k = ag.w_k;
            g.cross[k].w_v = ag.w_v;
            grad_z += ag.z;
        }
        for (k, block) in p.linear.iter().enumerate().rev() {
            let act = &tape.linear_act[k];
            let z_in = &tape.block_inputs[k];
            let grad_pre = grad_z.zip_map(act, |gz, a| gz * (1.0 - a * a));
            g.linear[k].w = z_in.tr_mul(&grad_pre);
            g.linear[k].b = column_sums(&grad_pre);
            grad_z += &grad_pre * block.w.transpose();
        }
        g.patch_w = tape.patches.tr_mul(&grad_z);
        g.patch_b = column_sums(&grad_z);
        g
    }
}

/// One-shot forward: seeded model, distance output.
pub fn forward(img: &ErpRaster, config: &ModelConfig, seed: u64) -> Result<ErpRaster> {
    SphereVit::new(*config, img.grid(), img.channels(), seed)?.forward(img)
}
