//! The full network: strided conv front-end, class token + positional
//! embeddings, a stack of bidirectional selective-state-space encoder
//! blocks, and a class-token classification head.
//!
//! Block layout is pre-norm: each block normalizes its input, runs the
//! mixer, and adds the result to the raw input, so "residual addition
//! followed by normalization" happens sequentially between stages (the
//! next block's entry norm, or the final norm, consumes the sum). The two
//! scan directions keep disjoint parameters; their outputs are summed
//! as-is, with no halving, before gating.

use thiserror::Error;

use crate::rng::{rng_from_seed, SeedRng};
use crate::ssm::{selective_parameterize, selective_scan, SsmParams};
use crate::tensor::{Graph, Init, Tensor, TensorError, TensorResult};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("expected signal shape [{want_ch}, {want_len}], got {got:?}")]
    BadSignal {
        want_ch: usize,
        want_len: usize,
        got: Vec<usize>,
    },
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type ModelResult<T> = Result<T, ModelError>;

/// Architecture hyperparameters. Defaults are the full-scale network:
/// 12-lead input at 8192 samples, 384-wide tokens, 16 encoder blocks,
/// 26 output classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub seq_len: usize,
    pub d_model: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub conv_padding: usize,
    pub n_blocks: usize,
    /// States per channel (N).
    pub state_dim: usize,
    /// Inner width multiplier (E): the mixer runs at `E * d_model`.
    pub expand: usize,
    /// Depthwise causal conv width inside each direction (K_b).
    pub dw_kernel: usize,
    pub n_classes: usize,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 12,
            seq_len: 8192,
            d_model: 384,
            conv_kernel: 16,
            conv_stride: 8,
            conv_padding: 0,
            n_blocks: 16,
            state_dim: 16,
            expand: 2,
            dw_kernel: 4,
            n_classes: 26,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Conv output length: `floor((seq_len + 2 pad - kernel)/stride) + 1`
    /// (1023 for the defaults).
    pub fn token_len(&self) -> usize {
        (self.seq_len + 2 * self.conv_padding - self.conv_kernel) / self.conv_stride + 1
    }

    /// Tokens entering the encoder after the class token is appended
    /// (1024 for the defaults).
    pub fn n_tokens(&self) -> usize {
        self.token_len() + 1
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn validate(&self) -> ModelResult<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(ModelError::BadConfig(msg.into()))
            }
        };
        check(self.in_channels >= 1, "in_channels must be at least 1")?;
        check(self.conv_stride >= 1, "conv_stride must be at least 1")?;
        check(
            self.conv_kernel >= 1 && self.seq_len + 2 * self.conv_padding >= self.conv_kernel,
            "conv kernel must fit the padded input",
        )?;
        check(self.d_model >= 1, "d_model must be at least 1")?;
        check(self.n_blocks >= 1, "n_blocks must be at least 1")?;
        check(self.state_dim >= 1, "state_dim must be at least 1")?;
        check(self.expand >= 1, "expand must be at least 1")?;
        check(
            self.dw_kernel >= 1 && self.dw_kernel <= self.n_tokens(),
            "dw_kernel must fit the token sequence",
        )?;
        check(self.n_classes >= 1, "n_classes must be at least 1")?;
        check(self.ln_eps > 0.0, "ln_eps must be positive")?;
        Ok(())
    }

    /// Total learnable parameter count:
    ///
    /// ```text
    /// conv      d_model (in_channels K + 1)
    /// tokens    d_model (token_len + 2)            class token + positions
    /// block     2 d_model                          entry norm
    ///         + 2 d_inner (d_model + 1)            in-projection
    ///         + 2 [ d_inner (K_b + 1)              depthwise conv (per dir)
    ///             + d_inner (d_inner + N + 2N + 1) ] scan parameterization
    ///         + d_model (d_inner + 1)              out-projection
    /// final     2 d_model
    /// head      n_classes (d_model + 1)
    /// ```
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let di = self.d_inner();
        let n = self.state_dim;
        let conv = d * (self.in_channels * self.conv_kernel + 1);
        let tokens = d * (self.token_len() + 2);
        let direction = di * (self.dw_kernel + 1) + di * (di + n + 2 * n + 1);
        let block = 2 * d + 2 * di * (d + 1) + 2 * direction + d * (di + 1);
        conv + tokens + self.n_blocks * block + 2 * d + self.n_classes * (d + 1)
    }

    /// Render as `key=value` lines (one per field, fixed order) for the
    /// checkpoint container.
    pub fn to_kv(&self) -> String {
        format!(
            "in_channels={}\nseq_len={}\nd_model={}\nconv_kernel={}\nconv_stride={}\n\
             conv_padding={}\nn_blocks={}\nstate_dim={}\nexpand={}\ndw_kernel={}\n\
             n_classes={}\nln_eps={:e}\n",
            self.in_channels,
            self.seq_len,
            self.d_model,
            self.conv_kernel,
            self.conv_stride,
            self.conv_padding,
            self.n_blocks,
            self.state_dim,
            self.expand,
            self.dw_kernel,
            self.n_classes,
            self.ln_eps,
        )
    }

    /// Parse the `key=value` form produced by [`ModelConfig::to_kv`].
    /// Every field must appear exactly once; unknown keys are rejected.
    pub fn from_kv(text: &str) -> ModelResult<ModelConfig> {
        let mut cfg = ModelConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ModelError::BadConfig(format!("line {}: expected key=value", lineno + 1))
            })?;
            let bad = || ModelError::BadConfig(format!("line {}: bad value for {key}", lineno + 1));
            match key {
                "in_channels" => cfg.in_channels = value.parse().map_err(|_| bad())?,
                "seq_len" => cfg.seq_len = value.parse().map_err(|_| bad())?,
                "d_model" => cfg.d_model = value.parse().map_err(|_| bad())?,
                "conv_kernel" => cfg.conv_kernel = value.parse().map_err(|_| bad())?,
                "conv_stride" => cfg.conv_stride = value.parse().map_err(|_| bad())?,
                "conv_padding" => cfg.conv_padding = value.parse().map_err(|_| bad())?,
                "n_blocks" => cfg.n_blocks = value.parse().map_err(|_| bad())?,
                "state_dim" => cfg.state_dim = value.parse().map_err(|_| bad())?,
                "expand" => cfg.expand = value.parse().map_err(|_| bad())?,
                "dw_kernel" => cfg.dw_kernel = value.parse().map_err(|_| bad())?,
                "n_classes" => cfg.n_classes = value.parse().map_err(|_| bad())?,
                "ln_eps" => cfg.ln_eps = value.parse().map_err(|_| bad())?,
                other => {
                    return Err(ModelError::BadConfig(format!("unknown key {other:?}")));
                }
            }
            if !seen.insert(key.to_string()) {
                return Err(ModelError::BadConfig(format!("duplicate key {key:?}")));
            }
        }
        if seen.len() != 12 {
            return Err(ModelError::BadConfig(format!(
                "expected 12 config keys, found {}",
                seen.len()
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parameters of one scan direction inside a block.
#[derive(Clone)]
pub struct DirectionParams {
    /// `[d_inner, K_b]` depthwise causal conv weights.
    pub dw_w: Tensor,
    /// `[d_inner]` depthwise conv bias.
    pub dw_b: Tensor,
    pub ssm: SsmParams,
}

impl DirectionParams {
    fn init(d_inner: usize, state_dim: usize, dw_kernel: usize, rng: &mut SeedRng) -> TensorResult<Self> {
        let bound = 1.0 / (dw_kernel as f64).sqrt();
        Ok(DirectionParams {
            dw_w: Tensor::create(&[d_inner, dw_kernel], Init::Uniform { lo: -bound, hi: bound }, rng)?,
            dw_b: Tensor::zeros(&[d_inner])?,
            ssm: SsmParams::init(d_inner, state_dim, rng)?,
        })
    }

    fn map(&self, prefix: &str, f: &mut impl FnMut(String, &Tensor) -> Tensor) -> Self {
        DirectionParams {
            dw_w: f(format!("{prefix}.dw_w"), &self.dw_w),
            dw_b: f(format!("{prefix}.dw_b"), &self.dw_b),
            ssm: self.ssm.map(&format!("{prefix}.ssm"), f),
        }
    }

    fn visit(&self, prefix: &str, f: &mut impl FnMut(String, &Tensor)) {
        f(format!("{prefix}.dw_w"), &self.dw_w);
        f(format!("{prefix}.dw_b"), &self.dw_b);
        self.ssm.visit(&format!("{prefix}.ssm"), f);
    }

    /// One direction of the mixer: causal depthwise conv over time, silu,
    /// then the input-dependent selective scan. `x: [t, d_inner]`.
    fn apply(&self, x: &Tensor) -> TensorResult<Tensor> {
        let d_inner = self.ssm.d_inner();
        let k = self.dw_w.shape()[1];
        let xt = x.transpose()?; // [d_inner, t]
        let conv = xt
            .dwconv1d(&self.dw_w, k - 1)?
            .add(&self.dw_b.reshape(&[d_inner, 1])?)?;
        let u = conv.transpose()?.silu(); // [t, d_inner]
        let (delta, b, c) = selective_parameterize(&u, &self.ssm)?;
        let a = self.ssm.a();
        selective_scan(&u, &delta, &a, &b, &c)
    }
}

/// One bidirectional encoder block. Forward and backward paths own
/// disjoint parameter sets of identical shape.
#[derive(Clone)]
pub struct VimBlock {
    pub norm_g: Tensor,
    pub norm_b: Tensor,
    /// `[d_model, 2 d_inner]`: value stream then gate stream.
    pub in_w: Tensor,
    pub in_b: Tensor,
    pub fwd: DirectionParams,
    pub bwd: DirectionParams,
    /// `[d_inner, d_model]`.
    pub out_w: Tensor,
    pub out_b: Tensor,
}

/// Intermediate values of one block evaluation, exposed so tests can pin
/// the combine semantics (`combined` must equal `y_fwd + y_bwd` exactly).
pub struct BlockTrace {
    pub y_fwd: Tensor,
    pub y_bwd: Tensor,
    pub combined: Tensor,
}

impl VimBlock {
    fn init(cfg: &ModelConfig, rng: &mut SeedRng) -> TensorResult<Self> {
        let d = cfg.d_model;
        let di = cfg.d_inner();
        let bound = 1.0 / (d as f64).sqrt();
        let bound_inner = 1.0 / (di as f64).sqrt();
        Ok(VimBlock {
            norm_g: Tensor::full(&[d], 1.0)?,
            norm_b: Tensor::zeros(&[d])?,
            in_w: Tensor::create(&[d, 2 * di], Init::Uniform { lo: -bound, hi: bound }, rng)?,
            in_b: Tensor::zeros(&[2 * di])?,
            fwd: DirectionParams::init(di, cfg.state_dim, cfg.dw_kernel, rng)?,
            bwd: DirectionParams::init(di, cfg.state_dim, cfg.dw_kernel, rng)?,
            out_w: Tensor::create(&[di, d], Init::Uniform { lo: -bound_inner, hi: bound_inner }, rng)?,
            out_b: Tensor::zeros(&[d])?,
        })
    }

    fn map(&self, prefix: &str, f: &mut impl FnMut(String, &Tensor) -> Tensor) -> Self {
        VimBlock {
            norm_g: f(format!("{prefix}.norm_g"), &self.norm_g),
            norm_b: f(format!("{prefix}.norm_b"), &self.norm_b),
            in_w: f(format!("{prefix}.in_w"), &self.in_w),
            in_b: f(format!("{prefix}.in_b"), &self.in_b),
            fwd: self.fwd.map(&format!("{prefix}.fwd"), f),
            bwd: self.bwd.map(&format!("{prefix}.bwd"), f),
            out_w: f(format!("{prefix}.out_w"), &self.out_w),
            out_b: f(format!("{prefix}.out_b"), &self.out_b),
        }
    }

    fn visit(&self, prefix: &str, f: &mut impl FnMut(String, &Tensor)) {
        f(format!("{prefix}.norm_g"), &self.norm_g);
        f(format!("{prefix}.norm_b"), &self.norm_b);
        f(format!("{prefix}.in_w"), &self.in_w);
        f(format!("{prefix}.in_b"), &self.in_b);
        self.fwd.visit(&format!("{prefix}.fwd"), f);
        self.bwd.visit(&format!("{prefix}.bwd"), f);
        f(format!("{prefix}.out_w"), &self.out_w);
        f(format!("{prefix}.out_b"), &self.out_b);
    }

    /// Apply the block to `[t, d_model]` tokens, returning the same shape.
    pub fn apply(&self, tokens: &Tensor, eps: f64) -> TensorResult<Tensor> {
        Ok(self.apply_traced(tokens, eps)?.0)
    }

    /// As [`VimBlock::apply`], also returning the pre-gate intermediates.
    pub fn apply_traced(&self, tokens: &Tensor, eps: f64) -> TensorResult<(Tensor, BlockTrace)> {
        let d_inner = self.fwd.ssm.d_inner();
        let x = tokens.layer_norm(&self.norm_g, &self.norm_b, eps)?;
        let xz = x.matmul(&self.in_w)?.add(&self.in_b)?;
        let xv = xz.slice(1, 0, d_inner)?;
        let z = xz.slice(1, d_inner, d_inner)?;

        let y_fwd = self.fwd.apply(&xv)?;
        let y_bwd = self.bwd.apply(&xv.reverse(0)?)?.reverse(0)?;
        // The directions are summed as-is: no 1/2 factor.
        let combined = y_fwd.add(&y_bwd)?;

        let gated = combined.mul(&z.silu())?;
        let out = gated.matmul(&self.out_w)?.add(&self.out_b)?;
        let result = tokens.add(&out)?;
        Ok((
            result,
            BlockTrace {
                y_fwd,
                y_bwd,
                combined,
            },
        ))
    }
}

/// The complete network.
#[derive(Clone)]
pub struct Model {
    pub config: ModelConfig,
    /// `[d_model, in_channels, conv_kernel]`.
    pub conv_w: Tensor,
    pub conv_b: Tensor,
    /// `[1, d_model]`, appended after the conv tokens.
    pub cls_token: Tensor,
    /// `[n_tokens, d_model]` learned positions.
    pub pos_embed: Tensor,
    pub blocks: Vec<VimBlock>,
    pub final_norm_g: Tensor,
    pub final_norm_b: Tensor,
    /// `[d_model, n_classes]`.
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl Model {
    /// Fresh model: projection weights uniform `±1/sqrt(fan_in)`, biases
    /// zero, class token and positions normal(0, 0.02), norms identity;
    /// scan parameters per [`SsmParams::init`]. Deterministic in `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> ModelResult<Model> {
        config.validate()?;
        let mut rng = rng_from_seed(seed);
        let d = config.d_model;
        let conv_fan_in = config.in_channels * config.conv_kernel;
        let conv_bound = 1.0 / (conv_fan_in as f64).sqrt();
        let conv_w = Tensor::create(
            &[d, config.in_channels, config.conv_kernel],
            Init::Uniform { lo: -conv_bound, hi: conv_bound },
            &mut rng,
        )?;
        let conv_b = Tensor::zeros(&[d])?;
        let cls_token = Tensor::create(&[1, d], Init::Normal { mean: 0.0, std: 0.02 }, &mut rng)?;
        let pos_embed = Tensor::create(
            &[config.n_tokens(), d],
            Init::Normal { mean: 0.0, std: 0.02 },
            &mut rng,
        )?;
        let blocks = (0..config.n_blocks)
            .map(|_| VimBlock::init(config, &mut rng))
            .collect::<TensorResult<Vec<_>>>()?;
        let head_bound = 1.0 / (d as f64).sqrt();
        let head_w = Tensor::create(
            &[d, config.n_classes],
            Init::Uniform { lo: -head_bound, hi: head_bound },
            &mut rng,
        )?;
        Ok(Model {
            config: config.clone(),
            conv_w,
            conv_b,
            cls_token,
            pos_embed,
            blocks,
            final_norm_g: Tensor::full(&[d], 1.0)?,
            final_norm_b: Tensor::zeros(&[d])?,
            head_w,
            head_b: Tensor::zeros(&[config.n_classes])?,
        })
    }

    /// Apply `f` to every parameter (hierarchical name, tensor), producing
    /// a structurally identical model.
    pub fn map(&self, f: &mut impl FnMut(String, &Tensor) -> Tensor) -> Model {
        Model {
            config: self.config.clone(),
            conv_w: f("conv.w".into(), &self.conv_w),
            conv_b: f("conv.b".into(), &self.conv_b),
            cls_token: f("cls_token".into(), &self.cls_token),
            pos_embed: f("pos_embed".into(), &self.pos_embed),
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| b.map(&format!("blocks.{i}"), f))
                .collect(),
            final_norm_g: f("final_norm.g".into(), &self.final_norm_g),
            final_norm_b: f("final_norm.b".into(), &self.final_norm_b),
            head_w: f("head.w".into(), &self.head_w),
            head_b: f("head.b".into(), &self.head_b),
        }
    }

    /// Visit every parameter with its hierarchical name, in a fixed order.
    pub fn visit(&self, f: &mut impl FnMut(String, &Tensor)) {
        f("conv.w".into(), &self.conv_w);
        f("conv.b".into(), &self.conv_b);
        f("cls_token".into(), &self.cls_token);
        f("pos_embed".into(), &self.pos_embed);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("blocks.{i}"), f);
        }
        f("final_norm.g".into(), &self.final_norm_g);
        f("final_norm.b".into(), &self.final_norm_b);
        f("head.w".into(), &self.head_w);
        f("head.b".into(), &self.head_b);
    }

    /// Register every parameter as a differentiable leaf on `graph`,
    /// returning the tracked twin of this model.
    pub fn bind(&self, graph: &Graph) -> Model {
        self.map(&mut |_, t| graph.leaf(t))
    }

    /// Conv front-end + tokenization: `[in_channels, seq_len]` signal to
    /// `[n_tokens, d_model]` tokens (conv tokens, then the class token at
    /// the final index, plus learned positions).
    pub fn embed(&self, signal: &Tensor) -> ModelResult<Tensor> {
        let cfg = &self.config;
        if signal.shape() != [cfg.in_channels, cfg.seq_len] {
            return Err(ModelError::BadSignal {
                want_ch: cfg.in_channels,
                want_len: cfg.seq_len,
                got: signal.shape().to_vec(),
            });
        }
        let feat = signal
            .conv1d(&self.conv_w, cfg.conv_stride, cfg.conv_padding)?
            .add(&self.conv_b.reshape(&[cfg.d_model, 1])?)?; // [d_model, token_len]
        let tokens = feat.transpose()?; // [token_len, d_model]
        let with_cls = Tensor::concat(&[&tokens, &self.cls_token], 0)?;
        Ok(with_cls.add(&self.pos_embed)?)
    }

    /// Full inference: raw logits `[n_classes]` (no sigmoid).
    pub fn forward(&self, signal: &Tensor) -> ModelResult<Tensor> {
        let mut tokens = self.embed(signal)?;
        for block in &self.blocks {
            tokens = block.apply(&tokens, self.config.ln_eps)?;
        }
        let normed = tokens.layer_norm(&self.final_norm_g, &self.final_norm_b, self.config.ln_eps)?;
        let cls_row = normed.slice(0, self.config.n_tokens() - 1, 1)?; // [1, d_model]
        let logits = cls_row.matmul(&self.head_w)?.add(&self.head_b)?;
        Ok(logits.reshape(&[self.config.n_classes])?)
    }
}

/// Mean over classes of the numerically stable binary cross-entropy:
/// per class `y softplus(-z) + (1-y) softplus(z)`. Labels are expected
/// in {0, 1}; `logits` may be graph-tracked (gradients flow through the
/// softplus composition).
pub fn bce_loss(logits: &Tensor, labels: &Tensor) -> TensorResult<Tensor> {
    if logits.shape() != labels.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "bce_loss",
            lhs: logits.shape().to_vec(),
            rhs: labels.shape().to_vec(),
        });
    }
    let pos = labels.mul(&logits.neg().softplus())?;
    let neg = labels.neg().add_scalar(1.0).mul(&logits.softplus())?;
    Ok(pos.add(&neg)?.mean_all())
}
