//! Building blocks of the denoising U-Net: the base restoration block
//! (layer norm, pointwise/depthwise convs, SimpleGate, simplified channel
//! attention), its three cheaper alternatives, conv/batch-norm folding, and
//! assembly of the encoder-middle-decoder network.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{kaiming_uniform, Fwd, ParamGroup, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

pub const BN_EPS: Real = 1e-5;
pub const BN_MOMENTUM: Real = 0.9;
pub const LN_EPS: Real = 1e-6;

/// The four candidate block types.
///
/// - `Alt0`: unmodified base block;
/// - `Alt1`: base block with both layer norms removed;
/// - `Alt2`: base block with the channel-attention branch removed;
/// - `Alt3`: separable 3x3 conv + batch norm + ReLU with a residual
///   connection, foldable to a single conv at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Alt0,
    Alt1,
    Alt2,
    Alt3,
}

impl BlockKind {
    pub const ALL: [BlockKind; 4] = [
        BlockKind::Alt0,
        BlockKind::Alt1,
        BlockKind::Alt2,
        BlockKind::Alt3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Alt0 => "alt0",
            BlockKind::Alt1 => "alt1",
            BlockKind::Alt2 => "alt2",
            BlockKind::Alt3 => "alt3",
        }
    }
}

impl std::str::FromStr for BlockKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alt0" => Ok(BlockKind::Alt0),
            "alt1" => Ok(BlockKind::Alt1),
            "alt2" => Ok(BlockKind::Alt2),
            "alt3" => Ok(BlockKind::Alt3),
            _ => Err(Error::InvalidArg(format!("unknown block kind {s}"))),
        }
    }
}

impl std::fmt::Display for BlockKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One roster candidate: `count` stacked blocks of one kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CandidateSpec {
    pub kind: BlockKind,
    pub count: usize,
}

impl CandidateSpec {
    pub fn new(kind: BlockKind, count: usize) -> Self {
        CandidateSpec { kind, count }
    }
}

impl std::fmt::Display for CandidateSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.count, self.kind)
    }
}

/// Stage positions of the U-Net. Decoder 4 is the deepest decoder (mirrors
/// encoder 4); decoder 1 is at full resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageId {
    Enc1,
    Enc2,
    Enc3,
    Enc4,
    Mid,
    Dec4,
    Dec3,
    Dec2,
    Dec1,
}

impl StageId {
    /// The searchable stages in roster order.
    pub const SEARCHABLE: [StageId; 8] = [
        StageId::Enc1,
        StageId::Enc2,
        StageId::Enc3,
        StageId::Enc4,
        StageId::Dec4,
        StageId::Dec3,
        StageId::Dec2,
        StageId::Dec1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StageId::Enc1 => "enc1",
            StageId::Enc2 => "enc2",
            StageId::Enc3 => "enc3",
            StageId::Enc4 => "enc4",
            StageId::Mid => "mid",
            StageId::Dec4 => "dec4",
            StageId::Dec3 => "dec3",
            StageId::Dec2 => "dec2",
            StageId::Dec1 => "dec1",
        }
    }

    /// Downsampling depth of the stage: 0 at full resolution, 4 at the
    /// middle block. Channel width at a stage is `base_width << depth`.
    pub fn depth(self) -> usize {
        match self {
            StageId::Enc1 | StageId::Dec1 => 0,
            StageId::Enc2 | StageId::Dec2 => 1,
            StageId::Enc3 | StageId::Dec3 => 2,
            StageId::Enc4 | StageId::Dec4 => 3,
            StageId::Mid => 4,
        }
    }
}

impl std::fmt::Display for StageId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StageId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        for id in [
            StageId::Enc1,
            StageId::Enc2,
            StageId::Enc3,
            StageId::Enc4,
            StageId::Mid,
            StageId::Dec4,
            StageId::Dec3,
            StageId::Dec2,
            StageId::Dec1,
        ] {
            if id.name() == s {
                return Ok(id);
            }
        }
        Err(Error::InvalidArg(format!("unknown stage {s}")))
    }
}

// ---- layers ----

pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self> {
        let fan_in = in_ch / groups * k * k;
        let wn = out_ch * (in_ch / groups) * k * k;
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(rng, wn, fan_in),
            vec![out_ch, in_ch / groups, k, k],
            ParamGroup::Weight,
        )?;
        let bias = store.add(
            format!("{name}.bias"),
            vec![0.0; out_ch],
            vec![out_ch],
            ParamGroup::Weight,
        )?;
        Ok(ConvLayer {
            weight,
            bias,
            in_ch,
            out_ch,
            k,
            stride,
            padding,
            groups,
        })
    }

    pub fn forward(&self, fwd: &mut Fwd, store: &ParamStore, x: Tensor) -> Result<Tensor> {
        let w = fwd.param(store, self.weight)?;
        let b = fwd.param(store, self.bias)?;
        fwd.tape
            .conv2d(x, w, Some(b), self.stride, self.padding, self.groups)
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.data_mut(self.weight).iter_mut().for_each(|v| *v = 0.0);
        store.data_mut(self.bias).iter_mut().for_each(|v| *v = 0.0);
    }
}

pub struct LayerNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormLayer {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Result<Self> {
        Ok(LayerNormLayer {
            gamma: store.add(
                format!("{name}.gamma"),
                vec![1.0; c],
                vec![c],
                ParamGroup::Weight,
            )?,
            beta: store.add(
                format!("{name}.beta"),
                vec![0.0; c],
                vec![c],
                ParamGroup::Weight,
            )?,
        })
    }

    pub fn forward(&self, fwd: &mut Fwd, store: &ParamStore, x: Tensor) -> Result<Tensor> {
        let g = fwd.param(store, self.gamma)?;
        let b = fwd.param(store, self.beta)?;
        fwd.tape.layer_norm(x, g, b, LN_EPS)
    }
}

pub struct BatchNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNormLayer {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Result<Self> {
        Ok(BatchNormLayer {
            gamma: store.add(
                format!("{name}.gamma"),
                vec![1.0; c],
                vec![c],
                ParamGroup::Weight,
            )?,
            beta: store.add(
                format!("{name}.beta"),
                vec![0.0; c],
                vec![c],
                ParamGroup::Weight,
            )?,
            running_mean: store.add(
                format!("{name}.running_mean"),
                vec![0.0; c],
                vec![c],
                ParamGroup::Buffer,
            )?,
            running_var: store.add(
                format!("{name}.running_var"),
                vec![1.0; c],
                vec![c],
                ParamGroup::Buffer,
            )?,
        })
    }

    /// Training mode normalizes with batch statistics and queues an
    /// exponential-moving-average update of the running statistics;
    /// inference mode uses the stored statistics.
    pub fn forward(&self, fwd: &mut Fwd, store: &ParamStore, x: Tensor) -> Result<Tensor> {
        let g = fwd.param(store, self.gamma)?;
        let b = fwd.param(store, self.beta)?;
        if fwd.training {
            let (y, mean, var) = fwd.tape.batch_norm_train(x, g, b, BN_EPS)?;
            let old_m = store.data(self.running_mean);
            let old_v = store.data(self.running_var);
            let new_m: Vec<Real> = old_m
                .iter()
                .zip(mean.iter())
                .map(|(o, n)| BN_MOMENTUM * o + (1.0 - BN_MOMENTUM) * n)
                .collect();
            let new_v: Vec<Real> = old_v
                .iter()
                .zip(var.iter())
                .map(|(o, n)| BN_MOMENTUM * o + (1.0 - BN_MOMENTUM) * n)
                .collect();
            fwd.stat_updates.push((self.running_mean, new_m));
            fwd.stat_updates.push((self.running_var, new_v));
            Ok(y)
        } else {
            let m = fwd.param(store, self.running_mean)?;
            let v = fwd.param(store, self.running_var)?;
            fwd.tape.batch_norm_infer(x, m, v, g, b, BN_EPS)
        }
    }
}

/// Folds inference-mode batch-norm statistics into the preceding conv.
/// Returns the fused kernel and bias: the fused conv equals conv followed by
/// batch norm on any input.
pub fn fold_conv_bn(
    weight: &[Real],
    bias: &[Real],
    out_ch: usize,
    mean: &[Real],
    var: &[Real],
    gamma: &[Real],
    beta: &[Real],
    eps: Real,
) -> Result<(Vec<Real>, Vec<Real>)> {
    if bias.len() != out_ch || mean.len() != out_ch || var.len() != out_ch {
        return Err(Error::shape(
            "fold_conv_bn",
            format!("per-channel vectors must have length {out_ch}"),
        ));
    }
    if weight.len() % out_ch != 0 {
        return Err(Error::shape(
            "fold_conv_bn",
            format!("kernel length {} not divisible by {out_ch}", weight.len()),
        ));
    }
    let mut fw = vec![0.0; weight.len()];
    let mut fb = vec![0.0; out_ch];
    let per = weight.len() / out_ch;
    for co in 0..out_ch {
        let denom = var[co] + eps;
        if denom <= 0.0 {
            return Err(Error::InvalidArg(format!(
                "fold_conv_bn: var + eps must be positive, got {denom}"
            )));
        }
        let s = gamma[co] / denom.sqrt();
        for i in 0..per {
            fw[co * per + i] = weight[co * per + i] * s;
        }
        fb[co] = (bias[co] - mean[co]) * s + beta[co];
    }
    Ok((fw, fb))
}

// ---- blocks ----

/// The base block and its two ablations (Alt0/Alt1/Alt2). The channel count
/// is preserved; both conv branches expand by 2x internally.
pub struct NafBlock {
    pub ln1: Option<LayerNormLayer>,
    pub conv_expand: ConvLayer,
    pub conv_dw: ConvLayer,
    pub sca: Option<ConvLayer>,
    pub conv_out: ConvLayer,
    pub ln2: Option<LayerNormLayer>,
    pub ffn_expand: ConvLayer,
    pub ffn_out: ConvLayer,
}

impl NafBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c: usize,
        kind: BlockKind,
    ) -> Result<Self> {
        let with_ln = kind != BlockKind::Alt1;
        let with_sca = kind != BlockKind::Alt2;
        Ok(NafBlock {
            ln1: with_ln
                .then(|| LayerNormLayer::new(store, &format!("{name}.ln1"), c))
                .transpose()?,
            conv_expand: ConvLayer::new(store, rng, &format!("{name}.conv_expand"), c, 2 * c, 1, 1, 0, 1)?,
            conv_dw: ConvLayer::new(store, rng, &format!("{name}.conv_dw"), 2 * c, 2 * c, 3, 1, 1, 2 * c)?,
            sca: with_sca
                .then(|| ConvLayer::new(store, rng, &format!("{name}.sca"), c, c, 1, 1, 0, 1))
                .transpose()?,
            conv_out: ConvLayer::new(store, rng, &format!("{name}.conv_out"), c, c, 1, 1, 0, 1)?,
            ln2: with_ln
                .then(|| LayerNormLayer::new(store, &format!("{name}.ln2"), c))
                .transpose()?,
            ffn_expand: ConvLayer::new(store, rng, &format!("{name}.ffn_expand"), c, 2 * c, 1, 1, 0, 1)?,
            ffn_out: ConvLayer::new(store, rng, &format!("{name}.ffn_out"), c, c, 1, 1, 0, 1)?,
        })
    }

    pub fn forward(&self, fwd: &mut Fwd, store: &ParamStore, x: Tensor) -> Result<Tensor> {
        let t = fwd.tape;
        let mut y = match &self.ln1 {
            Some(ln) => ln.forward(fwd, store, x)?,
            None => x,
        };
        y = self.conv_expand.forward(fwd, store, y)?;
        y = self.conv_dw.forward(fwd, store, y)?;
        y = t.simple_gate(y)?;
        if let Some(sca) = &self.sca {
            let pooled = t.global_avg_pool(y)?;
            let s = sca.forward(fwd, store, pooled)?;
            y = t.channel_mul(y, s)?;
        }
        y = self.conv_out.forward(fwd, store, y)?;
        let mid = t.add(x, y)?;
        let mut z = match &self.ln2 {
            Some(ln) => ln.forward(fwd, store, mid)?,
            None => mid,
        };
        z = self.ffn_expand.forward(fwd, store, z)?;
        z = t.simple_gate(z)?;
        z = self.ffn_out.forward(fwd, store, z)?;
        t.add(mid, z)
    }
}

/// Alt3: separable 3x3 conv (depthwise then pointwise), batch norm, ReLU,
/// with a residual connection. The conv/batch-norm pair is foldable into a
/// single conv at inference time.
pub struct ConvBnBlock {
    pub conv_dw: ConvLayer,
    pub conv_pw: ConvLayer,
    pub bn: BatchNormLayer,
}

impl ConvBnBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c: usize,
    ) -> Result<Self> {
        Ok(ConvBnBlock {
            conv_dw: ConvLayer::new(store, rng, &format!("{name}.conv_dw"), c, c, 3, 1, 1, c)?,
            conv_pw: ConvLayer::new(store, rng, &format!("{name}.conv_pw"), c, c, 1, 1, 0, 1)?,
            bn: BatchNormLayer::new(store, &format!("{name}.bn"), c)?,
        })
    }

    pub fn forward(&self, fwd: &mut Fwd, store: &ParamStore, x: Tensor) -> Result<Tensor> {
        let t = fwd.tape;
        let mut y = self.conv_dw.forward(fwd, store, x)?;
        y = self.conv_pw.forward(fwd, store, y)?;
        y = self.bn.forward(fwd, store, y)?;
        y = t.relu(y);
        t.add(x, y)
    }
}

pub enum Block {
    Naf(NafBlock),
    ConvBn(ConvBnBlock),
}

impl Block {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c: usize,
        kind: BlockKind,
    ) -> Result<Self> {
        match kind {
            BlockKind::Alt3 => Ok(Block::ConvBn(ConvBnBlock::new(store, rng, name, c)?)),
            k => Ok(Block::Naf(NafBlock::new(store, rng, name, c, k)?)),
        }
    }

    pub fn forward(&self, fwd: &mut Fwd, store: &ParamStore, x: Tensor) -> Result<Tensor> {
        match self {
            Block::Naf(b) => b.forward(fwd, store, x),
            Block::ConvBn(b) => b.forward(fwd, store, x),
        }
    }

    /// Zeroes the convs feeding each residual branch so the block computes
    /// the identity map.
    pub fn zero_branch_outputs(&self, store: &mut ParamStore) {
        match self {
            Block::Naf(b) => {
                b.conv_out.zero(store);
                b.ffn_out.zero(store);
            }
            Block::ConvBn(b) => {
                b.conv_pw.zero(store);
            }
        }
    }
}

/// A stack of blocks of one kind, the unit a roster candidate instantiates.
pub struct BlockStack {
    pub spec: CandidateSpec,
    pub blocks: Vec<Block>,
}

impl BlockStack {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c: usize,
        spec: CandidateSpec,
    ) -> Result<Self> {
        if spec.count == 0 {
            return Err(Error::InvalidArg("candidate count must be >= 1".into()));
        }
        let blocks = (0..spec.count)
            .map(|i| Block::new(store, rng, &format!("{name}.b{i}"), c, spec.kind))
            .collect::<Result<_>>()?;
        Ok(BlockStack {
            spec,
            blocks,
        })
    }

    pub fn forward(&self, fwd: &mut Fwd, store: &ParamStore, mut x: Tensor) -> Result<Tensor> {
        for b in &self.blocks {
            x = b.forward(fwd, store, x)?;
        }
        Ok(x)
    }
}

// ---- U-Net ----

/// Discrete network configuration: channel width of the first stage, stage
/// candidates for the four encoders, the middle block and the four decoders
/// (deepest decoder first).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub width: usize,
    pub input_channels: usize,
    pub enc: [CandidateSpec; 4],
    pub mid: CandidateSpec,
    pub dec: [CandidateSpec; 4],
}

impl UNetConfig {
    /// The base configuration: (2-2-4-8)-12-(2-2-2-2) base blocks.
    pub fn base(width: usize, input_channels: usize) -> Self {
        let a0 = |n| CandidateSpec::new(BlockKind::Alt0, n);
        UNetConfig {
            width,
            input_channels,
            enc: [a0(2), a0(2), a0(4), a0(8)],
            mid: a0(12),
            dec: [a0(2), a0(2), a0(2), a0(2)],
        }
    }

    pub fn stage(&self, id: StageId) -> CandidateSpec {
        match id {
            StageId::Enc1 => self.enc[0],
            StageId::Enc2 => self.enc[1],
            StageId::Enc3 => self.enc[2],
            StageId::Enc4 => self.enc[3],
            StageId::Mid => self.mid,
            StageId::Dec4 => self.dec[0],
            StageId::Dec3 => self.dec[1],
            StageId::Dec2 => self.dec[2],
            StageId::Dec1 => self.dec[3],
        }
    }

    pub fn set_stage(&mut self, id: StageId, spec: CandidateSpec) {
        match id {
            StageId::Enc1 => self.enc[0] = spec,
            StageId::Enc2 => self.enc[1] = spec,
            StageId::Enc3 => self.enc[2] = spec,
            StageId::Enc4 => self.enc[3] = spec,
            StageId::Mid => self.mid = spec,
            StageId::Dec4 => self.dec[0] = spec,
            StageId::Dec3 => self.dec[1] = spec,
            StageId::Dec2 => self.dec[2] = spec,
            StageId::Dec1 => self.dec[3] = spec,
        }
    }

    /// Channel width at a stage.
    pub fn stage_width(&self, id: StageId) -> usize {
        self.width << id.depth()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.width % 2 != 0 {
            return Err(Error::InvalidArg(format!(
                "width must be positive and even for channel splits, got {}",
                self.width
            )));
        }
        if self.input_channels == 0 {
            return Err(Error::InvalidArg("input_channels must be positive".into()));
        }
        Ok(())
    }
}

/// The assembled denoising network: 3x3 stem, four encoder stages with
/// stride-2 conv downsampling, a middle stage, four decoder stages with
/// pixel-shuffle upsampling and additive skips, a 3x3 head, and a global
/// input-to-output residual (the network predicts a correction to its
/// input).
pub struct UNet {
    pub config: UNetConfig,
    pub stem: ConvLayer,
    pub enc: Vec<BlockStack>,
    pub downs: Vec<ConvLayer>,
    pub mid: BlockStack,
    pub ups: Vec<ConvLayer>,
    pub dec: Vec<BlockStack>,
    pub head: ConvLayer,
}

impl UNet {
    pub fn build(store: &mut ParamStore, rng: &mut ChaCha8Rng, config: &UNetConfig) -> Result<Self> {
        config.validate()?;
        let w = config.width;
        let cin = config.input_channels;
        let stem = ConvLayer::new(store, rng, "stem", cin, w, 3, 1, 1, 1)?;
        let mut enc = Vec::new();
        let mut downs = Vec::new();
        for (i, id) in [StageId::Enc1, StageId::Enc2, StageId::Enc3, StageId::Enc4]
            .into_iter()
            .enumerate()
        {
            let c = config.stage_width(id);
            enc.push(BlockStack::new(store, rng, id.name(), c, config.stage(id))?);
            downs.push(ConvLayer::new(
                store,
                rng,
                &format!("down{}", i + 1),
                c,
                2 * c,
                2,
                2,
                0,
                1,
            )?);
        }
        let mid = BlockStack::new(
            store,
            rng,
            StageId::Mid.name(),
            config.stage_width(StageId::Mid),
            config.stage(StageId::Mid),
        )?;
        let mut ups = Vec::new();
        let mut dec = Vec::new();
        for (i, id) in [StageId::Dec4, StageId::Dec3, StageId::Dec2, StageId::Dec1]
            .into_iter()
            .enumerate()
        {
            let c = config.stage_width(id); // width after upsampling
            ups.push(ConvLayer::new(
                store,
                rng,
                &format!("up{}", 4 - i),
                2 * c,
                4 * c,
                1,
                1,
                0,
                1,
            )?);
            dec.push(BlockStack::new(store, rng, id.name(), c, config.stage(id))?);
        }
        let head = ConvLayer::new(store, rng, "head", w, cin, 3, 1, 1, 1)?;
        Ok(UNet {
            config: config.clone(),
            stem,
            enc,
            downs,
            mid,
            ups,
            dec,
            head,
        })
    }

    pub fn forward(&self, fwd: &mut Fwd, store: &ParamStore, input: Tensor) -> Result<Tensor> {
        let t = fwd.tape;
        let mut x = self.stem.forward(fwd, store, input)?;
        let mut skips = Vec::with_capacity(4);
        for (stage, down) in self.enc.iter().zip(&self.downs) {
            x = stage.forward(fwd, store, x)?;
            skips.push(x);
            x = down.forward(fwd, store, x)?;
        }
        x = self.mid.forward(fwd, store, x)?;
        for (up, stage) in self.ups.iter().zip(&self.dec) {
            x = up.forward(fwd, store, x)?;
            x = t.pixel_shuffle(x, 2)?;
            let skip = skips.pop().expect("one skip per decoder");
            x = t.add(x, skip)?;
            x = stage.forward(fwd, store, x)?;
        }
        let correction = self.head.forward(fwd, store, x)?;
        t.add(input, correction)
    }

    /// Zeroes every block's residual branch and the head so the whole
    /// network computes the identity map.
    pub fn identity_init(&self, store: &mut ParamStore) {
        for stack in self.enc.iter().chain([&self.mid]).chain(self.dec.iter()) {
            for b in &stack.blocks {
                b.zero_branch_outputs(store);
            }
        }
        self.head.zero(store);
    }
}

#[cfg(test)]
mod tests;
