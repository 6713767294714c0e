//! Differentiable architecture search over the denoising U-Net.
//!
//! Every searchable stage holds a roster of candidate block stacks. The
//! supernetwork evaluates all of them and mixes the outputs with softmax
//! weights derived from per-stage architecture logits. Training jointly
//! optimizes block weights and logits against a composite loss: the task
//! term (MSE), a cost penalty (expected normalized stage cost under the
//! mixture weights), and a normalized-entropy regularizer whose coefficient
//! grows geometrically over epochs so the mixtures are pushed toward
//! one-hot selections late in the run.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::blocks::{BlockKind, BlockStack, CandidateSpec, ConvLayer, StageId, UNet, UNetConfig};
use crate::cost::CostTable;
use crate::error::{Error, Result};
use crate::params::{Adam, Fwd, ParamGroup, ParamId, ParamStore};
use crate::tensor::{Real, Tape, Tensor};

/// Candidate roster for one stage. Non-searchable stages carry exactly one
/// candidate and no architecture logits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRoster {
    pub stage: StageId,
    pub searchable: bool,
    pub candidates: Vec<CandidateSpec>,
}

fn roster(stage: StageId, alt3_max: usize, other_max: usize) -> StageRoster {
    let mut candidates = Vec::new();
    for n in 1..=alt3_max {
        candidates.push(CandidateSpec::new(BlockKind::Alt3, n));
    }
    for kind in [BlockKind::Alt0, BlockKind::Alt1, BlockKind::Alt2] {
        for n in 1..=other_max {
            candidates.push(CandidateSpec::new(kind, n));
        }
    }
    StageRoster {
        stage,
        searchable: true,
        candidates,
    }
}

/// The full roster set: outer stages offer the conv alternative at depths
/// 1-4 and the attention variants at depths 1-2; the two deepest encoder
/// stages open up all kinds to depth 4 and 8 respectively; the middle stage
/// is fixed at twelve full blocks.
pub fn default_rosters() -> Vec<StageRoster> {
    vec![
        roster(StageId::Enc1, 4, 2),
        roster(StageId::Enc2, 4, 2),
        roster(StageId::Enc3, 4, 4),
        roster(StageId::Enc4, 8, 8),
        StageRoster {
            stage: StageId::Mid,
            searchable: false,
            candidates: vec![CandidateSpec::new(BlockKind::Alt0, 12)],
        },
        roster(StageId::Dec4, 4, 2),
        roster(StageId::Dec3, 4, 2),
        roster(StageId::Dec2, 4, 2),
        roster(StageId::Dec1, 4, 2),
    ]
}

/// The default roster set with candidate depths and the middle stack capped,
/// for small smoke-scale runs.
pub fn capped_rosters(max_count: usize) -> Vec<StageRoster> {
    let max_count = max_count.max(1);
    let mut rosters = default_rosters();
    for r in &mut rosters {
        if r.searchable {
            r.candidates.retain(|c| c.count <= max_count);
        } else {
            for c in &mut r.candidates {
                c.count = c.count.min(max_count);
            }
        }
    }
    rosters
}

/// One searchable stage of the supernetwork: all candidate stacks plus the
/// architecture logit vector.
pub struct StageArm {
    pub stage: StageId,
    pub candidates: Vec<CandidateSpec>,
    pub stacks: Vec<BlockStack>,
    pub phi: ParamId,
}

impl StageArm {
    fn build(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        roster: &StageRoster,
        c: usize,
    ) -> Result<Self> {
        let mut stacks = Vec::with_capacity(roster.candidates.len());
        for (j, spec) in roster.candidates.iter().enumerate() {
            let prefix = format!("{}.cand{j}", roster.stage);
            stacks.push(BlockStack::new(store, rng, &prefix, c, *spec)?);
        }
        let k = roster.candidates.len();
        let phi = store.add(
            format!("{}.phi", roster.stage),
            vec![0.0; k],
            vec![k],
            ParamGroup::Arch,
        )?;
        Ok(StageArm {
            stage: roster.stage,
            candidates: roster.candidates.clone(),
            stacks,
            phi,
        })
    }

    /// Mixture output sum_j alpha_j * stack_j(x), plus the alpha tensor.
    fn forward_mixed(
        &self,
        fwd: &mut Fwd,
        store: &ParamStore,
        x: Tensor,
        temperature: Real,
    ) -> Result<(Tensor, Tensor)> {
        let t = fwd.tape;
        let phi = fwd.param(store, self.phi)?;
        let alpha = t.softmax(phi, temperature)?;
        let mut out: Option<Tensor> = None;
        for (j, stack) in self.stacks.iter().enumerate() {
            let y = stack.forward(fwd, store, x)?;
            let weighted = t.mul_by_elem(y, alpha, j)?;
            out = Some(match out {
                Some(acc) => t.add(acc, weighted)?,
                None => weighted,
            });
        }
        Ok((out.expect("roster is never empty"), alpha))
    }
}

/// The weight-sharing supernetwork: the shared trunk of the U-Net with each
/// searchable stage replaced by a [`StageArm`].
pub struct SuperNet {
    pub width: usize,
    pub input_channels: usize,
    pub stem: ConvLayer,
    pub enc: Vec<StageArm>,
    pub downs: Vec<ConvLayer>,
    pub mid: BlockStack,
    pub ups: Vec<ConvLayer>,
    pub dec: Vec<StageArm>,
    pub head: ConvLayer,
}

impl SuperNet {
    pub fn build(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        width: usize,
        input_channels: usize,
        rosters: &[StageRoster],
    ) -> Result<Self> {
        if width == 0 || width % 2 != 0 {
            return Err(Error::InvalidArg(format!(
                "width must be positive and even for channel splits, got {width}"
            )));
        }
        let by_stage: HashMap<StageId, &StageRoster> =
            rosters.iter().map(|r| (r.stage, r)).collect();
        let get = |id: StageId| -> Result<&StageRoster> {
            by_stage.get(&id).copied().ok_or_else(|| Error::MissingCost {
                stage: id.to_string(),
                candidate: "*".into(),
            })
        };
        let stem = ConvLayer::new(store, rng, "stem", input_channels, width, 3, 1, 1, 1)?;
        let mut enc = Vec::new();
        let mut downs = Vec::new();
        for (i, id) in [StageId::Enc1, StageId::Enc2, StageId::Enc3, StageId::Enc4]
            .into_iter()
            .enumerate()
        {
            let c = width << id.depth();
            enc.push(StageArm::build(store, rng, get(id)?, c)?);
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
        let mid_roster = get(StageId::Mid)?;
        let mid = BlockStack::new(
            store,
            rng,
            StageId::Mid.name(),
            width << StageId::Mid.depth(),
            mid_roster.candidates[0],
        )?;
        let mut ups = Vec::new();
        let mut dec = Vec::new();
        for (i, id) in [StageId::Dec4, StageId::Dec3, StageId::Dec2, StageId::Dec1]
            .into_iter()
            .enumerate()
        {
            let c = width << id.depth();
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
            dec.push(StageArm::build(store, rng, get(id)?, c)?);
        }
        let head = ConvLayer::new(store, rng, "head", width, input_channels, 3, 1, 1, 1)?;
        Ok(SuperNet {
            width,
            input_channels,
            stem,
            enc,
            downs,
            mid,
            ups,
            dec,
            head,
        })
    }

    pub fn arms(&self) -> impl Iterator<Item = &StageArm> {
        self.enc.iter().chain(self.dec.iter())
    }

    /// Full mixed forward pass. Returns the network output together with the
    /// per-stage mixture weight tensors, in searchable-stage order.
    pub fn forward(
        &self,
        fwd: &mut Fwd,
        store: &ParamStore,
        input: Tensor,
        temperature: Real,
    ) -> Result<(Tensor, Vec<(StageId, Tensor)>)> {
        let t = fwd.tape;
        let mut alphas = Vec::with_capacity(8);
        let mut x = self.stem.forward(fwd, store, input)?;
        let mut skips = Vec::with_capacity(4);
        for (arm, down) in self.enc.iter().zip(&self.downs) {
            let (y, alpha) = arm.forward_mixed(fwd, store, x, temperature)?;
            alphas.push((arm.stage, alpha));
            x = y;
            skips.push(x);
            x = down.forward(fwd, store, x)?;
        }
        x = self.mid.forward(fwd, store, x)?;
        for (up, arm) in self.ups.iter().zip(&self.dec) {
            x = up.forward(fwd, store, x)?;
            x = t.pixel_shuffle(x, 2)?;
            let skip = skips.pop().expect("one skip per decoder");
            x = t.add(x, skip)?;
            let (y, alpha) = arm.forward_mixed(fwd, store, x, temperature)?;
            alphas.push((arm.stage, alpha));
            x = y;
        }
        let correction = self.head.forward(fwd, store, x)?;
        let out = t.add(input, correction)?;
        Ok((out, alphas))
    }

    /// Forward pass evaluating exactly one candidate per searchable stage
    /// (no mixture weighting). `selection[i]` indexes into the roster of the
    /// i-th searchable stage in [`StageId::SEARCHABLE`] order.
    pub fn forward_selected(
        &self,
        fwd: &mut Fwd,
        store: &ParamStore,
        input: Tensor,
        selection: &[usize],
    ) -> Result<Tensor> {
        if selection.len() != self.enc.len() + self.dec.len() {
            return Err(Error::InvalidArg(format!(
                "selection has {} entries for {} searchable stages",
                selection.len(),
                self.enc.len() + self.dec.len()
            )));
        }
        let t = fwd.tape;
        let mut sel = selection.iter();
        let pick = |arm: &StageArm, j: usize| -> Result<()> {
            if j >= arm.stacks.len() {
                return Err(Error::InvalidArg(format!(
                    "candidate index {j} out of range for stage {}",
                    arm.stage
                )));
            }
            Ok(())
        };
        let mut x = self.stem.forward(fwd, store, input)?;
        let mut skips = Vec::with_capacity(4);
        for (arm, down) in self.enc.iter().zip(&self.downs) {
            let j = *sel.next().expect("length checked");
            pick(arm, j)?;
            x = arm.stacks[j].forward(fwd, store, x)?;
            skips.push(x);
            x = down.forward(fwd, store, x)?;
        }
        x = self.mid.forward(fwd, store, x)?;
        for (up, arm) in self.ups.iter().zip(&self.dec) {
            let j = *sel.next().expect("length checked");
            pick(arm, j)?;
            x = up.forward(fwd, store, x)?;
            x = t.pixel_shuffle(x, 2)?;
            let skip = skips.pop().expect("one skip per decoder");
            x = t.add(x, skip)?;
            x = arm.stacks[j].forward(fwd, store, x)?;
        }
        let correction = self.head.forward(fwd, store, x)?;
        t.add(input, correction)
    }
}

// ---- loss terms ----

/// Expected cost penalty: sum over stages of dot(alpha, penalty vector).
pub fn penalty_loss(
    tape: &Tape,
    alphas: &[(StageId, Tensor)],
    table: &CostTable,
) -> Result<Tensor> {
    let mut total = tape.scalar(0.0);
    for (stage, alpha) in alphas {
        let p = table.penalties(*stage)?;
        let term = tape.dot_const(*alpha, &p)?;
        total = tape.add(total, term)?;
    }
    Ok(total)
}

/// Entropy regularizer: sum over stages of H(alpha)/ln(K), so each stage
/// contributes at most 1 regardless of roster size.
pub fn entropy_loss(tape: &Tape, alphas: &[(StageId, Tensor)]) -> Result<Tensor> {
    let mut total = tape.scalar(0.0);
    for (stage, alpha) in alphas {
        let k = tape.shape(*alpha)[0];
        if k < 2 {
            return Err(Error::InvalidArg(format!(
                "stage {stage} has {k} candidates; entropy normalization needs at least 2"
            )));
        }
        let h = tape.entropy(*alpha);
        total = tape.add(total, tape.scale(h, 1.0 / (k as Real).ln()))?;
    }
    Ok(total)
}

/// Geometric interpolation from `start` at epoch 0 to `end` at the final
/// epoch: start * (end/start)^(epoch/(epochs-1)).
pub fn lambda_schedule(start: Real, end: Real, epoch: usize, epochs: usize) -> Result<Real> {
    if start <= 0.0 || end <= 0.0 {
        return Err(Error::InvalidArg(format!(
            "lambda endpoints must be positive, got start={start}, end={end}"
        )));
    }
    if epochs == 0 || epoch >= epochs {
        return Err(Error::InvalidArg(format!(
            "epoch {epoch} out of range for {epochs} epochs"
        )));
    }
    if epochs == 1 {
        if start != end {
            return Err(Error::InvalidArg(
                "single-epoch schedule requires equal lambda endpoints".into(),
            ));
        }
        return Ok(start);
    }
    let frac = epoch as Real / (epochs - 1) as Real;
    Ok(start * (end / start).powf(frac))
}

// ---- training ----

/// Hyperparameters for a search or fine-tune run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub lr_weights: Real,
    pub lr_arch: Real,
    /// Penalty coefficient.
    pub beta: Real,
    pub lambda_start: Real,
    pub lambda_end: Real,
    pub temperature: Real,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArg(
                "epochs, steps_per_epoch and batch_size must be positive".into(),
            ));
        }
        if self.temperature <= 0.0 {
            return Err(Error::InvalidArg(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.lr_weights <= 0.0 || self.lr_arch < 0.0 {
            return Err(Error::InvalidArg("learning rates must be positive".into()));
        }
        lambda_schedule(self.lambda_start, self.lambda_end, 0, self.epochs)?;
        Ok(())
    }
}

/// Loss averages for one epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub lambda: Real,
    pub task: Real,
    pub penalty: Real,
    pub entropy: Real,
    pub total: Real,
}

/// Final mixture weights for one stage, in roster order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageAlphas {
    pub stage: StageId,
    pub candidates: Vec<CandidateSpec>,
    pub alpha: Vec<Real>,
}

/// Everything a search run produces besides the parameter store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchRun {
    pub config: TrainConfig,
    pub epochs: Vec<EpochTrace>,
    /// Mixture weights at the end of every epoch.
    pub history: Vec<Vec<StageAlphas>>,
    /// Final mixture weights (the last history entry).
    pub alphas: Vec<StageAlphas>,
    pub derived: UNetConfig,
}

/// A noisy/clean patch pair, both flattened [C,H,W].
pub type Pair = (Vec<Real>, Vec<Real>);

fn batch_tensor(tape: &Tape, pairs: &[&Pair], c: usize, h: usize, w: usize) -> Result<(Tensor, Tensor)> {
    let n = pairs.len();
    let mut noisy = Vec::with_capacity(n * c * h * w);
    let mut clean = Vec::with_capacity(n * c * h * w);
    for p in pairs {
        noisy.extend_from_slice(&p.0);
        clean.extend_from_slice(&p.1);
    }
    let shape = vec![n, c, h, w];
    Ok((tape.leaf(noisy, shape.clone())?, tape.leaf(clean, shape)?))
}

/// Trains the supernetwork jointly over block weights and architecture
/// logits, then derives the selected configuration from the final mixture
/// weights.
pub fn train_supernet(
    net: &SuperNet,
    store: &mut ParamStore,
    pairs: &[Pair],
    patch: (usize, usize),
    cfg: &TrainConfig,
    table: &CostTable,
) -> Result<SearchRun> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidArg("empty training set".into()));
    }
    let (h, w) = patch;
    let c = net.input_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr_weights, cfg.lr_arch);
    let mut traces = Vec::with_capacity(cfg.epochs);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lambda = lambda_schedule(cfg.lambda_start, cfg.lambda_end, epoch, cfg.epochs)?;
        let mut sums = [0.0; 4];
        for _ in 0..cfg.steps_per_epoch {
            let batch: Vec<&Pair> = (0..cfg.batch_size)
                .map(|_| pairs.choose(&mut rng).expect("non-empty"))
                .collect();
            let tape = Tape::new();
            let mut fwd = Fwd::new(&tape, true);
            let (noisy, clean) = batch_tensor(&tape, &batch, c, h, w)?;
            let (out, alphas) = net.forward(&mut fwd, store, noisy, cfg.temperature)?;
            let task = tape.mse(out, clean)?;
            let pen = penalty_loss(&tape, &alphas, table)?;
            let ent = entropy_loss(&tape, &alphas)?;
            let total = tape.add(
                task,
                tape.add(tape.scale(pen, cfg.beta), tape.scale(ent, lambda))?,
            )?;
            let task_v = tape.value(task);
            if !task_v.is_finite() {
                return Err(Error::Divergence(format!(
                    "task loss became {task_v} at epoch {epoch}"
                )));
            }
            tape.backward(total)?;
            let grads = fwd.grads();
            opt.step(store, &grads);
            fwd.apply_stat_updates(store);
            sums[0] += task_v;
            sums[1] += tape.value(pen);
            sums[2] += tape.value(ent);
            sums[3] += tape.value(total);
        }
        let n = cfg.steps_per_epoch as Real;
        traces.push(EpochTrace {
            epoch,
            lambda,
            task: sums[0] / n,
            penalty: sums[1] / n,
            entropy: sums[2] / n,
            total: sums[3] / n,
        });
        history.push(snapshot_alphas(net, store, cfg.temperature)?);
    }
    let alphas = history.last().expect("at least one epoch").clone();
    let derived =
        derive_architecture(net.width, net.input_channels, net.mid.spec, &alphas, table)?;
    Ok(SearchRun {
        config: cfg.clone(),
        epochs: traces,
        history,
        alphas,
        derived,
    })
}

/// Evaluates the current mixture weights of every searchable stage.
pub fn snapshot_alphas(
    net: &SuperNet,
    store: &ParamStore,
    temperature: Real,
) -> Result<Vec<StageAlphas>> {
    let tape = Tape::new();
    let mut fwd = Fwd::new(&tape, false);
    let mut out = Vec::with_capacity(8);
    for arm in net.arms() {
        let phi = fwd.param(store, arm.phi)?;
        let alpha = tape.softmax(phi, temperature)?;
        out.push(StageAlphas {
            stage: arm.stage,
            candidates: arm.candidates.clone(),
            alpha: tape.data(alpha).to_vec(),
        });
    }
    Ok(out)
}

/// Picks the highest-weight candidate per stage. Weights tied within 1e-12
/// resolve to the cheaper candidate (by raw MACs from the cost table), then
/// to the lower roster index.
pub fn derive_architecture(
    width: usize,
    input_channels: usize,
    mid: CandidateSpec,
    alphas: &[StageAlphas],
    table: &CostTable,
) -> Result<UNetConfig> {
    let mut config = UNetConfig::base(width, input_channels);
    config.mid = mid;
    for sa in alphas {
        if sa.alpha.len() != sa.candidates.len() || sa.candidates.is_empty() {
            return Err(Error::InvalidArg(format!(
                "stage {}: {} weights for {} candidates",
                sa.stage,
                sa.alpha.len(),
                sa.candidates.len()
            )));
        }
        let costs = table.stage(sa.stage).ok_or_else(|| Error::MissingCost {
            stage: sa.stage.to_string(),
            candidate: "*".into(),
        })?;
        // price candidates by spec, not position, so externally supplied
        // weight files cannot silently misalign with the table
        let raw_macs = |spec: CandidateSpec| -> Result<u64> {
            costs
                .entries
                .iter()
                .find(|e| e.spec == spec)
                .map(|e| e.raw_macs)
                .ok_or_else(|| Error::MissingCost {
                    stage: sa.stage.to_string(),
                    candidate: spec.to_string(),
                })
        };
        let max = sa.alpha.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
        let mut best: Option<usize> = None;
        for (j, &a) in sa.alpha.iter().enumerate() {
            if (max - a).abs() > 1e-12 {
                continue;
            }
            best = Some(match best {
                None => j,
                Some(b) if raw_macs(sa.candidates[j])? < raw_macs(sa.candidates[b])? => j,
                Some(b) => b,
            });
        }
        let j = best.expect("at least one weight attains the maximum");
        config.set_stage(sa.stage, sa.candidates[j]);
    }
    Ok(config)
}

/// Builds the derived network, inherits every matching weight from the
/// supernetwork (trunk directly, stage blocks from the selected candidate),
/// and returns it with its fresh store.
pub fn inherit_weights(
    config: &UNetConfig,
    net: &SuperNet,
    super_store: &ParamStore,
    seed: u64,
) -> Result<(UNet, ParamStore)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = config.clone();
    cfg.mid = net.mid.spec;
    let unet = UNet::build(&mut store, &mut rng, &cfg)?;
    // map each stage prefix to the selected candidate's prefix
    let mut prefix_map: Vec<(String, String)> = Vec::new();
    for arm in net.arms() {
        let spec = cfg.stage(arm.stage);
        let j = arm
            .candidates
            .iter()
            .position(|c| *c == spec)
            .ok_or_else(|| Error::MissingCost {
                stage: arm.stage.to_string(),
                candidate: spec.to_string(),
            })?;
        prefix_map.push((format!("{}.", arm.stage), format!("{}.cand{j}.", arm.stage)));
    }
    store.copy_from(super_store, |dst| {
        for (from, to) in &prefix_map {
            if let Some(rest) = dst.strip_prefix(from.as_str()) {
                return Some(format!("{to}{rest}"));
            }
        }
        Some(dst.to_string())
    })?;
    Ok((unet, store))
}

/// Trains a discrete network on the task loss alone. Returns the per-epoch
/// average MSE.
pub fn finetune(
    unet: &UNet,
    store: &mut ParamStore,
    pairs: &[Pair],
    patch: (usize, usize),
    cfg: &TrainConfig,
) -> Result<Vec<Real>> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidArg("empty training set".into()));
    }
    let (h, w) = patch;
    let c = unet.config.input_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr_weights, cfg.lr_arch);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let batch: Vec<&Pair> = (0..cfg.batch_size)
                .map(|_| pairs.choose(&mut rng).expect("non-empty"))
                .collect();
            let tape = Tape::new();
            let mut fwd = Fwd::new(&tape, true);
            let (noisy, clean) = batch_tensor(&tape, &batch, c, h, w)?;
            let out = unet.forward(&mut fwd, store, noisy)?;
            let task = tape.mse(out, clean)?;
            let v = tape.value(task);
            if !v.is_finite() {
                return Err(Error::Divergence(format!(
                    "task loss became {v} at epoch {epoch}"
                )));
            }
            tape.backward(task)?;
            let grads = fwd.grads();
            opt.step(store, &grads);
            fwd.apply_stat_updates(store);
            sum += v;
        }
        losses.push(sum / cfg.steps_per_epoch as Real);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests;
