//! Analytic complexity model: multiply-accumulate and parameter counts per
//! block and per network, penalty tables for the search, optional measured
//! latency blending, and non-dominated (Pareto) front computation.
//!
//! Counting conventions: a conv contributes Cout·(Cin/groups)·k²·Hout·Wout
//! MACs (bias add excluded, matching the usual GMAC convention); elementwise
//! and pooling ops contribute 1 MAC-equivalent per output element; layer norm
//! contributes 4 per element (mean, variance, normalize, affine); a folded
//! conv/batch-norm chain costs exactly the bare conv.

use serde::{Deserialize, Serialize};

use crate::blocks::{BlockKind, CandidateSpec, StageId, UNetConfig};
use crate::error::{Error, Result};
use crate::search::StageRoster;
use crate::tensor::Real;

/// MAC and parameter count of an op or subnetwork.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCost {
    pub macs: u64,
    pub params: u64,
    /// Whether the counted chain folds to a single conv at inference time.
    pub foldable: bool,
}

impl OpCost {
    fn add(self, other: OpCost) -> OpCost {
        OpCost {
            macs: self.macs + other.macs,
            params: self.params + other.params,
            foldable: self.foldable && other.foldable,
        }
    }

    pub fn gmacs(&self) -> f64 {
        self.macs as f64 / 1e9
    }
}

fn conv(cin: usize, cout: usize, k: usize, groups: usize, hout: usize, wout: usize) -> OpCost {
    let weights = (cout * (cin / groups) * k * k) as u64;
    OpCost {
        macs: weights * (hout * wout) as u64,
        params: weights + cout as u64,
        foldable: false,
    }
}

fn elementwise(n: u64) -> OpCost {
    OpCost {
        macs: n,
        params: 0,
        foldable: false,
    }
}

/// Cost of one block of the given kind at channel width `c` and spatial
/// resolution `h`x`w`. Batch size 1.
pub fn block_cost(kind: BlockKind, c: usize, h: usize, w: usize) -> OpCost {
    let hw = (h * w) as u64;
    let chw = c as u64 * hw;
    match kind {
        BlockKind::Alt3 => {
            // separable conv + folded bn + relu + residual
            let mut cost = conv(c, c, 3, c, h, w)
                .add(conv(c, c, 1, 1, h, w))
                .add(elementwise(chw)) // relu
                .add(elementwise(chw)); // residual add
            cost.params += 2 * c as u64; // bn affine
            cost.foldable = true;
            cost
        }
        kind => {
            let ln = OpCost {
                macs: 4 * chw,
                params: 2 * c as u64,
                foldable: false,
            };
            let mut cost = OpCost::default();
            if kind != BlockKind::Alt1 {
                cost = cost.add(ln);
            }
            cost = cost
                .add(conv(c, 2 * c, 1, 1, h, w)) // expand
                .add(conv(2 * c, 2 * c, 3, 2 * c, h, w)) // depthwise
                .add(elementwise(chw)); // gate multiply
            if kind != BlockKind::Alt2 {
                // attention: pool (1/output elem), 1x1 conv at 1x1, scale
                cost = cost
                    .add(elementwise(c as u64))
                    .add(conv(c, c, 1, 1, 1, 1))
                    .add(elementwise(chw));
            }
            cost = cost
                .add(conv(c, c, 1, 1, h, w)) // branch output
                .add(elementwise(chw)); // residual add
            if kind != BlockKind::Alt1 {
                cost = cost.add(ln);
            }
            cost.add(conv(c, 2 * c, 1, 1, h, w))
                .add(elementwise(chw))
                .add(conv(c, c, 1, 1, h, w))
                .add(elementwise(chw))
        }
    }
}

/// Cost of a candidate (count stacked blocks).
pub fn candidate_cost(spec: CandidateSpec, c: usize, h: usize, w: usize) -> OpCost {
    let one = block_cost(spec.kind, c, h, w);
    OpCost {
        macs: one.macs * spec.count as u64,
        params: one.params * spec.count as u64,
        foldable: one.foldable,
    }
}

/// Full-network cost at the given input resolution, including stem, head,
/// down/upsamplers, skip additions and the global residual.
pub fn network_cost(config: &UNetConfig, h: usize, w: usize) -> OpCost {
    let wd = config.width;
    let cin = config.input_channels;
    let mut cost = conv(cin, wd, 3, 1, h, w); // stem
    let stages = [
        StageId::Enc1,
        StageId::Enc2,
        StageId::Enc3,
        StageId::Enc4,
        StageId::Mid,
        StageId::Dec4,
        StageId::Dec3,
        StageId::Dec2,
        StageId::Dec1,
    ];
    for id in stages {
        let c = config.stage_width(id);
        let (sh, sw) = (h >> id.depth(), w >> id.depth());
        cost = cost.add(candidate_cost(config.stage(id), c, sh, sw));
    }
    for depth in 0..4 {
        let c = wd << depth;
        let (sh, sw) = (h >> depth, w >> depth);
        // stride-2 2x2 conv down
        cost = cost.add(conv(c, 2 * c, 2, 1, sh / 2, sw / 2));
        // 1x1 conv before pixel shuffle up (input 2c at half resolution)
        cost = cost.add(conv(2 * c, 4 * c, 1, 1, sh / 2, sw / 2));
        // skip addition at this depth
        cost = cost.add(elementwise(c as u64 * (sh * sw) as u64));
    }
    cost = cost.add(conv(wd, cin, 3, 1, h, w)); // head
    cost.add(elementwise(cin as u64 * (h * w) as u64)) // global residual
}

// ---- penalty table ----

/// Per-candidate penalty for one searchable stage. Entry order matches the
/// roster order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostEntry {
    pub spec: CandidateSpec,
    pub raw_macs: u64,
    pub latency_ms: Option<f64>,
    pub penalty: Real,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageCosts {
    pub stage: StageId,
    pub entries: Vec<CostEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostTable {
    pub width: usize,
    pub resolution: (usize, usize),
    /// Blend factor: penalty = eta·(macs/max) + (1−eta)·(latency/max),
    /// renormalized so the stage maximum is 1.
    pub eta: f64,
    pub stages: Vec<StageCosts>,
}

impl CostTable {
    pub fn stage(&self, id: StageId) -> Option<&StageCosts> {
        self.stages.iter().find(|s| s.stage == id)
    }

    /// Penalty vector for a stage in roster order; errors name the missing
    /// stage.
    pub fn penalties(&self, id: StageId) -> Result<Vec<Real>> {
        self.stage(id)
            .map(|s| s.entries.iter().map(|e| e.penalty).collect())
            .ok_or_else(|| Error::MissingCost {
                stage: id.to_string(),
                candidate: "*".into(),
            })
    }
}

/// Measured latency table ingested from a config file: one entry per
/// (stage, kind, count).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyTable {
    #[serde(default)]
    pub entry: Vec<LatencyEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyEntry {
    pub stage: StageId,
    pub kind: BlockKind,
    pub count: usize,
    pub latency_ms: f64,
}

impl LatencyTable {
    pub fn lookup(&self, stage: StageId, spec: CandidateSpec) -> Option<f64> {
        self.entry
            .iter()
            .find(|e| e.stage == stage && e.kind == spec.kind && e.count == spec.count)
            .map(|e| e.latency_ms)
    }
}

/// Blends normalized MAC and latency terms and renormalizes so the maximum
/// penalty in the stage is exactly 1.
pub fn normalize_blend(macs: &[u64], latency: Option<&[f64]>, eta: f64) -> Vec<Real> {
    let max_m = macs.iter().copied().max().unwrap_or(1).max(1) as f64;
    let max_l = latency
        .map(|l| l.iter().cloned().fold(0.0, f64::max))
        .unwrap_or(1.0)
        .max(f64::MIN_POSITIVE);
    let raw: Vec<f64> = macs
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mterm = *m as f64 / max_m;
            let lterm = latency.map_or(0.0, |l| l[i] / max_l);
            eta * mterm + (1.0 - eta) * lterm
        })
        .collect();
    let max_raw = raw.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    raw.iter().map(|v| (v / max_raw) as Real).collect()
}

/// Builds the per-stage penalty table for a roster set. With `eta < 1` every
/// candidate must have a measured latency; the error names the first
/// candidate lacking one.
pub fn build_cost_table(
    rosters: &[StageRoster],
    width: usize,
    resolution: (usize, usize),
    latency: Option<&LatencyTable>,
    eta: f64,
) -> Result<CostTable> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArg(format!("eta must be in [0,1], got {eta}")));
    }
    let (h, w) = resolution;
    let mut stages = Vec::new();
    for roster in rosters.iter().filter(|r| r.searchable) {
        let c = width << roster.stage.depth();
        let (sh, sw) = (h >> roster.stage.depth(), w >> roster.stage.depth());
        let macs: Vec<u64> = roster
            .candidates
            .iter()
            .map(|spec| candidate_cost(*spec, c, sh, sw).macs)
            .collect();
        let lats: Option<Vec<f64>> = if eta < 1.0 {
            let mut out = Vec::with_capacity(roster.candidates.len());
            for spec in &roster.candidates {
                let table = latency.ok_or_else(|| Error::MissingLatency {
                    stage: roster.stage.to_string(),
                    candidate: spec.to_string(),
                })?;
                out.push(table.lookup(roster.stage, *spec).ok_or_else(|| {
                    Error::MissingLatency {
                        stage: roster.stage.to_string(),
                        candidate: spec.to_string(),
                    }
                })?);
            }
            Some(out)
        } else {
            None
        };
        let penalties = normalize_blend(&macs, lats.as_deref(), eta);
        let entries = roster
            .candidates
            .iter()
            .enumerate()
            .map(|(i, spec)| CostEntry {
                spec: *spec,
                raw_macs: macs[i],
                latency_ms: lats.as_ref().map(|l| l[i]),
                penalty: penalties[i],
            })
            .collect();
        stages.push(StageCosts {
            stage: roster.stage,
            entries,
        });
    }
    Ok(CostTable {
        width,
        resolution,
        eta,
        stages,
    })
}

// ---- Pareto front ----

/// A (quality, cost) point: quality is better higher (PSNR dB), cost is
/// better lower (GMACs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub label: String,
    pub quality: f64,
    pub cost: f64,
}

/// Returns the non-dominated points sorted by cost ascending. A point is
/// dominated when another point has quality at least as high and cost at
/// most as high, with at least one strict.
pub fn pareto_front(points: &[ParetoPoint]) -> Result<Vec<ParetoPoint>> {
    if points.is_empty() {
        return Err(Error::InvalidArg("pareto_front on empty point set".into()));
    }
    if let Some(p) = points
        .iter()
        .find(|p| !p.quality.is_finite() || !p.cost.is_finite())
    {
        return Err(Error::InvalidArg(format!(
            "pareto point {} has non-finite coordinates",
            p.label
        )));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .cost
            .partial_cmp(&points[b].cost)
            .unwrap()
            .then(points[b].quality.partial_cmp(&points[a].quality).unwrap())
    });
    let mut front = Vec::new();
    let mut best_lower = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        // group of equal cost
        let mut j = i;
        while j < order.len() && points[order[j]].cost == points[order[i]].cost {
            j += 1;
        }
        let gmax = order[i..j]
            .iter()
            .map(|&k| points[k].quality)
            .fold(f64::NEG_INFINITY, f64::max);
        for &k in &order[i..j] {
            if points[k].quality == gmax && gmax > best_lower {
                front.push(points[k].clone());
            }
        }
        best_lower = best_lower.max(gmax);
        i = j;
    }
    Ok(front)
}

// ---- comparison report ----

/// Cost comparison of a derived configuration against the base network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigComparison {
    pub resolution: (usize, usize),
    pub base_gmacs: f64,
    pub derived_gmacs: f64,
    pub mac_ratio: f64,
    pub base_params: u64,
    pub derived_params: u64,
    /// Percent fewer parameters than base (positive means smaller).
    pub param_reduction_pct: f64,
}

pub fn compare_configs(
    derived: &UNetConfig,
    base: &UNetConfig,
    resolution: (usize, usize),
) -> ConfigComparison {
    let (h, w) = resolution;
    let b = network_cost(base, h, w);
    let d = network_cost(derived, h, w);
    ConfigComparison {
        resolution,
        base_gmacs: b.gmacs(),
        derived_gmacs: d.gmacs(),
        mac_ratio: d.macs as f64 / b.macs as f64,
        base_params: b.params,
        derived_params: d.params,
        param_reduction_pct: 100.0 * (1.0 - d.params as f64 / b.params as f64),
    }
}

#[cfg(test)]
mod tests;
