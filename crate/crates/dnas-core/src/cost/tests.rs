use proptest::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::blocks::{BlockKind, CandidateSpec, StageId, UNet, UNetConfig};
use crate::params::ParamStore;
use crate::search::{capped_rosters, default_rosters};

#[test]
fn alt3_block_hand_count() {
    // c=4, 8x8: depthwise 4*9*64, pointwise 16*64, relu 256, residual 256
    let cost = block_cost(BlockKind::Alt3, 4, 8, 8);
    assert_eq!(cost.macs, 2304 + 1024 + 256 + 256);
    // dw 36+4, pw 16+4, bn affine 8
    assert_eq!(cost.params, 40 + 20 + 8);
    assert!(cost.foldable);
}

#[test]
fn alt0_block_hand_count() {
    // c=2, 4x4 (hw=16, chw=32), counted term by term
    let cost = block_cost(BlockKind::Alt0, 2, 4, 4);
    let macs = 128  // ln1: 4*chw
        + 128       // expand 4*2*16
        + 576       // depthwise 4*1*9*16
        + 32        // gate
        + 2 + 4 + 32 // pool, 1x1 attention conv, channel scale
        + 64 + 32   // branch out, residual
        + 128       // ln2
        + 128 + 32 + 64 + 32; // ffn expand, gate, ffn out, residual
    assert_eq!(cost.macs, macs);
    assert_eq!(cost.params, 4 + 12 + 40 + 6 + 6 + 4 + 12 + 6);
    assert!(!cost.foldable);
}

#[test]
fn per_block_mac_ordering() {
    for c in [8usize, 16, 64] {
        let m = |k| block_cost(k, c, 32, 32).macs;
        assert!(m(BlockKind::Alt3) < m(BlockKind::Alt2));
        assert!(m(BlockKind::Alt2) < m(BlockKind::Alt0));
        assert!(m(BlockKind::Alt1) < m(BlockKind::Alt0));
    }
}

#[test]
fn candidate_cost_is_linear_in_count() {
    let one = candidate_cost(CandidateSpec::new(BlockKind::Alt1, 1), 8, 16, 16);
    let three = candidate_cost(CandidateSpec::new(BlockKind::Alt1, 3), 8, 16, 16);
    assert_eq!(three.macs, 3 * one.macs);
    assert_eq!(three.params, 3 * one.params);
}

#[test]
fn network_params_match_built_store() {
    let mut config = UNetConfig::base(4, 3);
    config.enc[0] = CandidateSpec::new(BlockKind::Alt3, 2);
    config.enc[2] = CandidateSpec::new(BlockKind::Alt1, 1);
    config.dec[1] = CandidateSpec::new(BlockKind::Alt2, 3);
    config.mid = CandidateSpec::new(BlockKind::Alt0, 2);
    let mut store = ParamStore::new();
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    UNet::build(&mut store, &mut rng, &config).unwrap();
    let counted = network_cost(&config, 32, 32).params;
    assert_eq!(counted as usize, store.trainable_scalars());
}

fn table1_derived(width: usize) -> UNetConfig {
    let mut c = UNetConfig::base(width, 3);
    c.enc = [
        CandidateSpec::new(BlockKind::Alt0, 2),
        CandidateSpec::new(BlockKind::Alt3, 1),
        CandidateSpec::new(BlockKind::Alt3, 2),
        CandidateSpec::new(BlockKind::Alt2, 6),
    ];
    c.dec = [
        CandidateSpec::new(BlockKind::Alt3, 1),
        CandidateSpec::new(BlockKind::Alt3, 2),
        CandidateSpec::new(BlockKind::Alt3, 2),
        CandidateSpec::new(BlockKind::Alt0, 1),
    ];
    c
}

#[test]
fn reference_network_budgets() {
    let base = UNetConfig::base(64, 3);
    let derived = table1_derived(64);
    let cmp = compare_configs(&derived, &base, (256, 256));
    assert!(
        (cmp.base_gmacs - 65.0).abs() / 65.0 < 0.15,
        "base gmacs {}",
        cmp.base_gmacs
    );
    assert!(
        (cmp.derived_gmacs - 42.0).abs() / 42.0 < 0.20,
        "derived gmacs {}",
        cmp.derived_gmacs
    );
    assert!(cmp.mac_ratio <= 0.75, "ratio {}", cmp.mac_ratio);
    assert!(
        (cmp.param_reduction_pct - 12.0).abs() <= 5.0,
        "param reduction {}",
        cmp.param_reduction_pct
    );
}

#[test]
fn table_normalizes_stage_max_to_one() {
    let rosters = default_rosters();
    let table = build_cost_table(&rosters, 32, (256, 256), None, 1.0).unwrap();
    assert_eq!(table.stages.len(), 8);
    for stage in &table.stages {
        let max = stage
            .entries
            .iter()
            .map(|e| e.penalty)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(max, 1.0, "stage {}", stage.stage);
        for e in &stage.entries {
            assert!(e.penalty > 0.0 && e.penalty <= 1.0);
        }
    }
}

#[test]
fn table_penalty_ordering_tracks_macs() {
    let table = build_cost_table(&default_rosters(), 32, (256, 256), None, 1.0).unwrap();
    let enc1 = table.stage(StageId::Enc1).unwrap();
    let penalty = |kind, count| {
        enc1.entries
            .iter()
            .find(|e| e.spec == CandidateSpec::new(kind, count))
            .unwrap()
            .penalty
    };
    assert!(penalty(BlockKind::Alt3, 2) < penalty(BlockKind::Alt2, 2));
    assert!(penalty(BlockKind::Alt2, 2) < penalty(BlockKind::Alt0, 2));
    assert!(penalty(BlockKind::Alt3, 1) < penalty(BlockKind::Alt3, 2));
}

#[test]
fn blended_table_requires_latency() {
    let rosters = capped_rosters(1);
    let err = build_cost_table(&rosters, 8, (64, 64), None, 0.5).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("enc1") && msg.contains("1xalt3"), "{msg}");

    let mut lat = LatencyTable::default();
    for r in rosters.iter().filter(|r| r.searchable) {
        for (i, spec) in r.candidates.iter().enumerate() {
            lat.entry.push(LatencyEntry {
                stage: r.stage,
                kind: spec.kind,
                count: spec.count,
                latency_ms: 1.0 + i as f64,
            });
        }
    }
    let table = build_cost_table(&rosters, 8, (64, 64), Some(&lat), 0.5).unwrap();
    for stage in &table.stages {
        assert!(stage.entries.iter().all(|e| e.latency_ms.is_some()));
    }
}

#[test]
fn blend_scale_invariance() {
    let macs = [10u64, 40, 25, 60];
    let lat = [2.0, 1.0, 3.0, 1.5];
    let p1 = normalize_blend(&macs, Some(&lat), 0.3);
    let macs_scaled: Vec<u64> = macs.iter().map(|m| m * 7).collect();
    let lat_scaled: Vec<f64> = lat.iter().map(|l| l * 100.0).collect();
    let p2 = normalize_blend(&macs_scaled, Some(&lat_scaled), 0.3);
    for (a, b) in p1.iter().zip(&p2) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(p1.iter().cloned().fold(f64::MIN, f64::max) == 1.0);
}

fn pt(label: &str, quality: f64, cost: f64) -> ParetoPoint {
    ParetoPoint {
        label: label.into(),
        quality,
        cost,
    }
}

#[test]
fn pareto_front_examples() {
    let points = vec![
        pt("a", 40.0, 60.0),
        pt("b", 42.0, 65.0),
        pt("c", 39.0, 70.0), // dominated by b
        pt("d", 41.0, 50.0),
        pt("e", 41.0, 50.0), // duplicate of d, kept
        pt("f", 40.0, 50.0), // dominated within equal-cost group
    ];
    let front = pareto_front(&points).unwrap();
    let labels: Vec<&str> = front.iter().map(|p| p.label.as_str()).collect();
    assert_eq!(labels, ["d", "e", "b"]);
    assert!(front.windows(2).all(|w| w[0].cost <= w[1].cost));

    assert!(pareto_front(&[]).is_err());
    assert!(pareto_front(&[pt("nan", f64::NAN, 1.0)]).is_err());
}

fn dominated(p: &ParetoPoint, q: &ParetoPoint) -> bool {
    q.quality >= p.quality && q.cost <= p.cost && (q.quality > p.quality || q.cost < p.cost)
}

proptest! {
    #[test]
    fn pareto_front_matches_quadratic_oracle(
        raw in proptest::collection::vec((0u8..6, 0u8..6), 1..20)
    ) {
        let points: Vec<ParetoPoint> = raw
            .iter()
            .enumerate()
            .map(|(i, (q, c))| pt(&format!("p{i}"), *q as f64, *c as f64))
            .collect();
        let front = pareto_front(&points).unwrap();
        let oracle: Vec<&ParetoPoint> = points
            .iter()
            .filter(|p| !points.iter().any(|q| dominated(p, q)))
            .collect();
        prop_assert_eq!(front.len(), oracle.len());
        for p in &front {
            prop_assert!(oracle.iter().any(|q| q.label == p.label));
        }
    }

    #[test]
    fn blend_max_is_always_one(macs in proptest::collection::vec(1u64..1_000_000, 1..12)) {
        let p = normalize_blend(&macs, None, 1.0);
        let max = p.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert!((max - 1.0).abs() < 1e-15);
        prop_assert!(p.iter().all(|v| *v > 0.0 && *v <= 1.0));
    }
}
