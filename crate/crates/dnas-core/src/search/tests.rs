use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::cost::{build_cost_table, candidate_cost, CostEntry, CostTable, StageCosts};

fn spec(kind: BlockKind, count: usize) -> CandidateSpec {
    CandidateSpec::new(kind, count)
}

#[test]
fn default_roster_shape_matches_reference_table() {
    let rosters = default_rosters();
    assert_eq!(rosters.len(), 9);
    let get = |id: StageId| rosters.iter().find(|r| r.stage == id).unwrap();
    assert_eq!(get(StageId::Enc1).candidates.len(), 10);
    assert_eq!(get(StageId::Enc2).candidates.len(), 10);
    assert_eq!(get(StageId::Enc3).candidates.len(), 16);
    assert_eq!(get(StageId::Enc4).candidates.len(), 32);
    for id in [StageId::Dec4, StageId::Dec3, StageId::Dec2, StageId::Dec1] {
        assert_eq!(get(id).candidates.len(), 10);
    }
    let mid = get(StageId::Mid);
    assert!(!mid.searchable);
    assert_eq!(mid.candidates, vec![spec(BlockKind::Alt0, 12)]);
    // conv alternative first, depths ascending, then the attention variants
    let enc1 = &get(StageId::Enc1).candidates;
    assert_eq!(enc1[0], spec(BlockKind::Alt3, 1));
    assert_eq!(enc1[3], spec(BlockKind::Alt3, 4));
    assert_eq!(enc1[4], spec(BlockKind::Alt0, 1));
    assert_eq!(enc1[9], spec(BlockKind::Alt2, 2));
}

#[test]
fn capped_rosters_keep_one_candidate_per_kind() {
    let rosters = capped_rosters(1);
    for r in rosters.iter().filter(|r| r.searchable) {
        assert_eq!(
            r.candidates,
            vec![
                spec(BlockKind::Alt3, 1),
                spec(BlockKind::Alt0, 1),
                spec(BlockKind::Alt1, 1),
                spec(BlockKind::Alt2, 1),
            ]
        );
    }
    let mid = rosters.iter().find(|r| r.stage == StageId::Mid).unwrap();
    assert_eq!(mid.candidates, vec![spec(BlockKind::Alt0, 1)]);
}

#[test]
fn lambda_schedule_is_geometric() {
    // endpoints hit exactly; midpoint is the geometric mean path
    assert_eq!(lambda_schedule(0.01, 1.0, 0, 3).unwrap(), 0.01);
    let mid = lambda_schedule(0.01, 1.0, 1, 3).unwrap();
    assert!((mid - 0.1).abs() < 1e-12, "midpoint {mid}");
    assert!((lambda_schedule(0.01, 1.0, 2, 3).unwrap() - 1.0).abs() < 1e-12);
    // constant schedule
    assert_eq!(lambda_schedule(0.5, 0.5, 0, 1).unwrap(), 0.5);
    // rejected inputs
    assert!(lambda_schedule(0.0, 1.0, 0, 3).is_err());
    assert!(lambda_schedule(0.1, 1.0, 3, 3).is_err());
    assert!(lambda_schedule(0.1, 1.0, 0, 1).is_err());
}

fn alpha_pair(tape: &Tape, stage: StageId, alpha: Vec<Real>) -> (StageId, Tensor) {
    let n = alpha.len();
    (stage, tape.leaf(alpha, vec![n]).unwrap())
}

#[test]
fn entropy_loss_normalization() {
    let tape = Tape::new();
    let uniform4 = alpha_pair(&tape, StageId::Enc1, vec![0.25; 4]);
    let uniform8 = alpha_pair(&tape, StageId::Enc2, vec![0.125; 8]);
    let onehot = alpha_pair(&tape, StageId::Enc3, vec![1.0, 0.0, 0.0]);
    let l = entropy_loss(&tape, &[uniform4, uniform8]).unwrap();
    assert!((tape.value(l) - 2.0).abs() < 1e-12);
    let l0 = entropy_loss(&tape, &[onehot]).unwrap();
    assert!(tape.value(l0).abs() < 1e-12);
    // a skewed distribution, against an independently computed value
    let a = vec![0.7, 0.1, 0.1, 0.1];
    let expect = -(0.7f64 * 0.7f64.ln() + 3.0 * 0.1 * 0.1f64.ln()) / 4f64.ln();
    let ls = entropy_loss(&tape, &[alpha_pair(&tape, StageId::Enc4, a)]).unwrap();
    assert!((tape.value(ls) - expect).abs() < 1e-12);
    // a single candidate has no entropy to normalize
    let single = alpha_pair(&tape, StageId::Dec1, vec![1.0]);
    assert!(entropy_loss(&tape, &[single]).is_err());
}

fn toy_table(stage: StageId, penalties: &[Real]) -> CostTable {
    CostTable {
        width: 8,
        resolution: (32, 32),
        eta: 1.0,
        stages: vec![StageCosts {
            stage,
            entries: penalties
                .iter()
                .enumerate()
                .map(|(i, p)| CostEntry {
                    spec: spec(BlockKind::Alt0, i + 1),
                    raw_macs: 100 * (i as u64 + 1),
                    latency_ms: None,
                    penalty: *p,
                })
                .collect(),
        }],
    }
}

#[test]
fn penalty_loss_is_expected_stage_cost() {
    let tape = Tape::new();
    let table = toy_table(StageId::Enc1, &[0.3, 0.7, 1.0]);
    // one-hot picks out a single penalty
    let onehot = alpha_pair(&tape, StageId::Enc1, vec![0.0, 1.0, 0.0]);
    let l = penalty_loss(&tape, &[onehot], &table).unwrap();
    assert!((tape.value(l) - 0.7).abs() < 1e-12);
    // general mixtures take the dot product
    let mixed = alpha_pair(&tape, StageId::Enc1, vec![0.5, 0.25, 0.25]);
    let lm = penalty_loss(&tape, &[mixed], &table).unwrap();
    assert!((tape.value(lm) - (0.5 * 0.3 + 0.25 * 0.7 + 0.25)).abs() < 1e-12);
    // unknown stage errors
    let other = alpha_pair(&tape, StageId::Dec2, vec![1.0]);
    assert!(penalty_loss(&tape, &[other], &table).is_err());
}

fn derive_one(stage: StageId, candidates: Vec<CandidateSpec>, alpha: Vec<Real>) -> CandidateSpec {
    let rosters = vec![StageRoster {
        stage,
        searchable: true,
        candidates: candidates.clone(),
    }];
    let table = build_cost_table(&rosters, 8, (64, 64), None, 1.0).unwrap();
    let alphas = vec![StageAlphas {
        stage,
        candidates,
        alpha,
    }];
    derive_architecture(8, 3, spec(BlockKind::Alt0, 12), &alphas, &table)
        .unwrap()
        .stage(stage)
}

#[test]
fn derive_picks_argmax() {
    let cands = vec![
        spec(BlockKind::Alt3, 1),
        spec(BlockKind::Alt0, 1),
        spec(BlockKind::Alt1, 2),
    ];
    let got = derive_one(StageId::Enc2, cands, vec![0.2, 0.5, 0.3]);
    assert_eq!(got, spec(BlockKind::Alt0, 1));
}

#[test]
fn derive_breaks_ties_toward_cheaper_then_lower_index() {
    // alt0 (index 0) costs more than alt3 (index 1): the tie goes to alt3
    let got = derive_one(
        StageId::Enc1,
        vec![spec(BlockKind::Alt0, 1), spec(BlockKind::Alt3, 1)],
        vec![0.5, 0.5],
    );
    assert_eq!(got, spec(BlockKind::Alt3, 1));
    // identical candidates tie on cost too: the lower index wins (the
    // derived spec is the same either way, so check via distinct counts of
    // equal-cost kinds is impossible; duplicate specs exercise the path)
    let got = derive_one(
        StageId::Enc1,
        vec![spec(BlockKind::Alt1, 1), spec(BlockKind::Alt1, 1)],
        vec![0.5, 0.5],
    );
    assert_eq!(got, spec(BlockKind::Alt1, 1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn derive_is_permutation_invariant(
        logits in proptest::collection::vec(-3.0f64..3.0, 4),
        perm_seed in 0u64..1000,
    ) {
        let cands = vec![
            spec(BlockKind::Alt3, 1),
            spec(BlockKind::Alt0, 1),
            spec(BlockKind::Alt1, 1),
            spec(BlockKind::Alt2, 1),
        ];
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let alpha: Vec<Real> = logits.iter().map(|l| l.exp() / z).collect();
        let baseline = derive_one(StageId::Enc3, cands.clone(), alpha.clone());
        let mut idx = [0usize, 1, 2, 3];
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..4).rev() {
            idx.swap(i, rng.gen_range(0..=i));
        }
        let pcands: Vec<CandidateSpec> = idx.iter().map(|&i| cands[i]).collect();
        let palpha: Vec<Real> = idx.iter().map(|&i| alpha[i]).collect();
        prop_assert_eq!(derive_one(StageId::Enc3, pcands, palpha), baseline);
    }
}

// ---- supernet tests ----

fn toy_pairs(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Vec<Pair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let clean: Vec<Real> = (0..c * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
            let noisy: Vec<Real> = clean
                .iter()
                .map(|v| (v + rng.gen_range(-0.1..0.1)).clamp(0.0, 1.0))
                .collect();
            (noisy, clean)
        })
        .collect()
}

fn toy_supernet(seed: u64) -> (SuperNet, ParamStore, Vec<StageRoster>) {
    let rosters = capped_rosters(1);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = SuperNet::build(&mut store, &mut rng, 2, 1, &rosters).unwrap();
    (net, store, rosters)
}

#[test]
fn supernet_forward_preserves_shape() {
    let (net, store, _) = toy_supernet(1);
    let tape = Tape::new();
    let mut fwd = Fwd::new(&tape, false);
    let x = tape.leaf(vec![0.5; 16 * 16], vec![1, 1, 16, 16]).unwrap();
    let (y, alphas) = net.forward(&mut fwd, &store, x, 1.0).unwrap();
    assert_eq!(tape.shape(y), vec![1, 1, 16, 16]);
    assert_eq!(alphas.len(), 8);
    for (_, a) in &alphas {
        let v = tape.data(*a);
        assert_eq!(v.len(), 4);
        assert!((v.iter().sum::<Real>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn one_hot_mixture_equals_selected_candidate() {
    let (net, mut store, _) = toy_supernet(2);
    let selection = [0usize, 1, 2, 3, 0, 1, 2, 3];
    for (arm, &j) in net.arms().zip(selection.iter()) {
        let phi = store.data_mut(arm.phi);
        phi[j] = 1000.0;
    }
    let input = vec![0.3; 16 * 16];
    let tape = Tape::new();
    let mut fwd = Fwd::new(&tape, false);
    let x = tape.leaf(input.clone(), vec![1, 1, 16, 16]).unwrap();
    let (mixed, _) = net.forward(&mut fwd, &store, x, 1.0).unwrap();
    let tape2 = Tape::new();
    let mut fwd2 = Fwd::new(&tape2, false);
    let x2 = tape2.leaf(input, vec![1, 1, 16, 16]).unwrap();
    let picked = net.forward_selected(&mut fwd2, &store, x2, &selection).unwrap();
    assert_eq!(*tape.data(mixed), *tape2.data(picked));
}

#[test]
fn inherited_network_reproduces_selected_supernet_path() {
    let (net, store, rosters) = toy_supernet(3);
    let selection = [1usize, 0, 3, 2, 1, 0, 3, 2];
    let mut config = UNetConfig::base(2, 1);
    for (roster, &j) in rosters.iter().filter(|r| r.searchable).zip(selection.iter()) {
        config.set_stage(roster.stage, roster.candidates[j]);
    }
    let (unet, dstore) = inherit_weights(&config, &net, &store, 9).unwrap();
    assert_eq!(unet.config.mid, spec(BlockKind::Alt0, 1));

    let input: Vec<Real> = (0..16 * 16).map(|i| (i as Real * 0.37).sin() * 0.5 + 0.5).collect();
    let tape = Tape::new();
    let mut fwd = Fwd::new(&tape, false);
    let x = tape.leaf(input.clone(), vec![1, 1, 16, 16]).unwrap();
    let from_super = net.forward_selected(&mut fwd, &store, x, &selection).unwrap();
    let tape2 = Tape::new();
    let mut fwd2 = Fwd::new(&tape2, false);
    let x2 = tape2.leaf(input, vec![1, 1, 16, 16]).unwrap();
    let from_unet = unet.forward(&mut fwd2, &dstore, x2).unwrap();
    let a = tape.data(from_super);
    let b = tape2.data(from_unet);
    for (u, v) in a.iter().zip(b.iter()) {
        assert!((u - v).abs() < 1e-12);
    }
}

fn toy_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        steps_per_epoch: 2,
        batch_size: 1,
        lr_weights: 1e-3,
        lr_arch: 1e-2,
        beta: 0.1,
        lambda_start: 0.01,
        lambda_end: 1.0,
        temperature: 1.0,
        seed: 7,
    }
}

#[test]
fn search_run_is_deterministic() {
    let rosters = capped_rosters(1);
    let table = build_cost_table(&rosters, 2, (16, 16), None, 1.0).unwrap();
    let pairs = toy_pairs(4, 1, 16, 16, 11);
    let cfg = toy_train_config();
    let run_once = || {
        let (net, mut store, _) = toy_supernet(5);
        let run = train_supernet(&net, &mut store, &pairs, (16, 16), &cfg, &table).unwrap();
        serde_json::to_string(&run).unwrap()
    };
    let a = run_once();
    assert_eq!(a, run_once());
    let run: SearchRun = serde_json::from_str(&a).unwrap();
    assert_eq!(run.epochs.len(), 2);
    assert!(run.epochs.iter().all(|e| e.total.is_finite()));
    assert_eq!(run.alphas.len(), 8);
    run.derived.validate().unwrap();
}

#[test]
fn entropy_term_drives_mixtures_toward_one_hot() {
    let rosters = capped_rosters(1);
    let table = build_cost_table(&rosters, 2, (16, 16), None, 1.0).unwrap();
    let pairs = toy_pairs(4, 1, 16, 16, 13);
    let cfg = TrainConfig {
        epochs: 4,
        steps_per_epoch: 4,
        lr_arch: 0.05,
        beta: 0.5,
        lambda_start: 1.0,
        lambda_end: 4.0,
        ..toy_train_config()
    };
    let (net, mut store, _) = toy_supernet(6);
    let run = train_supernet(&net, &mut store, &pairs, (16, 16), &cfg, &table).unwrap();
    let first = run.epochs.first().unwrap().entropy;
    let last = run.epochs.last().unwrap().entropy;
    assert!(last < first, "entropy {first} -> {last}");
}

#[test]
fn non_finite_loss_reports_divergence() {
    let rosters = capped_rosters(1);
    let table = build_cost_table(&rosters, 2, (16, 16), None, 1.0).unwrap();
    let mut pairs = toy_pairs(1, 1, 16, 16, 17);
    pairs[0].0[5] = Real::NAN;
    let (net, mut store, _) = toy_supernet(8);
    let err =
        train_supernet(&net, &mut store, &pairs, (16, 16), &toy_train_config(), &table).unwrap_err();
    assert!(matches!(err, Error::Divergence(_)), "{err}");
}

#[test]
fn finetune_reduces_task_loss() {
    let mut config = UNetConfig::base(2, 1);
    for id in StageId::SEARCHABLE {
        config.set_stage(id, spec(BlockKind::Alt3, 1));
    }
    config.mid = spec(BlockKind::Alt0, 1);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let unet = UNet::build(&mut store, &mut rng, &config).unwrap();
    unet.identity_init(&mut store);
    // identity starts well off target: the net must learn a halving map
    let pairs: Vec<Pair> = toy_pairs(6, 1, 16, 16, 23)
        .into_iter()
        .map(|(noisy, _)| {
            let clean = noisy.iter().map(|v| 0.5 * v).collect();
            (noisy, clean)
        })
        .collect();
    let cfg = TrainConfig {
        epochs: 3,
        steps_per_epoch: 6,
        lr_weights: 5e-3,
        ..toy_train_config()
    };
    let losses = finetune(&unet, &mut store, &pairs, (16, 16), &cfg).unwrap();
    assert_eq!(losses.len(), 3);
    assert!(losses.last().unwrap() < losses.first().unwrap(), "{losses:?}");
}

#[test]
fn train_config_validation() {
    let mut cfg = toy_train_config();
    cfg.temperature = 0.0;
    assert!(cfg.validate().is_err());
    let mut cfg = toy_train_config();
    cfg.epochs = 1; // unequal lambda endpoints need at least two epochs
    assert!(cfg.validate().is_err());
    let mut cfg = toy_train_config();
    cfg.lambda_start = -1.0;
    assert!(cfg.validate().is_err());
}

#[test]
fn candidate_cost_used_for_tie_breaks_is_positive() {
    for r in default_rosters().iter().filter(|r| r.searchable) {
        for c in &r.candidates {
            assert!(candidate_cost(*c, 8, 32, 32).macs > 0);
        }
    }
}
