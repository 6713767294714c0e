use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::store_max_rel_error;
use crate::params::{Fwd, ParamGroup};
use crate::tensor::Tape;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Real> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn run_block(block: &Block, store: &ParamStore, x: &[Real], shape: &[usize], training: bool) -> Vec<Real> {
    let tape = Tape::new();
    let mut fwd = Fwd::new(&tape, training);
    let xt = tape.leaf(x.to_vec(), shape.to_vec()).unwrap();
    let y = block.forward(&mut fwd, store, xt).unwrap();
    assert_eq!(tape.shape(y), shape, "block must preserve NCHW");
    (*tape.data(y)).clone()
}

#[test]
fn every_kind_preserves_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shape = [1usize, 8, 16, 16];
    let x = rand_vec(&mut rng, shape.iter().product());
    for kind in BlockKind::ALL {
        let mut store = ParamStore::new();
        let block = Block::new(&mut store, &mut rng, "b", 8, kind).unwrap();
        run_block(&block, &store, &x, &shape, false);
        run_block(&block, &store, &x, &shape, true);
    }
}

#[test]
fn zeroed_branches_make_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shape = [2usize, 4, 5, 5];
    let x = rand_vec(&mut rng, shape.iter().product());
    for kind in BlockKind::ALL {
        let mut store = ParamStore::new();
        let block = Block::new(&mut store, &mut rng, "b", 4, kind).unwrap();
        block.zero_branch_outputs(&mut store);
        for training in [false, true] {
            let y = run_block(&block, &store, &x, &shape, training);
            for (a, e) in y.iter().zip(x.iter()) {
                assert!((a - e).abs() < 1e-12, "{kind} not identity (training={training})");
            }
        }
    }
}

#[test]
fn alt1_differs_from_alt0_on_constant_input() {
    // layer norm zeroes a constant input; without it the conv stack sees the
    // constant directly
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shape = [1usize, 4, 4, 4];
    let x = vec![0.7; shape.iter().product()];
    let mut s0 = ParamStore::new();
    let alt0 = Block::new(&mut s0, &mut rng, "b", 4, BlockKind::Alt0).unwrap();
    let mut s1 = ParamStore::new();
    let alt1 = Block::new(&mut s1, &mut rng, "b", 4, BlockKind::Alt1).unwrap();
    // identical weights for the layers both kinds share
    s1.copy_from(&s0, |name| {
        s0.id_by_name(name).map(|_| name.to_string())
    })
    .unwrap();
    let y0 = run_block(&alt0, &s0, &x, &shape, false);
    let y1 = run_block(&alt1, &s1, &x, &shape, false);
    let max_diff = y0
        .iter()
        .zip(y1.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, Real::max);
    assert!(max_diff > 1e-6, "expected distinct outputs, max diff {max_diff}");
}

#[test]
fn alt2_equals_alt0_with_unit_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shape = [1usize, 4, 4, 4];
    let x = rand_vec(&mut rng, shape.iter().product());
    let mut s0 = ParamStore::new();
    let alt0 = Block::new(&mut s0, &mut rng, "b", 4, BlockKind::Alt0).unwrap();
    let mut s2 = ParamStore::new();
    let alt2 = Block::new(&mut s2, &mut rng, "b", 4, BlockKind::Alt2).unwrap();
    s2.copy_from(&s0, |name| {
        s0.id_by_name(name).map(|_| name.to_string())
    })
    .unwrap();
    // force the attention scale to exactly 1
    if let Block::Naf(b) = &alt0 {
        let sca = b.sca.as_ref().unwrap();
        sca.zero(&mut s0);
        s0.data_mut(sca.bias).iter_mut().for_each(|v| *v = 1.0);
    }
    let y0 = run_block(&alt0, &s0, &x, &shape, false);
    let y2 = run_block(&alt2, &s2, &x, &shape, false);
    for (a, b) in y0.iter().zip(y2.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn block_gradients_all_kinds() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for kind in BlockKind::ALL {
        for training in [false, true] {
            let mut store = ParamStore::new();
            let block = Block::new(&mut store, &mut rng, "b", 4, kind).unwrap();
            let x = rand_vec(&mut rng, 2 * 4 * 3 * 3);
            let xid = store
                .add("x", x, vec![2, 4, 3, 3], ParamGroup::Weight)
                .unwrap();
            let err = store_max_rel_error(&mut store, training, &|fwd, store| {
                let xt = fwd.param(store, xid)?;
                let y = block.forward(fwd, store, xt)?;
                let sq = fwd.tape.mul(y, y)?;
                Ok(fwd.tape.sum(sq))
            })
            .unwrap();
            assert!(
                err < 1e-4,
                "{kind} (training={training}) gradient error {err:.3e}"
            );
        }
    }
}

#[test]
fn fold_identity_bn_keeps_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = rand_vec(&mut rng, 4 * 2 * 3 * 3);
    let b = rand_vec(&mut rng, 4);
    let (fw, fb) = fold_conv_bn(
        &w,
        &b,
        4,
        &[0.0; 4],
        &[1.0; 4],
        &[1.0; 4],
        &[0.0; 4],
        0.0,
    )
    .unwrap();
    assert_eq!(fw, w);
    assert_eq!(fb, b);
}

#[test]
fn fold_matches_conv_then_bn() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..100 {
        let (cin, cout) = (3, 4);
        let w = rand_vec(&mut rng, cout * cin * 9);
        let b = rand_vec(&mut rng, cout);
        let mean = rand_vec(&mut rng, cout);
        let var: Vec<Real> = (0..cout).map(|_| rng.gen_range(0.05..2.0)).collect();
        let gamma = rand_vec(&mut rng, cout);
        let beta = rand_vec(&mut rng, cout);
        let (fw, fb) = fold_conv_bn(&w, &b, cout, &mean, &var, &gamma, &beta, BN_EPS).unwrap();

        // closed form: kernel scaled by gamma/sqrt(var+eps) per output channel
        for co in 0..cout {
            let s = gamma[co] / (var[co] + BN_EPS).sqrt();
            for i in 0..cin * 9 {
                assert!((fw[co * cin * 9 + i] - w[co * cin * 9 + i] * s).abs() < 1e-12);
            }
        }

        let x = rand_vec(&mut rng, cin * 6 * 6);
        let tape = Tape::new();
        let xt = tape.leaf(x.clone(), vec![1, cin, 6, 6]).unwrap();
        let wt = tape.leaf(w.clone(), vec![cout, cin, 3, 3]).unwrap();
        let bt = tape.leaf(b.clone(), vec![cout]).unwrap();
        let conv = tape.conv2d(xt, wt, Some(bt), 1, 1, 1).unwrap();
        let mt = tape.leaf(mean.clone(), vec![cout]).unwrap();
        let vt = tape.leaf(var.clone(), vec![cout]).unwrap();
        let gt = tape.leaf(gamma.clone(), vec![cout]).unwrap();
        let et = tape.leaf(beta.clone(), vec![cout]).unwrap();
        let unfolded = tape.batch_norm_infer(conv, mt, vt, gt, et, BN_EPS).unwrap();

        let fwt = tape.leaf(fw, vec![cout, cin, 3, 3]).unwrap();
        let fbt = tape.leaf(fb, vec![cout]).unwrap();
        let folded = tape.conv2d(xt, fwt, Some(fbt), 1, 1, 1).unwrap();
        let max_diff = tape
            .data(folded)
            .iter()
            .zip(tape.data(unfolded).iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, Real::max);
        assert!(max_diff < 1e-5, "trial {trial}: folded deviates by {max_diff}");
    }
}

#[test]
fn fold_rejects_nonpositive_variance() {
    let res = fold_conv_bn(&[1.0], &[0.0], 1, &[0.0], &[-1e-5], &[1.0], &[0.0], 0.0);
    assert!(res.is_err());
}

#[test]
fn unet_identity_and_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let config = UNetConfig::base(4, 3);
    let mut store = ParamStore::new();
    let net = UNet::build(&mut store, &mut rng, &config).unwrap();
    net.identity_init(&mut store);
    let shape = [1usize, 3, 16, 16];
    let x = rand_vec(&mut rng, shape.iter().product());
    let tape = Tape::new();
    let mut fwd = Fwd::new(&tape, false);
    let xt = tape.leaf(x.clone(), shape.to_vec()).unwrap();
    let y = net.forward(&mut fwd, &store, xt).unwrap();
    assert_eq!(tape.shape(y), shape);
    for (a, e) in tape.data(y).iter().zip(x.iter()) {
        assert!((a - e).abs() < 1e-10);
    }
}

#[test]
fn unet_shape_round_trip_mixed_kinds() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut config = UNetConfig::base(4, 3);
    config.enc[1] = CandidateSpec::new(BlockKind::Alt3, 1);
    config.enc[3] = CandidateSpec::new(BlockKind::Alt2, 2);
    config.dec[0] = CandidateSpec::new(BlockKind::Alt3, 1);
    config.dec[3] = CandidateSpec::new(BlockKind::Alt1, 1);
    config.mid = CandidateSpec::new(BlockKind::Alt0, 2);
    let mut store = ParamStore::new();
    let net = UNet::build(&mut store, &mut rng, &config).unwrap();
    let shape = [2usize, 3, 16, 16];
    let x = rand_vec(&mut rng, shape.iter().product());
    let tape = Tape::new();
    let mut fwd = Fwd::new(&tape, true);
    let xt = tape.leaf(x, shape.to_vec()).unwrap();
    let y = net.forward(&mut fwd, &store, xt).unwrap();
    assert_eq!(tape.shape(y), shape);
}

#[test]
fn unet_rejects_odd_width() {
    let config = UNetConfig {
        width: 3,
        ..UNetConfig::base(4, 3)
    };
    assert!(config.validate().is_err());
}

#[test]
fn bn_running_stats_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let bn = BatchNormLayer::new(&mut store, "bn", 2).unwrap();
    let x = rand_vec(&mut rng, 2 * 2 * 4 * 4);
    let tape = Tape::new();
    let mut fwd = Fwd::new(&tape, true);
    let xt = tape.leaf(x.clone(), vec![2, 2, 4, 4]).unwrap();
    bn.forward(&mut fwd, &store, xt).unwrap();
    fwd.apply_stat_updates(&mut store);
    // ema with momentum 0.9 from (0, 1) toward the batch stats
    let m = store.data(bn.running_mean);
    let mut expect = [0.0; 2];
    for ci in 0..2 {
        let mut acc = 0.0;
        for ni in 0..2 {
            for j in 0..16 {
                acc += x[(ni * 2 + ci) * 16 + j];
            }
        }
        expect[ci] = 0.1 * (acc / 32.0);
    }
    for ci in 0..2 {
        assert!((m[ci] - expect[ci]).abs() < 1e-12);
    }
}
