//! Central finite-difference gradient checking, used by the test suites to
//! validate every differentiable primitive and composite loss independently
//! of the backward implementation.

use crate::error::Result;
use crate::tensor::{Real, Tape, Tensor};

/// Default step for central differences at 64-bit.
pub const FD_STEP: Real = 1e-5;

/// Builds a scalar loss from freshly created leaves. The closure must be a
/// pure function of the leaf values so it can be re-evaluated under
/// perturbation.
pub type LossFn<'a> = &'a dyn Fn(&Tape, &[Tensor]) -> Result<Tensor>;

fn eval(inputs: &[(Vec<Real>, Vec<usize>)], f: LossFn) -> Result<Real> {
    let tape = Tape::new();
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|(d, s)| tape.leaf(d.clone(), s.clone()))
        .collect::<Result<_>>()?;
    let loss = f(&tape, &leaves)?;
    Ok(tape.value(loss))
}

/// Compares analytic gradients against central finite differences for every
/// element of every input. Returns the maximum relative error observed.
///
/// Elements where both the analytic and numeric gradient are below 1e-4 in
/// magnitude are compared absolutely instead (the relative error of two
/// near-zero numbers is noise).
pub fn max_rel_error(inputs: &[(Vec<Real>, Vec<usize>)], f: LossFn) -> Result<Real> {
    let tape = Tape::new();
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|(d, s)| tape.leaf(d.clone(), s.clone()))
        .collect::<Result<_>>()?;
    let loss = f(&tape, &leaves)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<Real>> = leaves.iter().map(|t| tape.grad(*t)).collect();

    let mut worst: Real = 0.0;
    for (ii, (data, _)) in inputs.iter().enumerate() {
        for ei in 0..data.len() {
            let mut plus = inputs.to_vec();
            plus[ii].0[ei] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[ii].0[ei] -= FD_STEP;
            let fd = (eval(&plus, f)? - eval(&minus, f)?) / (2.0 * FD_STEP);
            let a = analytic[ii][ei];
            let mag = a.abs().max(fd.abs());
            let err = if mag < 1e-4 {
                (a - fd).abs()
            } else {
                (a - fd).abs() / mag
            };
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Finite-difference check against every parameter bound from a
/// [`ParamStore`] during the forward pass (inputs included, when the caller
/// stores them as entries). Returns the maximum relative error.
pub fn store_max_rel_error(
    store: &mut crate::params::ParamStore,
    training: bool,
    f: &dyn Fn(&mut crate::params::Fwd, &crate::params::ParamStore) -> Result<Tensor>,
) -> Result<Real> {
    let eval = |store: &crate::params::ParamStore| -> Result<Real> {
        let tape = Tape::new();
        let mut fwd = crate::params::Fwd::new(&tape, training);
        let loss = f(&mut fwd, store)?;
        Ok(tape.value(loss))
    };
    let tape = Tape::new();
    let mut fwd = crate::params::Fwd::new(&tape, training);
    let loss = f(&mut fwd, store)?;
    tape.backward(loss)?;
    let grads = fwd.grads();

    let mut worst: Real = 0.0;
    for (id, g) in &grads {
        for ei in 0..g.len() {
            let orig = store.data(*id)[ei];
            store.data_mut(*id)[ei] = orig + FD_STEP;
            let lp = eval(store)?;
            store.data_mut(*id)[ei] = orig - FD_STEP;
            let lm = eval(store)?;
            store.data_mut(*id)[ei] = orig;
            let fd = (lp - lm) / (2.0 * FD_STEP);
            let a = g[ei];
            let mag = a.abs().max(fd.abs());
            let err = if mag < 1e-4 {
                (a - fd).abs()
            } else {
                (a - fd).abs() / mag
            };
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Convenience assertion wrapper used throughout the test suites.
pub fn assert_grads_close(inputs: &[(Vec<Real>, Vec<usize>)], f: LossFn, tol: Real) {
    let err = max_rel_error(inputs, f).expect("gradient check evaluation failed");
    assert!(
        err < tol,
        "gradient check failed: max relative error {err:.3e} >= tolerance {tol:.1e}"
    );
}
