//! Tape-based reverse-mode automatic differentiation.
//!
//! Every forward primitive records a node on the [`Tape`]; [`Tape::backward`]
//! replays the tape in reverse execution order, accumulating (never
//! overwriting) gradient contributions. One tape per training step; tapes are
//! not shared across threads.

mod conv;
mod norm;

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Scalar element type. 64-bit by default so gradient checks hold at 1e-4;
/// the `f32` feature trades precision for speed.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    pub(crate) id: usize,
}

/// Backward rule: maps the output gradient to per-parent contributions.
type BackFn = Box<dyn Fn(&[Real]) -> Vec<(usize, Vec<Real>)>>;

struct Node {
    data: Rc<Vec<Real>>,
    shape: Vec<usize>,
    grad: Vec<Real>,
    back: Option<BackFn>,
}

/// Records a computation graph as a linear tape of executed primitives.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf (input or parameter). Leaves receive gradients but have
    /// no backward rule of their own.
    pub fn leaf(&self, data: Vec<Real>, shape: Vec<usize>) -> Result<Tensor> {
        if numel(&shape) != data.len() {
            return Err(Error::shape(
                "leaf",
                format!("shape {:?} does not hold {} elements", shape, data.len()),
            ));
        }
        Ok(self.push(data, shape, None))
    }

    pub fn scalar(&self, v: Real) -> Tensor {
        self.push(vec![v], vec![1], None)
    }

    pub(crate) fn push(&self, data: Vec<Real>, shape: Vec<usize>, back: Option<BackFn>) -> Tensor {
        let grad = vec![0.0; data.len()];
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            data: Rc::new(data),
            shape,
            grad,
            back,
        });
        Tensor {
            id: nodes.len() - 1,
        }
    }

    pub fn data(&self, t: Tensor) -> Rc<Vec<Real>> {
        Rc::clone(&self.nodes.borrow()[t.id].data)
    }

    pub fn shape(&self, t: Tensor) -> Vec<usize> {
        self.nodes.borrow()[t.id].shape.clone()
    }

    pub fn grad(&self, t: Tensor) -> Vec<Real> {
        self.nodes.borrow()[t.id].grad.clone()
    }

    /// Value of a scalar tensor.
    pub fn value(&self, t: Tensor) -> Real {
        self.nodes.borrow()[t.id].data[0]
    }

    pub(crate) fn parent(&self, t: Tensor) -> (Rc<Vec<Real>>, Vec<usize>) {
        let nodes = self.nodes.borrow();
        (Rc::clone(&nodes[t.id].data), nodes[t.id].shape.clone())
    }

    /// Reverse pass from a scalar loss. Gradient contributions are summed
    /// into each node's accumulator.
    pub fn backward(&self, loss: Tensor) -> Result<()> {
        {
            let nodes = self.nodes.borrow();
            if nodes.is_empty() {
                return Err(Error::InvalidArg("backward on empty tape".into()));
            }
            let shape = &nodes[loss.id].shape;
            if numel(shape) != 1 {
                return Err(Error::NonScalarLoss(shape.clone()));
            }
        }
        let mut grads: Vec<Option<Vec<Real>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        {
            let nodes = self.nodes.borrow();
            for id in (0..=loss.id).rev() {
                let Some(g) = grads[id].as_ref() else {
                    continue;
                };
                if let Some(back) = &nodes[id].back {
                    let contribs = back(g);
                    for (pid, contrib) in contribs {
                        debug_assert!(pid < id, "tape order violated");
                        let slot = grads[pid]
                            .get_or_insert_with(|| vec![0.0; nodes[pid].data.len()]);
                        for (a, b) in slot.iter_mut().zip(contrib) {
                            *a += b;
                        }
                    }
                }
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                for (a, b) in nodes[id].grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        Ok(())
    }

    // ---- elementwise primitives ----

    fn check_same_shape(&self, op: &str, a: Tensor, b: Tensor) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{:?} vs {:?}", sa, sb)));
        }
        Ok(())
    }

    pub fn add(&self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.check_same_shape("add", a, b)?;
        let (ad, shape) = self.parent(a);
        let bd = self.data(b);
        let out: Vec<Real> = ad.iter().zip(bd.iter()).map(|(x, y)| x + y).collect();
        Ok(self.push(
            out,
            shape,
            Some(Box::new(move |g| {
                vec![(a.id, g.to_vec()), (b.id, g.to_vec())]
            })),
        ))
    }

    pub fn sub(&self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.check_same_shape("sub", a, b)?;
        let (ad, shape) = self.parent(a);
        let bd = self.data(b);
        let out: Vec<Real> = ad.iter().zip(bd.iter()).map(|(x, y)| x - y).collect();
        Ok(self.push(
            out,
            shape,
            Some(Box::new(move |g| {
                vec![
                    (a.id, g.to_vec()),
                    (b.id, g.iter().map(|v| -v).collect()),
                ]
            })),
        ))
    }

    pub fn mul(&self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.check_same_shape("mul", a, b)?;
        let (ad, shape) = self.parent(a);
        let bd = self.data(b);
        let out: Vec<Real> = ad.iter().zip(bd.iter()).map(|(x, y)| x * y).collect();
        let (ac, bc) = (Rc::clone(&ad), Rc::clone(&bd));
        Ok(self.push(
            out,
            shape,
            Some(Box::new(move |g| {
                let da: Vec<Real> = g.iter().zip(bc.iter()).map(|(gi, y)| gi * y).collect();
                let db: Vec<Real> = g.iter().zip(ac.iter()).map(|(gi, x)| gi * x).collect();
                vec![(a.id, da), (b.id, db)]
            })),
        ))
    }

    pub fn scale(&self, a: Tensor, c: Real) -> Tensor {
        let (ad, shape) = self.parent(a);
        let out: Vec<Real> = ad.iter().map(|x| x * c).collect();
        self.push(
            out,
            shape,
            Some(Box::new(move |g| {
                vec![(a.id, g.iter().map(|v| v * c).collect())]
            })),
        )
    }

    pub fn add_scalar(&self, a: Tensor, c: Real) -> Tensor {
        let (ad, shape) = self.parent(a);
        let out: Vec<Real> = ad.iter().map(|x| x + c).collect();
        self.push(out, shape, Some(Box::new(move |g| vec![(a.id, g.to_vec())])))
    }

    pub fn relu(&self, a: Tensor) -> Tensor {
        let (ad, shape) = self.parent(a);
        let out: Vec<Real> = ad.iter().map(|x| x.max(0.0)).collect();
        let ac = Rc::clone(&ad);
        self.push(
            out,
            shape,
            Some(Box::new(move |g| {
                let da: Vec<Real> = g
                    .iter()
                    .zip(ac.iter())
                    .map(|(gi, x)| if *x > 0.0 { *gi } else { 0.0 })
                    .collect();
                vec![(a.id, da)]
            })),
        )
    }

    pub fn sigmoid(&self, a: Tensor) -> Tensor {
        let (ad, shape) = self.parent(a);
        let out: Vec<Real> = ad.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        let oc = out.clone();
        self.push(
            out,
            shape,
            Some(Box::new(move |g| {
                let da: Vec<Real> = g
                    .iter()
                    .zip(oc.iter())
                    .map(|(gi, s)| gi * s * (1.0 - s))
                    .collect();
                vec![(a.id, da)]
            })),
        )
    }

    pub fn exp(&self, a: Tensor) -> Tensor {
        let (ad, shape) = self.parent(a);
        let out: Vec<Real> = ad.iter().map(|x| x.exp()).collect();
        let oc = out.clone();
        self.push(
            out,
            shape,
            Some(Box::new(move |g| {
                let da: Vec<Real> = g.iter().zip(oc.iter()).map(|(gi, e)| gi * e).collect();
                vec![(a.id, da)]
            })),
        )
    }

    pub fn log(&self, a: Tensor) -> Tensor {
        let (ad, shape) = self.parent(a);
        let out: Vec<Real> = ad.iter().map(|x| x.ln()).collect();
        let ac = Rc::clone(&ad);
        self.push(
            out,
            shape,
            Some(Box::new(move |g| {
                let da: Vec<Real> = g.iter().zip(ac.iter()).map(|(gi, x)| gi / x).collect();
                vec![(a.id, da)]
            })),
        )
    }

    pub fn sum(&self, a: Tensor) -> Tensor {
        let (ad, _) = self.parent(a);
        let s: Real = ad.iter().sum();
        let n = ad.len();
        self.push(
            vec![s],
            vec![1],
            Some(Box::new(move |g| vec![(a.id, vec![g[0]; n])])),
        )
    }

    /// Mean squared error between two same-shape tensors, as a scalar.
    pub fn mse(&self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.check_same_shape("mse", a, b)?;
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        let s = self.sum(sq);
        let n = self.data(a).len() as Real;
        Ok(self.scale(s, 1.0 / n))
    }

    /// Softmax over a 1-D tensor with temperature.
    pub fn softmax(&self, a: Tensor, temperature: Real) -> Result<Tensor> {
        if temperature <= 0.0 {
            return Err(Error::InvalidArg(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        let (ad, shape) = self.parent(a);
        if shape.len() != 1 {
            return Err(Error::shape("softmax", format!("expected 1-D, got {:?}", shape)));
        }
        let max = ad.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
        let exps: Vec<Real> = ad.iter().map(|x| ((x - max) / temperature).exp()).collect();
        let z: Real = exps.iter().sum();
        let out: Vec<Real> = exps.iter().map(|e| e / z).collect();
        let oc = out.clone();
        Ok(self.push(
            out,
            shape,
            Some(Box::new(move |g| {
                let dot: Real = g.iter().zip(oc.iter()).map(|(gi, yi)| gi * yi).sum();
                let da: Vec<Real> = g
                    .iter()
                    .zip(oc.iter())
                    .map(|(gi, yi)| yi * (gi - dot) / temperature)
                    .collect();
                vec![(a.id, da)]
            })),
        ))
    }

    /// Shannon entropy −Σ vᵢ ln vᵢ of a nonnegative vector, a scalar output.
    /// Entries equal to zero contribute zero (limit convention) and receive
    /// zero gradient.
    pub fn entropy(&self, a: Tensor) -> Tensor {
        let (ad, _) = self.parent(a);
        let h: Real = ad
            .iter()
            .map(|&v| if v > 0.0 { -v * v.ln() } else { 0.0 })
            .sum();
        let ac = Rc::clone(&ad);
        self.push(
            vec![h],
            vec![1],
            Some(Box::new(move |g| {
                let da: Vec<Real> = ac
                    .iter()
                    .map(|&v| if v > 0.0 { -g[0] * (v.ln() + 1.0) } else { 0.0 })
                    .collect();
                vec![(a.id, da)]
            })),
        )
    }

    /// Dot product with a constant vector, as a scalar.
    pub fn dot_const(&self, a: Tensor, c: &[Real]) -> Result<Tensor> {
        let (ad, _) = self.parent(a);
        if ad.len() != c.len() {
            return Err(Error::shape(
                "dot_const",
                format!("vector length {} vs constant length {}", ad.len(), c.len()),
            ));
        }
        let s: Real = ad.iter().zip(c.iter()).map(|(x, y)| x * y).sum();
        let cc = c.to_vec();
        Ok(self.push(
            vec![s],
            vec![1],
            Some(Box::new(move |g| {
                vec![(a.id, cc.iter().map(|y| g[0] * y).collect())]
            })),
        ))
    }

    /// Multiplies a tensor by element `idx` of a 1-D tensor (the mixture
    /// weight of one candidate). Differentiable in both operands.
    pub fn mul_by_elem(&self, x: Tensor, weights: Tensor, idx: usize) -> Result<Tensor> {
        let (xd, shape) = self.parent(x);
        let (wd, wshape) = self.parent(weights);
        if idx >= wd.len() {
            return Err(Error::InvalidArg(format!(
                "weight index {idx} out of range for vector of length {}",
                wd.len()
            )));
        }
        if wshape.len() != 1 {
            return Err(Error::shape(
                "mul_by_elem",
                format!("weights must be 1-D, got {:?}", wshape),
            ));
        }
        let w = wd[idx];
        let out: Vec<Real> = xd.iter().map(|v| v * w).collect();
        let wlen = wd.len();
        let xc = Rc::clone(&xd);
        Ok(self.push(
            out,
            shape,
            Some(Box::new(move |g| {
                let dx: Vec<Real> = g.iter().map(|gi| gi * w).collect();
                let mut dw = vec![0.0; wlen];
                dw[idx] = g.iter().zip(xc.iter()).map(|(gi, xi)| gi * xi).sum();
                vec![(x.id, dx), (weights.id, dw)]
            })),
        ))
    }

    // ---- NCHW structural primitives ----

    fn nchw(&self, op: &str, t: Tensor) -> Result<[usize; 4]> {
        let s = self.shape(t);
        if s.len() != 4 {
            return Err(Error::shape(op, format!("expected NCHW, got {:?}", s)));
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    /// Global average pool over the spatial dims: NCHW → NC11.
    pub fn global_avg_pool(&self, x: Tensor) -> Result<Tensor> {
        let [n, c, h, w] = self.nchw("global_avg_pool", x)?;
        let xd = self.data(x);
        let hw = h * w;
        let mut out = vec![0.0; n * c];
        for i in 0..n * c {
            let base = i * hw;
            out[i] = xd[base..base + hw].iter().sum::<Real>() / hw as Real;
        }
        Ok(self.push(
            out,
            vec![n, c, 1, 1],
            Some(Box::new(move |g| {
                let mut dx = vec![0.0; n * c * hw];
                for i in 0..n * c {
                    let gi = g[i] / hw as Real;
                    for v in dx[i * hw..(i + 1) * hw].iter_mut() {
                        *v = gi;
                    }
                }
                vec![(x.id, dx)]
            })),
        ))
    }

    /// Per-channel broadcast multiply: x is NCHW, s is NC11.
    pub fn channel_mul(&self, x: Tensor, s: Tensor) -> Result<Tensor> {
        let [n, c, h, w] = self.nchw("channel_mul", x)?;
        let ss = self.shape(s);
        if ss != [n, c, 1, 1] {
            return Err(Error::shape(
                "channel_mul",
                format!("scale shape {:?}, expected [{n}, {c}, 1, 1]", ss),
            ));
        }
        let xd = self.data(x);
        let sd = self.data(s);
        let hw = h * w;
        let mut out = vec![0.0; xd.len()];
        for i in 0..n * c {
            let sv = sd[i];
            for j in 0..hw {
                out[i * hw + j] = xd[i * hw + j] * sv;
            }
        }
        let xc = Rc::clone(&xd);
        let sc = Rc::clone(&sd);
        Ok(self.push(
            out,
            vec![n, c, h, w],
            Some(Box::new(move |g| {
                let mut dx = vec![0.0; xc.len()];
                let mut ds = vec![0.0; sc.len()];
                for i in 0..n * c {
                    let sv = sc[i];
                    let mut acc = 0.0;
                    for j in 0..hw {
                        dx[i * hw + j] = g[i * hw + j] * sv;
                        acc += g[i * hw + j] * xc[i * hw + j];
                    }
                    ds[i] = acc;
                }
                vec![(x.id, dx), (s.id, ds)]
            })),
        ))
    }

    /// One half of a channel-wise split. `which` is 0 for the first half,
    /// 1 for the second.
    pub fn split_half(&self, x: Tensor, which: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.nchw("split_half", x)?;
        if c % 2 != 0 {
            return Err(Error::shape(
                "split_half",
                format!("odd channel count {c} cannot be split in half"),
            ));
        }
        if which > 1 {
            return Err(Error::InvalidArg("split_half: which must be 0 or 1".into()));
        }
        let xd = self.data(x);
        let ch = c / 2;
        let hw = h * w;
        let mut out = vec![0.0; n * ch * hw];
        for ni in 0..n {
            let src = ni * c * hw + which * ch * hw;
            let dst = ni * ch * hw;
            out[dst..dst + ch * hw].copy_from_slice(&xd[src..src + ch * hw]);
        }
        Ok(self.push(
            out,
            vec![n, ch, h, w],
            Some(Box::new(move |g| {
                let mut dx = vec![0.0; n * c * hw];
                for ni in 0..n {
                    let dst = ni * c * hw + which * ch * hw;
                    let src = ni * ch * hw;
                    dx[dst..dst + ch * hw].copy_from_slice(&g[src..src + ch * hw]);
                }
                vec![(x.id, dx)]
            })),
        ))
    }

    /// SimpleGate: split channels in half, multiply the halves.
    pub fn simple_gate(&self, x: Tensor) -> Result<Tensor> {
        let a = self.split_half(x, 0)?;
        let b = self.split_half(x, 1)?;
        self.mul(a, b)
    }

    /// Pixel shuffle: N,(C·r²),H,W → N,C,(H·r),(W·r).
    pub fn pixel_shuffle(&self, x: Tensor, r: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.nchw("pixel_shuffle", x)?;
        let r2 = r * r;
        if c % r2 != 0 {
            return Err(Error::shape(
                "pixel_shuffle",
                format!("channels {c} not divisible by r² = {r2}"),
            ));
        }
        let co = c / r2;
        let (ho, wo) = (h * r, w * r);
        let xd = self.data(x);
        let mut out = vec![0.0; xd.len()];
        // out[n, co, h*r+dy, w*r+dx] = x[n, co*r2 + dy*r + dx, h, w]
        let src_index = move |ni: usize, ci: usize, dy: usize, dx: usize, hi: usize, wi: usize| {
            ((ni * c + ci * r2 + dy * r + dx) * h + hi) * w + wi
        };
        let dst_index = move |ni: usize, ci: usize, dy: usize, dx: usize, hi: usize, wi: usize| {
            ((ni * co + ci) * ho + hi * r + dy) * wo + wi * r + dx
        };
        for ni in 0..n {
            for ci in 0..co {
                for dy in 0..r {
                    for dx in 0..r {
                        for hi in 0..h {
                            for wi in 0..w {
                                out[dst_index(ni, ci, dy, dx, hi, wi)] =
                                    xd[src_index(ni, ci, dy, dx, hi, wi)];
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(
            out,
            vec![n, co, ho, wo],
            Some(Box::new(move |g| {
                let mut dx = vec![0.0; n * c * h * w];
                for ni in 0..n {
                    for ci in 0..co {
                        for dy in 0..r {
                            for dxp in 0..r {
                                for hi in 0..h {
                                    for wi in 0..w {
                                        dx[src_index(ni, ci, dy, dxp, hi, wi)] =
                                            g[dst_index(ni, ci, dy, dxp, hi, wi)];
                                    }
                                }
                            }
                        }
                    }
                }
                vec![(x.id, dx)]
            })),
        ))
    }
}
