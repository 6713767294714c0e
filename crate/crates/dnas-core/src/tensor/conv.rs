//! 2-D convolution (cross-correlation, the deep-learning convention) with
//! stride, zero padding and groups. groups == channels gives the depth-wise
//! case.

use std::rc::Rc;

use super::{Real, Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct ConvDims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
    groups: usize,
}

fn conv_forward(x: &[Real], k: &[Real], b: Option<&[Real]>, d: ConvDims) -> Vec<Real> {
    let gci = d.cin / d.groups;
    let gco = d.cout / d.groups;
    let mut out = vec![0.0; d.n * d.cout * d.oh * d.ow];
    for ni in 0..d.n {
        for co in 0..d.cout {
            let gi = co / gco;
            let obase = (ni * d.cout + co) * d.oh * d.ow;
            let bias = b.map_or(0.0, |b| b[co]);
            for ohi in 0..d.oh {
                for owi in 0..d.ow {
                    let mut acc = bias;
                    for cil in 0..gci {
                        let ci = gi * gci + cil;
                        let xbase = (ni * d.cin + ci) * d.h * d.w;
                        let kbase = (co * gci + cil) * d.kh * d.kw;
                        for khi in 0..d.kh {
                            let hi = (ohi * d.stride + khi) as isize - d.padding as isize;
                            if hi < 0 || hi >= d.h as isize {
                                continue;
                            }
                            for kwi in 0..d.kw {
                                let wi = (owi * d.stride + kwi) as isize - d.padding as isize;
                                if wi < 0 || wi >= d.w as isize {
                                    continue;
                                }
                                acc += x[xbase + hi as usize * d.w + wi as usize]
                                    * k[kbase + khi * d.kw + kwi];
                            }
                        }
                    }
                    out[obase + ohi * d.ow + owi] = acc;
                }
            }
        }
    }
    out
}

fn conv_backward(
    g: &[Real],
    x: &[Real],
    k: &[Real],
    has_bias: bool,
    d: ConvDims,
) -> (Vec<Real>, Vec<Real>, Option<Vec<Real>>) {
    let gci = d.cin / d.groups;
    let gco = d.cout / d.groups;
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; k.len()];
    let mut db = has_bias.then(|| vec![0.0; d.cout]);
    for ni in 0..d.n {
        for co in 0..d.cout {
            let gi = co / gco;
            let obase = (ni * d.cout + co) * d.oh * d.ow;
            for ohi in 0..d.oh {
                for owi in 0..d.ow {
                    let go = g[obase + ohi * d.ow + owi];
                    if let Some(db) = db.as_mut() {
                        db[co] += go;
                    }
                    for cil in 0..gci {
                        let ci = gi * gci + cil;
                        let xbase = (ni * d.cin + ci) * d.h * d.w;
                        let kbase = (co * gci + cil) * d.kh * d.kw;
                        for khi in 0..d.kh {
                            let hi = (ohi * d.stride + khi) as isize - d.padding as isize;
                            if hi < 0 || hi >= d.h as isize {
                                continue;
                            }
                            for kwi in 0..d.kw {
                                let wi = (owi * d.stride + kwi) as isize - d.padding as isize;
                                if wi < 0 || wi >= d.w as isize {
                                    continue;
                                }
                                let xi = xbase + hi as usize * d.w + wi as usize;
                                dx[xi] += go * k[kbase + khi * d.kw + kwi];
                                dk[kbase + khi * d.kw + kwi] += go * x[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dk, db)
}

impl Tape {
    /// 2-D convolution. `input` is NCHW, `kernel` is
    /// [C_out, C_in/groups, kH, kW], `bias` (optional) is [C_out].
    pub fn conv2d(
        &self,
        input: Tensor,
        kernel: Tensor,
        bias: Option<Tensor>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Tensor> {
        let xs = self.shape(input);
        let ks = self.shape(kernel);
        if xs.len() != 4 {
            return Err(Error::shape("conv2d", format!("input must be NCHW, got {:?}", xs)));
        }
        if ks.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("kernel must be [Cout, Cin/groups, kH, kW], got {:?}", ks),
            ));
        }
        if stride < 1 {
            return Err(Error::InvalidArg("conv2d stride must be >= 1".into()));
        }
        if groups < 1 {
            return Err(Error::InvalidArg("conv2d groups must be >= 1".into()));
        }
        let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if cin % groups != 0 {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {cin} not divisible by groups {groups}"),
            ));
        }
        if cout % groups != 0 {
            return Err(Error::shape(
                "conv2d",
                format!("output channels {cout} not divisible by groups {groups}"),
            ));
        }
        if kc != cin / groups {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel input-channel dim is {kc}, expected Cin/groups = {}",
                    cin / groups
                ),
            ));
        }
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs != [cout] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias shape {:?}, expected [{cout}]", bs),
                ));
            }
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel {kh}x{kw} larger than padded input {}x{}",
                    h + 2 * padding,
                    w + 2 * padding
                ),
            ));
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let d = ConvDims {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            oh,
            ow,
            stride,
            padding,
            groups,
        };
        let xd = self.data(input);
        let kd = self.data(kernel);
        let bd = bias.map(|b| self.data(b));
        let out = conv_forward(&xd, &kd, bd.as_deref().map(|v| &v[..]), d);
        let (xc, kc_) = (Rc::clone(&xd), Rc::clone(&kd));
        let has_bias = bias.is_some();
        Ok(self.push(
            out,
            vec![n, cout, oh, ow],
            Some(Box::new(move |g| {
                let (dx, dk, db) = conv_backward(g, &xc, &kc_, has_bias, d);
                let mut contribs = vec![(input.id, dx), (kernel.id, dk)];
                if let (Some(db), Some(b)) = (db, bias) {
                    contribs.push((b.id, db));
                }
                contribs
            })),
        ))
    }
}
