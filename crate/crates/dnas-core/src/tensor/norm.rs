//! Layer normalization (per sample over C,H,W with per-channel affine) and
//! batch normalization in both inference and training modes.

use std::rc::Rc;

use super::{Real, Tape, Tensor};
use crate::error::{Error, Result};

impl Tape {
    /// Layer norm over (C,H,W) per sample, with per-channel affine.
    /// `gamma` and `beta` have shape [C].
    pub fn layer_norm(&self, x: Tensor, gamma: Tensor, beta: Tensor, eps: Real) -> Result<Tensor> {
        if eps <= 0.0 {
            return Err(Error::InvalidArg(format!(
                "layer_norm eps must be positive, got {eps}"
            )));
        }
        let xs = self.shape(x);
        if xs.len() != 4 {
            return Err(Error::shape("layer_norm", format!("expected NCHW, got {:?}", xs)));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        for (name, t) in [("gamma", gamma), ("beta", beta)] {
            let s = self.shape(t);
            if s != [c] {
                return Err(Error::shape(
                    "layer_norm",
                    format!("{name} shape {:?}, expected [{c}]", s),
                ));
            }
        }
        let xd = self.data(x);
        let gd = self.data(gamma);
        let bd = self.data(beta);
        let m = c * h * w;
        let hw = h * w;
        let mut out = vec![0.0; xd.len()];
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; n];
        for ni in 0..n {
            let base = ni * m;
            let sl = &xd[base..base + m];
            let mean = sl.iter().sum::<Real>() / m as Real;
            let var = sl.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / m as Real;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[ni] = inv;
            for ci in 0..c {
                for j in 0..hw {
                    let i = base + ci * hw + j;
                    let xh = (xd[i] - mean) * inv;
                    xhat[i] = xh;
                    out[i] = xh * gd[ci] + bd[ci];
                }
            }
        }
        let gc = Rc::clone(&gd);
        let xhat = Rc::new(xhat);
        let xhc = Rc::clone(&xhat);
        Ok(self.push(
            out,
            xs,
            Some(Box::new(move |g| {
                let mut dx = vec![0.0; n * m];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ni in 0..n {
                    let base = ni * m;
                    // dxhat = g * gamma[c]; dx = inv*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for ci in 0..c {
                        for j in 0..hw {
                            let i = base + ci * hw + j;
                            let dxh = g[i] * gc[ci];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xhc[i];
                            dgamma[ci] += g[i] * xhc[i];
                            dbeta[ci] += g[i];
                        }
                    }
                    let mean_dxh = sum_dxh / m as Real;
                    let mean_dxh_xh = sum_dxh_xh / m as Real;
                    for ci in 0..c {
                        for j in 0..hw {
                            let i = base + ci * hw + j;
                            let dxh = g[i] * gc[ci];
                            dx[i] = inv_std[ni] * (dxh - mean_dxh - xhc[i] * mean_dxh_xh);
                        }
                    }
                }
                vec![(x.id, dx), (gamma.id, dgamma), (beta.id, dbeta)]
            })),
        ))
    }

    /// Batch norm with fixed per-channel statistics (inference mode).
    /// All of `mean`, `var`, `gamma`, `beta` have shape [C]. Differentiable
    /// with respect to every input.
    pub fn batch_norm_infer(
        &self,
        x: Tensor,
        mean: Tensor,
        var: Tensor,
        gamma: Tensor,
        beta: Tensor,
        eps: Real,
    ) -> Result<Tensor> {
        let xs = self.shape(x);
        if xs.len() != 4 {
            return Err(Error::shape(
                "batch_norm_infer",
                format!("expected NCHW, got {:?}", xs),
            ));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        for (name, t) in [("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)] {
            let s = self.shape(t);
            if s != [c] {
                return Err(Error::shape(
                    "batch_norm_infer",
                    format!("{name} shape {:?}, expected [{c}]", s),
                ));
            }
        }
        let vd = self.data(var);
        if let Some(v) = vd.iter().find(|v| **v < 0.0) {
            return Err(Error::InvalidArg(format!(
                "batch_norm_infer variance must be nonnegative, got {v}"
            )));
        }
        let xd = self.data(x);
        let md = self.data(mean);
        let gd = self.data(gamma);
        let bd = self.data(beta);
        let hw = h * w;
        let inv: Vec<Real> = vd.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = vec![0.0; xd.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                for j in 0..hw {
                    out[base + j] = (xd[base + j] - md[ci]) * inv[ci] * gd[ci] + bd[ci];
                }
            }
        }
        let (xc, mc, gc) = (Rc::clone(&xd), Rc::clone(&md), Rc::clone(&gd));
        Ok(self.push(
            out,
            xs,
            Some(Box::new(move |g| {
                let mut dx = vec![0.0; xc.len()];
                let mut dmean = vec![0.0; c];
                let mut dvar = vec![0.0; c];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * hw;
                        for j in 0..hw {
                            let gi = g[base + j];
                            let centered = xc[base + j] - mc[ci];
                            dx[base + j] = gi * gc[ci] * inv[ci];
                            dmean[ci] -= gi * gc[ci] * inv[ci];
                            dvar[ci] -=
                                0.5 * gi * gc[ci] * centered * inv[ci] * inv[ci] * inv[ci];
                            dgamma[ci] += gi * centered * inv[ci];
                            dbeta[ci] += gi;
                        }
                    }
                }
                vec![
                    (x.id, dx),
                    (mean.id, dmean),
                    (var.id, dvar),
                    (gamma.id, dgamma),
                    (beta.id, dbeta),
                ]
            })),
        ))
    }

    /// Batch norm using the batch's own statistics (training mode), fully
    /// differentiable through the statistics. Also returns the per-channel
    /// batch mean and (biased) variance so callers can maintain running
    /// averages.
    pub fn batch_norm_train(
        &self,
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        eps: Real,
    ) -> Result<(Tensor, Vec<Real>, Vec<Real>)> {
        let xs = self.shape(x);
        if xs.len() != 4 {
            return Err(Error::shape(
                "batch_norm_train",
                format!("expected NCHW, got {:?}", xs),
            ));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        for (name, t) in [("gamma", gamma), ("beta", beta)] {
            let s = self.shape(t);
            if s != [c] {
                return Err(Error::shape(
                    "batch_norm_train",
                    format!("{name} shape {:?}, expected [{c}]", s),
                ));
            }
        }
        let xd = self.data(x);
        let gd = self.data(gamma);
        let bd = self.data(beta);
        let hw = h * w;
        let m = n * hw;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ci in 0..c {
            let mut acc = 0.0;
            for ni in 0..n {
                let base = (ni * c + ci) * hw;
                acc += xd[base..base + hw].iter().sum::<Real>();
            }
            mean[ci] = acc / m as Real;
            let mut vacc = 0.0;
            for ni in 0..n {
                let base = (ni * c + ci) * hw;
                for j in 0..hw {
                    let d = xd[base + j] - mean[ci];
                    vacc += d * d;
                }
            }
            var[ci] = vacc / m as Real;
        }
        let inv: Vec<Real> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = vec![0.0; xd.len()];
        let mut xhat = vec![0.0; xd.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                for j in 0..hw {
                    let xh = (xd[base + j] - mean[ci]) * inv[ci];
                    xhat[base + j] = xh;
                    out[base + j] = xh * gd[ci] + bd[ci];
                }
            }
        }
        let gc = Rc::clone(&gd);
        let xhat = Rc::new(xhat);
        let xhc = Rc::clone(&xhat);
        let inv_c = inv.clone();
        let t = self.push(
            out,
            xs,
            Some(Box::new(move |g| {
                let mut dx = vec![0.0; xhc.len()];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ci in 0..c {
                    let mut sum_g = 0.0;
                    let mut sum_g_xh = 0.0;
                    for ni in 0..n {
                        let base = (ni * c + ci) * hw;
                        for j in 0..hw {
                            sum_g += g[base + j];
                            sum_g_xh += g[base + j] * xhc[base + j];
                        }
                    }
                    dgamma[ci] = sum_g_xh;
                    dbeta[ci] = sum_g;
                    let scale = gc[ci] * inv_c[ci] / m as Real;
                    for ni in 0..n {
                        let base = (ni * c + ci) * hw;
                        for j in 0..hw {
                            dx[base + j] = scale
                                * (m as Real * g[base + j] - sum_g - xhc[base + j] * sum_g_xh);
                        }
                    }
                }
                vec![(x.id, dx), (gamma.id, dgamma), (beta.id, dbeta)]
            })),
        );
        Ok((t, mean, var))
    }
}
