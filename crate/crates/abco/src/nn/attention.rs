use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    dot, project, softmax_in_place, AttentionParams, AttentionShape, Tape, Tensor, Var,
};
use crate::error::{Error, Result};

/// Gated self-attention over the feature locations of a vector.
///
/// A row of width `positions * channels` is read as `positions` locations
/// with `channels` values each. Keys, queries and values are projected to
/// `channels / reduction` channels; the attended features are projected
/// back and added to the input, scaled by `gate`. `gate` starts at zero so a
/// fresh layer is the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfAttentionLayer {
    pub w_f: Tensor,
    pub w_g: Tensor,
    pub w_h: Tensor,
    pub w_v: Tensor,
    pub gate: Tensor,
    pub positions: usize,
    pub channels: usize,
    pub reduction: usize,
}

impl SelfAttentionLayer {
    pub fn new<R: Rng + ?Sized>(
        positions: usize,
        channels: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let reduced = reduced_channels(channels, reduction)?;
        if positions == 0 {
            return Err(Error::Config("attention needs at least one position".into()));
        }
        let bound_in = 1.0 / (channels as f64).sqrt();
        let bound_out = 1.0 / (reduced as f64).sqrt();
        Ok(Self {
            w_f: Tensor::uniform(&[reduced, channels], bound_in, rng),
            w_g: Tensor::uniform(&[reduced, channels], bound_in, rng),
            w_h: Tensor::uniform(&[reduced, channels], bound_in, rng),
            w_v: Tensor::uniform(&[channels, reduced], bound_out, rng),
            gate: Tensor::scalar(0.0),
            positions,
            channels,
            reduction,
        })
    }

    pub fn shape(&self) -> AttentionShape {
        AttentionShape {
            positions: self.positions,
            channels: self.channels,
            reduced: self.channels / self.reduction,
        }
    }

    pub fn width(&self) -> usize {
        self.positions * self.channels
    }

    pub fn params(&self) -> [&Tensor; 5] {
        [&self.w_f, &self.w_g, &self.w_h, &self.w_v, &self.gate]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 5] {
        [
            &mut self.w_f,
            &mut self.w_g,
            &mut self.w_h,
            &mut self.w_v,
            &mut self.gate,
        ]
    }

    /// Applies the layer to a single `[positions × channels]` feature map.
    pub fn sa_forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape() != [self.positions, self.channels] {
            return Err(Error::Dimension {
                op: "sa_forward",
                left: x.shape().to_vec(),
                right: vec![self.positions, self.channels],
            });
        }
        Tensor::new(x.shape(), self.forward_rows(x.data(), 1))
    }

    /// Attention map `β[j][i]` of a single feature map: the weight of
    /// location `i` when producing location `j`.
    pub fn attention_map(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.width() {
            return Err(Error::Dimension {
                op: "attention_map",
                left: vec![x.len()],
                right: vec![self.positions, self.channels],
            });
        }
        let AttentionShape {
            positions: n,
            channels: c,
            reduced: r,
        } = self.shape();
        let mut f = vec![0.0; n * r];
        let mut g = vec![0.0; n * r];
        project(x, self.w_f.data(), &mut f, n, c, r);
        project(x, self.w_g.data(), &mut g, n, c, r);
        Ok((0..n)
            .map(|j| {
                let mut row: Vec<f64> = (0..n)
                    .map(|i| dot(&f[i * r..(i + 1) * r], &g[j * r..(j + 1) * r]))
                    .collect();
                softmax_in_place(&mut row);
                row
            })
            .collect())
    }

    /// Inference path over `batch` rows of width `positions * channels`.
    pub(crate) fn forward_rows(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let AttentionShape {
            positions: n,
            channels: c,
            reduced: r,
        } = self.shape();
        let gate = self.gate.data()[0];
        let mut out = x.to_vec();
        if gate == 0.0 {
            return out;
        }
        let mut f = vec![0.0; n * r];
        let mut g = vec![0.0; n * r];
        let mut h = vec![0.0; n * r];
        let mut o = vec![0.0; n * r];
        let mut a = vec![0.0; n * c];
        let mut row = vec![0.0; n];
        for b in 0..batch {
            let xb = &x[b * n * c..(b + 1) * n * c];
            project(xb, self.w_f.data(), &mut f, n, c, r);
            project(xb, self.w_g.data(), &mut g, n, c, r);
            project(xb, self.w_h.data(), &mut h, n, c, r);
            o.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..n {
                let gj = &g[j * r..(j + 1) * r];
                for (i, s) in row.iter_mut().enumerate() {
                    *s = dot(&f[i * r..(i + 1) * r], gj);
                }
                softmax_in_place(&mut row);
                let oj = &mut o[j * r..(j + 1) * r];
                for (i, &bji) in row.iter().enumerate() {
                    for (ov, hv) in oj.iter_mut().zip(&h[i * r..(i + 1) * r]) {
                        *ov += bji * hv;
                    }
                }
            }
            project(&o, self.w_v.data(), &mut a, n, r, c);
            for (y, av) in out[b * n * c..(b + 1) * n * c].iter_mut().zip(&a) {
                *y += gate * av;
            }
        }
        out
    }

    pub(crate) fn record(&self, tape: &mut Tape, x: Var) -> Result<(Var, [Var; 5])> {
        let vars = [
            tape.leaf(&self.w_f),
            tape.leaf(&self.w_g),
            tape.leaf(&self.w_h),
            tape.leaf(&self.w_v),
            tape.leaf(&self.gate),
        ];
        let params = AttentionParams {
            w_f: vars[0],
            w_g: vars[1],
            w_h: vars[2],
            w_v: vars[3],
            gate: vars[4],
        };
        let y = tape.self_attention(x, params, self.shape())?;
        Ok((y, vars))
    }
}

pub(crate) fn reduced_channels(channels: usize, reduction: usize) -> Result<usize> {
    if channels == 0 || reduction == 0 || !channels.is_multiple_of(reduction) {
        return Err(Error::Config(format!(
            "attention channels {channels} not divisible by reduction {reduction}"
        )));
    }
    Ok(channels / reduction)
}
