use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{argmax, AdamConfig, AdamState, Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::Network;

/// Mini-batch settings shared by IDM and policy training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            adam: AdamConfig::default(),
        }
    }
}

/// A network together with its optimizer state, so fine-tuning across
/// iterations continues the same Adam trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub net: Network,
    pub adam: AdamState,
}

impl Learner {
    pub fn new(net: Network, adam: AdamConfig) -> Self {
        let adam = AdamState::new(adam, net.params());
        Self { net, adam }
    }

    /// Minimizes mean cross-entropy of `labels` given `inputs` for
    /// `cfg.epochs` shuffled passes. Returns the mean loss of the last epoch.
    pub fn fit<R: Rng + ?Sized>(
        &mut self,
        inputs: &[Vec<f64>],
        labels: &[usize],
        cfg: &FitConfig,
        rng: &mut R,
    ) -> Result<f64> {
        if inputs.len() != labels.len() {
            return Err(Error::Dimension {
                op: "fit",
                left: vec![inputs.len()],
                right: vec![labels.len()],
            });
        }
        if inputs.is_empty() {
            return Err(Error::contract("fit on an empty dataset"));
        }
        if cfg.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let width = self.net.input_dim();
        if let Some(bad) = inputs.iter().find(|r| r.len() != width) {
            return Err(Error::Dimension {
                op: "fit",
                left: vec![bad.len()],
                right: vec![width],
            });
        }
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        let mut last = f64::NAN;
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let mut x = Vec::with_capacity(chunk.len() * width);
                let mut y = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    x.extend_from_slice(&inputs[i]);
                    y.push(labels[i]);
                }
                let x = Tensor::new(&[chunk.len(), width], x)?;
                let mut tape = Tape::new();
                let (logits, vars) = self.net.forward_tape(&mut tape, &x, Some(&mut *rng))?;
                let loss = tape.cross_entropy(logits, &y)?;
                tape.backward(loss)?;
                total += tape.value(loss)[0] * chunk.len() as f64;
                self.net.zero_grad();
                self.net.accumulate_grads(&tape, &vars)?;
                self.adam.step(self.net.params_mut())?;
            }
            last = total / inputs.len() as f64;
        }
        Ok(last)
    }
}

/// Greedy predictions for many rows, evaluated in blocks.
pub fn predict(net: &Network, inputs: &[Vec<f64>]) -> Result<Vec<usize>> {
    let k = net.output_dim();
    let mut out = Vec::with_capacity(inputs.len());
    for block in inputs.chunks(256) {
        let logits = net.forward_logits(&Tensor::from_rows(block)?)?;
        out.extend(logits.data().chunks(k).map(argmax));
    }
    Ok(out)
}

/// Fraction of rows whose greedy prediction equals the label.
pub fn accuracy(net: &Network, inputs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::contract("accuracy of an empty dataset"));
    }
    let hits = predict(net, inputs)?
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / inputs.len() as f64)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::{build_vector_net, Role};

    #[test]
    fn learns_a_linear_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let inputs: Vec<Vec<f64>> = (0..400)
            .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<usize> = inputs.iter().map(|r| usize::from(r[0] + r[1] > 0.0)).collect();
        let spec = build_vector_net(Role::Policy, 2, 2, true).unwrap();
        let mut l = Learner::new(Network::new(spec, &mut rng).unwrap(), AdamConfig::default());
        let cfg = FitConfig {
            epochs: 60,
            ..FitConfig::default()
        };
        let loss = l.fit(&inputs, &labels, &cfg, &mut rng).unwrap();
        assert!(loss < 0.2, "loss {loss}");
        assert!(accuracy(&l.net, &inputs, &labels).unwrap() > 0.95);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = build_vector_net(Role::Policy, 2, 2, false).unwrap();
        let mut l = Learner::new(Network::new(spec, &mut rng).unwrap(), AdamConfig::default());
        let cfg = FitConfig::default();
        assert!(l.fit(&[vec![0.0; 3]], &[0], &cfg, &mut rng).is_err());
        assert!(l.fit(&[vec![0.0; 2]], &[], &cfg, &mut rng).is_err());
        assert!(l.fit(&[], &[], &cfg, &mut rng).is_err());
    }
}
