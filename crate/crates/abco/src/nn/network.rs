use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::{reduced_channels, SelfAttentionLayer};
use crate::autodiff::{softmax_in_place, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Hidden width of the vector-environment networks.
pub const VECTOR_HIDDEN: usize = 12;

const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    /// Inverse dynamics model: reads `(s_t, s_{t+1})`.
    Idm,
    /// Policy model: reads `s_t`.
    Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense { input: usize, output: usize },
    LeakyRelu { slope: f64 },
    Attention { positions: usize, channels: usize, reduction: usize },
    Dropout { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub role: Role,
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Checks that consecutive layer widths line up.
    pub fn validate(&self) -> Result<()> {
        let mut width = self.input_dim;
        for layer in &self.layers {
            match *layer {
                LayerSpec::Dense { input, output } => {
                    if input != width {
                        return Err(Error::Dimension {
                            op: "network spec",
                            left: vec![width],
                            right: vec![input],
                        });
                    }
                    width = output;
                }
                LayerSpec::Attention {
                    positions,
                    channels,
                    reduction,
                } => {
                    reduced_channels(channels, reduction)?;
                    if positions * channels != width {
                        return Err(Error::Dimension {
                            op: "network spec attention",
                            left: vec![width],
                            right: vec![positions, channels],
                        });
                    }
                }
                LayerSpec::LeakyRelu { slope } => {
                    if !(0.0..1.0).contains(&slope) || slope == 0.0 {
                        return Err(Error::Config(format!("leaky slope {slope} outside (0,1)")));
                    }
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::Config(format!("dropout rate {rate} outside [0,1)")));
                    }
                }
            }
        }
        if width != self.output_dim {
            return Err(Error::Dimension {
                op: "network spec output",
                left: vec![width],
                right: vec![self.output_dim],
            });
        }
        Ok(())
    }

    pub fn attention_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Attention { .. }))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetOptions {
    pub hidden: usize,
    pub attention: bool,
    /// Inverted-dropout rate after each hidden activation; 0 disables it.
    pub dropout: f64,
    /// Channels per attention location. The hidden vector is read as
    /// `hidden / channels` locations of `channels` values each.
    pub attention_channels: usize,
}

impl Default for NetOptions {
    fn default() -> Self {
        Self {
            hidden: VECTOR_HIDDEN,
            attention: true,
            dropout: 0.0,
            attention_channels: 1,
        }
    }
}

/// `FC → SA → FC → SA → FC → FC → output`, leaky-ReLU after every hidden
/// dense layer. With one attention channel each hidden unit is one location.
pub fn build_net(
    role: Role,
    state_dim: usize,
    action_count: usize,
    opts: NetOptions,
) -> Result<NetworkSpec> {
    if state_dim == 0 {
        return Err(Error::Config("state_dim must be positive".into()));
    }
    if action_count < 2 {
        return Err(Error::Config(format!(
            "need at least two actions, got {action_count}"
        )));
    }
    let input_dim = match role {
        Role::Idm => 2 * state_dim,
        Role::Policy => state_dim,
    };
    let h = opts.hidden;
    let c = opts.attention_channels;
    if opts.attention && (c == 0 || !h.is_multiple_of(c)) {
        return Err(Error::Config(format!(
            "hidden width {h} is not a multiple of {c} attention channels"
        )));
    }
    let mut layers = Vec::new();
    let mut width = input_dim;
    for block in 0..4 {
        layers.push(LayerSpec::Dense {
            input: width,
            output: h,
        });
        layers.push(LayerSpec::LeakyRelu { slope: LEAKY_SLOPE });
        if opts.dropout > 0.0 {
            layers.push(LayerSpec::Dropout { rate: opts.dropout });
        }
        if opts.attention && block < 2 {
            layers.push(LayerSpec::Attention {
                positions: h / c,
                channels: c,
                reduction: 1,
            });
        }
        width = h;
    }
    layers.push(LayerSpec::Dense {
        input: width,
        output: action_count,
    });
    let spec = NetworkSpec {
        role,
        input_dim,
        output_dim: action_count,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

/// The vector-environment architecture with 12-unit hidden layers.
pub fn build_vector_net(
    role: Role,
    state_dim: usize,
    action_count: usize,
    attention: bool,
) -> Result<NetworkSpec> {
    build_net(
        role,
        state_dim,
        action_count,
        NetOptions {
            attention,
            ..NetOptions::default()
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `[out × in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            weight: Tensor::uniform(&[output, input], bound, rng),
            bias: Tensor::uniform(&[output], bound, rng),
        }
    }

    fn forward_rows(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let out = self.weight.shape()[0];
        let inp = self.weight.shape()[1];
        crate::autodiff::linear_rows(x, self.weight.data(), self.bias.data(), batch, inp, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Dense(DenseLayer),
    LeakyRelu(f64),
    Attention(SelfAttentionLayer),
    Dropout(f64),
}

/// Per-feature affine standardization applied to raw inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Fits mean and standard deviation per column. Columns with (near)
    /// zero spread keep unit scale.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Option<Self> {
        let mut count = 0usize;
        let mut mean: Vec<f64> = Vec::new();
        let mut m2: Vec<f64> = Vec::new();
        for row in rows {
            if mean.is_empty() {
                mean = vec![0.0; row.len()];
                m2 = vec![0.0; row.len()];
            }
            count += 1;
            for (k, &v) in row.iter().enumerate() {
                let d = v - mean[k];
                mean[k] += d / count as f64;
                m2[k] += d * (v - mean[k]);
            }
        }
        if count == 0 {
            return None;
        }
        let scale = m2
            .iter()
            .map(|s| {
                let sd = (s / count as f64).sqrt();
                if sd > 1e-8 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        Some(Self { mean, scale })
    }

    pub fn apply(&self, x: &mut [f64]) {
        let w = self.mean.len();
        for (i, v) in x.iter_mut().enumerate() {
            let k = i % w;
            *v = (*v - self.mean[k]) * self.scale[k];
        }
    }

    /// Repeats the statistics so one standardizer covers a concatenated
    /// `(s_t, s_{t+1})` input.
    pub fn tiled(&self, times: usize) -> Self {
        Self {
            mean: self.mean.repeat(times),
            scale: self.scale.repeat(times),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
    #[serde(default)]
    standardizer: Option<Standardizer>,
}

impl Network {
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layers
            .iter()
            .map(|l| {
                Ok(match *l {
                    LayerSpec::Dense { input, output } => {
                        Layer::Dense(DenseLayer::new(input, output, rng))
                    }
                    LayerSpec::LeakyRelu { slope } => Layer::LeakyRelu(slope),
                    LayerSpec::Attention {
                        positions,
                        channels,
                        reduction,
                    } => Layer::Attention(SelfAttentionLayer::new(
                        positions, channels, reduction, rng,
                    )?),
                    LayerSpec::Dropout { rate } => Layer::Dropout(rate),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            spec,
            layers,
            standardizer: None,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn standardizer(&self) -> Option<&Standardizer> {
        self.standardizer.as_ref()
    }

    pub fn set_standardizer(&mut self, s: Option<Standardizer>) -> Result<()> {
        if let Some(st) = &s {
            if !self.spec.input_dim.is_multiple_of(st.mean.len()) {
                return Err(Error::Dimension {
                    op: "standardizer",
                    left: vec![self.spec.input_dim],
                    right: vec![st.mean.len()],
                });
            }
        }
        self.standardizer = s;
        Ok(())
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => out.extend([&d.weight, &d.bias]),
                Layer::Attention(a) => out.extend(a.params()),
                Layer::LeakyRelu(_) | Layer::Dropout(_) => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(d) => out.extend([&mut d.weight, &mut d.bias]),
                Layer::Attention(a) => out.extend(a.params_mut()),
                Layer::LeakyRelu(_) | Layer::Dropout(_) => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn check_width(&self, x: &Tensor) -> Result<usize> {
        if x.shape().len() != 2 || x.shape()[1] != self.spec.input_dim {
            return Err(Error::Dimension {
                op: "forward",
                left: x.shape().to_vec(),
                right: vec![self.spec.input_dim],
            });
        }
        Ok(x.shape()[0])
    }

    fn standardized(&self, x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        if let Some(s) = &self.standardizer {
            s.apply(&mut v);
        }
        v
    }

    /// Action logits for each row of `x` (`[batch × input_dim]`). Dropout is
    /// inactive on this path.
    pub fn forward_logits(&self, x: &Tensor) -> Result<Tensor> {
        let batch = self.check_width(x)?;
        let mut h = self.standardized(x.data());
        for layer in &self.layers {
            h = match layer {
                Layer::Dense(d) => d.forward_rows(&h, batch),
                Layer::LeakyRelu(slope) => {
                    h.iter_mut().for_each(|v| {
                        if *v <= 0.0 {
                            *v *= slope
                        }
                    });
                    h
                }
                Layer::Attention(a) => a.forward_rows(&h, batch),
                Layer::Dropout(_) => h,
            };
        }
        Tensor::new(&[batch, self.spec.output_dim], h)
    }

    /// Records a training forward pass. Returns the logits and the tape
    /// variables of every parameter, in [`Network::params`] order.
    pub fn forward_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        x: &Tensor,
        mut dropout_rng: Option<&mut R>,
    ) -> Result<(Var, Vec<Var>)> {
        let batch = self.check_width(x)?;
        let mut h = tape.input(&[batch, self.spec.input_dim], self.standardized(x.data()))?;
        let mut vars = Vec::new();
        for layer in &self.layers {
            h = match layer {
                Layer::Dense(d) => {
                    let w = tape.leaf(&d.weight);
                    let b = tape.leaf(&d.bias);
                    vars.extend([w, b]);
                    tape.linear(h, w, b)?
                }
                Layer::LeakyRelu(slope) => tape.leaky_relu(h, *slope),
                Layer::Attention(a) => {
                    let (y, pv) = a.record(tape, h)?;
                    vars.extend(pv);
                    y
                }
                Layer::Dropout(rate) => match dropout_rng.as_deref_mut() {
                    Some(rng) if *rate > 0.0 => tape.dropout(h, *rate, rng),
                    _ => h,
                },
            };
        }
        Ok((h, vars))
    }

    /// Adds tape gradients of `vars` into the parameters' grad slots.
    pub fn accumulate_grads(&mut self, tape: &Tape, vars: &[Var]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != vars.len() {
            return Err(Error::Dimension {
                op: "accumulate_grads",
                left: vec![params.len()],
                right: vec![vars.len()],
            });
        }
        for (p, v) in params.iter_mut().zip(vars) {
            p.accumulate_grad(tape.grad(*v))?;
        }
        Ok(())
    }

    /// Softmax distribution over actions for one input row.
    pub fn action_distribution(&self, row: &[f64]) -> Result<Vec<f64>> {
        let x = Tensor::new(&[1, row.len()], row.to_vec())?;
        let mut logits = self.forward_logits(&x)?.data().to_vec();
        softmax_in_place(&mut logits);
        Ok(logits)
    }

    /// Greedy action for one input row; ties go to the lowest action id.
    pub fn act(&self, row: &[f64]) -> Result<usize> {
        let x = Tensor::new(&[1, row.len()], row.to_vec())?;
        Ok(crate::autodiff::argmax(self.forward_logits(&x)?.data()))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::AdamConfig;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn vector_net_dimensions() {
        let idm = build_vector_net(Role::Idm, 4, 2, true).unwrap();
        let pm = build_vector_net(Role::Policy, 4, 2, true).unwrap();
        assert_eq!((idm.input_dim, idm.output_dim), (8, 2));
        assert_eq!((pm.input_dim, pm.output_dim), (4, 2));
        let idm = build_vector_net(Role::Idm, 6, 3, true).unwrap();
        let pm = build_vector_net(Role::Policy, 6, 3, true).unwrap();
        assert_eq!((idm.input_dim, idm.output_dim), (12, 3));
        assert_eq!((pm.input_dim, pm.output_dim), (6, 3));
        assert_eq!(idm.attention_count(), 2);
    }

    #[test]
    fn layer_order_matches_architecture() {
        let spec = build_vector_net(Role::Policy, 4, 2, true).unwrap();
        let kinds: Vec<&str> = spec
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Dense { .. } => Some("FC"),
                LayerSpec::Attention { .. } => Some("SA"),
                _ => None,
            })
            .collect();
        assert_eq!(kinds, ["FC", "SA", "FC", "SA", "FC", "FC", "FC"]);
    }

    #[test]
    fn ablation_removes_only_attention() {
        let with = build_vector_net(Role::Idm, 4, 2, true).unwrap();
        let without = build_vector_net(Role::Idm, 4, 2, false).unwrap();
        let stripped: Vec<_> = with
            .layers
            .iter()
            .filter(|l| !matches!(l, LayerSpec::Attention { .. }))
            .cloned()
            .collect();
        assert_eq!(stripped, without.layers);
        assert_eq!(without.attention_count(), 0);
    }

    #[test]
    fn bad_builder_inputs() {
        assert!(build_vector_net(Role::Idm, 0, 2, true).is_err());
        assert!(build_vector_net(Role::Idm, 3, 1, true).is_err());
        let odd = NetOptions {
            hidden: 12,
            attention_channels: 5,
            ..NetOptions::default()
        };
        assert!(build_net(Role::Policy, 3, 2, odd).is_err());
    }

    #[test]
    fn attention_channels_reshape_the_hidden_layer() {
        let opts = NetOptions {
            hidden: 128,
            attention_channels: 8,
            ..NetOptions::default()
        };
        let spec = build_net(Role::Policy, 75, 4, opts).unwrap();
        let shapes: Vec<_> = spec
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Attention { positions, channels, .. } => Some((*positions, *channels)),
                _ => None,
            })
            .collect();
        assert_eq!(shapes, [(16, 8), (16, 8)]);
    }

    #[test]
    fn zero_weights_give_uniform_distribution() {
        let spec = build_vector_net(Role::Policy, 3, 4, true).unwrap();
        let mut net = Network::new(spec, &mut rng(1)).unwrap();
        for p in net.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let d = net.action_distribution(&[0.3, -2.0, 5.0]).unwrap();
        for p in d {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn batching_does_not_leak() {
        let spec = build_vector_net(Role::Idm, 3, 3, true).unwrap();
        let mut net = Network::new(spec, &mut rng(2)).unwrap();
        set_gates(&mut net, 0.9);
        let x = Tensor::uniform(&[5, 6], 2.0, &mut rng(3));
        let full = net.forward_logits(&x).unwrap();
        for i in 0..5 {
            let one = Tensor::new(&[1, 6], x.row(i).to_vec()).unwrap();
            assert_eq!(net.forward_logits(&one).unwrap().data(), full.row(i));
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let spec = build_vector_net(Role::Policy, 4, 2, true).unwrap();
        let a = Network::new(spec.clone(), &mut rng(42)).unwrap();
        let b = Network::new(spec, &mut rng(42)).unwrap();
        let x = Tensor::uniform(&[3, 4], 1.0, &mut rng(0));
        let la = a.forward_logits(&x).unwrap();
        let lb = b.forward_logits(&x).unwrap();
        assert_eq!(
            la.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            lb.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn width_mismatch_is_a_dimension_error() {
        let spec = build_vector_net(Role::Policy, 4, 2, false).unwrap();
        let net = Network::new(spec, &mut rng(0)).unwrap();
        let x = Tensor::zeros(&[2, 5]);
        assert!(matches!(
            net.forward_logits(&x),
            Err(Error::Dimension { .. })
        ));
    }

    fn set_gates(net: &mut Network, v: f64) {
        for l in net.layers_mut() {
            if let Layer::Attention(a) = l {
                a.gate = Tensor::scalar(v);
            }
        }
    }

    #[test]
    fn tape_and_inference_paths_agree() {
        let spec = build_vector_net(Role::Idm, 2, 3, true).unwrap();
        let mut net = Network::new(spec, &mut rng(5)).unwrap();
        set_gates(&mut net, -0.4);
        net.set_standardizer(Some(Standardizer {
            mean: vec![0.1, -0.2],
            scale: vec![2.0, 0.5],
        }))
        .unwrap();
        let x = Tensor::uniform(&[4, 4], 1.0, &mut rng(6));
        let mut tape = Tape::new();
        let (y, _) = net.forward_tape::<ChaCha8Rng>(&mut tape, &x, None).unwrap();
        assert_eq!(tape.value(y), net.forward_logits(&x).unwrap().data());
    }

    #[test]
    fn whole_network_gradients_match_finite_differences() {
        let spec = build_vector_net(Role::Policy, 3, 3, true).unwrap();
        let mut net = Network::new(spec, &mut rng(7)).unwrap();
        set_gates(&mut net, 0.6);
        let x = Tensor::uniform(&[4, 3], 1.5, &mut rng(8));
        let labels = [0, 2, 1, 2];
        let loss_of = |n: &Network| {
            let mut tape = Tape::new();
            let (y, _) = n.forward_tape::<ChaCha8Rng>(&mut tape, &x, None).unwrap();
            let l = tape.cross_entropy(y, &labels).unwrap();
            tape.value(l)[0]
        };

        let mut tape = Tape::new();
        let (y, vars) = net.forward_tape::<ChaCha8Rng>(&mut tape, &x, None).unwrap();
        let l = tape.cross_entropy(y, &labels).unwrap();
        tape.backward(l).unwrap();
        net.accumulate_grads(&tape, &vars).unwrap();
        let analytic: Vec<Vec<f64>> = net
            .params()
            .iter()
            .map(|p| p.grad().unwrap().to_vec())
            .collect();

        let step = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..analytic.len() {
            for i in 0..analytic[k].len() {
                let mut plus = net.clone();
                plus.params_mut()[k].data_mut()[i] += step;
                let mut minus = net.clone();
                minus.params_mut()[k].data_mut()[i] -= step;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * step);
                let a = analytic[k][i];
                let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
                worst = worst.max(err);
            }
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn a_few_adam_steps_reduce_loss() {
        let spec = build_vector_net(Role::Policy, 2, 2, true).unwrap();
        let mut net = Network::new(spec, &mut rng(9)).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let labels = [0, 1];
        let mut adam = crate::autodiff::AdamState::new(
            AdamConfig {
                learning_rate: 0.01,
                ..AdamConfig::default()
            },
            net.params(),
        );
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..200 {
            net.zero_grad();
            let mut tape = Tape::new();
            let (y, vars) = net.forward_tape::<ChaCha8Rng>(&mut tape, &x, None).unwrap();
            let l = tape.cross_entropy(y, &labels).unwrap();
            tape.backward(l).unwrap();
            net.accumulate_grads(&tape, &vars).unwrap();
            adam.step(net.params_mut()).unwrap();
            last = tape.value(l)[0];
            first.get_or_insert(last);
        }
        assert!(last < 0.1 * first.unwrap(), "{last}");
    }

    #[test]
    fn standardizer_fit() {
        let rows = [vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = Standardizer::fit(rows.iter().map(Vec::as_slice)).unwrap();
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.scale, vec![1.0, 1.0]);
        let mut x = vec![3.0, 6.0, 1.0, 5.0];
        s.tiled(2).apply(&mut x);
        assert_eq!(x, vec![1.0, 1.0, -1.0, 0.0]);
    }
}
