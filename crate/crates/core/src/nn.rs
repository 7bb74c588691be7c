//! Small dense feed-forward networks with hand-written backprop and Adam.
//!
//! Batches are row-major: one sample per row. Hidden layers use ReLU, the
//! output layer is identity or sigmoid.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    fn shape(&self) -> (usize, usize) {
        self.weight.dim()
    }
}

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

/// A ReLU multilayer perceptron.
///
/// Every parameter change bumps an internal version, so a [`ForwardCache`]
/// taken before an update (or from another network) is rejected by
/// [`DenseNet::backward`].
#[derive(Debug)]
pub struct DenseNet {
    layers: Vec<Dense>,
    output: OutputActivation,
    id: u64,
    version: u64,
}

impl Clone for DenseNet {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            output: self.output,
            id: fresh_id(),
            version: 0,
        }
    }
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.output == other.output
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    preacts: Vec<Array2<f64>>,
    output: Array2<f64>,
    net_id: u64,
    version: u64,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

/// Parameter gradients, laid out like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten(&self.layers)
    }
}

fn flatten(layers: &[Dense]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
        .collect()
}

impl DenseNet {
    /// Random network with the given layer widths, e.g. `[3, 64, 64, 1]`.
    /// Weights and biases are drawn from `U(-1/√fan_in, 1/√fan_in)`.
    pub fn new(widths: &[usize], output: OutputActivation, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Invalid(format!("bad layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Dense {
                    weight: Array2::from_shape_simple_fn((w[1], w[0]), || {
                        rng.random_range(-bound..bound)
                    }),
                    bias: Array1::from_shape_simple_fn(w[1], || rng.random_range(-bound..bound)),
                }
            })
            .collect();
        Ok(Self::from_layers(layers, output)?)
    }

    pub fn from_layers(layers: Vec<Dense>, output: OutputActivation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Invalid("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].shape().0 != pair[1].shape().1 {
                return Err(Error::Shape {
                    expected: format!("layer input {}", pair[0].shape().0),
                    actual: pair[1].shape().1.to_string(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.shape().0 {
                return Err(Error::Shape {
                    expected: format!("bias of length {}", l.shape().0),
                    actual: l.bias.len().to_string(),
                });
            }
        }
        Ok(Self {
            layers,
            output,
            id: fresh_id(),
            version: 0,
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].shape().1];
        w.extend(self.layers.iter().map(|l| l.shape().0));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].shape().1
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().shape().0
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape {
                expected: format!("{} parameters", self.param_count()),
                actual: flat.len().to_string(),
            });
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for x in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *x = it.next().unwrap();
            }
        }
        self.version += 1;
        Ok(())
    }

    fn same_architecture(&self, other: &DenseNet) -> bool {
        self.output == other.output
            && self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// Batched forward pass, keeping the activations needed by `backward`.
    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        if input.ncols() != self.input_width() {
            return Err(Error::Shape {
                expected: format!("{} input columns", self.input_width()),
                actual: input.ncols().to_string(),
            });
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut x = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = x.dot(&layer.weight.t()) + &layer.bias;
            let a = if i == last {
                match self.output {
                    OutputActivation::Identity => z.clone(),
                    OutputActivation::Sigmoid => z.mapv(sigmoid),
                }
            } else {
                z.mapv(|v| v.max(0.0))
            };
            inputs.push(x);
            preacts.push(z);
            x = a;
        }
        Ok(ForwardCache {
            inputs,
            preacts,
            output: x,
            net_id: self.id,
            version: self.version,
        })
    }

    /// Forward pass without a cache.
    pub fn predict(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward(input)?.output)
    }

    /// Reverse-mode pass: gradients of a scalar loss whose derivative with
    /// respect to the network output is `grad_output`. Returns parameter
    /// gradients and the gradient with respect to the input batch.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: ArrayView2<'_, f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if cache.net_id != self.id || cache.version != self.version {
            return Err(Error::StaleCache);
        }
        if grad_output.dim() != cache.output.dim() {
            return Err(Error::Shape {
                expected: format!("{:?}", cache.output.dim()),
                actual: format!("{:?}", grad_output.dim()),
            });
        }
        let last = self.layers.len() - 1;
        let mut grads = vec![Dense {
            weight: Array2::zeros((0, 0)),
            bias: Array1::zeros(0),
        }; self.layers.len()];
        let mut upstream = grad_output.to_owned();
        for i in (0..self.layers.len()).rev() {
            let z = &cache.preacts[i];
            let dz = if i == last {
                match self.output {
                    OutputActivation::Identity => upstream,
                    OutputActivation::Sigmoid => {
                        let mut d = upstream;
                        d.zip_mut_with(z, |g, &zv| {
                            let s = sigmoid(zv);
                            *g *= s * (1.0 - s);
                        });
                        d
                    }
                }
            } else {
                let mut d = upstream;
                d.zip_mut_with(z, |g, &zv| {
                    if zv <= 0.0 {
                        *g = 0.0;
                    }
                });
                d
            };
            grads[i] = Dense {
                weight: dz.t().dot(&cache.inputs[i]),
                bias: dz.sum_axis(Axis(0)),
            };
            upstream = dz.dot(&self.layers[i].weight);
        }
        Ok((Gradients { layers: grads }, upstream))
    }

    /// `θ_target ← τ·θ_source + (1 − τ)·θ_target`
    pub fn soft_update(&mut self, source: &DenseNet, tau: f64) -> Result<()> {
        if !self.same_architecture(source) {
            return Err(Error::Shape {
                expected: format!("{:?}", self.widths()),
                actual: format!("{:?}", source.widths()),
            });
        }
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            t.weight.zip_mut_with(&s.weight, |a, &b| *a = tau * b + (1.0 - tau) * *a);
            t.bias.zip_mut_with(&s.bias, |a, &b| *a = tau * b + (1.0 - tau) * *a);
        }
        self.version += 1;
        Ok(())
    }

    pub fn snapshot(&self) -> NetSnapshot {
        NetSnapshot {
            output: self.output,
            layers: self
                .layers
                .iter()
                .map(|l| LayerSnapshot {
                    shape: [l.shape().0, l.shape().1],
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_snapshot(snap: &NetSnapshot) -> Result<Self> {
        let layers = snap
            .layers
            .iter()
            .map(|l| {
                let weight = Array2::from_shape_vec((l.shape[0], l.shape[1]), l.weight.clone())
                    .map_err(|e| Error::Invalid(e.to_string()))?;
                Ok(Dense {
                    weight,
                    bias: Array1::from(l.bias.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers, snap.output)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weight snapshot: layer-order flat arrays with an `[out, in]` shape header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSnapshot {
    pub output: OutputActivation,
    pub layers: Vec<LayerSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSnapshot {
    pub shape: [usize; 2],
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one network.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Dense>,
    v: Vec<Dense>,
    step: u64,
}

impl AdamState {
    pub fn new(net: &DenseNet, config: AdamConfig) -> Self {
        let zeros: Vec<Dense> = net.layers.iter().map(Dense::zeros_like).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != net.layers.len()
            || grads
                .layers
                .iter()
                .zip(&net.layers)
                .any(|(g, l)| g.shape() != l.shape() || g.bias.len() != l.bias.len())
        {
            return Err(Error::Shape {
                expected: format!("{:?}", net.widths()),
                actual: "mismatched gradient".into(),
            });
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("network gradient".into()));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((layer, g), m), v) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(&mut layer.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
        net.version += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn rng(seed: u64) -> Rng {
        Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut net = DenseNet::new(&[3, 4, 1], OutputActivation::Identity, &mut rng(0)).unwrap();
        let zeros = vec![0.0; net.param_count()];
        net.set_params_flat(&zeros).unwrap();
        let y = net.predict(array![[1.0, -2.0, 3.0]].view()).unwrap();
        assert_eq!(y, array![[0.0]]);
    }

    #[test]
    fn single_linear_layer() {
        let net = DenseNet::from_layers(
            vec![Dense {
                weight: array![[2.0]],
                bias: array![1.0],
            }],
            OutputActivation::Identity,
        )
        .unwrap();
        assert_eq!(net.predict(array![[3.0]].view()).unwrap(), array![[7.0]]);
        assert!(net.predict(array![[3.0, 1.0]].view()).is_err());
    }

    #[test]
    fn sigmoid_head_is_bounded() {
        let net = DenseNet::new(&[3, 8, 1], OutputActivation::Sigmoid, &mut rng(2)).unwrap();
        let x = Array2::from_shape_fn((50, 3), |(i, j)| (i as f64 - 25.0) * (j as f64 + 1.0));
        let y = net.predict(x.view()).unwrap();
        assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn param_count_formula() {
        let net = DenseNet::new(&[3, 64, 64, 1], OutputActivation::Sigmoid, &mut rng(0)).unwrap();
        assert_eq!(net.param_count(), 3 * 64 + 64 + 64 * 64 + 64 + 64 + 1);
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let net = DenseNet::from_layers(
            vec![Dense {
                weight: array![[1.0, 2.0], [3.0, 4.0]],
                bias: array![0.0, 0.0],
            }],
            OutputActivation::Identity,
        )
        .unwrap();
        let x = array![[0.5, -1.5]];
        let dy = array![[2.0, -1.0]];
        let cache = net.forward(x.view()).unwrap();
        let (g, dx) = net.backward(&cache, dy.view()).unwrap();
        assert_eq!(g.layers[0].weight, dy.t().dot(&x));
        assert_eq!(g.layers[0].bias, array![2.0, -1.0]);
        assert_eq!(dx, dy.dot(&net.layers()[0].weight));
    }

    #[test]
    fn relu_blocks_negative_preactivation() {
        let net = DenseNet::from_layers(
            vec![
                Dense {
                    weight: array![[1.0]],
                    bias: array![-5.0],
                },
                Dense {
                    weight: array![[1.0]],
                    bias: array![0.0],
                },
            ],
            OutputActivation::Identity,
        )
        .unwrap();
        let cache = net.forward(array![[1.0]].view()).unwrap();
        let (g, dx) = net.backward(&cache, array![[1.0]].view()).unwrap();
        assert_eq!(g.layers[0].weight[[0, 0]], 0.0);
        assert_eq!(g.layers[0].bias[0], 0.0);
        assert_eq!(dx[[0, 0]], 0.0);
    }

    #[test]
    fn stale_and_foreign_caches_are_rejected() {
        let mut net = DenseNet::new(&[2, 3, 1], OutputActivation::Identity, &mut rng(1)).unwrap();
        let other = net.clone();
        let x = array![[0.1, 0.2]];
        let cache = net.forward(x.view()).unwrap();
        assert!(matches!(
            other.backward(&cache, array![[1.0]].view()),
            Err(Error::StaleCache)
        ));
        let (g, _) = net.backward(&cache, array![[1.0]].view()).unwrap();
        let mut adam = AdamState::new(&net, AdamConfig::default());
        adam.step(&mut net, &g).unwrap();
        assert!(matches!(
            net.backward(&cache, array![[1.0]].view()),
            Err(Error::StaleCache)
        ));
    }

    /// Central finite differences of `L = Σ c ⊙ f(x)` over every parameter
    /// and every input coordinate.
    fn finite_difference_check(widths: &[usize], output: OutputActivation, seed: u64) -> f64 {
        let mut r = rng(seed);
        let net = DenseNet::new(widths, output, &mut r).unwrap();
        let batch = 4;
        let x = Array2::from_shape_fn((batch, widths[0]), |_| r.random_range(-1.0..1.0));
        let c = Array2::from_shape_fn((batch, *widths.last().unwrap()), |_| r.random_range(-1.0..1.0));
        let loss = |n: &DenseNet, x: &Array2<f64>| (n.predict(x.view()).unwrap() * &c).sum();
        let cache = net.forward(x.view()).unwrap();
        let (g, dx) = net.backward(&cache, c.view()).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let rel = |a: f64, b: f64| (a - b).abs() / (a.abs() + b.abs()).max(1e-7);
        let base = net.params_flat();
        for (i, &analytic) in g.flatten().iter().enumerate() {
            let mut p = net.clone();
            let mut up = base.clone();
            up[i] += h;
            p.set_params_flat(&up).unwrap();
            let lp = loss(&p, &x);
            up[i] -= 2.0 * h;
            p.set_params_flat(&up).unwrap();
            let lm = loss(&p, &x);
            worst = worst.max(rel(analytic, (lp - lm) / (2.0 * h)));
        }
        for (idx, &analytic) in dx.indexed_iter() {
            let mut xp = x.clone();
            xp[idx] += h;
            let lp = loss(&net, &xp);
            xp[idx] -= 2.0 * h;
            let lm = loss(&net, &xp);
            worst = worst.max(rel(analytic, (lp - lm) / (2.0 * h)));
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let e1 = finite_difference_check(&[3, 6, 5, 1], OutputActivation::Sigmoid, seed);
            let e2 = finite_difference_check(&[4, 6, 5, 2], OutputActivation::Identity, seed);
            assert!(e1 < 1e-4 && e2 < 1e-4, "seed {seed}: {e1} {e2}");
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut net = DenseNet::new(&[2, 3, 1], OutputActivation::Identity, &mut rng(4)).unwrap();
        let before = net.params_flat();
        let mut adam = AdamState::new(&net, AdamConfig::default());
        let zero = Gradients {
            layers: net.layers().iter().map(Dense::zeros_like).collect(),
        };
        adam.step(&mut net, &zero).unwrap();
        assert_eq!(net.params_flat(), before);
    }

    #[test]
    fn adam_first_step_matches_hand_computation() {
        let mut net = DenseNet::from_layers(
            vec![Dense {
                weight: array![[1.0, -1.0]],
                bias: array![0.5],
            }],
            OutputActivation::Identity,
        )
        .unwrap();
        let cfg = AdamConfig::default();
        let g = Gradients {
            layers: vec![Dense {
                weight: array![[0.3, -2.0]],
                bias: array![1e-9],
            }],
        };
        let mut adam = AdamState::new(&net, cfg);
        adam.step(&mut net, &g).unwrap();
        // First step: m̂ = g, v̂ = g², so Δ = -lr · g / (|g| + ε).
        let expect = |p: f64, g: f64| p - cfg.lr * g / (g.abs() + cfg.eps);
        let got = net.params_flat();
        let want = [expect(1.0, 0.3), expect(-1.0, -2.0), expect(0.5, 1e-9)];
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut net = DenseNet::new(&[1, 1], OutputActivation::Identity, &mut rng(0)).unwrap();
        let mut adam = AdamState::new(&net, AdamConfig::default());
        let g = Gradients {
            layers: vec![Dense {
                weight: array![[f64::NAN]],
                bias: array![0.0],
            }],
        };
        assert!(matches!(adam.step(&mut net, &g), Err(Error::NonFinite(_))));
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut r = rng(9);
            let mut net = DenseNet::new(&[2, 4, 1], OutputActivation::Identity, &mut r).unwrap();
            let mut adam = AdamState::new(&net, AdamConfig::default());
            for _ in 0..10 {
                let x = Array2::from_shape_fn((3, 2), |_| r.random_range(-1.0..1.0));
                let cache = net.forward(x.view()).unwrap();
                let (g, _) = net.backward(&cache, Array2::ones((3, 1)).view()).unwrap();
                adam.step(&mut net, &g).unwrap();
            }
            net.params_flat()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn soft_update_cases() {
        let scalar = |w: f64| {
            DenseNet::from_layers(
                vec![Dense {
                    weight: array![[w]],
                    bias: array![w],
                }],
                OutputActivation::Identity,
            )
            .unwrap()
        };
        let src = scalar(2.0);
        let mut t = scalar(0.0);
        t.soft_update(&src, 0.5).unwrap();
        assert_eq!(t.params_flat(), vec![1.0, 1.0]);
        t.soft_update(&src, 0.0).unwrap();
        assert_eq!(t.params_flat(), vec![1.0, 1.0]);
        t.soft_update(&src, 1.0).unwrap();
        assert_eq!(t.params_flat(), src.params_flat());

        let mut wide = DenseNet::new(&[1, 2, 1], OutputActivation::Identity, &mut rng(0)).unwrap();
        assert!(wide.soft_update(&src, 0.5).is_err());
    }

    #[test]
    fn interleaved_networks_do_not_interfere() {
        let mut r = rng(3);
        let a = DenseNet::new(&[3, 5, 1], OutputActivation::Sigmoid, &mut r).unwrap();
        let b = DenseNet::new(&[3, 5, 1], OutputActivation::Sigmoid, &mut r).unwrap();
        let x = array![[0.1, 0.2, 0.3]];
        let alone = a.backward(&a.forward(x.view()).unwrap(), array![[1.0]].view()).unwrap();
        let ca = a.forward(x.view()).unwrap();
        let cb = b.forward(x.view()).unwrap();
        let _ = b.backward(&cb, array![[1.0]].view()).unwrap();
        let interleaved = a.backward(&ca, array![[1.0]].view()).unwrap();
        assert_eq!(alone.0, interleaved.0);
        assert_eq!(alone.1, interleaved.1);
    }

    #[test]
    fn snapshot_roundtrip() {
        let net = DenseNet::new(&[4, 3, 1], OutputActivation::Identity, &mut rng(5)).unwrap();
        let back = DenseNet::from_snapshot(&net.snapshot()).unwrap();
        assert_eq!(back, net);
    }
}
