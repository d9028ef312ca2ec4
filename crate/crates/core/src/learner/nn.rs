//! Small fully-connected networks with hand-written backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut d = Dense::zeros(inputs, outputs);
        for w in d.weights.iter_mut().chain(d.bias.iter_mut()) {
            *w = rng.random_range(-bound..bound);
        }
        d
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let s: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(s + self.bias[o]);
        }
    }
}

/// ReLU on every hidden layer, identity on the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer activations recorded during a forward pass.
pub struct Tape {
    /// `inputs[l]` is what layer `l` consumed.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation outputs of each layer.
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.pre.last().expect("network has layers")
    }
}

impl Mlp {
    /// Layer widths, e.g. `[3, 4, 4, 5]`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        Mlp {
            layers: widths
                .windows(2)
                .map(|w| Dense::uniform(w[0], w[1], rng))
                .collect(),
        }
    }

    /// Like [`Mlp::new`], but redraws a hidden layer while one of its units
    /// is inactive on every probe input.
    pub fn new_alive<R: Rng + ?Sized>(widths: &[usize], probes: &[Vec<f64>], rng: &mut R) -> Self {
        const TRIES: usize = 64;
        let mut layers: Vec<Dense> = Vec::new();
        let mut acts: Vec<Vec<f64>> = probes.to_vec();
        let last = widths.len() - 2;
        for (i, w) in widths.windows(2).enumerate() {
            let mut layer = Dense::uniform(w[0], w[1], rng);
            if i < last {
                for _ in 0..TRIES {
                    if layer_alive(&layer, &acts) {
                        break;
                    }
                    layer = Dense::uniform(w[0], w[1], rng);
                }
                let mut z = Vec::new();
                acts = acts
                    .iter()
                    .map(|a| {
                        layer.apply(a, &mut z);
                        z.iter().map(|v| v.max(0.0)).collect()
                    })
                    .collect();
            }
            layers.push(layer);
        }
        Mlp { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.inputs).collect();
        if let Some(l) = self.layers.last() {
            w.push(l.outputs);
        }
        w
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_tape(x).pre.pop().expect("network has layers")
    }

    pub fn forward_tape(&self, x: &[f64]) -> Tape {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.apply(&cur, &mut z);
            let next = if i < last {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                Vec::new()
            };
            inputs.push(std::mem::replace(&mut cur, next));
            pre.push(z);
        }
        Tape { inputs, pre }
    }

    /// Adds the gradient of `dot(d_out, output)` to `grad`.
    pub fn backward(&self, tape: &Tape, d_out: &[f64], grad: &mut Mlp) {
        let mut delta = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let g = &mut grad.layers[l];
            let input = &tape.inputs[l];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, v) in row.iter_mut().zip(input) {
                    *gw += d * v;
                }
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            // ReLU derivative of the previous layer
            for (p, z) in prev.iter_mut().zip(&tape.pre[l - 1]) {
                if *z <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.params().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        self.params_mut().for_each(|v| *v *= c);
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }
}

fn layer_alive(layer: &Dense, inputs: &[Vec<f64>]) -> bool {
    let mut z = Vec::new();
    let mut alive = vec![false; layer.outputs];
    for x in inputs {
        layer.apply(x, &mut z);
        for (a, v) in alive.iter_mut().zip(&z) {
            *a |= *v > 0.0;
        }
    }
    alive.into_iter().all(|a| a)
}

/// Optimiser state for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    Sgd,
    Adam {
        m: Vec<f64>,
        v: Vec<f64>,
        step: u64,
    },
}

impl Optimizer {
    pub fn adam(net: &Mlp) -> Self {
        Optimizer::Adam {
            m: vec![0.0; net.num_params()],
            v: vec![0.0; net.num_params()],
            step: 0,
        }
    }

    /// Descends along `grad` with step size `lr`.
    pub fn step(&mut self, net: &mut Mlp, grad: &Mlp, lr: f64) {
        match self {
            Optimizer::Sgd => {
                for (p, g) in net.params_mut().zip(grad.params()) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { m, v, step } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                *step += 1;
                let c1 = 1.0 - B1.powi(*step as i32);
                let c2 = 1.0 - B2.powi(*step as i32);
                for (((p, g), mi), vi) in net
                    .params_mut()
                    .zip(grad.params())
                    .zip(m.iter_mut())
                    .zip(v.iter_mut())
                {
                    *mi = B1 * *mi + (1.0 - B1) * g;
                    *vi = B2 * *vi + (1.0 - B2) * g * g;
                    *p -= lr * (*mi / c1) / ((*vi / c2).sqrt() + EPS);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[3, 5, 4, 2], &mut rng);
        let x = [0.3, -0.7, 0.9];
        let w = [0.4, -1.3];
        let f = |n: &Mlp| n.forward(&x).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let mut grad = net.zeros_like();
        net.backward(&net.forward_tape(&x), &w, &mut grad);
        let h = 1e-6;
        let analytic: Vec<f64> = grad.params().copied().collect();
        for i in 0..net.num_params() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            *plus.params_mut().nth(i).unwrap() += h;
            *minus.params_mut().nth(i).unwrap() -= h;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!((numeric - analytic[i]).abs() < 1e-7, "param {i}");
        }
    }

    #[test]
    fn alive_init_has_no_dead_units() {
        let probes: Vec<Vec<f64>> = (0..8)
            .map(|i| vec![(i & 1) as f64, (i >> 1 & 1) as f64, (i >> 2 & 1) as f64])
            .collect();
        for seed in 0..50 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let net = Mlp::new_alive(&[3, 4, 4, 5], &probes, &mut rng);
            let mut acts = probes.clone();
            for layer in &net.layers[..2] {
                assert!(layer_alive(layer, &acts), "seed {seed}");
                let mut z = Vec::new();
                acts = acts
                    .iter()
                    .map(|a| {
                        layer.apply(a, &mut z);
                        z.iter().map(|v| v.max(0.0)).collect()
                    })
                    .collect();
            }
        }
    }

    #[test]
    fn widths_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert_eq!(Mlp::new(&[3, 32, 32, 32, 1], &mut rng).widths(), vec![3, 32, 32, 32, 1]);
    }
}
