//! Small hand-written network pieces: dense layers, a ReLU MLP and the Adam optimizer.

use rand::Rng;

/// Fully-connected layer `y = W x + b` with `W` stored row-major as `out x inp`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inp: usize,
    pub out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(inp: usize, out: usize) -> Self {
        Self { inp, out, w: vec![0.0; inp * out], b: vec![0.0; out] }
    }

    /// Uniform Glorot initialisation, zero bias.
    pub fn glorot<R: Rng>(inp: usize, out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inp + out) as f64).sqrt();
        let w = (0..inp * out).map(|_| rng.gen_range(-limit..limit)).collect();
        Self { inp, out, w, b: vec![0.0; out] }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inp);
        (0..self.out)
            .map(|o| self.b[o] + self.w[o * self.inp..(o + 1) * self.inp].iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient w.r.t. `x`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.inp];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.b[o] += g;
            let row = o * self.inp;
            for i in 0..self.inp {
                grad.w[row + i] += g * x[i];
                dx[i] += g * self.w[row + i];
            }
        }
        dx
    }
}

/// Multilayer perceptron with ReLU between layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer inputs recorded during a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        Self { layers: sizes.windows(2).map(|s| Dense::glorot(s[0], s[1], rng)).collect() }
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| Dense::zeros(l.inp, l.out)).collect() }
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inp
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().expect("nonempty").out
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let mut cache = MlpCache { inputs: Vec::new(), pre: Vec::new() };
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            cache.inputs.push(std::mem::take(&mut h));
            h = if i < last { z.iter().map(|&v| v.max(0.0)).collect() } else { z.clone() };
            cache.pre.push(z);
        }
        (h, cache)
    }

    pub fn backward(&self, cache: &MlpCache, dout: &[f64], grad: &mut Mlp) {
        let mut d = dout.to_vec();
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                for (g, &z) in d.iter_mut().zip(&cache.pre[i]) {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            d = self.layers[i].backward(&cache.inputs[i], &d, &mut grad.layers[i]);
        }
    }

    pub fn params(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.w"), l.w.as_slice()));
            out.push((format!("layer{i}.b"), l.b.as_slice()));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.w.as_mut_slice());
            out.push(l.b.as_mut_slice());
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }
}

/// Adam over an arbitrary list of parameter slices.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }
}

impl Adam {
    pub fn step(&mut self, lr: f64, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        if lr == 0.0 {
            return;
        }
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::new(&[5, 7, 3], &mut rng);
        let x: Vec<f64> = (0..5).map(|i| (i as f64 * 0.7).sin()).collect();
        let loss = |n: &Mlp| n.forward(&x).iter().enumerate().map(|(i, y)| (i as f64 + 1.0) * y).sum::<f64>();
        let (_, cache) = net.forward_cached(&x);
        let mut grad = net.zeros_like();
        net.backward(&cache, &[1.0, 2.0, 3.0], &mut grad);
        let h = 1e-6;
        for l in 0..net.layers.len() {
            for i in 0..net.layers[l].w.len() {
                let orig = net.layers[l].w[i];
                net.layers[l].w[i] = orig + h;
                let up = loss(&net);
                net.layers[l].w[i] = orig - h;
                let down = loss(&net);
                net.layers[l].w[i] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - grad.layers[l].w[i]).abs() < 1e-6, "layer {l} w[{i}]");
            }
        }
    }

    #[test]
    fn adam_zero_lr_is_noop() {
        let mut p = vec![1.0, 2.0];
        let mut adam = Adam::default();
        adam.step(0.0, vec![p.as_mut_slice()], vec![&[0.5, -0.5]]);
        assert_eq!(p, vec![1.0, 2.0]);
        adam.step(0.1, vec![p.as_mut_slice()], vec![&[0.5, -0.5]]);
        assert!(p[0] < 1.0 && p[1] > 2.0);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
