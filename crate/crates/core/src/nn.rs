//! Small dense networks with hand-written backpropagation.
//!
//! Parameters of an [`Mlp`] live in one flat vector, layer by layer, each
//! layer as a row-major `outputs x inputs` weight block followed by its bias.
//! Hidden layers use tanh; the output layer is linear.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    /// `activations[0]` is the input, `activations[k]` the output of layer `k`.
    activations: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map_or(&[], Vec::as_slice)
    }
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs at least input and output sizes");
        let count = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; count],
        }
    }

    /// Orthogonal weights scaled by `hidden_gain` (last layer: `output_gain`), zero biases.
    pub fn orthogonal<R: Rng>(sizes: &[usize], hidden_gain: f64, output_gain: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let layers = sizes.len() - 1;
        for layer in 0..layers {
            let (inputs, outputs) = (sizes[layer], sizes[layer + 1]);
            let gain = if layer + 1 == layers { output_gain } else { hidden_gain };
            let w = orthogonal_matrix(outputs, inputs, rng);
            let offset = net.layer_offset(layer);
            for (dst, src) in net.params[offset..offset + outputs * inputs].iter_mut().zip(w) {
                *dst = gain * src;
            }
        }
        net
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Option<Self> {
        let net = Self::zeros(sizes);
        (net.params.len() == params.len()).then(|| Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.sizes[..=layer]
            .windows(2)
            .take(layer)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut cache = MlpCache::default();
        self.forward_cached(input, &mut cache);
        cache.activations.pop().unwrap_or_default()
    }

    pub fn forward_cached<'c>(&self, input: &[f64], cache: &'c mut MlpCache) -> &'c [f64] {
        assert_eq!(input.len(), self.input_dim(), "mlp input size");
        let layers = self.sizes.len() - 1;
        cache.activations.resize_with(layers + 1, Vec::new);
        cache.activations[0].clear();
        cache.activations[0].extend_from_slice(input);
        let mut offset = 0;
        for layer in 0..layers {
            let (inputs, outputs) = (self.sizes[layer], self.sizes[layer + 1]);
            let (weights, rest) = self.params[offset..].split_at(outputs * inputs);
            let bias = &rest[..outputs];
            let (done, todo) = cache.activations.split_at_mut(layer + 1);
            let x = &done[layer];
            let out = &mut todo[0];
            out.clear();
            for (row, b) in weights.chunks_exact(inputs).zip(bias) {
                let z = b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
                out.push(if layer + 1 < layers { z.tanh() } else { z });
            }
            offset += outputs * inputs + outputs;
        }
        cache.output()
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d output`
    /// for the forward pass recorded in `cache`.
    pub fn backward(&self, cache: &MlpCache, grad_output: &[f64], grads: &mut [f64]) {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size");
        let layers = self.sizes.len() - 1;
        let mut delta = grad_output.to_vec();
        let mut offset = self.params.len();
        for layer in (0..layers).rev() {
            let (inputs, outputs) = (self.sizes[layer], self.sizes[layer + 1]);
            offset -= outputs * inputs + outputs;
            let x = &cache.activations[layer];
            let (gw, gb) = grads[offset..offset + outputs * inputs + outputs].split_at_mut(outputs * inputs);
            for ((grow, gbias), d) in gw.chunks_exact_mut(inputs).zip(gb.iter_mut()).zip(&delta) {
                *gbias += d;
                for (g, xi) in grow.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            if layer > 0 {
                let weights = &self.params[offset..offset + outputs * inputs];
                let mut prev = vec![0.0; inputs];
                for (row, d) in weights.chunks_exact(inputs).zip(&delta) {
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                // x is tanh output of the previous layer
                for (p, a) in prev.iter_mut().zip(x) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
    }
}

/// Row-major `rows x cols` matrix with orthonormal rows (or columns, when
/// `rows > cols`), from Gram-Schmidt on a Gaussian matrix.
pub fn orthogonal_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    let (long, short) = (rows.max(cols), rows.min(cols));
    // `short` orthonormal vectors of length `long`
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            v.iter_mut().zip(b).for_each(|(a, c)| *a -= dot * c);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        }
    }
    let mut m = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            m[r * cols + c] = if rows <= cols { basis[r][c] } else { basis[c][r] };
        }
    }
    m
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / (norm + 1e-6);
        grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|g| *g *= scale);
    }
    norm
}

/// Adaptive moment estimation over a fixed list of parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, group_sizes: &[usize]) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), self.first.len(), "adam parameter groups");
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let step_size = self.learning_rate / bias1;
        for (group, ((p, g), (m, v))) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
            .enumerate()
        {
            assert_eq!(p.len(), m.len(), "adam group {group} size");
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= step_size * m[i] / ((v[i] / bias2).sqrt() + self.epsilon);
            }
        }
    }
}

/// Running per-element mean and variance (parallel-variance merge).
#[derive(Debug, Clone, PartialEq)]
pub struct RunningMeanStd {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
}

impl RunningMeanStd {
    pub const EPSILON: f64 = 1e-8;
    pub const CLIP: f64 = 10.0;

    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 1e-4,
        }
    }

    pub fn update(&mut self, sample: &[f64]) {
        let total = self.count + 1.0;
        for ((m, v), &x) in self.mean.iter_mut().zip(self.var.iter_mut()).zip(sample) {
            let delta = x - *m;
            let new_mean = *m + delta / total;
            let m2 = *v * self.count + delta * delta * self.count / total;
            *m = new_mean;
            *v = m2 / total;
        }
        self.count = total;
    }

    pub fn normalize(&self, sample: &[f64]) -> Vec<f64> {
        sample
            .iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(x, (m, v))| ((x - m) / (v + Self::EPSILON).sqrt()).clamp(-Self::CLIP, Self::CLIP))
            .collect()
    }
}
