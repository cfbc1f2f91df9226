//! Small fully connected regressors: rectifier on hidden layers, identity
//! on the output layer, trained by plain mini-batch gradient descent.
//!
//! Weights are stored input-major (`weights[i * outputs + o]`) so that both a
//! sparse first-layer input and the backward pass walk contiguous rows.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tfidf::{BitsEq, SparseVec};
use crate::num::{accumulate_rows, axpy, dot, scatter_rows, Real};

/// Below this many rows, packing the weights for a matrix product costs
/// more than walking them row by row.
const GEMM_MIN_ROWS: usize = 8;

/// Sparse inputs of a batch, ordered by feature index so each first-layer
/// weight row is read once for the whole batch.
#[derive(Clone, Debug, Default)]
pub struct SparseBatch<T> {
    pub rows: usize,
    pub dim: usize,
    /// `(feature, row, value)` triples.
    entries: Vec<(u32, u32, T)>,
}

impl<T: Real> SparseBatch<T> {
    pub fn new(xs: &[&SparseVec<T>]) -> Self {
        let dim = xs.first().map_or(0, |x| x.dim);
        // Counting sort on the feature index; rows stay in order within a
        // feature because they are visited in order.
        let mut start = vec![0usize; dim + 1];
        for x in xs {
            assert_eq!(x.dim, dim, "mixed input dimensions in one batch");
            for &i in &x.indices {
                start[i as usize + 1] += 1;
            }
        }
        for i in 0..dim {
            start[i + 1] += start[i];
        }
        let mut entries = vec![(0, 0, T::zero()); start[dim]];
        for (b, x) in xs.iter().enumerate() {
            for (i, a) in x.iter() {
                entries[start[i]] = (i as u32, b as u32, a);
                start[i] += 1;
            }
        }
        SparseBatch { rows: xs.len(), dim, entries }
    }

    /// `x · W + b` for every row, on a layer over the same input space.
    pub(crate) fn project(&self, layer: &Layer<T>) -> Vec<T> {
        let w = layer.outputs;
        let mut out = Vec::with_capacity(self.rows * w);
        for _ in 0..self.rows {
            out.extend_from_slice(&layer.bias);
        }
        scatter_rows(&mut out, w, &self.entries, |i| layer.row(i));
        out
    }
}

/// First layers of several networks over one input space, side by side:
/// row `i` holds every network's weights for input `i`.
pub(crate) fn fuse_first_layers<T: Real>(nets: &[&Mlp<T>]) -> Layer<T> {
    let inputs = nets[0].input_dim();
    let outputs: usize = nets.iter().map(|n| n.layers[0].outputs).sum();
    let mut weights = Vec::with_capacity(inputs * outputs);
    for i in 0..inputs {
        for n in nets {
            assert_eq!(n.input_dim(), inputs, "fused layers must share inputs");
            weights.extend_from_slice(n.layers[0].row(i));
        }
    }
    let bias = nets.iter().flat_map(|n| n.layers[0].bias.iter().copied()).collect();
    Layer { inputs, outputs, weights, bias }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct Layer<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Layer<T> {
    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.weights[i * self.outputs..(i + 1) * self.outputs]
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|w| w.is_finite())
    }
}

impl<T: Real> PartialEq for Layer<T> {
    fn eq(&self, other: &Self) -> bool {
        self.inputs == other.inputs
            && self.outputs == other.outputs
            && self.weights.len() == other.weights.len()
            && self.weights.iter().zip(&other.weights).all(|(a, b)| a.to_bits_eq(*b))
            && self.bias.len() == other.bias.len()
            && self.bias.iter().zip(&other.bias).all(|(a, b)| a.to_bits_eq(*b))
    }
}

/// Layer stack; consecutive dimensions always chain.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct Mlp<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> PartialEq for Mlp<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Per-layer activations kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct Activations<T> {
    layers: Vec<Vec<T>>,
}

impl<T> Activations<T> {
    pub fn output(&self) -> &[T] {
        self.layers.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Accumulated gradients. Only first-layer rows touched by a sparse input
/// are tracked, so resetting between mini-batches stays cheap.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    weights: Vec<Vec<T>>,
    bias: Vec<Vec<T>>,
    touched: Vec<u32>,
    touched_mask: Vec<bool>,
}

impl<T: Real> Gradients<T> {
    pub fn for_net(net: &Mlp<T>) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| vec![T::zero(); l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![T::zero(); l.bias.len()]).collect(),
            touched: Vec::new(),
            touched_mask: vec![false; net.input_dim()],
        }
    }

    pub fn reset(&mut self, net: &Mlp<T>) {
        let width = net.layers[0].outputs;
        for &i in &self.touched {
            let i = i as usize;
            self.weights[0][i * width..(i + 1) * width].fill(T::zero());
            self.touched_mask[i] = false;
        }
        self.touched.clear();
        for w in self.weights.iter_mut().skip(1) {
            w.fill(T::zero());
        }
        for b in &mut self.bias {
            b.fill(T::zero());
        }
    }

    /// Flattened view in (layer, weights then bias) order, for tests.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Huber loss of residual `r` and its derivative.
#[inline]
pub fn huber<T: Real>(r: T, delta: T) -> (T, T) {
    let half = T::lit(0.5);
    if r.abs() <= delta {
        (half * r * r, r)
    } else {
        (delta * (r.abs() - half * delta), delta * r.signum())
    }
}

impl<T: Real> Mlp<T> {
    /// Random initialization from `seed`. Hidden layers use He-uniform
    /// scaling; the first layer assumes unit-norm inputs, which is what
    /// TF-IDF featurization produces.
    pub fn new(dims: &[usize], seed: u64) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (inputs, outputs) = (w[0], w[1]);
                let fan_in = if l == 0 { 1.0 } else { inputs as f64 };
                let gain = if l == last { 3.0 } else { 6.0 };
                let bound = (gain / fan_in).sqrt();
                let weights = (0..inputs * outputs)
                    .map(|_| T::lit(rng.random_range(-bound..bound)))
                    .collect();
                Layer { inputs, outputs, weights, bias: vec![T::zero(); outputs] }
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.outputs));
        d
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Dimensions chain and every parameter is finite.
    pub fn is_well_formed(&self) -> bool {
        self.layers.windows(2).all(|w| w[0].outputs == w[1].inputs)
            && self.layers.iter().all(|l| {
                l.weights.len() == l.inputs * l.outputs && l.bias.len() == l.outputs && l.is_finite()
            })
    }

    pub fn forward(&self, x: &SparseVec<T>) -> Vec<T> {
        let mut acts = Activations::default();
        self.forward_cached(x, &mut acts);
        acts.layers.pop().unwrap_or_default()
    }

    /// Forward pass over many inputs; row `b` of the result is the output
    /// for input `b` of the batch.
    pub fn forward_batch(&self, xs: &SparseBatch<T>) -> Vec<T> {
        if xs.rows == 0 {
            return Vec::new();
        }
        debug_assert_eq!(xs.dim, self.input_dim());
        self.forward_hidden(xs.project(&self.layers[0]), xs.rows)
    }

    /// Finishes a batched pass from first-layer pre-activations, `rows`
    /// rows of width `layers[0].outputs`.
    pub(crate) fn forward_hidden(&self, mut cur: Vec<T>, rows: usize) -> Vec<T> {
        let mut next = Vec::new();
        for layer in &self.layers[1..] {
            for v in cur.iter_mut() {
                *v = v.max(T::zero());
            }
            let w = layer.outputs;
            next.clear();
            for _ in 0..rows {
                next.extend_from_slice(&layer.bias);
            }
            if rows < GEMM_MIN_ROWS {
                for (out, x) in next.chunks_exact_mut(w).zip(cur.chunks_exact(layer.inputs)) {
                    let active = x.iter().copied().enumerate().filter(|&(_, a)| a != T::zero());
                    accumulate_rows(out, active, |i| layer.row(i));
                }
            } else {
                T::gemm(rows, layer.inputs, w, &cur, &layer.weights, &mut next);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Forward pass that keeps every layer's activation in `acts`.
    pub fn forward_cached(&self, x: &SparseVec<T>, acts: &mut Activations<T>) {
        debug_assert_eq!(x.dim, self.input_dim());
        let n = self.layers.len();
        acts.layers.resize_with(n, Vec::new);
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, rest) = acts.layers.split_at_mut(l);
            let out = &mut rest[0];
            out.clear();
            out.extend_from_slice(&layer.bias);
            if l == 0 {
                accumulate_rows(out, x.iter(), |i| layer.row(i));
            } else {
                // Rectified inputs are often exactly zero; skip those rows.
                let live = before[l - 1].iter().enumerate().filter(|(_, a)| **a != T::zero()).map(|(i, &a)| (i, a));
                accumulate_rows(out, live, |i| layer.row(i));
            }
            if l + 1 < n {
                for v in out.iter_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients given dLoss/dOutput.
    pub fn backward(
        &self,
        x: &SparseVec<T>,
        acts: &Activations<T>,
        grad_out: &[T],
        grads: &mut Gradients<T>,
    ) {
        let mut delta = grad_out.to_vec();
        let mut next = Vec::new();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let width = layer.outputs;
            axpy(&mut grads.bias[l], T::one(), &delta);
            if l == 0 {
                for (i, v) in x.iter() {
                    if !grads.touched_mask[i] {
                        grads.touched_mask[i] = true;
                        grads.touched.push(i as u32);
                    }
                    axpy(&mut grads.weights[0][i * width..(i + 1) * width], v, &delta);
                }
                break;
            }
            let input = &acts.layers[l - 1];
            next.clear();
            next.resize(layer.inputs, T::zero());
            for (i, &a) in input.iter().enumerate() {
                // Rectifier: zero activations pass no gradient either way.
                if a > T::zero() {
                    axpy(&mut grads.weights[l][i * width..(i + 1) * width], a, &delta);
                    next[i] = dot(layer.row(i), &delta);
                }
            }
            std::mem::swap(&mut delta, &mut next);
        }
    }

    /// Mean Huber loss over one output unit against `target`, and its
    /// gradients. Used for gradient checking.
    pub fn huber_loss_and_grad(&self, x: &SparseVec<T>, target: T, delta: T) -> (T, Gradients<T>) {
        let mut acts = Activations::default();
        self.forward_cached(x, &mut acts);
        let (loss, g) = huber(acts.output()[0] - target, delta);
        let mut grads = Gradients::for_net(self);
        self.backward(x, &acts, &[g], &mut grads);
        (loss, grads)
    }

    /// `θ ← θ − step · ∇`.
    pub fn apply(&mut self, grads: &Gradients<T>, step: T) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            if l == 0 {
                let w = layer.outputs;
                for &i in &grads.touched {
                    let i = i as usize;
                    axpy(&mut layer.weights[i * w..(i + 1) * w], -step, &grads.weights[0][i * w..(i + 1) * w]);
                }
            } else {
                axpy(&mut layer.weights, -step, &grads.weights[l]);
            }
            axpy(&mut layer.bias, -step, &grads.bias[l]);
        }
    }

    /// Parameters flattened in the same order as [`Gradients::flatten`].
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Mutable access to the `k`-th flattened parameter.
    pub fn param_mut(&mut self, mut k: usize) -> &mut T {
        for l in &mut self.layers {
            if k < l.weights.len() {
                return &mut l.weights[k];
            }
            k -= l.weights.len();
            if k < l.bias.len() {
                return &mut l.bias[k];
            }
            k -= l.bias.len();
        }
        panic!("parameter index out of range");
    }
}

/// Mini-batch gradient descent settings.
#[derive(Clone, Copy, Debug)]
pub struct Sgd {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Trains `net` on `samples` with a caller-supplied loss. `loss_grad`
/// receives the sample index and network output, writes dLoss/dOutput and
/// returns the loss. Returns the mean loss of the final epoch.
pub fn train<T: Real, F>(net: &mut Mlp<T>, samples: &[&SparseVec<T>], sgd: Sgd, mut loss_grad: F) -> f64
where
    F: FnMut(usize, &[T], &mut [T]) -> T,
{
    if samples.is_empty() {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sgd.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grads = Gradients::for_net(net);
    let mut acts = Activations::default();
    let mut grad_out = vec![T::zero(); net.output_dim()];
    let batch = sgd.batch_size.max(1);
    let mut last_epoch_loss = 0.0;
    for _ in 0..sgd.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            grads.reset(net);
            for &i in chunk {
                net.forward_cached(samples[i], &mut acts);
                grad_out.fill(T::zero());
                total += loss_grad(i, acts.output(), &mut grad_out).as_f64();
                net.backward(samples[i], &acts, &grad_out, &mut grads);
            }
            let step = T::lit(sgd.learning_rate / chunk.len() as f64);
            net.apply(&grads, step);
        }
        last_epoch_loss = total / samples.len() as f64;
    }
    last_epoch_loss
}

/// Scalar regression with Huber loss against `targets`.
pub fn train_regression<T: Real>(
    net: &mut Mlp<T>,
    samples: &[&SparseVec<T>],
    targets: &[T],
    delta: T,
    sgd: Sgd,
) -> f64 {
    train(net, samples, sgd, |i, out, g| {
        let (loss, d) = huber(out[0] - targets[i], delta);
        g[0] = d;
        loss
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_input(values: &[f64]) -> SparseVec<f64> {
        SparseVec::full(values)
    }

    #[test]
    fn dims_chain_and_count() {
        let net: Mlp<f64> = Mlp::new(&[10, 4, 3, 1], 1);
        assert!(net.is_well_formed());
        assert_eq!(net.dims(), vec![10, 4, 3, 1]);
        assert_eq!(net.parameter_count(), 10 * 4 + 4 + 4 * 3 + 3 + 3 + 1);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a: Mlp<f32> = Mlp::new(&[6, 5, 1], 42);
        let b: Mlp<f32> = Mlp::new(&[6, 5, 1], 42);
        let c: Mlp<f32> = Mlp::new(&[6, 5, 1], 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sparse_and_dense_inputs_agree() {
        let net: Mlp<f64> = Mlp::new(&[5, 4, 2], 3);
        let dense = [0.0, 0.5, 0.0, -0.25, 0.1];
        let a = net.forward(&SparseVec::from_dense(&dense));
        let b = net.forward(&SparseVec::full(&dense));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_forward_matches_single() {
        let net: Mlp<f64> = Mlp::new(&[6, 5, 4, 2], 9);
        let xs: Vec<SparseVec<f64>> = (0..7).map(|b| dense_input(&[b as f64, -1.0, 0.5, 0.0, 2.0, -0.3 * b as f64])).collect();
        let refs: Vec<&SparseVec<f64>> = xs.iter().collect();
        let batch = net.forward_batch(&SparseBatch::new(&refs));
        for (b, x) in xs.iter().enumerate() {
            let one = net.forward(x);
            for o in 0..2 {
                assert!((batch[b * 2 + o] - one[o]).abs() < 1e-12);
            }
        }
        assert!(net.forward_batch(&SparseBatch::new(&[])).is_empty());
    }

    #[test]
    fn huber_pieces() {
        assert_eq!(huber(0.5f64, 1.0), (0.125, 0.5));
        assert_eq!(huber(3.0f64, 1.0), (2.5, 1.0));
        assert_eq!(huber(-3.0f64, 1.0), (2.5, -1.0));
    }

    #[test]
    fn regression_fits_a_constant() {
        let mut net: Mlp<f64> = Mlp::new(&[3, 8, 1], 5);
        let xs: Vec<SparseVec<f64>> = (0..20)
            .map(|i| dense_input(&[1.0, (i % 3) as f64 * 0.1, 0.0]))
            .collect();
        let refs: Vec<&SparseVec<f64>> = xs.iter().collect();
        let ys = vec![0.7; 20];
        let sgd = Sgd { epochs: 200, learning_rate: 0.05, batch_size: 4, seed: 1 };
        let loss = train_regression(&mut net, &refs, &ys, 1.0, sgd);
        assert!(loss < 1e-4, "final loss {loss}");
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
    }

    fn near_kink(net: &Mlp<f64>, x: &SparseVec<f64>, target: f64, delta: f64) -> bool {
        let mut acts = Activations::default();
        net.forward_cached(x, &mut acts);
        let n = acts.layers.len();
        // Recompute pre-activations of hidden layers to see if any sit on the
        // rectifier kink, where finite differences are meaningless.
        let mut input: Vec<f64> = x.to_dense();
        for (l, layer) in net.layers.iter().enumerate() {
            let mut pre = layer.bias.clone();
            for (i, &a) in input.iter().enumerate() {
                axpy(&mut pre, a, layer.row(i));
            }
            if l + 1 < n && pre.iter().any(|v| v.abs() < 1e-4) {
                return true;
            }
            input = acts.layers[l].clone();
        }
        let r = acts.output()[0] - target;
        (r.abs() - delta).abs() < 1e-4
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn gradients_match_finite_differences(
            seed in 0u64..10_000,
            input in proptest::collection::vec(-1.0f64..1.0, 4),
            target in -3.0f64..3.0,
            delta in 0.2f64..2.0,
        ) {
            let net: Mlp<f64> = Mlp::new(&[4, 5, 4, 1], seed);
            let x = dense_input(&input);
            prop_assume!(!near_kink(&net, &x, target, delta));
            let (_, grads) = net.huber_loss_and_grad(&x, target, delta);
            let analytic = grads.flatten();
            let h = 1e-6;
            for k in 0..analytic.len() {
                let mut plus = net.clone();
                *plus.param_mut(k) += h;
                let mut minus = net.clone();
                *minus.param_mut(k) -= h;
                let lp = plus.huber_loss_and_grad(&x, target, delta).0;
                let lm = minus.huber_loss_and_grad(&x, target, delta).0;
                let numeric = (lp - lm) / (2.0 * h);
                let err = relative_error(analytic[k], numeric);
                prop_assert!(
                    err <= 1e-4 || (analytic[k] - numeric).abs() < 1e-9,
                    "param {} analytic {} numeric {} rel {}", k, analytic[k], numeric, err
                );
            }
        }
    }
}
