//! Bias-free deep linear networks with a two-logit softmax/NLL head.
//!
//! Layer `l` holds a `k_l × n_l` weight matrix and maps a batch of row vectors
//! `a_{l-1}` (`b × n_l`) to `a_l = a_{l-1} θ_lᵀ`. Layers are indexed from 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::BinaryDataset;
use crate::error::{contract, Result};
use crate::numerics::{matmul, matmul_chain, Mat64};

/// Number of output logits; every network in this crate is a two-class classifier.
pub const OUTPUTS: usize = 2;

/// Layer widths as `(input, output)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArchSpec {
    layer_dims: Vec<(usize, usize)>,
}

/// Hidden-width presets for the experiment architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Preset {
    /// One hidden layer of 128.
    A,
    /// Hidden widths 2048, 1024, 128.
    B,
    /// Hidden widths 2500, 1500, 1024, 512, 256, 64, 16.
    C,
    /// No hidden layer.
    Single,
}

impl Preset {
    pub fn hidden_widths(self) -> &'static [usize] {
        match self {
            Preset::A => &[128],
            Preset::B => &[2048, 1024, 128],
            Preset::C => &[2500, 1500, 1024, 512, 256, 64, 16],
            Preset::Single => &[],
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Some(Preset::A),
            "b" => Some(Preset::B),
            "c" => Some(Preset::C),
            "single" => Some(Preset::Single),
            _ => None,
        }
    }
}

impl ArchSpec {
    /// Builds an architecture from the full width list `[n_1, k_1, k_2, ..., 2]`.
    pub fn from_widths(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            contract!("an architecture needs an input and an output width");
        }
        if widths.contains(&0) {
            contract!("layer widths must be positive");
        }
        if *widths.last().unwrap() != OUTPUTS {
            contract!("the final layer must have {OUTPUTS} outputs");
        }
        Ok(Self {
            layer_dims: widths.windows(2).map(|w| (w[0], w[1])).collect(),
        })
    }

    /// Preset hidden widths on top of an input of width `input_dim`.
    pub fn preset(preset: Preset, input_dim: usize) -> Result<Self> {
        Self::preset_scaled(preset, input_dim, 1)
    }

    /// Preset with every hidden width divided by `divisor` (rounded up).
    pub fn preset_scaled(preset: Preset, input_dim: usize, divisor: usize) -> Result<Self> {
        if divisor == 0 {
            contract!("width divisor must be positive");
        }
        let mut widths = vec![input_dim];
        widths.extend(preset.hidden_widths().iter().map(|w| w.div_ceil(divisor)));
        widths.push(OUTPUTS);
        Self::from_widths(&widths)
    }

    pub fn layer_dims(&self) -> &[(usize, usize)] {
        &self.layer_dims
    }

    pub fn depth(&self) -> usize {
        self.layer_dims.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0].0
    }

    /// Full width list `[n_1, k_1, ..., k_L]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layer_dims.iter().map(|&(_, k)| k));
        w
    }
}

/// Stack of bias-free weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearNet {
    layers: Vec<Mat64>,
    arch: ArchSpec,
    seed: Option<u64>,
}

impl LinearNet {
    /// Wraps explicit weights, checking that widths chain and end in two outputs.
    pub fn from_layers(layers: Vec<Mat64>) -> Result<Self> {
        let Some(first) = layers.first() else {
            contract!("a network needs at least one layer");
        };
        let mut widths = vec![first.cols()];
        for (l, m) in layers.iter().enumerate() {
            if m.cols() != *widths.last().unwrap() {
                contract!(
                    "layer {l} expects {} inputs but the previous layer produces {}",
                    m.cols(),
                    widths.last().unwrap()
                );
            }
            widths.push(m.rows());
        }
        let arch = ArchSpec::from_widths(&widths)?;
        Ok(Self {
            layers,
            arch,
            seed: None,
        })
    }

    pub fn layers(&self) -> &[Mat64] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Mat64] {
        &mut self.layers
    }

    pub fn layer(&self, l: usize) -> &Mat64 {
        &self.layers[l]
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// End-to-end map `θ_L ⋯ θ_1` as a single `2 × n_1` matrix.
    pub fn collapsed(&self) -> Result<Mat64> {
        let reversed: Vec<Mat64> = self.layers.iter().rev().cloned().collect();
        matmul_chain(&reversed)
    }

    /// Copy whose end-to-end map is negated (the output layer's sign flipped).
    pub fn with_negated_output(&self) -> Self {
        let mut out = self.clone();
        let last = out.layers.last_mut().expect("non-empty");
        *last = last.scaled(-1.0);
        out
    }
}

/// Draws every weight of layer `l` uniformly from `[-1/√n_l, 1/√n_l]`.
pub fn init_network(arch: &ArchSpec, seed: u64) -> LinearNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = arch
        .layer_dims()
        .iter()
        .map(|&(n, k)| {
            let bound = 1.0 / (n as f64).sqrt();
            Mat64::from_fn(k, n, |_, _| rng.gen_range(-bound..=bound))
        })
        .collect();
    LinearNet {
        layers,
        arch: arch.clone(),
        seed: Some(seed),
    }
}

/// Activations `a_0 .. a_L` of one forward pass; `a_0` is the input batch.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub activations: Vec<Mat64>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Mat64 {
        self.activations
            .last()
            .expect("trace holds at least the input")
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].rows()
    }
}

pub fn forward(net: &LinearNet, inputs: &Mat64) -> Result<ForwardTrace> {
    if inputs.cols() != net.arch.input_dim() {
        contract!(
            "input width {} does not match network input {}",
            inputs.cols(),
            net.arch.input_dim()
        );
    }
    let mut activations = Vec::with_capacity(net.depth() + 1);
    activations.push(inputs.clone());
    for theta in &net.layers {
        let next = activations.last().unwrap().matmul_nt(theta)?;
        activations.push(next);
    }
    Ok(ForwardTrace { activations })
}

/// Per-sample gradient of the loss with respect to the logits.
///
/// Row `i` of `g` is `softmax(z_i) − onehot(y_i) = c_i · (1, −1)`, built from `c_i`
/// so that each row sums to exactly zero.
#[derive(Debug, Clone)]
pub struct OutputGrad {
    pub g: Mat64,
    pub c: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Mean negative log-likelihood of log-softmax outputs, and the per-sample logit gradients.
pub fn nll_loss_and_grad(trace: &ForwardTrace, labels: &[u8]) -> Result<(f64, OutputGrad)> {
    let logits = trace.logits();
    if labels.len() != logits.rows() {
        contract!("{} labels for a batch of {}", labels.len(), logits.rows());
    }
    if logits.cols() != OUTPUTS {
        contract!("expected {OUTPUTS} logits, got {}", logits.cols());
    }
    let b = labels.len();
    let mut loss = 0.0;
    let mut c = Vec::with_capacity(b);
    for (z, &y) in logits.row_iter().zip(labels) {
        // Margin of the other class over the true one.
        let (margin, ci) = match y {
            0 => (z[1] - z[0], -sigmoid(z[1] - z[0])),
            1 => (z[0] - z[1], sigmoid(z[0] - z[1])),
            _ => contract!("label {y} is not binary"),
        };
        loss += softplus(margin);
        c.push(ci);
    }
    let g = Mat64::from_fn(b, OUTPUTS, |i, j| if j == 0 { c[i] } else { -c[i] });
    Ok((loss / b as f64, OutputGrad { g, c }))
}

/// Weight gradients of one optimization step, shape-matched to the network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub grads: Vec<Mat64>,
    pub step: usize,
}

impl GradientSet {
    pub fn layer(&self, l: usize) -> &Mat64 {
        &self.grads[l]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Mat64::is_finite)
    }

    pub(crate) fn check_matches(&self, net: &LinearNet) -> Result<()> {
        if self.grads.len() != net.depth()
            || self
                .grads
                .iter()
                .zip(net.layers())
                .any(|(g, w)| g.shape() != w.shape())
        {
            contract!("gradient shapes do not match the network");
        }
        Ok(())
    }
}

/// Backpropagation: `δ_L = g`, `δ_{l-1} = δ_l θ_l`, `∂θ_l = (1/b) δ_lᵀ a_{l-1}`.
pub fn backward(net: &LinearNet, trace: &ForwardTrace, og: &OutputGrad) -> Result<GradientSet> {
    let depth = net.depth();
    if trace.activations.len() != depth + 1 {
        contract!(
            "trace has {} levels for a depth-{depth} network",
            trace.activations.len()
        );
    }
    if og.g.shape() != trace.logits().shape() {
        contract!("output gradient shape does not match the logits");
    }
    let inv_b = 1.0 / trace.batch_size() as f64;
    let mut grads = vec![Mat64::zeros(0, 0); depth];
    let mut delta = og.g.clone();
    for l in (0..depth).rev() {
        grads[l] = delta.matmul_tn(&trace.activations[l])?.scaled(inv_b);
        if l > 0 {
            delta = matmul(&delta, &net.layers[l])?;
        }
    }
    Ok(GradientSet { grads, step: 0 })
}

/// Forward, loss and backward on one batch.
pub fn loss_and_gradients(
    net: &LinearNet,
    inputs: &Mat64,
    labels: &[u8],
) -> Result<(f64, GradientSet)> {
    let trace = forward(net, inputs)?;
    let (loss, og) = nll_loss_and_grad(&trace, labels)?;
    let grads = backward(net, &trace, &og)?;
    Ok((loss, grads))
}

/// Mean NLL through a generic max-subtracted log-sum-exp; independent of [`nll_loss_and_grad`].
fn reference_loss(net: &LinearNet, inputs: &Mat64, labels: &[u8]) -> Result<f64> {
    let trace = forward(net, inputs)?;
    let mut total = 0.0;
    for (z, &y) in trace.logits().row_iter().zip(labels) {
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[usize::from(y)];
    }
    Ok(total / labels.len() as f64)
}

/// Central-difference estimate of every weight gradient.
pub fn finite_difference_grads(
    net: &LinearNet,
    inputs: &Mat64,
    labels: &[u8],
    eps: f64,
) -> Result<GradientSet> {
    if !(1e-7..=1e-3).contains(&eps) {
        contract!("finite-difference step {eps} outside [1e-7, 1e-3]");
    }
    if labels.len() != inputs.rows() {
        contract!("{} labels for {} samples", labels.len(), inputs.rows());
    }
    let mut probe = net.clone();
    let mut grads = Vec::with_capacity(net.depth());
    for l in 0..net.depth() {
        let (rows, cols) = net.layers[l].shape();
        let mut g = Mat64::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let w = net.layers[l].get(i, j);
                probe.layers[l].set(i, j, w + eps);
                let plus = reference_loss(&probe, inputs, labels)?;
                probe.layers[l].set(i, j, w - eps);
                let minus = reference_loss(&probe, inputs, labels)?;
                probe.layers[l].set(i, j, w);
                g.set(i, j, (plus - minus) / (2.0 * eps));
            }
        }
        grads.push(g);
    }
    Ok(GradientSet { grads, step: 0 })
}

/// Fraction of samples whose larger logit matches the label; ties go to class 0.
pub fn evaluate_accuracy(net: &LinearNet, ds: &BinaryDataset) -> Result<f64> {
    if ds.is_empty() {
        contract!("accuracy of an empty dataset");
    }
    if ds.dim() != net.arch.input_dim() {
        contract!(
            "dataset width {} vs network input {}",
            ds.dim(),
            net.arch.input_dim()
        );
    }
    let logits = ds.inputs().matmul_nt(&net.collapsed()?)?;
    let correct = logits
        .row_iter()
        .zip(ds.labels())
        .filter(|(z, &y)| u8::from(z[1] > z[0]) == y)
        .count();
    Ok(correct as f64 / ds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat64 {
        Mat64::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn rel_err(a: &Mat64, b: &Mat64) -> f64 {
        let mut d = a.clone();
        d.add_scaled(-1.0, b).unwrap();
        d.frobenius_norm() / a.frobenius_norm().max(b.frobenius_norm())
    }

    fn random_problem(widths: &[usize], b: usize, seed: u64) -> (LinearNet, Mat64, Vec<u8>) {
        let net = init_network(&ArchSpec::from_widths(widths).unwrap(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let x = random_mat(b, widths[0], &mut rng);
        let y = (0..b).map(|i| (i % 2) as u8).collect();
        (net, x, y)
    }

    #[test]
    fn preset_shapes() {
        let a = init_network(&ArchSpec::preset(Preset::A, 3072).unwrap(), 0);
        let shapes: Vec<_> = a.layers().iter().map(Mat64::shape).collect();
        assert_eq!(shapes, vec![(128, 3072), (2, 128)]);
        let b = ArchSpec::preset(Preset::B, 3072).unwrap();
        assert_eq!(
            b.layer_dims(),
            &[(3072, 2048), (2048, 1024), (1024, 128), (128, 2)]
        );
        let c = ArchSpec::preset(Preset::C, 3072).unwrap();
        assert_eq!(
            c.widths(),
            vec![3072, 2500, 1500, 1024, 512, 256, 64, 16, 2]
        );
        assert_eq!(
            ArchSpec::preset(Preset::Single, 10).unwrap().widths(),
            vec![10, 2]
        );
        assert_eq!(
            ArchSpec::preset_scaled(Preset::B, 256, 8).unwrap().widths(),
            vec![256, 256, 128, 16, 2]
        );
    }

    #[test]
    fn bad_architectures() {
        assert!(ArchSpec::from_widths(&[4]).is_err());
        assert!(ArchSpec::from_widths(&[4, 3]).is_err());
        assert!(ArchSpec::from_widths(&[4, 0, 2]).is_err());
        let bad = vec![Mat64::zeros(3, 4), Mat64::zeros(2, 5)];
        assert!(LinearNet::from_layers(bad).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let arch = ArchSpec::from_widths(&[30, 12, 2]).unwrap();
        let a = init_network(&arch, 42);
        assert_eq!(a, init_network(&arch, 42));
        assert_ne!(a, init_network(&arch, 43));
        for (m, &(n, _)) in a.layers().iter().zip(arch.layer_dims()) {
            let bound = 1.0 / (n as f64).sqrt();
            assert!(m.as_slice().iter().all(|x| x.abs() <= bound));
        }
    }

    #[test]
    fn forward_identity_and_zero_layers() {
        let id = LinearNet::from_layers(vec![Mat64::identity(2); 3]).unwrap();
        let x = Mat64::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.5]]).unwrap();
        assert_eq!(forward(&id, &x).unwrap().logits(), &x);

        let (mut net, x, _) = random_problem(&[5, 4, 3, 2], 3, 1);
        net.layers_mut()[1] = Mat64::zeros(3, 4);
        let logits = forward(&net, &x).unwrap().logits().clone();
        assert!(logits.as_slice().iter().all(|&z| z == 0.0));
        assert!(forward(&net, &Mat64::zeros(3, 6)).is_err());
    }

    #[test]
    fn forward_collapses_to_product() {
        let (net, x, _) = random_problem(&[9, 7, 5, 2], 6, 3);
        let logits = forward(&net, &x).unwrap().logits().clone();
        let collapsed = x.matmul_nt(&net.collapsed().unwrap()).unwrap();
        assert!(rel_err(&logits, &collapsed) <= 1e-13);
    }

    #[test]
    fn loss_examples() {
        let trace = |z: [f64; 2]| ForwardTrace {
            activations: vec![Mat64::from_rows(&[z.to_vec()]).unwrap()],
        };
        let (loss, og) = nll_loss_and_grad(&trace([0.0, 0.0]), &[0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(og.g.as_slice(), &[-0.5, 0.5]);

        let (loss, og) = nll_loss_and_grad(&trace([3f64.ln(), 0.0]), &[0]).unwrap();
        assert!((loss - (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((og.g.get(0, 0) + 0.25).abs() < 1e-15);
        assert!((og.g.get(0, 1) - 0.25).abs() < 1e-15);
        assert_eq!(og.c[0], og.g.get(0, 0));

        // Saturated logits stay finite.
        let (loss, og) = nll_loss_and_grad(&trace([800.0, -800.0]), &[1]).unwrap();
        assert!((loss - 1600.0).abs() < 1e-9);
        assert_eq!(og.c[0], 1.0);
        assert!(nll_loss_and_grad(&trace([0.0, 0.0]), &[2]).is_err());
        assert!(nll_loss_and_grad(&trace([0.0, 0.0]), &[0, 1]).is_err());
    }

    #[test]
    fn single_sample_single_layer_gradient_is_outer_product() {
        let (net, x, y) = random_problem(&[6, 2], 1, 5);
        let trace = forward(&net, &x).unwrap();
        let (_, og) = nll_loss_and_grad(&trace, &y).unwrap();
        let grads = backward(&net, &trace, &og).unwrap();
        let expected = Mat64::outer(og.g.row(0), x.row(0));
        assert_eq!(grads.layer(0), &expected);
        for (g, xv) in grads.layer(0).row(0).iter().zip(x.row(0)) {
            assert_eq!(*g, og.c[0] * xv);
        }
    }

    #[test]
    fn batch_gradient_is_mean_of_singletons() {
        let (net, x, y) = random_problem(&[8, 6, 4, 2], 5, 9);
        let (_, batch) = loss_and_gradients(&net, &x, &y).unwrap();
        for l in 0..net.depth() {
            let mut mean = Mat64::zeros(batch.layer(l).rows(), batch.layer(l).cols());
            for i in 0..5 {
                let (xi, yi) = (x.select_rows(&[i]).unwrap(), [y[i]]);
                let (_, gi) = loss_and_gradients(&net, &xi, &yi).unwrap();
                mean.add_scaled(0.2, gi.layer(l)).unwrap();
            }
            assert!(rel_err(&mean, batch.layer(l)) <= 1e-14, "layer {l}");
        }
    }

    fn max_rel_error(a: &GradientSet, b: &GradientSet) -> f64 {
        a.grads
            .iter()
            .zip(&b.grads)
            .flat_map(|(x, y)| x.as_slice().iter().zip(y.as_slice()))
            .map(|(p, q)| (p - q).abs() / p.abs().max(q.abs()).max(FD_FLOOR))
            .fold(0.0, f64::max)
    }

    /// Denominator floor for elementwise relative error, so entries near zero
    /// are compared on an absolute scale.
    const FD_FLOOR: f64 = 1e-4;

    #[test]
    fn backward_matches_finite_differences() {
        let (net, x, y) = random_problem(&[10, 5, 2], 4, 11);
        let (_, g) = loss_and_gradients(&net, &x, &y).unwrap();
        let fd = finite_difference_grads(&net, &x, &y, 1e-5).unwrap();
        assert!(max_rel_error(&g, &fd) <= 1e-6);
    }

    #[test]
    fn zero_network_finite_differences() {
        let net = LinearNet::from_layers(vec![Mat64::zeros(4, 7), Mat64::zeros(2, 4)]).unwrap();
        let (_, x, y) = random_problem(&[7, 4, 2], 4, 13);
        let (_, g) = loss_and_gradients(&net, &x, &y).unwrap();
        let fd = finite_difference_grads(&net, &x, &y, 1e-5).unwrap();
        for (a, b) in g.grads.iter().zip(&fd.grads) {
            for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((p - q).abs() <= 1e-8);
            }
        }
        assert!(finite_difference_grads(&net, &x, &y, 1e-2).is_err());
    }

    #[test]
    fn finite_difference_error_is_second_order() {
        let (net, x, y) = random_problem(&[6, 4, 2], 4, 17);
        let (_, g) = loss_and_gradients(&net, &x, &y).unwrap();
        let err = |eps: f64| {
            let fd = finite_difference_grads(&net, &x, &y, eps).unwrap();
            g.grads
                .iter()
                .zip(&fd.grads)
                .flat_map(|(a, b)| a.as_slice().iter().zip(b.as_slice()))
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(1e-3) / err(5e-4);
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
    }

    fn tiny_dataset() -> BinaryDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Mat64::from_fn(10, 3, |_, _| rng.gen_range(0.0..1.0));
        BinaryDataset::new(x, vec![0, 0, 1, 0, 1, 1, 0, 1, 0, 0], (0, 1)).unwrap()
    }

    #[test]
    fn zero_network_ties_go_to_class_zero() {
        let ds = tiny_dataset();
        let net = LinearNet::from_layers(vec![Mat64::zeros(2, 3)]).unwrap();
        assert_eq!(evaluate_accuracy(&net, &ds).unwrap(), 0.6);
    }

    #[test]
    fn negated_network_flips_accuracy() {
        let ds = tiny_dataset();
        let net = init_network(&ArchSpec::from_widths(&[3, 4, 2]).unwrap(), 2);
        let acc = evaluate_accuracy(&net, &ds).unwrap();
        let flipped = evaluate_accuracy(&net.with_negated_output(), &ds).unwrap();
        assert!((acc + flipped - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn output_gradient_rows_sum_to_zero(z in prop::collection::vec(-50.0f64..50.0, 2..40)) {
            let b = z.len() / 2;
            let logits = Mat64::from_vec(b, 2, z[..2 * b].to_vec()).unwrap();
            let labels: Vec<u8> = (0..b).map(|i| (i % 2) as u8).collect();
            let trace = ForwardTrace { activations: vec![logits] };
            let (_, og) = nll_loss_and_grad(&trace, &labels).unwrap();
            for r in og.g.row_iter() {
                prop_assert!((r[0] + r[1]).abs() <= 1e-15);
            }
        }

        #[test]
        fn collapse_holds_up_to_depth_eight(depth in 1usize..=8, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut widths: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..=12)).collect();
            widths.push(2);
            let (net, x, _) = random_problem(&widths, 5, seed);
            let logits = forward(&net, &x).unwrap().logits().clone();
            let collapsed = x.matmul_nt(&net.collapsed().unwrap()).unwrap();
            prop_assert!(rel_err(&logits, &collapsed) <= 1e-12);
        }

        #[test]
        fn backward_is_linear_in_the_batch(seed in 0u64..500, b in 1usize..6) {
            let (net, x, y) = random_problem(&[5, 4, 3, 2], b, seed);
            let (_, batch) = loss_and_gradients(&net, &x, &y).unwrap();
            for l in 0..net.depth() {
                let mut mean = Mat64::zeros(batch.layer(l).rows(), batch.layer(l).cols());
                for i in 0..b {
                    let (_, gi) =
                        loss_and_gradients(&net, &x.select_rows(&[i]).unwrap(), &[y[i]]).unwrap();
                    mean.add_scaled(1.0 / b as f64, gi.layer(l)).unwrap();
                }
                prop_assert!(rel_err(&mean, batch.layer(l)) <= 1e-13);
            }
        }
    }
}
