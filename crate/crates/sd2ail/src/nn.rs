//! Minimal dense-network substrate: fully connected layers with exact
//! reverse-mode gradients and an Adam optimizer over flat parameter
//! vectors. Everything is f64.
//!
//! Parameters are exposed as a single flat vector (layer by layer,
//! row-major weights then biases) so optimizers and finite-difference
//! checks can treat a network as one parameter array.

use std::io::{BufRead, Write};

use rand::Rng;

use crate::linalg::{column_sums, matmul_nn, matmul_nt, matmul_tn, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed in terms of the post-activation value.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fully connected network with identity output. Each hidden layer has
/// its own activation (tanh or ReLU). Weight matrices are stored
/// `(out, in)`.
#[derive(Debug, Clone)]
pub struct DenseNet {
    layer_sizes: Vec<usize>,
    hidden_activations: Vec<Activation>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

/// Number of parameters a net with these layer sizes has. Pure function
/// of the sizes.
pub fn param_count_for(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(
            "a network needs at least an input and an output size".into(),
        ));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::Config("layer sizes must be positive".into()));
    }
    Ok(())
}

impl DenseNet {
    /// Kaiming-uniform fan-in initialization, zero biases, the same
    /// activation on every hidden layer.
    pub fn new<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = layer_sizes.len().saturating_sub(2);
        Self::with_hidden_activations(layer_sizes, &vec![activation; hidden], rng)
    }

    /// Per-hidden-layer activations; `activations.len()` must equal
    /// `layer_sizes.len() - 2`.
    pub fn with_hidden_activations<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros_with(layer_sizes, activations)?;
        for (w, sizes) in net.weights.iter_mut().zip(layer_sizes.windows(2)) {
            let limit = (6.0 / sizes[0] as f64).sqrt();
            for v in w.data_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    /// All-zero parameters; useful as a deterministic starting point.
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        let hidden = layer_sizes.len().saturating_sub(2);
        Self::zeros_with(layer_sizes, &vec![activation; hidden])
    }

    fn zeros_with(layer_sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        if activations.len() != layer_sizes.len() - 2 {
            return Err(Error::Config(format!(
                "expected {} hidden activations, got {}",
                layer_sizes.len() - 2,
                activations.len()
            )));
        }
        let weights = layer_sizes
            .windows(2)
            .map(|w| Matrix::zeros(w[1], w[0]))
            .collect();
        let biases = layer_sizes.windows(2).map(|w| vec![0.0; w[1]]).collect();
        Ok(DenseNet {
            layer_sizes: layer_sizes.to_vec(),
            hidden_activations: activations.to_vec(),
            weights,
            biases,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn hidden_activations(&self) -> &[Activation] {
        &self.hidden_activations
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn param_count(&self) -> usize {
        param_count_for(&self.layer_sizes)
    }

    pub fn weight(&self, layer: usize) -> &Matrix {
        &self.weights[layer]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Matrix {
        &mut self.weights[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Vec<f64> {
        &mut self.biases[layer]
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Dim {
                what: "flat parameters",
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let n = w.data().len();
            w.data_mut().copy_from_slice(&params[off..off + n]);
            off += n;
            let blen = b.len();
            b.copy_from_slice(&params[off..off + blen]);
            off += blen;
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if !w.is_finite() || b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("network parameters".into()));
            }
        }
        Ok(())
    }

    fn activation_of(&self, layer: usize) -> Option<Activation> {
        if layer < self.hidden_activations.len() {
            Some(self.hidden_activations[layer])
        } else {
            None
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_rows(std::slice::from_ref(&input.to_vec()))?;
        let out = self.forward_batch(&m)?;
        Ok(out.row(0).to_vec())
    }

    pub fn forward_batch(&self, inputs: &Matrix) -> Result<Matrix> {
        Ok(self.forward_batch_cached(inputs)?.pop().unwrap())
    }

    /// Forward pass keeping every layer's post-activation output. The
    /// last entry is the network output.
    pub fn forward_batch_cached(&self, inputs: &Matrix) -> Result<Vec<Matrix>> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::Dim {
                what: "network input",
                expected: self.input_dim(),
                got: inputs.cols(),
            });
        }
        let mut acts: Vec<Matrix> = Vec::with_capacity(self.weights.len());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let x = if l == 0 { inputs } else { &acts[l - 1] };
            let mut z = matmul_nt(x, w);
            let act = self.activation_of(l);
            for i in 0..z.rows() {
                let row = z.row_mut(i);
                for (v, bias) in row.iter_mut().zip(b) {
                    *v += bias;
                }
                if let Some(a) = act {
                    for v in row.iter_mut() {
                        *v = a.apply(*v);
                    }
                }
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Output together with the last hidden activation (the input itself
    /// for a single-layer net). The hidden part serves as a feature
    /// embedding for distribution metrics.
    pub fn forward_features(&self, input: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = Matrix::from_rows(std::slice::from_ref(&input.to_vec()))?;
        let acts = self.forward_batch_cached(&m)?;
        let out = acts.last().unwrap().row(0).to_vec();
        let feats = if acts.len() >= 2 {
            acts[acts.len() - 2].row(0).to_vec()
        } else {
            input.to_vec()
        };
        Ok((out, feats))
    }

    /// Reverse-mode pass. `upstream` holds dLoss/dOutput per batch row;
    /// returns summed flat parameter gradients and per-row input
    /// gradients. Pure: the network is not mutated.
    pub fn backward_batch(
        &self,
        inputs: &Matrix,
        acts: &[Matrix],
        upstream: &Matrix,
    ) -> Result<(Vec<f64>, Matrix)> {
        self.backward_impl(inputs, acts, upstream, true)
            .map(|(g, dx)| (g.unwrap(), dx))
    }

    /// Like [`DenseNet::backward_batch`] but skips parameter gradients;
    /// used when only dLoss/dInput is needed (e.g. critic-to-action).
    pub fn input_gradients(
        &self,
        inputs: &Matrix,
        acts: &[Matrix],
        upstream: &Matrix,
    ) -> Result<Matrix> {
        self.backward_impl(inputs, acts, upstream, false)
            .map(|(_, dx)| dx)
    }

    fn backward_impl(
        &self,
        inputs: &Matrix,
        acts: &[Matrix],
        upstream: &Matrix,
        param_grads: bool,
    ) -> Result<(Option<Vec<f64>>, Matrix)> {
        if upstream.cols() != self.output_dim() {
            return Err(Error::Dim {
                what: "upstream gradient",
                expected: self.output_dim(),
                got: upstream.cols(),
            });
        }
        if upstream.rows() != inputs.rows() {
            return Err(Error::Dim {
                what: "upstream rows",
                expected: inputs.rows(),
                got: upstream.rows(),
            });
        }
        let mut grads = if param_grads {
            Some(vec![0.0; self.param_count()])
        } else {
            None
        };
        // Flat offsets of each layer's weight block.
        let mut offsets = Vec::with_capacity(self.weights.len());
        let mut off = 0;
        for w in self.layer_sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }

        let mut delta = upstream.clone();
        for l in (0..self.weights.len()).rev() {
            let layer_input = if l == 0 { inputs } else { &acts[l - 1] };
            if let Some(g) = grads.as_mut() {
                let dw = matmul_tn(&delta, layer_input);
                let db = column_sums(&delta);
                let base = offsets[l];
                let wlen = dw.data().len();
                g[base..base + wlen].copy_from_slice(dw.data());
                g[base + wlen..base + wlen + db.len()].copy_from_slice(&db);
            }
            let mut dx = matmul_nn(&delta, &self.weights[l]);
            if l > 0 {
                let act = self.hidden_activations[l - 1];
                let prev = &acts[l - 1];
                for i in 0..dx.rows() {
                    let dr = dx.row_mut(i);
                    let pr = prev.row(i);
                    for (d, &p) in dr.iter_mut().zip(pr) {
                        *d *= act.grad_from_output(p);
                    }
                }
            }
            delta = dx;
        }
        Ok((grads, delta))
    }

    /// Single-input gradient: returns (flat parameter gradients, input
    /// gradient).
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = Matrix::from_rows(std::slice::from_ref(&input.to_vec()))?;
        let acts = self.forward_batch_cached(&x)?;
        let up = Matrix::from_rows(std::slice::from_ref(&upstream.to_vec()))?;
        let (g, dx) = self.backward_batch(&x, &acts, &up)?;
        Ok((g, dx.row(0).to_vec()))
    }

    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "densenet 1")?;
        let sizes: Vec<String> = self.layer_sizes.iter().map(|s| s.to_string()).collect();
        writeln!(w, "sizes {}", sizes.join(" "))?;
        let acts = if self.hidden_activations.is_empty() {
            "-".to_string()
        } else {
            self.hidden_activations
                .iter()
                .map(|a| a.name())
                .collect::<Vec<_>>()
                .join(" ")
        };
        writeln!(w, "activation {acts}")?;
        let params = self.params_flat();
        writeln!(w, "params {}", params.len())?;
        for chunk in params.chunks(8) {
            let line: Vec<String> = chunk.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        parse_densenet(&text)
    }
}

/// Line-oriented cursor shared by the textual checkpoint parsers.
pub(crate) struct LineCursor<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> LineCursor<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        LineCursor {
            lines: text.lines().enumerate(),
        }
    }

    /// Next line as (1-based number, content), or a parse error naming
    /// what was expected.
    pub(crate) fn next_line(&mut self, expect: &str) -> Result<(usize, &'a str)> {
        match self.lines.next() {
            Some((i, l)) => Ok((i + 1, l)),
            None => Err(Error::parse(0, format!("missing {expect} line"))),
        }
    }

    /// Expect `prefix` followed by a space; returns the remainder.
    pub(crate) fn expect_prefix(&mut self, prefix: &str) -> Result<(usize, &'a str)> {
        let (ln, line) = self.next_line(prefix)?;
        match line.strip_prefix(prefix).and_then(|r| r.strip_prefix(' ')) {
            Some(rest) => Ok((ln, rest)),
            None => Err(Error::parse(ln, format!("expected `{prefix} ...`"))),
        }
    }

    /// Expect a line that equals `tag` exactly.
    pub(crate) fn expect_exact(&mut self, tag: &str) -> Result<usize> {
        let (ln, line) = self.next_line(tag)?;
        if line.trim_end() != tag {
            return Err(Error::parse(ln, format!("expected `{tag}`")));
        }
        Ok(ln)
    }

    /// Read exactly `count` whitespace-separated floats spanning whole
    /// lines.
    pub(crate) fn read_floats(&mut self, count: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let (ln, line) = self.next_line("float data")?;
            for tok in line.split_whitespace() {
                if out.len() == count {
                    return Err(Error::parse(ln, "more values than declared"));
                }
                let v: f64 = tok
                    .parse()
                    .map_err(|e| Error::parse(ln, format!("bad float `{tok}`: {e}")))?;
                out.push(v);
            }
        }
        Ok(out)
    }

    /// Error unless only blank lines remain.
    pub(crate) fn expect_end(&mut self) -> Result<()> {
        for (i, line) in self.lines.by_ref() {
            if !line.trim().is_empty() {
                return Err(Error::parse(i + 1, "unexpected trailing content"));
            }
        }
        Ok(())
    }
}

/// Parse one network dump starting at the cursor position, consuming
/// exactly the lines the writer produced.
pub(crate) fn parse_densenet_from(cursor: &mut LineCursor<'_>) -> Result<DenseNet> {
    let (ln, header) = cursor.next_line("header")?;
    if header.trim() != "densenet 1" {
        return Err(Error::parse(ln, "expected `densenet 1` header"));
    }
    let (ln, sizes_rest) = cursor.expect_prefix("sizes")?;
    let layer_sizes: Vec<usize> = sizes_rest
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|e| Error::parse(ln, format!("bad size `{t}`: {e}")))
        })
        .collect::<Result<_>>()?;
    if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::parse(ln, "invalid layer sizes"));
    }
    // Guard against absurd allocations from corrupt headers.
    let count = param_count_for(&layer_sizes);
    if count > 50_000_000 {
        return Err(Error::parse(ln, "parameter count too large"));
    }

    let (ln, act_rest) = cursor.expect_prefix("activation")?;
    let activations: Vec<Activation> = if act_rest.trim() == "-" {
        Vec::new()
    } else {
        act_rest
            .split_whitespace()
            .map(|t| Activation::parse(t).map_err(|e| Error::parse(ln, e.to_string())))
            .collect::<Result<_>>()?
    };
    if activations.len() != layer_sizes.len() - 2 {
        return Err(Error::parse(
            ln,
            format!(
                "expected {} activations, got {}",
                layer_sizes.len() - 2,
                activations.len()
            ),
        ));
    }

    let (ln, declared_rest) = cursor.expect_prefix("params")?;
    let declared: usize = declared_rest
        .trim()
        .parse()
        .map_err(|e| Error::parse(ln, format!("bad parameter count: {e}")))?;
    if declared != count {
        return Err(Error::parse(
            ln,
            format!("declared {declared} params, sizes imply {count}"),
        ));
    }

    let params = cursor.read_floats(count)?;
    let mut net = DenseNet::zeros_with(&layer_sizes, &activations)
        .map_err(|e| Error::parse(0, e.to_string()))?;
    net.set_params_flat(&params)?;
    Ok(net)
}

/// Parse the textual network dump produced by [`DenseNet::write_text`].
pub fn parse_densenet(text: &str) -> Result<DenseNet> {
    let mut cursor = LineCursor::new(text);
    let net = parse_densenet_from(&mut cursor)?;
    cursor.expect_end()?;
    Ok(net)
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update in place.
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Dim {
                what: "adam parameters",
                expected: self.m.len(),
                got: params.len(),
            });
        }
        if grads.len() != params.len() {
            return Err(Error::Dim {
                what: "adam gradients",
                expected: params.len(),
                got: grads.len(),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient passed to adam".into()));
        }
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Apply one Adam step to a network's parameters.
pub fn adam_step(net: &mut DenseNet, state: &mut AdamState, grads: &[f64]) -> Result<()> {
    let mut params = net.params_flat();
    state.apply(&mut params, grads)?;
    net.set_params_flat(&params)?;
    net.check_finite()
}

/// Soft update `target <- rho * source + (1 - rho) * target`, parameter-wise.
pub fn soft_update(target: &mut DenseNet, source: &DenseNet, rho: f64) -> Result<()> {
    if target.layer_sizes != source.layer_sizes {
        return Err(Error::Config("soft update between mismatched nets".into()));
    }
    let src = source.params_flat();
    let mut dst = target.params_flat();
    for (d, s) in dst.iter_mut().zip(&src) {
        *d = rho * s + (1.0 - rho) * *d;
    }
    target.set_params_flat(&dst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = DenseNet::zeros(&[3, 3], Activation::Tanh).unwrap();
        for i in 0..3 {
            net.weight_mut(0).set(i, i, 1.0);
        }
        let x = vec![0.3, -0.7, 2.0];
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_weights_return_output_bias() {
        let mut net = DenseNet::zeros(&[4, 5, 2], Activation::Relu).unwrap();
        *net.bias_mut(1) = vec![1.5, -2.5];
        let y = net.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(y, vec![1.5, -2.5]);
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let net = DenseNet::new(&[3, 2], Activation::Tanh, &mut rng(0)).unwrap();
        assert!(net.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn forward_is_referentially_transparent() {
        let net = DenseNet::new(&[4, 16, 3], Activation::Tanh, &mut rng(7)).unwrap();
        let x = vec![0.1, -0.2, 0.3, 0.9];
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mixed_hidden_activations_apply_in_order() {
        let mut net = DenseNet::zeros_with(&[1, 1, 1, 1], &[Activation::Relu, Activation::Tanh])
            .unwrap();
        for l in 0..3 {
            net.weight_mut(l).set(0, 0, 1.0);
        }
        // relu(-2) = 0, tanh(0) = 0
        *net.bias_mut(0) = vec![-2.0];
        assert_eq!(net.forward(&[0.0]).unwrap(), vec![0.0]);
        // relu(2) = 2, tanh(2) then passes through the identity output
        *net.bias_mut(0) = vec![2.0];
        assert_eq!(net.forward(&[0.0]).unwrap(), vec![2.0_f64.tanh()]);
    }

    #[test]
    fn linear_backward_is_outer_product() {
        // y = Wx, single layer, so dW = g x^T and db = g.
        let mut net = DenseNet::zeros(&[3, 2], Activation::Tanh).unwrap();
        net.weight_mut(0).data_mut().copy_from_slice(&[
            0.5, -1.0, 2.0, //
            1.0, 0.0, -0.5,
        ]);
        let x = vec![1.0, 2.0, 3.0];
        let g = vec![0.7, -0.3];
        let (grads, dx) = net.backward(&x, &g).unwrap();
        // weight grads: rows of g times x
        let expected_w = [
            0.7, 1.4, 2.1, //
            -0.3, -0.6, -0.9,
        ];
        for (got, want) in grads[..6].iter().zip(expected_w.iter()) {
            assert!((got - want).abs() < 1e-15);
        }
        // bias grads equal upstream
        assert_eq!(&grads[6..8], g.as_slice());
        // input grad = W^T g
        let expected_dx = [
            0.5 * 0.7 + 1.0 * (-0.3),
            -1.0 * 0.7 + 0.0,
            2.0 * 0.7 + (-0.5) * (-0.3),
        ];
        for (got, want) in dx.iter().zip(expected_dx.iter()) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let net = DenseNet::new(&[3, 8, 2], Activation::Relu, &mut rng(3)).unwrap();
        let (grads, dx) = net.backward(&[0.5, 0.1, -0.4], &[0.0, 0.0]).unwrap();
        assert!(grads.iter().all(|&g| g == 0.0));
        assert!(dx.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn param_count_matches_flat_length() {
        for sizes in [vec![2, 3], vec![4, 16, 16, 2], vec![1, 1]] {
            let net = DenseNet::new(&sizes, Activation::Tanh, &mut rng(1)).unwrap();
            assert_eq!(net.params_flat().len(), param_count_for(&sizes));
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut net = DenseNet::new(&[2, 4, 1], Activation::Tanh, &mut rng(5)).unwrap();
        let before = net.params_flat();
        let mut adam = AdamState::new(net.param_count(), 1e-3);
        let zeros = vec![0.0; net.param_count()];
        adam_step(&mut net, &mut adam, &zeros).unwrap();
        assert_eq!(net.params_flat(), before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn adam_constant_gradient_decreases_scalar() {
        let mut params = vec![1.0];
        let mut adam = AdamState::new(1, 0.01);
        let mut prev = params[0];
        for _ in 0..200 {
            adam.apply(&mut params, &[2.5]).unwrap();
            assert!(params[0] < prev);
            prev = params[0];
        }
    }

    #[test]
    fn adam_single_step_matches_hand_formula() {
        // One step on a scalar: m = (1-b1) g, v = (1-b2) g^2, with bias
        // correction the update is exactly lr * g / (|g| + eps).
        let g = 0.37;
        let lr = 0.002;
        let mut params = vec![1.0];
        let mut adam = AdamState::new(1, lr);
        adam.apply(&mut params, &[g]).unwrap();
        let expected = 1.0 - lr * g / (g.abs() + 1e-8);
        assert!((params[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_lr_zero_is_identity() {
        let mut net = DenseNet::new(&[3, 6, 2], Activation::Relu, &mut rng(9)).unwrap();
        let before = net.params_flat();
        let mut adam = AdamState::new(net.param_count(), 0.0);
        let grads: Vec<f64> = (0..net.param_count())
            .map(|i| (i as f64) * 0.1 - 1.0)
            .collect();
        adam_step(&mut net, &mut adam, &grads).unwrap();
        assert_eq!(net.params_flat(), before);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut adam = AdamState::new(2, 1e-3);
        let mut params = vec![0.0, 0.0];
        assert!(adam.apply(&mut params, &[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let net = DenseNet::new(&[5, 11, 3], Activation::Relu, &mut rng(42)).unwrap();
        let mut buf = Vec::new();
        net.write_text(&mut buf).unwrap();
        let restored = parse_densenet(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(restored.layer_sizes(), net.layer_sizes());
        assert_eq!(restored.hidden_activations(), net.hidden_activations());
        let a = net.params_flat();
        let b = restored.params_flat();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn single_layer_checkpoint_roundtrip() {
        let net = DenseNet::new(&[4, 2], Activation::Tanh, &mut rng(1)).unwrap();
        let mut buf = Vec::new();
        net.write_text(&mut buf).unwrap();
        let restored = parse_densenet(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(restored.params_flat(), net.params_flat());
    }

    #[test]
    fn parse_rejects_corrupt_dumps() {
        assert!(parse_densenet("garbage").is_err());
        assert!(parse_densenet("densenet 1\nsizes 3\nactivation tanh\nparams 0\n").is_err());
        assert!(
            parse_densenet("densenet 1\nsizes 2 2\nactivation -\nparams 6\n1 2 3\n").is_err()
        );
    }

    #[test]
    fn soft_update_is_exact_convex_combination() {
        let mut rng = rng(11);
        let src = DenseNet::new(&[3, 5, 2], Activation::Tanh, &mut rng).unwrap();
        let mut dst = DenseNet::new(&[3, 5, 2], Activation::Tanh, &mut rng).unwrap();
        let old = dst.params_flat();
        soft_update(&mut dst, &src, 0.25).unwrap();
        for ((d, s), o) in dst.params_flat().iter().zip(src.params_flat()).zip(old) {
            assert_eq!(*d, 0.25 * s + 0.75 * o);
        }
        soft_update(&mut dst, &src, 1.0).unwrap();
        assert_eq!(dst.params_flat(), src.params_flat());
    }
}
