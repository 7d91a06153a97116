use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::conv::{conv_backward, conv_forward, ConvGeometry};
use super::tensor::{axpy, dot, softmax, Scalar, Tensor};
use super::NnError;

pub const CONV1_FILTERS: usize = 16;
pub const CONV1_KERNEL: usize = 8;
pub const CONV1_STRIDE: usize = 4;
pub const CONV2_FILTERS: usize = 32;
pub const CONV2_KERNEL: usize = 4;
pub const CONV2_STRIDE: usize = 2;
pub const HIDDEN_UNITS: usize = 256;
pub const NUM_ACTIONS: usize = 6;
pub const INPUT_SIZE: usize = 84;

/// Whether the goal-mask stream is present.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamLayout {
    /// Observation stream and goal-mask stream, concatenated before the head.
    DualStream,
    /// Observation stream only (the plain actor-critic baseline).
    SingleStream,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub layout: StreamLayout,
    /// Channels of the observation stream (stacked frames).
    pub frame_stack: usize,
    pub input_size: usize,
    pub actions: usize,
}

/// Activation sizes along the network, as `(height, width, channels)` per
/// conv stage and flat widths for the head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapePipeline {
    pub input: (usize, usize, usize),
    pub conv1: (usize, usize, usize),
    pub conv2: (usize, usize, usize),
    pub streams: usize,
    pub concat: usize,
    pub hidden: usize,
    pub policy: usize,
    pub value: usize,
}

impl Architecture {
    pub fn new(layout: StreamLayout, frame_stack: usize) -> Result<Self, NnError> {
        let arch = Architecture {
            layout,
            frame_stack,
            input_size: INPUT_SIZE,
            actions: NUM_ACTIONS,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn dual_stream(frame_stack: usize) -> Self {
        Self::new(StreamLayout::DualStream, frame_stack).expect("valid architecture")
    }

    pub fn single_stream(frame_stack: usize) -> Self {
        Self::new(StreamLayout::SingleStream, frame_stack).expect("valid architecture")
    }

    fn validate(&self) -> Result<(), NnError> {
        if self.frame_stack == 0 || self.input_size < CONV1_KERNEL || self.actions == 0 {
            return Err(NnError::InvalidArchitecture(format!("{self:?}")));
        }
        let c1 = self.conv1(self.frame_stack);
        if c1.out_h() < CONV2_KERNEL {
            return Err(NnError::InvalidArchitecture(format!(
                "conv1 output {}x{} too small for conv2",
                c1.out_h(),
                c1.out_w()
            )));
        }
        Ok(())
    }

    pub fn has_mask_stream(&self) -> bool {
        self.layout == StreamLayout::DualStream
    }

    pub fn streams(&self) -> usize {
        if self.has_mask_stream() {
            2
        } else {
            1
        }
    }

    pub(crate) fn conv1(&self, in_channels: usize) -> ConvGeometry {
        ConvGeometry {
            in_channels,
            in_h: self.input_size,
            in_w: self.input_size,
            out_channels: CONV1_FILTERS,
            kernel: CONV1_KERNEL,
            stride: CONV1_STRIDE,
        }
    }

    pub(crate) fn conv2(&self) -> ConvGeometry {
        let c1 = self.conv1(1);
        ConvGeometry {
            in_channels: CONV1_FILTERS,
            in_h: c1.out_h(),
            in_w: c1.out_w(),
            out_channels: CONV2_FILTERS,
            kernel: CONV2_KERNEL,
            stride: CONV2_STRIDE,
        }
    }

    pub fn stream_features(&self) -> usize {
        self.conv2().output_len()
    }

    pub fn feature_len(&self) -> usize {
        self.stream_features() * self.streams()
    }

    pub fn shape_pipeline(&self) -> ShapePipeline {
        let c1 = self.conv1(self.frame_stack);
        let c2 = self.conv2();
        ShapePipeline {
            input: (self.input_size, self.input_size, self.frame_stack),
            conv1: (c1.out_h(), c1.out_w(), c1.out_channels),
            conv2: (c2.out_h(), c2.out_w(), c2.out_channels),
            streams: self.streams(),
            concat: self.feature_len(),
            hidden: HIDDEN_UNITS,
            policy: self.actions,
            value: 1,
        }
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut specs = Vec::new();
        let mut stream = |prefix: &str, channels: usize| {
            let c1 = self.conv1(channels);
            let c2 = self.conv2();
            specs.push((format!("{prefix}.conv1.weight"), c1.weight_shape().to_vec()));
            specs.push((format!("{prefix}.conv1.bias"), vec![c1.out_channels]));
            specs.push((format!("{prefix}.conv2.weight"), c2.weight_shape().to_vec()));
            specs.push((format!("{prefix}.conv2.bias"), vec![c2.out_channels]));
        };
        stream("state", self.frame_stack);
        if self.has_mask_stream() {
            stream("mask", 1);
        }
        specs.push(("fc.weight".into(), vec![HIDDEN_UNITS, self.feature_len()]));
        specs.push(("fc.bias".into(), vec![HIDDEN_UNITS]));
        specs.push(("policy.weight".into(), vec![self.actions, HIDDEN_UNITS]));
        specs.push(("policy.bias".into(), vec![self.actions]));
        specs.push(("value.weight".into(), vec![1, HIDDEN_UNITS]));
        specs.push(("value.bias".into(), vec![1]));
        specs
    }

    /// Stable hash of the layer specification.
    pub fn fingerprint(&self) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(format!("{:?}|", self.layout));
        for (name, shape) in self.param_specs() {
            hasher.update(format!("{name}:{shape:?};"));
        }
        hasher.update(format!(
            "conv1={CONV1_KERNEL}/{CONV1_STRIDE};conv2={CONV2_KERNEL}/{CONV2_STRIDE};relu;softmax"
        ));
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    fn head_offset(&self) -> usize {
        4 * self.streams()
    }
}

// Index of each tensor within `NetworkParams::tensors`.
const STATE: usize = 0;
const MASK: usize = 4;
const CONV1_W: usize = 0;
const CONV1_B: usize = 1;
const CONV2_W: usize = 2;
const CONV2_B: usize = 3;
const FC_W: usize = 0;
const FC_B: usize = 1;
const POLICY_W: usize = 2;
const POLICY_B: usize = 3;
const VALUE_W: usize = 4;
const VALUE_B: usize = 5;

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Weights of one network: a flat list of tensors laid out per
/// [`Architecture::param_specs`]. Also used to hold gradients.
#[derive(Clone, Debug)]
pub struct NetworkParams<S = f32> {
    arch: Architecture,
    tensors: Vec<Tensor<S>>,
    generation: u64,
}

impl<S: Scalar> PartialEq for NetworkParams<S> {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.tensors == other.tensors
    }
}

pub type Gradients<S = f32> = NetworkParams<S>;

impl<S: Scalar> NetworkParams<S> {
    pub fn zeros(arch: Architecture) -> Self {
        let tensors = arch
            .param_specs()
            .iter()
            .map(|(_, shape)| Tensor::zeros(shape))
            .collect();
        NetworkParams {
            arch,
            tensors,
            generation: next_generation(),
        }
    }

    /// Uniform in ±1/sqrt(fan_in) for every weight and bias tensor.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(arch);
        let specs = arch.param_specs();
        for (tensor, (name, shape)) in params.tensors.iter_mut().zip(&specs) {
            let fan_in = fan_in(name, shape, &specs);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in tensor.data_mut() {
                *v = S::of(rng.gen_range(-bound..bound));
            }
        }
        params
    }

    pub fn from_tensors(arch: Architecture, tensors: Vec<Tensor<S>>) -> Result<Self, NnError> {
        let specs = arch.param_specs();
        if specs.len() != tensors.len() {
            return Err(NnError::ArchitectureMismatch(format!(
                "expected {} tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in specs.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(NnError::ArchitectureMismatch(format!(
                    "{name}: expected {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(NetworkParams {
            arch,
            tensors,
            generation: next_generation(),
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    /// Mutable access; invalidates forward caches taken before this call.
    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        self.generation = next_generation();
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (String, &Tensor<S>)> {
        self.arch
            .param_specs()
            .into_iter()
            .map(|(name, _)| name)
            .zip(self.tensors.iter())
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.arch)
    }

    pub fn set_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(S::zero());
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.arch, other.arch);
        for (a, b) in self.tensors_mut().iter_mut().zip(&other.tensors) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x = *x + y;
            }
        }
    }

    pub fn scale(&mut self, factor: S) {
        for t in self.tensors_mut() {
            for x in t.data_mut() {
                *x = *x * factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm.is_finite() {
            self.scale(S::of(max_norm / norm));
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn cast<T: Scalar>(&self) -> NetworkParams<T> {
        NetworkParams {
            arch: self.arch,
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            generation: next_generation(),
        }
    }

    fn stream(&self, base: usize) -> [&Tensor<S>; 4] {
        [
            &self.tensors[base + CONV1_W],
            &self.tensors[base + CONV1_B],
            &self.tensors[base + CONV2_W],
            &self.tensors[base + CONV2_B],
        ]
    }

    fn fc_weight_index(&self) -> usize {
        self.arch.head_offset() + FC_W
    }

    fn head(&self, which: usize) -> &Tensor<S> {
        &self.tensors[self.arch.head_offset() + which]
    }
}

fn fan_in(name: &str, shape: &[usize], specs: &[(String, Vec<usize>)]) -> usize {
    if name.ends_with(".weight") {
        shape[1..].iter().product()
    } else {
        let weight_name = name.replace(".bias", ".weight");
        specs
            .iter()
            .find(|(n, _)| *n == weight_name)
            .map(|(_, s)| s[1..].iter().product())
            .unwrap_or(1)
    }
}

/// Inputs to one forward pass, both channel-major and already scaled to [0,1].
#[derive(Clone, Copy, Debug)]
pub struct NetInput<'a, S> {
    /// `frame_stack × 84 × 84`.
    pub state: &'a [S],
    /// `84 × 84`; required by dual-stream networks, ignored otherwise.
    pub mask: Option<&'a [S]>,
}

#[derive(Clone, Debug)]
struct StreamCache<S> {
    input: Vec<S>,
    act1: Vec<S>,
    act2: Vec<S>,
}

/// Activations retained by `forward` for use by `backward`.
#[derive(Clone, Debug)]
pub struct ForwardCache<S = f32> {
    generation: u64,
    arch: Architecture,
    state: StreamCache<S>,
    mask: Option<StreamCache<S>>,
    features: Vec<S>,
    hidden: Vec<S>,
    pub logits: Vec<S>,
    pub probs: Vec<S>,
    pub value: S,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<S = f32> {
    pub logits: Vec<S>,
    pub probs: Vec<S>,
    pub value: S,
}

fn relu_in_place<S: Scalar>(xs: &mut [S]) {
    for x in xs {
        if *x <= S::zero() {
            *x = S::zero();
        }
    }
}

fn stream_forward<S: Scalar>(
    arch: &Architecture,
    weights: [&Tensor<S>; 4],
    input: &[S],
    channels: usize,
) -> StreamCache<S> {
    let g1 = arch.conv1(channels);
    let g2 = arch.conv2();
    let mut scratch = Vec::new();
    let mut act1 = Vec::new();
    conv_forward(weights[0].data(), weights[1].data(), input, &g1, &mut scratch, &mut act1);
    relu_in_place(&mut act1);
    let mut act2 = Vec::new();
    conv_forward(weights[2].data(), weights[3].data(), &act1, &g2, &mut scratch, &mut act2);
    relu_in_place(&mut act2);
    StreamCache {
        input: input.to_vec(),
        act1,
        act2,
    }
}

fn dense_forward<S: Scalar>(weight: &Tensor<S>, bias: &Tensor<S>, x: &[S]) -> Vec<S> {
    let inp = weight.shape()[1];
    weight
        .data()
        .chunks_exact(inp)
        .zip(bias.data())
        .map(|(row, &b)| b + dot(row, x))
        .collect()
}

/// Accumulates `dW += dy ⊗ x` and `db += dy`.
fn dense_param_grads<S: Scalar>(grad_out: &[S], x: &[S], weight_grad: &mut [S], bias_grad: &mut [S]) {
    for ((row, &d), b) in weight_grad
        .chunks_exact_mut(x.len())
        .zip(grad_out)
        .zip(bias_grad.iter_mut())
    {
        if d != S::zero() {
            axpy(d, x, row);
        }
        *b = *b + d;
    }
}

/// `Wᵀ · dy`.
fn dense_input_grad<S: Scalar>(weight: &Tensor<S>, grad_out: &[S]) -> Vec<S> {
    let inp = weight.shape()[1];
    let mut gx = vec![S::zero(); inp];
    for (row, &d) in weight.data().chunks_exact(inp).zip(grad_out) {
        if d != S::zero() {
            axpy(d, row, &mut gx);
        }
    }
    gx
}

/// Runs the network on one input.
pub fn forward<S: Scalar>(
    params: &NetworkParams<S>,
    input: NetInput<'_, S>,
) -> Result<(ForwardOutput<S>, ForwardCache<S>), NnError> {
    let arch = params.arch;
    let plane = arch.input_size * arch.input_size;
    if input.state.len() != arch.frame_stack * plane {
        return Err(NnError::ShapeMismatch {
            expected: vec![arch.frame_stack, arch.input_size, arch.input_size],
            actual: vec![input.state.len()],
        });
    }
    let state = stream_forward(&arch, params.stream(STATE), input.state, arch.frame_stack);
    let mask = if arch.has_mask_stream() {
        let mask_input = input.mask.ok_or(NnError::MissingMask)?;
        if mask_input.len() != plane {
            return Err(NnError::ShapeMismatch {
                expected: vec![1, arch.input_size, arch.input_size],
                actual: vec![mask_input.len()],
            });
        }
        Some(stream_forward(&arch, params.stream(MASK), mask_input, 1))
    } else {
        None
    };
    let mut features = Vec::with_capacity(arch.feature_len());
    features.extend_from_slice(&state.act2);
    if let Some(m) = &mask {
        features.extend_from_slice(&m.act2);
    }
    let mut hidden = dense_forward(params.head(FC_W), params.head(FC_B), &features);
    relu_in_place(&mut hidden);
    let logits = dense_forward(params.head(POLICY_W), params.head(POLICY_B), &hidden);
    let value = dense_forward(params.head(VALUE_W), params.head(VALUE_B), &hidden)[0];
    let probs = softmax(&logits);
    let output = ForwardOutput {
        logits: logits.clone(),
        probs: probs.clone(),
        value,
    };
    let cache = ForwardCache {
        generation: params.generation,
        arch,
        state,
        mask,
        features,
        hidden,
        logits,
        probs,
        value,
    };
    Ok((output, cache))
}

/// Gradients `w.r.t.` every parameter for upstream gradients on the policy
/// logits and on the value output.
pub fn backward<S: Scalar>(
    params: &NetworkParams<S>,
    cache: &ForwardCache<S>,
    grad_logits: &[S],
    grad_value: S,
) -> Result<Gradients<S>, NnError> {
    let mut grads = params.zeros_like();
    backward_into(params, cache, grad_logits, grad_value, &mut grads)?;
    Ok(grads)
}

/// As [`backward`], accumulating into `grads`.
pub fn backward_into<S: Scalar>(
    params: &NetworkParams<S>,
    cache: &ForwardCache<S>,
    grad_logits: &[S],
    grad_value: S,
    grads: &mut Gradients<S>,
) -> Result<(), NnError> {
    backward_batch_into(params, &[(cache, grad_logits, grad_value)], grads)
}

/// Accumulates the gradients of several steps into `grads`, in step order.
/// Same result as calling [`backward_into`] once per step, but the fully
/// connected layer is swept once for the whole batch.
pub fn backward_batch_into<S: Scalar>(
    params: &NetworkParams<S>,
    steps: &[(&ForwardCache<S>, &[S], S)],
    grads: &mut Gradients<S>,
) -> Result<(), NnError> {
    if grads.arch != params.arch {
        return Err(NnError::ArchitectureMismatch(
            "gradient buffer has a different architecture".into(),
        ));
    }
    backward_steps(params, steps, &mut grads.tensors, None)?;
    grads.generation = next_generation();
    Ok(())
}

/// As [`backward_batch_into`], but the fully connected weight gradient is
/// recorded as one outer product per step instead of being summed densely.
pub fn backward_batch_factored<S: Scalar>(
    params: &NetworkParams<S>,
    steps: &[(&ForwardCache<S>, &[S], S)],
    grads: &mut FactoredGrads<S>,
) -> Result<(), NnError> {
    if grads.rest.arch != params.arch {
        return Err(NnError::ArchitectureMismatch(
            "gradient buffer has a different architecture".into(),
        ));
    }
    backward_steps(params, steps, &mut grads.rest.tensors, Some(&mut grads.outer))?;
    grads.rest.generation = next_generation();
    Ok(())
}

type OuterTerms<S> = Vec<(Vec<S>, Vec<S>)>;

fn backward_steps<S: Scalar>(
    params: &NetworkParams<S>,
    steps: &[(&ForwardCache<S>, &[S], S)],
    g: &mut [Tensor<S>],
    outer: Option<&mut OuterTerms<S>>,
) -> Result<(), NnError> {
    let arch = params.arch;
    for (cache, grad_logits, _) in steps {
        if cache.generation != params.generation || cache.arch != arch {
            return Err(NnError::StaleCache);
        }
        if grad_logits.len() != arch.actions {
            return Err(NnError::ShapeMismatch {
                expected: vec![arch.actions],
                actual: vec![grad_logits.len()],
            });
        }
    }
    let head = arch.head_offset();
    let features_len = arch.feature_len();

    // policy / value heads
    let mut grad_hidden = Vec::with_capacity(steps.len());
    for &(cache, grad_logits, grad_value) in steps {
        let (policy_grads, rest) = g[head + POLICY_W..].split_at_mut(2);
        let (pw, pb) = policy_grads.split_at_mut(1);
        dense_param_grads(grad_logits, &cache.hidden, pw[0].data_mut(), pb[0].data_mut());
        let (vw, vb) = rest.split_at_mut(1);
        dense_param_grads(&[grad_value], &cache.hidden, vw[0].data_mut(), vb[0].data_mut());

        let mut gh = dense_input_grad(params.head(POLICY_W), grad_logits);
        axpy(grad_value, params.head(VALUE_W).data(), &mut gh);
        for (gh, &h) in gh.iter_mut().zip(&cache.hidden) {
            if h <= S::zero() {
                *gh = S::zero();
            }
        }
        grad_hidden.push(gh);
    }

    // fully connected layer, one row at a time across all steps
    let mut grad_features = vec![vec![S::zero(); features_len]; steps.len()];
    {
        let (fw, fb) = g[head + FC_W..head + FC_B + 1].split_at_mut(1);
        let weight = params.head(FC_W).data();
        let mut grad_rows = match outer {
            Some(_) => None,
            None => Some(fw[0].data_mut().chunks_exact_mut(features_len)),
        };
        for (r, (w_row, b)) in weight.chunks_exact(features_len).zip(fb[0].data_mut().iter_mut()).enumerate() {
            let mut grad_row = grad_rows.as_mut().and_then(|rows| rows.next());
            for (t, &(cache, _, _)) in steps.iter().enumerate() {
                let d = grad_hidden[t][r];
                if d != S::zero() {
                    if let Some(row) = grad_row.as_deref_mut() {
                        axpy(d, &cache.features, row);
                    }
                    axpy(d, w_row, &mut grad_features[t]);
                }
                *b = *b + d;
            }
        }
    }
    if let Some(outer) = outer {
        for (&(cache, _, _), gh) in steps.iter().zip(&grad_hidden) {
            outer.push((gh.clone(), cache.features.clone()));
        }
    }

    let per_stream = arch.stream_features();
    for (&(cache, _, _), gf) in steps.iter().zip(&grad_features) {
        stream_backward(&arch, params.stream(STATE), &cache.state, &gf[..per_stream], arch.frame_stack, &mut g[STATE..STATE + 4]);
        if let Some(mask_cache) = &cache.mask {
            stream_backward(&arch, params.stream(MASK), mask_cache, &gf[per_stream..], 1, &mut g[MASK..MASK + 4]);
        }
    }
    Ok(())
}

/// Gradients with the fully connected weight block kept as `Σ_t dy_t ⊗ x_t`
/// over the accumulated steps. Every other tensor is dense. Avoids writing
/// and re-reading the largest tensor of the network on each update.
#[derive(Clone, Debug)]
pub struct FactoredGrads<S = f32> {
    rest: Gradients<S>,
    outer: OuterTerms<S>,
    scale: Option<S>,
}

impl<S: Scalar> FactoredGrads<S> {
    pub fn zeros(arch: Architecture) -> Self {
        let mut rest = NetworkParams::zeros(arch);
        let fc = rest.fc_weight_index();
        rest.tensors[fc] = Tensor::zeros(&[0]);
        FactoredGrads {
            rest,
            outer: Vec::new(),
            scale: None,
        }
    }

    pub fn arch(&self) -> &Architecture {
        &self.rest.arch
    }

    /// Index of the factored tensor within the parameter list.
    pub fn fc_weight_index(&self) -> usize {
        self.rest.fc_weight_index()
    }

    /// Dense tensors; the entry at [`fc_weight_index`](Self::fc_weight_index) is empty.
    pub fn dense(&self) -> &[Tensor<S>] {
        &self.rest.tensors
    }

    /// Number of outer-product terms accumulated so far.
    pub fn terms(&self) -> usize {
        self.outer.len()
    }

    pub fn set_zero(&mut self) {
        for t in self.rest.tensors_mut() {
            t.fill(S::zero());
        }
        self.outer.clear();
        self.scale = None;
    }

    /// Writes row `r` of the fully connected weight gradient into `out`,
    /// summing the terms in accumulation order.
    pub fn fc_weight_row(&self, r: usize, out: &mut [S]) {
        out.iter_mut().for_each(|v| *v = S::zero());
        for (dy, x) in &self.outer {
            let d = dy[r];
            if d != S::zero() {
                axpy(d, x, out);
            }
        }
        if let Some(c) = self.scale {
            out.iter_mut().for_each(|v| *v = *v * c);
        }
    }

    /// Whether row `r` of the fully connected weight gradient is all zero
    /// because no term touches it.
    pub fn fc_row_is_zero(&self, r: usize) -> bool {
        self.outer.iter().all(|(dy, _)| dy[r] == S::zero())
    }

    pub fn global_norm(&self) -> f64 {
        let dense: f64 = self.rest.tensors.iter().map(Tensor::sum_squares).sum();
        let f64_dot = |a: &[S], b: &[S]| a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum::<f64>();
        let mut fc = 0.0;
        for (i, (dy_i, x_i)) in self.outer.iter().enumerate() {
            for (j, (dy_j, x_j)) in self.outer.iter().enumerate().skip(i) {
                let term = f64_dot(dy_i, dy_j) * f64_dot(x_i, x_j);
                fc += if i == j { term } else { 2.0 * term };
            }
        }
        let c = self.scale.map_or(1.0, |c| c.as_f64());
        (dense + c * c * fc.max(0.0)).sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm.is_finite() {
            let c = S::of(max_norm / norm);
            self.rest.scale(c);
            self.scale = Some(self.scale.map_or(c, |s| s * c));
        }
        norm
    }

    /// The same gradients as a dense buffer.
    pub fn to_dense(&self) -> Gradients<S> {
        let mut dense = self.rest.clone();
        let fc = self.fc_weight_index();
        let shape = self.rest.arch.param_specs()[fc].1.clone();
        let mut t = Tensor::zeros(&shape);
        for (r, row) in t.data_mut().chunks_exact_mut(shape[1]).enumerate() {
            self.fc_weight_row(r, row);
        }
        dense.tensors_mut()[fc] = t;
        dense
    }
}

fn stream_backward<S: Scalar>(
    arch: &Architecture,
    weights: [&Tensor<S>; 4],
    cache: &StreamCache<S>,
    grad_act2: &[S],
    channels: usize,
    grads: &mut [Tensor<S>],
) {
    let g1 = arch.conv1(channels);
    let g2 = arch.conv2();
    let grad_pre2: Vec<S> = grad_act2
        .iter()
        .zip(&cache.act2)
        .map(|(&d, &a)| if a > S::zero() { d } else { S::zero() })
        .collect();
    let (w1, rest) = grads.split_at_mut(2);
    let (gw2, gb2) = rest.split_at_mut(1);
    let mut scratch = Vec::new();
    let mut grad_act1 = vec![S::zero(); g2.input_len()];
    conv_backward(
        weights[2].data(),
        &cache.act1,
        &grad_pre2,
        &g2,
        gw2[0].data_mut(),
        gb2[0].data_mut(),
        &mut scratch,
        Some(&mut grad_act1),
    );
    for (d, &a) in grad_act1.iter_mut().zip(&cache.act1) {
        if a <= S::zero() {
            *d = S::zero();
        }
    }
    let (gw1, gb1) = w1.split_at_mut(1);
    conv_backward(
        weights[0].data(),
        &cache.input,
        &grad_act1,
        &g1,
        gw1[0].data_mut(),
        gb1[0].data_mut(),
        &mut scratch,
        None,
    );
}

impl<S: Scalar> ForwardCache<S> {
    pub fn output(&self) -> ForwardOutput<S> {
        ForwardOutput {
            logits: self.logits.clone(),
            probs: self.probs.clone(),
            value: self.value,
        }
    }

    /// Post-ReLU conv2 activations of the mask stream, if present.
    pub fn mask_features(&self) -> Option<&[S]> {
        self.mask.as_ref().map(|m| m.act2.as_slice())
    }

    pub fn state_features(&self) -> &[S] {
        &self.state.act2
    }

    /// The inputs this cache was computed from.
    pub fn input(&self) -> NetInput<'_, S> {
        NetInput {
            state: &self.state.input,
            mask: self.mask.as_ref().map(|m| m.input.as_slice()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batched_backward_equals_step_by_step() {
        let params = NetworkParams::<f32>::init(Architecture::dual_stream(2), 4);
        let plane = 84 * 84;
        let caches: Vec<_> = (0..3)
            .map(|i| {
                let state: Vec<f32> = (0..2 * plane).map(|j| ((j * 7 + i * 13) % 17) as f32 / 17.0).collect();
                let mask: Vec<f32> = (0..plane).map(|j| ((j / 84 + i) % 5 == 0) as u8 as f32).collect();
                forward(&params, NetInput { state: &state, mask: Some(&mask) }).unwrap().1
            })
            .collect();
        let upstream: Vec<(Vec<f32>, f32)> = (0..3)
            .map(|i| ((0..6).map(|a| (a as f32 - 2.5) * (i as f32 + 1.0) * 0.1).collect(), 0.3 - i as f32))
            .collect();
        let mut one_by_one = params.zeros_like();
        for (c, (gl, gv)) in caches.iter().zip(&upstream) {
            backward_into(&params, c, gl, *gv, &mut one_by_one).unwrap();
        }
        let batch: Vec<_> = caches.iter().zip(&upstream).map(|(c, (gl, gv))| (c, gl.as_slice(), *gv)).collect();
        let mut batched = params.zeros_like();
        backward_batch_into(&params, &batch, &mut batched).unwrap();
        for (a, b) in one_by_one.tensors().iter().zip(batched.tensors()) {
            assert!(a.data() == b.data());
        }
    }

    #[test]
    fn factored_gradients_expand_to_the_dense_ones() {
        let params = NetworkParams::<f32>::init(Architecture::dual_stream(1), 6);
        let plane = 84 * 84;
        let caches: Vec<_> = (0..4)
            .map(|i| {
                let state: Vec<f32> = (0..plane).map(|j| ((j * 5 + i * 11) % 13) as f32 / 13.0).collect();
                let mask: Vec<f32> = (0..plane).map(|j| ((j % 84 + i) % 7 == 0) as u8 as f32).collect();
                forward(&params, NetInput { state: &state, mask: Some(&mask) }).unwrap().1
            })
            .collect();
        let upstream: Vec<(Vec<f32>, f32)> = (0..4)
            .map(|i| ((0..6).map(|a| ((a * 3 + i) % 5) as f32 * 0.2 - 0.4).collect(), i as f32 - 1.5))
            .collect();
        let batch: Vec<_> = caches.iter().zip(&upstream).map(|(c, (gl, gv))| (c, gl.as_slice(), *gv)).collect();
        let mut dense = params.zeros_like();
        backward_batch_into(&params, &batch[..2], &mut dense).unwrap();
        backward_batch_into(&params, &batch[2..], &mut dense).unwrap();
        let mut factored = FactoredGrads::zeros(*params.arch());
        backward_batch_factored(&params, &batch[..2], &mut factored).unwrap();
        backward_batch_factored(&params, &batch[2..], &mut factored).unwrap();
        assert_eq!(factored.terms(), 4);
        for (a, b) in dense.tensors().iter().zip(factored.to_dense().tensors()) {
            assert!(a.data() == b.data());
        }
        let (nd, nf) = (dense.global_norm(), factored.global_norm());
        assert!((nd - nf).abs() <= 1e-9 * nd, "{nd} vs {nf}");

        let max = nd / 3.0;
        dense.clip_global_norm(max);
        factored.clip_global_norm(max);
        for (a, b) in dense.tensors().iter().zip(factored.to_dense().tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-6), "{x} vs {y}");
            }
        }
        assert!((factored.global_norm() - max).abs() < 1e-4 * max);

        factored.set_zero();
        assert_eq!(factored.terms(), 0);
        assert_eq!(factored.global_norm(), 0.0);
    }

    #[test]
    fn pipeline_matches_classic_shapes() {
        let p = Architecture::dual_stream(4).shape_pipeline();
        assert_eq!(p.input, (84, 84, 4));
        assert_eq!(p.conv1, (20, 20, 16));
        assert_eq!(p.conv2, (9, 9, 32));
        assert_eq!(p.concat, 5184);
        assert_eq!((p.hidden, p.policy, p.value), (256, 6, 1));
        assert_eq!(Architecture::single_stream(4).feature_len(), 2592);
    }

    #[test]
    fn zero_weights_give_uniform_policy_and_zero_value() {
        let net = NetworkParams::<f32>::zeros(Architecture::dual_stream(4));
        let state = vec![0.5f32; 4 * 84 * 84];
        let mask = vec![1.0f32; 84 * 84];
        let (out, _) = forward(
            &net,
            NetInput {
                state: &state,
                mask: Some(&mask),
            },
        )
        .unwrap();
        for p in &out.probs {
            assert!((p - 1.0 / 6.0).abs() < 1e-7);
        }
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn dual_stream_requires_mask() {
        let net = NetworkParams::<f32>::zeros(Architecture::dual_stream(1));
        let state = vec![0.0f32; 84 * 84];
        let err = forward(&net, NetInput { state: &state, mask: None }).unwrap_err();
        assert!(matches!(err, NnError::MissingMask));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = NetworkParams::<f32>::init(Architecture::single_stream(1), 3);
        let state = vec![0.1f32; 84 * 84];
        let (_, cache) = forward(&net, NetInput { state: &state, mask: None }).unwrap();
        net.tensors_mut()[0].data_mut()[0] += 1.0;
        let err = backward(&net, &cache, &[0.0; 6], 0.0).unwrap_err();
        assert!(matches!(err, NnError::StaleCache));
    }

    #[test]
    fn fingerprint_distinguishes_layouts() {
        assert_ne!(
            Architecture::dual_stream(4).fingerprint(),
            Architecture::single_stream(4).fingerprint()
        );
        assert_ne!(
            Architecture::dual_stream(4).fingerprint(),
            Architecture::dual_stream(3).fingerprint()
        );
    }
}
