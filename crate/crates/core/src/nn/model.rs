use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::layers::{conv_bwd, conv_fwd, dense_bwd, dense_fwd, dropout_mask, pool_bwd, pool_fwd};
use super::loss::{bce_term, bce_term_grad, predicted_class};
use super::{Activation, Architecture, LayerInfo, LayerSpec, NnError, Real, Tensor4};

/// Identifies one dropout draw: the same key always yields the same masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropoutKey {
    pub seed: u64,
    pub epoch: u64,
    pub batch: u64,
    pub item: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a sequence of words into one 64-bit seed.
pub(crate) fn mix_seed(words: &[u64]) -> u64 {
    words.iter().fold(0x243f_6a88_85a3_08d3, |h, &w| splitmix(h ^ splitmix(w)))
}

impl DropoutKey {
    fn rng_for_layer(&self, layer: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix_seed(&[self.seed, self.epoch, self.batch, self.item, layer as u64]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Infer,
    Train(DropoutKey),
}

/// Cached per-sample forward pass over layers `start..start + outputs.len() - 1`.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub start: usize,
    /// `outputs[0]` is the input of layer `start`; `outputs[k + 1]` the output of layer `start + k`.
    pub outputs: Vec<Vec<T>>,
    argmax: Vec<Option<Vec<u32>>>,
    masks: Vec<Option<Vec<f32>>>,
    /// Pre-activations of dense layers.
    pre: Vec<Option<Vec<f64>>>,
}

impl<T: Real> Trace<T> {
    /// One past the last layer evaluated.
    pub fn end(&self) -> usize {
        self.start + self.outputs.len() - 1
    }

    pub fn output(&self) -> &[T] {
        self.outputs.last().expect("trace holds its input")
    }

    /// Output of absolute layer `layer`.
    pub fn layer_output(&self, layer: usize) -> &[T] {
        &self.outputs[layer + 1 - self.start]
    }

    /// Pre-activation of dense layer `layer`, if it was evaluated.
    pub fn pre_activation(&self, layer: usize) -> Option<&[f64]> {
        self.pre.get(layer.checked_sub(self.start)?)?.as_deref()
    }
}

/// Where backpropagation starts.
#[derive(Debug, Clone)]
pub enum Seed {
    /// dL/d(output) of the top layer.
    Output(Vec<f64>),
    /// dL/d(pre-activation) of the top layer (skips its activation).
    PreActivation(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct Backprop {
    /// Flat parameter gradient (zeros for layers not reached).
    pub params: Vec<f64>,
    /// dL/d(input of the trace's first layer), when requested.
    pub input: Option<Vec<f64>>,
}

/// Loss, accuracy and probabilities of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub loss: f64,
    pub correct: usize,
    pub probabilities: Vec<f64>,
}

/// Sequential network with a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    arch: Architecture,
    infos: Vec<LayerInfo>,
    params: Vec<T>,
    init_seed: u64,
}

impl<T: Real> Model<T> {
    /// Glorot-uniform weights (limit `sqrt(6 / (fan_in + fan_out))`), zero biases.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self, NnError> {
        let infos = arch.layer_infos()?;
        let total = infos.iter().map(LayerInfo::param_count).sum();
        let mut params = vec![T::zero(); total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for li in &infos {
            let (fan_in, fan_out) = match li.spec {
                LayerSpec::Conv2D { filters, .. } => (9 * li.input.c, 9 * filters),
                LayerSpec::Dense { units, .. } => (li.input.len(), units),
                _ => continue,
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[li.offset..li.offset + li.weight_count] {
                *p = T::of(rng.gen_range(-limit..limit));
            }
        }
        Ok(Self {
            arch,
            infos,
            params,
            init_seed: seed,
        })
    }

    /// The 8,757-parameter image classifier.
    pub fn table1(seed: u64) -> Self {
        Self::new(Architecture::table1(), seed).expect("table-1 architecture is valid")
    }

    pub fn from_params(arch: Architecture, params: Vec<T>, init_seed: u64) -> Result<Self, NnError> {
        let infos = arch.layer_infos()?;
        let total: usize = infos.iter().map(LayerInfo::param_count).sum();
        if params.len() != total {
            return Err(NnError::Shape(format!("{} parameters for an architecture needing {total}", params.len())));
        }
        Ok(Self {
            arch,
            infos,
            params,
            init_seed,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerInfo] {
        &self.infos
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_len(&self) -> usize {
        self.arch.input.len()
    }

    /// Weights and bias of layer `layer`.
    pub fn layer_params(&self, layer: usize) -> (&[T], &[T]) {
        let li = &self.infos[layer];
        let w = &self.params[li.offset..li.offset + li.weight_count];
        let b = &self.params[li.offset + li.weight_count..li.offset + li.param_count()];
        (w, b)
    }

    pub fn layer_params_mut(&mut self, layer: usize) -> (&mut [T], &mut [T]) {
        let li = &self.infos[layer];
        let (o, wc, pc) = (li.offset, li.weight_count, li.param_count());
        self.params[o..o + pc].split_at_mut(wc)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            arch: self.arch.clone(),
            infos: self.infos.clone(),
            params: self.params.iter().map(|p| U::of(p.f64())).collect(),
            init_seed: self.init_seed,
        }
    }

    fn params_f64(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.f64()).collect()
    }

    /// Full forward pass of one sample.
    pub fn forward(&self, input: &[T], mode: Mode) -> Trace<T> {
        self.forward_range(input, 0, self.infos.len(), mode)
    }

    /// Forward pass of layers `start..end` for one sample whose activation
    /// at the input of layer `start` is `input`.
    pub fn forward_range(&self, input: &[T], start: usize, end: usize, mode: Mode) -> Trace<T> {
        assert!(start <= end && end <= self.infos.len(), "layer range {start}..{end}");
        let expected = self.infos.get(start).map_or_else(|| self.infos[end - 1].output.len(), |l| l.input.len());
        assert_eq!(input.len(), expected, "input length for layer {start}");
        let wf = self.params_f64();
        let mut trace = Trace {
            start,
            outputs: Vec::with_capacity(end - start + 1),
            argmax: Vec::with_capacity(end - start),
            masks: Vec::with_capacity(end - start),
            pre: Vec::with_capacity(end - start),
        };
        trace.outputs.push(input.to_vec());
        for li in start..end {
            let info = &self.infos[li];
            let x = trace.outputs.last().expect("nonempty");
            let (i, o) = (info.input, info.output);
            let mut out = vec![T::zero(); o.len()];
            let (mut argmax, mut mask, mut pre) = (None, None, None);
            match info.spec {
                LayerSpec::Conv2D { filters, activation } => {
                    let w = &wf[info.offset..info.offset + info.weight_count];
                    let b = &wf[info.offset + info.weight_count..info.offset + info.param_count()];
                    conv_fwd(x, i.h, i.w, i.c, w, b, filters, activation, &mut out);
                }
                LayerSpec::MaxPool2D => {
                    let mut am = vec![0u32; o.len()];
                    pool_fwd(x, i.h, i.w, i.c, &mut out, &mut am);
                    argmax = Some(am);
                }
                LayerSpec::Dropout { rate } => match mode {
                    Mode::Train(key) if rate > 0.0 => {
                        let m = dropout_mask(x.len(), rate, &mut key.rng_for_layer(li));
                        for ((dst, &v), &k) in out.iter_mut().zip(x).zip(&m) {
                            *dst = T::of(v.f64() * k as f64);
                        }
                        mask = Some(m);
                    }
                    _ => out.copy_from_slice(x),
                },
                LayerSpec::Flatten => out.copy_from_slice(x),
                LayerSpec::Dense { units, activation } => {
                    let w = &wf[info.offset..info.offset + info.weight_count];
                    let b = &wf[info.offset + info.weight_count..info.offset + info.param_count()];
                    let mut z = vec![0.0; units];
                    dense_fwd(x, w, b, units, activation, &mut out, &mut z);
                    pre = Some(z);
                }
            }
            debug_assert!(out.iter().all(|v| v.is_finite()), "non-finite output at layer {li}");
            trace.outputs.push(out);
            trace.argmax.push(argmax);
            trace.masks.push(mask);
            trace.pre.push(pre);
        }
        trace
    }

    /// Backpropagate from the last layer of `trace` down to its first.
    pub fn backward(&self, trace: &Trace<T>, seed: Seed, want_input: bool) -> Backprop {
        let wf = self.params_f64();
        let mut grads = vec![0.0; self.params.len()];
        let top = trace.end() - 1;
        let (mut g, mut seed_is_pre) = match seed {
            Seed::Output(g) => (g, false),
            Seed::PreActivation(g) => (g, true),
        };
        for li in (trace.start..=top).rev() {
            let info = &self.infos[li];
            let k = li - trace.start;
            let x = &trace.outputs[k];
            let y = &trace.outputs[k + 1];
            let need_dx = li > trace.start || want_input;
            let (i, o) = (info.input, info.output);
            let mut dx = vec![0.0; i.len()];
            match info.spec {
                LayerSpec::Conv2D { filters, activation } | LayerSpec::Dense { units: filters, activation } => {
                    if !seed_is_pre {
                        apply_activation_grad(&mut g, y, activation);
                    }
                    let (wo, wc, pc) = (info.offset, info.weight_count, info.param_count());
                    let (dw, db) = grads[wo..wo + pc].split_at_mut(wc);
                    let w = &wf[wo..wo + wc];
                    let dxo = need_dx.then_some(dx.as_mut_slice());
                    if matches!(info.spec, LayerSpec::Conv2D { .. }) {
                        conv_bwd(x, i.h, i.w, i.c, w, filters, &g, dw, db, dxo);
                    } else {
                        dense_bwd(x, w, filters, &g, dw, db, dxo);
                    }
                }
                LayerSpec::MaxPool2D => {
                    let am = trace.argmax[k].as_ref().expect("pool argmax cached");
                    pool_bwd(&g, am, &mut dx);
                }
                LayerSpec::Dropout { .. } => match &trace.masks[k] {
                    Some(m) => {
                        for ((d, &gv), &mv) in dx.iter_mut().zip(&g).zip(m) {
                            *d = gv * mv as f64;
                        }
                    }
                    None => dx.copy_from_slice(&g),
                },
                LayerSpec::Flatten => dx.copy_from_slice(&g),
            }
            debug_assert_eq!(g.len(), o.len());
            seed_is_pre = false;
            g = dx;
        }
        Backprop {
            params: grads,
            input: want_input.then_some(g),
        }
    }

    fn check_head(&self) -> Result<(), NnError> {
        match self.infos.last().map(|l| l.spec) {
            Some(LayerSpec::Dense {
                units: 1,
                activation: Activation::Sigmoid,
            }) => Ok(()),
            _ => Err(NnError::Head),
        }
    }

    fn check_batch(&self, batch: &Tensor4<T>) -> Result<(), NnError> {
        let s = self.arch.input;
        if (batch.h, batch.w, batch.c) != (s.h, s.w, s.c) {
            return Err(NnError::Shape(format!(
                "batch of {}x{}x{} samples for a {}x{}x{} network",
                batch.h, batch.w, batch.c, s.h, s.w, s.c
            )));
        }
        Ok(())
    }

    /// Inference-mode probabilities for every sample of `batch`.
    pub fn predict(&self, batch: &Tensor4<T>) -> Result<Vec<f64>, NnError> {
        self.check_head()?;
        self.check_batch(batch)?;
        Ok((0..batch.n)
            .into_par_iter()
            .map(|i| self.forward(batch.item(i), Mode::Infer).output()[0].f64())
            .collect())
    }

    /// Mean cross-entropy over the batch and its exact gradient. With
    /// `dropout = Some(key)` the forward pass runs in training mode, using
    /// `key` with `item` set to each sample's position.
    pub fn loss_and_gradients(
        &self,
        batch: &Tensor4<T>,
        labels: &[f64],
        dropout: Option<DropoutKey>,
    ) -> Result<(BatchOutput, Vec<f64>), NnError> {
        self.check_head()?;
        self.check_batch(batch)?;
        if labels.len() != batch.n || batch.n == 0 {
            return Err(NnError::Shape(format!("{} labels for {} samples", labels.len(), batch.n)));
        }
        let n = batch.n as f64;
        let per_item: Vec<(f64, f64, Vec<f64>)> = (0..batch.n)
            .into_par_iter()
            .map(|i| {
                let mode = match dropout {
                    Some(key) => Mode::Train(DropoutKey { item: i as u64, ..key }),
                    None => Mode::Infer,
                };
                let trace = self.forward(batch.item(i), mode);
                let p = trace.output()[0].f64();
                let y = labels[i];
                let dz = bce_term_grad(y, p) * p * (1.0 - p) / n;
                let bp = self.backward(&trace, Seed::PreActivation(vec![dz]), false);
                (bce_term(y, p), p, bp.params)
            })
            .collect();
        let mut grads = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let mut correct = 0;
        let mut probabilities = Vec::with_capacity(batch.n);
        for ((l, p, g), &y) in per_item.into_iter().zip(labels) {
            loss += l;
            if f64::from(predicted_class(p)) == y {
                correct += 1;
            }
            probabilities.push(p);
            for (a, b) in grads.iter_mut().zip(&g) {
                *a += b;
            }
        }
        Ok((
            BatchOutput {
                loss: loss / n,
                correct,
                probabilities,
            },
            grads,
        ))
    }
}

fn apply_activation_grad<T: Real>(g: &mut [f64], y: &[T], act: Activation) {
    if act == Activation::Linear {
        return;
    }
    for (gv, yv) in g.iter_mut().zip(y) {
        *gv *= act.derivative_from_output(yv.f64());
    }
}
