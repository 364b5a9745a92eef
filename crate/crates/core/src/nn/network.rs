use ndarray::{concatenate, s, Array1, Array2, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use super::ops::{self, PoolIndices};
use super::Scalar;
use crate::arch::{infer_shapes, ArchError, NetworkSpec, SkipMode, TensorShape};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(
        "input tensor {found:?} does not match network input {expected} (expected C,H,W order)"
    )]
    InputShape {
        expected: TensorShape,
        found: (usize, usize, usize),
    },
    #[error("parameter tensor `{0}` has the wrong shape")]
    ParameterShape(String),
}

/// Weight matrix and bias of one convolution. Layouts: 3x3 conv `(out, in*9)`,
/// channel-wise conv `(C, 9)`, 1x1 head `(K, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<F: Scalar> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> ConvParams<F> {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            weight: Array2::zeros((rows, cols)),
            bias: Array1::zeros(rows),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<F: Scalar> {
    pub conv: ConvParams<F>,
    pub grouped: ConvParams<F>,
}

/// Every trainable tensor of the network. Also used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<F: Scalar> {
    pub encoder: Vec<BlockParams<F>>,
    pub decoder: Vec<BlockParams<F>>,
    pub head: ConvParams<F>,
}

impl<F: Scalar> Parameters<F> {
    fn zeros_for(spec: &NetworkSpec) -> Self {
        let block = |conv: &crate::arch::ConvLayerSpec, ch: usize| BlockParams {
            conv: ConvParams::zeros(conv.out_channels, conv.in_channels * 9),
            grouped: ConvParams::zeros(ch, 9),
        };
        Self {
            encoder: spec
                .encoder
                .iter()
                .map(|b| block(&b.conv, b.grouped.channels))
                .collect(),
            decoder: spec
                .decoder
                .iter()
                .map(|b| block(&b.conv, b.grouped.channels))
                .collect(),
            head: ConvParams::zeros(spec.head.num_classes, spec.head.in_channels),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.fill_zero();
        out
    }

    pub fn fill_zero(&mut self) {
        for s in self.slices_mut() {
            s.fill(F::zero());
        }
    }

    fn tensors(&self) -> Vec<&ConvParams<F>> {
        let mut out = Vec::new();
        for b in self.encoder.iter().chain(self.decoder.iter()) {
            out.push(&b.conv);
            out.push(&b.grouped);
        }
        out.push(&self.head);
        out
    }

    /// Flat views of every weight and bias, in a fixed order.
    pub fn slices(&self) -> Vec<&[F]> {
        self.tensors()
            .into_iter()
            .flat_map(|p| {
                [
                    p.weight.as_slice().expect("standard layout"),
                    p.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for b in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            for p in [&mut b.conv, &mut b.grouped] {
                out.push(p.weight.as_slice_mut().expect("standard layout"));
                out.push(p.bias.as_slice_mut().expect("standard layout"));
            }
        }
        out.push(self.head.weight.as_slice_mut().expect("standard layout"));
        out.push(self.head.bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<F> {
        self.slices().concat()
    }

    pub fn load_flat(&mut self, values: &[F]) -> Result<(), NnError> {
        if values.len() != self.len() {
            return Err(NnError::ParameterShape(format!(
                "flat vector of {} values for {} parameters",
                values.len(),
                self.len()
            )));
        }
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&values[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, factor: F) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn cast<G: Scalar>(&self) -> Parameters<G> {
        let conv = |p: &ConvParams<F>| ConvParams {
            weight: p.weight.mapv(|v| G::from(v).unwrap()),
            bias: p.bias.mapv(|v| G::from(v).unwrap()),
        };
        let block = |b: &BlockParams<F>| BlockParams {
            conv: conv(&b.conv),
            grouped: conv(&b.grouped),
        };
        Parameters {
            encoder: self.encoder.iter().map(block).collect(),
            decoder: self.decoder.iter().map(block).collect(),
            head: conv(&self.head),
        }
    }
}

struct EncoderRecord<F: Scalar> {
    input: Array3<F>,
    conv_out: Array3<F>,
    grouped_out: Array3<F>,
}

struct DecoderRecord<F: Scalar> {
    merged: Array3<F>,
    conv_out: Array3<F>,
    grouped_out: Array3<F>,
    unpooled_channels: usize,
}

/// Activations of one forward pass, retained for [`Network::backward`].
pub struct Tape<F: Scalar> {
    encoder: Vec<EncoderRecord<F>>,
    decoder: Vec<DecoderRecord<F>>,
    pool_indices: Vec<PoolIndices>,
    pub logits: Array3<F>,
    pub probs: Array3<F>,
}

/// The encoder-decoder network compiled from a validated spec.
#[derive(Debug, Clone)]
pub struct Network<F: Scalar> {
    spec: NetworkSpec,
    params: Parameters<F>,
    /// Encoder block whose pool indices each decoder unpool consumes.
    unpool_source: Vec<usize>,
    /// Encoder block feeding each decoder block's skip merge.
    skip_source: Vec<Option<usize>>,
}

impl<F: Scalar> Network<F> {
    /// Validates `spec` and initializes weights with fan-in-scaled normals.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self, NnError> {
        let mut net = Self::zeroed(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in net.params.slices_mut().into_iter().enumerate() {
            let (i, slice) = s;
            // even slices are weights, odd slices biases (left at zero)
            if i % 2 == 1 {
                continue;
            }
            let fan_in = fan_in_of(i, &net.spec);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            for v in slice.iter_mut() {
                *v = F::from(normal.sample(&mut rng)).unwrap();
            }
        }
        Ok(net)
    }

    /// Network with every parameter set to zero.
    pub fn zeroed(spec: NetworkSpec) -> Result<Self, NnError> {
        infer_shapes(&spec, spec.input)?;
        let unpool_source = spec
            .decoder
            .iter()
            .map(|d| {
                spec.encoder
                    .iter()
                    .position(|e| e.pool.name == d.unpool.pool)
                    .expect("validated by infer_shapes")
            })
            .collect();
        let skip_source = spec
            .decoder
            .iter()
            .map(|d| spec.skip_into(d.level).map(|s| s.encoder_block - 1))
            .collect();
        let params = Parameters::zeros_for(&spec);
        Ok(Self {
            spec,
            params,
            unpool_source,
            skip_source,
        })
    }

    pub fn from_parameters(spec: NetworkSpec, params: Parameters<F>) -> Result<Self, NnError> {
        let mut net = Self::zeroed(spec)?;
        let expected = net
            .params
            .slices()
            .iter()
            .map(|s| s.len())
            .collect::<Vec<_>>();
        let found = params.slices().iter().map(|s| s.len()).collect::<Vec<_>>();
        if expected != found {
            return Err(NnError::ParameterShape(
                "parameters do not fit the spec".into(),
            ));
        }
        net.params = params;
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn parameters(&self) -> &Parameters<F> {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut Parameters<F> {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.len()
    }

    /// Zeroes the classification head so every pixel predicts the uniform distribution.
    pub fn zero_head(&mut self) {
        self.params.head.weight.fill(F::zero());
        self.params.head.bias.fill(F::zero());
    }

    fn check_input(&self, dim: (usize, usize, usize)) -> Result<(), NnError> {
        let s = self.spec.input;
        if dim != (s.channels, s.height, s.width) {
            return Err(NnError::InputShape {
                expected: s,
                found: dim,
            });
        }
        Ok(())
    }

    /// Per-pixel class probabilities for a `(N, C, H, W)` batch; output is `(N, K, H, W)`.
    pub fn forward(&self, batch: &Array4<F>) -> Result<Array4<F>, NnError> {
        let (n, c, h, w) = batch.dim();
        self.check_input((c, h, w))?;
        let k = self.spec.num_classes;
        let mut out = Array4::<F>::zeros((n, k, h, w));
        for (i, sample) in batch.outer_iter().enumerate() {
            let probs = self.run(&sample.to_owned(), false).probs;
            out.index_axis_mut(Axis(0), i).assign(&probs);
        }
        Ok(out)
    }

    /// Probabilities for a single `(C, H, W)` sample.
    pub fn forward_sample(&self, x: &Array3<F>) -> Result<Array3<F>, NnError> {
        self.check_input(x.dim())?;
        Ok(self.run(x, false).probs)
    }

    /// Forward pass that keeps the activations needed for backpropagation.
    pub fn forward_train(&self, x: &Array3<F>) -> Result<Tape<F>, NnError> {
        self.check_input(x.dim())?;
        Ok(self.run(x, true))
    }

    fn run(&self, x: &Array3<F>, keep: bool) -> Tape<F> {
        let p = &self.params;
        let mut encoder = Vec::new();
        let mut taps = Vec::with_capacity(self.spec.encoder.len());
        let mut pool_indices = Vec::with_capacity(self.spec.encoder.len());
        let mut cur = x.to_owned();
        for bp in &p.encoder {
            let conv_out = ops::conv3x3_forward(&cur, &bp.conv.weight, &bp.conv.bias);
            let grouped_out =
                ops::depthwise3x3_forward(&conv_out, &bp.grouped.weight, &bp.grouped.bias);
            let (pooled, idx) = ops::maxpool2_forward(&grouped_out);
            pool_indices.push(idx);
            taps.push(conv_out.clone());
            if keep {
                encoder.push(EncoderRecord {
                    input: cur,
                    conv_out,
                    grouped_out,
                });
            }
            cur = pooled;
        }

        let mut decoder = Vec::new();
        for (j, (block, bp)) in self.spec.decoder.iter().zip(&p.decoder).enumerate() {
            if let Some(fold) = &block.fold {
                cur = ops::fold_forward(&cur, fold.out_channels);
            }
            let unpooled = ops::unpool2_forward(&cur, &pool_indices[self.unpool_source[j]]);
            let unpooled_channels = unpooled.dim().0;
            let merged = match self.skip_source[j] {
                None => unpooled,
                Some(src) => match self.spec.skip_mode {
                    SkipMode::Add => unpooled + &taps[src],
                    SkipMode::Concat => concatenate(Axis(0), &[unpooled.view(), taps[src].view()])
                        .expect("validated spatial dims"),
                },
            };
            let conv_out = ops::conv3x3_forward(&merged, &bp.conv.weight, &bp.conv.bias);
            let grouped_out =
                ops::depthwise3x3_forward(&conv_out, &bp.grouped.weight, &bp.grouped.bias);
            cur = grouped_out.clone();
            if keep {
                decoder.push(DecoderRecord {
                    merged,
                    conv_out,
                    grouped_out,
                    unpooled_channels,
                });
            }
        }

        let logits = ops::conv1x1_forward(&cur, &p.head.weight, &p.head.bias);
        let probs = ops::softmax_channels(&logits);
        Tape {
            encoder,
            decoder,
            pool_indices,
            logits,
            probs,
        }
    }

    /// Accumulates parameter gradients into `grads` given the loss gradient
    /// with respect to the logits recorded in `tape`.
    pub fn backward(&self, tape: &Tape<F>, dlogits: &Array3<F>, grads: &mut Parameters<F>) {
        let p = &self.params;
        let last = &tape
            .decoder
            .last()
            .expect("tape recorded in train mode")
            .grouped_out;
        let mut g = ops::conv1x1_backward(
            last,
            dlogits,
            &p.head.weight,
            &mut grads.head.weight,
            &mut grads.head.bias,
        );

        let mut skip_grads: Vec<Option<Array3<F>>> = vec![None; p.encoder.len()];
        for j in (0..p.decoder.len()).rev() {
            let rec = &tape.decoder[j];
            let bp = &p.decoder[j];
            let gb = &mut grads.decoder[j];
            g = ops::depthwise3x3_backward(
                &rec.conv_out,
                &rec.grouped_out,
                &g,
                &bp.grouped.weight,
                &mut gb.grouped.weight,
                &mut gb.grouped.bias,
            );
            g = ops::conv3x3_backward(
                &rec.merged,
                &rec.conv_out,
                &g,
                &bp.conv.weight,
                &mut gb.conv.weight,
                &mut gb.conv.bias,
                true,
            )
            .expect("input gradient requested");
            if let Some(src) = self.skip_source[j] {
                let skip_part = match self.spec.skip_mode {
                    SkipMode::Add => g.clone(),
                    SkipMode::Concat => {
                        let part = g.slice(s![rec.unpooled_channels.., .., ..]).to_owned();
                        g = g.slice(s![..rec.unpooled_channels, .., ..]).to_owned();
                        part
                    }
                };
                match &mut skip_grads[src] {
                    Some(acc) => *acc += &skip_part,
                    slot => *slot = Some(skip_part),
                }
            }
            g = ops::unpool2_backward(&g, &tape.pool_indices[self.unpool_source[j]]);
            if let Some(fold) = &self.spec.decoder[j].fold {
                g = ops::fold_backward(&g, fold.in_channels);
            }
        }

        for i in (0..p.encoder.len()).rev() {
            let rec = &tape.encoder[i];
            let bp = &p.encoder[i];
            let gb = &mut grads.encoder[i];
            g = ops::maxpool2_backward(&g, &tape.pool_indices[i]);
            g = ops::depthwise3x3_backward(
                &rec.conv_out,
                &rec.grouped_out,
                &g,
                &bp.grouped.weight,
                &mut gb.grouped.weight,
                &mut gb.grouped.bias,
            );
            if let Some(sg) = &skip_grads[i] {
                g += sg;
            }
            match ops::conv3x3_backward(
                &rec.input,
                &rec.conv_out,
                &g,
                &bp.conv.weight,
                &mut gb.conv.weight,
                &mut gb.conv.bias,
                i > 0,
            ) {
                Some(dx) => g = dx,
                None => break,
            }
        }
    }
}

/// Fan-in of the weight tensor at position `slice_index` of [`Parameters::slices`].
fn fan_in_of(slice_index: usize, spec: &NetworkSpec) -> usize {
    let tensor = slice_index / 2;
    let blocks: Vec<usize> = spec
        .encoder
        .iter()
        .map(|b| b.conv.in_channels)
        .chain(spec.decoder.iter().map(|b| b.conv.in_channels))
        .collect();
    if tensor == 2 * blocks.len() {
        return spec.head.in_channels;
    }
    if tensor.is_multiple_of(2) {
        blocks[tensor / 2] * 9
    } else {
        9
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{default_network_spec, tables};
    use rand::Rng;

    fn small_spec(mode: SkipMode) -> NetworkSpec {
        default_network_spec(TensorShape::new(32, 32, 3), 3, mode).unwrap()
    }

    fn random_input(seed: u64, dim: (usize, usize, usize)) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn(dim, |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn parameter_total_matches_tables_plus_head() {
        let spec = default_network_spec(TensorShape::new(640, 640, 3), 3, SkipMode::Add).unwrap();
        let net = Network::<f32>::zeroed(spec.clone()).unwrap();
        let head = 3 * 32 + 3;
        assert_eq!(net.num_parameters() as u64, tables::printed_total() + head);
        assert_eq!(net.num_parameters() as u64, spec.total_parameters());
    }

    #[test]
    fn zero_head_gives_uniform_output() {
        let mut net = Network::<f64>::new(small_spec(SkipMode::Concat), 3).unwrap();
        net.zero_head();
        let probs = net.forward_sample(&random_input(1, (3, 32, 32))).unwrap();
        assert!(probs.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn batch_elements_are_independent() {
        let net = Network::<f32>::new(small_spec(SkipMode::Add), 11).unwrap();
        let x = random_input(2, (3, 32, 32)).mapv(|v| v as f32);
        let batch = ndarray::stack(Axis(0), &[x.view(), x.view()]).unwrap();
        let out = net.forward(&batch).unwrap();
        assert_eq!(out.dim(), (2, 3, 32, 32));
        assert_eq!(out.index_axis(Axis(0), 0), out.index_axis(Axis(0), 1));
        let again = net.forward(&batch).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn rejects_wrong_input_dims() {
        let net = Network::<f32>::new(small_spec(SkipMode::Add), 0).unwrap();
        let x = Array3::<f32>::zeros((3, 64, 64));
        assert!(matches!(
            net.forward_sample(&x),
            Err(NnError::InputShape { .. })
        ));
    }

    /// Central differences of a scalar objective `sum(probs * r)` w.r.t. sampled parameters.
    fn check_gradients(mode: SkipMode) {
        let mut net = Network::<f64>::new(small_spec(mode), 5).unwrap();
        // shift biases so few rectifiers sit exactly at their kink
        for s in net
            .parameters_mut()
            .slices_mut()
            .into_iter()
            .skip(1)
            .step_by(2)
        {
            s.iter_mut().for_each(|v| *v = 0.05);
        }
        let x = random_input(9, (3, 32, 32));
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let r = Array3::from_shape_fn((3, 32, 32), |_| rng.random_range(-1.0..1.0));
        let objective = |n: &Network<f64>| (n.forward_sample(&x).unwrap() * &r).sum();

        let tape = net.forward_train(&x).unwrap();
        // d(sum p*r)/dz = p * (r - sum_k p_k r_k)
        let p = &tape.probs;
        let mut dz = Array3::<f64>::zeros(p.dim());
        for h in 0..32 {
            for w in 0..32 {
                let dot: f64 = (0..3).map(|k| p[[k, h, w]] * r[[k, h, w]]).sum();
                for k in 0..3 {
                    dz[[k, h, w]] = p[[k, h, w]] * (r[[k, h, w]] - dot);
                }
            }
        }
        let mut grads = net.parameters().zeros_like();
        net.backward(&tape, &dz, &mut grads);
        let analytic = grads.to_flat();

        let base = net.parameters().to_flat();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for idx in (0..base.len()).step_by(base.len() / 150) {
            let mut plus = base.clone();
            plus[idx] += eps;
            let mut minus = base.clone();
            minus[idx] -= eps;
            let mut n = net.clone();
            n.parameters_mut().load_flat(&plus).unwrap();
            let fp = objective(&n);
            n.parameters_mut().load_flat(&minus).unwrap();
            let fm = objective(&n);
            let numeric = (fp - fm) / (2.0 * eps);
            let err =
                (numeric - analytic[idx]).abs() / numeric.abs().max(analytic[idx].abs()).max(1e-6);
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn backward_matches_finite_differences_concat() {
        check_gradients(SkipMode::Concat);
    }

    #[test]
    fn backward_matches_finite_differences_add() {
        check_gradients(SkipMode::Add);
    }
}
