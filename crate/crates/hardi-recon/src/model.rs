//! The 1D encoder-decoder reconstruction network.
//!
//! Input pipeline: a reduced measurement is interpolated onto the full
//! direction set, stacked with the x/y/z direction components as four
//! channels, and (during training) the positions of all four channels plus
//! the target are shuffled by one shared permutation, so position k always
//! refers to direction perm(k).
//!
//! The encoder is three strided conv+bias+ReLU layers producing a
//! nonnegative code; the decoder is three bias-free transposed convolutions,
//! a purely linear map. Decoder filter i shares the shape of encoder filter
//! I+1-i for the inner layers; the final decoder layer emits a single
//! channel to match the one-channel target.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    permutation_from_rng, upsample_to_full, GradientScheme, Permutation, SubsetSelection,
    UpsampleMethod,
};
use crate::nn::{
    conv1d_forward, conv1d_transposed_forward, init_conv_params, relu_forward, Adam, ConvSpec,
    Graph, Optimizer, Real, Sgd, Tensor,
};
use crate::rng::{mix_seed, Rng};
use crate::signal::SignalMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerChoice {
    Adam,
    Sgd,
}

/// How direction-order shuffling is applied during training.
///
/// `Fixed` draws one random order from the permute seed and applies it to
/// every voxel, every epoch, and at inference (outputs are mapped back to
/// the original direction order). It decouples the learned mapping from the
/// acquisition ordering at no optimization cost. `PerEpoch` redraws a fresh
/// order per voxel per epoch as a data augmentation; it makes the target
/// mapping permutation-equivariant, which this architecture only fits with
/// far more training than the fixed policy needs (measured: an order of
/// magnitude worse NMSE at equal epochs), so `Fixed` is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PermutePolicy {
    Off,
    Fixed,
    PerEpoch,
}

/// Network and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub k_high: usize,
    pub k_low: usize,
    pub encoder_channels: [usize; 3],
    pub strides: [usize; 3],
    pub kernel: usize,
    pub upsample: UpsampleMethod,
    pub permute: PermutePolicy,
    /// Seed for the fixed direction order (under [`PermutePolicy::Fixed`]).
    pub permute_seed: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Early-stop patience in epochs without validation improvement.
    pub patience: usize,
    pub optimizer: OptimizerChoice,
    /// Zero the last decoder filter at init so the initial output is zero.
    pub zero_init_final: bool,
    /// Fraction of training voxels held out for validation by the harness.
    pub val_fraction: f64,
}

impl ModelConfig {
    /// Defaults mirror the reference setup: 90 directions reduced to 30,
    /// kernel 9, channels 400/200/100, strides 3/3/2, lr 0.001, batch 500.
    pub fn new(k_low: usize) -> Self {
        ModelConfig {
            k_high: 90,
            k_low,
            encoder_channels: [400, 200, 100],
            strides: [3, 3, 2],
            kernel: 9,
            upsample: UpsampleMethod::Idw,
            permute: PermutePolicy::Fixed,
            permute_seed: 0,
            lr: 0.001,
            batch_size: 500,
            epochs: 300,
            patience: 30,
            optimizer: OptimizerChoice::Adam,
            zero_init_final: false,
            val_fraction: 0.1,
        }
    }

    /// Per-layer conv specs plus the code length: the stride chain must
    /// divide the input length exactly at every stage.
    pub fn layer_specs(&self) -> Result<LayerSpecs> {
        if self.k_low < 6 || self.k_low > self.k_high {
            return Err(Error::validation(format!(
                "k_low must satisfy 6 <= k_low <= {}, got {}",
                self.k_high, self.k_low
            )));
        }
        let mut lengths = vec![self.k_high];
        for (i, &s) in self.strides.iter().enumerate() {
            let n = *lengths.last().unwrap();
            if n % s != 0 {
                return Err(Error::validation(format!(
                    "stride {s} at encoder layer {} does not divide length {n}",
                    i + 1
                )));
            }
            lengths.push(n / s);
        }
        let ch = [
            4,
            self.encoder_channels[0],
            self.encoder_channels[1],
            self.encoder_channels[2],
        ];
        let mut encoder = Vec::with_capacity(3);
        for i in 0..3 {
            let padding = conv_padding(self.kernel, self.strides[i])?;
            let spec = ConvSpec::conv(ch[i], ch[i + 1], self.kernel, self.strides[i], padding, true)?;
            let got = spec.out_len(lengths[i])?;
            if got != lengths[i + 1] {
                return Err(Error::validation(format!(
                    "encoder layer {} maps {} to {got}, expected {}",
                    i + 1,
                    lengths[i],
                    lengths[i + 1]
                )));
            }
            encoder.push(spec);
        }
        // decoder mirrors the encoder in reverse; the last layer emits one
        // channel for the single-signal target
        let mut decoder = Vec::with_capacity(3);
        for i in 0..3 {
            let enc = &encoder[2 - i];
            let n_in = lengths[2 - i];
            let out_channels = if i == 2 { 1 } else { ch[2 - i] };
            let op = ConvSpec::inverting_output_padding(self.kernel, enc.stride, enc.padding, n_in)?;
            let spec = ConvSpec::transposed(
                ch[3 - i],
                out_channels,
                self.kernel,
                enc.stride,
                enc.padding,
                op,
            )?;
            decoder.push(spec);
        }
        Ok(LayerSpecs {
            encoder,
            decoder,
            code_len: *lengths.last().unwrap(),
        })
    }
}

/// Smallest padding that maps a stride-divisible length n to exactly n/s.
fn conv_padding(kernel: usize, stride: usize) -> Result<usize> {
    if kernel < stride {
        return Err(Error::validation(format!(
            "kernel {kernel} smaller than stride {stride} drops samples"
        )));
    }
    // need ceil((kernel - stride) / 2) <= p and 2p <= kernel - 1
    let p = (kernel - stride).div_ceil(2);
    if 2 * p > kernel - 1 {
        return Err(Error::validation(format!(
            "no padding realizes stride {stride} with kernel {kernel}"
        )));
    }
    Ok(p)
}

#[derive(Debug, Clone)]
pub struct LayerSpecs {
    pub encoder: Vec<ConvSpec>,
    pub decoder: Vec<ConvSpec>,
    pub code_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<T: Real> {
    pub filters: Tensor<T>,
    pub bias: Tensor<T>,
}

/// All learnable tensors: three encoder filter/bias pairs and three
/// bias-free decoder filters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Real> {
    pub encoder: Vec<EncoderLayer<T>>,
    pub decoder: Vec<Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    /// He-uniform init, deterministic per seed; optionally zeroes the last
    /// decoder filter.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let specs = cfg.layer_specs()?;
        let mut encoder = Vec::with_capacity(3);
        for (i, spec) in specs.encoder.iter().enumerate() {
            let (filters, bias) = init_conv_params::<T>(spec, mix_seed(seed, i as u64));
            encoder.push(EncoderLayer {
                filters,
                bias: bias.expect("encoder layers carry a bias"),
            });
        }
        let mut decoder = Vec::with_capacity(3);
        for (i, spec) in specs.decoder.iter().enumerate() {
            let (mut filters, _) = init_conv_params::<T>(spec, mix_seed(seed, 16 + i as u64));
            if cfg.zero_init_final && i == 2 {
                filters = Tensor::zeros(&spec.filter_shape());
            }
            decoder.push(filters);
        }
        let params = ModelParams { encoder, decoder };
        params.validate(cfg)?;
        Ok(params)
    }

    /// Structural checks: layer count, tied inner decoder/encoder filter
    /// shapes, single-channel final layer, finite values.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = cfg.layer_specs()?;
        if self.encoder.len() != 3 || self.decoder.len() != 3 {
            return Err(Error::validation("model needs 3 encoder and 3 decoder layers"));
        }
        for (i, (layer, spec)) in self.encoder.iter().zip(&specs.encoder).enumerate() {
            if layer.filters.shape() != spec.filter_shape() {
                return Err(Error::validation(format!(
                    "encoder filter {i} has shape {:?}, expected {:?}",
                    layer.filters.shape(),
                    spec.filter_shape()
                )));
            }
            if layer.bias.shape() != [spec.out_channels] {
                return Err(Error::validation(format!("encoder bias {i} has wrong shape")));
            }
            layer.filters.check_finite("encoder filters")?;
            layer.bias.check_finite("encoder bias")?;
        }
        for (i, (filters, spec)) in self.decoder.iter().zip(&specs.decoder).enumerate() {
            if filters.shape() != spec.filter_shape() {
                return Err(Error::validation(format!(
                    "decoder filter {i} has shape {:?}, expected {:?}",
                    filters.shape(),
                    spec.filter_shape()
                )));
            }
            filters.check_finite("decoder filters")?;
        }
        // tied shapes: decoder filter i matches encoder filter 3-i for the
        // inner layers (the final layer deviates to emit one channel)
        if self.decoder[0].shape() != self.encoder[2].filters.shape() {
            return Err(Error::validation(
                "decoder filter 1 must share the shape of encoder filter 3",
            ));
        }
        if self.decoder[1].shape() != self.encoder[1].filters.shape() {
            return Err(Error::validation(
                "decoder filter 2 must share the shape of encoder filter 2",
            ));
        }
        Ok(())
    }

    /// Tensors in their canonical checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::with_capacity(9);
        for (i, layer) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{i}.filters"), &layer.filters));
            out.push((format!("encoder.{i}.bias"), &layer.bias));
        }
        for (i, filters) in self.decoder.iter().enumerate() {
            out.push((format!("decoder.{i}.filters"), filters));
        }
        out
    }

    pub fn to_f32(&self) -> ModelParams<f32> {
        let convert = |t: &Tensor<T>| {
            Tensor::<f32>::from_vec(t.shape(), t.data().iter().map(|v| v.to_f64() as f32).collect())
                .expect("same shape")
        };
        ModelParams {
            encoder: self
                .encoder
                .iter()
                .map(|l| EncoderLayer {
                    filters: convert(&l.filters),
                    bias: convert(&l.bias),
                })
                .collect(),
            decoder: self.decoder.iter().map(convert).collect(),
        }
    }

    pub fn from_f32(params: &ModelParams<f32>) -> ModelParams<T> {
        let convert = |t: &Tensor<f32>| {
            Tensor::<T>::from_vec(
                t.shape(),
                t.data().iter().map(|v| T::from_f64(*v as f64)).collect(),
            )
            .expect("same shape")
        };
        ModelParams {
            encoder: params
                .encoder
                .iter()
                .map(|l| EncoderLayer {
                    filters: convert(&l.filters),
                    bias: convert(&l.bias),
                })
                .collect(),
            decoder: params.decoder.iter().map(convert).collect(),
        }
    }
}

/// Nonnegative encoder output, shape [batch, channels, code_len].
#[derive(Debug, Clone)]
pub struct SparseCode<T: Real>(pub Tensor<T>);

impl<T: Real> SparseCode<T> {
    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }
}

/// Upsample a measurement, stack it with the direction components, and
/// optionally permute all four channels jointly.
pub fn prepare_input<T: Real>(
    l: &[f64],
    subset: &SubsetSelection,
    scheme: &GradientScheme,
    method: UpsampleMethod,
    perm: Option<&Permutation>,
) -> Result<Tensor<T>> {
    let k = scheme.len();
    let upsampled = upsample_to_full(l, subset, scheme, method)?;
    let [qx, qy, qz] = scheme.coordinate_channels();
    let mut channels = [upsampled, qx, qy, qz];
    if let Some(p) = perm {
        for ch in &mut channels {
            *ch = p.apply_slice(ch)?;
        }
    }
    let mut data = Vec::with_capacity(4 * k);
    for ch in &channels {
        data.extend(ch.iter().map(|&v| T::from_f64(v)));
    }
    Tensor::from_vec(&[1, 4, k], data)
}

/// Three conv+bias+ReLU stages down to the sparse code.
pub fn encode<T: Real>(
    x0: &Tensor<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<SparseCode<T>> {
    let specs = cfg.layer_specs()?;
    let mut x = x0.clone();
    for (layer, spec) in params.encoder.iter().zip(&specs.encoder) {
        let y = conv1d_forward(&x, &layer.filters, Some(&layer.bias), spec)?;
        x = relu_forward(&y);
    }
    debug_assert!(x.data().iter().all(|v| *v >= T::ZERO));
    Ok(SparseCode(x))
}

/// Three linear transposed-convolution stages back to the signal.
pub fn decode<T: Real>(
    code: &SparseCode<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<Tensor<T>> {
    let specs = cfg.layer_specs()?;
    let mut y = code.0.clone();
    for (filters, spec) in params.decoder.iter().zip(&specs.decoder) {
        y = conv1d_transposed_forward(&y, filters, spec)?;
    }
    Ok(y)
}

/// The training-time direction order implied by the config: the fixed
/// seeded permutation under `Fixed`, none otherwise. Per-epoch-augmented
/// models infer with the identity order.
pub fn inference_permutation(cfg: &ModelConfig, k: usize) -> Option<Permutation> {
    match cfg.permute {
        PermutePolicy::Fixed => {
            let mut rng = Rng::seed_from_u64(mix_seed(cfg.permute_seed, FIXED_PERM_STREAM));
            Some(permutation_from_rng(k, &mut rng))
        }
        PermutePolicy::Off | PermutePolicy::PerEpoch => None,
    }
}

/// Sub-stream id for the fixed direction order.
const FIXED_PERM_STREAM: u64 = 0xF1;

/// Reconstruct one voxel; the output is in the scheme's direction order.
pub fn infer<T: Real>(
    l: &[f64],
    subset: &SubsetSelection,
    scheme: &GradientScheme,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<Vec<f64>> {
    params.validate(cfg)?;
    if l.len() != subset.len() || subset.len() != cfg.k_low {
        return Err(Error::validation(format!(
            "measurement of length {} with subset of {} directions (config k_low {})",
            l.len(),
            subset.len(),
            cfg.k_low
        )));
    }
    let perm = inference_permutation(cfg, scheme.len());
    let x0 = prepare_input::<T>(l, subset, scheme, cfg.upsample, perm.as_ref())?;
    let code = encode(&x0, params, cfg)?;
    let out = decode(&code, params, cfg)?;
    let flat = out.to_f64_vec();
    Ok(match perm {
        // output position k holds direction perm(k); map back
        Some(p) => {
            let mut unpermuted = vec![0.0; flat.len()];
            for (pos, &src) in p.order().iter().enumerate() {
                unpermuted[src] = flat[pos];
            }
            unpermuted
        }
        None => flat,
    })
}

/// Inference averaged over `n_perms` random permutations (optional
/// test-time augmentation). Outputs are mapped back to the original
/// direction order before averaging; 0 permutations means plain [`infer`].
pub fn infer_tta<T: Real>(
    l: &[f64],
    subset: &SubsetSelection,
    scheme: &GradientScheme,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    n_perms: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_perms == 0 {
        return infer(l, subset, scheme, params, cfg);
    }
    params.validate(cfg)?;
    let k = scheme.len();
    let mut acc = vec![0.0; k];
    let mut rng = Rng::seed_from_u64(seed);
    for _ in 0..n_perms {
        let perm = permutation_from_rng(k, &mut rng);
        let x0 = prepare_input::<T>(l, subset, scheme, cfg.upsample, Some(&perm))?;
        let code = encode(&x0, params, cfg)?;
        let out = decode(&code, params, cfg)?;
        let out = out.to_f64_vec();
        // output position k holds direction perm(k); scatter back
        for (pos, &src) in perm.order().iter().enumerate() {
            acc[src] += out[pos];
        }
    }
    Ok(acc.into_iter().map(|v| v / n_perms as f64).collect())
}

/// Batched inference over a whole measurement matrix, preserving row order.
/// Rows come back in the scheme's direction order.
pub fn infer_matrix<T: Real>(
    measurements: &SignalMatrix,
    subset: &SubsetSelection,
    scheme: &GradientScheme,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<SignalMatrix> {
    params.validate(cfg)?;
    let k = scheme.len();
    let perm = inference_permutation(cfg, k);
    let pipeline = InputPipeline::new(measurements, subset, scheme, cfg)?;
    let mut rows = Vec::with_capacity(measurements.n_voxels() * k);
    let batch_perms: Option<Vec<Permutation>> =
        perm.as_ref().map(|p| vec![p.clone(); cfg.batch_size.max(1)]);
    let mut voxel = 0;
    while voxel < measurements.n_voxels() {
        let end = (voxel + cfg.batch_size.max(1)).min(measurements.n_voxels());
        let idx: Vec<usize> = (voxel..end).collect();
        let (x0, _) = pipeline.assemble_batch::<T>(
            &idx,
            batch_perms.as_deref().map(|p| &p[..idx.len()]),
            None,
        )?;
        let code = encode(&x0, params, cfg)?;
        let out = decode(&code, params, cfg)?;
        match &perm {
            Some(p) => {
                let flat = out.data();
                for row in 0..idx.len() {
                    let base = row * k;
                    let mut unpermuted = vec![0.0; k];
                    for (pos, &src) in p.order().iter().enumerate() {
                        unpermuted[src] = flat[base + pos].to_f64();
                    }
                    rows.extend(unpermuted);
                }
            }
            None => rows.extend(out.data().iter().map(|v| v.to_f64())),
        }
        voxel = end;
    }
    SignalMatrix::new(k, rows)
}

/// Precomputed upsampled inputs plus coordinate channels for fast batch
/// assembly during training.
struct InputPipeline {
    upsampled: Vec<Vec<f64>>,
    coords: [Vec<f64>; 3],
    k: usize,
}

impl InputPipeline {
    fn new(
        measurements: &SignalMatrix,
        subset: &SubsetSelection,
        scheme: &GradientScheme,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        if measurements.k() != subset.len() {
            return Err(Error::validation(format!(
                "measurement matrix has {} columns, subset selects {}",
                measurements.k(),
                subset.len()
            )));
        }
        let upsampled = measurements
            .rows()
            .map(|row| upsample_to_full(row, subset, scheme, cfg.upsample))
            .collect::<Result<Vec<_>>>()?;
        Ok(InputPipeline {
            upsampled,
            coords: scheme.coordinate_channels(),
            k: scheme.len(),
        })
    }

    /// Build [batch, 4, K] inputs (and permuted targets when given) for the
    /// listed voxels. `perms` must align with `idx` when present.
    fn assemble_batch<T: Real>(
        &self,
        idx: &[usize],
        perms: Option<&[Permutation]>,
        targets: Option<&SignalMatrix>,
    ) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        let bs = idx.len();
        let k = self.k;
        let mut x = Vec::with_capacity(bs * 4 * k);
        let mut t: Option<Vec<T>> = targets.map(|_| Vec::with_capacity(bs * k));
        for (row, &v) in idx.iter().enumerate() {
            let channels: [&[f64]; 4] = [
                &self.upsampled[v],
                &self.coords[0],
                &self.coords[1],
                &self.coords[2],
            ];
            match perms.map(|p| &p[row]) {
                Some(perm) => {
                    for ch in channels {
                        x.extend(perm.order().iter().map(|&i| T::from_f64(ch[i])));
                    }
                    if let (Some(buf), Some(tm)) = (t.as_mut(), targets) {
                        let target_row = tm.row(v);
                        buf.extend(perm.order().iter().map(|&i| T::from_f64(target_row[i])));
                    }
                }
                None => {
                    for ch in channels {
                        x.extend(ch.iter().map(|&val| T::from_f64(val)));
                    }
                    if let (Some(buf), Some(tm)) = (t.as_mut(), targets) {
                        buf.extend(tm.row(v).iter().map(|&val| T::from_f64(val)));
                    }
                }
            }
        }
        let x0 = Tensor::from_vec(&[bs, 4, k], x)?;
        let target = match t {
            Some(buf) => Some(Tensor::from_vec(&[bs, 1, k], buf)?),
            None => None,
        };
        Ok((x0, target))
    }
}

/// Paired measurements (K_L columns) and dense targets (K_H columns).
pub struct TrainData<'a> {
    pub inputs: &'a SignalMatrix,
    pub targets: &'a SignalMatrix,
}

impl TrainData<'_> {
    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.inputs.n_voxels() != self.targets.n_voxels() {
            return Err(Error::validation(format!(
                "{} measurements but {} targets",
                self.inputs.n_voxels(),
                self.targets.n_voxels()
            )));
        }
        if self.inputs.n_voxels() == 0 {
            return Err(Error::validation("empty dataset"));
        }
        if self.inputs.k() != cfg.k_low || self.targets.k() != cfg.k_high {
            return Err(Error::validation(format!(
                "dataset is {}->{} wide, config expects {}->{}",
                self.inputs.k(),
                self.targets.k(),
                cfg.k_low,
                cfg.k_high
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_nmse: f64,
    pub val_nmse: f64,
    pub wall_seconds: f64,
}

#[derive(Debug)]
pub struct TrainOutcome<T: Real> {
    /// Parameters from the best validation epoch.
    pub params: ModelParams<T>,
    pub log: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_nmse: f64,
    pub stopped_early: bool,
}

/// Training options beyond the model config.
pub struct TrainOptions<T: Real> {
    pub seed: u64,
    /// Resume: parameters plus the number of epochs already completed.
    pub initial: Option<(ModelParams<T>, usize)>,
}

impl<T: Real> TrainOptions<T> {
    pub fn new(seed: u64) -> Self {
        TrainOptions {
            seed,
            initial: None,
        }
    }
}

/// Mini-batch training with per-epoch reshuffling and (optionally) a fresh
/// permutation per voxel per epoch applied to inputs and targets alike.
/// Logs train/validation NMSE per epoch; early-stops on validation
/// stagnation; returns the best-validation parameters. Deterministic given
/// the seed, independent of thread count.
pub fn train<T: Real>(
    cfg: &ModelConfig,
    scheme: &GradientScheme,
    subset: &SubsetSelection,
    train_data: &TrainData,
    val_data: &TrainData,
    opts: &TrainOptions<T>,
) -> Result<TrainOutcome<T>> {
    train_data.check(cfg)?;
    val_data.check(cfg)?;
    subset.check_parent(scheme.len())?;
    if subset.len() != cfg.k_low {
        return Err(Error::validation(format!(
            "subset selects {} directions, config expects k_low {}",
            subset.len(),
            cfg.k_low
        )));
    }
    let specs = cfg.layer_specs()?;
    let n_train = train_data.inputs.n_voxels();
    let k = cfg.k_high;

    let (mut params, start_epoch) = match &opts.initial {
        Some((p, done)) => {
            p.validate(cfg)?;
            (p.clone(), *done)
        }
        None => (ModelParams::<T>::init(cfg, opts.seed)?, 0),
    };

    let pipeline = InputPipeline::new(train_data.inputs, subset, scheme, cfg)?;
    let val_pipeline = InputPipeline::new(val_data.inputs, subset, scheme, cfg)?;
    let fixed_perm = inference_permutation(cfg, k);

    let param_sizes: Vec<usize> = params.named_tensors().iter().map(|(_, t)| t.numel()).collect();
    let mut optimizer = match cfg.optimizer {
        OptimizerChoice::Adam => Optimizer::Adam(Adam::new(cfg.lr, &param_sizes)),
        OptimizerChoice::Sgd => Optimizer::Sgd(Sgd::new(cfg.lr)),
    };

    let mut log = Vec::with_capacity(cfg.epochs + 1);

    // baseline row before any update
    let t0 = Instant::now();
    let initial_train = dataset_nmse(
        &pipeline,
        train_data.targets,
        &params,
        cfg,
        &specs,
        fixed_perm.as_ref(),
    )?;
    let initial_val = dataset_nmse(
        &val_pipeline,
        val_data.targets,
        &params,
        cfg,
        &specs,
        fixed_perm.as_ref(),
    )?;
    log.push(EpochStats {
        epoch: start_epoch,
        train_nmse: initial_train,
        val_nmse: initial_val,
        wall_seconds: t0.elapsed().as_secs_f64(),
    });

    let mut best_params = params.clone();
    let mut best_val = initial_val;
    let mut best_epoch = start_epoch;
    let mut stall = 0usize;
    let mut stopped_early = false;

    for epoch in (start_epoch + 1)..=(start_epoch + cfg.epochs) {
        let epoch_start = Instant::now();
        let mut rng = Rng::seed_from_u64(mix_seed(opts.seed, epoch as u64));
        let mut order: Vec<usize> = (0..n_train).collect();
        rng.shuffle(&mut order);

        let mut loss_sum = 0.0f64;
        for (batch_idx, batch) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let perms: Option<Vec<Permutation>> = match cfg.permute {
                PermutePolicy::Off => None,
                PermutePolicy::Fixed => {
                    let p = fixed_perm.as_ref().expect("fixed policy has a permutation");
                    Some(vec![p.clone(); batch.len()])
                }
                PermutePolicy::PerEpoch => Some(
                    batch
                        .iter()
                        .map(|_| permutation_from_rng(k, &mut rng))
                        .collect(),
                ),
            };
            let (x0, target) = pipeline.assemble_batch::<T>(
                batch,
                perms.as_deref(),
                Some(train_data.targets),
            )?;
            let target = target.expect("targets requested");

            let mut graph = Graph::<T>::new();
            let x_id = graph.leaf(x0);
            let param_ids: Vec<_> = params
                .named_tensors()
                .into_iter()
                .map(|(_, t)| graph.leaf(t.clone()))
                .collect();
            let mut h = x_id;
            for (i, spec) in specs.encoder.iter().enumerate() {
                let w = param_ids[2 * i];
                let b = param_ids[2 * i + 1];
                let conv = graph.conv1d(h, w, Some(b), *spec)?;
                h = graph.relu(conv);
            }
            for (i, spec) in specs.decoder.iter().enumerate() {
                let w = param_ids[6 + i];
                h = graph.conv1d_transposed(h, w, *spec)?;
            }
            let loss_id = graph.nmse_loss(h, target)?;
            let loss = graph.value(loss_id).data()[0].to_f64();
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("training loss at epoch {epoch}, batch {batch_idx}"),
                });
            }
            graph.backward(loss_id)?;

            let grads: Vec<Vec<T>> = param_ids
                .iter()
                .map(|&id| {
                    graph
                        .grad(id)
                        .map(|g| g.to_vec())
                        .unwrap_or_else(|| vec![T::ZERO; graph.value(id).numel()])
                })
                .collect();
            let grad_refs: Vec<&[T]> = grads.iter().map(|g| g.as_slice()).collect();
            {
                let mut refs: Vec<&mut Tensor<T>> = Vec::with_capacity(9);
                for layer in params.encoder.iter_mut() {
                    refs.push(&mut layer.filters);
                    refs.push(&mut layer.bias);
                }
                for filters in params.decoder.iter_mut() {
                    refs.push(filters);
                }
                optimizer.step(&mut refs, &grad_refs)?;
            }
            loss_sum += loss * batch.len() as f64;
        }
        let train_nmse = loss_sum / n_train as f64;
        let val_nmse = dataset_nmse(
            &val_pipeline,
            val_data.targets,
            &params,
            cfg,
            &specs,
            fixed_perm.as_ref(),
        )?;
        log.push(EpochStats {
            epoch,
            train_nmse,
            val_nmse,
            wall_seconds: epoch_start.elapsed().as_secs_f64(),
        });

        if val_nmse < best_val {
            best_val = val_nmse;
            best_epoch = epoch;
            best_params = params.clone();
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        params: best_params,
        log,
        best_epoch,
        best_val_nmse: best_val,
        stopped_early,
    })
}

/// Mean NMSE of the current parameters over a dataset. The permutation (the
/// fixed training order, when one is in force) applies to inputs and targets
/// alike, so the value is directly comparable with unpermuted evaluation.
fn dataset_nmse<T: Real>(
    pipeline: &InputPipeline,
    targets: &SignalMatrix,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    specs: &LayerSpecs,
    perm: Option<&Permutation>,
) -> Result<f64> {
    let n = pipeline.upsampled.len();
    let mut total = 0.0f64;
    let mut voxel = 0;
    while voxel < n {
        let end = (voxel + cfg.batch_size.max(1)).min(n);
        let idx: Vec<usize> = (voxel..end).collect();
        let perms: Option<Vec<Permutation>> = perm.map(|p| vec![p.clone(); idx.len()]);
        let (x0, target) = pipeline.assemble_batch::<T>(&idx, perms.as_deref(), Some(targets))?;
        let target = target.expect("targets requested");
        let mut x = x0;
        for (layer, spec) in params.encoder.iter().zip(&specs.encoder) {
            let y = conv1d_forward(&x, &layer.filters, Some(&layer.bias), spec)?;
            x = relu_forward(&y);
        }
        for (filters, spec) in params.decoder.iter().zip(&specs.decoder) {
            x = conv1d_transposed_forward(&x, filters, spec)?;
        }
        let (loss, _) = crate::nn::graph::nmse_forward(&x, &target)?;
        total += loss.to_f64() * idx.len() as f64;
        voxel = end;
    }
    Ok(total / n as f64)
}
