//! The track-selection mechanism: an acoustic query network, bilinear
//! compatibility scores between each query and every candidate visual track,
//! a track-axis softmax with an inverse-temperature knob, and the gated
//! (convex-combined) visual features.
//!
//! During training the candidate tracks are the other minibatch elements, so
//! scores are `[B, T, B]`. At inference a single acoustic stream can be
//! scored against an arbitrary number `N` of tracks, giving `[1, T, N]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{
    batch_norm_backward, batch_norm_infer, batch_norm_train, conv1d, conv1d_backward, relu,
    relu_backward, sorted_sum, BatchNormCache, BatchNormState,
};
use crate::tensor::{Parameter, SeededRng, Tensor};

pub const ACOUSTIC_DIM: usize = 240;
pub const QUERY_DIM: usize = 512;

/// Query-network architecture: 1D convolutions over time, kernel 5, SAME
/// padding, ReLU then batch normalization after every layer, no pooling.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QueryNetConfig {
    /// Input channels followed by each layer's output channels.
    pub channels: Vec<usize>,
    pub kernel: usize,
}

impl Default for QueryNetConfig {
    fn default() -> QueryNetConfig {
        QueryNetConfig {
            channels: vec![ACOUSTIC_DIM, 256, 256, 256, 512, 512],
            kernel: 5,
        }
    }
}

impl QueryNetConfig {
    /// A small configuration for gradient checks and fast tests.
    pub fn tiny(input_dim: usize, query_dim: usize) -> QueryNetConfig {
        QueryNetConfig {
            channels: vec![input_dim, 8, 8, query_dim],
            kernel: 5,
        }
    }

    pub fn layers(&self) -> usize {
        self.channels.len() - 1
    }

    pub fn query_dim(&self) -> usize {
        *self.channels.last().unwrap()
    }

    /// Half-width of the input span influencing one output step.
    pub fn receptive_radius(&self) -> usize {
        self.layers() * (self.kernel / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 {
            return Err(Error::InvalidArgument(
                "query net needs at least one layer".into(),
            ));
        }
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::InvalidArgument(format!(
                "query net kernel must be odd, got {}",
                self.kernel
            )));
        }
        Ok(())
    }
}

/// Whether batch-norm layers use batch statistics (training) or running
/// statistics (evaluation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// One conv + ReLU + batch-norm block.
#[derive(Debug, Clone)]
pub struct ConvBnLayer {
    pub kernel: Parameter,
    pub bias: Parameter,
    pub bn_scale: Parameter,
    pub bn_shift: Parameter,
    pub bn_state: BatchNormState,
}

#[derive(Debug, Clone)]
struct LayerCache {
    conv_in: Tensor,
    pre_relu: Tensor,
    bn: BatchNormCache,
}

/// Forward activations saved for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct QueryCache {
    layers: Vec<LayerCache>,
}

/// The 1D ConvNet computing attention queries from acoustic features.
#[derive(Debug, Clone)]
pub struct QueryNet {
    pub config: QueryNetConfig,
    pub layers: Vec<ConvBnLayer>,
}

impl QueryNet {
    /// He-style initialization: kernels `N(0, sqrt(2 / (K * Cin)))`, biases
    /// zero, norm scale one, shift zero. Running statistics start at the
    /// identity prior (mean 0, variance 1) and are marked initialized once
    /// the net has seen a training batch or a checkpoint.
    pub fn init(config: QueryNetConfig, rng: &mut SeededRng) -> Result<QueryNet> {
        config.validate()?;
        let mut layers = Vec::new();
        for l in 0..config.layers() {
            let ci = config.channels[l];
            let co = config.channels[l + 1];
            let sigma = (2.0 / (config.kernel * ci) as f64).sqrt();
            layers.push(ConvBnLayer {
                kernel: Parameter::new(
                    format!("query.layer{}.kernel", l + 1),
                    Tensor::randn(&[config.kernel, ci, co], sigma, rng),
                ),
                bias: Parameter::new(format!("query.layer{}.bias", l + 1), Tensor::zeros(&[co])),
                bn_scale: Parameter::new(
                    format!("query.layer{}.bn_scale", l + 1),
                    Tensor::filled(&[co], 1.0),
                ),
                bn_shift: Parameter::new(
                    format!("query.layer{}.bn_shift", l + 1),
                    Tensor::zeros(&[co]),
                ),
                bn_state: BatchNormState::new(co),
            });
        }
        Ok(QueryNet { config, layers })
    }

    /// Runs the net on acoustic features `[B, T, Din]`, producing queries
    /// `[B, T, Dq]`. Train mode normalizes with batch statistics (updating
    /// the running ones) and returns a cache for [`QueryNet::backward`].
    pub fn forward(&mut self, acoustic: &Tensor, mode: Mode) -> Result<(Tensor, QueryCache)> {
        if acoustic.rank() != 3 || acoustic.dim(2) != self.config.channels[0] {
            return Err(Error::shape(
                "query_forward",
                format!(
                    "input shape {:?}, expected [B,T,{}]",
                    acoustic.shape(),
                    self.config.channels[0]
                ),
            ));
        }
        let mut x = acoustic.clone();
        let mut cache = QueryCache::default();
        for layer in &mut self.layers {
            let pre_relu = conv1d(&x, &layer.kernel.value, &layer.bias.value)?;
            let relu_out = relu(&pre_relu);
            let out = match mode {
                Mode::Train => {
                    let (out, bn) = batch_norm_train(
                        &relu_out,
                        &layer.bn_scale.value,
                        &layer.bn_shift.value,
                        &mut layer.bn_state,
                    )?;
                    cache.layers.push(LayerCache {
                        conv_in: x,
                        pre_relu,
                        bn,
                    });
                    out
                }
                Mode::Infer => batch_norm_infer(
                    &relu_out,
                    &layer.bn_scale.value,
                    &layer.bn_shift.value,
                    &layer.bn_state,
                )?,
            };
            x = out;
        }
        Ok((x, cache))
    }

    /// Accumulates parameter gradients for a train-mode forward pass given
    /// the gradient w.r.t. the queries. The gradient w.r.t. the acoustic
    /// input is not propagated further (the feature pipeline is not
    /// trainable).
    pub fn backward(&mut self, cache: &QueryCache, grad_query: &Tensor) -> Result<()> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::InvalidArgument(
                "query backward requires a train-mode forward cache".into(),
            ));
        }
        let mut dy = grad_query.clone();
        for (layer, lc) in self.layers.iter_mut().zip(cache.layers.iter()).rev() {
            let (d_relu_out, d_scale, d_shift) =
                batch_norm_backward(&lc.bn, &layer.bn_scale.value, &dy)?;
            layer.bn_scale.grad = layer.bn_scale.grad.add(&d_scale)?;
            layer.bn_shift.grad = layer.bn_shift.grad.add(&d_shift)?;
            let d_pre = relu_backward(&lc.pre_relu, &d_relu_out)?;
            let (dx, dw, db) = conv1d_backward(&lc.conv_in, &layer.kernel.value, &d_pre)?;
            layer.kernel.grad = layer.kernel.grad.add(&dw)?;
            layer.bias.grad = layer.bias.grad.add(&db)?;
            dy = dx;
        }
        Ok(())
    }
}

/// Bilinear compatibility scores.
///
/// `queries` is `[B, T, Dq]`, `w` is `[Dq, Dv]`, `visual` is `[N, T, Dv]`;
/// the result is `[B, T, N]` with
/// `S[b,t,n] = sum_l Q[b,t,l] * (sum_m W[l,m] * V[n,t,m])`.
/// The inner projection sums over `m` first, then the outer product over `l`,
/// matching the triple-loop oracle in the tests term for term.
pub fn bilinear_score(queries: &Tensor, w: &Tensor, visual: &Tensor) -> Result<Tensor> {
    let (b, t, dq, n, dv) = check_bilinear(queries, w, visual)?;
    let proj = project_tracks(w, visual, n, t, dq, dv);
    let mut out = Tensor::zeros(&[b, t, n]);
    let q = queries.data();
    let y = out.data_mut();
    for ib in 0..b {
        for it in 0..t {
            let qrow = &q[(ib * t + it) * dq..(ib * t + it + 1) * dq];
            for ik in 0..n {
                let prow = &proj[(ik * t + it) * dq..(ik * t + it + 1) * dq];
                let mut acc = 0.0;
                for l in 0..dq {
                    acc += qrow[l] * prow[l];
                }
                y[(ib * t + it) * n + ik] = acc;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`bilinear_score`] w.r.t. the queries and `w` given the
/// upstream gradient `[B, T, N]`. The visual features are frozen inputs, so
/// no gradient is produced for them.
pub fn bilinear_backward(
    queries: &Tensor,
    w: &Tensor,
    visual: &Tensor,
    grad_scores: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (b, t, dq, n, dv) = check_bilinear(queries, w, visual)?;
    if grad_scores.shape() != [b, t, n] {
        return Err(Error::shape(
            "bilinear_backward",
            format!("grad shape {:?}, expected {:?}", grad_scores.shape(), [b, t, n]),
        ));
    }
    let proj = project_tracks(w, visual, n, t, dq, dv);
    let q = queries.data();
    let v = visual.data();
    let ds = grad_scores.data();

    let mut dqout = Tensor::zeros(queries.shape());
    {
        let dqd = dqout.data_mut();
        for ib in 0..b {
            for it in 0..t {
                for ik in 0..n {
                    let g = ds[(ib * t + it) * n + ik];
                    let prow = &proj[(ik * t + it) * dq..(ik * t + it + 1) * dq];
                    let drow = &mut dqd[(ib * t + it) * dq..(ib * t + it + 1) * dq];
                    for l in 0..dq {
                        drow[l] += g * prow[l];
                    }
                }
            }
        }
    }

    let mut dw = Tensor::zeros(w.shape());
    {
        let dwd = dw.data_mut();
        // dW[l,m] = sum_t sum_n (sum_b Q[b,t,l] dS[b,t,n]) V[n,t,m]
        let mut a = vec![0.0; dq * n];
        for it in 0..t {
            for x in a.iter_mut() {
                *x = 0.0;
            }
            for ib in 0..b {
                let qrow = &q[(ib * t + it) * dq..(ib * t + it + 1) * dq];
                let srow = &ds[(ib * t + it) * n..(ib * t + it + 1) * n];
                for l in 0..dq {
                    let qv = qrow[l];
                    for ik in 0..n {
                        a[l * n + ik] += qv * srow[ik];
                    }
                }
            }
            for l in 0..dq {
                for ik in 0..n {
                    let av = a[l * n + ik];
                    if av == 0.0 {
                        continue;
                    }
                    let vrow = &v[(ik * t + it) * dv..(ik * t + it + 1) * dv];
                    let dwrow = &mut dwd[l * dv..(l + 1) * dv];
                    for m in 0..dv {
                        dwrow[m] += av * vrow[m];
                    }
                }
            }
        }
    }
    Ok((dqout, dw))
}

/// `proj[n,t,l] = sum_m W[l,m] V[n,t,m]`, flattened `[N, T, Dq]`.
fn project_tracks(w: &Tensor, visual: &Tensor, n: usize, t: usize, dq: usize, dv: usize) -> Vec<f64> {
    let wv = w.data();
    let v = visual.data();
    let mut proj = vec![0.0; n * t * dq];
    for ik in 0..n {
        for it in 0..t {
            let vrow = &v[(ik * t + it) * dv..(ik * t + it + 1) * dv];
            let prow = &mut proj[(ik * t + it) * dq..(ik * t + it + 1) * dq];
            for l in 0..dq {
                let wrow = &wv[l * dv..(l + 1) * dv];
                let mut acc = 0.0;
                for m in 0..dv {
                    acc += wrow[m] * vrow[m];
                }
                prow[l] = acc;
            }
        }
    }
    proj
}

fn check_bilinear(
    queries: &Tensor,
    w: &Tensor,
    visual: &Tensor,
) -> Result<(usize, usize, usize, usize, usize)> {
    if queries.rank() != 3 || visual.rank() != 3 || w.rank() != 2 {
        return Err(Error::shape(
            "bilinear_score",
            format!(
                "expected Q [B,T,Dq], W [Dq,Dv], V [N,T,Dv]; got {:?}, {:?}, {:?}",
                queries.shape(),
                w.shape(),
                visual.shape()
            ),
        ));
    }
    let (b, t, dq) = (queries.dim(0), queries.dim(1), queries.dim(2));
    let (n, tv, dv) = (visual.dim(0), visual.dim(1), visual.dim(2));
    if w.dim(0) != dq {
        return Err(Error::shape(
            "bilinear_score",
            format!("W first dim {} != query dim {dq}", w.dim(0)),
        ));
    }
    if w.dim(1) != dv {
        return Err(Error::shape(
            "bilinear_score",
            format!("W second dim {} != visual dim {dv}", w.dim(1)),
        ));
    }
    if tv != t {
        return Err(Error::shape(
            "bilinear_score",
            format!("time dim mismatch: queries {t}, visual {tv}"),
        ));
    }
    Ok((b, t, dq, n, dv))
}

/// Attention weights: per `(b, t)` a probability distribution over tracks.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub data: Tensor,
    pub beta: f64,
}

/// Softmax over the track (last) axis of the scores at inverse temperature
/// `beta`; `beta = 1` is the training-time distribution.
pub fn attention_weights(scores: &Tensor, beta: f64) -> Result<AttentionWeights> {
    let data = crate::ops::softmax_last_axis(scores, beta)?;
    Ok(AttentionWeights { data, beta })
}

/// Gated features: the convex combination of the tracks' features under the
/// attention weights, `V'[b,t,c] = sum_i alpha[b,t,i] V[i,t,c]`.
///
/// The sum over tracks uses value-sorted ordering (so it commutes with track
/// permutations), and an exactly one-hot row copies the selected track's
/// features bitwise.
pub fn gate(alpha: &AttentionWeights, visual: &Tensor) -> Result<Tensor> {
    let a = &alpha.data;
    if a.rank() != 3 || visual.rank() != 3 {
        return Err(Error::shape(
            "gate",
            format!("alpha {:?}, visual {:?}", a.shape(), visual.shape()),
        ));
    }
    let (b, t, n) = (a.dim(0), a.dim(1), a.dim(2));
    let (nv, tv, dv) = (visual.dim(0), visual.dim(1), visual.dim(2));
    if nv != n || tv != t {
        return Err(Error::shape(
            "gate",
            format!(
                "alpha is over {n} tracks x {t} steps but visual is [{nv},{tv},{dv}]"
            ),
        ));
    }
    let ad = a.data();
    let vd = visual.data();
    let mut out = Tensor::zeros(&[b, t, dv]);
    let y = out.data_mut();
    let mut terms = vec![0.0; n];
    for ib in 0..b {
        for it in 0..t {
            let arow = &ad[(ib * t + it) * n..(ib * t + it + 1) * n];
            let orow = &mut y[(ib * t + it) * dv..(ib * t + it + 1) * dv];
            if let Some(hot) = one_hot_index(arow) {
                orow.copy_from_slice(&vd[(hot * t + it) * dv..(hot * t + it + 1) * dv]);
                continue;
            }
            for c in 0..dv {
                for (i, term) in terms.iter_mut().enumerate() {
                    *term = arow[i] * vd[(i * t + it) * dv + c];
                }
                orow[c] = sorted_sum(&terms);
            }
        }
    }
    Ok(out)
}

fn one_hot_index(row: &[f64]) -> Option<usize> {
    let mut hot = None;
    for (i, &v) in row.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return None;
            }
            hot = Some(i);
        } else if v != 0.0 {
            return None;
        }
    }
    hot
}

/// Gradient of a scalar loss w.r.t. the attention weights given its gradient
/// w.r.t. the gated features: `dalpha[b,t,i] = sum_c dV'[b,t,c] V[i,t,c]`.
pub fn gate_backward_alpha(visual: &Tensor, grad_gated: &Tensor) -> Result<Tensor> {
    let (n, t, dv) = (visual.dim(0), visual.dim(1), visual.dim(2));
    if grad_gated.rank() != 3 || grad_gated.dim(1) != t || grad_gated.dim(2) != dv {
        return Err(Error::shape(
            "gate_backward",
            format!("grad {:?} vs visual {:?}", grad_gated.shape(), visual.shape()),
        ));
    }
    let b = grad_gated.dim(0);
    let g = grad_gated.data();
    let v = visual.data();
    let mut out = Tensor::zeros(&[b, t, n]);
    let y = out.data_mut();
    for ib in 0..b {
        for it in 0..t {
            let grow = &g[(ib * t + it) * dv..(ib * t + it + 1) * dv];
            for i in 0..n {
                let vrow = &v[(i * t + it) * dv..(i * t + it + 1) * dv];
                let mut acc = 0.0;
                for c in 0..dv {
                    acc += grow[c] * vrow[c];
                }
                y[(ib * t + it) * n + i] = acc;
            }
        }
    }
    Ok(out)
}

/// Concatenation of acoustic and gated visual features along the channel
/// axis: `[B,T,Da] + [B,T,Dv] -> [B,T,Da+Dv]`, acoustic channels first.
pub fn concat_features(acoustic: &Tensor, gated: &Tensor) -> Result<Tensor> {
    if acoustic.rank() != 3 || gated.rank() != 3 {
        return Err(Error::shape(
            "concat_features",
            format!("{:?} and {:?}", acoustic.shape(), gated.shape()),
        ));
    }
    let (b, t, da) = (acoustic.dim(0), acoustic.dim(1), acoustic.dim(2));
    if gated.dim(0) != b || gated.dim(1) != t {
        return Err(Error::shape(
            "concat_features",
            format!(
                "batch/time mismatch: acoustic [{b},{t},..], gated {:?}",
                gated.shape()
            ),
        ));
    }
    let dv = gated.dim(2);
    let mut out = Tensor::zeros(&[b, t, da + dv]);
    for bt in 0..b * t {
        out.data_mut()[bt * (da + dv)..bt * (da + dv) + da]
            .copy_from_slice(&acoustic.data()[bt * da..(bt + 1) * da]);
        out.data_mut()[bt * (da + dv) + da..(bt + 1) * (da + dv)]
            .copy_from_slice(&gated.data()[bt * dv..(bt + 1) * dv]);
    }
    Ok(out)
}

/// Shannon entropy of each attention row in nats, with `0 ln 0 = 0`.
pub fn attention_entropy(alpha: &AttentionWeights) -> Tensor {
    let a = &alpha.data;
    let (b, t, n) = (a.dim(0), a.dim(1), a.dim(2));
    let mut out = Tensor::zeros(&[b, t]);
    for bt in 0..b * t {
        let mut h = 0.0;
        for i in 0..n {
            let p = a.data()[bt * n + i];
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
        out.data_mut()[bt] = h;
    }
    out
}

/// The trainable attention stack: query net plus the bilinear matrix.
#[derive(Debug, Clone)]
pub struct AttentionModel {
    pub query: QueryNet,
    pub w: Parameter,
}

/// Forward state needed to push gradients back through the stack.
pub struct ModelCache {
    pub queries: Tensor,
    pub query_cache: QueryCache,
}

impl AttentionModel {
    /// Initializes the query net and `W` from the purpose-derived streams of
    /// `seed`. `W` entries are `N(0, 1/sqrt(Dq))`.
    pub fn init(config: QueryNetConfig, visual_dim: usize, seed: u64) -> Result<AttentionModel> {
        let root = SeededRng::new(seed);
        let mut qrng = root.derive("query-init");
        let query = QueryNet::init(config, &mut qrng)?;
        let dq = query.config.query_dim();
        let mut wrng = root.derive("bilinear-init");
        let w = Parameter::new(
            "bilinear.w",
            Tensor::randn(&[dq, visual_dim], (dq as f64).sqrt().recip(), &mut wrng),
        );
        Ok(AttentionModel { query, w })
    }

    pub fn visual_dim(&self) -> usize {
        self.w.value.dim(1)
    }

    /// Scores `[B, T, N]` for acoustic features `[B, T, Din]` against `N`
    /// candidate tracks `[N, T, Dv]`.
    pub fn forward_scores(
        &mut self,
        acoustic: &Tensor,
        visual: &Tensor,
        mode: Mode,
    ) -> Result<(Tensor, ModelCache)> {
        let (queries, query_cache) = self.query.forward(acoustic, mode)?;
        let scores = bilinear_score(&queries, &self.w.value, visual)?;
        Ok((
            scores,
            ModelCache {
                queries,
                query_cache,
            },
        ))
    }

    /// Accumulates gradients for `W` and the query-net parameters from the
    /// gradient w.r.t. the scores of a train-mode forward pass.
    pub fn backward(
        &mut self,
        cache: &ModelCache,
        visual: &Tensor,
        grad_scores: &Tensor,
    ) -> Result<()> {
        let (dq, dw) = bilinear_backward(&cache.queries, &self.w.value, visual, grad_scores)?;
        self.w.grad = self.w.grad.add(&dw)?;
        self.query.backward(&cache.query_cache, &dq)
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.query.layers {
            layer.kernel.zero_grad();
            layer.bias.zero_grad();
            layer.bn_scale.zero_grad();
            layer.bn_shift.zero_grad();
        }
        self.w.zero_grad();
    }

    /// Trainable parameters in a fixed order (layer by layer, then `W`).
    pub fn params(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        for layer in &self.query.layers {
            out.push(&layer.kernel);
            out.push(&layer.bias);
            out.push(&layer.bn_scale);
            out.push(&layer.bn_shift);
        }
        out.push(&self.w);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        for layer in &mut self.query.layers {
            out.push(&mut layer.kernel);
            out.push(&mut layer.bias);
            out.push(&mut layer.bn_scale);
            out.push(&mut layer.bn_shift);
        }
        out.push(&mut self.w);
        out
    }

    /// Marks all batch-norm running statistics as usable in inference mode.
    /// Called after loading a checkpoint.
    pub fn mark_bn_initialized(&mut self) {
        for layer in &mut self.query.layers {
            layer.bn_state.initialized = true;
        }
    }
}
