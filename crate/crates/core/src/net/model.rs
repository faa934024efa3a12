use serde::{Deserialize, Serialize};

use super::activations::{clamp_alpha, groupsort_with_perm, pnorm_backward, pnorm_value, sort_permutation};
use super::conv::{conv2d_backward, conv2d_forward};
use super::layer::{window, Layer, LayerSpec, Shape};
use crate::constraints::{
    conv_lipschitz_factor_strided, pooling_lipschitz_constant, BjorckConfig, ConvGeometry, PowerIterConfig,
    Projection, ProjectionTape,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    Spectral,
    #[default]
    Bjorck,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationSettings {
    pub power: PowerIterConfig,
    pub bjorck: BjorckConfig,
}

/// Ordered layer stack computing raw scores `f_1(x)..f_q(x)`.
#[derive(Debug, Clone)]
pub struct Model<T> {
    input_shape: Shape,
    layers: Vec<Layer<T>>,
    shapes: Vec<Shape>,
    mode: NormalizationMode,
    settings: NormalizationSettings,
    /// Right singular vector per weighted layer, reused between projections.
    warm: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> PartialEq for Model<T> {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape
            && self.layers == other.layers
            && self.mode == other.mode
            && self.settings == other.settings
    }
}

/// Activations recorded by [`Model::forward_trace`].
#[derive(Debug, Clone)]
pub struct Trace<T> {
    inputs: Vec<Vec<T>>,
    output: Vec<T>,
    /// Sort permutations or max-pool argmaxes, empty for other layers.
    aux: Vec<Vec<usize>>,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self) -> &[T] {
        &self.output
    }

    pub fn input(&self) -> &[T] {
        &self.inputs[0]
    }

    pub fn layer_input(&self, idx: usize) -> &[T] {
        &self.inputs[idx]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad<T> {
    None,
    Weights { weight: Matrix<T>, bias: Vec<T> },
    Alpha(T),
}

impl<T: Scalar> LayerGrad<T> {
    pub fn slices(&self) -> Vec<&[T]> {
        match self {
            LayerGrad::None => vec![],
            LayerGrad::Weights { weight, bias } => vec![weight.as_slice(), bias.as_slice()],
            LayerGrad::Alpha(a) => vec![std::slice::from_ref(a)],
        }
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            LayerGrad::None => vec![],
            LayerGrad::Weights { weight, bias } => vec![weight.as_mut_slice(), bias.as_mut_slice()],
            LayerGrad::Alpha(a) => vec![std::slice::from_mut(a)],
        }
    }

    /// `self += s·other`
    pub fn add_scaled(&mut self, other: &LayerGrad<T>, s: T) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + s * *y;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport<T> {
    /// Gradient of `upstreamᵀ f(x)` with respect to `x`.
    pub input_grad: Vec<T>,
    pub param_grads: Vec<LayerGrad<T>>,
}

impl<T: Scalar> Model<T> {
    /// Assembles a model from explicit layers without touching the weights.
    pub fn new(
        input_shape: Shape,
        layers: Vec<Layer<T>>,
        mode: NormalizationMode,
        settings: NormalizationSettings,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("model needs at least one layer".into()));
        }
        if input_shape.is_empty() {
            return Err(Error::InvalidConfig("empty input shape".into()));
        }
        let mut shapes = vec![input_shape];
        for layer in &layers {
            let next = layer.output_shape(*shapes.last().unwrap())?;
            shapes.push(next);
        }
        let warm = vec![None; layers.len()];
        Ok(Self {
            input_shape,
            layers,
            shapes,
            mode,
            settings,
            warm,
        })
    }

    /// Builds the layers described by `specs` with random weights, then
    /// normalizes them.
    pub fn build(
        input_shape: Shape,
        specs: &[LayerSpec],
        mode: NormalizationMode,
        settings: NormalizationSettings,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input_shape;
        for spec in specs {
            let layer = instantiate(spec, shape, mode, rng)?;
            shape = layer.output_shape(shape)?;
            layers.push(layer);
        }
        let mut model = Self::new(input_shape, layers, mode, settings)?;
        model.normalize_weights(rng)?;
        Ok(model)
    }

    /// `dense(h₁) act dense(h₂) act … dense(outputs)`.
    pub fn mlp(
        input_dim: usize,
        hidden: &[usize],
        activation: &LayerSpec,
        outputs: usize,
        mode: NormalizationMode,
        settings: NormalizationSettings,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut specs = Vec::new();
        for &units in hidden {
            specs.push(LayerSpec::Dense { units });
            specs.push(activation.clone());
        }
        specs.push(LayerSpec::Dense { units: outputs });
        Self::build(Shape::flat(input_dim), &specs, mode, settings, rng)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.len()
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().unwrap().len()
    }

    pub fn mode(&self) -> NormalizationMode {
        self.mode
    }

    pub fn settings(&self) -> NormalizationSettings {
        self.settings
    }

    pub fn set_settings(&mut self, settings: NormalizationSettings) {
        self.settings = settings;
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Dense { weight, bias } => Layer::Dense {
                    weight: weight.cast(),
                    bias: bias.iter().map(|b| U::of(b.as_f64())).collect(),
                },
                Layer::Conv2d { geometry, kernel, bias } => Layer::Conv2d {
                    geometry: *geometry,
                    kernel: kernel.cast(),
                    bias: bias.iter().map(|b| U::of(b.as_f64())).collect(),
                },
                Layer::GroupSort { group } => Layer::GroupSort { group: *group },
                Layer::FullSort => Layer::FullSort,
                Layer::ConstPrelu { alpha } => Layer::ConstPrelu { alpha: U::of(alpha.as_f64()) },
                Layer::PnormPool {
                    pool,
                    stride,
                    p,
                    mean_factor,
                } => Layer::PnormPool {
                    pool: *pool,
                    stride: *stride,
                    p: U::of(p.as_f64()),
                    mean_factor: *mean_factor,
                },
                Layer::MaxPool { pool, stride } => Layer::MaxPool {
                    pool: *pool,
                    stride: *stride,
                },
                Layer::AvgPool { pool, stride } => Layer::AvgPool {
                    pool: *pool,
                    stride: *stride,
                },
            })
            .collect();
        Model {
            input_shape: self.input_shape,
            layers,
            shapes: self.shapes.clone(),
            mode: self.mode,
            settings: self.settings,
            warm: vec![None; self.layers.len()],
        }
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input of length {} for a model expecting {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        for idx in 0..self.layers.len() {
            cur = self.apply_layer(idx, &cur, None);
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, x: &[T]) -> Result<Trace<T>> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut aux = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for idx in 0..self.layers.len() {
            let mut a = Vec::new();
            let next = self.apply_layer(idx, &cur, Some(&mut a));
            inputs.push(cur);
            aux.push(a);
            cur = next;
        }
        Ok(Trace {
            inputs,
            output: cur,
            aux,
        })
    }

    fn apply_layer(&self, idx: usize, x: &[T], aux: Option<&mut Vec<usize>>) -> Vec<T> {
        let in_shape = self.shapes[idx];
        let out_shape = self.shapes[idx + 1];
        match &self.layers[idx] {
            Layer::Dense { weight, bias } => (0..weight.rows())
                .map(|i| {
                    let mut acc = bias[i];
                    for (w, v) in weight.row(i).iter().zip(x) {
                        acc = acc + *w * *v;
                    }
                    acc
                })
                .collect(),
            Layer::Conv2d { geometry, kernel, bias } => {
                conv2d_forward(kernel, bias, x, geometry).expect("shapes validated at construction")
            }
            Layer::GroupSort { group } => {
                let c = in_shape.c;
                let mut out = Vec::with_capacity(x.len());
                let mut perm = Vec::with_capacity(x.len());
                for (p, chunk) in x.chunks(c).enumerate() {
                    let (o, local) = groupsort_with_perm(chunk, *group);
                    out.extend(o);
                    perm.extend(local.into_iter().map(|l| p * c + l));
                }
                if let Some(a) = aux {
                    *a = perm;
                }
                out
            }
            Layer::FullSort => {
                let perm = sort_permutation(x);
                let out = perm.iter().map(|&p| x[p]).collect();
                if let Some(a) = aux {
                    *a = perm;
                }
                out
            }
            Layer::ConstPrelu { alpha } => {
                let a = clamp_alpha(*alpha);
                x.iter().map(|&v| if v >= T::zero() { v } else { a * v }).collect()
            }
            Layer::PnormPool {
                pool,
                stride,
                p,
                mean_factor,
            } => map_windows(in_shape, out_shape, *pool, *stride, |idx| {
                let vals: Vec<T> = idx.iter().map(|&i| x[i]).collect();
                pnorm_value(&vals, *p, *mean_factor)
            }),
            Layer::MaxPool { pool, stride } => {
                let mut arg = Vec::with_capacity(out_shape.len());
                let out = map_windows(in_shape, out_shape, *pool, *stride, |idx| {
                    let best = idx.iter().copied().fold(idx[0], |b, i| if x[i] > x[b] { i } else { b });
                    arg.push(best);
                    x[best]
                });
                if let Some(a) = aux {
                    *a = arg;
                }
                out
            }
            Layer::AvgPool { pool, stride } => {
                let scale = avgpool_scale::<T>(*pool, *stride);
                map_windows(in_shape, out_shape, *pool, *stride, |idx| {
                    idx.iter().map(|&i| x[i]).sum::<T>() * scale
                })
            }
        }
    }

    /// Smallest distance of any recorded activation to a point where the
    /// network is not differentiable: sort ties, max-pool ties, the PReLU
    /// kink. Finite differences are only meaningful well inside that margin.
    pub fn kink_distance(&self, trace: &Trace<T>) -> T {
        let mut best = T::infinity();
        for (idx, layer) in self.layers.iter().enumerate() {
            let x = &trace.inputs[idx];
            let in_shape = self.shapes[idx];
            match layer {
                Layer::GroupSort { group } => {
                    for chunk in x.chunks(in_shape.c) {
                        for g in chunk.chunks_exact(*group) {
                            best = best.min(min_gap(g));
                        }
                    }
                }
                Layer::FullSort => best = best.min(min_gap(x)),
                Layer::ConstPrelu { alpha } if clamp_alpha(*alpha) != T::one() => {
                    for v in x {
                        best = best.min(v.abs());
                    }
                }
                Layer::MaxPool { pool, stride } => {
                    let out_shape = self.shapes[idx + 1];
                    map_windows(in_shape, out_shape, *pool, *stride, |w| {
                        let vals: Vec<T> = w.iter().map(|&i| x[i]).collect();
                        best = best.min(min_gap(&vals));
                        T::zero()
                    });
                }
                _ => {}
            }
        }
        best
    }

    /// Reverse-mode gradients of `upstreamᵀ f(x)`.
    pub fn backward(&self, trace: &Trace<T>, upstream: &[T]) -> Result<GradientReport<T>> {
        self.check_upstream(upstream)?;
        let (input_grad, param_grads) = self.backprop(trace, upstream, true);
        Ok(GradientReport {
            input_grad,
            param_grads,
        })
    }

    /// Input gradient only.
    pub fn backward_input(&self, trace: &Trace<T>, upstream: &[T]) -> Result<Vec<T>> {
        self.check_upstream(upstream)?;
        Ok(self.backprop(trace, upstream, false).0)
    }

    /// Scores and `∇ₓ f_output(x)`.
    pub fn input_gradient(&self, x: &[T], output: usize) -> Result<(Vec<T>, Vec<T>)> {
        if output >= self.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "output {output} of a {}-output model",
                self.output_dim()
            )));
        }
        let trace = self.forward_trace(x)?;
        let mut up = vec![T::zero(); self.output_dim()];
        up[output] = T::one();
        let g = self.backprop(&trace, &up, false).0;
        Ok((trace.output, g))
    }

    fn check_upstream(&self, upstream: &[T]) -> Result<()> {
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "upstream gradient of length {} for {} outputs",
                upstream.len(),
                self.output_dim()
            )));
        }
        Ok(())
    }

    fn backprop(&self, trace: &Trace<T>, upstream: &[T], want_params: bool) -> (Vec<T>, Vec<LayerGrad<T>>) {
        let mut g = upstream.to_vec();
        let mut grads = vec![LayerGrad::None; if want_params { self.layers.len() } else { 0 }];
        for idx in (0..self.layers.len()).rev() {
            let x = &trace.inputs[idx];
            let in_shape = self.shapes[idx];
            let out_shape = self.shapes[idx + 1];
            let aux = &trace.aux[idx];
            g = match &self.layers[idx] {
                Layer::Dense { weight, .. } => {
                    let mut gin = vec![T::zero(); weight.cols()];
                    for (i, &gi) in g.iter().enumerate() {
                        if gi != T::zero() {
                            for (acc, w) in gin.iter_mut().zip(weight.row(i)) {
                                *acc = *acc + gi * *w;
                            }
                        }
                    }
                    if want_params {
                        let gw = Matrix::from_fn(weight.rows(), weight.cols(), |i, j| g[i] * x[j]);
                        grads[idx] = LayerGrad::Weights {
                            weight: gw,
                            bias: g.clone(),
                        };
                    }
                    gin
                }
                Layer::Conv2d { geometry, kernel, .. } => {
                    let (gin, params) = conv2d_backward(kernel, x, &g, geometry, want_params);
                    if let Some((weight, bias)) = params {
                        grads[idx] = LayerGrad::Weights { weight, bias };
                    }
                    gin
                }
                Layer::GroupSort { .. } | Layer::FullSort => {
                    let mut gin = vec![T::zero(); x.len()];
                    for (i, &p) in aux.iter().enumerate() {
                        gin[p] = g[i];
                    }
                    gin
                }
                Layer::ConstPrelu { alpha } => {
                    let a = clamp_alpha(*alpha);
                    if want_params {
                        let ga = x
                            .iter()
                            .zip(&g)
                            .filter(|(v, _)| **v < T::zero())
                            .map(|(v, gv)| *v * *gv)
                            .sum();
                        grads[idx] = LayerGrad::Alpha(ga);
                    }
                    x.iter()
                        .zip(&g)
                        .map(|(&v, &gv)| if v >= T::zero() { gv } else { a * gv })
                        .collect()
                }
                Layer::PnormPool {
                    pool,
                    stride,
                    p,
                    mean_factor,
                } => {
                    let mut gin = vec![T::zero(); x.len()];
                    let mut k = 0;
                    map_windows(in_shape, out_shape, *pool, *stride, |w| {
                        let vals: Vec<T> = w.iter().map(|&i| x[i]).collect();
                        let mut local = vec![T::zero(); w.len()];
                        pnorm_backward(&vals, *p, *mean_factor, g[k], &mut local);
                        for (&i, l) in w.iter().zip(local) {
                            gin[i] = gin[i] + l;
                        }
                        k += 1;
                        T::zero()
                    });
                    gin
                }
                Layer::MaxPool { .. } => {
                    let mut gin = vec![T::zero(); x.len()];
                    for (o, &i) in aux.iter().enumerate() {
                        gin[i] = gin[i] + g[o];
                    }
                    gin
                }
                Layer::AvgPool { pool, stride } => {
                    let scale = avgpool_scale::<T>(*pool, *stride);
                    let mut gin = vec![T::zero(); x.len()];
                    let mut k = 0;
                    map_windows(in_shape, out_shape, *pool, *stride, |w| {
                        for &i in w {
                            gin[i] = gin[i] + g[k] * scale;
                        }
                        k += 1;
                        T::zero()
                    });
                    gin
                }
            };
        }
        (g, grads)
    }

    /// Parameter buffers in a fixed order: per layer, weight then bias, or
    /// the PReLU slope.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense { weight, bias } | Layer::Conv2d { kernel: weight, bias, .. } => {
                    out.push(weight.as_mut_slice());
                    out.push(bias.as_mut_slice());
                }
                Layer::ConstPrelu { alpha } => out.push(std::slice::from_mut(alpha)),
                _ => {}
            }
        }
        out
    }

    /// Projection and divisor applied to layer `idx`, if it has weights.
    fn projection_for(&self, idx: usize) -> Result<Option<(Projection, T)>> {
        let last = idx + 1 == self.layers.len();
        let for_mode = match self.mode {
            NormalizationMode::Spectral => Projection::Spectral,
            NormalizationMode::Bjorck => Projection::Bjorck(self.settings.bjorck),
        };
        Ok(match &self.layers[idx] {
            Layer::Dense { .. } if last => Some((Projection::RowUnit, T::one())),
            Layer::Dense { .. } => Some((for_mode, T::one())),
            Layer::Conv2d { geometry, .. } => Some((for_mode, T::of(conv_factor(geometry)?))),
            _ => None,
        })
    }

    /// Makes every layer 1-Lipschitz: hidden dense weights are divided by
    /// their spectral norm (then orthonormalized in Björck mode), the last
    /// dense layer has unit rows, convolution kernels are additionally
    /// divided by Λ, and PReLU slopes are clamped to `[−1, 1]`.
    pub fn normalize_weights(&mut self, rng: &mut Rng) -> Result<()> {
        self.project(rng, false).map(|_| ())
    }

    /// As [`Model::normalize_weights`], keeping the tapes needed to pull
    /// gradients back onto the weights before projection.
    pub fn project(&mut self, rng: &mut Rng, keep_tapes: bool) -> Result<Vec<Option<ProjectionTape<T>>>> {
        let power = self.settings.power;
        let mut tapes = Vec::with_capacity(self.layers.len());
        for idx in 0..self.layers.len() {
            let proj = self.projection_for(idx)?;
            let mut tape = None;
            match (&mut self.layers[idx], proj) {
                (Layer::Dense { weight, .. } | Layer::Conv2d { kernel: weight, .. }, Some((p, div))) => {
                    let (w, t) = p.apply(weight, div, &power, &mut self.warm[idx], rng)?;
                    *weight = w;
                    if keep_tapes {
                        tape = Some(t);
                    }
                }
                (Layer::ConstPrelu { alpha }, _) => *alpha = clamp_alpha(*alpha),
                _ => {}
            }
            tapes.push(tape);
        }
        Ok(tapes)
    }

    /// Largest ratio `|f_i(a) − f_i(b)| / ‖a − b‖` per output over `pairs`
    /// random pairs in the box `[lo, hi]`. Half the pairs are drawn
    /// independently, half as close neighbours.
    pub fn empirical_lipschitz(&self, lo: &[f64], hi: &[f64], pairs: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        let d = self.input_dim();
        if lo.len() != d || hi.len() != d {
            return Err(Error::DimensionMismatch("box bounds".into()));
        }
        let diam = lo.iter().zip(hi).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
        let mut worst = vec![0.0f64; self.output_dim()];
        for k in 0..pairs {
            let a: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| rng.uniform_in(*l, *h)).collect();
            let b: Vec<f64> = if k % 2 == 0 {
                lo.iter().zip(hi).map(|(l, h)| rng.uniform_in(*l, *h)).collect()
            } else {
                let dir: Vec<f64> = rng.unit_vector(d);
                let r = rng.uniform_in(1e-4, 0.05) * diam.max(1e-12);
                a.iter().zip(&dir).map(|(x, u)| x + r * u).collect()
            };
            let dist = crate::linalg::distance(&a, &b);
            if dist == 0.0 {
                continue;
            }
            let fa = self.forward(&a.iter().map(|&v| T::of(v)).collect::<Vec<_>>())?;
            let fb = self.forward(&b.iter().map(|&v| T::of(v)).collect::<Vec<_>>())?;
            for (w, (x, y)) in worst.iter_mut().zip(fa.iter().zip(&fb)) {
                *w = w.max((x.as_f64() - y.as_f64()).abs() / dist);
            }
        }
        Ok(worst)
    }

    /// Pulls weight gradients taken at the projected weights back through
    /// the projection tapes.
    pub fn pull_back(tapes: &[Option<ProjectionTape<T>>], grads: &mut [LayerGrad<T>]) {
        for (tape, grad) in tapes.iter().zip(grads.iter_mut()) {
            if let (Some(t), LayerGrad::Weights { weight, .. }) = (tape, grad) {
                *weight = t.backward(weight);
            }
        }
    }

    /// Warm-start vectors; carried across a projection made on a clone.
    pub(crate) fn warm_vectors(&self) -> &[Option<Vec<T>>] {
        &self.warm
    }

    pub(crate) fn set_warm_vectors(&mut self, warm: Vec<Option<Vec<T>>>) {
        self.warm = warm;
    }
}

/// Divisor applied on top of `‖W̄‖`. Strided geometries can give Λ < 1
/// (the formula averages over input pixels, most of which a stride skips),
/// and dividing by it would amplify the kernel, so it is floored at 1.
pub(crate) fn conv_factor(g: &ConvGeometry) -> Result<f64> {
    Ok(conv_lipschitz_factor_strided(g)?.max(1.0))
}

fn avgpool_scale<T: Scalar>(pool: usize, stride: usize) -> T {
    let lip = pooling_lipschitz_constant(pool, stride).expect("validated at construction");
    T::one() / (T::of((pool * pool) as f64) * T::of(lip))
}

fn map_windows<T: Scalar>(
    in_shape: Shape,
    out_shape: Shape,
    pool: usize,
    stride: usize,
    mut f: impl FnMut(&[usize]) -> T,
) -> Vec<T> {
    let mut out = Vec::with_capacity(out_shape.len());
    for oy in 0..out_shape.h {
        for ox in 0..out_shape.w {
            for ch in 0..out_shape.c {
                out.push(f(&window(in_shape, pool, stride, oy, ox, ch)));
            }
        }
    }
    out
}

fn min_gap<T: Scalar>(v: &[T]) -> T {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    s.windows(2).fold(T::infinity(), |m, w| m.min(w[1] - w[0]))
}

fn instantiate<T: Scalar>(spec: &LayerSpec, input: Shape, mode: NormalizationMode, rng: &mut Rng) -> Result<Layer<T>> {
    Ok(match spec {
        LayerSpec::Dense { units } => {
            if *units == 0 {
                return Err(Error::InvalidConfig("dense layer with zero units".into()));
            }
            let fan_in = input.len();
            let weight = match mode {
                NormalizationMode::Bjorck => orthogonal(*units, fan_in, rng),
                NormalizationMode::Spectral => gaussian(*units, fan_in, rng),
            };
            Layer::Dense {
                weight,
                bias: vec![T::zero(); *units],
            }
        }
        LayerSpec::Conv2d {
            channels,
            kernel,
            stride,
        } => {
            let geometry = ConvGeometry::same(input.c, *channels, *kernel, *stride, input.h, input.w)?;
            let cols = kernel * kernel * input.c;
            let weight = match mode {
                NormalizationMode::Bjorck => orthogonal(*channels, cols, rng),
                NormalizationMode::Spectral => gaussian(*channels, cols, rng),
            };
            Layer::Conv2d {
                geometry,
                kernel: weight,
                bias: vec![T::zero(); *channels],
            }
        }
        LayerSpec::GroupSort { group } => Layer::GroupSort { group: *group },
        LayerSpec::FullSort => Layer::FullSort,
        LayerSpec::ConstPrelu { alpha } => Layer::ConstPrelu {
            alpha: clamp_alpha(T::of(*alpha)),
        },
        LayerSpec::PnormPool {
            pool,
            stride,
            p,
            mean_factor,
        } => Layer::PnormPool {
            pool: *pool,
            stride: *stride,
            p: T::of(*p),
            mean_factor: *mean_factor,
        },
        LayerSpec::MaxPool { pool, stride } => Layer::MaxPool {
            pool: *pool,
            stride: *stride,
        },
        LayerSpec::AvgPool { pool, stride } => Layer::AvgPool {
            pool: *pool,
            stride: *stride,
        },
    })
}

fn gaussian<T: Scalar>(rows: usize, cols: usize, rng: &mut Rng) -> Matrix<T> {
    let s = 1.0 / (cols as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| T::of(rng.normal() * s))
}

/// Random matrix with orthonormal rows or columns (Gram-Schmidt on a
/// Gaussian draw, along the shorter side).
fn orthogonal<T: Scalar>(rows: usize, cols: usize, rng: &mut Rng) -> Matrix<T> {
    let (n, m) = (rows.min(cols), rows.max(cols));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = rng.normal_vec(m);
        for _ in 0..2 {
            for b in &basis {
                let c = crate::linalg::dot(&v, b);
                crate::linalg::axpy(-c, b, &mut v);
            }
        }
        if crate::linalg::normalize_in_place(&mut v) > 1e-8 {
            basis.push(v);
        }
    }
    if rows <= cols {
        Matrix::from_fn(rows, cols, |i, j| T::of(basis[i][j]))
    } else {
        Matrix::from_fn(rows, cols, |i, j| T::of(basis[j][i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(w: &[&[f64]]) -> Layer<f64> {
        let weight = Matrix::from_rows(w);
        let bias = vec![0.0; weight.rows()];
        Layer::Dense { weight, bias }
    }

    #[test]
    fn identity_network() {
        let m = Model::new(
            Shape::flat(2),
            vec![dense(&[&[1.0, 0.0], &[0.0, 1.0]])],
            NormalizationMode::Spectral,
            NormalizationSettings::default(),
        )
        .unwrap();
        assert_eq!(m.forward(&[0.3, -2.0]).unwrap(), vec![0.3, -2.0]);
    }

    #[test]
    fn dense_then_pair_sort() {
        let m = Model::new(
            Shape::flat(2),
            vec![dense(&[&[1.0, 0.0], &[0.0, 1.0]]), Layer::GroupSort { group: 2 }],
            NormalizationMode::Spectral,
            NormalizationSettings::default(),
        )
        .unwrap();
        assert_eq!(m.forward(&[3.0, 1.0]).unwrap(), vec![1.0, 3.0]);
        let t = m.forward_trace(&[3.0, 1.0]).unwrap();
        let g = m.backward(&t, &[1.0, 0.0]).unwrap();
        assert_eq!(g.input_grad, vec![0.0, 1.0]);
    }

    #[test]
    fn linear_model_gradient_is_weight() {
        let m = Model::new(
            Shape::flat(3),
            vec![dense(&[&[0.2, -0.5, 0.7]])],
            NormalizationMode::Spectral,
            NormalizationSettings::default(),
        )
        .unwrap();
        let (_, g) = m.input_gradient(&[1.0, 2.0, 3.0], 0).unwrap();
        assert_eq!(g, vec![0.2, -0.5, 0.7]);
    }

    #[test]
    fn dense_scaling_normalized() {
        let mut m = Model::new(
            Shape::flat(2),
            vec![
                dense(&[&[2.0, 0.0], &[0.0, 2.0]]),
                Layer::GroupSort { group: 2 },
                dense(&[&[1.0, 1.0]]),
            ],
            NormalizationMode::Spectral,
            NormalizationSettings::default(),
        )
        .unwrap();
        m.normalize_weights(&mut Rng::new(0)).unwrap();
        match &m.layers()[0] {
            Layer::Dense { weight, .. } => {
                assert!(weight.sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-12)
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn dimension_mismatch() {
        let m = Model::new(
            Shape::flat(2),
            vec![dense(&[&[1.0, 0.0]])],
            NormalizationMode::Spectral,
            NormalizationSettings::default(),
        )
        .unwrap();
        assert!(m.forward(&[1.0]).is_err());
        assert!(Model::<f64>::new(
            Shape::flat(3),
            vec![dense(&[&[1.0, 0.0]])],
            NormalizationMode::Spectral,
            NormalizationSettings::default()
        )
        .is_err());
    }

    #[test]
    fn orthogonal_init_is_orthonormal() {
        let mut rng = Rng::new(2);
        for (r, c) in [(3, 5), (6, 2), (4, 4)] {
            let w: Matrix<f64> = orthogonal(r, c, &mut rng);
            assert!(w.orthonormality_residual() < 1e-12);
        }
    }

    #[test]
    fn overlapping_max_pool_rejected() {
        let r = Model::<f64>::new(
            Shape::new(4, 4, 1),
            vec![Layer::MaxPool { pool: 2, stride: 1 }],
            NormalizationMode::Spectral,
            NormalizationSettings::default(),
        );
        assert!(r.is_err());
    }
}
