//! Layer algebra with hand-written backward passes.
//!
//! Parameters live in one flat slice per network; each layer owns a
//! contiguous segment (weight first, then bias). Activations are batches
//! with one flattened HWC image (or feature vector) per row.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::ImageShape;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Dense { inputs: usize, outputs: usize },
    /// Valid (unpadded) stride-1 convolution with square kernels.
    Conv2d { input: ImageShape, filters: usize, kernel: usize },
    /// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
    MaxPool2 { input: ImageShape },
    Relu,
    Tanh,
    Sigmoid,
}

impl Layer {
    pub fn param_count(&self) -> usize {
        match *self {
            Layer::Dense { inputs, outputs } => inputs * outputs + outputs,
            Layer::Conv2d { input, filters, kernel } => {
                kernel * kernel * input.channels * filters + filters
            }
            _ => 0,
        }
    }

    /// Output width given the input width, or `None` if incompatible.
    fn output_dim(&self, input_dim: usize) -> Option<usize> {
        match *self {
            Layer::Dense { inputs, outputs } => (inputs == input_dim).then_some(outputs),
            Layer::Conv2d { input, filters, kernel } => {
                let ok = input.len() == input_dim && kernel <= input.height && kernel <= input.width;
                ok.then(|| conv_out(input, kernel, filters).len())
            }
            Layer::MaxPool2 { input } => (input.len() == input_dim).then(|| pool_out(input).len()),
            Layer::Relu | Layer::Tanh | Layer::Sigmoid => Some(input_dim),
        }
    }

    /// Named parameter tensors owned by this layer, with their shapes.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            Layer::Dense { inputs, outputs } => {
                vec![("weight", vec![inputs, outputs]), ("bias", vec![outputs])]
            }
            Layer::Conv2d { input, filters, kernel } => vec![
                ("weight", vec![kernel, kernel, input.channels, filters]),
                ("bias", vec![filters]),
            ],
            _ => vec![],
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            Layer::Dense { inputs, .. } => inputs,
            Layer::Conv2d { input, kernel, .. } => kernel * kernel * input.channels,
            _ => 1,
        }
    }
}

pub fn conv_out(input: ImageShape, kernel: usize, filters: usize) -> ImageShape {
    ImageShape::new(input.height + 1 - kernel, input.width + 1 - kernel, filters)
}

pub fn pool_out(input: ImageShape) -> ImageShape {
    ImageShape::new(input.height / 2, input.width / 2, input.channels)
}

/// A feed-forward stack of layers over a flat parameter slice.
/// (name, shape, offset) of every parameter tensor.
pub type ParamLayout = Vec<(String, Vec<usize>, usize)>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sequential {
    layers: Vec<Layer>,
    /// `dims[i]` is the input width of layer `i`; the last entry is the output width.
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

/// Values saved by a forward pass for the matching backward pass.
pub struct Trace<T> {
    inputs: Vec<Array2<T>>,
    aux: Vec<Aux>,
    pub output: Array2<T>,
}

enum Aux {
    None,
    Argmax(Vec<usize>),
}

impl Sequential {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let mut dims = vec![input_dim];
        let mut offsets = vec![0];
        for (i, layer) in layers.iter().enumerate() {
            let d = *dims.last().unwrap();
            let out = layer.output_dim(d).ok_or_else(|| {
                Error::Shape(format!("layer {i} ({layer:?}) cannot take input width {d}"))
            })?;
            dims.push(out);
            offsets.push(offsets.last().unwrap() + layer.param_count());
        }
        Ok(Self { layers, dims, offsets })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// `(name, shape, offset)` for each parameter tensor, names prefixed.
    pub fn param_layout(&self, prefix: &str) -> ParamLayout {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut off = self.offsets[i];
            for (name, shape) in layer.param_shapes() {
                let n: usize = shape.iter().product();
                out.push((format!("{prefix}.{i}.{name}"), shape, off));
                off += n;
            }
        }
        out
    }

    /// Uniform(−1/√fan_in, 1/√fan_in) for weights and biases.
    pub fn init_params(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            let bound = 1.0 / (layer.fan_in() as f64).sqrt();
            for _ in 0..layer.param_count() {
                p.push(rng.gen_range(-bound..bound));
            }
        }
        p
    }

    fn check(&self, params_len: usize, x_cols: usize) -> Result<()> {
        if params_len != self.param_count() {
            return Err(Error::Shape(format!(
                "{params_len} parameters, network expects {}",
                self.param_count()
            )));
        }
        if x_cols != self.input_dim() {
            return Err(Error::Shape(format!(
                "input width {x_cols}, network expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward<T: Scalar>(&self, params: &[T], x: Array2<T>) -> Result<Trace<T>> {
        self.check(params.len(), x.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut aux = Vec::with_capacity(self.layers.len());
        let mut h = x.as_standard_layout().into_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let p = &params[self.offsets[i]..self.offsets[i + 1]];
            let (out, a) = layer_forward(layer, p, &h);
            inputs.push(h);
            aux.push(a);
            h = out;
        }
        Ok(Trace { inputs, aux, output: h })
    }

    pub fn apply<T: Scalar>(&self, params: &[T], x: Array2<T>) -> Result<Array2<T>> {
        self.check(params.len(), x.ncols())?;
        let mut h = x.as_standard_layout().into_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let p = &params[self.offsets[i]..self.offsets[i + 1]];
            h = layer_forward(layer, p, &h).0;
        }
        Ok(h)
    }

    /// Back-propagate `grad_out` (gradient w.r.t. the network output).
    ///
    /// Returns the parameter gradient (empty unless `need_params`) and the
    /// input gradient (only if `need_input`).
    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        trace: &Trace<T>,
        grad_out: Array2<T>,
        need_params: bool,
        need_input: bool,
    ) -> (Vec<T>, Option<Array2<T>>) {
        let mut grads = if need_params { vec![T::zero(); self.param_count()] } else { Vec::new() };
        let mut g = grad_out;
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let p = &params[self.offsets[i]..self.offsets[i + 1]];
            let out = if i + 1 < self.layers.len() { &trace.inputs[i + 1] } else { &trace.output };
            let gp = if need_params { Some(&mut grads[self.offsets[i]..self.offsets[i + 1]]) } else { None };
            let want_dx = i > 0 || need_input;
            g = match layer_backward(layer, p, &trace.inputs[i], out, &trace.aux[i], g, gp, want_dx) {
                Some(dx) => dx,
                None => return (grads, None),
            };
        }
        (grads, need_input.then_some(g))
    }
}

fn layer_forward<T: Scalar>(layer: &Layer, p: &[T], x: &Array2<T>) -> (Array2<T>, Aux) {
    match *layer {
        Layer::Dense { inputs, outputs } => {
            let w = ArrayView2::from_shape((inputs, outputs), &p[..inputs * outputs]).unwrap();
            let b = ArrayView1::from(&p[inputs * outputs..]);
            let mut y = x.dot(&w);
            y += &b;
            (y, Aux::None)
        }
        Layer::Conv2d { input, filters, kernel } => {
            let kc = kernel * kernel * input.channels;
            let w = ArrayView2::from_shape((kc, filters), &p[..kc * filters]).unwrap();
            let b = ArrayView1::from(&p[kc * filters..]);
            let positions = conv_out(input, kernel, 1).len();
            let mut y = Array2::zeros((x.nrows(), positions * filters));
            let mut cols = Array2::zeros((positions, kc));
            // one sample at a time keeps the column buffer cache resident
            for (xrow, yrow) in x.rows().into_iter().zip(y.rows_mut()) {
                im2col_into(xrow.as_slice().expect("standard layout input"), input, kernel, &mut cols);
                let mut yb = yrow.into_shape((positions, filters)).unwrap();
                yb.assign(&b);
                general_mat_mul(T::one(), &cols, &w, T::one(), &mut yb);
            }
            (y, Aux::None)
        }
        Layer::MaxPool2 { input } => {
            let (y, idx) = maxpool_forward(x, input);
            (y, Aux::Argmax(idx))
        }
        Layer::Relu => (x.mapv(|v| if v.value() > 0.0 { v } else { T::zero() }), Aux::None),
        Layer::Tanh => (x.mapv(Scalar::tanh), Aux::None),
        Layer::Sigmoid => (x.mapv(Scalar::sigmoid), Aux::None),
    }
}

#[allow(clippy::too_many_arguments)]
fn layer_backward<T: Scalar>(
    layer: &Layer,
    p: &[T],
    x: &Array2<T>,
    y: &Array2<T>,
    aux: &Aux,
    g: Array2<T>,
    grad_params: Option<&mut [T]>,
    want_dx: bool,
) -> Option<Array2<T>> {
    match *layer {
        Layer::Dense { inputs, outputs } => {
            let w = ArrayView2::from_shape((inputs, outputs), &p[..inputs * outputs]).unwrap();
            if let Some(gp) = grad_params {
                let dw = x.t().dot(&g);
                let db = g.sum_axis(Axis(0));
                accumulate(&mut gp[..inputs * outputs], dw.iter());
                accumulate(&mut gp[inputs * outputs..], db.iter());
            }
            want_dx.then(|| g.dot(&w.t()))
        }
        Layer::Conv2d { input, filters, kernel } => {
            let kc = kernel * kernel * input.channels;
            let w = ArrayView2::from_shape((kc, filters), &p[..kc * filters]).unwrap();
            let positions = conv_out(input, kernel, 1).len();
            let g = g.as_standard_layout().into_owned();
            let mut cols = Array2::zeros((positions, kc));
            let mut dcols = Array2::zeros((positions, kc));
            let mut dw = Array2::zeros((kc, filters));
            let mut db = Array1::zeros(filters);
            let mut dx = want_dx.then(|| Array2::zeros((x.nrows(), input.len())));
            let need_params = grad_params.is_some();
            for (b, (xrow, grow)) in x.rows().into_iter().zip(g.rows()).enumerate() {
                let gb = grow.into_shape((positions, filters)).unwrap();
                if need_params {
                    im2col_into(xrow.as_slice().expect("standard layout input"), input, kernel, &mut cols);
                    general_mat_mul(T::one(), &cols.t(), &gb, T::one(), &mut dw);
                    db += &gb.sum_axis(Axis(0));
                }
                if let Some(dx) = dx.as_mut() {
                    general_mat_mul(T::one(), &gb, &w.t(), T::zero(), &mut dcols);
                    col2im_add(&dcols, input, kernel, dx.row_mut(b).into_slice().unwrap());
                }
            }
            if let Some(gp) = grad_params {
                accumulate(&mut gp[..kc * filters], dw.iter());
                accumulate(&mut gp[kc * filters..], db.iter());
            }
            dx
        }
        Layer::MaxPool2 { input } => {
            let Aux::Argmax(idx) = aux else { unreachable!("pool trace without argmax") };
            want_dx.then(|| {
                let mut dx = Array2::zeros((x.nrows(), input.len()));
                let per = pool_out(input).len();
                for (b, (mut row, grow)) in dx.rows_mut().into_iter().zip(g.rows()).enumerate() {
                    for (j, &gv) in grow.iter().enumerate() {
                        row[idx[b * per + j]] += gv;
                    }
                }
                dx
            })
        }
        Layer::Relu => want_dx.then(|| {
            let mut dx = g;
            dx.zip_mut_with(y, |d, &o| {
                if o.value() <= 0.0 {
                    *d = T::zero();
                }
            });
            dx
        }),
        Layer::Tanh => want_dx.then(|| {
            let mut dx = g;
            dx.zip_mut_with(y, |d, &o| *d *= T::one() - o * o);
            dx
        }),
        Layer::Sigmoid => want_dx.then(|| {
            let mut dx = g;
            dx.zip_mut_with(y, |d, &o| *d *= o * (T::one() - o));
            dx
        }),
    }
}

fn accumulate<'a, T: Scalar + 'a>(dst: &mut [T], src: impl Iterator<Item = &'a T>) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Patch matrix of one image: row per output position, columns ordered
/// (ky, kx, channel).
fn im2col_into<T: Scalar>(img: &[T], s: ImageShape, k: usize, cols: &mut Array2<T>) {
    let o = conv_out(s, k, 1);
    let span = k * s.channels;
    let row_len = k * span;
    let cs = cols.as_slice_mut().unwrap();
    let mut r = 0;
    for oy in 0..o.height {
        for ox in 0..o.width {
            let dst = &mut cs[r * row_len..(r + 1) * row_len];
            for ky in 0..k {
                let start = ((oy + ky) * s.width + ox) * s.channels;
                dst[ky * span..(ky + 1) * span].copy_from_slice(&img[start..start + span]);
            }
            r += 1;
        }
    }
}

/// Scatter-add a patch-matrix gradient back onto one image.
fn col2im_add<T: Scalar>(dcols: &Array2<T>, s: ImageShape, k: usize, img: &mut [T]) {
    let o = conv_out(s, k, 1);
    let span = k * s.channels;
    let row_len = k * span;
    let dcs = dcols.as_slice().expect("standard layout");
    let mut r = 0;
    for oy in 0..o.height {
        for ox in 0..o.width {
            let src = &dcs[r * row_len..(r + 1) * row_len];
            for ky in 0..k {
                let start = ((oy + ky) * s.width + ox) * s.channels;
                for (d, &v) in img[start..start + span].iter_mut().zip(&src[ky * span..(ky + 1) * span]) {
                    *d += v;
                }
            }
            r += 1;
        }
    }
}

fn maxpool_forward<T: Scalar>(x: &Array2<T>, s: ImageShape) -> (Array2<T>, Vec<usize>) {
    let o = pool_out(s);
    let c = s.channels;
    let mut y = Array2::zeros((x.nrows(), o.len()));
    let mut idx = Vec::with_capacity(x.nrows() * o.len());
    for (xrow, mut yrow) in x.rows().into_iter().zip(y.rows_mut()) {
        let mut j = 0;
        for oy in 0..o.height {
            for ox in 0..o.width {
                for ch in 0..c {
                    let mut best = ((2 * oy) * s.width + 2 * ox) * c + ch;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let cand = ((2 * oy + dy) * s.width + 2 * ox + dx) * c + ch;
                        if xrow[cand].value() > xrow[best].value() {
                            best = cand;
                        }
                    }
                    yrow[j] = xrow[best];
                    idx.push(best);
                    j += 1;
                }
            }
        }
    }
    (y, idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Reference convolution by direct summation.
    fn conv_oracle(x: &[f64], s: ImageShape, w: &[f64], b: &[f64], k: usize, f: usize) -> Vec<f64> {
        let o = conv_out(s, k, f);
        let mut out = vec![0.0; o.len()];
        for oy in 0..o.height {
            for ox in 0..o.width {
                for fi in 0..f {
                    let mut acc = b[fi];
                    for ky in 0..k {
                        for kx in 0..k {
                            for ci in 0..s.channels {
                                let xv = x[((oy + ky) * s.width + ox + kx) * s.channels + ci];
                                let wv = w[((ky * k + kx) * s.channels + ci) * f + fi];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[(oy * o.width + ox) * f + fi] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_summation() {
        let s = ImageShape::new(6, 5, 2);
        let net = Sequential::new(s.len(), vec![Layer::Conv2d { input: s, filters: 3, kernel: 3 }]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = net.init_params(&mut rng);
        let x: Vec<f64> = (0..2 * s.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xa = Array2::from_shape_vec((2, s.len()), x.clone()).unwrap();
        let y = net.apply(&p, xa).unwrap();
        let nw = 3 * 3 * 2 * 3;
        for b in 0..2 {
            let want = conv_oracle(&x[b * s.len()..(b + 1) * s.len()], s, &p[..nw], &p[nw..], 3, 3);
            for (a, e) in y.row(b).iter().zip(&want) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn maxpool_picks_window_maxima() {
        let s = ImageShape::new(2, 2, 2);
        let x = Array2::from_shape_vec((1, 8), vec![1.0, -1.0, 3.0, -4.0, 2.0, 5.0, 0.0, -2.0]).unwrap();
        let (y, _) = maxpool_forward(&x, s);
        assert_eq!(y.row(0).to_vec(), vec![3.0, 5.0]);
    }

    #[test]
    fn incompatible_stack_is_rejected() {
        let err = Sequential::new(4, vec![Layer::Dense { inputs: 5, outputs: 2 }]);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    fn check_gradients(net: &Sequential, rows: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = net.init_params(&mut rng);
        let x = Array2::from_shape_fn((rows, net.input_dim()), |_| rng.gen_range(-1.0..1.0));
        let r = Array2::from_shape_fn((rows, net.output_dim()), |_| rng.gen_range(-1.0..1.0));
        // scalar objective: <r, net(x)>
        let f = |p: &[f64], x: &Array2<f64>| (net.apply(p, x.clone()).unwrap() * &r).sum();
        let trace = net.forward(&p, x.clone()).unwrap();
        let (gp, gx) = net.backward(&p, &trace, r.clone(), true, true);
        let gx = gx.unwrap();
        let h = 1e-6;
        for i in 0..p.len() {
            let (mut a, mut b) = (p.clone(), p.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (f(&a, &x) - f(&b, &x)) / (2.0 * h);
            assert!((fd - gp[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", gp[i]);
        }
        for ((row, col), &g) in gx.indexed_iter() {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[[row, col]] += h;
            b[[row, col]] -= h;
            let fd = (f(&p, &a) - f(&p, &b)) / (2.0 * h);
            assert!((fd - g).abs() <= 1e-6 * (1.0 + fd.abs()), "input ({row},{col}): {fd} vs {g}");
        }
    }

    #[test]
    fn dense_stack_gradients_match_finite_differences() {
        let net = Sequential::new(
            5,
            vec![
                Layer::Dense { inputs: 5, outputs: 4 },
                Layer::Tanh,
                Layer::Dense { inputs: 4, outputs: 3 },
                Layer::Sigmoid,
            ],
        )
        .unwrap();
        check_gradients(&net, 3, 7);
    }

    #[test]
    fn conv_pool_stack_gradients_match_finite_differences() {
        let s = ImageShape::new(7, 7, 2);
        let c = conv_out(s, 3, 3);
        let pooled = pool_out(c);
        let net = Sequential::new(
            s.len(),
            vec![
                Layer::Conv2d { input: s, filters: 3, kernel: 3 },
                Layer::Tanh,
                Layer::MaxPool2 { input: c },
                Layer::Dense { inputs: pooled.len(), outputs: 2 },
            ],
        )
        .unwrap();
        check_gradients(&net, 2, 11);
    }

    #[test]
    fn relu_gradients_match_away_from_kinks() {
        let net = Sequential::new(
            4,
            vec![Layer::Dense { inputs: 4, outputs: 6 }, Layer::Relu, Layer::Dense { inputs: 6, outputs: 2 }],
        )
        .unwrap();
        check_gradients(&net, 2, 3);
    }
}
