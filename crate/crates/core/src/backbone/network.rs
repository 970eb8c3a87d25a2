use super::ActivationTensor;
use crate::error::{Error, Result};
use crate::numeric::{Real, SeededStream};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv {
        in_maps: usize,
        out_maps: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    #[serde(rename = "maxpool")]
    MaxPool { window: usize, stride: usize },
}

impl LayerSpec {
    pub fn conv(in_maps: usize, out_maps: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        LayerSpec::Conv {
            in_maps,
            out_maps,
            kernel,
            stride,
            pad,
        }
    }

    pub fn pool(window: usize, stride: usize) -> Self {
        LayerSpec::MaxPool { window, stride }
    }

    /// Spatial output size along one axis, `None` if the input is too small.
    pub fn output_extent(&self, input: usize) -> Option<usize> {
        match *self {
            LayerSpec::Conv {
                kernel, stride, pad, ..
            } => {
                let padded = input + 2 * pad;
                (padded >= kernel).then(|| (padded - kernel) / stride + 1)
            }
            LayerSpec::Relu => Some(input),
            LayerSpec::MaxPool { window, stride } => {
                (input >= window).then(|| (input - window) / stride + 1)
            }
        }
    }
}

/// Ordered list of layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NetSpec(pub Vec<LayerSpec>);

impl NetSpec {
    /// conv(3→8,k5,s2,p2)-relu-pool(2,2)-conv(8→16,k3,s1,p1)-relu-pool(2,2)-conv(16→32,k3,s1,p1)-relu
    pub fn tiny() -> Self {
        NetSpec(vec![
            LayerSpec::conv(3, 8, 5, 2, 2),
            LayerSpec::Relu,
            LayerSpec::pool(2, 2),
            LayerSpec::conv(8, 16, 3, 1, 1),
            LayerSpec::Relu,
            LayerSpec::pool(2, 2),
            LayerSpec::conv(16, 32, 3, 1, 1),
            LayerSpec::Relu,
        ])
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.0
    }

    pub fn validate(&self) -> Result<()> {
        let mut maps: Option<usize> = None;
        for (i, layer) in self.0.iter().enumerate() {
            match *layer {
                LayerSpec::Conv {
                    in_maps,
                    out_maps,
                    kernel,
                    stride,
                    ..
                } => {
                    if kernel == 0 || stride == 0 || in_maps == 0 || out_maps == 0 {
                        return Err(Error::Spec(format!("layer {i}: zero-sized convolution")));
                    }
                    if let Some(m) = maps {
                        if m != in_maps {
                            return Err(Error::Spec(format!(
                                "layer {i}: expects {in_maps} input maps, previous conv gives {m}"
                            )));
                        }
                    }
                    maps = Some(out_maps);
                }
                LayerSpec::MaxPool { window, stride } => {
                    if window == 0 || stride == 0 {
                        return Err(Error::Spec(format!("layer {i}: zero-sized pooling")));
                    }
                }
                LayerSpec::Relu => {}
            }
        }
        Ok(())
    }

    pub fn input_maps(&self) -> Option<usize> {
        self.0.iter().find_map(|l| match *l {
            LayerSpec::Conv { in_maps, .. } => Some(in_maps),
            _ => None,
        })
    }

    /// Number of maps of the final activation tensor, i.e. the MAC dimension.
    pub fn output_maps(&self) -> Option<usize> {
        self.0.iter().rev().find_map(|l| match *l {
            LayerSpec::Conv { out_maps, .. } => Some(out_maps),
            _ => None,
        })
    }

    pub fn conv_count(&self) -> usize {
        self.0
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. }))
            .count()
    }

    /// Output `(width, height)` after every layer for a given input size.
    pub fn output_shapes(&self, width: usize, height: usize) -> Result<Vec<(usize, usize)>> {
        let (mut w, mut h) = (width, height);
        let mut shapes = Vec::with_capacity(self.0.len());
        for (i, layer) in self.0.iter().enumerate() {
            match (layer.output_extent(w), layer.output_extent(h)) {
                (Some(nw), Some(nh)) => {
                    w = nw;
                    h = nh;
                }
                _ => {
                    return Err(Error::Shape {
                        layer: i,
                        detail: format!("{w}x{h} input too small for {layer:?}"),
                    })
                }
            }
            shapes.push((w, h));
        }
        Ok(shapes)
    }
}

/// Weights (`out×in×k×k`) and biases of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Trainable parameters, one entry per convolution in spec order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    pub convs: Vec<ConvParams<T>>,
}

impl<T: Real> NetParams<T> {
    pub fn zeros_like(spec: &NetSpec) -> Self {
        let convs = spec
            .0
            .iter()
            .filter_map(|l| match *l {
                LayerSpec::Conv {
                    in_maps,
                    out_maps,
                    kernel,
                    ..
                } => Some(ConvParams {
                    weight: vec![T::zero(); out_maps * in_maps * kernel * kernel],
                    bias: vec![T::zero(); out_maps],
                }),
                _ => None,
            })
            .collect();
        NetParams { convs }
    }

    pub fn cast<U: Real>(&self) -> NetParams<U> {
        NetParams {
            convs: self
                .convs
                .iter()
                .map(|c| ConvParams {
                    weight: c.weight.iter().map(|v| U::of(v.f64())).collect(),
                    bias: c.bias.iter().map(|v| U::of(v.f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.convs
            .iter()
            .map(|c| c.weight.len() + c.bias.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.convs.len() == other.convs.len()
            && self
                .convs
                .iter()
                .zip(&other.convs)
                .all(|(a, b)| a.weight.len() == b.weight.len() && a.bias.len() == b.bias.len())
    }

    pub fn is_finite(&self) -> bool {
        self.convs
            .iter()
            .all(|c| c.weight.iter().chain(&c.bias).all(|v| v.is_finite()))
    }

    /// `self += other` elementwise.
    pub fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.convs.iter_mut().zip(&other.convs) {
            for (x, &y) in a.weight.iter_mut().zip(&b.weight) {
                *x += y;
            }
            for (x, &y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for c in &mut self.convs {
            for v in c.weight.iter_mut().chain(c.bias.iter_mut()) {
                *v *= s;
            }
        }
    }
}

/// Glorot-uniform weights with bound `sqrt(6/(fan_in+fan_out))`, zero biases.
pub fn init_params<T: Real>(spec: &NetSpec, stream: &SeededStream) -> Result<NetParams<T>> {
    spec.validate()?;
    let mut params = NetParams::zeros_like(spec);
    let mut conv_idx = 0;
    for layer in &spec.0 {
        if let LayerSpec::Conv {
            in_maps,
            out_maps,
            kernel,
            ..
        } = *layer
        {
            let area = kernel * kernel;
            let bound = (6.0 / ((in_maps * area + out_maps * area) as f64)).sqrt();
            let mut s = stream.derive(conv_idx as u64);
            for w in &mut params.convs[conv_idx].weight {
                *w = T::of(s.uniform(-bound, bound));
            }
            conv_idx += 1;
        }
    }
    Ok(params)
}

/// Spec plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub spec: NetSpec,
    pub params: NetParams<T>,
}

#[derive(Debug, Clone)]
enum TapeEntry<T> {
    Conv { input: ActivationTensor<T> },
    Relu { output: ActivationTensor<T> },
    Pool { input_shape: (usize, usize, usize), argmax: Vec<usize> },
}

/// Intermediates cached by [`Network::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    entries: Vec<TapeEntry<T>>,
    output_shape: (usize, usize, usize),
}

impl<T: Real> Network<T> {
    pub fn new(spec: NetSpec, params: NetParams<T>) -> Result<Self> {
        spec.validate()?;
        let expected = NetParams::<T>::zeros_like(&spec);
        if !expected.same_shape(&params) {
            return Err(Error::Spec("parameter shapes do not match the layer spec".into()));
        }
        Ok(Network { spec, params })
    }

    pub fn init(spec: NetSpec, stream: &SeededStream) -> Result<Self> {
        let params = init_params(&spec, stream)?;
        Ok(Network { spec, params })
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            params: self.params.cast(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_maps().unwrap_or(0)
    }

    /// Forward pass without keeping a tape.
    pub fn infer(&self, image: &ActivationTensor<T>) -> Result<ActivationTensor<T>> {
        self.run(image, false).map(|(out, _)| out)
    }

    pub fn forward(&self, image: &ActivationTensor<T>) -> Result<(ActivationTensor<T>, Tape<T>)> {
        self.run(image, true)
    }

    fn run(
        &self,
        image: &ActivationTensor<T>,
        record: bool,
    ) -> Result<(ActivationTensor<T>, Tape<T>)> {
        if let Some(m) = self.spec.input_maps() {
            if image.maps() != m {
                return Err(Error::Shape {
                    layer: 0,
                    detail: format!("expected {m} input maps, got {}", image.maps()),
                });
            }
        }
        self.spec.output_shapes(image.width(), image.height())?;
        let mut entries = Vec::with_capacity(if record { self.spec.0.len() } else { 0 });
        let mut x = image.clone();
        let mut conv_idx = 0;
        for layer in &self.spec.0 {
            match *layer {
                LayerSpec::Conv {
                    in_maps,
                    out_maps,
                    kernel,
                    stride,
                    pad,
                } => {
                    let geom = ConvGeom {
                        in_maps,
                        out_maps,
                        kernel,
                        stride,
                        pad,
                    };
                    let y = conv_forward(&x, &self.params.convs[conv_idx], geom);
                    conv_idx += 1;
                    if record {
                        entries.push(TapeEntry::Conv { input: x });
                    }
                    x = y;
                }
                LayerSpec::Relu => {
                    for v in x.data_mut() {
                        if !(*v > T::zero()) {
                            *v = T::zero();
                        }
                    }
                    if record {
                        entries.push(TapeEntry::Relu { output: x.clone() });
                    }
                }
                LayerSpec::MaxPool { window, stride } => {
                    let (y, argmax) = pool_forward(&x, window, stride);
                    if record {
                        entries.push(TapeEntry::Pool {
                            input_shape: x.shape(),
                            argmax,
                        });
                    }
                    x = y;
                }
            }
        }
        let output_shape = x.shape();
        Ok((
            x,
            Tape {
                entries,
                output_shape,
            },
        ))
    }

    /// Gradients of `⟨output_grad, output⟩` with respect to parameters and input.
    pub fn backward(
        &self,
        tape: &Tape<T>,
        output_grad: &ActivationTensor<T>,
    ) -> Result<(NetParams<T>, ActivationTensor<T>)> {
        if tape.entries.len() != self.spec.0.len() {
            return Err(Error::Tape(format!(
                "tape has {} entries, spec has {} layers",
                tape.entries.len(),
                self.spec.0.len()
            )));
        }
        if output_grad.shape() != tape.output_shape {
            return Err(Error::Tape(format!(
                "output gradient shape {:?} differs from forward output {:?}",
                output_grad.shape(),
                tape.output_shape
            )));
        }
        let mut grads = NetParams::zeros_like(&self.spec);
        let mut g = output_grad.clone();
        let mut conv_idx = self.spec.conv_count();
        for (layer, entry) in self.spec.0.iter().zip(&tape.entries).rev() {
            match (*layer, entry) {
                (
                    LayerSpec::Conv {
                        in_maps,
                        out_maps,
                        kernel,
                        stride,
                        pad,
                    },
                    TapeEntry::Conv { input },
                ) => {
                    conv_idx -= 1;
                    let geom = ConvGeom {
                        in_maps,
                        out_maps,
                        kernel,
                        stride,
                        pad,
                    };
                    g = conv_backward(
                        input,
                        &g,
                        &self.params.convs[conv_idx],
                        &mut grads.convs[conv_idx],
                        geom,
                    );
                }
                (LayerSpec::Relu, TapeEntry::Relu { output }) => {
                    for (gv, &o) in g.data_mut().iter_mut().zip(output.data()) {
                        if !(o > T::zero()) {
                            *gv = T::zero();
                        }
                    }
                }
                (LayerSpec::MaxPool { .. }, TapeEntry::Pool { input_shape, argmax }) => {
                    let (w, h, k) = *input_shape;
                    let mut gi = ActivationTensor::zeros(w, h, k);
                    for (&src, &gv) in argmax.iter().zip(g.data()) {
                        gi.data_mut()[src] += gv;
                    }
                    g = gi;
                }
                _ => return Err(Error::Tape("layer kind mismatch".into())),
            }
        }
        Ok((grads, g))
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    in_maps: usize,
    out_maps: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

/// Output positions `o` with `0 <= o·stride + offset - pad < extent`.
#[inline]
fn valid_range(out_extent: usize, in_extent: usize, offset: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if offset >= pad {
        0
    } else {
        (pad - offset).div_ceil(stride)
    };
    // largest o with o*stride + offset - pad <= in_extent - 1
    let limit = in_extent + pad;
    let hi = if limit <= offset {
        0
    } else {
        ((limit - offset - 1) / stride + 1).min(out_extent)
    };
    (lo, hi.max(lo))
}

fn conv_forward<T: Real>(x: &ActivationTensor<T>, p: &ConvParams<T>, g: ConvGeom) -> ActivationTensor<T> {
    let (iw, ih) = (x.width(), x.height());
    let ow = (iw + 2 * g.pad - g.kernel) / g.stride + 1;
    let oh = (ih + 2 * g.pad - g.kernel) / g.stride + 1;
    let k = g.kernel;
    let mut out = ActivationTensor::zeros(ow, oh, g.out_maps);
    let (xd, od) = (x.data(), out.data_mut());
    for o in 0..g.out_maps {
        let out_map = &mut od[o * ow * oh..(o + 1) * ow * oh];
        out_map.fill(p.bias[o]);
        for c in 0..g.in_maps {
            let in_map = &xd[c * iw * ih..(c + 1) * iw * ih];
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(oh, ih, ky, g.stride, g.pad);
                for kx in 0..k {
                    let w = p.weight[((o * g.in_maps + c) * k + ky) * k + kx];
                    let (ox_lo, ox_hi) = valid_range(ow, iw, kx, g.stride, g.pad);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let in_row = &in_map[iy * iw..(iy + 1) * iw];
                        let out_row = &mut out_map[oy * ow..(oy + 1) * ow];
                        if g.stride == 1 {
                            let ix0 = ox_lo + kx - g.pad;
                            for (ov, &iv) in out_row[ox_lo..ox_hi]
                                .iter_mut()
                                .zip(&in_row[ix0..ix0 + (ox_hi - ox_lo)])
                            {
                                *ov += w * iv;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                out_row[ox] += w * in_row[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward<T: Real>(
    x: &ActivationTensor<T>,
    gout: &ActivationTensor<T>,
    p: &ConvParams<T>,
    gp: &mut ConvParams<T>,
    g: ConvGeom,
) -> ActivationTensor<T> {
    let (iw, ih) = (x.width(), x.height());
    let (ow, oh) = (gout.width(), gout.height());
    let k = g.kernel;
    let mut gin = ActivationTensor::zeros(iw, ih, g.in_maps);
    let xd = x.data();
    let gd = gout.data();
    let gid = gin.data_mut();
    for o in 0..g.out_maps {
        let gmap = &gd[o * ow * oh..(o + 1) * ow * oh];
        gp.bias[o] += gmap.iter().copied().sum::<T>();
        for c in 0..g.in_maps {
            let in_map = &xd[c * iw * ih..(c + 1) * iw * ih];
            let gin_map = &mut gid[c * iw * ih..(c + 1) * iw * ih];
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(oh, ih, ky, g.stride, g.pad);
                for kx in 0..k {
                    let widx = ((o * g.in_maps + c) * k + ky) * k + kx;
                    let w = p.weight[widx];
                    let (ox_lo, ox_hi) = valid_range(ow, iw, kx, g.stride, g.pad);
                    let mut gw = T::zero();
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &gmap[oy * ow..(oy + 1) * ow];
                        let in_row = &in_map[iy * iw..(iy + 1) * iw];
                        let gin_row = &mut gin_map[iy * iw..(iy + 1) * iw];
                        if g.stride == 1 {
                            let ix0 = ox_lo + kx - g.pad;
                            let n = ox_hi - ox_lo;
                            for ((&gv, &iv), giv) in grow[ox_lo..ox_hi]
                                .iter()
                                .zip(&in_row[ix0..ix0 + n])
                                .zip(&mut gin_row[ix0..ix0 + n])
                            {
                                gw += gv * iv;
                                *giv += w * gv;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = ox * g.stride + kx - g.pad;
                                let gv = grow[ox];
                                gw += gv * in_row[ix];
                                gin_row[ix] += w * gv;
                            }
                        }
                    }
                    gp.weight[widx] += gw;
                }
            }
        }
    }
    gin
}

fn pool_forward<T: Real>(x: &ActivationTensor<T>, window: usize, stride: usize) -> (ActivationTensor<T>, Vec<usize>) {
    let (iw, ih, maps) = x.shape();
    let ow = (iw - window) / stride + 1;
    let oh = (ih - window) / stride + 1;
    let mut out = ActivationTensor::zeros(ow, oh, maps);
    let mut argmax = vec![0usize; ow * oh * maps];
    let xd = x.data();
    for k in 0..maps {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = x.index_of(ox * stride, oy * stride, k);
                let mut best = xd[best_idx];
                for dy in 0..window {
                    for dx in 0..window {
                        let idx = x.index_of(ox * stride + dx, oy * stride + dy, k);
                        // strict comparison keeps the lowest linear index on ties
                        if xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                let oi = out.index_of(ox, oy, k);
                out.data_mut()[oi] = best;
                argmax[oi] = best_idx;
            }
        }
    }
    (out, argmax)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_brute_force() {
        for in_extent in 1..9 {
            for k in 1..6 {
                for stride in 1..4 {
                    for pad in 0..3 {
                        if in_extent + 2 * pad < k {
                            continue;
                        }
                        let out = (in_extent + 2 * pad - k) / stride + 1;
                        for off in 0..k {
                            let brute: Vec<usize> = (0..out)
                                .filter(|&o| {
                                    let i = (o * stride + off) as isize - pad as isize;
                                    i >= 0 && (i as usize) < in_extent
                                })
                                .collect();
                            let (lo, hi) = valid_range(out, in_extent, off, stride, pad);
                            assert_eq!((lo..hi).collect::<Vec<_>>(), brute);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn validate_catches_map_mismatch() {
        let spec = NetSpec(vec![LayerSpec::conv(3, 8, 3, 1, 1), LayerSpec::conv(4, 2, 1, 1, 0)]);
        assert!(matches!(spec.validate(), Err(Error::Spec(_))));
        let spec = NetSpec(vec![LayerSpec::conv(3, 8, 0, 1, 1)]);
        assert!(spec.validate().is_err());
        assert!(NetSpec::tiny().validate().is_ok());
        assert_eq!(NetSpec::tiny().output_maps(), Some(32));
    }

    #[test]
    fn tiny_shapes() {
        let shapes = NetSpec::tiny().output_shapes(96, 96).unwrap();
        assert_eq!(shapes.last(), Some(&(12, 12)));
        assert!(matches!(
            NetSpec::tiny().output_shapes(5, 96),
            Err(Error::Shape { layer: 5, .. })
        ));
    }
}
