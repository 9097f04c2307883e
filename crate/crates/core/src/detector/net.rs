//! Detector architectures.
//!
//! An architecture is a stateless function of a flat parameter vector. The
//! built-in `tiny-cnn` is three stride-2 3x3 convolutions (8, 16, 32
//! channels) with ReLU, global max pooling and a 2-way linear head. Max
//! pooling lets a small blending seam anywhere in the frame dominate the
//! score. `tiny-cnn-smooth` uses tanh and average pooling instead, which
//! makes it smooth everywhere.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::Image;

/// Parameter gradient and, when requested, the input gradient laid out like
/// [`Image::data`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Option<Vec<f64>>,
}

pub trait Architecture: Send + Sync {
    fn id(&self) -> &str;

    fn parameter_count(&self) -> usize;

    /// Seeded initial parameters.
    fn init(&self, seed: u64) -> Vec<f64>;

    /// Raw class scores `(real, fake)`.
    fn logits(&self, params: &[f64], image: &Image) -> [f64; 2];

    /// Gradient of `upstream[0] * logit_real + upstream[1] * logit_fake`.
    fn backward(
        &self,
        params: &[f64],
        image: &Image,
        upstream: [f64; 2],
        want_input: bool,
    ) -> Result<Gradients>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    Average,
    Max,
}

#[derive(Clone, Copy, Debug)]
struct ConvShape {
    cin: usize,
    cout: usize,
}

impl ConvShape {
    fn weights(&self) -> usize {
        self.cout * self.cin * 9
    }
}

/// Output side of a stride-2, pad-1, 3x3 convolution.
fn out_side(n: usize) -> usize {
    (n - 1) / 2 + 1
}

fn conv_forward(
    x: &[f64],
    h: usize,
    w: usize,
    shape: ConvShape,
    weights: &[f64],
    bias: &[f64],
) -> (Vec<f64>, usize, usize) {
    let (ho, wo) = (out_side(h), out_side(w));
    let mut out = vec![0.0; shape.cout * ho * wo];
    for o in 0..shape.cout {
        let plane = &mut out[o * ho * wo..(o + 1) * ho * wo];
        plane.fill(bias[o]);
        for i in 0..shape.cin {
            let xin = &x[i * h * w..(i + 1) * h * w];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wt = weights[((o * shape.cin + i) * 3 + ky) * 3 + kx];
                    for oy in 0..ho {
                        let iy = (oy * 2 + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &xin[iy as usize * w..(iy as usize + 1) * w];
                        let orow = &mut plane[oy * wo..(oy + 1) * wo];
                        for (ox, acc) in orow.iter_mut().enumerate() {
                            let ix = (ox * 2 + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                *acc += wt * row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    (out, ho, wo)
}

/// Accumulates weight/bias gradients and returns the input gradient when
/// `want_dx`.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    h: usize,
    w: usize,
    shape: ConvShape,
    weights: &[f64],
    dout: &[f64],
    dweights: &mut [f64],
    dbias: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    let (ho, wo) = (out_side(h), out_side(w));
    let mut dx = want_dx.then(|| vec![0.0; shape.cin * h * w]);
    for o in 0..shape.cout {
        let dplane = &dout[o * ho * wo..(o + 1) * ho * wo];
        dbias[o] += dplane.iter().sum::<f64>();
        for i in 0..shape.cin {
            let xin = &x[i * h * w..(i + 1) * h * w];
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((o * shape.cin + i) * 3 + ky) * 3 + kx;
                    let wt = weights[widx];
                    let mut gw = 0.0;
                    for oy in 0..ho {
                        let iy = (oy * 2 + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        let drow = &dplane[oy * wo..(oy + 1) * wo];
                        for (ox, &d) in drow.iter().enumerate() {
                            let ix = (ox * 2 + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                gw += d * xin[iy * w + ix as usize];
                                if let Some(dx) = dx.as_mut() {
                                    dx[i * h * w + iy * w + ix as usize] += d * wt;
                                }
                            }
                        }
                    }
                    dweights[widx] += gw;
                }
            }
        }
    }
    dx
}

/// Three stride-2 conv blocks, global pooling, linear 2-way head.
#[derive(Clone, Debug)]
pub struct TinyCnn {
    id: String,
    activation: Activation,
    pooling: Pooling,
    convs: [ConvShape; 3],
}

struct Layer {
    offset_w: usize,
    offset_b: usize,
}

impl TinyCnn {
    pub fn new(
        id: impl Into<String>,
        activation: Activation,
        pooling: Pooling,
        channels: [usize; 3],
    ) -> Self {
        TinyCnn {
            id: id.into(),
            activation,
            pooling,
            convs: [
                ConvShape {
                    cin: 3,
                    cout: channels[0],
                },
                ConvShape {
                    cin: channels[0],
                    cout: channels[1],
                },
                ConvShape {
                    cin: channels[1],
                    cout: channels[2],
                },
            ],
        }
    }

    /// The default detector.
    pub fn relu() -> Self {
        TinyCnn::new("tiny-cnn", Activation::Relu, Pooling::Max, [8, 16, 32])
    }

    pub fn smooth() -> Self {
        TinyCnn::new(
            "tiny-cnn-smooth",
            Activation::Tanh,
            Pooling::Average,
            [8, 16, 32],
        )
    }

    fn layers(&self) -> ([Layer; 3], usize, usize) {
        let mut off = 0;
        let layers = self.convs.map(|c| {
            let l = Layer {
                offset_w: off,
                offset_b: off + c.weights(),
            };
            off += c.weights() + c.cout;
            l
        });
        let head_w = off;
        let head_b = off + 2 * self.convs[2].cout;
        (layers, head_w, head_b)
    }

    fn to_chw(image: &Image) -> Vec<f64> {
        let (w, h) = (image.width(), image.height());
        let mut x = vec![0.0; 3 * h * w];
        for (p, px) in image.data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                x[c * h * w + p] = px[c] - 0.5;
            }
        }
        x
    }

    /// Forward pass keeping every layer's input and pre-activation.
    fn forward(&self, params: &[f64], image: &Image) -> Trace {
        let (layers, head_w, head_b) = self.layers();
        let mut x = TinyCnn::to_chw(image);
        let (mut h, mut w) = (image.height(), image.width());
        let mut steps = Vec::with_capacity(3);
        for (shape, l) in self.convs.iter().zip(&layers) {
            let (z, ho, wo) = conv_forward(
                &x,
                h,
                w,
                *shape,
                &params[l.offset_w..l.offset_b],
                &params[l.offset_b..l.offset_b + shape.cout],
            );
            let a: Vec<f64> = z.iter().map(|&v| self.activation.apply(v)).collect();
            steps.push(ConvTrace {
                input: x,
                h,
                w,
                z,
                a: a.clone(),
            });
            x = a;
            h = ho;
            w = wo;
        }
        let c3 = self.convs[2].cout;
        let area = (h * w) as f64;
        let mut argmax = Vec::new();
        let pooled: Vec<f64> = match self.pooling {
            Pooling::Average => (0..c3)
                .map(|c| x[c * h * w..(c + 1) * h * w].iter().sum::<f64>() / area)
                .collect(),
            Pooling::Max => (0..c3)
                .map(|c| {
                    let plane = &x[c * h * w..(c + 1) * h * w];
                    let i =
                        plane
                            .iter()
                            .enumerate()
                            .fold(0, |best, (i, v)| if *v > plane[best] { i } else { best });
                    argmax.push(c * h * w + i);
                    plane[i]
                })
                .collect(),
        };
        let mut logits = [params[head_b], params[head_b + 1]];
        for (k, logit) in logits.iter_mut().enumerate() {
            for (c, g) in pooled.iter().enumerate() {
                *logit += params[head_w + k * c3 + c] * g;
            }
        }
        Trace {
            steps,
            last_h: h,
            last_w: w,
            pooled,
            argmax,
            logits,
        }
    }
}

struct ConvTrace {
    input: Vec<f64>,
    h: usize,
    w: usize,
    z: Vec<f64>,
    a: Vec<f64>,
}

struct Trace {
    steps: Vec<ConvTrace>,
    last_h: usize,
    last_w: usize,
    pooled: Vec<f64>,
    /// Flat index of each channel's maximum under max pooling.
    argmax: Vec<usize>,
    logits: [f64; 2],
}

impl Architecture for TinyCnn {
    fn id(&self) -> &str {
        &self.id
    }

    fn parameter_count(&self) -> usize {
        let (_, _, head_b) = self.layers();
        head_b + 2
    }

    fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.parameter_count()];
        let (layers, head_w, head_b) = self.layers();
        let gain = match self.activation {
            Activation::Relu => 2.0,
            Activation::Tanh => 1.0,
        };
        for (shape, l) in self.convs.iter().zip(&layers) {
            let std = (gain / (shape.cin * 9) as f64).sqrt();
            let normal = Normal::new(0.0, std).unwrap();
            for p in &mut params[l.offset_w..l.offset_b] {
                *p = normal.sample(&mut rng);
            }
        }
        let std = (1.0 / self.convs[2].cout as f64).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        for p in &mut params[head_w..head_b] {
            *p = normal.sample(&mut rng);
        }
        params
    }

    fn logits(&self, params: &[f64], image: &Image) -> [f64; 2] {
        self.forward(params, image).logits
    }

    fn backward(
        &self,
        params: &[f64],
        image: &Image,
        upstream: [f64; 2],
        want_input: bool,
    ) -> Result<Gradients> {
        if params.len() != self.parameter_count() {
            return Err(Error::validation(format!(
                "{} expects {} parameters, got {}",
                self.id,
                self.parameter_count(),
                params.len()
            )));
        }
        let trace = self.forward(params, image);
        let (layers, head_w, head_b) = self.layers();
        let mut grad = vec![0.0; params.len()];
        let c3 = self.convs[2].cout;
        grad[head_b] = upstream[0];
        grad[head_b + 1] = upstream[1];
        let mut dpooled = vec![0.0; c3];
        for k in 0..2 {
            for c in 0..c3 {
                grad[head_w + k * c3 + c] = upstream[k] * trace.pooled[c];
                dpooled[c] += upstream[k] * params[head_w + k * c3 + c];
            }
        }
        let area = trace.last_h * trace.last_w;
        let mut da: Vec<f64> = match self.pooling {
            Pooling::Average => dpooled
                .iter()
                .flat_map(|&d| std::iter::repeat_n(d / area as f64, area))
                .collect(),
            Pooling::Max => {
                let mut da = vec![0.0; c3 * area];
                for (&i, &d) in trace.argmax.iter().zip(&dpooled) {
                    da[i] = d;
                }
                da
            }
        };
        let mut input_grad = None;
        for (idx, (shape, l)) in self.convs.iter().zip(&layers).enumerate().rev() {
            let st = &trace.steps[idx];
            let dz: Vec<f64> = da
                .iter()
                .zip(st.z.iter().zip(&st.a))
                .map(|(&d, (&z, &a))| d * self.activation.derivative(z, a))
                .collect();
            let (gw, gb) = grad[l.offset_w..l.offset_b + shape.cout].split_at_mut(shape.weights());
            let need_dx = idx > 0 || want_input;
            let dx = conv_backward(
                &st.input,
                st.h,
                st.w,
                *shape,
                &params[l.offset_w..l.offset_b],
                &dz,
                gw,
                gb,
                need_dx,
            );
            if idx == 0 {
                input_grad = dx;
            } else {
                da = dx.unwrap();
            }
        }
        let input = input_grad.map(|chw| {
            let (w, h) = (image.width(), image.height());
            let mut hwc = vec![0.0; chw.len()];
            for p in 0..w * h {
                for c in 0..3 {
                    hwc[p * 3 + c] = chw[c * h * w + p];
                }
            }
            hwc
        });
        Ok(Gradients {
            params: grad,
            input,
        })
    }
}

/// Architectures by id. Comes with `tiny-cnn` and `tiny-cnn-smooth`.
#[derive(Clone)]
pub struct ArchitectureRegistry {
    entries: BTreeMap<String, Arc<dyn Architecture>>,
}

impl ArchitectureRegistry {
    pub fn empty() -> Self {
        ArchitectureRegistry {
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, arch: Arc<dyn Architecture>) {
        self.entries.insert(arch.id().to_string(), arch);
    }

    pub fn get(&self, id: &str) -> Result<Arc<dyn Architecture>> {
        self.entries.get(id).cloned().ok_or_else(|| {
            Error::config(format!(
                "unknown architecture `{id}` (known: {})",
                self.entries.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

impl Default for ArchitectureRegistry {
    fn default() -> Self {
        let mut r = ArchitectureRegistry::empty();
        r.register(Arc::new(TinyCnn::relu()));
        r.register(Arc::new(TinyCnn::smooth()));
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(seed: u64, side: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(
            side,
            side,
            (0..side * side * 3).map(|_| rng.random()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn parameter_count_matches_layout() {
        let net = TinyCnn::relu();
        assert_eq!(net.parameter_count(), 224 + 1168 + 4640 + 66);
        assert_eq!(net.init(1).len(), net.parameter_count());
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let net = TinyCnn::smooth();
        let params = net.init(3);
        let img = random_image(4, 12);
        let up = [0.7, -1.3];
        let g = net.backward(&params, &img, up, false).unwrap().params;
        let score = |p: &[f64]| {
            let l = net.logits(p, &img);
            up[0] * l[0] + up[1] * l[1]
        };
        let h = 1e-5;
        for idx in (0..params.len())
            .step_by(97)
            .chain([params.len() - 1, params.len() - 3])
        {
            let mut p = params.clone();
            p[idx] += h;
            let plus = score(&p);
            p[idx] -= 2.0 * h;
            let minus = score(&p);
            let fd = (plus - minus) / (2.0 * h);
            assert!(
                (fd - g[idx]).abs() < 1e-7,
                "param {idx}: fd {fd} vs {}",
                g[idx]
            );
        }
    }

    #[test]
    fn max_pooling_routes_gradient_to_the_maximum() {
        let net = TinyCnn::relu();
        let params = net.init(8);
        let img = random_image(9, 16);
        let g = net
            .backward(&params, &img, [0.0, 1.0], false)
            .unwrap()
            .params;
        let h = 1e-7;
        for idx in (0..params.len()).step_by(53) {
            let mut p = params.clone();
            p[idx] += h;
            let plus = net.logits(&p, &img)[1];
            p[idx] -= 2.0 * h;
            let minus = net.logits(&p, &img)[1];
            let fd = (plus - minus) / (2.0 * h);
            assert!(
                (fd - g[idx]).abs() < 1e-5,
                "param {idx}: fd {fd} vs {}",
                g[idx]
            );
        }
    }

    #[test]
    fn odd_resolutions_work() {
        let net = TinyCnn::relu();
        let params = net.init(0);
        let g = net
            .backward(&params, &random_image(1, 13), [1.0, 0.0], true)
            .unwrap();
        assert_eq!(g.input.unwrap().len(), 13 * 13 * 3);
    }

    #[test]
    fn registry_lookup() {
        let r = ArchitectureRegistry::default();
        assert_eq!(r.get("tiny-cnn").unwrap().id(), "tiny-cnn");
        assert_eq!(r.get("resnet-50").err().unwrap().kind(), "config");
    }
}
