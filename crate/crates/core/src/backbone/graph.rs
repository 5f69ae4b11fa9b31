//! Minimal inference-only convolution graph.
//!
//! Architectures are written once against [`Graph`] and run either on shapes
//! (to derive the layer list and output width) or on real tensors. Feature
//! maps are `[height, width, channels]`.

use ndarray::{Array1, Array2, Array3, ArrayView3, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

/// Shape of one convolution (+ batch-norm + ReLU) unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub padding: Padding,
}

/// Convolution with batch-norm folded into kernel scale and bias, followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    /// `[kh * kw * cin, cout]`, rows ordered (ky, kx, ci).
    pub kernel: Array2<f32>,
    pub bias: Array1<f32>,
}

pub trait Graph {
    type T;
    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, x: &Self::T, cout: usize, kh: usize, kw: usize, stride: usize, padding: Padding) -> Self::T;
    /// Max pooling, `padding = valid`.
    fn max_pool(&mut self, x: &Self::T, k: usize, stride: usize) -> Self::T;
    /// Stride-1 average pooling with `same` padding; padded cells are not counted.
    fn avg_pool_same(&mut self, x: &Self::T, k: usize) -> Self::T;
    fn concat(&mut self, xs: &[Self::T]) -> Self::T;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

fn out_len(input: usize, k: usize, stride: usize, padding: Padding) -> usize {
    match padding {
        Padding::Same => input.div_ceil(stride),
        Padding::Valid => {
            if input < k {
                0
            } else {
                (input - k) / stride + 1
            }
        }
    }
}

fn pad_before(input: usize, k: usize, stride: usize, padding: Padding) -> usize {
    match padding {
        Padding::Valid => 0,
        Padding::Same => {
            let out = input.div_ceil(stride);
            ((out - 1) * stride + k).saturating_sub(input) / 2
        }
    }
}

/// Runs an architecture on shapes, recording every convolution in order.
#[derive(Debug, Default)]
pub struct ShapeGraph {
    pub convs: Vec<ConvSpec>,
}

impl Graph for ShapeGraph {
    type T = Shape;

    fn conv(&mut self, x: &Shape, cout: usize, kh: usize, kw: usize, stride: usize, padding: Padding) -> Shape {
        self.convs.push(ConvSpec {
            kh,
            kw,
            cin: x.c,
            cout,
            stride,
            padding,
        });
        Shape {
            h: out_len(x.h, kh, stride, padding),
            w: out_len(x.w, kw, stride, padding),
            c: cout,
        }
    }

    fn max_pool(&mut self, x: &Shape, k: usize, stride: usize) -> Shape {
        Shape {
            h: out_len(x.h, k, stride, Padding::Valid),
            w: out_len(x.w, k, stride, Padding::Valid),
            c: x.c,
        }
    }

    fn avg_pool_same(&mut self, x: &Shape, _k: usize) -> Shape {
        *x
    }

    fn concat(&mut self, xs: &[Shape]) -> Shape {
        Shape {
            h: xs[0].h,
            w: xs[0].w,
            c: xs.iter().map(|s| s.c).sum(),
        }
    }
}

/// Runs an architecture on real feature maps, consuming layers in order.
pub struct RunGraph<'a> {
    layers: &'a [ConvLayer],
    cursor: usize,
}

impl<'a> RunGraph<'a> {
    pub fn new(layers: &'a [ConvLayer]) -> Self {
        RunGraph { layers, cursor: 0 }
    }

    pub fn consumed_all(&self) -> bool {
        self.cursor == self.layers.len()
    }
}

pub fn conv_forward(x: ArrayView3<'_, f32>, layer: &ConvLayer) -> Array3<f32> {
    let ConvSpec {
        kh,
        kw,
        cin,
        cout,
        stride,
        padding,
    } = layer.spec;
    let (h, w, c) = x.dim();
    assert_eq!(c, cin, "conv input channels");
    let (oh, ow) = (out_len(h, kh, stride, padding), out_len(w, kw, stride, padding));
    let (pt, pl) = (pad_before(h, kh, stride, padding), pad_before(w, kw, stride, padding));

    let mut out = if kh == 1 && kw == 1 && stride == 1 {
        let flat = x.to_shape((h * w, c)).expect("contiguous feature map");
        flat.dot(&layer.kernel)
    } else {
        let src = x.as_standard_layout();
        let src = src.as_slice().expect("standard layout");
        let cols = kh * kw * cin;
        let mut patches = vec![0f32; oh * ow * cols];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &mut patches[(oy * ow + ox) * cols..(oy * ow + ox + 1) * cols];
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pt as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pl as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let s = (iy as usize * w + ix as usize) * c;
                        let d = (ky * kw + kx) * cin;
                        row[d..d + cin].copy_from_slice(&src[s..s + c]);
                    }
                }
            }
        }
        let patches = Array2::from_shape_vec((oh * ow, cols), patches).expect("patch matrix");
        patches.dot(&layer.kernel)
    };
    out += &layer.bias;
    out.mapv_inplace(|v| v.max(0.0));
    out.into_shape_with_order((oh, ow, cout)).expect("conv output shape")
}

pub fn max_pool(x: &Array3<f32>, k: usize, stride: usize) -> Array3<f32> {
    let (h, w, c) = x.dim();
    let (oh, ow) = (out_len(h, k, stride, Padding::Valid), out_len(w, k, stride, Padding::Valid));
    let mut out = Array3::from_elem((oh, ow, c), f32::NEG_INFINITY);
    for oy in 0..oh {
        for ox in 0..ow {
            for ky in 0..k {
                for kx in 0..k {
                    let (iy, ix) = (oy * stride + ky, ox * stride + kx);
                    for ch in 0..c {
                        let v = x[[iy, ix, ch]];
                        let o = &mut out[[oy, ox, ch]];
                        if v > *o {
                            *o = v;
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn avg_pool_same(x: &Array3<f32>, k: usize) -> Array3<f32> {
    let (h, w, c) = x.dim();
    let p = pad_before(h.max(w), k, 1, Padding::Same) as isize;
    let mut out = Array3::<f32>::zeros((h, w, c));
    for oy in 0..h {
        for ox in 0..w {
            let mut n = 0u32;
            for ky in 0..k as isize {
                let iy = oy as isize + ky - p;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k as isize {
                    let ix = ox as isize + kx - p;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    n += 1;
                    for ch in 0..c {
                        out[[oy, ox, ch]] += x[[iy as usize, ix as usize, ch]];
                    }
                }
            }
            let inv = 1.0 / n as f32;
            for ch in 0..c {
                out[[oy, ox, ch]] *= inv;
            }
        }
    }
    out
}

pub fn global_avg_pool(x: &Array3<f32>) -> Vec<f32> {
    let (h, w, _) = x.dim();
    let n = (h * w) as f32;
    x.sum_axis(Axis(0)).sum_axis(Axis(0)).mapv(|v| v / n).to_vec()
}

impl Graph for RunGraph<'_> {
    type T = Array3<f32>;

    fn conv(&mut self, x: &Array3<f32>, cout: usize, kh: usize, kw: usize, stride: usize, padding: Padding) -> Array3<f32> {
        let layer = &self.layers[self.cursor];
        debug_assert_eq!(
            (layer.spec.cout, layer.spec.kh, layer.spec.kw, layer.spec.stride, layer.spec.padding),
            (cout, kh, kw, stride, padding)
        );
        self.cursor += 1;
        conv_forward(x.view(), layer)
    }

    fn max_pool(&mut self, x: &Array3<f32>, k: usize, stride: usize) -> Array3<f32> {
        max_pool(x, k, stride)
    }

    fn avg_pool_same(&mut self, x: &Array3<f32>, k: usize) -> Array3<f32> {
        avg_pool_same(x, k)
    }

    fn concat(&mut self, xs: &[Array3<f32>]) -> Array3<f32> {
        let views: Vec<_> = xs.iter().map(|a| a.view()).collect();
        ndarray::concatenate(Axis(2), &views).expect("concat spatial dims agree")
    }
}
