//! Forward and backward kernels for each layer kind. All activations are
//! batched: images are `[N, C, H, W]`, dense activations `[N, features]`.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

fn dims4(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => Err(Error::Shape(format!("{what}: expected NCHW, got {s:?}"))),
    }
}

fn dims2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [n, f] => Ok((n, f)),
        ref s => Err(Error::Shape(format!("{what}: expected [N, F], got {s:?}"))),
    }
}

pub fn conv_output_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || len + 2 * padding < kernel {
        return None;
    }
    Some((len + 2 * padding - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Source coordinate for output index `o` and kernel offset `kk`, if inside.
    #[inline]
    fn src(&self, o: usize, kk: usize, len: usize) -> Option<usize> {
        let pos = (o * self.stride + kk) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }
}

fn im2col(x: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let plane = g.cols();
    for ci in 0..g.c {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    match g.src(oy, ky, g.h) {
                        None => out_row.fill(0.0),
                        Some(iy) => {
                            for (ox, v) in out_row.iter_mut().enumerate() {
                                *v = g.src(ox, kx, g.w).map_or(0.0, |ix| src[iy * g.w + ix]);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let plane = g.cols();
    for ci in 0..g.c {
        let dst = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    for ox in 0..g.ow {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            dst[iy * g.w + ix] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_geom(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<(usize, usize, ConvGeom)> {
    let (n, c, h, w) = dims4(input, "conv2d input")?;
    let (o, wc, k, k2) = dims4(weight, "conv2d weight")?;
    if wc != c || k != k2 {
        return Err(Error::Shape(format!(
            "conv2d weight {:?} does not fit input {:?}",
            weight.shape(),
            input.shape()
        )));
    }
    if bias.shape() != [o] {
        return Err(Error::Shape(format!("conv2d bias {:?}, expected [{o}]", bias.shape())));
    }
    let (Some(oh), Some(ow)) = (
        conv_output_len(h, k, stride, padding),
        conv_output_len(w, k, stride, padding),
    ) else {
        return Err(Error::Shape(format!(
            "kernel {k} stride {stride} padding {padding} does not fit {h}x{w}"
        )));
    };
    Ok((
        n,
        o,
        ConvGeom {
            c,
            h,
            w,
            k,
            stride,
            pad: padding,
            oh,
            ow,
        },
    ))
}

/// Cross-correlation plus bias.
pub fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (n, o, g) = conv_geom(input, weight, bias, stride, padding)?;
    let (rows, plane) = (g.rows(), g.cols());
    let mut out = Tensor::zeros(&[n, o, g.oh, g.ow]);
    let mut cols = vec![0.0f32; rows * plane];
    let in_stride = g.c * g.h * g.w;
    for s in 0..n {
        im2col(&input.data()[s * in_stride..(s + 1) * in_stride], &g, &mut cols);
        let dst = &mut out.data_mut()[s * o * plane..(s + 1) * o * plane];
        for (oc, chunk) in dst.chunks_mut(plane).enumerate() {
            chunk.fill(bias.data()[oc]);
        }
        gemm(o, rows, plane, weight.data(), rows, 1, &cols, plane, 1, 1.0, dst);
    }
    Ok(out)
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    upstream: &Tensor,
    want_input: bool,
) -> Result<ConvGrads> {
    let (n, o, g) = conv_geom(input, weight, bias, stride, padding)?;
    if upstream.shape() != [n, o, g.oh, g.ow] {
        return Err(Error::Shape(format!(
            "conv2d upstream {:?}, expected {:?}",
            upstream.shape(),
            [n, o, g.oh, g.ow]
        )));
    }
    let (rows, plane) = (g.rows(), g.cols());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = vec![0f64; o];
    let mut dx = want_input.then(|| Tensor::zeros(input.shape()));
    let mut cols = vec![0.0f32; rows * plane];
    let mut dcols = vec![0.0f32; rows * plane];
    let in_stride = g.c * g.h * g.w;
    for s in 0..n {
        let x = &input.data()[s * in_stride..(s + 1) * in_stride];
        let dy = &upstream.data()[s * o * plane..(s + 1) * o * plane];
        im2col(x, &g, &mut cols);
        // dW += dY · colsᵀ
        gemm(o, plane, rows, dy, plane, 1, &cols, 1, plane, 1.0, dw.data_mut());
        for (oc, chunk) in dy.chunks(plane).enumerate() {
            db[oc] += chunk.iter().map(|&v| v as f64).sum::<f64>();
        }
        if let Some(dx) = dx.as_mut() {
            // dcols = Wᵀ · dY
            gemm(rows, o, plane, weight.data(), 1, rows, dy, plane, 1, 0.0, &mut dcols);
            col2im(&dcols, &g, &mut dx.data_mut()[s * in_stride..(s + 1) * in_stride]);
        }
    }
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: Tensor::from_vec(&[o], db.into_iter().map(|v| v as f32).collect())?,
    })
}

/// `y = x · Wᵀ + b` with `W` stored `[outputs, inputs]`.
pub fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, fin) = dims2(input, "dense input")?;
    let (fout, win) = dims2(weight, "dense weight")?;
    if win != fin || bias.shape() != [fout] {
        return Err(Error::Shape(format!(
            "dense weight {:?} / bias {:?} do not fit input {:?}",
            weight.shape(),
            bias.shape(),
            input.shape()
        )));
    }
    let mut out = Tensor::zeros(&[n, fout]);
    for row in out.data_mut().chunks_mut(fout) {
        row.copy_from_slice(bias.data());
    }
    gemm(n, fin, fout, input.data(), fin, 1, weight.data(), 1, fin, 1.0, out.data_mut());
    Ok(out)
}

pub struct DenseGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(input: &Tensor, weight: &Tensor, upstream: &Tensor, want_input: bool) -> Result<DenseGrads> {
    let (n, fin) = dims2(input, "dense input")?;
    let (fout, _) = dims2(weight, "dense weight")?;
    if upstream.shape() != [n, fout] {
        return Err(Error::Shape(format!(
            "dense upstream {:?}, expected [{n}, {fout}]",
            upstream.shape()
        )));
    }
    let mut dw = Tensor::zeros(weight.shape());
    gemm(fout, n, fin, upstream.data(), 1, fout, input.data(), fin, 1, 0.0, dw.data_mut());
    let mut db = vec![0f64; fout];
    for row in upstream.data().chunks(fout) {
        for (acc, &v) in db.iter_mut().zip(row) {
            *acc += v as f64;
        }
    }
    let dx = if want_input {
        let mut dx = Tensor::zeros(input.shape());
        gemm(n, fout, fin, upstream.data(), fout, 1, weight.data(), fin, 1, 0.0, dx.data_mut());
        Some(dx)
    } else {
        None
    };
    Ok(DenseGrads {
        input: dx,
        weight: dw,
        bias: Tensor::from_vec(&[fout], db.into_iter().map(|v| v as f32).collect())?,
    })
}

/// Max pooling. Returns the output and, per output element, the flat index
/// into the input of the (first) maximum.
pub fn maxpool_forward(input: &Tensor, size: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = dims4(input, "maxpool input")?;
    let (Some(oh), Some(ow)) = (conv_output_len(h, size, stride, 0), conv_output_len(w, size, stride, 0)) else {
        return Err(Error::Shape(format!("pool {size}/{stride} does not fit {h}x{w}")));
    };
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0usize; n * c * oh * ow];
    let x = input.data();
    let y = out.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..size {
                    for kx in 0..size {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                let o = (plane * oh + oy) * ow + ox;
                y[o] = x[best];
                argmax[o] = best;
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each upstream value to the input position that won the max.
pub fn maxpool_backward(input_shape: &[usize], argmax: &[usize], upstream: &Tensor) -> Result<Tensor> {
    if upstream.len() != argmax.len() {
        return Err(Error::Shape("maxpool upstream does not match cached argmax".into()));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(upstream.data()) {
        d[idx] += g;
    }
    Ok(dx)
}

pub fn leaky_relu_forward(input: &Tensor, slope: f32) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v <= 0.0 {
            *v *= slope;
        }
    }
    out
}

pub fn leaky_relu_backward(input: &Tensor, upstream: &Tensor, slope: f32) -> Result<Tensor> {
    if input.shape() != upstream.shape() {
        return Err(Error::Shape("leaky relu upstream does not match input".into()));
    }
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { g * slope })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel() {
        let x = Tensor::from_vec(&[1, 1, 3, 3], (0..9).map(|v| v as f32).collect()).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        assert_eq!(conv2d_forward(&x, &w, &b, 1, 0).unwrap().data(), x.data());
    }

    #[test]
    fn ones_kernel_on_constant_input() {
        let c = 0.7f32;
        let x = Tensor::from_vec(&[1, 1, 6, 6], vec![c; 36]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.25]).unwrap();
        let y = conv2d_forward(&x, &w, &b, 1, 1).unwrap();
        for yy in 1..5 {
            for xx in 1..5 {
                assert!((y.data()[yy * 6 + xx] - (9.0 * c + 0.25)).abs() < 1e-6);
            }
        }
        // Corners only see four input samples through the zero padding.
        assert!((y.data()[0] - (4.0 * c + 0.25)).abs() < 1e-6);
    }

    #[test]
    fn conv_output_dims() {
        assert_eq!(conv_output_len(8, 3, 1, 1), Some(8));
        assert_eq!(conv_output_len(8, 3, 2, 0), Some(3));
        assert_eq!(conv_output_len(2, 5, 1, 1), None);
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[3, 1, 3, 3]);
        assert!(conv2d_forward(&x, &w, &Tensor::zeros(&[3]), 1, 1).is_err());
    }

    #[test]
    fn leaky_relu_local_gradient() {
        let x = Tensor::from_vec(&[2], vec![-2.0, 3.0]).unwrap();
        let g = Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap();
        let d = leaky_relu_backward(&x, &g, 0.01).unwrap();
        assert_eq!(d.data(), &[0.01, 1.0]);
        assert_eq!(leaky_relu_forward(&x, 0.01).data(), &[-0.02, 3.0]);
    }

    #[test]
    fn maxpool_routes_to_argmax() {
        let x = Tensor::from_vec(&[1, 1, 2, 4], vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 7.0, 6.0]).unwrap();
        let (y, arg) = maxpool_forward(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0]);
        let up = Tensor::from_vec(&[1, 1, 1, 2], vec![10.0, 20.0]).unwrap();
        let dx = maxpool_backward(x.shape(), &arg, &up).unwrap();
        assert_eq!(dx.data(), &[0.0, 10.0, 0.0, 0.0, 0.0, 0.0, 20.0, 0.0]);
    }

    #[test]
    fn dense_known_values() {
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[3], vec![0.5, -0.5, 0.0]).unwrap();
        assert_eq!(dense_forward(&x, &w, &b).unwrap().data(), &[1.5, 1.5, 3.0]);
    }
}
