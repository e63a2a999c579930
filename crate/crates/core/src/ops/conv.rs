use std::rc::Rc;

use crate::error::{Result, RstError};
use crate::graph::{Fault, Graph, Var};
use crate::ops::linalg::{matmul, transpose};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn kernel_dims<T: Scalar>(op: &'static str, k: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    match k.shape() {
        &[a, b, kh, kw] => Ok((a, b, kh, kw)),
        s => Err(RstError::invalid(op, format!("expected a rank-4 kernel, got {s:?}"))),
    }
}

/// Output extent of a strided, zero-padded convolution along one axis.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    (stride > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

struct ConvGeom {
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn new<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        let (ci, h, w) = x.chw("conv2d")?;
        let (co, kci, kh, kw) = kernel_dims("conv2d", k)?;
        if kci != ci {
            return Err(RstError::shape("conv2d", x.shape(), k.shape()));
        }
        if stride == 0 {
            return Err(RstError::invalid("conv2d", "stride must be at least 1"));
        }
        let (Some(oh), Some(ow)) = (
            conv_out_len(h, kh, stride, pad),
            conv_out_len(w, kw, stride, pad),
        ) else {
            return Err(RstError::invalid(
                "conv2d",
                format!("kernel {kh}×{kw} larger than padded input {h}×{w} (pad {pad})"),
            ));
        };
        Ok(Self {
            ci,
            h,
            w,
            co,
            kh,
            kw,
            oh,
            ow,
            stride,
            pad,
        })
    }

    /// Calls `f(out_index, in_index, kernel_index)` for every valid tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for o in 0..self.co {
            for c in 0..self.ci {
                for i in 0..self.kh {
                    for j in 0..self.kw {
                        let kidx = ((o * self.ci + c) * self.kh + i) * self.kw + j;
                        for y in 0..self.oh {
                            let iy = (y * self.stride + i) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            let in_row = (c * self.h + iy as usize) * self.w;
                            let out_row = (o * self.oh + y) * self.ow;
                            for x in 0..self.ow {
                                let ix = (x * self.stride + j) as isize - self.pad as isize;
                                if ix < 0 || ix >= self.w as isize {
                                    continue;
                                }
                                f(out_row + x, in_row + ix as usize, kidx);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x` (C_in×H×W) with `k` (C_out×C_in×kh×kw).
pub fn conv2d<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let geo = ConvGeom::new(x, k, stride, pad)?;
    let mut out = Tensor::zeros(&[geo.co, geo.oh, geo.ow]);
    let (xd, kd) = (x.data(), k.data());
    let od = out.data_mut();
    geo.for_each_tap(|o, i, ki| od[o] += kd[ki] * xd[i]);
    Ok(out)
}

/// Transposed convolution with kernel `k` laid out C_in×C_out×kh×kw and no padding.
pub fn conv_transpose2d<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let (ci, h, w) = x.chw("conv_transpose2d")?;
    let (kci, co, kh, kw) = kernel_dims("conv_transpose2d", k)?;
    if kci != ci {
        return Err(RstError::shape("conv_transpose2d", x.shape(), k.shape()));
    }
    if h == 0 || w == 0 {
        return Err(RstError::invalid("conv_transpose2d", "zero-sized input"));
    }
    if stride == 0 {
        return Err(RstError::invalid("conv_transpose2d", "stride must be at least 1"));
    }
    let (oh, ow) = ((h - 1) * stride + kh, (w - 1) * stride + kw);
    let mut out = Tensor::zeros(&[co, oh, ow]);
    let (xd, kd) = (x.data(), k.data());
    let od = out.data_mut();
    for c in 0..ci {
        for o in 0..co {
            for i in 0..kh {
                for j in 0..kw {
                    let kv = kd[((c * co + o) * kh + i) * kw + j];
                    for y in 0..h {
                        let out_row = (o * oh + y * stride + i) * ow;
                        let in_row = (c * h + y) * w;
                        for x in 0..w {
                            od[out_row + x * stride + j] += kv * xd[in_row + x];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Bilinear read with zero outside the image, plus its partial derivatives
/// with respect to the sampling row and column.
fn bilinear<T: Scalar>(plane: &[T], h: usize, w: usize, py: T, px: T) -> (T, T, T) {
    let y0 = py.floor();
    let x0 = px.floor();
    let ly = py - y0;
    let lx = px - x0;
    let (y0, x0) = (y0.as_f64() as isize, x0.as_f64() as isize);
    let read = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            T::zero()
        } else {
            plane[y as usize * w + x as usize]
        }
    };
    let (v00, v01, v10, v11) = (read(y0, x0), read(y0, x0 + 1), read(y0 + 1, x0), read(y0 + 1, x0 + 1));
    let one = T::one();
    let val = v00 * (one - ly) * (one - lx) + v01 * (one - ly) * lx + v10 * ly * (one - lx) + v11 * ly * lx;
    let dy = (v10 - v00) * (one - lx) + (v11 - v01) * lx;
    let dx = (v01 - v00) * (one - ly) + (v11 - v10) * ly;
    (val, dy, dx)
}

fn bilinear_scatter<T: Scalar>(plane: &mut [T], h: usize, w: usize, py: T, px: T, g: T) {
    let y0 = py.floor();
    let x0 = px.floor();
    let ly = py - y0;
    let lx = px - x0;
    let (y0, x0) = (y0.as_f64() as isize, x0.as_f64() as isize);
    let one = T::one();
    let corners = [
        (y0, x0, (one - ly) * (one - lx)),
        (y0, x0 + 1, (one - ly) * lx),
        (y0 + 1, x0, ly * (one - lx)),
        (y0 + 1, x0 + 1, ly * lx),
    ];
    for (y, x, wt) in corners {
        if y >= 0 && x >= 0 && y < h as isize && x < w as isize {
            plane[y as usize * w + x as usize] += g * wt;
        }
    }
}

struct DeformGeom {
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
}

impl DeformGeom {
    fn new<T: Scalar>(x: &Tensor<T>, offsets: &Tensor<T>, k: &Tensor<T>) -> Result<Self> {
        let (ci, h, w) = x.chw("deform_conv2d")?;
        let (co, kci, kh, kw) = kernel_dims("deform_conv2d", k)?;
        if kci != ci {
            return Err(RstError::shape("deform_conv2d", x.shape(), k.shape()));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(RstError::invalid("deform_conv2d", "kernel extents must be odd"));
        }
        let expected = [2 * kh * kw, h, w];
        if offsets.shape() != expected {
            return Err(RstError::shape("deform_conv2d", offsets.shape(), &expected));
        }
        Ok(Self { ci, h, w, co, kh, kw })
    }

    fn taps(&self) -> usize {
        self.kh * self.kw
    }

    /// Sampling position of tap `t` for output pixel `p`.
    fn sample_at<T: Scalar>(&self, off: &[T], t: usize, p: usize) -> (T, T) {
        let hw = self.h * self.w;
        let (y, x) = (p / self.w, p % self.w);
        let (i, j) = (t / self.kw, t % self.kw);
        let py = T::from_usize(y + i) - T::from_usize(self.kh / 2) + off[(2 * t) * hw + p];
        let px = T::from_usize(x + j) - T::from_usize(self.kw / 2) + off[(2 * t + 1) * hw + p];
        (py, px)
    }

    /// Column matrix (C_in·taps) × (H·W) of bilinear samples.
    fn columns<T: Scalar>(&self, x: &[T], off: &[T]) -> Tensor<T> {
        let hw = self.h * self.w;
        let taps = self.taps();
        let mut col = Tensor::zeros(&[self.ci * taps, hw]);
        let cd = col.data_mut();
        for t in 0..taps {
            for p in 0..hw {
                let (py, px) = self.sample_at(off, t, p);
                for c in 0..self.ci {
                    let plane = &x[c * hw..(c + 1) * hw];
                    cd[(c * taps + t) * hw + p] = bilinear(plane, self.h, self.w, py, px).0;
                }
            }
        }
        col
    }
}

/// Deformable convolution (v1): stride 1, same padding, one offset group.
/// `offsets` holds interleaved (Δrow, Δcol) pairs per tap: shape (2·kh·kw)×H×W.
pub fn deform_conv2d<T: Scalar>(x: &Tensor<T>, offsets: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
    let geo = DeformGeom::new(x, offsets, k)?;
    let col = geo.columns(x.data(), offsets.data());
    let km = k.clone().reshape(&[geo.co, geo.ci * geo.taps()])?;
    matmul(&km, &col)?.reshape(&[geo.co, geo.h, geo.w])
}

impl<T: Scalar> Graph<T> {
    pub fn conv2d(&self, x: &Var<T>, k: &Var<T>, stride: usize, pad: usize) -> Result<Var<T>> {
        let value = conv2d(x.value(), k.value(), stride, pad)?;
        let (rx, rk) = (x.rc(), k.rc());
        let faulty = self.fault() == Some(Fault::Conv2dKernelGrad);
        Ok(self.record("conv2d", &[x, k], value, move |g, needs| {
            let geo = ConvGeom::new(&rx, &rk, stride, pad).unwrap();
            let gd = g.data();
            let gx = needs[0].then(|| {
                let mut gx = Tensor::zeros(rx.shape());
                let kd = rk.data();
                let d = gx.data_mut();
                geo.for_each_tap(|o, i, ki| d[i] += kd[ki] * gd[o]);
                gx
            });
            let gk = needs[1].then(|| {
                let mut gk = Tensor::zeros(rk.shape());
                let xd = rx.data();
                let d = gk.data_mut();
                geo.for_each_tap(|o, i, ki| d[ki] += xd[i] * gd[o]);
                if faulty {
                    d[0] = d[0] * T::from_f64(1.5) + T::from_f64(0.1);
                }
                gk
            });
            vec![gx, gk]
        }))
    }

    pub fn conv_transpose2d(&self, x: &Var<T>, k: &Var<T>, stride: usize) -> Result<Var<T>> {
        let value = conv_transpose2d(x.value(), k.value(), stride)?;
        let (rx, rk) = (x.rc(), k.rc());
        Ok(self.record("conv_transpose2d", &[x, k], value, move |g, needs| {
            let (ci, h, w) = rx.chw("conv_transpose2d").unwrap();
            let &[_, co, kh, kw] = rk.shape() else { unreachable!() };
            let ow = g.shape()[2];
            let oh = g.shape()[1];
            let (gd, xd, kd) = (g.data(), rx.data(), rk.data());
            let mut gx = needs[0].then(|| Tensor::zeros(rx.shape()));
            let mut gk = needs[1].then(|| Tensor::zeros(rk.shape()));
            for c in 0..ci {
                for o in 0..co {
                    for i in 0..kh {
                        for j in 0..kw {
                            let kidx = ((c * co + o) * kh + i) * kw + j;
                            let mut acc = T::zero();
                            for y in 0..h {
                                let out_row = (o * oh + y * stride + i) * ow;
                                let in_row = (c * h + y) * w;
                                for x in 0..w {
                                    let gv = gd[out_row + x * stride + j];
                                    if let Some(gx) = gx.as_mut() {
                                        gx.data_mut()[in_row + x] += kd[kidx] * gv;
                                    }
                                    acc += xd[in_row + x] * gv;
                                }
                            }
                            if let Some(gk) = gk.as_mut() {
                                gk.data_mut()[kidx] += acc;
                            }
                        }
                    }
                }
            }
            vec![gx, gk]
        }))
    }

    pub fn deform_conv2d(&self, x: &Var<T>, offsets: &Var<T>, k: &Var<T>) -> Result<Var<T>> {
        let geo = DeformGeom::new(x.value(), offsets.value(), k.value())?;
        let col = Rc::new(geo.columns(x.value().data(), offsets.value().data()));
        let km = k.value().clone().reshape(&[geo.co, geo.ci * geo.taps()])?;
        let value = matmul(&km, &col)?.reshape(&[geo.co, geo.h, geo.w])?;
        let (rx, ro, rk) = (x.rc(), offsets.rc(), k.rc());
        Ok(self.record("deform_conv2d", &[x, offsets, k], value, move |g, needs| {
            let hw = geo.h * geo.w;
            let taps = geo.taps();
            let g2 = g.clone().reshape(&[geo.co, hw]).unwrap();
            let gk = needs[2].then(|| {
                matmul(&g2, &transpose(&col).unwrap())
                    .unwrap()
                    .reshape(rk.shape())
                    .unwrap()
            });
            if !needs[0] && !needs[1] {
                return vec![None, None, gk];
            }
            let km = (*rk).clone().reshape(&[geo.co, geo.ci * taps]).unwrap();
            let gcol = matmul(&transpose(&km).unwrap(), &g2).unwrap();
            let gcd = gcol.data();
            let (xd, od) = (rx.data(), ro.data());
            let mut gx = needs[0].then(|| Tensor::zeros(rx.shape()));
            let mut goff = needs[1].then(|| Tensor::zeros(ro.shape()));
            for t in 0..taps {
                for p in 0..hw {
                    let (py, px) = geo.sample_at(od, t, p);
                    let mut dy = T::zero();
                    let mut dx = T::zero();
                    for c in 0..geo.ci {
                        let gv = gcd[(c * taps + t) * hw + p];
                        if let Some(gx) = gx.as_mut() {
                            let plane = &mut gx.data_mut()[c * hw..(c + 1) * hw];
                            bilinear_scatter(plane, geo.h, geo.w, py, px, gv);
                        }
                        if goff.is_some() {
                            let plane = &xd[c * hw..(c + 1) * hw];
                            let (_, sy, sx) = bilinear(plane, geo.h, geo.w, py, px);
                            dy += gv * sy;
                            dx += gv * sx;
                        }
                    }
                    if let Some(goff) = goff.as_mut() {
                        goff.data_mut()[(2 * t) * hw + p] = dy;
                        goff.data_mut()[(2 * t + 1) * hw + p] = dx;
                    }
                }
            }
            vec![gx, goff, gk]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_kernel_same_pad() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f32>::uniform(&[1, 5, 6], -1.0, 1.0, &mut rng);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.set(&[0, 0, 1, 1], 1.0);
        assert_eq!(conv2d(&x, &k, 1, 1).unwrap(), x);
    }

    #[test]
    fn ones_counts_overlaps() {
        let x = Tensor::<f32>::ones(&[1, 3, 3]);
        let k = Tensor::ones(&[1, 1, 3, 3]);
        let y = conv2d(&x, &k, 1, 1).unwrap();
        assert_eq!(y.at(&[0, 1, 1]), 9.0);
        for (r, c) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.at(&[0, r, c]), 4.0);
        }
    }

    #[test]
    fn output_extent_formula_and_oversized_kernel() {
        let x = Tensor::<f32>::zeros(&[2, 9, 7]);
        let k = Tensor::zeros(&[3, 2, 3, 3]);
        assert_eq!(conv2d(&x, &k, 2, 1).unwrap().shape(), &[3, 5, 4]);
        let big = Tensor::<f32>::zeros(&[1, 2, 5, 5]);
        let small = Tensor::zeros(&[2, 2, 2]);
        assert!(conv2d(&small, &big, 1, 0).is_err());
    }

    #[test]
    fn transpose_single_tap_spread() {
        let x = Tensor::<f32>::full(&[1, 1, 1], 2.5);
        let k = Tensor::ones(&[1, 1, 2, 2]);
        let y = conv_transpose2d(&x, &k, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 2.5));
        let z = conv_transpose2d(&Tensor::<f32>::zeros(&[2, 3, 3]), &Tensor::ones(&[2, 4, 2, 2]), 2).unwrap();
        assert_eq!(z.shape(), &[4, 6, 6]);
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(conv_transpose2d(&Tensor::<f32>::zeros(&[1, 0, 3]), &Tensor::ones(&[1, 1, 2, 2]), 2).is_err());
    }

    #[test]
    fn deform_with_zero_offsets_is_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f32>::uniform(&[3, 7, 6], -1.0, 1.0, &mut rng);
        let k = Tensor::uniform(&[5, 3, 3, 3], -1.0, 1.0, &mut rng);
        let off = Tensor::zeros(&[18, 7, 6]);
        let a = deform_conv2d(&x, &off, &k).unwrap();
        let b = conv2d(&x, &k, 1, 1).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-6);
    }

    #[test]
    fn deform_half_pixel_shift_on_ramp() {
        let x = Tensor::<f64>::from_fn(&[1, 5, 6], |i| (i % 6) as f64);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.set(&[0, 0, 1, 1], 1.0);
        let mut off = Tensor::zeros(&[18, 5, 6]);
        for t in 0..9 {
            for p in 0..30 {
                off.data_mut()[(2 * t + 1) * 30 + p] = 0.5;
            }
        }
        let y = deform_conv2d(&x, &off, &k).unwrap();
        for r in 0..5 {
            for c in 0..5 {
                assert!((y.at(&[0, r, c]) - (c as f64 + 0.5)).abs() < 1e-12);
            }
            // last column blends with the zero border
            assert!((y.at(&[0, r, 5]) - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn deform_rejects_wrong_offset_groups() {
        let x = Tensor::<f32>::zeros(&[1, 4, 4]);
        let k = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(deform_conv2d(&x, &Tensor::zeros(&[9, 4, 4]), &k).is_err());
    }
}
