use num_complex::Complex;

use crate::error::{Result, RstError};
use crate::fft::{column_weight, half_width, irfft2_plane, rfft2_adjoint_plane, rfft2_plane};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_weight<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, patch: usize) -> Result<(usize, usize, usize)> {
    let (c, h, w) = x.chw("spectral_reweight")?;
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(RstError::invalid(
            "spectral_reweight",
            format!("{h}×{w} is not a multiple of patch {patch}"),
        ));
    }
    let expected = [c, patch, half_width(patch), 2];
    if weight.shape() != expected {
        return Err(RstError::shape("spectral_reweight", weight.shape(), &expected));
    }
    Ok((c, h, w))
}

fn read_patch<T: Scalar>(plane: &[T], w: usize, py: usize, px: usize, p: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(p * p);
    for y in 0..p {
        let row = (py * p + y) * w + px * p;
        out.extend_from_slice(&plane[row..row + p]);
    }
    out
}

fn write_patch<T: Scalar>(plane: &mut [T], w: usize, py: usize, px: usize, p: usize, src: &[T]) {
    for y in 0..p {
        let row = (py * p + y) * w + px * p;
        plane[row..row + p].copy_from_slice(&src[y * p..(y + 1) * p]);
    }
}

fn weight_bins<T: Scalar>(weight: &Tensor<T>, ch: usize, bins: usize) -> Vec<Complex<T>> {
    let wd = &weight.data()[ch * bins * 2..(ch + 1) * bins * 2];
    wd.chunks(2).map(|p| Complex::new(p[0], p[1])).collect()
}

/// Per channel and per non-overlapping `patch`×`patch` block:
/// `irfft2(weight ⊙ rfft2(block))`. `weight` is C×P×(P/2+1)×2 (re, im).
pub fn spectral_reweight<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let (c, h, w) = check_weight(x, weight, patch)?;
    let bins = patch * half_width(patch);
    let mut out = Tensor::zeros(x.shape());
    for ch in 0..c {
        let wt = weight_bins(weight, ch, bins);
        let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
        let out_plane = &mut out.data_mut()[ch * h * w..(ch + 1) * h * w];
        for py in 0..h / patch {
            for px in 0..w / patch {
                let spec = rfft2_plane(&read_patch(plane, w, py, px, patch), patch, patch);
                let prod: Vec<_> = spec.iter().zip(&wt).map(|(s, k)| s * k).collect();
                write_patch(out_plane, w, py, px, patch, &irfft2_plane(&prod, patch, patch));
            }
        }
    }
    Ok(out)
}

impl<T: Scalar> Graph<T> {
    pub fn spectral_reweight(&self, x: &Var<T>, weight: &Var<T>, patch: usize) -> Result<Var<T>> {
        let value = spectral_reweight(x.value(), weight.value(), patch)?;
        let (rx, rw) = (x.rc(), weight.rc());
        Ok(self.record("spectral_reweight", &[x, weight], value, move |g, needs| {
            let (c, h, w) = rx.chw("spectral_reweight").unwrap();
            let hwid = half_width(patch);
            let bins = patch * hwid;
            let norm = T::one() / T::from_usize(patch * patch);
            let mut gx = needs[0].then(|| Tensor::zeros(rx.shape()));
            let mut gw = needs[1].then(|| Tensor::zeros(rw.shape()));
            for ch in 0..c {
                let wt = weight_bins(&rw, ch, bins);
                let plane = &rx.data()[ch * h * w..(ch + 1) * h * w];
                let gplane = &g.data()[ch * h * w..(ch + 1) * h * w];
                for py in 0..h / patch {
                    for px in 0..w / patch {
                        let gspec = rfft2_plane(&read_patch(gplane, w, py, px, patch), patch, patch);
                        let gy: Vec<Complex<T>> = gspec
                            .iter()
                            .enumerate()
                            .map(|(i, z)| z * (norm * T::from_usize(column_weight(i % hwid, patch))))
                            .collect();
                        if let Some(gw) = gw.as_mut() {
                            let xs = rfft2_plane(&read_patch(plane, w, py, px, patch), patch, patch);
                            let gwd = &mut gw.data_mut()[ch * bins * 2..(ch + 1) * bins * 2];
                            for (i, (gyv, xv)) in gy.iter().zip(&xs).enumerate() {
                                let z = gyv * xv.conj();
                                gwd[2 * i] += z.re;
                                gwd[2 * i + 1] += z.im;
                            }
                        }
                        if let Some(gx) = gx.as_mut() {
                            let gxs: Vec<_> = gy.iter().zip(&wt).map(|(a, b)| a * b.conj()).collect();
                            let back = rfft2_adjoint_plane(&gxs, patch, patch);
                            let dst = &mut gx.data_mut()[ch * h * w..(ch + 1) * h * w];
                            write_patch(dst, w, py, px, patch, &back);
                        }
                    }
                }
            }
            vec![gx, gw]
        }))
    }

    /// |rfft2(x)| per channel over the whole plane: C×H×(W/2+1).
    pub fn rfft2_magnitude(&self, x: &Var<T>) -> Result<Var<T>> {
        let (c, h, w) = x.value().chw("rfft2_magnitude")?;
        let hwid = half_width(w);
        let mut mags = Vec::with_capacity(c * h * hwid);
        for plane in x.value().data().chunks(h * w) {
            mags.extend(rfft2_plane(plane, h, w).iter().map(|z| z.norm()));
        }
        let value = Tensor::new(&[c, h, hwid], mags)?;
        let rx = x.rc();
        Ok(self.record("rfft2_magnitude", &[x], value, move |g, _| {
            let mut gx = Tensor::zeros(&[c, h, w]);
            for ch in 0..c {
                let spec = rfft2_plane(&rx.data()[ch * h * w..(ch + 1) * h * w], h, w);
                let gs = &g.data()[ch * h * hwid..(ch + 1) * h * hwid];
                let gz: Vec<Complex<T>> = spec
                    .iter()
                    .zip(gs)
                    .map(|(z, &gv)| {
                        let n = z.norm();
                        if n > T::zero() {
                            z * (gv / n)
                        } else {
                            Complex::new(T::zero(), T::zero())
                        }
                    })
                    .collect();
                let back = rfft2_adjoint_plane(&gz, h, w);
                gx.data_mut()[ch * h * w..(ch + 1) * h * w].copy_from_slice(&back);
            }
            vec![Some(gx)]
        }))
    }
}
