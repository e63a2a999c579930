//! Radix-2 FFT with a direct-DFT fallback for other lengths, plus the 2-D
//! real-to-complex transforms used by the spectral feed-forward stage.
//!
//! Half spectra have width `W/2 + 1`. The inverse real transform treats
//! the half spectrum as the left part of a Hermitian-symmetric spectrum and
//! returns the real part, so it is well defined for any complex input.

use num_complex::Complex;

use crate::error::{Result, RstError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub type C<T> = Complex<T>;

fn twiddle<T: Scalar>(k: usize, n: usize, inverse: bool) -> C<T> {
    let sign = if inverse { 1.0 } else { -1.0 };
    let angle = sign * 2.0 * std::f64::consts::PI * k as f64 / n as f64;
    C::new(T::from_f64(angle.cos()), T::from_f64(angle.sin()))
}

/// Unnormalized in-place transform. `inverse` flips the exponent sign only.
pub fn fft_inplace<T: Scalar>(buf: &mut [C<T>], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if !n.is_power_of_two() {
        let out = dft(buf, inverse);
        buf.copy_from_slice(&out);
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let tw: Vec<C<T>> = (0..half).map(|k| twiddle(k, len, inverse)).collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * tw[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

fn dft<T: Scalar>(input: &[C<T>], inverse: bool) -> Vec<C<T>> {
    let n = input.len();
    (0..n)
        .map(|k| {
            let mut acc = C::new(T::zero(), T::zero());
            for (j, &x) in input.iter().enumerate() {
                acc = acc + x * twiddle((j * k) % n, n, inverse);
            }
            acc
        })
        .collect()
}

/// Unnormalized 2-D transform of an `h × w` row-major buffer.
pub fn fft2_inplace<T: Scalar>(buf: &mut [C<T>], h: usize, w: usize, inverse: bool) {
    debug_assert_eq!(buf.len(), h * w);
    for row in buf.chunks_mut(w) {
        fft_inplace(row, inverse);
    }
    let mut col = vec![C::new(T::zero(), T::zero()); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        fft_inplace(&mut col, inverse);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
}

pub fn half_width(w: usize) -> usize {
    w / 2 + 1
}

/// Multiplicity of half-spectrum column `v` in the full spectrum.
pub(crate) fn column_weight(v: usize, w: usize) -> usize {
    if v == 0 || (w.is_multiple_of(2) && v == w / 2) {
        1
    } else {
        2
    }
}

/// Forward real transform of one `h × w` plane into an `h × (w/2+1)` half spectrum.
pub fn rfft2_plane<T: Scalar>(x: &[T], h: usize, w: usize) -> Vec<C<T>> {
    let mut full: Vec<C<T>> = x.iter().map(|&v| C::new(v, T::zero())).collect();
    fft2_inplace(&mut full, h, w, false);
    let hw = half_width(w);
    let mut out = Vec::with_capacity(h * hw);
    for y in 0..h {
        out.extend_from_slice(&full[y * w..y * w + hw]);
    }
    out
}

/// Inverse real transform (normalized by `1/(h·w)`).
pub fn irfft2_plane<T: Scalar>(spec: &[C<T>], h: usize, w: usize) -> Vec<T> {
    let hw = half_width(w);
    debug_assert_eq!(spec.len(), h * hw);
    let mut full = vec![C::new(T::zero(), T::zero()); h * w];
    for u in 0..h {
        for v in 0..w {
            full[u * w + v] = if v < hw {
                spec[u * hw + v]
            } else {
                spec[((h - u) % h) * hw + (w - v)].conj()
            };
        }
    }
    fft2_inplace(&mut full, h, w, true);
    let norm = T::one() / T::from_usize(h * w);
    full.iter().map(|z| z.re * norm).collect()
}

/// Adjoint of [`rfft2_plane`] viewed as a real-linear map from the plane to
/// (re, im) pairs: returns `Re Σ_{u, v ≤ w/2} g[u,v]·e^{+2πi(uy/h + vx/w)}`.
pub(crate) fn rfft2_adjoint_plane<T: Scalar>(g: &[C<T>], h: usize, w: usize) -> Vec<T> {
    let hw = half_width(w);
    let mut full = vec![C::new(T::zero(), T::zero()); h * w];
    for u in 0..h {
        full[u * w..u * w + hw].copy_from_slice(&g[u * hw..u * hw + hw]);
    }
    fft2_inplace(&mut full, h, w, true);
    full.iter().map(|z| z.re).collect()
}

/// Half spectrum of a C×H×W tensor, one plane per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<C<T>>,
}

impl<T: Scalar> ComplexTensor<T> {
    pub fn half_width(&self) -> usize {
        half_width(self.width)
    }

    pub fn at(&self, c: usize, u: usize, v: usize) -> C<T> {
        let hw = self.half_width();
        self.data[(c * self.height + u) * hw + v]
    }
}

pub fn rfft2<T: Scalar>(x: &Tensor<T>) -> Result<ComplexTensor<T>> {
    let (c, h, w) = x.chw("rfft2")?;
    if h == 0 || w == 0 {
        return Err(RstError::invalid("rfft2", "empty plane"));
    }
    let mut data = Vec::with_capacity(c * h * half_width(w));
    for plane in x.data().chunks(h * w) {
        data.extend(rfft2_plane(plane, h, w));
    }
    Ok(ComplexTensor {
        channels: c,
        height: h,
        width: w,
        data,
    })
}

pub fn irfft2<T: Scalar>(spec: &ComplexTensor<T>) -> Tensor<T> {
    let (c, h, w) = (spec.channels, spec.height, spec.width);
    let mut data = Vec::with_capacity(c * h * w);
    for plane in spec.data.chunks(h * half_width(w)) {
        data.extend(irfft2_plane(plane, h, w));
    }
    Tensor::new(&[c, h, w], data).expect("irfft2 shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_plane_has_only_dc() {
        let x = Tensor::<f32>::full(&[1, 8, 8], 0.75);
        let s = rfft2(&x).unwrap();
        assert!((s.at(0, 0, 0).re - 48.0).abs() < 1e-5);
        for u in 0..8 {
            for v in 0..5 {
                if (u, v) != (0, 0) {
                    assert!(s.at(0, u, v).norm() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn single_horizontal_frequency() {
        let x = Tensor::<f64>::from_fn(&[1, 8, 8], |i| {
            (2.0 * std::f64::consts::PI * (i % 8) as f64 / 8.0).cos()
        });
        let s = rfft2(&x).unwrap();
        for u in 0..8 {
            for v in 0..5 {
                let mag = s.at(0, u, v).norm();
                if (u, v) == (0, 1) {
                    assert!((mag - 32.0).abs() < 1e-9);
                } else {
                    assert!(mag < 1e-9, "bin ({u},{v}) = {mag}");
                }
            }
        }
    }

    #[test]
    fn round_trip_power_of_two_and_fallback() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(h, w) in &[(8, 8), (16, 4), (5, 7), (6, 3), (1, 1)] {
            let x = Tensor::<f32>::uniform(&[2, h, w], -1.0, 1.0, &mut rng);
            let back = irfft2(&rfft2(&x).unwrap());
            assert!(x.max_abs_diff(&back) < 1e-6, "{h}x{w}");
        }
    }
}
