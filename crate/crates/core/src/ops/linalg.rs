use std::rc::Rc;

use crate::error::{Result, RstError};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn dims2<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        &[m, n] => Ok((m, n)),
        s => Err(RstError::invalid(op, format!("expected a matrix, got shape {s:?}"))),
    }
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = dims2("matmul", a)?;
    let (k2, n) = dims2("matmul", b)?;
    if k != k2 {
        return Err(RstError::shape("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![T::zero(); m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            for (o, &bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = dims2("transpose", a)?;
    let d = a.data();
    Ok(Tensor::from_fn(&[n, m], |i| {
        let (r, c) = (i / m, i % m);
        d[c * n + r]
    }))
}

/// Numerically stable softmax along `axis`.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = axis_split("softmax", x.shape(), axis)?;
    let mut out = Tensor::zeros(x.shape());
    let xd = x.data();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let mut max = T::neg_infinity();
            for k in 0..len {
                max = max.max(xd[at(k)]);
            }
            let mut total = T::zero();
            for k in 0..len {
                let e = (xd[at(k)] - max).exp();
                out.data_mut()[at(k)] = e;
                total += e;
            }
            for k in 0..len {
                out.data_mut()[at(k)] /= total;
            }
        }
    }
    Ok(out)
}

fn axis_split(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(RstError::invalid(op, format!("axis {axis} out of range for {shape:?}")));
    }
    if shape[axis] == 0 {
        return Err(RstError::invalid(op, "empty axis"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

impl<T: Scalar> Graph<T> {
    pub fn matmul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let value = matmul(a.value(), b.value())?;
        let (ra, rb) = (a.rc(), b.rc());
        Ok(self.record("matmul", &[a, b], value, move |g, needs| {
            let ga = needs[0].then(|| matmul(g, &transpose(&rb).unwrap()).unwrap());
            let gb = needs[1].then(|| matmul(&transpose(&ra).unwrap(), g).unwrap());
            vec![ga, gb]
        }))
    }

    pub fn transpose(&self, a: &Var<T>) -> Result<Var<T>> {
        let value = transpose(a.value())?;
        Ok(self.record("transpose", &[a], value, |g, _| vec![Some(transpose(g).unwrap())]))
    }

    pub fn softmax(&self, x: &Var<T>, axis: usize) -> Result<Var<T>> {
        let y = Rc::new(softmax(x.value(), axis)?);
        let (outer, len, inner) = axis_split("softmax", x.shape(), axis)?;
        let saved = Rc::clone(&y);
        Ok(self.record("softmax", &[x], (*y).clone(), move |g, _| {
            let mut out = Tensor::zeros(g.shape());
            let (gd, yd) = (g.data(), saved.data());
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * len + k) * inner + i;
                    let mut dot = T::zero();
                    for k in 0..len {
                        dot += gd[at(k)] * yd[at(k)];
                    }
                    for k in 0..len {
                        out.data_mut()[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
                    }
                }
            }
            vec![Some(out)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn identity_and_selection() {
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matmul(&eye, &m).unwrap(), m);
        let r = matmul(&t(&[1, 2], &[1.0, 0.0]), &t(&[2, 1], &[5.0, 7.0])).unwrap();
        assert_eq!(r.data(), &[5.0]);
    }

    #[test]
    fn inner_dimension_mismatch() {
        assert!(matmul(&t(&[2, 3], &[0.0; 6]), &t(&[2, 2], &[0.0; 4])).is_err());
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&t(&[2], &[0.0, 0.0]), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&t(&[2], &[2f64.ln(), 0.0]), 0).unwrap();
        assert!((s.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        let s = softmax(&Tensor::<f32>::from_f64(&[2], &[1000.0, 0.0]).unwrap(), 0).unwrap();
        assert!(s.all_finite());
        assert_eq!(s.data()[0], 1.0);
        assert!(s.data()[1] < 1e-30);
        assert!(softmax(&Tensor::<f32>::zeros(&[0]), 0).is_err());
    }

    #[test]
    fn softmax_inner_axis_sums_to_one() {
        let x = Tensor::<f64>::from_fn(&[3, 4, 5], |i| ((i * 37) % 11) as f64 * 0.3 - 1.0);
        let s = softmax(&x, 1).unwrap();
        for a in 0..3 {
            for c in 0..5 {
                let total: f64 = (0..4).map(|b| s.at(&[a, b, c])).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
}
