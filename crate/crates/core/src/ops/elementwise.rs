use crate::error::{Result, RstError};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::{broadcast_index_map, broadcast_shape, reduce_to_shape, Tensor};

const GELU_CUBIC: f64 = 0.044715;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

impl BinaryOp {
    fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
        }
    }
}

pub fn binary<T: Scalar>(op: BinaryOp, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = broadcast_shape(op.name(), a.shape(), b.shape())?;
    let f = |x: T, y: T| match op {
        BinaryOp::Add => x + y,
        BinaryOp::Sub => x - y,
        BinaryOp::Mul => x * y,
    };
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(&shape, data);
    }
    let ma = broadcast_index_map(a.shape(), &shape);
    let mb = broadcast_index_map(b.shape(), &shape);
    let data = ma
        .iter()
        .zip(&mb)
        .map(|(&i, &j)| f(a.data()[i], b.data()[j]))
        .collect();
    Tensor::new(&shape, data)
}

pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let k = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let c = T::from_f64(GELU_CUBIC);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (k * (x + c * x * x * x)).tanh())
}

fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let k = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let c = T::from_f64(GELU_CUBIC);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + three * c * x * x)
}

/// Normalizes across axis 0 independently at every position of the trailing axes.
pub fn layer_norm_axis0<T: Scalar>(x: &Tensor<T>, eps: f64) -> Result<(Tensor<T>, Vec<T>)> {
    if x.rank() == 0 || x.shape()[0] == 0 {
        return Err(RstError::invalid("layer_norm", "empty channel axis"));
    }
    let c = x.shape()[0];
    let p = x.numel() / c;
    let eps = T::from_f64(eps);
    let cn = T::from_usize(c);
    let mut out = Tensor::zeros(x.shape());
    let mut inv_std = vec![T::zero(); p];
    let xd = x.data();
    for pos in 0..p {
        let mut mean = T::zero();
        for ch in 0..c {
            mean += xd[ch * p + pos];
        }
        mean /= cn;
        let mut var = T::zero();
        for ch in 0..c {
            let d = xd[ch * p + pos] - mean;
            var += d * d;
        }
        var /= cn;
        let r = T::one() / (var + eps).sqrt();
        inv_std[pos] = r;
        for ch in 0..c {
            out.data_mut()[ch * p + pos] = (xd[ch * p + pos] - mean) * r;
        }
    }
    Ok((out, inv_std))
}

impl<T: Scalar> Graph<T> {
    fn binary_op(&self, op: BinaryOp, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let value = binary(op, a.value(), b.value())?;
        let (ra, rb) = (a.rc(), b.rc());
        Ok(self.record(op.name(), &[a, b], value, move |g, needs| {
            let ga = needs[0].then(|| {
                let full = match op {
                    BinaryOp::Mul => binary(BinaryOp::Mul, g, &rb).unwrap(),
                    _ => g.clone(),
                };
                reduce_to_shape(&full, ra.shape())
            });
            let gb = needs[1].then(|| {
                let full = match op {
                    BinaryOp::Add => g.clone(),
                    BinaryOp::Sub => g.map(|v| -v),
                    BinaryOp::Mul => binary(BinaryOp::Mul, g, &ra).unwrap(),
                };
                reduce_to_shape(&full, rb.shape())
            });
            vec![ga, gb]
        }))
    }

    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.binary_op(BinaryOp::Add, a, b)
    }

    pub fn sub(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.binary_op(BinaryOp::Sub, a, b)
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.binary_op(BinaryOp::Mul, a, b)
    }

    pub fn scale(&self, a: &Var<T>, s: T) -> Var<T> {
        self.record("scale", &[a], a.value().scaled(s), move |g, _| vec![Some(g.scaled(s))])
    }

    pub fn gelu(&self, a: &Var<T>) -> Var<T> {
        let x = a.rc();
        self.record("gelu", &[a], a.value().map(gelu_scalar), move |g, _| {
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .map(|(&gv, &xv)| gv * gelu_grad_scalar(xv))
                .collect();
            vec![Some(Tensor::new(g.shape(), data).unwrap())]
        })
    }

    pub fn abs(&self, a: &Var<T>) -> Var<T> {
        let x = a.rc();
        self.record("abs", &[a], a.value().map(|v| v.abs()), move |g, _| {
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .map(|(&gv, &xv)| {
                    if xv > T::zero() {
                        gv
                    } else if xv < T::zero() {
                        -gv
                    } else {
                        T::zero()
                    }
                })
                .collect();
            vec![Some(Tensor::new(g.shape(), data).unwrap())]
        })
    }

    /// Channel-axis layer normalization without affine terms.
    pub fn layer_norm(&self, a: &Var<T>, eps: f64) -> Result<Var<T>> {
        let (y, inv_std) = layer_norm_axis0(a.value(), eps)?;
        let y_saved = std::rc::Rc::new(y.clone());
        let c = a.shape()[0];
        Ok(self.record("layer_norm", &[a], y, move |g, _| {
            let p = g.numel() / c;
            let cn = T::from_usize(c);
            let (gd, yd) = (g.data(), y_saved.data());
            let mut out = Tensor::zeros(g.shape());
            for pos in 0..p {
                let mut mg = T::zero();
                let mut mgy = T::zero();
                for ch in 0..c {
                    mg += gd[ch * p + pos];
                    mgy += gd[ch * p + pos] * yd[ch * p + pos];
                }
                mg /= cn;
                mgy /= cn;
                for ch in 0..c {
                    let i = ch * p + pos;
                    out.data_mut()[i] = inv_std[pos] * (gd[i] - mg - yd[i] * mgy);
                }
            }
            vec![Some(out)]
        }))
    }

    pub fn sum(&self, a: &Var<T>) -> Var<T> {
        let shape = a.shape().to_vec();
        self.record("sum", &[a], Tensor::scalar(a.value().sum()), move |g, _| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean(&self, a: &Var<T>) -> Var<T> {
        let n = T::from_usize(a.value().numel().max(1));
        let s = self.sum(a);
        self.scale(&s, T::one() / n)
    }

    /// Sum over axis 0: `[n, rest..] -> [rest..]`.
    pub fn sum_axis0(&self, a: &Var<T>) -> Result<Var<T>> {
        if a.value().rank() == 0 {
            return Err(RstError::invalid("sum_axis0", "rank-0 input"));
        }
        let n = a.shape()[0];
        let rest: Vec<usize> = a.shape()[1..].to_vec();
        let p: usize = rest.iter().product();
        let mut out = Tensor::zeros(&rest);
        for k in 0..n {
            for (o, &v) in out.data_mut().iter_mut().zip(&a.value().data()[k * p..(k + 1) * p]) {
                *o += v;
            }
        }
        let full = a.shape().to_vec();
        Ok(self.record("sum_axis0", &[a], out, move |g, _| {
            let mut gi = Tensor::zeros(&full);
            for chunk in gi.data_mut().chunks_mut(p) {
                chunk.copy_from_slice(g.data());
            }
            vec![Some(gi)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn add_and_identity_mul() {
        let g = Graph::<f32>::no_grad();
        let a = g.constant(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
        let b = g.constant(Tensor::from_f64(&[2], &[3.0, 4.0]).unwrap());
        assert_eq!(g.add(&a, &b).unwrap().value().data(), &[4.0, 6.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = g.constant(Tensor::uniform(&[3, 5], -2.0, 2.0, &mut rng));
        let ones = g.constant(Tensor::ones(&[3, 5]));
        assert_eq!(g.mul(&x, &ones).unwrap().value(), x.value());
    }

    #[test]
    fn shape_error_names_both_shapes() {
        let g = Graph::<f32>::no_grad();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4]));
        let msg = g.add(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4]"), "{msg}");
    }

    #[test]
    fn layer_norm_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::<f32>::uniform(&[4, 8], -3.0, 3.0, &mut rng);
        let (y, _) = layer_norm_axis0(&x, 1e-6).unwrap();
        for pos in 0..8 {
            let vals: Vec<f64> = (0..4).map(|c| y.at(&[c, pos]) as f64).collect();
            let mean = vals.iter().sum::<f64>() / 4.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() <= 1e-6, "mean {mean}");
            assert!((var - 1.0).abs() <= 1e-5, "var {var}");
        }
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu_scalar(0.0f64), 0.0);
        // tanh-approximation value at 1.0
        assert!((gelu_scalar(1.0f64) - 0.841_191_990_607_477_1).abs() < 1e-12);
    }
}
