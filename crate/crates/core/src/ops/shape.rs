use std::rc::Rc;

use crate::error::{Result, RstError};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mirror index without repeating the edge sample; folds repeatedly so any
/// pad length works, including pads longer than the axis.
pub fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Source pixel for every position of the bottom/right reflection-padded plane.
fn reflect_map(h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<usize> {
    let mut map = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let sy = reflect_index(y, h);
        for x in 0..out_w {
            map.push(sy * w + reflect_index(x, w));
        }
    }
    map
}

pub fn reflect_pad<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw("reflect_pad")?;
    if out_h < h || out_w < w || h == 0 || w == 0 {
        return Err(RstError::invalid(
            "reflect_pad",
            format!("cannot pad {h}×{w} to {out_h}×{out_w}"),
        ));
    }
    let map = reflect_map(h, w, out_h, out_w);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for plane in x.data().chunks(h * w) {
        out.extend(map.iter().map(|&s| plane[s]));
    }
    Tensor::new(&[c, out_h, out_w], out)
}

pub fn crop<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw("crop")?;
    if out_h > h || out_w > w {
        return Err(RstError::invalid("crop", format!("cannot crop {h}×{w} to {out_h}×{out_w}")));
    }
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        for y in 0..out_h {
            let row = (ch * h + y) * w;
            out.extend_from_slice(&x.data()[row..row + out_w]);
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

/// Rows of `[n, C]` from pixels `idx` of a C×H×W tensor.
pub fn gather_tokens<T: Scalar>(x: &Tensor<T>, idx: &[usize]) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw("gather_tokens")?;
    let hw = h * w;
    if let Some(&bad) = idx.iter().find(|&&i| i >= hw) {
        return Err(RstError::invalid("gather_tokens", format!("pixel {bad} outside {h}×{w}")));
    }
    let d = x.data();
    let mut out = Vec::with_capacity(idx.len() * c);
    for &p in idx {
        out.extend((0..c).map(|ch| d[ch * hw + p]));
    }
    Tensor::new(&[idx.len(), c], out)
}

/// Inverse of [`gather_tokens`] when `idx` is a permutation of all pixels.
pub fn scatter_tokens<T: Scalar>(t: &Tensor<T>, idx: &[usize], h: usize, w: usize) -> Result<Tensor<T>> {
    let &[n, c] = t.shape() else {
        return Err(RstError::invalid("scatter_tokens", format!("expected [n, C], got {:?}", t.shape())));
    };
    let hw = h * w;
    if n != idx.len() || n != hw {
        return Err(RstError::invalid(
            "scatter_tokens",
            format!("{n} tokens for {} indices and {hw} pixels", idx.len()),
        ));
    }
    let mut out = Tensor::zeros(&[c, h, w]);
    let od = out.data_mut();
    for (r, &p) in idx.iter().enumerate() {
        for ch in 0..c {
            od[ch * hw + p] = t.data()[r * c + ch];
        }
    }
    Ok(out)
}

impl<T: Scalar> Graph<T> {
    pub fn reshape(&self, x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
        let value = x.value().clone().reshape(shape)?;
        let orig = x.shape().to_vec();
        Ok(self.record("reshape", &[x], value, move |g, _| {
            vec![Some(g.clone().reshape(&orig).unwrap())]
        }))
    }

    pub fn reflect_pad(&self, x: &Var<T>, out_h: usize, out_w: usize) -> Result<Var<T>> {
        let value = reflect_pad(x.value(), out_h, out_w)?;
        let (c, h, w) = x.value().chw("reflect_pad")?;
        let map = reflect_map(h, w, out_h, out_w);
        Ok(self.record("reflect_pad", &[x], value, move |g, _| {
            let mut gx = Tensor::zeros(&[c, h, w]);
            let plane_out = out_h * out_w;
            for ch in 0..c {
                let src = &g.data()[ch * plane_out..(ch + 1) * plane_out];
                let dst = &mut gx.data_mut()[ch * h * w..(ch + 1) * h * w];
                for (&s, &gv) in map.iter().zip(src) {
                    dst[s] += gv;
                }
            }
            vec![Some(gx)]
        }))
    }

    pub fn crop(&self, x: &Var<T>, out_h: usize, out_w: usize) -> Result<Var<T>> {
        let value = crop(x.value(), out_h, out_w)?;
        let (c, h, w) = x.value().chw("crop")?;
        Ok(self.record("crop", &[x], value, move |g, _| {
            let mut gx = Tensor::zeros(&[c, h, w]);
            for ch in 0..c {
                for y in 0..out_h {
                    let src = (ch * out_h + y) * out_w;
                    let dst = (ch * h + y) * w;
                    gx.data_mut()[dst..dst + out_w].copy_from_slice(&g.data()[src..src + out_w]);
                }
            }
            vec![Some(gx)]
        }))
    }

    pub fn gather_tokens(&self, x: &Var<T>, idx: Rc<Vec<usize>>) -> Result<Var<T>> {
        let value = gather_tokens(x.value(), &idx)?;
        let (c, h, w) = x.value().chw("gather_tokens")?;
        Ok(self.record("gather_tokens", &[x], value, move |g, _| {
            let hw = h * w;
            let mut gx = Tensor::zeros(&[c, h, w]);
            let d = gx.data_mut();
            for (r, &p) in idx.iter().enumerate() {
                for ch in 0..c {
                    d[ch * hw + p] += g.data()[r * c + ch];
                }
            }
            vec![Some(gx)]
        }))
    }

    pub fn scatter_tokens(&self, t: &Var<T>, idx: Rc<Vec<usize>>, h: usize, w: usize) -> Result<Var<T>> {
        let value = scatter_tokens(t.value(), &idx, h, w)?;
        Ok(self.record("scatter_tokens", &[t], value, move |g, _| {
            vec![Some(gather_tokens(g, &idx).unwrap())]
        }))
    }

    /// Concatenates `[n_i, d]` matrices along rows.
    pub fn concat_rows(&self, parts: &[Var<T>]) -> Result<Var<T>> {
        let Some(first) = parts.first() else {
            return Err(RstError::invalid("concat_rows", "no inputs"));
        };
        let d = *first.shape().last().unwrap_or(&0);
        let mut rows = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for p in parts {
            match p.shape() {
                &[n, pd] if pd == d => {
                    rows.push(n);
                    data.extend_from_slice(p.value().data());
                }
                s => return Err(RstError::shape("concat_rows", first.shape(), s)),
            }
        }
        let total: usize = rows.iter().sum();
        let refs: Vec<&Var<T>> = parts.iter().collect();
        Ok(self.record("concat_rows", &refs, Tensor::new(&[total, d], data)?, move |g, _| {
            let mut start = 0;
            rows.iter()
                .map(|&n| {
                    let part = g.data()[start * d..(start + n) * d].to_vec();
                    start += n;
                    Some(Tensor::new(&[n, d], part).unwrap())
                })
                .collect()
        }))
    }

    pub fn slice_cols(&self, x: &Var<T>, start: usize, len: usize) -> Result<Var<T>> {
        let &[n, d] = x.shape() else {
            return Err(RstError::invalid("slice_cols", format!("expected a matrix, got {:?}", x.shape())));
        };
        if start + len > d {
            return Err(RstError::invalid("slice_cols", format!("columns {start}..{} of {d}", start + len)));
        }
        let src = x.value().data();
        let value = Tensor::from_fn(&[n, len], |i| src[(i / len) * d + start + i % len]);
        Ok(self.record("slice_cols", &[x], value, move |g, _| {
            let mut gx = Tensor::zeros(&[n, d]);
            for r in 0..n {
                for k in 0..len {
                    gx.data_mut()[r * d + start + k] = g.data()[r * len + k];
                }
            }
            vec![Some(gx)]
        }))
    }

    pub fn concat_cols(&self, parts: &[Var<T>]) -> Result<Var<T>> {
        let Some(first) = parts.first() else {
            return Err(RstError::invalid("concat_cols", "no inputs"));
        };
        let n = first.shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            match p.shape() {
                &[pn, pd] if pn == n => widths.push(pd),
                s => return Err(RstError::shape("concat_cols", first.shape(), s)),
            }
        }
        let d: usize = widths.iter().sum();
        let mut out = Tensor::zeros(&[n, d]);
        let mut off = 0;
        for (p, &pw) in parts.iter().zip(&widths) {
            for r in 0..n {
                out.data_mut()[r * d + off..r * d + off + pw]
                    .copy_from_slice(&p.value().data()[r * pw..(r + 1) * pw]);
            }
            off += pw;
        }
        let refs: Vec<&Var<T>> = parts.iter().collect();
        Ok(self.record("concat_cols", &refs, out, move |g, _| {
            let mut off = 0;
            widths
                .iter()
                .map(|&pw| {
                    let t = Tensor::from_fn(&[n, pw], |i| g.data()[(i / pw) * d + off + i % pw]);
                    off += pw;
                    Some(t)
                })
                .collect()
        }))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&self, parts: &[Var<T>]) -> Result<Var<T>> {
        let Some(first) = parts.first() else {
            return Err(RstError::invalid("stack", "no inputs"));
        };
        let inner = first.shape().to_vec();
        let mut data = Vec::with_capacity(parts.len() * first.value().numel());
        for p in parts {
            if p.shape() != inner.as_slice() {
                return Err(RstError::shape("stack", &inner, p.shape()));
            }
            data.extend_from_slice(p.value().data());
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&inner);
        let refs: Vec<&Var<T>> = parts.iter().collect();
        let m = first.value().numel();
        Ok(self.record("stack", &refs, Tensor::new(&shape, data)?, move |g, _| {
            g.data()
                .chunks(m)
                .map(|c| Some(Tensor::new(&inner, c.to_vec()).unwrap()))
                .collect()
        }))
    }
}
