//! Reverse-mode differentiation over (channels, positions) tensors.
//!
//! The tape records every forward operation in creation order, which is
//! already a topological order, so the backward pass is one reverse sweep.
//! Only the operations the forecasting networks need are supported.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::ops::{conv_backward, conv_forward, sigmoid};
use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor2;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`GradientTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Conv {
        x: usize,
        w: usize,
        b: Option<usize>,
        width: usize,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    OneMinus(usize),
    Concat(Vec<usize>),
    SliceRows { src: usize, start: usize },
    SliceCols { src: usize, start: usize },
    RowAffine { src: usize, scale: Vec<f64> },
    Mse { pred: usize, target: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug)]
pub struct GradientTape {
    id: u64,
    nodes: Vec<Node>,
    params: HashMap<ParamId, usize>,
}

impl Default for GradientTape {
    fn default() -> Self {
        Self::new()
    }
}

impl GradientTape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Usage("variable does not belong to this tape".into()));
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor2, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.index].value;
        (t.channels(), t.positions())
    }

    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Records a parameter as a 2D leaf (`rows x rest`), once per tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&i) = self.params.get(&id) {
            return Var {
                tape: self.id,
                index: i,
            };
        }
        let p = store.get(id);
        let rows = p.shape.first().copied().unwrap_or(1).max(1);
        let cols = p.len() / rows;
        let value = Tensor2::from_vec(rows, cols.max(1), p.data.clone())
            .expect("parameter shapes are validated on insertion");
        let v = self.push(value, Op::Param(id), true);
        self.params.insert(id, v.index);
        v
    }

    /// Same-padded convolution; `w` is `(out, in * width)`, `b` is `(out, 1)`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, width: usize) -> Result<Var> {
        let (xi, wi) = (self.check(x)?, self.check(w)?);
        let bi = b.map(|b| self.check(b)).transpose()?;
        if width % 2 == 0 {
            return Err(Error::Config(format!("kernel width must be odd, got {width}")));
        }
        let (cin, len) = self.shape(x);
        let (cout, wcols) = self.shape(w);
        if wcols != cin * width {
            return Err(Error::dim(format!(
                "conv kernel expects {} input channels, got {cin}",
                wcols / width
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != (cout, 1) {
                return Err(Error::dim("conv bias must be (out_channels, 1)"));
            }
        }
        let mut out = vec![0.0; cout * len];
        conv_forward(
            self.nodes[xi].value.data(),
            cin,
            len,
            self.nodes[wi].value.data(),
            cout,
            width,
            bi.map(|i| self.nodes[i].value.data()),
            &mut out,
        );
        let needs = self.needs(xi) || self.needs(wi) || bi.is_some_and(|i| self.needs(i));
        let value = Tensor2::from_vec(cout, len, out)?;
        Ok(self.push(
            value,
            Op::Conv {
                x: xi,
                w: wi,
                b: bi,
                width,
            },
            needs,
        ))
    }

    /// Position-wise dense layer: a width-1 convolution.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.conv1d(x, w, b, 1)
    }

    fn binary(&mut self, a: Var, b: Var, name: &str) -> Result<(usize, usize)> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{name}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok((ai, bi))
    }

    fn zip_with(&self, a: usize, b: usize, f: impl Fn(f64, f64) -> f64) -> Tensor2 {
        let (x, y) = (&self.nodes[a].value, &self.nodes[b].value);
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor2::from_vec(x.channels(), x.positions(), data).expect("congruent operands")
    }

    fn map(&self, a: usize, f: impl Fn(f64) -> f64) -> Tensor2 {
        let x = &self.nodes[a].value;
        let data = x.data().iter().map(|&p| f(p)).collect();
        Tensor2::from_vec(x.channels(), x.positions(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = self.binary(a, b, "add")?;
        let v = self.zip_with(ai, bi, |p, q| p + q);
        let needs = self.needs(ai) || self.needs(bi);
        Ok(self.push(v, Op::Add(ai, bi), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = self.binary(a, b, "sub")?;
        let v = self.zip_with(ai, bi, |p, q| p - q);
        let needs = self.needs(ai) || self.needs(bi);
        Ok(self.push(v, Op::Sub(ai, bi), needs))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = self.binary(a, b, "mul")?;
        let v = self.zip_with(ai, bi, |p, q| p * q);
        let needs = self.needs(ai) || self.needs(bi);
        Ok(self.push(v, Op::Mul(ai, bi), needs))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let v = self.map(ai, sigmoid);
        let needs = self.needs(ai);
        Ok(self.push(v, Op::Sigmoid(ai), needs))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let v = self.map(ai, f64::tanh);
        let needs = self.needs(ai);
        Ok(self.push(v, Op::Tanh(ai), needs))
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let v = self.map(ai, |p| 1.0 - p);
        let needs = self.needs(ai);
        Ok(self.push(v, Op::OneMinus(ai), needs))
    }

    /// Stack along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts
            .iter()
            .map(|&p| self.check(p))
            .collect::<Result<Vec<_>>>()?;
        let first = *idx
            .first()
            .ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
        let len = self.nodes[first].value.positions();
        if idx.iter().any(|&i| self.nodes[i].value.positions() != len) {
            return Err(Error::dim("concat: position counts differ"));
        }
        let channels = idx.iter().map(|&i| self.nodes[i].value.channels()).sum();
        let mut data = Vec::with_capacity(channels * len);
        for &i in &idx {
            data.extend_from_slice(self.nodes[i].value.data());
        }
        let needs = idx.iter().any(|&i| self.needs(i));
        let value = Tensor2::from_vec(channels, len, data)?;
        Ok(self.push(value, Op::Concat(idx), needs))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let ai = self.check(a)?;
        let (c, len) = self.shape(a);
        if count == 0 || start + count > c {
            return Err(Error::dim(format!("rows {start}..{} out of {c}", start + count)));
        }
        let data = self.nodes[ai].value.data()[start * len..(start + count) * len].to_vec();
        let needs = self.needs(ai);
        let value = Tensor2::from_vec(count, len, data)?;
        Ok(self.push(value, Op::SliceRows { src: ai, start }, needs))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let ai = self.check(a)?;
        let (c, len) = self.shape(a);
        if count == 0 || start + count > len {
            return Err(Error::dim(format!(
                "columns {start}..{} out of {len}",
                start + count
            )));
        }
        if start == 0 && count == len {
            return Ok(a);
        }
        let src = &self.nodes[ai].value;
        let mut data = Vec::with_capacity(c * count);
        for r in 0..c {
            data.extend_from_slice(&src.row(r)[start..start + count]);
        }
        let needs = self.needs(ai);
        let value = Tensor2::from_vec(c, count, data)?;
        Ok(self.push(value, Op::SliceCols { src: ai, start }, needs))
    }

    /// `out[c, l] = a[c, l] * scale[c] + shift[c]` with fixed scale and shift.
    pub fn row_affine(&mut self, a: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let ai = self.check(a)?;
        let (c, len) = self.shape(a);
        if scale.len() != c || shift.len() != c {
            return Err(Error::dim("row_affine: coefficient count != channels"));
        }
        let src = &self.nodes[ai].value;
        let mut data = Vec::with_capacity(c * len);
        for r in 0..c {
            data.extend(src.row(r).iter().map(|&v| v * scale[r] + shift[r]));
        }
        let needs = self.needs(ai);
        let value = Tensor2::from_vec(c, len, data)?;
        Ok(self.push(
            value,
            Op::RowAffine {
                src: ai,
                scale: scale.to_vec(),
            },
            needs,
        ))
    }

    /// Mean squared error as a 1x1 node.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (pi, ti) = self.binary(pred, target, "mse")?;
        let value = super::ops::mse_slices(self.nodes[pi].value.data(), self.nodes[ti].value.data());
        let needs = self.needs(pi) || self.needs(ti);
        Ok(self.push(
            Tensor2::filled(1, 1, value),
            Op::Mse {
                pred: pi,
                target: ti,
            },
            needs,
        ))
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.index].value.data()[0]
    }

    /// Gradients of the scalar `loss` with respect to every parameter in `store`.
    ///
    /// Parameters that never reached the tape get zero gradients.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        let li = self.check(loss)?;
        if self.shape(loss) != (1, 1) {
            return Err(Error::Usage("backward needs a scalar (1x1) loss".into()));
        }
        let mut out = Gradients::zeros_like(store);
        let mut grads: Vec<Option<Vec<f64>>> = (0..=li).map(|_| None).collect();
        grads[li] = Some(vec![1.0]);

        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    if id.index() >= out.len() {
                        return Err(Error::Usage(format!(
                            "tape parameter {} is not in the given store",
                            id.index()
                        )));
                    }
                    for (a, b) in out.get_mut(*id).iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                &Op::Conv { x, w, b, width } => {
                    let (cin, len) = (self.nodes[x].value.channels(), self.nodes[x].value.positions());
                    let cout = node.value.channels();
                    let mut dx = self.needs(x).then(|| vec![0.0; cin * len]);
                    let mut dw = self.needs(w).then(|| vec![0.0; self.nodes[w].value.data().len()]);
                    let mut db = b.filter(|&b| self.needs(b)).map(|_| vec![0.0; cout]);
                    conv_backward(
                        self.nodes[x].value.data(),
                        cin,
                        len,
                        self.nodes[w].value.data(),
                        cout,
                        width,
                        &g,
                        dx.as_deref_mut(),
                        dw.as_deref_mut(),
                        db.as_deref_mut(),
                    );
                    accumulate_opt(&mut grads, x, dx);
                    accumulate_opt(&mut grads, w, dw);
                    if let Some(b) = b {
                        accumulate_opt(&mut grads, b, db);
                    }
                }
                &Op::Add(a, b) => {
                    if self.needs(a) {
                        accumulate(&mut grads, a, &g);
                    }
                    if self.needs(b) {
                        accumulate(&mut grads, b, &g);
                    }
                }
                &Op::Sub(a, b) => {
                    if self.needs(a) {
                        accumulate(&mut grads, a, &g);
                    }
                    if self.needs(b) {
                        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                        accumulate(&mut grads, b, &neg);
                    }
                }
                &Op::Mul(a, b) => {
                    if self.needs(a) {
                        let d: Vec<f64> = g
                            .iter()
                            .zip(self.nodes[b].value.data())
                            .map(|(g, y)| g * y)
                            .collect();
                        accumulate(&mut grads, a, &d);
                    }
                    if self.needs(b) {
                        let d: Vec<f64> = g
                            .iter()
                            .zip(self.nodes[a].value.data())
                            .map(|(g, x)| g * x)
                            .collect();
                        accumulate(&mut grads, b, &d);
                    }
                }
                &Op::Sigmoid(a) => {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, s)| g * s * (1.0 - s))
                        .collect();
                    accumulate(&mut grads, a, &d);
                }
                &Op::Tanh(a) => {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, t)| g * (1.0 - t * t))
                        .collect();
                    accumulate(&mut grads, a, &d);
                }
                &Op::OneMinus(a) => {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(&mut grads, a, &neg);
                }
                Op::Concat(parts) => {
                    let len = node.value.positions();
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.nodes[p].value.channels() * len;
                        if self.needs(p) {
                            accumulate(&mut grads, p, &g[offset..offset + n]);
                        }
                        offset += n;
                    }
                }
                &Op::SliceRows { src, start } => {
                    let len = node.value.positions();
                    let total = self.nodes[src].value.data().len();
                    let slot = grads[src].get_or_insert_with(|| vec![0.0; total]);
                    for (a, b) in slot[start * len..].iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                &Op::SliceCols { src, start } => {
                    let (c, count) = (node.value.channels(), node.value.positions());
                    let full = self.nodes[src].value.positions();
                    let total = self.nodes[src].value.data().len();
                    let slot = grads[src].get_or_insert_with(|| vec![0.0; total]);
                    for r in 0..c {
                        let dst = &mut slot[r * full + start..r * full + start + count];
                        for (a, b) in dst.iter_mut().zip(&g[r * count..(r + 1) * count]) {
                            *a += b;
                        }
                    }
                }
                Op::RowAffine { src, scale } => {
                    let len = node.value.positions();
                    let d: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(k, gv)| gv * scale[k / len])
                        .collect();
                    accumulate(&mut grads, *src, &d);
                }
                &Op::Mse { pred, target } => {
                    let p = self.nodes[pred].value.data();
                    let t = self.nodes[target].value.data();
                    let k = 2.0 * g[0] / p.len() as f64;
                    let d: Vec<f64> = p.iter().zip(t).map(|(p, t)| k * (p - t)).collect();
                    if self.needs(pred) {
                        accumulate(&mut grads, pred, &d);
                    }
                    if self.needs(target) {
                        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
                        accumulate(&mut grads, target, &neg);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    match &mut grads[i] {
        Some(slot) => {
            for (a, b) in slot.iter_mut().zip(g) {
                *a += b;
            }
        }
        empty => *empty = Some(g.to_vec()),
    }
}

fn accumulate_opt(grads: &mut [Option<Vec<f64>>], i: usize, g: Option<Vec<f64>>) {
    if let Some(g) = g {
        match &mut grads[i] {
            Some(slot) => {
                for (a, b) in slot.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            empty => *empty = Some(g),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_chain_rule() {
        // loss = (w x + b - y)^2 with everything 1x1
        let mut store = ParamStore::new();
        let w = store.add("w", vec![1, 1], vec![0.7]).unwrap();
        let b = store.add("b", vec![1, 1], vec![-0.2]).unwrap();
        let (x, y) = (1.3, 0.4);
        let mut tape = GradientTape::new();
        let xv = tape.constant(Tensor2::filled(1, 1, x));
        let yv = tape.constant(Tensor2::filled(1, 1, y));
        let wv = tape.param(&store, w);
        let bv = tape.param(&store, b);
        let pred = tape.linear(xv, wv, Some(bv)).unwrap();
        let loss = tape.mse(pred, yv).unwrap();
        let g = tape.backward(loss, &store).unwrap();
        let r = 0.7 * x - 0.2 - y;
        assert!((g.get(w)[0] - 2.0 * r * x).abs() < 1e-15);
        assert!((g.get(b)[0] - 2.0 * r).abs() < 1e-15);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut store = ParamStore::new();
        let w = store.add("w", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut tape = GradientTape::new();
        let _ = tape.param(&store, w);
        let a = tape.constant(Tensor2::filled(2, 3, 1.5));
        let b = tape.constant(Tensor2::filled(2, 3, 0.5));
        let loss = tape.mse(a, b).unwrap();
        let g = tape.backward(loss, &store).unwrap();
        assert!(g.all_zero());
    }

    #[test]
    fn foreign_variable_is_rejected() {
        let store = ParamStore::new();
        let mut t1 = GradientTape::new();
        let mut t2 = GradientTape::new();
        let a = t1.constant(Tensor2::filled(1, 1, 1.0));
        let b = t1.constant(Tensor2::filled(1, 1, 2.0));
        let loss = t1.mse(a, b).unwrap();
        assert!(matches!(t2.backward(loss, &store), Err(Error::Usage(_))));
        assert!(t2.tanh(a).is_err());
        let big = t1.constant(Tensor2::filled(2, 2, 0.0));
        assert!(matches!(t1.backward(big, &store), Err(Error::Usage(_))));
    }
}
