use std::borrow::Cow;

use crate::error::{Error, Result};

use super::kernels::{
    add_channel_bias, channel_sums, conv_gather, conv_geom_for, conv_scatter, conv_weight_grad,
    deconv_geom_for, dense_into, kl_slices, mse_slices, ConvGeom,
};
use super::tensor::{lit, Real, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv3d { x: NodeId, w: NodeId, b: NodeId, geom: ConvGeom },
    Deconv3d { x: NodeId, w: NodeId, b: NodeId, geom: ConvGeom },
    Dense { x: NodeId, w: NodeId, b: NodeId },
    Relu(NodeId),
    Sigmoid(NodeId),
    Clamp { x: NodeId, lo: T, hi: T },
    Reshape(NodeId),
    Concat(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, T),
    Sum(NodeId),
    Mse(NodeId, NodeId),
    KlDiag { mu: NodeId, logvar: NodeId },
    Reparam { mu: NodeId, logvar: NodeId, noise: Vec<T> },
}

struct Node<'p, T: Real> {
    shape: Vec<usize>,
    value: Cow<'p, [T]>,
    op: Op<T>,
    /// Leaf created with `requires_grad`.
    requires_grad: bool,
    /// Some path from a `requires_grad` leaf reaches this node.
    tracks: bool,
}

/// A define-by-run computation graph. Parameters may be borrowed for the
/// graph's lifetime, so large weight buffers are never copied.
pub struct Graph<'p, T: Real> {
    nodes: Vec<Node<'p, T>>,
}

/// Gradients of a scalar w.r.t. every `requires_grad` leaf.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `id`, or zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, id: NodeId, len: usize) -> Cow<'_, [T]> {
        match self.get(id) {
            Some(g) => Cow::Borrowed(g),
            None => Cow::Owned(vec![T::zero(); len]),
        }
    }
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'p, [T]>, op: Op<T>, parents: &[NodeId]) -> NodeId {
        let tracks = parents.iter().any(|p| self.nodes[p.0].tracks);
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad: false,
            tracks,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn leaf(&mut self, shape: Vec<usize>, value: Cow<'p, [T]>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            requires_grad,
            tracks: requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Owned input that does not receive a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> NodeId {
        let shape = t.shape().to_vec();
        self.leaf(shape, Cow::Owned(t.into_data()), false)
    }

    /// Owned leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor<T>) -> NodeId {
        let shape = t.shape().to_vec();
        self.leaf(shape, Cow::Owned(t.into_data()), true)
    }

    /// Borrowed parameter buffer that receives a gradient.
    pub fn param(&mut self, shape: &[usize], data: &'p [T]) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "param",
                format!("shape {shape:?} vs {} values", data.len()),
            ));
        }
        Ok(self.leaf(shape.to_vec(), Cow::Borrowed(data), true))
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn tensor(&self, id: NodeId) -> Tensor<T> {
        Tensor::new(self.shape(id).to_vec(), self.value(id).to_vec()).expect("consistent node")
    }

    /// Value of a one-element node.
    pub fn scalar(&self, id: NodeId) -> Result<T> {
        match self.value(id) {
            [v] => Ok(*v),
            other => Err(Error::shape(
                "scalar",
                format!("node holds {} values", other.len()),
            )),
        }
    }

    pub fn conv3d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize) -> Result<NodeId> {
        let geom = conv_geom_for(self.shape(x), self.shape(w), self.value(b).len(), stride)?;
        let mut out = vec![T::zero(); geom.cout * geom.out_vol()];
        conv_gather(&geom, self.value(x), self.value(w), &mut out);
        add_channel_bias(&mut out, self.value(b), geom.out_vol());
        let [d, h, ww] = geom.out_dims;
        Ok(self.push(
            vec![geom.cout, d, h, ww],
            Cow::Owned(out),
            Op::Conv3d { x, w, b, geom },
            &[x, w, b],
        ))
    }

    pub fn deconv3d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        target_spatial: usize,
    ) -> Result<NodeId> {
        let geom = deconv_geom_for(
            self.shape(x),
            self.shape(w),
            self.value(b).len(),
            stride,
            target_spatial,
        )?;
        let mut out = vec![T::zero(); geom.cin * geom.in_vol()];
        conv_scatter(&geom, self.value(x), self.value(w), &mut out);
        add_channel_bias(&mut out, self.value(b), geom.in_vol());
        let t = target_spatial;
        Ok(self.push(
            vec![geom.cin, t, t, t],
            Cow::Owned(out),
            Op::Deconv3d { x, w, b, geom },
            &[x, w, b],
        ))
    }

    /// `w[n_out, n_in] · flatten(x) + b`.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let ws = self.shape(w);
        let n_in = self.value(x).len();
        if ws.len() != 2 || ws[1] != n_in || ws[0] != self.value(b).len() {
            return Err(Error::shape(
                "dense",
                format!(
                    "weights {ws:?}, input {n_in}, bias {}",
                    self.value(b).len()
                ),
            ));
        }
        let n_out = ws[0];
        let mut out = vec![T::zero(); n_out];
        dense_into(self.value(x), self.value(w), self.value(b), &mut out);
        Ok(self.push(vec![n_out], Cow::Owned(out), Op::Dense { x, w, b }, &[x, w, b]))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<T> = self.value(x).iter().map(|&v| v.max(T::zero())).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, Cow::Owned(out), Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out: Vec<T> = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, Cow::Owned(out), Op::Sigmoid(x), &[x])
    }

    pub fn clamp(&mut self, x: NodeId, lo: T, hi: T) -> NodeId {
        let out: Vec<T> = self.value(x).iter().map(|&v| v.max(lo).min(hi)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, Cow::Owned(out), Op::Clamp { x, lo, hi }, &[x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(x)),
            ));
        }
        let out = self.value(x).to_vec();
        Ok(self.push(shape, Cow::Owned(out), Op::Reshape(x), &[x]))
    }

    /// Concatenation of two flattened nodes.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.value(a).to_vec();
        out.extend_from_slice(self.value(b));
        let n = out.len();
        self.push(vec![n], Cow::Owned(out), Op::Concat(a, b), &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| *x + *y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, Cow::Owned(out), Op::Add(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> NodeId {
        let out: Vec<T> = self.value(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, Cow::Owned(out), Op::Scale(x, c), &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let mut acc = T::zero();
        for v in self.value(x) {
            acc += *v;
        }
        self.push(vec![1], Cow::Owned(vec![acc]), Op::Sum(x), &[x])
    }

    pub fn mse(&mut self, prediction: NodeId, target: NodeId) -> Result<NodeId> {
        if self.shape(prediction) != self.shape(target) {
            return Err(Error::shape(
                "mse",
                format!(
                    "{:?} vs {:?}",
                    self.shape(prediction),
                    self.shape(target)
                ),
            ));
        }
        let v = mse_slices(self.value(prediction), self.value(target));
        Ok(self.push(
            vec![1],
            Cow::Owned(vec![v]),
            Op::Mse(prediction, target),
            &[prediction, target],
        ))
    }

    pub fn kl_diag(&mut self, mu: NodeId, logvar: NodeId) -> Result<NodeId> {
        if self.value(mu).len() != self.value(logvar).len() {
            return Err(Error::shape(
                "kl_diag_gaussian",
                format!(
                    "mu {} vs logvar {}",
                    self.value(mu).len(),
                    self.value(logvar).len()
                ),
            ));
        }
        let v = kl_slices(self.value(mu), self.value(logvar));
        Ok(self.push(
            vec![1],
            Cow::Owned(vec![v]),
            Op::KlDiag { mu, logvar },
            &[mu, logvar],
        ))
    }

    /// `mu + exp(logvar / 2) * noise` with caller-supplied standard-normal noise.
    pub fn reparameterize(&mut self, mu: NodeId, logvar: NodeId, noise: Vec<T>) -> Result<NodeId> {
        let out = super::kernels::reparameterize(self.value(mu), self.value(logvar), &noise)?;
        let shape = self.shape(mu).to_vec();
        Ok(self.push(
            shape,
            Cow::Owned(out),
            Op::Reparam { mu, logvar, noise },
            &[mu, logvar],
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`. Contributions are accumulated
    /// in reverse creation order, which makes the result deterministic.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracks {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[idx].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(&node.op, &node.value, &g, &mut grads);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].tracks
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], id: NodeId, contribution: Vec<T>) {
        match &mut grads[id.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contribution) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&self, op: &Op<T>, out: &[T], g: &[T], grads: &mut [Option<Vec<T>>]) {
        match op {
            Op::Leaf => {}
            Op::Conv3d { x, w, b, geom } => {
                if self.wants(*x) {
                    let mut gx = vec![T::zero(); geom.cin * geom.in_vol()];
                    conv_scatter(geom, g, self.value(*w), &mut gx);
                    self.accumulate(grads, *x, gx);
                }
                if self.wants(*w) {
                    let mut gw = vec![T::zero(); geom.weight_len()];
                    conv_weight_grad(geom, self.value(*x), g, &mut gw);
                    self.accumulate(grads, *w, gw);
                }
                if self.wants(*b) {
                    let mut gb = vec![T::zero(); geom.cout];
                    channel_sums(g, geom.cout, geom.out_vol(), &mut gb);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Deconv3d { x, w, b, geom } => {
                // Forward was `out = scatter(x)`; the adjoint of scatter is gather.
                if self.wants(*x) {
                    let mut gx = vec![T::zero(); geom.cout * geom.out_vol()];
                    conv_gather(geom, g, self.value(*w), &mut gx);
                    self.accumulate(grads, *x, gx);
                }
                if self.wants(*w) {
                    let mut gw = vec![T::zero(); geom.weight_len()];
                    conv_weight_grad(geom, g, self.value(*x), &mut gw);
                    self.accumulate(grads, *w, gw);
                }
                if self.wants(*b) {
                    let mut gb = vec![T::zero(); geom.cin];
                    channel_sums(g, geom.cin, geom.in_vol(), &mut gb);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Dense { x, w, b } => {
                let xv = self.value(*x);
                let n_in = xv.len();
                if self.wants(*x) {
                    let wv = self.value(*w);
                    let mut gx = vec![T::zero(); n_in];
                    for (o, go) in g.iter().enumerate() {
                        let row = &wv[o * n_in..(o + 1) * n_in];
                        for (dst, wij) in gx.iter_mut().zip(row) {
                            *dst += *wij * *go;
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.wants(*w) {
                    let mut gw = vec![T::zero(); g.len() * n_in];
                    for (o, go) in g.iter().enumerate() {
                        for (dst, xj) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(xv) {
                            *dst = *go * *xj;
                        }
                    }
                    self.accumulate(grads, *w, gw);
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Relu(x) => {
                if self.wants(*x) {
                    let gx = self
                        .value(*x)
                        .iter()
                        .zip(g)
                        .map(|(v, gv)| if *v > T::zero() { *gv } else { T::zero() })
                        .collect();
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::Sigmoid(x) => {
                if self.wants(*x) {
                    let gx = out
                        .iter()
                        .zip(g)
                        .map(|(y, gv)| *gv * *y * (T::one() - *y))
                        .collect();
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::Clamp { x, lo, hi } => {
                if self.wants(*x) {
                    let gx = self
                        .value(*x)
                        .iter()
                        .zip(g)
                        .map(|(v, gv)| if *v >= *lo && *v <= *hi { *gv } else { T::zero() })
                        .collect();
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::Reshape(x) => {
                if self.wants(*x) {
                    self.accumulate(grads, *x, g.to_vec());
                }
            }
            Op::Concat(a, b) => {
                let na = self.value(*a).len();
                if self.wants(*a) {
                    self.accumulate(grads, *a, g[..na].to_vec());
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g[na..].to_vec());
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.to_vec());
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Scale(x, c) => {
                if self.wants(*x) {
                    self.accumulate(grads, *x, g.iter().map(|v| *v * *c).collect());
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    let n = self.value(*x).len();
                    self.accumulate(grads, *x, vec![g[0]; n]);
                }
            }
            Op::Mse(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let scale = g[0] * lit::<T>(2.0) / lit::<T>(av.len() as f64);
                let diff: Vec<T> = av.iter().zip(bv).map(|(p, q)| (*p - *q) * scale).collect();
                if self.wants(*b) {
                    self.accumulate(grads, *b, diff.iter().map(|d| -*d).collect());
                }
                if self.wants(*a) {
                    self.accumulate(grads, *a, diff);
                }
            }
            Op::KlDiag { mu, logvar } => {
                if self.wants(*mu) {
                    let gm = self.value(*mu).iter().map(|m| *m * g[0]).collect();
                    self.accumulate(grads, *mu, gm);
                }
                if self.wants(*logvar) {
                    let half: T = lit(0.5);
                    let gl = self
                        .value(*logvar)
                        .iter()
                        .map(|lv| half * (lv.exp() - T::one()) * g[0])
                        .collect();
                    self.accumulate(grads, *logvar, gl);
                }
            }
            Op::Reparam { mu, logvar, noise } => {
                if self.wants(*mu) {
                    self.accumulate(grads, *mu, g.to_vec());
                }
                if self.wants(*logvar) {
                    let half: T = lit(0.5);
                    let gl = self
                        .value(*logvar)
                        .iter()
                        .zip(noise)
                        .zip(g)
                        .map(|((lv, e), gv)| *gv * half * (*lv * half).exp() * *e)
                        .collect();
                    self.accumulate(grads, *logvar, gl);
                }
            }
        }
    }
}

#[inline]
fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::from_fn(vec![2, 3, 2], |i| i as f64));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mse_of_self_has_zero_grad() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::from_fn(vec![5], |i| i as f64 * 0.3));
        let l = g.mse(x, x).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(g.scalar(l).unwrap(), 0.0);
        assert!(grads.get(x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::from_fn(vec![3], |i| i as f64));
        let y = g.relu(x);
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::full(vec![2], 1.0f64));
        let x = g.variable(Tensor::full(vec![2], 2.0f64));
        let y = g.add(c, x).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn borrowed_params_are_not_copied() {
        let w = vec![1.0f64, 2.0, 3.0, 4.0];
        let b = vec![0.0f64, 1.0];
        let mut g = Graph::new();
        let wn = g.param(&[2, 2], &w).unwrap();
        let bn = g.param(&[2], &b).unwrap();
        let x = g.constant(Tensor::full(vec![2], 1.0));
        let y = g.dense(x, wn, bn).unwrap();
        assert_eq!(g.value(y), &[3.0, 8.0]);
        assert!(std::ptr::eq(g.value(wn).as_ptr(), w.as_ptr()));
        assert!(g.param(&[3], &b).is_err());
    }
}
