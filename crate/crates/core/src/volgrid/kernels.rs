//! Forward/backward kernels shared by the free functions and the graph.
//!
//! Convolutions use "same" zero padding: output side `ceil(n / s)`, with the
//! total padding split `floor(total / 2)` before and the remainder after.
//! Every accumulation runs in a fixed loop order.

use crate::error::{Error, Result};

use super::tensor::{lit, Real, Tensor};

/// Output side of a stride-`s` "same" convolution over `n` voxels.
pub fn conv_output_side(n: usize, stride: usize) -> usize {
    n.div_ceil(stride)
}

/// Geometry of a convolution mapping `in_dims` to `out_dims`. A transposed
/// convolution reuses the geometry of the convolution it is the adjoint of.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub s: usize,
    pub in_dims: [usize; 3],
    pub out_dims: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    pub fn same(cin: usize, cout: usize, k: usize, s: usize, in_dims: [usize; 3]) -> Self {
        let mut out_dims = [0; 3];
        let mut pad = [0; 3];
        for a in 0..3 {
            let o = conv_output_side(in_dims[a], s);
            let total = ((o - 1) * s + k).saturating_sub(in_dims[a]);
            out_dims[a] = o;
            pad[a] = total / 2;
        }
        Self {
            cin,
            cout,
            k,
            s,
            in_dims,
            out_dims,
            pad,
        }
    }

    pub fn in_vol(&self) -> usize {
        self.in_dims.iter().product()
    }

    pub fn out_vol(&self) -> usize {
        self.out_dims.iter().product()
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k * self.k
    }

    /// Outputs `o` along `axis` whose tap `koff` lands inside the input.
    #[inline]
    fn valid(&self, axis: usize, koff: usize) -> (usize, usize) {
        let (s, pad, n_in, n_out) = (self.s, self.pad[axis], self.in_dims[axis], self.out_dims[axis]);
        let lo = if pad > koff { (pad - koff).div_ceil(s) } else { 0 };
        let reach = n_in + pad;
        let hi = if reach > koff {
            ((reach - koff - 1) / s + 1).min(n_out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// Visits every (output voxel, input voxel) pair of one kernel tap, in a
/// fixed order. `f(out_index, in_index)` with indices relative to a channel.
#[inline]
fn for_each_tap(geom: &ConvGeom, kz: usize, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize)) {
    let [_, oh, ow] = geom.out_dims;
    let [_, ih, iw] = geom.in_dims;
    let (z0, z1) = geom.valid(0, kz);
    let (y0, y1) = geom.valid(1, ky);
    let (x0, x1) = geom.valid(2, kx);
    if x0 >= x1 {
        return;
    }
    let s = geom.s;
    for oz in z0..z1 {
        let iz = oz * s + kz - geom.pad[0];
        for oy in y0..y1 {
            let iy = oy * s + ky - geom.pad[1];
            let out_row = (oz * oh + oy) * ow;
            let in_row = (iz * ih + iy) * iw;
            let ix0 = x0 * s + kx - geom.pad[2];
            f(out_row + x0, in_row + ix0, x1 - x0);
        }
    }
}

/// Unrolls `x` into rows of `cin * k³` taps by `out_vol` columns; taps that
/// fall into the padding stay zero.
fn im2col<T: Real>(geom: &ConvGeom, x: &[T]) -> Vec<T> {
    let k = geom.k;
    let k3 = k * k * k;
    let (iv, ov, s) = (geom.in_vol(), geom.out_vol(), geom.s);
    let mut cols = vec![T::zero(); geom.cin * k3 * ov];
    for ci in 0..geom.cin {
        let x_c = &x[ci * iv..(ci + 1) * iv];
        for tap in 0..k3 {
            let row = &mut cols[(ci * k3 + tap) * ov..][..ov];
            let (kz, ky, kx) = (tap / (k * k), (tap / k) % k, tap % k);
            for_each_tap(geom, kz, ky, kx, |o, i, n| {
                for (j, d) in row[o..o + n].iter_mut().enumerate() {
                    *d = x_c[i + j * s];
                }
            });
        }
    }
    cols
}

/// Adjoint of [`im2col`]: adds every column entry back onto its input voxel.
fn col2im<T: Real>(geom: &ConvGeom, cols: &[T], x_out: &mut [T]) {
    let k = geom.k;
    let k3 = k * k * k;
    let (iv, ov, s) = (geom.in_vol(), geom.out_vol(), geom.s);
    for ci in 0..geom.cin {
        let x_c = &mut x_out[ci * iv..(ci + 1) * iv];
        for tap in 0..k3 {
            let row = &cols[(ci * k3 + tap) * ov..][..ov];
            let (kz, ky, kx) = (tap / (k * k), (tap / k) % k, tap % k);
            for_each_tap(geom, kz, ky, kx, |o, i, n| {
                for (j, v) in row[o..o + n].iter().enumerate() {
                    x_c[i + j * s] += *v;
                }
            });
        }
    }
}

#[inline]
fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (d, v) in y.iter_mut().zip(x) {
        *d += a * *v;
    }
}

/// Dot product with eight interleaved partial sums, combined in a fixed order.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (pa, pb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            lanes[l] += pa[l] * pb[l];
        }
    }
    let mut acc = T::zero();
    for l in lanes {
        acc += l;
    }
    for i in chunks * 8..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Convolution forward without bias: `out[co] += w[co, ci] * x[ci]`.
pub(crate) fn conv_gather<T: Real>(geom: &ConvGeom, x: &[T], w: &[T], out: &mut [T]) {
    let rows = geom.cin * geom.k.pow(3);
    let ov = geom.out_vol();
    let cols = im2col(geom, x);
    for co in 0..geom.cout {
        let out_c = &mut out[co * ov..(co + 1) * ov];
        for (r, wv) in w[co * rows..(co + 1) * rows].iter().enumerate() {
            axpy(*wv, &cols[r * ov..(r + 1) * ov], out_c);
        }
    }
}

/// Adjoint of [`conv_gather`]: `x_out[ci] += w[co, ci]^T g[co]`.
pub(crate) fn conv_scatter<T: Real>(geom: &ConvGeom, g: &[T], w: &[T], x_out: &mut [T]) {
    let rows = geom.cin * geom.k.pow(3);
    let ov = geom.out_vol();
    let mut cols = vec![T::zero(); rows * ov];
    for co in 0..geom.cout {
        let g_c = &g[co * ov..(co + 1) * ov];
        for (r, wv) in w[co * rows..(co + 1) * rows].iter().enumerate() {
            axpy(*wv, g_c, &mut cols[r * ov..(r + 1) * ov]);
        }
    }
    col2im(geom, &cols, x_out);
}

/// Weight gradient: `gw[co, ci, tap] += sum_o g[co, o] * x[ci, o*s + tap - pad]`.
pub(crate) fn conv_weight_grad<T: Real>(geom: &ConvGeom, x: &[T], g: &[T], gw: &mut [T]) {
    let rows = geom.cin * geom.k.pow(3);
    let ov = geom.out_vol();
    let cols = im2col(geom, x);
    for co in 0..geom.cout {
        let g_c = &g[co * ov..(co + 1) * ov];
        for (r, dst) in gw[co * rows..(co + 1) * rows].iter_mut().enumerate() {
            *dst += dot(g_c, &cols[r * ov..(r + 1) * ov]);
        }
    }
}

pub(crate) fn add_channel_bias<T: Real>(out: &mut [T], bias: &[T], vol: usize) {
    for (c, b) in bias.iter().enumerate() {
        for v in &mut out[c * vol..(c + 1) * vol] {
            *v += *b;
        }
    }
}

pub(crate) fn channel_sums<T: Real>(g: &[T], channels: usize, vol: usize, acc: &mut [T]) {
    for c in 0..channels {
        let mut s = T::zero();
        for v in &g[c * vol..(c + 1) * vol] {
            s += *v;
        }
        acc[c] += s;
    }
}

pub(crate) fn conv_geom_for(
    input_shape: &[usize],
    weight_shape: &[usize],
    bias_len: usize,
    stride: usize,
) -> Result<ConvGeom> {
    if input_shape.len() != 4 {
        return Err(Error::shape(
            "conv3d",
            format!("input must be [C, D, H, W], got {input_shape:?}"),
        ));
    }
    if weight_shape.len() != 5 || weight_shape[2] != weight_shape[3] || weight_shape[3] != weight_shape[4] {
        return Err(Error::shape(
            "conv3d",
            format!("weights must be [C_out, C_in, k, k, k], got {weight_shape:?}"),
        ));
    }
    let (cout, cin, k) = (weight_shape[0], weight_shape[1], weight_shape[2]);
    if input_shape[0] != cin {
        return Err(Error::shape(
            "conv3d",
            format!("input has {} channels but weights expect {cin}", input_shape[0]),
        ));
    }
    if bias_len != cout {
        return Err(Error::shape(
            "conv3d",
            format!("bias length {bias_len} != output channels {cout}"),
        ));
    }
    if stride == 0 || k == 0 {
        return Err(Error::shape("conv3d", "kernel and stride must be >= 1"));
    }
    let dims = [input_shape[1], input_shape[2], input_shape[3]];
    if dims.iter().any(|&d| k > d) {
        return Err(Error::shape(
            "conv3d",
            format!("kernel {k} larger than spatial extent {dims:?}"),
        ));
    }
    Ok(ConvGeom::same(cin, cout, k, stride, dims))
}

/// Geometry of the convolution whose adjoint maps `input_shape` to a
/// `target`-sided cube.
pub(crate) fn deconv_geom_for(
    input_shape: &[usize],
    weight_shape: &[usize],
    bias_len: usize,
    stride: usize,
    target: usize,
) -> Result<ConvGeom> {
    if input_shape.len() != 4 {
        return Err(Error::shape(
            "deconv3d",
            format!("input must be [C, d, d, d], got {input_shape:?}"),
        ));
    }
    if weight_shape.len() != 5 || weight_shape[2] != weight_shape[3] || weight_shape[3] != weight_shape[4] {
        return Err(Error::shape(
            "deconv3d",
            format!("weights must be [C_in, C_out, k, k, k], got {weight_shape:?}"),
        ));
    }
    let (cin_d, cout_d, k) = (weight_shape[0], weight_shape[1], weight_shape[2]);
    if input_shape[0] != cin_d {
        return Err(Error::shape(
            "deconv3d",
            format!("input has {} channels but weights expect {cin_d}", input_shape[0]),
        ));
    }
    if bias_len != cout_d {
        return Err(Error::shape(
            "deconv3d",
            format!("bias length {bias_len} != output channels {cout_d}"),
        ));
    }
    if stride == 0 || k == 0 {
        return Err(Error::shape("deconv3d", "kernel and stride must be >= 1"));
    }
    for &d in &input_shape[1..] {
        if target != stride * d {
            return Err(Error::shape(
                "deconv3d",
                format!("target side {target} != stride {stride} x input side {d}"),
            ));
        }
    }
    // As a convolution: `cout_d` channels at `target` in, `cin_d` channels out.
    let geom = ConvGeom::same(cout_d, cin_d, k, stride, [target; 3]);
    debug_assert_eq!(geom.out_dims, [input_shape[1], input_shape[2], input_shape[3]]);
    Ok(geom)
}

/// 3-D convolution of `input[C_in, D, H, W]` with `weights[C_out, C_in, k, k, k]`.
pub fn conv3d_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
    stride: usize,
) -> Result<Tensor<T>> {
    let geom = conv_geom_for(input.shape(), weights.shape(), bias.len(), stride)?;
    let mut out = vec![T::zero(); geom.cout * geom.out_vol()];
    conv_gather(&geom, input.data(), weights.data(), &mut out);
    add_channel_bias(&mut out, bias, geom.out_vol());
    let [d, h, w] = geom.out_dims;
    Tensor::new(vec![geom.cout, d, h, w], out)
}

/// 3-D transposed convolution of `input[C_in, d, d, d]` with
/// `weights[C_in, C_out, k, k, k]` to a `target_spatial`-sided output.
pub fn deconv3d_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
    stride: usize,
    target_spatial: usize,
) -> Result<Tensor<T>> {
    let geom = deconv_geom_for(input.shape(), weights.shape(), bias.len(), stride, target_spatial)?;
    let mut out = vec![T::zero(); geom.cin * geom.in_vol()];
    conv_scatter(&geom, input.data(), weights.data(), &mut out);
    add_channel_bias(&mut out, bias, geom.in_vol());
    Tensor::new(vec![geom.cin, target_spatial, target_spatial, target_spatial], out)
}

pub(crate) fn dense_into<T: Real>(x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let n_in = x.len();
    for (o, dst) in out.iter_mut().enumerate() {
        *dst = dot(&w[o * n_in..(o + 1) * n_in], x) + b[o];
    }
}

/// `weights[n_out, n_in] · input + bias`.
pub fn dense_forward<T: Real>(input: &[T], weights: &Tensor<T>, bias: &[T]) -> Result<Vec<T>> {
    let ws = weights.shape();
    if ws.len() != 2 || ws[1] != input.len() || ws[0] != bias.len() {
        return Err(Error::shape(
            "dense",
            format!(
                "weights {ws:?}, input {}, bias {}",
                input.len(),
                bias.len()
            ),
        ));
    }
    let mut out = vec![T::zero(); ws[0]];
    dense_into(input, weights.data(), bias, &mut out);
    Ok(out)
}

/// Mean over all elements of the squared difference.
pub fn mse_loss<T: Real>(prediction: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if prediction.shape() != target.shape() {
        return Err(Error::shape(
            "mse",
            format!("{:?} vs {:?}", prediction.shape(), target.shape()),
        ));
    }
    Ok(mse_slices(prediction.data(), target.data()))
}

pub(crate) fn mse_slices<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        acc += d * d;
    }
    acc / lit(a.len() as f64)
}

/// `KL(N(mu, diag(exp(logvar))) || N(0, I))` in closed form.
pub fn kl_diag_gaussian<T: Real>(mu: &[T], logvar: &[T]) -> Result<T> {
    if mu.len() != logvar.len() {
        return Err(Error::shape(
            "kl_diag_gaussian",
            format!("mu has {} entries, logvar {}", mu.len(), logvar.len()),
        ));
    }
    Ok(kl_slices(mu, logvar))
}

pub(crate) fn kl_slices<T: Real>(mu: &[T], logvar: &[T]) -> T {
    let mut acc = T::zero();
    for (m, lv) in mu.iter().zip(logvar) {
        acc += T::one() + *lv - *m * *m - lv.exp();
    }
    -acc * lit(0.5)
}

/// `mu + exp(logvar / 2) * noise`.
pub fn reparameterize<T: Real>(mu: &[T], logvar: &[T], noise: &[T]) -> Result<Vec<T>> {
    if mu.len() != logvar.len() || mu.len() != noise.len() {
        return Err(Error::shape(
            "reparameterize",
            format!(
                "mu {}, logvar {}, noise {}",
                mu.len(),
                logvar.len(),
                noise.len()
            ),
        ));
    }
    let half: T = lit(0.5);
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(noise)
        .map(|((m, lv), e)| *m + (*lv * half).exp() * *e)
        .collect())
}
