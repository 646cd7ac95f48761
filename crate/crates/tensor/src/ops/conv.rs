use super::linalg::dot;
use crate::error::{config_err, shape_err, Result};
use crate::graph::{accumulate, Graph, Op, Var};
use crate::tensor::{Real, Tensor};

struct ConvGeom {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    kernels: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn plane(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds one batch element into a `[patch × plane]` matrix.
    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let plane = self.plane();
        for c in 0..self.channels {
            let img = &x[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.height as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &img[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.width as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Folds a `[patch × plane]` gradient back onto one batch element.
    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let plane = self.plane();
        for c in 0..self.channels {
            let img = &mut dx[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let base = iy as usize * self.width;
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.width as isize {
                                let i = base + ix as usize;
                                img[i] = img[i] + src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_geom(xs: &[usize], ks: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
    if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] {
        return shape_err("conv2d", xs, ks);
    }
    if stride == 0 || stride > 2 {
        return config_err("conv2d", format!("stride {stride} not in {{1, 2}}"));
    }
    let (kh, kw) = (ks[2], ks[3]);
    let (ph, pw) = (xs[2] + 2 * pad, xs[3] + 2 * pad);
    if ph < kh || pw < kw {
        return config_err("conv2d", format!("padded input {ph}x{pw} smaller than kernel {kh}x{kw}"));
    }
    if (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
        return config_err(
            "conv2d",
            format!("input {}x{} with padding {pad} and stride {stride} gives a non-integer output extent", xs[2], xs[3]),
        );
    }
    Ok(ConvGeom {
        batch: xs[0],
        channels: xs[1],
        height: xs[2],
        width: xs[3],
        kernels: ks[0],
        kh,
        kw,
        out_h: (ph - kh) / stride + 1,
        out_w: (pw - kw) / stride + 1,
        stride,
        pad,
    })
}

/// Separable bilinear weights, `align_corners = false` convention.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let frac = pos - i0 as f64;
            (i0, i1, 1.0 - frac, frac)
        })
        .collect()
}

impl<T: Real> Graph<T> {
    /// Cross-correlation of `[B×C×H×W]` with `[K×C×kh×kw]` kernels.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let geo = conv_geom(self.shape(x), self.shape(kernel), stride, pad)?;
        let (patch, plane) = (geo.patch(), geo.plane());
        let in_len = geo.channels * geo.height * geo.width;
        let mut out = vec![T::zero(); geo.batch * geo.kernels * plane];
        let mut cols = vec![T::zero(); patch * plane];
        let (xv, kv) = (self.data(x), self.data(kernel));
        for b in 0..geo.batch {
            geo.im2col(&xv[b * in_len..(b + 1) * in_len], &mut cols);
            let dst = &mut out[b * geo.kernels * plane..(b + 1) * geo.kernels * plane];
            for k in 0..geo.kernels {
                let orow = &mut dst[k * plane..(k + 1) * plane];
                for (r, &w) in kv[k * patch..(k + 1) * patch].iter().enumerate() {
                    if w == T::zero() {
                        continue;
                    }
                    for (o, &c) in orow.iter_mut().zip(&cols[r * plane..(r + 1) * plane]) {
                        *o = *o + w * c;
                    }
                }
            }
        }
        let value = Tensor::new(vec![geo.batch, geo.kernels, geo.out_h, geo.out_w], out)?;
        let needs = self.needs(&[x, kernel]);
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                k: kernel,
                stride,
                pad,
            },
            needs,
        ))
    }

    /// Non-overlapping average pooling with a square window.
    pub fn avg_pool2d(&mut self, x: Var, window: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || window == 0 || s[2] % window != 0 || s[3] % window != 0 {
            return config_err("avg_pool2d", format!("window {window} does not tile {s:?}"));
        }
        let (oh, ow) = (s[2] / window, s[3] / window);
        let norm = T::one() / T::lit((window * window) as f64);
        let src = self.data(x);
        let mut out = vec![T::zero(); s[0] * s[1] * oh * ow];
        for m in 0..s[0] * s[1] {
            let img = &src[m * s[2] * s[3]..(m + 1) * s[2] * s[3]];
            let dst = &mut out[m * oh * ow..(m + 1) * oh * ow];
            for y in 0..s[2] {
                let row = &img[y * s[3]..(y + 1) * s[3]];
                let drow = &mut dst[(y / window) * ow..(y / window + 1) * ow];
                for (xi, &v) in row.iter().enumerate() {
                    drow[xi / window] = drow[xi / window] + v;
                }
            }
            for v in dst.iter_mut() {
                *v = *v * norm;
            }
        }
        let value = Tensor::new(vec![s[0], s[1], oh, ow], out)?;
        let needs = self.needs(&[x]);
        Ok(self.push(value, Op::AvgPool2d { x, window }, needs))
    }

    /// Bilinear resize of `[B×C×h×w]` to `[B×C×out_h×out_w]`.
    pub fn upsample_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || out_h == 0 || out_w == 0 {
            return shape_err("upsample_bilinear", &s, &[out_h, out_w]);
        }
        let ty = bilinear_taps(s[2], out_h);
        let tx = bilinear_taps(s[3], out_w);
        let src = self.data(x);
        let mut out = vec![T::zero(); s[0] * s[1] * out_h * out_w];
        for m in 0..s[0] * s[1] {
            let img = &src[m * s[2] * s[3]..(m + 1) * s[2] * s[3]];
            let dst = &mut out[m * out_h * out_w..(m + 1) * out_h * out_w];
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    let v = img[y0 * s[3] + x0] * T::lit(wy0 * wx0)
                        + img[y0 * s[3] + x1] * T::lit(wy0 * wx1)
                        + img[y1 * s[3] + x0] * T::lit(wy1 * wx0)
                        + img[y1 * s[3] + x1] * T::lit(wy1 * wx1);
                    dst[oy * out_w + ox] = v;
                }
            }
        }
        let value = Tensor::new(vec![s[0], s[1], out_h, out_w], out)?;
        let needs = self.needs(&[x]);
        Ok(self.push(value, Op::Upsample(x), needs))
    }

    /// Per-channel scale and shift of `[B×C×H×W]`.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || self.shape(gamma) != [s[1]] || self.shape(beta) != [s[1]] {
            return shape_err("channel_affine", &s, self.shape(gamma));
        }
        let plane = s[2] * s[3];
        let (xv, gv, bv) = (self.data(x), self.data(gamma), self.data(beta));
        let out = xv
            .chunks(plane)
            .enumerate()
            .flat_map(|(m, chunk)| {
                let c = m % s[1];
                chunk.iter().map(move |&v| v * gv[c] + bv[c])
            })
            .collect();
        let value = Tensor::new(s, out)?;
        let needs = self.needs(&[x, gamma, beta]);
        Ok(self.push(value, Op::ChannelAffine { x, gamma, beta }, needs))
    }
}

pub(super) fn backward<T: Real>(graph: &Graph<T>, index: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let out_shape = graph.nodes[index].value.shape();
    match &graph.nodes[index].op {
        Op::Conv2d { x, k, stride, pad } => {
            let geo = conv_geom(graph.shape(*x), graph.shape(*k), *stride, *pad).expect("validated");
            let (patch, plane) = (geo.patch(), geo.plane());
            let in_len = geo.channels * geo.height * geo.width;
            let (xv, kv) = (graph.data(*x), graph.data(*k));
            let want_x = graph.requires_grad(*x);
            let want_k = graph.requires_grad(*k);
            let mut cols = vec![T::zero(); patch * plane];
            let mut dcols = vec![T::zero(); patch * plane];
            let mut dk = vec![T::zero(); if want_k { kv.len() } else { 0 }];
            let mut dx = vec![T::zero(); if want_x { xv.len() } else { 0 }];
            for b in 0..geo.batch {
                let gb = &g[b * geo.kernels * plane..(b + 1) * geo.kernels * plane];
                if want_k {
                    geo.im2col(&xv[b * in_len..(b + 1) * in_len], &mut cols);
                    for kk in 0..geo.kernels {
                        let grow = &gb[kk * plane..(kk + 1) * plane];
                        for r in 0..patch {
                            dk[kk * patch + r] = dk[kk * patch + r] + dot(grow, &cols[r * plane..(r + 1) * plane]);
                        }
                    }
                }
                if want_x {
                    dcols.fill(T::zero());
                    for kk in 0..geo.kernels {
                        let grow = &gb[kk * plane..(kk + 1) * plane];
                        for r in 0..patch {
                            let w = kv[kk * patch + r];
                            if w == T::zero() {
                                continue;
                            }
                            for (d, &gv) in dcols[r * plane..(r + 1) * plane].iter_mut().zip(grow) {
                                *d = *d + w * gv;
                            }
                        }
                    }
                    geo.col2im(&dcols, &mut dx[b * in_len..(b + 1) * in_len]);
                }
            }
            if want_k {
                accumulate(grads, graph, *k, |d| super::elementwise::add_into(d, &dk));
            }
            if want_x {
                accumulate(grads, graph, *x, |d| super::elementwise::add_into(d, &dx));
            }
        }
        Op::AvgPool2d { x, window } => {
            let s = graph.shape(*x);
            let (h, w) = (s[2], s[3]);
            let ow = w / window;
            let oh = h / window;
            let norm = T::one() / T::lit((window * window) as f64);
            accumulate(grads, graph, *x, |d| {
                for m in 0..s[0] * s[1] {
                    let gsrc = &g[m * oh * ow..(m + 1) * oh * ow];
                    let dst = &mut d[m * h * w..(m + 1) * h * w];
                    for y in 0..h {
                        for xi in 0..w {
                            let i = y * w + xi;
                            dst[i] = dst[i] + gsrc[(y / window) * ow + xi / window] * norm;
                        }
                    }
                }
            });
        }
        Op::Upsample(x) => {
            let s = graph.shape(*x);
            let (oh, ow) = (out_shape[2], out_shape[3]);
            let ty = bilinear_taps(s[2], oh);
            let tx = bilinear_taps(s[3], ow);
            accumulate(grads, graph, *x, |d| {
                for m in 0..s[0] * s[1] {
                    let gsrc = &g[m * oh * ow..(m + 1) * oh * ow];
                    let dst = &mut d[m * s[2] * s[3]..(m + 1) * s[2] * s[3]];
                    for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                            let gv = gsrc[oy * ow + ox];
                            dst[y0 * s[3] + x0] = dst[y0 * s[3] + x0] + gv * T::lit(wy0 * wx0);
                            dst[y0 * s[3] + x1] = dst[y0 * s[3] + x1] + gv * T::lit(wy0 * wx1);
                            dst[y1 * s[3] + x0] = dst[y1 * s[3] + x0] + gv * T::lit(wy1 * wx0);
                            dst[y1 * s[3] + x1] = dst[y1 * s[3] + x1] + gv * T::lit(wy1 * wx1);
                        }
                    }
                }
            });
        }
        Op::ChannelAffine { x, gamma, beta } => {
            let s = graph.shape(*x);
            let plane = s[2] * s[3];
            let (xv, gmv) = (graph.data(*x), graph.data(*gamma));
            accumulate(grads, graph, *x, |d| {
                for (m, (dc, gc)) in d.chunks_mut(plane).zip(g.chunks(plane)).enumerate() {
                    let c = m % s[1];
                    for (dv, &gv) in dc.iter_mut().zip(gc) {
                        *dv = *dv + gv * gmv[c];
                    }
                }
            });
            accumulate(grads, graph, *gamma, |d| {
                for (m, (xc, gc)) in xv.chunks(plane).zip(g.chunks(plane)).enumerate() {
                    d[m % s[1]] = d[m % s[1]] + dot(xc, gc);
                }
            });
            accumulate(grads, graph, *beta, |d| {
                for (m, gc) in g.chunks(plane).enumerate() {
                    d[m % s[1]] = d[m % s[1]] + gc.iter().copied().sum::<T>();
                }
            });
        }
        _ => unreachable!("not a spatial op"),
    }
}
