//! Reverse pass: visits nodes in reverse creation order (reverse topological,
//! since ops only reference earlier nodes) and accumulates vector-Jacobian
//! products into their parents.

use super::ops::{gelu_grad_scalar, matmul_raw, permute_raw};
use super::{numel, Graph, Op, TensorError, TensorId};

impl Graph {
    /// Populate `grad` on every reachable tensor that requires gradients.
    /// `loss` must be scalar. Any previous gradients are cleared first.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        if self.nodes[loss.0].numel() != 1 {
            return Err(TensorError::Contract {
                op: "backward",
                detail: format!("loss must be scalar, got shape {:?}", self.nodes[loss.0].shape),
            });
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = self.nodes[i].grad.take() else { continue };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backprop(i, &op, &gout);
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(gout);
        }
        Ok(())
    }

    fn backprop(&mut self, node: usize, op: &Op, gout: &[f64]) {
        match *op {
            Op::Leaf => {}

            Op::Matmul { a, b } => {
                let k = *self.shape(a).last().unwrap();
                let n = self.shape(b)[1];
                let m = self.tensor(a).numel() / k;
                if self.needs(a) {
                    // dA = dC x B^T
                    let bdata = self.data(b);
                    let bt = transpose2(bdata, k, n);
                    let da = matmul_raw(gout, &bt, m, n, k);
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    // dB = A^T x dC
                    let at = transpose2(self.data(a), m, k);
                    let db = matmul_raw(&at, gout, k, m, n);
                    self.accumulate(b, &db);
                }
            }

            Op::Bmm { a, b } => {
                let (nb, m, k) = {
                    let s = self.shape(a);
                    (s[0], s[1], s[2])
                };
                let p = self.shape(b)[2];
                if self.needs(a) {
                    let mut da = vec![0.0; nb * m * k];
                    for i in 0..nb {
                        let bt = transpose2(&self.data(b)[i * k * p..(i + 1) * k * p], k, p);
                        let chunk = matmul_raw(&gout[i * m * p..(i + 1) * m * p], &bt, m, p, k);
                        da[i * m * k..(i + 1) * m * k].copy_from_slice(&chunk);
                    }
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    let mut db = vec![0.0; nb * k * p];
                    for i in 0..nb {
                        let at = transpose2(&self.data(a)[i * m * k..(i + 1) * m * k], m, k);
                        let chunk = matmul_raw(&at, &gout[i * m * p..(i + 1) * m * p], k, m, p);
                        db[i * k * p..(i + 1) * k * p].copy_from_slice(&chunk);
                    }
                    self.accumulate(b, &db);
                }
            }

            Op::Add { a, b } => {
                if self.needs(a) {
                    self.accumulate(a, gout);
                }
                if self.needs(b) {
                    let bn = self.tensor(b).numel();
                    let mut db = vec![0.0; bn];
                    for (i, &g) in gout.iter().enumerate() {
                        db[i % bn] += g;
                    }
                    self.accumulate(b, &db);
                }
            }

            Op::Mul { a, b } => {
                if self.needs(a) {
                    let da: Vec<f64> = gout.iter().zip(self.data(b)).map(|(g, v)| g * v).collect();
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    let db: Vec<f64> = gout.iter().zip(self.data(a)).map(|(g, v)| g * v).collect();
                    self.accumulate(b, &db);
                }
            }

            Op::Scale { a, c } => {
                if self.needs(a) {
                    let da: Vec<f64> = gout.iter().map(|g| g * c).collect();
                    self.accumulate(a, &da);
                }
            }

            Op::Concat { ref parts, axis } => {
                let out_shape = self.shape(TensorId(node)).to_vec();
                let outer: usize = out_shape[..axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let total = out_shape[axis];
                let mut offset = 0;
                for &p in parts {
                    let na = self.shape(p)[axis];
                    if self.needs(p) {
                        let mut dp = vec![0.0; self.tensor(p).numel()];
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            dp[o * na * inner..(o + 1) * na * inner].copy_from_slice(&gout[src..src + na * inner]);
                        }
                        self.accumulate(p, &dp);
                    }
                    offset += na;
                }
            }

            Op::Slice { a, axis, start } => {
                if self.needs(a) {
                    let in_shape = self.shape(a).to_vec();
                    let out_len = self.shape(TensorId(node))[axis];
                    let outer: usize = in_shape[..axis].iter().product();
                    let inner: usize = in_shape[axis + 1..].iter().product();
                    let na = in_shape[axis];
                    let mut da = vec![0.0; numel(&in_shape)];
                    for o in 0..outer {
                        let dst = o * na * inner + start * inner;
                        da[dst..dst + out_len * inner]
                            .copy_from_slice(&gout[o * out_len * inner..(o + 1) * out_len * inner]);
                    }
                    self.accumulate(a, &da);
                }
            }

            Op::Gather { table, ref idx } => {
                if self.needs(table) {
                    let d = self.shape(table)[1];
                    let mut dt = vec![0.0; self.tensor(table).numel()];
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..d {
                            dt[i * d + c] += gout[r * d + c];
                        }
                    }
                    self.accumulate(table, &dt);
                }
            }

            Op::GatherPerRow { a, ref idx, k } => {
                if self.needs(a) {
                    let n = self.shape(a)[1];
                    let rows = self.shape(a)[0];
                    let mut da = vec![0.0; rows * n];
                    for b in 0..rows {
                        for j in 0..k {
                            da[b * n + idx[b * k + j]] += gout[b * k + j];
                        }
                    }
                    self.accumulate(a, &da);
                }
            }

            Op::Softmax { a, axis } => {
                if self.needs(a) {
                    let shape = self.shape(TensorId(node)).to_vec();
                    let y = self.data(TensorId(node));
                    let na = shape[axis];
                    let outer: usize = shape[..axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let mut da = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * na * inner + i;
                            let mut dot = 0.0;
                            for t in 0..na {
                                let p = base + t * inner;
                                dot += gout[p] * y[p];
                            }
                            for t in 0..na {
                                let p = base + t * inner;
                                da[p] = y[p] * (gout[p] - dot);
                            }
                        }
                    }
                    self.accumulate(a, &da);
                }
            }

            Op::LayerNorm { a, gain, bias, ref xhat, ref inv_std } => {
                let n = self.shape(gain)[0];
                let rows = xhat.len() / n;
                if self.needs(gain) {
                    let mut dg = vec![0.0; n];
                    for r in 0..rows {
                        for i in 0..n {
                            dg[i] += gout[r * n + i] * xhat[r * n + i];
                        }
                    }
                    self.accumulate(gain, &dg);
                }
                if self.needs(bias) {
                    let mut db = vec![0.0; n];
                    for (i, &g) in gout.iter().enumerate() {
                        db[i % n] += g;
                    }
                    self.accumulate(bias, &db);
                }
                if self.needs(a) {
                    let gdata = self.data(gain);
                    let mut da = vec![0.0; xhat.len()];
                    for r in 0..rows {
                        let mut mean_dyg = 0.0;
                        let mut mean_dyg_xhat = 0.0;
                        for i in 0..n {
                            let dyg = gout[r * n + i] * gdata[i];
                            mean_dyg += dyg;
                            mean_dyg_xhat += dyg * xhat[r * n + i];
                        }
                        mean_dyg /= n as f64;
                        mean_dyg_xhat /= n as f64;
                        for i in 0..n {
                            let dyg = gout[r * n + i] * gdata[i];
                            da[r * n + i] = inv_std[r] * (dyg - mean_dyg - xhat[r * n + i] * mean_dyg_xhat);
                        }
                    }
                    self.accumulate(a, &da);
                }
            }

            Op::Gelu { a } => {
                if self.needs(a) {
                    let da: Vec<f64> = self
                        .data(a)
                        .iter()
                        .zip(gout)
                        .map(|(&x, &g)| g * gelu_grad_scalar(x))
                        .collect();
                    self.accumulate(a, &da);
                }
            }

            Op::Sigmoid { a } => {
                if self.needs(a) {
                    let y = self.data(TensorId(node));
                    let da: Vec<f64> = y.iter().zip(gout).map(|(&s, &g)| g * s * (1.0 - s)).collect();
                    self.accumulate(a, &da);
                }
            }

            Op::Reshape { a } => {
                if self.needs(a) {
                    self.accumulate(a, gout);
                }
            }

            Op::Permute { a, ref perm } => {
                if self.needs(a) {
                    let out_shape = self.shape(TensorId(node)).to_vec();
                    let mut inverse = vec![0usize; perm.len()];
                    for (d, &p) in perm.iter().enumerate() {
                        inverse[p] = d;
                    }
                    let da = permute_raw(gout, &out_shape, &inverse);
                    self.accumulate(a, &da);
                }
            }

            Op::MeanAxis { a, axis } | Op::SumAxis { a, axis } => {
                if self.needs(a) {
                    let in_shape = self.shape(a).to_vec();
                    let na = in_shape[axis];
                    let outer: usize = in_shape[..axis].iter().product();
                    let inner: usize = in_shape[axis + 1..].iter().product();
                    let scale = if matches!(op, Op::MeanAxis { .. }) { 1.0 / na as f64 } else { 1.0 };
                    let mut da = vec![0.0; numel(&in_shape)];
                    for o in 0..outer {
                        for t in 0..na {
                            for i in 0..inner {
                                da[o * na * inner + t * inner + i] = gout[o * inner + i] * scale;
                            }
                        }
                    }
                    self.accumulate(a, &da);
                }
            }

            Op::SumAll { a } => {
                if self.needs(a) {
                    let da = vec![gout[0]; self.tensor(a).numel()];
                    self.accumulate(a, &da);
                }
            }

            Op::Outer { a, b } => {
                let (bsz, m) = {
                    let s = self.shape(a);
                    (s[0], s[1])
                };
                let n = self.shape(b)[1];
                if self.needs(a) {
                    let bdata = self.data(b);
                    let mut da = vec![0.0; bsz * m];
                    for r in 0..bsz {
                        for i in 0..m {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += gout[r * m * n + i * n + j] * bdata[r * n + j];
                            }
                            da[r * m + i] = s;
                        }
                    }
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    let adata = self.data(a);
                    let mut db = vec![0.0; bsz * n];
                    for r in 0..bsz {
                        for j in 0..n {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += gout[r * m * n + i * n + j] * adata[r * m + i];
                            }
                            db[r * n + j] = s;
                        }
                    }
                    self.accumulate(b, &db);
                }
            }

            Op::L2NormalizeRows { a, ref norms } => {
                if self.needs(a) {
                    let y = self.data(TensorId(node));
                    let n = y.len() / norms.len();
                    let mut da = vec![0.0; y.len()];
                    for (r, &norm) in norms.iter().enumerate() {
                        let row = &y[r * n..(r + 1) * n];
                        let grow = &gout[r * n..(r + 1) * n];
                        let dot: f64 = row.iter().zip(grow).map(|(y, g)| y * g).sum();
                        for i in 0..n {
                            da[r * n + i] = (grow[i] - row[i] * dot) / norm;
                        }
                    }
                    self.accumulate(a, &da);
                }
            }

            Op::ScaleRows { a, s } => {
                let n = *self.shape(a).last().unwrap();
                if self.needs(a) {
                    let sdata = self.data(s);
                    let da: Vec<f64> = gout.iter().enumerate().map(|(i, &g)| g * sdata[i / n]).collect();
                    self.accumulate(a, &da);
                }
                if self.needs(s) {
                    let adata = self.data(a);
                    let mut ds = vec![0.0; self.tensor(s).numel()];
                    for (i, &g) in gout.iter().enumerate() {
                        ds[i / n] += g * adata[i];
                    }
                    self.accumulate(s, &ds);
                }
            }

            Op::ExpandLeading { a, copies } => {
                if self.needs(a) {
                    let an = self.tensor(a).numel();
                    let mut da = vec![0.0; an];
                    for c in 0..copies {
                        for i in 0..an {
                            da[i] += gout[c * an + i];
                        }
                    }
                    self.accumulate(a, &da);
                }
            }

            Op::SparseCompose { z, wa, wo, n_attr, n_obj } => {
                let bsz = self.shape(z)[0];
                let width = n_attr + n_obj;
                if self.needs(z) {
                    let (wad, wod) = (self.data(wa), self.data(wo));
                    let mut dz = vec![0.0; bsz * width];
                    for b in 0..bsz {
                        let grow = &gout[b * n_attr * n_obj..(b + 1) * n_attr * n_obj];
                        for i in 0..n_attr {
                            for j in 0..n_obj {
                                let g = grow[i * n_obj + j];
                                dz[b * width + i] += wad[i * n_obj + j] * g;
                                dz[b * width + n_attr + j] += wod[j * n_attr + i] * g;
                            }
                        }
                    }
                    self.accumulate(z, &dz);
                }
                if self.needs(wa) {
                    let zd = self.data(z);
                    let mut dwa = vec![0.0; n_attr * n_obj];
                    for b in 0..bsz {
                        let grow = &gout[b * n_attr * n_obj..(b + 1) * n_attr * n_obj];
                        for i in 0..n_attr {
                            for j in 0..n_obj {
                                dwa[i * n_obj + j] += zd[b * width + i] * grow[i * n_obj + j];
                            }
                        }
                    }
                    self.accumulate(wa, &dwa);
                }
                if self.needs(wo) {
                    let zd = self.data(z);
                    let mut dwo = vec![0.0; n_obj * n_attr];
                    for b in 0..bsz {
                        let grow = &gout[b * n_attr * n_obj..(b + 1) * n_attr * n_obj];
                        for i in 0..n_attr {
                            for j in 0..n_obj {
                                dwo[j * n_attr + i] += zd[b * width + n_attr + j] * grow[i * n_obj + j];
                            }
                        }
                    }
                    self.accumulate(wo, &dwo);
                }
            }

            Op::CrossEntropy { logits, ref targets, ref subset, ref probs } => {
                if self.needs(logits) {
                    let c = self.shape(logits)[1];
                    let bsz = targets.len();
                    let width = subset.as_ref().map_or(c, |s| s.len());
                    let g = gout[0] / bsz as f64;
                    let mut dl = vec![0.0; bsz * c];
                    for b in 0..bsz {
                        for j in 0..width {
                            let col = match subset {
                                Some(s) => s[j],
                                None => j,
                            };
                            let indicator = if j == targets[b] { 1.0 } else { 0.0 };
                            dl[b * c + col] += (probs[b * width + j] - indicator) * g;
                        }
                    }
                    self.accumulate(logits, &dl);
                }
            }
        }
    }
}

fn transpose2(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}
