//! Forward op constructors. Each records enough state for its backward rule.

use rayon::prelude::*;

use super::{numel, strides, Graph, Op, TensorError, TensorId};

/// Rayon pays off only for reasonably large row blocks.
const PAR_FLOPS_THRESHOLD: usize = 1 << 16;

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
}

impl Graph {
    fn binary_requires(&self, a: TensorId, b: TensorId) -> bool {
        self.needs(a) || self.needs(b)
    }

    /// `a` is [.., k] (leading dims flattened to rows), `b` is [k, n].
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (ashape, bshape) = (self.shape(a), self.shape(b));
        if ashape.is_empty() || bshape.len() != 2 {
            return Err(shape_err("matmul", format!("need [..,k] x [k,n], got {:?} x {:?}", ashape, bshape)));
        }
        let k = *ashape.last().unwrap();
        if bshape[0] != k {
            return Err(shape_err("matmul", format!("inner extents differ: {:?} x {:?}", ashape, bshape)));
        }
        let n = bshape[1];
        let m = numel(ashape) / k;
        let mut out_shape = ashape.to_vec();
        *out_shape.last_mut().unwrap() = n;

        let out = matmul_raw(self.data(a), self.data(b), m, k, n);
        let rg = self.binary_requires(a, b);
        self.push("matmul", out, out_shape, rg, Op::Matmul { a, b })
    }

    /// Batched matmul: [n, m, k] x [n, k, p] -> [n, m, p].
    pub fn bmm(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (ashape, bshape) = (self.shape(a), self.shape(b));
        if ashape.len() != 3 || bshape.len() != 3 || ashape[0] != bshape[0] || ashape[2] != bshape[1] {
            return Err(shape_err("bmm", format!("need [n,m,k] x [n,k,p], got {:?} x {:?}", ashape, bshape)));
        }
        let (nb, m, k, p) = (ashape[0], ashape[1], ashape[2], bshape[2]);
        let mut out = vec![0.0; nb * m * p];
        let (adata, bdata) = (self.data(a), self.data(b));
        if nb * m * k * p >= PAR_FLOPS_THRESHOLD {
            out.par_chunks_mut(m * p).enumerate().for_each(|(i, chunk)| {
                matmul_into(&adata[i * m * k..(i + 1) * m * k], &bdata[i * k * p..(i + 1) * k * p], m, k, p, chunk);
            });
        } else {
            for i in 0..nb {
                matmul_into(
                    &adata[i * m * k..(i + 1) * m * k],
                    &bdata[i * k * p..(i + 1) * k * p],
                    m,
                    k,
                    p,
                    &mut out[i * m * p..(i + 1) * m * p],
                );
            }
        }
        let rg = self.binary_requires(a, b);
        self.push("bmm", out, vec![nb, m, p], rg, Op::Bmm { a, b })
    }

    /// Elementwise add; `b`'s shape may be a suffix of `a`'s, in which case it
    /// is tiled over the leading dims (bias add, positional add).
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (ashape, bshape) = (self.shape(a), self.shape(b));
        if !is_suffix(bshape, ashape) {
            return Err(shape_err("add", format!("{:?} is not a suffix of {:?}", bshape, ashape)));
        }
        let bn = numel(bshape);
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + self.data(b)[i % bn])
            .collect();
        let rg = self.binary_requires(a, b);
        let shape = ashape.to_vec();
        self.push("add", out, shape, rg, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    /// Elementwise product, same shapes.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mul", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let out: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let rg = self.binary_requires(a, b);
        let shape = self.shape(a).to_vec();
        self.push("mul", out, shape, rg, Op::Mul { a, b })
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> Result<TensorId, TensorError> {
        let out: Vec<f64> = self.data(a).iter().map(|x| x * c).collect();
        let rg = self.needs(a);
        let shape = self.shape(a).to_vec();
        self.push("scale", out, shape, rg, Op::Scale { a, c })
    }

    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no parts".into()));
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(shape_err("concat", format!("axis {} out of rank {}", axis, first.len())));
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter().enumerate().any(|(i, &e)| i != axis && e != first[i])
            {
                return Err(shape_err("concat", format!("incompatible part {:?} vs {:?}", s, first)));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![0.0; numel(&out_shape)];
        let mut offset = 0;
        for &p in parts {
            let na = self.shape(p)[axis];
            let data = self.data(p);
            for o in 0..outer {
                let src = &data[o * na * inner..(o + 1) * na * inner];
                let dst_base = o * axis_total * inner + offset * inner;
                out[dst_base..dst_base + na * inner].copy_from_slice(src);
            }
            offset += na;
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        self.push("concat", out, out_shape, rg, Op::Concat { parts: parts.to_vec(), axis })
    }

    /// Contiguous range along one axis.
    pub fn slice(&mut self, a: TensorId, axis: usize, start: usize, len: usize) -> Result<TensorId, TensorError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(shape_err("slice", format!("range {}..{} on axis {} of {:?}", start, start + len, axis, shape)));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let na = shape[axis];
        let mut out = vec![0.0; outer * len * inner];
        let data = self.data(a);
        for o in 0..outer {
            let src = o * na * inner + start * inner;
            out[o * len * inner..(o + 1) * len * inner].copy_from_slice(&data[src..src + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.needs(a);
        self.push("slice", out, out_shape, rg, Op::Slice { a, axis, start })
    }

    /// Take one index along an axis and drop that axis.
    pub fn select(&mut self, a: TensorId, axis: usize, index: usize) -> Result<TensorId, TensorError> {
        let s = self.slice(a, axis, index, 1)?;
        let mut shape = self.shape(s).to_vec();
        shape.remove(axis);
        self.reshape(s, &shape)
    }

    /// Gather rows from a [v, d] table; backward scatter-adds into the table.
    pub fn gather(&mut self, table: TensorId, idx: &[usize]) -> Result<TensorId, TensorError> {
        let shape = self.shape(table);
        if shape.len() != 2 {
            return Err(shape_err("gather", format!("table must be 2-d, got {:?}", shape)));
        }
        let (v, d) = (shape[0], shape[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= v) {
            return Err(shape_err("gather", format!("index {} out of {} rows", bad, v)));
        }
        let data = self.data(table);
        let mut out = vec![0.0; idx.len() * d];
        for (r, &i) in idx.iter().enumerate() {
            out[r * d..(r + 1) * d].copy_from_slice(&data[i * d..(i + 1) * d]);
        }
        let rg = self.needs(table);
        self.push("gather", out, vec![idx.len(), d], rg, Op::Gather { table, idx: idx.to_vec() })
    }

    /// out[b, j] = a[b, idx[b*k + j]] for a [rows, n] input.
    pub fn gather_per_row(&mut self, a: TensorId, idx: &[usize], k: usize) -> Result<TensorId, TensorError> {
        let shape = self.shape(a);
        if shape.len() != 2 {
            return Err(shape_err("gather_per_row", format!("need 2-d input, got {:?}", shape)));
        }
        let (rows, n) = (shape[0], shape[1]);
        if idx.len() != rows * k {
            return Err(shape_err("gather_per_row", format!("{} indices for {} rows x k={}", idx.len(), rows, k)));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(shape_err("gather_per_row", format!("index {} out of row width {}", bad, n)));
        }
        let data = self.data(a);
        let mut out = vec![0.0; rows * k];
        for b in 0..rows {
            for j in 0..k {
                out[b * k + j] = data[b * n + idx[b * k + j]];
            }
        }
        let rg = self.needs(a);
        self.push("gather_per_row", out, vec![rows, k], rg, Op::GatherPerRow { a, idx: idx.to_vec(), k })
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, a: TensorId, axis: usize) -> Result<TensorId, TensorError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(shape_err("softmax", format!("axis {} out of rank {}", axis, shape.len())));
        }
        let mut out = self.data(a).to_vec();
        for_each_lane_mut(&mut out, &shape, axis, |lane| {
            let max = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in lane.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in lane.iter_mut() {
                *v /= sum;
            }
        });
        let rg = self.needs(a);
        self.push("softmax", out, shape, rg, Op::Softmax { a, axis })
    }

    /// Layer normalization over the last axis with affine gain/bias.
    pub fn layernorm(
        &mut self,
        a: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    ) -> Result<TensorId, TensorError> {
        let shape = self.shape(a).to_vec();
        let n = *shape.last().ok_or_else(|| shape_err("layernorm", "rank-0 input".into()))?;
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(shape_err(
                "layernorm",
                format!("gain/bias must be [{}], got {:?}/{:?}", n, self.shape(gain), self.shape(bias)),
            ));
        }
        let rows = numel(&shape) / n;
        let data = self.data(a);
        let mut xhat = vec![0.0; data.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &data[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for i in 0..n {
                xhat[r * n + i] = (row[i] - mean) * is;
            }
        }
        let gdata = self.data(gain);
        let bdata = self.data(bias);
        let out: Vec<f64> = xhat
            .iter()
            .enumerate()
            .map(|(i, &xh)| xh * gdata[i % n] + bdata[i % n])
            .collect();
        let rg = self.needs(a) || self.needs(gain) || self.needs(bias);
        self.push("layernorm", out, shape, rg, Op::LayerNorm { a, gain, bias, xhat, inv_std })
    }

    /// Tanh-approximation GELU.
    pub fn gelu(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let out: Vec<f64> = self.data(a).iter().map(|&x| gelu_scalar(x)).collect();
        let rg = self.needs(a);
        let shape = self.shape(a).to_vec();
        self.push("gelu", out, shape, rg, Op::Gelu { a })
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let out: Vec<f64> = self.data(a).iter().map(|&x| sigmoid_scalar(x)).collect();
        let rg = self.needs(a);
        let shape = self.shape(a).to_vec();
        self.push("sigmoid", out, shape, rg, Op::Sigmoid { a })
    }

    pub fn reshape(&mut self, a: TensorId, shape: &[usize]) -> Result<TensorId, TensorError> {
        if numel(shape) != self.tensor(a).numel() {
            return Err(shape_err("reshape", format!("{:?} -> {:?} changes element count", self.shape(a), shape)));
        }
        let out = self.data(a).to_vec();
        let rg = self.needs(a);
        self.push("reshape", out, shape.to_vec(), rg, Op::Reshape { a })
    }

    /// Materialized axis permutation.
    pub fn permute(&mut self, a: TensorId, perm: &[usize]) -> Result<TensorId, TensorError> {
        let shape = self.shape(a).to_vec();
        if perm.len() != shape.len() {
            return Err(shape_err("permute", format!("perm {:?} vs rank {}", perm, shape.len())));
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || seen[p] {
                return Err(shape_err("permute", format!("{:?} is not a permutation", perm)));
            }
            seen[p] = true;
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let out = permute_raw(self.data(a), &shape, perm);
        let rg = self.needs(a);
        self.push("permute", out, out_shape, rg, Op::Permute { a, perm: perm.to_vec() })
    }

    /// Convenience: transpose the last two axes.
    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let rank = self.shape(a).len();
        if rank < 2 {
            return Err(shape_err("transpose", format!("rank {} < 2", rank)));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(a, &perm)
    }

    pub fn mean_axis(&mut self, a: TensorId, axis: usize) -> Result<TensorId, TensorError> {
        self.reduce_axis(a, axis, true)
    }

    pub fn sum_axis(&mut self, a: TensorId, axis: usize) -> Result<TensorId, TensorError> {
        self.reduce_axis(a, axis, false)
    }

    fn reduce_axis(&mut self, a: TensorId, axis: usize, mean: bool) -> Result<TensorId, TensorError> {
        let shape = self.shape(a).to_vec();
        let opname: &'static str = if mean { "mean_axis" } else { "sum_axis" };
        if axis >= shape.len() {
            return Err(shape_err(opname, format!("axis {} out of rank {}", axis, shape.len())));
        }
        let na = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        let data = self.data(a);
        for o in 0..outer {
            for t in 0..na {
                for i in 0..inner {
                    out[o * inner + i] += data[o * na * inner + t * inner + i];
                }
            }
        }
        if mean {
            for v in out.iter_mut() {
                *v /= na as f64;
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let rg = self.needs(a);
        let op = if mean { Op::MeanAxis { a, axis } } else { Op::SumAxis { a, axis } };
        self.push(opname, out, out_shape, rg, op)
    }

    /// Sum of all elements, as a [1] scalar.
    pub fn sum_all(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let out = vec![self.data(a).iter().sum::<f64>()];
        let rg = self.needs(a);
        self.push("sum_all", out, vec![1], rg, Op::SumAll { a })
    }

    /// Row-wise outer product: [b, m] x [b, n] -> [b, m*n], row-major in (m, n).
    pub fn outer(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (ashape, bshape) = (self.shape(a), self.shape(b));
        if ashape.len() != 2 || bshape.len() != 2 || ashape[0] != bshape[0] {
            return Err(shape_err("outer", format!("need [b,m] x [b,n], got {:?} x {:?}", ashape, bshape)));
        }
        let (bsz, m, n) = (ashape[0], ashape[1], bshape[1]);
        let (adata, bdata) = (self.data(a), self.data(b));
        let mut out = vec![0.0; bsz * m * n];
        for r in 0..bsz {
            for i in 0..m {
                for j in 0..n {
                    out[r * m * n + i * n + j] = adata[r * m + i] * bdata[r * n + j];
                }
            }
        }
        let rg = self.binary_requires(a, b);
        self.push("outer", out, vec![bsz, m * n], rg, Op::Outer { a, b })
    }

    /// Normalize each row of [.., n] to unit L2 norm. Zero rows are degenerate.
    pub fn l2_normalize_rows(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let shape = self.shape(a).to_vec();
        let n = *shape.last().ok_or_else(|| shape_err("l2_normalize_rows", "rank-0 input".into()))?;
        let rows = numel(&shape) / n;
        let data = self.data(a);
        let mut norms = vec![0.0; rows];
        let mut out = vec![0.0; data.len()];
        for r in 0..rows {
            let row = &data[r * n..(r + 1) * n];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-30 {
                return Err(TensorError::Degenerate { op: "l2_normalize_rows", detail: format!("row {} has zero norm", r) });
            }
            norms[r] = norm;
            for i in 0..n {
                out[r * n + i] = row[i] / norm;
            }
        }
        let rg = self.needs(a);
        self.push("l2_normalize_rows", out, shape, rg, Op::L2NormalizeRows { a, norms })
    }

    /// Scale each length-n row of `a` ([.., n]) by the matching entry of `s`.
    pub fn scale_rows(&mut self, a: TensorId, s: TensorId) -> Result<TensorId, TensorError> {
        let ashape = self.shape(a).to_vec();
        if ashape.len() < 2 || self.shape(s) != &ashape[..ashape.len() - 1] {
            return Err(shape_err(
                "scale_rows",
                format!("scales {:?} must match leading dims of {:?}", self.shape(s), ashape),
            ));
        }
        let n = *ashape.last().unwrap();
        let sdata = self.data(s);
        let out: Vec<f64> = self.data(a).iter().enumerate().map(|(i, &v)| v * sdata[i / n]).collect();
        let rg = self.binary_requires(a, s);
        self.push("scale_rows", out, ashape, rg, Op::ScaleRows { a, s })
    }

    /// Tile `a` over a new leading axis of extent `copies`.
    pub fn expand_leading(&mut self, a: TensorId, copies: usize) -> Result<TensorId, TensorError> {
        if copies == 0 {
            return Err(shape_err("expand_leading", "zero copies".into()));
        }
        let shape = self.shape(a).to_vec();
        let data = self.data(a);
        let mut out = Vec::with_capacity(copies * data.len());
        for _ in 0..copies {
            out.extend_from_slice(data);
        }
        let mut out_shape = Vec::with_capacity(shape.len() + 1);
        out_shape.push(copies);
        out_shape.extend_from_slice(&shape);
        let rg = self.needs(a);
        self.push("expand_leading", out, out_shape, rg, Op::ExpandLeading { a, copies })
    }

    /// Sparse pair composition:
    /// y[b, i*n_obj + j] = z[b, i] * wa[i, j] + z[b, n_attr + j] * wo[j, i].
    pub fn sparse_compose(
        &mut self,
        z: TensorId,
        wa: TensorId,
        wo: TensorId,
        n_attr: usize,
        n_obj: usize,
    ) -> Result<TensorId, TensorError> {
        let zshape = self.shape(z);
        if zshape.len() != 2 || zshape[1] != n_attr + n_obj {
            return Err(shape_err("sparse_compose", format!("z must be [b, {}], got {:?}", n_attr + n_obj, zshape)));
        }
        if self.shape(wa) != [n_attr, n_obj] || self.shape(wo) != [n_obj, n_attr] {
            return Err(shape_err(
                "sparse_compose",
                format!(
                    "weights must be [{n_attr},{n_obj}] and [{n_obj},{n_attr}], got {:?} and {:?}",
                    self.shape(wa),
                    self.shape(wo)
                ),
            ));
        }
        let bsz = zshape[0];
        let (zd, wad, wod) = (self.data(z), self.data(wa), self.data(wo));
        let mut out = vec![0.0; bsz * n_attr * n_obj];
        for b in 0..bsz {
            let zrow = &zd[b * (n_attr + n_obj)..(b + 1) * (n_attr + n_obj)];
            let orow = &mut out[b * n_attr * n_obj..(b + 1) * n_attr * n_obj];
            for i in 0..n_attr {
                for j in 0..n_obj {
                    orow[i * n_obj + j] = zrow[i] * wad[i * n_obj + j] + zrow[n_attr + j] * wod[j * n_attr + i];
                }
            }
        }
        let rg = self.needs(z) || self.needs(wa) || self.needs(wo);
        self.push("sparse_compose", out, vec![bsz, n_attr * n_obj], rg, Op::SparseCompose { z, wa, wo, n_attr, n_obj })
    }

    /// Mean negative log-softmax of the target class, optionally restricted to
    /// a class subset. Targets are full-width class indices; with a subset,
    /// every target must be a member of it.
    pub fn cross_entropy(
        &mut self,
        logits: TensorId,
        targets: &[usize],
        class_subset: Option<&[usize]>,
    ) -> Result<TensorId, TensorError> {
        let shape = self.shape(logits);
        if shape.len() != 2 {
            return Err(shape_err("cross_entropy", format!("logits must be [b, c], got {:?}", shape)));
        }
        let (bsz, c) = (shape[0], shape[1]);
        if targets.len() != bsz {
            return Err(shape_err("cross_entropy", format!("{} targets for batch {}", targets.len(), bsz)));
        }
        let subset: Option<Vec<usize>> = class_subset.map(|s| s.to_vec());
        if let Some(ref s) = subset {
            if let Some(&bad) = s.iter().find(|&&i| i >= c) {
                return Err(shape_err("cross_entropy", format!("subset class {} out of {}", bad, c)));
            }
        }
        // Map each target to its position in the (possibly restricted) class set.
        let mut target_pos = Vec::with_capacity(bsz);
        for &t in targets {
            let pos = match subset {
                Some(ref s) => s.iter().position(|&x| x == t).ok_or(TensorError::InvalidTarget { target: t })?,
                None => {
                    if t >= c {
                        return Err(TensorError::InvalidTarget { target: t });
                    }
                    t
                }
            };
            target_pos.push(pos);
        }
        let width = subset.as_ref().map_or(c, |s| s.len());
        let data = self.data(logits);
        let mut probs = vec![0.0; bsz * width];
        let mut loss = 0.0;
        for b in 0..bsz {
            let row = &data[b * c..(b + 1) * c];
            let fetch = |j: usize| match subset {
                Some(ref s) => row[s[j]],
                None => row[j],
            };
            let max = (0..width).map(fetch).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..width {
                let e = (fetch(j) - max).exp();
                probs[b * width + j] = e;
                sum += e;
            }
            for j in 0..width {
                probs[b * width + j] /= sum;
            }
            loss -= probs[b * width + target_pos[b]].ln();
        }
        loss /= bsz as f64;
        let rg = self.needs(logits);
        self.push(
            "cross_entropy",
            vec![loss],
            vec![1],
            rg,
            Op::CrossEntropy { logits, targets: target_pos, subset, probs },
        )
    }
}

pub(crate) fn is_suffix(suffix: &[usize], of: &[usize]) -> bool {
    suffix.len() <= of.len() && of[of.len() - suffix.len()..] == *suffix
}

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// C[m,n] = A[m,k] x B[k,n], row-parallel above the flops threshold so the
/// result does not depend on the thread count.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if m * k * n >= PAR_FLOPS_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            matmul_row(&a[i * k..(i + 1) * k], b, k, n, row);
        });
    } else {
        matmul_into(a, b, m, k, n, &mut out);
    }
    out
}

fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        matmul_row(&a[i * k..(i + 1) * k], b, k, n, &mut out[i * n..(i + 1) * n]);
    }
}

#[inline]
fn matmul_row(arow: &[f64], b: &[f64], k: usize, n: usize, out: &mut [f64]) {
    for p in 0..k {
        let av = arow[p];
        if av == 0.0 {
            continue;
        }
        let brow = &b[p * n..(p + 1) * n];
        for j in 0..n {
            out[j] += av * brow[j];
        }
    }
}

pub(crate) fn permute_raw(data: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let out_strides = strides(&out_shape);
    let mut out = vec![0.0; data.len()];
    let rank = shape.len();
    let mut coords = vec![0usize; rank];
    for (flat, &v) in data.iter().enumerate() {
        let mut rem = flat;
        for d in 0..rank {
            coords[d] = rem / in_strides[d];
            rem %= in_strides[d];
        }
        let mut dst = 0;
        for d in 0..rank {
            dst += coords[perm[d]] * out_strides[d];
        }
        out[dst] = v;
    }
    out
}

/// Apply `f` to every lane along `axis` (lane = the vector obtained by varying
/// only that axis). Requires the buffer to be laid out row-major for `shape`.
pub(crate) fn for_each_lane_mut<F: FnMut(&mut [f64])>(data: &mut [f64], shape: &[usize], axis: usize, mut f: F) {
    let na = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut lane = vec![0.0; na];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * na * inner + i;
            for t in 0..na {
                lane[t] = data[base + t * inner];
            }
            f(&mut lane);
            for t in 0..na {
                data[base + t * inner] = lane[t];
            }
        }
    }
}
