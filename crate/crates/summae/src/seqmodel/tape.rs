//! Minimal reverse-mode autodiff over 2-D f64 arrays.
//!
//! Every value on the tape is an `Array2<f64>`; vectors are (1, n) rows
//! and scalars are (1, 1). Forward evaluation is eager; `backward` walks
//! the tape in reverse, accumulating gradients into leaf slots.

use ndarray::{s, Array2, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    /// a @ b
    MatMul(NodeId, NodeId),
    /// a @ b.T
    MatMulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// (m, n) + broadcast (1, n)
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// mul * x + add, elementwise with scalars
    AffineScalar(NodeId, f64, f64),
    /// x + c for a constant matrix c (no gradient to c)
    AddConst(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    ConcatCols(NodeId, NodeId),
    ConcatRows(Vec<NodeId>),
    RowSelect(NodeId, usize),
    ColSlice(NodeId, usize, usize),
    /// rows of `table` selected by token index
    Gather(NodeId, Vec<usize>),
    LayerNorm {
        input: NodeId,
        gain: NodeId,
        bias: NodeId,
        normed: Array2<f64>,
        inv_std: Vec<f64>,
    },
    SoftmaxRows(NodeId),
    /// mean per-row cross-entropy of row-wise softmax against target ids
    CrossEntropyMean {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Array2<f64>,
    },
    /// binary cross-entropy with logits, scalar in scalar out
    BceWithLogit(NodeId, f64),
    /// forward identity, gradient barrier
    Detach(NodeId),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn affine(&mut self, a: NodeId, mul: f64, add: f64) -> NodeId {
        let v = self.value(a).mapv(|x| mul * x + add);
        self.push(v, Op::AffineScalar(a, mul, add))
    }

    pub fn add_const(&mut self, a: NodeId, c: &Array2<f64>) -> NodeId {
        let v = self.value(a) + c;
        self.push(v, Op::AddConst(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts match");
        self.push(v, Op::ConcatCols(a, b))
    }

    pub fn concat_rows(&mut self, parts: Vec<NodeId>) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts match");
        self.push(v, Op::ConcatRows(parts))
    }

    pub fn row(&mut self, a: NodeId, index: usize) -> NodeId {
        let v = self
            .value(a)
            .slice(s![index..index + 1, ..])
            .to_owned();
        self.push(v, Op::RowSelect(a, index))
    }

    pub fn cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::ColSlice(a, start, end))
    }

    pub fn gather(&mut self, table: NodeId, indices: &[usize]) -> NodeId {
        let t = self.value(table);
        let mut v = Array2::zeros((indices.len(), t.ncols()));
        for (r, &ix) in indices.iter().enumerate() {
            v.row_mut(r).assign(&t.row(ix));
        }
        self.push(v, Op::Gather(table, indices.to_vec()))
    }

    pub fn layer_norm(&mut self, input: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        const EPS: f64 = 1e-5;
        let x = self.value(input);
        let n = x.ncols() as f64;
        let mut normed = Array2::zeros(x.raw_dim());
        let mut inv_std = Vec::with_capacity(x.nrows());
        for (r, row) in x.rows().into_iter().enumerate() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std.push(is);
            for (c, &v) in row.iter().enumerate() {
                normed[[r, c]] = (v - mean) * is;
            }
        }
        let v = &normed * self.value(gain) + self.value(bias);
        self.push(
            v,
            Op::LayerNorm {
                input,
                gain,
                bias,
                normed,
                inv_std,
            },
        )
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let mut v = Array2::zeros(x.raw_dim());
        for (r, row) in x.rows().into_iter().enumerate() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &x in row.iter() {
                denom += (x - m).exp();
            }
            for (c, &x) in row.iter().enumerate() {
                v[[r, c]] = (x - m).exp() / denom;
            }
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Mean per-token negative log-likelihood of `targets` under the
    /// row-wise softmax of `logits`, computed in log space.
    pub fn cross_entropy_mean(&mut self, logits: NodeId, targets: &[usize]) -> NodeId {
        let x = self.value(logits);
        debug_assert_eq!(x.nrows(), targets.len());
        let mut probs = Array2::zeros(x.raw_dim());
        let mut total = 0.0;
        for (r, row) in x.rows().into_iter().enumerate() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[targets[r]];
            for (c, &v) in row.iter().enumerate() {
                probs[[r, c]] = (v - lse).exp();
            }
        }
        let mean = total / targets.len() as f64;
        self.push(
            Array2::from_elem((1, 1), mean),
            Op::CrossEntropyMean {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Stable binary cross-entropy with logits on a (1, 1) node:
    /// max(x, 0) - x*y + ln(1 + exp(-|x|)).
    pub fn bce_with_logit(&mut self, logit: NodeId, label: f64) -> NodeId {
        let x = self.scalar(logit);
        let loss = x.max(0.0) - x * label + (1.0 + (-x.abs()).exp()).ln();
        self.push(Array2::from_elem((1, 1), loss), Op::BceWithLogit(logit, label))
    }

    pub fn detach(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).clone();
        self.push(v, Op::Detach(a))
    }

    /// Reverse pass from a scalar output. Returns per-node gradient slots;
    /// index with the `NodeId`s handed out during the forward pass.
    pub fn backward(&self, output: NodeId) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        debug_assert_eq!(self.value(output).dim(), (1, 1));
        grads[output.0] = Some(Array2::from_elem((1, 1), 1.0));

        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    acc(&mut grads[a.0], da);
                    acc(&mut grads[b.0], db);
                }
                Op::MatMulNT(a, b) => {
                    let da = g.dot(self.value(*b));
                    let db = g.t().dot(self.value(*a));
                    acc(&mut grads[a.0], da);
                    acc(&mut grads[b.0], db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads[a.0], g.clone());
                    acc(&mut grads[b.0], g);
                }
                Op::AddRow(a, row) => {
                    let dr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads[a.0], g);
                    acc(&mut grads[row.0], dr);
                }
                Op::Mul(a, b) => {
                    let da = &g * self.value(*b);
                    let db = &g * self.value(*a);
                    acc(&mut grads[a.0], da);
                    acc(&mut grads[b.0], db);
                }
                Op::AffineScalar(a, mul, _) => {
                    acc(&mut grads[a.0], g.mapv(|x| x * mul));
                }
                Op::AddConst(a) => acc(&mut grads[a.0], g),
                Op::Sigmoid(a) => {
                    let da = &g * &node.value.mapv(|y| y * (1.0 - y));
                    acc(&mut grads[a.0], da);
                }
                Op::Tanh(a) => {
                    let da = &g * &node.value.mapv(|y| 1.0 - y * y);
                    acc(&mut grads[a.0], da);
                }
                Op::Relu(a) => {
                    let da = &g * &node.value.mapv(|y| if y > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut grads[a.0], da);
                }
                Op::ConcatCols(a, b) => {
                    let na = self.value(*a).ncols();
                    acc(&mut grads[a.0], g.slice(s![.., ..na]).to_owned());
                    acc(&mut grads[b.0], g.slice(s![.., na..]).to_owned());
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.value(p).nrows();
                        acc(&mut grads[p.0], g.slice(s![start..start + rows, ..]).to_owned());
                        start += rows;
                    }
                }
                Op::RowSelect(a, index) => {
                    let mut da = Array2::zeros(self.value(*a).raw_dim());
                    da.row_mut(*index).assign(&g.row(0));
                    acc(&mut grads[a.0], da);
                }
                Op::ColSlice(a, start, end) => {
                    let mut da = Array2::zeros(self.value(*a).raw_dim());
                    da.slice_mut(s![.., *start..*end]).assign(&g);
                    acc(&mut grads[a.0], da);
                }
                Op::Gather(table, indices) => {
                    let mut dt = Array2::zeros(self.value(*table).raw_dim());
                    for (r, &ix) in indices.iter().enumerate() {
                        let mut row = dt.row_mut(ix);
                        row += &g.row(r);
                    }
                    acc(&mut grads[table.0], dt);
                }
                Op::LayerNorm {
                    input,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let n = normed.ncols() as f64;
                    let gain_v = self.value(*gain);
                    let dgain = (&g * normed).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbias = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let mut dx = Array2::zeros(normed.raw_dim());
                    for r in 0..normed.nrows() {
                        let gy: Vec<f64> =
                            (0..normed.ncols()).map(|c| g[[r, c]] * gain_v[[0, c]]).collect();
                        let mean_gy = gy.iter().sum::<f64>() / n;
                        let mean_gy_xhat = gy
                            .iter()
                            .enumerate()
                            .map(|(c, v)| v * normed[[r, c]])
                            .sum::<f64>()
                            / n;
                        for c in 0..normed.ncols() {
                            dx[[r, c]] = (gy[c] - mean_gy - normed[[r, c]] * mean_gy_xhat)
                                * inv_std[r];
                        }
                    }
                    acc(&mut grads[input.0], dx);
                    acc(&mut grads[gain.0], dgain);
                    acc(&mut grads[bias.0], dbias);
                }
                Op::SoftmaxRows(a) => {
                    let p = &node.value;
                    let mut da = Array2::zeros(p.raw_dim());
                    for r in 0..p.nrows() {
                        let dot: f64 = (0..p.ncols()).map(|c| g[[r, c]] * p[[r, c]]).sum();
                        for c in 0..p.ncols() {
                            da[[r, c]] = p[[r, c]] * (g[[r, c]] - dot);
                        }
                    }
                    acc(&mut grads[a.0], da);
                }
                Op::CrossEntropyMean {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g[[0, 0]] / targets.len() as f64;
                    let mut dl = probs * scale;
                    for (r, &t) in targets.iter().enumerate() {
                        dl[[r, t]] -= scale;
                    }
                    acc(&mut grads[logits.0], dl);
                }
                Op::BceWithLogit(logit, label) => {
                    let x = self.scalar(*logit);
                    let sig = 1.0 / (1.0 + (-x).exp());
                    let d = g[[0, 0]] * (sig - label);
                    acc(&mut grads[logit.0], Array2::from_elem((1, 1), d));
                }
                Op::Detach(_) => {}
            }
        }
        Gradients { slots: grads }
    }
}

fn acc(slot: &mut Option<Array2<f64>>, delta: Array2<f64>) {
    match slot {
        Some(g) => *g += &delta,
        None => *slot = Some(delta),
    }
}

pub struct Gradients {
    slots: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.slots[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Array2<f64>> {
        self.slots[id.0].take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    // Central finite differences against the tape on a scalar-valued
    // function of one leaf.
    fn check_leaf_grad<F>(value: Array2<f64>, f: F)
    where
        F: Fn(&mut Tape, NodeId) -> NodeId,
    {
        let mut tape = Tape::new();
        let leaf = tape.leaf(value.clone());
        let out = f(&mut tape, leaf);
        let grads = tape.backward(out);
        let analytic = grads.get(leaf).expect("leaf receives gradient").clone();

        let eps = 1e-5;
        for r in 0..value.nrows() {
            for c in 0..value.ncols() {
                let mut probe = |delta: f64| {
                    let mut v = value.clone();
                    v[[r, c]] += delta;
                    let mut t = Tape::new();
                    let l = t.leaf(v);
                    let o = f(&mut t, l);
                    t.scalar(o)
                };
                let numeric = (probe(eps) - probe(-eps)) / (2.0 * eps);
                let a = analytic[[r, c]];
                assert!(
                    (a - numeric).abs() <= 1e-6 + 1e-5 * a.abs().max(numeric.abs()),
                    "grad mismatch at ({r},{c}): analytic {a}, numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn matmul_chain_gradients() {
        let w = array![[0.3, -0.2], [0.5, 0.7], [-0.4, 0.1]];
        check_leaf_grad(w, |t, leaf| {
            let x = t.leaf(array![[1.0, 2.0, -0.5], [0.3, -1.0, 0.8]]);
            let y = t.matmul(x, leaf); // (2,2)
            let s = t.sigmoid(y);
            let h = t.tanh(s);
            let sq = t.mul(h, h);
            let flat = t.concat_rows(vec![sq]);
            // reduce to scalar via matmuls with ones
            let ones_l = t.leaf(Array2::from_elem((1, 2), 1.0));
            let ones_r = t.leaf(Array2::from_elem((2, 1), 1.0));
            let row = t.matmul(ones_l, flat);
            t.matmul(row, ones_r)
        });
    }

    #[test]
    fn layer_norm_and_softmax_gradients() {
        let x = array![[0.5, -1.2, 2.0, 0.1], [1.0, 0.0, -0.3, 0.4]];
        check_leaf_grad(x, |t, leaf| {
            let gain = t.leaf(array![[1.1, 0.9, 1.0, 1.2]]);
            let bias = t.leaf(array![[0.0, 0.1, -0.1, 0.05]]);
            let ln = t.layer_norm(leaf, gain, bias);
            let sm = t.softmax_rows(ln);
            let picked = t.mul(sm, sm);
            let ones_l = t.leaf(Array2::from_elem((1, 2), 1.0));
            let ones_r = t.leaf(Array2::from_elem((4, 1), 1.0));
            let row = t.matmul(ones_l, picked);
            t.matmul(row, ones_r)
        });
    }

    #[test]
    fn gather_and_cross_entropy_gradients() {
        let table = array![[0.2, -0.1], [0.4, 0.3], [-0.5, 0.6], [0.1, 0.1]];
        check_leaf_grad(table, |t, leaf| {
            let x = t.gather(leaf, &[2, 0, 3, 2]);
            let logits = t.matmul_nt(x, leaf); // (4,4)
            t.cross_entropy_mean(logits, &[1, 2, 0, 3])
        });
    }

    #[test]
    fn bce_and_detach_gradients() {
        let z = array![[0.4, -0.7]];
        check_leaf_grad(z.clone(), |t, leaf| {
            let w = t.leaf(array![[0.3], [-0.9]]);
            let logit = t.matmul(leaf, w);
            t.bce_with_logit(logit, 1.0)
        });

        // Detached inputs receive no gradient.
        let mut tape = Tape::new();
        let leaf = tape.leaf(z);
        let cut = tape.detach(leaf);
        let w = tape.leaf(array![[0.3], [-0.9]]);
        let logit = tape.matmul(cut, w);
        let loss = tape.bce_with_logit(logit, 0.0);
        let grads = tape.backward(loss);
        assert!(grads.get(leaf).is_none());
        assert!(grads.get(w).is_some());
    }

    #[test]
    fn uniform_logits_cost_is_log_vocab() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Array2::zeros((3, 7)));
        let loss = tape.cross_entropy_mean(logits, &[0, 4, 6]);
        assert!((tape.scalar(loss) - (7f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[3.0, -2.0, 0.5], [100.0, 99.0, 98.0]]);
        let sm = tape.softmax_rows(x);
        for row in tape.value(sm).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }
}
