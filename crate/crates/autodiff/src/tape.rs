use crate::{AutodiffError, Result, Tensor};

/// Handle to a node on a [`Tape`].
///
/// A `Var` is only valid for the tape generation it was created in; using it
/// after [`Tape::clear`] panics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    generation: u64,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `alpha * x + beta`, elementwise; only `alpha` matters for the adjoint.
    Affine(usize, f64),
    /// Tensor times a 1x1 node.
    ScaleBy(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Ln(usize),
    Recip(usize),
    Clamp(usize, f64, f64),
    MatVec(usize, usize),
    MatTVec(usize, usize),
    Outer(usize, usize),
    Sum(usize),
    Dot(usize, usize),
    Broadcast(usize),
    Slice(usize, usize),
    Pad(usize, usize),
    Concat(usize, usize),
}

impl Op {
    fn inputs(&self) -> [Option<usize>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            Affine(a, ..) | Tanh(a) | Sigmoid(a) | Ln(a) | Recip(a) | Clamp(a, ..) | Sum(a)
            | Broadcast(a) | Slice(a, _) | Pad(a, _) => [Some(a), None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | ScaleBy(a, b) | MatVec(a, b) | MatTVec(a, b)
            | Outer(a, b) | Dot(a, b) | Concat(a, b) => [Some(a), Some(b)],
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only record of a computation.
///
/// Nodes are stored in creation order, which is a topological order: every
/// node's inputs precede it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    generation: u64,
}

/// Numeric adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
    generation: u64,
}

impl Gradients {
    /// Adjoint of `v`, or `None` when `v` is not an ancestor of the root.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        assert_eq!(v.generation, self.generation, "stale Var used with Gradients");
        self.adjoints.get(v.id).and_then(|a| a.as_ref())
    }

    /// Adjoint of `v` with the shape of `like`, zero-filled when absent.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.rows, like.cols))
    }
}

fn accumulate(adj: &mut [Option<Tensor>], j: usize, t: Tensor) {
    match &mut adj[j] {
        Some(a) => a.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops every node and starts a new generation.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.generation += 1;
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(
            v.generation, self.generation,
            "Var from tape generation {} used in generation {}",
            v.generation, self.generation
        );
        v.id
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var {
            id: self.nodes.len() - 1,
            generation: self.generation,
        }
    }

    fn var(&self, id: usize) -> Var {
        Var {
            id,
            generation: self.generation,
        }
    }

    fn val(&self, id: usize) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let i = self.idx(v);
        self.val(i)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.leaf(Tensor::scalar(x))
    }

    pub fn vector(&mut self, xs: Vec<f64>) -> Var {
        self.leaf(Tensor::vector(xs))
    }

    fn check_same(&self, a: usize, b: usize, what: &str) {
        let (ta, tb) = (self.val(a), self.val(b));
        assert!(
            ta.same_shape(tb),
            "{what}: shape {} vs {}",
            ta.shape_str(),
            tb.shape_str()
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (a, b) = (self.idx(a), self.idx(b));
        self.add_ids(a, b)
    }

    fn add_ids(&mut self, a: usize, b: usize) -> Var {
        self.check_same(a, b, "add");
        let v = self.val(a).zip_map(self.val(b), |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (a, b) = (self.idx(a), self.idx(b));
        self.check_same(a, b, "sub");
        let v = self.val(a).zip_map(self.val(b), |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (a, b) = (self.idx(a), self.idx(b));
        self.mul_ids(a, b)
    }

    fn mul_ids(&mut self, a: usize, b: usize) -> Var {
        self.check_same(a, b, "mul");
        let v = self.val(a).zip_map(self.val(b), |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    /// `alpha * a + beta`, elementwise.
    pub fn affine(&mut self, a: Var, alpha: f64, beta: f64) -> Var {
        let a = self.idx(a);
        self.affine_id(a, alpha, beta)
    }

    fn affine_id(&mut self, a: usize, alpha: f64, beta: f64) -> Var {
        let v = self.val(a).map(|x| alpha * x + beta);
        self.push(Op::Affine(a, alpha), v)
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        self.affine(a, alpha, 0.0)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 0.0)
    }

    /// Multiplies a tensor by a 1x1 node.
    pub fn scale_by(&mut self, t: Var, s: Var) -> Var {
        let (t, s) = (self.idx(t), self.idx(s));
        self.scale_by_ids(t, s)
    }

    fn scale_by_ids(&mut self, t: usize, s: usize) -> Var {
        assert!(self.val(s).is_scalar(), "scale_by: second operand must be 1x1");
        let k = self.val(s).item();
        let v = self.val(t).map(|x| x * k);
        self.push(Op::ScaleBy(t, s), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let a = self.idx(a);
        let v = self.val(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let a = self.idx(a);
        let v = self.val(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let a = self.idx(a);
        let v = self.val(a).map(f64::ln);
        self.push(Op::Ln(a), v)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let a = self.idx(a);
        self.recip_id(a)
    }

    fn recip_id(&mut self, a: usize) -> Var {
        let v = self.val(a).map(|x| 1.0 / x);
        self.push(Op::Recip(a), v)
    }

    /// Clamps into `[lo, hi]`; the derivative is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let a = self.idx(a);
        let v = self.val(a).map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let (w, x) = (self.idx(w), self.idx(x));
        self.matvec_ids(w, x)
    }

    fn matvec_ids(&mut self, w: usize, x: usize) -> Var {
        let (tw, tx) = (self.val(w), self.val(x));
        assert!(
            tx.cols == 1 && tw.cols == tx.rows,
            "matvec: {} * {}",
            tw.shape_str(),
            tx.shape_str()
        );
        let v = Tensor::vector(tw.matvec(&tx.data));
        self.push(Op::MatVec(w, x), v)
    }

    /// `w^T y`.
    pub fn matvec_t(&mut self, w: Var, y: Var) -> Var {
        let (w, y) = (self.idx(w), self.idx(y));
        self.matvec_t_ids(w, y)
    }

    fn matvec_t_ids(&mut self, w: usize, y: usize) -> Var {
        let (tw, ty) = (self.val(w), self.val(y));
        assert!(
            ty.cols == 1 && tw.rows == ty.rows,
            "matvec_t: {}^T * {}",
            tw.shape_str(),
            ty.shape_str()
        );
        let v = Tensor::vector(tw.matvec_t(&ty.data));
        self.push(Op::MatTVec(w, y), v)
    }

    /// `u v^T` for column vectors.
    pub fn outer(&mut self, u: Var, v: Var) -> Var {
        let (u, v) = (self.idx(u), self.idx(v));
        self.outer_ids(u, v)
    }

    fn outer_ids(&mut self, u: usize, v: usize) -> Var {
        let t = Tensor::outer(&self.val(u).data, &self.val(v).data);
        self.push(Op::Outer(u, v), t)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let a = self.idx(a);
        self.sum_id(a)
    }

    fn sum_id(&mut self, a: usize) -> Var {
        let v = Tensor::scalar(self.val(a).sum());
        self.push(Op::Sum(a), v)
    }

    /// Frobenius inner product, a 1x1 result.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (a, b) = (self.idx(a), self.idx(b));
        self.dot_ids(a, b)
    }

    fn dot_ids(&mut self, a: usize, b: usize) -> Var {
        self.check_same(a, b, "dot");
        let v = Tensor::scalar(self.val(a).dot(self.val(b)));
        self.push(Op::Dot(a, b), v)
    }

    /// Repeats a 1x1 node into a `rows x cols` tensor.
    pub fn broadcast(&mut self, s: Var, rows: usize, cols: usize) -> Var {
        let s = self.idx(s);
        self.broadcast_id(s, rows, cols)
    }

    fn broadcast_id(&mut self, s: usize, rows: usize, cols: usize) -> Var {
        assert!(self.val(s).is_scalar(), "broadcast: operand must be 1x1");
        let v = Tensor::new(rows, cols, vec![self.val(s).item(); rows * cols]);
        self.push(Op::Broadcast(s), v)
    }

    /// Entries `start..start + len` of a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let a = self.idx(a);
        self.slice_id(a, start, len)
    }

    fn slice_id(&mut self, a: usize, start: usize, len: usize) -> Var {
        let t = self.val(a);
        assert!(t.cols == 1 && start + len <= t.rows, "slice out of range");
        let v = Tensor::vector(t.data[start..start + len].to_vec());
        self.push(Op::Slice(a, start), v)
    }

    /// Embeds a vector at `start` inside a zero vector of length `total`.
    pub fn pad(&mut self, a: Var, start: usize, total: usize) -> Var {
        let a = self.idx(a);
        self.pad_id(a, start, total)
    }

    fn pad_id(&mut self, a: usize, start: usize, total: usize) -> Var {
        let t = self.val(a);
        assert!(t.cols == 1 && start + t.rows <= total, "pad out of range");
        let mut data = vec![0.0; total];
        data[start..start + t.rows].copy_from_slice(&t.data);
        self.push(Op::Pad(a, start), Tensor::vector(data))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (a, b) = (self.idx(a), self.idx(b));
        let (ta, tb) = (self.val(a), self.val(b));
        assert!(ta.cols == 1 && tb.cols == 1, "concat expects column vectors");
        let mut data = ta.data.clone();
        data.extend_from_slice(&tb.data);
        self.push(Op::Concat(a, b), Tensor::vector(data))
    }

    /// Numeric reverse pass from a scalar `root`.
    ///
    /// Adjoints start from zero on every call, so repeated calls never mix.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let r = self.idx(root);
        let rv = self.val(r);
        if !rv.is_scalar() {
            return Err(AutodiffError::NonScalarRoot {
                rows: rv.rows,
                cols: rv.cols,
            });
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; r + 1];
        adj[r] = Some(Tensor::scalar(1.0));
        for i in (0..=r).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.backprop_numeric(i, &g, &mut adj);
            adj[i] = Some(g);
        }
        Ok(Gradients {
            adjoints: adj,
            generation: self.generation,
        })
    }

    fn backprop_numeric(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let y = self.val(i);
        match self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(adj, a, g.clone());
                accumulate(adj, b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(adj, a, g.clone());
                accumulate(adj, b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                accumulate(adj, a, g.zip_map(self.val(b), |x, y| x * y));
                accumulate(adj, b, g.zip_map(self.val(a), |x, y| x * y));
            }
            Op::Affine(a, alpha) => accumulate(adj, a, g.map(|x| alpha * x)),
            Op::ScaleBy(t, s) => {
                let k = self.val(s).item();
                accumulate(adj, t, g.map(|x| x * k));
                accumulate(adj, s, Tensor::scalar(g.dot(self.val(t))));
            }
            Op::Tanh(a) => accumulate(adj, a, g.zip_map(y, |g, y| g * (1.0 - y * y))),
            Op::Sigmoid(a) => accumulate(adj, a, g.zip_map(y, |g, y| g * y * (1.0 - y))),
            Op::Ln(a) => accumulate(adj, a, g.zip_map(self.val(a), |g, x| g / x)),
            Op::Recip(a) => accumulate(adj, a, g.zip_map(y, |g, y| -g * y * y)),
            Op::Clamp(a, lo, hi) => accumulate(
                adj,
                a,
                g.zip_map(self.val(a), |g, x| if x >= lo && x <= hi { g } else { 0.0 }),
            ),
            Op::MatVec(w, x) => {
                accumulate(adj, w, Tensor::outer(&g.data, &self.val(x).data));
                accumulate(adj, x, Tensor::vector(self.val(w).matvec_t(&g.data)));
            }
            Op::MatTVec(w, v) => {
                accumulate(adj, w, Tensor::outer(&self.val(v).data, &g.data));
                accumulate(adj, v, Tensor::vector(self.val(w).matvec(&g.data)));
            }
            Op::Outer(u, v) => {
                accumulate(adj, u, Tensor::vector(g.matvec(&self.val(v).data)));
                accumulate(adj, v, Tensor::vector(g.matvec_t(&self.val(u).data)));
            }
            Op::Sum(a) => {
                let ta = self.val(a);
                accumulate(adj, a, Tensor::new(ta.rows, ta.cols, vec![g.item(); ta.len()]));
            }
            Op::Dot(a, b) => {
                let k = g.item();
                accumulate(adj, a, self.val(b).map(|x| x * k));
                accumulate(adj, b, self.val(a).map(|x| x * k));
            }
            Op::Broadcast(s) => accumulate(adj, s, Tensor::scalar(g.sum())),
            Op::Slice(a, start) => {
                let mut data = vec![0.0; self.val(a).len()];
                data[start..start + g.len()].copy_from_slice(&g.data);
                accumulate(adj, a, Tensor::vector(data));
            }
            Op::Pad(a, start) => {
                let n = self.val(a).len();
                accumulate(adj, a, Tensor::vector(g.data[start..start + n].to_vec()));
            }
            Op::Concat(a, b) => {
                let n = self.val(a).len();
                accumulate(adj, a, Tensor::vector(g.data[..n].to_vec()));
                accumulate(adj, b, Tensor::vector(g.data[n..].to_vec()));
            }
        }
    }

    /// Gradients of a scalar `root` with respect to `wrt`, recorded as new
    /// tape nodes so they can be differentiated again.
    ///
    /// Only nodes on a path from some `wrt` entry to `root` are visited. An
    /// entry that does not influence `root` gets a zero leaf.
    pub fn grad(&mut self, root: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let r = self.idx(root);
        let rv = self.val(r);
        if !rv.is_scalar() {
            return Err(AutodiffError::NonScalarRoot {
                rows: rv.rows,
                cols: rv.cols,
            });
        }
        let wrt_ids: Vec<usize> = wrt.iter().map(|&w| self.idx(w)).collect();
        let n = r + 1;
        let mut needs = vec![false; n];
        for &w in &wrt_ids {
            if w < n {
                needs[w] = true;
            }
        }
        let lo = wrt_ids.iter().copied().filter(|&w| w < n).min().unwrap_or(n);
        for i in lo..n {
            if !needs[i] {
                needs[i] = self.nodes[i]
                    .op
                    .inputs()
                    .iter()
                    .flatten()
                    .any(|&j| needs[j]);
            }
        }

        let mut adj: Vec<Option<usize>> = vec![None; n];
        if needs[r] {
            adj[r] = Some(self.scalar(1.0).id);
        }
        for i in (lo..n).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = adj[i] else { continue };
            let op = self.nodes[i].op;
            let mut contributions: Vec<(usize, usize)> = Vec::with_capacity(2);
            let want = |j: usize| needs[j];
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    if want(a) {
                        contributions.push((a, g));
                    }
                    if want(b) {
                        contributions.push((b, g));
                    }
                }
                Op::Sub(a, b) => {
                    if want(a) {
                        contributions.push((a, g));
                    }
                    if want(b) {
                        contributions.push((b, self.affine_id(g, -1.0, 0.0).id));
                    }
                }
                Op::Mul(a, b) => {
                    if want(a) {
                        contributions.push((a, self.mul_ids(g, b).id));
                    }
                    if want(b) {
                        contributions.push((b, self.mul_ids(g, a).id));
                    }
                }
                Op::Affine(a, alpha) => {
                    contributions.push((a, self.affine_id(g, alpha, 0.0).id));
                }
                Op::ScaleBy(t, s) => {
                    if want(t) {
                        contributions.push((t, self.scale_by_ids(g, s).id));
                    }
                    if want(s) {
                        contributions.push((s, self.dot_ids(g, t).id));
                    }
                }
                Op::Tanh(a) => {
                    let y2 = self.mul_ids(i, i).id;
                    let d = self.affine_id(y2, -1.0, 1.0).id;
                    contributions.push((a, self.mul_ids(g, d).id));
                }
                Op::Sigmoid(a) => {
                    let one_minus = self.affine_id(i, -1.0, 1.0).id;
                    let d = self.mul_ids(i, one_minus).id;
                    contributions.push((a, self.mul_ids(g, d).id));
                }
                Op::Ln(a) => {
                    let inv = self.recip_id(a).id;
                    contributions.push((a, self.mul_ids(g, inv).id));
                }
                Op::Recip(a) => {
                    let y2 = self.mul_ids(i, i).id;
                    let d = self.affine_id(y2, -1.0, 0.0).id;
                    contributions.push((a, self.mul_ids(g, d).id));
                }
                Op::Clamp(a, lo, hi) => {
                    let mask = self
                        .val(a)
                        .map(|x| if x >= lo && x <= hi { 1.0 } else { 0.0 });
                    let m = self.leaf(mask).id;
                    contributions.push((a, self.mul_ids(g, m).id));
                }
                Op::MatVec(w, x) => {
                    if want(w) {
                        contributions.push((w, self.outer_ids(g, x).id));
                    }
                    if want(x) {
                        contributions.push((x, self.matvec_t_ids(w, g).id));
                    }
                }
                Op::MatTVec(w, v) => {
                    if want(w) {
                        contributions.push((w, self.outer_ids(v, g).id));
                    }
                    if want(v) {
                        contributions.push((v, self.matvec_ids(w, g).id));
                    }
                }
                Op::Outer(u, v) => {
                    if want(u) {
                        contributions.push((u, self.matvec_ids(g, v).id));
                    }
                    if want(v) {
                        contributions.push((v, self.matvec_t_ids(g, u).id));
                    }
                }
                Op::Sum(a) => {
                    let (rows, cols) = (self.val(a).rows, self.val(a).cols);
                    contributions.push((a, self.broadcast_id(g, rows, cols).id));
                }
                Op::Dot(a, b) => {
                    if want(a) {
                        contributions.push((a, self.scale_by_ids(b, g).id));
                    }
                    if want(b) {
                        contributions.push((b, self.scale_by_ids(a, g).id));
                    }
                }
                Op::Broadcast(s) => contributions.push((s, self.sum_id(g).id)),
                Op::Slice(a, start) => {
                    let total = self.val(a).len();
                    contributions.push((a, self.pad_id(g, start, total).id));
                }
                Op::Pad(a, start) => {
                    let len = self.val(a).len();
                    contributions.push((a, self.slice_id(g, start, len).id));
                }
                Op::Concat(a, b) => {
                    let na = self.val(a).len();
                    let nb = self.val(b).len();
                    if want(a) {
                        contributions.push((a, self.slice_id(g, 0, na).id));
                    }
                    if want(b) {
                        contributions.push((b, self.slice_id(g, na, nb).id));
                    }
                }
            }
            for (j, c) in contributions {
                adj[j] = Some(match adj[j] {
                    Some(prev) => self.add_ids(prev, c).id,
                    None => c,
                });
            }
        }

        Ok(wrt_ids
            .iter()
            .map(|&w| match adj.get(w).copied().flatten() {
                Some(id) => self.var(id),
                None => {
                    let t = self.val(w);
                    let z = Tensor::zeros(t.rows, t.cols);
                    self.leaf(z)
                }
            })
            .collect())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let mut t = Tape::new();
        let x = t.scalar(3.0);
        let y = t.scalar(4.0);
        let z = t.mul(x, y);
        let g = t.backward(z).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 4.0);
        assert_eq!(g.get(y).unwrap().item(), 3.0);
    }

    #[test]
    fn tanh_slope_at_zero() {
        let mut t = Tape::new();
        let x = t.scalar(0.0);
        let y = t.tanh(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 1.0);
    }

    #[test]
    fn reused_node_accumulates() {
        let mut t = Tape::new();
        let x = t.scalar(3.0);
        let y = t.mul(x, x);
        let z = t.add(y, x);
        let g = t.backward(z).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 7.0);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut t = Tape::new();
        let x = t.vector(vec![1.0, 2.0]);
        assert!(matches!(
            t.backward(x),
            Err(AutodiffError::NonScalarRoot { rows: 2, cols: 1 })
        ));
        assert!(t.grad(x, &[x]).is_err());
    }

    #[test]
    fn unrelated_node_has_no_adjoint() {
        let mut t = Tape::new();
        let x = t.scalar(1.0);
        let unrelated = t.scalar(5.0);
        let y = t.tanh(x);
        let g = t.backward(y).unwrap();
        assert!(g.get(unrelated).is_none());
        let sym = t.grad(y, &[unrelated]).unwrap();
        assert_eq!(t.value(sym[0]).item(), 0.0);
    }

    #[test]
    #[should_panic(expected = "generation")]
    fn stale_var_panics() {
        let mut t = Tape::new();
        let x = t.scalar(1.0);
        t.clear();
        let _ = t.value(x);
    }

    #[test]
    fn second_derivative_of_cube() {
        // d/dx (d/dx x^3) = 6x
        let mut t = Tape::new();
        let x = t.scalar(2.0);
        let x2 = t.mul(x, x);
        let x3 = t.mul(x2, x);
        let dx = t.grad(x3, &[x]).unwrap()[0];
        assert_eq!(t.value(dx).item(), 12.0);
        let g = t.backward(dx).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 12.0);
    }

    #[test]
    fn slice_pad_concat_round_trip() {
        let mut t = Tape::new();
        let a = t.vector(vec![1.0, 2.0]);
        let b = t.vector(vec![3.0]);
        let c = t.concat(a, b);
        let s = t.slice(c, 1, 2);
        let p = t.pad(s, 0, 4);
        let w = t.vector(vec![10.0, 20.0, 30.0, 40.0]);
        let root = t.dot(p, w);
        assert_eq!(t.value(root).item(), 2.0 * 10.0 + 3.0 * 20.0);
        let g = t.backward(root).unwrap();
        assert_eq!(g.get(a).unwrap().data, vec![0.0, 10.0]);
        assert_eq!(g.get(b).unwrap().data, vec![20.0]);
    }
}
