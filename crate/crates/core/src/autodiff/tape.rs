use super::Matrix;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Relu(Var),
    MaxPoolRows { x: Var, argmax: Vec<usize> },
    EdgeAggregate { x: Var, source: Vec<usize> },
    ConcatTile { local: Var, global: Var },
    RepeatRows { x: Var, times: usize },
    AddTiled { x: Var, block: Var },
    RowSlice { x: Var, start: usize },
    Scalar { x: Var, dx: Matrix },
}

/// One differentiable buffer: value, accumulated gradient, and the rule that
/// produced it.
#[derive(Debug)]
struct Node {
    value: Matrix,
    grad: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode differentiation tape. Nodes are appended in evaluation order,
/// which is a valid topological order for the backward sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    swept: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        let (r, c) = value.shape();
        self.nodes.push(Node {
            value,
            grad: Matrix::zeros(r, c),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf whose gradient is tracked (parameters, differentiated inputs).
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].grad
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::invalid(format!("matmul {ar}x{ac} by {br}x{bc}")));
        }
        let value = self.value(a).matmul(self.value(b));
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Adds the `1 x d` row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xr, xc) = self.shape(x);
        if self.shape(b) != (1, xc) {
            let (br, bc) = self.shape(b);
            return Err(Error::invalid(format!("bias {br}x{bc} for input {xr}x{xc}")));
        }
        let mut value = self.value(x).clone();
        let bias = self.value(b).row(0).to_vec();
        for r in 0..xr {
            for (v, bb) in value.row_mut(r).iter_mut().zip(&bias) {
                *v += bb;
            }
        }
        let rg = self.needs(x) || self.needs(b);
        Ok(self.push(value, Op::AddRow(x, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::invalid(format!(
                "add {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let rg = self.needs(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Column-wise max over rows, `n x d -> 1 x d`. Ties go to the lowest row.
    pub fn maxpool_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.shape(x);
        if n == 0 {
            return Err(Error::invalid("maxpool over zero rows"));
        }
        let xv = self.value(x);
        let mut argmax = vec![0usize; d];
        let mut best = xv.row(0).to_vec();
        for r in 1..n {
            for (c, &v) in xv.row(r).iter().enumerate() {
                if v > best[c] {
                    best[c] = v;
                    argmax[c] = r;
                }
            }
        }
        let rg = self.needs(x);
        Ok(self.push(Matrix::from_vec(1, d, best), Op::MaxPoolRows { x, argmax }, rg))
    }

    /// `out[i][c] = max_j (x[nbr[i][j]][c] - x[i][c])` over a fixed neighbour
    /// table. Ties go to the lowest point index.
    pub fn edge_aggregate(&mut self, x: Var, neighbors: &[Vec<usize>]) -> Result<Var> {
        let (n, d) = self.shape(x);
        if neighbors.len() != n {
            return Err(Error::invalid(format!(
                "neighbour table has {} rows for {n} points",
                neighbors.len()
            )));
        }
        let k = neighbors.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(Error::invalid("neighbour table rows are empty"));
        }
        let mut flat = Vec::with_capacity(n * k);
        for (i, row) in neighbors.iter().enumerate() {
            if row.len() != k {
                return Err(Error::invalid(format!("neighbour row {i} has {} entries, expected {k}", row.len())));
            }
            if let Some(&j) = row.iter().find(|&&j| j >= n) {
                return Err(Error::invalid(format!("neighbour index {j} out of range for {n} points")));
            }
            let start = flat.len();
            flat.extend_from_slice(row);
            // Ascending index order makes a strict `>` pick the lowest index on ties.
            flat[start..].sort_unstable();
        }
        let xv = self.value(x);
        let mut value = Matrix::zeros(n, d);
        let mut source = vec![0usize; n * d];
        for i in 0..n {
            let center = xv.row(i);
            let out = value.row_mut(i);
            let nbrs = &flat[i * k..(i + 1) * k];
            let first = xv.row(nbrs[0]);
            for c in 0..d {
                out[c] = first[c] - center[c];
                source[i * d + c] = nbrs[0];
            }
            for &j in &nbrs[1..] {
                let xj = xv.row(j);
                for c in 0..d {
                    let v = xj[c] - center[c];
                    if v > out[c] {
                        out[c] = v;
                        source[i * d + c] = j;
                    }
                }
            }
        }
        let rg = self.needs(x);
        Ok(self.push(value, Op::EdgeAggregate { x, source }, rg))
    }

    /// `[local_i || global]` for each row of `local`.
    pub fn concat_tile(&mut self, local: Var, global: Var) -> Result<Var> {
        let (m, d) = self.shape(local);
        if self.shape(global) != (1, d) {
            let (gr, gc) = self.shape(global);
            return Err(Error::invalid(format!("concat_tile local {m}x{d} with global {gr}x{gc}")));
        }
        let lv = self.value(local);
        let gv = self.value(global).row(0);
        let mut value = Matrix::zeros(m, 2 * d);
        for r in 0..m {
            let out = value.row_mut(r);
            out[..d].copy_from_slice(lv.row(r));
            out[d..].copy_from_slice(gv);
        }
        let rg = self.needs(local) || self.needs(global);
        Ok(self.push(value, Op::ConcatTile { local, global }, rg))
    }

    /// Row `i * times + t` of the output is row `i` of `x`.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return Err(Error::invalid("repeat_rows with zero repeats"));
        }
        let (n, d) = self.shape(x);
        let xv = self.value(x);
        let mut value = Matrix::zeros(n * times, d);
        for i in 0..n {
            for t in 0..times {
                value.row_mut(i * times + t).copy_from_slice(xv.row(i));
            }
        }
        let rg = self.needs(x);
        Ok(self.push(value, Op::RepeatRows { x, times }, rg))
    }

    /// Adds row `t` of the `times x d` block to every row `i * times + t`.
    pub fn add_tiled(&mut self, x: Var, block: Var) -> Result<Var> {
        let (n, d) = self.shape(x);
        let (t, bd) = self.shape(block);
        if bd != d || t == 0 || n % t != 0 {
            return Err(Error::invalid(format!("add_tiled {n}x{d} with block {t}x{bd}")));
        }
        let mut value = self.value(x).clone();
        let bv = self.value(block);
        for r in 0..n {
            for (v, b) in value.row_mut(r).iter_mut().zip(bv.row(r % t)) {
                *v += b;
            }
        }
        let rg = self.needs(x) || self.needs(block);
        Ok(self.push(value, Op::AddTiled { x, block }, rg))
    }

    /// Rows `start..end` of `x`.
    pub fn row_slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, d) = self.shape(x);
        if start >= end || end > n {
            return Err(Error::invalid(format!("row slice {start}..{end} of {n} rows")));
        }
        let value = Matrix::from_vec(end - start, d, self.value(x).data()[start * d..end * d].to_vec());
        let rg = self.needs(x);
        Ok(self.push(value, Op::RowSlice { x, start }, rg))
    }

    /// A scalar function of `x` whose value and gradient were computed
    /// outside the tape.
    pub fn scalar_fn(&mut self, x: Var, value: f64, dx: Matrix) -> Result<Var> {
        if dx.shape() != self.shape(x) {
            return Err(Error::invalid("scalar_fn gradient shape mismatch"));
        }
        let rg = self.needs(x);
        Ok(self.push(Matrix::from_vec(1, 1, vec![value]), Op::Scalar { x, dx }, rg))
    }

    /// Zeroes every gradient so the tape can be swept again.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad.fill(0.0);
        }
        self.swept = false;
    }

    /// Back-propagates from the `1 x 1` node `loss`. Fails if called twice
    /// without [`Tape::reset_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.swept {
            return Err(Error::invalid("backward already ran on this tape; reset gradients first"));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::invalid("backward needs a 1x1 loss"));
        }
        self.swept = true;
        self.nodes[loss.0].grad.set(0, 0, 1.0);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
            let g = std::mem::replace(&mut self.nodes[id].grad, Matrix::zeros(0, 0));
            self.propagate(&op, id, &g);
            self.nodes[id].op = op;
            self.nodes[id].grad = g;
        }
        Ok(())
    }

    fn propagate(&mut self, op: &Op, id: usize, g: &Matrix) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let mut acc = std::mem::replace(&mut self.nodes[a.0].grad, Matrix::zeros(0, 0));
                    g.add_nt_matmul(&self.nodes[b.0].value, &mut acc);
                    self.nodes[a.0].grad = acc;
                }
                if self.needs(*b) {
                    let mut acc = std::mem::replace(&mut self.nodes[b.0].grad, Matrix::zeros(0, 0));
                    self.nodes[a.0].value.add_tn_matmul(g, &mut acc);
                    self.nodes[b.0].grad = acc;
                }
            }
            Op::AddRow(x, b) => {
                if self.needs(*x) {
                    self.nodes[x.0].grad.add_assign(g);
                }
                if self.needs(*b) {
                    let gb = self.nodes[b.0].grad.row_mut(0);
                    for r in 0..g.rows() {
                        for (o, v) in gb.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for p in [a, b] {
                    if self.needs(*p) {
                        self.nodes[p.0].grad.add_assign(g);
                    }
                }
            }
            Op::Relu(x) => {
                let out = &self.nodes[id].value;
                let mut masked = g.clone();
                for (m, &o) in masked.data_mut().iter_mut().zip(out.data()) {
                    if o <= 0.0 {
                        *m = 0.0;
                    }
                }
                self.nodes[x.0].grad.add_assign(&masked);
            }
            Op::MaxPoolRows { x, argmax } => {
                let gx = &mut self.nodes[x.0].grad;
                for (c, &r) in argmax.iter().enumerate() {
                    let v = gx.get(r, c) + g.get(0, c);
                    gx.set(r, c, v);
                }
            }
            Op::EdgeAggregate { x, source } => {
                let gx = &mut self.nodes[x.0].grad;
                let (n, d) = g.shape();
                for i in 0..n {
                    for c in 0..d {
                        let gv = g.get(i, c);
                        if gv == 0.0 {
                            continue;
                        }
                        let j = source[i * d + c];
                        gx.set(j, c, gx.get(j, c) + gv);
                        gx.set(i, c, gx.get(i, c) - gv);
                    }
                }
            }
            Op::ConcatTile { local, global } => {
                let d = g.cols() / 2;
                if self.needs(*local) {
                    let gl = &mut self.nodes[local.0].grad;
                    for r in 0..g.rows() {
                        for (o, v) in gl.row_mut(r).iter_mut().zip(&g.row(r)[..d]) {
                            *o += v;
                        }
                    }
                }
                if self.needs(*global) {
                    let gg = self.nodes[global.0].grad.row_mut(0);
                    for r in 0..g.rows() {
                        for (o, v) in gg.iter_mut().zip(&g.row(r)[d..]) {
                            *o += v;
                        }
                    }
                }
            }
            Op::RepeatRows { x, times } => {
                let gx = &mut self.nodes[x.0].grad;
                for r in 0..g.rows() {
                    for (o, v) in gx.row_mut(r / times).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
            }
            Op::AddTiled { x, block } => {
                if self.needs(*x) {
                    self.nodes[x.0].grad.add_assign(g);
                }
                if self.needs(*block) {
                    let gb = &mut self.nodes[block.0].grad;
                    let t = gb.rows();
                    for r in 0..g.rows() {
                        for (o, v) in gb.row_mut(r % t).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::RowSlice { x, start } => {
                let gx = &mut self.nodes[x.0].grad;
                for r in 0..g.rows() {
                    for (o, v) in gx.row_mut(start + r).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
            }
            Op::Scalar { x, dx } => {
                let s = g.get(0, 0);
                let gx = &mut self.nodes[x.0].grad;
                for (o, v) in gx.data_mut().iter_mut().zip(dx.data()) {
                    *o += s * v;
                }
            }
        }
    }
}
