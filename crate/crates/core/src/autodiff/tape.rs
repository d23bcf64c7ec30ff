//! Reverse-mode recording over batched tensors.

use alloc::vec;
use alloc::vec::Vec;

use super::ops::{bcast_kind, bidx, kernels, Bcast, Binary, Ops, Unary};
use crate::linalg::{self, Mat};
use crate::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Unary(Unary, usize),
    Binary(Binary, usize, usize, Bcast),
    Gather(usize, Vec<usize>),
    HStack(Vec<usize>),
    VStack(Vec<usize>),
    SumAll(usize),
    RowSum(usize),
    BatchMatmul(usize, usize, usize),
    /// Inputs `(a, b)` plus the per-row Cholesky factors of `a`.
    SpdSolve(usize, usize, Mat),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Unary(u, _) => u.name(),
            Op::Binary(b, ..) => b.name(),
            Op::Gather(..) => "gather",
            Op::HStack(_) => "hstack",
            Op::VStack(_) => "vstack",
            Op::SumAll(_) => "sum_all",
            Op::RowSum(_) => "row_sum",
            Op::BatchMatmul(..) => "batch_matmul",
            Op::SpdSolve(..) => "spd_solve",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Mat,
    /// Whether any differentiable leaf feeds this node.
    live: bool,
}

/// A single-owner recording of tensor operations.
///
/// Leaves created with [`Tape::param`] are differentiable; leaves created
/// through [`Ops::constant`] are not, and nothing downstream of only
/// constants is revisited during [`Tape::backward`].
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    poison: Option<(usize, &'static str)>,
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

    /// Registers a differentiable leaf.
    pub fn param(&mut self, m: Mat) -> Var {
        self.push(Op::Leaf, m, true)
    }

    /// Errors if any recorded value was non-finite, naming the first offender.
    pub fn check(&self) -> Result<()> {
        match self.poison {
            Some((node, op)) => Err(Error::NonFinite { op, node }),
            None => Ok(()),
        }
    }

    fn push(&mut self, op: Op, value: Mat, live: bool) -> Var {
        let id = self.nodes.len();
        if self.poison.is_none() && !value.is_finite() {
            self.poison = Some((id, op.name()));
        }
        self.nodes.push(Node { op, value, live });
        Var(id)
    }

    fn live(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].live)
    }

    fn record(&mut self, op: Op, value: Mat) -> Var {
        let live = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::MatMulT(a, b) | Op::BatchMatmul(a, b, _) => self.live(&[*a, *b]),
            Op::Binary(_, a, b, _) | Op::SpdSolve(a, b, _) => self.live(&[*a, *b]),
            Op::Unary(_, a) | Op::Gather(a, _) | Op::SumAll(a) | Op::RowSum(a) => self.nodes[*a].live,
            Op::HStack(p) | Op::VStack(p) => self.live(p),
        };
        self.push(op, value, live)
    }

    /// Accumulates `d(Σ_s c_s · seed_s)/d(wrt)` and returns one gradient per
    /// `wrt` entry, shaped like the corresponding value. Seeds must be `1×1`.
    pub fn backward(&self, seeds: &[(Var, f64)], wrt: &[Var]) -> Vec<Mat> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Mat>> = vec![None; n];
        let mut top = 0;
        for &(v, c) in seeds {
            let shape = self.nodes[v.0].value.shape();
            accumulate(&mut grads[v.0], Mat::filled(shape.0, shape.1, c));
            top = top.max(v.0 + 1);
        }
        let mut keep = vec![false; n];
        for w in wrt {
            keep[w.0] = true;
        }
        let mut out: Vec<Option<Mat>> = vec![None; n];
        for id in (0..top).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if keep[id] {
                out[id] = Some(g.clone());
            }
            if !node.live {
                continue;
            }
            self.propagate(node, g, &mut grads);
        }
        wrt.iter()
            .map(|w| {
                out[w.0].clone().unwrap_or_else(|| {
                    let (r, c) = self.nodes[w.0].value.shape();
                    Mat::zeros(r, c)
                })
            })
            .collect()
    }

    fn propagate(&self, node: &Node, g: Mat, grads: &mut [Option<Mat>]) {
        let val = |i: usize| &self.nodes[i].value;
        let live = |i: usize| self.nodes[i].live;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(x, w) => {
                if live(*x) {
                    accumulate(&mut grads[*x], linalg::matmul_t(&g, val(*w)));
                }
                if live(*w) {
                    accumulate(&mut grads[*w], linalg::matmul_tn(val(*x), &g));
                }
            }
            Op::MatMulT(x, w) => {
                if live(*x) {
                    accumulate(&mut grads[*x], linalg::matmul(&g, val(*w)));
                }
                if live(*w) {
                    accumulate(&mut grads[*w], linalg::matmul_tn(&g, val(*x)));
                }
            }
            Op::Unary(op, x) => {
                let xv = val(*x);
                let mut d = g;
                for ((d, &xi), &yi) in d.data.iter_mut().zip(&xv.data).zip(&node.value.data) {
                    *d *= op.deriv(xi, yi);
                }
                accumulate(&mut grads[*x], d);
            }
            Op::Binary(op, a, b, kind) => {
                let (av, bv) = (val(*a), val(*b));
                let mut ga = live(*a).then(|| Mat::zeros(av.rows, av.cols));
                let mut gb = live(*b).then(|| Mat::zeros(bv.rows, bv.cols));
                for r in 0..av.rows {
                    for c in 0..av.cols {
                        let i = r * av.cols + c;
                        let j = bidx(*kind, r, c, av.cols, bv.cols);
                        let (da, db) = op.grads(av.data[i], bv.data[j]);
                        if let Some(ga) = ga.as_mut() {
                            ga.data[i] = g.data[i] * da;
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb.data[j] += g.data[i] * db;
                        }
                    }
                }
                if let Some(ga) = ga {
                    accumulate(&mut grads[*a], ga);
                }
                if let Some(gb) = gb {
                    accumulate(&mut grads[*b], gb);
                }
            }
            Op::Gather(x, idx) if live(*x) => {
                let xv = val(*x);
                let slot = grads[*x].get_or_insert_with(|| Mat::zeros(xv.rows, xv.cols));
                for (&i, &gi) in idx.iter().zip(&g.data) {
                    slot.data[i] += gi;
                }
            }
            Op::Gather(..) => {}
            Op::HStack(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cols = val(p).cols;
                    if live(p) {
                        let mut gp = Mat::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        accumulate(&mut grads[p], gp);
                    }
                    off += cols;
                }
            }
            Op::VStack(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = val(p).data.len();
                    if live(p) {
                        let (r, c) = val(p).shape();
                        let gp = Mat { rows: r, cols: c, data: g.data[off..off + len].to_vec() };
                        accumulate(&mut grads[p], gp);
                    }
                    off += len;
                }
            }
            Op::SumAll(x) => {
                let (r, c) = val(*x).shape();
                accumulate(&mut grads[*x], Mat::filled(r, c, g.data[0]));
            }
            Op::RowSum(x) => {
                let (r, c) = val(*x).shape();
                let mut gx = Mat::zeros(r, c);
                for i in 0..r {
                    gx.row_mut(i).fill(g.data[i]);
                }
                accumulate(&mut grads[*x], gx);
            }
            Op::BatchMatmul(a, b, p) => {
                let p = *p;
                let (av, bv) = (val(*a), val(*b));
                let mut ga = Mat::zeros(av.rows, av.cols);
                let mut gb = Mat::zeros(bv.rows, bv.cols);
                for r in 0..av.rows {
                    let (x, y, s) = (av.row(r), bv.row(r), g.row(r));
                    for i in 0..p {
                        for k in 0..p {
                            let gs = s[i * p + k];
                            if gs == 0.0 {
                                continue;
                            }
                            for m in 0..p {
                                ga.data[r * p * p + i * p + m] += gs * y[m * p + k];
                                gb.data[r * p * p + m * p + k] += gs * x[i * p + m];
                            }
                        }
                    }
                }
                if live(*a) {
                    accumulate(&mut grads[*a], ga);
                }
                if live(*b) {
                    accumulate(&mut grads[*b], gb);
                }
            }
            Op::SpdSolve(a, b, factors) => {
                let p = node.value.cols;
                let mut gb = g;
                for r in 0..gb.rows {
                    linalg::cholesky_solve(factors.row(r), p, gb.row_mut(r));
                }
                if live(*a) {
                    let mut ga = Mat::zeros(gb.rows, p * p);
                    for r in 0..gb.rows {
                        let (u, x) = (gb.row(r), node.value.row(r));
                        let o = ga.row_mut(r);
                        for i in 0..p {
                            for k in 0..p {
                                o[i * p + k] = -0.5 * (u[i] * x[k] + x[i] * u[k]);
                            }
                        }
                    }
                    accumulate(&mut grads[*a], ga);
                }
                if live(*b) {
                    accumulate(&mut grads[*b], gb);
                }
            }
        }
    }
}

fn accumulate(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(s) => {
            for (a, b) in s.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

impl Ops for Tape {
    type T = Var;

    fn constant(&mut self, m: Mat) -> Var {
        self.push(Op::Leaf, m, false)
    }

    fn value<'a>(&'a self, x: &'a Var) -> &'a Mat {
        &self.nodes[x.0].value
    }

    fn matmul(&mut self, x: &Var, w: &Var) -> Var {
        let v = linalg::matmul(self.value(x), self.value(w));
        self.record(Op::MatMul(x.0, w.0), v)
    }

    fn matmul_t(&mut self, x: &Var, w: &Var) -> Var {
        let v = linalg::matmul_t(self.value(x), self.value(w));
        self.record(Op::MatMulT(x.0, w.0), v)
    }

    fn unary(&mut self, op: Unary, x: &Var) -> Var {
        let v = kernels::unary(op, self.value(x));
        self.record(Op::Unary(op, x.0), v)
    }

    fn binary(&mut self, op: Binary, a: &Var, b: &Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let kind = bcast_kind(av, bv).expect("binary operands must broadcast");
        let v = kernels::binary(op, av, bv).expect("binary operands must broadcast");
        self.record(Op::Binary(op, a.0, b.0, kind), v)
    }

    fn gather(&mut self, x: &Var, rows: usize, cols: usize, idx: Vec<usize>) -> Var {
        let v = kernels::gather(self.value(x), rows, cols, &idx).expect("gather indices must be in range");
        self.record(Op::Gather(x.0, idx), v)
    }

    fn hstack(&mut self, parts: &[Var]) -> Var {
        let refs: Vec<&Mat> = parts.iter().map(|p| self.value(p)).collect();
        let v = kernels::hstack(&refs).expect("hstack row counts must agree");
        self.record(Op::HStack(parts.iter().map(|p| p.0).collect()), v)
    }

    fn vstack(&mut self, parts: &[Var]) -> Var {
        let refs: Vec<&Mat> = parts.iter().map(|p| self.value(p)).collect();
        let v = kernels::vstack(&refs).expect("vstack column counts must agree");
        self.record(Op::VStack(parts.iter().map(|p| p.0).collect()), v)
    }

    fn sum_all(&mut self, x: &Var) -> Var {
        let v = kernels::sum_all(self.value(x));
        self.record(Op::SumAll(x.0), v)
    }

    fn row_sum(&mut self, x: &Var) -> Var {
        let v = kernels::row_sum(self.value(x));
        self.record(Op::RowSum(x.0), v)
    }

    fn batch_matmul(&mut self, a: &Var, b: &Var, p: usize) -> Var {
        let v = kernels::batch_matmul(self.value(a), self.value(b), p).expect("batch matmul shapes must agree");
        self.record(Op::BatchMatmul(a.0, b.0, p), v)
    }

    fn spd_solve(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let p = bv.cols;
        if av.rows != bv.rows || av.cols != p * p {
            return Err(Error::Shape(alloc::format!("spd solve expects Bx{} and Bx{p}", p * p)));
        }
        let mut factors = av.clone();
        let mut x = bv.clone();
        for r in 0..bv.rows {
            linalg::cholesky_in_place(factors.row_mut(r), p).map_err(|_| Error::Cholesky { row: r })?;
            linalg::cholesky_solve(factors.row(r), p, x.row_mut(r));
        }
        Ok(self.record(Op::SpdSolve(a.0, b.0, factors), x))
    }
}
