//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! [`Tape::gradients`] walks the nodes backwards once and returns the adjoint
//! of every node with respect to a scalar (1x1) output. Operations are the
//! ones the sparse-GP objectives need: elementwise maps, products, triangular
//! algebra, the SE-ARD kernel, and a handful of gather/mix helpers.

use crate::numerics::cholesky::cholesky_plain;
use crate::numerics::matrix::{solve_lower_in_place, solve_lower_transpose_in_place, DenseMatrix};
use crate::scalar::Real;
use std::cell::{Ref, RefCell};

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    MulScalarVar(usize, usize),
    Scale(usize, T),
    AddConst(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Exp(usize),
    Ln(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Square(usize),
    Sqrt(usize),
    ClampMin(usize, T),
    Sum(usize),
    RowSums(usize),
    ColSums(usize),
    Diag(usize),
    GatherRows(usize, Vec<usize>),
    ConcatCols(Vec<usize>),
    Broadcast(usize),
    Cholesky(usize),
    SolveLower(usize, usize),
    SolveLowerT(usize, usize),
    SeArd { x1: usize, x2: usize, log_sf2: usize, log_ls: usize },
    Mix(usize, usize),
    LowerFromRaw(usize),
    LogSumExp(usize),
    RowLogSumExp(usize),
}

#[derive(Debug)]
struct Node<T> {
    value: DenseMatrix<T>,
    op: Op<T>,
}

/// Recording of a computation; see the module docs.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

/// Adjoints of every node of a tape with respect to one scalar output.
pub struct Gradients<T> {
    grads: Vec<Option<DenseMatrix<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Adjoint of `v`; zeros if the output does not depend on it.
    pub fn wrt(&self, v: Var<'_, T>) -> DenseMatrix<T> {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.id];
                DenseMatrix::zeros(r, c)
            }
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: DenseMatrix<T>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// An input node. Constants are leaves whose adjoint is simply ignored.
    pub fn leaf(&self, value: DenseMatrix<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&self, value: DenseMatrix<T>) -> Var<'_, T> {
        self.leaf(value)
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.leaf(DenseMatrix::scalar(value))
    }

    fn val(&self, id: usize) -> Ref<'_, DenseMatrix<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn unary(&self, a: usize, op: Op<T>, f: impl Fn(&DenseMatrix<T>) -> DenseMatrix<T>) -> Var<'_, T> {
        let v = f(&self.val(a));
        self.push(v, op)
    }

    fn binary(
        &self,
        a: usize,
        b: usize,
        op: Op<T>,
        f: impl Fn(&DenseMatrix<T>, &DenseMatrix<T>) -> DenseMatrix<T>,
    ) -> Var<'_, T> {
        let v = {
            let nodes = self.nodes.borrow();
            f(&nodes[a].value, &nodes[b].value)
        };
        self.push(v, op)
    }

    /// Concatenates column blocks with equal row counts.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t, T>]) -> Var<'t, T> {
        let v = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].id].value.rows();
            let total: usize = parts.iter().map(|p| nodes[p.id].value.cols()).sum();
            let mut out = DenseMatrix::zeros(rows, total);
            let mut off = 0;
            for p in parts {
                let m = &nodes[p.id].value;
                assert_eq!(m.rows(), rows, "concat_cols row mismatch");
                for i in 0..rows {
                    out.row_mut(i)[off..off + m.cols()].copy_from_slice(m.row(i));
                }
                off += m.cols();
            }
            out
        };
        self.push(v, Op::ConcatCols(parts.iter().map(|p| p.id).collect()))
    }

    /// SE-ARD kernel matrix `sf2 * exp(-0.5 * sum_d (x1_id - x2_jd)^2 / l_d^2)`
    /// with `sf2 = exp(log_sf2)` and `l = exp(log_ls)`.
    pub fn se_ard<'t>(
        &'t self,
        x1: Var<'t, T>,
        x2: Var<'t, T>,
        log_sf2: Var<'t, T>,
        log_ls: Var<'t, T>,
    ) -> Var<'t, T> {
        let v = {
            let nodes = self.nodes.borrow();
            let sf2 = nodes[log_sf2.id].value.item().exp();
            let ls: Vec<T> = nodes[log_ls.id].value.as_slice().iter().map(|l| l.exp()).collect();
            se_ard_matrix(&nodes[x1.id].value, &nodes[x2.id].value, sf2, &ls)
        };
        self.push(v, Op::SeArd { x1: x1.id, x2: x2.id, log_sf2: log_sf2.id, log_ls: log_ls.id })
    }

    /// Reverse sweep from the scalar `output`.
    pub fn gradients(&self, output: Var<'_, T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[output.id].value.shape(), (1, 1), "gradient of a non-scalar output");
        let mut grads: Vec<Option<DenseMatrix<T>>> = vec![None; output.id + 1];
        grads[output.id] = Some(DenseMatrix::scalar(T::one()));
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            backward(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        grads.resize(nodes.len(), None);
        Gradients { grads, shapes }
    }
}

fn accumulate<T: Real>(grads: &mut [Option<DenseMatrix<T>>], id: usize, g: DenseMatrix<T>) {
    match &mut grads[id] {
        Some(acc) => acc.add_assign_scaled(&g, T::one()),
        slot @ None => *slot = Some(g),
    }
}

fn backward<T: Real>(
    nodes: &[Node<T>],
    id: usize,
    g: &DenseMatrix<T>,
    grads: &mut [Option<DenseMatrix<T>>],
) {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, g.scale(-T::one()));
        }
        Op::Mul(a, b) => {
            accumulate(grads, *a, g.hadamard(val(*b)));
            accumulate(grads, *b, g.hadamard(val(*a)));
        }
        Op::Div(a, b) => {
            let gb = g.hadamard(out).zip_map(val(*b), |x, y| -x / y);
            accumulate(grads, *a, g.zip_map(val(*b), |x, y| x / y));
            accumulate(grads, *b, gb);
        }
        Op::AddRow(a, r) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *r, col_sums(g));
        }
        Op::MulCol(a, c) => {
            let cv = val(*c);
            let av = val(*a);
            let ga = DenseMatrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * cv[(i, 0)]);
            let gc = DenseMatrix::from_fn(g.rows(), 1, |i, _| {
                g.row(i).iter().zip(av.row(i)).map(|(&x, &y)| x * y).sum()
            });
            accumulate(grads, *a, ga);
            accumulate(grads, *c, gc);
        }
        Op::MulScalarVar(a, s) => {
            let sv = val(*s).item();
            let gs: T = g.as_slice().iter().zip(val(*a).as_slice()).map(|(&x, &y)| x * y).sum();
            accumulate(grads, *a, g.scale(sv));
            accumulate(grads, *s, DenseMatrix::scalar(gs));
        }
        Op::Scale(a, c) => accumulate(grads, *a, g.scale(*c)),
        Op::AddConst(a) => accumulate(grads, *a, g.clone()),
        Op::MatMul(a, b) => {
            accumulate(grads, *a, g.matmul_t(val(*b)));
            accumulate(grads, *b, val(*a).t_matmul(g));
        }
        Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
        Op::Exp(a) => accumulate(grads, *a, g.hadamard(out)),
        Op::Ln(a) => accumulate(grads, *a, g.zip_map(val(*a), |x, y| x / y)),
        Op::Tanh(a) => accumulate(grads, *a, g.zip_map(out, |x, t| x * (T::one() - t * t))),
        Op::Sigmoid(a) => accumulate(grads, *a, g.zip_map(out, |x, s| x * s * (T::one() - s))),
        Op::Relu(a) => accumulate(
            grads,
            *a,
            g.zip_map(val(*a), |x, y| if y > T::zero() { x } else { T::zero() }),
        ),
        Op::Square(a) => accumulate(grads, *a, g.zip_map(val(*a), |x, y| x * (y + y))),
        Op::Sqrt(a) => accumulate(
            grads,
            *a,
            g.zip_map(out, |x, s| if s > T::zero() { x / (s + s) } else { T::zero() }),
        ),
        Op::ClampMin(a, lo) => accumulate(
            grads,
            *a,
            g.zip_map(val(*a), |x, y| if y > *lo { x } else { T::zero() }),
        ),
        Op::Sum(a) => {
            let (r, c) = val(*a).shape();
            accumulate(grads, *a, DenseMatrix::filled(r, c, g.item()));
        }
        Op::RowSums(a) => {
            let (r, c) = val(*a).shape();
            accumulate(grads, *a, DenseMatrix::from_fn(r, c, |i, _| g[(i, 0)]));
        }
        Op::ColSums(a) => {
            let (r, c) = val(*a).shape();
            accumulate(grads, *a, DenseMatrix::from_fn(r, c, |_, j| g[(0, j)]));
        }
        Op::Diag(a) => {
            let n = val(*a).rows();
            let m = val(*a).cols();
            let mut ga = DenseMatrix::zeros(n, m);
            for i in 0..n.min(m) {
                ga[(i, i)] = g[(i, 0)];
            }
            accumulate(grads, *a, ga);
        }
        Op::GatherRows(a, idx) => {
            let (r, c) = val(*a).shape();
            let mut ga = DenseMatrix::zeros(r, c);
            for (k, &i) in idx.iter().enumerate() {
                for (x, &y) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                    *x += y;
                }
            }
            accumulate(grads, *a, ga);
        }
        Op::ConcatCols(parts) => {
            let mut off = 0;
            for &p in parts {
                let c = val(p).cols();
                let gp = DenseMatrix::from_fn(g.rows(), c, |i, j| g[(i, off + j)]);
                off += c;
                accumulate(grads, p, gp);
            }
        }
        Op::Broadcast(a) => accumulate(grads, *a, DenseMatrix::scalar(g.sum())),
        Op::Cholesky(a) => accumulate(grads, *a, cholesky_backward(out, g)),
        Op::SolveLower(l, b) => {
            // x = L⁻¹ b
            let mut gb = g.clone();
            solve_lower_transpose_in_place(val(*l), &mut gb);
            let gl = gb.matmul_t(out).lower_triangle().scale(-T::one());
            accumulate(grads, *l, gl);
            accumulate(grads, *b, gb);
        }
        Op::SolveLowerT(l, b) => {
            // x = L⁻ᵀ b
            let mut gb = g.clone();
            solve_lower_in_place(val(*l), &mut gb);
            let gl = out.matmul_t(&gb).lower_triangle().scale(-T::one());
            accumulate(grads, *l, gl);
            accumulate(grads, *b, gb);
        }
        Op::SeArd { x1, x2, log_sf2, log_ls } => {
            let (gx1, gx2, gsf, gls) =
                se_ard_backward(val(*x1), val(*x2), val(*log_ls), out, g);
            accumulate(grads, *x1, gx1);
            accumulate(grads, *x2, gx2);
            accumulate(grads, *log_sf2, DenseMatrix::scalar(gsf));
            accumulate(grads, *log_ls, gls);
        }
        Op::Mix(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (n, h) = av.shape();
            let q = out.cols();
            let mut ga = DenseMatrix::zeros(n, h);
            let mut gb = DenseMatrix::zeros(n, h * q);
            for i in 0..n {
                let gi = g.row(i);
                let ai = av.row(i);
                let bi = bv.row(i);
                let gai = ga.row_mut(i);
                for hh in 0..h {
                    let blk = &bi[hh * q..(hh + 1) * q];
                    gai[hh] = blk.iter().zip(gi).map(|(&x, &y)| x * y).sum();
                }
                let gbi = gb.row_mut(i);
                for hh in 0..h {
                    for qq in 0..q {
                        gbi[hh * q + qq] = gi[qq] * ai[hh];
                    }
                }
            }
            accumulate(grads, *a, ga);
            accumulate(grads, *b, gb);
        }
        Op::LowerFromRaw(a) => {
            let n = out.rows();
            let ga = DenseMatrix::from_fn(n, n, |i, j| {
                if i > j {
                    g[(i, j)]
                } else if i == j {
                    g[(i, i)] * out[(i, i)]
                } else {
                    T::zero()
                }
            });
            accumulate(grads, *a, ga);
        }
        Op::LogSumExp(a) => {
            let lse = out.item();
            let gv = g.item();
            accumulate(grads, *a, val(*a).map(|x| gv * (x - lse).exp()));
        }
        Op::RowLogSumExp(a) => {
            let v = val(*a);
            accumulate(grads, *a, DenseMatrix::from_fn(v.rows(), v.cols(), |i, j| g[(i, 0)] * (v[(i, j)] - out[(i, 0)]).exp()));
        }
    }
}

fn col_sums<T: Real>(m: &DenseMatrix<T>) -> DenseMatrix<T> {
    let mut out = DenseMatrix::zeros(1, m.cols());
    for i in 0..m.rows() {
        for (o, &v) in out.as_mut_slice().iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    out
}

/// Adjoint of `A = L Lᵀ` for symmetric `A`: `½(S + Sᵀ)` with
/// `S = L⁻ᵀ Φ(Lᵀ L̄) L⁻¹`, where Φ keeps the lower triangle and halves the diagonal.
fn cholesky_backward<T: Real>(l: &DenseMatrix<T>, gl: &DenseMatrix<T>) -> DenseMatrix<T> {
    let n = l.rows();
    let gl = gl.lower_triangle();
    let p = l.t_matmul(&gl);
    let mut phi = p.lower_triangle();
    for i in 0..n {
        phi[(i, i)] = phi[(i, i)] * T::lit(0.5);
    }
    // S = L⁻ᵀ Φ L⁻¹ = L⁻ᵀ (L⁻ᵀ Φᵀ)ᵀ
    let mut tmp = phi.transpose();
    solve_lower_transpose_in_place(l, &mut tmp);
    let mut s = tmp.transpose();
    solve_lower_transpose_in_place(l, &mut s);
    DenseMatrix::from_fn(n, n, |i, j| T::lit(0.5) * (s[(i, j)] + s[(j, i)]))
}

pub(crate) fn se_ard_matrix<T: Real>(
    x1: &DenseMatrix<T>,
    x2: &DenseMatrix<T>,
    sf2: T,
    ls: &[T],
) -> DenseMatrix<T> {
    let d = ls.len();
    assert!(x1.cols() == d && x2.cols() == d, "se_ard input dimension mismatch");
    let inv: Vec<T> = ls.iter().map(|&l| T::one() / l).collect();
    let s1 = DenseMatrix::from_fn(x1.rows(), d, |i, k| x1[(i, k)] * inv[k]);
    let s2 = DenseMatrix::from_fn(x2.rows(), d, |i, k| x2[(i, k)] * inv[k]);
    let n1: Vec<T> = (0..s1.rows()).map(|i| s1.row(i).iter().map(|&v| v * v).sum()).collect();
    let n2: Vec<T> = (0..s2.rows()).map(|i| s2.row(i).iter().map(|&v| v * v).sum()).collect();
    let cross = s1.matmul_t(&s2);
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    DenseMatrix::from_fn(x1.rows(), x2.rows(), |i, j| {
        let r2 = (n1[i] + n2[j] - two * cross[(i, j)]).max(T::zero());
        sf2 * (-half * r2).exp()
    })
}

#[allow(clippy::type_complexity)]
fn se_ard_backward<T: Real>(
    x1: &DenseMatrix<T>,
    x2: &DenseMatrix<T>,
    log_ls: &DenseMatrix<T>,
    k: &DenseMatrix<T>,
    gk: &DenseMatrix<T>,
) -> (DenseMatrix<T>, DenseMatrix<T>, T, DenseMatrix<T>) {
    let (n, m) = k.shape();
    let d = x1.cols();
    let gg = gk.hadamard(k);
    let gsf = gg.sum();
    let row: Vec<T> = (0..n).map(|i| gg.row(i).iter().copied().sum()).collect();
    let colv = col_sums(&gg);
    let col = colv.as_slice();
    let g_x2 = gg.matmul(x2); // n x d
    let gt_x1 = gg.t_matmul(x1); // m x d
    let mut gx1 = DenseMatrix::zeros(n, d);
    let mut gx2 = DenseMatrix::zeros(m, d);
    let mut gls = DenseMatrix::zeros(1, d);
    for dd in 0..d {
        let l = log_ls.as_slice()[dd].exp();
        let il2 = T::one() / (l * l);
        let mut acc = T::zero();
        for i in 0..n {
            let xi = x1[(i, dd)];
            gx1[(i, dd)] = -(xi * row[i] - g_x2[(i, dd)]) * il2;
            acc += xi * xi * row[i] - T::lit(2.0) * xi * g_x2[(i, dd)];
        }
        for j in 0..m {
            let xj = x2[(j, dd)];
            gx2[(j, dd)] = (gt_x1[(j, dd)] - xj * col[j]) * il2;
            acc += xj * xj * col[j];
        }
        gls[(0, dd)] = acc * il2;
    }
    (gx1, gx2, gsf, gls)
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> DenseMatrix<T> {
        self.tape.val(self.id).clone()
    }

    pub fn item(&self) -> T {
        self.tape.val(self.id).item()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.val(self.id).shape()
    }

    pub fn add(self, o: Self) -> Self {
        self.tape.binary(self.id, o.id, Op::Add(self.id, o.id), |a, b| a.add(b))
    }

    pub fn sub(self, o: Self) -> Self {
        self.tape.binary(self.id, o.id, Op::Sub(self.id, o.id), |a, b| a.sub(b))
    }

    /// Elementwise product.
    pub fn mul(self, o: Self) -> Self {
        self.tape.binary(self.id, o.id, Op::Mul(self.id, o.id), |a, b| a.hadamard(b))
    }

    /// Elementwise quotient.
    pub fn div(self, o: Self) -> Self {
        self.tape.binary(self.id, o.id, Op::Div(self.id, o.id), |a, b| a.zip_map(b, |x, y| x / y))
    }

    /// Adds a 1×m row to every row.
    pub fn add_row(self, row: Self) -> Self {
        self.tape.binary(self.id, row.id, Op::AddRow(self.id, row.id), |a, r| {
            assert_eq!(r.shape(), (1, a.cols()), "add_row shape");
            DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] + r[(0, j)])
        })
    }

    /// Multiplies every row `i` by entry `i` of an n×1 column.
    pub fn mul_col(self, col: Self) -> Self {
        self.tape.binary(self.id, col.id, Op::MulCol(self.id, col.id), |a, c| {
            assert_eq!(c.shape(), (a.rows(), 1), "mul_col shape");
            DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] * c[(i, 0)])
        })
    }

    /// Multiplies by a 1×1 node.
    pub fn mul_scalar(self, s: Self) -> Self {
        self.tape.binary(self.id, s.id, Op::MulScalarVar(self.id, s.id), |a, s| a.scale(s.item()))
    }

    pub fn scale(self, c: T) -> Self {
        self.tape.unary(self.id, Op::Scale(self.id, c), |a| a.scale(c))
    }

    pub fn neg(self) -> Self {
        self.scale(-T::one())
    }

    pub fn add_const(self, c: T) -> Self {
        self.tape.unary(self.id, Op::AddConst(self.id), |a| a.map(|v| v + c))
    }

    /// Adds a constant to the diagonal (jitter); the constant is not differentiated.
    pub fn add_diag_const(self, c: T) -> Self {
        self.tape.unary(self.id, Op::AddConst(self.id), |a| {
            let mut m = a.clone();
            m.add_diag(c);
            m
        })
    }

    pub fn matmul(self, o: Self) -> Self {
        self.tape.binary(self.id, o.id, Op::MatMul(self.id, o.id), |a, b| a.matmul(b))
    }

    pub fn t(self) -> Self {
        self.tape.unary(self.id, Op::Transpose(self.id), |a| a.transpose())
    }

    pub fn exp(self) -> Self {
        self.tape.unary(self.id, Op::Exp(self.id), |a| a.map(|v| v.exp()))
    }

    pub fn ln(self) -> Self {
        self.tape.unary(self.id, Op::Ln(self.id), |a| a.map(|v| v.ln()))
    }

    pub fn tanh(self) -> Self {
        self.tape.unary(self.id, Op::Tanh(self.id), |a| a.map(|v| v.tanh()))
    }

    pub fn sigmoid(self) -> Self {
        self.tape.unary(self.id, Op::Sigmoid(self.id), |a| a.map(sigmoid))
    }

    pub fn relu(self) -> Self {
        self.tape.unary(self.id, Op::Relu(self.id), |a| a.map(|v| v.max(T::zero())))
    }

    pub fn square(self) -> Self {
        self.tape.unary(self.id, Op::Square(self.id), |a| a.map(|v| v * v))
    }

    pub fn sqrt(self) -> Self {
        self.tape.unary(self.id, Op::Sqrt(self.id), |a| a.map(|v| v.max(T::zero()).sqrt()))
    }

    /// `max(x, lo)` elementwise; the adjoint is zero where clamped.
    pub fn clamp_min(self, lo: T) -> Self {
        self.tape.unary(self.id, Op::ClampMin(self.id, lo), |a| a.map(|v| v.max(lo)))
    }

    pub fn sum(self) -> Self {
        self.tape.unary(self.id, Op::Sum(self.id), |a| DenseMatrix::scalar(a.sum()))
    }

    /// n×m → n×1
    pub fn row_sums(self) -> Self {
        self.tape.unary(self.id, Op::RowSums(self.id), |a| {
            DenseMatrix::from_fn(a.rows(), 1, |i, _| a.row(i).iter().copied().sum())
        })
    }

    /// n×m → 1×m
    pub fn col_sums(self) -> Self {
        self.tape.unary(self.id, Op::ColSums(self.id), col_sums)
    }

    /// Diagonal as an n×1 column.
    pub fn diag(self) -> Self {
        self.tape.unary(self.id, Op::Diag(self.id), |a| DenseMatrix::column_vector(a.diag()))
    }

    pub fn gather_rows(self, idx: &[usize]) -> Self {
        let idx = idx.to_vec();
        let v = self.tape.val(self.id).select_rows(&idx);
        self.tape.push(v, Op::GatherRows(self.id, idx))
    }

    /// Expands a 1×1 node to `rows × cols`.
    pub fn broadcast(self, rows: usize, cols: usize) -> Self {
        self.tape.unary(self.id, Op::Broadcast(self.id), |a| DenseMatrix::filled(rows, cols, a.item()))
    }

    /// Lower Cholesky factor. Panics if the input is not positive definite;
    /// callers add jitter up front.
    pub fn cholesky(self) -> Self {
        self.tape.unary(self.id, Op::Cholesky(self.id), |a| {
            cholesky_plain(a).expect("cholesky on tape: matrix not positive definite")
        })
    }

    /// Fallible Cholesky: `None` if the input is not positive definite.
    pub fn try_cholesky(self) -> Option<Self> {
        let l = cholesky_plain(&self.tape.val(self.id))?;
        Some(self.tape.push(l, Op::Cholesky(self.id)))
    }

    /// `self⁻¹ b` for lower-triangular `self`.
    pub fn solve_lower(self, b: Self) -> Self {
        self.tape.binary(self.id, b.id, Op::SolveLower(self.id, b.id), |l, b| {
            let mut x = b.clone();
            solve_lower_in_place(l, &mut x);
            x
        })
    }

    /// `self⁻ᵀ b` for lower-triangular `self`.
    pub fn solve_lower_t(self, b: Self) -> Self {
        self.tape.binary(self.id, b.id, Op::SolveLowerT(self.id, b.id), |l, b| {
            let mut x = b.clone();
            solve_lower_transpose_in_place(l, &mut x);
            x
        })
    }

    /// Row-wise mixing: `out[i, q] = Σ_h self[i, h] · b[i, h·Q + q]`
    /// where `self` is n×H and `b` is n×(H·Q).
    pub fn mix(self, b: Self, q: usize) -> Self {
        self.tape.binary(self.id, b.id, Op::Mix(self.id, b.id), |a, b| {
            let (n, h) = a.shape();
            assert_eq!(b.shape(), (n, h * q), "mix shape");
            let mut out = DenseMatrix::zeros(n, q);
            for i in 0..n {
                let (ai, bi) = (a.row(i), b.row(i));
                let oi = out.row_mut(i);
                for hh in 0..h {
                    let w = ai[hh];
                    for (o, &bv) in oi.iter_mut().zip(&bi[hh * q..(hh + 1) * q]) {
                        *o += w * bv;
                    }
                }
            }
            out
        })
    }

    /// Lower-triangular matrix with exponentiated diagonal from an
    /// unconstrained square parameter; entries above the diagonal are ignored.
    pub fn lower_from_raw(self) -> Self {
        self.tape.unary(self.id, Op::LowerFromRaw(self.id), |a| {
            DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| {
                if i > j {
                    a[(i, j)]
                } else if i == j {
                    a[(i, i)].exp()
                } else {
                    T::zero()
                }
            })
        })
    }

    /// `log Σ exp(x)` over all entries, max-shifted.
    pub fn logsumexp(self) -> Self {
        self.tape.unary(self.id, Op::LogSumExp(self.id), |a| {
            DenseMatrix::scalar(logsumexp(a.as_slice()))
        })
    }

    /// Log-sum-exp of each row: n×m → n×1.
    pub fn row_logsumexp(self) -> Self {
        self.tape.unary(self.id, Op::RowLogSumExp(self.id), |a| {
            DenseMatrix::from_fn(a.rows(), 1, |i, _| logsumexp(a.row(i)))
        })
    }
}

#[inline]
pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Max-shifted log-sum-exp; `-inf` for an empty slice.
pub fn logsumexp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, RngStream};

    /// Checks the tape gradient of `build(leaf)` against central differences.
    fn check<F>(x0: DenseMatrix<f64>, build: F, tol: f64)
    where
        F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Var<'t, f64>,
    {
        let tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = build(&tape, x);
        let g = tape.gradients(y).wrt(x);
        let (r, c) = x0.shape();
        let f = |v: &[f64]| {
            let t = Tape::new();
            let xv = t.leaf(DenseMatrix::from_vec(r, c, v.to_vec()).unwrap());
            build(&t, xv).item()
        };
        let fd = finite_diff_grad(f, x0.as_slice(), 1e-6).unwrap();
        for (k, (&a, &b)) in g.as_slice().iter().zip(&fd).enumerate() {
            let err = (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
            assert!(err < tol, "coord {k}: analytic {a} vs fd {b}");
        }
    }

    fn spd(n: usize, seed: u64) -> DenseMatrix<f64> {
        let g: DenseMatrix<f64> = RngStream::new(seed, 0).normal_matrix(n, n);
        let mut m = g.matmul_t(&g);
        m.add_diag(n as f64);
        m
    }

    #[test]
    fn elementwise_ops() {
        let x0 = RngStream::new(1, 0).normal_matrix(3, 2);
        check(x0.clone(), |_, x| x.tanh().mul(x).exp().sum(), 1e-6);
        check(x0.clone(), |_, x| x.sigmoid().square().row_sums().sum(), 1e-6);
        check(x0.map(|v: f64| f64::abs(v) + 0.1), |_, x| x.ln().sqrt().sum(), 1e-6);
        check(x0.clone(), |_, x| x.logsumexp(), 1e-6);
        check(x0, |_, x| x.row_logsumexp().square().sum(), 1e-6);
    }

    #[test]
    fn products_and_broadcasts() {
        let mut rng = RngStream::new(2, 0);
        let b: DenseMatrix<f64> = rng.normal_matrix(2, 4);
        let r: DenseMatrix<f64> = rng.normal_matrix(1, 4);
        let c: DenseMatrix<f64> = rng.normal_matrix(3, 1);
        let x0 = rng.normal_matrix(3, 2);
        check(
            x0,
            |t, x| {
                let bb = t.constant(b.clone());
                let rr = t.constant(r.clone());
                let cc = t.constant(c.clone());
                x.matmul(bb).add_row(rr).mul_col(cc).tanh().t().col_sums().square().sum()
            },
            1e-6,
        );
    }

    #[test]
    fn cholesky_and_solves() {
        let a0 = spd(4, 3);
        let rhs: DenseMatrix<f64> = RngStream::new(4, 0).normal_matrix(4, 2);
        // log det and a quadratic form, symmetric perturbations only
        check(
            a0.clone(),
            |t, a| {
                let sym = a.add(a.t()).scale(0.5);
                let l = sym.cholesky();
                let b = t.constant(rhs.clone());
                let x = l.solve_lower(b);
                let y = l.solve_lower_t(x);
                l.diag().ln().sum().add(y.square().sum())
            },
            1e-5,
        );
    }

    #[test]
    fn se_ard_gradients() {
        let mut rng = RngStream::new(5, 0);
        let x1: DenseMatrix<f64> = rng.normal_matrix(3, 2);
        let x2: DenseMatrix<f64> = rng.normal_matrix(4, 2);
        let w: DenseMatrix<f64> = rng.normal_matrix(3, 4);
        let hyp = DenseMatrix::row_vector(vec![0.3, -0.2, 0.4]);
        let (x1c, x2c, wc, hc) = (x1.clone(), x2.clone(), w.clone(), hyp.clone());
        // w.r.t. x1
        check(
            x1.clone(),
            move |t, x| {
                let k = t.se_ard(
                    x,
                    t.constant(x2c.clone()),
                    t.scalar(0.3),
                    t.constant(DenseMatrix::row_vector(vec![-0.2, 0.4])),
                );
                k.mul(t.constant(wc.clone())).sum()
            },
            1e-6,
        );
        // w.r.t. x2 and the hyperparameters packed as [log_sf2, log_l0, log_l1]
        let w2 = w.clone();
        check(
            x2,
            move |t, x| {
                let k = t.se_ard(
                    t.constant(x1c.clone()),
                    x,
                    t.scalar(0.3),
                    t.constant(DenseMatrix::row_vector(vec![-0.2, 0.4])),
                );
                k.mul(t.constant(w2.clone())).sum()
            },
            1e-6,
        );
        check(
            hc,
            move |t, h| {
                let hv = h.value();
                let _ = hv;
                // split the packed hyperparameter vector through gathers
                let sf = h.t().gather_rows(&[0]);
                let ls = h.t().gather_rows(&[1, 2]).t();
                let k = t.se_ard(t.constant(x1.clone()), t.constant(x1.clone()), sf, ls);
                k.mul(t.constant(DenseMatrix::from_fn(3, 3, |i, j| w[(i, j)]))).sum()
            },
            1e-6,
        );
    }

    #[test]
    fn mix_and_lower_from_raw() {
        let mut rng = RngStream::new(6, 0);
        let b: DenseMatrix<f64> = rng.normal_matrix(3, 6);
        check(
            rng.normal_matrix(3, 2),
            |t, a| a.mix(t.constant(b.clone()), 3).square().sum(),
            1e-6,
        );
        let a: DenseMatrix<f64> = rng.normal_matrix(3, 2);
        check(b.clone(), |t, bb| t.constant(a.clone()).mix(bb, 3).tanh().sum(), 1e-6);
        check(
            rng.normal_matrix(3, 3),
            |_, raw| {
                let l = raw.lower_from_raw();
                l.matmul(l.t()).square().sum()
            },
            1e-6,
        );
    }

    #[test]
    fn gather_concat_broadcast() {
        let mut rng = RngStream::new(7, 0);
        check(
            rng.normal_matrix(3, 2),
            |t, x| {
                let g = x.gather_rows(&[2, 0, 2, 1]);
                let c = t.concat_cols(&[g, g.square()]);
                let s = x.sum().broadcast(4, 4);
                c.matmul(c.t()).mul(s).sum()
            },
            1e-6,
        );
    }

    #[test]
    fn logsumexp_is_stable() {
        assert!(f64::abs(logsumexp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())) < 1e-12);
        assert!(f64::abs(logsumexp(&[-1000.0f64]) + 1000.0) < 1e-12);
    }
}
