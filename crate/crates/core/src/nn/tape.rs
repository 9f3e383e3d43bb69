//! Reverse-mode automatic differentiation over dense 2-D arrays.
//!
//! A [`Tape`] records every operation as a node. Values are computed eagerly;
//! [`Tape::backward`] walks the record in reverse and returns a [`Gradients`]
//! table indexed by [`Var`]. Scalars are `1 x 1` arrays.
//!
//! A tape can be differentiated once. Build a fresh tape for every step.

use ndarray::{s, Array1, Array2, Axis, Zip};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `x[n×m] + b[1×m]`
    AddRow(Var, Var),
    /// `x[n×m] ∘ g[1×m]`
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Ln(Var),
    Sigmoid(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    /// Elementwise `x ∘ w` followed by a full sum, with `w` constant.
    WeightedSum(Var, Array2<f64>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    /// Per-column affine map with constant coefficients: `(x - shift) * scale`.
    ColAffine(Var, Array1<f64>),
    /// Batch standardization with batch statistics; stores `inv_std`.
    Standardize(Var, Array1<f64>),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by one [`Tape::backward`] call.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `var`, or `None` if `var` does not influence the loss.
    pub fn get(&self, var: Var) -> Option<&Array2<f64>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `var`; zeros when `var` is disconnected from the loss.
    pub fn wrt(&self, var: Var) -> Array2<f64> {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Array2<f64> {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => Array2::zeros(self.shapes[var.0]),
        }
    }
}

fn shape(a: &Array2<f64>) -> (usize, usize) {
    (a.nrows(), a.ncols())
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

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient (inputs and parameters alike).
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape(&self.nodes[v.0].value)
    }

    /// Error if any entry of `v` is NaN or infinite.
    pub fn ensure_finite(&self, v: Var, what: &str) -> Result<()> {
        if self.nodes[v.0].value.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("{op}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn row_vector(&self, x: Var, r: Var, op: &str) -> Result<()> {
        let (sx, sr) = (self.shape(x), self.shape(r));
        if sr.0 != 1 || sr.1 != sx.1 {
            return Err(Error::Shape(format!("{op}: {sx:?} with row {sr:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::Shape(format!("matmul: {sa:?} x {sb:?}")));
        }
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_vector(x, row, "add_row")?;
        let v = self.value(x) + self.value(row);
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(v, Op::AddRow(x, row), rg))
    }

    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_vector(x, row, "mul_row")?;
        let v = self.value(x) * self.value(row);
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(v, Op::MulRow(x, row), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x) * c;
        let rg = self.rg(x);
        self.push(v, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x) + c;
        let rg = self.rg(x);
        self.push(v, Op::AddScalar(x), rg)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let v = self.value(x).mapv(|z| if z > 0.0 { z } else { slope * z });
        let rg = self.rg(x);
        self.push(v, Op::LeakyRelu(x, slope), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::exp);
        let rg = self.rg(x);
        self.push(v, Op::Exp(x), rg)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::ln);
        let rg = self.rg(x);
        self.push(v, Op::Ln(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(sigmoid);
        let rg = self.rg(x);
        self.push(v, Op::Sigmoid(x), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|z| z * z);
        let rg = self.rg(x);
        self.push(v, Op::Square(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(x).sum());
        let rg = self.rg(x);
        self.push(v, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let v = Array2::from_elem((1, 1), self.value(x).sum() / n);
        let rg = self.rg(x);
        self.push(v, Op::Mean(x), rg)
    }

    /// `sum(x ∘ weights)` for a constant weight array of the same shape.
    pub fn weighted_sum(&mut self, x: Var, weights: Array2<f64>) -> Result<Var> {
        if shape(&weights) != self.shape(x) {
            return Err(Error::Shape(format!(
                "weighted_sum: {:?} vs weights {:?}",
                self.shape(x),
                weights.dim()
            )));
        }
        let total = Zip::from(self.value(x))
            .and(&weights)
            .fold(0.0, |acc, &a, &w| acc + a * w);
        let rg = self.rg(x);
        Ok(self.push(
            Array2::from_elem((1, 1), total),
            Op::WeightedSum(x, weights),
            rg,
        ))
    }

    /// Rows `start..end` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let n = self.shape(x).0;
        if start > end || end > n {
            return Err(Error::Shape(format!("slice_rows {start}..{end} of {n} rows")));
        }
        let v = self.value(x).slice(s![start..end, ..]).to_owned();
        let rg = self.rg(x);
        Ok(self.push(v, Op::SliceRows(x, start), rg))
    }

    /// Columns `start..end` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let n = self.shape(x).1;
        if start > end || end > n {
            return Err(Error::Shape(format!("slice_cols {start}..{end} of {n} columns")));
        }
        let v = self.value(x).slice(s![.., start..end]).to_owned();
        let rg = self.rg(x);
        Ok(self.push(v, Op::SliceCols(x, start), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_rows of nothing".into()));
        }
        let cols = self.shape(parts[0]).1;
        if parts.iter().any(|&p| self.shape(p).1 != cols) {
            return Err(Error::Shape("concat_rows: column counts differ".into()));
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::Shape(format!("concat_rows: {e}")))?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// `(x - shift) * scale` per column, with constant `shift` and `scale`.
    pub fn col_affine(&mut self, x: Var, shift: &Array1<f64>, scale: Array1<f64>) -> Result<Var> {
        let cols = self.shape(x).1;
        if shift.len() != cols || scale.len() != cols {
            return Err(Error::Shape(format!("col_affine on {cols} columns")));
        }
        let mut v = self.value(x) - &shift.view().insert_axis(Axis(0));
        v *= &scale.view().insert_axis(Axis(0));
        let rg = self.rg(x);
        Ok(self.push(v, Op::ColAffine(x, scale), rg))
    }

    /// Standardize each column with the batch mean and biased batch variance.
    /// Returns the standardized node plus the batch mean and biased variance.
    pub fn standardize(&mut self, x: Var, eps: f64) -> Result<(Var, Array1<f64>, Array1<f64>)> {
        let n = self.shape(x).0;
        if n < 2 {
            return Err(Error::Shape(format!(
                "batch statistics need at least 2 rows, got {n}"
            )));
        }
        let xv = self.value(x);
        let mean = xv.mean_axis(Axis(0)).expect("non-empty");
        let centered = xv - &mean.view().insert_axis(Axis(0));
        let var = centered.mapv(|z| z * z).mean_axis(Axis(0)).expect("non-empty");
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let v = centered * &inv_std.view().insert_axis(Axis(0));
        let rg = self.rg(x);
        Ok((self.push(v, Op::Standardize(x, inv_std), rg), mean, var))
    }

    /// Differentiate the scalar `loss` with respect to every node that requires a gradient.
    ///
    /// A tape can only be differentiated once; a second call is an error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::State(
                "backward already ran on this tape; record a new tape".into(),
            ));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let shapes: Vec<_> = self.nodes.iter().map(|nd| shape(&nd.value)).collect();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; n];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads, shapes });
        }
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let nodes = &self.nodes;
            let mut acc = |v: Var, delta: Array2<f64>| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &delta,
                    slot @ None => *slot = Some(delta),
                }
            };
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if nodes[a.0].requires_grad {
                        acc(*a, g.dot(&val(*b).t()));
                    }
                    if nodes[b.0].requires_grad {
                        acc(*b, val(*a).t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, -&g);
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    acc(*a, &g * val(*b));
                    acc(*b, &g * val(*a));
                }
                Op::AddRow(x, r) => {
                    acc(*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*x, g);
                }
                Op::MulRow(x, r) => {
                    acc(*r, (&g * val(*x)).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*x, &g * val(*r));
                }
                Op::Scale(x, c) => acc(*x, g * *c),
                Op::AddScalar(x) => acc(*x, g),
                Op::LeakyRelu(x, slope) => {
                    let mut d = g;
                    Zip::from(&mut d).and(val(*x)).for_each(|d, &z| {
                        if z <= 0.0 {
                            *d *= *slope;
                        }
                    });
                    acc(*x, d);
                }
                Op::Exp(x) => acc(*x, g * &node.value),
                Op::Ln(x) => acc(*x, g / val(*x)),
                Op::Sigmoid(x) => {
                    let local = node.value.mapv(|s| s * (1.0 - s));
                    acc(*x, g * &local);
                }
                Op::Square(x) => acc(*x, g * val(*x) * 2.0),
                Op::Sum(x) => {
                    let gs = g[[0, 0]];
                    acc(*x, Array2::from_elem(shapes[x.0], gs));
                }
                Op::Mean(x) => {
                    let cnt = val(*x).len().max(1) as f64;
                    acc(*x, Array2::from_elem(shapes[x.0], g[[0, 0]] / cnt));
                }
                Op::WeightedSum(x, w) => acc(*x, w * g[[0, 0]]),
                Op::SliceRows(x, start) => {
                    let mut d = Array2::zeros(shapes[x.0]);
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(*x, d);
                }
                Op::SliceCols(x, start) => {
                    let mut d = Array2::zeros(shapes[x.0]);
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(*x, d);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = shapes[p.0].0;
                        acc(*p, g.slice(s![offset..offset + rows, ..]).to_owned());
                        offset += rows;
                    }
                }
                Op::ColAffine(x, scale) => acc(*x, g * &scale.view().insert_axis(Axis(0))),
                Op::Standardize(x, inv_std) => {
                    // dx = inv_std / n * (n dy - sum(dy) - xhat * sum(dy * xhat))
                    let xhat = &node.value;
                    let n = xhat.nrows() as f64;
                    let sum_g = g.sum_axis(Axis(0));
                    let sum_gx = (&g * xhat).sum_axis(Axis(0));
                    let mut d = g * n;
                    d -= &sum_g.view().insert_axis(Axis(0));
                    d -= &(xhat * &sum_gx.view().insert_axis(Axis(0)));
                    d *= &(inv_std / n).view().insert_axis(Axis(0));
                    acc(*x, d);
                }
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
