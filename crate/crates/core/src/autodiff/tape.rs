//! Array-level Wengert tape.
//!
//! Every node holds a row-major matrix value. Operations are recorded in
//! creation order, which is a topological order, so the backward sweep is a
//! single reverse pass over the node list.

use super::scalar::Real;
use super::AutodiffError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    /// Elementwise; the right operand may be a 1x1 scalar.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `(r x c) + (1 x c)`, bias broadcast over rows.
    AddRow(Var, Var),
    MatMul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    /// `scale * x + shift`
    Affine(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    /// Column vector summed over consecutive segments of the given lengths.
    SegmentSum(Var, Vec<usize>),
    /// Contiguous window of a node's storage reinterpreted as `rows x cols`.
    Slice(Var, usize),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MatMul(..) => "matmul",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Log(_) => "log",
            Op::Clamp(..) => "clamp",
            Op::Affine(..) => "affine",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SegmentSum(..) => "segment_sum",
            Op::Slice(..) => "slice",
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<T>,
    needs_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node { op, rows, cols, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Vec<T>, rows: usize, cols: usize) -> Var {
        assert_eq!(rows * cols, value.len(), "leaf shape does not match data");
        self.push(Op::Leaf, rows, cols, value, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Vec<T>, rows: usize, cols: usize) -> Var {
        assert_eq!(rows * cols, value.len(), "constant shape does not match data");
        self.push(Op::Leaf, rows, cols, value, false)
    }

    pub fn scalar_constant(&mut self, v: f64) -> Var {
        self.constant(vec![T::from_f64(v)], 1, 1)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.node(v).op
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> T {
        let n = self.node(v);
        assert_eq!(n.value.len(), 1, "node is not scalar");
        n.value[0]
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(T, T) -> T) -> Var {
        let (na, nb) = (self.node(a), self.node(b));
        let scalar_rhs = nb.value.len() == 1;
        assert!(
            scalar_rhs || (na.rows == nb.rows && na.cols == nb.cols),
            "{}: shape mismatch {}x{} vs {}x{}",
            op.name(),
            na.rows,
            na.cols,
            nb.rows,
            nb.cols
        );
        let value = if scalar_rhs {
            let s = nb.value[0];
            na.value.iter().map(|&x| f(x, s)).collect()
        } else {
            na.value.iter().zip(&nb.value).map(|(&x, &y)| f(x, y)).collect()
        };
        let (rows, cols, ng) = (na.rows, na.cols, na.needs_grad || nb.needs_grad);
        self.push(op, rows, cols, value, ng)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(T) -> T) -> Var {
        let na = self.node(a);
        let value = na.value.iter().map(|&x| f(x)).collect();
        let (rows, cols, ng) = (na.rows, na.cols, na.needs_grad);
        self.push(op, rows, cols, value, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (na, nb) = (self.node(a), self.node(bias));
        assert!(
            nb.rows == 1 && nb.cols == na.cols,
            "add_row: bias must be 1x{}, got {}x{}",
            na.cols,
            nb.rows,
            nb.cols
        );
        let cols = na.cols;
        let value = na
            .value
            .iter()
            .enumerate()
            .map(|(i, &x)| x + nb.value[i % cols])
            .collect();
        let (rows, ng) = (na.rows, na.needs_grad || nb.needs_grad);
        self.push(Op::AddRow(a, bias), rows, cols, value, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (na, nb) = (self.node(a), self.node(b));
        assert_eq!(
            na.cols, nb.rows,
            "matmul: inner dimensions differ ({}x{} * {}x{})",
            na.rows, na.cols, nb.rows, nb.cols
        );
        let (m, k, n) = (na.rows, na.cols, nb.cols);
        let mut value = vec![T::zero(); m * n];
        for i in 0..m {
            let out = &mut value[i * n..(i + 1) * n];
            for p in 0..k {
                let x = na.value[i * k + p];
                let row = &nb.value[p * n..(p + 1) * n];
                for (o, &y) in out.iter_mut().zip(row) {
                    *o += x * y;
                }
            }
        }
        let ng = na.needs_grad || nb.needs_grad;
        self.push(Op::MatMul(a, b), m, n, value, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), T::sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), T::tanh)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), T::ln)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        assert!(lo <= hi, "clamp: empty interval");
        let (l, h) = (T::from_f64(lo), T::from_f64(hi));
        self.unary(a, Op::Clamp(a, lo, hi), move |x| {
            if x < l {
                l
            } else if x > h {
                h
            } else {
                x
            }
        })
    }

    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let (s, c) = (T::from_f64(scale), T::from_f64(shift));
        self.unary(a, Op::Affine(a, scale, shift), move |x| s * x + c)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let na = self.node(a);
        let mut acc = T::zero();
        for &x in &na.value {
            acc += x;
        }
        let ng = na.needs_grad;
        self.push(Op::Sum(a), 1, 1, vec![acc], ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let na = self.node(a);
        assert!(!na.value.is_empty(), "mean of an empty node");
        let mut acc = T::zero();
        for &x in &na.value {
            acc += x;
        }
        let n = T::from_f64(na.value.len() as f64);
        let ng = na.needs_grad;
        self.push(Op::Mean(a), 1, 1, vec![acc / n], ng)
    }

    pub fn segment_sum(&mut self, a: Var, lengths: Vec<usize>) -> Var {
        let na = self.node(a);
        assert_eq!(
            lengths.iter().sum::<usize>(),
            na.value.len(),
            "segment_sum: segment lengths do not cover the input"
        );
        let mut value = Vec::with_capacity(lengths.len());
        let mut start = 0;
        for &len in &lengths {
            let mut acc = T::zero();
            for &x in &na.value[start..start + len] {
                acc += x;
            }
            value.push(acc);
            start += len;
        }
        let (rows, ng) = (lengths.len(), na.needs_grad);
        self.push(Op::SegmentSum(a, lengths), rows, 1, value, ng)
    }

    pub fn slice(&mut self, a: Var, offset: usize, rows: usize, cols: usize) -> Var {
        let na = self.node(a);
        assert!(
            offset + rows * cols <= na.value.len(),
            "slice: window {}..{} exceeds node of length {}",
            offset,
            offset + rows * cols,
            na.value.len()
        );
        let value = na.value[offset..offset + rows * cols].to_vec();
        let ng = na.needs_grad;
        self.push(Op::Slice(a, offset), rows, cols, value, ng)
    }

    /// Reverse sweep from a scalar node.
    ///
    /// Returns adjoints for every node that depends on a differentiable leaf;
    /// leaves the loss does not reach get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        let nl = self.node(loss);
        if nl.value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss { rows: nl.rows, cols: nl.cols });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.len()).collect() })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<(), AutodiffError> {
        let op = &node.op;
        let mut touched: [Option<Var>; 2] = [None, None];
        {
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
                if !self.node(v).needs_grad {
                    return;
                }
                let len = self.node(v).value.len();
                let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
                f(slot);
                if touched[0].is_none() {
                    touched[0] = Some(v);
                } else {
                    touched[1] = Some(v);
                }
            };
            match op {
                Op::Leaf => {}
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(op, Op::Sub(..)) { -T::one() } else { T::one() };
                    acc(*a, &mut |ga| {
                        for (x, &d) in ga.iter_mut().zip(g) {
                            *x += d;
                        }
                    });
                    let scalar_rhs = self.node(*b).value.len() == 1;
                    acc(*b, &mut |gb| {
                        if scalar_rhs {
                            let mut s = T::zero();
                            for &d in g {
                                s += d;
                            }
                            gb[0] += sign * s;
                        } else {
                            for (x, &d) in gb.iter_mut().zip(g) {
                                *x += sign * d;
                            }
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.node(*a).value, &self.node(*b).value);
                    let scalar_rhs = vb.len() == 1;
                    acc(*a, &mut |ga| {
                        for (i, x) in ga.iter_mut().enumerate() {
                            let y = if scalar_rhs { vb[0] } else { vb[i] };
                            *x += g[i] * y;
                        }
                    });
                    acc(*b, &mut |gb| {
                        if scalar_rhs {
                            let mut s = T::zero();
                            for (&d, &x) in g.iter().zip(va) {
                                s += d * x;
                            }
                            gb[0] += s;
                        } else {
                            for (i, y) in gb.iter_mut().enumerate() {
                                *y += g[i] * va[i];
                            }
                        }
                    });
                }
                Op::AddRow(a, bias) => {
                    let cols = node.cols;
                    acc(*a, &mut |ga| {
                        for (x, &d) in ga.iter_mut().zip(g) {
                            *x += d;
                        }
                    });
                    acc(*bias, &mut |gb| {
                        for (i, &d) in g.iter().enumerate() {
                            gb[i % cols] += d;
                        }
                    });
                }
                Op::MatMul(a, b) => {
                    let (na, nb) = (self.node(*a), self.node(*b));
                    let (m, k, n) = (na.rows, na.cols, nb.cols);
                    // dA = G * B^T
                    acc(*a, &mut |ga| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &nb.value[p * n..(p + 1) * n];
                                let mut s = T::zero();
                                for (&d, &y) in grow.iter().zip(brow) {
                                    s += d * y;
                                }
                                ga[i * k + p] += s;
                            }
                        }
                    });
                    // dB = A^T * G
                    acc(*b, &mut |gb| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let x = na.value[i * k + p];
                                let out = &mut gb[p * n..(p + 1) * n];
                                for (o, &d) in out.iter_mut().zip(grow) {
                                    *o += x * d;
                                }
                            }
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let s = &node.value;
                    acc(*a, &mut |ga| {
                        for i in 0..ga.len() {
                            ga[i] += g[i] * s[i] * (T::one() - s[i]);
                        }
                    });
                }
                Op::Tanh(a) => {
                    let t = &node.value;
                    acc(*a, &mut |ga| {
                        for i in 0..ga.len() {
                            ga[i] += g[i] * (T::one() - t[i] * t[i]);
                        }
                    });
                }
                Op::Log(a) => {
                    let x = &self.node(*a).value;
                    acc(*a, &mut |ga| {
                        for i in 0..ga.len() {
                            ga[i] += g[i] / x[i];
                        }
                    });
                }
                Op::Clamp(a, lo, hi) => {
                    let x = &self.node(*a).value;
                    acc(*a, &mut |ga| {
                        for i in 0..ga.len() {
                            let xv = x[i].value();
                            if xv >= *lo && xv <= *hi {
                                ga[i] += g[i];
                            }
                        }
                    });
                }
                Op::Affine(a, scale, _) => {
                    let s = T::from_f64(*scale);
                    acc(*a, &mut |ga| {
                        for (x, &d) in ga.iter_mut().zip(g) {
                            *x += s * d;
                        }
                    });
                }
                Op::Sum(a) | Op::Mean(a) => {
                    let d = if matches!(op, Op::Mean(_)) {
                        g[0] / T::from_f64(self.node(*a).value.len() as f64)
                    } else {
                        g[0]
                    };
                    acc(*a, &mut |ga| {
                        for x in ga.iter_mut() {
                            *x += d;
                        }
                    });
                }
                Op::SegmentSum(a, lengths) => {
                    acc(*a, &mut |ga| {
                        let mut start = 0;
                        for (s, &len) in lengths.iter().enumerate() {
                            for x in &mut ga[start..start + len] {
                                *x += g[s];
                            }
                            start += len;
                        }
                    });
                }
                Op::Slice(a, offset) => {
                    acc(*a, &mut |ga| {
                        for (x, &d) in ga[*offset..*offset + g.len()].iter_mut().zip(g) {
                            *x += d;
                        }
                    });
                }
            }
        }
        for v in touched.into_iter().flatten() {
            if let Some(buf) = &grads[v.0] {
                if buf.iter().any(|x| !x.is_finite()) {
                    return Err(AutodiffError::NonFiniteGradient { op: op.name(), node: v.0 });
                }
            }
        }
        Ok(())
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<usize>,
}

impl<T: Real> Gradients<T> {
    /// Adjoint of `v`; zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Vec<T> {
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => vec![T::zero(); self.shapes[v.0]],
        }
    }
}
