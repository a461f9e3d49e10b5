//! Batched reverse-mode differentiation over a closed set of primitives.
//!
//! Every node holds a `batch x width` matrix, so one tape records a whole
//! batch of samples flowing through the unrolled integrator at once. The
//! only parameters are the weights of the registered networks; gradients
//! come back in the same flat layout as [`ParamVector`].

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis, Zip};

use crate::net::{LayerShape, MlpSpec, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine {
        x: usize,
        net: usize,
        layer: usize,
    },
    Tanh(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    /// `a + c * b`
    Axpy {
        a: usize,
        b: usize,
        c: f64,
    },
    Scale(usize, f64),
    /// Elementwise identity in derivative: shifts, angle wraps.
    Shift(usize),
    Sqrt(usize),
    Concat(Vec<usize>),
    /// Derivative passes where the mask is one and is cut where it is zero.
    Masked {
        x: usize,
        mask: Array2<f64>,
    },
    MeanAll(usize),
}

struct Net<'a> {
    params: &'a [f64],
    layers: Vec<LayerShape>,
}

impl Net<'_> {
    fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let l = self.layers[layer];
        ArrayView2::from_shape(
            (l.fan_out, l.fan_in),
            &self.params[l.weight_offset..l.bias_offset],
        )
        .expect("layer layout")
    }

    fn biases(&self, layer: usize) -> &[f64] {
        let l = self.layers[layer];
        &self.params[l.bias_offset..l.end()]
    }
}

pub struct Tape<'a> {
    nets: Vec<Net<'a>>,
    values: Vec<Array2<f64>>,
    ops: Vec<Op>,
}

impl<'a> Tape<'a> {
    pub fn new(nets: &[(&'a MlpSpec, &'a ParamVector)]) -> Self {
        Tape {
            nets: nets
                .iter()
                .map(|(spec, p)| Net {
                    params: p.as_slice(),
                    layers: spec.layers(),
                })
                .collect(),
            values: Vec::new(),
            ops: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.ops.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.values[v.0]
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A `batch x 1` leaf from a slice.
    pub fn column(&mut self, values: &[f64]) -> Var {
        let a = Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column");
        self.leaf(a)
    }

    pub fn constant(&mut self, batch: usize, value: f64) -> Var {
        self.leaf(Array2::from_elem((batch, 1), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.values[a.0] + &self.values[b.0];
        self.push(v, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.values[a.0] - &self.values[b.0];
        self.push(v, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = &self.values[a.0] * &self.values[b.0];
        self.push(v, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = &self.values[a.0] / &self.values[b.0];
        self.push(v, Op::Div(a.0, b.0))
    }

    pub fn axpy(&mut self, a: Var, b: Var, c: f64) -> Var {
        let mut v = self.values[a.0].clone();
        v.scaled_add(c, &self.values[b.0]);
        self.push(v, Op::Axpy { a: a.0, b: b.0, c })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = &self.values[a.0] * c;
        self.push(v, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = &self.values[a.0] + c;
        self.push(v, Op::Shift(a.0))
    }

    /// Maps every entry into `(-pi, pi]`; derivative one almost everywhere.
    pub fn wrap_pi(&mut self, a: Var) -> Var {
        let v = self.values[a.0].mapv(|d| crate::manifold::circular_diff(d, 0.0));
        self.push(v, Op::Shift(a.0))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.values[a.0].mapv(f64::sqrt);
        self.push(v, Op::Sqrt(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.values[a.0].mapv(f64::tanh);
        self.push(v, Op::Tanh(a.0))
    }

    /// Clamps into `[lo, hi]`, cutting the derivative where clamping acts.
    /// Returns the input unchanged (no node) when nothing is clamped.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> (Var, usize) {
        let x = &self.values[a.0];
        let clamped = x.iter().filter(|v| **v < lo || **v > hi).count();
        if clamped == 0 {
            return (a, 0);
        }
        let mask = x.mapv(|v| if v < lo || v > hi { 0.0 } else { 1.0 });
        let v = x.mapv(|v| v.clamp(lo, hi));
        (self.push(v, Op::Masked { x: a.0, mask }), clamped)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        if parts.len() == 1 {
            return parts[0];
        }
        let views: Vec<_> = parts.iter().map(|p| self.values[p.0].view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat rows");
        self.push(v, Op::Concat(parts.iter().map(|p| p.0).collect()))
    }

    pub fn affine(&mut self, x: Var, net: usize, layer: usize) -> Var {
        let n = &self.nets[net];
        let w = n.weights(layer);
        let input = &self.values[x.0];
        let mut out = Array2::zeros((input.nrows(), w.nrows()));
        for mut row in out.rows_mut() {
            row.assign(&ndarray::ArrayView1::from(n.biases(layer)));
        }
        general_mat_mul(1.0, input, &w.t(), 1.0, &mut out);
        self.push(out, Op::Affine { x: x.0, net, layer })
    }

    /// Full network: affine layers with tanh between them.
    pub fn mlp(&mut self, net: usize, x: Var) -> Var {
        let n_layers = self.nets[net].layers.len();
        let mut h = x;
        for layer in 0..n_layers {
            h = self.affine(h, net, layer);
            if layer + 1 < n_layers {
                h = self.tanh(h);
            }
        }
        h
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let m = self.values[a.0].mean().unwrap_or(0.0);
        self.push(Array2::from_elem((1, 1), m), Op::MeanAll(a.0))
    }

    /// Reverse sweep from a `1 x 1` output. Returns one gradient per
    /// registered network.
    pub fn backward(&self, output: Var) -> Vec<ParamVector> {
        let mut grads: Vec<Vec<f64>> = self
            .nets
            .iter()
            .map(|n| vec![0.0; n.params.len()])
            .collect();
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; self.ops.len()];
        adj[output.0] = Some(Array2::ones(self.values[output.0].raw_dim()));

        fn acc(adj: &mut [Option<Array2<f64>>], i: usize, g: Array2<f64>) {
            match &mut adj[i] {
                Some(a) => *a += &g,
                slot @ None => *slot = Some(g),
            }
        }
        fn acc_scaled(adj: &mut [Option<Array2<f64>>], i: usize, c: f64, g: &Array2<f64>) {
            match &mut adj[i] {
                Some(a) => a.scaled_add(c, g),
                slot @ None => *slot = Some(g * c),
            }
        }

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Affine { x, net, layer } => {
                    let n = &self.nets[*net];
                    let l = n.layers[*layer];
                    let w = n.weights(*layer);
                    let input = &self.values[*x];
                    {
                        let gw = &mut grads[*net][l.weight_offset..l.bias_offset];
                        let mut gw = ArrayViewMut2::from_shape((l.fan_out, l.fan_in), gw)
                            .expect("layer layout");
                        general_mat_mul(1.0, &g.t(), input, 1.0, &mut gw);
                    }
                    let gb = &mut grads[*net][l.bias_offset..l.end()];
                    for row in g.rows() {
                        for (b, v) in gb.iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                    if !matches!(self.ops[*x], Op::Leaf) {
                        let mut gx = Array2::zeros((g.nrows(), l.fan_in));
                        general_mat_mul(1.0, &g, &w, 0.0, &mut gx);
                        acc(&mut adj, *x, gx);
                    }
                }
                Op::Tanh(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(&self.values[i])
                        .for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(&mut adj, *x, gx);
                }
                Op::Add(a, b) => {
                    acc_scaled(&mut adj, *b, 1.0, &g);
                    acc(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    acc_scaled(&mut adj, *b, -1.0, &g);
                    acc(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.values[*b];
                    let gb = &g * &self.values[*a];
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Div(a, b) => {
                    let ga = &g / &self.values[*b];
                    // d(a/b)/db = -(a/b)/b
                    let gb = -(&ga * &self.values[i]);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Axpy { a, b, c } => {
                    acc_scaled(&mut adj, *b, *c, &g);
                    acc(&mut adj, *a, g);
                }
                Op::Scale(a, c) => acc_scaled(&mut adj, *a, *c, &g),
                Op::Shift(a) => acc(&mut adj, *a, g),
                Op::Sqrt(a) => {
                    let ga = &g / &(&self.values[i] * 2.0);
                    acc(&mut adj, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.values[p].ncols();
                        let slice = g.slice(ndarray::s![.., col..col + w]).to_owned();
                        acc(&mut adj, p, slice);
                        col += w;
                    }
                }
                Op::Masked { x, mask } => acc(&mut adj, *x, &g * mask),
                Op::MeanAll(a) => {
                    let shape = self.values[*a].raw_dim();
                    let n = self.values[*a].len() as f64;
                    acc(&mut adj, *a, Array2::from_elem(shape, g[[0, 0]] / n));
                }
            }
        }
        grads.into_iter().map(ParamVector).collect()
    }
}
