//! Reverse-mode automatic differentiation on an index-based tape.
//!
//! The tape records scalar primitives plus one fused `Affine` op (a dot
//! product against a parameter slice, optionally mixing recorded nodes and
//! plain constants, plus a bias). The fused op is what makes CPU training
//! viable: an MLP layer is one node per neuron instead of hundreds, and the
//! backward pass for it is two tight axpy loops.
//!
//! Tapes are rebuilt per ray (the frequency mask and two-phase supervision
//! change the graph across iterations) and are confined to the thread that
//! builds them. Gradients accumulate into a caller-supplied flat buffer so
//! disjoint rays can be processed concurrently and reduced in a fixed order.

mod adam;
mod finite_diff;
mod params;

pub use adam::{adam_step, AdamState, LrSchedule};
pub use finite_diff::finite_difference_check;
pub use params::{ParamSet, TensorMeta};

use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ValueId(u32);

impl ValueId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

/// A run of consecutively created nodes. MLP layers create their neurons
/// back to back, so layer activations form one range and the fused ops can
/// walk `vals`/`grads` sequentially instead of chasing an index arena.
#[derive(Clone, Copy, Debug)]
pub struct NodeRange {
    start: u32,
    len: u32,
}

impl NodeRange {
    pub const EMPTY: NodeRange = NodeRange { start: 0, len: 0 };

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Range into the tape's constant-input arena.
#[derive(Clone, Copy, Debug)]
pub struct ConstRange {
    start: u32,
    len: u32,
}

impl ConstRange {
    pub const EMPTY: ConstRange = ConstRange { start: 0, len: 0 };
}

const NO_BIAS: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
enum Op {
    Const,
    /// Reads one entry of the parameter vector.
    Param(u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    Exp(u32),
    Log(u32),
    Sin(u32),
    Cos(u32),
    Relu(u32),
    Softplus(u32),
    Sigmoid(u32),
    Powf(u32, f64),
    MulConst(u32, f64),
    AddConst(u32),
    ClampMin(u32, f64),
    /// Σ over a consecutive node range.
    Sum(NodeRange),
    /// Σ over scattered nodes (indices in the arg arena).
    SumList { start: u32, len: u32 },
    /// Σ_k p[w+k]·node_k + Σ_j p[w+nlen+j]·const_j + p[bias].
    Affine {
        w: u32,
        bias: u32,
        nodes: NodeRange,
        consts: ConstRange,
    },
}

/// Reverse-mode tape. Build eagerly, then call [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    vals: Vec<f64>,
    ops: Vec<Op>,
    grads: Vec<f64>,
    args: Vec<u32>,
    consts: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Drops all nodes but keeps allocations for reuse across rays.
    pub fn clear(&mut self) {
        self.vals.clear();
        self.ops.clear();
        self.grads.clear();
        self.args.clear();
        self.consts.clear();
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, v: ValueId) -> f64 {
        self.vals[v.idx()]
    }

    /// Adjoint of a node after the latest [`Tape::backward`] call.
    pub fn grad(&self, v: ValueId) -> f64 {
        self.grads.get(v.idx()).copied().unwrap_or(0.0)
    }

    /// Smallest distance of any kinked primitive (relu, clamp-min) from its
    /// threshold. Finite-difference probes are only valid where this stays
    /// well above the step size, since the loss is not twice differentiable
    /// across a kink.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for op in &self.ops {
            match *op {
                Op::Relu(a) => margin = margin.min(self.vals[a as usize].abs()),
                Op::ClampMin(a, floor) => {
                    margin = margin.min((self.vals[a as usize] - floor).abs())
                }
                _ => {}
            }
        }
        margin
    }

    fn push(&mut self, val: f64, op: Op) -> ValueId {
        let id = self.ops.len() as u32;
        self.vals.push(val);
        self.ops.push(op);
        ValueId(id)
    }

    pub fn constant(&mut self, v: f64) -> ValueId {
        self.push(v, Op::Const)
    }

    /// A node that reads `params[idx]`; its adjoint lands in the gradient
    /// buffer at the same index.
    pub fn param(&mut self, params: &[f64], idx: usize) -> ValueId {
        self.push(params[idx], Op::Param(idx as u32))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.push(self.vals[a.idx()] + self.vals[b.idx()], Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.push(self.vals[a.idx()] - self.vals[b.idx()], Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.push(self.vals[a.idx()] * self.vals[b.idx()], Op::Mul(a.0, b.0))
    }

    /// Errors when the divisor is exactly zero.
    pub fn div(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let d = self.vals[b.idx()];
        if d == 0.0 {
            return Err(Error::Domain {
                op: "div",
                operand: d,
            });
        }
        Ok(self.push(self.vals[a.idx()] / d, Op::Div(a.0, b.0)))
    }

    pub fn neg(&mut self, a: ValueId) -> ValueId {
        self.push(-self.vals[a.idx()], Op::Neg(a.0))
    }

    pub fn exp(&mut self, a: ValueId) -> ValueId {
        self.push(self.vals[a.idx()].exp(), Op::Exp(a.0))
    }

    /// Errors on non-positive operands.
    pub fn log(&mut self, a: ValueId) -> Result<ValueId> {
        let x = self.vals[a.idx()];
        if x <= 0.0 {
            return Err(Error::Domain {
                op: "log",
                operand: x,
            });
        }
        Ok(self.push(x.ln(), Op::Log(a.0)))
    }

    pub fn sin(&mut self, a: ValueId) -> ValueId {
        self.push(self.vals[a.idx()].sin(), Op::Sin(a.0))
    }

    pub fn cos(&mut self, a: ValueId) -> ValueId {
        self.push(self.vals[a.idx()].cos(), Op::Cos(a.0))
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        self.push(self.vals[a.idx()].max(0.0), Op::Relu(a.0))
    }

    pub fn softplus(&mut self, a: ValueId) -> ValueId {
        self.push(softplus(self.vals[a.idx()]), Op::Softplus(a.0))
    }

    pub fn sigmoid(&mut self, a: ValueId) -> ValueId {
        self.push(sigmoid(self.vals[a.idx()]), Op::Sigmoid(a.0))
    }

    pub fn powf(&mut self, a: ValueId, e: f64) -> ValueId {
        self.push(self.vals[a.idx()].powf(e), Op::Powf(a.0, e))
    }

    pub fn mul_const(&mut self, a: ValueId, k: f64) -> ValueId {
        self.push(self.vals[a.idx()] * k, Op::MulConst(a.0, k))
    }

    pub fn add_const(&mut self, a: ValueId, k: f64) -> ValueId {
        self.push(self.vals[a.idx()] + k, Op::AddConst(a.0))
    }

    /// max(x, floor); subgradient 0 where the floor is active.
    pub fn clamp_min(&mut self, a: ValueId, floor: f64) -> ValueId {
        self.push(self.vals[a.idx()].max(floor), Op::ClampMin(a.0, floor))
    }

    /// Views a node list as a consecutive range; `None` if it has gaps.
    pub fn node_range(&self, xs: &[ValueId]) -> Option<NodeRange> {
        if xs.is_empty() {
            return Some(NodeRange::EMPTY);
        }
        let start = xs[0].0;
        for (i, v) in xs.iter().enumerate() {
            if v.0 != start + i as u32 {
                return None;
            }
        }
        Some(NodeRange {
            start,
            len: xs.len() as u32,
        })
    }

    /// Interns constant inputs (e.g. a masked positional encoding).
    pub fn const_range(&mut self, xs: &[f64]) -> ConstRange {
        let start = self.consts.len() as u32;
        self.consts.extend_from_slice(xs);
        ConstRange {
            start,
            len: xs.len() as u32,
        }
    }

    /// n-ary sum; consecutive inputs take the sequential fast path.
    pub fn sum(&mut self, xs: &[ValueId]) -> ValueId {
        if let Some(range) = self.node_range(xs) {
            return self.sum_range(range);
        }
        let start = self.args.len() as u32;
        self.args.extend(xs.iter().map(|v| v.0));
        let acc = xs.iter().map(|v| self.vals[v.idx()]).sum();
        self.push(
            acc,
            Op::SumList {
                start,
                len: xs.len() as u32,
            },
        )
    }

    pub fn sum_range(&mut self, range: NodeRange) -> ValueId {
        let s = range.start as usize;
        let acc = self.vals[s..s + range.len as usize].iter().sum();
        self.push(acc, Op::Sum(range))
    }

    /// Fused dot against a parameter slice. Weight layout starting at
    /// `w_off`: first one weight per node input, then one per constant
    /// input; `bias` indexes a separate parameter. Node inputs must be a
    /// consecutive range (one MLP layer's activations).
    pub fn affine(
        &mut self,
        params: &[f64],
        w_off: usize,
        bias: Option<usize>,
        nodes: NodeRange,
        consts: ConstRange,
    ) -> ValueId {
        let nlen = nodes.len as usize;
        let clen = consts.len as usize;
        let w = &params[w_off..w_off + nlen + clen];
        let mut acc = match bias {
            Some(b) => params[b],
            None => 0.0,
        };
        let vals = &self.vals[nodes.start as usize..nodes.start as usize + nlen];
        for k in 0..nlen {
            acc += w[k] * vals[k];
        }
        let cs = &self.consts[consts.start as usize..consts.start as usize + clen];
        for j in 0..clen {
            acc += w[nlen + j] * cs[j];
        }
        self.push(
            acc,
            Op::Affine {
                w: w_off as u32,
                bias: bias.map(|b| b as u32).unwrap_or(NO_BIAS),
                nodes,
                consts,
            },
        )
    }

    /// Reverse pass from a scalar root. Node adjoints are kept on the tape
    /// (readable via [`Tape::grad`]); parameter adjoints are **added** into
    /// `param_grads`, which callers zero or reuse as an accumulator.
    pub fn backward(&mut self, root: ValueId, params: &[f64], param_grads: &mut [f64]) {
        self.grads.clear();
        self.grads.resize(self.ops.len(), 0.0);
        self.grads[root.idx()] = 1.0;

        for i in (0..=root.idx()).rev() {
            let g = self.grads[i];
            if g == 0.0 {
                continue;
            }
            match self.ops[i] {
                Op::Const => {}
                Op::Param(p) => param_grads[p as usize] += g,
                Op::Add(a, b) => {
                    self.grads[a as usize] += g;
                    self.grads[b as usize] += g;
                }
                Op::Sub(a, b) => {
                    self.grads[a as usize] += g;
                    self.grads[b as usize] -= g;
                }
                Op::Mul(a, b) => {
                    self.grads[a as usize] += g * self.vals[b as usize];
                    self.grads[b as usize] += g * self.vals[a as usize];
                }
                Op::Div(a, b) => {
                    let bv = self.vals[b as usize];
                    self.grads[a as usize] += g / bv;
                    self.grads[b as usize] -= g * self.vals[a as usize] / (bv * bv);
                }
                Op::Neg(a) => self.grads[a as usize] -= g,
                Op::Exp(a) => self.grads[a as usize] += g * self.vals[i],
                Op::Log(a) => self.grads[a as usize] += g / self.vals[a as usize],
                Op::Sin(a) => self.grads[a as usize] += g * self.vals[a as usize].cos(),
                Op::Cos(a) => self.grads[a as usize] -= g * self.vals[a as usize].sin(),
                Op::Relu(a) => {
                    if self.vals[a as usize] > 0.0 {
                        self.grads[a as usize] += g;
                    }
                }
                Op::Softplus(a) => {
                    self.grads[a as usize] += g * sigmoid(self.vals[a as usize]);
                }
                Op::Sigmoid(a) => {
                    let s = self.vals[i];
                    self.grads[a as usize] += g * s * (1.0 - s);
                }
                Op::Powf(a, e) => {
                    self.grads[a as usize] += g * e * self.vals[a as usize].powf(e - 1.0);
                }
                Op::MulConst(a, k) => self.grads[a as usize] += g * k,
                Op::AddConst(a) => self.grads[a as usize] += g,
                Op::ClampMin(a, floor) => {
                    if self.vals[a as usize] > floor {
                        self.grads[a as usize] += g;
                    }
                }
                Op::Sum(range) => {
                    let s = range.start as usize;
                    for gr in &mut self.grads[s..s + range.len as usize] {
                        *gr += g;
                    }
                }
                Op::SumList { start, len } => {
                    for k in 0..len as usize {
                        let node = self.args[start as usize + k] as usize;
                        self.grads[node] += g;
                    }
                }
                Op::Affine {
                    w,
                    bias,
                    nodes,
                    consts,
                } => {
                    let w_off = w as usize;
                    let nlen = nodes.len as usize;
                    let ns = nodes.start as usize;
                    let weights = &params[w_off..w_off + nlen];
                    let vals = &self.vals[ns..ns + nlen];
                    let node_grads = &mut self.grads[ns..ns + nlen];
                    let wgrads = &mut param_grads[w_off..w_off + nlen];
                    for k in 0..nlen {
                        wgrads[k] += g * vals[k];
                        node_grads[k] += g * weights[k];
                    }
                    let clen = consts.len as usize;
                    let cs = &self.consts[consts.start as usize..consts.start as usize + clen];
                    let cgrads = &mut param_grads[w_off + nlen..w_off + nlen + clen];
                    for j in 0..clen {
                        cgrads[j] += g * cs[j];
                    }
                    if bias != NO_BIAS {
                        param_grads[bias as usize] += g;
                    }
                }
            }
        }
    }
}
