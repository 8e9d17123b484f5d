//! Gradients recorded as new tape nodes, so that a function of an input
//! gradient (such as a gradient-norm penalty) can itself be differentiated.

use super::array::{Array, Real};
use super::tape::{Op, Tape, Value};
use crate::error::{Error, Result};

impl<T: Real> Tape<T> {
    /// Returns `∂root/∂wrt` as a differentiable value on this tape.
    ///
    /// Only the nodes lying between `wrt` and `root` are differentiated
    /// symbolically; everything else (parameters in particular) enters the
    /// new graph as-is, so a later [`Tape::gradient`] of any function of the
    /// result reaches those parameters. Every primitive on that path must
    /// have a second-order rule, otherwise [`Error::Capability`] names it.
    pub fn input_gradient_graph<'t>(
        &'t self,
        root: Value<'t, T>,
        wrt: Value<'t, T>,
    ) -> Result<Value<'t, T>> {
        let (root_id, wrt_id) = (root.id(), wrt.id());
        if !std::ptr::eq(root.tape(), self) || !std::ptr::eq(wrt.tape(), self) {
            return Err(Error::Contract("values belong to different tapes".into()));
        }
        if !root.shape().is_empty() {
            return Err(Error::Contract(format!(
                "input gradient root must be a scalar, got shape {:?}",
                root.shape()
            )));
        }
        if wrt_id > root_id {
            return Ok(self.constant(Array::zeros(&wrt.shape())));
        }

        let on_path = {
            let nodes = self.nodes.borrow();
            let mut desc = vec![false; root_id + 1];
            desc[wrt_id] = true;
            for id in wrt_id + 1..=root_id {
                desc[id] = nodes[id].parents.iter().any(|&p| desc[p]);
            }
            let mut on_path = vec![false; root_id + 1];
            on_path[root_id] = desc[root_id];
            for id in (wrt_id + 1..=root_id).rev() {
                if on_path[id] {
                    for &p in &nodes[id].parents {
                        if desc[p] {
                            on_path[p] = true;
                        }
                    }
                }
            }
            on_path
        };
        if !on_path[wrt_id] {
            return Ok(self.constant(Array::zeros(&wrt.shape())));
        }

        let mut grads: Vec<Option<usize>> = vec![None; root_id + 1];
        grads[root_id] = Some(self.scalar(T::one()).id());
        for id in (wrt_id + 1..=root_id).rev() {
            if !on_path[id] {
                continue;
            }
            let Some(gid) = grads[id] else { continue };
            let (op, parents) = {
                let nodes = self.nodes.borrow();
                (nodes[id].op.clone(), nodes[id].parents.clone())
            };
            let g = self.value_at(gid);
            let live: Vec<bool> = parents.iter().map(|&p| on_path[p]).collect();
            for (p, contrib) in symbolic_vjp(self, &op, &parents, &live, id, g)? {
                grads[p] = Some(match grads[p] {
                    None => contrib.id(),
                    Some(acc) => self.value_at(acc).add(contrib)?.id(),
                });
            }
        }
        Ok(match grads[wrt_id] {
            Some(id) => self.value_at(id),
            None => self.constant(Array::zeros(&wrt.shape())),
        })
    }
}

/// Vector-Jacobian product of one node, expressed with tape primitives.
/// Only parents flagged in `live` receive a contribution.
fn symbolic_vjp<'t, T: Real>(
    tape: &'t Tape<T>,
    op: &Op<T>,
    parents: &[usize],
    live: &[bool],
    id: usize,
    g: Value<'t, T>,
) -> Result<Vec<(usize, Value<'t, T>)>> {
    let v = |i: usize| tape.value_at(parents[i]);
    let out = tape.value_at(id);
    let mut res = Vec::new();
    let mut push = |i: usize, f: &mut dyn FnMut() -> Result<Value<'t, T>>| -> Result<()> {
        if live[i] {
            res.push((parents[i], f()?));
        }
        Ok(())
    };
    match op {
        Op::Add => {
            push(0, &mut || Ok(g))?;
            push(1, &mut || Ok(g))?;
        }
        Op::Sub => {
            push(0, &mut || Ok(g))?;
            push(1, &mut || Ok(g.neg()))?;
        }
        Op::Mul => {
            push(0, &mut || g.mul(v(1)))?;
            push(1, &mut || g.mul(v(0)))?;
        }
        Op::AddBroadcast => {
            let inner = v(1).shape();
            push(0, &mut || Ok(g))?;
            push(1, &mut || g.sum_leading(&inner))?;
        }
        Op::SumLeading => {
            let xs = v(0).shape();
            let lead = xs[..xs.len() - g.shape().len()].to_vec();
            push(0, &mut || g.expand_leading(&lead))?;
        }
        Op::ExpandLeading(_) => {
            let inner = v(0).shape();
            push(0, &mut || g.sum_leading(&inner))?;
        }
        Op::Scale(c) => push(0, &mut || Ok(g.scale(*c)))?,
        Op::Shift(_) => push(0, &mut || Ok(g))?,
        Op::MatMul => {
            push(0, &mut || g.matmul(v(1).transpose()?))?;
            push(1, &mut || v(0).transpose()?.matmul(g))?;
        }
        Op::Transpose => push(0, &mut || g.transpose())?,
        Op::Conv1d(geom) => {
            let t_in = v(0).shape()[0];
            push(0, &mut || g.conv1d_input_grad(v(1), *geom, t_in))?;
            push(1, &mut || v(0).conv1d_weight_grad(g, *geom))?;
        }
        Op::ConvInputGrad(geom) => {
            // out = cig(gy, w): adjoint in gy is conv(·, w), in w is cwg(·, gy)
            push(0, &mut || g.conv1d(v(1), *geom))?;
            push(1, &mut || g.conv1d_weight_grad(v(0), *geom))?;
        }
        Op::ConvWeightGrad(geom) => {
            // out = cwg(x, gy): adjoint in x is cig(gy, ·), in gy is conv(x, ·)
            let t_in = v(0).shape()[0];
            push(0, &mut || v(1).conv1d_input_grad(g, *geom, t_in))?;
            push(1, &mut || v(0).conv1d(g, *geom))?;
        }
        Op::Exp => push(0, &mut || g.mul(out))?,
        Op::Sigmoid => {
            // σ' = σ (1 - σ), built on the output node so it stays differentiable
            push(0, &mut || g.mul(out.mul(out.neg().shift(T::one()))?))?;
        }
        Op::Relu => {
            let mask = v(0)
                .value()
                .map(|x| if x > T::zero() { T::one() } else { T::zero() });
            push(0, &mut || g.mul(tape.constant(mask.clone())))?;
        }
        Op::SumAll => {
            let s = v(0).shape();
            push(0, &mut || Ok(g.expand_scalar(&s)))?;
        }
        Op::MeanAll => {
            let s = v(0).shape();
            let n = T::from_usize(s.iter().product()).unwrap();
            push(0, &mut || Ok(g.scale(n.recip()).expand_scalar(&s)))?;
        }
        Op::ExpandScalar => push(0, &mut || Ok(g.sum()))?,
        Op::SumAxis(axis) => {
            let n = v(0).shape()[*axis];
            push(0, &mut || g.expand_axis(*axis, n))?;
        }
        Op::MeanAxis(axis) => {
            let n = v(0).shape()[*axis];
            let inv = T::from_usize(n).unwrap().recip();
            push(0, &mut || Ok(g.expand_axis(*axis, n)?.scale(inv)))?;
        }
        Op::ExpandAxis(axis) => push(0, &mut || g.sum_axis(*axis))?,
        Op::SquaredNorm => {
            let s = v(0).shape();
            push(0, &mut || Ok(g.expand_scalar(&s).mul(v(0))?.scale(T::lit(2.0))))?;
        }
        Op::Slice(axis, start, _) => {
            let full = v(0).shape()[*axis];
            push(0, &mut || g.pad_slice(*axis, *start, full))?;
        }
        Op::PadSlice(axis, start, _) => {
            let n = v(0).shape()[*axis];
            push(0, &mut || g.slice(*axis, *start, *start + n))?;
        }
        Op::Concat(axis) => {
            let mut offset = 0;
            for i in 0..parents.len() {
                let n = v(i).shape()[*axis];
                let start = offset;
                push(i, &mut || g.slice(*axis, start, start + n))?;
                offset += n;
            }
        }
        other => return Err(Error::Capability(other.name())),
    }
    Ok(res)
}
