//! Discriminator spatial attention.
//!
//! The map sums absolute activations over every tapped layer and channel,
//! resamples to the image size when a tap is smaller, and min-max normalises
//! each sample to `[0, 1]` (a constant map becomes all zeros). A two-parameter
//! sigmoid gate turns it into multiplicative attention.

use alloc::vec::Vec;

use crate::error::{contract, shape_err, Result};
use crate::numerics::autodiff::{evaluate, sigmoid, Tape, Var};
use crate::numerics::linalg::linear_resample_matrix;
use crate::numerics::tensor::Tensor;

fn tap_dims(tape: &Tape, tap: Var) -> Result<(usize, usize, usize, usize)> {
    match *tape.shape(tap) {
        [b, c, h, w] => Ok((b, c, h, w)),
        ref s => Err(shape_err("dsa tap", s, &[0, 0, 0, 0])),
    }
}

fn raw_on_tape(tape: &mut Tape, taps: &[Var], out_h: usize, out_w: usize) -> Result<Var> {
    let first = *taps
        .first()
        .ok_or_else(|| contract("dsa needs at least one tap"))?;
    let batch = tap_dims(tape, first)?.0;
    let mut total: Option<Var> = None;
    for &tap in taps {
        let (b, _, h, w) = tap_dims(tape, tap)?;
        if b != batch {
            return Err(shape_err("dsa taps", tape.shape(first), tape.shape(tap)));
        }
        let a = tape.abs(tap)?;
        let mut s = tape.sum_axis(a, 1)?;
        if (h, w) != (out_h, out_w) {
            let rh = tape.constant(linear_resample_matrix(h, out_h));
            let rwt = tape.constant(linear_resample_matrix(w, out_w).transpose()?);
            let mut planes = Vec::with_capacity(batch);
            for i in 0..batch {
                let p = tape.slice(s, 0, i, 1)?;
                let p = tape.reshape(p, &[h, w])?;
                let p = tape.matmul(rh, p)?;
                let p = tape.matmul(p, rwt)?;
                planes.push(tape.reshape(p, &[1, out_h, out_w])?);
            }
            s = tape.concat(&planes, 0)?;
        }
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    Ok(total.expect("at least one tap"))
}

/// Normalised map on the tape, shaped `[B, out_h·out_w]`.
pub fn dsa_on_tape(tape: &mut Tape, taps: &[Var], out_h: usize, out_w: usize) -> Result<Var> {
    let raw = raw_on_tape(tape, taps, out_h, out_w)?;
    let batch = tape.shape(raw)[0];
    let flat = tape.reshape(raw, &[batch, out_h * out_w])?;
    tape.min_max_rows(flat)
}

/// `Σ_taps Σ_channels |a|` resampled to `out_h×out_w`, before normalisation: `[B, out_h, out_w]`.
pub fn dsa_raw(taps: &[Tensor], out_h: usize, out_w: usize) -> Result<Tensor> {
    evaluate(taps, |t, v| raw_on_tape(t, v, out_h, out_w))
}

/// Normalised spatial attention in `[0, 1]`: `[B, out_h, out_w]`.
pub fn dsa_map(taps: &[Tensor], out_h: usize, out_w: usize) -> Result<Tensor> {
    let flat = evaluate(taps, |t, v| dsa_on_tape(t, v, out_h, out_w))?;
    flat.reshape(&[flat.shape()[0], out_h, out_w])
}

/// `sigmoid(gain · dsa + bias)`.
pub fn attention_gate(dsa: &Tensor, gain: f64, bias: f64) -> Tensor {
    dsa.map(|v| sigmoid(gain * v + bias))
}

/// [`attention_gate`] with learnable one-element `gain` and `bias`.
pub fn gate_on_tape(tape: &mut Tape, dsa: Var, gain: Var, bias: Var) -> Result<Var> {
    let z = tape.scale_by(dsa, gain)?;
    let z = tape.shift_by(z, bias)?;
    tape.sigmoid(z)
}
