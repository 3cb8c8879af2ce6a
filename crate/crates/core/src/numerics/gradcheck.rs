//! Central finite-difference checks for tape gradients.

use alloc::vec::Vec;

use crate::error::Result;
use crate::numerics::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::numerics::tensor::Tensor;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Differences below this are treated as agreement.
///
/// Entries whose true derivative is zero otherwise produce relative errors of
/// order one from rounding alone.
pub const ABS_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over entries that differ by more than [`ABS_FLOOR`].
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Number of scalar entries compared.
    pub checked: usize,
    /// `(input, flat index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }

    fn record(&mut self, input: usize, index: usize, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        self.checked += 1;
        self.max_abs_err = self.max_abs_err.max(abs);
        if abs <= ABS_FLOOR {
            return;
        }
        let rel = abs / analytic.abs().max(numeric.abs());
        if rel > self.max_rel_err {
            self.max_rel_err = rel;
            self.worst = Some((input, index));
        }
    }
}

fn scalar_of(tape: &Tape, v: Var) -> f64 {
    tape.value(v).item()
}

/// Compares the tape gradient of `f` with central differences in every entry
/// of every input.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(scalar_of(&tape, out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport::default();
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(v);
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            probe[i].data_mut()[j] = x0 + step;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = x0 - step;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = x0;
            report.record(i, j, analytic.data()[j], (plus - minus) / (2.0 * step));
        }
    }
    Ok(report)
}

/// Like [`check_gradients`] but over the parameters of a store, skipping `exclude`.
pub fn check_param_gradients<F>(
    store: &ParamStore,
    exclude: &[ParamId],
    step: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, s)?;
        Ok(scalar_of(&tape, out))
    };

    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let grads = tape.backward(out)?.collect(store);

    let mut report = GradCheckReport::default();
    let mut probe = store.clone();
    for id in store.ids().filter(|id| !exclude.contains(id)) {
        for j in 0..store.get(id).numel() {
            let x0 = store.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = x0 + step;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = x0 - step;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = x0;
            report.record(
                id.index(),
                j,
                grads[id.index()].data()[j],
                (plus - minus) / (2.0 * step),
            );
        }
    }
    Ok(report)
}
