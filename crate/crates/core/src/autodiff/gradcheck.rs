use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::tape::{NodeId, Tape};

/// Central finite-difference check of reverse-mode gradients.
///
/// Per element the error is `|analytic − numeric| / max(|analytic|, |numeric|, floor)`;
/// `floor` keeps entries whose true gradient is zero from dividing by zero.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub eps: f64,
    pub tol: f64,
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            eps: 1e-6,
            tol: 1e-4,
            floor: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input index, element index)` of the largest relative error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub passed: bool,
}

impl GradCheck {
    /// Checks `f` w.r.t. every element of every tensor in `inputs`. `f` must
    /// build a scalar from the leaves it is handed.
    pub fn run<T, F>(&self, inputs: &[Tensor<T>], f: F) -> Result<GradCheckReport>
    where
        T: Scalar,
        F: Fn(&mut Tape<T>, &[NodeId]) -> Result<NodeId>,
    {
        let eval = |vals: &[Tensor<T>]| -> Result<f64> {
            let mut tape = Tape::new();
            let ids: Vec<NodeId> = vals.iter().map(|v| tape.constant(v.clone())).collect();
            let out = f(&mut tape, &ids)?;
            scalar_of(tape.value(out))
        };

        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|v| tape.param(v.clone())).collect();
        let out = f(&mut tape, &ids)?;
        scalar_of(tape.value(out))?;
        let grads = tape.backward(out)?;
        let analytic: Vec<Tensor<T>> = ids
            .iter()
            .zip(inputs)
            .map(|(&id, v)| grads.get_or_zeros(id, v.shape()))
            .collect();

        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst: None,
            checked: 0,
            passed: true,
        };
        let mut probe: Vec<Tensor<T>> = inputs.to_vec();
        for (t, grad) in analytic.iter().enumerate() {
            for e in 0..inputs[t].len() {
                let orig = probe[t].data()[e];
                probe[t].data_mut()[e] = orig + T::of(self.eps);
                let plus = eval(&probe)?;
                probe[t].data_mut()[e] = orig - T::of(self.eps);
                let minus = eval(&probe)?;
                probe[t].data_mut()[e] = orig;

                let numeric = (plus - minus) / (2.0 * self.eps);
                let a = grad.data()[e].to_f64_lossy();
                let abs = (a - numeric).abs();
                let rel = abs / a.abs().max(numeric.abs()).max(self.floor);
                report.max_abs_error = report.max_abs_error.max(abs);
                if rel > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = rel;
                    report.worst = Some((t, e));
                }
                report.checked += 1;
            }
        }
        report.passed = report.max_rel_error < self.tol;
        Ok(report)
    }
}

fn scalar_of<T: Scalar>(t: &Tensor<T>) -> Result<f64> {
    if t.len() != 1 {
        return Err(Error::dim(
            "grad_check",
            format!("function must be scalar, got {:?}", t.shape()),
        ));
    }
    Ok(t.data()[0].to_f64_lossy())
}

/// Single-input convenience wrapper around [`GradCheck::run`].
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, NodeId) -> Result<NodeId>,
{
    GradCheck {
        eps,
        tol,
        ..GradCheck::default()
    }
    .run(std::slice::from_ref(x), |tape, ids| f(tape, ids[0]))
}
