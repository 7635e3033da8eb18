use super::error::NumericError;
use super::graph::{Graph, Var};
use super::params::{Gradients, ParamStore};
use crate::Scalar;

/// Agreement for one named parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    /// `‖a − n‖ / max(1e-12, ‖a‖ + ‖n‖)` over the parameter's elements.
    pub relative_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// Largest element-wise `|a − n|`.
    pub max_abs_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Maximum of [`ParamCheck::relative_error`] over parameters.
    pub max_relative_error: f64,
    /// Name of the parameter where the maximum occurred.
    pub worst: Option<String>,
    pub params: Vec<ParamCheck>,
    pub elements_checked: usize,
}

/// Compares reverse-mode gradients with central finite differences over
/// every element of every trainable parameter.
///
/// The closure must build the same scalar loss on each call. Each parameter
/// is scored by the relative L2 distance between its analytic and numeric
/// gradients, so isolated entries too small for finite differences to
/// resolve do not dominate.
pub fn grad_check<T, E, F>(params: &mut ParamStore<T>, eps: T, mut loss_fn: F) -> Result<GradCheckReport, E>
where
    T: Scalar,
    E: From<NumericError>,
    F: FnMut(&mut Graph<'_, T>) -> Result<Var, E>,
{
    let mut run = |store: &ParamStore<T>, with_grad: bool| -> Result<(T, Option<Gradients<T>>), E> {
        let mut g = Graph::new(store);
        let l = loss_fn(&mut g)?;
        let grads = if with_grad { Some(g.backward(l)?) } else { None };
        Ok((g.scalar(l)?, grads))
    };

    let first = run(params, false)?.0;
    let second = run(params, false)?.0;
    if first.as_f64().to_bits() != second.as_f64().to_bits() {
        return Err(NumericError::NonDeterministic {
            first: first.as_f64(),
            second: second.as_f64(),
        }
        .into());
    }

    let analytic = run(params, true)?.1.expect("requested gradients");

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        params: Vec::new(),
        elements_checked: 0,
    };
    let ids: Vec<_> = params
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, _)| id)
        .collect();
    let two_eps = (eps + eps).as_f64();

    for id in ids {
        let (rows, cols) = params.value(id).dim();
        let (mut diff2, mut a2, mut n2, mut max_abs) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for k in 0..rows * cols {
            let at = [k / cols, k % cols];
            let original = params.params_mut()[id.index()].value[at];
            params.params_mut()[id.index()].value[at] = original + eps;
            let plus = run(params, false)?.0;
            params.params_mut()[id.index()].value[at] = original - eps;
            let minus = run(params, false)?.0;
            params.params_mut()[id.index()].value[at] = original;

            let numeric = (plus.as_f64() - minus.as_f64()) / two_eps;
            let a = analytic.get(id).map_or(0.0, |g| g[at].as_f64());
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
            max_abs = max_abs.max((a - numeric).abs());
            report.elements_checked += 1;
        }
        let check = ParamCheck {
            name: params.get(id).name.clone(),
            relative_error: diff2.sqrt() / (a2.sqrt() + n2.sqrt()).max(1e-12),
            analytic_norm: a2.sqrt(),
            numeric_norm: n2.sqrt(),
            max_abs_error: max_abs,
        };
        if check.relative_error > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = check.relative_error;
            report.worst = Some(check.name.clone());
        }
        report.params.push(check);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::cell::Cell;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::<f64>::new();
        let theta = store.insert("theta", array![[0.3, -1.7, 2.2, 0.05]], true).unwrap();
        // Central differences are exact for a quadratic; a wider step keeps
        // the cancellation error of f(θ±ε) well under the bound.
        let report = grad_check::<_, NumericError, _>(&mut store, 1e-3, |g| {
            let t = g.param(theta);
            let sq = g.mul(t, t)?;
            Ok(g.sum(sq))
        })
        .unwrap();
        assert_eq!(report.elements_checked, 4);
        assert!(report.max_relative_error < 1e-10, "{report:?}");
    }

    #[test]
    fn frozen_params_are_skipped() {
        let mut store = ParamStore::<f64>::new();
        let a = store.insert("a", array![[1.0, 2.0]], true).unwrap();
        let b = store.insert("b", array![[3.0, 4.0]], false).unwrap();
        let report = grad_check::<_, NumericError, _>(&mut store, 1e-5, |g| {
            let av = g.param(a);
            let bv = g.param(b);
            let p = g.mul(av, bv)?;
            Ok(g.sum(p))
        })
        .unwrap();
        assert_eq!(report.elements_checked, 2);
        assert!(report.max_relative_error < 1e-9);
    }

    #[test]
    fn non_deterministic_closure_is_rejected() {
        let mut store = ParamStore::<f64>::new();
        let a = store.insert("a", array![[1.0]], true).unwrap();
        let calls = Cell::new(0.0);
        let err = grad_check::<_, NumericError, _>(&mut store, 1e-5, |g| {
            calls.set(calls.get() + 1.0);
            let av = g.param(a);
            Ok(g.scale(av, calls.get()))
        })
        .unwrap_err();
        assert!(matches!(err, NumericError::NonDeterministic { .. }));
    }
}
