//! Central finite-difference gradient checking.

use super::graph::{Graph, Var};
use super::params::ParamSet;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compares the analytic gradient of `loss` against central differences on
/// every element of every parameter.
///
/// Relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn check_gradients<F>(params: &ParamSet, loss: F, step: f64, floor: f64) -> GradCheckReport
where
    F: Fn(&mut Graph) -> Var,
{
    let analytic = {
        let mut g = Graph::new(params);
        let l = loss(&mut g);
        g.backward(l)
    };
    let eval = |ps: &ParamSet| {
        let mut g = Graph::new(ps);
        let l = loss(&mut g);
        g.scalar(l)
    };
    let mut work = params.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.value(id).len();
        for k in 0..n {
            let orig = params.value(id).as_slice().expect("standard layout")[k];
            work.value_mut(id).as_slice_mut().unwrap()[k] = orig + step;
            let up = eval(&work);
            work.value_mut(id).as_slice_mut().unwrap()[k] = orig - step;
            let down = eval(&work);
            work.value_mut(id).as_slice_mut().unwrap()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.get(id).as_slice().unwrap()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = format!("{}[{k}]", params.name(id));
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    report
}
