//! Central finite-difference checks against the tape's analytic gradients.

use std::collections::BTreeMap;

use super::mat::Mat;
use super::param::ParamStore;
use super::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Worst `|analytic - numeric| / max(|analytic| + |numeric|, floor)`.
    pub max_rel_err: f64,
    pub worst: String,
    /// Worst relative error per parameter name.
    pub by_param: BTreeMap<String, f64>,
}

impl GradCheckReport {
    fn merge(&mut self, name: &str, idx: usize, analytic: f64, numeric: f64, floor: f64) {
        self.checked += 1;
        let denom = (analytic.abs() + numeric.abs()).max(floor);
        let rel = (analytic - numeric).abs() / denom;
        let e = self.by_param.entry(name.to_string()).or_insert(0.0);
        *e = e.max(rel);
        if rel > self.max_rel_err {
            self.max_rel_err = rel;
            self.worst = format!("{name}[{idx}]: analytic {analytic:.6e} numeric {numeric:.6e}");
        }
    }

    /// Worst error over the parameters whose name satisfies `pred`, or
    /// `None` when no such parameter was checked.
    pub fn max_where(&self, pred: impl Fn(&str) -> bool) -> Option<f64> {
        self.by_param
            .iter()
            .filter(|(k, _)| pred(k))
            .map(|(_, &v)| v)
            .reduce(f64::max)
    }
}

/// Checks every scalar of every parameter in `store` (at most
/// `max_per_param` evenly spaced entries each). `loss` builds the scalar
/// loss on a fresh tape.
pub fn check_params<F>(store: &ParamStore, max_per_param: usize, h: f64, loss: F) -> GradCheckReport
where
    F: for<'a> Fn(&mut Tape<'a>, &'a ParamStore) -> Var,
{
    let analytic = {
        let mut tape = Tape::new();
        let l = loss(&mut tape, store);
        tape.backward(l).into_param_grads(store.len())
    };
    let eval = |s: &ParamStore| {
        let mut tape = Tape::inference();
        let l = loss(&mut tape, s);
        tape.value(l).item()
    };
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: String::new(),
        by_param: BTreeMap::new(),
    };
    let mut work = store.clone();
    for id in store.ids() {
        let n = store.get(id).data().len();
        let step = (n / max_per_param.max(1)).max(1);
        for idx in (0..n).step_by(step) {
            let orig = work.get(id).data()[idx];
            work.get_mut(id).data_mut()[idx] = orig + h;
            let up = eval(&work);
            work.get_mut(id).data_mut()[idx] = orig - h;
            let down = eval(&work);
            work.get_mut(id).data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[id.index()].as_ref().map_or(0.0, |g| g.data()[idx]);
            report.merge(store.name(id), idx, a, numeric, 1e-6);
        }
    }
    report
}

/// Checks the gradient with respect to a single input matrix.
pub fn check_input<F>(input: &Mat, h: f64, loss: F) -> GradCheckReport
where
    F: for<'a> Fn(&mut Tape<'a>, Var) -> Var,
{
    let analytic = {
        let mut tape = Tape::new();
        let x = tape.input(input.clone());
        let l = loss(&mut tape, x);
        let grads = tape.backward(l);
        grads
            .wrt(x)
            .cloned()
            .unwrap_or_else(|| Mat::zeros(input.rows(), input.cols()))
    };
    let eval = |m: &Mat| {
        let mut tape = Tape::inference();
        let x = tape.constant(m.clone());
        let l = loss(&mut tape, x);
        tape.value(l).item()
    };
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: String::new(),
        by_param: BTreeMap::new(),
    };
    let mut work = input.clone();
    for idx in 0..input.data().len() {
        let orig = work.data()[idx];
        work.data_mut()[idx] = orig + h;
        let up = eval(&work);
        work.data_mut()[idx] = orig - h;
        let down = eval(&work);
        work.data_mut()[idx] = orig;
        report.merge("input", idx, analytic.data()[idx], (up - down) / (2.0 * h), 1e-6);
    }
    report
}
