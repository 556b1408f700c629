//! Central finite-difference gradient checking.
//!
//! The relative error of one entry is `|a - n| / max(|a|, |n|, floor)` where
//! `a` is the autodiff gradient and `n` the numerical one. The floor keeps
//! entries whose true gradient is zero from producing huge ratios out of
//! round-off noise. At the default step that noise reaches a few 1e-10 on
//! losses of order one, so the floor sits above `noise / 1e-4`.

use rand::seq::index::sample;
use rand::Rng;

use super::{Graph, Tensor, Var};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (input index, flat element index) of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Options for [`check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub floor: f64,
    /// Check at most this many entries per input, chosen at random.
    pub max_entries: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            floor: DEFAULT_FLOOR,
            max_entries: None,
        }
    }
}

impl GradCheck {
    pub fn sampled(max_entries: usize) -> Self {
        Self {
            max_entries: Some(max_entries),
            ..Self::default()
        }
    }

    /// Compare autodiff and central differences for a scalar-valued `f`.
    ///
    /// `f` must be deterministic: it is evaluated once on a graph where every
    /// input is a differentiable leaf, then twice per checked entry.
    pub fn run<R, F>(&self, inputs: &[Tensor], f: F, rng: &mut R) -> Result<GradCheckReport>
    where
        R: Rng + ?Sized,
        F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone().with_requires_grad())).collect();
        let loss = f(&mut g, &vars)?;
        let grads = g.backward(loss)?;

        let eval = |ts: &[Tensor]| -> Result<f64> {
            let mut g = Graph::new();
            let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
            let out = f(&mut g, &vars)?;
            Ok(g.value(out).data()[0])
        };

        let mut report = GradCheckReport {
            max_rel_err: 0.0,
            worst: (0, 0),
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
        };
        let mut work = inputs.to_vec();
        for (k, v) in vars.iter().enumerate() {
            let analytic = grads.wrt(*v);
            let n = analytic.len();
            let idx: Vec<usize> = match self.max_entries {
                Some(m) if m < n => sample(rng, n, m).into_vec(),
                _ => (0..n).collect(),
            };
            for i in idx {
                let orig = work[k].data()[i];
                work[k].data_mut()[i] = orig + self.step;
                let plus = eval(&work)?;
                work[k].data_mut()[i] = orig - self.step;
                let minus = eval(&work)?;
                work[k].data_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * self.step);
                let err = relative_error(analytic[i], numeric, self.floor);
                report.checked += 1;
                if err > report.max_rel_err || report.checked == 1 {
                    report.max_rel_err = err;
                    report.worst = (k, i);
                    report.analytic = analytic[i];
                    report.numeric = numeric;
                }
            }
        }
        Ok(report)
    }
}

/// Scalar probe `sum(w ⊙ y)` with fixed random `w`, so every output entry
/// contributes a distinct weight to the gradient.
pub fn random_projection<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

/// Record `sum(w ⊙ y)` on `g`.
pub fn project(g: &mut Graph, y: Var, w: &Tensor) -> Result<Var> {
    let wv = g.constant(w.clone());
    let p = g.mul(y, wv)?;
    Ok(g.sum(p))
}
