//! Derivative-free minimisers used by the estimators.

use serde::Serialize;

use crate::error::{Result, RobotError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TracePoint {
    pub theta: Vec<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Minimum {
    pub theta: Vec<f64>,
    pub loss: f64,
    pub evals: usize,
    pub converged: bool,
    pub trace: Vec<TracePoint>,
}

/// Records every evaluation and enforces the budget.
struct Recorder<'a, F> {
    f: &'a mut F,
    trace: Vec<TracePoint>,
    budget: usize,
}

impl<F: FnMut(&[f64]) -> Result<f64>> Recorder<'_, F> {
    fn exhausted(&self) -> bool {
        self.trace.len() >= self.budget
    }

    fn eval(&mut self, theta: &[f64]) -> Result<f64> {
        let loss = (self.f)(theta)?;
        // NaN would break every comparison below
        let loss = if loss.is_nan() { f64::INFINITY } else { loss };
        self.trace.push(TracePoint {
            theta: theta.to_vec(),
            loss,
        });
        Ok(loss)
    }

    fn finish(self, converged: bool) -> Minimum {
        let best = self
            .trace
            .iter()
            .min_by(|a, b| a.loss.total_cmp(&b.loss))
            .cloned()
            .expect("at least one evaluation");
        Minimum {
            theta: best.theta,
            loss: best.loss,
            evals: self.trace.len(),
            converged,
            trace: self.trace,
        }
    }
}

/// Golden-section search on `[lo, hi]` after a coarse scan.
///
/// The scan evaluates `prescan` equally spaced points and narrows the bracket
/// to the neighbours of the best one, which protects against the local
/// plateaus a trimmed objective can have far from the optimum. Stops once the
/// bracket is shorter than `tol` or `max_evals` evaluations were spent.
pub fn golden_section<F>(mut f: F, lo: f64, hi: f64, prescan: usize, tol: f64, max_evals: usize) -> Result<Minimum>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(RobotError::invalid(format!("golden section needs finite bounds lo < hi, got [{lo}, {hi}]")));
    }
    if !(tol > 0.0) || max_evals == 0 {
        return Err(RobotError::invalid("tolerance and evaluation budget must be positive"));
    }
    let mut g = |t: &[f64]| f(t[0]);
    let mut rec = Recorder {
        f: &mut g,
        trace: Vec::new(),
        budget: max_evals,
    };

    let (mut a, mut b) = (lo, hi);
    if prescan >= 3 {
        let step = (hi - lo) / (prescan - 1) as f64;
        let mut best = (f64::INFINITY, 0usize);
        for i in 0..prescan {
            if rec.exhausted() {
                return Ok(rec.finish(false));
            }
            let v = rec.eval(&[lo + step * i as f64])?;
            if v < best.0 {
                best = (v, i);
            }
        }
        let i = best.1;
        a = lo + step * i.saturating_sub(1) as f64;
        b = lo + step * (i + 1).min(prescan - 1) as f64;
    }

    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    if rec.exhausted() {
        return Ok(rec.finish(false));
    }
    let mut fc = rec.eval(&[c])?;
    if rec.exhausted() {
        return Ok(rec.finish(false));
    }
    let mut fd = rec.eval(&[d])?;
    while b - a > tol {
        if rec.exhausted() {
            return Ok(rec.finish(false));
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = rec.eval(&[c])?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = rec.eval(&[d])?;
        }
    }
    Ok(rec.finish(true))
}

/// Nelder–Mead simplex search with one restart from the best vertex.
///
/// Converged when the spread of simplex values is below `tol` and every
/// vertex lies within `tol` of the best one.
pub fn nelder_mead<F>(mut f: F, start: &[f64], radius: f64, tol: f64, max_evals: usize) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if start.is_empty() || start.iter().any(|x| !x.is_finite()) {
        return Err(RobotError::invalid("Nelder-Mead needs a finite nonempty start"));
    }
    if !(radius > 0.0) || !(tol > 0.0) || max_evals == 0 {
        return Err(RobotError::invalid("radius, tolerance and budget must be positive"));
    }
    let mut rec = Recorder {
        f: &mut f,
        trace: Vec::new(),
        budget: max_evals,
    };
    let mut origin = start.to_vec();
    let mut converged = false;
    for _ in 0..2 {
        match simplex_run(&mut rec, &origin, radius, tol)? {
            Some(best) => {
                origin = best;
                converged = true;
            }
            None => {
                converged = false;
                break;
            }
        }
    }
    Ok(rec.finish(converged))
}

// Returns the best vertex on convergence, None when the budget ran out.
fn simplex_run<F>(rec: &mut Recorder<'_, F>, origin: &[f64], radius: f64, tol: f64) -> Result<Option<Vec<f64>>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let dim = origin.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    for k in 0..=dim {
        if rec.exhausted() {
            return Ok(None);
        }
        let mut p = origin.to_vec();
        if k > 0 {
            p[k - 1] += radius;
        }
        let v = rec.eval(&p)?;
        simplex.push((p, v));
    }
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let size = simplex[1..]
            .iter()
            .flat_map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        if (worst - best).abs() <= tol && size <= tol {
            return Ok(Some(simplex[0].0.clone()));
        }
        if rec.exhausted() {
            return Ok(None);
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|i| simplex[..dim].iter().map(|(p, _)| p[i]).sum::<f64>() / dim as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[dim].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = rec.eval(&xr)?;
        if fr < simplex[0].1 {
            if rec.exhausted() {
                simplex[dim] = (xr, fr);
                continue;
            }
            let xe = along(-2.0);
            let fe = rec.eval(&xe)?;
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            if rec.exhausted() {
                return Ok(None);
            }
            let (xc, fc) = if fr < worst {
                let x = along(-0.5);
                let v = rec.eval(&x)?;
                (x, v)
            } else {
                let x = along(0.5);
                let v = rec.eval(&x)?;
                (x, v)
            };
            if fc < worst.min(fr) {
                simplex[dim] = (xc, fc);
            } else {
                let anchor = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    if rec.exhausted() {
                        return Ok(None);
                    }
                    let p: Vec<f64> = anchor.iter().zip(&vertex.0).map(|(a, x)| a + 0.5 * (x - a)).collect();
                    let v = rec.eval(&p)?;
                    *vertex = (p, v);
                }
            }
        }
    }
}
