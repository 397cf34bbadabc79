//! Minimal polynomial extrapolation (MPE) for vector fixed-point sequences.
//!
//! Given iterates `y_0, ..., y_{w+1}` with differences `u_j = y_{j+1} - y_j`,
//! MPE solves the least-squares problem `min || U c + u_w ||` with
//! `U = [u_0 .. u_{w-1}]`, sets `c_w = 1` and returns
//! `s = sum_j (c_j / sum_i c_i) y_j`. For an affine iteration whose minimal
//! polynomial (with respect to the initial error) has degree at most `w`,
//! `s` is the exact fixed point.
//!
//! The least-squares core is a modified Gram-Schmidt factorization. When a
//! difference vector is numerically dependent on the previous ones the
//! sequence has a lower-degree minimal polynomial and the extrapolation is
//! carried out with that reduced width.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative size below which an orthogonalized difference counts as
/// linearly dependent on its predecessors.
const DEPENDENCE_TOL: f64 = 1e-11;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpeConfig {
    /// Number of differences `w` entering the least-squares problem.
    pub width: usize,
    pub max_cycles: usize,
    /// Minimum `|sum c_i|` accepted before the extrapolant is discarded.
    pub degeneracy_floor: f64,
    /// An extrapolant is kept only if its metric is at most this factor
    /// times the metric of the last base iterate.
    pub guard_factor: f64,
}

impl Default for MpeConfig {
    fn default() -> Self {
        MpeConfig {
            width: 6,
            max_cycles: 1000,
            degeneracy_floor: 1e-13,
            guard_factor: 10.0,
        }
    }
}

impl MpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 1 {
            return Err(Error::invalid("MPE width must be at least 1"));
        }
        if !(self.degeneracy_floor >= 0.0) {
            return Err(Error::invalid("MPE degeneracy floor must be non-negative"));
        }
        if !(self.guard_factor >= 1.0) {
            return Err(Error::invalid("MPE guard factor must be at least 1"));
        }
        Ok(())
    }
}

/// Working set of `width + 2` iterates.
#[derive(Clone, Debug)]
pub struct ExtrapolationWindow {
    width: usize,
    iterates: Vec<Vec<f64>>,
}

impl ExtrapolationWindow {
    pub fn new(width: usize) -> Self {
        ExtrapolationWindow {
            width,
            iterates: Vec::with_capacity(width + 2),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn push(&mut self, y: Vec<f64>) -> Result<()> {
        if let Some(first) = self.iterates.first() {
            if first.len() != y.len() {
                return Err(Error::invalid(format!(
                    "iterate length {} differs from window length {}",
                    y.len(),
                    first.len()
                )));
            }
        }
        if self.is_full() {
            return Err(Error::invalid("extrapolation window is already full"));
        }
        self.iterates.push(y);
        Ok(())
    }

    pub fn is_full(&self) -> bool {
        self.iterates.len() == self.width + 2
    }

    pub fn len(&self) -> usize {
        self.iterates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterates.is_empty()
    }

    pub fn iterates(&self) -> &[Vec<f64>] {
        &self.iterates
    }

    pub fn last(&self) -> Option<&Vec<f64>> {
        self.iterates.last()
    }

    pub fn clear(&mut self) {
        self.iterates.clear();
    }

    /// First differences `u_j = y_{j+1} - y_j`.
    pub fn differences(&self) -> Vec<Vec<f64>> {
        self.iterates
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect())
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// MPE extrapolant of a full window, using the default degeneracy floor.
pub fn mpe_extrapolate(window: &ExtrapolationWindow) -> Result<Vec<f64>> {
    mpe_extrapolate_with(window, MpeConfig::default().degeneracy_floor)
}

pub fn mpe_extrapolate_with(window: &ExtrapolationWindow, floor: f64) -> Result<Vec<f64>> {
    if !window.is_full() {
        return Err(Error::invalid(format!(
            "window holds {} of {} iterates",
            window.len(),
            window.width + 2
        )));
    }
    let diffs = window.differences();
    let w = window.width;

    // Modified Gram-Schmidt on u_0, u_1, ... until a column is dependent on
    // its predecessors (or all w + 1 columns are processed).
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(w + 1);
    let mut r = vec![vec![0.0; w + 1]; w + 1];
    let mut degree = w;
    for (j, u) in diffs.iter().enumerate() {
        let mut v = u.clone();
        let original = norm(u);
        for (i, qi) in q.iter().enumerate() {
            let rij = dot(qi, &v);
            r[i][j] = rij;
            v.iter_mut().zip(qi).for_each(|(a, b)| *a -= rij * b);
        }
        let rest = norm(&v);
        let dependent = original == 0.0 || rest <= DEPENDENCE_TOL * original;
        if dependent || j == w {
            degree = j;
            break;
        }
        r[j][j] = rest;
        v.iter_mut().for_each(|a| *a /= rest);
        q.push(v);
    }

    // Solve R c = -Q^T u_degree, with r[.][degree] holding Q^T u_degree.
    let mut c = vec![0.0; degree + 1];
    c[degree] = 1.0;
    for i in (0..degree).rev() {
        let mut acc = -r[i][degree];
        for k in i + 1..degree {
            acc -= r[i][k] * c[k];
        }
        c[i] = acc / r[i][i];
    }
    let total: f64 = c.iter().sum();
    let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !total.is_finite() || total.abs() < floor * scale.max(1.0) {
        return Err(Error::DegenerateExtrapolation(format!(
            "coefficient sum {total:e} below floor"
        )));
    }
    let ys = window.iterates();
    let mut s = vec![0.0; ys[0].len()];
    for (cj, y) in c.iter().zip(ys) {
        let g = cj / total;
        s.iter_mut().zip(y).for_each(|(a, b)| *a += g * b);
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateExtrapolation("non-finite extrapolant".into()));
    }
    Ok(s)
}

/// Result of evaluating a fixed-point map at an iterate: a convergence
/// metric of the iterate itself and its image under the map.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub metric: f64,
    pub image: Vec<f64>,
}

/// A deterministic vector map `y -> step(y)` with a convergence metric.
pub trait FixedPointMap {
    fn evaluate(&mut self, y: &[f64]) -> Result<Evaluation>;

    /// Lets the map cap the total work (e.g. an iteration budget).
    fn exhausted(&self) -> bool {
        false
    }
}

impl<F> FixedPointMap for F
where
    F: FnMut(&[f64]) -> Result<Evaluation>,
{
    fn evaluate(&mut self, y: &[f64]) -> Result<Evaluation> {
        self(y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IterateKind {
    Base,
    Extrapolated,
}

/// One evaluated iterate of a cycle run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleEvent {
    pub kind: IterateKind,
    pub metric: f64,
    /// False for extrapolants rejected by the guard.
    pub accepted: bool,
}

#[derive(Clone, Debug)]
pub struct CycleOutcome {
    /// Last accepted iterate.
    pub solution: Vec<f64>,
    pub metric: f64,
    /// One event per evaluation, in evaluation order.
    pub history: Vec<CycleEvent>,
    pub evaluations: usize,
    pub cycles: usize,
    /// Extrapolations that were degenerate or rejected by the guard.
    pub fallbacks: usize,
    pub stopped: bool,
}

/// Restarted MPE: repeatedly generates `width + 1` base iterates from the
/// current start, extrapolates, and restarts from the extrapolant. `stop`
/// sees the metric of every base iterate and every extrapolant.
pub fn cycle<M: FixedPointMap>(
    map: &mut M,
    y0: Vec<f64>,
    cfg: &MpeConfig,
    mut stop: impl FnMut(f64) -> bool,
) -> Result<CycleOutcome> {
    cfg.validate()?;
    let mut out = CycleOutcome {
        solution: Vec::new(),
        metric: f64::NAN,
        history: Vec::new(),
        evaluations: 0,
        cycles: 0,
        fallbacks: 0,
        stopped: false,
    };
    let mut current = y0;
    let mut ev = map.evaluate(&current)?;
    out.evaluations += 1;
    out.history.push(CycleEvent {
        kind: IterateKind::Base,
        metric: ev.metric,
        accepted: true,
    });
    if stop(ev.metric) {
        out.metric = ev.metric;
        out.solution = current;
        out.stopped = true;
        return Ok(out);
    }

    while out.cycles < cfg.max_cycles && !map.exhausted() {
        out.cycles += 1;
        let mut window = ExtrapolationWindow::new(cfg.width);
        window.push(current)?;
        while !window.is_full() {
            let next = ev.image;
            ev = map.evaluate(&next)?;
            out.evaluations += 1;
            out.history.push(CycleEvent {
                kind: IterateKind::Base,
                metric: ev.metric,
                accepted: true,
            });
            if stop(ev.metric) {
                out.metric = ev.metric;
                out.solution = next;
                out.stopped = true;
                return Ok(out);
            }
            window.push(next)?;
            if map.exhausted() {
                out.metric = ev.metric;
                out.solution = window.iterates.pop().expect("non-empty window");
                return Ok(out);
            }
        }
        let base_metric = ev.metric;
        match mpe_extrapolate_with(&window, cfg.degeneracy_floor) {
            Ok(s) => {
                let ev_s = map.evaluate(&s)?;
                out.evaluations += 1;
                let accept = ev_s.metric.is_finite() && ev_s.metric <= cfg.guard_factor * base_metric;
                out.history.push(CycleEvent {
                    kind: IterateKind::Extrapolated,
                    metric: ev_s.metric,
                    accepted: accept,
                });
                if accept {
                    if stop(ev_s.metric) {
                        out.metric = ev_s.metric;
                        out.solution = s;
                        out.stopped = true;
                        return Ok(out);
                    }
                    current = s;
                    ev = ev_s;
                } else {
                    out.fallbacks += 1;
                    current = window.iterates.pop().expect("full window");
                }
            }
            Err(Error::DegenerateExtrapolation(msg)) => {
                log::debug!("MPE fallback: {msg}");
                out.fallbacks += 1;
                current = window.iterates.pop().expect("full window");
            }
            Err(e) => return Err(e),
        }
    }
    out.metric = ev.metric;
    out.solution = current;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window_of(width: usize, ys: Vec<Vec<f64>>) -> ExtrapolationWindow {
        let mut w = ExtrapolationWindow::new(width);
        for y in ys {
            w.push(y).unwrap();
        }
        w
    }

    #[test]
    fn constant_sequence() {
        let v = vec![1.5, -2.0, 0.25];
        let w = window_of(3, vec![v.clone(); 5]);
        assert_eq!(mpe_extrapolate(&w).unwrap(), v);
    }

    #[test]
    fn scalar_affine_width_one() {
        // y_{n+1} = 0.5 y_n + 1 from 0: fixed point 2
        let w = window_of(1, vec![vec![0.0], vec![1.0], vec![1.5]]);
        let s = mpe_extrapolate(&w).unwrap();
        assert!((s[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn incomplete_window_is_rejected() {
        let w = window_of(2, vec![vec![0.0], vec![1.0]]);
        assert!(mpe_extrapolate(&w).is_err());
        let mut w = ExtrapolationWindow::new(1);
        w.push(vec![0.0, 1.0]).unwrap();
        assert!(w.push(vec![0.0]).is_err());
    }

    #[test]
    fn oscillating_sign_sequence_is_degenerate() {
        // y_{n+1} = y_n + 1 has eigenvalue 1: the coefficients sum to zero
        let w = window_of(1, vec![vec![0.0], vec![1.0], vec![2.0]]);
        assert!(matches!(mpe_extrapolate(&w), Err(Error::DegenerateExtrapolation(_))));
    }

    #[test]
    fn stop_immediately() {
        let mut calls = 0;
        let mut map = |y: &[f64]| {
            calls += 1;
            Ok(Evaluation {
                metric: 0.0,
                image: y.to_vec(),
            })
        };
        let out = cycle(&mut map, vec![3.0], &MpeConfig::default(), |_| true).unwrap();
        assert_eq!(out.solution, vec![3.0]);
        assert_eq!(out.history.len(), 1);
        assert!(out.stopped);
        assert_eq!(calls, 1);
    }

    #[test]
    fn guard_rejects_bad_extrapolant() {
        // metric grows sharply away from the base iterates, so any
        // extrapolant that moves is rejected and plain iteration continues.
        let mut map = |y: &[f64]| {
            let next = vec![0.5 * y[0] + 1.0];
            let metric = if (y[0] - 2.0).abs() < 1e-9 { 1e9 } else { (y[0] - 2.0).abs() };
            Ok(Evaluation { metric, image: next })
        };
        let cfg = MpeConfig {
            width: 1,
            max_cycles: 3,
            ..MpeConfig::default()
        };
        let out = cycle(&mut map, vec![0.0], &cfg, |m| m < 1e-30).unwrap();
        assert_eq!(out.fallbacks, 3);
        assert!(!out.stopped);
        assert!(out
            .history
            .iter()
            .all(|h| h.kind == IterateKind::Base || !h.accepted));
    }
}
