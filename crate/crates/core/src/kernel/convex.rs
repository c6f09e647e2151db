//! Smooth convex minimization over a box, affine equalities and (linear or
//! smooth convex) inequalities.
//!
//! Problems with only box and equality constraints are handled by projected
//! gradient with Barzilai-Borwein steps and Armijo backtracking. Problems
//! with inequality constraints use a log-barrier method whose centering
//! steps are damped Newton iterations on finite-difference Hessians.

use nalgebra::{DMatrix, DVector};

use crate::error::KernelError;

/// Value-and-gradient callback: returns `f(x)` and writes `∇f(x)` into the buffer.
pub type SmoothFn<'a> = Box<dyn Fn(&[f64], &mut [f64]) -> f64 + 'a>;

pub struct ConvexProgram<'a> {
    pub dim: usize,
    pub objective: SmoothFn<'a>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub eq_rows: Vec<(Vec<f64>, f64)>,
    pub le_rows: Vec<(Vec<f64>, f64)>,
    /// Smooth convex constraints `g(x) ≤ 0`.
    pub convex_le: Vec<SmoothFn<'a>>,
}

impl<'a> ConvexProgram<'a> {
    pub fn new(dim: usize, objective: SmoothFn<'a>) -> Self {
        ConvexProgram {
            dim,
            objective,
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
            eq_rows: Vec::new(),
            le_rows: Vec::new(),
            convex_le: Vec::new(),
        }
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        self.le_rows.push((row, rhs));
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.eq_rows.push((row, rhs));
    }

    pub fn add_convex_le(&mut self, g: SmoothFn<'a>) {
        self.convex_le.push(g);
    }

    fn validate(&self, start: &[f64]) -> Result<(), KernelError> {
        let n = self.dim;
        if start.len() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(KernelError::Malformed("dimension mismatch between program and start point".into()));
        }
        for j in 0..n {
            if self.lower[j] > self.upper[j] || self.lower[j].is_nan() || self.upper[j].is_nan() {
                return Err(KernelError::Malformed(format!("empty bounds on variable {j}")));
            }
        }
        for (row, rhs) in self.eq_rows.iter().chain(&self.le_rows) {
            if row.len() != n || !rhs.is_finite() || row.iter().any(|v| !v.is_finite()) {
                return Err(KernelError::Malformed("malformed linear row".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Projected-gradient residual, or the final barrier duality-gap bound.
    pub stationarity: f64,
    /// Objective after each outer iteration.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConvexOutcome {
    Solved(ConvexSolution),
    /// No strictly feasible point: phase 1 could not push the largest
    /// violation below zero. `constraint` indexes linear rows first, then
    /// convex constraints, then bounds.
    Infeasible { max_violation: f64, constraint: usize },
}

impl ConvexOutcome {
    pub fn solved(self) -> Option<ConvexSolution> {
        match self {
            ConvexOutcome::Solved(s) => Some(s),
            ConvexOutcome::Infeasible { .. } => None,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
}

/// Minimizes the program from `start` to tolerance `tol`.
pub fn solve_convex(cp: &ConvexProgram<'_>, start: &[f64], tol: f64) -> Result<ConvexOutcome, KernelError> {
    cp.validate(start)?;
    if !(tol > 0.0) {
        return Err(KernelError::Malformed(format!("tolerance must be positive, got {tol}")));
    }
    if cp.le_rows.is_empty() && cp.convex_le.is_empty() {
        projected_gradient(cp, start, tol).map(ConvexOutcome::Solved)
    } else {
        barrier(cp, start, tol)
    }
}

// ---------------------------------------------------------------------------
// projected gradient

struct Projector {
    lower: Vec<f64>,
    upper: Vec<f64>,
    eq: Option<(DMatrix<f64>, DVector<f64>, nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>)>,
}

impl Projector {
    fn new(cp: &ConvexProgram<'_>) -> Result<Self, KernelError> {
        let eq = if cp.eq_rows.is_empty() {
            None
        } else {
            let e = DMatrix::from_fn(cp.eq_rows.len(), cp.dim, |i, j| cp.eq_rows[i].0[j]);
            let d = DVector::from_iterator(cp.eq_rows.len(), cp.eq_rows.iter().map(|r| r.1));
            let eet = &e * e.transpose();
            let lu = eet.lu();
            if !lu.is_invertible() {
                return Err(KernelError::Malformed("equality rows are linearly dependent".into()));
            }
            Some((e, d, lu))
        };
        Ok(Projector {
            lower: cp.lower.clone(),
            upper: cp.upper.clone(),
            eq,
        })
    }

    fn clamp(&self, x: &mut [f64]) {
        for j in 0..x.len() {
            x[j] = x[j].clamp(self.lower[j], self.upper[j]);
        }
    }

    fn affine(&self, x: &mut [f64]) {
        if let Some((e, d, lu)) = &self.eq {
            let xv = DVector::from_column_slice(x);
            let r = e * &xv - d;
            let corr = e.transpose() * lu.solve(&r).expect("invertible");
            for j in 0..x.len() {
                x[j] -= corr[j];
            }
        }
    }

    fn project(&self, x: &mut [f64]) {
        if self.eq.is_none() {
            self.clamp(x);
            return;
        }
        // Dykstra's alternating projections onto box ∩ affine set
        let n = x.len();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        let mut y = x.to_vec();
        for _ in 0..10_000 {
            let mut a: Vec<f64> = (0..n).map(|j| y[j] + p[j]).collect();
            self.affine(&mut a);
            for j in 0..n {
                p[j] = y[j] + p[j] - a[j];
            }
            let mut b: Vec<f64> = (0..n).map(|j| a[j] + q[j]).collect();
            self.clamp(&mut b);
            for j in 0..n {
                q[j] = a[j] + q[j] - b[j];
            }
            let change = (0..n).map(|j| (b[j] - y[j]).abs()).fold(0.0, f64::max);
            y = b;
            if change <= 1e-15 * (1.0 + inf_norm(&y)) {
                break;
            }
        }
        x.copy_from_slice(&y);
    }
}

fn projected_gradient(cp: &ConvexProgram<'_>, start: &[f64], tol: f64) -> Result<ConvexSolution, KernelError> {
    const MAX_ITER: usize = 50_000;
    let n = cp.dim;
    let proj = Projector::new(cp)?;
    let mut x = start.to_vec();
    proj.project(&mut x);
    let mut g = vec![0.0; n];
    let mut f = (cp.objective)(&x, &mut g);
    if !f.is_finite() {
        return Err(KernelError::Numerical("objective is not finite at the start point".into()));
    }
    let mut trace = vec![f];
    let mut step = 1.0 / inf_norm(&g).max(1e-12);
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let stationarity = |x: &[f64], g: &[f64]| -> f64 {
        let mut y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
        proj.project(&mut y);
        x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    for iter in 0..MAX_ITER {
        let r = stationarity(&x, &g);
        if r <= tol {
            return Ok(ConvexSolution {
                x,
                objective: f,
                iterations: iter,
                stationarity: r,
                objective_trace: trace,
            });
        }
        let mut accepted = false;
        let mut alpha = step;
        for _ in 0..80 {
            for j in 0..n {
                x_new[j] = x[j] - alpha * g[j];
            }
            proj.project(&mut x_new);
            let f_new = (cp.objective)(&x_new, &mut g_new);
            let decrease: f64 = (0..n).map(|j| g[j] * (x_new[j] - x[j])).sum();
            if f_new.is_finite() && f_new <= f + 1e-4 * decrease {
                let s: Vec<f64> = (0..n).map(|j| x_new[j] - x[j]).collect();
                let y: Vec<f64> = (0..n).map(|j| g_new[j] - g[j]).collect();
                let sy = dot(&s, &y);
                step = if sy > 0.0 { (dot(&s, &s) / sy).clamp(1e-20, 1e20) } else { alpha * 2.0 };
                x.copy_from_slice(&x_new);
                g.copy_from_slice(&g_new);
                f = f_new;
                trace.push(f);
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // no further descent is representable in floating point
            let r = stationarity(&x, &g);
            return Ok(ConvexSolution {
                x,
                objective: f,
                iterations: iter,
                stationarity: r,
                objective_trace: trace,
            });
        }
    }
    Err(KernelError::IterationLimit {
        limit: MAX_ITER,
        best: x,
        objective: f,
    })
}

// ---------------------------------------------------------------------------
// log barrier

/// Inequalities `h_i(z) < 0` over the barrier variables `z`.
struct BarrierSystem<'p, 'a> {
    cp: &'p ConvexProgram<'a>,
    /// Free (non-fixed) variable indices into `x`.
    free: Vec<usize>,
    base: Vec<f64>,
    /// Phase 1 adds the slack `s` as the last barrier variable and shifts all
    /// inequalities by it.
    phase_one: bool,
}

impl<'p, 'a> BarrierSystem<'p, 'a> {
    fn dim(&self) -> usize {
        self.free.len() + usize::from(self.phase_one)
    }

    fn expand(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.base.clone();
        for (i, &j) in self.free.iter().enumerate() {
            x[j] = z[i];
        }
        x
    }

    fn slack(&self, z: &[f64]) -> f64 {
        if self.phase_one {
            z[self.free.len()]
        } else {
            0.0
        }
    }

    /// Inequality values `h_i(z) = constraint_i(x) − s`, all of which must be negative.
    fn values(&self, z: &[f64]) -> Vec<f64> {
        let x = self.expand(z);
        let s = self.slack(z);
        let mut out = Vec::new();
        for (row, rhs) in &self.cp.le_rows {
            out.push(dot(row, &x) - rhs - s);
        }
        let mut scratch = vec![0.0; x.len()];
        for g in &self.cp.convex_le {
            out.push(g(&x, &mut scratch) - s);
        }
        // variable bounds stay hard in phase 1 so that every function is
        // only ever evaluated on its domain
        for &j in &self.free {
            if self.cp.lower[j].is_finite() {
                out.push(self.cp.lower[j] - x[j]);
            }
            if self.cp.upper[j].is_finite() {
                out.push(x[j] - self.cp.upper[j]);
            }
        }
        out
    }

    fn base_objective(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        if self.phase_one {
            grad.iter_mut().for_each(|g| *g = 0.0);
            *grad.last_mut().unwrap() = 1.0;
            return self.slack(z);
        }
        let x = self.expand(z);
        let mut gx = vec![0.0; x.len()];
        let f = (self.cp.objective)(&x, &mut gx);
        for (i, &j) in self.free.iter().enumerate() {
            grad[i] = gx[j];
        }
        f
    }

    /// Barrier function `t f(z) − Σ log(−h_i(z))`, its gradient and Hessian.
    fn evaluate(&self, z: &[f64], t: f64, want_hessian: bool) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let n = self.dim();
        let nf = self.free.len();
        let x = self.expand(z);
        let s = self.slack(z);
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        let mut gbuf = vec![0.0; n];
        let f = self.base_objective(z, &mut gbuf);
        if !f.is_finite() {
            return None;
        }
        let mut value = t * f;
        for i in 0..n {
            grad[i] = t * gbuf[i];
        }
        if want_hessian && !self.phase_one {
            let h = fd_hessian(z, &gbuf, |zz, out| {
                self.base_objective(zz, out);
            });
            hess += t * h;
        }
        // generic accumulation for one inequality with gradient `a` (length n)
        let mut add_term = |hv: f64, a: &DVector<f64>, curvature: Option<&DMatrix<f64>>, value: &mut f64| -> bool {
            if !(hv < 0.0) {
                return false;
            }
            *value -= (-hv).ln();
            grad.axpy(-1.0 / hv, a, 1.0);
            if want_hessian {
                hess.ger(1.0 / (hv * hv), a, a, 1.0);
                if let Some(c) = curvature {
                    hess += c * (-1.0 / hv);
                }
            }
            true
        };
        for (row, rhs) in &self.cp.le_rows {
            let mut a = DVector::zeros(n);
            for (i, &j) in self.free.iter().enumerate() {
                a[i] = row[j];
            }
            if self.phase_one {
                a[nf] = -1.0;
            }
            let hv = dot(row, &x) - rhs - s;
            if !add_term(hv, &a, None, &mut value) {
                return None;
            }
        }
        for g in &self.cp.convex_le {
            let mut gx = vec![0.0; x.len()];
            let gv = g(&x, &mut gx);
            if !gv.is_finite() {
                return None;
            }
            let mut a = DVector::zeros(n);
            for (i, &j) in self.free.iter().enumerate() {
                a[i] = gx[j];
            }
            if self.phase_one {
                a[nf] = -1.0;
            }
            let hv = gv - s;
            let curvature = if want_hessian {
                let local = |zz: &[f64], out: &mut [f64]| {
                    let xx = self.expand(zz);
                    let mut gg = vec![0.0; xx.len()];
                    g(&xx, &mut gg);
                    for (i, &j) in self.free.iter().enumerate() {
                        out[i] = gg[j];
                    }
                    if self.phase_one {
                        out[nf] = 0.0;
                    }
                };
                let g0: Vec<f64> = a.iter().enumerate().map(|(i, &v)| if i < nf { v } else { 0.0 }).collect();
                Some(fd_hessian(z, &g0, local))
            } else {
                None
            };
            if !add_term(hv, &a, curvature.as_ref(), &mut value) {
                return None;
            }
        }
        for (i, &j) in self.free.iter().enumerate() {
            let mut a = DVector::zeros(n);
            if self.cp.lower[j].is_finite() {
                a[i] = -1.0;
                if !add_term(self.cp.lower[j] - x[j], &a, None, &mut value) {
                    return None;
                }
            }
            if self.cp.upper[j].is_finite() {
                a[i] = 1.0;
                if !add_term(x[j] - self.cp.upper[j], &a, None, &mut value) {
                    return None;
                }
            }
        }
        Some((value, grad, hess))
    }

    fn num_inequalities(&self) -> usize {
        let bounds: usize = self
            .free
            .iter()
            .map(|&j| usize::from(self.cp.lower[j].is_finite()) + usize::from(self.cp.upper[j].is_finite()))
            .sum();
        self.cp.le_rows.len() + self.cp.convex_le.len() + bounds
    }

    fn eq_matrix(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        if self.cp.eq_rows.is_empty() {
            return None;
        }
        let n = self.dim();
        let rows = self.cp.eq_rows.len();
        let mut e = DMatrix::zeros(rows, n);
        let mut d = DVector::zeros(rows);
        for (r, (row, rhs)) in self.cp.eq_rows.iter().enumerate() {
            let mut fixed = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if let Some(i) = self.free.iter().position(|&k| k == j) {
                    e[(r, i)] = v;
                } else {
                    fixed += v * self.base[j];
                }
            }
            d[r] = rhs - fixed;
        }
        Some((e, d))
    }
}

/// Forward-difference Hessian of a gradient callback, symmetrized.
fn fd_hessian(z: &[f64], g0: &[f64], grad: impl Fn(&[f64], &mut [f64])) -> DMatrix<f64> {
    let n = z.len();
    let mut h = DMatrix::zeros(n, n);
    let mut zz = z.to_vec();
    let mut g1 = vec![0.0; n];
    for j in 0..n {
        let step = 1e-7 * z[j].abs().max(1e-7);
        zz[j] = z[j] + step;
        let actual = zz[j] - z[j];
        grad(&zz, &mut g1);
        for i in 0..n {
            h[(i, j)] = (g1[i] - g0[i]) / actual;
        }
        zz[j] = z[j];
    }
    (&h + h.transpose()) * 0.5
}

fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>, eq: Option<&(DMatrix<f64>, DVector<f64>)>, z: &DVector<f64>) -> Option<DVector<f64>> {
    let n = grad.len();
    let scale = hess.diagonal().iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-300);
    match eq {
        None => {
            let mut reg = 0.0;
            for _ in 0..16 {
                let mut h = hess.clone();
                for i in 0..n {
                    h[(i, i)] += reg;
                }
                if let Some(ch) = h.cholesky() {
                    return Some(-ch.solve(grad));
                }
                reg = if reg == 0.0 { 1e-12 * scale } else { reg * 10.0 };
            }
            None
        }
        Some((e, d)) => {
            let p = e.nrows();
            let mut kkt = DMatrix::zeros(n + p, n + p);
            kkt.view_mut((0, 0), (n, n)).copy_from(hess);
            kkt.view_mut((n, 0), (p, n)).copy_from(e);
            kkt.view_mut((0, n), (n, p)).copy_from(&e.transpose());
            let mut rhs = DVector::zeros(n + p);
            rhs.rows_mut(0, n).copy_from(&(-grad));
            rhs.rows_mut(n, p).copy_from(&(d - e * z));
            let sol = kkt.lu().solve(&rhs)?;
            Some(sol.rows(0, n).into_owned())
        }
    }
}

enum Centering {
    Done { z: DVector<f64>, steps: usize },
    Stuck { z: DVector<f64>, steps: usize },
}

fn center(sys: &BarrierSystem<'_, '_>, mut z: DVector<f64>, t: f64, stop_when_negative_slack: bool) -> Centering {
    const MAX_NEWTON: usize = 200;
    let eq = sys.eq_matrix();
    for step in 0..MAX_NEWTON {
        let Some((phi, grad, hess)) = sys.evaluate(z.as_slice(), t, true) else {
            return Centering::Stuck { z, steps: step };
        };
        let Some(dz) = newton_direction(&hess, &grad, eq.as_ref(), &z) else {
            return Centering::Stuck { z, steps: step };
        };
        let lambda_sq = -grad.dot(&dz);
        if lambda_sq.abs() / 2.0 <= 1e-11 {
            return Centering::Done { z, steps: step };
        }
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &z + alpha * &dz;
            if let Some((phi_new, _, _)) = sys.evaluate(cand.as_slice(), t, false) {
                if phi_new <= phi - 0.25 * alpha * lambda_sq.max(0.0) {
                    z = cand;
                    moved = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !moved {
            return Centering::Done { z, steps: step };
        }
        if stop_when_negative_slack && sys.slack(z.as_slice()) < 0.0 && lambda_sq / 2.0 < 1e-3 {
            return Centering::Done { z, steps: step + 1 };
        }
    }
    Centering::Stuck { z, steps: MAX_NEWTON }
}

fn strictly_feasible(sys: &BarrierSystem<'_, '_>, x: &[f64]) -> bool {
    let z: Vec<f64> = sys.free.iter().map(|&j| x[j]).collect();
    sys.values(&z).iter().all(|&v| v < 0.0)
}

fn barrier(cp: &ConvexProgram<'_>, start: &[f64], tol: f64) -> Result<ConvexOutcome, KernelError> {
    const MU: f64 = 10.0;
    const MAX_OUTER: usize = 80;
    let n = cp.dim;
    let free: Vec<usize> = (0..n).filter(|&j| cp.lower[j] < cp.upper[j]).collect();
    let mut base = start.to_vec();
    for j in 0..n {
        if cp.lower[j] == cp.upper[j] {
            base[j] = cp.lower[j];
        }
    }
    let mut phase2 = BarrierSystem {
        cp,
        free: free.clone(),
        base: base.clone(),
        phase_one: false,
    };
    let mut total_steps = 0usize;

    // start-point objective for the no-worse-than-start guarantee
    let mut scratch = vec![0.0; n];
    let start_feasible = start_satisfies(cp, start);
    let start_obj = (cp.objective)(start, &mut scratch);

    let mut x0 = base.clone();
    if !strictly_feasible(&phase2, &x0) {
        let p1 = BarrierSystem {
            cp,
            free: free.clone(),
            base: base.clone(),
            phase_one: true,
        };
        let mut z: Vec<f64> = free.iter().map(|&j| x0[j]).collect();
        if let Some((e, d)) = p1.eq_matrix() {
            // least-norm correction onto the affine set (slack column is zero)
            let ez = DVector::from_column_slice(&z);
            let ee = e.columns(0, free.len()).into_owned();
            let r = &ee * &ez - d;
            if let Some(corr) = (&ee * ee.transpose()).lu().solve(&r) {
                let c = ee.transpose() * corr;
                for i in 0..z.len() {
                    z[i] -= c[i];
                }
            }
        }
        for (i, &j) in free.iter().enumerate() {
            let (lo, hi) = (cp.lower[j], cp.upper[j]);
            let margin = if lo.is_finite() && hi.is_finite() {
                1e-3 * (hi - lo)
            } else {
                1e-3 * lo.abs().max(hi.abs()).min(f64::MAX).max(1.0)
            };
            if lo.is_finite() && z[i] <= lo {
                z[i] = lo + margin;
            }
            if hi.is_finite() && z[i] >= hi {
                z[i] = hi - margin;
            }
        }
        z.push(0.0);
        let worst = p1.values(&z).into_iter().fold(f64::NEG_INFINITY, f64::max);
        let s0 = if worst.is_finite() { worst.max(0.0) + 1.0 + worst.abs() * 0.1 } else { 1.0 };
        *z.last_mut().unwrap() = s0;
        let mut zv = DVector::from_vec(z);
        let m1 = p1.num_inequalities() as f64;
        let mut t = 1.0;
        let mut found = false;
        for _ in 0..MAX_OUTER {
            match center(&p1, zv.clone(), t, true) {
                Centering::Done { z, steps } | Centering::Stuck { z, steps } => {
                    total_steps += steps;
                    zv = z;
                }
            }
            if p1.slack(zv.as_slice()) < 0.0 {
                found = true;
                break;
            }
            if m1 / t <= 1e-12 {
                break;
            }
            t *= MU;
        }
        if !found {
            let vals = p1.values(zv.as_slice());
            let s = p1.slack(zv.as_slice());
            let (idx, worst) = vals
                .iter()
                .map(|v| v + s)
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
            return Ok(ConvexOutcome::Infeasible {
                max_violation: worst,
                constraint: idx,
            });
        }
        x0 = p1.expand(zv.as_slice());
    }
    phase2.base = x0.clone();

    let m = phase2.num_inequalities() as f64;
    let mut z = DVector::from_iterator(free.len(), free.iter().map(|&j| x0[j]));
    let mut t = 1.0;
    let mut trace = Vec::new();
    let mut gap = m / t;
    let mut converged = false;
    for _ in 0..MAX_OUTER {
        let outcome = center(&phase2, z.clone(), t, false);
        let (znew, stuck) = match outcome {
            Centering::Done { z, steps } => {
                total_steps += steps;
                (z, false)
            }
            Centering::Stuck { z, steps } => {
                total_steps += steps;
                (z, true)
            }
        };
        z = znew;
        let x = phase2.expand(z.as_slice());
        trace.push((cp.objective)(&x, &mut scratch));
        gap = m / t;
        if gap <= tol {
            converged = true;
            break;
        }
        if stuck && gap <= tol.sqrt() {
            // numerically stalled close to optimality
            converged = true;
            break;
        }
        t *= MU;
    }
    let x = phase2.expand(z.as_slice());
    let objective = (cp.objective)(&x, &mut scratch);
    if !converged {
        return Err(KernelError::IterationLimit {
            limit: MAX_OUTER,
            best: x,
            objective,
        });
    }
    if start_feasible && start_obj.is_finite() && start_obj < objective {
        return Ok(ConvexOutcome::Solved(ConvexSolution {
            x: start.to_vec(),
            objective: start_obj,
            iterations: total_steps,
            stationarity: gap,
            objective_trace: trace,
        }));
    }
    Ok(ConvexOutcome::Solved(ConvexSolution {
        x,
        objective,
        iterations: total_steps,
        stationarity: gap,
        objective_trace: trace,
    }))
}

/// Whether `x` satisfies every constraint (non-strictly, exact arithmetic).
fn start_satisfies(cp: &ConvexProgram<'_>, x: &[f64]) -> bool {
    if (0..cp.dim).any(|j| x[j] < cp.lower[j] || x[j] > cp.upper[j]) {
        return false;
    }
    if cp.le_rows.iter().any(|(row, rhs)| dot(row, x) > *rhs) {
        return false;
    }
    if cp.eq_rows.iter().any(|(row, rhs)| (dot(row, x) - rhs).abs() > 1e-12 * (1.0 + rhs.abs())) {
        return false;
    }
    let mut g = vec![0.0; cp.dim];
    cp.convex_le.iter().all(|c| c(x, &mut g) <= 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_minimizer() {
        let cp = ConvexProgram::new(
            1,
            Box::new(|x: &[f64], g: &mut [f64]| {
                g[0] = 2.0 * (x[0] - 2.0);
                (x[0] - 2.0).powi(2)
            }),
        )
        .with_bounds(vec![0.0], vec![1.0]);
        let sol = solve_convex(&cp, &[0.5], 1e-9).unwrap().solved().unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unconstrained_quadratic() {
        let cp = ConvexProgram::new(
            1,
            Box::new(|x: &[f64], g: &mut [f64]| {
                g[0] = 2.0 * x[0];
                x[0] * x[0]
            }),
        );
        let sol = solve_convex(&cp, &[5.0], 1e-9).unwrap().solved().unwrap();
        assert!(sol.x[0].abs() <= 1e-9);
    }

    #[test]
    fn barrier_with_linear_constraint() {
        // min (x-3)^2 + (y-3)^2 s.t. x + y <= 2 -> (1, 1)
        let mut cp = ConvexProgram::new(
            2,
            Box::new(|x: &[f64], g: &mut [f64]| {
                g[0] = 2.0 * (x[0] - 3.0);
                g[1] = 2.0 * (x[1] - 3.0);
                (x[0] - 3.0).powi(2) + (x[1] - 3.0).powi(2)
            }),
        );
        cp.add_le(vec![1.0, 1.0], 2.0);
        let sol = solve_convex(&cp, &[5.0, 5.0], 1e-10).unwrap().solved().unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-6 && (sol.x[1] - 1.0).abs() < 1e-6, "{:?}", sol.x);
    }

    #[test]
    fn barrier_detects_infeasibility() {
        let mut cp = ConvexProgram::new(
            1,
            Box::new(|x: &[f64], g: &mut [f64]| {
                g[0] = 1.0;
                x[0]
            }),
        )
        .with_bounds(vec![0.0], vec![1.0]);
        cp.add_convex_le(Box::new(|x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * x[0];
            x[0] * x[0] + 1.0
        }));
        assert!(matches!(solve_convex(&cp, &[0.5], 1e-8).unwrap(), ConvexOutcome::Infeasible { .. }));
    }

    #[test]
    fn equality_constrained_projection() {
        // min x^2 + 2y^2 s.t. x + y = 1, box [0,1]^2 -> (2/3, 1/3)
        let mut cp = ConvexProgram::new(
            2,
            Box::new(|x: &[f64], g: &mut [f64]| {
                g[0] = 2.0 * x[0];
                g[1] = 4.0 * x[1];
                x[0] * x[0] + 2.0 * x[1] * x[1]
            }),
        )
        .with_bounds(vec![0.0, 0.0], vec![1.0, 1.0]);
        cp.add_eq(vec![1.0, 1.0], 1.0);
        let sol = solve_convex(&cp, &[0.0, 0.0], 1e-10).unwrap().solved().unwrap();
        assert!((sol.x[0] - 2.0 / 3.0).abs() < 1e-8, "{:?}", sol.x);
    }
}
