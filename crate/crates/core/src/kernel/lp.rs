//! Mehrotra predictor-corrector interior-point method for linear programs.

use nalgebra::{DMatrix, DVector};

use crate::error::KernelError;

const MAX_ITERATIONS: usize = 200;
const STEP_DAMPING: f64 = 0.995;
/// A stalled solve is accepted when its best residual is within this multiple
/// of `max(√tol, 1e-4)`.
const STALL_ACCEPT: f64 = 1e-2;

/// `minimize cᵀx` subject to equality rows, `≤` rows and variable bounds
/// (bounds may be infinite).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub eq_rows: Vec<(Vec<f64>, f64)>,
    pub le_rows: Vec<(Vec<f64>, f64)>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    /// Problem in `dim` variables with zero objective and `x ≥ 0`.
    pub fn new(dim: usize) -> Self {
        LinearProgram {
            objective: vec![0.0; dim],
            eq_rows: Vec::new(),
            le_rows: Vec::new(),
            lower: vec![0.0; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.objective.len()
    }

    pub fn minimize(mut self, c: Vec<f64>) -> Self {
        self.objective = c;
        self
    }

    pub fn maximize(mut self, c: Vec<f64>) -> Self {
        self.objective = c.into_iter().map(|v| -v).collect();
        self
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        self.le_rows.push((row, rhs));
    }

    pub fn add_ge(&mut self, row: Vec<f64>, rhs: f64) {
        self.le_rows.push((row.into_iter().map(|v| -v).collect(), -rhs));
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.eq_rows.push((row, rhs));
    }

    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.lower[j] = lo;
        self.upper[j] = hi;
    }

    fn validate(&self) -> Result<(), KernelError> {
        let n = self.dim();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(KernelError::Malformed("bound vectors have the wrong length".into()));
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(KernelError::Malformed("objective has non-finite coefficients".into()));
        }
        for (row, rhs) in self.eq_rows.iter().chain(&self.le_rows) {
            if row.len() != n {
                return Err(KernelError::Malformed(format!("row of length {} in a {n}-variable problem", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) || !rhs.is_finite() {
                return Err(KernelError::Malformed("constraint has non-finite coefficients".into()));
            }
        }
        for j in 0..n {
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] == f64::INFINITY || self.upper[j] == f64::NEG_INFINITY {
                return Err(KernelError::Malformed(format!("invalid bounds on variable {j}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub duality_gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal(self) -> Option<LpSolution> {
        match self {
            LpOutcome::Optimal(s) => Some(s),
            _ => None,
        }
    }

    pub fn status(&self) -> &'static str {
        match self {
            LpOutcome::Optimal(_) => "optimal",
            LpOutcome::Infeasible => "infeasible",
            LpOutcome::Unbounded => "unbounded",
        }
    }
}

/// How an original variable is expressed through standard-form variables.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    Fixed(f64),
    /// `x = offset + z`
    Shifted { col: usize, offset: f64 },
    /// `x = offset − z`
    Mirrored { col: usize, offset: f64 },
    /// `x = z⁺ − z⁻`
    Free { pos: usize, neg: usize },
}

struct StandardForm {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    maps: Vec<VarMap>,
    constant: f64,
}

fn to_standard(lp: &LinearProgram) -> Result<StandardForm, LpOutcome> {
    let n = lp.dim();
    let mut maps = Vec::with_capacity(n);
    let mut cols = 0usize;
    let mut upper_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (lo, hi) = (lp.lower[j], lp.upper[j]);
        if lo > hi {
            return Err(LpOutcome::Infeasible);
        }
        let map = if lo == hi {
            VarMap::Fixed(lo)
        } else if lo.is_finite() {
            let col = cols;
            cols += 1;
            if hi.is_finite() {
                upper_rows.push((col, hi - lo));
            }
            VarMap::Shifted { col, offset: lo }
        } else if hi.is_finite() {
            let col = cols;
            cols += 1;
            VarMap::Mirrored { col, offset: hi }
        } else {
            let pos = cols;
            cols += 2;
            VarMap::Free { pos, neg: pos + 1 }
        };
        maps.push(map);
    }
    let structural = cols;
    let num_rows = lp.eq_rows.len() + lp.le_rows.len() + upper_rows.len();
    let total_cols = structural + lp.le_rows.len() + upper_rows.len();
    let mut a = DMatrix::zeros(num_rows, total_cols);
    let mut b = DVector::zeros(num_rows);
    let mut c = DVector::zeros(total_cols);
    let mut constant = 0.0;

    let place = |a: &mut DMatrix<f64>, row: usize, coeffs: &[f64]| -> f64 {
        let mut shift = 0.0;
        for (j, &v) in coeffs.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            match maps[j] {
                VarMap::Fixed(x) => shift += v * x,
                VarMap::Shifted { col, offset } => {
                    a[(row, col)] += v;
                    shift += v * offset;
                }
                VarMap::Mirrored { col, offset } => {
                    a[(row, col)] -= v;
                    shift += v * offset;
                }
                VarMap::Free { pos, neg } => {
                    a[(row, pos)] += v;
                    a[(row, neg)] -= v;
                }
            }
        }
        shift
    };

    let mut row = 0;
    for (coeffs, rhs) in &lp.eq_rows {
        let shift = place(&mut a, row, coeffs);
        b[row] = rhs - shift;
        row += 1;
    }
    for (i, (coeffs, rhs)) in lp.le_rows.iter().enumerate() {
        let shift = place(&mut a, row, coeffs);
        a[(row, structural + i)] = 1.0;
        b[row] = rhs - shift;
        row += 1;
    }
    for (i, &(col, width)) in upper_rows.iter().enumerate() {
        a[(row, col)] = 1.0;
        a[(row, structural + lp.le_rows.len() + i)] = 1.0;
        b[row] = width;
        row += 1;
    }
    for (j, &v) in lp.objective.iter().enumerate() {
        match maps[j] {
            VarMap::Fixed(x) => constant += v * x,
            VarMap::Shifted { col, offset } => {
                c[col] += v;
                constant += v * offset;
            }
            VarMap::Mirrored { col, offset } => {
                c[col] -= v;
                constant += v * offset;
            }
            VarMap::Free { pos, neg } => {
                c[pos] += v;
                c[neg] -= v;
            }
        }
    }
    Ok(StandardForm { a, b, c, maps, constant })
}

fn recover(maps: &[VarMap], z: &DVector<f64>) -> Vec<f64> {
    maps.iter()
        .map(|m| match *m {
            VarMap::Fixed(x) => x,
            VarMap::Shifted { col, offset } => offset + z[col],
            VarMap::Mirrored { col, offset } => offset - z[col],
            VarMap::Free { pos, neg } => z[pos] - z[neg],
        })
        .collect()
}

struct IpmResult {
    x: DVector<f64>,
    gap: f64,
    rp: f64,
    rd: f64,
    iterations: usize,
}

enum IpmStatus {
    Converged(IpmResult),
    Stalled,
}

fn factor(m: DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = m.diagonal().iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1.0);
    let mut reg = 1e-14 * scale;
    for _ in 0..12 {
        let mut shifted = m.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += reg;
        }
        if let Some(ch) = shifted.cholesky() {
            return Some(ch);
        }
        reg *= 100.0;
    }
    None
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha: f64 = 1.0;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i]);
        }
    }
    alpha
}

/// Primal-dual IPM on `min cᵀx, Ax = b, x ≥ 0`.
fn ipm(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>, tol: f64) -> IpmStatus {
    let (m, n) = a.shape();
    if n == 0 {
        return if b.iter().all(|v| v.abs() <= tol) {
            IpmStatus::Converged(IpmResult {
                x: DVector::zeros(0),
                gap: 0.0,
                rp: 0.0,
                rd: 0.0,
                iterations: 0,
            })
        } else {
            IpmStatus::Stalled
        };
    }
    let at = a.transpose();
    let bnorm = 1.0 + b.amax();
    let cnorm = 1.0 + c.amax();

    let aat = a * &at;
    let (mut x, mut y, mut s) = match factor(aat) {
        Some(ch) if m > 0 => {
            let xt = &at * ch.solve(b);
            let yt = ch.solve(&(a * c));
            let st = c - &at * &yt;
            let dx = (-1.5 * xt.min()).max(0.0);
            let ds = (-1.5 * st.min()).max(0.0);
            let xh = xt.add_scalar(dx);
            let sh = st.add_scalar(ds);
            let xs = xh.dot(&sh);
            let dxh = 0.5 * xs / sh.sum().max(1e-300);
            let dsh = 0.5 * xs / xh.sum().max(1e-300);
            let mut x0 = xh.add_scalar(dxh);
            let mut s0 = sh.add_scalar(dsh);
            if !(x0.min() > 0.0) || !x0.iter().all(|v| v.is_finite()) {
                x0 = DVector::from_element(n, 1.0);
            }
            if !(s0.min() > 0.0) || !s0.iter().all(|v| v.is_finite()) {
                s0 = DVector::from_element(n, 1.0);
            }
            (x0, yt, s0)
        }
        _ => (DVector::from_element(n, 1.0), DVector::zeros(m), DVector::from_element(n, 1.0)),
    };

    // best iterate so far, returned when progress stalls close to optimality
    let mut best: Option<(f64, IpmResult)> = None;
    let fallback = |best: Option<(f64, IpmResult)>| match best {
        Some((merit, r)) if merit <= STALL_ACCEPT * tol.sqrt().max(1e-4) => IpmStatus::Converged(r),
        _ => IpmStatus::Stalled,
    };
    for iter in 0..MAX_ITERATIONS {
        let rp = b - a * &x;
        let rd = c - &at * &y - &s;
        let mu = x.dot(&s) / n as f64;
        let pobj = c.dot(&x);
        let dobj = b.dot(&y);
        let rp_rel = rp.amax() / bnorm;
        let rd_rel = rd.amax() / cnorm;
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs());
        if rp_rel <= tol && rd_rel <= tol && gap <= tol && mu <= tol * (1.0 + pobj.abs()) {
            return IpmStatus::Converged(IpmResult {
                x,
                gap,
                rp: rp_rel,
                rd: rd_rel,
                iterations: iter,
            });
        }
        if !x.iter().chain(s.iter()).all(|v| v.is_finite()) || x.amax() > 1e14 * bnorm.max(cnorm) {
            return fallback(best);
        }
        let merit = rp_rel.max(rd_rel).max(gap).max(mu / (1.0 + pobj.abs()));
        if best.as_ref().map_or(true, |(m, _)| merit < *m) {
            best = Some((
                merit,
                IpmResult {
                    x: x.clone(),
                    gap,
                    rp: rp_rel,
                    rd: rd_rel,
                    iterations: iter,
                },
            ));
        }

        let d = x.component_div(&s);
        let mut ad = a.clone();
        for j in 0..n {
            ad.column_mut(j).scale_mut(d[j]);
        }
        let normal = &ad * &at;
        let Some(ch) = factor(normal) else {
            return fallback(best);
        };
        let solve = |rc: &DVector<f64>| -> (DVector<f64>, DVector<f64>, DVector<f64>) {
            let rhs = &rp - a * rc.component_div(&s) + &ad * &rd;
            let dy = ch.solve(&rhs);
            let ds = &rd - &at * &dy;
            let dx = (rc - x.component_mul(&ds)).component_div(&s);
            (dx, dy, ds)
        };

        let rc_aff = -x.component_mul(&s);
        let (dx_a, _, ds_a) = solve(&rc_aff);
        let ap = max_step(&x, &dx_a);
        let ad_ = max_step(&s, &ds_a);
        let mu_aff = (&x + ap * &dx_a).dot(&(&s + ad_ * &ds_a)) / n as f64;
        let mut sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        // keep complementarity from collapsing ahead of feasibility
        if rp_rel.max(rd_rel) > 1e2 * mu / (1.0 + pobj.abs()) {
            sigma = sigma.max(0.5);
        }
        let rc = &rc_aff - dx_a.component_mul(&ds_a) + DVector::from_element(n, sigma * mu);
        let (dx, dy, ds) = solve(&rc);
        let ap = (STEP_DAMPING * max_step(&x, &dx)).min(1.0);
        let ad2 = (STEP_DAMPING * max_step(&s, &ds)).min(1.0);
        x += ap * dx;
        y += ad2 * dy;
        s += ad2 * ds;
        // keep strictly interior
        let (xf, sf) = (1e-16 * x.amax(), 1e-16 * s.amax());
        for i in 0..n {
            x[i] = x[i].max(xf).max(1e-300);
            s[i] = s[i].max(sf).max(1e-300);
        }
    }
    fallback(best)
}

/// Minimum total infeasibility `min 1ᵀa` over `Ax + a = b` (rows sign-normalized).
fn phase_one(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> Option<f64> {
    let (m, n) = a.shape();
    let mut aa = DMatrix::zeros(m, n + m);
    let mut bb = b.clone();
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            aa[(i, j)] = sign * a[(i, j)];
        }
        aa[(i, n + i)] = 1.0;
        bb[i] *= sign;
    }
    let mut cc = DVector::zeros(n + m);
    for i in 0..m {
        cc[n + i] = 1.0;
    }
    match ipm(&aa, &bb, &cc, tol) {
        IpmStatus::Converged(r) => Some(cc.dot(&r.x)),
        IpmStatus::Stalled => None,
    }
}

/// Ruiz row/column equilibration of the standard form, with `b` and `c`
/// normalized to unit infinity norm.
struct Equilibrated {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    col: DVector<f64>,
    b_scale: f64,
}

impl Equilibrated {
    fn new(sf: &StandardForm) -> Self {
        let (m, n) = sf.a.shape();
        let mut a = sf.a.clone();
        let mut row = DVector::from_element(m, 1.0);
        let mut col = DVector::from_element(n, 1.0);
        for _ in 0..20 {
            let mut worst: f64 = 0.0;
            for i in 0..m {
                let r = a.row(i).amax();
                if r > 0.0 {
                    let f = 1.0 / r.sqrt();
                    a.row_mut(i).scale_mut(f);
                    row[i] *= f;
                    worst = worst.max((1.0 - r).abs());
                }
            }
            for j in 0..n {
                let r = a.column(j).amax();
                if r > 0.0 {
                    let f = 1.0 / r.sqrt();
                    a.column_mut(j).scale_mut(f);
                    col[j] *= f;
                    worst = worst.max((1.0 - r).abs());
                }
            }
            if worst < 1e-3 {
                break;
            }
        }
        let b = sf.b.component_mul(&row);
        let b_scale = if b.amax() > 0.0 { b.amax() } else { 1.0 };
        let c = sf.c.component_mul(&col);
        let c_scale = if c.amax() > 0.0 { c.amax() } else { 1.0 };
        Equilibrated {
            a,
            b: b / b_scale,
            c: c / c_scale,
            col,
            b_scale,
        }
    }

    fn unscale(&self, z: &DVector<f64>) -> DVector<f64> {
        z.component_mul(&self.col) * self.b_scale
    }
}

/// Solves `lp` to relative KKT tolerance `tol`.
pub fn solve_lp(lp: &LinearProgram, tol: f64) -> Result<LpOutcome, KernelError> {
    lp.validate()?;
    if !(tol > 0.0) {
        return Err(KernelError::Malformed(format!("tolerance must be positive, got {tol}")));
    }
    let sf = match to_standard(lp) {
        Ok(sf) => sf,
        Err(outcome) => return Ok(outcome),
    };
    let (m, n) = sf.a.shape();
    if m == 0 {
        if sf.c.iter().any(|&v| v < 0.0) {
            return Ok(LpOutcome::Unbounded);
        }
        let z = DVector::zeros(n);
        let x = recover(&sf.maps, &z);
        return Ok(LpOutcome::Optimal(LpSolution {
            objective: sf.constant,
            x,
            duality_gap: 0.0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            iterations: 0,
        }));
    }
    let eq = Equilibrated::new(&sf);
    match ipm(&eq.a, &eq.b, &eq.c, tol) {
        IpmStatus::Converged(r) => {
            let x = recover(&sf.maps, &eq.unscale(&r.x));
            let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
            Ok(LpOutcome::Optimal(LpSolution {
                x,
                objective,
                duality_gap: r.gap,
                primal_residual: r.rp,
                dual_residual: r.rd,
                iterations: r.iterations,
            }))
        }
        IpmStatus::Stalled => {
            let feas_tol = tol.max(1e-9);
            let infeasibility = phase_one(&eq.a, &eq.b, feas_tol).ok_or_else(|| {
                KernelError::Numerical("phase-1 feasibility problem did not converge".into())
            })?;
            if infeasibility > 1e3 * feas_tol * (1.0 + eq.b.amax()) {
                return Ok(LpOutcome::Infeasible);
            }
            // feasible: look for an improving ray d ≥ 0 with A d = 0, cᵀd = -1
            let mut ray_a = DMatrix::zeros(m + 1, n);
            ray_a.view_mut((0, 0), (m, n)).copy_from(&eq.a);
            for j in 0..n {
                ray_a[(m, j)] = -eq.c[j];
            }
            let mut ray_b = DVector::zeros(m + 1);
            ray_b[m] = 1.0;
            match phase_one(&ray_a, &ray_b, feas_tol) {
                Some(v) if v <= 1e3 * feas_tol => Ok(LpOutcome::Unbounded),
                _ => Err(KernelError::IterationLimit {
                    limit: MAX_ITERATIONS,
                    best: Vec::new(),
                    objective: f64::NAN,
                }),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upper_bounded_maximum() {
        let mut lp = LinearProgram::new(1).maximize(vec![1.0]);
        lp.add_le(vec![1.0], 3.0);
        let sol = solve_lp(&lp, 1e-10).unwrap().optimal().unwrap();
        assert!((sol.x[0] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn degenerate_zero_objective() {
        let mut lp = LinearProgram::new(1);
        lp.set_bounds(0, 0.0, 1.0);
        let sol = solve_lp(&lp, 1e-10).unwrap().optimal().unwrap();
        assert!(sol.objective.abs() < 1e-12);
        assert!((0.0..=1.0).contains(&sol.x[0]));
    }

    #[test]
    fn detects_infeasible() {
        let mut lp = LinearProgram::new(1);
        lp.add_ge(vec![1.0], 2.0);
        lp.add_le(vec![1.0], 1.0);
        assert_eq!(solve_lp(&lp, 1e-9).unwrap(), LpOutcome::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        let mut lp = LinearProgram::new(2).maximize(vec![1.0, 1.0]);
        lp.add_le(vec![1.0, -1.0], 1.0);
        assert_eq!(solve_lp(&lp, 1e-9).unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn free_and_mirrored_variables() {
        // min x0 - x1 s.t. x0 free >= -2 via row, x1 <= 4 (lower -inf)
        let mut lp = LinearProgram::new(2).minimize(vec![1.0, -1.0]);
        lp.set_bounds(0, f64::NEG_INFINITY, f64::INFINITY);
        lp.set_bounds(1, f64::NEG_INFINITY, 4.0);
        lp.add_ge(vec![1.0, 0.0], -2.0);
        let sol = solve_lp(&lp, 1e-10).unwrap().optimal().unwrap();
        assert!((sol.x[0] + 2.0).abs() < 1e-7 && (sol.x[1] - 4.0).abs() < 1e-7);
    }
}
