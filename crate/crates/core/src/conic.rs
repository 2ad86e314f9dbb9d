//! A small dense interior-point solver for the robust subproblem family:
//!
//! ```text
//! minimize   1/2 x'Qx + c'x + d  -  sum_i w_i ln(x_i)
//! subject to F_b(x) = F0_b + sum_i x_i F_ib  >= 0   (PSD, per block)
//!            g_j(x) <= 0                            (convex quadratic)
//!            lo <= x <= hi                           (boxes, +-inf allowed)
//! ```
//!
//! Hermitian LMI data enters through the standard real embedding
//! `[[Re, -Im], [Im, Re]]`, which preserves definiteness. The solver runs
//! a log-barrier path following scheme with a damped Newton inner loop;
//! step sizes come from the self-concordant decrement, so no objective
//! values are compared during centering (they can be far above the f64
//! rounding floor at large barrier weight).
//!
//! Coefficient matrices of individual variables touch only a few columns
//! of their block; gradient and Hessian assembly exploit that sparsity.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Sparse symmetric quadratic form `1/2 x'Qx + c'x + constant`.
#[derive(Debug, Clone, Default)]
pub struct QuadForm {
    /// Entries of `Q` (both triangles present; diagonal once).
    pub quad: Vec<(usize, usize, f64)>,
    pub lin: Vec<(usize, f64)>,
    pub constant: f64,
}

impl QuadForm {
    pub fn value(&self, x: &[f64]) -> f64 {
        let mut acc = self.constant;
        for &(r, c, v) in &self.quad {
            acc += 0.5 * v * x[r] * x[c];
        }
        for &(i, v) in &self.lin {
            acc += v * x[i];
        }
        acc
    }

    /// Gradient `Qx + c` accumulated into `out`, scaled by `scale`.
    fn add_gradient(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        for &(r, c, v) in &self.quad {
            out[r] += scale * v * x[c];
        }
        for &(i, v) in &self.lin {
            out[i] += scale * v;
        }
    }

    fn gradient(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut g = vec![0.0; n];
        self.add_gradient(x, 1.0, &mut g);
        g
    }

    /// Variables this form touches.
    fn support(&self, mark: &mut [bool]) {
        for &(r, c, _) in &self.quad {
            mark[r] = true;
            mark[c] = true;
        }
        for &(i, _) in &self.lin {
            mark[i] = true;
        }
    }
}

/// Coefficient matrix of one variable inside one LMI block.
#[derive(Debug, Clone)]
pub struct LmiTerm {
    pub var: usize,
    /// Real entries, both triangles present.
    pub entries: Vec<(usize, usize, f64)>,
    /// Unique columns with nonzeros (sorted).
    pub cols: Vec<usize>,
}

impl LmiTerm {
    pub fn new(var: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        let mut cols: Vec<usize> = entries.iter().map(|&(_, c, _)| c).collect();
        cols.sort_unstable();
        cols.dedup();
        LmiTerm { var, entries, cols }
    }
}

/// One affine PSD constraint `F0 + sum_i x_i F_i >= 0` in real symmetric
/// form.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub dim: usize,
    pub f0: DMatrix<f64>,
    pub terms: Vec<LmiTerm>,
}

impl LmiBlock {
    /// Assemble the block value at `x`.
    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut f = self.f0.clone();
        for term in &self.terms {
            let xv = x[term.var];
            if xv != 0.0 {
                for &(r, c, v) in &term.entries {
                    f[(r, c)] += xv * v;
                }
            }
        }
        f
    }

    /// Build from complex Hermitian data: `f0` entries and per-variable
    /// entry lists, each given as upper-triangle `(row, col, value)` with
    /// `row <= col` and real diagonal. Applies the real embedding.
    pub fn from_hermitian(
        complex_dim: usize,
        f0_entries: &[(usize, usize, Complex64)],
        var_terms: Vec<(usize, Vec<(usize, usize, Complex64)>)>,
    ) -> Self {
        let dim = 2 * complex_dim;
        let mut f0 = DMatrix::zeros(dim, dim);
        for &(r, c, z) in f0_entries {
            for (rr, cc, v) in embed_entry(complex_dim, r, c, z) {
                f0[(rr, cc)] += v;
            }
        }
        let terms = var_terms
            .into_iter()
            .map(|(var, entries)| {
                let mut real_entries = Vec::new();
                for &(r, c, z) in &entries {
                    real_entries.extend(embed_entry(complex_dim, r, c, z));
                }
                real_entries.retain(|&(_, _, v)| v != 0.0);
                LmiTerm::new(var, real_entries)
            })
            .collect();
        LmiBlock { dim, f0, terms }
    }

    /// Build directly from real symmetric data (upper-triangle entries).
    pub fn from_real(
        dim: usize,
        f0_entries: &[(usize, usize, f64)],
        var_terms: Vec<(usize, Vec<(usize, usize, f64)>)>,
    ) -> Self {
        let mut f0 = DMatrix::zeros(dim, dim);
        for &(r, c, v) in f0_entries {
            f0[(r, c)] += v;
            if r != c {
                f0[(c, r)] += v;
            }
        }
        let terms = var_terms
            .into_iter()
            .map(|(var, entries)| {
                let mut full = Vec::new();
                for &(r, c, v) in &entries {
                    if v == 0.0 {
                        continue;
                    }
                    full.push((r, c, v));
                    if r != c {
                        full.push((c, r, v));
                    }
                }
                LmiTerm::new(var, full)
            })
            .collect();
        LmiBlock { dim, f0, terms }
    }
}

/// Real-entry list of the embedding of one Hermitian upper-triangle entry.
fn embed_entry(d: usize, r: usize, c: usize, z: Complex64) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::with_capacity(8);
    if r == c {
        if z.re != 0.0 {
            out.push((r, r, z.re));
            out.push((d + r, d + r, z.re));
        }
        // Hermitian diagonal must be real; the off-diagonal of the
        // embedding from a diagonal entry is Im == 0.
        debug_assert!(z.im.abs() < 1e-12 * (1.0 + z.re.abs()));
        return out;
    }
    if z.re != 0.0 {
        out.push((r, c, z.re));
        out.push((c, r, z.re));
        out.push((d + r, d + c, z.re));
        out.push((d + c, d + r, z.re));
    }
    if z.im != 0.0 {
        // top-right block -Im(F), bottom-left block Im(F)
        out.push((r, d + c, -z.im));
        out.push((d + c, r, -z.im));
        out.push((c, d + r, z.im));
        out.push((d + r, c, z.im));
    }
    out
}

/// Embed a full Hermitian matrix as the real symmetric
/// `[[Re, -Im], [Im, Re]]`; PSD-ness is preserved in both directions.
pub fn complex_to_real(h: &DMatrix<Complex64>) -> DMatrix<f64> {
    let d = h.nrows();
    assert_eq!(d, h.ncols(), "square matrix required");
    let mut out = DMatrix::zeros(2 * d, 2 * d);
    for r in 0..d {
        for c in 0..d {
            let z = h[(r, c)];
            out[(r, c)] = z.re;
            out[(d + r, d + c)] = z.re;
            out[(r, d + c)] = -z.im;
            out[(d + r, c)] = z.im;
        }
    }
    out
}

/// The full problem container.
#[derive(Debug, Clone)]
pub struct ConicProblem {
    pub n_vars: usize,
    pub objective: QuadForm,
    /// `(variable, weight)` pairs contributing `-weight * ln(x_i)`.
    pub log_terms: Vec<(usize, f64)>,
    pub lmi_blocks: Vec<LmiBlock>,
    pub scalar_ineqs: Vec<QuadForm>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Strictly feasible start supplied by the builder.
    pub initial_point: Vec<f64>,
}

impl ConicProblem {
    pub fn new(n_vars: usize) -> Self {
        ConicProblem {
            n_vars,
            objective: QuadForm::default(),
            log_terms: Vec::new(),
            lmi_blocks: Vec::new(),
            scalar_ineqs: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n_vars],
            upper: vec![f64::INFINITY; n_vars],
            initial_point: vec![0.0; n_vars],
        }
    }

    /// Objective value including log terms.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        let mut v = self.objective.value(x);
        for &(i, w) in &self.log_terms {
            if x[i] <= 0.0 {
                return f64::INFINITY;
            }
            v -= w * x[i].ln();
        }
        v
    }

    /// Total barrier complexity: block dimensions plus scalar inequalities
    /// plus finite box bounds.
    pub fn barrier_complexity(&self) -> f64 {
        let blocks: usize = self.lmi_blocks.iter().map(|b| b.dim).sum();
        let boxes = self
            .lower
            .iter()
            .filter(|l| l.is_finite())
            .count()
            + self.upper.iter().filter(|u| u.is_finite()).count();
        (blocks + self.scalar_ineqs.len() + boxes) as f64
    }

    /// Variables that appear in no objective term, log term, LMI or scalar
    /// inequality; their value is undetermined by the problem.
    pub fn free_variables(&self) -> Vec<usize> {
        let mut used = vec![false; self.n_vars];
        self.objective.support(&mut used);
        for &(i, _) in &self.log_terms {
            used[i] = true;
        }
        for b in &self.lmi_blocks {
            for t in &b.terms {
                if !t.entries.is_empty() {
                    used[t.var] = true;
                }
            }
        }
        for g in &self.scalar_ineqs {
            g.support(&mut used);
        }
        (0..self.n_vars).filter(|&i| !used[i]).collect()
    }

    /// Plain-text listing of the full problem data, for offline
    /// cross-checking against an external solver.
    pub fn dump(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "conic problem: {} variables", self.n_vars)?;
        writeln!(out, "objective constant {}", self.objective.constant)?;
        for &(r, c, v) in &self.objective.quad {
            writeln!(out, "objective Q[{r},{c}] = {v}")?;
        }
        for &(i, v) in &self.objective.lin {
            writeln!(out, "objective c[{i}] = {v}")?;
        }
        for &(i, w) in &self.log_terms {
            writeln!(out, "objective log term: -{w} * ln(x[{i}])")?;
        }
        for (bi, block) in self.lmi_blocks.iter().enumerate() {
            writeln!(out, "lmi block {bi}: dim {}", block.dim)?;
            for r in 0..block.dim {
                let row: Vec<String> = (0..block.dim)
                    .map(|c| format!("{:+.6e}", block.f0[(r, c)]))
                    .collect();
                writeln!(out, "  F0 row {r}: {}", row.join(" "))?;
            }
            for term in &block.terms {
                for &(r, c, v) in &term.entries {
                    writeln!(out, "  F[x{}][{r},{c}] = {v}", term.var)?;
                }
            }
        }
        for (j, g) in self.scalar_ineqs.iter().enumerate() {
            writeln!(out, "scalar ineq {j}: constant {}", g.constant)?;
            for &(r, c, v) in &g.quad {
                writeln!(out, "  Q[{r},{c}] = {v}")?;
            }
            for &(i, v) in &g.lin {
                writeln!(out, "  c[{i}] = {v}")?;
            }
        }
        for i in 0..self.n_vars {
            writeln!(out, "box x[{i}] in [{}, {}]", self.lower[i], self.upper[i])?;
        }
        writeln!(out, "start {:?}", self.initial_point)?;
        Ok(())
    }
}

/// Solver options; the defaults suit the small dense blocks this crate
/// produces.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub barrier_mu_factor: f64,
    pub tol_gap: f64,
    pub tol_newton: f64,
    pub max_outer: usize,
    pub max_newton: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            barrier_mu_factor: 10.0,
            tol_gap: 1e-7,
            tol_newton: 1e-9,
            max_outer: 60,
            max_newton: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub status: SolveStatus,
    pub newton_iters: usize,
    /// `m / t` at exit.
    pub duality_gap_proxy: f64,
    /// Stationarity of `f0 + barrier/t` at the final interior iterate,
    /// measured affine-invariantly as half the squared Newton decrement
    /// (the Euclidean gradient norm is meaningless across the mixed
    /// variable scales these problems carry).
    pub stationarity_residual: f64,
    /// `f0` after each centering stage; non-increasing along the path.
    pub f0_trace: Vec<f64>,
}

/// Feasibility margins of a point.
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    /// Smallest eigenvalue over all LMI blocks (`+inf` if none).
    pub min_lmi_eigenvalue: f64,
    /// Block attaining it.
    pub worst_lmi_block: Option<usize>,
    /// Smallest scalar slack `-g_j(x)` (`+inf` if none).
    pub worst_scalar_slack: f64,
    /// Largest box violation (0 when inside).
    pub worst_box_violation: f64,
}

impl FeasibilityReport {
    pub fn feasible(&self, tol: f64) -> bool {
        self.min_lmi_eigenvalue >= -tol
            && self.worst_scalar_slack >= -tol
            && self.worst_box_violation <= tol
    }
}

/// Eigenvalue-level feasibility report for `x`.
pub fn check_feasible(problem: &ConicProblem, x: &[f64]) -> FeasibilityReport {
    let mut min_eig = f64::INFINITY;
    let mut worst_block = None;
    for (bi, block) in problem.lmi_blocks.iter().enumerate() {
        let f = block.eval(x);
        let eig = nalgebra::linalg::SymmetricEigen::new(f);
        let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if lo < min_eig {
            min_eig = lo;
            worst_block = Some(bi);
        }
    }
    let mut worst_slack = f64::INFINITY;
    for g in &problem.scalar_ineqs {
        worst_slack = worst_slack.min(-g.value(x));
    }
    let mut box_violation: f64 = 0.0;
    for i in 0..problem.n_vars {
        if problem.lower[i].is_finite() {
            box_violation = box_violation.max(problem.lower[i] - x[i]);
        }
        if problem.upper[i].is_finite() {
            box_violation = box_violation.max(x[i] - problem.upper[i]);
        }
    }
    FeasibilityReport {
        min_lmi_eigenvalue: min_eig,
        worst_lmi_block: worst_block,
        worst_scalar_slack: worst_slack,
        worst_box_violation: box_violation,
    }
}

/// Workspace for gradient/Hessian assembly of `t*f0 + barrier`.
struct Center<'a> {
    problem: &'a ConicProblem,
    grad: Vec<f64>,
    hess: DMatrix<f64>,
}

impl<'a> Center<'a> {
    fn new(problem: &'a ConicProblem) -> Self {
        let n = problem.n_vars;
        Center {
            problem,
            grad: vec![0.0; n],
            hess: DMatrix::zeros(n, n),
        }
    }

    /// Assemble gradient and Hessian of `t*f0(x) + phi(x)` at interior `x`.
    /// Returns `false` if an LMI block fails to factor (lost interiority).
    fn assemble(&mut self, x: &[f64], t: f64) -> bool {
        let n = self.problem.n_vars;
        self.grad.iter_mut().for_each(|v| *v = 0.0);
        self.hess.fill(0.0);

        // objective quadratic
        self.problem.objective.add_gradient(x, t, &mut self.grad);
        for &(r, c, v) in &self.problem.objective.quad {
            self.hess[(r, c)] += t * v;
        }
        // objective log terms
        for &(i, w) in &self.problem.log_terms {
            self.grad[i] -= t * w / x[i];
            self.hess[(i, i)] += t * w / (x[i] * x[i]);
        }
        // box barriers
        for i in 0..n {
            let lo = self.problem.lower[i];
            let hi = self.problem.upper[i];
            if lo.is_finite() {
                let s = x[i] - lo;
                self.grad[i] -= 1.0 / s;
                self.hess[(i, i)] += 1.0 / (s * s);
            }
            if hi.is_finite() {
                let s = hi - x[i];
                self.grad[i] += 1.0 / s;
                self.hess[(i, i)] += 1.0 / (s * s);
            }
        }
        // scalar inequality barriers
        for g in &self.problem.scalar_ineqs {
            let slack = -g.value(x);
            if slack <= 0.0 {
                return false;
            }
            let gg = g.gradient(x, n);
            for (i, &gi) in gg.iter().enumerate() {
                if gi != 0.0 {
                    self.grad[i] += gi / slack;
                }
            }
            for &(r, c, v) in &g.quad {
                self.hess[(r, c)] += v / slack;
            }
            for (i, &gi) in gg.iter().enumerate() {
                if gi == 0.0 {
                    continue;
                }
                for (j, &gj) in gg.iter().enumerate() {
                    if gj != 0.0 {
                        self.hess[(i, j)] += gi * gj / (slack * slack);
                    }
                }
            }
        }
        // LMI barriers: for T_i = F^-1 F_i, grad_i = -tr(T_i) and
        // H_ij = tr(T_i T_j); only the columns F_i touches are needed.
        for block in &self.problem.lmi_blocks {
            let f = block.eval(x);
            let chol = match nalgebra::linalg::Cholesky::new(f) {
                Some(c) => c,
                None => return false,
            };
            let k = block.terms.len();
            // W_i = F^-1 F_i[:, cols_i]
            let mut partials: Vec<DMatrix<f64>> = Vec::with_capacity(k);
            for term in &block.terms {
                let mut rhs = DMatrix::zeros(block.dim, term.cols.len());
                for &(r, c, v) in &term.entries {
                    let ci = term.cols.binary_search(&c).unwrap();
                    rhs[(r, ci)] += v;
                }
                chol.solve_mut(&mut rhs);
                partials.push(rhs);
            }
            for (ti, term_i) in block.terms.iter().enumerate() {
                let wi = &partials[ti];
                let mut tr = 0.0;
                for (pos, &c) in term_i.cols.iter().enumerate() {
                    tr += wi[(c, pos)];
                }
                self.grad[term_i.var] -= tr;
                for (tj, term_j) in block.terms.iter().enumerate().skip(ti) {
                    let wj = &partials[tj];
                    let mut acc = 0.0;
                    for (pos_b, &b) in term_i.cols.iter().enumerate() {
                        for (pos_a, &a) in term_j.cols.iter().enumerate() {
                            acc += wi[(a, pos_b)] * wj[(b, pos_a)];
                        }
                    }
                    self.hess[(term_i.var, term_j.var)] += acc;
                    if ti != tj {
                        self.hess[(term_j.var, term_i.var)] += acc;
                    }
                }
            }
        }
        true
    }
}

/// Remove variables that appear in no problem data, pinning them to their
/// lower bound (or zero) so flat directions resolve deterministically.
fn pinned_values(problem: &ConicProblem, free: &[usize]) -> Vec<(usize, f64)> {
    free.iter()
        .map(|&i| {
            let lo = problem.lower[i];
            let hi = problem.upper[i];
            let v = if lo.is_finite() {
                lo
            } else if hi.is_finite() {
                hi.min(0.0)
            } else {
                0.0
            };
            (i, v)
        })
        .collect()
}

/// Path-following barrier solve. The builder must supply a strictly
/// feasible `initial_point`; a start that is not strictly interior yields
/// `Infeasible` (a builder bug, not a runtime condition).
pub fn solve(problem: &ConicProblem, opts: &SolveOptions) -> SolveReport {
    let n = problem.n_vars;
    let free = problem.free_variables();
    let pins = pinned_values(problem, &free);

    let mut x = problem.initial_point.clone();
    // Free variables: the barrier would otherwise have no curvature in
    // these coordinates. They are fixed up front (tie-break to the lower
    // bound) and restored into the reported solution.
    let mut is_free = vec![false; n];
    for &(i, v) in &pins {
        is_free[i] = true;
        x[i] = v;
    }

    if !strictly_feasible_masked(problem, &x, &is_free) {
        return SolveReport {
            objective_value: problem.objective_value(&x),
            x,
            status: SolveStatus::Infeasible,
            newton_iters: 0,
            duality_gap_proxy: f64::INFINITY,
            stationarity_residual: f64::INFINITY,
            f0_trace: Vec::new(),
        };
    }

    let m = problem.barrier_complexity().max(1.0);
    let f0_start = problem.objective_value(&x);
    let mut t = (m / (1.0 + f0_start.abs())).min(1.0).max(1e-12);
    let mut total_newton = 0usize;
    let mut status = SolveStatus::MaxIter;
    let mut center = Center::new(problem);
    let mut f0_trace = Vec::new();
    let mut stationarity = f64::INFINITY;

    for _ in 0..opts.max_outer {
        // intermediate stages only need rough centering; the final stage
        // (where the gap criterion is met) centers down to tol_newton.
        let final_stage = m / t < opts.tol_gap;
        let stage_tol = if final_stage {
            opts.tol_newton
        } else {
            opts.tol_newton.max(1e-2)
        };
        let centered = center_stage(
            problem,
            &mut center,
            &mut x,
            &is_free,
            t,
            stage_tol,
            opts,
            &mut total_newton,
        );
        f0_trace.push(problem.objective_value(&x));
        match centered {
            None => {
                status = SolveStatus::MaxIter;
                break;
            }
            Some(residual) => stationarity = residual,
        }
        if final_stage {
            status = SolveStatus::Optimal;
            break;
        }
        t *= opts.barrier_mu_factor;
    }

    // Snap polish: move coordinates that ended within snapping distance of
    // a finite bound exactly onto it when that keeps the point feasible
    // and does not increase the objective. Makes boundary optima exact.
    let interior_value = problem.objective_value(&x);
    let mut best = x.clone();
    let mut best_value = interior_value;
    if status == SolveStatus::Optimal {
        for i in 0..n {
            for bound in [problem.lower[i], problem.upper[i]] {
                if !bound.is_finite() {
                    continue;
                }
                let dist = (best[i] - bound).abs();
                if dist == 0.0 || dist > 1e-4 * (1.0 + bound.abs()) {
                    continue;
                }
                let mut cand = best.clone();
                cand[i] = bound;
                let v = problem.objective_value(&cand);
                if v <= best_value + 1e-12 * (1.0 + best_value.abs())
                    && check_feasible(problem, &cand).feasible(1e-9)
                {
                    best = cand;
                    best_value = v;
                }
            }
        }
    }

    SolveReport {
        objective_value: best_value,
        x: best,
        status,
        newton_iters: total_newton,
        duality_gap_proxy: m / t,
        stationarity_residual: stationarity,
        f0_trace,
    }
}

fn strictly_feasible_masked(problem: &ConicProblem, x: &[f64], is_free: &[bool]) -> bool {
    // Pinned free variables may sit exactly on their bound; every other
    // coordinate must be strictly interior.
    for i in 0..problem.n_vars {
        if is_free[i] {
            continue;
        }
        if x[i] <= problem.lower[i] || x[i] >= problem.upper[i] {
            return false;
        }
    }
    for &(i, _) in &problem.log_terms {
        if x[i] <= 0.0 {
            return false;
        }
    }
    for g in &problem.scalar_ineqs {
        if g.value(x) >= 0.0 {
            return false;
        }
    }
    for block in &problem.lmi_blocks {
        if nalgebra::linalg::Cholesky::new(block.eval(x)).is_none() {
            return false;
        }
    }
    true
}

/// One centering stage of damped Newton steps. On success returns the
/// final stationarity residual (half squared Newton decrement).
fn center_stage(
    problem: &ConicProblem,
    center: &mut Center,
    x: &mut Vec<f64>,
    is_free: &[bool],
    t: f64,
    stage_tol: f64,
    opts: &SolveOptions,
    total_newton: &mut usize,
) -> Option<f64> {
    let n = problem.n_vars;
    for _ in 0..opts.max_newton {
        if !center.assemble(x, t) {
            return None;
        }
        // masked copy: pinned coordinates take no step
        let mut h = center.hess.clone();
        let mut g = nalgebra::DVector::from_column_slice(&center.grad);
        for i in 0..n {
            if is_free[i] {
                for j in 0..n {
                    h[(i, j)] = 0.0;
                    h[(j, i)] = 0.0;
                }
                h[(i, i)] = 1.0;
                g[i] = 0.0;
            }
        }
        // Jacobi equilibration keeps mixed variable scales factorable.
        let mut d = vec![1.0; n];
        for i in 0..n {
            let hii = h[(i, i)];
            if hii > 0.0 {
                d[i] = 1.0 / hii.sqrt();
            }
        }
        for r in 0..n {
            for c in 0..n {
                h[(r, c)] *= d[r] * d[c];
            }
        }
        let mut gs = g.clone();
        for i in 0..n {
            gs[i] *= d[i];
        }
        // factor with escalating ridge on breakdown
        let mut ridge = 0.0;
        let step_scaled = loop {
            let mut hr = h.clone();
            if ridge > 0.0 {
                for i in 0..n {
                    hr[(i, i)] += ridge;
                }
            }
            match nalgebra::linalg::Cholesky::new(hr) {
                Some(chol) => break -chol.solve(&gs),
                None => {
                    ridge = if ridge == 0.0 { 1e-12 } else { ridge * 100.0 };
                    if ridge > 1.0 {
                        return None;
                    }
                }
            }
        };
        *total_newton += 1;
        let decrement_sq = (-gs.dot(&step_scaled)).max(0.0);
        if 0.5 * decrement_sq <= stage_tol {
            return Some(0.5 * decrement_sq);
        }
        let lambda = decrement_sq.sqrt();
        // un-equilibrated step
        let mut step = vec![0.0; n];
        for i in 0..n {
            step[i] = step_scaled[i] * d[i];
        }
        let mut accepted = false;
        if lambda > 0.25 {
            // try the full step first: an Armijo test on the merit value
            // is reliable here because the expected decrease (~lambda^2)
            // sits far above the f64 rounding floor
            let psi0 = merit(problem, x, t);
            let mut alpha = 1.0f64;
            for _ in 0..40 {
                let cand: Vec<f64> = x
                    .iter()
                    .zip(&step)
                    .map(|(&xi, &si)| xi + alpha * si)
                    .collect();
                if strictly_feasible_masked(problem, &cand, is_free) {
                    let psi = merit(problem, &cand, t);
                    if psi <= psi0 - 0.25 * alpha * decrement_sq + 1e-10 * (1.0 + psi0.abs()) {
                        *x = cand;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
        } else {
            // quadratic convergence region: plain Newton step
            let cand: Vec<f64> = x
                .iter()
                .zip(&step)
                .map(|(&xi, &si)| xi + si)
                .collect();
            if strictly_feasible_masked(problem, &cand, is_free) {
                *x = cand;
                accepted = true;
            }
        }
        if !accepted {
            // damped fallback with feasibility halving
            let mut alpha = 1.0 / (1.0 + lambda);
            for _ in 0..60 {
                let cand: Vec<f64> = x
                    .iter()
                    .zip(&step)
                    .map(|(&xi, &si)| xi + alpha * si)
                    .collect();
                if strictly_feasible_masked(problem, &cand, is_free) {
                    *x = cand;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
        }
        if !accepted {
            return None;
        }
    }
    None
}

/// Merit value `t*f0(x) + phi(x)` for the Armijo test; `+inf` outside the
/// strict interior.
fn merit(problem: &ConicProblem, x: &[f64], t: f64) -> f64 {
    let mut psi = t * problem.objective_value(x);
    for i in 0..problem.n_vars {
        let lo = problem.lower[i];
        let hi = problem.upper[i];
        if lo.is_finite() {
            let s = x[i] - lo;
            if s <= 0.0 {
                return f64::INFINITY;
            }
            psi -= s.ln();
        }
        if hi.is_finite() {
            let s = hi - x[i];
            if s <= 0.0 {
                return f64::INFINITY;
            }
            psi -= s.ln();
        }
    }
    for g in &problem.scalar_ineqs {
        let slack = -g.value(x);
        if slack <= 0.0 {
            return f64::INFINITY;
        }
        psi -= slack.ln();
    }
    for block in &problem.lmi_blocks {
        match nalgebra::linalg::Cholesky::new(block.eval(x)) {
            Some(chol) => {
                let mut logdet = 0.0;
                for i in 0..block.dim {
                    logdet += chol.l_dirty()[(i, i)].ln();
                }
                psi -= 2.0 * logdet;
            }
            None => return f64::INFINITY,
        }
    }
    psi
}
