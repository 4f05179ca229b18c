//! Dense two-phase primal simplex with Bland's rule.
//!
//! Problems are stated as `minimize c.x` subject to row constraints and
//! per-variable bounds `lower <= x <= upper`. Lower bounds must be finite;
//! finite upper bounds become extra rows after the shift `x = lower + y`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PIVOT_TOL: f64 = 1e-9;
pub const FEASIBILITY_TOL: f64 = 1e-7;
const OPTIMALITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

impl fmt::Display for LpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LpStatus::Optimal => f.write_str("optimal"),
            LpStatus::Infeasible => f.write_str("infeasible"),
            LpStatus::Unbounded => f.write_str("unbounded"),
        }
    }
}

/// A sparse row `sum coeffs[j].1 * x[coeffs[j].0] (sense) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub lower: Vec<f64>,
    /// `f64::INFINITY` for no upper bound.
    pub upper: Vec<f64>,
}

impl LpProblem {
    /// `num_vars` variables with bounds `[0, inf)` and a zero objective.
    pub fn new(num_vars: usize) -> Self {
        Self {
            objective: vec![0.0; num_vars],
            constraints: Vec::new(),
            lower: vec![0.0; num_vars],
            upper: vec![f64::INFINITY; num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        self.constraints.push(Constraint { coeffs, sense, rhs });
        self.constraints.len() - 1
    }

    /// Adds a constraint from a dense coefficient row.
    pub fn add_dense(&mut self, row: &[f64], sense: Sense, rhs: f64) -> usize {
        let coeffs = row
            .iter()
            .enumerate()
            .filter(|(_, a)| **a != 0.0)
            .map(|(j, a)| (j, *a))
            .collect();
        self.add_constraint(coeffs, sense, rhs)
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.num_vars();
        if self.lower.len() != q || self.upper.len() != q {
            return Err(Error::DimensionMismatch(format!(
                "{q} variables but {} lower and {} upper bounds",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for j in 0..q {
            if !self.lower[j].is_finite() || self.upper[j].is_nan() || self.lower[j] > self.upper[j] {
                return Err(Error::InvalidInput(format!(
                    "variable {j} has bounds [{}, {}]",
                    self.lower[j], self.upper[j]
                )));
            }
            if !self.objective[j].is_finite() {
                return Err(Error::InvalidInput(format!("objective coefficient {j} is not finite")));
            }
        }
        for (r, c) in self.constraints.iter().enumerate() {
            if !c.rhs.is_finite() || c.coeffs.iter().any(|(j, a)| *j >= q || !a.is_finite()) {
                return Err(Error::InvalidInput(format!("constraint {r} is malformed")));
            }
        }
        Ok(())
    }

    /// Largest violation of any row or bound by `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().map(|(j, a)| a * x[*j]).sum();
            let v = match c.sense {
                Sense::Le => lhs - c.rhs,
                Sense::Ge => c.rhs - lhs,
                Sense::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for j in 0..x.len() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        worst
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Empty unless optimal.
    pub values: Vec<f64>,
    pub objective_value: f64,
    /// Row multipliers at optimum (non-positive on `<=` rows, non-negative on `>=` rows).
    pub duals: Vec<f64>,
    /// `c_j - sum_r duals[r] a_rj`.
    pub reduced_costs: Vec<f64>,
    pub pivots: usize,
}

impl LpSolution {
    fn without_point(status: LpStatus, pivots: usize) -> Self {
        Self {
            status,
            values: Vec::new(),
            objective_value: match status {
                LpStatus::Unbounded => f64::NEG_INFINITY,
                _ => f64::INFINITY,
            },
            duals: Vec::new(),
            reduced_costs: Vec::new(),
            pivots,
        }
    }
}

struct Tableau {
    rows: usize,
    cols: usize,
    // (rows + 1) x (cols + 1); last row is the reduced-cost row, last column the rhs
    data: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    fn width(&self) -> usize {
        self.cols + 1
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width() + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width();
        let p = self.data[pr * w + pc];
        for v in &mut self.data[pr * w..(pr + 1) * w] {
            *v /= p;
        }
        let (head, rest) = self.data.split_at_mut(pr * w);
        let (prow, tail) = rest.split_at_mut(w);
        for row in head.chunks_exact_mut(w).chain(tail.chunks_exact_mut(w)) {
            let f = row[pc];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * pv;
                }
                row[pc] = 0.0;
            }
        }
        self.basis[pr] = pc;
        self.pivots += 1;
    }

    /// Loads reduced costs for `cost` (indexed by column) into the last row.
    fn price(&mut self, cost: &[f64]) {
        let w = self.width();
        let obj = self.rows * w;
        for c in 0..w {
            self.data[obj + c] = if c < self.cols { cost[c] } else { 0.0 };
        }
        for r in 0..self.rows {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                for c in 0..w {
                    self.data[obj + c] -= cb * self.data[r * w + c];
                }
            }
        }
    }

    /// Bland's rule iterations over columns `< allowed`. Returns false when unbounded.
    fn optimize(&mut self, allowed: usize) -> bool {
        let w = self.width();
        let obj = self.rows * w;
        loop {
            let Some(pc) = (0..allowed).find(|&c| self.data[obj + c] < -OPTIMALITY_TOL) else {
                return true;
            };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r).max(0.0) / a;
                    best = match best {
                        None => Some((r, ratio)),
                        Some((br, bratio)) => {
                            if ratio < bratio - 1e-12
                                || (ratio <= bratio + 1e-12 && self.basis[r] < self.basis[br])
                            {
                                Some((r, ratio))
                            } else {
                                Some((br, bratio))
                            }
                        }
                    };
                }
            }
            match best {
                None => return false,
                Some((pr, _)) => self.pivot(pr, pc),
            }
        }
    }
}

/// Solves `problem` to a vertex optimum. Infeasible and unbounded problems are
/// reported through [`LpSolution::status`]; only malformed input is an error.
pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution> {
    problem.validate()?;
    let q = problem.num_vars();

    // transformed rows: (dense coeffs over y, sense, rhs, original row index or None, sign)
    struct Row {
        coeffs: Vec<(usize, f64)>,
        sense: Sense,
        rhs: f64,
        origin: Option<usize>,
        sign: f64,
    }
    let mut rows: Vec<Row> = Vec::new();
    for (idx, c) in problem.constraints.iter().enumerate() {
        let shift: f64 = c.coeffs.iter().map(|(j, a)| a * problem.lower[*j]).sum();
        rows.push(Row {
            coeffs: c.coeffs.clone(),
            sense: c.sense,
            rhs: c.rhs - shift,
            origin: Some(idx),
            sign: 1.0,
        });
    }
    for j in 0..q {
        if problem.upper[j].is_finite() {
            rows.push(Row {
                coeffs: vec![(j, 1.0)],
                sense: Sense::Le,
                rhs: problem.upper[j] - problem.lower[j],
                origin: None,
                sign: 1.0,
            });
        }
    }
    for row in &mut rows {
        if row.rhs < 0.0 {
            row.rhs = -row.rhs;
            row.sign = -1.0;
            for (_, a) in &mut row.coeffs {
                *a = -*a;
            }
            row.sense = match row.sense {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            };
        }
    }

    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.sense != Sense::Eq).count();
    let n_art = rows.iter().filter(|r| r.sense != Sense::Le).count();
    let art_start = q + n_slack;
    let cols = art_start + n_art;
    let w = cols + 1;
    let mut tab = Tableau {
        rows: m,
        cols,
        data: vec![0.0; (m + 1) * w],
        basis: vec![0; m],
        pivots: 0,
    };
    // identity column of each row: where B^{-1} ends up after pivoting
    let mut unit_col = vec![0usize; m];
    let (mut next_slack, mut next_art) = (q, art_start);
    for (r, row) in rows.iter().enumerate() {
        for &(j, a) in &row.coeffs {
            tab.data[r * w + j] += a;
        }
        tab.data[r * w + cols] = row.rhs;
        match row.sense {
            Sense::Le => {
                tab.data[r * w + next_slack] = 1.0;
                tab.basis[r] = next_slack;
                unit_col[r] = next_slack;
                next_slack += 1;
            }
            Sense::Ge => {
                tab.data[r * w + next_slack] = -1.0;
                next_slack += 1;
                tab.data[r * w + next_art] = 1.0;
                tab.basis[r] = next_art;
                unit_col[r] = next_art;
                next_art += 1;
            }
            Sense::Eq => {
                tab.data[r * w + next_art] = 1.0;
                tab.basis[r] = next_art;
                unit_col[r] = next_art;
                next_art += 1;
            }
        }
    }

    if n_art > 0 {
        let mut cost = vec![0.0; cols];
        cost[art_start..].iter_mut().for_each(|c| *c = 1.0);
        tab.price(&cost);
        tab.optimize(cols);
        let infeasibility: f64 = (0..m)
            .filter(|&r| tab.basis[r] >= art_start)
            .map(|r| tab.rhs(r))
            .sum();
        if infeasibility > FEASIBILITY_TOL {
            return Ok(LpSolution::without_point(LpStatus::Infeasible, tab.pivots));
        }
        // drive zero-level artificials out where a structural pivot exists
        for r in 0..m {
            if tab.basis[r] >= art_start {
                if let Some(c) = (0..art_start).find(|&c| tab.at(r, c).abs() > PIVOT_TOL) {
                    tab.pivot(r, c);
                }
            }
        }
    }

    let mut cost = vec![0.0; cols];
    cost[..q].copy_from_slice(&problem.objective);
    tab.price(&cost);
    if !tab.optimize(art_start) {
        return Ok(LpSolution::without_point(LpStatus::Unbounded, tab.pivots));
    }

    let mut values = problem.lower.clone();
    for r in 0..m {
        let b = tab.basis[r];
        if b < q {
            values[b] += tab.rhs(r);
        }
    }
    for j in 0..q {
        values[j] = values[j].max(problem.lower[j]).min(problem.upper[j]);
    }

    let obj_row = m * w;
    let mut duals = vec![0.0; problem.constraints.len()];
    for (r, row) in rows.iter().enumerate() {
        if let Some(orig) = row.origin {
            // reduced cost of a unit column is -(row multiplier)
            duals[orig] = -tab.data[obj_row + unit_col[r]] * row.sign;
        }
    }
    let mut reduced_costs = problem.objective.clone();
    for (c, &y) in problem.constraints.iter().zip(&duals) {
        for &(j, a) in &c.coeffs {
            reduced_costs[j] -= y * a;
        }
    }

    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective_value: problem.objective_at(&values),
        values,
        duals,
        reduced_costs,
        pivots: tab.pivots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn maximize_single_variable() {
        let mut lp = LpProblem::new(1);
        lp.objective = vec![-1.0];
        lp.add_dense(&[1.0], Sense::Le, 1.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.values[0] - 1.0).abs() < 1e-12);
        assert!((s.objective_value + 1.0).abs() < 1e-12);
    }

    #[test]
    fn covering_with_boxes() {
        let mut lp = LpProblem::new(2);
        lp.objective = vec![1.0, 1.0];
        lp.add_dense(&[1.0, 1.0], Sense::Ge, 2.0);
        lp.set_bounds(0, 0.0, 1.0);
        lp.set_bounds(1, 0.0, 1.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value - 2.0).abs() < 1e-9);
        assert!(lp.max_violation(&s.values) < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LpProblem::new(1);
        lp.add_dense(&[1.0], Sense::Ge, 2.0);
        lp.set_bounds(0, 0.0, 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);

        let mut lp = LpProblem::new(2);
        lp.objective = vec![-1.0, 0.0];
        lp.add_dense(&[1.0, -1.0], Sense::Le, 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn equality_and_shifted_bounds() {
        // min x - y, x + y = 3, x in [1, 4], y in [-1, 1.5]
        let mut lp = LpProblem::new(2);
        lp.objective = vec![1.0, -1.0];
        lp.add_dense(&[1.0, 1.0], Sense::Eq, 3.0);
        lp.set_bounds(0, 1.0, 4.0);
        lp.set_bounds(1, -1.0, 1.5);
        let s = solve_lp(&lp).unwrap();
        assert!((s.values[0] - 1.5).abs() < 1e-9);
        assert!((s.values[1] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LpProblem::new(2);
        lp.objective = vec![1.0, 2.0];
        lp.add_dense(&[1.0, 1.0], Sense::Eq, 1.0);
        lp.add_dense(&[2.0, 2.0], Sense::Eq, 2.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn malformed_problem_is_an_error() {
        let mut lp = LpProblem::new(1);
        lp.set_bounds(0, 2.0, 1.0);
        assert!(solve_lp(&lp).is_err());
        let mut lp = LpProblem::new(1);
        lp.add_constraint(vec![(3, 1.0)], Sense::Le, 1.0);
        assert!(solve_lp(&lp).is_err());
    }

    /// Solves the square system picked by `active` (each entry selects a row
    /// or a bound to hold with equality) by Gaussian elimination.
    fn vertex(rows: &[(Vec<f64>, f64)]) -> Option<Vec<f64>> {
        let n = rows.len();
        let mut a: Vec<Vec<f64>> = rows
            .iter()
            .map(|(r, b)| {
                let mut v = r.clone();
                v.push(*b);
                v
            })
            .collect();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
            if a[piv][col].abs() < 1e-10 {
                return None;
            }
            a.swap(col, piv);
            for r in 0..n {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..=n {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
    }

    /// Best objective over all basic points of a box-bounded problem.
    fn brute_force_vertices(lp: &LpProblem) -> Option<f64> {
        let q = lp.num_vars();
        let mut candidates: Vec<(Vec<f64>, f64)> = lp
            .constraints
            .iter()
            .map(|c| {
                let mut row = vec![0.0; q];
                for &(j, a) in &c.coeffs {
                    row[j] += a;
                }
                (row, c.rhs)
            })
            .collect();
        for j in 0..q {
            let mut e = vec![0.0; q];
            e[j] = 1.0;
            candidates.push((e.clone(), lp.lower[j]));
            candidates.push((e, lp.upper[j]));
        }
        let k = candidates.len();
        let mut best: Option<f64> = None;
        let mut pick = vec![0usize; q];
        fn rec(
            start: usize,
            depth: usize,
            pick: &mut Vec<usize>,
            k: usize,
            cands: &[(Vec<f64>, f64)],
            lp: &LpProblem,
            best: &mut Option<f64>,
        ) {
            if depth == pick.len() {
                let sys: Vec<_> = pick.iter().map(|&i| cands[i].clone()).collect();
                if let Some(x) = vertex(&sys) {
                    if lp.max_violation(&x) < 1e-9 {
                        let v = lp.objective_at(&x);
                        *best = Some(best.map_or(v, |b: f64| b.min(v)));
                    }
                }
                return;
            }
            for i in start..k {
                pick[depth] = i;
                rec(i + 1, depth + 1, pick, k, cands, lp, best);
            }
        }
        rec(0, 0, &mut pick, k, &candidates, lp, &mut best);
        best
    }

    fn random_box_lp<R: Rng>(rng: &mut R) -> LpProblem {
        let q = rng.gen_range(1..=3);
        let m = rng.gen_range(1..=3);
        let mut lp = LpProblem::new(q);
        for j in 0..q {
            lp.objective[j] = rng.gen_range(-5.0..5.0);
            let lo = rng.gen_range(-2.0..1.0);
            lp.set_bounds(j, lo, lo + rng.gen_range(0.5..3.0));
        }
        // rows satisfied by the box midpoint so the problem is feasible
        let mid: Vec<f64> = (0..q).map(|j| 0.5 * (lp.lower[j] + lp.upper[j])).collect();
        for _ in 0..m {
            let row: Vec<f64> = (0..q).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let at_mid: f64 = row.iter().zip(&mid).map(|(a, x)| a * x).sum();
            let (sense, rhs) = match rng.gen_range(0..3) {
                0 => (Sense::Le, at_mid + rng.gen_range(0.0..2.0)),
                1 => (Sense::Ge, at_mid - rng.gen_range(0.0..2.0)),
                _ => (Sense::Eq, at_mid),
            };
            lp.add_dense(&row, sense, rhs);
        }
        lp
    }

    #[test]
    fn matches_vertex_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..50 {
            let lp = random_box_lp(&mut rng);
            let s = solve_lp(&lp).unwrap();
            assert_eq!(s.status, LpStatus::Optimal, "case {case}");
            assert!(lp.max_violation(&s.values) < 1e-7, "case {case}");
            let oracle = brute_force_vertices(&lp).unwrap();
            assert!((s.objective_value - oracle).abs() < 1e-7, "case {case}: {} vs {oracle}", s.objective_value);
        }
    }

    #[test]
    fn complementary_slackness() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let lp = random_box_lp(&mut rng);
            let s = solve_lp(&lp).unwrap();
            for (c, &y) in lp.constraints.iter().zip(&s.duals) {
                let lhs: f64 = c.coeffs.iter().map(|(j, a)| a * s.values[*j]).sum();
                let slack = (lhs - c.rhs).abs();
                match c.sense {
                    Sense::Le => assert!(y <= 1e-6),
                    Sense::Ge => assert!(y >= -1e-6),
                    Sense::Eq => {}
                }
                assert!((y * slack).abs() < 1e-6);
            }
            for j in 0..lp.num_vars() {
                let d = s.reduced_costs[j];
                let at_lower = (s.values[j] - lp.lower[j]).abs() < 1e-9;
                let at_upper = (s.values[j] - lp.upper[j]).abs() < 1e-9;
                if !at_lower && !at_upper {
                    assert!(d.abs() < 1e-6);
                } else if at_lower && !at_upper {
                    assert!(d >= -1e-6);
                } else if at_upper && !at_lower {
                    assert!(d <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn resolving_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lp = random_box_lp(&mut rng);
        assert_eq!(solve_lp(&lp).unwrap(), solve_lp(&lp).unwrap());
    }
}
