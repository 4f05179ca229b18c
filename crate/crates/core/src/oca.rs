//! Exact coded allocation: the mixed-integer program over allocations `x`,
//! per-contact downloads `u` and per-(file, walk) success indicators `T`,
//! solved by best-bound-first branch and bound over LP relaxations.
//!
//! The program is exact only while every walk can be listed, so it is meant
//! for a handful of helpers and a short deadline. Larger instances are
//! refused with [`Error::InstanceTooLarge`]; the greedy allocation in
//! [`crate::aca`] is the intended fallback.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::aca::aca;
use crate::allocation::{failure_probability_exact, Allocation};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::lp::{solve_lp, LpProblem, LpStatus, Sense};
use crate::walks::{enumerate_walks, visit_counts, Walk, DEFAULT_ENUMERATION_CAP};

/// Column limit for the dense tableau behind each relaxation.
pub const DEFAULT_MAX_COLUMNS: usize = 2_000;

/// What an LP column stands for. Indices are 0-based; `contact` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MipVar {
    Stored { helper: usize, file: usize },
    Download { helper: usize, file: usize, contact: usize },
    Success { file: usize, walk: usize },
}

#[derive(Debug, Clone)]
pub struct MipProblem {
    /// Relaxation with `T` boxed to `[0, 1]`. Its objective omits the constant
    /// `objective_constant`, so the failure probability is `constant + c.x`.
    pub lp: LpProblem,
    pub objective_constant: f64,
    pub binary_vars: Vec<usize>,
    pub var_map: Vec<MipVar>,
    /// Positive-probability walks with their probabilities.
    pub walks: Vec<(Walk, f64)>,
    n: usize,
    files: usize,
    deadline: usize,
}

impl MipProblem {
    pub fn num_columns(&self) -> usize {
        self.var_map.len()
    }

    /// Variable count before indicators with zero objective weight are dropped:
    /// `|O| (#walks + n d + n)`.
    pub fn unpruned_columns(&self) -> usize {
        self.files * (self.walks.len() + self.n * self.deadline + self.n)
    }

    /// Column of `x[helper][file]`.
    pub fn x_col(&self, helper: usize, file: usize) -> usize {
        helper * self.files + file
    }

    /// Column of `u^contact[helper][file]`, `contact` in `1..=d`.
    pub fn u_col(&self, helper: usize, file: usize, contact: usize) -> usize {
        self.n * self.files + (helper * self.files + file) * self.deadline + contact - 1
    }

    /// Reads the allocation block out of an LP point, clamped to `[0, 1]`.
    pub fn allocation_from(&self, values: &[f64]) -> Allocation {
        let mut alloc = Allocation::zeros(self.n, self.files);
        for h in 0..self.n {
            for i in 0..self.files {
                alloc.set(h, i, values[self.x_col(h, i)].clamp(0.0, 1.0));
            }
        }
        alloc
    }
}

/// Builds the program for `instance`, refusing it when the walk list exceeds
/// `enumeration_cap` or the column count exceeds `max_columns`.
pub fn build_mip(instance: &Instance, enumeration_cap: u128, max_columns: usize) -> Result<MipProblem> {
    let (n, files, d) = (instance.n(), instance.num_files(), instance.deadline);
    let walks = enumerate_walks(&instance.model, d, enumeration_cap)?;

    let mut indicators = Vec::new();
    for (w, (walk, p)) in walks.iter().enumerate() {
        for file in 0..files {
            let c = p * instance.requests.p(walk.0[0], file);
            if c > 0.0 {
                indicators.push((file, w, c));
            }
        }
    }
    let columns = n * files * (d + 1) + indicators.len();
    if columns > max_columns {
        return Err(Error::InstanceTooLarge {
            what: "coded allocation program columns",
            required: columns as u128,
            cap: max_columns as u128,
            hint: "use the greedy allocation (aca) for instances of this size",
        });
    }

    let mut var_map = Vec::with_capacity(columns);
    for helper in 0..n {
        for file in 0..files {
            var_map.push(MipVar::Stored { helper, file });
        }
    }
    for helper in 0..n {
        for file in 0..files {
            for contact in 1..=d {
                var_map.push(MipVar::Download { helper, file, contact });
            }
        }
    }
    let t_start = var_map.len();
    for &(file, walk, _) in &indicators {
        var_map.push(MipVar::Success { file, walk });
    }

    let mut mip = MipProblem {
        lp: LpProblem::new(columns),
        objective_constant: 0.0,
        binary_vars: (t_start..columns).collect(),
        var_map,
        walks,
        n,
        files,
        deadline: d,
    };

    for h in 0..n {
        let row = (0..files)
            .map(|i| (mip.x_col(h, i), instance.catalog.size(i) as f64))
            .collect();
        mip.lp.add_constraint(row, Sense::Le, instance.helpers.capacity(h) as f64);
        for i in 0..files {
            mip.lp.set_bounds(mip.x_col(h, i), 0.0, 1.0);
            let cap = instance.helpers.slot_fraction(h, &instance.catalog, i);
            let mut row = vec![(mip.x_col(h, i), -1.0)];
            for k in 1..=d {
                mip.lp.set_bounds(mip.u_col(h, i, k), 0.0, cap);
                row.push((mip.u_col(h, i, k), 1.0));
            }
            mip.lp.add_constraint(row, Sense::Le, 0.0);
        }
    }

    let mut constant = 0.0;
    for (offset, &(file, w, c)) in indicators.iter().enumerate() {
        let col = t_start + offset;
        constant += c;
        mip.lp.objective[col] = -c;
        mip.lp.set_bounds(col, 0.0, 1.0);
        let mut row = vec![(col, 1.0)];
        for (h, visits) in visit_counts(&mip.walks[w].0 .0) {
            for k in 1..=visits.min(d) {
                row.push((mip.u_col(h, file, k), -1.0));
            }
        }
        mip.lp.add_constraint(row, Sense::Le, 0.0);
    }
    mip.objective_constant = constant;
    Ok(mip)
}

#[derive(Debug, Clone)]
pub struct BnbOptions {
    pub integrality_tol: f64,
    pub objective_gap_tol: f64,
    pub node_limit: usize,
    pub warm_start: Option<Allocation>,
}

impl Default for BnbOptions {
    fn default() -> Self {
        Self {
            integrality_tol: 1e-6,
            objective_gap_tol: 1e-9,
            node_limit: 100_000,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BnbStatus {
    /// The gap closed within tolerance.
    Optimal,
    /// Stopped at the node limit; the gap is still open.
    NodeLimit,
}

#[derive(Debug, Clone)]
pub struct BnbResult {
    pub allocation: Allocation,
    /// Exact failure probability of `allocation`.
    pub objective: f64,
    /// Best proven lower bound on the optimum.
    pub lower_bound: f64,
    /// Value of the root relaxation.
    pub relaxation_value: f64,
    /// `objective - lower_bound`, never negative.
    pub gap: f64,
    pub nodes: usize,
    pub lp_pivots: usize,
    pub status: BnbStatus,
}

struct Node {
    bound: f64,
    id: usize,
    fixed: Vec<(usize, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// BinaryHeap is a max-heap: the smallest bound, then the oldest node, is "greatest"
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// Shrinks any helper row that overshoots its capacity because of solver noise.
fn repair(mut alloc: Allocation, instance: &Instance) -> Allocation {
    for h in 0..alloc.n() {
        let used: f64 = (0..alloc.num_files())
            .map(|i| instance.catalog.size(i) as f64 * alloc.get(h, i))
            .sum();
        let cap = instance.helpers.capacity(h) as f64;
        if used > cap {
            let scale = cap / used;
            for i in 0..alloc.num_files() {
                alloc.set(h, i, alloc.get(h, i) * scale);
            }
        }
    }
    alloc
}

/// Best-bound-first branch and bound on the success indicators.
///
/// Every relaxation's allocation block is evaluated exactly and kept when it
/// beats the incumbent; this is valid because the exact evaluation downloads
/// at least as much as any `u` the program may choose for the same `x`.
pub fn solve_branch_and_bound(mip: &MipProblem, instance: &Instance, options: &BnbOptions) -> Result<BnbResult> {
    if !(options.integrality_tol > 0.0 && options.objective_gap_tol > 0.0) {
        return Err(Error::InvalidParameter("tolerances must be positive".into()));
    }
    if mip.n != instance.n() || mip.files != instance.num_files() || mip.deadline != instance.deadline {
        return Err(Error::DimensionMismatch("program was built for a different instance".into()));
    }
    let cap = DEFAULT_ENUMERATION_CAP.max(mip.walks.len() as u128);
    let evaluate = |alloc: &Allocation| -> Result<f64> {
        Ok(failure_probability_exact(alloc, instance, cap)?.p_fail)
    };

    let mut best = match &options.warm_start {
        Some(a) => {
            let a = repair(a.clone(), instance);
            let v = evaluate(&a)?;
            (a, v)
        }
        None => {
            let a = Allocation::zeros(instance.n(), instance.num_files());
            let v = evaluate(&a)?;
            (a, v)
        }
    };

    let mut heap = BinaryHeap::new();
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        id: 0,
        fixed: Vec::new(),
    });
    let mut next_id = 1;
    let mut nodes = 0;
    let mut pivots = 0;
    let mut relaxation_value = f64::NAN;
    let mut open_bound = f64::INFINITY;

    while let Some(node) = heap.pop() {
        if node.bound >= best.1 - options.objective_gap_tol {
            heap.clear();
            break;
        }
        if nodes >= options.node_limit {
            open_bound = node.bound;
            heap.push(node);
            break;
        }
        nodes += 1;

        let mut lp = mip.lp.clone();
        for &(col, v) in &node.fixed {
            lp.set_bounds(col, v, v);
        }
        let sol = solve_lp(&lp)?;
        pivots += sol.pivots;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => return Err(Error::Lp(LpStatus::Unbounded)),
        }
        let bound = mip.objective_constant + sol.objective_value;
        if node.id == 0 {
            relaxation_value = bound;
        }

        let candidate = repair(mip.allocation_from(&sol.values), instance);
        let value = evaluate(&candidate)?;
        if value < best.1 {
            best = (candidate, value);
        }
        if bound >= best.1 - options.objective_gap_tol {
            continue;
        }

        let branch = mip
            .binary_vars
            .iter()
            .filter_map(|&col| {
                let t = sol.values[col];
                let frac = t.min(1.0 - t);
                (frac > options.integrality_tol).then(|| (col, -mip.lp.objective[col] * frac))
            })
            .fold(None, |acc: Option<(usize, f64)>, (col, score)| match acc {
                Some((_, s)) if s >= score => acc,
                _ => Some((col, score)),
            });
        let Some((col, _)) = branch else {
            // integral relaxation: its exact value was already taken above
            continue;
        };
        for v in [0.0, 1.0] {
            let mut fixed = node.fixed.clone();
            fixed.push((col, v));
            heap.push(Node {
                bound,
                id: next_id,
                fixed,
            });
            next_id += 1;
        }
    }

    heap.retain(|n| n.bound < best.1 - options.objective_gap_tol);
    let remaining = heap.iter().map(|n| n.bound).fold(open_bound, f64::min);
    let lower_bound = remaining.min(best.1);
    let gap = (best.1 - lower_bound).max(0.0);
    let status = if heap.is_empty() {
        BnbStatus::Optimal
    } else {
        BnbStatus::NodeLimit
    };
    Ok(BnbResult {
        allocation: best.0,
        objective: best.1,
        lower_bound,
        relaxation_value: if relaxation_value.is_nan() { lower_bound } else { relaxation_value },
        gap,
        nodes,
        lp_pivots: pivots,
        status,
    })
}

/// Optimal coded allocation with default limits, warm-started from the greedy
/// allocation unless `options` already carries a warm start.
pub fn oca_allocate(instance: &Instance, options: &BnbOptions) -> Result<BnbResult> {
    let mip = build_mip(instance, DEFAULT_ENUMERATION_CAP, DEFAULT_MAX_COLUMNS)?;
    let mut options = options.clone();
    if options.warm_start.is_none() {
        options.warm_start = Some(aca(instance)?);
    }
    solve_branch_and_bound(&mip, instance, &options)
}
