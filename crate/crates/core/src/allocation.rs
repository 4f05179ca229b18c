//! Storage allocations, the per-contact download schedule they induce, cache
//! feasibility, and the exact and Monte Carlo failure-probability evaluators.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::model::{Catalog, HelperSet};
use crate::walks::{for_each_walk, visit_counts};

/// A file counts as delivered once the downloaded fraction reaches `1 - SUCCESS_TOL`.
pub const SUCCESS_TOL: f64 = 1e-9;

/// Slack allowed on cache capacity, in bytes.
pub const CAPACITY_TOL: f64 = 1e-6;

/// Two-sided 99% standard normal quantile.
const Z_99: f64 = 2.575_829_303_548_900_4;

/// Samples drawn from one random stream by the Monte Carlo evaluator.
pub const MC_BLOCK: u64 = 4096;

/// `x[h][i]`: fraction of file `i` stored, in encoded form, at helper `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    x: Vec<Vec<f64>>,
}

impl Allocation {
    pub fn new(x: Vec<Vec<f64>>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::EmptyInput("allocation has no helpers".into()));
        }
        let files = x[0].len();
        if x.iter().any(|row| row.len() != files) {
            return Err(Error::DimensionMismatch("allocation rows differ in length".into()));
        }
        Ok(Self { x })
    }

    pub fn zeros(n: usize, files: usize) -> Self {
        Self {
            x: vec![vec![0.0; files]; n],
        }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn num_files(&self) -> usize {
        self.x[0].len()
    }

    pub fn get(&self, helper: usize, file: usize) -> f64 {
        self.x[helper][file]
    }

    pub fn set(&mut self, helper: usize, file: usize, value: f64) {
        self.x[helper][file] = value;
    }

    pub fn row(&self, helper: usize) -> &[f64] {
        &self.x[helper]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn set_row(&mut self, helper: usize, row: Vec<f64>) {
        assert_eq!(row.len(), self.num_files());
        self.x[helper] = row;
    }

    fn check_shape(&self, n: usize, files: usize) -> Result<()> {
        if self.n() != n || self.num_files() != files {
            return Err(Error::DimensionMismatch(format!(
                "allocation is {}x{}, instance is {n}x{files}",
                self.n(),
                self.num_files()
            )));
        }
        Ok(())
    }
}

/// `u[h][i][k]`: fraction of file `i` fetched from helper `h` on the `k`-th
/// contact with it. Later contacts only deliver data not fetched before.
#[derive(Debug, Clone, PartialEq)]
pub struct DownloadSchedule {
    n: usize,
    files: usize,
    d: usize,
    u: Vec<f64>,
}

impl DownloadSchedule {
    pub fn zeros(n: usize, files: usize, d: usize) -> Self {
        Self {
            n,
            files,
            d,
            u: vec![0.0; n * files * d],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_files(&self) -> usize {
        self.files
    }

    pub fn deadline(&self) -> usize {
        self.d
    }

    fn idx(&self, helper: usize, file: usize, k: usize) -> usize {
        (helper * self.files + file) * self.d + (k - 1)
    }

    /// Fraction fetched on the `k`-th contact (1-based); zero past the deadline.
    pub fn get(&self, helper: usize, file: usize, k: usize) -> f64 {
        assert!(k >= 1, "contact counts are 1-based");
        if k > self.d {
            return 0.0;
        }
        self.u[self.idx(helper, file, k)]
    }

    pub fn set(&mut self, helper: usize, file: usize, k: usize, value: f64) {
        let idx = self.idx(helper, file, k);
        self.u[idx] = value;
    }

    /// Total fetched from `helper` over its first `contacts` contacts.
    pub fn cumulative(&self, helper: usize, file: usize, contacts: usize) -> f64 {
        let upto = contacts.min(self.d);
        let base = self.idx(helper, file, 1);
        self.u[base..base + upto].iter().sum()
    }
}

/// Greedy per-contact schedule: `u^1 = min(x, b/|O|)`, then each further
/// contact fetches `min(remaining, b/|O|)`.
pub fn download_schedule(
    alloc: &Allocation,
    helpers: &HelperSet,
    catalog: &Catalog,
    d: usize,
) -> Result<DownloadSchedule> {
    alloc.check_shape(helpers.len(), catalog.len())?;
    let mut schedule = DownloadSchedule::zeros(alloc.n(), alloc.num_files(), d);
    for h in 0..alloc.n() {
        for i in 0..alloc.num_files() {
            let cap = helpers.slot_fraction(h, catalog, i);
            let mut remaining = alloc.get(h, i);
            for k in 1..=d {
                let take = remaining.min(cap).max(0.0);
                schedule.set(h, i, k, take);
                remaining -= take;
            }
        }
    }
    Ok(schedule)
}

/// Outcome of [`check_feasible`].
#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    /// `|C_h| - sum_i |O_i| x[h][i]` per helper, in bytes.
    pub slack: Vec<f64>,
    pub violations: Vec<String>,
}

pub fn check_feasible(alloc: &Allocation, helpers: &HelperSet, catalog: &Catalog) -> Result<Feasibility> {
    alloc.check_shape(helpers.len(), catalog.len())?;
    let mut violations = Vec::new();
    let mut slack = Vec::with_capacity(alloc.n());
    for h in 0..alloc.n() {
        let mut used = 0.0;
        for i in 0..alloc.num_files() {
            let x = alloc.get(h, i);
            if !(0.0..=1.0).contains(&x) {
                violations.push(format!("x[{}][{}] = {x} outside [0, 1]", h + 1, i + 1));
            }
            used += catalog.size(i) as f64 * x;
        }
        let s = helpers.capacity(h) as f64 - used;
        if s < -CAPACITY_TOL {
            violations.push(format!(
                "helper {} stores {used} bytes, capacity {}",
                h + 1,
                helpers.capacity(h)
            ));
        }
        slack.push(s);
    }
    Ok(Feasibility {
        feasible: violations.is_empty(),
        slack,
        violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMethod {
    Exact,
    MonteCarlo,
}

impl std::fmt::Display for EvalMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalMethod::Exact => f.write_str("exact"),
            EvalMethod::MonteCarlo => f.write_str("monte-carlo"),
        }
    }
}

/// Failure probability of an allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub p_fail: f64,
    pub method: EvalMethod,
    pub samples: u64,
    pub ci_halfwidth_99: f64,
}

fn delivered(schedule: &DownloadSchedule, counts: &[(usize, usize)], file: usize) -> f64 {
    counts
        .iter()
        .map(|&(h, c)| schedule.cumulative(h, file, c))
        .sum()
}

fn schedule_for(alloc: &Allocation, instance: &Instance) -> Result<DownloadSchedule> {
    let feas = check_feasible(alloc, &instance.helpers, &instance.catalog)?;
    if !feas.feasible {
        return Err(Error::InvalidInput(format!(
            "allocation is infeasible: {}",
            feas.violations.join("; ")
        )));
    }
    download_schedule(alloc, &instance.helpers, &instance.catalog, instance.deadline)
}

/// Probability that the requested file is not fully downloaded within the
/// deadline, summed exactly over all walks.
pub fn failure_probability_exact(alloc: &Allocation, instance: &Instance, cap: u128) -> Result<EvalReport> {
    let schedule = schedule_for(alloc, instance)?;
    let files = instance.num_files();
    let mut p_fail = 0.0;
    for_each_walk(&instance.model, instance.deadline, cap, |steps, p| {
        let counts = visit_counts(steps);
        let requests = instance.requests.row(steps[0]);
        for (file, &q) in requests.iter().enumerate().take(files) {
            if q > 0.0 && delivered(&schedule, &counts, file) < 1.0 - SUCCESS_TOL {
                p_fail += p * q;
            }
        }
    })?;
    Ok(EvalReport {
        p_fail: p_fail.clamp(0.0, 1.0),
        method: EvalMethod::Exact,
        samples: 0,
        ci_halfwidth_99: 0.0,
    })
}

/// Monte Carlo estimate of the failure probability.
///
/// Sample `s` is drawn from ChaCha8 seeded with `seed` on stream
/// `s / MC_BLOCK`, so the result does not depend on how blocks are scheduled.
pub fn failure_probability_mc(alloc: &Allocation, instance: &Instance, samples: u64, seed: u64) -> Result<EvalReport> {
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let schedule = schedule_for(alloc, instance)?;
    let weighted = |w: &[f64]| WeightedIndex::new(w).map_err(|e| Error::InvalidInput(e.to_string()));
    let start = weighted(instance.model.init())?;
    let moves: Vec<_> = instance
        .model
        .trans()
        .iter()
        .map(|r| weighted(r))
        .collect::<Result<_>>()?;
    let files: Vec<_> = instance
        .requests
        .rows()
        .iter()
        .map(|r| weighted(r))
        .collect::<Result<_>>()?;
    let d = instance.deadline;

    let blocks = samples.div_ceil(MC_BLOCK);
    let failures: u64 = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let count = MC_BLOCK.min(samples - b * MC_BLOCK);
            let mut steps = vec![0usize; d];
            let mut failed = 0u64;
            for _ in 0..count {
                steps[0] = start.sample(&mut rng);
                for t in 1..d {
                    steps[t] = moves[steps[t - 1]].sample(&mut rng);
                }
                let file = files[steps[0]].sample(&mut rng);
                if delivered(&schedule, &visit_counts(&steps), file) < 1.0 - SUCCESS_TOL {
                    failed += 1;
                }
            }
            failed
        })
        .sum();

    let p = failures as f64 / samples as f64;
    Ok(EvalReport {
        p_fail: p,
        method: EvalMethod::MonteCarlo,
        samples,
        ci_halfwidth_99: Z_99 * (p * (1.0 - p) / samples as f64).sqrt(),
    })
}

/// On-disk form of an allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationArtifact {
    pub n: usize,
    pub num_files: usize,
    pub x: Vec<Vec<f64>>,
    pub algorithm: String,
    pub objective_estimate: f64,
    /// Certified optimality gap, present for exact solves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
}

impl AllocationArtifact {
    pub fn new(alloc: &Allocation, algorithm: &str, objective_estimate: f64, gap: Option<f64>) -> Self {
        Self {
            n: alloc.n(),
            num_files: alloc.num_files(),
            x: alloc.rows().to_vec(),
            algorithm: algorithm.to_string(),
            objective_estimate,
            gap,
        }
    }

    pub fn to_allocation(&self) -> Result<Allocation> {
        let alloc = Allocation::new(self.x.clone())?;
        if alloc.n() != self.n || alloc.num_files() != self.num_files {
            return Err(Error::DimensionMismatch(format!(
                "artifact declares {}x{} but x is {}x{}",
                self.n,
                self.num_files,
                alloc.n(),
                alloc.num_files()
            )));
        }
        Ok(alloc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{desk1, random_instance, RandomInstanceSpec};
    use crate::walks::DEFAULT_ENUMERATION_CAP;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn x(rows: Vec<Vec<f64>>) -> Allocation {
        Allocation::new(rows).unwrap()
    }

    #[test]
    fn schedule_desk1() {
        let inst = desk1(10);
        let s = download_schedule(&x(vec![vec![1.0], vec![1.0]]), &inst.helpers, &inst.catalog, 2).unwrap();
        assert_eq!((s.get(0, 0, 1), s.get(0, 0, 2)), (0.5, 0.5));
        let s = download_schedule(&x(vec![vec![0.5], vec![0.5]]), &inst.helpers, &inst.catalog, 2).unwrap();
        assert_eq!((s.get(1, 0, 1), s.get(1, 0, 2)), (0.5, 0.0));
        let s = download_schedule(&Allocation::zeros(2, 1), &inst.helpers, &inst.catalog, 2).unwrap();
        assert_eq!((s.get(0, 0, 1), s.get(0, 0, 2), s.get(0, 0, 3)), (0.0, 0.0, 0.0));
    }

    #[test]
    fn feasibility_desk1() {
        let inst = desk1(10);
        let f = check_feasible(&x(vec![vec![1.0], vec![1.0]]), &inst.helpers, &inst.catalog).unwrap();
        assert!(f.feasible);
        assert_eq!(f.slack, vec![0.0, 0.0]);
        let f = check_feasible(&x(vec![vec![1.1], vec![0.0]]), &inst.helpers, &inst.catalog).unwrap();
        assert!(!f.feasible);
        let inst = desk1(5);
        let f = check_feasible(&x(vec![vec![0.6], vec![0.0]]), &inst.helpers, &inst.catalog).unwrap();
        assert!(!f.feasible);
        assert!((f.slack[0] + 1.0).abs() < 1e-12);
        assert!(matches!(
            check_feasible(&Allocation::zeros(3, 1), &inst.helpers, &inst.catalog),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn exact_failure_desk1() {
        let inst = desk1(10);
        let full = failure_probability_exact(&x(vec![vec![1.0], vec![1.0]]), &inst, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(full.p_fail, 0.0);
        let half = failure_probability_exact(&x(vec![vec![0.5], vec![0.5]]), &inst, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(half.p_fail, 0.5);
        let none = failure_probability_exact(&Allocation::zeros(2, 1), &inst, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(none.p_fail, 1.0);
    }

    #[test]
    fn exact_rejects_infeasible_and_large() {
        let inst = desk1(5);
        assert!(failure_probability_exact(&x(vec![vec![1.0], vec![0.0]]), &inst, DEFAULT_ENUMERATION_CAP).is_err());
        assert!(matches!(
            failure_probability_exact(&Allocation::zeros(2, 1), &inst, 3),
            Err(Error::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn monte_carlo_desk1() {
        let inst = desk1(10);
        let alloc = x(vec![vec![0.5], vec![0.5]]);
        let a = failure_probability_mc(&alloc, &inst, 100_000, 42).unwrap();
        assert!((a.p_fail - 0.5).abs() <= a.ci_halfwidth_99);
        let b = failure_probability_mc(&alloc, &inst, 100_000, 42).unwrap();
        assert_eq!(a, b);
        let zero = failure_probability_mc(&Allocation::zeros(2, 1), &inst, 1000, 7).unwrap();
        assert_eq!(zero.p_fail, 1.0);
        assert_eq!(zero.ci_halfwidth_99, 0.0);
    }

    fn random_feasible<R: Rng>(rng: &mut R, inst: &Instance) -> Allocation {
        let mut alloc = Allocation::zeros(inst.n(), inst.num_files());
        for h in 0..inst.n() {
            let mut budget = inst.helpers.capacity(h) as f64;
            for i in 0..inst.num_files() {
                let size = inst.catalog.size(i) as f64;
                let v: f64 = rng.gen::<f64>().min(budget / size).max(0.0);
                alloc.set(h, i, v);
                budget -= v * size;
            }
        }
        alloc
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn schedule_telescopes(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let inst = random_instance(&mut rng, RandomInstanceSpec { max_helpers: 3, max_deadline: 4, max_files: 3, zero_prob: 0.2 });
            let alloc = random_feasible(&mut rng, &inst);
            let s = download_schedule(&alloc, &inst.helpers, &inst.catalog, inst.deadline).unwrap();
            for h in 0..inst.n() {
                for i in 0..inst.num_files() {
                    let cap = inst.helpers.slot_fraction(h, &inst.catalog, i);
                    let expect = alloc.get(h, i).min(inst.deadline as f64 * cap);
                    prop_assert!((s.cumulative(h, i, inst.deadline) - expect).abs() < 1e-12);
                    for k in 1..=inst.deadline {
                        prop_assert!(s.get(h, i, k) >= 0.0 && s.get(h, i, k) <= cap + 1e-15);
                    }
                }
            }
        }

        #[test]
        fn more_storage_never_hurts(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let inst = random_instance(&mut rng, RandomInstanceSpec { max_helpers: 3, max_deadline: 3, max_files: 3, zero_prob: 0.2 });
            let alloc = random_feasible(&mut rng, &inst);
            let base = failure_probability_exact(&alloc, &inst, DEFAULT_ENUMERATION_CAP).unwrap().p_fail;
            prop_assert!((0.0..=1.0).contains(&base));
            let mut bigger = alloc.clone();
            let h = rng.gen_range(0..inst.n());
            let i = rng.gen_range(0..inst.num_files());
            bigger.set(h, i, (alloc.get(h, i) + rng.gen::<f64>()).min(1.0));
            let roomy = inst.with_helpers(HelperSet::new(
                vec![inst.catalog.total_bytes(); inst.n()],
                inst.helpers.budgets().to_vec(),
            ).unwrap()).unwrap();
            let more = failure_probability_exact(&bigger, &roomy, DEFAULT_ENUMERATION_CAP).unwrap().p_fail;
            prop_assert!(more <= base + 1e-12);
        }
    }
}
