//! Self-check suite: every closed form and solver is compared against an
//! independent oracle on seeded random instances. The contact-value routine is
//! injectable so that a deliberately broken one can be shown to be caught.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::aca::{aca_allocate, expected_weight, greedy_knapsack, knapsack_lp_oracle, KnapsackInstance};
use crate::allocation::{download_schedule, Allocation, failure_probability_exact, failure_probability_mc};
use crate::auxchain::{build_aux_chain, expected_weight_via_chain, stationary_distribution, stationary_residual, DEFAULT_STATE_CAP};
use crate::error::Result;
use crate::model::{MobilityModel, RequestModel};
use crate::oca::{build_mip, solve_branch_and_bound, BnbOptions, DEFAULT_MAX_COLUMNS};
use crate::synth::{random_allocation, random_instance, random_knapsack, RandomInstanceSpec};
use crate::walks::{contact_value_oracle, contact_value_table, ContactValueTable, DEFAULT_ENUMERATION_CAP};

/// Signature shared by the contact-value routine and its stand-ins.
pub type ContactValueFn = fn(&MobilityModel, &RequestModel, usize) -> Result<ContactValueTable>;

pub const ALPHAS: [f64; 3] = [0.25, 0.5, 0.75];
pub const MC_SAMPLES: u64 = 100_000;
const RANDOM_ALLOCATIONS: usize = 100;

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    pub trials: usize,
    pub contact_values: ContactValueFn,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 20,
            contact_values: contact_value_table,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    /// NaN when the check is a count rather than a tolerance.
    pub tolerance: f64,
    pub passed: bool,
    /// Extra context, e.g. how many Monte Carlo runs missed their interval.
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub trials: usize,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "verify seed={} trials={}", self.seed, self.trials)?;
        for c in &self.checks {
            write!(
                f,
                "{:<28} {} cases={:<4} max_error={:.3e}",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.cases,
                c.max_error
            )?;
            if !c.tolerance.is_nan() {
                write!(f, " tol={:.0e}", c.tolerance)?;
            }
            if !c.note.is_empty() {
                write!(f, " {}", c.note)?;
            }
            writeln!(f)?;
        }
        write!(f, "overall {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

fn check(name: &'static str, cases: usize, max_error: f64, tolerance: f64, note: String) -> CheckResult {
    CheckResult {
        name,
        cases,
        max_error,
        tolerance,
        passed: max_error <= tolerance,
        note,
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const WALK_SPEC: RandomInstanceSpec = RandomInstanceSpec {
    max_helpers: 4,
    max_deadline: 4,
    max_files: 3,
    zero_prob: 0.2,
};

const MIP_SPEC: RandomInstanceSpec = RandomInstanceSpec {
    max_helpers: 3,
    max_deadline: 2,
    max_files: 3,
    zero_prob: 0.1,
};

/// Contact values against brute-force walk enumeration.
pub fn check_contact_values(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = rng_for(opts.seed, 1);
    let mut worst: f64 = 0.0;
    for _ in 0..opts.trials {
        let inst = random_instance(&mut rng, WALK_SPEC);
        let fast = (opts.contact_values)(&inst.model, &inst.requests, inst.deadline)?;
        let slow = contact_value_oracle(&inst.model, &inst.requests, inst.deadline, DEFAULT_ENUMERATION_CAP)?;
        worst = worst.max(fast.max_abs_diff(&slow));
    }
    Ok(check("contact-values-vs-walks", opts.trials, worst, 1e-12, String::new()))
}

/// Expected weight against walks on the auxiliary chain at several `alpha`,
/// plus the stationary-distribution checks on every chain built.
pub fn check_chain(opts: &VerifyOptions) -> Result<[CheckResult; 2]> {
    let mut rng = rng_for(opts.seed, 2);
    let mut weight_err: f64 = 0.0;
    let mut pi_err: f64 = 0.0;
    let mut residual: f64 = 0.0;
    let mut chains = 0;
    for _ in 0..opts.trials {
        let inst = random_instance(&mut rng, WALK_SPEC);
        let alloc = random_allocation(&mut rng, &inst);
        let schedule = download_schedule(&alloc, &inst.helpers, &inst.catalog, inst.deadline)?;
        let values = (opts.contact_values)(&inst.model, &inst.requests, inst.deadline)?;
        let direct = expected_weight(&schedule, &values)?;
        for alpha in ALPHAS {
            let chain = build_aux_chain(&inst.model, &inst.requests, inst.deadline, alpha, &schedule, DEFAULT_STATE_CAP)?;
            let via_chain = expected_weight_via_chain(&chain, inst.deadline, DEFAULT_ENUMERATION_CAP)?;
            weight_err = weight_err.max((via_chain - direct).abs());
            let pi = stationary_distribution(&chain)?;
            let root = 1.0 / (1.0 + alpha * inst.deadline as f64);
            pi_err = pi_err.max((pi[0] - root).abs());
            residual = residual.max(stationary_residual(&chain, &pi));
            chains += 1;
        }
    }
    Ok([
        check("expected-weight-vs-chain", chains, weight_err, 1e-10, String::new()),
        CheckResult {
            passed: pi_err <= 1e-12 && residual <= 1e-10,
            ..check("stationary-root-mass", chains, pi_err, 1e-12, format!("residual={residual:.3e}"))
        },
    ])
}

/// Greedy knapsack against the LP optimum, on random knapsacks and on the
/// per-helper subproblems of random instances.
pub fn check_greedy(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = rng_for(opts.seed, 3);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for _ in 0..opts.trials {
        let ks = random_knapsack(&mut rng, 6, 4);
        worst = worst.max((greedy_knapsack(&ks).objective - knapsack_lp_oracle(&ks)?).abs());
        let inst = random_instance(&mut rng, WALK_SPEC);
        let values = (opts.contact_values)(&inst.model, &inst.requests, inst.deadline)?;
        for h in 0..inst.n() {
            let ks = KnapsackInstance::for_helper(h, &inst.helpers, &inst.catalog, &values);
            worst = worst.max((greedy_knapsack(&ks).objective - knapsack_lp_oracle(&ks)?).abs());
            cases += 1;
        }
        cases += 1;
    }
    Ok(check("greedy-vs-lp", cases, worst, 1e-9, String::new()))
}

/// Exact evaluator against Monte Carlo: at most one run in twenty may fall
/// outside its 99% interval (rounded up, so short runs may miss once).
pub fn check_monte_carlo(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = rng_for(opts.seed, 4);
    let mut worst: f64 = 0.0;
    let mut misses = 0;
    for t in 0..opts.trials {
        let inst = random_instance(&mut rng, WALK_SPEC);
        let alloc = random_allocation(&mut rng, &inst);
        let exact = failure_probability_exact(&alloc, &inst, DEFAULT_ENUMERATION_CAP)?.p_fail;
        let mc = failure_probability_mc(&alloc, &inst, MC_SAMPLES, opts.seed.wrapping_add(t as u64))?;
        let err = (exact - mc.p_fail).abs();
        worst = worst.max(err);
        if err > mc.ci_halfwidth_99 {
            misses += 1;
        }
    }
    let allowed = opts.trials.div_ceil(20);
    Ok(CheckResult {
        name: "exact-vs-monte-carlo",
        cases: opts.trials,
        max_error: worst,
        tolerance: f64::NAN,
        passed: misses <= allowed,
        note: format!("outside_ci={misses} allowed={allowed}"),
    })
}

/// Branch and bound against the greedy allocation and random feasible ones.
pub fn check_optimality(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = rng_for(opts.seed, 5);
    let mut worst: f64 = 0.0;
    for _ in 0..opts.trials {
        let inst = random_instance(&mut rng, MIP_SPEC);
        let score = |a: &Allocation| -> Result<f64> { Ok(failure_probability_exact(a, &inst, DEFAULT_ENUMERATION_CAP)?.p_fail) };
        let values = (opts.contact_values)(&inst.model, &inst.requests, inst.deadline)?;
        let greedy = aca_allocate(&inst.helpers, &inst.catalog, &values)?;
        let mip = build_mip(&inst, DEFAULT_ENUMERATION_CAP, DEFAULT_MAX_COLUMNS)?;
        let options = BnbOptions {
            warm_start: Some(greedy.clone()),
            ..BnbOptions::default()
        };
        let res = solve_branch_and_bound(&mip, &inst, &options)?;
        worst = worst.max((res.objective - score(&res.allocation)?).abs());
        let mut rival = score(&greedy)?;
        for _ in 0..RANDOM_ALLOCATIONS {
            rival = rival.min(score(&random_allocation(&mut rng, &inst))?);
        }
        worst = worst.max(res.objective - rival);
    }
    Ok(check("optimal-vs-greedy-and-random", opts.trials, worst, 1e-9, String::new()))
}

pub fn run_verification(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut checks = vec![check_contact_values(opts)?];
    checks.extend(check_chain(opts)?);
    checks.push(check_greedy(opts)?);
    checks.push(check_monte_carlo(opts)?);
    checks.push(check_optimality(opts)?);
    Ok(VerifyReport {
        seed: opts.seed,
        trials: opts.trials,
        checks,
    })
}
