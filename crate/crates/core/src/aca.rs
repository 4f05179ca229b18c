//! Approximation path: the expected downloaded fraction of an allocation, the
//! per-helper restricted fractional knapsack solved greedily, an LP
//! cross-check of that greedy, and the uncoded most-popular baseline.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::allocation::{Allocation, DownloadSchedule};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::lp::{solve_lp, LpProblem, LpStatus, Sense};
use crate::model::{Catalog, HelperSet, RequestModel};
use crate::walks::{contact_value_table, ContactValueTable};

/// `sum_{h,i,k} values[h,i,k] * u[h,i,k]`: the expected total fraction a user
/// downloads within the deadline.
pub fn expected_weight(schedule: &DownloadSchedule, values: &ContactValueTable) -> Result<f64> {
    if (schedule.n(), schedule.num_files(), schedule.deadline())
        != (values.n(), values.num_files(), values.deadline())
    {
        return Err(Error::DimensionMismatch(
            "schedule and contact table shapes differ".into(),
        ));
    }
    let mut total = 0.0;
    for h in 0..schedule.n() {
        for i in 0..schedule.num_files() {
            for k in 1..=schedule.deadline() {
                total += values.get(h, i, k) * schedule.get(h, i, k);
            }
        }
    }
    Ok(total)
}

/// One knapsack item: the `k`-th contact's share of file `file`.
#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub file: usize,
    pub k: usize,
    pub value: f64,
    /// Bytes taken by the whole material, `|O_i|`.
    pub weight: f64,
    /// At most this fraction may be placed, `min(b_h / |O_i|, 1)`.
    pub fraction_cap: f64,
}

/// Per-helper subproblem. Fractions of one file's materials sum to at most 1.
#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackInstance {
    pub capacity: f64,
    pub num_files: usize,
    pub materials: Vec<Material>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackSolution {
    /// Placed fraction per material, aligned with `materials`.
    pub fractions: Vec<f64>,
    pub objective: f64,
}

impl KnapsackInstance {
    /// Materials for `helper`: one per `(file, k)` with `k = 1..=d`.
    pub fn for_helper(helper: usize, helpers: &HelperSet, catalog: &Catalog, values: &ContactValueTable) -> Self {
        let mut materials = Vec::with_capacity(catalog.len() * values.deadline());
        for file in 0..catalog.len() {
            let weight = catalog.size(file) as f64;
            let fraction_cap = helpers.slot_fraction(helper, catalog, file).min(1.0);
            for k in 1..=values.deadline() {
                materials.push(Material {
                    file,
                    k,
                    value: values.get(helper, file, k),
                    weight,
                    fraction_cap,
                });
            }
        }
        Self {
            capacity: helpers.capacity(helper) as f64,
            num_files: catalog.len(),
            materials,
        }
    }

    pub fn objective(&self, fractions: &[f64]) -> f64 {
        self.materials.iter().zip(fractions).map(|(m, f)| m.value * f).sum()
    }

    fn validate(&self) -> Result<()> {
        for m in &self.materials {
            if m.file >= self.num_files
                || !(m.value >= 0.0)
                || !(m.weight > 0.0)
                || !(m.fraction_cap > 0.0 && m.fraction_cap <= 1.0)
            {
                return Err(Error::InvalidInput(format!(
                    "malformed knapsack material {m:?}"
                )));
            }
        }
        if !(self.capacity >= 0.0) {
            return Err(Error::InvalidInput("negative knapsack capacity".into()));
        }
        Ok(())
    }
}

/// Value-density greedy. Ties go to the lower contact count, then the lower
/// file index. Zero-value materials are never placed.
pub fn greedy_knapsack(instance: &KnapsackInstance) -> KnapsackSolution {
    let mut order: Vec<usize> = (0..instance.materials.len()).collect();
    order.sort_by(|&a, &b| {
        let (ma, mb) = (&instance.materials[a], &instance.materials[b]);
        (mb.value / mb.weight)
            .partial_cmp(&(ma.value / ma.weight))
            .unwrap_or(Ordering::Equal)
            .then(ma.k.cmp(&mb.k))
            .then(ma.file.cmp(&mb.file))
    });

    let mut fractions = vec![0.0; instance.materials.len()];
    let mut file_used = vec![0.0; instance.num_files];
    let mut room = instance.capacity;
    for idx in order {
        if room <= 0.0 {
            break;
        }
        let m = &instance.materials[idx];
        if m.value <= 0.0 {
            continue;
        }
        let take = m
            .fraction_cap
            .min(1.0 - file_used[m.file])
            .min(room / m.weight)
            .max(0.0);
        fractions[idx] = take;
        file_used[m.file] += take;
        room -= take * m.weight;
    }
    let objective = instance.objective(&fractions);
    KnapsackSolution { fractions, objective }
}

/// Optimal value of the per-helper subproblem solved as an explicit LP.
pub fn knapsack_lp_oracle(instance: &KnapsackInstance) -> Result<f64> {
    instance.validate()?;
    if instance.materials.is_empty() {
        return Ok(0.0);
    }
    let q = instance.materials.len();
    let mut lp = LpProblem::new(q);
    for (j, m) in instance.materials.iter().enumerate() {
        lp.objective[j] = -m.value;
        lp.set_bounds(j, 0.0, m.fraction_cap);
    }
    for file in 0..instance.num_files {
        let coeffs: Vec<(usize, f64)> = instance
            .materials
            .iter()
            .enumerate()
            .filter(|(_, m)| m.file == file)
            .map(|(j, _)| (j, 1.0))
            .collect();
        if !coeffs.is_empty() {
            lp.add_constraint(coeffs, Sense::Le, 1.0);
        }
    }
    let bytes = instance.materials.iter().enumerate().map(|(j, m)| (j, m.weight)).collect();
    lp.add_constraint(bytes, Sense::Le, instance.capacity);
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(-sol.objective_value),
        status => Err(Error::Lp(status)),
    }
}

/// Greedy allocation computed independently at every helper.
pub fn aca_allocate(helpers: &HelperSet, catalog: &Catalog, values: &ContactValueTable) -> Result<Allocation> {
    if values.n() != helpers.len() || values.num_files() != catalog.len() {
        return Err(Error::DimensionMismatch(
            "contact table does not match helpers and catalog".into(),
        ));
    }
    let rows: Vec<Vec<f64>> = (0..helpers.len())
        .into_par_iter()
        .map(|h| {
            let ks = KnapsackInstance::for_helper(h, helpers, catalog, values);
            let sol = greedy_knapsack(&ks);
            let mut row = vec![0.0; catalog.len()];
            for (m, f) in ks.materials.iter().zip(&sol.fractions) {
                row[m.file] += f;
            }
            row.iter_mut().for_each(|x| *x = x.min(1.0));
            row
        })
        .collect();
    Allocation::new(rows)
}

/// [`aca_allocate`] with the contact table computed from the instance.
pub fn aca(instance: &Instance) -> Result<Allocation> {
    let values = contact_value_table(&instance.model, &instance.requests, instance.deadline)?;
    aca_allocate(&instance.helpers, &instance.catalog, &values)
}

/// Uncoded baseline: each helper stores whole files in decreasing order of its
/// local popularity (ties to the lower index) until the next one does not fit.
pub fn hua_allocate(helpers: &HelperSet, catalog: &Catalog, requests: &RequestModel) -> Result<Allocation> {
    if requests.num_helpers() != helpers.len() || requests.num_files() != catalog.len() {
        return Err(Error::DimensionMismatch(
            "request model does not match helpers and catalog".into(),
        ));
    }
    let mut alloc = Allocation::zeros(helpers.len(), catalog.len());
    for h in 0..helpers.len() {
        let mut order: Vec<usize> = (0..catalog.len()).collect();
        order.sort_by(|&a, &b| requests.p(h, b).total_cmp(&requests.p(h, a)).then(a.cmp(&b)));
        let mut room = helpers.capacity(h);
        for file in order {
            let size = catalog.size(file);
            if size > room {
                break;
            }
            alloc.set(h, file, 1.0);
            room -= size;
        }
    }
    Ok(alloc)
}

pub fn hua(instance: &Instance) -> Result<Allocation> {
    hua_allocate(&instance.helpers, &instance.catalog, &instance.requests)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::{check_feasible, download_schedule};
    use crate::model::uniform_request_model;
    use crate::synth::{desk1, random_instance, random_knapsack, RandomInstanceSpec};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn desk1_values() -> ContactValueTable {
        let inst = desk1(10);
        contact_value_table(&inst.model, &inst.requests, 2).unwrap()
    }

    #[test]
    fn expected_weight_desk1() {
        let inst = desk1(10);
        let values = desk1_values();
        let half = Allocation::new(vec![vec![0.5], vec![0.5]]).unwrap();
        let s = download_schedule(&half, &inst.helpers, &inst.catalog, 2).unwrap();
        assert!((expected_weight(&s, &values).unwrap() - 0.75).abs() < 1e-15);
        let full = Allocation::new(vec![vec![1.0], vec![1.0]]).unwrap();
        let s = download_schedule(&full, &inst.helpers, &inst.catalog, 2).unwrap();
        assert!((expected_weight(&s, &values).unwrap() - 1.0).abs() < 1e-15);
        let zero = DownloadSchedule::zeros(2, 1, 2);
        assert_eq!(expected_weight(&zero, &values).unwrap(), 0.0);
    }

    #[test]
    fn greedy_desk1() {
        let values = desk1_values();
        let inst = desk1(10);
        let ks = KnapsackInstance::for_helper(0, &inst.helpers, &inst.catalog, &values);
        assert_eq!(ks.materials.len(), 2);
        assert_eq!(ks.materials[0].fraction_cap, 0.5);
        let sol = greedy_knapsack(&ks);
        assert_eq!(sol.fractions, vec![0.5, 0.5]);
        assert!((sol.objective - 0.5).abs() < 1e-15);
        assert!((knapsack_lp_oracle(&ks).unwrap() - 0.5).abs() < 1e-12);
        let alloc = aca_allocate(&inst.helpers, &inst.catalog, &values).unwrap();
        assert_eq!(alloc.rows(), &[vec![1.0], vec![1.0]]);

        let small = desk1(5);
        let alloc = aca_allocate(&small.helpers, &small.catalog, &values).unwrap();
        assert_eq!(alloc.rows(), &[vec![0.5], vec![0.5]]);

        let empty = desk1(0);
        let alloc = aca_allocate(&empty.helpers, &empty.catalog, &values).unwrap();
        assert_eq!(alloc.rows(), &[vec![0.0], vec![0.0]]);
    }

    #[test]
    fn lp_oracle_without_materials() {
        let ks = KnapsackInstance {
            capacity: 10.0,
            num_files: 0,
            materials: vec![],
        };
        assert_eq!(knapsack_lp_oracle(&ks).unwrap(), 0.0);
    }

    #[test]
    fn hua_examples() {
        let catalog = Catalog::uniform(2, 10).unwrap();
        let requests = uniform_request_model(&[0.7, 0.3], 1).unwrap();
        let run = |cache| {
            let helpers = HelperSet::uniform(1, cache, 5).unwrap();
            hua_allocate(&helpers, &catalog, &requests).unwrap().rows()[0].clone()
        };
        assert_eq!(run(10), vec![1.0, 0.0]);
        assert_eq!(run(25), vec![1.0, 1.0]);
        assert_eq!(run(9), vec![0.0, 0.0]);
        let inst = desk1(10);
        assert_eq!(hua(&inst).unwrap().rows(), &[vec![1.0], vec![1.0]]);
    }

    #[test]
    fn hua_uses_local_popularity() {
        let catalog = Catalog::uniform(2, 10).unwrap();
        let requests = RequestModel::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let helpers = HelperSet::uniform(2, 10, 5).unwrap();
        let alloc = hua_allocate(&helpers, &catalog, &requests).unwrap();
        assert_eq!(alloc.rows(), &[vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn greedy_matches_lp_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let ks = random_knapsack(&mut rng, 6, 4);
            let greedy = greedy_knapsack(&ks).objective;
            let lp = knapsack_lp_oracle(&ks).unwrap();
            assert!((greedy - lp).abs() <= 1e-9, "{greedy} vs {lp}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn aca_is_feasible_and_helper_local(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = random_instance(&mut rng, RandomInstanceSpec { max_helpers: 4, max_deadline: 3, max_files: 4, zero_prob: 0.2 });
            let values = contact_value_table(&inst.model, &inst.requests, inst.deadline).unwrap();
            let alloc = aca_allocate(&inst.helpers, &inst.catalog, &values).unwrap();
            prop_assert!(check_feasible(&alloc, &inst.helpers, &inst.catalog).unwrap().feasible);

            // each row depends only on that helper's data
            for h in 0..inst.n() {
                let ks = KnapsackInstance::for_helper(h, &inst.helpers, &inst.catalog, &values);
                let sol = greedy_knapsack(&ks);
                let mut row = vec![0.0; inst.num_files()];
                for (m, f) in ks.materials.iter().zip(&sol.fractions) {
                    row[m.file] += f;
                }
                for (a, b) in row.iter().zip(alloc.row(h)) {
                    prop_assert!((a.min(1.0) - b).abs() < 1e-15);
                }
            }
        }
    }
}
