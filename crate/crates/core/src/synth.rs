//! Synthetic instances: the two-helper desk instance, random chains and
//! request models for oracle checks, a grid mobility generator and a trace
//! sampler standing in for recorded contact logs.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aca::{KnapsackInstance, Material};
use crate::allocation::Allocation;
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::model::{
    uniform_request_model, Catalog, HelperSet, MobilityModel, RequestModel, TraceLog, TraceRecord,
};

/// Two helpers, uniform start, every transition 1/2.
pub fn desk1_model() -> MobilityModel {
    MobilityModel::new(vec![0.5, 0.5], vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap()
}

/// Desk instance: one file of 10 units, slot budget 5, deadline 2, and the
/// given cache capacity at both helpers.
pub fn desk1(cache: u64) -> Instance {
    Instance::new(
        desk1_model(),
        uniform_request_model(&[1.0], 2).unwrap(),
        HelperSet::uniform(2, cache, 5).unwrap(),
        Catalog::uniform(1, 10).unwrap(),
        2,
    )
    .unwrap()
}

fn random_distribution<R: Rng>(rng: &mut R, len: usize, zero_prob: f64) -> Vec<f64> {
    let mut row: Vec<f64> = (0..len)
        .map(|_| {
            if rng.gen::<f64>() < zero_prob {
                0.0
            } else {
                rng.gen_range(0.05..1.0)
            }
        })
        .collect();
    if row.iter().all(|&w| w == 0.0) {
        let keep = rng.gen_range(0..len);
        row[keep] = 1.0;
    }
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|w| *w /= total);
    row
}

/// Random chain over `n` states; each entry is zeroed with probability `zero_prob`
/// (every row keeps at least one positive entry).
pub fn random_model<R: Rng>(rng: &mut R, n: usize, zero_prob: f64) -> MobilityModel {
    let init = random_distribution(rng, n, zero_prob);
    let trans = (0..n).map(|_| random_distribution(rng, n, zero_prob)).collect();
    MobilityModel::new(init, trans).unwrap()
}

pub fn random_requests<R: Rng>(rng: &mut R, n: usize, files: usize, zero_prob: f64) -> RequestModel {
    RequestModel::new((0..n).map(|_| random_distribution(rng, files, zero_prob)).collect()).unwrap()
}

/// Bounds for [`random_instance`].
#[derive(Debug, Clone, Copy)]
pub struct RandomInstanceSpec {
    pub max_helpers: usize,
    pub max_deadline: usize,
    pub max_files: usize,
    /// Probability that a transition or request entry is zero.
    pub zero_prob: f64,
}

/// A small random instance: file sizes in `[4, 12]`, slot budgets in
/// `[2, size]`, and per-helper caches between nothing and the whole catalog.
pub fn random_instance<R: Rng>(rng: &mut R, spec: RandomInstanceSpec) -> Instance {
    let n = rng.gen_range(1..=spec.max_helpers);
    let d = rng.gen_range(1..=spec.max_deadline);
    let files = rng.gen_range(1..=spec.max_files);
    let sizes: Vec<u64> = (0..files).map(|_| rng.gen_range(4..=12)).collect();
    let total: u64 = sizes.iter().sum();
    let max_size = *sizes.iter().max().unwrap();
    let caches = (0..n).map(|_| rng.gen_range(0..=total)).collect();
    let budgets = (0..n).map(|_| rng.gen_range(2..=max_size)).collect();
    Instance::new(
        random_model(rng, n, spec.zero_prob),
        random_requests(rng, n, files, spec.zero_prob),
        HelperSet::new(caches, budgets).unwrap(),
        Catalog::new(sizes).unwrap(),
        d,
    )
    .unwrap()
}

/// A random feasible allocation: each helper walks the files in random order
/// and stores either the whole file or a random fraction of it, as room allows.
pub fn random_allocation<R: Rng>(rng: &mut R, instance: &Instance) -> Allocation {
    let mut alloc = Allocation::zeros(instance.n(), instance.num_files());
    for h in 0..instance.n() {
        let mut order: Vec<usize> = (0..instance.num_files()).collect();
        order.shuffle(rng);
        let mut room = instance.helpers.capacity(h) as f64;
        for i in order {
            let size = instance.catalog.size(i) as f64;
            let want = if rng.gen_bool(0.5) { 1.0 } else { rng.gen::<f64>() };
            let x = want.min(room / size).max(0.0);
            alloc.set(h, i, x);
            room -= x * size;
        }
    }
    alloc
}

/// A random per-helper knapsack with up to `max_files` files and `max_deadline`
/// materials per file. Values shrink with the contact count, as contact values do.
pub fn random_knapsack<R: Rng>(rng: &mut R, max_files: usize, max_deadline: usize) -> KnapsackInstance {
    let files = rng.gen_range(1..=max_files.max(1));
    let d = rng.gen_range(1..=max_deadline.max(1));
    let mut materials = Vec::new();
    let mut total = 0.0;
    for file in 0..files {
        let weight = rng.gen_range(1..=20) as f64;
        total += weight;
        let fraction_cap = (rng.gen_range(1..=25) as f64 / weight).min(1.0);
        let mut value: f64 = rng.gen_range(0.0..1.0);
        for k in 1..=d {
            materials.push(Material { file, k, value, weight, fraction_cap });
            value *= rng.gen_range(0.0..=1.0);
        }
    }
    KnapsackInstance {
        capacity: rng.gen_range(0.0..total),
        num_files: files,
        materials,
    }
}

/// Helpers laid out row-major on a grid with `ceil(sqrt(n))` columns. A user
/// stays with probability `locality` and otherwise moves to one of the grid
/// neighbours. Neighbour weights and the start distribution are perturbed by
/// `seed` so that helpers differ in popularity.
pub fn grid_mobility(n: usize, locality: f64, seed: u64) -> Result<MobilityModel> {
    if n == 0 {
        return Err(Error::InvalidParameter("grid needs at least one helper".into()));
    }
    if !(0.0..=1.0).contains(&locality) {
        return Err(Error::InvalidParameter(format!(
            "locality must lie in [0, 1], got {locality}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = (n as f64).sqrt().ceil() as usize;
    let init_w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    let init_total: f64 = init_w.iter().sum();
    let init = init_w.iter().map(|w| w / init_total).collect();

    let mut trans = vec![vec![0.0; n]; n];
    for (h, row) in trans.iter_mut().enumerate() {
        let (r, c) = (h / cols, h % cols);
        let mut neighbours = Vec::with_capacity(4);
        if r > 0 {
            neighbours.push(h - cols);
        }
        if c > 0 {
            neighbours.push(h - 1);
        }
        if c + 1 < cols && h + 1 < n {
            neighbours.push(h + 1);
        }
        if h + cols < n {
            neighbours.push(h + cols);
        }
        if neighbours.is_empty() {
            row[h] = 1.0;
            continue;
        }
        row[h] = locality;
        let weights: Vec<f64> = neighbours.iter().map(|_| rng.gen_range(0.5..1.5)).collect();
        let total: f64 = weights.iter().sum();
        for (&g, w) in neighbours.iter().zip(&weights) {
            row[g] += (1.0 - locality) * w / total;
        }
    }
    MobilityModel::new(init, trans)
}

/// Samples `users` independent walks of `slots` steps and records one contact
/// per slot, placed uniformly inside the slot.
pub fn sample_trace(
    model: &MobilityModel,
    users: usize,
    slots: usize,
    slot_duration: f64,
    seed: u64,
) -> Result<TraceLog> {
    if slots == 0 {
        return Err(Error::InvalidParameter("need at least one slot per user".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = WeightedIndex::new(model.init()).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let rows: Vec<WeightedIndex<f64>> = model
        .trans()
        .iter()
        .map(|row| WeightedIndex::new(row).map_err(|e| Error::InvalidInput(e.to_string())))
        .collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(users * slots);
    for u in 0..users {
        let mut h = start.sample(&mut rng);
        for slot in 0..slots {
            if slot > 0 {
                h = rows[h].sample(&mut rng);
            }
            let offset: f64 = rng.gen_range(0.0..slot_duration);
            records.push(TraceRecord {
                user: format!("u{u}"),
                timestamp: slot as f64 * slot_duration + offset,
                helper: h,
            });
        }
    }
    Ok(TraceLog::new(records))
}
