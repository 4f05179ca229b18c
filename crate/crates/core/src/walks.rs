//! Random-walk mathematics over the mobility chain: walk probabilities,
//! exhaustive enumeration, first-passage probabilities and the contact-count
//! value table that drives the greedy allocation.

use crate::error::{Error, Result};
use crate::model::{MobilityModel, RequestModel};

/// Default limit on `n^d` for anything that enumerates walks exhaustively.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

/// A `d`-step sequence of helper indices visited by one user.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Walk(pub Vec<usize>);

impl Walk {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn steps(&self) -> &[usize] {
        &self.0
    }

    /// How many times `helper` appears in the walk.
    pub fn multiplicity(&self, helper: usize) -> usize {
        self.0.iter().filter(|&&h| h == helper).count()
    }
}

/// Distinct helpers of a walk with their visit counts, in first-visit order.
pub fn visit_counts(steps: &[usize]) -> Vec<(usize, usize)> {
    let mut counts: Vec<(usize, usize)> = Vec::with_capacity(steps.len());
    for &h in steps {
        match counts.iter_mut().find(|(g, _)| *g == h) {
            Some((_, c)) => *c += 1,
            None => counts.push((h, 1)),
        }
    }
    counts
}

/// `P_init(V_1) * prod_t M[V_t][V_{t+1}]`.
pub fn walk_probability(model: &MobilityModel, walk: &[usize]) -> f64 {
    let Some(&first) = walk.first() else {
        return 0.0;
    };
    walk.windows(2)
        .fold(model.init_prob(first), |p, w| p * model.p(w[0], w[1]))
}

/// Fails with [`Error::InstanceTooLarge`] when `n^d` exceeds `cap`.
pub fn check_enumeration_cap(n: usize, d: usize, cap: u128) -> Result<()> {
    let mut total: u128 = 1;
    for _ in 0..d {
        total = total.saturating_mul(n as u128);
    }
    if total > cap {
        return Err(Error::InstanceTooLarge {
            what: "walk enumeration",
            required: total,
            cap,
            hint: "use the Monte Carlo evaluator or the approximation algorithm",
        });
    }
    Ok(())
}

/// Visits every walk of length `d` with non-zero probability, in
/// lexicographic order, passing the steps and the walk probability.
pub fn for_each_walk<F>(model: &MobilityModel, d: usize, cap: u128, mut visit: F) -> Result<()>
where
    F: FnMut(&[usize], f64),
{
    if d == 0 {
        return Err(Error::InvalidParameter("walk length must be at least 1".into()));
    }
    check_enumeration_cap(model.n(), d, cap)?;
    let n = model.n();
    let mut steps = Vec::with_capacity(d);
    // prob[t] is the probability of the prefix steps[..=t]
    let mut prob = Vec::with_capacity(d);

    fn descend<F: FnMut(&[usize], f64)>(
        model: &MobilityModel,
        n: usize,
        d: usize,
        steps: &mut Vec<usize>,
        prob: &mut Vec<f64>,
        visit: &mut F,
    ) {
        if steps.len() == d {
            visit(steps, *prob.last().unwrap());
            return;
        }
        for h in 0..n {
            let p = match steps.last() {
                None => model.init_prob(h),
                Some(&prev) => prob.last().unwrap() * model.p(prev, h),
            };
            if p == 0.0 {
                continue;
            }
            steps.push(h);
            prob.push(p);
            descend(model, n, d, steps, prob, visit);
            steps.pop();
            prob.pop();
        }
    }

    descend(model, n, d, &mut steps, &mut prob, &mut visit);
    Ok(())
}

/// All walks of length `d` with non-zero probability, lexicographically ordered.
pub fn enumerate_walks(model: &MobilityModel, d: usize, cap: u128) -> Result<Vec<(Walk, f64)>> {
    let mut out = Vec::new();
    for_each_walk(model, d, cap, |steps, p| out.push((Walk(steps.to_vec()), p)))?;
    Ok(out)
}

/// First-passage probabilities `r_{i,j}(l)`: starting at `i`, the chain
/// reaches `j` for the first time after exactly `l` transitions.
#[derive(Debug, Clone)]
pub struct FirstPassage {
    n: usize,
    // table[l - 1][i * n + j]
    table: Vec<Vec<f64>>,
}

impl FirstPassage {
    /// Tabulates `r` for `l = 1..=max_len`.
    ///
    /// Uses the first-step decomposition `r_{i,j}(l) = sum_{k != j} M[i][k] r_{k,j}(l-1)`
    /// with `r_{i,j}(1) = M[i][j]`.
    pub fn new(model: &MobilityModel, max_len: usize) -> Self {
        let n = model.n();
        let mut table: Vec<Vec<f64>> = Vec::with_capacity(max_len);
        if max_len > 0 {
            let mut first = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    first[i * n + j] = model.p(i, j);
                }
            }
            table.push(first);
        }
        for _ in 1..max_len {
            let prev = table.last().unwrap();
            let mut next = vec![0.0; n * n];
            for i in 0..n {
                for k in 0..n {
                    let m_ik = model.p(i, k);
                    if m_ik == 0.0 {
                        continue;
                    }
                    let row = &prev[k * n..(k + 1) * n];
                    for j in 0..n {
                        if j != k {
                            next[i * n + j] += m_ik * row[j];
                        }
                    }
                }
            }
            table.push(next);
        }
        Self { n, table }
    }

    pub fn max_len(&self) -> usize {
        self.table.len()
    }

    /// `r_{from,to}(len)`; zero for `len == 0` or beyond the tabulated range.
    pub fn get(&self, from: usize, to: usize, len: usize) -> f64 {
        if len == 0 || len > self.table.len() {
            return 0.0;
        }
        self.table[len - 1][from * self.n + to]
    }
}

/// Convenience wrapper around [`FirstPassage`] for a single entry.
pub fn first_passage(model: &MobilityModel, from: usize, to: usize, len: usize) -> f64 {
    FirstPassage::new(model, len).get(from, to, len)
}

/// Probability that a helper is contacted at least `k` times within the
/// deadline while a given file is requested, for every `(helper, file, k)`.
///
/// These are the material values of the per-helper knapsack. Entries with
/// `k > d` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactValueTable {
    n: usize,
    files: usize,
    d: usize,
    values: Vec<f64>,
}

impl ContactValueTable {
    pub fn zeros(n: usize, files: usize, d: usize) -> Self {
        Self {
            n,
            files,
            d,
            values: vec![0.0; n * files * d],
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

    /// Value for the `k`-th contact (1-based).
    pub fn get(&self, helper: usize, file: usize, k: usize) -> f64 {
        assert!(k >= 1, "contact counts are 1-based");
        if k > self.d {
            return 0.0;
        }
        self.values[self.idx(helper, file, k)]
    }

    pub fn set(&mut self, helper: usize, file: usize, k: usize, value: f64) {
        let idx = self.idx(helper, file, k);
        self.values[idx] = value;
    }

    fn add(&mut self, helper: usize, file: usize, k: usize, value: f64) {
        let idx = self.idx(helper, file, k);
        self.values[idx] += value;
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(
            (self.n, self.files, self.d),
            (other.n, other.files, other.d),
            "table shapes differ"
        );
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_dims(model: &MobilityModel, requests: &RequestModel, d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidParameter("deadline must be at least 1".into()));
    }
    if requests.num_helpers() != model.n() {
        return Err(Error::DimensionMismatch(format!(
            "request model has {} helpers, mobility model {}",
            requests.num_helpers(),
            model.n()
        )));
    }
    Ok(())
}

/// Convolves `dist` (indexed by elapsed slots, `0..=horizon`) with the return
/// time distribution, truncating at `horizon`.
fn convolve_returns(dist: &[f64], returns: &[f64]) -> Vec<f64> {
    let horizon = dist.len() - 1;
    let mut out = vec![0.0; dist.len()];
    for (s, &p) in dist.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for l in 1..=horizon - s {
            out[s + l] += p * returns[l];
        }
    }
    out
}

/// Contact values from first-passage sums over integer compositions of the
/// remaining `d - 1` slots.
///
/// A user starting at `h` contacts `h` at least `k` times when its `(k-1)`-th
/// return happens within `d - 1` slots; a user starting at `h' != h` needs a
/// first passage into `h` followed by `k - 1` returns.
pub fn contact_value_table(
    model: &MobilityModel,
    requests: &RequestModel,
    d: usize,
) -> Result<ContactValueTable> {
    check_dims(model, requests, d)?;
    let n = model.n();
    let files = requests.num_files();
    let horizon = d - 1;
    let fp = FirstPassage::new(model, horizon);
    let mut table = ContactValueTable::zeros(n, files, d);

    // reach[h'][k-1]: P(contact h at least k times | start at h')
    let mut reach = vec![vec![0.0; d]; n];
    for h in 0..n {
        let returns: Vec<f64> = (0..=horizon).map(|l| fp.get(h, h, l)).collect();
        for (start, reach_start) in reach.iter_mut().enumerate() {
            // dist[s] = P(k-th contact of h happens s slots after the start)
            let mut dist = vec![0.0; horizon + 1];
            if start == h {
                dist[0] = 1.0;
            } else {
                for (s, slot) in dist.iter_mut().enumerate().skip(1) {
                    *slot = fp.get(start, h, s);
                }
            }
            for k in 1..=d {
                if k > 1 {
                    dist = convolve_returns(&dist, &returns);
                }
                reach_start[k - 1] = dist.iter().sum();
            }
        }
        for (start, reach_start) in reach.iter().enumerate() {
            let p_start = model.init_prob(start);
            if p_start == 0.0 {
                continue;
            }
            for file in 0..files {
                let weight = p_start * requests.p(start, file);
                if weight == 0.0 {
                    continue;
                }
                for k in 1..=d {
                    table.add(h, file, k, weight * reach_start[k - 1]);
                }
            }
        }
    }
    Ok(table)
}

/// Brute-force contact values: sums `P(v) * P_{i/V_1}` over every walk that
/// visits `h` at least `k` times.
pub fn contact_value_oracle(
    model: &MobilityModel,
    requests: &RequestModel,
    d: usize,
    cap: u128,
) -> Result<ContactValueTable> {
    check_dims(model, requests, d)?;
    let files = requests.num_files();
    let mut table = ContactValueTable::zeros(model.n(), files, d);
    for_each_walk(model, d, cap, |steps, p| {
        let start = steps[0];
        for (h, count) in visit_counts(steps) {
            for file in 0..files {
                let w = p * requests.p(start, file);
                for k in 1..=count {
                    table.add(h, file, k, w);
                }
            }
        }
    })?;
    Ok(table)
}
