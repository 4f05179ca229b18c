//! Explicit construction of the hierarchical auxiliary chain whose walk
//! weights equal the fractions a user downloads. It is only built at desk
//! scale, as an independent check on the closed-form contact values, the
//! expected-weight objective and the stationary root mass `1 / (1 + alpha d)`.
//!
//! Layout: state 0 is the root. For every file there is a tree of depth `d`
//! whose level-`l` nodes stand for "requesting this file, attached to helper
//! `c` in slot `l`". The root enters level 1 with probability `alpha`, tree
//! edges follow the mobility matrix, level-`d` nodes return to the root, and
//! the root keeps `1 - alpha` on itself.

use std::fmt::Write as _;

use crate::allocation::DownloadSchedule;
use crate::error::{Error, Result};
use crate::model::{MobilityModel, RequestModel};

pub const DEFAULT_STATE_CAP: u128 = 100_000;

/// Residual allowed on `pi E = pi` before the construction is declared broken.
pub const STATIONARY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct AuxState {
    /// 0 for the root, otherwise the slot this node represents.
    pub level: usize,
    /// Requested file; `None` for the root.
    pub group: Option<usize>,
    /// Helper attached to in this slot; `None` for the root.
    pub helper: Option<usize>,
    pub parent: Option<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct AuxChain {
    states: Vec<AuxState>,
    phi: Vec<f64>,
    kernel: Vec<Vec<(usize, f64)>>,
    alpha: f64,
    depth: usize,
    unpruned_states: u128,
}

/// `1 + files * sum_{l=1}^{d} n^l`.
pub fn unpruned_state_count(n: usize, files: usize, d: usize) -> u128 {
    let mut level: u128 = 1;
    let mut total: u128 = 0;
    for _ in 0..d {
        level = level.saturating_mul(n as u128);
        total = total.saturating_add(level);
    }
    total.saturating_mul(files as u128).saturating_add(1)
}

impl AuxChain {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[AuxState] {
        &self.states
    }

    pub fn state(&self, idx: usize) -> &AuxState {
        &self.states[idx]
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    /// Outgoing positive-probability edges of `state`.
    pub fn transitions(&self, state: usize) -> &[(usize, f64)] {
        &self.kernel[state]
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.kernel[from]
            .iter()
            .find(|(t, _)| *t == to)
            .map_or(0.0, |(_, p)| *p)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// State count of the full hierarchy before unreachable states were removed.
    pub fn unpruned_states(&self) -> u128 {
        self.unpruned_states
    }

    /// States on the path from the root to `state`, both included.
    pub fn path(&self, state: usize) -> Vec<usize> {
        let mut path = vec![state];
        let mut cur = state;
        while let Some(p) = self.states[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Plain-text adjacency listing, one state per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (idx, s) in self.states.iter().enumerate() {
            let _ = write!(out, "{idx} level={} ", s.level);
            match (s.group, s.helper) {
                (Some(g), Some(h)) => {
                    let _ = write!(out, "file={} helper={} ", g + 1, h + 1);
                }
                _ => out.push_str("root "),
            }
            let _ = write!(out, "weight={} ->", s.weight);
            for (t, p) in &self.kernel[idx] {
                let _ = write!(out, " {t}:{p}");
            }
            out.push('\n');
        }
        out
    }
}

struct Node {
    level: usize,
    group: usize,
    helper: usize,
    parent: usize,
    // visits to `helper` among this node and its ancestors
    contact: usize,
}

/// Builds the chain for a download schedule. `alpha` must lie in `(0, 1)`.
pub fn build_aux_chain(
    model: &MobilityModel,
    requests: &RequestModel,
    d: usize,
    alpha: f64,
    schedule: &DownloadSchedule,
    cap: u128,
) -> Result<AuxChain> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    build_unchecked(model, requests, d, alpha, schedule, cap)
}

fn build_unchecked(
    model: &MobilityModel,
    requests: &RequestModel,
    d: usize,
    alpha: f64,
    schedule: &DownloadSchedule,
    cap: u128,
) -> Result<AuxChain> {
    let n = model.n();
    let files = requests.num_files();
    if d == 0 {
        return Err(Error::InvalidParameter("deadline must be at least 1".into()));
    }
    if requests.num_helpers() != n
        || (schedule.n(), schedule.num_files(), schedule.deadline()) != (n, files, d)
    {
        return Err(Error::DimensionMismatch(
            "model, requests and schedule disagree on shape".into(),
        ));
    }
    let unpruned = unpruned_state_count(n, files, d);
    if unpruned > cap {
        return Err(Error::InstanceTooLarge {
            what: "auxiliary chain",
            required: unpruned,
            cap,
            hint: "the auxiliary chain is a desk-scale oracle only",
        });
    }

    // Grow the hierarchy breadth-first, keeping only children entered with
    // positive probability; whatever is never created is unreachable from the root.
    let mut nodes: Vec<Node> = Vec::new();
    let mut kernel: Vec<Vec<(usize, f64)>> = vec![Vec::new()];
    let mut phi = vec![0.0];
    if alpha < 1.0 {
        kernel[0].push((0, 1.0 - alpha));
    }
    let mut frontier: Vec<usize> = Vec::new();
    for group in 0..files {
        for c in 0..n {
            let entry = requests.p(c, group) * model.init_prob(c);
            if entry > 0.0 {
                nodes.push(Node {
                    level: 1,
                    group,
                    helper: c,
                    parent: 0,
                    contact: 1,
                });
                let idx = nodes.len();
                kernel.push(Vec::new());
                phi.push(entry);
                kernel[0].push((idx, alpha * entry));
                frontier.push(idx);
            }
        }
    }
    while let Some(&first) = frontier.first() {
        let level = nodes[first - 1].level;
        let mut next = Vec::new();
        for &v in &frontier {
            if level == d {
                kernel[v].push((0, 1.0));
                continue;
            }
            let (group, c) = (nodes[v - 1].group, nodes[v - 1].helper);
            for e in 0..n {
                let p = model.p(c, e);
                if p == 0.0 {
                    continue;
                }
                let contact = 1 + ancestors_at(&nodes, v, e);
                nodes.push(Node {
                    level: level + 1,
                    group,
                    helper: e,
                    parent: v,
                    contact,
                });
                let idx = nodes.len();
                kernel.push(Vec::new());
                phi.push(0.0);
                kernel[v].push((idx, p));
                next.push(idx);
            }
        }
        frontier = next;
    }

    let mut states = Vec::with_capacity(nodes.len() + 1);
    states.push(AuxState {
        level: 0,
        group: None,
        helper: None,
        parent: None,
        weight: 0.0,
    });
    for node in &nodes {
        states.push(AuxState {
            level: node.level,
            group: Some(node.group),
            helper: Some(node.helper),
            parent: Some(node.parent),
            weight: schedule.get(node.helper, node.group, node.contact),
        });
    }
    Ok(AuxChain {
        states,
        phi,
        kernel,
        alpha,
        depth: d,
        unpruned_states: unpruned,
    })
}

/// Number of states on the path root..=v (excluding the root) attached to `helper`.
fn ancestors_at(nodes: &[Node], v: usize, helper: usize) -> usize {
    let mut count = 0;
    let mut cur = v;
    while cur != 0 {
        let node = &nodes[cur - 1];
        if node.helper == helper {
            count += 1;
        }
        cur = node.parent;
    }
    count
}

/// Stationary distribution from products of kernel entries along each
/// state's path from the root, normalized, then checked against `pi E = pi`.
pub fn stationary_distribution(chain: &AuxChain) -> Result<Vec<f64>> {
    let mut pi = vec![0.0; chain.len()];
    pi[0] = 1.0;
    // parents always precede children in state order
    for idx in 1..chain.len() {
        let parent = chain.states[idx].parent.expect("non-root state has a parent");
        pi[idx] = pi[parent] * chain.transition(parent, idx);
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);

    let residual = stationary_residual(chain, &pi);
    if residual > STATIONARY_TOL {
        return Err(Error::Consistency(format!(
            "path-product distribution has residual {residual:e}"
        )));
    }
    Ok(pi)
}

/// `max_u |(pi E)(u) - pi(u)|`.
pub fn stationary_residual(chain: &AuxChain, pi: &[f64]) -> f64 {
    let mut next = vec![0.0; chain.len()];
    for (from, edges) in chain.kernel.iter().enumerate() {
        for &(to, p) in edges {
            next[to] += pi[from] * p;
        }
    }
    next.iter()
        .zip(pi)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// `||phi||_pi = sqrt(sum phi(u)^2 / pi(u))`.
pub fn phi_norm(chain: &AuxChain, pi: &[f64]) -> f64 {
    chain
        .phi
        .iter()
        .zip(pi)
        .filter(|(f, _)| **f > 0.0)
        .map(|(f, p)| f * f / p)
        .sum::<f64>()
        .sqrt()
}

/// Large-deviation bound on the failure probability as a function of the
/// expected weight `mu`, for caller-supplied constants. Requires `mu d >= 1`.
pub fn bound_value(mu: f64, d: usize, c: f64, mixing_time: f64, phi_norm: f64) -> Result<f64> {
    if !(c > 0.0 && mixing_time > 0.0 && phi_norm > 0.0) {
        return Err(Error::InvalidParameter(
            "bound constants must be positive".into(),
        ));
    }
    let md = mu * d as f64;
    if !(md >= 1.0 - 1e-12) {
        return Err(Error::Domain(format!(
            "bound needs mu * d >= 1, got {md}"
        )));
    }
    let md = md.max(1.0);
    Ok(c * phi_norm * (-(md + 1.0 / md - 2.0) / (72.0 * mixing_time)).exp())
}

/// Every `d`-state walk on the chain started from `phi`, with its probability.
pub fn chain_walks(chain: &AuxChain, d: usize, cap: u128) -> Result<Vec<(Vec<usize>, f64)>> {
    let mut out = Vec::new();
    let mut path = Vec::with_capacity(d);
    fn descend(
        chain: &AuxChain,
        d: usize,
        cap: u128,
        path: &mut Vec<usize>,
        p: f64,
        out: &mut Vec<(Vec<usize>, f64)>,
    ) -> Result<()> {
        if path.len() == d {
            if out.len() as u128 >= cap {
                return Err(Error::InstanceTooLarge {
                    what: "auxiliary chain walks",
                    required: out.len() as u128 + 1,
                    cap,
                    hint: "the auxiliary chain is a desk-scale oracle only",
                });
            }
            out.push((path.clone(), p));
            return Ok(());
        }
        let last = *path.last().unwrap();
        for &(next, q) in chain.transitions(last) {
            path.push(next);
            descend(chain, d, cap, path, p * q, out)?;
            path.pop();
        }
        Ok(())
    }
    for (start, &p) in chain.phi.iter().enumerate() {
        if p > 0.0 {
            path.push(start);
            descend(chain, d, cap, &mut path, p, &mut out)?;
            path.pop();
        }
    }
    Ok(out)
}

/// Expected total weight of a `d`-state walk on the chain started from `phi`.
pub fn expected_weight_via_chain(chain: &AuxChain, d: usize, cap: u128) -> Result<f64> {
    Ok(chain_walks(chain, d, cap)?
        .iter()
        .map(|(states, p)| p * states.iter().map(|&s| chain.states[s].weight).sum::<f64>())
        .sum())
}
