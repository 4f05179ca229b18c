//! Domain data: content catalog, helper stations, the user mobility chain and
//! per-helper request distributions, plus the constructors that build them from
//! Zipf-Mandelbrot parameters and contact traces.
//!
//! Helper and file indices are 0-based everywhere inside the library. The trace
//! CSV uses 1-based helper ids; conversion happens in [`read_trace_csv`] and
//! [`write_trace_csv`].

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on probability normalization. Rows within it are renormalized,
/// rows outside it are rejected.
pub const NORMALIZATION_TOL: f64 = 1e-9;

fn normalize_row(row: &mut [f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidInput(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::InvalidInput(format!(
            "{what} sums to {sum}, expected 1"
        )));
    }
    for p in row.iter_mut() {
        *p /= sum;
    }
    Ok(())
}

/// Sizes (bytes) of the files in the content collection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    file_sizes: Vec<u64>,
}

impl Catalog {
    pub fn new(file_sizes: Vec<u64>) -> Result<Self> {
        if file_sizes.is_empty() {
            return Err(Error::EmptyInput("catalog has no files".into()));
        }
        if let Some(i) = file_sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidInput(format!("file {i} has size 0")));
        }
        Ok(Self { file_sizes })
    }

    pub fn uniform(num_files: usize, size: u64) -> Result<Self> {
        Self::new(vec![size; num_files])
    }

    pub fn len(&self) -> usize {
        self.file_sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.file_sizes.is_empty()
    }

    pub fn size(&self, file: usize) -> u64 {
        self.file_sizes[file]
    }

    pub fn sizes(&self) -> &[u64] {
        &self.file_sizes
    }

    pub fn total_bytes(&self) -> u64 {
        self.file_sizes.iter().sum()
    }
}

/// Cache capacities and per-slot download budgets of the helper stations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HelperSet {
    cache_capacities: Vec<u64>,
    slot_budgets: Vec<u64>,
}

impl HelperSet {
    pub fn new(cache_capacities: Vec<u64>, slot_budgets: Vec<u64>) -> Result<Self> {
        if cache_capacities.is_empty() {
            return Err(Error::EmptyInput("helper set is empty".into()));
        }
        if cache_capacities.len() != slot_budgets.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} cache capacities but {} slot budgets",
                cache_capacities.len(),
                slot_budgets.len()
            )));
        }
        if let Some(h) = slot_budgets.iter().position(|&b| b == 0) {
            return Err(Error::InvalidInput(format!("helper {h} has a zero slot budget")));
        }
        Ok(Self {
            cache_capacities,
            slot_budgets,
        })
    }

    pub fn uniform(n: usize, cache: u64, budget: u64) -> Result<Self> {
        Self::new(vec![cache; n], vec![budget; n])
    }

    pub fn len(&self) -> usize {
        self.cache_capacities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache_capacities.is_empty()
    }

    pub fn capacity(&self, helper: usize) -> u64 {
        self.cache_capacities[helper]
    }

    pub fn budget(&self, helper: usize) -> u64 {
        self.slot_budgets[helper]
    }

    pub fn capacities(&self) -> &[u64] {
        &self.cache_capacities
    }

    pub fn budgets(&self) -> &[u64] {
        &self.slot_budgets
    }

    /// Fraction of `file` one slot at `helper` can deliver, `b_h / |O_i|`, not clamped.
    pub fn slot_fraction(&self, helper: usize, catalog: &Catalog, file: usize) -> f64 {
        self.slot_budgets[helper] as f64 / catalog.size(file) as f64
    }
}

/// Time-homogeneous discrete-time Markov chain over the helpers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityModel {
    init: Vec<f64>,
    trans: Vec<Vec<f64>>,
}

impl MobilityModel {
    pub fn new(mut init: Vec<f64>, mut trans: Vec<Vec<f64>>) -> Result<Self> {
        let n = init.len();
        if n == 0 {
            return Err(Error::EmptyInput("mobility model has no states".into()));
        }
        if trans.len() != n || trans.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch(format!(
                "transition matrix must be {n}x{n}"
            )));
        }
        normalize_row(&mut init, "initial distribution")?;
        for (h, row) in trans.iter_mut().enumerate() {
            normalize_row(row, &format!("transition row {h}"))?;
        }
        Ok(Self { init, trans })
    }

    pub fn n(&self) -> usize {
        self.init.len()
    }

    pub fn init(&self) -> &[f64] {
        &self.init
    }

    pub fn init_prob(&self, h: usize) -> f64 {
        self.init[h]
    }

    pub fn trans(&self) -> &[Vec<f64>] {
        &self.trans
    }

    pub fn p(&self, from: usize, to: usize) -> f64 {
        self.trans[from][to]
    }
}

/// Per-helper file request distributions; row `h` is `P_{i/h}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestModel {
    per_helper: Vec<Vec<f64>>,
}

impl RequestModel {
    pub fn new(mut per_helper: Vec<Vec<f64>>) -> Result<Self> {
        if per_helper.is_empty() {
            return Err(Error::EmptyInput("request model has no helpers".into()));
        }
        let files = per_helper[0].len();
        if files == 0 || per_helper.iter().any(|r| r.len() != files) {
            return Err(Error::DimensionMismatch(
                "request rows must share a non-zero file count".into(),
            ));
        }
        for (h, row) in per_helper.iter_mut().enumerate() {
            normalize_row(row, &format!("request row {h}"))?;
        }
        Ok(Self { per_helper })
    }

    pub fn num_helpers(&self) -> usize {
        self.per_helper.len()
    }

    pub fn num_files(&self) -> usize {
        self.per_helper[0].len()
    }

    /// `P_{file/helper}`.
    pub fn p(&self, helper: usize, file: usize) -> f64 {
        self.per_helper[helper][file]
    }

    pub fn row(&self, helper: usize) -> &[f64] {
        &self.per_helper[helper]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.per_helper
    }
}

/// Zipf-Mandelbrot popularity: the file of 1-based rank `r` gets weight
/// `1 / (r + shift)^shape`, normalized to sum 1.
pub fn build_zipf_mandelbrot(num_files: usize, shape: f64, shift: f64) -> Result<Vec<f64>> {
    if num_files == 0 {
        return Err(Error::InvalidParameter("num_files must be at least 1".into()));
    }
    if !(shape > 0.0) || !shape.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "zipf shape must be positive, got {shape}"
        )));
    }
    if !(shift >= 0.0) || !shift.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "zipf shift must be non-negative, got {shift}"
        )));
    }
    let weights: Vec<f64> = (1..=num_files)
        .map(|rank| (rank as f64 + shift).powf(-shape))
        .collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Replicates one popularity vector for every helper.
pub fn uniform_request_model(popularity: &[f64], n: usize) -> Result<RequestModel> {
    RequestModel::new(vec![popularity.to_vec(); n])
}

/// One contact event: `user` was attached to `helper` at `timestamp` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub user: String,
    pub timestamp: f64,
    pub helper: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceLog {
    pub records: Vec<TraceRecord>,
}

impl TraceLog {
    pub fn new(records: Vec<TraceRecord>) -> Self {
        Self { records }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records grouped per user, each group sorted by timestamp (stable).
    pub fn per_user(&self) -> BTreeMap<&str, Vec<&TraceRecord>> {
        let mut users: BTreeMap<&str, Vec<&TraceRecord>> = BTreeMap::new();
        for rec in &self.records {
            users.entry(rec.user.as_str()).or_default().push(rec);
        }
        for events in users.values_mut() {
            events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        }
        users
    }
}

/// Estimates `(P_init, M)` from contact events bucketed into slots of
/// `slot_duration` seconds.
///
/// The first event of a user fixes its start helper. Every later event at a
/// helper different from the current one counts one transition. A slot after
/// the first in which no new helper was met counts one self-transition at the
/// current helper. Helpers whose row stays empty become absorbing self-loops.
pub fn estimate_from_trace(trace: &TraceLog, slot_duration: f64, n: usize) -> Result<MobilityModel> {
    if trace.is_empty() {
        return Err(Error::EmptyInput("trace has no records".into()));
    }
    if !(slot_duration > 0.0) || !slot_duration.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "slot duration must be positive, got {slot_duration}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if let Some(bad) = trace.records.iter().find(|r| r.helper >= n) {
        return Err(Error::InvalidInput(format!(
            "record for user {} references helper {} but n = {n}",
            bad.user,
            bad.helper + 1
        )));
    }
    if let Some(bad) = trace.records.iter().find(|r| !r.timestamp.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "record for user {} has a non-finite timestamp",
            bad.user
        )));
    }

    let mut starts = vec![0u64; n];
    let mut counts = vec![vec![0u64; n]; n];

    for events in trace.per_user().values() {
        let slot_of = |t: f64| (t / slot_duration).floor() as i64;
        let mut current = events[0].helper;
        starts[current] += 1;
        let first_slot = slot_of(events[0].timestamp);
        let last_slot = slot_of(events[events.len() - 1].timestamp);

        let mut idx = 1;
        for slot in first_slot..=last_slot {
            let mut moved = false;
            while idx < events.len() && slot_of(events[idx].timestamp) == slot {
                let h = events[idx].helper;
                if h != current {
                    counts[current][h] += 1;
                    current = h;
                    moved = true;
                }
                idx += 1;
            }
            if slot != first_slot && !moved {
                counts[current][current] += 1;
            }
        }
    }

    let users: u64 = starts.iter().sum();
    let init: Vec<f64> = starts.iter().map(|&c| c as f64 / users as f64).collect();
    let trans: Vec<Vec<f64>> = counts
        .iter()
        .enumerate()
        .map(|(h, row)| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                let mut self_loop = vec![0.0; n];
                self_loop[h] = 1.0;
                self_loop
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect();
    MobilityModel::new(init, trans)
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceCsvRow {
    user_id: String,
    timestamp_s: f64,
    helper_id: usize,
}

/// Reads a `user_id,timestamp_s,helper_id` CSV with 1-based helper ids.
pub fn read_trace_csv<R: Read>(reader: R) -> Result<TraceLog> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["user_id", "timestamp_s", "helper_id"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(Error::InvalidInput(format!(
            "trace header must be `user_id,timestamp_s,helper_id`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut records = Vec::new();
    for row in rdr.deserialize::<TraceCsvRow>() {
        let row = row?;
        if row.helper_id == 0 {
            return Err(Error::InvalidInput(format!(
                "user {}: helper ids are 1-based, got 0",
                row.user_id
            )));
        }
        records.push(TraceRecord {
            user: row.user_id,
            timestamp: row.timestamp_s,
            helper: row.helper_id - 1,
        });
    }
    Ok(TraceLog::new(records))
}

pub fn write_trace_csv<W: Write>(trace: &TraceLog, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for rec in &trace.records {
        wtr.serialize(TraceCsvRow {
            user_id: rec.user.clone(),
            timestamp_s: rec.timestamp,
            helper_id: rec.helper + 1,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

/// On-disk form of a mobility model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub n: usize,
    pub init: Vec<f64>,
    pub trans: Vec<Vec<f64>>,
    pub slot_duration_s: f64,
}

impl ModelArtifact {
    pub fn from_model(model: &MobilityModel, slot_duration_s: f64) -> Self {
        Self {
            n: model.n(),
            init: model.init().to_vec(),
            trans: model.trans().to_vec(),
            slot_duration_s,
        }
    }

    pub fn to_model(&self) -> Result<MobilityModel> {
        if self.init.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "model artifact declares n = {} but init has {} entries",
                self.n,
                self.init.len()
            )));
        }
        MobilityModel::new(self.init.clone(), self.trans.clone())
    }
}
