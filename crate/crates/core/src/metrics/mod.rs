//! Retrieval metrics over consolidated ranks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of one probe.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub probe_id: String,
    pub identity: String,
    pub role: String,
    /// Identity chosen by the view vote.
    pub predicted: String,
    /// Consolidated rank, at least 1.
    pub r: usize,
    /// Rank of the true identity in every view.
    pub ranks: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityAccuracy {
    pub probes: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub probes: usize,
    pub map: f64,
    /// CMC@k for every configured k.
    pub cmc: BTreeMap<usize, f64>,
    pub micro: f64,
    pub macro_accuracy: f64,
    pub per_identity: BTreeMap<String, IdentityAccuracy>,
    /// Per-role accuracy of the predicted identity's role, when roles are
    /// known for every predicted identity.
    pub roles: Option<BTreeMap<String, IdentityAccuracy>>,
    /// Fraction of probes whose predicted identity has the true role.
    pub role_accuracy: Option<f64>,
}

/// Correctly rounded sum of `values` (Shewchuk's algorithm), independent of
/// their order.
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    let Some(mut n) = partials.len().checked_sub(1) else {
        return 0.0;
    };
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    // Round half-way cases the way a single exact addition would.
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

fn accuracy(probes: usize, correct: usize) -> IdentityAccuracy {
    IdentityAccuracy {
        probes,
        correct,
        accuracy: correct as f64 / probes as f64,
    }
}

/// Computes the report; role figures are filled in when `roles` maps every
/// predicted identity.
pub fn evaluate(
    records: &[EvalRecord],
    k_set: &[usize],
    roles: Option<&BTreeMap<String, String>>,
) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    if let Some(bad) = records.iter().find(|r| r.r == 0) {
        return Err(Error::InvalidArgument(format!("probe `{}` has rank 0", bad.probe_id)));
    }
    let n = records.len() as f64;
    let map = exact_sum(records.iter().map(|r| 1.0 / r.r as f64)) / n;
    let cmc = k_set
        .iter()
        .map(|&k| (k, records.iter().filter(|r| r.r <= k).count() as f64 / n))
        .collect();
    let correct = records.iter().filter(|r| r.r == 1).count();

    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = tally.entry(r.identity.clone()).or_default();
        e.0 += 1;
        e.1 += (r.r == 1) as usize;
    }
    let per_identity: BTreeMap<String, IdentityAccuracy> =
        tally.into_iter().map(|(id, (p, c))| (id, accuracy(p, c))).collect();
    let macro_accuracy = exact_sum(per_identity.values().map(|a| a.accuracy)) / per_identity.len() as f64;

    let (role_table, role_overall) = match roles {
        Some(map) => match role_accuracy(records, map) {
            Ok(table) => {
                let hits: usize = table.values().map(|a| a.correct).sum();
                (Some(table), Some(hits as f64 / n))
            }
            Err(Error::MissingRoleMapping(_)) => (None, None),
            Err(e) => return Err(e),
        },
        None => (None, None),
    };
    Ok(MetricsReport {
        probes: records.len(),
        map,
        cmc,
        micro: correct as f64 / n,
        macro_accuracy,
        per_identity,
        roles: role_table,
        role_accuracy: role_overall,
    })
}

/// Per true role, the fraction of probes whose predicted identity carries
/// the same role.
pub fn role_accuracy(
    records: &[EvalRecord],
    identity_to_role: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, IdentityAccuracy>> {
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in records {
        let predicted = identity_to_role
            .get(&r.predicted)
            .ok_or_else(|| Error::MissingRoleMapping(r.predicted.clone()))?;
        let e = tally.entry(r.role.clone()).or_default();
        e.0 += 1;
        e.1 += (predicted == &r.role) as usize;
    }
    Ok(tally.into_iter().map(|(role, (p, c))| (role, accuracy(p, c))).collect())
}

impl MetricsReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "probes          {}", self.probes);
        let _ = writeln!(s, "mAP             {:.4}", self.map);
        for (k, v) in &self.cmc {
            let _ = writeln!(s, "CMC@{k:<11} {v:.4}");
        }
        let _ = writeln!(s, "micro accuracy  {:.4}", self.micro);
        let _ = writeln!(s, "macro accuracy  {:.4}", self.macro_accuracy);
        if let Some(r) = self.role_accuracy {
            let _ = writeln!(s, "role accuracy   {r:.4}");
        }
        let _ = writeln!(s, "\nidentity        probes  correct  accuracy");
        for (id, a) in &self.per_identity {
            let _ = writeln!(s, "{id:<15} {:>6}  {:>7}  {:>8.4}", a.probes, a.correct, a.accuracy);
        }
        s
    }

    pub fn per_identity_csv(&self) -> String {
        let mut s = String::from("identity,probes,correct,accuracy\n");
        for (id, a) in &self.per_identity {
            let _ = writeln!(s, "{id},{},{},{}", a.probes, a.correct, a.accuracy);
        }
        s
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(self).map_err(|e| Error::json(path, e))?;
        json.push(b'\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

/// Per-probe CSV: probe id, true identity, role, prediction, view ranks
/// separated by `;`, and r.
pub fn records_csv(records: &[EvalRecord]) -> String {
    let mut s = String::from("probe_id,identity,role,predicted,view_ranks,r\n");
    for r in records {
        let ranks: Vec<String> = r.ranks.iter().map(usize::to_string).collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.probe_id,
            r.identity,
            r.role,
            r.predicted,
            ranks.join(";"),
            r.r
        );
    }
    s
}
