use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::{fast_p_curve, FastPCurve, MetricsError};
use crate::trace::{Dataset, EvalStatus, EvaluationRecord};

/// One evaluation with the identifiers the leaderboard groups by.
#[derive(Debug, Clone, Copy)]
pub struct EvalEntry<'a> {
    pub author: &'a str,
    pub definition: &'a str,
    pub solution: &'a str,
    pub record: &'a EvaluationRecord,
}

/// Every evaluation in `ds` whose solution resolves.
pub fn entries_from_dataset(ds: &Dataset) -> Vec<EvalEntry<'_>> {
    ds.evaluations()
        .filter_map(|t| {
            let s = ds.resolve_solution(t)?;
            Some(EvalEntry {
                author: &s.author,
                definition: t.definition.name(),
                solution: &s.name,
                record: t.evaluation.as_ref()?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaderboardRow {
    pub author: String,
    pub definition: String,
    pub solutions: usize,
    pub evaluations: usize,
    pub correctness_rate: f64,
    /// Pointwise mean of the per-solution curves.
    pub curve: FastPCurve,
}

impl LeaderboardRow {
    pub fn auc(&self) -> f64 {
        self.curve.auc
    }
}

/// Rows per (author, definition), averaging curves across that author's
/// solutions; sorted by area, then correctness, then author and definition.
pub fn aggregate_leaderboard(entries: &[EvalEntry<'_>], grid: &[f64]) -> Result<Vec<LeaderboardRow>, MetricsError> {
    type Group<'a> = BTreeMap<&'a str, Vec<&'a EvaluationRecord>>;
    let mut groups: BTreeMap<(&str, &str), Group<'_>> = BTreeMap::new();
    for e in entries {
        groups
            .entry((e.author, e.definition))
            .or_default()
            .entry(e.solution)
            .or_default()
            .push(e.record);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for ((author, definition), by_solution) in groups {
        let curves = by_solution
            .values()
            .map(|recs| {
                // Order records canonically so the result ignores input order.
                let mut recs = recs.clone();
                recs.sort_by(|a, b| record_key(a).partial_cmp(&record_key(b)).unwrap_or(std::cmp::Ordering::Equal));
                fast_p_curve(&recs, grid)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let k = curves.len() as f64;
        let points = grid
            .iter()
            .enumerate()
            .map(|(i, &p)| (p, curves.iter().map(|c| c.points[i].1).sum::<f64>() / k))
            .collect::<Vec<_>>();
        let curve = FastPCurve {
            auc: curves.iter().map(|c| c.auc).sum::<f64>() / k,
            points,
        };
        rows.push(LeaderboardRow {
            author: author.to_string(),
            definition: definition.to_string(),
            solutions: by_solution.len(),
            evaluations: by_solution.values().map(Vec::len).sum(),
            correctness_rate: curve.correctness_rate(),
            curve,
        });
    }
    rows.sort_by(|a, b| {
        b.auc()
            .total_cmp(&a.auc())
            .then(b.correctness_rate.total_cmp(&a.correctness_rate))
            .then_with(|| a.author.cmp(&b.author))
            .then_with(|| a.definition.cmp(&b.definition))
    });
    Ok(rows)
}

fn record_key(r: &EvaluationRecord) -> (u8, f64) {
    (u8::from(r.status == EvalStatus::Passed), r.speedup().unwrap_or(0.0))
}

pub fn write_leaderboard_csv<W: Write>(rows: &[LeaderboardRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let grid: Vec<f64> = rows
        .first()
        .map(|r| r.curve.points.iter().map(|&(p, _)| p).collect())
        .unwrap_or_default();
    let mut header = vec![
        "author".to_string(),
        "definition".into(),
        "solutions".into(),
        "evaluations".into(),
        "correctness_rate".into(),
        "auc".into(),
    ];
    header.extend(grid.iter().map(|p| format!("fast_{p}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.author.clone(),
            r.definition.clone(),
            r.solutions.to_string(),
            r.evaluations.to_string(),
            r.correctness_rate.to_string(),
            r.auc().to_string(),
        ];
        rec.extend(r.curve.points.iter().map(|(_, v)| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `(p, value)` pairs, one per line, for plotting.
pub fn write_curve_csv<W: Write>(curve: &FastPCurve, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p", "value"])?;
    for (p, v) in &curve.points {
        w.write_record([p.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// A JSON document with every row, for storing next to the dataset.
pub fn leaderboard_summary(rows: &[LeaderboardRow]) -> serde_json::Value {
    serde_json::json!({
        "kind": "leaderboard",
        "rows": rows,
    })
}
