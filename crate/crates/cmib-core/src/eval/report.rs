use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CmibError, Result};
use crate::eval::metrics::{ele_acc_analog, step_consistency, step_sr, Method, RunRecord};
use crate::eval::runner::{redundancy, run_method, SeedWorkload};
use crate::model::FrozenTaskModel;

/// Aggregated outcome of one method on one seed: metric means over the
/// repeats, the redundancy reading where the arm has a latent model, and
/// the exact call count summed over repeats. `latency_ms` is informational
/// and excluded from deterministic artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub method: String,
    pub seed: u64,
    pub step_sr: f64,
    pub ele_acc: f64,
    pub step_cons: f64,
    pub redundancy: Option<f64>,
    pub call_count: u64,
    #[serde(default)]
    pub latency_ms: f64,
}

/// Per-method mean and standard deviation over seeds (sample standard
/// deviation, zero for a single seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub seeds: usize,
    pub step_sr_mean: f64,
    pub step_sr_std: f64,
    pub ele_acc_mean: f64,
    pub ele_acc_std: f64,
    pub step_cons_mean: f64,
    pub step_cons_std: f64,
    pub redundancy_mean: Option<f64>,
    pub redundancy_std: Option<f64>,
    pub call_count_total: u64,
}

/// Full evaluation report: one row per method and seed plus per-method
/// summaries, stamped with the configuration hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<SeedRow>,
    pub summary: Vec<MethodSummary>,
}

/// Call-count table entry; wall time rides along as information only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub method: String,
    pub call_count: u64,
    pub latency_ms: f64,
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (round6(mean), 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (round6(mean), round6(var.sqrt()))
}

/// Evaluates one method over a prepared workload and reduces the repeats
/// into a seed row. Metric values are rounded to six decimals so the CSV,
/// the JSON summary, and any re-derived summary agree exactly.
pub fn evaluate_method_on_seed(
    method: Method,
    workload: &SeedWorkload,
    frozen: &FrozenTaskModel,
    n_repeats: usize,
    element_count: usize,
) -> Result<SeedRow> {
    let records = run_method(method, workload, frozen, n_repeats)?;
    let row_redundancy = match method {
        Method::Cmib => Some(round6(redundancy(&workload.cmib.model, &workload.items)?)),
        Method::IndependentCz => {
            Some(round6(redundancy(&workload.independent.model, &workload.items)?))
        }
        _ => None,
    };
    Ok(SeedRow {
        method: method.tag(),
        seed: workload.seed,
        step_sr: round6(mean_over(&records, step_sr)),
        ele_acc: round6(mean_over_result(&records, |r| ele_acc_analog(r, element_count))?),
        step_cons: round6(step_consistency(&records)?),
        redundancy: row_redundancy,
        call_count: records.iter().map(|r| r.call_count).sum(),
        latency_ms: records.iter().map(|r| r.wall_time_ms).sum(),
    })
}

fn mean_over(records: &[RunRecord], f: impl Fn(&RunRecord) -> f64) -> f64 {
    records.iter().map(&f).sum::<f64>() / records.len() as f64
}

fn mean_over_result(
    records: &[RunRecord],
    f: impl Fn(&RunRecord) -> Result<f64>,
) -> Result<f64> {
    let mut total = 0.0;
    for r in records {
        total += f(r)?;
    }
    Ok(total / records.len() as f64)
}

impl Report {
    /// Assembles a report from seed rows: rows are sorted by method tag and
    /// seed, summaries grouped per method. A redundancy summary appears
    /// only when every row of the method carries a reading.
    pub fn from_rows(config_hash: &str, rows: Vec<SeedRow>) -> Result<Report> {
        if rows.is_empty() {
            return Err(CmibError::EmptyInput("report: no rows"));
        }
        let mut rows = rows;
        rows.sort_by(|a, b| a.method.cmp(&b.method).then(a.seed.cmp(&b.seed)));
        let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();

        let mut groups: BTreeMap<String, Vec<&SeedRow>> = BTreeMap::new();
        for row in &rows {
            groups.entry(row.method.clone()).or_default().push(row);
        }
        let mut summary = Vec::with_capacity(groups.len());
        for (method, group) in &groups {
            let collect = |f: &dyn Fn(&SeedRow) -> f64| -> Vec<f64> {
                group.iter().map(|r| f(r)).collect()
            };
            let (step_sr_mean, step_sr_std) = mean_std(&collect(&|r| r.step_sr));
            let (ele_acc_mean, ele_acc_std) = mean_std(&collect(&|r| r.ele_acc));
            let (step_cons_mean, step_cons_std) = mean_std(&collect(&|r| r.step_cons));
            let redundancies: Vec<f64> = group.iter().filter_map(|r| r.redundancy).collect();
            let (redundancy_mean, redundancy_std) = if redundancies.len() == group.len() {
                let (m, s) = mean_std(&redundancies);
                (Some(m), Some(s))
            } else {
                (None, None)
            };
            summary.push(MethodSummary {
                method: method.clone(),
                seeds: group.len(),
                step_sr_mean,
                step_sr_std,
                ele_acc_mean,
                ele_acc_std,
                step_cons_mean,
                step_cons_std,
                redundancy_mean,
                redundancy_std,
                call_count_total: group.iter().map(|r| r.call_count).sum(),
            });
        }
        Ok(Report { config_hash: config_hash.to_string(), seeds, rows, summary })
    }

    /// Summary row for one method, if present.
    pub fn method_summary(&self, tag: &str) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == tag)
    }

    /// Deterministic per-seed CSV; wall time is deliberately absent.
    pub fn csv(&self) -> String {
        let mut out = String::from("method,seed,step_sr,ele_acc,step_cons,redundancy,call_count\n");
        for r in &self.rows {
            let red = r.redundancy.map(|v| format!("{v:.6}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{},{}\n",
                r.method, r.seed, r.step_sr, r.ele_acc, r.step_cons, red, r.call_count
            ));
        }
        out
    }

    /// Wall-time table, informational only (never byte-compared).
    pub fn timings_csv(&self) -> String {
        let mut out = String::from("method,seed,latency_ms\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{:.3}\n", r.method, r.seed, r.latency_ms));
        }
        out
    }

    /// Deterministic JSON summary (means/stds; no wall-time fields).
    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct SummaryDoc<'a> {
            config_hash: &'a str,
            seeds: &'a [u64],
            methods: &'a [MethodSummary],
        }
        serde_json::to_string_pretty(&SummaryDoc {
            config_hash: &self.config_hash,
            seeds: &self.seeds,
            methods: &self.summary,
        })
        .expect("summary serialization cannot fail")
        + "\n"
    }

    /// Parses rows from one per-seed CSV produced by [`Report::csv`].
    pub fn parse_csv(text: &str) -> Result<Vec<SeedRow>> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or(CmibError::EmptyInput("report csv: empty file"))?;
        let expected = "method,seed,step_sr,ele_acc,step_cons,redundancy,call_count";
        if header != expected {
            return Err(CmibError::Parse {
                offset: 0,
                message: format!("bad report header: {header}"),
            });
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(CmibError::Parse {
                    offset: lineno + 1,
                    message: format!("expected 7 fields, got {}", fields.len()),
                });
            }
            let parse_f64 = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| CmibError::Parse {
                    offset: lineno + 1,
                    message: format!("bad {what}: {s}"),
                })
            };
            Method::parse(fields[0])?;
            rows.push(SeedRow {
                method: fields[0].to_string(),
                seed: fields[1].parse().map_err(|_| CmibError::Parse {
                    offset: lineno + 1,
                    message: format!("bad seed: {}", fields[1]),
                })?,
                step_sr: parse_f64(fields[2], "step_sr")?,
                ele_acc: parse_f64(fields[3], "ele_acc")?,
                step_cons: parse_f64(fields[4], "step_cons")?,
                redundancy: if fields[5].is_empty() {
                    None
                } else {
                    Some(parse_f64(fields[5], "redundancy")?)
                },
                call_count: fields[6].parse().map_err(|_| CmibError::Parse {
                    offset: lineno + 1,
                    message: format!("bad call_count: {}", fields[6]),
                })?,
                latency_ms: 0.0,
            });
        }
        if rows.is_empty() {
            return Err(CmibError::EmptyInput("report csv: no data rows"));
        }
        Ok(rows)
    }

    /// Keeps only rows whose method is in `tags` (given in display order).
    pub fn filter_arms(rows: Vec<SeedRow>, tags: &[String]) -> Result<Vec<SeedRow>> {
        for tag in tags {
            Method::parse(tag)?;
        }
        Ok(rows.into_iter().filter(|r| tags.contains(&r.method)).collect())
    }
}

/// Per-method call-count totals with informational wall time.
pub fn cost_account(rows: &[SeedRow]) -> Vec<CostRow> {
    let mut groups: BTreeMap<&str, (u64, f64)> = BTreeMap::new();
    for row in rows {
        let entry = groups.entry(&row.method).or_insert((0, 0.0));
        entry.0 += row.call_count;
        entry.1 += row.latency_ms;
    }
    groups
        .into_iter()
        .map(|(method, (call_count, latency_ms))| CostRow {
            method: method.to_string(),
            call_count,
            latency_ms,
        })
        .collect()
}
