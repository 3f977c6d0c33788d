//! CSV result tables. Each file opens with `# config: <json>` so it can be replayed.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use crate::config::ExperimentConfig;
use crate::experiment::ExperimentOutput;

const CONFIG_PREFIX: &str = "# config: ";

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(headers: &[&str]) -> Self {
        Self {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

/// Shortest round-trip decimal form; `NaN` for missing quantities.
fn num(x: f64) -> String {
    format!("{x}")
}

pub fn summary_table(axis: &str, out: &ExperimentOutput) -> Table {
    let mut t = Table::new(&[axis, "method", "mean_se", "std_se", "n_scenes"]);
    for r in &out.summary {
        t.rows.push(vec![
            num(r.value),
            r.method.name().into(),
            num(r.mean_se),
            num(r.std_se),
            r.n_scenes.to_string(),
        ]);
    }
    t
}

pub fn scenes_table(axis: &str, num_users: usize, out: &ExperimentOutput) -> Table {
    let mut headers = vec![axis.to_string(), "method".into(), "scene_id".into(), "sum_se".into()];
    headers.extend((0..num_users).map(|k| format!("se_user_{k}")));
    headers.push("runtime_s".into());
    let mut t = Table {
        headers,
        rows: Vec::new(),
    };
    for r in &out.scenes {
        let mut row = vec![num(r.value), r.method.name().into(), r.scene_id.to_string(), num(r.sum_se)];
        row.extend(r.per_user.iter().map(|&x| num(x)));
        row.push(num(r.runtime_s));
        t.rows.push(row);
    }
    t
}

pub fn diagnostics_table(axis: &str, out: &ExperimentOutput) -> Table {
    let mut t = Table::new(&[
        axis,
        "proj_nmse",
        "value_nmse",
        "proj_nmse_on_policy",
        "value_nmse_on_policy",
        "power_ratio",
        "surrogate_analytic_gap",
    ]);
    for d in &out.diagnostics {
        t.rows.push(
            [
                d.value,
                d.proj_nmse,
                d.value_nmse,
                d.proj_nmse_on_policy,
                d.value_nmse_on_policy,
                d.power_ratio,
                d.surrogate_analytic_gap,
            ]
            .iter()
            .map(|&x| num(x))
            .collect(),
        );
    }
    t
}

pub fn timing_table(out: &ExperimentOutput) -> Table {
    let mut t = Table::new(&["run", "method", "median_s", "mean_s", "n_scenes"]);
    for r in &out.timing {
        t.rows.push(vec![
            r.run.to_string(),
            r.method.clone(),
            num(r.median_s),
            num(r.mean_s),
            r.n_scenes.to_string(),
        ]);
    }
    t
}

pub fn timing_summary_table(out: &ExperimentOutput) -> Table {
    let mut t = Table::new(&["method", "median_s", "cv", "ratio_to_wmmse"]);
    for r in &out.timing_summary {
        t.rows.push(vec![r.method.clone(), num(r.median_s), num(r.cv), num(r.ratio_to_wmmse)]);
    }
    t
}

pub fn write_table(path: &Path, config: &ExperimentConfig, table: &Table) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(file, "{CONFIG_PREFIX}{}", serde_json::to_string(config)?)?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(&table.headers)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// The embedded config and the table of a result file.
pub fn read_table(path: &Path) -> anyhow::Result<(ExperimentConfig, Table)> {
    let mut first = String::new();
    BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?).read_line(&mut first)?;
    let Some(json) = first.trim_end().strip_prefix(CONFIG_PREFIX) else {
        bail!("{} does not start with a `{}` line", path.display(), CONFIG_PREFIX.trim());
    };
    let config: ExperimentConfig =
        serde_json::from_str(json).with_context(|| format!("parsing embedded config of {}", path.display()))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let headers = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()?;
    Ok((config, Table { headers, rows }))
}

/// Wall-clock columns, and ratios of them, are excluded from replay comparison.
pub fn is_runtime_column(name: &str) -> bool {
    name.ends_with("_s") || matches!(name, "cv" | "ratio_to_wmmse")
}

fn close(a: &str, b: &str, rel_tol: f64) -> bool {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => {
            (x.is_nan() && y.is_nan()) || x == y || (x - y).abs() <= rel_tol * x.abs().max(y.abs())
        }
        _ => a == b,
    }
}

/// Every mismatching cell, as `row, column: original vs replayed`.
pub fn compare_tables(original: &Table, replayed: &Table, rel_tol: f64) -> Vec<String> {
    if original.headers != replayed.headers {
        return vec![format!("headers differ: {:?} vs {:?}", original.headers, replayed.headers)];
    }
    if original.rows.len() != replayed.rows.len() {
        return vec![format!("{} rows vs {}", original.rows.len(), replayed.rows.len())];
    }
    let mut diffs = Vec::new();
    for (i, (a, b)) in original.rows.iter().zip(&replayed.rows).enumerate() {
        for (j, name) in original.headers.iter().enumerate() {
            if is_runtime_column(name) {
                continue;
            }
            if !close(&a[j], &b[j], rel_tol) {
                diffs.push(format!("row {i}, {name}: {} vs {}", a[j], b[j]));
            }
        }
    }
    diffs
}

/// Writes all tables of a run into `dir`, returning the paths written.
pub fn write_output(dir: &Path, config: &ExperimentConfig, out: &ExperimentOutput) -> anyhow::Result<Vec<PathBuf>> {
    let tables = tables_for(config, out);
    let mut paths = Vec::new();
    for (name, table) in tables {
        let path = dir.join(name);
        write_table(&path, config, &table)?;
        paths.push(path);
    }
    Ok(paths)
}

/// The tables `write_output` would produce, keyed by file name.
pub fn tables_for(config: &ExperimentConfig, out: &ExperimentOutput) -> Vec<(String, Table)> {
    let kind = config.kind.name();
    let axis = config.kind.axis();
    if out.timing.is_empty() {
        vec![
            (format!("{kind}.csv"), summary_table(axis, out)),
            (format!("{kind}_scenes.csv"), scenes_table(axis, config.num_users, out)),
            (format!("{kind}_diagnostics.csv"), diagnostics_table(axis, out)),
        ]
    } else {
        vec![
            ("timing.csv".to_string(), timing_table(out)),
            ("timing_summary.csv".to_string(), timing_summary_table(out)),
        ]
    }
}
