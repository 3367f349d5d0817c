use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::stats::{compare, CellSummary, Comparison, Summary};
use super::RunRecord;
use crate::error::{Error, Result};
use crate::session::Algorithm;

const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn record_stem(root: &Path, r: &RunRecord) -> PathBuf {
    root.join("runs").join(&r.env).join(r.algorithm.to_string()).join(format!("seed_{}", r.seed))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

/// Per-interaction metric CSV for one run.
pub fn record_csv(r: &RunRecord) -> String {
    let mut s = String::from("interaction,metric,prior_loss,policy_loss,decoder_loss\n");
    for (i, m) in r.metrics.iter().enumerate() {
        let l = r.losses.get(i).copied().flatten();
        let _ = writeln!(
            s,
            "{i},{m:e},{},{},{}",
            opt(l.map(|l| l.prior)),
            opt(l.map(|l| l.policy)),
            opt(l.map(|l| l.decoder))
        );
    }
    s
}

/// Writes `runs/<env>/<algorithm>/seed_<n>.{json,csv}` under `root`.
pub fn write_record(root: &Path, r: &RunRecord) -> Result<PathBuf> {
    let stem = record_stem(root, r);
    write_file(&stem.with_extension("json"), &serde_json::to_vec_pretty(r)?)?;
    let csv = stem.with_extension("csv");
    write_file(&csv, record_csv(r).as_bytes())?;
    Ok(csv)
}

/// Every run record saved under `root`, sorted by (env, algorithm, seed).
pub fn read_records(root: &Path) -> Result<Vec<RunRecord>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.extension().is_some_and(|e| e == "json")
                && path.file_name().is_some_and(|n| n.to_string_lossy().starts_with("seed_"))
            {
                out.push(path);
            }
        }
        Ok(())
    }
    let runs = root.join("runs");
    let mut paths = Vec::new();
    walk(&runs, &mut paths)?;
    let mut records = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<RunRecord>(&text).map_err(|e| Error::Serde(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| (&a.env, a.algorithm, a.seed).cmp(&(&b.env, b.algorithm, b.seed)));
    Ok(records)
}

pub fn cell_csv(c: &CellSummary) -> String {
    let mut s = String::from("interaction,mean,std,smoothed\n");
    for i in 0..c.mean.len() {
        let _ = writeln!(s, "{i},{:e},{:e},{:e}", c.mean[i], c.std[i], c.smoothed[i]);
    }
    s
}

/// Every ordered pair of algorithms with enough completed seeds.
pub fn all_comparisons(summary: &Summary) -> Vec<Comparison> {
    let mut algs: Vec<Algorithm> = summary.cells.iter().map(|c| c.algorithm).collect();
    algs.sort();
    algs.dedup();
    let mut out = Vec::new();
    for &a in &algs {
        for &b in &algs {
            if a != b {
                if let Ok(cs) = compare(summary, a, b) {
                    out.extend(cs);
                }
            }
        }
    }
    out.sort_by(|x, y| (&x.env, x.a, x.b).cmp(&(&y.env, y.a, y.b)));
    out
}

pub fn comparisons_csv(cs: &[Comparison]) -> String {
    let mut s = String::from("env,a,b,a_mean,b_mean,u,p_a_lower\n");
    for c in cs {
        let _ = writeln!(s, "{},{},{},{:e},{:e},{},{:e}", c.env, c.a, c.b, c.a_mean, c.b_mean, c.u, c.p);
    }
    s
}

fn metric_label(env: &str) -> &'static str {
    if env.starts_with("highway") {
        "collision rate"
    } else {
        "final distance to treasure"
    }
}

/// Line plot of the smoothed mean per algorithm with a ±1 std band.
pub fn svg_plot(summary: &Summary, env: &str) -> String {
    let cells: Vec<&CellSummary> = summary.cells.iter().filter(|c| c.env == env).collect();
    let (w, h, left, right, top, bottom) = (720.0, 420.0, 70.0, 150.0, 30.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let n = cells.iter().map(|c| c.mean.len()).max().unwrap_or(0).max(2);
    let band = |c: &CellSummary| -> (Vec<f64>, Vec<f64>) {
        let sd = super::stats::moving_average(&c.std, summary.smoothing_window);
        let lo = c.smoothed.iter().zip(&sd).map(|(m, s)| (m - s).max(0.0)).collect();
        let hi = c.smoothed.iter().zip(&sd).map(|(m, s)| m + s).collect();
        (lo, hi)
    };
    let ymax = cells
        .iter()
        .flat_map(|c| band(c).1)
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let x = |i: usize| left + pw * i as f64 / (n - 1) as f64;
    let y = |v: f64| top + ph * (1.0 - v / ymax);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{left}" y="18">{env}</text>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        top + ph,
        left + pw,
        top + ph
    );
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + ph);
    for k in 0..=4 {
        let v = ymax * f64::from(k) / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
            left - 6.0,
            y(v) + 4.0
        );
        let i = (n - 1) * k as usize / 4;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{i}</text>"#,
            x(i),
            top + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{}" text-anchor="middle">interaction</text>"#,
        left + pw / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + ph / 2.0,
        metric_label(env)
    );
    for (k, c) in cells.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let (lo, hi) = band(c);
        let mut pts: Vec<String> = hi.iter().enumerate().map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v))).collect();
        pts.extend(lo.iter().enumerate().rev().map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v))));
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            pts.join(" ")
        );
        let line: Vec<String> = c
            .smoothed
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.join(" ")
        );
        let ly = top + 16.0 * k as f64 + 8.0;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, c.algorithm);
    }
    s.push_str("</svg>\n");
    s
}

/// Paths written by [`emit_outputs`].
#[derive(Debug, Clone, Default)]
pub struct OutputFiles {
    pub cells: Vec<PathBuf>,
    pub comparisons: PathBuf,
    pub plots: Vec<PathBuf>,
    pub metadata: PathBuf,
}

/// Summary CSVs, the comparison table, one SVG per environment and a
/// metadata file. Only the metadata carries wall-clock times.
pub fn emit_outputs(summary: &Summary, records: &[RunRecord], dir: &Path) -> Result<OutputFiles> {
    let mut files = OutputFiles::default();
    for c in &summary.cells {
        let p = dir.join("summary").join(format!("{}_{}.csv", c.env, c.algorithm));
        write_file(&p, cell_csv(c).as_bytes())?;
        files.cells.push(p);
    }
    let comparisons = all_comparisons(summary);
    files.comparisons = dir.join("comparisons.csv");
    write_file(&files.comparisons, comparisons_csv(&comparisons).as_bytes())?;
    for env in summary.envs() {
        let p = dir.join(format!("{env}.svg"));
        write_file(&p, svg_plot(summary, &env).as_bytes())?;
        files.plots.push(p);
    }
    let runs: Vec<_> = records
        .iter()
        .map(|r| {
            json!({
                "env": r.env,
                "algorithm": r.algorithm,
                "seed": r.seed,
                "human": r.human,
                "wall_clock_secs": r.wall_clock_secs,
                "failure": r.failure,
            })
        })
        .collect();
    let mut hashes: Vec<&str> = summary.cells.iter().map(|c| c.config_hash.as_str()).collect();
    hashes.sort();
    hashes.dedup();
    let meta = json!({
        "config_hashes": hashes,
        "smoothing": format!("trailing moving average over {} interactions", summary.smoothing_window),
        "error_band": "smoothed population standard deviation across seeds",
        "last_window": summary.last_window,
        "test": "one-sided Mann-Whitney U on per-seed last-window means; exact for pooled size <= 20",
        "runs": runs,
    });
    files.metadata = dir.join("metadata.json");
    write_file(&files.metadata, &serde_json::to_vec_pretty(&meta)?)?;
    Ok(files)
}
