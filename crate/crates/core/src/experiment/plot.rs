//! Standalone SVG line and bar charts rendered from the runner's CSV files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::smooth;

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn frame(out: &mut String, title: &str, x_label: &str, y_label: &str, (x0, x1): (f64, f64), (y0, y1): (f64, f64)) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>
<line x1="{LEFT}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>
"#,
        (LEFT + W - RIGHT) / 2.0,
        escape(title),
        H - BOTTOM,
        W - RIGHT,
        H - BOTTOM,
        H - BOTTOM,
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0,
        escape(x_label),
        (TOP + H - BOTTOM) / 2.0,
        (TOP + H - BOTTOM) / 2.0,
        escape(y_label),
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let y = H - BOTTOM - f * (H - BOTTOM - TOP);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y + 4.0,
            tick(y0 + f * (y1 - y0))
        );
        if x1 > x0 {
            let x = LEFT + f * (W - RIGHT - LEFT);
            let _ = writeln!(
                out,
                r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
                H - BOTTOM + 16.0,
                tick(x0 + f * (x1 - x0))
            );
        }
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 18.0 * i as f64;
        let x = W - RIGHT + 14.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            y,
            PALETTE[i % PALETTE.len()],
            x + 18.0,
            y + 10.0,
            escape(name)
        );
    }
}

/// Line chart. An empty series list still yields axes and a title.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xs = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let ys = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let mut out = String::new();
    let empty = series.iter().all(|s| s.points.is_empty());
    frame(
        &mut out,
        title,
        x_label,
        y_label,
        if empty { (0.0, 0.0) } else { xs },
        ys,
    );
    let sx = |x: f64| LEFT + (x - xs.0) / (xs.1 - xs.0) * (W - RIGHT - LEFT);
    let sy = |y: f64| H - BOTTOM - (y - ys.0) / (ys.1 - ys.0) * (H - BOTTOM - TOP);
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            PALETTE[i % PALETTE.len()],
            pts.join(" ")
        );
    }
    legend(&mut out, &series.iter().map(|s| s.name.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Bar height and optional whisker half length.
pub type Bar = (f64, Option<f64>);

/// Values of one bar series, one per group.
pub struct BarSeries {
    pub name: String,
    pub values: Vec<Option<Bar>>,
}

/// Grouped bar chart with optional whiskers.
pub fn bar_chart(title: &str, y_label: &str, groups: &[String], series: &[BarSeries]) -> String {
    let vals = series.iter().flat_map(|s| {
        s.values
            .iter()
            .flatten()
            .flat_map(|&(v, e)| [v - e.unwrap_or(0.0), v + e.unwrap_or(0.0)])
    });
    let (lo, hi) = range(vals.chain([0.0]));
    let mut out = String::new();
    frame(&mut out, title, "", y_label, (0.0, 0.0), (lo, hi));
    let sy = |y: f64| H - BOTTOM - (y - lo) / (hi - lo) * (H - BOTTOM - TOP);
    let plot_w = W - RIGHT - LEFT;
    let group_w = plot_w / groups.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    for (g, name) in groups.iter().enumerate() {
        let gx = LEFT + g as f64 * group_w;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            gx + group_w / 2.0,
            H - BOTTOM + 16.0,
            escape(name)
        );
        for (i, s) in series.iter().enumerate() {
            let Some(&Some((v, err))) = s.values.get(g) else {
                continue;
            };
            if !v.is_finite() {
                continue;
            }
            let x = gx + group_w * 0.1 + i as f64 * bar_w;
            let (y_top, y_bot) = (sy(v.max(0.0)), sy(v.min(0.0)));
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{y_top:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                bar_w * 0.9,
                (y_bot - y_top).max(0.5),
                PALETTE[i % PALETTE.len()]
            );
            if let Some(e) = err.filter(|e| e.is_finite()) {
                let cx = x + bar_w * 0.45;
                let _ = writeln!(
                    out,
                    r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                    sy(v - e),
                    sy(v + e)
                );
            }
        }
    }
    if lo < 0.0 && hi > 0.0 {
        let _ = writeln!(
            out,
            r#"<line x1="{LEFT}" y1="{0:.2}" x2="{1}" y2="{0:.2}" stroke="gray"/>"#,
            sy(0.0),
            W - RIGHT
        );
    }
    legend(&mut out, &series.iter().map(|s| s.name.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// A parsed CSV file addressed by column name.
pub struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Table {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    fn index(&self, column: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| Error::MissingColumn {
                column: column.to_string(),
                path: self.path.clone(),
            })
    }

    /// Column as numbers; blank cells become NaN.
    pub fn numbers(&self, column: &str) -> Result<Vec<f64>> {
        let i = self.index(column)?;
        Ok(self.rows.iter().map(|r| r[i].parse().unwrap_or(f64::NAN)).collect())
    }

    pub fn strings(&self, column: &str) -> Result<Vec<String>> {
        let i = self.index(column)?;
        Ok(self.rows.iter().map(|r| r[i].clone()).collect())
    }
}

fn trial_files(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("trial_") && n.ends_with(suffix))
        })
        .collect();
    v.sort();
    Ok(v)
}

/// Pointwise mean across trials, ignoring NaN entries.
fn mean_across(columns: &[Vec<f64>]) -> Vec<f64> {
    let len = columns.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            let vals: Vec<f64> = columns
                .iter()
                .filter_map(|c| c.get(i))
                .copied()
                .filter(|v| v.is_finite())
                .collect();
            if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        })
        .collect()
}

fn write_svg(path: PathBuf, svg: String, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Renders every chart the files under `dir` support, recursing into
/// condition directories, and returns the SVG paths written.
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    emit_into(dir, &mut written)?;
    Ok(written)
}

fn emit_into(dir: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let grid = dir.join("grid_summary.csv");
    if grid.is_file() {
        plot_grid(dir, &Table::read(&grid)?, written)?;
    }
    let series = trial_files(dir, "_series.csv")?;
    if let Some(first) = series.first() {
        let t = Table::read(first)?;
        if t.index("teammate_coop").is_ok() {
            plot_cooperation(dir, &series, written)?;
        } else {
            plot_cleanup(dir, &series, written)?;
        }
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    plot_conditions(dir, &subdirs, written)?;
    for d in subdirs {
        emit_into(&d, written)?;
    }
    Ok(())
}

fn plot_cooperation(dir: &Path, files: &[PathBuf], written: &mut Vec<PathBuf>) -> Result<()> {
    let mut x = Vec::new();
    let mut team = Vec::new();
    let mut other = Vec::new();
    for f in files {
        let t = Table::read(f)?;
        x = t.numbers("window_start")?;
        team.push(t.numbers("teammate_coop")?);
        other.push(t.numbers("other_coop")?);
    }
    let line = |name: &str, ys: Vec<f64>| Series {
        name: name.to_string(),
        points: x.iter().copied().zip(ys).collect(),
    };
    let svg = line_chart(
        &format!("Cooperation, {}", dir_label(dir)),
        "episode",
        "fraction cooperating",
        &[
            line("teammates", mean_across(&team)),
            line("non-teammates", mean_across(&other)),
        ],
    );
    write_svg(dir.join("cooperation.svg"), svg, written)
}

fn plot_cleanup(dir: &Path, files: &[PathBuf], written: &mut Vec<PathBuf>) -> Result<()> {
    let mut reward = Vec::new();
    let mut x = Vec::new();
    for f in files {
        let t = Table::read(f)?;
        x = t.numbers("episode")?;
        reward.push(t.numbers("population_reward")?);
    }
    let window = (x.len() / 50).max(1);
    let svg = line_chart(
        &format!("Population reward, {}", dir_label(dir)),
        "episode",
        "reward per episode",
        &[Series {
            name: "mean over trials".into(),
            points: x.iter().copied().zip(smooth(&mean_across(&reward), window)).collect(),
        }],
    );
    write_svg(dir.join("reward.svg"), svg, written)?;

    // division of labour in the first trial
    let agents = trial_files(dir, "_agents.csv")?;
    let Some(first) = agents.first() else {
        return Ok(());
    };
    let t = Table::read(first)?;
    let episode = t.numbers("episode")?;
    let agent = t.numbers("agent")?;
    for (column, file, label) in [
        ("apples", "labor_apples.svg", "apples"),
        ("cleans", "labor_cleans.svg", "cleaning beams"),
    ] {
        let values = t.numbers(column)?;
        let mut per: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
        for ((&e, &a), &v) in episode.iter().zip(&agent).zip(&values) {
            per.entry(a as usize).or_default().push((e, v));
        }
        let series: Vec<Series> = per
            .into_iter()
            .map(|(a, pts)| {
                let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
                let w = (ys.len() / 50).max(1);
                Series {
                    name: format!("agent {a}"),
                    points: pts.iter().map(|p| p.0).zip(smooth(&ys, w)).collect(),
                }
            })
            .collect();
        let svg = line_chart(
            &format!("{} per episode, {}", label, dir_label(dir)),
            "episode",
            label,
            &series,
        );
        write_svg(dir.join(file), svg, written)?;
    }
    Ok(())
}

/// One bar chart per metric comparing the conditions found in `subdirs`.
fn plot_conditions(dir: &Path, subdirs: &[PathBuf], written: &mut Vec<PathBuf>) -> Result<()> {
    let mut groups = Vec::new();
    let mut by_metric: BTreeMap<String, Vec<Option<Bar>>> = BTreeMap::new();
    for d in subdirs {
        let path = d.join("summary_ci.csv");
        if !path.is_file() {
            continue;
        }
        let t = Table::read(&path)?;
        let metrics = t.strings("metric")?;
        let mean = t.numbers("mean")?;
        let half = t.numbers("half_width")?;
        let g = groups.len();
        groups.push(dir_label(d));
        for ((m, &v), &h) in metrics.iter().zip(&mean).zip(&half) {
            let column = by_metric.entry(m.clone()).or_default();
            column.resize(g + 1, None);
            column[g] = Some((v, h.is_finite().then_some(h)));
        }
    }
    if groups.is_empty() {
        return Ok(());
    }
    for (metric, mut values) in by_metric {
        values.resize(groups.len(), None);
        let svg = bar_chart(
            &format!("{metric}, last quartile"),
            &metric,
            &groups,
            &[BarSeries {
                name: "mean +/- 95% CI".into(),
                values,
            }],
        );
        write_svg(dir.join(format!("compare_{metric}.svg")), svg, written)?;
    }
    Ok(())
}

fn plot_grid(dir: &Path, t: &Table, written: &mut Vec<PathBuf>) -> Result<()> {
    let structure = t.strings("structure")?;
    let b = t.numbers("b")?;
    let reward = t.numbers("normalized_reward")?;
    let half = t.numbers("half_width")?;
    let margin = t.numbers("margin")?;
    let mut groups: Vec<String> = Vec::new();
    let mut benefits: Vec<f64> = Vec::new();
    for (s, &bv) in structure.iter().zip(&b) {
        if !groups.contains(s) {
            groups.push(s.clone());
        }
        if !benefits.contains(&bv) {
            benefits.push(bv);
        }
    }
    let series_for = |f: &dyn Fn(usize) -> Option<(f64, Option<f64>)>| -> Vec<BarSeries> {
        benefits
            .iter()
            .map(|&bv| BarSeries {
                name: format!("b = {bv}"),
                values: groups
                    .iter()
                    .map(|g| {
                        (0..structure.len())
                            .find(|&i| &structure[i] == g && b[i] == bv)
                            .and_then(f)
                    })
                    .collect(),
            })
            .collect()
    };
    let rewards = series_for(&|i| {
        reward[i]
            .is_finite()
            .then(|| (reward[i], half[i].is_finite().then_some(half[i])))
    });
    write_svg(
        dir.join("grid_reward.svg"),
        bar_chart(
            "Normalized reward by team structure",
            "normalized reward",
            &groups,
            &rewards,
        ),
        written,
    )?;
    let margins = series_for(&|i| margin[i].is_finite().then_some((margin[i], None)));
    write_svg(
        dir.join("grid_incentives.svg"),
        bar_chart("Incentive margin (positive: cooperate)", "margin", &groups, &margins),
        written,
    )
}

fn dir_label(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}
