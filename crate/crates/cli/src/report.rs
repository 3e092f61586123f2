//! Text tables and static SVG plots from results and metrics files.

use std::collections::BTreeMap;
use std::fmt::Write;

use mada_core::eval::ResultRecord;
use mada_core::ingest::CorruptionSpec;
use mada_core::metaloop::IterationRecord;

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn cell(values: &[f64], scale: f64, digits: usize) -> String {
    let (m, s) = mean_std(values);
    if values.len() < 2 {
        format!("{:.*}", digits, m * scale)
    } else {
        format!("{:.*} ± {:.*}", digits, m * scale, digits, s * scale)
    }
}

/// Left-aligned first column, right-aligned value columns.
pub fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width = vec![0; cols];
    for r in std::iter::once(header).chain(rows.iter().map(|r| r.as_slice())) {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |r: &[String]| {
        let mut s = String::new();
        for (i, c) in r.iter().enumerate() {
            let pad = width[i] - c.chars().count();
            if i == 0 {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (cols - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

fn runs(records: &[ResultRecord]) -> Vec<String> {
    let mut r: Vec<String> = records.iter().map(|r| r.run.clone()).collect();
    r.sort();
    r.dedup();
    r
}

/// Per-domain accuracy (%) with one column per run; repeated seeds become
/// mean ± std.
pub fn accuracy_table(records: &[ResultRecord]) -> String {
    let acc: Vec<&ResultRecord> = records.iter().filter(|r| r.metric == "accuracy").collect();
    let runs = runs(records);
    let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in &acc {
        cells.entry((r.domain.clone(), r.run.clone())).or_default().push(r.value);
    }
    let mut domains: Vec<String> = acc.iter().map(|r| r.domain.clone()).collect();
    domains.sort();
    domains.dedup();
    let mut header = vec!["domain".to_string()];
    header.extend(runs.iter().cloned());
    let mut rows: Vec<Vec<String>> = domains
        .iter()
        .map(|d| {
            let mut row = vec![d.clone()];
            row.extend(runs.iter().map(|r| cells.get(&(d.clone(), r.clone())).map_or("-".into(), |v| cell(v, 100.0, 2))));
            row
        })
        .collect();
    if domains.len() > 1 {
        // mean over domains, per seed
        let mut avg = vec!["average".to_string()];
        for r in &runs {
            let mut per_seed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
            for x in acc.iter().filter(|x| &x.run == r) {
                per_seed.entry(x.seed).or_default().push(x.value);
            }
            let means: Vec<f64> = per_seed.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
            avg.push(if means.is_empty() { "-".into() } else { cell(&means, 100.0, 2) });
        }
        rows.push(avg);
    }
    render_table(&header, &rows)
}

/// Every metric other than accuracy, one row each.
pub fn summary_table(records: &[ResultRecord]) -> Option<String> {
    let other: Vec<&ResultRecord> = records.iter().filter(|r| r.metric != "accuracy").collect();
    if other.is_empty() {
        return None;
    }
    let runs = runs(records);
    let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in &other {
        cells.entry((format!("{} ({})", r.metric, r.domain), r.run.clone())).or_default().push(r.value);
    }
    let mut keys: Vec<String> = cells.keys().map(|k| k.0.clone()).collect();
    keys.dedup();
    let mut header = vec!["metric".to_string()];
    header.extend(runs.iter().cloned());
    let rows: Vec<Vec<String>> = keys
        .iter()
        .map(|k| {
            let mut row = vec![k.clone()];
            row.extend(runs.iter().map(|r| cells.get(&(k.clone(), r.clone())).map_or("-".into(), |v| cell(v, 1.0, 4))));
            row
        })
        .collect();
    Some(render_table(&header, &rows))
}

/// Corruption named by the tail of a domain id such as
/// `mnist-heldout-gaussian_noise-3`.
pub fn corruption_of(domain: &str) -> Option<CorruptionSpec> {
    domain.char_indices().filter(|(_, c)| *c == '-').find_map(|(i, _)| domain[i + 1..].parse().ok())
}

/// Mean accuracy over corruption kinds at each severity 1..5, per run.
pub fn severity_series(records: &[ResultRecord]) -> Vec<(String, Vec<(f64, f64)>)> {
    let mut acc: BTreeMap<(String, u8), Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.metric == "accuracy") {
        if let Some(spec) = corruption_of(&r.domain) {
            if spec.severity > 0 {
                acc.entry((r.run.clone(), spec.severity)).or_default().push(r.value);
            }
        }
    }
    let mut out: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for ((run, sev), v) in acc {
        out.entry(run).or_default().push((sev as f64, 100.0 * v.iter().sum::<f64>() / v.len() as f64));
    }
    out.into_iter().collect()
}

/// Source and mean meta-test loss against iteration, thinned to at most
/// `max_points` points per curve.
pub fn loss_series(name: &str, history: &[IterationRecord], max_points: usize) -> Vec<(String, Vec<(f64, f64)>)> {
    let stride = history.len().div_ceil(max_points.max(1)).max(1);
    let pick = history.iter().step_by(stride);
    let mut out = vec![(format!("{name} source"), pick.clone().map(|r| (r.iteration as f64, r.source_loss)).collect())];
    let meta: Vec<(f64, f64)> = pick
        .filter(|r| !r.meta_test_losses.is_empty())
        .map(|r| (r.iteration as f64, r.meta_test_losses.iter().sum::<f64>() / r.meta_test_losses.len() as f64))
        .collect();
    if !meta.is_empty() {
        out.push((format!("{name} meta-test"), meta));
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Static line plot. `xticks` fixes the tick positions; otherwise five
/// evenly spaced ticks are drawn.
pub fn line_plot_svg(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<(f64, f64)>)], xticks: Option<&[f64]>) -> String {
    let (w, h, l, r, t, b) = (640.0, 400.0, 70.0, 170.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|s| s.1.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if let Some(ticks) = xticks {
        for &x in ticks {
            x0 = x0.min(x);
            x1 = x1.max(x);
        }
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let sx = |x: f64| l + (x - x0) / (x1 - x0) * (w - l - r);
    let sy = |y: f64| h - b - (y - y0) / (y1 - y0) * (h - t - b);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, (l + w - r) / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{l}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - b, w - r, h - b);
    let _ = writeln!(s, r#"<line x1="{l}" y1="{t}" x2="{l}" y2="{}" stroke="black"/>"#, h - b);
    let ticks: Vec<f64> = match xticks {
        Some(v) => v.to_vec(),
        None => (0..5).map(|i| x0 + (x1 - x0) * i as f64 / 4.0).collect(),
    };
    for x in ticks {
        let _ = writeln!(
            s,
            r#"<g class="xtick"><line x1="{0:.1}" y1="{1}" x2="{0:.1}" y2="{2}" stroke="black"/><text x="{0:.1}" y="{3}" text-anchor="middle">{4}</text></g>"#,
            sx(x),
            h - b,
            h - b + 5.0,
            h - b + 18.0,
            fmt_tick(x)
        );
    }
    for i in 0..5 {
        let y = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<g class="ytick"><line x1="{0}" y1="{1:.1}" x2="{2}" y2="{1:.1}" stroke="black"/><text x="{3}" y="{4:.1}" text-anchor="end">{5}</text></g>"#,
            l - 5.0,
            sy(y),
            l,
            l - 8.0,
            sy(y) + 4.0,
            fmt_tick(y)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (l + w - r) / 2.0, h - 10.0, escape(xlabel));
    let _ = writeln!(s, r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#, (t + h - b) / 2.0, escape(ylabel));
    for (i, (name, p)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let ly = t + 16.0 * i as f64 + 8.0;
        let _ = writeln!(
            s,
            r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="{color}" stroke-width="2"/><text x="{3}" y="{4}">{5}</text>"#,
            w - r + 10.0,
            ly,
            w - r + 30.0,
            w - r + 35.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if (v.fract() == 0.0 && v.abs() < 1e9) || v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(run: &str, seed: u64, domain: &str, value: f64) -> ResultRecord {
        ResultRecord { run: run.into(), seed, domain: domain.into(), metric: "accuracy".into(), value }
    }

    #[test]
    fn single_run_single_domain_is_one_row() {
        let t = accuracy_table(&[rec("mada", 0, "invert", 0.5)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2], "invert  50.00");
    }

    #[test]
    fn two_seeds_give_mean_and_std() {
        let t = accuracy_table(&[rec("mada", 0, "invert", 0.5), rec("mada", 1, "invert", 0.6)]);
        assert!(t.contains("55.00 ± 7.07"), "{t}");
    }

    #[test]
    fn corruption_suffix_is_recognised() {
        let spec = corruption_of("mnist-heldout-gaussian_noise-3").unwrap();
        assert_eq!(spec.to_string(), "gaussian_noise-3");
        assert!(corruption_of("mnist-heldout-invert").is_none());
    }

    #[test]
    fn severity_plot_has_five_ticks() {
        let recs: Vec<ResultRecord> = (1..=5).map(|s| rec("erm", 0, &format!("d-fog-{s}"), 1.0 - 0.1 * s as f64)).collect();
        let series = severity_series(&recs);
        assert_eq!(series[0].1.len(), 5);
        let svg = line_plot_svg("t", "severity", "accuracy", &series, Some(&[1.0, 2.0, 3.0, 4.0, 5.0]));
        assert_eq!(svg.matches(r#"class="xtick""#).count(), 5);
    }
}
