//! CSV tables and plain SVG charts for training logs and comparisons.

use std::fmt::Write as _;
use std::path::Path;

use super::suite::Comparison;
use super::{HarnessError, Result, TrainingLog, TrajectoryRow};
use crate::envs::TaskKind;
use crate::stats::five_numbers;

fn io_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(e.to_string())
}

fn csv_string(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w).map_err(io_err)?;
    let bytes = w.into_inner().map_err(io_err)?;
    String::from_utf8(bytes).map_err(io_err)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err)?;
    }
    std::fs::write(path, contents).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

pub fn episodes_csv(log: &TrainingLog) -> Result<String> {
    csv_string(|w| {
        w.write_record(["episode", "end_step", "total_reward", "length", "snapshot_index"])?;
        for e in &log.episodes {
            w.write_record([
                e.episode.to_string(),
                e.end_step.to_string(),
                e.total_reward.to_string(),
                e.length.to_string(),
                e.snapshot_index.map_or(String::new(), |i| i.to_string()),
            ])?;
        }
        Ok(())
    })
}

pub fn evals_csv(log: &TrainingLog) -> Result<String> {
    csv_string(|w| {
        w.write_record(["step", "mean_return", "mean_length"])?;
        for p in &log.evals {
            w.write_record([p.step.to_string(), p.mean_return.to_string(), p.mean_length.to_string()])?;
        }
        Ok(())
    })
}

pub fn obs_names(task: TaskKind) -> &'static [&'static str] {
    match task {
        TaskKind::Cartpole => &["x", "x_dot", "theta", "theta_dot"],
        TaskKind::Navigation => &["x", "y", "theta"],
    }
}

/// `episode,step,<obs...>,action,rate,u,reward,done`
pub fn trajectory_csv(task: TaskKind, rows: &[TrajectoryRow]) -> Result<String> {
    csv_string(|w| {
        let mut header = vec!["episode", "step"];
        header.extend_from_slice(obs_names(task));
        header.extend_from_slice(&["action", "rate", "u", "reward", "done"]);
        w.write_record(&header)?;
        for r in rows {
            let mut rec = vec![r.episode.to_string(), r.step.to_string()];
            rec.extend(r.obs.iter().map(f64::to_string));
            rec.push(r.action.to_string());
            rec.push(r.rate.map_or(String::new(), |v| v.to_string()));
            rec.push(r.command.to_string());
            rec.push(r.reward.to_string());
            rec.push(u8::from(r.done).to_string());
            w.write_record(&rec)?;
        }
        Ok(())
    })
}

/// Long-format scores: `comparison,group,label,policy,score`.
pub fn scores_csv(comparisons: &[Comparison]) -> Result<String> {
    csv_string(|w| {
        w.write_record(["comparison", "group", "label", "policy", "score"])?;
        for c in comparisons {
            for (group, label, scores) in [("a", &c.label_a, &c.scores_a), ("b", &c.label_b, &c.scores_b)] {
                for (i, s) in scores.iter().enumerate() {
                    w.write_record([c.name.as_str(), group, label, &i.to_string(), &s.to_string()])?;
                }
            }
        }
        Ok(())
    })
}

/// Inverse of [`scores_csv`]; the tests are recomputed.
pub fn read_scores_csv(text: &str) -> Result<Vec<Comparison>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out: Vec<(String, String, String, Vec<f64>, Vec<f64>)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(io_err)?;
        if rec.len() != 5 {
            return Err(HarnessError::Io(format!("scores row {}: expected 5 fields", line + 2)));
        }
        let score: f64 = rec[4]
            .parse()
            .map_err(|e| HarnessError::Io(format!("scores row {}: {e}", line + 2)))?;
        let idx = match out.iter().position(|c| c.0 == rec[0]) {
            Some(i) => i,
            None => {
                out.push((rec[0].to_string(), String::new(), String::new(), vec![], vec![]));
                out.len() - 1
            }
        };
        let entry = &mut out[idx];
        match &rec[1] {
            "a" => {
                entry.1 = rec[2].to_string();
                entry.3.push(score);
            }
            "b" => {
                entry.2 = rec[2].to_string();
                entry.4.push(score);
            }
            g => return Err(HarnessError::Io(format!("scores row {}: unknown group `{g}`", line + 2))),
        }
    }
    out.into_iter()
        .map(|(n, la, lb, a, b)| Comparison::new(&n, &la, &lb, a, b))
        .collect()
}

pub fn comparisons_csv(comparisons: &[Comparison]) -> Result<String> {
    csv_string(|w| {
        w.write_record([
            "comparison", "label_a", "label_b", "n_a", "n_b", "median_a", "median_b", "u_a", "z", "p",
        ])?;
        for c in comparisons {
            w.write_record([
                c.name.clone(),
                c.label_a.clone(),
                c.label_b.clone(),
                c.scores_a.len().to_string(),
                c.scores_b.len().to_string(),
                c.median_a().to_string(),
                c.median_b().to_string(),
                c.test.u_a.to_string(),
                c.test.z.to_string(),
                c.test.p.to_string(),
            ])?;
        }
        Ok(())
    })
}

fn p_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        "n.s."
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Box plots, one panel per comparison, with the test's p-value.
pub fn comparisons_svg(comparisons: &[Comparison]) -> String {
    let (pw, ph, top, left) = (240.0, 260.0, 40.0, 50.0);
    let width = left + pw * comparisons.len().max(1) as f64 + 20.0;
    let height = top + ph + 50.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, c) in comparisons.iter().enumerate() {
        let x0 = left + pw * k as f64;
        let all: Vec<f64> = c.scores_a.iter().chain(&c.scores_b).copied().collect();
        let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
        let pad = 0.05 * (hi - lo);
        let (lo, hi) = (lo - pad, hi + pad);
        let y = |v: f64| top + ph - (v - lo) / (hi - lo) * ph;

        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-weight="bold">{}</text>"#,
            x0 + pw / 2.0,
            esc(&c.name)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{x0}" y1="{top}" x2="{x0}" y2="{}" stroke="#444"/>"##,
            top + ph
        );
        for t in 0..=4 {
            let v = lo + (hi - lo) * t as f64 / 4.0;
            let _ = writeln!(
                s,
                r##"<text x="{}" y="{}" text-anchor="end" fill="#444">{v:.1}</text>"##,
                x0 - 4.0,
                y(v) + 4.0
            );
        }
        for (j, (label, scores)) in [(&c.label_a, &c.scores_a), (&c.label_b, &c.scores_b)].iter().enumerate() {
            let cx = x0 + pw * (0.3 + 0.4 * j as f64);
            let [mn, q1, md, q3, mx] = five_numbers(scores);
            let color = if j == 0 { "#8da0cb" } else { "#fc8d62" };
            let _ = writeln!(
                s,
                r##"<line x1="{cx}" y1="{}" x2="{cx}" y2="{}" stroke="#333"/>"##,
                y(mx),
                y(mn)
            );
            let _ = writeln!(
                s,
                r##"<rect x="{}" y="{}" width="40" height="{}" fill="{color}" stroke="#333"/>"##,
                cx - 20.0,
                y(q3),
                (y(q1) - y(q3)).max(0.5)
            );
            let _ = writeln!(
                s,
                r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#000" stroke-width="2"/>"##,
                cx - 20.0,
                y(md),
                cx + 20.0,
                y(md)
            );
            for v in scores.iter() {
                let _ = writeln!(
                    s,
                    r##"<circle cx="{}" cy="{}" r="2" fill="#222" fill-opacity="0.6"/>"##,
                    cx + 26.0,
                    y(*v)
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{cx}" y="{}" text-anchor="middle">{}</text>"#,
                top + ph + 16.0,
                esc(label)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">p = {:.2e} {}</text>"#,
            x0 + pw / 2.0,
            top + ph + 36.0,
            c.test.p,
            p_stars(c.test.p)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Episode-return curves (moving average over `window` episodes).
pub fn training_curves_svg(curves: &[(String, &TrainingLog)], window: usize) -> String {
    let (w, h, left, top) = (640.0, 320.0, 60.0, 30.0);
    let palette = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666"];
    let series: Vec<(String, Vec<(f64, f64)>)> = curves
        .iter()
        .map(|(name, log)| {
            let pts: Vec<(f64, f64)> = log
                .episodes
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    let from = (i + 1).saturating_sub(window.max(1));
                    let slice = &log.episodes[from..=i];
                    let avg = slice.iter().map(|x| x.total_reward).sum::<f64>() / slice.len() as f64;
                    (e.end_step as f64, avg)
                })
                .collect();
            (name.clone(), pts)
        })
        .collect();
    let xs = series.iter().flat_map(|s| s.1.iter().map(|p| p.0));
    let x_max = xs.fold(1.0_f64, f64::max);
    let ys: Vec<f64> = series.iter().flat_map(|s| s.1.iter().map(|p| p.1)).collect();
    let y_lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let y_hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (y_lo, y_hi) = if y_hi > y_lo { (y_lo, y_hi) } else { (y_lo.min(0.0) - 1.0, y_hi.max(0.0) + 1.0) };
    let px = |x: f64| left + x / x_max * w;
    let py = |y: f64| top + h - (y - y_lo) / (y_hi - y_lo) * h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
        left + w + 160.0,
        top + h + 40.0
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{w}" height="{h}" fill="none" stroke="#444"/>"##
    );
    for t in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * t as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.1}</text>"#, left - 4.0, py(v) + 4.0);
        let sx = x_max * t as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{sx:.0}</text>"#,
            px(sx),
            top + h + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">training step</text>"#,
        left + w / 2.0,
        top + h + 34.0
    );
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = palette[k % palette.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
            path.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            left + w + 10.0,
            top + 14.0 * (k + 1) as f64,
            esc(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
