//! CSV tables and the SVG architecture-evolution chart.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grower::{AppliedMorphism, PhaseHistory};
use crate::morphism::MorphismKind;

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// RFC 4180 CSV with CRLF record terminators.
pub fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    let write_all = |w: &mut csv::Writer<Vec<u8>>| -> csv::Result<()> {
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    };
    write_all(&mut w).expect("writing to memory cannot fail");
    w.into_inner().expect("flushed above")
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a CSV with a header row into `(header, rows)`.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let header = r
        .headers()
        .map_err(|e| Error::io(path, e.into()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(|e| Error::io(path, e.into()))?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

fn describe(a: &AppliedMorphism) -> String {
    format!(
        "{} L{}C{} ema={} dR={} score={}",
        a.id.kind.name(),
        a.id.layer,
        a.id.channel,
        fmt_f64(a.ema_delta_loss),
        a.applied_delta,
        fmt_f64(a.score)
    )
}

pub const HISTORY_HEADER: [&str; 10] = [
    "phase",
    "params",
    "train_loss",
    "eval_loss",
    "eval_acc",
    "loss_before_growth",
    "loss_after_growth",
    "widths",
    "num_applied",
    "applied",
];

pub fn history_csv(h: &PhaseHistory) -> Vec<u8> {
    let rows: Vec<Vec<String>> = h
        .phases
        .iter()
        .map(|p| {
            let widths: Vec<String> = p.widths_after.iter().map(usize::to_string).collect();
            let applied: Vec<String> = p.applied.iter().map(describe).collect();
            vec![
                p.phase.to_string(),
                p.params.to_string(),
                fmt_f64(p.train_loss),
                fmt_f64(p.eval_loss),
                fmt_f64(p.eval_acc),
                fmt_f64(p.loss_before_growth),
                fmt_f64(p.loss_after_growth),
                widths.join(" "),
                p.applied.len().to_string(),
                applied.join("; "),
            ]
        })
        .collect();
    csv_bytes(&HISTORY_HEADER, &rows)
}

/// Per-phase layer widths as bars; channels added by splits are drawn red,
/// channels removed by prunes as blue outlines above the bar.
pub fn arch_evolution_svg(h: &PhaseHistory) -> String {
    let mut columns: Vec<(String, Vec<usize>, Vec<usize>, Vec<usize>)> = Vec::new();
    if let Some(first) = h.phases.first() {
        let n = first.widths_before.len();
        columns.push(("seed".into(), first.widths_before.clone(), vec![0; n], vec![0; n]));
    }
    for p in &h.phases {
        let n = p.widths_after.len();
        let (mut splits, mut prunes) = (vec![0; n], vec![0; n]);
        for a in &p.applied {
            match a.id.kind {
                MorphismKind::Split => splits[a.id.layer] += 1,
                MorphismKind::Prune => prunes[a.id.layer] += 1,
            }
        }
        columns.push((format!("phase {}", p.phase + 1), p.widths_after.clone(), splits, prunes));
    }
    let layers = columns.first().map_or(0, |c| c.1.len());
    let max_w = columns
        .iter()
        .flat_map(|(_, w, _, p)| w.iter().zip(p).map(|(a, b)| a + b))
        .max()
        .unwrap_or(1)
        .max(1);
    let (bar, gap, group_gap, plot_h, top, left) = (10.0, 2.0, 14.0, 200.0, 30.0, 40.0);
    let group_w = layers as f64 * (bar + gap) + group_gap;
    let width = left + columns.len() as f64 * group_w + 20.0;
    let height = top + plot_h + 50.0;
    let unit = plot_h / max_w as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="9">
<title>Layer widths per phase</title>
<text x="{left}" y="16" font-size="11">channels per layer after each phase (red: split, blue: pruned)</text>"#
    );
    let base = top + plot_h;
    let _ = writeln!(s, r##"<line x1="{left}" y1="{base}" x2="{:.1}" y2="{base}" stroke="#000"/>"##, width - 20.0);
    for (ci, (label, widths, splits, prunes)) in columns.iter().enumerate() {
        let x0 = left + ci as f64 * group_w;
        for l in 0..layers {
            let x = x0 + l as f64 * (bar + gap);
            let kept = widths[l] - splits[l].min(widths[l]);
            let h_kept = kept as f64 * unit;
            let h_split = splits[l].min(widths[l]) as f64 * unit;
            let h_pruned = prunes[l] as f64 * unit;
            let _ = writeln!(
                s,
                r##"<rect x="{x:.1}" y="{:.1}" width="{bar}" height="{h_kept:.1}" fill="#888"><title>layer {l}: {} channels</title></rect>"##,
                base - h_kept,
                widths[l]
            );
            if splits[l] > 0 {
                let _ = writeln!(
                    s,
                    r##"<rect x="{x:.1}" y="{:.1}" width="{bar}" height="{h_split:.1}" fill="#d62728"><title>layer {l}: {} split</title></rect>"##,
                    base - h_kept - h_split,
                    splits[l]
                );
            }
            if prunes[l] > 0 {
                let _ = writeln!(
                    s,
                    r##"<rect x="{x:.1}" y="{:.1}" width="{bar}" height="{h_pruned:.1}" fill="none" stroke="#1f77b4" stroke-width="1.5"><title>layer {l}: {} pruned</title></rect>"##,
                    base - h_kept - h_split - h_pruned,
                    prunes[l]
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#,
            x0 + (layers as f64 * (bar + gap)) / 2.0,
            base + 14.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Pearson correlation, `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.len() < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}
