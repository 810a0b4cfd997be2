//! Training-log rendering: parse the tab-separated epoch rows back in and
//! draw learning-rate, loss, and validation-metric curves as a single SVG
//! with no external dependencies.

use std::fmt::Write as _;

use ecg_mamba_core::train::EpochRow;

/// Parse a `train.log`: five tab-separated fields per line
/// (epoch, lr, train_loss, val_auprc, val_auroc). Any malformed line is an
/// error naming its line number; an empty log is an error too.
pub fn parse_log(text: &str) -> Result<Vec<EpochRow>, String> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(format!(
                "log line {}: expected 5 tab-separated fields, got {}",
                lineno + 1,
                fields.len()
            ));
        }
        let num = |i: usize| -> Result<f64, String> {
            fields[i].parse().map_err(|_| {
                format!("log line {}: bad number {:?}", lineno + 1, fields[i])
            })
        };
        rows.push(EpochRow {
            epoch: fields[0].parse().map_err(|_| {
                format!("log line {}: bad epoch {:?}", lineno + 1, fields[0])
            })?,
            lr: num(1)?,
            train_loss: num(2)?,
            val_auprc: num(3)?,
            val_auroc: num(4)?,
        });
    }
    if rows.is_empty() {
        return Err("log has no rows".into());
    }
    Ok(rows)
}

const W: f64 = 720.0;
const PANEL_H: f64 = 150.0;
const GAP: f64 = 46.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 34.0;

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    values: Vec<f64>,
}

/// One plot panel: y range from the data (5% padding) unless `fixed`
/// pins it, x spanning the epoch range.
fn panel(out: &mut String, y0: f64, title: &str, series: &[Series], fixed: Option<(f64, f64)>) {
    let (lo, hi) = match fixed {
        Some(d) => d,
        None => {
            let all = series.iter().flat_map(|s| s.values.iter().copied());
            let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
                (l.min(v), h.max(v))
            });
            if !(hi > lo) {
                let pad = lo.abs().max(1e-6) * 0.05;
                lo -= pad;
                hi += pad;
            }
            let pad = (hi - lo) * 0.05;
            (lo - pad, hi + pad)
        }
    };
    let n = series[0].values.len();
    let x_at = |i: usize| {
        let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
        LEFT + t * (W - LEFT - RIGHT)
    };
    let y_at = |v: f64| y0 + PANEL_H - (v - lo) / (hi - lo) * PANEL_H;

    let _ = writeln!(
        out,
        r#"<text x="{LEFT}" y="{:.2}" class="title">{title}</text>"#,
        y0 - 8.0
    );
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{y0:.2}" width="{:.2}" height="{PANEL_H}" class="frame"/>"#,
        W - LEFT - RIGHT
    );
    for (v, anchor_y) in [(hi, y0 + 10.0), (lo, y0 + PANEL_H)] {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{anchor_y:.2}" class="tick" text-anchor="end">{v:.4}</text>"#,
            LEFT - 6.0
        );
    }
    for s in series {
        let mut pts = String::new();
        for (i, v) in s.values.iter().enumerate() {
            let _ = write!(pts, "{:.2},{:.2} ", x_at(i), y_at(*v));
        }
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            pts.trim_end(),
            s.color
        );
    }
    if series.len() > 1 {
        let mut x = W - RIGHT - 10.0;
        for s in series.iter().rev() {
            let _ = writeln!(
                out,
                r#"<text x="{x:.2}" y="{:.2}" class="tick" text-anchor="end" fill="{}">{}</text>"#,
                y0 - 8.0,
                s.color,
                s.label
            );
            x -= 60.0;
        }
    }
}

/// Render three stacked panels (learning rate, training loss, validation
/// metrics) for the given epoch rows. `source` names the input log in a
/// comment, which is the plot's only provenance record.
pub fn render_svg(rows: &[EpochRow], source: &str) -> String {
    let h = TOP + 3.0 * (PANEL_H + GAP);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{h}" viewBox="0 0 {W} {h}">"#
    );
    let _ = writeln!(out, "<!-- rendered from {} -->", source.replace("--", "‑‑"));
    out.push_str(
        "<style>\
         text{font:11px monospace;fill:#222}\
         .title{font-size:13px;font-weight:bold}\
         .frame{fill:#fff;stroke:#999;stroke-width:1}\
         .tick{fill:#555}\
         </style>\n",
    );
    let _ = writeln!(out, r##"<rect width="{W}" height="{h}" fill="#fdfdfd"/>"##);

    let first = rows[0].epoch;
    let last = rows[rows.len() - 1].epoch;
    let col = |f: fn(&EpochRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();

    panel(
        &mut out,
        TOP,
        "learning rate",
        &[Series {
            label: "lr",
            color: "#6a51a3",
            values: col(|r| r.lr),
        }],
        None,
    );
    panel(
        &mut out,
        TOP + PANEL_H + GAP,
        "training loss",
        &[Series {
            label: "loss",
            color: "#d62728",
            values: col(|r| r.train_loss),
        }],
        None,
    );
    panel(
        &mut out,
        TOP + 2.0 * (PANEL_H + GAP),
        "validation metrics",
        &[
            Series {
                label: "auprc",
                color: "#1f77b4",
                values: col(|r| r.val_auprc),
            },
            Series {
                label: "auroc",
                color: "#ff7f0e",
                values: col(|r| r.val_auroc),
            },
        ],
        Some((0.0, 1.0)),
    );

    let y = h - GAP + 16.0;
    let _ = writeln!(
        out,
        r#"<text x="{LEFT}" y="{y:.2}" class="tick">epoch {first}</text>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{y:.2}" class="tick" text-anchor="end">epoch {last}</text>"#,
        W - RIGHT
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_log() -> String {
        let mut s = String::new();
        for e in 0..6 {
            s.push_str(&format!(
                "{e}\t{}\t{}\t{}\t{}\n",
                1e-5 + e as f64 * 1e-4,
                0.7 - 0.1 * e as f64,
                0.5 + 0.08 * e as f64,
                0.5 + 0.07 * e as f64
            ));
        }
        s
    }

    #[test]
    fn parses_its_own_log_format() {
        let rows = parse_log(&sample_log()).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].epoch, 0);
        assert_eq!(rows[5].lr, 1e-5 + 5e-4);
    }

    #[test]
    fn rejects_malformed_rows_by_line() {
        let err = parse_log("0\t1\t2\t3\t4\n1\t2\t3\n").unwrap_err();
        assert!(err.contains("line 2"), "{err}");
        let err = parse_log("0\tx\t2\t3\t4\n").unwrap_err();
        assert!(err.contains("bad number"), "{err}");
        assert!(parse_log("").is_err());
    }

    #[test]
    fn svg_is_wellformed_enough() {
        let rows = parse_log(&sample_log()).unwrap();
        let svg = render_svg(&rows, "train.log");
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert!(svg.contains("validation metrics"));
        // every open tag closed
        for tag in ["rect", "text", "polyline"] {
            let opens = svg.matches(&format!("<{tag} ")).count();
            let closed = svg.matches("/>").count() + svg.matches("</text>").count();
            assert!(opens <= closed, "unclosed {tag}");
        }
    }

    #[test]
    fn flat_series_still_renders() {
        let rows: Vec<EpochRow> = (0..3)
            .map(|e| EpochRow {
                epoch: e,
                lr: 1e-3,
                train_loss: 0.5,
                val_auprc: 0.5,
                val_auroc: 0.5,
            })
            .collect();
        let svg = render_svg(&rows, "x");
        assert!(!svg.contains("NaN"));
        assert!(!svg.contains("inf"));
    }
}
