//! Standalone SVG line plots for decay series: no plotting dependency,
//! inspectable as text.  Log-log plots can carry reference slope guides.

use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("empty series")]
    Empty,
    #[error("log-log plot needs positive data, got ({0}, {1})")]
    NonPositive(f64, f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    LogLog,
    Linear,
}

/// Reference guide line: slope on the plot's axes plus a short label.
#[derive(Debug, Clone)]
pub struct Guide {
    pub slope: f64,
    pub label: String,
}

const W: f64 = 640.0;
const H: f64 = 440.0;
const ML: f64 = 70.0;
const MR: f64 = 20.0;
const MT: f64 = 20.0;
const MB: f64 = 50.0;

pub fn emit_plot(
    series: &[(f64, f64)],
    kind: PlotKind,
    guides: &[Guide],
    title: &str,
    path: &Path,
) -> Result<(), PlotError> {
    if series.is_empty() {
        return Err(PlotError::Empty);
    }
    let map = |v: f64, t: f64| -> Result<(f64, f64), PlotError> {
        match kind {
            PlotKind::LogLog => {
                if !(t > 0.0 && v > 0.0) {
                    return Err(PlotError::NonPositive(t, v));
                }
                Ok((t.log10(), v.log10()))
            }
            PlotKind::Linear => Ok((t, v)),
        }
    };
    let pts: Vec<(f64, f64)> =
        series.iter().map(|&(t, v)| map(v, t)).collect::<Result<Vec<_>, _>>()?;
    let xmin = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let xmax = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let ymin = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let ymax = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let xspan = (xmax - xmin).max(1e-12);
    let yspan = (ymax - ymin).max(1e-12);
    let to_px = |x: f64, y: f64| {
        let px = ML + (x - xmin) / xspan * (W - ML - MR);
        let py = H - MB - (y - ymin) / yspan * (H - MT - MB);
        (px, py)
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"14\" font-family=\"monospace\" font-size=\"13\">{}</text>",
        ML,
        xml_escape(title)
    );
    // Axes box and min/max labels.
    let _ = writeln!(
        svg,
        "<rect x=\"{ML}\" y=\"{MT}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        W - ML - MR,
        H - MT - MB
    );
    let axis_label = |v: f64| match kind {
        PlotKind::LogLog => format!("1e{v:.2}"),
        PlotKind::Linear => format!("{v:.3e}"),
    };
    let _ = writeln!(
        svg,
        "<text x=\"{ML}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\">{}</text>",
        H - MB + 16.0,
        axis_label(xmin)
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"11\">{}</text>",
        W - MR,
        H - MB + 16.0,
        axis_label(xmax)
    );
    let _ = writeln!(
        svg,
        "<text x=\"4\" y=\"{}\" font-family=\"monospace\" font-size=\"11\">{}</text>",
        H - MB,
        axis_label(ymin)
    );
    let _ = writeln!(
        svg,
        "<text x=\"4\" y=\"{}\" font-family=\"monospace\" font-size=\"11\">{}</text>",
        MT + 10.0,
        axis_label(ymax)
    );

    // Guide lines through the series midpoint with the requested slope.
    let midx = 0.5 * (xmin + xmax);
    let midy = {
        // Interpolated series value near the midpoint.
        let mut best = pts[0];
        for p in &pts {
            if (p.0 - midx).abs() < (best.0 - midx).abs() {
                best = *p;
            }
        }
        best.1
    };
    for (gi, guide) in guides.iter().enumerate() {
        let y0 = midy + guide.slope * (xmin - midx);
        let y1 = midy + guide.slope * (xmax - midx);
        let (x0p, y0p) = to_px(xmin, y0);
        let (x1p, y1p) = to_px(xmax, y1);
        let _ = writeln!(
            svg,
            "<line x1=\"{x0p:.2}\" y1=\"{y0p:.2}\" x2=\"{x1p:.2}\" y2=\"{y1p:.2}\" stroke=\"gray\" stroke-dasharray=\"6,4\"/>"
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" fill=\"gray\">{}</text>",
            x1p - 120.0,
            y1p - 6.0 - 14.0 * gi as f64,
            xml_escape(&guide.label)
        );
    }

    // Data polyline and markers.
    let mut poly = String::new();
    for (x, y) in &pts {
        let (px, py) = to_px(*x, *y);
        let _ = write!(poly, "{px:.2},{py:.2} ");
    }
    let _ = writeln!(
        svg,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"crimson\" stroke-width=\"1.5\"/>",
        poly.trim()
    );
    for (x, y) in &pts {
        let (px, py) = to_px(*x, *y);
        let _ = writeln!(svg, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"2.2\" fill=\"crimson\"/>");
    }
    let _ = writeln!(svg, "</svg>");
    std::fs::write(path, svg)?;
    Ok(())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Minimal well-formedness check used by the tests: every opened tag is
/// closed in order.
pub fn xml_balanced(text: &str) -> bool {
    let mut stack: Vec<String> = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('<') {
        rest = &rest[start + 1..];
        let Some(end) = rest.find('>') else { return false };
        let tag = &rest[..end];
        rest = &rest[end + 1..];
        if tag.starts_with('?') || tag.starts_with('!') || tag.ends_with('/') {
            continue;
        }
        if let Some(name) = tag.strip_prefix('/') {
            match stack.pop() {
                Some(open) if open == name => {}
                _ => return false,
            }
        } else {
            let name: String =
                tag.chars().take_while(|c| !c.is_whitespace()).collect();
            stack.push(name);
        }
    }
    stack.is_empty()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_power_law_plot_is_well_formed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.svg");
        let series: Vec<(f64, f64)> =
            (1..30).map(|i| (i as f64, 3.0 * (i as f64).powf(-1.5))).collect();
        emit_plot(
            &series,
            PlotKind::LogLog,
            &[Guide { slope: -1.5, label: "slope -1.5".into() }],
            "decay",
            &path,
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(xml_balanced(&text), "svg is not well formed");
        assert!(text.contains("polyline"));
        assert!(text.contains("slope -1.5"));
    }

    #[test]
    fn loglog_rejects_nonpositive_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.svg");
        assert!(matches!(
            emit_plot(&[], PlotKind::LogLog, &[], "x", &path),
            Err(PlotError::Empty)
        ));
        assert!(matches!(
            emit_plot(&[(1.0, -2.0)], PlotKind::LogLog, &[], "x", &path),
            Err(PlotError::NonPositive(..))
        ));
    }
}
