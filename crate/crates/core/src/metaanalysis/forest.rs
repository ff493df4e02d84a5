//! Forest-plot data as CSV and a minimal SVG rendering.

use std::fmt::Write as _;
use std::io;

use serde::Serialize;

use super::{EffectEstimate, PooledEffect};
use crate::corpus::VariantTag;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Unit,
    Pooled,
    Prediction,
    Sesoi,
}

#[derive(Debug, Clone, Serialize)]
pub struct ForestRow {
    pub contrast: VariantTag,
    pub kind: RowKind,
    pub label: String,
    pub effect: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub weight_pct: Option<f64>,
}

/// One contrast's units plus its pooled summary.
#[derive(Debug, Clone, Copy)]
pub struct ForestPanel<'a, T> {
    pub effects: &'a [EffectEstimate<T>],
    pub pooled: &'a PooledEffect<T>,
}

impl<T: Real> ForestPanel<'_, T> {
    pub fn rows(&self) -> Vec<ForestRow> {
        let contrast = self
            .pooled
            .contrast
            .or_else(|| self.effects.first().map(|e| e.contrast))
            .unwrap_or(VariantTag::A);
        let mut rows: Vec<ForestRow> = self
            .effects
            .iter()
            .zip(&self.pooled.weights)
            .map(|(e, w)| ForestRow {
                contrast,
                kind: RowKind::Unit,
                label: e.unit_id.clone(),
                effect: e.effect.as_f64(),
                ci_lower: e.ci_lower.as_f64(),
                ci_upper: e.ci_upper.as_f64(),
                weight_pct: Some(w.as_f64()),
            })
            .collect();
        let p = self.pooled;
        rows.push(ForestRow {
            contrast,
            kind: RowKind::Pooled,
            label: "pooled".into(),
            effect: p.estimate.as_f64(),
            ci_lower: p.ci_lower.as_f64(),
            ci_upper: p.ci_upper.as_f64(),
            weight_pct: Some(100.0),
        });
        if let (Some(lo), Some(hi)) = (p.prediction_lower, p.prediction_upper) {
            rows.push(ForestRow {
                contrast,
                kind: RowKind::Prediction,
                label: "prediction".into(),
                effect: p.estimate.as_f64(),
                ci_lower: lo.as_f64(),
                ci_upper: hi.as_f64(),
                weight_pct: None,
            });
        }
        let s = p.sesoi.as_f64();
        rows.push(ForestRow {
            contrast,
            kind: RowKind::Sesoi,
            label: "sesoi".into(),
            effect: 0.0,
            ci_lower: -s,
            ci_upper: s,
            weight_pct: None,
        });
        rows
    }
}

pub fn write_csv<W: io::Write, T: Real>(
    panels: &[ForestPanel<'_, T>],
    writer: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for panel in panels {
        for row in panel.rows() {
            w.serialize(row)?;
        }
    }
    w.flush()?;
    Ok(())
}

const WIDTH: f64 = 720.0;
const LABEL_W: f64 = 180.0;
const ROW_H: f64 = 22.0;
const MARGIN: f64 = 30.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Stacked forest plot, one block per contrast, with the SESOI band shaded.
pub fn render_svg<T: Real>(panels: &[ForestPanel<'_, T>]) -> String {
    let blocks: Vec<Vec<ForestRow>> = panels
        .iter()
        .map(|p| {
            p.rows()
                .into_iter()
                .filter(|r| r.kind != RowKind::Sesoi)
                .collect()
        })
        .collect();
    let sesoi = panels.first().map_or(2.0, |p| p.pooled.sesoi.as_f64());
    let (mut lo, mut hi) = (-sesoi, sesoi);
    for r in blocks.iter().flatten() {
        lo = lo.min(r.ci_lower);
        hi = hi.max(r.ci_upper);
    }
    let pad = (hi - lo).max(1.0) * 0.05;
    let (lo, hi) = (lo - pad, hi + pad);
    let plot_w = WIDTH - LABEL_W - MARGIN;
    let x = |v: f64| LABEL_W + (v - lo) / (hi - lo) * plot_w;
    let n_rows: usize = blocks.iter().map(|b| b.len() + 1).sum();
    let height = MARGIN * 2.0 + n_rows as f64 * ROW_H;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r##"<rect x="{:.2}" y="{MARGIN}" width="{:.2}" height="{:.2}" fill="#e8f0fe"/>"##,
        x(-sesoi),
        x(sesoi) - x(-sesoi),
        height - 2.0 * MARGIN
    );
    let _ = writeln!(
        s,
        r##"<line x1="{0:.2}" y1="{MARGIN}" x2="{0:.2}" y2="{1:.2}" stroke="#555" stroke-dasharray="4 3"/>"##,
        x(0.0),
        height - MARGIN
    );
    let mut y = MARGIN;
    for (panel, rows) in panels.iter().zip(&blocks) {
        y += ROW_H;
        let tag = panel.pooled.contrast.map_or("?".to_string(), |t| t.to_string());
        let _ = writeln!(
            s,
            r#"<text x="4" y="{y:.2}" font-weight="bold">Variant {tag} vs A ({})</text>"#,
            panel.pooled.verdict
        );
        for r in rows {
            y += ROW_H;
            let mid = y - 4.0;
            let _ = writeln!(s, r#"<text x="14" y="{y:.2}">{}</text>"#, escape(&r.label));
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{mid:.2}" x2="{:.2}" y2="{mid:.2}" stroke="black"/>"#,
                x(r.ci_lower),
                x(r.ci_upper)
            );
            match r.kind {
                RowKind::Unit => {
                    let size = 3.0 + r.weight_pct.unwrap_or(0.0).sqrt();
                    let _ = writeln!(
                        s,
                        r#"<rect x="{:.2}" y="{:.2}" width="{size:.2}" height="{size:.2}"/>"#,
                        x(r.effect) - size / 2.0,
                        mid - size / 2.0
                    );
                }
                RowKind::Pooled => {
                    let (l, c, h) = (x(r.ci_lower), x(r.effect), x(r.ci_upper));
                    let _ = writeln!(
                        s,
                        r#"<polygon points="{l:.2},{mid:.2} {c:.2},{:.2} {h:.2},{mid:.2} {c:.2},{:.2}"/>"#,
                        mid - 6.0,
                        mid + 6.0
                    );
                }
                RowKind::Prediction | RowKind::Sesoi => {}
            }
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">difference vs A (p.p.)</text>"#,
        LABEL_W + plot_w / 2.0,
        height - 8.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metaanalysis::{pool_dl, EffectEstimate};

    #[test]
    fn rows_and_svg() {
        let effects: Vec<EffectEstimate<f64>> = [(1.0, 1.0), (3.0, 1.0), (8.0, 4.0)]
            .iter()
            .enumerate()
            .map(|(i, &(y, v))| EffectEstimate {
                unit_id: format!("m{i}<x>"),
                contrast: VariantTag::C,
                effect: y,
                variance: v,
                ci_lower: y - 2.0,
                ci_upper: y + 2.0,
            })
            .collect();
        let pooled = pool_dl(&effects).unwrap();
        let panel = ForestPanel {
            effects: &effects,
            pooled: &pooled,
        };
        let rows = panel.rows();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[3].kind, RowKind::Pooled);
        let mut buf = Vec::new();
        write_csv(&[panel.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("contrast,kind,label,effect,ci_lower,ci_upper,weight_pct"));
        assert!(text.contains("C,sesoi,sesoi,0.0,-2.0,2.0,"));
        let svg = render_svg(&[panel]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("m0&lt;x&gt;"));
        assert!(svg.contains("<polygon"));
    }
}
