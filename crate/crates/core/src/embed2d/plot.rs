use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of a scatter file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedPoint {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub label: String,
    pub channel: String,
}

/// `id,x,y,label,channel`. Coordinates use the shortest representation that
/// reads back to the same `f64`.
pub fn write_embedding_csv(path: impl AsRef<Path>, points: &[EmbeddedPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "x", "y", "label", "channel"])?;
    for p in points {
        w.write_record([p.id.as_str(), &p.x.to_string(), &p.y.to_string(), &p.label, &p.channel])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embedding_csv(path: impl AsRef<Path>) -> Result<Vec<EmbeddedPoint>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["id", "x", "y", "label", "channel"] {
        return Err(Error::format(path, "expected header id,x,y,label,channel"));
    }
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// `iteration,kl`, iterations counted from 1.
pub fn write_trace_csv(path: impl AsRef<Path>, kl_trace: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "kl"])?;
    for (i, kl) in kl_trace.iter().enumerate() {
        w.write_record([(i + 1).to_string(), kl.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

const COLORS: [&str; 6] = ["#c0392b", "#2e86c1", "#27ae60", "#8e44ad", "#d35400", "#7f8c8d"];

fn marker(style: usize, cx: f64, cy: f64, title: &str) -> String {
    let class = format!("marker g{style}");
    let r = 4.0;
    match (style / COLORS.len()) % 2 {
        0 => format!(r#"<circle class="{class}" cx="{cx:.2}" cy="{cy:.2}" r="{r}"><title>{title}</title></circle>"#),
        _ => format!(
            r#"<rect class="{class}" x="{:.2}" y="{:.2}" width="{}" height="{}"><title>{title}</title></rect>"#,
            cx - r,
            cy - r,
            2.0 * r,
            2.0 * r
        ),
    }
}

/// Self-contained scatter plot. Each `(label, channel)` group gets its own
/// style class `g<k>`, numbered in sorted group order; every point is one
/// element of class `marker`.
pub fn write_embedding_svg(path: impl AsRef<Path>, points: &[EmbeddedPoint]) -> Result<()> {
    let (w, h, pad) = (480.0, 480.0, 30.0);
    let mut groups: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for p in points {
        groups.insert((p.label.as_str(), p.channel.as_str()), 0);
    }
    for (k, v) in groups.values_mut().enumerate() {
        *v = k;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let sx = if x1 > x0 { (w - 2.0 * pad) / (x1 - x0) } else { 0.0 };
    let sy = if y1 > y0 { (h - 2.0 * pad) / (y1 - y0) } else { 0.0 };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{}" font-family="sans-serif" font-size="11">"#,
        h + 20.0 * groups.len() as f64
    );
    s.push_str("<style>");
    for k in groups.values() {
        let c = COLORS[k % COLORS.len()];
        let _ = write!(s, ".g{k}{{fill:{c};fill-opacity:0.8;stroke:black;stroke-width:0.5}} ");
    }
    s.push_str("</style>\n");
    for p in points {
        let cx = if sx > 0.0 { pad + (p.x - x0) * sx } else { w / 2.0 };
        let cy = if sy > 0.0 { h - pad - (p.y - y0) * sy } else { h / 2.0 };
        let k = groups[&(p.label.as_str(), p.channel.as_str())];
        s.push_str(&marker(k, cx, cy, &p.id));
        s.push('\n');
    }
    for (i, ((label, channel), k)) in groups.iter().enumerate() {
        let y = h + 14.0 + 20.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<g class="legend"><circle class="g{k}" cx="{pad}" cy="{}" r="4"/><text x="{}" y="{y}">{label} / {channel}</text></g>"#,
            y - 4.0,
            pad + 10.0
        );
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s)?;
    Ok(())
}
