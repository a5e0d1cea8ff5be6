use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use erpcal_tensor::Tensor;

use super::ChannelSummary;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapFormat {
    Csv,
    Pgm,
    Svg,
}

impl HeatmapFormat {
    pub fn extension(self) -> &'static str {
        match self {
            HeatmapFormat::Csv => "csv",
            HeatmapFormat::Pgm => "pgm",
            HeatmapFormat::Svg => "svg",
        }
    }
}

impl FromStr for HeatmapFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(HeatmapFormat::Csv),
            "pgm" => Ok(HeatmapFormat::Pgm),
            "svg" => Ok(HeatmapFormat::Svg),
            _ => Err(format!("unknown heatmap format {s:?} (csv|pgm|svg)")),
        }
    }
}

fn dims(names: &[String], values: &Tensor) -> Result<(usize, usize)> {
    match values.shape() {
        &[c, t] if c == names.len() => Ok((c, t)),
        s => Err(Error::Shape(format!("heatmap {s:?} for {} channel names", names.len()))),
    }
}

fn range(values: &Tensor) -> (f64, f64) {
    values.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Position on the diverging scale in `[-1, 1]`, symmetric about 0.
fn scaled(v: f64, max_abs: f64) -> f64 {
    if max_abs > 0.0 {
        (v / max_abs).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Header `channel,0,1,..`; one row per channel; shortest round-trip floats.
pub fn heatmap_csv(names: &[String], values: &Tensor) -> Result<String> {
    let (_, t) = dims(names, values)?;
    let mut out = String::from("channel");
    for i in 0..t {
        write!(out, ",{i}").expect("string write");
    }
    out.push('\n');
    for (name, row) in names.iter().zip(values.data().chunks_exact(t)) {
        out.push_str(name);
        for v in row {
            write!(out, ",{v}").expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Plain PGM, one pixel per cell: 0 maps to grey 128, `-max|v|` to black
/// and `+max|v|` to white.
pub fn heatmap_pgm(values: &Tensor) -> Result<String> {
    let (c, t) = match values.shape() {
        &[c, t] => (c, t),
        s => return Err(Error::Shape(format!("heatmap {s:?} is not [C, T]"))),
    };
    let (lo, hi) = range(values);
    let max_abs = lo.abs().max(hi.abs());
    let mut out = format!("P2\n# min {lo} max {hi}\n{t} {c}\n255\n");
    for row in values.data().chunks_exact(t) {
        let line: Vec<String> =
            row.iter().map(|&v| ((127.5 * (1.0 + scaled(v, max_abs))).round() as u8).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

const NEG: [f64; 3] = [33.0, 102.0, 172.0];
const MID: [f64; 3] = [128.0, 128.0, 128.0];
const POS: [f64; 3] = [178.0, 24.0, 43.0];

fn colour(s: f64) -> String {
    let end = if s < 0.0 { NEG } else { POS };
    let a = s.abs();
    let c: Vec<u8> = (0..3).map(|i| (MID[i] + a * (end[i] - MID[i])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

const CELL_W: usize = 6;
const CELL_H: usize = 14;
const LEFT: usize = 56;
const TOP: usize = 22;

/// Channel x time grid on a blue-grey-red scale centred at 0, with the
/// value range written above the grid.
pub fn heatmap_svg(names: &[String], values: &Tensor) -> Result<String> {
    let (c, t) = dims(names, values)?;
    let (lo, hi) = range(values);
    let max_abs = lo.abs().max(hi.abs());
    let (w, h) = (LEFT + t * CELL_W, TOP + c * CELL_H);
    let mut out = String::new();
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).expect("write");
    writeln!(out, r#"<text x="{LEFT}" y="14" font-family="monospace" font-size="11">min {lo:.6e} max {hi:.6e}</text>"#).expect("write");
    for (ch, (name, row)) in names.iter().zip(values.data().chunks_exact(t)).enumerate() {
        let y = TOP + ch * CELL_H;
        writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="monospace" font-size="10" text-anchor="end">{}</text>"#,
            LEFT - 4,
            y + CELL_H - 3,
            escape(name)
        )
        .expect("write");
        for (i, &v) in row.iter().enumerate() {
            writeln!(
                out,
                r#"<rect x="{}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{}"/>"#,
                LEFT + i * CELL_W,
                colour(scaled(v, max_abs))
            )
            .expect("write");
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn export_heatmap(path: impl AsRef<Path>, names: &[String], values: &Tensor, format: HeatmapFormat) -> Result<()> {
    let text = match format {
        HeatmapFormat::Csv => heatmap_csv(names, values)?,
        HeatmapFormat::Pgm => {
            dims(names, values)?;
            heatmap_pgm(values)?
        }
        HeatmapFormat::Svg => heatmap_svg(names, values)?,
    };
    std::fs::write(path, text)?;
    Ok(())
}

/// `channel,value` rows in montage order.
pub fn summary_csv(s: &ChannelSummary) -> String {
    let mut out = String::from("channel,value\n");
    for (n, v) in s.channel_names.iter().zip(&s.values) {
        writeln!(out, "{n},{v}").expect("string write");
    }
    out
}
