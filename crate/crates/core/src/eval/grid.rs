use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A (layer, token position) probing location.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub layer: usize,
    pub position: String,
}

impl Cell {
    pub fn new(layer: usize, position: impl Into<String>) -> Self {
        Cell {
            layer,
            position: position.into(),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.layer, self.position)
    }
}

impl FromStr for Cell {
    type Err = Error;

    /// Parses `<layer>:<position>`, e.g. `12:exact_last`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("cell {s:?} is not <layer>:<position>"));
        let (layer, position) = s.split_once(':').ok_or_else(bad)?;
        let layer = layer.trim().parse().map_err(|_| bad())?;
        if position.is_empty() {
            return Err(bad());
        }
        Ok(Cell::new(layer, position))
    }
}

/// Validation AUC per (layer, position), plus bootstrap spread.
#[derive(Debug, Clone, PartialEq)]
pub struct AucGrid {
    pub layers: usize,
    pub positions: Vec<String>,
    /// Row-major `layers x positions`.
    pub auc: Vec<f64>,
    pub dispersion: Vec<f64>,
}

impl AucGrid {
    pub fn new(layers: usize, positions: Vec<String>) -> Self {
        let n = layers * positions.len();
        AucGrid {
            layers,
            positions,
            auc: vec![0.5; n],
            dispersion: vec![0.0; n],
        }
    }

    fn index(&self, layer: usize, pos: usize) -> usize {
        layer * self.positions.len() + pos
    }

    pub fn get(&self, layer: usize, pos: usize) -> f64 {
        self.auc[self.index(layer, pos)]
    }

    pub fn set(&mut self, layer: usize, pos: usize, auc: f64, dispersion: f64) {
        let i = self.index(layer, pos);
        self.auc[i] = auc;
        self.dispersion[i] = dispersion;
    }

    pub fn auc_at(&self, cell: &Cell) -> Option<f64> {
        let pos = self.positions.iter().position(|p| *p == cell.position)?;
        (cell.layer < self.layers).then(|| self.get(cell.layer, pos))
    }

    /// Highest-AUC cell; ties go to the lowest layer, then the earliest
    /// position.
    pub fn select_best_cell(&self) -> Result<Cell> {
        if self.layers == 0 || self.positions.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let mut best: Option<(usize, usize, f64)> = None;
        for layer in 0..self.layers {
            for pos in 0..self.positions.len() {
                let v = self.get(layer, pos);
                if v.is_nan() {
                    continue;
                }
                if best.is_none_or(|(_, _, b)| v > b) {
                    best = Some((layer, pos, v));
                }
            }
        }
        let (layer, pos, _) = best.unwrap_or((0, 0, f64::NAN));
        Ok(Cell::new(layer, self.positions[pos].clone()))
    }

    fn matrix_csv(&self, values: &[f64]) -> String {
        let mut out = String::from("layer");
        for p in &self.positions {
            out.push(',');
            out.push_str(p);
        }
        out.push('\n');
        for layer in 0..self.layers {
            write!(out, "{layer}").unwrap();
            for pos in 0..self.positions.len() {
                write!(out, ",{}", values[self.index(layer, pos)]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Heatmap as CSV: one row per layer, one column per position.
    pub fn to_csv(&self) -> String {
        self.matrix_csv(&self.auc)
    }

    pub fn dispersion_csv(&self) -> String {
        self.matrix_csv(&self.dispersion)
    }

    /// Parses the output of [`AucGrid::to_csv`]; dispersion is zeroed.
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidConfig(format!("grid csv: {msg}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty".into()))?;
        let mut cols = header.split(',');
        if cols.next() != Some("layer") {
            return Err(bad("first header column must be \"layer\"".into()));
        }
        let positions: Vec<String> = cols.map(str::to_string).collect();
        let mut auc = Vec::new();
        let mut layers = 0;
        for (row, line) in lines.enumerate() {
            let mut fields = line.split(',');
            let layer: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| bad(format!("row {row} has no layer index")))?;
            if layer != row {
                return Err(bad(format!("row {row} is labeled layer {layer}")));
            }
            let values: Vec<f64> = fields
                .map(|f| f.parse().map_err(|_| bad(format!("bad value {f:?}"))))
                .collect::<Result<_>>()?;
            if values.len() != positions.len() {
                return Err(bad(format!("row {row} has {} values", values.len())));
            }
            auc.extend(values);
            layers += 1;
        }
        let n = auc.len();
        Ok(AucGrid {
            layers,
            positions,
            auc,
            dispersion: vec![0.0; n],
        })
    }

    /// Heatmap as a standalone SVG document.
    pub fn to_svg(&self, title: &str) -> String {
        let rows: Vec<String> = (0..self.layers).map(|l| l.to_string()).collect();
        let values: Vec<Option<f64>> = self.auc.iter().copied().map(Some).collect();
        heatmap_svg(title, &rows, &self.positions, &values, (0.0, 0.5, 1.0))
    }
}

/// Diverging blue-white-red color for `v` on a `(lo, mid, hi)` scale.
fn diverging_color(v: f64, (lo, mid, hi): (f64, f64, f64)) -> String {
    let (t, toward) = if v >= mid {
        (((v - mid) / (hi - mid)).clamp(0.0, 1.0), (178.0, 24.0, 43.0))
    } else {
        (((mid - v) / (mid - lo)).clamp(0.0, 1.0), (33.0, 102.0, 172.0))
    };
    let mix = |c: f64| (255.0 + (c - 255.0) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(toward.0), mix(toward.1), mix(toward.2))
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders a labeled matrix; `None` cells are drawn grey.
pub(crate) fn heatmap_svg(
    title: &str,
    rows: &[String],
    cols: &[String],
    values: &[Option<f64>],
    scale: (f64, f64, f64),
) -> String {
    const CELL: usize = 36;
    const LEFT: usize = 90;
    const TOP: usize = 110;
    let width = LEFT + CELL * cols.len() + 20;
    let height = TOP + CELL * rows.len() + 20;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    )
    .unwrap();
    writeln!(svg, r#"<text x="4" y="14" font-size="13">{}</text>"#, escape(title)).unwrap();
    for (c, name) in cols.iter().enumerate() {
        let x = LEFT + c * CELL + CELL / 2;
        writeln!(
            svg,
            r#"<text x="{x}" y="{}" transform="rotate(-60 {x} {})">{}</text>"#,
            TOP - 6,
            TOP - 6,
            escape(name)
        )
        .unwrap();
    }
    for (r, name) in rows.iter().enumerate() {
        let y = TOP + r * CELL;
        writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LEFT - 6,
            y + CELL / 2 + 3,
            escape(name)
        )
        .unwrap();
        for c in 0..cols.len() {
            let x = LEFT + c * CELL;
            let (fill, label) = match values[r * cols.len() + c] {
                Some(v) => (diverging_color(v, scale), format!("{v:.2}")),
                None => ("#bdbdbd".to_string(), "-".to_string()),
            };
            writeln!(
                svg,
                r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="#ffffff"/><text x="{}" y="{}" text-anchor="middle">{label}</text>"##,
                x + CELL / 2,
                y + CELL / 2 + 3
            )
            .unwrap();
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(values: &[f64], layers: usize, positions: &[&str]) -> AucGrid {
        let mut g = AucGrid::new(layers, positions.iter().map(|s| s.to_string()).collect());
        g.auc.copy_from_slice(values);
        g
    }

    #[test]
    fn best_cell_unique_max() {
        let mut g = AucGrid::new(16, vec!["exact_first".into(), "exact_last".into()]);
        g.set(12, 1, 0.91, 0.01);
        assert_eq!(g.select_best_cell().unwrap(), Cell::new(12, "exact_last"));
    }

    #[test]
    fn best_cell_ties() {
        let mut g = AucGrid::new(8, vec!["eoq".into(), "exact_last".into()]);
        g.set(7, 0, 0.8, 0.0);
        g.set(3, 1, 0.8, 0.0);
        assert_eq!(g.select_best_cell().unwrap(), Cell::new(3, "exact_last"));
        let flat = AucGrid::new(4, vec!["eoq".into(), "exact_last".into()]);
        assert_eq!(flat.select_best_cell().unwrap(), Cell::new(0, "eoq"));
        assert!(AucGrid::new(0, vec![]).select_best_cell().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let g = grid(&[0.5, 0.1 + 0.2, 1.0 / 3.0, 0.987654321], 2, &["eoq", "gen_-1"]);
        let csv = g.to_csv();
        assert!(csv.starts_with("layer,eoq,gen_-1\n0,"));
        let back = AucGrid::from_csv(&csv).unwrap();
        assert_eq!(back.auc, g.auc);
        assert_eq!(back.positions, g.positions);
        assert_eq!(back.layers, 2);
        assert!(AucGrid::from_csv("pos,a\n0,1").is_err());
        assert!(AucGrid::from_csv("layer,a\n0,1,2").is_err());
    }

    #[test]
    fn cell_parse() {
        assert_eq!("12:exact_last".parse::<Cell>().unwrap(), Cell::new(12, "exact_last"));
        assert_eq!("3:gen_-1".parse::<Cell>().unwrap(), Cell::new(3, "gen_-1"));
        assert!("x:eoq".parse::<Cell>().is_err());
        assert!("3".parse::<Cell>().is_err());
        assert!("3:".parse::<Cell>().is_err());
    }

    #[test]
    fn svg_has_one_rect_per_cell() {
        let g = grid(&[0.2, 0.5, 0.9, 0.6, 0.7, 0.4], 2, &["a", "b<c", "d"]);
        let svg = g.to_svg("heat");
        assert_eq!(svg.matches("<rect").count(), 6);
        assert!(svg.contains("b&lt;c"));
        assert_eq!(diverging_color(0.5, (0.0, 0.5, 1.0)), "#ffffff");
        assert_eq!(diverging_color(1.0, (0.0, 0.5, 1.0)), "#b2182b");
    }
}
