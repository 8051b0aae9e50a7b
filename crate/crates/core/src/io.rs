//! Text heatmap format and JSON keypoint files.
//!
//! Heatmap text: a header line `H W g`, then `H` lines of `W` space-separated
//! reals, row 0 first. Values are written with the shortest representation
//! that parses back to the identical `f64`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{GridGeometry, Heatmap, Keypoint};

pub fn format_heatmap(h: &Heatmap) -> String {
    let g = h.geometry();
    let mut out = String::new();
    let _ = writeln!(out, "{} {} {}", g.height(), g.width(), g.pixel_size());
    for row in 0..g.height() {
        let line: Vec<String> = (0..g.width()).map(|c| h.get(c, row).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Parses the text heatmap format. The image scale of the result is 1.
pub fn parse_heatmap(text: &str) -> Result<Heatmap> {
    parse_heatmap_with_scale(text, 1.0)
}

pub fn parse_heatmap_with_scale(text: &str, image_scale: f64) -> Result<Heatmap> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty heatmap file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(Error::Parse(format!("header must be `H W g`, got `{header}`")));
    }
    let height: usize = fields[0]
        .parse()
        .map_err(|_| Error::Parse(format!("bad height `{}`", fields[0])))?;
    let width: usize = fields[1]
        .parse()
        .map_err(|_| Error::Parse(format!("bad width `{}`", fields[1])))?;
    let g: f64 = fields[2]
        .parse()
        .map_err(|_| Error::Parse(format!("bad pixel size `{}`", fields[2])))?;
    let geometry = GridGeometry::new(width, height, g, image_scale)?;

    let mut values = Vec::with_capacity(geometry.len());
    let mut rows = 0;
    for (r, line) in lines.enumerate() {
        let before = values.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::Parse(format!("row {r}: bad value `{tok}`")))?;
            values.push(v);
        }
        if values.len() - before != width {
            return Err(Error::Parse(format!(
                "row {r}: expected {width} values, got {}",
                values.len() - before
            )));
        }
        rows += 1;
    }
    if rows != height {
        return Err(Error::Parse(format!("expected {height} rows, got {rows}")));
    }
    Heatmap::new(geometry, values)
}

pub fn read_heatmap(path: impl AsRef<Path>) -> Result<Heatmap> {
    parse_heatmap(&std::fs::read_to_string(path)?)
}

pub fn write_heatmap(path: impl AsRef<Path>, h: &Heatmap) -> Result<()> {
    std::fs::write(path, format_heatmap(h))?;
    Ok(())
}

pub fn parse_keypoints(text: &str) -> Result<Vec<Keypoint>> {
    let kps: Vec<Keypoint> = serde_json::from_str(text)?;
    if let Some(i) = kps.iter().position(|k| !(k.x.is_finite() && k.y.is_finite())) {
        return Err(Error::NonFinite(i));
    }
    Ok(kps)
}

pub fn format_keypoints(kps: &[Keypoint]) -> String {
    serde_json::to_string(kps).expect("keypoints serialize")
}

pub fn read_keypoints(path: impl AsRef<Path>) -> Result<Vec<Keypoint>> {
    parse_keypoints(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_text_layout() {
        let g = GridGeometry::new(3, 2, 0.5, 1.0).unwrap();
        let h = Heatmap::new(g, vec![0.0, 1.5, -2.0, 0.1, 1e-20, 3.0]).unwrap();
        let text = format_heatmap(&h);
        assert_eq!(text, "2 3 0.5\n0 1.5 -2\n0.1 0.00000000000000000001 3\n");
        assert_eq!(parse_heatmap(&text).unwrap(), h);
    }

    #[test]
    fn heatmap_parse_errors() {
        assert!(parse_heatmap("").is_err());
        assert!(parse_heatmap("2 2\n1 2\n3 4\n").is_err());
        assert!(parse_heatmap("2 2 1\n1 2\n3\n").is_err());
        assert!(parse_heatmap("2 2 1\n1 2\n").is_err());
        assert!(parse_heatmap("2 2 1\n1 x\n3 4\n").is_err());
        assert!(parse_heatmap("2 2 1\n1 NaN\n3 4\n").is_err());
    }

    #[test]
    fn keypoint_json() {
        let text = r#"[{"x":1.25,"y":2.25,"visible":true},{"x":0,"y":3,"visible":false}]"#;
        let kps = parse_keypoints(text).unwrap();
        assert_eq!(kps, vec![Keypoint::new(1.25, 2.25), Keypoint::hidden(0.0, 3.0)]);
        assert_eq!(
            format_keypoints(&kps),
            r#"[{"x":1.25,"y":2.25,"visible":true},{"x":0.0,"y":3.0,"visible":false}]"#
        );
        assert!(parse_keypoints(r#"[{"x":1}]"#).is_err());
    }
}
