//! Artifact writers: atomic file output, episode CSV/JSON, belief traces
//! and a minimal native SVG plotter for overhead views.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::mpc::EpisodeLog;
use crate::Result;

/// Writes a file by writing to a sibling temp file first and renaming into
/// place, so readers never observe partial content.
pub fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut tmp = PathBuf::from(path);
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    tmp.set_file_name(format!(".{name}.tmp"));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Per-step states and controls as CSV with header
/// `step,x0..x{n-1},u0..u{m-1}` (controls empty on the final row).
pub fn episode_csv(log: &EpisodeLog) -> String {
    let n_x = log.states.first().map(|s| s.len()).unwrap_or(0);
    let n_u = log.controls.first().map(|u| u.len()).unwrap_or(0);
    let mut out = String::from("step");
    for i in 0..n_x {
        let _ = write!(out, ",x{i}");
    }
    for i in 0..n_u {
        let _ = write!(out, ",u{i}");
    }
    out.push('\n');
    for (t, state) in log.states.iter().enumerate() {
        let _ = write!(out, "{t}");
        for v in state {
            let _ = write!(out, ",{v:.17e}");
        }
        if let Some(u) = log.controls.get(t) {
            for v in u {
                let _ = write!(out, ",{v:.17e}");
            }
        } else {
            for _ in 0..n_u {
                out.push(',');
            }
        }
        out.push('\n');
    }
    out
}

/// Belief trace as CSV: `step,mode,probability`.
pub fn belief_csv(log: &EpisodeLog) -> String {
    let mut out = String::from("step,mode,probability\n");
    for (t, belief) in log.beliefs.iter().enumerate() {
        if let Some(probs) = belief {
            for (mode, p) in probs.iter().enumerate() {
                let _ = write!(out, "{t},{mode},{p:.17e}\n");
            }
        }
    }
    out
}

/// Episode summary as pretty JSON.
pub fn episode_summary_json(log: &EpisodeLog) -> Result<String> {
    let summary = serde_json::json!({
        "status": log.status,
        "steps": log.controls.len(),
        "final_progress": log.final_progress,
        "min_distance": log.min_distance,
        "violation_steps": log.violation_steps,
        "max_violation": log.max_violation.iter().cloned().fold(0.0f64, f64::max),
        "degraded_steps": log.degraded_steps,
        "belief_trace": log.beliefs,
        "mode_counts": log.mode_counts,
    });
    serde_json::to_string_pretty(&summary)
        .map_err(|e| crate::Error::Io(std::io::Error::other(e)))
}

/// Minimal SVG scene: world-coordinate polylines, circles and lines
/// rendered onto a fixed viewport.
pub struct SvgCanvas {
    width: f64,
    height: f64,
    world: (f64, f64, f64, f64),
    body: String,
}

impl SvgCanvas {
    /// `world` is `(x_min, y_min, x_max, y_max)`.
    pub fn new(width: f64, height: f64, world: (f64, f64, f64, f64)) -> Self {
        let mut body = String::new();
        let _ = write!(
            body,
            r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#
        );
        Self {
            width,
            height,
            world,
            body,
        }
    }

    fn tx(&self, x: f64) -> f64 {
        let (x0, _, x1, _) = self.world;
        (x - x0) / (x1 - x0) * self.width
    }

    fn ty(&self, y: f64) -> f64 {
        let (_, y0, _, y1) = self.world;
        // Flip: SVG y grows downward.
        self.height - (y - y0) / (y1 - y0) * self.height
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], color: &str, stroke: f64) {
        if points.len() < 2 {
            return;
        }
        let pts: Vec<String> = points
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", self.tx(*x), self.ty(*y)))
            .collect();
        let _ = write!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{stroke}"/>"#,
            pts.join(" ")
        );
    }

    pub fn circle(&mut self, center: (f64, f64), world_radius: f64, color: &str, fill: bool) {
        let r = world_radius / (self.world.2 - self.world.0) * self.width;
        let fill_attr = if fill { color } else { "none" };
        let _ = write!(
            self.body,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="{fill_attr}" stroke="{color}"/>"#,
            self.tx(center.0),
            self.ty(center.1),
            r
        );
    }

    pub fn line(&mut self, a: (f64, f64), b: (f64, f64), color: &str, stroke: f64) {
        let _ = write!(
            self.body,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="{stroke}"/>"#,
            self.tx(a.0),
            self.ty(a.1),
            self.tx(b.0),
            self.ty(b.1)
        );
    }

    pub fn text(&mut self, at: (f64, f64), content: &str, size: f64) {
        let _ = write!(
            self.body,
            r#"<text x="{:.2}" y="{:.2}" font-size="{size}" font-family="monospace">{content}</text>"#,
            self.tx(at.0),
            self.ty(at.1)
        );
    }

    pub fn render(&self) -> String {
        format!(
            r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">{}</svg>
"#,
            self.width, self.height, self.width, self.height, self.body
        )
    }
}

/// Color palette for modes/agents.
pub const PALETTE: [&str; 6] = ["#1f77b4", "#2ca02c", "#d62728", "#ff7f0e", "#9467bd", "#8c564b"];
