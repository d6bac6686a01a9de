use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use avdnet::NetworkSpec;

const KEYS: [&str; 4] = ["input_size", "classes", "anchors", "widths"];

/// Parses a `key = value` network description on top of the default spec.
/// Recognized keys are `input_size`, `classes`, `anchors` (count) and
/// `widths` (seven comma- or space-separated channel counts).
pub fn parse_config(text: &str) -> Result<NetworkSpec> {
    let mut spec = NetworkSpec::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected `key = value`, found {line:?}", n + 1);
        };
        let (key, value) = (key.trim(), value.trim());
        let number = |v: &str| -> Result<usize> {
            v.parse()
                .with_context(|| format!("line {}: {key} value {v:?} is not a non-negative integer", n + 1))
        };
        match key {
            "input_size" => spec.input_size = number(value)?,
            "classes" => spec.num_classes = number(value)?,
            "anchors" => spec.num_anchors = number(value)?,
            "widths" => {
                let w: Vec<usize> = value
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(number)
                    .collect::<Result<_>>()?;
                spec.widths = w.as_slice().try_into().map_err(|_| {
                    anyhow::anyhow!("line {}: widths needs 7 values, found {}", n + 1, w.len())
                })?;
            }
            other => bail!("line {}: unknown key {other:?} (expected one of {KEYS:?})", n + 1),
        }
    }
    Ok(spec)
}

pub fn load_config(path: &Path) -> Result<NetworkSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("config {}", path.display()))
}

pub fn format_config(spec: &NetworkSpec) -> String {
    let mut out = String::new();
    let widths: Vec<String> = spec.widths.iter().map(usize::to_string).collect();
    let _ = writeln!(out, "input_size = {}", spec.input_size);
    let _ = writeln!(out, "classes = {}", spec.num_classes);
    let _ = writeln!(out, "anchors = {}", spec.num_anchors);
    let _ = writeln!(out, "widths = {}", widths.join(","));
    out
}
