//! `hypotheses.txt`: one ranked pose per line.

use std::fmt::Write;
use std::path::Path;

use lchf::inference::Hypothesis;
use lchf::Pose6D;
use nalgebra::{Matrix3, Vector3};

pub const HEADER: &str = "# rank score valid r11 r12 r13 r21 r22 r23 r31 r32 r33 tx ty tz";

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisLine {
    pub rank: usize,
    pub score: f64,
    pub valid: bool,
    pub pose: Pose6D,
}

pub fn format(object_id: &str, theta_valid: f64, hyps: &[Hypothesis]) -> String {
    let mut s = format!("# object {object_id}\n# theta_valid {theta_valid}\n{HEADER}\n");
    for (rank, h) in hyps.iter().enumerate() {
        let r = h.pose.rotation_matrix();
        let t = h.pose.translation();
        let _ = write!(s, "{rank} {} {}", h.score, u8::from(h.valid));
        for i in 0..3 {
            for j in 0..3 {
                let _ = write!(s, " {}", r[(i, j)]);
            }
        }
        let _ = writeln!(s, " {} {} {}", t.x, t.y, t.z);
    }
    s
}

pub fn parse(text: &str, path: &Path) -> lchf::Result<Vec<HypothesisLine>> {
    let err = |line: usize, reason: String| lchf::Error::Parse {
        path: path.to_path_buf(),
        reason: format!("line {line}: {reason}"),
    };
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 15 {
            return Err(err(n + 1, format!("expected 15 fields, found {}", tok.len())));
        }
        let rank = tok[0].parse().map_err(|e| err(n + 1, format!("rank: {e}")))?;
        let valid = match tok[2] {
            "0" => false,
            "1" => true,
            v => return Err(err(n + 1, format!("valid flag {v:?}"))),
        };
        let nums = tok[1..2]
            .iter()
            .chain(&tok[3..])
            .map(|t| t.parse::<f64>().map_err(|e| err(n + 1, format!("{t:?}: {e}"))))
            .collect::<lchf::Result<Vec<f64>>>()?;
        let r = Matrix3::from_row_slice(&nums[1..10]);
        let pose = Pose6D::from_matrix(&r, Vector3::new(nums[10], nums[11], nums[12]))
            .map_err(|e| err(n + 1, e.to_string()))?;
        out.push(HypothesisLine {
            rank,
            score: nums[0],
            valid,
            pose,
        });
    }
    Ok(out)
}
