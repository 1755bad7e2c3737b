use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt};
use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose6D};

use super::archive::{FrameArchive, FrameEntry, GtEntry, CAMERA_FILE};

/// Kinect intrinsics published with the LINEMOD sequences.
pub fn linemod_kinect_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 572.41140,
        fy: 573.57043,
        cx: 325.26110,
        cy: 242.04899,
        width: 640,
        height: 480,
    }
}

/// Indexes one object directory of a LINEMOD-style sequence:
///
/// ```text
/// <root>/camera.toml          optional, else the Kinect intrinsics
/// <root>/data/color<N>.png
/// <root>/data/depth<N>.png    or depth<N>.dpt
/// <root>/data/rot<N>.rot      "3 3" then three rows
/// <root>/data/tra<N>.tra      "3 1" then three values in centimeters
/// ```
///
/// The directory name is the object id.
pub fn load_linemod_layout(root: &Path) -> Result<FrameArchive> {
    let mismatch = |path: PathBuf, reason: &str| Error::LayoutMismatch {
        path,
        reason: reason.to_string(),
    };
    let data = root.join("data");
    if !data.is_dir() {
        return Err(mismatch(data, "missing data directory"));
    }
    let intrinsics = {
        let cam = root.join(CAMERA_FILE);
        if cam.is_file() {
            #[derive(serde::Deserialize)]
            struct CameraFile {
                intrinsics: CameraIntrinsics,
            }
            let text = std::fs::read_to_string(&cam).map_err(|e| Error::io(&cam, e))?;
            let c: CameraFile = toml::from_str(&text).map_err(|e| Error::parse(&cam, e.to_string()))?;
            c.intrinsics.validate()?;
            c.intrinsics
        } else {
            linemod_kinect_intrinsics()
        }
    };
    let object_id = root
        .canonicalize()
        .map_err(|e| Error::io(root, e))?
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "object".into());

    let mut indices = Vec::new();
    for entry in std::fs::read_dir(&data).map_err(|e| Error::io(&data, e))? {
        let name = entry.map_err(|e| Error::io(&data, e))?.file_name().to_string_lossy().into_owned();
        if let Some(n) = name.strip_prefix("color").and_then(|s| s.strip_suffix(".png")) {
            match n.parse::<u32>() {
                Ok(i) => indices.push(i),
                Err(_) => return Err(mismatch(data.join(&name), "color file without a numeric index")),
            }
        }
    }
    indices.sort_unstable();
    if indices.is_empty() {
        return Err(mismatch(data.join("color0.png"), "no color images"));
    }
    let mut frames = Vec::with_capacity(indices.len());
    for i in indices {
        let png = data.join(format!("depth{i}.png"));
        let dpt = data.join(format!("depth{i}.dpt"));
        let depth = if png.is_file() {
            png
        } else if dpt.is_file() {
            dpt
        } else {
            return Err(mismatch(png, "missing depth image"));
        };
        let rot = data.join(format!("rot{i}.rot"));
        let tra = data.join(format!("tra{i}.tra"));
        for p in [&rot, &tra] {
            if !p.is_file() {
                return Err(mismatch(p.clone(), "missing pose file"));
            }
        }
        frames.push(FrameEntry::Linemod {
            id: format!("{i:06}"),
            object_id: object_id.clone(),
            color: data.join(format!("color{i}.png")),
            depth,
            rot,
            tra,
        });
    }
    Ok(FrameArchive::from_parts(root.to_path_buf(), intrinsics, frames))
}

fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tokens = text.split_whitespace();
    let mut dim = || -> Result<usize> {
        tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::parse(path, "missing dimension header"))
    };
    let (r, c) = (dim()?, dim()?);
    if (r, c) != (rows, cols) {
        return Err(Error::parse(path, format!("expected {rows}x{cols}, header says {r}x{c}")));
    }
    let values: Vec<f64> = tokens
        .map(|t| t.parse::<f64>().map_err(|e| Error::parse(path, format!("{t:?}: {e}"))))
        .collect::<Result<_>>()?;
    if values.len() != rows * cols {
        return Err(Error::parse(path, format!("expected {} values, found {}", rows * cols, values.len())));
    }
    Ok(values)
}

/// Rotation is row-major; translation is converted from centimeters to
/// millimeters. The rotation is projected onto the nearest orthonormal matrix
/// since the files carry only a few digits.
pub(super) fn read_pose(object_id: &str, rot: &Path, tra: &Path) -> Result<GtEntry> {
    let r = Matrix3::from_row_slice(&read_matrix(rot, 3, 3)?);
    let t = read_matrix(tra, 3, 1)?;
    if r.determinant() <= 0.0 {
        return Err(Error::parse(rot, "rotation has non-positive determinant"));
    }
    Ok(GtEntry {
        object_id: object_id.to_string(),
        pose: Pose6D::from_matrix_projected(&r, Vector3::new(t[0], t[1], t[2]) * 10.0),
        visibility: 1.0,
    })
}

/// Raw depth: little-endian `i32` rows, `i32` columns, then `u16` samples.
pub(super) fn read_dpt(path: &Path) -> Result<(u32, u32, Vec<u16>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = bytes.as_slice();
    let bad = |reason: &str| Error::parse(path, reason.to_string());
    let rows = r.read_i32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    let cols = r.read_i32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    if rows <= 0 || cols <= 0 {
        return Err(bad("non-positive dimensions"));
    }
    let n = rows as usize * cols as usize;
    if r.len() != 2 * n {
        return Err(bad("sample count does not match dimensions"));
    }
    let mut data = vec![0u16; n];
    r.read_u16_into::<LittleEndian>(&mut data).map_err(|_| bad("truncated samples"))?;
    Ok((cols as u32, rows as u32, data))
}
