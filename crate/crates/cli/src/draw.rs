//! Overlay drawing on RGB buffers.

use lchf::{CameraIntrinsics, Pose6D};
use nalgebra::Vector3;

const AXIS_COLORS: [[u8; 3]; 3] = [[255, 0, 0], [0, 255, 0], [0, 64, 255]];

/// Bresenham line, clipped to the image.
pub fn line(rgb: &mut [u8], width: usize, height: usize, a: (i64, i64), b: (i64, i64), color: [u8; 3]) {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
            let i = (y as usize * width + x as usize) * 3;
            rgb[i..i + 3].copy_from_slice(&color);
        }
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Draws the object x, y and z axes (red, green, blue) of length `length`
/// mm. Axes with an end point behind the camera are skipped.
pub fn axes(rgb: &mut [u8], intr: &CameraIntrinsics, pose: &Pose6D, length: f64) {
    let (w, h) = (intr.width as usize, intr.height as usize);
    // Keep the segment short enough in pixels that clipping stays cheap.
    let clamp = |v: f64| v.clamp(-1e5, 1e5).round() as i64;
    let Ok((u0, v0, _)) = intr.project(pose.translation()) else {
        return;
    };
    for (k, color) in AXIS_COLORS.iter().enumerate() {
        let mut dir = Vector3::zeros();
        dir[k] = length;
        let Ok((u1, v1, _)) = intr.project(&pose.transform_point(&dir)) else {
            continue;
        };
        line(rgb, w, h, (clamp(u0), clamp(v0)), (clamp(u1), clamp(v1)), *color);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_covers_both_end_points_and_stays_in_bounds() {
        let (w, h) = (10, 8);
        let mut rgb = vec![0u8; w * h * 3];
        line(&mut rgb, w, h, (-5, -5), (20, 7), [1, 2, 3]);
        line(&mut rgb, w, h, (2, 6), (9, 1), [9, 9, 9]);
        assert_eq!(&rgb[(6 * w + 2) * 3..(6 * w + 2) * 3 + 3], &[9, 9, 9]);
        assert_eq!(&rgb[(w + 9) * 3..(w + 9) * 3 + 3], &[9, 9, 9]);
    }

    #[test]
    fn x_axis_points_right_in_the_image() {
        let intr = CameraIntrinsics::qvga();
        let mut rgb = vec![0u8; intr.pixel_count() * 3];
        let pose = Pose6D::from_translation(Vector3::new(0.0, 0.0, 1000.0));
        axes(&mut rgb, &intr, &pose, 50.0);
        // 50 mm at 1 m and f = 300 is 15 px.
        let px = |x: usize, y: usize| &rgb[(y * 320 + x) * 3..(y * 320 + x) * 3 + 3];
        assert_eq!(px(175, 120), &[255, 0, 0]);
        assert_eq!(px(160, 135), &[0, 255, 0]);
        assert_eq!(px(176, 120), &[0, 0, 0]);
    }
}
