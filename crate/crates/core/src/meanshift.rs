//! Gaussian mean-shift over 3D points and over unit quaternions.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

const MAX_ITERATIONS: usize = 100;

/// Runs mean-shift from `start` with a Gaussian of width `sigma`, ignoring
/// points farther than `cutoff`. Returns `None` if the window empties.
pub fn shift_to_mode(
    points: &[Vector3<f64>],
    weights: &[f64],
    start: Vector3<f64>,
    sigma: f64,
    cutoff: f64,
) -> Option<Vector3<f64>> {
    let tol = 1e-6 * sigma;
    let mut x = start;
    for _ in 0..MAX_ITERATIONS {
        let next = weighted_window_mean(points, weights, &x, sigma, cutoff)?;
        let moved = (next - x).norm();
        x = next;
        if moved <= tol {
            break;
        }
    }
    Some(x)
}

fn weighted_window_mean(
    points: &[Vector3<f64>],
    weights: &[f64],
    at: &Vector3<f64>,
    sigma: f64,
    cutoff: f64,
) -> Option<Vector3<f64>> {
    let c2 = cutoff * cutoff;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut acc = Vector3::zeros();
    let mut total = 0.0;
    for (p, &w) in points.iter().zip(weights) {
        let d2 = (p - at).norm_squared();
        if d2 <= c2 {
            let k = w * (-d2 * inv).exp();
            acc += p * k;
            total += k;
        }
    }
    (total > 0.0).then(|| acc / total)
}

/// A converged translation mode and the indices of the points assigned to it.
#[derive(Clone, Debug)]
pub struct ClusterMode {
    pub center: Vector3<f64>,
    pub members: Vec<usize>,
}

/// Finds the modes of an unweighted point set.
///
/// Seeds from every point (or an evenly strided subset of `max_seeds`),
/// merges modes closer than `sigma / 2`, then assigns each point to its
/// nearest mode. Modes are ordered by decreasing membership, ties by position
/// of first discovery.
pub fn cluster_modes(points: &[Vector3<f64>], sigma: f64, max_seeds: usize) -> Vec<ClusterMode> {
    if points.is_empty() {
        return Vec::new();
    }
    let weights = vec![1.0; points.len()];
    let stride = points.len().div_ceil(max_seeds.max(1));
    let mut modes: Vec<Vector3<f64>> = Vec::new();
    for seed in points.iter().step_by(stride) {
        let Some(m) = shift_to_mode(points, &weights, *seed, sigma, 3.0 * sigma) else {
            continue;
        };
        if modes.iter().all(|q| (q - m).norm() >= 0.5 * sigma) {
            modes.push(m);
        }
    }
    let mut members = vec![Vec::new(); modes.len()];
    for (i, p) in points.iter().enumerate() {
        let nearest = (0..modes.len())
            .min_by(|&a, &b| (modes[a] - p).norm_squared().total_cmp(&(modes[b] - p).norm_squared()))
            .expect("at least one mode");
        members[nearest].push(i);
    }
    let mut out: Vec<ClusterMode> = modes
        .into_iter()
        .zip(members)
        .filter(|(_, m)| !m.is_empty())
        .map(|(center, members)| ClusterMode { center, members })
        .collect();
    out.sort_by(|a, b| b.members.len().cmp(&a.members.len()));
    out
}

/// Rotation angle between two unit quaternions, in `[0, pi]`.
pub fn quat_angle(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let dot = a.coords.dot(&b.coords).abs().min(1.0);
    2.0 * dot.acos()
}

fn rotation_density(quats: &[UnitQuaternion<f64>], weights: &[f64], at: &UnitQuaternion<f64>, sigma: f64) -> f64 {
    let inv = 1.0 / (2.0 * sigma * sigma);
    quats
        .iter()
        .zip(weights)
        .map(|(q, &w)| w * (-quat_angle(q, at).powi(2) * inv).exp())
        .sum()
}

/// Rotation mode of a weighted quaternion set. Seeds at the sample of highest
/// kernel density (among at most `max_seeds` evenly strided candidates), then
/// iterates sign-aligned weighted averaging.
pub fn rotation_mode(
    quats: &[UnitQuaternion<f64>],
    weights: &[f64],
    sigma: f64,
    max_seeds: usize,
) -> Option<UnitQuaternion<f64>> {
    if quats.is_empty() {
        return None;
    }
    let stride = quats.len().div_ceil(max_seeds.max(1));
    let mut best = quats[0];
    let mut best_density = f64::NEG_INFINITY;
    for q in quats.iter().step_by(stride) {
        let d = rotation_density(quats, weights, q, sigma);
        if d > best_density {
            best_density = d;
            best = *q;
        }
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut x = best;
    for _ in 0..MAX_ITERATIONS {
        let mut acc = Quaternion::new(0.0, 0.0, 0.0, 0.0);
        for (q, &w) in quats.iter().zip(weights) {
            let k = w * (-quat_angle(q, &x).powi(2) * inv).exp();
            let sign = if q.coords.dot(&x.coords) < 0.0 { -1.0 } else { 1.0 };
            acc += q.quaternion() * (k * sign);
        }
        if acc.norm() == 0.0 {
            break;
        }
        let next = UnitQuaternion::from_quaternion(acc);
        let moved = quat_angle(&next, &x);
        x = next;
        if moved < 1e-9 {
            break;
        }
    }
    Some(x)
}
