//! Pinhole camera math for turning video clicks into lane coordinates.
//!
//! World frame: origin on the road below the camera, `Z` along the lane
//! (downstream), `X` across it, `Y` up from the road surface, so road points
//! have `Y = 0`. A world point maps to camera coordinates as `R X + T`
//! with `R = R1(θ) R2(ψ) R3(ω)`, then to pixels through the intrinsic
//! matrix.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub x0: f64,
    pub y0: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, x0: f64, y0: f64) -> Result<Self> {
        let c = Self { fx, fy, x0, y0 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.x0.is_finite() || !self.y0.is_finite() {
            return Err(Error::Geometry(format!("invalid intrinsics {self:?}")));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.x0, 0.0, self.fy, self.y0, 0.0, 0.0, 1.0)
    }

    /// Pixel to normalized image coordinates.
    fn normalize(&self, px: [f64; 2]) -> [f64; 2] {
        [(px[0] - self.x0) / self.fx, (px[1] - self.y0) / self.fy]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraExtrinsics {
    pub theta: f64,
    pub psi: f64,
    pub omega: f64,
    /// `[ΔX, ΔY, ΔZ]` in meters.
    pub translation: [f64; 3],
}

impl CameraExtrinsics {
    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_matrix(self.theta, self.psi, self.omega)
    }

    fn t(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    /// Camera center in world coordinates.
    pub fn camera_center(&self) -> [f64; 3] {
        let c = -(self.rotation().transpose() * self.t());
        [c.x, c.y, c.z]
    }

    fn from_rt(r: &Matrix3<f64>, t: Vector3<f64>) -> Self {
        let (theta, psi, omega) = angles_of(r);
        Self {
            theta,
            psi,
            omega,
            translation: [t.x, t.y, t.z],
        }
    }

    fn params(&self) -> [f64; 6] {
        let t = self.translation;
        [self.theta, self.psi, self.omega, t[0], t[1], t[2]]
    }

    fn from_params(p: &[f64]) -> Self {
        Self {
            theta: p[0],
            psi: p[1],
            omega: p[2],
            translation: [p[3], p[4], p[5]],
        }
    }

    /// Same rotation with `cos ψ >= 0` and angles in `(-π, π]`.
    pub fn canonical(&self) -> Self {
        Self::from_rt(&self.rotation(), self.t())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub pixel: [f64; 2],
    pub world: [f64; 3],
}

/// `R1(θ) R2(ψ) R3(ω)`: counterclockwise rotations about the X, Y and Z
/// axes.
pub fn rotation_matrix(theta: f64, psi: f64, omega: f64) -> Matrix3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    let (so, co) = omega.sin_cos();
    let r1 = Matrix3::new(1.0, 0.0, 0.0, 0.0, ct, st, 0.0, -st, ct);
    let r2 = Matrix3::new(cp, 0.0, -sp, 0.0, 1.0, 0.0, sp, 0.0, cp);
    let r3 = Matrix3::new(co, so, 0.0, -so, co, 0.0, 0.0, 0.0, 1.0);
    r1 * r2 * r3
}

fn angles_of(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let psi = (-r[(0, 2)]).clamp(-1.0, 1.0).asin();
    let omega = r[(0, 1)].atan2(r[(0, 0)]);
    let theta = r[(1, 2)].atan2(r[(2, 2)]);
    (theta, psi, omega)
}

pub fn project(
    intrinsics: &CameraIntrinsics,
    extrinsics: &CameraExtrinsics,
    world: [f64; 3],
) -> Result<[f64; 2]> {
    let cam = extrinsics.rotation() * Vector3::from(world) + extrinsics.t();
    if !(cam.z > 0.0) {
        return Err(Error::Projection(format!(
            "point {world:?} is not in front of the camera (depth {})",
            cam.z
        )));
    }
    Ok([
        intrinsics.fx * cam.x / cam.z + intrinsics.x0,
        intrinsics.fy * cam.y / cam.z + intrinsics.y0,
    ])
}

/// Intersection of a pixel's viewing ray with the road plane `Y = 0`,
/// returned as `(X, Z)`.
pub fn pixel_to_world_ground(
    intrinsics: &CameraIntrinsics,
    extrinsics: &CameraExtrinsics,
    pixel: [f64; 2],
) -> Result<[f64; 2]> {
    let [u, v] = intrinsics.normalize(pixel);
    let rt = extrinsics.rotation().transpose();
    let dir = rt * Vector3::new(u, v, 1.0);
    let c = Vector3::from(extrinsics.camera_center());
    if dir.y.abs() < 1e-12 * dir.norm() {
        return Err(Error::Geometry(format!("ray through {pixel:?} is parallel to the road")));
    }
    let s = -c.y / dir.y;
    if !(s > 0.0) {
        return Err(Error::Geometry(format!(
            "ray through {pixel:?} meets the road behind the camera"
        )));
    }
    let p = c + dir * s;
    Ok([p.x, p.z])
}

/// Pose fit with its reprojection quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicsFit {
    pub extrinsics: CameraExtrinsics,
    /// Root-mean-square reprojection error in pixels.
    pub rms_px: f64,
    pub iterations: usize,
}

fn residuals(
    intrinsics: &CameraIntrinsics,
    p: &[f64],
    points: &[Correspondence],
    out: &mut Vec<f64>,
) -> bool {
    let e = CameraExtrinsics::from_params(p);
    let r = e.rotation();
    let t = e.t();
    out.clear();
    for c in points {
        let cam = r * Vector3::from(c.world) + t;
        if !(cam.z > 1e-9) {
            return false;
        }
        out.push(intrinsics.fx * cam.x / cam.z + intrinsics.x0 - c.pixel[0]);
        out.push(intrinsics.fy * cam.y / cam.z + intrinsics.y0 - c.pixel[1]);
    }
    true
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Least-squares translation for a fixed rotation; the two equations of
/// each point are linear in `T` once the scale is eliminated.
fn translation_for(r: &Matrix3<f64>, norm: &[[f64; 2]], points: &[Correspondence]) -> Option<Vector3<f64>> {
    let n = points.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 3);
    let mut b = DMatrix::<f64>::zeros(2 * n, 1);
    for (i, (c, m)) in points.iter().zip(norm).enumerate() {
        let q = r * Vector3::from(c.world);
        // u (q_z + T_z) = q_x + T_x
        a[(2 * i, 0)] = 1.0;
        a[(2 * i, 2)] = -m[0];
        b[(2 * i, 0)] = m[0] * q.z - q.x;
        a[(2 * i + 1, 1)] = 1.0;
        a[(2 * i + 1, 2)] = -m[1];
        b[(2 * i + 1, 0)] = m[1] * q.z - q.y;
    }
    let x = a.svd(true, true).solve(&b, 1e-12).ok()?;
    Some(Vector3::new(x[0], x[1], x[2]))
}

/// Direct seed from the ground-plane homography when at least four points
/// lie on the road.
fn homography_seed(norm: &[[f64; 2]], points: &[Correspondence]) -> Option<CameraExtrinsics> {
    let ground: Vec<usize> = (0..points.len())
        .filter(|&i| points[i].world[1].abs() < 1e-12)
        .collect();
    if ground.len() < 4 {
        return None;
    }
    let mut a = DMatrix::<f64>::zeros(2 * ground.len(), 9);
    for (row, &i) in ground.iter().enumerate() {
        let [u, v] = norm[i];
        let (x, z) = (points[i].world[0], points[i].world[2]);
        let p = [x, z, 1.0];
        for j in 0..3 {
            a[(2 * row, j)] = p[j];
            a[(2 * row, 6 + j)] = -u * p[j];
            a[(2 * row + 1, 3 + j)] = p[j];
            a[(2 * row + 1, 6 + j)] = -v * p[j];
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t?;
    let h = vt.row(vt.nrows() - 1);
    let col = |j: usize| Vector3::new(h[j], h[3 + j], h[6 + j]);
    let (mut c1, mut c2, mut c3) = (col(0), col(1), col(2));
    let scale = 0.5 * (c1.norm() + c2.norm());
    if !(scale > 0.0) {
        return None;
    }
    c1 /= scale;
    c2 /= scale;
    c3 /= scale;
    if c3.z < 0.0 {
        c1 = -c1;
        c2 = -c2;
        c3 = -c3;
    }
    // columns are r1, r3 and T; complete and re-orthonormalize the rotation
    let r2 = c2.cross(&c1);
    let m = Matrix3::from_columns(&[c1, r2, c2]);
    let svd = m.svd(true, true);
    let mut r = svd.u? * svd.v_t?;
    if r.determinant() < 0.0 {
        return None;
    }
    if !r.iter().all(|v| v.is_finite()) {
        r = Matrix3::identity();
    }
    Some(CameraExtrinsics::from_rt(&r, c3))
}

/// Coarse angle grid with closed-form translations; keeps the pose with
/// the smallest reprojection error.
fn grid_seed(
    intrinsics: &CameraIntrinsics,
    norm: &[[f64; 2]],
    points: &[Correspondence],
) -> Option<CameraExtrinsics> {
    let mut best: Option<(f64, CameraExtrinsics)> = None;
    let mut res = Vec::new();
    let steps = 12;
    let pi = std::f64::consts::PI;
    for i in 0..steps {
        let theta = -pi + 2.0 * pi * i as f64 / steps as f64;
        for j in 0..=6 {
            let psi = -pi / 2.0 + pi * j as f64 / 6.0;
            for l in 0..steps {
                let omega = -pi + 2.0 * pi * l as f64 / steps as f64;
                let r = rotation_matrix(theta, psi, omega);
                let Some(t) = translation_for(&r, norm, points) else {
                    continue;
                };
                let e = CameraExtrinsics {
                    theta,
                    psi,
                    omega,
                    translation: [t.x, t.y, t.z],
                };
                if residuals(intrinsics, &e.params(), points, &mut res) {
                    let cost = sq(&res);
                    if best.as_ref().is_none_or(|b| cost < b.0) {
                        best = Some((cost, e));
                    }
                }
            }
        }
    }
    best.map(|b| b.1)
}

fn levenberg_marquardt(
    intrinsics: &CameraIntrinsics,
    start: CameraExtrinsics,
    points: &[Correspondence],
) -> Option<(CameraExtrinsics, f64, usize)> {
    let mut p = start.params();
    let mut r = Vec::new();
    if !residuals(intrinsics, &p, points, &mut r) {
        return None;
    }
    let mut cost = sq(&r);
    let m = r.len();
    let mut lambda = 1e-3;
    let mut rp = Vec::with_capacity(m);
    let mut rm = Vec::with_capacity(m);
    let mut iterations = 0;
    for it in 0..500 {
        iterations = it + 1;
        // central-difference Jacobian
        let mut jac = DMatrix::<f64>::zeros(m, 6);
        for k in 0..6 {
            let h = 1e-6 * p[k].abs().max(1.0);
            let mut a = p;
            let mut b = p;
            a[k] += h;
            b[k] -= h;
            if !residuals(intrinsics, &a, points, &mut rp) || !residuals(intrinsics, &b, points, &mut rm) {
                return None;
            }
            for i in 0..m {
                jac[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let rv = DMatrix::from_column_slice(m, 1, &r);
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &rv;
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..6 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let mut q = p;
            for k in 0..6 {
                q[k] += step[k];
            }
            if residuals(intrinsics, &q, points, &mut rp) {
                let c = sq(&rp);
                if c <= cost {
                    let small = step.norm() <= 1e-15 * (1.0 + q.iter().map(|v| v * v).sum::<f64>().sqrt());
                    let flat = cost - c <= 1e-30 + 1e-16 * cost;
                    p = q;
                    std::mem::swap(&mut r, &mut rp);
                    cost = c;
                    lambda = (lambda * 0.1).max(1e-12);
                    improved = true;
                    if small || (flat && cost < 1e-20) {
                        return Some((CameraExtrinsics::from_params(&p), cost, iterations));
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Some((CameraExtrinsics::from_params(&p), cost, iterations))
}

/// Pose from at least three pixel/world correspondences by minimizing the
/// reprojection error (two equations per point).
pub fn estimate_extrinsics(
    intrinsics: &CameraIntrinsics,
    correspondences: &[Correspondence],
) -> Result<ExtrinsicsFit> {
    intrinsics.validate()?;
    let n = correspondences.len();
    if n < 3 {
        return Err(Error::Estimation(format!("need at least 3 correspondences, got {n}")));
    }
    if correspondences
        .iter()
        .any(|c| !c.pixel.iter().chain(&c.world).all(|v| v.is_finite()))
    {
        return Err(Error::Estimation("non-finite correspondence".into()));
    }
    // rank check: the world points must span at least a plane
    let centroid = correspondences
        .iter()
        .fold(Vector3::zeros(), |a, c| a + Vector3::from(c.world))
        / n as f64;
    let mut spread = DMatrix::<f64>::zeros(n, 3);
    for (i, c) in correspondences.iter().enumerate() {
        let d = Vector3::from(c.world) - centroid;
        for j in 0..3 {
            spread[(i, j)] = d[j];
        }
    }
    let sv = spread.singular_values();
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    if !(s[0] > 0.0) || s[1] <= 1e-9 * s[0] {
        return Err(Error::Estimation("correspondences are collinear (rank-deficient system)".into()));
    }

    let norm: Vec<[f64; 2]> = correspondences.iter().map(|c| intrinsics.normalize(c.pixel)).collect();
    let mut seeds = Vec::new();
    if let Some(h) = homography_seed(&norm, correspondences) {
        seeds.push(h);
    }
    if let Some(g) = grid_seed(intrinsics, &norm, correspondences) {
        seeds.push(g);
    }
    let mut best: Option<(CameraExtrinsics, f64, usize)> = None;
    for seed in seeds {
        if let Some(fit) = levenberg_marquardt(intrinsics, seed, correspondences) {
            if best.as_ref().is_none_or(|b| fit.1 < b.1) {
                best = Some(fit);
            }
        }
    }
    let (e, cost, iterations) =
        best.ok_or_else(|| Error::Estimation("no pose places the points in front of the camera".into()))?;
    Ok(ExtrinsicsFit {
        extrinsics: e.canonical(),
        rms_px: (cost / n as f64).sqrt(),
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeErrorRow {
    /// Horizontal distance from the point below the camera (m).
    pub range: f64,
    pub true_z: f64,
    pub predicted_z: f64,
    pub error: f64,
}

/// Longitudinal back-projection error of each test point, nearest first.
pub fn range_error_report(
    intrinsics: &CameraIntrinsics,
    extrinsics: &CameraExtrinsics,
    test_points: &[Correspondence],
) -> Result<Vec<RangeErrorRow>> {
    if test_points.is_empty() {
        return Err(Error::Estimation("no test points".into()));
    }
    let c = extrinsics.camera_center();
    let mut rows = Vec::with_capacity(test_points.len());
    for p in test_points {
        let [_, z] = pixel_to_world_ground(intrinsics, extrinsics, p.pixel)?;
        let (dx, dz) = (p.world[0] - c[0], p.world[2] - c[2]);
        rows.push(RangeErrorRow {
            range: (dx * dx + dz * dz).sqrt(),
            true_z: p.world[2],
            predicted_z: z,
            error: (z - p.world[2]).abs(),
        });
    }
    rows.sort_by(|a, b| a.range.total_cmp(&b.range));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> (CameraIntrinsics, CameraExtrinsics) {
        let a = CameraIntrinsics::new(1200.0, 1180.0, 960.0, 540.0).unwrap();
        // 5 m above the road looking down-lane, pitched 0.25 rad down;
        // rows are the camera axes (right, down, forward) in world terms
        let (s, c) = 0.25f64.sin_cos();
        let r = Matrix3::from_rows(&[
            Vector3::new(-1.0, 0.0, 0.0).transpose(),
            Vector3::new(0.0, -c, -s).transpose(),
            Vector3::new(0.0, -s, c).transpose(),
        ]);
        let center = Vector3::new(0.0, 5.0, 0.0);
        let t = -(r * center);
        (a, CameraExtrinsics::from_rt(&r, t))
    }

    #[test]
    fn identity_and_axis_map() {
        assert!((rotation_matrix(0.0, 0.0, 0.0) - Matrix3::identity()).norm() < 1e-15);
        let v = rotation_matrix(0.0, 0.0, std::f64::consts::FRAC_PI_2) * Vector3::new(1.0, 0.0, 0.0);
        assert!((v - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let a = CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0).unwrap();
        let e = CameraExtrinsics {
            theta: 0.0,
            psi: 0.0,
            omega: 0.0,
            translation: [0.0; 3],
        };
        assert_eq!(project(&a, &e, [0.0, 0.0, 10.0]).unwrap(), [320.0, 240.0]);
        assert!(project(&a, &e, [0.0, 0.0, -1.0]).is_err());
    }

    #[test]
    fn ground_round_trip() {
        let (a, e) = cam();
        for z in [5.0, 20.0, 60.0] {
            let px = project(&a, &e, [1.5, 0.0, z]).unwrap();
            let [x, zz] = pixel_to_world_ground(&a, &e, px).unwrap();
            assert!((x - 1.5).abs() < 1e-9 && (zz - z).abs() < 1e-9);
        }
    }

    #[test]
    fn canonical_angles_reproduce_rotation() {
        let e = CameraExtrinsics {
            theta: 2.9,
            psi: 2.0,
            omega: -3.0,
            translation: [1.0, 2.0, 3.0],
        };
        let c = e.canonical();
        assert!(c.psi.cos() >= 0.0);
        assert!((c.rotation() - e.rotation()).norm() < 1e-12);
    }
}
