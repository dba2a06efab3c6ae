//! Pinhole cameras, projection, heatmap sampling and linear triangulation.

use nalgebra::{convert, DMatrix, Matrix3, Matrix3x4, Point2, Point3, RealField, Vector3};

use crate::error::{Error, Result};

/// Depth (meters) at or below which a point is treated as lying on the camera plane.
pub const MIN_DEPTH: f64 = 1e-9;

/// Default ratio between image and heatmap resolution.
pub const DEFAULT_HEATMAP_DOWNSCALE: u32 = 4;

/// One calibrated view: `x_cam = R * x_world + t`, `u ~ K * x_cam`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraParams<T: RealField> {
    pub id: usize,
    pub intrinsics: Matrix3<T>,
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
    /// `(width, height)` in image pixels.
    pub image_size: (u32, u32),
    pub heatmap_downscale: u32,
}

impl<T: RealField + Copy> CameraParams<T> {
    pub fn new(
        id: usize,
        intrinsics: Matrix3<T>,
        rotation: Matrix3<T>,
        translation: Vector3<T>,
        image_size: (u32, u32),
        heatmap_downscale: u32,
    ) -> Result<Self> {
        let cam = Self { id, intrinsics, rotation, translation, image_size, heatmap_downscale };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `position` looking at `target`, with world `+z` as the up hint.
    pub fn look_at(
        id: usize,
        position: Point3<T>,
        target: Point3<T>,
        focal: T,
        image_size: (u32, u32),
        heatmap_downscale: u32,
    ) -> Result<Self> {
        let forward = (target - position).normalize();
        let up_hint = Vector3::z();
        let mut right = forward.cross(&up_hint);
        if right.norm() < convert(1e-9) {
            right = Vector3::x();
        }
        let right = right.normalize();
        // image y grows downwards
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * position.coords);
        let half: T = convert(0.5);
        let k = Matrix3::new(
            focal,
            T::zero(),
            convert::<f64, T>(image_size.0 as f64) * half,
            T::zero(),
            focal,
            convert::<f64, T>(image_size.1 as f64) * half,
            T::zero(),
            T::zero(),
            T::one(),
        );
        Self::new(id, k, rotation, translation, image_size, heatmap_downscale)
    }

    pub fn validate(&self) -> Result<()> {
        let tol: T = convert(1e-8);
        let r = &self.rotation;
        let ortho = r.transpose() * r - Matrix3::identity();
        if ortho.iter().any(|v| v.abs() > tol) {
            return Err(Error::InvalidCamera(format!("view {}: rotation is not orthonormal", self.id)));
        }
        if (r.determinant() - T::one()).abs() > tol {
            return Err(Error::InvalidCamera(format!("view {}: rotation determinant is not +1", self.id)));
        }
        let k = &self.intrinsics;
        if !(k[(0, 0)] > T::zero() && k[(1, 1)] > T::zero()) {
            return Err(Error::InvalidCamera(format!("view {}: focal lengths must be positive", self.id)));
        }
        if k[(1, 0)] != T::zero() || k[(2, 0)] != T::zero() || k[(2, 1)] != T::zero() {
            return Err(Error::InvalidCamera(format!("view {}: intrinsics must be upper triangular", self.id)));
        }
        if k[(2, 2)] != T::one() {
            return Err(Error::InvalidCamera(format!("view {}: intrinsics must have K[2][2] = 1", self.id)));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::InvalidCamera(format!("view {}: image size must be positive", self.id)));
        }
        if self.heatmap_downscale == 0 {
            return Err(Error::InvalidCamera(format!("view {}: heatmap downscale must be positive", self.id)));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3<T> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    pub fn projection_matrix(&self) -> Matrix3x4<T> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        rt.set_column(3, &self.translation);
        self.intrinsics * rt
    }

    /// Heatmap grid `(width, height)` for this view.
    pub fn heatmap_size(&self) -> (usize, usize) {
        let s = self.heatmap_downscale as usize;
        ((self.image_size.0 as usize).div_ceil(s), (self.image_size.1 as usize).div_ceil(s))
    }

    pub fn to_heatmap(&self, p: &Point2<T>) -> Point2<T> {
        let s: T = convert(self.heatmap_downscale as f64);
        Point2::new(p.x / s, p.y / s)
    }

    pub fn from_heatmap(&self, p: &Point2<T>) -> Point2<T> {
        let s: T = convert(self.heatmap_downscale as f64);
        Point2::new(p.x * s, p.y * s)
    }

    pub fn in_image(&self, p: &Point2<T>) -> bool {
        p.x >= T::zero()
            && p.y >= T::zero()
            && p.x <= convert(self.image_size.0 as f64 - 1.0)
            && p.y <= convert(self.image_size.1 as f64 - 1.0)
    }

    /// Apply a world-frame rigid motion `x -> rot * x + shift` to the rig:
    /// the returned camera sees the moved scene exactly as `self` saw the original.
    pub fn moved_with_scene(&self, rot: &Matrix3<T>, shift: &Vector3<T>) -> Self {
        let rotation = self.rotation * rot.transpose();
        let translation = self.translation - rotation * shift;
        Self { rotation, translation, ..self.clone() }
    }
}

/// Pixel coordinates of a world point; no clamping to the image.
pub fn project<T: RealField + Copy>(point: &Point3<T>, cam: &CameraParams<T>) -> Result<Point2<T>> {
    let pc = cam.rotation * point.coords + cam.translation;
    if pc.z <= convert(MIN_DEPTH) {
        return Err(Error::DegenerateDepth { depth: nalgebra::try_convert(pc.z).unwrap_or(f64::NAN) });
    }
    let uvw = cam.intrinsics * pc;
    Ok(Point2::new(uvw.x / uvw.z, uvw.y / uvw.z))
}

/// Precomputed bilinear footprint of one sample location on a `width x height` grid.
///
/// Nodes outside the grid read as zero, so the response ramps linearly to zero
/// within one cell of the border and is exactly zero beyond it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearTap {
    index: [usize; 4],
    weight: [f32; 4],
}

impl BilinearTap {
    pub fn new(x: f64, y: f64, width: usize, height: usize) -> Option<Self> {
        if !(x > -1.0 && y > -1.0 && x < width as f64 && y < height as f64) {
            return None;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let mut tap = Self { index: [0; 4], weight: [0.0; 4] };
        let corners = [(0, 0, (1.0 - fx) * (1.0 - fy)), (1, 0, fx * (1.0 - fy)), (0, 1, (1.0 - fx) * fy), (1, 1, fx * fy)];
        for (slot, (dx, dy, w)) in corners.into_iter().enumerate() {
            let (cx, cy) = (x0 + dx, y0 + dy);
            if cx >= 0 && cy >= 0 && (cx as usize) < width && (cy as usize) < height {
                tap.index[slot] = cy as usize * width + cx as usize;
                tap.weight[slot] = w as f32;
            }
        }
        Some(tap)
    }

    #[inline]
    pub fn sample(&self, map: &[f32]) -> f32 {
        self.weight[0] * map[self.index[0]]
            + self.weight[1] * map[self.index[1]]
            + self.weight[2] * map[self.index[2]]
            + self.weight[3] * map[self.index[3]]
    }
}

/// Bilinear interpolation of a row-major grid at `p` (grid node `(i, j)` sits at `x = i, y = j`).
///
/// Zero padding: returns 0 outside the grid.
pub fn sample_bilinear<T: RealField + Copy>(map: MapRef<'_>, p: &Point2<T>) -> T {
    let x: f64 = nalgebra::try_convert(p.x).unwrap_or(f64::NAN);
    let y: f64 = nalgebra::try_convert(p.y).unwrap_or(f64::NAN);
    match BilinearTap::new(x, y, map.width, map.height) {
        Some(tap) => {
            // interpolate in f64 to keep the node-identity case exact
            let v: f64 = (0..4).map(|i| tap.weight[i] as f64 * map.data[tap.index[i]] as f64).sum();
            convert(v)
        }
        None => T::zero(),
    }
}

/// Borrowed view of one 2D response grid.
#[derive(Debug, Clone, Copy)]
pub struct MapRef<'a> {
    pub data: &'a [f32],
    pub width: usize,
    pub height: usize,
}

impl<'a> MapRef<'a> {
    pub fn new(data: &'a [f32], width: usize, height: usize) -> Self {
        assert_eq!(data.len(), width * height, "map size mismatch");
        Self { data, width, height }
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Linear (DLT) triangulation from pixel observations `(index into cams, pixel)`.
///
/// Observations are expressed in normalized camera coordinates before stacking
/// the cross-product constraints, which keeps the system well conditioned.
pub fn triangulate<T: RealField + Copy>(observations: &[(usize, Point2<T>)], cams: &[CameraParams<T>]) -> Result<Point3<T>> {
    let mut views: Vec<usize> = observations.iter().map(|(v, _)| *v).collect();
    views.sort_unstable();
    views.dedup();
    if views.len() < 2 {
        return Err(Error::TooFewViews(views.len()));
    }
    let mut a = DMatrix::<T>::zeros(2 * observations.len(), 4);
    for (row, (view, px)) in observations.iter().enumerate() {
        let cam = cams.get(*view).ok_or_else(|| Error::InvalidInput(format!("unknown view index {view}")))?;
        let k_inv = cam.intrinsics.try_inverse().ok_or_else(|| Error::InvalidCamera("singular intrinsics".into()))?;
        let n = k_inv * Vector3::new(px.x, px.y, T::one());
        let (u, v) = (n.x / n.z, n.y / n.z);
        for c in 0..3 {
            let r0 = cam.rotation[(0, c)];
            let r1 = cam.rotation[(1, c)];
            let r2 = cam.rotation[(2, c)];
            a[(2 * row, c)] = u * r2 - r0;
            a[(2 * row + 1, c)] = v * r2 - r1;
        }
        a[(2 * row, 3)] = u * cam.translation.z - cam.translation.x;
        a[(2 * row + 1, 3)] = v * cam.translation.z - cam.translation.y;
    }
    let svd = a.svd(false, true);
    let sv = &svd.singular_values;
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    // nalgebra returns singular values in descending order
    let (s1, s3, s4) = (sv[0], sv[2], sv[3]);
    if s1 <= T::zero() || (s3 - s4).abs() <= s1 * convert(1e-10) {
        return Err(Error::RankDeficient);
    }
    let h = v_t.row(3);
    if h[3].abs() <= s1 * convert(1e-14) {
        // solution at infinity
        return Err(Error::RankDeficient);
    }
    Ok(Point3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]))
}

/// Pixel distance of `point`'s projection to each observation; `+inf` when behind a camera.
pub fn reprojection_error<T: RealField + Copy>(point: &Point3<T>, observations: &[(usize, Point2<T>)], cams: &[CameraParams<T>]) -> Vec<T> {
    observations
        .iter()
        .map(|(view, px)| match project(point, &cams[*view]) {
            Ok(p) => (p - px).norm(),
            Err(_) => convert(f64::INFINITY),
        })
        .collect()
}

/// Per-view, per-joint 2D response grids.
///
/// Every view shares the joint count and grid size; responses lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    joints: usize,
    width: usize,
    height: usize,
    /// One `joints x height x width` block per view, in rig order.
    views: Vec<Vec<f32>>,
}

impl HeatmapStack {
    pub fn zeros(views: usize, joints: usize, width: usize, height: usize) -> Self {
        Self { joints, width, height, views: vec![vec![0.0; joints * width * height]; views] }
    }

    pub fn from_views(joints: usize, width: usize, height: usize, views: Vec<Vec<f32>>) -> Result<Self> {
        for (v, data) in views.iter().enumerate() {
            if data.len() != joints * width * height {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} values", joints * width * height),
                    actual: format!("{} values in view {v}", data.len()),
                });
            }
            if let Some(bad) = data.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(Error::InvalidInput(format!("heatmap response {bad} outside [0, 1] in view {v}")));
            }
        }
        Ok(Self { joints, width, height, views })
    }

    /// Check the grid against each camera's declared heatmap resolution.
    pub fn check_rig<T: RealField + Copy>(&self, cams: &[CameraParams<T>]) -> Result<()> {
        if cams.len() != self.views.len() {
            return Err(Error::ShapeMismatch { expected: format!("{} views", cams.len()), actual: format!("{} views", self.views.len()) });
        }
        for cam in cams {
            if cam.heatmap_size() != (self.width, self.height) {
                return Err(Error::ShapeMismatch {
                    expected: format!("{:?} heatmap for view {}", cam.heatmap_size(), cam.id),
                    actual: format!("{:?}", (self.width, self.height)),
                });
            }
        }
        Ok(())
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn view(&self, v: usize) -> &[f32] {
        &self.views[v]
    }

    pub fn view_mut(&mut self, v: usize) -> &mut [f32] {
        &mut self.views[v]
    }

    pub fn map(&self, view: usize, joint: usize) -> MapRef<'_> {
        let n = self.width * self.height;
        MapRef::new(&self.views[view][joint * n..(joint + 1) * n], self.width, self.height)
    }

    pub fn map_mut(&mut self, view: usize, joint: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.views[view][joint * n..(joint + 1) * n]
    }

    /// Keep only the listed views, in the given order.
    pub fn select_views(&self, views: &[usize]) -> Self {
        Self { joints: self.joints, width: self.width, height: self.height, views: views.iter().map(|&v| self.views[v].clone()).collect() }
    }
}
