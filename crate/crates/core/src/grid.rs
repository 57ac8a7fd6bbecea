//! DOI raster definition and phantom contrast maps.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glyph::Glyph;

/// Uniform rectangular raster over the domain of interest.
///
/// Pixel `(iy, ix)` is stored row-major with `iy` growing along +y, so the
/// flat index is `iy * nx + ix`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub side_x: f64,
    pub side_y: f64,
    pub lambda0: f64,
    pub center: [f64; 2],
}

pub fn make_grid(nx: usize, ny: usize, side_x: f64, side_y: f64, lambda0: f64) -> Result<GridSpec> {
    GridSpec::new(nx, ny, side_x, side_y, lambda0, [0.0, 0.0])
}

impl GridSpec {
    pub fn new(
        nx: usize,
        ny: usize,
        side_x: f64,
        side_y: f64,
        lambda0: f64,
        center: [f64; 2],
    ) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 4x4 pixels, got {nx}x{ny}"
            )));
        }
        for (name, v) in [("side_x", side_x), ("side_y", side_y), ("lambda0", lambda0)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !center.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument("center must be finite".into()));
        }
        Ok(GridSpec {
            nx,
            ny,
            side_x,
            side_y,
            lambda0,
            center,
        })
    }

    /// 64x64 pixels over 5.6 wavelengths at 7.5 cm.
    pub fn full_scale() -> Self {
        let l = 0.075;
        GridSpec::new(64, 64, 5.6 * l, 5.6 * l, l, [0.0, 0.0]).expect("valid preset")
    }

    /// 32x32 pixels over 2 wavelengths at 7.5 cm.
    pub fn desk_scale() -> Self {
        let l = 0.075;
        GridSpec::new(32, 32, 2.0 * l, 2.0 * l, l, [0.0, 0.0]).expect("valid preset")
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> f64 {
        self.side_x / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.side_y / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    pub fn k0(&self) -> f64 {
        2.0 * PI / self.lambda0
    }

    pub fn x_at(&self, ix: usize) -> f64 {
        self.center[0] + ((ix as f64 + 0.5) / self.nx as f64 - 0.5) * self.side_x
    }

    pub fn y_at(&self, iy: usize) -> f64 {
        self.center[1] + ((iy as f64 + 0.5) / self.ny as f64 - 0.5) * self.side_y
    }

    /// Pixel centers in flat (row-major) order.
    pub fn pixel_centers(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.len());
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                out.push([self.x_at(ix), self.y_at(iy)]);
            }
        }
        out
    }

    /// Whether `p` lies in the closed DOI rectangle.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (p[0] - self.center[0]).abs() <= 0.5 * self.side_x
            && (p[1] - self.center[1]).abs() <= 0.5 * self.side_y
    }
}

/// Complex contrast `chi = eps_r - 1` on a grid, shape `(ny, nx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMap {
    pub grid: GridSpec,
    pub chi: Array2<Complex64>,
}

impl ContrastMap {
    pub fn zeros(grid: GridSpec) -> Self {
        ContrastMap {
            grid,
            chi: Array2::zeros((grid.ny, grid.nx)),
        }
    }

    pub fn from_real(grid: GridSpec, values: &[f64]) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} contrast values, got {}",
                grid.len(),
                values.len()
            )));
        }
        let chi = Array2::from_shape_fn((grid.ny, grid.nx), |(iy, ix)| {
            Complex64::new(values[iy * grid.nx + ix], 0.0)
        });
        Ok(ContrastMap { grid, chi })
    }

    pub fn from_vec(grid: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        let chi = Array2::from_shape_vec((grid.ny, grid.nx), values)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(ContrastMap { grid, chi })
    }

    /// Flat row-major copy of the contrast values.
    pub fn to_vec(&self) -> Vec<Complex64> {
        self.chi.iter().copied().collect()
    }

    pub fn real_part(&self) -> Array2<f64> {
        self.chi.mapv(|c| c.re)
    }

    pub fn is_finite(&self) -> bool {
        self.chi.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn support_count(&self) -> usize {
        self.chi.iter().filter(|c| c.norm_sqr() > 0.0).count()
    }
}

/// How a phantom is produced; together with the grid it fully determines the map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomRecipe {
    pub kind: PhantomKind,
    /// Relative permittivity range `[lo, hi]`.
    pub eps_range: [f64; 2],
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PhantomKind {
    /// Thresholded glyph raster; permittivity drawn uniformly from `eps_range`.
    Digit { glyph: Glyph },
    /// Random regular polygons.
    Polygon(PolygonParams),
    /// Two disks over an annulus with fixed permittivities; `eps_range` is ignored.
    Austria(AustriaParams),
    /// Homogeneous disk; permittivity drawn from `eps_range`.
    Disk { radius: f64, center: [f64; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolygonParams {
    pub count_range: [usize; 2],
    pub sides_range: [usize; 2],
    /// Circumradius range in wavelengths.
    pub radius_range: [f64; 2],
    pub max_retries: usize,
}

impl Default for PolygonParams {
    fn default() -> Self {
        PolygonParams {
            count_range: [1, 3],
            sides_range: [3, 7],
            radius_range: [0.1, 1.6],
            max_retries: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AustriaParams {
    pub eps_disk_left: f64,
    pub eps_disk_right: f64,
    pub eps_ring: f64,
    /// Geometric scale applied to every length of the profile (1 = nominal).
    pub scale: f64,
}

impl PhantomRecipe {
    fn check_eps(&self) -> Result<()> {
        let [lo, hi] = self.eps_range;
        if !(lo >= 1.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eps_range must satisfy 1 <= lo <= hi, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }

    pub fn generate(&self, grid: &GridSpec) -> Result<ContrastMap> {
        self.check_eps()?;
        match &self.kind {
            PhantomKind::Digit { glyph } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
                let eps = sample_range(&mut rng, self.eps_range);
                digit_phantom(glyph, eps, grid)
            }
            PhantomKind::Polygon(_) => polygon_phantom(self, grid),
            PhantomKind::Austria(p) => austria_phantom_scaled(
                p.eps_disk_left,
                p.eps_disk_right,
                p.eps_ring,
                p.scale,
                grid,
            ),
            PhantomKind::Disk { radius, center } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
                let eps = sample_range(&mut rng, self.eps_range);
                disk_phantom(eps, *radius, *center, grid)
            }
        }
    }
}

fn sample_range(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn check_eps_value(eps: f64) -> Result<()> {
    if eps >= 1.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("relative permittivity must be >= 1, got {eps}")))
    }
}

/// Thresholds a glyph at a third of its maximum and fills the support with `eps - 1`.
///
/// The raster is resampled onto the grid by nearest neighbour, with raster row 0
/// mapped to the top (largest y) grid row.
pub fn digit_phantom(raster: &Glyph, eps: f64, grid: &GridSpec) -> Result<ContrastMap> {
    if !(1.0..=5.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!("digit eps must be in [1, 5], got {eps}")));
    }
    if raster.width == 0 || raster.height == 0 {
        return Err(Error::EmptyPhantom("empty raster".into()));
    }
    let max = raster.pixels.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(Error::EmptyPhantom("raster is all zero".into()));
    }
    let threshold = max as f64 / 3.0;
    let value = Complex64::new(eps - 1.0, 0.0);
    let mut map = ContrastMap::zeros(*grid);
    for iy in 0..grid.ny {
        let row = ((grid.ny - 1 - iy) as f64 + 0.5) * raster.height as f64 / grid.ny as f64;
        let row = (row.floor() as usize).min(raster.height - 1);
        for ix in 0..grid.nx {
            let col = (ix as f64 + 0.5) * raster.width as f64 / grid.nx as f64;
            let col = (col.floor() as usize).min(raster.width - 1);
            if raster.at(row, col) as f64 >= threshold {
                map.chi[[iy, ix]] = value;
            }
        }
    }
    Ok(map)
}

/// Homogeneous disk of permittivity `eps`; `center` is relative to the DOI center.
pub fn disk_phantom(eps: f64, radius: f64, center: [f64; 2], grid: &GridSpec) -> Result<ContrastMap> {
    check_eps_value(eps)?;
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("disk radius must be positive, got {radius}")));
    }
    let c = [grid.center[0] + center[0], grid.center[1] + center[1]];
    let value = Complex64::new(eps - 1.0, 0.0);
    let mut map = ContrastMap::zeros(*grid);
    fill_where(&mut map, value, |p| in_disk(p, c, radius));
    Ok(map)
}

/// Regular polygon described by its circumcircle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularPolygon {
    pub center: [f64; 2],
    pub circumradius: f64,
    pub sides: usize,
    pub rotation: f64,
}

impl RegularPolygon {
    pub fn vertices(&self) -> Vec<[f64; 2]> {
        (0..self.sides)
            .map(|k| {
                let t = self.rotation + 2.0 * PI * k as f64 / self.sides as f64;
                [
                    self.center[0] + self.circumradius * t.cos(),
                    self.center[1] + self.circumradius * t.sin(),
                ]
            })
            .collect()
    }

    /// Convex containment: the point is on the inner side of every edge.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let v = self.vertices();
        let n = v.len();
        (0..n).all(|k| {
            let a = v[k];
            let b = v[(k + 1) % n];
            (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
        })
    }
}

/// Rasterizes polygons in order; later polygons overwrite earlier ones.
pub fn rasterize_polygons(polys: &[(RegularPolygon, f64)], grid: &GridSpec) -> ContrastMap {
    let mut map = ContrastMap::zeros(*grid);
    for (poly, eps) in polys {
        fill_where(&mut map, Complex64::new(eps - 1.0, 0.0), |p| poly.contains(p));
    }
    map
}

/// Draws the polygon list for a recipe without rasterizing it.
pub fn sample_polygons(recipe: &PhantomRecipe, grid: &GridSpec) -> Result<Vec<(RegularPolygon, f64)>> {
    recipe.check_eps()?;
    let params = match &recipe.kind {
        PhantomKind::Polygon(p) => *p,
        other => {
            return Err(Error::InvalidArgument(format!(
                "polygon_phantom needs a polygon recipe, got {other:?}"
            )))
        }
    };
    let [cmin, cmax] = params.count_range;
    let [smin, smax] = params.sides_range;
    let [rmin, rmax] = params.radius_range;
    if cmin == 0 || cmax < cmin || smin < 3 || smax < smin || !(rmin > 0.0 && rmax >= rmin) {
        return Err(Error::InvalidArgument(format!("invalid polygon parameters {params:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.rng_seed);
    let count = rng.random_range(cmin..=cmax);
    let mut polys = Vec::with_capacity(count);
    for _ in 0..count {
        let sides = rng.random_range(smin..=smax);
        let radius = sample_range(&mut rng, [rmin, rmax]) * grid.lambda0;
        let rotation = rng.random_range(0.0..2.0 * PI);
        let eps = sample_range(&mut rng, recipe.eps_range);
        let mut placed = None;
        for _ in 0..params.max_retries.max(1) {
            let cx = grid.center[0] + rng.random_range(-0.5..0.5) * grid.side_x;
            let cy = grid.center[1] + rng.random_range(-0.5..0.5) * grid.side_y;
            let poly = RegularPolygon {
                center: [cx, cy],
                circumradius: radius,
                sides,
                rotation,
            };
            let covers = grid
                .pixel_centers()
                .into_iter()
                .any(|p| poly.contains(p));
            if covers {
                placed = Some(poly);
                break;
            }
        }
        match placed {
            Some(poly) => polys.push((poly, eps)),
            None => {
                return Err(Error::EmptyPhantom(format!(
                    "polygon with circumradius {radius:.4} covers no pixel after {} tries",
                    params.max_retries
                )))
            }
        }
    }
    Ok(polys)
}

pub fn polygon_phantom(recipe: &PhantomRecipe, grid: &GridSpec) -> Result<ContrastMap> {
    let polys = sample_polygons(recipe, grid)?;
    Ok(rasterize_polygons(&polys, grid))
}

/// Nominal Austria profile (scale 1).
pub fn austria_phantom(
    eps_disk_left: f64,
    eps_disk_right: f64,
    eps_ring: f64,
    grid: &GridSpec,
) -> Result<ContrastMap> {
    austria_phantom_scaled(eps_disk_left, eps_disk_right, eps_ring, 1.0, grid)
}

/// Austria profile: disks of radius 0.56 at (±0.7, 1.4) and an annulus with radii
/// (0.7, 1.4) centered at (0, -0.7), all in wavelengths times `scale`, relative to
/// the DOI center. Disks take precedence over the ring.
pub fn austria_phantom_scaled(
    eps_disk_left: f64,
    eps_disk_right: f64,
    eps_ring: f64,
    scale: f64,
    grid: &GridSpec,
) -> Result<ContrastMap> {
    for eps in [eps_disk_left, eps_disk_right, eps_ring] {
        check_eps_value(eps)?;
    }
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
    }
    let l = grid.lambda0 * scale;
    let [cx, cy] = grid.center;
    let left = [cx - 0.7 * l, cy + 1.4 * l];
    let right = [cx + 0.7 * l, cy + 1.4 * l];
    let ring = [cx, cy - 0.7 * l];
    let mut map = ContrastMap::zeros(*grid);
    fill_where(&mut map, Complex64::new(eps_ring - 1.0, 0.0), |p| {
        let r = dist(p, ring);
        r >= 0.7 * l && r <= 1.4 * l
    });
    fill_where(&mut map, Complex64::new(eps_disk_left - 1.0, 0.0), |p| {
        in_disk(p, left, 0.56 * l)
    });
    fill_where(&mut map, Complex64::new(eps_disk_right - 1.0, 0.0), |p| {
        in_disk(p, right, 0.56 * l)
    });
    Ok(map)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn in_disk(p: [f64; 2], c: [f64; 2], r: f64) -> bool {
    dist(p, c) <= r
}

fn fill_where(map: &mut ContrastMap, value: Complex64, inside: impl Fn([f64; 2]) -> bool) {
    let grid = map.grid;
    for iy in 0..grid.ny {
        let y = grid.y_at(iy);
        for ix in 0..grid.nx {
            if inside([grid.x_at(ix), y]) {
                map.chi[[iy, ix]] = value;
            }
        }
    }
}
