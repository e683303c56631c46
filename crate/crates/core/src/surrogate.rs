//! A small, fully analytic stand-in for a talking-head pose encoder and
//! generator.
//!
//! * encoder: `v = M (vec(L) - anchor)` with `M` a seeded `w x 2n` matrix
//!   with orthonormal rows,
//! * decoder: `vec(L) = anchor + Mᵀ v`,
//! * generator: decode, then splat an isotropic Gaussian per landmark onto a
//!   single-channel `H x W` raster.
//!
//! Pixel `(r, c)` has its center at `((c + 0.5) / W, (r + 0.5) / H)` in
//! canonical coordinates. Splats are never clipped, so points outside the
//! unit square still contribute.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::{LandmarkDataset, LandmarkSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterConfig {
    pub height: usize,
    pub width: usize,
    /// Splat standard deviation in canonical units.
    pub sigma: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            sigma: 0.02,
        }
    }
}

impl RasterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::InvalidArgument(format!(
                "raster must be at least 8x8, got {}x{}",
                self.height, self.width
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("splat sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    fn col_centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.width).map(move |c| (c as f64 + 0.5) / self.width as f64)
    }

    fn row_centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.height).map(move |r| (r as f64 + 0.5) / self.height as f64)
    }
}

/// Pose code in the surrogate latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LatentVector(Vec<f64>);

impl LatentVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent vector"));
        }
        Ok(Self(values))
    }

    pub fn zeros(w: usize) -> Self {
        Self(vec![0.0; w])
    }

    pub fn w(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for LatentVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LatentVector> for Vec<f64> {
    fn from(v: LatentVector) -> Self {
        v.0
    }
}

/// Single-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Raster {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pixels[r * self.width + c]
    }

    pub fn max(&self) -> f64 {
        self.pixels.iter().copied().fold(0.0, f64::max)
    }

    /// ASCII PGM (P2) with values scaled into `0..=65535`. Returns the text
    /// and the scale factor that was applied (also written as a comment).
    pub fn to_pgm(&self) -> (String, f64) {
        let max = self.max();
        let scale = if max > 0.0 { 65535.0 / max } else { 1.0 };
        let mut out = format!("P2\n# scale {scale:e}\n{} {}\n65535\n", self.width, self.height);
        for row in self.pixels.chunks(self.width) {
            let line: Vec<String> = row
                .iter()
                .map(|v| ((v * scale).round().clamp(0.0, 65535.0) as u32).to_string())
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        (out, scale)
    }
}

/// Renders Gaussian splats at flattened `(x1, y1, ..., xn, yn)` positions.
pub fn render_points(config: &RasterConfig, coords: &[f64]) -> Raster {
    let mut raster = Raster::zeros(config.height, config.width);
    let inv = 1.0 / (2.0 * config.sigma * config.sigma);
    let mut gx = vec![0.0; config.width];
    let mut gy = vec![0.0; config.height];
    for p in coords.chunks_exact(2) {
        for (g, xc) in gx.iter_mut().zip(config.col_centers()) {
            *g = (-(xc - p[0]).powi(2) * inv).exp();
        }
        for (g, yc) in gy.iter_mut().zip(config.row_centers()) {
            *g = (-(yc - p[1]).powi(2) * inv).exp();
        }
        for (row, &wy) in raster.pixels.chunks_exact_mut(config.width).zip(&gy) {
            for (px, &wx) in row.iter_mut().zip(&gx) {
                *px += wy * wx;
            }
        }
    }
    raster
}

/// Cotangent of [`render_points`]: the gradient of `sum(cotangent * raster)`
/// with respect to the flattened point coordinates.
pub fn render_points_vjp(config: &RasterConfig, coords: &[f64], cotangent: &[f64]) -> Vec<f64> {
    assert_eq!(cotangent.len(), config.pixel_count(), "cotangent size");
    let inv = 1.0 / (2.0 * config.sigma * config.sigma);
    let inv_var = 1.0 / (config.sigma * config.sigma);
    let xs: Vec<f64> = config.col_centers().collect();
    let ys: Vec<f64> = config.row_centers().collect();
    let mut gx = vec![0.0; config.width];
    let mut out = vec![0.0; coords.len()];
    for (p, grad) in coords.chunks_exact(2).zip(out.chunks_exact_mut(2)) {
        for (g, xc) in gx.iter_mut().zip(&xs) {
            *g = (-(xc - p[0]).powi(2) * inv).exp();
        }
        let (mut dx, mut dy) = (0.0, 0.0);
        for (row, yc) in cotangent.chunks_exact(config.width).zip(&ys) {
            let wy = (-(yc - p[1]).powi(2) * inv).exp();
            let mut s = 0.0;
            let mut t = 0.0;
            for ((&g, &wx), xc) in row.iter().zip(&gx).zip(&xs) {
                let a = g * wx;
                s += a;
                t += a * (xc - p[0]);
            }
            dx += wy * t;
            dy += wy * s * (yc - p[1]);
        }
        grad[0] = dx * inv_var;
        grad[1] = dy * inv_var;
    }
    out
}

/// Directional derivative of [`render_points`] along `tangent`.
pub fn render_points_jvp(config: &RasterConfig, coords: &[f64], tangent: &[f64]) -> Raster {
    assert_eq!(tangent.len(), coords.len(), "tangent size");
    let inv = 1.0 / (2.0 * config.sigma * config.sigma);
    let inv_var = 1.0 / (config.sigma * config.sigma);
    let mut raster = Raster::zeros(config.height, config.width);
    let mut gx = vec![0.0; config.width];
    let mut dgx = vec![0.0; config.width];
    let mut gy = vec![0.0; config.height];
    let mut dgy = vec![0.0; config.height];
    for (p, t) in coords.chunks_exact(2).zip(tangent.chunks_exact(2)) {
        for ((g, d), xc) in gx.iter_mut().zip(dgx.iter_mut()).zip(config.col_centers()) {
            *g = (-(xc - p[0]).powi(2) * inv).exp();
            *d = *g * (xc - p[0]) * inv_var * t[0];
        }
        for ((g, d), yc) in gy.iter_mut().zip(dgy.iter_mut()).zip(config.row_centers()) {
            *g = (-(yc - p[1]).powi(2) * inv).exp();
            *d = *g * (yc - p[1]) * inv_var * t[1];
        }
        for (row, (&wy, &dwy)) in raster.pixels.chunks_exact_mut(config.width).zip(gy.iter().zip(&dgy)) {
            for (px, (&wx, &dwx)) in row.iter_mut().zip(gx.iter().zip(&dgx)) {
                *px += wy * dwx + dwy * wx;
            }
        }
    }
    raster
}

/// Serializable description of a stack; the anchor comes from the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub seed: u64,
    pub w: usize,
    pub raster: RasterConfig,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            w: 16,
            raster: RasterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateStack {
    /// `w x 2n`, orthonormal rows.
    encode: DMatrix<f64>,
    anchor: DVector<f64>,
    raster: RasterConfig,
    seed: u64,
}

/// Builds the encoder from the first `w` rows of the orthogonal QR factor of
/// a seeded standard-normal `2n x 2n` matrix.
pub fn make_surrogate(seed: u64, w: usize, n: usize, raster: RasterConfig, anchor: &LandmarkSet) -> Result<SurrogateStack> {
    let dim = 2 * n;
    if w == 0 || w > dim {
        return Err(Error::InvalidArgument(format!("latent dimension {w} outside 1..={dim}")));
    }
    if anchor.len() != n {
        return Err(Error::PointCount {
            expected: n,
            found: anchor.len(),
        });
    }
    raster.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = gauss.qr().q();
    let encode = q.rows(0, w).into_owned();
    Ok(SurrogateStack {
        encode,
        anchor: DVector::from_column_slice(anchor.as_slice()),
        raster,
        seed,
    })
}

impl SurrogateStack {
    pub fn from_config(config: &SurrogateConfig, anchor: &LandmarkSet) -> Result<Self> {
        make_surrogate(config.seed, config.w, anchor.len(), config.raster, anchor)
    }

    pub fn config(&self) -> SurrogateConfig {
        SurrogateConfig {
            seed: self.seed,
            w: self.w(),
            raster: self.raster,
        }
    }

    pub fn w(&self) -> usize {
        self.encode.nrows()
    }

    pub fn n(&self) -> usize {
        self.encode.ncols() / 2
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn raster_config(&self) -> &RasterConfig {
        &self.raster
    }

    pub fn encode_matrix(&self) -> &DMatrix<f64> {
        &self.encode
    }

    pub fn anchor(&self) -> &DVector<f64> {
        &self.anchor
    }

    fn check_latent(&self, v: &LatentVector) -> Result<()> {
        if v.w() != self.w() {
            return Err(Error::DimensionMismatch {
                what: "latent",
                expected: self.w(),
                found: v.w(),
            });
        }
        Ok(())
    }

    /// `M (vec(L) - anchor)`.
    pub fn encode_landmarks(&self, l: &LandmarkSet) -> Result<LatentVector> {
        if l.as_slice().len() != self.encode.ncols() {
            return Err(Error::DimensionMismatch {
                what: "landmarks",
                expected: self.encode.ncols(),
                found: l.as_slice().len(),
            });
        }
        let centered = DVector::from_column_slice(l.as_slice()) - &self.anchor;
        LatentVector::new((&self.encode * centered).as_slice().to_vec())
    }

    /// `anchor + Mᵀ v`.
    pub fn decode_latent(&self, v: &LatentVector) -> Result<LandmarkSet> {
        self.check_latent(v)?;
        LandmarkSet::from_vec(self.decode_coords(v.as_slice()))
    }

    fn decode_coords(&self, v: &[f64]) -> Vec<f64> {
        let x = &self.anchor + self.encode.tr_mul(&DVector::from_column_slice(v));
        x.as_slice().to_vec()
    }

    pub fn render_raster(&self, v: &LatentVector) -> Result<Raster> {
        self.check_latent(v)?;
        Ok(render_points(&self.raster, &self.decode_coords(v.as_slice())))
    }

    /// Linearization of [`render_raster`](Self::render_raster) at `v`.
    pub fn render_jacobian(&self, v: &LatentVector) -> Result<RenderJacobian<'_>> {
        self.check_latent(v)?;
        Ok(RenderJacobian {
            stack: self,
            coords: self.decode_coords(v.as_slice()),
        })
    }

    /// Mean encoding over a dataset.
    pub fn mean_latent(&self, dataset: &LandmarkDataset) -> Result<LatentVector> {
        let mut acc = vec![0.0; self.w()];
        for l in dataset.landmarks() {
            for (a, x) in acc.iter_mut().zip(self.encode_landmarks(l)?.as_slice()) {
                *a += x;
            }
        }
        let count = dataset.len() as f64;
        LatentVector::new(acc.into_iter().map(|a| a / count).collect())
    }
}

/// Jacobian of the generator at one latent, exposed through products.
pub struct RenderJacobian<'a> {
    stack: &'a SurrogateStack,
    coords: Vec<f64>,
}

impl RenderJacobian<'_> {
    /// `J · tangent`, a raster.
    pub fn jvp(&self, tangent: &[f64]) -> Result<Raster> {
        if tangent.len() != self.stack.w() {
            return Err(Error::DimensionMismatch {
                what: "tangent",
                expected: self.stack.w(),
                found: tangent.len(),
            });
        }
        let dx = self.stack.encode.tr_mul(&DVector::from_column_slice(tangent));
        Ok(render_points_jvp(&self.stack.raster, &self.coords, dx.as_slice()))
    }

    /// `cotangentᵀ · J`, a latent-sized vector.
    pub fn vjp(&self, cotangent: &[f64]) -> Result<Vec<f64>> {
        if cotangent.len() != self.stack.raster.pixel_count() {
            return Err(Error::DimensionMismatch {
                what: "cotangent",
                expected: self.stack.raster.pixel_count(),
                found: cotangent.len(),
            });
        }
        let g = render_points_vjp(&self.stack.raster, &self.coords, cotangent);
        Ok((&self.stack.encode * DVector::from_vec(g)).as_slice().to_vec())
    }

    pub fn decoded_coords(&self) -> &[f64] {
        &self.coords
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::template_face;

    fn stack(seed: u64, w: usize) -> SurrogateStack {
        make_surrogate(seed, w, 68, RasterConfig::default(), &template_face()).unwrap()
    }

    #[test]
    fn deterministic_and_orthonormal() {
        let a = stack(5, 16);
        assert_eq!(a, stack(5, 16));
        let gram = a.encode_matrix() * a.encode_matrix().transpose();
        assert!((gram - DMatrix::identity(16, 16)).amax() < 1e-8);
        let b = stack(6, 16);
        assert!((a.encode_matrix() - b.encode_matrix()).amax() > 0.01);
    }

    #[test]
    fn argument_checks() {
        let t = template_face();
        assert!(make_surrogate(0, 137, 68, RasterConfig::default(), &t).is_err());
        let tiny = RasterConfig { height: 4, ..Default::default() };
        assert!(make_surrogate(0, 4, 68, tiny, &t).is_err());
        let flat = RasterConfig { sigma: 0.0, ..Default::default() };
        assert!(make_surrogate(0, 4, 68, flat, &t).is_err());
    }

    #[test]
    fn encode_decode_identities() {
        let s = stack(1, 16);
        let v0 = s.encode_landmarks(&template_face()).unwrap();
        assert!(v0.as_slice().iter().all(|x| x.abs() < 1e-15));
        assert_eq!(s.decode_latent(&LatentVector::zeros(16)).unwrap(), template_face());
        let v = LatentVector::new((0..16).map(|i| (i as f64 * 0.37).sin() * 0.05).collect()).unwrap();
        let back = s.encode_landmarks(&s.decode_latent(&v).unwrap()).unwrap();
        for (a, b) in back.as_slice().iter().zip(v.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(s.decode_latent(&LatentVector::zeros(3)).is_err());
    }

    #[test]
    fn point_at_pixel_center_is_the_maximum() {
        let cfg = RasterConfig { height: 16, width: 16, sigma: 0.05 };
        let (r, c) = (5, 9);
        let x = (c as f64 + 0.5) / 16.0;
        let y = (r as f64 + 0.5) / 16.0;
        let raster = render_points(&cfg, &[x, y]);
        assert_eq!(raster.get(r, c), 1.0);
        assert_eq!(raster.max(), raster.get(r, c));
        // neighbor at one pitch: exp(-(1/16)² / (2·0.05²))
        let expect = (-(1.0f64 / 16.0).powi(2) / (2.0 * 0.05f64.powi(2))).exp();
        assert!((raster.get(r, c + 1) - expect).abs() < 1e-15);
    }

    #[test]
    fn far_points_render_to_zero() {
        let cfg = RasterConfig::default();
        let raster = render_points(&cfg, &[5.0, 5.0, -4.0, 0.5]);
        assert!(raster.max() < 1e-12);
    }

    #[test]
    fn pgm_dump_has_header_and_scale() {
        let cfg = RasterConfig { height: 8, width: 10, sigma: 0.1 };
        let (pgm, scale) = render_points(&cfg, &[0.5, 0.5]).to_pgm();
        let mut lines = pgm.lines();
        assert_eq!(lines.next(), Some("P2"));
        assert!(lines.next().unwrap().starts_with("# scale"));
        assert_eq!(lines.next(), Some("10 8"));
        assert_eq!(lines.next(), Some("65535"));
        assert_eq!(lines.count(), 8);
        assert!(scale > 0.0);
    }
}
