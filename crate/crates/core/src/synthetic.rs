//! Seeded synthetic landmark corpora.
//!
//! [`SyntheticFaces`] perturbs a 68-point template face with a handful of
//! linear pose/expression modes (yaw, roll, pitch, mouth opening, ...), so
//! the corpus has exactly as many degrees of freedom as there are modes.
//! [`SubspaceDataset`] draws samples from a known orthonormal subspace and is
//! used as a PCA oracle.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::landmarks::{LandmarkDataset, LandmarkRecord, LandmarkSet, Space, DEFAULT_POINT_COUNT};

/// Neutral frontal 68-point face in canonical coordinates (iBUG ordering).
pub fn template_face() -> LandmarkSet {
    let mut pts = Vec::with_capacity(DEFAULT_POINT_COUNT);
    // jaw 0..=16
    for i in 0..17 {
        let theta = std::f64::consts::PI * (1.0 - i as f64 / 16.0);
        pts.push([0.5 + 0.28 * theta.cos(), 0.36 + 0.40 * theta.sin()]);
    }
    // brows 17..=26
    for side in [0.0, 1.0] {
        for j in 0..5 {
            let t = j as f64 / 4.0;
            let x = if side == 0.0 { 0.28 + 0.17 * t } else { 0.55 + 0.17 * t };
            pts.push([x, 0.30 - 0.03 * (std::f64::consts::PI * t).sin()]);
        }
    }
    // nose bridge 27..=30, nostrils 31..=35
    for j in 0..4 {
        pts.push([0.5, 0.36 + 0.047 * j as f64]);
    }
    for j in 0..5 {
        let t = j as f64 / 4.0 - 0.5;
        pts.push([0.5 + 0.10 * t, 0.54 + 0.02 * (1.0 - 4.0 * t * t)]);
    }
    // eyes 36..=47
    let eye = |cx: f64| {
        [
            [cx - 0.05, 0.38],
            [cx - 0.02, 0.365],
            [cx + 0.02, 0.365],
            [cx + 0.05, 0.38],
            [cx + 0.02, 0.395],
            [cx - 0.02, 0.395],
        ]
    };
    pts.extend(eye(0.36));
    pts.extend(eye(0.64));
    // outer lips 48..=59
    for j in 0..12 {
        let phi = std::f64::consts::PI * (1.0 - j as f64 / 6.0);
        pts.push([0.5 + 0.09 * phi.cos(), 0.64 - 0.035 * phi.sin()]);
    }
    // inner lips 60..=67
    for j in 0..8 {
        let phi = std::f64::consts::PI * (1.0 - j as f64 / 4.0);
        pts.push([0.5 + 0.06 * phi.cos(), 0.64 - 0.015 * phi.sin()]);
    }
    LandmarkSet::from_points(&pts).expect("template is finite")
}

/// Displacement fields of the synthetic pose/expression modes, each paired
/// with its standard deviation. Ordered by decreasing variance.
pub fn face_modes() -> Vec<(&'static str, Vec<[f64; 2]>, f64)> {
    let t = template_face().to_points();
    let depth = |p: [f64; 2]| (1.0 - ((p[0] - 0.5) / 0.3).powi(2)).max(0.0);
    let field = |f: &dyn Fn(usize, [f64; 2]) -> [f64; 2]| t.iter().enumerate().map(|(i, &p)| f(i, p)).collect::<Vec<_>>();
    vec![
        ("yaw", field(&|_, p| [depth(p), 0.0]), 0.05),
        ("roll", field(&|_, p| [-(p[1] - 0.5), p[0] - 0.5]), 0.08),
        ("pitch", field(&|_, p| [0.0, depth(p)]), 0.03),
        (
            "mouth_open",
            field(&|i, p| match i {
                55..=59 | 65..=67 => [0.0, 1.0],
                3..=13 => [0.0, 0.5 * (p[1] - 0.36).max(0.0) / 0.4],
                _ => [0.0, 0.0],
            }),
            0.02,
        ),
        (
            "smile",
            field(&|i, _| match i {
                48 | 60 => [-1.0, -0.6],
                54 | 64 => [1.0, -0.6],
                _ => [0.0, 0.0],
            }),
            0.012,
        ),
        (
            "brow_raise",
            field(&|i, _| if (17..=26).contains(&i) { [0.0, -1.0] } else { [0.0, 0.0] }),
            0.01,
        ),
        (
            "jaw_width",
            field(&|i, p| if i <= 16 { [p[0] - 0.5, 0.0] } else { [0.0, 0.0] }),
            0.04,
        ),
        (
            "blink",
            field(&|i, _| match i {
                37 | 38 | 43 | 44 => [0.0, 1.0],
                40 | 41 | 46 | 47 => [0.0, -0.4],
                _ => [0.0, 0.0],
            }),
            0.006,
        ),
    ]
}

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub seed: u64,
    /// Isotropic Gaussian noise added to every coordinate.
    pub point_noise: f64,
    /// Multiplier on every mode's standard deviation.
    pub mode_scale: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            samples: 200,
            seed: 0,
            point_noise: 0.0,
            mode_scale: 1.0,
        }
    }
}

/// Template face plus random combinations of [`face_modes`].
pub struct SyntheticFaces {
    spec: SyntheticSpec,
}

impl SyntheticFaces {
    pub fn new(spec: SyntheticSpec) -> Self {
        Self { spec }
    }

    pub fn dataset(&self) -> LandmarkDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        let base = template_face();
        let modes = face_modes();
        let records = (0..self.spec.samples)
            .map(|j| {
                let mut coords = base.as_slice().to_vec();
                for (_, field, std) in &modes {
                    let c: f64 = rng.sample::<f64, _>(StandardNormal) * std * self.spec.mode_scale;
                    for (i, d) in field.iter().enumerate() {
                        coords[2 * i] += c * d[0];
                        coords[2 * i + 1] += c * d[1];
                    }
                }
                if self.spec.point_noise > 0.0 {
                    for x in &mut coords {
                        *x += self.spec.point_noise * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                LandmarkRecord {
                    id: "synthetic".into(),
                    frame: j.to_string(),
                    landmarks: LandmarkSet::from_vec(coords).expect("finite"),
                    space: Space::Canonical,
                }
            })
            .collect();
        LandmarkDataset::new(records).expect("non-empty uniform dataset")
    }
}

/// Samples `mean + sum_i c_i u_i (+ noise)` with `c_i ~ N(0, variances[i])`
/// and seeded orthonormal `u_i`.
pub struct SubspaceDataset {
    pub dataset: LandmarkDataset,
    pub mean: Vec<f64>,
    /// `2n x r` matrix of the generating directions.
    pub directions: DMatrix<f64>,
}

impl SubspaceDataset {
    pub fn generate(samples: usize, variances: &[f64], noise_sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mean = template_face().into_vec();
        let dim = mean.len();
        let gauss = DMatrix::from_fn(dim, variances.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let directions = gauss.qr().q();
        let records = (0..samples)
            .map(|j| {
                let mut coords = mean.clone();
                for (i, var) in variances.iter().enumerate() {
                    let c = var.sqrt() * rng.sample::<f64, _>(StandardNormal);
                    for (x, u) in coords.iter_mut().zip(directions.column(i).iter()) {
                        *x += c * u;
                    }
                }
                if noise_sigma > 0.0 {
                    for x in &mut coords {
                        *x += noise_sigma * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                LandmarkRecord {
                    id: "subspace".into(),
                    frame: j.to_string(),
                    landmarks: LandmarkSet::from_vec(coords).expect("finite"),
                    space: Space::Canonical,
                }
            })
            .collect();
        Self {
            dataset: LandmarkDataset::new(records).expect("non-empty"),
            mean,
            directions,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::interocular_distance;

    #[test]
    fn template_has_68_points_inside_unit_square() {
        let t = template_face();
        assert_eq!(t.len(), 68);
        assert!(t.points().all(|[x, y]| (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y)));
        assert!((interocular_distance(&t).unwrap() - 0.38).abs() < 1e-12);
    }

    #[test]
    fn generation_is_seeded() {
        let a = SyntheticFaces::new(SyntheticSpec { samples: 5, seed: 11, ..Default::default() }).dataset();
        let b = SyntheticFaces::new(SyntheticSpec { samples: 5, seed: 11, ..Default::default() }).dataset();
        let c = SyntheticFaces::new(SyntheticSpec { samples: 5, seed: 12, ..Default::default() }).dataset();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn subspace_directions_are_orthonormal() {
        let s = SubspaceDataset::generate(3, &[1.0, 0.5, 0.25], 0.0, 1);
        let gram = s.directions.transpose() * &s.directions;
        assert!((gram - DMatrix::identity(3, 3)).amax() < 1e-12);
    }
}
