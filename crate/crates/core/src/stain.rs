//! Optical density and two-stain (hematoxylin / eosin) separation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::RgbImage;

pub type Vec3 = [f64; 3];

#[inline]
fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine(a: &Vec3, b: &Vec3) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

/// Per-pixel optical density, one `[f64; 3]` per pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OdImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<Vec3>,
}

/// `OD_c = -log10((I_c + 1) / (I0_c + 1))`, clamped at zero.
pub fn od_transform(img: &RgbImage, background: [u8; 3]) -> Result<OdImage> {
    if background.contains(&0) {
        return Err(Error::InvalidParameter(
            "background intensity must be in [1, 255]".into(),
        ));
    }
    let denom = background.map(|b| b as f64 + 1.0);
    let values = img
        .pixels()
        .iter()
        .map(|px| {
            let mut od = [0.0; 3];
            for c in 0..3 {
                od[c] = (-((px[c] as f64 + 1.0) / denom[c]).log10()).max(0.0);
            }
            od
        })
        .collect();
    Ok(OdImage {
        width: img.width(),
        height: img.height(),
        values,
    })
}

/// Two unit-norm absorbance columns: hematoxylin then eosin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StainMatrix {
    pub hematoxylin: Vec3,
    pub eosin: Vec3,
}

impl StainMatrix {
    /// Normalizes both columns; rejects negative entries and zero columns.
    pub fn new(hematoxylin: Vec3, eosin: Vec3) -> Result<Self> {
        let mut cols = [hematoxylin, eosin];
        for col in &mut cols {
            if col.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(Error::InvalidParameter(
                    "stain vectors must be finite and nonnegative".into(),
                ));
            }
            let n = norm(col);
            if n == 0.0 {
                return Err(Error::RankDeficient);
            }
            col.iter_mut().for_each(|v| *v /= n);
        }
        Ok(Self {
            hematoxylin: cols[0],
            eosin: cols[1],
        })
    }

    /// Standard H&E absorbance vectors (Ruifrok & Johnston).
    pub fn reference() -> Self {
        Self::new([0.650, 0.704, 0.286], [0.072, 0.990, 0.105]).expect("valid reference")
    }

    /// `M·c` for concentrations `(h, e)`.
    pub fn mix(&self, h: f64, e: f64) -> Vec3 {
        std::array::from_fn(|i| self.hematoxylin[i] * h + self.eosin[i] * e)
    }
}

/// Nonnegative per-pixel concentration of one stain.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ConcentrationMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Min-max scaled 8-bit PNG, for visualization only.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let span = if hi > lo { hi - lo } else { 1.0 };
        let raw: Vec<u8> = self
            .values
            .iter()
            .map(|&v| (((v - lo) / span) * 255.0).round() as u8)
            .collect();
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Encode {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }
}

/// Least-squares solver for `od ≈ M·c` through a thin QR of `M`.
struct Deconvolver {
    q1: Vec3,
    q2: Vec3,
    r11: f64,
    r12: f64,
    r22: f64,
}

impl Deconvolver {
    fn new(m: &StainMatrix) -> Result<Self> {
        let h = m.hematoxylin;
        let e = m.eosin;
        let r11 = norm(&h);
        if r11 == 0.0 {
            return Err(Error::RankDeficient);
        }
        let q1 = h.map(|v| v / r11);
        let r12 = dot(&q1, &e);
        let u: Vec3 = std::array::from_fn(|i| e[i] - r12 * q1[i]);
        let r22 = norm(&u);
        if r22 <= 1e-10 * norm(&e) {
            return Err(Error::RankDeficient);
        }
        let q2 = u.map(|v| v / r22);
        Ok(Self {
            q1,
            q2,
            r11,
            r12,
            r22,
        })
    }

    #[inline]
    fn solve(&self, od: &Vec3) -> (f64, f64) {
        let e = dot(&self.q2, od) / self.r22;
        let h = (dot(&self.q1, od) - self.r12 * e) / self.r11;
        (h, e)
    }
}

/// Per-pixel least-squares concentrations, negatives clamped to zero.
pub fn deconvolve(od: &OdImage, m: &StainMatrix) -> Result<(ConcentrationMap, ConcentrationMap)> {
    let solver = Deconvolver::new(m)?;
    let (h, e): (Vec<f64>, Vec<f64>) = od
        .values
        .iter()
        .map(|px| {
            let (h, e) = solver.solve(px);
            (h.max(0.0), e.max(0.0))
        })
        .unzip();
    let map = |values| ConcentrationMap {
        width: od.width,
        height: od.height,
        values,
    };
    Ok((map(h), map(e)))
}

/// Settings for sparse NMF stain estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmfConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// L1 weight on concentrations, relative to the mean foreground OD norm.
    pub sparsity: f64,
    /// Pixels whose OD norm is at or below this are background.
    pub od_cutoff: f64,
    pub min_foreground: usize,
    pub seed: u64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-6,
            sparsity: 0.1,
            od_cutoff: 0.15,
            min_foreground: 100,
            seed: 0,
        }
    }
}

/// Fraction of the (uncentred) scatter not captured by its leading
/// direction; ~0 for single-stain data.
fn second_component_energy(pixels: &[Vec3]) -> f64 {
    let mut s = [[0.0; 3]; 3];
    for p in pixels {
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] += p[i] * p[j];
            }
        }
    }
    let trace = s[0][0] + s[1][1] + s[2][2];
    if trace == 0.0 {
        return 0.0;
    }
    let mut v = [1.0, 1.0, 1.0];
    let mut lead = 0.0;
    for _ in 0..500 {
        let next: Vec3 = std::array::from_fn(|i| dot(&s[i], &v));
        let n = norm(&next);
        if n == 0.0 {
            break;
        }
        v = next.map(|x| x / n);
        lead = n;
    }
    ((trace - lead) / trace).max(0.0)
}

/// Estimates a stain matrix by sparse nonnegative factorization of the
/// foreground OD pixels.
pub fn estimate_stain_matrix(od: &OdImage, cfg: &NmfConfig) -> Result<StainMatrix> {
    let fg: Vec<Vec3> = od
        .values
        .iter()
        .filter(|v| norm(v) > cfg.od_cutoff)
        .copied()
        .collect();
    if fg.len() < cfg.min_foreground {
        return Err(Error::InsufficientForeground {
            found: fg.len(),
            needed: cfg.min_foreground,
        });
    }
    if second_component_energy(&fg) < 1e-4 {
        return Err(Error::DegenerateStains(
            "foreground OD is explained by a single stain".into(),
        ));
    }
    // Work on data of unit mean norm so the penalty is scale free.
    let scale = fg.iter().map(norm).sum::<f64>() / fg.len() as f64;
    let v: Vec<Vec3> = fg.iter().map(|p| p.map(|c| c / scale)).collect();
        let lambda = cfg.sparsity;
    const TINY: f64 = 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let reference = StainMatrix::reference();
    let mut w = [reference.hematoxylin, reference.eosin];
    for col in &mut w {
        for x in col.iter_mut() {
            *x += rng.random_range(0.0..0.1);
        }
        let n = norm(col);
        col.iter_mut().for_each(|x| *x /= n);
    }
    // Start concentrations from a clamped least-squares fit to the initial
    // columns; multiplicative updates cannot revive exact zeros.
    let init = Deconvolver::new(&StainMatrix::new(w[0], w[1])?)?;
    let mut h: Vec<[f64; 2]> = v
        .iter()
        .map(|px| {
            let (a, b) = init.solve(px);
            [a.max(0.0) + 1e-3, b.max(0.0) + 1e-3]
        })
        .collect();

    let objective = |w: &[Vec3; 2], h: &[[f64; 2]]| -> f64 {
        let mut obj = 0.0;
        for (vp, hp) in v.iter().zip(h) {
            for c in 0..3 {
                let r = vp[c] - w[0][c] * hp[0] - w[1][c] * hp[1];
                obj += 0.5 * r * r;
            }
            obj += lambda * (hp[0] + hp[1]);
        }
        obj
    };

    let mut prev = objective(&w, &h);
    for _ in 0..cfg.max_iter {
        // H update.
        let wtw = [
            [dot(&w[0], &w[0]), dot(&w[0], &w[1])],
            [dot(&w[1], &w[0]), dot(&w[1], &w[1])],
        ];
        for (vp, hp) in v.iter().zip(h.iter_mut()) {
            let num = [dot(&w[0], vp), dot(&w[1], vp)];
            let cur = *hp;
            for k in 0..2 {
                let den = wtw[k][0] * cur[0] + wtw[k][1] * cur[1] + lambda;
                hp[k] = cur[k] * num[k] / den.max(TINY);
            }
        }
        // W update for unit-norm columns: the gradient is projected onto the
        // sphere so the L1 term on H stays consistent under renormalization.
        let mut vht = [[0.0; 2]; 3];
        let mut hht = [[0.0; 2]; 2];
        for (vp, hp) in v.iter().zip(&h) {
            for c in 0..3 {
                vht[c][0] += vp[c] * hp[0];
                vht[c][1] += vp[c] * hp[1];
            }
            hht[0][0] += hp[0] * hp[0];
            hht[0][1] += hp[0] * hp[1];
            hht[1][1] += hp[1] * hp[1];
        }
        hht[1][0] = hht[0][1];
        let cur = w;
        let whh: [[f64; 2]; 3] = std::array::from_fn(|c| {
            std::array::from_fn(|k| cur[0][c] * hht[0][k] + cur[1][c] * hht[1][k])
        });
        for k in 0..2 {
            let along_whh: f64 = (0..3).map(|c| cur[k][c] * whh[c][k]).sum();
            let along_vht: f64 = (0..3).map(|c| cur[k][c] * vht[c][k]).sum();
            for c in 0..3 {
                let num = vht[c][k] + cur[k][c] * along_whh;
                let den = whh[c][k] + cur[k][c] * along_vht;
                w[k][c] = cur[k][c] * num / den.max(TINY);
            }
            let n = norm(&w[k]);
            if n > TINY {
                w[k].iter_mut().for_each(|x| *x /= n);
            }
        }
        let obj = objective(&w, &h);
        let rel = (prev - obj).abs() / prev.abs().max(TINY);
        prev = obj;
        if rel < cfg.tol {
            break;
        }
    }

    let energy = [
        h.iter().map(|hp| hp[0]).sum::<f64>(),
        h.iter().map(|hp| hp[1]).sum::<f64>(),
    ];
    let total = energy[0] + energy[1];
    if energy.iter().any(|&e| e < 0.01 * total) {
        return Err(Error::DegenerateStains(
            "data is explained by a single stain".into(),
        ));
    }
    if cosine(&w[0], &w[1]) > 0.995 {
        return Err(Error::DegenerateStains("stain columns are collinear".into()));
    }
    let (hem, eos) = if cosine(&w[0], &reference.hematoxylin)
        >= cosine(&w[1], &reference.hematoxylin)
    {
        (w[0], w[1])
    } else {
        (w[1], w[0])
    };
    StainMatrix::new(hem, eos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, prop_assume, proptest};

    fn od_image(values: Vec<Vec3>) -> OdImage {
        OdImage {
            width: values.len(),
            height: 1,
            values,
        }
    }

    #[test]
    fn od_of_background_is_zero() {
        let img = RgbImage::new(2, 1, vec![[240, 230, 250], [240, 230, 250]]).unwrap();
        let od = od_transform(&img, [240, 230, 250]).unwrap();
        assert!(od.values.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn od_one_decade() {
        let img = RgbImage::new(1, 1, vec![[24, 24, 24]]).unwrap();
        let od = od_transform(&img, [249, 249, 249]).unwrap();
        for c in 0..3 {
            assert!((od.values[0][c] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn od_matches_scalar_formula_and_is_positive_when_darker() {
        let img = RgbImage::new(3, 1, vec![[17, 90, 201], [254, 255, 255], [0, 0, 0]]).unwrap();
        let bg = [230, 240, 250];
        let od = od_transform(&img, bg).unwrap();
        for (px, got) in img.pixels().iter().zip(&od.values) {
            for c in 0..3 {
                let want = -((px[c] as f64 + 1.0) / (bg[c] as f64 + 1.0)).ln() / 10f64.ln();
                assert!((got[c] - want.max(0.0)).abs() < 1e-12);
                if px[c] < bg[c] {
                    assert!(got[c] > 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_background_rejected() {
        let img = RgbImage::filled(1, 1, [1, 1, 1]).unwrap();
        assert!(od_transform(&img, [0, 10, 10]).is_err());
    }

    #[test]
    fn identity_like_separation() {
        let m = StainMatrix::new([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]).unwrap();
        let (h, e) = deconvolve(&od_image(vec![[0.7, 0.2, 0.0]]), &m).unwrap();
        assert!((h.values[0] - 0.7).abs() < 1e-15);
        assert!((e.values[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn pure_hematoxylin_pixel() {
        let m = StainMatrix::reference();
        let (h, e) = deconvolve(&od_image(vec![m.hematoxylin]), &m).unwrap();
        assert!((h.values[0] - 1.0).abs() < 1e-12);
        assert!(e.values[0].abs() < 1e-12);
    }

    #[test]
    fn negative_solutions_clamped() {
        let m = StainMatrix::reference();
        let od = m.mix(1.0, -0.5);
        let (h, e) = deconvolve(&od_image(vec![od]), &m).unwrap();
        assert!(h.values[0] > 0.0);
        assert_eq!(e.values[0], 0.0);
    }

    #[test]
    fn rank_deficient_matrix_rejected() {
        let m = StainMatrix::new([1.0, 1.0, 0.0], [2.0, 2.0, 0.0]).unwrap();
        assert!(matches!(
            deconvolve(&od_image(vec![[0.0; 3]]), &m),
            Err(Error::RankDeficient)
        ));
    }

    /// Normal equations `MᵀM c = Mᵀ od` solved by Cramer's rule.
    fn normal_equations(m: &StainMatrix, od: &Vec3) -> (f64, f64) {
        let (h, e) = (m.hematoxylin, m.eosin);
        let (a, b, d) = (dot(&h, &h), dot(&h, &e), dot(&e, &e));
        let (r1, r2) = (dot(&h, od), dot(&e, od));
        let det = a * d - b * b;
        ((r1 * d - b * r2) / det, (a * r2 - b * r1) / det)
    }

    #[test]
    fn matches_normal_equations_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let hcol: Vec3 = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let ecol: Vec3 = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let m = StainMatrix::new(hcol, ecol).unwrap();
            let od: Vec3 = std::array::from_fn(|_| rng.random_range(0.0..2.0));
            let (want_h, want_e) = normal_equations(&m, &od);
            let (got_h, got_e) = Deconvolver::new(&m).unwrap().solve(&od);
            assert!((got_h - want_h).abs() < 1e-10 * (1.0 + want_h.abs()));
            assert!((got_e - want_e).abs() < 1e-10 * (1.0 + want_e.abs()));
        }
    }

    #[test]
    fn blank_image_has_insufficient_foreground() {
        let img = RgbImage::filled(32, 32, [255, 255, 255]).unwrap();
        let od = od_transform(&img, [255, 255, 255]).unwrap();
        let err = estimate_stain_matrix(&od, &NmfConfig::default()).unwrap_err();
        assert!(err.to_string().contains("insufficient foreground"));
    }

    #[test]
    fn single_stain_image_is_degenerate() {
        let m = StainMatrix::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let values = (0..2000)
            .map(|_| m.mix(rng.random_range(0.3..1.5), 0.0))
            .collect();
        let err = estimate_stain_matrix(&od_image(values), &NmfConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateStains(_)));
    }

    proptest! {
        #[test]
        fn deconvolve_inverts_mixing(
            h in 0.0f64..3.0, e in 0.0f64..3.0,
            hc in proptest::array::uniform3(0.0f64..1.0),
            ec in proptest::array::uniform3(0.0f64..1.0),
        ) {
            let m = match StainMatrix::new(hc, ec) {
                Ok(m) => m,
                Err(_) => return Ok(()),
            };
            prop_assume!(cosine(&m.hematoxylin, &m.eosin) < 0.99);
            let (hm, em) = deconvolve(&od_image(vec![m.mix(h, e)]), &m).unwrap();
            prop_assert!((hm.values[0] - h).abs() < 1e-8);
            prop_assert!((em.values[0] - e).abs() < 1e-8);
        }
    }
}
