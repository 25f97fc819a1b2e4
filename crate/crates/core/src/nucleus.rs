//! Vertex sets: classical nucleus detection on the hematoxylin channel and
//! CSV ingestion of coordinates from external detectors.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::reflect_index;
use crate::stain::ConcentrationMap;

pub type Coord = (u32, u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NucleusSource {
    Detected,
    Imported,
    Synthetic,
}

/// Ordered nucleus coordinates `(x, y)` for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NucleusSet {
    coords: Vec<Coord>,
    source: NucleusSource,
}

impl NucleusSet {
    /// Validates bounds and uniqueness; keeps the given order.
    pub fn new(coords: Vec<Coord>, source: NucleusSource, bounds: (usize, usize)) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(coords.len());
        for &(x, y) in &coords {
            if x as usize >= bounds.0 || y as usize >= bounds.1 {
                return Err(Error::InvalidParameter(format!(
                    "nucleus ({x},{y}) outside {}x{} bounds",
                    bounds.0, bounds.1
                )));
            }
            if !seen.insert((x, y)) {
                return Err(Error::InvalidParameter(format!("duplicate nucleus ({x},{y})")));
            }
        }
        Ok(Self { coords, source })
    }

    pub fn empty(source: NucleusSource) -> Self {
        Self {
            coords: Vec::new(),
            source,
        }
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn source(&self) -> NucleusSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Applies a vertex relabeling: entry `i` of the result is `coords[perm[i]]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            coords: perm.iter().map(|&i| self.coords[i]).collect(),
            source: self.source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectParams {
    pub sigma: f64,
    pub peak_threshold: f64,
    pub min_distance: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            sigma: 3.0,
            peak_threshold: 0.2,
            min_distance: 10.0,
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with reflect borders.
pub fn gaussian_smooth(map: &ConcentrationMap, sigma: f64) -> ConcentrationMap {
    let (w, h) = (map.width, map.height);
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &map.values[y * w..(y + 1) * w];
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * row[reflect_index(x as i64 + i as i64 - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[reflect_index(y as i64 + i as i64 - r, h) * w + x])
                .sum();
        }
    }
    ConcentrationMap {
        width: w,
        height: h,
        values: out,
    }
}

/// Smooths `h`, finds local maxima above `peak_threshold · max`, then keeps
/// them strongest-first unless a kept peak lies closer than `min_distance`.
/// Ties go to smaller y, then smaller x. Output is sorted by (y, x).
pub fn detect_nuclei(h: &ConcentrationMap, params: &DetectParams) -> Result<NucleusSet> {
    let DetectParams {
        sigma,
        peak_threshold,
        min_distance,
    } = *params;
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter("sigma must be > 0".into()));
    }
    if !(peak_threshold > 0.0 && peak_threshold < 1.0) {
        return Err(Error::InvalidParameter(
            "peak_threshold must be in (0, 1)".into(),
        ));
    }
    if !(min_distance >= 1.0) {
        return Err(Error::InvalidParameter("min_distance must be >= 1".into()));
    }
    let smooth = gaussian_smooth(h, sigma);
    let (w, hgt) = (smooth.width, smooth.height);
    let max = smooth.values.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Ok(NucleusSet::empty(NucleusSource::Detected));
    }
    let cutoff = peak_threshold * max;

    let mut candidates: Vec<(f64, u32, u32)> = Vec::new();
    for y in 0..hgt {
        for x in 0..w {
            let v = smooth.values[y * w + x];
            if v <= cutoff {
                continue;
            }
            let mut is_max = true;
            'nb: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w as i64 || ny >= hgt as i64 {
                        continue;
                    }
                    if smooth.values[ny as usize * w + nx as usize] > v {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                candidates.push((v, x as u32, y as u32));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.2.cmp(&b.2))
            .then(a.1.cmp(&b.1))
    });

    // Spatial hash of accepted peaks, cell side = min_distance.
    let cell = min_distance;
    let mut grid: std::collections::HashMap<(i64, i64), Vec<Coord>> = Default::default();
    let mut accepted: Vec<Coord> = Vec::new();
    let min_d2 = min_distance * min_distance;
    for &(_, x, y) in &candidates {
        let (cx, cy) = ((x as f64 / cell) as i64, (y as f64 / cell) as i64);
        let blocked = (-1..=1).any(|gy| {
            (-1..=1).any(|gx| {
                grid.get(&(cx + gx, cy + gy)).is_some_and(|pts| {
                    pts.iter().any(|&(px, py)| {
                        let dx = px as f64 - x as f64;
                        let dy = py as f64 - y as f64;
                        dx * dx + dy * dy < min_d2
                    })
                })
            })
        });
        if !blocked {
            grid.entry((cx, cy)).or_default().push((x, y));
            accepted.push((x, y));
        }
    }
    accepted.sort_by_key(|&(x, y)| (y, x));
    Ok(NucleusSet {
        coords: accepted,
        source: NucleusSource::Detected,
    })
}

/// Reads a `x,y` CSV and validates every row against `bounds`. Lines
/// starting with `#` before the header are comments.
pub fn load_nuclei_csv(path: impl AsRef<Path>, bounds: (usize, usize)) -> Result<NucleusSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .skip_while(|(_, l)| l.trim_start().starts_with('#'));
    match lines.next() {
        Some((_, header)) if header.trim() == "x,y" => {}
        Some((idx, header)) => {
            return Err(parse_err(idx + 1, format!("expected header \"x,y\", found {header:?}")))
        }
        None => return Err(parse_err(1, "missing header \"x,y\"".into())),
    }
    let mut coords = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(parse_err(lineno, format!("expected 2 fields, found {}", fields.len())));
        }
        let mut xy = [0i64; 2];
        for (slot, f) in xy.iter_mut().zip(&fields) {
            *slot = f
                .parse()
                .map_err(|_| parse_err(lineno, format!("not an integer: {f:?}")))?;
        }
        let [x, y] = xy;
        if x < 0 || y < 0 || x as usize >= bounds.0 || y as usize >= bounds.1 {
            return Err(parse_err(
                lineno,
                format!("coordinate ({x},{y}) outside {}x{} image", bounds.0, bounds.1),
            ));
        }
        let c = (x as u32, y as u32);
        if !seen.insert(c) {
            return Err(parse_err(lineno, format!("duplicate coordinate ({x},{y})")));
        }
        coords.push(c);
    }
    Ok(NucleusSet {
        coords,
        source: NucleusSource::Imported,
    })
}

pub fn save_nuclei_csv(n: &NucleusSet, path: impl AsRef<Path>) -> Result<()> {
    write_nuclei_csv(n, path, &[])
}

/// `save_nuclei_csv` preceded by `# ` comment lines.
pub fn write_nuclei_csv(n: &NucleusSet, path: impl AsRef<Path>, comments: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(8 + n.len() * 10);
    for c in comments {
        out.push_str(&format!("# {c}\n"));
    }
    out.push_str("x,y\n");
    for (x, y) in &n.coords {
        out.push_str(&format!("{x},{y}\n"));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
