use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use super::{AdjacencyTensor, VertexFeatureMatrix};
use crate::error::{Error, Result};
use crate::imaging::{extract_patch, quantize, to_grayscale, Patch, RgbImage};
use crate::nucleus::NucleusSet;

/// Gray levels of each co-occurrence matrix.
pub const GLCM_LEVELS: usize = 5;

/// Per-channel patch mean, scaled to `[0, 1]`.
pub fn avg_rgb(p: &Patch) -> [f64; 3] {
    let mut sum = [0u64; 3];
    for px in p.pixels() {
        for c in 0..3 {
            sum[c] += px[c] as u64;
        }
    }
    let count = p.pixels().len() as f64;
    sum.map(|s| s as f64 / count / 255.0)
}

/// Horizontal then vertical 5x5 co-occurrence matrices, each normalized to
/// unit mass, flattened row-major into 50 values.
pub fn glcm_features(p: &Patch) -> Vec<f64> {
    let levels = quantize(&to_grayscale(p), GLCM_LEVELS).expect("valid level count");
    let side = levels.side;
    let at = |x: usize, y: usize| levels.values[y * side + x] as usize;
    let mut out = vec![0.0; 2 * GLCM_LEVELS * GLCM_LEVELS];
    for (dir, (dx, dy)) in [(1usize, 0usize), (0, 1)].into_iter().enumerate() {
        let block = &mut out[dir * GLCM_LEVELS * GLCM_LEVELS..(dir + 1) * GLCM_LEVELS * GLCM_LEVELS];
        let mut counts = [0u64; GLCM_LEVELS * GLCM_LEVELS];
        for y in 0..side.saturating_sub(dy) {
            for x in 0..side.saturating_sub(dx) {
                counts[at(x, y) * GLCM_LEVELS + at(x + dx, y + dy)] += 1;
            }
        }
        let total: u64 = counts.iter().sum();
        if total > 0 {
            for (dst, &c) in block.iter_mut().zip(&counts) {
                *dst = c as f64 / total as f64;
            }
        }
    }
    out
}

/// Externally computed per-nucleus embeddings.
pub trait EmbeddingProvider: Sync {
    fn dim(&self) -> usize;
    /// Embedding of nucleus `index`, exactly `dim()` values.
    fn lookup(&self, index: usize) -> Result<&[f64]>;
}

/// Zero-width provider used when no embeddings are supplied.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoEmbeddings;

impl EmbeddingProvider for NoEmbeddings {
    fn dim(&self) -> usize {
        0
    }

    fn lookup(&self, _index: usize) -> Result<&[f64]> {
        Ok(&[])
    }
}

/// Row `i` of an embeddings CSV serves nucleus `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvEmbeddings {
    rows: Array2<f64>,
}

impl CsvEmbeddings {
    pub fn from_rows(rows: Array2<f64>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }
}

impl EmbeddingProvider for CsvEmbeddings {
    fn dim(&self) -> usize {
        self.rows.ncols()
    }

    fn lookup(&self, index: usize) -> Result<&[f64]> {
        if index >= self.rows.nrows() {
            return Err(Error::InvalidParameter(format!(
                "no embedding for nucleus {index} ({} rows)",
                self.rows.nrows()
            )));
        }
        Ok(self
            .rows
            .row(index)
            .to_slice()
            .expect("standard layout rows are contiguous"))
    }
}

/// Reads a headed (`e0,e1,...`) numeric CSV with exactly `n` data rows.
pub fn load_embeddings_csv(path: impl AsRef<Path>, n: usize) -> Result<CsvEmbeddings> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        message,
    };
    let dim = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .len();
    let mut values = Vec::with_capacity(n * dim);
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dim {
            return Err(parse_err(
                line,
                format!("ragged row: {} cells, header has {dim}", record.len()),
            ));
        }
        for cell in record.iter() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric cell {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite cell {cell:?}")));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::RowCountMismatch {
            expected: n,
            found: rows,
        });
    }
    let rows = Array2::from_shape_vec((n, dim), values).expect("row-major values");
    Ok(CsvEmbeddings { rows })
}

/// Per nucleus: `avg_rgb(3) ‖ glcm(50) ‖ embedding(E) ‖ degree(1)`.
pub fn assemble_vertex_features(
    img: &RgbImage,
    nuclei: &NucleusSet,
    adjacency: &AdjacencyTensor,
    embeddings: &dyn EmbeddingProvider,
    window: usize,
) -> Result<VertexFeatureMatrix> {
    if window.is_multiple_of(2) {
        return Err(Error::EvenSide(window));
    }
    if adjacency.n() != nuclei.len() {
        return Err(Error::ShapeMismatch(format!(
            "adjacency over {} vertices for {} nuclei",
            adjacency.n(),
            nuclei.len()
        )));
    }
    let e = embeddings.dim();
    let f = 54 + e;
    let rows: Vec<Vec<f64>> = nuclei
        .coords()
        .par_iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let patch = extract_patch(img, (x as i64, y as i64), window)?;
            let mut row = Vec::with_capacity(f);
            row.extend_from_slice(&avg_rgb(&patch));
            row.extend(glcm_features(&patch));
            let emb = embeddings.lookup(i)?;
            if emb.len() != e {
                return Err(Error::ShapeMismatch(format!(
                    "embedding {i} has {} values, expected {e}",
                    emb.len()
                )));
            }
            row.extend_from_slice(emb);
            row.push(adjacency.degree(i) as f64);
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let values = Array2::from_shape_vec((nuclei.len(), f), rows.concat()).expect("rows of width f");
    VertexFeatureMatrix::new(values, VertexFeatureMatrix::default_layout(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histograph::build_edges;
    use crate::imaging::quantize_value;
    use crate::nucleus::NucleusSource;

    fn patch_from_gray(side: usize, gray: &[u8]) -> Patch {
        Patch::from_pixels(side, (0, 0), gray.iter().map(|&g| [g, g, g]).collect()).unwrap()
    }

    #[test]
    fn uniform_red_patch() {
        let p = Patch::from_pixels(3, (1, 1), vec![[255, 0, 0]; 9]).unwrap();
        assert_eq!(avg_rgb(&p), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_patch_glcm_mass_on_diagonal() {
        // Gray 160 -> level 3.
        let p = patch_from_gray(5, &[160; 25]);
        let g = glcm_features(&p);
        assert_eq!(g.len(), 50);
        assert_eq!(g[3 * 5 + 3], 1.0);
        assert_eq!(g[25 + 3 * 5 + 3], 1.0);
        assert_eq!(g.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn hand_counted_three_by_three() {
        // Levels (g*5/256): 0->0, 60->1, 110->2, 160->3, 220->4.
        let gray = [0, 60, 60, 110, 160, 220, 0, 0, 220];
        let lv: Vec<u8> = gray.iter().map(|&g| quantize_value(g, 5)).collect();
        assert_eq!(lv, vec![0, 1, 1, 2, 3, 4, 0, 0, 4]);
        let g = glcm_features(&patch_from_gray(3, &gray));
        // Horizontal pairs: (0,1) (1,1) (2,3) (3,4) (0,0) (0,4).
        let mut h = [0.0; 25];
        for (a, b) in [(0, 1), (1, 1), (2, 3), (3, 4), (0, 0), (0, 4)] {
            h[a * 5 + b] += 1.0 / 6.0;
        }
        // Vertical pairs: (0,2) (1,3) (1,4) (2,0) (3,0) (4,4).
        let mut v = [0.0; 25];
        for (a, b) in [(0, 2), (1, 3), (1, 4), (2, 0), (3, 0), (4, 4)] {
            v[a * 5 + b] += 1.0 / 6.0;
        }
        for i in 0..25 {
            assert!((g[i] - h[i]).abs() < 1e-15);
            assert!((g[25 + i] - v[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn single_pixel_patch_is_all_zero() {
        let g = glcm_features(&patch_from_gray(1, &[77]));
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn feature_widths_and_degree() {
        let img = RgbImage::from_fn(200, 200, |x, y| [(x % 256) as u8, (y % 256) as u8, 90]).unwrap();
        let n = NucleusSet::new(vec![(10, 10), (40, 10), (190, 190)], NucleusSource::Imported, (200, 200)).unwrap();
        let adj = build_edges(&n, 100.0).unwrap();
        let m = assemble_vertex_features(&img, &n, &adj, &NoEmbeddings, 71).unwrap();
        assert_eq!(m.f(), 54);
        assert_eq!(m.values()[[0, 53]], 1.0);
        assert_eq!(m.values()[[2, 53]], 0.0);

        let emb = CsvEmbeddings::from_rows(Array2::from_elem((3, 384), 0.25));
        let m = assemble_vertex_features(&img, &n, &adj, &emb, 71).unwrap();
        assert_eq!(m.f(), 438);
        assert_eq!(m.segment("embedding").unwrap().offset, 53);
        assert_eq!(m.values()[[1, 60]], 0.25);
        assert!(m.values().iter().all(|v| v.is_finite()));

        let short = CsvEmbeddings::from_rows(Array2::zeros((2, 4)));
        assert!(assemble_vertex_features(&img, &n, &adj, &short, 71).is_err());
        assert!(assemble_vertex_features(&img, &n, &adj, &NoEmbeddings, 70).is_err());
    }

    #[test]
    fn embeddings_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let header: Vec<String> = (0..384).map(|i| format!("e{i}")).collect();
        let row: Vec<String> = (0..384).map(|i| format!("{}", i as f64 * 0.5)).collect();
        let body = format!("{}\n{}\n{}\n{}\n", header.join(","), row.join(","), row.join(","), row.join(","));
        std::fs::write(&p, &body).unwrap();
        let e = load_embeddings_csv(&p, 3).unwrap();
        assert_eq!(e.dim(), 384);
        assert_eq!(e.lookup(2).unwrap()[3], 1.5);
        assert!(e.lookup(3).is_err());

        let err = load_embeddings_csv(&p, 4).unwrap_err();
        assert!(err.to_string().contains("row count mismatch"));

        std::fs::write(&p, "e0,e1\n1,2\n3\n").unwrap();
        assert!(load_embeddings_csv(&p, 2).is_err());
        std::fs::write(&p, "e0,e1\n1,2\n3,x\n").unwrap();
        assert!(load_embeddings_csv(&p, 2).is_err());
    }
}
