//! Diversity analysis: PCA of unit-sum octave-band spectra plus T60
//! histograms, written as CSV and an optional plot image.

use crate::generate::DatasetManifest;
use crate::DatasetError;
use aurasim_core::bands::{band_energies, N_BANDS};
use aurasim_core::metrics::t60_schroeder;
use aurasim_core::wavio::load_ir;
use serde::Serialize;
use std::path::Path;

/// Minimum entry count for a meaningful analysis.
pub const MIN_ENTRIES: usize = 10;

/// One T60 histogram bin over `[lo, hi)` (the last bin is closed).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Per-entry diversity measurements for one dataset.
#[derive(Debug, Clone, Serialize)]
pub struct DiversityReport {
    /// File-stem label per entry, aligned with the other vectors.
    pub labels: Vec<String>,
    /// Unit-sum octave-band energy spectra.
    pub spectra: Vec<[f64; N_BANDS]>,
    /// Projections onto the two leading principal components.
    pub coordinates: Vec<[f64; 2]>,
    /// Variances captured by the two components.
    pub eigenvalues: [f64; 2],
    pub t60: Vec<f64>,
    pub histogram: Vec<HistogramBin>,
}

/// Load every entry's SRIR, reduce it to a normalized band spectrum and a
/// T60, then project the spectra onto their two leading principal
/// components and bin the T60s into `n_bins` uniform bins.
pub fn analyze_diversity(
    manifest: &DatasetManifest,
    base_dir: &Path,
    n_bins: usize,
) -> Result<DiversityReport, DatasetError> {
    if manifest.entries.len() < MIN_ENTRIES {
        return Err(DatasetError::TooFewEntries {
            have: manifest.entries.len(),
            need: MIN_ENTRIES,
        });
    }
    if n_bins == 0 {
        return Err(DatasetError::EmptyHistogram);
    }

    let mut labels = Vec::new();
    let mut spectra = Vec::new();
    let mut t60 = Vec::new();
    for entry in &manifest.entries {
        let path = base_dir.join(&entry.srir_path);
        let (srir, _) = load_ir(&path)?;
        let proxy = srir.omni_proxy();
        let mut bands = band_energies(&proxy, srir.sample_rate as f64);
        let total: f64 = bands.iter().sum();
        if total > 0.0 {
            for b in &mut bands {
                *b /= total;
            }
        }
        labels.push(
            entry
                .srir_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
        spectra.push(bands);
        t60.push(t60_schroeder(&srir)?);
    }

    let (coordinates, eigenvalues) = pca_2d(&spectra);
    let histogram = t60_histogram(&t60, n_bins);
    Ok(DiversityReport { labels, spectra, coordinates, eigenvalues, t60, histogram })
}

/// Project rows onto their two leading principal components.
///
/// Covariance eigendecomposition (cyclic Jacobi), components ordered by
/// descending eigenvalue, each component's largest-magnitude loading made
/// positive. Degenerate inputs (fewer than two rows, or all rows equal)
/// yield zero coordinates and zero variance rather than an error.
pub fn pca_2d(rows: &[[f64; N_BANDS]]) -> (Vec<[f64; 2]>, [f64; 2]) {
    let n = rows.len();
    if n < 2 {
        return (vec![[0.0, 0.0]; n], [0.0, 0.0]);
    }
    let mut mean = [0.0; N_BANDS];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered: Vec<[f64; N_BANDS]> = rows
        .iter()
        .map(|row| std::array::from_fn(|j| row[j] - mean[j]))
        .collect();

    let mut cov = [[0.0; N_BANDS]; N_BANDS];
    for row in &centered {
        for i in 0..N_BANDS {
            for j in 0..N_BANDS {
                cov[i][j] += row[i] * row[j];
            }
        }
    }
    for r in &mut cov {
        for v in r.iter_mut() {
            *v /= (n - 1) as f64;
        }
    }

    let (eigenvalues, vectors) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..N_BANDS).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]).then(a.cmp(&b)));

    let mut components = [[0.0; N_BANDS]; 2];
    let mut top = [0.0; 2];
    for c in 0..2 {
        let k = order[c];
        top[c] = eigenvalues[k];
        for j in 0..N_BANDS {
            components[c][j] = vectors[j][k];
        }
        // Sign convention: largest-magnitude loading points positive.
        let lead = (0..N_BANDS)
            .max_by(|&a, &b| components[c][a].abs().total_cmp(&components[c][b].abs()))
            .unwrap();
        if components[c][lead] < 0.0 {
            for v in &mut components[c] {
                *v = -*v;
            }
        }
    }

    let coordinates = centered
        .iter()
        .map(|row| {
            std::array::from_fn(|c| (0..N_BANDS).map(|j| row[j] * components[c][j]).sum())
        })
        .collect();
    (coordinates, top)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns the
/// eigenvalues and a matrix whose columns are the matching eigenvectors.
fn jacobi_eigen(mut a: [[f64; N_BANDS]; N_BANDS]) -> ([f64; N_BANDS], [[f64; N_BANDS]; N_BANDS]) {
    let mut v = [[0.0; N_BANDS]; N_BANDS];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let frobenius: f64 = a
        .iter()
        .flatten()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if frobenius == 0.0 {
        return ([0.0; N_BANDS], v);
    }
    for _ in 0..100 {
        let off: f64 = (0..N_BANDS)
            .flat_map(|i| (0..N_BANDS).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off.sqrt() <= 1e-14 * frobenius {
            break;
        }
        for p in 0..N_BANDS - 1 {
            for q in p + 1..N_BANDS {
                if a[p][q].abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..N_BANDS {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..N_BANDS {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in &mut v {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues = std::array::from_fn(|i| a[i][i]);
    (eigenvalues, v)
}

/// Bin values into `n_bins` uniform bins spanning their range. Identical
/// values collapse to a single all-containing bin.
pub fn t60_histogram(values: &[f64], n_bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() || n_bins == 0 {
        return Vec::new();
    }
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    let span = max - min;
    if span <= 0.0 {
        return vec![HistogramBin { lo: min, hi: max, count: values.len() }];
    }
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|b| HistogramBin {
            lo: min + span * b as f64 / n_bins as f64,
            hi: min + span * (b + 1) as f64 / n_bins as f64,
            count: 0,
        })
        .collect();
    for &v in values {
        let idx = (((v - min) / span) * n_bins as f64) as usize;
        bins[idx.min(n_bins - 1)].count += 1;
    }
    bins
}

/// Write one CSV row per entry: label, the two PCA coordinates, the T60,
/// and the normalized band spectrum.
pub fn write_entries_csv(report: &DiversityReport, path: &Path) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| DatasetError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let mut header = vec!["label".to_string(), "pc1".into(), "pc2".into(), "t60_s".into()];
    header.extend((0..N_BANDS).map(|b| format!("band_{b}")));
    let write = |r: Result<(), csv::Error>| {
        r.map_err(|e| DatasetError::Format { path: path.to_path_buf(), msg: e.to_string() })
    };
    write(w.write_record(&header))?;
    for i in 0..report.labels.len() {
        let mut record = vec![
            report.labels[i].clone(),
            report.coordinates[i][0].to_string(),
            report.coordinates[i][1].to_string(),
            report.t60[i].to_string(),
        ];
        record.extend(report.spectra[i].iter().map(|v| v.to_string()));
        write(w.write_record(&record))?;
    }
    write(w.flush().map_err(csv::Error::from))
}

/// Write the T60 histogram as one CSV row per bin.
pub fn write_histogram_csv(report: &DiversityReport, path: &Path) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| DatasetError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let write = |r: Result<(), csv::Error>| {
        r.map_err(|e| DatasetError::Format { path: path.to_path_buf(), msg: e.to_string() })
    };
    write(w.write_record(["t60_lo_s", "t60_hi_s", "count"]))?;
    for bin in &report.histogram {
        write(w.write_record([bin.lo.to_string(), bin.hi.to_string(), bin.count.to_string()]))?;
    }
    write(w.flush().map_err(csv::Error::from))
}

const PLOT_W: u32 = 900;
const PLOT_H: u32 = 450;
const MARGIN: u32 = 40;

/// Render a two-panel PNG: PCA scatter on the left, T60 histogram bars on
/// the right. Purely geometric (no text) so it stays dependency-light.
pub fn render_plot(report: &DiversityReport, path: &Path) -> Result<(), DatasetError> {
    let mut img = image::RgbImage::from_pixel(PLOT_W, PLOT_H, image::Rgb([255, 255, 255]));
    let half = PLOT_W / 2;
    let axis = image::Rgb([60, 60, 60]);

    // Panel frames.
    for panel in 0..2 {
        let x0 = panel * half + MARGIN;
        let x1 = (panel + 1) * half - MARGIN;
        let (y0, y1) = (MARGIN, PLOT_H - MARGIN);
        for x in x0..=x1 {
            img.put_pixel(x, y1, axis);
        }
        for y in y0..=y1 {
            img.put_pixel(x0, y, axis);
        }
    }

    // Left: PCA scatter.
    if !report.coordinates.is_empty() {
        let (mut min_x, mut max_x, mut min_y, mut max_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for c in &report.coordinates {
            min_x = min_x.min(c[0]);
            max_x = max_x.max(c[0]);
            min_y = min_y.min(c[1]);
            max_y = max_y.max(c[1]);
        }
        let span = |lo: f64, hi: f64| if hi - lo > 0.0 { hi - lo } else { 1.0 };
        let (sx, sy) = (span(min_x, max_x), span(min_y, max_y));
        let dot = image::Rgb([30, 80, 200]);
        for c in &report.coordinates {
            let px = MARGIN as f64
                + (c[0] - min_x) / sx * (half - 2 * MARGIN) as f64;
            let py = (PLOT_H - MARGIN) as f64
                - (c[1] - min_y) / sy * (PLOT_H - 2 * MARGIN) as f64;
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    let (x, y) = (px as i64 + dx, py as i64 + dy);
                    if x >= 0 && y >= 0 && (x as u32) < PLOT_W && (y as u32) < PLOT_H {
                        img.put_pixel(x as u32, y as u32, dot);
                    }
                }
            }
        }
    }

    // Right: histogram bars.
    if !report.histogram.is_empty() {
        let peak = report.histogram.iter().map(|b| b.count).max().unwrap_or(1).max(1);
        let bar = image::Rgb([200, 90, 30]);
        let n = report.histogram.len() as u32;
        let inner_w = half - 2 * MARGIN;
        for (i, bin) in report.histogram.iter().enumerate() {
            let x0 = half + MARGIN + (i as u32) * inner_w / n + 1;
            let x1 = half + MARGIN + (i as u32 + 1) * inner_w / n - 1;
            let height = ((bin.count as f64 / peak as f64) * (PLOT_H - 2 * MARGIN) as f64) as u32;
            for x in x0..=x1.max(x0) {
                for y in (PLOT_H - MARGIN - height)..(PLOT_H - MARGIN) {
                    img.put_pixel(x, y, bar);
                }
            }
        }
    }

    img.save(path).map_err(|e| DatasetError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}
