//! Evaluation metrics: Pearson correlation between surrogate and true
//! returns, Gaussian Fréchet distance in critic-feature space, and the
//! two-component PCA export. Also the CSV row formats the training loop
//! writes.

use std::io::Write;

use crate::linalg::{matmul_nn, sym_eigen, Matrix};
use crate::nn::DenseNet;
use crate::{Error, Result};

/// Pearson correlation coefficient of two equally long series.
pub fn compute_pcc(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dim {
            what: "pcc series",
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Config("pcc needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Numerical(
            "pcc undefined for zero-variance series".into(),
        ));
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

/// Column means and the unbiased sample covariance of row-major data.
pub fn mean_and_covariance(data: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let (n, d) = (data.rows(), data.cols());
    if n < 2 {
        return Err(Error::Config("covariance needs at least two rows".into()));
    }
    let mean = data.mean_rows();
    let mut cov = Matrix::zeros(d, d);
    for i in 0..n {
        let row = data.row(i);
        for a in 0..d {
            let da = row[a] - mean[a];
            for b in a..d {
                let v = cov.get(a, b) + da * (row[b] - mean[b]);
                cov.set(a, b, v);
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov.get(a, b) / denom;
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }
    Ok((mean, cov))
}

/// Eigenvalues clipped for a PSD matrix: small negatives go to zero,
/// anything below `-1e-8` is an error.
fn clip_psd_eigenvalues(vals: &[f64], what: &str) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(vals.len());
    for &v in vals {
        if v < -1e-8 {
            return Err(Error::Numerical(format!(
                "{what} has negative eigenvalue {v}"
            )));
        }
        out.push(v.max(0.0));
    }
    Ok(out)
}

/// Symmetric PSD square root via eigendecomposition.
fn sqrtm_psd(m: &Matrix, what: &str) -> Result<Matrix> {
    let (vals, vecs) = sym_eigen(m)?;
    let vals = clip_psd_eigenvalues(&vals, what)?;
    let d = vals.len();
    let mut scaled = vecs.clone();
    for j in 0..d {
        let s = vals[j].sqrt();
        for i in 0..d {
            scaled.set(i, j, scaled.get(i, j) * s);
        }
    }
    Ok(matmul_nn(&scaled, &vecs.transpose()))
}

/// Gaussian Fréchet distance between two sample sets:
/// `|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2})`.
pub fn compute_fd(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::Dim {
            what: "fd feature dims",
            expected: a.cols(),
            got: b.cols(),
        });
    }
    let d = a.cols();
    if a.rows() < d + 1 || b.rows() < d + 1 {
        return Err(Error::Config(format!(
            "fd needs at least dim+1 = {} rows per set, got {} and {}",
            d + 1,
            a.rows(),
            b.rows()
        )));
    }
    let (mu1, s1) = mean_and_covariance(a)?;
    let (mu2, s2) = mean_and_covariance(b)?;

    let mean_term: f64 = mu1
        .iter()
        .zip(&mu2)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();

    let s1_sqrt = sqrtm_psd(&s1, "first covariance")?;
    // M = S1^{1/2} S2 S1^{1/2}, symmetric PSD
    let inner = matmul_nn(&matmul_nn(&s1_sqrt, &s2), &s1_sqrt);
    let (vals, _) = sym_eigen(&inner)?;
    let vals = clip_psd_eigenvalues(&vals, "cross covariance")?;
    let trace_sqrt: f64 = vals.iter().map(|v| v.sqrt()).sum();

    let tr1: f64 = (0..d).map(|i| s1.get(i, i)).sum();
    let tr2: f64 = (0..d).map(|i| s2.get(i, i)).sum();
    let fd = mean_term + tr1 + tr2 - 2.0 * trace_sqrt;
    if fd < -1e-8 {
        return Err(Error::Numerical(format!("fd came out negative: {fd}")));
    }
    Ok(fd.max(0.0))
}

/// Map rows through the critic's penultimate layer.
pub fn penultimate_features(critic: &DenseNet, pairs: &[Vec<f64>]) -> Result<Matrix> {
    let mut rows = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (_, feats) = critic.forward_features(p)?;
        rows.push(feats);
    }
    Matrix::from_rows(&rows)
}

/// Fréchet distance between two sets of (state, action) pairs in the
/// critic's feature space.
pub fn evaluate_fd_to_expert(
    critic: &DenseNet,
    expert_pairs: &[Vec<f64>],
    comparison_pairs: &[Vec<f64>],
) -> Result<f64> {
    let fa = penultimate_features(critic, expert_pairs)?;
    let fb = penultimate_features(critic, comparison_pairs)?;
    // degenerate extractor: every feature constant across both sets
    let (_, cov_a) = mean_and_covariance(&fa)?;
    let (_, cov_b) = mean_and_covariance(&fb)?;
    let total_var: f64 = (0..fa.cols())
        .map(|i| cov_a.get(i, i) + cov_b.get(i, i))
        .sum();
    if total_var <= 0.0 {
        return Err(Error::Numerical(
            "feature extractor is constant on both sets".into(),
        ));
    }
    compute_fd(&fa, &fb)
}

/// Principal-component projection.
#[derive(Debug, Clone)]
pub struct Pca {
    /// `(n_components, dim)` projection directions, rows orthonormal.
    pub components: Matrix,
    /// Eigenvalues (variances) per component, descending.
    pub eigenvalues: Vec<f64>,
    /// Column means subtracted before projection.
    pub mean: Vec<f64>,
    /// `(n, n_components)` projected rows.
    pub projected: Matrix,
}

/// Mean-centered top-k PCA via eigendecomposition of the sample
/// covariance.
pub fn export_pca(pairs: &[Vec<f64>], n_components: usize) -> Result<Pca> {
    if pairs.len() < 3 {
        return Err(Error::Config("pca needs at least three rows".into()));
    }
    let data = Matrix::from_rows(pairs)?;
    let d = data.cols();
    if n_components == 0 || n_components > d {
        return Err(Error::Config(format!(
            "n_components must lie in 1..={d}"
        )));
    }
    let (mean, cov) = mean_and_covariance(&data)?;
    let (vals, vecs) = sym_eigen(&cov)?;
    if vals.iter().all(|v| v.abs() < 1e-300) {
        return Err(Error::Numerical("pca input has rank zero".into()));
    }
    // take the top components (sym_eigen sorts ascending)
    let mut components = Matrix::zeros(n_components, d);
    let mut eigenvalues = Vec::with_capacity(n_components);
    for c in 0..n_components {
        let col = d - 1 - c;
        eigenvalues.push(vals[col].max(0.0));
        for i in 0..d {
            components.set(c, i, vecs.get(i, col));
        }
    }
    let mut projected = Matrix::zeros(data.rows(), n_components);
    for i in 0..data.rows() {
        let row = data.row(i);
        for c in 0..n_components {
            let mut acc = 0.0;
            for j in 0..d {
                acc += (row[j] - mean[j]) * components.get(c, j);
            }
            projected.set(i, c, acc);
        }
    }
    Ok(Pca {
        components,
        eigenvalues,
        mean,
        projected,
    })
}

/// Mean squared per-row reconstruction error of the PCA projection.
pub fn pca_reconstruction_error(pairs: &[Vec<f64>], pca: &Pca) -> Result<f64> {
    let n = pairs.len();
    let d = pca.mean.len();
    let k = pca.components.rows();
    let mut total = 0.0;
    for (i, row) in pairs.iter().enumerate() {
        for j in 0..d {
            let mut rec = pca.mean[j];
            for c in 0..k {
                rec += pca.projected.get(i, c) * pca.components.get(c, j);
            }
            let diff = row[j] - rec;
            total += diff * diff;
        }
    }
    Ok(total / n as f64)
}

fn csv_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

/// One row of the training metrics log.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub step: u64,
    pub mean_true_return: f64,
    pub mean_surrogate_return: f64,
    pub tau: f64,
    pub pseudo_buffer_size: usize,
    pub acceptance_rate: f64,
    pub disc_loss: f64,
    pub pcc: f64,
    pub fd: f64,
}

pub const METRICS_HEADER: &str =
    "step,mean_true_return,mean_surrogate_return,tau,pseudo_buffer_size,acceptance_rate,disc_loss,pcc,fd";

impl MetricsRow {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            csv_f64(self.mean_true_return),
            csv_f64(self.mean_surrogate_return),
            csv_f64(self.tau),
            self.pseudo_buffer_size,
            csv_f64(self.acceptance_rate),
            csv_f64(self.disc_loss),
            csv_f64(self.pcc),
            csv_f64(self.fd),
        )?;
        Ok(())
    }
}

/// One evaluation episode: true and surrogate returns side by side.
#[derive(Debug, Clone)]
pub struct EpisodeRow {
    pub step: u64,
    pub episode: usize,
    pub true_return: f64,
    pub surrogate_return: f64,
}

pub const EPISODES_HEADER: &str = "step,episode,true_return,surrogate_return";

impl EpisodeRow {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(
            w,
            "{},{},{},{}",
            self.step,
            self.episode,
            csv_f64(self.true_return),
            csv_f64(self.surrogate_return),
        )?;
        Ok(())
    }
}

/// Parse an episodes CSV written by the training loop.
pub fn parse_episodes_csv(text: &str) -> Result<Vec<EpisodeRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == EPISODES_HEADER => {}
        _ => return Err(Error::parse(1, "bad episodes header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::parse(i + 1, "expected 4 columns"));
        }
        rows.push(EpisodeRow {
            step: cols[0]
                .parse()
                .map_err(|e| Error::parse(i + 1, format!("bad step: {e}")))?,
            episode: cols[1]
                .parse()
                .map_err(|e| Error::parse(i + 1, format!("bad episode: {e}")))?,
            true_return: cols[2]
                .parse()
                .map_err(|e| Error::parse(i + 1, format!("bad true return: {e}")))?,
            surrogate_return: cols[3]
                .parse()
                .map_err(|e| Error::parse(i + 1, format!("bad surrogate return: {e}")))?,
        });
    }
    Ok(rows)
}

/// Parse the metrics CSV written by the training loop.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == METRICS_HEADER => {}
        _ => return Err(Error::parse(1, "bad metrics header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(Error::parse(i + 1, "expected 9 columns"));
        }
        let f = |s: &str, what: &str| -> Result<f64> {
            if s == "nan" {
                return Ok(f64::NAN);
            }
            s.parse()
                .map_err(|e| Error::parse(i + 1, format!("bad {what}: {e}")))
        };
        rows.push(MetricsRow {
            step: cols[0]
                .parse()
                .map_err(|e| Error::parse(i + 1, format!("bad step: {e}")))?,
            mean_true_return: f(cols[1], "true return")?,
            mean_surrogate_return: f(cols[2], "surrogate return")?,
            tau: f(cols[3], "tau")?,
            pseudo_buffer_size: cols[4]
                .parse()
                .map_err(|e| Error::parse(i + 1, format!("bad buffer size: {e}")))?,
            acceptance_rate: f(cols[5], "acceptance rate")?,
            disc_loss: f(cols[6], "disc loss")?,
            pcc: f(cols[7], "pcc")?,
            fd: f(cols[8], "fd")?,
        });
    }
    Ok(rows)
}
