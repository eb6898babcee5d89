//! Per-image metric tables and their CSV form.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Psnr,
    Ssim,
    MsSsim,
    Mse,
    Mae,
    Brisque,
    Niqe,
}

impl Metric {
    /// CSV column order.
    pub const ALL: [Metric; 7] =
        [Metric::Psnr, Metric::Ssim, Metric::MsSsim, Metric::Mse, Metric::Mae, Metric::Brisque, Metric::Niqe];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
            Metric::MsSsim => "ms_ssim",
            Metric::Mse => "mse",
            Metric::Mae => "mae",
            Metric::Brisque => "brisque",
            Metric::Niqe => "niqe",
        }
    }

    pub fn needs_reference(self) -> bool {
        !matches!(self, Metric::Brisque | Metric::Niqe)
    }

    /// Parses a comma-separated list into canonical column order without
    /// duplicates.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Metric = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::Argument("no metrics requested".into()));
        }
        out.sort();
        Ok(out)
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::Argument(format!("unknown metric `{s}`")))
    }
}

/// Rows of per-image values for a fixed metric list.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metrics: Vec<Metric>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl MetricReport {
    pub fn new(metrics: Vec<Metric>) -> Self {
        Self { metrics, rows: Vec::new() }
    }

    pub fn push(&mut self, image: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.metrics.len() {
            return Err(Error::Shape(format!("{} values for {} metrics", values.len(), self.metrics.len())));
        }
        self.rows.push((image.into(), values));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Arithmetic mean per metric, summed in row order; NaN when empty.
    pub fn means(&self) -> Vec<f64> {
        let n = self.rows.len() as f64;
        (0..self.metrics.len()).map(|j| self.rows.iter().map(|r| r.1[j]).sum::<f64>() / n).collect()
    }

    pub fn value(&self, image: &str, metric: Metric) -> Option<f64> {
        let j = self.metrics.iter().position(|&m| m == metric)?;
        self.rows.iter().find(|r| r.0 == image).map(|r| r.1[j])
    }

    fn header(&self) -> String {
        let mut h = String::from("image");
        for m in &self.metrics {
            h.push(',');
            h.push_str(m.name());
        }
        h
    }

    fn line(name: &str, values: &[f64]) -> String {
        let mut s = name.to_string();
        for v in values {
            let _ = write!(s, ",{v:.6}");
        }
        s
    }

    /// The `MEAN` row as it appears in the CSV.
    pub fn mean_line(&self) -> String {
        Self::line("MEAN", &self.means())
    }

    /// Header, rows sorted by image name, then the `MEAN` row.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<&(String, Vec<f64>)> = self.rows.iter().collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out = self.header();
        out.push('\n');
        for (name, values) in rows {
            out.push_str(&Self::line(name, values));
            out.push('\n');
        }
        out.push_str(&self.mean_line());
        out.push('\n');
        out
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Argument("rank correlation needs two equal-length series of at least 2".into()));
    }
    let ranks = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    };
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}
