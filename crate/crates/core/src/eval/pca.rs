//! Truncated-SVD baseline over the slice matrix.

use nalgebra::{DMatrix, DVector};

use super::metrics::PSNR_CAP;
use crate::btf::BtfDataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PcaResult {
    pub rank: usize,
    /// Over all slices in linear radiance, with the dataset maximum as peak.
    pub psnr: f64,
    /// Float32 storage for `rank` basis images and per-slice coefficients.
    pub bytes: usize,
}

pub fn pca_bytes(rank: usize, n_slices: usize, height: usize, width: usize) -> usize {
    rank * (n_slices + height * width * 3) * 4
}

/// One SVD, then reconstruction error at each requested rank.
pub fn pca_sweep(dataset: &BtfDataset, ranks: &[usize]) -> Result<Vec<PcaResult>> {
    let n = dataset.len();
    if let Some(r) = ranks.iter().find(|&&r| r == 0 || r > n) {
        return Err(Error::Config(format!("PCA rank {r} outside 1..={n}")));
    }
    let m = dataset.height() * dataset.width() * 3;
    let x = DMatrix::from_fn(n, m, |i, j| dataset.slices()[i].pixels()[j] as f64);
    let mean = DVector::from_fn(m, |j, _| x.column(j).mean());
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let svd = centered.clone().svd(true, true);
    let (u, vt) = (svd.u.expect("requested U"), svd.v_t.expect("requested Vᵀ"));
    // nalgebra leaves singular values unsorted
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let peak = x.max().max(f64::MIN_POSITIVE);
    let mut sorted: Vec<usize> = ranks.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut recon = DMatrix::<f64>::zeros(n, m);
    let mut used = 0;
    let mut mse_at = Vec::with_capacity(sorted.len());
    for &rank in &sorted {
        for &k in &order[used.min(order.len())..rank.min(order.len())] {
            recon += (u.column(k) * svd.singular_values[k]) * vt.row(k);
        }
        used = rank;
        mse_at.push((rank, (&recon - &centered).norm_squared() / (n * m) as f64));
    }
    Ok(ranks
        .iter()
        .map(|&rank| {
            let mse = mse_at.iter().find(|(r, _)| *r == rank).expect("every rank evaluated").1;
            let psnr = if mse == 0.0 {
                PSNR_CAP
            } else {
                (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
            };
            PcaResult {
                rank,
                psnr,
                bytes: pca_bytes(rank, n, dataset.height(), dataset.width()),
            }
        })
        .collect())
}

pub fn pca_baseline(dataset: &BtfDataset, rank: usize) -> Result<PcaResult> {
    Ok(pca_sweep(dataset, &[rank])?[0])
}
