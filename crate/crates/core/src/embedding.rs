//! Fixed sine-cosine embedding of the per-patch (azimuth, polar) field.
//!
//! Each patch cell `(i, j)` gets the vector
//! `[sin(c₁φ), cos(c₁φ), …, sin(c_{D'}φ), cos(c_{D'}φ), sin(c₁θ), cos(c₁θ), …]`
//! of length `D = 4·D'`, where the frequencies `c_n = 2^{(n-1)·log2(H')/D'}`
//! form a geometric ladder from 1 up to (but excluding) `H'`. Rows are ordered
//! `j·W' + i`.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::ErpGrid;
use crate::raster::{ErpRaster, RasterKind};

/// The frequency ladder `{2^{d_n}}`, `d_n = (n-1)·log2(h_patches)/count`.
pub fn coefficient_series(count: usize, h_patches: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::domain("count", "need at least one coefficient"));
    }
    if h_patches < 2 {
        return Err(Error::domain(
            "h_patches",
            format!("vertical patch count must be at least 2, got {h_patches}"),
        ));
    }
    let step = (h_patches as f64).log2() / count as f64;
    Ok((0..count).map(|n| (n as f64 * step).exp2()).collect())
}

/// Sine-cosine expansion of one `(φ, θ)` cell, azimuth block first.
pub fn embed_cell(azimuth: f64, polar: f64, coeffs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(4 * coeffs.len());
    for angle in [azimuth, polar] {
        for c in coeffs {
            let (s, co) = (c * angle).sin_cos();
            out.push(s);
            out.push(co);
        }
    }
    out
}

/// Per-patch angle field at patch-center resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleField {
    w_patches: usize,
    h_patches: usize,
    azimuths: Vec<f64>,
    polars: Vec<f64>,
}

impl AngleField {
    /// Angles of the patch centers `((i + ½)/W', (j + ½)/H')` of a
    /// `W' × H'` patch grid.
    pub fn new(h_patches: usize, w_patches: usize) -> Result<Self> {
        if h_patches == 0 || w_patches == 0 {
            return Err(Error::Config("patch grid must be nonempty".into()));
        }
        Ok(Self {
            w_patches,
            h_patches,
            azimuths: (0..w_patches).map(|i| TAU * (i as f64 + 0.5) / w_patches as f64).collect(),
            polars: (0..h_patches).map(|j| PI * (j as f64 + 0.5) / h_patches as f64).collect(),
        })
    }

    pub fn w_patches(&self) -> usize {
        self.w_patches
    }

    pub fn h_patches(&self) -> usize {
        self.h_patches
    }

    /// `(φ_i, θ_j)` of the cell in flattened row `j·W' + i`.
    pub fn cell(&self, token: usize) -> (f64, f64) {
        (self.azimuths[token % self.w_patches], self.polars[token / self.w_patches])
    }

    pub fn len(&self) -> usize {
        self.w_patches * self.h_patches
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The `(H'·W') × D` embedding matrix. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalEmbedding {
    h_patches: usize,
    w_patches: usize,
    coeffs: Vec<f64>,
    matrix: DMatrix<f64>,
}

impl SphericalEmbedding {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn tokens(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn h_patches(&self) -> usize {
        self.h_patches
    }

    pub fn w_patches(&self) -> usize {
        self.w_patches
    }

    /// Order-sensitive FNV-1a hash over the bit patterns of every entry.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for r in 0..self.matrix.nrows() {
            for c in 0..self.matrix.ncols() {
                for b in self.matrix[(r, c)].to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Lays the matrix out as a `W' × H'` raster with `D` channels.
    pub fn to_raster(&self) -> Result<ErpRaster> {
        let grid = ErpGrid::new(self.w_patches, self.h_patches)?;
        let mut data = Vec::with_capacity(self.matrix.len());
        for r in 0..self.matrix.nrows() {
            data.extend(self.matrix.row(r).iter());
        }
        ErpRaster::new(grid, RasterKind::Embedding, self.dim(), data)
    }
}

/// Builds the embedding for an `H' × W'` patch grid and feature width `D`.
pub fn build_sphere_embedding(h_patches: usize, w_patches: usize, dim: usize) -> Result<SphericalEmbedding> {
    if dim == 0 || !dim.is_multiple_of(4) {
        return Err(Error::Config(format!("embedding dim {dim} must be a positive multiple of 4")));
    }
    if w_patches < 2 {
        return Err(Error::domain("w_patches", "need at least 2 horizontal patches"));
    }
    let coeffs = coefficient_series(dim / 4, h_patches)?;
    let field = AngleField::new(h_patches, w_patches)?;
    let mut matrix = DMatrix::zeros(field.len(), dim);
    for token in 0..field.len() {
        let (phi, theta) = field.cell(token);
        for (c, v) in embed_cell(phi, theta, &coeffs).into_iter().enumerate() {
            matrix[(token, c)] = v;
        }
    }
    Ok(SphericalEmbedding {
        h_patches,
        w_patches,
        coeffs,
        matrix,
    })
}
