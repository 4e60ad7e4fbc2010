//! Category-wise discretization of the 74-dim openSMILE descriptor stream.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::{FeatureSequence, OPENSMILE_DIM};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

use super::elbow::elbow_k;
use super::kmeans::{assign_rows, kmeans_fit, Codebook, KMeansParams, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryName {
    Prosody,
    Spectral,
    Mfcc,
    VoiceQuality,
    Formants,
    AuditoryBands,
    Additional,
}

impl CategoryName {
    pub const ALL: [CategoryName; 7] = [
        CategoryName::Prosody,
        CategoryName::Spectral,
        CategoryName::Mfcc,
        CategoryName::VoiceQuality,
        CategoryName::Formants,
        CategoryName::AuditoryBands,
        CategoryName::Additional,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CategoryName::Prosody => "prosody",
            CategoryName::Spectral => "spectral",
            CategoryName::Mfcc => "mfcc",
            CategoryName::VoiceQuality => "voice_quality",
            CategoryName::Formants => "formants",
            CategoryName::AuditoryBands => "auditory_bands",
            CategoryName::Additional => "additional",
        }
    }
}

impl fmt::Display for CategoryName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CategoryName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::config("category", format!("unknown category `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Category {
    pub name: CategoryName,
    /// First column in the 74-dim layout.
    pub offset: usize,
    pub dim: usize,
    pub k: usize,
}

/// Ordered column layout of the descriptor stream with a codebook size per category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryTable {
    categories: Vec<Category>,
}

impl CategoryTable {
    /// Prosody 6/32, Spectral 14/64, MFCC 14/64, Voice quality 5/32, Formants 6/32,
    /// Auditory bands 26/128, Additional 3/16.
    pub fn standard() -> Self {
        let spec = [
            (CategoryName::Prosody, 6, 32),
            (CategoryName::Spectral, 14, 64),
            (CategoryName::Mfcc, 14, 64),
            (CategoryName::VoiceQuality, 5, 32),
            (CategoryName::Formants, 6, 32),
            (CategoryName::AuditoryBands, 26, 128),
            (CategoryName::Additional, 3, 16),
        ];
        let mut offset = 0;
        let categories = spec
            .iter()
            .map(|&(name, dim, k)| {
                let c = Category {
                    name,
                    offset,
                    dim,
                    k,
                };
                offset += dim;
                c
            })
            .collect();
        Self { categories }
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn get(&self, name: CategoryName) -> Category {
        *self
            .categories
            .iter()
            .find(|c| c.name == name)
            .expect("every category is in the table")
    }

    pub fn total_dim(&self) -> usize {
        self.categories.iter().map(|c| c.dim).sum()
    }

    pub fn total_k(&self) -> usize {
        self.categories.iter().map(|c| c.k).sum()
    }

    /// Replaces the codebook sizes, e.g. with elbow-selected values.
    pub fn with_ks(&self, ks: &[usize]) -> Self {
        assert_eq!(ks.len(), self.categories.len());
        Self {
            categories: self
                .categories
                .iter()
                .zip(ks)
                .map(|(c, &k)| Category { k, ..*c })
                .collect(),
        }
    }
}

/// How each category's codebook size is picked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode", content = "candidates")]
pub enum CategoryKMode {
    /// The table's fixed sizes.
    #[default]
    Table,
    /// Knee of the distortion curve over the given candidates.
    Elbow(Vec<usize>),
}

/// Trains one codebook per category on the columns of `frames` (N×74).
pub fn fit_opensmile_codebooks<T: Scalar>(
    frames: &Matrix<T>,
    table: &CategoryTable,
    mode: &CategoryKMode,
    seed: u64,
    params: KMeansParams,
) -> Result<(CategoryTable, Vec<Codebook<T>>)> {
    if frames.cols() != OPENSMILE_DIM {
        return Err(Error::Shape(format!(
            "openSMILE frames have width {}, expected {OPENSMILE_DIM}",
            frames.cols()
        )));
    }
    let mut ks = Vec::with_capacity(table.categories().len());
    let mut books = Vec::with_capacity(table.categories().len());
    for (i, cat) in table.categories().iter().enumerate() {
        let block = frames.column_slice(cat.offset, cat.dim);
        let cat_seed = seed.wrapping_add(i as u64);
        let k = match mode {
            CategoryKMode::Table => cat.k,
            CategoryKMode::Elbow(candidates) => {
                let usable: Vec<usize> = candidates
                    .iter()
                    .copied()
                    .filter(|&k| k <= block.rows())
                    .collect();
                elbow_k(&block, &usable, cat_seed, params)?.chosen_k
            }
        };
        let cb = kmeans_fit(&block, k, cat_seed, params, &format!("osm:{}", cat.name))?;
        ks.push(k);
        books.push(cb);
    }
    Ok((table.with_ks(&ks), books))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedOpensmile<T> {
    pub tokens: Vec<TokenSequence>,
    pub reconstruction: FeatureSequence<T>,
}

/// Slices each category, assigns it against its codebook and re-concatenates the
/// reconstructed slices in table order.
pub fn quantize_opensmile<T: Scalar>(
    h_os: &FeatureSequence<T>,
    table: &CategoryTable,
    codebooks: &[Codebook<T>],
) -> Result<QuantizedOpensmile<T>> {
    if h_os.dim() != OPENSMILE_DIM || table.total_dim() != OPENSMILE_DIM {
        return Err(Error::Shape(format!(
            "openSMILE stream width {} (table {}), expected {OPENSMILE_DIM}",
            h_os.dim(),
            table.total_dim()
        )));
    }
    if codebooks.len() != table.categories().len() {
        return Err(Error::Data(format!(
            "{} codebooks for {} categories",
            codebooks.len(),
            table.categories().len()
        )));
    }
    let t = h_os.len();
    let mut tokens = Vec::with_capacity(codebooks.len());
    let mut recon = Matrix::zeros(t, OPENSMILE_DIM);
    for (cat, cb) in table.categories().iter().zip(codebooks) {
        if cb.k != cat.k || cb.dim() != cat.dim {
            return Err(Error::Data(format!(
                "codebook {} is k={} dim={}, table says k={} dim={} for {}",
                cb.stream_id,
                cb.k,
                cb.dim(),
                cat.k,
                cat.dim,
                cat.name
            )));
        }
        let block = h_os.frames.column_slice(cat.offset, cat.dim);
        let (idx, _) = assign_rows(&cb.centroids, &block);
        for (r, &i) in idx.iter().enumerate() {
            recon.row_mut(r)[cat.offset..cat.offset + cat.dim]
                .copy_from_slice(cb.centroids.row(i as usize));
        }
        tokens.push(TokenSequence {
            indices: idx,
            stream_id: format!("osm:{}", cat.name),
            k: cb.k,
        });
    }
    Ok(QuantizedOpensmile {
        tokens,
        reconstruction: FeatureSequence {
            frames: recon,
            stream_id: format!("{}:quantized", h_os.stream_id),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_totals() {
        let t = CategoryTable::standard();
        assert_eq!(t.total_dim(), 74);
        // 32 + 64 + 64 + 32 + 32 + 128 + 16
        assert_eq!(t.total_k(), 368);
        let layout: Vec<(usize, usize)> =
            t.categories().iter().map(|c| (c.offset, c.dim)).collect();
        assert_eq!(
            layout,
            vec![
                (0, 6),
                (6, 14),
                (20, 14),
                (34, 5),
                (39, 6),
                (45, 26),
                (71, 3)
            ]
        );
        let ks: Vec<usize> = t.categories().iter().map(|c| c.k).collect();
        assert_eq!(ks, vec![32, 64, 64, 32, 32, 128, 16]);
    }

    #[test]
    fn category_names_round_trip() {
        for c in CategoryName::ALL {
            assert_eq!(c.as_str().parse::<CategoryName>().unwrap(), c);
        }
    }

    #[test]
    fn wrong_width_and_k_are_rejected() {
        let table = CategoryTable::standard();
        let narrow = FeatureSequence::new(Matrix::<f64>::zeros(3, 70), "x").unwrap();
        assert!(quantize_opensmile(&narrow, &table, &[]).is_err());
        let books: Vec<Codebook<f64>> = table
            .categories()
            .iter()
            .map(|c| Codebook::from_centroids(Matrix::zeros(c.k + 1, c.dim), "b"))
            .collect();
        let full = FeatureSequence::new(Matrix::<f64>::zeros(3, 74), "x").unwrap();
        assert!(matches!(
            quantize_opensmile(&full, &table, &books),
            Err(Error::Data(_))
        ));
    }
}
