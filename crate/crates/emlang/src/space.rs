//! Structured meaning spaces: every input is a tuple of categorical
//! attributes, flattened to a concatenation of one-hot blocks.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::nn::Matrix;

/// Default cap on generated space sizes; guards accidental combinatorial
/// blow-up from a typo'd attribute count.
pub const DEFAULT_SPACE_CAP: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpaceError {
    /// Attribute/value counts outside the supported range.
    InvalidSpec { n_attributes: usize, n_values: usize },
    /// The full enumeration would exceed the configured cap.
    SpaceTooLarge { size: u128, cap: usize },
    /// Two meanings from different attribute specs were combined.
    SpecMismatch,
}

impl fmt::Display for SpaceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceError::InvalidSpec {
                n_attributes,
                n_values,
            } => write!(
                f,
                "invalid attribute spec: {n_attributes} attributes × {n_values} values \
                 (need ≥1 attribute and ≥2 values)"
            ),
            SpaceError::SpaceTooLarge { size, cap } => {
                write!(f, "input space of {size} meanings exceeds cap {cap}")
            }
            SpaceError::SpecMismatch => write!(f, "meanings come from different attribute specs"),
        }
    }
}

impl core::error::Error for SpaceError {}

/// Shape of the meaning space: `n_attributes` categorical attributes with
/// `n_values` values each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttributeSpec {
    n_attributes: usize,
    n_values: usize,
}

impl AttributeSpec {
    pub fn new(n_attributes: usize, n_values: usize) -> Result<Self, SpaceError> {
        if n_attributes < 1 || n_values < 2 {
            return Err(SpaceError::InvalidSpec {
                n_attributes,
                n_values,
            });
        }
        Ok(AttributeSpec {
            n_attributes,
            n_values,
        })
    }

    pub fn n_attributes(&self) -> usize {
        self.n_attributes
    }

    pub fn n_values(&self) -> usize {
        self.n_values
    }

    /// Length of the flattened one-hot concatenation.
    pub fn flat_len(&self) -> usize {
        self.n_attributes * self.n_values
    }

    /// `n_values ^ n_attributes`, without overflow.
    pub fn space_size(&self) -> u128 {
        let mut size: u128 = 1;
        for _ in 0..self.n_attributes {
            size = size.saturating_mul(self.n_values as u128);
        }
        size
    }

    pub fn label(&self) -> String {
        format!("{}x{}", self.n_attributes, self.n_values)
    }
}

/// One point of the meaning space: an attribute tuple plus its defining spec.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeaningVector {
    spec: AttributeSpec,
    attributes: Vec<u16>,
}

impl MeaningVector {
    pub fn new(spec: AttributeSpec, attributes: Vec<u16>) -> Result<Self, SpaceError> {
        if attributes.len() != spec.n_attributes()
            || attributes.iter().any(|&a| (a as usize) >= spec.n_values())
        {
            return Err(SpaceError::SpecMismatch);
        }
        Ok(MeaningVector { spec, attributes })
    }

    pub fn spec(&self) -> &AttributeSpec {
        &self.spec
    }

    pub fn attributes(&self) -> &[u16] {
        &self.attributes
    }

    /// Concatenation of one-hot blocks, one per attribute.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = alloc::vec![0.0; self.spec.flat_len()];
        for (i, &a) in self.attributes.iter().enumerate() {
            flat[i * self.spec.n_values() + a as usize] = 1.0;
        }
        flat
    }

    /// Inverse of [`MeaningVector::to_flat`]; rejects vectors that are not
    /// exactly one-hot per block.
    pub fn from_flat(spec: AttributeSpec, flat: &[f64]) -> Result<Self, SpaceError> {
        if flat.len() != spec.flat_len() {
            return Err(SpaceError::SpecMismatch);
        }
        let mut attributes = Vec::with_capacity(spec.n_attributes());
        for block in flat.chunks(spec.n_values()) {
            let mut hot = None;
            for (i, &v) in block.iter().enumerate() {
                if v == 1.0 {
                    if hot.is_some() {
                        return Err(SpaceError::SpecMismatch);
                    }
                    hot = Some(i as u16);
                } else if v != 0.0 {
                    return Err(SpaceError::SpecMismatch);
                }
            }
            attributes.push(hot.ok_or(SpaceError::SpecMismatch)?);
        }
        MeaningVector::new(spec, attributes)
    }
}

/// Count of attribute positions at which two meanings differ (Hamming over
/// attribute tuples). Zero iff equal; symmetric; satisfies the triangle
/// inequality.
pub fn attribute_distance(a: &MeaningVector, b: &MeaningVector) -> Result<u32, SpaceError> {
    if a.spec != b.spec {
        return Err(SpaceError::SpecMismatch);
    }
    Ok(a.attributes
        .iter()
        .zip(&b.attributes)
        .filter(|(x, y)| x != y)
        .count() as u32)
}

/// Euclidean distance between the flattened one-hot vectors. For one-hot
/// block inputs this is `√(2·hamming)`; reported alongside the attribute
/// distance as a cross-check.
pub fn flat_euclidean_distance(a: &MeaningVector, b: &MeaningVector) -> Result<f64, SpaceError> {
    let hamming = attribute_distance(a, b)?;
    Ok(crate::fmath::sqrt(2.0 * hamming as f64))
}

/// The complete enumeration of a meaning space in canonical order
/// (lexicographic over attribute tuples).
#[derive(Debug, Clone)]
pub struct InputSpace {
    spec: AttributeSpec,
    samples: Vec<MeaningVector>,
    flat: Matrix,
}

impl InputSpace {
    /// Enumerates all meanings, rejecting spaces larger than
    /// [`DEFAULT_SPACE_CAP`].
    pub fn generate(spec: AttributeSpec) -> Result<Self, SpaceError> {
        InputSpace::generate_with_cap(spec, DEFAULT_SPACE_CAP)
    }

    pub fn generate_with_cap(spec: AttributeSpec, cap: usize) -> Result<Self, SpaceError> {
        let size = spec.space_size();
        if size > cap as u128 {
            return Err(SpaceError::SpaceTooLarge { size, cap });
        }
        let size = size as usize;
        let mut samples = Vec::with_capacity(size);
        let mut current = alloc::vec![0u16; spec.n_attributes()];
        loop {
            samples.push(MeaningVector {
                spec,
                attributes: current.clone(),
            });
            // next tuple in lexicographic order
            let mut pos = spec.n_attributes();
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                current[pos] += 1;
                if (current[pos] as usize) < spec.n_values() {
                    break;
                }
                current[pos] = 0;
                if pos == 0 {
                    pos = usize::MAX;
                    break;
                }
            }
            if pos == usize::MAX {
                break;
            }
        }
        debug_assert_eq!(samples.len(), size);

        let mut flat = Matrix::zeros(size, spec.flat_len());
        for (i, m) in samples.iter().enumerate() {
            flat.row_mut(i).copy_from_slice(&m.to_flat());
        }
        Ok(InputSpace {
            spec,
            samples,
            flat,
        })
    }

    pub fn spec(&self) -> &AttributeSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[MeaningVector] {
        &self.samples
    }

    pub fn meaning(&self, index: usize) -> &MeaningVector {
        &self.samples[index]
    }

    /// All flattened meanings as rows, in canonical order.
    pub fn flat_matrix(&self) -> &Matrix {
        &self.flat
    }

    /// Canonical index of a meaning: its attribute tuple read as a
    /// mixed-radix number.
    pub fn index_of(&self, meaning: &MeaningVector) -> Result<usize, SpaceError> {
        if meaning.spec != self.spec {
            return Err(SpaceError::SpecMismatch);
        }
        let mut idx = 0usize;
        for &a in &meaning.attributes {
            idx = idx * self.spec.n_values() + a as usize;
        }
        Ok(idx)
    }

    /// Flattened meanings for a list of indices, as rows of a matrix.
    pub fn gather_flat(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(indices.len(), self.spec.flat_len());
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.flat.row(i));
        }
        out
    }
}
