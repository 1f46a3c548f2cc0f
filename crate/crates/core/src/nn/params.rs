use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Location of one named `rows x cols` array inside a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn slice<'a>(&self, data: &'a [f64]) -> &'a [f64] {
        &data[self.range()]
    }

    pub fn slice_mut<'a>(&self, data: &'a mut [f64]) -> &'a mut [f64] {
        &mut data[self.range()]
    }

    pub fn view<'a>(&self, data: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), self.slice(data)).expect("slot shape")
    }

    pub fn view_mut<'a>(&self, data: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        let (rows, cols) = (self.rows, self.cols);
        ArrayViewMut2::from_shape((rows, cols), self.slice_mut(data)).expect("slot shape")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: [usize; 2],
}

/// A named array as stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ManifestError {
    #[error("expected {expected} arrays, found {found}")]
    Count { expected: usize, found: usize },
    #[error("array {index}: expected '{expected}', found '{found}'")]
    Name {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("array '{name}': expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: [usize; 2],
        found: [usize; 2],
    },
    #[error("array '{name}': {found} values for shape {shape:?}")]
    Length {
        name: String,
        shape: [usize; 2],
        found: usize,
    },
}

/// Flat storage for a group of named arrays (learnable weights or
/// normalization running statistics).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    specs: Vec<ParamSpec>,
    slots: Vec<Slot>,
    values: Vec<f64>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        mut init: impl FnMut() -> f64,
    ) -> Slot {
        let slot = Slot {
            offset: self.values.len(),
            rows,
            cols,
        };
        self.values.extend((0..rows * cols).map(|_| init()));
        self.specs.push(ParamSpec {
            name: name.into(),
            shape: [rows, cols],
        });
        self.slots.push(slot);
        slot
    }

    /// Uniform on `[-bound, bound]`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut R,
    ) -> Slot {
        self.add(name, rows, cols, || rng.gen_range(-bound..=bound))
    }

    pub fn add_const(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        value: f64,
    ) -> Slot {
        self.add(name, rows, cols, || value)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn zeros(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    pub fn to_named(&self) -> Vec<NamedArray> {
        self.specs
            .iter()
            .zip(&self.slots)
            .map(|(spec, slot)| NamedArray {
                name: spec.name.clone(),
                shape: spec.shape,
                values: slot.slice(&self.values).to_vec(),
            })
            .collect()
    }

    /// Overwrites values from named arrays; names, order and shapes must
    /// match this set's manifest exactly.
    pub fn load_named(&mut self, arrays: &[NamedArray]) -> Result<(), ManifestError> {
        if arrays.len() != self.specs.len() {
            return Err(ManifestError::Count {
                expected: self.specs.len(),
                found: arrays.len(),
            });
        }
        for (index, ((spec, slot), arr)) in
            self.specs.iter().zip(&self.slots).zip(arrays).enumerate()
        {
            if spec.name != arr.name {
                return Err(ManifestError::Name {
                    index,
                    expected: spec.name.clone(),
                    found: arr.name.clone(),
                });
            }
            if spec.shape != arr.shape {
                return Err(ManifestError::Shape {
                    name: spec.name.clone(),
                    expected: spec.shape,
                    found: arr.shape,
                });
            }
            if arr.values.len() != slot.len() {
                return Err(ManifestError::Length {
                    name: spec.name.clone(),
                    shape: spec.shape,
                    found: arr.values.len(),
                });
            }
        }
        for (slot, arr) in self.slots.iter().zip(arrays) {
            slot.slice_mut(&mut self.values)
                .copy_from_slice(&arr.values);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_round_trip_and_manifest_errors() {
        let mut ps = ParamSet::new();
        let a = ps.add_const("a", 2, 3, 1.5);
        let b = ps.add_const("b", 1, 2, -1.0);
        assert_eq!(a.range(), 0..6);
        assert_eq!(b.range(), 6..8);
        let named = ps.to_named();
        let mut other = ps.clone();
        other.values_mut().fill(0.0);
        other.load_named(&named).unwrap();
        assert_eq!(other, ps);

        let mut wrong = named.clone();
        wrong[1].shape = [2, 1];
        assert!(matches!(
            other.load_named(&wrong),
            Err(ManifestError::Shape { .. })
        ));
        let mut wrong = named.clone();
        wrong[0].name = "z".into();
        assert!(matches!(
            other.load_named(&wrong),
            Err(ManifestError::Name { index: 0, .. })
        ));
        assert!(matches!(
            other.load_named(&named[..1]),
            Err(ManifestError::Count { .. })
        ));
        let mut wrong = named;
        wrong[1].values.pop();
        assert!(matches!(
            other.load_named(&wrong),
            Err(ManifestError::Length { .. })
        ));
    }
}
