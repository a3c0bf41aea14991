use crate::error::{Error, Result};

/// One named parameter block inside a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

/// A flat array of parameters plus the layout mapping names to slices.
///
/// The layout covers the flat array exactly once: blocks are contiguous,
/// disjoint, and their lengths sum to the array length.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    values: Vec<f64>,
    layout: Vec<LayoutEntry>,
}

impl ParamStore {
    /// Builds a zero-initialized store from `(name, shape)` descriptors.
    pub fn zeros(layout: &[(String, Vec<usize>)]) -> Self {
        let mut entries = Vec::with_capacity(layout.len());
        let mut offset = 0;
        for (name, shape) in layout {
            let entry = LayoutEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
            };
            offset += entry.len();
            entries.push(entry);
        }
        ParamStore {
            values: vec![0.0; offset],
            layout: entries,
        }
    }

    /// Rebuilds a store from a layout and a matching flat array.
    pub fn from_parts(layout: Vec<LayoutEntry>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = layout.iter().map(LayoutEntry::len).sum();
        if expected != values.len() {
            return Err(Error::Shape(format!(
                "layout covers {expected} values but flat array has {}",
                values.len()
            )));
        }
        let mut offset = 0;
        for entry in &layout {
            if entry.offset != offset {
                return Err(Error::Shape(format!(
                    "block '{}' at offset {} but expected {offset}",
                    entry.name, entry.offset
                )));
            }
            offset += entry.len();
        }
        Ok(ParamStore { values, layout })
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

    pub fn layout(&self) -> &[LayoutEntry] {
        &self.layout
    }

    /// The slice for block `name`, if present.
    pub fn block(&self, name: &str) -> Option<&[f64]> {
        let e = self.layout.iter().find(|e| e.name == name)?;
        Some(&self.values[e.offset..e.offset + e.len()])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let e = self.layout.iter().find(|e| e.name == name)?;
        let (offset, len) = (e.offset, e.len());
        Some(&mut self.values[offset..offset + len])
    }
}

/// Gradient with respect to a [`ParamStore`], layout-aligned with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Gradient {
            values: vec![0.0; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `self += scale * other`, used to accumulate per-sample gradients.
    pub fn add_scaled(&mut self, scale: f64, other: &Gradient) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
