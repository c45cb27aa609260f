use std::ops::Range;

use super::GradError;

/// A named block of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat trainable state with a matching gradient accumulator.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    values: Vec<f64>,
    grads: Vec<f64>,
    segments: Vec<Segment>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a segment and return its offset. `init` receives the local index.
    pub fn add_segment(&mut self, name: &str, shape: &[usize], mut init: impl FnMut(usize) -> f64) -> usize {
        assert!(self.segment(name).is_none(), "duplicate segment {name}");
        let offset = self.values.len();
        let n: usize = shape.iter().product();
        self.values.extend((0..n).map(&mut init));
        self.grads.resize(self.values.len(), 0.0);
        self.segments.push(Segment { name: name.to_string(), offset, shape: shape.to_vec() });
        offset
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

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    /// Values and gradient accumulator at once.
    pub fn split_mut(&mut self) -> (&[f64], &mut [f64]) {
        (&self.values, &mut self.grads)
    }

    /// Writable values with the gradient accumulator, for optimizers.
    pub fn values_with_grads(&mut self) -> (&mut [f64], &[f64]) {
        (&mut self.values, &self.grads)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn segment_values(&self, name: &str) -> Option<&[f64]> {
        self.segment(name).map(|s| &self.values[s.range()])
    }

    pub fn get(&self, id: usize) -> Result<f64, GradError> {
        self.values.get(id).copied().ok_or(GradError::UnregisteredParameter(id))
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Round every value to the nearest `f32`.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.values {
            *v = *v as f32 as f64;
        }
    }

    /// Replace the contents of a segment (shape must match).
    pub fn set_segment(&mut self, name: &str, shape: &[usize], data: &[f64]) -> Result<(), GradError> {
        let seg = self.segment(name).ok_or_else(|| GradError::UnknownSegment(name.to_string()))?;
        if seg.shape != shape || data.len() != seg.len() {
            return Err(GradError::ShapeMismatch {
                name: name.to_string(),
                expected: seg.shape.clone(),
                found: shape.to_vec(),
            });
        }
        let r = seg.range();
        self.values[r].copy_from_slice(data);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_are_disjoint_and_cover() {
        let mut s = ParameterStore::new();
        let a = s.add_segment("a", &[2, 3], |i| i as f64);
        let b = s.add_segment("b", &[4], |_| 1.0);
        assert_eq!(a, 0);
        assert_eq!(b, 6);
        assert_eq!(s.len(), 10);
        assert_eq!(s.grads().len(), 10);
        let total: usize = s.segments().iter().map(|g| g.len()).sum();
        assert_eq!(total, s.len());
        assert_eq!(s.segment_values("a").unwrap()[5], 5.0);
    }

    #[test]
    fn zero_grads_clears() {
        let mut s = ParameterStore::new();
        s.add_segment("a", &[3], |_| 0.0);
        s.grads_mut()[1] = 4.0;
        s.zero_grads();
        assert!(s.grads().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn unknown_id_is_error() {
        let s = ParameterStore::new();
        assert!(matches!(s.get(3), Err(GradError::UnregisteredParameter(3))));
    }
}
