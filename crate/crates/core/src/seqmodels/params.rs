use indexmap::IndexMap;
use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayView3, Dimension, IxDyn};

/// Named real tensors in a fixed insertion order. Used for model parameters,
/// their gradients and optimizer moments alike.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    tensors: IndexMap<String, ArrayD<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<D: Dimension>(&mut self, name: impl Into<String>, value: ndarray::Array<f64, D>) {
        self.tensors.insert(name.into(), value.into_dyn());
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<f64>> {
        self.tensors.get_mut(name)
    }

    fn expect(&self, name: &str) -> &ArrayD<f64> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` missing"))
    }

    pub(crate) fn mat(&self, name: &str) -> ArrayView2<'_, f64> {
        self.expect(name)
            .view()
            .into_dimensionality()
            .unwrap_or_else(|_| panic!("parameter `{name}` is not a matrix"))
    }

    pub(crate) fn vec1(&self, name: &str) -> ArrayView1<'_, f64> {
        self.expect(name)
            .view()
            .into_dimensionality()
            .unwrap_or_else(|_| panic!("parameter `{name}` is not a vector"))
    }

    pub(crate) fn tensor3(&self, name: &str) -> ArrayView3<'_, f64> {
        self.expect(name)
            .view()
            .into_dimensionality()
            .unwrap_or_else(|_| panic!("parameter `{name}` is not 3-D"))
    }

    /// Adds `value` into the tensor called `name`.
    pub(crate) fn accumulate<D: Dimension>(&mut self, name: &str, value: &ndarray::Array<f64, D>) {
        let slot = self
            .tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("gradient slot `{name}` missing"));
        let value = value.view().into_dyn();
        assert_eq!(slot.shape(), value.shape(), "gradient shape for `{name}`");
        *slot += &value;
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), ArrayD::zeros(v.raw_dim())))
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ArrayD<f64>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// True when both sets hold the same names in the same order with equal shapes.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }

    pub fn shape_of(&self, name: &str) -> Option<IxDyn> {
        self.tensors.get(name).map(|t| t.raw_dim())
    }
}
