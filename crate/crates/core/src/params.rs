//! Named parameter containers shared by the layers.

use crate::error::Result;

/// Joins dotted parameter path segments.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Weight and bias of a linear or convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<P> {
    pub weight: P,
    pub bias: P,
}

impl<P> Dense<P> {
    pub fn try_map<'a, Q>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P) -> Result<Q>) -> Result<Dense<Q>> {
        Ok(Dense {
            weight: f(join(prefix, "weight"), &self.weight)?,
            bias: f(join(prefix, "bias"), &self.bias)?,
        })
    }
}
