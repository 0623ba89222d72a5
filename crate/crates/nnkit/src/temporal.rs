//! Length and frame-index bookkeeping for stacks of 1-D convolutions and
//! temporal max-pooling.

use crate::error::{NnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TemporalLayer {
    /// Length-preserving convolution with zero padding.
    Conv { kernel: usize },
    /// Valid max-pooling.
    Pool { kernel: usize, stride: usize },
}

/// An ordered chain of temporal layers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemporalChain {
    pub layers: Vec<TemporalLayer>,
}

impl TemporalChain {
    pub fn new(layers: Vec<TemporalLayer>) -> Self {
        Self { layers }
    }

    /// Output length for an input of `len` frames.
    pub fn output_len(&self, len: usize) -> Result<usize> {
        let mut t = len;
        for layer in &self.layers {
            t = match *layer {
                TemporalLayer::Conv { .. } => t,
                TemporalLayer::Pool { kernel, stride } => {
                    if t < kernel {
                        return Err(NnError::Invalid {
                            op: "temporal_chain",
                            msg: format!("{len} frames shorter than pooling kernel {kernel}"),
                        });
                    }
                    (t - kernel) / stride + 1
                }
            };
        }
        Ok(t)
    }

    /// Smallest input length with a non-empty output.
    pub fn min_len(&self) -> usize {
        (1..).find(|&t| self.output_len(t).is_ok()).unwrap()
    }

    /// Product of all pooling strides.
    pub fn stride(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                TemporalLayer::Pool { stride, .. } => *stride,
                TemporalLayer::Conv { .. } => 1,
            })
            .product()
    }

    /// Frames `[start, end)` pooled into output position `pos`, ignoring
    /// convolution receptive fields.
    pub fn pooled_span(&self, pos: usize) -> (usize, usize) {
        let (mut start, mut end) = (pos, pos + 1);
        for layer in self.layers.iter().rev() {
            if let TemporalLayer::Pool { kernel, stride } = *layer {
                start *= stride;
                end = (end - 1) * stride + kernel;
            }
        }
        (start, end)
    }

    /// Frame-coordinate center of output position `pos`.
    pub fn frame_center(&self, pos: usize) -> f64 {
        let (s, e) = self.pooled_span(pos);
        (s + e) as f64 / 2.0
    }
}
