//! Parameter and multiply-accumulate accounting.
//!
//! Layers report their analytic multiply-accumulate count for the shapes they
//! actually see. Counting is off unless a [`MacCounter`] is alive on the
//! current thread, so the hot path costs one thread-local read.

use std::cell::Cell;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::feature::FeatureMap;
use crate::model::Teformer;
use crate::Result;

thread_local! {
    static MACS: Cell<Option<u64>> = const { Cell::new(None) };
}

/// Adds `n` multiply-accumulates to the active counter, if any.
pub fn add_macs(n: u64) {
    MACS.with(|m| {
        if let Some(v) = m.get() {
            m.set(Some(v + n));
        }
    });
}

/// Scoped MAC counter. Counting stops when it is dropped.
pub struct MacCounter {
    previous: Option<u64>,
}

impl MacCounter {
    pub fn start() -> Self {
        let previous = MACS.with(|m| m.replace(Some(0)));
        Self { previous }
    }

    pub fn total(&self) -> u64 {
        MACS.with(|m| m.get().unwrap_or(0))
    }
}

impl Drop for MacCounter {
    fn drop(&mut self) {
        MACS.with(|m| m.set(self.previous));
    }
}

/// `k² · Cin/groups · Cout · Hout · Wout`.
pub fn conv_macs(k: usize, cin_per_group: usize, cout: usize, hout: usize, wout: usize) -> u64 {
    (k * k * cin_per_group * cout * hout * wout) as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Complexity {
    pub params: u64,
    pub mult_accs: u64,
}

/// Exact parameter count plus multiply-accumulates of one forward pass on a
/// single `3 × height × width` image.
pub fn count_params_flops(model: &Teformer, height: usize, width: usize) -> Result<Complexity> {
    let store = model.store();
    // a non-constant probe keeps QCO off its degenerate all-zero path
    let image = Tensor::arange(0f32, (3 * height * width) as f32, store.device())?
        .affine(0.37, 0.0)?
        .sin()?
        .reshape((1, 3, height, width))?
        .to_dtype(store.dtype())?;
    let image = FeatureMap::new(image, 1)?;
    let counter = MacCounter::start();
    let _ = model.forward(&image)?;
    Ok(Complexity {
        params: store.num_params() as u64,
        mult_accs: counter.total(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counter_is_scoped() {
        add_macs(5);
        {
            let c = MacCounter::start();
            add_macs(3);
            {
                let inner = MacCounter::start();
                add_macs(2);
                assert_eq!(inner.total(), 2);
            }
            add_macs(1);
            assert_eq!(c.total(), 4);
        }
        MACS.with(|m| assert_eq!(m.get(), None));
    }
}
