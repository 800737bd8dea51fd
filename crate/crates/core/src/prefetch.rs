use std::collections::BTreeMap;

use crate::types::LineAddr;

/// Per-core stride detector. Two consecutive equal strides confirm a stream
/// and trigger a prefetch of the next line along it.
#[derive(Clone, Debug, Default)]
pub struct StridePrefetcher {
    history: BTreeMap<usize, (LineAddr, i64)>,
}

impl StridePrefetcher {
    pub fn train(&mut self, core: usize, line: LineAddr) -> Option<LineAddr> {
        let slot = self.history.entry(core).or_insert((line, 0));
        let (last, last_stride) = *slot;
        let stride = line.0 as i64 - last.0 as i64;
        *slot = (line, stride);
        if stride != 0 && stride == last_stride {
            line.0.checked_add_signed(stride).map(LineAddr)
        } else {
            None
        }
    }
}
