//! Call-gate crossing cost model.
//!
//! Every boundary crossing pays a fixed per-call overhead plus a per-byte
//! copy cost; copying results back out adds a fractional surcharge on the
//! copy term. The defaults are calibration parameters, not hardware
//! measurements: the per-call overhead dominates for small chunks and
//! becomes negligible past the plateau size, and the per-byte rate is
//! sized against this emulator's own processing speed so that an
//! enclave-mode pipeline run lands measurably above the encrypted
//! baseline, preserving the relative ordering seen on real hardware.

use std::time::Duration;

/// Copy direction for a crossing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Copy the buffer into the boundary only.
    In,
    /// Copy in and copy the same amount back out.
    InOut,
}

/// Tunable crossing costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    /// Fixed cost of one gate crossing.
    pub per_call_overhead: Duration,
    /// Cost per byte copied into the boundary, in nanoseconds.
    pub per_byte_copy_ns: f64,
    /// Copying out costs this fraction of the in-copy on top.
    pub out_copy_factor: f64,
    /// Chunk size beyond which the per-call overhead is a negligible
    /// share of the total.
    pub plateau_chunk: usize,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            per_call_overhead: Duration::from_micros(50),
            per_byte_copy_ns: 200.0,
            out_copy_factor: 0.2,
            plateau_chunk: 64 * 1024,
        }
    }
}

impl CostModel {
    /// Time for one crossing moving `bytes` in the given direction.
    pub fn crossing_time(&self, bytes: usize, direction: Direction) -> Duration {
        let copy_ns = bytes as f64 * self.per_byte_copy_ns;
        let total_ns = match direction {
            Direction::In => copy_ns,
            Direction::InOut => copy_ns * (1.0 + self.out_copy_factor),
        };
        self.per_call_overhead + Duration::from_nanos(total_ns.round() as u64)
    }

    /// Time for one call copying `bytes_in` in and `bytes_out` back out.
    pub fn ecall_time(&self, bytes_in: usize, bytes_out: usize) -> Duration {
        let copy_ns = bytes_in as f64 * self.per_byte_copy_ns
            + bytes_out as f64 * self.per_byte_copy_ns * self.out_copy_factor;
        self.per_call_overhead + Duration::from_nanos(copy_ns.round() as u64)
    }

    /// Total modeled time to move `total_bytes` through the gate in chunks
    /// of `chunk_size`.
    pub fn total_transfer_time(
        &self,
        total_bytes: u64,
        chunk_size: usize,
        direction: Direction,
    ) -> Duration {
        assert!(chunk_size > 0);
        let full_calls = total_bytes / chunk_size as u64;
        let remainder = (total_bytes % chunk_size as u64) as usize;
        let mut total = self
            .crossing_time(chunk_size, direction)
            .saturating_mul(full_calls as u32);
        if remainder > 0 {
            total += self.crossing_time(remainder, direction);
        }
        total
    }
}

/// One row of a chunk-size sweep.
#[derive(Debug, Clone)]
pub struct ChunkSweepRow {
    pub chunk_size: usize,
    pub calls: u64,
    pub total_in: Duration,
    pub total_in_out: Duration,
    /// in/out over in ratio for a single crossing at this chunk size.
    pub in_out_ratio: f64,
}

/// Models moving `total_bytes` through the gate for each chunk size.
pub fn sweep_chunk_sizes(model: &CostModel, total_bytes: u64, sizes: &[usize]) -> Vec<ChunkSweepRow> {
    sizes
        .iter()
        .map(|&chunk_size| {
            let calls = total_bytes.div_ceil(chunk_size as u64);
            let single_in = model.crossing_time(chunk_size, Direction::In);
            let single_in_out = model.crossing_time(chunk_size, Direction::InOut);
            ChunkSweepRow {
                chunk_size,
                calls,
                total_in: model.total_transfer_time(total_bytes, chunk_size, Direction::In),
                total_in_out: model.total_transfer_time(total_bytes, chunk_size, Direction::InOut),
                in_out_ratio: single_in_out.as_secs_f64() / single_in.as_secs_f64(),
            }
        })
        .collect()
}

/// Powers of two from `min` to `max` inclusive.
pub fn power_of_two_sizes(min: usize, max: usize) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut size = min.max(1).next_power_of_two();
    while size <= max {
        sizes.push(size);
        size *= 2;
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_bytes_in_costs_exactly_the_call_overhead() {
        let model = CostModel::default();
        assert_eq!(
            model.crossing_time(0, Direction::In),
            model.per_call_overhead
        );
    }

    #[test]
    fn plateau_chunk_in_cost_matches_arithmetic() {
        // 50 us call + 65536 B * 200 ns/B = 13157.2 us.
        let model = CostModel::default();
        let t = model.crossing_time(64 * 1024, Direction::In);
        assert_eq!(t, Duration::from_nanos(50_000 + 65_536 * 200));
    }

    #[test]
    fn sweep_total_time_is_monotone_non_increasing() {
        let model = CostModel::default();
        let sizes = power_of_two_sizes(256, 1024 * 1024);
        let rows = sweep_chunk_sizes(&model, 100_000_000, &sizes);
        for pair in rows.windows(2) {
            assert!(pair[1].total_in <= pair[0].total_in, "in not monotone");
            assert!(
                pair[1].total_in_out <= pair[0].total_in_out,
                "in/out not monotone"
            );
        }
    }

    #[test]
    fn in_out_ratio_at_plateau_stays_under_twenty_percent() {
        let model = CostModel::default();
        let single_in = model.crossing_time(model.plateau_chunk, Direction::In);
        let single_in_out = model.crossing_time(model.plateau_chunk, Direction::InOut);
        let ratio = single_in_out.as_secs_f64() / single_in.as_secs_f64();
        assert!(ratio <= 1.2, "ratio {ratio} above 1.2");
    }
}
