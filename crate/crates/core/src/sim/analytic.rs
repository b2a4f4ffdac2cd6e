//! Closed-form per-fold cycle model.
//!
//! Output stationary: `D = R_u + S_u + T - 1` (operand skew across the
//! array, T accumulations, one writeout cycle).
//! Weight stationary: `D = 2·R_u + S_u + P - 1` (R_u preload cycles, skewed
//! streaming of P input vectors, R_u cycles for the last partial sums to
//! leave the bottom row).
//! ST-OS: `D = K + S_u - 1` at every stride; a strided fill streams `stride`
//! elements per row per cycle.

use super::plan::{FoldShape, Plan};
use super::record::{Recorder, Timeline};
use super::{Direction, Interface};

pub(crate) fn fold_duration(shape: &FoldShape) -> u64 {
    match *shape {
        FoldShape::Os { rows, cols, inner } => rows + cols + inner - 1,
        FoldShape::Ws { rows, cols, pixels, .. } => 2 * rows + cols + pixels - 1,
        FoldShape::Stos { cols, taps, .. } => taps + cols - 1,
    }
}

/// Bytes leaving ofmap SRAM for DRAM when the fold ends.
pub(crate) fn drain_bytes(shape: &FoldShape, eb: u64) -> u64 {
    match *shape {
        FoldShape::Os { rows, cols, .. } | FoldShape::Stos { rows, cols, .. } => rows * cols * eb,
        FoldShape::Ws {
            cols,
            pixels,
            writeback,
            ..
        } => {
            if writeback {
                pixels * cols * eb
            } else {
                0
            }
        }
    }
}

/// Number of `x` in `0..n` with `x <= c < x + len`.
fn active(c: u64, n: u64, len: u64) -> u64 {
    let hi = c.min(n.saturating_sub(1)) as i64;
    let lo = (c + 1).saturating_sub(len) as i64;
    if n == 0 || hi < lo {
        0
    } else {
        (hi - lo + 1) as u64
    }
}

/// Array-side SRAM traffic of one fold starting at `base`.
fn emit_fold(shape: &FoldShape, eb: u64, base: u64, rec: &mut Recorder) {
    let d = fold_duration(shape);
    match *shape {
        FoldShape::Os { rows, cols, inner } => {
            for c in 0..d {
                rec.add(base + c, Interface::IfmapSram, Direction::Read, active(c, rows, inner) * eb);
                rec.add(base + c, Interface::WeightSram, Direction::Read, active(c, cols, inner) * eb);
            }
            rec.add(base + d - 1, Interface::OfmapSram, Direction::Write, rows * cols * eb);
        }
        FoldShape::Ws {
            rows,
            cols,
            pixels,
            accumulate,
            ..
        } => {
            for c in 0..rows {
                rec.add(base + c, Interface::WeightSram, Direction::Read, cols * eb);
            }
            for c in rows..d {
                rec.add(base + c, Interface::IfmapSram, Direction::Read, active(c - rows, rows, pixels) * eb);
            }
            for c in 2 * rows..d {
                let out = active(c - 2 * rows, cols, pixels) * eb;
                rec.add(base + c, Interface::OfmapSram, Direction::Write, out);
                if accumulate {
                    rec.add(base + c, Interface::OfmapSram, Direction::Read, out);
                }
            }
        }
        FoldShape::Stos {
            rows,
            cols,
            taps,
            stride,
            filters,
        } => {
            for c in 0..d {
                let elements = if c + 1 < cols { stride } else { 1 };
                rec.add(base + c, Interface::IfmapSram, Direction::Read, elements * rows * eb);
            }
            for t in 0..taps {
                rec.add(base + cols - 1 + t, Interface::WeightSram, Direction::Read, filters * eb);
            }
            rec.add(base + d - 1, Interface::OfmapSram, Direction::Write, rows * cols * eb);
        }
    }
}

/// Runs a plan through the closed-form model. Returns (cycles, PE-cycles occupied).
pub(crate) fn run(plan: &Plan, dram_bytes_per_cycle: u64, rec: &mut Recorder) -> (u64, u64) {
    let mut timeline = Timeline::new(dram_bytes_per_cycle);
    let mut occupied = 0;
    for fold in &plan.folds {
        let d = fold_duration(&fold.shape);
        let start = timeline.begin(fold.dram_fill, rec);
        emit_fold(&fold.shape, plan.element_bytes, start, rec);
        timeline.finish(start, d, drain_bytes(&fold.shape, plan.element_bytes), rec);
        occupied += fold.shape.pes_used() * d;
    }
    (timeline.end, occupied)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn active_counts_skewed_rows() {
        // 3 rows each busy for 4 cycles starting at their row index.
        let counts: Vec<u64> = (0..7).map(|c| active(c, 3, 4)).collect();
        assert_eq!(counts, vec![1, 2, 3, 3, 2, 1, 0]);
        assert_eq!(active(0, 0, 4), 0);
    }

    #[test]
    fn durations() {
        assert_eq!(fold_duration(&FoldShape::Os { rows: 16, cols: 16, inner: 9 }), 40);
        assert_eq!(
            fold_duration(&FoldShape::Stos {
                rows: 1,
                cols: 16,
                taps: 3,
                stride: 1,
                filters: 1
            }),
            18
        );
    }
}
