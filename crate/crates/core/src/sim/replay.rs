//! Event-driven replay of fold micro-schedules.
//!
//! Unlike the closed-form model, nothing here knows a fold's duration in
//! advance. Operands are injected by the edge feeders, hop one PE per
//! cycle, and a PE fires when its inputs are present. The fold ends one
//! cycle after its last result is written. DRAM fills come from an LRU
//! model of each double-buffered SRAM rather than from reuse formulas.
//!
//! The same schedules carry values, so functional replays check that the
//! timing actually computes the right numbers.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use super::plan::{Buffer, FoldShape, Plan};
use super::record::{Recorder, Timeline};
use super::{Direction, Interface};

/// Token carried through the array: (reduction index, value).
type Token = (u64, i64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    /// Operand reaches PE (r, c). `horizontal` tokens move right.
    Arrive { r: u64, c: u64, horizontal: bool, tag: u64, value: i64 },
}

struct Queue {
    heap: BinaryHeap<Reverse<(u64, u64, Event)>>,
    seq: u64,
}

impl Queue {
    fn new() -> Self {
        Queue {
            heap: BinaryHeap::new(),
            seq: 0,
        }
    }

    fn push(&mut self, cycle: u64, e: Event) {
        self.seq += 1;
        self.heap.push(Reverse((cycle, self.seq, e)));
    }

    fn pop(&mut self) -> Option<(u64, Event)> {
        self.heap.pop().map(|Reverse((c, _, e))| (c, e))
    }
}

/// Output stationary fold: `a(r, t)` streams in from the left on row r,
/// `b(t, c)` from the top on column c. Returns (duration, outputs row-major).
#[allow(clippy::too_many_arguments)]
pub(crate) fn os_fold(
    rows: u64,
    cols: u64,
    inner: u64,
    a: impl Fn(u64, u64) -> i64,
    b: impl Fn(u64, u64) -> i64,
    eb: u64,
    base: u64,
    rec: &mut Recorder,
) -> (u64, Vec<i64>) {
    let n = (rows * cols) as usize;
    let mut q = Queue::new();
    for r in 0..rows {
        for t in 0..inner {
            q.push(r + t, Event::Arrive { r, c: 0, horizontal: true, tag: t, value: a(r, t) });
            rec.add(base + r + t, Interface::IfmapSram, Direction::Read, eb);
        }
    }
    for c in 0..cols {
        for t in 0..inner {
            q.push(c + t, Event::Arrive { r: 0, c, horizontal: false, tag: t, value: b(t, c) });
            rec.add(base + c + t, Interface::WeightSram, Direction::Read, eb);
        }
    }
    let mut west: Vec<VecDeque<Token>> = vec![VecDeque::new(); n];
    let mut north: Vec<VecDeque<Token>> = vec![VecDeque::new(); n];
    let mut acc = vec![0i64; n];
    let mut last_mac = 0;
    while let Some((cycle, Event::Arrive { r, c, horizontal, tag, value })) = q.pop() {
        let i = (r * cols + c) as usize;
        if horizontal {
            west[i].push_back((tag, value));
            if c + 1 < cols {
                q.push(cycle + 1, Event::Arrive { r, c: c + 1, horizontal, tag, value });
            }
        } else {
            north[i].push_back((tag, value));
            if r + 1 < rows {
                q.push(cycle + 1, Event::Arrive { r: r + 1, c, horizontal, tag, value });
            }
        }
        while !west[i].is_empty() && !north[i].is_empty() {
            let (ta, va) = west[i].pop_front().unwrap();
            let (tb, vb) = north[i].pop_front().unwrap();
            debug_assert_eq!(ta, tb, "operand streams out of step at PE ({r}, {c})");
            acc[i] += va * vb;
            last_mac = last_mac.max(cycle);
        }
    }
    let write = last_mac + 1;
    rec.add(base + write, Interface::OfmapSram, Direction::Write, rows * cols * eb);
    (write + 1, acc)
}

/// Weight stationary fold. Weights `w(r, c)` shift down from the top edge,
/// then input vectors `x(p, r)` stream right along row r while partial sums
/// flow down. `psum(p, c)` seeds the top row when accumulating.
/// Returns (duration, outputs indexed `p·cols + c`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn ws_fold(
    rows: u64,
    cols: u64,
    pixels: u64,
    accumulate: bool,
    w: impl Fn(u64, u64) -> i64,
    x: impl Fn(u64, u64) -> i64,
    psum: impl Fn(u64, u64) -> i64,
    eb: u64,
    base: u64,
    rec: &mut Recorder,
) -> (u64, Vec<i64>) {
    // Preload: the weight row bound for array row `target` enters at the top
    // at cycle `rows - 1 - target` and moves down one row per cycle.
    let mut stationary = vec![0i64; (rows * cols) as usize];
    let mut ready = 0;
    let mut q = Queue::new();
    for target in 0..rows {
        let enter = rows - 1 - target;
        rec.add(base + enter, Interface::WeightSram, Direction::Read, cols * eb);
        for c in 0..cols {
            q.push(enter, Event::Arrive { r: 0, c, horizontal: false, tag: target, value: w(target, c) });
        }
    }
    while let Some((cycle, Event::Arrive { r, c, tag, value, .. })) = q.pop() {
        if r == tag {
            stationary[(r * cols + c) as usize] = value;
            ready = ready.max(cycle + 1);
        } else {
            q.push(cycle + 1, Event::Arrive { r: r + 1, c, horizontal: false, tag, value });
        }
    }

    for r in 0..rows {
        for p in 0..pixels {
            let at = ready + p + r;
            rec.add(base + at, Interface::IfmapSram, Direction::Read, eb);
            q.push(at, Event::Arrive { r, c: 0, horizontal: true, tag: p, value: x(p, r) });
        }
    }
    let n = (rows * cols) as usize;
    let mut west: Vec<VecDeque<Token>> = vec![VecDeque::new(); n];
    let mut north: Vec<VecDeque<Token>> = vec![VecDeque::new(); n];
    let mut out = vec![0i64; (pixels * cols) as usize];
    let mut last_write = 0;
    while let Some((cycle, Event::Arrive { r, c, horizontal, tag, value })) = q.pop() {
        let i = (r * cols + c) as usize;
        if horizontal {
            west[i].push_back((tag, value));
            if c + 1 < cols {
                q.push(cycle + 1, Event::Arrive { r, c: c + 1, horizontal, tag, value });
            }
            if r == 0 {
                north[i].push_back((tag, if accumulate { psum(tag, c) } else { 0 }));
            }
        } else {
            north[i].push_back((tag, value));
        }
        while !west[i].is_empty() && !north[i].is_empty() {
            let (p, xv) = west[i].pop_front().unwrap();
            let (pp, sum) = north[i].pop_front().unwrap();
            debug_assert_eq!(p, pp, "input and partial sum out of step at PE ({r}, {c})");
            let sum = sum + xv * stationary[i];
            if r + 1 < rows {
                q.push(cycle + 1, Event::Arrive { r: r + 1, c, horizontal: false, tag: p, value: sum });
            } else {
                let write = cycle + 1;
                rec.add(base + write, Interface::OfmapSram, Direction::Write, eb);
                if accumulate {
                    rec.add(base + write, Interface::OfmapSram, Direction::Read, eb);
                }
                out[(p * cols + c) as usize] = sum;
                last_write = last_write.max(write);
            }
        }
    }
    (last_write + 1, out)
}

/// One array row of an ST-OS fold: a shift register fed from the right.
/// PE j taps position `j·stride`. During fill the row takes `stride` elements
/// per cycle until PE S-1 reaches its window, then one element per tap.
struct DelayLine {
    cells: VecDeque<Option<Token>>,
}

/// ST-OS fold. Row `i` streams `x(i, e)` for segment elements `e` and
/// computes `cols` outputs with broadcast weights `w(i, t)`.
/// Returns (duration, outputs indexed `i·cols + j`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn stos_fold(
    rows: u64,
    cols: u64,
    taps: u64,
    stride: u64,
    filters: u64,
    x: impl Fn(u64, u64) -> i64,
    w: impl Fn(u64, u64) -> i64,
    eb: u64,
    base: u64,
    rec: &mut Recorder,
) -> (u64, Vec<i64>) {
    let len = ((cols - 1) * stride + 1) as usize;
    let span = (cols - 1) * stride + taps;
    let mut lines: Vec<DelayLine> = (0..rows)
        .map(|_| DelayLine {
            cells: VecDeque::from(vec![None; len]),
        })
        .collect();
    let mut acc = vec![0i64; (rows * cols) as usize];
    let fill = (cols - 1) * stride;
    let mut next_tap = 0;
    let mut fed = 0;
    let mut cycle = 0;
    loop {
        let n = if fed < fill { stride } else { 1 };
        // Shift left by n and feed the next n elements at the right end.
        for (i, line) in lines.iter_mut().enumerate() {
            for e in fed..fed + n {
                line.cells.pop_front();
                line.cells.push_back((e < span).then(|| (e, x(i as u64, e))));
            }
        }
        let fresh = (fed + n).min(span).saturating_sub(fed);
        if fresh > 0 {
            rec.add(base + cycle, Interface::IfmapSram, Direction::Read, fresh * rows * eb);
        }
        fed += n;
        // The controller broadcasts tap t once PE 0 holds element t.
        if lines[0].cells[0].is_some_and(|(e, _)| e == next_tap) {
            rec.add(base + cycle, Interface::WeightSram, Direction::Read, filters * eb);
            for (i, line) in lines.iter().enumerate() {
                let weight = w(i as u64, next_tap);
                for j in 0..cols {
                    let (_, v) = line.cells[(j * stride) as usize].expect("tap reads an empty delay-line cell");
                    acc[i * cols as usize + j as usize] += v * weight;
                }
            }
            next_tap += 1;
            if next_tap == taps {
                rec.add(base + cycle, Interface::OfmapSram, Direction::Write, rows * cols * eb);
                return (cycle + 1, acc);
            }
        }
        cycle += 1;
    }
}

/// LRU residency of one double-buffered SRAM; only half is usable.
pub(crate) struct Lru {
    capacity: u64,
    used: u64,
    tiles: VecDeque<(u64, u64)>,
}

impl Lru {
    pub fn new(sram_bytes: u64) -> Self {
        Lru {
            capacity: sram_bytes / 2,
            used: 0,
            tiles: VecDeque::new(),
        }
    }

    /// Touches a tile; returns true on a hit. Tiles larger than the usable
    /// half are streamed and never retained.
    pub fn access(&mut self, id: u64, bytes: u64) -> bool {
        if let Some(pos) = self.tiles.iter().position(|&(t, _)| t == id) {
            let tile = self.tiles.remove(pos).unwrap();
            self.tiles.push_back(tile);
            return true;
        }
        if bytes > self.capacity {
            return false;
        }
        while self.used + bytes > self.capacity {
            let (_, b) = self.tiles.pop_front().unwrap();
            self.used -= b;
        }
        self.tiles.push_back((id, bytes));
        self.used += bytes;
        false
    }
}

/// Replays a plan for timing and traffic. Returns (cycles, PE-cycles occupied).
pub(crate) fn run(plan: &Plan, ifmap_sram: u64, weight_sram: u64, dram_bytes_per_cycle: u64, rec: &mut Recorder) -> (u64, u64) {
    let eb = plan.element_bytes;
    let mut ifmap = Lru::new(ifmap_sram);
    let mut weight = Lru::new(weight_sram);
    let mut timeline = Timeline::new(dram_bytes_per_cycle);
    let mut occupied = 0;
    for fold in &plan.folds {
        let mut fill = (0, 0);
        for tile in fold.tiles() {
            match tile.buffer {
                Buffer::Ifmap if !ifmap.access(tile.id, tile.bytes) => fill.0 += tile.bytes,
                Buffer::Weight if !weight.access(tile.id, tile.bytes) => fill.1 += tile.bytes,
                _ => {}
            }
        }
        let start = timeline.begin(fill, rec);
        let zero = |_: u64, _: u64| 0;
        let (d, drain) = match fold.shape {
            FoldShape::Os { rows, cols, inner } => {
                (os_fold(rows, cols, inner, zero, zero, eb, start, rec).0, rows * cols * eb)
            }
            FoldShape::Ws {
                rows,
                cols,
                pixels,
                accumulate,
                writeback,
            } => {
                let d = ws_fold(rows, cols, pixels, accumulate, zero, zero, zero, eb, start, rec).0;
                (d, if writeback { pixels * cols * eb } else { 0 })
            }
            FoldShape::Stos {
                rows,
                cols,
                taps,
                stride,
                filters,
            } => (
                stos_fold(rows, cols, taps, stride, filters, zero, zero, eb, start, rec).0,
                rows * cols * eb,
            ),
        };
        timeline.finish(start, d, drain, rec);
        occupied += fold.shape.pes_used() * d;
    }
    (timeline.end, occupied)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn os_fold_computes_product() {
        // A is 2×3, B is 3×2.
        let a = [[1, 2, 3], [4, 5, 6]];
        let b = [[7, 8], [9, 10], [11, 12]];
        let mut rec = Recorder::null();
        let (d, out) = os_fold(2, 2, 3, |r, t| a[r as usize][t as usize], |t, c| b[t as usize][c as usize], 1, 0, &mut rec);
        assert_eq!(out, vec![58, 64, 139, 154]);
        assert_eq!(d, 2 + 2 + 3 - 1);
    }

    #[test]
    fn ws_fold_computes_product_with_psums() {
        let x = [[1, 2], [3, 4], [5, 6]];
        let w = [[1, 0, 2], [0, 1, 3]];
        let mut rec = Recorder::null();
        let (d, out) = ws_fold(
            2,
            3,
            3,
            true,
            |r, c| w[r as usize][c as usize],
            |p, r| x[p as usize][r as usize],
            |_, _| 100,
            1,
            0,
            &mut rec,
        );
        assert_eq!(out, vec![101, 102, 108, 103, 104, 118, 105, 106, 128]);
        assert_eq!(d, 2 * 2 + 3 + 3 - 1);
    }

    #[test]
    fn stos_fold_slides_filter() {
        // Two rows, 3 outputs each, K = 2, stride 1.
        let xs = [[1, 2, 3, 4], [5, 6, 7, 8]];
        let mut rec = Recorder::null();
        let (d, out) = stos_fold(2, 3, 2, 1, 1, |i, e| xs[i as usize][e as usize], |_, t| [10, 1][t as usize], 1, 0, &mut rec);
        assert_eq!(out, vec![12, 23, 34, 56, 67, 78]);
        assert_eq!(d, 2 + 3 - 1);
    }

    #[test]
    fn stos_fold_strided() {
        // Stride 2, K = 3, 2 outputs: windows start at 0 and 2.
        let xs = [1, 2, 3, 4, 5];
        let mut rec = Recorder::null();
        let (d, out) = stos_fold(1, 2, 3, 2, 1, |_, e| xs[e as usize], |_, t| [1, 10, 100][t as usize], 1, 0, &mut rec);
        assert_eq!(out, vec![321, 543]);
        assert_eq!(d, 3 + 2 - 1);
    }

    #[test]
    fn lru_thrashes_on_cyclic_overflow() {
        let mut lru = Lru::new(20);
        assert!(!lru.access(1, 6));
        assert!(!lru.access(2, 6));
        assert!(!lru.access(3, 6));
        assert!(!lru.access(1, 6));
        assert!(!lru.access(2, 6));
        assert!(!lru.access(99, 11));
        assert!(!lru.access(99, 11));
    }

    #[test]
    fn lru_keeps_resident_set() {
        let mut lru = Lru::new(40);
        for _ in 0..3 {
            lru.access(1, 6);
            lru.access(2, 6);
            lru.access(3, 6);
        }
        assert!(lru.access(1, 6) && lru.access(2, 6) && lru.access(3, 6));
    }
}
