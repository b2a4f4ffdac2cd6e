//! Traffic accounting and fold scheduling shared by both cycle models.

use super::{Direction, Interface, InterfaceBw, TraceEvent};

/// Per-cycle traffic sink. Bins hold read+write bytes per interface.
pub(crate) struct Recorder {
    enabled: bool,
    bins: Vec<[u64; 4]>,
    pub reads: [u64; 4],
    pub writes: [u64; 4],
    trace: Option<Vec<TraceEvent>>,
}

impl Recorder {
    pub fn new(trace: bool) -> Self {
        Recorder {
            enabled: true,
            bins: Vec::new(),
            reads: [0; 4],
            writes: [0; 4],
            trace: trace.then(Vec::new),
        }
    }

    /// Drops everything; used by cycles-only paths.
    pub fn null() -> Self {
        Recorder {
            enabled: false,
            ..Recorder::new(false)
        }
    }

    pub fn add(&mut self, cycle: u64, interface: Interface, direction: Direction, bytes: u64) {
        if !self.enabled || bytes == 0 {
            return;
        }
        let i = interface as usize;
        match direction {
            Direction::Read => self.reads[i] += bytes,
            Direction::Write => self.writes[i] += bytes,
        }
        let c = cycle as usize;
        if self.bins.len() <= c {
            self.bins.resize(c + 1, [0; 4]);
        }
        self.bins[c][i] += bytes;
        if let Some(t) = &mut self.trace {
            t.push(TraceEvent {
                cycle,
                interface,
                direction,
                bytes,
            });
        }
    }

    /// Mean and peak sliding-window bytes/cycle per interface over `[0, cycles]`.
    pub fn bandwidth(&self, cycles: u64, window: u64) -> (InterfaceBw, InterfaceBw) {
        let mut avg = [0.0; 4];
        let mut max = [0.0; 4];
        if cycles > 0 {
            for (a, (r, w)) in avg.iter_mut().zip(self.reads.iter().zip(&self.writes)) {
                *a = (r + w) as f64 / cycles as f64;
            }
        }
        let w = window.max(1) as usize;
        let mut sums = [0u64; 4];
        let mut best = [0u64; 4];
        for (c, bin) in self.bins.iter().enumerate() {
            for i in 0..4 {
                sums[i] += bin[i];
                if c >= w {
                    sums[i] -= self.bins[c - w][i];
                }
                best[i] = best[i].max(sums[i]);
            }
        }
        for i in 0..4 {
            max[i] = best[i] as f64 / w as f64;
        }
        (InterfaceBw::from_array(avg), InterfaceBw::from_array(max))
    }

    /// Events merged per (cycle, interface, direction), in that order.
    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        let mut events = self.trace.take().unwrap_or_default();
        events.sort_by_key(|e| (e.cycle, e.interface, e.direction));
        let mut merged: Vec<TraceEvent> = Vec::with_capacity(events.len());
        for e in events {
            match merged.last_mut() {
                Some(m) if (m.cycle, m.interface, m.direction) == (e.cycle, e.interface, e.direction) => {
                    m.bytes += e.bytes
                }
                _ => merged.push(e),
            }
        }
        merged
    }
}

/// Fold sequencing with double-buffered prefetch.
///
/// Fold i's DRAM fill may start once fold i-1 has started (its buffer half
/// is then free) and the previous fill has finished. Fold i starts when
/// fold i-1 ends and its own fill is complete.
pub(crate) struct Timeline {
    cap: u64,
    first: bool,
    prev_start: u64,
    prev_dma_done: u64,
    pub end: u64,
}

impl Timeline {
    pub fn new(dram_bytes_per_cycle: u64) -> Self {
        Timeline {
            cap: dram_bytes_per_cycle,
            first: true,
            prev_start: 0,
            prev_dma_done: 0,
            end: 0,
        }
    }

    /// Schedules the fill of `(ifmap, weight)` bytes and returns the fold start.
    pub fn begin(&mut self, fill: (u64, u64), rec: &mut Recorder) -> u64 {
        let bytes = fill.0 + fill.1;
        let (start, done) = if self.cap == 0 {
            rec.add(self.end, Interface::Dram, Direction::Read, bytes);
            (self.end, self.end)
        } else {
            let dma_start = if self.first {
                0
            } else {
                self.prev_start.max(self.prev_dma_done)
            };
            let done = dma_start + bytes.div_ceil(self.cap);
            let mut left = bytes;
            let mut c = dma_start;
            while left > 0 {
                let chunk = left.min(self.cap);
                rec.add(c, Interface::Dram, Direction::Read, chunk);
                left -= chunk;
                c += 1;
            }
            (self.end.max(done), done)
        };
        rec.add(done, Interface::IfmapSram, Direction::Write, fill.0);
        rec.add(done, Interface::WeightSram, Direction::Write, fill.1);
        self.first = false;
        self.prev_start = start;
        self.prev_dma_done = done;
        start
    }

    /// Closes a fold: finished outputs drain from ofmap SRAM to DRAM at its end.
    pub fn finish(&mut self, start: u64, duration: u64, drain: u64, rec: &mut Recorder) {
        self.end = start + duration;
        rec.add(self.end, Interface::OfmapSram, Direction::Read, drain);
        rec.add(self.end, Interface::Dram, Direction::Write, drain);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_peak_and_mean() {
        let mut r = Recorder::new(false);
        r.add(0, Interface::Dram, Direction::Read, 32);
        r.add(20, Interface::Dram, Direction::Write, 16);
        r.add(21, Interface::Dram, Direction::Write, 16);
        let (avg, max) = r.bandwidth(32, 16);
        assert_eq!(avg.dram, 2.0);
        assert_eq!(max.dram, 2.0);
        assert_eq!(max.ifmap_sram, 0.0);
    }

    #[test]
    fn capped_fill_stalls_first_fold() {
        let mut r = Recorder::new(true);
        let mut t = Timeline::new(4);
        let s0 = t.begin((10, 2), &mut r);
        assert_eq!(s0, 3);
        t.finish(s0, 5, 0, &mut r);
        // The second fill starts with fold 0 and is hidden behind it.
        let s1 = t.begin((8, 0), &mut r);
        assert_eq!(s1, 8);
        let reads: Vec<_> = r
            .take_trace()
            .into_iter()
            .filter(|e| e.direction == Direction::Read)
            .map(|e| (e.cycle, e.bytes))
            .collect();
        assert_eq!(reads, vec![(0, 4), (1, 4), (2, 4), (3, 4), (4, 4)]);
    }

    #[test]
    fn trace_merges_same_cycle() {
        let mut r = Recorder::new(true);
        r.add(3, Interface::IfmapSram, Direction::Read, 1);
        r.add(1, Interface::IfmapSram, Direction::Read, 1);
        r.add(3, Interface::IfmapSram, Direction::Read, 2);
        let t = r.take_trace();
        assert_eq!(t.len(), 2);
        assert_eq!((t[1].cycle, t[1].bytes), (3, 3));
    }
}
