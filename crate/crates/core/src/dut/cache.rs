//! Set-associative L1D model over the sandbox page.

/// Per-set LRU lists of line tags; the front of each list is most recent.
#[derive(Debug, Clone)]
pub struct CacheState {
    sets: Vec<Vec<u64>>,
    ways: usize,
    line_size: u64,
}

impl CacheState {
    pub fn new(sets: usize, ways: usize, line_size: usize) -> CacheState {
        CacheState {
            sets: vec![Vec::with_capacity(ways); sets],
            ways,
            line_size: line_size as u64,
        }
    }

    pub fn set_index(&self, offset: u64) -> usize {
        ((offset / self.line_size) % self.sets.len() as u64) as usize
    }

    pub fn flush(&mut self) {
        for s in &mut self.sets {
            s.clear();
        }
    }

    /// Touches every line overlapped by `size` bytes at `offset`.
    pub fn access(&mut self, offset: u16, size: u8) {
        let first = offset as u64 / self.line_size;
        let last = (offset as u64 + size.max(1) as u64 - 1) / self.line_size;
        for line in first..=last {
            self.touch_line(line);
        }
    }

    fn touch_line(&mut self, line: u64) {
        let set = (line % self.sets.len() as u64) as usize;
        let tags = &mut self.sets[set];
        if let Some(p) = tags.iter().position(|t| *t == line) {
            tags.remove(p);
        } else if tags.len() == self.ways {
            tags.pop();
        }
        tags.insert(0, line);
    }

    /// Bit `s` is set iff set `s` holds any line.
    pub fn residency(&self) -> u64 {
        self.sets
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.is_empty())
            .fold(0, |acc, (i, _)| acc | (1 << i))
    }

    pub fn lines(&self, set: usize) -> &[u64] {
        &self.sets[set]
    }
}
