/// 2-bit saturating counters, one per instruction index.
#[derive(Debug, Clone)]
pub struct PredictorState {
    counters: Vec<u8>,
}

impl PredictorState {
    /// Counters start weakly not-taken.
    pub const INITIAL: u8 = 1;

    pub fn new(len: usize) -> PredictorState {
        PredictorState {
            counters: vec![Self::INITIAL; len],
        }
    }

    pub fn reset(&mut self) {
        self.counters.fill(Self::INITIAL);
    }

    pub fn predict_taken(&self, index: usize) -> bool {
        self.counters[index] >= 2
    }

    pub fn update(&mut self, index: usize, taken: bool) {
        let c = &mut self.counters[index];
        *c = if taken { (*c + 1).min(3) } else { c.saturating_sub(1) };
    }

    pub fn counter(&self, index: usize) -> u8 {
        self.counters[index]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturates() {
        let mut p = PredictorState::new(1);
        assert!(!p.predict_taken(0));
        for _ in 0..5 {
            p.update(0, true);
        }
        assert_eq!(p.counter(0), 3);
        p.update(0, false);
        assert!(p.predict_taken(0));
        p.update(0, false);
        assert!(!p.predict_taken(0));
        for _ in 0..5 {
            p.update(0, false);
        }
        assert_eq!(p.counter(0), 0);
    }
}
