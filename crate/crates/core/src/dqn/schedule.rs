use serde::{Deserialize, Serialize};

/// Linear exploration decay from `start` to `end` over `horizon` episodes, then flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub horizon: u32,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self { start: 0.8, end: 0.2, horizon: 100 }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, episode: u32) -> f64 {
        if self.horizon == 0 || episode >= self.horizon {
            return self.end;
        }
        let frac = episode as f64 / self.horizon as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_monotone() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.at(0), 0.8);
        assert_eq!(s.at(100), 0.2);
        assert_eq!(s.at(5000), 0.2);
        assert!((0..150).all(|e| s.at(e + 1) <= s.at(e)));
    }
}
