use crate::netgraph::{Movement, PHASES};

/// Signal state of one intersection.
///
/// At most one of `green_remaining_s` / `yellow_remaining_s` is positive; both zero means the
/// controller is awaiting an action. A green queued behind a yellow is held in `pending`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalState {
    pub active_phase: usize,
    pub green_remaining_s: u64,
    pub yellow_remaining_s: u64,
    pending: Option<(usize, u64)>,
    has_run: bool,
}

impl Default for SignalState {
    fn default() -> Self {
        Self { active_phase: 0, green_remaining_s: 0, yellow_remaining_s: 0, pending: None, has_run: false }
    }
}

impl SignalState {
    pub fn awaiting_action(&self) -> bool {
        self.green_remaining_s == 0 && self.yellow_remaining_s == 0
    }

    pub fn in_yellow(&self) -> bool {
        self.yellow_remaining_s > 0
    }

    /// Starts `green_s` of `phase`. A change of phase after an earlier green is preceded by
    /// `yellow_s` of yellow; repeating the same phase (or the very first green) is not.
    /// Returns the yellow time inserted.
    pub fn apply(&mut self, phase: usize, green_s: u64, yellow_s: u64) -> u64 {
        assert!(phase < PHASES, "phase {phase} out of range");
        assert!(self.awaiting_action(), "signal is not awaiting an action");
        assert!(green_s > 0, "green must be positive");
        let needs_yellow = self.has_run && phase != self.active_phase && yellow_s > 0;
        self.has_run = true;
        if needs_yellow {
            self.yellow_remaining_s = yellow_s;
            self.pending = Some((phase, green_s));
            yellow_s
        } else {
            self.active_phase = phase;
            self.green_remaining_s = green_s;
            0
        }
    }

    /// Whether a signalized movement may discharge this second.
    pub fn permits(&self, phases: &[[Movement; 2]; PHASES], m: Movement) -> bool {
        if !m.is_signalized() {
            return true;
        }
        self.green_remaining_s > 0 && phases[self.active_phase].contains(&m)
    }

    /// Advances the timers by one second.
    pub fn tick(&mut self) {
        if self.yellow_remaining_s > 0 {
            self.yellow_remaining_s -= 1;
            if self.yellow_remaining_s == 0 {
                if let Some((phase, green)) = self.pending.take() {
                    self.active_phase = phase;
                    self.green_remaining_s = green;
                }
            }
        } else if self.green_remaining_s > 0 {
            self.green_remaining_s -= 1;
        }
    }
}
