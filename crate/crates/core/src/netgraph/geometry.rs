//! Four-legged intersection layout: approaches, turns, movements and the phase conflict table.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Side of an intersection. Vehicles on an incoming lane of approach `W` arrive from the west.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Approach {
    N,
    E,
    S,
    W,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::N, Approach::E, Approach::S, Approach::W];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Approach {
        Self::ALL[i % 4]
    }

    pub fn opposite(self) -> Approach {
        Self::from_index(self.index() + 2)
    }

    /// Side reached by turning right when facing outward from this side (clockwise neighbour).
    fn clockwise(self) -> Approach {
        Self::from_index(self.index() + 1)
    }

    fn counter_clockwise(self) -> Approach {
        Self::from_index(self.index() + 3)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Approach::N => "N",
            Approach::E => "E",
            Approach::S => "S",
            Approach::W => "W",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Turn {
    Left,
    Straight,
    Right,
}

impl Turn {
    pub const ALL: [Turn; 3] = [Turn::Left, Turn::Straight, Turn::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Turn::Left => "left",
            Turn::Straight => "straight",
            Turn::Right => "right",
        }
    }
}

/// One incoming-lane to outgoing-road crossing. Twelve per intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Movement {
    pub approach: Approach,
    pub turn: Turn,
}

pub const MOVEMENTS: usize = 12;
pub const PHASES: usize = 4;

impl Movement {
    pub fn new(approach: Approach, turn: Turn) -> Self {
        Self { approach, turn }
    }

    /// Canonical index `approach * 3 + turn`, used for lane ordering everywhere.
    pub fn index(self) -> usize {
        self.approach.index() * 3 + self.turn.index()
    }

    pub fn from_index(i: usize) -> Movement {
        Movement { approach: Approach::from_index(i / 3), turn: Turn::ALL[i % 3] }
    }

    pub fn all() -> impl Iterator<Item = Movement> {
        (0..MOVEMENTS).map(Movement::from_index)
    }

    pub fn is_signalized(self) -> bool {
        self.turn != Turn::Right
    }

    /// Side of the intersection the vehicle leaves through.
    ///
    /// A vehicle arriving from the west heads east: straight exits E, left exits N, right exits S.
    pub fn exit_side(self) -> Approach {
        match self.turn {
            Turn::Straight => self.approach.opposite(),
            Turn::Left => self.approach.counter_clockwise().opposite(),
            Turn::Right => self.approach.clockwise().opposite(),
        }
    }
}

impl fmt::Display for Movement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.approach.as_str(), self.turn.as_str())
    }
}

impl FromStr for Movement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, t) = s.split_once('_').ok_or_else(|| format!("bad movement `{s}`"))?;
        let approach = match a {
            "N" => Approach::N,
            "E" => Approach::E,
            "S" => Approach::S,
            "W" => Approach::W,
            _ => return Err(format!("bad approach in movement `{s}`")),
        };
        let turn = match t {
            "left" => Turn::Left,
            "straight" => Turn::Straight,
            "right" => Turn::Right,
            _ => return Err(format!("bad turn in movement `{s}`")),
        };
        Ok(Movement { approach, turn })
    }
}

/// Whether two signalized movements can share a green.
///
/// Compatible pairs: opposing straights, opposing lefts, and the straight and left of one
/// approach. Right turns are unsignalized and never appear in a phase.
pub fn compatible(a: Movement, b: Movement) -> bool {
    if !a.is_signalized() || !b.is_signalized() || a == b {
        return false;
    }
    let opposing = a.approach.opposite() == b.approach;
    let same = a.approach == b.approach;
    (opposing && a.turn == b.turn) || same
}

/// The standard four-phase plan: WE straight, NS straight, WE left, NS left.
pub fn standard_phases() -> [[Movement; 2]; PHASES] {
    use Approach::*;
    use Turn::*;
    [
        [Movement::new(W, Straight), Movement::new(E, Straight)],
        [Movement::new(N, Straight), Movement::new(S, Straight)],
        [Movement::new(W, Left), Movement::new(E, Left)],
        [Movement::new(N, Left), Movement::new(S, Left)],
    ]
}
