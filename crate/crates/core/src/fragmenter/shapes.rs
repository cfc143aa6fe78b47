use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{CutMode, Point, Polygon};

const SQUARE_MARGIN: f64 = 0.05;
const REGULAR_RADIUS: f64 = 0.45;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetShape {
    Square,
    MondrianSquare,
    Pentagon,
    Hexagon,
}

impl TargetShape {
    pub const ALL: [TargetShape; 4] = [Self::Square, Self::MondrianSquare, Self::Pentagon, Self::Hexagon];

    pub fn polygon(self) -> Polygon<f64> {
        match self {
            Self::Square | Self::MondrianSquare => {
                let (lo, hi) = (SQUARE_MARGIN, 1.0 - SQUARE_MARGIN);
                Polygon::from_coords(&[(lo, lo), (hi, lo), (hi, hi), (lo, hi)]).expect("valid square")
            }
            Self::Pentagon => regular(5, std::f64::consts::FRAC_PI_2),
            Self::Hexagon => regular(6, 0.0),
        }
    }

    /// Partition mode implied by the shape alone.
    pub fn default_mode(self) -> CutMode {
        match self {
            Self::MondrianSquare => CutMode::AxisAligned,
            _ => CutMode::Random,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Square => "square",
            Self::MondrianSquare => "mondrian-square",
            Self::Pentagon => "pentagon",
            Self::Hexagon => "hexagon",
        }
    }
}

fn regular(n: usize, phase: f64) -> Polygon<f64> {
    let pts = (0..n)
        .map(|k| {
            let a = phase + std::f64::consts::TAU * k as f64 / n as f64;
            Point::new(0.5 + REGULAR_RADIUS * a.cos(), 0.5 + REGULAR_RADIUS * a.sin())
        })
        .collect();
    Polygon::new(pts).expect("valid regular polygon")
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => [$($name:literal),+]),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.to_ascii_lowercase().as_str() {
                    $($($name)|+ => Ok(Self::$variant),)+
                    other => Err(format!("unknown {} {other:?}", stringify!($ty))),
                }
            }
        }
    };
}

text_enum!(TargetShape {
    Square => ["square"],
    MondrianSquare => ["mondrian-square", "mondrian"],
    Pentagon => ["pentagon"],
    Hexagon => ["hexagon"],
});

impl fmt::Display for TargetShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Normal,
    Missing,
    Eroded,
    Distorted,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::Missing => "missing",
            Self::Eroded => "eroded",
            Self::Distorted => "distorted",
        }
    }
}

text_enum!(Scenario {
    Normal => ["normal"],
    Missing => ["missing"],
    Eroded => ["eroded"],
    Distorted => ["distorted"],
});

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        }
    }
}

text_enum!(Split {
    Train => ["train"],
    Val => ["val"],
    Test => ["test"],
});

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub(crate) fn mode_str(mode: CutMode) -> &'static str {
    match mode {
        CutMode::Random => "random",
        CutMode::AxisAligned => "axis-aligned",
    }
}

pub(crate) fn parse_mode(s: &str) -> Result<CutMode, String> {
    match s.to_ascii_lowercase().as_str() {
        "random" => Ok(CutMode::Random),
        "axis-aligned" | "axis" => Ok(CutMode::AxisAligned),
        other => Err(format!("unknown partition mode {other:?}")),
    }
}
