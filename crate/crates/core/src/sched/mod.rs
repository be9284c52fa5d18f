//! Declarative loop schedules and the executor that runs kernels under them.

mod exec;
pub mod queue;

pub use exec::{ExecError, Executor, Extents, Kernel, ReduceKernel, WriteMode};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const LANE_RANGE: (u32, u32) = (16, 512);
pub const TEAM_RANGE: (u32, u32) = (256, 65535);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScalarMode {
    /// The scalar index is the outermost loop of a 4-deep collapsed nest.
    Collapsed,
    /// Each work element loops over all scalars sequentially.
    Sequential,
}

impl fmt::Display for ScalarMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalarMode::Collapsed => "collapsed",
            ScalarMode::Sequential => "sequential",
        })
    }
}

impl FromStr for ScalarMode {
    type Err = ScheduleError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "collapsed" => Ok(ScalarMode::Collapsed),
            "sequential" | "seq" => Ok(ScalarMode::Sequential),
            other => Err(ScheduleError::Value { key: "scalar_mode".into(), value: other.into() }),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("lane_width {0} outside [16, 512]")]
    Lane(u32),
    #[error("team_count {0} outside [256, 65535]")]
    Teams(u32),
    #[error("collapse factor {0} outside [2, 4]")]
    Collapse(u32),
    #[error("tile and manual_tile cannot both be set")]
    TileConflict,
    #[error("tile size {size} along {axis} neither divides nor covers the extent {extent}")]
    TileExtent { axis: char, size: usize, extent: usize },
    #[error("tile sizes must be positive")]
    ZeroTile,
    #[error("unknown schedule key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for schedule key `{key}`")]
    Value { key: String, value: String },
}

/// How a kernel's loop nest is split into work items and spread over teams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Schedule {
    /// `None` lets the executor choose.
    pub team_count: Option<u32>,
    pub lane_width: u32,
    pub collapse: u32,
    pub tile: Option<[usize; 3]>,
    pub manual_tile: Option<[usize; 2]>,
    pub scalar_mode: ScalarMode,
    pub split_k1: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            team_count: None,
            lane_width: 128,
            collapse: 3,
            tile: None,
            manual_tile: None,
            scalar_mode: ScalarMode::Collapsed,
            split_k1: false,
        }
    }
}

impl Schedule {
    /// Checks the kernel-independent constraints.
    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(LANE_RANGE.0..=LANE_RANGE.1).contains(&self.lane_width) {
            return Err(ScheduleError::Lane(self.lane_width));
        }
        if let Some(t) = self.team_count {
            if !(TEAM_RANGE.0..=TEAM_RANGE.1).contains(&t) {
                return Err(ScheduleError::Teams(t));
            }
        }
        if !(2..=4).contains(&self.collapse) {
            return Err(ScheduleError::Collapse(self.collapse));
        }
        if self.tile.is_some() && self.manual_tile.is_some() {
            return Err(ScheduleError::TileConflict);
        }
        if self.tile.is_some_and(|t| t.contains(&0)) || self.manual_tile.is_some_and(|t| t.contains(&0)) {
            return Err(ScheduleError::ZeroTile);
        }
        Ok(())
    }

    /// Checks the schedule against loop extents `(ni, nj, nk)`.
    pub fn validate_for(&self, ni: usize, nj: usize, nk: usize) -> Result<(), ScheduleError> {
        self.validate()?;
        if let Some(t) = self.tile {
            for ((axis, size), extent) in ['x', 'y', 'z'].into_iter().zip(t).zip([ni, nj, nk]) {
                if size < extent && extent % size != 0 {
                    return Err(ScheduleError::TileExtent { axis, size, extent });
                }
            }
        }
        Ok(())
    }
}

fn join<const N: usize>(v: [usize; N]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let teams = self.team_count.map_or("auto".to_string(), |t| t.to_string());
        let tile = self.tile.map_or("none".to_string(), join);
        let manual = self.manual_tile.map_or("none".to_string(), join);
        write!(
            f,
            "lane_width={} team_count={} collapse={} tile={} manual_tile={} scalar_mode={} split_k1={}",
            self.lane_width, teams, self.collapse, tile, manual, self.scalar_mode, self.split_k1
        )
    }
}

fn parse_list<const N: usize>(key: &str, value: &str) -> Result<Option<[usize; N]>, ScheduleError> {
    if value == "none" {
        return Ok(None);
    }
    let bad = || ScheduleError::Value { key: key.into(), value: value.into() };
    let parts: Vec<usize> = value.split([',', 'x']).map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
    let arr: [usize; N] = parts.try_into().map_err(|_| bad())?;
    Ok(Some(arr))
}

impl FromStr for Schedule {
    type Err = ScheduleError;

    /// Parses whitespace-separated `key=value` pairs; missing keys keep their defaults.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = Schedule::default();
        for token in s.split_whitespace() {
            let (key, value) =
                token.split_once('=').ok_or_else(|| ScheduleError::Value { key: token.into(), value: String::new() })?;
            let bad = || ScheduleError::Value { key: key.into(), value: value.into() };
            match key {
                "lane_width" => out.lane_width = value.parse().map_err(|_| bad())?,
                "team_count" => {
                    out.team_count = if value == "auto" { None } else { Some(value.parse().map_err(|_| bad())?) }
                }
                "collapse" => out.collapse = value.parse().map_err(|_| bad())?,
                "tile" => out.tile = parse_list(key, value)?,
                "manual_tile" => out.manual_tile = parse_list(key, value)?,
                "scalar_mode" => out.scalar_mode = value.parse()?,
                "split_k1" => out.split_k1 = value.parse().map_err(|_| bad())?,
                other => return Err(ScheduleError::UnknownKey(other.into())),
            }
        }
        out.validate()?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_string() {
        assert_eq!(
            Schedule::default().to_string(),
            "lane_width=128 team_count=auto collapse=3 tile=none manual_tile=none scalar_mode=collapsed split_k1=false"
        );
    }

    #[test]
    fn parse_partial() {
        let s: Schedule = "lane_width=64 team_count=2048 collapse=3 tile=64,4,2".parse().unwrap();
        assert_eq!(s.tile, Some([64, 4, 2]));
        assert_eq!(s.team_count, Some(2048));
        assert_eq!(s.scalar_mode, ScalarMode::Collapsed);
    }

    #[test]
    fn invalid_schedules() {
        assert_eq!("lane_width=8".parse::<Schedule>(), Err(ScheduleError::Lane(8)));
        assert_eq!("team_count=100".parse::<Schedule>(), Err(ScheduleError::Teams(100)));
        assert_eq!("collapse=5".parse::<Schedule>(), Err(ScheduleError::Collapse(5)));
        assert_eq!("tile=4,4,4 manual_tile=8,8".parse::<Schedule>(), Err(ScheduleError::TileConflict));
        assert!(matches!("colour=red".parse::<Schedule>(), Err(ScheduleError::UnknownKey(_))));
        let s: Schedule = "tile=3,4,4".parse().unwrap();
        assert_eq!(s.validate_for(8, 8, 8), Err(ScheduleError::TileExtent { axis: 'x', size: 3, extent: 8 }));
        assert!(s.validate_for(3, 8, 16).is_ok());
        assert!("tile=64,4,2".parse::<Schedule>().unwrap().validate_for(8, 8, 8).is_ok());
    }

    fn arb_schedule() -> impl Strategy<Value = Schedule> {
        (
            16u32..=512,
            prop::option::of(256u32..=65535),
            2u32..=4,
            prop::option::of([1usize..9, 1usize..9, 1usize..9]),
            prop::option::of([1usize..9, 1usize..9]),
            any::<bool>(),
            any::<bool>(),
        )
            .prop_map(|(lane_width, team_count, collapse, tile, manual, seq, split_k1)| Schedule {
                team_count,
                lane_width,
                collapse,
                tile,
                manual_tile: if tile.is_some() { None } else { manual },
                scalar_mode: if seq { ScalarMode::Sequential } else { ScalarMode::Collapsed },
                split_k1,
            })
    }

    proptest! {
        #[test]
        fn serialization_round_trips(s in arb_schedule()) {
            let text = s.to_string();
            prop_assert_eq!(text.parse::<Schedule>().unwrap(), s);
        }
    }
}
