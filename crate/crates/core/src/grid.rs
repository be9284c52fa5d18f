//! Grid geometry and z-pencil domain decomposition.
//!
//! Indices are 0-based. Full levels `k = 0..ktot` carry `dzf[k]`; half level
//! `k` sits at `zh[k]`, the bottom face of full level `k`. Half levels run
//! `0..=ktot`, so `dzh` has `ktot + 1` entries.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid needs at least 4 cells per direction, got {itot}x{jtot}x{ktot}")]
    TooSmall { itot: usize, jtot: usize, ktot: usize },
    #[error("non-positive spacing {name} = {value}")]
    NonPositiveSpacing { name: &'static str, value: f64 },
    #[error("dzf list has {got} entries but ktot is {ktot}")]
    LevelCount { got: usize, ktot: usize },
    #[error("{n} cells along {axis} cannot be split evenly over {parts} ranks")]
    Uneven { axis: char, n: usize, parts: usize },
    #[error("halo width {0} outside 1..=3")]
    Halo(usize),
    #[error("local extent {local} along {axis} is smaller than the halo width {halo}")]
    HaloTooWide { axis: char, local: usize, halo: usize },
    #[error("rank counts must be positive")]
    NoRanks,
}

/// Vertical level specification.
#[derive(Debug, Clone, PartialEq)]
pub enum Vertical {
    /// `ktot` equal levels spanning `height` metres.
    Uniform { height: f64 },
    /// Explicit full-level thicknesses, bottom to top.
    Levels(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub itot: usize,
    pub jtot: usize,
    pub ktot: usize,
    pub dx: f64,
    pub dy: f64,
    pub vertical: Vertical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub itot: usize,
    pub jtot: usize,
    pub ktot: usize,
    pub dx: f64,
    pub dy: f64,
    /// Half-level heights, `ktot + 1` entries, `zh[0] = 0`.
    pub zh: Vec<f64>,
    /// Full-level heights (cell centres).
    pub zf: Vec<f64>,
    pub dzf: Vec<f64>,
    /// Distance between adjacent full levels; the boundary entries equal the
    /// adjacent `dzf`.
    pub dzh: Vec<f64>,
}

impl Grid {
    pub fn build(config: &GridConfig) -> Result<Grid, GridError> {
        let GridConfig { itot, jtot, ktot, dx, dy, .. } = *config;
        if itot < 4 || jtot < 4 || ktot < 4 {
            return Err(GridError::TooSmall { itot, jtot, ktot });
        }
        for (name, value) in [("dx", dx), ("dy", dy)] {
            if !(value > 0.0) {
                return Err(GridError::NonPositiveSpacing { name, value });
            }
        }
        let dzf = match &config.vertical {
            Vertical::Uniform { height } => {
                if !(*height > 0.0) {
                    return Err(GridError::NonPositiveSpacing { name: "height", value: *height });
                }
                vec![height / ktot as f64; ktot]
            }
            Vertical::Levels(levels) => {
                if levels.len() != ktot {
                    return Err(GridError::LevelCount { got: levels.len(), ktot });
                }
                if let Some(&bad) = levels.iter().find(|&&d| !(d > 0.0)) {
                    return Err(GridError::NonPositiveSpacing { name: "dzf", value: bad });
                }
                levels.clone()
            }
        };

        let mut zh = Vec::with_capacity(ktot + 1);
        zh.push(0.0);
        for k in 0..ktot {
            zh.push(zh[k] + dzf[k]);
        }
        let zf = (0..ktot).map(|k| zh[k] + 0.5 * dzf[k]).collect();
        let mut dzh = Vec::with_capacity(ktot + 1);
        dzh.push(dzf[0]);
        for k in 1..ktot {
            dzh.push(0.5 * (dzf[k - 1] + dzf[k]));
        }
        dzh.push(dzf[ktot - 1]);

        Ok(Grid { itot, jtot, ktot, dx, dy, zh, zf, dzf, dzh })
    }

    pub fn cells(&self) -> usize {
        self.itot * self.jtot * self.ktot
    }

    pub fn columns(&self) -> usize {
        self.itot * self.jtot
    }

    pub fn dx2(&self) -> f64 {
        self.dx * self.dx
    }

    pub fn dy2(&self) -> f64 {
        self.dy * self.dy
    }

    pub fn height(&self) -> f64 {
        self.zh[self.ktot]
    }

    /// Filter width `(dx dy dzf)^(1/3)` at full level `k`.
    pub fn filter_width(&self, k: usize) -> f64 {
        (self.dx * self.dy * self.dzf[k]).cbrt()
    }

    /// Same geometry with the horizontal extents multiplied by `fx`, `fy`.
    pub fn tiled(&self, fx: usize, fy: usize) -> Grid {
        Grid { itot: self.itot * fx, jtot: self.jtot * fy, ..self.clone() }
    }
}

/// Lateral neighbours under the doubly periodic topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbors {
    pub west: usize,
    pub east: usize,
    pub south: usize,
    pub north: usize,
}

/// Horizontal split of the grid into `px * py` z-pencils.
///
/// Ranks are numbered row-major: `rank = ry * px + rx`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decomposition {
    pub px: usize,
    pub py: usize,
    pub halo: usize,
    pub itot: usize,
    pub jtot: usize,
    pub ktot: usize,
    pub imax: usize,
    pub jmax: usize,
}

impl Decomposition {
    pub fn new(grid: &Grid, px: usize, py: usize, halo: usize) -> Result<Self, GridError> {
        if px == 0 || py == 0 {
            return Err(GridError::NoRanks);
        }
        if !(1..=3).contains(&halo) {
            return Err(GridError::Halo(halo));
        }
        if grid.itot % px != 0 {
            return Err(GridError::Uneven { axis: 'x', n: grid.itot, parts: px });
        }
        if grid.jtot % py != 0 {
            return Err(GridError::Uneven { axis: 'y', n: grid.jtot, parts: py });
        }
        let imax = grid.itot / px;
        let jmax = grid.jtot / py;
        if imax < halo {
            return Err(GridError::HaloTooWide { axis: 'x', local: imax, halo });
        }
        if jmax < halo {
            return Err(GridError::HaloTooWide { axis: 'y', local: jmax, halo });
        }
        Ok(Decomposition { px, py, halo, itot: grid.itot, jtot: grid.jtot, ktot: grid.ktot, imax, jmax })
    }

    pub fn ranks(&self) -> usize {
        self.px * self.py
    }

    pub fn coords(&self, rank: usize) -> (usize, usize) {
        (rank % self.px, rank / self.px)
    }

    /// Rank at (possibly out-of-range) process coordinates, wrapped periodically.
    pub fn rank_at(&self, rx: isize, ry: isize) -> usize {
        let rx = rx.rem_euclid(self.px as isize) as usize;
        let ry = ry.rem_euclid(self.py as isize) as usize;
        ry * self.px + rx
    }

    /// Rank owning global column `(i, j)`.
    pub fn rank_of(&self, i: usize, j: usize) -> usize {
        (j / self.jmax) * self.px + i / self.imax
    }

    /// Global index of the first interior cell of `rank`.
    pub fn offset(&self, rank: usize) -> (usize, usize) {
        let (rx, ry) = self.coords(rank);
        (rx * self.imax, ry * self.jmax)
    }

    pub fn neighbors(&self, rank: usize) -> Neighbors {
        let (rx, ry) = self.coords(rank);
        let (rx, ry) = (rx as isize, ry as isize);
        Neighbors {
            west: self.rank_at(rx - 1, ry),
            east: self.rank_at(rx + 1, ry),
            south: self.rank_at(rx, ry - 1),
            north: self.rank_at(rx, ry + 1),
        }
    }

    pub fn local_columns(&self) -> usize {
        self.imax * self.jmax
    }

    pub fn local_cells(&self) -> usize {
        self.local_columns() * self.ktot
    }

    pub fn total_columns(&self) -> usize {
        self.itot * self.jtot
    }
}
