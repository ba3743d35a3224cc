//! Gridded disease-severity maps from geo-tagged leaf classifications and
//! variable-rate spray plans.

mod io;

pub use io::{parse_detections, parse_detections_file, write_detections};

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{contract, Error, Result};

/// Survey site of the cashew field the image data was collected from.
pub const STUDY_SITE: (f64, f64) = (11.558785519004267, 79.40239239904223);

/// Meters per degree of longitude at the equator.
pub const METERS_PER_DEG_LON: f64 = 111_320.0;
/// Meters per degree of latitude.
pub const METERS_PER_DEG_LAT: f64 = 110_540.0;

/// Slack for ceiling of extents that are whole multiples of the cell size
/// after a round trip through degrees.
const CEIL_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LeafLabel {
    Healthy,
    Anthracnose,
}

impl LeafLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            LeafLabel::Healthy => "healthy",
            LeafLabel::Anthracnose => "anthracnose",
        }
    }
}

impl fmt::Display for LeafLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LeafLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "healthy" => Ok(LeafLabel::Healthy),
            "anthracnose" => Ok(LeafLabel::Anthracnose),
            other => Err(contract(format!("unknown leaf label {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionRecord {
    pub lat: f64,
    pub lon: f64,
    pub label: LeafLabel,
    /// Classifier confidence in [0, 1]; not used for severity.
    pub confidence: f64,
}

impl DetectionRecord {
    pub fn new(lat: f64, lon: f64, label: LeafLabel, confidence: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(contract(format!(
                "coordinate ({lat}, {lon}) is not a valid position"
            )));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(contract(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Self {
            lat,
            lon,
            label,
            confidence,
        })
    }
}

/// Square cells laid out north (rows) and east (cols) of a south-west origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldGrid {
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub cell_size_m: f64,
    pub rows: usize,
    pub cols: usize,
}

impl FieldGrid {
    pub fn new(origin: (f64, f64), cell_size_m: f64, rows: usize, cols: usize) -> Result<Self> {
        if !(cell_size_m.is_finite() && cell_size_m > 0.0) {
            return Err(contract(format!(
                "cell size must be positive, got {cell_size_m}"
            )));
        }
        if rows == 0 || cols == 0 {
            return Err(contract("a grid needs at least one row and one column"));
        }
        Ok(Self {
            origin_lat: origin.0,
            origin_lon: origin.1,
            cell_size_m,
            rows,
            cols,
        })
    }

    /// Local equirectangular offset of a position from the origin, in meters
    /// `(east, north)`.
    pub fn project(&self, lat: f64, lon: f64) -> (f64, f64) {
        project(self.origin_lat, self.origin_lon, lat, lon)
    }

    /// `(row, col)` of the cell holding a position; cells are half-open so
    /// shared edges belong to the cell with the larger index.
    pub fn cell_of(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        let (east, north) = self.project(lat, lon);
        let col = (east / self.cell_size_m).floor();
        let row = (north / self.cell_size_m).floor();
        if col < 0.0 || row < 0.0 || col >= self.cols as f64 || row >= self.rows as f64 {
            return None;
        }
        Some((row as usize, col as usize))
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn cell_area_ha(&self) -> f64 {
        self.cell_size_m * self.cell_size_m / 10_000.0
    }

    pub fn area_ha(&self) -> f64 {
        self.cell_area_ha() * self.cells() as f64
    }
}

fn project(lat0: f64, lon0: f64, lat: f64, lon: f64) -> (f64, f64) {
    let east = (lon - lon0) * METERS_PER_DEG_LON * lat0.to_radians().cos();
    let north = (lat - lat0) * METERS_PER_DEG_LAT;
    (east, north)
}

/// Grid covering the box between two corners, `ceil(extent / cell)` cells
/// along each axis.
pub fn grid_from_bounds(sw: (f64, f64), ne: (f64, f64), cell_size_m: f64) -> Result<FieldGrid> {
    if !(ne.0 > sw.0 && ne.1 > sw.1) {
        return Err(contract(format!(
            "{ne:?} is not strictly north-east of {sw:?}"
        )));
    }
    let (east, north) = project(sw.0, sw.1, ne.0, ne.1);
    let count = |extent: f64| ((extent / cell_size_m - CEIL_SLACK).ceil() as usize).max(1);
    FieldGrid::new(sw, cell_size_m, 1, 1)?;
    FieldGrid::new(sw, cell_size_m, count(north), count(east))
}

/// Smallest grid anchored at the south-west-most record that holds every
/// record, including ones on the north or east edge.
pub fn grid_covering(records: &[DetectionRecord], cell_size_m: f64) -> Result<FieldGrid> {
    let Some(first) = records.first() else {
        return Err(contract("cannot fit a grid to an empty record list"));
    };
    let (mut lat0, mut lon0, mut lat1, mut lon1) = (first.lat, first.lon, first.lat, first.lon);
    for r in records {
        lat0 = lat0.min(r.lat);
        lon0 = lon0.min(r.lon);
        lat1 = lat1.max(r.lat);
        lon1 = lon1.max(r.lon);
    }
    let (east, north) = project(lat0, lon0, lat1, lon1);
    let count = |extent: f64| (extent / cell_size_m).floor() as usize + 1;
    FieldGrid::new((lat0, lon0), cell_size_m, count(north), count(east))
}

/// Per-cell detection counts.
#[derive(Clone, Debug, PartialEq)]
pub struct SeverityMap {
    pub grid: FieldGrid,
    pub diseased: Vec<u32>,
    pub total: Vec<u32>,
    pub out_of_bounds: usize,
}

impl SeverityMap {
    /// Diseased fraction of the cell; 0 when it has no records.
    pub fn severity(&self, cell: usize) -> f64 {
        if self.total[cell] == 0 {
            0.0
        } else {
            self.diseased[cell] as f64 / self.total[cell] as f64
        }
    }

    pub fn sampled(&self, cell: usize) -> bool {
        self.total[cell] > 0
    }

    pub fn records_in_bounds(&self) -> usize {
        self.total.iter().map(|&t| t as usize).sum()
    }
}

/// Counts records per cell; records outside the grid are tallied separately.
pub fn aggregate(records: &[DetectionRecord], grid: &FieldGrid) -> SeverityMap {
    let mut map = SeverityMap {
        grid: *grid,
        diseased: vec![0; grid.cells()],
        total: vec![0; grid.cells()],
        out_of_bounds: 0,
    };
    for r in records {
        match grid.cell_of(r.lat, r.lon) {
            Some((row, col)) => {
                let i = row * grid.cols + col;
                map.total[i] += 1;
                if r.label == LeafLabel::Anthracnose {
                    map.diseased[i] += 1;
                }
            }
            None => map.out_of_bounds += 1,
        }
    }
    map
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SprayPolicy {
    pub threshold: f64,
    /// Liters per hectare at the threshold.
    pub base_rate: f64,
    /// Liters per hectare at severity 1.
    pub max_rate: f64,
}

impl Default for SprayPolicy {
    fn default() -> Self {
        Self {
            threshold: 0.2,
            base_rate: 2.0,
            max_rate: 6.0,
        }
    }
}

impl SprayPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(contract(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        if !(self.base_rate.is_finite() && self.max_rate.is_finite() && self.base_rate >= 0.0) {
            return Err(contract("spray rates must be finite and non-negative"));
        }
        if self.base_rate > self.max_rate {
            return Err(contract(format!(
                "base rate {} exceeds max rate {}",
                self.base_rate, self.max_rate
            )));
        }
        Ok(())
    }

    /// Liters per hectare for a sampled cell of the given severity.
    pub fn dosage(&self, severity: f64) -> f64 {
        if severity < self.threshold {
            return 0.0;
        }
        if self.threshold >= 1.0 {
            return self.max_rate;
        }
        let t = ((severity - self.threshold) / (1.0 - self.threshold)).min(1.0);
        self.base_rate + (self.max_rate - self.base_rate) * t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SprayPlan {
    pub grid: FieldGrid,
    pub policy: SprayPolicy,
    pub severity: Vec<f64>,
    pub sampled: Vec<bool>,
    /// Liters per hectare, row-major.
    pub dosage: Vec<f64>,
    pub out_of_bounds: usize,
}

impl SprayPlan {
    /// Liters applied over the whole grid.
    pub fn total_liters(&self) -> f64 {
        self.dosage.iter().sum::<f64>() * self.grid.cell_area_ha()
    }

    /// Grid header, then `row col severity sampled dosage` per cell.
    pub fn to_tsv(&self) -> String {
        let g = &self.grid;
        let p = &self.policy;
        let mut s = String::new();
        writeln!(s, "origin_lat\t{}", g.origin_lat).expect("string write");
        writeln!(s, "origin_lon\t{}", g.origin_lon).expect("string write");
        writeln!(s, "cell_size_m\t{}", g.cell_size_m).expect("string write");
        writeln!(s, "rows\t{}", g.rows).expect("string write");
        writeln!(s, "cols\t{}", g.cols).expect("string write");
        writeln!(s, "threshold\t{}", p.threshold).expect("string write");
        writeln!(s, "base_rate_l_per_ha\t{}", p.base_rate).expect("string write");
        writeln!(s, "max_rate_l_per_ha\t{}", p.max_rate).expect("string write");
        writeln!(s, "out_of_bounds\t{}", self.out_of_bounds).expect("string write");
        s.push_str("row\tcol\tseverity\tsampled\tdosage_l_per_ha\n");
        for i in 0..g.cells() {
            writeln!(
                s,
                "{}\t{}\t{:.6}\t{}\t{:.6}",
                i / g.cols,
                i % g.cols,
                self.severity[i],
                self.sampled[i],
                self.dosage[i]
            )
            .expect("string write");
        }
        s
    }
}

/// Dosage per cell: zero for unsampled cells and cells below the threshold,
/// otherwise a linear ramp from `base_rate` to `max_rate`.
pub fn plan_spray(map: &SeverityMap, policy: SprayPolicy) -> Result<SprayPlan> {
    policy.validate()?;
    let n = map.grid.cells();
    let severity: Vec<f64> = (0..n).map(|i| map.severity(i)).collect();
    let sampled: Vec<bool> = (0..n).map(|i| map.sampled(i)).collect();
    let dosage = severity
        .iter()
        .zip(&sampled)
        .map(|(&s, &sampled)| if sampled { policy.dosage(s) } else { 0.0 })
        .collect();
    Ok(SprayPlan {
        grid: map.grid,
        policy,
        severity,
        sampled,
        dosage,
        out_of_bounds: map.out_of_bounds,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SavingsReport {
    pub area_ha: f64,
    pub uniform_liters: f64,
    pub variable_liters: f64,
    /// `1 - variable / uniform`.
    pub reduction: f64,
    pub sprayed_cells: usize,
    pub unsampled_cells: usize,
}

impl SavingsReport {
    pub fn to_tsv(&self) -> String {
        format!(
            "area_ha\t{:.6}\nuniform_liters\t{:.6}\nvariable_liters\t{:.6}\nreduction_pct\t{:.4}\nsprayed_cells\t{}\nunsampled_cells\t{}\n",
            self.area_ha,
            self.uniform_liters,
            self.variable_liters,
            100.0 * self.reduction,
            self.sprayed_cells,
            self.unsampled_cells
        )
    }
}

/// Pesticide use of the plan against spraying `uniform_rate` everywhere.
pub fn compare_uniform(plan: &SprayPlan, uniform_rate: f64) -> Result<SavingsReport> {
    if !(uniform_rate.is_finite() && uniform_rate > 0.0) {
        return Err(contract(format!(
            "uniform rate must be positive, got {uniform_rate}"
        )));
    }
    let area_ha = plan.grid.area_ha();
    let uniform_liters = uniform_rate * area_ha;
    let variable_liters = plan.total_liters();
    Ok(SavingsReport {
        area_ha,
        uniform_liters,
        variable_liters,
        reduction: 1.0 - variable_liters / uniform_liters,
        sprayed_cells: plan.dosage.iter().filter(|&&d| d > 0.0).count(),
        unsampled_cells: plan.sampled.iter().filter(|&&s| !s).count(),
    })
}
