//! Great-circle distance and threshold-based accuracy aggregation.
//!
//! Both the reward engine and the evaluation harness measure a prediction by
//! its haversine distance to the ground truth and bucket it against a ladder
//! of radii (street, city, region, country, continent).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius used for every distance in this crate.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Radii of the standard geo-localization accuracy ladder, in kilometres.
pub const STANDARD_RADII_KM: [f64; 5] = [1.0, 25.0, 200.0, 750.0, 2500.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("coordinate is not finite: ({lat}, {lon})")]
    NotFinite { lat: f64, lon: f64 },
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} outside [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("invalid threshold ladder: {0}")]
    InvalidLadder(String),
    #[error("no records to aggregate")]
    NoData,
}

/// A latitude/longitude pair in decimal degrees.
///
/// Bounds are checked at construction, so every value of this type is a
/// valid point on the sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCoordinate", into = "RawCoordinate")]
pub struct GeoCoordinate {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawCoordinate {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawCoordinate> for GeoCoordinate {
    type Error = GeoError;

    fn try_from(raw: RawCoordinate) -> Result<Self, Self::Error> {
        GeoCoordinate::new(raw.lat, raw.lon)
    }
}

impl From<GeoCoordinate> for RawCoordinate {
    fn from(c: GeoCoordinate) -> Self {
        RawCoordinate {
            lat: c.lat,
            lon: c.lon,
        }
    }
}

impl GeoCoordinate {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(GeoError::NotFinite { lat, lon });
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::LatitudeOutOfRange(lat));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::LongitudeOutOfRange(lon));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Haversine great-circle distance in kilometres on a sphere of radius
/// [`EARTH_RADIUS_KM`].
pub fn haversine_km(a: GeoCoordinate, b: GeoCoordinate) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();

    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    // rounding can push h a hair above 1 for antipodal points
    let h = h.clamp(0.0, 1.0);
    2.0 * EARTH_RADIUS_KM * h.sqrt().asin()
}

/// Ordered radii with the score awarded to a prediction falling inside each.
///
/// A distance `d` earns the score of the smallest radius `r` with `d <= r`,
/// and zero beyond the last radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLadder", into = "RawLadder")]
pub struct ThresholdLadder {
    thresholds_km: Vec<f64>,
    scores: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawLadder {
    thresholds_km: Vec<f64>,
    scores: Vec<f64>,
}

impl TryFrom<RawLadder> for ThresholdLadder {
    type Error = GeoError;

    fn try_from(raw: RawLadder) -> Result<Self, Self::Error> {
        ThresholdLadder::new(raw.thresholds_km, raw.scores)
    }
}

impl From<ThresholdLadder> for RawLadder {
    fn from(l: ThresholdLadder) -> Self {
        RawLadder {
            thresholds_km: l.thresholds_km,
            scores: l.scores,
        }
    }
}

impl Default for ThresholdLadder {
    fn default() -> Self {
        Self {
            thresholds_km: STANDARD_RADII_KM.to_vec(),
            scores: vec![1.0, 0.8, 0.6, 0.4, 0.2],
        }
    }
}

impl ThresholdLadder {
    pub fn new(thresholds_km: Vec<f64>, scores: Vec<f64>) -> Result<Self, GeoError> {
        if thresholds_km.is_empty() {
            return Err(GeoError::InvalidLadder("no thresholds".into()));
        }
        if thresholds_km.len() != scores.len() {
            return Err(GeoError::InvalidLadder(format!(
                "{} thresholds but {} scores",
                thresholds_km.len(),
                scores.len()
            )));
        }
        if thresholds_km.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(GeoError::InvalidLadder(
                "thresholds must be finite and nonnegative".into(),
            ));
        }
        if thresholds_km.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GeoError::InvalidLadder(
                "thresholds must be strictly increasing".into(),
            ));
        }
        if scores.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
            return Err(GeoError::InvalidLadder("scores must lie in (0, 1]".into()));
        }
        if scores.windows(2).any(|w| w[0] <= w[1]) {
            return Err(GeoError::InvalidLadder(
                "scores must be strictly decreasing".into(),
            ));
        }
        Ok(Self {
            thresholds_km,
            scores,
        })
    }

    pub fn thresholds_km(&self) -> &[f64] {
        &self.thresholds_km
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Score for a distance; thresholds are inclusive.
    pub fn score(&self, distance_km: f64) -> f64 {
        self.thresholds_km
            .iter()
            .zip(&self.scores)
            .find(|(t, _)| distance_km <= **t)
            .map_or(0.0, |(_, s)| *s)
    }
}

/// One prediction to be scored against the truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub prediction: Option<GeoCoordinate>,
    pub truth: GeoCoordinate,
    pub tool_calls: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusAccuracy {
    pub radius_km: f64,
    pub accuracy: f64,
}

/// Accuracy at each radius, plus coverage and average tool usage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub acc_at: Vec<RadiusAccuracy>,
    pub coverage: f64,
    pub avg_tool_calls: f64,
    pub n_samples: usize,
}

impl AccuracyReport {
    pub fn accuracy_at(&self, radius_km: f64) -> Option<f64> {
        self.acc_at
            .iter()
            .find(|r| r.radius_km == radius_km)
            .map(|r| r.accuracy)
    }
}

/// Aggregate accuracy@r over the ladder's radii. An absent prediction is
/// incorrect at every radius.
pub fn aggregate_accuracy(
    records: &[EvalRecord],
    ladder: &ThresholdLadder,
) -> Result<AccuracyReport, GeoError> {
    if records.is_empty() {
        return Err(GeoError::NoData);
    }
    let n = records.len();
    let distances: Vec<Option<f64>> = records
        .iter()
        .map(|r| r.prediction.map(|p| haversine_km(p, r.truth)))
        .collect();

    let acc_at = ladder
        .thresholds_km()
        .iter()
        .map(|&radius_km| {
            let hits = distances
                .iter()
                .filter(|d| d.is_some_and(|d| d <= radius_km))
                .count();
            RadiusAccuracy {
                radius_km,
                accuracy: hits as f64 / n as f64,
            }
        })
        .collect();

    let covered = distances.iter().filter(|d| d.is_some()).count();
    let tool_calls: usize = records.iter().map(|r| r.tool_calls).sum();

    Ok(AccuracyReport {
        acc_at,
        coverage: covered as f64 / n as f64,
        avg_tool_calls: tool_calls as f64 / n as f64,
        n_samples: n,
    })
}
