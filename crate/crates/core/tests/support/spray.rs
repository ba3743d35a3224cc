//! Spray-planner properties on random fields and the worked savings example.

use cashew_core::spray::{
    aggregate, compare_uniform, plan_spray, DetectionRecord, FieldGrid, LeafLabel, SprayPolicy,
    METERS_PER_DEG_LAT, METERS_PER_DEG_LON, STUDY_SITE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Check;

/// Position `east`, `north` meters from `origin`.
pub fn offset(origin: (f64, f64), east: f64, north: f64) -> (f64, f64) {
    (
        origin.0 + north / METERS_PER_DEG_LAT,
        origin.1 + east / (METERS_PER_DEG_LON * origin.0.to_radians().cos()),
    )
}

fn record(origin: (f64, f64), east: f64, north: f64, label: LeafLabel) -> DetectionRecord {
    let (lat, lon) = offset(origin, east, north);
    DetectionRecord::new(lat, lon, label, 1.0).unwrap()
}

/// Dominance, threshold, bounds, conservation and monotonicity over
/// `cases` random fields and policies.
pub fn random_field_properties(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let cell = rng.random_range(2.0..25.0);
        let (rows, cols) = (rng.random_range(1..12), rng.random_range(1..12));
        let grid = FieldGrid::new(STUDY_SITE, cell, rows, cols).unwrap();
        let (h, w) = (rows as f64 * cell, cols as f64 * cell);
        let n = rng.random_range(0..400);
        let disease_rate = rng.random_range(0.0..1.0);
        let records: Vec<DetectionRecord> = (0..n)
            .map(|_| {
                // a margin around the grid puts some records out of bounds
                let e = rng.random_range(-0.2 * w..1.2 * w);
                let nn = rng.random_range(-0.2 * h..1.2 * h);
                let label = if rng.random_bool(disease_rate) {
                    LeafLabel::Anthracnose
                } else {
                    LeafLabel::Healthy
                };
                record(STUDY_SITE, e, nn, label)
            })
            .collect();
        let map = aggregate(&records, &grid);
        if map.records_in_bounds() + map.out_of_bounds != records.len() {
            return Err(format!(
                "case {case}: {} in cells + {} outside != {}",
                map.records_in_bounds(),
                map.out_of_bounds,
                records.len()
            ));
        }
        let base = rng.random_range(0.0..5.0);
        let policy = SprayPolicy {
            threshold: rng.random_range(0.0..=1.0),
            base_rate: base,
            max_rate: base + rng.random_range(0.0..5.0),
        };
        let plan = plan_spray(&map, policy).map_err(|e| e.to_string())?;
        for (i, (&d, &s)) in plan.dosage.iter().zip(&plan.severity).enumerate() {
            if !(0.0..=policy.max_rate).contains(&d) {
                return Err(format!(
                    "case {case} cell {i}: dosage {d} outside [0, {}]",
                    policy.max_rate
                ));
            }
            if (s < policy.threshold || !plan.sampled[i]) && d != 0.0 {
                return Err(format!(
                    "case {case} cell {i}: severity {s} below threshold but dosage {d}"
                ));
            }
        }
        if policy.max_rate > 0.0 {
            let report = compare_uniform(&plan, policy.max_rate).map_err(|e| e.to_string())?;
            if report.variable_liters > report.uniform_liters * (1.0 + 1e-12) {
                return Err(format!(
                    "case {case}: variable {} exceeds uniform {}",
                    report.variable_liters, report.uniform_liters
                ));
            }
        }
        let mut prev = 0.0;
        for k in 0..=100 {
            let d = policy.dosage(k as f64 / 100.0);
            if d < prev {
                return Err(format!(
                    "case {case}: dosage falls from {prev} to {d} at severity {}",
                    k as f64 / 100.0
                ));
            }
            prev = d;
        }
    }
    Ok(())
}

/// Ten one-hectare cells; two at the threshold take the 2 L/ha base rate,
/// so 4 L are used against 10 L uniformly, a 60% reduction.
pub fn worked_savings_example() -> Check {
    let grid = FieldGrid::new(STUDY_SITE, 100.0, 1, 10).unwrap();
    let mut records = Vec::new();
    for col in [3usize, 7] {
        let e = col as f64 * 100.0 + 50.0;
        records.push(record(STUDY_SITE, e, 50.0, LeafLabel::Anthracnose));
        for k in 0..4 {
            records.push(record(STUDY_SITE, e + k as f64, 40.0, LeafLabel::Healthy));
        }
    }
    for col in [0usize, 1, 5] {
        records.push(record(
            STUDY_SITE,
            col as f64 * 100.0 + 50.0,
            50.0,
            LeafLabel::Healthy,
        ));
    }
    let plan = plan_spray(&aggregate(&records, &grid), SprayPolicy::default())
        .map_err(|e| e.to_string())?;
    let want: Vec<f64> = (0..10)
        .map(|c| if c == 3 || c == 7 { 2.0 } else { 0.0 })
        .collect();
    if plan.dosage != want {
        return Err(format!("dosage {:?}", plan.dosage));
    }
    let report = compare_uniform(&plan, 1.0).map_err(|e| e.to_string())?;
    if (
        report.uniform_liters,
        report.variable_liters,
        report.reduction,
    ) != (10.0, 4.0, 0.6)
    {
        return Err(format!(
            "uniform {} variable {} reduction {}",
            report.uniform_liters, report.variable_liters, report.reduction
        ));
    }
    Ok(())
}
