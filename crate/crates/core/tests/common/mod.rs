//! Shared scenario builders for the integration suites.
#![allow(dead_code)]

use heislab_core::cloud::CloudResolution;
use heislab_core::{
    Atom, Ball, Bump, Density, Point, PotentialField, Profile, QuadratureScheme, WeightField,
};
use std::sync::Arc;

pub fn scheme(budget: usize, seed: u64) -> QuadratureScheme {
    QuadratureScheme::monte_carlo(budget, seed)
}

/// Zero-density (flat) field.
pub fn flat_field(budget: usize, seed: u64) -> Arc<PotentialField> {
    Arc::new(PotentialField::new(Density::zero(1.0), scheme(budget, seed)))
}

/// One negative bump of mass `beta` near the origin; the workhorse
/// negative-density scenario.
pub fn negative_density(beta: f64) -> Density {
    Density::new(
        vec![Bump {
            center: Point::new(0.5, 0.3, 0.0),
            profile: Profile::PolyBump,
            width: 1.0,
            mass: -beta,
        }],
        vec![],
        1.0,
    )
    .unwrap()
}

/// Mixed-sign scenario: positive mass `alpha` and negative mass `beta`.
pub fn mixed_density(alpha: f64, beta: f64) -> Density {
    Density::new(
        vec![
            Bump {
                center: Point::new(-0.8, 0.4, 0.3),
                profile: Profile::PolyBump,
                width: 0.8,
                mass: alpha,
            },
            Bump {
                center: Point::new(0.7, -0.2, -0.2),
                profile: Profile::GaussianLike,
                width: 0.25,
                mass: -beta,
            },
        ],
        vec![],
        1.0,
    )
    .unwrap()
}

/// Field with the scan-grade evaluation budget and particle resolution.
pub fn scan_field(density: Density, seed: u64) -> Arc<PotentialField> {
    Arc::new(
        PotentialField::new(density, scheme(16_384, seed)).with_cloud_resolution(
            CloudResolution {
                radial: 10,
                lat: 6,
                lon: 12,
            },
        ),
    )
}

pub fn volume_weight(field: &Arc<PotentialField>) -> WeightField {
    WeightField::new(field.clone(), 4.0)
}

pub fn region(radius: f64) -> Ball {
    Ball::new(Point::ORIGIN, radius).unwrap()
}
