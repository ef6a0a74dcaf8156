//! Fixtures shared by the benchmarks.

use splitting::chart::{Transversal, VectorField};
use splitting::euler::{linearize, LinearizeConfig, TubularEmbedding};

/// Euler-like field on R^3 vanishing on the x-axis.
pub fn perturbed_euler() -> (VectorField, Transversal) {
    let x = VectorField::parse(
        3,
        &["0.3*x2^2 + 0.2*x1*x2*x3", "x2 + 0.4*x2*x3", "x3 + 0.1*x2^2*(1 + x1)"],
    )
    .unwrap();
    (x, Transversal::standard(3, 1).unwrap())
}

pub fn embedding() -> TubularEmbedding<VectorField> {
    let (x, tr) = perturbed_euler();
    linearize(&x, &tr, &LinearizeConfig::default()).unwrap()
}
