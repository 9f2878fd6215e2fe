use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::cloud::Point3;

/// Principal components of a point set.
#[derive(Debug, Clone, Copy)]
pub struct Principal {
    pub mean: Vector3<f64>,
    /// Eigenvalues of the (population) covariance, descending, clamped at 0.
    pub values: [f64; 3],
    /// Unit eigenvectors matching `values`, as columns.
    pub axes: Matrix3<f64>,
}

pub fn covariance(points: &[Point3], mean: &Vector3<f64>) -> Matrix3<f64> {
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - mean;
        cov += d * d.transpose();
    }
    cov / points.len() as f64
}

/// `None` for an empty input.
pub fn principal_components(points: &[Point3]) -> Option<Principal> {
    if points.is_empty() {
        return None;
    }
    let mean = points
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + p.coords)
        / points.len() as f64;
    let eig = SymmetricEigen::new(covariance(points, &mean));
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.map(|i| eig.eigenvalues[i].max(0.0));
    let axes = Matrix3::from_columns(&order.map(|i| eig.eigenvectors.column(i).into_owned()));
    Some(Principal { mean, values, axes })
}
