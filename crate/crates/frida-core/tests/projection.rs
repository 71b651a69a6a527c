//! Cross-checks the covariance-eigendecomposition projection against an
//! independent one-sided Jacobi SVD of the centered data.

use frida_core::metrics::project2d;
use frida_core::rng::{gauss_sample, RngStream};
use frida_core::tensor::Tensor2;

/// Singular values of a matrix by one-sided Jacobi: rotate column pairs
/// until they are mutually orthogonal, then read off the column norms.
/// Written independently of the projection path it checks.
#[allow(clippy::needless_range_loop)] // paired column rotations
fn singular_values(a: &Tensor2) -> Vec<f64> {
    let n = a.rows();
    let d = a.cols();
    let mut cols: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..n).map(|i| a.get(i, j)).collect())
        .collect();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..d {
            for q in (p + 1)..d {
                let alpha: f64 = cols[p].iter().map(|v| v * v).sum();
                let beta: f64 = cols[q].iter().map(|v| v * v).sum();
                let gamma: f64 = cols[p].iter().zip(cols[q].iter()).map(|(x, y)| x * y).sum();
                off = off.max(gamma.abs() / (alpha * beta).sqrt().max(1e-300));
                if gamma.abs() < 1e-15 * (alpha * beta).sqrt().max(1e-300) {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let xp = cols[p][i];
                    let xq = cols[q][i];
                    cols[p][i] = c * xp - s * xq;
                    cols[q][i] = s * xp + c * xq;
                }
            }
        }
        if off < 1e-14 {
            break;
        }
    }
    let mut sigma: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    sigma.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sigma
}

fn centered(features: &Tensor2) -> Tensor2 {
    let n = features.rows();
    let d = features.cols();
    let mut means = vec![0.0; d];
    for r in 0..n {
        for (c, m) in means.iter_mut().enumerate() {
            *m += features.get(r, c);
        }
    }
    for m in means.iter_mut() {
        *m /= n as f64;
    }
    let mut out = features.clone();
    for r in 0..n {
        for (c, m) in means.iter().enumerate() {
            let v = out.get(r, c) - m;
            out.set(r, c, v);
        }
    }
    out
}

#[test]
fn reconstruction_error_matches_the_svd_oracle() {
    let mut rng = RngStream::new(2718);
    for trial in 0..5 {
        let n = 20 + rng.next_index(20);
        let d = 3 + rng.next_index(5);
        // anisotropic data so the top components carry real structure
        let mut data = gauss_sample(&mut rng, n, d);
        for r in 0..n {
            let boost = 3.0 * rng.next_gauss();
            let tilt = 1.5 * rng.next_gauss();
            let v0 = data.get(r, 0) + boost;
            let v1 = data.get(r, 1) + tilt;
            data.set(r, 0, v0);
            data.set(r, 1, v1);
        }
        let projection = project2d(&data).unwrap();

        // implementation-side residual: squared error after reconstructing
        // from the two kept components
        let xc = centered(&data);
        let recon = projection.coords.matmul_t(&projection.components).unwrap();
        let mut residual = 0.0;
        for (a, b) in xc.data().iter().zip(recon.data().iter()) {
            residual += (a - b) * (a - b);
        }

        // oracle-side residual: total variance minus the top two squared
        // singular values of the centered data
        let sigma = singular_values(&xc);
        let total: f64 = xc.sq_norm();
        let oracle = total - sigma[0] * sigma[0] - sigma.get(1).map_or(0.0, |s| s * s);

        let scale = total.max(1.0);
        assert!(
            (residual - oracle).abs() <= 1e-8 * scale,
            "trial {trial}: residual {residual} vs oracle {oracle}"
        );

        // eigenvalues agree with the singular values up to the 1/n factor
        let n_f = n as f64;
        assert!((projection.eigenvalues.0 - sigma[0] * sigma[0] / n_f).abs() < 1e-8);
        assert!((projection.eigenvalues.1 - sigma[1] * sigma[1] / n_f).abs() < 1e-8);
    }
}

#[test]
fn variance_order_dominates_residual_directions() {
    let mut rng = RngStream::new(55);
    let data = gauss_sample(&mut rng, 60, 6);
    let projection = project2d(&data).unwrap();
    let xc = centered(&data);
    let sigma = singular_values(&xc);
    let n = 60.0;
    // PC1 >= PC2 >= every remaining direction
    assert!(projection.eigenvalues.0 >= projection.eigenvalues.1);
    for s in &sigma[2..] {
        assert!(projection.eigenvalues.1 >= s * s / n - 1e-9);
    }
}

#[test]
fn matmul_t_reconstruction_shape() {
    // coords (n x 2) times components^T (2 x d) lands back in data space
    let mut rng = RngStream::new(9);
    let data = gauss_sample(&mut rng, 10, 4);
    let p = project2d(&data).unwrap();
    let recon = p.coords.matmul_t(&p.components).unwrap();
    assert_eq!(recon.rows(), 10);
    assert_eq!(recon.cols(), 4);
}
