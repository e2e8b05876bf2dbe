#![allow(dead_code)]

use joint_ukf::linalg::SqrtFactor;
use joint_ukf::srukf::{srukf_step, Diagnostics, FilterError, FilterState, UtParams};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random stable 2-state system with one output.
pub struct LinearCase {
    pub a: Matrix2<f64>,
    pub b: Vector2<f64>,
    pub c: Vector2<f64>,
    pub q_std: [f64; 2],
    pub r_std: f64,
    pub x0: Vector2<f64>,
    pub p0_std: [f64; 2],
}

impl LinearCase {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Matrix2::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let rho = a.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max);
        if rho > 0.95 {
            a *= 0.95 / rho;
        }
        Self {
            a,
            b: Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            c: Vector2::new(rng.gen_range(0.5..1.5), rng.gen_range(-0.5..0.5)),
            q_std: [rng.gen_range(0.01..0.3), rng.gen_range(0.01..0.3)],
            r_std: rng.gen_range(0.05..0.5),
            x0: Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            p0_std: [rng.gen_range(0.2..2.0), rng.gen_range(0.2..2.0)],
        }
    }
}

/// Largest relative deviations of the SRUKF from the textbook Kalman filter
/// over `steps` steps: `(mean, covariance)`.
pub fn kalman_deviation(case: &LinearCase, steps: usize, ut: &UtParams, seed: u64) -> Result<(f64, f64), FilterError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let q = Matrix2::from_diagonal(&Vector2::new(case.q_std[0].powi(2), case.q_std[1].powi(2)));
    let r = case.r_std * case.r_std;

    let mut x_true = case.x0 + Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal));
    let mut m = case.x0;
    let mut p = Matrix2::from_diagonal(&Vector2::new(case.p0_std[0].powi(2), case.p0_std[1].powi(2)));
    let mut fs = FilterState::new(
        DVector::from_column_slice(case.x0.as_slice()),
        SqrtFactor::from_std_devs(&case.p0_std),
        2,
    )?;
    let q_sqrt = SqrtFactor::from_std_devs(&case.q_std);
    let r_sqrt = SqrtFactor::from_std_devs(&[case.r_std]);
    let mut diag = Diagnostics::default();
    let (mut worst_mean, mut worst_cov) = (0.0f64, 0.0f64);

    for k in 0..steps {
        let u = (0.1 * k as f64).sin();
        let w = Vector2::new(
            case.q_std[0] * rng.sample::<f64, _>(StandardNormal),
            case.q_std[1] * rng.sample::<f64, _>(StandardNormal),
        );
        x_true = case.a * x_true + case.b * u + w;
        let y = case.c.dot(&x_true) + case.r_std * rng.sample::<f64, _>(StandardNormal);

        m = case.a * m + case.b * u;
        p = case.a * p * case.a.transpose() + q;
        let s = case.c.dot(&(p * case.c)) + r;
        let gain = p * case.c / s;
        m += gain * (y - case.c.dot(&m));
        p -= gain * gain.transpose() * s;

        let (a, b, c) = (case.a, case.b, case.c);
        fs = srukf_step(
            &fs,
            |v| {
                let x = Vector2::new(v[0], v[1]);
                Ok(DVector::from_column_slice((a * x + b * u).as_slice()))
            },
            |v| Ok(DVector::from_element(1, c[0] * v[0] + c[1] * v[1])),
            &q_sqrt,
            &r_sqrt,
            &DVector::from_element(1, y),
            ut,
            &mut diag,
        )?;

        let p_ukf = fs.covariance();
        let mean_scale = m.norm().max(1e-3);
        let mean_err = (Vector2::new(fs.mean[0], fs.mean[1]) - m).norm() / mean_scale;
        let p_ref = DMatrix::from_column_slice(2, 2, p.as_slice());
        let cov_err = (&p_ukf - &p_ref).norm() / p_ref.norm();
        worst_mean = worst_mean.max(mean_err);
        worst_cov = worst_cov.max(cov_err);
    }
    Ok((worst_mean, worst_cov))
}
