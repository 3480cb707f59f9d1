//! Invariants of the constrained updates on random instances.

use eqkf::constrained::{
    self, augmented_update, constrain_posterior, fusion_constrained_update, gamma_projector,
    project, restricted_gain_update,
};
use eqkf::kalman::{self, update_fusion, update_joseph};
use eqkf::matops::{self, min_eigenvalue, relative_diff};
use eqkf::oracle::{self, sample, KktSystem};
use eqkf::{
    DenseMatrix, DenseVector, EqualityConstraint, Measurement, ProjectionSpec, ProjectionWeight,
    StateEstimate, SystemModel,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64) -> sample::Instance {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    sample::instance(&mut r, 8, 4, 3, 1e4)
}

fn vec_rel(a: &DenseVector, b: &DenseVector) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn spec(weight: ProjectionWeight) -> ProjectionSpec {
    ProjectionSpec::new(weight)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn posterior_weighted_methods_agree(seed: u64) {
        let inst = instance(seed);
        let (pred, z, model, c) = (&inst.pred, &inst.z, &inst.model, &inst.constraint);
        let (post, _) = update_joseph(pred, z, model).unwrap();
        let proj = project(&post, c, &spec(ProjectionWeight::PosteriorInverse)).unwrap();
        let aug = augmented_update(pred, z, model, c).unwrap();
        let fus = fusion_constrained_update(pred, z, model, c).unwrap();
        let direct = constrain_posterior(&post, c).unwrap();
        for other in [&aug, &fus, &direct] {
            prop_assert!(vec_rel(other.estimate.mean(), proj.estimate.mean()) < 1e-7);
            prop_assert!(
                relative_diff(other.estimate.covariance(), proj.estimate.covariance()) < 1e-6
            );
        }
    }

    #[test]
    fn restricted_gain_matches_identity_projection(seed: u64) {
        let inst = instance(seed);
        let (pred, z, model, c) = (&inst.pred, &inst.z, &inst.model, &inst.constraint);
        let (post, _) = update_joseph(pred, z, model).unwrap();
        let proj = project(&post, c, &spec(ProjectionWeight::Identity)).unwrap();
        let (_, rg) = restricted_gain_update(pred, z, model, c).unwrap();
        prop_assert!(vec_rel(rg.estimate.mean(), proj.estimate.mean()) < 1e-8);
        prop_assert!(relative_diff(rg.estimate.covariance(), proj.estimate.covariance()) < 1e-8);
    }

    #[test]
    fn feasibility_null_space_and_shrinkage(seed: u64) {
        let inst = instance(seed);
        let (pred, z, model, c) = (&inst.pred, &inst.z, &inst.model, &inst.constraint);
        let (post, _) = update_joseph(pred, z, model).unwrap();
        let bound = 1e-9 * (1.0 + c.rhs().norm());
        let posterior_weighted = [
            augmented_update(pred, z, model, c).unwrap(),
            fusion_constrained_update(pred, z, model, c).unwrap(),
            project(&post, c, &spec(ProjectionWeight::PosteriorInverse)).unwrap(),
            constrain_posterior(&post, c).unwrap(),
        ];
        let others = [
            restricted_gain_update(pred, z, model, c).unwrap().1,
            project(&post, c, &spec(ProjectionWeight::Identity)).unwrap(),
        ];
        for r in posterior_weighted.iter().chain(others.iter()) {
            prop_assert!(r.constraint_residual <= bound, "{:?}: {:e}", r.method, r.constraint_residual);
            let cov = r.estimate.covariance();
            prop_assert!((c.matrix() * cov).norm() <= 1e-8 * cov.norm());
        }
        let trace = post.covariance().trace();
        for r in &posterior_weighted {
            let diff = post.covariance() - r.estimate.covariance();
            prop_assert!(min_eigenvalue(&diff).unwrap() >= -1e-9 * trace);
        }
    }

    #[test]
    fn projection_matches_dense_kkt(seed: u64) {
        let inst = instance(seed);
        let (post, _) = update_joseph(&inst.pred, &inst.z, &inst.model).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let w = sample::spd_conditioned(&mut r, post.dim(), 1e4);
        let projected = project(&post, &inst.constraint, &spec(ProjectionWeight::Explicit(w.clone())))
            .unwrap();
        let dense = oracle::dense_kkt_project(&KktSystem {
            weight: w,
            constraint: inst.constraint.clone(),
            target: post.mean().clone(),
        })
        .unwrap();
        prop_assert!(vec_rel(projected.estimate.mean(), &dense) < 1e-7);
    }

    #[test]
    fn gamma_and_upsilon_a_are_idempotent(seed: u64) {
        let inst = instance(seed);
        let (post, _) = update_joseph(&inst.pred, &inst.z, &inst.model).unwrap();
        let gamma = gamma_projector(post.covariance(), &inst.constraint).unwrap();
        prop_assert!((&gamma * &gamma - &gamma).norm() <= 1e-9 * gamma.norm());
        let n = post.dim();
        let ua = DenseMatrix::identity(n, n) - &gamma;
        prop_assert!((&ua * &ua - &ua).norm() <= 1e-9 * ua.norm().max(1.0));
        // Gamma P Gamma' equals P - P A' (A P A')^-1 A P.
        let cong = constrained::joseph_constrained_cov(post.covariance(), &inst.constraint).unwrap();
        let direct = constrain_posterior(&post, &inst.constraint).unwrap();
        prop_assert!(relative_diff(&cong, direct.estimate.covariance()) < 1e-8);
    }

    #[test]
    fn fusion_form_matches_gain_form(seed: u64) {
        let inst = instance(seed);
        let (joseph, _) = update_joseph(&inst.pred, &inst.z, &inst.model).unwrap();
        let fused = update_fusion(&inst.pred, &inst.z, &inst.model).unwrap();
        prop_assert!(vec_rel(fused.mean(), joseph.mean()) < 1e-8);
        prop_assert!(relative_diff(fused.covariance(), joseph.covariance()) < 1e-8);
    }

    #[test]
    fn empty_constraint_reduces_to_kalman(seed: u64) {
        let inst = instance(seed);
        let (pred, z, model) = (&inst.pred, &inst.z, &inst.model);
        let c = EqualityConstraint::empty(pred.dim());
        let (post, _) = update_joseph(pred, z, model).unwrap();
        for r in [
            augmented_update(pred, z, model, &c).unwrap(),
            fusion_constrained_update(pred, z, model, &c).unwrap(),
            restricted_gain_update(pred, z, model, &c).unwrap().1,
            project(&post, &c, &spec(ProjectionWeight::Identity)).unwrap(),
        ] {
            prop_assert!(vec_rel(r.estimate.mean(), post.mean()) < 1e-8);
            prop_assert!(relative_diff(r.estimate.covariance(), post.covariance()) < 1e-8);
        }
    }
}

#[test]
fn posterior_weight_minimizes_trace() {
    let mut r = ChaCha8Rng::seed_from_u64(oracle::published_seed("dominance"));
    for _ in 0..20 {
        let inst = sample::instance(&mut r, 6, 3, 3, 1e3);
        let (post, _) = update_joseph(&inst.pred, &inst.z, &inst.model).unwrap();
        let best = project(
            &post,
            &inst.constraint,
            &spec(ProjectionWeight::PosteriorInverse),
        )
        .unwrap()
        .estimate
        .covariance()
        .trace();
        for _ in 0..100 {
            let w = sample::spd_conditioned(&mut r, post.dim(), 1e4);
            let other = project(
                &post,
                &inst.constraint,
                &spec(ProjectionWeight::Explicit(w)),
            )
            .unwrap()
            .estimate
            .covariance()
            .trace();
            assert!(best <= other * (1.0 + 1e-10), "{best} > {other}");
        }
    }
}

#[test]
fn symmetry_is_preserved_over_long_recursion() {
    // Constant-velocity pair with a position-equality constraint; P0 has condition 1e6.
    let dt = 0.1;
    let f = DenseMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, dt, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, dt, //
            0.0, 0.0, 0.0, 1.0,
        ],
    );
    let g = DenseMatrix::from_row_slice(
        4,
        2,
        &[0.5 * dt * dt, 0.0, dt, 0.0, 0.0, 0.5 * dt * dt, 0.0, dt],
    );
    let q = &g * g.transpose() * 0.01;
    let h = DenseMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let model = SystemModel::new(f, q, h, DenseMatrix::identity(2, 2) * 0.25).unwrap();
    let c = EqualityConstraint::new(
        DenseMatrix::from_row_slice(1, 4, &[1.0, 0.0, -1.0, 0.0]),
        DenseVector::from_column_slice(&[0.0]),
    )
    .unwrap();
    let p0 = DenseMatrix::from_diagonal(&DenseVector::from_column_slice(&[1e3, 1.0, 1e-3, 1.0]));
    let mut est = StateEstimate::new(DenseVector::zeros(4), p0, 0).unwrap();
    for k in 0..1000u64 {
        let pred = kalman::predict(&est, &model).unwrap();
        let z = Measurement::new(
            DenseVector::from_column_slice(&[(k as f64).sin(), (k as f64).sin()]),
            k + 1,
        )
        .unwrap();
        let (post, _) = update_joseph(&pred, &z, &model).unwrap();
        let cov = constrained::joseph_constrained_cov(post.covariance(), &c).unwrap();
        let mean = constrain_posterior(&post, &c)
            .unwrap()
            .estimate
            .mean()
            .clone();
        assert!(
            matops::asymmetry(&cov) <= 1e-12 * matops::inf_norm(&cov),
            "step {k}"
        );
        assert!(
            min_eigenvalue(&cov).unwrap() >= -1e-9 * cov.trace(),
            "step {k}"
        );
        est = StateEstimate::new(mean, cov, k + 1).unwrap();
    }
}
