use std::f64::consts::PI;

use dtnet::fem::*;
use dtnet::hilbert::{mode_count, BoundaryFunction};
use dtnet::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Raw-trig DtN eigenvalue `π λ_k` for `a = a_in` on `r < rho`, `a = a_out` outside.
///
/// Per mode: `u = A r^k` inside, `u = B r^k + C r^{-k}` outside, with continuity of `u`
/// and of `a ∂_r u` at `rho` and `u(1) = 1`. Eliminating gives `C = γ B`,
/// `γ = rho^{2k} (a_out − a_in)/(a_in + a_out)`, `B = 1/(1+γ)` and the flux at `r = 1` is
/// `a_out k (B − C)`.
fn annulus_eigenvalue(k: usize, a_in: f64, a_out: f64, rho: f64) -> f64 {
    let kf = k as f64;
    let gamma = rho.powf(2.0 * kf) * (a_out - a_in) / (a_in + a_out);
    PI * a_out * kf * (1.0 - gamma) / (1.0 + gamma)
}

#[test]
fn annulus_oracle_reduces_to_homogeneous_disk() {
    for k in 1..6 {
        assert!((annulus_eigenvalue(k, 3.0, 3.0, 0.4) - 3.0 * PI * k as f64).abs() < 1e-12);
        // ρ → 0 leaves only the outer medium
        assert!((annulus_eigenvalue(k, 7.0, 2.0, 1e-9) - 2.0 * PI * k as f64).abs() < 1e-9);
    }
}

fn random_function(rng: &mut ChaCha8Rng, k: usize) -> BoundaryFunction {
    BoundaryFunction::from_coeffs((0..mode_count(k)).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn random_conductivity(rng: &mut ChaCha8Rng, mesh: &Mesh) -> ConductivityField {
    let (c0, c1, c2, c3) =
        (rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), rng.gen_range(0.0..3.0));
    ConductivityField::from_fn(mesh, |x, y| (c0 * x + c1 * y + c2 * (x * x - y * y) + (c3 * x * y).sin()).exp())
        .unwrap()
}

#[test]
fn harmonic_extension_of_cos() {
    let mesh = generate_mesh(0.05).unwrap();
    let a = ConductivityField::constant(&mesh, 1.0).unwrap();
    let solver = DirichletSolver::new(&mesh, &a, LinearSolver::Cholesky).unwrap();
    for (freq, tol) in [(1usize, 0.01), (3, 0.01)] {
        let f = BoundaryFunction::cos(4, freq);
        let u = solver.solve(&f).unwrap();
        let err = mesh
            .vertices
            .iter()
            .zip(&u)
            .map(|(p, v)| {
                let (r, t) = ((p[0] * p[0] + p[1] * p[1]).sqrt(), p[1].atan2(p[0]));
                (r.powi(freq as i32) * (freq as f64 * t).cos() - v).abs()
            })
            .fold(0.0, f64::max);
        assert!(err <= tol, "mode {freq}: max nodal error {err}");
    }
}

#[test]
fn constants_are_solutions() {
    let mesh = generate_mesh(0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_conductivity(&mut rng, &mesh);
    let u = solve_dirichlet(&mesh, &a, &BoundaryFunction::constant(3, 2.5)).unwrap();
    assert!(u.iter().all(|v| (v - 2.5).abs() < 1e-10));
}

#[test]
fn interior_residual_is_small_for_both_solvers() {
    let mesh = generate_mesh(0.08).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random_conductivity(&mut rng, &mesh);
    let f = random_function(&mut rng, 4);
    let direct = DirichletSolver::new(&mesh, &a, LinearSolver::Cholesky).unwrap();
    let iterative = DirichletSolver::new(&mesh, &a, LinearSolver::ConjugateGradient).unwrap();
    let u1 = direct.solve(&f).unwrap();
    let u2 = iterative.solve(&f).unwrap();
    let ku = direct.stiffness().mul_vec(&u1);
    let flags = mesh.is_boundary();
    let interior_res: f64 = ku.iter().zip(&flags).filter(|(_, b)| !**b).map(|(v, _)| v * v).sum::<f64>().sqrt();
    let scale: f64 = ku.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(interior_res <= 1e-10 * scale);
    for (x, y) in u1.iter().zip(&u2) {
        assert!((x - y).abs() < 1e-8);
    }
    for (&b, t) in mesh.boundary.iter().zip(&mesh.boundary_angles) {
        assert_eq!(u1[b], f.eval(*t));
    }
}

#[test]
fn truncation_beyond_resolution_is_rejected() {
    let mesh = generate_mesh(0.5).unwrap();
    let a = ConductivityField::constant(&mesh, 1.0).unwrap();
    let too_fine = BoundaryFunction::cos(mesh.max_truncation() + 1, 1);
    assert!(matches!(solve_dirichlet(&mesh, &a, &too_fine), Err(Error::Argument(_))));
    assert!(dtn_matrix(&mesh, &a, mesh.max_truncation() + 1).is_err());
}

#[test]
fn pairing_values() {
    let mesh = generate_mesh(0.05).unwrap();
    let a = ConductivityField::constant(&mesh, 1.0).unwrap();
    let solver = DirichletSolver::new(&mesh, &a, LinearSolver::Cholesky).unwrap();
    let c = BoundaryFunction::cos(4, 1);
    let v = solver.pairing(&c, &c).unwrap();
    assert!((v / PI - 1.0).abs() < 0.01, "{v}");

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_conductivity(&mut rng, &mesh);
    let solver = DirichletSolver::new(&mesh, &a, LinearSolver::Cholesky).unwrap();
    for _ in 0..10 {
        let f = random_function(&mut rng, 5);
        let g = random_function(&mut rng, 5);
        assert!(solver.pairing(&f, &BoundaryFunction::constant(5, 1.0)).unwrap().abs() < 1e-9);
        let fg = solver.pairing(&f, &g).unwrap();
        let gf = solver.pairing(&g, &f).unwrap();
        assert!((fg - gf).abs() < 1e-9 * (1.0 + fg.abs()));
    }
}

#[test]
fn pairing_independent_of_lifting() {
    // Any P1 lifting of g gives the same value: perturb interior nodal values of v.
    let mesh = generate_mesh(0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random_conductivity(&mut rng, &mesh);
    let solver = DirichletSolver::new(&mesh, &a, LinearSolver::Cholesky).unwrap();
    let f = random_function(&mut rng, 3);
    let g = random_function(&mut rng, 3);
    let u = solver.solve(&f).unwrap();
    let mut v = vec![0.0; mesh.vertex_count()];
    for (&b, t) in mesh.boundary.iter().zip(&mesh.boundary_angles) {
        v[b] = g.eval(*t);
    }
    for i in mesh.interior() {
        v[i] = rng.gen_range(-5.0..5.0);
    }
    let kv = solver.stiffness().mul_vec(&v);
    let energy: f64 = u.iter().zip(&kv).map(|(a, b)| a * b).sum();
    let reference = solver.pairing(&f, &g).unwrap();
    assert!((energy - reference).abs() < 1e-9 * (1.0 + reference.abs()));
}

#[test]
fn apply_on_disk_modes() {
    let mesh = generate_mesh(0.05).unwrap();
    let one = ConductivityField::constant(&mesh, 1.0).unwrap();
    let three = ConductivityField::constant(&mesh, 3.0).unwrap();
    let k = 4;
    for freq in 1..=k {
        let f = BoundaryFunction::cos(k, freq);
        let img = dtn_apply(&mesh, &one, &f).unwrap();
        let expect = PI * freq as f64;
        for (i, v) in img.coeffs().iter().enumerate() {
            if i == 2 * freq - 1 {
                assert!((v / expect - 1.0).abs() < 0.01);
            } else {
                assert!(v.abs() < 0.01 * expect);
            }
        }
        let img3 = dtn_apply(&mesh, &three, &f).unwrap();
        for (x, y) in img3.coeffs().iter().zip(img.coeffs()) {
            assert!((x - 3.0 * y).abs() < 1e-9);
        }
    }
    let zero = dtn_apply(&mesh, &one, &BoundaryFunction::constant(k, 4.0)).unwrap();
    assert!(zero.coeffs().iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn disk_spectrum_k3() {
    let mesh = generate_mesh(0.05).unwrap();
    let a = ConductivityField::constant(&mesh, 1.0).unwrap();
    let m = dtn_matrix(&mesh, &a, 3).unwrap();
    assert_eq!(m.basis_kind, DtnBasis::Raw);
    let expect = [0.0, PI, PI, 2.0 * PI, 2.0 * PI, 3.0 * PI, 3.0 * PI];
    for i in 0..7 {
        if i == 0 {
            assert!(m.entries[(0, 0)].abs() < 1e-9);
        } else {
            assert!((m.entries[(i, i)] / expect[i] - 1.0).abs() < 0.01);
        }
        for j in 0..7 {
            if i != j {
                let scale = expect[i].max(expect[j]).max(PI);
                assert!(m.entries[(i, j)].abs() <= 0.01 * scale);
            }
        }
    }
    let twice = dtn_matrix(&mesh, &ConductivityField::constant(&mesh, 2.0).unwrap(), 3).unwrap();
    assert!((twice.entries - m.entries.scale(2.0)).amax() < 1e-9);
}

#[test]
fn two_layer_matches_annulus_series() {
    let mesh = generate_mesh(0.03).unwrap();
    let a = ConductivityField::two_layer(&mesh, 4.0, 1.0, 0.5).unwrap();
    let m = dtn_matrix(&mesh, &a, 6).unwrap();
    for k in 1..=6 {
        let expect = annulus_eigenvalue(k, 4.0, 1.0, 0.5);
        for i in [2 * k - 1, 2 * k] {
            let rel = (m.entries[(i, i)] / expect - 1.0).abs();
            assert!(rel <= 0.02, "mode {k}: relative error {rel}");
        }
    }
}

#[test]
fn mesh_convergence_is_second_order() {
    let k = 5;
    let err = |h: f64| {
        let mesh = generate_mesh(h).unwrap();
        let a = ConductivityField::constant(&mesh, 1.0).unwrap();
        let m = dtn_matrix(&mesh, &a, k).unwrap();
        (1..=k).map(|f| (m.entries[(2 * f - 1, 2 * f - 1)] - PI * f as f64).abs()).collect::<Vec<_>>()
    };
    let coarse = err(0.05);
    let fine = err(0.025);
    for (c, f) in coarse.iter().zip(&fine) {
        assert!(c / f >= 3.0, "ratio {} ({c} -> {f})", c / f);
    }
}

#[test]
fn structural_invariants_on_random_fields() {
    let mesh = generate_mesh(0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let a = random_conductivity(&mut rng, &mesh);
        let m = dtn_matrix(&mesh, &a, 6).unwrap();
        assert!(m.symmetry_defect() <= 1e-8);
        assert!(m.constant_mode_defect() <= 1e-8);
        for _ in 0..10 {
            let f = random_function(&mut rng, 6);
            assert!(m.bilinear(&f, &f).unwrap() >= -1e-9);
        }
    }
}

#[test]
fn dtn_matrix_is_deterministic() {
    let mesh = generate_mesh(0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let a = random_conductivity(&mut rng, &mesh);
    let m1 = dtn_matrix(&mesh, &a, 4).unwrap();
    let m2 = dtn_matrix(&mesh, &a, 4).unwrap();
    assert_eq!(m1.to_csv(), m2.to_csv());
}
