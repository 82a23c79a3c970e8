use mmenkf::da::*;
use mmenkf::mesh::{BoxDomain, SimplicialMesh};
use mmenkf::metric::MetricField;
use mmenkf::linalg::SMat;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn line(n: usize) -> SimplicialMesh<f64, 1> {
    SimplicialMesh::uniform(BoxDomain::new([0.0], [20.0]).unwrap(), [n]).unwrap()
}

fn random_ensemble(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Ensemble<f64> {
    Ensemble::new(DMatrix::from_fn(dim, n, |_, _| rng.random_range(-1.0..1.0))).unwrap()
}

fn random_obs(rng: &mut ChaCha8Rng, mesh: &SimplicialMesh<f64, 1>, p: usize, r: f64) -> ObservationSet<f64, 1> {
    let locs = (0..p).map(|_| [rng.random_range(0.0..20.0)]).collect();
    let vals = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    ObservationSet::new(mesh, locs, vals, vec![r; p]).unwrap()
}

// Kalman gain from an explicit inverse of the innovation covariance.
fn oracle_gain(pb: &DMatrix<f64>, h: &DMatrix<f64>, r: &[f64]) -> DMatrix<f64> {
    let s = h * pb * h.transpose() + DMatrix::from_diagonal(&DVector::from_column_slice(r));
    pb * h.transpose() * s.try_inverse().unwrap()
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

#[test]
fn etkf_covariance_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mesh = line(16); // 15 elements, 30 coefficients
    for _ in 0..20 {
        let ens = random_ensemble(&mut rng, 30, 5);
        let obs = random_obs(&mut rng, &mesh, 5, 0.05);
        let out = etkf_update(&ens, &obs).unwrap();
        let x = ens.perturbations();
        let pb = &x * x.transpose();
        let h = obs.h_matrix(30);
        let k = oracle_gain(&pb, &h, obs.r_diag());
        let xa = out.perturbations();
        let pa = &xa * xa.transpose();
        let expect = (DMatrix::identity(30, 30) - &k * &h) * &pb;
        assert!(rel(&pa, &expect) < 1e-8, "{}", rel(&pa, &expect));
        let m = ens.mean();
        let ma = &m + &k * (obs.values() - &h * &m);
        assert!((out.mean() - ma).amax() < 1e-10);
    }
}

#[test]
fn scalar_kalman() {
    // one element, both coefficients equal: H u is the scalar itself
    let mesh = line(2);
    let vals = [0.3, -0.4, 1.1, 0.0, 0.6];
    let ens = Ensemble::from_members(&vals.iter().map(|&v| vec![v, v]).collect::<Vec<_>>()).unwrap();
    let r = 0.2;
    let y = 0.9;
    let obs = ObservationSet::new(&mesh, vec![[7.0]], vec![y], vec![r]).unwrap();
    let out = etkf_update(&ens, &obs).unwrap();
    let n = vals.len() as f64;
    let m: f64 = vals.iter().sum::<f64>() / n;
    let p: f64 = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    let g = p / (p + r);
    let ma = m + g * (y - m);
    let pa = (1.0 - g) * p;
    let mean = out.mean();
    let xa = out.perturbations();
    let var = (xa.row(0) * xa.row(0).transpose())[(0, 0)];
    assert!((mean[0] - ma).abs() < 1e-12 && (mean[1] - ma).abs() < 1e-12);
    assert!((var - pa).abs() < 1e-12, "{var} vs {pa}");
}

#[test]
fn letkf_whole_domain_equals_etkf() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mesh = line(16);
    let ens = random_ensemble(&mut rng, 30, 5);
    let obs = random_obs(&mut rng, &mesh, 5, 0.1);
    let g = etkf_update(&ens, &obs).unwrap();
    let l = letkf_update(&ens, &obs, &mesh, &vec![25.0; 16]).unwrap();
    assert!((g.matrix() - l.matrix()).amax() < 1e-8);
    let none = letkf_update(&ens, &obs, &mesh, &vec![1e-9; 16]).unwrap();
    let far = ObservationSet::new(&mesh, vec![[10.3]], vec![0.0], vec![0.1]).unwrap();
    let untouched = letkf_update(&ens, &far, &mesh, &vec![0.05; 16]).unwrap();
    assert_eq!(untouched.matrix(), ens.matrix());
    assert_eq!(none.matrix(), ens.matrix());
}

#[test]
fn uninformative_and_zero_innovation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mesh = line(16);
    let ens = random_ensemble(&mut rng, 30, 5);
    let obs = random_obs(&mut rng, &mesh, 5, 1e6);
    let out = etkf_update(&ens, &obs).unwrap();
    assert!(rel(out.matrix(), ens.matrix()) < 1e-4);

    // members agree at every observed coefficient and match the data
    let obs = ObservationSet::new(&mesh, vec![[0.5], [7.3]], vec![0.25, -0.5], vec![0.1, 0.1]).unwrap();
    let mut m = DMatrix::from_fn(30, 4, |_, _| rng.random_range(-1.0..1.0));
    for c in 0..4 {
        m[(0, c)] = 0.25;
        m[(1, c)] = 0.25;
        m[(10, c)] = -0.5;
        m[(11, c)] = -0.5;
    }
    let ens = Ensemble::new(m).unwrap();
    for out in [
        etkf_update(&ens, &obs).unwrap(),
        letkf_update(&ens, &obs, &mesh, &vec![3.0; 16]).unwrap(),
        enkf_gc_update(&ens, &obs, &mesh, &LocalizationScheme::GcMod { l: 1.0 }).unwrap(),
    ] {
        assert!((out.matrix() - ens.matrix()).amax() < 1e-12);
    }
}

#[test]
fn gc_with_huge_length_is_unlocalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mesh = line(16);
    let ens = random_ensemble(&mut rng, 30, 5);
    let obs = random_obs(&mut rng, &mesh, 4, 0.1);
    let base = enkf_gc_update(&ens, &obs, &mesh, &LocalizationScheme::None).unwrap();
    for s in [LocalizationScheme::GcMod { l: 1e12 }, LocalizationScheme::GcObs { l: 1e12 }] {
        let out = enkf_gc_update(&ens, &obs, &mesh, &s).unwrap();
        assert!((out.matrix() - base.matrix()).amax() < 1e-10);
    }
    // oracle: every member moves by K (y - H u_i)
    let x = ens.perturbations();
    let h = obs.h_matrix(30);
    let k = oracle_gain(&(&x * x.transpose()), &h, obs.r_diag());
    for i in 0..5 {
        let u = ens.matrix().column(i).into_owned();
        let ua = &u + &k * (obs.values() - &h * &u);
        assert!((base.matrix().column(i) - ua).amax() < 1e-10);
    }
}

#[test]
fn gc_compact_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mesh = line(41);
    let ens = random_ensemble(&mut rng, 80, 5);
    let obs = ObservationSet::new(&mesh, vec![[3.1]], vec![2.0], vec![0.1]).unwrap();
    let pos = coefficient_positions(&mesh);
    for s in [LocalizationScheme::GcMod { l: 1.0 }, LocalizationScheme::GcObs { l: 1.0 }] {
        let out = enkf_gc_update(&ens, &obs, &mesh, &s).unwrap();
        let mut moved_near = false;
        for (i, p) in pos.iter().enumerate() {
            let delta = (out.matrix().row(i) - ens.matrix().row(i)).amax();
            // H spans the observed element, so allow one element width
            if (p[0] - 3.1).abs() > 2.6 {
                assert_eq!(delta, 0.0, "coefficient at {} moved", p[0]);
            } else if delta > 0.0 {
                moved_near = true;
            }
        }
        assert!(moved_near);
    }
}

#[test]
fn mt_radii_worked_example() {
    // two elements, d = 1 and d = 8 at the outer vertices
    let mesh = line(3);
    let metric = MetricField::new(&mesh, vec![SMat::diag([1.0]), SMat::diag([8.0])]).unwrap();
    let r = mt_radii(&mesh, &metric, 1.0, 8.0);
    assert!((r[0] - (-0.5f64).exp()).abs() < 1e-15);
    assert!((r[2] - (-4.0f64).exp()).abs() < 1e-15);
    assert!(r[0] > r[1] && r[1] > r[2]);
}

proptest! {
    #[test]
    fn mt_radii_bounds(dets in prop::collection::vec(1e-6f64..50.0, 2..30), l in 0.1f64..5.0, c in 0.5f64..20.0) {
        let mesh = line(dets.len() + 1);
        let metric = MetricField::new(&mesh, dets.iter().map(|&d| SMat::diag([d])).collect()).unwrap();
        let r = mt_radii(&mesh, &metric, l, c);
        let d: Vec<f64> = (0..mesh.n_vertices()).map(|j| metric.vertex_tensor(&mesh, j).det().min(c)).collect();
        let dmin = d.iter().cloned().fold(f64::MAX, f64::min).max(D_MIN_FLOOR);
        for (ri, di) in r.iter().zip(&d) {
            prop_assert!(*ri <= l / 1f64.exp().sqrt() * (1.0 + 1e-15));
            prop_assert!(*ri >= l * (-c / (2.0 * dmin)).exp() * (1.0 - 1e-15));
            prop_assert_eq!(*ri, l * (-di / (2.0 * dmin)).exp());
        }
    }

    #[test]
    fn gaspari_cohn_range_and_monotone(a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (cl, ch) = (gaspari_cohn(lo), gaspari_cohn(hi));
        prop_assert!((0.0..=1.0).contains(&cl) && (0.0..=1.0).contains(&ch));
        prop_assert!(ch <= cl + 1e-15);
    }

    #[test]
    fn inflation_keeps_mean(seed in any::<u64>(), rho in 1.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ens = random_ensemble(&mut rng, 12, 4);
        let out = inflate(&ens, rho).unwrap();
        prop_assert!((out.mean() - ens.mean()).amax() < 1e-14);
        prop_assert_eq!(out.n_members(), 4);
    }
}
