mod support;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skinweights::geom::Affine3;
use skinweights::hollowdist::compute_all;
use skinweights::rigcore::{Mesh, Rig, Skeleton};
use skinweights::skinlab::{
    distance_error, forward_kinematics, l1_norm, lbs_deform, precision_recall, sample_poses, topk_coverage, Pose,
    Rotation,
};
use skinweights::synthgen::{gen_character, SynthConfig};
use skinweights::voxelize::{build_rig_grid, voxelize_surface};
use skinweights::WeightRows;
use support::rigs::{self, joint};

fn close(a: [f64; 3], b: [f64; 3], tol: f64) -> bool {
    (0..3).all(|k| (a[k] - b[k]).abs() <= tol)
}

fn same_affine(a: &Affine3<f64>, b: &Affine3<f64>, tol: f64) -> bool {
    (0..3).all(|i| (0..3).all(|j| (a.linear[i][j] - b.linear[i][j]).abs() <= tol))
        && close(a.translation, b.translation, tol)
}

fn chain() -> Skeleton<f64> {
    Skeleton::new(vec![
        joint("root", [0.0, 0.0, 0.0], None),
        joint("mid", [0.0, 1.0, 0.0], Some(0)),
        joint("end", [0.0, 2.0, 0.0], Some(1)),
    ])
    .unwrap()
}

fn unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n < 1.0 {
            return v.map(|x| x / n);
        }
    }
}

#[test]
fn root_rotation_moves_every_bone_about_the_root() {
    let s = chain();
    let mut pose = Pose::identity(s.bone_count());
    let r = Rotation { axis: [0.0, 0.0, 1.0], angle: 0.4 };
    pose.rotations[0] = r;
    let t = forward_kinematics(&s, &pose).unwrap();
    let expect = Affine3::rotation_about(r.axis, r.angle, [0.0; 3]);
    for tb in &t {
        assert!(same_affine(tb, &expect, 1e-15));
    }
}

#[test]
fn two_rotations_compose_like_hand_built_matrices() {
    let s = chain();
    let mut pose = Pose::identity(3);
    pose.rotations[0] = Rotation { axis: [0.0, 0.0, 1.0], angle: std::f64::consts::FRAC_PI_2 };
    pose.rotations[1] = Rotation { axis: [1.0, 0.0, 0.0], angle: std::f64::consts::FRAC_PI_2 };
    let t = forward_kinematics(&s, &pose).unwrap();
    // end joint (0,2,0): rotate +90° about x through (0,1,0) -> (0,1,1);
    // then +90° about z through the origin -> (-1,0,1)
    assert!(close(t[1].apply([0.0, 2.0, 0.0]), [-1.0, 0.0, 1.0], 1e-15));
    // the mid joint only sees the root rotation
    assert!(close(t[1].apply([0.0, 1.0, 0.0]), [-1.0, 0.0, 0.0], 1e-15));
    assert!(close(t[0].apply([0.0, 1.0, 0.0]), [-1.0, 0.0, 0.0], 1e-15));
    // the helper at the end joint inherits the second bone's transform
    assert!(same_affine(&t[2], &t[1], 1e-15));
}

#[test]
fn shared_rigid_transform_is_reproduced_exactly_enough() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rig = rigs::chain_column(4);
    let b = rig.skeleton.bone_count();
    for _ in 0..10 {
        let rows: Vec<Vec<(usize, f64)>> = (0..rig.mesh.vertex_count())
            .map(|_| {
                let w: Vec<f64> = (0..b).map(|_| rng.random_range(0.0..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.iter().enumerate().map(|(j, x)| (j, x / s)).collect()
            })
            .collect();
        let w = WeightRows::renormalized(rows, b).unwrap();
        let rot = Affine3::rotation_about(unit(&mut rng), rng.random_range(-3.0..3.0), [0.3, -0.2, 0.5]);
        let t = Affine3::translation([0.1, 2.0, -0.7]).compose(&rot);
        let out = lbs_deform(&rig.mesh, &w, &vec![t; b]).unwrap();
        for (v, o) in rig.mesh.vertices.iter().zip(&out) {
            assert!(close(t.apply(*v), *o, 1e-12));
        }
        let ident = lbs_deform(&rig.mesh, &w, &vec![Affine3::identity(); b]).unwrap();
        for (v, o) in rig.mesh.vertices.iter().zip(&ident) {
            assert!(close(*v, *o, 1e-15));
        }
    }
}

#[test]
fn single_bone_translation() {
    let mesh = Mesh::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
    let w = WeightRows::new(vec![vec![(0, 1.0)]; 3], 1).unwrap();
    let out = lbs_deform(&mesh, &w, &[Affine3::translation([0.5, -1.0, 2.0])]).unwrap();
    assert_eq!(out[1], [1.5, -1.0, 2.0]);
    assert!(lbs_deform(&mesh, &w, &[Affine3::identity(), Affine3::identity()]).is_err());
}

#[test]
fn sampled_poses_follow_the_protocol() {
    let s = Skeleton::new(
        (0..9).map(|j| joint(&format!("j{j}"), [0.0, j as f64, 0.0], if j == 0 { None } else { Some(j - 1) })).collect(),
    )
    .unwrap();
    // 8 real bones + 1 helper
    assert_eq!(s.bone_count(), 9);
    let poses: Vec<Pose<f64>> = sample_poses(&s, 1200, 3).unwrap();
    assert_eq!(poses, sample_poses(&s, 1200, 3).unwrap());
    let mut angles = Vec::new();
    for p in &poses {
        let posed: Vec<&Rotation<f64>> = p.rotations.iter().filter(|r| r.angle != 0.0).collect();
        assert_eq!(posed.len(), 3);
        for r in posed {
            let n = (r.axis[0].powi(2) + r.axis[1].powi(2) + r.axis[2].powi(2)).sqrt();
            assert!((n - 1.0).abs() < 1e-9);
            angles.push(r.angle);
        }
    }
    assert!(angles.len() >= 3600);
    let mean = angles.iter().sum::<f64>() / angles.len() as f64;
    let std = (angles.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / angles.len() as f64).sqrt();
    assert!((std.to_degrees() - 25.0).abs() <= 0.05 * 25.0, "std {}°", std.to_degrees());
}

fn random_sparse(rng: &mut ChaCha8Rng, n: usize, b: usize) -> WeightRows {
    let rows = (0..n)
        .map(|_| {
            let mut row: Vec<(usize, f64)> = Vec::new();
            for j in 0..b {
                if rng.random_bool(0.4) {
                    row.push((j, if rng.random_bool(0.2) { 5e-5 } else { rng.random_range(0.01..1.0) }));
                }
            }
            if row.is_empty() {
                row.push((rng.random_range(0..b), 1.0));
            }
            let s: f64 = row.iter().map(|e| e.1).sum();
            row.iter().map(|&(j, w)| (j, w / s)).collect()
        })
        .collect();
    WeightRows::renormalized(rows, b).unwrap()
}

#[test]
fn precision_recall_match_set_recount() {
    use std::collections::BTreeSet;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let (n, b) = (rng.random_range(1..30), rng.random_range(1..8));
        let (p, g) = (random_sparse(&mut rng, n, b), random_sparse(&mut rng, n, b));
        let set = |w: &WeightRows, i: usize| -> BTreeSet<usize> { (0..b).filter(|&j| w.get(i, j) > 1e-4).collect() };
        let (mut hit, mut np, mut ng) = (0, 0, 0);
        for i in 0..n {
            let (ps, gs) = (set(&p, i), set(&g, i));
            hit += ps.intersection(&gs).count();
            np += ps.len();
            ng += gs.len();
        }
        let (pr, rc) = precision_recall(&p, &g, 1e-4).unwrap();
        assert_eq!(pr, if np == 0 { 1.0 } else { hit as f64 / np as f64 });
        assert_eq!(rc, if ng == 0 { 1.0 } else { hit as f64 / ng as f64 });
        assert_eq!(precision_recall(&p, &p, 1e-4).unwrap(), (1.0, 1.0));

        let dense = |w: &WeightRows, i: usize| -> Vec<f64> { (0..b).map(|j| w.get(i, j)).collect() };
        let l1 = (0..n).map(|i| dense(&p, i).iter().zip(dense(&g, i)).map(|(a, c)| (a - c).abs()).sum::<f64>()).sum::<f64>()
            / n as f64;
        let got = l1_norm(&p, &g).unwrap();
        assert!((got - l1).abs() < 1e-12 && (0.0..=2.0).contains(&got));
        assert_eq!(l1_norm(&p, &p).unwrap(), 0.0);
    }
}

#[test]
fn threshold_preserving_rescale_keeps_precision_recall() {
    // weights scaled within each row while staying on the same side of τ
    let p = WeightRows::new(vec![vec![(0, 0.6), (1, 0.4)], vec![(2, 1.0)]], 3).unwrap();
    let q = WeightRows::new(vec![vec![(0, 0.9), (1, 0.1)], vec![(2, 1.0)]], 3).unwrap();
    let g = WeightRows::new(vec![vec![(0, 1.0)], vec![(1, 0.5), (2, 0.5)]], 3).unwrap();
    assert_eq!(precision_recall(&p, &g, 1e-4).unwrap(), precision_recall(&q, &g, 1e-4).unwrap());
}

#[test]
fn distance_error_against_direct_deformation() {
    // two-bone cylinder-like column; gt = nearest-bone rigid binding,
    // pred moves 0.2 of each vertex's weight onto the other real bone
    let rig = rigs::chain_column(4);
    let b = rig.skeleton.bone_count();
    let gt_rows: Vec<Vec<(usize, f64)>> =
        rig.mesh.vertices.iter().map(|p| vec![(if p[1] < 0.5 { 0 } else { 1 }, 1.0)]).collect();
    let pred_rows: Vec<Vec<(usize, f64)>> = gt_rows.iter().map(|r| vec![(r[0].0, 0.8), (1 - r[0].0, 0.2)]).collect();
    let gt = WeightRows::new(gt_rows, b).unwrap();
    let pred = WeightRows::new(pred_rows, b).unwrap();

    let mut pose = Pose::identity(b);
    pose.rotations[1] = Rotation { axis: [1.0, 0.0, 0.0], angle: 0.7 };
    let t = forward_kinematics(&rig.skeleton, &pose).unwrap();
    let mut expect = 0.0;
    for v in &rig.mesh.vertices {
        let own = if v[1] < 0.5 { 0 } else { 1 };
        let a = t[own].apply(*v);
        let c = t[1 - own].apply(*v);
        let mixed: [f64; 3] = std::array::from_fn(|k| 0.8 * a[k] + 0.2 * c[k]);
        let d: f64 = (0..3).map(|k| (mixed[k] - a[k]).powi(2)).sum::<f64>().sqrt();
        expect += d;
    }
    expect /= rig.mesh.vertex_count() as f64;
    let got = distance_error(&rig, &pred, &gt, &[pose.clone()]).unwrap();
    assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    assert!(got > 0.0);
    assert_eq!(distance_error(&rig, &gt, &gt, &[pose]).unwrap(), 0.0);
    assert_eq!(distance_error(&rig, &pred, &gt, &[Pose::identity(b)]).unwrap(), 0.0);
}

#[test]
fn coverage_curves_on_synthetic_ground_truth() {
    let cfg = SynthConfig { resolution: 40, ..Default::default() };
    let rigs: Vec<Rig<f64>> = (0..3).map(|s| gen_character(&cfg, s).unwrap()).collect();
    let dists: Vec<_> = rigs
        .iter()
        .map(|r| {
            let mut g = build_rig_grid(r, cfg.resolution).unwrap();
            voxelize_surface(&r.mesh, &mut g);
            compute_all(r, &g).unwrap()
        })
        .collect();
    let pairs: Vec<_> = rigs.iter().zip(&dists).map(|(r, d)| (r.weights.as_ref().unwrap(), d)).collect();
    let kmax = rigs.iter().map(|r| r.skeleton.bone_count()).max().unwrap();
    let c = topk_coverage(&pairs, kmax, 1e-4).unwrap();
    for curve in [&c.mass, &c.influence] {
        assert!(curve.windows(2).all(|w| w[0] <= w[1]));
        assert!(curve.iter().all(|&x| x <= 1.0));
        assert_eq!(curve[kmax - 1], 1.0);
    }
    assert_eq!(c.mass[2], 1.0);
}
