//! A procedurally generated stand-in for the licensed hand model assets.

use ndarray::{Array2, Array3};
use rand::Rng;

use super::data::{
    HandModelData, NUM_BETAS, NUM_COARSE_VERTICES, NUM_JOINTS, NUM_KINEMATIC_JOINTS, NUM_VERTICES,
};

/// Kinematic parents in the usual right-hand ordering: wrist, then index,
/// middle, pinky, ring and thumb chains of three joints each.
const PARENTS: [i64; NUM_KINEMATIC_JOINTS] = [-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 0, 10, 11, 0, 13, 14];

struct Finger {
    base: [f64; 3],
    dir: [f64; 3],
    lengths: [f64; 3],
    radius: f64,
}

fn fingers() -> [Finger; 5] {
    let up = [0.0, 1.0, 0.0];
    let thumb = {
        let n = (0.7f64 * 0.7 + 0.7 * 0.7).sqrt();
        [-0.7 / n, 0.7 / n, 0.0]
    };
    [
        Finger { base: [-22.0, 85.0, 0.0], dir: up, lengths: [40.0, 25.0, 20.0], radius: 8.5 },
        Finger { base: [-2.0, 90.0, 0.0], dir: up, lengths: [45.0, 28.0, 22.0], radius: 9.0 },
        Finger { base: [36.0, 76.0, 0.0], dir: up, lengths: [32.0, 20.0, 18.0], radius: 7.5 },
        Finger { base: [18.0, 86.0, 0.0], dir: up, lengths: [42.0, 26.0, 20.0], radius: 8.5 },
        Finger { base: [-32.0, 22.0, 0.0], dir: thumb, lengths: [35.0, 30.0, 25.0], radius: 10.0 },
    ]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = sub(b, a);
    let t = (dot(sub(p, a), ab) / dot(ab, ab)).clamp(0.0, 1.0);
    norm(sub(p, add(a, scale(ab, t))))
}

/// Skeleton joint positions (16 kinematic + 5 tips) and the bone segment each
/// kinematic joint drives.
fn skeleton() -> (Vec<[f64; 3]>, Vec<([f64; 3], [f64; 3])>) {
    let mut joints = vec![[0.0; 3]; NUM_JOINTS];
    let mut bones = vec![([0.0; 3], [0.0; 3]); NUM_KINEMATIC_JOINTS];
    bones[0] = ([0.0, 0.0, 0.0], [0.0, 70.0, 0.0]);
    for (f, finger) in fingers().iter().enumerate() {
        let mut p = finger.base;
        for seg in 0..3 {
            let j = 1 + 3 * f + seg;
            joints[j] = p;
            let q = add(p, scale(finger.dir, finger.lengths[seg]));
            bones[j] = (p, q);
            p = q;
        }
        joints[NUM_KINEMATIC_JOINTS + f] = p;
    }
    (joints, bones)
}

/// Builds a structurally valid random hand model (millimetres, wrist at the origin).
///
/// Equal RNG states give identical models.
pub fn make_desk_model<R: Rng + ?Sized>(rng: &mut R) -> HandModelData {
    let (joints, bones) = skeleton();
    let fingers = fingers();

    // Surface samples: 298 on the palm slab, 32 per phalanx.
    let mut verts: Vec<[f64; 3]> = Vec::with_capacity(NUM_VERTICES);
    let palm_vertices = NUM_VERTICES - 5 * 3 * 32;
    let (x0, x1, y0, y1, half_t) = (-40.0, 45.0, 0.0, 85.0, 11.0);
    while verts.len() < palm_vertices {
        let x = rng.random_range(x0..x1);
        let y = rng.random_range(y0..y1);
        let face = rng.random_range(0..10);
        let p = match face {
            0..=3 => [x, y, half_t],
            4..=7 => [x, y, -half_t],
            8 => [if rng.random_bool(0.5) { x0 } else { x1 }, y, rng.random_range(-half_t..half_t)],
            _ => [x, if rng.random_bool(0.5) { y0 } else { y1 }, rng.random_range(-half_t..half_t)],
        };
        verts.push(p);
    }
    for finger in &fingers {
        let d = finger.dir;
        let u = {
            let c = cross(d, [0.0, 0.0, 1.0]);
            scale(c, 1.0 / norm(c))
        };
        let w = cross(d, u);
        let mut start = finger.base;
        for &len in &finger.lengths {
            for _ in 0..32 {
                let s = rng.random_range(0.0..1.0);
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                let r = finger.radius * rng.random_range(0.9..1.1);
                let axis = add(start, scale(d, s * len));
                verts.push(add(axis, add(scale(u, r * phi.cos()), scale(w, r * phi.sin()))));
            }
            start = add(start, scale(d, len));
        }
    }
    debug_assert_eq!(verts.len(), NUM_VERTICES);
    let template = Array2::from_shape_fn((NUM_VERTICES, 3), |(i, c)| verts[i][c]);

    // Skinning: Gaussian falloff of bone distance, top 3 bones, normalised.
    let sigma = 9.0;
    let mut skin = Array2::zeros((NUM_VERTICES, NUM_KINEMATIC_JOINTS));
    for (i, v) in verts.iter().enumerate() {
        let mut w: Vec<(usize, f64)> = bones
            .iter()
            .enumerate()
            .map(|(j, (a, b))| {
                let d = segment_distance(*v, *a, *b);
                (j, (-(d * d) / (2.0 * sigma * sigma)).exp() + 1e-12)
            })
            .collect();
        w.sort_by(|a, b| b.1.total_cmp(&a.1));
        w.truncate(3);
        let total: f64 = w.iter().map(|x| x.1).sum();
        for (j, x) in w {
            skin[[i, j]] = x / total;
        }
    }

    // Shape directions: smooth linear fields plus a little per-vertex noise.
    let mut shape_dirs = Array3::zeros((NUM_VERTICES, 3, NUM_BETAS));
    for k in 0..NUM_BETAS {
        let a: Vec<f64> = (0..9).map(|_| rng.random_range(-0.03..0.03)).collect();
        for (i, v) in verts.iter().enumerate() {
            for c in 0..3 {
                let lin = a[3 * c] * v[0] + a[3 * c + 1] * v[1] + a[3 * c + 2] * v[2];
                shape_dirs[[i, c, k]] = lin + rng.random_range(-0.2..0.2);
            }
        }
    }
    let pose_dirs = Array3::from_shape_fn((NUM_VERTICES, 3, 9 * (NUM_KINEMATIC_JOINTS - 1)), |_| {
        rng.random_range(-0.3..0.3)
    });

    // Joint regressor rows: convex weights over the 6 template vertices nearest each joint.
    let mut j_reg = Array2::zeros((NUM_JOINTS, NUM_VERTICES));
    for (k, jp) in joints.iter().enumerate() {
        let mut order: Vec<(usize, f64)> = verts.iter().enumerate().map(|(i, v)| (i, norm(sub(*v, *jp)))).collect();
        order.sort_by(|a, b| a.1.total_cmp(&b.1));
        let raw: Vec<f64> = (0..6).map(|_| rng.random_range(0.5..1.5)).collect();
        let total: f64 = raw.iter().sum();
        for (n, &(i, _)) in order.iter().take(6).enumerate() {
            j_reg[[k, i]] = raw[n] / total;
        }
    }

    let coarse_index = farthest_point_sampling(&verts, NUM_COARSE_VERTICES);
    let upsample_matrix = nearest_convex_weights(&verts, &coarse_index, 3);

    HandModelData {
        template,
        shape_dirs,
        pose_dirs,
        skin_weights: skin,
        kinematic_tree: PARENTS.to_vec(),
        j_reg,
        coarse_index,
        upsample_matrix,
    }
}

/// Greedy farthest-point sampling seeded at vertex 0.
pub(crate) fn farthest_point_sampling(points: &[[f64; 3]], count: usize) -> Vec<usize> {
    let mut chosen = vec![0usize];
    let mut dist: Vec<f64> = points.iter().map(|p| norm(sub(*p, points[0]))).collect();
    while chosen.len() < count {
        let (next, _) = dist
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            dist[i] = dist[i].min(norm(sub(*p, points[next])));
        }
    }
    chosen
}

/// Inverse-distance weights over the `k` nearest selected points; a selected
/// point maps to itself exactly.
pub(crate) fn nearest_convex_weights(points: &[[f64; 3]], selected: &[usize], k: usize) -> Array2<f64> {
    let mut m = Array2::zeros((points.len(), selected.len()));
    for (i, p) in points.iter().enumerate() {
        let mut d: Vec<(usize, f64)> = selected
            .iter()
            .enumerate()
            .map(|(c, &v)| (c, norm(sub(*p, points[v]))))
            .collect();
        d.sort_by(|a, b| a.1.total_cmp(&b.1));
        if d[0].1 == 0.0 {
            m[[i, d[0].0]] = 1.0;
            continue;
        }
        let inv: Vec<f64> = d.iter().take(k).map(|x| 1.0 / x.1).collect();
        let total: f64 = inv.iter().sum();
        for (n, &(c, _)) in d.iter().take(k).enumerate() {
            m[[i, c]] = inv[n] / total;
        }
    }
    m
}
