//! Helpers shared by the integration tests. The oracles here deliberately
//! avoid the library's tracer: mirroring, plane hits and polygon tests are
//! re-derived from scratch.
#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtinterp::geometry::{Facet, Scene, Vec3};

pub const F28: f64 = 28e9;
pub const C: f64 = 299_792_458.0;

pub fn lambda() -> f64 {
    C / F28
}

pub fn gamma(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.2 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Two unit vectors completing `n` to a right-handed frame.
pub fn tangents(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = n.cross(&helper).normalize();
    let v = n.cross(&u);
    (u, v)
}

/// Square of half-width `half` on the plane `n·x = offset`, wound so the
/// facet normal is `n`.
pub fn square(n: Vec3, offset: f64, half: f64, g: Complex64) -> Facet {
    let (u, v) = tangents(&n);
    let c = n * offset;
    Facet::new(
        vec![
            c - u * half - v * half,
            c + u * half - v * half,
            c + u * half + v * half,
            c - u * half + v * half,
        ],
        g,
    )
    .unwrap()
}

/// Effectively infinite plane for metre-scale geometry.
pub fn infinite_plane(n: Vec3, offset: f64, g: Complex64) -> Facet {
    square(n, offset, 1e5, g)
}

/// Axis-aligned box walls (no roof or floor) with outward normals.
pub fn box_walls(min: Vec3, max: Vec3, g: Complex64) -> Vec<Facet> {
    let (a, b) = (min, max);
    let corners = [
        Vec3::new(a.x, a.y, 0.0),
        Vec3::new(b.x, a.y, 0.0),
        Vec3::new(b.x, b.y, 0.0),
        Vec3::new(a.x, b.y, 0.0),
    ];
    (0..4)
        .map(|i| {
            let p = corners[i];
            let q = corners[(i + 1) % 4];
            Facet::new(
                vec![
                    Vec3::new(p.x, p.y, a.z),
                    Vec3::new(q.x, q.y, a.z),
                    Vec3::new(q.x, q.y, b.z),
                    Vec3::new(p.x, p.y, b.z),
                ],
                g,
            )
            .unwrap()
        })
        .collect()
}

pub struct RandomScene {
    pub scene: Scene,
    /// Box footprints (min, max) that receivers must avoid.
    pub boxes: Vec<(Vec3, Vec3)>,
}

/// Ground plus a few boxes and one tilted panel, all inside ±20 m.
pub fn random_scene(rng: &mut ChaCha8Rng) -> RandomScene {
    let mut facets = vec![square(Vec3::z(), 0.0, 60.0, gamma(rng.gen_range(-0.9..-0.3)))];
    let mut boxes = Vec::new();
    for _ in 0..rng.gen_range(1..=3) {
        let c = Vec3::new(rng.gen_range(-12.0..12.0), rng.gen_range(-12.0..12.0), 0.0);
        let h = Vec3::new(rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0), 0.0);
        let lo = Vec3::new(c.x - h.x, c.y - h.y, 0.0);
        let hi = Vec3::new(c.x + h.x, c.y + h.y, rng.gen_range(2.0..10.0));
        facets.extend(box_walls(
            lo,
            hi,
            Complex64::from_polar(rng.gen_range(0.3..0.95), rng.gen_range(-3.0..3.0)),
        ));
        boxes.push((lo, hi));
    }
    let n = Vec3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-0.3..0.3),
    )
    .normalize();
    let (u, v) = tangents(&n);
    let c = n * -rng.gen_range(14.0..20.0) + Vec3::z() * 4.0;
    facets.push(
        Facet::new(
            vec![
                c - u * 8.0 - v * 4.0,
                c + u * 8.0 - v * 4.0,
                c + u * 8.0 + v * 4.0,
                c - u * 8.0 + v * 4.0,
            ],
            gamma(0.7),
        )
        .unwrap(),
    );
    RandomScene {
        scene: Scene::new(facets),
        boxes,
    }
}

impl RandomScene {
    /// A point in `[-10, 10]² × [0.5, 6]` clear of every box footprint.
    pub fn free_point(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        loop {
            let p = Vec3::new(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(0.5..6.0),
            );
            let blocked = self
                .boxes
                .iter()
                .any(|(lo, hi)| p.x > lo.x - 0.05 && p.x < hi.x + 0.05 && p.y > lo.y - 0.05 && p.y < hi.y + 0.05);
            if !blocked {
                return p;
            }
        }
    }
}

// ------------------------------------------------------------ brute force

pub fn mirror(p: &Vec3, f: &Facet) -> Vec3 {
    let n = f.normal();
    let d = n.dot(p) - n.dot(&f.vertices()[0]);
    p - n * (2.0 * d)
}

/// Parameter along `a → b` where the line meets the facet plane.
fn plane_hit(a: &Vec3, b: &Vec3, f: &Facet) -> Option<f64> {
    let n = f.normal();
    let da = n.dot(a) - n.dot(&f.vertices()[0]);
    let db = n.dot(b) - n.dot(&f.vertices()[0]);
    if (da - db).abs() < 1e-15 {
        return None;
    }
    Some(da / (da - db))
}

/// Point-in-polygon by half-plane tests against each edge
/// (facets in these tests are convex). `strict` excludes a 1e-9 rim.
fn inside(f: &Facet, p: &Vec3, strict: bool) -> bool {
    let v = f.vertices();
    let n = f.normal();
    let rim = if strict { 1e-9 } else { -1e-9 };
    (0..v.len()).all(|i| {
        let a = v[i];
        let b = v[(i + 1) % v.len()];
        let edge = b - a;
        let inward = n.cross(&edge).normalize();
        inward.dot(&(p - a)) > rim
    })
}

fn segment_blocked(scene: &Scene, a: &Vec3, b: &Vec3, skip: &[usize]) -> bool {
    scene.facets.iter().enumerate().any(|(i, f)| {
        if skip.contains(&i) {
            return false;
        }
        match plane_hit(a, b, f) {
            Some(t) if t > 1e-12 && t < 1.0 - 1e-12 => inside(f, &(a + (b - a) * t), false),
            _ => false,
        }
    })
}

pub struct BrutePath {
    pub sequence: Vec<usize>,
    pub length: f64,
    pub gain: Complex64,
}

/// Enumerates every facet sequence up to `max_order`, mirrors `tx` through
/// it and validates the unfolded route segment by segment.
pub fn brute_force_paths(scene: &Scene, tx: &Vec3, rx: &Vec3, max_order: usize) -> Vec<BrutePath> {
    let lam = lambda();
    let n = scene.facets.len();
    let mut out = Vec::new();
    let mut seqs: Vec<Vec<usize>> = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_order {
        let mut next = Vec::new();
        for s in &frontier {
            for f in 0..n {
                if s.last() != Some(&f) {
                    let mut t: Vec<usize> = s.clone();
                    t.push(f);
                    next.push(t);
                }
            }
        }
        seqs.extend(next.iter().cloned());
        frontier = next;
    }
    'seq: for s in seqs {
        let mut images = vec![*tx];
        for &f in &s {
            let last = *images.last().unwrap();
            images.push(mirror(&last, &scene.facets[f]));
        }
        // walk back from rx towards successive images
        let mut points = vec![Vec3::zeros(); s.len()];
        let mut target = *rx;
        for k in (0..s.len()).rev() {
            let f = &scene.facets[s[k]];
            let img = images[k + 1];
            let Some(t) = plane_hit(&target, &img, f) else {
                continue 'seq;
            };
            if !(t > 1e-12 && t < 1.0 - 1e-12) {
                continue 'seq;
            }
            let p = target + (img - target) * t;
            if !inside(f, &p, true) {
                continue 'seq;
            }
            points[k] = p;
            target = p;
        }
        let mut route = vec![*tx];
        route.extend(points.iter().copied());
        route.push(*rx);
        for k in 0..route.len() - 1 {
            let mut skip = Vec::new();
            if k > 0 {
                skip.push(s[k - 1]);
            }
            if k < s.len() {
                skip.push(s[k]);
            }
            if segment_blocked(scene, &route[k], &route[k + 1], &skip) {
                continue 'seq;
            }
        }
        let length: f64 = route.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        let refl: Complex64 = s
            .iter()
            .map(|&f| match scene.facets[f].material() {
                rtinterp::geometry::Material::Constant(g) => g,
                other => panic!("brute force only handles constant materials, got {other:?}"),
            })
            .product();
        let gain = refl
            * (lam / (4.0 * std::f64::consts::PI * length))
            * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * length / lam);
        out.push(BrutePath {
            sequence: s,
            length,
            gain,
        });
    }
    out
}

// ------------------------------------------------------------ grids

use rtinterp::geometry::Tracer;
use rtinterp::interpolation::{GainCorrection, InterpolationParams, Method};
use rtinterp::pathdata::ReferenceGrid;

/// Square lattice `[x0, x0 + (n−1)s] × [y0, y0 + (m−1)s]` at height `z`.
pub fn lattice(x0: f64, y0: f64, s: f64, n: usize, m: usize, z: f64) -> Vec<Vec3> {
    let mut pts = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            pts.push(Vec3::new(x0 + i as f64 * s, y0 + j as f64 * s, z));
        }
    }
    pts
}

pub fn trace_grid(scene: &Scene, tx: &Vec3, points: &[Vec3], max_order: usize, spacing: Option<f64>) -> ReferenceGrid {
    let tracer = Tracer::new(scene, F28, max_order).unwrap();
    let sets = points.iter().map(|p| tracer.trace(tx, p).unwrap()).collect();
    ReferenceGrid::new(*tx, sets, spacing).unwrap()
}

pub fn params(d_th: f64, sigma: f64, p_th: f64, method: Method) -> InterpolationParams {
    InterpolationParams {
        d_th,
        sigma,
        p_th,
        cluster_epsilon: 1e-2,
        method,
        correction: GainCorrection::FresnelCorrected,
        wavelength: lambda(),
        speed_of_light: C,
    }
}

// ------------------------------------------------------------ persistence

use rtinterp::geometry::{PathRecord, PathSet};

fn any_f64(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    // mix of magnitudes, including subnormal-adjacent and exact integers
    match rng.gen_range(0..4) {
        0 => rng.gen_range(-scale..scale),
        1 => rng.gen_range(-scale..scale) * 1e-13,
        2 => rng.gen_range(-100i32..100) as f64,
        _ => f64::from_bits(rng.gen::<u64>() >> 2) * if rng.gen() { 1.0 } else { -1.0 },
    }
}

fn any_point(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(any_f64(rng, 50.0), any_f64(rng, 50.0), any_f64(rng, 50.0))
}

fn any_record(rng: &mut ChaCha8Rng) -> PathRecord {
    let k = rng.gen_range(0..=3);
    PathRecord {
        gain: Complex64::new(any_f64(rng, 1e-4), any_f64(rng, 1e-4)),
        delay: rng.gen_range(1e-9..1e-6),
        aoa_az: rng.gen_range(-PI..PI),
        aoa_zen: rng.gen_range(0.0..PI),
        aod_az: rng.gen_range(-PI..PI),
        aod_zen: rng.gen_range(0.0..PI),
        reflection_points: (0..k).map(|_| any_point(rng)).collect(),
        facet_ids: if rng.gen_bool(0.5) {
            Some((0..k).map(|_| rng.gen_range(0..500)).collect())
        } else {
            None
        },
    }
}

/// Grid with awkward floats: tiny, huge, integral and near-subnormal.
pub fn random_grid(seed: u64) -> ReferenceGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tx = any_point(&mut rng);
    let n = rng.gen_range(0..12);
    let mut refs: Vec<PathSet> = Vec::new();
    while refs.len() < n {
        let rx = any_point(&mut rng);
        if refs.iter().any(|r| r.rx == rx) {
            continue;
        }
        let paths = (0..rng.gen_range(0..5)).map(|_| any_record(&mut rng)).collect();
        refs.push(PathSet { tx, rx, paths });
    }
    let spacing = if rng.gen() {
        Some(rng.gen_range(0.5..10.0))
    } else {
        None
    };
    ReferenceGrid::new(tx, refs, spacing).unwrap()
}
