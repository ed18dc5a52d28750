//! Test polygons with holes and sampling helpers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uasplan::geomap::{Polygon, PolygonMap};

pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
    Polygon::new(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
}

pub fn regular(cx: f64, cy: f64, r: f64, n: usize, phase: f64) -> Polygon {
    Polygon::new(
        (0..n)
            .map(|k| {
                let a = phase + std::f64::consts::TAU * k as f64 / n as f64;
                [cx + r * a.cos(), cy + r * a.sin()]
            })
            .collect(),
    )
}

fn star(n: usize, r_out: f64, r_in: f64) -> Polygon {
    Polygon::new(
        (0..2 * n)
            .map(|k| {
                let r = if k % 2 == 0 { r_out } else { r_in };
                let a = std::f64::consts::PI * k as f64 / n as f64;
                [r * a.cos(), r * a.sin()]
            })
            .collect(),
    )
}

/// Radial polygon with random radii, plus random disjoint convex holes.
fn random_map(seed: u64) -> PolygonMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(8..18);
    let boundary = Polygon::new(
        (0..n)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / n as f64;
                let r = rng.gen_range(6.0..10.0);
                [r * a.cos(), r * a.sin()]
            })
            .collect(),
    );
    let mut map = PolygonMap { boundary, ..Default::default() };
    let want = rng.gen_range(2..5);
    let mut tries = 0;
    while map.obstacles.len() + map.noise_regions.len() < want && tries < 500 {
        tries += 1;
        let hole = regular(
            rng.gen_range(-4.0..4.0),
            rng.gen_range(-4.0..4.0),
            rng.gen_range(0.5..1.5),
            rng.gen_range(3..7),
            rng.gen_range(0.0..std::f64::consts::TAU),
        );
        let mut trial = map.clone();
        if rng.gen_bool(0.5) {
            trial.obstacles.push(hole);
        } else {
            trial.noise_regions.push(hole);
        }
        if trial.validate().is_ok() {
            map = trial;
        }
    }
    map
}

/// Ten polygons with holes covering convex, non-convex and star-shaped outlines.
pub fn test_maps() -> Vec<PolygonMap> {
    let mut maps = vec![
        PolygonMap {
            boundary: rect(0.0, 0.0, 1.0, 1.0),
            obstacles: vec![rect(0.25, 0.25, 0.75, 0.75)],
            ..Default::default()
        },
        PolygonMap {
            boundary: rect(0.0, 0.0, 10.0, 3.0),
            obstacles: vec![rect(1.0, 1.0, 2.0, 2.0), rect(4.0, 1.0, 5.0, 2.0), rect(7.0, 1.0, 8.0, 2.0)],
            ..Default::default()
        },
        PolygonMap {
            boundary: Polygon::new(vec![[0.0, 0.0], [6.0, 0.0], [6.0, 2.0], [2.0, 2.0], [2.0, 6.0], [0.0, 6.0]]),
            obstacles: vec![Polygon::new(vec![[0.5, 0.5], [1.5, 0.5], [1.0, 1.5]])],
            noise_regions: vec![rect(3.0, 0.5, 5.0, 1.5)],
            ..Default::default()
        },
        PolygonMap {
            boundary: star(5, 10.0, 5.0),
            obstacles: vec![regular(0.0, 0.0, 1.5, 6, 0.1)],
            ..Default::default()
        },
        PolygonMap {
            boundary: Polygon::new(vec![
                [0.0, 0.0],
                [9.0, 0.0],
                [9.0, 6.0],
                [6.0, 6.0],
                [6.0, 2.0],
                [3.0, 2.0],
                [3.0, 6.0],
                [0.0, 6.0],
            ]),
            obstacles: vec![rect(1.0, 3.0, 2.0, 5.0), rect(7.0, 3.0, 8.0, 5.0)],
            noise_regions: vec![rect(4.0, 0.5, 5.0, 1.5)],
            ..Default::default()
        },
    ];
    maps.extend((0..5).map(|s| random_map(1000 + s)));
    maps
}

/// Whether `p` is in the traversable area (free or noise) away from edges.
pub fn in_traversable_interior(map: &PolygonMap, p: [f64; 2], margin: f64) -> bool {
    map.boundary.contains_interior(p, margin)
        && !map.obstacles.iter().any(|o| o.contains(p, margin))
        && !map.noise_regions.iter().any(|o| o.contains(p, margin) && !o.contains_interior(p, margin))
}

pub fn in_obstacle_interior(map: &PolygonMap, p: [f64; 2], margin: f64) -> bool {
    map.obstacles.iter().any(|o| o.contains_interior(p, margin))
}

pub fn sample_in_bounds(rng: &mut ChaCha8Rng, poly: &Polygon) -> [f64; 2] {
    let (lo, hi) = poly.bounds();
    [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])]
}
