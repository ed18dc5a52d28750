//! Convex decomposition of a polygon with holes.
//!
//! Holes are bridged into the outer boundary, the resulting weakly simple
//! polygon is ear-clipped, and triangles are merged greedily across
//! diagonals whose removal keeps both endpoints convex (Hertel–Mehlhorn).

use std::collections::{HashMap, HashSet};

use super::polygon::{dist2, on_segment, orient, segments_cross, Point, Polygon};
use super::MapError;

/// Partition `outer` minus `holes` into convex counter-clockwise polygons.
///
/// Holes must lie strictly inside `outer` and be pairwise disjoint.
pub fn convex_decompose(outer: &Polygon, holes: &[Polygon]) -> Result<Vec<Polygon>, MapError> {
    let scale = outer.scale();
    let tol = 1e-9 * scale.max(1.0);
    let outer = outer.clone().to_ccw().without_collinear(1e-12 * scale);
    let holes: Vec<Polygon> = holes.iter().map(|h| h.clone().to_cw().without_collinear(1e-12 * scale)).collect();

    let mut pts: Vec<Point> = outer.vertices.clone();
    let mut boundary_edges = HashSet::new();
    let ring_edges = |start: usize, n: usize, set: &mut HashSet<(usize, usize)>| {
        for i in 0..n {
            let a = start + i;
            let b = start + (i + 1) % n;
            set.insert((a.min(b), a.max(b)));
        }
    };
    ring_edges(0, outer.len(), &mut boundary_edges);
    let mut hole_ids: Vec<Vec<usize>> = Vec::new();
    for h in &holes {
        let start = pts.len();
        pts.extend(h.vertices.iter().copied());
        ring_edges(start, h.len(), &mut boundary_edges);
        hole_ids.push((start..start + h.len()).collect());
    }

    let chain = bridge_holes(&pts, &outer, &holes, hole_ids, tol)?;
    let triangles = ear_clip(&pts, chain, tol)?;
    let cells = hertel_mehlhorn(&pts, triangles, &boundary_edges, tol);
    Ok(cells
        .into_iter()
        .map(|ids| Polygon::new(ids.iter().map(|&i| pts[i]).collect()).without_collinear(1e-12 * scale))
        .collect())
}

/// Splice every hole into the outer ring through a bridge edge from the
/// hole's maximal-x vertex to the nearest visible vertex of the current ring.
fn bridge_holes(
    pts: &[Point],
    outer: &Polygon,
    holes: &[Polygon],
    hole_ids: Vec<Vec<usize>>,
    tol: f64,
) -> Result<Vec<usize>, MapError> {
    let mut chain: Vec<usize> = (0..outer.len()).collect();
    let mut order: Vec<usize> = (0..holes.len()).collect();
    let max_x = |h: &Vec<usize>| {
        h.iter()
            .copied()
            .max_by(|&a, &b| pts[a][0].total_cmp(&pts[b][0]).then(pts[b][1].total_cmp(&pts[a][1])))
            .unwrap()
    };
    order.sort_by(|&a, &b| {
        let pa = pts[max_x(&hole_ids[a])];
        let pb = pts[max_x(&hole_ids[b])];
        pb[0].total_cmp(&pa[0]).then(pa[1].total_cmp(&pb[1])).then(a.cmp(&b))
    });
    let mut merged = vec![false; holes.len()];
    for &hi in &order {
        let ids = &hole_ids[hi];
        let m = max_x(ids);
        let pm = pts[m];
        // Segments that a bridge must not cross: the current ring plus every
        // hole not yet spliced in.
        let mut blockers: Vec<(usize, usize)> =
            (0..chain.len()).map(|i| (chain[i], chain[(i + 1) % chain.len()])).collect();
        for (k, h) in hole_ids.iter().enumerate() {
            if !merged[k] {
                blockers.extend((0..h.len()).map(|i| (h[i], h[(i + 1) % h.len()])));
            }
        }
        let mut candidates: Vec<usize> = chain.clone();
        candidates.sort_by(|&a, &b| dist2(pts[a], pm).total_cmp(&dist2(pts[b], pm)).then(a.cmp(&b)));
        candidates.dedup();
        let mut bridge = None;
        for v in candidates {
            let pv = pts[v];
            if dist2(pv, pm) <= tol * tol {
                continue;
            }
            let crosses = blockers.iter().any(|&(a, b)| {
                let (pa, pb) = (pts[a], pts[b]);
                let shares = [pa, pb].iter().any(|&q| dist2(q, pm) <= tol * tol || dist2(q, pv) <= tol * tol);
                !shares && segments_cross(pm, pv, pa, pb)
            });
            if crosses {
                continue;
            }
            let through_vertex =
                pts.iter().any(|&q| dist2(q, pm) > tol * tol && dist2(q, pv) > tol * tol && on_segment(q, pm, pv, tol));
            if through_vertex {
                continue;
            }
            let mid = [(pm[0] + pv[0]) / 2.0, (pm[1] + pv[1]) / 2.0];
            if !outer.contains_interior(mid, tol) || holes.iter().any(|h| h.contains(mid, tol)) {
                continue;
            }
            // Pick the ring occurrence of v whose interior wedge holds the bridge.
            let dir = [pm[0] - pv[0], pm[1] - pv[1]];
            let n = chain.len();
            let pos = (0..n).filter(|&i| chain[i] == v).find(|&i| {
                let a = pts[chain[(i + 1) % n]];
                let b = pts[chain[(i + n - 1) % n]];
                in_wedge([a[0] - pv[0], a[1] - pv[1]], [b[0] - pv[0], b[1] - pv[1]], dir)
            });
            if let Some(pos) = pos {
                bridge = Some(pos);
                break;
            }
        }
        let pos = bridge.ok_or_else(|| MapError::InvalidPolygon("no visible bridge for hole".into()))?;
        let start = ids.iter().position(|&i| i == m).unwrap();
        let mut splice = Vec::with_capacity(ids.len() + 2);
        for k in 0..=ids.len() {
            splice.push(ids[(start + k) % ids.len()]);
        }
        splice.push(chain[pos]);
        chain.splice(pos + 1..pos + 1, splice);
        merged[hi] = true;
    }
    Ok(chain)
}

/// Whether direction `d` lies in the counter-clockwise wedge from `a` to `b`.
fn in_wedge(a: Point, b: Point, d: Point) -> bool {
    let cr = |u: Point, v: Point| u[0] * v[1] - u[1] * v[0];
    if cr(a, b) > 0.0 {
        cr(a, d) > 0.0 && cr(d, b) > 0.0
    } else {
        !(cr(b, d) >= 0.0 && cr(d, a) >= 0.0)
    }
}

fn ear_clip(pts: &[Point], chain: Vec<usize>, tol: f64) -> Result<Vec<[usize; 3]>, MapError> {
    let mut ring = chain;
    let mut tris = Vec::new();
    let area_tol = tol * tol;
    while ring.len() > 3 {
        let n = ring.len();
        let mut clipped = false;
        for i in 0..n {
            let (a, b, c) = (ring[(i + n - 1) % n], ring[i], ring[(i + 1) % n]);
            let (pa, pb, pc) = (pts[a], pts[b], pts[c]);
            let o = orient(pa, pb, pc);
            if o.abs() <= area_tol * 1e3 {
                // Degenerate spike or collinear vertex: drop it without a triangle
                // only if it does not fold back on itself across another vertex.
                ring.remove(i);
                clipped = true;
                break;
            }
            if o < 0.0 {
                continue;
            }
            let blocked = ring.iter().any(|&k| {
                let q = pts[k];
                if [pa, pb, pc].iter().any(|&r| dist2(q, r) <= tol * tol) {
                    return false;
                }
                orient(pa, pb, q) >= -tol * 1e-3 && orient(pb, pc, q) >= -tol * 1e-3 && orient(pc, pa, q) >= -tol * 1e-3
            });
            if blocked {
                continue;
            }
            tris.push([a, b, c]);
            ring.remove(i);
            clipped = true;
            break;
        }
        if !clipped {
            // Numerical corner case: clip the most convex vertex.
            let n = ring.len();
            let best = (0..n)
                .max_by(|&x, &y| {
                    let ox = orient(pts[ring[(x + n - 1) % n]], pts[ring[x]], pts[ring[(x + 1) % n]]);
                    let oy = orient(pts[ring[(y + n - 1) % n]], pts[ring[y]], pts[ring[(y + 1) % n]]);
                    ox.total_cmp(&oy)
                })
                .unwrap();
            let (a, b, c) = (ring[(best + n - 1) % n], ring[best], ring[(best + 1) % n]);
            if orient(pts[a], pts[b], pts[c]) <= 0.0 {
                return Err(MapError::InvalidPolygon("triangulation failed".into()));
            }
            tris.push([a, b, c]);
            ring.remove(best);
        }
    }
    if ring.len() == 3 && orient(pts[ring[0]], pts[ring[1]], pts[ring[2]]) > area_tol * 1e3 {
        tris.push([ring[0], ring[1], ring[2]]);
    }
    Ok(tris)
}

fn hertel_mehlhorn(
    pts: &[Point],
    triangles: Vec<[usize; 3]>,
    boundary: &HashSet<(usize, usize)>,
    tol: f64,
) -> Vec<Vec<usize>> {
    let mut polys: Vec<Option<Vec<usize>>> = triangles.into_iter().map(|t| Some(t.to_vec())).collect();
    let convex_at = |poly: &[usize], i: usize| {
        let n = poly.len();
        orient(pts[poly[(i + n - 1) % n]], pts[poly[i]], pts[poly[(i + 1) % n]]) >= -tol * 1e-3
    };
    loop {
        let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
        for (pi, p) in polys.iter().enumerate() {
            if let Some(p) = p {
                for i in 0..p.len() {
                    owner.insert((p[i], p[(i + 1) % p.len()]), pi);
                }
            }
        }
        let mut merged_any = false;
        'outer: for pi in 0..polys.len() {
            let Some(p) = polys[pi].clone() else { continue };
            for i in 0..p.len() {
                let (a, b) = (p[i], p[(i + 1) % p.len()]);
                if boundary.contains(&(a.min(b), a.max(b))) {
                    continue;
                }
                let Some(&qi) = owner.get(&(b, a)) else { continue };
                if qi == pi {
                    continue;
                }
                let q = polys[qi].clone().unwrap();
                let merged = merge_on_edge(&p, i, &q, a, b);
                let ia = merged.iter().position(|&v| v == a).unwrap();
                let ib = merged.iter().position(|&v| v == b).unwrap();
                if convex_at(&merged, ia) && convex_at(&merged, ib) {
                    polys[pi] = Some(merged);
                    polys[qi] = None;
                    merged_any = true;
                    break 'outer;
                }
            }
        }
        if !merged_any {
            break;
        }
    }
    polys.into_iter().flatten().collect()
}

/// Union of `p` and `q` across the shared edge p[i] = a → b (q holds b → a).
fn merge_on_edge(p: &[usize], i: usize, q: &[usize], a: usize, b: usize) -> Vec<usize> {
    let np = p.len();
    let mut out = Vec::with_capacity(np + q.len() - 2);
    // Walk p from b around to a.
    for k in 1..=np {
        out.push(p[(i + k) % np]);
    }
    let nq = q.len();
    let ja = (0..nq).find(|&j| q[j] == b && q[(j + 1) % nq] == a).unwrap() + 1;
    // Then q strictly after a, up to (excluding) b.
    for k in 1..nq - 1 {
        out.push(q[(ja + k) % nq]);
    }
    out
}
