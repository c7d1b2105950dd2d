//! Geodesic and quasi-geodesic combinatorics on ball graphs: exhaustive
//! geodesic enumeration, budgeted quasi-geodesic search, nearest-point
//! projections, and the projection-concatenation construction checked at
//! r = 8*delta + 8.
//!
//! A path is r-quasi-geodesic when every subpath from index i to index j
//! satisfies j - i <= d(p_i, p_j) + r; geodesics are exactly the r = 0 case.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::budget::Budget;
use crate::error::{Result, RoamkitError};
use crate::graph::{BallGraph, UNREACHED};

/// An injective path: consecutive vertices adjacent in the owning graph.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Path {
    vertices: Vec<u32>,
}

impl Path {
    pub fn new(ball: &BallGraph, vertices: Vec<u32>) -> Result<Path> {
        if vertices.is_empty() {
            return Err(RoamkitError::Unsupported("empty path".into()));
        }
        for w in vertices.windows(2) {
            let mut adjacent = false;
            ball.for_each_neighbor(w[0], |u| adjacent |= u == w[1]);
            if !adjacent {
                return Err(RoamkitError::Unsupported(format!(
                    "path vertices {} and {} are not adjacent",
                    w[0], w[1]
                )));
            }
        }
        let mut seen = vertices.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != vertices.len() {
            return Err(RoamkitError::Unsupported(
                "path repeats a vertex".into(),
            ));
        }
        Ok(Path { vertices })
    }

    pub(crate) fn from_raw(vertices: Vec<u32>) -> Path {
        Path { vertices }
    }

    pub fn vertices(&self) -> &[u32] {
        &self.vertices
    }

    /// Number of edges.
    pub fn len(&self) -> usize {
        self.vertices.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn start(&self) -> u32 {
        self.vertices[0]
    }

    pub fn end(&self) -> u32 {
        *self.vertices.last().unwrap()
    }

    pub fn contains(&self, v: u32) -> bool {
        self.vertices.contains(&v)
    }

    pub fn reversed(&self) -> Path {
        let mut v = self.vertices.clone();
        v.reverse();
        Path { vertices: v }
    }
}

/// Enumeration result; `certified` marks endpoints inside the safe core and
/// `complete` that no budget cut the search short.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathSet {
    pub paths: Vec<Path>,
    pub certified: bool,
    pub complete: bool,
}

/// Verdict of the subpath check at a given r; on failure, the first
/// violating index pair (scanning i ascending, then j).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuasiGeodesicWitness {
    pub r: u32,
    pub ok: bool,
    pub violating_subpath: Option<(usize, usize)>,
}

/// Distance oracle with per-source row caching. Plain free balls use the
/// exact word-metric formula instead of rows.
pub struct DistOracle<'a> {
    ball: &'a BallGraph,
    rows: std::cell::RefCell<HashMap<u32, Arc<Vec<u16>>>>,
    free_plain: bool,
}

impl<'a> DistOracle<'a> {
    pub fn new(ball: &'a BallGraph) -> DistOracle<'a> {
        let free_plain = ball.cone_families() == 0 && ball.is_free_tree();
        DistOracle {
            ball,
            rows: std::cell::RefCell::new(HashMap::new()),
            free_plain,
        }
    }

    pub fn row(&self, src: u32) -> Arc<Vec<u16>> {
        if let Some(r) = self.rows.borrow().get(&src) {
            return r.clone();
        }
        let r = Arc::new(self.ball.bfs_row(src));
        self.rows.borrow_mut().insert(src, r.clone());
        r
    }

    pub fn d(&self, u: u32, v: u32) -> u32 {
        if u == v {
            return 0;
        }
        if self.free_plain {
            let wu = self.ball.word_of(u).expect("ball vertex");
            let wv = self.ball.word_of(v).expect("ball vertex");
            return wu.inverse().concat(&wv).free_reduced().len() as u32;
        }
        let r = self.row(u.min(v));
        r[u.max(v) as usize] as u32
    }
}

/// All geodesics x -> y: DFS descending the distance-to-y row.
pub fn enumerate_geodesics(
    ball: &BallGraph,
    x: u32,
    y: u32,
    budget: &Budget,
) -> Result<PathSet> {
    let row_y = ball.bfs_row(y);
    if row_y[x as usize] == UNREACHED {
        return Err(RoamkitError::NotInBall(format!(
            "no path between {x} and {y}"
        )));
    }
    let core = ball.core_mask();
    let certified = core[x as usize] && core[y as usize];
    let mut paths = Vec::new();
    let mut complete = true;
    let mut budget_left = budget.max_paths;
    // Stack of (vertex, sorted remaining-neighbor cursor list).
    let mut prefix = vec![x];
    let mut choices: Vec<(Vec<u32>, usize)> = Vec::new();
    let nexts = |v: u32| -> Vec<u32> {
        let dv = row_y[v as usize];
        let mut out = Vec::new();
        ball.for_each_neighbor(v, |u| {
            if row_y[u as usize] + 1 == dv {
                out.push(u);
            }
        });
        out.sort_unstable();
        out.dedup();
        out
    };
    choices.push((nexts(x), 0));
    if x == y {
        return Ok(PathSet {
            paths: vec![Path::from_raw(vec![x])],
            certified,
            complete: true,
        });
    }
    while let Some((list, cursor)) = choices.last_mut() {
        if *cursor >= list.len() {
            choices.pop();
            prefix.pop();
            continue;
        }
        let v = list[*cursor];
        *cursor += 1;
        if v == y {
            if budget_left == 0 {
                complete = false;
                break;
            }
            budget_left -= 1;
            let mut p = prefix.clone();
            p.push(v);
            paths.push(Path::from_raw(p));
            continue;
        }
        prefix.push(v);
        choices.push((nexts(v), 0));
    }
    Ok(PathSet {
        paths,
        certified,
        complete,
    })
}

/// All injective paths x -> y of length <= max_len whose every subpath
/// satisfies the r-quasi-geodesic inequality. The enumeration is budgeted;
/// exceeding the node budget returns the paths found with complete = false.
pub fn enumerate_quasi_geodesics(
    ball: &BallGraph,
    x: u32,
    y: u32,
    r: u32,
    max_len: u32,
    budget: &Budget,
) -> Result<PathSet> {
    let oracle = DistOracle::new(ball);
    let d_xy = oracle.d(x, y);
    let cap = max_len.min(d_xy + r) as usize;
    let core = ball.core_mask();
    let certified = core[x as usize] && core[y as usize];
    let mut paths = Vec::new();
    let mut nodes = 0u64;
    let mut complete = true;

    let mut prefix = vec![x];
    let mut on_path = vec![false; ball.n_vertices() as usize];
    on_path[x as usize] = true;
    let sorted_neighbors = |v: u32| -> Vec<u32> {
        let mut out = Vec::new();
        ball.for_each_neighbor(v, |u| out.push(u));
        out.sort_unstable();
        out.dedup();
        out
    };
    let mut choices: Vec<(Vec<u32>, usize)> = vec![(sorted_neighbors(x), 0)];
    if x == y {
        return Ok(PathSet {
            paths: vec![Path::from_raw(vec![x])],
            certified,
            complete: true,
        });
    }
    'outer: while let Some((list, cursor)) = choices.last_mut() {
        if *cursor >= list.len() {
            choices.pop();
            let v = prefix.pop().unwrap();
            on_path[v as usize] = false;
            continue;
        }
        let v = list[*cursor];
        *cursor += 1;
        if on_path[v as usize] {
            continue;
        }
        nodes += 1;
        if nodes > budget.max_qg_nodes_per_query {
            complete = false;
            break 'outer;
        }
        let k = prefix.len(); // index of v once appended
        if k > cap {
            continue;
        }
        // Subpath condition against every earlier index, and reachability:
        // the remaining distance must fit in the length cap.
        let mut ok = true;
        for (i, &p) in prefix.iter().enumerate() {
            if (k - i) as u32 > oracle.d(p, v) + r {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        if (k as u32) + oracle.d(v, y) > cap as u32 {
            continue;
        }
        if v == y {
            let mut p = prefix.clone();
            p.push(v);
            paths.push(Path::from_raw(p));
            continue;
        }
        prefix.push(v);
        on_path[v as usize] = true;
        choices.push((sorted_neighbors(v), 0));
    }
    paths.sort();
    Ok(PathSet {
        paths,
        certified,
        complete,
    })
}

/// Existence probe: is there an r-quasi-geodesic x -> y that (a) avoids
/// every vertex with `avoid[v]` set and (b) if `must_meet` is given, meets
/// at least one vertex with that flag? Same search as the enumeration but
/// stops at the first hit. Returns (found, complete).
pub fn quasi_geodesic_exists(
    ball: &BallGraph,
    x: u32,
    y: u32,
    r: u32,
    avoid: Option<&[bool]>,
    must_meet: Option<&[bool]>,
    budget: &Budget,
) -> Result<(bool, bool)> {
    if let Some(a) = avoid {
        if a[x as usize] || a[y as usize] {
            return Ok((false, true));
        }
    }
    let oracle = DistOracle::new(ball);
    let d_xy = oracle.d(x, y);
    let cap = (d_xy + r) as usize;
    let meets = |v: u32| must_meet.map_or(true, |m| m[v as usize]);
    if x == y {
        return Ok((meets(x), true));
    }
    let mut nodes = 0u64;
    let mut complete = true;
    let mut prefix = vec![x];
    let mut prefix_met = vec![meets(x)];
    let mut on_path = vec![false; ball.n_vertices() as usize];
    on_path[x as usize] = true;
    let sorted_neighbors = |v: u32| -> Vec<u32> {
        let mut out = Vec::new();
        ball.for_each_neighbor(v, |u| out.push(u));
        out.sort_unstable();
        out.dedup();
        out
    };
    let mut choices: Vec<(Vec<u32>, usize)> = vec![(sorted_neighbors(x), 0)];
    let mut found = false;
    'outer: while let Some((list, cursor)) = choices.last_mut() {
        if *cursor >= list.len() {
            choices.pop();
            let v = prefix.pop().unwrap();
            prefix_met.pop();
            on_path[v as usize] = false;
            continue;
        }
        let v = list[*cursor];
        *cursor += 1;
        if on_path[v as usize] {
            continue;
        }
        if let Some(a) = avoid {
            if a[v as usize] {
                continue;
            }
        }
        nodes += 1;
        if nodes > budget.max_qg_nodes_per_query {
            complete = false;
            break 'outer;
        }
        let k = prefix.len();
        if k > cap {
            continue;
        }
        let mut ok = true;
        for (i, &p) in prefix.iter().enumerate() {
            if (k - i) as u32 > oracle.d(p, v) + r {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        if (k as u32) + oracle.d(v, y) > cap as u32 {
            continue;
        }
        let met = *prefix_met.last().unwrap() || meets(v);
        if v == y {
            if met {
                found = true;
                break 'outer;
            }
            continue;
        }
        prefix.push(v);
        prefix_met.push(met);
        on_path[v as usize] = true;
        choices.push((sorted_neighbors(v), 0));
    }
    Ok((found, complete))
}

/// Full subpath check of a path at tolerance r.
pub fn is_quasi_geodesic(ball: &BallGraph, path: &Path, r: u32) -> QuasiGeodesicWitness {
    let oracle = DistOracle::new(ball);
    let vs = path.vertices();
    for i in 0..vs.len() {
        for j in (i + 1)..vs.len() {
            if (j - i) as u32 > oracle.d(vs[i], vs[j]) + r {
                return QuasiGeodesicWitness {
                    r,
                    ok: false,
                    violating_subpath: Some((i, j)),
                };
            }
        }
    }
    QuasiGeodesicWitness {
        r,
        ok: true,
        violating_subpath: None,
    }
}

/// All minimizers of d(z, .) over the path, plus the canonical pick
/// (least vertex id), so downstream certificates are reproducible.
pub fn project(ball: &BallGraph, z: u32, alpha: &Path) -> (Vec<u32>, u32) {
    let row = ball.bfs_row(z);
    let best = alpha
        .vertices()
        .iter()
        .map(|&v| row[v as usize])
        .min()
        .expect("nonempty path");
    let mut mins: Vec<u32> = alpha
        .vertices()
        .iter()
        .copied()
        .filter(|&v| row[v as usize] == best)
        .collect();
    mins.sort_unstable();
    let canonical = mins[0];
    (mins, canonical)
}

/// Lexicographically least geodesic between two vertices (all geodesics
/// have equal length, so greedy least-next-vertex is the lex minimum).
pub fn lex_least_geodesic(ball: &BallGraph, x: u32, y: u32) -> Result<Path> {
    let row_y = ball.bfs_row(y);
    if row_y[x as usize] == UNREACHED {
        return Err(RoamkitError::NotInBall(format!(
            "no path between {x} and {y}"
        )));
    }
    let mut vs = vec![x];
    let mut cur = x;
    while cur != y {
        let dv = row_y[cur as usize];
        let mut best: Option<u32> = None;
        ball.for_each_neighbor(cur, |u| {
            if row_y[u as usize] + 1 == dv {
                best = Some(best.map_or(u, |b| b.min(u)));
            }
        });
        cur = best.expect("distance row admits a descent step");
        vs.push(cur);
    }
    Ok(Path::from_raw(vs))
}

/// One leg of a projection concatenation with its check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConcatLeg {
    pub path: Path,
    pub witness: QuasiGeodesicWitness,
}

/// Joins the lex-least geodesic beta from z to its canonical projection z0
/// on alpha with the two halves of alpha split at z0, and checks each
/// concatenation at r = 8*delta_hat + 8. A failing witness signals that
/// delta_hat underestimates the geometry, not a construction bug. When z0
/// is an endpoint of alpha one leg degenerates and a single path returns.
pub fn concatenate_at_projection(
    ball: &BallGraph,
    z: u32,
    alpha: &Path,
    delta_hat: u32,
) -> Result<Vec<ConcatLeg>> {
    let (_, z0) = project(ball, z, alpha);
    let r0 = 8 * delta_hat + 8;
    let beta = lex_least_geodesic(ball, z, z0)?;
    let pos = alpha
        .vertices()
        .iter()
        .position(|&v| v == z0)
        .expect("projection lies on alpha");

    let mut legs = Vec::new();
    // Toward the start of alpha, then toward the end; a side of zero
    // edges is dropped.
    for side in [true, false] {
        let half: Vec<u32> = if side {
            alpha.vertices()[..=pos].iter().rev().copied().collect()
        } else {
            alpha.vertices()[pos..].to_vec()
        };
        if half.len() <= 1 {
            continue;
        }
        // beta (z..z0) then half (z0..corner), dropping duplicate z0;
        // if the two overlap elsewhere the composite is not injective and
        // the lemma's conclusion is checked on the trimmed path.
        let mut vs = beta.vertices().to_vec();
        vs.extend_from_slice(&half[1..]);
        let mut seen = std::collections::HashSet::new();
        let injective = vs.iter().all(|v| seen.insert(*v));
        if !injective {
            // Keep the prefix up to first repeat; still a valid path and
            // still a meaningful witness.
            let mut seen = std::collections::HashSet::new();
            let mut trimmed = Vec::new();
            for &v in &vs {
                if !seen.insert(v) {
                    break;
                }
                trimmed.push(v);
            }
            vs = trimmed;
        }
        let p = Path::from_raw(vs);
        let witness = is_quasi_geodesic(ball, &p, r0);
        legs.push(ConcatLeg { path: p, witness });
    }
    if legs.is_empty() {
        // z0 is both endpoints: alpha is a single vertex; beta alone.
        let witness = is_quasi_geodesic(ball, &beta, r0);
        legs.push(ConcatLeg {
            path: beta,
            witness,
        });
    }
    Ok(legs)
}

/// A geodesic triangle: three corners and one chosen geodesic side each.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeodesicTriangle {
    pub corners: [u32; 3],
    pub sides: [Path; 3],
}

impl GeodesicTriangle {
    /// Validates that each side is a geodesic between its corners.
    pub fn new(ball: &BallGraph, sides: [Path; 3]) -> Result<GeodesicTriangle> {
        let corners = [sides[0].start(), sides[0].end(), sides[1].end()];
        let want = [
            (corners[0], corners[1]),
            (corners[1], corners[2]),
            (corners[2], corners[0]),
        ];
        let oracle = DistOracle::new(ball);
        for (s, (a, b)) in sides.iter().zip(want.iter()) {
            if s.start() != *a || s.end() != *b {
                return Err(RoamkitError::Unsupported(
                    "triangle sides do not share corners cyclically".into(),
                ));
            }
            if s.len() as u32 != oracle.d(*a, *b) {
                return Err(RoamkitError::Unsupported(
                    "triangle side is not a geodesic".into(),
                ));
            }
        }
        Ok(GeodesicTriangle {
            corners,
            sides,
        })
    }
}

/// Max over sides of max over side vertices of the distance to the union
/// of the other two sides.
pub fn thinness_defect(ball: &BallGraph, t: &GeodesicTriangle) -> u32 {
    let mut worst = 0u32;
    for i in 0..3 {
        let mut others: Vec<u32> = Vec::new();
        for j in 0..3 {
            if j != i {
                others.extend_from_slice(t.sides[j].vertices());
            }
        }
        others.sort_unstable();
        others.dedup();
        let row = ball.multi_source_row(&others);
        for &v in t.sides[i].vertices() {
            worst = worst.max(row[v as usize] as u32);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presentation::GroupPresentation;
    use std::sync::OnceLock;

    fn f2() -> GroupPresentation {
        static P: OnceLock<GroupPresentation> = OnceLock::new();
        P.get_or_init(|| GroupPresentation::new(&['a', 'b'], &[], None).unwrap())
            .clone()
    }

    fn z2() -> GroupPresentation {
        static P: OnceLock<GroupPresentation> = OnceLock::new();
        P.get_or_init(|| GroupPresentation::new(&['x', 'y'], &["xyXY"], None).unwrap())
            .clone()
    }

    fn coned_f2(radius: u32) -> BallGraph {
        let p = f2();
        let peri = vec![vec![p.parse_word("a").unwrap()]];
        BallGraph::coned(&p, radius, &peri, &Budget::default()).unwrap()
    }

    #[test]
    fn tree_geodesics_are_unique() {
        let b = Budget::default();
        let g = BallGraph::plain(&f2(), 4, &b).unwrap();
        let x = g.id_of_word(&f2().parse_word("ab").unwrap()).unwrap();
        let set = enumerate_geodesics(&g, g.center(), x, &b).unwrap();
        assert_eq!(set.paths.len(), 1);
        assert!(set.certified && set.complete);
        assert_eq!(set.paths[0].len(), 2);
        // Identity case.
        let same = enumerate_geodesics(&g, x, x, &b).unwrap();
        assert_eq!(same.paths.len(), 1);
        assert_eq!(same.paths[0].len(), 0);
    }

    #[test]
    fn coned_square_has_two_geodesics() {
        let b = Budget::default();
        let g = coned_f2(8);
        let p = f2();
        let aa = g.id_of_word(&p.parse_word("aa").unwrap()).unwrap();
        let set = enumerate_geodesics(&g, g.center(), aa, &b).unwrap();
        // e -> a -> a^2 and e -> cone -> a^2.
        assert_eq!(set.paths.len(), 2);
        assert!(set.paths.iter().all(|q| q.len() == 2));
        let via_cone = set
            .paths
            .iter()
            .filter(|q| q.vertices().iter().any(|&v| g.is_cone(v)))
            .count();
        assert_eq!(via_cone, 1);
    }

    #[test]
    fn zero_quasi_geodesics_match_geodesics() {
        let b = Budget::default();
        let g = coned_f2(6);
        let p = f2();
        for target in ["aa", "ab", "ba", "bb"] {
            let t = g.id_of_word(&p.parse_word(target).unwrap()).unwrap();
            let geo = enumerate_geodesics(&g, g.center(), t, &b).unwrap();
            let d = g.distance(g.center(), t).unwrap();
            let qg = enumerate_quasi_geodesics(&g, g.center(), t, 0, d, &b).unwrap();
            let mut a = geo.paths.clone();
            a.sort();
            assert_eq!(a, qg.paths, "target {target}");
        }
    }

    #[test]
    fn quasi_geodesics_match_brute_force() {
        // Independent oracle: enumerate all injective paths by unpruned DFS
        // and filter by the subpath inequality.
        let b = Budget::default();
        let g = coned_f2(4);
        let p = f2();
        let t = g.id_of_word(&p.parse_word("aa").unwrap()).unwrap();
        let r = 2u32;
        let d = g.distance(g.center(), t).unwrap();
        let cap = (d + r) as usize;

        let oracle = DistOracle::new(&g);
        let mut brute: Vec<Path> = Vec::new();
        let mut stack = vec![(vec![g.center()], vec![false; g.n_vertices() as usize])];
        stack[0].1[g.center() as usize] = true;
        while let Some((pref, mask)) = stack.pop() {
            let last = *pref.last().unwrap();
            if last == t {
                let vs = pref.clone();
                let good = (0..vs.len()).all(|i| {
                    ((i + 1)..vs.len())
                        .all(|j| (j - i) as u32 <= oracle.d(vs[i], vs[j]) + r)
                });
                if good {
                    brute.push(Path::from_raw(vs));
                }
                continue;
            }
            if pref.len() > cap {
                continue;
            }
            let mut nbrs = Vec::new();
            g.for_each_neighbor(last, |u| nbrs.push(u));
            nbrs.sort_unstable();
            nbrs.dedup();
            for u in nbrs {
                if !mask[u as usize] {
                    let mut m2 = mask.clone();
                    m2[u as usize] = true;
                    let mut p2 = pref.clone();
                    p2.push(u);
                    stack.push((p2, m2));
                }
            }
        }
        brute.sort();

        let fast = enumerate_quasi_geodesics(&g, g.center(), t, r, d + r, &b).unwrap();
        assert!(fast.complete);
        assert_eq!(fast.paths, brute);
        assert!(!fast.paths.is_empty());
    }

    #[test]
    fn projection_tree_example() {
        let b = Budget::default();
        let g = BallGraph::plain(&f2(), 4, &b).unwrap();
        let p = f2();
        // alpha: a^-2 .. a^2 along the a-axis.
        let ids: Vec<u32> = ["AA", "A", "e", "a", "aa"]
            .iter()
            .map(|w| g.id_of_word(&p.parse_word(w).unwrap()).unwrap())
            .collect();
        let alpha = Path::new(&g, ids).unwrap();
        let z = g.id_of_word(&p.parse_word("ba").unwrap()).unwrap();
        let (mins, canon) = project(&g, z, &alpha);
        assert_eq!(mins, vec![g.center()]);
        assert_eq!(canon, g.center());
        // A point of alpha projects to itself.
        let za = g.id_of_word(&p.parse_word("a").unwrap()).unwrap();
        let (mins, canon) = project(&g, za, &alpha);
        assert_eq!(mins, vec![za]);
        assert_eq!(canon, za);
    }

    #[test]
    fn concatenation_in_tree_is_geodesic() {
        let b = Budget::default();
        let g = BallGraph::plain(&f2(), 6, &b).unwrap();
        let p = f2();
        let ids: Vec<u32> = ["AA", "A", "e", "a", "aa"]
            .iter()
            .map(|w| g.id_of_word(&p.parse_word(w).unwrap()).unwrap())
            .collect();
        let alpha = Path::new(&g, ids).unwrap();
        let z = g.id_of_word(&p.parse_word("bba").unwrap()).unwrap();
        let legs = concatenate_at_projection(&g, z, &alpha, 0).unwrap();
        assert_eq!(legs.len(), 2);
        for leg in &legs {
            assert!(leg.witness.ok, "trees concatenate geodesically");
        }
    }

    #[test]
    fn violating_path_reports_indices() {
        // Injective paths in trees are geodesics, so a genuine violation
        // needs a cycle: walk three sides of a lattice square, ending next
        // to the start.
        let b = Budget::default();
        let g = BallGraph::plain(&z2(), 2, &b).unwrap();
        let p = z2();
        let ids: Vec<u32> = ["x", "xy", "y", "e"]
            .iter()
            .map(|w| g.id_of_word(&p.parse_word(w).unwrap()).unwrap())
            .collect();
        let path = Path::new(&g, ids).unwrap();
        let w = is_quasi_geodesic(&g, &path, 0);
        assert!(!w.ok);
        // Subpaths (0,2) and (1,3) have length 2 = distance; the full
        // span has length 3 against distance 1.
        assert_eq!(w.violating_subpath, Some((0, 3)));
        assert!(!is_quasi_geodesic(&g, &path, 1).ok);
        assert!(is_quasi_geodesic(&g, &path, 2).ok);
    }

    #[test]
    fn thinness_matches_delta_on_small_grid() {
        // Cross-module consistency: the exhaustive triangle scan equals
        // estimate_delta's exact value on the radius-2 lattice ball.
        let b = Budget::default();
        let g = BallGraph::plain(&z2(), 2, &b).unwrap();
        let d = g.estimate_delta(3, &b).unwrap();
        assert!(d.exact);
        let n = g.n_vertices();
        let mut worst = 0u32;
        for x in 0..n {
            for y in (x + 1)..n {
                for z in (y + 1)..n {
                    let sxy = enumerate_geodesics(&g, x, y, &b).unwrap();
                    let syz = enumerate_geodesics(&g, y, z, &b).unwrap();
                    let szx = enumerate_geodesics(&g, z, x, &b).unwrap();
                    for a in &sxy.paths {
                        for bb in &syz.paths {
                            for c in &szx.paths {
                                let t = GeodesicTriangle::new(
                                    &g,
                                    [a.clone(), bb.clone(), c.clone()],
                                )
                                .unwrap();
                                worst = worst.max(thinness_defect(&g, &t));
                            }
                        }
                    }
                }
            }
        }
        assert_eq!(worst, d.delta_ball);
        assert!(worst > 0, "the grid is not a tree");
    }

    #[test]
    fn existence_probe_agrees_with_enumeration() {
        let b = Budget::default();
        let g = coned_f2(6);
        let p = f2();
        let t = g.id_of_word(&p.parse_word("aaa").unwrap()).unwrap();
        let avoid_vertex = g.id_of_word(&p.parse_word("a").unwrap()).unwrap();
        let mut avoid = vec![false; g.n_vertices() as usize];
        avoid[avoid_vertex as usize] = true;
        let (found, complete) =
            quasi_geodesic_exists(&g, g.center(), t, 0, Some(&avoid), None, &b).unwrap();
        assert!(complete);
        // Geodesics e -> a^3 can pass through the cone instead of a.
        assert!(found);
        let set = enumerate_geodesics(&g, g.center(), t, &b).unwrap();
        let any_avoiding = set
            .paths
            .iter()
            .any(|q| !q.contains(avoid_vertex));
        assert_eq!(found, any_avoiding);
    }
}
