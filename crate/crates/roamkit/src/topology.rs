//! The avoidance-neighborhood calculus: membership in M(x, A) (the set of
//! points y such that no geodesic from x to y meets A), blocking sets
//! V_{r,x}(A) verified against quasi-geodesic probes, edge sets E_r(e), and
//! neighborhood shrinking with an exhaustive containment sweep.
//!
//! Base points may be vertices, cone vertices, or boundary rays; rays are
//! never materialized — they are truncation procedures a^{±N} with a
//! three-verdict stabilization policy (N, N+2, N+4), and results carry an
//! explicit certified/heuristic flag. All verdicts are statements about the
//! finite window; callers compare across radii for window-independence.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::budget::Budget;
use crate::error::{Result, RoamkitError};
use crate::graph::BallGraph;
use crate::paths::{enumerate_quasi_geodesics, quasi_geodesic_exists, DistOracle};
use crate::presentation::Word;

/// A point of the compactified geometry usable as the x in M(x, A).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BasePoint {
    /// A group element, by word.
    Vertex(Word),
    /// The ideal endpoint of the axis of a generator: gen^{+inf} or
    /// gen^{-inf}, realized as truncations gen^{±N}.
    Ray { gen: usize, positive: bool },
    /// The cone vertex of the identity coset in the given peripheral family.
    Cone { family: usize },
}

impl BasePoint {
    /// Short display form: a word, "g+"/"g-" for the ray along generator g,
    /// or "cF" for the identity-coset cone of peripheral family F.
    pub fn describe(&self, p: &crate::presentation::GroupPresentation) -> String {
        match self {
            BasePoint::Vertex(w) => p.format_word(w),
            BasePoint::Ray { gen, positive } => {
                format!("{}{}", p.generators()[*gen], if *positive { '+' } else { '-' })
            }
            BasePoint::Cone { family } => format!("c{family}"),
        }
    }

    /// Parses the display form back; "c" alone means family 0.
    pub fn parse(s: &str, p: &crate::presentation::GroupPresentation) -> Result<BasePoint> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix('c') {
            if rest.is_empty() {
                return Ok(BasePoint::Cone { family: 0 });
            }
            if let Ok(f) = rest.parse::<usize>() {
                return Ok(BasePoint::Cone { family: f });
            }
        }
        if s.len() == 2 && (s.ends_with('+') || s.ends_with('-')) {
            let ch = s.chars().next().expect("len 2");
            if let Some(gen) = p.generators().iter().position(|&g| g == ch) {
                return Ok(BasePoint::Ray {
                    gen,
                    positive: s.ends_with('+'),
                });
            }
        }
        Ok(BasePoint::Vertex(p.parse_word(s)?))
    }
}

/// M(x, A): base point plus the finite avoid set A (given as words).
#[derive(Debug, Clone)]
pub struct NeighborhoodSpec {
    pub base: BasePoint,
    pub avoid: Vec<Word>,
}

/// A verdict with its certification scope. `certified` requires every
/// geodesic consulted to stay in the safe core (base and query in the core)
/// and, for ray bases, three consecutive agreeing truncation verdicts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertifiedBool {
    pub value: bool,
    pub certified: bool,
    pub radius_used: u32,
    pub stabilization: Option<(u32, u32)>,
    pub note: Option<String>,
}

impl CertifiedBool {
    fn plain(value: bool, certified: bool, radius: u32) -> CertifiedBool {
        CertifiedBool {
            value,
            certified,
            radius_used: radius,
            stabilization: None,
            note: None,
        }
    }
}

/// Resolves a base point to a concrete vertex. Ray bases resolve to the
/// truncation gen^{±n}.
pub fn resolve_base(ball: &BallGraph, base: &BasePoint, ray_n: u32) -> Result<u32> {
    match base {
        BasePoint::Vertex(w) => ball
            .id_of_word(w)
            .ok_or_else(|| RoamkitError::NotInBall(ball.presentation().format_word(w))),
        BasePoint::Cone { family } => {
            if *family >= ball.cone_families() {
                return Err(RoamkitError::Unsupported(format!(
                    "no peripheral family {family} in this ball"
                )));
            }
            Ok(ball.cone_of(*family, ball.center()))
        }
        BasePoint::Ray { gen, positive } => {
            let p = ball.presentation();
            let letter = crate::presentation::Letter::new(*gen, !positive);
            let w = Word(vec![letter; ray_n as usize]);
            // A ray only makes sense along an infinite-order generator.
            let r = p.reduce_word(&w);
            if (r.word.len() as u32) < ray_n {
                return Err(RoamkitError::Unsupported(
                    "ray generator has finite order or collapses".into(),
                ));
            }
            ball.id_of_word(&w)
                .ok_or_else(|| RoamkitError::NotInBall(format!("ray truncation {ray_n}")))
        }
    }
}

/// Membership oracle for one M(x, A) with a fixed base vertex: y is in
/// M(x, A) iff every a in A satisfies d(x,a) + d(a,y) > d(x,y), i.e. no
/// geodesic from x to y passes through a. Avoid words outside the ball are
/// dropped: for core pairs they are exactly vacuous (they cannot lie on any
/// in-ball geodesic), which is recorded for certification.
pub struct MSetEvaluator {
    base_id: u32,
    row_base: Arc<Vec<u16>>,
    avoid_ids: Vec<u32>,
    avoid_rows: Vec<Arc<Vec<u16>>>,
    d_base_avoid: Vec<u16>,
    pub dropped_avoid: usize,
}

impl MSetEvaluator {
    pub fn new(
        ball: &BallGraph,
        oracle: &DistOracle<'_>,
        base_id: u32,
        avoid: &[Word],
    ) -> MSetEvaluator {
        let row_base = oracle.row(base_id);
        let mut avoid_ids = Vec::new();
        let mut dropped = 0usize;
        for w in avoid {
            match ball.id_of_word(w) {
                Some(id) => avoid_ids.push(id),
                None => dropped += 1,
            }
        }
        avoid_ids.sort_unstable();
        avoid_ids.dedup();
        let avoid_rows: Vec<Arc<Vec<u16>>> =
            avoid_ids.iter().map(|&a| oracle.row(a)).collect();
        let d_base_avoid = avoid_rows
            .iter()
            .map(|r| r[base_id as usize])
            .collect();
        MSetEvaluator {
            base_id,
            row_base,
            avoid_ids,
            avoid_rows,
            d_base_avoid,
            dropped_avoid: dropped,
        }
    }

    /// Same oracle, avoid set given directly as vertex ids.
    pub fn from_ids(oracle: &DistOracle<'_>, base_id: u32, avoid_ids: &[u32]) -> MSetEvaluator {
        let row_base = oracle.row(base_id);
        let mut ids = avoid_ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let avoid_rows: Vec<Arc<Vec<u16>>> = ids.iter().map(|&a| oracle.row(a)).collect();
        let d_base_avoid = avoid_rows.iter().map(|r| r[base_id as usize]).collect();
        MSetEvaluator {
            base_id,
            row_base,
            avoid_ids: ids,
            avoid_rows,
            d_base_avoid,
            dropped_avoid: 0,
        }
    }

    pub fn base_id(&self) -> u32 {
        self.base_id
    }

    pub fn avoid_ids(&self) -> &[u32] {
        &self.avoid_ids
    }

    /// The base itself is in M(x, A) vacuously (the definition quantifies
    /// over geodesics from x to y; A never contains x).
    pub fn contains(&self, y: u32) -> bool {
        if y == self.base_id {
            return true;
        }
        let dxy = self.row_base[y as usize];
        for (i, row_a) in self.avoid_rows.iter().enumerate() {
            let through = self.d_base_avoid[i] as u32 + row_a[y as usize] as u32;
            if through <= dxy as u32 {
                return false;
            }
        }
        true
    }
}

/// M(x, A) membership with certification bookkeeping; ray bases run the
/// truncation ladder until three verdicts agree.
pub fn in_neighborhood(
    ball: &BallGraph,
    y: u32,
    spec: &NeighborhoodSpec,
    budget: &Budget,
) -> Result<CertifiedBool> {
    let _ = budget;
    let oracle = DistOracle::new(ball);
    let core = ball.core_mask();
    match &spec.base {
        BasePoint::Vertex(_) | BasePoint::Cone { .. } => {
            let base_id = resolve_base(ball, &spec.base, 0)?;
            let eval = MSetEvaluator::new(ball, &oracle, base_id, &spec.avoid);
            let value = eval.contains(y);
            let certified = core[base_id as usize] && core[y as usize];
            let mut out = CertifiedBool::plain(value, certified, ball.radius());
            if y == base_id {
                out.note = Some("membership of the base itself is vacuous".into());
            }
            if eval.dropped_avoid > 0 {
                out.note = Some(format!(
                    "{} avoid vertices outside the ball are vacuous for core pairs",
                    eval.dropped_avoid
                ));
            }
            Ok(out)
        }
        BasePoint::Ray { .. } => {
            let mut verdicts: Vec<(u32, bool)> = Vec::new();
            let max_n = ball.radius();
            let mut n = 1;
            while n <= max_n {
                let base_id = resolve_base(ball, &spec.base, n)?;
                let eval = MSetEvaluator::new(ball, &oracle, base_id, &spec.avoid);
                verdicts.push((n, eval.contains(y)));
                let k = verdicts.len();
                if k >= 3
                    && verdicts[k - 1].1 == verdicts[k - 2].1
                    && verdicts[k - 2].1 == verdicts[k - 3].1
                {
                    let (n0, _) = verdicts[k - 3];
                    let (n2, v) = verdicts[k - 1];
                    let certified = core[y as usize] && n2 <= ball.safe_radius();
                    return Ok(CertifiedBool {
                        value: v,
                        certified,
                        radius_used: ball.radius(),
                        stabilization: Some((n0, n2)),
                        note: if certified {
                            None
                        } else {
                            Some("ray truncations leave the safe core".into())
                        },
                    });
                }
                n += 2;
            }
            let last = verdicts.last().copied().unwrap_or((0, true));
            Ok(CertifiedBool {
                value: last.1,
                certified: false,
                radius_used: ball.radius(),
                stabilization: None,
                note: Some("ray verdict did not stabilize within the ball".into()),
            })
        }
    }
}

/// Verification record for a blocking set: clause 1 (every probe path to a
/// y outside M(x,A) meets V), clause 2 (no probe path to a y in M(x,V)
/// meets A), scanned over the safe core with budgeted searches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VSetVerification {
    pub ok: bool,
    pub complete: bool,
    pub counterexample: Option<(u32, String)>,
    pub ys_checked: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VSet {
    pub vertices: Vec<u32>,
    pub minimized: bool,
    pub verification: Option<VSetVerification>,
    pub note: Option<String>,
}

fn mask_of(n: u32, ids: &[u32]) -> Vec<bool> {
    let mut m = vec![false; n as usize];
    for &v in ids {
        m[v as usize] = true;
    }
    m
}

/// Checks both blocking clauses for candidate set V against quasi-geodesic
/// existence probes over safe-core targets.
pub fn verify_v_set(
    ball: &BallGraph,
    r: u32,
    xv: u32,
    a_ids: &[u32],
    v_ids: &[u32],
    budget: &Budget,
) -> Result<VSetVerification> {
    let oracle = DistOracle::new(ball);
    let eval_a = MSetEvaluator::from_ids(&oracle, xv, a_ids);
    let eval_v = MSetEvaluator::from_ids(&oracle, xv, v_ids);
    let row_x = oracle.row(xv);
    let rows_a: Vec<Arc<Vec<u16>>> = a_ids.iter().map(|&a| oracle.row(a)).collect();
    let n = ball.n_vertices();
    let v_mask = mask_of(n, v_ids);
    let a_mask = mask_of(n, a_ids);
    // Length filter for clause 1: any path from x avoiding V is at least as
    // long as the distance in the V-deleted subgraph; if even that exceeds
    // d(x,y) + r, no probe can succeed.
    let row_del = bfs_avoiding(ball, xv, &v_mask);
    let core = ball.core_mask();
    let mut complete = true;
    let mut ys = 0u64;
    for y in 0..n {
        if !core[y as usize] || y == xv {
            continue;
        }
        ys += 1;
        let cap = row_x[y as usize] as u32 + r;
        if !eval_a.contains(y) && (row_del[y as usize] as u32) <= cap {
            // Clause 1: no r-quasi-geodesic x -> y may avoid V entirely.
            let (found, full) =
                quasi_geodesic_exists(ball, xv, y, r, Some(&v_mask), None, budget)?;
            complete &= full;
            if found {
                return Ok(VSetVerification {
                    ok: false,
                    complete,
                    counterexample: Some((y, "a probe path avoids the blocking set".into())),
                    ys_checked: ys,
                });
            }
        }
        if eval_v.contains(y) {
            // Length filter for clause 2: a path through a costs at least
            // d(x,a) + d(a,y); only detours that fit the cap need a probe.
            let detour_fits = rows_a
                .iter()
                .enumerate()
                .any(|(i, row)| {
                    row[xv as usize] as u32 + row[y as usize] as u32 <= cap
                        && a_ids[i] != y
                })
                || a_mask[y as usize];
            if detour_fits {
                // Clause 2: no r-quasi-geodesic x -> y may meet A.
                let (found, full) =
                    quasi_geodesic_exists(ball, xv, y, r, None, Some(&a_mask), budget)?;
                complete &= full;
                if found {
                    return Ok(VSetVerification {
                        ok: false,
                        complete,
                        counterexample: Some((y, "a probe path to M(x,V) meets A".into())),
                        ys_checked: ys,
                    });
                }
            }
        }
    }
    Ok(VSetVerification {
        ok: true,
        complete,
        counterexample: None,
        ys_checked: ys,
    })
}

/// BFS distances from src in the subgraph with masked vertices deleted
/// (the source itself is never masked out). Unreachable stays at max.
fn bfs_avoiding(ball: &BallGraph, src: u32, deleted: &[bool]) -> Vec<u16> {
    let n = ball.n_vertices() as usize;
    let mut dist = vec![u16::MAX; n];
    dist[src as usize] = 0;
    let mut frontier = vec![src];
    let mut d = 0u16;
    while !frontier.is_empty() {
        d += 1;
        let mut next = Vec::new();
        for &v in &frontier {
            ball.for_each_neighbor(v, |u| {
                if dist[u as usize] == u16::MAX && !deleted[u as usize] {
                    dist[u as usize] = d;
                    next.push(u);
                }
            });
        }
        frontier = next;
    }
    dist
}

/// Probe-verified clause checks are affordable only for small tolerances;
/// beyond this the construction is returned unverified and downstream
/// containment sweeps carry the soundness.
const VERIFIABLE_R: u32 = 4;

/// Builds a blocking set V containing A: points whose removal disconnects A
/// from quasi-geodesic detours. Trees return A itself (paths are unique).
/// Other graphs grow a distance-rho envelope of A until the clause
/// verification passes, then shrink it greedily; when r is too large to
/// probe, the envelope is returned flagged unverified.
pub fn compute_v_set(
    ball: &BallGraph,
    r: u32,
    base: &BasePoint,
    a_ids: &[u32],
    budget: &Budget,
) -> Result<VSet> {
    if a_ids.is_empty() {
        return Ok(VSet {
            vertices: Vec::new(),
            minimized: true,
            verification: None,
            note: Some("empty avoid set".into()),
        });
    }
    let xv = resolve_base(ball, base, ball.safe_radius().max(1))?;
    if a_ids.contains(&xv) {
        return Err(RoamkitError::Unsupported(
            "the base point may not lie in the avoid set".into(),
        ));
    }
    let mut a_sorted = a_ids.to_vec();
    a_sorted.sort_unstable();
    a_sorted.dedup();

    if ball.is_tree() {
        // Unique injective paths: every tolerance collapses to geodesics
        // and A blocks exactly itself.
        return Ok(VSet {
            vertices: a_sorted,
            minimized: true,
            verification: Some(VSetVerification {
                ok: true,
                complete: true,
                counterexample: None,
                ys_checked: 0,
            }),
            note: Some("tree: injective paths are unique, V = A".into()),
        });
    }

    let verifiable = r <= VERIFIABLE_R;
    if verifiable {
        let v = verify_v_set(ball, r, xv, &a_sorted, &a_sorted, budget)?;
        if v.ok && v.complete {
            return Ok(VSet {
                vertices: a_sorted,
                minimized: true,
                verification: Some(v),
                note: None,
            });
        }
    }

    // Envelope escalation: vertices within rho of A (group elements only,
    // never the base itself).
    let row_a = ball.multi_source_row(&a_sorted);
    let mut last_candidate: Vec<u32> = a_sorted.clone();
    let mut last_verification: Option<VSetVerification> = None;
    for rho in 1..=ball.safe_radius().max(1) {
        let mut cand: Vec<u32> = (0..ball.n_vertices())
            .filter(|&v| {
                v != xv && !ball.is_cone(v) && (row_a[v as usize] as u32) <= rho
            })
            .collect();
        for &a in &a_sorted {
            if !cand.contains(&a) {
                cand.push(a);
            }
        }
        cand.sort_unstable();
        cand.dedup();
        if !verifiable {
            return Ok(VSet {
                vertices: cand,
                minimized: false,
                verification: None,
                note: Some(format!(
                    "clause probes skipped at r = {r} > {VERIFIABLE_R}; envelope rho = {rho} returned for downstream containment checks"
                )),
            });
        }
        let ver = verify_v_set(ball, r, xv, &a_sorted, &cand, budget)?;
        let ok = ver.ok;
        last_candidate = cand.clone();
        last_verification = Some(ver);
        if ok {
            // Greedy shrink, far-from-A vertices first.
            let mut keep = cand.clone();
            if keep.len() <= 64 {
                let mut order: Vec<u32> = keep
                    .iter()
                    .copied()
                    .filter(|v| !a_sorted.contains(v))
                    .collect();
                order.sort_unstable_by_key(|&v| {
                    (std::cmp::Reverse(row_a[v as usize]), std::cmp::Reverse(v))
                });
                for v in order {
                    let trial: Vec<u32> =
                        keep.iter().copied().filter(|&u| u != v).collect();
                    let ver = verify_v_set(ball, r, xv, &a_sorted, &trial, budget)?;
                    if ver.ok && ver.complete {
                        keep = trial;
                    }
                }
                let ver = verify_v_set(ball, r, xv, &a_sorted, &keep, budget)?;
                return Ok(VSet {
                    vertices: keep,
                    minimized: true,
                    verification: Some(ver),
                    note: None,
                });
            }
            return Ok(VSet {
                vertices: keep,
                minimized: false,
                verification: last_verification,
                note: Some("set too large to minimize within budget".into()),
            });
        }
    }
    Ok(VSet {
        vertices: last_candidate,
        minimized: false,
        verification: last_verification,
        note: Some("no envelope verified within the safe radius".into()),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeSet {
    pub edges: Vec<(u32, u32)>,
    pub complete: bool,
    pub constraints: u64,
}

/// E_r(e): an edge set met by every enumerated r-quasi-geodesic beta
/// whenever some alpha in the same family contains e, scanned over
/// safe-core pairs and reduced greedily to a small hitting set.
pub fn e_set(
    ball: &BallGraph,
    r: u32,
    e: (u32, u32),
    budget: &Budget,
) -> Result<EdgeSet> {
    let (eu, ev) = (e.0.min(e.1), e.0.max(e.1));
    let core = ball.core_mask();
    let core_ids: Vec<u32> = (0..ball.n_vertices())
        .filter(|&v| core[v as usize])
        .collect();
    let oracle = DistOracle::new(ball);
    let row_u = oracle.row(eu);
    let row_v = oracle.row(ev);
    let mut constraints: Vec<Vec<(u32, u32)>> = Vec::new();
    let mut complete = true;
    for (i, &x) in core_ids.iter().enumerate() {
        let row_x = oracle.row(x);
        for &y in core_ids.iter().skip(i + 1) {
            // The edge can only appear in this family if a path through it
            // fits the length cap d(x,y) + r.
            let through = (row_u[x as usize] as u32 + 1 + row_v[y as usize] as u32)
                .min(row_v[x as usize] as u32 + 1 + row_u[y as usize] as u32);
            if through > row_x[y as usize] as u32 + r {
                continue;
            }
            let set = enumerate_quasi_geodesics(ball, x, y, r, ball.radius() * 2 + r, budget)?;
            complete &= set.complete;
            let has_e = set.paths.iter().any(|p| {
                p.vertices()
                    .windows(2)
                    .any(|w| (w[0].min(w[1]), w[0].max(w[1])) == (eu, ev))
            });
            if !has_e {
                continue;
            }
            for p in &set.paths {
                let edges: Vec<(u32, u32)> = p
                    .vertices()
                    .windows(2)
                    .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
                    .collect();
                constraints.push(edges);
            }
        }
    }
    // Greedy hitting set, always seeded with e itself (it hits every alpha).
    let mut chosen: Vec<(u32, u32)> = vec![(eu, ev)];
    let n_constraints = constraints.len() as u64;
    loop {
        let unhit: Vec<&Vec<(u32, u32)>> = constraints
            .iter()
            .filter(|c| !c.iter().any(|ed| chosen.contains(ed)))
            .collect();
        if unhit.is_empty() {
            break;
        }
        let mut tally: HashMap<(u32, u32), usize> = HashMap::new();
        for c in &unhit {
            for ed in c.iter() {
                *tally.entry(*ed).or_insert(0) += 1;
            }
        }
        let best = tally
            .into_iter()
            .max_by_key(|&(ed, cnt)| (cnt, std::cmp::Reverse(ed)))
            .map(|(ed, _)| ed)
            .expect("nonempty constraints have edges");
        chosen.push(best);
    }
    // Greedy reduction: drop edges (never e) that are redundant.
    let mut i = chosen.len();
    while i > 1 {
        i -= 1;
        let trial: Vec<(u32, u32)> = chosen
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &ed)| ed)
            .collect();
        let all_hit = constraints
            .iter()
            .all(|c| c.iter().any(|ed| trial.contains(ed)));
        if all_hit {
            chosen = trial;
        }
    }
    chosen.sort_unstable();
    Ok(EdgeSet {
        edges: chosen,
        complete,
        constraints: n_constraints,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShrinkReport {
    pub c_set: Vec<u32>,
    pub rho_used: u32,
    pub r0: u32,
    pub verified: bool,
    pub complete: bool,
    pub counterexample: Option<(u32, u32)>,
    pub pairs_checked: u64,
    pub note: Option<String>,
}

/// Produces a set C containing A with the two-step containment property:
/// for every safe-core y in M(x,C) and every safe-core z in M(y,C), z lies
/// in M(x,A). Trees take C = A; otherwise C is the smallest distance
/// envelope of A (within H in coned mode) that passes the exhaustive sweep,
/// shrunk greedily afterward. The sweep itself is the certificate; the
/// tolerance r0 = 8*delta+8 sets the envelope search horizon.
pub fn shrink_neighborhood(
    ball: &BallGraph,
    base: &BasePoint,
    a_ids: &[u32],
    delta_hat: u32,
    budget: &Budget,
) -> Result<ShrinkReport> {
    let _ = budget;
    let r0 = 8 * delta_hat + 8;
    let xv = resolve_base(ball, base, ball.safe_radius().max(1))?;
    let mut a_sorted = a_ids.to_vec();
    a_sorted.sort_unstable();
    a_sorted.dedup();
    if a_sorted.is_empty() {
        return Ok(ShrinkReport {
            c_set: Vec::new(),
            rho_used: 0,
            r0,
            verified: true,
            complete: true,
            counterexample: None,
            pairs_checked: 0,
            note: Some("empty A: containment vacuous".into()),
        });
    }

    // Coned mode with A inside the peripheral subgroup keeps C inside it.
    let coned_h: Option<Vec<bool>> = if ball.cone_families() > 0 {
        let h_cone = ball.cone_of(0, ball.center());
        let mut mask = vec![false; ball.n_vertices() as usize];
        for &m in ball.cone_members(h_cone) {
            mask[m as usize] = true;
        }
        if a_sorted.iter().all(|&a| mask[a as usize]) {
            Some(mask)
        } else {
            None
        }
    } else {
        None
    };

    let sweep = |c_ids: &[u32]| -> (bool, Option<(u32, u32)>, u64) {
        let oracle = DistOracle::new(ball);
        let eval_cx = MSetEvaluator::from_ids(&oracle, xv, c_ids);
        let eval_ax = MSetEvaluator::from_ids(&oracle, xv, &a_sorted);
        let core = ball.core_mask();
        let mut pairs = 0u64;
        for y in 0..ball.n_vertices() {
            if !core[y as usize] || y == xv || !eval_cx.contains(y) {
                continue;
            }
            let eval_cy = MSetEvaluator::from_ids(&oracle, y, c_ids);
            for z in 0..ball.n_vertices() {
                if !core[z as usize] || z == y {
                    continue;
                }
                if !eval_cy.contains(z) {
                    continue;
                }
                pairs += 1;
                if !eval_ax.contains(z) {
                    return (false, Some((y, z)), pairs);
                }
            }
        }
        (true, None, pairs)
    };

    if ball.is_tree() {
        let (ok, cex, pairs) = sweep(&a_sorted);
        return Ok(ShrinkReport {
            c_set: a_sorted,
            rho_used: 0,
            r0,
            verified: ok,
            complete: true,
            counterexample: cex,
            pairs_checked: pairs,
            note: Some("tree: C = A".into()),
        });
    }

    let row_a = ball.multi_source_row(&a_sorted);
    let mut total_pairs = 0u64;
    for rho in 0..=ball.safe_radius().max(1) {
        let mut cand: Vec<u32> = (0..ball.n_vertices())
            .filter(|&v| {
                v != xv
                    && !ball.is_cone(v)
                    && (row_a[v as usize] as u32) <= rho
                    && coned_h.as_ref().map_or(true, |m| m[v as usize])
            })
            .collect();
        for &a in &a_sorted {
            if !cand.contains(&a) {
                cand.push(a);
            }
        }
        cand.sort_unstable();
        cand.dedup();
        let (ok, cex, pairs) = sweep(&cand);
        total_pairs += pairs;
        if !ok {
            if rho == ball.safe_radius().max(1) {
                return Ok(ShrinkReport {
                    c_set: cand,
                    rho_used: rho,
                    r0,
                    verified: false,
                    complete: true,
                    counterexample: cex,
                    pairs_checked: total_pairs,
                    note: Some(
                        "no envelope passed; the delta estimate or radius is too small".into(),
                    ),
                });
            }
            continue;
        }
        // Greedy shrink keeping the sweep green; A itself always stays.
        let mut keep = cand;
        if keep.len() <= 48 {
            let mut order: Vec<u32> = keep
                .iter()
                .copied()
                .filter(|v| !a_sorted.contains(v))
                .collect();
            order.sort_unstable_by_key(|&v| {
                (std::cmp::Reverse(row_a[v as usize]), std::cmp::Reverse(v))
            });
            for v in order {
                let trial: Vec<u32> = keep.iter().copied().filter(|&u| u != v).collect();
                let (ok, _, pairs) = sweep(&trial);
                total_pairs += pairs;
                if ok {
                    keep = trial;
                }
            }
        }
        return Ok(ShrinkReport {
            c_set: keep,
            rho_used: rho,
            r0,
            verified: true,
            complete: true,
            counterexample: None,
            pairs_checked: total_pairs,
            note: None,
        });
    }
    unreachable!("loop returns on the last rho");
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinitenessProbe {
    /// (ball radius, max degree in the union of probe paths, union size).
    pub per_ball: Vec<(u32, u32, u32)>,
    pub stabilized: bool,
    pub complete: bool,
}

/// Local finiteness of the union of all r-quasi-geodesics between two
/// vertices, compared across the given balls (same group; increasing
/// radii) to record stabilization.
pub fn local_finiteness_probe(
    balls: &[&BallGraph],
    r: u32,
    x_word: &Word,
    y_word: &Word,
    budget: &Budget,
) -> Result<FinitenessProbe> {
    let mut per_ball = Vec::new();
    let mut complete = true;
    for ball in balls {
        let x = ball
            .id_of_word(x_word)
            .ok_or_else(|| RoamkitError::NotInBall("probe endpoint x".into()))?;
        let y = ball
            .id_of_word(y_word)
            .ok_or_else(|| RoamkitError::NotInBall("probe endpoint y".into()))?;
        if x == y {
            per_ball.push((ball.radius(), 0, 1));
            continue;
        }
        let set = enumerate_quasi_geodesics(ball, x, y, r, ball.radius() * 2 + r, budget)?;
        complete &= set.complete;
        let mut union_adj: HashMap<u32, Vec<u32>> = HashMap::new();
        for p in &set.paths {
            for w in p.vertices().windows(2) {
                union_adj.entry(w[0]).or_default().push(w[1]);
                union_adj.entry(w[1]).or_default().push(w[0]);
            }
        }
        let max_deg = union_adj
            .values_mut()
            .map(|v| {
                v.sort_unstable();
                v.dedup();
                v.len() as u32
            })
            .max()
            .unwrap_or(0);
        per_ball.push((ball.radius(), max_deg, union_adj.len() as u32));
    }
    let stabilized = per_ball.len() >= 2
        && per_ball
            .windows(2)
            .all(|w| w[0].1 == w[1].1 && w[0].2 == w[1].2);
    Ok(FinitenessProbe {
        per_ball,
        stabilized,
        complete,
    })
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

    fn coned_f2(radius: u32) -> BallGraph {
        let p = f2();
        let peri = vec![vec![p.parse_word("a").unwrap()]];
        BallGraph::coned(&p, radius, &peri, &Budget::default()).unwrap()
    }

    fn w(s: &str) -> Word {
        f2().parse_word(s).unwrap()
    }

    #[test]
    fn ray_neighborhood_examples() {
        let b = Budget::default();
        let g = BallGraph::plain(&f2(), 10, &b).unwrap();
        let spec = NeighborhoodSpec {
            base: BasePoint::Ray {
                gen: 0,
                positive: true,
            },
            avoid: vec![w("a")],
        };
        // y = a^3: geodesics from a^N (N >= 4) down to a^3 never pass a.
        let y = g.id_of_word(&w("aaa")).unwrap();
        let res = in_neighborhood(&g, y, &spec, &b).unwrap();
       assert!(res.value);
        assert!(res.stabilization.is_some());
        // y = e: every geodesic from a^N to e passes a.
        let e = g.center();
        let res = in_neighborhood(&g, e, &spec, &b).unwrap();
        assert!(!res.value);
        assert!(res.certified);
        // y = ab: the geodesic a^N .. a .. ab passes a.
        let yab = g.id_of_word(&w("ab")).unwrap();
        let res = in_neighborhood(&g, yab, &spec, &b).unwrap();
        assert!(!res.value);
    }

    #[test]
    fn ray_stabilization_persists_two_more_increments() {
        let b = Budget::default();
        let g = BallGraph::plain(&f2(), 10, &b).unwrap();
        let oracle = DistOracle::new(&g);
        let y = g.id_of_word(&w("aab")).unwrap();
        let avoid = vec![w("a")];
        // The ladder itself starts at N = 1, where the truncation coincides
        // with the avoid vertex and the verdict flips; stabilization is
        // declared at (3, 7). Check the stabilized verdict persists further.
        let res = in_neighborhood(
            &g,
            y,
            &NeighborhoodSpec {
                base: BasePoint::Ray {
                    gen: 0,
                    positive: true,
                },
                avoid: avoid.clone(),
            },
            &b,
        )
        .unwrap();
        assert_eq!(res.stabilization, Some((3, 7)));
        let mut verdicts = vec![res.value];
        for n in [3u32, 5, 7, 9] {
            let base = resolve_base(
                &g,
                &BasePoint::Ray {
                    gen: 0,
                    positive: true,
                },
                n,
            )
            .unwrap();
            let eval = MSetEvaluator::new(&g, &oracle, base, &avoid);
            verdicts.push(eval.contains(y));
        }
        assert!(verdicts.windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn monotone_in_avoid_set() {
        let b = Budget::default();
        let g = coned_f2(6);
        let oracle = DistOracle::new(&g);
        let c = g.cone_of(0, g.center());
        let small = MSetEvaluator::new(&g, &oracle, c, &[w("a")]);
        let big = MSetEvaluator::new(&g, &oracle, c, &[w("a"), w("A"), w("aa")]);
        for y in 0..g.n_vertices() {
            if big.contains(y) {
                assert!(small.contains(y), "M is antitone in A at {y}");
            }
        }
    }

    #[test]
    fn v_set_in_tree_is_a() {
        let b = Budget::default();
        let g = BallGraph::plain(&f2(), 6, &b).unwrap();
        let a = vec![g.id_of_word(&w("a")).unwrap()];
        let v = compute_v_set(&g, 3, &BasePoint::Vertex(w("bb")), &a, &b).unwrap();
        assert_eq!(v.vertices, a);
        assert!(v.minimized);
        assert!(v.verification.unwrap().ok);
    }

    #[test]
    fn v_set_coned_blocks_detours() {
        // Around the cone, V = {a} alone cannot block tolerance-2 paths
        // (e.g. the path c, a^2, a, ab meets a but c, a^2, a^2 b ... shows
        // clause 2 fails for V = A); the verified envelope must be larger.
        let b = Budget::default();
        let g = coned_f2(6);
        let a = vec![g.id_of_word(&w("a")).unwrap()];
        let v = compute_v_set(&g, 2, &BasePoint::Cone { family: 0 }, &a, &b).unwrap();
        let ver = v.verification.expect("small r is verified");
        assert!(ver.ok, "envelope verifies: {:?}", ver.counterexample);
        assert!(v.vertices.len() > 1, "V strictly larger than A");
        assert!(v.vertices.contains(&a[0]));
    }

    #[test]
    fn e_set_tree_is_single_edge() {
        let b = Budget::default();
        let g = BallGraph::plain(&f2(), 4, &b).unwrap();
        let av = g.id_of_word(&w("a")).unwrap();
        let es = e_set(&g, 1, (g.center(), av), &b).unwrap();
        assert_eq!(es.edges, vec![(g.center().min(av), g.center().max(av))]);
        assert!(es.complete);
    }

    #[test]
    fn e_set_coned_cone_edge() {
        let b = Budget::default();
        let g = coned_f2(6);
        let c = g.cone_of(0, g.center());
        let es = e_set(&g, 0, (g.center(), c), &b).unwrap();
        assert!(es.complete);
        assert!(!es.edges.is_empty());
        // Validation by re-scan is built into the construction; check the
        // seeded edge is retained.
        assert!(es.edges.contains(&(g.center().min(c), g.center().max(c))));
    }

    #[test]
    fn shrink_tree_c_equals_a() {
        let b = Budget::default();
        let g = BallGraph::plain(&f2(), 6, &b).unwrap();
        let a = vec![g.id_of_word(&w("a")).unwrap()];
        let rep = shrink_neighborhood(&g, &BasePoint::Vertex(w("bb")), &a, 0, &b).unwrap();
        assert_eq!(rep.c_set, a);
        assert!(rep.verified);
    }

    #[test]
    fn shrink_coned_stays_in_h() {
        let b = Budget::default();
        let g = coned_f2(8);
        let a = vec![
            g.id_of_word(&w("a")).unwrap(),
            g.id_of_word(&w("A")).unwrap(),
        ];
        let rep = shrink_neighborhood(&g, &BasePoint::Cone { family: 0 }, &a, 1, &b).unwrap();
        assert!(rep.verified, "counterexample: {:?}", rep.counterexample);
        let h_cone = g.cone_of(0, g.center());
        let members = g.cone_members(h_cone);
        for v in &rep.c_set {
            assert!(members.contains(v), "C stays inside the subgroup");
        }
        for v in &a {
            assert!(rep.c_set.contains(v), "C contains A");
        }
    }

    #[test]
    fn finiteness_probe_tree_and_coned() {
        let b = Budget::default();
        let p = f2();
        let g = BallGraph::plain(&p, 6, &b).unwrap();
        let probe =
            local_finiteness_probe(&[&g], 0, &w("A"), &w("a"), &b).unwrap();
        assert_eq!(probe.per_ball[0].1, 2, "a path has max degree 2");

        let g4 = coned_f2(4);
        let g6 = coned_f2(6);
        let probe =
            local_finiteness_probe(&[&g4, &g6], 0, &w("AA"), &w("aa"), &b).unwrap();
        assert!(probe.complete);
        assert!(probe.stabilized, "{:?}", probe.per_ball);
    }
}
