//! Transport on the real line under the capped cost `min(|x - y|, cap)`.
//!
//! Atoms become nodes of a path graph ordered by position, with arcs in both
//! directions between neighbours whose cost is the gap. When `cap` is finite
//! an extra hub node is attached: each source can send mass into the hub and
//! each target can receive from it, at cost `cap / 2` per arc. The shortest
//! path between a source at `x` and a target at `y` is then exactly
//! `min(|x - y|, cap)`, so a min-cost flow on this `O(n + m)`-arc graph has
//! the same value as the dense transport problem.
//!
//! Mass routed through the hub is exactly the mass placed on trimmed pairs:
//! any optimal flow decomposes into paths that are shortest, and a hub path
//! is shortest only for pairs at distance at least `cap`.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::error::{Result, RobotError};
use crate::ot::{is_uniform, network_simplex, validate_marginals, MassScale, PlanEntry, TransportPlan, PIVOTS_PER_NODE};
use crate::scalar::Scalar;

/// Output of [`solve_line`].
#[derive(Debug, Clone)]
pub struct LineSolution<T: Scalar = f64> {
    pub value: T,
    /// Source potentials (`psi_i + phi_j <= min(|x_i - y_j|, cap)`).
    pub psi: Vec<T>,
    pub phi: Vec<T>,
    /// Present when requested.
    pub plan: Option<TransportPlan<T>>,
    pub pivots: usize,
}

struct LineGraph<T> {
    graph: network_simplex::FlowGraph<T>,
    masses: MassScale,
    /// node ids (sources `0..n`, targets `n..n+m`) sorted by position
    order: Vec<usize>,
    /// arc index of source→hub / hub→target per node, if a hub exists
    hub_arc: Vec<Option<usize>>,
}

fn validate<T: Scalar>(xs: &[T], a: &[T], ys: &[T], b: &[T], cap: T) -> Result<()> {
    validate_marginals(a, b)?;
    if xs.len() != a.len() || ys.len() != b.len() {
        return Err(RobotError::invalid("positions and weights differ in length"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(RobotError::invalid("positions must be finite"));
    }
    if !(cap > T::zero()) {
        return Err(RobotError::invalid(format!("cap must be positive, got {cap}")));
    }
    Ok(())
}

fn build<T: Scalar>(xs: &[T], a: &[T], ys: &[T], b: &[T], cap: T) -> Result<LineGraph<T>> {
    validate(xs, a, ys, b, cap)?;
    let (n, m) = (xs.len(), ys.len());
    let total = n + m;
    let pos = |u: usize| if u < n { xs[u] } else { ys[u - n] };
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&u, &v| pos(u).partial_cmp(&pos(v)).unwrap().then(u.cmp(&v)));

    let masses = MassScale::new(a, b);
    let has_hub = cap.is_finite();
    let mut supply = Vec::with_capacity(total + usize::from(has_hub));
    supply.extend_from_slice(&masses.source);
    supply.extend(masses.target.iter().map(|&x| -x));
    if has_hub {
        supply.push(0);
    }
    let mut graph =
        network_simplex::FlowGraph::with_arc_capacity(supply, 2 * total + if has_hub { total } else { 0 });
    for w in order.windows(2) {
        let gap = pos(w[1]) - pos(w[0]);
        graph.add_arc(w[0], w[1], gap);
        graph.add_arc(w[1], w[0], gap);
    }
    let mut hub_arc = vec![None; total];
    if has_hub {
        let hub = total;
        let half = cap / T::lit(2.0);
        for (u, slot) in hub_arc.iter_mut().enumerate() {
            *slot = Some(if u < n {
                graph.add_arc(u, hub, half)
            } else {
                graph.add_arc(hub, u, half)
            });
        }
    }
    Ok(LineGraph {
        graph,
        masses,
        order,
        hub_arc,
    })
}

/// Optimal value of transport between `(xs, a)` and `(ys, b)` under
/// `min(|x - y|, cap)`, without building the plan.
///
/// `cap = +∞` gives the untrimmed order-1 distance.
///
/// Runs in `O((n + m) log(n + m))`. The capped problem is equivalent to
/// transporting sub-measures `α <= a`, `β <= b` of equal mass under `|x - y|`
/// while paying `cap / 2` per unit of deleted mass on either side. Sweeping
/// the atoms left to right, the cheapest cost of a prefix as a function of
/// the running imbalance `g = α(-∞, t] - β(-∞, t]` is convex and piecewise
/// linear; it is stored as two heaps of (slope, length) pieces on either
/// side of `g = 0`, with lazy slope offsets.
pub fn capped_value<T: Scalar>(xs: &[T], a: &[T], ys: &[T], b: &[T], cap: T) -> Result<T> {
    validate(xs, a, ys, b, cap)?;
    if cap.is_infinite() {
        return Ok(super::w1_line(xs, a, ys, b));
    }
    let half = cap / T::lit(2.0);
    let n = xs.len();
    let mut events: Vec<(T, usize)> = xs.iter().chain(ys).copied().zip(0..).collect();
    events.sort_by(|p, q| p.0.partial_cmp(&q.0).expect("finite positions"));

    // left: pieces with g < 0, max-heap on slope; right: g > 0, min-heap
    let mut left: BinaryHeap<Piece<T>> = BinaryHeap::with_capacity(events.len());
    let mut right: BinaryHeap<Reverse<Piece<T>>> = BinaryHeap::with_capacity(events.len());
    let (mut off_left, mut off_right) = (T::zero(), T::zero());
    let mut at_zero = T::zero();
    let mut prev = events[0].0;
    for &(x, k) in &events {
        let gap = x - prev;
        prev = x;
        off_left -= gap;
        off_right += gap;
        if k < n {
            // g jumps up by u ∈ [0, a_k] at cost half·(a_k - u)
            let mass = a[k];
            left.push(Piece::new(-half - off_left, mass));
            at_zero += half * mass;
            let mut need = mass;
            while need > T::zero() {
                let Some(mut top) = left.pop() else { break };
                let slope = top.slope + off_left;
                let take = top.len.min(need);
                at_zero += (-slope - half) * take;
                need -= take;
                right.push(Reverse(Piece::new(slope - off_right, take)));
                if top.len > take {
                    top.len -= take;
                    left.push(top);
                }
            }
        } else {
            let mass = b[k - n];
            right.push(Reverse(Piece::new(half - off_right, mass)));
            at_zero += half * mass;
            let mut need = mass;
            while need > T::zero() {
                let Some(Reverse(mut top)) = right.pop() else { break };
                let slope = top.slope + off_right;
                let take = top.len.min(need);
                at_zero += (slope - half) * take;
                need -= take;
                left.push(Piece::new(slope - off_left, take));
                if top.len > take {
                    top.len -= take;
                    right.push(Reverse(top));
                }
            }
        }
    }
    Ok(at_zero.max(T::zero()))
}

/// Linear piece of the sweep's cost function: `len` units of `g` at a
/// stored slope (the heap's lazy offset is added on read).
#[derive(Debug, Clone, Copy)]
struct Piece<T> {
    slope: T,
    len: T,
}

impl<T: Scalar> Piece<T> {
    fn new(slope: T, len: T) -> Self {
        Piece { slope, len }
    }
}

impl<T: Scalar> PartialEq for Piece<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Piece<T> {}

impl<T: Scalar> PartialOrd for Piece<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Piece<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.slope.partial_cmp(&other.slope).unwrap_or(Ordering::Equal)
    }
}

/// Full solve: value, potentials and (optionally) an optimal plan.
pub fn solve_line<T: Scalar>(
    xs: &[T],
    a: &[T],
    ys: &[T],
    b: &[T],
    cap: T,
    with_plan: bool,
) -> Result<LineSolution<T>> {
    validate(xs, a, ys, b, cap)?;
    let (n, m) = (xs.len(), ys.len());
    if n == m && n * m <= MATCHING_MAX_CELLS && is_uniform(a) && is_uniform(b) {
        return Ok(solve_matching(xs, ys, cap, with_plan));
    }
    let lg = build(xs, a, ys, b, cap)?;
    let sol = network_simplex::solve(&lg.graph, PIVOTS_PER_NODE * lg.graph.node_count())?;
    let psi: Vec<T> = sol.potential[..n].iter().map(|&p| -p).collect();
    let phi: Vec<T> = sol.potential[n..n + m].to_vec();

    let plan = if with_plan {
        Some(decompose(&lg, &sol.flow, xs, ys, n, m)?)
    } else {
        None
    };
    let value = match &plan {
        Some(p) => p.cost_with(|i, j| (xs[i] - ys[j]).abs().min(cap)),
        None => sol.cost(&lg.graph) / T::lit(lg.masses.scale as f64),
    };
    Ok(LineSolution {
        value,
        psi,
        phi,
        plan,
        pivots: sol.pivots,
    })
}

/// Largest `n·m` handled by the matching recursion (one byte per cell).
const MATCHING_MAX_CELLS: usize = 1 << 22;

/// Equal-size uniform case. Each atom is a unit that is either matched or
/// deleted at cost `cap / 2`. Because `|x - y|` is a Monge cost, some optimal
/// matching pairs the sorted sources and sorted targets in order, so an
/// edit-distance recursion over the two sorted lists is exact. Deleted
/// sources and targets are then paired with each other; every such pair is
/// at distance at least `cap`, otherwise matching it would be cheaper.
fn solve_matching<T: Scalar>(xs: &[T], ys: &[T], cap: T, with_plan: bool) -> LineSolution<T> {
    const DIAG: u8 = 0;
    const SKIP_SOURCE: u8 = 1;
    const SKIP_TARGET: u8 = 2;

    let n = xs.len();
    let half = cap / T::lit(2.0);
    let sorted = |v: &[T]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&p, &q| v[p].partial_cmp(&v[q]).expect("finite positions").then(p.cmp(&q)));
        idx
    };
    let (sx, sy) = (sorted(xs), sorted(ys));

    if cap.is_infinite() {
        // the sorted pairing is optimal for the uncapped cost
        let mut partner = vec![0usize; n];
        for (&u, &v) in sx.iter().zip(&sy) {
            partner[u] = v;
        }
        return finish_matching(xs, ys, cap, partner, vec![false; n], with_plan);
    }

    let mut prev: Vec<T> = (0..=n).map(|j| half * T::count(j)).collect();
    let mut cur = vec![T::zero(); n + 1];
    let mut moves = vec![DIAG; n * n];
    for i in 1..=n {
        cur[0] = half * T::count(i);
        let x = xs[sx[i - 1]];
        for j in 1..=n {
            let diag = prev[j - 1] + (x - ys[sy[j - 1]]).abs();
            let skip_s = prev[j] + half;
            let skip_t = cur[j - 1] + half;
            let (best, mv) = if diag <= skip_s && diag <= skip_t {
                (diag, DIAG)
            } else if skip_s <= skip_t {
                (skip_s, SKIP_SOURCE)
            } else {
                (skip_t, SKIP_TARGET)
            };
            cur[j] = best;
            moves[(i - 1) * n + (j - 1)] = mv;
        }
        std::mem::swap(&mut prev, &mut cur);
    }

    let mut partner = vec![usize::MAX; n];
    let mut target_used = vec![false; n];
    let (mut i, mut j) = (n, n);
    while i > 0 && j > 0 {
        match moves[(i - 1) * n + (j - 1)] {
            DIAG => {
                partner[sx[i - 1]] = sy[j - 1];
                target_used[sy[j - 1]] = true;
                i -= 1;
                j -= 1;
            }
            SKIP_SOURCE => i -= 1,
            _ => j -= 1,
        }
    }
    let free_sources: Vec<usize> = sx.iter().copied().filter(|&u| partner[u] == usize::MAX).collect();
    let free_targets: Vec<usize> = sy.iter().copied().filter(|&v| !target_used[v]).collect();
    let mut deleted = vec![false; n];
    for (&u, &v) in free_sources.iter().zip(&free_targets) {
        partner[u] = v;
        deleted[u] = true;
    }
    finish_matching(xs, ys, cap, partner, deleted, with_plan)
}

fn finish_matching<T: Scalar>(
    xs: &[T],
    ys: &[T],
    cap: T,
    partner: Vec<usize>,
    deleted: Vec<bool>,
    with_plan: bool,
) -> LineSolution<T> {
    let n = xs.len();
    let half = cap / T::lit(2.0);
    let w = T::one() / T::count(n);
    let value = (0..n)
        .map(|u| (xs[u] - ys[partner[u]]).abs().min(cap))
        .sum::<T>()
        * w;
    let (psi, phi) = matching_potentials(xs, ys, &partner, &deleted, half);
    let plan = with_plan.then(|| {
        let entries = (0..n)
            .map(|u| PlanEntry {
                row: u,
                col: partner[u],
                mass: w,
            })
            .collect();
        TransportPlan::from_entries(n, n, entries).expect("permutation plan")
    });
    LineSolution {
        value,
        psi,
        phi,
        plan,
        pivots: 0,
    }
}

/// Potentials for a matching solution: shortest-path distances from the hub
/// in the residual line-and-hub network carrying the matching's flow.
fn matching_potentials<T: Scalar>(
    xs: &[T],
    ys: &[T],
    partner: &[usize],
    deleted: &[bool],
    half: T,
) -> (Vec<T>, Vec<T>) {
    let n = xs.len();
    let total = 2 * n;
    let hub = total;
    let pos = |u: usize| if u < n { xs[u] } else { ys[u - n] };
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&p, &q| pos(p).partial_cmp(&pos(q)).expect("finite positions").then(p.cmp(&q)));

    // signed unit flow across each gap, from matched pairs only
    let mut rank = vec![0usize; total];
    for (r, &u) in order.iter().enumerate() {
        rank[u] = r;
    }
    let mut diff = vec![0i64; total + 1];
    let mut hub_flow = vec![false; total];
    for u in 0..n {
        let v = partner[u];
        if deleted[u] {
            hub_flow[u] = true;
            hub_flow[n + v] = true;
            continue;
        }
        let (ru, rv) = (rank[u], rank[n + v]);
        if ru < rv {
            diff[ru] += 1;
            diff[rv] -= 1;
        } else {
            diff[rv] -= 1;
            diff[ru] += 1;
        }
    }

    let mut adj: Vec<Vec<(usize, T)>> = vec![Vec::new(); total + 1];
    let mut running = 0i64;
    for r in 0..total - 1 {
        running += diff[r];
        let (u, v) = (order[r], order[r + 1]);
        let gap = pos(v) - pos(u);
        adj[u].push((v, if running < 0 { -gap } else { gap }));
        adj[v].push((u, if running > 0 { -gap } else { gap }));
    }
    let has_hub = half.is_finite();
    for u in (0..total).filter(|_| has_hub) {
        if u < n {
            adj[u].push((hub, half));
            if hub_flow[u] {
                adj[hub].push((u, -half));
            }
        } else {
            adj[hub].push((u, half));
            if hub_flow[u] {
                adj[u].push((hub, -half));
            }
        }
    }

    // queue-based Bellman-Ford; the residual network has no negative cycle,
    // and the slack keeps rounding-level cycles from being chased forever
    let scale = xs.iter().chain(ys).fold(if has_hub { half } else { T::one() }, |m, &x| m.max(x.abs()));
    let slack = T::epsilon() * T::lit(64.0) * scale;
    let mut dist = vec![T::infinity(); total + 1];
    let mut queued = vec![false; total + 1];
    let mut queue = std::collections::VecDeque::with_capacity(total + 1);
    // without a hub every node is reachable along the line
    let root = if has_hub { hub } else { order[0] };
    dist[root] = T::zero();
    queue.push_back(root);
    queued[root] = true;
    while let Some(u) = queue.pop_front() {
        queued[u] = false;
        let du = dist[u];
        for &(v, c) in &adj[u] {
            let cand = du + c;
            if cand < dist[v] - slack || (dist[v].is_infinite() && cand.is_finite()) {
                dist[v] = cand;
                if !queued[v] {
                    queued[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    let psi = dist[..n].iter().map(|&p| -p).collect();
    let phi = dist[n..total].to_vec();
    (psi, phi)
}

/// Turns the optimal flow into a coupling: hub traffic is paired directly
/// (all such pairs are at distance ≥ cap) and the remaining mass is coupled
/// monotonically along the line.
fn decompose<T: Scalar>(
    lg: &LineGraph<T>,
    flow: &[i64],
    xs: &[T],
    ys: &[T],
    n: usize,
    m: usize,
) -> Result<TransportPlan<T>> {
    let total = n + m;
    let pos = |u: usize| if u < n { xs[u] } else { ys[u - n] };
    let own = |u: usize| {
        if u < n {
            lg.masses.source[u]
        } else {
            lg.masses.target[u - n]
        }
    };
    let mut hub: Vec<i64> = (0..total)
        .map(|u| lg.hub_arc[u].map_or(0, |e| flow[e]))
        .collect();

    // Hub traffic at a node may exceed its own mass when it is fed over
    // (numerically) zero-length line arcs; hand the excess to the nearest
    // nodes of the same side.
    let mut rank = vec![0usize; total];
    for (r, &u) in lg.order.iter().enumerate() {
        rank[u] = r;
    }
    for u in 0..total {
        let mut excess = hub[u] - own(u);
        if excess <= 0 {
            continue;
        }
        hub[u] = own(u);
        let same_side = |v: usize| (v < n) == (u < n);
        // walk outward from u, always visiting the nearer of the two frontiers
        let (mut left, mut right) = (rank[u], rank[u] + 1);
        while excess > 0 {
            let dl = (left > 0).then(|| pos(u) - pos(lg.order[left - 1]));
            let dr = (right < total).then(|| pos(lg.order[right]) - pos(u));
            let v = match (dl, dr) {
                (None, None) => return Err(RobotError::solver("inconsistent hub flow in line solver")),
                (Some(l), Some(r)) if l <= r => {
                    left -= 1;
                    lg.order[left]
                }
                (Some(_), None) => {
                    left -= 1;
                    lg.order[left]
                }
                _ => {
                    right += 1;
                    lg.order[right - 1]
                }
            };
            if !same_side(v) {
                continue;
            }
            let slack = own(v) - hub[v];
            if slack > 0 {
                let take = slack.min(excess);
                hub[v] += take;
                excess -= take;
            }
        }
    }

    let mut entries: Vec<PlanEntry<T>> = Vec::with_capacity(total);
    let mut push = |i: usize, j: usize, units: i64| {
        entries.push(PlanEntry {
            row: i,
            col: j - n,
            mass: lg.masses.mass(units),
        });
    };

    // monotone coupling of the residual (non-hub) masses
    let sources: Vec<usize> = lg.order.iter().copied().filter(|&u| u < n).collect();
    let targets: Vec<usize> = lg.order.iter().copied().filter(|&u| u >= n).collect();
    let mut residual: Vec<i64> = (0..total).map(|u| own(u) - hub[u]).collect();
    northwest(&sources, &targets, &mut residual, &mut push);
    // hub pairs
    northwest(&sources, &targets, &mut hub, &mut push);

    TransportPlan::from_entries(n, m, entries)
}

fn northwest(rows: &[usize], cols: &[usize], mass: &mut [i64], push: &mut impl FnMut(usize, usize, i64)) {
    let (mut r, mut c) = (0usize, 0usize);
    loop {
        while r < rows.len() && mass[rows[r]] == 0 {
            r += 1;
        }
        while c < cols.len() && mass[cols[c]] == 0 {
            c += 1;
        }
        if r == rows.len() || c == cols.len() {
            break;
        }
        let (u, v) = (rows[r], cols[c]);
        let t = mass[u].min(mass[v]);
        push(u, v, t);
        mass[u] -= t;
        mass[v] -= t;
    }
}
