//! Primal network simplex for uncapacitated min-cost flow.
//!
//! Spanning-tree bookkeeping follows the thread/successor layout used by
//! LEMON: every tree node stores its parent, the arc to it, a preorder
//! `thread` pointer, the size of its subtree and the last node of its subtree
//! in thread order. Entering arcs are chosen by block search; within a block
//! the most negative reduced cost wins and ties go to the lowest arc index.
//!
//! Supplies are integral (`i64`), so flows are exact. Costs and node
//! potentials use the generic [`Scalar`].

use crate::error::{Result, RobotError};
use crate::scalar::Scalar;

const STATE_UPPER: i8 = -1;
const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;

const DIR_UP: i8 = 1;
const DIR_DOWN: i8 = -1;

/// Directed graph with uncapacitated arcs and integral node supplies.
#[derive(Debug, Clone)]
pub(crate) struct FlowGraph<T> {
    pub supply: Vec<i64>,
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub cost: Vec<T>,
}

impl<T: Scalar> FlowGraph<T> {
    pub fn with_arc_capacity(supply: Vec<i64>, arcs: usize) -> Self {
        FlowGraph {
            supply,
            source: Vec::with_capacity(arcs),
            target: Vec::with_capacity(arcs),
            cost: Vec::with_capacity(arcs),
        }
    }

    pub fn add_arc(&mut self, from: usize, to: usize, cost: T) -> usize {
        self.source.push(from);
        self.target.push(to);
        self.cost.push(cost);
        self.source.len() - 1
    }

    pub fn node_count(&self) -> usize {
        self.supply.len()
    }

    pub fn arc_count(&self) -> usize {
        self.source.len()
    }
}

/// Optimal flow together with node potentials.
///
/// Potentials satisfy `cost[e] + pi[source[e]] - pi[target[e]] >= -tol` on
/// every arc and equality on arcs carrying flow.
#[derive(Debug, Clone)]
pub(crate) struct FlowSolution<T> {
    pub flow: Vec<i64>,
    pub potential: Vec<T>,
    pub pivots: usize,
}

impl<T: Scalar> FlowSolution<T> {
    pub fn cost(&self, graph: &FlowGraph<T>) -> T {
        let mut total = T::zero();
        for (e, &f) in self.flow.iter().enumerate() {
            if f != 0 {
                total += graph.cost[e] * T::lit(f as f64);
            }
        }
        total
    }
}

struct Simplex<T> {
    node_num: usize,
    arc_num: usize,
    root: usize,

    source: Vec<usize>,
    target: Vec<usize>,
    cost: Vec<T>,
    flow: Vec<i64>,
    state: Vec<i8>,

    parent: Vec<usize>,
    pred: Vec<usize>,
    pred_dir: Vec<i8>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    pi: Vec<T>,
    dirty_revs: Vec<usize>,

    // pivot state
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: i64,

    block_size: usize,
    next_arc: usize,
    eps: T,
}

const NONE: usize = usize::MAX;
const INF: i64 = i64::MAX;

/// Solves the transportation-style flow problem on `graph`.
///
/// Total supply must be zero. Fails with a solver error when the pivot
/// budget is exhausted or the problem is infeasible.
pub(crate) fn solve<T: Scalar>(graph: &FlowGraph<T>, max_pivots: usize) -> Result<FlowSolution<T>> {
    let total: i64 = graph.supply.iter().sum();
    if total != 0 {
        return Err(RobotError::invalid(format!(
            "network supplies are unbalanced (net {total})"
        )));
    }
    if graph.node_count() == 0 {
        return Ok(FlowSolution {
            flow: Vec::new(),
            potential: Vec::new(),
            pivots: 0,
        });
    }
    let mut s = Simplex::init(graph);
    let mut pivots = 0usize;
    while s.find_entering_arc() {
        if pivots >= max_pivots {
            return Err(RobotError::solver(format!(
                "network simplex exceeded {max_pivots} pivots ({} nodes, {} arcs)",
                s.node_num, s.arc_num
            )));
        }
        pivots += 1;
        s.find_join_node();
        let change = s.find_leaving_arc();
        if s.delta == INF {
            return Err(RobotError::solver("unbounded flow problem"));
        }
        s.change_flow(change);
        if change {
            s.update_tree_structure();
            s.update_potential();
        }
    }
    for e in s.arc_num..s.arc_num + s.node_num {
        if s.flow[e] != 0 {
            return Err(RobotError::solver("infeasible flow problem"));
        }
    }
    s.recompute_potentials();
    let potential = s.pi[..s.node_num].to_vec();
    let flow = s.flow[..s.arc_num].to_vec();
    Ok(FlowSolution {
        flow,
        potential,
        pivots,
    })
}

impl<T: Scalar> Simplex<T> {
    fn init(graph: &FlowGraph<T>) -> Self {
        let node_num = graph.node_count();
        let arc_num = graph.arc_count();
        let all_arcs = arc_num + node_num;
        let root = node_num;

        let mut max_cost = T::zero();
        for &c in &graph.cost {
            if c.abs() > max_cost {
                max_cost = c.abs();
            }
        }
        let art_cost = (max_cost + T::one()) * T::count(node_num);
        let eps = art_cost * T::epsilon() * T::lit(16.0);

        let mut source = Vec::with_capacity(all_arcs);
        let mut target = Vec::with_capacity(all_arcs);
        let mut cost = Vec::with_capacity(all_arcs);
        source.extend_from_slice(&graph.source);
        target.extend_from_slice(&graph.target);
        cost.extend_from_slice(&graph.cost);
        source.resize(all_arcs, 0);
        target.resize(all_arcs, 0);
        cost.resize(all_arcs, T::zero());

        let mut flow = vec![0i64; all_arcs];
        let mut state = vec![STATE_LOWER; all_arcs];

        let n1 = node_num + 1;
        let mut parent = vec![NONE; n1];
        let mut pred = vec![NONE; n1];
        let mut pred_dir = vec![0i8; n1];
        let mut thread = vec![0usize; n1];
        let mut rev_thread = vec![0usize; n1];
        let mut succ_num = vec![0usize; n1];
        let mut last_succ = vec![0usize; n1];
        let mut pi = vec![T::zero(); n1];

        thread[root] = 0;
        rev_thread[0] = root;
        succ_num[root] = node_num + 1;
        last_succ[root] = root - 1;

        for u in 0..node_num {
            let e = arc_num + u;
            parent[u] = root;
            pred[u] = e;
            thread[u] = u + 1;
            rev_thread[u + 1] = u;
            succ_num[u] = 1;
            last_succ[u] = u;
            state[e] = STATE_TREE;
            let b = graph.supply[u];
            if b >= 0 {
                pred_dir[u] = DIR_UP;
                pi[u] = T::zero();
                source[e] = u;
                target[e] = root;
                flow[e] = b;
                cost[e] = T::zero();
            } else {
                pred_dir[u] = DIR_DOWN;
                pi[u] = art_cost;
                source[e] = root;
                target[e] = u;
                flow[e] = -b;
                cost[e] = art_cost;
            }
        }

        let block_size = ((all_arcs as f64).sqrt().ceil() as usize).max(10);

        Simplex {
            node_num,
            arc_num,
            root,
            source,
            target,
            cost,
            flow,
            state,
            parent,
            pred,
            pred_dir,
            thread,
            rev_thread,
            succ_num,
            last_succ,
            pi,
            dirty_revs: Vec::new(),
            in_arc: 0,
            join: 0,
            u_in: 0,
            v_in: 0,
            u_out: 0,
            delta: 0,
            block_size,
            next_arc: 0,
            eps,
        }
    }

    #[inline]
    fn reduced(&self, e: usize) -> T {
        let s = T::lit(self.state[e] as f64);
        s * (self.cost[e] + self.pi[self.source[e]] - self.pi[self.target[e]])
    }

    /// Block search over the original arcs only; artificial arcs never
    /// re-enter once they leave the tree.
    fn find_entering_arc(&mut self) -> bool {
        let search_arc_num = self.arc_num;
        if search_arc_num == 0 {
            return false;
        }
        let mut min = -self.eps;
        let mut found = NONE;
        let mut cnt = self.block_size;
        let start = self.next_arc.min(search_arc_num);
        let mut e = start;
        loop {
            let c = self.reduced(e);
            if c < min {
                min = c;
                found = e;
            }
            e += 1;
            if e == search_arc_num {
                e = 0;
            }
            cnt -= 1;
            if cnt == 0 {
                if found != NONE {
                    break;
                }
                cnt = self.block_size;
            }
            if e == start {
                break;
            }
        }
        if found == NONE {
            return false;
        }
        self.in_arc = found;
        self.next_arc = e;
        true
    }

    fn find_join_node(&mut self) {
        let mut u = self.source[self.in_arc];
        let mut v = self.target[self.in_arc];
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    fn find_leaving_arc(&mut self) -> bool {
        let (first, second) = if self.state[self.in_arc] == STATE_LOWER {
            (self.source[self.in_arc], self.target[self.in_arc])
        } else {
            (self.target[self.in_arc], self.source[self.in_arc])
        };
        self.delta = INF;
        let mut result = 0u8;

        let mut u = first;
        while u != self.join {
            let e = self.pred[u];
            let d = if self.pred_dir[u] == DIR_DOWN {
                INF
            } else {
                self.flow[e]
            };
            if d < self.delta {
                self.delta = d;
                self.u_out = u;
                result = 1;
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            let e = self.pred[u];
            let d = if self.pred_dir[u] == DIR_UP {
                INF
            } else {
                self.flow[e]
            };
            if d <= self.delta && d < INF {
                self.delta = d;
                self.u_out = u;
                result = 2;
            }
            u = self.parent[u];
        }

        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        result != 0
    }

    fn change_flow(&mut self, change: bool) {
        if self.delta > 0 {
            let val = self.state[self.in_arc] as i64 * self.delta;
            self.flow[self.in_arc] += val;
            let mut u = self.source[self.in_arc];
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] -= self.pred_dir[u] as i64 * val;
                u = self.parent[u];
            }
            let mut u = self.target[self.in_arc];
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] += self.pred_dir[u] as i64 * val;
                u = self.parent[u];
            }
        }
        if change {
            self.state[self.in_arc] = STATE_TREE;
            let out = self.pred[self.u_out];
            self.state[out] = if self.flow[out] == 0 {
                STATE_LOWER
            } else {
                STATE_UPPER
            };
        } else {
            self.state[self.in_arc] = -self.state[self.in_arc];
        }
    }

    fn update_tree_structure(&mut self) {
        let u_in = self.u_in;
        let v_in = self.v_in;
        let u_out = self.u_out;
        let join = self.join;
        let in_arc = self.in_arc;

        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.source[in_arc] {
                DIR_UP
            } else {
                DIR_DOWN
            };

            if self.thread[v_in] != u_out {
                let after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                let after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };

            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);

                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;

                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }

            for k in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[k];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }

            let mut tmp_sc = 0usize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc = tmp_sc + self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.source[in_arc] {
                DIR_UP
            } else {
                DIR_DOWN
            };
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in {
            join
        } else {
            NONE
        };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }

        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && u != NONE && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && u != NONE && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }

        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let dir = T::lit(self.pred_dir[self.u_in] as f64);
        let sigma = self.pi[self.v_in] - self.pi[self.u_in] - dir * self.cost[self.in_arc];
        let end = self.thread[self.last_succ[self.u_in]];
        let mut u = self.u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    /// Rebuilds potentials from the final tree in thread order so that tree
    /// arcs are tight up to a single rounding per level.
    fn recompute_potentials(&mut self) {
        self.pi[self.root] = T::zero();
        let mut u = self.thread[self.root];
        while u != self.root {
            let p = self.parent[u];
            let e = self.pred[u];
            // cost + pi[source] - pi[target] = 0 on tree arcs
            self.pi[u] = if self.pred_dir[u] == DIR_UP {
                self.pi[p] - self.cost[e]
            } else {
                self.pi[p] + self.cost[e]
            };
            u = self.thread[u];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bipartite(cost: &[Vec<f64>], a: &[i64], b: &[i64]) -> FlowGraph<f64> {
        let n = a.len();
        let mut supply = a.to_vec();
        supply.extend(b.iter().map(|&x| -x));
        let mut g = FlowGraph::with_arc_capacity(supply, 0);
        for (i, row) in cost.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                g.add_arc(i, n + j, c);
            }
        }
        g
    }

    #[test]
    fn two_by_two_picks_diagonal() {
        let g = bipartite(&[vec![1.0, 2.0], vec![2.0, 2.0]], &[1, 1], &[1, 1]);
        let sol = solve(&g, 1000).unwrap();
        assert_eq!(sol.flow, vec![1, 0, 0, 1]);
        assert_eq!(sol.cost(&g), 3.0);
    }

    #[test]
    fn potentials_are_dual_feasible_and_tight() {
        let cost = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        let g = bipartite(&cost, &[3, 2, 5], &[4, 4, 2]);
        let sol = solve(&g, 1000).unwrap();
        for e in 0..g.arc_count() {
            let rc = g.cost[e] + sol.potential[g.source[e]] - sol.potential[g.target[e]];
            assert!(rc > -1e-12, "arc {e} reduced cost {rc}");
            if sol.flow[e] > 0 {
                assert!(rc.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unbalanced_supply_is_rejected() {
        let g = bipartite(&[vec![1.0]], &[2], &[1]);
        assert!(solve(&g, 10).is_err());
    }

    #[test]
    fn pivot_budget_is_enforced() {
        let cost: Vec<Vec<f64>> = (0..8)
            .map(|i| (0..8).map(|j| ((i * 7 + j * 3) % 11) as f64).collect())
            .collect();
        let g = bipartite(&cost, &[1; 8], &[1; 8]);
        let err = solve(&g, 1).unwrap_err();
        assert!(matches!(err, RobotError::SolverFailure { .. }));
    }
}
