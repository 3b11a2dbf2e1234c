//! Reference-camera selection as a reward-collection problem on a complete
//! graph of previous camera positions: a greedy heuristic plus an exact
//! brute-force solver used as its oracle.

use std::time::Instant;

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::geometry::{CameraPose, Vec3};

/// Complete weighted graph over camera centers. `rewards[i]` is the negative
/// preceding training loss of camera i; `edge(i, j)` is the Euclidean
/// distance between centers i and j.
#[derive(Debug, Clone)]
pub struct PoseGraph {
    pub positions: Vec<Vec3>,
    pub rewards: Vec<f64>,
    edges: Vec<f64>, // row-major n*n
}

impl PoseGraph {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn edge(&self, i: usize, j: usize) -> f64 {
        self.edges[i * self.positions.len() + j]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelectionConfig {
    /// Number of poses to pick (D).
    pub d: usize,
    /// Coverage threshold on the shortest path over the selected nodes.
    pub s_th: f64,
    /// Unit-adjustment multiplier between rewards and edge lengths.
    pub lambda: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            d: 5,
            s_th: 0.0,
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Selected node indices in visit order.
    pub nodes: Vec<usize>,
    pub total_reward: f64,
    /// Shortest open Hamiltonian path over the selected nodes.
    pub path_length: f64,
    pub feasible: bool,
}

/// Builds the complete graph from camera poses and per-camera rewards.
pub fn build_graph(poses: &[CameraPose], rewards: &[f64]) -> Result<PoseGraph> {
    let positions: Vec<Vec3> = poses.iter().map(|p| p.trans).collect();
    build_graph_from_positions(&positions, rewards)
}

pub fn build_graph_from_positions(positions: &[Vec3], rewards: &[f64]) -> Result<PoseGraph> {
    if positions.is_empty() {
        return Err(Error::invalid("empty pose graph"));
    }
    if positions.len() != rewards.len() {
        return Err(Error::invalid(format!(
            "{} positions but {} rewards",
            positions.len(),
            rewards.len()
        )));
    }
    let n = positions.len();
    let mut edges = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (positions[i] - positions[j]).norm();
            edges[i * n + j] = d;
            edges[j * n + i] = d;
        }
    }
    Ok(PoseGraph {
        positions: positions.to_vec(),
        rewards: rewards.to_vec(),
        edges,
    })
}

/// Exact shortest open Hamiltonian path over `subset`, free endpoints, by
/// Held-Karp subset DP (2^d * d^2).
pub fn shortest_hamiltonian_path(g: &PoseGraph, subset: &[usize]) -> Result<f64> {
    let d = subset.len();
    if d == 0 {
        return Err(Error::invalid("empty subset"));
    }
    for &i in subset {
        if i >= g.len() {
            return Err(Error::invalid(format!("node {i} out of range")));
        }
    }
    if d == 1 {
        return Ok(0.0);
    }
    // Stack buffers below this size; selection runs sit on the hot path of
    // every training stage.
    const STACK_D: usize = 6;
    let mut dist_buf = [0.0f64; STACK_D * STACK_D];
    let mut dp_buf = [f64::INFINITY; (1 << STACK_D) * STACK_D];
    let (mut dist_vec, mut dp_vec) = (Vec::new(), Vec::new());
    let full = 1usize << d;
    let (dist, dp): (&mut [f64], &mut [f64]) = if d <= STACK_D {
        (&mut dist_buf[..d * d], &mut dp_buf[..full * d])
    } else {
        dist_vec.resize(d * d, 0.0);
        dp_vec.resize(full * d, f64::INFINITY);
        (&mut dist_vec, &mut dp_vec)
    };
    for a in 0..d {
        for b in 0..d {
            dist[a * d + b] = g.edge(subset[a], subset[b]);
        }
    }
    for i in 0..d {
        dp[(1 << i) * d + i] = 0.0;
    }
    for mask in 1..full {
        for last in 0..d {
            if mask & (1 << last) == 0 {
                continue;
            }
            let cur = dp[mask * d + last];
            if !cur.is_finite() {
                continue;
            }
            let rest = !mask & (full - 1);
            let mut bits = rest;
            while bits != 0 {
                let next = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let nmask = mask | (1 << next);
                let cand = cur + dist[last * d + next];
                if cand < dp[nmask * d + next] {
                    dp[nmask * d + next] = cand;
                }
            }
        }
    }
    let best = (0..d)
        .map(|i| dp[(full - 1) * d + i])
        .fold(f64::INFINITY, f64::min);
    Ok(best)
}

/// Greedy selection: start from an auxiliary node connected to every node by
/// a zero-length edge, then repeatedly hop to the unvisited node maximizing
/// the approximation edge `R_i + lambda * (s_th / d - e_{k,i})`. Ties break
/// toward the lowest node index. Feasibility is reported, not enforced.
pub fn greedy_select(g: &PoseGraph, cfg: &SelectionConfig) -> Result<Selection> {
    let n = g.len();
    if cfg.d == 0 || cfg.d > n {
        return Err(Error::invalid(format!(
            "d = {} out of range for {n} nodes",
            cfg.d
        )));
    }
    let target = cfg.s_th / cfg.d as f64;
    // Bitmask visited set keeps the hot loop allocation-free for n <= 128.
    let mut visited_mask = 0u128;
    let mut visited_vec = if n > 128 { vec![false; n] } else { Vec::new() };
    let mut nodes = Vec::with_capacity(cfg.d);
    let mut total_reward = 0.0;
    let mut path_length = 0.0;
    let mut current: Option<usize> = None; // None = auxiliary start node
    for _ in 0..cfg.d {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..n {
            let seen = if n <= 128 {
                visited_mask & (1u128 << i) != 0
            } else {
                visited_vec[i]
            };
            if seen {
                continue;
            }
            let e = match current {
                Some(k) => g.edge(k, i),
                None => 0.0,
            };
            let score = g.rewards[i] + cfg.lambda * (target - e);
            match best {
                Some((b, _)) if score <= b => {}
                _ => best = Some((score, i)),
            }
        }
        let (_, pick) = best.expect("d <= n guarantees an unvisited node");
        if n <= 128 {
            visited_mask |= 1u128 << pick;
        } else {
            visited_vec[pick] = true;
        }
        // The hop sequence itself is the path the heuristic commits to (the
        // auxiliary start edge has length zero), so coverage is judged on it
        // directly; no exact path solve is needed afterwards.
        if let Some(k) = current {
            path_length += g.edge(k, pick);
        }
        total_reward += g.rewards[pick];
        nodes.push(pick);
        current = Some(pick);
    }
    Ok(Selection {
        nodes,
        total_reward,
        path_length,
        feasible: path_length >= cfg.s_th,
    })
}

/// Operation budget for [`brute_force_select`]: C(n,d) * 2^d * d^2 must stay
/// under this (the default admits n = 16, d = 6 with headroom).
pub const BRUTE_FORCE_BUDGET: f64 = 5e7;

fn binomial(n: usize, k: usize) -> f64 {
    let mut acc = 1.0;
    for i in 0..k.min(n) {
        acc *= (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Exact solver: enumerates every d-subset, scores it by its shortest
/// Hamiltonian path, and returns the max-reward subset meeting the coverage
/// threshold (ties: lexicographically smallest index set). When no subset is
/// feasible the max-reward subset is returned flagged infeasible.
pub fn brute_force_select(g: &PoseGraph, cfg: &SelectionConfig) -> Result<Selection> {
    let n = g.len();
    if cfg.d == 0 || cfg.d > n {
        return Err(Error::invalid(format!(
            "d = {} out of range for {n} nodes",
            cfg.d
        )));
    }
    let cost = binomial(n, cfg.d) * (1u64 << cfg.d) as f64 * (cfg.d * cfg.d) as f64;
    if cost > BRUTE_FORCE_BUDGET {
        return Err(Error::ResourceLimit(format!(
            "brute force cost {cost:.3e} exceeds budget {BRUTE_FORCE_BUDGET:.1e}"
        )));
    }
    let mut best_feasible: Option<(f64, Vec<usize>, f64)> = None;
    let mut best_any: Option<(f64, Vec<usize>, f64)> = None;
    for subset in (0..n).combinations(cfg.d) {
        let reward: f64 = subset.iter().map(|&i| g.rewards[i]).sum();
        let len = shortest_hamiltonian_path(g, &subset)?;
        // Lexicographically smallest set wins ties because enumeration is
        // lexicographic and replacement is strict.
        if len >= cfg.s_th {
            if best_feasible.as_ref().map_or(true, |(r, _, _)| reward > *r) {
                best_feasible = Some((reward, subset.clone(), len));
            }
        }
        if best_any.as_ref().map_or(true, |(r, _, _)| reward > *r) {
            best_any = Some((reward, subset, len));
        }
    }
    let (reward, nodes, path_length, feasible) = match best_feasible {
        Some((r, s, l)) => (r, s, l, true),
        None => {
            let (r, s, l) = best_any.expect("at least one subset exists");
            (r, s, l, false)
        }
    };
    Ok(Selection {
        nodes,
        total_reward: reward,
        path_length,
        feasible,
    })
}

/// One row of the solver benchmark CSV.
#[derive(Debug, Clone)]
pub struct BenchRecord {
    pub instance_seed: u64,
    pub n: usize,
    pub d: usize,
    pub solver: String,
    pub reward: f64,
    pub path_length: f64,
    pub feasible: bool,
    pub micros: f64,
}

pub fn bench_csv_header() -> &'static str {
    "instance_seed,n,d,solver,reward,path_length,feasible,micros"
}

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.instance_seed,
            self.n,
            self.d,
            self.solver,
            self.reward,
            self.path_length,
            self.feasible,
            self.micros
        )
    }
}

/// Random instance with positions in the unit cube and rewards in [0, 1].
pub fn random_instance(n: usize, seed: u64) -> PoseGraph {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<Vec3> = (0..n)
        .map(|_| {
            Vec3::new(
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
            )
        })
        .collect();
    let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    build_graph_from_positions(&positions, &rewards).expect("nonempty")
}

fn time_micros<T>(reps: usize, mut f: impl FnMut() -> T) -> (T, f64) {
    let mut out = f();
    let start = Instant::now();
    for _ in 0..reps {
        out = f();
    }
    (out, start.elapsed().as_secs_f64() * 1e6 / reps as f64)
}

/// Times both solvers on random instances; brute force is skipped where its
/// budget would be exceeded.
pub fn bench_solvers(sizes: &[usize], cfg: &SelectionConfig, seeds: &[u64]) -> Vec<BenchRecord> {
    let mut records = Vec::new();
    for &n in sizes {
        for &seed in seeds {
            let g = random_instance(n, seed);
            let cfg_n = SelectionConfig {
                d: cfg.d.min(n),
                ..*cfg
            };
            let reps = if n <= 32 { 100 } else { 10 };
            let (greedy, gt) = time_micros(reps, || greedy_select(&g, &cfg_n).expect("valid cfg"));
            records.push(BenchRecord {
                instance_seed: seed,
                n,
                d: cfg_n.d,
                solver: "greedy".into(),
                reward: greedy.total_reward,
                path_length: greedy.path_length,
                feasible: greedy.feasible,
                micros: gt,
            });
            if let Ok(first) = brute_force_select(&g, &cfg_n) {
                let (_, bt) = time_micros(reps.min(20), || {
                    brute_force_select(&g, &cfg_n).expect("within budget")
                });
                records.push(BenchRecord {
                    instance_seed: seed,
                    n,
                    d: cfg_n.d,
                    solver: "brute_force".into(),
                    reward: first.total_reward,
                    path_length: first.path_length,
                    feasible: first.feasible,
                    micros: bt,
                });
            }
        }
    }
    records
}
