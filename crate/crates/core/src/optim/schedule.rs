//! Iteration-level schedule of the staged curriculum.

use crate::guidance::TimestepAnnealing;

/// Weight of the object losses during the first stage: `λ (t/T)²`.
pub fn object_weight(lambda: f64, iter: usize, total: usize) -> f64 {
    let r = iter as f64 / total as f64;
    lambda * r * r
}

pub fn in_stage_one(iter: usize, gamma: f64, total: usize) -> bool {
    (iter as f64) < gamma * total as f64
}

/// First iteration of the second stage.
pub fn stage_boundary(gamma: f64, total: usize) -> usize {
    (0..=total).find(|&t| !in_stage_one(t, gamma, total)).unwrap_or(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOneAction {
    Scene,
    Edge(usize),
}

/// Every `(n_e + 1)`-th iteration of the first stage optimizes the scene
/// prompt; the others pick edge `t mod n_e`.
pub fn stage_one_action(iter: usize, n_edges: usize) -> StageOneAction {
    if n_edges == 0 || iter % (n_edges + 1) == 0 {
        StageOneAction::Scene
    } else {
        StageOneAction::Edge(iter % n_edges)
    }
}

/// Round-robin edge (or object, for edgeless scenes) index in the second stage.
pub fn round_robin(iter: usize, n: usize) -> usize {
    iter % n.max(1)
}

/// Timestep annealing for a schedule: one warm-up from iteration 0, and for
/// the staged schedule a second warm-up over `fraction` of the iterations
/// that remain after the stage boundary.
pub fn annealing(warmup_iters: usize, restart: Option<(usize, usize, f64)>) -> TimestepAnnealing {
    TimestepAnnealing {
        warmup_iters,
        restart: restart.map(|(boundary, total, fraction)| {
            let remaining = total.saturating_sub(boundary);
            (boundary, (fraction * remaining as f64).round() as usize)
        }),
    }
}
