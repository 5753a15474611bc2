//! Billiard ball: a point ball on a low-friction square table.
//!
//! Analytic 2D model: per-step friction decay, elastic wall reflection with
//! position mirrored back into bounds, and four corner pocket discs that
//! capture and freeze the ball. Observations are the ball position only; the
//! scenario has no actions.

use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BilliardParams {
    /// Per-step speed decay factor.
    pub friction: f64,
    pub pocket_radius: f64,
    pub min_speed: f64,
    pub max_speed: f64,
    /// Starting positions are drawn uniformly within this half-width.
    pub start_span: f64,
}

impl Default for BilliardParams {
    fn default() -> Self {
        BilliardParams {
            friction: 0.998,
            pocket_radius: 0.12,
            min_speed: 0.02,
            max_speed: 0.08,
            start_span: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilliardState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub alive: bool,
}

/// Outcome flags for one transition.
#[derive(Debug, Clone, Copy, Default)]
pub struct BilliardEvents {
    pub bounced: bool,
    pub pocketed: bool,
}

const POCKETS: [[f64; 2]; 4] = [[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]];

pub fn reset(params: &BilliardParams, rng: &mut RngStream) -> BilliardState {
    let pos = loop {
        let p = [
            rng.uniform(-params.start_span, params.start_span),
            rng.uniform(-params.start_span, params.start_span),
        ];
        if !in_pocket(params, p) {
            break p;
        }
    };
    let speed = rng.uniform(params.min_speed, params.max_speed);
    let angle = rng.uniform(0.0, std::f64::consts::TAU);
    BilliardState {
        pos,
        vel: [speed * angle.cos(), speed * angle.sin()],
        alive: true,
    }
}

fn in_pocket(params: &BilliardParams, pos: [f64; 2]) -> bool {
    POCKETS.iter().any(|p| {
        let dx = pos[0] - p[0];
        let dy = pos[1] - p[1];
        (dx * dx + dy * dy).sqrt() < params.pocket_radius
    })
}

pub fn step(params: &BilliardParams, state: &mut BilliardState, dt: f64) -> BilliardEvents {
    let mut events = BilliardEvents::default();
    if !state.alive {
        return events;
    }
    for axis in 0..2 {
        state.pos[axis] += state.vel[axis] * dt;
        // Mirror back into bounds; speeds are far below the table size, so a
        // single reflection per axis suffices, but loop for safety.
        while state.pos[axis].abs() > 1.0 {
            state.pos[axis] = if state.pos[axis] > 1.0 {
                2.0 - state.pos[axis]
            } else {
                -2.0 - state.pos[axis]
            };
            state.vel[axis] = -state.vel[axis];
            events.bounced = true;
        }
    }
    state.vel[0] *= params.friction;
    state.vel[1] *= params.friction;
    if in_pocket(params, state.pos) {
        state.alive = false;
        state.vel = [0.0, 0.0];
        events.pocketed = true;
    }
    events
}

pub fn observe(state: &BilliardState) -> Vec<f64> {
    vec![state.pos[0], state.pos[1]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_flight_without_friction() {
        let params = BilliardParams {
            friction: 1.0,
            ..BilliardParams::default()
        };
        let mut s = BilliardState {
            pos: [0.0, 0.0],
            vel: [0.1, 0.0],
            alive: true,
        };
        step(&params, &mut s, 1.0);
        assert_eq!(s.pos, [0.1, 0.0]);
    }

    #[test]
    fn wall_reflection_flips_velocity_and_stays_in_bounds() {
        let params = BilliardParams::default();
        let mut s = BilliardState {
            pos: [0.98, 0.0],
            vel: [0.06, 0.0],
            alive: true,
        };
        let ev = step(&params, &mut s, 1.0);
        assert!(ev.bounced);
        assert!(s.vel[0] < 0.0);
        assert!(s.pos[0].abs() <= 1.0);
        assert!((s.pos[0] - 0.96).abs() < 1e-12);
    }

    #[test]
    fn speed_decays_geometrically_between_collisions() {
        let params = BilliardParams::default();
        let mut s = BilliardState {
            pos: [0.0, 0.0],
            vel: [0.01, 0.005],
            alive: true,
        };
        let v0 = (s.vel[0].powi(2) + s.vel[1].powi(2)).sqrt();
        let n = 20;
        for _ in 0..n {
            step(&params, &mut s, 1.0);
        }
        let vn = (s.vel[0].powi(2) + s.vel[1].powi(2)).sqrt();
        let expected = params.friction.powi(n) * v0;
        assert!((vn - expected).abs() < 1e-12);
    }

    #[test]
    fn pocket_freezes_ball() {
        let params = BilliardParams::default();
        let mut s = BilliardState {
            pos: [0.93, 0.97],
            vel: [0.05, 0.02],
            alive: true,
        };
        let ev = step(&params, &mut s, 1.0);
        assert!(ev.pocketed);
        assert!(!s.alive);
        let frozen = s.pos;
        step(&params, &mut s, 1.0);
        assert_eq!(s.pos, frozen);
    }
}
