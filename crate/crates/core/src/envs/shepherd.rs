//! Shepherd: catch a descending sheep with a portable cage.
//!
//! The sheep descends at a fixed speed along a fixed x column. A wall band
//! occludes it (observation slots replaced by a sentinel) until the agent
//! activates the lever, which opens the gate; the sheep then reappears at the
//! gate row with its x coordinate unchanged and keeps descending until it is
//! within catch range of the cage or reaches the bottom border. The agent can
//! pick up and drop the cage with the third action component.

use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShepherdParams {
    pub lever: [f64; 2],
    /// Wall band spans `gate_row <= y <= wall_height` (height per episode).
    pub gate_row: f64,
    pub min_wall_height: f64,
    pub max_wall_height: f64,
    pub sheep_start_y: f64,
    pub sheep_x_span: f64,
    pub min_sheep_speed: f64,
    pub max_sheep_speed: f64,
    /// Lever / cage-grasp interaction distance.
    pub interact_radius: f64,
    /// Sheep-to-cage distance that counts as caught.
    pub catch_radius: f64,
    pub step_scale: f64,
    /// Value written into masked observation slots; outside `[-1, 1]`.
    pub sentinel: f64,
}

impl Default for ShepherdParams {
    fn default() -> Self {
        ShepherdParams {
            lever: [-0.8, -0.2],
            gate_row: 0.1,
            min_wall_height: 0.2,
            max_wall_height: 0.5,
            sheep_start_y: 0.9,
            sheep_x_span: 0.7,
            min_sheep_speed: 0.01,
            max_sheep_speed: 0.04,
            interact_radius: 0.1,
            catch_radius: 0.1,
            step_scale: 0.05,
            sentinel: -1.5,
        }
    }
}

impl ShepherdParams {
    /// Planning variant with lever and cage interaction radii enlarged 50%.
    pub fn for_planning(mut self) -> Self {
        self.interact_radius *= 1.5;
        self.catch_radius *= 1.5;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SheepPhase {
    /// Visible, descending above the wall.
    Above,
    /// Hidden behind the wall, waiting for the gate.
    Hidden,
    /// Visible below the gate (or passed an already-open gate).
    Below,
    /// Stopped: caught or at the bottom border.
    Stopped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShepherdState {
    pub agent: [f64; 2],
    pub sheep: [f64; 2],
    pub sheep_speed: f64,
    pub phase: SheepPhase,
    pub cage: [f64; 2],
    pub carried: bool,
    pub wall_height: f64,
    pub gate_open: bool,
    pub caught: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ShepherdEvents {
    pub lever_activated: bool,
    pub occluded: bool,
    pub reappeared: bool,
    pub caught: bool,
}

pub fn reset(params: &ShepherdParams, rng: &mut RngStream) -> ShepherdState {
    ShepherdState {
        agent: [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)],
        sheep: [
            rng.uniform(-params.sheep_x_span, params.sheep_x_span),
            params.sheep_start_y,
        ],
        sheep_speed: rng.uniform(params.min_sheep_speed, params.max_sheep_speed),
        phase: SheepPhase::Above,
        cage: [
            rng.uniform(-params.sheep_x_span, params.sheep_x_span),
            rng.uniform(-0.8, -0.1),
        ],
        carried: false,
        wall_height: rng.uniform(params.min_wall_height, params.max_wall_height),
        gate_open: false,
        caught: false,
    }
}

/// Planning reset: the agent starts on the right side holding the cage.
pub fn reset_for_planning(params: &ShepherdParams, rng: &mut RngStream) -> ShepherdState {
    let mut state = reset(params, rng);
    state.agent = [0.9, rng.uniform(-0.8, 0.8)];
    state.carried = true;
    state.cage = state.agent;
    state
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn step(params: &ShepherdParams, state: &mut ShepherdState, action: &[f64]) -> ShepherdEvents {
    let mut events = ShepherdEvents::default();

    // Agent motion and cage handling.
    for axis in 0..2 {
        state.agent[axis] =
            (state.agent[axis] + params.step_scale * action[axis]).clamp(-1.0, 1.0);
    }
    if action[2] > 0.0 {
        if !state.carried && dist(state.agent, state.cage) < params.interact_radius {
            state.carried = true;
        }
    } else {
        state.carried = false;
    }
    if state.carried {
        state.cage = state.agent;
    }

    // Lever opens the gate (latched).
    if !state.gate_open && dist(state.agent, params.lever) < params.interact_radius {
        state.gate_open = true;
        events.lever_activated = true;
        if state.phase == SheepPhase::Hidden {
            state.sheep[1] = params.gate_row;
            state.phase = SheepPhase::Below;
            events.reappeared = true;
        }
    }

    // Sheep descent; x never changes. On the reappearance step the sheep
    // sits exactly at the gate row and resumes descending next step.
    if !events.reappeared {
        match state.phase {
            SheepPhase::Above => {
                state.sheep[1] -= state.sheep_speed;
                if state.sheep[1] <= state.wall_height {
                    if state.gate_open {
                        state.phase = SheepPhase::Below;
                    } else {
                        state.sheep[1] = state.wall_height;
                        state.phase = SheepPhase::Hidden;
                        events.occluded = true;
                    }
                }
            }
            SheepPhase::Hidden => {}
            SheepPhase::Below => {
                state.sheep[1] -= state.sheep_speed;
                if state.sheep[1] <= -1.0 {
                    state.sheep[1] = -1.0;
                    state.phase = SheepPhase::Stopped;
                }
            }
            SheepPhase::Stopped => {}
        }
    }

    // Catch check whenever the sheep is visible and still moving.
    if !state.caught
        && matches!(state.phase, SheepPhase::Above | SheepPhase::Below)
        && dist(state.sheep, state.cage) < params.catch_radius
    {
        state.caught = true;
        state.phase = SheepPhase::Stopped;
        events.caught = true;
    }

    events
}

pub fn sheep_visible(state: &ShepherdState) -> bool {
    state.phase != SheepPhase::Hidden
}

pub fn observe(params: &ShepherdParams, state: &ShepherdState) -> Vec<f64> {
    let (sx, sy) = if sheep_visible(state) {
        (state.sheep[0], state.sheep[1])
    } else {
        (params.sentinel, params.sentinel)
    };
    vec![
        state.wall_height,
        state.agent[0],
        state.agent[1],
        sx,
        sy,
        state.cage[0],
        state.cage[1],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mid_state(params: &ShepherdParams) -> ShepherdState {
        ShepherdState {
            agent: [0.0, 0.0],
            sheep: [0.3, 0.9],
            sheep_speed: 0.04,
            phase: SheepPhase::Above,
            cage: [0.5, -0.5],
            carried: false,
            wall_height: 0.4,
            gate_open: false,
            caught: false,
        }
    }

    #[test]
    fn occluded_sheep_reads_sentinel() {
        let params = ShepherdParams::default();
        let mut s = mid_state(&params);
        for _ in 0..40 {
            step(&params, &mut s, &[0.0, 0.0, 0.0]);
        }
        assert_eq!(s.phase, SheepPhase::Hidden);
        let obs = observe(&params, &s);
        assert_eq!(obs[3], params.sentinel);
        assert_eq!(obs[4], params.sentinel);
    }

    #[test]
    fn reappearance_keeps_x_exactly() {
        let params = ShepherdParams::default();
        let mut s = mid_state(&params);
        let x_before = s.sheep[0];
        while s.phase != SheepPhase::Hidden {
            step(&params, &mut s, &[0.0, 0.0, 0.0]);
        }
        // Walk the agent onto the lever.
        s.agent = params.lever;
        let ev = step(&params, &mut s, &[0.0, 0.0, 0.0]);
        assert!(ev.lever_activated && ev.reappeared);
        assert_eq!(s.sheep[0].to_bits(), x_before.to_bits());
        assert_eq!(s.sheep[1], params.gate_row);
        assert_eq!(s.phase, SheepPhase::Below);
    }

    #[test]
    fn cage_moves_only_when_grasped() {
        let params = ShepherdParams::default();
        let mut s = mid_state(&params);
        s.agent = [0.48, -0.48];
        let cage0 = s.cage;
        // Negative grasp never picks up.
        for _ in 0..10 {
            step(&params, &mut s, &[0.5, 0.0, -1.0]);
        }
        assert_eq!(s.cage, cage0);
        // Positive grasp in proximity carries the cage along.
        s.agent = [0.49, -0.49];
        step(&params, &mut s, &[0.2, 0.2, 1.0]);
        assert!(s.carried);
        assert_eq!(s.cage, s.agent);
    }

    #[test]
    fn sheep_stops_at_cage() {
        let params = ShepherdParams::default();
        let mut s = mid_state(&params);
        s.gate_open = true;
        s.cage = [0.3, 0.0];
        let mut caught = false;
        for _ in 0..100 {
            let ev = step(&params, &mut s, &[0.0, 0.0, 0.0]);
            if ev.caught {
                caught = true;
                break;
            }
        }
        assert!(caught);
        assert_eq!(s.phase, SheepPhase::Stopped);
        let y = s.sheep[1];
        step(&params, &mut s, &[0.0, 0.0, 0.0]);
        assert_eq!(s.sheep[1], y);
    }

    #[test]
    fn sentinel_outside_legal_range() {
        let params = ShepherdParams::default();
        assert!(params.sentinel < -1.0 || params.sentinel > 1.0);
    }
}
