//! Robot Remote Control: an agent in one room, a robot in another.
//!
//! Once the agent comes within the interaction radius of the fixed computer,
//! control latches on and the same actions move the robot from then on.
//! Whether control is latched is not observable directly.

use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RrcParams {
    pub computer: [f64; 2],
    pub goal: [f64; 2],
    /// Distance below which control of the robot latches.
    pub interact_radius: f64,
    /// Distance to the goal that counts as planning success.
    pub success_radius: f64,
    /// Displacement per unit action per step.
    pub step_scale: f64,
}

impl Default for RrcParams {
    fn default() -> Self {
        RrcParams {
            computer: [0.8, 0.8],
            goal: [-0.6, -0.6],
            interact_radius: 0.1,
            success_radius: 0.15,
            step_scale: 0.05,
        }
    }
}

impl RrcParams {
    /// Planning variant with the computer's interaction radius enlarged 50%.
    pub fn for_planning(mut self) -> Self {
        self.interact_radius *= 1.5;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RrcState {
    pub agent: [f64; 2],
    pub robot: [f64; 2],
    pub control: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RrcEvents {
    pub control_latched: bool,
}

pub fn reset(_params: &RrcParams, rng: &mut RngStream) -> RrcState {
    RrcState {
        agent: [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)],
        robot: [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)],
        control: false,
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn step(params: &RrcParams, state: &mut RrcState, action: &[f64]) -> RrcEvents {
    let mut events = RrcEvents::default();
    for axis in 0..2 {
        state.agent[axis] =
            (state.agent[axis] + params.step_scale * action[axis]).clamp(-1.0, 1.0);
    }
    if !state.control && dist(state.agent, params.computer) < params.interact_radius {
        state.control = true;
        events.control_latched = true;
    }
    if state.control {
        for axis in 0..2 {
            state.robot[axis] =
                (state.robot[axis] + params.step_scale * action[axis]).clamp(-1.0, 1.0);
        }
    }
    events
}

pub fn observe(state: &RrcState) -> Vec<f64> {
    vec![state.agent[0], state.agent[1], state.robot[0], state.robot[1]]
}

pub fn at_goal(params: &RrcParams, state: &RrcState) -> bool {
    dist(state.robot, params.goal) < params.success_radius
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn robot_still_without_control() {
        let params = RrcParams::default();
        let mut s = RrcState {
            agent: [0.0, 0.0],
            robot: [0.5, 0.5],
            control: false,
        };
        step(&params, &mut s, &[1.0, -1.0]);
        assert_eq!(s.robot, [0.5, 0.5]);
        assert!(!s.control);
    }

    #[test]
    fn control_latches_near_computer_and_robot_follows() {
        let params = RrcParams::default();
        let mut s = RrcState {
            agent: [0.78, 0.78],
            robot: [0.0, 0.0],
            control: false,
        };
        let ev = step(&params, &mut s, &[0.1, 0.1]);
        assert!(ev.control_latched);
        assert!(s.control);
        // Latched control persists and moves the robot from then on.
        step(&params, &mut s, &[1.0, 0.0]);
        assert!(s.control);
        assert!((s.robot[0] - 0.05 * (0.1 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_action_moves_nothing() {
        let params = RrcParams::default();
        let mut s = RrcState {
            agent: [0.2, 0.2],
            robot: [0.1, 0.1],
            control: true,
        };
        step(&params, &mut s, &[0.0, 0.0]);
        assert_eq!(s.agent, [0.2, 0.2]);
        assert_eq!(s.robot, [0.1, 0.1]);
    }

    #[test]
    fn deterministic_given_actions() {
        let params = RrcParams::default();
        let mut rng = RngStream::new(1);
        let start = reset(&params, &mut rng);
        let actions: Vec<[f64; 2]> = (0..30)
            .map(|_| [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)])
            .collect();
        let run = |mut s: RrcState| {
            let mut states = Vec::new();
            for a in &actions {
                step(&params, &mut s, a);
                states.push(s.clone());
            }
            states
        };
        assert_eq!(run(start.clone()), run(start));
    }
}
