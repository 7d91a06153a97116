use std::collections::{BTreeMap, VecDeque};

use crate::engine::{Action, EntityId, GameEvent, GameState};

use super::image_ops::{preprocess, GrayImage};
use super::render::{render_frame, Frame};
use super::{ObsConfig, ObsError};

/// Stacked observation with logical shape `(height, width, frames)` and
/// values in `[0, 1]`. Storage is frame-major (one plane per frame, oldest
/// first), which is the layout the network consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsTensor {
    height: usize,
    width: usize,
    frames: usize,
    data: Vec<f32>,
}

impl ObsTensor {
    pub fn zeros(height: usize, width: usize, frames: usize) -> Self {
        ObsTensor {
            height,
            width,
            frames,
            data: vec![0.0; height * width * frames],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.frames)
    }

    pub fn get(&self, y: usize, x: usize, k: usize) -> f32 {
        self.data[(k * self.height + y) * self.width + x]
    }

    /// Plane `k` (0 = oldest).
    pub fn frame(&self, k: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[k * plane..(k + 1) * plane]
    }

    /// Channel-major view for the network.
    pub fn as_chw(&self) -> &[f32] {
        &self.data
    }
}

/// Sliding window of the most recent preprocessed frames.
#[derive(Clone, Debug)]
pub struct FrameStack {
    capacity: usize,
    frames: VecDeque<GrayImage>,
}

impl FrameStack {
    pub fn new(capacity: usize) -> Self {
        FrameStack {
            capacity,
            frames: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, frame: GrayImage) {
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    /// Window as a tensor; missing older frames are zero planes.
    pub fn tensor(&self) -> ObsTensor {
        let Some(first) = self.frames.front() else {
            return ObsTensor::zeros(0, 0, self.capacity);
        };
        let (h, w) = (first.height, first.width);
        let mut t = ObsTensor::zeros(h, w, self.capacity);
        let pad = self.capacity - self.frames.len();
        let plane = h * w;
        for (k, f) in self.frames.iter().enumerate() {
            let dst = &mut t.data[(pad + k) * plane..(pad + k + 1) * plane];
            for (d, &p) in dst.iter_mut().zip(&f.pixels) {
                *d = p as f32 / 255.0;
            }
        }
        t
    }
}

/// Aggregate of one decision step (`action_repeat` engine ticks).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RepeatOutcome {
    pub rewards: BTreeMap<EntityId, f64>,
    pub events: Vec<GameEvent>,
    pub ticks: u32,
    pub terminal: bool,
}

/// Applies `actions` for up to `cfg.action_repeat` ticks, stopping at a
/// terminal tick, then pushes the final preprocessed frame onto every stack.
pub fn repeat_and_observe(
    state: &mut GameState,
    stacks: &mut BTreeMap<EntityId, FrameStack>,
    actions: &BTreeMap<EntityId, Action>,
    cfg: &ObsConfig,
) -> Result<RepeatOutcome, ObsError> {
    let mut out = RepeatOutcome {
        rewards: state.player_ids().into_iter().map(|id| (id, 0.0)).collect(),
        ..RepeatOutcome::default()
    };
    for _ in 0..cfg.action_repeat {
        let step = state.step(actions)?;
        for (id, r) in step.rewards {
            *out.rewards.entry(id).or_insert(0.0) += r;
        }
        out.events.extend(step.events);
        out.ticks += 1;
        if step.terminal {
            out.terminal = true;
            break;
        }
    }
    let gray = preprocess(&render_frame(state, cfg.cell_px), cfg)?;
    for stack in stacks.values_mut() {
        stack.push(gray.clone());
    }
    Ok(out)
}

/// A game state plus per-player frame stacks.
#[derive(Clone, Debug)]
pub struct Environment {
    state: GameState,
    cfg: ObsConfig,
    stacks: BTreeMap<EntityId, FrameStack>,
}

impl Environment {
    pub fn new(state: GameState, cfg: ObsConfig) -> Result<Self, ObsError> {
        cfg.validate()?;
        cfg.check_grid(state.grid.width, state.grid.height)?;
        let mut env = Environment {
            state,
            cfg,
            stacks: BTreeMap::new(),
        };
        env.reset_stacks()?;
        Ok(env)
    }

    fn reset_stacks(&mut self) -> Result<(), ObsError> {
        let gray = preprocess(&render_frame(&self.state, self.cfg.cell_px), &self.cfg)?;
        self.stacks = self
            .state
            .player_ids()
            .into_iter()
            .map(|id| {
                let mut s = FrameStack::new(self.cfg.frame_stack);
                s.push(gray.clone());
                (id, s)
            })
            .collect();
        Ok(())
    }

    /// Starts a new episode from `state`.
    pub fn reset(&mut self, state: GameState) -> Result<(), ObsError> {
        self.cfg.check_grid(state.grid.width, state.grid.height)?;
        self.state = state;
        self.reset_stacks()
    }

    pub fn state(&self) -> &GameState {
        &self.state
    }

    pub fn config(&self) -> &ObsConfig {
        &self.cfg
    }

    pub fn observation(&self, id: EntityId) -> Option<ObsTensor> {
        self.stacks.get(&id).map(FrameStack::tensor)
    }

    pub fn step(&mut self, actions: &BTreeMap<EntityId, Action>) -> Result<RepeatOutcome, ObsError> {
        repeat_and_observe(&mut self.state, &mut self.stacks, actions, &self.cfg)
    }

    pub fn render(&self) -> Frame {
        render_frame(&self.state, self.cfg.cell_px)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tagged(v: u8) -> GrayImage {
        GrayImage {
            width: 2,
            height: 2,
            pixels: vec![v; 4],
        }
    }

    #[test]
    fn window_keeps_latest_frames_in_order() {
        let mut s = FrameStack::new(3);
        s.push(tagged(10));
        let t = s.tensor();
        assert_eq!(t.shape(), (2, 2, 3));
        assert_eq!((t.get(0, 0, 0), t.get(0, 0, 2)), (0.0, 10.0 / 255.0));
        for v in [20, 30, 40] {
            s.push(tagged(v));
        }
        let t = s.tensor();
        let firsts: Vec<f32> = (0..3).map(|k| t.get(1, 1, k) * 255.0).collect();
        assert_eq!(firsts.iter().map(|v| v.round() as u8).collect::<Vec<_>>(), vec![20, 30, 40]);
    }
}
