use std::path::Path;

use crate::engine::{GameState, Side, TileKind};

use super::ObsError;

/// RGB image, row-major, three bytes per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Frame {
            width,
            height,
            pixels: rgb.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, rgb: [u8; 3]) {
        for y in y0..(y0 + h).min(self.height) {
            for x in x0..(x0 + w).min(self.width) {
                let i = (y * self.width + x) * 3;
                self.pixels[i..i + 3].copy_from_slice(&rgb);
            }
        }
    }

    pub fn count_color(&self, rgb: [u8; 3]) -> usize {
        self.pixels.chunks_exact(3).filter(|p| *p == rgb).count()
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ObsError> {
        image::save_buffer(
            path,
            &self.pixels,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(())
    }
}

/// Solid colours for every kind of thing drawn on screen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Palette {
    pub background: [u8; 3],
    pub soft_wall: [u8; 3],
    pub hard_wall: [u8; 3],
    pub pond: [u8; 3],
    pub base: [u8; 3],
    pub base_destroyed: [u8; 3],
    pub player: [u8; 3],
    pub enemy: [u8; 3],
    pub bullet: [u8; 3],
}

pub const PALETTE: Palette = Palette {
    background: [0, 0, 0],
    soft_wall: [170, 85, 40],
    hard_wall: [128, 128, 128],
    pond: [30, 60, 200],
    base: [255, 215, 0],
    base_destroyed: [90, 70, 0],
    player: [40, 200, 60],
    enemy: [220, 40, 40],
    bullet: [255, 255, 255],
};

impl Palette {
    pub fn tile(&self, kind: TileKind) -> [u8; 3] {
        match kind {
            TileKind::Empty => self.background,
            TileKind::SoftWall => self.soft_wall,
            TileKind::HardWall => self.hard_wall,
            TileKind::Pond => self.pond,
            TileKind::Base => self.base,
        }
    }
}

/// Draws terrain, then tanks as full cells, then bullets as small centred
/// squares (a quarter of a cell wide).
pub fn render_frame(state: &GameState, cell_px: usize) -> Frame {
    let g = &state.grid;
    let mut frame = Frame::filled(g.width * cell_px, g.height * cell_px, PALETTE.background);
    for cell in g.cells() {
        let tile = g.get(cell).expect("cell from grid");
        let colour = match tile {
            TileKind::Empty => continue,
            TileKind::Base if !state.base_alive => PALETTE.base_destroyed,
            other => PALETTE.tile(other),
        };
        frame.fill_rect(cell.col as usize * cell_px, cell.row as usize * cell_px, cell_px, cell_px, colour);
    }
    for t in state.tanks.iter().filter(|t| t.alive) {
        let colour = match t.side {
            Side::Player => PALETTE.player,
            Side::Enemy => PALETTE.enemy,
        };
        frame.fill_rect(t.pos.col as usize * cell_px, t.pos.row as usize * cell_px, cell_px, cell_px, colour);
    }
    let b = (cell_px / 4).max(1);
    let off = (cell_px - b) / 2;
    for bullet in &state.bullets {
        frame.fill_rect(
            bullet.pos.col as usize * cell_px + off,
            bullet.pos.row as usize * cell_px + off,
            b,
            b,
            PALETTE.bullet,
        );
    }
    frame
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{load_stage, EngineConfig, DEFAULT_STAGE};

    #[test]
    fn frame_matches_grid_size() {
        let s = load_stage(DEFAULT_STAGE, &EngineConfig::default(), 0).unwrap();
        let f = render_frame(&s, 8);
        assert_eq!((f.width, f.height), (104, 104));
        assert_eq!(f.count_color(PALETTE.base), 64);
    }
}
