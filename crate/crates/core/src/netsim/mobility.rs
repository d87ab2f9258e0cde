//! Random-waypoint mobility in a rectangle.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::resource::Tick;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// One node's walker: head to a random waypoint at a random speed, pause,
/// repeat.
#[derive(Clone, Debug, PartialEq)]
pub struct Waypoint {
    pub position: Position,
    /// Speed range in meters per tick.
    pub speed: (f64, f64),
    pub pause: Tick,
    target: Option<(Position, f64)>,
    paused: Tick,
}

impl Waypoint {
    pub fn new(position: Position, speed: (f64, f64), pause: Tick) -> Self {
        Waypoint {
            position,
            speed,
            pause,
            target: None,
            paused: 0,
        }
    }

    pub fn is_static(&self) -> bool {
        self.speed.1 <= 0.0
    }

    /// Advances one tick. Static walkers never draw from `rng`.
    pub fn step<R: Rng>(&mut self, area: &Area, rng: &mut R) {
        if self.is_static() {
            return;
        }
        if self.paused > 0 {
            self.paused -= 1;
            return;
        }
        let (target, speed) = match self.target {
            Some(t) => t,
            None => {
                let t = Position::new(rng.gen_range(0.0..=area.width), rng.gen_range(0.0..=area.height));
                let (lo, hi) = self.speed;
                let v = if hi > lo { rng.gen_range(lo..=hi) } else { hi };
                self.target = Some((t, v));
                (t, v)
            }
        };
        let d = self.position.distance(&target);
        if speed <= 0.0 {
            // drew a standstill leg; try again next tick
            self.target = None;
        } else if d <= speed {
            self.position = target;
            self.target = None;
            self.paused = self.pause;
        } else {
            let f = speed / d;
            self.position.x += (target.x - self.position.x) * f;
            self.position.y += (target.y - self.position.y) * f;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const AREA: Area = Area { width: 100.0, height: 50.0 };

    #[test]
    fn static_walker_stays_put() {
        let mut w = Waypoint::new(Position::new(3.0, 4.0), (0.0, 0.0), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            w.step(&AREA, &mut rng);
        }
        assert_eq!(w.position, Position::new(3.0, 4.0));
    }

    #[test]
    fn speed_bounds_each_step_and_area_holds() {
        let mut w = Waypoint::new(Position::new(0.0, 0.0), (1.0, 3.0), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut paused_ticks = 0;
        for _ in 0..2000 {
            let before = w.position;
            w.step(&AREA, &mut rng);
            let moved = before.distance(&w.position);
            assert!(moved <= 3.0 + 1e-9);
            if moved == 0.0 {
                paused_ticks += 1;
            }
            assert!((0.0..=AREA.width).contains(&w.position.x));
            assert!((0.0..=AREA.height).contains(&w.position.y));
        }
        assert!(paused_ticks > 0);
    }

    #[test]
    fn distance_is_euclidean() {
        assert_eq!(Position::new(0.0, 0.0).distance(&Position::new(3.0, 4.0)), 5.0);
    }
}
