//! Random-waypoint walkers on a unit-disk graph: partitions split and merge
//! as nodes move.
//!
//! ```bash
//! cargo run --example mobility_partitions
//! ```

use carla::netsim::{Area, ContactGraph, Position, Waypoint};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let area = Area { width: 120.0, height: 80.0 };
    let mut rngs: Vec<ChaCha8Rng> = (0..8)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(42);
            r.set_stream(i + 1);
            r
        })
        .collect();
    let mut walkers: Vec<Waypoint> = (0..8)
        .map(|i| Waypoint::new(Position::new(15.0 * i as f64, 40.0), (1.0, 4.0), 3))
        .collect();
    let ranges = vec![25.0; walkers.len()];
    for tick in 0..=60 {
        if tick > 0 {
            for (w, rng) in walkers.iter_mut().zip(rngs.iter_mut()) {
                w.step(&area, rng);
            }
        }
        if tick % 10 == 0 {
            let positions: Vec<Position> = walkers.iter().map(|w| w.position).collect();
            let graph = ContactGraph::unit_disk(&positions, &ranges);
            println!(
                "tick {tick:>2}: {} edges, partitions {:?}, diameter {}",
                graph.edges().len(),
                graph.partitions(),
                graph.diameter()
            );
        }
    }
}
