//! The bundled lecture-hall scenario end to end: lectures, peer exchange,
//! a clique fetch, a deadlock injection and a quiz across partitions.
//!
//! ```bash
//! cargo run --example lecture_hall -- 7
//! ```

use std::path::Path;

use carla::netsim::run;
use carla::scenario;

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/lecture_hall.json");
    let config = scenario::load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let out = run(config, seed);
    let r = &out.report;
    println!("seed {seed}: {} nodes, stopped after tick {}", r.nodes, r.last_tick);
    println!("exchanges {} ({} units), lectures {}, authored {}", r.exchanges, r.exchange_units, r.lectures, r.authored);
    println!("partitions mean {:.2}, max {}", r.partitions_mean, r.partitions_max);
    println!("deadlocks detected {}, resolved {}", r.deadlocks_detected, r.deadlocks_resolved);
    for (cause, t) in &r.backbone.by_cause {
        println!("backbone {cause}: {} sessions, {} units, cost {:.1}", t.sessions, t.units, t.cost);
    }
    let reached = r.latency.values().filter(|l| l.is_some()).count();
    println!("{reached}/{} resources reached 90% of interested nodes", r.latency.len());
    println!("quiz: {} answers, {} jokers", r.quiz_answers, r.joker_uses);
    print!("{}", r.ranking_csv());
}
