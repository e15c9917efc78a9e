//! Runs one size cell and prints the rates.
//!
//! `cargo run --release --example size_cell -- 150 50 10 100 [hetero|homo] [c_omega]`

use hdiv::sim::{run_size_experiment, SimConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let num = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let config = SimConfig {
        n: num(0, 150),
        p_x: num(1, 50),
        p_z: num(2, 10),
        replications: num(3, 100),
        hetero: args.get(4).is_some_and(|s| s == "hetero"),
        c_omega: args
            .get(5)
            .and_then(|s| s.parse().ok())
            .unwrap_or(SimConfig::default().c_omega),
        ..SimConfig::default()
    };
    let start = std::time::Instant::now();
    let table = run_size_experiment(&config).expect("size experiment");
    println!(
        "M {:.3} ({:.3})  Q {:.3}  PM {:.3} ({:.3})  completed {} failed {}  {:.1}s",
        table.m.rate,
        table.m.se,
        table.q.rate,
        table.pm.rate,
        table.pm.se,
        table.completed,
        table.failures.total(),
        start.elapsed().as_secs_f64()
    );
    for m in &table.failures.messages {
        println!("  {m}");
    }
}
