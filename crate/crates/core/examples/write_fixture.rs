//! Writes a simulated dataset as CSV with columns `y, d, x1.., z1..`.
//!
//! `cargo run --release --example write_fixture -- out.csv [rho] [seed]`

use std::io::Write;

use hdiv::sim::{generate_dgp, PiVariant, SimConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let path = args.first().expect("output path");
    let rho: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2024);
    let config = SimConfig {
        n: 200,
        p_x: 20,
        p_z: 10,
        pi: if rho == 0.0 {
            PiVariant::Null
        } else {
            PiVariant::P1
        },
        rho,
        ..SimConfig::default()
    };
    let data = generate_dgp(&config, seed).expect("dgp");
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).expect("create"));
    let mut header = vec!["y".to_string(), "d".to_string()];
    header.extend((1..=config.p_x).map(|k| format!("x{k}")));
    header.extend((1..=config.p_z).map(|k| format!("z{k}")));
    writeln!(out, "{}", header.join(",")).unwrap();
    for i in 0..data.n() {
        let mut row = vec![format!("{:.6}", data.y()[i]), format!("{:.6}", data.d()[i])];
        row.extend(data.w().row(i).iter().map(|v| format!("{v:.6}")));
        writeln!(out, "{}", row.join(",")).unwrap();
    }
}
