use fkiso::critical::*;
use std::f64::consts::PI;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let cfg = IicDriftConfig {
        alpha: PI / 3.0,
        beta: PI / 2.0,
        theta: PI / 2.0,
        n: 256.0,
        window_radius: 32.0,
        domain_cols: 300,
        domain_rows: 400,
        increments: 240,
        q: 4.0,
        thin: 4,
        burn_in: 200,
        seed: 4,
        streams: 2,
        max_snapshots: 8000,
    };
    let (res, incs) = iic_drift(&cfg);
    println!(
        "count {} snapshots {} acceptance {:.4} mean {:.4} se {:.4} maxabs {:.2} violations {}",
        res.count, res.snapshots, res.acceptance, res.mean, res.se, res.max_abs_delta, res.bound_violations
    );
    let mut hist = std::collections::BTreeMap::new();
    for i in &incs {
        *hist.entry((i.delta * 2.0).round() as i64).or_insert(0) += 1;
    }
    println!("delta histogram (x0.5): {hist:?}");
    println!("elapsed {:.1?}", t0.elapsed());
}
