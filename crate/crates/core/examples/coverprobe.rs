//! Probe the space-cover builder: set HYPFLOW_COVER_TRACE=1 to watch the
//! greedy pass and the audit rounds converge (or fail to).

use hypflow_core::dolgopyat::{build_partitions, DolgopyatConfig};
use hypflow_core::model::{AlgebraVector, Bolza};
use hypflow_core::rng::Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let rho: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let b: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1024.0);
    let theta_cd: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(3.0);
    let bolza = Bolza::standard();
    let mut cfg = DolgopyatConfig::new(rho, 1.0, b, 0).unwrap();
    cfg.theta_cd = theta_cd;
    cfg.validate().unwrap();
    eprintln!(
        "probe: rho {rho} b {b} r {:.4} support {:.4} outer {:.4}",
        cfg.radius(),
        cfg.support_radius(),
        cfg.outer_radius()
    );
    let t0 = std::time::Instant::now();
    match build_partitions(&bolza, &cfg) {
        Ok(parts) => {
            eprintln!(
                "probe: ok with {} centers in {:.1}s",
                parts.space.len(),
                t0.elapsed().as_secs_f64()
            );
            // False-negative hunt: points placed just inside the ball of a
            // known center must always report covered.
            let r = cfg.radius();
            let mut rng = Rng::new(0xC0FE_BABE);
            let mut worst_missed = 0usize;
            let mut checked = 0usize;
            for i in 0..parts.space.len() {
                let c = parts.space.center(i);
                for _ in 0..4 {
                    let (x, p, m) = (
                        rng.range(-1.0, 1.0),
                        rng.range(-1.0, 1.0),
                        rng.range(-1.0, 1.0),
                    );
                    let n = (x * x + p * p + m * m).sqrt();
                    if !(0.05..=1.0).contains(&n) {
                        continue;
                    }
                    let s = 0.99 * r / n;
                    let v = AlgebraVector::new(x * s, p * s, m * s);
                    let q = match bolza.translate_point(c, &v.exp()) {
                        Ok(q) => q,
                        Err(_) => continue,
                    };
                    checked += 1;
                    if !parts.space.covered_within(&q, r) {
                        worst_missed += 1;
                        if worst_missed <= 5 {
                            let d = bolza.quotient_distance(&q, c);
                            eprintln!(
                                "probe: FALSE NEGATIVE at center {i}: quotient distance {d:.6} vs r = {r:.6}"
                            );
                        }
                    }
                }
            }
            eprintln!("probe: boundary probes {checked}, false negatives {worst_missed}");
        }
        Err(e) => eprintln!("probe: FAILED in {:.1}s: {e}", t0.elapsed().as_secs_f64()),
    }
}
