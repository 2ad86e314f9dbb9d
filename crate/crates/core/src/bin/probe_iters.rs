use rtd_core::network::generate_channel_set;
use rtd_core::rtd::{run_rtd, RtdOptions};
use rtd_core::SystemConfig;
use std::time::Instant;

fn main() {
    let opts = RtdOptions::default();
    for mu in [0.0, 0.3, 0.5, 0.7, 0.9] {
        let mut cfg = SystemConfig::desk();
        cfg.csi_error_level = mu;
        let mut worst = 0;
        let t0 = Instant::now();
        let mut counts = Vec::new();
        for drop in 0..16 {
            let set = generate_channel_set(&cfg, drop).unwrap();
            let r = run_rtd(&cfg, &set, drop, &opts).unwrap();
            worst = worst.max(r.iters_used);
            counts.push(r.iters_used);
        }
        println!("mu={mu}: iters {:?} worst {} ({:.1?}/16 drops)", counts, worst, t0.elapsed());
    }
}
