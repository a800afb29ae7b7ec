//! Probe the s1b abort: print coefficient details near the end of the run.

use safe_smc::safeguard::coefficients;
use safe_smc::scenarios;
use safe_smc::sim::run;

fn main() {
    let sc = scenarios::demo("robot-s1b").unwrap();
    let out = run(&sc).unwrap();
    println!("outcome {:?}", out.outcome);
    let n = out.records.len();
    for r in &out.records[n.saturating_sub(12)..] {
        let co = coefficients(
            &r.x, r.z, &r.s, &r.u_smc, &sc.plant, &sc.sliding, &sc.safety, &sc.params,
        )
        .unwrap();
        println!(
            "t {:.4} x [{:+.4} {:+.4}] z {:+.5} h {:+.5} mode {} us {:+.3} | a1 {:+.5} a2 {:+.5} b {:+.5} c {:+.4} psi {:+.5}",
            r.t, r.x[0], r.x[1], r.z, r.h, r.mode, r.u_s, co.a[0], co.a[1], co.b, co.c, co.psi
        );
    }
}
