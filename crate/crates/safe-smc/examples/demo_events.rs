//! Run every built-in demo and print its event log, for quick inspection
//! of the case-study behavior.

use safe_smc::scenarios;
use safe_smc::sim::{run, RunOutcome};
use safe_smc::verify;

fn main() {
    for name in scenarios::DEMO_NAMES {
        let sc = scenarios::demo(name).unwrap();
        let start = std::time::Instant::now();
        let out = run(&sc).unwrap();
        let wall = start.elapsed().as_secs_f64();
        let e = &out.events;
        println!("== {name} ({wall:.2} s wall, {} records)", out.records.len());
        println!(
            "   outcome {:?}  min_h {:.6}  t1 {:?}  resets {:?}  t_omega {:?}  reach {:?}",
            out.outcome, e.min_h, e.t1, e.reset_times, e.t_omega, e.reach_time
        );
        if out.outcome == RunOutcome::Completed {
            let x_end = &out.records.last().unwrap().x;
            println!(
                "   final x [{:.4}, {:.4}]  |x|2 {:.4}",
                x_end[0],
                x_end[1],
                x_end.norm()
            );
            let ineq = verify::inequality_residuals(&out.records, &sc).unwrap();
            let lyap = verify::lyapunov_report(&out.records, &sc).unwrap();
            let cert = verify::barrier_certificate(&out.records, &sc).unwrap();
            println!(
                "   ineq samples {} min {:?} | lyap viol {}/{} band {:.4} tol {:.3} | cert min {:?} tol {:.3}",
                ineq.samples,
                ineq.min_residual,
                lyap.violations.len(),
                lyap.samples,
                lyap.chattering_band,
                lyap.tol_fd,
                cert.min_residual,
                cert.tol_fd
            );
            let us_int: f64 = out
                .records
                .windows(2)
                .map(|w| w[0].u_s.abs() * (w[1].t - w[0].t))
                .sum();
            println!("   int |u_s| dt = {us_int:.4}");
        }
    }
}
