use std::time::Instant;

use mmg_ems::distributed::run_distributed;
use mmg_ems::scenarios::builtin_case;

fn main() {
    for name in ["base", "stressed"] {
        let case = builtin_case(name).unwrap();
        let t = Instant::now();
        let run = run_distributed(&case).unwrap();
        let last = run.trace.rounds.last().unwrap();
        println!(
            "{name}: {:.2?} rounds={} lambda={:?}",
            t.elapsed(),
            run.trace.rounds.len(),
            run.final_prices.lambda,
        );
        println!(
            "  primal={:.4} dual={:.4} gap_pct={:.6} clamped={} neg={}",
            last.primal_obj,
            last.dual_obj,
            last.gap_pct,
            run.diagnostics.clamped_rounds.len(),
            run.diagnostics.negative_price_rounds.len(),
        );
        let d = &run.dispatch;
        println!("  gen={:?}", d.gen);
        println!("  grid_buy={:?}", d.grid_buy);
        for (s, b, kw) in d.exchange.entries() {
            if kw.abs() > 1e-3 {
                println!("  e[{}->{}] = {kw:.4}", s + 1, b + 1);
            }
        }
    }
}
