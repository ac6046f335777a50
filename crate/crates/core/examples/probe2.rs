use mmg_ems::distributed::{build_subproblem, PriceVector};
use mmg_ems::qp::{kkt_residual, qp_solve};
use mmg_ems::scenarios::builtin_case;

fn main() {
    let case = builtin_case("stressed").unwrap();
    let prices = PriceVector {
        lambda: vec![13.508914540485806, 6.6322384865469175, 8.441947715673884],
        round: 29,
    };
    let p = build_subproblem(&case.microgrids[1], &prices, case.beta, 3).unwrap();
    let sol = qp_solve(&p, 1e-8).unwrap();
    println!("status {:?} after {} iters", sol.status, sol.iterations);
    println!("x = {:?}", sol.x.as_slice());
    println!("kkt = {:?}", kkt_residual(&p, &sol));
}
