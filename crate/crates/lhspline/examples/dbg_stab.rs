use lhspline::evt::{gpd_fit_pot, gpd_simulate};
use lhspline::numerics::rng_from_seed;

fn main() {
    let mut rng = rng_from_seed(17);
    let data = gpd_simulate(3.0, 0.2, 50_000, &mut rng);
    for u in [0.0, 1.0, 2.0, 3.0, 4.0, 5.0] {
        match gpd_fit_pot(&data, u, None) {
            Ok(fit) => println!("u={u}: sigma {:.4} xi {:.4}", fit.params[0], fit.params[1]),
            Err(e) => println!("u={u}: ERROR {e}"),
        }
    }
}
