use statrs::distribution::{ContinuousCDF, StudentsT};
use std::time::Instant;

fn main() {
    for dof in [2.25, 10.0, 1e4, 1e6, 1e9, 1e12, 1e15, 1e18] {
        let t = Instant::now();
        let q = StudentsT::new(0.0, 1.0, dof).unwrap().inverse_cdf(0.975);
        eprintln!("dof {dof:e}: quantile {q:.6} in {:?}", t.elapsed());
        if t.elapsed().as_secs() > 30 {
            break;
        }
    }
}
