//! Verify every analytic gradient of a small two-layer model against
//! central finite differences in double precision.

use shortstack::cli::{gradcheck_fixture, gradcheck_model};

fn main() {
    let (model, batch) = gradcheck_fixture().unwrap();
    let report = gradcheck_model(&model, &batch, 1e-5).unwrap();
    for g in &report.groups {
        println!("{:40} max rel err {:.3e}", g.name, g.max_rel_err);
    }
    println!("worst over all parameters: {:.3e}", report.max_rel_err());
}
