//! Builds quantile knots from event times and tabulates the M-spline and
//! I-spline bases, with and without the smoothed upper boundary.

use survspline::basis::{make_knots_with_upper, MSplineBasis};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let events = [0.3, 0.7, 1.1, 1.4, 2.0, 2.2, 2.9, 3.5, 4.1, 4.8];
    for bsmooth in [false, true] {
        let basis = MSplineBasis::new(make_knots_with_upper(&events, 5.0, 6, 3, bsmooth)?)?;
        println!(
            "bsmooth = {bsmooth}: {} terms, knots {:?}",
            basis.len(),
            basis.knots()
        );
        for t in [0.0, 1.0, 2.5, 4.0, 5.0] {
            let m = basis.eval_mspline(t)?;
            let i = basis.eval_ispline(t)?;
            let fmt = |v: &[f64]| {
                v.iter()
                    .map(|x| format!("{x:6.3}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            println!("  t = {t:3.1}  M: {}  I: {}", fmt(&m), fmt(&i));
        }
        println!("  random-walk weights {:?}", basis.random_walk_weights());
    }
    Ok(())
}
