//! Numerical semijet tests on the closed-form value functions: smooth
//! arctan versus the concave kink of the second example at x = 1.

use rsens::jets::{
    test_t_jet, test_x_jet, verify_parabolic_inclusions, verify_spatial_inclusions, verify_time_inclusions,
    JetOptions, Side,
};
use rsens::model::{example_5_1, example_5_2};

fn main() -> rsens::Result<()> {
    let opts = JetOptions::default();
    let smooth = example_5_1();
    let kinked = example_5_2();

    let v = test_x_jet(&smooth, 0.5, &[1.0], &[0.5], &[-0.5], Side::Super, &opts)?;
    println!("arctan: (1/2, −1/2) in superjet: {:?}, margins {:?}", v.decision, v.margin_curve);
    let v = test_x_jet(&kinked, 0.5, &[1.0], &[0.5], &[-0.5], Side::Sub, &opts)?;
    println!("kink:   (1/2, −1/2) in subjet:   {:?}", v.decision);
    let v = test_x_jet(&kinked, 0.5, &[1.0], &[0.4], &[50.0], Side::Super, &opts)?;
    println!("kink:   (0.4, 50) in superjet:   {:?}", v.decision);
    let v = test_t_jet(&kinked, 0.5, &[1.0], 0.0, Side::Super, &opts)?;
    println!("kink:   q = 0 in right time superjet: {:?}", v.decision);

    let s = [0.25, 0.5, 0.75];
    for fx in [&smooth, &kinked] {
        let a = verify_spatial_inclusions(fx, &s, &opts)?;
        let b = verify_time_inclusions(fx, &s, &opts)?;
        let c = verify_parabolic_inclusions(fx, &s, &opts)?;
        println!(
            "example {}: spatial {} time {} parabolic {} (sub-sweep members at s=0.5: {})",
            fx.id(),
            a.passed,
            b.passed,
            c.passed,
            a.samples[1].sweep.members
        );
    }
    Ok(())
}
