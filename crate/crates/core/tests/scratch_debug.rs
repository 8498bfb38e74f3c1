use delay_control::presets::{example4, example5};
use delay_control::ssn::continuation_solve;
use std::time::Instant;

#[test]
fn debug_example5() {
    let t0 = Instant::now();
    let e = example5().unwrap();
    let r = continuation_solve(&e.spec, &e.settings).unwrap();
    println!("example5: {:.1?} converged {} final_c {:.1e}", t0.elapsed(), r.converged, r.final_c);
    println!("F {:.4e} (paper 6.57e-4) nuj {:.4e} J {:.4e} (paper 6.25e-3)", r.report.f_value, r.report.nu_j, r.report.j_total);
    for &k in &r.report.support {
        println!("  atom t={:.4} w={:+.4}", e.spec.control_grid.nodes()[k], r.control.weights()[k]);
    }
    println!("paper: +0.3188 d_0  -1.5499 d_0.4219  -0.9964 d_0.8047  +2.7233 d_1.5234");
}

#[test]
fn debug_example4() {
    let t0 = Instant::now();
    let e = example4().unwrap();
    let r = continuation_solve(&e.spec, &e.settings).unwrap();
    println!("example4: {:.1?} converged {} F {:.4e} (paper 1.29e-4) J {:.4e} (paper 1.787e-3)",
        t0.elapsed(), r.converged, r.report.f_value, r.report.j_total);
    for &k in &r.report.support {
        println!("  atom t={:.4} w={:+.4}", e.spec.control_grid.nodes()[k], r.control.weights()[k]);
    }
    println!("paper: -1.304 d_0.418 +0.134 d_1.977 +0.220 d_1.978");
}
