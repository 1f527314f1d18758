//! Every differentiable op against central finite differences.

use nbtf_tensor::gradcheck::{check_case, op_cases};

const TRIALS: usize = 100;

#[test]
fn all_ops_f32() {
    let mut worst = 0.0f64;
    for (k, case) in op_cases::<f32>().iter().enumerate() {
        let r = check_case(case, TRIALS, 100 + k as u64, 1e-3, 1e-12).unwrap();
        println!("f32 {:<18} max rel {:.2e} over {} entries {:?}", case.name, r.max_rel_err, r.checked, r.worst);
        worst = worst.max(r.max_rel_err);
    }
    assert!(worst < 1e-3, "worst f32 relative error {worst:.3e}");
}

#[test]
fn all_ops_f64() {
    let mut worst = 0.0f64;
    for (k, case) in op_cases::<f64>().iter().enumerate() {
        let r = check_case(case, TRIALS, 200 + k as u64, 1e-6, 1e-12).unwrap();
        println!("f64 {:<18} max rel {:.2e} over {} entries {:?}", case.name, r.max_rel_err, r.checked, r.worst);
        worst = worst.max(r.max_rel_err);
    }
    assert!(worst < 1e-6, "worst f64 relative error {worst:.3e}");
}
