use proptest::prelude::*;

use trussbot::optimizer::ALState;

fn violation_seq() -> impl Strategy<Value = Vec<[f64; 4]>> {
    prop::collection::vec(prop::array::uniform4(0.0..1.0f64), 1..60)
}

proptest! {
    #[test]
    fn multipliers_match_the_closed_form(seq in violation_seq(), tau0 in 0.01..2.0f64) {
        let mut al = ALState::new(tau0, 1.01);
        let mut taus = Vec::new();
        for v in &seq {
            taus.push(al.tau);
            al.update(v);
        }
        for k in 0..4 {
            let closed: f64 = -seq.iter().zip(&taus).map(|(v, t)| t[k] * v[k]).sum::<f64>();
            prop_assert!((al.lambda[k] - closed).abs() <= 1e-12 * closed.abs().max(1.0));
        }
    }

    #[test]
    fn penalty_weights_stay_in_the_anneal_band(seq in violation_seq(), tau0 in 0.01..2.0f64) {
        let a = 1.01f64;
        let mut al = ALState::new(tau0, a);
        for (n, v) in seq.iter().enumerate() {
            al.update(v);
            let lo = tau0 * a.powi(-(n as i32 + 1));
            let hi = tau0 * a.powi(n as i32 + 1);
            for k in 0..4 {
                prop_assert!(al.tau[k] >= lo * (1.0 - 1e-12) && al.tau[k] <= hi * (1.0 + 1e-12));
            }
        }
    }
}

#[test]
fn anneal_branches() {
    let mut al = ALState::new(0.3, 1.01);
    al.update(&[0.5, 0.5, 0.5, 0.5]);
    assert_eq!(al.tau, [0.3; 4]);
    // up, down, unchanged, down
    al.update(&[0.6, 0.4, 0.5, 0.0]);
    assert_eq!(al.tau, [0.3 * 1.01, 0.3 / 1.01, 0.3, 0.3 / 1.01]);
}
