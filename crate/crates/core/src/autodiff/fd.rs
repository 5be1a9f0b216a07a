use super::params::ParamVector;

/// Central-difference gradient estimate, one coordinate at a time.
pub fn finite_difference(loss: impl Fn(&ParamVector) -> f64, params: &ParamVector, eps: f64) -> ParamVector {
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut probe = params.values().to_vec();
    let mut grad = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = loss(&params.with_values(probe.clone()).expect("probe stays finite"));
        probe[i] = orig - eps;
        let down = loss(&params.with_values(probe.clone()).expect("probe stays finite"));
        probe[i] = orig;
        grad.push((up - down) / (2.0 * eps));
    }
    params.with_values(grad).expect("finite-difference gradient is finite")
}
