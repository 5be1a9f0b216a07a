//! Unrolled hypergradient on a scalar quadratic with a known closed form.
//!
//! Inner loss `α (φ − 1)²`, meta loss `(φ − 1)²`, `k` SGD steps of size `β`.

use dreamprm::autodiff::{
    hypergrad_unrolled, InnerObjective, InnerOptimizer, MetaObjective, OptimizerState, ParamVector, Real, Tape, Var,
};

struct Inner;

impl InnerObjective for Inner {
    fn loss<T: Real>(&self, _step: usize, tape: &mut Tape<T>, phi: Var, alpha: Var) -> Var {
        let d = tape.affine(phi, 1.0, -1.0);
        let sq = tape.square(d);
        let s = tape.sum(sq);
        tape.mul(s, alpha)
    }
}

struct Meta;

impl MetaObjective for Meta {
    fn loss<T: Real>(&self, tape: &mut Tape<T>, phi: Var) -> Var {
        let d = tape.affine(phi, 1.0, -1.0);
        let sq = tape.square(d);
        tape.sum(sq)
    }
}

fn main() {
    let (beta, alpha, phi0) = (0.1, 0.7, -0.5);
    println!("{:>3} {:>16} {:>16} {:>10}", "k", "engine", "closed form", "abs err");
    for k in 1..=8 {
        let c: f64 = 1.0 - 2.0 * beta * alpha;
        let phik = 1.0 + c.powi(k) * (phi0 - 1.0);
        let exact = 2.0 * (phik - 1.0) * k as f64 * c.powi(k - 1) * (-2.0 * beta) * (phi0 - 1.0);
        let out = hypergrad_unrolled(
            &Inner,
            &Meta,
            &ParamVector::flat(vec![phi0]),
            &ParamVector::flat(vec![alpha]),
            k as usize,
            &InnerOptimizer::Sgd { lr: beta },
            &OptimizerState::new(1),
        )
        .unwrap();
        let g = out.alpha_grad[0];
        println!("{k:>3} {g:>16.12} {exact:>16.12} {:>10.2e}", (g - exact).abs());
    }
}
