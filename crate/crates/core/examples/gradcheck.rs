//! Reverse-mode gradient of a small scorer loss against central finite differences.

use dreamprm::autodiff::{finite_difference, ParamVector, Tape};
use dreamprm::prm::{mse_on_tape, PrefixBatch, PrmArch, PrmParams};
use dreamprm::sim::{generate_domain, DomainSpec};
use dreamprm::supervision::label_dataset;

fn main() {
    let arch = PrmArch { hidden: vec![6, 4], ..PrmArch::default() };
    let mut prm = PrmParams::init(arch.clone(), 11);
    // Zero output weights give a degenerate gradient; perturb them.
    let values: Vec<f64> = prm.params.values().iter().enumerate().map(|(i, v)| v + 0.05 * ((i % 7) as f64 - 3.0)).collect();
    prm.params = prm.params.with_values(values).unwrap();

    let data = generate_domain(&DomainSpec::informative("demo").with_questions(4), 3).unwrap();
    let labels = label_dataset(&data, 8, 3).unwrap();
    let batch = PrefixBatch::from_labels(&labels.prefixes);

    let loss_at = |p: &ParamVector| {
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(p.values().to_vec(), p.len(), 1);
        let l = mse_on_tape(&mut tape, &arch, v, &batch);
        tape.scalar(l)
    };

    let mut tape = Tape::<f64>::new();
    let phi = tape.leaf(prm.params.values().to_vec(), prm.params.len(), 1);
    let loss = mse_on_tape(&mut tape, &arch, phi, &batch);
    let grad = tape.backward(loss).unwrap().wrt(phi);
    let fd = finite_difference(loss_at, &prm.params, 1e-6);

    let num: f64 = grad.iter().zip(fd.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = fd.values().iter().map(|b| b * b).sum::<f64>().sqrt();
    println!("parameters      {}", prm.params.len());
    println!("loss            {:.6}", tape.scalar(loss));
    println!("relative error  {:.3e}", num / den);
    for block in prm.params.blocks() {
        let r = prm.params.block_range(&block.name).unwrap();
        let norm: f64 = grad[r].iter().map(|g| g * g).sum::<f64>().sqrt();
        println!("  |grad {:<3}| = {norm:.5}", block.name);
    }
}
