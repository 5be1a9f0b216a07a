//! Best-of-N selection with a trained scorer against pass@k, majority vote,
//! and an oracle that knows each candidate's outcome.

use dreamprm::bilevel::{train_vanilla, TrainConfig};
use dreamprm::select::{best_of_n, evaluate, self_consistency, CandidateSet, OracleScorer};
use dreamprm::sim::{generate_domain, DomainSpec};
use dreamprm::supervision::label_dataset;

fn main() {
    let train = label_dataset(&generate_domain(&DomainSpec::informative("train").with_questions(300), 1).unwrap(), 8, 1).unwrap();
    let cfg = TrainConfig { outer_iterations: 300, ..TrainConfig::default() };
    let prm = train_vanilla(&cfg, &[train], None).unwrap().prm;

    let test = generate_domain(&DomainSpec::informative("test").with_questions(500), 2).unwrap();
    let sets: Vec<CandidateSet> = test.questions.iter().map(|q| CandidateSet::from_sample(q, 2).unwrap()).collect();

    let first = &sets[0];
    println!("question {}: correct {:?}", first.question_id, first.candidates.iter().map(|c| c.final_correct as u8).collect::<Vec<_>>());
    println!("  answers {:?}", first.answers);
    println!("  scorer picks {} of 8, majority answer {}", best_of_n(&prm, first, 8).unwrap(), self_consistency(first, 8).unwrap());

    let trained = evaluate(&prm, None, &sets).unwrap();
    let oracle = evaluate(&OracleScorer, None, &sets).unwrap();
    println!("\n{:>3} {:>8} {:>8} {:>8} {:>8}", "k", "pass@k", "oracle", "scorer", "vote");
    for (i, k) in trained.k_values.iter().enumerate() {
        println!(
            "{k:>3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            trained.pass_at_k[i], oracle.select_at_k[i], trained.select_at_k[i], trained.self_consistency[i]
        );
    }
}
