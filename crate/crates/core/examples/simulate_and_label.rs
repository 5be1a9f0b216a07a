//! Generates a domain, labels every prefix by Monte-Carlo rollouts, and
//! applies the per-question filter. Writes JSONL files to a temp directory.

use dreamprm::sim::{generate_domain, true_correctness_prob, write_domain_jsonl, Completer, DomainSpec};
use dreamprm::supervision::{filter_questions, label_dataset, monte_carlo_label, write_labels_jsonl};

fn main() {
    let spec = DomainSpec::informative("demo").with_questions(200);
    let data = generate_domain(&spec, 7).unwrap();
    let labeled = label_dataset(&data, 8, 7).unwrap();

    let q = &data.questions[0];
    let t = &q.trajectories[0];
    println!("question 0, trajectory 0: flaws {:?}, correct {}", t.steps.iter().map(|s| s.flawed as u8).collect::<Vec<_>>(), t.final_correct);
    let completer = Completer::for_question(&spec, &q.question);
    for l in labeled.prefixes.iter().take(spec.steps_per_trajectory) {
        let truth = true_correctness_prob(&completer, &t.steps[..l.prefix_len]);
        println!("  prefix {}  p = {:.3}  ({}/{} rollouts)  true {:.3}", l.prefix_len, l.p, l.correct, l.num_rollouts, truth);
    }

    let precise = monte_carlo_label(&completer, q.question.id, &t.steps[..2], 10_000, 1).unwrap();
    println!("10k-rollout estimate at prefix 2: {:.4} vs {:.4}", precise.p, true_correctness_prob(&completer, &t.steps[..2]));

    for (name, s) in [("informative", spec.clone()), ("trivial", DomainSpec::informative("t").with_questions(200).with_triviality(1.0))] {
        let l = label_dataset(&generate_domain(&s, 7).unwrap(), 8, 7).unwrap();
        let (_, stats) = filter_questions(&l);
        println!("{name:<12} filter discards {:.1}% of questions", 100.0 * stats.discard_rate());
    }

    let dir = std::env::temp_dir().join("dreamprm-demo");
    std::fs::create_dir_all(&dir).unwrap();
    write_domain_jsonl(&data, &dir.join("demo.jsonl")).unwrap();
    write_labels_jsonl(&labeled, &dir.join("demo.labels.jsonl")).unwrap();
    println!("wrote {} trajectories and {} labels under {}", data.trajectories().count(), labeled.prefixes.len(), dir.display());
}
