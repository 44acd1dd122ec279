//! Scores a handful of predictions and attributes the misses.

use pathmil::eval::{MetricReport, QuestionResult};

fn result(id: &str, predicted: &[&str], gold: &[&str], grounded: &[&str]) -> QuestionResult {
    let owned = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
    QuestionResult {
        id: id.into(),
        predicted: owned(predicted),
        gold: owned(gold),
        grounded_ends: owned(grounded),
        ..Default::default()
    }
}

fn main() {
    let results = [
        result("q1", &["Heat", "Collateral"], &["Heat", "Collateral"], &["Heat", "Collateral"]),
        result("q2", &["a", "b"], &["b", "c"], &["a", "b"]),
        result("q3", &["Crime"], &["Comedy"], &["Crime"]),
        result("q4", &["1995"], &["2004"], &["1995", "2004"]),
        result("q5", &["x"], &[], &[]),
    ];
    print!("{}", MetricReport::compute(&results).to_table());
}
