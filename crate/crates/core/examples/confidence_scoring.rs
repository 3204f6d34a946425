//! Consistency confidence for a handful of variant answer sets.

use schemalign::confidence::compute_confidence;
use schemalign::schema::Prediction;

fn main() -> schemalign::Result<()> {
    let t = Prediction::target;
    let cases = [
        ("two of three agree", vec![t("RemotePort"), t("RemotePort"), t("LocalPort")]),
        ("unanimous", vec![t("RemotePort"); 3]),
        ("one answer, two unparseable", vec![t("RemotePort"), Prediction::missing(), Prediction::missing()]),
        ("unanimous abstention", vec![Prediction::not_covered(); 3]),
        ("tie: target beats NOT_COVERED", vec![t("LocalPort"), Prediction::not_covered()]),
        ("nothing parseable", vec![Prediction::missing(); 3]),
    ];
    for (label, preds) in cases {
        let score = compute_confidence(&preds)?;
        println!(
            "{label:<32} modal {:<12} confidence {:.3} ({}/{})",
            score.modal.to_string(),
            score.value,
            score.numerator_weight,
            score.denominator_weight
        );
    }
    Ok(())
}
