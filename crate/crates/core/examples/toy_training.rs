//! Both fine-tuning stages on the toy model, plus the manifests the
//! full-scale trainer would consume.

use dentvqa::training::{emit_manifest, run_toy_training, synthetic_corpus, Stage, StageConfig, ToyConfig, ToyModel};

fn main() {
    let (dims, corpus) = synthetic_corpus(200, 1);
    let mut model = ToyModel::new(dims, 1);
    for stage in [Stage::One, Stage::Two] {
        let trace = run_toy_training(&ToyConfig::for_stage(stage), &corpus, &mut model, 1).unwrap();
        let epochs: Vec<String> = trace.epoch_losses.iter().map(|l| format!("{l:.3}")).collect();
        println!(
            "stage {stage}: initial {:.3}, per epoch [{}], encoder changed: {}",
            trace.initial_loss,
            epochs.join(", "),
            trace.encoder_checksum_before != trace.encoder_checksum_after
        );
    }
    for stage in [Stage::One, Stage::Two] {
        println!("--- stage {stage} manifest ---\n{}", emit_manifest(&StageConfig::defaults(stage)).unwrap());
    }
}
