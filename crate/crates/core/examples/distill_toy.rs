//! Distils one image per class from the toy dataset and reports the loss.
use attn_distill::augment::AugmentSpec;
use attn_distill::data::{gen_toy, ToySpec};
use attn_distill::distill::{run_distillation, DistillConfig, FnSink, StepRecord};
use attn_distill::Result;

fn main() -> Result<()> {
    let toy = gen_toy(&ToySpec::default())?;
    let cfg = DistillConfig {
        iterations: 200,
        augment: AugmentSpec::none(),
        ..DistillConfig::for_dataset(1, toy.train.image_size())
    };
    let mut sink = FnSink(|r: &StepRecord| {
        if r.iteration % 20 == 0 {
            println!("iter {:4}  sam {:.4e}  mmd {:.4e}  total {:.4e}", r.iteration, r.breakdown.l_sam, r.breakdown.l_mmd, r.breakdown.total);
        }
    });
    let set = run_distillation(&cfg, &toy.train, &mut sink)?;
    println!("distilled {} images of shape {:?}", set.len(), &set.images.shape()[1..]);
    Ok(())
}
