//! Writes a distilled set to a DDS1 file, reads it back and renders a PPM grid.
use attn_distill::augment::AugmentSpec;
use attn_distill::data::{gen_toy, ToySpec};
use attn_distill::distill::{run_distillation, DistillConfig};
use attn_distill::io::{image_grid, DatasetIdentity, RunManifest, SyntheticSetFile};
use attn_distill::Result;

fn main() -> Result<()> {
    let out = std::env::temp_dir().join("attn-distill-example");
    std::fs::create_dir_all(&out)?;
    let spec = ToySpec::default();
    let toy = gen_toy(&spec)?;
    let cfg = DistillConfig { iterations: 20, width: 32, augment: AugmentSpec::none(), ..DistillConfig::for_dataset(2, 8) };
    let set = run_distillation(&cfg, &toy.train, &mut ())?;

    let mut manifest = RunManifest::new(cfg.seed, DatasetIdentity::toy(spec), toy.stats().clone());
    manifest.distill = Some(cfg);
    let path = out.join("toy.dds");
    SyntheticSetFile::new(set, manifest).write(&path)?;

    let file = SyntheticSetFile::read(&path)?;
    let grid = image_grid(&file.set, &file.manifest.stats, 1)?;
    let ppm = out.join("toy.ppm");
    grid.write(&ppm)?;
    println!("wrote {} and {} ({}x{})", path.display(), ppm.display(), grid.width, grid.height);
    Ok(())
}
