// Short training run, saved and reloaded.

use std::path::Path;

use symflow::train::{
    fit, load_checkpoint, loss, make_dataset, save_checkpoint, ExampleId, TrainConfig,
};

pub fn run_example(dir: &Path) -> symflow::Result<(f64, f64)> {
    let mut config = TrainConfig::new(ExampleId::Radial);
    config.epochs = 20;
    config.hidden = vec![8, 8];
    let (model, history) = fit(&config)?;
    let path = dir.join("checkpoint.json");
    save_checkpoint(&model, Some(&config), Some(&history), &path)?;
    let restored = load_checkpoint(&path)?;
    let data = make_dataset(ExampleId::Radial, config.seed);
    let before = loss(&model, &data)?.mse;
    let after = loss(&restored, &data)?.mse;
    println!(
        "loss {:.6e} -> {before:.6e} after 20 epochs, reloaded {after:.6e}",
        history.losses[0]
    );
    Ok((before, after))
}

fn main() -> symflow::Result<()> {
    run_example(&std::env::temp_dir())?;
    Ok(())
}
