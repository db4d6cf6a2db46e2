//! Saves a transformer in both checkpoint formats and reloads it.

use mdlab::model::{load_checkpoint, save_checkpoint, ModelParams, TransformerParams};
use mdlab::rng::{stream_rng, Stream};

fn main() -> mdlab::Result<()> {
    let params = ModelParams::Transformer(TransformerParams::init(
        64,
        33,
        None,
        1.0,
        &mut stream_rng(3, Stream::Init),
    ));
    let dir = std::env::temp_dir().join("mdlab_checkpoint_example");
    std::fs::create_dir_all(&dir)?;
    for name in ["params.json", "params.ckpt"] {
        let path = dir.join(name);
        save_checkpoint(&path, &params, Some(11))?;
        let (back, header) = load_checkpoint(&path)?;
        let bytes = std::fs::metadata(&path)?.len();
        println!(
            "{name}: {bytes} bytes, {header:?}, identical {}",
            back == params
        );
    }
    Ok(())
}
