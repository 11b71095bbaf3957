//! Save a network, load it back and confirm the predictions match bit for
//! bit.

use cirnet::data::{generate, SceneSpec};
use cirnet::model::{checkpoint, CirNet, ModelConfig};

fn main() -> anyhow::Result<()> {
    let net = CirNet::new(ModelConfig::default(), 11)?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("net.cirk");
    checkpoint::save(&net, &path)?;
    let bytes = std::fs::metadata(&path)?.len();
    println!("{} parameters and buffers, {bytes} bytes on disk", net.param_count());

    let loaded = checkpoint::load(&path)?;
    assert_eq!(loaded.config, net.config);
    let s = generate(&SceneSpec::default(), 1)?.remove(0);
    let a = net.predict(&s.rgb, &s.depth)?;
    let b = loaded.predict(&s.rgb, &s.depth)?;
    println!("predictions identical after reload: {}", a == b);

    let mut corrupt = std::fs::read(&path)?;
    corrupt.truncate(corrupt.len() - 3);
    match checkpoint::from_bytes(&corrupt) {
        Ok(_) => println!("truncated file accepted?!"),
        Err(e) => println!("truncated file rejected: {e}"),
    }
    Ok(())
}
