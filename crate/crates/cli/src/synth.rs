use std::path::Path;

use eventnet_core::synth::{generate, split, SceneConfig, SynthError};

use crate::data::write_scene;
use crate::{read_toml, CliError, CliResult};

pub fn load_scene(config: Option<&Path>, seed: Option<u64>) -> CliResult<SceneConfig> {
    let mut scene = match config {
        Some(path) => read_toml::<SceneConfig>(path)?,
        None => SceneConfig::desk(0),
    };
    if let Some(seed) = seed {
        scene.seed = seed;
    }
    scene.validate().map_err(CliError::config)?;
    Ok(scene)
}

/// Writes the scene to `out`, plus `out/train` and `out/test` halves when
/// `train_fraction` is given.
pub fn cmd_synth(config: Option<&Path>, seed: Option<u64>, train_fraction: Option<f64>, out: &Path) -> CliResult<()> {
    let scene = load_scene(config, seed)?;
    let halves = |stream| match train_fraction {
        Some(f) => split(stream, f).map(Some).map_err(CliError::config),
        None => Ok(None),
    };
    let stream = generate(&scene).map_err(|e| match e {
        SynthError::Event(e) => CliError::runtime(e),
        other => CliError::config(other),
    })?;
    let parts = halves(&stream)?;
    write_scene(out, &stream)?;
    if let Some((train, test)) = parts {
        write_scene(&out.join("train"), &train)?;
        write_scene(&out.join("test"), &test)?;
    }
    println!("events={}", stream.len());
    println!("duration_us={}", stream.end_us - stream.start_us);
    Ok(())
}
