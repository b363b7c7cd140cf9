use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use eventnet_core::lut::{build_lut, FeatureLut, LutError};
use eventnet_core::nn::{train, NnError, TrainReport};
use eventnet_core::{AblationMode, MlpModel, ModelConfig, SensorGeometry, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::data::read_scene;
use crate::{read_toml, CliError, CliResult};

/// Contents of a run TOML: `[model]` widths and coding, `[train]` protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "desk_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn desk_model() -> ModelConfig {
    ModelConfig::desk(SensorGeometry::new(64, 64).expect("valid"), 256)
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: desk_model(),
            train: TrainConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the run TOML.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub mode: Option<AblationMode>,
    pub k: Option<usize>,
    pub tau_us: Option<u64>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(mode) = o.mode {
            self.model.mode = mode;
        }
        if let (Some(k), Some(last)) = (o.k, self.model.mlp2.last_mut()) {
            *last = k;
        }
        if let Some(tau) = o.tau_us {
            self.model.tau_us = tau;
            self.train.tau_us = tau;
        }
        if let Some(seed) = o.seed {
            self.train.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        self.model.validate()?;
        self.train.validate()?;
        if self.model.tau_us != self.train.tau_us {
            return Err(NnError::Config(format!(
                "model tau {} µs and train tau {} µs differ",
                self.model.tau_us, self.train.tau_us
            )));
        }
        Ok(())
    }
}

pub fn load_model(path: &Path) -> CliResult<MlpModel> {
    let file = File::open(path)
        .with_context(|| format!("cannot open {}", path.display()))
        .map_err(CliError::runtime)?;
    MlpModel::load(BufReader::new(file))
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::config)
}

pub fn save_model(model: &MlpModel, path: &Path) -> CliResult<()> {
    let file = File::create(path)
        .with_context(|| format!("cannot create {}", path.display()))
        .map_err(CliError::runtime)?;
    model.save(BufWriter::new(file)).map_err(CliError::runtime)
}

pub fn loss_log_path(weights: &Path) -> PathBuf {
    weights.with_extension("loss.csv")
}

pub fn write_loss_log<W: Write>(mut w: W, report: &TrainReport) -> std::io::Result<()> {
    writeln!(w, "epoch,learning_rate,bn_momentum,loss,segmentation,motion")?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for e in &report.history {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            e.epoch,
            e.learning_rate,
            e.bn_momentum,
            e.loss,
            opt(e.segmentation),
            opt(e.motion)
        )?;
    }
    w.flush()
}

/// Resolves the model to train: fresh from the run config, or loaded from
/// `init` with the run config's model section ignored.
pub fn prepare_model(run: &RunConfig, init: Option<&Path>, overrides: &Overrides) -> CliResult<MlpModel> {
    match init {
        None => MlpModel::new(run.model.clone(), run.train.seed).map_err(CliError::config),
        Some(path) => {
            let model = load_model(path)?;
            let c = &model.config;
            let conflict = overrides.mode.is_some_and(|m| m != c.mode)
                || overrides.k.is_some_and(|k| k != c.k())
                || overrides.tau_us.is_some_and(|t| t != c.tau_us);
            if conflict {
                return Err(CliError::config(anyhow!(
                    "--mode/--k/--tau-us disagree with the weights in {}",
                    path.display()
                )));
            }
            if run.train.tau_us != c.tau_us {
                return Err(CliError::config(anyhow!(
                    "train tau {} µs differs from the weights' tau {} µs",
                    run.train.tau_us,
                    c.tau_us
                )));
            }
            Ok(model)
        }
    }
}

pub fn cmd_train(
    data: &Path,
    config: Option<&Path>,
    init: Option<&Path>,
    overrides: &Overrides,
    out: &Path,
) -> CliResult<()> {
    let mut run = match config {
        Some(path) => read_toml::<RunConfig>(path)?,
        None => RunConfig::default(),
    };
    run.apply(overrides);
    if init.is_none() {
        run.validate().map_err(CliError::config)?;
    } else {
        run.train.validate().map_err(CliError::config)?;
    }
    let mut model = prepare_model(&run, init, overrides)?;
    let stream = read_scene(data, model.config.geometry)?;
    let report = train(&mut model, &stream, &run.train).map_err(|e| match e {
        NnError::Config(_) | NnError::LabelOutOfRange { .. } => CliError::config(e),
        other => CliError::runtime(other),
    })?;
    save_model(&model, out)?;
    let log = loss_log_path(out);
    let file = File::create(&log)
        .with_context(|| format!("cannot create {}", log.display()))
        .map_err(CliError::runtime)?;
    write_loss_log(BufWriter::new(file), &report).map_err(CliError::runtime)?;
    println!("epochs={}", report.history.len());
    if let Some(last) = report.history.last() {
        println!("final_loss={}", last.loss);
    }
    println!("parameters={}", model.param_count());
    println!("checksum={:016x}", model.checksum());
    Ok(())
}

pub fn load_lut(path: &Path) -> CliResult<FeatureLut<f32>> {
    let file = File::open(path)
        .with_context(|| format!("cannot open {}", path.display()))
        .map_err(CliError::runtime)?;
    FeatureLut::read(BufReader::new(file))
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::config)
}

pub fn cmd_lut(weights: &Path, out: &Path) -> CliResult<()> {
    let model = load_model(weights)?;
    let lut: FeatureLut<f32> = build_lut(&model, model.config.geometry).map_err(|e| match e {
        LutError::AgeDependent | LutError::Model(_) => CliError::config(e),
        other => CliError::runtime(other),
    })?;
    let file = File::create(out)
        .with_context(|| format!("cannot create {}", out.display()))
        .map_err(CliError::runtime)?;
    lut.write(BufWriter::new(file)).map_err(CliError::runtime)?;
    println!("cells={}", lut.geometry().cells());
    println!("channels={}", lut.channels());
    println!("bytes={}", lut.table_bytes());
    println!("checksum={:016x}", lut.checksum());
    Ok(())
}
