//! Scene files, recorded-track import, configuration, weights and plots.

mod config;
mod plot;
mod scene_file;
mod tracks;

use std::path::Path;

pub use config::{Config, CONFIG_ENV};
pub use plot::{prediction_series, series_csv, series_svg, Series};
pub use scene_file::{read_scenes, write_scenes, AgentRecord, Role, SceneFile, SceneRecord, SCENE_FILE_VERSION};
pub use tracks::{
    export_tracks, filter_merge_scenes, import_tracks, import_tracks_file, ColumnMap, ImportConfig, RawTrack,
    TrackFormat,
};

use crate::error::{GameError, Result};
use crate::pipeline::{TglModel, WEIGHTS_VERSION};

pub fn write_weights(path: &Path, model: &TglModel) -> Result<()> {
    let text = serde_json::to_string_pretty(model)?;
    std::fs::write(path, text).map_err(|e| GameError::Io(format!("{}: {e}", path.display())))
}

pub fn read_weights(path: &Path) -> Result<TglModel> {
    let text = std::fs::read_to_string(path).map_err(|e| GameError::Io(format!("{}: {e}", path.display())))?;
    weights_from_json(&text)
}

pub fn weights_from_json(text: &str) -> Result<TglModel> {
    let model: TglModel = serde_json::from_str(text)?;
    if model.version != WEIGHTS_VERSION {
        return Err(GameError::Data(format!(
            "weights version {} unsupported (expected {WEIGHTS_VERSION})",
            model.version
        )));
    }
    model.validate()?;
    Ok(model)
}

/// Reads a JSON file into any deserializable type.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| GameError::Io(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| GameError::Io(format!("{}: {e}", path.display())))
}
