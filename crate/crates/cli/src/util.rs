use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use effq_core::{JointAction, QTable, StochasticGame, FORMAT_VERSION};
use serde::{Deserialize, Serialize};

/// A failure reported as one `error: <kind>: <message>` line.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        write!(f, "error: {}: {}", self.kind, one_line)
    }
}

impl From<effq_core::Error> for CliError {
    fn from(e: effq_core::Error) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("io", format!("{}: {e}", path.display()))
}

pub fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

pub fn create_file(path: &Path) -> CliResult<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::new("serialize", e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn finish<W: Write>(path: &Path, mut w: W) -> CliResult {
    w.flush().map_err(|e| io_error(path, e))
}

pub fn load_game(path: &Path) -> CliResult<StochasticGame> {
    Ok(StochasticGame::load(path)?)
}

/// A Q-table on disk, as written by `solve`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QFile {
    pub spec_version: String,
    pub num_states: usize,
    pub num_actions: usize,
    pub q: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub greedy: Option<Vec<JointAction>>,
}

/// Loads a Q-table and checks it against the game's shape.
pub fn load_q(path: &Path, game: &StochasticGame) -> CliResult<QTable> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let file: QFile = serde_json::from_str(&text)
        .map_err(|e| CliError::new("parse", format!("{}: {e}", path.display())))?;
    let q = QTable::from_rows(&file.q)?;
    if q.num_states() != game.num_states() || q.num_actions() != game.num_joint_actions() {
        return Err(CliError::new(
            "shape",
            format!(
                "{}: Q-table is {}x{}, game needs {}x{}",
                path.display(),
                q.num_states(),
                q.num_actions(),
                game.num_states(),
                game.num_joint_actions()
            ),
        ));
    }
    Ok(q)
}

pub fn q_file(q: &QTable) -> QFile {
    QFile {
        spec_version: FORMAT_VERSION.to_string(),
        num_states: q.num_states(),
        num_actions: q.num_actions(),
        q: q.to_rows(),
        iterations: None,
        final_residual: None,
        greedy: None,
    }
}

/// `(a^1, ..., a^n)` for printing.
pub fn describe_joint(game: &StochasticGame, a: JointAction) -> String {
    let parts: Vec<String> = game.joint_space().decode(a).iter().map(usize::to_string).collect();
    format!("{} ({})", a, parts.join(", "))
}
