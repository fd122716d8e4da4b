use std::path::{Path, PathBuf};

use snv_core::game::GameError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("capacity refused: {0}")]
    CapacityRefused(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(snv_core::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// Process exit status: 2 config, 3 data, 4 capacity refused, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io { .. } => 3,
            CliError::CapacityRefused(_) => 4,
            CliError::Core(e) => match e {
                snv_core::Error::Config(_) => 2,
                snv_core::Error::Game(GameError::CapacityRefused { .. }) => 4,
                snv_core::Error::Game(GameError::Parse { .. })
                | snv_core::Error::Data(_)
                | snv_core::Error::Parse { .. }
                | snv_core::Error::Shape(_)
                | snv_core::Error::Io(_)
                | snv_core::Error::Json(_) => 3,
                _ => 1,
            },
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<snv_core::Error> for CliError {
    fn from(e: snv_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<GameError> for CliError {
    fn from(e: GameError) -> Self {
        CliError::Core(e.into())
    }
}

pub(crate) fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(CliError::io(path))
}

pub(crate) fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(CliError::io(parent))?;
        }
    }
    std::fs::write(path, contents).map_err(CliError::io(path))
}
