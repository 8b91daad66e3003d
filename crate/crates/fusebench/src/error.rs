use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {cause}", path.display())]
    Io {
        path: PathBuf,
        cause: std::io::Error,
    },
    #[error("{what}: byte {offset}: {msg}")]
    Format {
        what: String,
        offset: u64,
        msg: String,
    },
    #[error("{what}: line {line}: {msg}")]
    Line {
        what: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Core(#[from] fusebench_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }

    pub(crate) fn format(what: impl Into<String>, offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            offset,
            msg: msg.into(),
        }
    }

    pub(crate) fn line(what: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Line {
            what: what.into(),
            line,
            msg: msg.into(),
        }
    }
}

/// Writes through a sibling temp file and renames, so readers never see a
/// half-written artifact.
pub(crate) fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
