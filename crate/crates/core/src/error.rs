use std::fmt;

/// Subsystem that raised an error. Surfaced in CLI messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Module {
    Data,
    Manifold,
    Kernel,
    Graph,
    Mmd,
    Solver,
    Eval,
    Cli,
}

impl fmt::Display for Module {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Module::Data => "data",
            Module::Manifold => "manifold",
            Module::Kernel => "kernel",
            Module::Graph => "graph",
            Module::Mmd => "mmd",
            Module::Solver => "solver",
            Module::Eval => "eval",
            Module::Cli => "cli",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GglsError {
    #[error("{module}: data format error: {message}")]
    DataFormat { module: Module, message: String },

    #[error("{module}: configuration error: {message}")]
    Config { module: Module, message: String },

    #[error("{module}: invalid subspace: {message}")]
    InvalidSubspace { module: Module, message: String },

    #[error("{module}: numeric error: {message}")]
    Numeric { module: Module, message: String },

    #[error("{module}: singular system: {message}")]
    SingularSystem { module: Module, message: String },

    #[error("{module}: evaluation error: {message}")]
    Eval { module: Module, message: String },

    #[error("{module}: i/o error on {path}: {source}")]
    Io {
        module: Module,
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl GglsError {
    pub fn data(module: Module, message: impl Into<String>) -> Self {
        GglsError::DataFormat { module, message: message.into() }
    }

    pub fn config(module: Module, message: impl Into<String>) -> Self {
        GglsError::Config { module, message: message.into() }
    }

    pub fn numeric(module: Module, message: impl Into<String>) -> Self {
        GglsError::Numeric { module, message: message.into() }
    }

    pub fn module(&self) -> Module {
        match self {
            GglsError::DataFormat { module, .. }
            | GglsError::Config { module, .. }
            | GglsError::InvalidSubspace { module, .. }
            | GglsError::Numeric { module, .. }
            | GglsError::SingularSystem { module, .. }
            | GglsError::Eval { module, .. }
            | GglsError::Io { module, .. } => *module,
        }
    }
}

pub type Result<T, E = GglsError> = std::result::Result<T, E>;
