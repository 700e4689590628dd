//! Error categories and their exit codes.

use std::fmt;

use taxoseek::baselines::BaselineError;
use taxoseek::builder::BuildError;
use taxoseek::eval::EvalError;
use taxoseek::gateway::mock::ScriptError;
use taxoseek::gateway::GatewayError;
use taxoseek::registry::RegistryError;
use taxoseek::search::SearchError;
use taxoseek::taxonomy::TaxonomyError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Other,
    Usage,
    Data,
    Backend,
    Config,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Other => 1,
            Category::Usage => 2,
            Category::Data => 3,
            Category::Backend => 4,
            Category::Config => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Other => "other",
            Category::Usage => "usage",
            Category::Data => "data",
            Category::Backend => "backend",
            Category::Config => "config",
        }
    }
}

/// An error with an explicit category.
#[derive(Debug)]
pub struct Failure {
    pub category: Category,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(category: Category, message: impl Into<String>) -> Self {
        Failure {
            category,
            error: anyhow::Error::msg(message.into()),
        }
    }

    pub fn wrap(category: Category, error: anyhow::Error) -> Self {
        Failure { category, error }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl std::error::Error for Failure {}

fn of_gateway(e: &GatewayError) -> Category {
    match e {
        GatewayError::NoEmbedder => Category::Config,
        _ => Category::Backend,
    }
}

fn of_taxonomy(e: &TaxonomyError) -> Category {
    match e {
        TaxonomyError::Io { source, .. } if source.kind() != std::io::ErrorKind::NotFound => Category::Other,
        _ => Category::Data,
    }
}

/// Category of the first recognised error in the chain.
pub fn categorize(err: &anyhow::Error) -> Category {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.category;
        }
        if let Some(e) = cause.downcast_ref::<GatewayError>() {
            return of_gateway(e);
        }
        if let Some(e) = cause.downcast_ref::<BuildError>() {
            return match e {
                BuildError::Config(_) => Category::Config,
                BuildError::EmptyInput(_) => Category::Data,
                BuildError::Gateway(g) => of_gateway(g),
                BuildError::Taxonomy(t) => of_taxonomy(t),
                _ => Category::Backend,
            };
        }
        if let Some(e) = cause.downcast_ref::<SearchError>() {
            return match e {
                SearchError::Config(_) => Category::Config,
                SearchError::Gateway(g) => of_gateway(g),
                SearchError::Taxonomy(t) => of_taxonomy(t),
                SearchError::UnknownService { .. } => Category::Data,
            };
        }
        if let Some(e) = cause.downcast_ref::<BaselineError>() {
            return match e {
                BaselineError::Gateway(g) => of_gateway(g),
                BaselineError::ZeroK => Category::Config,
                BaselineError::EmptyIndex | BaselineError::ModelMismatch { .. } => Category::Data,
            };
        }
        if let Some(e) = cause.downcast_ref::<TaxonomyError>() {
            return of_taxonomy(e);
        }
        if cause.is::<RegistryError>() {
            return Category::Data;
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            return match e {
                EvalError::Io { .. } | EvalError::Schema { .. } | EvalError::EmptyTruth(_) => Category::Data,
                EvalError::NoRuns => Category::Usage,
            };
        }
        if cause.is::<ScriptError>() {
            return Category::Config;
        }
    }
    Category::Other
}
