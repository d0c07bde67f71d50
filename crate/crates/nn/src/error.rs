use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch} (learning rate {learning_rate} is probably too high)")]
    NonFiniteLoss { epoch: usize, learning_rate: f64 },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> crate::Result<()> {
    if expected != found {
        return Err(NnError::Shape {
            what,
            expected,
            found,
        });
    }
    Ok(())
}
