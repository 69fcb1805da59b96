//! Token counting for budget fitting.

/// Counts tokens in a piece of text. Implementations must be deterministic and
/// monotone under concatenation: `count(a + b) >= max(count(a), count(b))`.
pub trait TokenCounter {
    fn count(&self, text: &str) -> usize;
}

impl<T: TokenCounter + ?Sized> TokenCounter for &T {
    fn count(&self, text: &str) -> usize {
        (**self).count(text)
    }
}

/// Offline heuristic: `ceil(utf8_bytes / 4)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ByteHeuristic;

impl TokenCounter for ByteHeuristic {
    fn count(&self, text: &str) -> usize {
        text.len().div_ceil(4)
    }
}

pub fn count_tokens(text: &str, counter: &impl TokenCounter) -> usize {
    counter.count(text)
}
