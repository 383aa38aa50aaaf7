//! Tokenization, vocabulary and recurrent text encoders.

mod encoder;
mod pretrained;
mod rnn;
mod vocab;

pub use encoder::{
    embed, embedding_table, Document, DocumentEncoder, DocumentEncoding, EncoderConfig, SentenceBatch, SentenceEncoder,
    WordEncoder,
};
pub use pretrained::{load_pretrained, read_pretrained};
pub use rnn::{AttentionPool, BiGru, GruCell};
pub use vocab::{tokenize, Vocabulary, PAD, UNK};
