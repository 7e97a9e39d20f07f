//! Playlist title generation: learn to map an orderless sequence of track IDs
//! to a short phrase with RNN or Transformer encoder-decoders.

pub mod gradcheck;
pub mod tensor;
pub mod corpus;
pub mod models;
pub mod training;
pub mod generation;
