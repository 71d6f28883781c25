pub mod classifier;
pub mod error;
pub mod lstm;
pub mod movingmnist;
pub mod objectives;
pub mod params;
pub mod seq2seq;
pub mod tensor;
pub mod toolkit;
pub mod trainer;
