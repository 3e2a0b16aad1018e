//! CRF layers over heterogeneous label spaces and the classification heads.

mod chain;
mod heads;
mod layer;

pub use chain::{
    crf_nll, crf_nll_grad, log_partition, marginals, score_sequence, viterbi_decode, CrfInstance,
    Marginals, NllGrad, TransitionTable,
};
pub use heads::{argmax_rows, cross_entropy, SoftmaxHead, SuccessClassifier};
pub use layer::ChainCrf;
