//! Visual-text matching: proposal filtering, segment and text encoders, and
//! the triplet objective with semi-hard negatives.

mod encoders;
mod filter;
mod triplet;

pub use encoders::{SegmentEncoder, TextEncoder};
pub use filter::{filter_proposals, FilterConfig};
pub use triplet::{
    distance_matrix, mine_negatives, total_loss, triplet_loss, triplet_loss_with, triplet_value_and_grad,
    triplet_value_and_grad_with, MatchConfig,
};
