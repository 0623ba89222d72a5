//! Comparison systems: CTC recognizer, whole-clip embedding, attention
//! keyword spotting, and the frozen external detector.

mod attnkws;
pub mod ctc;
mod extdet;
mod recognizer;
mod wholeclip;

pub use attnkws::{attention_to_segments, attn_kws_output, AttnKws, AttnKwsConfig};
pub use extdet::{detection_ap, detector_predictions};
pub use recognizer::{Recognizer, RecognizerConfig};
pub use wholeclip::WholeClip;
