use fss_nnkit::{BiGru, Embedding, Graph, Linear, ParamStore, Var};
use rand::Rng;

use crate::domain::{Alphabet, Query, Segment};
use crate::error::{FssError, Result};
use crate::net::ModelConfig;

/// Bidirectional encoder over a span of trunk features, projected and
/// normalized to unit length.
#[derive(Clone, Debug)]
pub struct SegmentEncoder {
    rnn: BiGru,
    proj: Linear,
}

impl SegmentEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Self {
        let rnn = BiGru::new(store, &format!("{name}.rnn"), in_dim, cfg.fs_hidden, cfg.fs_layers, rng);
        let proj = Linear::new(store, &format!("{name}.proj"), rnn.out_dim(), cfg.embed_dim, rng);
        Self { rnn, proj }
    }

    /// `1 x E` unit embedding of rows `[s, t)` of `feats`.
    pub fn encode(&self, g: &mut Graph, feats: Var, segment: Segment) -> Result<Var> {
        let frames = g.shape(feats).0;
        if segment.end() > frames {
            return Err(FssError::InvalidClip {
                id: String::new(),
                msg: format!("segment {segment:?} beyond {frames} frames"),
            });
        }
        let span = g.slice_rows(feats, segment.start(), segment.end())?;
        self.encode_rows(g, span)
    }

    /// `1 x E` unit embedding of a whole feature sequence.
    pub fn encode_rows(&self, g: &mut Graph, rows: Var) -> Result<Var> {
        let out = self.rnn.forward(g, rows)?;
        let e = self.proj.forward(g, out.last)?;
        Ok(g.normalize_rows(e)?)
    }
}

/// Character-level text encoder; any string over the alphabet has an embedding.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    chars: Embedding,
    rnn: BiGru,
    proj: Linear,
}

impl TextEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut R) -> Self {
        let chars = Embedding::new(store, &format!("{name}.chars"), Alphabet::N_CHARS, cfg.char_dim, rng);
        let rnn = BiGru::new(
            store,
            &format!("{name}.rnn"),
            cfg.char_dim,
            cfg.text_hidden,
            cfg.text_layers,
            rng,
        );
        let proj = Linear::new(store, &format!("{name}.proj"), rnn.out_dim(), cfg.embed_dim, rng);
        Self { chars, rnn, proj }
    }

    /// `1 x E` unit embedding of the query's character sequence.
    pub fn encode(&self, g: &mut Graph, query: &Query) -> Result<Var> {
        let ids = query.symbols();
        let x = self.chars.forward(g, &ids)?;
        let out = self.rnn.forward(g, x)?;
        let e = self.proj.forward(g, out.last)?;
        Ok(g.normalize_rows(e)?)
    }
}
