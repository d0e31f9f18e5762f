//! The shared dual encoder, the RTL reconstruction head, the TLM
//! prediction head, and checkpoint persistence.

mod checkpoint;
mod config;
mod encoder;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, MAGIC};
pub use config::{EncoderConfig, CLS_ID, MASK_ID, N_SPECIALS, PAD_ID};
pub use encoder::{encode, project_vocab, rtl_forward, tlm_forward, EncodedBatch, RtlOutput};
pub use params::{derive_rng, init_params, BlockParams, BlockVars, ModelParams, ParamVars};
