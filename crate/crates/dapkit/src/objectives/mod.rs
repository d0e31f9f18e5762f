//! Training objectives: translation ranking, representation translation
//! learning, masked translation-pair prediction, and the optimizer loop
//! glue that combines them.

mod config;
mod losses;
mod optim;
mod trainer;

pub use config::{DirectionMode, Objective, TrainConfig};
pub use losses::{
    apply_direction_mode, rtl_group_loss, select_reconstruction_positions, tlm_loss, tr_loss,
    DirectionGroup,
};
pub use optim::AdamW;
pub use trainer::{build_loss, compute_losses, dap_step, LossBreakdown};
