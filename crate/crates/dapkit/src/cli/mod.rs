//! Run plumbing: merged run configuration with dotted-key overrides, and
//! the command implementations behind the `dap` binary. Exit codes are
//! mapped by the binary: 0 ok, 2 usage/config, 3 divergence, 4 partial
//! sweep failure.

mod commands;
mod config;

pub use commands::{
    cmd_ablate, cmd_eval, cmd_flops, cmd_gen_data, cmd_train, cmd_visualize, eval_retrieval,
    eval_token_align, held_out_split, paper_scale_config, EvalTask, SweepKind, TrainOutcome,
};
pub use config::{apply_override, load_run_config, EvalConfig, RunConfig};
