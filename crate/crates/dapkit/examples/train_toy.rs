//! Train a small dual encoder with ranking + reconstruction and watch the
//! loss parts fall.

use dapkit::corpus::{generate_corpus, make_batches, LanguageSpec};
use dapkit::model::{init_params, EncoderConfig};
use dapkit::objectives::{dap_step, AdamW, TrainConfig};

fn main() -> dapkit::error::Result<()> {
    let data = LanguageSpec {
        n_concepts: 50,
        len_max: 8,
        ..LanguageSpec::default()
    };
    let model = EncoderConfig {
        layers: 1,
        d: 32,
        n_heads: 2,
        d_ff: 64,
        vocab: data.vocab_size(),
        s_max: 24,
        rtl_layers: 1,
        ..EncoderConfig::default()
    };
    let train = TrainConfig {
        steps: 120,
        batch_size: 8,
        lr: 1e-3,
        ..TrainConfig::default()
    };

    let pairs = generate_corpus(&data, 256, 7)?;
    let mut params = init_params(&model)?;
    let mut opt = AdamW::new(&params, &train);

    let mut step = 0;
    'outer: for epoch in 0.. {
        for batch in make_batches(&pairs, train.batch_size, model.s_max, epoch, true)? {
            let b = dap_step(&mut params, &mut opt, &batch, &train, step)?;
            if step % 20 == 0 {
                println!(
                    "step {step:>4}  tr {:.4}  rtl {:.4}  total {:.4}",
                    b.tr,
                    b.rtl.unwrap(),
                    b.total
                );
            }
            step += 1;
            if step >= train.steps {
                break 'outer;
            }
        }
    }
    Ok(())
}
