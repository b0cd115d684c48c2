//! Trains a residual fast LSTM on a teacher-labelled synthetic corpus and
//! reports loss and held-out frame error per epoch.
//!
//! ```text
//! cargo run --release -p reslstm --example synthetic_training -- [variant] [lr] [epochs]
//! ```

use reslstm::cells::{CellDims, GateStyle, ResidualVariant};
use reslstm::data::{gen_synthetic, SyntheticConfig};
use reslstm::network::init_params;
use reslstm::training::{Hyperparams, Trainer};
use reslstm::NetworkConfig;

fn main() -> reslstm::Result<()> {
    let mut args = std::env::args().skip(1);
    let variant: ResidualVariant = args.next().as_deref().unwrap_or("res1").parse()?;
    let lr: f64 = args.next().map_or(0.001, |s| s.parse().expect("lr"));
    let epochs: usize = args.next().map_or(20, |s| s.parse().expect("epochs"));

    let corpus = gen_synthetic(&SyntheticConfig {
        seed: 1,
        ..Default::default()
    })?;
    let data = corpus.featurized()?;
    let (train, heldout) = data.split_at(data.len() * 4 / 5);
    println!(
        "corpus: {} train / {} held-out utterances, {} frames, input dim {}",
        train.len(),
        heldout.len(),
        corpus.num_frames(),
        train[0].frames.cols()
    );

    let config = NetworkConfig {
        depth: 2,
        dims: CellDims::new(train[0].frames.cols(), 32, 16, 0)?,
        style: GateStyle::Fast,
        variant,
        n_out: corpus.config.n_out,
    };
    let hyper = Hyperparams {
        learning_rate: lr,
        epochs,
        ..Default::default()
    };
    let mut trainer = Trainer::new(config, init_params(&config, 7), hyper)?;
    let report = trainer.fit(train, heldout, |r| println!("{r}"))?;
    println!(
        "final/first loss ratio = {:.3}",
        report.final_loss().unwrap() / report.first_loss().unwrap()
    );
    Ok(())
}
