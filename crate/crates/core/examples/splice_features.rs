//! The input pipeline: ±2-frame splicing with edge replication followed by
//! the speaker vector, taking 40-dim frames and a 100-dim speaker vector to
//! a 300-dim network input.
//!
//! ```text
//! cargo run --release -p reslstm --example splice_features
//! ```

use reslstm::data::{featurize, splice, SpliceConfig, Utterance};
use reslstm::{Matrix, Vector};

fn main() -> reslstm::Result<()> {
    let small = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]])?;
    println!("k=1 splice of a 3x2 utterance:");
    let s = splice(&small, 1);
    for t in 0..s.rows() {
        println!("  t={t}: {:?}", s.row(t));
    }

    let cfg = SpliceConfig {
        context: 2,
        speaker_dim: 100,
    };
    let utt = Utterance {
        id: "demo".into(),
        frames: Matrix::from_fn(6, 40, |t, j| (t * 100 + j) as f64),
        labels: vec![0; 6],
        speaker_vec: Some(Vector::from_vec((0..100).map(|i| i as f64 / 100.0).collect())),
    };
    let net_in = featurize(&utt, &cfg)?;
    println!(
        "40-dim frames, context 2, 100-dim speaker vector -> {:?} (expected width {})",
        net_in.frames.shape(),
        cfg.output_dim(40)
    );
    // column 0 of each 40-wide block is 100·(source frame index)
    for t in 0..net_in.num_frames() {
        let sources: Vec<usize> = (0..5).map(|b| net_in.frames.get(t, b * 40) as usize / 100).collect();
        println!("  t={t}: source frames {sources:?}");
    }
    Ok(())
}
