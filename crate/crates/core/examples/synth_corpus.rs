//! Renders a toy corpus, writes it as feature files and prints its statistics.
//!
//! `cargo run --release --example synth_corpus -- [phrases] [frames] [seed]`

use envpred::features::{
    compute_norm_stats, load_corpus, split_indices, synth_corpus, write_feature_file, write_manifest, ToySingerConfig,
};

fn main() -> envpred::Result<()> {
    let arg = |i: usize, default: u64| std::env::args().nth(i).and_then(|a| a.parse().ok()).unwrap_or(default);
    let (phrases, frames, seed) = (arg(1, 20) as usize, arg(2, 400) as usize, arg(3, 1));
    let singer = ToySingerConfig::new(seed);
    let corpus = synth_corpus(&singer, phrases, frames)?;

    let dir = std::env::temp_dir().join(format!("envpred-corpus-{seed}"));
    std::fs::create_dir_all(&dir)?;
    let mut names = Vec::new();
    for (i, seq) in corpus.iter().enumerate() {
        let name = format!("phrase-{i:04}.fsq").into();
        write_feature_file(seq, dir.join(&name))?;
        names.push(name);
    }
    write_manifest(dir.join("manifest.txt"), &names)?;
    assert_eq!(load_corpus(dir.join("manifest.txt"))?, corpus);

    let (train, test) = split_indices(corpus.len());
    let norm = compute_norm_stats(&corpus)?;
    println!("{phrases} phrases x {frames} frames in {}", dir.display());
    println!("train {} / test {} phrases (test: {test:?})", train.len(), test.len());
    println!("envelope mean {:.2} dB, sd {:.2} dB", norm.env_mean, norm.env_sd);
    println!("log f0 mean {:.3}, sd {:.3}", norm.log_f0_mean, norm.log_f0_sd);
    println!("loudness mean {:.2} dB, sd {:.2} dB", norm.loudness_mean, norm.loudness_sd);
    let seq = &corpus[0];
    let bins: Vec<String> = seq.frame(frames / 2).iter().step_by(6).map(|v| format!("{v:6.1}")).collect();
    println!("phrase 0, frame {}: phoneme {}, every 6th bin: {}", frames / 2, seq.phonemes[frames / 2], bins.join(" "));
    Ok(())
}
