//! Exact t-SNE of two Gaussian clusters, written as CSV and SVG, with the
//! silhouette of the embedding.
//!
//! cargo run --release --example tsne -- [out_dir]

use contrast3d::embed2d::{silhouette, tsne_embed, write_embedding_csv, write_embedding_svg, EmbeddedPoint, TsneConfig};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> contrast3d::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "example_out/tsne".into()));
    std::fs::create_dir_all(&out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 60;
    let groups: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = Array2::from_shape_fn((n, 16), |(i, j)| {
        let shift = if groups[i] == 1 && j < 4 { 3.0 } else { 0.0 };
        let noise: f64 = StandardNormal.sample(&mut rng);
        shift + noise
    });
    let result = tsne_embed(x.view(), &TsneConfig::default())?;
    let points: Vec<EmbeddedPoint> = (0..n)
        .map(|i| EmbeddedPoint {
            id: format!("p{i:02}"),
            x: result.embedding[[i, 0]],
            y: result.embedding[[i, 1]],
            label: if groups[i] == 1 { "positive" } else { "control" }.into(),
            channel: "demo".into(),
        })
        .collect();
    write_embedding_csv(out.join("tsne.csv"), &points)?;
    write_embedding_svg(out.join("tsne.svg"), &points)?;
    println!(
        "perplexity {:.1}, final KL {:.4}, silhouette {:.3}",
        result.perplexity,
        result.kl_trace.last().copied().unwrap_or(f64::NAN),
        silhouette(result.embedding.view(), &groups)?
    );
    Ok(())
}
