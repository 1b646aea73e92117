//! Stub embeddings, CLIP-style scores, cosine identity and Face-FID.

use anyhow::Result;
use privedit::evaluation::{clip_score, cosine_similarity, frechet_distance, EmbeddingProvider, StubEmbedder};
use privedit::synthetic::{portrait_image, PortraitParams};

fn main() -> Result<()> {
    let e = StubEmbedder::default();
    let faces: Vec<_> = (0..5).map(|i| portrait_image(&PortraitParams::fixture(i))).collect();
    let emb: Vec<Vec<f64>> = faces.iter().map(|f| e.embed_image(f)).collect::<Result<_, _>>()?;

    println!("cosine(0, 0) = {:.4}", cosine_similarity(&emb[0], &emb[0])?);
    for i in 1..5 {
        println!("cosine(0, {i}) = {:.4}", cosine_similarity(&emb[0], &emb[i])?);
    }
    println!("clip(face 0, \"a professional headshot\") = {:.4}", clip_score(&faces[0], "a professional headshot", &e)?);

    // Distribution distance between two halves of a jittered set.
    let jitter: Vec<Vec<f64>> = emb.iter().map(|v| v.iter().map(|x| x * 0.9 + 0.01).collect()).collect();
    println!("Face-FID(set, set) = {:.6}", frechet_distance(&emb, &emb, 1e-6)?);
    println!("Face-FID(set, jittered) = {:.6}", frechet_distance(&emb, &jitter, 1e-6)?);
    Ok(())
}
