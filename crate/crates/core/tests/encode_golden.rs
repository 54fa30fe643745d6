mod common;

use chartfolio::autoencoder::Checkpoint;
use chartfolio::chart_render::{render, RenderConfig};

/// Embedding and reconstruction loss of the reference chart under the tiny
/// corpus checkpoint, pinned against a stored copy.
#[test]
fn reference_chart_encodes_to_the_stored_vector() {
    let bytes = std::fs::read(common::manifest_dir().join("../../fuzz/corpus/checkpoint/tiny.cae")).unwrap();
    let ckpt = Checkpoint::from_bytes(&bytes).unwrap();
    let img = render(&common::reference_window(), &RenderConfig::square(8)).unwrap();
    let vector = ckpt.encode_image(&img).unwrap();
    let (_, loss) = chartfolio::autoencoder::reconstruct(&img, &ckpt).unwrap();
    let mut text = format!("model_id,{}\nloss,{loss:e}\n", ckpt.model_id());
    for v in &vector {
        text.push_str(&format!("v,{v:e}\n"));
    }
    let stored = common::golden_bytes(&common::golden("reference_tiny_embedding.csv"), text.as_bytes());
    let stored = String::from_utf8(stored).unwrap();
    let mut lines = stored.lines();
    assert_eq!(lines.next().unwrap(), format!("model_id,{}", ckpt.model_id()));
    let values: Vec<f64> = lines.map(|l| l.split_once(',').unwrap().1.parse().unwrap()).collect();
    assert_eq!(values.len(), vector.len() + 1);
    assert!((values[0] - loss).abs() <= 1e-9 * loss.abs().max(1.0), "loss {loss} vs {}", values[0]);
    for (i, (a, b)) in vector.iter().zip(&values[1..]).enumerate() {
        assert!((a - b).abs() <= 1e-9, "component {i}: {a} vs stored {b}");
    }
}
