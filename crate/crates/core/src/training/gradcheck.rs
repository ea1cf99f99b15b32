//! Central-difference check of a variant's complete training graph.

use crate::error::Result;
use crate::models::{ModelConfig, ModelParams, VariantSpec};
use crate::ndcore::{gradient_check, GradCheckReport, Mode};
use crate::rng::Streams;

use super::trainer::{batch_loss, build_batch, Reduction, TrainingData};

/// Checks every parameter of a freshly initialized `variant` on one batch of
/// `queries` query rows with `k` article slots each, in `f64` with dropout disabled.
pub fn check_variant_gradients(
    variant: VariantSpec,
    data: &TrainingData<f64>,
    model_cfg: &ModelConfig,
    queries: &[usize],
    k: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let streams = Streams::new(seed);
    let mut model: ModelParams<f64> = ModelParams::<f32>::init(variant, model_cfg, &mut streams.stream("init"))?.cast();
    model.disable_dropout();
    let batch = build_batch(&variant, &data.positives, queries, data.num_articles(), k, &mut streams.stream("batching"))?;
    let mut rng = streams.stream("dropout");
    gradient_check(&mut model, h, |m| batch_loss(m, data, &batch, Mode::Train, Reduction::Mean, &mut rng, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{EncoderConfig, VariantName};
    use crate::synthdata::{Dataset, GenConfig};

    #[test]
    fn all_trainable_variants_pass() {
        let ds = Dataset::generate(&GenConfig { articles: 200, queries: 200, ..Default::default() }).unwrap();
        let cfg = ModelConfig {
            encoder: EncoderConfig { input_dim: 64, hidden_widths: vec![12, 10], output_dim: 32, dropout_rate: 0.5 },
            head_hidden: vec![10, 8],
            attribute_cardinalities: vec![7, 8],
            linear_bias_init: 0.0,
        };
        for name in VariantName::ALL {
            let v = VariantSpec::of(name);
            if !v.is_trainable() {
                continue;
            }
            let data = TrainingData::<f64>::from_split(&ds.train, &v).unwrap();
            let r = check_variant_gradients(v, &data, &cfg, &[0, 1, 2, 3], 5, 1e-4, 7).unwrap();
            println!("{name}: {} params, max rel err {:.3e} at {} ({} vs {})", r.checked, r.max_rel_error, r.worst_index, r.analytic, r.numeric);
            assert_eq!(r.kink_crossings, 0, "{name}: check point straddles a ReLU kink");
            assert!(r.max_rel_error < 1e-3, "{name}: {r:?}");
        }
    }
}
