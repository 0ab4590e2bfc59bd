//! Optimal prediction rule and its self-distillation parameters for a one-spike model.

use spectral_distill::optimal::{optimal_pred_rule, synthesize_sd};
use spectral_distill::shrinkage::limiting_pred_risk;
use spectral_distill::{ModelContext, SpikedModel};

fn main() -> spectral_distill::Result<()> {
    let model = SpikedModel::with_pairs(1.0, 2.0, &[(7.0, 1.7)], 2.0, 4.0)?;
    let ctx = ModelContext::new(&model)?;
    let (rule, coef) = optimal_pred_rule(&ctx)?;
    let sd = synthesize_sd(&rule.normalized())?;
    let risk = limiting_pred_risk(&ctx, &rule.to_shrinkage())?;
    println!("b = {:?}, λ = {:?}, ξ = {:?}, risk = {}", coef.b, sd.params.lambdas, sd.params.xis, risk.total);
    Ok(())
}
