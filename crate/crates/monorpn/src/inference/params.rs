//! Head-parameter persistence.
//!
//! A parameter directory holds one tensor container per item:
//! `alpha.tsr` (the 12 fusion logits), `global_k00.tsr` / `global_b00.tsr`
//! through index 11 for the plain-convolution path, and `local_k00.tsr`
//! (rank-5, `[bins, out, in, kh, kw]`) / `local_b00.tsr` for the
//! depth-aware path.

use super::{ConvHead, InferenceError, PipelineParams, HEAD_OUTPUTS};
use crate::nnops::{load_tensor, save_tensor, DepthAwareKernelSet, FusionWeights, OpError, Tensor};
use std::path::Path;

fn bias_vec(t: &Tensor) -> Result<Vec<f64>, InferenceError> {
    if t.rank() != 1 {
        return Err(InferenceError::ShapeMismatch(format!(
            "bias tensor must be rank 1, got {:?}",
            t.shape()
        )));
    }
    Ok(t.data().to_vec())
}

/// Writes every pipeline parameter into `dir` (created if missing).
pub fn save_params(dir: &Path, params: &PipelineParams) -> Result<(), InferenceError> {
    params.validate()?;
    std::fs::create_dir_all(dir).map_err(OpError::from)?;
    let alpha = Tensor::new(vec![12], params.fusion.alpha.to_vec())?;
    save_tensor(dir.join("alpha.tsr"), &alpha)?;
    for (i, head) in params.global.iter().enumerate() {
        save_tensor(dir.join(format!("global_k{i:02}.tsr")), &head.kernels)?;
        let bias = Tensor::new(vec![head.bias.len()], head.bias.clone())?;
        save_tensor(dir.join(format!("global_b{i:02}.tsr")), &bias)?;
    }
    for (i, ks) in params.local.iter().enumerate() {
        let (kh, kw) = ks.kernel_size();
        let shape = vec![ks.bins(), ks.out_channels(), ks.in_channels(), kh, kw];
        let data: Vec<f64> = ks.banks().iter().flat_map(|b| b.data().iter().copied()).collect();
        save_tensor(dir.join(format!("local_k{i:02}.tsr")), &Tensor::new(shape, data)?)?;
        let bias = Tensor::new(vec![ks.bias().len()], ks.bias().to_vec())?;
        save_tensor(dir.join(format!("local_b{i:02}.tsr")), &bias)?;
    }
    Ok(())
}

/// Loads a parameter directory written by [`save_params`].
pub fn load_params(dir: &Path) -> Result<PipelineParams, InferenceError> {
    let alpha_t = load_tensor(dir.join("alpha.tsr"))?;
    if alpha_t.shape() != [12] {
        return Err(InferenceError::ShapeMismatch(format!(
            "alpha.tsr must hold 12 logits, got {:?}",
            alpha_t.shape()
        )));
    }
    let mut alpha = [0.0; 12];
    alpha.copy_from_slice(alpha_t.data());

    let mut global = Vec::with_capacity(HEAD_OUTPUTS);
    let mut local = Vec::with_capacity(HEAD_OUTPUTS);
    for i in 0..HEAD_OUTPUTS {
        let kernels = load_tensor(dir.join(format!("global_k{i:02}.tsr")))?;
        if kernels.rank() != 4 {
            return Err(InferenceError::ShapeMismatch(format!(
                "global_k{i:02}.tsr must be rank 4, got {:?}",
                kernels.shape()
            )));
        }
        let bias = bias_vec(&load_tensor(dir.join(format!("global_b{i:02}.tsr")))?)?;
        global.push(ConvHead { kernels, bias });

        let packed = load_tensor(dir.join(format!("local_k{i:02}.tsr")))?;
        if packed.rank() != 5 {
            return Err(InferenceError::ShapeMismatch(format!(
                "local_k{i:02}.tsr must be rank 5, got {:?}",
                packed.shape()
            )));
        }
        let s = packed.shape().to_vec();
        let bank_len = s[1] * s[2] * s[3] * s[4];
        let banks: Vec<Tensor> = (0..s[0])
            .map(|b| {
                Tensor::new(
                    vec![s[1], s[2], s[3], s[4]],
                    packed.data()[b * bank_len..(b + 1) * bank_len].to_vec(),
                )
            })
            .collect::<Result<_, _>>()?;
        let bias = bias_vec(&load_tensor(dir.join(format!("local_b{i:02}.tsr")))?)?;
        local.push(DepthAwareKernelSet::new(banks, bias)?);
    }
    let params = PipelineParams { global, local, fusion: FusionWeights { alpha } };
    params.validate()?;
    Ok(params)
}
