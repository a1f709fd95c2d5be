//! Direct and depth-aware (row-binned) 2D convolution.
//!
//! Convolution here is cross-correlation (no kernel flip) over zero-padded
//! inputs, the deep-learning convention. The depth-aware variant selects a
//! kernel bank per output row bin while receptive fields still cross bin
//! boundaries, so it degenerates to plain convolution when `b = 1` or when
//! all banks are identical — bit-exactly, which is what the tests pin.

use super::{OpError, Tensor};
use std::ops::Range;

/// Per-bin kernel banks plus one bias vector shared by every bin.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthAwareKernelSet {
    banks: Vec<Tensor>,
    bias: Vec<f64>,
}

impl DepthAwareKernelSet {
    pub fn new(banks: Vec<Tensor>, bias: Vec<f64>) -> Result<Self, OpError> {
        let first = banks
            .first()
            .ok_or_else(|| OpError::ShapeMismatch("kernel set needs at least one bank".into()))?;
        if first.rank() != 4 {
            return Err(OpError::ShapeMismatch(format!(
                "kernel banks must be [out, in, kh, kw], got {:?}",
                first.shape()
            )));
        }
        if banks.iter().any(|b| b.shape() != first.shape()) {
            return Err(OpError::ShapeMismatch("all banks must share one shape".into()));
        }
        if bias.len() != first.shape()[0] {
            return Err(OpError::ShapeMismatch(format!(
                "bias length {} != out channels {}",
                bias.len(),
                first.shape()[0]
            )));
        }
        Ok(Self { banks, bias })
    }

    pub fn bins(&self) -> usize {
        self.banks.len()
    }

    pub fn out_channels(&self) -> usize {
        self.banks[0].shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.banks[0].shape()[1]
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.banks[0].shape()[2], self.banks[0].shape()[3])
    }

    pub fn banks(&self) -> &[Tensor] {
        &self.banks
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
}

/// Row bin of `row` when `height` rows split into `b` bins:
/// `floor(row * b / height)`.
pub fn bin_index(row: usize, height: usize, b: usize) -> Result<usize, OpError> {
    if row >= height {
        return Err(OpError::OutOfRange(format!("row {row} >= height {height}")));
    }
    if b < 1 || b > height {
        return Err(OpError::OutOfRange(format!("bin count {b} not in 1..={height}")));
    }
    Ok(row * b / height)
}

/// The contiguous row range of every bin, in order. Each range is non-empty
/// when `b <= height`.
pub fn bin_row_ranges(height: usize, b: usize) -> Vec<Range<usize>> {
    (0..b)
        .map(|i| {
            let start = (i * height).div_ceil(b);
            let end = ((i + 1) * height).div_ceil(b);
            start..end
        })
        .collect()
}

fn conv_output_len(input: usize, kernel: usize, stride: usize, pad: usize, dilation: usize) -> Result<usize, OpError> {
    let span = dilation * (kernel - 1) + 1;
    let padded = input + 2 * pad;
    if padded < span {
        return Err(OpError::ShapeMismatch(format!(
            "kernel span {span} exceeds padded input {padded}"
        )));
    }
    Ok((padded - span) / stride + 1)
}

/// Shared grouped convolution core. Accumulation order is fixed
/// (channel-major, then kernel rows, then kernel columns) and out-of-bounds
/// reads contribute an explicit `0.0` term, so every caller produces
/// bit-identical results for identical operand values.
fn conv2d_impl(
    input: &Tensor,
    kernels: &Tensor,
    bias: &[f64],
    groups: usize,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
    dilation: usize,
) -> Result<Tensor, OpError> {
    if input.rank() != 3 {
        return Err(OpError::ShapeMismatch(format!(
            "input must be [channels, height, width], got {:?}",
            input.shape()
        )));
    }
    if kernels.rank() != 4 {
        return Err(OpError::ShapeMismatch(format!(
            "kernels must be [out, in/groups, kh, kw], got {:?}",
            kernels.shape()
        )));
    }
    if stride == 0 || dilation == 0 {
        return Err(OpError::ShapeMismatch("stride and dilation must be positive".into()));
    }
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (c_out, c_k, kh, kw) =
        (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2], kernels.shape()[3]);
    if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
        return Err(OpError::ShapeMismatch(format!(
            "groups {groups} must divide in {c_in} and out {c_out} channels"
        )));
    }
    let in_per_group = c_in / groups;
    let out_per_group = c_out / groups;
    if c_k != in_per_group {
        return Err(OpError::ShapeMismatch(format!(
            "kernel expects {c_k} input channels per group, input has {in_per_group}"
        )));
    }
    if bias.len() != c_out {
        return Err(OpError::ShapeMismatch(format!(
            "bias length {} != out channels {c_out}",
            bias.len()
        )));
    }
    let out_h = conv_output_len(h, kh, stride, pad_h, dilation)?;
    let out_w = conv_output_len(w, kw, stride, pad_w, dilation)?;

    let x = input.data();
    let k = kernels.data();
    let mut out = Tensor::zeros(vec![c_out, out_h, out_w]);
    let o_data = out.data_mut();
    for o in 0..c_out {
        let g = o / out_per_group;
        for oy in 0..out_h {
            let iy0 = (oy * stride) as isize - pad_h as isize;
            for ox in 0..out_w {
                let ix0 = (ox * stride) as isize - pad_w as isize;
                let mut acc = bias[o];
                for cg in 0..in_per_group {
                    let c = g * in_per_group + cg;
                    let x_base = c * h * w;
                    let k_base = ((o * c_k) + cg) * kh * kw;
                    for ky in 0..kh {
                        let iy = iy0 + (ky * dilation) as isize;
                        let row_ok = iy >= 0 && (iy as usize) < h;
                        let x_row = if row_ok { x_base + iy as usize * w } else { 0 };
                        for kx in 0..kw {
                            let ix = ix0 + (kx * dilation) as isize;
                            let v = if row_ok && ix >= 0 && (ix as usize) < w {
                                x[x_row + ix as usize]
                            } else {
                                0.0
                            };
                            acc += v * k[k_base + ky * kw + kx];
                        }
                    }
                }
                o_data[(o * out_h + oy) * out_w + ox] = acc;
            }
        }
    }
    Ok(out)
}

/// Standard 2D convolution (cross-correlation) with zero padding.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &[f64],
    stride: usize,
    pad: usize,
    dilation: usize,
) -> Result<Tensor, OpError> {
    conv2d_impl(input, kernels, bias, 1, stride, pad, pad, dilation)
}

/// Reference depth-aware convolution: output row `r` is the standard
/// convolution response at `r` computed with kernel bank
/// `bin_index(r, out_h, b)` over the full input. Zero padding applies only
/// at image borders, never at bin boundaries.
pub fn depth_aware_conv_reference(
    input: &Tensor,
    ks: &DepthAwareKernelSet,
    stride: usize,
    pad: usize,
) -> Result<Tensor, OpError> {
    let (kh, _) = ks.kernel_size();
    let out_h = conv_output_len(input.shape()[1], kh, stride, pad, 1)?;
    if ks.bins() > out_h {
        return Err(OpError::BinCountExceedsRows { bins: ks.bins(), rows: out_h });
    }
    let per_bank: Vec<Tensor> = ks
        .banks()
        .iter()
        .map(|bank| conv2d(input, bank, ks.bias(), stride, pad, 1))
        .collect::<Result<_, _>>()?;
    let (c_out, out_w) = (per_bank[0].shape()[0], per_bank[0].shape()[2]);
    let mut out = Tensor::zeros(vec![c_out, out_h, out_w]);
    for r in 0..out_h {
        let bank = &per_bank[bin_index(r, out_h, ks.bins())?];
        for o in 0..c_out {
            for x in 0..out_w {
                let v = bank.data()[(o * out_h + r) * out_w + x];
                out.data_mut()[(o * out_h + r) * out_w + x] = v;
            }
        }
    }
    Ok(out)
}

/// Optimized depth-aware convolution: unfolds the input rows into one
/// overlapping, explicitly padded slab per bin, stacks the slabs along the
/// channel axis, and runs a single grouped convolution with the bins as
/// groups. Bit-identical to [`depth_aware_conv_reference`].
pub fn depth_aware_conv(
    input: &Tensor,
    ks: &DepthAwareKernelSet,
    stride: usize,
    pad: usize,
) -> Result<Tensor, OpError> {
    if input.rank() != 3 {
        return Err(OpError::ShapeMismatch(format!(
            "input must be [channels, height, width], got {:?}",
            input.shape()
        )));
    }
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if c_in != ks.in_channels() {
        return Err(OpError::ShapeMismatch(format!(
            "input has {c_in} channels, kernel set expects {}",
            ks.in_channels()
        )));
    }
    let (kh, kw) = ks.kernel_size();
    let out_h = conv_output_len(h, kh, stride, pad, 1)?;
    let out_w = conv_output_len(w, kw, stride, pad, 1)?;
    let b = ks.bins();
    if b > out_h {
        return Err(OpError::BinCountExceedsRows { bins: b, rows: out_h });
    }
    let ranges = bin_row_ranges(out_h, b);

    // input row window each bin's output rows read, in padded coordinates
    let windows: Vec<(isize, usize)> = ranges
        .iter()
        .map(|r| {
            let lo = (r.start * stride) as isize - pad as isize;
            let hi = ((r.end - 1) * stride) as isize - pad as isize + (kh - 1) as isize;
            (lo, (hi - lo + 1) as usize)
        })
        .collect();
    let slab_h = windows.iter().map(|&(_, n)| n).max().unwrap();

    // unfold: copy each bin's window into its group of channels, with rows
    // outside the image left as explicit zeros
    let mut slabs = Tensor::zeros(vec![b * c_in, slab_h, w]);
    for (bin, &(lo, rows)) in windows.iter().enumerate() {
        for dy in 0..rows {
            let iy = lo + dy as isize;
            if iy < 0 || iy as usize >= h {
                continue;
            }
            let iy = iy as usize;
            for c in 0..c_in {
                let src = (c * h + iy) * w;
                let dst = ((bin * c_in + c) * slab_h + dy) * w;
                slabs.data_mut()[dst..dst + w].copy_from_slice(&input.data()[src..src + w]);
            }
        }
    }

    // grouped kernel: banks concatenated along the output-channel axis
    let c_out = ks.out_channels();
    let mut grouped_k = Tensor::zeros(vec![b * c_out, c_in, kh, kw]);
    for (bin, bank) in ks.banks().iter().enumerate() {
        let n = bank.len();
        grouped_k.data_mut()[bin * n..(bin + 1) * n].copy_from_slice(bank.data());
    }
    let grouped_bias: Vec<f64> = std::iter::repeat(ks.bias())
        .take(b)
        .flat_map(|s| s.iter().copied())
        .collect();

    let grouped_out = conv2d_impl(&slabs, &grouped_k, &grouped_bias, b, stride, 0, pad, 1)?;
    let slab_out_h = grouped_out.shape()[1];

    // gather: bin i's real rows are the first rows of its output group
    let mut out = Tensor::zeros(vec![c_out, out_h, out_w]);
    for (bin, range) in ranges.iter().enumerate() {
        for (dy, r) in range.clone().enumerate() {
            for o in 0..c_out {
                let src = ((bin * c_out + o) * slab_out_h + dy) * out_w;
                let dst = (o * out_h + r) * out_w;
                out.data_mut()[dst..dst + out_w]
                    .copy_from_slice(&grouped_out.data()[src..src + out_w]);
            }
        }
    }
    Ok(out)
}

/// Convolution shape descriptor for multiply-add accounting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvOp {
    Standard {
        in_channels: usize,
        out_channels: usize,
        out_h: usize,
        out_w: usize,
        kernel_h: usize,
        kernel_w: usize,
    },
    DepthAware {
        in_channels: usize,
        out_channels: usize,
        out_h: usize,
        out_w: usize,
        kernel_h: usize,
        kernel_w: usize,
        bins: usize,
    },
}

/// Exact multiply-add count of a convolution. Every output element costs
/// `in_channels * kernel_h * kernel_w` products regardless of which bank
/// produced it, so the depth-aware count equals the standard count for
/// equal shapes, independent of the bin count.
pub fn flop_count(op: &ConvOp) -> u64 {
    let per_element = |ci: usize, kh: usize, kw: usize| (ci * kh * kw) as u64;
    match *op {
        ConvOp::Standard { in_channels, out_channels, out_h, out_w, kernel_h, kernel_w } => {
            (out_channels * out_h * out_w) as u64 * per_element(in_channels, kernel_h, kernel_w)
        }
        ConvOp::DepthAware {
            in_channels,
            out_channels,
            out_h,
            out_w,
            kernel_h,
            kernel_w,
            bins,
        } => {
            // summed per bin; row counts add back up to out_h
            bin_row_ranges(out_h, bins.min(out_h.max(1)))
                .iter()
                .map(|r| {
                    (out_channels * r.len() * out_w) as u64
                        * per_element(in_channels, kernel_h, kernel_w)
                })
                .sum()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Independent quadruple-loop convolution used as the test oracle.
    fn conv_oracle(
        input: &Tensor,
        kernels: &Tensor,
        bias: &[f64],
        stride: usize,
        pad: usize,
        dilation: usize,
    ) -> Tensor {
        let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (c_out, _, kh, kw) =
            (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2], kernels.shape()[3]);
        let span_h = dilation * (kh - 1) + 1;
        let span_w = dilation * (kw - 1) + 1;
        let out_h = (h + 2 * pad - span_h) / stride + 1;
        let out_w = (w + 2 * pad - span_w) / stride + 1;
        let mut out = Tensor::zeros(vec![c_out, out_h, out_w]);
        for o in 0..c_out {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = bias[o];
                    for c in 0..c_in {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky * dilation) as isize - pad as isize;
                                let ix = (ox * stride + kx * dilation) as isize - pad as isize;
                                if iy >= 0
                                    && ix >= 0
                                    && (iy as usize) < h
                                    && (ix as usize) < w
                                {
                                    acc += input.at(&[c, iy as usize, ix as usize])
                                        * kernels.at(&[o, c, ky, kx]);
                                }
                            }
                        }
                    }
                    out.set(&[o, oy, ox], acc);
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random_tensor(&mut rng, vec![1, 5, 7]);
        let kernel = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let out = conv2d(&input, &kernel, &[0.0], 1, 0, 1).unwrap();
        assert!(out.bits_eq(&input));
    }

    #[test]
    fn box_filter_preserves_constant_interior() {
        let input = Tensor::from_fn(vec![1, 6, 6], |_| 3.5);
        let kernel = Tensor::new(vec![1, 1, 3, 3], vec![1.0 / 9.0; 9]).unwrap();
        let out = conv2d(&input, &kernel, &[0.0], 1, 1, 1).unwrap();
        for y in 1..5 {
            for x in 1..5 {
                assert!((out.at(&[0, y, x]) - 3.5).abs() < 1e-12);
            }
        }
        // padded border sees zeros
        assert!(out.at(&[0, 0, 0]) < 3.5);
    }

    #[test]
    fn conv2d_matches_quadruple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = random_tensor(&mut rng, vec![2, 5, 7]);
        let kernels = random_tensor(&mut rng, vec![3, 2, 3, 3]);
        let bias = vec![0.1, -0.2, 0.3];
        for (stride, pad, dilation) in [(1, 0, 1), (1, 1, 1), (2, 1, 1), (1, 2, 2)] {
            let got = conv2d(&input, &kernels, &bias, stride, pad, dilation).unwrap();
            let want = conv_oracle(&input, &kernels, &bias, stride, pad, dilation);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv2d_rejects_bad_shapes() {
        let input = Tensor::zeros(vec![2, 4, 4]);
        let kernels = Tensor::zeros(vec![1, 3, 3, 3]);
        assert!(matches!(
            conv2d(&input, &kernels, &[0.0], 1, 1, 1),
            Err(OpError::ShapeMismatch(_))
        ));
        let kernels = Tensor::zeros(vec![1, 2, 9, 9]);
        assert!(matches!(
            conv2d(&input, &kernels, &[0.0], 1, 0, 1),
            Err(OpError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn bin_index_examples() {
        assert_eq!(bin_index(0, 10, 4).unwrap(), 0);
        assert_eq!(bin_index(17, 32, 32).unwrap(), 17);
        assert_eq!(bin_index(9, 10, 4).unwrap(), 3);
        assert!(bin_index(10, 10, 4).is_err());
        assert!(bin_index(0, 10, 0).is_err());
        assert!(bin_index(0, 10, 11).is_err());
    }

    #[test]
    fn bins_partition_rows_contiguously() {
        for height in 1..40 {
            for b in 1..=height {
                let ranges = bin_row_ranges(height, b);
                assert_eq!(ranges.len(), b);
                assert_eq!(ranges[0].start, 0);
                assert_eq!(ranges[b - 1].end, height);
                for i in 0..b {
                    assert!(!ranges[i].is_empty(), "empty bin {i} for h={height} b={b}");
                    if i > 0 {
                        assert_eq!(ranges[i].start, ranges[i - 1].end);
                    }
                    for r in ranges[i].clone() {
                        assert_eq!(bin_index(r, height, b).unwrap(), i);
                    }
                }
                // bins differ by at most one row
                let min = ranges.iter().map(|r| r.len()).min().unwrap();
                let max = ranges.iter().map(|r| r.len()).max().unwrap();
                assert!(max - min <= 1);
            }
        }
    }

    fn random_kernel_set(
        rng: &mut ChaCha8Rng,
        bins: usize,
        c_out: usize,
        c_in: usize,
        k: usize,
    ) -> DepthAwareKernelSet {
        let banks = (0..bins).map(|_| random_tensor(rng, vec![c_out, c_in, k, k])).collect();
        let bias = (0..c_out).map(|_| rng.gen_range(-0.5..0.5)).collect();
        DepthAwareKernelSet::new(banks, bias).unwrap()
    }

    #[test]
    fn single_bin_equals_standard_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random_tensor(&mut rng, vec![2, 8, 6]);
        let ks = random_kernel_set(&mut rng, 1, 3, 2, 3);
        let plain = conv2d(&input, &ks.banks()[0], ks.bias(), 1, 1, 1).unwrap();
        let reference = depth_aware_conv_reference(&input, &ks, 1, 1).unwrap();
        let fast = depth_aware_conv(&input, &ks, 1, 1).unwrap();
        assert!(reference.bits_eq(&plain));
        assert!(fast.bits_eq(&plain));
    }

    #[test]
    fn identical_banks_equal_standard_conv_for_any_bin_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input = random_tensor(&mut rng, vec![2, 12, 5]);
        let bank = random_tensor(&mut rng, vec![3, 2, 3, 3]);
        let bias: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let plain = conv2d(&input, &bank, &bias, 1, 1, 1).unwrap();
        for b in [1, 2, 3, 4, 6, 12] {
            let ks = DepthAwareKernelSet::new(vec![bank.clone(); b], bias.clone()).unwrap();
            assert!(depth_aware_conv_reference(&input, &ks, 1, 1).unwrap().bits_eq(&plain));
            assert!(depth_aware_conv(&input, &ks, 1, 1).unwrap().bits_eq(&plain));
        }
    }

    #[test]
    fn each_row_uses_its_bin_bank() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = random_tensor(&mut rng, vec![2, 9, 4]);
        let ks = random_kernel_set(&mut rng, 2, 2, 2, 3);
        let out = depth_aware_conv_reference(&input, &ks, 1, 1).unwrap();
        let out_h = out.shape()[1];
        for (bin, bank) in ks.banks().iter().enumerate() {
            let full = conv2d(&input, bank, ks.bias(), 1, 1, 1).unwrap();
            for r in 0..out_h {
                if bin_index(r, out_h, 2).unwrap() == bin {
                    for o in 0..2 {
                        for x in 0..out.shape()[2] {
                            assert_eq!(
                                out.at(&[o, r, x]).to_bits(),
                                full.at(&[o, r, x]).to_bits()
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn fast_path_is_bit_identical_to_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..60 {
            let c_in = rng.gen_range(1..4);
            let c_out = rng.gen_range(1..4);
            let h = rng.gen_range(3..16);
            let w = rng.gen_range(3..12);
            let k = [1, 3, 5][rng.gen_range(0..3)];
            let stride = rng.gen_range(1..3);
            let pad = rng.gen_range(0..3);
            let span = k;
            if h + 2 * pad < span || w + 2 * pad < span {
                continue;
            }
            let out_h = (h + 2 * pad - span) / stride + 1;
            let bins = rng.gen_range(1..=out_h.min(6));
            let input = random_tensor(&mut rng, vec![c_in, h, w]);
            let ks = random_kernel_set(&mut rng, bins, c_out, c_in, k);
            let reference = depth_aware_conv_reference(&input, &ks, stride, pad).unwrap();
            let fast = depth_aware_conv(&input, &ks, stride, pad).unwrap();
            assert!(
                fast.bits_eq(&reference),
                "mismatch c_in={c_in} c_out={c_out} h={h} w={w} k={k} stride={stride} pad={pad} bins={bins}"
            );
        }
    }

    #[test]
    fn bin_count_cannot_exceed_output_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let input = random_tensor(&mut rng, vec![1, 4, 4]);
        let ks = random_kernel_set(&mut rng, 5, 1, 1, 3);
        assert!(matches!(
            depth_aware_conv(&input, &ks, 1, 0),
            Err(OpError::BinCountExceedsRows { bins: 5, rows: 2 })
        ));
        assert!(matches!(
            depth_aware_conv_reference(&input, &ks, 1, 0),
            Err(OpError::BinCountExceedsRows { .. })
        ));
    }

    #[test]
    fn flop_count_closed_form() {
        let op = ConvOp::Standard {
            in_channels: 2,
            out_channels: 3,
            out_h: 4,
            out_w: 4,
            kernel_h: 1,
            kernel_w: 1,
        };
        assert_eq!(flop_count(&op), 96);
    }

    #[test]
    fn flop_parity_standard_vs_depth_aware() {
        let standard = ConvOp::Standard {
            in_channels: 64,
            out_channels: 32,
            out_h: 32,
            out_w: 106,
            kernel_h: 3,
            kernel_w: 3,
        };
        let base = flop_count(&standard);
        for bins in [1, 4, 8, 16, 32] {
            let da = ConvOp::DepthAware {
                in_channels: 64,
                out_channels: 32,
                out_h: 32,
                out_w: 106,
                kernel_h: 3,
                kernel_w: 3,
                bins,
            };
            assert_eq!(flop_count(&da), base, "bins={bins}");
        }
    }
}
