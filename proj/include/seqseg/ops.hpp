#pragma once

#include <span>
#include <vector>

#include "seqseg/tensor.hpp"

namespace seqseg {

// 2D layer kernels with explicit backward passes. conv2d is
// cross-correlation (no kernel flip); deconv2d is its adjoint under the
// matched geometry. All maps are [C,H,W], conv kernels [Co,Ci,kh,kw],
// deconv kernels [Ci,Co,kh,kw].

struct Conv2dGrads {
    Tensor input;
    Tensor kernel;
    std::vector<double> bias;
};

Tensor conv2d(const Tensor& input, const Tensor& kernel,
              std::span<const double> bias, int stride, int pad);
Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input,
                            const Tensor& kernel, int stride, int pad);

Tensor deconv2d(const Tensor& input, const Tensor& kernel, int stride, int pad);
struct Deconv2dGrads {
    Tensor input;
    Tensor kernel;
};
Deconv2dGrads deconv2d_backward(const Tensor& grad_out, const Tensor& input,
                                const Tensor& kernel, int stride, int pad);

struct MaxPoolResult {
    Tensor output;
    std::vector<std::int64_t> argmax;  // flat index into input, per output element
};
MaxPoolResult maxpool2d(const Tensor& input, int k, int stride);
Tensor maxpool2d_backward(const Tensor& grad_out, const MaxPoolResult& fwd,
                          const std::vector<int>& input_shape);

// Batch normalization over a minibatch of [C,H,W] maps; statistics are
// per channel across N*H*W. Running stats update with momentum 0.9 in
// train mode, and are the normalizer in infer mode.
enum class BNMode { Train, Infer };

struct BNState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
};

struct BNCache {
    std::vector<Tensor> xhat;        // normalized pre-affine, per sample
    std::vector<double> inv_std;     // per channel, 1/sqrt(var+eps)
};

std::vector<Tensor> batchnorm(const std::vector<Tensor>& inputs,
                              std::span<const double> gamma,
                              std::span<const double> beta, BNState& state,
                              BNMode mode, double eps, double momentum,
                              BNCache* cache);

struct BNGrads {
    std::vector<Tensor> inputs;
    std::vector<double> gamma;
    std::vector<double> beta;
};
BNGrads batchnorm_backward(const std::vector<Tensor>& grad_out,
                           std::span<const double> gamma, const BNCache& cache);

enum class Activation { Relu, Sigmoid, Tanh };

Tensor activation(const Tensor& input, Activation kind);
// `output` is the forward result; relu/sigmoid/tanh backwards are all
// expressible through it.
Tensor activation_backward(const Tensor& grad_out, const Tensor& output,
                           Activation kind);

Tensor concat_channels(const std::vector<Tensor>& inputs);
std::vector<Tensor> concat_channels_backward(const Tensor& grad_out,
                                             const std::vector<int>& channel_counts);

inline int conv_out_extent(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}
inline int deconv_out_extent(int in, int k, int stride, int pad) {
    return (in - 1) * stride - 2 * pad + k;
}

}  // namespace seqseg
