#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "seqseg/ops.hpp"
#include "seqseg/tensor.hpp"

namespace seqseg {

struct PNetConfig {
    int unit_count = 5;     // K
    int channels = 64;      // conv output channels in every forward layer
    int msa_channels = 16;  // channels per aggregated scale
    double bn_eps = 1e-5;
    double bn_momentum = 0.9;
};

struct ConvBnRelu {
    Tensor kernel;  // [C, Cin, 3, 3]
    std::vector<double> bias;
    std::vector<double> gamma;
    std::vector<double> beta;
    BNState bn_state;
};

// One stacked unit: a forward branch of 4x (conv 3x3 s1 p1 + BN + ReLU)
// and a backward branch mapping F_1..F_k to full resolution (1x1 conv for
// the top scale, stride-2^j deconvolutions below), concatenating and
// fusing to a sigmoid probability map.
struct UnitModuleParams {
    std::array<ConvBnRelu, 4> fwd;
    std::vector<Tensor> scale_kernels;  // entry j: j==0 conv [msa,C,1,1], else deconv [C,msa,2^{j+1},2^{j+1}]
    Tensor fusion_kernel;               // [1, msa*(k+1), 1, 1]
    std::vector<double> fusion_bias;    // [1]
};

struct PNetParams {
    PNetConfig config;
    std::vector<UnitModuleParams> units;
    std::vector<double> fusion_logits;  // w_k, softmax-normalized at fusion
};

PNetParams make_pnet(const PNetConfig& config);

void msra_init(PNetParams& params, std::uint64_t seed);
void msra_init_unit(UnitModuleParams& unit, std::mt19937_64& rng);

std::int64_t param_count(const PNetParams& params);

// Deconv geometry for scale index j (0-based): stride 2^j, kernel 2^{j+1},
// pad 2^{j-1}.
inline int scale_stride(int j) { return 1 << j; }
inline int scale_kernel_extent(int j) { return 1 << (j + 1); }
inline int scale_pad(int j) { return 1 << (j - 1); }

struct LayerCache {
    std::vector<Tensor> conv_in;
    BNCache bn;
    std::vector<Tensor> out;  // post-relu
};

struct UnitCache {
    std::array<LayerCache, 4> layers;
    std::vector<MaxPoolResult> pool;  // empty for the deepest active unit
    std::vector<Tensor> concat;       // per sample, fusion input
};

struct PNetCache {
    std::vector<Tensor> input;
    std::vector<UnitCache> units;
    std::vector<double> softmax_w;
    std::vector<std::vector<Tensor>> unit_probs;  // [k][n], U_k
    std::vector<Tensor> yhat;
    int k_active = 0;
};

struct PNetOutputs {
    std::vector<std::vector<Tensor>> unit_probs;  // [k][n]
    std::vector<Tensor> yhat;                     // [n]
};

// Batched forward over minibatch slices; BN statistics are taken across
// the whole batch in train mode. `k_active` <= K limits the stack during
// staged training; 0 means all units.
PNetOutputs pnet_forward(PNetParams& params, const std::vector<Tensor>& batch,
                         BNMode mode, int k_active = 0, PNetCache* cache = nullptr);

// Single-slice convenience wrapper (infer mode unless caching).
struct PNetSliceOutput {
    std::vector<Tensor> unit_probs;
    Tensor yhat;
};
PNetSliceOutput pnet_forward_slice(PNetParams& params, const Tensor& slices3,
                                   BNMode mode = BNMode::Infer, int k_active = 0);

struct PNetGrads {
    PNetParams shaped;  // parameter-shaped gradient buffers
    std::vector<Tensor> input;
};

PNetGrads pnet_backward(const PNetParams& params, const PNetCache& cache,
                        const std::vector<Tensor>& grad_yhat,
                        const std::vector<std::vector<Tensor>>& grad_units,
                        bool want_input_grad = false);

// Flat visitation over parameter arrays, in a fixed documented order.
// Used by the optimizer, the checkpoint writer, and param_count.
enum class ParamKind { Learnable, RunningStat };

template <class Params, class Fn>
void visit_pnet_arrays(Params& p, Fn&& fn) {
    for (std::size_t k = 0; k < p.units.size(); ++k) {
        auto& u = p.units[k];
        const std::string prefix = "unit" + std::to_string(k) + ".";
        for (int l = 0; l < 4; ++l) {
            auto& cb = u.fwd[static_cast<std::size_t>(l)];
            const std::string lp = prefix + "fwd" + std::to_string(l) + ".";
            fn(lp + "kernel", ParamKind::Learnable, cb.kernel.data);
            fn(lp + "bias", ParamKind::Learnable, cb.bias);
            fn(lp + "gamma", ParamKind::Learnable, cb.gamma);
            fn(lp + "beta", ParamKind::Learnable, cb.beta);
            fn(lp + "running_mean", ParamKind::RunningStat, cb.bn_state.running_mean);
            fn(lp + "running_var", ParamKind::RunningStat, cb.bn_state.running_var);
        }
        for (std::size_t j = 0; j < u.scale_kernels.size(); ++j)
            fn(prefix + "scale" + std::to_string(j), ParamKind::Learnable,
               u.scale_kernels[j].data);
        fn(prefix + "fusion_kernel", ParamKind::Learnable, u.fusion_kernel.data);
        fn(prefix + "fusion_bias", ParamKind::Learnable, u.fusion_bias);
    }
    fn(std::string("fusion_logits"), ParamKind::Learnable, p.fusion_logits);
}

std::vector<double> softmax(const std::vector<double>& logits);

}  // namespace seqseg
