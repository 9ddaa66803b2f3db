#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "seqseg/ops.hpp"
#include "seqseg/tensor.hpp"

namespace seqseg {

// Convolutional LSTM over single-channel probability maps. Gate
// transforms are 1->1 channel 3x3 convolutions (pad 1, stride 1);
// peephole weights and biases are broadcast scalars, so each direction
// carries 72 kernel scalars plus 7 extras.
struct CLSTMParams {
    Tensor w_yi, w_hi, w_yf, w_hf, w_yc, w_hc, w_yo, w_ho;  // each [1,1,3,3]
    double p_ci = 0.0, p_cf = 0.0, p_co = 0.0;
    double b_i = 0.0, b_f = 0.0, b_c = 0.0, b_o = 0.0;
};

struct BiRNNParams {
    CLSTMParams backward_dir;  // descending tau
    CLSTMParams forward_dir;   // ascending tau
    double lambda_backward = 0.0;  // combination logits, softmax-normalized
    double lambda_forward = 0.0;
};

CLSTMParams make_clstm();
BiRNNParams make_birnn();

// Pass-through initialization: the candidate conv copies (and sharpens)
// the incoming probability map, gates start half open, everything else
// is Normal(0, 0.01) noise. The combined output then starts out close
// to the input sequence itself.
void birnn_init(BiRNNParams& params, std::uint64_t seed);

struct CLSTMCounts {
    std::int64_t conv_scalars;  // 72
    std::int64_t total;         // 79
};
CLSTMCounts clstm_param_count(const CLSTMParams& params);

struct CLSTMStepCache {
    Tensor input, h_prev, c_prev;
    Tensor gate_i, gate_f, gate_o, g;  // g = tanh(candidate pre-activation)
    Tensor c, tanh_c;
};

struct CLSTMState {
    Tensor h, c;
};

CLSTMState clstm_cell(const Tensor& input, const Tensor& h_prev,
                      const Tensor& c_prev, const CLSTMParams& params,
                      CLSTMStepCache* cache = nullptr);

struct CLSTMGrads {
    CLSTMParams shaped;
    Tensor input;
    Tensor h_prev;
    Tensor c_prev;
};
// dh/dc are the gradients arriving at this step's outputs (already
// including any accumulation from the next step).
CLSTMGrads clstm_cell_backward(const Tensor& dh, const Tensor& dc,
                               const CLSTMParams& params,
                               const CLSTMStepCache& cache);

struct BiRNNCache {
    std::vector<CLSTMStepCache> fwd_steps;  // ascending tau order
    std::vector<CLSTMStepCache> bwd_steps;  // stored in descending tau order
    std::vector<Tensor> h_fwd, h_bwd;       // indexed by tau
    double s_backward = 0.5, s_forward = 0.5;
};

// One CLSTM pass per direction; outputs (H+1)/2 rescaled and combined by
// the softmax of the two lambda logits, so every map stays in [0,1].
std::vector<Tensor> birnn_forward(const std::vector<Tensor>& sequence,
                                  const BiRNNParams& params,
                                  BiRNNCache* cache = nullptr);

struct BiRNNGrads {
    BiRNNParams shaped;
    std::vector<Tensor> inputs;  // gradient on each input map
};
BiRNNGrads birnn_backward(const std::vector<Tensor>& grad_out,
                          const BiRNNParams& params, const BiRNNCache& cache);

template <class Params, class Fn>
void visit_clstm_arrays(Params& p, const std::string& prefix, Fn&& fn) {
    fn(prefix + "w_yi", p.w_yi.data);
    fn(prefix + "w_hi", p.w_hi.data);
    fn(prefix + "w_yf", p.w_yf.data);
    fn(prefix + "w_hf", p.w_hf.data);
    fn(prefix + "w_yc", p.w_yc.data);
    fn(prefix + "w_hc", p.w_hc.data);
    fn(prefix + "w_yo", p.w_yo.data);
    fn(prefix + "w_ho", p.w_ho.data);
}

// Scalar members in fixed order (peepholes then biases).
template <class Params, class Fn>
void visit_clstm_scalars(Params& p, Fn&& fn) {
    fn(p.p_ci);
    fn(p.p_cf);
    fn(p.p_co);
    fn(p.b_i);
    fn(p.b_f);
    fn(p.b_c);
    fn(p.b_o);
}

// Flatten/unflatten the full bidirectional parameter set; the flat
// layout backs the optimizer and checkpoint sections.
std::vector<double> birnn_flatten(const BiRNNParams& p);
void birnn_unflatten(BiRNNParams& p, const std::vector<double>& flat);

}  // namespace seqseg
