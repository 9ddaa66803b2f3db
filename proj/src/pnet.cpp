#include "seqseg/pnet.hpp"

#include <algorithm>
#include <cmath>

namespace seqseg {

namespace {

ConvBnRelu make_layer(int in_ch, int out_ch) {
    ConvBnRelu cb;
    cb.kernel = Tensor({out_ch, in_ch, 3, 3});
    cb.bias.assign(static_cast<std::size_t>(out_ch), 0.0);
    cb.gamma.assign(static_cast<std::size_t>(out_ch), 1.0);
    cb.beta.assign(static_cast<std::size_t>(out_ch), 0.0);
    cb.bn_state.running_mean.assign(static_cast<std::size_t>(out_ch), 0.0);
    cb.bn_state.running_var.assign(static_cast<std::size_t>(out_ch), 1.0);
    return cb;
}

void gaussian_fill(std::vector<double>& v, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& x : v) x = dist(rng);
}

}  // namespace

PNetParams make_pnet(const PNetConfig& config) {
    if (config.unit_count < 1) throw ConfigError("pnet: unit_count < 1");
    if (config.channels < 1 || config.msa_channels < 1)
        throw ConfigError("pnet: non-positive channel count");
    PNetParams p;
    p.config = config;
    const int c = config.channels, msa = config.msa_channels;
    for (int k = 0; k < config.unit_count; ++k) {
        UnitModuleParams u;
        u.fwd[0] = make_layer(k == 0 ? 3 : c, c);
        for (int l = 1; l < 4; ++l) u.fwd[static_cast<std::size_t>(l)] = make_layer(c, c);
        for (int j = 0; j <= k; ++j) {
            if (j == 0)
                u.scale_kernels.push_back(Tensor({msa, c, 1, 1}));
            else {
                const int ke = scale_kernel_extent(j);
                u.scale_kernels.push_back(Tensor({c, msa, ke, ke}));
            }
        }
        u.fusion_kernel = Tensor({1, msa * (k + 1), 1, 1});
        u.fusion_bias.assign(1, 0.0);
        p.units.push_back(std::move(u));
    }
    p.fusion_logits.assign(static_cast<std::size_t>(config.unit_count), 0.0);
    return p;
}

void msra_init_unit(UnitModuleParams& unit, std::mt19937_64& rng) {
    for (auto& cb : unit.fwd) {
        const int fan_in = cb.kernel.dim(1) * cb.kernel.dim(2) * cb.kernel.dim(3);
        gaussian_fill(cb.kernel.data, std::sqrt(2.0 / fan_in), rng);
        std::fill(cb.bias.begin(), cb.bias.end(), 0.0);
        std::fill(cb.gamma.begin(), cb.gamma.end(), 1.0);
        std::fill(cb.beta.begin(), cb.beta.end(), 0.0);
        std::fill(cb.bn_state.running_mean.begin(), cb.bn_state.running_mean.end(), 0.0);
        std::fill(cb.bn_state.running_var.begin(), cb.bn_state.running_var.end(), 1.0);
    }
    for (std::size_t j = 0; j < unit.scale_kernels.size(); ++j) {
        Tensor& k = unit.scale_kernels[j];
        // scale 0 is a conv kernel [out,in,kh,kw]; deeper scales are
        // deconv kernels [in,out,kh,kw] -- fan_in is in-channels * window
        const int fan_in = j == 0 ? k.dim(1) * k.dim(2) * k.dim(3)
                                  : k.dim(0) * k.dim(2) * k.dim(3);
        gaussian_fill(k.data, std::sqrt(2.0 / fan_in), rng);
    }
    gaussian_fill(unit.fusion_kernel.data,
                  std::sqrt(2.0 / unit.fusion_kernel.dim(1)), rng);
    std::fill(unit.fusion_bias.begin(), unit.fusion_bias.end(), 0.0);
}

void msra_init(PNetParams& params, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& u : params.units) msra_init_unit(u, rng);
    std::fill(params.fusion_logits.begin(), params.fusion_logits.end(), 0.0);
}

std::int64_t param_count(const PNetParams& params) {
    std::int64_t n = 0;
    visit_pnet_arrays(const_cast<PNetParams&>(params),
                      [&](const std::string&, ParamKind kind, std::vector<double>& v) {
                          if (kind == ParamKind::Learnable)
                              n += static_cast<std::int64_t>(v.size());
                      });
    return n;
}

std::vector<double> softmax(const std::vector<double>& logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> s(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        s[i] = std::exp(logits[i] - m);
        sum += s[i];
    }
    for (double& v : s) v /= sum;
    return s;
}

PNetOutputs pnet_forward(PNetParams& params, const std::vector<Tensor>& batch,
                         BNMode mode, int k_active, PNetCache* cache) {
    if (batch.empty()) throw InputError("pnet_forward: empty batch");
    const int kk = k_active == 0 ? params.config.unit_count : k_active;
    if (kk < 1 || kk > params.config.unit_count)
        throw ConfigError("pnet_forward: invalid active unit count");
    const int h = batch[0].dim(1), w = batch[0].dim(2);
    const int div = 1 << (kk - 1);
    if (h % div != 0 || w % div != 0)
        throw ConfigError("pnet_forward: extents " + std::to_string(h) + "x" +
                          std::to_string(w) + " not divisible by " + std::to_string(div));
    for (const Tensor& t : batch)
        if (t.shape != std::vector<int>{3, h, w})
            throw ShapeError("pnet_forward: expected [3," + std::to_string(h) + "," +
                             std::to_string(w) + "], got " + shape_str(t.shape));

    const std::size_t n = batch.size();
    if (cache) {
        cache->input = batch;
        cache->units.assign(static_cast<std::size_t>(kk), UnitCache{});
        cache->k_active = kk;
    }

    // forward branches, collecting F_k per unit
    std::vector<std::vector<Tensor>> features(static_cast<std::size_t>(kk));
    std::vector<Tensor> cur = batch;
    for (int k = 0; k < kk; ++k) {
        auto& unit = params.units[static_cast<std::size_t>(k)];
        for (int l = 0; l < 4; ++l) {
            auto& cb = unit.fwd[static_cast<std::size_t>(l)];
            std::vector<Tensor> conv_out;
            conv_out.reserve(n);
            for (const Tensor& x : cur)
                conv_out.push_back(conv2d(x, cb.kernel, cb.bias, 1, 1));
            BNCache* bc = nullptr;
            if (cache) {
                auto& lc = cache->units[static_cast<std::size_t>(k)].layers[static_cast<std::size_t>(l)];
                lc.conv_in = cur;
                bc = &lc.bn;
            }
            std::vector<Tensor> bn_out =
                batchnorm(conv_out, cb.gamma, cb.beta, cb.bn_state, mode,
                          params.config.bn_eps, params.config.bn_momentum, bc);
            std::vector<Tensor> act;
            act.reserve(n);
            for (Tensor& t : bn_out) act.push_back(activation(t, Activation::Relu));
            if (cache)
                cache->units[static_cast<std::size_t>(k)].layers[static_cast<std::size_t>(l)].out = act;
            cur = std::move(act);
        }
        features[static_cast<std::size_t>(k)] = cur;
        if (k + 1 < kk) {
            std::vector<Tensor> pooled;
            pooled.reserve(n);
            for (const Tensor& f : cur) {
                MaxPoolResult pr = maxpool2d(f, 2, 2);
                pooled.push_back(pr.output);
                if (cache) cache->units[static_cast<std::size_t>(k)].pool.push_back(std::move(pr));
            }
            cur = std::move(pooled);
        }
    }

    // backward branches: multi-scale aggregation per unit
    PNetOutputs out;
    out.unit_probs.assign(static_cast<std::size_t>(kk), {});
    for (int k = 0; k < kk; ++k) {
        auto& unit = params.units[static_cast<std::size_t>(k)];
        auto& probs = out.unit_probs[static_cast<std::size_t>(k)];
        probs.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<Tensor> scales;
            scales.reserve(static_cast<std::size_t>(k) + 1);
            for (int j = 0; j <= k; ++j) {
                const Tensor& f = features[static_cast<std::size_t>(j)][i];
                Tensor mapped = j == 0
                    ? conv2d(f, unit.scale_kernels[0], {}, 1, 0)
                    : deconv2d(f, unit.scale_kernels[static_cast<std::size_t>(j)],
                               scale_stride(j), scale_pad(j));
                if (mapped.dim(1) != h || mapped.dim(2) != w)
                    throw ShapeError("pnet: scale " + std::to_string(j) +
                                     " resolution " + shape_str(mapped.shape) +
                                     " does not match slice " + std::to_string(h) + "x" +
                                     std::to_string(w));
                scales.push_back(std::move(mapped));
            }
            Tensor cat = concat_channels(scales);
            Tensor fused = conv2d(cat, unit.fusion_kernel, unit.fusion_bias, 1, 0);
            if (cache)
                cache->units[static_cast<std::size_t>(k)].concat.push_back(std::move(cat));
            probs.push_back(activation(fused, Activation::Sigmoid));
        }
    }

    // weighted fusion with softmax-normalized logits keeps yhat in (0,1)
    std::vector<double> active_logits(params.fusion_logits.begin(),
                                      params.fusion_logits.begin() + kk);
    const std::vector<double> sw = softmax(active_logits);
    out.yhat.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor y({1, h, w});
        for (int k = 0; k < kk; ++k) {
            const Tensor& u = out.unit_probs[static_cast<std::size_t>(k)][i];
            for (std::size_t v = 0; v < y.data.size(); ++v)
                y.data[v] += sw[static_cast<std::size_t>(k)] * u.data[v];
        }
        out.yhat.push_back(std::move(y));
    }

    if (cache) {
        cache->softmax_w = sw;
        cache->unit_probs = out.unit_probs;
        cache->yhat = out.yhat;
    }
    return out;
}

PNetSliceOutput pnet_forward_slice(PNetParams& params, const Tensor& slices3,
                                   BNMode mode, int k_active) {
    PNetOutputs o = pnet_forward(params, {slices3}, mode, k_active);
    PNetSliceOutput s;
    s.unit_probs.reserve(o.unit_probs.size());
    for (auto& u : o.unit_probs) s.unit_probs.push_back(std::move(u[0]));
    s.yhat = std::move(o.yhat[0]);
    return s;
}

PNetGrads pnet_backward(const PNetParams& params, const PNetCache& cache,
                        const std::vector<Tensor>& grad_yhat,
                        const std::vector<std::vector<Tensor>>& grad_units,
                        bool want_input_grad) {
    const int kk = cache.k_active;
    const std::size_t n = cache.input.size();
    if (grad_yhat.size() != n || static_cast<int>(grad_units.size()) != kk)
        throw ShapeError("pnet_backward: gradient batch mismatch");

    PNetGrads g;
    g.shaped = make_pnet(params.config);
    // zero the BN init values so grads start clean
    visit_pnet_arrays(g.shaped, [](const std::string&, ParamKind, std::vector<double>& v) {
        std::fill(v.begin(), v.end(), 0.0);
    });

    // fusion weights: softmax backward over the per-unit inner products
    const std::vector<double>& sw = cache.softmax_w;
    std::vector<double> t(static_cast<std::size_t>(kk), 0.0);
    for (int k = 0; k < kk; ++k)
        for (std::size_t i = 0; i < n; ++i)
            t[static_cast<std::size_t>(k)] +=
                dot(grad_yhat[i], cache.unit_probs[static_cast<std::size_t>(k)][i]);
    double st = 0.0;
    for (int k = 0; k < kk; ++k) st += sw[static_cast<std::size_t>(k)] * t[static_cast<std::size_t>(k)];
    for (int k = 0; k < kk; ++k)
        g.shaped.fusion_logits[static_cast<std::size_t>(k)] =
            sw[static_cast<std::size_t>(k)] * (t[static_cast<std::size_t>(k)] - st);

    // per-unit total gradient on U_k
    std::vector<std::vector<Tensor>> du(static_cast<std::size_t>(kk));
    for (int k = 0; k < kk; ++k) {
        du[static_cast<std::size_t>(k)].reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            Tensor d = grad_units[static_cast<std::size_t>(k)][i];
            for (std::size_t v = 0; v < d.data.size(); ++v)
                d.data[v] += sw[static_cast<std::size_t>(k)] * grad_yhat[i].data[v];
            du[static_cast<std::size_t>(k)].push_back(std::move(d));
        }
    }

    // accumulators on forward-branch outputs F_k
    std::vector<std::vector<Tensor>> df(static_cast<std::size_t>(kk));
    for (int k = 0; k < kk; ++k) {
        const auto& out = cache.units[static_cast<std::size_t>(k)].layers[3].out;
        df[static_cast<std::size_t>(k)].reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            df[static_cast<std::size_t>(k)].push_back(Tensor(out[i].shape));
    }

    for (int k = kk - 1; k >= 0; --k) {
        const auto& unit = params.units[static_cast<std::size_t>(k)];
        auto& gunit = g.shaped.units[static_cast<std::size_t>(k)];
        const auto& ucache = cache.units[static_cast<std::size_t>(k)];

        // backward branch
        std::vector<int> chunk_channels(static_cast<std::size_t>(k) + 1,
                                        params.config.msa_channels);
        for (std::size_t i = 0; i < n; ++i) {
            const Tensor& u = cache.unit_probs[static_cast<std::size_t>(k)][i];
            Tensor dsig = activation_backward(du[static_cast<std::size_t>(k)][i], u,
                                              Activation::Sigmoid);
            Conv2dGrads fg = conv2d_backward(dsig, ucache.concat[i], unit.fusion_kernel, 1, 0);
            gunit.fusion_kernel += fg.kernel;
            gunit.fusion_bias[0] += fg.bias[0];
            std::vector<Tensor> chunks = concat_channels_backward(fg.input, chunk_channels);
            for (int j = 0; j <= k; ++j) {
                const Tensor& f = cache.units[static_cast<std::size_t>(j)].layers[3].out[i];
                if (j == 0) {
                    Conv2dGrads sg = conv2d_backward(chunks[0], f, unit.scale_kernels[0], 1, 0);
                    gunit.scale_kernels[0] += sg.kernel;
                    df[0][i] += sg.input;
                } else {
                    Deconv2dGrads sg = deconv2d_backward(
                        chunks[static_cast<std::size_t>(j)], f,
                        unit.scale_kernels[static_cast<std::size_t>(j)], scale_stride(j),
                        scale_pad(j));
                    gunit.scale_kernels[static_cast<std::size_t>(j)] += sg.kernel;
                    df[static_cast<std::size_t>(j)][i] += sg.input;
                }
            }
        }

        // forward branch, layers in reverse
        std::vector<Tensor> grad = df[static_cast<std::size_t>(k)];
        for (int l = 3; l >= 0; --l) {
            const auto& cb = unit.fwd[static_cast<std::size_t>(l)];
            auto& gcb = gunit.fwd[static_cast<std::size_t>(l)];
            const auto& lc = ucache.layers[static_cast<std::size_t>(l)];
            for (std::size_t i = 0; i < n; ++i)
                grad[i] = activation_backward(grad[i], lc.out[i], Activation::Relu);
            BNGrads bng = batchnorm_backward(grad, cb.gamma, lc.bn);
            for (std::size_t c = 0; c < cb.gamma.size(); ++c) {
                gcb.gamma[c] += bng.gamma[c];
                gcb.beta[c] += bng.beta[c];
            }
            for (std::size_t i = 0; i < n; ++i) {
                Conv2dGrads cg = conv2d_backward(bng.inputs[i], lc.conv_in[i], cb.kernel, 1, 1);
                gcb.kernel += cg.kernel;
                for (std::size_t c = 0; c < gcb.bias.size(); ++c) gcb.bias[c] += cg.bias[c];
                grad[i] = std::move(cg.input);
            }
        }

        // route into the previous unit through the pooling step
        if (k > 0) {
            const auto& pool = cache.units[static_cast<std::size_t>(k - 1)].pool;
            const auto& prev_out = cache.units[static_cast<std::size_t>(k - 1)].layers[3].out;
            for (std::size_t i = 0; i < n; ++i)
                df[static_cast<std::size_t>(k - 1)][i] +=
                    maxpool2d_backward(grad[i], pool[i], prev_out[i].shape);
        } else if (want_input_grad) {
            g.input = std::move(grad);
        }
    }
    return g;
}

}  // namespace seqseg
