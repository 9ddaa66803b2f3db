#include "seqseg/ops.hpp"

#include <algorithm>
#include <cmath>

namespace seqseg {

namespace {

void check_map3(const Tensor& t, const char* what) {
    if (t.shape.size() != 3)
        throw ShapeError(std::string(what) + ": expected [C,H,W], got " + shape_str(t.shape));
}

void check_kernel4(const Tensor& t, const char* what) {
    if (t.shape.size() != 4)
        throw ShapeError(std::string(what) + ": expected 4-d kernel, got " + shape_str(t.shape));
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel,
              std::span<const double> bias, int stride, int pad) {
    check_map3(input, "conv2d input");
    check_kernel4(kernel, "conv2d kernel");
    const int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int co = kernel.dim(0), kci = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    if (ci != kci)
        throw ShapeError("conv2d: input channels " + shape_str(input.shape) +
                         " vs kernel in-channels " + shape_str(kernel.shape));
    if (!bias.empty() && static_cast<int>(bias.size()) != co)
        throw ShapeError("conv2d: bias length " + std::to_string(bias.size()) +
                         " vs out channels " + std::to_string(co));
    const int oh = conv_out_extent(h, kh, stride, pad);
    const int ow = conv_out_extent(w, kw, stride, pad);
    if (oh < 1 || ow < 1)
        throw ShapeError("conv2d: non-positive output extent for input " + shape_str(input.shape) +
                         " kernel " + shape_str(kernel.shape));

    Tensor out({co, oh, ow});
    for (int o = 0; o < co; ++o) {
        const double b = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double acc = b;
                const int iy0 = oy * stride - pad;
                const int ix0 = ox * stride - pad;
                for (int c = 0; c < ci; ++c) {
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= h) continue;
                        const double* in_row = &input.data[(static_cast<std::size_t>(c) * h + iy) * w];
                        const double* k_row = &kernel.data[((static_cast<std::size_t>(o) * ci + c) * kh + ky) * kw];
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= w) continue;
                            acc += in_row[ix] * k_row[kx];
                        }
                    }
                }
                out.at(o, oy, ox) = acc;
            }
        }
    }
    return out;
}

Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input,
                            const Tensor& kernel, int stride, int pad) {
    const int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int co = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    const int oh = grad_out.dim(1), ow = grad_out.dim(2);

    Conv2dGrads g{Tensor(input.shape), Tensor(kernel.shape),
                  std::vector<double>(static_cast<std::size_t>(co), 0.0)};
    for (int o = 0; o < co; ++o) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const double gv = grad_out.at(o, oy, ox);
                if (gv == 0.0) continue;
                g.bias[static_cast<std::size_t>(o)] += gv;
                const int iy0 = oy * stride - pad;
                const int ix0 = ox * stride - pad;
                for (int c = 0; c < ci; ++c) {
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= h) continue;
                        double* gin_row = &g.input.data[(static_cast<std::size_t>(c) * h + iy) * w];
                        const double* in_row = &input.data[(static_cast<std::size_t>(c) * h + iy) * w];
                        double* gk_row = &g.kernel.data[((static_cast<std::size_t>(o) * ci + c) * kh + ky) * kw];
                        const double* k_row = &kernel.data[((static_cast<std::size_t>(o) * ci + c) * kh + ky) * kw];
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= w) continue;
                            gin_row[ix] += gv * k_row[kx];
                            gk_row[kx] += gv * in_row[ix];
                        }
                    }
                }
            }
        }
    }
    return g;
}

Tensor deconv2d(const Tensor& input, const Tensor& kernel, int stride, int pad) {
    check_map3(input, "deconv2d input");
    check_kernel4(kernel, "deconv2d kernel");
    const int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (ci != kernel.dim(0))
        throw ShapeError("deconv2d: input channels " + shape_str(input.shape) +
                         " vs kernel in-channels " + shape_str(kernel.shape));
    const int co = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    const int oh = deconv_out_extent(h, kh, stride, pad);
    const int ow = deconv_out_extent(w, kw, stride, pad);
    if (oh < 1 || ow < 1)
        throw ShapeError("deconv2d: non-positive output extent for input " + shape_str(input.shape) +
                         " kernel " + shape_str(kernel.shape));

    Tensor out({co, oh, ow});
    for (int c = 0; c < ci; ++c) {
        for (int iy = 0; iy < h; ++iy) {
            for (int ix = 0; ix < w; ++ix) {
                const double v = input.at(c, iy, ix);
                if (v == 0.0) continue;
                const int oy0 = iy * stride - pad;
                const int ox0 = ix * stride - pad;
                for (int o = 0; o < co; ++o) {
                    for (int ky = 0; ky < kh; ++ky) {
                        const int oy = oy0 + ky;
                        if (oy < 0 || oy >= oh) continue;
                        double* out_row = &out.data[(static_cast<std::size_t>(o) * oh + oy) * ow];
                        const double* k_row = &kernel.data[((static_cast<std::size_t>(c) * co + o) * kh + ky) * kw];
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ox = ox0 + kx;
                            if (ox < 0 || ox >= ow) continue;
                            out_row[ox] += v * k_row[kx];
                        }
                    }
                }
            }
        }
    }
    return out;
}

Deconv2dGrads deconv2d_backward(const Tensor& grad_out, const Tensor& input,
                                const Tensor& kernel, int stride, int pad) {
    const int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int co = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    const int oh = grad_out.dim(1), ow = grad_out.dim(2);

    Deconv2dGrads g{Tensor(input.shape), Tensor(kernel.shape)};
    for (int c = 0; c < ci; ++c) {
        for (int iy = 0; iy < h; ++iy) {
            for (int ix = 0; ix < w; ++ix) {
                const int oy0 = iy * stride - pad;
                const int ox0 = ix * stride - pad;
                double gin = 0.0;
                const double in_v = input.at(c, iy, ix);
                for (int o = 0; o < co; ++o) {
                    for (int ky = 0; ky < kh; ++ky) {
                        const int oy = oy0 + ky;
                        if (oy < 0 || oy >= oh) continue;
                        const double* go_row = &grad_out.data[(static_cast<std::size_t>(o) * oh + oy) * ow];
                        const double* k_row = &kernel.data[((static_cast<std::size_t>(c) * co + o) * kh + ky) * kw];
                        double* gk_row = &g.kernel.data[((static_cast<std::size_t>(c) * co + o) * kh + ky) * kw];
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ox = ox0 + kx;
                            if (ox < 0 || ox >= ow) continue;
                            gin += go_row[ox] * k_row[kx];
                            gk_row[kx] += in_v * go_row[ox];
                        }
                    }
                }
                g.input.at(c, iy, ix) = gin;
            }
        }
    }
    return g;
}

MaxPoolResult maxpool2d(const Tensor& input, int k, int stride) {
    check_map3(input, "maxpool2d input");
    const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (k > h || k > w)
        throw ShapeError("maxpool2d: window " + std::to_string(k) + " exceeds input " +
                         shape_str(input.shape));
    const int oh = (h - k) / stride + 1;
    const int ow = (w - k) / stride + 1;

    MaxPoolResult r{Tensor({c, oh, ow}), {}};
    r.argmax.resize(r.output.data.size());
    std::size_t oi = 0;
    for (int ch = 0; ch < c; ++ch) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox, ++oi) {
                double best = -1e308;
                std::int64_t best_idx = -1;
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy * stride + ky;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix = ox * stride + kx;
                        const std::int64_t idx = (static_cast<std::int64_t>(ch) * h + iy) * w + ix;
                        const double v = input.data[static_cast<std::size_t>(idx)];
                        if (v > best) {  // strict: first index wins ties
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                r.output.data[oi] = best;
                r.argmax[oi] = best_idx;
            }
        }
    }
    return r;
}

Tensor maxpool2d_backward(const Tensor& grad_out, const MaxPoolResult& fwd,
                          const std::vector<int>& input_shape) {
    Tensor g(input_shape);
    for (std::size_t i = 0; i < fwd.argmax.size(); ++i)
        g.data[static_cast<std::size_t>(fwd.argmax[i])] += grad_out.data[i];
    return g;
}

std::vector<Tensor> batchnorm(const std::vector<Tensor>& inputs,
                              std::span<const double> gamma,
                              std::span<const double> beta, BNState& state,
                              BNMode mode, double eps, double momentum,
                              BNCache* cache) {
    if (inputs.empty()) throw InputError("batchnorm: empty batch");
    const int c = inputs[0].dim(0), h = inputs[0].dim(1), w = inputs[0].dim(2);
    if (h < 1 || w < 1) throw ShapeError("batchnorm: zero spatial extent");
    for (const Tensor& t : inputs)
        if (t.shape != inputs[0].shape) throw ShapeError("batchnorm: ragged batch");
    const std::int64_t m = static_cast<std::int64_t>(inputs.size()) * h * w;

    std::vector<double> mean(static_cast<std::size_t>(c), 0.0);
    std::vector<double> var(static_cast<std::size_t>(c), 0.0);
    if (mode == BNMode::Train) {
        for (const Tensor& t : inputs)
            for (int ch = 0; ch < c; ++ch) {
                const double* p = &t.data[static_cast<std::size_t>(ch) * h * w];
                double s = 0.0;
                for (int i = 0; i < h * w; ++i) s += p[i];
                mean[static_cast<std::size_t>(ch)] += s;
            }
        for (double& v : mean) v /= static_cast<double>(m);
        for (const Tensor& t : inputs)
            for (int ch = 0; ch < c; ++ch) {
                const double* p = &t.data[static_cast<std::size_t>(ch) * h * w];
                const double mu = mean[static_cast<std::size_t>(ch)];
                double s = 0.0;
                for (int i = 0; i < h * w; ++i) s += (p[i] - mu) * (p[i] - mu);
                var[static_cast<std::size_t>(ch)] += s;
            }
        for (double& v : var) v /= static_cast<double>(m);
        for (int ch = 0; ch < c; ++ch) {
            auto i = static_cast<std::size_t>(ch);
            state.running_mean[i] = momentum * state.running_mean[i] + (1.0 - momentum) * mean[i];
            state.running_var[i] = momentum * state.running_var[i] + (1.0 - momentum) * var[i];
        }
    } else {
        mean.assign(state.running_mean.begin(), state.running_mean.end());
        var.assign(state.running_var.begin(), state.running_var.end());
    }

    std::vector<double> inv_std(static_cast<std::size_t>(c));
    for (int ch = 0; ch < c; ++ch)
        inv_std[static_cast<std::size_t>(ch)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(ch)] + eps);

    std::vector<Tensor> out;
    out.reserve(inputs.size());
    if (cache) {
        cache->xhat.clear();
        cache->xhat.reserve(inputs.size());
        cache->inv_std = inv_std;
    }
    for (const Tensor& t : inputs) {
        Tensor xh(t.shape);
        Tensor y(t.shape);
        for (int ch = 0; ch < c; ++ch) {
            const std::size_t base = static_cast<std::size_t>(ch) * h * w;
            const double mu = mean[static_cast<std::size_t>(ch)];
            const double is = inv_std[static_cast<std::size_t>(ch)];
            const double g = gamma[static_cast<std::size_t>(ch)];
            const double b = beta[static_cast<std::size_t>(ch)];
            for (int i = 0; i < h * w; ++i) {
                const double v = (t.data[base + i] - mu) * is;
                xh.data[base + i] = v;
                y.data[base + i] = g * v + b;
            }
        }
        if (cache) cache->xhat.push_back(std::move(xh));
        out.push_back(std::move(y));
    }
    return out;
}

BNGrads batchnorm_backward(const std::vector<Tensor>& grad_out,
                           std::span<const double> gamma, const BNCache& cache) {
    const int c = grad_out[0].dim(0), h = grad_out[0].dim(1), w = grad_out[0].dim(2);
    const double m = static_cast<double>(grad_out.size()) * h * w;

    BNGrads g;
    g.gamma.assign(static_cast<std::size_t>(c), 0.0);
    g.beta.assign(static_cast<std::size_t>(c), 0.0);
    std::vector<double> sum_dy(static_cast<std::size_t>(c), 0.0);
    std::vector<double> sum_dy_xhat(static_cast<std::size_t>(c), 0.0);
    for (std::size_t n = 0; n < grad_out.size(); ++n)
        for (int ch = 0; ch < c; ++ch) {
            const std::size_t base = static_cast<std::size_t>(ch) * h * w;
            for (int i = 0; i < h * w; ++i) {
                const double dy = grad_out[n].data[base + i];
                sum_dy[static_cast<std::size_t>(ch)] += dy;
                sum_dy_xhat[static_cast<std::size_t>(ch)] += dy * cache.xhat[n].data[base + i];
            }
        }
    g.beta = sum_dy;
    g.gamma = sum_dy_xhat;

    g.inputs.reserve(grad_out.size());
    for (std::size_t n = 0; n < grad_out.size(); ++n) {
        Tensor dx(grad_out[n].shape);
        for (int ch = 0; ch < c; ++ch) {
            const std::size_t base = static_cast<std::size_t>(ch) * h * w;
            const double scale = gamma[static_cast<std::size_t>(ch)] *
                                 cache.inv_std[static_cast<std::size_t>(ch)];
            const double mdy = sum_dy[static_cast<std::size_t>(ch)] / m;
            const double mdyx = sum_dy_xhat[static_cast<std::size_t>(ch)] / m;
            for (int i = 0; i < h * w; ++i) {
                const double dy = grad_out[n].data[base + i];
                const double xh = cache.xhat[n].data[base + i];
                dx.data[base + i] = scale * (dy - mdy - xh * mdyx);
            }
        }
        g.inputs.push_back(std::move(dx));
    }
    return g;
}

Tensor activation(const Tensor& input, Activation kind) {
    Tensor out(input.shape);
    switch (kind) {
        case Activation::Relu:
            for (std::size_t i = 0; i < input.data.size(); ++i)
                out.data[i] = input.data[i] > 0.0 ? input.data[i] : 0.0;
            break;
        case Activation::Sigmoid:
            for (std::size_t i = 0; i < input.data.size(); ++i)
                out.data[i] = 1.0 / (1.0 + std::exp(-input.data[i]));
            break;
        case Activation::Tanh:
            for (std::size_t i = 0; i < input.data.size(); ++i)
                out.data[i] = std::tanh(input.data[i]);
            break;
    }
    return out;
}

Tensor activation_backward(const Tensor& grad_out, const Tensor& output,
                           Activation kind) {
    Tensor g(grad_out.shape);
    switch (kind) {
        case Activation::Relu:
            // subgradient at 0 is 0
            for (std::size_t i = 0; i < g.data.size(); ++i)
                g.data[i] = output.data[i] > 0.0 ? grad_out.data[i] : 0.0;
            break;
        case Activation::Sigmoid:
            for (std::size_t i = 0; i < g.data.size(); ++i)
                g.data[i] = grad_out.data[i] * output.data[i] * (1.0 - output.data[i]);
            break;
        case Activation::Tanh:
            for (std::size_t i = 0; i < g.data.size(); ++i)
                g.data[i] = grad_out.data[i] * (1.0 - output.data[i] * output.data[i]);
            break;
    }
    return g;
}

Tensor concat_channels(const std::vector<Tensor>& inputs) {
    if (inputs.empty()) throw InputError("concat_channels: empty input list");
    const int h = inputs[0].dim(1), w = inputs[0].dim(2);
    int ctot = 0;
    for (const Tensor& t : inputs) {
        check_map3(t, "concat_channels input");
        if (t.dim(1) != h || t.dim(2) != w)
            throw ShapeError("concat_channels: spatial mismatch " + shape_str(t.shape) +
                             " vs " + shape_str(inputs[0].shape));
        ctot += t.dim(0);
    }
    Tensor out({ctot, h, w});
    std::size_t off = 0;
    for (const Tensor& t : inputs) {
        std::copy(t.data.begin(), t.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
        off += t.data.size();
    }
    return out;
}

std::vector<Tensor> concat_channels_backward(const Tensor& grad_out,
                                             const std::vector<int>& channel_counts) {
    const int h = grad_out.dim(1), w = grad_out.dim(2);
    std::vector<Tensor> g;
    std::size_t off = 0;
    for (int c : channel_counts) {
        Tensor t({c, h, w});
        std::copy(grad_out.data.begin() + static_cast<std::ptrdiff_t>(off),
                  grad_out.data.begin() + static_cast<std::ptrdiff_t>(off + t.data.size()),
                  t.data.begin());
        off += t.data.size();
        g.push_back(std::move(t));
    }
    return g;
}

}  // namespace seqseg
