#include "seqseg/birnn.hpp"

#include <algorithm>
#include <cmath>

#include "seqseg/pnet.hpp"

namespace seqseg {

namespace {

Tensor gate_kernel() { return Tensor({1, 1, 3, 3}); }

Tensor conv3(const Tensor& x, const Tensor& k) { return conv2d(x, k, {}, 1, 1); }

void check_finite(const Tensor& t, const char* what, int tau) {
    for (double v : t.data)
        if (!std::isfinite(v))
            throw NumericError(std::string("clstm: non-finite ") + what + " at tau " +
                               std::to_string(tau));
}

}  // namespace

CLSTMParams make_clstm() {
    CLSTMParams p;
    p.w_yi = gate_kernel();
    p.w_hi = gate_kernel();
    p.w_yf = gate_kernel();
    p.w_hf = gate_kernel();
    p.w_yc = gate_kernel();
    p.w_hc = gate_kernel();
    p.w_yo = gate_kernel();
    p.w_ho = gate_kernel();
    return p;
}

BiRNNParams make_birnn() {
    BiRNNParams p;
    p.backward_dir = make_clstm();
    p.forward_dir = make_clstm();
    return p;
}

void birnn_init(BiRNNParams& params, std::uint64_t seed) {
    // Pass-through initialization: the candidate path maps the incoming
    // probability map to a sharpened copy of itself (center weight 6,
    // bias -3 puts the decision point at 0.5), gates start half open
    // and the recurrent/peephole weights start as small noise. The
    // combined output then begins as roughly Y itself and fine-tuning
    // only has to learn the temporal corrections.
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 0.01);
    auto init_dir = [&](CLSTMParams& d) {
        visit_clstm_arrays(d, "", [&](const std::string&, std::vector<double>& v) {
            for (double& x : v) x = dist(rng);
        });
        visit_clstm_scalars(d, [&](double& x) { x = dist(rng); });
        d.w_yc.at4(0, 0, 1, 1) += 6.0;
        d.b_c = -3.0;
        d.b_i = 1.0;
        d.b_f = 0.0;
        d.b_o = 1.0;
    };
    init_dir(params.backward_dir);
    init_dir(params.forward_dir);
    params.lambda_backward = dist(rng);
    params.lambda_forward = dist(rng);
}

CLSTMCounts clstm_param_count(const CLSTMParams& params) {
    std::int64_t conv = 0;
    visit_clstm_arrays(const_cast<CLSTMParams&>(params), "",
                       [&](const std::string&, std::vector<double>& v) {
                           conv += static_cast<std::int64_t>(v.size());
                       });
    return {conv, conv + 7};
}

CLSTMState clstm_cell(const Tensor& input, const Tensor& h_prev,
                      const Tensor& c_prev, const CLSTMParams& params,
                      CLSTMStepCache* cache) {
    if (!input.same_shape(h_prev) || !input.same_shape(c_prev))
        throw ShapeError("clstm_cell: input " + shape_str(input.shape) + ", h " +
                         shape_str(h_prev.shape) + ", c " + shape_str(c_prev.shape) +
                         " must match");

    auto gate = [&](const Tensor& wy, const Tensor& wh, double peephole,
                    const Tensor& peep_src, double bias) {
        Tensor a = conv3(input, wy);
        a += conv3(h_prev, wh);
        for (std::size_t i = 0; i < a.data.size(); ++i)
            a.data[i] += peephole * peep_src.data[i] + bias;
        return activation(a, Activation::Sigmoid);
    };

    Tensor gi = gate(params.w_yi, params.w_hi, params.p_ci, c_prev, params.b_i);
    Tensor gf = gate(params.w_yf, params.w_hf, params.p_cf, c_prev, params.b_f);

    Tensor cand = conv3(input, params.w_yc);
    cand += conv3(h_prev, params.w_hc);
    for (double& v : cand.data) v += params.b_c;
    Tensor g = activation(cand, Activation::Tanh);

    Tensor c(input.shape);
    for (std::size_t i = 0; i < c.data.size(); ++i)
        c.data[i] = gf.data[i] * c_prev.data[i] + gi.data[i] * g.data[i];

    Tensor go = gate(params.w_yo, params.w_ho, params.p_co, c, params.b_o);
    Tensor tc = activation(c, Activation::Tanh);
    Tensor h(input.shape);
    for (std::size_t i = 0; i < h.data.size(); ++i)
        h.data[i] = go.data[i] * tc.data[i];

    if (cache) {
        cache->input = input;
        cache->h_prev = h_prev;
        cache->c_prev = c_prev;
        cache->gate_i = gi;
        cache->gate_f = gf;
        cache->gate_o = go;
        cache->g = g;
        cache->c = c;
        cache->tanh_c = tc;
    }
    return {std::move(h), std::move(c)};
}

CLSTMGrads clstm_cell_backward(const Tensor& dh, const Tensor& dc_in,
                               const CLSTMParams& params,
                               const CLSTMStepCache& cache) {
    CLSTMGrads g;
    g.shaped = make_clstm();
    visit_clstm_scalars(g.shaped, [](double& x) { x = 0.0; });
    g.input = Tensor(cache.input.shape);
    g.h_prev = Tensor(cache.input.shape);
    g.c_prev = Tensor(cache.input.shape);

    const std::size_t n = dh.data.size();
    Tensor d_go(cache.input.shape), dc(cache.input.shape);
    for (std::size_t i = 0; i < n; ++i) {
        d_go.data[i] = dh.data[i] * cache.tanh_c.data[i];
        dc.data[i] = dc_in.data[i] +
                     dh.data[i] * cache.gate_o.data[i] *
                         (1.0 - cache.tanh_c.data[i] * cache.tanh_c.data[i]);
    }

    // output gate pre-activation, including the c peephole
    Tensor da_o(cache.input.shape);
    for (std::size_t i = 0; i < n; ++i) {
        da_o.data[i] = d_go.data[i] * cache.gate_o.data[i] * (1.0 - cache.gate_o.data[i]);
        dc.data[i] += da_o.data[i] * params.p_co;
        g.shaped.p_co += da_o.data[i] * cache.c.data[i];
        g.shaped.b_o += da_o.data[i];
    }

    Tensor d_gi(cache.input.shape), d_gf(cache.input.shape), d_g(cache.input.shape);
    for (std::size_t i = 0; i < n; ++i) {
        d_gf.data[i] = dc.data[i] * cache.c_prev.data[i];
        d_gi.data[i] = dc.data[i] * cache.g.data[i];
        d_g.data[i] = dc.data[i] * cache.gate_i.data[i];
        g.c_prev.data[i] = dc.data[i] * cache.gate_f.data[i];
    }

    Tensor da_c(cache.input.shape), da_i(cache.input.shape), da_f(cache.input.shape);
    for (std::size_t i = 0; i < n; ++i) {
        da_c.data[i] = d_g.data[i] * (1.0 - cache.g.data[i] * cache.g.data[i]);
        da_i.data[i] = d_gi.data[i] * cache.gate_i.data[i] * (1.0 - cache.gate_i.data[i]);
        da_f.data[i] = d_gf.data[i] * cache.gate_f.data[i] * (1.0 - cache.gate_f.data[i]);
        g.c_prev.data[i] += da_i.data[i] * params.p_ci + da_f.data[i] * params.p_cf;
        g.shaped.p_ci += da_i.data[i] * cache.c_prev.data[i];
        g.shaped.p_cf += da_f.data[i] * cache.c_prev.data[i];
        g.shaped.b_i += da_i.data[i];
        g.shaped.b_f += da_f.data[i];
        g.shaped.b_c += da_c.data[i];
    }

    auto backprop_conv = [&](const Tensor& da, const Tensor& src, const Tensor& kernel,
                             Tensor& gkernel, Tensor& gsrc) {
        Conv2dGrads cg = conv2d_backward(da, src, kernel, 1, 1);
        gkernel += cg.kernel;
        gsrc += cg.input;
    };
    backprop_conv(da_i, cache.input, params.w_yi, g.shaped.w_yi, g.input);
    backprop_conv(da_i, cache.h_prev, params.w_hi, g.shaped.w_hi, g.h_prev);
    backprop_conv(da_f, cache.input, params.w_yf, g.shaped.w_yf, g.input);
    backprop_conv(da_f, cache.h_prev, params.w_hf, g.shaped.w_hf, g.h_prev);
    backprop_conv(da_c, cache.input, params.w_yc, g.shaped.w_yc, g.input);
    backprop_conv(da_c, cache.h_prev, params.w_hc, g.shaped.w_hc, g.h_prev);
    backprop_conv(da_o, cache.input, params.w_yo, g.shaped.w_yo, g.input);
    backprop_conv(da_o, cache.h_prev, params.w_ho, g.shaped.w_ho, g.h_prev);
    return g;
}

std::vector<Tensor> birnn_forward(const std::vector<Tensor>& sequence,
                                  const BiRNNParams& params, BiRNNCache* cache) {
    if (sequence.empty()) throw InputError("birnn_forward: empty sequence");
    const std::size_t t = sequence.size();
    const std::vector<int> shape = sequence[0].shape;
    for (const Tensor& s : sequence)
        if (s.shape != shape) throw ShapeError("birnn_forward: ragged sequence");

    auto run_dir = [&](const CLSTMParams& dir, bool ascending,
                       std::vector<CLSTMStepCache>* steps) {
        std::vector<Tensor> hs(t);
        Tensor h(shape), c(shape);
        for (std::size_t s = 0; s < t; ++s) {
            const std::size_t tau = ascending ? s : t - 1 - s;
            CLSTMStepCache sc;
            CLSTMState st = clstm_cell(sequence[tau], h, c, dir, steps ? &sc : nullptr);
            check_finite(st.h, "hidden state", static_cast<int>(tau));
            check_finite(st.c, "cell state", static_cast<int>(tau));
            h = st.h;
            c = std::move(st.c);
            hs[tau] = std::move(st.h);
            if (steps) steps->push_back(std::move(sc));
        }
        return hs;
    };

    std::vector<Tensor> h_fwd =
        run_dir(params.forward_dir, true, cache ? &cache->fwd_steps : nullptr);
    std::vector<Tensor> h_bwd =
        run_dir(params.backward_dir, false, cache ? &cache->bwd_steps : nullptr);

    const std::vector<double> s = softmax({params.lambda_backward, params.lambda_forward});
    std::vector<Tensor> out;
    out.reserve(t);
    for (std::size_t tau = 0; tau < t; ++tau) {
        Tensor y(shape);
        for (std::size_t i = 0; i < y.data.size(); ++i) {
            // rescale (-1,1) hidden states into [0,1] before combining
            const double hb = 0.5 * (h_bwd[tau].data[i] + 1.0);
            const double hf = 0.5 * (h_fwd[tau].data[i] + 1.0);
            y.data[i] = s[0] * hb + s[1] * hf;
        }
        out.push_back(std::move(y));
    }
    if (cache) {
        cache->h_fwd = std::move(h_fwd);
        cache->h_bwd = std::move(h_bwd);
        cache->s_backward = s[0];
        cache->s_forward = s[1];
    }
    return out;
}

BiRNNGrads birnn_backward(const std::vector<Tensor>& grad_out,
                          const BiRNNParams& params, const BiRNNCache& cache) {
    const std::size_t t = grad_out.size();
    if (cache.fwd_steps.size() != t)
        throw ShapeError("birnn_backward: cache/gradient length mismatch");
    const std::vector<int> shape = grad_out[0].shape;

    BiRNNGrads g;
    g.shaped = make_birnn();
    visit_clstm_scalars(g.shaped.backward_dir, [](double& x) { x = 0.0; });
    visit_clstm_scalars(g.shaped.forward_dir, [](double& x) { x = 0.0; });
    g.inputs.assign(t, Tensor(shape));

    // lambda logits through the softmax combination
    double ip_b = 0.0, ip_f = 0.0;
    for (std::size_t tau = 0; tau < t; ++tau)
        for (std::size_t i = 0; i < grad_out[tau].data.size(); ++i) {
            ip_b += grad_out[tau].data[i] * 0.5 * (cache.h_bwd[tau].data[i] + 1.0);
            ip_f += grad_out[tau].data[i] * 0.5 * (cache.h_fwd[tau].data[i] + 1.0);
        }
    const double sb = cache.s_backward, sf = cache.s_forward;
    const double mix = sb * ip_b + sf * ip_f;
    g.shaped.lambda_backward = sb * (ip_b - mix);
    g.shaped.lambda_forward = sf * (ip_f - mix);

    auto run_dir = [&](const CLSTMParams& dir, CLSTMParams& gdir, bool ascending,
                       const std::vector<CLSTMStepCache>& steps, double mix_w) {
        Tensor dh_next(shape), dc_next(shape);
        // steps were recorded in traversal order; walk them backwards
        for (std::size_t s = steps.size(); s-- > 0;) {
            const std::size_t tau = ascending ? s : t - 1 - s;
            Tensor dh = dh_next;
            for (std::size_t i = 0; i < dh.data.size(); ++i)
                dh.data[i] += grad_out[tau].data[i] * mix_w * 0.5;
            CLSTMGrads sg = clstm_cell_backward(dh, dc_next, dir, steps[s]);
            gdir.w_yi += sg.shaped.w_yi;
            gdir.w_hi += sg.shaped.w_hi;
            gdir.w_yf += sg.shaped.w_yf;
            gdir.w_hf += sg.shaped.w_hf;
            gdir.w_yc += sg.shaped.w_yc;
            gdir.w_hc += sg.shaped.w_hc;
            gdir.w_yo += sg.shaped.w_yo;
            gdir.w_ho += sg.shaped.w_ho;
            gdir.p_ci += sg.shaped.p_ci;
            gdir.p_cf += sg.shaped.p_cf;
            gdir.p_co += sg.shaped.p_co;
            gdir.b_i += sg.shaped.b_i;
            gdir.b_f += sg.shaped.b_f;
            gdir.b_c += sg.shaped.b_c;
            gdir.b_o += sg.shaped.b_o;
            g.inputs[tau] += sg.input;
            dh_next = std::move(sg.h_prev);
            dc_next = std::move(sg.c_prev);
        }
    };
    run_dir(params.forward_dir, g.shaped.forward_dir, true, cache.fwd_steps, sf);
    run_dir(params.backward_dir, g.shaped.backward_dir, false, cache.bwd_steps, sb);
    return g;
}

std::vector<double> birnn_flatten(const BiRNNParams& p) {
    std::vector<double> flat;
    auto& pm = const_cast<BiRNNParams&>(p);
    for (CLSTMParams* d : {&pm.backward_dir, &pm.forward_dir}) {
        visit_clstm_arrays(*d, "", [&](const std::string&, std::vector<double>& v) {
            flat.insert(flat.end(), v.begin(), v.end());
        });
        visit_clstm_scalars(*d, [&](double& x) { flat.push_back(x); });
    }
    flat.push_back(p.lambda_backward);
    flat.push_back(p.lambda_forward);
    return flat;
}

void birnn_unflatten(BiRNNParams& p, const std::vector<double>& flat) {
    std::size_t pos = 0;
    for (CLSTMParams* d : {&p.backward_dir, &p.forward_dir}) {
        visit_clstm_arrays(*d, "", [&](const std::string&, std::vector<double>& v) {
            if (pos + v.size() > flat.size())
                throw FormatError("birnn: flat parameter vector too short");
            std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos),
                      flat.begin() + static_cast<std::ptrdiff_t>(pos + v.size()), v.begin());
            pos += v.size();
        });
        visit_clstm_scalars(*d, [&](double& x) {
            if (pos >= flat.size()) throw FormatError("birnn: flat parameter vector too short");
            x = flat[pos++];
        });
    }
    if (pos + 2 != flat.size())
        throw FormatError("birnn: flat parameter vector length mismatch");
    p.lambda_backward = flat[pos];
    p.lambda_forward = flat[pos + 1];
}

}  // namespace seqseg
