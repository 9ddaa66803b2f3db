#include "seqseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <random>
#include <sstream>

namespace seqseg {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !(finetune_learning_rate > 0.0))
        throw ConfigError("train config: non-positive learning rate");
    if (!(convergence_tol > 0.0)) throw ConfigError("train config: non-positive tolerance");
    if (pnet.unit_count < 1) throw ConfigError("train config: K < 1");
    if (batch_size < 1) throw ConfigError("train config: batch size < 1");
    if (convergence_window < 1) throw ConfigError("train config: window < 1");
    if (momentum < 0.0 || momentum >= 1.0)
        throw ConfigError("train config: momentum outside [0,1)");
    if (finetune_perturb_prob < 0.0 || finetune_perturb_prob > 1.0)
        throw ConfigError("train config: perturb probability outside [0,1]");
    if (val_fraction < 0.0 || val_fraction >= 1.0)
        throw ConfigError("train config: val fraction outside [0,1)");
}

std::string history_csv(const std::vector<HistoryRow>& rows) {
    std::ostringstream os;
    os << "stage,epoch,train_loss,val_loss\n";
    os.setf(std::ios::fixed);
    os.precision(9);
    for (const HistoryRow& r : rows)
        os << r.stage << ',' << r.epoch << ',' << r.train_loss << ',' << r.val_loss << '\n';
    return os.str();
}

DatasetSplit split_dataset(std::size_t case_count, double val_fraction) {
    if (case_count == 0) throw InputError("split_dataset: empty dataset");
    DatasetSplit s;
    std::size_t val_n = static_cast<std::size_t>(
        std::ceil(val_fraction * static_cast<double>(case_count)));
    if (val_n >= case_count) val_n = case_count > 1 ? 1 : 0;
    for (std::size_t i = 0; i < case_count - val_n; ++i) s.train.push_back(i);
    for (std::size_t i = case_count - val_n; i < case_count; ++i) s.val.push_back(i);
    if (s.val.empty()) s.val = s.train;  // single-case dataset validates on itself
    return s;
}

namespace {

struct SliceRef {
    std::size_t vol;
    int tau;
};

std::vector<SliceRef> collect_slices(const std::vector<SynthCase>& dataset,
                                     const std::vector<std::size_t>& cases) {
    std::vector<SliceRef> out;
    for (std::size_t c : cases)
        for (int tau = 0; tau < dataset[c].image.dims[0]; ++tau) out.push_back({c, tau});
    return out;
}

std::vector<std::vector<double>*> learnable_arrays(PNetParams& p) {
    std::vector<std::vector<double>*> out;
    visit_pnet_arrays(p, [&](const std::string&, ParamKind k, std::vector<double>& v) {
        if (k == ParamKind::Learnable) out.push_back(&v);
    });
    return out;
}

class PNetSgd {
public:
    explicit PNetSgd(const PNetConfig& config) : velocity_(make_pnet(config)) {
        visit_pnet_arrays(velocity_, [](const std::string&, ParamKind, std::vector<double>& v) {
            std::fill(v.begin(), v.end(), 0.0);
        });
    }

    void step(PNetParams& params, PNetParams& grads, double lr, double mu) {
        auto pa = learnable_arrays(params);
        auto va = learnable_arrays(velocity_);
        auto ga = learnable_arrays(grads);
        for (std::size_t a = 0; a < pa.size(); ++a)
            for (std::size_t i = 0; i < pa[a]->size(); ++i) {
                (*va[a])[i] = mu * (*va[a])[i] + (*ga[a])[i];
                (*pa[a])[i] -= lr * (*va[a])[i];
            }
    }

    void reset() {
        visit_pnet_arrays(velocity_, [](const std::string&, ParamKind, std::vector<double>& v) {
            std::fill(v.begin(), v.end(), 0.0);
        });
    }

private:
    PNetParams velocity_;
};

class FlatSgd {
public:
    explicit FlatSgd(std::size_t n) : velocity_(n, 0.0) {}
    void step(std::vector<double>& params, const std::vector<double>& grads, double lr,
              double mu) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            velocity_[i] = mu * velocity_[i] + grads[i];
            params[i] -= lr * velocity_[i];
        }
    }

private:
    std::vector<double> velocity_;
};

struct BatchResult {
    double loss = 0.0;
    PNetParams grads;
};

// mean-of-slices objective over a minibatch; caller picks train/infer BN
double batch_objective(PNetParams& params, const std::vector<Tensor>& inputs,
                       const std::vector<Tensor>& truths, int k_active, LossKind loss,
                       BNMode mode, PNetParams* grads_out) {
    PNetCache cache;
    PNetOutputs out =
        pnet_forward(params, inputs, mode, k_active, grads_out ? &cache : nullptr);
    const double inv_n = 1.0 / static_cast<double>(inputs.size());
    const int kk = static_cast<int>(out.unit_probs.size());

    double total = 0.0;
    std::vector<Tensor> grad_yhat;
    std::vector<std::vector<Tensor>> grad_units(static_cast<std::size_t>(kk));
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        std::vector<Tensor> units;
        units.reserve(static_cast<std::size_t>(kk));
        for (int k = 0; k < kk; ++k) units.push_back(out.unit_probs[static_cast<std::size_t>(k)][i]);
        DeepSupervisionResult ds =
            deep_supervision_objective(units, out.yhat[i], truths[i], loss);
        total += ds.value * inv_n;
        if (grads_out) {
            for (double& v : ds.grad_yhat.data) v *= inv_n;
            grad_yhat.push_back(std::move(ds.grad_yhat));
            for (int k = 0; k < kk; ++k) {
                for (double& v : ds.grad_units[static_cast<std::size_t>(k)].data) v *= inv_n;
                grad_units[static_cast<std::size_t>(k)].push_back(
                    std::move(ds.grad_units[static_cast<std::size_t>(k)]));
            }
        }
    }
    if (grads_out) {
        PNetGrads g = pnet_backward(params, cache, grad_yhat, grad_units);
        *grads_out = std::move(g.shaped);
    }
    return total;
}

double eval_subset_loss(PNetParams& params, const std::vector<SynthCase>& dataset,
                        const std::vector<SliceRef>& slices, int k_active,
                        LossKind loss, int batch_size) {
    double total = 0.0;
    std::size_t pos = 0;
    while (pos < slices.size()) {
        const std::size_t end = std::min(pos + static_cast<std::size_t>(batch_size),
                                         slices.size());
        std::vector<Tensor> inputs, truths;
        for (std::size_t i = pos; i < end; ++i) {
            inputs.push_back(slice_triplet(dataset[slices[i].vol].image, slices[i].tau));
            truths.push_back(mask_slice(dataset[slices[i].vol].mask, slices[i].tau));
        }
        total += batch_objective(params, inputs, truths, k_active, loss, BNMode::Infer,
                                 nullptr) *
                 static_cast<double>(end - pos);
        pos = end;
    }
    return total / static_cast<double>(slices.size());
}

}  // namespace

Checkpoint train_staged(const std::vector<SynthCase>& dataset, const TrainConfig& config) {
    config.validate();
    if (dataset.empty()) throw InputError("train_staged: empty dataset");

    DatasetSplit split = split_dataset(dataset.size(), config.val_fraction);
    std::vector<SliceRef> train_slices = collect_slices(dataset, split.train);
    std::vector<SliceRef> val_slices = collect_slices(dataset, split.val);

    Checkpoint ckpt;
    ckpt.config = config;
    ckpt.pnet = make_pnet(config.pnet);
    msra_init(ckpt.pnet, config.seed);

    std::mt19937_64 rng(config.seed ^ 0x5eed5eedULL);
    PNetSgd sgd(config.pnet);

    int global_epoch = 0;
    Checkpoint last_good = ckpt;

    const int K = config.pnet.unit_count;
    for (int stage = 1; stage <= K; ++stage) {
        if (stage > 1) {
            // fresh MSRA init for the appended unit
            msra_init_unit(ckpt.pnet.units[static_cast<std::size_t>(stage - 1)], rng);
            sgd.reset();
        }

        double stage_rate_scale = 1.0;
        bool retried = false;
        while (true) {
            const PNetParams stage_start = ckpt.pnet;
            const double start_val = eval_subset_loss(ckpt.pnet, dataset, val_slices,
                                                      stage, config.loss, config.batch_size);
            const double start_train = eval_subset_loss(ckpt.pnet, dataset, train_slices,
                                                        stage, config.loss, config.batch_size);
            std::vector<HistoryRow> stage_rows;
            stage_rows.push_back({stage, 0, start_train, start_val});

            std::vector<double> val_track{start_val};
            bool diverged = false;
            const int epoch_base = global_epoch;
            for (int e = 1; e <= config.max_epochs_per_stage; ++e) {
                const int ge = epoch_base + e;
                const double lr = config.learning_rate * stage_rate_scale *
                                  std::pow(config.lr_decay, (ge - 1) / config.decay_interval_epochs);

                std::vector<std::size_t> order(train_slices.size());
                for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
                std::shuffle(order.begin(), order.end(), rng);

                double train_sum = 0.0;
                std::size_t nbatches = 0;
                std::size_t pos = 0;
                while (pos < order.size()) {
                    const std::size_t end =
                        std::min(pos + static_cast<std::size_t>(config.batch_size), order.size());
                    std::vector<Tensor> inputs, truths;
                    for (std::size_t i = pos; i < end; ++i) {
                        const SliceRef& s = train_slices[order[i]];
                        inputs.push_back(slice_triplet(dataset[s.vol].image, s.tau));
                        truths.push_back(mask_slice(dataset[s.vol].mask, s.tau));
                    }
                    PNetParams grads;
                    const double loss = batch_objective(ckpt.pnet, inputs, truths, stage,
                                                        config.loss, BNMode::Train, &grads);
                    if (!std::isfinite(loss)) {
                        diverged = true;
                        break;
                    }
                    sgd.step(ckpt.pnet, grads, lr, config.momentum);
                    train_sum += loss;
                    ++nbatches;
                    pos = end;
                }
                if (diverged) break;

                const double train_loss = train_sum / static_cast<double>(nbatches);
                const double val_loss = eval_subset_loss(ckpt.pnet, dataset, val_slices,
                                                         stage, config.loss, config.batch_size);
                if (!std::isfinite(val_loss)) {
                    diverged = true;
                    break;
                }
                stage_rows.push_back({stage, e, train_loss, val_loss});
                val_track.push_back(val_loss);
                last_good.pnet = ckpt.pnet;

                if (e >= config.convergence_window) {
                    const double prev = val_track[val_track.size() - 1 -
                                                  static_cast<std::size_t>(config.convergence_window)];
                    const double improvement =
                        (prev - val_loss) / std::max(std::abs(prev), 1e-12);
                    if (improvement < config.convergence_tol) break;
                }
            }

            if (diverged) {
                // abort with the last finite state
                ckpt.pnet = last_good.pnet;
                ckpt.stage = stage;
                ckpt.epoch = global_epoch;
                return ckpt;
            }

            const double end_val = val_track.back();
            if (end_val > start_val && !retried) {
                // reject the stage extension, halve the rate, retry once
                ckpt.pnet = stage_start;
                sgd.reset();
                stage_rate_scale *= 0.5;
                retried = true;
                continue;
            }
            if (end_val > start_val) {
                // retry also failed; hand off the stage-start parameters
                ckpt.pnet = stage_start;
                ckpt.history.push_back(stage_rows.front());
            } else {
                ckpt.history.insert(ckpt.history.end(), stage_rows.begin(), stage_rows.end());
                global_epoch += static_cast<int>(stage_rows.size()) - 1;
            }
            break;
        }
        ckpt.stage = stage;
        ckpt.epoch = global_epoch;
    }

    if (config.merge_val_phase && split.val != split.train) {
        std::vector<std::size_t> all = split.train;
        all.insert(all.end(), split.val.begin(), split.val.end());
        std::vector<SliceRef> merged = collect_slices(dataset, all);
        for (int e = 1; e <= config.convergence_window; ++e) {
            const int ge = ++global_epoch;
            const double lr = config.learning_rate *
                              std::pow(config.lr_decay, (ge - 1) / config.decay_interval_epochs);
            std::vector<std::size_t> order(merged.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::shuffle(order.begin(), order.end(), rng);
            double train_sum = 0.0;
            std::size_t nb = 0, pos = 0;
            while (pos < order.size()) {
                const std::size_t end =
                    std::min(pos + static_cast<std::size_t>(config.batch_size), order.size());
                std::vector<Tensor> inputs, truths;
                for (std::size_t i = pos; i < end; ++i) {
                    const SliceRef& s = merged[order[i]];
                    inputs.push_back(slice_triplet(dataset[s.vol].image, s.tau));
                    truths.push_back(mask_slice(dataset[s.vol].mask, s.tau));
                }
                PNetParams grads;
                const double loss = batch_objective(ckpt.pnet, inputs, truths, K, config.loss,
                                                    BNMode::Train, &grads);
                if (!std::isfinite(loss)) return ckpt;
                sgd.step(ckpt.pnet, grads, lr, config.momentum);
                train_sum += loss;
                ++nb;
                pos = end;
            }
            const double val_loss = eval_subset_loss(ckpt.pnet, dataset, val_slices, K,
                                                     config.loss, config.batch_size);
            ckpt.history.push_back({K, global_epoch, train_sum / static_cast<double>(nb), val_loss});
        }
        ckpt.epoch = global_epoch;
    }
    return ckpt;
}

namespace {

struct VolumeGradResult {
    double loss = 0.0;
    bool finite = true;
};

VolumeGradResult finetune_volume(Checkpoint& ckpt, const SynthCase& cs,
                                 const TrainConfig& config, std::mt19937_64& rng,
                                 PNetSgd& pnet_sgd, FlatSgd& birnn_sgd, double lr,
                                 bool update) {
    const int depth = cs.image.dims[0];
    std::vector<Tensor> inputs, truths;
    for (int tau = 0; tau < depth; ++tau) {
        inputs.push_back(slice_triplet(cs.image, tau));
        truths.push_back(mask_slice(cs.mask, tau));
    }

    PNetCache cache;
    PNetOutputs out = pnet_forward(ckpt.pnet, inputs,
                                   update ? BNMode::Train : BNMode::Infer, 0,
                                   update ? &cache : nullptr);

    // training-time slice dropout teaches the RNN to fill discontinuities
    std::vector<int> dropped;
    if (update && config.finetune_perturb_prob > 0.0) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int tau = 1; tau + 1 < depth; ++tau)
            if (u(rng) < config.finetune_perturb_prob) dropped.push_back(tau);
    }
    std::vector<Tensor> rnn_in =
        dropped.empty() ? out.yhat : perturb_sequence(out.yhat, dropped, PerturbMode::Zero);

    BiRNNCache rnn_cache;
    std::vector<Tensor> ybar =
        birnn_forward(rnn_in, *ckpt.birnn, update ? &rnn_cache : nullptr);

    const double inv_t = 1.0 / static_cast<double>(depth);
    const int kk = static_cast<int>(out.unit_probs.size());
    double total = 0.0;
    std::vector<Tensor> grad_ybar, grad_yhat;
    std::vector<std::vector<Tensor>> grad_units(static_cast<std::size_t>(kk));
    for (int tau = 0; tau < depth; ++tau) {
        LossResult lr_rnn = segmentation_loss(config.loss, ybar[static_cast<std::size_t>(tau)],
                                              truths[static_cast<std::size_t>(tau)]);
        total += lr_rnn.value * inv_t;
        if (update) {
            for (double& v : lr_rnn.grad.data) v *= inv_t;
            grad_ybar.push_back(std::move(lr_rnn.grad));
        }
        if (config.keep_deep_supervision) {
            std::vector<Tensor> units;
            for (int k = 0; k < kk; ++k)
                units.push_back(out.unit_probs[static_cast<std::size_t>(k)][static_cast<std::size_t>(tau)]);
            DeepSupervisionResult ds = deep_supervision_objective(
                units, out.yhat[static_cast<std::size_t>(tau)],
                truths[static_cast<std::size_t>(tau)], config.loss);
            total += ds.value * inv_t;
            if (update) {
                for (double& v : ds.grad_yhat.data) v *= inv_t;
                grad_yhat.push_back(std::move(ds.grad_yhat));
                for (int k = 0; k < kk; ++k) {
                    for (double& v : ds.grad_units[static_cast<std::size_t>(k)].data) v *= inv_t;
                    grad_units[static_cast<std::size_t>(k)].push_back(
                        std::move(ds.grad_units[static_cast<std::size_t>(k)]));
                }
            }
        } else if (update) {
            grad_yhat.push_back(Tensor(out.yhat[0].shape));
            for (int k = 0; k < kk; ++k)
                grad_units[static_cast<std::size_t>(k)].push_back(
                    Tensor(out.unit_probs[static_cast<std::size_t>(k)][0].shape));
        }
    }

    VolumeGradResult r;
    r.loss = total;
    if (!std::isfinite(total)) {
        r.finite = false;
        return r;
    }
    if (!update) return r;

    BiRNNGrads rg = birnn_backward(grad_ybar, *ckpt.birnn, rnn_cache);
    // dropped slices carry no gradient back into the CNN
    for (int tau : dropped)
        std::fill(rg.inputs[static_cast<std::size_t>(tau)].data.begin(),
                  rg.inputs[static_cast<std::size_t>(tau)].data.end(), 0.0);
    for (int tau = 0; tau < depth; ++tau)
        grad_yhat[static_cast<std::size_t>(tau)] += rg.inputs[static_cast<std::size_t>(tau)];

    PNetGrads pg = pnet_backward(ckpt.pnet, cache, grad_yhat, grad_units);
    pnet_sgd.step(ckpt.pnet, pg.shaped, lr, config.momentum);

    std::vector<double> flat = birnn_flatten(*ckpt.birnn);
    const std::vector<double> gflat = birnn_flatten(rg.shaped);
    birnn_sgd.step(flat, gflat, lr, config.momentum);
    birnn_unflatten(*ckpt.birnn, flat);
    return r;
}

}  // namespace

Checkpoint finetune_birnn(const Checkpoint& start, const std::vector<SynthCase>& dataset,
                          const TrainConfig& config) {
    config.validate();
    if (dataset.empty()) throw InputError("finetune_birnn: empty dataset");

    Checkpoint ckpt = start;
    ckpt.config = config;
    if (!ckpt.birnn) {
        ckpt.birnn = make_birnn();
        birnn_init(*ckpt.birnn, config.seed + 0xb1);
    }

    DatasetSplit split = split_dataset(dataset.size(), config.val_fraction);
    std::mt19937_64 rng(config.seed ^ 0xb12aaULL);
    PNetSgd pnet_sgd(ckpt.pnet.config);
    FlatSgd birnn_sgd(birnn_flatten(*ckpt.birnn).size());

    const int stage = ckpt.pnet.config.unit_count + 1;
    Checkpoint last_good = ckpt;
    for (int e = 1; e <= config.finetune_epochs; ++e) {
        std::vector<std::size_t> order = split.train;
        std::shuffle(order.begin(), order.end(), rng);
        double train_sum = 0.0;
        for (std::size_t v : order) {
            VolumeGradResult r = finetune_volume(ckpt, dataset[v], config, rng, pnet_sgd,
                                                 birnn_sgd, config.finetune_learning_rate,
                                                 true);
            if (!r.finite) return last_good;
            train_sum += r.loss;
        }
        double val_sum = 0.0;
        for (std::size_t v : split.val) {
            VolumeGradResult r = finetune_volume(ckpt, dataset[v], config, rng, pnet_sgd,
                                                 birnn_sgd, 0.0, false);
            if (!r.finite) return last_good;
            val_sum += r.loss;
        }
        ckpt.history.push_back({stage, e, train_sum / static_cast<double>(order.size()),
                                val_sum / static_cast<double>(split.val.size())});
        ckpt.epoch = e;
        last_good = ckpt;
    }
    ckpt.stage = start.stage;
    return ckpt;
}

Volume infer_prob_volume(Checkpoint& ckpt, const Volume& image, bool use_birnn) {
    const int depth = image.dims[0];
    std::vector<Tensor> yhat;
    yhat.reserve(static_cast<std::size_t>(depth));
    for (int tau = 0; tau < depth; ++tau) {
        PNetSliceOutput o = pnet_forward_slice(ckpt.pnet, slice_triplet(image, tau));
        yhat.push_back(std::move(o.yhat));
    }
    std::vector<Tensor>* maps = &yhat;
    std::vector<Tensor> ybar;
    if (use_birnn) {
        if (!ckpt.birnn) throw InputError("infer: checkpoint has no BiRNN section");
        ybar = birnn_forward(yhat, *ckpt.birnn);
        maps = &ybar;
    }
    Volume prob(image.dims, image.spacing_mm);
    const std::size_t hw = static_cast<std::size_t>(image.dims[1]) * image.dims[2];
    for (int tau = 0; tau < depth; ++tau)
        std::copy((*maps)[static_cast<std::size_t>(tau)].data.begin(),
                  (*maps)[static_cast<std::size_t>(tau)].data.end(),
                  prob.voxels.begin() + static_cast<std::ptrdiff_t>(tau) * static_cast<std::ptrdiff_t>(hw));
    return prob;
}

MaskVolume binarize(const Volume& prob, double threshold) {
    MaskVolume m(prob.dims, prob.spacing_mm);
    for (std::size_t i = 0; i < prob.voxels.size(); ++i)
        m.voxels[i] = prob.voxels[i] > threshold ? 1 : 0;
    return m;
}

EvalResult evaluate(Checkpoint& ckpt, const std::vector<SynthCase>& dataset,
                    double threshold, int threads) {
    if (dataset.empty()) throw InputError("evaluate: empty dataset");
    const int div = 1 << (ckpt.pnet.config.unit_count - 1);
    for (const SynthCase& cs : dataset)
        if (cs.image.dims[1] % div != 0 || cs.image.dims[2] % div != 0)
            throw ConfigError("evaluate: dims not divisible by pooling schedule");

    struct CasePair {
        CaseMetrics cnn;
        std::optional<CaseMetrics> rnn;
    };
    auto run_case = [&](std::size_t i) {
        const std::string id = "case" + std::to_string(i);
        CasePair p;
        Volume prob = infer_prob_volume(ckpt, dataset[i].image, false);
        p.cnn = evaluate_case(id, binarize(prob, threshold), dataset[i].mask);
        if (ckpt.birnn) {
            Volume rprob = infer_prob_volume(ckpt, dataset[i].image, true);
            p.rnn = evaluate_case(id, binarize(rprob, threshold), dataset[i].mask);
        }
        return p;
    };

    std::vector<CasePair> pairs(dataset.size());
    if (threads <= 1) {
        for (std::size_t i = 0; i < dataset.size(); ++i) pairs[i] = run_case(i);
    } else {
        std::vector<std::future<CasePair>> futs;
        futs.reserve(dataset.size());
        for (std::size_t i = 0; i < dataset.size(); ++i)
            futs.push_back(std::async(std::launch::async, run_case, i));
        for (std::size_t i = 0; i < dataset.size(); ++i) pairs[i] = futs[i].get();
    }

    EvalResult r;
    for (CasePair& p : pairs) {
        r.cnn.cases.push_back(std::move(p.cnn));
        if (p.rnn) {
            if (!r.rnn) r.rnn.emplace();
            r.rnn->cases.push_back(std::move(*p.rnn));
        }
    }
    return r;
}

}  // namespace seqseg
