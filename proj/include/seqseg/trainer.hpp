#pragma once

#include <optional>
#include <string>
#include <vector>

#include "seqseg/birnn.hpp"
#include "seqseg/losses.hpp"
#include "seqseg/metrics.hpp"
#include "seqseg/pnet.hpp"
#include "seqseg/synthdata.hpp"

namespace seqseg {

struct TrainConfig {
    LossKind loss = LossKind::Jac;
    double learning_rate = 0.01;
    double lr_decay = 0.1;
    int decay_interval_epochs = 40;
    double momentum = 0.9;
    int batch_size = 8;
    int convergence_window = 5;
    double convergence_tol = 1e-3;
    int max_epochs_per_stage = 40;
    std::uint64_t seed = 1;
    PNetConfig pnet;
    double val_fraction = 0.2;
    // BiRNN fine-tuning
    bool keep_deep_supervision = true;
    int finetune_epochs = 20;
    double finetune_learning_rate = 0.005;
    double finetune_perturb_prob = 0.1;
    // optional second phase: merge the validation subset and continue
    bool merge_val_phase = false;

    void validate() const;
};

struct HistoryRow {
    int stage;
    int epoch;
    double train_loss;
    double val_loss;
};

std::string history_csv(const std::vector<HistoryRow>& rows);

struct Checkpoint {
    PNetParams pnet;
    std::optional<BiRNNParams> birnn;
    TrainConfig config;
    int stage = 0;
    int epoch = 0;
    std::vector<HistoryRow> history;
};

// Stage-wise training: unit 1 alone, appending a fresh MSRA-initialized
// unit whenever the validation loss plateaus; the final stage trains the
// full stack jointly. SGD with momentum throughout.
Checkpoint train_staged(const std::vector<SynthCase>& dataset,
                        const TrainConfig& config);

// Attaches the BiRNN and fine-tunes end-to-end through both
// sub-networks, volumes processed as axial sequences.
Checkpoint finetune_birnn(const Checkpoint& start,
                          const std::vector<SynthCase>& dataset,
                          const TrainConfig& config);

// Slice-wise inference stacked back into a probability volume.
Volume infer_prob_volume(Checkpoint& ckpt, const Volume& image,
                         bool use_birnn);
MaskVolume binarize(const Volume& prob, double threshold);

struct EvalResult {
    MetricsReport cnn;
    std::optional<MetricsReport> rnn;
};
EvalResult evaluate(Checkpoint& ckpt, const std::vector<SynthCase>& dataset,
                    double threshold = 0.5, int threads = 1);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Deterministic volume-level split; validation is the tail fraction.
struct DatasetSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};
DatasetSplit split_dataset(std::size_t case_count, double val_fraction);

}  // namespace seqseg
