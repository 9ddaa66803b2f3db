#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "seqseg/trainer.hpp"

using namespace seqseg;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("trainer_test_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const char* name) const { return (path / name).string(); }
};

// Tiny but non-trivial training setup: two stacked units on 16x16
// volumes keeps a full staged run under a few seconds.
TrainConfig tiny_config() {
    TrainConfig c;
    c.pnet.unit_count = 2;
    c.pnet.channels = 4;
    c.pnet.msa_channels = 4;
    c.learning_rate = 0.02;
    c.batch_size = 4;
    c.max_epochs_per_stage = 3;
    c.convergence_window = 2;
    c.finetune_epochs = 2;
    c.seed = 11;
    return c;
}

std::vector<SynthCase> tiny_dataset(int n, std::uint64_t seed0) {
    std::vector<SynthCase> out;
    for (int i = 0; i < n; ++i) {
        GenConfig g;
        g.dims = {4, 24, 24};
        g.radius_min_vox = 3.0;
        g.radius_max_vox = 6.0;
        g.seed = seed0 + static_cast<std::uint64_t>(i);
        out.push_back(generate_case(g));
    }
    return out;
}

}  // namespace

TEST_CASE("config validation") {
    TrainConfig c = tiny_config();
    CHECK_NOTHROW(c.validate());
    SUBCASE("learning rate") {
        c.learning_rate = 0.0;
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }
    SUBCASE("momentum range") {
        c.momentum = 1.0;
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }
    SUBCASE("batch size") {
        c.batch_size = 0;
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }
    SUBCASE("val fraction") {
        c.val_fraction = 1.0;
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }
    SUBCASE("perturb probability") {
        c.finetune_perturb_prob = 1.5;
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }
}

TEST_CASE("dataset split is a deterministic tail split") {
    DatasetSplit s = split_dataset(10, 0.2);
    CHECK(s.train == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
    CHECK(s.val == std::vector<std::size_t>{8, 9});
    // a single case validates against itself rather than starving training
    DatasetSplit one = split_dataset(1, 0.2);
    CHECK(one.train == std::vector<std::size_t>{0});
    CHECK(one.val == std::vector<std::size_t>{0});
    CHECK_THROWS_AS(split_dataset(0, 0.2), InputError);
}

TEST_CASE("history csv layout") {
    std::vector<HistoryRow> rows{{1, 0, 0.5, 0.6}, {1, 1, 0.25, 0.3}};
    const std::string csv = history_csv(rows);
    CHECK(csv.find("stage,epoch,train_loss,val_loss\n") == 0);
    CHECK(csv.find("1,1,0.250000000,0.300000000") != std::string::npos);
}

TEST_CASE("staged training reduces the loss and is reproducible") {
    std::vector<SynthCase> data = tiny_dataset(6, 500);
    TrainConfig cfg = tiny_config();
    Checkpoint a = train_staged(data, cfg);

    REQUIRE(!a.history.empty());
    // stages 1..K all appear, and each begins with its epoch-0 snapshot
    CHECK(a.history.front().stage == 1);
    CHECK(a.history.front().epoch == 0);
    CHECK(a.history.back().stage == 2);
    // each stage improves on its own starting snapshot
    for (int stage : {1, 2}) {
        double first = -1.0, last = -1.0;
        for (const HistoryRow& r : a.history)
            if (r.stage == stage) {
                if (first < 0.0) first = r.train_loss;
                last = r.train_loss;
            }
        REQUIRE(first >= 0.0);
        CHECK(last < first);
    }

    // bit-identical repeat
    Checkpoint b = train_staged(data, cfg);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].val_loss == b.history[i].val_loss);
    }
    std::vector<double> wa, wb;
    visit_pnet_arrays(a.pnet, [&](const std::string&, ParamKind,
                                  std::vector<double>& v) { wa.insert(wa.end(), v.begin(), v.end()); });
    visit_pnet_arrays(b.pnet, [&](const std::string&, ParamKind,
                                  std::vector<double>& v) { wb.insert(wb.end(), v.begin(), v.end()); });
    CHECK(wa == wb);
}

TEST_CASE("checkpoint round trip preserves behaviour bit for bit") {
    TempDir dir;
    std::vector<SynthCase> data = tiny_dataset(4, 900);
    TrainConfig cfg = tiny_config();
    cfg.max_epochs_per_stage = 2;
    Checkpoint trained = train_staged(data, cfg);

    save_checkpoint(dir.file("a.ckpt"), trained);
    Checkpoint loaded = load_checkpoint(dir.file("a.ckpt"));

    CHECK(loaded.stage == trained.stage);
    CHECK(loaded.history.size() == trained.history.size());
    CHECK(loaded.config.learning_rate == trained.config.learning_rate);
    CHECK(loaded.config.pnet.unit_count == trained.config.pnet.unit_count);
    CHECK(!loaded.birnn.has_value());

    // identical forward outputs on a probe volume
    Volume pa = infer_prob_volume(trained, data[0].image, false);
    Volume pb = infer_prob_volume(loaded, data[0].image, false);
    CHECK(pa.voxels == pb.voxels);

    // fine-tuning resumes from a cnn-only checkpoint
    Checkpoint tuned = finetune_birnn(loaded, data, cfg);
    REQUIRE(tuned.birnn.has_value());
    save_checkpoint(dir.file("b.ckpt"), tuned);
    Checkpoint tuned2 = load_checkpoint(dir.file("b.ckpt"));
    REQUIRE(tuned2.birnn.has_value());
    CHECK(birnn_flatten(*tuned2.birnn) == birnn_flatten(*tuned.birnn));
    Volume ra = infer_prob_volume(tuned, data[0].image, true);
    Volume rb = infer_prob_volume(tuned2, data[0].image, true);
    CHECK(ra.voxels == rb.voxels);
}

TEST_CASE("checkpoint loader rejects truncation with the section name") {
    TempDir dir;
    std::vector<SynthCase> data = tiny_dataset(2, 1300);
    TrainConfig cfg = tiny_config();
    cfg.max_epochs_per_stage = 1;
    Checkpoint trained = train_staged(data, cfg);
    save_checkpoint(dir.file("c.ckpt"), trained);

    std::ifstream in(dir.file("c.ckpt"), std::ios::binary);
    std::string bytes{std::istreambuf_iterator<char>(in),
                      std::istreambuf_iterator<char>()};
    in.close();
    std::ofstream out(dir.file("c.ckpt"), std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(load_checkpoint(dir.file("c.ckpt")), FormatError);
    CHECK_THROWS_AS(load_checkpoint(dir.file("missing.ckpt")), InputError);
}

TEST_CASE("binarize thresholds strictly above") {
    Volume p({1, 2, 2}, {2.5, 1, 1});
    p.voxels = {0.2, 0.5, 0.500001, 0.9};
    MaskVolume m = binarize(p, 0.5);
    CHECK(m.voxels == std::vector<std::uint8_t>{0, 0, 1, 1});
}

TEST_CASE("evaluate fills reports for both branches") {
    std::vector<SynthCase> data = tiny_dataset(3, 1700);
    TrainConfig cfg = tiny_config();
    cfg.max_epochs_per_stage = 2;
    Checkpoint trained = train_staged(data, cfg);
    EvalResult cnn_only = evaluate(trained, data);
    CHECK(cnn_only.cnn.cases.size() == 3);
    CHECK(!cnn_only.rnn.has_value());

    Checkpoint tuned = finetune_birnn(trained, data, cfg);
    EvalResult both = evaluate(tuned, data, 0.5, 2);
    CHECK(both.cnn.cases.size() == 3);
    REQUIRE(both.rnn.has_value());
    CHECK(both.rnn->cases.size() == 3);
    // threaded and serial evaluation agree exactly
    EvalResult serial = evaluate(tuned, data, 0.5, 1);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(both.cnn.cases[i].dsc == serial.cnn.cases[i].dsc);
}

TEST_CASE("inference rejects extents the pool chain cannot divide") {
    std::vector<SynthCase> data = tiny_dataset(2, 2100);
    TrainConfig cfg = tiny_config();
    cfg.max_epochs_per_stage = 1;
    Checkpoint trained = train_staged(data, cfg);
    Volume odd({3, 25, 25}, {2.5, 1, 1});
    CHECK_THROWS_AS(infer_prob_volume(trained, odd, false), ConfigError);
}
