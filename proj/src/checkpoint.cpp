#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "seqseg/trainer.hpp"

namespace seqseg {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'S', 'C', 'K', 'P'};
constexpr std::uint16_t kVersion = 1;

void write_u16(std::ostream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

void write_doubles(std::ostream& os, const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, p + i, 8);
        write_u64(os, bits);
    }
}

std::uint16_t read_u16(std::istream& is, const std::string& what) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2))
        throw FormatError("checkpoint: truncated reading " + what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint64_t read_u64(std::istream& is, const std::string& what) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
        throw FormatError("checkpoint: truncated reading " + what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void read_doubles(std::istream& is, double* p, std::size_t n, const std::string& section) {
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t bits = read_u64(is, "section " + section);
        std::memcpy(p + i, &bits, 8);
    }
}

std::string loss_name(LossKind k) {
    switch (k) {
        case LossKind::Jac: return "jac";
        case LossKind::Ce: return "ce";
        case LossKind::Cbce: return "cbce";
    }
    throw ConfigError("checkpoint: unknown loss kind");
}

LossKind loss_from_name(const std::string& s) {
    if (s == "jac") return LossKind::Jac;
    if (s == "ce") return LossKind::Ce;
    if (s == "cbce") return LossKind::Cbce;
    throw FormatError("checkpoint: unknown loss name '" + s + "'");
}

json config_to_json(const TrainConfig& c) {
    return json{{"loss", loss_name(c.loss)},
                {"learning_rate", c.learning_rate},
                {"lr_decay", c.lr_decay},
                {"decay_interval_epochs", c.decay_interval_epochs},
                {"momentum", c.momentum},
                {"batch_size", c.batch_size},
                {"convergence_window", c.convergence_window},
                {"convergence_tol", c.convergence_tol},
                {"max_epochs_per_stage", c.max_epochs_per_stage},
                {"seed", c.seed},
                {"val_fraction", c.val_fraction},
                {"keep_deep_supervision", c.keep_deep_supervision},
                {"finetune_epochs", c.finetune_epochs},
                {"finetune_learning_rate", c.finetune_learning_rate},
                {"finetune_perturb_prob", c.finetune_perturb_prob},
                {"merge_val_phase", c.merge_val_phase},
                {"pnet",
                 {{"unit_count", c.pnet.unit_count},
                  {"channels", c.pnet.channels},
                  {"msa_channels", c.pnet.msa_channels},
                  {"bn_eps", c.pnet.bn_eps},
                  {"bn_momentum", c.pnet.bn_momentum}}}};
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    c.loss = loss_from_name(j.at("loss").get<std::string>());
    c.learning_rate = j.at("learning_rate").get<double>();
    c.lr_decay = j.at("lr_decay").get<double>();
    c.decay_interval_epochs = j.at("decay_interval_epochs").get<int>();
    c.momentum = j.at("momentum").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.convergence_window = j.at("convergence_window").get<int>();
    c.convergence_tol = j.at("convergence_tol").get<double>();
    c.max_epochs_per_stage = j.at("max_epochs_per_stage").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.val_fraction = j.at("val_fraction").get<double>();
    c.keep_deep_supervision = j.at("keep_deep_supervision").get<bool>();
    c.finetune_epochs = j.at("finetune_epochs").get<int>();
    c.finetune_learning_rate = j.at("finetune_learning_rate").get<double>();
    c.finetune_perturb_prob = j.at("finetune_perturb_prob").get<double>();
    c.merge_val_phase = j.at("merge_val_phase").get<bool>();
    const json& p = j.at("pnet");
    c.pnet.unit_count = p.at("unit_count").get<int>();
    c.pnet.channels = p.at("channels").get<int>();
    c.pnet.msa_channels = p.at("msa_channels").get<int>();
    c.pnet.bn_eps = p.at("bn_eps").get<double>();
    c.pnet.bn_momentum = p.at("bn_momentum").get<double>();
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    json arrays = json::array();
    std::uint64_t pnet_doubles = 0;
    visit_pnet_arrays(const_cast<PNetParams&>(ckpt.pnet),
                      [&](const std::string& name, ParamKind, std::vector<double>& v) {
                          arrays.push_back(json{{"name", name}, {"size", v.size()}});
                          pnet_doubles += v.size();
                      });

    std::vector<double> birnn_flat;
    if (ckpt.birnn) birnn_flat = birnn_flatten(*ckpt.birnn);

    json manifest{{"version", kVersion},
                  {"stage", ckpt.stage},
                  {"epoch", ckpt.epoch},
                  {"train", config_to_json(ckpt.config)},
                  {"pnet",
                   {{"unit_count", ckpt.pnet.config.unit_count},
                    {"channels", ckpt.pnet.config.channels},
                    {"msa_channels", ckpt.pnet.config.msa_channels},
                    {"bn_eps", ckpt.pnet.config.bn_eps},
                    {"bn_momentum", ckpt.pnet.config.bn_momentum},
                    {"arrays", arrays},
                    {"doubles", pnet_doubles}}},
                  {"birnn", {{"present", ckpt.birnn.has_value()}, {"doubles", birnn_flat.size()}}},
                  {"history_rows", ckpt.history.size()}};
    const std::string mtext = manifest.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("checkpoint: cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    write_u16(os, kVersion);
    write_u64(os, mtext.size());
    os.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));

    visit_pnet_arrays(const_cast<PNetParams&>(ckpt.pnet),
                      [&](const std::string&, ParamKind, std::vector<double>& v) {
                          write_doubles(os, v.data(), v.size());
                      });
    write_doubles(os, birnn_flat.data(), birnn_flat.size());
    for (const HistoryRow& r : ckpt.history) {
        const double row[4] = {static_cast<double>(r.stage), static_cast<double>(r.epoch),
                               r.train_loss, r.val_loss};
        write_doubles(os, row, 4);
    }
    os.flush();
    if (!os) throw FormatError("checkpoint: write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("checkpoint: cannot open '" + path + "'");
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("checkpoint: bad magic in '" + path + "'");
    const std::uint16_t version = read_u16(is, "version");
    if (version != kVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const std::uint64_t mlen = read_u64(is, "manifest length");
    std::string mtext(mlen, '\0');
    if (!is.read(mtext.data(), static_cast<std::streamsize>(mlen)))
        throw FormatError("checkpoint: truncated manifest");
    json manifest;
    try {
        manifest = json::parse(mtext);
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint: manifest parse error: ") + e.what());
    }

    Checkpoint ckpt;
    try {
        ckpt.config = config_from_json(manifest.at("train"));
        ckpt.stage = manifest.at("stage").get<int>();
        ckpt.epoch = manifest.at("epoch").get<int>();

        PNetConfig pc;
        const json& pj = manifest.at("pnet");
        pc.unit_count = pj.at("unit_count").get<int>();
        pc.channels = pj.at("channels").get<int>();
        pc.msa_channels = pj.at("msa_channels").get<int>();
        pc.bn_eps = pj.at("bn_eps").get<double>();
        pc.bn_momentum = pj.at("bn_momentum").get<double>();
        ckpt.pnet = make_pnet(pc);

        std::size_t idx = 0;
        const json& arrays = pj.at("arrays");
        visit_pnet_arrays(ckpt.pnet,
                          [&](const std::string& name, ParamKind, std::vector<double>& v) {
                              if (idx >= arrays.size())
                                  throw FormatError("checkpoint: manifest missing array " + name);
                              const json& a = arrays[idx++];
                              if (a.at("name").get<std::string>() != name ||
                                  a.at("size").get<std::size_t>() != v.size())
                                  throw FormatError("checkpoint: array mismatch at " + name);
                              read_doubles(is, v.data(), v.size(), name);
                          });
        if (idx != arrays.size())
            throw FormatError("checkpoint: manifest lists extra arrays");

        const json& bj = manifest.at("birnn");
        if (bj.at("present").get<bool>()) {
            ckpt.birnn = make_birnn();
            std::vector<double> flat(bj.at("doubles").get<std::size_t>());
            if (flat.size() != birnn_flatten(*ckpt.birnn).size())
                throw FormatError("checkpoint: birnn section size mismatch");
            read_doubles(is, flat.data(), flat.size(), "birnn");
            birnn_unflatten(*ckpt.birnn, flat);
        }

        const std::size_t rows = manifest.at("history_rows").get<std::size_t>();
        ckpt.history.reserve(rows);
        for (std::size_t i = 0; i < rows; ++i) {
            double row[4];
            read_doubles(is, row, 4, "history");
            ckpt.history.push_back({static_cast<int>(row[0]), static_cast<int>(row[1]),
                                    row[2], row[3]});
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint: manifest field error: ") + e.what());
    }
    return ckpt;
}

}  // namespace seqseg
