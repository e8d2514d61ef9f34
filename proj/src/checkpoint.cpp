#include <bit>
#include <cstring>
#include <fstream>

#include "cotforge/corpus.hpp"
#include "cotforge/jsonl.hpp"
#include "cotforge/model.hpp"

namespace cotforge {

namespace {

constexpr char kMagic[4] = {'C', 'F', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint container is little-endian only");

struct ArrayEntry {
    std::string name;
    const MatT<float>* mat;
};

std::vector<ArrayEntry> enumerate(const Model& model) {
    std::vector<ArrayEntry> out;
    visit_arrays(model.arrays, [&](const std::string& name, const MatT<float>& m) {
        out.push_back({name, &m});
    });
    for (const auto& [name, adapter] : model.adapters) {
        out.push_back({name + ".lora_a", &adapter.down});
        out.push_back({name + ".lora_b", &adapter.up});
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const CheckpointMeta& meta) {
    const auto entries = enumerate(model);
    nlohmann::json dir = nlohmann::json::array();
    for (const auto& e : entries)
        dir.push_back({{"name", e.name}, {"rows", e.mat->rows()}, {"cols", e.mat->cols()}});

    nlohmann::json header{
        {"config", model.config.to_json()},
        {"vocab", model.vocab.to_json()},
        {"lora", {{"rank", model.lora_rank}, {"alpha", model.lora_alpha}}},
        {"meta",
         {{"step_count", meta.step_count},
          {"seed", meta.seed},
          {"objective", meta.objective},
          {"parent_digest", meta.parent_digest},
          {"extra", meta.extra}}},
        {"arrays", dir},
        {"dtype", "f32"},
        {"byte_order", "little"}};
    const std::string header_text = header.dump();

    std::string buf;
    buf.append(kMagic, 4);
    const std::uint32_t version = kVersion;
    buf.append(reinterpret_cast<const char*>(&version), 4);
    const std::uint64_t header_len = header_text.size();
    buf.append(reinterpret_cast<const char*>(&header_len), 8);
    buf += header_text;
    for (const auto& e : entries)
        buf.append(reinterpret_cast<const char*>(e.mat->data()),
                   static_cast<std::size_t>(e.mat->size()) * sizeof(float));
    atomic_write(path, buf);
}

Model load_checkpoint(const std::string& path, CheckpointMeta* meta) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);

    char magic[4];
    std::uint32_t version = 0;
    std::uint64_t header_len = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&header_len), 8);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("not a checkpoint file: " + path);
    if (version != kVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));

    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw DataError("truncated checkpoint header: " + path);
    const nlohmann::json header = nlohmann::json::parse(header_text);
    if (header.at("dtype") != "f32" || header.at("byte_order") != "little")
        throw DataError("unsupported checkpoint encoding");

    Model model;
    model.config = ModelConfig::from_json(header.at("config"));
    model.vocab = Vocab::from_json(header.at("vocab"));
    model.config.validate();
    model.lora_rank = header.at("lora").at("rank").get<int>();
    model.lora_alpha = header.at("lora").at("alpha").get<double>();

    // Allocate base arrays, then any adapters named in the directory.
    const auto& dir = header.at("arrays");
    std::size_t cursor = 0;
    auto next_entry = [&](const std::string& name, MatT<float>& m) {
        if (cursor >= dir.size()) throw DataError("checkpoint array directory too short");
        const auto& e = dir[cursor++];
        if (e.at("name") != name)
            throw DataError("checkpoint array order mismatch at " + name);
        m.resize(e.at("rows").get<Eigen::Index>(), e.at("cols").get<Eigen::Index>());
        in.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(m.size()) * sizeof(float));
        if (!in) throw DataError("truncated checkpoint payload at " + name);
    };

    model.arrays.layers.resize(static_cast<std::size_t>(model.config.n_layers));
    visit_arrays(model.arrays, next_entry);

    while (cursor < dir.size()) {
        const std::string name = dir[cursor].at("name").get<std::string>();
        if (name.size() < 7 || name.substr(name.size() - 7) != ".lora_a")
            throw DataError("unexpected checkpoint array " + name);
        const std::string target = name.substr(0, name.size() - 7);
        LoraAdapter<float> a;
        next_entry(target + ".lora_a", a.down);
        next_entry(target + ".lora_b", a.up);
        model.adapters.emplace(target, std::move(a));
    }
    if (model.lora_attached()) model.refresh_effective();

    if (meta) {
        const auto& m = header.at("meta");
        meta->step_count = m.at("step_count").get<std::int64_t>();
        meta->seed = m.at("seed").get<std::uint64_t>();
        meta->objective = m.at("objective").get<std::string>();
        meta->parent_digest = m.at("parent_digest").get<std::string>();
        meta->extra = m.at("extra");
    }
    return model;
}

}  // namespace cotforge
