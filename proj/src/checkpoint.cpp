#include "wise/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "wise/errors.hpp"

namespace wise {

namespace {

constexpr const char* kMagic = "WISECKPT 1";

struct NamedArray {
    std::string name;
    const Matrix* matrix;
};

void append_le(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

double read_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

std::string side_prefix(std::size_t i) { return "side/" + std::to_string(i) + "/"; }

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
            {"d_ffn", c.d_ffn},           {"n_layers", c.n_layers},
            {"n_heads", c.n_heads},       {"max_seq_len", c.max_seq_len},
            {"edit_layer", c.edit_layer}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    for (const auto& [key, value] : j.items()) {
        if (!value.is_number_integer() || value.get<std::int64_t>() < 0) {
            throw ConfigError("model." + key + " must be a non-negative integer");
        }
        const auto v = value.get<std::size_t>();
        if (key == "vocab_size") c.vocab_size = v;
        else if (key == "d_model") c.d_model = v;
        else if (key == "d_ffn") c.d_ffn = v;
        else if (key == "n_layers") c.n_layers = v;
        else if (key == "n_heads") c.n_heads = v;
        else if (key == "max_seq_len") c.max_seq_len = v;
        else if (key == "edit_layer") c.edit_layer = v;
        else throw ConfigError("unknown config key 'model." + key + "'");
    }
    c.validate();
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::vector<NamedArray> arrays;
    ckpt.model.for_each_parameter(
        [&](const std::string& name, const Matrix& m) { arrays.push_back({name, &m}); });

    std::vector<Matrix> epsilons;
    epsilons.reserve(ckpt.memories.size());
    nlohmann::json side = nlohmann::json::array();
    for (std::size_t i = 0; i < ckpt.memories.size(); ++i) {
        const SideMemory& s = ckpt.memories[i];
        const std::string p = side_prefix(i);
        epsilons.emplace_back(1, 1, s.epsilon);
        arrays.push_back({p + "values", &s.values});
        arrays.push_back({p + "round_base", &s.round_base});
        for (std::size_t m = 0; m < s.masks.size(); ++m)
            arrays.push_back({p + "mask/" + std::to_string(m), &s.masks[m]});
        for (std::size_t m = 0; m < s.shard_values.size(); ++m)
            arrays.push_back({p + "shard/" + std::to_string(m), &s.shard_values[m]});
        arrays.push_back({p + "epsilon", &epsilons.back()});
        side.push_back({{"active_shard", s.active_shard},
                        {"edits_recorded", s.edits_recorded},
                        {"merges", s.merges},
                        {"shard_fill", s.shard_fill},
                        {"k", s.masks.size()}});
    }

    nlohmann::json table = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& a : arrays) {
        table.push_back({{"name", a.name},
                         {"rows", a.matrix->rows()},
                         {"cols", a.matrix->cols()},
                         {"offset", offset}});
        offset += a.matrix->size();
    }
    nlohmann::json header = {{"format", "wise-checkpoint"},
                             {"version", 1},
                             {"config", model_config_to_json(ckpt.model.config)},
                             {"arrays", table},
                             {"side_memories", side},
                             {"meta", ckpt.meta}};
    const std::string header_text = header.dump();

    std::string payload;
    payload.reserve(offset * 8);
    for (const auto& a : arrays)
        for (double v : a.matrix->flat()) append_le(payload, v);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out << kMagic << '\n' << header_text.size() << '\n' << header_text;
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    std::string magic, len_line;
    std::getline(in, magic);
    if (magic != kMagic) throw ParseError(path + ": not a wise checkpoint");
    std::getline(in, len_line);
    std::size_t header_len = 0;
    try {
        header_len = std::stoull(len_line);
    } catch (const std::exception&) {
        throw ParseError(path + ": bad header length");
    }
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw ParseError(path + ": truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": malformed header: " + e.what());
    }
    std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    std::map<std::string, Matrix> arrays;
    for (const auto& entry : header.at("arrays")) {
        const auto rows = entry.at("rows").get<std::size_t>();
        const auto cols = entry.at("cols").get<std::size_t>();
        const auto offset = entry.at("offset").get<std::size_t>();
        if ((offset + rows * cols) * 8 > payload.size()) throw ParseError(path + ": truncated payload");
        Matrix m(rows, cols);
        const auto* base = reinterpret_cast<const unsigned char*>(payload.data()) + offset * 8;
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = read_le(base + 8 * i);
        arrays.emplace(entry.at("name").get<std::string>(), std::move(m));
    }
    auto take = [&](const std::string& name) -> Matrix {
        auto it = arrays.find(name);
        if (it == arrays.end()) throw ParseError(path + ": missing array '" + name + "'");
        return it->second;
    };

    Checkpoint ckpt;
    ckpt.model = init_model(model_config_from_json(header.at("config")), 0);
    ckpt.model.for_each_parameter([&](const std::string& name, Matrix& m) {
        Matrix loaded = take(name);
        if (!loaded.same_shape(m)) throw ParseError(path + ": array '" + name + "' has wrong shape");
        m = std::move(loaded);
    });
    const auto& side = header.at("side_memories");
    for (std::size_t i = 0; i < side.size(); ++i) {
        const std::string p = side_prefix(i);
        SideMemory s;
        s.values = take(p + "values");
        s.round_base = take(p + "round_base");
        const auto k = side[i].at("k").get<std::size_t>();
        for (std::size_t m = 0; m < k; ++m) {
            s.masks.push_back(take(p + "mask/" + std::to_string(m)));
            s.shard_values.push_back(take(p + "shard/" + std::to_string(m)));
        }
        s.epsilon = take(p + "epsilon")[0];
        s.active_shard = side[i].at("active_shard").get<std::size_t>();
        s.edits_recorded = side[i].at("edits_recorded").get<std::size_t>();
        s.merges = side[i].at("merges").get<std::size_t>();
        s.shard_fill = side[i].at("shard_fill").get<std::vector<std::size_t>>();
        ckpt.memories.push_back(std::move(s));
    }
    ckpt.meta = header.value("meta", nlohmann::json::object());
    return ckpt;
}

}  // namespace wise
