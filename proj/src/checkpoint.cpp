#include <bit>
#include <cstdint>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "aifn/model.hpp"

namespace aifn {

namespace {

constexpr char kMagic[5] = {'A', 'I', 'F', 'N', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

// Cursor over the loaded file bytes; every read checks the remaining length
// so a truncated file fails cleanly instead of reading garbage.
struct Reader {
    const std::string& bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) {
            throw FormatError("checkpoint is truncated at byte " + std::to_string(pos));
        }
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
        }
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
        }
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes.substr(pos, n);
        pos += n;
        return s;
    }
};

nlohmann::json config_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["vocab_size"] = cfg.vocab_size;
    j["word_dim"] = cfg.word_dim;
    j["emotion_dim"] = cfg.emotion_dim;
    j["hidden"] = cfg.hidden;
    j["post_len"] = cfg.post_len;
    j["comment_len"] = cfg.comment_len;
    j["heads"] = cfg.heads;
    j["blocks"] = cfg.blocks;
    j["class_count"] = cfg.class_count;
    j["dropout"] = cfg.dropout;
    j["encoder"] = encoder_kind_name(cfg.encoder);
    j["fusion"] = fusion_mode_name(cfg.fusion);
    j["attention_residual"] = cfg.attention_residual;
    j["variant"] = variant_name(cfg.variant);
    j["seed"] = cfg.seed;
    if (cfg.word_embedding_file) {
        j["word_embedding_file"] = *cfg.word_embedding_file;
    } else {
        j["word_embedding_file"] = nullptr;
    }
    if (cfg.emotion_embedding_file) {
        j["emotion_embedding_file"] = *cfg.emotion_embedding_file;
    } else {
        j["emotion_embedding_file"] = nullptr;
    }
    return j;
}

ModelConfig config_from(const nlohmann::json& j, ModelConfig cfg = ModelConfig()) {
    if (!j.is_object()) {
        throw FormatError("config JSON must be an object");
    }
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "vocab_size") {
                cfg.vocab_size = value.get<std::size_t>();
            } else if (key == "word_dim") {
                cfg.word_dim = value.get<std::size_t>();
            } else if (key == "emotion_dim") {
                cfg.emotion_dim = value.get<std::size_t>();
            } else if (key == "hidden") {
                cfg.hidden = value.get<std::size_t>();
            } else if (key == "post_len") {
                cfg.post_len = value.get<std::size_t>();
            } else if (key == "comment_len") {
                cfg.comment_len = value.get<std::size_t>();
            } else if (key == "heads") {
                cfg.heads = value.get<std::size_t>();
            } else if (key == "blocks") {
                cfg.blocks = value.get<std::size_t>();
            } else if (key == "class_count") {
                cfg.class_count = value.get<std::size_t>();
            } else if (key == "dropout") {
                cfg.dropout = value.get<double>();
            } else if (key == "encoder") {
                cfg.encoder = encoder_kind_from_name(value.get<std::string>());
            } else if (key == "fusion") {
                cfg.fusion = fusion_mode_from_name(value.get<std::string>());
            } else if (key == "attention_residual") {
                cfg.attention_residual = value.get<bool>();
            } else if (key == "variant") {
                cfg.variant = variant_from_name(value.get<std::string>());
            } else if (key == "seed") {
                cfg.seed = value.get<std::uint64_t>();
            } else if (key == "word_embedding_file") {
                if (value.is_null()) {
                    cfg.word_embedding_file.reset();
                } else {
                    cfg.word_embedding_file = value.get<std::string>();
                }
            } else if (key == "emotion_embedding_file") {
                if (value.is_null()) {
                    cfg.emotion_embedding_file.reset();
                } else {
                    cfg.emotion_embedding_file = value.get<std::string>();
                }
            } else {
                throw FormatError("unknown config key \"" + key + "\"");
            }
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("config key \"" + key + "\": " + e.what());
        } catch (const ConfigError& e) {
            throw FormatError("config key \"" + key + "\": " + e.what());
        }
    }
    return cfg;
}

}  // namespace

std::string config_to_json(const ModelConfig& cfg) { return config_json(cfg).dump(); }

ModelConfig config_from_json(const std::string& text, ModelConfig base) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("config is not valid JSON: ") + e.what());
    }
    return config_from(j, std::move(base));
}

void save_checkpoint(const Model& model, const std::string& path, std::size_t epoch,
                     double val_metric) {
    std::string out;
    out.append(kMagic, sizeof(kMagic));

    nlohmann::json head;
    head["config"] = config_json(model.config());
    head["epoch"] = epoch;
    head["val_metric"] = val_metric;
    const std::string head_text = head.dump();
    put_u32(out, static_cast<std::uint32_t>(head_text.size()));
    out += head_text;

    const auto& items = model.params().items();
    put_u32(out, static_cast<std::uint32_t>(items.size()));
    for (const auto& [name, tensor] : items) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
        for (std::size_t axis = 0; axis < tensor.rank(); ++axis) {
            put_u64(out, tensor.extent(axis));
        }
        for (const double v : tensor.values()) {
            put_f64(out, v);
        }
    }

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) {
        throw FormatError("cannot open " + path + " for writing");
    }
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) {
        throw FormatError("failed writing " + path);
    }
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) {
        throw FormatError("cannot open " + path);
    }
    std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
    Reader in{bytes};

    const std::string magic = in.str(sizeof(kMagic));
    if (magic != std::string(kMagic, sizeof(kMagic))) {
        throw FormatError(path + " is not a model checkpoint (bad magic)");
    }

    const std::uint32_t head_len = in.u32();
    const std::string head_text = in.str(head_len);
    nlohmann::json head;
    try {
        head = nlohmann::json::parse(head_text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    CheckpointMeta meta;
    try {
        meta.config = config_from(head.at("config"));
        meta.epoch = head.at("epoch").get<std::size_t>();
        meta.val_metric = head.at("val_metric").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint header: ") + e.what());
    }

    // The stored values already include anything an embedding file provided,
    // so the rebuilt model must not try to read those files again.
    ModelConfig build_cfg = meta.config;
    build_cfg.word_embedding_file.reset();
    build_cfg.emotion_embedding_file.reset();
    LoadedCheckpoint loaded{Model(build_cfg), meta};

    const auto& items = loaded.model.params().items();
    const std::uint32_t count = in.u32();
    if (count != items.size()) {
        throw FormatError("checkpoint holds " + std::to_string(count) +
                          " parameters, the model needs " + std::to_string(items.size()));
    }
    std::unordered_set<std::string> seen;
    for (std::uint32_t r = 0; r < count; ++r) {
        const std::uint32_t name_len = in.u32();
        const std::string name = in.str(name_len);
        if (!seen.insert(name).second) {
            throw FormatError("checkpoint repeats parameter \"" + name + "\"");
        }
        const std::uint32_t rank = in.u32();
        Shape shape(rank);
        for (std::uint32_t axis = 0; axis < rank; ++axis) {
            shape[axis] = in.u64();
        }
        Tensor target;
        try {
            target = loaded.model.params().find(name);
        } catch (const ContractError&) {
            throw FormatError("checkpoint parameter \"" + name + "\" does not exist in a " +
                              variant_name(meta.config.variant) + " model");
        }
        if (target.shape() != shape) {
            throw FormatError("checkpoint parameter \"" + name + "\" has shape " +
                              shape_str(shape) + ", the model expects " +
                              shape_str(target.shape()));
        }
        auto dst = target.values_mut();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] = in.f64();
        }
    }
    return loaded;
}

}  // namespace aifn
