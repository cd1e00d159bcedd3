#include "haht/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace haht {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'H', 'A', 'H', 'T', 'C', 'K', 'P', 'T'};

void write_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b, 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b, 8);
}

void write_f64(std::ostream& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    write_u64(out, bits);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double read_f64(std::istream& in) {
    std::uint64_t bits = read_u64(in);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

json config_json(const ModelConfig& cfg) {
    return json{{"d", cfg.d},
                {"d_ff", cfg.d_ff},
                {"n_heads", cfg.n_heads},
                {"n_enc", cfg.n_enc},
                {"n_dec", cfg.n_dec},
                {"l_utter", cfg.l_utter},
                {"l_ctx", cfg.l_ctx},
                {"d_a", cfg.d_a},
                {"vocab_size", cfg.vocab_size},
                {"max_history_sessions", cfg.max_history_sessions},
                {"dropout", cfg.dropout},
                {"seed", cfg.seed},
                {"share_utterance_encoder", cfg.share_utterance_encoder},
                {"session_pos_embedding", cfg.session_pos_embedding}};
}

ModelConfig config_from(const json& j) {
    ModelConfig cfg;
    cfg.d = j.at("d").get<int>();
    cfg.d_ff = j.at("d_ff").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.n_enc = j.at("n_enc").get<int>();
    cfg.n_dec = j.at("n_dec").get<int>();
    cfg.l_utter = j.at("l_utter").get<int>();
    cfg.l_ctx = j.at("l_ctx").get<int>();
    cfg.d_a = j.at("d_a").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.max_history_sessions = j.at("max_history_sessions").get<int>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.share_utterance_encoder = j.at("share_utterance_encoder").get<bool>();
    cfg.session_pos_embedding = j.at("session_pos_embedding").get<bool>();
    return cfg;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return config_json(cfg).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
    return config_from(json::parse(text));
}

void save_checkpoint(const std::string& path, const HahtModel& model, const Vocabulary& vocab) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    json header;
    header["format_version"] = 1;
    header["config"] = config_json(model.config());
    header["variant"] = variant_name(model.variant());
    header["vocab"] = json::parse(vocab.to_json_string());
    const std::string header_str = header.dump();

    out.write(kMagic, 8);
    write_u64(out, header_str.size());
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& name : model.params().names()) {
        const Tensor& tensor = model.params().value(name);
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<std::uint32_t>(tensor.shape().size()));
        for (std::size_t dim : tensor.shape()) write_u64(out, dim);
        for (double v : tensor.data()) write_f64(out, v);
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("load_checkpoint: not a checkpoint file: " + path);
    const std::uint64_t header_len = read_u64(in);
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw std::runtime_error("load_checkpoint: truncated header");
    json header = json::parse(header_str);
    if (header.at("format_version").get<int>() != 1)
        throw std::runtime_error("load_checkpoint: unsupported format version");

    Checkpoint ckpt;
    ckpt.config = config_from(header.at("config"));
    ckpt.variant = variant_from_name(header.at("variant").get<std::string>());
    ckpt.vocab = Vocabulary::from_json_string(header.at("vocab").dump());
    if (ckpt.vocab.size() != ckpt.config.vocab_size)
        throw std::runtime_error("load_checkpoint: vocabulary size mismatch with config");

    while (true) {
        in.peek();
        if (in.eof()) break;
        const std::uint32_t name_len = read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const std::uint32_t rank = read_u32(in);
        std::vector<std::size_t> shape(rank);
        for (auto& s : shape) s = static_cast<std::size_t>(read_u64(in));
        Tensor tensor(shape);
        for (std::size_t i = 0; i < tensor.numel(); ++i) tensor(i) = read_f64(in);
        ckpt.params.add(name, std::move(tensor));
    }
    return ckpt;
}

HahtModel Checkpoint::to_model() const {
    HahtModel model(config, variant);
    // Rebuild the parameter set for the variant, then overwrite with the
    // stored values so shapes are validated against the wiring.
    HahtModel fresh = HahtModel::init(config, variant);
    if (fresh.params().names() != params.names())
        throw std::runtime_error("checkpoint: parameter set does not match variant wiring");
    for (const auto& name : params.names()) {
        if (!fresh.params().value(name).same_shape(params.value(name)))
            throw std::runtime_error("checkpoint: shape mismatch for parameter " + name);
    }
    model.params() = params;
    return model;
}

}  // namespace haht
