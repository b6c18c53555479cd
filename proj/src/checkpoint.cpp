#include "brq/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "brq/error.hpp"

namespace brq {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'B', 'R', 'Q', '1'};

struct NamedTensor {
    std::string name;
    const std::vector<double>* data;
    std::vector<std::size_t> shape;
};

std::vector<NamedTensor> checkpoint_tensors(const Checkpoint& ckpt) {
    std::vector<NamedTensor> tensors;
    for (const auto& ref : tensor_refs(ckpt.predictor)) {
        tensors.push_back({ref.name, ref.data, ref.shape});
    }
    tensors.push_back({"projection", &ckpt.quantizer.projection.data,
                       {ckpt.quantizer.projection.rows, ckpt.quantizer.projection.cols}});
    tensors.push_back({"codebook", &ckpt.quantizer.codebook.data,
                       {ckpt.quantizer.codebook.rows, ckpt.quantizer.codebook.cols}});
    return tensors;
}

void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

json predictor_config_json(const PredictorConfig& c) {
    return json{{"input_dim", c.input_dim},
                {"hidden_dim", c.hidden_dim},
                {"context_radius", c.context_radius},
                {"codebook_size", c.codebook_size},
                {"seed", c.seed}};
}

json quantizer_config_json(const QuantizerConfig& c) {
    return json{{"seed", c.seed},
                {"input_dim", c.input_dim},
                {"code_dim", c.code_dim},
                {"codebook_size", c.codebook_size}};
}

} // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    const auto tensors = checkpoint_tensors(ckpt);

    json header;
    header["format_version"] = 1;
    header["stack"] = ckpt.stack;
    header["predictor"] = predictor_config_json(ckpt.predictor.config);
    header["quantizer"] = quantizer_config_json(ckpt.quantizer.config);
    json tensor_list = json::array();
    std::uint64_t offset = 0;
    for (const auto& t : tensors) {
        json entry;
        entry["name"] = t.name;
        entry["shape"] = t.shape;
        entry["offset"] = offset;
        tensor_list.push_back(entry);
        offset += t.data->size() * 4;
    }
    header["tensors"] = tensor_list;
    const std::string header_text = header.dump();

    std::string out;
    out.append(kMagic, 4);
    append_u32(out, static_cast<std::uint32_t>(header_text.size()));
    out.append(header_text);
    for (const auto& t : tensors) {
        for (double v : *t.data) {
            append_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        }
    }

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) {
            fail(ErrorKind::IoError, "cannot open checkpoint for writing: " + tmp);
        }
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) {
            fail(ErrorKind::IoError, "short checkpoint write: " + tmp);
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        fail(ErrorKind::IoError, "cannot open checkpoint: " + path);
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        fail(ErrorKind::CorruptFile, "bad checkpoint magic: " + path);
    }
    const std::uint32_t header_len = read_u32(bytes.data() + 4);
    if (bytes.size() < 8 + static_cast<std::size_t>(header_len)) {
        fail(ErrorKind::CorruptFile, "truncated checkpoint header: " + path);
    }
    json header;
    try {
        header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
    } catch (const json::exception& e) {
        fail(ErrorKind::CorruptFile, "unparsable checkpoint header: " + std::string(e.what()));
    }

    Checkpoint ckpt;
    try {
        ckpt.stack = header.at("stack").get<int>();
        const json& pc = header.at("predictor");
        ckpt.predictor.config.input_dim = pc.at("input_dim").get<int>();
        ckpt.predictor.config.hidden_dim = pc.at("hidden_dim").get<int>();
        ckpt.predictor.config.context_radius = pc.at("context_radius").get<int>();
        ckpt.predictor.config.codebook_size = pc.at("codebook_size").get<int>();
        ckpt.predictor.config.seed = pc.at("seed").get<std::uint64_t>();
        const json& qc = header.at("quantizer");
        ckpt.quantizer.config.seed = qc.at("seed").get<std::uint64_t>();
        ckpt.quantizer.config.input_dim = qc.at("input_dim").get<int>();
        ckpt.quantizer.config.code_dim = qc.at("code_dim").get<int>();
        ckpt.quantizer.config.codebook_size = qc.at("codebook_size").get<int>();
    } catch (const json::exception& e) {
        fail(ErrorKind::CorruptFile, "incomplete checkpoint header: " + std::string(e.what()));
    }

    // Allocate tensors from the configs, then fill by name.
    const PredictorConfig& pc = ckpt.predictor.config;
    const std::size_t ctx =
        static_cast<std::size_t>(2 * pc.context_radius + 1) * static_cast<std::size_t>(pc.input_dim);
    ckpt.predictor.w1 = Matrix(ctx, static_cast<std::size_t>(pc.hidden_dim));
    ckpt.predictor.b1.assign(static_cast<std::size_t>(pc.hidden_dim), 0.0);
    ckpt.predictor.w2 = Matrix(static_cast<std::size_t>(pc.hidden_dim),
                               static_cast<std::size_t>(pc.hidden_dim));
    ckpt.predictor.b2.assign(static_cast<std::size_t>(pc.hidden_dim), 0.0);
    ckpt.predictor.w_out = Matrix(static_cast<std::size_t>(pc.hidden_dim),
                                  static_cast<std::size_t>(pc.codebook_size));
    ckpt.predictor.b_out.assign(static_cast<std::size_t>(pc.codebook_size), 0.0);
    ckpt.quantizer.projection = Matrix(static_cast<std::size_t>(ckpt.quantizer.config.input_dim),
                                       static_cast<std::size_t>(ckpt.quantizer.config.code_dim));
    ckpt.quantizer.codebook = Matrix(static_cast<std::size_t>(ckpt.quantizer.config.codebook_size),
                                     static_cast<std::size_t>(ckpt.quantizer.config.code_dim));

    const auto tensors = checkpoint_tensors(ckpt);
    const unsigned char* data_base = bytes.data() + 8 + header_len;
    const std::size_t data_size = bytes.size() - 8 - header_len;
    for (const json& entry : header.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
        const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        const NamedTensor* target = nullptr;
        for (const auto& t : tensors) {
            if (t.name == name) {
                target = &t;
                break;
            }
        }
        if (target == nullptr) {
            fail(ErrorKind::CorruptFile, "unknown tensor in checkpoint: " + name);
        }
        if (shape != target->shape) {
            fail(ErrorKind::CorruptFile, "tensor shape mismatch for " + name);
        }
        const std::size_t n = target->data->size();
        if (offset + n * 4 > data_size) {
            fail(ErrorKind::CorruptFile, "tensor data out of bounds for " + name);
        }
        auto* dst = const_cast<std::vector<double>*>(target->data);
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint32_t bits = read_u32(data_base + offset + 4 * i);
            (*dst)[i] = static_cast<double>(std::bit_cast<float>(bits));
        }
    }
    return ckpt;
}

} // namespace brq
