#include "movgan/checkpoint.hpp"

#include <fstream>

#include "json.hpp"
#include "movgan/errors.hpp"

using nlohmann::json;

namespace movgan {

namespace {

constexpr uint32_t kMagic = 0x4d564743;  // "MVGC"
constexpr uint32_t kVersion = 1;

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw ParseError(path + ": truncated checkpoint");
    return v;
}

void write_string(std::ofstream& out, const std::string& s) {
    write_raw(out, static_cast<uint64_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in, const std::string& path) {
    uint64_t n = read_raw<uint64_t>(in, path);
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw ParseError(path + ": truncated checkpoint");
    return s;
}

}  // namespace

void save_param_tree(const std::string& path, const NamedParams& params,
                     const std::map<std::string, std::string>& meta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open " + path + " for writing");
    write_raw(out, kMagic);
    write_raw(out, kVersion);
    write_raw(out, static_cast<uint64_t>(meta.size()));
    for (const auto& [k, v] : meta) {
        write_string(out, k);
        write_string(out, v);
    }
    write_raw(out, static_cast<uint64_t>(params.items.size()));
    for (const auto& [name, tensor] : params.items) {
        write_string(out, name);
        write_raw(out, static_cast<uint8_t>(0));  // dtype: f64
        write_raw(out, static_cast<uint32_t>(tensor.rank()));
        for (int d : tensor.shape()) write_raw(out, static_cast<int64_t>(d));
        out.write(reinterpret_cast<const char*>(tensor.data()),
                  static_cast<std::streamsize>(tensor.size() * sizeof(double)));
    }
    if (!out) throw InputError("short write to " + path);
}

std::pair<NamedParams, std::map<std::string, std::string>> load_param_tree(
    const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open checkpoint " + path);
    if (read_raw<uint32_t>(in, path) != kMagic)
        throw ParseError(path + ": not a checkpoint file");
    uint32_t version = read_raw<uint32_t>(in, path);
    if (version != kVersion)
        throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));

    std::map<std::string, std::string> meta;
    const uint64_t meta_count = read_raw<uint64_t>(in, path);
    for (uint64_t i = 0; i < meta_count; ++i) {
        std::string k = read_string(in, path);
        meta[k] = read_string(in, path);
    }

    NamedParams params;
    const uint64_t tensor_count = read_raw<uint64_t>(in, path);
    for (uint64_t i = 0; i < tensor_count; ++i) {
        std::string name = read_string(in, path);
        uint8_t dtype = read_raw<uint8_t>(in, path);
        if (dtype != 0) throw ParseError(path + ": unsupported dtype for " + name);
        uint32_t rank = read_raw<uint32_t>(in, path);
        if (rank > 8) throw ParseError(path + ": implausible rank for " + name);
        std::vector<int> shape;
        for (uint32_t d = 0; d < rank; ++d)
            shape.push_back(static_cast<int>(read_raw<int64_t>(in, path)));
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!in) throw ParseError(path + ": truncated tensor data for " + name);
        params.add(name, std::move(t));
    }
    return {std::move(params), std::move(meta)};
}

void validate_shapes(const NamedParams& loaded, const NamedParams& expected) {
    for (const auto& [name, tensor] : expected.items) {
        if (!loaded.has(name)) throw ConfigError("checkpoint missing parameter \"" + name + "\"");
        const Tensor& got = loaded.get(name);
        if (!got.same_shape(tensor))
            throw ConfigError("checkpoint parameter \"" + name + "\" has shape " +
                              got.shape_string() + ", expected " + tensor.shape_string());
    }
}

namespace {

json frequency_to_json(const FrequencyConfig& f) {
    return json{{"sigma_x", f.sigma_x}, {"sigma_y", f.sigma_y}, {"sigma_t", f.sigma_t}};
}

FrequencyConfig frequency_from_json(const json& j) {
    FrequencyConfig f;
    f.sigma_x = j.value("sigma_x", f.sigma_x);
    f.sigma_y = j.value("sigma_y", f.sigma_y);
    f.sigma_t = j.value("sigma_t", f.sigma_t);
    return f;
}

}  // namespace

std::string generator_config_to_json(const GeneratorConfig& c) {
    json j{{"categories", c.categories},
           {"embed_dim", c.embed_dim},
           {"z_content_dim", c.z_content_dim},
           {"z_motion_dim", c.z_motion_dim},
           {"base_resolution", c.base_resolution},
           {"resolution", c.resolution},
           {"clip_length", c.clip_length},
           {"max_instances", c.max_instances},
           {"id_embed_dim", c.id_embed_dim},
           {"style_hidden", c.style_hidden},
           {"style_layers", c.style_layers},
           {"local_channels", c.local_channels},
           {"local_seed", c.local_seed},
           {"global_channels", c.global_channels},
           {"decoder_channels", c.decoder_channels},
           {"synth_hidden", c.synth_hidden},
           {"motion_dim", c.motion_dim},
           {"frequencies", frequency_to_json(c.frequencies)}};
    return j.dump();
}

GeneratorConfig generator_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("generator config: invalid JSON (") + e.what() + ")");
    }
    GeneratorConfig c;
    c.categories = j.value("categories", c.categories);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.z_content_dim = j.value("z_content_dim", c.z_content_dim);
    c.z_motion_dim = j.value("z_motion_dim", c.z_motion_dim);
    c.base_resolution = j.value("base_resolution", c.base_resolution);
    c.resolution = j.value("resolution", c.resolution);
    c.clip_length = j.value("clip_length", c.clip_length);
    c.max_instances = j.value("max_instances", c.max_instances);
    c.id_embed_dim = j.value("id_embed_dim", c.id_embed_dim);
    c.style_hidden = j.value("style_hidden", c.style_hidden);
    c.style_layers = j.value("style_layers", c.style_layers);
    c.local_channels = j.value("local_channels", c.local_channels);
    c.local_seed = j.value("local_seed", c.local_seed);
    c.global_channels = j.value("global_channels", c.global_channels);
    c.decoder_channels = j.value("decoder_channels", c.decoder_channels);
    c.synth_hidden = j.value("synth_hidden", c.synth_hidden);
    c.motion_dim = j.value("motion_dim", c.motion_dim);
    if (j.contains("frequencies")) c.frequencies = frequency_from_json(j["frequencies"]);
    return c;
}

std::string discriminator_config_to_json(const DiscriminatorConfig& c) {
    json j{{"categories", c.categories},
           {"embed_dim", c.embed_dim},
           {"resolution", c.resolution},
           {"clip_length", c.clip_length},
           {"max_instances", c.max_instances},
           {"global_channels", c.global_channels},
           {"local_channels", c.local_channels},
           {"label_channels", c.label_channels},
           {"crop_size", c.crop_size},
           {"head_channels", c.head_channels},
           {"half_precision", c.half_precision}};
    return j.dump();
}

DiscriminatorConfig discriminator_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("discriminator config: invalid JSON (") + e.what() + ")");
    }
    DiscriminatorConfig c;
    c.categories = j.value("categories", c.categories);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.resolution = j.value("resolution", c.resolution);
    c.clip_length = j.value("clip_length", c.clip_length);
    c.max_instances = j.value("max_instances", c.max_instances);
    c.global_channels = j.value("global_channels", c.global_channels);
    c.local_channels = j.value("local_channels", c.local_channels);
    c.label_channels = j.value("label_channels", c.label_channels);
    c.crop_size = j.value("crop_size", c.crop_size);
    c.head_channels = j.value("head_channels", c.head_channels);
    c.half_precision = j.value("half_precision", c.half_precision);
    return c;
}

void save_model(const std::string& path, const ModelCheckpoint& ckpt) {
    NamedParams combined;
    for (const auto& [name, tensor] : ckpt.generator.params.items)
        combined.add("g." + name, tensor);
    for (const auto& [name, tensor] : ckpt.discriminator.params.items)
        combined.add("d." + name, tensor);
    for (const auto& [name, tensor] : ckpt.extra.items) combined.add(name, tensor);

    std::map<std::string, std::string> meta = ckpt.meta;
    meta["generator_config"] = generator_config_to_json(ckpt.generator.config);
    meta["discriminator_config"] = discriminator_config_to_json(ckpt.discriminator.config);
    save_param_tree(path, combined, meta);
}

ModelCheckpoint load_model(const std::string& path) {
    auto [params, meta] = load_param_tree(path);
    if (!meta.count("generator_config") || !meta.count("discriminator_config"))
        throw ParseError(path + ": checkpoint missing embedded configs");

    ModelCheckpoint ckpt;
    ckpt.meta = meta;
    GeneratorConfig gcfg = generator_config_from_json(meta.at("generator_config"));
    DiscriminatorConfig dcfg = discriminator_config_from_json(meta.at("discriminator_config"));

    // Shape validation: an initialized state of the same config defines the
    // expected tree; every loaded tensor must match it.
    ckpt.generator = GeneratorState::init(gcfg, 0);
    ckpt.discriminator = DiscriminatorState::init(dcfg, 0);
    NamedParams expected;
    for (const auto& [name, tensor] : ckpt.generator.params.items)
        expected.add("g." + name, tensor);
    for (const auto& [name, tensor] : ckpt.discriminator.params.items)
        expected.add("d." + name, tensor);
    validate_shapes(params, expected);

    for (auto& [name, tensor] : params.items) {
        if (name.rfind("g.", 0) == 0)
            ckpt.generator.params.get(name.substr(2)) = tensor;
        else if (name.rfind("d.", 0) == 0)
            ckpt.discriminator.params.get(name.substr(2)) = tensor;
        else
            ckpt.extra.add(name, tensor);
    }
    return ckpt;
}

uint64_t fnv1a_hash(const std::string& text) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace movgan
