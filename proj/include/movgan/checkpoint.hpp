#pragma once

#include <map>
#include <string>

#include "movgan/discriminator.hpp"
#include "movgan/generator.hpp"

namespace movgan {

// Binary parameter-tree container: every tensor entry carries its name,
// dtype and shape; a format-version header guards compatibility and loading
// validates every shape against the expected tree.
void save_param_tree(const std::string& path, const NamedParams& params,
                     const std::map<std::string, std::string>& meta);
std::pair<NamedParams, std::map<std::string, std::string>> load_param_tree(
    const std::string& path);

// Throws ConfigError when a parameter is missing or its shape disagrees.
void validate_shapes(const NamedParams& loaded, const NamedParams& expected);

// JSON round trips for the network configs (stored in checkpoint meta).
std::string generator_config_to_json(const GeneratorConfig& cfg);
GeneratorConfig generator_config_from_json(const std::string& text);
std::string discriminator_config_to_json(const DiscriminatorConfig& cfg);
DiscriminatorConfig discriminator_config_from_json(const std::string& text);

// One combined file holding the generator and discriminator subtrees
// ("g." / "d." prefixes) plus arbitrary extra tensors (optimizer moments)
// and metadata.
struct ModelCheckpoint {
    GeneratorState generator;
    DiscriminatorState discriminator;
    NamedParams extra;                        // e.g. "opt.g.m.<param>"
    std::map<std::string, std::string> meta;  // step, seed, configs
};

void save_model(const std::string& path, const ModelCheckpoint& ckpt);
ModelCheckpoint load_model(const std::string& path);

// FNV-1a over a canonical string; used for config hashes in run manifests.
uint64_t fnv1a_hash(const std::string& text);

}  // namespace movgan
