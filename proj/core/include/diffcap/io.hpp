#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "diffcap/rng.hpp"
#include "diffcap/tape.hpp"

#include "json.hpp"

namespace diffcap {

using Json = nlohmann::ordered_json;

// ---- flat key -> tensor binary archive (checkpoints, imported weights) ----

struct NamedTensor {
    std::string name;
    Matrix value;
};

void save_archive(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_archive(const std::filesystem::path& path);

// Serializes every parameter in store order.
void save_parameters(const std::filesystem::path& path, const ParameterStore& store);
// Load modes: into an empty store (creates entries) or into a built model
// (entries must exist with matching shapes).
void load_parameters(const std::filesystem::path& path, ParameterStore& store);

// ---- content hashing and run manifests ----

// Hex SHA-1 of the git blob object ("blob <len>\0" + bytes), so hashes can be
// cross-checked with `git hash-object`.
std::string git_blob_sha1(const std::string& bytes);
std::string git_blob_sha1_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

// Manifest written next to every produced artifact: tool name, config
// snapshot, seed, content hashes of inputs and outputs. Deliberately carries
// no timestamps so reruns are byte-identical.
class ManifestBuilder {
  public:
    explicit ManifestBuilder(std::string tool);
    void set_config(Json config);
    void set_seed(std::uint64_t seed);
    void add_input(const std::string& label, const std::filesystem::path& path);
    void add_output(const std::string& label, const std::filesystem::path& path);
    void add_note(const std::string& key, const Json& value);
    void write(const std::filesystem::path& path) const;
    const Json& json() const { return j_; }

  private:
    Json j_;
};

}  // namespace diffcap
