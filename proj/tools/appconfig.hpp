#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "diffcap/denoiser.hpp"
#include "diffcap/io.hpp"
#include "diffcap/schedule.hpp"
#include "diffcap/train.hpp"

namespace diffcap {

// Everything the run config covers, under four flat namespaces:
//   schedule.*  noise schedule construction
//   denoiser.*  model dimensions
//   train.*     optimizer loop
//   data.*      dataset location/generation and the vision backbone
// Unknown keys are rejected so a misspelling can never fall back to a
// default silently.
struct DataConfig {
    std::string kind = "toy";  // toy | levir
    std::string root = "data/toy";
    int train_size = 16;
    int val_size = 4;
    int test_size = 4;
    int image_size = 32;
    double changed_ratio = 0.5;
    std::uint64_t seed = 0;
    std::string backbone = "toy";        // toy | imported
    std::string backbone_archive;        // weight archive for `imported`
    std::string backbone_spec = "resnet101";  // resnet101 | tiny
    bool finetune_backbone = false;      // toy backbone only
};

struct AppConfig {
    ScheduleParams schedule;
    DenoiserConfig denoiser;
    TrainConfig train;
    DataConfig data;

    // `key = value` lines, '#' comments. Later lines win.
    void load_file(const std::filesystem::path& path);
    // one override, "section.key=value" form (the --set flag)
    void apply(const std::string& key, const std::string& value);
    void apply_sets(const std::vector<std::string>& sets);

    // cross-field checks shared by every subcommand
    void validate() const;

    // full typed snapshot of every known key, in registry order
    Json snapshot() const;
};

}  // namespace diffcap
