#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "diffcap/rng.hpp"
#include "diffcap/tape.hpp"

namespace diffcap {

enum class BackboneKind { Toy, Imported };

// Spatial feature tokens: HW rows (row-major over the H x W grid), C columns.
struct FeatureMap {
    Matrix tokens;
    BackboneKind provenance = BackboneKind::Toy;
    int H = 0;
    int W = 0;
};

// I_di = F_bef - F_aft, elementwise. Shapes and provenance must agree.
Matrix residual_map(const FeatureMap& f_bef, const FeatureMap& f_aft);

// --- toy backbone ------------------------------------------------------
// Three 3x3 stride-2 pad-1 conv stages (widths 16/32/64), ReLU after each;
// fixed 32x32 RGB input -> 4x4 grid of 64-dim tokens. Weights live in a
// ParameterStore under "backbone/...", so the fine-tune flag can route
// gradients through the same graph used for inference.
struct ToyBackbone {
    static constexpr int kInputSize = 32;
    static constexpr int kOutGrid = 4;
    static constexpr int kOutTokens = 16;
    static constexpr int kOutChannels = 64;

    static void init_params(ParameterStore& store, RngStream& rng);
    static bool has_params(const ParameterStore& store);

    // in-graph extraction; trainable=false routes weights in as constants
    static Var tokens_var(Tape& t, const std::vector<Matrix>& planes, ParameterStore& store,
                          bool trainable);
    // plain inference convenience (single evaluation of the same graph)
    static FeatureMap extract(const std::vector<Matrix>& planes, ParameterStore& store);
};

// --- imported residual-bottleneck backbone ------------------------------
// Standard deep residual topology: 7x7/2 stem, 3x3/2 max pool, four stages
// of 1-3-1 bottleneck blocks, stride 2 at the entry of stages 2-4. The
// 101-layer preset ([3,4,23,3], widths 64..512, expansion 4) maps 256x256
// inputs to an 8x8 grid of 2048-dim tokens. Inference only; weights come
// from the flat key->tensor archive (key names documented in docs/).
struct BottleneckBackboneSpec {
    std::vector<int> blocks{3, 4, 23, 3};
    std::vector<int> widths{64, 128, 256, 512};
    int stem_channels = 64;
    int expansion = 4;

    static BottleneckBackboneSpec resnet101();
    // one block per stage, widths 4/8/16/32 — exercises every code path fast
    static BottleneckBackboneSpec tiny();

    int out_channels() const { return widths.back() * expansion; }
};

class ImportedBackbone {
  public:
    static ImportedBackbone load(const std::filesystem::path& archive,
                                 const BottleneckBackboneSpec& spec);
    // random weights for shape/stride tests; never used in real runs
    static ImportedBackbone random(const BottleneckBackboneSpec& spec, RngStream& rng);

    // planes: 3 channel matrices, square size divisible by 32
    FeatureMap extract(const std::vector<Matrix>& planes) const;

    const BottleneckBackboneSpec& spec() const { return spec_; }
    // every archive key this topology requires (with expected shapes);
    // doubles as the import-script contract
    static std::vector<std::pair<std::string, std::pair<int, int>>> expected_keys(
        const BottleneckBackboneSpec& spec);

  private:
    explicit ImportedBackbone(BottleneckBackboneSpec spec) : spec_(std::move(spec)) {}
    const Matrix& tensor(const std::string& key) const;

    BottleneckBackboneSpec spec_;
    std::unordered_map<std::string, Matrix> weights_;
};

}  // namespace diffcap
