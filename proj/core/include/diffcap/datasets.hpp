#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "diffcap/imageio.hpp"
#include "diffcap/rng.hpp"
#include "diffcap/textspace.hpp"

namespace diffcap {

enum class ChangeType { None, AddBuilding, AddRoad, RemoveVegetation };
std::string to_string(ChangeType t);

// half-open pixel box [x0,x1) x [y0,y1); any = false means no change
struct ChangeRegion {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    bool any = false;
    bool contains(int x, int y) const { return any && x >= x0 && x < x1 && y >= y0 && y < y1; }
};

struct CaptionedPair {
    std::string name;  // stable pair id (image filename without extension)
    Image before;
    Image after;
    std::vector<std::vector<std::string>> captions;  // tokenized references, >= 1
    std::string label;                               // change-type tag
};

struct DatasetSplit {
    std::string name;
    std::vector<CaptionedPair> pairs;
};

struct Dataset {
    DatasetSplit train, val, test;
    Vocabulary vocab;
};

struct ToySpec {
    int train_size = 16;
    int val_size = 4;
    int test_size = 4;
    int image_size = 32;
    double changed_ratio = 0.5;  // fraction of pairs with a rendered change
    std::uint64_t seed = 0;
};

// One rendered pair plus the geometry the renderer used, so tests can check
// the pixel-diff support exactly.
struct ToyRender {
    Image before;
    Image after;
    std::string caption;
    ChangeType type = ChangeType::None;
    ChangeRegion region;
};

// Scene grammar, disjoint red-channel bands so any change pixel provably
// differs from the textured bare-land background:
//   background r in [125,175], building gray in [215,235],
//   road gray in [30,50], vegetation r in [50,70].
// Changes: add a gray square, add a full-length road strip, or remove a
// vegetation patch (present only in the before image).
ToyRender render_toy_pair(int image_size, ChangeType type, RngStream& rng);

// the four fixed caption strings, indexed by ChangeType order
const std::vector<std::string>& toy_caption_templates();

// Deterministic splits from per-split derived streams; the vocabulary covers
// the closed template set, independent of seed and sizes.
Dataset generate_toy_dataset(const ToySpec& spec);

// On-disk layout shared with the LEVIR-CC distribution:
//   root/images/<split>/A/<file>.png   (before)
//   root/images/<split>/B/<file>.png   (after)
//   root/captions.json                 {"images":[{"filename","split",
//                                       "sentences":[{"raw":...}x5],
//                                       "changeflag"}...]}
// Pairs keep index-file order; captions keep listed order; the vocabulary is
// built from the train split. Pairs without exactly five sentences are kept;
// expect_five_captions controls whether that earns a summary warning (off for
// toy exports, which carry one caption each).
Dataset load_levir_cc(const std::filesystem::path& root, bool expect_five_captions = true);

// writes the same layout (plus a "label" field per record)
void export_dataset(const Dataset& ds, const std::filesystem::path& root);

}  // namespace diffcap
