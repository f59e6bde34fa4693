#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"

#include "diffcap/datasets.hpp"
#include "diffcap/errors.hpp"
#include "diffcap/io.hpp"

using namespace diffcap;
namespace fs = std::filesystem;

namespace {

bool pixels_equal(const Image& a, const Image& b) {
    return a.width == b.width && a.height == b.height && a.rgb == b.rgb;
}

fs::path fresh_dir(const std::string& leaf) {
    fs::path p = fs::temp_directory_path() / ("diffcap_ds_" + leaf);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("renderer geometry is exactly the pixel-diff support") {
    RngStream rng(7001);
    int boxes = 0, strips = 0, patches = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto type = static_cast<ChangeType>(1 + rng.uniform_int(0, 2));
        ToyRender r = render_toy_pair(32, type, rng);
        REQUIRE(r.region.any);
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                const bool differs = r.before.at(x, y, 0) != r.after.at(x, y, 0) ||
                                     r.before.at(x, y, 1) != r.after.at(x, y, 1) ||
                                     r.before.at(x, y, 2) != r.after.at(x, y, 2);
                CHECK(differs == r.region.contains(x, y));
            }
        // the disjoint red-channel bands that guarantee the support
        for (int y = r.region.y0; y < r.region.y1; ++y)
            for (int x = r.region.x0; x < r.region.x1; ++x) {
                const int red_after = r.after.at(x, y, 0);
                const int red_before = r.before.at(x, y, 0);
                switch (type) {
                    case ChangeType::AddBuilding:
                        CHECK(red_after >= 215);
                        CHECK(red_after <= 235);
                        ++boxes;
                        break;
                    case ChangeType::AddRoad:
                        CHECK(red_after >= 30);
                        CHECK(red_after <= 50);
                        ++strips;
                        break;
                    case ChangeType::RemoveVegetation:
                        CHECK(red_before >= 50);
                        CHECK(red_before <= 70);
                        CHECK(red_after >= 125);
                        CHECK(red_after <= 175);
                        ++patches;
                        break;
                    default: FAIL("unexpected type");
                }
            }
    }
    CHECK(boxes > 0);
    CHECK(strips > 0);
    CHECK(patches > 0);
}

TEST_CASE("unchanged pairs are bit-identical; roads span the full image") {
    RngStream rng(7002);
    ToyRender none = render_toy_pair(32, ChangeType::None, rng);
    CHECK(pixels_equal(none.before, none.after));
    CHECK(!none.region.any);
    CHECK(none.caption == "the scene is the same as before");

    for (int i = 0; i < 10; ++i) {
        ToyRender road = render_toy_pair(32, ChangeType::AddRoad, rng);
        const bool horizontal = road.region.x0 == 0 && road.region.x1 == 32;
        const bool vertical = road.region.y0 == 0 && road.region.y1 == 32;
        CHECK((horizontal || vertical));
    }

    CHECK_THROWS_AS(render_toy_pair(8, ChangeType::None, rng), ConfigError);
}

TEST_CASE("toy dataset: determinism, ratio edges, stable vocabulary") {
    ToySpec spec;
    spec.train_size = 6;
    spec.val_size = 2;
    spec.test_size = 2;
    spec.seed = 99;

    Dataset a = generate_toy_dataset(spec);
    Dataset b = generate_toy_dataset(spec);
    REQUIRE(a.train.pairs.size() == 6);
    REQUIRE(a.val.pairs.size() == 2);
    REQUIRE(a.test.pairs.size() == 2);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(pixels_equal(a.train.pairs[i].before, b.train.pairs[i].before));
        CHECK(pixels_equal(a.train.pairs[i].after, b.train.pairs[i].after));
        CHECK(a.train.pairs[i].captions == b.train.pairs[i].captions);
        CHECK(a.train.pairs[i].label == b.train.pairs[i].label);
    }

    // the vocabulary covers the closed template set whatever the seed
    Dataset c = generate_toy_dataset([&] {
        ToySpec s = spec;
        s.seed = 123456;
        return s;
    }());
    CHECK(a.vocab.size() == c.vocab.size());
    for (int id = 0; id < a.vocab.size(); ++id) CHECK(a.vocab.token(id) == c.vocab.token(id));
    for (const std::string& tmpl : toy_caption_templates())
        for (const std::string& w : tokenize(tmpl)) CHECK(a.vocab.id(w) != Vocabulary::kUnk);

    ToySpec all_same = spec;
    all_same.changed_ratio = 0.0;
    Dataset d = generate_toy_dataset(all_same);
    for (const CaptionedPair& p : d.train.pairs) {
        CHECK(p.label == "none");
        CHECK(p.captions[0] == tokenize("the scene is the same as before"));
        CHECK(pixels_equal(p.before, p.after));
    }

    ToySpec all_changed = spec;
    all_changed.changed_ratio = 1.0;
    Dataset e = generate_toy_dataset(all_changed);
    for (const CaptionedPair& p : e.train.pairs) CHECK(p.label != "none");

    CHECK_THROWS_AS(generate_toy_dataset([&] {
                        ToySpec s = spec;
                        s.train_size = 0;
                        return s;
                    }()),
                    ConfigError);
    CHECK_THROWS_AS(generate_toy_dataset([&] {
                        ToySpec s = spec;
                        s.changed_ratio = 1.5;
                        return s;
                    }()),
                    ConfigError);
}

TEST_CASE("export and reload round-trips pairs, captions and labels") {
    ToySpec spec;
    spec.train_size = 4;
    spec.val_size = 2;
    spec.test_size = 3;
    spec.seed = 17;
    Dataset ds = generate_toy_dataset(spec);

    const fs::path root = fresh_dir("roundtrip");
    export_dataset(ds, root);
    CHECK(fs::exists(root / "captions.json"));
    CHECK(fs::exists(root / "images/train/A/train_000000.png"));
    CHECK(fs::exists(root / "images/test/B/test_000002.png"));

    Dataset back = load_levir_cc(root);
    REQUIRE(back.train.pairs.size() == 4);
    REQUIRE(back.val.pairs.size() == 2);
    REQUIRE(back.test.pairs.size() == 3);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(pixels_equal(back.train.pairs[i].before, ds.train.pairs[i].before));
        CHECK(pixels_equal(back.train.pairs[i].after, ds.train.pairs[i].after));
        CHECK(back.train.pairs[i].captions == ds.train.pairs[i].captions);
        CHECK(back.train.pairs[i].label == ds.train.pairs[i].label);
    }
    // reloaded vocabulary comes from the train captions; every train token known
    for (const CaptionedPair& p : back.train.pairs)
        for (const auto& cap : p.captions)
            for (const std::string& w : cap) CHECK(back.vocab.id(w) != Vocabulary::kUnk);
    fs::remove_all(root);
}

TEST_CASE("the checked-in fixture loads with exact caption alignment") {
    const fs::path root = fs::path(DIFFCAP_TEST_DATA_DIR) / "levir_fixture";
    Dataset ds = load_levir_cc(root);
    REQUIRE(ds.train.pairs.size() == 3);
    CHECK(ds.val.pairs.empty());
    CHECK(ds.test.pairs.empty());

    REQUIRE(ds.train.pairs[0].captions.size() == 5);
    REQUIRE(ds.train.pairs[1].captions.size() == 5);
    REQUIRE(ds.train.pairs[2].captions.size() == 2);  // kept despite the warning
    CHECK(ds.train.pairs[0].captions[0] ==
          tokenize("a building appears on the bare land"));
    CHECK(ds.train.pairs[0].captions[1][1] == "gray");
    CHECK(ds.train.pairs[0].captions[4] == std::vector<std::string>{"one", "building",
                                                                    "appears"});
    CHECK(ds.train.pairs[1].captions[2] ==
          std::vector<std::string>{"the", "road", "crosses", "the", "scene"});
    CHECK(ds.train.pairs[2].captions[1] ==
          std::vector<std::string>{"nothing", "has", "changed"});
    CHECK(ds.train.pairs[0].label == "changed");
    CHECK(ds.train.pairs[2].label == "unchanged");

    // pixels written by an independent encoder decode to the known formula
    for (int i = 0; i < 3; ++i) {
        const Image& bef = ds.train.pairs[std::size_t(i)].before;
        const Image& aft = ds.train.pairs[std::size_t(i)].after;
        REQUIRE(bef.width == 8);
        REQUIRE(bef.height == 8);
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                CHECK(bef.at(x, y, 0) == (x * 37 + y * 11 + i * 5) % 256);
                CHECK(bef.at(x, y, 1) == (x * 3 + y * 7 + i * 13) % 256);
                CHECK(bef.at(x, y, 2) == (i * 40 + x + y) % 256);
                CHECK(aft.at(x, y, 0) == (x * 37 + y * 11 + i * 5 + 100) % 256);
                CHECK(aft.at(x, y, 2) == (i * 40 + x + y + 9) % 256);
            }
    }

    // first-occurrence vocabulary ids from the train captions
    CHECK(ds.vocab.id("a") == 4);
    CHECK(ds.vocab.id("building") == 5);
    CHECK(ds.vocab.id("appears") == 6);
    CHECK(ds.vocab.id("on") == 7);
    CHECK(ds.vocab.id("the") == 8);
}

TEST_CASE("loader failure modes") {
    SUBCASE("empty root") {
        const fs::path root = fresh_dir("empty");
        CHECK_THROWS_AS(load_levir_cc(root), DataError);
        fs::remove_all(root);
    }
    SUBCASE("malformed index") {
        const fs::path root = fresh_dir("badjson");
        write_file(root / "captions.json", "{not json");
        CHECK_THROWS_AS(load_levir_cc(root), DataError);
        fs::remove_all(root);
    }
    SUBCASE("missing image file") {
        const fs::path root = fresh_dir("noimage");
        Json index;
        index["images"] = Json::array(
            {Json{{"filename", "gone.png"},
                  {"split", "train"},
                  {"sentences", Json::array({Json{{"raw", "a building appears"}}})}}});
        write_file(root / "captions.json", index.dump());
        CHECK_THROWS_AS(load_levir_cc(root), DataError);
        fs::remove_all(root);
    }
    SUBCASE("record without captions") {
        const fs::path root = fresh_dir("nocaps");
        Json index;
        index["images"] = Json::array({Json{{"filename", "x.png"},
                                            {"split", "train"},
                                            {"sentences", Json::array()}}});
        write_file(root / "captions.json", index.dump());
        CHECK_THROWS_AS(load_levir_cc(root), DataError);
        fs::remove_all(root);
    }
    SUBCASE("unknown split name") {
        const fs::path root = fresh_dir("badsplit");
        Json index;
        index["images"] = Json::array(
            {Json{{"filename", "x.png"},
                  {"split", "dev"},
                  {"sentences", Json::array({Json{{"raw", "words"}}})}}});
        write_file(root / "captions.json", index.dump());
        CHECK_THROWS_AS(load_levir_cc(root), DataError);
        fs::remove_all(root);
    }
}
