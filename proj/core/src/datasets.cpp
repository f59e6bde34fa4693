#include "diffcap/datasets.hpp"

#include <cstdio>
#include <iostream>

#include "diffcap/errors.hpp"
#include "diffcap/io.hpp"

namespace fs = std::filesystem;

namespace diffcap {

std::string to_string(ChangeType t) {
    switch (t) {
        case ChangeType::None: return "none";
        case ChangeType::AddBuilding: return "add_building";
        case ChangeType::AddRoad: return "add_road";
        case ChangeType::RemoveVegetation: return "remove_vegetation";
    }
    throw ConfigError("unknown change type");
}

const std::vector<std::string>& toy_caption_templates() {
    static const std::vector<std::string> tmpl = {
        "the scene is the same as before",
        "a building appears on the bare land",
        "a road appears across the bare land",
        "the vegetation is removed from the scene",
    };
    return tmpl;
}

namespace {

constexpr int kMinToySize = 16;  // largest change shape must fit with slack

Image textured_background(int n, RngStream& rng) {
    Image img;
    img.width = img.height = n;
    img.rgb.resize(std::size_t(3) * n * n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            img.at(x, y, 0) = std::uint8_t(rng.uniform_int(125, 175));
            img.at(x, y, 1) = std::uint8_t(rng.uniform_int(105, 150));
            img.at(x, y, 2) = std::uint8_t(rng.uniform_int(80, 120));
        }
    return img;
}

}  // namespace

ToyRender render_toy_pair(int image_size, ChangeType type, RngStream& rng) {
    if (image_size < kMinToySize)
        throw ConfigError("toy image size must be at least " + std::to_string(kMinToySize));
    ToyRender out;
    out.type = type;
    out.caption = toy_caption_templates()[static_cast<std::size_t>(type)];
    out.before = textured_background(image_size, rng);
    out.after = out.before;

    switch (type) {
        case ChangeType::None:
            break;
        case ChangeType::AddBuilding: {
            const int s = rng.uniform_int(4, 10);
            const int x0 = rng.uniform_int(0, image_size - s);
            const int y0 = rng.uniform_int(0, image_size - s);
            const auto gray = std::uint8_t(rng.uniform_int(215, 235));
            for (int y = y0; y < y0 + s; ++y)
                for (int x = x0; x < x0 + s; ++x)
                    for (int c = 0; c < 3; ++c) out.after.at(x, y, c) = gray;
            out.region = {x0, y0, x0 + s, y0 + s, true};
            break;
        }
        case ChangeType::AddRoad: {
            const bool horizontal = rng.uniform_int(0, 1) == 0;
            const int wd = rng.uniform_int(2, 4);
            const int pos = rng.uniform_int(0, image_size - wd);
            out.region = horizontal ? ChangeRegion{0, pos, image_size, pos + wd, true}
                                    : ChangeRegion{pos, 0, pos + wd, image_size, true};
            for (int y = out.region.y0; y < out.region.y1; ++y)
                for (int x = out.region.x0; x < out.region.x1; ++x) {
                    const auto v = std::uint8_t(rng.uniform_int(30, 50));
                    for (int c = 0; c < 3; ++c) out.after.at(x, y, c) = v;
                }
            break;
        }
        case ChangeType::RemoveVegetation: {
            // the patch exists only before the change
            const int w = rng.uniform_int(4, 10);
            const int h = rng.uniform_int(4, 10);
            const int x0 = rng.uniform_int(0, image_size - w);
            const int y0 = rng.uniform_int(0, image_size - h);
            for (int y = y0; y < y0 + h; ++y)
                for (int x = x0; x < x0 + w; ++x) {
                    out.before.at(x, y, 0) = std::uint8_t(rng.uniform_int(50, 70));
                    out.before.at(x, y, 1) = std::uint8_t(rng.uniform_int(120, 160));
                    out.before.at(x, y, 2) = std::uint8_t(rng.uniform_int(40, 60));
                }
            out.region = {x0, y0, x0 + w, y0 + h, true};
            break;
        }
    }
    return out;
}

namespace {

std::string pair_stem(const std::string& split, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "_%06zu", index);
    return split + buf;
}

DatasetSplit make_toy_split(const std::string& name, int count, const ToySpec& spec) {
    RngStream rng(mix_seed(spec.seed, fnv1a64("toy/" + name)));
    DatasetSplit split{name, {}};
    split.pairs.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        ChangeType type = ChangeType::None;
        if (rng.uniform() < spec.changed_ratio)
            type = static_cast<ChangeType>(1 + rng.uniform_int(0, 2));
        ToyRender r = render_toy_pair(spec.image_size, type, rng);
        CaptionedPair pair;
        pair.name = pair_stem(name, static_cast<std::size_t>(i));
        pair.before = std::move(r.before);
        pair.after = std::move(r.after);
        pair.captions = {tokenize(r.caption)};
        pair.label = to_string(type);
        split.pairs.push_back(std::move(pair));
    }
    return split;
}

}  // namespace

Dataset generate_toy_dataset(const ToySpec& spec) {
    if (spec.train_size < 1 || spec.val_size < 1 || spec.test_size < 1)
        throw ConfigError("every split must hold at least one pair");
    if (spec.image_size < kMinToySize)
        throw ConfigError("toy image size must be at least " + std::to_string(kMinToySize));
    if (!(spec.changed_ratio >= 0.0 && spec.changed_ratio <= 1.0))
        throw ConfigError("changed_ratio must lie in [0, 1]");

    std::vector<std::vector<std::string>> corpus;
    for (const std::string& c : toy_caption_templates()) corpus.push_back(tokenize(c));
    return Dataset{make_toy_split("train", spec.train_size, spec),
                   make_toy_split("val", spec.val_size, spec),
                   make_toy_split("test", spec.test_size, spec),
                   Vocabulary::build(corpus)};
}

namespace {

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

void export_split(const DatasetSplit& split, const fs::path& root, Json& records) {
    fs::create_directories(root / "images" / split.name / "A");
    fs::create_directories(root / "images" / split.name / "B");
    for (std::size_t i = 0; i < split.pairs.size(); ++i) {
        const CaptionedPair& p = split.pairs[i];
        const std::string name =
            (p.name.empty() ? pair_stem(split.name, i) : p.name) + ".png";
        write_png(root / "images" / split.name / "A" / name, p.before);
        write_png(root / "images" / split.name / "B" / name, p.after);
        Json rec;
        rec["filename"] = name;
        rec["split"] = split.name;
        Json sentences = Json::array();
        for (const auto& cap : p.captions) sentences.push_back(Json{{"raw", join(cap)}});
        rec["sentences"] = std::move(sentences);
        rec["changeflag"] = (p.label == "none" || p.label == "unchanged") ? 0 : 1;
        if (!p.label.empty()) rec["label"] = p.label;
        records.push_back(std::move(rec));
    }
}

}  // namespace

void export_dataset(const Dataset& ds, const fs::path& root) {
    Json records = Json::array();
    export_split(ds.train, root, records);
    export_split(ds.val, root, records);
    export_split(ds.test, root, records);
    Json index;
    index["images"] = std::move(records);
    write_file(root / "captions.json", index.dump(2) + "\n");
}

Dataset load_levir_cc(const fs::path& root, bool expect_five_captions) {
    const fs::path index_path = root / "captions.json";
    if (!fs::exists(index_path))
        throw DataError("missing caption index: " + index_path.string());
    Json index;
    try {
        index = Json::parse(read_file(index_path));
    } catch (const Json::exception& e) {
        throw DataError("malformed caption index: " + std::string(e.what()));
    }
    if (!index.contains("images") || !index["images"].is_array())
        throw DataError("caption index lacks an \"images\" array");

    DatasetSplit train{"train", {}}, val{"val", {}}, test{"test", {}};
    int odd_caption_count = 0;
    for (const Json& rec : index["images"]) {
        if (!rec.contains("filename") || !rec.contains("split") || !rec.contains("sentences"))
            throw DataError("caption record needs filename, split and sentences");
        const std::string filename = rec["filename"].get<std::string>();
        const std::string split = rec["split"].get<std::string>();
        DatasetSplit* target = split == "train" ? &train
                               : split == "val" ? &val
                               : split == "test" ? &test
                                                 : nullptr;
        if (!target) throw DataError("unknown split \"" + split + "\" for " + filename);
        if (!rec["sentences"].is_array() || rec["sentences"].empty())
            throw DataError("pair " + filename + " lists no captions");
        if (rec["sentences"].size() != 5) ++odd_caption_count;

        CaptionedPair pair;
        pair.name = fs::path(filename).stem().string();
        pair.before = read_png(root / "images" / split / "A" / filename);
        pair.after = read_png(root / "images" / split / "B" / filename);
        if (pair.before.width != pair.after.width || pair.before.height != pair.after.height)
            throw DataError("pair " + filename + " images differ in shape");
        for (const Json& s : rec["sentences"]) {
            if (!s.contains("raw")) throw DataError("sentence without raw text in " + filename);
            std::vector<std::string> toks = tokenize(s["raw"].get<std::string>());
            if (toks.empty()) throw DataError("caption with no tokens in " + filename);
            pair.captions.push_back(std::move(toks));
        }
        if (rec.contains("label"))
            pair.label = rec["label"].get<std::string>();
        else if (rec.contains("changeflag"))
            pair.label = rec["changeflag"].get<int>() == 0 ? "unchanged" : "changed";
        target->pairs.push_back(std::move(pair));
    }
    if (expect_five_captions && odd_caption_count > 0)
        std::cerr << "warning: " << odd_caption_count
                  << " pair(s) do not carry exactly five captions\n";
    if (train.pairs.empty())
        throw DataError("train split is empty; cannot build a vocabulary");

    std::vector<std::vector<std::string>> corpus;
    for (const CaptionedPair& p : train.pairs)
        for (const auto& cap : p.captions) corpus.push_back(cap);
    Vocabulary vocab = Vocabulary::build(corpus);
    return Dataset{std::move(train), std::move(val), std::move(test), std::move(vocab)};
}

}  // namespace diffcap
