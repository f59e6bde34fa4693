// Command-line front end: datagen | train | sample | eval | inspect-schedule.
// One flat-key config file drives every subcommand; --set overrides single
// keys, and each run leaves a manifest recording the effective config, the
// seeds, and content hashes of its inputs and outputs.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "appconfig.hpp"
#include "diffcap/datasets.hpp"
#include "diffcap/errors.hpp"
#include "diffcap/imageio.hpp"
#include "diffcap/io.hpp"
#include "diffcap/metrics.hpp"
#include "diffcap/sample.hpp"
#include "diffcap/train.hpp"
#include "diffcap/vision.hpp"

namespace fs = std::filesystem;
using namespace diffcap;

namespace {

struct Common {
    std::string config;
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config, "config file (key = value lines)");
    cmd->add_option("-s,--set", c.sets, "override one key, e.g. --set denoiser.ssa_depth=4")
        ->type_name("KEY=VALUE");
}

AppConfig load_config(const Common& c) {
    AppConfig cfg;
    if (!c.config.empty()) cfg.load_file(c.config);
    cfg.apply_sets(c.sets);
    return cfg;
}

void stamp_common(ManifestBuilder& m, const Common& c, const AppConfig& cfg) {
    m.set_config(cfg.snapshot());
    if (!c.config.empty()) m.add_input("config", c.config);
}

const DatasetSplit& pick_split(const Dataset& ds, const std::string& name) {
    if (name == "train") return ds.train;
    if (name == "val") return ds.val;
    if (name == "test") return ds.test;
    throw ConfigError("split must be train, val or test, got \"" + name + "\"");
}

BottleneckBackboneSpec imported_spec(const DataConfig& d) {
    return d.backbone_spec == "tiny" ? BottleneckBackboneSpec::tiny()
                                     : BottleneckBackboneSpec::resnet101();
}

// ---------------------------------------------------------------- datagen --

struct DatagenArgs {
    Common common;
    std::string out;
};

int run_datagen(const DatagenArgs& a) {
    AppConfig cfg = load_config(a.common);
    if (cfg.data.kind != "toy")
        throw ConfigError("datagen renders the toy dataset; set data.kind = toy");
    const fs::path out = a.out.empty() ? fs::path(cfg.data.root) : fs::path(a.out);

    ToySpec spec;
    spec.train_size = cfg.data.train_size;
    spec.val_size = cfg.data.val_size;
    spec.test_size = cfg.data.test_size;
    spec.image_size = cfg.data.image_size;
    spec.changed_ratio = cfg.data.changed_ratio;
    spec.seed = cfg.data.seed;

    Dataset ds = generate_toy_dataset(spec);
    export_dataset(ds, out);

    ManifestBuilder m("datagen");
    stamp_common(m, a.common, cfg);
    m.set_seed(spec.seed);
    m.add_note("args", Json{{"out", out.string()}});
    m.add_note("pairs", Json{{"train", ds.train.pairs.size()},
                             {"val", ds.val.pairs.size()},
                             {"test", ds.test.pairs.size()}});
    std::vector<std::string> rel;
    for (const auto& e : fs::recursive_directory_iterator(out))
        if (e.is_regular_file() && e.path().filename() != "manifest.json")
            rel.push_back(fs::relative(e.path(), out).generic_string());
    std::sort(rel.begin(), rel.end());
    for (const std::string& r : rel) m.add_output(r, out / r);
    m.write(out / "manifest.json");

    std::cout << "wrote " << ds.train.pairs.size() + ds.val.pairs.size() + ds.test.pairs.size()
              << " pairs under " << out.string() << "\n";
    return 0;
}

// ------------------------------------------------------------------ train --

struct TrainArgs {
    Common common;
    std::string data;
    std::string out;
};

int run_train(const TrainArgs& a) {
    AppConfig cfg = load_config(a.common);
    cfg.validate();
    cfg.train.T = cfg.schedule.T;
    const fs::path data_root = a.data.empty() ? fs::path(cfg.data.root) : fs::path(a.data);
    const fs::path out(a.out);

    const NoiseSchedule sched = NoiseSchedule::build(cfg.schedule);
    Dataset ds = load_levir_cc(data_root, cfg.data.kind == "levir");

    ParameterStore store;     // trainable bundle
    ParameterStore bb_store;  // frozen toy-backbone weights live apart so the
                              // optimizer cannot decay them
    std::unique_ptr<ImportedBackbone> imported;

    DenoiserConfig dcfg = cfg.denoiser;
    const bool finetune = cfg.data.finetune_backbone;
    if (cfg.data.backbone == "toy") {
        RngStream bb_rng(mix_seed(cfg.train.seed, fnv1a64("backbone")));
        ToyBackbone::init_params(finetune ? store : bb_store, bb_rng);
        dcfg.hw = ToyBackbone::kOutTokens;
        dcfg.c = ToyBackbone::kOutChannels;
    } else {
        if (cfg.data.backbone_archive.empty())
            throw ConfigError("data.backbone = imported needs data.backbone_archive");
        imported = std::make_unique<ImportedBackbone>(
            ImportedBackbone::load(cfg.data.backbone_archive, imported_spec(cfg.data)));
    }

    // one feature pair per image pair, shared by all of its captions
    std::vector<TrainExample> examples;
    std::vector<std::vector<Matrix>> planes_a, planes_b;  // finetune path
    std::vector<std::size_t> example_pair;
    for (const CaptionedPair& p : ds.train.pairs) {
        Matrix idi;
        if (finetune) {
            planes_a.push_back(to_planes(p.before));
            planes_b.push_back(to_planes(p.after));
        } else {
            FeatureMap fb, fa;
            if (imported) {
                fb = imported->extract(to_planes(p.before));
                fa = imported->extract(to_planes(p.after));
            } else {
                fb = ToyBackbone::extract(to_planes(p.before), bb_store);
                fa = ToyBackbone::extract(to_planes(p.after), bb_store);
            }
            if (dcfg.hw != fb.tokens.rows() || dcfg.c != fb.tokens.cols()) {
                dcfg.hw = static_cast<int>(fb.tokens.rows());
                dcfg.c = static_cast<int>(fb.tokens.cols());
            }
            idi = residual_map(fb, fa);
        }
        const std::size_t pair_index = finetune ? planes_a.size() - 1 : 0;
        for (const auto& cap : p.captions) {
            TrainExample ex;
            ex.ids = ds.vocab.encode(cap, dcfg.n);
            ex.idi = idi;
            examples.push_back(std::move(ex));
            example_pair.push_back(pair_index);
        }
    }

    RngStream init_rng(mix_seed(cfg.train.seed, fnv1a64("init")));
    init_caption_model(ds.vocab.size(), dcfg, store, init_rng);
    Denoiser den(dcfg, store);

    IdiBuilder builder;
    if (finetune) {
        builder = [&](Tape& t, std::size_t i) {
            const std::size_t p = example_pair[i];
            Var fb = ToyBackbone::tokens_var(t, planes_a[p], store, /*trainable=*/true);
            Var fa = ToyBackbone::tokens_var(t, planes_b[p], store, /*trainable=*/true);
            return t.sub(fb, fa);
        };
    }

    fs::create_directories(out);
    std::ofstream log(out / "train_log.jsonl");
    if (!log) throw DataError("cannot write " + (out / "train_log.jsonl").string());
    const TrainResult res = train_loop(examples, cfg.train, den, store, sched, &log, builder);
    log.close();

    std::vector<NamedTensor> tensors;
    for (const std::string& name : store.names()) tensors.push_back({name, store.at(name).value});
    for (const std::string& name : bb_store.names())
        tensors.push_back({name, bb_store.at(name).value});
    save_archive(out / "checkpoint.dcta", tensors);
    ds.vocab.save(out / "vocab.txt");
    sched.save(out / "schedule.txt");

    ManifestBuilder m("train");
    stamp_common(m, a.common, cfg);
    m.set_seed(cfg.train.seed);
    m.add_note("args", Json{{"data", data_root.string()}, {"out", out.string()}});
    m.add_input("captions", data_root / "captions.json");
    if (imported) m.add_input("backbone_archive", cfg.data.backbone_archive);
    m.add_note("steps", res.steps);
    m.add_note("final_loss", Json{{"l_T", res.last.l_T},
                                  {"l_mse", res.last.l_mse},
                                  {"l_round", res.last.l_round},
                                  {"total", res.last.total}});
    m.add_note("examples", examples.size());
    m.add_note("vocab_size", ds.vocab.size());
    m.add_output("checkpoint", out / "checkpoint.dcta");
    m.add_output("vocab", out / "vocab.txt");
    m.add_output("schedule", out / "schedule.txt");
    m.add_output("log", out / "train_log.jsonl");
    m.write(out / "manifest.json");

    std::cout << "trained " << res.steps << " steps; final total loss " << res.last.total << "\n";
    return 0;
}

// ----------------------------------------------------------------- sample --

struct SampleArgs {
    Common common;
    std::string checkpoint;
    std::string data;
    std::string split = "test";
    std::string out;
    std::string trace;
    std::uint64_t seed = 0;
    int limit = 0;
    bool variance_scaled_noise = false;
    bool clamp = false;
};

int run_sample(const SampleArgs& a) {
    AppConfig cfg = load_config(a.common);
    cfg.validate();
    const fs::path ckpt(a.checkpoint);
    const fs::path data_root = a.data.empty() ? fs::path(cfg.data.root) : fs::path(a.data);

    // schedule and vocabulary travel with the checkpoint; the config only has
    // to describe the model dimensions
    const NoiseSchedule sched = NoiseSchedule::load(ckpt / "schedule.txt");
    const Vocabulary vocab = Vocabulary::load(ckpt / "vocab.txt");
    ParameterStore store;
    load_parameters(ckpt / "checkpoint.dcta", store);

    DenoiserConfig dcfg = cfg.denoiser;
    std::unique_ptr<ImportedBackbone> imported;
    if (cfg.data.backbone == "toy") {
        if (!ToyBackbone::has_params(store))
            throw ConfigError("checkpoint carries no toy-backbone weights");
        dcfg.hw = ToyBackbone::kOutTokens;
        dcfg.c = ToyBackbone::kOutChannels;
    } else {
        if (cfg.data.backbone_archive.empty())
            throw ConfigError("data.backbone = imported needs data.backbone_archive");
        imported = std::make_unique<ImportedBackbone>(
            ImportedBackbone::load(cfg.data.backbone_archive, imported_spec(cfg.data)));
    }
    if (!store.contains("emb/table"))
        throw ConfigError("checkpoint lacks the embedding table");
    const Matrix& table = store.at("emb/table").value;
    if (table.rows() != vocab.size() || table.cols() != dcfg.d)
        throw ConfigError("checkpoint embedding table does not match the vocabulary/config");
    for (const std::string& name : Denoiser::param_names(dcfg))
        if (!store.contains(name))
            throw ConfigError("checkpoint does not match the denoiser config (missing " + name +
                              ")");

    Dataset ds = load_levir_cc(data_root, cfg.data.kind == "levir");
    const DatasetSplit& split = pick_split(ds, a.split);
    if (split.pairs.empty()) throw DataError("split " + a.split + " has no pairs");
    const std::size_t count = a.limit > 0
                                  ? std::min<std::size_t>(split.pairs.size(),
                                                          static_cast<std::size_t>(a.limit))
                                  : split.pairs.size();

    std::vector<Matrix> idis;
    std::vector<std::uint64_t> keys;
    std::vector<std::string> names;
    for (std::size_t i = 0; i < count; ++i) {
        const CaptionedPair& p = split.pairs[i];
        FeatureMap fb, fa;
        if (imported) {
            fb = imported->extract(to_planes(p.before));
            fa = imported->extract(to_planes(p.after));
        } else {
            fb = ToyBackbone::extract(to_planes(p.before), store);
            fa = ToyBackbone::extract(to_planes(p.after), store);
        }
        idis.push_back(residual_map(fb, fa));
        keys.push_back(fnv1a64(p.name));
        names.push_back(p.name);
    }
    if (imported && !idis.empty()) {
        dcfg.hw = static_cast<int>(idis[0].rows());
        dcfg.c = static_cast<int>(idis[0].cols());
    }

    Denoiser den(dcfg, store);
    SampleOptions opt;
    opt.variance_scaled_noise = a.variance_scaled_noise;
    opt.clamp_x0 = a.clamp;
    opt.record_trace = !a.trace.empty();
    const std::vector<SampleResult> results =
        batch_sample(idis, keys, den, store, vocab, sched, a.seed, opt);

    const fs::path out(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream os(out);
    if (!os) throw DataError("cannot write " + out.string());
    for (std::size_t i = 0; i < results.size(); ++i)
        os << names[i] << '\t' << results[i].caption << '\n';
    os.close();

    if (!a.trace.empty()) {
        std::ofstream ts(a.trace);
        if (!ts) throw DataError("cannot write " + a.trace);
        ts << "pair,t,norm\n";
        char buf[64];
        for (std::size_t i = 0; i < results.size(); ++i)
            for (const auto& [t, norm] : results[i].trace) {
                std::snprintf(buf, sizeof(buf), "%.17g", norm);
                ts << names[i] << ',' << t << ',' << buf << '\n';
            }
    }

    ManifestBuilder m("sample");
    stamp_common(m, a.common, cfg);
    m.set_seed(a.seed);
    m.add_note("args", Json{{"checkpoint", ckpt.string()},
                            {"data", data_root.string()},
                            {"split", a.split},
                            {"limit", a.limit},
                            {"variance_scaled_noise", a.variance_scaled_noise},
                            {"clamp", a.clamp},
                            {"trace", a.trace},
                            {"out", out.string()}});
    m.add_input("checkpoint", ckpt / "checkpoint.dcta");
    m.add_input("vocab", ckpt / "vocab.txt");
    m.add_input("schedule", ckpt / "schedule.txt");
    m.add_input("captions", data_root / "captions.json");
    m.add_note("n_items", results.size());
    m.add_output("captions_out", out);
    if (!a.trace.empty()) m.add_output("trace", a.trace);
    m.write(out.string() + ".manifest.json");

    std::cout << "sampled " << results.size() << " captions -> " << out.string() << "\n";
    return 0;
}

// ------------------------------------------------------------------- eval --

struct EvalArgs {
    std::string candidates;
    std::string references;
    std::string split = "test";
    std::string out;
};

int run_eval(const EvalArgs& a) {
    // references come straight from the caption index; images are not needed
    Json index;
    try {
        index = Json::parse(read_file(a.references));
    } catch (const Json::exception& e) {
        throw DataError("cannot parse " + a.references + ": " + e.what());
    }
    if (!index.contains("images") || !index["images"].is_array())
        throw DataError(a.references + " lacks an images array");
    std::map<std::string, std::vector<Tokens>> refs_by_name;
    for (const Json& rec : index["images"]) {
        if (!rec.contains("filename") || !rec.contains("split") || !rec.contains("sentences"))
            throw DataError("caption record needs filename, split and sentences");
        if (rec["split"].get<std::string>() != a.split) continue;
        const std::string name = fs::path(rec["filename"].get<std::string>()).stem().string();
        if (refs_by_name.count(name)) throw DataError("duplicate caption record for " + name);
        std::vector<Tokens> refs;
        for (const Json& s : rec["sentences"]) {
            if (!s.contains("raw")) throw DataError("sentence without raw text in " + name);
            refs.push_back(tokenize(s["raw"].get<std::string>()));
        }
        if (refs.empty()) throw DataError("pair " + name + " lists no captions");
        refs_by_name.emplace(name, std::move(refs));
    }

    std::istringstream in(read_file(a.candidates));
    std::vector<Tokens> cands;
    std::vector<std::vector<Tokens>> refs;
    std::vector<std::string> seen;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError("candidate line without a tab separator: \"" + line + "\"");
        const std::string name = line.substr(0, tab);
        const auto it = refs_by_name.find(name);
        if (it == refs_by_name.end())
            throw DataError("no reference entry for pair \"" + name + "\" in split " + a.split);
        for (const std::string& s : seen)
            if (s == name) throw DataError("duplicate candidate for pair \"" + name + "\"");
        seen.push_back(name);
        cands.push_back(tokenize(line.substr(tab + 1)));
        refs.push_back(it->second);
    }

    Json report;
    report["bleu4"] = bleu4(cands, refs);
    report["rougeL"] = rouge_l_mean(cands, refs);
    report["n_items"] = cands.size();
    const std::string text = report.dump(2) + "\n";
    std::cout << text;
    if (!a.out.empty()) {
        write_file(a.out, text);
        ManifestBuilder m("eval");
        m.set_seed(0);
        m.add_note("args", Json{{"candidates", a.candidates},
                                {"references", a.references},
                                {"split", a.split},
                                {"out", a.out}});
        m.add_input("candidates", a.candidates);
        m.add_input("references", a.references);
        m.add_note("report", report);
        m.add_output("report", a.out);
        m.write(a.out + ".manifest.json");
    }
    return 0;
}

// ------------------------------------------------------- inspect-schedule --

struct InspectArgs {
    Common common;
    std::string out;
};

int run_inspect(const InspectArgs& a) {
    AppConfig cfg = load_config(a.common);
    const NoiseSchedule sched = NoiseSchedule::build(cfg.schedule);
    const fs::path out(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream os(out);
    if (!os) throw DataError("cannot write " + out.string());
    os << "t,alpha,alpha_bar,posterior_variance\n";
    char buf[160];
    for (int t = 1; t <= sched.T(); ++t) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", t, sched.alpha(t),
                      sched.alpha_bar(t), sched.posterior_variance(t));
        os << buf;
    }
    os.close();

    ManifestBuilder m("inspect-schedule");
    stamp_common(m, a.common, cfg);
    m.set_seed(0);
    m.add_note("args", Json{{"out", out.string()}});
    m.add_note("T", sched.T());
    m.add_output("csv", out);
    m.write(out.string() + ".manifest.json");

    std::cout << "wrote " << sched.T() << " schedule rows -> " << out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"conditional text-diffusion change captioning"};
    app.require_subcommand(1);

    DatagenArgs dg;
    auto* c_dg = app.add_subcommand("datagen", "render the synthetic bi-temporal dataset");
    add_common(c_dg, dg.common);
    c_dg->add_option("-o,--out", dg.out, "output directory (default: data.root)");

    TrainArgs tr;
    auto* c_tr = app.add_subcommand("train", "train the conditional denoiser");
    add_common(c_tr, tr.common);
    c_tr->add_option("--data", tr.data, "dataset root (default: data.root)");
    c_tr->add_option("-o,--out", tr.out, "checkpoint/log directory")->required();

    SampleArgs sm;
    auto* c_sm = app.add_subcommand("sample", "generate captions from a checkpoint");
    add_common(c_sm, sm.common);
    c_sm->add_option("--checkpoint", sm.checkpoint, "directory written by train")->required();
    c_sm->add_option("--data", sm.data, "dataset root (default: data.root)");
    c_sm->add_option("--split", sm.split, "train | val | test (default test)");
    c_sm->add_option("--limit", sm.limit, "caption only the first N pairs (0 = all)");
    c_sm->add_option("--seed", sm.seed, "sampling seed");
    c_sm->add_flag("--variance-scaled-noise", sm.variance_scaled_noise,
                   "scale reverse noise by the variance instead of its square root");
    c_sm->add_flag("--clamp", sm.clamp, "snap each x0 prediction to the nearest embedding row");
    c_sm->add_option("--trace", sm.trace, "write per-step latent norms to this CSV");
    c_sm->add_option("-o,--out", sm.out, "captions file (pair id TAB caption)")->required();

    EvalArgs ev;
    auto* c_ev = app.add_subcommand("eval", "score a captions file against references");
    c_ev->add_option("--candidates", ev.candidates, "pair id TAB caption lines")->required();
    c_ev->add_option("--references", ev.references, "caption index JSON")->required();
    c_ev->add_option("--split", ev.split, "reference split (default test)");
    c_ev->add_option("-o,--out", ev.out, "write the JSON report here as well");

    InspectArgs in;
    auto* c_in = app.add_subcommand("inspect-schedule", "dump the noise schedule as CSV");
    add_common(c_in, in.common);
    c_in->add_option("-o,--out", in.out, "CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;  // bad flags are config errors
    }

    try {
        if (c_dg->parsed()) return run_datagen(dg);
        if (c_tr->parsed()) return run_train(tr);
        if (c_sm->parsed()) return run_sample(sm);
        if (c_ev->parsed()) return run_eval(ev);
        if (c_in->parsed()) return run_inspect(in);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
