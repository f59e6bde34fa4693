#include "appconfig.hpp"

#include <charconv>
#include <functional>
#include <sstream>

#include "diffcap/errors.hpp"

namespace diffcap {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

long long to_int(const std::string& key, const std::string& v) {
    long long out = 0;
    const char* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || p != end)
        throw ConfigError("key " + key + ": \"" + v + "\" is not an integer");
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const char* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || p != end)
        throw ConfigError("key " + key + ": \"" + v + "\" is not an unsigned integer");
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("key " + key + ": \"" + v + "\" is not a number");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("key " + key + ": \"" + v + "\" is not a bool (true/false)");
}

}  // namespace

void AppConfig::apply(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    using Setter = std::function<void(AppConfig&, const std::string&, const std::string&)>;
    struct Entry {
        const char* key;
        Setter set;
    };
    // The one place new config keys get added; snapshot() below must list
    // the same set.
    static const std::vector<Entry> registry = {
        {"schedule.kind",
         [](AppConfig& c, const std::string&, const std::string& v) {
             c.schedule.kind = schedule_kind_from_string(v);
         }},
        {"schedule.T",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.schedule.T = static_cast<int>(to_int(k, v));
         }},
        {"schedule.alpha0",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.schedule.alpha0 = to_double(k, v);
         }},
        {"schedule.sqrt_offset",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.schedule.sqrt_offset = to_double(k, v);
         }},
        {"schedule.beta_min",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.schedule.beta_min = to_double(k, v);
         }},
        {"schedule.beta_max",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.schedule.beta_max = to_double(k, v);
         }},
        {"denoiser.d_model",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.denoiser.d_model = static_cast<int>(to_int(k, v));
         }},
        {"denoiser.heads",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.denoiser.heads = static_cast<int>(to_int(k, v));
         }},
        {"denoiser.ssa_depth",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.denoiser.ssa_depth = static_cast<int>(to_int(k, v));
         }},
        {"denoiser.ffn_width",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.denoiser.ffn_width = static_cast<int>(to_int(k, v));
         }},
        {"denoiser.dropout",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.denoiser.dropout = to_double(k, v);
         }},
        {"denoiser.n",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.denoiser.n = static_cast<int>(to_int(k, v));
         }},
        {"denoiser.d",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.denoiser.d = static_cast<int>(to_int(k, v));
         }},
        {"train.epochs",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.train.epochs = static_cast<int>(to_int(k, v));
         }},
        {"train.batch_size",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.train.batch_size = static_cast<int>(to_int(k, v));
         }},
        {"train.lr",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.train.lr = to_double(k, v);
         }},
        {"train.weight_decay",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.train.weight_decay = to_double(k, v);
         }},
        {"train.clip_norm",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.train.clip_norm = to_double(k, v);
         }},
        {"train.seed",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.train.seed = to_u64(k, v);
         }},
        {"train.log_every",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.train.log_every = static_cast<int>(to_int(k, v));
         }},
        {"train.max_steps",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.train.max_steps = static_cast<int>(to_int(k, v));
         }},
        {"train.warmup_steps",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.train.warmup_steps = static_cast<int>(to_int(k, v));
         }},
        {"train.lr_decay",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.train.lr_decay = to_double(k, v);
         }},
        {"data.kind",
         [](AppConfig& c, const std::string&, const std::string& v) { c.data.kind = v; }},
        {"data.root",
         [](AppConfig& c, const std::string&, const std::string& v) { c.data.root = v; }},
        {"data.train_size",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.data.train_size = static_cast<int>(to_int(k, v));
         }},
        {"data.val_size",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.data.val_size = static_cast<int>(to_int(k, v));
         }},
        {"data.test_size",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.data.test_size = static_cast<int>(to_int(k, v));
         }},
        {"data.image_size",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.data.image_size = static_cast<int>(to_int(k, v));
         }},
        {"data.changed_ratio",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.data.changed_ratio = to_double(k, v);
         }},
        {"data.seed",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.data.seed = to_u64(k, v);
         }},
        {"data.backbone",
         [](AppConfig& c, const std::string&, const std::string& v) { c.data.backbone = v; }},
        {"data.backbone_archive",
         [](AppConfig& c, const std::string&, const std::string& v) {
             c.data.backbone_archive = v;
         }},
        {"data.backbone_spec",
         [](AppConfig& c, const std::string&, const std::string& v) {
             c.data.backbone_spec = v;
         }},
        {"data.finetune_backbone",
         [](AppConfig& c, const std::string& k, const std::string& v) {
             c.data.finetune_backbone = to_bool(k, v);
         }},
    };
    for (const Entry& e : registry) {
        if (key == e.key) {
            e.set(*this, key, v);
            return;
        }
    }
    throw ConfigError("unknown config key \"" + key + "\"");
}

void AppConfig::load_file(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                              ": expected `key = value`");
        apply(trim(line.substr(0, eq)), line.substr(eq + 1));
    }
}

void AppConfig::apply_sets(const std::vector<std::string>& sets) {
    for (const std::string& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set needs key=value, got \"" + s + "\"");
        apply(trim(s.substr(0, eq)), s.substr(eq + 1));
    }
}

void AppConfig::validate() const {
    if (data.kind != "toy" && data.kind != "levir")
        throw ConfigError("data.kind must be toy or levir");
    if (data.backbone != "toy" && data.backbone != "imported")
        throw ConfigError("data.backbone must be toy or imported");
    if (data.backbone_spec != "resnet101" && data.backbone_spec != "tiny")
        throw ConfigError("data.backbone_spec must be resnet101 or tiny");
    if (data.backbone == "imported" && data.finetune_backbone)
        throw ConfigError("the imported backbone is inference-only; fine-tuning needs data.backbone = toy");
    denoiser.validate();
}

Json AppConfig::snapshot() const {
    Json j;
    j["schedule.kind"] = to_string(schedule.kind);
    j["schedule.T"] = schedule.T;
    j["schedule.alpha0"] = schedule.alpha0;
    j["schedule.sqrt_offset"] = schedule.sqrt_offset;
    j["schedule.beta_min"] = schedule.beta_min;
    j["schedule.beta_max"] = schedule.beta_max;
    j["denoiser.d_model"] = denoiser.d_model;
    j["denoiser.heads"] = denoiser.heads;
    j["denoiser.ssa_depth"] = denoiser.ssa_depth;
    j["denoiser.ffn_width"] = denoiser.ffn_width;
    j["denoiser.dropout"] = denoiser.dropout;
    j["denoiser.n"] = denoiser.n;
    j["denoiser.d"] = denoiser.d;
    j["train.epochs"] = train.epochs;
    j["train.batch_size"] = train.batch_size;
    j["train.lr"] = train.lr;
    j["train.weight_decay"] = train.weight_decay;
    j["train.clip_norm"] = train.clip_norm;
    j["train.seed"] = train.seed;
    j["train.log_every"] = train.log_every;
    j["train.max_steps"] = train.max_steps;
    j["train.warmup_steps"] = train.warmup_steps;
    j["train.lr_decay"] = train.lr_decay;
    j["data.kind"] = data.kind;
    j["data.root"] = data.root;
    j["data.train_size"] = data.train_size;
    j["data.val_size"] = data.val_size;
    j["data.test_size"] = data.test_size;
    j["data.image_size"] = data.image_size;
    j["data.changed_ratio"] = data.changed_ratio;
    j["data.seed"] = data.seed;
    j["data.backbone"] = data.backbone;
    j["data.backbone_archive"] = data.backbone_archive;
    j["data.backbone_spec"] = data.backbone_spec;
    j["data.finetune_backbone"] = data.finetune_backbone;
    return j;
}

}  // namespace diffcap
