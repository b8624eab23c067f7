#include "eae/cli.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "eae/errors.hpp"
#include "eae/evalbench.hpp"
#include "eae/logit_perturbation.hpp"
#include "eae/random.hpp"

namespace eae::cli {

namespace {

using Json = nlohmann::ordered_json;

// Strict view over one JSON object: every key must be consumed or listed.
class Section {
public:
    Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where(), "expected an object");
    }

    void allow(std::initializer_list<const char*> keys) const {
        const std::set<std::string> ok(keys.begin(), keys.end());
        for (const auto& [k, v] : j_.items()) {
            if (!ok.count(k)) throw ConfigError(path_ + "/" + k, "unknown key");
        }
    }

    bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

    template <typename T>
    T require(const std::string& key) const {
        if (!has(key)) throw ConfigError(path_ + "/" + key, "missing required field '" + key + "'");
        return get<T>(key);
    }

    template <typename T>
    T get(const std::string& key, T fallback) const {
        return has(key) ? get<T>(key) : fallback;
    }

    template <typename T>
    std::optional<T> optional(const std::string& key) const {
        if (!has(key)) return std::nullopt;
        return get<T>(key);
    }

    Section child(const std::string& key) const { return Section(j_.at(key), path_ + "/" + key); }
    const Json& raw(const std::string& key) const { return j_.at(key); }
    std::string where(const std::string& key = {}) const { return key.empty() ? (path_.empty() ? "/" : path_) : path_ + "/" + key; }

private:
    template <typename T>
    T get(const std::string& key) const {
        try {
            return j_.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path_ + "/" + key, std::string("wrong type: ") + e.what());
        }
    }

    const Json& j_;
    std::string path_;
};

std::size_t line_of(const std::string& text, std::size_t byte) {
    byte = std::min(byte, text.size());
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

AttackSpec parse_attack(const Section& s, std::uint64_t default_seed) {
    s.allow({"kind", "epsilon", "alpha", "iterations", "random_start", "seed"});
    AttackSpec a;
    try {
        a.kind = attack_kind_from_string(s.require<std::string>("kind"));
    } catch (const ContractError& e) {
        throw ConfigError(s.where("kind"), e.what());
    }
    a.epsilon = s.require<double>("epsilon");
    const bool needs_alpha = a.kind != AttackKind::fgsm;
    a.alpha = needs_alpha ? (a.kind == AttackKind::rfgsm ? s.get<double>("alpha", a.epsilon / 2.0)
                                                          : s.require<double>("alpha"))
                          : 0.0;
    a.iterations = s.get<std::size_t>("iterations", 1);
    a.random_start = s.get<bool>("random_start", a.kind == AttackKind::pgd);
    a.seed = s.get<std::uint64_t>("seed", default_seed);
    try {
        a.validate();
    } catch (const ContractError& e) {
        throw ConfigError(s.where(), e.what());
    }
    return a;
}

TrainSpec parse_train(const Section& s, std::uint64_t seed) {
    s.allow({"method", "epochs", "batch_size", "clr_min", "clr_max", "gamma", "attack"});
    TrainSpec t;
    try {
        t.method = train_method_from_string(s.require<std::string>("method"));
    } catch (const ContractError& e) {
        throw ConfigError(s.where("method"), e.what());
    }
    t.epochs = s.require<std::size_t>("epochs");
    t.batch_size = s.get<std::size_t>("batch_size", 32);
    t.clr_min = s.get<double>("clr_min", 0.0);
    t.clr_max = s.get<double>("clr_max", 0.2);
    t.gamma = s.optional<double>("gamma");
    if (s.has("attack")) t.attack = parse_attack(s.child("attack"), seed);
    t.seed = seed;
    if (t.method == TrainMethod::eae && !t.gamma) {
        throw ConfigError(s.where("gamma"), "missing required field 'gamma' for method eae");
    }
    try {
        t.validate();
    } catch (const ContractError& e) {
        throw ConfigError(s.where(), e.what());
    }
    return t;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

DatasetConfig parse_dataset(const Section& s, const std::filesystem::path& base, std::uint64_t seed) {
    DatasetConfig d;
    d.kind = s.require<std::string>("kind");
    if (d.kind == "gaussian-blobs" || d.kind == "blobs" || d.kind == "rings") {
        s.allow({"kind", "num_classes", "count", "dim", "noise", "sample_shape", "test_count"});
        d.synthetic.kind = synthetic_kind_from_string(d.kind);
        d.synthetic.num_classes = s.require<std::size_t>("num_classes");
        d.synthetic.count = s.require<std::size_t>("count");
        d.synthetic.dim = s.require<std::size_t>("dim");
        d.synthetic.noise = s.get<double>("noise", 0.1);
        d.synthetic.sample_shape = s.get<Shape>("sample_shape", {});
        d.synthetic.seed = derive_seed(seed, 10);
        d.test_count = s.get<std::size_t>("test_count", d.synthetic.count / 3);
        if (d.synthetic.num_classes < 2) throw ConfigError(s.where("num_classes"), "must be >= 2");
        if (d.synthetic.count < d.synthetic.num_classes) throw ConfigError(s.where("count"), "must be >= num_classes");
        if (!d.synthetic.sample_shape.empty() && shape_numel(d.synthetic.sample_shape) != d.synthetic.dim) {
            throw ConfigError(s.where("sample_shape"), "product must equal dim");
        }
        if (d.test_count == 0 || d.test_count >= d.synthetic.count) {
            throw ConfigError(s.where("test_count"), "must lie in (0, count)");
        }
    } else if (d.kind == "cifar10") {
        s.allow({"kind", "train_files", "test_files", "classes", "train_per_class", "test_per_class"});
        for (const auto& f : s.require<std::vector<std::string>>("train_files")) d.train_files.push_back(resolve(base, f));
        for (const auto& f : s.require<std::vector<std::string>>("test_files")) d.test_files.push_back(resolve(base, f));
        d.classes = s.get<std::vector<ClassIndex>>("classes", {});
        d.train_per_class = s.get<std::size_t>("train_per_class", 200);
        d.test_per_class = s.get<std::size_t>("test_per_class", 100);
        for (const auto* files : {&d.train_files, &d.test_files}) {
            if (files->empty()) throw ConfigError(s.where(files == &d.train_files ? "train_files" : "test_files"), "empty file list");
            for (const auto& f : *files) {
                if (!std::filesystem::exists(f)) throw ConfigError(s.where(), "dataset file not found: " + f.string());
            }
        }
    } else if (d.kind == "idx") {
        s.allow({"kind", "train_images", "train_labels", "test_images", "test_labels", "train_limit", "test_limit"});
        d.train_images = resolve(base, s.require<std::string>("train_images"));
        d.train_labels = resolve(base, s.require<std::string>("train_labels"));
        d.test_images = resolve(base, s.require<std::string>("test_images"));
        d.test_labels = resolve(base, s.require<std::string>("test_labels"));
        d.train_limit = s.optional<std::size_t>("train_limit");
        d.test_limit = s.optional<std::size_t>("test_limit");
        for (const auto* f : {&d.train_images, &d.train_labels, &d.test_images, &d.test_labels}) {
            if (!std::filesystem::exists(*f)) throw ConfigError(s.where(), "dataset file not found: " + f->string());
        }
    } else {
        throw ConfigError(s.where("kind"), "unknown dataset kind '" + d.kind +
                                               "' (expected gaussian-blobs, rings, cifar10 or idx)");
    }
    return d;
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir,
                       std::optional<std::uint64_t> seed_override) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("line " + std::to_string(line_of(text, e.byte == 0 ? 0 : e.byte - 1)), e.what());
    }
    const Section root(j, "");
    root.allow({"seed", "output_dir", "dataset", "model", "train", "attacks", "checkpoint", "attack", "seed_stats",
                "bench"});

    RunConfig c;
    c.seed = seed_override ? *seed_override : root.get<std::uint64_t>("seed", 0);
    c.output_dir = root.get<std::string>("output_dir", "out");
    if (!root.has("dataset")) throw ConfigError("/dataset", "missing required field 'dataset'");
    c.dataset = parse_dataset(root.child("dataset"), base_dir, c.seed);
    c.model = root.get<std::string>("model", "mlp-small");
    if (c.model != "mlp-small" && c.model != "cnn-small") {
        throw ConfigError("/model", "unknown preset '" + c.model + "' (expected mlp-small or cnn-small)");
    }
    if (!root.has("train")) throw ConfigError("/train", "missing required field 'train'");
    c.train = parse_train(root.child("train"), c.seed);
    if (root.has("attacks")) {
        const auto& arr = root.raw("attacks");
        if (!arr.is_array()) throw ConfigError("/attacks", "expected an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            c.attacks.push_back(parse_attack(Section(arr[i], "/attacks/" + std::to_string(i)), c.seed));
        }
    }
    if (root.has("checkpoint")) c.checkpoint = resolve(base_dir, root.get<std::string>("checkpoint", ""));
    if (root.has("attack")) c.attack = parse_attack(root.child("attack"), c.seed);
    if (root.has("seed_stats")) {
        const auto s = root.child("seed_stats");
        s.allow({"epsilons", "attack", "bin_width", "histogram_epsilon"});
        SeedStatsConfig ss;
        ss.epsilons = s.require<std::vector<double>>("epsilons");
        if (ss.epsilons.empty()) throw ConfigError(s.where("epsilons"), "needs at least one value");
        for (double e : ss.epsilons) {
            if (!(e >= 0.0 && e <= 1.0)) throw ConfigError(s.where("epsilons"), "values must lie in [0, 1]");
        }
        try {
            ss.attack = attack_kind_from_string(s.get<std::string>("attack", "fgsm"));
        } catch (const ContractError& e) {
            throw ConfigError(s.where("attack"), e.what());
        }
        ss.bin_width = s.get<double>("bin_width", 0.5);
        if (!(ss.bin_width > 0.0)) throw ConfigError(s.where("bin_width"), "must be positive");
        ss.histogram_epsilon = s.optional<double>("histogram_epsilon");
        c.seed_stats = ss;
    }
    if (root.has("bench")) {
        const auto s = root.child("bench");
        s.allow({"methods", "source_model", "source_epochs"});
        BenchConfig b;
        if (!s.has("methods")) throw ConfigError(s.where("methods"), "missing required field 'methods'");
        const auto& arr = s.raw("methods");
        if (!arr.is_array() || arr.empty()) throw ConfigError(s.where("methods"), "expected a non-empty array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            Json merged = arr[i];
            if (!merged.is_object()) throw ConfigError(s.where("methods/" + std::to_string(i)), "expected an object");
            // Unset shared fields inherit from the train section.
            for (const char* key : {"epochs", "batch_size", "clr_min", "clr_max"}) {
                if (!merged.contains(key)) merged[key] = j.at("train").contains(key) ? j.at("train").at(key) : Json();
            }
            if (merged.at("batch_size").is_null()) merged.erase("batch_size");
            if (merged.at("clr_min").is_null()) merged.erase("clr_min");
            if (merged.at("clr_max").is_null()) merged.erase("clr_max");
            b.methods.push_back(parse_train(Section(merged, "/bench/methods/" + std::to_string(i)), c.seed));
        }
        b.source_model = s.optional<std::string>("source_model");
        b.source_epochs = s.get<std::size_t>("source_epochs", 0);
        c.bench = b;
    }
    c.echo = j;
    c.echo["seed"] = c.seed;
    return c;
}

RunConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path.string(), "cannot read config file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.parent_path(), seed_override);
}

std::pair<Dataset, Dataset> load_datasets(const RunConfig& config) {
    const auto& d = config.dataset;
    if (d.kind == "cifar10") {
        CifarSubset train_filter{d.classes, d.train_per_class};
        CifarSubset test_filter{d.classes, d.test_per_class};
        return {load_cifar10_binary(d.train_files, train_filter), load_cifar10_binary(d.test_files, test_filter)};
    }
    if (d.kind == "idx") {
        return {load_idx(d.train_images, d.train_labels, d.train_limit),
                load_idx(d.test_images, d.test_labels, d.test_limit)};
    }
    return split(make_synthetic(d.synthetic), d.test_count, derive_seed(config.seed, 13));
}

// ---------------------------------------------------------------------------
// Perturbed-set container

static_assert(std::endian::native == std::endian::little, "perturbed-set files are little-endian");

namespace {

constexpr char kSetMagic[8] = {'E', 'A', 'E', 'P', 'S', 'E', 'T', '1'};

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(const std::string& buf, std::size_t& off) {
    if (off + sizeof(T) > buf.size()) throw FormatError("perturbed set truncated", off);
    T v;
    std::memcpy(&v, buf.data() + off, sizeof v);
    off += sizeof v;
    return v;
}

}  // namespace

void save_perturbed_set(const std::filesystem::path& path, const PerturbedSet& set) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(kSetMagic, sizeof kSetMagic);
    put<std::uint32_t>(out, 1);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(set.inputs.rank()));
    for (auto d : set.inputs.shape()) put<std::uint64_t>(out, d);
    put<double>(out, set.epsilon);
    for (auto y : set.labels) put<std::uint32_t>(out, static_cast<std::uint32_t>(y));
    for (double v : set.inputs.data()) put<double>(out, v);
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

PerturbedSet load_perturbed_set(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();
    if (buf.size() < sizeof kSetMagic || std::memcmp(buf.data(), kSetMagic, sizeof kSetMagic) != 0) {
        throw FormatError("not a perturbed-set file", 0);
    }
    std::size_t off = sizeof kSetMagic;
    if (take<std::uint32_t>(buf, off) != 1) throw FormatError("unsupported perturbed-set version", off - 4);
    const auto rank = take<std::uint32_t>(buf, off);
    Shape shape(rank);
    for (auto& d : shape) d = take<std::uint64_t>(buf, off);
    PerturbedSet set;
    set.epsilon = take<double>(buf, off);
    set.labels.resize(rank ? shape[0] : 0);
    for (auto& y : set.labels) y = take<std::uint32_t>(buf, off);
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = take<double>(buf, off);
    if (off != buf.size()) throw FormatError("trailing bytes in perturbed set", off);
    set.inputs = Tensor(std::move(shape), std::move(values));
    return set;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct Context {
    RunConfig config;
    std::filesystem::path out;
};

Context open_context(const Options& o) {
    Context ctx{load_config(o.config, o.seed), {}};
    ctx.out = o.out ? *o.out : ctx.config.output_dir;
    if (ctx.out.is_relative() && !o.out) ctx.out = o.config.parent_path() / ctx.out;
    std::filesystem::create_directories(ctx.out);
    return ctx;
}

std::uint64_t model_seed(const RunConfig& c) { return derive_seed(c.seed, 11); }

Model train_source(const RunConfig& c, const Dataset& train_set, const std::string& preset, std::size_t epochs) {
    TrainSpec spec;
    spec.method = TrainMethod::normal;
    spec.epochs = epochs;
    spec.batch_size = c.train.batch_size;
    spec.clr_min = c.train.clr_min;
    spec.clr_max = c.train.clr_max;
    spec.seed = derive_seed(c.seed, 20);
    auto model = make_model(preset, train_set.sample_shape(), train_set.num_classes, derive_seed(c.seed, 21));
    return train(std::move(model), train_set, spec).model;
}

template <typename F>
int guarded(const char* name, F&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::cerr << name << ": config error at " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << name << ": numeric abort: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << name << ": " << e.what() << '\n';
        return kExitFailure;
    }
}

}  // namespace

int cmd_train(const Options& o) {
    return guarded("train", [&] {
        auto ctx = open_context(o);
        const auto& c = ctx.config;
        const auto [train_set, test_set] = load_datasets(c);
        auto model = make_model(c.model, train_set.sample_shape(), train_set.num_classes, model_seed(c));
        auto result = train(std::move(model), train_set, c.train);

        RunReport report = result.report(c.train);
        report.config = c.echo;
        report.clean_acc = accuracy(result.model, test_set);
        if (!c.attacks.empty()) {
            const auto preset = source_preset_for(c.model);
            const auto source = train_source(c, train_set, preset, c.train.epochs);
            const auto suite = build_transfer_suite(source, test_set, c.attacks);
            report.perturbed = evaluate_transfer(result.model, suite);
        }

        save_checkpoint(result.model, ctx.out / "model.ckpt");
        emit_report({report}, ReportFormat::json, ctx.out / "report.json");
        emit_report({report}, ReportFormat::csv, ctx.out / "report.csv");
        write_text_file(ctx.out / "epochs.csv", epoch_log_csv(report));
        std::cout << report.method << ": clean_acc=" << report.clean_acc << " sec/epoch=" << report.sec_per_epoch
                  << " param_bwd=" << report.param_bwd << " input_grad_bwd=" << report.input_grad_bwd << '\n';
        for (const auto& p : report.perturbed) std::cout << "  " << p.attack << ": acc=" << p.accuracy << '\n';
        return kExitOk;
    });
}

int cmd_seed_stats(const Options& o) {
    return guarded("seed-stats", [&] {
        auto ctx = open_context(o);
        const auto& c = ctx.config;
        if (!c.seed_stats) throw ConfigError("/seed_stats", "missing required section 'seed_stats'");
        const auto& ss = *c.seed_stats;
        const auto [train_set, test_set] = load_datasets(c);
        auto model = make_model(c.model, train_set.sample_shape(), train_set.num_classes, model_seed(c));
        auto trained = train(std::move(model), train_set, c.train).model;
        const double clean = accuracy(trained, test_set);

        Json records = Json::array();
        std::optional<std::pair<LdStats, LdStats>> hist;
        std::optional<double> hist_eps;
        for (double eps : ss.epsilons) {
            AttackSpec a;
            a.kind = ss.attack;
            a.epsilon = eps;
            a.alpha = ss.attack == AttackKind::fgsm ? 0.0 : eps / 2.0;
            a.random_start = ss.attack == AttackKind::pgd;
            a.seed = derive_seed(c.seed, 30);
            const auto part = partition_seeds(trained, test_set, a);
            Json rec = to_json(part);
            rec["warning"] = part.seeds.empty();
            if (part.seeds.empty()) {
                rec["warning_message"] = part.empty_candidates
                                             ? "no correctly classified examples"
                                             : "empty seed set: no candidate flipped at this epsilon";
            }
            if (!part.seeds.empty()) rec["seed_stats"] = to_json(ld_stats(part.seed_lds(), ss.bin_width));
            if (!part.non_seeds.empty()) rec["non_seed_stats"] = to_json(ld_stats(part.non_seed_lds(), ss.bin_width));
            records.push_back(std::move(rec));

            const bool wanted = ss.histogram_epsilon ? std::abs(*ss.histogram_epsilon - eps) < 1e-12 : !hist.has_value();
            if (wanted && !part.seeds.empty() && !part.non_seeds.empty()) {
                hist = std::make_pair(ld_stats(part.seed_lds(), ss.bin_width),
                                      ld_stats(part.non_seed_lds(), ss.bin_width));
                hist_eps = eps;
            }
            std::cout << "eps=" << eps << " seeds=" << part.seeds.size() << " non_seeds=" << part.non_seeds.size();
            if (!part.seeds.empty()) std::cout << " gamma=" << threshold_from_partition(part);
            if (part.seeds.empty()) std::cout << " [warning: empty seed set]";
            std::cout << '\n';
        }

        Json out;
        out["model"] = c.model;
        out["clean_acc"] = clean;
        out["attack"] = to_string(ss.attack);
        out["records"] = std::move(records);
        out["config"] = c.echo;
        write_text_file(ctx.out / "seed_stats.json", out.dump(2) + "\n");
        if (hist) {
            std::ostringstream title;
            title << "LD distribution, " << to_string(ss.attack) << " eps=" << *hist_eps;
            emit_histogram_svg(hist->first, hist->second, title.str(), ctx.out / "ld_hist.svg");
            write_text_file(ctx.out / "ld_hist.csv", ld_histogram_csv(hist->first, hist->second));
        }
        return kExitOk;
    });
}

int cmd_bench(const Options& o) {
    return guarded("bench", [&] {
        auto ctx = open_context(o);
        const auto& c = ctx.config;
        if (!c.bench) throw ConfigError("/bench", "missing required section 'bench'");
        const auto& b = *c.bench;
        const auto [train_set, test_set] = load_datasets(c);

        std::optional<TransferSuite> suite;
        if (!c.attacks.empty()) {
            const auto preset = b.source_model.value_or(source_preset_for(c.model));
            const auto source =
                train_source(c, train_set, preset, b.source_epochs ? b.source_epochs : c.train.epochs);
            suite = build_transfer_suite(source, test_set, c.attacks);
        }

        std::vector<RunReport> reports;
        std::ostringstream timing;
        timing << "method,sec_per_epoch,forward_per_batch,param_bwd_per_batch,input_grad_bwd_per_batch\n";
        std::vector<std::string> labels;
        std::vector<double> secs, clean_accs, pert_accs;
        for (const auto& spec : b.methods) {
            auto model = make_model(c.model, train_set.sample_shape(), train_set.num_classes, model_seed(c));
            auto result = train(std::move(model), train_set, spec);
            RunReport r = result.report(spec);
            r.clean_acc = accuracy(result.model, test_set);
            if (suite) r.perturbed = evaluate_transfer(result.model, *suite);
            const double batches = static_cast<double>(result.batches_per_epoch * spec.epochs);
            std::string name = r.method;
            if (spec.method == TrainMethod::pgd_at) name += "-" + std::to_string(spec.attack->iterations);
            timing << name << ',' << r.sec_per_epoch << ',' << r.forward_passes / batches << ','
                   << r.param_bwd / batches << ',' << r.input_grad_bwd / batches << '\n';
            labels.push_back(name);
            secs.push_back(r.sec_per_epoch);
            clean_accs.push_back(r.clean_acc);
            pert_accs.push_back(r.perturbed.empty() ? 0.0 : r.perturbed.front().accuracy);
            std::cout << name << ": sec/epoch=" << r.sec_per_epoch << " clean_acc=" << r.clean_acc
                      << " input_grad_bwd=" << r.input_grad_bwd << '\n';
            reports.push_back(std::move(r));
        }

        emit_report(reports, ReportFormat::csv, ctx.out / "bench.csv");
        emit_report(reports, ReportFormat::json, ctx.out / "bench.json");
        write_text_file(ctx.out / "timing.csv", timing.str());
        write_text_file(ctx.out / "summary.svg",
                        bar_chart_svg("Training time per epoch", labels, {{"sec/epoch", secs}}, "seconds"));
        std::vector<BarSeries> acc{{"clean", clean_accs}};
        if (suite) acc.push_back({"perturbed (" + suite->points.front().spec.label() + ")", pert_accs});
        write_text_file(ctx.out / "accuracy.svg", bar_chart_svg("Accuracy by training method", labels, acc, "accuracy"));
        return kExitOk;
    });
}

int cmd_attack(const Options& o) {
    return guarded("attack", [&] {
        auto ctx = open_context(o);
        const auto& c = ctx.config;
        if (!c.checkpoint) throw ConfigError("/checkpoint", "missing required field 'checkpoint'");
        if (!c.attack) throw ConfigError("/attack", "missing required section 'attack'");
        const auto model = load_checkpoint(*c.checkpoint);
        const auto [train_set, test_set] = load_datasets(c);

        const auto suite = build_transfer_suite(model, test_set, {*c.attack});
        const auto& point = suite.points.front();
        const auto path = ctx.out / "perturbed.bin";
        save_perturbed_set(path, {point.x_adv, test_set.labels, c.attack->epsilon});

        const double clean = accuracy(model, test_set);
        std::cout << c.attack->label() << ": success rate " << (1.0 - point.source_accuracy)
                  << " (clean accuracy " << clean << ", perturbed accuracy " << point.source_accuracy << ")\n";

        if (o.verify) {
            const auto reloaded = load_perturbed_set(path);
            if (!within_budget(test_set.inputs, reloaded.inputs, reloaded.epsilon)) {
                std::cerr << "attack: verify failed: perturbed set violates the epsilon ball or [0, 1]\n";
                return kExitInvariant;
            }
            std::cout << "verify: ok (max |x_adv - x| = " << linf_distance(test_set.inputs, reloaded.inputs)
                      << " <= " << reloaded.epsilon << ")\n";
        }
        return kExitOk;
    });
}

int run(int argc, char** argv) {
    CLI::App app{"Endogenous adversarial example training toolkit"};
    app.require_subcommand(1);
    Options opts;
    std::uint64_t seed = 0;
    std::string out;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config, "Run configuration (JSON)")->required();
        sub->add_option("--seed", seed, "Override the config seed");
        sub->add_option("--out", out, "Override the output directory");
    };
    auto* train_cmd = app.add_subcommand("train", "Train one model and write report + checkpoint");
    auto* stats_cmd = app.add_subcommand("seed-stats", "Seed / non-seed LD statistics over an epsilon grid");
    auto* bench_cmd = app.add_subcommand("bench", "Timing and transfer-robustness comparison across methods");
    auto* attack_cmd = app.add_subcommand("attack", "Craft a perturbed test set from a checkpoint");
    for (auto* sub : {train_cmd, stats_cmd, bench_cmd, attack_cmd}) add_common(sub);
    attack_cmd->add_flag("--verify", opts.verify, "Re-check the epsilon-ball invariant on the written file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }
    if (app.get_subcommand_ptr(app.get_subcommands().front())->count("--seed")) opts.seed = seed;
    if (!out.empty()) opts.out = out;

    auto* chosen = app.get_subcommands().front();
    if (chosen == train_cmd) return cmd_train(opts);
    if (chosen == stats_cmd) return cmd_seed_stats(opts);
    if (chosen == bench_cmd) return cmd_bench(opts);
    return cmd_attack(opts);
}

}  // namespace eae::cli
