#include "eae/evalbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "eae/errors.hpp"
#include "eae/random.hpp"

namespace eae {

double accuracy(const Model& model, const Tensor& inputs, const std::vector<ClassIndex>& labels, std::size_t chunk) {
    if (inputs.rank() < 2 || inputs.dim(0) != labels.size()) {
        throw DimensionError("accuracy: " + std::to_string(labels.size()) + " labels for inputs " +
                             shape_to_string(inputs.shape()));
    }
    if (labels.empty()) return 0.0;
    Dataset view{inputs, labels, model.num_classes()};
    std::size_t correct = 0;
    for (std::size_t lo = 0; lo < labels.size(); lo += chunk) {
        const std::size_t hi = std::min(labels.size(), lo + chunk);
        std::vector<std::size_t> idx(hi - lo);
        std::iota(idx.begin(), idx.end(), lo);
        const auto batch = gather(view, idx);
        const auto pred = argmax_rows(forward_logits(model, batch.inputs));
        for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double accuracy(const Model& model, const Dataset& dataset, std::size_t chunk) {
    return accuracy(model, dataset.inputs, dataset.labels, chunk);
}

TransferSuite build_transfer_suite(const Model& source, const Dataset& test_set, const std::vector<AttackSpec>& grid,
                                   std::size_t chunk) {
    TransferSuite suite{source.preset(), test_set, {}};
    const std::size_t n = test_set.size();
    for (const auto& spec : grid) {
        spec.validate();
        std::vector<double> adv;
        adv.reserve(test_set.inputs.numel());
        std::size_t block = 0;
        for (std::size_t lo = 0; lo < n; lo += chunk, ++block) {
            const std::size_t hi = std::min(n, lo + chunk);
            std::vector<std::size_t> idx(hi - lo);
            std::iota(idx.begin(), idx.end(), lo);
            const auto batch = gather(test_set, idx);
            AttackSpec s = spec;
            s.seed = derive_seed(spec.seed, block);
            const auto x = perturb(source, batch.inputs, batch.labels, s);
            adv.insert(adv.end(), x.data().begin(), x.data().end());
        }
        TransferPoint point{spec, Tensor(test_set.inputs.shape(), std::move(adv)), 0.0};
        point.source_accuracy = accuracy(source, point.x_adv, test_set.labels);
        suite.points.push_back(std::move(point));
    }
    return suite;
}

std::vector<AttackAccuracy> evaluate_transfer(const Model& model, const TransferSuite& suite) {
    std::vector<AttackAccuracy> out;
    for (const auto& p : suite.points) {
        out.push_back({p.spec.label(), p.spec.epsilon, accuracy(model, p.x_adv, suite.clean.labels)});
    }
    return out;
}

std::string source_preset_for(const std::string& defended_preset) {
    return defended_preset == "mlp-small" ? "cnn-small" : "mlp-small";
}

std::vector<SweepRow> threshold_sweep(const SweepSetup& setup, const std::vector<double>& gammas,
                                      const TrainSpec& base) {
    if (gammas.size() < 2) throw ContractError("threshold_sweep needs at least 2 gamma values");
    if (setup.train_set == nullptr || setup.test_set == nullptr) throw ContractError("threshold_sweep needs data");
    std::vector<SweepRow> rows;
    for (double gamma : gammas) {
        TrainSpec spec = base;
        spec.method = TrainMethod::eae;
        spec.gamma = gamma;
        spec.attack.reset();
        auto model =
            make_model(setup.preset, setup.train_set->sample_shape(), setup.train_set->num_classes, setup.model_seed);
        auto result = train(std::move(model), *setup.train_set, spec);
        SweepRow row;
        row.gamma = gamma;
        row.sec_per_epoch = result.instrumentation.median_epoch_seconds();
        row.clean_acc = accuracy(result.model, *setup.test_set);
        if (setup.suite != nullptr && !setup.suite->points.empty()) {
            row.perturbed_acc = evaluate_transfer(result.model, *setup.suite).front().accuracy;
        }
        for (const auto& e : result.epochs) row.perturbed_rows += e.perturbed_rows;
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Reports

nlohmann::ordered_json to_json(const RunReport& r) {
    nlohmann::ordered_json j;
    j["method"] = r.method;
    j["clean_acc"] = r.clean_acc;
    auto perturbed = nlohmann::ordered_json::array();
    for (const auto& p : r.perturbed) {
        perturbed.push_back({{"attack", p.attack}, {"epsilon", p.epsilon}, {"perturbed_acc", p.accuracy}});
    }
    j["perturbed"] = std::move(perturbed);
    j["sec_per_epoch"] = r.sec_per_epoch;
    j["forward_passes"] = r.forward_passes;
    j["param_bwd"] = r.param_bwd;
    j["input_grad_bwd"] = r.input_grad_bwd;
    j["epochs"] = r.epochs;
    j["batches_per_epoch"] = r.batches_per_epoch;
    j["seed"] = r.seed;
    j["threads"] = r.threads;
    j["timing_note"] = r.timing_note;
    auto log = nlohmann::ordered_json::array();
    for (const auto& e : r.epoch_log) {
        log.push_back({{"epoch", e.epoch},
                       {"mean_loss", e.mean_loss},
                       {"train_accuracy", e.train_accuracy},
                       {"seconds", e.seconds},
                       {"perturbed_rows", e.perturbed_rows}});
    }
    j["epoch_log"] = std::move(log);
    j["config"] = r.config;
    return j;
}

RunReport run_report_from_json(const nlohmann::ordered_json& j) {
    RunReport r;
    r.method = j.at("method").get<std::string>();
    r.clean_acc = j.at("clean_acc").get<double>();
    for (const auto& p : j.at("perturbed")) {
        r.perturbed.push_back(
            {p.at("attack").get<std::string>(), p.at("epsilon").get<double>(), p.at("perturbed_acc").get<double>()});
    }
    r.sec_per_epoch = j.at("sec_per_epoch").get<double>();
    r.forward_passes = j.at("forward_passes").get<std::uint64_t>();
    r.param_bwd = j.at("param_bwd").get<std::uint64_t>();
    r.input_grad_bwd = j.at("input_grad_bwd").get<std::uint64_t>();
    r.epochs = j.at("epochs").get<std::size_t>();
    r.batches_per_epoch = j.at("batches_per_epoch").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.threads = j.at("threads").get<std::size_t>();
    r.timing_note = j.at("timing_note").get<std::string>();
    for (const auto& e : j.at("epoch_log")) {
        r.epoch_log.push_back({e.at("epoch").get<std::size_t>(), e.at("mean_loss").get<double>(),
                               e.at("train_accuracy").get<double>(), e.at("seconds").get<double>(),
                               e.at("perturbed_rows").get<std::size_t>()});
    }
    r.config = j.at("config");
    return r;
}

std::string reports_to_json(const std::vector<RunReport>& reports) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : reports) arr.push_back(to_json(r));
    return arr.dump(2) + "\n";
}

std::vector<RunReport> reports_from_json(const std::string& text) {
    const auto arr = nlohmann::ordered_json::parse(text);
    if (!arr.is_array()) throw FormatError("report JSON must be an array", 0);
    std::vector<RunReport> out;
    for (const auto& j : arr) out.push_back(run_report_from_json(j));
    return out;
}

namespace {

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::string reports_to_csv(const std::vector<RunReport>& reports) {
    std::ostringstream os;
    os << kReportCsvHeader << '\n';
    for (const auto& r : reports) {
        auto row = [&](const std::string& attack, double eps, const std::string& pacc) {
            os << csv_field(r.method) << ',' << csv_field(attack) << ',' << fmt("%.6g", eps) << ','
               << fmt("%.6f", r.clean_acc) << ',' << pacc << ',' << fmt("%.6f", r.sec_per_epoch) << ',' << r.param_bwd
               << ',' << r.input_grad_bwd << ',' << r.seed << '\n';
        };
        if (r.perturbed.empty()) {
            row("none", 0.0, "");
        } else {
            for (const auto& p : r.perturbed) row(p.attack, p.epsilon, fmt("%.6f", p.accuracy));
        }
    }
    return os.str();
}

std::string epoch_log_csv(const RunReport& r) {
    std::ostringstream os;
    os << "method,epoch,mean_loss,train_accuracy,seconds,perturbed_rows\n";
    for (const auto& e : r.epoch_log) {
        os << csv_field(r.method) << ',' << e.epoch << ',' << fmt("%.9g", e.mean_loss) << ','
           << fmt("%.6f", e.train_accuracy) << ',' << fmt("%.6f", e.seconds) << ',' << e.perturbed_rows << '\n';
    }
    return os.str();
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "gamma,sec_per_epoch,clean_acc,perturbed_acc,perturbed_rows\n";
    for (const auto& r : rows) {
        os << fmt("%.6g", r.gamma) << ',' << fmt("%.6f", r.sec_per_epoch) << ',' << fmt("%.6f", r.clean_acc) << ','
           << fmt("%.6f", r.perturbed_acc) << ',' << r.perturbed_rows << '\n';
    }
    return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

void emit_report(const std::vector<RunReport>& reports, ReportFormat format, const std::filesystem::path& path) {
    write_text_file(path, format == ReportFormat::json ? reports_to_json(reports) : reports_to_csv(reports));
}

// ---------------------------------------------------------------------------
// SVG

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string svg_open(const std::string& title) {
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title)
       << "</text>\n";
    return os.str();
}

std::string axes(double ymax, const std::string& y_label) {
    std::ostringstream os;
    const double x0 = kLeft, y0 = kHeight - kBottom, x1 = kWidth - kRight;
    os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0 << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << x0 << "\" y1=\"" << kTop << "\" x2=\"" << x0 << "\" y2=\"" << y0
       << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = ymax * t / 4.0;
        const double y = y0 - (y0 - kTop) * t / 4.0;
        os << "<text x=\"" << x0 - 6 << "\" y=\"" << fmt("%.2f", y + 4) << "\" text-anchor=\"end\">"
           << fmt("%.3g", v) << "</text>\n";
    }
    os << "<text x=\"14\" y=\"" << (kTop + y0) / 2 << "\" transform=\"rotate(-90 14 " << (kTop + y0) / 2
       << ")\" text-anchor=\"middle\">" << xml_escape(y_label) << "</text>\n";
    return os.str();
}

}  // namespace

std::string histogram_svg(const LdStats& seeds, const LdStats& non_seeds, const std::string& title) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    std::size_t max_count = 1;
    for (const auto* s : {&seeds, &non_seeds}) {
        for (const auto& b : s->histogram) {
            lo = std::min(lo, b.lower);
            hi = std::max(hi, b.lower + s->bin_width);
            max_count = std::max(max_count, b.count);
        }
        lo = std::min(lo, s->mean);
        hi = std::max(hi, s->mean);
    }
    if (!(hi > lo)) hi = lo + 1.0;

    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kHeight - kTop - kBottom;
    const double y0 = kHeight - kBottom;
    auto xpos = [&](double v) { return kLeft + (v - lo) / (hi - lo) * plot_w; };
    auto ypos = [&](double c) { return y0 - c / static_cast<double>(max_count) * plot_h; };

    std::ostringstream os;
    os << svg_open(title) << axes(static_cast<double>(max_count), "count");
    os << "<g id=\"plot\" data-xmin=\"" << fmt("%.6f", lo) << "\" data-xmax=\"" << fmt("%.6f", hi)
       << "\" data-left=\"" << kLeft << "\" data-width=\"" << plot_w << "\">\n";
    const struct {
        const LdStats* stats;
        const char* id;
        const char* color;
        const char* label;
    } layers[] = {{&non_seeds, "non-seed", "#1f77b4", "MLD(non-seed)"}, {&seeds, "seed", "#d62728", "MLD(seed)"}};
    for (const auto& layer : layers) {
        os << "<g id=\"bins-" << layer.id << "\" fill=\"" << layer.color << "\" fill-opacity=\"0.5\">\n";
        for (const auto& b : layer.stats->histogram) {
            if (b.count == 0) continue;
            const double x = xpos(b.lower);
            const double w = xpos(b.lower + layer.stats->bin_width) - x;
            const double y = ypos(static_cast<double>(b.count));
            os << "<rect x=\"" << fmt("%.3f", x) << "\" y=\"" << fmt("%.3f", y) << "\" width=\"" << fmt("%.3f", w)
               << "\" height=\"" << fmt("%.3f", y0 - y) << "\" data-count=\"" << b.count << "\"/>\n";
        }
        os << "</g>\n";
    }
    int row = 0;
    for (const auto& layer : layers) {
        const double x = xpos(layer.stats->mean);
        os << "<line id=\"mld-" << layer.id << "\" x1=\"" << fmt("%.3f", x) << "\" y1=\"" << kTop << "\" x2=\""
           << fmt("%.3f", x) << "\" y2=\"" << y0 << "\" stroke=\"" << layer.color
           << "\" stroke-width=\"2\" stroke-dasharray=\"6 3\" data-mld=\"" << fmt("%.6f", layer.stats->mean)
           << "\"/>\n";
        os << "<text x=\"" << fmt("%.3f", x + 4) << "\" y=\"" << kTop + 12 + 14 * row++ << "\" fill=\""
           << layer.color << "\">" << layer.label << " = " << fmt("%.2f", layer.stats->mean) << "</text>\n";
    }
    os << "</g>\n";
    for (int t = 0; t <= 5; ++t) {
        const double v = lo + (hi - lo) * t / 5.0;
        os << "<text x=\"" << fmt("%.3f", xpos(v)) << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">"
           << fmt("%.2f", v) << "</text>\n";
    }
    os << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 12
       << "\" text-anchor=\"middle\">logit difference (top-1 minus top-2)</text>\n";
    os << "</svg>\n";
    return os.str();
}

void emit_histogram_svg(const LdStats& seeds, const LdStats& non_seeds, const std::string& title,
                        const std::filesystem::path& path) {
    write_text_file(path, histogram_svg(seeds, non_seeds, title));
}

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<BarSeries>& series, const std::string& y_label) {
    static constexpr const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
    double ymax = 0.0;
    for (const auto& s : series) {
        for (double v : s.values) ymax = std::max(ymax, v);
    }
    if (!(ymax > 0.0)) ymax = 1.0;

    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kHeight - kTop - kBottom;
    const double y0 = kHeight - kBottom;
    const double group_w = labels.empty() ? plot_w : plot_w / static_cast<double>(labels.size());
    const double bar_w = series.empty() ? 0.0 : group_w * 0.8 / static_cast<double>(series.size());

    std::ostringstream os;
    os << svg_open(title) << axes(ymax, y_label);
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = palette[s % std::size(palette)];
        os << "<g id=\"series-" << s << "\" fill=\"" << color << "\">\n";
        for (std::size_t g = 0; g < labels.size() && g < series[s].values.size(); ++g) {
            const double v = series[s].values[g];
            const double h = v / ymax * plot_h;
            const double x = kLeft + group_w * static_cast<double>(g) + group_w * 0.1 + bar_w * static_cast<double>(s);
            os << "<rect x=\"" << fmt("%.3f", x) << "\" y=\"" << fmt("%.3f", y0 - h) << "\" width=\""
               << fmt("%.3f", bar_w) << "\" height=\"" << fmt("%.3f", h) << "\"><title>" << xml_escape(series[s].name)
               << " " << xml_escape(labels[g]) << ": " << fmt("%.4g", v) << "</title></rect>\n";
        }
        os << "</g>\n";
        os << "<rect x=\"" << kWidth - kRight - 150 << "\" y=\"" << kTop + 14 * s << "\" width=\"10\" height=\"10\" fill=\""
           << color << "\"/><text x=\"" << kWidth - kRight - 135 << "\" y=\"" << kTop + 9 + 14 * s << "\">"
           << xml_escape(series[s].name) << "</text>\n";
    }
    for (std::size_t g = 0; g < labels.size(); ++g) {
        os << "<text x=\"" << fmt("%.3f", kLeft + group_w * (static_cast<double>(g) + 0.5)) << "\" y=\"" << y0 + 16
           << "\" text-anchor=\"middle\">" << xml_escape(labels[g]) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace eae
