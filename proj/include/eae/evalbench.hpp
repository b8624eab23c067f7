#pragma once

// Evaluation protocols (clean accuracy, black-box transfer, threshold sweep)
// and report / plot emission.

#include <filesystem>
#include <string>
#include <vector>

#include "eae/attacks.hpp"
#include "eae/data.hpp"
#include "eae/logit_perturbation.hpp"
#include "eae/nn.hpp"
#include "eae/report.hpp"
#include "eae/train.hpp"

namespace eae {

/// Fraction of rows whose argmax logit (lowest index on ties) equals the label.
double accuracy(const Model& model, const Tensor& inputs, const std::vector<ClassIndex>& labels,
                std::size_t chunk = 256);
double accuracy(const Model& model, const Dataset& dataset, std::size_t chunk = 256);

struct TransferPoint {
    AttackSpec spec;
    Tensor x_adv;
    double source_accuracy = 0.0;  // source model on its own perturbed set
};

/// Perturbed copies of a test set crafted once against a source model and
/// reused for every defended model.
struct TransferSuite {
    std::string source_preset;
    Dataset clean;
    std::vector<TransferPoint> points;
};

TransferSuite build_transfer_suite(const Model& source, const Dataset& test_set, const std::vector<AttackSpec>& grid,
                                   std::size_t chunk = 256);

/// Accuracy of `model` on every perturbed set of the suite, in grid order.
std::vector<AttackAccuracy> evaluate_transfer(const Model& model, const TransferSuite& suite);

/// Architecture used to craft transfer attacks against `defended_preset`.
std::string source_preset_for(const std::string& defended_preset);

struct SweepRow {
    double gamma = 0.0;
    double sec_per_epoch = 0.0;
    double clean_acc = 0.0;
    double perturbed_acc = 0.0;  // on the suite's first point; 0 when the suite is empty
    std::size_t perturbed_rows = 0;
};

struct SweepSetup {
    std::string preset;
    std::uint64_t model_seed = 0;
    const Dataset* train_set = nullptr;
    const Dataset* test_set = nullptr;
    const TransferSuite* suite = nullptr;  // optional
};

/// One EAE-AT run per gamma with everything else fixed.
std::vector<SweepRow> threshold_sweep(const SweepSetup& setup, const std::vector<double>& gammas,
                                      const TrainSpec& base);

// ---------------------------------------------------------------------------
// Emission. All writers are byte-deterministic for identical inputs.

inline constexpr const char* kReportCsvHeader =
    "method,attack,epsilon,clean_acc,perturbed_acc,sec_per_epoch,param_bwd,input_grad_bwd,seed";

std::string reports_to_json(const std::vector<RunReport>& reports);
std::vector<RunReport> reports_from_json(const std::string& text);
std::string reports_to_csv(const std::vector<RunReport>& reports);
std::string epoch_log_csv(const RunReport& report);
std::string sweep_to_csv(const std::vector<SweepRow>& rows);

enum class ReportFormat { json, csv };

/// Throws std::runtime_error on an unwritable path.
void emit_report(const std::vector<RunReport>& reports, ReportFormat format, const std::filesystem::path& path);

/// Overlaid LD histograms of seed / non-seed examples with mean markers.
std::string histogram_svg(const LdStats& seeds, const LdStats& non_seeds, const std::string& title);
void emit_histogram_svg(const LdStats& seeds, const LdStats& non_seeds, const std::string& title,
                        const std::filesystem::path& path);

struct BarSeries {
    std::string name;
    std::vector<double> values;
};

/// Grouped bar chart, one group per label.
std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<BarSeries>& series, const std::string& y_label);

void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace eae
