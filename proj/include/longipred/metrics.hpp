#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "longipred/cohort.hpp"
#include "longipred/deformation.hpp"
#include "longipred/model_io.hpp"

namespace longipred {

/// |pred - truth| / |truth|.
double relative_error(double pred, double truth);

/// 2|A∩B| / (|A| + |B|) for one label; both regions empty counts as 1.
double dice(const LabelMap& a, const LabelMap& b, int label);

/// Subject ids with the largest |y_last - y_b| / |y_b| for one phenotype
/// dimension: top 10% (ceiling) of the subjects that have follow-ups, ties
/// broken by ascending id. A zero baseline ranks as infinite change.
std::vector<std::string> top_decile(const Cohort& cohort, int dim);

/// One value cell of an evaluation: mean and median relative error for a
/// method and phenotype dimension, overall and on the top-decile stratum.
struct MethodDimStats {
  std::string method;
  int dim = 0;
  double mean_rel_err = 0.0;
  double median_rel_err = 0.0;
  double mean_rel_err_top = 0.0;
  double median_rel_err_top = 0.0;
  int n_overall = 0;   // (subject, follow-up) pairs with nonzero truth
  int n_top = 0;
};

struct DiceStats {
  std::string method;
  int label = 0;
  double mean_dice = 0.0;
  int n_subjects = 0;
};

struct EvalReport {
  std::vector<std::string> methods;
  std::vector<MethodDimStats> cells;        // methods x dims
  std::vector<DiceStats> dice_cells;        // anatomy runs only
};

/// Held-out evaluation of the requested methods ("full", "pop", "carry")
/// against the observed follow-ups. With an atlas and an embedded basis the
/// report also carries per-label Dice of propagated labels at the last
/// follow-up of each subject.
EvalReport compare_methods(const ModelBundle& bundle, const Cohort& test,
                           const std::vector<std::string>& methods,
                           const Atlas* atlas = nullptr,
                           bool allow_unconverged = false);

/// Mean and standard deviation of every report cell across replicates.
/// All reports must share the same cell layout.
struct SummaryCell {
  std::string method;
  int dim = 0;
  std::string metric;
  double mean = 0.0;
  double stddev = 0.0;
};
std::vector<SummaryCell> aggregate_reports(const std::vector<EvalReport>& reports);

void write_report_json(const EvalReport& report, const std::filesystem::path& path);

/// Long-format table (method, stratum, dim, metric, value); dice rows use
/// the label number as dim and stratum "overall".
void write_plotdata_csv(const EvalReport& report, const std::filesystem::path& path);

}  // namespace longipred
