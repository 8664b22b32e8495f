#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

namespace longipred {

struct Subject {
  std::string id;
  double baseline_age = 0.0;
  std::vector<int> genotype;            // allele counts, each in {0,1,2}
  Eigen::VectorXd clinical;             // Q indicators
  Eigen::VectorXd baseline_features;    // P reals
  Eigen::VectorXd baseline_phenotype;   // M reals
};

struct Observation {
  std::string subject_id;
  double age = 0.0;                     // >= the subject's baseline age
  Eigen::VectorXd phenotype;            // M reals
};

/// Canonical container: subjects sorted by id, observations sorted by
/// (subject_id, age, phenotype), incidence maps observation index to
/// subject index. Immutable after construction; safe to share across
/// threads read-only.
struct Cohort {
  std::vector<Subject> subjects;
  std::vector<Observation> observations;
  std::vector<int> incidence;

  int n_subjects() const { return static_cast<int>(subjects.size()); }
  int n_observations() const { return static_cast<int>(observations.size()); }
  int n_loci() const;
  int n_clinical() const;
  int n_features() const;
  int n_phenotypes() const;
};

/// Validates, canonically sorts, and builds the incidence map.
Cohort make_cohort(std::vector<Subject> subjects,
                   std::vector<Observation> observations);

Cohort load_cohort(const std::filesystem::path& subjects_path,
                   const std::filesystem::path& observations_path);

void write_cohort(const Cohort& cohort,
                  const std::filesystem::path& subjects_path,
                  const std::filesystem::path& observations_path);

/// Subjects whose id starts with "<stratum>_", with their observations.
/// Empty stratum returns the cohort unchanged.
Cohort filter_stratum(const Cohort& cohort, const std::string& stratum);

struct Deltas {
  Eigen::VectorXd dx;   // n, follow-up age minus baseline age
  Eigen::MatrixXd dy;   // n x M, follow-up phenotype minus baseline
};

Deltas deltas(const Cohort& cohort);

}  // namespace longipred
