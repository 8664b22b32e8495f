#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <vector>

namespace longipred {

/// Pixel-unit square lattice; index (x, y) maps to y * width + x.
struct Grid2D {
  int width = 0;
  int height = 0;
  int size() const { return width * height; }
  bool operator==(const Grid2D&) const = default;
};

/// Scalar image on a Grid2D, intensities nominally in [0,1].
struct Image {
  Grid2D grid;
  Eigen::ArrayXd pixels;   // grid.size()
};

/// Integer label map on a Grid2D, values in {1..L}.
struct LabelMap {
  Grid2D grid;
  std::vector<int> labels;   // grid.size()
};

/// Per-pixel displacement u(v). A field acts as the sample map
/// v -> v + u(v): warping image I by the field reads I at v + u(v).
/// Composition and inversion below follow that convention.
struct DisplacementField {
  Grid2D grid;
  Eigen::ArrayXd ux, uy;   // grid.size() each

  static DisplacementField zero(Grid2D grid);
};

struct Atlas {
  Image intensity;
  LabelMap labels;
  int n_labels = 0;
};

/// Centered per-label principal basis of training displacement fields.
struct LabelBasis {
  int label = 0;
  std::vector<int> pixel_indices;    // pixels carrying this label
  Eigen::VectorXd mean;              // 2 * |pixels| (all ux, then all uy)
  Eigen::MatrixXd basis;             // (2 * |pixels|) x C, orthonormal columns
  Eigen::VectorXd singular_values;   // C
  double explained_ratio = 1.0;      // >= 0.95, or 1.0 for a constant label
};

struct DeformationModel {
  Grid2D grid;
  std::vector<LabelBasis> labels;

  int n_components() const;
};

/// Per-label PCA keeping the smallest component count that explains 95% of
/// the training variance. Component signs are fixed so the
/// largest-magnitude entry of each column is positive.
DeformationModel fit_pca(const std::vector<DisplacementField>& fields,
                         const Atlas& atlas, double min_explained = 0.95);

/// Concatenated per-label coefficients of the centered field.
Eigen::VectorXd encode(const DisplacementField& field,
                       const DeformationModel& model);

/// Mean field plus basis expansion; decode(0) is the training mean.
DisplacementField decode(const Eigen::VectorXd& coeffs,
                         const DeformationModel& model);

/// Bilinear sampling of `image` at v + u(v), coordinates clamped to the
/// grid boundary.
Image warp_image(const Image& image, const DisplacementField& field);

/// Nearest-neighbor sampling variant for label maps.
LabelMap warp_labels(const LabelMap& labels, const DisplacementField& field);

/// Sample-map composition: result(v) = v + u_in(v) + u_out(v + u_in(v)),
/// with the outer field resampled bilinearly. Warping by the result equals
/// warping by `outer` first, then by `inner`.
DisplacementField compose(const DisplacementField& outer,
                          const DisplacementField& inner);

/// Fixed-point inversion of v -> v + u(v); 30 iterations or residual below
/// 1e-4 px, whichever first. Fails with NotInvertible when the residual
/// stays above 0.5 px.
DisplacementField invert(const DisplacementField& field);

/// Baseline image warped to the target time: decode the target coefficients
/// into an atlas-to-target field, chain it with the inverse of the
/// atlas-to-baseline field, and sample the baseline once.
Image synthesize_followup(const Image& baseline,
                          const DisplacementField& phi_ab,
                          const Eigen::VectorXd& y_t,
                          const DeformationModel& model);

/// Atlas labels carried to the subject at the target time through the
/// decoded field.
LabelMap propagate_labels(const Atlas& atlas, const Eigen::VectorXd& y_t,
                          const DeformationModel& model);

// Serialization: binary 8-bit PGM for images and labels, CSV (x,y,ux,uy)
// for fields.
void write_pgm(const std::filesystem::path& path, const Image& image);
Image read_pgm(const std::filesystem::path& path);
void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_label_pgm(const std::filesystem::path& path);
void write_field_csv(const std::filesystem::path& path,
                     const DisplacementField& field);
DisplacementField read_field_csv(const std::filesystem::path& path);

}  // namespace longipred
