#include "longipred/deformation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "longipred/csv.hpp"
#include "longipred/errors.hpp"
#include "longipred/util.hpp"

namespace longipred {

DisplacementField DisplacementField::zero(Grid2D grid) {
  DisplacementField f;
  f.grid = grid;
  f.ux = Eigen::ArrayXd::Zero(grid.size());
  f.uy = Eigen::ArrayXd::Zero(grid.size());
  return f;
}

int DeformationModel::n_components() const {
  int total = 0;
  for (const auto& l : labels) total += static_cast<int>(l.basis.cols());
  return total;
}

namespace {

double clampd(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

double sample_bilinear(const Eigen::ArrayXd& values, Grid2D grid, double x,
                       double y) {
  x = clampd(x, 0.0, grid.width - 1.0);
  y = clampd(y, 0.0, grid.height - 1.0);
  int x0 = static_cast<int>(std::floor(x));
  int y0 = static_cast<int>(std::floor(y));
  int x1 = std::min(x0 + 1, grid.width - 1);
  int y1 = std::min(y0 + 1, grid.height - 1);
  double fx = x - x0;
  double fy = y - y0;
  double top = (1.0 - fx) * values[y0 * grid.width + x0] +
               fx * values[y0 * grid.width + x1];
  double bottom = (1.0 - fx) * values[y1 * grid.width + x0] +
                  fx * values[y1 * grid.width + x1];
  return (1.0 - fy) * top + fy * bottom;
}

void check_same_grid(Grid2D a, Grid2D b, const char* what) {
  if (!(a == b)) {
    fail(ErrorCode::DimensionMismatch, std::string(what) + ": grid mismatch");
  }
}

void check_field(const DisplacementField& f) {
  if (f.ux.size() != f.grid.size() || f.uy.size() != f.grid.size()) {
    fail(ErrorCode::DimensionMismatch, "field storage does not match grid");
  }
  if (!f.ux.isFinite().all() || !f.uy.isFinite().all()) {
    fail(ErrorCode::NonFiniteValue, "displacement field has non-finite entries");
  }
}

}  // namespace

DeformationModel fit_pca(const std::vector<DisplacementField>& fields,
                         const Atlas& atlas, double min_explained) {
  if (fields.size() < 2) {
    fail(ErrorCode::TooFewSamples, "per-label basis needs at least 2 fields");
  }
  Grid2D grid = atlas.labels.grid;
  for (const auto& f : fields) {
    check_field(f);
    check_same_grid(f.grid, grid, "basis fit");
  }
  if (atlas.n_labels < 1) {
    fail(ErrorCode::InvalidValue, "atlas declares no labels");
  }

  std::vector<std::vector<int>> pixels_of(atlas.n_labels + 1);
  for (int idx = 0; idx < grid.size(); ++idx) {
    int label = atlas.labels.labels[idx];
    if (label < 1 || label > atlas.n_labels) {
      fail(ErrorCode::InvalidValue,
           "pixel label " + std::to_string(label) + " outside 1.." +
               std::to_string(atlas.n_labels));
    }
    pixels_of[label].push_back(idx);
  }

  DeformationModel model;
  model.grid = grid;
  int n = static_cast<int>(fields.size());
  for (int label = 1; label <= atlas.n_labels; ++label) {
    const auto& px = pixels_of[label];
    if (px.empty()) {
      fail(ErrorCode::InvalidValue, "label " + std::to_string(label) + " is empty");
    }
    int d = 2 * static_cast<int>(px.size());
    Eigen::MatrixXd data(n, d);
    for (int i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < px.size(); ++j) {
        data(i, j) = fields[i].ux[px[j]];
        data(i, px.size() + j) = fields[i].uy[px[j]];
      }
    }
    LabelBasis lb;
    lb.label = label;
    lb.pixel_indices = px;
    lb.mean = data.colwise().mean();
    Eigen::MatrixXd centered = data.rowwise() - lb.mean.transpose();

    Eigen::BDCSVD<Eigen::MatrixXd> svd(
        centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    double total = sv.squaredNorm();
    int c = 0;
    if (total > 1e-24) {
      double captured = 0.0;
      while (captured < min_explained * total && c < sv.size()) {
        captured += sv[c] * sv[c];
        ++c;
      }
      lb.explained_ratio = captured / total;
    }
    lb.basis = svd.matrixV().leftCols(c);
    lb.singular_values = sv.head(c);
    for (int k = 0; k < c; ++k) {
      Eigen::Index peak;
      lb.basis.col(k).cwiseAbs().maxCoeff(&peak);
      if (lb.basis(peak, k) < 0.0) lb.basis.col(k) = -lb.basis.col(k);
    }
    model.labels.push_back(std::move(lb));
  }
  return model;
}

namespace {

Eigen::VectorXd gather_label(const DisplacementField& field,
                             const LabelBasis& lb) {
  Eigen::VectorXd v(2 * lb.pixel_indices.size());
  for (std::size_t j = 0; j < lb.pixel_indices.size(); ++j) {
    v[j] = field.ux[lb.pixel_indices[j]];
    v[lb.pixel_indices.size() + j] = field.uy[lb.pixel_indices[j]];
  }
  return v;
}

}  // namespace

Eigen::VectorXd encode(const DisplacementField& field,
                       const DeformationModel& model) {
  check_field(field);
  check_same_grid(field.grid, model.grid, "encode");
  Eigen::VectorXd coeffs(model.n_components());
  int offset = 0;
  for (const auto& lb : model.labels) {
    int c = static_cast<int>(lb.basis.cols());
    if (c > 0) {
      coeffs.segment(offset, c) =
          lb.basis.transpose() * (gather_label(field, lb) - lb.mean);
    }
    offset += c;
  }
  return coeffs;
}

DisplacementField decode(const Eigen::VectorXd& coeffs,
                         const DeformationModel& model) {
  if (coeffs.size() != model.n_components()) {
    fail(ErrorCode::DimensionMismatch,
         "coefficient vector has " + std::to_string(coeffs.size()) +
             " entries, model has " + std::to_string(model.n_components()));
  }
  DisplacementField field = DisplacementField::zero(model.grid);
  int offset = 0;
  for (const auto& lb : model.labels) {
    int c = static_cast<int>(lb.basis.cols());
    Eigen::VectorXd v = lb.mean;
    if (c > 0) v += lb.basis * coeffs.segment(offset, c);
    offset += c;
    for (std::size_t j = 0; j < lb.pixel_indices.size(); ++j) {
      field.ux[lb.pixel_indices[j]] = v[j];
      field.uy[lb.pixel_indices[j]] = v[lb.pixel_indices.size() + j];
    }
  }
  return field;
}

Image warp_image(const Image& image, const DisplacementField& field) {
  check_field(field);
  check_same_grid(image.grid, field.grid, "warp");
  Image out;
  out.grid = image.grid;
  out.pixels.resize(image.grid.size());
  for (int y = 0; y < image.grid.height; ++y) {
    for (int x = 0; x < image.grid.width; ++x) {
      int idx = y * image.grid.width + x;
      out.pixels[idx] = sample_bilinear(image.pixels, image.grid,
                                        x + field.ux[idx], y + field.uy[idx]);
    }
  }
  return out;
}

LabelMap warp_labels(const LabelMap& labels, const DisplacementField& field) {
  check_field(field);
  check_same_grid(labels.grid, field.grid, "warp");
  LabelMap out;
  out.grid = labels.grid;
  out.labels.resize(labels.grid.size());
  for (int y = 0; y < labels.grid.height; ++y) {
    for (int x = 0; x < labels.grid.width; ++x) {
      int idx = y * labels.grid.width + x;
      int sx = static_cast<int>(std::lround(
          clampd(x + field.ux[idx], 0.0, labels.grid.width - 1.0)));
      int sy = static_cast<int>(std::lround(
          clampd(y + field.uy[idx], 0.0, labels.grid.height - 1.0)));
      out.labels[idx] = labels.labels[sy * labels.grid.width + sx];
    }
  }
  return out;
}

DisplacementField compose(const DisplacementField& outer,
                          const DisplacementField& inner) {
  check_field(outer);
  check_field(inner);
  check_same_grid(outer.grid, inner.grid, "compose");
  Grid2D grid = inner.grid;
  DisplacementField out = DisplacementField::zero(grid);
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      int idx = y * grid.width + x;
      double mx = x + inner.ux[idx];
      double my = y + inner.uy[idx];
      out.ux[idx] = inner.ux[idx] + sample_bilinear(outer.ux, grid, mx, my);
      out.uy[idx] = inner.uy[idx] + sample_bilinear(outer.uy, grid, mx, my);
    }
  }
  return out;
}

DisplacementField invert(const DisplacementField& field) {
  check_field(field);
  Grid2D grid = field.grid;
  DisplacementField inv = DisplacementField::zero(grid);
  for (int iter = 0; iter < 30; ++iter) {
    double residual = 0.0;
    for (int y = 0; y < grid.height; ++y) {
      for (int x = 0; x < grid.width; ++x) {
        int idx = y * grid.width + x;
        double sx = x + inv.ux[idx];
        double sy = y + inv.uy[idx];
        double nx = -sample_bilinear(field.ux, grid, sx, sy);
        double ny = -sample_bilinear(field.uy, grid, sx, sy);
        residual = std::max(residual, std::hypot(nx - inv.ux[idx],
                                                 ny - inv.uy[idx]));
        inv.ux[idx] = nx;
        inv.uy[idx] = ny;
      }
    }
    if (residual < 1e-4) break;
  }
  double defect = 0.0;
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      int idx = y * grid.width + x;
      double sx = x + inv.ux[idx];
      double sy = y + inv.uy[idx];
      double ex = inv.ux[idx] + sample_bilinear(field.ux, grid, sx, sy);
      double ey = inv.uy[idx] + sample_bilinear(field.uy, grid, sx, sy);
      defect = std::max(defect, std::hypot(ex, ey));
    }
  }
  if (defect > 0.5) {
    fail(ErrorCode::NotInvertible,
         "inversion residual " + format_double(defect) + " px");
  }
  return inv;
}

Image synthesize_followup(const Image& baseline,
                          const DisplacementField& phi_ab,
                          const Eigen::VectorXd& y_t,
                          const DeformationModel& model) {
  DisplacementField target = decode(y_t, model);
  DisplacementField baseline_to_atlas = invert(phi_ab);
  DisplacementField chain = compose(baseline_to_atlas, target);
  return warp_image(baseline, chain);
}

LabelMap propagate_labels(const Atlas& atlas, const Eigen::VectorXd& y_t,
                          const DeformationModel& model) {
  return warp_labels(atlas.labels, decode(y_t, model));
}

// --- serialization ---------------------------------------------------------

void write_pgm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << "P5\n" << image.grid.width << ' ' << image.grid.height << "\n255\n";
  for (int idx = 0; idx < image.grid.size(); ++idx) {
    double v = clampd(image.pixels[idx], 0.0, 1.0);
    out.put(static_cast<char>(std::lround(v * 255.0)));
  }
  if (!out) fail(ErrorCode::IoError, "write failed: " + path.string());
}

namespace {

int read_pgm_token(std::istream& in, const std::string& path) {
  int value = 0;
  if (!(in >> value)) fail(ErrorCode::ParseError, path + ": truncated header");
  return value;
}

std::vector<unsigned char> read_pgm_raw(const std::filesystem::path& path,
                                        Grid2D& grid) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5") fail(ErrorCode::ParseError, path.string() + ": not binary PGM");
  grid.width = read_pgm_token(in, path.string());
  grid.height = read_pgm_token(in, path.string());
  int maxval = read_pgm_token(in, path.string());
  if (grid.width < 1 || grid.height < 1 || maxval != 255) {
    fail(ErrorCode::ParseError, path.string() + ": unsupported PGM geometry");
  }
  in.get();   // single whitespace before raster
  std::vector<unsigned char> raw(grid.size());
  in.read(reinterpret_cast<char*>(raw.data()), raw.size());
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    fail(ErrorCode::ParseError, path.string() + ": truncated raster");
  }
  return raw;
}

}  // namespace

Image read_pgm(const std::filesystem::path& path) {
  Image image;
  auto raw = read_pgm_raw(path, image.grid);
  image.pixels.resize(image.grid.size());
  for (int idx = 0; idx < image.grid.size(); ++idx) {
    image.pixels[idx] = raw[idx] / 255.0;
  }
  return image;
}

void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << "P5\n" << labels.grid.width << ' ' << labels.grid.height << "\n255\n";
  for (int label : labels.labels) {
    if (label < 0 || label > 255) {
      fail(ErrorCode::InvalidValue, "label value out of byte range");
    }
    out.put(static_cast<char>(label));
  }
  if (!out) fail(ErrorCode::IoError, "write failed: " + path.string());
}

LabelMap read_label_pgm(const std::filesystem::path& path) {
  LabelMap labels;
  auto raw = read_pgm_raw(path, labels.grid);
  labels.labels.assign(raw.begin(), raw.end());
  return labels;
}

void write_field_csv(const std::filesystem::path& path,
                     const DisplacementField& field) {
  csv::Table table;
  table.header = {"x", "y", "ux", "uy"};
  table.rows.reserve(field.grid.size());
  for (int y = 0; y < field.grid.height; ++y) {
    for (int x = 0; x < field.grid.width; ++x) {
      int idx = y * field.grid.width + x;
      table.rows.push_back({std::to_string(x), std::to_string(y),
                            format_double(field.ux[idx]),
                            format_double(field.uy[idx])});
    }
  }
  csv::write_file(path, table);
}

DisplacementField read_field_csv(const std::filesystem::path& path) {
  csv::Table table = csv::read_file(path);
  if (table.header != std::vector<std::string>{"x", "y", "ux", "uy"}) {
    fail(ErrorCode::ParseError, path.string() + ": header must be x,y,ux,uy");
  }
  int width = 0, height = 0;
  std::vector<std::array<double, 4>> parsed;
  parsed.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    std::array<double, 4> vals{};
    for (int i = 0; i < 4; ++i) {
      if (!parse_double(row[i], vals[i]) || !std::isfinite(vals[i])) {
        fail(ErrorCode::ParseError, path.string() + ": bad value " + row[i]);
      }
    }
    width = std::max(width, static_cast<int>(vals[0]) + 1);
    height = std::max(height, static_cast<int>(vals[1]) + 1);
    parsed.push_back(vals);
  }
  DisplacementField field = DisplacementField::zero({width, height});
  if (static_cast<int>(parsed.size()) != field.grid.size()) {
    fail(ErrorCode::ParseError, path.string() + ": incomplete pixel coverage");
  }
  for (const auto& vals : parsed) {
    int idx = static_cast<int>(vals[1]) * width + static_cast<int>(vals[0]);
    field.ux[idx] = vals[2];
    field.uy[idx] = vals[3];
  }
  return field;
}

}  // namespace longipred
