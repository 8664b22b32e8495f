#include "longipred/model_io.hpp"

#include <fstream>

#include "longipred/errors.hpp"

namespace longipred {

using nlohmann::json;

namespace {

json vec_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Eigen::VectorXd json_vec(const json& node) {
  Eigen::VectorXd v(node.size());
  for (std::size_t i = 0; i < node.size(); ++i) v[i] = node[i].get<double>();
  return v;
}

json mat_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    rows.push_back(vec_json(m.row(i).transpose()));
  }
  return rows;
}

Eigen::MatrixXd json_mat(const json& node, int cols_if_empty = 0) {
  if (node.empty()) return Eigen::MatrixXd(0, cols_if_empty);
  int rows = static_cast<int>(node.size());
  int cols = static_cast<int>(node[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (static_cast<int>(node[i].size()) != cols) {
      fail(ErrorCode::ParseError, "ragged matrix in model document");
    }
    for (int j = 0; j < cols; ++j) m(i, j) = node[i][j].get<double>();
  }
  return m;
}

}  // namespace

json kernel_params_to_json(const KernelParams& params) {
  json node;
  node["w"] = vec_json(params.w);
  node["sigma2_C"] = params.sigma2_C;
  node["sigma2_I"] = params.sigma2_I;
  node["jitter"] = params.jitter;
  node["clinical_mean"] = vec_json(params.clinical_mean);
  node["clinical_scale"] = vec_json(params.clinical_scale);
  return node;
}

KernelParams kernel_params_from_json(const json& node) {
  KernelParams params;
  params.w = json_vec(node.at("w"));
  params.sigma2_C = node.at("sigma2_C").get<double>();
  params.sigma2_I = node.at("sigma2_I").get<double>();
  params.jitter = node.at("jitter").get<double>();
  params.clinical_mean = json_vec(node.at("clinical_mean"));
  params.clinical_scale = json_vec(node.at("clinical_scale"));
  return params;
}

json deformation_to_json(const DeformationModel& model) {
  json node;
  node["width"] = model.grid.width;
  node["height"] = model.grid.height;
  json labels = json::array();
  for (const LabelBasis& lb : model.labels) {
    json entry;
    entry["label"] = lb.label;
    entry["pixels"] = lb.pixel_indices;
    entry["mean"] = vec_json(lb.mean);
    entry["basis"] = mat_json(lb.basis);
    entry["singular_values"] = vec_json(lb.singular_values);
    entry["explained_ratio"] = lb.explained_ratio;
    labels.push_back(std::move(entry));
  }
  node["labels"] = std::move(labels);
  return node;
}

DeformationModel deformation_from_json(const json& node) {
  DeformationModel model;
  model.grid.width = node.at("width").get<int>();
  model.grid.height = node.at("height").get<int>();
  for (const json& entry : node.at("labels")) {
    LabelBasis lb;
    lb.label = entry.at("label").get<int>();
    lb.pixel_indices = entry.at("pixels").get<std::vector<int>>();
    lb.mean = json_vec(entry.at("mean"));
    lb.basis = json_mat(entry.at("basis"));
    if (lb.basis.size() == 0) {
      lb.basis = Eigen::MatrixXd(lb.mean.size(), 0);
    }
    lb.singular_values = json_vec(entry.at("singular_values"));
    lb.explained_ratio = entry.at("explained_ratio").get<double>();
    model.labels.push_back(std::move(lb));
  }
  return model;
}

void save_model(const ModelBundle& bundle, const std::filesystem::path& path) {
  const FittedModel& model = bundle.model;
  json doc;
  doc["schema"] = "longipred-model/1";
  doc["kernel_params"] = kernel_params_to_json(model.params);
  doc["beta_bar_pop"] = vec_json(model.beta_bar_pop);
  doc["max_train_dx"] = model.max_train_dx;

  json dims = json::array();
  for (const DimensionFit& fit : model.dims) {
    json entry;
    entry["beta_bar"] = fit.beta_bar;
    entry["theta"] = {{"tau2_G", fit.theta.tau2_G},
                      {"tau2_C", fit.theta.tau2_C},
                      {"tau2_I", fit.theta.tau2_I},
                      {"sigma2", fit.theta.sigma2}};
    entry["alpha_G"] = vec_json(fit.alpha_G);
    entry["alpha_C"] = vec_json(fit.alpha_C);
    entry["alpha_I"] = vec_json(fit.alpha_I);
    entry["loglik_trace"] = fit.loglik_trace;
    entry["iterations"] = fit.iterations;
    entry["converged"] = fit.converged;
    dims.push_back(std::move(entry));
  }
  doc["dims"] = std::move(dims);

  json bank;
  bank["subject_ids"] = model.subject_ids;
  bank["genotypes"] = model.genotypes;
  bank["clinical"] = mat_json(model.clinical);
  bank["features"] = mat_json(model.features);
  doc["training_bank"] = std::move(bank);

  if (bundle.deformation) {
    doc["deformation"] = deformation_to_json(*bundle.deformation);
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

ModelBundle load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }

  ModelBundle bundle;
  try {
    if (doc.at("schema").get<std::string>() != "longipred-model/1") {
      fail(ErrorCode::ParseError,
           "unsupported model schema in " + path.string());
    }
    FittedModel& model = bundle.model;
    model.params = kernel_params_from_json(doc.at("kernel_params"));
    model.beta_bar_pop = json_vec(doc.at("beta_bar_pop"));
    model.max_train_dx = doc.at("max_train_dx").get<double>();
    for (const json& entry : doc.at("dims")) {
      DimensionFit fit;
      fit.beta_bar = entry.at("beta_bar").get<double>();
      const json& th = entry.at("theta");
      fit.theta.tau2_G = th.at("tau2_G").get<double>();
      fit.theta.tau2_C = th.at("tau2_C").get<double>();
      fit.theta.tau2_I = th.at("tau2_I").get<double>();
      fit.theta.sigma2 = th.at("sigma2").get<double>();
      fit.alpha_G = json_vec(entry.at("alpha_G"));
      fit.alpha_C = json_vec(entry.at("alpha_C"));
      fit.alpha_I = json_vec(entry.at("alpha_I"));
      fit.loglik_trace = entry.at("loglik_trace").get<std::vector<double>>();
      fit.iterations = entry.at("iterations").get<int>();
      fit.converged = entry.at("converged").get<bool>();
      model.dims.push_back(std::move(fit));
    }
    const json& bank = doc.at("training_bank");
    model.subject_ids = bank.at("subject_ids").get<std::vector<std::string>>();
    model.genotypes =
        bank.at("genotypes").get<std::vector<std::vector<int>>>();
    int q = static_cast<int>(model.params.w.size());
    model.clinical = json_mat(bank.at("clinical"), q);
    model.features = json_mat(bank.at("features"));
    if (doc.contains("deformation")) {
      bundle.deformation = deformation_from_json(doc.at("deformation"));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  return bundle;
}

}  // namespace longipred
