#pragma once

// JSON persistence for datasets and trained bundles, plus small file helpers. Doubles
// round-trip exactly through the JSON writer.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "svct/errors.hpp"
#include "svct/harness/config.hpp"
#include "svct/harness/pipeline.hpp"
#include "svct/harness/synthetic.hpp"
#include "svct/linalg.hpp"

namespace svct::harness {

inline nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) rows.push_back(to_std(Vector(m.row(i).transpose())));
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, Index cols_if_empty = 0) {
  if (!j.is_array()) throw IoError("expected a matrix (array of rows)");
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows > 0 ? static_cast<Index>(j.at(0).size()) : cols_if_empty;
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const auto& row = j.at(static_cast<std::size_t>(i));
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) throw IoError("ragged matrix rows");
    for (Index c = 0; c < cols; ++c) m(i, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

inline nlohmann::json vector_json(const Vector& v) { return to_std(v); }

inline Vector vector_from_json(const nlohmann::json& j) { return to_vector(j.get<std::vector<double>>()); }

inline nlohmann::json labels_json(const std::vector<Index>& y) {
  nlohmann::json out = nlohmann::json::array();
  for (Index v : y) out.push_back(static_cast<long long>(v));
  return out;
}

inline std::vector<Index> labels_from_json(const nlohmann::json& j) {
  std::vector<Index> out;
  for (const auto& v : j) out.push_back(static_cast<Index>(v.get<long long>()));
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

// Runs `body`, rewrapping JSON access errors as I/O errors that name the file.
template <typename F>
auto decode(const std::string& what, F&& body) {
  try {
    return body();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(what + ": malformed content: " + e.what());
  } catch (const ParameterError& e) {
    throw IoError(what + ": invalid content: " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(what + ": invalid settings: " + e.what());
  }
}

inline nlohmann::json spec_json(const SyntheticSpec& spec) {
  ExperimentConfig c;
  c.data = spec;
  return to_json(c).at("data");
}

inline SyntheticSpec spec_from_json(const nlohmann::json& j) { return config_from_json({{"data", j}}).data; }

inline nlohmann::json train_config_json(const TrainConfig& cfg) {
  ExperimentConfig c;
  c.train = cfg;
  return to_json(c).at("train");
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) { return config_from_json({{"train", j}}).train; }

inline nlohmann::json backbone_json(const cbm::BackboneParams& p) {
  return {{"w1", matrix_json(p.w1)}, {"b1", vector_json(p.b1)}, {"w2", matrix_json(p.w2)}, {"b2", vector_json(p.b2)}};
}

inline cbm::BackboneParams backbone_from_json(const nlohmann::json& j) {
  return {matrix_from_json(j.at("w1")), vector_from_json(j.at("b1")), matrix_from_json(j.at("w2")),
          vector_from_json(j.at("b2"))};
}

inline nlohmann::json dataset_json(const SyntheticDataset& d) {
  return {{"spec", spec_json(d.spec)},
          {"x_train", matrix_json(d.x_train)},
          {"y_train", labels_json(d.y_train)},
          {"x_test", matrix_json(d.x_test)},
          {"y_test", labels_json(d.y_test)},
          {"class_means", matrix_json(d.class_means)},
          {"backbone", backbone_json(d.backbone)},
          {"concept_names", d.candidates.names},
          {"concept_embeddings", matrix_json(d.candidates.text_embeddings)},
          {"class_names", d.class_names},
          {"class_embeddings", matrix_json(d.class_embeddings)},
          {"image_train", matrix_json(d.image_train)},
          {"image_test", matrix_json(d.image_test)},
          {"planted_projection", matrix_json(d.planted_projection)},
          {"planted_center", vector_json(d.planted_center)},
          {"concept_class", labels_json(d.concept_class)}};
}

inline SyntheticDataset dataset_from_json(const nlohmann::json& j) {
  return decode("dataset", [&] {
    SyntheticDataset d;
    d.spec = spec_from_json(j.at("spec"));
    d.x_train = matrix_from_json(j.at("x_train"));
    d.y_train = labels_from_json(j.at("y_train"));
    d.x_test = matrix_from_json(j.at("x_test"));
    d.y_test = labels_from_json(j.at("y_test"));
    d.class_means = matrix_from_json(j.at("class_means"));
    d.backbone = backbone_from_json(j.at("backbone"));
    d.candidates = cbm::ConceptSet(j.at("concept_names").get<std::vector<std::string>>(),
                                   matrix_from_json(j.at("concept_embeddings")));
    d.class_names = j.at("class_names").get<std::vector<std::string>>();
    d.class_embeddings = matrix_from_json(j.at("class_embeddings"), d.candidates.text_embeddings.cols());
    d.image_train = matrix_from_json(j.at("image_train"));
    d.image_test = matrix_from_json(j.at("image_test"));
    d.planted_projection = matrix_from_json(j.at("planted_projection"));
    d.planted_center = vector_from_json(j.at("planted_center"));
    d.concept_class = labels_from_json(j.at("concept_class"));
    if (d.x_train.rows() != static_cast<Index>(d.y_train.size()) || d.x_test.rows() != static_cast<Index>(d.y_test.size())) {
      throw IoError("dataset: input and label counts differ");
    }
    return d;
  });
}

inline nlohmann::json head_json(const cbm::FinalLayerWeights& h) {
  return {{"w", matrix_json(h.w)}, {"bias", vector_json(h.bias)}};
}

inline cbm::FinalLayerWeights head_from_json(const nlohmann::json& j) {
  return {matrix_from_json(j.at("w")), vector_from_json(j.at("bias"))};
}

inline nlohmann::json prior_json(const smoothing::GaussianMixturePrior& p) {
  return {{"weights", vector_json(p.weights)}, {"means", matrix_json(p.means)}, {"tau2", p.tau2}};
}

inline smoothing::GaussianMixturePrior prior_from_json(const nlohmann::json& j) {
  smoothing::GaussianMixturePrior p{vector_from_json(j.at("weights")), matrix_from_json(j.at("means")),
                                    j.at("tau2").get<double>()};
  p.validate();
  return p;
}

inline nlohmann::json bundle_json(const TrainedBundle& b) {
  return {{"backbone", backbone_json(b.model.backbone().params())},
          {"concept_projection", matrix_json(b.model.projection().w)},
          {"head", head_json(b.model.head())},
          {"concept_names", b.model.concept_names()},
          {"concept_only_head", head_json(b.concept_only_head)},
          {"prior", prior_json(b.prior)},
          {"candidate_names", b.candidate_names},
          {"after_filters", b.after_filters},
          {"similarities", vector_json(b.similarities)},
          {"sparsity", b.sparsity},
          {"hyperparameters", train_config_json(b.config)}};
}

inline TrainedBundle bundle_from_json(const nlohmann::json& j) {
  return decode("model bundle", [&] {
    TrainedBundle b;
    const cbm::TinyBackbone backbone(backbone_from_json(j.at("backbone")));
    cbm::ProjectionWeights projection{matrix_from_json(j.at("concept_projection"), backbone.feature_dim())};
    b.model = cbm::ConceptModel(backbone, std::move(projection), head_from_json(j.at("head")),
                                j.at("concept_names").get<std::vector<std::string>>());
    b.concept_only_head = head_from_json(j.at("concept_only_head"));
    b.prior = prior_from_json(j.at("prior"));
    b.candidate_names = j.at("candidate_names").get<std::vector<std::string>>();
    b.after_filters = j.at("after_filters").get<std::vector<std::string>>();
    b.similarities = vector_from_json(j.at("similarities"));
    b.sparsity = j.at("sparsity").get<double>();
    b.config = train_config_from_json(j.at("hyperparameters"));
    return b;
  });
}

inline void save_dataset(const std::filesystem::path& path, const SyntheticDataset& d) { write_json(path, dataset_json(d)); }

inline SyntheticDataset load_dataset(const std::filesystem::path& path) {
  try {
    return dataset_from_json(read_json(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline void save_bundle(const std::filesystem::path& path, const TrainedBundle& b) { write_json(path, bundle_json(b)); }

inline TrainedBundle load_bundle(const std::filesystem::path& path) {
  try {
    return bundle_from_json(read_json(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

/// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return nlohmann::json(v).dump();
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace svct::harness
