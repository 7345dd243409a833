#pragma once

// JSON form of a federation: task data and weights only. Constants are
// recomputed on load.

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ocs/error.hpp"
#include "ocs/tasks.hpp"

namespace ocs {

namespace detail {

using json = nlohmann::json;

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Matrix matrix_from_json(const json& j) {
  require(j.is_array() && !j.empty() && j.front().is_array(), "expected a non-empty matrix");
  Matrix m(j.size(), j.front().size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    require(j[i].size() == static_cast<std::size_t>(m.cols()), "ragged matrix");
    for (std::size_t c = 0; c < j[i].size(); ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

inline Vector vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline json client_to_json(const QuadraticClientTask& t) {
  return {{"A", matrix_to_json(t.curvature())}, {"b", vector_to_json(t.center())}, {"c", t.offset()}};
}

inline json client_to_json(const LogisticClientTask& t) {
  return {{"features", matrix_to_json(t.features())}, {"labels", vector_to_json(t.labels())}, {"lambda", t.lambda()}};
}

template <class Task>
Task client_from_json(const json& j);

template <>
inline QuadraticClientTask client_from_json<QuadraticClientTask>(const json& j) {
  return QuadraticClientTask(matrix_from_json(j.at("A")), vector_from_json(j.at("b")), j.at("c").get<double>());
}

template <>
inline LogisticClientTask client_from_json<LogisticClientTask>(const json& j) {
  return LogisticClientTask(matrix_from_json(j.at("features")), vector_from_json(j.at("labels")),
                            j.at("lambda").get<double>());
}

template <class Task>
constexpr const char* kind_name() {
  if constexpr (std::is_same_v<Task, QuadraticClientTask>) return "quadratic";
  else return "logistic";
}

}  // namespace detail

template <ClientTask Task>
std::string federation_to_json(const Federation<Task>& fed) {
  detail::json clients = detail::json::array();
  for (const auto& c : fed.clients()) clients.push_back(detail::client_to_json(c));
  const detail::json doc{{"kind", detail::kind_name<Task>()}, {"weights", fed.weights()}, {"clients", clients}};
  return doc.dump(1);
}

template <ClientTask Task>
Federation<Task> federation_from_json(const std::string& text) {
  try {
    const auto doc = detail::json::parse(text);
    detail::require(doc.at("kind").get<std::string>() == detail::kind_name<Task>(), "federation kind mismatch");
    std::vector<Task> clients;
    for (const auto& c : doc.at("clients")) clients.push_back(detail::client_from_json<Task>(c));
    return Federation<Task>(std::move(clients), doc.at("weights").get<std::vector<double>>());
  } catch (const detail::json::exception& e) {
    throw ValidationError(std::string("federation file: ") + e.what());
  }
}

template <ClientTask Task>
void save_federation(const Federation<Task>& fed, const std::string& path) {
  std::ofstream out(path);
  detail::require(static_cast<bool>(out), "cannot write " + path);
  out << federation_to_json(fed) << '\n';
}

template <ClientTask Task>
Federation<Task> load_federation(const std::string& path) {
  std::ifstream in(path);
  detail::require(static_cast<bool>(in), "cannot read " + path);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return federation_from_json<Task>(text);
}

}  // namespace ocs
