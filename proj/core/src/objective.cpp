#include "vclip/objective.hpp"

#include <cmath>
#include <limits>

#include "vclip/errors.hpp"
#include "vclip/numerics/ops.hpp"

namespace vclip {

void ObjectiveConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("objective: temperature must be positive and finite");
  }
}

void to_json(nlohmann::json& j, const ObjectiveConfig& c) {
  j = nlohmann::json{{"temperature", c.temperature}, {"l2_normalize", c.l2_normalize}};
}

void from_json(const nlohmann::json& j, ObjectiveConfig& c) {
  const ObjectiveConfig d;
  c.temperature = j.value("temperature", d.temperature);
  c.l2_normalize = j.value("l2_normalize", d.l2_normalize);
}

void to_json(nlohmann::json& j, const LossReport& r) {
  j = nlohmann::json{{"batch", r.batch},
                     {"total", r.total},
                     {"mean_per_pair", r.mean_per_pair()},
                     {"video_to_text", r.video_to_text},
                     {"text_to_video", r.text_to_video},
                     {"offdiag_mean", r.offdiag_mean},
                     {"offdiag_max", r.offdiag_max}};
}

template <typename T>
Var similarity(Graph<T>& g, Var video, Var text, const ObjectiveConfig& config) {
  const auto& v = g.value(video);
  const auto& t = g.value(text);
  if (v.rows() != t.rows() || v.cols() != t.cols()) {
    throw ShapeError("similarity: video " + shape_string(v.dims()) + " vs text " +
                     shape_string(t.dims()));
  }
  if (config.l2_normalize) {
    video = ops::l2_normalize_rows(g, video);
    text = ops::l2_normalize_rows(g, text);
  }
  return ops::matmul(g, video, text, true);
}

template <typename T>
Tensor<T> similarity(const Tensor<T>& video, const Tensor<T>& text) {
  Graph<T> g;
  Var s = similarity(g, g.bind(video, false), g.bind(text, false), ObjectiveConfig{});
  return g.value(s);
}

template <typename T>
std::pair<double, double> offdiag_stats(const Tensor<T>& sim) {
  const std::size_t n = sim.rows();
  if (n < 2) return {0.0, 0.0};
  double sum = 0.0;
  double max = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double s = sim.at(i, j);
      sum += s;
      max = std::max(max, s);
    }
  }
  return {sum / double(n * (n - 1)), max};
}

template <typename T>
InfoNce<T> info_nce(Graph<T>& g, Var sim, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("info_nce: temperature must be positive");
  const auto& s = g.value(sim);
  if (s.rank() != 2 || s.rows() != s.cols()) {
    throw ShapeError("info_nce: similarity must be square, got " + shape_string(s.dims()));
  }
  if (!s.all_finite()) throw TrainingError("info_nce: non-finite similarity");

  const T tau = static_cast<T>(temperature);
  Var v2t = ops::trace(g, ops::log_softmax_rows(g, sim, tau));
  Var t2v = ops::trace(g, ops::log_softmax_rows(g, ops::transpose(g, sim), tau));
  Var total = ops::scale(g, ops::add(g, v2t, t2v), T(-1));

  InfoNce<T> out;
  out.total = total;
  auto& r = out.report;
  r.batch = s.rows();
  const double n = double(r.batch);
  r.video_to_text = -double(g.value(v2t)[0]) / n;
  r.text_to_video = -double(g.value(t2v)[0]) / n;
  r.total = double(g.value(total)[0]);
  std::tie(r.offdiag_mean, r.offdiag_max) = offdiag_stats(s);
  return out;
}

template <typename T>
LossReport info_nce(const Tensor<T>& sim, double temperature) {
  Graph<T> g;
  return info_nce(g, g.bind(sim, false), temperature).report;
}

#define VCLIP_INSTANTIATE_OBJECTIVE(T)                                                 \
  template Var similarity<T>(Graph<T>&, Var, Var, const ObjectiveConfig&);             \
  template Tensor<T> similarity<T>(const Tensor<T>&, const Tensor<T>&);                \
  template InfoNce<T> info_nce<T>(Graph<T>&, Var, double);                             \
  template LossReport info_nce<T>(const Tensor<T>&, double);                           \
  template std::pair<double, double> offdiag_stats<T>(const Tensor<T>&);

VCLIP_INSTANTIATE_OBJECTIVE(float)
VCLIP_INSTANTIATE_OBJECTIVE(double)

}  // namespace vclip
