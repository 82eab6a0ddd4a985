#include "talign/losses.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "talign/errors.hpp"

namespace talign::losses {

void validate(const LossWeights& w) {
  if (w.lambda_center < 0 || w.lambda_denoise < 0 || w.lambda_diffusion < 0 ||
      !std::isfinite(w.lambda_center) || !std::isfinite(w.lambda_denoise) ||
      !std::isfinite(w.lambda_diffusion)) {
    throw std::invalid_argument("LossWeights: weights must be finite and >= 0");
  }
}

double total_loss(const LossComponents& c, const LossWeights& w, int stage) {
  if (stage != 1 && stage != 2) {
    throw std::invalid_argument("total_loss: stage must be 1 or 2, got " +
                                std::to_string(stage));
  }
  double total = c.rec + w.lambda_center * c.center + w.lambda_denoise * c.denoise;
  if (stage == 1) total += w.lambda_diffusion * c.diffusion;
  return total;
}

namespace {

void check_sets(const char* op, const geom::TransformSet& pred,
                const geom::TransformSet& target, const geom::Dentition& input) {
  if (pred.size() != input.tooth_count() || target.size() != input.tooth_count()) {
    throw ShapeError(op,
                     "[" + std::to_string(pred.size()) + "] pred / [" +
                         std::to_string(target.size()) + "] target transforms",
                     "[" + std::to_string(input.tooth_count()) + "] teeth");
  }
  if (input.valid_count() == 0) {
    throw std::invalid_argument(std::string(op) + ": no valid teeth");
  }
}

}  // namespace

double reconstruction_loss(const geom::TransformSet& pred, const geom::TransformSet& target,
                           const geom::Dentition& input) {
  check_sets("reconstruction_loss", pred, target, input);
  double sum = 0.0;
  std::size_t n_points = 0;
  for (int i = 0; i < input.tooth_count(); ++i) {
    if (!input.valid(i)) continue;
    const auto s = static_cast<std::size_t>(i);
    const auto p = geom::apply_transform(pred.transforms[s], input.teeth[s]);
    const auto t = geom::apply_transform(target.transforms[s], input.teeth[s]);
    sum += (p.points - t.points).cwiseAbs().sum();
    n_points += static_cast<std::size_t>(input.teeth[s].points.rows());
  }
  return sum / static_cast<double>(n_points);
}

double centroid_loss(const geom::TransformSet& pred, const geom::TransformSet& target,
                     const geom::Dentition& input) {
  check_sets("centroid_loss", pred, target, input);
  double sum = 0.0;
  int m_valid = 0;
  for (int i = 0; i < input.tooth_count(); ++i) {
    if (!input.valid(i)) continue;
    const auto s = static_cast<std::size_t>(i);
    const auto p = geom::apply_transform(pred.transforms[s], input.teeth[s]);
    const auto t = geom::apply_transform(target.transforms[s], input.teeth[s]);
    sum += (geom::centroid(p) - geom::centroid(t)).cwiseAbs().sum();
    ++m_valid;
  }
  return sum / static_cast<double>(m_valid);
}

namespace {

void check_clouds(const char* op, const geom::Dentition& a, const geom::Dentition& b) {
  if (a.tooth_count() != b.tooth_count()) {
    throw ShapeError(op, "[" + std::to_string(a.tooth_count()) + "] teeth",
                     "[" + std::to_string(b.tooth_count()) + "] teeth");
  }
  for (int i = 0; i < a.tooth_count(); ++i) {
    const auto s = static_cast<std::size_t>(i);
    if (a.validity[s] != b.validity[s]) {
      throw std::invalid_argument(std::string(op) + ": validity masks differ at tooth " +
                                  std::to_string(i));
    }
    if (a.validity[s] && a.teeth[s].points.rows() != b.teeth[s].points.rows()) {
      throw ShapeError(op, "[" + std::to_string(a.teeth[s].points.rows()) + ",3]",
                       "[" + std::to_string(b.teeth[s].points.rows()) + ",3]");
    }
  }
}

}  // namespace

double tre(const geom::Dentition& pred_cloud, const geom::Dentition& target_cloud) {
  check_clouds("tre", pred_cloud, target_cloud);
  double sum = 0.0;
  std::size_t n = 0;
  for (int i = 0; i < pred_cloud.tooth_count(); ++i) {
    if (!pred_cloud.valid(i)) continue;
    const auto s = static_cast<std::size_t>(i);
    const auto& a = pred_cloud.teeth[s].points;
    const auto& b = target_cloud.teeth[s].points;
    sum += (a - b).rowwise().norm().sum();
    n += static_cast<std::size_t>(a.rows());
  }
  if (n == 0) {
    throw std::invalid_argument("tre: no valid teeth");
  }
  return sum / static_cast<double>(n);
}

double aae(const geom::Dentition& pred_cloud, const geom::Dentition& target_cloud) {
  check_clouds("aae", pred_cloud, target_cloud);
  std::vector<geom::Vec3> target_centroids;
  std::vector<geom::Vec3> pred_centroids;
  std::vector<std::uint8_t> validity;
  for (int i = 0; i < pred_cloud.tooth_count(); ++i) {
    const auto s = static_cast<std::size_t>(i);
    if (pred_cloud.validity[s]) {
      target_centroids.push_back(geom::centroid(target_cloud.teeth[s]));
      pred_centroids.push_back(geom::centroid(pred_cloud.teeth[s]));
      validity.push_back(1);
    }
  }
  if (validity.size() < 5) {
    throw InsufficientDataError("aae: need at least 5 valid teeth, have " +
                                std::to_string(validity.size()));
  }
  const geom::ArchCurve curve = geom::fit_arch_curve(target_centroids, validity);
  double sum = 0.0;
  for (const auto& c : pred_centroids) {
    sum += geom::point_to_curve_distance(c, curve);
  }
  return sum / static_cast<double>(pred_centroids.size());
}

MetricsReport MetricsReport::from_samples(std::vector<SampleMetrics> rows) {
  MetricsReport r;
  r.per_sample = std::move(rows);
  if (r.per_sample.empty()) return r;
  const double n = static_cast<double>(r.per_sample.size());
  for (const auto& s : r.per_sample) {
    r.tre_mean += s.tre;
    r.aae_mean += s.aae;
  }
  r.tre_mean /= n;
  r.aae_mean /= n;
  double vt = 0.0, va = 0.0;
  for (const auto& s : r.per_sample) {
    vt += (s.tre - r.tre_mean) * (s.tre - r.tre_mean);
    va += (s.aae - r.aae_mean) * (s.aae - r.aae_mean);
  }
  r.tre_std = std::sqrt(vt / n);
  r.aae_std = std::sqrt(va / n);
  return r;
}

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string to_csv(const MetricsReport& report) {
  std::string out = "id,tre,aae\n";
  for (const auto& s : report.per_sample) {
    out += s.id + "," + format_double(s.tre) + "," + format_double(s.aae) + "\n";
  }
  out += "mean," + format_double(report.tre_mean) + "," + format_double(report.aae_mean) + "\n";
  out += "std," + format_double(report.tre_std) + "," + format_double(report.aae_std) + "\n";
  return out;
}

std::string to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["tre_mean"] = report.tre_mean;
  j["tre_std"] = report.tre_std;
  j["aae_mean"] = report.aae_mean;
  j["aae_std"] = report.aae_std;
  j["per_sample"] = nlohmann::ordered_json::array();
  for (const auto& s : report.per_sample) {
    j["per_sample"].push_back({{"id", s.id}, {"tre", s.tre}, {"aae", s.aae}});
  }
  return j.dump(2) + "\n";
}

}  // namespace talign::losses
