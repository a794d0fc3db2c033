#include "sdat/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace sdat {

SmoothingMode parse_smoothing_mode(const std::string& s) {
  if (s == "none") return SmoothingMode::kNone;
  if (s == "task") return SmoothingMode::kTask;
  if (s == "adv") return SmoothingMode::kAdv;
  if (s == "all") return SmoothingMode::kAll;
  throw std::invalid_argument("unknown smoothing mode: " + s);
}

std::string to_string(SmoothingMode m) {
  switch (m) {
    case SmoothingMode::kNone: return "none";
    case SmoothingMode::kTask: return "task";
    case SmoothingMode::kAdv: return "adv";
    case SmoothingMode::kAll: return "all";
  }
  return "?";
}

namespace {

void require_open_unit(std::span<const double> v, const char* what) {
  for (double d : v)
    if (!(d > 0.0 && d < 1.0))
      throw std::invalid_argument(std::string(what) + ": discriminator output outside (0, 1)");
}

}  // namespace

double domain_discrepancy(std::span<const double> d_src, std::span<const double> d_tgt) {
  if (d_src.empty() || d_tgt.empty())
    throw std::invalid_argument("domain_discrepancy: empty batch");
  require_open_unit(d_src, "domain_discrepancy");
  require_open_unit(d_tgt, "domain_discrepancy");
  double src = 0.0;
  for (double d : d_src) src += std::log(d);
  double tgt = 0.0;
  for (double d : d_tgt) tgt += std::log(1.0 - d);
  return src / static_cast<double>(d_src.size()) + tgt / static_cast<double>(d_tgt.size());
}

double domain_accuracy(std::span<const double> d_src, std::span<const double> d_tgt) {
  if (d_src.empty() || d_tgt.empty()) throw std::invalid_argument("domain_accuracy: empty batch");
  require_open_unit(d_src, "domain_accuracy");
  require_open_unit(d_tgt, "domain_accuracy");
  std::int64_t correct = 0;
  for (double d : d_src)
    if (d > 0.5) ++correct;
  for (double d : d_tgt)
    if (d <= 0.5) ++correct;  // tie counts as a target prediction
  return static_cast<double>(correct) / static_cast<double>(d_src.size() + d_tgt.size());
}

}  // namespace sdat
