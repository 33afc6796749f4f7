#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "navkd/metrics.hpp"

namespace navkd {
namespace {

double path_weight(const EpisodeResult& r) {
    const double denom = std::max(r.path_length, r.oracle_length);
    return denom > 0.0 ? r.oracle_length / denom : 1.0;
}

}  // namespace

double success_rate(std::span<const EpisodeResult> results) {
    if (results.empty()) return 0.0;
    double n = 0.0;
    for (const auto& r : results) n += r.success ? 1.0 : 0.0;
    return n / static_cast<double>(results.size());
}

double spl(std::span<const EpisodeResult> results) {
    if (results.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& r : results)
        if (r.success) acc += path_weight(r);
    return acc / static_cast<double>(results.size());
}

std::pair<double, double> rgs_rgspl(std::span<const EpisodeResult> results) {
    if (results.empty()) return {0.0, 0.0};
    double rgs = 0.0, rgspl = 0.0;
    for (const auto& r : results)
        if (r.grounding_success) {
            rgs += 1.0;
            rgspl += path_weight(r);
        }
    const double n = static_cast<double>(results.size());
    return {rgs / n, rgspl / n};
}

MetricSummary summarize(std::span<const EpisodeResult> results) {
    MetricSummary s;
    s.sr = success_rate(results);
    s.spl = spl(results);
    std::tie(s.rgs, s.rgspl) = rgs_rgspl(results);
    s.episodes = results.size();
    return s;
}

double median(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("median of an empty sample");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("percentile of an empty sample");
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace navkd
