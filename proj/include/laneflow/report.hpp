#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "laneflow/dataset.hpp"

namespace laneflow::report {

/// One plotted series: y per bin; negative values are treated as gaps for
/// sparse series (per-cycle points).
struct Series {
  std::string label;
  std::string color;
  std::vector<double> values;
  bool points_only = false;
};

/// Minimal SVG line chart. Bins on the x axis, vehicles on the y axis.
inline std::string render_chart(const std::string& title, const std::vector<Series>& series) {
  const double W = 860, H = 360, L = 60, R = 20, T = 36, B = 44;
  double y_max = 1.0;
  std::size_t n = 0;
  for (const auto& s : series) {
    n = std::max(n, s.values.size());
    for (double v : s.values) y_max = std::max(y_max, v);
  }
  y_max *= 1.08;
  auto px = [&](std::size_t i) {
    return L + (W - L - R) * (n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.5);
  };
  auto py = [&](double v) { return H - B - (H - T - B) * (v / y_max); };

  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
  os << "<rect width='" << W << "' height='" << H << "' fill='white'/>\n";
  os << "<text x='" << L << "' y='20' font-family='sans-serif' font-size='14'>" << title
     << "</text>\n";
  // axes and gridlines
  os << "<line x1='" << L << "' y1='" << T << "' x2='" << L << "' y2='" << H - B
     << "' stroke='black'/>\n";
  os << "<line x1='" << L << "' y1='" << H - B << "' x2='" << W - R << "' y2='" << H - B
     << "' stroke='black'/>\n";
  for (int g = 0; g <= 4; ++g) {
    double v = y_max * g / 4.0;
    os << "<line x1='" << L << "' y1='" << py(v) << "' x2='" << W - R << "' y2='" << py(v)
       << "' stroke='#dddddd'/>\n";
    os << "<text x='6' y='" << py(v) + 4 << "' font-family='sans-serif' font-size='11'>"
       << static_cast<int>(v + 0.5) << "</text>\n";
  }
  os << "<text x='" << (W / 2 - 40) << "' y='" << H - 10
     << "' font-family='sans-serif' font-size='11'>30-second bin</text>\n";
  os << "<text x='12' y='" << T - 6 << "' font-family='sans-serif' font-size='11'>vehicles"
     << "</text>\n";

  double legend_x = L + 8;
  for (const auto& s : series) {
    if (s.points_only) {
      for (std::size_t i = 0; i < s.values.size(); ++i)
        if (s.values[i] >= 0.0)
          os << "<circle cx='" << px(i) << "' cy='" << py(s.values[i]) << "' r='3' fill='"
             << s.color << "'/>\n";
    } else {
      os << "<polyline fill='none' stroke='" << s.color << "' stroke-width='1.6' points='";
      for (std::size_t i = 0; i < s.values.size(); ++i) {
        if (s.values[i] < 0.0) continue;
        os << px(i) << ',' << py(s.values[i]) << ' ';
      }
      os << "'/>\n";
    }
    os << "<rect x='" << legend_x << "' y='" << T + 4 << "' width='10' height='10' fill='"
       << s.color << "'/>\n";
    os << "<text x='" << legend_x + 14 << "' y='" << T + 13
       << "' font-family='sans-serif' font-size='11'>" << s.label << "</text>\n";
    legend_x += 14.0 + 7.2 * static_cast<double>(s.label.size()) + 18.0;
  }
  os << "</svg>\n";
  return os.str();
}

/// Per-lane comparison chart: binned ground-truth queue targets, model
/// predictions, and the aligned estimator baseline.
inline std::string lane_queue_chart(const data::Sample& sample, const Tensor& predictions,
                                    std::size_t lane) {
  std::size_t T = sample.y.dim(1);
  Series target{"max queue (truth)", "#222222", {}, true};
  Series nn{"model", "#1f77b4", {}, false};
  Series baseline{"pde estimate", "#d62728", {}, true};
  for (std::size_t t = 0; t < T; ++t) {
    double masked = sample.mask[(lane * T + t) * 2];
    target.values.push_back(masked != 0.0 ? sample.y[(lane * T + t) * 2] : -1.0);
    nn.values.push_back(predictions[(lane * T + t) * 2]);
    baseline.values.push_back(sample.liu_eval[lane * T + t]);
  }
  return render_chart("lane " + std::to_string(lane) + " per-cycle max queue (" + sample.sim_id +
                          ")",
                      {target, nn, baseline});
}

/// Lanes ranked by total queue target, busiest first.
inline std::vector<std::size_t> busiest_lanes(const data::Sample& sample, std::size_t count) {
  std::size_t n = sample.y.dim(0), T = sample.y.dim(1);
  std::vector<std::pair<double, std::size_t>> load;
  for (std::size_t lane = 0; lane < n; ++lane) {
    double total = 0;
    for (std::size_t t = 0; t < T; ++t)
      if (sample.mask[(lane * T + t) * 2] != 0.0) total += sample.y[(lane * T + t) * 2];
    load.push_back({total, lane});
  }
  std::sort(load.begin(), load.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < std::min(count, load.size()); ++i) out.push_back(load[i].second);
  return out;
}

}  // namespace laneflow::report
