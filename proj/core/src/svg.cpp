#include "fuzzfuse/svg.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <vector>

namespace fuzzfuse::svg {

namespace {

std::string fixed(double value, int decimals) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.*f", decimals, value);
  return buffer;
}

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string importance_chart(const FeatureScreenReport& report, const std::string& title) {
  const std::size_t n = report.contribution_pct.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return report.contribution_pct[a] > report.contribution_pct[b];
  });
  std::vector<bool> kept(n, false);
  for (std::size_t j : report.retained) kept[j] = true;

  const double max_pct = n == 0 ? 1.0
                                : std::max(1.0, *std::max_element(report.contribution_pct.begin(),
                                                                  report.contribution_pct.end()));
  const int left = 90;
  const int bar_area = 420;
  const int row_h = 18;
  const int top = 40;
  const int width = left + bar_area + 80;
  const int height = top + static_cast<int>(n) * row_h + 30;
  auto x_of = [&](double pct) { return left + pct / max_pct * bar_area; };

  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
                    "\" height=\"" + std::to_string(height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + std::to_string(width / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
         escape(title) + "</text>\n";
  for (std::size_t row = 0; row < n; ++row) {
    const std::size_t j = order[row];
    const int y = top + static_cast<int>(row) * row_h;
    const double pct = report.contribution_pct[j];
    out += "<text x=\"" + std::to_string(left - 6) + "\" y=\"" + std::to_string(y + 12) +
           "\" text-anchor=\"end\">PC" + std::to_string(j) + "</text>\n";
    out += "<rect x=\"" + std::to_string(left) + "\" y=\"" + std::to_string(y + 2) + "\" width=\"" +
           fixed(x_of(pct) - left, 2) + "\" height=\"" + std::to_string(row_h - 4) + "\" fill=\"" +
           (kept[j] ? "#3b6fb6" : "#b8b8b8") + "\"/>\n";
    out += "<text x=\"" + fixed(x_of(pct) + 4, 2) + "\" y=\"" + std::to_string(y + 12) + "\">" +
           fixed(pct, 2) + "%</text>\n";
  }
  const double tx = x_of(report.threshold_pct);
  out += "<line x1=\"" + fixed(tx, 2) + "\" y1=\"" + std::to_string(top) + "\" x2=\"" + fixed(tx, 2) +
         "\" y2=\"" + std::to_string(top + static_cast<int>(n) * row_h) +
         "\" stroke=\"#c0392b\" stroke-dasharray=\"4,3\"/>\n";
  out += "<text x=\"" + fixed(tx + 3, 2) + "\" y=\"" + std::to_string(height - 10) +
         "\" fill=\"#c0392b\">threshold " + fixed(report.threshold_pct, 2) + "%</text>\n";
  out += "</svg>\n";
  return out;
}

std::string confusion_matrix(const ConfusionMatrix& cm, const std::string& title,
                             const std::array<std::string, 2>& class_names) {
  // counts[actual][predicted]
  const std::size_t counts[2][2] = {{cm.tn, cm.fp}, {cm.fn, cm.tp}};
  const int cell = 110;
  const int left = 130;
  const int top = 70;
  const int width = left + 2 * cell + 30;
  const int height = top + 2 * cell + 50;

  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
                    "\" height=\"" + std::to_string(height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + std::to_string(width / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
         escape(title) + "</text>\n";
  out += "<text x=\"" + std::to_string(left + cell) + "\" y=\"" + std::to_string(top - 28) +
         "\" text-anchor=\"middle\">Predicted</text>\n";
  out += "<text x=\"20\" y=\"" + std::to_string(top + cell) + "\" text-anchor=\"middle\" transform=\"rotate(-90 20 " +
         std::to_string(top + cell) + ")\">Actual</text>\n";
  for (int c = 0; c < 2; ++c) {
    out += "<text x=\"" + std::to_string(left + c * cell + cell / 2) + "\" y=\"" + std::to_string(top - 8) +
           "\" text-anchor=\"middle\">" + escape(class_names[static_cast<std::size_t>(c)]) + "</text>\n";
  }
  for (int r = 0; r < 2; ++r) {
    const double row_total = static_cast<double>(counts[r][0] + counts[r][1]);
    out += "<text x=\"" + std::to_string(left - 8) + "\" y=\"" + std::to_string(top + r * cell + cell / 2 + 4) +
           "\" text-anchor=\"end\">" + escape(class_names[static_cast<std::size_t>(r)]) + "</text>\n";
    for (int c = 0; c < 2; ++c) {
      const double share = row_total > 0.0 ? static_cast<double>(counts[r][c]) / row_total : 0.0;
      const int shade = 255 - static_cast<int>(share * 180.0);
      char fill[16];
      std::snprintf(fill, sizeof(fill), "#%02x%02xff", shade, shade);
      const int x = left + c * cell;
      const int y = top + r * cell;
      out += "<rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) + "\" width=\"" +
             std::to_string(cell) + "\" height=\"" + std::to_string(cell) + "\" fill=\"" + fill +
             "\" stroke=\"#333\"/>\n";
      out += "<text x=\"" + std::to_string(x + cell / 2) + "\" y=\"" + std::to_string(y + cell / 2) +
             "\" text-anchor=\"middle\" font-size=\"20\">" + std::to_string(counts[r][c]) + "</text>\n";
      out += "<text x=\"" + std::to_string(x + cell / 2) + "\" y=\"" + std::to_string(y + cell / 2 + 20) +
             "\" text-anchor=\"middle\">" + fixed(100.0 * share, 1) + "%</text>\n";
    }
  }
  out += "</svg>\n";
  return out;
}

}  // namespace fuzzfuse::svg
