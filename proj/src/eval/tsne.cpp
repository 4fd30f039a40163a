#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

#include "pvc/eval.hpp"

namespace pvc::eval {

namespace {

// Conditional distribution row for point i at a given precision; returns its
// Shannon entropy and fills row (row[i] stays 0).
double hbeta(const std::vector<double>& d2_row, i64 i, double beta, std::vector<double>& row) {
  const i64 n = static_cast<i64>(row.size());
  double sum = 0.0;
  for (i64 j = 0; j < n; ++j) {
    row[static_cast<size_t>(j)] = j == i ? 0.0 : std::exp(-beta * d2_row[static_cast<size_t>(j)]);
    sum += row[static_cast<size_t>(j)];
  }
  if (sum <= 0.0) sum = std::numeric_limits<double>::min();
  double dot = 0.0;
  for (i64 j = 0; j < n; ++j) dot += d2_row[static_cast<size_t>(j)] * row[static_cast<size_t>(j)];
  const double h = std::log(sum) + beta * dot / sum;
  for (i64 j = 0; j < n; ++j) row[static_cast<size_t>(j)] /= sum;
  return h;
}

}  // namespace

Tensor project_embeddings(const Tensor& emb, double perplexity, i64 iters, u64 seed) {
  require_arg(emb.shape.size() == 2, "projection: expected an (n, d) embedding matrix");
  const i64 n = emb.dim(0), d = emb.dim(1);
  require_arg(n >= 2, "projection: need at least two points");
  require_arg(iters > 0, "projection: iters must be positive");
  require_arg(perplexity > 0.0, "projection: perplexity must be positive");
  const double perp = std::max(1.0, std::min(perplexity, static_cast<double>(n - 1) / 3.0));
  const double target_h = std::log(perp);

  // pairwise squared distances in the input space
  std::vector<std::vector<double>> d2(static_cast<size_t>(n),
                                      std::vector<double>(static_cast<size_t>(n), 0.0));
  for (i64 i = 0; i < n; ++i) {
    for (i64 j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (i64 k = 0; k < d; ++k) {
        const double v = emb.at(i, k) - emb.at(j, k);
        s += v * v;
      }
      d2[static_cast<size_t>(i)][static_cast<size_t>(j)] = s;
      d2[static_cast<size_t>(j)][static_cast<size_t>(i)] = s;
    }
  }

  // per-point precision search so each conditional matches the perplexity
  std::vector<std::vector<double>> pc(static_cast<size_t>(n),
                                      std::vector<double>(static_cast<size_t>(n), 0.0));
  for (i64 i = 0; i < n; ++i) {
    double beta = 1.0;
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    std::vector<double>& row = pc[static_cast<size_t>(i)];
    for (int it = 0; it < 50; ++it) {
      const double h = hbeta(d2[static_cast<size_t>(i)], i, beta, row);
      const double diff = h - target_h;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0.0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
      } else {
        hi = beta;
        beta = std::isinf(lo) ? beta / 2.0 : (beta + lo) / 2.0;
      }
    }
  }

  // symmetrized joint distribution
  std::vector<std::vector<double>> p(static_cast<size_t>(n),
                                     std::vector<double>(static_cast<size_t>(n), 0.0));
  for (i64 i = 0; i < n; ++i)
    for (i64 j = 0; j < n; ++j)
      p[static_cast<size_t>(i)][static_cast<size_t>(j)] =
          std::max((pc[static_cast<size_t>(i)][static_cast<size_t>(j)] +
                    pc[static_cast<size_t>(j)][static_cast<size_t>(i)]) /
                       (2.0 * static_cast<double>(n)),
                   1e-12);

  Rng rng(mix64(seed));
  Tensor y({n, 2});
  for (i64 i = 0; i < n; ++i)
    for (i64 c = 0; c < 2; ++c) y.at(i, c) = rng.normal() * 1e-4;

  std::vector<double> inc(static_cast<size_t>(n) * 2, 0.0);
  std::vector<double> gains(static_cast<size_t>(n) * 2, 1.0);
  std::vector<double> grad(static_cast<size_t>(n) * 2, 0.0);
  std::vector<std::vector<double>> qnum(static_cast<size_t>(n),
                                        std::vector<double>(static_cast<size_t>(n), 0.0));
  const double lr = 200.0;

  for (i64 iter = 0; iter < iters; ++iter) {
    const double exaggeration = iter < 100 ? 4.0 : 1.0;
    const double momentum = iter < 250 ? 0.5 : 0.8;

    double qsum = 0.0;
    for (i64 i = 0; i < n; ++i) {
      for (i64 j = i + 1; j < n; ++j) {
        const double dx = y.at(i, 0) - y.at(j, 0);
        const double dy = y.at(i, 1) - y.at(j, 1);
        const double q = 1.0 / (1.0 + dx * dx + dy * dy);
        qnum[static_cast<size_t>(i)][static_cast<size_t>(j)] = q;
        qnum[static_cast<size_t>(j)][static_cast<size_t>(i)] = q;
        qsum += 2.0 * q;
      }
    }
    if (qsum <= 0.0) qsum = std::numeric_limits<double>::min();

    std::fill(grad.begin(), grad.end(), 0.0);
    for (i64 i = 0; i < n; ++i) {
      for (i64 j = 0; j < n; ++j) {
        if (j == i) continue;
        const double qn = qnum[static_cast<size_t>(i)][static_cast<size_t>(j)];
        const double pij = exaggeration * p[static_cast<size_t>(i)][static_cast<size_t>(j)];
        const double qij = std::max(qn / qsum, 1e-12);
        const double mult = 4.0 * (pij - qij) * qn;
        grad[static_cast<size_t>(i * 2 + 0)] += mult * (y.at(i, 0) - y.at(j, 0));
        grad[static_cast<size_t>(i * 2 + 1)] += mult * (y.at(i, 1) - y.at(j, 1));
      }
    }

    for (size_t k = 0; k < grad.size(); ++k) {
      const bool same_sign = (grad[k] > 0.0) == (inc[k] > 0.0);
      gains[k] = same_sign ? std::max(gains[k] * 0.8, 0.01) : gains[k] + 0.2;
      inc[k] = momentum * inc[k] - lr * gains[k] * grad[k];
    }
    double mean0 = 0.0, mean1 = 0.0;
    for (i64 i = 0; i < n; ++i) {
      y.at(i, 0) += inc[static_cast<size_t>(i * 2 + 0)];
      y.at(i, 1) += inc[static_cast<size_t>(i * 2 + 1)];
      mean0 += y.at(i, 0);
      mean1 += y.at(i, 1);
    }
    mean0 /= static_cast<double>(n);
    mean1 /= static_cast<double>(n);
    for (i64 i = 0; i < n; ++i) {
      y.at(i, 0) -= mean0;
      y.at(i, 1) -= mean1;
    }
  }
  return y;
}

void write_projection(const Tensor& xy, const std::vector<std::string>& labels,
                      const std::string& svg_path, const std::string& txt_path) {
  require_arg(xy.shape.size() == 2 && xy.dim(1) == 2, "projection: expected (n, 2) coordinates");
  const i64 n = xy.dim(0);
  require_arg(static_cast<i64>(labels.size()) == n, "projection: one label per point required");
  require_arg(n > 0, "projection: nothing to plot");

  {
    std::ofstream out(txt_path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), "cannot write '" + txt_path + "'");
    char line[256];
    for (i64 i = 0; i < n; ++i) {
      std::snprintf(line, sizeof(line), "%s\t%.8g\t%.8g\n", labels[static_cast<size_t>(i)].c_str(),
                    xy.at(i, 0), xy.at(i, 1));
      out << line;
    }
  }

  double xmin = xy.at(0, 0), xmax = xy.at(0, 0), ymin = xy.at(0, 1), ymax = xy.at(0, 1);
  for (i64 i = 0; i < n; ++i) {
    xmin = std::min(xmin, xy.at(i, 0));
    xmax = std::max(xmax, xy.at(i, 0));
    ymin = std::min(ymin, xy.at(i, 1));
    ymax = std::max(ymax, xy.at(i, 1));
  }
  const double spanx = std::max(xmax - xmin, 1e-9);
  const double spany = std::max(ymax - ymin, 1e-9);

  std::vector<std::string> uniq(labels.begin(), labels.end());
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  static const char* kPalette[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44",
                                   "#66ccee", "#aa3377", "#bbbbbb", "#222255"};
  const size_t n_colors = sizeof(kPalette) / sizeof(kPalette[0]);
  auto color_of = [&](const std::string& label) {
    const size_t idx = static_cast<size_t>(
        std::lower_bound(uniq.begin(), uniq.end(), label) - uniq.begin());
    return kPalette[idx % n_colors];
  };

  const double w = 640.0, h = 480.0, margin = 40.0;
  std::ofstream out(svg_path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), "cannot write '" + svg_path + "'");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  out << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  char buf[256];
  for (i64 i = 0; i < n; ++i) {
    const double px = margin + (xy.at(i, 0) - xmin) / spanx * (w - 2 * margin);
    const double py = h - margin - (xy.at(i, 1) - ymin) / spany * (h - 2 * margin);
    std::snprintf(buf, sizeof(buf), "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"4\" fill=\"%s\"/>\n", px,
                  py, color_of(labels[static_cast<size_t>(i)]));
    out << buf;
  }
  double ly = margin;
  for (const auto& label : uniq) {
    std::snprintf(buf, sizeof(buf),
                  "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"5\" fill=\"%s\"/>"
                  "<text x=\"%.2f\" y=\"%.2f\" font-size=\"12\" font-family=\"sans-serif\">",
                  w - margin - 110.0, ly, color_of(label), w - margin - 100.0, ly + 4.0);
    out << buf << label << "</text>\n";
    ly += 18.0;
  }
  out << "</svg>\n";
}

}  // namespace pvc::eval
