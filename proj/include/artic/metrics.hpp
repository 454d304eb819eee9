#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "artic/corpus.hpp"

namespace artic {

inline std::size_t edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

struct PerResult {
  double per = 0.0;
  bool empty_reference = false;
};

// (S+D+I) / |reference|; an empty reference is scored against max(1, |ref|)
// and flagged.
inline PerResult per(const std::vector<int>& hypothesis, const std::vector<int>& reference) {
  PerResult r;
  r.empty_reference = reference.empty();
  std::size_t d = edit_distance(hypothesis, reference);
  r.per = static_cast<double>(d) / static_cast<double>(std::max<std::size_t>(1, reference.size()));
  return r;
}

struct PhonemeAccuracy {
  std::size_t correct = 0, total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

struct TopkTable {
  std::map<int, PhonemeAccuracy> per_phoneme;  // phoneme index -> stats; absent if no frames
  double macro() const {  // frame-weighted
    std::size_t c = 0, n = 0;
    for (const auto& [p, a] : per_phoneme) {
      c += a.correct;
      n += a.total;
    }
    return n ? static_cast<double>(c) / static_cast<double>(n) : 0.0;
  }
};

// Frame t counts correct when its aligned label ranks in the top-k posterior
// classes with blank excluded from the ranking. Ties break toward the lower
// class index.
inline TopkTable topk_phoneme_accuracy(const std::vector<float>& posteriors, std::size_t T,
                                       std::size_t C, const Alignment& alignment, int k) {
  if (alignment.span() != T) throw ShapeError("posterior length does not match alignment span");
  TopkTable table;
  std::vector<int> classes(C - 1);
  for (std::size_t c = 1; c < C; ++c) classes[c - 1] = static_cast<int>(c);
  for (const auto& seg : alignment.segments) {
    auto& acc = table.per_phoneme[seg.phoneme];
    for (std::size_t t = seg.begin; t < seg.end; ++t) {
      const float* row = posteriors.data() + t * C;
      auto ranked = classes;
      std::stable_sort(ranked.begin(), ranked.end(), [&](int a, int b) {
        return row[a] > row[b];
      });
      bool hit = false;
      for (int i = 0; i < k && i < static_cast<int>(ranked.size()); ++i)
        if (ranked[static_cast<std::size_t>(i)] == seg.phoneme) hit = true;
      acc.total += 1;
      acc.correct += hit ? 1 : 0;
    }
  }
  return table;
}

struct ConfusionMatrix {
  std::size_t K = 0;                   // phoneme classes, blank excluded
  std::vector<std::size_t> counts;     // K x K, row = true phoneme-1, col = predicted-1
  std::vector<bool> populated;         // per row

  void init(std::size_t num_phonemes) {
    K = num_phonemes;
    counts.assign(K * K, 0);
    populated.assign(K, false);
  }

  void add(int true_phoneme, int predicted_phoneme) {
    counts[static_cast<std::size_t>(true_phoneme - 1) * K +
           static_cast<std::size_t>(predicted_phoneme - 1)] += 1;
    populated[static_cast<std::size_t>(true_phoneme - 1)] = true;
  }

  // Row-normalized percentages; rows with zero frames stay zero.
  std::vector<double> percent() const {
    std::vector<double> out(K * K, 0.0);
    for (std::size_t r = 0; r < K; ++r) {
      std::size_t total = 0;
      for (std::size_t c = 0; c < K; ++c) total += counts[r * K + c];
      if (!total) continue;
      for (std::size_t c = 0; c < K; ++c)
        out[r * K + c] = 100.0 * static_cast<double>(counts[r * K + c]) / static_cast<double>(total);
    }
    return out;
  }
};

// Top-1 predicted phoneme (blank excluded) per frame vs the aligned label.
inline ConfusionMatrix confusion(const std::vector<float>& posteriors, std::size_t T, std::size_t C,
                                 const Alignment& alignment) {
  if (alignment.span() != T) throw ShapeError("posterior length does not match alignment span");
  ConfusionMatrix m;
  m.init(C - 1);
  for (const auto& seg : alignment.segments)
    for (std::size_t t = seg.begin; t < seg.end; ++t) {
      const float* row = posteriors.data() + t * C;
      int best = 1;
      for (std::size_t c = 2; c < C; ++c)
        if (row[c] > row[best]) best = static_cast<int>(c);
      m.add(seg.phoneme, best);
    }
  return m;
}

struct EvalResult {
  double per = 0.0;
  double top1 = 0.0, top3 = 0.0;
  ConfusionMatrix matrix;
  std::size_t n_utterances = 0;
};

struct ReportRow {
  std::string name;
  std::string feature;
  std::string perturb = "none";
  std::string ablate = "none";
  double per = 0.0, top1 = 0.0, top3 = 0.0;
};

inline std::string csv_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline void write_report_csv(const std::vector<ReportRow>& rows,
                             const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  out << "name,feature,perturb,ablate,per,top1,top3\n";
  for (const auto& r : rows)
    out << r.name << ',' << r.feature << ',' << r.perturb << ',' << r.ablate << ','
        << csv_number(r.per) << ',' << csv_number(r.top1) << ',' << csv_number(r.top3) << '\n';
}

inline void write_confusion_csv(const ConfusionMatrix& m, const PhonemeInventory& inv,
                                const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  auto pct = m.percent();
  out << "true";
  for (std::size_t c = 0; c < m.K; ++c) out << ',' << inv.labels[c + 1];
  out << '\n';
  for (std::size_t r = 0; r < m.K; ++r) {
    if (!m.populated[r]) continue;
    out << inv.labels[r + 1];
    for (std::size_t c = 0; c < m.K; ++c) out << ',' << csv_number(pct[r * m.K + c]);
    out << '\n';
  }
}

// Minimal static SVG heatmap of the confusion matrix.
inline void write_confusion_svg(const ConfusionMatrix& m, const PhonemeInventory& inv,
                                const std::filesystem::path& path) {
  const int cell = 36, margin = 60;
  const int size = margin + cell * static_cast<int>(m.K) + 10;
  auto pct = m.percent();
  std::ofstream out(path, std::ios::binary);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
      << "\" font-family=\"monospace\" font-size=\"10\">\n";
  for (std::size_t r = 0; r < m.K; ++r) {
    out << "<text x=\"4\" y=\"" << margin + static_cast<int>(r) * cell + cell / 2
        << "\">" << inv.labels[r + 1] << "</text>\n";
    out << "<text x=\"" << margin + static_cast<int>(r) * cell + 4 << "\" y=\"" << margin - 8
        << "\">" << inv.labels[r + 1] << "</text>\n";
    for (std::size_t c = 0; c < m.K; ++c) {
      double v = pct[r * m.K + c];
      int shade = 255 - static_cast<int>(v * 2.55);
      out << "<rect x=\"" << margin + static_cast<int>(c) * cell << "\" y=\""
          << margin + static_cast<int>(r) * cell << "\" width=\"" << cell << "\" height=\"" << cell
          << "\" fill=\"rgb(255," << shade << ',' << shade << ")\" stroke=\"#999\"/>\n";
      char label[16];
      std::snprintf(label, sizeof label, "%.0f", v);
      out << "<text x=\"" << margin + static_cast<int>(c) * cell + 8 << "\" y=\""
          << margin + static_cast<int>(r) * cell + cell / 2 + 4 << "\">" << label << "</text>\n";
    }
  }
  out << "</svg>\n";
}

inline void write_per_bars_svg(const std::vector<ReportRow>& rows,
                               const std::filesystem::path& path) {
  const int barh = 22, margin = 140, width = 520;
  std::ofstream out(path, std::ios::binary);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << 20 + barh * static_cast<int>(rows.size()) << "\" font-family=\"monospace\" font-size=\"11\">\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    int y = 10 + barh * static_cast<int>(i);
    int w = static_cast<int>(std::min(1.0, rows[i].per) * (width - margin - 60));
    out << "<text x=\"4\" y=\"" << y + 14 << "\">" << rows[i].name << "</text>\n";
    out << "<rect x=\"" << margin << "\" y=\"" << y << "\" width=\"" << w << "\" height=\""
        << barh - 6 << "\" fill=\"#4477aa\"/>\n";
    out << "<text x=\"" << margin + w + 6 << "\" y=\"" << y + 14 << "\">" << csv_number(rows[i].per)
        << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace artic
