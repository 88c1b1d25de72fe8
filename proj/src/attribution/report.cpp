#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "urlt/attribution.hpp"
#include "urlt/data.hpp"
#include "urlt/error.hpp"

namespace urlt {
namespace {

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

const std::unordered_set<std::string_view>& dictionary() {
  static const std::unordered_set<std::string_view> words = [] {
    const auto w = common_words();
    return std::unordered_set<std::string_view>(w.begin(), w.end());
  }();
  return words;
}

bool segments_into_words(std::string_view s) {
  for (char c : s)
    if (!std::islower(static_cast<unsigned char>(c))) return false;
  // reachable[i]: s[0, i) is a concatenation of words
  std::vector<bool> reachable(s.size() + 1, false);
  reachable[0] = true;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!reachable[i]) continue;
    for (std::size_t j = i + 1; j <= s.size(); ++j)
      if (dictionary().contains(s.substr(i, j - i))) reachable[j] = true;
  }
  return reachable[s.size()];
}

std::string printable(unsigned char c) {
  if (c >= 0x21 && c < 0x7f) return std::string(1, static_cast<char>(c));
  char buf[8];
  std::snprintf(buf, sizeof buf, "\\x%02x", c);
  return buf;
}

std::string number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string to_string(CharCategory category) {
  switch (category) {
    case CharCategory::scaffold: return "scaffold";
    case CharCategory::dictionary: return "dictionary";
    case CharCategory::high_entropy: return "high_entropy";
    case CharCategory::other: return "other";
  }
  return "?";
}

std::vector<Segment> segment_url(const std::string& url) {
  std::vector<Segment> out;
  std::size_t pos = 0;
  const auto scheme_end = url.find("://");
  if (scheme_end != std::string::npos) {
    pos = scheme_end + 3;
    out.push_back({0, pos, CharCategory::scaffold});
  }
  std::size_t host_end = url.find_first_of("/?#", pos);
  if (host_end == std::string::npos) host_end = url.size();
  std::size_t tld_begin = url.rfind('.', host_end);
  if (tld_begin == std::string::npos || tld_begin < pos) tld_begin = host_end;

  auto runs = [&](std::size_t from, std::size_t to) {
    std::size_t i = from;
    while (i < to) {
      std::size_t j = i;
      if (!is_alnum(url[i])) {
        while (j < to && !is_alnum(url[j])) ++j;
        out.push_back({i, j, CharCategory::other});
      } else {
        while (j < to && is_alnum(url[j])) ++j;
        const std::string_view run(url.data() + i, j - i);
        CharCategory c = CharCategory::other;
        if (segments_into_words(run))
          c = CharCategory::dictionary;
        else if (run.size() >= 6)
          c = CharCategory::high_entropy;
        out.push_back({i, j, c});
      }
      i = j;
    }
  };
  runs(pos, tld_begin);
  if (tld_begin < host_end) out.push_back({tld_begin, host_end, CharCategory::scaffold});
  runs(host_end, url.size());
  return out;
}

double CategoryStats::mean_per_segment() const {
  return segments ? total / static_cast<double>(segments) : 0.0;
}

double CategoryStats::mean_per_character() const {
  return characters ? total / static_cast<double>(characters) : 0.0;
}

AttributionReport summarize(std::vector<Attribution> attributions) {
  AttributionReport report;
  for (const auto& a : attributions) {
    for (const auto& seg : segment_url(a.url)) {
      auto& stats = report.categories[static_cast<std::size_t>(seg.category)];
      ++stats.segments;
      stats.characters += seg.end - seg.begin;
      for (std::size_t i = seg.begin; i < seg.end; ++i) stats.total += a.contributions[i];
    }
    report.max_relative_residual = std::max(report.max_relative_residual, a.relative_residual());
  }
  report.attributions = std::move(attributions);
  return report;
}

std::string format_report(const AttributionReport& report) {
  std::ostringstream os;
  os << "url_index\tposition\tbyte\tchar\tcontribution\n";
  const auto& all = report.attributions;
  for (std::size_t u = 0; u < all.size(); ++u)
    for (std::size_t i = 0; i < all[u].url.size(); ++i) {
      const auto byte = static_cast<unsigned char>(all[u].url[i]);
      os << u << '\t' << i << '\t' << static_cast<int>(byte) << '\t' << printable(byte) << '\t'
         << number(all[u].contributions[i]) << '\n';
    }
  if (all.empty()) return os.str();

  os << "\ncategory\tsegments\tcharacters\tmean_segment_contribution\tmean_char_contribution\n";
  for (std::size_t c = 0; c < kCharCategories; ++c) {
    const auto& s = report.categories[c];
    os << to_string(static_cast<CharCategory>(c)) << '\t' << s.segments << '\t' << s.characters << '\t'
       << number(s.mean_per_segment()) << '\t' << number(s.mean_per_character()) << '\n';
  }
  os << "\nurl_index\tlength\tsample_logit\tbaseline_logit\tcontribution_sum\tresidual\trelative_residual\tsteps\n";
  for (std::size_t u = 0; u < all.size(); ++u) {
    const auto& a = all[u];
    os << u << '\t' << a.url.size() << '\t' << number(a.sample_score) << '\t' << number(a.baseline_score) << '\t'
       << number(a.contribution_sum()) << '\t' << number(a.residual) << '\t' << number(a.relative_residual())
       << '\t' << a.steps << '\n';
  }
  return os.str();
}

AttributionReport attribute_report(const TransformerModel& model, std::span<const std::string> urls,
                                   std::size_t steps, const std::filesystem::path& path) {
  std::vector<Attribution> attributions;
  attributions.reserve(urls.size());
  for (const auto& url : urls) attributions.push_back(integrated_gradients(model, url, steps));
  AttributionReport report = summarize(std::move(attributions));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write attribution report " + path.string());
  out << format_report(report);
  if (!out) throw IoError("failed writing attribution report " + path.string());
  return report;
}

}  // namespace urlt
