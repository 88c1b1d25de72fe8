#include <fstream>
#include <sstream>

#include "urlt/data.hpp"
#include "urlt/error.hpp"

namespace urlt {

bool UrlDataset::labeled() const {
  for (const auto& r : records)
    if (!r.label) return false;
  return true;
}

std::size_t UrlDataset::count_label(int label) const {
  std::size_t n = 0;
  for (const auto& r : records) n += r.label == label;
  return n;
}

std::vector<int> UrlDataset::labels() const {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (!r.label) throw InputError("dataset '" + provenance + "' is not labeled");
    out.push_back(*r.label);
  }
  return out;
}

std::vector<EncodedUrl> UrlDataset::encode(EncodeMode mode, std::size_t context_window) const {
  std::vector<EncodedUrl> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(urlt::encode(r.url, mode, context_window, r.label));
  return out;
}

UrlDataset parse_tsv(std::string_view text, bool labeled, const std::string& source) {
  UrlDataset data;
  data.provenance = source;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    auto fail = [&](const std::string& why) {
      return ParseError(source + ": line " + std::to_string(line_no) + ": " + why);
    };
    const auto tab = line.find('\t');
    const std::string_view url = line.substr(0, tab);
    if (url.empty()) throw fail("empty URL");
    UrlRecord record{std::string(url), std::nullopt};
    if (tab == std::string_view::npos) {
      if (labeled) throw fail("expected url<TAB>label");
    } else {
      const std::string_view label = line.substr(tab + 1);
      if (label.find('\t') != std::string_view::npos) throw fail("too many fields");
      if (label != "0" && label != "1") throw fail("label must be 0 or 1, got '" + std::string(label) + "'");
      if (labeled) record.label = label == "1" ? 1 : 0;
    }
    data.records.push_back(std::move(record));
  }
  return data;
}

UrlDataset load_tsv(const std::filesystem::path& path, bool labeled) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_tsv(buffer.str(), labeled, path.string());
}

std::string format_tsv(const UrlDataset& data) {
  std::string out;
  for (const auto& r : data.records) {
    if (r.url.empty() || r.url.find_first_of("\t\n") != std::string::npos)
      throw InputError("URL cannot be written as TSV: contains tab or newline");
    out += r.url;
    if (r.label) {
      out += '\t';
      out += *r.label ? '1' : '0';
    }
    out += '\n';
  }
  return out;
}

void save_tsv(const UrlDataset& data, const std::filesystem::path& path) {
  const std::string text = format_tsv(data);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace urlt
