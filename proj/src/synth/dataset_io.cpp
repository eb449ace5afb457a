// SPDX-License-Identifier: Apache-2.0
#include "metaxp/dataset_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <string_view>
#include <vector>

#include "metaxp/checksum.hpp"
#include "metaxp/error.hpp"

namespace metaxp::synth {

namespace {

constexpr std::string_view kMagic = "METAXP-DATASET 1";

void append_double(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

void append_section(std::string& out, const std::string& header, const std::vector<Utterance>& utts) {
  out += header + " " + std::to_string(utts.size()) + "\n";
  for (const auto& u : utts) {
    const std::size_t frames = u.features.rows(), fdim = u.features.cols();
    out += "utt " + u.id + " " + u.domain_id + " " + std::to_string(frames) + " " + std::to_string(fdim) + " " +
           std::to_string(u.labels.size());
    for (auto l : u.labels) out += " " + std::to_string(l);
    out += "\n";
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t f = 0; f < fdim; ++f) {
        if (f) out += ' ';
        append_double(out, u.features.at(t, f));
      }
      out += '\n';
    }
  }
}

std::vector<std::string_view> split_words(std::string_view line) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ') ++i;
    if (i > start) words.push_back(line.substr(start, i - start));
  }
  return words;
}

class LineReader {
 public:
  explicit LineReader(std::string_view text) : text_(text) {}

  bool done() const { return pos_ >= text_.size(); }
  std::size_t line_number() const { return line_; }

  std::string_view next(const char* expecting) {
    if (done()) throw ParseError(line_ + 1, std::string("unexpected end of file, expected ") + expecting);
    const std::size_t end = text_.find('\n', pos_);
    if (end == std::string_view::npos) throw ParseError(line_ + 1, "unterminated line");
    auto line = text_.substr(pos_, end - pos_);
    pos_ = end + 1;
    ++line_;
    return line;
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 0;
};

template <class T>
T parse_number(std::string_view word, std::size_t line, const char* what) {
  T value{};
  auto res = std::from_chars(word.data(), word.data() + word.size(), value);
  if (res.ec != std::errc() || res.ptr != word.data() + word.size()) {
    throw ParseError(line, std::string("bad ") + what + ": '" + std::string(word) + "'");
  }
  return value;
}

std::vector<Utterance> read_section(LineReader& in, std::size_t count) {
  std::vector<Utterance> utts;
  utts.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    auto head = split_words(in.next("utterance header"));
    const std::size_t ln = in.line_number();
    if (head.size() < 6 || head[0] != "utt") throw ParseError(ln, "expected utterance header");
    Utterance u;
    u.id = std::string(head[1]);
    u.domain_id = std::string(head[2]);
    const auto frames = parse_number<std::size_t>(head[3], ln, "frame count");
    const auto fdim = parse_number<std::size_t>(head[4], ln, "feature dim");
    const auto len = parse_number<std::size_t>(head[5], ln, "label count");
    if (frames == 0 || fdim == 0) throw ParseError(ln, "empty feature matrix");
    if (head.size() != 6 + len) throw ParseError(ln, "label count does not match header");
    for (std::size_t i = 0; i < len; ++i) u.labels.push_back(parse_number<std::size_t>(head[6 + i], ln, "label"));
    u.features = Tensor(Shape{frames, fdim});
    for (std::size_t t = 0; t < frames; ++t) {
      auto row = split_words(in.next("feature row"));
      if (row.size() != fdim) throw ParseError(in.line_number(), "feature row has wrong width");
      for (std::size_t f = 0; f < fdim; ++f) {
        u.features.at(t, f) = parse_number<double>(row[f], in.line_number(), "feature value");
      }
    }
    utts.push_back(std::move(u));
  }
  return utts;
}

}  // namespace

std::string format_dataset(const DatasetPartition& partition, const std::string& generation_json) {
  if (generation_json.find('\n') != std::string::npos) throw Error("generation JSON must be a single line");
  std::string out;
  out += std::string(kMagic) + "\n";
  out += "recipe " + partition.recipe + "\n";
  out += "generation " + generation_json + "\n";
  append_section(out, "section train", partition.train);
  append_section(out, "section test_source", partition.test_source);
  for (const auto& [domain, utts] : partition.test_accent) append_section(out, "section test_accent " + domain, utts);
  out += "end\n";
  Fnv1a64 sum;
  sum.update(out);
  out += "checksum " + to_hex(sum.digest()) + "\n";
  return out;
}

DatasetPartition parse_dataset(const std::string& text) {
  // Locate the trailer first so a truncated file never yields partial data.
  std::string_view view(text);
  std::size_t total_lines = 0;
  for (char c : view) total_lines += c == '\n';
  if (view.empty() || view.back() != '\n') throw ParseError(total_lines + 1, "truncated file (no final newline)");
  const std::size_t last_start = view.rfind('\n', view.size() - 2);
  const std::size_t trailer_pos = last_start == std::string_view::npos ? 0 : last_start + 1;
  auto trailer = split_words(view.substr(trailer_pos, view.size() - 1 - trailer_pos));
  if (trailer.size() != 2 || trailer[0] != "checksum") {
    throw ParseError(total_lines, "missing checksum trailer (truncated file?)");
  }
  Fnv1a64 sum;
  sum.update(view.substr(0, trailer_pos));
  if (to_hex(sum.digest()) != trailer[1]) throw IntegrityError("dataset checksum mismatch");

  LineReader in(view.substr(0, trailer_pos));
  if (in.next("magic") != kMagic) throw ParseError(1, "not a dataset file (bad magic line)");
  DatasetPartition part;
  {
    auto words = split_words(in.next("recipe"));
    if (words.size() != 2 || words[0] != "recipe") throw ParseError(in.line_number(), "expected recipe line");
    part.recipe = std::string(words[1]);
  }
  {
    auto line = in.next("generation");
    if (!line.starts_with("generation ")) throw ParseError(in.line_number(), "expected generation line");
  }
  bool saw_train = false, saw_source = false;
  for (;;) {
    auto words = split_words(in.next("section or end"));
    const std::size_t ln = in.line_number();
    if (words.size() == 1 && words[0] == "end") break;
    if (words.size() < 3 || words[0] != "section") throw ParseError(ln, "expected section header");
    if (words[1] == "train" && words.size() == 3) {
      part.train = read_section(in, parse_number<std::size_t>(words[2], ln, "count"));
      saw_train = true;
    } else if (words[1] == "test_source" && words.size() == 3) {
      part.test_source = read_section(in, parse_number<std::size_t>(words[2], ln, "count"));
      saw_source = true;
    } else if (words[1] == "test_accent" && words.size() == 4) {
      part.test_accent[std::string(words[2])] = read_section(in, parse_number<std::size_t>(words[3], ln, "count"));
    } else {
      throw ParseError(ln, "unknown section '" + std::string(words[1]) + "'");
    }
  }
  if (!in.done()) throw ParseError(in.line_number() + 1, "content after end marker");
  if (!saw_train || !saw_source) throw ParseError(in.line_number(), "missing train or test_source section");
  return part;
}

void write_dataset(const DatasetPartition& partition, const std::filesystem::path& path,
                   const std::string& generation_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write dataset: " + path.string());
  out << format_dataset(partition, generation_json);
  if (!out) throw Error("failed writing dataset: " + path.string());
}

DatasetPartition read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read dataset: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str());
}

}  // namespace metaxp::synth
