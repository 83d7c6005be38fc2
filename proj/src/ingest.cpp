#include "oa/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <utility>

#include "json.hpp"

namespace oa {

namespace {

[[noreturn]] void voc_error(const std::string& what) {
  throw std::runtime_error("voc parse error: " + what);
}

struct XmlNode {
  std::string name;
  std::string text;
  std::vector<XmlNode> children;

  const XmlNode* child(std::string_view n) const {
    for (const XmlNode& c : children)
      if (c.name == n) return &c;
    return nullptr;
  }
};

// Minimal parser for the VOC annotation subset: nested elements, character
// data, comments, an optional <?xml?> prolog. Attributes are tolerated and
// ignored; the five standard entities are decoded in text.
class XmlParser {
 public:
  explicit XmlParser(std::string_view s) : s_(s) {}

  XmlNode parse_document() {
    skip_misc();
    if (pos_ >= s_.size() || s_[pos_] != '<')
      voc_error("expected a root element");
    XmlNode root = parse_element();
    skip_misc();
    if (pos_ < s_.size()) voc_error("content after </" + root.name + ">");
    return root;
  }

 private:
  bool starts_with(std::string_view prefix) const {
    return s_.substr(pos_, prefix.size()) == prefix;
  }

  void skip_ws() {
    while (pos_ < s_.size() &&
           (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\n' ||
            s_[pos_] == '\r'))
      ++pos_;
  }

  void skip_comment() {
    pos_ += 4;  // "<!--"
    std::size_t end = s_.find("-->", pos_);
    if (end == std::string_view::npos) voc_error("unterminated comment");
    pos_ = end + 3;
  }

  void skip_misc() {
    for (;;) {
      skip_ws();
      if (starts_with("<!--")) {
        skip_comment();
      } else if (starts_with("<?")) {
        std::size_t end = s_.find("?>", pos_);
        if (end == std::string_view::npos) voc_error("unterminated <?...?>");
        pos_ = end + 2;
      } else {
        return;
      }
    }
  }

  std::string read_name() {
    std::size_t start = pos_;
    while (pos_ < s_.size()) {
      char c = s_[pos_];
      if (c == '>' || c == '/' || c == ' ' || c == '\t' || c == '\n' ||
          c == '\r')
        break;
      ++pos_;
    }
    if (pos_ == start) voc_error("empty element name");
    return std::string(s_.substr(start, pos_ - start));
  }

  void append_text(XmlNode& node, std::string_view raw) {
    for (std::size_t i = 0; i < raw.size();) {
      if (raw[i] != '&') {
        node.text += raw[i++];
        continue;
      }
      std::size_t semi = raw.find(';', i);
      if (semi == std::string_view::npos)
        voc_error("unterminated entity in <" + node.name + ">");
      std::string_view ent = raw.substr(i + 1, semi - i - 1);
      if (ent == "amp") node.text += '&';
      else if (ent == "lt") node.text += '<';
      else if (ent == "gt") node.text += '>';
      else if (ent == "quot") node.text += '"';
      else if (ent == "apos") node.text += '\'';
      else voc_error("unknown entity &" + std::string(ent) + ";");
      i = semi + 1;
    }
  }

  XmlNode parse_element() {
    ++pos_;  // consume '<'
    XmlNode node;
    node.name = read_name();
    // Skip attributes up to the closing bracket.
    bool self_closing = false;
    for (;;) {
      if (pos_ >= s_.size()) voc_error("unterminated tag <" + node.name + ">");
      char c = s_[pos_];
      if (c == '"' || c == '\'') {
        std::size_t end = s_.find(c, pos_ + 1);
        if (end == std::string_view::npos)
          voc_error("unterminated attribute in <" + node.name + ">");
        pos_ = end + 1;
      } else if (c == '/' && pos_ + 1 < s_.size() && s_[pos_ + 1] == '>') {
        self_closing = true;
        pos_ += 2;
        break;
      } else if (c == '>') {
        ++pos_;
        break;
      } else {
        ++pos_;
      }
    }
    if (self_closing) return node;

    for (;;) {
      if (pos_ >= s_.size()) voc_error("unclosed <" + node.name + ">");
      if (s_[pos_] == '<') {
        if (starts_with("<!--")) {
          skip_comment();
        } else if (starts_with("</")) {
          pos_ += 2;
          std::string close = read_name();
          skip_ws();
          if (pos_ >= s_.size() || s_[pos_] != '>')
            voc_error("malformed </" + close + ">");
          ++pos_;
          if (close != node.name)
            voc_error("mismatched </" + close + "> inside <" + node.name + ">");
          break;
        } else {
          node.children.push_back(parse_element());
        }
      } else {
        std::size_t next = s_.find('<', pos_);
        if (next == std::string_view::npos)
          voc_error("unclosed <" + node.name + ">");
        append_text(node, s_.substr(pos_, next - pos_));
        pos_ = next;
      }
    }
    // Trim surrounding whitespace from character data.
    std::size_t b = node.text.find_first_not_of(" \t\r\n");
    std::size_t e = node.text.find_last_not_of(" \t\r\n");
    node.text = b == std::string::npos ? "" : node.text.substr(b, e - b + 1);
    return node;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

long long int_field(const XmlNode& box, const char* name) {
  const XmlNode* f = box.child(name);
  if (!f) voc_error("missing <" + std::string(name) + "> in <bndbox>");
  long long value = 0;
  const char* first = f->text.data();
  const char* last = first + f->text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last)
    voc_error("<" + std::string(name) + "> is not an integer");
  return value;
}

std::string escape_xml_text(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

}  // namespace

AnnotationRecord parse_voc_annotation(std::string_view xml_text) {
  XmlNode root = XmlParser(xml_text).parse_document();
  if (root.name != "annotation")
    voc_error("expected <annotation> root, got <" + root.name + ">");
  const XmlNode* filename = root.child("filename");
  if (!filename || filename->text.empty()) voc_error("missing <filename>");

  AnnotationRecord rec;
  rec.image_id = filename->text;
  for (const XmlNode& child : root.children) {
    if (child.name != "object") continue;  // unknown elements skipped
    const XmlNode* bndbox = child.child("bndbox");
    if (!bndbox) voc_error("<object> missing <bndbox>");
    long long xmin = int_field(*bndbox, "xmin");
    long long ymin = int_field(*bndbox, "ymin");
    long long xmax = int_field(*bndbox, "xmax");
    long long ymax = int_field(*bndbox, "ymax");
    if (xmax <= xmin) voc_error("<bndbox> has xmax <= xmin");
    if (ymax <= ymin) voc_error("<bndbox> has ymax <= ymin");
    rec.gt_boxes.push_back(Box{static_cast<double>(xmin),
                               static_cast<double>(ymin),
                               static_cast<double>(xmax - xmin),
                               static_cast<double>(ymax - ymin)});
  }
  return rec;
}

std::string serialize_voc_annotation(const AnnotationRecord& record) {
  std::string out = "<annotation>\n";
  out += "  <filename>" + escape_xml_text(record.image_id) + "</filename>\n";
  for (const Box& b : record.gt_boxes) {
    long long xmin = std::llround(b.x);
    long long ymin = std::llround(b.y);
    long long xmax = std::llround(b.x2());
    long long ymax = std::llround(b.y2());
    out += "  <object>\n    <bndbox>\n";
    out += "      <xmin>" + std::to_string(xmin) + "</xmin>\n";
    out += "      <ymin>" + std::to_string(ymin) + "</ymin>\n";
    out += "      <xmax>" + std::to_string(xmax) + "</xmax>\n";
    out += "      <ymax>" + std::to_string(ymax) + "</ymax>\n";
    out += "    </bndbox>\n  </object>\n";
  }
  out += "</annotation>\n";
  return out;
}

namespace {

[[noreturn]] void pnm_error(const std::string& what) {
  throw std::runtime_error("pnm decode error: " + what);
}

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

// Reads the next header integer, skipping whitespace and # comments.
std::size_t pnm_int(std::string_view s, std::size_t& pos, const char* what) {
  for (;;) {
    while (pos < s.size() && is_space(s[pos])) ++pos;
    if (pos < s.size() && s[pos] == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  if (pos >= s.size() || s[pos] < '0' || s[pos] > '9')
    pnm_error(std::string("missing ") + what);
  std::size_t value = 0;
  while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
    value = value * 10 + static_cast<std::size_t>(s[pos] - '0');
    if (value > 1'000'000'000) pnm_error(std::string(what) + " out of range");
    ++pos;
  }
  return value;
}

}  // namespace

Tensor decode_pnm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' ||
      (bytes[1] != '5' && bytes[1] != '6'))
    pnm_error("unsupported magic (want P5 or P6)");
  std::size_t channels = bytes[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  std::size_t width = pnm_int(bytes, pos, "width");
  std::size_t height = pnm_int(bytes, pos, "height");
  std::size_t maxval = pnm_int(bytes, pos, "maxval");
  if (width == 0 || height == 0) pnm_error("zero image dimension");
  if (maxval == 0 || maxval > 255) pnm_error("maxval must be in [1, 255]");
  if (pos >= bytes.size() || !is_space(bytes[pos]))
    pnm_error("missing whitespace after maxval");
  ++pos;  // exactly one whitespace byte before the payload

  std::size_t expected = width * height * channels;
  std::size_t remaining = bytes.size() - pos;
  if (remaining < expected) pnm_error("truncated pixel data");
  if (remaining > expected &&
      !(remaining == expected + 1 && bytes[bytes.size() - 1] == '\n'))
    pnm_error("trailing bytes after pixel data");

  Tensor image({height, width, channels});
  for (std::size_t i = 0; i < expected; ++i)
    image.v[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) /
                 static_cast<double>(maxval);
  return image;
}

std::string encode_pnm(const Tensor& image) {
  if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3))
    throw std::invalid_argument("encode_pnm: image must be HxWx1 or HxWx3");
  std::size_t channels = image.dim(2);
  std::string out = channels == 1 ? "P5\n" : "P6\n";
  out += std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) +
         "\n255\n";
  for (double v : image.v) {
    long byte = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
    out += static_cast<char>(static_cast<unsigned char>(byte));
  }
  return out;
}

namespace {

[[noreturn]] void line_error(std::size_t line_no, const std::string& what) {
  throw std::runtime_error("line " + std::to_string(line_no) + ": " + what);
}

// Lines of the stream, with trailing empty lines dropped; a blank line in
// the middle of a file is still an error at parse time.
std::vector<std::string> read_lines(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

nlohmann::json parse_line(const std::string& line, std::size_t line_no) {
  try {
    nlohmann::json j = nlohmann::json::parse(line);
    if (!j.is_object()) line_error(line_no, "record is not a JSON object");
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    line_error(line_no, std::string("malformed JSON: ") + e.what());
  }
}

double number_field(const nlohmann::json& j, const char* key,
                    std::size_t line_no) {
  if (!j.contains(key) || !j.at(key).is_number())
    line_error(line_no, "missing key \"" + std::string(key) + "\"");
  double v = j.at(key).get<double>();
  if (!std::isfinite(v))
    line_error(line_no, "non-finite value for \"" + std::string(key) + "\"");
  return v;
}

std::string string_field(const nlohmann::json& j, const char* key,
                         std::size_t line_no) {
  if (!j.contains(key) || !j.at(key).is_string())
    line_error(line_no, "missing key \"" + std::string(key) + "\"");
  return j.at(key).get<std::string>();
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string box_fields(const Box& b) {
  return "\"x\":" + fmt6(b.x) + ",\"y\":" + fmt6(b.y) + ",\"w\":" + fmt6(b.w) +
         ",\"h\":" + fmt6(b.h);
}

Box box_from_json(const nlohmann::json& j, std::size_t line_no) {
  return Box{number_field(j, "x", line_no), number_field(j, "y", line_no),
             number_field(j, "w", line_no), number_field(j, "h", line_no)};
}

}  // namespace

std::vector<ProposalRecord> read_proposals_jsonl(std::istream& in) {
  std::vector<ProposalRecord> out;
  auto lines = read_lines(in);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    nlohmann::json j = parse_line(lines[i], i + 1);
    ProposalRecord rec;
    rec.image_id = string_field(j, "image", i + 1);
    rec.box = box_from_json(j, i + 1);
    rec.score = number_field(j, "score", i + 1);
    out.push_back(std::move(rec));
  }
  return out;
}

void write_proposals_jsonl(std::span<const ProposalRecord> records,
                           std::ostream& out) {
  for (const ProposalRecord& r : records)
    out << "{\"image\":" << nlohmann::json(r.image_id).dump() << ','
        << box_fields(r.box) << ",\"score\":" << fmt6(r.score) << "}\n";
  if (!out) throw std::runtime_error("proposal write failed");
}

std::vector<AnnotationRecord> read_annotations_jsonl(std::istream& in) {
  std::vector<AnnotationRecord> out;
  auto lines = read_lines(in);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    nlohmann::json j = parse_line(lines[i], i + 1);
    AnnotationRecord rec;
    rec.image_id = string_field(j, "image", i + 1);
    if (!j.contains("boxes") || !j.at("boxes").is_array())
      line_error(i + 1, "missing key \"boxes\"");
    for (const nlohmann::json& bj : j.at("boxes")) {
      if (!bj.is_object()) line_error(i + 1, "box entry is not an object");
      Box b = box_from_json(bj, i + 1);
      if (!(b.w > 0.0) || !(b.h > 0.0))
        line_error(i + 1, "box with non-positive area");
      rec.gt_boxes.push_back(b);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void write_annotations_jsonl(std::span<const AnnotationRecord> records,
                             std::ostream& out) {
  for (const AnnotationRecord& r : records) {
    out << "{\"image\":" << nlohmann::json(r.image_id).dump() << ",\"boxes\":[";
    for (std::size_t i = 0; i < r.gt_boxes.size(); ++i) {
      if (i) out << ',';
      out << '{' << box_fields(r.gt_boxes[i]) << '}';
    }
    out << "]}\n";
  }
  if (!out) throw std::runtime_error("annotation write failed");
}

std::vector<ObjectRecord> read_manifest_jsonl(std::istream& in) {
  std::vector<ObjectRecord> out;
  auto lines = read_lines(in);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    nlohmann::json j = parse_line(lines[i], i + 1);
    ObjectRecord rec;
    rec.image_id = string_field(j, "image", i + 1);
    rec.box = box_from_json(j, i + 1);
    rec.score = number_field(j, "score", i + 1);
    double rank = number_field(j, "rank", i + 1);
    if (rank < 1 || rank != std::floor(rank))
      line_error(i + 1, "\"rank\" must be a positive integer");
    rec.rank = static_cast<std::size_t>(rank);
    out.push_back(std::move(rec));
  }
  return out;
}

void write_manifest_jsonl(std::span<const ObjectRecord> records,
                          std::ostream& out) {
  for (const ObjectRecord& r : records)
    out << "{\"image\":" << nlohmann::json(r.image_id).dump() << ','
        << box_fields(r.box) << ",\"score\":" << fmt6(r.score)
        << ",\"rank\":" << r.rank << "}\n";
  if (!out) throw std::runtime_error("manifest write failed");
}

}  // namespace oa
