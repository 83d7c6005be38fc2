#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "oa/scoring.hpp"
#include "oa/tensor.hpp"

namespace oa {

struct AnnotationRecord {
  std::string image_id;
  std::vector<Box> gt_boxes;  // positive area
};

struct ProposalRecord {
  std::string image_id;
  Box box;
  double score = 0.0;  // finite
};

// One harvested object: a surviving proposal with its assessed score and
// 1-based rank within its image.
struct ObjectRecord {
  std::string image_id;
  Box box;
  double score = 0.0;
  std::size_t rank = 0;
};

// VOC-style annotation XML: <annotation> with <filename> and repeated
// <object><bndbox> blocks holding integer xmin/ymin/xmax/ymax. Boxes use the
// convention w = xmax - xmin. Class labels and all unknown elements are
// skipped. Throws std::runtime_error naming the offending element on
// malformed input, a missing <filename>, a missing bndbox field, or
// xmax <= xmin / ymax <= ymin.
AnnotationRecord parse_voc_annotation(std::string_view xml_text);

// Emits the supported VOC subset; parse_voc_annotation(serialize(r)) == r
// for integer-valued boxes.
std::string serialize_voc_annotation(const AnnotationRecord& record);

// Binary PNM: P5 (grayscale, HxWx1) or P6 (RGB, HxWx3), maxval <= 255,
// whitespace- and comment-tolerant header, intensities scaled to [0,1].
// The payload must hold exactly width*height*channels bytes (one trailing
// newline is tolerated); anything shorter or longer is a decode error.
Tensor decode_pnm(std::string_view bytes);

// P5 for single-channel input, P6 for three channels, maxval 255.
std::string encode_pnm(const Tensor& image);

// JSONL, one record per line. Proposal lines are
//   {"image":.., "x":.., "y":.., "w":.., "h":.., "score":..}
// annotation lines are {"image":.., "boxes":[{"x":..,"y":..,"w":..,"h":..}]}
// and manifest lines add "rank" to the proposal schema. Numbers are written
// with six decimal places. Readers report the 1-based line number of any
// malformed or incomplete line and tolerate trailing newlines.
std::vector<ProposalRecord> read_proposals_jsonl(std::istream& in);
void write_proposals_jsonl(std::span<const ProposalRecord> records,
                           std::ostream& out);

std::vector<AnnotationRecord> read_annotations_jsonl(std::istream& in);
void write_annotations_jsonl(std::span<const AnnotationRecord> records,
                             std::ostream& out);

std::vector<ObjectRecord> read_manifest_jsonl(std::istream& in);
void write_manifest_jsonl(std::span<const ObjectRecord> records,
                          std::ostream& out);

}  // namespace oa
