#include "oa/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "oa/dataprep.hpp"

namespace oa {

namespace fs = std::filesystem;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw std::runtime_error("read failed for " + path);
  return std::move(buf).str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

namespace {

void validate_options(const HarvestOptions& o) {
  auto check_iou = [](double t, const char* name) {
    if (!(t > 0.0) || t > 1.0)
      throw std::invalid_argument(std::string(name) + " must be in (0, 1]");
  };
  check_iou(o.pre_nms_iou, "pre_nms_iou");
  check_iou(o.post_nms_iou, "post_nms_iou");
  if (o.top_k < 1) throw std::invalid_argument("top_k must be >= 1");
}

bool passes_screen(const HarvestOptions& o, const HarvestInput& input) {
  if (o.screen_hook) return o.screen_hook(input.id, input.proposals);
  if (o.screen.rule == ScreenRule::accept_all) return true;
  double best = -std::numeric_limits<double>::infinity();
  for (const ScoredProposal& p : input.proposals) best = std::max(best, p.score);
  return best >= o.screen.tau;
}

Tensor to_grayscale(Tensor image) {
  if (image.dim(2) == 1) return image;
  Tensor gray({image.dim(0), image.dim(1), 1});
  std::size_t c = image.dim(2);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    double sum = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) sum += image.v[i * c + ch];
    gray.v[i] = sum / static_cast<double>(c);
  }
  return gray;
}

}  // namespace

HarvestResult harvest_images(const Model& model,
                             std::vector<HarvestInput> inputs,
                             const HarvestOptions& options) {
  validate_options(options);
  std::sort(inputs.begin(), inputs.end(),
            [](const HarvestInput& a, const HarvestInput& b) { return a.id < b.id; });

  constexpr double kNoFilter = -std::numeric_limits<double>::infinity();
  HarvestResult result;
  StageCounts& c = result.counts;
  for (HarvestInput& input : inputs) {
    ++c.images_seen;
    if (!passes_screen(options, input)) continue;
    ++c.images_accepted;
    c.proposals_loaded += input.proposals.size();

    std::vector<ScoredProposal> pre =
        nms(rank(std::move(input.proposals), kNoFilter), options.pre_nms_iou);
    c.after_pre_nms += pre.size();

    std::vector<Box> boxes;
    boxes.reserve(pre.size());
    for (const ScoredProposal& p : pre) boxes.push_back(p.box);
    std::vector<double> scores = predict(model, input.image, boxes);
    std::vector<ScoredProposal> assessed;
    assessed.reserve(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i)
      assessed.push_back(ScoredProposal{pre[i].box, scores[i], i});

    std::vector<ScoredProposal> kept = rank(std::move(assessed), options.min_score);
    c.after_min_score += kept.size();
    if (kept.size() > options.top_k) kept.resize(options.top_k);
    c.after_top_k += kept.size();
    std::vector<ScoredProposal> final_set = nms(kept, options.post_nms_iou);
    c.after_post_nms += final_set.size();

    for (std::size_t i = 0; i < final_set.size(); ++i)
      result.records.push_back(ObjectRecord{input.id, final_set[i].box,
                                            final_set[i].score, i + 1});
  }
  return result;
}

namespace {

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  return ext == ".pgm" || ext == ".ppm" || ext == ".pnm";
}

}  // namespace

HarvestResult harvest(const HarvestConfig& cfg) {
  validate_options(cfg.options);
  std::ifstream ckpt(cfg.checkpoint_path);
  if (!ckpt) throw std::runtime_error("cannot open " + cfg.checkpoint_path);
  Model model = load_model(ckpt);

  if (!fs::is_directory(cfg.input_dir))
    throw std::runtime_error("input dir not found: " + cfg.input_dir);

  std::vector<fs::path> image_files;
  for (const fs::directory_entry& e : fs::directory_iterator(cfg.input_dir))
    if (e.is_regular_file() && has_image_extension(e.path()))
      image_files.push_back(e.path());
  std::sort(image_files.begin(), image_files.end());

  std::vector<HarvestInput> inputs;
  if (!image_files.empty()) {
    fs::path proposals_path = fs::path(cfg.input_dir) / "proposals.jsonl";
    fs::path annotations_path = fs::path(cfg.input_dir) / "annotations.jsonl";

    std::map<std::string, std::vector<ScoredProposal>> by_image;
    bool stub = false;
    std::map<std::string, std::vector<Box>> gt_by_image;
    if (fs::exists(proposals_path)) {
      std::istringstream in(read_file(proposals_path.string()));
      for (const ProposalRecord& r : read_proposals_jsonl(in)) {
        auto& list = by_image[r.image_id];
        list.push_back(ScoredProposal{r.box, r.score, list.size()});
      }
    } else if (fs::exists(annotations_path)) {
      stub = true;
      std::istringstream in(read_file(annotations_path.string()));
      for (const AnnotationRecord& r : read_annotations_jsonl(in))
        gt_by_image[r.image_id] = r.gt_boxes;
    } else {
      throw std::runtime_error("no proposals.jsonl or annotations.jsonl in " +
                               cfg.input_dir);
    }

    for (const fs::path& file : image_files) {
      HarvestInput input;
      input.id = file.stem().string();
      input.image = to_grayscale(decode_pnm(read_file(file.string())));
      if (stub) {
        auto it = gt_by_image.find(input.id);
        if (it == gt_by_image.end())
          throw std::runtime_error("no annotation for image id: " + input.id);
        Rng rng = Rng(cfg.seed).fork(Rng::hash_id(input.id));
        input.proposals = generate_proposals(
            it->second, static_cast<double>(input.image.dim(1)),
            static_cast<double>(input.image.dim(0)), cfg.stub_proposals, rng);
      } else {
        auto it = by_image.find(input.id);
        if (it != by_image.end()) input.proposals = std::move(it->second);
        by_image.erase(input.id);
      }
      inputs.push_back(std::move(input));
    }
    if (!stub && !by_image.empty())
      throw std::runtime_error("proposals reference unknown image id: " +
                               by_image.begin()->first);
  }

  HarvestResult result = harvest_images(model, std::move(inputs), cfg.options);
  if (!cfg.manifest_path.empty()) {
    std::ostringstream out;
    write_manifest_jsonl(result.records, out);
    write_file(cfg.manifest_path, out.str());
  }
  return result;
}

namespace {

// Groups proposals per annotation record, erroring on unknown ids.
std::vector<std::vector<ScoredProposal>> group_by_annotation(
    std::span<const ProposalRecord> proposals,
    std::span<const AnnotationRecord> annotations) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < annotations.size(); ++i)
    index[annotations[i].image_id] = i;
  std::vector<std::vector<ScoredProposal>> grouped(annotations.size());
  for (const ProposalRecord& p : proposals) {
    auto it = index.find(p.image_id);
    if (it == index.end())
      throw std::runtime_error("unresolved image id in proposals: " + p.image_id);
    auto& list = grouped[it->second];
    list.push_back(ScoredProposal{p.box, p.score, list.size()});
  }
  return grouped;
}

EvalCurves evaluate_grouped(std::vector<std::vector<ScoredProposal>> grouped,
                            std::span<const AnnotationRecord> annotations,
                            const EvalOptions& opt) {
  constexpr double kNoFilter = -std::numeric_limits<double>::infinity();
  std::vector<EvalImage> dataset;
  dataset.reserve(annotations.size());
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    EvalImage img;
    for (const ScoredProposal& p : rank(std::move(grouped[i]), kNoFilter))
      img.proposals.push_back(p.box);
    img.gt_boxes = annotations[i].gt_boxes;
    dataset.push_back(std::move(img));
  }
  return evaluate(dataset, opt.k_max, opt.iou_threshold, opt.scoring);
}

}  // namespace

EvalCurves evaluate_proposals(std::span<const ProposalRecord> proposals,
                              std::span<const AnnotationRecord> annotations,
                              const EvalOptions& opt) {
  return evaluate_grouped(group_by_annotation(proposals, annotations),
                          annotations, opt);
}

EvalCurves evaluate_reranked(const Model& model,
                             const std::map<std::string, Tensor>& images,
                             std::span<const ProposalRecord> proposals,
                             std::span<const AnnotationRecord> annotations,
                             const EvalOptions& opt) {
  auto grouped = group_by_annotation(proposals, annotations);
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    if (grouped[i].empty()) continue;
    auto img = images.find(annotations[i].image_id);
    if (img == images.end())
      throw std::runtime_error("no image for id: " + annotations[i].image_id);
    std::vector<Box> boxes;
    boxes.reserve(grouped[i].size());
    for (const ScoredProposal& p : grouped[i]) boxes.push_back(p.box);
    std::vector<double> scores = predict(model, img->second, boxes);
    for (std::size_t j = 0; j < grouped[i].size(); ++j)
      grouped[i][j].score = scores[j];
  }
  return evaluate_grouped(std::move(grouped), annotations, opt);
}

SweepResult sweep_weight(std::span<const double> candidates,
                         const std::vector<SweepImage>& data,
                         const SweepOptions& opt) {
  if (candidates.empty())
    throw std::invalid_argument("sweep_weight: no candidate weights");
  if (opt.train.k_folds < 2)
    throw std::invalid_argument("sweep_weight: needs k_folds >= 2 for validation");
  if (data.size() < opt.train.k_folds)
    throw std::invalid_argument("sweep_weight: fewer images than folds");

  Rng fold_rng = Rng(opt.train.seed).fork(Rng::hash_id("sweep-folds"));
  std::vector<std::size_t> ids(data.size());
  std::iota(ids.begin(), ids.end(), 0);
  auto folds = kfold_split(std::move(ids), opt.train.k_folds, fold_rng);
  const std::vector<std::size_t>& val_idx = folds[0];
  std::vector<std::size_t> train_idx;
  for (std::size_t f = 1; f < folds.size(); ++f)
    train_idx.insert(train_idx.end(), folds[f].begin(), folds[f].end());
  std::sort(train_idx.begin(), train_idx.end());

  // One shared initialization (and edge pretraining) so candidates differ
  // only in their target scores.
  Rng init_rng(opt.train.seed);
  Model base = build(opt.model, init_rng);
  if (opt.model.stream_count == 2 && opt.edge_pretrain_steps > 0) {
    std::vector<Tensor> train_images;
    for (std::size_t idx : train_idx) train_images.push_back(data[idx].image);
    Rng edge_rng = init_rng.fork(Rng::hash_id("edge"));
    pretrain_edge_stream(base, train_images, opt.edge_pretrain_steps,
                         opt.edge_pretrain_lr, edge_rng);
  }

  std::vector<AnnotationRecord> val_annotations;
  std::vector<ProposalRecord> val_proposals;
  std::map<std::string, Tensor> val_images;
  for (std::size_t idx : val_idx) {
    const SweepImage& img = data[idx];
    val_annotations.push_back(AnnotationRecord{img.id, img.gt_boxes});
    val_images[img.id] = img.image;
    for (const Box& b : img.proposals)
      val_proposals.push_back(ProposalRecord{img.id, b, 0.0});
  }

  SweepResult result;
  double best_auc = -1.0;
  for (double w : candidates) {
    ScoringConfig cfg = opt.scoring;
    cfg.w = w;
    std::vector<TrainImage> train_set;
    for (std::size_t idx : train_idx) {
      const SweepImage& img = data[idx];
      TrainImage ti;
      ti.id = img.id;
      ti.image = img.image;
      for (const Box& b : img.proposals)
        ti.samples.push_back(TrainSample{b, objectness_gt_score(b, img.gt_boxes, cfg)});
      train_set.push_back(std::move(ti));
    }
    Model model = base;
    train(model, train_set, opt.train);

    EvalOptions eval_opt{opt.k_max, opt.iou_threshold, cfg};
    EvalCurves curves = evaluate_reranked(model, val_images, val_proposals,
                                          val_annotations, eval_opt);
    result.table.push_back(SweepEntry{w, curves.auc_precision});
    if (curves.auc_precision > best_auc ||
        (curves.auc_precision == best_auc && w < result.best_w)) {
      best_auc = curves.auc_precision;
      result.best_w = w;
    }
  }
  return result;
}

}  // namespace oa
