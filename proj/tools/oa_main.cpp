#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "oa/dataprep.hpp"
#include "oa/ingest.hpp"
#include "oa/metrics.hpp"
#include "oa/model.hpp"
#include "oa/pipeline.hpp"
#include "oa/ranking.hpp"
#include "oa/rng.hpp"
#include "oa/scoring.hpp"
#include "oa/synth.hpp"

namespace fs = std::filesystem;

namespace {

std::string scene_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%04zu", index);
  return buf;
}

nlohmann::json load_json_file(const std::string& path) {
  try {
    return nlohmann::json::parse(oa::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

oa::SceneSpec scene_spec_from_json(const nlohmann::json& j) {
  oa::SceneSpec spec;
  spec.width = j.value("width", spec.width);
  spec.height = j.value("height", spec.height);
  spec.min_objects = j.value("min_objects", spec.min_objects);
  spec.max_objects = j.value("max_objects", spec.max_objects);
  spec.background = j.value("background", spec.background);
  spec.noise = j.value("noise", spec.noise);
  if (j.contains("kinds")) {
    spec.kinds.clear();
    for (const auto& k : j.at("kinds"))
      spec.kinds.push_back(oa::parse_shape_kind(k.get<std::string>()));
  }
  return spec;
}

oa::ModelConfig model_config_from_json(const nlohmann::json& j) {
  oa::ModelConfig cfg;
  cfg.image_size = j.value("image_size", cfg.image_size);
  cfg.stream_count = j.value("stream_count", cfg.stream_count);
  cfg.stages_per_stream = j.value("stages_per_stream", cfg.stages_per_stream);
  cfg.channels = j.value("channels", cfg.channels);
  cfg.roi_scales = j.value("roi_scales", cfg.roi_scales);
  cfg.roi_grid = j.value("roi_grid", cfg.roi_grid);
  cfg.fc_widths = j.value("fc_widths", cfg.fc_widths);
  cfg.dropout_rate = j.value("dropout_rate", cfg.dropout_rate);
  cfg.freeze_streams = j.value("freeze_streams", cfg.freeze_streams);
  return cfg;
}

// Grayscale images of an input dir keyed by file stem.
std::map<std::string, oa::Tensor> load_images(const std::string& dir) {
  if (!fs::is_directory(dir))
    throw std::runtime_error("input dir not found: " + dir);
  std::map<std::string, oa::Tensor> images;
  for (const fs::directory_entry& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    if (ext != ".pgm" && ext != ".ppm" && ext != ".pnm") continue;
    oa::Tensor img = oa::decode_pnm(oa::read_file(e.path().string()));
    if (img.dim(2) == 3) {
      oa::Tensor gray({img.dim(0), img.dim(1), 1});
      for (std::size_t i = 0; i < gray.size(); ++i)
        gray.v[i] = (img.v[3 * i] + img.v[3 * i + 1] + img.v[3 * i + 2]) / 3.0;
      img = std::move(gray);
    }
    images[e.path().stem().string()] = std::move(img);
  }
  return images;
}

std::vector<oa::ProposalRecord> load_proposals(const std::string& path) {
  std::istringstream in(oa::read_file(path));
  try {
    return oa::read_proposals_jsonl(in);
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

std::vector<oa::AnnotationRecord> load_annotations(const std::string& path) {
  std::istringstream in(oa::read_file(path));
  try {
    return oa::read_annotations_jsonl(in);
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

oa::Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return oa::load_model(in);
}

// "lo..hi" or "lo..hi..step" inclusive; default step 0.05.
std::vector<double> parse_sweep_range(const std::string& text) {
  std::vector<double> parts;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t next = text.find("..", pos);
    std::string token =
        next == std::string::npos ? text.substr(pos) : text.substr(pos, next - pos);
    try {
      parts.push_back(std::stod(token));
    } catch (const std::exception&) {
      throw std::runtime_error("bad --sweep-w range: " + text);
    }
    if (next == std::string::npos) break;
    pos = next + 2;
  }
  if (parts.size() < 2 || parts.size() > 3)
    throw std::runtime_error("bad --sweep-w range: " + text);
  double lo = parts[0], hi = parts[1];
  double step = parts.size() == 3 ? parts[2] : 0.05;
  if (step <= 0.0 || hi < lo)
    throw std::runtime_error("bad --sweep-w range: " + text);
  std::vector<double> out;
  for (double w = lo; w <= hi + 1e-9; w += step) out.push_back(w);
  return out;
}

// Pairs images with their annotations and stub or file proposals.
struct DatasetOnDisk {
  std::map<std::string, oa::Tensor> images;
  std::map<std::string, std::vector<oa::Box>> gt;
  std::map<std::string, std::vector<oa::ScoredProposal>> proposals;
};

DatasetOnDisk load_dataset(const std::string& dir, bool need_gt,
                           bool need_proposals) {
  DatasetOnDisk ds;
  ds.images = load_images(dir);
  std::string annotations_path = (fs::path(dir) / "annotations.jsonl").string();
  if (need_gt) {
    for (const oa::AnnotationRecord& r : load_annotations(annotations_path))
      ds.gt[r.image_id] = r.gt_boxes;
  }
  if (need_proposals) {
    std::string proposals_path = (fs::path(dir) / "proposals.jsonl").string();
    for (const oa::ProposalRecord& r : load_proposals(proposals_path)) {
      auto& list = ds.proposals[r.image_id];
      list.push_back(oa::ScoredProposal{r.box, r.score, list.size()});
    }
  }
  return ds;
}

int run_synth(const std::string& out_dir, std::size_t count,
              std::uint64_t seed, std::size_t proposals_per_scene,
              const std::string& config_path) {
  oa::SceneSpec spec;
  if (!config_path.empty()) spec = scene_spec_from_json(load_json_file(config_path));
  spec.seed = seed;
  fs::create_directories(out_dir);

  oa::Rng root(seed);
  std::vector<oa::AnnotationRecord> annotations;
  std::vector<oa::ProposalRecord> proposals;
  for (std::size_t i = 0; i < count; ++i) {
    std::string id = scene_id(i);
    oa::Rng scene_rng = root.fork(oa::Rng::hash_id(id));
    oa::Scene scene = oa::generate_scene(spec, scene_rng);
    oa::write_file((fs::path(out_dir) / (id + ".pgm")).string(),
                   oa::encode_pnm(scene.image));
    annotations.push_back(oa::AnnotationRecord{id, scene.gt_boxes});
    if (proposals_per_scene > 0) {
      oa::Rng prop_rng = root.fork(oa::Rng::hash_id(id + "/proposals"));
      for (const oa::ScoredProposal& p : oa::generate_proposals(
               scene.gt_boxes, static_cast<double>(spec.width),
               static_cast<double>(spec.height), proposals_per_scene, prop_rng))
        proposals.push_back(oa::ProposalRecord{id, p.box, p.score});
    }
  }
  {
    std::ostringstream out;
    oa::write_annotations_jsonl(annotations, out);
    oa::write_file((fs::path(out_dir) / "annotations.jsonl").string(), out.str());
  }
  if (proposals_per_scene > 0) {
    std::ostringstream out;
    oa::write_proposals_jsonl(proposals, out);
    oa::write_file((fs::path(out_dir) / "proposals.jsonl").string(), out.str());
  }
  std::cout << "wrote " << count << " scenes to " << out_dir << "\n";
  return 0;
}

int run_prep(const std::string& in_dir, const std::string& out_path, double w,
             std::size_t augment_copies, std::size_t target, std::size_t bins,
             std::uint64_t seed) {
  DatasetOnDisk ds = load_dataset(in_dir, true, true);
  oa::ScoringConfig cfg;
  cfg.w = w;
  oa::AugmentLimits limits;  // defaults
  oa::SampleSpec sample_spec{bins, target};
  oa::Rng root(seed);

  std::vector<oa::ProposalRecord> out;
  for (const auto& [id, image] : ds.images) {
    auto git = ds.gt.find(id);
    if (git == ds.gt.end())
      throw std::runtime_error("no annotation for image id: " + id);
    double iw = static_cast<double>(image.dim(1));
    double ih = static_cast<double>(image.dim(0));
    oa::Rng rng = root.fork(oa::Rng::hash_id(id));

    std::vector<std::pair<oa::Box, double>> scored;
    auto pit = ds.proposals.find(id);
    if (pit != ds.proposals.end()) {
      for (const oa::ScoredProposal& p : pit->second) {
        scored.emplace_back(p.box, 0.0);
        for (std::size_t a = 0; a < augment_copies; ++a)
          scored.emplace_back(oa::augment_box(p.box, iw, ih, limits, rng), 0.0);
      }
    }
    for (auto& [box, score] : scored)
      score = oa::objectness_gt_score(box, git->second, cfg);
    auto sampled = oa::balanced_sample(scored, sample_spec, rng);
    for (const auto& [box, score] : sampled)
      out.push_back(oa::ProposalRecord{id, box, score});
  }
  std::ostringstream buf;
  oa::write_proposals_jsonl(out, buf);
  oa::write_file(out_path, buf.str());
  std::cout << "wrote " << out.size() << " training targets to " << out_path
            << "\n";
  return 0;
}

struct TrainCli {
  std::string in_dir, targets_path, out_path, history_path, config_path;
  std::string sweep_range;
  double w = 0.4;
  std::size_t edge_steps = 200;
  double edge_lr = 0.02;
  oa::TrainConfig tc;
};

std::vector<oa::TrainImage> assemble_train_set(
    const std::map<std::string, oa::Tensor>& images,
    const std::vector<oa::ProposalRecord>& targets) {
  std::map<std::string, std::vector<oa::TrainSample>> samples;
  for (const oa::ProposalRecord& r : targets) {
    if (!images.count(r.image_id))
      throw std::runtime_error("target references unknown image id: " +
                               r.image_id);
    samples[r.image_id].push_back(oa::TrainSample{r.box, r.score});
  }
  std::vector<oa::TrainImage> out;
  for (const auto& [id, image] : images) {
    auto it = samples.find(id);
    if (it == samples.end()) continue;
    out.push_back(oa::TrainImage{id, image, std::move(it->second)});
  }
  return out;
}

int run_train(const TrainCli& cli) {
  oa::ModelConfig model_cfg;
  if (!cli.config_path.empty())
    model_cfg = model_config_from_json(load_json_file(cli.config_path));

  double final_w = cli.w;
  if (!cli.sweep_range.empty()) {
    std::vector<double> candidates = parse_sweep_range(cli.sweep_range);
    DatasetOnDisk ds = load_dataset(cli.in_dir, true, true);
    std::vector<oa::SweepImage> data;
    for (const auto& [id, image] : ds.images) {
      auto git = ds.gt.find(id);
      if (git == ds.gt.end())
        throw std::runtime_error("no annotation for image id: " + id);
      oa::SweepImage s;
      s.id = id;
      s.image = image;
      s.gt_boxes = git->second;
      auto pit = ds.proposals.find(id);
      if (pit != ds.proposals.end())
        for (const oa::ScoredProposal& p : pit->second) s.proposals.push_back(p.box);
      data.push_back(std::move(s));
    }
    oa::SweepOptions opt;
    opt.model = model_cfg;
    opt.train = cli.tc;
    opt.edge_pretrain_steps = cli.edge_steps;
    opt.edge_pretrain_lr = cli.edge_lr;
    oa::SweepResult sweep = oa::sweep_weight(candidates, data, opt);
    std::cout << "w,precision_auc\n";
    for (const oa::SweepEntry& e : sweep.table) {
      char row[64];
      std::snprintf(row, sizeof(row), "%.2f,%.6f\n", e.w, e.precision_auc);
      std::cout << row;
    }
    std::cout << "best_w," << sweep.best_w << "\n";
    final_w = sweep.best_w;
  }

  std::map<std::string, oa::Tensor> images = load_images(cli.in_dir);
  std::vector<oa::ProposalRecord> targets;
  if (!cli.sweep_range.empty()) {
    // Recompute targets for the winning weight over the whole input dir.
    DatasetOnDisk ds = load_dataset(cli.in_dir, true, true);
    oa::ScoringConfig cfg;
    cfg.w = final_w;
    for (const auto& [id, props] : ds.proposals) {
      auto git = ds.gt.find(id);
      if (git == ds.gt.end())
        throw std::runtime_error("no annotation for image id: " + id);
      for (const oa::ScoredProposal& p : props)
        targets.push_back(oa::ProposalRecord{
            id, p.box, oa::objectness_gt_score(p.box, git->second, cfg)});
    }
  } else {
    if (cli.targets_path.empty())
      throw std::runtime_error("train needs --targets (or --sweep-w)");
    targets = load_proposals(cli.targets_path);
  }

  std::vector<oa::TrainImage> dataset = assemble_train_set(images, targets);
  oa::Rng init_rng(cli.tc.seed);
  oa::Model model = oa::build(model_cfg, init_rng);
  if (model_cfg.stream_count == 2 && cli.edge_steps > 0) {
    std::vector<oa::Tensor> imgs;
    for (const oa::TrainImage& t : dataset) imgs.push_back(t.image);
    oa::Rng edge_rng = init_rng.fork(oa::Rng::hash_id("edge"));
    oa::pretrain_edge_stream(model, imgs, cli.edge_steps, cli.edge_lr, edge_rng);
  }
  oa::TrainHistory history = oa::train(model, dataset, cli.tc);

  std::ostringstream ckpt;
  oa::save_model(model, ckpt);
  oa::write_file(cli.out_path, ckpt.str());
  if (!cli.history_path.empty()) {
    std::ostringstream csv;
    oa::write_history_csv(history, csv);
    oa::write_file(cli.history_path, csv.str());
  }
  std::cout << "trained " << history.size() << " epochs, final train loss "
            << (history.empty() ? 0.0 : history.back().train_loss)
            << ", checkpoint " << cli.out_path << "\n";
  return 0;
}

int run_score(const std::string& model_path, const std::string& in_dir,
              const std::string& proposals_path, const std::string& out_path) {
  oa::Model model = load_checkpoint(model_path);
  std::map<std::string, oa::Tensor> images = load_images(in_dir);
  std::vector<oa::ProposalRecord> records = load_proposals(proposals_path);

  std::map<std::string, std::vector<std::size_t>> by_image;
  for (std::size_t i = 0; i < records.size(); ++i)
    by_image[records[i].image_id].push_back(i);
  for (const auto& [id, indices] : by_image) {
    auto it = images.find(id);
    if (it == images.end())
      throw std::runtime_error("no image for id: " + id);
    std::vector<oa::Box> boxes;
    for (std::size_t i : indices) boxes.push_back(records[i].box);
    std::vector<double> scores = oa::predict(model, it->second, boxes);
    for (std::size_t j = 0; j < indices.size(); ++j)
      records[indices[j]].score = scores[j];
  }
  std::ostringstream out;
  oa::write_proposals_jsonl(records, out);
  oa::write_file(out_path, out.str());
  std::cout << "scored " << records.size() << " proposals to " << out_path
            << "\n";
  return 0;
}

int run_rank(const std::string& in_path, const std::string& out_path,
             double min_score, double nms_iou, std::size_t top_k) {
  std::vector<oa::ProposalRecord> records = load_proposals(in_path);
  std::map<std::string, std::vector<oa::ScoredProposal>> by_image;
  for (const oa::ProposalRecord& r : records) {
    auto& list = by_image[r.image_id];
    list.push_back(oa::ScoredProposal{r.box, r.score, list.size()});
  }
  std::vector<oa::ObjectRecord> out;
  for (auto& [id, props] : by_image) {
    std::vector<oa::ScoredProposal> kept = oa::rank(std::move(props), min_score);
    if (kept.size() > top_k) kept.resize(top_k);
    kept = oa::nms(kept, nms_iou);
    for (std::size_t i = 0; i < kept.size(); ++i)
      out.push_back(oa::ObjectRecord{id, kept[i].box, kept[i].score, i + 1});
  }
  std::ostringstream buf;
  oa::write_manifest_jsonl(out, buf);
  oa::write_file(out_path, buf.str());
  std::cout << "kept " << out.size() << " proposals to " << out_path << "\n";
  return 0;
}

int run_eval(const std::string& proposals_path,
             const std::string& annotations_path, const std::string& model_path,
             const std::string& images_dir, std::size_t k_max,
             double iou_threshold, double w, const std::string& out_path) {
  std::vector<oa::ProposalRecord> proposals = load_proposals(proposals_path);
  std::vector<oa::AnnotationRecord> annotations =
      load_annotations(annotations_path);
  oa::EvalOptions opt;
  opt.k_max = k_max;
  opt.iou_threshold = iou_threshold;
  opt.scoring.w = w;

  oa::EvalCurves curves;
  if (!model_path.empty()) {
    if (images_dir.empty())
      throw std::runtime_error("eval with --model needs --in <images dir>");
    oa::Model model = load_checkpoint(model_path);
    curves = oa::evaluate_reranked(model, load_images(images_dir), proposals,
                                   annotations, opt);
  } else {
    curves = oa::evaluate_proposals(proposals, annotations, opt);
  }

  std::ostringstream csv;
  oa::write_report(curves, csv);
  if (out_path.empty()) {
    std::cout << csv.str();
  } else {
    oa::write_file(out_path, csv.str());
    char line[128];
    std::snprintf(line, sizeof(line),
                  "AUC precision %.6f recall %.6f mean_gt_score %.6f\n",
                  curves.auc_precision, curves.auc_recall, curves.auc_mean_score);
    std::cout << line;
  }
  return 0;
}

int run_harvest(const oa::HarvestConfig& cfg) {
  oa::HarvestResult result = oa::harvest(cfg);
  const oa::StageCounts& c = result.counts;
  std::cout << "images seen " << c.images_seen << ", accepted "
            << c.images_accepted << "\n"
            << "proposals " << c.proposals_loaded << " -> pre-nms "
            << c.after_pre_nms << " -> min-score " << c.after_min_score
            << " -> top-k " << c.after_top_k << " -> post-nms "
            << c.after_post_nms << "\n";
  if (!cfg.manifest_path.empty())
    std::cout << "manifest " << cfg.manifest_path << " (" << result.records.size()
              << " records)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"objectness assessment toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate synthetic scenes");
  std::string synth_out = "scenes";
  std::size_t synth_count = 10, synth_props = 100;
  std::uint64_t synth_seed = 1;
  std::string synth_config;
  synth->add_option("--out", synth_out, "output dir");
  synth->add_option("--count", synth_count, "number of scenes");
  synth->add_option("--seed", synth_seed, "rng seed");
  synth->add_option("--proposals", synth_props, "stub proposals per scene (0: none)");
  synth->add_option("--config", synth_config, "scene spec JSON file");

  // prep
  auto* prep = app.add_subcommand("prep", "score and sample training targets");
  std::string prep_in, prep_out = "targets.jsonl";
  double prep_w = 0.4;
  std::size_t prep_augment = 1, prep_target = 1000, prep_bins = 10;
  std::uint64_t prep_seed = 1;
  prep->add_option("--in", prep_in, "scene dir (images, annotations, proposals)")
      ->required();
  prep->add_option("--out", prep_out, "output targets JSONL");
  prep->add_option("--w", prep_w, "completeness weight");
  prep->add_option("--augment", prep_augment, "jittered copies per proposal");
  prep->add_option("--target", prep_target, "balanced sample size per image");
  prep->add_option("--bins", prep_bins, "score histogram bins");
  prep->add_option("--seed", prep_seed, "rng seed");

  // train
  auto* train_cmd = app.add_subcommand("train", "train the assessment model");
  TrainCli train_cli;
  train_cmd->add_option("--in", train_cli.in_dir, "scene dir")->required();
  train_cmd->add_option("--targets", train_cli.targets_path, "targets JSONL from prep");
  train_cmd->add_option("--out", train_cli.out_path, "checkpoint path")->required();
  train_cmd->add_option("--history", train_cli.history_path, "training history CSV");
  train_cmd->add_option("--config", train_cli.config_path, "model config JSON file");
  train_cmd->add_option("--sweep-w", train_cli.sweep_range,
                        "sweep completeness weights, e.g. 0.35..0.65");
  train_cmd->add_option("--w", train_cli.w, "completeness weight (ignored with --sweep-w)");
  train_cmd->add_option("--epochs", train_cli.tc.epochs, "epoch budget");
  train_cmd->add_option("--lr", train_cli.tc.lr, "learning rate");
  train_cmd->add_option("--batch", train_cli.tc.max_proposals_per_batch,
                        "max proposals per batch");
  train_cmd->add_option("--k-folds", train_cli.tc.k_folds,
                        "cross-validation folds (1: no validation)");
  train_cmd->add_option("--seed", train_cli.tc.seed, "rng seed");
  train_cmd->add_option("--edge-steps", train_cli.edge_steps,
                        "edge stream pretraining steps");

  // score
  auto* score = app.add_subcommand("score", "score proposals with a checkpoint");
  std::string score_model, score_in, score_props, score_out = "scored.jsonl";
  score->add_option("--model", score_model, "checkpoint")->required();
  score->add_option("--in", score_in, "images dir")->required();
  score->add_option("--proposals", score_props, "proposals JSONL")->required();
  score->add_option("--out", score_out, "output JSONL");

  // rank
  auto* rank_cmd = app.add_subcommand(
      "rank", "order by score, apply min-score, top-k cap and NMS");
  std::string rank_in, rank_out = "ranked.jsonl";
  double rank_min = 0.5, rank_iou = 0.5;
  std::size_t rank_topk = 50;
  rank_cmd->add_option("--in", rank_in, "scored proposals JSONL")->required();
  rank_cmd->add_option("--out", rank_out, "output manifest JSONL");
  rank_cmd->add_option("--min-score", rank_min, "score threshold");
  rank_cmd->add_option("--iou", rank_iou, "NMS IOU threshold");
  rank_cmd->add_option("--top-k", rank_topk, "per-image cap");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "precision/recall curve report");
  std::string eval_props, eval_ann, eval_model, eval_images, eval_out;
  std::size_t eval_kmax = 10;
  double eval_iou = 0.7, eval_w = 0.4;
  eval_cmd->add_option("--proposals", eval_props, "proposals JSONL")->required();
  eval_cmd->add_option("--annotations", eval_ann, "annotations JSONL")->required();
  eval_cmd->add_option("--model", eval_model, "re-rank with this checkpoint");
  eval_cmd->add_option("--in", eval_images, "images dir (required with --model)");
  eval_cmd->add_option("--k-max", eval_kmax, "curve depth");
  eval_cmd->add_option("--iou", eval_iou, "matching IOU threshold");
  eval_cmd->add_option("--w", eval_w, "completeness weight for mean_gt_score");
  eval_cmd->add_option("--out", eval_out, "report CSV path (default: stdout)");

  // harvest
  auto* harvest_cmd = app.add_subcommand("harvest", "run the full pipeline");
  oa::HarvestConfig hcfg;
  std::string screen_rule = "accept_all";
  double screen_tau = 0.5;
  harvest_cmd->add_option("--in", hcfg.input_dir, "input dir")->required();
  harvest_cmd->add_option("--model", hcfg.checkpoint_path, "checkpoint")->required();
  harvest_cmd->add_option("--out", hcfg.manifest_path, "manifest JSONL")->required();
  harvest_cmd->add_option("--min-score", hcfg.options.min_score, "score threshold");
  harvest_cmd->add_option("--pre-nms", hcfg.options.pre_nms_iou,
                          "NMS IOU before assessment");
  harvest_cmd->add_option("--post-nms", hcfg.options.post_nms_iou,
                          "NMS IOU after assessment");
  harvest_cmd->add_option("--top-k", hcfg.options.top_k, "per-image cap");
  harvest_cmd->add_option("--screen", screen_rule,
                          "screen rule: accept_all | min_gen");
  harvest_cmd->add_option("--tau", screen_tau, "min_gen screen threshold");
  harvest_cmd->add_option("--stub-n", hcfg.stub_proposals,
                          "stub proposals per image (no proposals.jsonl)");
  harvest_cmd->add_option("--seed", hcfg.seed, "stub generation seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed())
      return run_synth(synth_out, synth_count, synth_seed, synth_props, synth_config);
    if (prep->parsed())
      return run_prep(prep_in, prep_out, prep_w, prep_augment, prep_target,
                      prep_bins, prep_seed);
    if (train_cmd->parsed()) return run_train(train_cli);
    if (score->parsed())
      return run_score(score_model, score_in, score_props, score_out);
    if (rank_cmd->parsed())
      return run_rank(rank_in, rank_out, rank_min, rank_iou, rank_topk);
    if (eval_cmd->parsed())
      return run_eval(eval_props, eval_ann, eval_model, eval_images, eval_kmax,
                      eval_iou, eval_w, eval_out);
    if (harvest_cmd->parsed()) {
      if (screen_rule == "accept_all") {
        hcfg.options.screen.rule = oa::ScreenRule::accept_all;
      } else if (screen_rule == "min_gen") {
        hcfg.options.screen.rule = oa::ScreenRule::min_generator_score;
        hcfg.options.screen.tau = screen_tau;
      } else {
        throw std::runtime_error("unknown screen rule: " + screen_rule);
      }
      return run_harvest(hcfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
