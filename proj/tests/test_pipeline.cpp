#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "oa/ingest.hpp"
#include "oa/model.hpp"
#include "oa/pipeline.hpp"
#include "oa/rng.hpp"
#include "oa/synth.hpp"

namespace fs = std::filesystem;
using oa::Box;
using oa::HarvestInput;
using oa::HarvestOptions;
using oa::Model;
using oa::ModelConfig;
using oa::Rng;
using oa::ScoredProposal;
using oa::Tensor;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.image_size = 32;
  c.channels = {4, 8, 8};
  c.roi_grid = 2;
  c.fc_widths = {16, 16};
  return c;
}

Model small_model(std::uint64_t seed) {
  Rng rng(seed);
  return oa::build(small_config(), rng);
}

Tensor noise_image(Rng& rng) {
  Tensor img({32, 32, 1});
  for (double& v : img.v) v = rng.u01();
  return img;
}

std::vector<HarvestInput> random_inputs(std::size_t images,
                                        std::size_t proposals,
                                        std::uint64_t seed) {
  Rng rng(seed);
  std::vector<HarvestInput> inputs;
  for (std::size_t i = 0; i < images; ++i) {
    HarvestInput in;
    in.id = "img_" + std::to_string(i);
    in.image = noise_image(rng);
    for (std::size_t p = 0; p < proposals; ++p) {
      double w = rng.uniform(3, 16), h = rng.uniform(3, 16);
      Box b{rng.uniform(0, 32 - w), rng.uniform(0, 32 - h), w, h};
      in.proposals.push_back({b, rng.u01(), p});
    }
    inputs.push_back(std::move(in));
  }
  return inputs;
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Scene images plus annotations.jsonl, the stub-generation harvest layout.
void write_scene_dir(const fs::path& dir, std::size_t count,
                     std::uint64_t seed) {
  oa::SceneSpec spec;
  spec.width = spec.height = 32;
  std::vector<oa::AnnotationRecord> annotations;
  Rng root(seed);
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "scene_%04zu", i);
    Rng rng = root.fork(Rng::hash_id(id));
    oa::Scene scene = oa::generate_scene(spec, rng);
    oa::write_file((dir / (std::string(id) + ".pgm")).string(),
                   oa::encode_pnm(scene.image));
    annotations.push_back({id, scene.gt_boxes});
  }
  std::ofstream out(dir / "annotations.jsonl");
  oa::write_annotations_jsonl(annotations, out);
}

std::string save_checkpoint(const Model& model, const fs::path& path) {
  std::ofstream out(path);
  oa::save_model(model, out);
  return path.string();
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("harvest over no inputs") {
  Model model = small_model(1);
  auto result = oa::harvest_images(model, {}, HarvestOptions{});
  CHECK(result.records.empty());
  CHECK(result.counts.images_seen == 0);
  CHECK(result.counts.proposals_loaded == 0);
  CHECK(result.counts.after_post_nms == 0);
}

TEST_CASE("min_score above the clamp ceiling empties the manifest") {
  Model model = small_model(2);
  HarvestOptions options;
  options.min_score = 1.5;
  auto result = oa::harvest_images(model, random_inputs(3, 20, 3), options);
  CHECK(result.records.empty());
  CHECK(result.counts.proposals_loaded == 60);
  CHECK(result.counts.after_min_score == 0);
}

TEST_CASE("near-duplicate proposals collapse to one record") {
  Model model = small_model(4);
  HarvestInput in;
  in.id = "img";
  Rng rng(5);
  in.image = noise_image(rng);
  in.proposals = {{Box{10, 10, 12, 12}, 0.9, 0}, {Box{11, 11, 12, 12}, 0.8, 1}};

  HarvestOptions options;
  options.min_score = 0.0;
  options.pre_nms_iou = 1.0;  // the pair is near-identical, not identical
  options.post_nms_iou = 0.5;
  auto result = oa::harvest_images(model, {in}, options);
  CHECK(result.counts.after_pre_nms == 2);
  REQUIRE(result.records.size() == 1);
  CHECK(result.records[0].rank == 1);
}

TEST_CASE("stage counts shrink monotonically") {
  Model model = small_model(6);
  HarvestOptions options;
  options.min_score = 0.3;
  options.top_k = 8;
  auto result = oa::harvest_images(model, random_inputs(4, 40, 7), options);
  const auto& c = result.counts;
  CHECK(c.images_accepted == c.images_seen);
  CHECK(c.after_pre_nms <= c.proposals_loaded);
  CHECK(c.after_min_score <= c.after_pre_nms);
  CHECK(c.after_top_k <= c.after_min_score);
  CHECK(c.after_post_nms <= c.after_top_k);
  CHECK(result.records.size() == c.after_post_nms);
}

TEST_CASE("manifest invariants hold on every record") {
  Model model = small_model(8);
  HarvestOptions options;
  options.min_score = 0.2;
  auto result = oa::harvest_images(model, random_inputs(3, 30, 9), options);

  std::map<std::string, std::vector<oa::ObjectRecord>> by_image;
  std::string prev_id;
  for (const auto& rec : result.records) {
    CHECK(rec.image_id >= prev_id);  // id-sorted output
    prev_id = rec.image_id;
    by_image[rec.image_id].push_back(rec);
  }
  for (const auto& [id, records] : by_image) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      CHECK(records[i].rank == i + 1);
      CHECK(records[i].score >= options.min_score);
      if (i > 0) CHECK(records[i - 1].score >= records[i].score);
      for (std::size_t j = i + 1; j < records.size(); ++j)
        CHECK(oa::iou(records[i].box, records[j].box) < options.post_nms_iou);
    }
  }
}

TEST_CASE("screen rules gate whole images") {
  Model model = small_model(10);
  auto inputs = random_inputs(3, 10, 11);
  for (auto& in : inputs)
    for (auto& p : in.proposals) p.score *= 0.5;  // best generator score < 0.5

  HarvestOptions pass_all;
  pass_all.min_score = 0.0;
  CHECK(oa::harvest_images(model, inputs, pass_all).counts.images_accepted == 3);

  HarvestOptions strict;
  strict.min_score = 0.0;
  strict.screen.rule = oa::ScreenRule::min_generator_score;
  strict.screen.tau = 0.9;
  auto screened = oa::harvest_images(model, inputs, strict);
  CHECK(screened.counts.images_seen == 3);
  CHECK(screened.counts.images_accepted == 0);
  CHECK(screened.records.empty());

  HarvestOptions hooked;
  hooked.min_score = 0.0;
  hooked.screen_hook = [](const std::string& id,
                          std::span<const ScoredProposal>) {
    return id != "img_1";
  };
  auto custom = oa::harvest_images(model, inputs, hooked);
  CHECK(custom.counts.images_accepted == 2);
  for (const auto& rec : custom.records) CHECK(rec.image_id != "img_1");
}

TEST_CASE("directory harvest generates, writes and repeats byte-identically") {
  fs::path dir = fresh_dir("oa_harvest_dir");
  write_scene_dir(dir, 4, 77);
  Model model = small_model(12);

  oa::HarvestConfig cfg;
  cfg.input_dir = dir.string();
  cfg.checkpoint_path = save_checkpoint(model, dir / "model.json");
  cfg.manifest_path = (dir / "manifest_a.jsonl").string();
  cfg.options.min_score = 0.0;
  cfg.stub_proposals = 30;
  cfg.seed = 5;

  auto first = oa::harvest(cfg);
  CHECK(first.counts.images_seen == 4);
  CHECK(first.counts.proposals_loaded == 120);

  cfg.manifest_path = (dir / "manifest_b.jsonl").string();
  oa::harvest(cfg);
  CHECK(oa::read_file((dir / "manifest_a.jsonl").string()) ==
        oa::read_file((dir / "manifest_b.jsonl").string()));

  std::ifstream in(dir / "manifest_a.jsonl");
  auto records = oa::read_manifest_jsonl(in);
  CHECK(records.size() == first.records.size());
}

TEST_CASE("directory harvest edge cases") {
  Model model = small_model(13);
  fs::path empty = fresh_dir("oa_harvest_empty");
  oa::HarvestConfig cfg;
  cfg.input_dir = empty.string();
  cfg.checkpoint_path = save_checkpoint(model, empty / "model.json");
  cfg.manifest_path = (empty / "manifest.jsonl").string();
  auto result = oa::harvest(cfg);
  CHECK(result.records.empty());
  CHECK(result.counts.images_seen == 0);
  CHECK(oa::read_file(cfg.manifest_path).empty());

  // Images but neither proposals.jsonl nor annotations.jsonl.
  fs::path bare = fresh_dir("oa_harvest_bare");
  write_scene_dir(bare, 1, 3);
  fs::remove(bare / "annotations.jsonl");
  oa::HarvestConfig bare_cfg;
  bare_cfg.input_dir = bare.string();
  bare_cfg.checkpoint_path = save_checkpoint(model, bare / "model.json");
  CHECK_THROWS_AS(oa::harvest(bare_cfg), std::runtime_error);

  // proposals.jsonl pointing at an id with no image.
  fs::path orphan = fresh_dir("oa_harvest_orphan");
  write_scene_dir(orphan, 1, 4);
  fs::remove(orphan / "annotations.jsonl");
  {
    std::ofstream out(orphan / "proposals.jsonl");
    std::vector<oa::ProposalRecord> rs = {
        {"scene_0000", Box{1, 1, 5, 5}, 0.5},
        {"ghost", Box{1, 1, 5, 5}, 0.5}};
    oa::write_proposals_jsonl(rs, out);
  }
  oa::HarvestConfig orphan_cfg;
  orphan_cfg.input_dir = orphan.string();
  orphan_cfg.checkpoint_path = save_checkpoint(model, orphan / "model.json");
  try {
    oa::harvest(orphan_cfg);
    FAIL("expected unknown-id error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("ghost") != std::string::npos);
  }
}

TEST_CASE("evaluate proposals front end") {
  std::vector<oa::AnnotationRecord> annotations = {
      {"a", {Box{2, 2, 10, 10}, Box{18, 18, 8, 8}}},
      {"b", {Box{4, 4, 12, 12}}},
  };
  std::vector<oa::ProposalRecord> proposals;
  for (const auto& ann : annotations)
    for (const Box& g : ann.gt_boxes)
      proposals.push_back({ann.image_id, g, 1.0});

  oa::EvalOptions opt;
  opt.k_max = 2;
  auto curves = oa::evaluate_proposals(proposals, annotations, opt);
  CHECK(curves.precision[0] == 1.0);
  CHECK(curves.precision[1] == 1.0);
  CHECK(curves.recall[1] == 1.0);

  opt.k_max = 1;
  auto single = oa::evaluate_proposals(proposals, annotations, opt);
  CHECK(single.precision.size() == 1);

  // An annotated image with no proposals still counts toward recall.
  std::vector<oa::ProposalRecord> partial = {proposals[0], proposals[1]};
  opt.k_max = 2;
  auto part = oa::evaluate_proposals(partial, annotations, opt);
  CHECK(part.recall[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  std::vector<oa::ProposalRecord> ghost = {{"zzz", Box{0, 0, 5, 5}, 0.5}};
  try {
    oa::evaluate_proposals(ghost, annotations, opt);
    FAIL("expected unresolved-id error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("zzz") != std::string::npos);
  }
}

TEST_CASE("evaluate reranked front end") {
  Model model = small_model(14);
  Rng rng(15);
  oa::SceneSpec spec;
  spec.width = spec.height = 32;

  std::map<std::string, Tensor> images;
  std::vector<oa::AnnotationRecord> annotations;
  std::vector<oa::ProposalRecord> proposals;
  for (int i = 0; i < 3; ++i) {
    std::string id = "s" + std::to_string(i);
    Rng srng = rng.fork(i);
    oa::Scene scene = oa::generate_scene(spec, srng);
    for (const auto& p :
         oa::generate_proposals(scene.gt_boxes, 32, 32, 15, srng))
      proposals.push_back({id, p.box, p.score});
    images[id] = std::move(scene.image);
    annotations.push_back({id, scene.gt_boxes});
  }

  oa::EvalOptions opt;
  opt.k_max = 5;
  auto curves = oa::evaluate_reranked(model, images, proposals, annotations, opt);
  CHECK(curves.precision.size() == 5);
  CHECK(curves.recall.size() == 5);

  images.erase("s1");
  CHECK_THROWS_AS(
      oa::evaluate_reranked(model, images, proposals, annotations, opt),
      std::runtime_error);
}

TEST_CASE("weight sweep") {
  Rng rng(16);
  oa::SceneSpec spec;
  spec.width = spec.height = 32;
  std::vector<oa::SweepImage> data;
  for (int i = 0; i < 6; ++i) {
    Rng srng = rng.fork(i);
    oa::Scene scene = oa::generate_scene(spec, srng);
    oa::SweepImage img;
    img.id = "s" + std::to_string(i);
    for (const auto& p :
         oa::generate_proposals(scene.gt_boxes, 32, 32, 12, srng))
      img.proposals.push_back(p.box);
    img.image = std::move(scene.image);
    img.gt_boxes = scene.gt_boxes;
    data.push_back(std::move(img));
  }

  oa::SweepOptions opt;
  opt.model = small_config();
  opt.train.epochs = 2;
  opt.train.k_folds = 3;
  opt.train.seed = 21;
  opt.k_max = 5;
  opt.edge_pretrain_steps = 5;

  std::vector<double> one = {0.4};
  auto single = oa::sweep_weight(one, data, opt);
  CHECK(single.best_w == 0.4);
  REQUIRE(single.table.size() == 1);
  CHECK(single.table[0].w == 0.4);

  std::vector<double> two = {0.3, 0.6};
  auto first = oa::sweep_weight(two, data, opt);
  auto second = oa::sweep_weight(two, data, opt);
  REQUIRE(first.table.size() == 2);
  CHECK(first.best_w == second.best_w);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(first.table[i].w == two[i]);
    CHECK(first.table[i].precision_auc == second.table[i].precision_auc);
  }
  // best_w is the smallest candidate achieving the maximum AUC.
  double best_auc = std::max(first.table[0].precision_auc,
                             first.table[1].precision_auc);
  double expect_w = 2.0;
  for (const auto& row : first.table)
    if (row.precision_auc == best_auc) expect_w = std::min(expect_w, row.w);
  CHECK(first.best_w == expect_w);

  std::vector<double> none;
  CHECK_THROWS_AS(oa::sweep_weight(none, data, opt), std::invalid_argument);
  oa::SweepOptions bad = opt;
  bad.train.k_folds = 1;
  CHECK_THROWS_AS(oa::sweep_weight(two, data, bad), std::invalid_argument);
}

}  // TEST_SUITE
