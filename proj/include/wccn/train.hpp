#pragma once

#include <memory>
#include <string>
#include <vector>

#include "wccn/cascade.hpp"
#include "wccn/data.hpp"
#include "wccn/proposals.hpp"

namespace wccn {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t rng_seed = 0;
  std::vector<int> scales = {64};
  int checkpoint_every = 0;  // epochs; 0 = final only
  // Three-stage only: train as two-stage for this many initial epochs so the
  // seg stage starts from an informative CAM instead of refining candidates
  // with random posteriors.
  int seg_warmup_epochs = 0;
  CascadeConfig cascade;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

// SGD with momentum: v <- momentum*v + (grad + wd*p); p <- p - lr*v.
struct Sgd {
  double lr, momentum, weight_decay;
  std::vector<Tensor> velocity;  // aligned with registry items

  Sgd(ParamRegistry& reg, double lr, double momentum, double weight_decay);
  void step(ParamRegistry& reg);
};

struct Checkpoint {
  std::uint32_t version = 1;
  std::string config_json;
  int step = 0;  // completed epochs
  std::string rng_state;
  std::vector<std::pair<std::string, Tensor>> tensors;  // params + opt state
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

struct EpochStats {
  int epoch = 0;
  double gap = 0.0, mil = 0.0, seg = 0.0, total = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::unique_ptr<CascadeModel> model;
  std::vector<EpochStats> log;
};

// End-to-end SGD on the cascade total loss. Writes checkpoint.wckp and
// metrics.csv under out_dir (out_dir empty = no files). Deterministic for a
// fixed seed. resume_path restores params, optimizer state and RNG from a
// checkpoint and continues at its epoch counter.
TrainResult train(const Dataset& ds, const std::vector<ProposalSet>& proposals,
                  const TrainConfig& cfg, const std::string& out_dir,
                  const std::string& resume_path = "");

// Loads a cascade model from a checkpoint (architecture from the stored
// config).
std::unique_ptr<CascadeModel> load_cascade(const std::string& checkpoint_path,
                                           TrainConfig* out_cfg = nullptr);

// Emits the MIL argmax box per (train image, present class) in gt_boxes.jsonl
// format; classes without candidates are omitted.
HiddenGT export_pseudo_gt(CascadeModel& model, const Dataset& ds,
                          const std::vector<ProposalSet>& proposals,
                          const std::string& out_path);

HiddenGT load_pseudo_gt(const std::string& path);

// Supervised detector retrained on pseudo GT: fresh trunk + ROI pool + FC
// head with softmax CE over C+1 classes (background = max IoU < 0.3 to any
// pseudo box, positive >= 0.5).
struct DetectorModel {
  int num_classes = 0;
  ParamRegistry params;
  Trunk trunk;
  MilHead head;  // C+1 outputs, last = background

  explicit DetectorModel(int num_classes);
};

std::unique_ptr<DetectorModel> retrain_supervised(const Dataset& ds,
                                                  const HiddenGT& pseudo_gt,
                                                  const std::vector<ProposalSet>& proposals,
                                                  const TrainConfig& cfg,
                                                  const std::string& out_dir);

std::vector<Box> detector_detect(DetectorModel& model, const Sample& sample,
                                 const ProposalSet& proposals,
                                 const std::vector<int>& scales,
                                 double nms_iou = 0.3, double score_min = 0.1);

void save_detector(const std::string& path, DetectorModel& model);
std::unique_ptr<DetectorModel> load_detector(const std::string& path);

}  // namespace wccn
