#include "tkvseg/cli/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "tkvseg/checkpoint.hpp"
#include "tkvseg/errors.hpp"
#include "tkvseg/metaimage.hpp"
#include "tkvseg/optim.hpp"
#include "tkvseg/phantom.hpp"
#include "tkvseg/preprocess.hpp"
#include "tkvseg/random.hpp"

namespace tkvseg::cli {

namespace fs = std::filesystem;

namespace {

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create directory " + dir.string() + (ec ? ": " + ec.message() : ""));
  }
}

TaskBatch<float> stack(const std::string& task, const std::vector<const Sample*>& samples) {
  const Index3 d = samples.front()->image.dims;
  const std::size_t n = d[0] * d[1] * d[2];
  std::vector<float> img;
  std::vector<std::uint8_t> lab;
  img.reserve(n * samples.size());
  lab.reserve(n * samples.size());
  for (const Sample* s : samples) {
    if (s->image.dims != d) throw ShapeError("cannot batch crops of different dims");
    img.insert(img.end(), s->image.data.begin(), s->image.data.end());
    lab.insert(lab.end(), s->mask.data.begin(), s->mask.data.end());
  }
  TaskBatch<float> b;
  b.task = task;
  b.image = Tensor<float>(Shape{samples.size(), 1, d[0], d[1], d[2]}, std::move(img));
  b.labels = LabelTensor(Shape{samples.size(), d[0], d[1], d[2]}, std::move(lab));
  return b;
}

TaskSpec spec_for_evaluation(const std::string& task, const LabelVolume& gt,
                             const LabelVolume& pred) {
  if (task == "kidney") return kidney_task();
  if (task == "liver") return liver_task();
  std::uint8_t top = 1;
  for (auto v : gt.data) top = std::max(top, v);
  for (auto v : pred.data) top = std::max(top, v);
  TaskSpec t{task, {}};
  for (std::size_t c = 0; c <= top; ++c) t.class_names.push_back("class" + std::to_string(c));
  return t;
}


// One loaded case of the training pool.
struct PoolCase {
  std::string case_id;
  ImageVolume raw_image;  // kept for validation cases only
  LabelVolume raw_mask;
  std::vector<Sample> crops;  // prepared (resampled, normalized) training crops
};

struct TaskPool {
  TaskSpec spec;
  std::vector<PoolCase> cases;
};

}  // namespace

ImageVolume prepare_image(const ImageVolume& raw, const DataConfig& data) {
  return normalize_intensity(resample_isotropic(raw, data.target_spacing, Interp::trilinear),
                             data.window_lo, data.window_hi);
}

Index3 training_crop(const Index3& crop, std::size_t multiple) {
  return {round_up(crop[0], multiple), round_up(crop[1], multiple), round_up(crop[2], multiple)};
}

Index3 inference_window(const Index3& extent, const Index3& crop, std::size_t multiple) {
  Index3 w{};
  for (int a = 0; a < 3; ++a) {
    w[a] = std::min(round_up(crop[a], multiple), round_up(extent[a], multiple));
  }
  return w;
}

Tensor<float> stitched_logits(MultiTaskNet<float>& net, const ImageVolume& prepared,
                              const std::string& task, const DataConfig& data) {
  const std::size_t classes = net.task(task).num_classes();
  const Index3& dims = prepared.dims;
  const Index3 win = inference_window(dims, data.crop, net.spatial_multiple());
  std::array<std::vector<std::size_t>, 3> starts;
  for (int a = 0; a < 3; ++a) {
    auto overlap = static_cast<std::size_t>(std::floor(data.inference_overlap * static_cast<double>(win[a])));
    overlap = std::min(overlap, win[a] - 1);
    starts[a] = tile_starts(dims[a], win[a], overlap);
  }
  const std::size_t n = prepared.size();
  std::vector<float> acc(classes * n, 0.0f);
  std::vector<std::uint16_t> hits(n, 0);
  for (std::size_t z0 : starts[0]) {
    for (std::size_t y0 : starts[1]) {
      for (std::size_t x0 : starts[2]) {
        CropWindow w;
        w.start = {static_cast<std::ptrdiff_t>(z0), static_cast<std::ptrdiff_t>(y0),
                   static_cast<std::ptrdiff_t>(x0)};
        w.size = win;
        const ImageVolume tile = extract_window(prepared, w, 0.0f);
        Graph<float> graph;
        const Tensor<float> input(Shape{1, 1, win[0], win[1], win[2]}, tile.data);
        const Tensor<float>& logits = net.forward(graph, input, task, Mode::eval).value();
        const std::size_t tn = win[0] * win[1] * win[2];
        for (std::size_t z = 0; z < win[0] && z0 + z < dims[0]; ++z) {
          for (std::size_t y = 0; y < win[1] && y0 + y < dims[1]; ++y) {
            for (std::size_t x = 0; x < win[2] && x0 + x < dims[2]; ++x) {
              const std::size_t t = (z * win[1] + y) * win[2] + x;
              const std::size_t v = prepared.index(z0 + z, y0 + y, x0 + x);
              for (std::size_t c = 0; c < classes; ++c) acc[c * n + v] += logits[c * tn + t];
              ++hits[v];
            }
          }
        }
      }
    }
  }
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t v = 0; v < n; ++v) acc[c * n + v] /= static_cast<float>(hits[v]);
  }
  return Tensor<float>(Shape{classes, dims[0], dims[1], dims[2]}, std::move(acc));
}

LabelVolume infer_labels(MultiTaskNet<float>& net, const ImageVolume& raw, const std::string& task,
                         const DataConfig& data) {
  const ImageVolume prepared = prepare_image(raw, data);
  const Tensor<float> logits = stitched_logits(net, prepared, task, data);
  const std::size_t classes = logits.dim(0), n = prepared.size();
  LabelVolume labels(prepared.dims, prepared.spacing, prepared.origin, 0);
  for (std::size_t v = 0; v < n; ++v) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (logits[c * n + v] > logits[best * n + v]) best = c;
    }
    labels.data[v] = static_cast<std::uint8_t>(best);
  }
  if (labels.same_grid(raw)) return labels;
  return resample(labels, raw.dims, raw.spacing, raw.origin, Interp::nearest);
}

CaseMetrics case_metrics(const LabelVolume& pred, const LabelVolume& gt, const TaskSpec& task,
                         const std::string& case_id, std::optional<std::size_t> fold) {
  const std::size_t classes = task.num_classes();
  const DiceReport dice = dice_report(pred, gt, classes);
  std::vector<std::uint8_t> fg;
  for (std::size_t c = 1; c < classes; ++c) fg.push_back(static_cast<std::uint8_t>(c));
  CaseMetrics m;
  m.case_id = case_id;
  m.fold = fold;
  m.dice_left = dice.per_class[1];
  m.dice_right = classes > 2 ? dice.per_class[2] : dice.per_class[1];
  m.dice_mean = dice.mean_foreground();
  m.tkv_pred_mm3 = compute_tkv(pred, fg, gt.spacing);
  m.tkv_gt_mm3 = compute_tkv(gt, fg, gt.spacing);
  m.tkv_pct_err = tkv_percent_error(m.tkv_pred_mm3, m.tkv_gt_mm3);
  return m;
}

TrainOutputs run_training(const TrainConfig& config, std::ostream& log) {
  config.validate();
  config.check_paths();
  ensure_dir(config.output_dir);
  write_text_file(config.output_dir / "config.json", to_json(config).dump(2) + "\n");

  // Gather records per network task.
  std::vector<TaskPool> pools;
  for (const auto& t : config.network.tasks) pools.push_back({t, {}});
  std::size_t ignored = 0;
  std::vector<ManifestRecord> primary_records;
  const std::size_t multiple = std::size_t{1} << (config.network.depth - 1);
  const CropPolicy policy{training_crop(config.data.crop, multiple), config.data.z_overlap, 0.0f};
  for (const auto& manifest : config.data.manifests) {
    for (const auto& r : read_manifest(manifest)) {
      auto it = std::find_if(pools.begin(), pools.end(),
                             [&r](const TaskPool& p) { return p.spec.name == r.task; });
      if (it == pools.end()) {
        ++ignored;
        continue;
      }
      if (r.mask.empty()) {
        throw ConfigError("training record '" + r.case_id + "' (" + r.task + ") has no mask");
      }
      Sample s{read_image(r.image), read_labels(r.mask), r.task, r.case_id};
      s.validate();
      validate_labels(s.mask, it->spec.num_classes());
      PoolCase pc;
      pc.case_id = r.case_id;
      Sample prepared = resample_sample(s, config.data.target_spacing);
      prepared.image = normalize_intensity(prepared.image, config.data.window_lo, config.data.window_hi);
      for (auto& c : crop_z(prepared, policy)) pc.crops.push_back(std::move(c.sample));
      if (it == pools.begin()) {
        pc.raw_image = std::move(s.image);
        pc.raw_mask = std::move(s.mask);
      }
      it->cases.push_back(std::move(pc));
    }
  }
  for (const auto& p : pools) {
    if (p.cases.empty()) throw ConfigError("no training records for task '" + p.spec.name + "'");
  }
  if (ignored) log << "ignored " << ignored << " records for tasks outside the network\n";

  TaskPool& primary = pools.front();
  std::vector<std::optional<std::size_t>> fold_ids;
  FoldPlan plan;
  if (config.folds.mode == FoldMode::cv) {
    std::vector<std::string> ids;
    for (const auto& c : primary.cases) ids.push_back(c.case_id);
    plan = plan_folds(ids, config.folds.k, config.fold_seed());
    if (config.folds.only) {
      fold_ids.push_back(*config.folds.only);
    } else {
      for (std::size_t f = 0; f < config.folds.k; ++f) fold_ids.push_back(f);
    }
  } else {
    fold_ids.push_back(std::nullopt);
  }

  TrainOutputs out;
  std::ostringstream train_log;
  train_log << "fold,epoch,step";
  for (const auto& p : pools) train_log << ',' << p.spec.name << "_loss";
  train_log << ",total_loss\n";

  for (const auto& fold : fold_ids) {
    auto in_val = [&](const PoolCase& c) { return !fold || plan.fold_of(c.case_id) == *fold; };
    auto in_train = [&](const PoolCase& c) { return !fold || plan.fold_of(c.case_id) != *fold; };

    // Training items: (case, crop) per task. Only the primary task is split by fold.
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> items(pools.size());
    for (std::size_t t = 0; t < pools.size(); ++t) {
      for (std::size_t i = 0; i < pools[t].cases.size(); ++i) {
        if (t == 0 && !in_train(pools[t].cases[i])) continue;
        for (std::size_t k = 0; k < pools[t].cases[i].crops.size(); ++k) items[t].push_back({i, k});
      }
      if (items[t].empty()) {
        throw ConfigError("fold leaves no training crops for task '" + pools[t].spec.name + "'");
      }
    }
    std::vector<std::size_t> val_cases;
    for (std::size_t i = 0; i < primary.cases.size(); ++i) {
      if (in_val(primary.cases[i])) val_cases.push_back(i);
    }

    MultiTaskNet<float> net = MultiTaskNet<float>::build(config.network);
    AdamState<float> adam(config.optimizer);
    const std::string fold_label = fold ? "fold " + std::to_string(*fold) : "train";
    const std::uint64_t fold_seed = mix_seed(config.seed, fold ? *fold + 1 : 0);
    ConvergenceLog convergence;
    std::vector<CaseMetrics> last_eval;

    auto validate_now = [&]() {
      last_eval.clear();
      double sum = 0;
      for (std::size_t i : val_cases) {
        const PoolCase& c = primary.cases[i];
        const LabelVolume pred = infer_labels(net, c.raw_image, primary.spec.name, config.data);
        last_eval.push_back(case_metrics(pred, c.raw_mask, primary.spec, c.case_id, fold));
        sum += last_eval.back().dice_mean;
      }
      return val_cases.empty() ? 0.0 : sum / static_cast<double>(val_cases.size());
    };

    std::vector<std::size_t> sizes;
    for (const auto& it : items) sizes.push_back(it.size());
    bool stop = false;
    std::size_t steps = 0;
    for (std::size_t epoch = 0; epoch < config.schedule.epochs && !stop; ++epoch) {
      const auto seqs = epoch_schedule(sizes, fold_seed, epoch);
      const std::size_t length = seqs.front().size();
      for (std::size_t p = 0; p < length && !stop; p += config.schedule.batch_size) {
        const std::size_t end = std::min(length, p + config.schedule.batch_size);
        std::vector<std::vector<Sample>> owned(pools.size());
        std::vector<TaskBatch<float>> batches;
        for (std::size_t t = 0; t < pools.size(); ++t) {
          std::vector<const Sample*> ptrs;
          for (std::size_t q = p; q < end; ++q) {
            const auto [ci, ki] = items[t][seqs[t][q]];
            const PoolCase& c = pools[t].cases[ci];
            const Sample& crop = c.crops[ki];
            if (config.data.augment) {
              const std::string key = c.case_id + "#" + std::to_string(ki);
              owned[t].push_back(augment(crop, sample_seed(fold_seed, pools[t].spec.name + "/" + key, epoch),
                                         config.data.augment_ranges));
            } else {
              owned[t].push_back(crop);
            }
          }
          for (const auto& s : owned[t]) ptrs.push_back(&s);
          batches.push_back(stack(pools[t].spec.name, ptrs));
        }
        const StepMetrics m = train_step(net, std::span<const TaskBatch<float>>(batches), config.loss, adam);
        ++steps;
        train_log << (fold ? std::to_string(*fold) : "") << ',' << epoch + 1 << ',' << steps;
        for (double l : m.task_losses) train_log << ',' << format_double(l);
        train_log << ',' << format_double(m.total) << '\n';
        if (config.schedule.max_steps && steps >= *config.schedule.max_steps) stop = true;
      }
      const bool last = stop || epoch + 1 == config.schedule.epochs;
      if (last || (epoch + 1) % config.schedule.eval_interval == 0) {
        const double dice = validate_now();
        convergence.append(epoch + 1, dice);
        log << fold_label << " epoch " << epoch + 1 << " step " << steps << " validation dice "
            << format_double(dice) << '\n';
      }
    }
    out.steps += steps;
    out.cases.insert(out.cases.end(), last_eval.begin(), last_eval.end());
    out.convergence.emplace_back(fold_label, convergence);
    const fs::path ckpt =
        config.output_dir / (fold ? "fold" + std::to_string(*fold) + ".ckpt" : std::string("model.ckpt"));
    save_checkpoint(net, ckpt);
    out.checkpoints.push_back(ckpt);
  }

  write_text_file(config.output_dir / "train_log.csv", train_log.str());
  write_metrics_csv(out.cases, config.output_dir / "metrics.csv");
  write_text_file(config.output_dir / "convergence.csv", convergence_csv(out.convergence));
  write_text_file(config.output_dir / "convergence.svg", convergence_svg(out.convergence));
  write_text_file(config.output_dir / "tkv_scatter.csv", tkv_scatter_csv(out.cases));
  write_text_file(config.output_dir / "tkv_scatter.svg", tkv_scatter_svg(out.cases));
  return out;
}

EvalOutputs run_evaluation(const std::vector<ManifestRecord>& truth, const std::string& task,
                           const std::optional<fs::path>& checkpoint,
                           const std::optional<fs::path>& predictions, const DataConfig& data,
                           const fs::path& out_dir, std::ostream& log) {
  if (checkpoint.has_value() == predictions.has_value()) {
    throw ConfigError("evaluation needs exactly one of a checkpoint or a prediction manifest");
  }
  ensure_dir(out_dir);
  std::optional<MultiTaskNet<float>> net;
  std::map<std::string, ManifestRecord> predicted;
  if (checkpoint) {
    net.emplace(load_checkpoint(*checkpoint));
    net->task(task);  // unknown task -> ConfigError
  } else {
    for (auto& r : read_manifest(*predictions)) {
      if (r.task == task) predicted.emplace(r.case_id, std::move(r));
    }
  }
  EvalOutputs out;
  for (const auto& r : truth) {
    if (r.task != task) continue;
    if (r.mask.empty() || !fs::exists(r.mask)) {
      log << "warning: case '" << r.case_id << "' has no ground-truth mask; skipped\n";
      ++out.skipped;
      continue;
    }
    const LabelVolume gt = read_labels(r.mask);
    LabelVolume pred;
    if (net) {
      pred = infer_labels(*net, read_image(r.image), task, data);
    } else {
      auto it = predicted.find(r.case_id);
      if (it == predicted.end() || it->second.mask.empty() || !fs::exists(it->second.mask)) {
        log << "warning: no prediction for case '" << r.case_id << "'; skipped\n";
        ++out.skipped;
        continue;
      }
      pred = read_labels(it->second.mask);
      if (pred.dims != gt.dims) {
        log << "warning: prediction for case '" << r.case_id << "' has dims " << to_string(pred.dims)
            << ", ground truth " << to_string(gt.dims) << "; skipped\n";
        ++out.skipped;
        continue;
      }
    }
    const TaskSpec spec = net ? net->task(task) : spec_for_evaluation(task, gt, pred);
    validate_labels(pred, spec.num_classes());
    validate_labels(gt, spec.num_classes());
    out.cases.push_back(case_metrics(pred, gt, spec, r.case_id, r.fold));
  }
  write_metrics_csv(out.cases, out_dir / "metrics.csv");
  write_text_file(out_dir / "tkv_scatter.csv", tkv_scatter_csv(out.cases));
  write_text_file(out_dir / "tkv_scatter.svg", tkv_scatter_svg(out.cases));
  std::vector<TkvResult> tkv;
  for (const auto& c : out.cases) tkv.push_back({c.case_id, c.tkv_pred_mm3, c.tkv_gt_mm3, c.tkv_pct_err});
  const MapeSummary m = mape(tkv);
  log << "evaluated " << out.cases.size() << " cases, skipped " << out.skipped << ", TKV MAPE "
      << format_double(m.mape) << "% (" << m.excluded << " cases without ground-truth TKV)\n";
  return out;
}

SynthOutputs run_synth(const SynthOptions& options, const fs::path& out_dir) {
  ensure_dir(out_dir);
  ensure_dir(out_dir / "kidney");
  ensure_dir(out_dir / "liver");
  SynthOutputs out;
  std::ostringstream truth;
  truth << "case_id,analytic_tkv_mm3,voxel_tkv_mm3,liver_contacts_kidney\n";
  for (std::size_t i = 0; i < options.count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "case%03zu", i);
    PhantomSpec spec = PhantomSpec::for_grid(options.dims, options.spacing, mix_seed(options.seed, i));
    if (options.lumpiness) spec.lumpiness = *options.lumpiness;
    if (options.noise_sigma) spec.noise_sigma_hu = *options.noise_sigma;
    if (options.contact_probability) spec.contact_probability = *options.contact_probability;
    const PhantomPair pair = generate_phantom_pair(spec, id);
    for (const PhantomCase* pc : {&pair.kidney, &pair.liver}) {
      const std::string& task = pc->sample.task;
      ManifestRecord r;
      r.case_id = id;
      r.task = task;
      r.image = out_dir / task / (std::string(id) + "_image.mha");
      r.mask = out_dir / task / (std::string(id) + "_mask.mha");
      write_volume(pc->sample.image, r.image);
      write_volume(pc->sample.mask, r.mask);
      out.records.push_back(r);
    }
    truth << id << ',' << format_double(pair.kidney.analytic_tkv_mm3()) << ','
          << format_double(compute_tkv(pair.kidney.sample.mask, {1, 2})) << ','
          << (pair.kidney.liver_contacts_kidney ? 1 : 0) << '\n';
  }
  out.manifest = out_dir / "manifest.jsonl";
  write_manifest(out.records, out.manifest);
  write_text_file(out_dir / "truth.csv", truth.str());
  return out;
}

fs::path run_preprocess(const std::vector<ManifestRecord>& records, const DataConfig& data,
                        bool crop, const fs::path& out_dir) {
  ensure_dir(out_dir);
  std::vector<ManifestRecord> written;
  const CropPolicy policy{data.crop, data.z_overlap, static_cast<float>(data.window_lo)};
  for (const auto& r : records) {
    ensure_dir(out_dir / r.task);
    const ImageVolume image = read_image(r.image);
    const bool has_mask = !r.mask.empty();
    const LabelVolume mask = has_mask ? read_labels(r.mask)
                                      : LabelVolume(image.dims, image.spacing, image.origin, 0);
    Sample s = resample_sample(Sample{image, mask, r.task, r.case_id}, data.target_spacing);
    std::vector<std::pair<std::string, Sample>> parts;
    if (crop) {
      const auto crops = crop_z(s, policy);
      for (std::size_t k = 0; k < crops.size(); ++k) {
        parts.emplace_back(r.case_id + "_z" + std::to_string(k), crops[k].sample);
      }
    } else {
      parts.emplace_back(r.case_id, std::move(s));
    }
    for (auto& [id, part] : parts) {
      ManifestRecord w;
      w.case_id = id;
      w.task = r.task;
      w.fold = r.fold;
      w.image = out_dir / r.task / (id + "_image.mha");
      write_volume(part.image, w.image);
      if (has_mask) {
        w.mask = out_dir / r.task / (id + "_mask.mha");
        write_volume(part.mask, w.mask);
      }
      written.push_back(std::move(w));
    }
  }
  const fs::path manifest = out_dir / "manifest.jsonl";
  write_manifest(written, manifest);
  return manifest;
}

}  // namespace tkvseg::cli
