#include "tkvseg/cli/commands.hpp"

#include <cstdio>
#include <optional>
#include <ostream>

#include <CLI11.hpp>

#include "tkvseg/checkpoint.hpp"
#include "tkvseg/cli/config.hpp"
#include "tkvseg/cli/pipeline.hpp"
#include "tkvseg/errors.hpp"
#include "tkvseg/gradcheck_suite.hpp"
#include "tkvseg/metaimage.hpp"

namespace tkvseg::cli {

namespace fs = std::filesystem;

namespace {

DataConfig data_config(const std::string& config_path) {
  if (config_path.empty()) return {};
  return load_train_config(config_path, false).data;
}

Index3 to_index3(const std::vector<std::size_t>& v, const char* what) {
  if (v.size() != 3) throw ConfigError(std::string(what) + " needs three values z,y,x");
  return {v[0], v[1], v[2]};
}

int cmd_gradcheck(std::uint64_t seed, std::size_t shapes, bool inject_fault, std::ostream& out) {
  GradcheckOptions opt;
  opt.seed = seed;
  opt.shapes_per_check = shapes;
  opt.inject_fault = inject_fault;
  bool ok = true;
  for (const auto& e : run_gradcheck_suite(opt)) {
    char line[160];
    std::snprintf(line, sizeof line, "%-4s %-20s shapes=%-3zu max_rel_err=%.3e\n",
                  e.passed ? "PASS" : "FAIL", e.name.c_str(), e.shapes, e.max_error);
    out << line;
    ok = ok && e.passed;
  }
  out << (ok ? "gradcheck: all checks passed\n" : "gradcheck: FAILED\n");
  return ok ? kExitOk : kExitCheckFailed;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"tkvseg: multi-task 3D FCN kidney and liver segmentation", "tkvseg"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // synth
  SynthOptions synth;
  std::string synth_out;
  std::vector<std::size_t> synth_dims{32, 32, 32};
  double lump = 0, noise = 0, contact = 0;
  auto* s = app.add_subcommand("synth", "Generate paired kidney/liver phantoms and a manifest");
  s->add_option("--count", synth.count, "Number of phantom pairs")->capture_default_str();
  s->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  s->add_option("--out", synth_out, "Output directory")->required();
  s->add_option("--dims", synth_dims, "Grid dims z,y,x")->delimiter(',')->expected(3);
  s->add_option("--spacing", synth.spacing, "Isotropic spacing in mm")->capture_default_str();
  auto* lump_opt = s->add_option("--lumpiness", lump, "Radial perturbation amplitude");
  auto* noise_opt = s->add_option("--noise", noise, "Noise sigma (HU)");
  auto* contact_opt = s->add_option("--contact-probability", contact, "Liver/kidney contact probability");

  // preprocess
  std::string pre_manifest, pre_out, pre_config;
  bool pre_crop = false;
  auto* p = app.add_subcommand("preprocess", "Resample a manifest to isotropic spacing (and crop along z)");
  p->add_option("--manifest", pre_manifest, "Input manifest")->required()->check(CLI::ExistingFile);
  p->add_option("--out", pre_out, "Output directory")->required();
  p->add_option("--config", pre_config, "Config file supplying the data section")->check(CLI::ExistingFile);
  p->add_flag("--crop", pre_crop, "Also tile along z to the configured crop size");

  // train
  std::string train_config, train_out;
  std::uint64_t train_seed = 0;
  auto* t = app.add_subcommand("train", "Train per the config (fold loop, evaluation, reports)");
  t->add_option("--config", train_config, "Config file")->required()->check(CLI::ExistingFile);
  auto* train_seed_opt = t->add_option("--seed", train_seed, "Override the run seed");
  t->add_option("--out", train_out, "Override the output directory");

  // infer
  std::string inf_ckpt, inf_image, inf_task = "kidney", inf_out, inf_config;
  auto* i = app.add_subcommand("infer", "Segment one image volume with a checkpoint");
  i->add_option("--checkpoint", inf_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  i->add_option("--image", inf_image, "Input image volume")->required()->check(CLI::ExistingFile);
  i->add_option("--task", inf_task, "Task head to use")->capture_default_str();
  i->add_option("--out", inf_out, "Output label volume (.mha/.mhd) or directory")->required();
  i->add_option("--config", inf_config, "Config file supplying the data section")->check(CLI::ExistingFile);

  // eval
  std::string ev_manifest, ev_ckpt, ev_pred, ev_task = "kidney", ev_out, ev_config;
  auto* e = app.add_subcommand("eval", "Dice and TKV metrics for a manifest");
  e->add_option("--manifest", ev_manifest, "Ground-truth manifest")->required()->check(CLI::ExistingFile);
  auto* ev_ckpt_opt = e->add_option("--checkpoint", ev_ckpt, "Checkpoint to run")->check(CLI::ExistingFile);
  auto* ev_pred_opt =
      e->add_option("--predictions", ev_pred, "Manifest of predicted masks")->check(CLI::ExistingFile);
  ev_ckpt_opt->excludes(ev_pred_opt);
  e->add_option("--task", ev_task, "Task to evaluate")->capture_default_str();
  e->add_option("--out", ev_out, "Output directory")->required();
  e->add_option("--config", ev_config, "Config file supplying the data section")->check(CLI::ExistingFile);

  // gradcheck
  std::uint64_t gc_seed = GradcheckOptions{}.seed;
  std::size_t gc_shapes = GradcheckOptions{}.shapes_per_check;
  bool gc_fault = false;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference checks of every primitive and loss");
  g->add_option("--seed", gc_seed, "Seed for random shapes")->capture_default_str();
  g->add_option("--shapes", gc_shapes, "Random shapes per check")->capture_default_str();
  g->add_flag("--inject-fault", gc_fault)->group("");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (s->parsed()) {
      if (*lump_opt) synth.lumpiness = lump;
      if (*noise_opt) synth.noise_sigma = noise;
      if (*contact_opt) synth.contact_probability = contact;
      synth.dims = to_index3(synth_dims, "--dims");
      const SynthOutputs r = run_synth(synth, synth_out);
      out << "wrote " << r.records.size() << " records to " << r.manifest.string() << '\n';
    } else if (p->parsed()) {
      const fs::path m = run_preprocess(read_manifest(pre_manifest), data_config(pre_config), pre_crop, pre_out);
      out << "wrote " << m.string() << '\n';
    } else if (t->parsed()) {
      TrainConfig cfg = load_train_config(train_config);
      if (*train_seed_opt) set_seed(cfg, train_seed);
      if (!train_out.empty()) cfg.output_dir = train_out;
      const TrainOutputs r = run_training(cfg, err);
      out << "trained " << r.steps << " steps; outputs in " << cfg.output_dir.string() << '\n';
    } else if (i->parsed()) {
      MultiTaskNet<float> net = load_checkpoint(inf_ckpt);
      net.task(inf_task);
      const ImageVolume image = read_image(inf_image);
      const LabelVolume labels = infer_labels(net, image, inf_task, data_config(inf_config));
      fs::path target(inf_out);
      const auto ext = target.extension();
      if (ext != ".mha" && ext != ".mhd") {
        std::error_code ec;
        fs::create_directories(target, ec);
        target /= fs::path(inf_image).stem().string() + "_labels.mha";
      }
      write_volume(labels, target);
      out << "wrote " << target.string() << '\n';
    } else if (e->parsed()) {
      std::optional<fs::path> ck, pr;
      if (*ev_ckpt_opt) ck = ev_ckpt;
      if (*ev_pred_opt) pr = ev_pred;
      const EvalOutputs r = run_evaluation(read_manifest(ev_manifest), ev_task, ck, pr,
                                           data_config(ev_config), ev_out, err);
      out << "evaluated " << r.cases.size() << " cases (" << r.skipped << " skipped); outputs in "
          << ev_out << '\n';
    } else if (g->parsed()) {
      return cmd_gradcheck(gc_seed, gc_shapes, gc_fault, out);
    }
  } catch (const NumericError& ex) {
    err << "numeric failure: " << ex.what() << '\n';
    return kExitNumeric;
  } catch (const ConfigError& ex) {
    err << "config error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& ex) {
    err << "parse error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const IoError& ex) {
    err << "i/o error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const IntegrityError& ex) {
    err << "integrity error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const ValidationError& ex) {
    err << "validation error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const ShapeError& ex) {
    err << "shape error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitCheckFailed;
  }
  return kExitOk;
}

}  // namespace tkvseg::cli
