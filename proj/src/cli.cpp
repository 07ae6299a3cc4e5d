#include "earu/cli.hpp"

#include <chrono>
#include <fstream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "earu/augment.hpp"
#include "earu/config.hpp"
#include "earu/gradcheck.hpp"
#include "earu/inference.hpp"
#include "earu/io_util.hpp"
#include "earu/metrics.hpp"
#include "earu/trainer.hpp"
#include "earu/volume_io.hpp"

namespace earu {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

class NumericCheckFailed : public Error {
 public:
  using Error::Error;
};

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string preset;
  std::string loss_ratio;
  bool print_defaults = false;
};

RunConfig resolve_config(const GlobalOptions& g) {
  RunConfig c;
  if (!g.config_path.empty()) {
    const Bytes text = read_file(g.config_path);
    try {
      c = run_config_from_json(json::parse(text.begin(), text.end()));
    } catch (const json::exception& e) {
      throw ConfigError("config '" + g.config_path + "': " + e.what());
    }
  }
  if (!g.preset.empty()) c.model = preset_config(preset_from_string(g.preset));
  if (g.seed) c.train.seed = *g.seed;
  if (!g.loss_ratio.empty()) c.train.loss = parse_loss_ratio(g.loss_ratio);
  c.validate();
  return c;
}

// <dir>/<stem><suffix>
fs::path sibling(const fs::path& p, const std::string& suffix) {
  return p.parent_path() / (p.stem().string() + suffix);
}

struct Manifest {
  std::string command;
  std::vector<std::string> args;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  json extra = json::object();
};

void write_manifest(const fs::path& path, const Manifest& m, const RunConfig& cfg, double wall_s) {
  json j;
  j["command"] = m.command;
  j["args"] = m.args;
  j["config"] = to_json(cfg);
  j["seed"] = cfg.train.seed;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["tool_version"] = kToolVersion;
  j["wall_time_s"] = wall_s;
  if (!m.extra.empty()) j["details"] = m.extra;
  write_file_atomic(path, j.dump(2) + "\n");
}

std::string case_id_for(const std::vector<std::string>& ids, std::size_t i, const std::string& path) {
  if (i < ids.size()) return ids[i];
  std::string stem = fs::path(path).filename().string();
  for (const char* ext : {".nii", ".json"})
    if (stem.size() > std::strlen(ext) && stem.ends_with(ext)) stem.resize(stem.size() - std::strlen(ext));
  return stem;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"EAR-U-Net liver segmentation toolkit", "earu"};
  app.fallthrough();
  app.set_version_flag("--version", kToolVersion);
  GlobalOptions g;
  app.add_option("--config", g.config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Random seed (overrides train.seed)");
  app.add_option("--preset", g.preset, "Model scale preset")->check(CLI::IsMember({"full", "desk", "micro"}));
  app.add_option("--loss-ratio", g.loss_ratio, "Loss weights BCE:DICE, e.g. 1:1 or 0.8:0.2");
  app.add_flag("--print-defaults", g.print_defaults, "Print the resolved configuration as JSON and exit");

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Turn CT/mask volume pairs into a slice archive");
  std::vector<std::string> pre_images, pre_masks, pre_ids;
  std::string pre_out;
  pre->add_option("--image", pre_images, "CT volume (.nii or VSEG .json)")->required()->check(CLI::ExistingFile);
  pre->add_option("--mask", pre_masks, "Liver mask volume, one per --image")->required()->check(CLI::ExistingFile);
  pre->add_option("--case-id", pre_ids, "Case identifiers (default: image file stems)");
  pre->add_option("--out", pre_out, "Slice archive root directory")->required();

  // augment
  auto* aug = app.add_subcommand("augment", "Expand a slice archive with the eight augmentation combinations");
  std::string aug_data, aug_out;
  aug->add_option("--data", aug_data, "Input slice archive")->required()->check(CLI::ExistingDirectory);
  aug->add_option("--out", aug_out, "Output slice archive root")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train the network on a slice archive");
  std::string tr_data, tr_out, tr_resume;
  std::optional<std::size_t> tr_epochs, tr_batch;
  std::optional<double> tr_lr;
  tr->add_option("--data", tr_data, "Slice archive")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", tr_out, "Checkpoint path (last epoch)")->required();
  tr->add_option("--resume", tr_resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
  tr->add_option("--epochs", tr_epochs, "Total epochs (overrides train.epochs)");
  tr->add_option("--batch-size", tr_batch, "Batch size (overrides train.batch_size)");
  tr->add_option("--lr", tr_lr, "Learning rate (overrides train.learning_rate)");

  // segment
  auto* seg = app.add_subcommand("segment", "Segment a CT volume with a trained checkpoint");
  std::string seg_model, seg_image, seg_out;
  std::optional<double> seg_threshold;
  seg->add_option("--model", seg_model, "Checkpoint")->required()->check(CLI::ExistingFile);
  seg->add_option("--image", seg_image, "Raw CT volume")->required()->check(CLI::ExistingFile);
  seg->add_option("--out", seg_out, "Output mask (.nii or .json)")->required();
  seg->add_option("--threshold", seg_threshold, "Probability threshold (overrides inference.threshold)");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Score predicted masks against ground truth");
  std::vector<std::string> ev_pred, ev_gt, ev_ids;
  std::string ev_out;
  ev->add_option("--pred", ev_pred, "Predicted mask volume(s)")->required()->check(CLI::ExistingFile);
  ev->add_option("--gt", ev_gt, "Ground-truth mask volume(s), one per --pred")->required()->check(CLI::ExistingFile);
  ev->add_option("--case-id", ev_ids, "Case identifiers (default: prediction file stems)");
  ev->add_option("--out", ev_out, "CSV path (default: standard output)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full model backward pass");
  std::string gc_size = "micro";
  std::string gc_out;
  gc->add_option("--size", gc_size, "Model preset to check")->check(CLI::IsMember({"micro", "desk"}));
  std::size_t gc_per_tensor = GradcheckOptions{}.max_per_tensor;
  gc->add_option("--per-tensor", gc_per_tensor, "Entries checked per parameter tensor (0 = all)");
  gc->add_option("--out", gc_out, "Optional JSON report path");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, err, err);
    return kExitUsage;
  }

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  try {
    const RunConfig cfg = resolve_config(g);
    if (g.print_defaults) {
      out << to_json(cfg).dump(2) << '\n';
      return kExitOk;
    }
    if (app.get_subcommands().empty()) {
      err << app.help();
      return kExitUsage;
    }
    Manifest m;
    m.args = args;

    if (pre->parsed()) {
      m.command = "preprocess";
      if (pre_images.size() != pre_masks.size()) throw UsageError("preprocess: need one --mask per --image");
      if (!pre_ids.empty() && pre_ids.size() != pre_images.size()) {
        throw UsageError("preprocess: need one --case-id per --image");
      }
      json cases = json::array();
      for (std::size_t i = 0; i < pre_images.size(); ++i) {
        const VolumeData img = read_volume(pre_images[i]);
        const VolumeData msk = read_volume(pre_masks[i]);
        const std::string id = case_id_for(pre_ids, i, pre_images[i]);
        const auto pairs = preprocess_case(img.to_ct(), msk.to_labels(), id, cfg.preprocess);
        write_slice_archive(pre_out, id, pairs, {img.spacing, img.d, img.h, img.w});
        m.inputs.push_back(pre_images[i]);
        m.inputs.push_back(pre_masks[i]);
        m.outputs.push_back((fs::path(pre_out) / id).string());
        cases.push_back({{"case_id", id}, {"slices", pairs.size()}});
        err << "preprocess: " << id << " -> " << pairs.size() << " slices\n";
      }
      m.extra["cases"] = cases;
      write_manifest(fs::path(pre_out) / "run_manifest.json", m, cfg, elapsed());
      return kExitOk;
    }

    if (aug->parsed()) {
      m.command = "augment";
      const auto pairs = read_slice_archive(aug_data);
      Rng rng(cfg.train.seed);
      std::map<std::string, std::vector<SlicePair>> by_case;
      for (const auto& p : pairs) by_case[p.case_id].push_back(p);
      for (const auto& [id, list] : by_case) {
        const auto expanded = expand_all_combinations(list, cfg.augment, rng);
        write_slice_archive(aug_out, id, expanded);
        m.outputs.push_back((fs::path(aug_out) / id).string());
      }
      m.inputs.push_back(aug_data);
      write_manifest(fs::path(aug_out) / "run_manifest.json", m, cfg, elapsed());
      return kExitOk;
    }

    if (tr->parsed()) {
      m.command = "train";
      RunConfig rc = cfg;
      if (tr_epochs) rc.train.epochs = *tr_epochs;
      if (tr_batch) rc.train.batch_size = *tr_batch;
      if (tr_lr) rc.train.learning_rate = *tr_lr;
      rc.train.validate();
      const auto data = read_slice_archive(tr_data);
      std::optional<Checkpoint> resume;
      if (!tr_resume.empty()) {
        resume = load_checkpoint(tr_resume);
        rc.model = resume->config;
        m.inputs.push_back(tr_resume);
      }
      Rng init(rc.train.seed);
      ModelParams<float> params = build_model<float>(rc.model, init);
      const fs::path ckpt = tr_out;
      TrainOptions opt;
      opt.checkpoint_path = ckpt;
      opt.best_path = sibling(ckpt, ".best" + ckpt.extension().string());
      opt.loss_curve_path = sibling(ckpt, ".loss.csv");
      opt.log = &err;
      const TrainResult res = train(params, rc.model, data, rc.train, opt, resume ? &*resume : nullptr);
      if (res.epochs_completed == 0 || (resume && resume->epoch >= rc.train.epochs)) {
        save_checkpoint(make_checkpoint(params, rc.model, res.epochs_completed, res.rng_state, res.adam, res.curve,
                                        to_json(rc.train).dump()),
                        ckpt);
      }
      m.inputs.push_back(tr_data);
      m.outputs = {ckpt.string(), opt.best_path->string(), opt.loss_curve_path->string()};
      m.extra["train_cases"] = res.train_cases;
      m.extra["val_cases"] = res.val_cases;
      m.extra["parameters"] = params.parameter_count();
      write_manifest(sibling(ckpt, ".manifest.json"), m, rc, elapsed());
      return kExitOk;
    }

    if (seg->parsed()) {
      m.command = "segment";
      RunConfig rc = cfg;
      if (seg_threshold) rc.inference.threshold = *seg_threshold;
      rc.inference.validate();
      const Checkpoint ck = load_checkpoint(seg_model);
      rc.model = ck.config;
      ModelParams<float> params = params_from_checkpoint(ck);
      const VolumeData img = read_volume(seg_image);
      const LabelVolume mask = segment_ct(params, ck.config, img.to_ct(), rc.preprocess, rc.inference);
      VolumeData outv = VolumeData::from_labels(mask);
      if (format_for_path(seg_out) == VolumeFormat::nifti) {
        write_nifti(outv, seg_out, img.nifti_header);
      } else {
        write_vseg(outv, seg_out);
      }
      m.inputs = {seg_model, seg_image};
      m.outputs = {seg_out};
      m.extra["geometry"] = "original";
      write_manifest(sibling(seg_out, ".manifest.json"), m, rc, elapsed());
      return kExitOk;
    }

    if (ev->parsed()) {
      m.command = "evaluate";
      if (ev_pred.size() != ev_gt.size()) throw UsageError("evaluate: need one --gt per --pred");
      if (!ev_ids.empty() && ev_ids.size() != ev_pred.size()) throw UsageError("evaluate: need one --case-id per --pred");
      std::vector<MetricReport> reports;
      for (std::size_t i = 0; i < ev_pred.size(); ++i) {
        const LabelVolume a = read_volume(ev_pred[i]).to_labels();
        const LabelVolume b = read_volume(ev_gt[i]).to_labels();
        MetricReport r = evaluate_case(a, b);
        r.case_id = case_id_for(ev_ids, i, ev_pred[i]);
        reports.push_back(std::move(r));
        m.inputs.push_back(ev_pred[i]);
        m.inputs.push_back(ev_gt[i]);
      }
      std::ostringstream csv;
      write_metrics_csv(csv, reports);
      fs::path manifest = "evaluate.manifest.json";
      if (ev_out.empty()) {
        out << csv.str();
      } else {
        write_file_atomic(ev_out, csv.str());
        m.outputs.push_back(ev_out);
        manifest = sibling(ev_out, ".manifest.json");
      }
      write_manifest(manifest, m, cfg, elapsed());
      return kExitOk;
    }

    if (gc->parsed()) {
      m.command = "gradcheck";
      const ModelConfig mc = preset_config(preset_from_string(gc_size));
      GradcheckOptions go;
      go.seed = cfg.train.seed + 1;
      go.max_per_tensor = gc_per_tensor;
      const GradcheckReport rep = model_gradcheck(mc, go);
      out << "max_rel_error=" << format_double(rep.max_error) << " checked=" << rep.checked
          << " failures=" << rep.failures.size() << " worst=" << rep.worst.name << "[" << rep.worst.index << "]\n";
      json j = {{"size", gc_size},
                {"checked", rep.checked},
                {"per_tensor", gc_per_tensor},
                {"max_rel_error", rep.max_error},
                {"tolerance", rep.tolerance},
                {"failures", rep.failures.size()},
                {"worst", rep.worst.name + "[" + std::to_string(rep.worst.index) + "]"}};
      m.extra = j;
      fs::path manifest = "gradcheck.manifest.json";
      if (!gc_out.empty()) {
        write_file_atomic(gc_out, j.dump(2) + "\n");
        m.outputs.push_back(gc_out);
        manifest = sibling(gc_out, ".manifest.json");
      }
      RunConfig rc = cfg;
      rc.model = mc;
      write_manifest(manifest, m, rc, elapsed());
      return rep.passed() ? kExitOk : kExitNumeric;
    }
    err << app.help();
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParameterError& e) {
    err << "parameter error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace earu
