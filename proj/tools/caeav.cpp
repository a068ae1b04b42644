#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "caeav/errors.hpp"
#include "caeav/harness.hpp"

using namespace caeav;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string preset;
  std::string caption_file;
};

void add_common(CLI::App* app, Common& c, const std::string& default_out) {
  c.out = default_out;
  app->add_option("--config", c.config, "flat key = value config file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "run seed (overrides train.seed)");
  app->add_option("--out", c.out, "output directory")->capture_default_str();
  app->add_option("--preset", c.preset, "task preset")
      ->check(CLI::IsMember({"avqa", "avs-s4", "avs-ms3", "ave", "avvp", "synthetic"}));
  app->add_option("--caption-file", c.caption_file, "caption embeddings keyed by video id")
      ->check(CLI::ExistingFile);
}

TrainConfig resolve(const Common& c) {
  std::optional<TaskPreset> preset;
  if (!c.preset.empty()) preset = preset_from_string(c.preset);
  TrainConfig cfg;
  if (!c.config.empty()) {
    cfg = load_config(c.config, preset);
  } else {
    apply_preset(cfg, preset.value_or(TaskPreset::Synthetic));
  }
  if (c.seed) cfg.seed = *c.seed;
  if (!c.caption_file.empty()) cfg.caption_file = c.caption_file;
  cfg.resolve();
  cfg.validate();
  return cfg;
}

void write_file(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot write " + p.string());
  os << s;
}

void print_eval(const EvalMetrics& m) {
  std::printf("acc_overall=%.4f acc_aligned=%.4f acc_misaligned=%.4f g_aligned=%.4f g_misaligned=%.4f "
              "w_tm_aligned=%.4f w_tm_misaligned=%.4f frames=%zu\n",
              m.acc_overall, m.acc_aligned, m.acc_misaligned, m.g_aligned, m.g_misaligned, m.w_tm_aligned,
              m.w_tm_misaligned, m.frames);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"caeav: agreement-gated audio-visual enrichment on synthetic episodes"};
  app.require_subcommand(1);

  Common train_opts, eval_opts, ablate_opts, gen_opts;
  auto* train = app.add_subcommand("train", "train one model and write metrics, checkpoint and manifest");
  add_common(train, train_opts, "runs/train");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_opts, "runs/eval");
  std::string checkpoint, dataset;
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", dataset, "dataset file from gen-data (default: regenerate the test split)")
      ->check(CLI::ExistingFile);

  auto* ablate = app.add_subcommand("ablate", "module grid, insertion locations and entropy signs over seeds");
  add_common(ablate, ablate_opts, "runs/ablate");
  std::vector<std::string> groups;
  std::vector<std::uint64_t> seeds;
  ablate->add_option("--groups", groups, "subset of: grid location entropy_sign");
  ablate->add_option("--seeds", seeds, "seed list (overrides ablate.seeds)");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference battery");
  std::string only, corrupt, grad_out;
  grad->add_option("--only", only, "run checks whose name contains this");
  grad->add_option("--corrupt", corrupt, "perturb the adjoint of the named check (fault injection)");
  grad->add_option("--out", grad_out, "directory for gradcheck.txt");

  auto* gen = app.add_subcommand("gen-data", "write train/test datasets and a caption file");
  add_common(gen, gen_opts, "runs/data");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const TrainConfig cfg = resolve(train_opts);
      TrainResult r = run_train(cfg, train_opts.out);
      const MetricsRecord& last = r.history.empty() ? MetricsRecord{} : r.history.back();
      std::printf("epochs=%zu final_loss=%.6f\n", r.history.size(), last.loss_total);
      print_eval(r.test);
      std::printf("wrote %s\n", train_opts.out.c_str());
    } else if (*eval) {
      const TrainConfig cfg = resolve(eval_opts);
      std::vector<Episode> eps;
      if (!dataset.empty()) {
        eps = load_dataset(dataset).episodes;
      } else {
        eps = make_splits(cfg.data, cfg.n_train, cfg.n_test, cfg.data.misalign_fraction).test;
      }
      const EvalMetrics m = run_eval(cfg, checkpoint, eps);
      print_eval(m);
      fs::create_directories(eval_opts.out);
      std::ostringstream os;
      os << "acc_overall,acc_aligned,acc_misaligned,g_aligned,g_misaligned,w_tm_aligned,w_tm_misaligned,frames\n";
      os.precision(10);
      os << m.acc_overall << "," << m.acc_aligned << "," << m.acc_misaligned << "," << m.g_aligned << ","
         << m.g_misaligned << "," << m.w_tm_aligned << "," << m.w_tm_misaligned << "," << m.frames << "\n";
      write_file(fs::path(eval_opts.out) / "eval.csv", os.str());
    } else if (*ablate) {
      TrainConfig cfg = resolve(ablate_opts);
      if (!seeds.empty()) cfg.ablation_seeds = seeds;
      const auto rows = run_ablation(cfg, groups);
      fs::create_directories(ablate_opts.out);
      const std::string csv = ablation_csv(rows);
      write_file(fs::path(ablate_opts.out) / "ablation.csv", csv);
      std::cout << csv;
      for (const auto& r : rows)
        if (!r.finite) {
          std::fprintf(stderr, "row %s hit a non-finite loss\n", r.name.c_str());
          return 1;
        }
    } else if (*grad) {
      GradCheckOptions o{only, corrupt};
      const auto entries = run_gradcheck(o);
      const std::string report = gradcheck_report(entries);
      std::cout << report;
      if (!grad_out.empty()) {
        fs::create_directories(grad_out);
        write_file(fs::path(grad_out) / "gradcheck.txt", report);
      }
      for (const auto& e : entries)
        if (!e.passed()) {
          std::fprintf(stderr, "gradient check failed: %s (%s[%zu] analytic=%.12g numeric=%.12g)\n", e.name.c_str(),
                       e.worst_param.c_str(), e.worst_index, e.analytic, e.numeric);
          return 1;
        }
    } else if (*gen) {
      const TrainConfig cfg = resolve(gen_opts);
      const Split s = make_splits(cfg.data, cfg.n_train, cfg.n_test, cfg.data.misalign_fraction);
      fs::create_directories(gen_opts.out);
      const fs::path dir(gen_opts.out);
      save_dataset((dir / "train.ds").string(), {cfg.data, s.train});
      save_dataset((dir / "test.ds").string(), {cfg.data, s.test});
      CaptionTable table;
      for (const auto* split : {&s.train, &s.test})
        for (const Episode& ep : *split) table[ep.video_id] = ep.captions;
      save_caption_file((dir / "captions.bin").string(), table);
      std::printf("wrote %zu train and %zu test episodes to %s\n", s.train.size(), s.test.size(),
                  gen_opts.out.c_str());
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
