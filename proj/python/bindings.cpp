#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "caeav/errors.hpp"
#include "caeav/harness.hpp"
#include "caeav/losses.hpp"
#include "caeav/ops.hpp"

namespace py = pybind11;
using namespace caeav;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape s(a.shape(), a.shape() + a.ndim());
  if (s.empty()) s = {1};
  return Tensor(s, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape.begin(), t.shape.end()));
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

// Evaluate a scalar/tensor expression of constant inputs without recording gradients.
template <class F>
auto no_grad(F&& f) {
  Tape t(Tape::Mode::NoGrad);
  return f(t);
}

py::dict metrics_dict(const EvalMetrics& m) {
  py::dict d;
  d["acc_overall"] = m.acc_overall;
  d["acc_aligned"] = m.acc_aligned;
  d["acc_misaligned"] = m.acc_misaligned;
  d["g_aligned"] = m.g_aligned;
  d["g_misaligned"] = m.g_misaligned;
  d["w_tm_aligned"] = m.w_tm_aligned;
  d["w_tm_misaligned"] = m.w_tm_misaligned;
  d["frames"] = m.frames;
  d["frames_aligned"] = m.frames_aligned;
  d["frames_misaligned"] = m.frames_misaligned;
  return d;
}

py::dict episode_dict(const Episode& e) {
  py::dict d;
  d["visual"] = to_array(e.visual);
  d["audio"] = to_array(e.audio);
  d["caption_visual"] = to_array(e.captions.visual);
  d["caption_audio"] = to_array(e.captions.audio);
  d["event_class"] = e.event_class;
  d["visual_class"] = e.visual_class;
  d["audio_class"] = e.audio_class;
  d["aligned"] = std::vector<bool>(e.aligned.begin(), e.aligned.end());
  d["video_id"] = e.video_id;
  d["scenario"] = to_string(e.scenario);
  return d;
}

TrainConfig config_from(const std::string& text, const std::string& preset) {
  std::optional<TaskPreset> p;
  if (!preset.empty()) p = preset_from_string(preset);
  return parse_config(text.empty() ? "schema_version = 1\n" : text, p);
}

}  // namespace

PYBIND11_MODULE(_caeav, m) {
  m.doc() = "Agreement-gated audio-visual enrichment: tensors, losses, synthetic data and training";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<InputError>(m, "InputError", base.ptr());
  py::register_exception<VersionError>(m, "VersionError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  m.attr("__version__") = kCodeVersion;

  // --- primitives ---
  m.def("softmax", [](const Array& x) { return no_grad([&](Tape& t) { return to_array(softmax_lastdim(t.constant(to_tensor(x))).value()); }); },
        "Softmax over the last axis.");
  m.def("entropy", [](const Array& p) { return no_grad([&](Tape& t) { return to_array(entropy_lastdim(t.constant(to_tensor(p))).value()); }); },
        "Shannon entropy (nats) of each last-axis distribution.");
  m.def("topk_count", &topk_count, py::arg("length"), py::arg("ratio"));
  m.def(
      "topk_mask",
      [](const Array& scores, double ratio) {
        return no_grad([&](Tape& t) { return to_array(topk_mask(t.constant(to_tensor(scores)), ratio).mask); });
      },
      py::arg("scores"), py::arg("ratio"), "0/1 mask of the ceil(ratio*L) largest entries per row; ties go to the lower index.");

  // --- losses ---
  m.def(
      "loss_infonce_cap",
      [](const Array& z, const Array& zc, const std::vector<std::int64_t>& ids, double tau) {
        return no_grad([&](Tape& t) {
          return loss_infonce_cap(t.constant(to_tensor(z)), t.constant(to_tensor(zc)), ids, tau).item();
        });
      },
      py::arg("z_modality"), py::arg("z_caption"), py::arg("video_ids"), py::arg("tau") = 0.07);
  m.def(
      "loss_va",
      [](const Array& zv, const Array& za) {
        return no_grad([&](Tape& t) { return loss_va(t.constant(to_tensor(zv)), t.constant(to_tensor(za))).item(); });
      },
      py::arg("z_visual"), py::arg("z_audio"));
  m.def(
      "loss_entropy",
      [](const Array& pv, const Array& pa, int sign) {
        return no_grad(
            [&](Tape& t) { return loss_entropy(t.constant(to_tensor(pv)), t.constant(to_tensor(pa)), sign).item(); });
      },
      py::arg("soft_visual"), py::arg("soft_audio"), py::arg("sign") = -1);

  // --- configuration and schedules ---
  m.def(
      "resolve_config",
      [](const std::string& text, const std::string& preset) { return config_to_text(config_from(text, preset)); },
      py::arg("text") = "", py::arg("preset") = "", "Parse a config and return every key with its resolved value.");
  m.def(
      "learning_rates",
      [](const std::string& text, const std::string& preset) {
        const TrainConfig c = config_from(text, preset);
        std::vector<double> out;
        for (int e = 0; e < c.epochs; ++e) out.push_back(c.lr(e));
        return out;
      },
      py::arg("text") = "", py::arg("preset") = "");
  m.def(
      "gamma_schedule",
      [](const std::string& text, const std::string& preset) {
        const TrainConfig c = config_from(text, preset);
        std::vector<double> out;
        for (int e = 0; e < c.epochs; ++e) out.push_back(c.loss.gamma_effective(e));
        return out;
      },
      py::arg("text") = "", py::arg("preset") = "");

  // --- data ---
  m.def(
      "make_splits",
      [](const std::string& text, std::size_t n_train, std::size_t n_test) {
        const TrainConfig c = config_from(text, "");
        const Split s = make_splits(c.data, n_train, n_test, c.data.misalign_fraction);
        py::list train, test;
        for (const Episode& e : s.train) train.append(episode_dict(e));
        for (const Episode& e : s.test) test.append(episode_dict(e));
        return py::make_tuple(train, test);
      },
      py::arg("config") = "", py::arg("n_train") = 8, py::arg("n_test") = 4,
      "Synthetic train/test episodes as dicts of numpy arrays and labels.");
  m.def(
      "export_dataset",
      [](const std::string& text, std::size_t n, const std::string& path) {
        const TrainConfig c = config_from(text, "");
        save_dataset(path, Dataset{c.data, make_splits(c.data, n, 1, c.data.misalign_fraction).train});
      },
      py::arg("config"), py::arg("n"), py::arg("path"));
  m.def(
      "load_dataset",
      [](const std::string& path) {
        py::list out;
        for (const Episode& e : load_dataset(path).episodes) out.append(episode_dict(e));
        return out;
      },
      py::arg("path"));

  // --- training, evaluation, batteries ---
  m.def(
      "train",
      [](const std::string& text, std::uint64_t seed, const std::string& out_dir, const std::string& preset) {
        TrainConfig c = config_from(text, preset);
        c.seed = seed;
        c.resolve();
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = run_train(c, out_dir);
        }
        py::list history;
        for (const MetricsRecord& h : r.history) {
          py::dict d = metrics_dict(h.train);
          d["epoch"] = h.epoch;
          d["lr"] = h.lr;
          d["gamma_eff"] = h.gamma_eff;
          d["loss_total"] = h.loss_total;
          d["loss_task"] = h.loss_task;
          history.append(d);
        }
        py::dict res;
        res["test"] = metrics_dict(r.test);
        res["history"] = history;
        return res;
      },
      py::arg("config") = "", py::arg("seed") = 0, py::arg("out_dir") = "", py::arg("preset") = "",
      "Train one model; writes metrics.csv, checkpoint.bin and manifest.json when out_dir is given.");
  m.def(
      "evaluate_checkpoint",
      [](const std::string& text, std::uint64_t seed, const std::string& checkpoint) {
        TrainConfig c = config_from(text, "");
        c.seed = seed;
        c.resolve();
        const Split s = make_splits(c.data, c.n_train, c.n_test, c.data.misalign_fraction);
        return metrics_dict(run_eval(c, checkpoint, s.test));
      },
      py::arg("config"), py::arg("seed"), py::arg("checkpoint"));
  m.def(
      "gradcheck",
      [](const std::string& only) {
        std::vector<GradCheckEntry> entries;
        {
          py::gil_scoped_release release;
          entries = run_gradcheck({only, ""});
        }
        py::list out;
        for (const auto& e : entries) {
          py::dict d;
          d["name"] = e.name;
          d["max_rel_error"] = e.max_rel_error;
          d["threshold"] = e.threshold;
          d["passed"] = e.passed();
          out.append(d);
        }
        return out;
      },
      py::arg("only") = "", "Finite-difference battery; each entry reports its worst relative error.");
  m.def(
      "ablate",
      [](const std::string& text, const std::vector<std::string>& groups, const std::vector<std::uint64_t>& seeds) {
        TrainConfig c = config_from(text, "");
        if (!seeds.empty()) c.ablation_seeds = seeds;
        py::gil_scoped_release release;
        return ablation_csv(run_ablation(c, groups));
      },
      py::arg("config") = "", py::arg("groups") = std::vector<std::string>{},
      py::arg("seeds") = std::vector<std::uint64_t>{}, "Run the ablation battery and return the CSV text.");
}
