#include "caeav/harness.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "caeav/checkpoint.hpp"
#include "caeav/errors.hpp"

namespace caeav {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kModelStream = 0x4D4F'4445'4C00ULL;
constexpr std::uint64_t kShuffleStream = 0x5348'5546'0000ULL;

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot write " + p.string());
  os << s;
}

std::uint64_t model_seed(std::uint64_t seed) { return Rng(seed).fork(kModelStream).next(); }

}  // namespace

// --- metrics -----------------------------------------------------------------

void MetricsAccumulator::add(const Episode& ep, const ModelOutput& out) {
  const Tensor& lg = out.logits.value();
  const std::size_t T = lg.shape[0], K = lg.shape[1];
  std::size_t caste_layers = 0;
  for (const auto& d : out.layers) caste_layers += d.has_caste ? 1 : 0;
  for (std::size_t t = 0; t < T; ++t) {
    const double* row = lg.data.data() + t * K;
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (row[k] > row[best]) best = k;
    const int a = ep.aligned[t] ? 0 : 1;
    ++n_[a];
    correct_[a] += static_cast<int>(best) == ep.event_class[t] ? 1 : 0;
    if (caste_layers) {
      double g = 0, w = 0;
      for (const auto& d : out.layers) {
        if (!d.has_caste) continue;
        g += d.g.data[t];
        w += d.w_tm.data[t];
      }
      g_[a] += g / static_cast<double>(caste_layers);
      wtm_[a] += w / static_cast<double>(caste_layers);
      ++gated_[a];
    }
  }
}

EvalMetrics MetricsAccumulator::finish() const {
  auto ratio = [](double a, std::size_t b) { return b ? a / static_cast<double>(b) : 0.0; };
  EvalMetrics m;
  m.frames_aligned = n_[0];
  m.frames_misaligned = n_[1];
  m.frames = n_[0] + n_[1];
  m.acc_overall = ratio(static_cast<double>(correct_[0] + correct_[1]), m.frames);
  m.acc_aligned = ratio(static_cast<double>(correct_[0]), n_[0]);
  m.acc_misaligned = ratio(static_cast<double>(correct_[1]), n_[1]);
  m.g_aligned = ratio(g_[0], gated_[0]);
  m.g_misaligned = ratio(g_[1], gated_[1]);
  m.w_tm_aligned = ratio(wtm_[0], gated_[0]);
  m.w_tm_misaligned = ratio(wtm_[1], gated_[1]);
  return m;
}

std::string metrics_csv_header() {
  return "epoch,lr,gamma_eff,loss_total,loss_task,loss_cap_v,loss_cap_a,loss_va,loss_ent,"
         "acc_overall,acc_aligned,acc_misaligned,g_aligned,g_misaligned,w_tm_aligned,w_tm_misaligned";
}

std::string metrics_csv_row(const MetricsRecord& r) {
  const EvalMetrics& e = r.train;
  std::string s = std::to_string(r.epoch);
  for (double x : {r.lr, r.gamma_eff, r.loss_total, r.loss_task, r.loss_cap_visual, r.loss_cap_audio, r.loss_va,
                   r.loss_entropy, e.acc_overall, e.acc_aligned, e.acc_misaligned, e.g_aligned, e.g_misaligned,
                   e.w_tm_aligned, e.w_tm_misaligned})
    s += "," + num(x);
  return s;
}

static std::string eval_csv(const EvalMetrics& m) {
  return "acc_overall,acc_aligned,acc_misaligned,g_aligned,g_misaligned,w_tm_aligned,w_tm_misaligned,frames,"
         "frames_aligned,frames_misaligned\n" +
         num(m.acc_overall) + "," + num(m.acc_aligned) + "," + num(m.acc_misaligned) + "," + num(m.g_aligned) + "," +
         num(m.g_misaligned) + "," + num(m.w_tm_aligned) + "," + num(m.w_tm_misaligned) + "," +
         std::to_string(m.frames) + "," + std::to_string(m.frames_aligned) + "," +
         std::to_string(m.frames_misaligned) + "\n";
}

static nlohmann::ordered_json eval_json(const EvalMetrics& m) {
  return {{"acc_overall", m.acc_overall},     {"acc_aligned", m.acc_aligned},   {"acc_misaligned", m.acc_misaligned},
          {"g_aligned", m.g_aligned},         {"g_misaligned", m.g_misaligned}, {"w_tm_aligned", m.w_tm_aligned},
          {"w_tm_misaligned", m.w_tm_misaligned}, {"frames", m.frames}};
}

// --- captions ----------------------------------------------------------------

std::vector<const CaptionBank*> resolve_captions(const std::vector<Episode>& eps, const CaptionTable* table,
                                                 std::size_t c_text) {
  std::vector<const CaptionBank*> out(eps.size(), nullptr);
  if (!table) return out;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    auto it = table->find(eps[i].video_id);
    if (it == table->end())
      throw InputError("caption file has no entry for video " + std::to_string(eps[i].video_id));
    if (it->second.visual.shape[1] != c_text)
      throw DimensionError("caption file width " + std::to_string(it->second.visual.shape[1]) +
                           " does not match C_t=" + std::to_string(c_text));
    out[i] = &it->second;
  }
  return out;
}

// --- evaluation --------------------------------------------------------------

EvalMetrics evaluate(Model& m, const std::vector<Episode>& episodes, const std::vector<const CaptionBank*>& captions) {
  MetricsAccumulator acc;
  Tape t(Tape::Mode::NoGrad);
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    t.reset();
    const CaptionBank* cap = i < captions.size() && captions[i] ? captions[i] : &episodes[i].captions;
    ModelOutput o = m.forward(t, episodes[i].visual, episodes[i].audio, *cap);
    acc.add(episodes[i], o);
  }
  return acc.finish();
}

EvalMetrics run_eval(const TrainConfig& cfg, const std::string& checkpoint, const std::vector<Episode>& episodes) {
  Model m(cfg.model, model_seed(cfg.seed));
  load_checkpoint(checkpoint, m.parameters());
  std::optional<CaptionTable> table;
  if (!cfg.caption_file.empty()) table = load_caption_file(cfg.caption_file);
  return evaluate(m, episodes, resolve_captions(episodes, table ? &*table : nullptr, cfg.model.c_text));
}

// --- training ----------------------------------------------------------------

static void dump_batch(const fs::path& path, int epoch, const std::vector<const Episode*>& batch,
                       const ObjectiveTerms& obj) {
  std::ofstream os(path);
  os << "non-finite loss at epoch " << epoch << "\n";
  auto val = [](const Var& v) { return v.valid() ? num(v.item()) : std::string("n/a"); };
  os << "total=" << val(obj.total) << " task=" << val(obj.terms.task) << " cap_v=" << val(obj.terms.cap_visual)
     << " cap_a=" << val(obj.terms.cap_audio) << " va=" << val(obj.terms.va) << " ent=" << val(obj.terms.entropy)
     << "\n";
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Episode& ep = *batch[i];
    os << "episode video_id=" << ep.video_id << " scenario=" << to_string(ep.scenario)
       << " inputs_finite=" << (ep.visual.all_finite() && ep.audio.all_finite()) << " logits_finite="
       << (i < obj.outputs.size() ? obj.outputs[i].logits.value().all_finite() : false) << "\n";
  }
}

TrainResult run_train(const TrainConfig& cfg_in, const std::string& out_dir, Model* trained) {
  TrainConfig cfg = cfg_in;
  cfg.resolve();
  cfg.validate();
  if (!out_dir.empty()) fs::create_directories(out_dir);

  const Split split = make_splits(cfg.data, cfg.n_train, cfg.n_test, cfg.data.misalign_fraction);
  std::optional<CaptionTable> table;
  if (!cfg.caption_file.empty()) table = load_caption_file(cfg.caption_file);
  const auto train_caps = resolve_captions(split.train, table ? &*table : nullptr, cfg.model.c_text);
  const auto test_caps = resolve_captions(split.test, table ? &*table : nullptr, cfg.model.c_text);

  Model local(cfg.model, model_seed(cfg.seed));
  Model& m = trained ? (*trained = Model(cfg.model, model_seed(cfg.seed))) : local;

  TrainResult res;
  for (Parameter* p : m.frozen()) res.frozen_before.push_back(p->value);
  const ParamList params = m.trainable();

  Rng shuffle = Rng(cfg.seed).fork(kShuffleStream);
  std::vector<std::size_t> order(split.train.size());
  std::string csv = metrics_csv_header() + "\n";
  Tape tape;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[shuffle.below(i + 1)]);
    const double lr = cfg.lr(epoch);
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.gamma_eff = cfg.loss.gamma_effective(epoch);
    MetricsAccumulator acc;
    std::size_t batches = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_episodes) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_episodes);
      std::vector<BatchItem> batch;
      std::vector<const Episode*> eps;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back({&split.train[order[i]], train_caps[order[i]]});
        eps.push_back(&split.train[order[i]]);
      }
      tape.reset();
      for (Parameter* p : params) p->zero_grad();
      ObjectiveTerms obj = model_objective(tape, m, batch, cfg.loss, epoch);
      const double loss = obj.total.item();
      if (!std::isfinite(loss)) {
        std::string where = "(no output directory)";
        if (!out_dir.empty()) {
          const fs::path dump = fs::path(out_dir) / "nonfinite_batch.txt";
          dump_batch(dump, epoch, eps, obj);
          where = dump.string();
        }
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch dumped to " + where);
      }
      for (std::size_t i = 0; i < batch.size(); ++i) acc.add(*eps[i], obj.outputs[i]);
      auto v = [](const Var& x) { return x.valid() ? x.item() : 0.0; };
      rec.loss_total += loss;
      rec.loss_task += v(obj.terms.task);
      rec.loss_cap_visual += v(obj.terms.cap_visual);
      rec.loss_cap_audio += v(obj.terms.cap_audio);
      rec.loss_va += v(obj.terms.va);
      rec.loss_entropy += v(obj.terms.entropy);
      ++batches;

      tape.backward(obj.total);
      for (Parameter* p : params)
        for (std::size_t k = 0; k < p->value.data.size(); ++k) p->value.data[k] -= lr * p->grad.data[k];
    }
    const double nb = static_cast<double>(std::max<std::size_t>(1, batches));
    for (double* x : {&rec.loss_total, &rec.loss_task, &rec.loss_cap_visual, &rec.loss_cap_audio, &rec.loss_va,
                      &rec.loss_entropy})
      *x /= nb;
    rec.train = acc.finish();
    res.history.push_back(rec);
    csv += metrics_csv_row(rec) + "\n";
  }

  res.test = evaluate(m, split.test, test_caps);

  if (!out_dir.empty()) {
    const fs::path dir(out_dir);
    write_text(dir / "metrics.csv", csv);
    write_text(dir / "eval.csv", eval_csv(res.test));
    save_checkpoint((dir / "checkpoint.bin").string(), m.parameters());
    write_text(dir / "config.txt", config_to_text(cfg));
    nlohmann::ordered_json manifest;
    manifest["tool"] = "caeav";
    manifest["code_version"] = kCodeVersion;
    manifest["command"] = "train";
    manifest["seed"] = cfg.seed;
    nlohmann::ordered_json conf;
    for (auto& [k, v] : config_items(cfg)) conf[k] = v;
    manifest["config"] = conf;
    manifest["files"] = {"metrics.csv", "eval.csv", "checkpoint.bin", "config.txt"};
    std::size_t n_params = 0, n_trainable = 0;
    for (Parameter* p : m.parameters()) {
      n_params += p->value.size();
      n_trainable += p->frozen ? 0 : p->value.size();
    }
    manifest["parameters"] = {{"total", n_params}, {"trainable", n_trainable}};
    manifest["test"] = eval_json(res.test);
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  }
  return res;
}

// --- ablation ----------------------------------------------------------------

std::vector<AblationRow> run_ablation(const TrainConfig& cfg, const std::vector<std::string>& groups) {
  auto wanted = [&](const std::string& g) {
    return groups.empty() || std::find(groups.begin(), groups.end(), g) != groups.end();
  };
  std::vector<AblationRow> rows;
  auto row = [](std::string group, std::string name, bool caste, bool kase, bool losses, InsertionLocation loc,
                int sign) {
    AblationRow r;
    r.group = std::move(group);
    r.name = std::move(name);
    r.caste = caste;
    r.case_ = kase;
    r.losses = losses;
    r.location = loc;
    r.entropy_sign = sign;
    return r;
  };
  const auto L1 = InsertionLocation::BeforeMoe;
  if (wanted("grid")) {
    rows.push_back(row("grid", "baseline", false, false, false, L1, -1));
    rows.push_back(row("grid", "caste", true, false, false, L1, -1));
    rows.push_back(row("grid", "case", false, true, false, L1, -1));
    rows.push_back(row("grid", "caste+case", true, true, false, L1, -1));
    rows.push_back(row("grid", "full", true, true, true, L1, -1));
  }
  if (wanted("location")) {
    rows.push_back(row("location", "location1", true, true, true, L1, -1));
    rows.push_back(row("location", "location2", true, true, true, InsertionLocation::BetweenMoe, -1));
    rows.push_back(row("location", "location3", true, true, true, InsertionLocation::AfterMoe, -1));
  }
  if (wanted("entropy_sign")) {
    rows.push_back(row("entropy_sign", "sign-1", true, true, true, L1, -1));
    rows.push_back(row("entropy_sign", "sign+1", true, true, true, L1, +1));
  }

  // rows with equal effective settings share one training run per seed
  std::map<std::string, std::pair<std::vector<EvalMetrics>, bool>> cache;
  for (AblationRow& r : rows) {
    const std::string key = std::to_string(r.caste) + std::to_string(r.case_) + std::to_string(r.losses) +
                            to_string(r.location) + (r.losses ? std::to_string(r.entropy_sign) : "");
    auto it = cache.find(key);
    if (it == cache.end()) {
      std::vector<EvalMetrics> per_seed;
      bool finite = true;
      for (std::uint64_t seed : cfg.ablation_seeds) {
        TrainConfig c = cfg;
        c.seed = seed;
        c.model.enable_caste = r.caste;
        c.model.enable_case = r.case_;
        c.model.enable_aux_losses = r.losses;
        c.model.insertion_location = r.location;
        c.loss.entropy_sign = r.entropy_sign;
        try {
          per_seed.push_back(run_train(c, "").test);
        } catch (const NumericError&) {
          finite = false;
          per_seed.push_back(EvalMetrics{});
        }
      }
      it = cache.emplace(key, std::make_pair(std::move(per_seed), finite)).first;
    }
    r.per_seed = it->second.first;
    r.finite = it->second.second;
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out =
      "group,name,caste,case,losses,location,entropy_sign,seeds,finite,"
      "acc_overall_mean,acc_overall_std,acc_aligned_mean,acc_aligned_std,acc_misaligned_mean,acc_misaligned_std,"
      "g_aligned_mean,g_misaligned_mean,w_tm_aligned_mean,w_tm_misaligned_mean\n";
  for (const AblationRow& r : rows) {
    auto stat = [&](double EvalMetrics::*f) {
      const double n = static_cast<double>(r.per_seed.size());
      double mean = 0, var = 0;
      for (const auto& e : r.per_seed) mean += e.*f;
      mean /= n;
      for (const auto& e : r.per_seed) var += (e.*f - mean) * (e.*f - mean);
      const double sd = r.per_seed.size() > 1 ? std::sqrt(var / (n - 1)) : 0.0;
      return std::make_pair(mean, sd);
    };
    const auto ov = stat(&EvalMetrics::acc_overall), al = stat(&EvalMetrics::acc_aligned),
               mi = stat(&EvalMetrics::acc_misaligned);
    out += r.group + "," + r.name + "," + (r.caste ? "1" : "0") + "," + (r.case_ ? "1" : "0") + "," +
           (r.losses ? "1" : "0") + "," + to_string(r.location) + "," + std::to_string(r.entropy_sign) + "," +
           std::to_string(r.per_seed.size()) + "," + (r.finite ? "1" : "0") + "," + num(ov.first) + "," +
           num(ov.second) + "," + num(al.first) + "," + num(al.second) + "," + num(mi.first) + "," +
           num(mi.second) + "," + num(stat(&EvalMetrics::g_aligned).first) + "," +
           num(stat(&EvalMetrics::g_misaligned).first) + "," + num(stat(&EvalMetrics::w_tm_aligned).first) + "," +
           num(stat(&EvalMetrics::w_tm_misaligned).first) + "\n";
  }
  return out;
}

}  // namespace caeav
