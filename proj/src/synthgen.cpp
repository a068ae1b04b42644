#include "caeav/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "caeav/binio.hpp"
#include "caeav/errors.hpp"

namespace caeav {

namespace {

constexpr char kMagic[9] = "CAEAVDS1";
constexpr std::uint64_t kDatasetVersion = 1;
constexpr std::uint64_t kPrototypeStream = 0x5052'4F54'4F00ULL;
constexpr std::uint64_t kSplitStream = 0x5350'4C49'5400ULL;
constexpr std::uint64_t kEpisodeStreamBase = 1'000'000;

void fill_unit_rows(Tensor& t, std::size_t row_len, Rng& rng) {
  const std::size_t rows = t.size() / row_len;
  for (std::size_t r = 0; r < rows; ++r) {
    double norm = 0.0;
    for (std::size_t c = 0; c < row_len; ++c) {
      const double z = rng.normal();
      t.data[r * row_len + c] = z;
      norm += z * z;
    }
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < row_len; ++c) t.data[r * row_len + c] /= norm;
  }
}

int other_class(int cls, std::size_t n_classes, Rng& rng) {
  return static_cast<int>((static_cast<std::uint64_t>(cls) + 1 + rng.below(n_classes - 1)) % n_classes);
}

int majority(const std::vector<int>& classes, std::size_t n_classes) {
  std::vector<std::size_t> count(n_classes, 0);
  for (int c : classes) ++count[static_cast<std::size_t>(c)];
  return static_cast<int>(std::max_element(count.begin(), count.end()) - count.begin());
}

}  // namespace

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::Aligned: return "aligned";
    case Scenario::Offscreen: return "offscreen";
    case Scenario::Dubbed: return "dubbed";
  }
  return "unknown";
}

Scenario scenario_from_string(const std::string& s) {
  if (s == "aligned") return Scenario::Aligned;
  if (s == "offscreen") return Scenario::Offscreen;
  if (s == "dubbed") return Scenario::Dubbed;
  throw ConfigError("unknown scenario '" + s + "'");
}

std::size_t GenConfig::resolved_offscreen_span() const {
  return offscreen_span ? offscreen_span : std::max<std::size_t>(1, (frames - 1) / 2);
}

void GenConfig::validate() const {
  if (n_classes < 2) throw ConfigError("synthgen: need at least two classes");
  if (!frames || !tokens_visual || !tokens_audio || !c_visual || !c_audio || !c_text || !caption_tokens)
    throw ConfigError("synthgen: all extents must be positive");
  if (!(noise_sigma >= 0)) throw ConfigError("synthgen: noise_sigma must be >= 0");
  if (!(misalign_fraction >= 0 && misalign_fraction <= 1))
    throw ConfigError("synthgen: misalign_fraction must lie in [0, 1]");
  if (resolved_offscreen_span() > frames) throw ConfigError("synthgen: offscreen span longer than the episode");
}

ClassPrototypes make_prototypes(const GenConfig& cfg) {
  Rng rng = Rng(cfg.seed).fork(kPrototypeStream);
  ClassPrototypes p{Tensor({cfg.n_classes, cfg.c_visual}), Tensor({cfg.n_classes, cfg.c_audio}),
                    Tensor({cfg.n_classes, cfg.caption_tokens, cfg.c_text})};
  fill_unit_rows(p.visual, cfg.c_visual, rng);
  fill_unit_rows(p.audio, cfg.c_audio, rng);
  fill_unit_rows(p.caption, cfg.c_text, rng);
  return p;
}

Episode gen_episode(const GenConfig& cfg, const ClassPrototypes& protos, int class_id, Scenario scenario, Rng& rng,
                    std::int64_t video_id) {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= cfg.n_classes)
    throw ConfigError("gen_episode: class " + std::to_string(class_id) + " out of range");
  const std::size_t T = cfg.frames;
  Episode ep;
  ep.video_id = video_id;
  ep.scenario = scenario;
  ep.event_class.assign(T, class_id);
  ep.visual_class.assign(T, class_id);
  ep.audio_class.assign(T, class_id);

  switch (scenario) {
    case Scenario::Aligned: break;
    case Scenario::Offscreen: {
      const std::size_t span = cfg.resolved_offscreen_span();
      const std::size_t start = rng.below(T - span + 1);
      const int distractor = other_class(class_id, cfg.n_classes, rng);
      for (std::size_t t = start; t < start + span; ++t) ep.visual_class[t] = distractor;
      break;
    }
    case Scenario::Dubbed: {
      const int dub = other_class(class_id, cfg.n_classes, rng);
      std::fill(ep.audio_class.begin(), ep.audio_class.end(), dub);
      break;
    }
    default: throw ConfigError("gen_episode: unknown scenario");
  }
  ep.aligned.resize(T);
  for (std::size_t t = 0; t < T; ++t) ep.aligned[t] = ep.visual_class[t] == ep.audio_class[t] ? 1 : 0;

  ep.visual = Tensor({T, cfg.tokens_visual, cfg.c_visual});
  ep.audio = Tensor({T, cfg.tokens_audio, cfg.c_audio});
  for (std::size_t t = 0; t < T; ++t) {
    const double* pv = protos.visual.data.data() + static_cast<std::size_t>(ep.visual_class[t]) * cfg.c_visual;
    for (std::size_t i = 0; i < cfg.tokens_visual; ++i)
      for (std::size_t c = 0; c < cfg.c_visual; ++c)
        ep.visual.data[(t * cfg.tokens_visual + i) * cfg.c_visual + c] = pv[c] + cfg.noise_sigma * rng.normal();
    const double* pa = protos.audio.data.data() + static_cast<std::size_t>(ep.audio_class[t]) * cfg.c_audio;
    for (std::size_t i = 0; i < cfg.tokens_audio; ++i)
      for (std::size_t c = 0; c < cfg.c_audio; ++c)
        ep.audio.data[(t * cfg.tokens_audio + i) * cfg.c_audio + c] = pa[c] + cfg.noise_sigma * rng.normal();
  }
  return ep;
}

CaptionBank gen_caption_bank(const Episode& ep, const GenConfig& cfg, const ClassPrototypes& protos, Rng& rng) {
  const std::size_t block = cfg.caption_tokens * cfg.c_text;
  auto make = [&](int cls) {
    Tensor out({cfg.caption_tokens, cfg.c_text});
    const double* p = protos.caption.data.data() + static_cast<std::size_t>(cls) * block;
    for (std::size_t k = 0; k < block; ++k) out.data[k] = p[k] + cfg.noise_sigma * rng.normal();
    return out;
  };
  CaptionBank bank;
  bank.visual = make(majority(ep.visual_class, cfg.n_classes));
  bank.audio = make(majority(ep.audio_class, cfg.n_classes));
  return bank;
}

Split make_splits(const GenConfig& cfg, std::size_t n_train, std::size_t n_test, double misalign_fraction) {
  cfg.validate();
  if (!(misalign_fraction >= 0 && misalign_fraction <= 1))
    throw ConfigError("make_splits: misalign_fraction must lie in [0, 1]");
  const ClassPrototypes protos = make_prototypes(cfg);
  const Rng root(cfg.seed);
  Rng split_rng = root.fork(kSplitStream);
  std::int64_t next_id = 0;

  auto build = [&](std::size_t n) {
    const auto n_mis = static_cast<std::size_t>(std::llround(misalign_fraction * static_cast<double>(n)));
    const std::size_t n_off = (n_mis + 1) / 2, n_dub = n_mis - n_off;
    std::vector<Scenario> scen(n, Scenario::Aligned);
    std::fill_n(scen.begin(), n_off, Scenario::Offscreen);
    std::fill_n(scen.begin() + static_cast<std::ptrdiff_t>(n_off), n_dub, Scenario::Dubbed);
    for (std::size_t i = n; i-- > 1;) std::swap(scen[i], scen[split_rng.below(i + 1)]);
    std::vector<Episode> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::int64_t id = next_id++;
      Rng rng = root.fork(kEpisodeStreamBase + static_cast<std::uint64_t>(id));
      Episode ep = gen_episode(cfg, protos, static_cast<int>(i % cfg.n_classes), scen[i], rng, id);
      ep.captions = gen_caption_bank(ep, cfg, protos, rng);
      out.push_back(std::move(ep));
    }
    return out;
  };
  Split s;
  s.train = build(n_train);
  s.test = build(n_test);
  return s;
}

// ---------------------------------------------------------------------------

static void write_config(std::ostream& os, const GenConfig& c) {
  for (std::size_t v : {c.n_classes, c.frames, c.tokens_visual, c.tokens_audio, c.c_visual, c.c_audio, c.c_text,
                        c.caption_tokens, c.offscreen_span})
    binio::write_u64(os, v);
  binio::write_f64(os, c.noise_sigma);
  binio::write_f64(os, c.misalign_fraction);
  binio::write_u64(os, c.seed);
}

static GenConfig read_config(std::istream& is) {
  GenConfig c;
  for (std::size_t* v : {&c.n_classes, &c.frames, &c.tokens_visual, &c.tokens_audio, &c.c_visual, &c.c_audio,
                         &c.c_text, &c.caption_tokens, &c.offscreen_span})
    *v = binio::read_u64(is);
  c.noise_sigma = binio::read_f64(is);
  c.misalign_fraction = binio::read_f64(is);
  c.seed = binio::read_u64(is);
  c.validate();
  return c;
}

void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot open " + path + " for writing");
  binio::write_magic(os, kMagic);
  binio::write_u64(os, kDatasetVersion);
  write_config(os, ds.config);
  binio::write_u64(os, ds.episodes.size());
  for (const Episode& ep : ds.episodes) {
    binio::write_i64(os, ep.video_id);
    binio::write_u64(os, static_cast<std::uint64_t>(ep.scenario));
    for (std::size_t t = 0; t < ep.frames(); ++t) {
      binio::write_i64(os, ep.event_class[t]);
      binio::write_i64(os, ep.visual_class[t]);
      binio::write_i64(os, ep.audio_class[t]);
      binio::write_i64(os, ep.aligned[t]);
    }
    binio::write_f64s(os, ep.visual.data);
    binio::write_f64s(os, ep.audio.data);
    binio::write_f64s(os, ep.captions.visual.data);
    binio::write_f64s(os, ep.captions.audio.data);
  }
  if (!os) throw InputError("write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open dataset " + path);
  binio::expect_magic(is, kMagic, "dataset");
  if (binio::read_u64(is) != kDatasetVersion) throw VersionError("unsupported dataset version in " + path);
  Dataset ds;
  ds.config = read_config(is);
  const GenConfig& c = ds.config;
  const std::uint64_t count = binio::read_u64(is);
  for (std::uint64_t e = 0; e < count; ++e) {
    Episode ep;
    ep.video_id = binio::read_i64(is);
    const std::uint64_t sc = binio::read_u64(is);
    if (sc > 2) throw InputError("dataset: bad scenario code");
    ep.scenario = static_cast<Scenario>(sc);
    for (std::size_t t = 0; t < c.frames; ++t) {
      ep.event_class.push_back(static_cast<int>(binio::read_i64(is)));
      ep.visual_class.push_back(static_cast<int>(binio::read_i64(is)));
      ep.audio_class.push_back(static_cast<int>(binio::read_i64(is)));
      ep.aligned.push_back(static_cast<std::uint8_t>(binio::read_i64(is)));
    }
    ep.visual = Tensor({c.frames, c.tokens_visual, c.c_visual},
                       binio::read_f64s(is, c.frames * c.tokens_visual * c.c_visual));
    ep.audio = Tensor({c.frames, c.tokens_audio, c.c_audio}, binio::read_f64s(is, c.frames * c.tokens_audio * c.c_audio));
    ep.captions.visual = Tensor({c.caption_tokens, c.c_text}, binio::read_f64s(is, c.caption_tokens * c.c_text));
    ep.captions.audio = Tensor({c.caption_tokens, c.c_text}, binio::read_f64s(is, c.caption_tokens * c.c_text));
    ds.episodes.push_back(std::move(ep));
  }
  return ds;
}

bool episodes_bit_equal(const Episode& a, const Episode& b) {
  return a.video_id == b.video_id && a.scenario == b.scenario && a.event_class == b.event_class &&
         a.visual_class == b.visual_class && a.audio_class == b.audio_class && a.aligned == b.aligned &&
         a.visual.bit_equal(b.visual) && a.audio.bit_equal(b.audio) && a.captions.visual.bit_equal(b.captions.visual) &&
         a.captions.audio.bit_equal(b.captions.audio);
}

}  // namespace caeav
