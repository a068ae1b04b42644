#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "caeav/errors.hpp"
#include "caeav/synthgen.hpp"
#include "helpers.hpp"

using namespace caeav;
using namespace caeav::test;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "caeav_unit";
  fs::create_directories(dir);
  return dir / name;
}

double dist2(const double* a, const double* b, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

TEST_SUITE("synthgen") {

TEST_CASE("prototypes are unit rows and depend on the seed only") {
  GenConfig g;
  const ClassPrototypes p = make_prototypes(g);
  for (std::size_t k = 0; k < g.n_classes; ++k) {
    double n = 0;
    for (std::size_t c = 0; c < g.c_visual; ++c) n += std::pow(p.visual.data[k * g.c_visual + c], 2);
    CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
  }
  GenConfig g2 = g;
  g2.noise_sigma = 0.5;
  CHECK(make_prototypes(g2).visual.bit_equal(p.visual));
  g2.seed = 1;
  CHECK(!make_prototypes(g2).visual.bit_equal(p.visual));
}

TEST_CASE("noise-free aligned episode reproduces the prototypes exactly") {
  GenConfig g;
  g.noise_sigma = 0.0;
  const ClassPrototypes p = make_prototypes(g);
  Rng rng(3);
  Episode ep = gen_episode(g, p, 2, Scenario::Aligned, rng, 5);
  for (std::size_t t = 0; t < g.frames; ++t)
    for (std::size_t i = 0; i < g.tokens_visual; ++i)
      for (std::size_t c = 0; c < g.c_visual; ++c)
        CHECK(ep.visual.data[(t * g.tokens_visual + i) * g.c_visual + c] == p.visual.data[2 * g.c_visual + c]);
  for (auto a : ep.aligned) CHECK(a == 1);
  CaptionBank bank = gen_caption_bank(ep, g, p, rng);
  for (std::size_t k = 0; k < bank.visual.size(); ++k)
    CHECK(bank.visual.data[k] == p.caption.data[2 * g.caption_tokens * g.c_text + k]);
}

TEST_CASE("scenario labels") {
  GenConfig g;
  const ClassPrototypes p = make_prototypes(g);
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int cls = trial % 6;
    Episode dub = gen_episode(g, p, cls, Scenario::Dubbed, rng, trial);
    for (std::size_t t = 0; t < g.frames; ++t) {
      CHECK(dub.audio_class[t] != dub.visual_class[t]);
      CHECK(dub.aligned[t] == 0);
      CHECK(dub.event_class[t] == cls);
      CHECK(dub.visual_class[t] == cls);
    }
    CaptionBank bank = gen_caption_bank(dub, g, p, rng);
    // each caption sits nearest to its own track's caption prototype
    const std::size_t block = g.caption_tokens * g.c_text;
    auto nearest = [&](const Tensor& x) {
      int best = 0;
      double bd = 1e300;
      for (std::size_t k = 0; k < g.n_classes; ++k) {
        const double d = dist2(x.data.data(), p.caption.data.data() + k * block, block);
        if (d < bd) bd = d, best = static_cast<int>(k);
      }
      return best;
    };
    CHECK(nearest(bank.visual) == cls);
    CHECK(nearest(bank.audio) == dub.audio_class[0]);

    Episode off = gen_episode(g, p, cls, Scenario::Offscreen, rng, trial);
    std::size_t first = g.frames, last = 0, n_mis = 0;
    for (std::size_t t = 0; t < g.frames; ++t) {
      CHECK(off.audio_class[t] == cls);
      CHECK(off.event_class[t] == cls);
      CHECK(static_cast<bool>(off.aligned[t]) == (off.visual_class[t] == off.audio_class[t]));
      if (!off.aligned[t]) {
        first = std::min(first, t);
        last = t;
        ++n_mis;
      }
    }
    CHECK(n_mis == g.resolved_offscreen_span());
    CHECK(last - first + 1 == n_mis);  // contiguous
  }
  CHECK_THROWS_AS(gen_episode(g, p, 6, Scenario::Aligned, rng, 0), ConfigError);
  CHECK_THROWS_AS(gen_episode(g, p, 0, static_cast<Scenario>(7), rng, 0), ConfigError);
  CHECK_THROWS_AS(scenario_from_string("silent"), ConfigError);
}

TEST_CASE("same seed gives byte-identical episodes") {
  GenConfig g;
  const ClassPrototypes p = make_prototypes(g);
  Rng a(9), b(9);
  CHECK(episodes_bit_equal(gen_episode(g, p, 1, Scenario::Offscreen, a, 0),
                           gen_episode(g, p, 1, Scenario::Offscreen, b, 0)));
  const Split s1 = make_splits(g, 12, 6, 0.5), s2 = make_splits(g, 12, 6, 0.5);
  for (std::size_t i = 0; i < 12; ++i) CHECK(episodes_bit_equal(s1.train[i], s2.train[i]));
  for (std::size_t i = 0; i < 6; ++i) CHECK(episodes_bit_equal(s1.test[i], s2.test[i]));
}

TEST_CASE("make_splits scenario counts and class balance") {
  GenConfig g;
  {
    const Split s = make_splits(g, 10, 4, 1.0);
    std::map<Scenario, int> n;
    for (const Episode& e : s.train) ++n[e.scenario];
    CHECK(n[Scenario::Offscreen] == 5);
    CHECK(n[Scenario::Dubbed] == 5);
  }
  {
    const Split s = make_splits(g, 10, 4, 0.0);
    for (const Episode& e : s.train) CHECK(e.scenario == Scenario::Aligned);
  }
  const Split s = make_splits(g, 40, 13, 0.5);
  for (const auto* part : {&s.train, &s.test}) {
    std::vector<int> hist(g.n_classes, 0);
    for (const Episode& e : *part) ++hist[e.event_class[0]];
    CHECK(*std::max_element(hist.begin(), hist.end()) - *std::min_element(hist.begin(), hist.end()) <= 1);
  }
  std::set<std::int64_t> ids;
  for (const auto* part : {&s.train, &s.test})
    for (const Episode& e : *part) ids.insert(e.video_id);
  CHECK(ids.size() == 53);
  CHECK_THROWS_AS(make_splits(g, 4, 4, 1.5), ConfigError);
}

TEST_CASE("nearest-prototype separability on aligned frames") {
  GenConfig g;
  g.noise_sigma = 0.1;
  const ClassPrototypes p = make_prototypes(g);
  const Split s = make_splits(g, 60, 1, 0.5);
  std::size_t frames = 0, correct = 0;
  for (const Episode& e : s.train)
    for (std::size_t t = 0; t < g.frames; ++t) {
      if (!e.aligned[t]) continue;
      std::vector<double> mv(g.c_visual, 0.0), ma(g.c_audio, 0.0);
      for (std::size_t i = 0; i < g.tokens_visual; ++i)
        for (std::size_t c = 0; c < g.c_visual; ++c)
          mv[c] += e.visual.data[(t * g.tokens_visual + i) * g.c_visual + c] / g.tokens_visual;
      for (std::size_t i = 0; i < g.tokens_audio; ++i)
        for (std::size_t c = 0; c < g.c_audio; ++c)
          ma[c] += e.audio.data[(t * g.tokens_audio + i) * g.c_audio + c] / g.tokens_audio;
      int best = -1;
      double bd = 1e300;
      for (std::size_t k = 0; k < g.n_classes; ++k) {
        const double d = dist2(mv.data(), p.visual.data.data() + k * g.c_visual, g.c_visual) +
                         dist2(ma.data(), p.audio.data.data() + k * g.c_audio, g.c_audio);
        if (d < bd) bd = d, best = static_cast<int>(k);
      }
      ++frames;
      correct += best == e.event_class[t];
    }
  CHECK(frames > 0);
  CHECK(correct == frames);
}

TEST_CASE("dataset round trip is bit-exact") {
  GenConfig g;
  g.seed = 77;
  const Split s = make_splits(g, 9, 3, 0.5);
  Dataset ds{g, s.train};
  const fs::path path = scratch("round_trip.bin");
  save_dataset(path.string(), ds);
  const Dataset back = load_dataset(path.string());
  CHECK(back.config == g);
  REQUIRE(back.episodes.size() == ds.episodes.size());
  for (std::size_t i = 0; i < ds.episodes.size(); ++i) CHECK(episodes_bit_equal(back.episodes[i], ds.episodes[i]));
  // saving the reloaded set reproduces the file byte for byte
  const fs::path again = scratch("round_trip_again.bin");
  save_dataset(again.string(), back);
  auto bytes = [](const fs::path& f) {
    std::ifstream in(f, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(bytes(path) == bytes(again));

  std::ofstream(scratch("garbage.bin"), std::ios::binary) << "not a dataset at all";
  CHECK_THROWS_AS(load_dataset(scratch("garbage.bin").string()), VersionError);
  CHECK_THROWS_AS(load_dataset(scratch("missing.bin").string()), InputError);
}

}  // TEST_SUITE
