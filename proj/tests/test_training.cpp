#include "doctest.h"
#include "fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "synseg/dataset_io.hpp"
#include "synseg/losses.hpp"
#include "synseg/training.hpp"

using namespace synseg;
using namespace synseg::testing;

namespace {

struct Fixture {
  ExperimentConfig cfg;
  PhantomDataset ds;
  TrainingData data;
  explicit Fixture(ExperimentConfig c) : cfg(std::move(c)), ds(phantom_generate(cfg.data)), data(training_data_for(ds, cfg.train)) {}
};

Network identity_generator() {
  LayerSpec l;
  l.kind = LayerKind::conv;
  l.name = "id";
  l.in = l.out = 1;
  l.kernel = 1;
  Network net(Role::generator, 1, {l});
  net.param("id.weight").mutable_data()[0] = 1.0f;
  return net;
}

std::map<std::string, std::vector<float>> snapshot(const Network* net) {
  std::map<std::string, std::vector<float>> out;
  if (!net) return out;
  for (const auto& [k, t] : net->params()) out[k] = {t.data().begin(), t.data().end()};
  return out;
}

// Phase-1 objective recomputed from the networks and one batch.
double generator_objective(const Network& g1, const Network* g2, const Network& d1, const Network* d2,
                           const Network* seg, const Tensor& x, const Tensor& y, const std::vector<int32_t>& labels,
                           const TrainConfig& t) {
  NoGradGuard guard;
  const auto fake_t = g1.forward(x);
  const auto w = t.weights;
  double total = w.gan_source_to_target * gan_loss_generator(d1.forward(fake_t), t.adversarial).item();
  if (g2) {
    const auto fake_s = g2->forward(y);
    total += w.gan_target_to_source * gan_loss_generator(d2->forward(fake_s), t.adversarial).item();
    total += w.cycle_source * cycle_loss(g2->forward(fake_t), x).item();
    total += w.cycle_target * cycle_loss(g1.forward(fake_s), y).item();
  }
  if (seg) total += w.segmentation * seg_loss(seg->forward(fake_t), labels, t.class_weights).item();
  return total;
}

Tensor slices_tensor(const std::vector<Scan>& scans, const std::vector<SliceRef>& refs) {
  std::vector<const IntensityImage*> imgs;
  for (const auto& r : refs) imgs.push_back(&scans[r.scan].slices[r.slice]);
  return to_network_space(images_to_tensor(imgs));
}

}  // namespace

TEST_CASE("cycle terms vanish when G2 after G1 is the identity") {
  const auto g1 = identity_generator(), g2 = identity_generator();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-1, 1);
  std::vector<float> v(2 * 16 * 16);
  for (auto& e : v) e = u(rng);
  const auto x = Tensor::from_data({2, 1, 16, 16}, v);
  CHECK(cycle_loss(g2.forward(g1.forward(x)), x).item() == 0.0f);
  CHECK(cycle_loss(g1.forward(g2.forward(x)), x).item() == 0.0f);
}

TEST_CASE("one small step decreases the generator objective") {
  auto cfg = tiny_config(Variant::synseg);
  cfg.train.lr_gen = 1e-6f;
  Fixture f(cfg);
  Trainer tr(f.cfg, f.data);
  // The trainer's first batch, replayed from the same named stream.
  UnpairedSampler replay(slice_counts(f.data.source_train), slice_counts(f.data.target_train), 1,
                         make_stream(cfg.train.seed, "sampler"));
  const auto b = replay.next();
  const auto x = slices_tensor(f.data.source_train, b.source), y = slices_tensor(f.data.target_train, b.target);
  const auto labels = f.data.source_train[b.source[0].scan].labels[b.source[0].slice].classes;
  const auto d1 = tr.d1()->clone(), d2 = tr.d2()->clone();
  const double before = generator_objective(*tr.g1(), tr.g2(), d1, &d2, tr.seg(), x, y, labels, cfg.train);
  const auto l = tr.step();
  CHECK(l.total == doctest::Approx(before).epsilon(1e-5));
  const double after = generator_objective(*tr.g1(), tr.g2(), d1, &d2, tr.seg(), x, y, labels, cfg.train);
  CHECK(after < before);
}

TEST_CASE("logged total is the lambda-weighted sum of the logged parts") {
  for (const auto v : {Variant::synseg, Variant::hc, Variant::seg_only}) {
    auto cfg = tiny_config(v);
    cfg.train.weights = {0.5f, 2.0f, 7.0f, 3.0f, 1.5f};
    Fixture f(cfg);
    Trainer tr(f.cfg, f.data);
    for (int i = 0; i < 3; ++i) {
      const auto l = tr.step();
      const auto w = cfg.train.weights.as_array();
      double sum = 0.0;
      for (size_t k = 0; k < 5; ++k)
        if (l.present[k]) sum += static_cast<double>(w[k]) * l.parts[k];
      CHECK(l.total == sum);
    }
  }
}

TEST_CASE("half-cycle variant holds only G1, D1 and Seg") {
  Fixture f(tiny_config(Variant::hc));
  Trainer tr(f.cfg, f.data);
  CHECK(tr.g1());
  CHECK(tr.d1());
  CHECK(tr.seg());
  CHECK_FALSE(tr.g2());
  CHECK_FALSE(tr.d2());
  const auto l = tr.step();
  CHECK(l.present == std::array<bool, 5>{true, false, false, false, true});
  CHECK_FALSE(l.d2.has_value());
  for (const auto& [name, blob] : tr.state().arrays) {
    CHECK(name.find("G2") == std::string::npos);
    CHECK(name.find("D2") == std::string::npos);
  }
}

TEST_CASE("segmenter gradients agree between SYNSEG and HC when the extra terms are off") {
  auto cs = tiny_config(Variant::synseg), ch = tiny_config(Variant::hc);
  cs.train.weights = ch.train.weights = {1.0f, 0.0f, 0.0f, 0.0f, 1.0f};
  Fixture fs(cs), fh(ch);
  Trainer ts(fs.cfg, fs.data), th(fh.cfg, fh.data);
  ts.step();
  th.step();
  for (const auto& [name, t] : ts.seg()->params()) {
    const auto& u = th.seg()->param(name);
    INFO(name);
    CHECK(std::equal(t.grad().begin(), t.grad().end(), u.grad().begin()));
  }
  CHECK(ts.seg()->checksum() == th.seg()->checksum());
}

TEST_CASE("two-stage variant freezes G1 and trains on one synthetic image per source slice") {
  Fixture f(tiny_config(Variant::two_stage));
  Trainer tr(f.cfg, f.data);
  CHECK_FALSE(tr.seg());
  CHECK(tr.total_epochs() == 4);
  for (int e = 0; e < 2; ++e) {
    for (int s = 0; s < tr.steps_per_epoch(); ++s) {
      const auto l = tr.step();
      CHECK_FALSE(l.present[4]);
    }
    tr.finish_epoch();
  }
  REQUIRE(tr.needs_stage_transition());
  CHECK_THROWS_AS(tr.begin_segmenter_stage(Checkpoint{}), CheckpointError);
  tr.begin_segmenter_stage(tr.model_checkpoint());
  CHECK(tr.stage() == 2);
  size_t source_slices = 0;
  for (const auto& s : f.data.source_train) source_slices += s.slices.size();
  CHECK(tr.synthetic_slice_count() == source_slices);
  CHECK_FALSE(tr.g2());
  CHECK_FALSE(tr.d1());

  const uint64_t g1_before = tr.g1()->checksum();
  for (int s = 0; s < 4; ++s) {
    const auto l = tr.step();
    CHECK(l.present == std::array<bool, 5>{false, false, false, false, true});
  }
  CHECK(tr.g1()->checksum() == g1_before);

  // Same topologies as the end-to-end model.
  Fixture g(tiny_config(Variant::synseg));
  Trainer end_to_end(g.cfg, g.data);
  for (const auto& [mine, theirs] : {std::pair{tr.seg(), end_to_end.seg()}, std::pair{tr.g1(), end_to_end.g1()}}) {
    REQUIRE(mine->params().size() == theirs->params().size());
    for (const auto& [name, t] : mine->params()) CHECK(t.shape() == theirs->param(name).shape());
  }
}

TEST_CASE("supervised baseline uses no source images") {
  auto cfg = tiny_config(Variant::seg_only);
  Fixture f(cfg);
  CHECK(f.data.source_train.empty());
  CHECK(f.data.target_train.empty());
  CHECK_FALSE(f.data.supervised_train.empty());
  Trainer a(f.cfg, f.data), b(f.cfg, f.data);
  CHECK_FALSE(a.g1());
  for (int i = 0; i < 3; ++i) CHECK(a.step().total == b.step().total);
  CHECK(a.seg()->checksum() == b.seg()->checksum());
  TrainingData none;
  CHECK_THROWS_AS(Trainer(f.cfg, none), DataError);
}

TEST_CASE("training variants never receive target labels") {
  for (const auto v : {Variant::synseg, Variant::hc, Variant::two_stage}) {
    Fixture f(tiny_config(v));
    for (const auto& s : f.data.target_train) CHECK(s.labels.empty());
    CHECK(f.data.target_eval.empty());
    CHECK(f.data.supervised_train.empty());
  }
  Fixture f(tiny_config(Variant::synseg));
  auto labeled = f.data;
  labeled.target_train = f.ds.eval.target_eval;
  CHECK_THROWS_AS(Trainer(f.cfg, labeled), DataError);
}

TEST_CASE("select_epoch picks the earliest best") {
  CHECK(select_epoch({0.4}) == 0);
  CHECK(select_epoch({0.1, 0.2, 0.3, 0.4}) == 3);
  CHECK(select_epoch({0.5, 0.9, 0.9}) == 1);
  CHECK_THROWS(select_epoch({}));
}

TEST_CASE("argmax is invariant to a per-pixel constant shift") {
  std::mt19937_64 rng(4);
  std::normal_distribution<float> g;
  std::uniform_real_distribution<float> shift(-50, 50);
  std::vector<float> v(2 * 3 * 5 * 5);
  for (auto& e : v) e = g(rng);
  auto shifted = v;
  for (int n = 0; n < 2; ++n)
    for (int p = 0; p < 25; ++p) {
      const float s = shift(rng);
      for (int c = 0; c < 3; ++c) shifted[(n * 3 + c) * 25 + p] += s;
    }
  const auto a = argmax_labels(Tensor::from_data({2, 3, 5, 5}, v), 3, {});
  const auto b = argmax_labels(Tensor::from_data({2, 3, 5, 5}, shifted), 3, {});
  for (int n = 0; n < 2; ++n) CHECK(a[n].classes == b[n].classes);
  // Ties go to the earliest channel.
  CHECK(argmax_labels(Tensor::zeros({1, 3, 1, 1}), 3, {})[0].classes[0] == 0);
}

TEST_CASE("inference at network size applies no interpolation") {
  Fixture f(tiny_config(Variant::seg_only));
  Trainer tr(f.cfg, f.data);
  tr.step();
  PhantomSpec spec = f.cfg.data;
  Rng rng = make_stream(1, "world");
  const auto raw = phantom_raw_scan(spec, Modality::target, "t", rng, 16);
  const auto native = infer(*tr.seg(), raw.raw, raw.normalization, 16, 2);
  const auto direct = segment_slices(*tr.seg(), preprocess_scan(raw, 16, false).slices, 2);
  REQUIRE(native.size() == direct.size());
  for (size_t z = 0; z < native.size(); ++z) CHECK(native[z].classes == direct[z].classes);
  const auto bigger = infer(*tr.seg(), phantom_raw_scan(spec, Modality::target, "t", rng, 24).raw,
                            Normalization::hounsfield, 16, 2);
  CHECK(bigger.front().height == 24);
}

TEST_CASE("zero weights leave generators and segmenter unchanged") {
  auto cfg = tiny_config(Variant::synseg);
  cfg.train.weights = {0, 0, 0, 0, 0};
  Fixture f(cfg);
  Trainer tr(f.cfg, f.data);
  const auto g1 = snapshot(tr.g1()), g2 = snapshot(tr.g2()), seg = snapshot(tr.seg());
  for (int i = 0; i < 3; ++i) tr.step();
  CHECK(snapshot(tr.g1()) == g1);
  CHECK(snapshot(tr.g2()) == g2);
  CHECK(snapshot(tr.seg()) == seg);
}

TEST_CASE("discriminator and generator updates do not touch each other") {
  // Changing only the discriminator learning rate leaves the generator
  // side bit-identical, and vice versa.
  auto base = tiny_config(Variant::synseg), disc = base, gen = base;
  disc.train.lr_disc = 5e-3f;
  gen.train.lr_gen = 5e-3f;
  Fixture fb(base), fd(disc), fg(gen);
  Trainer tb(fb.cfg, fb.data), td(fd.cfg, fd.data), tg(fg.cfg, fg.data);
  tb.step();
  td.step();
  tg.step();
  CHECK(snapshot(tb.g1()) == snapshot(td.g1()));
  CHECK(snapshot(tb.g2()) == snapshot(td.g2()));
  CHECK(snapshot(tb.seg()) == snapshot(td.seg()));
  CHECK(snapshot(tb.d1()) != snapshot(td.d1()));
  CHECK(snapshot(tb.d1()) == snapshot(tg.d1()));
  CHECK(snapshot(tb.d2()) == snapshot(tg.d2()));
  CHECK(snapshot(tb.g1()) != snapshot(tg.g1()));
}

TEST_CASE("history pool") {
  HistoryPool pass(0, Rng(1));
  const auto img = Tensor::full({1, 1, 2, 2}, 0.5f);
  const auto same = pass.query(img);
  CHECK(std::equal(same.data().begin(), same.data().end(), img.data().begin()));

  HistoryPool pool(2, Rng(2));
  for (int i = 0; i < 2; ++i) {
    const auto out = pool.query(Tensor::full({1, 1, 2, 2}, static_cast<float>(i)));
    CHECK(out.data()[0] == static_cast<float>(i));
  }
  CHECK(pool.stored().size() == 2);
  int replaced = 0;
  for (int i = 0; i < 400; ++i) {
    const auto out = pool.query(Tensor::full({1, 1, 2, 2}, 100.0f + i));
    replaced += out.data()[0] != 100.0f + i;
    CHECK(pool.stored().size() == 2);
  }
  // Swaps happen with probability one half.
  CHECK(replaced > 150);
  CHECK(replaced < 250);
}

TEST_CASE("non-finite loss raises with the step index") {
  Fixture f(tiny_config(Variant::synseg));
  f.data.source_train[0].slices[0].pixels[0] = std::nanf("");
  for (auto& s : f.data.source_train)
    for (auto& img : s.slices) img.pixels[0] = std::nanf("");
  Trainer tr(f.cfg, f.data);
  try {
    tr.step();
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.step() == 0);
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("network space round trip") {
  const auto t = to_network_space(Tensor::from_data({1, 1, 1, 3}, {0.0f, 0.5f, 1.0f}));
  CHECK(std::vector<float>(t.data().begin(), t.data().end()) == std::vector<float>{-1, 0, 1});
  CHECK(from_network_space(std::vector<float>{-2, -1, 0, 1, 3}) == std::vector<float>{0, 0, 0.5f, 1, 1});
}
