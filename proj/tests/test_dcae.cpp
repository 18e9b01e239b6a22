#include <cmath>

#include "doctest.h"
#include "lfd/dcae.hpp"
#include "lfd/demo.hpp"
#include "lfd/errors.hpp"
#include "oracles.hpp"

using namespace lfd;
using namespace lfd::dcae;

namespace {

std::vector<Image> demo_images(std::size_t n) {
  sim::SceneConfig scene;
  scene.bowl_x = 0.34;
  demo::RecordOptions opts;
  opts.frame_period = 4;
  const auto seq = demo::record_scripted_demo(scene, opts);
  std::vector<Image> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(seq.frames[(i * 7) % seq.size()].image);
  return out;
}

DcaeConfig tiny_config() {
  DcaeConfig c;
  c.height = c.width = 16;
  c.conv_filters = {4, 4};
  c.fc_sizes = {12, 3};
  c.epochs = 3;
  c.batch_size = 4;
  return c;
}

Image random_image(const DcaeConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  Image img(c.image_shape(), 0.0f);
  for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("default parameter count matches the closed form") {
  const DcaeConfig c;
  const auto expected = testing::autoencoder_params(3, 64, {32, 16}, {100, 10}, 5, 2);
  CHECK(expected == 855989);
  const auto m = build_dcae(c, 0);
  CHECK(m.parameter_count() == expected);
}

TEST_CASE("per-layer parameter counts") {
  const auto layers = make_layers(DcaeConfig{});
  std::vector<std::size_t> enc, dec;
  for (const auto& l : layers.encoder)
    if (l.has_params()) enc.push_back(l.param_count());
  for (const auto& l : layers.decoder)
    if (l.has_params()) dec.push_back(l.param_count());
  CHECK(enc == std::vector<std::size_t>{3 * 32 * 25 + 32, 32 * 16 * 25 + 16, 16 * 16 * 16 * 100 + 100, 100 * 10 + 10});
  CHECK(dec == std::vector<std::size_t>{10 * 100 + 100, 100 * 4096 + 4096, 16 * 32 * 25 + 32, 32 * 3 * 25 + 3});
}

TEST_CASE("layer shapes run from the image to the code and back") {
  const auto layers = make_layers(DcaeConfig{});
  nn::Shape s{3, 64, 64};
  for (const auto& l : layers.encoder) s = l.output_shape(s);
  CHECK(s == nn::Shape{10});
  for (const auto& l : layers.decoder) s = l.output_shape(s);
  CHECK(s == nn::Shape{3, 64, 64});
  CHECK(layers.decoder.back().kind == nn::LayerKind::sigmoid);
  CHECK_NOTHROW(check_mirror(layers));
}

TEST_CASE("a decoder that does not mirror the encoder is rejected") {
  auto layers = make_layers(DcaeConfig{});
  for (auto& l : layers.decoder)
    if (l.kind == nn::LayerKind::dense) {
      l.out += 1;
      break;
    }
  CHECK_THROWS_AS(check_mirror(layers), ValidationError);
}

TEST_CASE("config validation") {
  DcaeConfig c;
  c.height = c.width = 62;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  DcaeConfig d;
  d.dropout = 1.0;
  CHECK_THROWS_AS(d.validate(), ValidationError);
  DcaeConfig e;
  e.fc_sizes.clear();
  CHECK_THROWS_AS(e.validate(), ValidationError);
}

TEST_CASE("config survives a json round trip") {
  DcaeConfig c = tiny_config();
  c.adam.lr = 3e-4;
  nlohmann::json j = c;
  CHECK(j.get<DcaeConfig>() == c);
}

TEST_CASE("initialization is seeded") {
  CHECK(build_dcae({}, 5) == build_dcae({}, 5));
  CHECK_FALSE(build_dcae({}, 5) == build_dcae({}, 6));
}

TEST_CASE("encode and decode shapes and ranges") {
  const auto m = build_dcae({}, 1);
  const auto img = demo_images(1)[0];
  const auto f = encode(m, img);
  CHECK(f.size() == 10);
  const auto r = decode(m, f);
  CHECK(r.shape() == nn::Shape{3, 64, 64});
  for (float v : r.data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(encode(m, img) == f);
  CHECK_THROWS(encode(m, Image({3, 32, 32}, 0.5f)));
  CHECK_THROWS(decode(m, FeatureVec(9, 0.0f)));
  const auto batch = encode_batch(m, demo_images(3));
  CHECK(batch.size() == 3);
  // batched products may sum in a different order than the single-image path
  for (std::size_t k = 0; k < 10; ++k) CHECK(batch[0][k] == doctest::Approx(f[k]).epsilon(1e-4));
}

TEST_CASE("recon_error is the per-pixel mse of the round trip") {
  const auto m = build_dcae({}, 2);
  const auto img = demo_images(1)[0];
  const auto r = decode(m, encode(m, img));
  std::vector<double> a(img.data().begin(), img.data().end()), b(r.data().begin(), r.data().end());
  CHECK(recon_error(m, img) == doctest::Approx(testing::mse_scalar(a, b)).epsilon(1e-6));
}

TEST_CASE("training is deterministic and records one loss per epoch") {
  const auto c = tiny_config();
  std::vector<Image> imgs;
  for (std::uint64_t i = 0; i < 6; ++i) imgs.push_back(random_image(c, i));
  const auto a = train_dcae(build_dcae(c, 3), imgs, c, 9);
  const auto b = train_dcae(build_dcae(c, 3), imgs, c, 9);
  CHECK(a.loss_history.size() == 3);
  CHECK(a.loss_history == b.loss_history);
  CHECK(a.model.blocks == b.model.blocks);
  const auto d = train_dcae(build_dcae(c, 3), imgs, c, 10);
  CHECK_FALSE(d.model.blocks == a.model.blocks);
}

TEST_CASE("training reduces reconstruction error on real frames") {
  DcaeConfig c;
  c.epochs = 15;
  c.batch_size = 8;
  const auto imgs = demo_images(16);
  const auto m0 = build_dcae(c, 4);
  const double before = mean_recon_error(m0, imgs);
  const auto res = train_dcae(m0, imgs, c, 4);
  CHECK(res.loss_history.back() < res.loss_history.front());
  CHECK(mean_recon_error(res.model, imgs) < 0.5 * before);
}

TEST_CASE("training rejects bad inputs") {
  const auto c = tiny_config();
  CHECK_THROWS_AS(train_dcae(build_dcae(c, 1), std::vector<Image>{}, c, 0), ValidationError);
  auto img = random_image(c, 1);
  img[5] = std::nanf("");
  CHECK_THROWS_AS(train_dcae(build_dcae(c, 1), std::vector<Image>{img}, c, 0), ValidationError);
  img[5] = 1.5f;
  CHECK_THROWS_AS(train_dcae(build_dcae(c, 1), std::vector<Image>{img}, c, 0), ValidationError);
}

TEST_CASE("divergent training aborts") {
  auto c = tiny_config();
  c.adam.lr = 1e30;
  c.epochs = 20;
  std::vector<Image> imgs;
  for (std::uint64_t i = 0; i < 4; ++i) imgs.push_back(random_image(c, i));
  CHECK_THROWS_AS(train_dcae(build_dcae(c, 1), imgs, c, 0), TrainingAbort);
}

TEST_CASE("models must match their descriptor") {
  auto m = build_dcae(tiny_config(), 1);
  CHECK_NOTHROW(check_model(m));
  auto swapped = m;
  std::swap(swapped.blocks[0], swapped.blocks[1]);
  CHECK_THROWS_AS(check_model(swapped), ValidationError);
  auto wrong = m;
  wrong.architecture["config"]["fc_sizes"] = {12, 4};
  CHECK_THROWS_AS(check_model(wrong), ValidationError);
}
