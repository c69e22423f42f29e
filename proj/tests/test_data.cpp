#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>

#include "data/checkpoint.hpp"
#include "data/data.hpp"
#include "support.hpp"

using namespace invflow;
using namespace invflow::test;

namespace {

std::filesystem::path tmp_dir() {
  auto d = std::filesystem::temp_directory_path() / "invflow_test_data";
  std::filesystem::create_directories(d);
  return d;
}

void write_bytes(const std::filesystem::path& p, const std::vector<uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void push_be32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(static_cast<uint8_t>(x >> 24));
  v.push_back(static_cast<uint8_t>(x >> 16));
  v.push_back(static_cast<uint8_t>(x >> 8));
  v.push_back(static_cast<uint8_t>(x));
}

// two 3x2 images with bytes 1..12
std::vector<uint8_t> idx_image_fixture() {
  std::vector<uint8_t> v;
  push_be32(v, 0x00000803);
  push_be32(v, 2);
  push_be32(v, 3);
  push_be32(v, 2);
  for (uint8_t b = 1; b <= 12; ++b) v.push_back(b);
  return v;
}

std::vector<uint8_t> idx_label_fixture(uint32_t count) {
  std::vector<uint8_t> v;
  push_be32(v, 0x00000801);
  push_be32(v, count);
  for (uint32_t i = 0; i < count; ++i) v.push_back(static_cast<uint8_t>(i % 10));
  return v;
}

DataErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const DataError& e) {
    return e.kind();
  }
  FAIL("expected a DataError");
  return DataErrorKind::Io;
}

CheckpointErrorKind ckpt_kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  FAIL("expected a CheckpointError");
  return CheckpointErrorKind::Io;
}

FlowConfig tiny_config() {
  FlowConfig cfg;
  cfg.channels = 1;
  cfg.height = 8;
  cfg.width = 8;
  cfg.flow_steps = 1;
  cfg.blocks = 1;
  cfg.kernel_size = 3;
  cfg.hidden_width = 4;
  return cfg;
}

std::vector<double> flat_params(FlowModel& m) {
  std::vector<double> out;
  m.visit_params([&](const ParamRef& r) { out.insert(out.end(), r.values->begin(), r.values->end()); });
  return out;
}

}  // namespace

TEST_CASE("idx loader reads a crafted fixture") {
  auto dir = tmp_dir();
  auto img = dir / "imgs.idx";
  auto lab = dir / "labels.idx";
  write_bytes(img, idx_image_fixture());
  write_bytes(lab, idx_label_fixture(2));

  Dataset d = load_mnist_idx(img.string(), lab.string());
  CHECK(d.channels == 1);
  CHECK(d.height == 3);
  CHECK(d.width == 2);
  REQUIRE(d.images.size() == 2);
  CHECK(d.images[0] == std::vector<uint8_t>({1, 2, 3, 4, 5, 6}));
  CHECK(d.images[1] == std::vector<uint8_t>({7, 8, 9, 10, 11, 12}));

  // loading without labels works too
  CHECK(load_mnist_idx(img.string()).images.size() == 2);
}

TEST_CASE("idx loader reports each failure mode distinctly") {
  auto dir = tmp_dir();
  CHECK(kind_of([&] { load_mnist_idx((dir / "absent.idx").string()); }) == DataErrorKind::Io);

  auto bad_magic = idx_image_fixture();
  bad_magic[3] = 0x99;
  write_bytes(dir / "badmagic.idx", bad_magic);
  CHECK(kind_of([&] { load_mnist_idx((dir / "badmagic.idx").string()); }) ==
        DataErrorKind::BadMagic);

  auto short_payload = idx_image_fixture();
  short_payload.resize(short_payload.size() - 2);
  write_bytes(dir / "shortpayload.idx", short_payload);
  CHECK(kind_of([&] { load_mnist_idx((dir / "shortpayload.idx").string()); }) ==
        DataErrorKind::Truncated);

  std::vector<uint8_t> short_header;
  push_be32(short_header, 0x00000803);
  push_be32(short_header, 2);
  write_bytes(dir / "shortheader.idx", short_header);
  CHECK(kind_of([&] { load_mnist_idx((dir / "shortheader.idx").string()); }) ==
        DataErrorKind::Truncated);

  std::vector<uint8_t> huge;
  push_be32(huge, 0x00000803);
  push_be32(huge, 1);
  push_be32(huge, 100000);
  push_be32(huge, 2);
  write_bytes(dir / "huge.idx", huge);
  CHECK(kind_of([&] { load_mnist_idx((dir / "huge.idx").string()); }) ==
        DataErrorKind::DimensionMismatch);

  auto img = dir / "imgs2.idx";
  write_bytes(img, idx_image_fixture());
  write_bytes(dir / "labels3.idx", idx_label_fixture(3));
  CHECK(kind_of([&] { load_mnist_idx(img.string(), (dir / "labels3.idx").string()); }) ==
        DataErrorKind::DimensionMismatch);

  auto lab_bad = idx_label_fixture(2);
  lab_bad[3] = 0x07;
  write_bytes(dir / "labelsbad.idx", lab_bad);
  CHECK(kind_of([&] { load_mnist_idx(img.string(), (dir / "labelsbad.idx").string()); }) ==
        DataErrorKind::BadMagic);
}

TEST_CASE("synthetic datasets are deterministic per seed") {
  for (auto kind : {SynthKind::GaussianBlobs, SynthKind::Checkerboard, SynthKind::Constant}) {
    Dataset a = synth_dataset(kind, 4, 1, 8, 8, 11);
    Dataset b = synth_dataset(kind, 4, 1, 8, 8, 11);
    Dataset c = synth_dataset(kind, 4, 1, 8, 8, 12);
    REQUIRE(a.images.size() == 4);
    CHECK(a.images == b.images);
    CHECK(a.images != c.images);
    for (auto& im : a.images) CHECK(im.size() == a.item_bytes());
  }
}

TEST_CASE("synthetic kinds have their defining shapes") {
  Dataset con = synth_dataset(SynthKind::Constant, 3, 2, 4, 4, 5);
  for (auto& im : con.images)
    for (uint8_t b : im) CHECK(b == im[0]);

  Dataset chk = synth_dataset(SynthKind::Checkerboard, 3, 1, 8, 8, 5);
  for (auto& im : chk.images) {
    std::set<uint8_t> vals(im.begin(), im.end());
    CHECK(vals.size() <= 2);
    // a diagonal step of one full tile lands on the same colour
    for (int y = 0; y + 2 < 8; ++y)
      for (int x = 0; x + 2 < 8; ++x) CHECK(im[y * 8 + x] == im[(y + 2) * 8 + x + 2]);
  }

  Dataset blo = synth_dataset(SynthKind::GaussianBlobs, 3, 1, 12, 12, 5);
  for (auto& im : blo.images) {
    std::set<uint8_t> vals(im.begin(), im.end());
    CHECK(vals.size() > 4);  // smooth bumps, not flat fields
  }

  CHECK(synth_kind_from_string("gaussian-blobs") == SynthKind::GaussianBlobs);
  CHECK(synth_kind_from_string("checkerboard") == SynthKind::Checkerboard);
  CHECK(synth_kind_from_string("constant") == SynthKind::Constant);
  CHECK(to_string(SynthKind::GaussianBlobs) == "gaussian-blobs");
  CHECK_THROWS_AS(synth_kind_from_string("nope"), std::invalid_argument);
}

TEST_CASE("dequantisation stays on the quantisation fibre") {
  std::vector<uint8_t> bytes{0, 255, 128, 7, 200, 31};
  std::mt19937_64 r1(3), r2(3), r3(4);
  ImageTensor a = dequantize_item(bytes, 1, 2, 3, r1);
  ImageTensor b = dequantize_item(bytes, 1, 2, 3, r2);
  ImageTensor c = dequantize_item(bytes, 1, 2, 3, r3);
  CHECK(max_abs_diff(a, b) == 0.0);
  CHECK(max_abs_diff(a, c) > 0.0);
  for (int64_t i = 0; i < a.size(); ++i) {
    CHECK(a[i] >= 0.0);
    CHECK(a[i] < 1.0);
    CHECK(static_cast<uint8_t>(std::floor(a[i] * 256.0)) == bytes[i]);
  }
  CHECK_THROWS_AS(dequantize_item(bytes, 1, 2, 2, r1), std::invalid_argument);
}

TEST_CASE("centred quantisation round trip and clamping") {
  ImageTensor t = ImageTensor::from_data(1, 1, 4, {0.0, -0.5, 0.499, 0.25});
  auto q = quantize_centred(t);
  CHECK(q == std::vector<uint8_t>({128, 0, 255, 192}));

  ImageTensor wild = ImageTensor::from_data(1, 1, 2, {-3.0, 7.0});
  CHECK(quantize_centred(wild) == std::vector<uint8_t>({0, 255}));

  std::vector<uint8_t> bytes{0, 9, 77, 128, 254, 255};
  std::mt19937_64 rng(8);
  ImageTensor x = dequantize_item(bytes, 1, 2, 3, rng);
  center_in_place(x);
  CHECK(quantize_centred(x) == bytes);
}

TEST_CASE("pgm and ppm writers produce the documented headers") {
  auto dir = tmp_dir();
  auto pgm = dir / "img.pgm";
  write_image_u8(pgm.string(), 1, 3, 2, {10, 20, 30, 40, 50, 60});
  auto got = read_bytes(pgm);
  std::string header = "P5\n2 3\n255\n";
  REQUIRE(got.size() == header.size() + 6);
  CHECK(std::equal(header.begin(), header.end(), got.begin()));
  CHECK(got[header.size()] == 10);
  CHECK(got.back() == 60);

  auto ppm = dir / "img.ppm";
  std::vector<uint8_t> rgb(2 * 2 * 3, 7);
  write_image_u8(ppm.string(), 3, 2, 2, rgb);
  auto got3 = read_bytes(ppm);
  std::string header3 = "P6\n2 2\n255\n";
  CHECK(std::equal(header3.begin(), header3.end(), got3.begin()));

  CHECK_THROWS_AS(write_image_u8(pgm.string(), 2, 2, 2, std::vector<uint8_t>(8)),
                  std::invalid_argument);
  CHECK(kind_of([&] {
          write_image_u8((dir / "no/such/dir/p.pgm").string(), 1, 1, 1, {1});
        }) == DataErrorKind::Io);
}

TEST_CASE("tiling lays images on a separated grid") {
  std::vector<std::vector<uint8_t>> imgs{{1, 2, 3, 4}, {5, 6, 7, 8}};
  TiledImage g = tile_images(imgs, 1, 2, 2);
  CHECK(g.channels == 1);
  CHECK(g.height == 2);
  CHECK(g.width == 5);
  // row 0: img0 row 0, separator, img1 row 0
  CHECK(g.pixels[0] == 1);
  CHECK(g.pixels[1] == 2);
  CHECK(g.pixels[2] == 32);
  CHECK(g.pixels[3] == 5);
  CHECK(g.pixels[4] == 6);
  CHECK(g.pixels[5] == 3);
  CHECK(g.pixels[9] == 8);

  CHECK_THROWS_AS(tile_images({}, 1, 2, 2), std::invalid_argument);
  CHECK_THROWS_AS(tile_images({{1, 2}}, 1, 2, 2), std::invalid_argument);
}

TEST_CASE("checkpoint round trip preserves every piece of state") {
  auto dir = tmp_dir();
  auto path = (dir / "model.ckpt").string();

  FlowConfig cfg = tiny_config();
  FlowModel model(cfg, 31);
  std::mt19937_64 jrng(7);
  std::uniform_real_distribution<double> jd(-0.2, 0.2);
  model.visit_params([&](const ParamRef& r) {
    for (auto& v : *r.values) v += jd(jrng);
  });
  model.project_masks();
  model.set_actnorm_initialized(true);

  AdamState adam(model);
  FlowModel grads(cfg, 0);
  grads.zero_params();
  for (int i = 0; i < 3; ++i) {
    grads.visit_params([&](const ParamRef& r) {
      for (auto& v : *r.values) v = jd(jrng);
    });
    grads.project_masks();
    REQUIRE(adam_step(model, grads, adam, AdamConfig{}));
  }

  std::mt19937_64 rng(99);
  rng.discard(1234);
  save_checkpoint(path, model, adam, 57, rng);

  Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.model.config() == cfg);
  CHECK(loaded.step == 57);
  CHECK(loaded.adam.t == 3);
  CHECK(loaded.model.actnorm_initialized());
  CHECK(flat_params(loaded.model) == flat_params(model));
  CHECK(flat_params(loaded.adam.m) == flat_params(adam.m));
  CHECK(flat_params(loaded.adam.v) == flat_params(adam.v));
  for (int i = 0; i < 16; ++i) CHECK(loaded.rng() == rng());

  // saving the loaded state reproduces the file byte for byte
  auto path2 = (dir / "model2.ckpt").string();
  std::mt19937_64 rng2(99);
  rng2.discard(1234);
  save_checkpoint(path2, loaded.model, loaded.adam, loaded.step, rng2);
  CHECK(read_bytes(path) == read_bytes(path2));
}

TEST_CASE("checkpoint loader rejects corrupted files with precise kinds") {
  auto dir = tmp_dir();
  auto path = (dir / "base.ckpt").string();
  FlowConfig cfg = tiny_config();
  FlowModel model(cfg, 1);
  AdamState adam(model);
  std::mt19937_64 rng(5);
  save_checkpoint(path, model, adam, 9, rng);
  auto bytes = read_bytes(path);

  CHECK(ckpt_kind_of([&] { load_checkpoint((dir / "missing.ckpt").string()); }) ==
        CheckpointErrorKind::Io);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  write_bytes(dir / "m.ckpt", bad_magic);
  CHECK(ckpt_kind_of([&] { load_checkpoint((dir / "m.ckpt").string()); }) ==
        CheckpointErrorKind::BadMagic);

  auto bad_version = bytes;
  bad_version[4] = 9;  // little-endian u32 version right after the magic
  write_bytes(dir / "v.ckpt", bad_version);
  CHECK(ckpt_kind_of([&] { load_checkpoint((dir / "v.ckpt").string()); }) ==
        CheckpointErrorKind::BadVersion);

  auto cut = bytes;
  cut.resize(cut.size() * 3 / 5);
  write_bytes(dir / "t.ckpt", cut);
  CHECK(ckpt_kind_of([&] { load_checkpoint((dir / "t.ckpt").string()); }) ==
        CheckpointErrorKind::Truncated);

  // flip the stored hidden width: the config parses but every coupling tensor
  // then has the wrong size
  auto resized = bytes;
  std::string needle = "\"hidden_width\":4";
  auto it = std::search(resized.begin(), resized.end(), needle.begin(), needle.end());
  REQUIRE(it != resized.end());
  *(it + static_cast<long>(needle.size()) - 1) = '8';
  write_bytes(dir / "s.ckpt", resized);
  CHECK(ckpt_kind_of([&] { load_checkpoint((dir / "s.ckpt").string()); }) ==
        CheckpointErrorKind::ShapeMismatch);

  // rename a parameter record (same length, so the container still parses)
  auto renamed = bytes;
  std::string pname = "param/block0/step0/inv_conv";
  auto pit = std::search(renamed.begin(), renamed.end(), pname.begin(), pname.end());
  REQUIRE(pit != renamed.end());
  *(pit + static_cast<long>(pname.size()) - 1) = 'x';
  write_bytes(dir / "r.ckpt", renamed);
  CHECK(ckpt_kind_of([&] { load_checkpoint((dir / "r.ckpt").string()); }) ==
        CheckpointErrorKind::MissingRecord);
}
