#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "ctam/slice_select.hpp"
#include "ctam/synth.hpp"
#include "ctam/volume_io.hpp"
#include "ctam/weights_io.hpp"

using namespace ctam;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("ctam_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Volume random_volume(std::uint64_t seed, const std::string& id, int slices, int h, int w) {
  std::mt19937_64 rng(seed);
  Volume v;
  v.patient_id = id;
  for (int s = 0; s < slices; ++s) {
    Image img(h, w);
    for (double& p : img.pixels) p = uniform01(rng);
    v.slices.push_back(std::move(img));
  }
  return v;
}

IoError::Kind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const IoError& e) {
    return e.kind();
  }
  throw std::logic_error("expected an IoError");
}

}  // namespace

TEST(VolumeIo, RoundTripWithinFloatPrecision) {
  TempDir dir("svol");
  const Volume original = random_volume(1, "p007", 3, 12, 9);
  const fs::path file = dir.path() / "p007.svol";
  write_volume(original, file);
  const Volume loaded = read_volume(file);
  EXPECT_EQ(loaded.patient_id, "p007");
  ASSERT_EQ(loaded.slices.size(), original.slices.size());
  for (std::size_t s = 0; s < loaded.slices.size(); ++s) {
    ASSERT_EQ(loaded.slices[s].height, 12);
    ASSERT_EQ(loaded.slices[s].width, 9);
    for (std::size_t i = 0; i < loaded.slices[s].pixels.size(); ++i)
      EXPECT_NEAR(loaded.slices[s].pixels[i], original.slices[s].pixels[i], 1e-7);
  }
}

TEST(VolumeIo, BadMagicRejected) {
  TempDir dir("magic");
  const fs::path file = dir.path() / "x.svol";
  write_volume(random_volume(2, "x", 1, 8, 8), file);
  std::string bytes = slurp(file);
  bytes.replace(0, 4, "XXXX");
  spit(file, bytes);
  EXPECT_EQ(kind_of([&] { read_volume(file); }), IoError::Kind::bad_magic);
}

TEST(VolumeIo, BadVersionRejected) {
  TempDir dir("version");
  const fs::path file = dir.path() / "x.svol";
  write_volume(random_volume(3, "x", 1, 8, 8), file);
  std::string bytes = slurp(file);
  bytes[4] = 2;
  spit(file, bytes);
  EXPECT_EQ(kind_of([&] { read_volume(file); }), IoError::Kind::bad_version);
}

TEST(VolumeIo, TruncatedPayloadRejected) {
  TempDir dir("trunc");
  const fs::path file = dir.path() / "x.svol";
  const Volume v = random_volume(4, "x", 10, 8, 8);
  write_volume(v, file);
  std::string bytes = slurp(file);
  // drop one slice worth of pixels: header still claims 10
  bytes.resize(bytes.size() - 8 * 8 * 4);
  spit(file, bytes);
  EXPECT_EQ(kind_of([&] { read_volume(file); }), IoError::Kind::truncated);
}

TEST(VolumeIo, TrailingBytesRejected) {
  TempDir dir("trail");
  const fs::path file = dir.path() / "x.svol";
  write_volume(random_volume(5, "x", 2, 8, 8), file);
  spit(file, slurp(file) + "junk");
  EXPECT_EQ(kind_of([&] { read_volume(file); }), IoError::Kind::corrupt);
}

TEST(VolumeIo, DimensionOverflowRejected) {
  TempDir dir("overflow");
  const fs::path file = dir.path() / "x.svol";
  std::string bytes = "SVOL";
  detail::put_u32(bytes, kVolumeVersion);
  detail::put_u32(bytes, 1u << 20);  // height
  detail::put_u32(bytes, 1u << 20);  // width
  detail::put_u32(bytes, 1000);      // slices
  spit(file, bytes);
  EXPECT_EQ(kind_of([&] { read_volume(file); }), IoError::Kind::dim_overflow);
}

TEST(VolumeIo, MissingFileAndPixelClamp) {
  TempDir dir("clamp");
  EXPECT_EQ(kind_of([&] { read_volume(dir.path() / "absent.svol"); }),
            IoError::Kind::open_failed);

  // hand-built file with out-of-range pixels, clamped on read
  std::string bytes = "SVOL";
  detail::put_u32(bytes, kVolumeVersion);
  detail::put_u32(bytes, 1);
  detail::put_u32(bytes, 2);
  detail::put_u32(bytes, 1);
  detail::put_f32(bytes, -0.5f);
  detail::put_f32(bytes, 1.5f);
  const fs::path file = dir.path() / "c.svol";
  spit(file, bytes);
  const Volume v = read_volume(file);
  EXPECT_DOUBLE_EQ(v.slices[0].pixels[0], 0.0);
  EXPECT_DOUBLE_EQ(v.slices[0].pixels[1], 1.0);
}

TEST(Labels, ValidFileLoads) {
  TempDir dir("labels");
  const fs::path file = dir.path() / "labels.csv";
  spit(file, "patient_id,label\np01,1\np02,0\n");
  const LabelTable table = load_labels(file);
  EXPECT_EQ(table.size(), 2u);
  EXPECT_EQ(table.at("p01"), 1);
  EXPECT_EQ(table.at("p02"), 0);
}

TEST(Labels, RejectsBadInputs) {
  TempDir dir("badlabels");
  const fs::path file = dir.path() / "labels.csv";

  spit(file, "id,label\np01,1\n");
  EXPECT_EQ(kind_of([&] { load_labels(file); }), IoError::Kind::bad_header);

  spit(file, "patient_id,label\np01,2\n");
  EXPECT_EQ(kind_of([&] { load_labels(file); }), IoError::Kind::bad_label);

  spit(file, "patient_id,label\np01,1\np01,0\n");
  try {
    load_labels(file);
    FAIL() << "expected duplicate error";
  } catch (const IoError& e) {
    EXPECT_EQ(e.kind(), IoError::Kind::duplicate_id);
    EXPECT_NE(std::string(e.what()).find("p01"), std::string::npos);
  }
}

TEST(Labels, RoundTrip) {
  TempDir dir("labelrt");
  LabelTable table;
  table.entries["p00"] = 1;
  table.entries["p01"] = 0;
  const fs::path file = dir.path() / "labels.csv";
  write_labels(table, file);
  const LabelTable loaded = load_labels(file);
  EXPECT_EQ(loaded.entries, table.entries);
}

TEST(WeightsIo, ModelRoundTripIsExact) {
  TempDir dir("weights");
  ModelParams model = ModelParams::init(5);
  model.merge_weights.alpha = 0.5;
  ShaParams sha = ShaParams::init(6, model.channels());
  const fs::path file = dir.path() / "weights.eam";
  save_model(model, &sha, file);

  LoadedWeights loaded = load_model(file);
  auto original = model.named_tensors();
  auto restored = loaded.model.named_tensors();
  for (std::size_t i = 0; i < original.size(); ++i) {
    ASSERT_EQ(original[i].second->shape(), restored[i].second->shape()) << original[i].first;
    for (std::size_t j = 0; j < original[i].second->size(); ++j)
      EXPECT_EQ(original[i].second->data()[j], restored[i].second->data()[j])
          << original[i].first;
  }
  EXPECT_DOUBLE_EQ(loaded.model.merge_weights.alpha, 0.5);
  EXPECT_EQ(loaded.model.input_size, model.input_size);
  ASSERT_TRUE(loaded.sha.has_value());
  auto sha_orig = sha.named_tensors();
  auto sha_rest = loaded.sha->named_tensors();
  for (std::size_t i = 0; i < sha_orig.size(); ++i)
    for (std::size_t j = 0; j < sha_orig[i].second->size(); ++j)
      EXPECT_EQ(sha_orig[i].second->data()[j], sha_rest[i].second->data()[j]);
}

TEST(WeightsIo, ModelWithoutShaLoadsWithoutSha) {
  TempDir dir("nosha");
  ModelParams model = ModelParams::init(7);
  const fs::path file = dir.path() / "weights.eam";
  save_model(model, nullptr, file);
  EXPECT_FALSE(load_model(file).sha.has_value());
}

TEST(WeightsIo, RejectsBadFiles) {
  TempDir dir("badweights");
  const fs::path file = dir.path() / "weights.eam";

  spit(file, "NOPE");
  EXPECT_EQ(kind_of([&] { load_model(file); }), IoError::Kind::bad_magic);

  ModelParams model = ModelParams::init(8);
  save_model(model, nullptr, file);
  std::string bytes = slurp(file);
  bytes.resize(bytes.size() - 13);
  spit(file, bytes);
  EXPECT_EQ(kind_of([&] { load_model(file); }), IoError::Kind::truncated);

  // shape-inconsistent: head width disagrees with the backbone
  std::vector<std::pair<std::string, Tensor>> entries;
  ModelParams m = ModelParams::init(9);
  for (auto& [name, tensor] : m.named_tensors()) entries.emplace_back(name, *tensor);
  entries.emplace_back("merge.alpha", Tensor::scalar(0.5));
  entries.emplace_back("input.size", Tensor::scalar(64.0));
  for (auto& [name, tensor] : entries)
    if (name == "head.weight") tensor = Tensor::zeros({m.channels() + 1, 1});
  save_tensors(entries, file);
  EXPECT_EQ(kind_of([&] { load_model(file); }), IoError::Kind::corrupt);
}

TEST(Synth, SameSeedProducesIdenticalBytes) {
  TempDir a("syntha"), b("synthb");
  SynthConfig config;
  config.seed = 3;
  config.n_patients = 4;
  config.min_slices = 20;
  config.max_slices = 28;
  config.image_size = 32;
  synth_generate(config, a.path());
  synth_generate(config, b.path());
  for (const auto& entry : fs::directory_iterator(a.path())) {
    const fs::path other = b.path() / entry.path().filename();
    ASSERT_TRUE(fs::exists(other)) << other;
    EXPECT_EQ(slurp(entry.path()), slurp(other)) << entry.path();
  }
}

TEST(Synth, LungAreaPeaksMidStack) {
  SynthConfig config;
  config.seed = 12;
  config.n_patients = 6;
  config.min_slices = 40;
  config.max_slices = 60;
  for (int i = 0; i < config.n_patients; ++i) {
    const Volume v = synth_patient(config, i);
    const int n = static_cast<int>(v.slices.size());
    std::int64_t best_area = -1;
    int best_index = -1;
    for (int z = 0; z < n; ++z) {
      const std::int64_t area = estimate_lung_area(v.slices[z]);
      if (area > best_area) {
        best_area = area;
        best_index = z;
      }
    }
    EXPECT_GE(best_index, n / 3) << v.patient_id;
    EXPECT_LT(best_index, 2 * n / 3) << v.patient_id;
  }
}

TEST(Synth, PositiveCountMatchesFraction) {
  SynthConfig config;
  config.n_patients = 40;
  config.positive_fraction = 0.5;
  int positives = 0;
  for (int i = 0; i < config.n_patients; ++i)
    if (synth_label(config, i)) ++positives;
  EXPECT_EQ(positives, 20);
}

TEST(Synth, ClassesSeparableByInLungIntensity) {
  SynthConfig config;
  config.seed = 21;
  config.n_patients = 20;
  config.min_slices = 30;
  config.max_slices = 40;

  std::vector<double> features;
  std::vector<int> labels;
  for (int i = 0; i < config.n_patients; ++i) {
    std::vector<std::vector<std::uint8_t>> masks;
    const Volume v = synth_patient(config, i, &masks);
    double sum = 0.0;
    long long count = 0;
    for (std::size_t z = 0; z < v.slices.size(); ++z)
      for (std::size_t p = 0; p < masks[z].size(); ++p)
        if (masks[z][p]) {
          sum += v.slices[z].pixels[p];
          ++count;
        }
    features.push_back(sum / static_cast<double>(count));
    labels.push_back(synth_label(config, i) ? 1 : 0);
  }

  // brute-force threshold sweep over the one feature
  int best_correct = 0;
  for (double threshold : features) {
    int correct = 0;
    for (std::size_t i = 0; i < features.size(); ++i)
      if ((features[i] >= threshold ? 1 : 0) == labels[i]) ++correct;
    best_correct = std::max(best_correct, correct);
  }
  EXPECT_GE(static_cast<double>(best_correct) / config.n_patients, 0.95);
}

TEST(Synth, ManifestRecordsGenerationParameters) {
  TempDir dir("manifest");
  SynthConfig config;
  config.seed = 77;
  config.n_patients = 2;
  config.min_slices = 16;
  config.max_slices = 18;
  config.image_size = 32;
  synth_generate(config, dir.path());

  const auto manifest = nlohmann::json::parse(slurp(dir.path() / "manifest.json"));
  EXPECT_EQ(manifest.at("seed").get<std::uint64_t>(), 77u);
  EXPECT_EQ(manifest.at("n_patients").get<int>(), 2);
  EXPECT_EQ(manifest.at("image_size").get<int>(), 32);
  EXPECT_DOUBLE_EQ(manifest.at("positive_fraction").get<double>(), 0.5);
  EXPECT_EQ(manifest.at("generator_version").get<int>(), kGeneratorVersion);

  const LabelTable labels = load_labels(dir.path() / "labels.csv");
  EXPECT_EQ(labels.size(), 2u);
  const Volume v = read_volume(dir.path() / "p000.svol");
  EXPECT_EQ(v.patient_id, "p000");
  validate_volume(v);
}
