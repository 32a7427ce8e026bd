#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "hyperst/cli.hpp"
#include "hyperst/data.hpp"
#include "scratch_dir.hpp"

using namespace hyperst;
using nlohmann::json;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json small_config(const std::filesystem::path& out_dir, const std::string& kind, std::uint64_t gen_seed = 1) {
  return json{{"name", kind},
              {"seed", 3},
              {"dataset",
               {{"generator",
                 {{"objects", 4}, {"steps", 120}, {"spatial_dim", 3}, {"alpha", 1.0}, {"seed", gen_seed}}}}},
              {"model", {{"kind", kind}, {"trunk_widths", {4, 2}}, {"temporal_widths", {4}}, {"window", 4}}},
              {"train", {{"lr", 0.003}, {"batch_size", 32}, {"max_epochs", 2}}},
              {"split", {{"ratios", {8, 1, 1}}}},
              {"output_dir", out_dir.string()}};
}

std::filesystem::path write_config(const ScratchDir& dir, const std::string& file, const json& j) {
  const auto p = dir / file;
  std::ofstream(p) << j.dump(2);
  return p;
}

}  // namespace

TEST(Cli, UsageErrorsExitWithValidationCode) {
  EXPECT_EQ(run({}).code, kExitValidation);
  EXPECT_EQ(run({"frobnicate"}).code, kExitValidation);
  EXPECT_EQ(run({"train"}).code, kExitValidation);
  EXPECT_EQ(run({"--help"}).code, kExitOk);
}

TEST(Cli, MissingOrInvalidConfig) {
  ScratchDir dir("cli");
  EXPECT_EQ(run({"train", "--config", (dir / "absent.json").string()}).code, kExitValidation);
  json bad = small_config(dir / "out", "lstm");
  bad["model"]["kind"] = "transformer";
  const CliRun r = run({"train", "--config", write_config(dir, "bad.json", bad).string()});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("transformer"), std::string::npos) << r.err;

  json both = small_config(dir / "out", "lstm");
  both["dataset"]["path"] = "x/manifest.json";
  EXPECT_EQ(run({"train", "--config", write_config(dir, "both.json", both).string()}).code, kExitValidation);
}

TEST(Cli, GenDataIsByteIdenticalAndRecordsAlpha) {
  ScratchDir dir("cli");
  json cfg = small_config(dir / "a", "lstm");
  cfg["dataset"]["generator"]["alpha"] = 0.5;
  const auto path = write_config(dir, "gen.json", cfg);
  const CliRun r1 = run({"gen-data", "--config", path.string()});
  ASSERT_EQ(r1.code, kExitOk) << r1.err;
  EXPECT_NE(r1.out.find("N=4 M=120"), std::string::npos) << r1.out;
  ASSERT_EQ(run({"gen-data", "--config", path.string(), "--output-dir", (dir / "b").string()}).code, kExitOk);
  for (const char* f : {"manifest.json", "spatial.csv", "temporal.csv", "labels.csv"}) {
    EXPECT_EQ(slurp(dir / "a" / "dataset" / f), slurp(dir / "b" / "dataset" / f)) << f;
  }
  const json manifest = json::parse(slurp(dir / "a" / "dataset" / "manifest.json"));
  EXPECT_EQ(manifest["metadata"]["alpha"], 0.5);

  ASSERT_EQ(run({"gen-data", "--config", path.string(), "--output-dir", (dir / "c").string(), "--seed", "99"}).code,
            kExitOk);
  EXPECT_NE(slurp(dir / "a" / "dataset" / "labels.csv"), slurp(dir / "c" / "dataset" / "labels.csv"));
}

TEST(Cli, GenDataAtExperimentScaleIsFast) {
  ScratchDir dir("cli");
  json cfg = small_config(dir / "big", "lstm");
  cfg["dataset"]["generator"] = {{"objects", 64}, {"steps", 2000}, {"spatial_dim", 8}, {"seed", 0}};
  const auto start = std::chrono::steady_clock::now();
  ASSERT_EQ(run({"gen-data", "--config", write_config(dir, "big.json", cfg).string()}).code, kExitOk);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(seconds, 10.0);
  const Dataset ds = load_dataset(dir / "big" / "dataset" / "manifest.json");
  EXPECT_EQ(ds.objects(), 64u);
  EXPECT_EQ(ds.steps(), 2000u);
}

TEST(Cli, TrainWritesArtifactsDeterministically) {
  ScratchDir dir("cli");
  for (const std::string kind : {"lstm", "hyperst-lstm-d"}) {
    const auto path = write_config(dir, kind + ".json", small_config(dir / kind, kind));
    const CliRun r = run({"train", "--config", path.string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("test"), std::string::npos);
    const auto out = dir / kind;
    EXPECT_TRUE(std::filesystem::exists(out / "checkpoint" / "manifest.json"));
    EXPECT_TRUE(std::filesystem::exists(out / "checkpoint" / "weights.bin"));
    EXPECT_TRUE(std::filesystem::exists(out / "history.csv"));
    EXPECT_TRUE(std::filesystem::exists(out / "run_info.json"));
    const std::string first = slurp(out / "metrics.json");
    const json m = json::parse(first);
    EXPECT_TRUE(m["test"].contains("mae")) << first;
    EXPECT_TRUE(m["test"].contains("rmse")) << first;
    EXPECT_GE(m["test"]["rmse"].get<double>(), m["test"]["mae"].get<double>());

    ASSERT_EQ(run({"train", "--config", path.string()}).code, kExitOk);
    EXPECT_EQ(slurp(out / "metrics.json"), first) << kind;
  }
}

TEST(Cli, SeedPrecedence) {
  ScratchDir dir("cli");
  const auto path = write_config(dir, "c.json", small_config(dir / "run", "hyperst-lstm-d"));
  auto seed_of_run = [&] { return json::parse(slurp(dir / "run" / "metrics.json"))["seed"].get<std::uint64_t>(); };

  ASSERT_EQ(run({"train", "--config", path.string()}).code, kExitOk);
  EXPECT_EQ(seed_of_run(), 3u);
  const std::string from_config = slurp(dir / "run" / "metrics.json");

  ::setenv("HYPERST_SEED", "17", 1);
  ASSERT_EQ(run({"train", "--config", path.string()}).code, kExitOk);
  EXPECT_EQ(seed_of_run(), 17u);
  EXPECT_NE(slurp(dir / "run" / "metrics.json"), from_config);
  ASSERT_EQ(run({"train", "--config", path.string(), "--seed", "23"}).code, kExitOk);
  EXPECT_EQ(seed_of_run(), 23u);
  ::setenv("HYPERST_SEED", "not-a-number", 1);
  EXPECT_EQ(run({"train", "--config", path.string()}).code, kExitValidation);
  ::unsetenv("HYPERST_SEED");
}

TEST(Cli, EvalReproducesTrainMetrics) {
  ScratchDir dir("cli");
  const auto path = write_config(dir, "c.json", small_config(dir / "run", "hyperst-lstm-d"));
  ASSERT_EQ(run({"train", "--config", path.string()}).code, kExitOk);
  const CliRun r = run({"eval", "--config", path.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json metrics = json::parse(slurp(dir / "run" / "metrics.json"));
  const json eval = json::parse(slurp(dir / "run" / "eval.json"));
  EXPECT_EQ(eval["test"]["mae"], metrics["test"]["mae"]);
  EXPECT_EQ(eval["test"]["rmse"], metrics["test"]["rmse"]);
  EXPECT_EQ(run({"eval", "--config", path.string(), "--checkpoint", (dir / "nowhere").string()}).code, kExitRuntime);
}

TEST(Cli, CompareAgainstItselfIsZeroPercent) {
  ScratchDir dir("cli");
  json a = small_config(dir / "a", "lstm");
  json b = small_config(dir / "b", "lstm");
  b["name"] = "lstm-again";
  const CliRun r = run({"compare", "--config", write_config(dir, "a.json", a).string(), "--config",
                     write_config(dir, "b.json", b).string(), "--seeds", "0,1", "--output-dir",
                     (dir / "cmp").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::ifstream csv(dir / "cmp" / "comparison.csv");
  std::string header, row1, row2;
  std::getline(csv, header);
  std::getline(csv, row1);
  std::getline(csv, row2);
  EXPECT_NE(header.find("improvement_pct"), std::string::npos) << header;
  EXPECT_EQ(row2.substr(row2.rfind(',') + 1), "0") << row2;
  EXPECT_TRUE(std::filesystem::exists(dir / "cmp" / "lstm" / "seed1" / "metrics.json"));
}

TEST(Cli, CompareRejectsMismatchedDatasets) {
  ScratchDir dir("cli");
  const auto a = write_config(dir, "a.json", small_config(dir / "a", "lstm", 1));
  const auto b = write_config(dir, "b.json", small_config(dir / "b", "hyperst-lstm-d", 2));
  const CliRun r = run({"compare", "--config", a.string(), "--config", b.string()});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("dataset"), std::string::npos) << r.err;
}

TEST(Cli, VerifyPassesAndCatchesInjectedFaults) {
  const CliRun ok = run({"verify"});
  EXPECT_EQ(ok.code, kExitOk) << ok.out;
  EXPECT_EQ(ok.out.find("FAIL"), std::string::npos) << ok.out;

  const CliRun bad = run({"verify", "--inject-fault", "tanh"});
  EXPECT_EQ(bad.code, kExitValidation);
  EXPECT_NE(bad.out.find("FAIL tensor-core gradcheck:tanh"), std::string::npos) << bad.out;
  EXPECT_NE(bad.out.find("fault armed on 'tanh'"), std::string::npos);

  EXPECT_EQ(run({"verify", "--inject-fault", "nosuchop"}).code, kExitValidation);
  EXPECT_EQ(run({"verify", "--tolerance", "1e-30"}).code, kExitValidation);
  EXPECT_EQ(run({"verify", "--tolerance", "1e-3", "--seeds", "10"}).code, kExitOk);
}

TEST(Cli, GradCheck) {
  for (const char* kind : {"lstm", "hyperst-lstm-d", "hyperst-cnn"}) {
    const CliRun r = run({"grad-check", "--kind", kind});
    EXPECT_EQ(r.code, kExitOk) << r.out;
    EXPECT_NE(r.out.find("passed"), std::string::npos);
  }
  EXPECT_EQ(run({"grad-check", "--kind", "hyperst-lstm-d", "--tolerance", "1e-30"}).code, kExitValidation);
  EXPECT_EQ(run({"grad-check", "--kind", "bogus"}).code, kExitValidation);
}

TEST(Cli, ExportEmbeddings) {
  ScratchDir dir("cli");
  const auto hyper = write_config(dir, "h.json", small_config(dir / "h", "hyperst-lstm-d"));
  ASSERT_EQ(run({"train", "--config", hyper.string()}).code, kExitOk);
  ASSERT_EQ(run({"gen-data", "--config", hyper.string(), "--output-dir", (dir / "d").string()}).code, kExitOk);
  const CliRun r = run({"export-embeddings", "--checkpoint", (dir / "h" / "checkpoint").string(), "--dataset",
                     (dir / "d" / "dataset" / "manifest.json").string(), "--out", (dir / "emb.csv").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::ifstream in(dir / "emb.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "object_id,e0,e1");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 2);
  }
  EXPECT_EQ(rows, 4u);

  ASSERT_EQ(run({"export-embeddings", "--checkpoint", (dir / "h" / "checkpoint").string(), "--config", hyper.string()})
                .code,
            kExitOk);
  EXPECT_TRUE(std::filesystem::exists(dir / "h" / "embeddings.csv"));

  const auto plain = write_config(dir, "p.json", small_config(dir / "p", "lstm"));
  ASSERT_EQ(run({"train", "--config", plain.string()}).code, kExitOk);
  const CliRun e = run({"export-embeddings", "--checkpoint", (dir / "p" / "checkpoint").string(), "--config",
                     plain.string()});
  EXPECT_EQ(e.code, kExitValidation);
  EXPECT_NE(e.err.find("no spatial module"), std::string::npos) << e.err;
}
