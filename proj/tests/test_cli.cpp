#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rsate/dataset.hpp"
#include "rsate/sim.hpp"

using namespace rsate;
using json = nlohmann::json;

namespace {

namespace fs = std::filesystem;

struct CliRunner {
  fs::path dir;

  CliRunner() {
    dir = fs::temp_directory_path() /
          ("rsate_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~CliRunner() { fs::remove_all(dir); }

  static std::string binary() {
    const char* env = std::getenv("RSATE_CLI");
    REQUIRE_MESSAGE(env != nullptr, "RSATE_CLI must point to the CLI binary");
    return env;
  }

  fs::path write_config(const json& config, const std::string& name) const {
    const fs::path p = dir / name;
    std::ofstream out(p);
    out << config.dump(2);
    return p;
  }

  int run(const std::string& subcommand, const fs::path& config,
          const std::string& extra = "") const {
    const std::string cmd = binary() + " " + subcommand + " --config " +
                            config.string() + " " + extra + " >" +
                            (dir / "stdout.log").string() + " 2>" +
                            (dir / "stderr.log").string();
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  }

  std::string read(const fs::path& p) const {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
};

json base_config(const CliRunner& cli, const fs::path& data_path,
                 const std::string& outdir) {
  return json{
      {"seed", 2024},
      {"output_dir", (cli.dir / outdir).string()},
      {"dataset",
       {{"path", data_path.string()},
        {"schema",
         {{"region", "R"},
          {"treatment", "A"},
          {"outcome", "Y"},
          {"shared", {"X1", "X2"}},
          {"target_only", {"U"}}}}}},
      {"design", {{"kind", "constant"}, {"p_treat", 0.5}}},
      {"csb", {{"L", 15}}},
      {"conformal", {{"K", 5}}}};
}

fs::path write_trial(const CliRunner& cli) {
  DgpConfig config;
  config.n_target = 60;
  config.n_aux = 90;
  const GeneratedTrial t = generate_trial(config, 77);
  const fs::path p = cli.dir / "trial.csv";
  save_dataset(p.string(), t.data);
  return p;
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("estimate emits one record per method with CSB metadata") {
  CliRunner cli;
  const fs::path data = write_trial(cli);
  json config = base_config(cli, data, "est");
  config["estimate"] = {
      {"methods",
       {"DiM", "NB-Xonly", "NB-AllCov", "FB-Xonly", "FB-IVW", "CSB-IVW"}}};
  const int rc = cli.run("estimate", cli.write_config(config, "est.json"));
  REQUIRE(rc == 0);

  const json out = json::parse(cli.read(cli.dir / "est" / "estimates.json"));
  REQUIRE(out.at("estimates").size() == 6);
  CHECK(out.at("seed") == 2024);
  CHECK(out.contains("config"));
  const json& csb = out.at("estimates").back();
  CHECK(csb.at("method") == "CSB-IVW");
  CHECK(csb.contains("gamma"));
  CHECK(csb.contains("borrowed_count"));
  CHECK(fs::exists(cli.dir / "est" / "pvalues.csv"));
  CHECK(fs::exists(cli.dir / "est" / "mse_curves.csv"));
}

TEST_CASE("estimate rejects unknown method names with exit code 2") {
  CliRunner cli;
  const fs::path data = write_trial(cli);
  json config = base_config(cli, data, "bad");
  config["estimate"] = {{"methods", {"NB-AllCov", "NotAMethod"}}};
  const int rc = cli.run("estimate", cli.write_config(config, "bad.json"));
  CHECK(rc == 2);
  CHECK(cli.read(cli.dir / "stderr.log").find("NotAMethod") !=
        std::string::npos);
}

TEST_CASE("missing dataset maps to the data exit code") {
  CliRunner cli;
  json config = base_config(cli, cli.dir / "missing.csv", "x");
  const int rc = cli.run("estimate", cli.write_config(config, "m.json"));
  CHECK(rc == 3);
}

TEST_CASE("reruns are byte-identical at any worker count") {
  CliRunner cli;
  const fs::path data = write_trial(cli);
  json config = base_config(cli, data, "det");
  config["estimate"] = {{"methods", {"NB-AllCov", "CSB-IVW"}}};
  const fs::path cfg = cli.write_config(config, "det.json");
  REQUIRE(cli.run("estimate", cfg, "--workers 1") == 0);
  const std::string first = cli.read(cli.dir / "det" / "estimates.json");
  const std::string first_pv = cli.read(cli.dir / "det" / "pvalues.csv");
  REQUIRE(cli.run("estimate", cfg, "--workers 2") == 0);
  CHECK(cli.read(cli.dir / "det" / "estimates.json") == first);
  CHECK(cli.read(cli.dir / "det" / "pvalues.csv") == first_pv);
}

TEST_CASE("frt reports bounded p-values next to the asymptotic record") {
  CliRunner cli;
  const fs::path data = write_trial(cli);
  json config = base_config(cli, data, "frt");
  config["frt"] = {{"B", 40},
                   {"statistics", {"DiM", "NB-AllCov"}},
                   {"scheme", {{"kind", "bernoulli"}, {"p", 0.5}}}};
  const int rc = cli.run("frt", cli.write_config(config, "frt.json"));
  REQUIRE(rc == 0);
  const json out = json::parse(cli.read(cli.dir / "frt" / "frt.json"));
  REQUIRE(out.at("results").size() == 2);
  for (const json& r : out.at("results")) {
    const double p = r.at("frt").at("p_two_sided");
    CHECK(p >= 1.0 / 41.0);
    CHECK(p <= 1.0);
    CHECK(r.contains("asymptotic"));
    CHECK(r.at("asymptotic").contains("p_value_asymptotic"));
  }
}

TEST_CASE("frt rejects B = 0 at config validation") {
  CliRunner cli;
  const fs::path data = write_trial(cli);
  json config = base_config(cli, data, "frt0");
  config["frt"] = {{"B", 0}};
  CHECK(cli.run("frt", cli.write_config(config, "frt0.json")) == 2);
}

TEST_CASE("simulate writes the metrics CSV and resumes from checkpoints") {
  CliRunner cli;
  json config{{"seed", 99},
              {"output_dir", (cli.dir / "sim").string()},
              {"csb", {{"L", 10}}},
              {"simulate",
               {{"n_rep", 2},
                {"oracle_mc", 100000},
                {"methods", {"DiM", "NB-AllCov"}},
                {"dgp", {{"n_target", 40}, {"n_aux", 60}}},
                {"scenarios",
                 json::array({{{"name", "eps_low"}, {"overrides", {{"eps", 0.1}}}},
                              {{"name", "eps_high"}, {"overrides", {{"eps", 1.0}}}}})}}}};
  const fs::path cfg = cli.write_config(config, "sim.json");
  REQUIRE(cli.run("simulate", cfg) == 0);
  const std::string csv = cli.read(cli.dir / "sim" / "metrics.csv");
  CHECK(csv.find("eps_low") != std::string::npos);
  CHECK(csv.find("eps_high") != std::string::npos);
  CHECK(csv.find("NB-AllCov") != std::string::npos);
  CHECK(fs::exists(cli.dir / "sim" / "checkpoints" / "scenario_0.json"));
  CHECK(fs::exists(cli.dir / "sim" / "checkpoints" / "scenario_1.json"));

  // Resume reuses the checkpoints and reproduces the CSV byte for byte.
  REQUIRE(cli.run("simulate", cfg, "--resume") == 0);
  CHECK(cli.read(cli.dir / "sim" / "metrics.csv") == csv);
}

TEST_CASE("match writes a loadable matched dataset") {
  CliRunner cli;
  const fs::path data = write_trial(cli);
  json config = base_config(cli, data, "match");
  config["match"] = {{"ratio", 2}};
  REQUIRE(cli.run("match", cli.write_config(config, "match.json")) == 0);
  CovariateSchema schema;
  schema.shared_names = {"X1", "X2"};
  schema.target_only_names = {"U"};
  const StudyDataset matched =
      load_dataset((cli.dir / "match" / "matched.csv").string(), schema);
  CHECK(matched.n_target == 60);
  CHECK(matched.n_aux <= 90);
}

TEST_CASE("pvalues dumps the per-arm table") {
  CliRunner cli;
  const fs::path data = write_trial(cli);
  json config = base_config(cli, data, "pv");
  REQUIRE(cli.run("pvalues", cli.write_config(config, "pv.json")) == 0);
  const std::string csv = cli.read(cli.dir / "pv" / "pvalues.csv");
  CHECK(csv.find("record_index,arm,p_value") != std::string::npos);
  std::istringstream in(csv);
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#' && line.find("record_index") != 0) ++rows;
  }
  CHECK(rows == 90);  // one row per auxiliary record
}

TEST_SUITE_END();
