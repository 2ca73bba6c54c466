#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "fedsim/config.h"
#include "fedsim/errors.h"

using namespace fedsim;

TEST_CASE("parse sections, comments and whitespace") {
  const char* text =
      "# top comment\n"
      "[run]\n"
      "name = my experiment  \n"
      "seed=42\n"
      "\n"
      "[model]  # trailing comment\n"
      "d_model = 64\n";
  KvConfig cfg = KvConfig::parse_string(text);
  CHECK(cfg.get("run", "name") == "my experiment");
  CHECK(cfg.get_u64("run", "seed", 0) == 42);
  CHECK(cfg.get_size("model", "d_model", 0) == 64);
  CHECK(cfg.has("run", "seed"));
  CHECK(!cfg.has("run", "nope"));
  CHECK(cfg.get_or("run", "nope", "fallback") == "fallback");
  CHECK_THROWS_AS(cfg.get("run", "nope"), LookupError);
}

TEST_CASE("malformed lines fail loudly") {
  CHECK_THROWS_AS(KvConfig::parse_string("[run\nx=1\n"), ParseError);
  CHECK_THROWS_AS(KvConfig::parse_string("key_without_section = 1\n"),
                  ParseError);
  CHECK_THROWS_AS(KvConfig::parse_string("[run]\nno_equals_here\n"), ParseError);
}

TEST_CASE("typed getters reject junk") {
  KvConfig cfg = KvConfig::parse_string(
      "[a]\nf = 1.5x\nn = -3\nb = maybe\ng = 2.5\nk = 7\nyes = true\n");
  CHECK_THROWS_AS(cfg.get_double("a", "f", 0.0), ParseError);
  CHECK_THROWS_AS(cfg.get_size("a", "n", 0), ParseError);
  CHECK_THROWS_AS(cfg.get_bool("a", "b", false), ParseError);
  CHECK(cfg.get_double("a", "g", 0.0) == 2.5);
  CHECK(cfg.get_size("a", "k", 0) == 7);
  CHECK(cfg.get_bool("a", "yes", false));
  CHECK(cfg.get_double("a", "missing", -1.5) == -1.5);
}

TEST_CASE("set and apply_override") {
  KvConfig cfg;
  cfg.set("run", "seed", "1");
  cfg.apply_override("run.seed=2");
  CHECK(cfg.get("run", "seed") == "2");
  cfg.apply_override("model.d_model=128");
  CHECK(cfg.get("model", "d_model") == "128");
  CHECK_THROWS_AS(cfg.apply_override("no_dot=1"), ParseError);
  CHECK_THROWS_AS(cfg.apply_override("a.b"), ParseError);
}

TEST_CASE("serialize round-trips to a fixpoint") {
  KvConfig cfg;
  cfg.set("run", "name", "x");
  cfg.set("model", "d_model", "64");
  cfg.set("run", "seed", "42");  // same section, later: still grouped
  const std::string s1 = cfg.serialize();
  KvConfig re = KvConfig::parse_string(s1);
  CHECK(re.serialize() == s1);
  CHECK(re.get("run", "seed") == "42");
}

TEST_CASE("format_double survives exact re-reading") {
  for (double v : {0.1, 1.0 / 3.0, 3.141592653589793, 1e-300, 6e-4,
                   -2.5e17, 0.0}) {
    const std::string s = KvConfig::format_double(v);
    KvConfig cfg;
    cfg.set("a", "v", s);
    CHECK(cfg.get_double("a", "v", 0.0) == v);
  }
}

TEST_CASE("file loading errors") {
  CHECK_THROWS_AS(KvConfig::parse_file("/nonexistent/fedsim.cfg"), IoError);
  const auto p = std::filesystem::temp_directory_path() / "fedsim_cfg_ok.cfg";
  {
    std::ofstream f(p);
    f << "[run]\nseed = 9\n";
  }
  CHECK(KvConfig::parse_file(p).get_u64("run", "seed", 0) == 9);
  std::filesystem::remove(p);
}
